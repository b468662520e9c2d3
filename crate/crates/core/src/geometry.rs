//! Parametric gear geometry.
//!
//! A [`GearDesign`] carries the radial build-up of a three-rotor radial flux
//! magnetic gear in millimetres, from the Rotor 1 back iron out to the Rotor 3
//! back iron. [`derive_geometry`] turns it into the ten radial regions used by
//! the mesher, and [`couple_sweep_parameters`] produces designs from the coupled
//! coefficients of a parametric study.

use std::f64::consts::PI;
use std::fmt;

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default inner bore radius as a fraction of the Rotor 1 back-iron inner radius.
pub const DEFAULT_BORE_FRACTION: f64 = 0.25;
/// Default outer extent of the surrounding air as a multiple of the active outer radius.
pub const DEFAULT_OUTER_AIR_FACTOR: f64 = 1.2;
/// Default axial stack length in mm (torques are then per metre of stack).
pub const DEFAULT_STACK_LENGTH_MM: f64 = 1000.0;

/// The ten radial regions, ordered from the bore outwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InnerAir,
    BackIron1,
    Magnets1,
    InnerGap,
    Bridge,
    Modulators,
    OuterGap,
    Magnets3,
    BackIron3,
    OuterAir,
}

impl Region {
    pub const ALL: [Region; 10] = [
        Region::InnerAir,
        Region::BackIron1,
        Region::Magnets1,
        Region::InnerGap,
        Region::Bridge,
        Region::Modulators,
        Region::OuterGap,
        Region::Magnets3,
        Region::BackIron3,
        Region::OuterAir,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::InnerAir => "inner_air",
            Region::BackIron1 => "back_iron1",
            Region::Magnets1 => "magnets1",
            Region::InnerGap => "inner_gap",
            Region::Bridge => "bridge",
            Region::Modulators => "modulators",
            Region::OuterGap => "outer_gap",
            Region::Magnets3 => "magnets3",
            Region::BackIron3 => "back_iron3",
            Region::OuterAir => "outer_air",
        }
    }

    pub fn is_gap(self) -> bool {
        matches!(self, Region::InnerGap | Region::OuterGap)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which of the two working air gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gap {
    Inner,
    Outer,
}

impl Gap {
    pub fn region(self) -> Region {
        match self {
            Gap::Inner => Region::InnerGap,
            Gap::Outer => Region::OuterGap,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Gap::Inner => "inner",
            Gap::Outer => "outer",
        }
    }
}

/// Full parametric geometry of one gear. Lengths in mm, angles in mechanical radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GearDesign {
    /// Rotor 1 (inner) pole pairs.
    pub p1: u32,
    /// Rotor 3 (outer) pole pairs.
    pub p3: u32,
    pub r_o: f64,
    pub t_bi1: f64,
    pub t_pm1: f64,
    pub t_ag1: f64,
    pub t_mods: f64,
    pub t_brg: f64,
    pub t_ag2: f64,
    pub t_pm3: f64,
    pub t_bi3: f64,
    pub stack_length: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    /// Angular fraction of each modulator pitch occupied by steel.
    pub modulator_fill: f64,
    pub steel_id: String,
    pub pm_id: String,
    /// Optional overrides of the magnet grade's remanence [T] and recoil permeability.
    pub b_r: Option<f64>,
    pub mu_r: Option<f64>,
    /// Bore radius as a fraction of the Rotor 1 back-iron inner radius.
    pub bore_fraction: f64,
    /// Outer air extent as a multiple of `r_o`.
    pub outer_air_factor: f64,
}

impl GearDesign {
    /// A design with the given pole pairs and radial build-up, default materials,
    /// zero rotor angles and default air extents.
    #[allow(clippy::too_many_arguments)]
    pub fn new(p1: u32, p3: u32, r_o: f64, thicknesses: [f64; 8]) -> Self {
        let [t_bi1, t_pm1, t_ag1, t_mods, t_brg, t_ag2, t_pm3, t_bi3] = thicknesses;
        GearDesign {
            p1,
            p3,
            r_o,
            t_bi1,
            t_pm1,
            t_ag1,
            t_mods,
            t_brg,
            t_ag2,
            t_pm3,
            t_bi3,
            stack_length: DEFAULT_STACK_LENGTH_MM,
            theta1: 0.0,
            theta2: 0.0,
            theta3: 0.0,
            modulator_fill: 0.5,
            steel_id: "m250".into(),
            pm_id: "n42".into(),
            b_r: None,
            mu_r: None,
            bore_fraction: DEFAULT_BORE_FRACTION,
            outer_air_factor: DEFAULT_OUTER_AIR_FACTOR,
        }
    }

    /// Base Design 1 (P1 = 11, P3 = 45, r_o = 150 mm).
    pub fn base_design_1() -> Self {
        GearDesign::new(11, 45, 150.0, [20.0, 9.0, 0.5, 11.0, 0.5, 0.5, 7.0, 20.0])
    }

    /// Base Design 2 (P1 = 4, P3 = 34, r_o = 175 mm).
    pub fn base_design_2() -> Self {
        GearDesign::new(4, 34, 175.0, [35.0, 5.0, 2.0, 17.0, 1.0, 2.0, 5.0, 30.0])
    }

    /// Base Design 3 (P1 = 6, P3 = 98, r_o = 200 mm).
    pub fn base_design_3() -> Self {
        GearDesign::new(6, 98, 200.0, [40.0, 13.0, 1.0, 14.0, 1.5, 1.0, 7.0, 25.0])
    }

    pub fn base_designs() -> [GearDesign; 3] {
        [
            Self::base_design_1(),
            Self::base_design_2(),
            Self::base_design_3(),
        ]
    }

    /// The eight radial thicknesses from Rotor 1 back iron outwards.
    pub fn thicknesses(&self) -> [f64; 8] {
        [
            self.t_bi1,
            self.t_pm1,
            self.t_ag1,
            self.t_mods,
            self.t_brg,
            self.t_ag2,
            self.t_pm3,
            self.t_bi3,
        ]
    }

    /// Modulator count.
    pub fn q2(&self) -> u32 {
        self.p1 + self.p3
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        if self.p1 < 1 {
            return bad(format!("p1 must be at least 1, got {}", self.p1));
        }
        if self.p3 <= self.p1 {
            return bad(format!("p3 ({}) must exceed p1 ({})", self.p3, self.p1));
        }
        if !(self.r_o.is_finite() && self.r_o > 0.0) {
            return bad(format!("r_o must be positive, got {}", self.r_o));
        }
        let names = [
            "t_bi1", "t_pm1", "t_ag1", "t_mods", "t_brg", "t_ag2", "t_pm3", "t_bi3",
        ];
        for (name, t) in names.iter().zip(self.thicknesses()) {
            if !(t.is_finite() && t >= 0.0) {
                return bad(format!("{name} must be a non-negative length, got {t}"));
            }
        }
        let sum: f64 = self.thicknesses().iter().sum();
        if sum >= self.r_o {
            return bad(format!(
                "radial thicknesses sum to {sum} mm, leaving no bore inside r_o = {} mm",
                self.r_o
            ));
        }
        if !(self.stack_length.is_finite() && self.stack_length > 0.0) {
            return bad(format!(
                "stack_length must be positive, got {}",
                self.stack_length
            ));
        }
        if !(self.modulator_fill > 0.0 && self.modulator_fill < 1.0) {
            return bad(format!(
                "modulator_fill must lie in (0, 1), got {}",
                self.modulator_fill
            ));
        }
        if !(self.bore_fraction > 0.0 && self.bore_fraction < 1.0) {
            return bad(format!(
                "bore_fraction must lie in (0, 1), got {}",
                self.bore_fraction
            ));
        }
        if !(self.outer_air_factor > 1.0 && self.outer_air_factor.is_finite()) {
            return bad(format!(
                "outer_air_factor must exceed 1, got {}",
                self.outer_air_factor
            ));
        }
        for (name, a) in [
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("theta3", self.theta3),
        ] {
            if !a.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        Ok(())
    }

    /// Active volume π r_o² L in m³.
    pub fn active_volume(&self) -> f64 {
        let r = self.r_o * 1e-3;
        PI * r * r * self.stack_length * 1e-3
    }

    /// Total magnet volume of both PM rotors in m³.
    pub fn magnet_volume(&self) -> f64 {
        let radii = region_radii(self);
        let ring = |inner: f64, outer: f64| PI * (outer * outer - inner * inner) * 1e-6;
        let pm1 = ring(
            radii[Region::Magnets1.index()],
            radii[Region::Magnets1.index() + 1],
        );
        let pm3 = ring(
            radii[Region::Magnets3.index()],
            radii[Region::Magnets3.index() + 1],
        );
        (pm1 + pm3) * self.stack_length * 1e-3
    }
}

/// Reduced fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Self {
        let g = num.gcd(&den).max(1);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Quantities derived from a [`GearDesign`].
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedGeometry {
    pub q2: u32,
    /// Boundaries of the ten radial regions in mm, bore first.
    pub region_radii: [f64; 11],
    /// Number of identical angular sectors, gcd(p1, p3, q2).
    pub symmetry: u32,
    /// Speed ratio between Rotor 1 and the modulators with Rotor 3 held, (p1 + p3) / p1.
    pub gear_ratio: Ratio,
}

impl DerivedGeometry {
    pub fn region_thickness(&self, region: Region) -> f64 {
        let i = region.index();
        self.region_radii[i + 1] - self.region_radii[i]
    }

    /// Inner and outer radius of a region in mm.
    pub fn region_span(&self, region: Region) -> (f64, f64) {
        let i = region.index();
        (self.region_radii[i], self.region_radii[i + 1])
    }

    pub fn is_active(&self, region: Region) -> bool {
        self.region_thickness(region) > 0.0
    }

    pub fn active_regions(&self) -> impl Iterator<Item = Region> + '_ {
        Region::ALL.into_iter().filter(|&r| self.is_active(r))
    }
}

fn region_radii(design: &GearDesign) -> [f64; 11] {
    let sum: f64 = design.thicknesses().iter().sum();
    let r_bi1_in = design.r_o - sum;
    let mut radii = [0.0; 11];
    radii[0] = design.bore_fraction * r_bi1_in;
    radii[1] = r_bi1_in;
    let d = design;
    // Region order puts the bridge on the inner side of the modulators.
    let by_region = [
        d.t_bi1, d.t_pm1, d.t_ag1, d.t_brg, d.t_mods, d.t_ag2, d.t_pm3, d.t_bi3,
    ];
    let mut r = r_bi1_in;
    for (i, t) in by_region.into_iter().enumerate() {
        r += t;
        radii[i + 2] = r;
    }
    // Accumulated rounding must not move the active outer radius.
    radii[9] = design.r_o;
    radii[10] = design.outer_air_factor * design.r_o;
    radii
}

/// Region radii, modulator count, symmetry and gear ratio of a design.
pub fn derive_geometry(design: &GearDesign) -> Result<DerivedGeometry> {
    design.validate()?;
    let q2 = design.q2();
    let symmetry = design.p1.gcd(&design.p3).gcd(&q2);
    Ok(DerivedGeometry {
        q2,
        region_radii: region_radii(design),
        symmetry,
        gear_ratio: Ratio::new(q2, design.p1),
    })
}

/// Rotor 3 pole pairs for an integer gear-ratio target, avoiding integer ratios.
pub fn p3_for_gear_ratio(g_r: u32, p1: u32) -> u32 {
    if (g_r * p1) % 2 == 1 {
        (g_r - 1) * p1 + 1
    } else {
        (g_r - 1) * p1 + 2
    }
}

/// Dimensions held fixed while the coupled parameters vary (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedDimensions {
    pub r_o: f64,
    pub t_ag: f64,
    pub t_mods: f64,
    pub t_brg: f64,
    pub t_bi3: f64,
}

/// Builds a design from the coupled sweep coefficients.
///
/// Rotor 3 magnet thickness is `k_pm · t_pm1`, Rotor 1 back iron is
/// `k_bi1 · π r_bi1 / p1` where `r_bi1` (the back-iron outer radius) follows
/// from the outer dimensions alone, and `p3` comes from [`p3_for_gear_ratio`].
pub fn couple_sweep_parameters(
    g_r: u32,
    p1: u32,
    k_bi1: f64,
    t_pm1: f64,
    k_pm: f64,
    fixed: &FixedDimensions,
) -> Result<GearDesign> {
    if g_r < 2 {
        return Err(Error::InvalidDesign(format!(
            "gear ratio integer part must be at least 2, got {g_r}"
        )));
    }
    if p1 < 1 {
        return Err(Error::InvalidDesign("p1 must be at least 1".into()));
    }
    let p3 = p3_for_gear_ratio(g_r, p1);
    let t_pm3 = k_pm * t_pm1;
    let r_bi1 = fixed.r_o
        - fixed.t_bi3
        - t_pm3
        - fixed.t_ag
        - fixed.t_mods
        - fixed.t_brg
        - fixed.t_ag
        - t_pm1;
    if r_bi1 <= 0.0 {
        return Err(Error::InvalidDesign(format!(
            "Rotor 1 back-iron outer radius is {r_bi1} mm"
        )));
    }
    let t_bi1 = k_bi1 * PI * r_bi1 / p1 as f64;
    if t_bi1 >= r_bi1 {
        return Err(Error::InvalidDesign(format!(
            "Rotor 1 back iron ({t_bi1:.3} mm) leaves a negative bore inside r = {r_bi1:.3} mm"
        )));
    }
    let design = GearDesign::new(
        p1,
        p3,
        fixed.r_o,
        [
            t_bi1,
            t_pm1,
            fixed.t_ag,
            fixed.t_mods,
            fixed.t_brg,
            fixed.t_ag,
            t_pm3,
            fixed.t_bi3,
        ],
    );
    design.validate()?;
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_design_1_radii() {
        let d = GearDesign::base_design_1();
        let g = derive_geometry(&d).unwrap();
        assert_eq!(g.q2, 56);
        assert_eq!(g.region_span(Region::Modulators).1, 122.5);
        assert_eq!(g.region_radii[1], 150.0 - 68.5);
        assert_eq!(g.region_radii[0], 0.25 * 81.5);
        assert_eq!(g.region_radii[10], 180.0);
        assert_eq!(g.symmetry, 1);
        assert_eq!(g.gear_ratio, Ratio { num: 56, den: 11 });
    }

    #[test]
    fn base_design_2_symmetry() {
        let g = derive_geometry(&GearDesign::base_design_2()).unwrap();
        assert_eq!(g.q2, 38);
        assert_eq!(g.symmetry, 2);
        assert_eq!(g.gear_ratio, Ratio { num: 19, den: 2 });
    }

    #[test]
    fn zero_bridge_collapses() {
        let d = GearDesign::new(4, 9, 100.0, [5.0, 5.0, 5.0, 5.0, 0.0, 5.0, 5.0, 5.0]);
        let g = derive_geometry(&d).unwrap();
        assert!(!g.is_active(Region::Bridge));
        assert_eq!(g.active_regions().count(), 9);
    }

    #[test]
    fn rejects_bad_designs() {
        let mut d = GearDesign::base_design_1();
        d.p3 = 11;
        assert!(matches!(derive_geometry(&d), Err(Error::InvalidDesign(_))));
        let d = GearDesign::new(2, 5, 50.0, [10.0; 8]);
        assert!(matches!(derive_geometry(&d), Err(Error::InvalidDesign(_))));
        let mut d = GearDesign::base_design_1();
        d.t_brg = -0.1;
        assert!(derive_geometry(&d).is_err());
    }

    #[test]
    fn gear_ratio_pole_rule() {
        assert_eq!(p3_for_gear_ratio(9, 3), 25);
        assert_eq!(p3_for_gear_ratio(5, 4), 18);
        assert_eq!(p3_for_gear_ratio(17, 3), 49);
    }

    #[test]
    fn coupling() {
        let fixed = FixedDimensions {
            r_o: 150.0,
            t_ag: 1.5,
            t_mods: 11.0,
            t_brg: 0.5,
            t_bi3: 20.0,
        };
        let d = couple_sweep_parameters(9, 3, 0.5, 5.0, 1.0, &fixed).unwrap();
        assert_eq!(d.p3, 25);
        assert_eq!(d.t_pm3, 5.0);
        let r_bi1 = 150.0 - 20.0 - 5.0 - 1.5 - 11.0 - 0.5 - 1.5 - 5.0;
        assert!((d.t_bi1 - 0.5 * PI * r_bi1 / 3.0).abs() < 1e-12);
        let g = derive_geometry(&d).unwrap();
        assert!((g.region_radii[2] - r_bi1).abs() < 1e-12);
    }

    #[test]
    fn coupling_rejects_negative_bore() {
        let fixed = FixedDimensions {
            r_o: 40.0,
            t_ag: 1.5,
            t_mods: 11.0,
            t_brg: 0.5,
            t_bi3: 20.0,
        };
        assert!(couple_sweep_parameters(5, 4, 0.5, 5.0, 1.0, &fixed).is_err());
        let fixed = FixedDimensions { r_o: 60.0, ..fixed };
        // back iron thicker than its own outer radius
        assert!(couple_sweep_parameters(5, 1, 0.9, 3.0, 1.0, &fixed).is_err());
    }
}
