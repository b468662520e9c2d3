//! Polar node-cell grid.
//!
//! The cross-section is cut into radial layers (uniform inside each of the ten
//! regions) and equal angular layers. Every radial/angular overlap is a node
//! cell with four half flux tubes meeting at its centre. Magnet polarities and
//! modulator steel are assigned per cell from the cell-centre angle, so moving
//! a rotor only re-tags cells on a fixed grid.

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DerivedGeometry, GearDesign, Region};
use crate::materials::PermanentMagnet;

/// Thickness that one unit of a radial multiplier corresponds to, in mm.
pub const REFERENCE_THICKNESS_MM: f64 = 10.0;

/// How many radial layers a region receives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRule {
    Fixed(u32),
    Scaled { multiplier: f64, min_layers: u32 },
}

impl LayerRule {
    fn scaled(multiplier: f64, min_layers: u32) -> Self {
        LayerRule::Scaled {
            multiplier,
            min_layers,
        }
    }

    pub fn layers(self, thickness_mm: f64, reference_mm: f64) -> u32 {
        match self {
            LayerRule::Fixed(n) => n,
            LayerRule::Scaled {
                multiplier,
                min_layers,
            } => {
                let raw = (multiplier * thickness_mm / reference_mm).round();
                (raw.max(0.0) as u32).max(min_layers)
            }
        }
    }
}

/// Discretisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Angular layers per modulator pitch.
    pub angular_multiplier: u32,
    #[serde(default = "default_reference")]
    pub reference_thickness_mm: f64,
    pub inner_air: LayerRule,
    pub back_iron1: LayerRule,
    pub magnets1: LayerRule,
    pub inner_gap: LayerRule,
    pub bridge: LayerRule,
    pub modulators: LayerRule,
    pub outer_gap: LayerRule,
    pub magnets3: LayerRule,
    pub back_iron3: LayerRule,
    pub outer_air: LayerRule,
}

fn default_reference() -> f64 {
    REFERENCE_THICKNESS_MM
}

impl MeshConfig {
    /// Coarse settings of the optimisation study.
    pub fn coarse() -> Self {
        MeshConfig {
            angular_multiplier: 10,
            reference_thickness_mm: REFERENCE_THICKNESS_MM,
            inner_air: LayerRule::Fixed(2),
            back_iron1: LayerRule::Fixed(3),
            magnets1: LayerRule::scaled(10.0, 3),
            inner_gap: LayerRule::scaled(10.0, 3),
            bridge: LayerRule::Fixed(2),
            modulators: LayerRule::scaled(10.0, 3),
            outer_gap: LayerRule::scaled(10.0, 3),
            magnets3: LayerRule::scaled(10.0, 3),
            back_iron3: LayerRule::Fixed(3),
            outer_air: LayerRule::Fixed(2),
        }
    }

    /// Fine settings of the optimisation study.
    pub fn fine() -> Self {
        MeshConfig {
            angular_multiplier: 30,
            magnets1: LayerRule::scaled(20.0, 3),
            inner_gap: LayerRule::scaled(20.0, 3),
            modulators: LayerRule::scaled(20.0, 5),
            outer_gap: LayerRule::scaled(20.0, 3),
            magnets3: LayerRule::scaled(20.0, 5),
            ..Self::coarse()
        }
    }

    pub fn rule(&self, region: Region) -> LayerRule {
        match region {
            Region::InnerAir => self.inner_air,
            Region::BackIron1 => self.back_iron1,
            Region::Magnets1 => self.magnets1,
            Region::InnerGap => self.inner_gap,
            Region::Bridge => self.bridge,
            Region::Modulators => self.modulators,
            Region::OuterGap => self.outer_gap,
            Region::Magnets3 => self.magnets3,
            Region::BackIron3 => self.back_iron3,
            Region::OuterAir => self.outer_air,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.angular_multiplier < 1 {
            return Err(Error::InvalidMesh(
                "angular_multiplier must be at least 1".into(),
            ));
        }
        if !(self.reference_thickness_mm > 0.0 && self.reference_thickness_mm.is_finite()) {
            return Err(Error::InvalidMesh(
                "reference_thickness_mm must be positive".into(),
            ));
        }
        for region in Region::ALL {
            match self.rule(region) {
                LayerRule::Fixed(0) => {
                    return Err(Error::InvalidMesh(format!(
                        "{region}: fixed layer count is 0"
                    )))
                }
                LayerRule::Scaled { multiplier, .. }
                    if !(multiplier >= 0.0 && multiplier.is_finite()) =>
                {
                    return Err(Error::InvalidMesh(format!(
                        "{region}: multiplier must be non-negative"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Radial layers per region for a derived geometry; collapsed regions get 0.
    pub fn region_layers(&self, derived: &DerivedGeometry) -> [u32; 10] {
        let mut out = [0; 10];
        for region in derived.active_regions() {
            out[region.index()] = self.rule(region).layers(
                derived.region_thickness(region),
                self.reference_thickness_mm,
            );
        }
        out
    }
}

/// A named or file-backed mesh configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum MeshPreset {
    Coarse,
    Fine,
    Custom(MeshConfig),
}

impl MeshPreset {
    /// Parses `coarse`, `fine` or `custom:<json file>`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "coarse" => Ok(MeshPreset::Coarse),
            "fine" => Ok(MeshPreset::Fine),
            other => match other.strip_prefix("custom:") {
                Some(path) => Ok(MeshPreset::Custom(crate::io::read_mesh_config(path)?)),
                None => Err(Error::InvalidMesh(format!(
                    "unknown mesh preset `{other}` (expected coarse, fine or custom:<file>)"
                ))),
            },
        }
    }

    pub fn config(&self) -> MeshConfig {
        match self {
            MeshPreset::Coarse => MeshConfig::coarse(),
            MeshPreset::Fine => MeshConfig::fine(),
            MeshPreset::Custom(c) => c.clone(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeshPreset::Coarse => "coarse",
            MeshPreset::Fine => "fine",
            MeshPreset::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellMaterial {
    Air,
    Steel,
    Magnet,
}

impl CellMaterial {
    pub fn name(self) -> &'static str {
        match self {
            CellMaterial::Air => "air",
            CellMaterial::Steel => "steel",
            CellMaterial::Magnet => "pm",
        }
    }
}

/// Material tag and magnet polarity of one node cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeCell {
    pub material: CellMaterial,
    /// +1 outward, -1 inward, 0 for non-magnet cells.
    pub polarity: i8,
}

impl NodeCell {
    const AIR: NodeCell = NodeCell {
        material: CellMaterial::Air,
        polarity: 0,
    };
    const STEEL: NodeCell = NodeCell {
        material: CellMaterial::Steel,
        polarity: 0,
    };
}

/// Geometry and tags of one cell, for inspection and export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellView {
    pub ring: usize,
    pub index: usize,
    pub r_in: f64,
    pub r_out: f64,
    pub theta_c: f64,
    pub region: Region,
    pub material: CellMaterial,
    /// Signed MMF over the cell's full radial extent [A].
    pub mmf: f64,
}

/// Pole counts and modulator fill that drive source assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorLayout {
    pub p1: u32,
    pub p3: u32,
    pub q2: u32,
    pub modulator_fill: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

/// Cell counts of a mesh over the full revolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MeshCounts {
    pub radial_layers: usize,
    pub angular_layers: usize,
    pub cells: usize,
    pub tubes: usize,
    pub loops: usize,
}

/// Structured polar grid of node cells.
///
/// Cells are stored ring-major: cell `(k, j)` lives at `k * n_al + j`. A mesh
/// may hold only one of `sectors` identical angular sectors; the stored
/// columns then wrap onto themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarMesh {
    radii: Vec<f64>,
    ring_region: Vec<Region>,
    n_al: usize,
    sectors: usize,
    dtheta: f64,
    stack: f64,
    cells: Vec<NodeCell>,
    pm: PermanentMagnet,
    rotors: RotorLayout,
}

impl PolarMesh {
    /// Builds a mesh from explicit radii (m) and region tags, with uniform
    /// angular layers. Cells start as air/steel by region; call
    /// [`assign_sources`] to place magnets and modulators.
    pub fn from_rings(
        radii: Vec<f64>,
        ring_region: Vec<Region>,
        n_al: usize,
        stack: f64,
        pm: PermanentMagnet,
        rotors: RotorLayout,
    ) -> Result<Self> {
        if radii.len() != ring_region.len() + 1 {
            return Err(Error::InvalidMesh("radii must bound every ring".into()));
        }
        if ring_region.len() < 2 {
            return Err(Error::InvalidMesh(
                "at least two radial layers are required".into(),
            ));
        }
        if n_al < 3 {
            return Err(Error::InvalidMesh(format!(
                "at least three angular layers are required, got {n_al}"
            )));
        }
        if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidMesh(
                "ring radii must be positive and increasing".into(),
            ));
        }
        if !(stack > 0.0) {
            return Err(Error::InvalidMesh("stack length must be positive".into()));
        }
        let cells = ring_region
            .iter()
            .flat_map(|&region| {
                let cell = match region {
                    Region::BackIron1 | Region::BackIron3 | Region::Bridge => NodeCell::STEEL,
                    _ => NodeCell::AIR,
                };
                std::iter::repeat_n(cell, n_al)
            })
            .collect();
        let mut mesh = PolarMesh {
            radii,
            ring_region,
            n_al,
            sectors: 1,
            dtheta: TAU / n_al as f64,
            stack,
            cells,
            pm,
            rotors,
        };
        mesh.reassign();
        Ok(mesh)
    }

    /// Radial layers.
    pub fn n_rl(&self) -> usize {
        self.ring_region.len()
    }

    /// Angular layers held by this mesh (one sector when reduced).
    pub fn n_al(&self) -> usize {
        self.n_al
    }

    /// Number of identical sectors the stored columns represent.
    pub fn sectors(&self) -> usize {
        self.sectors
    }

    /// Angular layers over the full revolution.
    pub fn n_al_full(&self) -> usize {
        self.n_al * self.sectors
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    /// Stack length [m].
    pub fn stack(&self) -> f64 {
        self.stack
    }

    /// Ring boundary radii [m].
    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn ring_region(&self, ring: usize) -> Region {
        self.ring_region[ring]
    }

    pub fn ring_regions(&self) -> &[Region] {
        &self.ring_region
    }

    pub fn magnet(&self) -> &PermanentMagnet {
        &self.pm
    }

    pub fn rotors(&self) -> &RotorLayout {
        &self.rotors
    }

    /// Mesh loops held, `n_al * (n_rl - 1)`.
    pub fn loop_count(&self) -> usize {
        self.n_al * (self.n_rl() - 1)
    }

    pub fn counts(&self) -> MeshCounts {
        let cells = self.n_rl() * self.n_al_full();
        MeshCounts {
            radial_layers: self.n_rl(),
            angular_layers: self.n_al_full(),
            cells,
            tubes: 4 * cells,
            loops: self.n_al_full() * (self.n_rl() - 1),
        }
    }

    #[inline]
    pub fn cell(&self, ring: usize, index: usize) -> NodeCell {
        self.cells[ring * self.n_al + index]
    }

    pub fn cells(&self) -> &[NodeCell] {
        &self.cells
    }

    pub fn theta_center(&self, index: usize) -> f64 {
        (index as f64 + 0.5) * self.dtheta
    }

    /// Geometric-mean centre radius of a ring.
    pub fn ring_center(&self, ring: usize) -> f64 {
        (self.radii[ring] * self.radii[ring + 1]).sqrt()
    }

    /// Signed MMF across the full radial extent of a cell [A].
    pub fn cell_mmf(&self, ring: usize, index: usize) -> f64 {
        let c = self.cell(ring, index);
        if c.material != CellMaterial::Magnet {
            return 0.0;
        }
        self.pm
            .mmf(self.radii[ring + 1] - self.radii[ring], c.polarity as f64)
    }

    pub fn view(&self, ring: usize, index: usize) -> CellView {
        let c = self.cell(ring, index);
        CellView {
            ring,
            index,
            r_in: self.radii[ring],
            r_out: self.radii[ring + 1],
            theta_c: self.theta_center(index),
            region: self.ring_region[ring],
            material: c.material,
            mmf: self.cell_mmf(ring, index),
        }
    }

    /// Rings belonging to a region, as a half-open range.
    pub fn region_rings(&self, region: Region) -> std::ops::Range<usize> {
        let start = self.ring_region.iter().position(|&r| r == region);
        match start {
            Some(s) => {
                let len = self.ring_region[s..]
                    .iter()
                    .take_while(|&&r| r == region)
                    .count();
                s..s + len
            }
            None => 0..0,
        }
    }

    /// Sum of cell areas over the full revolution [m²].
    pub fn total_area(&self) -> f64 {
        let per_column: f64 = (0..self.n_rl())
            .map(|k| 0.5 * (self.radii[k + 1].powi(2) - self.radii[k].powi(2)) * self.dtheta)
            .sum();
        per_column * self.n_al_full() as f64
    }

    pub fn set_rotor_angles(&mut self, theta1: f64, theta2: f64, theta3: f64) {
        self.rotors.theta1 = theta1;
        self.rotors.theta2 = theta2;
        self.rotors.theta3 = theta3;
        self.reassign();
    }

    pub fn set_magnet(&mut self, pm: PermanentMagnet) {
        self.pm = pm;
    }

    /// Flips every magnet.
    pub fn reverse_polarities(&mut self) {
        for c in &mut self.cells {
            c.polarity = -c.polarity;
        }
    }

    fn reassign(&mut self) {
        let rot = self.rotors;
        for k in 0..self.n_rl() {
            let region = self.ring_region[k];
            for j in 0..self.n_al {
                let theta = self.theta_center(j);
                let cell = match region {
                    Region::Magnets1 => magnet_cell(rot.p1, theta - rot.theta1),
                    Region::Magnets3 => magnet_cell(rot.p3, theta - rot.theta3),
                    Region::Modulators => {
                        if is_modulator_steel(rot.q2, rot.modulator_fill, theta - rot.theta2) {
                            NodeCell::STEEL
                        } else {
                            NodeCell::AIR
                        }
                    }
                    Region::BackIron1 | Region::BackIron3 | Region::Bridge => NodeCell::STEEL,
                    _ => NodeCell::AIR,
                };
                self.cells[k * self.n_al + j] = cell;
            }
        }
    }

    /// Keeps one of `symmetry` sectors after checking that every sector carries
    /// identical tags and sources.
    pub fn sector(&self, symmetry: usize) -> Result<PolarMesh> {
        if symmetry == 0 || !self.n_al.is_multiple_of(symmetry) {
            return Err(Error::NotPeriodic {
                symmetry,
                detail: format!("{} angular layers are not divisible", self.n_al),
            });
        }
        let period = self.n_al / symmetry;
        if period < 3 {
            return Err(Error::NotPeriodic {
                symmetry,
                detail: format!("a sector of {period} angular layers is too small"),
            });
        }
        for k in 0..self.n_rl() {
            for j in period..self.n_al {
                if self.cell(k, j) != self.cell(k, j % period) {
                    return Err(Error::NotPeriodic {
                        symmetry,
                        detail: format!(
                            "cell ({k}, {j}) in {} differs from ({k}, {})",
                            self.ring_region[k],
                            j % period
                        ),
                    });
                }
            }
        }
        let cells = (0..self.n_rl())
            .flat_map(|k| (0..period).map(move |j| (k, j)))
            .map(|(k, j)| self.cell(k, j))
            .collect();
        Ok(PolarMesh {
            n_al: period,
            sectors: self.sectors * symmetry,
            cells,
            ..self.clone()
        })
    }

    /// Repeats a per-loop vector of a sector mesh over the full revolution.
    pub fn tile_loops(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.loop_count());
        let full = self.n_al_full();
        let mut out = Vec::with_capacity(full * (self.n_rl() - 1));
        for ring in values.chunks(self.n_al) {
            for _ in 0..self.sectors {
                out.extend_from_slice(ring);
            }
        }
        out
    }

    /// Writes one CSV row per stored cell.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "ring,index,r_center_m,theta_deg,region,material,mmf_A").map_err(io)?;
        for k in 0..self.n_rl() {
            for j in 0..self.n_al {
                let v = self.view(k, j);
                writeln!(
                    w,
                    "{},{},{:.9},{:.9},{},{},{:.9}",
                    k,
                    j,
                    self.ring_center(k),
                    v.theta_c.to_degrees(),
                    v.region,
                    v.material.name(),
                    v.mmf
                )
                .map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(TAU)
}

/// Cell centres often land exactly on pole or modulator edges; this nudge
/// makes every such tie fall on the same side regardless of rounding.
const EDGE_TIE: f64 = 1e-9;

fn magnet_cell(pole_pairs: u32, theta: f64) -> NodeCell {
    let pole = (pole_pairs as f64 * wrap_angle(theta) / PI + EDGE_TIE).floor() as i64;
    NodeCell {
        material: CellMaterial::Magnet,
        polarity: if pole % 2 == 0 { 1 } else { -1 },
    }
}

/// Steel occupies `[-fill/2, fill/2)` of each modulator pitch around the
/// modulator reference angle.
fn is_modulator_steel(q2: u32, fill: f64, theta: f64) -> bool {
    let pitch = q2 as f64 * wrap_angle(theta) / TAU;
    (pitch + 0.5 * fill + EDGE_TIE).rem_euclid(1.0) < fill
}

/// Builds the node-cell grid of a design.
pub fn build_mesh(
    design: &GearDesign,
    derived: &DerivedGeometry,
    config: &MeshConfig,
) -> Result<PolarMesh> {
    config.validate()?;
    let symmetry = derived.symmetry.max(1) as usize;
    let raw = config.angular_multiplier as usize * derived.q2 as usize;
    let n_al = raw.div_ceil(symmetry) * symmetry;

    let layers = config.region_layers(derived);
    let mut radii = vec![derived.region_radii[0] * 1e-3];
    let mut ring_region = Vec::new();
    for region in derived.active_regions() {
        let n = layers[region.index()];
        if n == 0 {
            return Err(Error::InvalidMesh(format!(
                "active region {region} received no radial layers"
            )));
        }
        let (r0, r1) = derived.region_span(region);
        for i in 1..=n {
            let r = if i == n {
                r1
            } else {
                r0 + (r1 - r0) * i as f64 / n as f64
            };
            radii.push(r * 1e-3);
            ring_region.push(region);
        }
    }
    let rotors = RotorLayout {
        p1: design.p1,
        p3: design.p3,
        q2: derived.q2,
        modulator_fill: design.modulator_fill,
        theta1: design.theta1,
        theta2: design.theta2,
        theta3: design.theta3,
    };
    PolarMesh::from_rings(
        radii,
        ring_region,
        n_al,
        design.stack_length * 1e-3,
        PermanentMagnet::for_design(design)?,
        rotors,
    )
}

/// Re-tags magnets and modulators of a mesh from a design's rotor angles,
/// modulator fill and magnet grade. The grid itself is left untouched.
pub fn assign_sources(mesh: &mut PolarMesh, design: &GearDesign) -> Result<()> {
    mesh.pm = PermanentMagnet::for_design(design)?;
    mesh.rotors.modulator_fill = design.modulator_fill;
    mesh.set_rotor_angles(design.theta1, design.theta2, design.theta3);
    Ok(())
}
