//! Steel permeability models and the permanent-magnet source model.

mod analytic;
mod bh;

use std::f64::consts::PI;
use std::path::Path;

pub use analytic::AnalyticBH;
pub use bh::BHCurve;

use crate::error::{Error, Result};
use crate::geometry::GearDesign;

/// Vacuum permeability [H/m].
pub const MU0: f64 = 4.0e-7 * PI;

/// Initial relative permeability used for the linearised start-up solve.
pub const DEFAULT_INIT_MU_R: f64 = 4000.0;

/// Nonlinear (or frozen-linear) ferromagnetic material.
#[derive(Debug, Clone, PartialEq)]
pub enum SteelModel {
    Tabulated(BHCurve),
    Analytic(AnalyticBH),
    /// Constant relative permeability; B = μ0 μr H without saturation.
    Linear {
        mu_r: f64,
    },
}

impl SteelModel {
    pub fn m250_like() -> Self {
        SteelModel::Tabulated(BHCurve::m250_like())
    }

    pub fn linear(mu_r: f64) -> Self {
        SteelModel::Linear { mu_r }
    }

    /// Resolves a material id: `m250`, `linear:<mu_r>`, `analytic:<b_sat>:<mu_r>`,
    /// or a path to a two-column B-H file.
    pub fn resolve(id: &str) -> Result<Self> {
        let lower = id.trim().to_ascii_lowercase();
        match lower.as_str() {
            "m250" | "m250-like" | "m250_like" => return Ok(Self::m250_like()),
            _ => {}
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::UnknownMaterial(id.to_string()))
        };
        if let Some(rest) = lower.strip_prefix("linear:") {
            let mu_r = num(rest)?;
            if !(mu_r >= 1.0 && mu_r.is_finite()) {
                return Err(Error::InvalidMaterial(format!(
                    "linear mu_r must be >= 1, got {mu_r}"
                )));
            }
            return Ok(Self::linear(mu_r));
        }
        if let Some(rest) = lower.strip_prefix("analytic:") {
            let mut parts = rest.split(':');
            let (Some(b), Some(m), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::UnknownMaterial(id.to_string()));
            };
            return Ok(SteelModel::Analytic(AnalyticBH::new(num(b)?, num(m)?)?));
        }
        let path = Path::new(id);
        if path.is_file() {
            return Ok(SteelModel::Tabulated(BHCurve::from_file(path)?));
        }
        Err(Error::UnknownMaterial(id.to_string()))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, SteelModel::Linear { .. })
    }

    /// Apparent permeability B/H at flux density magnitude `b`.
    #[inline]
    pub fn mu_apparent(&self, b: f64) -> f64 {
        match self {
            SteelModel::Tabulated(c) => c.mu_apparent(b),
            SteelModel::Analytic(a) => a.mu_apparent(b),
            SteelModel::Linear { mu_r } => MU0 * mu_r,
        }
    }

    /// Differential permeability dB/dH at flux density magnitude `b`.
    #[inline]
    pub fn mu_differential(&self, b: f64) -> f64 {
        match self {
            SteelModel::Tabulated(c) => c.mu_differential(b),
            SteelModel::Analytic(a) => a.mu_differential(b),
            SteelModel::Linear { mu_r } => MU0 * mu_r,
        }
    }

    /// Both permeabilities at once.
    #[inline]
    pub fn mu_pair(&self, b: f64) -> (f64, f64) {
        match self {
            SteelModel::Tabulated(c) => {
                let b = b.abs();
                let h = c.h_of_b(b);
                let diff = c.db_dh(h);
                let app = if h == 0.0 { diff } else { b / h };
                (app, diff)
            }
            SteelModel::Analytic(a) => {
                let b = b.abs();
                let h = a.h_of_b(b);
                let diff = a.db_dh(h);
                let app = if h == 0.0 { diff } else { b / h };
                (app, diff)
            }
            SteelModel::Linear { mu_r } => (MU0 * mu_r, MU0 * mu_r),
        }
    }
}

/// Radially magnetised permanent magnet with a linear recoil line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermanentMagnet {
    /// Remanence [T].
    pub b_r: f64,
    /// Relative recoil permeability.
    pub mu_r: f64,
}

impl PermanentMagnet {
    /// Sintered NdFeB N42 datasheet values.
    pub const N42: PermanentMagnet = PermanentMagnet {
        b_r: 1.31,
        mu_r: 1.05,
    };

    pub fn new(b_r: f64, mu_r: f64) -> Result<Self> {
        // b_r = 0 is accepted as an unmagnetised ring.
        if !(b_r >= 0.0 && b_r.is_finite()) || !(mu_r >= 1.0 && mu_r.is_finite()) {
            return Err(Error::InvalidMaterial(format!(
                "magnet needs b_r >= 0 and mu_r >= 1, got {b_r}, {mu_r}"
            )));
        }
        Ok(PermanentMagnet { b_r, mu_r })
    }

    pub fn resolve(id: &str) -> Result<Self> {
        match id.trim().to_ascii_lowercase().as_str() {
            "n42" => Ok(Self::N42),
            _ => Err(Error::UnknownMaterial(id.to_string())),
        }
    }

    /// Magnet named by a design, with its `b_r` / `mu_r` overrides applied.
    pub fn for_design(design: &GearDesign) -> Result<Self> {
        let base = Self::resolve(&design.pm_id)?;
        Self::new(
            design.b_r.unwrap_or(base.b_r),
            design.mu_r.unwrap_or(base.mu_r),
        )
    }

    pub fn permeability(&self) -> f64 {
        MU0 * self.mu_r
    }

    /// MMF injected by a flux tube of the given radial length [m] in series
    /// with its reluctance; `polarity` is +1 for outward magnetisation.
    pub fn mmf(&self, radial_length: f64, polarity: f64) -> f64 {
        polarity * self.b_r / (MU0 * self.mu_r) * radial_length
    }
}

/// Magnet MMF of a radially oriented flux tube.
pub fn pm_mmf(pm: &PermanentMagnet, radial_length: f64, polarity: f64) -> f64 {
    pm.mmf(radial_length, polarity)
}

/// The steel and magnet used by one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Materials {
    pub steel: SteelModel,
    pub pm: PermanentMagnet,
}

impl Materials {
    pub fn for_design(design: &GearDesign) -> Result<Self> {
        Ok(Materials {
            steel: SteelModel::resolve(&design.steel_id)?,
            pm: PermanentMagnet::for_design(design)?,
        })
    }
}
