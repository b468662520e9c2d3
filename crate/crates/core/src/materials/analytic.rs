use crate::error::{Error, Result};
use crate::materials::MU0;

/// Closed-form saturating steel, `B = μ0 H + Js H / (H + Hk)` with
/// `Hk = Js / (μ0 (μr,i - 1))`.
///
/// Smooth everywhere, so it is the reference material for Jacobian checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticBH {
    pub b_sat: f64,
    pub mu_r_initial: f64,
}

impl AnalyticBH {
    pub fn new(b_sat: f64, mu_r_initial: f64) -> Result<Self> {
        if !(b_sat > 0.0 && b_sat.is_finite()) || !(mu_r_initial > 1.0 && mu_r_initial.is_finite())
        {
            return Err(Error::InvalidMaterial(format!(
                "analytic B-H needs b_sat > 0 and mu_r_initial > 1, got {b_sat}, {mu_r_initial}"
            )));
        }
        Ok(AnalyticBH {
            b_sat,
            mu_r_initial,
        })
    }

    fn knee(&self) -> f64 {
        self.b_sat / (MU0 * (self.mu_r_initial - 1.0))
    }

    pub fn b_of_h(&self, h: f64) -> f64 {
        MU0 * h + self.b_sat * h / (h + self.knee())
    }

    pub fn db_dh(&self, h: f64) -> f64 {
        let a = self.knee();
        MU0 + self.b_sat * a / ((h + a) * (h + a))
    }

    /// Inverse of [`b_of_h`](Self::b_of_h) for `b >= 0`: the positive root of
    /// `μ0 H² - (B - μ0 Hk - Js) H - B Hk = 0`, written to avoid cancellation.
    pub fn h_of_b(&self, b: f64) -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        let a = self.knee();
        let c = b - MU0 * a - self.b_sat;
        let disc = (c * c + 4.0 * MU0 * b * a).sqrt();
        if c <= 0.0 {
            2.0 * b * a / (disc - c)
        } else {
            (c + disc) / (2.0 * MU0)
        }
    }

    pub fn mu_apparent(&self, b: f64) -> f64 {
        let b = b.abs();
        if b == 0.0 {
            return self.db_dh(0.0);
        }
        b / self.h_of_b(b)
    }

    pub fn mu_differential(&self, b: f64) -> f64 {
        self.db_dh(self.h_of_b(b.abs()))
    }
}
