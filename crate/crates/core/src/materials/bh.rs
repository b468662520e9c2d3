//! Tabulated B(H) curves with shape-preserving cubic interpolation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::materials::MU0;

/// A monotone B(H) relation built from measured or tabulated points.
///
/// The polarisation `J = B - μ0 H` is interpolated with a monotone piecewise
/// cubic Hermite (Fritsch–Carlson) so that `dB/dH >= μ0` everywhere and the
/// derivative is continuous across knots. Past the last point the curve
/// continues with slope `μ0`; the last knot's polarisation slope is pinned to
/// zero so the derivative stays continuous there as well.
#[derive(Debug, Clone, PartialEq)]
pub struct BHCurve {
    h: Vec<f64>,
    b: Vec<f64>,
    j: Vec<f64>,
    /// dJ/dH at each knot.
    dj: Vec<f64>,
}

impl BHCurve {
    pub fn new(points: &[(f64, f64)]) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidMaterial(msg));
        if points.len() < 3 {
            return bad(format!(
                "a B-H curve needs at least 3 points, got {}",
                points.len()
            ));
        }
        if points[0] != (0.0, 0.0) {
            return bad(format!(
                "a B-H curve must start at (0, 0), got {:?}",
                points[0]
            ));
        }
        for w in points.windows(2) {
            let ((h0, b0), (h1, b1)) = (w[0], w[1]);
            if !(h1.is_finite() && b1.is_finite()) {
                return bad(format!("non-finite point ({h1}, {b1})"));
            }
            if h1 <= h0 || b1 <= b0 {
                return bad(format!(
                    "points must increase strictly in H and B: ({h0}, {b0}) -> ({h1}, {b1})"
                ));
            }
            // Slightly below μ0 is tolerated as rounding in the data file.
            if (b1 - b0) / (h1 - h0) < MU0 * (1.0 - 1e-6) {
                return bad(format!(
                    "slope between H = {h0} and H = {h1} is below μ0; the curve is not physical"
                ));
            }
        }
        let h: Vec<f64> = points.iter().map(|p| p.0).collect();
        let b: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut j: Vec<f64> = h.iter().zip(&b).map(|(h, b)| b - MU0 * h).collect();
        // Clean up tolerated rounding so J is non-decreasing.
        for i in 1..j.len() {
            if j[i] < j[i - 1] {
                j[i] = j[i - 1];
            }
        }
        let dj = pchip_slopes(&h, &j);
        Ok(BHCurve { h, b, j, dj })
    }

    /// Reads a two-column `H B` text file; `#` starts a comment.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::InvalidMaterial(format!("line {}: cannot parse `{s}`", lineno + 1))
                })
            };
            match cols.as_slice() {
                [h, b] => points.push((parse(h)?, parse(b)?)),
                _ => {
                    return Err(Error::InvalidMaterial(format!(
                        "line {}: expected two columns `H B`",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(&points)
    }

    /// Built-in M250-like electrical steel curve.
    pub fn m250_like() -> Self {
        Self::parse(include_str!("../../data/m250_like.bh")).expect("bundled curve is valid")
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.h.iter().copied().zip(self.b.iter().copied())
    }

    fn segment_by_h(&self, h: f64) -> usize {
        let i = self.h.partition_point(|&x| x <= h);
        i.saturating_sub(1).min(self.h.len() - 2)
    }

    /// Hermite polarisation and its slope inside segment `i`.
    fn eval_segment(&self, i: usize, h: f64) -> (f64, f64) {
        let dx = self.h[i + 1] - self.h[i];
        let t = (h - self.h[i]) / dx;
        let (y0, y1) = (self.j[i], self.j[i + 1]);
        let (m0, m1) = (self.dj[i] * dx, self.dj[i + 1] * dx);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let slope = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / dx;
        (value, slope)
    }

    /// B at field strength `h >= 0`.
    pub fn b_of_h(&self, h: f64) -> f64 {
        let last = self.h.len() - 1;
        if h >= self.h[last] {
            return self.b[last] + MU0 * (h - self.h[last]);
        }
        let (j, _) = self.eval_segment(self.segment_by_h(h), h);
        MU0 * h + j
    }

    /// dB/dH at field strength `h >= 0`.
    pub fn db_dh(&self, h: f64) -> f64 {
        if h >= self.h[self.h.len() - 1] {
            return MU0;
        }
        let (_, dj) = self.eval_segment(self.segment_by_h(h), h);
        MU0 + dj
    }

    /// H at flux density `b >= 0`.
    pub fn h_of_b(&self, b: f64) -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        let last = self.b.len() - 1;
        if b >= self.b[last] {
            return self.h[last] + (b - self.b[last]) / MU0;
        }
        let i = self
            .b
            .partition_point(|&x| x <= b)
            .saturating_sub(1)
            .min(last - 1);
        let (mut lo, mut hi) = (self.h[i], self.h[i + 1]);
        // Secant start, then Newton safeguarded by the bracket.
        let mut h = lo + (b - self.b[i]) / (self.b[i + 1] - self.b[i]) * (hi - lo);
        for _ in 0..60 {
            let (j, dj) = self.eval_segment(i, h);
            let f = MU0 * h + j - b;
            if f > 0.0 {
                hi = h;
            } else {
                lo = h;
            }
            let step = f / (MU0 + dj);
            let mut next = h - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - h).abs() <= 1e-15 * h.abs().max(1e-300) || hi - lo <= 1e-15 * hi {
                return next;
            }
            h = next;
        }
        h
    }

    /// Apparent permeability B/H at flux density `b`.
    pub fn mu_apparent(&self, b: f64) -> f64 {
        let b = b.abs();
        if b == 0.0 {
            return self.db_dh(0.0);
        }
        let h = self.h_of_b(b);
        if h == 0.0 {
            return self.db_dh(0.0);
        }
        b / h
    }

    /// Differential permeability dB/dH at flux density `b`.
    pub fn mu_differential(&self, b: f64) -> f64 {
        self.db_dh(self.h_of_b(b.abs()))
    }
}

/// Fritsch–Carlson monotone slopes with the last slope pinned to zero.
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let s: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if s[k - 1] * s[k] <= 0.0 {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / s[k - 1] + w2 / s[k]);
        }
    }
    // Three-point end formula, limited to keep monotonicity.
    let mut d0 = ((2.0 * h[0] + h[1]) * s[0] - h[0] * s[1]) / (h[0] + h[1]);
    if d0.signum() != s[0].signum() || s[0] == 0.0 {
        d0 = 0.0;
    } else if s[0].signum() != s[1].signum() && d0.abs() > 3.0 * s[0].abs() {
        d0 = 3.0 * s[0];
    }
    d[0] = d0;
    d[n - 1] = 0.0;
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_tables() {
        assert!(BHCurve::new(&[(0.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(BHCurve::new(&[(1.0, 0.0), (2.0, 1.0), (3.0, 1.5)]).is_err());
        assert!(BHCurve::new(&[(0.0, 0.0), (2.0, 1.0), (1.0, 1.5)]).is_err());
        // slope below μ0 on the last segment
        assert!(BHCurve::new(&[(0.0, 0.0), (100.0, 1.0), (1e6, 1.1)]).is_err());
    }

    #[test]
    fn parses_comments_and_separators() {
        let c = BHCurve::parse("# H B\n0 0\n100, 0.5 # knee\n\n1000 1.2\n1e5 1.9\n").unwrap();
        assert_eq!(c.points().count(), 4);
        assert!(BHCurve::parse("0 0\n1 2 3\n").is_err());
        assert!(BHCurve::parse("0 0\n1 x\n").is_err());
    }

    #[test]
    fn interpolates_knots_exactly() {
        let c = BHCurve::m250_like();
        for (h, b) in c.points().collect::<Vec<_>>() {
            assert!((c.b_of_h(h) - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn default_curve_initial_permeability() {
        let c = BHCurve::m250_like();
        let mu_r0 = c.mu_apparent(0.0) / MU0;
        assert!((mu_r0 - 4000.0).abs() < 0.01 * 4000.0, "{mu_r0}");
        assert_eq!(c.mu_apparent(0.0), c.mu_differential(0.0));
    }

    #[test]
    fn saturation_limits() {
        let c = BHCurve::m250_like();
        let app = c.mu_apparent(50.0);
        assert!(app > MU0 && app < 1.05 * MU0);
        assert!(c.mu_apparent(500.0) < app);
        assert_eq!(c.mu_differential(50.0), MU0);
        // derivative continuous at the last knot
        let (h_last, _) = c.points().last().unwrap();
        let left = c.db_dh(h_last * (1.0 - 1e-9));
        assert!((left - MU0).abs() < 1e-6 * MU0);
    }

    #[test]
    fn derivative_is_continuous_across_knots() {
        let c = BHCurve::m250_like();
        for (h, _) in c.points().skip(1).collect::<Vec<_>>() {
            let l = c.db_dh(h * (1.0 - 1e-10));
            let r = c.db_dh(h * (1.0 + 1e-10));
            assert!((l - r).abs() <= 1e-6 * l, "jump at H = {h}: {l} vs {r}");
        }
    }
}
