//! Flux densities, air-gap profiles, Maxwell-stress torque and slip torque.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{derive_geometry, DerivedGeometry, Gap, GearDesign, Region};
use crate::materials::{Materials, MU0};
use crate::mesh::{build_mesh, MeshConfig, PolarMesh};
use crate::network::{radial_fluxes, tangential_fluxes};
use crate::solver::{Solution, SolveOptions, Solver};

/// Flux and flux density of every branch and cell of a solved mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSolution {
    pub n_rl: usize,
    pub n_al: usize,
    pub sectors: usize,
    pub dtheta: f64,
    pub stack: f64,
    pub radii: Vec<f64>,
    pub ring_region: Vec<Region>,
    /// Outward flux of radial branch `(k, j)` between rings `k` and `k+1` [Wb].
    pub radial_flux: Vec<f64>,
    /// Counter-clockwise flux of tangential branch `(k, j)` [Wb].
    pub tangential_flux: Vec<f64>,
    pub radial_b: Vec<f64>,
    pub tangential_b: Vec<f64>,
    /// Mean of each cell's two radial tubes [T].
    pub cell_b_rad: Vec<f64>,
    /// Mean of each cell's two tangential tubes [T].
    pub cell_b_tan: Vec<f64>,
    pub angles: [f64; 3],
}

impl FieldSolution {
    pub fn cell_b(&self, ring: usize, index: usize) -> (f64, f64) {
        let i = ring * self.n_al + index;
        (self.cell_b_rad[i], self.cell_b_tan[i])
    }

    /// Fluxes entering a cell through its inner and left tubes and leaving
    /// through its outer and right tubes: `[inner, outer, left, right]`.
    pub fn cell_tube_fluxes(&self, ring: usize, index: usize) -> [f64; 4] {
        let n = self.n_al;
        let left = (index + n - 1) % n;
        let inner = if ring > 0 {
            self.radial_flux[(ring - 1) * n + index]
        } else {
            0.0
        };
        let outer = if ring + 1 < self.n_rl {
            self.radial_flux[ring * n + index]
        } else {
            0.0
        };
        [
            inner,
            outer,
            self.tangential_flux[ring * n + left],
            self.tangential_flux[ring * n + index],
        ]
    }

    /// Rings of a region.
    pub fn region_rings(&self, region: Region) -> std::ops::Range<usize> {
        let s = self.ring_region.iter().position(|&r| r == region);
        match s {
            Some(s) => {
                s..s + self.ring_region[s..]
                    .iter()
                    .take_while(|&&r| r == region)
                    .count()
            }
            None => 0..0,
        }
    }

    /// The middle ring of an air gap.
    pub fn gap_ring(&self, gap: Gap) -> Result<usize> {
        mid_ring(self.region_rings(gap.region()), gap)
    }

    pub fn ring_center(&self, ring: usize) -> f64 {
        (self.radii[ring] * self.radii[ring + 1]).sqrt()
    }
}

fn mid_ring(rings: std::ops::Range<usize>, gap: Gap) -> Result<usize> {
    if rings.is_empty() {
        return Err(Error::CollapsedGap(gap.name()));
    }
    Ok(rings.start + rings.len() / 2)
}

/// Branch and cell flux densities from loop fluxes.
pub fn flux_densities(mesh: &PolarMesh, phi: &[f64]) -> FieldSolution {
    assert_eq!(phi.len(), mesh.loop_count());
    let (n_rl, n_al) = (mesh.n_rl(), mesh.n_al());
    let r = mesh.radii();
    let (dt, l) = (mesh.dtheta(), mesh.stack());
    let radial_flux = radial_fluxes(phi, n_al);
    let tangential_flux = tangential_fluxes(phi, n_al);
    let radial_b: Vec<f64> = radial_flux
        .iter()
        .enumerate()
        .map(|(i, f)| f / (r[i / n_al + 1] * dt * l))
        .collect();
    let tangential_b: Vec<f64> = tangential_flux
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let k = i / n_al;
            f / ((r[k + 1] - r[k]) * l)
        })
        .collect();
    let mut cell_b_rad = Vec::with_capacity(n_rl * n_al);
    let mut cell_b_tan = Vec::with_capacity(n_rl * n_al);
    for k in 0..n_rl {
        for j in 0..n_al {
            let inner = if k > 0 {
                radial_b[(k - 1) * n_al + j]
            } else {
                0.0
            };
            let outer = if k + 1 < n_rl {
                radial_b[k * n_al + j]
            } else {
                0.0
            };
            let left = tangential_b[k * n_al + (j + n_al - 1) % n_al];
            let right = tangential_b[k * n_al + j];
            cell_b_rad.push(0.5 * (inner + outer));
            cell_b_tan.push(0.5 * (left + right));
        }
    }
    let rot = mesh.rotors();
    FieldSolution {
        n_rl,
        n_al,
        sectors: mesh.sectors(),
        dtheta: dt,
        stack: l,
        radii: r.to_vec(),
        ring_region: mesh.ring_regions().to_vec(),
        radial_flux,
        tangential_flux,
        radial_b,
        tangential_b,
        cell_b_rad,
        cell_b_tan,
        angles: [rot.theta1, rot.theta2, rot.theta3],
    }
}

/// One sample of an air-gap flux-density profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileSample {
    pub theta: f64,
    pub b_rad: f64,
    pub b_tan: f64,
}

/// Flux density along the middle of an air gap, one sample per angular layer
/// of the full revolution.
pub fn airgap_profile(sol: &FieldSolution, gap: Gap) -> Result<Vec<ProfileSample>> {
    let k = sol.gap_ring(gap)?;
    let n_full = sol.n_al * sol.sectors;
    Ok((0..n_full)
        .map(|j| {
            let (b_rad, b_tan) = sol.cell_b(k, j % sol.n_al);
            ProfileSample {
                theta: (j as f64 + 0.5) * sol.dtheta,
                b_rad,
                b_tan,
            }
        })
        .collect())
}

pub fn write_profile_csv(profile: &[ProfileSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "theta_deg,B_rad_T,B_tan_T").map_err(io)?;
    for s in profile {
        writeln!(
            w,
            "{:.9},{:.9e},{:.9e}",
            s.theta.to_degrees(),
            s.b_rad,
            s.b_tan
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Spatial harmonic order with the largest amplitude (orders 1..n/2).
pub fn dominant_harmonic(samples: &[f64]) -> usize {
    let n = samples.len();
    let mut best = (0, 0.0);
    for h in 1..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &x) in samples.iter().enumerate() {
            let a = 2.0 * PI * (h * j % n) as f64 / n as f64;
            re += x * a.cos();
            im += x * a.sin();
        }
        let amp = re.hypot(im);
        if amp > best.1 {
            best = (h, amp);
        }
    }
    best.0
}

/// Maxwell-stress integral `L r²/μ0 Σ B_rad B_tan Δθ` over ring `k` for the
/// full revolution; positive means counter-clockwise torque on the material
/// inside radius `r`.
pub fn maxwell_torque_at_ring(sol: &FieldSolution, ring: usize) -> f64 {
    let r = sol.ring_center(ring);
    let sum: f64 = (0..sol.n_al)
        .map(|j| {
            let (br, bt) = sol.cell_b(ring, j);
            br * bt
        })
        .sum();
    sol.stack * r * r / MU0 * sum * sol.dtheta * sol.sectors as f64
}

/// Torque on Rotor 1 (inner gap) or Rotor 3 (outer gap) [Nm].
pub fn maxwell_torque(sol: &FieldSolution, gap: Gap) -> Result<f64> {
    let t = maxwell_torque_at_ring(sol, sol.gap_ring(gap)?);
    Ok(match gap {
        Gap::Inner => t,
        Gap::Outer => -t,
    })
}

/// Evaluates gap torques straight from loop fluxes, without a full field.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueProbe {
    gap: Gap,
    ring: usize,
    n_rl: usize,
    n_al: usize,
    /// `L r² Δθ sectors / μ0`, signed for the rotor the gap drives.
    factor: f64,
    inner_area: f64,
    outer_area: f64,
    tangential_area: f64,
    radius: f64,
}

impl TorqueProbe {
    pub fn new(mesh: &PolarMesh, gap: Gap) -> Result<Self> {
        let ring = mid_ring(mesh.region_rings(gap.region()), gap)?;
        let r = mesh.radii();
        let (dt, l) = (mesh.dtheta(), mesh.stack());
        let radius = mesh.ring_center(ring);
        let sign = match gap {
            Gap::Inner => 1.0,
            Gap::Outer => -1.0,
        };
        Ok(TorqueProbe {
            gap,
            ring,
            n_rl: mesh.n_rl(),
            n_al: mesh.n_al(),
            factor: sign * l * radius * radius * dt * mesh.sectors() as f64 / MU0,
            inner_area: r[ring] * dt * l,
            outer_area: r[ring + 1] * dt * l,
            tangential_area: (r[ring + 1] - r[ring]) * l,
            radius,
        })
    }

    pub fn gap(&self) -> Gap {
        self.gap
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn cell_b(&self, phi: &[f64], j: usize) -> (f64, f64) {
        let (k, n) = (self.ring, self.n_al);
        let at = |kk: usize, jj: usize| phi[kk * n + jj];
        let jm = (j + n - 1) % n;
        let radial = |kk: usize| at(kk, jm) - at(kk, j);
        let inner = if k > 0 {
            radial(k - 1) / self.inner_area
        } else {
            0.0
        };
        let outer = if k + 1 < self.n_rl {
            radial(k) / self.outer_area
        } else {
            0.0
        };
        let tangential = |jj: usize| {
            let own = if k + 1 < self.n_rl { at(k, jj) } else { 0.0 };
            let below = if k > 0 { at(k - 1, jj) } else { 0.0 };
            (own - below) / self.tangential_area
        };
        (
            0.5 * (inner + outer),
            0.5 * (tangential(jm) + tangential(j)),
        )
    }

    /// Torque on the rotor bordering this gap [Nm].
    pub fn torque(&self, phi: &[f64]) -> f64 {
        let sum: f64 = (0..self.n_al)
            .map(|j| {
                let (br, bt) = self.cell_b(phi, j);
                br * bt
            })
            .sum();
        self.factor * sum
    }

    /// `L r²/μ0 Σ B_rad² Δθ`: the torque a fully sheared gap field would give.
    pub fn stress_scale(&self, phi: &[f64]) -> f64 {
        let sum: f64 = (0..self.n_al).map(|j| self.cell_b(phi, j).0.powi(2)).sum();
        self.factor.abs() * sum
    }
}

/// Torques of the three rotors and the derived torque densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorqueReport {
    pub torque_rotor1: f64,
    pub torque_rotor3: f64,
    pub torque_modulators: f64,
    pub radius_inner_gap: f64,
    pub radius_outer_gap: f64,
    /// `|T3| / (π r_o² L)` [Nm/m³].
    pub vtd: f64,
    /// `|T3| /` magnet volume [Nm/m³].
    pub pm_vtd: f64,
}

impl TorqueReport {
    pub fn new(
        torque_rotor1: f64,
        torque_rotor3: f64,
        radii: (f64, f64),
        design: &GearDesign,
    ) -> Self {
        TorqueReport {
            torque_rotor1,
            torque_rotor3,
            torque_modulators: -(torque_rotor1 + torque_rotor3),
            radius_inner_gap: radii.0,
            radius_outer_gap: radii.1,
            vtd: torque_rotor3.abs() / design.active_volume(),
            pm_vtd: torque_rotor3.abs() / design.magnet_volume(),
        }
    }
}

/// Torque report of a solved field.
pub fn torque_report(sol: &FieldSolution, design: &GearDesign) -> Result<TorqueReport> {
    let t1 = maxwell_torque(sol, Gap::Inner)?;
    let t3 = maxwell_torque(sol, Gap::Outer)?;
    let radii = (
        sol.ring_center(sol.gap_ring(Gap::Inner)?),
        sol.ring_center(sol.gap_ring(Gap::Outer)?),
    );
    Ok(TorqueReport::new(t1, t3, radii, design))
}

/// Sampling budget of the slip-torque search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlipOptions {
    /// Rotor 1 angles sampled over half an electrical period.
    pub samples: usize,
    /// Golden-section solves around the best sample.
    pub refinements: usize,
    /// Locate the maximum on the odd-harmonic trigonometric interpolant of the
    /// samples instead of with extra solves.
    pub interpolate: bool,
    /// Solve the sample angles on the rayon pool.
    pub parallel: bool,
}

impl Default for SlipOptions {
    fn default() -> Self {
        SlipOptions {
            samples: 9,
            refinements: 3,
            interpolate: false,
            parallel: true,
        }
    }
}

/// One evaluated Rotor 1 position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleSample {
    pub theta1: f64,
    pub torque_rotor1: f64,
    pub torque_rotor3: f64,
    pub iterations: usize,
    pub seconds: f64,
}

/// Pull-out torque of Rotor 3 with the modulators held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipResult {
    /// Largest `|T3|` found [Nm].
    pub slip_torque: f64,
    /// Rotor 1 angle of the maximum [rad].
    pub angle: f64,
    pub torque_rotor1: f64,
    pub samples: Vec<AngleSample>,
}

impl SlipResult {
    pub fn total_iterations(&self) -> usize {
        self.samples.iter().map(|s| s.iterations).sum()
    }

    pub fn max_iterations(&self) -> usize {
        self.samples.iter().map(|s| s.iterations).max().unwrap_or(0)
    }
}

/// A design meshed and ready to solve at any rotor position.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    pub design: GearDesign,
    pub derived: DerivedGeometry,
    /// The mesh that is solved: one symmetry sector when the design allows it.
    pub mesh: PolarMesh,
    solver: Solver,
}

impl PreparedDesign {
    pub fn new(design: &GearDesign, config: &MeshConfig, options: &SolveOptions) -> Result<Self> {
        let derived = derive_geometry(design)?;
        let full = build_mesh(design, &derived, config)?;
        Self::from_mesh(design, derived, full, options)
    }

    /// Uses a prebuilt full mesh of the design.
    pub fn from_mesh(
        design: &GearDesign,
        derived: DerivedGeometry,
        full: PolarMesh,
        options: &SolveOptions,
    ) -> Result<Self> {
        let materials = Materials::for_design(design)?;
        let mesh = if options.use_symmetry && derived.symmetry > 1 {
            match full.sector(derived.symmetry as usize) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("solving the full mesh: {e}");
                    full
                }
            }
        } else {
            full
        };
        let solver = Solver::new(&mesh, materials, options.clone())?;
        Ok(PreparedDesign {
            design: design.clone(),
            derived,
            mesh,
            solver,
        })
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    /// Mesh with rotors placed at the given angles. A rigid rotation keeps
    /// every sector identical, so sector meshes stay valid.
    pub fn mesh_at(&self, theta1: f64, theta2: f64, theta3: f64) -> Result<PolarMesh> {
        let mut m = self.mesh.clone();
        m.set_rotor_angles(theta1, theta2, theta3);
        Ok(m)
    }

    pub fn solve_at(&self, theta1: f64, theta2: f64, theta3: f64) -> Result<(PolarMesh, Solution)> {
        let mesh = self.mesh_at(theta1, theta2, theta3)?;
        let sol = self.solver.solve(&mesh).map_err(|e| Error::AtAngle {
            angle_deg: theta1.to_degrees(),
            source: Box::new(e),
        })?;
        Ok((mesh, sol))
    }

    /// Solves at the design's own rotor angles.
    pub fn solve(&self) -> Result<(PolarMesh, Solution)> {
        let d = &self.design;
        self.solve_at(d.theta1, d.theta2, d.theta3)
    }

    fn sample(&self, theta1: f64) -> Result<AngleSample> {
        let d = &self.design;
        let (_, sol) = self.solve_at(theta1, d.theta2, d.theta3)?;
        Ok(AngleSample {
            theta1,
            torque_rotor1: sol.torque_rotor1,
            torque_rotor3: sol.torque_rotor3,
            iterations: sol.trace.iterations.len(),
            seconds: sol.trace.total_seconds(),
        })
    }

    /// Largest Rotor 3 torque over half an electrical period of Rotor 1.
    pub fn slip_torque(&self, opts: &SlipOptions) -> Result<SlipResult> {
        let n = opts.samples.max(1);
        let base = self.design.theta1;
        let span = PI / self.design.p1 as f64;
        let angles: Vec<f64> = (0..n)
            .map(|i| base + (i as f64 + 0.5) / n as f64 * span)
            .collect();
        let mut samples: Vec<AngleSample> = if opts.parallel {
            angles
                .par_iter()
                .map(|&a| self.sample(a))
                .collect::<Result<_>>()?
        } else {
            angles
                .iter()
                .map(|&a| self.sample(a))
                .collect::<Result<_>>()?
        };
        if opts.interpolate && n >= 2 {
            let values: Vec<f64> = samples.iter().map(|s| s.torque_rotor3).collect();
            let (x, t) = odd_harmonic_peak(&values);
            let best = samples[argmax(&samples)];
            samples.sort_by(|a, b| a.theta1.total_cmp(&b.theta1));
            let (angle, slip) = if t.abs() >= best.torque_rotor3.abs() {
                (base + x / self.design.p1 as f64, t.abs())
            } else {
                (best.theta1, best.torque_rotor3.abs())
            };
            return Ok(SlipResult {
                slip_torque: slip,
                angle,
                torque_rotor1: best.torque_rotor1,
                samples,
            });
        }
        if opts.refinements > 0 {
            let best = argmax(&samples);
            let step = span / n as f64;
            let (lo, hi) = (samples[best].theta1 - step, samples[best].theta1 + step);
            self.golden(lo, hi, opts.refinements, &mut samples)?;
        }
        let best = samples[argmax(&samples)];
        samples.sort_by(|a, b| a.theta1.total_cmp(&b.theta1));
        Ok(SlipResult {
            slip_torque: best.torque_rotor3.abs(),
            angle: best.theta1,
            torque_rotor1: best.torque_rotor1,
            samples,
        })
    }

    fn golden(
        &self,
        mut a: f64,
        mut b: f64,
        budget: usize,
        out: &mut Vec<AngleSample>,
    ) -> Result<()> {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut s1: Option<AngleSample> = None;
        let mut s2: Option<AngleSample> = None;
        for _ in 0..budget {
            if s1.is_none() {
                let s = self.sample(x1)?;
                out.push(s);
                s1 = Some(s);
                continue;
            }
            if s2.is_none() {
                let s = self.sample(x2)?;
                out.push(s);
                s2 = Some(s);
                continue;
            }
            let (f1, f2) = (
                s1.unwrap().torque_rotor3.abs(),
                s2.unwrap().torque_rotor3.abs(),
            );
            if f1 >= f2 {
                b = x2;
                x2 = x1;
                s2 = s1;
                x1 = b - g * (b - a);
                let s = self.sample(x1)?;
                out.push(s);
                s1 = Some(s);
            } else {
                a = x1;
                x1 = x2;
                s1 = s2;
                x2 = a + g * (b - a);
                let s = self.sample(x2)?;
                out.push(s);
                s2 = Some(s);
            }
        }
        Ok(())
    }
}

/// Peak of a half-period antisymmetric signal sampled at the midpoints
/// `(i + 0.5) π / n`, using the odd harmonics below `n` of its extension to a
/// full period. Returns the electrical angle and signed value of the peak.
pub fn odd_harmonic_peak(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let x_at = |i: usize| (i as f64 + 0.5) * PI / n as f64;
    // Fourier coefficients of the antisymmetric extension, odd orders only.
    let coeffs: Vec<(usize, f64, f64)> = (1..n)
        .step_by(2)
        .map(|k| {
            let (mut a, mut b) = (0.0, 0.0);
            for (i, &v) in values.iter().enumerate() {
                let x = k as f64 * x_at(i);
                a += v * x.cos();
                b += v * x.sin();
            }
            // the mirrored half doubles each sum
            (k, 2.0 * a / n as f64, 2.0 * b / n as f64)
        })
        .collect();
    let eval = |x: f64| -> f64 {
        coeffs
            .iter()
            .map(|&(k, a, b)| a * (k as f64 * x).cos() + b * (k as f64 * x).sin())
            .sum()
    };
    let steps = 64 * n;
    let mut best = (0.0f64, 0.0f64);
    for s in 0..steps {
        let x = (s as f64 + 0.5) * PI / steps as f64;
        let t = eval(x);
        if t.abs() > best.1.abs() {
            best = (x, t);
        }
    }
    best
}

fn argmax(samples: &[AngleSample]) -> usize {
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.torque_rotor3.abs() > samples[best].torque_rotor3.abs() {
            best = i;
        }
    }
    best
}

/// Slip torque of a design on a mesh configuration.
pub fn slip_torque(
    design: &GearDesign,
    config: &MeshConfig,
    options: &SolveOptions,
    slip: &SlipOptions,
) -> Result<SlipResult> {
    PreparedDesign::new(design, config, options)?.slip_torque(slip)
}
