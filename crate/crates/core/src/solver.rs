//! Newton-Raphson solution of the nonlinear mesh-flux system.
//!
//! The iteration starts from a linear solve with every steel half-tube at a
//! fixed initial permeability, then updates
//! `Φ ← Φ - step · R_diff(Φ)⁻¹ (R_app(Φ) Φ - f)` until the Rotor 3 torque
//! settles. The sparsity pattern never changes, so the symbolic Cholesky
//! analysis is done once per topology and only numeric factors are redone.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Gap;
use crate::linalg::SparseCholesky;
use crate::materials::{Materials, DEFAULT_INIT_MU_R};
use crate::mesh::PolarMesh;
use crate::network::{AssemblyOptions, MecSystem, Network, PermeabilityModel};
use crate::postproc::TorqueProbe;

/// Torques below this fraction of the gap stress scale count as zero when
/// forming the relative torque change.
const TORQUE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Relative Rotor 3 torque change that ends the iteration.
    pub torque_tol: f64,
    pub max_iters: usize,
    /// Relative permeability of steel in the initial linear solve.
    pub init_mu_r: f64,
    /// Halve the Newton step while the residual RMS grows.
    pub damping: bool,
    pub max_halvings: u32,
    /// Stop once the residual RMS falls below this multiple of RMS(f).
    pub residual_floor: f64,
    pub permeability: PermeabilityModel,
    /// Solve one symmetry sector when the design is periodic.
    pub use_symmetry: bool,
    /// Keep steel at `init_mu_r` and skip the Newton updates.
    pub frozen_linear: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            torque_tol: 1e-3,
            max_iters: 50,
            init_mu_r: DEFAULT_INIT_MU_R,
            damping: true,
            max_halvings: 10,
            residual_floor: 1e-10,
            permeability: PermeabilityModel::PerTube,
            use_symmetry: true,
            frozen_linear: false,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.torque_tol > 0.0) || self.max_iters < 1 || !(self.init_mu_r >= 1.0) {
            return Err(Error::InvalidDesign(
                "solver options need torque_tol > 0, max_iters >= 1 and init_mu_r >= 1".into(),
            ));
        }
        Ok(())
    }

    fn assembly(&self) -> AssemblyOptions {
        AssemblyOptions {
            init_mu_r: self.init_mu_r,
            model: self.permeability,
        }
    }
}

/// State after one Newton update (or after the linear start).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// Rotor 3 torque [Nm].
    pub torque: f64,
    pub torque_rotor1: f64,
    /// RMS of `R_app(Φ) Φ - f` at this iterate [A].
    pub rms_residual: f64,
    /// Wall time since the solve started [s].
    pub seconds: f64,
    pub halvings: u32,
}

/// Convergence history of one solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    /// The linear starting point.
    pub initial: Option<IterationRecord>,
    /// One record per Newton iteration.
    pub iterations: Vec<IterationRecord>,
}

impl SolveTrace {
    pub fn total_seconds(&self) -> f64 {
        self.iterations
            .last()
            .or(self.initial.as_ref())
            .map_or(0.0, |r| r.seconds)
    }

    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.initial.iter().chain(&self.iterations)
    }

    /// CSV with one row for the linear start (iter 0) and one per iteration.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let file = std::fs::File::create(path).map_err(io)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(
            w,
            "iter,torque_Nm,rms_residual_A,cumulative_seconds,halvings"
        )
        .map_err(io)?;
        for r in self.records() {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.6},{}",
                r.iter, r.torque, r.rms_residual, r.seconds, r.halvings
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Converged loop fluxes with their torques and history.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub phi: Vec<f64>,
    pub torque_rotor1: f64,
    pub torque_rotor3: f64,
    pub trace: SolveTrace,
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Assembler, symbolic factorization and torque probes for one topology.
#[derive(Debug, Clone)]
pub struct Solver {
    network: Network,
    cholesky: SparseCholesky,
    materials: Materials,
    options: SolveOptions,
    inner: TorqueProbe,
    outer: TorqueProbe,
}

impl Solver {
    pub fn new(mesh: &PolarMesh, materials: Materials, options: SolveOptions) -> Result<Self> {
        options.validate()?;
        let network = Network::new(mesh);
        let cholesky = SparseCholesky::analyze(network.pattern())?;
        Ok(Solver {
            inner: TorqueProbe::new(mesh, Gap::Inner)?,
            outer: TorqueProbe::new(mesh, Gap::Outer)?,
            network,
            cholesky,
            materials,
            options,
        })
    }

    pub fn options(&self) -> &SolveOptions {
        &self.options
    }

    pub fn materials(&self) -> &Materials {
        &self.materials
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn probes(&self) -> (&TorqueProbe, &TorqueProbe) {
        (&self.inner, &self.outer)
    }

    /// Assembles the system at `phi` (or at the initial permeability).
    pub fn assemble(&self, mesh: &PolarMesh, phi: Option<&[f64]>) -> MecSystem {
        self.network
            .assemble(mesh, &self.materials, phi, &self.options.assembly())
    }

    /// Solves `R_app Φ = f` of an assembled system with the shared analysis.
    pub fn solve_system(&self, sys: &MecSystem) -> Result<Vec<f64>> {
        Ok(self.cholesky.factor(&sys.r_app)?.solve(&sys.f))
    }

    /// Linear solve with steel at the initial permeability.
    pub fn solve_linear(&self, mesh: &PolarMesh) -> Result<Vec<f64>> {
        self.solve_system(&self.assemble(mesh, None))
    }

    fn record(
        &self,
        iter: usize,
        phi: &[f64],
        rms_residual: f64,
        start: Instant,
        halvings: u32,
    ) -> IterationRecord {
        IterationRecord {
            iter,
            torque: self.outer.torque(phi),
            torque_rotor1: self.inner.torque(phi),
            rms_residual,
            seconds: start.elapsed().as_secs_f64(),
            halvings,
        }
    }

    /// Full nonlinear solve.
    pub fn solve(&self, mesh: &PolarMesh) -> Result<Solution> {
        let start = Instant::now();
        let opts = &self.options;
        let asm = opts.assembly();
        let linear = self.assemble(mesh, None);
        let mut phi = self.solve_system(&linear)?;
        if opts.frozen_linear {
            let r = rms(&linear.residual(&phi));
            let rec = self.record(0, &phi, r, start, 0);
            return Ok(Solution {
                torque_rotor1: rec.torque_rotor1,
                torque_rotor3: rec.torque,
                phi,
                trace: SolveTrace {
                    initial: Some(rec),
                    iterations: Vec::new(),
                },
            });
        }

        let mut sys = linear;
        self.network
            .reassemble(&mut sys, mesh, &self.materials, Some(&phi), &asm);
        let f_rms = rms(&sys.f);
        let mut res = sys.residual(&phi);
        let mut res_rms = rms(&res);
        let mut trace = SolveTrace {
            initial: Some(self.record(0, &phi, res_rms, start, 0)),
            iterations: Vec::new(),
        };
        let mut torque = trace.initial.unwrap().torque;
        let mut last_change = f64::INFINITY;
        let mut trial = sys.clone();

        for iter in 1..=opts.max_iters {
            let factor = self.cholesky.factor(&sys.r_diff)?;
            let dx = factor.solve(&res);
            let mut step = 1.0;
            let mut halvings = 0;
            let mut candidate;
            let mut cand_res;
            let mut cand_rms;
            loop {
                candidate = phi
                    .iter()
                    .zip(&dx)
                    .map(|(p, d)| p - step * d)
                    .collect::<Vec<_>>();
                self.network
                    .reassemble(&mut trial, mesh, &self.materials, Some(&candidate), &asm);
                cand_res = trial.residual(&candidate);
                cand_rms = rms(&cand_res);
                // Allow round-off-level growth near the solution.
                let grew = cand_rms > res_rms * (1.0 + 1e-9) + 1e-14 * f_rms;
                if !(opts.damping && grew && halvings < opts.max_halvings) {
                    break;
                }
                step *= 0.5;
                halvings += 1;
            }
            phi = candidate;
            res = cand_res;
            res_rms = cand_rms;
            std::mem::swap(&mut sys, &mut trial);

            let rec = self.record(iter, &phi, res_rms, start, halvings);
            trace.iterations.push(rec);
            let scale = TORQUE_FLOOR * self.outer.stress_scale(&phi);
            let denom = rec.torque.abs().max(scale).max(f64::MIN_POSITIVE);
            last_change = (rec.torque - torque).abs() / denom;
            torque = rec.torque;
            if last_change < opts.torque_tol || res_rms <= opts.residual_floor * f_rms {
                return Ok(Solution {
                    torque_rotor1: rec.torque_rotor1,
                    torque_rotor3: rec.torque,
                    phi,
                    trace,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iters,
            last_change,
            trace: Box::new(trace),
        })
    }
}

/// Linear solve of an assembled system.
pub fn solve_linear(system: &MecSystem) -> Result<Vec<f64>> {
    crate::linalg::sparse_solve(&system.r_app, &system.f)
}

/// Newton solve of a mesh with sources assigned.
pub fn solve_newton(
    mesh: &PolarMesh,
    materials: &Materials,
    options: &SolveOptions,
) -> Result<(Vec<f64>, SolveTrace)> {
    let s = Solver::new(mesh, materials.clone(), options.clone())?.solve(mesh)?;
    Ok((s.phi, s.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{derive_geometry, GearDesign};
    use crate::materials::{PermanentMagnet, SteelModel};
    use crate::mesh::{build_mesh, MeshConfig};

    fn small_design() -> GearDesign {
        let mut d = GearDesign::new(2, 5, 60.0, [8.0, 4.0, 1.0, 6.0, 0.5, 1.0, 4.0, 8.0]);
        d.steel_id = "analytic:1.9:4000".into();
        d
    }

    fn small_mesh(d: &GearDesign) -> PolarMesh {
        let mut cfg = MeshConfig::coarse();
        cfg.angular_multiplier = 6;
        build_mesh(d, &derive_geometry(d).unwrap(), &cfg).unwrap()
    }

    #[test]
    fn zero_sources_converge_at_once() {
        let mut d = small_design();
        d.b_r = Some(0.0);
        let mesh = small_mesh(&d);
        let mat = Materials::for_design(&d).unwrap();
        let (phi, trace) = solve_newton(&mesh, &mat, &SolveOptions::default()).unwrap();
        assert!(phi.iter().all(|&x| x == 0.0));
        assert_eq!(trace.iterations.len(), 1);
    }

    #[test]
    fn linear_materials_take_one_step() {
        let d = small_design();
        let mesh = small_mesh(&d);
        let mat = Materials {
            steel: SteelModel::linear(1500.0),
            pm: PermanentMagnet::N42,
        };
        let solver = Solver::new(&mesh, mat.clone(), SolveOptions::default()).unwrap();
        let sol = solver.solve(&mesh).unwrap();
        let exact = solve_linear(&crate::network::assemble(
            &mesh,
            &mat,
            Some(&sol.phi),
            &Default::default(),
        ))
        .unwrap();
        let scale = exact.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in sol.phi.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
        assert!(sol.trace.iterations.len() <= 2);
    }

    #[test]
    fn newton_converges_on_analytic_steel() {
        let d = small_design();
        let mut mesh = small_mesh(&d);
        mesh.set_rotor_angles(0.3, 0.0, 0.0);
        let mat = Materials::for_design(&d).unwrap();
        let solver = Solver::new(&mesh, mat, SolveOptions::default()).unwrap();
        let sol = solver.solve(&mesh).unwrap();
        let rms: Vec<f64> = sol.trace.records().map(|r| r.rms_residual).collect();
        assert!(
            rms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)),
            "{rms:?}"
        );
        assert!(sol.trace.iterations.len() < 20);
        assert!(sol.torque_rotor3.abs() > 0.0);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let d = small_design();
        let mut mesh = small_mesh(&d);
        mesh.set_rotor_angles(0.2, 0.0, 0.0);
        let mat = Materials::for_design(&d).unwrap();
        let opts = SolveOptions::default();
        let solver = Solver::new(&mesh, mat, opts).unwrap();
        let phi = solver.solve(&mesh).unwrap().phi;
        let sys = solver.assemble(&mesh, Some(&phi));
        let r0 = sys.residual(&phi);
        let scale = phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let v: Vec<f64> = (0..phi.len())
            .map(|i| ((i * 7919) % 13) as f64 - 6.0)
            .collect();
        let jv = sys.r_diff.mul(&v);
        let eps = 1e-7 * scale / 6.0;
        let shifted: Vec<f64> = phi.iter().zip(&v).map(|(p, d)| p + eps * d).collect();
        let r1 = solver.assemble(&mesh, Some(&shifted)).residual(&shifted);
        let fd: Vec<f64> = r1.iter().zip(&r0).map(|(a, b)| (a - b) / eps).collect();
        let num: f64 = fd
            .iter()
            .zip(&jv)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let den: f64 = jv.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(num <= 1e-5 * den, "{}", num / den);
    }

    #[test]
    fn trace_csv() {
        let d = small_design();
        let mesh = small_mesh(&d);
        let (_, trace) = solve_newton(
            &mesh,
            &Materials::for_design(&d).unwrap(),
            &SolveOptions::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.csv");
        trace.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.starts_with("iter,torque_Nm,rms_residual_A,cumulative_seconds,halvings\n"));
        assert_eq!(text.lines().count(), 2 + trace.iterations.len());
    }

    #[test]
    fn iteration_limit_reports_trace() {
        let d = small_design();
        let mut mesh = small_mesh(&d);
        mesh.set_rotor_angles(0.3, 0.0, 0.0);
        let opts = SolveOptions {
            max_iters: 1,
            torque_tol: 1e-15,
            residual_floor: 0.0,
            ..Default::default()
        };
        let err = solve_newton(&mesh, &Materials::for_design(&d).unwrap(), &opts).unwrap_err();
        assert!(err.is_convergence_failure());
        assert_eq!(err.trace().unwrap().iterations.len(), 1);
    }
}
