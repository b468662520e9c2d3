//! Parametric sweeps over the coupled design space.
//!
//! A sweep directory holds `spec.json` (the spec plus the results schema),
//! `results.csv` (one row per design and mesh preset, appended as designs
//! finish) and `summary.json`. Rerunning a sweep over the same directory only
//! solves the (id, preset) pairs missing from `results.csv`.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    couple_sweep_parameters, FixedDimensions, GearDesign, DEFAULT_STACK_LENGTH_MM,
};
use crate::mesh::{MeshConfig, MeshPreset};
use crate::postproc::{PreparedDesign, SlipOptions, SlipResult};
use crate::solver::SolveOptions;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.csv";
pub const SPEC_FILE: &str = "spec.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Columns of `results.csv`, schema version 1.
pub const RESULTS_COLUMNS: [&str; 27] = [
    "id",
    "preset",
    "g_r",
    "p1",
    "p3",
    "r_o_mm",
    "k_bi1",
    "t_pm1_mm",
    "t_ag_mm",
    "t_mods_mm",
    "t_brg_mm",
    "k_pm",
    "t_bi3_mm",
    "t_bi1_mm",
    "t_pm3_mm",
    "stack_length_mm",
    "converged",
    "slip_torque_Nm",
    "slip_angle_deg",
    "torque_rotor1_Nm",
    "vtd_Nm_per_m3",
    "pm_vtd_Nm_per_m3",
    "iterations_total",
    "iterations_max",
    "wall_seconds",
    "retried",
    "failure",
];

/// Rotor 1 pole-pair values allowed for one gear-ratio integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct P1Range {
    pub g_r: u32,
    pub p1: Vec<u32>,
}

/// Value lists of the swept parameters (lengths in mm) and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub p1_by_g_r: Vec<P1Range>,
    pub r_o: Vec<f64>,
    pub k_bi1: Vec<f64>,
    pub t_pm1: Vec<f64>,
    pub t_ag: Vec<f64>,
    pub t_mods: Vec<f64>,
    pub t_brg: Vec<f64>,
    pub k_pm: Vec<f64>,
    pub t_bi3: Vec<f64>,
    /// Mesh presets, each design is solved on every one. The last preset is the
    /// reference for discrepancy statistics.
    #[serde(default = "default_mesh")]
    pub mesh: Vec<String>,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default = "SweepSpec::default_slip")]
    pub slip: SlipOptions,
    #[serde(default = "default_stack")]
    pub stack_length: f64,
    /// Solve only this many designs, drawn uniformly without replacement.
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; the global rayon pool when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_mesh() -> Vec<String> {
    vec!["coarse".into()]
}

fn default_stack() -> f64 {
    DEFAULT_STACK_LENGTH_MM
}

/// Parameters of one point of the product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub g_r: u32,
    pub p1: u32,
    pub r_o: f64,
    pub k_bi1: f64,
    pub t_pm1: f64,
    pub t_ag: f64,
    pub t_mods: f64,
    pub t_brg: f64,
    pub k_pm: f64,
    pub t_bi3: f64,
}

impl SweepParams {
    pub const NAMES: [&'static str; 10] = [
        "g_r", "p1", "r_o", "k_bi1", "t_pm1", "t_ag", "t_mods", "t_brg", "k_pm", "t_bi3",
    ];

    pub fn get(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "g_r" => self.g_r as f64,
            "p1" => self.p1 as f64,
            "r_o" => self.r_o,
            "k_bi1" => self.k_bi1,
            "t_pm1" => self.t_pm1,
            "t_ag" => self.t_ag,
            "t_mods" => self.t_mods,
            "t_brg" => self.t_brg,
            "k_pm" => self.k_pm,
            "t_bi3" => self.t_bi3,
            _ => return Err(Error::UnknownParameter(name.to_string())),
        })
    }

    pub fn design(&self, stack_length: f64) -> Result<GearDesign> {
        let fixed = FixedDimensions {
            r_o: self.r_o,
            t_ag: self.t_ag,
            t_mods: self.t_mods,
            t_brg: self.t_brg,
            t_bi3: self.t_bi3,
        };
        let mut d =
            couple_sweep_parameters(self.g_r, self.p1, self.k_bi1, self.t_pm1, self.k_pm, &fixed)?;
        d.stack_length = stack_length;
        d.validate()?;
        Ok(d)
    }
}

/// One enumerated design. `id` is its index in the full product.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub id: u64,
    pub params: SweepParams,
    pub design: GearDesign,
}

impl SweepSpec {
    /// The standard design-space ranges (139,968 designs).
    pub fn standard_ranges() -> Self {
        SweepSpec {
            p1_by_g_r: vec![
                P1Range {
                    g_r: 5,
                    p1: (4..=18).collect(),
                },
                P1Range {
                    g_r: 9,
                    p1: (3..=13).collect(),
                },
                P1Range {
                    g_r: 17,
                    p1: (3..=8).collect(),
                },
            ],
            r_o: vec![150.0, 175.0, 200.0],
            k_bi1: vec![0.4, 0.5, 0.6],
            t_pm1: vec![3.0, 5.0, 7.0, 9.0, 11.0, 13.0],
            t_ag: vec![1.5],
            t_mods: vec![11.0, 14.0, 17.0],
            t_brg: vec![0.5, 1.0, 1.5],
            k_pm: vec![0.5, 0.75, 1.0],
            t_bi3: vec![20.0, 25.0, 30.0],
            mesh: default_mesh(),
            solver: SolveOptions::default(),
            slip: SweepSpec::default_slip(),
            stack_length: DEFAULT_STACK_LENGTH_MM,
            subsample: None,
            seed: 0,
            workers: None,
        }
    }

    /// Four midpoint samples over half an electrical period, peak taken from the
    /// odd-harmonic interpolant.
    pub fn default_slip() -> SlipOptions {
        SlipOptions {
            samples: 4,
            refinements: 0,
            interpolate: true,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSweep(m));
        if self.p1_by_g_r.is_empty() {
            return bad("no gear ratios given".into());
        }
        let mut seen = HashSet::new();
        for r in &self.p1_by_g_r {
            if !seen.insert(r.g_r) {
                return bad(format!("gear ratio {} listed twice", r.g_r));
            }
            if r.p1.is_empty() {
                return bad(format!("empty p1 list for g_r = {}", r.g_r));
            }
        }
        for (name, list) in self.lists() {
            if list.is_empty() {
                return bad(format!("empty value list for {name}"));
            }
            if list.iter().any(|v| !v.is_finite()) {
                return bad(format!("non-finite value in {name}"));
            }
        }
        if self.mesh.is_empty() {
            return bad("no mesh presets".into());
        }
        let mut names = HashSet::new();
        for m in &self.mesh {
            MeshPreset::parse(m)?;
            if !names.insert(m.as_str()) {
                return bad(format!("mesh preset {m} listed twice"));
            }
        }
        if !(self.stack_length > 0.0) {
            return bad("stack_length must be positive".into());
        }
        if self.subsample == Some(0) {
            return bad("subsample must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.solver.validate()
    }

    fn lists(&self) -> [(&'static str, &Vec<f64>); 8] {
        [
            ("r_o", &self.r_o),
            ("k_bi1", &self.k_bi1),
            ("t_pm1", &self.t_pm1),
            ("t_ag", &self.t_ag),
            ("t_mods", &self.t_mods),
            ("t_brg", &self.t_brg),
            ("k_pm", &self.k_pm),
            ("t_bi3", &self.t_bi3),
        ]
    }

    fn combos(&self) -> Vec<(u32, u32)> {
        self.p1_by_g_r
            .iter()
            .flat_map(|r| r.p1.iter().map(move |&p| (r.g_r, p)))
            .collect()
    }

    /// Size of the full product, before subsampling and validity checks.
    pub fn count(&self) -> u64 {
        let combos: u64 = self.p1_by_g_r.iter().map(|r| r.p1.len() as u64).sum();
        self.lists()
            .iter()
            .fold(combos, |n, (_, l)| n * l.len() as u64)
    }

    /// Parameters of product index `id`. The last list varies fastest.
    pub fn params(&self, id: u64) -> SweepParams {
        assert!(id < self.count(), "sweep id {id} out of range");
        let lists = self.lists();
        let mut rest = id;
        let mut pick = [0.0; 8];
        for (slot, (_, list)) in pick.iter_mut().zip(lists.iter()).rev() {
            let n = list.len() as u64;
            *slot = list[(rest % n) as usize];
            rest /= n;
        }
        let (g_r, p1) = self.combos()[rest as usize];
        let [r_o, k_bi1, t_pm1, t_ag, t_mods, t_brg, k_pm, t_bi3] = pick;
        SweepParams {
            g_r,
            p1,
            r_o,
            k_bi1,
            t_pm1,
            t_ag,
            t_mods,
            t_brg,
            k_pm,
            t_bi3,
        }
    }

    /// Product indices to run, ascending.
    pub fn selected_ids(&self) -> Vec<u64> {
        let total = self.count();
        match self.subsample {
            Some(n) if (n as u64) < total => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut ids: Vec<u64> = rand::seq::index::sample(&mut rng, total as usize, n)
                    .into_iter()
                    .map(|i| i as u64)
                    .collect();
                ids.sort_unstable();
                ids
            }
            _ => (0..total).collect(),
        }
    }
}

/// The designs a spec selects, in id order.
#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Size of the full product.
    pub total: u64,
    pub points: Vec<SweepPoint>,
    /// Selected ids whose coupled design is invalid, with the reason.
    pub invalid: Vec<(u64, String)>,
}

/// Enumerates the selected designs. Invalid coupled designs are logged and
/// left out.
pub fn enumerate(spec: &SweepSpec) -> Result<Enumeration> {
    spec.validate()?;
    let total = spec.count();
    if total == 0 {
        return Err(Error::InvalidSweep("the parameter product is empty".into()));
    }
    let mut points = Vec::new();
    let mut invalid = Vec::new();
    for id in spec.selected_ids() {
        let params = spec.params(id);
        match params.design(spec.stack_length) {
            Ok(design) => points.push(SweepPoint { id, params, design }),
            Err(e) => {
                log::warn!("skipping design {id}: {e}");
                invalid.push((id, e.to_string()));
            }
        }
    }
    Ok(Enumeration {
        total,
        points,
        invalid,
    })
}

/// One row of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignResult {
    pub id: u64,
    pub preset: String,
    pub g_r: u32,
    pub p1: u32,
    pub p3: u32,
    pub r_o_mm: f64,
    pub k_bi1: f64,
    pub t_pm1_mm: f64,
    pub t_ag_mm: f64,
    pub t_mods_mm: f64,
    pub t_brg_mm: f64,
    pub k_pm: f64,
    pub t_bi3_mm: f64,
    pub t_bi1_mm: f64,
    pub t_pm3_mm: f64,
    pub stack_length_mm: f64,
    pub converged: bool,
    #[serde(rename = "slip_torque_Nm")]
    pub slip_torque: Option<f64>,
    pub slip_angle_deg: Option<f64>,
    #[serde(rename = "torque_rotor1_Nm")]
    pub torque_rotor1: Option<f64>,
    #[serde(rename = "vtd_Nm_per_m3")]
    pub vtd: Option<f64>,
    #[serde(rename = "pm_vtd_Nm_per_m3")]
    pub pm_vtd: Option<f64>,
    pub iterations_total: usize,
    pub iterations_max: usize,
    pub wall_seconds: f64,
    pub retried: bool,
    pub failure: String,
}

impl DesignResult {
    fn new(point: &SweepPoint, preset: &str) -> Self {
        let (p, d) = (&point.params, &point.design);
        DesignResult {
            id: point.id,
            preset: preset.to_string(),
            g_r: p.g_r,
            p1: d.p1,
            p3: d.p3,
            r_o_mm: d.r_o,
            k_bi1: p.k_bi1,
            t_pm1_mm: d.t_pm1,
            t_ag_mm: p.t_ag,
            t_mods_mm: d.t_mods,
            t_brg_mm: d.t_brg,
            k_pm: p.k_pm,
            t_bi3_mm: d.t_bi3,
            t_bi1_mm: d.t_bi1,
            t_pm3_mm: d.t_pm3,
            stack_length_mm: d.stack_length,
            converged: false,
            slip_torque: None,
            slip_angle_deg: None,
            torque_rotor1: None,
            vtd: None,
            pm_vtd: None,
            iterations_total: 0,
            iterations_max: 0,
            wall_seconds: 0.0,
            retried: false,
            failure: String::new(),
        }
    }

    pub fn params(&self) -> SweepParams {
        SweepParams {
            g_r: self.g_r,
            p1: self.p1,
            r_o: self.r_o_mm,
            k_bi1: self.k_bi1,
            t_pm1: self.t_pm1_mm,
            t_ag: self.t_ag_mm,
            t_mods: self.t_mods_mm,
            t_brg: self.t_brg_mm,
            k_pm: self.k_pm,
            t_bi3: self.t_bi3_mm,
        }
    }

    /// Same outcome, ignoring wall time.
    pub fn same_outcome(&self, other: &DesignResult) -> bool {
        let mut a = self.clone();
        a.wall_seconds = other.wall_seconds;
        a == *other
    }
}

/// Solves one design on one mesh, retrying a convergence failure once with
/// damping on and twice the iteration limit. Failures end up in the row.
pub fn evaluate(
    point: &SweepPoint,
    preset: &str,
    config: &MeshConfig,
    spec: &SweepSpec,
) -> DesignResult {
    let mut row = DesignResult::new(point, preset);
    let start = Instant::now();
    let run = |options: &SolveOptions| -> Result<SlipResult> {
        PreparedDesign::new(&point.design, config, options)?.slip_torque(&spec.slip)
    };
    let mut outcome = run(&spec.solver);
    if let Err(e) = &outcome {
        if e.is_convergence_failure() {
            log::info!("design {} ({preset}) retrying after: {e}", point.id);
            row.retried = true;
            let retry = SolveOptions {
                damping: true,
                max_iters: spec.solver.max_iters * 2,
                ..spec.solver.clone()
            };
            outcome = run(&retry);
        }
    }
    row.wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(slip) => {
            row.converged = true;
            row.slip_torque = Some(slip.slip_torque);
            row.slip_angle_deg = Some(slip.angle.to_degrees());
            row.torque_rotor1 = Some(slip.torque_rotor1);
            row.vtd = Some(slip.slip_torque / point.design.active_volume());
            row.pm_vtd = Some(slip.slip_torque / point.design.magnet_volume());
            row.iterations_total = slip.total_iterations();
            row.iterations_max = slip.max_iterations();
        }
        Err(e) => {
            log::warn!("design {} ({preset}) failed: {e}", point.id);
            if let Some(trace) = e.trace() {
                row.iterations_max = trace.iterations.len();
                row.iterations_total = trace.iterations.len();
            }
            row.failure = e.to_string();
        }
    }
    row
}

/// Contents of `spec.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecSidecar {
    pub schema_version: u32,
    pub results_columns: Vec<String>,
    pub total_designs: u64,
    pub selected_designs: usize,
    pub spec: SweepSpec,
}

/// Summary statistics of one mesh preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetSummary {
    pub preset: String,
    pub designs: usize,
    pub converged: usize,
    pub failed: usize,
    pub retried: usize,
    pub min_torque_nm: f64,
    pub max_torque_nm: f64,
    pub mean_torque_nm: f64,
    pub max_vtd: f64,
    pub max_pm_vtd: f64,
    pub total_seconds: f64,
    pub mean_seconds: f64,
    pub mean_iterations: f64,
}

/// Signed torque discrepancy `(T - T_ref) / T_ref` of one preset against the
/// reference preset, over designs converged on both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetDiscrepancy {
    pub preset: String,
    pub reference: String,
    pub designs: usize,
    pub mean_abs_percent: f64,
    pub min_percent: f64,
    pub max_percent: f64,
    /// Fraction of designs where the preset predicts less torque.
    pub fraction_below: f64,
    /// Mean ratio of per-design wall times, reference over preset.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub total_designs: u64,
    pub selected_designs: usize,
    pub invalid_designs: usize,
    /// Rows solved by this run.
    pub executed: usize,
    /// Rows already present in the results file.
    pub skipped: usize,
    pub presets: Vec<PresetSummary>,
    pub discrepancies: Vec<PresetDiscrepancy>,
}

impl SweepSummary {
    pub fn preset(&self, name: &str) -> Option<&PresetSummary> {
        self.presets.iter().find(|p| p.preset == name)
    }

    pub fn converged_fraction(&self) -> f64 {
        let (ok, all) = self
            .presets
            .iter()
            .fold((0, 0), |(a, b), p| (a + p.converged, b + p.designs));
        if all == 0 {
            1.0
        } else {
            ok as f64 / all as f64
        }
    }
}

/// Progress of a running sweep.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
    pub elapsed_seconds: f64,
}

/// Runs a sweep into `out`, resuming from any rows already there.
pub fn run_sweep(spec: &SweepSpec, out: &Path) -> Result<SweepSummary> {
    run_sweep_with_progress(spec, out, &|_| {})
}

pub fn run_sweep_with_progress(
    spec: &SweepSpec,
    out: &Path,
    progress: &(dyn Fn(Progress) + Sync),
) -> Result<SweepSummary> {
    let listing = enumerate(spec)?;
    log::info!(
        "sweep: {} designs in the product, {} selected, {} invalid",
        listing.total,
        listing.points.len() + listing.invalid.len(),
        listing.invalid.len()
    );
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_sidecar(spec, &listing, out)?;

    let results_path = out.join(RESULTS_FILE);
    let existing = load_for_append(&results_path)?;
    let done: HashSet<(u64, String)> = existing.iter().map(|r| (r.id, r.preset.clone())).collect();
    let configs: Vec<(String, MeshConfig)> = spec
        .mesh
        .iter()
        .map(|m| Ok((m.clone(), MeshPreset::parse(m)?.config())))
        .collect::<Result<_>>()?;
    let work: Vec<(&SweepPoint, &(String, MeshConfig))> = listing
        .points
        .iter()
        .flat_map(|p| configs.iter().map(move |c| (p, c)))
        .filter(|(p, (name, _))| !done.contains(&(p.id, name.clone())))
        .collect();
    let skipped = listing.points.len() * configs.len() - work.len();
    log::info!(
        "sweep: {} runs to do, {skipped} already in {}",
        work.len(),
        results_path.display()
    );

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&results_path)
        .map_err(|e| Error::io(&results_path, e))?;
    let fresh = existing.is_empty() && file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    if fresh {
        writer.write_record(RESULTS_COLUMNS)?;
        writer.flush().map_err(|e| Error::io(&results_path, e))?;
    }
    let sink = Mutex::new((writer, 0usize));
    let start = Instant::now();
    let total = work.len();
    let job = || {
        work.par_iter()
            .try_for_each(|(point, (name, config))| -> Result<()> {
                let row = evaluate(point, name, config, spec);
                let mut guard = sink.lock().expect("results writer poisoned");
                guard.0.serialize(&row)?;
                guard.0.flush().map_err(|e| Error::io(&results_path, e))?;
                guard.1 += 1;
                progress(Progress {
                    done: guard.1,
                    total,
                    elapsed_seconds: start.elapsed().as_secs_f64(),
                });
                Ok(())
            })
    };
    match spec.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidSweep(format!("thread pool: {e}")))?
            .install(job)?,
        None => job()?,
    }
    drop(sink);

    let rows = read_results(&results_path)?;
    let mut summary = summarize(&rows, &spec.mesh);
    summary.total_designs = listing.total;
    summary.selected_designs = listing.points.len() + listing.invalid.len();
    summary.invalid_designs = listing.invalid.len();
    summary.executed = total;
    summary.skipped = skipped;
    let summary_path = out.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&summary).expect("summary serialises");
    fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}

fn write_sidecar(spec: &SweepSpec, listing: &Enumeration, out: &Path) -> Result<()> {
    let path = out.join(SPEC_FILE);
    if path.exists() {
        let old: SpecSidecar = crate::io::read_json(&path)?;
        // the worker count does not change results
        let same = SweepSpec {
            workers: spec.workers,
            ..old.spec.clone()
        } == *spec;
        if old.schema_version != RESULTS_SCHEMA_VERSION || !same {
            return Err(Error::InvalidSweep(format!(
                "{} belongs to a different sweep; use another output directory",
                out.display()
            )));
        }
        return Ok(());
    }
    let sidecar = SpecSidecar {
        schema_version: RESULTS_SCHEMA_VERSION,
        results_columns: RESULTS_COLUMNS.iter().map(|s| s.to_string()).collect(),
        total_designs: listing.total,
        selected_designs: listing.points.len() + listing.invalid.len(),
        spec: spec.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("spec serialises");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads existing rows before appending. A torn last line left by an
/// interrupted run is cut off.
fn load_for_append(path: &Path) -> Result<Vec<DesignResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let keep = match text.rfind('\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep < text.len() {
        log::warn!("dropping an incomplete last line of {}", path.display());
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&text.as_bytes()[..keep])
            .map_err(|e| Error::io(path, e))?;
    }
    if keep == 0 {
        return Ok(Vec::new());
    }
    read_results(path)
}

/// Reads a results file, checking its header against the current schema.
pub fn read_results(path: &Path) -> Result<Vec<DesignResult>> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULTS_COLUMNS.iter().copied()) {
        return Err(Error::InvalidSweep(format!(
            "{} does not have the version {RESULTS_SCHEMA_VERSION} results header",
            path.display()
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Per-preset statistics and discrepancies against the last preset in `order`.
pub fn summarize(rows: &[DesignResult], order: &[String]) -> SweepSummary {
    let mut presets = Vec::new();
    for name in order {
        let mine: Vec<&DesignResult> = rows.iter().filter(|r| &r.preset == name).collect();
        if mine.is_empty() {
            continue;
        }
        let torques: Vec<f64> = mine.iter().filter_map(|r| r.slip_torque).collect();
        let conv = torques.len();
        let total_seconds: f64 = mine.iter().map(|r| r.wall_seconds).sum();
        let fold_max = |f: fn(&DesignResult) -> Option<f64>| {
            mine.iter().filter_map(|r| f(r)).fold(f64::NAN, f64::max)
        };
        presets.push(PresetSummary {
            preset: name.clone(),
            designs: mine.len(),
            converged: conv,
            failed: mine.len() - conv,
            retried: mine.iter().filter(|r| r.retried).count(),
            min_torque_nm: torques.iter().copied().fold(f64::NAN, f64::min),
            max_torque_nm: torques.iter().copied().fold(f64::NAN, f64::max),
            mean_torque_nm: torques.iter().sum::<f64>() / conv.max(1) as f64,
            max_vtd: fold_max(|r| r.vtd),
            max_pm_vtd: fold_max(|r| r.pm_vtd),
            total_seconds,
            mean_seconds: total_seconds / mine.len() as f64,
            mean_iterations: mine.iter().map(|r| r.iterations_total as f64).sum::<f64>()
                / mine.len() as f64,
        });
    }
    let mut discrepancies = Vec::new();
    if let Some(reference) = order.last() {
        let by_id: std::collections::HashMap<u64, &DesignResult> = rows
            .iter()
            .filter(|r| &r.preset == reference && r.converged)
            .map(|r| (r.id, r))
            .collect();
        for name in &order[..order.len() - 1] {
            let pairs: Vec<(&DesignResult, &DesignResult)> = rows
                .iter()
                .filter(|r| &r.preset == name && r.converged)
                .filter_map(|r| by_id.get(&r.id).map(|&f| (r, f)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let pct: Vec<f64> = pairs
                .iter()
                .map(|(c, f)| 100.0 * (c.slip_torque.unwrap() / f.slip_torque.unwrap() - 1.0))
                .collect();
            let n = pairs.len() as f64;
            discrepancies.push(PresetDiscrepancy {
                preset: name.clone(),
                reference: reference.clone(),
                designs: pairs.len(),
                mean_abs_percent: pct.iter().map(|p| p.abs()).sum::<f64>() / n,
                min_percent: pct.iter().copied().fold(f64::INFINITY, f64::min),
                max_percent: pct.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                fraction_below: pct.iter().filter(|&&p| p < 0.0).count() as f64 / n,
                speedup: pairs.iter().map(|(_, f)| f.wall_seconds).sum::<f64>()
                    / pairs.iter().map(|(c, _)| c.wall_seconds).sum::<f64>(),
            });
        }
    }
    SweepSummary {
        total_designs: 0,
        selected_designs: 0,
        invalid_designs: 0,
        executed: 0,
        skipped: 0,
        presets,
        discrepancies,
    }
}

/// Best VTD and PM VTD over all converged designs sharing a preset, gear
/// ratio and value of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub preset: String,
    pub g_r: u32,
    pub parameter: String,
    pub value: f64,
    pub designs: usize,
    #[serde(rename = "max_vtd_Nm_per_m3")]
    pub max_vtd: f64,
    #[serde(rename = "max_pm_vtd_Nm_per_m3")]
    pub max_pm_vtd: f64,
}

pub fn trend_tables(rows: &[DesignResult], parameter: &str) -> Result<Vec<TrendRow>> {
    if !SweepParams::NAMES.contains(&parameter) {
        return Err(Error::UnknownParameter(format!(
            "{parameter} (expected one of {})",
            SweepParams::NAMES.join(", ")
        )));
    }
    let mut keyed: Vec<(&DesignResult, f64)> = rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| Ok((r, r.params().get(parameter)?)))
        .collect::<Result<_>>()?;
    keyed.sort_by(|(a, va), (b, vb)| {
        a.preset
            .cmp(&b.preset)
            .then(a.g_r.cmp(&b.g_r))
            .then(va.total_cmp(vb))
    });
    let mut out: Vec<TrendRow> = Vec::new();
    for (r, v) in keyed {
        let (vtd, pm_vtd) = (r.vtd.unwrap_or(f64::NAN), r.pm_vtd.unwrap_or(f64::NAN));
        match out.last_mut() {
            Some(t) if t.preset == r.preset && t.g_r == r.g_r && t.value == v => {
                t.designs += 1;
                t.max_vtd = t.max_vtd.max(vtd);
                t.max_pm_vtd = t.max_pm_vtd.max(pm_vtd);
            }
            _ => out.push(TrendRow {
                preset: r.preset.clone(),
                g_r: r.g_r,
                parameter: parameter.to_string(),
                value: v,
                designs: 1,
                max_vtd: vtd,
                max_pm_vtd: pm_vtd,
            }),
        }
    }
    Ok(out)
}

pub fn write_trends_csv(rows: &[TrendRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record([
        "preset",
        "g_r",
        "parameter",
        "value",
        "designs",
        "max_vtd_Nm_per_m3",
        "max_pm_vtd_Nm_per_m3",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
