//! `gearmec` command-line front end.
//!
//! Inputs use millimetres and degrees, outputs SI units with the unit in each
//! column or field name. Exit codes: 0 success, 2 input error, 3 convergence
//! failure, 4 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gearmec::geometry::{derive_geometry, Gap, GearDesign};
use gearmec::io::{read_design, read_json, DesignFile};
use gearmec::mesh::{build_mesh, MeshCounts, MeshPreset};
use gearmec::postproc::{
    airgap_profile, flux_densities, torque_report, write_profile_csv, PreparedDesign, SlipOptions,
    SlipResult, TorqueReport,
};
use gearmec::solver::SolveOptions;
use gearmec::sweep::{self, Progress, SweepSpec};
use gearmec::Error;

#[derive(Parser, Debug)]
#[command(
    name = "gearmec",
    version,
    about = "Nonlinear magnetic equivalent circuit solver for radial-flux magnetic gears"
)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one design at fixed rotor angles and export torques, profiles and the trace.
    Analyze(AnalyzeArgs),
    /// Search the slip torque of one design.
    Slip(SlipArgs),
    /// Run or resume a parametric sweep.
    Sweep(SweepArgs),
    /// Best VTD and PM VTD per value of one swept parameter.
    Trends(TrendsArgs),
    /// Write the node cells of a design as CSV.
    DumpMesh(DumpArgs),
    /// Write the linear-start mesh-flux system as Matrix Market plus a CSV right-hand side.
    DumpMatrix(DumpArgs),
}

#[derive(Args, Debug, Clone)]
struct DesignArgs {
    /// Design file (JSON, mm and degrees).
    #[arg(long)]
    design: PathBuf,
    /// Mesh preset: coarse, fine or custom:<file>.
    #[arg(long, default_value = "fine")]
    mesh: String,
    /// Rotor angles theta1,theta2,theta3 in degrees (`--angles=-5,0,0` for a
    /// negative first angle); overrides the design file.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    angles: Option<Vec<f64>>,
    /// Stack length in mm; overrides the design file.
    #[arg(long)]
    stack_length: Option<f64>,
    /// Solver options (JSON).
    #[arg(long)]
    solver: Option<PathBuf>,
    /// Keep the initial permeability fixed (one linear solve).
    #[arg(long)]
    frozen_linear: bool,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: DesignArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also search the slip torque.
    #[arg(long)]
    slip: bool,
}

#[derive(Args, Debug)]
struct SlipArgs {
    #[command(flatten)]
    input: DesignArgs,
    /// Rotor 1 angles sampled over half an electrical period.
    #[arg(long, default_value_t = 9)]
    samples: usize,
    /// Golden-section refinement solves.
    #[arg(long, default_value_t = 3)]
    refinements: usize,
    /// Output directory for slip.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Sweep spec (JSON). Defaults to the standard design ranges.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory; rerunning resumes.
    #[arg(long)]
    out: PathBuf,
    /// Mesh presets, comma separated; overrides the spec.
    #[arg(long, value_delimiter = ',')]
    mesh: Option<Vec<String>>,
    /// Number of designs to draw from the product; overrides the spec.
    #[arg(long)]
    subsample: Option<usize>,
    /// Subsample seed; overrides the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Stack length in mm; overrides the spec.
    #[arg(long)]
    stack_length: Option<f64>,
    /// Only print the number of designs.
    #[arg(long)]
    count_only: bool,
}

#[derive(Args, Debug)]
struct TrendsArgs {
    /// Sweep directory or results CSV.
    #[arg(long)]
    results: PathBuf,
    /// Parameter to group by (g_r, p1, r_o, k_bi1, t_pm1, t_ag, t_mods, t_brg, k_pm, t_bi3).
    #[arg(long)]
    key: String,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    input: DesignArgs,
    /// Output file (dump-mesh) or directory (dump-matrix).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        [
            log::LevelFilter::Warn,
            log::LevelFilter::Info,
            log::LevelFilter::Debug,
        ][cli.verbose.min(2) as usize]
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(trace) = e.trace() {
                eprintln!("iteration trace:");
                for r in trace.records() {
                    eprintln!(
                        "  iter {:>3}  T3 {:>14.6e} Nm  rms {:>12.4e} A  halvings {}",
                        r.iter, r.torque, r.rms_residual, r.halvings
                    );
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_io() {
        4
    } else if e.is_convergence_failure() {
        3
    } else {
        2
    }
}

fn run(cli: Cli) -> gearmec::Result<()> {
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Slip(a) => slip(a),
        Command::Sweep(a) => run_sweep(a, cli.threads),
        Command::Trends(a) => trends(a),
        Command::DumpMesh(a) => dump_mesh(a),
        Command::DumpMatrix(a) => dump_matrix(a),
    }
}

struct Loaded {
    design: GearDesign,
    preset: MeshPreset,
    options: SolveOptions,
}

fn require_file(path: &Path) -> gearmec::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no such file".into(),
        })
    }
}

fn load(args: &DesignArgs) -> gearmec::Result<Loaded> {
    require_file(&args.design)?;
    let mut design = read_design(&args.design)?;
    if let Some(a) = &args.angles {
        if a.len() != 3 {
            return Err(Error::InvalidDesign(format!(
                "--angles takes theta1,theta2,theta3, got {} value(s)",
                a.len()
            )));
        }
        design.theta1 = a[0].to_radians();
        design.theta2 = a[1].to_radians();
        design.theta3 = a[2].to_radians();
    }
    if let Some(l) = args.stack_length {
        design.stack_length = l;
    }
    design.validate()?;
    let preset = MeshPreset::parse(&args.mesh)?;
    let mut options: SolveOptions = match &args.solver {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => SolveOptions::default(),
    };
    if args.frozen_linear {
        options.frozen_linear = true;
    }
    options.validate()?;
    Ok(Loaded {
        design,
        preset,
        options,
    })
}

fn create_dir(path: &Path) -> gearmec::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> gearmec::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("output serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AnalyzeResult {
    design: DesignFile,
    mesh: String,
    mesh_counts: MeshCounts,
    symmetry: u32,
    angles_deg: [f64; 3],
    converged: bool,
    iterations: usize,
    solve_seconds: f64,
    torque: TorqueReport,
    #[serde(rename = "torque_rotor3_kNm_per_m")]
    torque_rotor3_knm_per_m: f64,
    slip: Option<SlipSummary>,
}

#[derive(Serialize)]
struct SlipSummary {
    #[serde(rename = "slip_torque_Nm")]
    slip_torque: f64,
    #[serde(rename = "slip_torque_kNm_per_m")]
    slip_torque_knm_per_m: f64,
    angle_deg: f64,
    #[serde(rename = "torque_rotor1_Nm")]
    torque_rotor1: f64,
    solves: usize,
    iterations_total: usize,
    iterations_max: usize,
    samples: Vec<SlipSampleOut>,
}

#[derive(Serialize)]
struct SlipSampleOut {
    theta1_deg: f64,
    #[serde(rename = "torque_rotor1_Nm")]
    torque_rotor1: f64,
    #[serde(rename = "torque_rotor3_Nm")]
    torque_rotor3: f64,
    iterations: usize,
    seconds: f64,
}

impl SlipSummary {
    fn new(r: &SlipResult, design: &GearDesign) -> Self {
        SlipSummary {
            slip_torque: r.slip_torque,
            slip_torque_knm_per_m: r.slip_torque / design.stack_length,
            angle_deg: r.angle.to_degrees(),
            torque_rotor1: r.torque_rotor1,
            solves: r.samples.len(),
            iterations_total: r.total_iterations(),
            iterations_max: r.max_iterations(),
            samples: r
                .samples
                .iter()
                .map(|s| SlipSampleOut {
                    theta1_deg: s.theta1.to_degrees(),
                    torque_rotor1: s.torque_rotor1,
                    torque_rotor3: s.torque_rotor3,
                    iterations: s.iterations,
                    seconds: s.seconds,
                })
                .collect(),
        }
    }
}

fn analyze(args: AnalyzeArgs) -> gearmec::Result<()> {
    let l = load(&args.input)?;
    create_dir(&args.out)?;
    let prepared = PreparedDesign::new(&l.design, &l.preset.config(), &l.options)?;
    let trace_path = args.out.join("trace.csv");
    let (mesh, sol) = match prepared.solve() {
        Ok(s) => s,
        Err(e) => {
            if let Some(t) = e.trace() {
                t.write_csv(&trace_path)?;
            }
            return Err(e);
        }
    };
    sol.trace.write_csv(&trace_path)?;
    let field = flux_densities(&mesh, &sol.phi);
    write_profile_csv(
        &airgap_profile(&field, Gap::Inner)?,
        args.out.join("profile_inner_gap.csv"),
    )?;
    write_profile_csv(
        &airgap_profile(&field, Gap::Outer)?,
        args.out.join("profile_outer_gap.csv"),
    )?;
    let torque = torque_report(&field, &l.design)?;
    let slip = if args.slip {
        let r = prepared.slip_torque(&SlipOptions::default())?;
        Some(SlipSummary::new(&r, &l.design))
    } else {
        None
    };
    let d = &l.design;
    let result = AnalyzeResult {
        design: DesignFile::from_design(d),
        mesh: l.preset.name().to_string(),
        mesh_counts: mesh.counts(),
        symmetry: prepared.derived.symmetry,
        angles_deg: [
            d.theta1.to_degrees(),
            d.theta2.to_degrees(),
            d.theta3.to_degrees(),
        ],
        converged: true,
        iterations: sol.trace.iterations.len(),
        solve_seconds: sol.trace.total_seconds(),
        torque,
        torque_rotor3_knm_per_m: torque.torque_rotor3 / d.stack_length,
        slip,
    };
    write_json(&result, &args.out.join("result.json"))?;
    println!(
        "T1 = {:.3} Nm, T3 = {:.3} Nm ({:.4} kNm per m of stack), {} iterations, {:.2} s",
        torque.torque_rotor1,
        torque.torque_rotor3,
        result.torque_rotor3_knm_per_m,
        result.iterations,
        result.solve_seconds
    );
    if let Some(s) = &result.slip {
        println!(
            "slip torque {:.3} Nm at theta1 = {:.4} deg",
            s.slip_torque, s.angle_deg
        );
    }
    Ok(())
}

fn slip(args: SlipArgs) -> gearmec::Result<()> {
    let l = load(&args.input)?;
    let prepared = PreparedDesign::new(&l.design, &l.preset.config(), &l.options)?;
    let opts = SlipOptions {
        samples: args.samples.max(1),
        refinements: args.refinements,
        ..SlipOptions::default()
    };
    let r = prepared.slip_torque(&opts)?;
    let summary = SlipSummary::new(&r, &l.design);
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&summary, &out.join("slip.json"))?;
    }
    println!(
        "slip torque {:.3} Nm ({:.4} kNm per m of stack) at theta1 = {:.4} deg, {} solves",
        summary.slip_torque, summary.slip_torque_knm_per_m, summary.angle_deg, summary.solves
    );
    Ok(())
}

fn run_sweep(args: SweepArgs, threads: Option<usize>) -> gearmec::Result<()> {
    let mut spec: SweepSpec = match &args.spec {
        Some(p) => {
            require_file(p)?;
            read_json(p)?
        }
        None => SweepSpec::standard_ranges(),
    };
    if let Some(m) = args.mesh {
        spec.mesh = m;
    }
    if args.subsample.is_some() {
        spec.subsample = args.subsample;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(l) = args.stack_length {
        spec.stack_length = l;
    }
    if threads.is_some() {
        spec.workers = threads;
    }
    spec.validate()?;
    let selected = spec.selected_ids().len();
    println!(
        "{} designs in the product, {selected} selected, {} mesh preset(s)",
        spec.count(),
        spec.mesh.len()
    );
    if args.count_only {
        return Ok(());
    }
    let start = Instant::now();
    let report = |p: Progress| {
        let step = (p.total / 20).max(1);
        if p.done.is_multiple_of(step) || p.done == p.total {
            eprintln!(
                "{}/{} runs, {:.2} runs/s",
                p.done,
                p.total,
                p.done as f64 / p.elapsed_seconds.max(1e-9)
            );
        }
    };
    let summary = sweep::run_sweep_with_progress(&spec, &args.out, &report)?;
    println!(
        "ran {} runs, skipped {} already complete, {:.1} s",
        summary.executed,
        summary.skipped,
        start.elapsed().as_secs_f64()
    );
    for p in &summary.presets {
        println!(
            "{}: {} designs, {} converged, torque {:.1}..{:.1} Nm (mean {:.1}), mean {:.3} s per design",
            p.preset, p.designs, p.converged, p.min_torque_nm, p.max_torque_nm, p.mean_torque_nm, p.mean_seconds
        );
    }
    for d in &summary.discrepancies {
        println!(
            "{} vs {}: mean |discrepancy| {:.2}%, range {:.2}%..{:.2}%, {:.1}% below, {:.1}x faster",
            d.preset,
            d.reference,
            d.mean_abs_percent,
            d.min_percent,
            d.max_percent,
            100.0 * d.fraction_below,
            d.speedup
        );
    }
    Ok(())
}

fn trends(args: TrendsArgs) -> gearmec::Result<()> {
    let path = if args.results.is_dir() {
        args.results.join(sweep::RESULTS_FILE)
    } else {
        args.results.clone()
    };
    require_file(&path)?;
    let rows = sweep::read_results(&path)?;
    let table = sweep::trend_tables(&rows, &args.key)?;
    match &args.out {
        Some(out) => sweep::write_trends_csv(&table, out)?,
        None => {
            println!("preset,g_r,parameter,value,designs,max_vtd_Nm_per_m3,max_pm_vtd_Nm_per_m3");
            for t in &table {
                println!(
                    "{},{},{},{},{},{},{}",
                    t.preset, t.g_r, t.parameter, t.value, t.designs, t.max_vtd, t.max_pm_vtd
                );
            }
        }
    }
    Ok(())
}

fn dump_mesh(args: DumpArgs) -> gearmec::Result<()> {
    let l = load(&args.input)?;
    let derived = derive_geometry(&l.design)?;
    let mesh = build_mesh(&l.design, &derived, &l.preset.config())?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    mesh.write_csv(&args.out)?;
    let c = mesh.counts();
    println!(
        "{} radial x {} angular layers, {} cells, {} loops",
        c.radial_layers, c.angular_layers, c.cells, c.loops
    );
    Ok(())
}

fn dump_matrix(args: DumpArgs) -> gearmec::Result<()> {
    let l = load(&args.input)?;
    let prepared = PreparedDesign::new(&l.design, &l.preset.config(), &l.options)?;
    let d = &l.design;
    let mesh = prepared.mesh_at(d.theta1, d.theta2, d.theta3)?;
    let sys = prepared.solver().assemble(&mesh, None);
    create_dir(&args.out)?;
    sys.write_dump(args.out.join("matrix.mtx"), args.out.join("rhs.csv"))?;
    println!(
        "{} unknowns, {} stored entries, symmetry {}",
        sys.dim(),
        sys.r_app.values().len(),
        prepared.derived.symmetry
    );
    Ok(())
}
