use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
    "name": "small", "p1": 2, "p3": 9, "r_o": 60,
    "t_bi1": 8, "t_pm1": 4, "t_ag1": 1, "t_mods": 6, "t_brg": 0.5,
    "t_ag2": 1, "t_pm3": 4, "t_bi3": 8, "stack_length": 50, "theta1_deg": 20
}"#;

const TINY_SPEC: &str = r#"{
    "p1_by_g_r": [{"g_r": 5, "p1": [2, 3]}],
    "r_o": [60], "k_bi1": [0.5], "t_pm1": [4, 6], "t_ag": [1],
    "t_mods": [6], "t_brg": [0.5, 1.0], "k_pm": [1], "t_bi3": [8],
    "mesh": ["coarse"], "stack_length": 50,
    "slip": {"samples": 2, "refinements": 0, "interpolate": true, "parallel": false}
}"#;

fn gearmec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gearmec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn analyze_writes_result_profiles_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.json", SMALL);
    let out = dir.path().join("out");
    let o = gearmec(&[
        "analyze",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["converged"], true);
    let t1 = result["torque"]["torque_rotor1"].as_f64().unwrap();
    let t3 = result["torque"]["torque_rotor3"].as_f64().unwrap();
    let t2 = result["torque"]["torque_modulators"].as_f64().unwrap();
    assert!(t3.abs() > 1.0);
    assert!((t1 + t2 + t3).abs() <= 1e-9 * t3.abs());
    assert_eq!(
        first_line(&out.join("trace.csv")),
        "iter,torque_Nm,rms_residual_A,cumulative_seconds,halvings"
    );
    for gap in ["profile_inner_gap.csv", "profile_outer_gap.csv"] {
        assert_eq!(first_line(&out.join(gap)), "theta_deg,B_rad_T,B_tan_T");
        let rows = fs::read_to_string(out.join(gap)).unwrap().lines().count() - 1;
        assert_eq!(
            rows as u64,
            result["mesh_counts"]["angular_layers"].as_u64().unwrap()
        );
    }
}

#[test]
fn angles_and_stack_length_flags() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.json", SMALL);
    let run = |extra: &[&str], name: &str| -> serde_json::Value {
        let out = dir.path().join(name);
        let mut args = vec![
            "analyze",
            "--design",
            &design,
            "--mesh",
            "coarse",
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let o = gearmec(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap()
    };
    let base = run(&[], "a");
    let longer = run(&["--stack-length", "100"], "b");
    let ratio = longer["torque"]["torque_rotor3"].as_f64().unwrap()
        / base["torque"]["torque_rotor3"].as_f64().unwrap();
    assert!((ratio - 2.0).abs() < 1e-9, "{ratio}");
    let moved = run(&["--angles=-5,0,1.5"], "c");
    assert_eq!(moved["angles_deg"][0], -5.0);
    assert!((moved["angles_deg"][2].as_f64().unwrap() - 1.5).abs() < 1e-12);
    let o = gearmec(&[
        "analyze",
        "--design",
        &design,
        "--angles",
        "1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_remanence_gives_zero_torque_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(
        dir.path(),
        "d.json",
        &SMALL.replace("\"name\": \"small\"", "\"name\": \"off\", \"b_r\": 0"),
    );
    let out = dir.path().join("out");
    let o = gearmec(&[
        "analyze",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["torque"]["torque_rotor3"].as_f64().unwrap(), 0.0);
    assert_eq!(result["iterations"], 1);
}

#[test]
fn input_errors_exit_2_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        &SMALL.replace("\"t_pm1\": 4", "\"t_pm1\": \"four\""),
    );
    let o = gearmec(&[
        "analyze",
        "--design",
        &bad,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t_pm1"), "{}", stderr(&o));

    let missing = dir.path().join("missing.json");
    let o = gearmec(&[
        "analyze",
        "--design",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let good = write(dir.path(), "d.json", SMALL);
    let o = gearmec(&[
        "analyze",
        "--design",
        &good,
        "--mesh",
        "medium",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convergence_failure_exits_3_and_prints_trace() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.json", SMALL);
    let solver = write(
        dir.path(),
        "s.json",
        r#"{"max_iters": 1, "torque_tol": 1e-12}"#,
    );
    let o = gearmec(&[
        "analyze",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--solver",
        &solver,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration trace"));
    assert!(dir.path().join("o/trace.csv").exists());
}

#[test]
fn slip_command() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.json", SMALL);
    let out = dir.path().join("s");
    let o = gearmec(&[
        "--threads",
        "1",
        "slip",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--samples",
        "4",
        "--refinements",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let slip: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("slip.json")).unwrap()).unwrap();
    assert_eq!(slip["solves"], 5);
    let best = slip["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["torque_rotor3_Nm"].as_f64().unwrap().abs())
        .fold(0.0, f64::max);
    assert_eq!(slip["slip_torque_Nm"].as_f64().unwrap(), best);
}

#[test]
fn sweep_resume_and_trends() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", TINY_SPEC);
    let out = dir.path().join("sweep");
    let o = gearmec(&[
        "--threads",
        "1",
        "sweep",
        "--spec",
        &spec,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("8 designs in the product"));
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("id,preset,g_r,p1,p3,r_o_mm,"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("spec.json")).unwrap()).unwrap();
    assert_eq!(sidecar["schema_version"], 1);

    let again = gearmec(&["sweep", "--spec", &spec, "--out", out.to_str().unwrap()]);
    assert!(again.status.success());
    assert!(
        stdout(&again).contains("ran 0 runs, skipped 8"),
        "{}",
        stdout(&again)
    );

    // hand grouping of the results file
    let mut reader = text.lines();
    let header: Vec<&str> = reader.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let mut expect: BTreeMap<u32, (usize, f64, f64)> = BTreeMap::new();
    for line in reader {
        let f: Vec<&str> = line.split(',').collect();
        let p1: u32 = f[col("p1")].parse().unwrap();
        let vtd: f64 = f[col("vtd_Nm_per_m3")].parse().unwrap();
        let pm: f64 = f[col("pm_vtd_Nm_per_m3")].parse().unwrap();
        let e = expect.entry(p1).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 = e.1.max(vtd);
        e.2 = e.2.max(pm);
    }
    let trends = dir.path().join("p1.csv");
    let o = gearmec(&[
        "trends",
        "--results",
        out.to_str().unwrap(),
        "--key",
        "p1",
        "--out",
        trends.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&trends).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "preset,g_r,parameter,value,designs,max_vtd_Nm_per_m3,max_pm_vtd_Nm_per_m3"
    );
    let got: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(got.len(), expect.len());
    for (row, (p1, (n, vtd, pm))) in got.iter().zip(&expect) {
        assert_eq!(row[3].parse::<f64>().unwrap(), *p1 as f64);
        assert_eq!(row[4].parse::<usize>().unwrap(), *n);
        assert_eq!(row[5].parse::<f64>().unwrap(), *vtd);
        assert_eq!(row[6].parse::<f64>().unwrap(), *pm);
    }

    let o = gearmec(&[
        "trends",
        "--results",
        out.to_str().unwrap(),
        "--key",
        "colour",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_count_only_reports_table_size() {
    let dir = tempfile::tempdir().unwrap();
    let o = gearmec(&[
        "sweep",
        "--out",
        dir.path().to_str().unwrap(),
        "--count-only",
    ]);
    assert!(o.status.success());
    assert!(
        stdout(&o).contains("139968 designs in the product"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn dumps() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(dir.path(), "d.json", SMALL);
    let cells = dir.path().join("mesh/cells.csv");
    let o = gearmec(&[
        "dump-mesh",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--out",
        cells.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        first_line(&cells),
        "ring,index,r_center_m,theta_deg,region,material,mmf_A"
    );

    let m = dir.path().join("matrix");
    let o = gearmec(&[
        "dump-matrix",
        "--design",
        &design,
        "--mesh",
        "coarse",
        "--out",
        m.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(first_line(&m.join("matrix.mtx")).starts_with("%%MatrixMarket matrix coordinate real"));
    assert!(m.join("rhs.csv").exists());
}
