use std::path::Path;
use std::process::{Command, Output};

use mgstab::netcase::{case_to_string, Branch, BranchStatus};
use mgstab::{cases, classify_stability, simulate, Scenario, SimConfig, StudyRow, Verdict};
use mgstab_cli::output::{read_column, study_csv, write_study_csv};
use tempfile::TempDir;

fn mgstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgstab")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn validate_bundled_case() {
    let o = mgstab(&["validate", "--case", "smib.case"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0 diagnostics\n");
}

#[test]
fn validate_reports_diagnostics() {
    let dir = TempDir::new().unwrap();
    let mut case = cases::bundled("smib").unwrap();
    case.branches.push(Branch {
        id: 9,
        from_bus: 2,
        to_bus: 99,
        r: 0.0,
        x: 0.1,
        b_shunt: 0.0,
        status: BranchStatus::Closed,
    });
    let file = path(&dir, "bad.case");
    std::fs::write(&file, case_to_string(&case)).unwrap();
    let o = mgstab(&["validate", "--case", &file]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("99"), "{}", stdout(&o));
    assert!(stderr(&o).contains("diagnostics"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let garbage = path(&dir, "garbage.case");
    std::fs::write(&garbage, "{ not json").unwrap();
    let runs: [&[&str]; 7] = [
        &["simulate", "--case", "micro4", "--bogus"],
        &["frobnicate"],
        &[],
        &["validate", "--case", "/no/such/file.case"],
        &["validate", "--case", &garbage],
        &["simulate", "--case", "micro4", "--fault-bus", "99"],
        &["simulate", "--case", "micro4", "--t-fault", "3", "--t-clear", "2"],
    ];
    for args in runs {
        let o = mgstab(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
    assert!(stderr(&mgstab(&["simulate", "--case", "micro4", "--bogus"])).contains("Usage"));
    let bad_layout = mgstab(&["compare", "--case", "micro4", "--central-bus", "6", "--layout", "4-8"]);
    assert_eq!(bad_layout.status.code(), Some(2));
    let unknown_bus = mgstab(&["compare", "--case", "micro4", "--central-bus", "6", "--layout", "40:8"]);
    assert_eq!(unknown_bus.status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    let o = mgstab(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("sweep-pv"));
}

#[test]
fn domain_failures_exit_1() {
    let dir = TempDir::new().unwrap();
    // Unstable at the first clearing instant.
    let below = mgstab(&["cct", "--case", "micro4", "--resolution", "0.5"]);
    assert_eq!(below.status.code(), Some(1), "{}", stderr(&below));
    assert!(stderr(&below).contains("CCT below"));
    // A vanishing fault never destabilises the machine.
    let horizon = mgstab(&["cct", "--case", "smib", "--fault-admittance", "0,-0.001", "--v-recover", "0"]);
    assert_eq!(horizon.status.code(), Some(1));
    assert!(stderr(&horizon).contains("not bracketed"));
    let bisect = mgstab(&["cct", "--case", "smib", "--fault-admittance", "0,-0.001", "--method", "bisect"]);
    assert_eq!(bisect.status.code(), Some(1));
    // Load far beyond what the network can carry.
    let mut case = cases::bundled("nine").unwrap();
    for l in &mut case.loads {
        l.p *= 20.0;
        l.q *= 20.0;
    }
    let file = path(&dir, "heavy.case");
    std::fs::write(&file, case_to_string(&case)).unwrap();
    let pf = mgstab(&["powerflow", "--case", &file]);
    assert_eq!(pf.status.code(), Some(1), "{}", stderr(&pf));
    let unwritable = mgstab(&["simulate", "--case", "smib", "--out", "/no/such/dir/ts.csv"]);
    assert_eq!(unwritable.status.code(), Some(1));
}

#[test]
fn thread_cap_from_environment() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_mgstab"))
            .args(["cct", "--case", "micro4"])
            .env("MGSTAB_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(run("many").status.code(), Some(2));
    let one = run("1");
    let auto = run("0");
    assert_eq!(one.status.code(), Some(0));
    assert_eq!(one.stdout, auto.stdout);
}

#[test]
fn three_step_run_gives_four_lines() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "ts.csv");
    let o = mgstab(&[
        "simulate", "--case", "smib", "--dt", "1", "--t-fault", "0", "--t-clear", "1", "--t-end", "2",
        "--t-settle", "0.5", "--out", &out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(!text.contains('\r'));
    assert!(text.starts_with("t_s,G1_delta_deg,G1_omega_dev,bus1_vm_pu,bus2_vm_pu,maxreldev_deg,fault_i_pu\n"));
}

/// Verdict from the CSV alone plus the inputs that produced it.
fn reclassify(csv: &str, t_clear: f64) -> Verdict {
    let case = cases::bundled("micro4").unwrap();
    let sc = Scenario::from_case(&case).unwrap().with_clearing(t_clear);
    let cfg = SimConfig::for_case(&case);
    // Shape and monitored set come from the inputs, series from the file.
    let mut r = simulate(&case, &sc, &cfg).unwrap();
    r.diverged_at = None;
    r.t = read_column(csv, "t_s").unwrap();
    r.max_rel_dev = read_column(csv, "maxreldev_deg").unwrap().iter().map(|d| d.to_radians()).collect();
    r.vm = r.bus_ids.iter().map(|b| read_column(csv, &format!("bus{b}_vm_pu")).unwrap()).collect();
    classify_stability(&r, &cfg)
}

#[test]
fn stored_series_reproduce_the_verdict() {
    let dir = TempDir::new().unwrap();
    for (t_clear, expect) in [("2.1", Verdict::Stable), ("2.5", Verdict::Unstable)] {
        let out = path(&dir, &format!("ts{t_clear}.csv"));
        let o = mgstab(&["simulate", "--case", "micro4", "--t-clear", t_clear, "--out", &out]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains(&format!(": {expect} (")), "{}", stdout(&o));
        let csv = std::fs::read_to_string(&out).unwrap();
        assert_eq!(reclassify(&csv, t_clear.parse().unwrap()), expect);
    }
}

#[test]
fn angle_column_is_in_degrees() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "ts.csv");
    assert_eq!(mgstab(&["simulate", "--case", "nine", "--out", &out]).status.code(), Some(0));
    let case = cases::bundled("nine").unwrap();
    let r = simulate(&case, &Scenario::from_case(&case).unwrap(), &SimConfig::for_case(&case)).unwrap();
    let csv = std::fs::read_to_string(&out).unwrap();
    let deg = read_column(&csv, "maxreldev_deg").unwrap();
    assert_eq!(deg.len(), r.len());
    for (d, rad) in deg.iter().zip(&r.max_rel_dev) {
        assert!((d - rad * 180.0 / std::f64::consts::PI).abs() <= 1e-9 * d.abs().max(1e-300));
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let runs: [&[&str]; 3] = [
        &["simulate", "--case", "micro4", "--t-clear", "2.3"],
        &["cct", "--case", "micro4", "--method", "bisect", "--resolution", "0.01"],
        &["compare", "--case", "micro4", "--central-bus", "6", "--layout", "4:8,5:8,6:8"],
    ];
    for args in runs {
        let files: Vec<Vec<u8>> = (0..2)
            .map(|k| {
                let out = path(&dir, &format!("{}-{k}.csv", args[0]));
                let o = mgstab(&[args, &["--out", &out]].concat());
                assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
                std::fs::read(&out).unwrap()
            })
            .collect();
        assert_eq!(files[0], files[1], "{args:?}");
    }
}

#[test]
fn cct_example_writes_trials() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "trials.csv");
    let report = path(&dir, "report.json");
    let o = mgstab(&[
        "cct", "--case", "micro4.case", "--fault-bus", "4", "--t-fault", "2.0", "--method", "bisect", "--resolution",
        "0.01", "--out", &out, "--report", &report,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("CCT 0.2300 s"), "{}", stdout(&o));
    let trials = std::fs::read_to_string(&out).unwrap();
    assert!(trials.starts_with("t_clear_s,verdict,max_rel_angle_dev_deg\n"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report["outcome"]["trials"].as_u64().unwrap() as usize, trials.lines().count() - 1);
    assert_eq!(report["outcome"]["cct_s"], serde_json::json!(0.23));
    assert_eq!(report["artifacts"].as_array().unwrap().len(), 2);
}

#[test]
fn study_csv_row_counts() {
    let dir = TempDir::new().unwrap();
    let row = StudyRow {
        label: "only".into(),
        result: None,
        peak_fault_current: Some(1.5),
        error: Some("none".into()),
    };
    assert_eq!(study_csv(std::slice::from_ref(&row)), "label,cct_s,peak_fault_current_pu\nonly,,1.500000000e0\n");
    assert!(write_study_csv(&[], Path::new(&path(&dir, "empty.csv"))).is_err());

    let cmp = path(&dir, "cmp.csv");
    let o = mgstab(&["compare", "--case", "micro4", "--central-bus", "6", "--layout", "4:8,5:8,6:8", "--out", &cmp]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&cmp).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["centralized", "distributed"]);

    let sweep = path(&dir, "sweep.csv");
    let o = mgstab(&["sweep-pv", "--case", "micro4", "--bus", "6", "--out", &sweep]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert_eq!(read_column(&text, "cct_s").unwrap().len(), 7);
}

#[test]
fn probe_lists_every_source() {
    let o = mgstab(&["probe-fault", "--case", "micro4", "--layout", "5:10,6:14"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("peak fault current"));
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("pv ")).count(), 2);
}
