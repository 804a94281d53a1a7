//! `mgstab` command-line front end.
//!
//! Exit codes: 0 success, 1 domain failure (diagnostics, non-convergence,
//! no CCT bracket, unwritable output), 2 usage or input error.

pub mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mgstab::cctstudy::{find_cct, with_pv_layout, SearchMethod};
use mgstab::netcase::{case_from_str, BranchId};
use mgstab::{
    cases, compare_topologies, fault_current_probe, load_case, run_powerflow, simulate, sweep_pv_share, BusId, Case,
    CaseError, CctOutcome, ElementRef, Scenario, SimConfig, SimError, StudyConfig, StudyError, StudyRow,
};
use serde_json::json;

use output::{trials_csv, write_study_csv, write_timeseries_csv, RunReport};

#[derive(Debug, Parser)]
#[command(name = "mgstab", version, about = "Transient stability and CCT studies for islanded microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a case file and list its diagnostics.
    Validate(CaseArgs),
    /// Solve the initial power flow.
    Powerflow {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        io: OutputArgs,
    },
    /// Run one fault scenario and classify it.
    Simulate {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        io: OutputArgs,
    },
    /// Search the critical clearing time.
    Cct {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        io: OutputArgs,
    },
    /// CCT and fault current against the share of one PV plant.
    SweepPv {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Bus hosting the plant.
        #[arg(long)]
        bus: BusId,
        /// Plant ratings, MW.
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20,25,30")]
        shares: Vec<f64>,
        #[command(flatten)]
        io: OutputArgs,
    },
    /// Centralized plant against a distributed layout of the same total.
    Compare {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Total PV rating, MW; defaults to the layout sum.
        #[arg(long)]
        total_mw: Option<f64>,
        #[arg(long)]
        central_bus: BusId,
        /// Distributed units as `bus:MW`, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_share, required = true)]
        layout: Vec<(BusId, f64)>,
        #[command(flatten)]
        io: OutputArgs,
    },
    /// Peak fault current and per-source contributions.
    ProbeFault {
        #[command(flatten)]
        case: CaseArgs,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Replace the case PV with units `bus:MW`, comma separated.
        #[arg(long, value_delimiter = ',', value_parser = parse_share)]
        layout: Vec<(BusId, f64)>,
        /// Probe time step, s.
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[command(flatten)]
        io: OutputArgs,
    },
}

#[derive(Debug, Args)]
struct CaseArgs {
    /// Case file, or the name of a bundled case (smib, micro4, nine).
    #[arg(long)]
    case: String,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long)]
    fault_bus: Option<BusId>,
    /// Fault shunt admittance `g,b`, pu.
    #[arg(long, value_parser = parse_admittance, allow_hyphen_values = true)]
    fault_admittance: Option<[f64; 2]>,
    #[arg(long)]
    t_fault: Option<f64>,
    #[arg(long)]
    t_clear: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Branches opened at fault inception.
    #[arg(long, value_delimiter = ',')]
    island_branches: Option<Vec<BranchId>>,
    /// Units tripped at fault inception, `gen:ID` or `pv:ID`.
    #[arg(long, value_delimiter = ',', value_parser = parse_trip)]
    trip: Vec<ElementRef>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// Integration step, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Relative rotor-angle limit, degrees.
    #[arg(long)]
    angle_limit: Option<f64>,
    /// Post-fault voltage floor, pu; 0 disables the voltage test.
    #[arg(long)]
    v_recover: Option<f64>,
    /// Length of the final voltage window, s.
    #[arg(long)]
    t_settle: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Sweep,
    Bisect,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long, value_enum, default_value_t = Method::Sweep)]
    method: Method,
    /// Clearing-time step of the search, s.
    #[arg(long, default_value_t = 0.1)]
    resolution: f64,
    /// Time step of the fault-current probe, s.
    #[arg(long, default_value_t = 1e-3)]
    probe_dt: f64,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON run report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_admittance(s: &str) -> Result<[f64; 2], String> {
    let (g, b) = s.split_once(',').ok_or("expected g,b")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok([num(g)?, num(b)?])
}

fn parse_share(s: &str) -> Result<(BusId, f64), String> {
    let (bus, mw) = s.split_once(':').ok_or("expected bus:MW")?;
    let bus = bus.trim().parse().map_err(|e| format!("bus {bus:?}: {e}"))?;
    let mw = mw.trim().parse().map_err(|e| format!("MW {mw:?}: {e}"))?;
    Ok((bus, mw))
}

fn parse_trip(s: &str) -> Result<ElementRef, String> {
    let (kind, id) = s.split_once(':').ok_or("expected gen:ID or pv:ID")?;
    let id = id.trim().parse().map_err(|e| format!("id {id:?}: {e}"))?;
    match kind.trim() {
        "gen" => Ok(ElementRef::Gen(id)),
        "pv" => Ok(ElementRef::Pv(id)),
        k => Err(format!("unknown unit kind {k:?}")),
    }
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn domain(message: impl ToString) -> Self {
        Self { code: 1, message: message.to_string() }
    }

    fn usage(message: impl ToString) -> Self {
        Self { code: 2, message: message.to_string() }
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        match e {
            CaseError::Io { .. } | CaseError::Parse(_) | CaseError::UnknownBus(_) | CaseError::UnknownBranch(_) => {
                Failure::usage(e)
            }
            e => Failure::domain(e),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Case(c) => c.into(),
            SimError::InvalidScenario(_) | SimError::InvalidConfig(_) => Failure::usage(e),
            e => Failure::domain(e),
        }
    }
}

impl From<StudyError> for Failure {
    fn from(e: StudyError) -> Self {
        match e {
            StudyError::Sim(s) => s.into(),
            StudyError::Layout(_) | StudyError::NoClearingInstant { .. } => Failure::usage(e),
            e => Failure::domain(e),
        }
    }
}

/// Runs one command line; `argv[0]` is the program name.
pub fn run_command(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = init_threads().and_then(|()| execute(cli.command));
    match result {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// `MGSTAB_THREADS` caps study parallelism; 0 or unset leaves it automatic.
fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("MGSTAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("MGSTAB_THREADS={v:?} is not a thread count")))?;
    // A pool built earlier in the same process stays in place.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn open_case(arg: &CaseArgs) -> Result<Case, CaseError> {
    let path = Path::new(&arg.case);
    if !path.exists() {
        if let Some(text) = cases::bundled_text(&arg.case) {
            return case_from_str(text);
        }
    }
    load_case(path)
}

/// Applies flags over the case defaults and builds the scenario.
fn build_scenario(case: &mut Case, a: &ScenarioArgs) -> Result<Scenario, Failure> {
    let d = case.scenario.get_or_insert_with(Default::default);
    if let Some(t) = a.t_fault {
        // Moving the fault keeps the case's fault duration.
        let duration = match (d.t_fault, d.t_clear) {
            (Some(f), Some(c)) => c - f,
            _ => 0.1,
        };
        d.t_fault = Some(t);
        d.t_clear = Some(t + duration);
    }
    if a.fault_bus.is_some() {
        d.fault_bus = a.fault_bus;
    }
    if a.fault_admittance.is_some() {
        d.fault_admittance = a.fault_admittance;
    }
    if a.t_clear.is_some() {
        d.t_clear = a.t_clear;
    }
    if a.t_end.is_some() {
        d.t_end = a.t_end;
    }
    if let Some(b) = &a.island_branches {
        d.island_branches = b.clone();
    }
    let mut sc = Scenario::from_case(case)?;
    sc.trip_elements = a.trip.clone();
    Ok(sc)
}

fn sim_config(case: &Case, a: &SimArgs) -> SimConfig {
    let mut c = SimConfig::for_case(case);
    if let Some(dt) = a.dt {
        c.dt = dt;
    }
    if let Some(deg) = a.angle_limit {
        c.angle_limit = deg.to_radians();
    }
    if let Some(v) = a.v_recover {
        c.v_recover = v;
    }
    if let Some(t) = a.t_settle {
        c.t_settle = t;
    }
    c
}

fn study_config(sim: SimConfig, a: &SearchArgs) -> StudyConfig {
    StudyConfig {
        sim,
        method: match a.method {
            Method::Sweep => SearchMethod::Sweep,
            Method::Bisect => SearchMethod::Bisect,
        },
        resolution: a.resolution,
        probe_dt: a.probe_dt,
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::domain(format!("cannot write {}: {e}", path.display())))
}

/// Writes the report when asked and lists it as an artifact of itself.
fn finish(mut report: RunReport, io: &OutputArgs, text: String) -> Result<String, Failure> {
    if let Some(p) = &io.report {
        report.artifacts.push(p.display().to_string());
        write_file(p, &report.to_json())?;
    }
    Ok(text)
}

fn execute(command: Command) -> Result<String, Failure> {
    match command {
        Command::Validate(c) => validate(&c),
        Command::Powerflow { case, io } => powerflow(&case, &io),
        Command::Simulate { case, scenario, sim, io } => run_simulate(&case, &scenario, &sim, &io),
        Command::Cct { case, scenario, sim, search, io } => cct(&case, &scenario, &sim, &search, &io),
        Command::SweepPv { case, scenario, sim, search, bus, shares, io } => {
            let mut c = open_case(&case)?;
            let sc = build_scenario(&mut c, &scenario)?;
            let study = study_config(sim_config(&c, &sim), &search);
            let rows = sweep_pv_share(&c, &sc, bus, &shares, &study)?;
            study_output("sweep-pv", &case, &sc, &study, &rows, &io)
        }
        Command::Compare { case, scenario, sim, search, total_mw, central_bus, layout, io } => {
            let mut c = open_case(&case)?;
            let sc = build_scenario(&mut c, &scenario)?;
            let study = study_config(sim_config(&c, &sim), &search);
            let total = total_mw.unwrap_or_else(|| layout.iter().map(|(_, mw)| mw).sum());
            let rows = compare_topologies(&c, &sc, total, central_bus, &layout, &study)?;
            study_output("compare", &case, &sc, &study, &rows, &io)
        }
        Command::ProbeFault { case, scenario, layout, dt, io } => probe(&case, &scenario, &layout, dt, &io),
    }
}

fn validate(arg: &CaseArgs) -> Result<String, Failure> {
    match open_case(arg) {
        Ok(_) => Ok("0 diagnostics\n".into()),
        Err(CaseError::Invalid(diags)) => {
            let mut text = String::new();
            for d in &diags {
                writeln!(text, "{d}").unwrap();
            }
            print!("{text}");
            Err(Failure::domain(format!("{} diagnostics", diags.len())))
        }
        Err(e) => Err(e.into()),
    }
}

fn powerflow(arg: &CaseArgs, io: &OutputArgs) -> Result<String, Failure> {
    let case = open_case(arg)?;
    let pf = run_powerflow(&case)?;
    let mut text = String::new();
    let mut csv = String::from("bus,vm_pu,va_deg\n");
    for (id, v) in pf.bus_ids.iter().zip(&pf.v) {
        writeln!(text, "bus {id}: {:.6} pu at {:.4} deg", v.norm(), v.arg().to_degrees()).unwrap();
        writeln!(csv, "{id},{:.9e},{:.9e}", v.norm(), v.arg().to_degrees()).unwrap();
    }
    for (g, s) in case.gens.iter().zip(&pf.gen_s) {
        writeln!(text, "gen {}: P {:.6} pu, Q {:.6} pu", g.name, s.re, s.im).unwrap();
    }
    writeln!(text, "converged in {} iterations, mismatch {:.3e} pu", pf.iterations, pf.max_mismatch).unwrap();
    let mut report = RunReport::new("powerflow", &arg.case);
    report.set("iterations", pf.iterations);
    report.set("max_mismatch", pf.max_mismatch);
    if let Some(p) = &io.out {
        write_file(p, &csv)?;
        report.artifacts.push(p.display().to_string());
    }
    finish(report, io, text)
}

fn run_simulate(arg: &CaseArgs, sa: &ScenarioArgs, sim: &SimArgs, io: &OutputArgs) -> Result<String, Failure> {
    let mut case = open_case(arg)?;
    let sc = build_scenario(&mut case, sa)?;
    let mut cfg = sim_config(&case, sim);
    if sa.t_end.is_none() {
        // A late clearing instant stretches the run so the voltage window
        // still follows it.
        cfg.t_end = cfg.t_end.max(sc.t_clear + cfg.t_settle + 1.0);
    }
    let r = simulate(&case, &sc, &cfg)?;
    let mut text = format!(
        "fault at bus {} from {:.4} s, cleared at {:.4} s: {} (max relative angle deviation {:.3} deg, peak fault current {:.4} pu)\n",
        sc.fault_bus,
        sc.t_fault,
        sc.t_clear,
        r.verdict,
        r.max_rel_angle_dev.to_degrees(),
        r.peak_fault_current
    );
    if let (Some(t), Some(why)) = (r.diverged_at, &r.collapse) {
        writeln!(text, "network collapsed at {t:.4} s: {why}").unwrap();
    }
    let mut report = RunReport::new("simulate", &arg.case);
    report.scenario = Some((&sc).into());
    report.config = Some((&cfg).into());
    report.set("verdict", r.verdict.to_string());
    report.set("max_rel_angle_dev_deg", r.max_rel_angle_dev.to_degrees());
    report.set("peak_fault_current_pu", r.peak_fault_current);
    report.set("diverged_at", r.diverged_at);
    report.set("samples", r.len());
    if let Some(p) = &io.out {
        write_timeseries_csv(&r, p).map_err(|e| Failure::domain(format!("cannot write {}: {e}", p.display())))?;
        report.artifacts.push(p.display().to_string());
    }
    finish(report, io, text)
}

fn cct(arg: &CaseArgs, sa: &ScenarioArgs, sim: &SimArgs, search: &SearchArgs, io: &OutputArgs) -> Result<String, Failure> {
    let mut case = open_case(arg)?;
    let sc = build_scenario(&mut case, sa)?;
    let study = study_config(sim_config(&case, sim), search);
    let r = find_cct(&case, &sc, &study)?;
    let mut report = RunReport::new("cct", &arg.case);
    report.scenario = Some((&sc).into());
    report.config = Some((&study.sim).into());
    report.set("method", format!("{:?}", search.method).to_lowercase());
    report.set("resolution", study.resolution);
    report.set("trials", r.trials.len());
    report.set("cct_s", r.cct());
    report.set("bracket", r.bracket.map(|(a, b)| json!([a, b])));
    if let Some(p) = &io.out {
        write_file(p, &trials_csv(&r))?;
        report.artifacts.push(p.display().to_string());
    }
    let text = match (r.outcome, r.bracket) {
        (CctOutcome::Found(c), Some((lo, hi))) => format!(
            "CCT {c:.4} s (stable at t_clear {lo:.4} s, unstable at {hi:.4} s, {} trials)\n",
            r.trials.len()
        ),
        (CctOutcome::BelowResolution, _) => {
            finish(report, io, String::new())?;
            return Err(Failure::domain(format!(
                "unstable already at the first clearing instant: CCT below {} s",
                r.resolution
            )));
        }
        _ => {
            finish(report, io, String::new())?;
            return Err(Failure::domain("no unstable clearing instant within the horizon: CCT not bracketed"));
        }
    };
    finish(report, io, text)
}

fn study_output(
    command: &str,
    arg: &CaseArgs,
    sc: &Scenario,
    study: &StudyConfig,
    rows: &[StudyRow],
    io: &OutputArgs,
) -> Result<String, Failure> {
    let mut text = String::new();
    let mut report = RunReport::new(command, &arg.case);
    report.scenario = Some(sc.into());
    report.config = Some((&study.sim).into());
    let mut summary = Vec::new();
    for r in rows {
        let cct = r.cct().map_or("-".to_string(), |c| format!("{c:.4} s"));
        let peak = r.peak_fault_current.map_or("-".to_string(), |p| format!("{p:.4} pu"));
        write!(text, "{}: CCT {cct}, peak fault current {peak}", r.label).unwrap();
        if let Some(e) = &r.error {
            write!(text, " ({e})").unwrap();
        }
        text.push('\n');
        summary.push(json!({
            "label": r.label,
            "cct_s": r.cct(),
            "peak_fault_current_pu": r.peak_fault_current,
            "error": r.error,
        }));
    }
    report.set("rows", summary);
    if let Some(p) = &io.out {
        write_study_csv(rows, p).map_err(|e| Failure::domain(format!("cannot write {}: {e}", p.display())))?;
        report.artifacts.push(p.display().to_string());
    }
    finish(report, io, text)
}

fn probe(
    arg: &CaseArgs,
    sa: &ScenarioArgs,
    layout: &[(BusId, f64)],
    dt: f64,
    io: &OutputArgs,
) -> Result<String, Failure> {
    let mut case = open_case(arg)?;
    let sc = build_scenario(&mut case, sa)?;
    if !layout.is_empty() {
        let template = case
            .pvs
            .first()
            .map(|u| u.params.clone())
            .ok_or_else(|| Failure::usage("case has no PV slot to use as template"))?;
        case = with_pv_layout(&case, &template, layout)?;
    }
    let p = fault_current_probe(&case, &sc, dt)?;
    let mut text = format!("peak fault current {:.6} pu at {:.4} s\n", p.peak, p.t_peak);
    let mut csv = String::from("source,current_pu\n");
    for (name, i) in &p.contributions {
        writeln!(text, "  {name}: {i:.6} pu").unwrap();
        writeln!(csv, "{name},{i:.9e}").unwrap();
    }
    let mut report = RunReport::new("probe-fault", &arg.case);
    report.scenario = Some((&sc).into());
    report.set("peak_fault_current_pu", p.peak);
    report.set("t_peak", p.t_peak);
    report.set(
        "contributions",
        p.contributions.iter().map(|(n, i)| json!({ "source": n, "current_pu": i })).collect::<Vec<_>>(),
    );
    if let Some(path) = &io.out {
        write_file(path, &csv)?;
        report.artifacts.push(path.display().to_string());
    }
    finish(report, io, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> ScenarioArgs {
        let argv = [&["mgstab", "simulate", "--case", "micro4"], extra].concat();
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Simulate { scenario, .. } => scenario,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_case_defaults() {
        let mut case = cases::bundled("micro4").unwrap();
        let sc = build_scenario(&mut case.clone(), &args(&[])).unwrap();
        assert_eq!((sc.fault_bus, sc.t_fault, sc.t_clear), (4, 2.0, 2.1));
        let sc = build_scenario(&mut case, &args(&["--fault-bus", "5", "--t-fault", "3", "--fault-admittance", "0,-50"]))
            .unwrap();
        assert_eq!(sc.fault_bus, 5);
        assert!((sc.t_clear - 3.1).abs() < 1e-12);
        assert_eq!(sc.fault_admittance, mgstab::Complex::new(0.0, -50.0));
        assert_eq!(sc.island_branches, vec![2]);
    }

    #[test]
    fn list_flags_parse() {
        assert_eq!(parse_share("4:8.5"), Ok((4, 8.5)));
        assert!(parse_share("4").is_err());
        assert_eq!(parse_trip("pv:3"), Ok(ElementRef::Pv(3)));
        assert!(parse_trip("load:3").is_err());
        assert_eq!(parse_admittance("1e6,-1e6"), Ok([1e6, -1e6]));
        let a = args(&["--island-branches", "1,2", "--trip", "gen:1,pv:2"]);
        assert_eq!(a.island_branches, Some(vec![1, 2]));
        assert_eq!(a.trip, vec![ElementRef::Gen(1), ElementRef::Pv(2)]);
    }
}
