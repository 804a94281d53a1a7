//! CSV artifacts and the JSON run report.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use mgstab::{CctResult, Scenario, SimConfig, SimResult, StudyRow};
use serde::Serialize;
use serde_json::{Map, Value};

/// Ten significant digits, `.` decimal point.
fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Header-safe form of an element name.
fn column(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub fn timeseries_csv(r: &SimResult) -> String {
    let mut out = String::from("t_s");
    for g in &r.gen_names {
        write!(out, ",{}_delta_deg", column(g)).unwrap();
    }
    for g in &r.gen_names {
        write!(out, ",{}_omega_dev", column(g)).unwrap();
    }
    for b in &r.bus_ids {
        write!(out, ",bus{b}_vm_pu").unwrap();
    }
    out.push_str(",maxreldev_deg,fault_i_pu\n");
    for k in 0..r.len() {
        out.push_str(&num(r.t[k]));
        for d in &r.delta {
            write!(out, ",{}", num(d[k].to_degrees())).unwrap();
        }
        for w in &r.omega_dev {
            write!(out, ",{}", num(w[k])).unwrap();
        }
        for v in &r.vm {
            write!(out, ",{}", num(v[k])).unwrap();
        }
        writeln!(out, ",{},{}", num(r.max_rel_dev[k].to_degrees()), num(r.fault_current[k])).unwrap();
    }
    out
}

pub fn write_timeseries_csv(r: &SimResult, path: &Path) -> io::Result<()> {
    std::fs::write(path, timeseries_csv(r))
}

pub fn study_csv(rows: &[StudyRow]) -> String {
    let mut out = String::from("label,cct_s,peak_fault_current_pu\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.label, opt(r.cct()), opt(r.peak_fault_current)).unwrap();
    }
    out
}

pub fn write_study_csv(rows: &[StudyRow], path: &Path) -> io::Result<()> {
    if rows.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no study rows to write"));
    }
    std::fs::write(path, study_csv(rows))
}

pub fn trials_csv(r: &CctResult) -> String {
    let mut out = String::from("t_clear_s,verdict,max_rel_angle_dev_deg\n");
    for t in &r.trials {
        writeln!(out, "{},{},{}", num(t.t_clear), t.verdict, num(t.max_rel_angle_dev.to_degrees())).unwrap();
    }
    out
}

/// Column of a time-series CSV by header name.
pub fn read_column(csv: &str, name: &str) -> Option<Vec<f64>> {
    let mut lines = csv.lines();
    let idx = lines.next()?.split(',').position(|h| h == name)?;
    lines.map(|l| l.split(',').nth(idx)?.parse().ok()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioEcho {
    pub fault_bus: u32,
    pub fault_admittance: [f64; 2],
    pub t_fault: f64,
    pub t_clear: f64,
    pub island_branches: Vec<u32>,
}

impl From<&Scenario> for ScenarioEcho {
    fn from(s: &Scenario) -> Self {
        Self {
            fault_bus: s.fault_bus,
            fault_admittance: [s.fault_admittance.re, s.fault_admittance.im],
            t_fault: s.t_fault,
            t_clear: s.t_clear,
            island_branches: s.island_branches.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub dt: f64,
    pub t_end: f64,
    pub angle_limit_deg: f64,
    pub v_recover: f64,
    pub t_settle: f64,
}

impl From<&SimConfig> for ConfigEcho {
    fn from(c: &SimConfig) -> Self {
        Self {
            dt: c.dt,
            t_end: c.t_end,
            angle_limit_deg: c.angle_limit.to_degrees(),
            v_recover: c.v_recover,
            t_settle: c.t_settle,
        }
    }
}

/// Inputs, outcome and written files of one command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub case: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ConfigEcho>,
    pub outcome: Map<String, Value>,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, case: &str) -> Self {
        Self {
            command: command.to_string(),
            case: case.to_string(),
            scenario: None,
            config: None,
            outcome: Map::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.outcome.insert(key.to_string(), value.into());
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}
