//! Network case description and the static network layer.
//!
//! A [`Case`] is immutable once loaded: every electrical quantity is on the
//! system MVA base and machine inertia has already been converted to that
//! base. Loads are held as P/Q demands here; the dynamic layer turns them
//! into constant admittances at the solved pre-fault voltage.

mod format;
mod kron;
mod powerflow;
mod validate;
mod ybus;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pvmodel::PvParams;

pub use format::{case_from_str, case_to_string, load_case, save_case};
pub use kron::{kron_reduce, kron_reduce_with_recovery, KronReduction};
pub use powerflow::{mismatch as powerflow_mismatch, run_powerflow, PowerflowSolution, PF_MAX_ITER, PF_TOLERANCE};
pub use validate::{validate_case, Diagnostic};
pub use ybus::{build_ybus, Node, TopologyOverlay, YbusMatrix};

pub type BusId = u32;
pub type BranchId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    PvGen,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    pub name: String,
    pub base_kv: f64,
    pub kind: BusKind,
    /// Voltage magnitude set-point for slack and `pv_gen` buses.
    #[serde(default = "unity")]
    pub v_set: f64,
}

fn unity() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchStatus {
    Closed,
    Open,
}

/// Pi-model branch; `b_shunt` is the total line charging split evenly
/// between both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: BranchId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "closed")]
    pub status: BranchStatus,
}

fn closed() -> BranchStatus {
    BranchStatus::Closed
}

impl Branch {
    pub fn series_admittance(&self) -> crate::Complex {
        crate::Complex::new(self.r, self.x).inv()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadModel {
    #[default]
    ConstantImpedance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticLoad {
    pub bus: BusId,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub representation: LoadModel,
}

/// Classical synchronous machine.
///
/// `h` is on the system base; `h_rated` keeps the value as given on the
/// machine's own rating so a case can be written back unchanged. A
/// negative `pm` models a synchronous motor.
#[derive(Debug, Clone, PartialEq)]
pub struct GenUnit {
    pub id: u32,
    pub name: String,
    pub bus: BusId,
    pub h: f64,
    pub h_rated: f64,
    pub d: f64,
    pub xdp: f64,
    pub s_rating: f64,
    pub pm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvUnit {
    pub id: u32,
    pub name: String,
    pub in_service: bool,
    pub params: PvParams,
}

/// Scenario defaults a case file may carry. Command-line flags take
/// precedence over these.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_bus: Option<BusId>,
    /// `[g, b]` of the fault shunt, per-unit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_admittance: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_fault: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_clear: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub island_branches: Vec<BranchId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub base_mva: f64,
    pub f_nom: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<StaticLoad>,
    pub gens: Vec<GenUnit>,
    pub pvs: Vec<PvUnit>,
    pub scenario: Option<ScenarioDefaults>,
}

impl Case {
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn bus_index_map(&self) -> HashMap<BusId, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn branch(&self, id: BranchId) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn active_pvs(&self) -> impl Iterator<Item = &PvUnit> {
        self.pvs.iter().filter(|p| p.in_service)
    }

    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.f_nom
    }

    pub fn total_load_p(&self) -> f64 {
        self.loads.iter().map(|l| l.p).sum()
    }

    /// Connected components over closed branches, as lists of bus indices.
    /// `extra_open` lists branches treated as open on top of their status.
    pub fn islands(&self, extra_open: &[BranchId]) -> Vec<Vec<usize>> {
        let n = self.buses.len();
        let idx = self.bus_index_map();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in &self.branches {
            if br.status == BranchStatus::Open || extra_open.contains(&br.id) {
                continue;
            }
            if let (Some(&a), Some(&b)) = (idx.get(&br.from_bus), idx.get(&br.to_bus)) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut root_slot: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            let slot = *root_slot.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            groups[slot].push(i);
        }
        groups
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read case file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed case file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("case failed validation: {}", DiagnosticList(.0))]
    Invalid(Vec<Diagnostic>),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("unknown branch {0}")]
    UnknownBranch(BranchId),
    #[error("bus {0} is isolated: no closed branch, shunt or source attached")]
    IsolatedNode(BusId),
    #[error("power flow did not converge in {iterations} iterations (max mismatch {mismatch:.3e} pu)")]
    NotConverged { iterations: usize, mismatch: f64 },
    #[error("PV unit: {0}")]
    Pv(#[from] crate::pvmodel::PvError),
    #[error("Kron reduction failed: eliminated block is singular over nodes [{}]", .nodes.join(", "))]
    SingularReduction { nodes: Vec<String> },
}

struct DiagnosticList<'a>(&'a [Diagnostic]);

impl fmt::Display for DiagnosticList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}
