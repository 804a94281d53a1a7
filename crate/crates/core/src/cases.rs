//! Cases shipped with the crate and a builder for single-machine
//! infinite-bus studies.

use crate::netcase::{
    case_from_str, Branch, BranchStatus, Bus, BusKind, Case, CaseError, GenUnit, ScenarioDefaults,
};
use crate::Complex;

/// Names accepted by [`bundled`].
pub const BUNDLED: [&str; 3] = ["smib", "micro4", "nine"];

pub fn bundled(name: &str) -> Result<Case, CaseError> {
    case_from_str(bundled_text(name).ok_or_else(|| unknown(name))?)
}

/// Raw JSON of a bundled case.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    match name.trim_end_matches(".case") {
        "smib" => Some(include_str!("../cases/smib.case")),
        "micro4" => Some(include_str!("../cases/micro4.case")),
        "nine" => Some(include_str!("../cases/nine.case")),
        _ => None,
    }
}

fn unknown(name: &str) -> CaseError {
    CaseError::Io {
        path: name.to_string(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, "no bundled case with this name"),
    }
}

/// Transient reactance of the machine in [`smib`], pu.
pub const SMIB_XDP: f64 = 0.2;
/// Line reactance between terminal and infinite bus in [`smib`], pu.
pub const SMIB_XLINE: f64 = 0.3;

/// Lossless single machine against an infinite bus at 1∠0.
///
/// Bus 1 is the infinite bus, bus 2 the machine terminal. The terminal
/// set-point is chosen so the internal EMF gives a power-angle amplitude of
/// exactly `pmax` (identical before and after a terminal fault). Inertia is
/// on the 100 MVA system base.
pub fn smib(h: f64, pm: f64, pmax: f64) -> Case {
    let x = SMIB_XDP + SMIB_XLINE;
    let emf = pmax * x;
    let delta = (pm / pmax).asin();
    let v_t = (Complex::from_polar(emf * SMIB_XLINE, delta) + SMIB_XDP) / x;
    Case {
        base_mva: 100.0,
        f_nom: 60.0,
        buses: vec![
            Bus {
                id: 1,
                name: "infinite".into(),
                base_kv: 230.0,
                kind: BusKind::Slack,
                v_set: 1.0,
            },
            Bus {
                id: 2,
                name: "terminal".into(),
                base_kv: 230.0,
                kind: BusKind::PvGen,
                v_set: v_t.norm(),
            },
        ],
        branches: vec![Branch {
            id: 1,
            from_bus: 2,
            to_bus: 1,
            r: 0.0,
            x: SMIB_XLINE,
            b_shunt: 0.0,
            status: BranchStatus::Closed,
        }],
        loads: vec![],
        gens: vec![GenUnit {
            id: 1,
            name: "G1".into(),
            bus: 2,
            h,
            h_rated: h,
            d: 0.0,
            xdp: SMIB_XDP,
            s_rating: 100.0,
            pm,
        }],
        pvs: vec![],
        scenario: Some(ScenarioDefaults {
            fault_bus: Some(2),
            fault_admittance: None,
            t_fault: Some(1.0),
            t_clear: Some(1.1),
            t_end: Some(6.0),
            island_branches: vec![],
        }),
    }
}
