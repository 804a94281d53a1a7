//! JSON case file format.
//!
//! Top-level keys: `base_mva`, `f_nom`, `buses`, `branches`, `loads`,
//! `gens`, `pvs` and an optional `scenario` block. Unknown keys are
//! rejected. Generator inertia `h` is given on the machine rating
//! `s_rating`; every other electrical quantity is per-unit on `base_mva`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    validate_case, Branch, Bus, BusId, Case, CaseError, GenUnit, PvUnit, ScenarioDefaults,
    StaticLoad,
};
use crate::pvmodel::PvParams;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    base_mva: f64,
    f_nom: f64,
    buses: Vec<Bus>,
    #[serde(default)]
    branches: Vec<Branch>,
    #[serde(default)]
    loads: Vec<StaticLoad>,
    #[serde(default)]
    gens: Vec<GenRecord>,
    #[serde(default)]
    pvs: Vec<PvRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<ScenarioDefaults>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenRecord {
    id: u32,
    #[serde(default)]
    name: String,
    bus: BusId,
    /// Inertia constant on `s_rating`, s.
    h: f64,
    #[serde(default)]
    d: f64,
    xdp: f64,
    s_rating: f64,
    /// Active dispatch, pu. Overwritten by the power flow at slack buses.
    #[serde(default)]
    pm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PvRecord {
    id: u32,
    #[serde(default)]
    name: String,
    #[serde(default = "in_service")]
    in_service: bool,
    bus: BusId,
    n_p: u32,
    n_s: u32,
    i_sc_stc: f64,
    i_rs: f64,
    t_cell: f64,
    #[serde(default = "default_ideality")]
    a_ideality: f64,
    c_dc: f64,
    rating: f64,
    #[serde(default = "default_i_max")]
    i_max: f64,
    #[serde(default = "default_tau_dc")]
    tau_dc: f64,
}

fn in_service() -> bool {
    true
}
fn default_ideality() -> f64 {
    PvParams::DEFAULT_IDEALITY
}
fn default_i_max() -> f64 {
    PvParams::DEFAULT_I_MAX
}
fn default_tau_dc() -> f64 {
    PvParams::DEFAULT_TAU_DC
}

impl CaseFile {
    fn into_case(self) -> Case {
        let base = self.base_mva;
        let gens = self
            .gens
            .into_iter()
            .map(|g| GenUnit {
                id: g.id,
                name: g.name,
                bus: g.bus,
                h: g.h * g.s_rating / base,
                h_rated: g.h,
                d: g.d,
                xdp: g.xdp,
                s_rating: g.s_rating,
                pm: g.pm,
            })
            .collect();
        let pvs = self
            .pvs
            .into_iter()
            .map(|p| PvUnit {
                id: p.id,
                name: p.name,
                in_service: p.in_service,
                params: PvParams {
                    bus: p.bus,
                    n_p: p.n_p,
                    n_s: p.n_s,
                    i_sc_stc: p.i_sc_stc,
                    i_rs: p.i_rs,
                    t_cell: p.t_cell,
                    a_ideality: p.a_ideality,
                    c_dc: p.c_dc,
                    rating: p.rating,
                    i_max: p.i_max,
                    tau_dc: p.tau_dc,
                },
            })
            .collect();
        Case {
            base_mva: base,
            f_nom: self.f_nom,
            buses: self.buses,
            branches: self.branches,
            loads: self.loads,
            gens,
            pvs,
            scenario: self.scenario,
        }
    }

    fn from_case(case: &Case) -> Self {
        CaseFile {
            base_mva: case.base_mva,
            f_nom: case.f_nom,
            buses: case.buses.clone(),
            branches: case.branches.clone(),
            loads: case.loads.clone(),
            gens: case
                .gens
                .iter()
                .map(|g| GenRecord {
                    id: g.id,
                    name: g.name.clone(),
                    bus: g.bus,
                    h: g.h_rated,
                    d: g.d,
                    xdp: g.xdp,
                    s_rating: g.s_rating,
                    pm: g.pm,
                })
                .collect(),
            pvs: case
                .pvs
                .iter()
                .map(|u| {
                    let p = &u.params;
                    PvRecord {
                        id: u.id,
                        name: u.name.clone(),
                        in_service: u.in_service,
                        bus: p.bus,
                        n_p: p.n_p,
                        n_s: p.n_s,
                        i_sc_stc: p.i_sc_stc,
                        i_rs: p.i_rs,
                        t_cell: p.t_cell,
                        a_ideality: p.a_ideality,
                        c_dc: p.c_dc,
                        rating: p.rating,
                        i_max: p.i_max,
                        tau_dc: p.tau_dc,
                    }
                })
                .collect(),
            scenario: case.scenario.clone(),
        }
    }
}

/// Parses and validates a case from JSON text.
pub fn case_from_str(text: &str) -> Result<Case, CaseError> {
    let file: CaseFile = serde_json::from_str(text)?;
    let case = file.into_case();
    let diags = validate_case(&case);
    if diags.is_empty() {
        Ok(case)
    } else {
        Err(CaseError::Invalid(diags))
    }
}

pub fn load_case(path: impl AsRef<Path>) -> Result<Case, CaseError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    case_from_str(&text)
}

pub fn case_to_string(case: &Case) -> String {
    // CaseFile holds only plain data; serialisation cannot fail.
    serde_json::to_string_pretty(&CaseFile::from_case(case)).expect("case serialises") + "\n"
}

pub fn save_case(case: &Case, path: impl AsRef<Path>) -> Result<(), CaseError> {
    let path = path.as_ref();
    std::fs::write(path, case_to_string(case)).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })
}
