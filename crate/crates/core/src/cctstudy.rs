//! Critical clearing time search and the PV studies built on it.
//!
//! Clearing instants always lie on the grid `t_fault + k * step`, so a
//! sweep and a bisection with the same step bracket the same pair of
//! instants whenever the verdict is monotone in the clearing time. The
//! CCT is the last stable clearing instant minus the fault instant.

use rayon::prelude::*;
use thiserror::Error;

use crate::netcase::{BusId, BusKind, Case, PvUnit};
use crate::pvmodel::{operating_point, scaled_to_rating, PvError, PvParams, G_STC};
use crate::simengine::{simulate, simulate_fault_interval, Scenario, SimConfig, SimError, Verdict};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pv(#[from] PvError),
    #[error("stable even when cleared at the last judgeable instant {t_clear} s: no bracket")]
    AlwaysStable { t_clear: f64 },
    #[error("unstable already when cleared at {t_clear} s: no bracket")]
    AlwaysUnstable { t_clear: f64 },
    #[error("step {step} s leaves no clearing instant before {last} s")]
    NoClearingInstant { step: f64, last: f64 },
    #[error("invalid layout: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub t_clear: f64,
    pub verdict: Verdict,
    pub max_rel_angle_dev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CctOutcome {
    Found(f64),
    /// The first clearing instant is already unstable.
    BelowResolution,
    /// No unstable verdict up to the last judgeable clearing instant.
    ExceedsHorizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CctResult {
    pub outcome: CctOutcome,
    pub t_fault: f64,
    /// (last stable, first unstable) clearing instants.
    pub bracket: Option<(f64, f64)>,
    pub resolution: f64,
    /// In evaluation order.
    pub trials: Vec<Trial>,
}

impl CctResult {
    pub fn cct(&self) -> Option<f64> {
        match self.outcome {
            CctOutcome::Found(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMethod {
    Sweep,
    Bisect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub method: SearchMethod,
    /// Sweep step or bisection resolution, s.
    pub resolution: f64,
    /// Time step of the fault-current probe, s.
    pub probe_dt: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            method: SearchMethod::Sweep,
            resolution: 0.1,
            probe_dt: 1e-3,
        }
    }
}

fn clearing_instant(scenario: &Scenario, k: usize, step: f64) -> f64 {
    scenario.t_fault + k as f64 * step
}

/// Largest k with `t_fault + k * step` strictly before the last judgeable instant.
fn last_index(scenario: &Scenario, config: &SimConfig, step: f64) -> Result<usize, StudyError> {
    let last = config.last_clearing();
    let span = (last - scenario.t_fault) / step;
    let k = if span > 0.0 { ((span - 1e-9).ceil() as usize).saturating_sub(1) } else { 0 };
    if !(step > 0.0) || k < 1 {
        return Err(StudyError::NoClearingInstant { step, last });
    }
    Ok(k)
}

fn run_trial(case: &Case, scenario: &Scenario, config: &SimConfig, k: usize, step: f64) -> Result<Trial, StudyError> {
    let t_clear = clearing_instant(scenario, k, step);
    let config = SimConfig {
        early_exit: true,
        ..config.clone()
    };
    let r = simulate(case, &scenario.with_clearing(t_clear), &config)?;
    Ok(Trial {
        t_clear,
        verdict: r.verdict,
        max_rel_angle_dev: r.max_rel_angle_dev,
    })
}

fn run_batch(case: &Case, scenario: &Scenario, config: &SimConfig, ks: &[usize], step: f64) -> Result<Vec<Trial>, StudyError> {
    ks.par_iter()
        .map(|&k| run_trial(case, scenario, config, k, step))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Raises the clearing instant in `t_step` increments until the first
/// unstable verdict.
pub fn find_cct_sweep(case: &Case, scenario: &Scenario, config: &SimConfig, t_step: f64) -> Result<CctResult, StudyError> {
    let k_max = last_index(scenario, config, t_step)?;
    let batch = rayon::current_num_threads().max(1);
    let mut trials = Vec::new();
    let mut first_unstable = None;
    let mut k = 1;
    'scan: while k <= k_max {
        let ks: Vec<usize> = (k..=k_max.min(k + batch - 1)).collect();
        // Trials are judged in index order; results past the first
        // unstable one are dropped so the log does not depend on batching.
        let results: Vec<Result<Trial, StudyError>> = ks
            .par_iter()
            .map(|&k| run_trial(case, scenario, config, k, t_step))
            .collect();
        for (kk, r) in ks.iter().zip(results) {
            let trial = r?;
            trials.push(trial);
            if trial.verdict == Verdict::Unstable {
                first_unstable = Some(*kk);
                break 'scan;
            }
        }
        k += ks.len();
    }
    let (outcome, bracket) = match first_unstable {
        Some(1) => (CctOutcome::BelowResolution, None),
        Some(k) => {
            let lo = clearing_instant(scenario, k - 1, t_step);
            let hi = clearing_instant(scenario, k, t_step);
            (CctOutcome::Found((k - 1) as f64 * t_step), Some((lo, hi)))
        }
        None => (CctOutcome::ExceedsHorizon, None),
    };
    Ok(CctResult {
        outcome,
        t_fault: scenario.t_fault,
        bracket,
        resolution: t_step,
        trials,
    })
}

/// Narrows a stable/unstable bracket on the clearing grid until adjacent
/// instants remain. Each round judges three interior instants at once.
pub fn find_cct_bisect(case: &Case, scenario: &Scenario, config: &SimConfig, resolution: f64) -> Result<CctResult, StudyError> {
    let k_max = last_index(scenario, config, resolution)?;
    let mut trials = run_batch(case, scenario, config, &[1, k_max], resolution)?;
    if trials[0].verdict == Verdict::Unstable {
        return Err(StudyError::AlwaysUnstable {
            t_clear: trials[0].t_clear,
        });
    }
    if trials[1].verdict == Verdict::Stable {
        return Err(StudyError::AlwaysStable {
            t_clear: trials[1].t_clear,
        });
    }
    let (mut lo, mut hi) = (1usize, k_max);
    while hi - lo > 1 {
        let mut ks: Vec<usize> = (1..=3).map(|j| lo + (hi - lo) * j / 4).filter(|&k| k > lo && k < hi).collect();
        ks.dedup();
        let batch = run_batch(case, scenario, config, &ks, resolution)?;
        let mut new_lo = lo;
        let mut new_hi = hi;
        for (k, t) in ks.iter().zip(&batch) {
            if t.verdict == Verdict::Unstable {
                new_hi = *k;
                break;
            }
            new_lo = *k;
        }
        trials.extend(batch);
        lo = new_lo;
        hi = new_hi;
    }
    let (t_lo, t_hi) = (clearing_instant(scenario, lo, resolution), clearing_instant(scenario, hi, resolution));
    Ok(CctResult {
        outcome: CctOutcome::Found(lo as f64 * resolution),
        t_fault: scenario.t_fault,
        bracket: Some((t_lo, t_hi)),
        resolution,
        trials,
    })
}

pub fn find_cct(case: &Case, scenario: &Scenario, study: &StudyConfig) -> Result<CctResult, StudyError> {
    match study.method {
        SearchMethod::Sweep => find_cct_sweep(case, scenario, &study.sim, study.resolution),
        SearchMethod::Bisect => find_cct_bisect(case, scenario, &study.sim, study.resolution),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultProbe {
    /// Peak current into the fault over the fault-on interval, pu.
    pub peak: f64,
    pub t_peak: f64,
    /// Current of each source at the peak instant, pu.
    pub contributions: Vec<(String, f64)>,
}

pub fn fault_current_probe(case: &Case, scenario: &Scenario, dt: f64) -> Result<FaultProbe, StudyError> {
    let r = simulate_fault_interval(case, scenario, dt)?;
    let p = &r.fault_peak;
    let mut contributions: Vec<(String, f64)> = r
        .gen_names
        .iter()
        .zip(&p.gens)
        .map(|(n, i)| (format!("gen {n}"), *i))
        .collect();
    contributions.extend(r.pv_ids.iter().zip(&p.pvs).map(|(id, i)| (format!("pv {id}"), *i)));
    let infinite: Vec<BusId> = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack && !case.gens.iter().any(|g| g.bus == b.id))
        .map(|b| b.id)
        .collect();
    contributions.extend(infinite.iter().zip(&p.infinite).map(|(b, i)| (format!("infinite bus {b}"), *i)));
    Ok(FaultProbe {
        peak: r.peak_fault_current,
        t_peak: p.t,
        contributions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub label: String,
    pub result: Option<CctResult>,
    pub peak_fault_current: Option<f64>,
    /// Why the row has no result.
    pub error: Option<String>,
}

impl StudyRow {
    pub fn cct(&self) -> Option<f64> {
        self.result.as_ref().and_then(|r| r.cct())
    }
}

/// PV template for new units: the first slot at `bus`, else the first slot.
fn pv_template(case: &Case, bus: BusId) -> Result<PvParams, StudyError> {
    case.pvs
        .iter()
        .find(|u| u.params.bus == bus)
        .or_else(|| case.pvs.first())
        .map(|u| u.params.clone())
        .ok_or_else(|| StudyError::Layout("case has no PV slot to use as template".into()))
}

/// Case with every PV slot out of service and new units per `(bus, MW)`.
///
/// Synchronous dispatch is lowered by the PV output: when the slack bus
/// hosts a machine the power flow does this itself, otherwise generators
/// away from the slack give up output in proportion to their dispatch.
pub fn with_pv_layout(case: &Case, template: &PvParams, layout: &[(BusId, f64)]) -> Result<Case, StudyError> {
    let mut out = case.clone();
    for u in &mut out.pvs {
        u.in_service = false;
    }
    let mut next_id = case.pvs.iter().map(|u| u.id).max().unwrap_or(0) + 1;
    let mut added = 0.0;
    for &(bus, mw) in layout {
        if case.bus_index(bus).is_none() {
            return Err(StudyError::Layout(format!("unknown bus {bus}")));
        }
        if !(mw >= 0.0 && mw.is_finite()) {
            return Err(StudyError::Layout(format!("share {mw} MW at bus {bus} is negative")));
        }
        if mw == 0.0 {
            continue;
        }
        let params = scaled_to_rating(template, mw, bus)?;
        added += operating_point(&params, G_STC)?.p_ref / (case.base_mva * 1e6);
        out.pvs.push(PvUnit {
            id: next_id,
            name: format!("PV {mw} MW bus {bus}"),
            in_service: true,
            params,
        });
        next_id += 1;
    }
    let slack_has_machine = case
        .buses
        .iter()
        .filter(|b| b.kind == BusKind::Slack)
        .any(|b| case.gens.iter().any(|g| g.bus == b.id));
    if added > 0.0 && !slack_has_machine {
        let slack_buses: Vec<BusId> = case.buses.iter().filter(|b| b.kind == BusKind::Slack).map(|b| b.id).collect();
        let movable: f64 = out
            .gens
            .iter()
            .filter(|g| g.pm > 0.0 && !slack_buses.contains(&g.bus))
            .map(|g| g.pm)
            .sum();
        if movable < added {
            return Err(StudyError::Layout(format!(
                "PV output {added:.4} pu exceeds displaceable dispatch {movable:.4} pu"
            )));
        }
        let scale = 1.0 - added / movable;
        for g in out.gens.iter_mut().filter(|g| g.pm > 0.0 && !slack_buses.contains(&g.bus)) {
            g.pm *= scale;
        }
    }
    Ok(out)
}

fn evaluate(case: &Case, scenario: &Scenario, study: &StudyConfig) -> Result<StudyRow, StudyError> {
    let cct = find_cct(case, scenario, study)?;
    let probe = fault_current_probe(case, scenario, study.probe_dt)?;
    Ok(StudyRow {
        label: String::new(),
        result: Some(cct),
        peak_fault_current: Some(probe.peak),
        error: None,
    })
}

fn study_row(label: String, case: Result<Case, StudyError>, scenario: &Scenario, study: &StudyConfig) -> StudyRow {
    match case.and_then(|c| evaluate(&c, scenario, study)) {
        Ok(row) => StudyRow { label, ..row },
        Err(e) => StudyRow {
            label,
            result: None,
            peak_fault_current: None,
            error: Some(e.to_string()),
        },
    }
}

/// One row per share of centralised PV at `bus`. A share whose case
/// cannot be solved gives a row carrying the error; the sweep goes on.
pub fn sweep_pv_share(
    case: &Case,
    scenario: &Scenario,
    bus: BusId,
    shares_mw: &[f64],
    study: &StudyConfig,
) -> Result<Vec<StudyRow>, StudyError> {
    let template = pv_template(case, bus)?;
    Ok(shares_mw
        .iter()
        .map(|&mw| {
            let variant = with_pv_layout(case, &template, &[(bus, mw)]);
            study_row(format!("{mw}"), variant, scenario, study)
        })
        .collect())
}

/// Centralised (`total_mw` at `central_bus`) against a distributed layout
/// of the same total, under the same fault.
pub fn compare_topologies(
    case: &Case,
    scenario: &Scenario,
    total_mw: f64,
    central_bus: BusId,
    layout: &[(BusId, f64)],
    study: &StudyConfig,
) -> Result<[StudyRow; 2], StudyError> {
    let sum: f64 = layout.iter().map(|(_, mw)| mw).sum();
    if (sum - total_mw).abs() > 1e-9 * total_mw.abs().max(1.0) {
        return Err(StudyError::Layout(format!(
            "distributed shares sum to {sum} MW, expected {total_mw} MW"
        )));
    }
    let template = pv_template(case, central_bus)?;
    // Unit order must not matter; build from a canonical order.
    let mut sorted = layout.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let central = with_pv_layout(case, &template, &[(central_bus, total_mw)])?;
    let distributed = with_pv_layout(case, &template, &sorted)?;
    Ok([
        StudyRow {
            label: "centralized".into(),
            ..evaluate(&central, scenario, study)?
        },
        StudyRow {
            label: "distributed".into(),
            ..evaluate(&distributed, scenario, study)?
        },
    ])
}
