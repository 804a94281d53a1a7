//! Event-driven time-domain simulation.
//!
//! A run moves through three networks: intact until `t_fault`, faulted
//! (with islanding branches open) until `t_clear`, then islanded without
//! the fault. Machine and DC-link states are integrated with fixed-step
//! RK4; every derivative evaluation solves the network algebraically.
//! Event instants are grid points, and algebraic quantities recorded at an
//! event belong to the network that becomes active there.

mod classify;
mod network;

use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use crate::machine::{swing_rhs, MachineError};
use crate::netcase::{BranchId, BusId, Case, CaseError};
use crate::pvmodel::{dc_link_rhs, pv_power, PvError, PvState};
use crate::Complex;

pub use classify::{classify_stability, relative_angle_deviation};
pub use network::{
    solve_network, stage_matrices, CoiGroup, NetworkSolution, Prepared, PvRun, SourceSlot,
    StageMatrices, StageNetwork, NETWORK_MAX_ITER, NETWORK_TOL,
};

/// Element removed from service at fault inception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementRef {
    Gen(u32),
    Pv(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub fault_bus: BusId,
    /// Fault shunt admittance, pu.
    pub fault_admittance: Complex,
    pub t_fault: f64,
    pub t_clear: f64,
    /// Branches opened at `t_fault`.
    pub island_branches: Vec<BranchId>,
    pub trip_elements: Vec<ElementRef>,
}

impl Scenario {
    /// Large finite shunt standing in for a bolted fault.
    pub const BOLTED: Complex = Complex::new(1e6, -1e6);

    pub fn new(fault_bus: BusId, t_fault: f64, t_clear: f64) -> Self {
        Self {
            fault_bus,
            fault_admittance: Self::BOLTED,
            t_fault,
            t_clear,
            island_branches: vec![],
            trip_elements: vec![],
        }
    }

    /// Scenario from the defaults a case carries. Missing times default to
    /// a fault at 1 s cleared after 0.1 s.
    pub fn from_case(case: &Case) -> Result<Self, SimError> {
        let d = case.scenario.clone().unwrap_or_default();
        let fault_bus = d
            .fault_bus
            .ok_or_else(|| SimError::InvalidScenario("case defines no fault bus".into()))?;
        let t_fault = d.t_fault.unwrap_or(1.0);
        Ok(Self {
            fault_bus,
            fault_admittance: d.fault_admittance.map_or(Self::BOLTED, |[g, b]| Complex::new(g, b)),
            t_fault,
            t_clear: d.t_clear.unwrap_or(t_fault + 0.1),
            island_branches: d.island_branches,
            trip_elements: vec![],
        })
    }

    pub fn with_clearing(&self, t_clear: f64) -> Self {
        Self {
            t_clear,
            ..self.clone()
        }
    }

    pub fn fault_duration(&self) -> f64 {
        self.t_clear - self.t_fault
    }

    fn check(&self, case: &Case) -> Result<(), SimError> {
        if !(self.t_fault >= 0.0 && self.t_clear > self.t_fault && self.t_clear.is_finite()) {
            return Err(SimError::InvalidScenario(format!(
                "need 0 <= t_fault < t_clear (t_fault = {}, t_clear = {})",
                self.t_fault, self.t_clear
            )));
        }
        if case.bus_index(self.fault_bus).is_none() {
            return Err(CaseError::UnknownBus(self.fault_bus).into());
        }
        if let Some(b) = self.island_branches.iter().find(|b| case.branch(**b).is_none()) {
            return Err(CaseError::UnknownBranch(*b).into());
        }
        for e in &self.trip_elements {
            let known = match e {
                ElementRef::Gen(id) => case.gens.iter().any(|g| g.id == *id),
                ElementRef::Pv(id) => case.pvs.iter().any(|p| p.id == *id),
            };
            if !known {
                return Err(SimError::InvalidScenario(format!("trip target {e:?} not in case")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Relative rotor-angle limit, rad.
    pub angle_limit: f64,
    /// Voltage every monitored bus must hold over the final window, pu.
    /// Zero disables the voltage test.
    pub v_recover: f64,
    pub t_settle: f64,
    /// Stop as soon as the angle limit is crossed after clearing.
    pub early_exit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            angle_limit: PI,
            v_recover: 0.9,
            t_settle: 3.0,
            early_exit: false,
        }
    }
}

impl SimConfig {
    /// Defaults with `t_end` taken from the case when it sets one.
    pub fn for_case(case: &Case) -> Self {
        let mut c = Self::default();
        if let Some(t) = case.scenario.as_ref().and_then(|s| s.t_end) {
            c.t_end = t;
        }
        c
    }

    /// Latest clearing instant the classifier can still judge.
    pub fn last_clearing(&self) -> f64 {
        self.t_end - self.t_settle
    }

    fn check(&self, scenario: &Scenario) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_settle >= 0.0 && self.angle_limit > 0.0) {
            return Err(SimError::InvalidConfig("t_settle and angle_limit must be positive".into()));
        }
        if !(self.t_end > scenario.t_clear + self.t_settle) {
            return Err(SimError::InvalidConfig(format!(
                "t_end = {} must exceed t_clear + t_settle = {}",
                self.t_end,
                scenario.t_clear + self.t_settle
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Stable,
    Unstable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("PV unit at t = {t:.4} s: {source}")]
    Pv { t: f64, source: PvError },
    #[error("network solve failed at t = {t:.4} s: {detail}")]
    Network { t: f64, detail: String },
}

impl SimError {
    fn at(self, t: f64) -> Self {
        match self {
            SimError::Pv { source, .. } => SimError::Pv { t, source },
            SimError::Network { detail, .. } => SimError::Network { t, detail },
            e => e,
        }
    }
}

/// Source currents at the instant of peak fault current.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaultPeak {
    pub t: f64,
    pub total: f64,
    /// Per generator, case order; zero when tripped.
    pub gens: Vec<f64>,
    /// Per in-service PV unit.
    pub pvs: Vec<f64>,
    /// Per infinite bus, in bus order.
    pub infinite: Vec<f64>,
}

/// Series are indexed `[element][step]`, all of length `t.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub t: Vec<f64>,
    pub t_fault: f64,
    pub t_clear: f64,
    pub gen_ids: Vec<u32>,
    pub gen_names: Vec<String>,
    pub bus_ids: Vec<BusId>,
    /// In-service PV units.
    pub pv_ids: Vec<u32>,
    pub delta: Vec<Vec<f64>>,
    pub omega_dev: Vec<Vec<f64>>,
    pub pe: Vec<Vec<f64>>,
    pub vm: Vec<Vec<f64>>,
    pub gen_current: Vec<Vec<f64>>,
    pub pv_current: Vec<Vec<f64>>,
    pub v_dc: Vec<Vec<f64>>,
    pub fault_current: Vec<f64>,
    /// Largest rotor-angle deviation from its island reference, rad.
    pub max_rel_dev: Vec<f64>,
    /// Case bus indices whose voltage the classifier checks.
    pub monitored: Vec<usize>,
    pub verdict: Verdict,
    /// Maximum of `max_rel_dev` after clearing, rad.
    pub max_rel_angle_dev: f64,
    pub peak_fault_current: f64,
    pub fault_peak: FaultPeak,
    /// First time a state became non-finite or the network lost its solution.
    pub diverged_at: Option<f64>,
    /// Why the network lost its solution, if it did.
    pub collapse: Option<String>,
    /// Largest PV fixed-point pass count seen.
    pub max_network_iterations: usize,
}

impl SimResult {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Runs one trial: pre-fault, fault-on, post-fault to `config.t_end`.
pub fn simulate(case: &Case, scenario: &Scenario, config: &SimConfig) -> Result<SimResult, SimError> {
    config.check(scenario)?;
    let prep = Prepared::new(case, scenario)?;
    let mut r = Runner::new(case, &prep, scenario, config).run(config.t_end)?;
    r.verdict = classify_stability(&r, config);
    Ok(r)
}

/// Runs only up to fault clearing; used for fault-current probing.
pub fn simulate_fault_interval(case: &Case, scenario: &Scenario, dt: f64) -> Result<SimResult, SimError> {
    let config = SimConfig {
        dt,
        t_end: scenario.t_clear,
        ..SimConfig::default()
    };
    if !(dt > 0.0) {
        return Err(SimError::InvalidConfig(format!("dt = {dt} must be positive")));
    }
    let prep = Prepared::new(case, scenario)?;
    let mut r = Runner::new(case, &prep, scenario, &config).run(scenario.t_clear)?;
    r.verdict = if r.diverged_at.is_some() {
        Verdict::Unstable
    } else {
        Verdict::Stable
    };
    Ok(r)
}

struct Runner<'a> {
    prep: &'a Prepared,
    scenario: &'a Scenario,
    config: &'a SimConfig,
    n_gen: usize,
    n_pv: usize,
    warm: [Option<Vec<Complex>>; 3],
    have_peak: bool,
    out: SimResult,
}

impl<'a> Runner<'a> {
    fn new(case: &Case, prep: &'a Prepared, scenario: &'a Scenario, config: &'a SimConfig) -> Self {
        let n_gen = prep.gens.len();
        let n_pv = prep.pvs.len();
        let n_bus = case.buses.len();
        let series = |n: usize| vec![Vec::new(); n];
        let out = SimResult {
            t: Vec::new(),
            t_fault: scenario.t_fault,
            t_clear: scenario.t_clear,
            gen_ids: prep.gens.iter().map(|g| g.id).collect(),
            gen_names: prep
                .gens
                .iter()
                .map(|g| if g.name.is_empty() { format!("gen{}", g.id) } else { g.name.clone() })
                .collect(),
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            pv_ids: prep.pvs.iter().map(|p| p.id).collect(),
            delta: series(n_gen),
            omega_dev: series(n_gen),
            pe: series(n_gen),
            vm: series(n_bus),
            gen_current: series(n_gen),
            pv_current: series(n_pv),
            v_dc: series(n_pv),
            fault_current: Vec::new(),
            max_rel_dev: Vec::new(),
            monitored: prep.stages[2].energised.clone(),
            verdict: Verdict::Stable,
            max_rel_angle_dev: 0.0,
            peak_fault_current: 0.0,
            fault_peak: FaultPeak::default(),
            diverged_at: None,
            max_network_iterations: 0,
            collapse: None,
        };
        Self {
            prep,
            scenario,
            config,
            n_gen,
            n_pv,
            warm: [None, None, None],
            have_peak: false,
            out,
        }
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.n_gen + self.n_pv);
        x.extend(self.prep.initial.iter().map(|s| s.delta));
        x.extend(self.prep.initial.iter().map(|s| s.omega_dev));
        x.extend(self.prep.pvs.iter().map(|p| p.op.v_op));
        x
    }

    fn pv_states(&self, x: &[f64]) -> Vec<PvState> {
        x[2 * self.n_gen..].iter().map(|&v| PvState::new(v)).collect()
    }

    fn solve(&mut self, stage: usize, x: &[f64], t: f64) -> Result<NetworkSolution, SimError> {
        let net = &self.prep.stages[stage];
        let emf = net.source_voltages(&self.prep.internal, &x[..self.n_gen]);
        let sol = solve_network(
            net,
            emf,
            &self.prep.pvs,
            &self.pv_states(x),
            self.prep.base_mva,
            self.warm[stage].as_deref(),
        )
        .map_err(|e| e.at(t))?;
        self.out.max_network_iterations = self.out.max_network_iterations.max(sol.iterations);
        self.warm[stage] = Some(sol.v_pv.clone());
        Ok(sol)
    }

    fn electrical_power(&self, stage: usize, sol: &NetworkSolution) -> Vec<f64> {
        let mut pe = vec![0.0; self.n_gen];
        for (k, s) in self.prep.stages[stage].sources.iter().enumerate() {
            if let SourceSlot::Gen(gi) = *s {
                pe[gi] = (sol.emf[k] * sol.source_current[k].conj()).re;
            }
        }
        pe
    }

    fn derivative(&mut self, stage: usize, x: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
        let sol = self.solve(stage, x, t)?;
        let pe = self.electrical_power(stage, &sol);
        let net = &self.prep.stages[stage];
        let n = self.n_gen;
        let mut dx = vec![0.0; x.len()];
        for gi in 0..n {
            if !net.gen_active[gi] {
                continue;
            }
            let st = crate::machine::MachineState {
                delta: x[gi],
                omega_dev: x[n + gi],
            };
            let (dd, dw) = swing_rhs(&st, &self.prep.gens[gi], pe[gi], self.prep.omega_s);
            dx[gi] = dd;
            dx[n + gi] = dw;
        }
        for (k, p) in self.prep.pvs.iter().enumerate() {
            let Some(inj) = sol.pv[k] else { continue };
            let state = PvState::new(x[2 * n + k]);
            let err = |source| SimError::Pv { t, source };
            let p_pv = pv_power(state.v_dc, &p.params, state.irradiance).map_err(err)?;
            dx[2 * n + k] = dc_link_rhs(&state, p_pv, inj.p_dc, &p.params).map_err(err)?;
        }
        Ok(dx)
    }

    fn rk4(&mut self, stage: usize, x: &[f64], t: f64, h: f64) -> Result<Vec<f64>, SimError> {
        let axpy = |a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect() };
        let k1 = self.derivative(stage, x, t)?;
        let k2 = self.derivative(stage, &axpy(0.5 * h, &k1), t + 0.5 * h)?;
        let k3 = self.derivative(stage, &axpy(0.5 * h, &k2), t + 0.5 * h)?;
        let k4 = self.derivative(stage, &axpy(h, &k3), t + h)?;
        Ok((0..x.len())
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect())
    }

    /// Algebraic snapshot at a grid point. Returns the fault current.
    fn record(&mut self, stage: usize, x: &[f64], t: f64) -> Result<f64, SimError> {
        let sol = self.solve(stage, x, t)?;
        let pe = self.electrical_power(stage, &sol);
        let net = &self.prep.stages[stage];
        let bus_v = net.bus_voltages(&sol);
        let i_f = net.fault_current(&bus_v).norm();
        let n = self.n_gen;
        let o = &mut self.out;
        o.t.push(t);
        let mut gen_i = vec![0.0; n];
        for (k, s) in net.sources.iter().enumerate() {
            if let SourceSlot::Gen(gi) = *s {
                gen_i[gi] = sol.source_current[k].norm();
            }
        }
        for gi in 0..n {
            o.delta[gi].push(x[gi]);
            o.omega_dev[gi].push(x[n + gi]);
            o.pe[gi].push(pe[gi]);
            o.gen_current[gi].push(gen_i[gi]);
        }
        for (b, v) in bus_v.iter().enumerate() {
            o.vm[b].push(v.norm());
        }
        for k in 0..self.n_pv {
            o.pv_current[k].push(sol.pv[k].map_or(0.0, |i| i.current.norm()));
            o.v_dc[k].push(x[2 * n + k]);
        }
        o.fault_current.push(i_f);
        let dev = relative_angle_deviation(&net.coi_groups, &self.prep.gens, &x[..n]);
        o.max_rel_dev.push(dev);
        if t > self.scenario.t_clear {
            o.max_rel_angle_dev = o.max_rel_angle_dev.max(dev);
        }
        if stage == 1 {
            self.note_fault_peak(&sol, i_f, t);
        }
        Ok(i_f)
    }

    fn note_fault_peak(&mut self, sol: &NetworkSolution, i_f: f64, t: f64) {
        if self.have_peak && i_f <= self.out.peak_fault_current {
            return;
        }
        self.have_peak = true;
        let net = &self.prep.stages[1];
        let mut peak = FaultPeak {
            t,
            total: i_f,
            gens: vec![0.0; self.n_gen],
            pvs: sol.pv.iter().map(|p| p.map_or(0.0, |i| i.current.norm())).collect(),
            infinite: Vec::new(),
        };
        for (k, s) in net.sources.iter().enumerate() {
            match *s {
                SourceSlot::Gen(gi) => peak.gens[gi] = sol.source_current[k].norm(),
                SourceSlot::Infinite(..) => peak.infinite.push(sol.source_current[k].norm()),
            }
        }
        self.out.peak_fault_current = i_f;
        self.out.fault_peak = peak;
    }

    /// A network or PV failure after fault inception ends the run as a
    /// collapse; before it, the case itself is at fault.
    fn run(mut self, t_end: f64) -> Result<SimResult, SimError> {
        if let Err(e) = self.integrate(t_end) {
            match e {
                SimError::Network { t, .. } | SimError::Pv { t, .. } if t >= self.scenario.t_fault => {
                    self.out.diverged_at = Some(t);
                    self.out.collapse = Some(e.to_string());
                }
                e => return Err(e),
            }
        }
        Ok(self.out)
    }

    fn integrate(&mut self, t_end: f64) -> Result<(), SimError> {
        let (tf, tc) = (self.scenario.t_fault, self.scenario.t_clear);
        let segments = [(0.0, tf, 0usize), (tf, tc, 1), (tc, t_end, 2)];
        let mut x = self.initial_state();
        'outer: for (si, &(start, end, stage)) in segments.iter().enumerate() {
            let len = end - start;
            if !(len > 0.0) {
                continue;
            }
            let last_segment = si == 2 || (si == 1 && t_end <= tc);
            let n = ((len / self.config.dt) - 1e-9).ceil().max(1.0) as usize;
            let h = len / n as f64;
            self.record(stage, &x, start)?;
            for k in 1..=n {
                let t0 = start + (k - 1) as f64 * h;
                let t1 = if k == n { end } else { start + k as f64 * h };
                x = self.rk4(stage, &x, t0, t1 - t0)?;
                if x.iter().any(|v| !v.is_finite()) {
                    self.out.diverged_at = Some(t1);
                    break 'outer;
                }
                if k == n && !last_segment {
                    if stage == 1 {
                        // Fault current just before clearing, not recorded.
                        let sol = self.solve(1, &x, t1)?;
                        let bus_v = self.prep.stages[1].bus_voltages(&sol);
                        let i_f = self.prep.stages[1].fault_current(&bus_v).norm();
                        self.note_fault_peak(&sol, i_f, t1);
                    }
                    break;
                }
                self.record(stage, &x, t1)?;
                if self.config.early_exit && t1 > tc && *self.out.max_rel_dev.last().unwrap() > self.config.angle_limit {
                    break 'outer;
                }
            }
            if last_segment {
                break;
            }
        }
        Ok(())
    }
}
