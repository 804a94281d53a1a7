use std::collections::HashSet;
use std::fmt;

use super::{BusKind, Case};

/// One violated case rule, tagged with the rule name and offending element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: &'static str,
    pub element: String,
    pub message: String,
}

impl Diagnostic {
    fn new(rule: &'static str, element: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            rule,
            element: element.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.element, self.message)
    }
}

/// Checks every case invariant; an empty list means the case is valid.
pub fn validate_case(case: &Case) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if !(case.base_mva > 0.0) {
        out.push(Diagnostic::new("base-mva-positive", "case", format!("base_mva = {}", case.base_mva)));
    }
    if !(case.f_nom > 0.0) {
        out.push(Diagnostic::new("f-nom-positive", "case", format!("f_nom = {}", case.f_nom)));
    }

    let mut seen = HashSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            out.push(Diagnostic::new("duplicate-bus-id", format!("bus {}", b.id), "bus id appears more than once"));
        }
        if !(b.base_kv > 0.0) {
            out.push(Diagnostic::new("base-kv-positive", format!("bus {}", b.id), format!("base_kv = {}", b.base_kv)));
        }
        if !(b.v_set > 0.0) {
            out.push(Diagnostic::new("v-set-positive", format!("bus {}", b.id), format!("v_set = {}", b.v_set)));
        }
    }
    let known = |id: u32| seen.contains(&id);
    let dangling = |out: &mut Vec<Diagnostic>, element: String, bus: u32| {
        if !known(bus) {
            out.push(Diagnostic::new("dangling-bus-ref", element, format!("references unknown bus {bus}")));
        }
    };

    let mut branch_ids = HashSet::new();
    for br in &case.branches {
        let el = format!("branch {}", br.id);
        if !branch_ids.insert(br.id) {
            out.push(Diagnostic::new("duplicate-branch-id", el.clone(), "branch id appears more than once"));
        }
        dangling(&mut out, el.clone(), br.from_bus);
        dangling(&mut out, el.clone(), br.to_bus);
        if br.from_bus == br.to_bus {
            out.push(Diagnostic::new("branch-self-loop", el.clone(), "from_bus equals to_bus"));
        }
        if br.r == 0.0 && br.x == 0.0 {
            out.push(Diagnostic::new("branch-zero-impedance", el, "r and x are both zero"));
        }
    }
    for (i, l) in case.loads.iter().enumerate() {
        dangling(&mut out, format!("load {i}"), l.bus);
    }

    let mut gen_ids = HashSet::new();
    for g in &case.gens {
        let el = format!("gen {}", g.id);
        if !gen_ids.insert(g.id) {
            out.push(Diagnostic::new("duplicate-gen-id", el.clone(), "gen id appears more than once"));
        }
        dangling(&mut out, el.clone(), g.bus);
        if !(g.h > 0.0 && g.xdp > 0.0 && g.s_rating > 0.0 && g.d >= 0.0) {
            out.push(Diagnostic::new(
                "gen-params-positive",
                el,
                format!("need h > 0, xdp > 0, s_rating > 0, d >= 0 (h={}, xdp={}, s={}, d={})", g.h_rated, g.xdp, g.s_rating, g.d),
            ));
        }
    }

    let mut pv_ids = HashSet::new();
    for u in &case.pvs {
        let el = format!("pv {}", u.id);
        if !pv_ids.insert(u.id) {
            out.push(Diagnostic::new("duplicate-pv-id", el.clone(), "pv id appears more than once"));
        }
        dangling(&mut out, el.clone(), u.params.bus);
        let bad = u.params.non_positive();
        if !bad.is_empty() {
            out.push(Diagnostic::new("pv-params-positive", el, format!("non-positive: {}", bad.join(", "))));
        }
    }

    let gen_buses: HashSet<u32> = case.gens.iter().map(|g| g.bus).collect();
    for b in &case.buses {
        if b.kind == BusKind::PvGen && !gen_buses.contains(&b.id) {
            out.push(Diagnostic::new(
                "regulated-bus-without-gen",
                format!("bus {}", b.id),
                "pv_gen bus has no generator attached",
            ));
        }
    }

    // Island rules only make sense once bus references resolve.
    if out.iter().all(|d| d.rule != "dangling-bus-ref" && d.rule != "duplicate-bus-id") {
        for island in case.islands(&[]) {
            let slacks = island.iter().filter(|&&i| case.buses[i].kind == BusKind::Slack).count();
            if slacks != 1 {
                let ids: Vec<String> = island.iter().map(|&i| case.buses[i].id.to_string()).collect();
                out.push(Diagnostic::new(
                    "slack-per-island",
                    format!("island [{}]", ids.join(", ")),
                    format!("{slacks} slack buses; exactly one required"),
                ));
            }
        }
    }

    // A slack bus without a machine is an infinite bus and covers any demand.
    let has_infinite_bus = case
        .buses
        .iter()
        .any(|b| b.kind == BusKind::Slack && !gen_buses.contains(&b.id));
    let capacity: f64 = case
        .gens
        .iter()
        .filter(|g| g.pm >= 0.0)
        .map(|g| g.s_rating / case.base_mva)
        .sum::<f64>()
        + case.active_pvs().map(|u| u.params.rating / case.base_mva).sum::<f64>();
    let motor_demand: f64 = case.gens.iter().filter(|g| g.pm < 0.0).map(|g| -g.pm).sum();
    let demand = case.total_load_p() + motor_demand;
    if !has_infinite_bus && capacity < demand {
        out.push(Diagnostic::new(
            "capacity-covers-load",
            "case",
            format!("generation capacity {capacity:.4} pu below demand {demand:.4} pu"),
        ));
    }

    out
}
