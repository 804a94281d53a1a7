//! Algebraic network layer: the three switching stages reduced to source
//! and PV nodes, and the per-evaluation network solve.

use nalgebra::{DMatrix, DVector};

use super::{ElementRef, Scenario, SimError};
use crate::machine::{init_classical_gen, InternalSource, MachineState};
use crate::netcase::{
    build_ybus, kron_reduce_with_recovery, run_powerflow, BusId, BusKind, Case, GenUnit, Node,
    PowerflowSolution, TopologyOverlay, YbusMatrix,
};
use crate::pvmodel::{operating_point, pv_injection, Injection, OperatingPoint, PvParams, PvState, G_STC};
use crate::Complex;

/// Fixed-point tolerance on PV injection currents, pu.
pub const NETWORK_TOL: f64 = 1e-8;
pub const NETWORK_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceSlot {
    /// Internal node of the generator at this case index.
    Gen(usize),
    /// Infinite bus (case bus index) with its fixed voltage.
    Infinite(usize, Complex),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PvSlot {
    /// Retained PV bus, by position among the free PV nodes.
    Free(usize),
    /// Unit sits on an infinite bus; its voltage is the source voltage.
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BusSlot {
    Retained(usize),
    Eliminated(usize),
}

/// Synchronous machines sharing one electrical island. The angle reference
/// is the infinite bus when the island has one, else the inertia-weighted
/// centre of angle.
#[derive(Debug, Clone, PartialEq)]
pub struct CoiGroup {
    pub gens: Vec<usize>,
    pub infinite_angle: Option<f64>,
}

/// One switching stage of the network, reduced to
/// `[sources..., free PV buses...]`.
#[derive(Debug, Clone)]
pub struct StageNetwork {
    pub reduced: YbusMatrix,
    pub sources: Vec<SourceSlot>,
    pub coi_groups: Vec<CoiGroup>,
    /// Buses (case indices) in islands holding a synchronous source.
    pub energised: Vec<usize>,
    /// Fault shunt: case bus index and admittance.
    pub fault: Option<(usize, Complex)>,
    pub gen_active: Vec<bool>,
    pv_slot: Vec<Option<PvSlot>>,
    n_free: usize,
    // V_P = base_v + a I_P with base_v = b E; I_S = c E + d I_P.
    a: DMatrix<Complex>,
    b: DMatrix<Complex>,
    c: DMatrix<Complex>,
    d: DMatrix<Complex>,
    recovery: DMatrix<Complex>,
    bus_slot: Vec<BusSlot>,
}

/// PV unit taking part in a run.
#[derive(Debug, Clone)]
pub struct PvRun {
    pub id: u32,
    pub bus_index: usize,
    pub params: PvParams,
    pub op: OperatingPoint,
}

/// Everything fixed for a run once the pre-fault point is known.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub pf: PowerflowSolution,
    /// Generators with `pm` set from the power flow dispatch.
    pub gens: Vec<GenUnit>,
    pub internal: Vec<InternalSource>,
    pub initial: Vec<MachineState>,
    pub pvs: Vec<PvRun>,
    pub stages: [StageNetwork; 3],
    pub omega_s: f64,
    pub base_mva: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkSolution {
    /// Source voltages in stage source order.
    pub emf: Vec<Complex>,
    /// Source currents into the network, stage source order.
    pub source_current: Vec<Complex>,
    /// Free PV bus voltages.
    pub v_pv: Vec<Complex>,
    /// Per PV unit (run order); `None` when tripped.
    pub pv: Vec<Option<Injection>>,
    /// Fixed-point passes used (0 without free PV units).
    pub iterations: usize,
}

/// Reduced pre-fault, fault-on and post-fault matrices.
#[derive(Debug, Clone)]
pub struct StageMatrices {
    pub pre: YbusMatrix,
    pub fault_on: YbusMatrix,
    pub post: YbusMatrix,
}

pub fn stage_matrices(case: &Case, scenario: &Scenario) -> Result<StageMatrices, SimError> {
    let p = Prepared::new(case, scenario)?;
    let [pre, fault_on, post] = p.stages;
    Ok(StageMatrices {
        pre: pre.reduced,
        fault_on: fault_on.reduced,
        post: post.reduced,
    })
}

impl Prepared {
    pub fn new(case: &Case, scenario: &Scenario) -> Result<Self, SimError> {
        scenario.check(case)?;
        let pf = run_powerflow(case)?;
        let idx = case.bus_index_map();

        let mut gens = case.gens.clone();
        let mut internal = Vec::with_capacity(gens.len());
        let mut initial = Vec::with_capacity(gens.len());
        for (g, s) in gens.iter_mut().zip(&pf.gen_s) {
            g.pm = s.re;
            let (src, st) = init_classical_gen(g, pf.v[idx[&g.bus]], *s)?;
            internal.push(src);
            initial.push(st);
        }

        let mut pvs = Vec::new();
        for u in case.active_pvs() {
            let op = operating_point(&u.params, G_STC).map_err(|source| SimError::Pv { t: 0.0, source })?;
            pvs.push(PvRun {
                id: u.id,
                bus_index: idx[&u.params.bus],
                params: u.params.clone(),
                op,
            });
        }

        let load_shunts: Vec<(BusId, Complex)> = case
            .loads
            .iter()
            .map(|l| {
                let v = pf.v[idx[&l.bus]].norm();
                (l.bus, Complex::new(l.p, -l.q) / (v * v))
            })
            .collect();

        let tripped_gen = |i: usize| scenario.trip_elements.contains(&ElementRef::Gen(case.gens[i].id));
        let tripped_pv = |p: &PvRun| scenario.trip_elements.contains(&ElementRef::Pv(p.id));
        let all_gens = vec![true; gens.len()];
        let after_gens: Vec<bool> = (0..gens.len()).map(|i| !tripped_gen(i)).collect();
        let all_pvs = vec![true; pvs.len()];
        let after_pvs: Vec<bool> = pvs.iter().map(|p| !tripped_pv(p)).collect();

        let pre_overlay = TopologyOverlay {
            opened_branches: vec![],
            shunts: load_shunts.clone(),
        };
        let mut fault_overlay = TopologyOverlay {
            opened_branches: scenario.island_branches.clone(),
            shunts: load_shunts.clone(),
        };
        fault_overlay.shunts.push((scenario.fault_bus, scenario.fault_admittance));
        let post_overlay = TopologyOverlay {
            opened_branches: scenario.island_branches.clone(),
            shunts: load_shunts,
        };
        let fault = Some((idx[&scenario.fault_bus], scenario.fault_admittance));

        let build = |overlay: &TopologyOverlay, g: &[bool], p: &[bool], fault| {
            StageNetwork::build(case, &pf, &gens, &pvs, overlay, g, p, fault)
        };
        let stages = [
            build(&pre_overlay, &all_gens, &all_pvs, None)?,
            build(&fault_overlay, &after_gens, &after_pvs, fault)?,
            build(&post_overlay, &after_gens, &after_pvs, None)?,
        ];
        Ok(Self {
            pf,
            gens,
            internal,
            initial,
            pvs,
            stages,
            omega_s: case.omega_s(),
            base_mva: case.base_mva,
        })
    }
}

impl StageNetwork {
    #[allow(clippy::too_many_arguments)]
    fn build(
        case: &Case,
        pf: &PowerflowSolution,
        gens: &[GenUnit],
        pvs: &[PvRun],
        overlay: &TopologyOverlay,
        gen_active: &[bool],
        pv_active: &[bool],
        fault: Option<(usize, Complex)>,
    ) -> Result<Self, SimError> {
        let bus = build_ybus(case, overlay)?;
        let n_bus = bus.dim();
        let active: Vec<usize> = (0..gens.len()).filter(|&i| gen_active[i]).collect();

        let mut full = YbusMatrix {
            nodes: bus.nodes.clone(),
            y: DMatrix::zeros(n_bus + active.len(), n_bus + active.len()),
        };
        full.y.view_mut((0, 0), (n_bus, n_bus)).copy_from(&bus.y);
        for (k, &gi) in active.iter().enumerate() {
            let g = &gens[gi];
            full.nodes.push(Node::Internal(g.id));
            let b = case.bus_index(g.bus).expect("validated bus reference");
            full.add_series(n_bus + k, b, Complex::new(0.0, g.xdp).inv());
        }

        let gen_buses: Vec<BusId> = gens.iter().map(|g| g.bus).collect();
        let mut sources: Vec<SourceSlot> = active.iter().map(|&gi| SourceSlot::Gen(gi)).collect();
        let mut retained: Vec<Node> = active.iter().map(|&gi| Node::Internal(gens[gi].id)).collect();
        for (i, b) in case.buses.iter().enumerate() {
            if b.kind == BusKind::Slack && !gen_buses.contains(&b.id) {
                sources.push(SourceSlot::Infinite(i, pf.v[i]));
                retained.push(Node::Bus(b.id));
            }
        }
        let n_src = sources.len();

        let mut pv_slot = vec![None; pvs.len()];
        let mut free_buses: Vec<usize> = Vec::new();
        for (k, p) in pvs.iter().enumerate() {
            if !pv_active[k] {
                continue;
            }
            let fixed = sources
                .iter()
                .position(|s| matches!(s, SourceSlot::Infinite(b, _) if *b == p.bus_index));
            pv_slot[k] = Some(match fixed {
                Some(s) => PvSlot::Fixed(s),
                None => {
                    let pos = free_buses.iter().position(|&b| b == p.bus_index).unwrap_or_else(|| {
                        free_buses.push(p.bus_index);
                        free_buses.len() - 1
                    });
                    PvSlot::Free(pos)
                }
            });
        }
        retained.extend(free_buses.iter().map(|&b| Node::Bus(case.buses[b].id)));
        let n_free = free_buses.len();

        let kron = kron_reduce_with_recovery(&full, &retained)?;
        let y = &kron.reduced.y;
        let y_ss = y.view((0, 0), (n_src, n_src)).into_owned();
        let y_sp = y.view((0, n_src), (n_src, n_free)).into_owned();
        let y_ps = y.view((n_src, 0), (n_free, n_src)).into_owned();
        let y_pp = y.view((n_src, n_src), (n_free, n_free)).into_owned();
        let a = if n_free == 0 {
            DMatrix::zeros(0, 0)
        } else {
            y_pp.try_inverse().ok_or_else(|| SimError::Network {
                t: 0.0,
                detail: format!(
                    "PV buses [{}] have no path to a voltage source",
                    free_buses.iter().map(|&b| case.buses[b].id.to_string()).collect::<Vec<_>>().join(", ")
                ),
            })?
        };
        let b = -(&a * &y_ps);
        let c = &y_ss + &y_sp * &b;
        let d = &y_sp * &a;

        let bus_slot = case
            .buses
            .iter()
            .map(|bus| {
                let node = Node::Bus(bus.id);
                match retained.iter().position(|n| *n == node) {
                    Some(r) => BusSlot::Retained(r),
                    None => BusSlot::Eliminated(
                        kron.eliminated.iter().position(|n| *n == node).expect("every bus is retained or eliminated"),
                    ),
                }
            })
            .collect();

        let islands = case.islands(&overlay.opened_branches);
        let mut coi_groups = Vec::new();
        let mut energised = Vec::new();
        for island in &islands {
            let members: Vec<usize> = active
                .iter()
                .copied()
                .filter(|&gi| island.contains(&case.bus_index(gens[gi].bus).expect("validated")))
                .collect();
            let infinite_angle = sources.iter().find_map(|s| match s {
                SourceSlot::Infinite(b, v) if island.contains(b) => Some(v.arg()),
                _ => None,
            });
            if members.is_empty() && infinite_angle.is_none() {
                continue;
            }
            energised.extend(island.iter().copied());
            if !members.is_empty() {
                coi_groups.push(CoiGroup {
                    gens: members,
                    infinite_angle,
                });
            }
        }
        energised.sort_unstable();

        Ok(Self {
            reduced: kron.reduced,
            sources,
            coi_groups,
            energised,
            fault,
            gen_active: gen_active.to_vec(),
            pv_slot,
            n_free,
            a,
            b,
            c,
            d,
            recovery: kron.recovery,
            bus_slot,
        })
    }

    pub fn source_voltages(&self, internal: &[InternalSource], deltas: &[f64]) -> Vec<Complex> {
        self.sources
            .iter()
            .map(|s| match *s {
                SourceSlot::Gen(gi) => internal[gi].phasor(deltas[gi]),
                SourceSlot::Infinite(_, v) => v,
            })
            .collect()
    }

    /// All bus voltages in case order.
    pub fn bus_voltages(&self, sol: &NetworkSolution) -> Vec<Complex> {
        let retained: Vec<Complex> = sol.emf.iter().chain(&sol.v_pv).copied().collect();
        let eliminated = &self.recovery * DVector::from_vec(retained.clone());
        self.bus_slot
            .iter()
            .map(|s| match *s {
                BusSlot::Retained(r) => retained[r],
                BusSlot::Eliminated(e) => eliminated[e],
            })
            .collect()
    }

    /// Current into the fault shunt, zero when the stage has none.
    pub fn fault_current(&self, bus_v: &[Complex]) -> Complex {
        match self.fault {
            Some((b, y)) => y * bus_v[b],
            None => Complex::new(0.0, 0.0),
        }
    }
}

/// Solves the stage network for given source voltages and PV states.
///
/// Synchronous sources are fixed voltages behind the reduced matrix; PV
/// units are current injections depending on their own bus voltage, so
/// the solve iterates on those currents until they move by at most
/// [`NETWORK_TOL`]. `warm` seeds the free PV bus voltages.
pub fn solve_network(
    stage: &StageNetwork,
    emf: Vec<Complex>,
    pvs: &[PvRun],
    states: &[PvState],
    base_mva: f64,
    warm: Option<&[Complex]>,
) -> Result<NetworkSolution, SimError> {
    let e = DVector::from_vec(emf.clone());
    let base_v = &stage.b * &e;
    let mut v_p = match warm {
        Some(w) if w.len() == stage.n_free => DVector::from_column_slice(w),
        _ => base_v.clone(),
    };

    let injections = |v_p: &DVector<Complex>| -> Result<(DVector<Complex>, Vec<Option<Injection>>), SimError> {
        let mut i_p = DVector::zeros(stage.n_free);
        let mut out = Vec::with_capacity(pvs.len());
        for (k, p) in pvs.iter().enumerate() {
            let Some(slot) = stage.pv_slot[k] else {
                out.push(None);
                continue;
            };
            let v = match slot {
                PvSlot::Free(j) => v_p[j],
                PvSlot::Fixed(s) => emf[s],
            };
            let inj = pv_injection(&states[k], v, &p.params, &p.op, base_mva)
                .map_err(|source| SimError::Pv { t: f64::NAN, source })?;
            if let PvSlot::Free(j) = slot {
                i_p[j] += inj.current;
            }
            out.push(Some(inj));
        }
        Ok((i_p, out))
    };

    let mut iterations = 0;
    let (i_p, pv) = if stage.n_free == 0 {
        v_p = base_v;
        injections(&v_p)?
    } else {
        // Newton on the currents: r(I) = g(base + a I) - I. Plain
        // substitution oscillates once a PV sits near a collapsed voltage.
        let n = stage.n_free;
        let residual = |i_p: &DVector<Complex>| -> Result<(DVector<Complex>, Vec<Option<Injection>>), SimError> {
            let (g, pv) = injections(&(&base_v + &stage.a * i_p))?;
            Ok((g - i_p, pv))
        };
        let size = |r: &DVector<Complex>| r.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut i_p = injections(&v_p)?.0;
        loop {
            let (r, pv) = residual(&i_p)?;
            let change = size(&r);
            if change <= NETWORK_TOL {
                v_p = &base_v + &stage.a * &i_p;
                break (i_p, pv);
            }
            if iterations == NETWORK_MAX_ITER || !change.is_finite() {
                return Err(SimError::Network {
                    t: f64::NAN,
                    detail: format!(
                        "PV injection solve did not settle in {NETWORK_MAX_ITER} passes (last change {change:.3e} pu)"
                    ),
                });
            }
            iterations += 1;
            let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for col in 0..2 * n {
                let h = 1e-7 * i_p[col / 2].norm().max(1.0);
                let mut probe = i_p.clone();
                probe[col / 2] += if col % 2 == 0 { Complex::new(h, 0.0) } else { Complex::new(0.0, h) };
                let rp = residual(&probe)?.0;
                for row in 0..n {
                    let d = (rp[row] - r[row]) / h;
                    jac[(2 * row, col)] = d.re;
                    jac[(2 * row + 1, col)] = d.im;
                }
            }
            let rhs = DVector::from_iterator(2 * n, r.iter().flat_map(|z| [-z.re, -z.im]));
            let Some(dx) = jac.lu().solve(&rhs) else {
                i_p += &r;
                continue;
            };
            let step = DVector::from_iterator(n, (0..n).map(|j| Complex::new(dx[2 * j], dx[2 * j + 1])));
            let mut t = 1.0;
            loop {
                let trial = &i_p + &step * Complex::from(t);
                if t < 1.0 / 64.0 || size(&residual(&trial)?.0) < (1.0 - 1e-4 * t) * change {
                    i_p = trial;
                    break;
                }
                t *= 0.5;
            }
        }
    };

    let i_s = &stage.c * &e + &stage.d * &i_p;
    Ok(NetworkSolution {
        emf,
        source_current: i_s.iter().copied().collect(),
        v_pv: v_p.iter().copied().collect(),
        pv,
        iterations,
    })
}
