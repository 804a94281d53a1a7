//! Newton-Raphson power flow in polar coordinates (dense Jacobian).

use nalgebra::{DMatrix, DVector};

use super::{build_ybus, BusId, BusKind, Case, CaseError, TopologyOverlay};
use crate::pvmodel::{operating_point, G_STC};
use crate::Complex;

pub const PF_TOLERANCE: f64 = 1e-8;
pub const PF_MAX_ITER: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct PowerflowSolution {
    pub bus_ids: Vec<BusId>,
    /// Complex bus voltages in case bus order.
    pub v: Vec<Complex>,
    /// Net complex injection at each bus.
    pub bus_injection: Vec<Complex>,
    /// Output of each generator in case order (motors negative).
    pub gen_s: Vec<Complex>,
    /// Active output of each PV unit in case order; zero when out of service.
    pub pv_p: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_mismatch: f64,
}

impl PowerflowSolution {
    pub fn voltage_at(&self, bus: BusId) -> Option<Complex> {
        self.bus_ids.iter().position(|&b| b == bus).map(|i| self.v[i])
    }

    pub fn vm(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.norm()).collect()
    }

    pub fn va(&self) -> Vec<f64> {
        self.v.iter().map(|v| v.arg()).collect()
    }
}

struct Injections {
    p: Vec<f64>,
    q: Vec<f64>,
    pv_p: Vec<f64>,
}

fn scheduled(case: &Case) -> Result<Injections, CaseError> {
    let idx = case.bus_index_map();
    let n = case.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for l in &case.loads {
        let i = idx[&l.bus];
        p[i] -= l.p;
        q[i] -= l.q;
    }
    for g in &case.gens {
        p[idx[&g.bus]] += g.pm;
    }
    let mut pv_p = vec![0.0; case.pvs.len()];
    for (k, u) in case.pvs.iter().enumerate() {
        if !u.in_service {
            continue;
        }
        let op = operating_point(&u.params, G_STC).map_err(CaseError::Pv)?;
        pv_p[k] = op.p_ref / (case.base_mva * 1e6);
        p[idx[&u.params.bus]] += pv_p[k];
    }
    Ok(Injections { p, q, pv_p })
}

/// Largest |P| or |Q| mismatch of voltage vector `v` against the case
/// schedule, over non-slack buses (Q only at PQ buses).
pub fn mismatch(case: &Case, v: &[Complex]) -> Result<f64, CaseError> {
    let y = build_ybus(case, &TopologyOverlay::default())?;
    let inj = scheduled(case)?;
    let s = power_injection(&y.y, v);
    let mut worst = 0.0_f64;
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind == BusKind::Slack {
            continue;
        }
        worst = worst.max((s[i].re - inj.p[i]).abs());
        if b.kind == BusKind::Pq {
            worst = worst.max((s[i].im - inj.q[i]).abs());
        }
    }
    Ok(worst)
}

fn power_injection(y: &DMatrix<Complex>, v: &[Complex]) -> Vec<Complex> {
    let vv = DVector::from_column_slice(v);
    let i = y * &vv;
    v.iter().zip(i.iter()).map(|(v, i)| v * i.conj()).collect()
}

/// Solves the pre-fault operating point from a flat start.
pub fn run_powerflow(case: &Case) -> Result<PowerflowSolution, CaseError> {
    let ybus = build_ybus(case, &TopologyOverlay::default())?;
    let y = &ybus.y;
    let n = case.buses.len();
    let inj = scheduled(case)?;

    let pvpq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusKind::Slack).collect();
    let pq: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusKind::Pq).collect();
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let mut va = vec![0.0; n];

    let to_complex = |vm: &[f64], va: &[f64]| -> Vec<Complex> {
        vm.iter().zip(va).map(|(&m, &a)| Complex::from_polar(m, a)).collect()
    };
    let residual = |v: &[Complex]| -> DVector<f64> {
        let s = power_injection(y, v);
        let mut f = DVector::zeros(pvpq.len() + pq.len());
        for (r, &i) in pvpq.iter().enumerate() {
            f[r] = s[i].re - inj.p[i];
        }
        for (r, &i) in pq.iter().enumerate() {
            f[pvpq.len() + r] = s[i].im - inj.q[i];
        }
        f
    };

    let mut v = to_complex(&vm, &va);
    let mut f = residual(&v);
    let mut norm = f.amax();
    let mut iterations = 0;
    while norm > PF_TOLERANCE {
        if iterations == PF_MAX_ITER || !norm.is_finite() {
            return Err(CaseError::NotConverged {
                iterations,
                mismatch: norm,
            });
        }
        let dx = match newton_step(y, &v, &pvpq, &pq, &f) {
            Some(dx) => dx,
            None => {
                return Err(CaseError::NotConverged {
                    iterations,
                    mismatch: norm,
                })
            }
        };
        apply_step(&mut vm, &mut va, &pvpq, &pq, &dx);
        v = to_complex(&vm, &va);
        f = residual(&v);
        norm = f.amax();
        iterations += 1;
    }
    // One extra correction drives the residual to rounding level so the
    // dynamic initialisation starts from a true equilibrium.
    if norm > 0.0 {
        if let Some(dx) = newton_step(y, &v, &pvpq, &pq, &f) {
            let (mut vm2, mut va2) = (vm.clone(), va.clone());
            apply_step(&mut vm2, &mut va2, &pvpq, &pq, &dx);
            let v2 = to_complex(&vm2, &va2);
            let f2 = residual(&v2);
            if f2.amax() < norm {
                v = v2;
                norm = f2.amax();
            }
        }
    }

    let s = power_injection(y, &v);
    let mut gen_s = vec![Complex::new(0.0, 0.0); case.gens.len()];
    for (i, b) in case.buses.iter().enumerate() {
        let at_bus: Vec<usize> = (0..case.gens.len()).filter(|&k| case.gens[k].bus == b.id).collect();
        if at_bus.is_empty() {
            continue;
        }
        let load: Complex = case
            .loads
            .iter()
            .filter(|l| l.bus == b.id)
            .map(|l| Complex::new(l.p, l.q))
            .sum();
        let pv: f64 = case
            .pvs
            .iter()
            .enumerate()
            .filter(|(_, u)| u.params.bus == b.id)
            .map(|(k, _)| inj.pv_p[k])
            .sum();
        let total = s[i] + load - Complex::new(pv, 0.0);
        let rating: f64 = at_bus.iter().map(|&k| case.gens[k].s_rating).sum();
        for &k in &at_bus {
            let share = case.gens[k].s_rating / rating;
            let p = match b.kind {
                BusKind::Slack => total.re * share,
                _ => case.gens[k].pm,
            };
            let q = match b.kind {
                BusKind::Pq => 0.0,
                _ => total.im * share,
            };
            gen_s[k] = Complex::new(p, q);
        }
    }

    Ok(PowerflowSolution {
        bus_ids: case.buses.iter().map(|b| b.id).collect(),
        v,
        bus_injection: s,
        gen_s,
        pv_p: inj.pv_p,
        iterations,
        converged: true,
        max_mismatch: norm,
    })
}

fn newton_step(
    y: &DMatrix<Complex>,
    v: &[Complex],
    pvpq: &[usize],
    pq: &[usize],
    f: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = v.len();
    let vv = DVector::from_column_slice(v);
    let ibus = y * &vv;
    let vnorm: Vec<Complex> = v.iter().map(|x| x / x.norm()).collect();

    // dS/dVa = j diag(V) conj(diag(I) - Y diag(V))
    // dS/dVm = diag(V) conj(Y diag(Vnorm)) + conj(diag(I)) diag(Vnorm)
    let mut ds_dva = DMatrix::<Complex>::zeros(n, n);
    let mut ds_dvm = DMatrix::<Complex>::zeros(n, n);
    let j = Complex::new(0.0, 1.0);
    for r in 0..n {
        for c in 0..n {
            let mut a = -y[(r, c)] * v[c];
            if r == c {
                a += ibus[r];
            }
            ds_dva[(r, c)] = j * v[r] * a.conj();
            let mut m = v[r] * (y[(r, c)] * vnorm[c]).conj();
            if r == c {
                m += ibus[r].conj() * vnorm[r];
            }
            ds_dvm[(r, c)] = m;
        }
    }
    let (np, nq) = (pvpq.len(), pq.len());
    let mut jac = DMatrix::<f64>::zeros(np + nq, np + nq);
    for (ri, &r) in pvpq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(ri, ci)] = ds_dva[(r, c)].re;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(ri, np + ci)] = ds_dvm[(r, c)].re;
        }
    }
    for (ri, &r) in pq.iter().enumerate() {
        for (ci, &c) in pvpq.iter().enumerate() {
            jac[(np + ri, ci)] = ds_dva[(r, c)].im;
        }
        for (ci, &c) in pq.iter().enumerate() {
            jac[(np + ri, np + ci)] = ds_dvm[(r, c)].im;
        }
    }
    jac.lu().solve(&(-f))
}

fn apply_step(vm: &mut [f64], va: &mut [f64], pvpq: &[usize], pq: &[usize], dx: &DVector<f64>) {
    for (k, &i) in pvpq.iter().enumerate() {
        va[i] += dx[k];
    }
    for (k, &i) in pq.iter().enumerate() {
        vm[i] += dx[pvpq.len() + k];
    }
}
