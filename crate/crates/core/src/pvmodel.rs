//! Single-stage PV unit: array I-V law, MPPT, DC-link balance and the
//! current-limited unity power factor inverter.
//!
//! Array quantities are in SI units (volts, amps, watts). Only the grid
//! side of the inverter is expressed in system per-unit.

use thiserror::Error;

use crate::netcase::BusId;
use crate::Complex;

/// Elementary charge, C.
pub const Q_ELECTRON: f64 = 1.602176634e-19;
/// Boltzmann constant, J/K.
pub const K_BOLTZMANN: f64 = 1.380649e-23;
/// Reference irradiance, W/m².
pub const G_STC: f64 = 1000.0;
/// DC-link voltage below which the link is considered collapsed, V.
pub const V_DC_FLOOR: f64 = 1e-6;
/// Terminal voltage floor used by the injection law, pu.
pub const INJECTION_V_FLOOR: f64 = 1e-3;

const EXP_ARG_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PvError {
    #[error("PV parameter `{0}` must be positive")]
    NonPositive(&'static str),
    #[error("array voltage {0} V is negative")]
    NegativeVoltage(f64),
    #[error("diode exponent out of range at {v_dc} V (argument {arg:.1})")]
    ExponentOverflow { v_dc: f64, arg: f64 },
    #[error("no maximum power point bracket in (0, V_oc): {0}")]
    BracketFailure(String),
    #[error("DC link collapsed: v_dc = {0:.3e} V")]
    DcLinkCollapse(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvParams {
    pub bus: BusId,
    /// Parallel strings.
    pub n_p: u32,
    /// Series cells per string.
    pub n_s: u32,
    /// String short-circuit current at 1000 W/m², A.
    pub i_sc_stc: f64,
    /// Cell reverse saturation current, A.
    pub i_rs: f64,
    /// Cell temperature, K.
    pub t_cell: f64,
    /// Diode ideality factor.
    pub a_ideality: f64,
    /// DC-link capacitance, F.
    pub c_dc: f64,
    /// Inverter rating, MVA.
    pub rating: f64,
    /// Inverter current ceiling, pu of the unit rating.
    pub i_max: f64,
    /// DC voltage regulator time constant, s.
    pub tau_dc: f64,
}

impl PvParams {
    pub const DEFAULT_IDEALITY: f64 = 1.5;
    pub const DEFAULT_I_MAX: f64 = 1.1;
    pub const DEFAULT_TAU_DC: f64 = 0.05;

    /// q / (k T A), in 1/V per cell.
    pub fn thermal_coefficient(&self) -> f64 {
        Q_ELECTRON / (K_BOLTZMANN * self.t_cell * self.a_ideality)
    }

    pub fn short_circuit_current(&self, g: f64) -> f64 {
        self.i_sc_stc * g / G_STC
    }

    pub fn open_circuit_voltage(&self, g: f64) -> f64 {
        let ratio = self.short_circuit_current(g) / self.i_rs;
        self.n_s as f64 * ratio.ln_1p() / self.thermal_coefficient()
    }

    /// Names of parameters violating positivity, in declaration order.
    pub fn non_positive(&self) -> Vec<&'static str> {
        let checks = [
            ("n_p", self.n_p as f64),
            ("n_s", self.n_s as f64),
            ("i_sc_stc", self.i_sc_stc),
            ("i_rs", self.i_rs),
            ("t_cell", self.t_cell),
            ("a_ideality", self.a_ideality),
            ("c_dc", self.c_dc),
            ("rating", self.rating),
            ("i_max", self.i_max),
            ("tau_dc", self.tau_dc),
        ];
        checks
            .iter()
            .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn check(&self) -> Result<(), PvError> {
        match self.non_positive().first() {
            Some(name) => Err(PvError::NonPositive(name)),
            None => Ok(()),
        }
    }

    /// Inverter current ceiling on the system base.
    pub fn i_max_system(&self, base_mva: f64) -> f64 {
        self.i_max * self.rating / base_mva
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvState {
    pub v_dc: f64,
    pub irradiance: f64,
}

impl PvState {
    pub fn new(v_dc: f64) -> Self {
        Self {
            v_dc,
            irradiance: G_STC,
        }
    }
}

fn diode_exp_term(v_dc: f64, p: &PvParams) -> Result<f64, PvError> {
    if v_dc < 0.0 {
        return Err(PvError::NegativeVoltage(v_dc));
    }
    let arg = p.thermal_coefficient() * v_dc / p.n_s as f64;
    if arg > EXP_ARG_LIMIT {
        return Err(PvError::ExponentOverflow { v_dc, arg });
    }
    Ok(arg.exp_m1())
}

/// Array current at terminal voltage `v_dc` and irradiance `g`.
pub fn pv_current(v_dc: f64, p: &PvParams, g: f64) -> Result<f64, PvError> {
    let n_p = p.n_p as f64;
    Ok(n_p * p.short_circuit_current(g) - n_p * p.i_rs * diode_exp_term(v_dc, p)?)
}

/// Array power, W.
pub fn pv_power(v_dc: f64, p: &PvParams, g: f64) -> Result<f64, PvError> {
    Ok(pv_current(v_dc, p, g)? * v_dc)
}

/// Sign-carrying part of dP/dV in the per-cell voltage `u = v_dc / n_s`.
/// It does not depend on `n_p` or `n_s`.
fn cell_power_slope(u: f64, i_sc: f64, i_rs: f64, coef: f64) -> f64 {
    let e = (coef * u).exp();
    i_sc - i_rs * (e - 1.0) - i_rs * coef * u * e
}

/// Array voltage maximising [`pv_power`].
///
/// Bisection on the sign of dP/dV over the per-cell voltage, run to
/// machine precision so the result scales exactly with `n_s`.
pub fn mppt_voltage(p: &PvParams, g: f64) -> Result<f64, PvError> {
    p.check()?;
    if !(g > 0.0) {
        return Err(PvError::BracketFailure(format!("irradiance {g} W/m² is not positive")));
    }
    let coef = p.thermal_coefficient();
    let i_sc = p.short_circuit_current(g);
    let u_oc = (i_sc / p.i_rs).ln_1p() / coef;
    if !(u_oc.is_finite() && u_oc > 0.0) || coef * u_oc > EXP_ARG_LIMIT {
        return Err(PvError::BracketFailure(format!("open-circuit voltage {u_oc} V/cell")));
    }
    let (mut lo, mut hi) = (0.0_f64, u_oc);
    let (s_lo, s_hi) = (
        cell_power_slope(lo, i_sc, p.i_rs, coef),
        cell_power_slope(hi, i_sc, p.i_rs, coef),
    );
    if !(s_lo > 0.0 && s_hi < 0.0) {
        return Err(PvError::BracketFailure(format!(
            "dP/dV signs {s_lo:.3e} at 0 and {s_hi:.3e} at V_oc"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cell_power_slope(mid, i_sc, p.i_rs, coef) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) * p.n_s as f64)
}

/// DC-link voltage derivative from the capacitor energy balance
/// `(C/2) d(v²)/dt = p_pv - p_dc`.
pub fn dc_link_rhs(state: &PvState, p_pv: f64, p_dc: f64, p: &PvParams) -> Result<f64, PvError> {
    if state.v_dc <= V_DC_FLOOR {
        return Err(PvError::DcLinkCollapse(state.v_dc));
    }
    Ok((p_pv - p_dc) / (p.c_dc * state.v_dc))
}

/// Unity power factor current law: `|I| = min(p_ref / max(|v|, floor), i_max)`
/// in phase with `v_bus`. All quantities on the same per-unit base.
pub fn injection_current(p_ref: f64, v_bus: Complex, i_max: f64) -> Complex {
    let vm = v_bus.norm();
    let mag = (p_ref.max(0.0) / vm.max(INJECTION_V_FLOOR)).min(i_max);
    if vm > 0.0 {
        v_bus * (mag / vm)
    } else {
        Complex::new(mag, 0.0)
    }
}

/// Steady operating point of a unit: the array voltage the DC regulator
/// holds and the power it delivers there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub v_mpp: f64,
    pub v_op: f64,
    /// Delivered power, W. Equals the MPP power unless the inverter rating
    /// curtails the array.
    pub p_ref: f64,
}

/// When the array can exceed the inverter rating, the unit is held on the
/// high-voltage side of the MPP where array power equals the rating.
pub fn operating_point(p: &PvParams, g: f64) -> Result<OperatingPoint, PvError> {
    let v_mpp = mppt_voltage(p, g)?;
    let p_mpp = pv_power(v_mpp, p, g)?;
    let rating_w = p.rating * 1e6;
    if p_mpp <= rating_w {
        return Ok(OperatingPoint {
            v_mpp,
            v_op: v_mpp,
            p_ref: p_mpp,
        });
    }
    let (mut lo, mut hi) = (v_mpp, p.open_circuit_voltage(g));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pv_power(mid, p, g)? > rating_w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(OperatingPoint {
        v_mpp,
        v_op: 0.5 * (lo + hi),
        p_ref: rating_w,
    })
}

/// Grid-side result of one injection evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Injection {
    /// Current into the bus, system pu.
    pub current: Complex,
    /// Power the DC regulator asks for, W.
    pub p_cmd: f64,
    /// Power actually leaving the DC link, W.
    pub p_dc: f64,
    pub saturated: bool,
}

/// Power command of the DC voltage regulator, W: array power plus the
/// capacitor energy needed to return `v_dc` to `v_op` within `tau_dc`,
/// limited to the rating.
pub fn power_command(state: &PvState, p: &PvParams, op: &OperatingPoint) -> Result<f64, PvError> {
    let p_pv = pv_power(state.v_dc, p, state.irradiance)?;
    let correction = p.c_dc * state.v_dc * (state.v_dc - op.v_op) / p.tau_dc;
    Ok((p_pv + correction).clamp(0.0, p.rating * 1e6))
}

/// Current the unit injects at bus voltage `v_bus` (system pu).
///
/// In steady state the command equals the operating-point power, so the
/// unit delivers `min(P_mpp, rating)`. Under deep voltage sag the
/// `i_max` ceiling binds and the DC link absorbs the surplus.
pub fn pv_injection(
    state: &PvState,
    v_bus: Complex,
    p: &PvParams,
    op: &OperatingPoint,
    base_mva: f64,
) -> Result<Injection, PvError> {
    let scale = base_mva * 1e6;
    let p_cmd = power_command(state, p, op)?;
    let i_max = p.i_max_system(base_mva);
    let current = injection_current(p_cmd / scale, v_bus, i_max);
    let vm = v_bus.norm();
    let unsaturated = current.norm() < i_max && vm >= INJECTION_V_FLOOR;
    let p_dc = if unsaturated {
        p_cmd
    } else {
        vm * current.norm() * scale
    };
    Ok(Injection {
        current,
        p_cmd,
        p_dc,
        saturated: !unsaturated,
    })
}

/// Template scaled to `rating_mva`: parallel strings and DC capacitance
/// grow with the rating so the array covers it at MPP.
pub fn scaled_to_rating(template: &PvParams, rating_mva: f64, bus: BusId) -> Result<PvParams, PvError> {
    let mut one = template.clone();
    one.n_p = 1;
    let v = mppt_voltage(&one, G_STC)?;
    let p_string = pv_power(v, &one, G_STC)?;
    let n_p = (rating_mva * 1e6 / p_string).ceil().max(1.0);
    Ok(PvParams {
        bus,
        n_p: n_p as u32,
        c_dc: template.c_dc * rating_mva / template.rating,
        rating: rating_mva,
        ..template.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell() -> PvParams {
        PvParams {
            bus: 1,
            n_p: 1,
            n_s: 1,
            i_sc_stc: 5.0,
            i_rs: 1e-9,
            t_cell: 298.0,
            a_ideality: 1.5,
            c_dc: 0.01,
            rating: 1.0,
            i_max: 1.1,
            tau_dc: 0.05,
        }
    }

    #[test]
    fn thermal_coefficient_matches_hand_value() {
        assert!((cell().thermal_coefficient() - 25.96).abs() < 5e-3);
    }

    #[test]
    fn current_at_zero_voltage_is_short_circuit() {
        let mut p = cell();
        p.n_p = 7;
        assert_eq!(pv_current(0.0, &p, G_STC).unwrap(), 7.0 * 5.0);
        let half = pv_current(0.0, &p, 500.0).unwrap();
        assert_eq!(half, 0.5 * pv_current(0.0, &p, G_STC).unwrap());
    }

    #[test]
    fn current_and_power_at_point_six_volts() {
        // mpmath, 40 digits: I = 4.9941816096 A, P = 2.9965089658 W
        let i = pv_current(0.6, &cell(), G_STC).unwrap();
        assert!((i - 4.994182).abs() < 1e-5, "{i}");
        let p = pv_power(0.6, &cell(), G_STC).unwrap();
        assert!((p - 2.996509).abs() < 1e-5, "{p}");
    }

    #[test]
    fn power_matches_expanded_form() {
        let mut p = cell();
        p.n_p = 3;
        p.n_s = 36;
        for k in 0..50 {
            let v = k as f64 * 0.5;
            let direct = pv_power(v, &p, G_STC).unwrap();
            let n_p = p.n_p as f64;
            let expanded = n_p * p.i_sc_stc * v
                - n_p * p.i_rs * v * ((p.thermal_coefficient() * v / p.n_s as f64).exp() - 1.0);
            assert!((direct - expanded).abs() <= 1e-12 * expanded.abs().max(1e-300));
        }
    }

    #[test]
    fn overflow_is_reported() {
        let err = pv_current(1e3, &cell(), G_STC).unwrap_err();
        assert!(matches!(err, PvError::ExponentOverflow { .. }));
        assert!(matches!(pv_current(-1.0, &cell(), G_STC), Err(PvError::NegativeVoltage(_))));
    }

    #[test]
    fn mppt_scales_exactly_with_series_cells() {
        let v1 = mppt_voltage(&cell(), G_STC).unwrap();
        let mut p = cell();
        p.n_s = 36;
        assert_eq!(mppt_voltage(&p, G_STC).unwrap(), 36.0 * v1);
    }

    #[test]
    fn mppt_near_hand_value_and_locally_maximal() {
        let p = cell();
        let v = mppt_voltage(&p, G_STC).unwrap();
        assert!((v - 0.744).abs() < 1e-3, "{v}");
        let at = pv_power(v, &p, G_STC).unwrap();
        assert!(at >= pv_power(v + 1e-3, &p, G_STC).unwrap());
        assert!(at >= pv_power(v - 1e-3, &p, G_STC).unwrap());
    }

    #[test]
    fn mppt_rejects_bad_params() {
        let mut p = cell();
        p.i_rs = 0.0;
        assert_eq!(mppt_voltage(&p, G_STC), Err(PvError::NonPositive("i_rs")));
        assert!(matches!(mppt_voltage(&cell(), 0.0), Err(PvError::BracketFailure(_))));
    }

    #[test]
    fn dc_link_rhs_values() {
        let mut p = cell();
        p.c_dc = 0.01;
        let s = PvState::new(100.0);
        assert_eq!(dc_link_rhs(&s, 10.0, 10.0, &p).unwrap(), 0.0);
        assert!((dc_link_rhs(&s, 150.0, 100.0, &p).unwrap() - 50.0).abs() < 1e-12);
        assert!(matches!(
            dc_link_rhs(&PvState::new(1e-7), 1.0, 0.0, &p),
            Err(PvError::DcLinkCollapse(_))
        ));
    }

    #[test]
    fn injection_law_cases() {
        let i = injection_current(0.5, Complex::new(1.0, 0.0), 1.1);
        assert!((i.norm() - 0.5).abs() < 1e-15);
        let faulted = Complex::from_polar(0.01, 0.3);
        let i = injection_current(0.5, faulted, 1.1);
        assert!((i.norm() - 1.1).abs() < 1e-15);
        assert!((i.arg() - 0.3).abs() < 1e-12);
        assert_eq!(injection_current(0.5, Complex::new(0.0, 0.0), 1.1).norm(), 1.1);
    }

    #[test]
    fn operating_point_curtails_oversized_array() {
        let mut p = cell();
        p.n_p = 1000;
        p.n_s = 100;
        // MPP is about 354 kW; a 200 kW rating holds the array right of MPP.
        p.rating = 0.2;
        let op = operating_point(&p, G_STC).unwrap();
        assert!(op.v_op > op.v_mpp);
        assert!((pv_power(op.v_op, &p, G_STC).unwrap() - 200e3).abs() < 1e-6);
        assert_eq!(op.p_ref, 200e3);
    }

    #[test]
    fn regulator_is_idle_at_operating_point() {
        let mut p = cell();
        p.n_p = 1000;
        p.n_s = 100;
        p.rating = 1.0;
        let op = operating_point(&p, G_STC).unwrap();
        let s = PvState::new(op.v_op);
        let inj = pv_injection(&s, Complex::new(1.0, 0.0), &p, &op, 1.0).unwrap();
        assert!(!inj.saturated);
        assert_eq!(inj.p_dc, inj.p_cmd);
        assert!((inj.p_cmd - op.p_ref).abs() < 1e-9 * op.p_ref);
    }

    #[test]
    fn scaled_template_covers_rating() {
        let mut t = cell();
        t.n_s = 1000;
        t.rating = 5.0;
        t.c_dc = 0.05;
        let s = scaled_to_rating(&t, 10.0, 3).unwrap();
        assert_eq!(s.bus, 3);
        assert!((s.c_dc - 0.1).abs() < 1e-15);
        let op = operating_point(&s, G_STC).unwrap();
        assert_eq!(op.p_ref, 10e6);
    }
}
