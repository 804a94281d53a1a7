//! Closed-form single-machine infinite-bus results.
//!
//! With zero electrical output during the fault the rotor accelerates at
//! constant rate, so the fault-on angle is quadratic in time and the
//! clearing time follows directly from the critical clearing angle.

use std::f64::consts::PI;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EacError {
    #[error("formula assumes zero fault-on power (pmax_fault = {0})")]
    FaultPowerNonZero(f64),
    #[error("critical angle {delta_cr} below initial angle {delta0}")]
    AngleBelowInitial { delta0: f64, delta_cr: f64 },
    #[error("parameter out of range: {0}")]
    Domain(&'static str),
    #[error("no critical angle in (delta0, delta_max): unstable for any clearing time")]
    UnstableForAnyClearing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmibSpec {
    /// Inertia constant, s.
    pub h: f64,
    /// Synchronous speed, rad/s.
    pub omega_s: f64,
    /// Mechanical power, pu.
    pub pm: f64,
    pub pmax_pre: f64,
    pub pmax_fault: f64,
    pub pmax_post: f64,
}

impl SmibSpec {
    /// Classic case: identical pre/post network, zero fault power.
    pub fn bolted(h: f64, omega_s: f64, pm: f64, pmax: f64) -> Self {
        Self {
            h,
            omega_s,
            pm,
            pmax_pre: pmax,
            pmax_fault: 0.0,
            pmax_post: pmax,
        }
    }

    /// Stable pre-fault equilibrium angle `asin(pm / pmax_pre)`.
    pub fn delta0(&self) -> f64 {
        (self.pm / self.pmax_pre).asin()
    }

    /// Half the constant angular acceleration during a zero-power fault.
    fn fault_on_coefficient(&self) -> f64 {
        self.omega_s * self.pm / (4.0 * self.h)
    }
}

/// `delta(t) = omega_s pm t^2 / (4 h) + delta0` while the fault is on.
pub fn fault_on_angle(spec: &SmibSpec, delta0: f64, t: f64) -> Result<f64, EacError> {
    if spec.pmax_fault != 0.0 {
        return Err(EacError::FaultPowerNonZero(spec.pmax_fault));
    }
    if !(t >= 0.0) {
        return Err(EacError::Domain("t must be non-negative"));
    }
    Ok(spec.fault_on_coefficient() * t * t + delta0)
}

/// Inverse of [`fault_on_angle`]: `t_cr = sqrt(4 h (delta_cr - delta0) / (omega_s pm))`.
pub fn critical_clearing_time(spec: &SmibSpec, delta0: f64, delta_cr: f64) -> Result<f64, EacError> {
    if spec.pmax_fault != 0.0 {
        return Err(EacError::FaultPowerNonZero(spec.pmax_fault));
    }
    if !(spec.pm > 0.0 && spec.h > 0.0 && spec.omega_s > 0.0) {
        return Err(EacError::Domain("h, omega_s and pm must be positive"));
    }
    if delta_cr < delta0 {
        return Err(EacError::AngleBelowInitial { delta0, delta_cr });
    }
    Ok((4.0 * spec.h * (delta_cr - delta0) / (spec.omega_s * spec.pm)).sqrt())
}

/// Critical clearing angle from the equal-area balance
/// `int_{d0}^{dcr} (pm - pf sin d) dd = int_{dcr}^{dmax} (pp sin d - pm) dd`
/// with `dmax = pi - asin(pm / pp)`.
pub fn critical_angle_eac(spec: &SmibSpec, delta0: f64) -> Result<f64, EacError> {
    if !(spec.pmax_post > 0.0 && spec.pm < spec.pmax_post) {
        return Err(EacError::Domain("need pm < pmax_post"));
    }
    if !(spec.pmax_fault >= 0.0 && spec.pmax_fault < spec.pm) {
        return Err(EacError::Domain("need 0 <= pmax_fault < pm"));
    }
    let delta_max = PI - (spec.pm / spec.pmax_post).asin();
    if delta0 >= delta_max {
        return Err(EacError::UnstableForAnyClearing);
    }
    if spec.pmax_fault == 0.0 {
        let c = spec.pm / spec.pmax_post * (delta_max - delta0) + delta_max.cos();
        if !(-1.0..=1.0).contains(&c) {
            return Err(EacError::UnstableForAnyClearing);
        }
        return Ok(c.acos());
    }
    // General fault-on power: the area balance is monotone in delta_cr, so
    // bisect on it with quadrature for both areas.
    let balance = |dcr: f64| {
        let accel = simpson(|d| spec.pm - spec.pmax_fault * d.sin(), delta0, dcr);
        let decel = simpson(|d| spec.pmax_post * d.sin() - spec.pm, dcr, delta_max);
        accel - decel
    };
    let (mut lo, mut hi) = (delta0, delta_max);
    if balance(lo) > 0.0 || balance(hi) < 0.0 {
        return Err(EacError::UnstableForAnyClearing);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Composite Simpson rule; integrands here are smooth trig polynomials.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const PANELS: usize = 512;
    let h = (b - a) / PANELS as f64;
    let mut s = f(a) + f(b);
    for k in 1..PANELS {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}
