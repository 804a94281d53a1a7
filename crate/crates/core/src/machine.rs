//! Classical machine model: constant EMF behind transient reactance driven
//! by the swing equation.

use thiserror::Error;

use crate::netcase::{GenUnit, YbusMatrix};
use crate::Complex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MachineError {
    #[error("generator {0}: terminal voltage is zero, cannot initialise")]
    ZeroTerminalVoltage(u32),
    #[error("dimension mismatch: {angles} angles, {sources} sources, {matrix}x{matrix} matrix")]
    DimensionMismatch { angles: usize, sources: usize, matrix: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineState {
    /// Rotor angle, rad.
    pub delta: f64,
    /// Speed deviation from synchronous speed, rad/s.
    pub omega_dev: f64,
}

/// Fixed-magnitude voltage source behind the reduced network. Machines
/// rotate it with their rotor angle; infinite buses keep `emf_angle0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalSource {
    pub emf_mag: f64,
    pub emf_angle0: f64,
}

impl InternalSource {
    pub fn phasor(&self, delta: f64) -> Complex {
        Complex::from_polar(self.emf_mag, delta)
    }
}

/// `E' = V + j x'd I` with `I = conj(S / V)`.
pub fn init_classical_gen(
    gen: &GenUnit,
    v_terminal: Complex,
    s_out: Complex,
) -> Result<(InternalSource, MachineState), MachineError> {
    if v_terminal.norm() == 0.0 {
        return Err(MachineError::ZeroTerminalVoltage(gen.id));
    }
    let current = (s_out / v_terminal).conj();
    let emf = v_terminal + Complex::new(0.0, gen.xdp) * current;
    let delta0 = emf.arg();
    Ok((
        InternalSource {
            emf_mag: emf.norm(),
            emf_angle0: delta0,
        },
        MachineState {
            delta: delta0,
            omega_dev: 0.0,
        },
    ))
}

/// `Pe_i = sum_j |E_i||E_j| (G_ij cos d_ij + B_ij sin d_ij)` over a matrix
/// reduced to the source nodes.
pub fn electrical_power(deltas: &[f64], sources: &[InternalSource], y_red: &YbusMatrix) -> Result<Vec<f64>, MachineError> {
    let n = sources.len();
    if deltas.len() != n || y_red.dim() != n {
        return Err(MachineError::DimensionMismatch {
            angles: deltas.len(),
            sources: n,
            matrix: y_red.dim(),
        });
    }
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let y = y_red.y[(i, j)];
                    let d = deltas[i] - deltas[j];
                    sources[i].emf_mag * sources[j].emf_mag * (y.re * d.cos() + y.im * d.sin())
                })
                .sum()
        })
        .collect())
}

/// Swing equation right-hand side: `(d delta/dt, d omega/dt)`.
pub fn swing_rhs(state: &MachineState, gen: &GenUnit, pe: f64, omega_s: f64) -> (f64, f64) {
    let accel = omega_s / (2.0 * gen.h) * (gen.pm - pe - gen.d * state.omega_dev / omega_s);
    (state.omega_dev, accel)
}
