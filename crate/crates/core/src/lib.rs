//! Multi-machine transient stability for islanded industrial microgrids.
//!
//! The crate is organised bottom-up:
//!
//! - [`netcase`]: case files, validation, nodal admittance assembly,
//!   Newton power flow and Kron reduction.
//! - [`machine`]: classical synchronous machine (EMF behind transient
//!   reactance) and the swing equation.
//! - [`pvmodel`]: single-stage PV array, MPPT, DC-link and the
//!   current-limited inverter injection.
//! - [`eac`]: closed-form single-machine results (fault-on trajectory,
//!   clearing time, equal-area critical angle).
//! - [`simengine`]: event-driven RK4 time-domain simulation and the
//!   stability classifier.
//! - [`cctstudy`]: critical clearing time search and the PV share,
//!   layout comparison and fault-current studies.

pub mod cases;
pub mod cctstudy;
pub mod eac;
pub mod machine;
pub mod netcase;
pub mod pvmodel;
pub mod simengine;

pub use cctstudy::{
    compare_topologies, fault_current_probe, find_cct_bisect, find_cct_sweep, sweep_pv_share,
    CctOutcome, CctResult, FaultProbe, StudyConfig, StudyError, StudyRow, Trial,
};
pub use eac::{EacError, SmibSpec};
pub use machine::{InternalSource, MachineState};
pub use netcase::{
    load_case, run_powerflow, validate_case, Branch, Bus, BusId, BusKind, Case, CaseError,
    Diagnostic, GenUnit, PowerflowSolution, PvUnit, StaticLoad, YbusMatrix,
};
pub use pvmodel::{PvError, PvParams, PvState};
pub use simengine::{
    classify_stability, simulate, ElementRef, Scenario, SimConfig, SimError, SimResult, Verdict,
};

/// Complex per-unit quantity.
pub type Complex = num_complex::Complex64;
