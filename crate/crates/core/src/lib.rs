//! Day-ahead capacitor dispatch planning for medium-voltage distribution
//! feeders.
//!
//! The crate models a radial feeder supplied from a single slack bus, solves
//! AC power flow with voltage-dependent (exponential) loads and switched
//! capacitor banks, prices the resulting energy exchange against retail and
//! wholesale tariffs, and searches the integer capacitor switching space for
//! the 24-hour schedule that maximizes the distribution company's profit.
//!
//! Modules follow the pipeline:
//!
//! - [`net`] — static network data, per-unit conversion, Y-bus construction
//! - [`load`] — consumer classes, exponential load model, hourly peak scaling
//! - [`powerflow`] — Newton-Raphson polar power flow with load/capacitor terms
//! - [`economics`] — hourly revenue, wholesale purchase cost, daily profit
//! - [`dispatch`] — per-hour capacitor optimization and schedule assembly
//! - [`io`] — dataset files, the bundled 13-bus feeder, report export

pub mod dispatch;
pub mod economics;
pub mod io;
pub mod load;
pub mod net;
pub mod powerflow;

pub use dispatch::{
    optimize_day, DispatchError, DispatchOptions, HourlyDispatch, Method, Schedule,
};
pub use economics::{DayTotals, HourlyEconomics, PriceSchedule, SlackDecomposition};
pub use io::{bundled_khodabandelu, load_dataset, Dataset};
pub use load::{Bus, ConsumerClass, HourlyLoads, LoadModelParams, LoadProfile};
pub use net::{build_ybus, AdmittanceMatrix, BusId, Line, Network, PerUnitBase};
pub use powerflow::{
    solve_powerflow, CapacitorBank, CapacitorConfig, PowerFlowSolution, PowerFlowState,
    SolverOptions,
};
