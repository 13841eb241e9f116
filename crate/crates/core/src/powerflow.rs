//! Newton-Raphson AC power flow in polar form.
//!
//! The balance equations at every non-slack bus i equate the voltage-bent
//! demand and capacitor injection with the network flow terms:
//!
//! ```text
//! dP_i = -p0_i v_i^k1            - sum_j v_i v_j Y_ij cos(d_i - d_j - theta_ij)
//! dQ_i = -q0_i v_i^k2 + v_i^2 B_i - sum_j v_i v_j Y_ij sin(d_i - d_j - theta_ij)
//! ```
//!
//! where `B_i` is the switched capacitor susceptance at bus i. The residual
//! vector stacks all dP then all dQ in ascending bus order; the unknowns are
//! the non-slack angles then magnitudes in the same order. The Jacobian is
//! analytic, including the load-model terms `k p0 v^(k-1)` and the capacitor
//! term `2 v B` on the dQ/dv diagonal.
//!
//! The slack bus is pinned to the configured reference voltage at angle
//! zero; its power exchange is recovered from its own balance rows after
//! convergence (positive = import from the upstream grid).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::load::{eval_load, eval_load_derivative, HourlyLoads};
use crate::net::{line_to_pu, AdmittanceMatrix, BusId, Network};

/// Switched capacitor bank: identical units of `c_microfarad` each, up to
/// `n_max` connected at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorBank {
    pub c_microfarad: f64,
    pub n_max: u32,
}

impl CapacitorBank {
    /// Per-unit susceptance of one unit: `2 pi f C * z_base`.
    pub fn b_pu_base(&self, frequency_hz: f64, z_base_ohm: f64) -> f64 {
        2.0 * PI * frequency_hz * (self.c_microfarad * 1e-6) * z_base_ohm
    }
}

/// Integer unit counts per capacitor bus for one hour. Keys must be exactly
/// the capacitor buses of the network the config is used with.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct CapacitorConfig {
    counts: BTreeMap<BusId, u32>,
}

impl CapacitorConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: BTreeMap<BusId, u32>) -> Self {
        Self { counts }
    }

    /// All capacitor buses of `network` switched off.
    pub fn all_off(network: &Network) -> Self {
        Self {
            counts: network.capacitor_buses().map(|(id, _)| (id, 0)).collect(),
        }
    }

    pub fn count(&self, bus: BusId) -> u32 {
        self.counts.get(&bus).copied().unwrap_or(0)
    }

    pub fn set(&mut self, bus: BusId, n: u32) {
        self.counts.insert(bus, n);
    }

    pub fn iter(&self) -> impl Iterator<Item = (BusId, u32)> + '_ {
        self.counts.iter().map(|(&b, &n)| (b, n))
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Checks the config against a network: keys are exactly the capacitor
    /// buses and every count is within its bank bound.
    pub fn validate(&self, network: &Network) -> Result<(), PowerFlowError> {
        for (bus, _) in self.iter() {
            let bank = network.bus(bus).and_then(|b| b.bank.as_ref());
            if bank.is_none() {
                return Err(PowerFlowError::ConfigUnknownBus { bus });
            }
        }
        for (bus, bank) in network.capacitor_buses() {
            match self.counts.get(&bus) {
                None => return Err(PowerFlowError::ConfigMissingBus { bus }),
                Some(&n) if n > bank.n_max => {
                    return Err(PowerFlowError::CapCountOutOfBounds {
                        bus: Some(bus),
                        n,
                        n_max: bank.n_max,
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for CapacitorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.counts.is_empty() {
            return f.write_str("-");
        }
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|(bus, n)| format!("{bus}={n}"))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Reactive power injected by `n` units of a bank at voltage `v`, in per
/// unit, injection-positive (capacitors supply reactive power to the bus).
pub fn cap_injection(
    v: f64,
    bank: &CapacitorBank,
    n: u32,
    frequency_hz: f64,
    z_base_ohm: f64,
) -> Result<f64, PowerFlowError> {
    if n > bank.n_max {
        return Err(PowerFlowError::CapCountOutOfBounds {
            bus: None,
            n,
            n_max: bank.n_max,
        });
    }
    Ok(v * v * bank.b_pu_base(frequency_hz, z_base_ohm) * n as f64)
}

/// Voltage magnitudes and angles per bus, in network bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowState {
    pub v_pu: Vec<f64>,
    pub delta_rad: Vec<f64>,
}

impl PowerFlowState {
    /// Flat start: v = 1, delta = 0 everywhere except the pinned slack.
    pub fn flat(network: &Network) -> Self {
        let n = network.n_buses();
        let mut v_pu = vec![1.0; n];
        v_pu[network.slack_index()] = network.slack_voltage_pu;
        Self {
            v_pu,
            delta_rad: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Start {
    #[default]
    Flat,
    Warm(PowerFlowState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the infinity norm of the residual, in pu.
    /// The 1e-10 default keeps the feeder-wide power balance closed to
    /// better than 1e-8 even after per-bus residuals accumulate.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub start: Start,
    /// Halve the Newton step (up to 10 times) whenever the residual norm
    /// would increase. Off by default; the bundled feeder never needs it.
    pub line_search: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 50,
            start: Start::Flat,
            line_search: false,
        }
    }
}

/// Converged (or explicitly diverged) operating point with the recomputed
/// consumed powers, capacitor injections, and slack exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub state: PowerFlowState,
    pub p_consumed: Vec<f64>,
    pub q_consumed: Vec<f64>,
    pub q_cap: Vec<f64>,
    pub p_slack_pu: f64,
    pub q_slack_pu: f64,
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("solver options invalid: {reason}")]
    InvalidOptions { reason: String },
    #[error("dimension mismatch: {reason}")]
    DimensionMismatch { reason: String },
    #[error(
        "capacitor count {n} exceeds the bank bound {n_max}{}",
        bus.map(|b| format!(" at bus {b}")).unwrap_or_default()
    )]
    CapCountOutOfBounds {
        bus: Option<BusId>,
        n: u32,
        n_max: u32,
    },
    #[error("config names bus {bus}, which carries no capacitor bank")]
    ConfigUnknownBus { bus: BusId },
    #[error("config is missing capacitor bus {bus}")]
    ConfigMissingBus { bus: BusId },
    #[error("warm start rejected: {reason}")]
    InvalidStart { reason: String },
    #[error("linear solve failed: jacobian singular at iteration {iteration}")]
    SingularJacobian {
        iteration: usize,
        state: PowerFlowState,
        max_residual: f64,
    },
    #[error("operation requires a converged solution (max residual {max_residual:e})")]
    Unconverged { max_residual: f64 },
}

/// Per-solve scaffolding shared by the mismatch, Jacobian, and fill steps.
struct Problem<'a> {
    network: &'a Network,
    ybus: &'a AdmittanceMatrix,
    loads: &'a HourlyLoads,
    /// Non-slack bus positions, ascending.
    free: Vec<usize>,
    /// Per-bus susceptance of one capacitor unit (0 where no bank).
    bank_b: Vec<f64>,
    /// Per-bus connected unit count as f64.
    ncap: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(
        network: &'a Network,
        ybus: &'a AdmittanceMatrix,
        loads: &'a HourlyLoads,
        config: &CapacitorConfig,
    ) -> Self {
        let n = network.n_buses();
        assert_eq!(ybus.n(), n, "ybus dimension must match the network");
        assert_eq!(loads.n_buses(), n, "loads dimension must match the network");
        let z_base = network.base.z_base_ohm();
        let slack = network.slack_index();
        let free = (0..n).filter(|&i| i != slack).collect();
        let mut bank_b = vec![0.0; n];
        let mut ncap = vec![0.0; n];
        for (i, bus) in network.buses.iter().enumerate() {
            if let Some(bank) = &bus.bank {
                bank_b[i] = bank.b_pu_base(network.frequency_hz, z_base);
                ncap[i] = config.count(bus.id) as f64;
            }
        }
        Self {
            network,
            ybus,
            loads,
            free,
            bank_b,
            ncap,
        }
    }

    /// Network flow terms (P_calc, Q_calc) at bus `i` for `state`.
    ///
    /// Evaluated as `sum_j v_i v_j (G cos d_ij + B sin d_ij)` and
    /// `sum_j v_i v_j (G sin d_ij - B cos d_ij)`, the expansion of
    /// `Y cos(d_ij - theta)` / `Y sin(d_ij - theta)` through G = Y cos(theta),
    /// B = Y sin(theta). This form cancels exactly at the no-flow point.
    fn injection(&self, state: &PowerFlowState, i: usize) -> (f64, f64) {
        let n = self.network.n_buses();
        let vi = state.v_pu[i];
        let di = state.delta_rad[i];
        let mut p = 0.0;
        let mut q = 0.0;
        for j in 0..n {
            let y = self.ybus.entry(i, j);
            let (s, c) = (di - state.delta_rad[j]).sin_cos();
            let w = vi * state.v_pu[j];
            p += w * (y.re * c + y.im * s);
            q += w * (y.re * s - y.im * c);
        }
        (p, q)
    }

    fn mismatch(&self, state: &PowerFlowState) -> DVector<f64> {
        let m = self.free.len();
        let mut r = DVector::zeros(2 * m);
        for (a, &i) in self.free.iter().enumerate() {
            let v = state.v_pu[i];
            let (p0, q0) = self.loads.at(i);
            let params = &self.network.buses[i].params;
            let (p_load, q_load) = eval_load(p0, q0, v, params);
            let q_cap = v * v * self.bank_b[i] * self.ncap[i];
            let (p_calc, q_calc) = self.injection(state, i);
            r[a] = -p_load - p_calc;
            r[m + a] = -q_load + q_cap - q_calc;
        }
        r
    }

    fn jacobian(&self, state: &PowerFlowState) -> DMatrix<f64> {
        let n = self.network.n_buses();
        let m = self.free.len();
        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (a, &i) in self.free.iter().enumerate() {
            let vi = state.v_pu[i];
            let di = state.delta_rad[i];
            let (p0, q0) = self.loads.at(i);
            let params = &self.network.buses[i].params;
            let (dp_load, dq_load) = eval_load_derivative(p0, q0, vi, params);

            for (b, &j) in self.free.iter().enumerate() {
                if j == i {
                    // diagonal: differentiate the full sums with respect to
                    // this bus's own angle and magnitude
                    let yii = self.ybus.entry(i, i);
                    let mut dp_dd = 0.0;
                    let mut dq_dd = 0.0;
                    let mut dp_dv = 2.0 * vi * yii.re;
                    let mut dq_dv = -2.0 * vi * yii.im;
                    for k in 0..n {
                        if k == i {
                            continue;
                        }
                        let y = self.ybus.entry(i, k);
                        let (s, c) = (di - state.delta_rad[k]).sin_cos();
                        let hp = y.re * c + y.im * s;
                        let hq = y.re * s - y.im * c;
                        let vk = state.v_pu[k];
                        dp_dd += -vi * vk * hq;
                        dq_dd += vi * vk * hp;
                        dp_dv += vk * hp;
                        dq_dv += vk * hq;
                    }
                    jac[(a, b)] = -dp_dd;
                    jac[(a, m + b)] = -dp_dv - dp_load;
                    jac[(m + a, b)] = -dq_dd;
                    jac[(m + a, m + b)] =
                        -dq_dv - dq_load + 2.0 * vi * self.bank_b[i] * self.ncap[i];
                } else {
                    let y = self.ybus.entry(i, j);
                    let (s, c) = (di - state.delta_rad[j]).sin_cos();
                    let hp = y.re * c + y.im * s;
                    let hq = y.re * s - y.im * c;
                    let vj = state.v_pu[j];
                    jac[(a, b)] = -(vi * vj * hq);
                    jac[(a, m + b)] = -(vi * hp);
                    jac[(m + a, b)] = -(-vi * vj * hp);
                    jac[(m + a, m + b)] = -(vi * hq);
                }
            }
        }
        jac
    }

    /// Builds the solution record at `state`, recomputing consumed powers
    /// from the load model so nothing stale is carried over.
    fn complete(
        &self,
        state: PowerFlowState,
        iterations: usize,
        max_residual: f64,
        converged: bool,
    ) -> PowerFlowSolution {
        let n = self.network.n_buses();
        let mut p_consumed = vec![0.0; n];
        let mut q_consumed = vec![0.0; n];
        let mut q_cap = vec![0.0; n];
        for (i, bus) in self.network.buses.iter().enumerate() {
            let (p0, q0) = self.loads.at(i);
            let v = state.v_pu[i];
            let (p, q) = eval_load(p0, q0, v, &bus.params);
            p_consumed[i] = p;
            q_consumed[i] = q;
            q_cap[i] = v * v * self.bank_b[i] * self.ncap[i];
        }
        let slack = self.network.slack_index();
        let (p_slack_pu, q_slack_pu) = self.injection(&state, slack);
        PowerFlowSolution {
            state,
            p_consumed,
            q_consumed,
            q_cap,
            p_slack_pu,
            q_slack_pu,
            iterations,
            max_residual,
            converged,
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.amax()
    }
}

/// Power and reactive mismatch at every non-slack bus: all dP entries then
/// all dQ entries, ascending bus order.
///
/// Panics if the state, Y-bus, or loads dimensions disagree with the
/// network; bound checking of `config` is the solver's job.
pub fn mismatch(
    state: &PowerFlowState,
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    config: &CapacitorConfig,
) -> DVector<f64> {
    assert_eq!(state.v_pu.len(), network.n_buses());
    Problem::new(network, ybus, loads, config).mismatch(state)
}

/// Analytic partial derivatives of [`mismatch`] with respect to the
/// non-slack angles then magnitudes, in mismatch order.
pub fn jacobian(
    state: &PowerFlowState,
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    config: &CapacitorConfig,
) -> DMatrix<f64> {
    assert_eq!(state.v_pu.len(), network.n_buses());
    Problem::new(network, ybus, loads, config).jacobian(state)
}

/// Solves the power flow by Newton-Raphson iteration.
///
/// Convergence means the residual infinity norm is at or below
/// `options.tolerance`. Non-convergence within `options.max_iterations` is
/// not an error: the last physical iterate is returned with
/// `converged = false` and its residual, so callers can inspect how far the
/// solve got. A singular linear solve is an error naming the iteration.
pub fn solve_powerflow(
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    config: &CapacitorConfig,
    options: &SolverOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    if options.tolerance.is_nan() || options.tolerance <= 0.0 {
        return Err(PowerFlowError::InvalidOptions {
            reason: format!("tolerance must be positive, got {}", options.tolerance),
        });
    }
    if options.max_iterations < 1 {
        return Err(PowerFlowError::InvalidOptions {
            reason: "max_iterations must be at least 1".into(),
        });
    }
    let n = network.n_buses();
    if ybus.n() != n {
        return Err(PowerFlowError::DimensionMismatch {
            reason: format!("ybus is {}x{0} but the network has {n} buses", ybus.n()),
        });
    }
    if loads.n_buses() != n {
        return Err(PowerFlowError::DimensionMismatch {
            reason: format!("loads cover {} buses, network has {n}", loads.n_buses()),
        });
    }
    config.validate(network)?;

    let slack = network.slack_index();
    let mut state = match &options.start {
        Start::Flat => PowerFlowState::flat(network),
        Start::Warm(warm) => {
            if warm.v_pu.len() != n || warm.delta_rad.len() != n {
                return Err(PowerFlowError::InvalidStart {
                    reason: "state dimensions do not match the network".into(),
                });
            }
            if warm.v_pu.iter().any(|&v| !v.is_finite() || v <= 0.0) {
                return Err(PowerFlowError::InvalidStart {
                    reason: "voltage magnitudes must be positive and finite".into(),
                });
            }
            warm.clone()
        }
    };
    // pin the slack reference regardless of the start
    state.v_pu[slack] = network.slack_voltage_pu;
    state.delta_rad[slack] = 0.0;

    let problem = Problem::new(network, ybus, loads, config);
    let m = problem.free.len();

    let mut residual = problem.mismatch(&state);
    let mut res_norm = inf_norm(&residual);
    let mut iterations = 0;

    loop {
        if res_norm.is_finite() && res_norm <= options.tolerance {
            return Ok(problem.complete(state, iterations, res_norm, true));
        }
        if !res_norm.is_finite() || iterations >= options.max_iterations {
            return Ok(problem.complete(state, iterations, res_norm, false));
        }

        let jac = problem.jacobian(&state);
        let rhs = -&residual;
        let delta = match jac.lu().solve(&rhs) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ => {
                return Err(PowerFlowError::SingularJacobian {
                    iteration: iterations + 1,
                    state,
                    max_residual: res_norm,
                })
            }
        };

        let apply = |step: f64| -> PowerFlowState {
            let mut next = state.clone();
            for (k, &i) in problem.free.iter().enumerate() {
                next.delta_rad[i] += step * delta[k];
                next.v_pu[i] += step * delta[m + k];
            }
            next
        };

        let mut next = apply(1.0);
        let mut next_residual = problem.mismatch(&next);
        let mut next_norm = inf_norm(&next_residual);
        if options.line_search {
            let mut step = 1.0;
            let mut halvings = 0;
            while halvings < 10 && !(next_norm.is_finite() && next_norm <= res_norm) {
                step *= 0.5;
                next = apply(step);
                next_residual = problem.mismatch(&next);
                next_norm = inf_norm(&next_residual);
                halvings += 1;
            }
        }

        // reject steps that leave the physical domain: report divergence at
        // the last physical iterate instead of handing back garbage
        if next.v_pu.iter().any(|&v| !v.is_finite() || v <= 0.0) || !next_norm.is_finite() {
            return Ok(problem.complete(state, iterations, res_norm, false));
        }

        state = next;
        residual = next_residual;
        res_norm = inf_norm(&residual);
        iterations += 1;
    }
}

/// Builds an explicitly-unconverged solution record at an arbitrary
/// physical state; dispatch uses this to keep solver failures inspectable.
pub(crate) fn solution_at(
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    config: &CapacitorConfig,
    state: PowerFlowState,
    iterations: usize,
    max_residual: f64,
) -> PowerFlowSolution {
    Problem::new(network, ybus, loads, config).complete(state, iterations, max_residual, false)
}

/// Total series (I^2 R) line losses of a converged solution, in pu.
pub fn losses(solution: &PowerFlowSolution, network: &Network) -> Result<f64, PowerFlowError> {
    if !solution.converged {
        return Err(PowerFlowError::Unconverged {
            max_residual: solution.max_residual,
        });
    }
    let mut total = 0.0;
    for line in &network.lines {
        let i = network.index_of(line.from).expect("validated network");
        let j = network.index_of(line.to).expect("validated network");
        let z = line_to_pu(line, &network.base);
        let vi = Complex64::from_polar(solution.state.v_pu[i], solution.state.delta_rad[i]);
        let vj = Complex64::from_polar(solution.state.v_pu[j], solution.state.delta_rad[j]);
        let current = (vi - vj) * z.inv();
        total += current.norm_sqr() * z.re;
    }
    Ok(total)
}
