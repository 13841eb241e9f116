//! Per-hour capacitor switching optimization and daily schedule assembly.
//!
//! Hours are uncoupled in the model (no switching-count limits or wear
//! costs), so the day decomposes into 24 independent searches over the
//! integer configuration space. Exhaustive enumeration is exact and is the
//! default; a steepest-ascent local search over the unit neighborhood
//! handles feeders whose configuration count outgrows the enumeration cap.
//!
//! Every evaluated configuration produces a total record: either feasible or
//! carrying machine-readable reasons (divergence, voltage band, import
//! caps). When no configuration is feasible the least-violating one is
//! returned so the whole day stays inspectable.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::economics::{
    cost_hour, profit_day, revenue_hour, split_slack, DayTotals, EconError, HourlyEconomics,
    PriceSchedule,
};
use crate::load::{loads_at_hour, HourlyLoads, LoadModelError, LoadProfile, HOURS};
use crate::net::{build_ybus, AdmittanceMatrix, BusId, Network, NetworkError};
use crate::powerflow::{
    solution_at, solve_powerflow, CapacitorConfig, PowerFlowError, PowerFlowSolution,
    SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exhaustive,
    LocalSearch,
}

#[derive(Debug, Clone)]
pub struct DispatchOptions {
    pub solver: SolverOptions,
    pub method: Method,
    /// Credit exported energy at the wholesale tariff. Off by default: the
    /// cost model prices purchases only.
    pub sale_credit: bool,
    /// Refuse exhaustive enumeration beyond this many configurations.
    pub enumeration_cap: usize,
    /// Worker threads for the 24 independent hours; results are merged in
    /// hour order, so the count never changes the output.
    pub workers: usize,
}

impl Default for DispatchOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            method: Method::Exhaustive,
            sale_credit: false,
            enumeration_cap: 1_000_000,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InfeasibilityReason {
    /// The power flow did not converge for this configuration.
    Divergence { max_residual: f64 },
    /// The linear solve failed outright.
    SolverFailure { detail: String },
    VoltageBand {
        bus: BusId,
        v_pu: f64,
        v_min_pu: f64,
        v_max_pu: f64,
    },
    ActiveImportCap { p_pos_pu: f64, cap_pu: f64 },
    ReactiveImportCap { q_pos_pu: f64, cap_pu: f64 },
}

impl fmt::Display for InfeasibilityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Divergence { max_residual } => {
                write!(f, "divergence: residual {max_residual:e}")
            }
            Self::SolverFailure { detail } => write!(f, "solver failure: {detail}"),
            Self::VoltageBand {
                bus,
                v_pu,
                v_min_pu,
                v_max_pu,
            } => write!(
                f,
                "voltage band: bus {bus} at {v_pu:.6} pu outside [{v_min_pu}, {v_max_pu}]"
            ),
            Self::ActiveImportCap { p_pos_pu, cap_pu } => {
                write!(f, "active import {p_pos_pu:.6} pu exceeds cap {cap_pu} pu")
            }
            Self::ReactiveImportCap { q_pos_pu, cap_pu } => {
                write!(f, "reactive import {q_pos_pu:.6} pu exceeds cap {cap_pu} pu")
            }
        }
    }
}

/// Outcome of one hour: the chosen configuration, its solved operating
/// point, money flow, and the feasibility verdict with reasons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyDispatch {
    pub t: usize,
    pub config: CapacitorConfig,
    pub solution: PowerFlowSolution,
    pub econ: HourlyEconomics,
    pub feasible: bool,
    pub infeasibility_reasons: Vec<InfeasibilityReason>,
    /// Configurations examined to produce this record (1 for a direct
    /// evaluation).
    pub evaluations: usize,
}

/// One row of the evaluation table an optimizer retains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEvaluation {
    pub config: CapacitorConfig,
    pub profit: f64,
    pub feasible: bool,
    /// Worst voltage-band excursion in pu; infinite for failed solves.
    pub violation_pu: f64,
}

/// An hour's chosen dispatch together with the full evaluation table that
/// justifies it.
#[derive(Debug, Clone)]
pub struct HourOptimization {
    pub dispatch: HourlyDispatch,
    pub table: Vec<ConfigEvaluation>,
}

/// 24 hourly dispatches with exact component totals.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub hours: Vec<HourlyDispatch>,
    pub totals: DayTotals,
    pub feasible: bool,
    pub infeasible_hours: Vec<usize>,
    /// Wall-clock per hour, parallel to `hours`. Timing never enters report
    /// bodies; exporters keep it to a metadata sidecar.
    pub hour_wall: Vec<Duration>,
}

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error(
        "{combinations} capacitor configurations exceed the enumeration cap {cap}; \
         use the local-search method instead"
    )]
    EnumerationOverflow { combinations: u128, cap: usize },
    #[error("configuration rejected: {0}")]
    InvalidConfig(PowerFlowError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Load(#[from] LoadModelError),
    #[error(transparent)]
    Econ(#[from] EconError),
    #[error("worker pool: {detail}")]
    Workers { detail: String },
    #[error("hour {t}: {source}")]
    Hour {
        t: usize,
        #[source]
        source: Box<DispatchError>,
    },
}

/// Cartesian product of `0..=n_max` per capacitor bus, in lexicographic
/// order by ascending bus id then ascending count. A network without banks
/// yields the single empty configuration.
pub fn enumerate_configs(
    network: &Network,
    cap: usize,
) -> Result<Vec<CapacitorConfig>, DispatchError> {
    let banks: Vec<(BusId, u32)> = network
        .capacitor_buses()
        .map(|(id, bank)| (id, bank.n_max))
        .collect();
    let mut combinations: u128 = 1;
    for (_, n_max) in &banks {
        combinations = combinations.saturating_mul(*n_max as u128 + 1);
        if combinations > cap as u128 {
            return Err(DispatchError::EnumerationOverflow { combinations, cap });
        }
    }

    let mut out = Vec::with_capacity(combinations as usize);
    let mut counts = vec![0u32; banks.len()];
    loop {
        let mut config = CapacitorConfig::empty();
        for (k, (bus, _)) in banks.iter().enumerate() {
            config.set(*bus, counts[k]);
        }
        out.push(config);

        // odometer increment from the last (highest-id) position
        let mut pos = banks.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if counts[pos] < banks[pos].1 {
                counts[pos] += 1;
                for c in counts.iter_mut().skip(pos + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// Worst voltage-band excursion over all buses in pu, 0 inside the band,
/// infinite when the solve failed.
pub fn band_violation(solution: &PowerFlowSolution, network: &Network) -> f64 {
    if !solution.converged {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (i, bus) in network.buses.iter().enumerate() {
        let v = solution.state.v_pu[i];
        worst = worst.max(bus.v_min_pu - v).max(v - bus.v_max_pu);
    }
    worst.max(0.0)
}

/// Solves one configuration and assembles its total record: power flow,
/// economics, and the feasibility verdict. Failed solves become infeasible
/// records, never errors; only a config violating its bank bounds is
/// rejected up front.
pub fn evaluate_config(
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    prices: &PriceSchedule,
    t: usize,
    config: &CapacitorConfig,
    options: &DispatchOptions,
) -> Result<HourlyDispatch, DispatchError> {
    config
        .validate(network)
        .map_err(DispatchError::InvalidConfig)?;

    let (solution, mut reasons) =
        match solve_powerflow(network, ybus, loads, config, &options.solver) {
            Ok(sol) => (sol, Vec::new()),
            Err(PowerFlowError::SingularJacobian {
                iteration,
                state,
                max_residual,
            }) => {
                let sol =
                    solution_at(network, ybus, loads, config, state, iteration, max_residual);
                let reason = InfeasibilityReason::SolverFailure {
                    detail: format!("jacobian singular at iteration {iteration}"),
                };
                (sol, vec![reason])
            }
            Err(e) => return Err(DispatchError::InvalidConfig(e)),
        };

    let econ = if solution.converged {
        let revenue = revenue_hour(&solution, network, prices, t)?;
        let dec = split_slack(solution.p_slack_pu, solution.q_slack_pu);
        let cost = cost_hour(
            &dec,
            prices,
            t,
            network.base.base_mva,
            options.sale_credit,
        )?;
        HourlyEconomics::new(revenue, cost)
    } else {
        if reasons.is_empty() {
            reasons.push(InfeasibilityReason::Divergence {
                max_residual: solution.max_residual,
            });
        }
        HourlyEconomics::ZERO
    };

    if solution.converged {
        for (i, bus) in network.buses.iter().enumerate() {
            let v = solution.state.v_pu[i];
            if v < bus.v_min_pu || v > bus.v_max_pu {
                reasons.push(InfeasibilityReason::VoltageBand {
                    bus: bus.id,
                    v_pu: v,
                    v_min_pu: bus.v_min_pu,
                    v_max_pu: bus.v_max_pu,
                });
            }
        }
        let dec = split_slack(solution.p_slack_pu, solution.q_slack_pu);
        let p_cap = prices.p_slack_max(t)?;
        if dec.p_pos > p_cap {
            reasons.push(InfeasibilityReason::ActiveImportCap {
                p_pos_pu: dec.p_pos,
                cap_pu: p_cap,
            });
        }
        let q_cap = prices.q_slack_max(t)?;
        if dec.q_pos > q_cap {
            reasons.push(InfeasibilityReason::ReactiveImportCap {
                q_pos_pu: dec.q_pos,
                cap_pu: q_cap,
            });
        }
    }

    Ok(HourlyDispatch {
        t,
        config: config.clone(),
        solution,
        econ,
        feasible: reasons.is_empty(),
        infeasibility_reasons: reasons,
        evaluations: 1,
    })
}

/// Exhaustive per-hour optimization: evaluates every enumerable
/// configuration and returns the feasible one with maximum profit,
/// tie-broken toward the lexicographically smallest configuration. With no
/// feasible configuration the least-violating record is returned, flagged
/// infeasible.
pub fn optimize_hour(
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    prices: &PriceSchedule,
    t: usize,
    options: &DispatchOptions,
) -> Result<HourOptimization, DispatchError> {
    let configs = enumerate_configs(network, options.enumeration_cap)?;
    let mut records = Vec::with_capacity(configs.len());
    let mut table = Vec::with_capacity(configs.len());
    for config in configs {
        let record = evaluate_config(network, ybus, loads, prices, t, &config, options)?;
        table.push(ConfigEvaluation {
            config,
            profit: record.econ.profit,
            feasible: record.feasible,
            violation_pu: band_violation(&record.solution, network),
        });
        records.push(record);
    }

    // enumeration order is lexicographic, so "first strictly better" keeps
    // the lexicographically smallest config on profit ties
    let mut best_feasible: Option<usize> = None;
    for (k, row) in table.iter().enumerate() {
        if row.feasible && best_feasible.is_none_or(|b| row.profit > table[b].profit) {
            best_feasible = Some(k);
        }
    }
    let pick = best_feasible.unwrap_or_else(|| {
        let mut least = 0;
        for (k, row) in table.iter().enumerate().skip(1) {
            if row.violation_pu < table[least].violation_pu {
                least = k;
            }
        }
        least
    });

    let mut dispatch = records[pick].clone();
    dispatch.evaluations = table.len();
    Ok(HourOptimization { dispatch, table })
}

struct Evaluator<'a> {
    network: &'a Network,
    ybus: &'a AdmittanceMatrix,
    loads: &'a HourlyLoads,
    prices: &'a PriceSchedule,
    t: usize,
    options: &'a DispatchOptions,
    seen: BTreeMap<CapacitorConfig, usize>,
    records: Vec<HourlyDispatch>,
    table: Vec<ConfigEvaluation>,
}

impl<'a> Evaluator<'a> {
    fn eval(&mut self, config: &CapacitorConfig) -> Result<usize, DispatchError> {
        if let Some(&idx) = self.seen.get(config) {
            return Ok(idx);
        }
        let record = evaluate_config(
            self.network,
            self.ybus,
            self.loads,
            self.prices,
            self.t,
            config,
            self.options,
        )?;
        let idx = self.records.len();
        self.table.push(ConfigEvaluation {
            config: config.clone(),
            profit: record.econ.profit,
            feasible: record.feasible,
            violation_pu: band_violation(&record.solution, self.network),
        });
        self.records.push(record);
        self.seen.insert(config.clone(), idx);
        Ok(idx)
    }
}

/// Steepest-ascent local search over the one-unit-per-bank neighborhood,
/// deterministic given the seed.
///
/// From a feasible point it moves to the best strictly-improving feasible
/// neighbor until none exists; from an infeasible point it descends the
/// voltage-band violation until it enters the feasible region (or cannot).
pub fn local_search_hour(
    network: &Network,
    ybus: &AdmittanceMatrix,
    loads: &HourlyLoads,
    prices: &PriceSchedule,
    t: usize,
    options: &DispatchOptions,
    seed: &CapacitorConfig,
) -> Result<HourOptimization, DispatchError> {
    seed.validate(network)
        .map_err(DispatchError::InvalidConfig)?;
    let banks: Vec<(BusId, u32)> = network
        .capacitor_buses()
        .map(|(id, bank)| (id, bank.n_max))
        .collect();

    let mut ev = Evaluator {
        network,
        ybus,
        loads,
        prices,
        t,
        options,
        seen: BTreeMap::new(),
        records: Vec::new(),
        table: Vec::new(),
    };

    let mut current = seed.clone();
    let mut current_idx = ev.eval(&current)?;

    loop {
        let mut neighbors = Vec::with_capacity(2 * banks.len());
        for &(bus, n_max) in &banks {
            let n = current.count(bus);
            if n < n_max {
                let mut up = current.clone();
                up.set(bus, n + 1);
                neighbors.push(up);
            }
            if n > 0 {
                let mut down = current.clone();
                down.set(bus, n - 1);
                neighbors.push(down);
            }
        }

        let mut next: Option<usize> = None;
        if ev.records[current_idx].feasible {
            let current_profit = ev.records[current_idx].econ.profit;
            for nb in &neighbors {
                let idx = ev.eval(nb)?;
                let row = &ev.table[idx];
                if !row.feasible || row.profit <= current_profit {
                    continue;
                }
                let better = match next {
                    None => true,
                    Some(b) => {
                        row.profit > ev.table[b].profit
                            || (row.profit == ev.table[b].profit
                                && row.config < ev.table[b].config)
                    }
                };
                if better {
                    next = Some(idx);
                }
            }
        } else {
            let current_violation = ev.table[current_idx].violation_pu;
            for nb in &neighbors {
                let idx = ev.eval(nb)?;
                let row = &ev.table[idx];
                if row.violation_pu >= current_violation {
                    continue;
                }
                let better = match next {
                    None => true,
                    Some(b) => {
                        row.violation_pu < ev.table[b].violation_pu
                            || (row.violation_pu == ev.table[b].violation_pu
                                && row.config < ev.table[b].config)
                    }
                };
                if better {
                    next = Some(idx);
                }
            }
        }

        match next {
            Some(idx) => {
                current = ev.table[idx].config.clone();
                current_idx = idx;
            }
            None => break,
        }
    }

    let mut dispatch = ev.records[current_idx].clone();
    dispatch.evaluations = ev.table.len();
    Ok(HourOptimization {
        dispatch,
        table: ev.table,
    })
}

/// Optimizes all 24 hours independently and assembles the schedule with
/// exact component totals. Hours may run on multiple workers; records are
/// merged in hour order, so the result is identical for any worker count.
pub fn optimize_day(
    network: &Network,
    prices: &PriceSchedule,
    profile: &LoadProfile,
    options: &DispatchOptions,
) -> Result<Schedule, DispatchError> {
    let ybus = build_ybus(network)?;

    let run_hour = |t: usize| -> Result<(HourlyDispatch, Duration), DispatchError> {
        let started = Instant::now();
        let attach = |e: DispatchError| DispatchError::Hour {
            t,
            source: Box::new(e),
        };
        let loads = loads_at_hour(network, profile, t)
            .map_err(DispatchError::Load)
            .map_err(attach)?;
        let opt = match options.method {
            Method::Exhaustive => {
                optimize_hour(network, &ybus, &loads, prices, t, options).map_err(attach)?
            }
            Method::LocalSearch => {
                let seed = CapacitorConfig::all_off(network);
                local_search_hour(network, &ybus, &loads, prices, t, options, &seed)
                    .map_err(attach)?
            }
        };
        Ok((opt.dispatch, started.elapsed()))
    };

    let results: Vec<(HourlyDispatch, Duration)> = if options.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.workers)
            .build()
            .map_err(|e| DispatchError::Workers {
                detail: e.to_string(),
            })?;
        pool.install(|| {
            (1..=HOURS)
                .into_par_iter()
                .map(run_hour)
                .collect::<Result<Vec<_>, _>>()
        })?
    } else {
        (1..=HOURS).map(run_hour).collect::<Result<Vec<_>, _>>()?
    };

    let mut hours = Vec::with_capacity(HOURS);
    let mut hour_wall = Vec::with_capacity(HOURS);
    for (dispatch, wall) in results {
        hours.push(dispatch);
        hour_wall.push(wall);
    }
    let econ: Vec<HourlyEconomics> = hours.iter().map(|h| h.econ).collect();
    let totals = profit_day(&econ)?;
    let infeasible_hours: Vec<usize> = hours
        .iter()
        .filter(|h| !h.feasible)
        .map(|h| h.t)
        .collect();
    Ok(Schedule {
        hours,
        totals,
        feasible: infeasible_hours.is_empty(),
        infeasible_hours,
        hour_wall,
    })
}
