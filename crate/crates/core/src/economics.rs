//! Hourly and daily money flows: retail revenue from consumers, wholesale
//! purchase cost at the slack exchange, and their difference.
//!
//! The settlement interval is one hour, so per-unit power and per-unit-hour
//! energy coincide numerically; dollars are recovered as
//! `price * p_pu * base_mva * 1h`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::load::{ConsumerClass, HOURS};
use crate::net::Network;
use crate::powerflow::PowerFlowSolution;

/// Retail and wholesale tariffs plus slack purchase caps, all 24-hour rows.
///
/// `ca`/`cr` are $/MWh and $/MVArh retail prices per consumer class; `pm`/`qm`
/// the wholesale purchase prices; the caps bound the feasible import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    ca: BTreeMap<ConsumerClass, [f64; HOURS]>,
    cr: BTreeMap<ConsumerClass, [f64; HOURS]>,
    pm: [f64; HOURS],
    qm: [f64; HOURS],
    p_slack_max: [f64; HOURS],
    q_slack_max: [f64; HOURS],
}

#[derive(Debug, Error, PartialEq)]
pub enum EconError {
    #[error("hour index {t} out of range 1..=24")]
    HourOutOfRange { t: usize },
    #[error("no retail price row for class {class}")]
    MissingClassPrice { class: ConsumerClass },
    #[error("prices must be non-negative, got {value} for {context}")]
    NegativePrice { context: String, value: f64 },
    #[error("slack purchase caps must be positive, got {value} at hour {t}")]
    NonPositiveCap { t: usize, value: f64 },
    #[error("economics require a converged power flow (max residual {max_residual:e})")]
    UnconvergedSolution { max_residual: f64 },
    #[error("expected exactly 24 hourly records, got {got}")]
    WrongHourCount { got: usize },
}

impl PriceSchedule {
    pub fn new(
        ca: BTreeMap<ConsumerClass, [f64; HOURS]>,
        cr: BTreeMap<ConsumerClass, [f64; HOURS]>,
        pm: [f64; HOURS],
        qm: [f64; HOURS],
        p_slack_max: [f64; HOURS],
        q_slack_max: [f64; HOURS],
    ) -> Result<Self, EconError> {
        let check_rows = |rows: &BTreeMap<ConsumerClass, [f64; HOURS]>,
                          what: &str|
         -> Result<(), EconError> {
            for (class, row) in rows {
                for &v in row {
                    if v.is_nan() || v < 0.0 {
                        return Err(EconError::NegativePrice {
                            context: format!("{what} {class}"),
                            value: v,
                        });
                    }
                }
            }
            Ok(())
        };
        check_rows(&ca, "retail active price for")?;
        check_rows(&cr, "retail reactive price for")?;
        for (what, row) in [("wholesale active", &pm), ("wholesale reactive", &qm)] {
            for &v in row {
                if v.is_nan() || v < 0.0 {
                    return Err(EconError::NegativePrice {
                        context: what.to_string(),
                        value: v,
                    });
                }
            }
        }
        for row in [&p_slack_max, &q_slack_max] {
            for (i, &v) in row.iter().enumerate() {
                if v.is_nan() || v <= 0.0 {
                    return Err(EconError::NonPositiveCap { t: i + 1, value: v });
                }
            }
        }
        Ok(Self {
            ca,
            cr,
            pm,
            qm,
            p_slack_max,
            q_slack_max,
        })
    }

    fn hour(t: usize) -> Result<usize, EconError> {
        if (1..=HOURS).contains(&t) {
            Ok(t - 1)
        } else {
            Err(EconError::HourOutOfRange { t })
        }
    }

    pub fn ca(&self, t: usize, class: ConsumerClass) -> Result<f64, EconError> {
        let i = Self::hour(t)?;
        self.ca
            .get(&class)
            .map(|row| row[i])
            .ok_or(EconError::MissingClassPrice { class })
    }

    pub fn cr(&self, t: usize, class: ConsumerClass) -> Result<f64, EconError> {
        let i = Self::hour(t)?;
        self.cr
            .get(&class)
            .map(|row| row[i])
            .ok_or(EconError::MissingClassPrice { class })
    }

    pub fn pm(&self, t: usize) -> Result<f64, EconError> {
        Ok(self.pm[Self::hour(t)?])
    }

    pub fn qm(&self, t: usize) -> Result<f64, EconError> {
        Ok(self.qm[Self::hour(t)?])
    }

    pub fn p_slack_max(&self, t: usize) -> Result<f64, EconError> {
        Ok(self.p_slack_max[Self::hour(t)?])
    }

    pub fn q_slack_max(&self, t: usize) -> Result<f64, EconError> {
        Ok(self.q_slack_max[Self::hour(t)?])
    }

    pub fn retail_classes(&self) -> impl Iterator<Item = ConsumerClass> + '_ {
        self.ca.keys().copied()
    }

    /// Returns a copy with every price (retail and wholesale) multiplied by
    /// `factor`; the purchase caps are left untouched.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.scaled_retail(factor);
        out.pm = self.pm.map(|v| v * factor);
        out.qm = self.qm.map(|v| v * factor);
        out
    }

    /// Returns a copy with only the retail tariffs multiplied by `factor`.
    pub fn scaled_retail(&self, factor: f64) -> Self {
        let scale_map = |m: &BTreeMap<ConsumerClass, [f64; HOURS]>| {
            m.iter()
                .map(|(&c, row)| (c, row.map(|v| v * factor)))
                .collect()
        };
        Self {
            ca: scale_map(&self.ca),
            cr: scale_map(&self.cr),
            pm: self.pm,
            qm: self.qm,
            p_slack_max: self.p_slack_max,
            q_slack_max: self.q_slack_max,
        }
    }
}

/// Slack exchange split into non-negative purchase (pos) and sale (neg)
/// parts: `pos - neg` reconstructs the signed exchange and at most one of
/// the pair is nonzero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackDecomposition {
    pub p_pos: f64,
    pub p_neg: f64,
    pub q_pos: f64,
    pub q_neg: f64,
}

pub fn split_slack(p_slack_pu: f64, q_slack_pu: f64) -> SlackDecomposition {
    SlackDecomposition {
        p_pos: p_slack_pu.max(0.0),
        p_neg: (-p_slack_pu).max(0.0),
        q_pos: q_slack_pu.max(0.0),
        q_neg: (-q_slack_pu).max(0.0),
    }
}

/// One hour of money flow; `profit` is always `revenue - cost`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyEconomics {
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
}

impl HourlyEconomics {
    pub fn new(revenue: f64, cost: f64) -> Self {
        Self {
            revenue,
            cost,
            profit: revenue - cost,
        }
    }

    pub const ZERO: Self = Self {
        revenue: 0.0,
        cost: 0.0,
        profit: 0.0,
    };
}

/// Revenue from selling the consumed active and reactive energy of one hour
/// to the feeder's consumers at their class tariffs.
pub fn revenue_hour(
    solution: &PowerFlowSolution,
    network: &Network,
    prices: &PriceSchedule,
    t: usize,
) -> Result<f64, EconError> {
    if !solution.converged {
        return Err(EconError::UnconvergedSolution {
            max_residual: solution.max_residual,
        });
    }
    PriceSchedule::hour(t)?;
    let base_mva = network.base.base_mva;
    let slack = network.slack_index();
    let mut revenue = 0.0;
    for (i, bus) in network.buses.iter().enumerate() {
        if i == slack {
            continue;
        }
        let ca = prices.ca(t, bus.class)?;
        let cr = prices.cr(t, bus.class)?;
        // energy first, price last: one rounding per money term
        revenue += ca * (solution.p_consumed[i] * base_mva);
        revenue += cr * (solution.q_consumed[i] * base_mva);
    }
    Ok(revenue)
}

/// Wholesale purchase cost of one hour. Only imported (pos) energy is
/// priced; with `sale_credit` the exported remainder earns the same tariff
/// as a credit.
pub fn cost_hour(
    dec: &SlackDecomposition,
    prices: &PriceSchedule,
    t: usize,
    base_mva: f64,
    sale_credit: bool,
) -> Result<f64, EconError> {
    let pm = prices.pm(t)?;
    let qm = prices.qm(t)?;
    let mut cost = pm * (dec.p_pos * base_mva) + qm * (dec.q_pos * base_mva);
    if sale_credit {
        cost -= pm * (dec.p_neg * base_mva) + qm * (dec.q_neg * base_mva);
    }
    Ok(cost)
}

/// Component-wise totals over a 24-hour day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayTotals {
    pub revenue: f64,
    pub cost: f64,
    pub profit: f64,
}

/// Sums 24 hourly records; the daily profit is the difference of the summed
/// revenue and cost so the identity holds exactly.
pub fn profit_day(hours: &[HourlyEconomics]) -> Result<DayTotals, EconError> {
    if hours.len() != HOURS {
        return Err(EconError::WrongHourCount { got: hours.len() });
    }
    let revenue: f64 = hours.iter().map(|h| h.revenue).sum();
    let cost: f64 = hours.iter().map(|h| h.cost).sum();
    Ok(DayTotals {
        revenue,
        cost,
        profit: revenue - cost,
    })
}
