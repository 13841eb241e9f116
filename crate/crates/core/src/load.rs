//! Consumer classification and the voltage-dependent exponential load model.
//!
//! Each non-slack bus carries one consumer class whose demand at nominal
//! voltage is scaled by an hourly percent-of-peak profile and then bent by
//! the bus voltage: `p = p0 * v^k1`, `q = q0 * v^k2`. The constant-power,
//! constant-current, and constant-impedance models are the `k = 0, 1, 2`
//! special cases.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{BusId, Network};
use crate::powerflow::CapacitorBank;

pub const HOURS: usize = 24;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum ConsumerClass {
    Industrial,
    Residential,
    Commercial,
    /// Class with caller-supplied exponents; the canonical textbook models
    /// are available as [`LoadModelParams`] constants.
    Custom,
}

impl fmt::Display for ConsumerClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConsumerClass::Industrial => "industrial",
            ConsumerClass::Residential => "residential",
            ConsumerClass::Commercial => "commercial",
            ConsumerClass::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Exponents of the voltage-dependent load model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadModelParams {
    pub k1: f64,
    pub k2: f64,
}

impl LoadModelParams {
    pub const CONSTANT_POWER: Self = Self { k1: 0.0, k2: 0.0 };
    pub const CONSTANT_CURRENT: Self = Self { k1: 1.0, k2: 1.0 };
    pub const CONSTANT_IMPEDANCE: Self = Self { k1: 2.0, k2: 2.0 };
    pub const EXPONENTIAL: Self = Self { k1: 1.38, k2: 3.22 };
}

#[derive(Debug, Error, PartialEq)]
pub enum LoadModelError {
    #[error("custom consumer class requires explicit k1/k2 exponents")]
    MissingCustomParams,
    #[error("hour index {t} out of range 1..=24")]
    HourOutOfRange { t: usize },
    #[error("load profile has no row for class {class}")]
    MissingProfileClass { class: ConsumerClass },
    #[error("profile percentage {value} for class {class} outside [0, 100]")]
    PercentOutOfRange { class: ConsumerClass, value: f64 },
    #[error("voltage {v} outside the load model domain (v > 0)")]
    VoltageDomain { v: f64 },
}

/// Standard exponents per consumer class.
///
/// `Custom` has no canonical values and must be configured explicitly, so it
/// is an error here.
pub fn params_for_class(class: ConsumerClass) -> Result<LoadModelParams, LoadModelError> {
    match class {
        ConsumerClass::Industrial => Ok(LoadModelParams { k1: 0.18, k2: 6.0 }),
        ConsumerClass::Residential => Ok(LoadModelParams { k1: 0.92, k2: 4.04 }),
        ConsumerClass::Commercial => Ok(LoadModelParams { k1: 1.51, k2: 3.04 }),
        ConsumerClass::Custom => Err(LoadModelError::MissingCustomParams),
    }
}

/// A network bus: identity, consumer class and exponents, per-unit peak
/// demand, permissible voltage band, and an optional switched capacitor bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub class: ConsumerClass,
    pub params: LoadModelParams,
    pub p0_peak: f64,
    pub q0_peak: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    pub bank: Option<CapacitorBank>,
}

/// Percent-of-peak consumption per hour and consumer class, 24 rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    percent: BTreeMap<ConsumerClass, [f64; HOURS]>,
}

impl LoadProfile {
    pub fn new(
        percent: BTreeMap<ConsumerClass, [f64; HOURS]>,
    ) -> Result<Self, LoadModelError> {
        for (&class, row) in &percent {
            for &value in row {
                if !(0.0..=100.0).contains(&value) {
                    return Err(LoadModelError::PercentOutOfRange { class, value });
                }
            }
        }
        Ok(Self { percent })
    }

    /// Percent of peak for `class` at hour `t` (1-based).
    pub fn percent(&self, t: usize, class: ConsumerClass) -> Result<f64, LoadModelError> {
        if !(1..=HOURS).contains(&t) {
            return Err(LoadModelError::HourOutOfRange { t });
        }
        self.percent
            .get(&class)
            .map(|row| row[t - 1])
            .ok_or(LoadModelError::MissingProfileClass { class })
    }

    pub fn classes(&self) -> impl Iterator<Item = ConsumerClass> + '_ {
        self.percent.keys().copied()
    }
}

/// Nominal-voltage demand of every bus at one hour, in network bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyLoads {
    pub t: usize,
    p0: Vec<f64>,
    q0: Vec<f64>,
}

impl HourlyLoads {
    pub fn n_buses(&self) -> usize {
        self.p0.len()
    }

    /// (p0, q0) of the bus at position `idx` in the network bus list.
    pub fn at(&self, idx: usize) -> (f64, f64) {
        (self.p0[idx], self.q0[idx])
    }
}

/// Scales a bus's peak demand to hour `t` using its class profile row.
///
/// Zero-peak buses (the slack) scale to zero without needing a profile row.
pub fn scale_to_hour(
    bus: &Bus,
    profile: &LoadProfile,
    t: usize,
) -> Result<(f64, f64), LoadModelError> {
    if !(1..=HOURS).contains(&t) {
        return Err(LoadModelError::HourOutOfRange { t });
    }
    if bus.p0_peak == 0.0 && bus.q0_peak == 0.0 {
        return Ok((0.0, 0.0));
    }
    // fraction first so a 100% hour returns the peak bit-for-bit
    let frac = profile.percent(t, bus.class)? / 100.0;
    Ok((bus.p0_peak * frac, bus.q0_peak * frac))
}

/// Applies [`scale_to_hour`] across a network.
pub fn loads_at_hour(
    network: &Network,
    profile: &LoadProfile,
    t: usize,
) -> Result<HourlyLoads, LoadModelError> {
    let mut p0 = Vec::with_capacity(network.n_buses());
    let mut q0 = Vec::with_capacity(network.n_buses());
    for bus in &network.buses {
        let (p, q) = scale_to_hour(bus, profile, t)?;
        p0.push(p);
        q0.push(q);
    }
    Ok(HourlyLoads { t, p0, q0 })
}

/// Demand drawn at voltage `v`: `(p0 * v^k1, q0 * v^k2)`.
pub fn load_power(
    p0: f64,
    q0: f64,
    v: f64,
    params: &LoadModelParams,
) -> Result<(f64, f64), LoadModelError> {
    if v.is_nan() || v <= 0.0 {
        return Err(LoadModelError::VoltageDomain { v });
    }
    Ok(eval_load(p0, q0, v, params))
}

/// Shared evaluation path; the solver calls this after guarding v > 0 so
/// solution fields and [`load_power`] agree bit for bit.
pub(crate) fn eval_load(p0: f64, q0: f64, v: f64, params: &LoadModelParams) -> (f64, f64) {
    (p0 * v.powf(params.k1), q0 * v.powf(params.k2))
}

/// Voltage sensitivity of the load model: `(k1 p0 v^(k1-1), k2 q0 v^(k2-1))`.
pub fn load_power_derivative(
    p0: f64,
    q0: f64,
    v: f64,
    params: &LoadModelParams,
) -> Result<(f64, f64), LoadModelError> {
    if v.is_nan() || v <= 0.0 {
        return Err(LoadModelError::VoltageDomain { v });
    }
    Ok(eval_load_derivative(p0, q0, v, params))
}

pub(crate) fn eval_load_derivative(
    p0: f64,
    q0: f64,
    v: f64,
    params: &LoadModelParams,
) -> (f64, f64) {
    let dp = if params.k1 == 0.0 {
        0.0
    } else {
        params.k1 * p0 * v.powf(params.k1 - 1.0)
    };
    let dq = if params.k2 == 0.0 {
        0.0
    } else {
        params.k2 * q0 * v.powf(params.k2 - 1.0)
    };
    (dp, dq)
}
