//! Serde document types for the three dataset files (network, prices,
//! profile). Field-level defaults live here; semantic validation happens in
//! the loader.

use std::collections::BTreeMap;

use serde::Deserialize;

pub(crate) const SCHEMA_VERSION: u32 = 1;

fn default_slack_voltage() -> f64 {
    1.0
}

fn default_frequency() -> f64 {
    50.0
}

fn default_cap() -> Series {
    Series::Flat(10.0)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct NetworkDoc {
    pub schema_version: u32,
    #[serde(default)]
    pub provenance: Option<String>,
    #[serde(default = "default_slack_voltage")]
    pub slack_voltage_pu: f64,
    pub base: BaseDoc,
    #[serde(default, rename = "bus")]
    pub buses: Vec<BusDoc>,
    #[serde(default, rename = "line")]
    pub lines: Vec<LineDoc>,
    #[serde(default, rename = "capacitor")]
    pub capacitors: Vec<CapacitorDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct BaseDoc {
    pub mva: f64,
    pub kv: f64,
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct BusDoc {
    pub id: u32,
    #[serde(default)]
    pub slack: bool,
    #[serde(default)]
    pub class: Option<String>,
    #[serde(default)]
    pub p_peak_pu: Option<f64>,
    #[serde(default)]
    pub q_peak_pu: Option<f64>,
    #[serde(default)]
    pub v_min_pu: Option<f64>,
    #[serde(default)]
    pub v_max_pu: Option<f64>,
    #[serde(default)]
    pub k1: Option<f64>,
    #[serde(default)]
    pub k2: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct LineDoc {
    pub from: u32,
    pub to: u32,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CapacitorDoc {
    pub bus: u32,
    pub unit_microfarad: f64,
    pub max_units: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PricesDoc {
    pub schema_version: u32,
    #[serde(default)]
    pub provenance: Option<String>,
    pub retail: BTreeMap<String, RetailDoc>,
    pub wholesale: WholesaleDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RetailDoc {
    pub active_usd_per_mwh: Series,
    pub reactive_usd_per_mvarh: Series,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct WholesaleDoc {
    pub active_usd_per_mwh: Series,
    pub reactive_usd_per_mvarh: Series,
    #[serde(default = "default_cap")]
    pub p_import_max_pu: Series,
    #[serde(default = "default_cap")]
    pub q_import_max_pu: Series,
}

/// A scalar applies to all 24 hours; an array must list all 24.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub(crate) enum Series {
    Flat(f64),
    Hourly(Vec<f64>),
}

impl Series {
    pub(crate) fn to_hours(&self, what: &str) -> Result<[f64; 24], String> {
        match self {
            Series::Flat(v) => Ok([*v; 24]),
            Series::Hourly(values) => {
                if values.len() != 24 {
                    return Err(format!(
                        "{what}: expected 24 hourly values, got {}",
                        values.len()
                    ));
                }
                let mut out = [0.0; 24];
                out.copy_from_slice(values);
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ProfileDoc {
    pub schema_version: u32,
    #[serde(default)]
    pub provenance: Option<String>,
    pub classes: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Rows beyond the 24-hour day, preserved for provenance and otherwise
    /// ignored.
    #[serde(default)]
    pub extra_rows: Vec<Vec<f64>>,
}
