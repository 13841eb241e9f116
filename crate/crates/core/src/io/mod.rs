//! Dataset files, the bundled 13-bus Khodabandelu feeder, and report export.
//!
//! A dataset is three TOML documents: the network (buses, lines, capacitor
//! banks, bases), the prices (retail tariffs per class, wholesale tariff,
//! import caps), and the hourly percent-of-peak profile. Each carries a
//! `schema_version` and a free-text `provenance` note. Loading enforces
//! every structural invariant and cross-references the three files; schema
//! violations are hard errors with file-attributed messages.

mod report;
mod schema;

pub use report::{write_report_csv, write_report_json, ReportRow, ReportTotals, ScheduleReport};

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use thiserror::Error;

use crate::dispatch::Schedule;
use crate::economics::PriceSchedule;
use crate::load::{params_for_class, Bus, ConsumerClass, LoadModelParams, LoadProfile, HOURS};
use crate::net::{
    validate_network, BusId, Diagnostic, DiagnosticCode, Line, Network, PerUnitBase, Severity,
};
use crate::powerflow::CapacitorBank;

use schema::{NetworkDoc, PricesDoc, ProfileDoc, SCHEMA_VERSION};

/// The bundled Khodabandelu feeder files, embedded verbatim.
pub const BUNDLED_NETWORK_TOML: &str = include_str!("../../data/khodabandelu/network.toml");
pub const BUNDLED_PRICES_TOML: &str = include_str!("../../data/khodabandelu/prices.toml");
pub const BUNDLED_PROFILE_TOML: &str = include_str!("../../data/khodabandelu/profile.toml");

/// Free-text provenance notes carried by the three dataset files.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub network: String,
    pub prices: String,
    pub profile: String,
}

/// A loaded, fully cross-validated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub network: Network,
    pub prices: PriceSchedule,
    pub profile: LoadProfile,
    pub provenance: Provenance,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("cross-reference: {message}")]
    CrossRef { message: String },
    #[error("dataset invalid: {} diagnostic(s)", diagnostics.len())]
    Invalid { diagnostics: Vec<Diagnostic> },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {message}")]
    Report { message: String },
}

fn parse_class(s: &str, path: &str, context: &str) -> Result<ConsumerClass, DatasetError> {
    match s {
        "industrial" => Ok(ConsumerClass::Industrial),
        "residential" => Ok(ConsumerClass::Residential),
        "commercial" => Ok(ConsumerClass::Commercial),
        "custom" => Ok(ConsumerClass::Custom),
        other => Err(DatasetError::Schema {
            path: path.to_string(),
            message: format!(
                "{context}: unknown consumer class {other:?} \
                 (expected industrial, residential, commercial, or custom)"
            ),
        }),
    }
}

fn check_version(version: u32, path: &str) -> Result<(), DatasetError> {
    if version != SCHEMA_VERSION {
        return Err(DatasetError::Schema {
            path: path.to_string(),
            message: format!("unsupported schema_version {version}, expected {SCHEMA_VERSION}"),
        });
    }
    Ok(())
}

fn network_from_doc(doc: NetworkDoc, path: &str) -> Result<Network, DatasetError> {
    check_version(doc.schema_version, path)?;
    let schema_err = |message: String| DatasetError::Schema {
        path: path.to_string(),
        message,
    };

    let slack_ids: Vec<u32> = doc
        .buses
        .iter()
        .filter(|b| b.slack)
        .map(|b| b.id)
        .collect();
    if slack_ids.is_empty() {
        return Err(schema_err("no bus is marked slack".into()));
    }
    if slack_ids.len() > 1 {
        let ids = slack_ids
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        return Err(DatasetError::Invalid {
            diagnostics: vec![Diagnostic {
                code: DiagnosticCode::MultipleSlack,
                severity: Severity::Error,
                location: format!("buses {ids}"),
                message: "multiple slack buses declared; exactly one is required".into(),
            }],
        });
    }
    let slack = BusId(slack_ids[0]);

    let mut buses = Vec::with_capacity(doc.buses.len());
    for b in &doc.buses {
        let v_min_pu = b.v_min_pu.unwrap_or(0.9);
        let v_max_pu = b.v_max_pu.unwrap_or(1.1);
        let bus = if b.slack {
            if b.class.is_some() || b.k1.is_some() || b.k2.is_some() {
                return Err(schema_err(format!(
                    "bus {}: the slack bus must not declare a consumer class or load exponents",
                    b.id
                )));
            }
            if b.p_peak_pu.unwrap_or(0.0) != 0.0 || b.q_peak_pu.unwrap_or(0.0) != 0.0 {
                return Err(schema_err(format!(
                    "bus {}: the slack bus must not declare peak load",
                    b.id
                )));
            }
            Bus {
                id: BusId(b.id),
                class: ConsumerClass::Custom,
                params: LoadModelParams::CONSTANT_POWER,
                p0_peak: 0.0,
                q0_peak: 0.0,
                v_min_pu,
                v_max_pu,
                bank: None,
            }
        } else {
            let class_str = b
                .class
                .as_deref()
                .ok_or_else(|| schema_err(format!("bus {}: missing consumer class", b.id)))?;
            let class = parse_class(class_str, path, &format!("bus {}", b.id))?;
            let params = match class {
                ConsumerClass::Custom => match (b.k1, b.k2) {
                    (Some(k1), Some(k2)) => LoadModelParams { k1, k2 },
                    _ => {
                        return Err(schema_err(format!(
                            "bus {}: class custom requires explicit k1 and k2",
                            b.id
                        )))
                    }
                },
                named => {
                    if b.k1.is_some() || b.k2.is_some() {
                        return Err(schema_err(format!(
                            "bus {}: explicit exponents are only valid with class custom",
                            b.id
                        )));
                    }
                    params_for_class(named).expect("named class has parameters")
                }
            };
            Bus {
                id: BusId(b.id),
                class,
                params,
                p0_peak: b.p_peak_pu.unwrap_or(0.0),
                q0_peak: b.q_peak_pu.unwrap_or(0.0),
                v_min_pu,
                v_max_pu,
                bank: None,
            }
        };
        buses.push(bus);
    }
    buses.sort_by_key(|b| b.id);

    for cap in &doc.capacitors {
        let Some(bus) = buses.iter_mut().find(|b| b.id == BusId(cap.bus)) else {
            return Err(DatasetError::CrossRef {
                message: format!(
                    "capacitor declared on bus {}, which is not in the network",
                    cap.bus
                ),
            });
        };
        if bus.bank.is_some() {
            return Err(DatasetError::CrossRef {
                message: format!("bus {} declares more than one capacitor bank", cap.bus),
            });
        }
        bus.bank = Some(CapacitorBank {
            c_microfarad: cap.unit_microfarad,
            n_max: cap.max_units,
        });
    }

    let lines = doc
        .lines
        .iter()
        .map(|l| Line {
            from: BusId(l.from),
            to: BusId(l.to),
            r_ohm: l.r_ohm,
            x_ohm: l.x_ohm,
        })
        .collect();

    let network = Network {
        buses,
        lines,
        slack,
        slack_voltage_pu: doc.slack_voltage_pu,
        base: PerUnitBase {
            base_mva: doc.base.mva,
            base_kv: doc.base.kv,
        },
        frequency_hz: doc.base.frequency_hz,
    };

    let diagnostics = validate_network(&network);
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return Err(DatasetError::Invalid { diagnostics });
    }
    for warning in &diagnostics {
        log::warn!("{path}: {warning}");
    }
    Ok(network)
}

fn prices_from_doc(doc: PricesDoc, path: &str) -> Result<PriceSchedule, DatasetError> {
    check_version(doc.schema_version, path)?;
    let schema_err = |message: String| DatasetError::Schema {
        path: path.to_string(),
        message,
    };
    let mut ca = BTreeMap::new();
    let mut cr = BTreeMap::new();
    for (key, retail) in &doc.retail {
        let class = parse_class(key, path, "retail price table")?;
        let active = retail
            .active_usd_per_mwh
            .to_hours(&format!("retail.{key}.active_usd_per_mwh"))
            .map_err(&schema_err)?;
        let reactive = retail
            .reactive_usd_per_mvarh
            .to_hours(&format!("retail.{key}.reactive_usd_per_mvarh"))
            .map_err(&schema_err)?;
        ca.insert(class, active);
        cr.insert(class, reactive);
    }
    let pm = doc
        .wholesale
        .active_usd_per_mwh
        .to_hours("wholesale.active_usd_per_mwh")
        .map_err(&schema_err)?;
    let qm = doc
        .wholesale
        .reactive_usd_per_mvarh
        .to_hours("wholesale.reactive_usd_per_mvarh")
        .map_err(&schema_err)?;
    let p_max = doc
        .wholesale
        .p_import_max_pu
        .to_hours("wholesale.p_import_max_pu")
        .map_err(&schema_err)?;
    let q_max = doc
        .wholesale
        .q_import_max_pu
        .to_hours("wholesale.q_import_max_pu")
        .map_err(&schema_err)?;
    PriceSchedule::new(ca, cr, pm, qm, p_max, q_max).map_err(|e| schema_err(e.to_string()))
}

fn profile_from_doc(doc: ProfileDoc, path: &str) -> Result<LoadProfile, DatasetError> {
    check_version(doc.schema_version, path)?;
    let schema_err = |message: String| DatasetError::Schema {
        path: path.to_string(),
        message,
    };
    if doc.rows.len() != HOURS {
        return Err(schema_err(format!(
            "expected {HOURS} hourly rows, got {}",
            doc.rows.len()
        )));
    }
    let mut classes = Vec::with_capacity(doc.classes.len());
    for name in &doc.classes {
        let class = parse_class(name, path, "profile classes")?;
        if classes.contains(&class) {
            return Err(schema_err(format!("duplicate profile class {name:?}")));
        }
        classes.push(class);
    }
    for (idx, row) in doc.rows.iter().chain(doc.extra_rows.iter()).enumerate() {
        if row.len() != classes.len() {
            return Err(schema_err(format!(
                "row {} has {} entries, expected one per class ({})",
                idx + 1,
                row.len(),
                classes.len()
            )));
        }
    }
    let mut percent = BTreeMap::new();
    for (col, &class) in classes.iter().enumerate() {
        let mut series = [0.0; HOURS];
        for (t, row) in doc.rows.iter().enumerate() {
            series[t] = row[col];
        }
        percent.insert(class, series);
    }
    LoadProfile::new(percent).map_err(|e| schema_err(e.to_string()))
}

fn cross_validate(
    network: &Network,
    prices: &PriceSchedule,
    profile: &LoadProfile,
) -> Result<(), DatasetError> {
    for bus in &network.buses {
        if bus.id == network.slack {
            continue;
        }
        if profile.percent(1, bus.class).is_err() {
            return Err(DatasetError::CrossRef {
                message: format!(
                    "bus {} uses class {} but the profile has no column for it",
                    bus.id, bus.class
                ),
            });
        }
        if prices.ca(1, bus.class).is_err() || prices.cr(1, bus.class).is_err() {
            return Err(DatasetError::CrossRef {
                message: format!(
                    "bus {} uses class {} but the prices file has no retail row for it",
                    bus.id, bus.class
                ),
            });
        }
    }
    Ok(())
}

fn parse_toml<T: serde::de::DeserializeOwned>(src: &str, path: &str) -> Result<T, DatasetError> {
    toml::from_str(src).map_err(|e| DatasetError::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })
}

fn parse_dataset(
    network_src: &str,
    network_path: &str,
    prices_src: &str,
    prices_path: &str,
    profile_src: &str,
    profile_path: &str,
) -> Result<Dataset, DatasetError> {
    let network_doc: NetworkDoc = parse_toml(network_src, network_path)?;
    let prices_doc: PricesDoc = parse_toml(prices_src, prices_path)?;
    let profile_doc: ProfileDoc = parse_toml(profile_src, profile_path)?;
    let provenance = Provenance {
        network: network_doc.provenance.clone().unwrap_or_default(),
        prices: prices_doc.provenance.clone().unwrap_or_default(),
        profile: profile_doc.provenance.clone().unwrap_or_default(),
    };
    let network = network_from_doc(network_doc, network_path)?;
    let prices = prices_from_doc(prices_doc, prices_path)?;
    let profile = profile_from_doc(profile_doc, profile_path)?;
    cross_validate(&network, &prices, &profile)?;
    Ok(Dataset {
        network,
        prices,
        profile,
        provenance,
    })
}

/// Loads and cross-validates the three dataset files.
pub fn load_dataset(
    network_path: impl AsRef<Path>,
    prices_path: impl AsRef<Path>,
    profile_path: impl AsRef<Path>,
) -> Result<Dataset, DatasetError> {
    let read = |p: &Path| -> Result<String, DatasetError> {
        fs::read_to_string(p).map_err(|source| DatasetError::Read {
            path: p.display().to_string(),
            source,
        })
    };
    let network_src = read(network_path.as_ref())?;
    let prices_src = read(prices_path.as_ref())?;
    let profile_src = read(profile_path.as_ref())?;
    parse_dataset(
        &network_src,
        &network_path.as_ref().display().to_string(),
        &prices_src,
        &prices_path.as_ref().display().to_string(),
        &profile_src,
        &profile_path.as_ref().display().to_string(),
    )
}

/// The bundled Khodabandelu district feeder: 13 buses on a 20 kV trunk, 12
/// lines, capacitor banks at buses 10, 12, and 13, the hourly class profile,
/// and a synthetic demonstration tariff.
pub fn bundled_khodabandelu() -> Dataset {
    parse_dataset(
        BUNDLED_NETWORK_TOML,
        "bundled network.toml",
        BUNDLED_PRICES_TOML,
        "bundled prices.toml",
        BUNDLED_PROFILE_TOML,
        "bundled profile.toml",
    )
    .expect("bundled dataset is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Renders a schedule for a network and writes it to `path` in the chosen
/// format.
pub fn export_schedule(
    schedule: &Schedule,
    network: &Network,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), DatasetError> {
    let report = ScheduleReport::from_schedule(schedule, network);
    let file = fs::File::create(path.as_ref()).map_err(|source| DatasetError::Write {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    let writer = BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_report_csv(&report, writer),
        ReportFormat::Json => write_report_json(&report, writer),
    }
}

/// Reads back a JSON schedule report.
pub fn read_schedule_report(path: impl AsRef<Path>) -> Result<ScheduleReport, DatasetError> {
    let file = fs::File::open(path.as_ref()).map_err(|source| DatasetError::Read {
        path: path.as_ref().display().to_string(),
        source,
    })?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| DatasetError::Parse {
        path: path.as_ref().display().to_string(),
        message: e.to_string(),
    })
}
