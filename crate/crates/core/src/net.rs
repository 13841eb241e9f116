//! Static feeder model: buses, short lines, per-unit conversion, and the
//! nodal admittance matrix.
//!
//! Lines carry series impedance only (short-line model), so the Y-bus built
//! here has no shunt terms and every complex row sums to zero.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::load::Bus;
use crate::powerflow::CapacitorBank;

/// 1-based bus identifier, unique within a [`Network`].
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Series-impedance line between two buses. No shunt capacitance field
/// exists: the feeder is modeled with short lines only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

/// System base quantities for per-unit normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub base_mva: f64,
    pub base_kv: f64,
}

impl PerUnitBase {
    /// Impedance base in ohms, `kV² / MVA`.
    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv / self.base_mva
    }
}

/// Converts a line's ohmic series impedance to per unit.
pub fn line_to_pu(line: &Line, base: &PerUnitBase) -> Complex64 {
    let z_base = base.z_base_ohm();
    Complex64::new(line.r_ohm / z_base, line.x_ohm / z_base)
}

/// A validated feeder: buses in ascending id order, series lines, one slack
/// designation, and the per-unit bases.
///
/// Instances are immutable after construction and safe to share across
/// worker threads. [`validate_network`] reports every invariant violation as
/// a [`Diagnostic`]; loaders refuse datasets with error-severity findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub slack: BusId,
    pub slack_voltage_pu: f64,
    pub base: PerUnitBase,
    pub frequency_hz: f64,
}

impl Network {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Position of a bus in the ascending-id bus list.
    pub fn index_of(&self, id: BusId) -> Option<usize> {
        self.buses.binary_search_by_key(&id, |b| b.id).ok()
    }

    pub fn bus(&self, id: BusId) -> Option<&Bus> {
        self.index_of(id).map(|i| &self.buses[i])
    }

    /// Position of the slack bus; panics if the slack id is not in the bus
    /// list (a validated network always has it).
    pub fn slack_index(&self) -> usize {
        self.index_of(self.slack)
            .expect("slack bus missing from bus list")
    }

    /// Capacitor-equipped buses in ascending id order.
    pub fn capacitor_buses(&self) -> impl Iterator<Item = (BusId, &CapacitorBank)> {
        self.buses
            .iter()
            .filter_map(|b| b.bank.as_ref().map(|bank| (b.id, bank)))
    }
}

/// Dense nodal admittance matrix of a network, kept in both complex and
/// magnitude/angle form. The polar power-balance equations consume the
/// magnitude/angle entries directly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    complex: DMatrix<Complex64>,
    y_mag: DMatrix<f64>,
    y_ang: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.complex.nrows()
    }

    pub fn complex(&self) -> &DMatrix<Complex64> {
        &self.complex
    }

    /// |Y(i,j)| in per unit.
    pub fn mag(&self, i: usize, j: usize) -> f64 {
        self.y_mag[(i, j)]
    }

    /// Angle of Y(i,j) in radians.
    pub fn ang(&self, i: usize, j: usize) -> f64 {
        self.y_ang[(i, j)]
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.complex[(i, j)]
    }
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("line {from}-{to} has zero series impedance (r = x = 0)")]
    DegenerateLine { from: BusId, to: BusId },
    #[error("line {from}-{to} references a bus that is not in the network")]
    UnknownLineEndpoint { from: BusId, to: BusId },
}

/// Builds the Y-bus of a network from its series lines.
///
/// Diagonal entries accumulate the series admittances of incident lines;
/// off-diagonal entries are the negated series admittance (parallel lines
/// add). Entries (i,j) and (j,i) are assigned from the same arithmetic, so
/// the matrix is symmetric bit-for-bit.
pub fn build_ybus(network: &Network) -> Result<AdmittanceMatrix, NetworkError> {
    let n = network.n_buses();
    let mut complex = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));

    for line in &network.lines {
        if line.r_ohm == 0.0 && line.x_ohm == 0.0 {
            return Err(NetworkError::DegenerateLine {
                from: line.from,
                to: line.to,
            });
        }
        let (i, j) = match (network.index_of(line.from), network.index_of(line.to)) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                return Err(NetworkError::UnknownLineEndpoint {
                    from: line.from,
                    to: line.to,
                })
            }
        };
        let y = line_to_pu(line, &network.base).inv();
        complex[(i, i)] += y;
        complex[(j, j)] += y;
        complex[(i, j)] -= y;
        complex[(j, i)] -= y;
    }

    let y_mag = complex.map(|y| y.norm());
    let y_ang = complex.map(|y| y.arg());
    Ok(AdmittanceMatrix {
        complex,
        y_mag,
        y_ang,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Warning,
    Error,
}

/// Machine-readable validation finding: a stable code plus the offending
/// location (bus or line) and a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(
            f,
            "{sev}[{:?}] {}: {}",
            self.code, self.location, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticCode {
    DuplicateBusId,
    UnknownSlack,
    MultipleSlack,
    SlackCarriesLoad,
    SlackHasCapacitor,
    SlackVoltageOutOfBand,
    InvalidBase,
    InvalidFrequency,
    NegativeImpedance,
    DegenerateLine,
    SelfLoop,
    DanglingLine,
    DuplicateLine,
    DisconnectedComponent,
    NegativePeak,
    InvalidVoltageBand,
    InvalidCapacitor,
    NonFiniteValue,
    InvalidLoadExponent,
}

fn diag(code: DiagnosticCode, severity: Severity, location: String, message: String) -> Diagnostic {
    Diagnostic {
        code,
        severity,
        location,
        message,
    }
}

/// Checks every structural invariant of a network and returns the findings.
///
/// An empty list means the network is valid: unique ascending bus ids, one
/// slack carrying no load and no bank, sane bases, non-negative short-line
/// impedances, and a single connected component. Duplicate parallel lines
/// are legal (their admittances add in the Y-bus) but reported as warnings.
pub fn validate_network(network: &Network) -> Vec<Diagnostic> {
    let mut out = Vec::new();

    if network.base.base_mva.is_nan()
        || network.base.base_mva <= 0.0
        || network.base.base_kv.is_nan()
        || network.base.base_kv <= 0.0
    {
        out.push(diag(
            DiagnosticCode::InvalidBase,
            Severity::Error,
            "base".into(),
            format!(
                "base must be positive, got {} MVA / {} kV",
                network.base.base_mva, network.base.base_kv
            ),
        ));
    }
    if network.frequency_hz.is_nan() || network.frequency_hz <= 0.0 {
        out.push(diag(
            DiagnosticCode::InvalidFrequency,
            Severity::Error,
            "frequency".into(),
            format!("system frequency must be positive, got {}", network.frequency_hz),
        ));
    }
    if !(0.5..=1.5).contains(&network.slack_voltage_pu) {
        out.push(diag(
            DiagnosticCode::SlackVoltageOutOfBand,
            Severity::Error,
            format!("bus {}", network.slack),
            format!(
                "slack voltage {} pu outside the [0.5, 1.5] sanity band",
                network.slack_voltage_pu
            ),
        ));
    }

    let mut seen = BTreeSet::new();
    for bus in &network.buses {
        if !seen.insert(bus.id) {
            out.push(diag(
                DiagnosticCode::DuplicateBusId,
                Severity::Error,
                format!("bus {}", bus.id),
                "bus id appears more than once".into(),
            ));
        }
    }

    if network.index_of(network.slack).is_none() {
        out.push(diag(
            DiagnosticCode::UnknownSlack,
            Severity::Error,
            format!("bus {}", network.slack),
            "slack designation references a bus that is not in the network".into(),
        ));
    }

    for bus in &network.buses {
        let loc = format!("bus {}", bus.id);
        if !(bus.p0_peak.is_finite() && bus.q0_peak.is_finite()) {
            out.push(diag(
                DiagnosticCode::NonFiniteValue,
                Severity::Error,
                loc.clone(),
                "peak load must be finite".into(),
            ));
        } else if bus.p0_peak < 0.0 || bus.q0_peak < 0.0 {
            out.push(diag(
                DiagnosticCode::NegativePeak,
                Severity::Error,
                loc.clone(),
                format!("peak load ({}, {}) must be non-negative", bus.p0_peak, bus.q0_peak),
            ));
        }
        let band_ok = bus.v_min_pu > 0.0 && bus.v_min_pu < bus.v_max_pu;
        if !band_ok {
            out.push(diag(
                DiagnosticCode::InvalidVoltageBand,
                Severity::Error,
                loc.clone(),
                format!(
                    "voltage band [{}, {}] must satisfy 0 < min < max",
                    bus.v_min_pu, bus.v_max_pu
                ),
            ));
        }
        if !(bus.params.k1.is_finite() && bus.params.k2.is_finite())
            || bus.params.k1 < 0.0
            || bus.params.k2 < 0.0
        {
            out.push(diag(
                DiagnosticCode::InvalidLoadExponent,
                Severity::Error,
                loc.clone(),
                format!(
                    "load exponents ({}, {}) must be finite and non-negative",
                    bus.params.k1, bus.params.k2
                ),
            ));
        }
        if let Some(bank) = &bus.bank {
            if bank.c_microfarad.is_nan() || bank.c_microfarad <= 0.0 || bank.n_max < 1 {
                out.push(diag(
                    DiagnosticCode::InvalidCapacitor,
                    Severity::Error,
                    loc.clone(),
                    format!(
                        "capacitor bank needs positive unit size and n_max >= 1, got {} uF x {}",
                        bank.c_microfarad, bank.n_max
                    ),
                ));
            }
        }
        if bus.id == network.slack {
            if bus.p0_peak != 0.0 || bus.q0_peak != 0.0 {
                out.push(diag(
                    DiagnosticCode::SlackCarriesLoad,
                    Severity::Error,
                    loc.clone(),
                    "slack bus must have zero peak load".into(),
                ));
            }
            if bus.bank.is_some() {
                out.push(diag(
                    DiagnosticCode::SlackHasCapacitor,
                    Severity::Error,
                    loc,
                    "slack bus must not carry a capacitor bank".into(),
                ));
            }
        }
    }

    let mut pair_counts: BTreeMap<(BusId, BusId), u32> = BTreeMap::new();
    for line in &network.lines {
        let loc = format!("line {}-{}", line.from, line.to);
        if line.from == line.to {
            out.push(diag(
                DiagnosticCode::SelfLoop,
                Severity::Error,
                loc.clone(),
                "line endpoints must differ".into(),
            ));
            continue;
        }
        if network.index_of(line.from).is_none() || network.index_of(line.to).is_none() {
            out.push(diag(
                DiagnosticCode::DanglingLine,
                Severity::Error,
                loc.clone(),
                "line references a bus that is not in the network".into(),
            ));
            continue;
        }
        if !(line.r_ohm.is_finite() && line.x_ohm.is_finite()) {
            out.push(diag(
                DiagnosticCode::NonFiniteValue,
                Severity::Error,
                loc.clone(),
                "line impedance must be finite".into(),
            ));
        } else if line.r_ohm < 0.0 || line.x_ohm < 0.0 {
            out.push(diag(
                DiagnosticCode::NegativeImpedance,
                Severity::Error,
                loc.clone(),
                format!("impedance ({}, {}) ohm must be non-negative", line.r_ohm, line.x_ohm),
            ));
        } else if line.r_ohm == 0.0 && line.x_ohm == 0.0 {
            out.push(diag(
                DiagnosticCode::DegenerateLine,
                Severity::Error,
                loc.clone(),
                "line has zero series impedance".into(),
            ));
        }
        let key = if line.from <= line.to {
            (line.from, line.to)
        } else {
            (line.to, line.from)
        };
        let count = pair_counts.entry(key).or_insert(0);
        *count += 1;
        if *count == 2 {
            out.push(diag(
                DiagnosticCode::DuplicateLine,
                Severity::Warning,
                loc,
                "parallel line duplicates an existing pair; admittances are merged".into(),
            ));
        }
    }

    if let Some(unreached) = unreachable_buses(network) {
        out.push(diag(
            DiagnosticCode::DisconnectedComponent,
            Severity::Error,
            format!(
                "buses {{{}}}",
                unreached
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
            "disconnected component: not reachable from the slack bus".into(),
        ));
    }

    out
}

/// Buses unreachable from the slack, or `None` when the graph is connected.
fn unreachable_buses(network: &Network) -> Option<Vec<BusId>> {
    let n = network.n_buses();
    if n == 0 {
        return None;
    }
    let start = network
        .index_of(network.slack)
        .unwrap_or(0);
    let mut adj = vec![Vec::new(); n];
    for line in &network.lines {
        if let (Some(i), Some(j)) = (network.index_of(line.from), network.index_of(line.to)) {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let mut visited = vec![false; n];
    let mut queue = VecDeque::from([start]);
    visited[start] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !visited[j] {
                visited[j] = true;
                queue.push_back(j);
            }
        }
    }
    let unreached: Vec<BusId> = network
        .buses
        .iter()
        .enumerate()
        .filter(|(i, _)| !visited[*i])
        .map(|(_, b)| b.id)
        .collect();
    if unreached.is_empty() {
        None
    } else {
        Some(unreached)
    }
}
