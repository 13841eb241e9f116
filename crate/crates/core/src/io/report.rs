//! Schedule report assembly and the CSV/JSON emitters.
//!
//! Report bodies are deterministic: floats are written with Rust's
//! shortest-roundtrip formatting and no timing or timestamp fields appear in
//! them. Wall-clock data stays in a metadata sidecar written by callers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dispatch::Schedule;
use crate::net::Network;

use super::DatasetError;

/// Flat, serializable view of a [`Schedule`]: 24 hour rows plus a totals
/// row whose money fields are the exact column sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub schema_version: u32,
    pub bus_ids: Vec<u32>,
    pub hours: Vec<ReportRow>,
    pub totals: ReportTotals,
    pub feasible: bool,
    pub infeasible_hours: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub config: String,
    pub feasible: bool,
    pub v_pu: Vec<f64>,
    pub p_pu: Vec<f64>,
    pub q_pu: Vec<f64>,
    pub p_slack_pu: f64,
    pub q_slack_pu: f64,
    pub evaluations: usize,
    pub revenue_usd: f64,
    pub cost_usd: f64,
    pub profit_usd: f64,
    pub infeasibility: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportTotals {
    pub revenue_usd: f64,
    pub cost_usd: f64,
    pub profit_usd: f64,
}

impl ScheduleReport {
    pub fn from_schedule(schedule: &Schedule, network: &Network) -> Self {
        let bus_ids: Vec<u32> = network.buses.iter().map(|b| b.id.0).collect();
        let hours = schedule
            .hours
            .iter()
            .map(|h| ReportRow {
                t: h.t,
                config: h.config.to_string(),
                feasible: h.feasible,
                v_pu: h.solution.state.v_pu.clone(),
                p_pu: h.solution.p_consumed.clone(),
                q_pu: h.solution.q_consumed.clone(),
                p_slack_pu: h.solution.p_slack_pu,
                q_slack_pu: h.solution.q_slack_pu,
                evaluations: h.evaluations,
                revenue_usd: h.econ.revenue,
                cost_usd: h.econ.cost,
                profit_usd: h.econ.profit,
                infeasibility: h
                    .infeasibility_reasons
                    .iter()
                    .map(|r| r.to_string())
                    .collect(),
            })
            .collect();
        Self {
            schema_version: 1,
            bus_ids,
            hours,
            totals: ReportTotals {
                revenue_usd: schedule.totals.revenue,
                cost_usd: schedule.totals.cost,
                profit_usd: schedule.totals.profit,
            },
            feasible: schedule.feasible,
            infeasible_hours: schedule.infeasible_hours.clone(),
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes the CSV body: header, 24 hour rows, then the totals row. Decimal
/// points, no thousands separators, newline-terminated records.
pub fn write_report_csv<W: Write>(report: &ScheduleReport, writer: W) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let as_report = |e: csv::Error| DatasetError::Report {
        message: e.to_string(),
    };

    let mut header: Vec<String> = vec!["t".into(), "config".into(), "feasible".into()];
    for prefix in ["v_pu", "p_pu", "q_pu"] {
        for id in &report.bus_ids {
            header.push(format!("{prefix}_{id}"));
        }
    }
    header.extend(
        [
            "p_slack_pu",
            "q_slack_pu",
            "evaluations",
            "revenue_usd",
            "cost_usd",
            "profit_usd",
        ]
        .map(String::from),
    );
    w.write_record(&header).map_err(as_report)?;

    for row in &report.hours {
        let mut record: Vec<String> =
            vec![row.t.to_string(), row.config.clone(), row.feasible.to_string()];
        for values in [&row.v_pu, &row.p_pu, &row.q_pu] {
            record.extend(values.iter().copied().map(fmt));
        }
        record.push(fmt(row.p_slack_pu));
        record.push(fmt(row.q_slack_pu));
        record.push(row.evaluations.to_string());
        record.push(fmt(row.revenue_usd));
        record.push(fmt(row.cost_usd));
        record.push(fmt(row.profit_usd));
        w.write_record(&record).map_err(as_report)?;
    }

    let mut totals: Vec<String> = vec![
        "totals".into(),
        String::new(),
        report.feasible.to_string(),
    ];
    totals.extend(std::iter::repeat_n(String::new(), 3 * report.bus_ids.len() + 3));
    totals.push(fmt(report.totals.revenue_usd));
    totals.push(fmt(report.totals.cost_usd));
    totals.push(fmt(report.totals.profit_usd));
    w.write_record(&totals).map_err(as_report)?;
    w.flush().map_err(|e| DatasetError::Report {
        message: e.to_string(),
    })?;
    Ok(())
}

/// Writes the JSON document mirroring the report field names.
pub fn write_report_json<W: Write>(
    report: &ScheduleReport,
    mut writer: W,
) -> Result<(), DatasetError> {
    serde_json::to_writer_pretty(&mut writer, report).map_err(|e| DatasetError::Report {
        message: e.to_string(),
    })?;
    writer.write_all(b"\n").map_err(|e| DatasetError::Report {
        message: e.to_string(),
    })?;
    Ok(())
}
