//! Tables and the machine-readable run report.

use std::fmt;

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::latency::{classify, DelayCategory, LatencyError, LatencyModel, SafetyApp, TABLE_PAIRS};
use crate::messages::{RoadUserId, Topic};
use crate::mqtt::may_publish;
use crate::paths::{PathKind, HETERO_PATHS};
use crate::relay::GhostReport;
use crate::sim::{round3, CoverageStatus, Metrics, PathStats, RoadUserKind};

/// Allowed gap between a measured path latency and the model. Each hop is
/// scheduled on a whole microsecond.
pub const FIDELITY_TOLERANCE_MS: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table4Cell {
    pub speed_kmh: f64,
    pub delay_ms: f64,
    pub category: DelayCategory,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table4Row {
    /// 1-based.
    pub row: usize,
    pub link: String,
    pub cells: Vec<Table4Cell>,
}

/// Composed delays for the seven link bundles at each sampled speed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table4 {
    pub speeds_kmh: Vec<f64>,
    pub rows: Vec<Table4Row>,
    /// Largest gap between the source matrix and its recomposition.
    pub max_residual_ms: f64,
}

fn category_mark(c: DelayCategory) -> &'static str {
    match c {
        DelayCategory::NearRealTime => "",
        DelayCategory::ReducedLatency => "*",
        DelayCategory::Unserviceable => "!",
    }
}

impl Table4 {
    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.rows[row].cells[col].delay_ms
    }

    /// Fixed-width table; `*` marks reduced latency, `!` unserviceable.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<10}", "link");
        for s in &self.speeds_kmh {
            out.push_str(&format!("{:>12}", format!("{s} km/h")));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:<10}", r.link));
            for c in &r.cells {
                let v = format!("{:.3}{}", c.delay_ms, category_mark(c.category));
                out.push_str(&format!("{v:>12}"));
            }
            out.push('\n');
        }
        out.push_str("* reduced latency (100-600 ms), ! unserviceable (>= 600 ms)\n");
        out
    }

    /// `row,link,speed_kmh,delay_ms,category`
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "link", "speed_kmh", "delay_ms", "category"])
            .expect("in-memory write");
        for r in &self.rows {
            for c in &r.cells {
                w.write_record([
                    r.row.to_string(),
                    r.link.clone(),
                    format!("{}", c.speed_kmh),
                    format!("{:.3}", c.delay_ms),
                    c.category.label().to_string(),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

pub fn emit_table4(model: &LatencyModel) -> Result<Table4, LatencyError> {
    let speeds = model.halves().speeds().to_vec();
    let mut rows = Vec::with_capacity(TABLE_PAIRS.len());
    for (i, pair) in TABLE_PAIRS.iter().enumerate() {
        let mut cells = Vec::with_capacity(speeds.len());
        for &s in &speeds {
            let d = model.composed_delay(pair.uplink, pair.downlink, s)?;
            cells.push(Table4Cell {
                speed_kmh: s,
                delay_ms: round3(d),
                category: classify(d),
            });
        }
        rows.push(Table4Row {
            row: i + 1,
            link: pair.label(),
            cells,
        });
    }
    Ok(Table4 {
        speeds_kmh: speeds,
        rows,
        max_residual_ms: round3(model.residual_ms()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservedPath {
    pub count: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub max_fidelity_error_ms: f64,
}

/// One heterogeneous scenario judged over a speed range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub scenario: u8,
    pub path: String,
    /// 1-based row of the delay table.
    pub delay_row: usize,
    pub mirrored: bool,
    pub min_delay_ms: f64,
    pub max_delay_ms: f64,
    pub category: DelayCategory,
    pub apps: Vec<SafetyApp>,
    pub observed: Option<ObservedPath>,
    /// Observed latencies disagree with the model.
    pub flagged: bool,
}

fn min_composed(
    model: &LatencyModel,
    up: crate::latency::LinkTech,
    down: crate::latency::LinkTech,
    (lo, hi): (f64, f64),
) -> Result<f64, LatencyError> {
    let mut best = model.composed_delay(up, down, lo)?.min(model.composed_delay(up, down, hi)?);
    for &s in model.halves().speeds().iter().filter(|s| **s > lo && **s < hi) {
        best = best.min(model.composed_delay(up, down, s)?);
    }
    Ok(best)
}

/// Classifies each scenario by its worst delay over `range`. Rows with
/// simulator observations are cross-checked against the model.
pub fn emit_scenario_matrix(
    model: &LatencyModel,
    range: (f64, f64),
    observed: &[PathStats],
) -> Result<Vec<ScenarioRow>, LatencyError> {
    HETERO_PATHS
        .iter()
        .map(|p| {
            let max = model.max_composed_delay(p.uplink, p.downlink, range)?;
            let min = min_composed(model, p.uplink, p.downlink, range)?;
            let obs = observed
                .iter()
                .find(|o| o.scenario == Some(p.number) && o.count > 0)
                .map(|o| ObservedPath {
                    count: o.count,
                    mean_ms: o.mean_ms,
                    max_ms: o.max_ms,
                    max_fidelity_error_ms: o.max_fidelity_error_ms,
                });
            let flagged = obs.as_ref().is_some_and(|o| {
                o.max_fidelity_error_ms > FIDELITY_TOLERANCE_MS + 1e-9 || o.max_ms > max + FIDELITY_TOLERANCE_MS
            });
            Ok(ScenarioRow {
                scenario: p.number,
                path: PathKind::Hetero(p.number).to_string(),
                delay_row: p.delay_row + 1,
                mirrored: p.mirrored,
                min_delay_ms: round3(min),
                max_delay_ms: round3(max),
                category: classify(max),
                apps: crate::latency::apps_for_delay(max),
                observed: obs,
                flagged,
            })
        })
        .collect()
}

fn app_list(apps: &[SafetyApp]) -> String {
    apps.iter().map(|a| a.name()).collect::<Vec<_>>().join(" ")
}

/// `scenario,path,delay_row,min_delay_ms,max_delay_ms,category,apps,observed_count,observed_mean_ms,observed_max_ms,flagged`
pub fn matrix_csv(rows: &[ScenarioRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "path",
        "delay_row",
        "min_delay_ms",
        "max_delay_ms",
        "category",
        "apps",
        "observed_count",
        "observed_mean_ms",
        "observed_max_ms",
        "flagged",
    ])
    .expect("in-memory write");
    for r in rows {
        let (n, mean, max) = match &r.observed {
            Some(o) => (o.count.to_string(), format!("{:.3}", o.mean_ms), format!("{:.3}", o.max_ms)),
            None => (String::from("0"), String::new(), String::new()),
        };
        w.write_record([
            r.scenario.to_string(),
            r.path.clone(),
            r.delay_row.to_string(),
            format!("{:.3}", r.min_delay_ms),
            format!("{:.3}", r.max_delay_ms),
            r.category.label().to_string(),
            app_list(&r.apps),
            n,
            mean,
            max,
            r.flagged.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

pub fn matrix_text(rows: &[ScenarioRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let apps = if r.apps.is_empty() { "none".to_string() } else { app_list(&r.apps) };
        out.push_str(&format!(
            "{:<46} max {:>8.3} ms  {:<16} {}{}\n",
            r.path,
            r.max_delay_ms,
            r.category.label(),
            apps,
            if r.flagged { "  [FLAGGED]" } else { "" }
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserSummary {
    pub id: RoadUserId,
    pub kind: RoadUserKind,
    pub speed_kmh: f64,
}

/// Subscriptions and publications of one broker client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientContract {
    pub client: String,
    pub subscriptions: Vec<Topic>,
    pub published: Vec<Topic>,
    pub publish_counts: Vec<(Topic, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MqttSummary {
    pub clients: Vec<ClientContract>,
    pub deliveries: usize,
    pub dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaySummary {
    pub decisions: usize,
    pub actions_emitted: usize,
    pub confirmed_tracks: usize,
    pub pending_tracks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub users: Vec<UserSummary>,
    pub metrics: Metrics,
    pub table4_recomposition: Table4,
    pub scenario_matrix: Vec<ScenarioRow>,
    pub ghosts: GhostReport,
    pub mqtt: MqttSummary,
    pub relay: RelaySummary,
}

/// A broken run invariant, by name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantViolation {
    pub name: &'static str,
    pub detail: String,
}

impl fmt::Display for InvariantViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.name, self.detail)
    }
}

impl std::error::Error for InvariantViolation {}

fn violation(name: &'static str, detail: impl Into<String>) -> Result<(), InvariantViolation> {
    Err(InvariantViolation {
        name,
        detail: detail.into(),
    })
}

impl Report {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        config: &ScenarioConfig,
        seed: u64,
        model: &LatencyModel,
        users: Vec<UserSummary>,
        metrics: Metrics,
        ghosts: GhostReport,
        mqtt: MqttSummary,
        relay: RelaySummary,
    ) -> Result<Report, LatencyError> {
        let [lo, hi] = config.matrix_speed_range;
        let scenario_matrix = emit_scenario_matrix(model, (lo, hi), &metrics.paths)?;
        Ok(Report {
            seed,
            config: config.clone(),
            users,
            table4_recomposition: emit_table4(model)?,
            scenario_matrix,
            metrics,
            ghosts,
            mqtt,
            relay,
        })
    }

    /// Pretty JSON with a trailing newline; stable for equal inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let m = &self.metrics;
        if let Some(c) = m.coverage.last.iter().chain(m.coverage.mean.iter()).find(|c| !(0.0..=1.0).contains(*c)) {
            return violation("coverage-range", format!("coverage {c} outside [0, 1]"));
        }
        if m.coverage.status == CoverageStatus::NoPairs && m.coverage.pairs != 0 {
            return violation("coverage-range", "no-pairs status with pairs present");
        }
        if let Some(p) = m.paths.iter().find(|p| p.min_ms < 0.0) {
            return violation("non-negative-latency", format!("{} has latency {}", p.path, p.min_ms));
        }
        if m.max_fidelity_error_ms > FIDELITY_TOLERANCE_MS + 1e-9 {
            return violation(
                "latency-fidelity",
                format!("path latency off the model by {:.3} ms", m.max_fidelity_error_ms),
            );
        }
        if self.scenario_matrix.len() != HETERO_PATHS.len() {
            return violation("matrix-rows", format!("{} rows", self.scenario_matrix.len()));
        }
        for r in &self.scenario_matrix {
            if r.category != classify(r.max_delay_ms) {
                return violation("matrix-consistency", format!("scenario {}", r.scenario));
            }
            if r.flagged {
                return violation("matrix-observed", format!("scenario {} disagrees with the model", r.scenario));
            }
        }
        for c in &self.mqtt.clients {
            let client = if c.client == "A-RSU" {
                crate::mqtt::ClientId::Arsu
            } else {
                crate::mqtt::ClientId::user(c.client.clone())
            };
            if let Some(t) = c.published.iter().find(|t| !may_publish(&client, **t)) {
                return violation("topic-ownership", format!("{} published on {t}", c.client));
            }
        }
        Ok(())
    }
}
