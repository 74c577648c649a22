//! Scenario documents.
//!
//! Scenarios are TOML. Every key has a documented default except
//! `duration_ms`; unknown keys are errors.
//!
//! ```toml
//! duration_ms = 10000
//! scenario_speed_kmh = 60
//!
//! [[users]]
//! kind = "native_dsrc"
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latency::{DelayMatrix, IpuOverhead, LatencyError, LatencyModel, MAX_ITT_MS};
use crate::messages::{Position, SYNTHETIC_ID_PREFIX};
use crate::relay::FilterConfig;
use crate::sim::RoadUserKind;

/// Highest speed covered by the delay table.
pub const MAX_SCENARIO_SPEED_KMH: f64 = 120.0;
/// Upper bound on a scenario's duration: 24 h.
pub const MAX_DURATION_MS: f64 = 86_400_000.0;
/// Default spacing of auto-placed users, east-west.
pub const AUTO_SPACING_M: f64 = 25.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{field} out of range: {message}")]
    Range { field: String, message: String },
    #[error("latency table: {0}")]
    Latency(#[from] LatencyError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn range(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        field: field.into(),
        message: message.into(),
    }
}

/// How link delays pick their speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeedMode {
    /// The scenario speed applies to every link.
    #[default]
    Scenario,
    /// Each link uses the faster of its two endpoints; infrastructure is
    /// stationary.
    MaxEndpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArsuConfig {
    pub enabled: bool,
    pub lat: f64,
    pub lon: f64,
    pub elev: f64,
    /// Radio and camera range around the unit.
    pub coverage_radius_m: f64,
}

impl Default for ArsuConfig {
    fn default() -> Self {
        ArsuConfig {
            enabled: true,
            lat: 0.0,
            lon: 0.0,
            elev: 0.0,
            coverage_radius_m: 150.0,
        }
    }
}

impl ArsuConfig {
    pub fn position(&self) -> Position {
        Position::new(self.lat, self.lon, self.elev)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpuConfig {
    /// Per-axis standard deviation of camera position estimates.
    pub noise_std_m: f64,
    pub frame_period_ms: f64,
    pub processing_ms: f64,
}

impl Default for IpuConfig {
    fn default() -> Self {
        IpuConfig {
            noise_std_m: 1.0,
            frame_period_ms: 100.0,
            processing_ms: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    /// Delay matrix CSV. Relative paths resolve against the scenario file.
    pub table_csv: Option<PathBuf>,
}

/// One `[[users]]` entry: a single user or `count` identical ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserGroup {
    pub kind: RoadUserKind,
    #[serde(default = "one")]
    pub count: u32,
    /// Allowed only when `count` is 1.
    #[serde(default)]
    pub id: Option<String>,
    /// Start offset from the roadside unit, meters.
    #[serde(default)]
    pub north_m: Option<f64>,
    #[serde(default)]
    pub east_m: Option<f64>,
    /// Defaults to the scenario speed.
    #[serde(default)]
    pub speed_kmh: Option<f64>,
    #[serde(default)]
    pub heading_deg: f64,
    #[serde(default)]
    pub gnss_noise_std_m: Option<f64>,
    #[serde(default)]
    pub bsm_interval_ms: Option<f64>,
    /// Phase of the first transmission.
    #[serde(default)]
    pub bsm_offset_ms: f64,
}

fn one() -> u32 {
    1
}

fn default_bsm_interval() -> f64 {
    100.0
}

fn default_gnss_noise() -> f64 {
    5.0 / 3.0
}

fn default_freshness() -> f64 {
    MAX_ITT_MS
}

fn default_metrics_period() -> f64 {
    100.0
}

fn default_matrix_range() -> [f64; 2] {
    [0.0, MAX_SCENARIO_SPEED_KMH]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_ms: f64,
    #[serde(default)]
    pub scenario_speed_kmh: f64,
    #[serde(default)]
    pub speed_mode: SpeedMode,
    #[serde(default = "default_bsm_interval")]
    pub bsm_interval_ms: f64,
    /// Per-axis standard deviation of reported GNSS positions.
    #[serde(default = "default_gnss_noise")]
    pub gnss_noise_std_m: f64,
    /// A peer record younger than this counts toward coverage.
    #[serde(default = "default_freshness")]
    pub freshness_ms: f64,
    #[serde(default = "default_metrics_period")]
    pub metrics_period_ms: f64,
    #[serde(default)]
    pub mqtt_drop_probability: f64,
    /// Speed range for the serviceability matrix.
    #[serde(default = "default_matrix_range")]
    pub matrix_speed_range: [f64; 2],
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub arsu: ArsuConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub ipu: IpuConfig,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub users: Vec<UserGroup>,
}

impl ScenarioConfig {
    /// A config with every default and the given duration.
    pub fn with_duration(duration_ms: f64) -> Self {
        ScenarioConfig {
            duration_ms,
            scenario_speed_kmh: 0.0,
            speed_mode: SpeedMode::default(),
            bsm_interval_ms: default_bsm_interval(),
            gnss_noise_std_m: default_gnss_noise(),
            freshness_ms: default_freshness(),
            metrics_period_ms: default_metrics_period(),
            mqtt_drop_probability: 0.0,
            matrix_speed_range: default_matrix_range(),
            seed: 0,
            arsu: ArsuConfig::default(),
            filter: FilterConfig::default(),
            ipu: IpuConfig::default(),
            latency: LatencyConfig::default(),
            users: Vec::new(),
        }
    }

    /// Checks every documented range.
    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("duration_ms", self.duration_ms)?;
        if self.duration_ms > MAX_DURATION_MS {
            return Err(range("duration_ms", format!("must be <= {MAX_DURATION_MS}")));
        }
        speed("scenario_speed_kmh", self.scenario_speed_kmh)?;
        bsm_interval("bsm_interval_ms", self.bsm_interval_ms)?;
        non_negative("gnss_noise_std_m", self.gnss_noise_std_m)?;
        positive("freshness_ms", self.freshness_ms)?;
        positive("metrics_period_ms", self.metrics_period_ms)?;
        if !(0.0..=1.0).contains(&self.mqtt_drop_probability) {
            return Err(range("mqtt_drop_probability", "must be within [0, 1]"));
        }
        let [lo, hi] = self.matrix_speed_range;
        speed("matrix_speed_range", lo)?;
        speed("matrix_speed_range", hi)?;
        if lo > hi {
            return Err(range("matrix_speed_range", "lower bound exceeds upper bound"));
        }

        if !(-90.0..=90.0).contains(&self.arsu.lat) {
            return Err(range("arsu.lat", "must be within [-90, 90]"));
        }
        if !(-180.0..=180.0).contains(&self.arsu.lon) {
            return Err(range("arsu.lon", "must be within [-180, 180]"));
        }
        finite("arsu.elev", self.arsu.elev)?;
        positive("arsu.coverage_radius_m", self.arsu.coverage_radius_m)?;
        self.filter.check().map_err(|f| range(f, "must be finite and positive"))?;
        non_negative("ipu.noise_std_m", self.ipu.noise_std_m)?;
        positive("ipu.frame_period_ms", self.ipu.frame_period_ms)?;
        positive("ipu.processing_ms", self.ipu.processing_ms)?;

        let mut ids = HashSet::new();
        let mut generated = 0usize;
        for (i, g) in self.users.iter().enumerate() {
            let at = |f: &str| format!("users[{i}].{f}");
            if g.id.is_some() && g.count != 1 {
                return Err(range(at("id"), "an explicit id requires count = 1"));
            }
            if let Some(id) = &g.id {
                if id.is_empty() || id.starts_with(SYNTHETIC_ID_PREFIX) {
                    return Err(range(at("id"), format!("must be non-empty and must not start with {SYNTHETIC_ID_PREFIX:?}")));
                }
                if !ids.insert(id.clone()) {
                    return Err(range(at("id"), format!("duplicate id {id:?}")));
                }
            }
            if let Some(v) = g.north_m {
                finite(&at("north_m"), v)?;
            }
            if let Some(v) = g.east_m {
                finite(&at("east_m"), v)?;
            }
            if let Some(v) = g.speed_kmh {
                speed(&at("speed_kmh"), v)?;
            }
            if !(0.0..360.0).contains(&g.heading_deg) {
                return Err(range(at("heading_deg"), "must be within [0, 360)"));
            }
            if let Some(v) = g.gnss_noise_std_m {
                non_negative(&at("gnss_noise_std_m"), v)?;
            }
            if let Some(v) = g.bsm_interval_ms {
                bsm_interval(&at("bsm_interval_ms"), v)?;
            }
            non_negative(&at("bsm_offset_ms"), g.bsm_offset_ms)?;
            generated += g.count as usize;
        }
        // auto ids must not collide with explicit ones
        for n in 1..=generated {
            let auto = format!("u{n}");
            if ids.contains(&auto) {
                return Err(range("users.id", format!("{auto:?} is reserved for auto-numbered users")));
            }
        }
        Ok(())
    }

    /// Loads the configured delay table, or the built-in one.
    pub fn latency_model(&self, base_dir: Option<&Path>) -> Result<LatencyModel, ConfigError> {
        let ipu = IpuOverhead::new(self.ipu.processing_ms)?;
        match &self.latency.table_csv {
            None => Ok(LatencyModel::builtin().with_ipu(ipu)),
            Some(p) => {
                let path = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p.clone(),
                };
                let file = fs::File::open(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let matrix = DelayMatrix::from_csv(file)?;
                // halves come from the matrix's own camera rows, whose
                // overhead is the built-in one
                let model = LatencyModel::from_matrix(&matrix, IpuOverhead::default())?;
                Ok(model.with_ipu(ipu))
            }
        }
    }
}

fn finite(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(range(field, "must be finite"))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(range(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(range(field, format!("must be >= 0, got {v}")))
    }
}

fn speed(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && (0.0..=MAX_SCENARIO_SPEED_KMH).contains(&v) {
        Ok(())
    } else {
        Err(range(field, format!("must be within [0, {MAX_SCENARIO_SPEED_KMH}] km/h, got {v}")))
    }
}

fn bsm_interval(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 && v <= MAX_ITT_MS {
        Ok(())
    } else {
        Err(range(field, format!("must be within (0, {MAX_ITT_MS}] ms, got {v}")))
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Parses and validates a scenario document.
pub fn parse_scenario(document: &str) -> Result<ScenarioConfig, ConfigError> {
    let config: ScenarioConfig = toml::from_str(document).map_err(|e| {
        let message = e.message().to_string();
        if let Some(rest) = message.strip_prefix("unknown field `") {
            if let Some(end) = rest.find('`') {
                return ConfigError::UnknownKey(rest[..end].to_string());
            }
        }
        let (line, column) = e.span().map_or((0, 0), |s| line_col(document, s.start));
        ConfigError::Syntax {
            line,
            column,
            message,
        }
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads, parses and validates a scenario file, including its delay table.
pub fn load_scenario(path: &Path) -> Result<(ScenarioConfig, LatencyModel), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let config = parse_scenario(&text)?;
    let model = config.latency_model(path.parent())?;
    Ok((config, model))
}
