//! Link-delay model.
//!
//! The model is anchored on the published seven-row heterogeneous link delay
//! matrix. Each composed delay splits evenly into an uplink half and a
//! downlink half, and camera paths add a fixed image-processing overhead in
//! place of an uplink half. The per-technology halves are recovered from the
//! camera rows and then checked against the remaining rows, which
//! over-determine them.

use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Strict upper bound of the near real-time band, in milliseconds.
pub const NEAR_REAL_TIME_MS: f64 = 100.0;
/// Maximum inter-transmission time. Also the end-to-end delay ceiling.
pub const MAX_ITT_MS: f64 = 600.0;
/// Largest residual accepted when recomposing the matrix from its halves.
pub const RECOMPOSITION_TOLERANCE_MS: f64 = 0.01;

/// Speeds (km/h) of the published matrix columns.
pub const TABLE_SPEEDS_KMH: [f64; 5] = [0.0, 30.0, 60.0, 90.0, 120.0];

/// Published composed delays (ms), rows in [`TABLE_PAIRS`] order.
pub const BUILTIN_DELAYS_MS: [[f64; 5]; 7] = [
    [5.470, 7.354, 9.166, 10.906, 12.574],
    [43.387, 60.919, 74.509, 84.157, 89.863],
    [45.400, 61.903, 74.536, 83.299, 88.192],
    [83.318, 115.469, 139.880, 156.551, 165.482],
    [301.728, 303.185, 304.569, 305.882, 307.122],
    [303.742, 304.169, 304.597, 305.024, 305.452],
    [341.659, 357.735, 369.940, 378.275, 382.741],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkTech {
    #[serde(rename = "DSRC")]
    Dsrc,
    #[serde(rename = "CV2X")]
    Cv2x,
    CellMqtt,
    Camera,
}

impl LinkTech {
    pub fn label(self) -> &'static str {
        match self {
            LinkTech::Dsrc => "DSRC",
            LinkTech::Cv2x => "CV2X",
            LinkTech::CellMqtt => "Cell",
            LinkTech::Camera => "Cam",
        }
    }
}

impl fmt::Display for LinkTech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// An (uplink, downlink) technology bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkPair {
    pub uplink: LinkTech,
    pub downlink: LinkTech,
}

impl LinkPair {
    pub const fn new(uplink: LinkTech, downlink: LinkTech) -> Self {
        LinkPair { uplink, downlink }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.uplink.label(), self.downlink.label())
    }
}

/// Row order of the published delay matrix.
pub const TABLE_PAIRS: [LinkPair; 7] = [
    LinkPair::new(LinkTech::Dsrc, LinkTech::Cv2x),
    LinkPair::new(LinkTech::Dsrc, LinkTech::CellMqtt),
    LinkPair::new(LinkTech::Cv2x, LinkTech::CellMqtt),
    LinkPair::new(LinkTech::CellMqtt, LinkTech::CellMqtt),
    LinkPair::new(LinkTech::Camera, LinkTech::Dsrc),
    LinkPair::new(LinkTech::Camera, LinkTech::Cv2x),
    LinkPair::new(LinkTech::Camera, LinkTech::CellMqtt),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatencyError {
    #[error("camera has no half-RTT; use composed_delay")]
    CameraHalfDelay,
    #[error("camera cannot be a downlink (no outbound camera link)")]
    CameraDownlink,
    #[error("speed {0} km/h is invalid (must be finite and >= 0)")]
    InvalidSpeed(f64),
    #[error("speed range [{0}, {1}] is invalid")]
    InvalidRange(f64, f64),
    #[error(
        "inconsistent delay table: row {row} ({label}) at {speed_kmh} km/h recomposes to {recomposed:.3} ms, printed {printed:.3} ms (residual {residual:.3} ms)"
    )]
    Inconsistent {
        row: usize,
        label: String,
        speed_kmh: f64,
        printed: f64,
        recomposed: f64,
        residual: f64,
    },
    #[error("malformed delay table: {0}")]
    Malformed(String),
}

/// Delay band a composed link delay falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayCategory {
    NearRealTime,
    ReducedLatency,
    Unserviceable,
}

impl DelayCategory {
    pub fn label(self) -> &'static str {
        match self {
            DelayCategory::NearRealTime => "near real-time",
            DelayCategory::ReducedLatency => "reduced latency",
            DelayCategory::Unserviceable => "unserviceable",
        }
    }
}

/// Bands are half-open: exactly 100 ms is reduced latency and exactly
/// 600 ms is unserviceable.
pub fn classify(delay_ms: f64) -> DelayCategory {
    if delay_ms < NEAR_REAL_TIME_MS {
        DelayCategory::NearRealTime
    } else if delay_ms < MAX_ITT_MS {
        DelayCategory::ReducedLatency
    } else {
        DelayCategory::Unserviceable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppClass {
    TimeCritical,
    TimeSensitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SafetyApp {
    /// Emergency electronic brake light.
    Eebl,
    /// Forward collision warning.
    Fcw,
    /// Intersection movement assist.
    Ima,
    /// Blind spot warning.
    Bsw,
    /// Lane change warning.
    Lcw,
    /// Do not pass warning.
    Dnpw,
}

impl SafetyApp {
    pub const ALL: [SafetyApp; 6] = [
        SafetyApp::Eebl,
        SafetyApp::Fcw,
        SafetyApp::Ima,
        SafetyApp::Bsw,
        SafetyApp::Lcw,
        SafetyApp::Dnpw,
    ];

    pub fn class(self) -> AppClass {
        match self {
            SafetyApp::Eebl | SafetyApp::Fcw | SafetyApp::Ima => AppClass::TimeCritical,
            SafetyApp::Bsw | SafetyApp::Lcw | SafetyApp::Dnpw => AppClass::TimeSensitive,
        }
    }

    pub fn max_latency_ms(self) -> f64 {
        match self.class() {
            AppClass::TimeCritical => 100.0,
            AppClass::TimeSensitive => 1000.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SafetyApp::Eebl => "EEBL",
            SafetyApp::Fcw => "FCW",
            SafetyApp::Ima => "IMA",
            SafetyApp::Bsw => "BSW",
            SafetyApp::Lcw => "LCW",
            SafetyApp::Dnpw => "DNPW",
        }
    }
}

/// Processing time of the camera detection pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpuOverhead {
    pub processing_ms: f64,
}

impl IpuOverhead {
    pub fn new(processing_ms: f64) -> Result<Self, LatencyError> {
        if processing_ms > 0.0 && processing_ms.is_finite() {
            Ok(IpuOverhead { processing_ms })
        } else {
            Err(LatencyError::Malformed(format!(
                "ipu processing time must be > 0, got {processing_ms}"
            )))
        }
    }
}

impl Default for IpuOverhead {
    fn default() -> Self {
        IpuOverhead {
            processing_ms: 300.0,
        }
    }
}

/// Composed link delays: seven link pairs by a strictly increasing set of
/// speed columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayMatrix {
    speeds: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl DelayMatrix {
    pub fn new(speeds: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self, LatencyError> {
        if speeds.is_empty() {
            return Err(LatencyError::Malformed("no speed columns".into()));
        }
        if speeds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(LatencyError::Malformed("speeds must be finite and >= 0".into()));
        }
        if speeds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LatencyError::Malformed(
                "speed columns must be strictly increasing".into(),
            ));
        }
        if rows.len() != TABLE_PAIRS.len() {
            return Err(LatencyError::Malformed(format!(
                "expected {} rows, got {}",
                TABLE_PAIRS.len(),
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != speeds.len() {
                return Err(LatencyError::Malformed(format!(
                    "row {} has {} cells, expected {}",
                    i + 1,
                    row.len(),
                    speeds.len()
                )));
            }
            if row.iter().any(|d| !d.is_finite()) {
                return Err(LatencyError::Malformed(format!("row {} has a non-finite cell", i + 1)));
            }
        }
        Ok(DelayMatrix { speeds, rows })
    }

    /// The published matrix.
    pub fn builtin() -> Self {
        DelayMatrix {
            speeds: TABLE_SPEEDS_KMH.to_vec(),
            rows: BUILTIN_DELAYS_MS.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn cell(&self, row: usize, col: usize) -> f64 {
        self.rows[row][col]
    }

    pub fn set_cell(&mut self, row: usize, col: usize, value: f64) {
        self.rows[row][col] = value;
    }

    /// Reads `link,<speed>,<speed>,...` followed by one labelled row per
    /// link pair in the canonical order (`DSRC-CV2X`, `DSRC-Cell`, ...).
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LatencyError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| LatencyError::Malformed(e.to_string()))?
            .clone();
        let speeds = headers
            .iter()
            .skip(1)
            .map(|h| {
                h.trim_end_matches("km/h")
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| LatencyError::Malformed(format!("bad speed header {h:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| LatencyError::Malformed(e.to_string()))?;
            let label = record.get(0).unwrap_or_default();
            let expected = TABLE_PAIRS
                .get(i)
                .ok_or_else(|| LatencyError::Malformed("too many rows".into()))?
                .label();
            if !label.eq_ignore_ascii_case(&expected) {
                return Err(LatencyError::Malformed(format!(
                    "row {} labelled {label:?}, expected {expected:?}",
                    i + 1
                )));
            }
            let cells = record
                .iter()
                .skip(1)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| LatencyError::Malformed(format!("bad cell {c:?} in row {}", i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(cells);
        }
        DelayMatrix::new(speeds, rows)
    }
}

/// Per-technology one-way delays sampled by speed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfDelayTable {
    speeds: Vec<f64>,
    dsrc: Vec<f64>,
    cv2x: Vec<f64>,
    cell: Vec<f64>,
}

impl HalfDelayTable {
    pub fn new(
        speeds: Vec<f64>,
        dsrc: Vec<f64>,
        cv2x: Vec<f64>,
        cell: Vec<f64>,
    ) -> Result<Self, LatencyError> {
        if speeds.is_empty() || speeds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LatencyError::Malformed(
                "half-delay speeds must be non-empty and strictly increasing".into(),
            ));
        }
        for (name, samples) in [("DSRC", &dsrc), ("CV2X", &cv2x), ("Cell", &cell)] {
            if samples.len() != speeds.len() {
                return Err(LatencyError::Malformed(format!("{name}: sample count mismatch")));
            }
            if samples.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(LatencyError::Malformed(format!("{name}: half delays must be > 0")));
            }
            if samples.windows(2).any(|w| w[1] < w[0]) {
                return Err(LatencyError::Malformed(format!(
                    "{name}: half delays must be non-decreasing in speed"
                )));
            }
        }
        Ok(HalfDelayTable {
            speeds,
            dsrc,
            cv2x,
            cell,
        })
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn samples(&self, tech: LinkTech) -> Result<&[f64], LatencyError> {
        match tech {
            LinkTech::Dsrc => Ok(&self.dsrc),
            LinkTech::Cv2x => Ok(&self.cv2x),
            LinkTech::CellMqtt => Ok(&self.cell),
            LinkTech::Camera => Err(LatencyError::CameraHalfDelay),
        }
    }
}

/// Output of [`derive_half_delays`].
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub table: HalfDelayTable,
    /// Largest |recomposed - printed| over the non-camera rows.
    pub max_residual_ms: f64,
}

/// Recovers per-technology halves from the camera rows and checks that they
/// recompose the four radio/cellular rows.
pub fn derive_half_delays(
    matrix: &DelayMatrix,
    ipu: IpuOverhead,
) -> Result<Derivation, LatencyError> {
    let halves_of = |row: usize| -> Vec<f64> {
        matrix.rows[row].iter().map(|d| d - ipu.processing_ms).collect()
    };
    let dsrc = halves_of(4);
    let cv2x = halves_of(5);
    let cell = halves_of(6);

    let mut max_residual = 0.0f64;
    for (row, pair) in TABLE_PAIRS.iter().enumerate().take(4) {
        for (col, &speed) in matrix.speeds.iter().enumerate() {
            let pick = |t: LinkTech| match t {
                LinkTech::Dsrc => dsrc[col],
                LinkTech::Cv2x => cv2x[col],
                _ => cell[col],
            };
            let recomposed = pick(pair.uplink) + pick(pair.downlink);
            let printed = matrix.rows[row][col];
            let residual = (recomposed - printed).abs();
            if residual > RECOMPOSITION_TOLERANCE_MS {
                return Err(LatencyError::Inconsistent {
                    row: row + 1,
                    label: pair.label(),
                    speed_kmh: speed,
                    printed,
                    recomposed,
                    residual,
                });
            }
            max_residual = max_residual.max(residual);
        }
    }

    let table = HalfDelayTable::new(matrix.speeds.clone(), dsrc, cv2x, cell)?;
    Ok(Derivation {
        table,
        max_residual_ms: max_residual,
    })
}

/// A one-way delay lookup. `clamped` is set when the speed lay beyond the
/// last sample and the last sample was returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfDelay {
    pub ms: f64,
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    halves: HalfDelayTable,
    ipu: IpuOverhead,
    residual_ms: f64,
}

impl LatencyModel {
    pub fn from_matrix(matrix: &DelayMatrix, ipu: IpuOverhead) -> Result<Self, LatencyError> {
        let d = derive_half_delays(matrix, ipu)?;
        Ok(LatencyModel {
            halves: d.table,
            ipu,
            residual_ms: d.max_residual_ms,
        })
    }

    pub fn builtin() -> Self {
        Self::from_matrix(&DelayMatrix::builtin(), IpuOverhead::default())
            .expect("published matrix is consistent")
    }

    pub fn halves(&self) -> &HalfDelayTable {
        &self.halves
    }

    pub fn ipu(&self) -> IpuOverhead {
        self.ipu
    }

    /// Worst recomposition residual seen while deriving the halves.
    pub fn residual_ms(&self) -> f64 {
        self.residual_ms
    }

    /// The same halves with a different camera processing time.
    pub fn with_ipu(&self, ipu: IpuOverhead) -> Self {
        LatencyModel {
            halves: self.halves.clone(),
            ipu,
            residual_ms: self.residual_ms,
        }
    }

    /// Piecewise-linear lookup, exact at sample speeds, clamped past the
    /// last sample.
    pub fn half_delay(&self, tech: LinkTech, speed_kmh: f64) -> Result<HalfDelay, LatencyError> {
        let samples = self.halves.samples(tech)?;
        if !speed_kmh.is_finite() || speed_kmh < 0.0 {
            return Err(LatencyError::InvalidSpeed(speed_kmh));
        }
        let speeds = &self.halves.speeds;
        let last = speeds.len() - 1;
        if speed_kmh >= speeds[last] {
            return Ok(HalfDelay {
                ms: samples[last],
                clamped: speed_kmh > speeds[last],
            });
        }
        if speed_kmh <= speeds[0] {
            return Ok(HalfDelay {
                ms: samples[0],
                clamped: false,
            });
        }
        let hi = speeds.partition_point(|s| *s <= speed_kmh);
        let lo = hi - 1;
        if speeds[lo] == speed_kmh {
            return Ok(HalfDelay {
                ms: samples[lo],
                clamped: false,
            });
        }
        let frac = (speed_kmh - speeds[lo]) / (speeds[hi] - speeds[lo]);
        Ok(HalfDelay {
            ms: samples[lo] + frac * (samples[hi] - samples[lo]),
            clamped: false,
        })
    }

    /// Uplink half plus downlink half; a camera uplink contributes the
    /// processing overhead instead.
    pub fn composed_delay(
        &self,
        uplink: LinkTech,
        downlink: LinkTech,
        speed_kmh: f64,
    ) -> Result<f64, LatencyError> {
        if downlink == LinkTech::Camera {
            return Err(LatencyError::CameraDownlink);
        }
        let down = self.half_delay(downlink, speed_kmh)?.ms;
        let up = match uplink {
            LinkTech::Camera => {
                if !speed_kmh.is_finite() || speed_kmh < 0.0 {
                    return Err(LatencyError::InvalidSpeed(speed_kmh));
                }
                self.ipu.processing_ms
            }
            t => self.half_delay(t, speed_kmh)?.ms,
        };
        Ok(up + down)
    }

    /// Maximum composed delay over a closed speed range. Exact: the model is
    /// piecewise linear, so the maximum sits on an endpoint or a sample.
    pub fn max_composed_delay(
        &self,
        uplink: LinkTech,
        downlink: LinkTech,
        range: (f64, f64),
    ) -> Result<f64, LatencyError> {
        let (lo, hi) = range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || lo > hi {
            return Err(LatencyError::InvalidRange(lo, hi));
        }
        let mut best = self
            .composed_delay(uplink, downlink, lo)?
            .max(self.composed_delay(uplink, downlink, hi)?);
        for &s in self.halves.speeds.iter().filter(|s| **s > lo && **s < hi) {
            best = best.max(self.composed_delay(uplink, downlink, s)?);
        }
        Ok(best)
    }

    /// Apps servable by the bundle over the whole speed range. Nothing at or
    /// above the MAX-ITT ceiling is servable, whatever the app's own limit.
    pub fn serviceable_apps(
        &self,
        uplink: LinkTech,
        downlink: LinkTech,
        range: (f64, f64),
    ) -> Result<Vec<SafetyApp>, LatencyError> {
        let worst = self.max_composed_delay(uplink, downlink, range)?;
        Ok(apps_for_delay(worst))
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Apps whose latency budget a bundle with this worst-case delay meets.
pub fn apps_for_delay(worst_ms: f64) -> Vec<SafetyApp> {
    if worst_ms >= MAX_ITT_MS {
        return Vec::new();
    }
    SafetyApp::ALL
        .into_iter()
        .filter(|a| worst_ms <= a.max_latency_ms())
        .collect()
}
