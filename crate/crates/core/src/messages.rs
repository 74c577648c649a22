//! Safety-message value types shared by every other module.
//!
//! Messages are semantic records, not bit-encoded J2735 frames. Serialized
//! field names are stable: the JSON shape is part of the report format.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::latency::LinkTech;

/// Mean Earth radius in meters, used for the local planar projection.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Prefix reserved for identifiers minted by the roadside unit.
pub const SYNTHETIC_ID_PREFIX: &str = "ipu-";

/// Simulation time with microsecond resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(i64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: i64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: i64) -> Self {
        SimTime(ms * 1000)
    }

    /// Rounds a millisecond quantity to the nearest microsecond.
    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1000.0).round() as i64)
    }

    pub const fn as_micros(self) -> i64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.as_millis_f64())
    }
}

/// Times serialize as milliseconds, which round-trips exactly for
/// microsecond-resolution values.
impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_millis_f64())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(SimTime::from_millis_f64)
    }
}

/// Opaque road-user identifier, carried as the BSM transmitter id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadUserId(String);

impl RoadUserId {
    pub fn new(value: impl Into<String>) -> Self {
        RoadUserId(value.into())
    }

    /// Identifier in the namespace reserved for roadside-generated tracks.
    pub fn synthetic(sequence: u64) -> Self {
        RoadUserId(format!("{SYNTHETIC_ID_PREFIX}{sequence}"))
    }

    pub fn is_synthetic(&self) -> bool {
        self.0.starts_with(SYNTHETIC_ID_PREFIX)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RoadUserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RoadUserId {
    fn from(s: &str) -> Self {
        RoadUserId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    #[serde(rename = "lat")]
    pub latitude: f64,
    #[serde(rename = "lon")]
    pub longitude: f64,
    #[serde(rename = "elev")]
    pub elevation: f64,
}

impl Position {
    pub fn new(latitude: f64, longitude: f64, elevation: f64) -> Self {
        Position {
            latitude,
            longitude,
            elevation,
        }
    }

    /// Moves the position by a local north/east displacement in meters.
    pub fn offset(&self, north_m: f64, east_m: f64) -> Position {
        let dlat = (north_m / EARTH_RADIUS_M).to_degrees();
        let mid = (self.latitude + dlat / 2.0).to_radians();
        let dlon = (east_m / (EARTH_RADIUS_M * mid.cos())).to_degrees();
        Position {
            latitude: self.latitude + dlat,
            longitude: self.longitude + dlon,
            elevation: self.elevation,
        }
    }

    /// Horizontal distance in meters under a locally planar projection.
    /// Elevation is ignored.
    pub fn horizontal_distance(&self, other: &Position) -> f64 {
        let mean_lat = ((self.latitude + other.latitude) / 2.0).to_radians();
        let dn = (other.latitude - self.latitude).to_radians() * EARTH_RADIUS_M;
        let de = (other.longitude - self.longitude).to_radians() * EARTH_RADIUS_M * mean_lat.cos();
        dn.hypot(de)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionAccuracy {
    #[serde(rename = "sigma")]
    pub horizontal_sigma: f64,
    pub dop: f64,
}

impl PositionAccuracy {
    pub fn new(horizontal_sigma: f64, dop: f64) -> Self {
        PositionAccuracy {
            horizontal_sigma,
            dop,
        }
    }
}

impl Default for PositionAccuracy {
    fn default() -> Self {
        PositionAccuracy {
            horizontal_sigma: 0.0,
            dop: 1.0,
        }
    }
}

/// Position, speed (km/h) and heading (degrees clockwise from north).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub position: Position,
    pub speed_kmh: f64,
    pub heading_deg: f64,
}

/// One road user's safety-state message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bsm {
    pub id: RoadUserId,
    #[serde(flatten)]
    pub position: Position,
    #[serde(flatten)]
    pub accuracy: PositionAccuracy,
    #[serde(rename = "speed_kmh")]
    pub speed: f64,
    #[serde(rename = "heading_deg")]
    pub heading: f64,
    #[serde(rename = "generated_at_ms")]
    pub generated_at: SimTime,
    pub origin_tech: LinkTech,
}

impl Bsm {
    /// Key identifying one logical message across relays.
    pub fn key(&self) -> (RoadUserId, SimTime) {
        (self.id.clone(), self.generated_at)
    }

    pub fn kinematics(&self) -> Kinematics {
        Kinematics {
            position: self.position,
            speed_kmh: self.speed,
            heading_deg: self.heading,
        }
    }
}

/// A position estimate from the camera pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub estimate: Position,
    #[serde(rename = "speed_kmh")]
    pub speed: f64,
    #[serde(rename = "heading_deg")]
    pub heading: f64,
    #[serde(rename = "captured_at_ms")]
    pub captured_at: SimTime,
    #[serde(rename = "available_at_ms")]
    pub available_at: SimTime,
    /// Ground truth, known only to the simulator. The filter never reads it.
    #[serde(skip)]
    pub source: Option<RoadUserId>,
}

impl Detection {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics {
            position: self.estimate,
            speed_kmh: self.speed,
            heading_deg: self.heading,
        }
    }
}

/// The closed set of broker topics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Topic {
    #[serde(rename = "IPU")]
    Ipu,
    #[serde(rename = "DSRC")]
    Dsrc,
    #[serde(rename = "CV2X")]
    Cv2x,
    #[serde(rename = "Cell")]
    Cell,
}

impl Topic {
    pub const ALL: [Topic; 4] = [Topic::Ipu, Topic::Dsrc, Topic::Cv2x, Topic::Cell];

    pub fn name(self) -> &'static str {
        match self {
            Topic::Ipu => "IPU",
            Topic::Dsrc => "DSRC",
            Topic::Cv2x => "CV2X",
            Topic::Cell => "Cell",
        }
    }

    pub fn parse(name: &str) -> Result<Topic, MessageError> {
        Topic::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| MessageError::UnknownTopic(name.to_string()))
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqttEnvelope {
    pub topic: Topic,
    pub payload: Bsm,
    #[serde(rename = "published_at_ms")]
    pub published_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MessageError {
    #[error("{0}")]
    Invalid(Violation),
    #[error("camera is not a BSM origin")]
    CameraOrigin,
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
}

/// One broken BSM field invariant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    Latitude,
    Longitude,
    Elevation,
    Sigma,
    Dop,
    Speed,
    Heading,
    NegativeTimestamp,
    CameraOrigin,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = match self {
            Violation::Latitude => "latitude out of range",
            Violation::Longitude => "longitude out of range",
            Violation::Elevation => "elevation is not finite",
            Violation::Sigma => "horizontal sigma must be >= 0",
            Violation::Dop => "dop must be >= 1",
            Violation::Speed => "speed must be >= 0",
            Violation::Heading => "heading out of [0,360)",
            Violation::NegativeTimestamp => "negative timestamp",
            Violation::CameraOrigin => "camera is not a BSM origin",
        };
        f.write_str(msg)
    }
}

/// Builds a validated BSM stamped with `now`.
pub fn make_bsm(
    id: RoadUserId,
    kinematics: Kinematics,
    accuracy: PositionAccuracy,
    tech: LinkTech,
    now: SimTime,
) -> Result<Bsm, MessageError> {
    if tech == LinkTech::Camera {
        return Err(MessageError::CameraOrigin);
    }
    let bsm = Bsm {
        id,
        position: kinematics.position,
        accuracy,
        speed: kinematics.speed_kmh,
        heading: kinematics.heading_deg,
        generated_at: now,
        origin_tech: tech,
    };
    match validate_bsm(&bsm) {
        Ok(()) => Ok(bsm),
        Err(violations) => Err(MessageError::Invalid(violations[0])),
    }
}

/// Returns every invariant violation in `bsm`, or `Ok` when there are none.
pub fn validate_bsm(bsm: &Bsm) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let p = &bsm.position;
    if !(-90.0..=90.0).contains(&p.latitude) {
        out.push(Violation::Latitude);
    }
    if !(-180.0..=180.0).contains(&p.longitude) {
        out.push(Violation::Longitude);
    }
    if !p.elevation.is_finite() {
        out.push(Violation::Elevation);
    }
    if !(bsm.accuracy.horizontal_sigma.is_finite() && bsm.accuracy.horizontal_sigma >= 0.0) {
        out.push(Violation::Sigma);
    }
    if !(bsm.accuracy.dop.is_finite() && bsm.accuracy.dop >= 1.0) {
        out.push(Violation::Dop);
    }
    if !(bsm.speed.is_finite() && bsm.speed >= 0.0) {
        out.push(Violation::Speed);
    }
    if !(0.0..360.0).contains(&bsm.heading) {
        out.push(Violation::Heading);
    }
    if bsm.generated_at < SimTime::ZERO {
        out.push(Violation::NegativeTimestamp);
    }
    if bsm.origin_tech == LinkTech::Camera {
        out.push(Violation::CameraOrigin);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// Normalizes any finite heading into [0, 360).
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}
