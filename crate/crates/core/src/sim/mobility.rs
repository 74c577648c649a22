use serde::{Deserialize, Serialize};

use crate::latency::LinkTech;
use crate::messages::{Position, RoadUserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadUserKind {
    NativeDsrc,
    NativeCv2x,
    NonnativeCell,
    NonConnected,
}

impl RoadUserKind {
    pub fn is_connected(self) -> bool {
        self != RoadUserKind::NonConnected
    }

    /// The single technology this kind transmits and receives on.
    pub fn tech(self) -> Option<LinkTech> {
        match self {
            RoadUserKind::NativeDsrc => Some(LinkTech::Dsrc),
            RoadUserKind::NativeCv2x => Some(LinkTech::Cv2x),
            RoadUserKind::NonnativeCell => Some(LinkTech::CellMqtt),
            RoadUserKind::NonConnected => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoadUser {
    pub id: RoadUserId,
    pub kind: RoadUserKind,
    pub position: Position,
    pub speed_kmh: f64,
    pub heading_deg: f64,
    /// Per-axis standard deviation of the reported position. Unused for
    /// non-connected users.
    pub gnss_error_std_m: f64,
    pub bsm_interval_ms: f64,
}

/// Constant-velocity advance along the heading.
pub fn step_mobility(user: &RoadUser, dt_ms: f64) -> Position {
    let distance = user.speed_kmh / 3.6 * dt_ms / 1000.0;
    let h = user.heading_deg.to_radians();
    user.position.offset(distance * h.cos(), distance * h.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(speed: f64, heading: f64) -> RoadUser {
        RoadUser {
            id: "U1".into(),
            kind: RoadUserKind::NativeDsrc,
            position: Position::new(-32.0, 115.8, 12.0),
            speed_kmh: speed,
            heading_deg: heading,
            gnss_error_std_m: 0.0,
            bsm_interval_ms: 100.0,
        }
    }

    #[test]
    fn stationary_user_stays_put() {
        let u = user(0.0, 45.0);
        assert_eq!(step_mobility(&u, 12_345.0), u.position);
    }

    #[test]
    fn sixty_kmh_for_a_second_goes_north() {
        let u = user(60.0, 0.0);
        let p = step_mobility(&u, 1000.0);
        // 60 km/h = 16.667 m/s
        assert!((u.position.horizontal_distance(&p) - 16.667).abs() < 1e-3);
        assert!(p.latitude > u.position.latitude);
        assert!((p.longitude - u.position.longitude).abs() < 1e-12);
        assert_eq!(p.elevation, u.position.elevation);
    }

    #[test]
    fn steps_compose() {
        let mut u = user(90.0, 60.0);
        let once = step_mobility(&u, 2000.0);
        u.position = step_mobility(&u, 1000.0);
        let twice = step_mobility(&u, 1000.0);
        assert!(once.horizontal_distance(&twice) < 1e-6);
    }
}
