//! Shared fixtures for the benchmarks.

use arsu_core::config::{ScenarioConfig, UserGroup};
use arsu_core::messages::{make_bsm, Kinematics, PositionAccuracy};
use arsu_core::{Bsm, LinkTech, Position, RoadUserId, RoadUserKind, SimTime};

/// `per_kind` users of each of the four kinds at `speed_kmh`.
pub fn mixed_scenario(per_kind: u32, speed_kmh: f64, duration_ms: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::with_duration(duration_ms);
    c.scenario_speed_kmh = speed_kmh;
    c.users = [
        RoadUserKind::NativeDsrc,
        RoadUserKind::NativeCv2x,
        RoadUserKind::NonnativeCell,
        RoadUserKind::NonConnected,
    ]
    .into_iter()
    .map(|kind| UserGroup {
        kind,
        count: per_kind,
        id: None,
        north_m: None,
        east_m: None,
        speed_kmh: None,
        heading_deg: 0.0,
        gnss_noise_std_m: None,
        bsm_interval_ms: None,
        bsm_offset_ms: 0.0,
    })
    .collect();
    c
}

/// A radio BSM from user `n`, `n` meters east of the origin.
pub fn bsm(n: u64, at: SimTime) -> Bsm {
    make_bsm(
        RoadUserId::new(format!("v{n}")),
        Kinematics {
            position: Position::new(-31.95, 115.86, 0.0).offset(0.0, n as f64 * 12.0),
            speed_kmh: 50.0,
            heading_deg: 90.0,
        },
        PositionAccuracy::new(1.5, 1.0),
        LinkTech::Dsrc,
        at,
    )
    .expect("valid fixture")
}
