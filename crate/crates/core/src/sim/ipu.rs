use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::latency::IpuOverhead;
use crate::messages::{Detection, Position, SimTime};
use crate::sim::RoadUser;

/// Zero-mean Gaussian offset per horizontal axis. Draws nothing when
/// `std_m` is zero.
pub fn jitter<R: Rng + ?Sized>(p: &Position, std_m: f64, rng: &mut R) -> Position {
    if std_m <= 0.0 {
        return *p;
    }
    let normal = Normal::new(0.0, std_m).expect("finite non-negative std");
    let north = normal.sample(rng);
    let east = normal.sample(rng);
    p.offset(north, east)
}

/// One camera frame: a detection per user passed in, connected or not.
/// The caller decides who is inside the camera's coverage.
pub fn sample_ipu<'a, R: Rng + ?Sized>(
    users: impl IntoIterator<Item = &'a RoadUser>,
    now: SimTime,
    noise_std_m: f64,
    overhead: IpuOverhead,
    rng: &mut R,
) -> Vec<Detection> {
    let available_at = now + SimTime::from_millis_f64(overhead.processing_ms);
    users
        .into_iter()
        .map(|u| Detection {
            estimate: jitter(&u.position, noise_std_m, rng),
            speed: u.speed_kmh,
            heading: u.heading_deg,
            captured_at: now,
            available_at,
            source: Some(u.id.clone()),
        })
        .collect()
}
