use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::Serialize;

use crate::latency::MAX_ITT_MS;
use crate::messages::{RoadUserId, SimTime};
use crate::paths::PathKind;

/// Rounds to 3 decimals, the precision of every reported quantity.
pub fn round3(v: f64) -> f64 {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// One message arriving at one road user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub delivered_at: SimTime,
    pub receiver: RoadUserId,
    /// Id carried by the message; synthetic for camera tracks.
    pub message_id: RoadUserId,
    /// Ground-truth road user the message describes.
    pub subject: RoadUserId,
    pub path: PathKind,
    /// `generated_at` of the message, or capture time for camera paths.
    pub origin_at: SimTime,
    /// `delivered_at - origin_at`.
    pub awareness_ms: f64,
    /// Time a fresh camera track waited on its grace period before release.
    pub hold_ms: f64,
    /// Awareness latency minus hold: time spent on links and processing.
    pub path_ms: f64,
    /// Delay the latency model assigns to this path.
    pub expected_ms: f64,
    pub duplicate: bool,
    /// Camera-generated message about a connected user.
    pub ghost: bool,
}

impl DeliveryRecord {
    pub fn fidelity_error_ms(&self) -> f64 {
        (self.path_ms - self.expected_ms).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct Acc {
    count: u64,
    sum: f64,
    min: f64,
    max: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        if self.count == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.count += 1;
        self.sum += v;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    pub path: String,
    pub scenario: Option<u8>,
    pub count: u64,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub mean_expected_ms: f64,
    pub max_fidelity_error_ms: f64,
    pub max_hold_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairStats {
    pub receiver: RoadUserId,
    pub subject: RoadUserId,
    pub count: u64,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub first_aware_at_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageStatus {
    Ok,
    NoPairs,
}

/// Fraction of (connected receiver, other user) pairs holding a fresh record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub status: CoverageStatus,
    pub pairs: usize,
    pub last: Option<f64>,
    pub mean: Option<f64>,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub at_ms: SimTime,
    pub bsm_transmitted: u64,
    pub deliveries: u64,
    pub duplicates_suppressed: u64,
    pub ghost_deliveries: u64,
    pub coverage: Coverage,
    pub paths: Vec<PathStats>,
    pub pairs: Vec<PairStats>,
    pub max_path_latency_ms: Option<f64>,
    pub max_awareness_latency_ms: Option<f64>,
    pub max_fidelity_error_ms: f64,
    pub max_hold_ms: f64,
    /// No path latency reached the MAX-ITT ceiling.
    pub max_itt_compliant: bool,
    pub observed_hetero_paths: Vec<u8>,
}

/// Accumulates deliveries and coverage samples during a run.
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    users: Vec<(RoadUserId, bool)>,
    freshness: SimTime,
    records: Vec<DeliveryRecord>,
    seen: Vec<HashSet<(RoadUserId, SimTime)>>,
    latest: BTreeMap<(usize, usize), SimTime>,
    first_aware: BTreeMap<(usize, usize), SimTime>,
    coverage_sum: f64,
    coverage_samples: u64,
    coverage_last: Option<f64>,
    pub(crate) bsm_transmitted: u64,
}

impl MetricsCollector {
    /// `users` lists every road user with its connectivity, in index order.
    pub fn new(users: Vec<(RoadUserId, bool)>, freshness_ms: f64) -> Self {
        let n = users.len();
        MetricsCollector {
            users,
            freshness: SimTime::from_millis_f64(freshness_ms),
            records: Vec::new(),
            seen: vec![HashSet::new(); n],
            latest: BTreeMap::new(),
            first_aware: BTreeMap::new(),
            coverage_sum: 0.0,
            coverage_samples: 0,
            coverage_last: None,
            bsm_transmitted: 0,
        }
    }

    pub fn records(&self) -> &[DeliveryRecord] {
        &self.records
    }

    /// Registers a delivery. Only the first copy of a logical message
    /// counts toward awareness.
    pub fn record(&mut self, receiver: usize, subject: usize, mut rec: DeliveryRecord) {
        let key = (rec.message_id.clone(), rec.origin_at);
        rec.duplicate = !self.seen[receiver].insert(key);
        if !rec.duplicate && !rec.ghost && receiver != subject {
            let k = (receiver, subject);
            let e = self.latest.entry(k).or_insert(rec.origin_at);
            if rec.origin_at > *e {
                *e = rec.origin_at;
            }
            self.first_aware.entry(k).or_insert(rec.delivered_at);
        }
        self.records.push(rec);
    }

    fn pair_count(&self) -> usize {
        let n = self.users.len();
        let connected = self.users.iter().filter(|(_, c)| *c).count();
        connected * n.saturating_sub(1)
    }

    pub fn coverage_at(&self, now: SimTime) -> Option<f64> {
        let pairs = self.pair_count();
        if pairs == 0 {
            return None;
        }
        let mut fresh = 0usize;
        for (r, (_, connected)) in self.users.iter().enumerate() {
            if !connected {
                continue;
            }
            for s in 0..self.users.len() {
                if s == r {
                    continue;
                }
                if let Some(origin) = self.latest.get(&(r, s)) {
                    if now - *origin < self.freshness {
                        fresh += 1;
                    }
                }
            }
        }
        Some(fresh as f64 / pairs as f64)
    }

    /// Samples coverage and discards dedup keys too old to recur.
    pub fn tick(&mut self, now: SimTime) {
        if let Some(c) = self.coverage_at(now) {
            self.coverage_sum += c;
            self.coverage_samples += 1;
            self.coverage_last = Some(c);
        }
        let horizon = now - SimTime::from_millis(10_000);
        for s in &mut self.seen {
            s.retain(|(_, t)| *t >= horizon);
        }
    }

    pub fn first_aware(&self, receiver: usize, subject: usize) -> Option<SimTime> {
        self.first_aware.get(&(receiver, subject)).copied()
    }

    pub fn snapshot(&self, now: SimTime) -> Metrics {
        let mut paths: BTreeMap<PathKind, (Acc, Acc, f64, f64)> = BTreeMap::new();
        let mut pairs: BTreeMap<(RoadUserId, RoadUserId), Acc> = BTreeMap::new();
        let mut max_path: Option<f64> = None;
        let mut max_aware: Option<f64> = None;
        let mut max_err = 0.0f64;
        let mut max_hold = 0.0f64;
        let mut dup = 0u64;
        let mut ghosts = 0u64;
        let mut observed = BTreeSet::new();
        for r in &self.records {
            let e = paths.entry(r.path).or_default();
            e.0.push(r.path_ms);
            e.1.push(r.expected_ms);
            e.2 = e.2.max(r.fidelity_error_ms());
            e.3 = e.3.max(r.hold_ms);
            max_path = Some(max_path.map_or(r.path_ms, |m: f64| m.max(r.path_ms)));
            max_aware = Some(max_aware.map_or(r.awareness_ms, |m: f64| m.max(r.awareness_ms)));
            max_err = max_err.max(r.fidelity_error_ms());
            max_hold = max_hold.max(r.hold_ms);
            if let PathKind::Hetero(n) = r.path {
                observed.insert(n);
            }
            if r.duplicate {
                dup += 1;
            }
            if r.ghost {
                ghosts += 1;
            }
            if !r.duplicate && !r.ghost && r.receiver != r.subject {
                pairs
                    .entry((r.receiver.clone(), r.subject.clone()))
                    .or_default()
                    .push(r.awareness_ms);
            }
        }

        let index: BTreeMap<&RoadUserId, usize> =
            self.users.iter().enumerate().map(|(i, (id, _))| (id, i)).collect();
        let pairs = pairs
            .into_iter()
            .map(|((receiver, subject), acc)| {
                let first = self
                    .first_aware(index[&receiver], index[&subject])
                    .map(|t| t.as_millis_f64())
                    .unwrap_or(0.0);
                PairStats {
                    receiver,
                    subject,
                    count: acc.count,
                    min_ms: round3(acc.min),
                    mean_ms: round3(acc.mean()),
                    max_ms: round3(acc.max),
                    first_aware_at_ms: round3(first),
                }
            })
            .collect();

        let paths = paths
            .into_iter()
            .map(|(kind, (acc, expected, err, hold))| PathStats {
                path: kind.to_string(),
                scenario: match kind {
                    PathKind::Hetero(n) => Some(n),
                    PathKind::Direct(_) => None,
                },
                count: acc.count,
                min_ms: round3(acc.min),
                mean_ms: round3(acc.mean()),
                max_ms: round3(acc.max),
                mean_expected_ms: round3(expected.mean()),
                max_fidelity_error_ms: round3(err),
                max_hold_ms: round3(hold),
            })
            .collect();

        let pair_count = self.pair_count();
        let coverage = Coverage {
            status: if pair_count == 0 {
                CoverageStatus::NoPairs
            } else {
                CoverageStatus::Ok
            },
            pairs: pair_count,
            last: self.coverage_last.map(round3),
            mean: (self.coverage_samples > 0)
                .then(|| round3(self.coverage_sum / self.coverage_samples as f64)),
            samples: self.coverage_samples,
        };

        Metrics {
            at_ms: now,
            bsm_transmitted: self.bsm_transmitted,
            deliveries: self.records.len() as u64,
            duplicates_suppressed: dup,
            ghost_deliveries: ghosts,
            coverage,
            paths,
            pairs,
            max_path_latency_ms: max_path.map(round3),
            max_awareness_latency_ms: max_aware.map(round3),
            max_fidelity_error_ms: round3(max_err),
            max_hold_ms: round3(max_hold),
            max_itt_compliant: max_path.is_none_or(|m| m < MAX_ITT_MS),
            observed_hetero_paths: observed.into_iter().collect(),
        }
    }
}
