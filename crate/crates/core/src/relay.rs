//! The roadside unit's decision engine.
//!
//! Relayed messages are retransmitted verbatim on the media their senders
//! cannot reach. The unit never speaks for a connected user. It only mints
//! messages for camera tracks that no received message accounts for, and
//! only after a grace period that lets late messages arrive.
//!
//! Every input is handled synchronously and in the order the caller supplies.

use std::collections::{HashSet, VecDeque};
use std::fmt;

use serde::Serialize;

use crate::latency::LinkTech;
use crate::messages::{
    make_bsm, normalize_heading, Bsm, Detection, Kinematics, Position, PositionAccuracy,
    RoadUserId, SimTime, Topic,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Calibration error: the gate between a camera estimate and a reported
    /// position.
    pub sigma_m: f64,
    pub window_ms: f64,
    pub grace_ms: f64,
    pub seen_retention_ms: f64,
    /// Confirmed tracks not refreshed for this long are forgotten.
    pub track_timeout_ms: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            sigma_m: 5.0,
            window_ms: 200.0,
            grace_ms: 100.0,
            seen_retention_ms: 1000.0,
            track_timeout_ms: 600.0,
        }
    }
}

impl FilterConfig {
    /// Returns the name of the first out-of-range field.
    pub fn check(&self) -> Result<(), &'static str> {
        if !(self.sigma_m > 0.0 && self.sigma_m.is_finite()) {
            return Err("filter.sigma_m");
        }
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err("filter.window_ms");
        }
        if !(self.grace_ms >= 0.0 && self.grace_ms.is_finite()) {
            return Err("filter.grace_ms");
        }
        if !(self.seen_retention_ms > 0.0 && self.seen_retention_ms.is_finite()) {
            return Err("filter.seen_retention_ms");
        }
        if !(self.track_timeout_ms > 0.0 && self.track_timeout_ms.is_finite()) {
            return Err("filter.track_timeout_ms");
        }
        Ok(())
    }
}

/// Medium a message reached the unit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum RxVia {
    Dsrc,
    Cv2x,
    MqttCell,
}

impl RxVia {
    pub fn tech(self) -> LinkTech {
        match self {
            RxVia::Dsrc => LinkTech::Dsrc,
            RxVia::Cv2x => LinkTech::Cv2x,
            RxVia::MqttCell => LinkTech::CellMqtt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ActionKind {
    TxDsrc,
    TxCv2x,
    PublishMqtt(Topic),
}

impl ActionKind {
    /// Medium the action emits on.
    pub fn tech(self) -> LinkTech {
        match self {
            ActionKind::TxDsrc => LinkTech::Dsrc,
            ActionKind::TxCv2x => LinkTech::Cv2x,
            ActionKind::PublishMqtt(_) => LinkTech::CellMqtt,
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::TxDsrc => f.write_str("TxDsrc"),
            ActionKind::TxCv2x => f.write_str("TxCv2x"),
            ActionKind::PublishMqtt(t) => write!(f, "Publish({t})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelayAction {
    pub kind: ActionKind,
    pub payload: Bsm,
}

/// Relay outputs for one received message. Never echoes on the inbound
/// medium and never publishes to the Cell topic.
pub fn relay_kinds(via: RxVia) -> &'static [ActionKind] {
    match via {
        RxVia::Dsrc => &[ActionKind::TxCv2x, ActionKind::PublishMqtt(Topic::Dsrc)],
        RxVia::Cv2x => &[ActionKind::TxDsrc, ActionKind::PublishMqtt(Topic::Cv2x)],
        RxVia::MqttCell => &[ActionKind::TxDsrc, ActionKind::TxCv2x],
    }
}

/// Outputs for a confirmed non-connected road user.
pub const CAMERA_KINDS: [ActionKind; 3] = [
    ActionKind::TxDsrc,
    ActionKind::TxCv2x,
    ActionKind::PublishMqtt(Topic::Ipu),
];

fn ms(v: f64) -> SimTime {
    SimTime::from_millis_f64(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub bsm: Bsm,
    pub received_at: SimTime,
}

/// Recently received positions of connected road users.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    entries: VecDeque<HistoryEntry>,
    window: SimTime,
}

impl HistoryStore {
    pub fn new(window_ms: f64) -> Self {
        HistoryStore {
            entries: VecDeque::new(),
            window: ms(window_ms),
        }
    }

    pub fn push(&mut self, bsm: Bsm, received_at: SimTime) {
        self.entries.push_back(HistoryEntry { bsm, received_at });
    }

    /// Keeps entries with `received_at >= now - window`, in their original order.
    pub fn prune(&mut self, now: SimTime) {
        let cutoff = now - self.window;
        self.entries.retain(|e| e.received_at >= cutoff);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    /// Nearest entry strictly inside `sigma_m`; ties go to the most recently
    /// received.
    pub fn nearest_within(&self, at: &Position, sigma_m: f64) -> Option<(&HistoryEntry, f64)> {
        let mut best: Option<(&HistoryEntry, f64)> = None;
        for e in &self.entries {
            let d = at.horizontal_distance(&e.bsm.position);
            if d >= sigma_m {
                continue;
            }
            best = match best {
                Some((b, bd)) if bd < d || (bd == d && b.received_at > e.received_at) => Some((b, bd)),
                _ => Some((e, d)),
            };
        }
        best
    }
}

/// Logical messages already relayed, keyed by `(id, generated_at)`.
#[derive(Debug, Clone)]
pub struct SeenSet {
    keys: HashSet<(RoadUserId, SimTime)>,
    order: VecDeque<(SimTime, (RoadUserId, SimTime))>,
    retention: SimTime,
}

impl SeenSet {
    pub fn new(retention_ms: f64) -> Self {
        SeenSet {
            keys: HashSet::new(),
            order: VecDeque::new(),
            retention: ms(retention_ms),
        }
    }

    /// Returns false when the key was already present.
    pub fn insert(&mut self, key: (RoadUserId, SimTime), now: SimTime) -> bool {
        if self.keys.contains(&key) {
            return false;
        }
        self.keys.insert(key.clone());
        self.order.push_back((now, key));
        true
    }

    pub fn contains(&self, key: &(RoadUserId, SimTime)) -> bool {
        self.keys.contains(key)
    }

    pub fn prune(&mut self, now: SimTime) {
        while let Some((at, _)) = self.order.front() {
            if now - *at <= self.retention {
                break;
            }
            let (_, key) = self.order.pop_front().expect("front exists");
            self.keys.remove(&key);
        }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trk-{}", self.0)
    }
}

/// An unmatched camera track awaiting late messages.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingDetection {
    pub track: TrackId,
    pub detection: Detection,
    /// Most recent detection associated with the track.
    pub latest: Detection,
    pub first_seen: SimTime,
    pub deadline: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfirmedTrack {
    pub synthetic: RoadUserId,
    pub track: TrackId,
    pub latest: Detection,
    pub last_update: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectionOutcome {
    Connected {
        matched: RoadUserId,
    },
    Pending {
        track: TrackId,
        deadline: SimTime,
        /// False when the detection joined an already pending track.
        new_track: bool,
    },
    NonConnected {
        synthetic: RoadUserId,
        actions: Vec<RelayAction>,
    },
}

/// A track confirmed as a non-connected road user.
#[derive(Debug, Clone, PartialEq)]
pub struct Confirmation {
    pub synthetic: RoadUserId,
    pub track: TrackId,
    pub first_seen: SimTime,
    pub confirmed_at: SimTime,
    pub detection: Detection,
    pub actions: Vec<RelayAction>,
}

/// Emission for a camera track, with the simulator's ground truth attached.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraEmission {
    pub synthetic: RoadUserId,
    pub truth: Option<RoadUserId>,
    pub at: SimTime,
    pub confirmation: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GhostReport {
    /// Confirmations whose true road user is connected.
    pub count: usize,
    /// `(synthetic id, true id)` per ghost confirmation.
    pub pairs: Vec<(RoadUserId, RoadUserId)>,
    /// Every generated message attributed to a connected user, refreshes included.
    pub ghost_bsms: usize,
    pub confirmations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Relayed,
    Suppressed,
    Connected,
    Pending,
    Resolved,
    NonConnected,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Outcome::Relayed => "Relayed",
            Outcome::Suppressed => "Suppressed",
            Outcome::Connected => "Connected",
            Outcome::Pending => "Pending",
            Outcome::Resolved => "Resolved",
            Outcome::NonConnected => "NonConnected",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub at: SimTime,
    pub event: &'static str,
    pub input: String,
    pub outcome: Outcome,
    pub actions: Vec<ActionKind>,
    /// Timestamp carried by the input: `generated_at` or `captured_at`.
    pub input_time: SimTime,
}

#[derive(Debug, Clone)]
pub struct Arsu {
    config: FilterConfig,
    history: HistoryStore,
    seen: SeenSet,
    pending: Vec<PendingDetection>,
    confirmed: Vec<ConfirmedTrack>,
    emissions: Vec<CameraEmission>,
    trace: Vec<DecisionRecord>,
    next_track: u64,
    next_synthetic: u64,
    actions_emitted: usize,
}

impl Arsu {
    pub fn new(config: FilterConfig) -> Self {
        Arsu {
            history: HistoryStore::new(config.window_ms),
            seen: SeenSet::new(config.seen_retention_ms),
            config,
            pending: Vec::new(),
            confirmed: Vec::new(),
            emissions: Vec::new(),
            trace: Vec::new(),
            next_track: 1,
            next_synthetic: 1,
            actions_emitted: 0,
        }
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn history(&self) -> &HistoryStore {
        &self.history
    }

    pub fn pending(&self) -> &[PendingDetection] {
        &self.pending
    }

    pub fn confirmed(&self) -> &[ConfirmedTrack] {
        &self.confirmed
    }

    pub fn trace(&self) -> &[DecisionRecord] {
        &self.trace
    }

    pub fn actions_emitted(&self) -> usize {
        self.actions_emitted
    }

    pub fn emissions(&self) -> &[CameraEmission] {
        &self.emissions
    }

    /// Earliest deadline among pending tracks.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.pending.iter().map(|p| p.deadline).min()
    }

    pub fn prune_history(&mut self, now: SimTime) {
        self.history.prune(now);
    }

    /// Handles a received message from a connected road user.
    pub fn on_rx(&mut self, bsm: Bsm, via: RxVia, now: SimTime) -> Vec<RelayAction> {
        self.seen.prune(now);
        self.history.prune(now);
        let key = bsm.key();
        if bsm.id.is_synthetic() || !self.seen.insert(key, now) {
            self.record(now, "rx", bsm.id.to_string(), Outcome::Suppressed, Vec::new(), bsm.generated_at);
            return Vec::new();
        }

        self.resolve_pending_near(&bsm.position, &bsm.id, now);

        let actions: Vec<RelayAction> = relay_kinds(via)
            .iter()
            .map(|&kind| RelayAction {
                kind,
                payload: bsm.clone(),
            })
            .collect();
        self.record(
            now,
            "rx",
            bsm.id.to_string(),
            Outcome::Relayed,
            actions.iter().map(|a| a.kind).collect(),
            bsm.generated_at,
        );
        self.history.push(bsm, now);
        self.actions_emitted += actions.len();
        actions
    }

    /// Classifies one camera detection.
    pub fn on_detection(&mut self, det: Detection, now: SimTime) -> DetectionOutcome {
        debug_assert!(det.available_at <= now, "detection used before it is available");
        self.history.prune(now);
        self.seen.prune(now);
        self.expire_tracks(now);
        let sigma = self.config.sigma_m;
        let label = format!("det@{}", det.captured_at);

        if let Some((entry, _)) = self.history.nearest_within(&det.estimate, sigma) {
            let matched = entry.bsm.id.clone();
            self.resolve_pending_near(&det.estimate, &matched, now);
            self.record(now, "detection", label, Outcome::Connected, Vec::new(), det.captured_at);
            return DetectionOutcome::Connected { matched };
        }

        if let Some(i) = nearest_index(self.confirmed.iter().map(|t| &t.latest.estimate), &det.estimate, sigma) {
            let track = &mut self.confirmed[i];
            track.latest = det.clone();
            track.last_update = now;
            let synthetic = track.synthetic.clone();
            let actions = self.emit_camera(&synthetic, &det, now, false);
            self.record(
                now,
                "detection",
                label,
                Outcome::NonConnected,
                actions.iter().map(|a| a.kind).collect(),
                det.captured_at,
            );
            return DetectionOutcome::NonConnected { synthetic, actions };
        }

        if let Some(i) = nearest_index(self.pending.iter().map(|p| &p.latest.estimate), &det.estimate, sigma) {
            let p = &mut self.pending[i];
            p.latest = det.clone();
            let (track, deadline) = (p.track, p.deadline);
            self.record(now, "detection", label, Outcome::Pending, Vec::new(), det.captured_at);
            return DetectionOutcome::Pending {
                track,
                deadline,
                new_track: false,
            };
        }

        let track = TrackId(self.next_track);
        self.next_track += 1;
        let deadline = now + ms(self.config.grace_ms);
        self.pending.push(PendingDetection {
            track,
            detection: det.clone(),
            latest: det.clone(),
            first_seen: now,
            deadline,
        });
        self.record(now, "detection", label, Outcome::Pending, Vec::new(), det.captured_at);
        DetectionOutcome::Pending {
            track,
            deadline,
            new_track: true,
        }
    }

    /// Confirms every pending track whose grace period has run out.
    pub fn expire_pending(&mut self, now: SimTime) -> Vec<Confirmation> {
        let (due, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending)
            .into_iter()
            .partition(|p| p.deadline <= now);
        self.pending = keep;
        let mut out = Vec::with_capacity(due.len());
        for p in due {
            let synthetic = RoadUserId::synthetic(self.next_synthetic);
            self.next_synthetic += 1;
            let actions = self.emit_camera(&synthetic, &p.latest, now, true);
            self.record(
                now,
                "grace",
                p.track.to_string(),
                Outcome::NonConnected,
                actions.iter().map(|a| a.kind).collect(),
                p.detection.captured_at,
            );
            self.confirmed.push(ConfirmedTrack {
                synthetic: synthetic.clone(),
                track: p.track,
                latest: p.latest.clone(),
                last_update: now,
            });
            out.push(Confirmation {
                synthetic,
                track: p.track,
                first_seen: p.first_seen,
                confirmed_at: now,
                detection: p.latest,
                actions,
            });
        }
        out
    }

    /// Confirmations whose true road user is connected, judged by the
    /// simulator's ground truth.
    pub fn ghost_events(&self, is_connected: impl Fn(&RoadUserId) -> bool) -> GhostReport {
        let mut report = GhostReport::default();
        for e in &self.emissions {
            if e.confirmation {
                report.confirmations += 1;
            }
            let Some(truth) = &e.truth else { continue };
            if !is_connected(truth) {
                continue;
            }
            report.ghost_bsms += 1;
            if e.confirmation {
                report.count += 1;
                report.pairs.push((e.synthetic.clone(), truth.clone()));
            }
        }
        report
    }

    /// `at_ms,event,input_id,outcome,actions,input_time_ms`
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["at_ms", "event", "input_id", "outcome", "actions", "input_time_ms"])
            .expect("in-memory write");
        for r in &self.trace {
            let actions: Vec<String> = r.actions.iter().map(|a| a.to_string()).collect();
            w.write_record([
                r.at.to_string(),
                r.event.to_string(),
                r.input.clone(),
                r.outcome.to_string(),
                actions.join("+"),
                r.input_time.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }

    fn emit_camera(
        &mut self,
        synthetic: &RoadUserId,
        det: &Detection,
        now: SimTime,
        confirmation: bool,
    ) -> Vec<RelayAction> {
        let kin = Kinematics {
            position: det.estimate,
            speed_kmh: det.speed.max(0.0),
            heading_deg: normalize_heading(det.heading),
        };
        let accuracy = PositionAccuracy::new(self.config.sigma_m, 1.0);
        let actions: Vec<RelayAction> = CAMERA_KINDS
            .iter()
            .map(|&kind| {
                let payload = make_bsm(synthetic.clone(), kin, accuracy, kind.tech(), det.captured_at)
                    .expect("camera estimate within field ranges");
                RelayAction { kind, payload }
            })
            .collect();
        self.seen.insert((synthetic.clone(), det.captured_at), now);
        self.emissions.push(CameraEmission {
            synthetic: synthetic.clone(),
            truth: det.source.clone(),
            at: now,
            confirmation,
        });
        self.actions_emitted += actions.len();
        actions
    }

    fn expire_tracks(&mut self, now: SimTime) {
        let timeout = ms(self.config.track_timeout_ms);
        self.confirmed.retain(|t| now - t.last_update <= timeout);
    }

    fn resolve_pending_near(&mut self, at: &Position, by: &RoadUserId, now: SimTime) {
        let sigma = self.config.sigma_m;
        let mut resolved = Vec::new();
        self.pending.retain(|p| {
            let hit = at.horizontal_distance(&p.latest.estimate) < sigma;
            if hit {
                resolved.push((p.track, p.detection.captured_at));
            }
            !hit
        });
        for (track, captured) in resolved {
            self.record(now, "resolve", format!("{track}:{by}"), Outcome::Resolved, Vec::new(), captured);
        }
    }

    fn record(
        &mut self,
        at: SimTime,
        event: &'static str,
        input: String,
        outcome: Outcome,
        actions: Vec<ActionKind>,
        input_time: SimTime,
    ) {
        self.trace.push(DecisionRecord {
            at,
            event,
            input,
            outcome,
            actions,
            input_time,
        });
    }
}

fn nearest_index<'a>(
    candidates: impl Iterator<Item = &'a Position>,
    at: &Position,
    sigma_m: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in candidates.enumerate() {
        let d = at.horizontal_distance(p);
        if d < sigma_m && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}
