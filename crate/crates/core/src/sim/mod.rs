//! Deterministic discrete-event simulation of road users, media and the
//! roadside unit.

mod ipu;
mod metrics;
mod mobility;

pub use ipu::{jitter, sample_ipu};
pub use metrics::{
    round3, Coverage, CoverageStatus, DeliveryRecord, Metrics, MetricsCollector, PairStats, PathStats,
};
pub use mobility::{step_mobility, RoadUser, RoadUserKind};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig, SpeedMode, AUTO_SPACING_M};
use crate::latency::{LatencyError, LatencyModel, LinkTech};
use crate::messages::{
    make_bsm, Bsm, Detection, Kinematics, MessageError, MqttEnvelope, Position, PositionAccuracy, RoadUserId,
    SimTime, Topic,
};
use crate::mqtt::{Broker, BrokerError, ClientId};
use crate::paths::PathKind;
use crate::relay::{ActionKind, Arsu, DetectionOutcome, RelayAction, RxVia};
use crate::report::{ClientContract, MqttSummary, RelaySummary, Report, UserSummary};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error("message construction: {0}")]
    Message(#[from] MessageError),
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Time at which a message leaving its sender at `now` reaches the receiver.
/// Camera messages pay the processing overhead at sampling time, so only the
/// downlink half is charged here.
pub fn deliver(
    model: &LatencyModel,
    uplink: LinkTech,
    downlink: LinkTech,
    speed_kmh: f64,
    now: SimTime,
) -> Result<SimTime, LatencyError> {
    let down = model.half_delay(downlink, speed_kmh)?.ms;
    let delay = match uplink {
        LinkTech::Camera => down,
        _ => model.composed_delay(uplink, downlink, speed_kmh)?,
    };
    Ok(now + SimTime::from_millis_f64(delay))
}

/// One row of the optional event trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub at: SimTime,
    pub kind: &'static str,
    pub actor: String,
    pub subject: String,
    pub detail: String,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: Report,
    pub deliveries: Vec<DeliveryRecord>,
    pub trace: Vec<TraceRow>,
    pub decisions_csv: String,
    pub mqtt_csv: String,
}

impl SimOutcome {
    /// `at_ms,kind,actor,subject,detail`
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["at_ms", "kind", "actor", "subject", "detail"])
            .expect("in-memory write");
        for r in &self.trace {
            w.write_record([r.at.to_string().as_str(), r.kind, &r.actor, &r.subject, &r.detail])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// Runs with the built-in delay table and the configured IPU overhead.
pub fn run(config: &ScenarioConfig, seed: u64) -> Result<Report, SimError> {
    let model = config.latency_model(None)?;
    Ok(run_with_model(config, &model, seed, false)?.report)
}

/// Runs with an explicit model. `trace` turns on the event trace.
pub fn run_with_model(
    config: &ScenarioConfig,
    model: &LatencyModel,
    seed: u64,
    trace: bool,
) -> Result<SimOutcome, SimError> {
    config.validate()?;
    Simulation::new(config, model, seed, trace).run()
}

/// Builds the population described by the config's user groups.
pub fn build_users(config: &ScenarioConfig) -> Vec<RoadUser> {
    let total: usize = config.users.iter().map(|g| g.count as usize).sum();
    let origin = config.arsu.position();
    let mut users = Vec::with_capacity(total);
    for g in &config.users {
        for k in 0..g.count {
            let idx = users.len();
            let id = match &g.id {
                Some(id) => RoadUserId::new(id.clone()),
                None => RoadUserId::new(format!("u{}", idx + 1)),
            };
            let speed = g.speed_kmh.unwrap_or(config.scenario_speed_kmh);
            // start behind the unit so the run passes through coverage
            let travel = speed / 3.6 * config.duration_ms / 1000.0;
            let back = (travel / 2.0).min(0.8 * config.arsu.coverage_radius_m);
            let h = g.heading_deg.to_radians();
            let lateral = (idx as f64 - (total as f64 - 1.0) / 2.0) * AUTO_SPACING_M;
            let north = g.north_m.unwrap_or(-back * h.cos());
            let east = match g.east_m {
                Some(e) => e + k as f64 * AUTO_SPACING_M,
                None => -back * h.sin() + lateral,
            };
            users.push(RoadUser {
                id,
                kind: g.kind,
                position: origin.offset(north, east),
                speed_kmh: speed,
                heading_deg: g.heading_deg,
                gnss_error_std_m: g.gnss_noise_std_m.unwrap_or(config.gnss_noise_std_m),
                bsm_interval_ms: g.bsm_interval_ms.unwrap_or(config.bsm_interval_ms),
            });
        }
    }
    users
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    Arsu,
    User(usize),
}

/// Provenance carried alongside a message copy.
#[derive(Debug, Clone, Copy)]
struct Route {
    uplink: LinkTech,
    origin_at: SimTime,
    subject: usize,
    hold: SimTime,
}

#[derive(Debug, Clone)]
enum EventKind {
    BsmTx { user: usize },
    RadioDelivery { to: Target, bsm: Bsm, medium: LinkTech, route: Route, direct: bool },
    BrokerArrival { publisher: usize, envelope: MqttEnvelope, route: Route },
    MqttDelivery { to: ClientId, envelope: MqttEnvelope, route: Route },
    IpuFrame,
    DetectionReady { det: Detection },
    GraceDeadline,
    MetricsTick,
}

#[derive(Debug)]
struct Event {
    at: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the greatest
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

struct Simulation<'a> {
    config: &'a ScenarioConfig,
    model: &'a LatencyModel,
    seed: u64,
    users: Vec<RoadUser>,
    updated_at: Vec<SimTime>,
    index: HashMap<RoadUserId, usize>,
    arsu_pos: Position,
    arsu: Arsu,
    broker: Broker,
    metrics: MetricsCollector,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: SimTime,
    end: SimTime,
    trace_on: bool,
    trace: Vec<TraceRow>,
}

fn half(model: &LatencyModel, tech: LinkTech, speed: f64) -> Result<SimTime, LatencyError> {
    Ok(SimTime::from_millis_f64(model.half_delay(tech, speed)?.ms))
}

fn fmt_pos(p: &Position) -> String {
    format!("{:.7} {:.7}", p.latitude, p.longitude)
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ScenarioConfig, model: &'a LatencyModel, seed: u64, trace_on: bool) -> Self {
        let users = build_users(config);
        let index = users.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
        let metrics = MetricsCollector::new(
            users.iter().map(|u| (u.id.clone(), u.kind.is_connected())).collect(),
            config.freshness_ms,
        );
        Simulation {
            config,
            model,
            seed,
            updated_at: vec![SimTime::ZERO; users.len()],
            users,
            index,
            arsu_pos: config.arsu.position(),
            arsu: Arsu::new(config.filter),
            broker: Broker::new().with_drop_probability(config.mqtt_drop_probability),
            metrics,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            seq: 0,
            now: SimTime::ZERO,
            end: SimTime::from_millis_f64(config.duration_ms),
            trace_on,
            trace: Vec::new(),
        }
    }

    fn schedule(&mut self, at: SimTime, kind: EventKind) {
        self.queue.push(Event { at, seq: self.seq, kind });
        self.seq += 1;
    }

    fn log(&mut self, kind: &'static str, actor: impl ToString, subject: impl ToString, detail: impl FnOnce() -> String) {
        if self.trace_on {
            self.trace.push(TraceRow {
                at: self.now,
                kind,
                actor: actor.to_string(),
                subject: subject.to_string(),
                detail: detail(),
            });
        }
    }

    fn position_of(&mut self, i: usize) -> Position {
        if self.now > self.updated_at[i] {
            let dt = (self.now - self.updated_at[i]).as_millis_f64();
            self.users[i].position = step_mobility(&self.users[i], dt);
            self.updated_at[i] = self.now;
        }
        self.users[i].position
    }

    fn in_coverage(&mut self, i: usize) -> bool {
        let p = self.position_of(i);
        self.config.arsu.enabled && self.arsu_pos.horizontal_distance(&p) <= self.config.arsu.coverage_radius_m
    }

    /// Link speed for a hop between user `i` and infrastructure.
    fn hop_speed(&self, i: usize) -> f64 {
        match self.config.speed_mode {
            SpeedMode::Scenario => self.config.scenario_speed_kmh,
            SpeedMode::MaxEndpoint => self.users[i].speed_kmh,
        }
    }

    fn direct_speed(&self, i: usize, j: usize) -> f64 {
        match self.config.speed_mode {
            SpeedMode::Scenario => self.config.scenario_speed_kmh,
            SpeedMode::MaxEndpoint => self.users[i].speed_kmh.max(self.users[j].speed_kmh),
        }
    }

    fn run(mut self) -> Result<SimOutcome, SimError> {
        for u in &self.users {
            if u.kind == RoadUserKind::NonnativeCell {
                for t in Topic::ALL {
                    self.broker.subscribe(ClientId::User(u.id.clone()), t, SimTime::ZERO);
                }
            }
        }
        if self.config.arsu.enabled {
            self.broker.subscribe(ClientId::Arsu, Topic::Cell, SimTime::ZERO);
        }
        let offsets: Vec<f64> = self
            .config
            .users
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.bsm_offset_ms, g.count as usize))
            .collect();
        for (i, offset) in offsets.into_iter().enumerate() {
            if !self.users[i].kind.is_connected() {
                continue;
            }
            let at = SimTime::from_millis_f64(offset);
            if at < self.end {
                self.schedule(at, EventKind::BsmTx { user: i });
            }
        }
        if self.config.arsu.enabled {
            self.schedule(SimTime::ZERO, EventKind::IpuFrame);
        }
        let tick = SimTime::from_millis_f64(self.config.metrics_period_ms);
        if tick <= self.end {
            self.schedule(tick, EventKind::MetricsTick);
        }

        while let Some(ev) = self.queue.pop() {
            self.now = ev.at;
            self.handle(ev.kind)?;
        }
        self.finish()
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::BsmTx { user } => self.on_bsm_tx(user),
            EventKind::RadioDelivery { to, bsm, medium, route, direct } => match to {
                Target::Arsu => {
                    let via = match medium {
                        LinkTech::Dsrc => RxVia::Dsrc,
                        LinkTech::Cv2x => RxVia::Cv2x,
                        other => return Err(SimError::Invariant(format!("radio delivery on {other}"))),
                    };
                    let id = bsm.id.clone();
                    let actions = self.arsu.on_rx(bsm, via, self.now);
                    self.log("arsu_rx", "A-RSU", &id, || format!("via {medium}, {} actions", actions.len()));
                    self.dispatch(actions, route)
                }
                Target::User(j) => self.record(j, &bsm, route, medium, direct),
            },
            EventKind::BrokerArrival { publisher, envelope, route } => {
                let client = ClientId::User(self.users[publisher].id.clone());
                self.publish(&client, envelope, route)
            }
            EventKind::MqttDelivery { to, envelope, route } => match to {
                ClientId::Arsu => {
                    let id = envelope.payload.id.clone();
                    let actions = self.arsu.on_rx(envelope.payload, RxVia::MqttCell, self.now);
                    self.log("arsu_rx", "A-RSU", &id, || format!("via {}, {} actions", envelope.topic, actions.len()));
                    self.dispatch(actions, route)
                }
                ClientId::User(id) => {
                    let j = *self
                        .index
                        .get(&id)
                        .ok_or_else(|| SimError::Invariant(format!("unknown broker client {id}")))?;
                    self.record(j, &envelope.payload, route, LinkTech::CellMqtt, false)
                }
            },
            EventKind::IpuFrame => self.on_ipu_frame(),
            EventKind::DetectionReady { det } => self.on_detection(det),
            EventKind::GraceDeadline => self.on_grace(),
            EventKind::MetricsTick => {
                self.metrics.tick(self.now);
                let next = self.now + SimTime::from_millis_f64(self.config.metrics_period_ms);
                if next <= self.end {
                    self.schedule(next, EventKind::MetricsTick);
                }
                Ok(())
            }
        }
    }

    fn on_bsm_tx(&mut self, i: usize) -> Result<(), SimError> {
        let tech = self.users[i]
            .kind
            .tech()
            .ok_or_else(|| SimError::Invariant("non-connected user transmitted".into()))?;
        let truth = self.position_of(i);
        let std = self.users[i].gnss_error_std_m;
        let reported = jitter(&truth, std, &mut self.rng);
        let u = &self.users[i];
        let kin = Kinematics {
            position: reported,
            speed_kmh: u.speed_kmh,
            heading_deg: u.heading_deg,
        };
        let bsm = make_bsm(u.id.clone(), kin, PositionAccuracy::new(std, 1.0), tech, self.now)?;
        self.metrics.bsm_transmitted += 1;
        let id = u.id.clone();
        self.log("bsm_tx", &id, &id, || format!("{tech} at {}", fmt_pos(&reported)));

        let route = Route {
            uplink: tech,
            origin_at: self.now,
            subject: i,
            hold: SimTime::ZERO,
        };
        match tech {
            LinkTech::Dsrc | LinkTech::Cv2x => {
                for j in 0..self.users.len() {
                    if j == i || self.users[j].kind.tech() != Some(tech) {
                        continue;
                    }
                    let h = half(self.model, tech, self.direct_speed(i, j))?;
                    let at = self.now + h + h;
                    self.schedule(
                        at,
                        EventKind::RadioDelivery {
                            to: Target::User(j),
                            bsm: bsm.clone(),
                            medium: tech,
                            route,
                            direct: true,
                        },
                    );
                }
                if self.in_coverage(i) {
                    let at = self.now + half(self.model, tech, self.hop_speed(i))?;
                    self.schedule(
                        at,
                        EventKind::RadioDelivery {
                            to: Target::Arsu,
                            bsm,
                            medium: tech,
                            route,
                            direct: false,
                        },
                    );
                }
            }
            LinkTech::CellMqtt => {
                let at = self.now + half(self.model, tech, self.hop_speed(i))?;
                let envelope = MqttEnvelope {
                    topic: Topic::Cell,
                    payload: bsm,
                    published_at: self.now,
                };
                self.schedule(at, EventKind::BrokerArrival { publisher: i, envelope, route });
            }
            LinkTech::Camera => unreachable!("no road user transmits on the camera"),
        }

        let next = self.now + SimTime::from_millis_f64(self.users[i].bsm_interval_ms);
        if next < self.end {
            self.schedule(next, EventKind::BsmTx { user: i });
        }
        Ok(())
    }

    fn publish(&mut self, client: &ClientId, envelope: MqttEnvelope, route: Route) -> Result<(), SimError> {
        let from = client.to_string();
        let topic = envelope.topic;
        let subject = envelope.payload.id.clone();
        let deliveries = {
            let (model, users, index, config) = (self.model, &self.users, &self.index, self.config);
            let speed_of = |c: &ClientId| match (config.speed_mode, c) {
                (SpeedMode::Scenario, _) => config.scenario_speed_kmh,
                (SpeedMode::MaxEndpoint, ClientId::Arsu) => 0.0,
                (SpeedMode::MaxEndpoint, ClientId::User(id)) => index.get(id).map_or(0.0, |&j| users[j].speed_kmh),
            };
            let mut delays = HashMap::new();
            for c in self.broker.subscribers(topic) {
                let d = match c {
                    // broker to roadside unit is part of the cloud leg already charged
                    ClientId::Arsu => SimTime::ZERO,
                    ClientId::User(_) => half(model, LinkTech::CellMqtt, speed_of(c))?,
                };
                delays.insert(c.clone(), d);
            }
            self.broker
                .publish(client, envelope, self.now, |c| delays[c], &mut self.rng)?
        };
        let n = deliveries.len();
        self.log("publish", from, subject, || format!("{topic} to {n} subscribers"));
        for d in deliveries {
            self.schedule(
                d.delivered_at,
                EventKind::MqttDelivery {
                    to: d.recipient,
                    envelope: d.envelope,
                    route,
                },
            );
        }
        Ok(())
    }

    fn dispatch(&mut self, actions: Vec<RelayAction>, route: Route) -> Result<(), SimError> {
        for RelayAction { kind, payload } in actions {
            match kind {
                ActionKind::TxDsrc | ActionKind::TxCv2x => {
                    let tech = kind.tech();
                    for j in 0..self.users.len() {
                        if self.users[j].kind.tech() != Some(tech) || !self.in_coverage(j) {
                            continue;
                        }
                        let at = self.now + half(self.model, tech, self.hop_speed(j))?;
                        self.schedule(
                            at,
                            EventKind::RadioDelivery {
                                to: Target::User(j),
                                bsm: payload.clone(),
                                medium: tech,
                                route,
                                direct: false,
                            },
                        );
                    }
                }
                ActionKind::PublishMqtt(topic) => {
                    let envelope = MqttEnvelope {
                        topic,
                        payload,
                        published_at: self.now,
                    };
                    self.publish(&ClientId::Arsu, envelope, route)?;
                }
            }
        }
        Ok(())
    }

    fn expected_ms(&self, route: &Route, receiver: usize, downlink: LinkTech, direct: bool) -> Result<f64, LatencyError> {
        if direct {
            let v = self.direct_speed(route.subject, receiver);
            return Ok(2.0 * self.model.half_delay(downlink, v)?.ms);
        }
        match self.config.speed_mode {
            SpeedMode::Scenario => self
                .model
                .composed_delay(route.uplink, downlink, self.config.scenario_speed_kmh),
            SpeedMode::MaxEndpoint => {
                let up = match route.uplink {
                    LinkTech::Camera => self.model.ipu().processing_ms,
                    t => self.model.half_delay(t, self.users[route.subject].speed_kmh)?.ms,
                };
                Ok(up + self.model.half_delay(downlink, self.users[receiver].speed_kmh)?.ms)
            }
        }
    }

    fn record(&mut self, j: usize, bsm: &Bsm, route: Route, downlink: LinkTech, direct: bool) -> Result<(), SimError> {
        let path = if direct {
            PathKind::Direct(downlink)
        } else {
            PathKind::hetero(route.uplink, downlink)
                .ok_or_else(|| SimError::Invariant(format!("no scenario for {}->{downlink}", route.uplink)))?
        };
        let awareness = self.now - route.origin_at;
        let path_latency = awareness - route.hold;
        let expected = self.expected_ms(&route, j, downlink, direct)?;
        let ghost = bsm.id.is_synthetic() && self.users[route.subject].kind.is_connected();
        let rec = DeliveryRecord {
            delivered_at: self.now,
            receiver: self.users[j].id.clone(),
            message_id: bsm.id.clone(),
            subject: self.users[route.subject].id.clone(),
            path,
            origin_at: route.origin_at,
            awareness_ms: awareness.as_millis_f64(),
            hold_ms: route.hold.as_millis_f64(),
            path_ms: path_latency.as_millis_f64(),
            expected_ms: expected,
            duplicate: false,
            ghost,
        };
        let receiver = rec.receiver.clone();
        self.log("rx", receiver, &bsm.id, || format!("{path} {path_latency} ms"));
        self.metrics.record(j, route.subject, rec);
        Ok(())
    }

    fn on_ipu_frame(&mut self) -> Result<(), SimError> {
        let mut seen = Vec::new();
        for i in 0..self.users.len() {
            if self.in_coverage(i) {
                seen.push(i);
            }
        }
        let overhead = self.model.ipu();
        let dets = sample_ipu(
            seen.iter().map(|&i| &self.users[i]),
            self.now,
            self.config.ipu.noise_std_m,
            overhead,
            &mut self.rng,
        );
        for det in dets {
            let subject = det.source.clone().map(|s| s.to_string()).unwrap_or_default();
            let est = det.estimate;
            self.log("ipu_frame", "IPU", subject, || fmt_pos(&est));
            // processing that would finish after the run is dropped with the run
            if det.available_at <= self.end {
                self.schedule(det.available_at, EventKind::DetectionReady { det });
            }
        }
        let next = self.now + SimTime::from_millis_f64(self.config.ipu.frame_period_ms);
        if next < self.end {
            self.schedule(next, EventKind::IpuFrame);
        }
        Ok(())
    }

    fn subject_of(&self, det: &Detection) -> Result<usize, SimError> {
        det.source
            .as_ref()
            .and_then(|s| self.index.get(s).copied())
            .ok_or_else(|| SimError::Invariant("detection without ground truth".into()))
    }

    fn on_detection(&mut self, det: Detection) -> Result<(), SimError> {
        let subject = self.subject_of(&det)?;
        let captured_at = det.captured_at;
        let outcome = self.arsu.on_detection(det, self.now);
        let truth = self.users[subject].id.clone();
        match outcome {
            DetectionOutcome::Connected { matched } => {
                self.log("detection", "A-RSU", truth, || format!("connected as {matched}"));
            }
            DetectionOutcome::Pending { track, deadline, new_track } => {
                self.log("detection", "A-RSU", truth, || format!("pending {track} until {deadline}"));
                if new_track && deadline <= self.end {
                    self.schedule(deadline, EventKind::GraceDeadline);
                }
            }
            DetectionOutcome::NonConnected { synthetic, actions } => {
                self.log("detection", "A-RSU", truth, || format!("refresh {synthetic}"));
                let route = Route {
                    uplink: LinkTech::Camera,
                    origin_at: captured_at,
                    subject,
                    hold: SimTime::ZERO,
                };
                self.dispatch(actions, route)?;
            }
        }
        Ok(())
    }

    fn on_grace(&mut self) -> Result<(), SimError> {
        for c in self.arsu.expire_pending(self.now) {
            let subject = self.subject_of(&c.detection)?;
            let hold = self.now.saturating_sub(c.detection.available_at);
            let truth = self.users[subject].id.clone();
            let synthetic = c.synthetic.clone();
            self.log("confirm", "A-RSU", truth, || format!("{synthetic} hold {hold} ms"));
            let route = Route {
                uplink: LinkTech::Camera,
                origin_at: c.detection.captured_at,
                subject,
                hold,
            };
            self.dispatch(c.actions, route)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<SimOutcome, SimError> {
        let at = self.end.max(self.now);
        let metrics = self.metrics.snapshot(at);
        let connected: HashMap<&RoadUserId, bool> =
            self.users.iter().map(|u| (&u.id, u.kind.is_connected())).collect();
        let ghosts = self
            .arsu
            .ghost_events(|id| connected.get(id).copied().unwrap_or(false));

        let mut clients = Vec::new();
        if self.config.arsu.enabled {
            clients.push(ClientId::Arsu);
        }
        clients.extend(
            self.users
                .iter()
                .filter(|u| u.kind == RoadUserKind::NonnativeCell)
                .map(|u| ClientId::User(u.id.clone())),
        );
        let contracts = clients
            .iter()
            .map(|c| ClientContract {
                client: c.to_string(),
                subscriptions: self.broker.subscriptions_of(c),
                published: self.broker.published_topics(c),
                publish_counts: self
                    .broker
                    .published_topics(c)
                    .into_iter()
                    .map(|t| (t, self.broker.publish_count(c, t)))
                    .collect(),
            })
            .collect();
        let mqtt = MqttSummary {
            clients: contracts,
            deliveries: self.broker.log().len(),
            dropped: self.broker.dropped(),
        };
        let relay = RelaySummary {
            decisions: self.arsu.trace().len(),
            actions_emitted: self.arsu.actions_emitted(),
            confirmed_tracks: self.arsu.confirmed().len(),
            pending_tracks: self.arsu.pending().len(),
        };
        let users = self
            .users
            .iter()
            .map(|u| UserSummary {
                id: u.id.clone(),
                kind: u.kind,
                speed_kmh: u.speed_kmh,
            })
            .collect();
        let report = Report::assemble(self.config, self.seed, self.model, users, metrics, ghosts, mqtt, relay)?;
        Ok(SimOutcome {
            report,
            deliveries: self.metrics.records().to_vec(),
            trace: self.trace,
            decisions_csv: self.arsu.trace_csv(),
            mqtt_csv: self.broker.log_csv(),
        })
    }
}
