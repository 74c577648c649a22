//! In-process publish/subscribe broker for the four-topic model.
//!
//! The broker schedules deliveries but owns no delay of its own: the caller
//! supplies each recipient's downlink delay. Delivery is at-most-once and
//! loss-free unless a drop probability is configured.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::messages::{MqttEnvelope, RoadUserId, SimTime, Topic};

/// A broker client: the roadside unit or a road user.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClientId {
    Arsu,
    User(RoadUserId),
}

impl ClientId {
    pub fn user(id: impl Into<String>) -> Self {
        ClientId::User(RoadUserId::new(id))
    }
}

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClientId::Arsu => f.write_str("A-RSU"),
            ClientId::User(id) => write!(f, "{id}"),
        }
    }
}

impl Serialize for ClientId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Topics each kind of client may publish on. The roadside unit speaks for
/// radio and camera users; road users only ever publish their own state.
pub fn may_publish(client: &ClientId, topic: Topic) -> bool {
    match client {
        ClientId::Arsu => topic != Topic::Cell,
        ClientId::User(_) => topic == Topic::Cell,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BrokerError {
    #[error("unknown topic {0:?}")]
    UnknownTopic(String),
    #[error("{publisher} may not publish on topic {topic}")]
    NotPermitted { publisher: ClientId, topic: Topic },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Subscription {
    pub client: ClientId,
    pub topic: Topic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub envelope: MqttEnvelope,
    pub publisher: ClientId,
    pub recipient: ClientId,
    pub delivered_at: SimTime,
    #[serde(skip)]
    seq: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Broker {
    subscriptions: BTreeSet<Subscription>,
    log: Vec<Delivery>,
    published: BTreeMap<(ClientId, Topic), u64>,
    drop_probability: f64,
    dropped: u64,
    next_seq: u64,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops each scheduled delivery independently with probability `p`.
    pub fn with_drop_probability(mut self, p: f64) -> Self {
        self.drop_probability = p.clamp(0.0, 1.0);
        self
    }

    /// Returns false when the subscription already existed.
    pub fn subscribe(&mut self, client: ClientId, topic: Topic, _now: SimTime) -> bool {
        self.subscriptions.insert(Subscription { client, topic })
    }

    pub fn subscribe_named(
        &mut self,
        client: ClientId,
        topic: &str,
        now: SimTime,
    ) -> Result<bool, BrokerError> {
        let topic = Topic::parse(topic).map_err(|_| BrokerError::UnknownTopic(topic.to_string()))?;
        Ok(self.subscribe(client, topic, now))
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.iter()
    }

    pub fn subscriptions_of(&self, client: &ClientId) -> Vec<Topic> {
        self.subscriptions
            .iter()
            .filter(|s| &s.client == client)
            .map(|s| s.topic)
            .collect()
    }

    pub fn subscribers(&self, topic: Topic) -> impl Iterator<Item = &ClientId> {
        self.subscriptions
            .iter()
            .filter(move |s| s.topic == topic)
            .map(|s| &s.client)
    }

    /// Fans the envelope out to every current subscriber of its topic except
    /// the publisher. `downlink` gives the delay to each recipient.
    pub fn publish<R: Rng + ?Sized>(
        &mut self,
        publisher: &ClientId,
        envelope: MqttEnvelope,
        now: SimTime,
        downlink: impl Fn(&ClientId) -> SimTime,
        rng: &mut R,
    ) -> Result<Vec<Delivery>, BrokerError> {
        if !may_publish(publisher, envelope.topic) {
            return Err(BrokerError::NotPermitted {
                publisher: publisher.clone(),
                topic: envelope.topic,
            });
        }
        *self
            .published
            .entry((publisher.clone(), envelope.topic))
            .or_default() += 1;

        let recipients: Vec<ClientId> = self
            .subscribers(envelope.topic)
            .filter(|c| *c != publisher)
            .cloned()
            .collect();
        let mut out = Vec::with_capacity(recipients.len());
        for recipient in recipients {
            if self.drop_probability > 0.0 && rng.random::<f64>() < self.drop_probability {
                self.dropped += 1;
                continue;
            }
            let delivery = Delivery {
                delivered_at: now + downlink(&recipient),
                envelope: envelope.clone(),
                publisher: publisher.clone(),
                recipient,
                seq: self.next_seq,
            };
            self.next_seq += 1;
            self.log.push(delivery.clone());
            out.push(delivery);
        }
        Ok(out)
    }

    /// Deliveries with `delivered_at` in `[t0, t1)`, ordered by time and then
    /// by scheduling order.
    pub fn deliveries_between(&self, t0: SimTime, t1: SimTime) -> Vec<&Delivery> {
        let mut hits: Vec<&Delivery> = self
            .log
            .iter()
            .filter(|d| d.delivered_at >= t0 && d.delivered_at < t1)
            .collect();
        hits.sort_by_key(|d| (d.delivered_at, d.seq));
        hits
    }

    pub fn log(&self) -> &[Delivery] {
        &self.log
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn publish_count(&self, client: &ClientId, topic: Topic) -> u64 {
        self.published
            .get(&(client.clone(), topic))
            .copied()
            .unwrap_or(0)
    }

    pub fn published_topics(&self, client: &ClientId) -> Vec<Topic> {
        self.published
            .keys()
            .filter(|(c, _)| c == client)
            .map(|(_, t)| *t)
            .collect()
    }

    /// `topic,publisher,recipient,published_at_ms,delivered_at_ms`
    pub fn log_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["topic", "publisher", "recipient", "published_at_ms", "delivered_at_ms"])
            .expect("in-memory write");
        let mut rows: Vec<&Delivery> = self.log.iter().collect();
        rows.sort_by_key(|d| (d.delivered_at, d.seq));
        for d in rows {
            w.write_record([
                d.envelope.topic.name().to_string(),
                d.publisher.to_string(),
                d.recipient.to_string(),
                d.envelope.published_at.to_string(),
                d.delivered_at.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}
