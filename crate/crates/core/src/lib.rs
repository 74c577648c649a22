//! Heterogeneous V2X relaying through an augmenting roadside unit: message
//! model, link latency model, MQTT fabric, relay and filtering logic, and a
//! deterministic discrete-event simulator.

pub mod config;
pub mod latency;
pub mod messages;
pub mod mqtt;
pub mod paths;
pub mod relay;
pub mod report;
pub mod sim;

pub use config::{load_scenario, parse_scenario, ConfigError, ScenarioConfig, SpeedMode};
pub use latency::{
    classify, derive_half_delays, DelayCategory, DelayMatrix, IpuOverhead, LatencyError, LatencyModel, LinkTech,
    SafetyApp,
};
pub use messages::{make_bsm, validate_bsm, Bsm, Detection, MqttEnvelope, Position, RoadUserId, SimTime, Topic};
pub use mqtt::{Broker, ClientId};
pub use paths::PathKind;
pub use relay::{ActionKind, Arsu, FilterConfig, RelayAction, RxVia};
pub use report::{emit_scenario_matrix, emit_table4, Report};
pub use sim::{run, run_with_model, RoadUser, RoadUserKind, SimError, SimOutcome};
