//! Fuzzy-genetic packet filter: a sensor that flags suspicious flows with
//! fuzzy rules, a learning database of flow tuples, a genetic search that
//! confirms suspects against it, and an iptables rule generator.

pub mod fuzzy;
pub mod ga;
pub mod ingest;
pub mod ldb;
pub mod packet;
pub mod pipeline;
pub mod rules;
pub mod sensor;
pub mod sim;

pub use fuzzy::{classify, Decision, FilterAction, LinguisticRule, MembershipFunction, TruthValue};
pub use ga::{run_search, GaConfig, MatchResult};
pub use ingest::{ingest_stream, parse_custom_line, parse_netfilter_line, LogFormat, ParseReport};
pub use ldb::{FlowTuple, LdbEntry, LearningDb, RuleLedgerEntry};
pub use packet::{HeaderRecord, Protocol, TcpFlags};
pub use pipeline::{detection_rate, performance_mean, run_pipeline, DetectionReport, PipelineConfig};
pub use rules::{enforce, render_rule, FirewallRule, RuleSink};
pub use sensor::{FlowKey, Sensor, SensorConfig, Suspicion};
pub use sim::{Scenario, ScenarioKind};
