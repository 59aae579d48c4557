//! Deterministic slot-level simulator of a vehicular EDCA channel whose
//! contention parameters and transmission timing are tuned per vehicle by
//! cooperating tabular Q-learning controllers.

pub mod agents;
pub mod audit;
pub mod category;
pub mod config;
pub mod experiment;
pub mod mac;
pub mod metrics;
pub mod mobility;
pub mod orchestrator;
pub mod reward;

pub use agents::{AgentKind, AgentSpec, Discretizer, Observation, QTable, StateKey};
pub use audit::{audit_run, compare_runs, AuditReport, CompareRow};
pub use category::{CategoryProfile, EdcaParams, Profiles, ServiceCategory};
pub use config::{profile_of, validate_config, ConfigErrors, SimConfig};
pub use experiment::{run_experiment, train, train_summaries, EpisodeReport, ExperimentError, Manifest};
pub use mac::{Mac, PacketRecord, PhyTiming, SlotOutcome};
pub use metrics::CategorySummary;
pub use mobility::{ActiveCounts, Vehicle};
pub use orchestrator::{run_episode, AgentTables, ControllerMode, DecisionRecord, EpisodeOutput};
pub use reward::{utility, window_stats, RewardWeights, WindowStats};
