//! Global simulation configuration and its validation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::category::{CategoryProfile, Profiles, ServiceCategory};
use crate::orchestrator::ControllerMode;

/// Every knob of a run. Serialized as a flat JSON object whose keys mirror the
/// field names; missing keys fall back to the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub episode_duration: f64,
    pub episodes: u32,
    pub arrival_interval: f64,
    pub coverage_radius: f64,
    pub road_length: f64,
    pub max_speed: f64,
    pub accel: f64,
    pub decel: f64,
    /// Optional position along the corridor where vehicles brake to a halt.
    pub stop_point: Option<f64>,
    pub stop_dwell: f64,
    pub mobility_tick: f64,
    pub min_sojourn_speed: f64,

    pub slot_time: f64,
    pub sifs: f64,
    pub phy_rate: f64,
    pub tx_overhead: f64,
    pub retry_limit: u32,

    pub alpha1: f64,
    pub alpha2: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub throughput_ratio_cap: f64,

    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: f64,
    pub count_bin_width: u32,
    pub count_bin_cap: u32,
    pub sojourn_bins: u32,
    pub sojourn_horizon: f64,
    pub persist_tables: bool,

    pub rng_seed: u64,
    pub mode: ControllerMode,
    pub series_bucket: f64,
    pub write_packet_log: bool,
    pub profiles: Profiles,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            episode_duration: 250.0,
            episodes: 50,
            arrival_interval: 0.66,
            coverage_radius: 200.0,
            road_length: 600.0,
            max_speed: 17.0,
            accel: 2.6,
            decel: 4.5,
            stop_point: None,
            stop_dwell: 0.0,
            mobility_tick: 0.1,
            min_sojourn_speed: 0.1,

            slot_time: 13e-6,
            sifs: 32e-6,
            phy_rate: 6e6,
            tx_overhead: 68e-6,
            retry_limit: 7,

            alpha1: 0.3,
            alpha2: 0.7,
            bonus: 1.0,
            penalty: 1.0,
            throughput_ratio_cap: 1.5,

            learning_rate: 0.1,
            discount: 0.99,
            epsilon: 0.2,
            count_bin_width: 5,
            count_bin_cap: 10,
            sojourn_bins: 8,
            sojourn_horizon: 20.0,
            persist_tables: true,

            rng_seed: 1,
            mode: ControllerMode::ThreeAgent,
            series_bucket: 1.0,
            write_packet_log: true,
            profiles: Profiles::default(),
        }
    }
}

impl SimConfig {
    /// Position of the roadside unit: the corridor midpoint.
    pub fn rsu_position(&self) -> f64 {
        self.road_length / 2.0
    }

    pub fn profile(&self, category: ServiceCategory) -> &CategoryProfile {
        self.profiles.get(category)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Returns the profile of `category` under `config`.
pub fn profile_of(category: ServiceCategory, config: &SimConfig) -> &CategoryProfile {
    config.profiles.get(category)
}

/// One violated invariant: the offending field path and what is wrong with it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// All violations found in a configuration, reported together.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct ConfigErrors(pub Vec<Violation>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl ConfigErrors {
    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|v| v.field == field)
    }
}

struct Checker(Vec<Violation>);

impl Checker {
    fn require(&mut self, ok: bool, field: impl Into<String>, message: impl Into<String>) {
        if !ok {
            self.0.push(Violation {
                field: field.into(),
                message: message.into(),
            });
        }
    }

    fn positive(&mut self, value: f64, field: &str) {
        self.require(
            value.is_finite() && value > 0.0,
            field,
            format!("must be a finite value > 0, got {value}"),
        );
    }

    fn unit_interval(&mut self, value: f64, field: &str, lower_open: bool) {
        let ok = if lower_open {
            value > 0.0 && value <= 1.0
        } else {
            (0.0..=1.0).contains(&value)
        };
        let range = if lower_open { "(0, 1]" } else { "[0, 1]" };
        self.require(ok, field, format!("must lie in {range}, got {value}"));
    }
}

/// Checks every invariant of `config`, returning it unchanged when valid.
pub fn validate_config(config: SimConfig) -> Result<SimConfig, ConfigErrors> {
    let mut c = Checker(Vec::new());

    c.positive(config.episode_duration, "episode_duration");
    c.require(config.episodes >= 1, "episodes", "at least one episode is required");
    c.positive(config.arrival_interval, "arrival_interval");
    c.positive(config.coverage_radius, "coverage_radius");
    c.positive(config.road_length, "road_length");
    c.require(
        config.coverage_radius <= config.road_length / 2.0,
        "coverage_radius",
        "coverage disc must fit inside the corridor",
    );
    c.positive(config.max_speed, "max_speed");
    c.positive(config.accel, "accel");
    c.positive(config.decel, "decel");
    if let Some(stop) = config.stop_point {
        c.require(
            stop > 0.0 && stop < config.road_length,
            "stop_point",
            "must lie strictly inside the corridor",
        );
    }
    c.require(config.stop_dwell >= 0.0, "stop_dwell", "must be >= 0");
    c.positive(config.mobility_tick, "mobility_tick");
    c.positive(config.min_sojourn_speed, "min_sojourn_speed");

    c.positive(config.slot_time, "slot_time");
    c.require(config.sifs >= 0.0, "sifs", "must be >= 0");
    c.positive(config.phy_rate, "phy_rate");
    c.require(config.tx_overhead >= 0.0, "tx_overhead", "must be >= 0");
    c.require(config.retry_limit >= 1, "retry_limit", "must be >= 1");

    c.unit_interval(config.alpha1, "alpha1", true);
    c.unit_interval(config.alpha2, "alpha2", true);
    c.require(config.bonus >= 0.0, "bonus", "must be >= 0");
    c.require(config.penalty >= 0.0, "penalty", "must be >= 0");
    c.positive(config.throughput_ratio_cap, "throughput_ratio_cap");

    c.unit_interval(config.learning_rate, "learning_rate", false);
    c.unit_interval(config.discount, "discount", false);
    c.unit_interval(config.epsilon, "epsilon", false);
    c.require(config.count_bin_width >= 1, "count_bin_width", "must be >= 1");
    c.require(config.sojourn_bins >= 1, "sojourn_bins", "must be >= 1");
    c.positive(config.sojourn_horizon, "sojourn_horizon");
    c.positive(config.series_bucket, "series_bucket");

    for category in ServiceCategory::ALL {
        let p = config.profiles.get(category);
        let key = |name: &str| format!("profiles.{}.{name}", profile_key(category));
        c.positive(p.app_rate, &key("app_rate"));
        c.positive(p.rate_threshold, &key("rate_threshold"));
        c.positive(p.latency_threshold, &key("latency_threshold"));
        c.positive(p.rate_max, &key("rate_max"));
        c.positive(p.latency_max, &key("latency_max"));
        c.positive(p.wt_max, &key("wt_max"));
        c.require(
            p.cw_seed_min >= 1,
            key("cw_seed_min"),
            "contention window seeds must be positive",
        );
        c.require(
            p.cw_seed_min <= p.cw_seed_max,
            key("cw_seed_min"),
            format!(
                "cw_seed_min {} exceeds cw_seed_max {}",
                p.cw_seed_min, p.cw_seed_max
            ),
        );
        c.require(
            p.cw_seed_max <= 1023,
            key("cw_seed_max"),
            "contention window seeds are capped at 1023",
        );
        c.require(
            p.ifsn_min > 0,
            key("ifsn_min"),
            "IFSn is a positive slot count, ifsn_min must be > 0",
        );
        c.require(
            p.ifsn_min <= p.ifsn_max,
            key("ifsn_max"),
            format!("ifsn_min {} exceeds ifsn_max {}", p.ifsn_min, p.ifsn_max),
        );
        c.require(p.packet_size > 0, key("packet_size"), "must be > 0 bytes");
    }

    if c.0.is_empty() {
        Ok(config)
    } else {
        Err(ConfigErrors(c.0))
    }
}

fn profile_key(category: ServiceCategory) -> &'static str {
    match category {
        ServiceCategory::Voice => "voice",
        ServiceCategory::Video => "video",
        ServiceCategory::HdMap => "hd_map",
        ServiceCategory::BestEffort => "best_effort",
    }
}
