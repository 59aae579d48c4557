//! Fixtures shared by the benchmarks in `benches/`.

use rand::Rng;

use edca_core::{EdcaParams, Mac, PhyTiming, ServiceCategory, SimConfig};

/// A MAC with `stations` open queues, each preloaded with `backlog` frames of
/// `size` bytes, cycling through the standard parameter sets.
pub fn saturated_mac<R: Rng + ?Sized>(stations: u32, backlog: usize, size: u32, rng: &mut R) -> Mac {
    let config = SimConfig::default();
    let mut mac = Mac::new(PhyTiming::from_config(&config), config.retry_limit);
    for i in 0..stations {
        let category = ServiceCategory::ALL[i as usize % ServiceCategory::ALL.len()];
        let id = mac
            .add_queue(i, category, EdcaParams::standard(category), rng)
            .expect("standard parameters are valid");
        mac.set_gate(id, true).expect("queue was just added");
        for _ in 0..backlog {
            mac.enqueue(id, size, 0.0).expect("queue was just added");
        }
    }
    mac
}

/// Default configuration trimmed to a single short episode.
pub fn short_episode(mode: edca_core::ControllerMode, duration: f64) -> SimConfig {
    SimConfig {
        mode,
        episodes: 1,
        episode_duration: duration,
        write_packet_log: false,
        ..SimConfig::default()
    }
}
