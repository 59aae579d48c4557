//! Windowed performance statistics and the shared utility reward.

use serde::{Deserialize, Serialize};

use crate::category::{CategoryProfile, ServiceCategory};
use crate::mac::PacketRecord;

/// Delivery statistics of one category over a half-open window `(start, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub category: ServiceCategory,
    /// Delivered bits per second.
    pub throughput: f64,
    /// Mean delivery latency in seconds; the category's `latency_max` when nothing arrived.
    pub mean_latency: f64,
    pub window: (f64, f64),
    pub delivered: usize,
}

/// Reward shaping weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub bonus: f64,
    pub penalty: f64,
    pub ratio_cap: f64,
}

impl RewardWeights {
    pub fn from_config(config: &crate::config::SimConfig) -> Self {
        RewardWeights {
            alpha1: config.alpha1,
            alpha2: config.alpha2,
            bonus: config.bonus,
            penalty: config.penalty,
            ratio_cap: config.throughput_ratio_cap,
        }
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha1: 0.3,
            alpha2: 0.7,
            bonus: 1.0,
            penalty: 1.0,
            ratio_cap: 1.5,
        }
    }
}

/// Statistics over the packets of `category` delivered inside `(start, end]`.
///
/// # Panics
/// If `end <= start`.
pub fn window_stats<'a, I>(
    records: I,
    category: ServiceCategory,
    window: (f64, f64),
    profile: &CategoryProfile,
) -> WindowStats
where
    I: IntoIterator<Item = &'a PacketRecord>,
{
    let (start, end) = window;
    assert!(end > start, "empty statistics window ({start}, {end}]");
    let mut bits = 0.0;
    let mut latency_sum = 0.0;
    let mut delivered = 0usize;
    for p in records {
        if p.category != category {
            continue;
        }
        if let Some(t) = p.deliver_time {
            if t > start && t <= end {
                bits += p.bits();
                latency_sum += t - p.gen_time;
                delivered += 1;
            }
        }
    }
    let mean_latency = if delivered == 0 {
        profile.latency_max
    } else {
        latency_sum / delivered as f64
    };
    WindowStats {
        category,
        throughput: bits / (end - start),
        mean_latency,
        window,
        delivered,
    }
}

fn indicator(condition: bool) -> f64 {
    if condition {
        1.0
    } else {
        0.0
    }
}

/// Threshold bonus/penalty term: each of the rate and latency comparisons
/// contributes `+bonus` when on the good side, `-penalty` on the bad side and
/// nothing at equality.
pub fn penalty_bonus(stats: &WindowStats, profile: &CategoryProfile, bonus: f64, penalty: f64) -> f64 {
    let r = stats.throughput;
    let l = stats.mean_latency;
    let rate = -penalty * indicator(r < profile.rate_threshold) + bonus * indicator(r > profile.rate_threshold);
    let latency =
        bonus * indicator(l < profile.latency_threshold) - penalty * indicator(l > profile.latency_threshold);
    rate + latency
}

/// `alpha1 * R/R_max - alpha2 * L/L_max + penalty_bonus`, with `R/R_max`
/// clamped to `[0, ratio_cap]`.
pub fn utility(stats: &WindowStats, profile: &CategoryProfile, w: &RewardWeights) -> f64 {
    let ratio = (stats.throughput / profile.rate_max).clamp(0.0, w.ratio_cap);
    w.alpha1 * ratio - w.alpha2 * (stats.mean_latency / profile.latency_max)
        + penalty_bonus(stats, profile, w.bonus, w.penalty)
}
