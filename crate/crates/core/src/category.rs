//! Service categories, their QoS profiles, and the per-vehicle contention triple.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Traffic class carried by a vehicle. Every vehicle and every packet carries exactly one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceCategory {
    Voice,
    Video,
    HdMap,
    BestEffort,
}

impl ServiceCategory {
    pub const ALL: [ServiceCategory; 4] = [
        ServiceCategory::Voice,
        ServiceCategory::Video,
        ServiceCategory::HdMap,
        ServiceCategory::BestEffort,
    ];

    pub const fn index(self) -> usize {
        match self {
            ServiceCategory::Voice => 0,
            ServiceCategory::Video => 1,
            ServiceCategory::HdMap => 2,
            ServiceCategory::BestEffort => 3,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Short code used in CSV files and state-key dumps.
    pub const fn code(self) -> &'static str {
        match self {
            ServiceCategory::Voice => "VO",
            ServiceCategory::Video => "VI",
            ServiceCategory::HdMap => "HD",
            ServiceCategory::BestEffort => "BE",
        }
    }
}

impl fmt::Display for ServiceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown service category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for ServiceCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vo" | "voice" => Ok(ServiceCategory::Voice),
            "vi" | "video" => Ok(ServiceCategory::Video),
            "hd" | "hd_map" | "hdmap" => Ok(ServiceCategory::HdMap),
            "be" | "best_effort" | "besteffort" => Ok(ServiceCategory::BestEffort),
            _ => Err(UnknownCategory(s.to_owned())),
        }
    }
}

/// QoS requirements and controller bounds for one category.
///
/// Rates are in bits/s, times in seconds, contention values in slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub app_rate: f64,
    pub rate_threshold: f64,
    pub latency_threshold: f64,
    /// Throughput normalizer of the utility.
    pub rate_max: f64,
    /// Latency normalizer of the utility, also the empty-window sentinel.
    pub latency_max: f64,
    pub wt_max: f64,
    pub cw_seed_min: u32,
    pub cw_seed_max: u32,
    pub ifsn_min: u32,
    pub ifsn_max: u32,
    pub packet_size: u32,
}

impl CategoryProfile {
    /// Default constants for `category`: thresholds, application rates, CW seeds,
    /// IFSn bounds and the wt ceiling.
    pub fn default_for(category: ServiceCategory) -> Self {
        let (app_rate, rate_threshold, latency_threshold, wt_max, cw, ifsn, packet_size) =
            match category {
                ServiceCategory::Voice => (100e3, 0.1e6, 0.150, 0.92, (2, 10), (1, 10), 100),
                ServiceCategory::Video => (5e6, 1.25e6, 0.100, 2.0, (3, 17), (1, 20), 1200),
                ServiceCategory::HdMap => (4e6, 1.25e6, 0.100, 2.0, (3, 17), (1, 20), 1200),
                ServiceCategory::BestEffort => (28e6, 1.0e6, 1.000, 8.0, (7, 23), (1, 40), 1200),
            };
        CategoryProfile {
            app_rate,
            rate_threshold,
            latency_threshold,
            rate_max: app_rate,
            latency_max: latency_threshold,
            wt_max,
            cw_seed_min: cw.0,
            cw_seed_max: cw.1,
            ifsn_min: ifsn.0,
            ifsn_max: ifsn.1,
            packet_size,
        }
    }

    /// Seconds between two packets of the constant-bit-rate source.
    pub fn packet_interval(&self) -> f64 {
        f64::from(self.packet_size) * 8.0 / self.app_rate
    }

    pub fn cw_seed(&self) -> (u32, u32) {
        (self.cw_seed_min, self.cw_seed_max)
    }
}

/// One profile per category, serialized as a keyed object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub voice: CategoryProfile,
    pub video: CategoryProfile,
    pub hd_map: CategoryProfile,
    pub best_effort: CategoryProfile,
}

impl Default for Profiles {
    fn default() -> Self {
        Profiles {
            voice: CategoryProfile::default_for(ServiceCategory::Voice),
            video: CategoryProfile::default_for(ServiceCategory::Video),
            hd_map: CategoryProfile::default_for(ServiceCategory::HdMap),
            best_effort: CategoryProfile::default_for(ServiceCategory::BestEffort),
        }
    }
}

impl Profiles {
    pub fn get(&self, category: ServiceCategory) -> &CategoryProfile {
        match category {
            ServiceCategory::Voice => &self.voice,
            ServiceCategory::Video => &self.video,
            ServiceCategory::HdMap => &self.hd_map,
            ServiceCategory::BestEffort => &self.best_effort,
        }
    }

    pub fn get_mut(&mut self, category: ServiceCategory) -> &mut CategoryProfile {
        match category {
            ServiceCategory::Voice => &mut self.voice,
            ServiceCategory::Video => &mut self.video,
            ServiceCategory::HdMap => &mut self.hd_map,
            ServiceCategory::BestEffort => &mut self.best_effort,
        }
    }
}

/// Contention triple injected from the controllers into the MAC.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdcaParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub ifsn: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ParamsError {
    #[error("cw_min {cw_min} exceeds cw_max {cw_max}")]
    CwOrder { cw_min: u32, cw_max: u32 },
    #[error("contention window bounds must be positive (cw_min {0})")]
    CwZero(u32),
    #[error("ifsn must be at least 1")]
    IfsnZero,
    #[error("ifsn {ifsn} exceeds the category ceiling {ifsn_max}")]
    IfsnAboveMax { ifsn: u32, ifsn_max: u32 },
}

impl EdcaParams {
    pub const fn new(cw_min: u32, cw_max: u32, ifsn: u32) -> Self {
        EdcaParams {
            cw_min,
            cw_max,
            ifsn,
        }
    }

    /// Checks the category-independent part of the invariants.
    pub fn check(&self) -> Result<(), ParamsError> {
        if self.cw_min == 0 {
            return Err(ParamsError::CwZero(self.cw_min));
        }
        if self.cw_min > self.cw_max {
            return Err(ParamsError::CwOrder {
                cw_min: self.cw_min,
                cw_max: self.cw_max,
            });
        }
        if self.ifsn == 0 {
            return Err(ParamsError::IfsnZero);
        }
        Ok(())
    }

    /// Full invariant check including the category's IFSn ceiling.
    pub fn check_for(&self, profile: &CategoryProfile) -> Result<(), ParamsError> {
        self.check()?;
        if self.ifsn > profile.ifsn_max {
            return Err(ParamsError::IfsnAboveMax {
                ifsn: self.ifsn,
                ifsn_max: profile.ifsn_max,
            });
        }
        Ok(())
    }

    /// 802.11p EDCA defaults per access category. HD map traffic rides the BE queue.
    pub const fn standard(category: ServiceCategory) -> Self {
        match category {
            ServiceCategory::Voice => EdcaParams::new(3, 7, 2),
            ServiceCategory::Video => EdcaParams::new(7, 15, 3),
            ServiceCategory::HdMap | ServiceCategory::BestEffort => EdcaParams::new(15, 1023, 6),
        }
    }

    /// Legacy DCF parameters shared by every category when QoS is disabled.
    pub const fn dcf() -> Self {
        EdcaParams::new(15, 1023, 2)
    }
}
