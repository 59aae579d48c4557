//! Re-verification of a finished run directory, and run-to-run comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::agents::{StateKey, CW_CEILING};
use crate::category::ServiceCategory;
use crate::config::validate_config;
use crate::experiment::{self, ExperimentError, Manifest};
use crate::mac::PhyTiming;
use crate::metrics::{EpisodeRow, SummaryRow};

#[derive(Debug, Deserialize)]
struct PacketRow {
    id: usize,
    vehicle: u32,
    category: String,
    size: u32,
    gen_time: f64,
    deliver_time: Option<f64>,
    status: String,
}

#[derive(Debug, Deserialize)]
struct DecisionRow {
    vehicle: u32,
    time: f64,
    category: String,
    event: String,
    cw_state: String,
    a_cw: Option<usize>,
    ifs_state: String,
    a_ifs: Option<usize>,
    wt_state: String,
    a_wt: Option<usize>,
    cw_min: u32,
    cw_max: u32,
    ifsn: u32,
    wt: f64,
}

/// Outcome of an audit: counts of what was checked and every violation found.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub episodes: u32,
    pub packets: usize,
    pub decisions: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, message: String) {
        self.violations.push(message);
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "episodes {} packets {} decisions {} violations {}",
            self.episodes,
            self.packets,
            self.decisions,
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    })?;
    reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|source| ExperimentError::Csv {
            path: path.to_owned(),
            source,
        })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    generated: usize,
    delivered: usize,
    dropped: usize,
    residual: usize,
}

/// Re-reads `dir` and checks packet conservation, parameter bounds, the
/// agent wiring recorded in the decision log, and the waiting-time gate.
pub fn audit_run(dir: &Path) -> Result<AuditReport, ExperimentError> {
    let manifest = Manifest::read(dir)?;
    let mut report = AuditReport::default();
    let config = match validate_config(manifest.config.clone()) {
        Ok(c) => c,
        Err(errors) => {
            report.flag(format!("manifest config invalid: {errors}"));
            return Ok(report);
        }
    };
    if dir.join(experiment::INCOMPLETE).exists() {
        report.flag("run is marked incomplete".to_owned());
    }
    let phy = PhyTiming::from_config(&config);
    let longest_frame = ServiceCategory::ALL
        .iter()
        .map(|&c| config.profile(c).packet_size)
        .max()
        .unwrap_or(1);
    let max_airtime = phy.tx_slots(longest_frame).map_or(0.0, |s| phy.time_of(s + 1));

    let episode_rows: Vec<EpisodeRow> = read_rows(&dir.join(experiment::EPISODES))?;
    let mut final_counts: Option<BTreeMap<String, Counts>> = None;

    for n in 1..=config.episodes {
        report.episodes += 1;
        let decisions: Vec<DecisionRow> = read_rows(&dir.join(experiment::decisions_file(n)))?;
        report.decisions += decisions.len();
        let mut gates: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for d in &decisions {
            check_decision(&mut report, n, d, &config);
            if d.wt > 0.0 {
                gates.entry(d.vehicle).or_default().push((d.time, d.time + d.wt));
            }
        }

        if !config.write_packet_log {
            continue;
        }
        let packets: Vec<PacketRow> = read_rows(&dir.join(experiment::packets_file(n)))?;
        report.packets += packets.len();
        let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
        for (i, p) in packets.iter().enumerate() {
            if p.id != i {
                report.flag(format!("episode {n}: packet row {i} has id {}", p.id));
            }
            if p.size == 0 {
                report.flag(format!("episode {n}: packet {} has zero size", p.id));
            }
            let c = counts.entry(p.category.clone()).or_default();
            c.generated += 1;
            match (p.status.as_str(), p.deliver_time) {
                ("delivered", Some(t)) if t >= p.gen_time => c.delivered += 1,
                ("dropped", None) => c.dropped += 1,
                ("residual", None) => c.residual += 1,
                (status, t) => report.flag(format!(
                    "episode {n}: packet {} has status {status} with deliver_time {t:?} and gen_time {}",
                    p.id, p.gen_time
                )),
            }
            if let Some(windows) = gates.get(&p.vehicle) {
                for &(t0, t1) in windows {
                    if p.gen_time >= t0 && p.gen_time < t1 {
                        report.flag(format!(
                            "episode {n}: packet {} of vehicle {} generated inside its waiting window [{t0}, {t1})",
                            p.id, p.vehicle
                        ));
                    }
                    if let Some(t) = p.deliver_time {
                        if t > t0 + max_airtime && t < t1 {
                            report.flag(format!(
                                "episode {n}: packet {} of vehicle {} delivered at {t} inside its waiting window [{t0}, {t1})",
                                p.id, p.vehicle
                            ));
                        }
                    }
                }
            }
        }
        for c in ServiceCategory::ALL {
            let code = c.code().to_owned();
            let ledger = counts.get(&code).copied().unwrap_or_default();
            if ledger.delivered + ledger.dropped + ledger.residual != ledger.generated {
                report.flag(format!("episode {n} {code}: ledger does not partition"));
            }
            match episode_rows.iter().find(|r| r.episode == n && r.category == code) {
                Some(row) => {
                    let table = Counts {
                        generated: row.generated,
                        delivered: row.delivered,
                        dropped: row.dropped,
                        residual: row.residual,
                    };
                    if table != ledger {
                        report.flag(format!(
                            "episode {n} {code}: episodes.csv {table:?} disagrees with ledger {ledger:?}"
                        ));
                    }
                    if row.generated != row.delivered + row.dropped + row.residual {
                        report.flag(format!("episode {n} {code}: episodes.csv counts do not add up"));
                    }
                }
                None => report.flag(format!("episode {n} {code}: missing from episodes.csv")),
            }
        }
        if n == config.episodes {
            final_counts = Some(counts);
        }
    }

    let summary: Vec<SummaryRow> = read_rows(&dir.join(experiment::SUMMARY))?;
    for row in &summary {
        if row.generated != row.delivered + row.dropped + row.residual {
            report.flag(format!("summary {}: counts do not add up", row.category));
        }
        if let Some(counts) = &final_counts {
            let ledger = counts.get(&row.category).copied().unwrap_or_default();
            if ledger.generated != row.generated || ledger.delivered != row.delivered {
                report.flag(format!("summary {}: disagrees with the final ledger", row.category));
            }
        }
    }
    if summary.len() != ServiceCategory::ALL.len() && config.episodes > 0 {
        report.flag(format!("summary has {} rows, expected 4", summary.len()));
    }
    Ok(report)
}

fn parse_key(s: &str) -> Option<StateKey> {
    if s.is_empty() {
        None
    } else {
        s.parse().ok()
    }
}

fn check_decision(report: &mut AuditReport, n: u32, d: &DecisionRow, config: &crate::config::SimConfig) {
    let tag = format!("episode {n}: vehicle {} at {}", d.vehicle, d.time);
    let Ok(category) = d.category.parse::<ServiceCategory>() else {
        report.flag(format!("{tag}: unknown category {}", d.category));
        return;
    };
    let profile = config.profile(category);
    if d.cw_min < 1 || d.cw_min > d.cw_max || d.cw_max > CW_CEILING {
        report.flag(format!("{tag}: window ({}, {}) out of bounds", d.cw_min, d.cw_max));
    }
    if d.ifsn < profile.ifsn_min || d.ifsn > profile.ifsn_max {
        report.flag(format!(
            "{tag}: ifsn {} outside [{}, {}]",
            d.ifsn, profile.ifsn_min, profile.ifsn_max
        ));
    }
    if !(d.wt >= 0.0 && d.wt <= profile.wt_max) {
        report.flag(format!("{tag}: wt {} outside [0, {}]", d.wt, profile.wt_max));
    }
    if d.event == "exit" {
        if d.a_cw.is_some() || d.a_ifs.is_some() || d.a_wt.is_some() {
            report.flag(format!("{tag}: exit row carries actions"));
        }
        return;
    }
    let mode = config.mode;
    if d.a_cw.is_some() != (mode.agent_count() > 0) {
        report.flag(format!("{tag}: cw action presence does not match mode {mode}"));
    }
    if d.a_ifs.is_some() != mode.has_ifs() || d.a_wt.is_some() != mode.has_wt() {
        report.flag(format!("{tag}: agent actions do not match mode {mode}"));
    }
    if d.a_ifs.is_some() {
        match (parse_key(&d.ifs_state), d.a_cw) {
            (Some(key), Some(a_cw)) if key.0.len() == 4 && key.0[2] as usize == a_cw => {}
            _ => report.flag(format!("{tag}: ifs state does not embed this tick's cw action")),
        }
    }
    if d.a_cw.is_some() && parse_key(&d.cw_state).is_none_or(|k| k.0.len() != 5) {
        report.flag(format!("{tag}: malformed cw state"));
    }
    if d.a_wt.is_some() {
        match parse_key(&d.wt_state) {
            Some(key) if key.0.len() == 4 && key.0[2] == category.index() as u32 => {}
            _ => report.flag(format!("{tag}: wt state is not environment-only")),
        }
    } else if d.wt != 0.0 {
        report.flag(format!("{tag}: wt {} without a wt agent", d.wt));
    }
}

/// One category of a two-run comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub category: String,
    pub base_latency: Option<f64>,
    pub cand_latency: Option<f64>,
    /// `(base - cand) / base * 100`: positive means the candidate is faster.
    pub latency_delta_pct: Option<f64>,
    pub base_throughput: f64,
    pub cand_throughput: f64,
    /// `(cand - base) / base * 100`: positive means the candidate carries more.
    pub throughput_delta_pct: Option<f64>,
}

pub fn latency_delta_pct(base: f64, cand: f64) -> Option<f64> {
    (base != 0.0).then(|| (base - cand) / base * 100.0)
}

pub fn throughput_delta_pct(base: f64, cand: f64) -> Option<f64> {
    (base != 0.0).then(|| (cand - base) / base * 100.0)
}

/// Joins the `summary.csv` of two runs by category.
pub fn compare_runs(base: &Path, cand: &Path) -> Result<Vec<CompareRow>, ExperimentError> {
    let a: Vec<SummaryRow> = read_rows(&base.join(experiment::SUMMARY))?;
    let b: Vec<SummaryRow> = read_rows(&cand.join(experiment::SUMMARY))?;
    Ok(a.iter()
        .filter_map(|ra| {
            let rb = b.iter().find(|r| r.category == ra.category)?;
            Some(CompareRow {
                category: ra.category.clone(),
                base_latency: ra.mean_latency,
                cand_latency: rb.mean_latency,
                latency_delta_pct: ra
                    .mean_latency
                    .zip(rb.mean_latency)
                    .and_then(|(x, y)| latency_delta_pct(x, y)),
                base_throughput: ra.mean_throughput,
                cand_throughput: rb.mean_throughput,
                throughput_delta_pct: throughput_delta_pct(ra.mean_throughput, rb.mean_throughput),
            })
        })
        .collect())
}
