//! Multi-episode training runs and the run-directory layout.
//!
//! ```text
//! <run>/manifest.json            config, seed, mode, version
//! <run>/episode_<n>_packets.csv  packet ledger of episode n (1-based)
//! <run>/episode_<n>_decisions.csv
//! <run>/episodes.csv             per-episode, per-category summary
//! <run>/summary.csv              final episode summary
//! <run>/series.csv               final episode time series
//! <run>/cdf_latency.csv, cdf_throughput.csv
//! <run>/qtable_<agent>.txt       final Q-tables
//! <run>/INCOMPLETE               present until the run finishes
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::QTable;
use crate::category::ServiceCategory;
use crate::config::{validate_config, ConfigErrors, SimConfig};
use crate::mac::PacketRecord;
use crate::metrics::{self, CategorySummary, EPISODES_HEADER};
use crate::orchestrator::{run_episode, AgentTables, DecisionRecord, EpisodeOutput, OrchestratorError};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.csv";
pub const EPISODES: &str = "episodes.csv";
pub const SERIES: &str = "series.csv";
pub const CDF_LATENCY: &str = "cdf_latency.csv";
pub const CDF_THROUGHPUT: &str = "cdf_throughput.csv";
pub const INCOMPLETE: &str = "INCOMPLETE";

pub fn packets_file(episode: u32) -> String {
    format!("episode_{episode}_packets.csv")
}

pub fn decisions_file(episode: u32) -> String {
    format!("episode_{episode}_decisions.csv")
}

pub fn qtable_file(agent: &str) -> String {
    format!("qtable_{agent}.txt")
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Sim(#[from] OrchestratorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_owned(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.to_owned(),
        source,
    }
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub config: SimConfig,
}

impl Manifest {
    pub fn new(config: &SimConfig) -> Self {
        Manifest {
            tool: "edca-sim".to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            mode: config.mode.name().to_owned(),
            seed: config.rng_seed,
            config: config.clone(),
        }
    }

    pub fn read(dir: &Path) -> Result<Self, ExperimentError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|source| ExperimentError::Json { path, source })
    }
}

/// Parses either a bare configuration or a manifest (using its `config`).
pub fn parse_config_document(text: &str) -> Result<SimConfig, serde_json::Error> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("config") {
        Some(inner) if value.get("tool").is_some() => serde_json::from_value(inner.clone()),
        _ => serde_json::from_value(value),
    }
}

/// Mean reward per category over the decisions that closed a window.
pub fn mean_rewards(decisions: &[DecisionRecord]) -> [Option<f64>; 4] {
    let mut sum = [0.0; 4];
    let mut n = [0usize; 4];
    for d in decisions {
        if let Some(r) = d.reward {
            sum[d.category.index()] += r;
            n[d.category.index()] += 1;
        }
    }
    std::array::from_fn(|i| (n[i] > 0).then(|| sum[i] / n[i] as f64))
}

/// Compact result of one episode kept across a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeReport {
    pub episode: u32,
    pub summary: Vec<CategorySummary>,
    pub mean_reward: [Option<f64>; 4],
}

impl EpisodeReport {
    pub fn of(output: &EpisodeOutput) -> Self {
        EpisodeReport {
            episode: output.episode + 1,
            summary: metrics::summarize(&output.packets, output.duration),
            mean_reward: mean_rewards(&output.decisions),
        }
    }

    pub fn category(&self, category: ServiceCategory) -> &CategorySummary {
        &self.summary[category.index()]
    }
}

/// Runs every episode in memory, handing each output to `visit`. Returns the
/// trained tables.
pub fn train<F>(config: &SimConfig, mut visit: F) -> Result<AgentTables, ExperimentError>
where
    F: FnMut(&EpisodeOutput, &AgentTables) -> Result<(), ExperimentError>,
{
    let config = validate_config(config.clone())?;
    let mut tables = AgentTables::for_mode(config.mode);
    for e in 0..config.episodes {
        if !config.persist_tables {
            tables = AgentTables::for_mode(config.mode);
        }
        let out = run_episode(&config, &mut tables, e)?;
        visit(&out, &tables)?;
    }
    Ok(tables)
}

/// Trains in memory and keeps only per-episode summaries.
pub fn train_summaries(config: &SimConfig) -> Result<Vec<EpisodeReport>, ExperimentError> {
    let mut reports = Vec::new();
    train(config, |out, _| {
        reports.push(EpisodeReport::of(out));
        Ok(())
    })?;
    Ok(reports)
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn fmt_exact(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_packets(path: &Path, packets: &[PacketRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let res: csv::Result<()> = (|| {
        w.write_record(["id", "vehicle", "category", "size", "gen_time", "deliver_time", "status"])?;
        for p in packets {
            let status = if p.deliver_time.is_some() {
                "delivered"
            } else if p.dropped {
                "dropped"
            } else {
                "residual"
            };
            w.write_record([
                p.id.to_string(),
                p.vehicle.to_string(),
                p.category.code().to_owned(),
                p.size.to_string(),
                fmt_exact(p.gen_time),
                p.deliver_time.map(fmt_exact).unwrap_or_default(),
                status.to_owned(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err(path))
}

pub const DECISIONS_HEADER: [&str; 15] = [
    "vehicle", "time", "category", "event", "reward", "cw_state", "a_cw", "ifs_state", "a_ifs", "wt_state", "a_wt",
    "cw_min", "cw_max", "ifsn", "wt",
];

pub fn write_decisions(path: &Path, decisions: &[DecisionRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let opt = |x: Option<usize>| x.map(|v| v.to_string()).unwrap_or_default();
    let key = |k: &Option<crate::agents::StateKey>| k.as_ref().map(ToString::to_string).unwrap_or_default();
    let res: csv::Result<()> = (|| {
        w.write_record(DECISIONS_HEADER)?;
        for d in decisions {
            w.write_record([
                d.vehicle.to_string(),
                fmt_exact(d.time),
                d.category.code().to_owned(),
                d.event.name().to_owned(),
                d.reward.map(fmt_exact).unwrap_or_default(),
                key(&d.cw_state),
                opt(d.a_cw),
                key(&d.ifs_state),
                opt(d.a_ifs),
                key(&d.wt_state),
                opt(d.a_wt),
                d.params.cw_min.to_string(),
                d.params.cw_max.to_string(),
                d.params.ifsn.to_string(),
                fmt_exact(d.wt),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(csv_err(path))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), ExperimentError>
where
    F: FnOnce(&mut BufWriter<File>) -> csv::Result<()>,
{
    let mut file = create(path)?;
    f(&mut file).map_err(csv_err(path))?;
    file.flush().map_err(io_err(path))
}

fn write_tables(dir: &Path, tables: &AgentTables) -> Result<(), ExperimentError> {
    for table in tables.iter() {
        let path = dir.join(qtable_file(table.kind().name()));
        fs::write(&path, table.dump()).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn load_table(path: &Path) -> Result<QTable, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    QTable::load(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Runs the configured experiment and writes its run directory.
pub fn run_experiment(config: &SimConfig, dir: &Path) -> Result<Vec<EpisodeReport>, ExperimentError> {
    let config = validate_config(config.clone())?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let marker = dir.join(INCOMPLETE);
    fs::write(&marker, b"run in progress or aborted\n").map_err(io_err(&marker))?;

    let manifest_path = dir.join(MANIFEST);
    let manifest = serde_json::to_string_pretty(&Manifest::new(&config)).expect("manifest serializes");
    fs::write(&manifest_path, manifest + "\n").map_err(io_err(&manifest_path))?;

    let episodes_path = dir.join(EPISODES);
    let mut episodes_csv = csv::Writer::from_writer(create(&episodes_path)?);
    episodes_csv.write_record(EPISODES_HEADER).map_err(csv_err(&episodes_path))?;

    let mut reports = Vec::new();
    let mut last: Option<EpisodeOutput> = None;
    let tables = train(&config, |out, _| {
        let n = out.episode + 1;
        if config.write_packet_log {
            write_packets(&dir.join(packets_file(n)), &out.packets)?;
        }
        write_decisions(&dir.join(decisions_file(n)), &out.decisions)?;
        let report = EpisodeReport::of(out);
        metrics::write_episode_rows(&mut episodes_csv, n, &report.summary, &report.mean_reward)
            .map_err(csv_err(&episodes_path))?;
        reports.push(report);
        last = Some(out.clone());
        Ok(())
    })?;
    episodes_csv.flush().map_err(io_err(&episodes_path))?;
    drop(episodes_csv);

    if let Some(out) = last {
        let bucket = config.series_bucket;
        let horizon = config.episode_duration;
        let summary = metrics::summarize(&out.packets, out.duration);
        write_with(&dir.join(SUMMARY), |w| {
            metrics::write_summary(w, config.mode.name(), config.rng_seed, &summary)
        })?;
        write_with(&dir.join(SERIES), |w| metrics::write_series(w, &out.packets, bucket, horizon))?;
        write_with(&dir.join(CDF_LATENCY), |w| metrics::write_latency_cdf(w, &out.packets))?;
        write_with(&dir.join(CDF_THROUGHPUT), |w| {
            metrics::write_throughput_cdf(w, &out.packets, bucket, horizon)
        })?;
    }
    write_tables(dir, &tables)?;
    fs::remove_file(&marker).map_err(io_err(&marker))?;
    Ok(reports)
}
