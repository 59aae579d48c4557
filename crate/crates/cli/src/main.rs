use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use edca_core::experiment::parse_config_document;
use edca_core::metrics::fmt_num;
use edca_core::{audit_run, compare_runs, run_experiment, validate_config, ControllerMode, SimConfig};

#[derive(Parser)]
#[command(name = "edca-sim", version, about = "Vehicular EDCA channel simulator with Q-learning controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one controller mode and write a run directory.
    Run(RunArgs),
    /// Run every (mode, seed) combination, in parallel.
    Sweep(SweepArgs),
    /// Re-verify conservation and parameter bounds of a run directory.
    Audit {
        dir: PathBuf,
    },
    /// Per-category latency and throughput deltas of CAND against BASE.
    ///
    /// Latency delta % = (base - cand) / base * 100, positive when CAND is faster.
    /// Throughput delta % = (cand - base) / base * 100, positive when CAND carries more.
    Compare {
        base: PathBuf,
        cand: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration, or the manifest.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<u32>,
    /// Episode length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Skip the per-episode packet ledgers.
    #[arg(long)]
    no_packet_log: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// nonqos, qos, cwfixed8, cwmin3, cwminmax, two-agent or three-agent.
    #[arg(long)]
    mode: Option<ControllerMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to <EDCA_SIM_OUT or ./runs>/<mode>_seed<seed>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', required = true)]
    modes: Vec<ControllerMode>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Root directory for the member runs; defaults to EDCA_SIM_OUT or ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(common: &Common) -> Result<SimConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_config_document(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(e) = common.episodes {
        config.episodes = e;
    }
    if let Some(d) = common.duration {
        config.episode_duration = d;
    }
    if common.no_packet_log {
        config.write_packet_log = false;
    }
    Ok(config)
}

fn output_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("EDCA_SIM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_name(config: &SimConfig) -> String {
    format!("{}_seed{}", config.mode, config.rng_seed)
}

fn execute(config: SimConfig, dir: &Path) -> Result<()> {
    let config = validate_config(config)?;
    let reports = run_experiment(&config, dir).with_context(|| format!("run {}", dir.display()))?;
    if let Some(last) = reports.last() {
        let line: Vec<String> = last
            .summary
            .iter()
            .map(|s| format!("{} {}", s.category.code(), s.mean_latency.map(fmt_num).unwrap_or_else(|| "-".into())))
            .collect();
        println!("{}: episode {} mean latency [s] {}", dir.display(), last.episode, line.join("  "));
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config = base_config(&args.common)?;
    if let Some(m) = args.mode {
        config.mode = m;
    }
    if let Some(s) = args.seed {
        config.rng_seed = s;
    }
    let dir = match args.out {
        Some(dir) => dir,
        None => output_root(None).join(run_name(&config)),
    };
    execute(config, &dir)
}

fn sweep(args: SweepArgs) -> Result<()> {
    let base = base_config(&args.common)?;
    let root = output_root(args.out.as_deref());
    let jobs: Vec<SimConfig> = args
        .modes
        .iter()
        .flat_map(|&mode| {
            let base = &base;
            args.seeds.iter().map(move |&seed| SimConfig {
                mode,
                rng_seed: seed,
                ..base.clone()
            })
        })
        .collect();
    let failures: Vec<String> = jobs
        .into_par_iter()
        .filter_map(|config| {
            let dir = root.join(run_name(&config));
            execute(config, &dir).err().map(|e| format!("{e:#}"))
        })
        .collect();
    if !failures.is_empty() {
        bail!("{} run(s) failed:\n{}", failures.len(), failures.join("\n"));
    }
    Ok(())
}

fn audit(dir: &Path) -> Result<bool> {
    let report = audit_run(dir).with_context(|| format!("auditing {}", dir.display()))?;
    print!("{report}");
    Ok(report.is_clean())
}

fn compare(base: &Path, cand: &Path) -> Result<()> {
    let rows = compare_runs(base, cand)?;
    let pct = |x: Option<f64>| x.map(|v| format!("{v:+.2}%")).unwrap_or_else(|| "n/a".into());
    let num = |x: Option<f64>| x.map(fmt_num).unwrap_or_else(|| "-".into());
    println!(
        "{:<4} {:>14} {:>14} {:>10} {:>14} {:>14} {:>10}",
        "cat", "base_lat_s", "cand_lat_s", "lat_delta", "base_thr_bps", "cand_thr_bps", "thr_delta"
    );
    for r in rows {
        println!(
            "{:<4} {:>14} {:>14} {:>10} {:>14} {:>14} {:>10}",
            r.category,
            num(r.base_latency),
            num(r.cand_latency),
            pct(r.latency_delta_pct),
            fmt_num(r.base_throughput),
            fmt_num(r.cand_throughput),
            pct(r.throughput_delta_pct)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Audit { dir } => match audit(&dir) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Compare { base, cand } => compare(&base, &cand),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
