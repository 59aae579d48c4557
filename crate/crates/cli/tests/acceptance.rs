//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use edca_core::agents::{choose_action, q_update, td_value};
use edca_core::experiment::{qtable_file, SUMMARY};
use edca_core::mac::MacEvent;
use edca_core::metrics::median;
use edca_core::{
    train_summaries, AgentKind, CategoryProfile, ControllerMode, EdcaParams, EpisodeReport, Mac, PhyTiming,
    QTable, RewardWeights, ServiceCategory, SimConfig, StateKey, WindowStats,
};

const BIN: &str = env!("CARGO_BIN_EXE_edca-sim");
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, budget: Duration) -> (bool, String) {
    (elapsed < budget, format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs()))
}

// Criterion 1

/// Thresholds as (rate bit/s, latency s), application rate in bit/s.
fn table_constants(c: ServiceCategory) -> (f64, f64, f64) {
    match c {
        ServiceCategory::Voice => (0.1e6, 0.15, 0.1e6),
        ServiceCategory::Video => (1.25e6, 0.1, 5e6),
        ServiceCategory::HdMap => (1.25e6, 0.1, 4e6),
        ServiceCategory::BestEffort => (1e6, 1.0, 28e6),
    }
}

fn naive_utility(r: f64, l: f64, c: ServiceCategory) -> f64 {
    let (r_th, l_th, app) = table_constants(c);
    let ratio = (r / app).clamp(0.0, 1.5);
    let mut u = 0.3 * ratio - 0.7 * (l / l_th);
    if r < r_th {
        u -= 1.0;
    } else if r > r_th {
        u += 1.0;
    }
    if l < l_th {
        u += 1.0;
    } else if l > l_th {
        u -= 1.0;
    }
    u
}

fn reward_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let weights = RewardWeights::default();
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let c = ServiceCategory::ALL[rng.random_range(0..4)];
        let profile = CategoryProfile::default_for(c);
        let (r_th, l_th, _) = table_constants(c);
        // Every tenth draw lands exactly on a threshold.
        let r = if i % 10 == 0 { r_th } else { rng.random_range(0.0..40e6) };
        let l = if i % 10 == 5 { l_th } else { rng.random_range(0.0..3.0) };
        let stats = WindowStats {
            category: c,
            throughput: r,
            mean_latency: l,
            window: (0.0, 1.0),
            delivered: 1,
        };
        let got = edca_core::utility(&stats, &profile, &weights);
        worst = worst.max((got - naive_utility(r, l, c)).abs());
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(1));
    verdict(worst <= 1e-12 && fast, format!("max |diff| {worst:e}, {timing}"))
}

// Criterion 2

fn q_update_formula() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let s = StateKey(vec![0]);
    let s2 = StateKey(vec![1]);
    let mut mismatches = 0;
    for _ in 0..100 {
        let q: f64 = rng.random_range(-50.0..50.0);
        let r: f64 = rng.random_range(-20.0..20.0);
        let max_next: f64 = rng.random_range(-50.0..50.0);
        let alpha: f64 = rng.random_range(0.0..=1.0);
        let gamma: f64 = rng.random_range(0.0..=1.0);
        let hand = q + alpha * (r + gamma * max_next - q);
        let mut t = QTable::new(AgentKind::Cw, 2);
        t.set(&s, 0, q);
        t.set(&s2, 0, max_next);
        t.set(&s2, 1, max_next - 1.0);
        q_update(&mut t, &s, 0, r, Some(&s2), alpha, gamma);
        if t.get(&s, 0).to_bits() != hand.to_bits() || td_value(q, r, max_next, alpha, gamma) != hand {
            mismatches += 1;
        }
    }

    let mut worked = Vec::new();
    let mut t = QTable::new(AgentKind::Cw, 3);
    q_update(&mut t, &s, 1, 1.95, Some(&s2), 0.1, 0.99);
    worked.push((t.get(&s, 1) - 0.195).abs() < 1e-15);
    let mut t = QTable::new(AgentKind::Cw, 3);
    t.set(&s, 1, 1.0);
    t.set(&s2, 0, 1.0);
    q_update(&mut t, &s, 1, 0.0, Some(&s2), 0.1, 0.99);
    worked.push((t.get(&s, 1) - 0.999).abs() < 1e-15);
    let mut t = QTable::new(AgentKind::Cw, 3);
    t.set(&s, 2, 0.42);
    q_update(&mut t, &s, 2, 7.0, Some(&s2), 0.0, 0.99);
    worked.push(t.get(&s, 2) == 0.42);

    let (fast, timing) = within(start.elapsed(), Duration::from_secs(1));
    let ok = worked.iter().all(|&w| w);
    verdict(
        mismatches == 0 && ok && fast,
        format!("{mismatches}/100 mismatches, worked examples {worked:?}, {timing}"),
    )
}

// Criterion 3

const CHAIN: usize = 5;
const GOAL: usize = CHAIN - 1;

/// Action 0 steps left (floor at 0), action 1 steps right. Entering the goal
/// pays 1 and ends the episode.
fn chain_step(s: usize, a: usize) -> (usize, f64) {
    let next = if a == 1 { s + 1 } else { s.saturating_sub(1) };
    (next, if next == GOAL { 1.0 } else { 0.0 })
}

fn value_iteration_policy(gamma: f64) -> Vec<usize> {
    let mut v = [0.0f64; CHAIN];
    loop {
        let mut delta = 0.0f64;
        for s in 0..GOAL {
            let best = (0..2)
                .map(|a| {
                    let (n, r) = chain_step(s, a);
                    r + if n == GOAL { 0.0 } else { gamma * v[n] }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        if delta < 1e-12 {
            break;
        }
    }
    (0..GOAL)
        .map(|s| {
            let q = |a| {
                let (n, r) = chain_step(s, a);
                r + if n == GOAL { 0.0 } else { gamma * v[n] }
            };
            usize::from(q(1) > q(0))
        })
        .collect()
}

fn greedy(t: &QTable, s: usize) -> Option<usize> {
    let v = t.values(&StateKey(vec![s as u32]));
    (v[0] != v[1]).then(|| usize::from(v[1] > v[0]))
}

fn toy_mdp() -> Verdict {
    let start = Instant::now();
    let (alpha, gamma, epsilon) = (0.1, 0.9, 0.2);
    let optimal = value_iteration_policy(gamma);
    let is_optimal = |t: &QTable| (0..GOAL).all(|s| greedy(t, s) == Some(optimal[s]));
    let mut solved = 0;
    let mut episodes_needed = Vec::new();
    for seed in 1..=10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = QTable::new(AgentKind::Cw, 2);
        let mut reached = None;
        for episode in 1..=500 {
            let mut s = 0usize;
            for _ in 0..200 {
                let key = StateKey(vec![s as u32]);
                let a = choose_action(&key, &table, epsilon, &mut rng);
                let (n, r) = chain_step(s, a);
                let next = StateKey(vec![n as u32]);
                q_update(&mut table, &key, a, r, (n != GOAL).then_some(&next), alpha, gamma);
                s = n;
                if s == GOAL {
                    break;
                }
            }
            if reached.is_none() && is_optimal(&table) {
                reached = Some(episode);
            }
        }
        // The policy must be found and still be optimal after the last episode.
        if let (Some(e), true) = (reached, is_optimal(&table)) {
            solved += 1;
            episodes_needed.push(e);
        }
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(10));
    verdict(
        solved == 10 && fast,
        format!("{solved}/10 seeds optimal, episodes {episodes_needed:?}, {timing}"),
    )
}

// Criteria 4 and 5

fn desk_config(mode: ControllerMode, seed: u64) -> SimConfig {
    SimConfig {
        arrival_interval: 0.66,
        coverage_radius: 200.0,
        episodes: 15,
        episode_duration: 60.0,
        mode,
        rng_seed: seed,
        write_packet_log: false,
        ..SimConfig::default()
    }
}

const DESK_MODES: [ControllerMode; 4] = [
    ControllerMode::Qos,
    ControllerMode::CwMinMax,
    ControllerMode::TwoAgent,
    ControllerMode::ThreeAgent,
];

struct Desk {
    /// Final-episode report per (mode, seed), modes in `DESK_MODES` order.
    finals: Vec<Vec<EpisodeReport>>,
    elapsed: Duration,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let start = Instant::now();
        let jobs: Vec<(usize, u64)> = (0..DESK_MODES.len())
            .flat_map(|m| SEEDS.iter().map(move |&s| (m, s)))
            .collect();
        let results: Vec<((usize, u64), EpisodeReport)> = jobs
            .into_par_iter()
            .map(|(m, s)| {
                let mut reports = train_summaries(&desk_config(DESK_MODES[m], s)).expect("desk run");
                ((m, s), reports.pop().expect("at least one episode"))
            })
            .collect();
        let mut finals: Vec<Vec<EpisodeReport>> = vec![Vec::new(); DESK_MODES.len()];
        for ((m, _), r) in results {
            finals[m].push(r);
        }
        Desk {
            finals,
            elapsed: start.elapsed(),
        }
    })
}

fn mode_finals(mode: ControllerMode) -> &'static [EpisodeReport] {
    let i = DESK_MODES.iter().position(|&m| m == mode).expect("desk mode");
    &desk().finals[i]
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn qualitative() -> Verdict {
    let qos = mode_finals(ControllerMode::Qos);
    let three = mode_finals(ControllerMode::ThreeAgent);
    let hd = ServiceCategory::HdMap;
    let mut better = 0;
    let mut be_worst = 0;
    let mut rows = Vec::new();
    for (q, t) in qos.iter().zip(three) {
        let (qm, tm) = (q.category(hd).median_latency, t.category(hd).median_latency);
        if let (Some(qm), Some(tm)) = (qm, tm) {
            if tm <= 0.9 * qm {
                better += 1;
            }
        }
        let medians: Vec<Option<f64>> = ServiceCategory::ALL
            .iter()
            .map(|&c| t.category(c).median_latency)
            .collect();
        let be = medians[ServiceCategory::BestEffort.index()];
        let worst = be.is_some_and(|b| medians.iter().flatten().all(|&m| m <= b));
        if worst {
            be_worst += 1;
        }
        rows.push(format!("{}/{}", fmt_opt(tm), fmt_opt(qm)));
    }
    let (fast, timing) = within(desk().elapsed, Duration::from_secs(300));
    verdict(
        better >= 4 && be_worst == SEEDS.len() && fast,
        format!(
            "HD median three-agent/qos [s] {}; {better}/5 seeds >=10% better, BE worst on {be_worst}/5, desk sweep {timing}",
            rows.join(" ")
        ),
    )
}

fn median_seed_hd_mean(mode: ControllerMode) -> Option<f64> {
    let values: Vec<f64> = mode_finals(mode)
        .iter()
        .filter_map(|r| r.category(ServiceCategory::HdMap).mean_latency)
        .collect();
    (values.len() == SEEDS.len()).then(|| median(&values)).flatten()
}

fn agent_count_ordering() -> Verdict {
    let three = median_seed_hd_mean(ControllerMode::ThreeAgent);
    let two = median_seed_hd_mean(ControllerMode::TwoAgent);
    let one = median_seed_hd_mean(ControllerMode::CwMinMax);
    let ordered = matches!((three, two, one), (Some(a), Some(b), Some(c)) if a <= b && b <= c);
    let (fast, timing) = within(desk().elapsed, Duration::from_secs(600));
    verdict(
        ordered && fast,
        format!(
            "median-seed HD mean latency [s] three-agent {} two-agent {} cwminmax {}, desk sweep {timing}",
            fmt_opt(three),
            fmt_opt(two),
            fmt_opt(one)
        ),
    )
}

// Criteria 6 and 7

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("spawn edca-sim")
}

fn run_cli(dir: &Path, extra: &[&str]) -> bool {
    let mut args = vec!["run", "--out", dir.to_str().expect("utf-8 path")];
    args.extend_from_slice(extra);
    let out = cli(&args);
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn determinism() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["--mode", "three-agent", "--episodes", "4", "--duration", "30", "--seed", "9"];
    if !(run_cli(&a, &args) && run_cli(&b, &args)) {
        return verdict(false, "run failed");
    }
    let mut files = vec![SUMMARY.to_owned()];
    files.extend(["cw", "ifs", "wt"].map(qtable_file));
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| {
            let x = std::fs::read(a.join(f));
            let y = std::fs::read(b.join(f));
            !matches!((x, y), (Ok(x), Ok(y)) if x == y && !x.is_empty())
        })
        .collect();
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(60));
    verdict(
        differing.is_empty() && fast,
        format!("{} files compared, differing {differing:?}, {timing}", files.len()),
    )
}

fn audit_full_run() -> Verdict {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path().join("run");
    let args = ["--mode", "three-agent", "--episodes", "15", "--duration", "60", "--seed", "3"];
    if !run_cli(&dir, &args) {
        return verdict(false, "run failed");
    }
    let out = cli(&["audit", dir.to_str().expect("utf-8 path")]);
    let report = String::from_utf8_lossy(&out.stdout);
    let last = report.lines().last().unwrap_or("").to_owned();
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(60));
    verdict(out.status.success() && fast, format!("audit: {last}, {timing}"))
}

// Criterion 8

fn saturated_medians(seed: u64) -> (Option<f64>, Option<f64>) {
    let config = SimConfig::default();
    let mut mac = Mac::new(PhyTiming::from_config(&config), config.retry_limit);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues = Vec::new();
    for i in 0..20u32 {
        let category = if i % 2 == 0 {
            ServiceCategory::Voice
        } else {
            ServiceCategory::BestEffort
        };
        let id = mac
            .add_queue(i, category, EdcaParams::standard(category), &mut rng)
            .expect("valid parameters");
        mac.set_gate(id, true).expect("queue exists");
        queues.push(id);
    }
    for _ in 0..50 {
        for &q in &queues {
            mac.enqueue(q, 1200, 0.0).expect("queue exists");
        }
    }
    let mut events: Vec<MacEvent> = Vec::new();
    while mac.queues().iter().any(|q| !q.fifo.is_empty()) {
        let limit = mac.now() + 1_000_000;
        mac.advance(limit, &mut rng, &mut events);
        events.clear();
    }
    let lat = |c: ServiceCategory| {
        let v: Vec<f64> = mac
            .packets()
            .iter()
            .filter(|p| p.category == c)
            .filter_map(|p| p.latency())
            .collect();
        median(&v)
    };
    (lat(ServiceCategory::Voice), lat(ServiceCategory::BestEffort))
}

fn mac_priority() -> Verdict {
    let start = Instant::now();
    let mut ok = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let (vo, be) = saturated_medians(seed);
        if matches!((vo, be), (Some(v), Some(b)) if v < b) {
            ok += 1;
        }
        rows.push(format!("{}/{}", fmt_opt(vo), fmt_opt(be)));
    }
    let (fast, timing) = within(start.elapsed(), Duration::from_secs(60));
    verdict(
        ok == SEEDS.len() && fast,
        format!("VO/BE median [s] {}; {ok}/5 seeds, {timing}", rows.join(" ")),
    )
}

fn main() -> ExitCode {
    type Check = (&'static str, fn() -> Verdict);
    let criteria: [Check; 8] = [
        ("reward oracle equivalence", reward_oracle),
        ("q-update correctness", q_update_formula),
        ("toy MDP optimality", toy_mdp),
        ("qualitative HD latency vs QoS", qualitative),
        ("agent-count monotonicity", agent_count_ordering),
        ("determinism", determinism),
        ("conservation and constraints audit", audit_full_run),
        ("MAC priority sanity", mac_priority),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {tag}: {name} ({})", i + 1, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
