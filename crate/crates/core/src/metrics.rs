//! KPIs derived from the packet ledger and their CSV encodings.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::category::ServiceCategory;
use crate::mac::PacketRecord;

/// One time bucket of the delivery series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub bucket_start: f64,
    /// Absent when nothing was delivered in the bucket.
    pub mean_latency: Option<f64>,
    /// Delivered bits per second.
    pub throughput: f64,
    pub delivered: usize,
}

/// Deliveries of `category` (all categories when `None`) grouped into
/// `bucket`-second bins by delivery time, covering `[0, horizon)`. A delivery
/// exactly at `horizon` falls in the last bin.
pub fn time_series(
    ledger: &[PacketRecord],
    category: Option<ServiceCategory>,
    bucket: f64,
    horizon: f64,
) -> Vec<SeriesPoint> {
    assert!(bucket > 0.0, "bucket width must be positive");
    let n = ((horizon / bucket).ceil() as usize).max(1);
    let mut bits = vec![0.0; n];
    let mut latency = vec![0.0; n];
    let mut count = vec![0usize; n];
    for p in ledger {
        if category.is_some_and(|c| c != p.category) {
            continue;
        }
        let Some(t) = p.deliver_time else { continue };
        let i = ((t / bucket).floor() as usize).min(n - 1);
        bits[i] += p.bits();
        latency[i] += t - p.gen_time;
        count[i] += 1;
    }
    (0..n)
        .map(|i| SeriesPoint {
            bucket_start: i as f64 * bucket,
            mean_latency: (count[i] > 0).then(|| latency[i] / count[i] as f64),
            throughput: bits[i] / bucket,
            delivered: count[i],
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("no samples for the distribution")]
pub struct EmptyCdf;

/// Empirical CDF: one `(value, fraction <= value)` point per distinct value.
pub fn ecdf(values: &[f64]) -> Result<Vec<(f64, f64)>, EmptyCdf> {
    if values.is_empty() {
        return Err(EmptyCdf);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    Ok(out)
}

pub fn latencies(ledger: &[PacketRecord], category: ServiceCategory) -> Vec<f64> {
    ledger
        .iter()
        .filter(|p| p.category == category)
        .filter_map(PacketRecord::latency)
        .collect()
}

/// Latency CDF of the delivered packets of `category`.
pub fn cdf(ledger: &[PacketRecord], category: ServiceCategory) -> Result<Vec<(f64, f64)>, EmptyCdf> {
    ecdf(&latencies(ledger, category))
}

/// Lower median: the element at rank `(n - 1) / 2` of the sorted sample.
pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 0.5)
}

/// Nearest-rank percentile, `q` in `(0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Per-category aggregate over a ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: ServiceCategory,
    pub generated: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub residual: usize,
    pub mean_latency: Option<f64>,
    pub median_latency: Option<f64>,
    pub p95_latency: Option<f64>,
    /// Delivered bits divided by the observation span.
    pub mean_throughput: f64,
}

/// One summary per category, in category order. `span` is the observation
/// length in seconds used for the mean throughput.
pub fn summarize(ledger: &[PacketRecord], span: f64) -> Vec<CategorySummary> {
    ServiceCategory::ALL
        .iter()
        .map(|&category| {
            let rows: Vec<&PacketRecord> = ledger.iter().filter(|p| p.category == category).collect();
            let lat: Vec<f64> = rows.iter().filter_map(|p| p.latency()).collect();
            let bits: f64 = rows.iter().filter(|p| p.deliver_time.is_some()).map(|p| p.bits()).sum();
            CategorySummary {
                category,
                generated: rows.len(),
                delivered: lat.len(),
                dropped: rows.iter().filter(|p| p.dropped).count(),
                residual: rows.iter().filter(|p| p.is_residual()).count(),
                mean_latency: mean(&lat),
                median_latency: median(&lat),
                p95_latency: percentile(&lat, 0.95),
                mean_throughput: if span > 0.0 { bits / span } else { 0.0 },
            }
        })
        .collect()
}

/// Formats with nine significant digits, trailing zeros trimmed. Magnitudes
/// outside `[1e-5, 1e15)` use scientific notation.
pub fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        return "0".to_owned();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..15).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_owned()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

pub const SERIES_HEADER: [&str; 5] = ["bucket_start", "category", "mean_latency", "throughput", "delivered"];
pub const CDF_HEADER: [&str; 3] = ["category", "value", "fraction"];
pub const SUMMARY_HEADER: [&str; 11] = [
    "mode",
    "seed",
    "category",
    "generated",
    "delivered",
    "dropped",
    "residual",
    "mean_latency",
    "median_latency",
    "p95_latency",
    "mean_throughput",
];
pub const EPISODES_HEADER: [&str; 11] = [
    "episode",
    "category",
    "generated",
    "delivered",
    "dropped",
    "residual",
    "mean_latency",
    "median_latency",
    "p95_latency",
    "mean_throughput",
    "mean_reward",
];

/// Per-category time series, bucket-major.
pub fn write_series<W: Write>(out: W, ledger: &[PacketRecord], bucket: f64, horizon: f64) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SERIES_HEADER)?;
    let series: Vec<Vec<SeriesPoint>> = ServiceCategory::ALL
        .iter()
        .map(|&c| time_series(ledger, Some(c), bucket, horizon))
        .collect();
    for i in 0..series[0].len() {
        for (c, s) in ServiceCategory::ALL.iter().zip(&series) {
            let p = s[i];
            w.write_record([
                fmt_num(p.bucket_start),
                c.code().to_owned(),
                fmt_opt(p.mean_latency),
                fmt_num(p.throughput),
                p.delivered.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Latency CDF points of every category with at least one delivery.
pub fn write_latency_cdf<W: Write>(out: W, ledger: &[PacketRecord]) -> csv::Result<()> {
    let rows = ServiceCategory::ALL
        .iter()
        .filter_map(|&c| cdf(ledger, c).ok().map(|pts| (c, pts)))
        .collect::<Vec<_>>();
    write_cdf_rows(out, &rows)
}

/// CDF of the per-bucket throughput of every category.
pub fn write_throughput_cdf<W: Write>(
    out: W,
    ledger: &[PacketRecord],
    bucket: f64,
    horizon: f64,
) -> csv::Result<()> {
    let rows = ServiceCategory::ALL
        .iter()
        .filter_map(|&c| {
            let values: Vec<f64> = time_series(ledger, Some(c), bucket, horizon)
                .iter()
                .map(|p| p.throughput)
                .collect();
            ecdf(&values).ok().map(|pts| (c, pts))
        })
        .collect::<Vec<_>>();
    write_cdf_rows(out, &rows)
}

fn write_cdf_rows<W: Write>(out: W, rows: &[(ServiceCategory, Vec<(f64, f64)>)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CDF_HEADER)?;
    for (c, pts) in rows {
        for &(v, f) in pts {
            w.write_record([c.code().to_owned(), fmt_num(v), fmt_num(f)])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn summary_fields(s: &CategorySummary) -> [String; 8] {
    [
        s.generated.to_string(),
        s.delivered.to_string(),
        s.dropped.to_string(),
        s.residual.to_string(),
        fmt_opt(s.mean_latency),
        fmt_opt(s.median_latency),
        fmt_opt(s.p95_latency),
        fmt_num(s.mean_throughput),
    ]
}

pub fn write_summary<W: Write>(out: W, mode: &str, seed: u64, summary: &[CategorySummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        let mut row = vec![mode.to_owned(), seed.to_string(), s.category.code().to_owned()];
        row.extend(summary_fields(s));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends one episode's rows (no header) to an episodes table.
pub fn write_episode_rows<W: Write>(
    w: &mut csv::Writer<W>,
    episode: u32,
    summary: &[CategorySummary],
    mean_reward: &[Option<f64>; 4],
) -> csv::Result<()> {
    for s in summary {
        let mut row = vec![episode.to_string(), s.category.code().to_owned()];
        row.extend(summary_fields(s));
        row.push(fmt_opt(mean_reward[s.category.index()]));
        w.write_record(row)?;
    }
    Ok(())
}

/// A `summary.csv` row read back from disk.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub seed: u64,
    pub category: String,
    pub generated: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub residual: usize,
    pub mean_latency: Option<f64>,
    pub median_latency: Option<f64>,
    pub p95_latency: Option<f64>,
    pub mean_throughput: f64,
}

/// An `episodes.csv` row read back from disk.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct EpisodeRow {
    pub episode: u32,
    pub category: String,
    pub generated: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub residual: usize,
    pub mean_latency: Option<f64>,
    pub median_latency: Option<f64>,
    pub p95_latency: Option<f64>,
    pub mean_throughput: f64,
    pub mean_reward: Option<f64>,
}
