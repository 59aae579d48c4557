//! Tabular Q-learning: state encoding, ε-greedy selection, the TD update and
//! the action-to-parameter mappers of the three controllers.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::category::{CategoryProfile, ServiceCategory};
use crate::config::SimConfig;

/// Which controller a table or spec belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Contention-window controller (pair, cw_min only, or fixed ladder).
    Cw,
    /// Inter-frame-space controller, conditioned on the CW action.
    Ifs,
    /// Waiting-time controller, an independent learner.
    Wt,
}

impl AgentKind {
    pub const fn name(self) -> &'static str {
        match self {
            AgentKind::Cw => "cw",
            AgentKind::Ifs => "ifs",
            AgentKind::Wt => "wt",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = QTableParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cw" => Ok(AgentKind::Cw),
            "ifs" => Ok(AgentKind::Ifs),
            "wt" => Ok(AgentKind::Wt),
            other => Err(QTableParseError::new(1, format!("unknown agent kind `{other}`"))),
        }
    }
}

/// Number of actions in the three-way decrease/keep/increase sets.
pub const STEP_ACTIONS: usize = 3;
/// Fixed contention-window ladder of the single-agent fixed baseline.
pub const FIXED_CW_LADDER: [u32; 8] = [7, 16, 32, 64, 128, 256, 512, 1000];
/// Number of waiting-time levels.
pub const WT_ACTIONS: usize = 8;
/// Hard contention-window ceiling.
pub const CW_CEILING: u32 = 1023;

/// Learning hyper-parameters and action-set size of one agent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub action_count: usize,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub discount: f64,
}

impl AgentSpec {
    pub fn new(kind: AgentKind, action_count: usize, config: &SimConfig) -> Self {
        AgentSpec {
            kind,
            action_count,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
            discount: config.discount,
        }
    }
}

/// Bin layout for the count and sojourn features.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discretizer {
    pub count_bin_width: u32,
    pub count_bin_cap: u32,
    pub sojourn_bins: u32,
    pub sojourn_horizon: f64,
}

impl Default for Discretizer {
    fn default() -> Self {
        Discretizer {
            count_bin_width: 5,
            count_bin_cap: 10,
            sojourn_bins: 8,
            sojourn_horizon: 20.0,
        }
    }
}

impl Discretizer {
    pub fn from_config(config: &SimConfig) -> Self {
        Discretizer {
            count_bin_width: config.count_bin_width,
            count_bin_cap: config.count_bin_cap,
            sojourn_bins: config.sojourn_bins,
            sojourn_horizon: config.sojourn_horizon,
        }
    }

    pub fn count_bin(&self, count: usize) -> u32 {
        let bin = count / self.count_bin_width as usize;
        bin.min(self.count_bin_cap as usize) as u32
    }

    /// Uniform bins over `[0, sojourn_horizon]`; longer sojourns land in the last bin.
    pub fn sojourn_bin(&self, sojourn: f64) -> u32 {
        let width = self.sojourn_horizon / f64::from(self.sojourn_bins);
        let bin = (sojourn.max(0.0) / width).floor();
        (bin as u32).min(self.sojourn_bins - 1)
    }
}

/// Environment and controller features observed at a decision tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub total_active: usize,
    pub active_per_category: [usize; 4],
    pub category: ServiceCategory,
    pub cw_min: u32,
    pub cw_max: u32,
    pub ifsn: u32,
    /// CW action chosen earlier in the same tick.
    pub a_cw: Option<usize>,
    pub sojourn: Option<f64>,
}

/// Encoded state: a short vector of small integers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub Vec<u32>);

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_char(',')?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

impl FromStr for StateKey {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(StateKey(Vec::new()));
        }
        s.split(',').map(str::parse).collect::<Result<_, _>>().map(StateKey)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("the IFS state needs the CW action of the same tick")]
    MissingCwAction,
    #[error("the waiting-time state needs the sojourn time")]
    MissingSojourn,
}

/// Builds the state key of `kind` from `obs`.
///
/// * CW: `(bin(T_v), category, bin(T_cv[category]), cw_min, cw_max)`
/// * IFS: `(cw_min, cw_max, a_cw, ifsn)`
/// * WT: `(bin(sojourn), bin(T_v), category, bin(T_cv[category]))`
pub fn encode_state(kind: AgentKind, obs: &Observation, disc: &Discretizer) -> Result<StateKey, EncodeError> {
    let d = obs.category.index() as u32;
    let tv = disc.count_bin(obs.total_active);
    let tcv = disc.count_bin(obs.active_per_category[obs.category.index()]);
    let key = match kind {
        AgentKind::Cw => vec![tv, d, tcv, obs.cw_min, obs.cw_max],
        AgentKind::Ifs => {
            let a_cw = obs.a_cw.ok_or(EncodeError::MissingCwAction)?;
            vec![obs.cw_min, obs.cw_max, a_cw as u32, obs.ifsn]
        }
        AgentKind::Wt => {
            let sj = obs.sojourn.ok_or(EncodeError::MissingSojourn)?;
            vec![disc.sojourn_bin(sj), tv, d, tcv]
        }
    };
    Ok(StateKey(key))
}

/// Action values per state, all zero until first written.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    kind: AgentKind,
    action_count: usize,
    entries: BTreeMap<StateKey, Vec<f64>>,
    zeros: Vec<f64>,
}

impl QTable {
    pub fn new(kind: AgentKind, action_count: usize) -> Self {
        assert!(action_count > 0, "an agent needs at least one action");
        QTable {
            kind,
            action_count,
            entries: BTreeMap::new(),
            zeros: vec![0.0; action_count],
        }
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Action values of `key`; unseen states read as zeros without being stored.
    pub fn values(&self, key: &StateKey) -> &[f64] {
        self.entries.get(key).map_or(&self.zeros, Vec::as_slice)
    }

    pub fn get(&self, key: &StateKey, action: usize) -> f64 {
        self.values(key)[action]
    }

    pub fn max_value(&self, key: &StateKey) -> f64 {
        self.values(key).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn set(&mut self, key: &StateKey, action: usize, value: f64) {
        assert!(action < self.action_count, "action {action} out of range");
        let n = self.action_count;
        self.entries.entry(key.clone()).or_insert_with(|| vec![0.0; n])[action] = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&StateKey, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Line-oriented text: a header `agent <kind> <actions>` then one
    /// `<key> <v0> <v1> ...` line per stored state in key order. Values use the
    /// shortest representation that parses back to the same bits.
    pub fn dump(&self) -> String {
        let mut out = format!("agent {} {}\n", self.kind, self.action_count);
        for (key, values) in &self.entries {
            write!(out, "{key}").unwrap();
            for v in values {
                write!(out, " {v:?}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<Self, QTableParseError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| QTableParseError::new(1, "missing header"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("agent") {
            return Err(QTableParseError::new(1, "header must start with `agent`"));
        }
        let kind: AgentKind = parts
            .next()
            .ok_or_else(|| QTableParseError::new(1, "missing agent kind"))?
            .parse()?;
        let action_count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .filter(|&n| n > 0)
            .ok_or_else(|| QTableParseError::new(1, "bad action count"))?;
        let mut table = QTable::new(kind, action_count);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let key: StateKey = fields
                .next()
                .unwrap_or_default()
                .parse()
                .map_err(|e| QTableParseError::new(line_no, format!("bad state key: {e}")))?;
            let values: Vec<f64> = fields
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| QTableParseError::new(line_no, format!("bad value: {e}")))?;
            if values.len() != action_count {
                return Err(QTableParseError::new(
                    line_no,
                    format!("expected {action_count} values, found {}", values.len()),
                ));
            }
            if table.entries.insert(key, values).is_some() {
                return Err(QTableParseError::new(line_no, "duplicate state key"));
            }
        }
        Ok(table)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct QTableParseError {
    pub line: usize,
    pub message: String,
}

impl QTableParseError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        QTableParseError {
            line,
            message: message.into(),
        }
    }
}

/// ε-greedy selection: a uniform action with probability `epsilon`, otherwise
/// a greedy one with ties broken uniformly among the maxima.
pub fn choose_action<R: Rng + ?Sized>(key: &StateKey, table: &QTable, epsilon: f64, rng: &mut R) -> usize {
    let n = table.action_count();
    if rng.random::<f64>() < epsilon {
        return rng.random_range(0..n);
    }
    let values = table.values(key);
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..n).filter(|&a| values[a] == best).collect();
    match ties.len() {
        1 => ties[0],
        k => ties[rng.random_range(0..k)],
    }
}

/// The TD target combination, evaluated as `q + alpha * (r + gamma * max_next - q)`.
pub fn td_value(q: f64, reward: f64, max_next: f64, alpha: f64, gamma: f64) -> f64 {
    q + alpha * (reward + gamma * max_next - q)
}

/// One-step Q-learning update of `(state, action)`. `next = None` marks a
/// terminal transition (no bootstrap).
pub fn q_update(
    table: &mut QTable,
    state: &StateKey,
    action: usize,
    reward: f64,
    next: Option<&StateKey>,
    alpha: f64,
    gamma: f64,
) {
    let max_next = next.map_or(0.0, |s| table.max_value(s));
    let q = table.get(state, action);
    table.set(state, action, td_value(q, reward, max_next, alpha, gamma));
}

fn halve(x: u32) -> u32 {
    x.saturating_sub(1) / 2
}

fn double(x: u32) -> u32 {
    x.saturating_mul(2).saturating_add(1)
}

fn step(action: usize, x: u32) -> u32 {
    match action {
        0 => halve(x),
        1 => x,
        _ => double(x),
    }
}

/// Decrease (0), keep (1) or increase (2) both window bounds along the
/// `2^k - 1` ladder, then clamp into `1 <= cw_min <= cw_max <= 1023`.
pub fn apply_action_cw(action: usize, current: (u32, u32)) -> (u32, u32) {
    let cw_max = step(action, current.1).clamp(1, CW_CEILING);
    let cw_min = step(action, current.0).clamp(1, cw_max);
    (cw_min, cw_max)
}

/// Moves only `cw_min`, keeping it within `[1, cw_max]`.
pub fn apply_action_cw_min(action: usize, cw_min: u32, cw_max: u32) -> u32 {
    step(action, cw_min).clamp(1, cw_max)
}

/// Fixed window `(v, v)` from the eight-value ladder.
pub fn apply_action_cw_fixed(action: usize) -> (u32, u32) {
    let v = FIXED_CW_LADDER[action];
    (v, v)
}

/// `ifsn - 1 + action`, clamped to the category's bounds.
pub fn apply_action_ifs(action: usize, ifsn: u32, profile: &CategoryProfile) -> u32 {
    let raw = i64::from(ifsn) - 1 + action as i64;
    raw.clamp(i64::from(profile.ifsn_min), i64::from(profile.ifsn_max)) as u32
}

/// `action * wt_max / 8` seconds.
pub fn apply_action_wt(action: usize, profile: &CategoryProfile) -> f64 {
    action as f64 * (profile.wt_max / WT_ACTIONS as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs() -> Observation {
        Observation {
            total_active: 12,
            active_per_category: [3, 2, 4, 3],
            category: ServiceCategory::HdMap,
            cw_min: 3,
            cw_max: 17,
            ifsn: 5,
            a_cw: None,
            sojourn: None,
        }
    }

    #[test]
    fn cw_key_layout() {
        let key = encode_state(AgentKind::Cw, &obs(), &Discretizer::default()).unwrap();
        assert_eq!(key, StateKey(vec![2, ServiceCategory::HdMap.index() as u32, 0, 3, 17]));
    }

    #[test]
    fn ifs_key_requires_cw_action() {
        let d = Discretizer::default();
        assert_eq!(encode_state(AgentKind::Ifs, &obs(), &d), Err(EncodeError::MissingCwAction));
        let o = Observation { a_cw: Some(2), ..obs() };
        assert_eq!(encode_state(AgentKind::Ifs, &o, &d).unwrap(), StateKey(vec![3, 17, 2, 5]));
    }

    #[test]
    fn wt_key_uses_sojourn_bin() {
        let d = Discretizer::default();
        let o = Observation {
            sojourn: Some(200.0 / 17.0),
            a_cw: Some(1),
            ..obs()
        };
        let key = encode_state(AgentKind::Wt, &o, &d).unwrap();
        assert_eq!(key.0[0], 4);
        assert_eq!(key.0.len(), 4);
        assert_eq!(d.sojourn_bin(1e9), 7);
        assert_eq!(d.count_bin(1000), 10);
    }

    #[test]
    fn greedy_picks_argmax() {
        let mut t = QTable::new(AgentKind::Ifs, 3);
        let k = StateKey(vec![1]);
        for (a, v) in [0.1, 0.5, 0.2].into_iter().enumerate() {
            t.set(&k, a, v);
        }
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(choose_action(&k, &t, 0.0, &mut r), 1);
        }
    }

    /// Pearson χ² against the uniform law; 99.9% critical values for 2 and 7 dof.
    fn chi_square_uniform(counts: &[usize]) -> bool {
        let n: usize = counts.iter().sum();
        let expected = n as f64 / counts.len() as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = match counts.len() {
            3 => 13.816,
            8 => 24.322,
            _ => unreachable!(),
        };
        stat < critical
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut t = QTable::new(AgentKind::Wt, 8);
        let k = StateKey(vec![0]);
        t.set(&k, 3, 10.0);
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 8];
        for _ in 0..10_000 {
            counts[choose_action(&k, &t, 1.0, &mut r)] += 1;
        }
        assert!(chi_square_uniform(&counts), "{counts:?}");
    }

    #[test]
    fn ties_are_broken_uniformly() {
        let t = QTable::new(AgentKind::Cw, 3);
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[choose_action(&StateKey(vec![9]), &t, 0.0, &mut r)] += 1;
        }
        assert!(chi_square_uniform(&counts), "{counts:?}");
    }

    #[test]
    fn q_update_examples() {
        let s = StateKey(vec![0]);
        let s2 = StateKey(vec![1]);
        let mut t = QTable::new(AgentKind::Cw, 3);
        q_update(&mut t, &s, 0, 1.95, Some(&s2), 0.1, 0.99);
        assert_eq!(t.get(&s, 0), 0.1 * 1.95);

        let mut t = QTable::new(AgentKind::Cw, 3);
        t.set(&s, 1, 1.0);
        t.set(&s2, 2, 1.0);
        q_update(&mut t, &s, 1, 0.0, Some(&s2), 0.1, 0.99);
        assert!((t.get(&s, 1) - 0.999).abs() < 1e-15);

        let before = t.clone();
        q_update(&mut t, &s, 1, 5.0, Some(&s2), 0.0, 0.99);
        assert_eq!(t, before);
    }

    #[test]
    fn unseen_read_does_not_insert() {
        let t = QTable::new(AgentKind::Wt, 8);
        assert_eq!(t.values(&StateKey(vec![1, 2])), &[0.0; 8]);
        assert!(t.is_empty());
    }

    #[test]
    fn mapper_examples() {
        assert_eq!(apply_action_cw(0, (3, 17)), (1, 8));
        assert_eq!(apply_action_cw(1, (3, 17)), (3, 17));
        assert_eq!(apply_action_cw(2, (3, 17)), (7, 35));
        assert_eq!(apply_action_cw_fixed(0), (7, 7));
        assert_eq!(apply_action_cw_fixed(3), (64, 64));
        assert_eq!(apply_action_cw_fixed(7), (1000, 1000));
        let hd = CategoryProfile::default_for(ServiceCategory::HdMap);
        let vo = CategoryProfile::default_for(ServiceCategory::Voice);
        assert_eq!(apply_action_ifs(0, 5, &hd), 4);
        assert_eq!(apply_action_ifs(0, 1, &hd), 1);
        assert_eq!(apply_action_ifs(2, 20, &hd), 20);
        assert_eq!(apply_action_wt(4, &hd), 1.0);
        assert_eq!(apply_action_wt(0, &vo), 0.0);
        assert!((apply_action_wt(7, &vo) - 0.805).abs() < 1e-12);
    }

    #[test]
    fn ladder_closure() {
        let mut x = 1;
        while x <= CW_CEILING {
            let back = apply_action_cw(0, apply_action_cw(2, (x, x)));
            if x < CW_CEILING {
                assert_eq!(back, (x, x));
            } else {
                assert!(back.0 <= x && back.1 <= x);
            }
            x = 2 * x + 1;
        }
    }

    #[test]
    fn dump_load_round_trip() {
        let mut t = QTable::new(AgentKind::Ifs, 3);
        t.set(&StateKey(vec![3, 17, 2, 5]), 1, 0.1 + 0.2);
        t.set(&StateKey(vec![1, 8, 0, 1]), 2, -1.0e-300);
        t.set(&StateKey(vec![1, 8, 0, 1]), 0, 123456.789);
        let text = t.dump();
        let back = QTable::load(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.dump(), text);
        assert!(QTable::load("agent ifs 3\n1,2 0.0 1.0\n").is_err());
        assert!(QTable::load("agent xx 3\n").is_err());
    }

    proptest! {
        #[test]
        fn mappers_respect_bounds(a in 0usize..3, lo in 1u32..1024, span in 0u32..1024, ifsn in 0u32..60, c in 0usize..4, wa in 0usize..8) {
            let hi = (lo + span).min(CW_CEILING);
            let lo = lo.min(hi);
            let (mn, mx) = apply_action_cw(a, (lo, hi));
            prop_assert!(1 <= mn && mn <= mx && mx <= CW_CEILING);
            let m = apply_action_cw_min(a, lo, hi);
            prop_assert!(1 <= m && m <= hi);
            let p = CategoryProfile::default_for(ServiceCategory::ALL[c]);
            let i = apply_action_ifs(a, ifsn, &p);
            prop_assert!(p.ifsn_min <= i && i <= p.ifsn_max);
            let wt = apply_action_wt(wa, &p);
            prop_assert!((0.0..=p.wt_max).contains(&wt));
        }

        #[test]
        fn q_update_touches_one_cell(
            cells in proptest::collection::vec((0u32..6, 0usize..3, -5.0..5.0f64), 0..20),
            s in 0u32..6, a in 0usize..3, r in -3.0..3.0f64, n in 0u32..6,
        ) {
            let mut t = QTable::new(AgentKind::Cw, 3);
            for (k, act, v) in cells {
                t.set(&StateKey(vec![k]), act, v);
            }
            let before = t.clone();
            let key = StateKey(vec![s]);
            q_update(&mut t, &key, a, r, Some(&StateKey(vec![n])), 0.1, 0.99);
            for k in 0..6 {
                for act in 0..3 {
                    let sk = StateKey(vec![k]);
                    if k == s && act == a {
                        continue;
                    }
                    prop_assert_eq!(t.get(&sk, act).to_bits(), before.get(&sk, act).to_bits());
                }
            }
        }
    }
}
