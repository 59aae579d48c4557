//! Episode driver: mobility, traffic, gating, the MAC and the learning loop.
//!
//! A vehicle decides when it enters coverage and then every `wt_max` seconds
//! of its category. At each decision the controllers pick new contention
//! parameters and a waiting time `wt`; the vehicle stops generating traffic
//! and keeps its queue off the medium for `wt`, then contends until the next
//! decision. The reward for a decision is the utility of the vehicle's own
//! deliveries up to its next decision (or its coverage exit, which closes the
//! last window without bootstrapping).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{
    apply_action_cw, apply_action_cw_fixed, apply_action_cw_min, apply_action_ifs, apply_action_wt,
    choose_action, encode_state, q_update, AgentKind, Discretizer, Observation, QTable, StateKey,
    FIXED_CW_LADDER, STEP_ACTIONS, WT_ACTIONS,
};
use crate::category::{CategoryProfile, EdcaParams, ServiceCategory};
use crate::config::{validate_config, ConfigErrors, SimConfig};
use crate::mac::{Mac, MacError, MacEvent, PacketId, PacketRecord, QueueId};
use crate::mobility::{
    active_counts, sojourn_time, spawn_schedule, step_mobility, ActiveCounts, CycleState, Vehicle,
};
use crate::reward::{utility, window_stats, RewardWeights};

/// The seven controller schemes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerMode {
    /// One DCF parameter set for every category.
    #[serde(rename = "nonqos")]
    NonQos,
    /// Standard EDCA table, HD map on the best-effort queue.
    #[serde(rename = "qos")]
    Qos,
    /// One agent choosing a fixed window from an eight-value ladder.
    #[serde(rename = "cwfixed8")]
    CwFixed8,
    /// One agent stepping cw_min only.
    #[serde(rename = "cwmin3")]
    CwMin3,
    /// One agent stepping the (cw_min, cw_max) pair.
    #[serde(rename = "cwminmax")]
    CwMinMax,
    /// Pair agent plus the IFS agent.
    #[serde(rename = "two-agent")]
    TwoAgent,
    /// Pair, IFS and waiting-time agents.
    #[default]
    #[serde(rename = "three-agent")]
    ThreeAgent,
}

/// How the CW controller of a mode acts on the window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CwControl {
    None,
    Fixed8,
    MinOnly,
    Pair,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 7] = [
        ControllerMode::NonQos,
        ControllerMode::Qos,
        ControllerMode::CwFixed8,
        ControllerMode::CwMin3,
        ControllerMode::CwMinMax,
        ControllerMode::TwoAgent,
        ControllerMode::ThreeAgent,
    ];

    pub const fn name(self) -> &'static str {
        match self {
            ControllerMode::NonQos => "nonqos",
            ControllerMode::Qos => "qos",
            ControllerMode::CwFixed8 => "cwfixed8",
            ControllerMode::CwMin3 => "cwmin3",
            ControllerMode::CwMinMax => "cwminmax",
            ControllerMode::TwoAgent => "two-agent",
            ControllerMode::ThreeAgent => "three-agent",
        }
    }

    pub const fn cw_control(self) -> CwControl {
        match self {
            ControllerMode::NonQos | ControllerMode::Qos => CwControl::None,
            ControllerMode::CwFixed8 => CwControl::Fixed8,
            ControllerMode::CwMin3 => CwControl::MinOnly,
            ControllerMode::CwMinMax | ControllerMode::TwoAgent | ControllerMode::ThreeAgent => CwControl::Pair,
        }
    }

    pub const fn has_ifs(self) -> bool {
        matches!(self, ControllerMode::TwoAgent | ControllerMode::ThreeAgent)
    }

    pub const fn has_wt(self) -> bool {
        matches!(self, ControllerMode::ThreeAgent)
    }

    pub fn agent_count(self) -> usize {
        usize::from(!matches!(self.cw_control(), CwControl::None))
            + usize::from(self.has_ifs())
            + usize::from(self.has_wt())
    }

    pub fn cw_action_count(self) -> usize {
        match self.cw_control() {
            CwControl::Fixed8 => FIXED_CW_LADDER.len(),
            _ => STEP_ACTIONS,
        }
    }

    /// Parameters a vehicle starts with when it enters coverage. A learned
    /// IFSn starts at the bottom of its range; otherwise the standard AIFSN
    /// applies.
    pub fn initial_params(self, category: ServiceCategory, profile: &CategoryProfile) -> EdcaParams {
        let standard = EdcaParams::standard(category);
        match self {
            ControllerMode::NonQos => EdcaParams::dcf(),
            ControllerMode::Qos | ControllerMode::CwFixed8 | ControllerMode::CwMin3 => standard,
            ControllerMode::CwMinMax => EdcaParams::new(
                profile.cw_seed_min,
                profile.cw_seed_max,
                standard.ifsn.clamp(profile.ifsn_min, profile.ifsn_max),
            ),
            ControllerMode::TwoAgent | ControllerMode::ThreeAgent => {
                EdcaParams::new(profile.cw_seed_min, profile.cw_seed_max, profile.ifsn_min)
            }
        }
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown controller mode `{0}` (expected one of nonqos, qos, cwfixed8, cwmin3, cwminmax, two-agent, three-agent)")]
pub struct UnknownMode(pub String);

impl FromStr for ControllerMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ControllerMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownMode(s.to_owned()))
    }
}

/// The Q-tables a mode trains; absent agents are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTables {
    pub cw: Option<QTable>,
    pub ifs: Option<QTable>,
    pub wt: Option<QTable>,
}

impl AgentTables {
    pub fn for_mode(mode: ControllerMode) -> Self {
        AgentTables {
            cw: (mode.cw_control() != CwControl::None).then(|| QTable::new(AgentKind::Cw, mode.cw_action_count())),
            ifs: mode.has_ifs().then(|| QTable::new(AgentKind::Ifs, STEP_ACTIONS)),
            wt: mode.has_wt().then(|| QTable::new(AgentKind::Wt, WT_ACTIONS)),
        }
    }

    pub fn matches(&self, mode: ControllerMode) -> bool {
        let shape = |t: &Option<QTable>, kind: AgentKind, n: usize, wanted: bool| match t {
            Some(t) => wanted && t.kind() == kind && t.action_count() == n,
            None => !wanted,
        };
        shape(&self.cw, AgentKind::Cw, mode.cw_action_count(), mode.cw_control() != CwControl::None)
            && shape(&self.ifs, AgentKind::Ifs, STEP_ACTIONS, mode.has_ifs())
            && shape(&self.wt, AgentKind::Wt, WT_ACTIONS, mode.has_wt())
    }

    pub fn iter(&self) -> impl Iterator<Item = &QTable> {
        [&self.cw, &self.ifs, &self.wt].into_iter().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionEvent {
    Entry,
    Periodic,
    /// Coverage exit: closes the last window, no new actions.
    Exit,
}

impl DecisionEvent {
    pub const fn name(self) -> &'static str {
        match self {
            DecisionEvent::Entry => "entry",
            DecisionEvent::Periodic => "periodic",
            DecisionEvent::Exit => "exit",
        }
    }
}

/// One row of the decision log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub vehicle: u32,
    pub time: f64,
    pub category: ServiceCategory,
    pub event: DecisionEvent,
    /// Reward that closed the previous window, if there was one.
    pub reward: Option<f64>,
    pub cw_state: Option<StateKey>,
    pub a_cw: Option<usize>,
    pub ifs_state: Option<StateKey>,
    pub a_ifs: Option<usize>,
    pub wt_state: Option<StateKey>,
    pub a_wt: Option<usize>,
    pub params: EdcaParams,
    pub wt: f64,
}

/// Learning constants shared by every agent of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Learning {
    pub epsilon: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub disc: Discretizer,
}

impl Learning {
    pub fn from_config(config: &SimConfig) -> Self {
        Learning {
            epsilon: config.epsilon,
            alpha: config.learning_rate,
            gamma: config.discount,
            disc: Discretizer::from_config(config),
        }
    }
}

/// Runs one decision for `vehicle` at time `t`.
///
/// When `previous` is given, each agent first closes that decision's window
/// with `reward` and the freshly encoded state as successor, then chooses. The
/// CW agent acts first, the IFS agent sees its action, and the waiting-time
/// agent sees only environment features.
#[allow(clippy::too_many_arguments)]
pub fn decision_tick<R: rand::Rng + ?Sized>(
    mode: ControllerMode,
    profile: &CategoryProfile,
    learning: &Learning,
    tables: &mut AgentTables,
    vehicle: &Vehicle,
    counts: &ActiveCounts,
    sojourn: f64,
    previous: Option<(&DecisionRecord, f64)>,
    t: f64,
    event: DecisionEvent,
    rng: &mut R,
) -> DecisionRecord {
    let current = vehicle.params;
    let mut obs = Observation {
        total_active: counts.total,
        active_per_category: counts.per_category,
        category: vehicle.category,
        cw_min: current.cw_min,
        cw_max: current.cw_max,
        ifsn: current.ifsn,
        a_cw: None,
        sojourn: Some(sojourn),
    };
    let mut record = DecisionRecord {
        vehicle: vehicle.id,
        time: t,
        category: vehicle.category,
        event,
        reward: previous.map(|(_, r)| r),
        cw_state: None,
        a_cw: None,
        ifs_state: None,
        a_ifs: None,
        wt_state: None,
        a_wt: None,
        params: current,
        wt: 0.0,
    };

    let mut step = |table: &mut QTable, state: StateKey, prev: Option<(&StateKey, usize)>| {
        if let (Some((s, a)), Some((_, r))) = (prev, previous) {
            q_update(table, s, a, r, Some(&state), learning.alpha, learning.gamma);
        }
        let a = choose_action(&state, table, learning.epsilon, rng);
        (state, a)
    };

    if let Some(table) = tables.cw.as_mut() {
        let state = encode_state(AgentKind::Cw, &obs, &learning.disc).expect("cw state is always encodable");
        let prev = previous.and_then(|(p, _)| prev_of(&p.cw_state, p.a_cw));
        let (state, a) = step(table, state, prev);
        let (cw_min, cw_max) = match mode.cw_control() {
            CwControl::Fixed8 => apply_action_cw_fixed(a),
            CwControl::MinOnly => (apply_action_cw_min(a, current.cw_min, current.cw_max), current.cw_max),
            CwControl::Pair => apply_action_cw(a, (current.cw_min, current.cw_max)),
            CwControl::None => unreachable!("no cw table without cw control"),
        };
        record.params.cw_min = cw_min;
        record.params.cw_max = cw_max;
        record.cw_state = Some(state);
        record.a_cw = Some(a);
        obs.a_cw = Some(a);
    }

    if let Some(table) = tables.ifs.as_mut() {
        let state = encode_state(AgentKind::Ifs, &obs, &learning.disc).expect("cw agent acts before the ifs agent");
        let prev = previous.and_then(|(p, _)| prev_of(&p.ifs_state, p.a_ifs));
        let (state, a) = step(table, state, prev);
        record.params.ifsn = apply_action_ifs(a, current.ifsn, profile);
        record.ifs_state = Some(state);
        record.a_ifs = Some(a);
    }

    if let Some(table) = tables.wt.as_mut() {
        let env_only = Observation { a_cw: None, ..obs };
        let state = encode_state(AgentKind::Wt, &env_only, &learning.disc).expect("sojourn is always observed");
        let prev = previous.and_then(|(p, _)| prev_of(&p.wt_state, p.a_wt));
        let (state, a) = step(table, state, prev);
        record.wt = apply_action_wt(a, profile);
        record.wt_state = Some(state);
        record.a_wt = Some(a);
    }

    record
}

fn prev_of(state: &Option<StateKey>, action: Option<usize>) -> Option<(&StateKey, usize)> {
    state.as_ref().zip(action)
}

/// Closes the window of `previous` with a terminal update for every agent.
pub fn close_terminal(tables: &mut AgentTables, previous: &DecisionRecord, reward: f64, learning: &Learning) {
    let pairs = [
        (tables.cw.as_mut(), &previous.cw_state, previous.a_cw),
        (tables.ifs.as_mut(), &previous.ifs_state, previous.a_ifs),
        (tables.wt.as_mut(), &previous.wt_state, previous.a_wt),
    ];
    for (table, state, action) in pairs {
        if let (Some(table), Some(state), Some(action)) = (table, state, action) {
            q_update(table, state, action, reward, None, learning.alpha, learning.gamma);
        }
    }
}

/// Opens the transmission gate once `wt` has elapsed since the decision.
/// Returns whether the vehicle may contend at `t`.
pub fn gate_check(vehicle: &mut Vehicle, t: f64) -> bool {
    if vehicle.cycle_state == CycleState::Contending {
        return true;
    }
    if t >= vehicle.wt_start + vehicle.wt {
        vehicle.cycle_state = CycleState::Contending;
        true
    } else {
        false
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigErrors),
    #[error("mac: {0}")]
    Mac(#[from] MacError),
    #[error("agent tables do not match mode {0}")]
    TablesMismatch(ControllerMode),
}

/// Independent random streams of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Spawn = 0,
    Mac = 1,
    Agents = 2,
}

/// Deterministic generator for `(seed, episode, stream)`.
pub fn stream_rng(seed: u64, episode: u32, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(episode) << 8) | stream as u64);
    rng
}

/// Everything an episode produced.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutput {
    pub episode: u32,
    pub mode: ControllerMode,
    pub duration: f64,
    pub spawned: usize,
    pub entered: usize,
    pub packets: Vec<PacketRecord>,
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Control {
    Spawn(usize),
    Mobility(u64),
    Decision(usize),
    GateOpen(usize, u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Approaching,
    Covered,
    Left,
}

struct Live {
    vehicle: Vehicle,
    last_move: f64,
    phase: Phase,
    queue: Option<QueueId>,
    generating: bool,
    gen_origin: f64,
    gen_count: u64,
    window: Vec<PacketId>,
    last: Option<DecisionRecord>,
    gate_token: u64,
}

struct Episode<'a> {
    config: &'a SimConfig,
    mode: ControllerMode,
    learning: Learning,
    weights: RewardWeights,
    tables: &'a mut AgentTables,
    mac: Mac,
    mac_rng: ChaCha8Rng,
    agent_rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<(u64, u64, Control)>>,
    seq: u64,
    live: Vec<Live>,
    queue_owner: Vec<usize>,
    decisions: Vec<DecisionRecord>,
    entered: usize,
    events: Vec<MacEvent>,
}

impl Episode<'_> {
    fn schedule(&mut self, slot: u64, control: Control) {
        self.heap.push(Reverse((slot, self.seq, control)));
        self.seq += 1;
    }

    fn now(&self) -> f64 {
        self.mac.time()
    }

    fn profile(&self, idx: usize) -> &CategoryProfile {
        self.config.profile(self.live[idx].vehicle.category)
    }

    fn next_gen_time(&self, idx: usize) -> f64 {
        let v = &self.live[idx];
        v.gen_origin + v.gen_count as f64 * self.profile(idx).packet_interval()
    }

    /// Enqueues every packet of `idx` generated strictly before slot `bound`.
    fn materialize(&mut self, idx: usize, bound: u64) -> Result<(), MacError> {
        if !self.live[idx].generating {
            return Ok(());
        }
        let queue = self.live[idx].queue.expect("generating vehicles own a queue");
        let size = self.profile(idx).packet_size;
        loop {
            let g = self.next_gen_time(idx);
            if self.mac.phy().slot_at_or_after(g) >= bound {
                return Ok(());
            }
            self.mac.enqueue(queue, size, g)?;
            self.live[idx].gen_count += 1;
        }
    }

    fn covered(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.live.len()).filter(|&i| self.live[i].phase == Phase::Covered)
    }

    fn counts(&self) -> ActiveCounts {
        let rsu = self.config.rsu_position();
        active_counts(
            self.live.iter().filter(|v| v.phase == Phase::Covered).map(|v| &v.vehicle),
            rsu,
            self.config.coverage_radius,
        )
    }

    fn window_reward(&self, idx: usize, end: f64) -> Option<f64> {
        let v = &self.live[idx];
        let start = v.last.as_ref()?.time;
        if end <= start {
            return None;
        }
        let packets = self.mac.packets();
        let profile = self.profile(idx);
        let stats = window_stats(
            v.window.iter().map(|&p| &packets[p]),
            v.vehicle.category,
            (start, end),
            profile,
        );
        Some(utility(&stats, profile, &self.weights))
    }

    fn decide(&mut self, idx: usize, event: DecisionEvent) -> Result<(), OrchestratorError> {
        let t = self.now();
        let slot = self.mac.now();
        let reward = self.window_reward(idx, t);
        let counts = self.counts();
        let rsu = self.config.rsu_position();
        let sojourn = sojourn_time(
            &self.live[idx].vehicle,
            rsu,
            self.config.coverage_radius,
            self.config.min_sojourn_speed,
        )
        .unwrap_or(0.0);
        let previous = self.live[idx].last.take();
        let profile = self.config.profile(self.live[idx].vehicle.category).clone();
        let record = decision_tick(
            self.mode,
            &profile,
            &self.learning,
            self.tables,
            &self.live[idx].vehicle,
            &counts,
            sojourn,
            previous.as_ref().zip(reward),
            t,
            event,
            &mut self.agent_rng,
        );

        let queue = self.live[idx].queue.expect("covered vehicles own a queue");
        self.mac.set_params(queue, record.params)?;
        let wt = record.wt;
        {
            let v = &mut self.live[idx];
            v.vehicle.params = record.params;
            v.vehicle.wt = wt;
            v.vehicle.wt_start = t;
            v.vehicle.cycle_state = CycleState::Waiting;
            v.window.clear();
            v.last = Some(record.clone());
        }
        self.decisions.push(record);

        if gate_check(&mut self.live[idx].vehicle, t) {
            self.open_gate(idx, t)?;
        } else {
            self.materialize(idx, slot)?;
            self.live[idx].generating = false;
            self.live[idx].gate_token += 1;
            self.mac.set_gate(queue, false)?;
            let token = self.live[idx].gate_token;
            let at = self.mac.phy().slot_at_or_after(t + wt);
            self.schedule(at, Control::GateOpen(idx, token));
        }
        let next = self.mac.phy().slot_at_or_after(t + profile.wt_max);
        self.schedule(next, Control::Decision(idx));
        Ok(())
    }

    fn open_gate(&mut self, idx: usize, t: f64) -> Result<(), MacError> {
        let queue = self.live[idx].queue.expect("covered vehicles own a queue");
        let v = &mut self.live[idx];
        if !v.generating {
            v.generating = true;
            v.gen_origin = t;
            v.gen_count = 0;
        }
        self.mac.set_gate(queue, true)
    }

    fn enter(&mut self, idx: usize) -> Result<(), OrchestratorError> {
        let v = &self.live[idx].vehicle;
        let queue = self.mac.add_queue(v.id, v.category, v.params, &mut self.mac_rng)?;
        debug_assert_eq!(queue, self.queue_owner.len());
        self.queue_owner.push(idx);
        self.live[idx].queue = Some(queue);
        self.live[idx].phase = Phase::Covered;
        self.entered += 1;
        self.decide(idx, DecisionEvent::Entry)
    }

    fn leave(&mut self, idx: usize) -> Result<(), OrchestratorError> {
        let t = self.now();
        let slot = self.mac.now();
        self.materialize(idx, slot)?;
        let reward = self.window_reward(idx, t);
        if let (Some(r), Some(previous)) = (reward, self.live[idx].last.as_ref()) {
            close_terminal(self.tables, previous, r, &self.learning);
        }
        let v = &mut self.live[idx];
        self.decisions.push(DecisionRecord {
            vehicle: v.vehicle.id,
            time: t,
            category: v.vehicle.category,
            event: DecisionEvent::Exit,
            reward,
            cw_state: None,
            a_cw: None,
            ifs_state: None,
            a_ifs: None,
            wt_state: None,
            a_wt: None,
            params: v.vehicle.params,
            wt: 0.0,
        });
        v.phase = Phase::Left;
        v.generating = false;
        v.window.clear();
        v.last = None;
        let queue = v.queue.expect("covered vehicles own a queue");
        let mut dropped = Vec::new();
        self.mac.retire(queue, &mut dropped)?;
        Ok(())
    }

    fn mobility(&mut self, k: u64) -> Result<(), OrchestratorError> {
        let t = self.now();
        let rsu = self.config.rsu_position();
        let radius = self.config.coverage_radius;
        for idx in 0..self.live.len() {
            let v = &mut self.live[idx];
            if v.phase == Phase::Left || v.vehicle.retired {
                continue;
            }
            let dt = t - v.last_move;
            if dt > 0.0 {
                step_mobility(&mut v.vehicle, dt, t, self.config);
                v.last_move = t;
            }
            let inside = v.vehicle.in_coverage(rsu, radius);
            match (v.phase, inside) {
                (Phase::Approaching, true) => self.enter(idx)?,
                (Phase::Covered, false) => self.leave(idx)?,
                _ => {}
            }
        }
        let next = k + 1;
        let at = next as f64 * self.config.mobility_tick;
        if at < self.config.episode_duration {
            let slot = self.mac.phy().slot_at_or_after(at);
            self.schedule(slot, Control::Mobility(next));
        }
        Ok(())
    }

    fn handle(&mut self, control: Control, arrivals: &[crate::mobility::Arrival]) -> Result<(), OrchestratorError> {
        match control {
            Control::Spawn(i) => {
                let arrival = &arrivals[i];
                let profile = self.config.profile(arrival.category);
                let params = self.mode.initial_params(arrival.category, profile);
                let vehicle = Vehicle::spawn(i as u32, arrival, self.config.road_length, params);
                self.live.push(Live {
                    vehicle,
                    last_move: self.now(),
                    phase: Phase::Approaching,
                    queue: None,
                    generating: false,
                    gen_origin: 0.0,
                    gen_count: 0,
                    window: Vec::new(),
                    last: None,
                    gate_token: 0,
                });
            }
            Control::Mobility(k) => self.mobility(k)?,
            Control::Decision(idx) => {
                if self.live[idx].phase == Phase::Covered {
                    self.decide(idx, DecisionEvent::Periodic)?;
                }
            }
            Control::GateOpen(idx, token) => {
                let t = self.now();
                let v = &mut self.live[idx];
                if v.phase == Phase::Covered && v.gate_token == token && gate_check(&mut v.vehicle, t) {
                    self.open_gate(idx, t)?;
                }
            }
        }
        Ok(())
    }
}

/// Runs one episode of `config.mode` with seed `config.rng_seed`, training
/// `tables` in place.
pub fn run_episode(
    config: &SimConfig,
    tables: &mut AgentTables,
    episode: u32,
) -> Result<EpisodeOutput, OrchestratorError> {
    let config = validate_config(config.clone())?;
    let mode = config.mode;
    if !tables.matches(mode) {
        return Err(OrchestratorError::TablesMismatch(mode));
    }
    let seed = config.rng_seed;
    let mut spawn_rng = stream_rng(seed, episode, Stream::Spawn);
    let arrivals = spawn_schedule(config.arrival_interval, config.episode_duration, &mut spawn_rng);

    let mut ep = Episode {
        config: &config,
        mode,
        learning: Learning::from_config(&config),
        weights: RewardWeights::from_config(&config),
        tables,
        mac: Mac::from_config(&config),
        mac_rng: stream_rng(seed, episode, Stream::Mac),
        agent_rng: stream_rng(seed, episode, Stream::Agents),
        heap: BinaryHeap::new(),
        seq: 0,
        live: Vec::with_capacity(arrivals.len()),
        queue_owner: Vec::new(),
        decisions: Vec::new(),
        entered: 0,
        events: Vec::new(),
    };
    let end = ep.mac.phy().slot_at_or_after(config.episode_duration);
    for (i, a) in arrivals.iter().enumerate() {
        let slot = ep.mac.phy().slot_at_or_after(a.entry_time);
        ep.schedule(slot, Control::Spawn(i));
    }
    ep.schedule(0, Control::Mobility(0));

    loop {
        while let Some(&Reverse((slot, _, control))) = ep.heap.peek() {
            if slot > ep.mac.now() {
                break;
            }
            ep.heap.pop();
            ep.handle(control, &arrivals)?;
        }
        let now = ep.mac.now();
        if now >= end {
            break;
        }
        let mut limit = ep.heap.peek().map_or(end, |Reverse((s, _, _))| *s).min(end);
        let generating: Vec<usize> = ep.covered().filter(|&i| ep.live[i].generating).collect();
        for idx in generating {
            ep.materialize(idx, now + 1)?;
            let queue = ep.live[idx].queue.expect("generating vehicles own a queue");
            if ep.mac.queue(queue).is_some_and(|q| q.fifo.is_empty()) {
                let next = ep.mac.phy().slot_at_or_after(ep.next_gen_time(idx));
                limit = limit.min(next);
            }
        }
        let mut mac_rng = std::mem::replace(&mut ep.mac_rng, ChaCha8Rng::seed_from_u64(0));
        let mut events = std::mem::take(&mut ep.events);
        ep.mac.advance(limit, &mut mac_rng, &mut events);
        ep.mac_rng = mac_rng;
        for e in events.drain(..) {
            if let MacEvent::Delivered { queue, packet, .. } = e {
                let owner = ep.queue_owner[queue];
                ep.live[owner].window.push(packet);
            }
        }
        ep.events = events;
    }

    let generating: Vec<usize> = ep.covered().filter(|&i| ep.live[i].generating).collect();
    for idx in generating {
        ep.materialize(idx, end)?;
    }

    let decisions = std::mem::take(&mut ep.decisions);
    let entered = ep.entered;
    let packets = ep.mac.into_packets();
    Ok(EpisodeOutput {
        episode,
        mode,
        duration: config.episode_duration,
        spawned: arrivals.len(),
        entered,
        packets,
        decisions,
    })
}
