//! Slot-synchronous EDCA contention model.
//!
//! Time is counted in whole slots. A queue contends while its owner is active,
//! its transmission gate is open and it holds at least one packet. After the
//! medium turns idle every contending queue first counts `AIFS = ceil(SIFS /
//! slot) + IFSn` idle slots, then decrements its backoff counter once per idle
//! slot. A queue whose AIFS and backoff are both exhausted transmits in the
//! current slot; two or more such queues collide. Counters are frozen while the
//! medium is busy.
//!
//! [`Mac::advance_slot`] executes exactly one slot. [`Mac::advance`] skips over
//! runs of idle or busy slots and stops right after each transmission resolves;
//! it produces the same state and the same random draws as repeated single
//! steps.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::category::{EdcaParams, ParamsError, ServiceCategory};
use crate::config::SimConfig;

pub type QueueId = usize;
pub type PacketId = usize;

/// Ledger entry for one generated packet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketRecord {
    pub id: PacketId,
    pub vehicle: u32,
    pub category: ServiceCategory,
    pub size: u32,
    pub gen_time: f64,
    pub deliver_time: Option<f64>,
    pub dropped: bool,
}

impl PacketRecord {
    pub fn latency(&self) -> Option<f64> {
        self.deliver_time.map(|d| d - self.gen_time)
    }

    /// Neither delivered nor dropped: still sitting in a queue.
    pub fn is_residual(&self) -> bool {
        self.deliver_time.is_none() && !self.dropped
    }

    pub fn bits(&self) -> f64 {
        f64::from(self.size) * 8.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropReason {
    RetryLimit,
    /// The owner left coverage with packets still queued or in flight.
    OwnerGone,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MacError {
    #[error("unknown queue {0}")]
    UnknownQueue(QueueId),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("frame size must be positive")]
    EmptyFrame,
}

/// PHY timing constants, all in seconds except `phy_rate` (bits/s).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhyTiming {
    pub slot_time: f64,
    pub sifs: f64,
    pub phy_rate: f64,
    pub overhead: f64,
}

impl PhyTiming {
    pub fn from_config(config: &SimConfig) -> Self {
        PhyTiming {
            slot_time: config.slot_time,
            sifs: config.sifs,
            phy_rate: config.phy_rate,
            overhead: config.tx_overhead,
        }
    }

    pub fn sifs_slots(&self) -> u32 {
        slots_covering(self.sifs, self.slot_time) as u32
    }

    pub fn aifs_slots(&self, ifsn: u32) -> u32 {
        self.sifs_slots() + ifsn
    }

    /// Airtime of a frame of `size` bytes in whole slots.
    pub fn tx_slots(&self, size: u32) -> Result<u64, MacError> {
        Ok(slots_covering(tx_duration(size, self)?, self.slot_time).max(1))
    }

    pub fn time_of(&self, slot: u64) -> f64 {
        slot as f64 * self.slot_time
    }

    /// First slot index whose start time is at or after `t`.
    pub fn slot_at_or_after(&self, t: f64) -> u64 {
        if t <= 0.0 {
            return 0;
        }
        let mut s = (t / self.slot_time).ceil() as u64;
        while s > 0 && self.time_of(s - 1) >= t {
            s -= 1;
        }
        while self.time_of(s) < t {
            s += 1;
        }
        s
    }
}

fn slots_covering(duration: f64, slot_time: f64) -> u64 {
    // Tolerate representation error so that exact multiples do not round up.
    let raw = duration / slot_time;
    let nearest = raw.round();
    if (raw - nearest).abs() < 1e-9 {
        nearest as u64
    } else {
        raw.ceil() as u64
    }
}

/// Airtime of a frame: payload at the PHY rate plus the fixed preamble/header overhead.
pub fn tx_duration(size: u32, phy: &PhyTiming) -> Result<f64, MacError> {
    if size == 0 {
        return Err(MacError::EmptyFrame);
    }
    Ok(f64::from(size) * 8.0 / phy.phy_rate + phy.overhead)
}

/// One access-category queue. Each vehicle carries a single category, so it
/// owns exactly one queue.
#[derive(Clone, Debug, PartialEq)]
pub struct AcQueue {
    pub owner: u32,
    pub category: ServiceCategory,
    pub params: EdcaParams,
    pub fifo: VecDeque<PacketId>,
    pub backoff_counter: u32,
    pub current_cw: u32,
    pub retry_count: u32,
    pub aifs_remaining: u32,
    pub gate_open: bool,
    pub active: bool,
    contending: bool,
}

impl AcQueue {
    pub fn is_contending(&self) -> bool {
        self.contending
    }

    fn eligible(&self) -> bool {
        self.active && self.gate_open && !self.fifo.is_empty()
    }

    fn countdown(&self) -> u64 {
        u64::from(self.aifs_remaining) + u64::from(self.backoff_counter)
    }

    fn consume_idle(&mut self, slots: u64) {
        let aifs = u64::from(self.aifs_remaining);
        let from_aifs = aifs.min(slots);
        self.aifs_remaining -= from_aifs as u32;
        let rest = slots - from_aifs;
        debug_assert!(rest <= u64::from(self.backoff_counter));
        self.backoff_counter -= rest as u32;
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelState {
    /// Slot at which the ongoing transmission ends, if any.
    pub busy_until: Option<u64>,
    pub transmitters: Vec<QueueId>,
}

/// What happened in a slot (or at the end of a skipped run of slots).
#[derive(Clone, Debug, PartialEq)]
pub enum SlotOutcome {
    Idle,
    Busy,
    Success { queue: QueueId, packet: PacketId },
    Collision { queues: Vec<QueueId> },
}

/// Side effects reported to the driver.
#[derive(Clone, Debug, PartialEq)]
pub enum MacEvent {
    Delivered {
        queue: QueueId,
        packet: PacketId,
        time: f64,
    },
    Collision {
        queues: Vec<QueueId>,
        time: f64,
    },
    Dropped {
        queue: QueueId,
        packet: PacketId,
        time: f64,
        reason: DropReason,
    },
}

/// Single collision domain with its queues and packet ledger.
#[derive(Clone, Debug)]
pub struct Mac {
    phy: PhyTiming,
    sifs_slots: u32,
    retry_limit: u32,
    queues: Vec<AcQueue>,
    packets: Vec<PacketRecord>,
    channel: ChannelState,
    now: u64,
}

impl Mac {
    pub fn new(phy: PhyTiming, retry_limit: u32) -> Self {
        Mac {
            sifs_slots: phy.sifs_slots(),
            phy,
            retry_limit,
            queues: Vec::new(),
            packets: Vec::new(),
            channel: ChannelState::default(),
            now: 0,
        }
    }

    pub fn from_config(config: &SimConfig) -> Self {
        Mac::new(PhyTiming::from_config(config), config.retry_limit)
    }

    pub fn phy(&self) -> &PhyTiming {
        &self.phy
    }

    /// Current slot index: the next slot to be executed.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn time(&self) -> f64 {
        self.phy.time_of(self.now)
    }

    pub fn channel(&self) -> &ChannelState {
        &self.channel
    }

    pub fn is_busy(&self) -> bool {
        self.channel.busy_until.is_some()
    }

    pub fn queue(&self, id: QueueId) -> Option<&AcQueue> {
        self.queues.get(id)
    }

    pub fn queues(&self) -> &[AcQueue] {
        &self.queues
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn into_packets(self) -> Vec<PacketRecord> {
        self.packets
    }

    /// Registers a new queue with its initial backoff drawn from `[0, cw_min]`.
    /// The gate starts closed.
    pub fn add_queue<R: Rng + ?Sized>(
        &mut self,
        owner: u32,
        category: ServiceCategory,
        params: EdcaParams,
        rng: &mut R,
    ) -> Result<QueueId, MacError> {
        params.check()?;
        let id = self.queues.len();
        self.queues.push(AcQueue {
            owner,
            category,
            params,
            fifo: VecDeque::new(),
            backoff_counter: rng.random_range(0..=params.cw_min),
            current_cw: params.cw_min,
            retry_count: 0,
            aifs_remaining: self.aifs_slots(params.ifsn),
            gate_open: false,
            active: true,
            contending: false,
        });
        Ok(id)
    }

    fn aifs_slots(&self, ifsn: u32) -> u32 {
        self.sifs_slots + ifsn
    }

    fn queue_mut(&mut self, id: QueueId) -> Result<&mut AcQueue, MacError> {
        self.queues.get_mut(id).ok_or(MacError::UnknownQueue(id))
    }

    /// Installs new contention parameters. The window bounds and IFSn take
    /// effect at the next backoff draw and AIFS reset; `current_cw` (and the
    /// backoff counter with it) is clamped into the new bounds immediately.
    pub fn set_params(&mut self, id: QueueId, params: EdcaParams) -> Result<(), MacError> {
        params.check()?;
        let q = self.queue_mut(id)?;
        q.params = params;
        q.current_cw = q.current_cw.clamp(params.cw_min, params.cw_max);
        q.backoff_counter = q.backoff_counter.min(q.current_cw);
        Ok(())
    }

    pub fn set_gate(&mut self, id: QueueId, open: bool) -> Result<(), MacError> {
        self.queue_mut(id)?.gate_open = open;
        self.refresh(id);
        Ok(())
    }

    /// Appends a freshly generated packet to the tail of queue `id`. Packets for
    /// an inactive queue are recorded and dropped at once.
    pub fn enqueue(&mut self, id: QueueId, size: u32, gen_time: f64) -> Result<PacketId, MacError> {
        let q = self.queues.get(id).ok_or(MacError::UnknownQueue(id))?;
        let pid = self.packets.len();
        let active = q.active;
        self.packets.push(PacketRecord {
            id: pid,
            vehicle: q.owner,
            category: q.category,
            size,
            gen_time,
            deliver_time: None,
            dropped: !active,
        });
        if active {
            self.queues[id].fifo.push_back(pid);
            self.refresh(id);
        }
        Ok(pid)
    }

    /// Deactivates queue `id` and drops everything it holds except a frame that
    /// is on the air; that one is dropped when its transmission ends.
    pub fn retire(&mut self, id: QueueId, out: &mut Vec<MacEvent>) -> Result<(), MacError> {
        let in_flight = self.channel.busy_until.is_some() && self.channel.transmitters.contains(&id);
        let time = self.time();
        let q = self.queue_mut(id)?;
        q.active = false;
        let keep = usize::from(in_flight && !q.fifo.is_empty());
        let drained: Vec<PacketId> = q.fifo.drain(keep..).collect();
        for pid in drained {
            self.packets[pid].dropped = true;
            out.push(MacEvent::Dropped {
                queue: id,
                packet: pid,
                time,
                reason: DropReason::OwnerGone,
            });
        }
        self.refresh(id);
        Ok(())
    }

    /// Recomputes whether `id` contends; a queue that starts contending must
    /// observe a full AIFS first.
    fn refresh(&mut self, id: QueueId) {
        let aifs = self.aifs_slots(self.queues[id].params.ifsn);
        let q = &mut self.queues[id];
        let eligible = q.eligible();
        if eligible && !q.contending {
            q.aifs_remaining = aifs;
        }
        q.contending = eligible;
    }

    /// Executes exactly one slot.
    pub fn advance_slot<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<MacEvent>) -> SlotOutcome {
        if let Some(busy_until) = self.channel.busy_until {
            self.now += 1;
            if self.now == busy_until {
                return self.resolve(rng, out);
            }
            return SlotOutcome::Busy;
        }
        let ready = self.ready_queues();
        if !ready.is_empty() {
            self.start_tx(ready);
            self.now += 1;
            if Some(self.now) == self.channel.busy_until {
                return self.resolve(rng, out);
            }
            return SlotOutcome::Busy;
        }
        for q in self.queues.iter_mut().filter(|q| q.contending) {
            q.consume_idle(1);
        }
        self.now += 1;
        SlotOutcome::Idle
    }

    /// Runs slots until `limit` is reached or a transmission resolves,
    /// whichever comes first. Equivalent to calling [`Mac::advance_slot`] the
    /// same number of times.
    pub fn advance<R: Rng + ?Sized>(&mut self, limit: u64, rng: &mut R, out: &mut Vec<MacEvent>) -> SlotOutcome {
        let mut last = SlotOutcome::Idle;
        while self.now < limit {
            if let Some(busy_until) = self.channel.busy_until {
                if limit < busy_until {
                    self.now = limit;
                    return SlotOutcome::Busy;
                }
                self.now = busy_until;
                return self.resolve(rng, out);
            }
            let min_countdown = self
                .queues
                .iter()
                .filter(|q| q.contending)
                .map(AcQueue::countdown)
                .min();
            match min_countdown {
                None => {
                    self.now = limit;
                    return SlotOutcome::Idle;
                }
                Some(0) => {
                    let ready = self.ready_queues();
                    self.start_tx(ready);
                    self.now += 1;
                    if Some(self.now) == self.channel.busy_until {
                        return self.resolve(rng, out);
                    }
                    last = SlotOutcome::Busy;
                }
                Some(k) => {
                    let skip = k.min(limit - self.now);
                    for q in self.queues.iter_mut().filter(|q| q.contending) {
                        q.consume_idle(skip);
                    }
                    self.now += skip;
                    last = SlotOutcome::Idle;
                }
            }
        }
        last
    }

    fn ready_queues(&self) -> Vec<QueueId> {
        self.queues
            .iter()
            .enumerate()
            .filter(|(_, q)| q.contending && q.aifs_remaining == 0 && q.backoff_counter == 0)
            .map(|(i, _)| i)
            .collect()
    }

    fn start_tx(&mut self, transmitters: Vec<QueueId>) {
        let airtime = transmitters
            .iter()
            .map(|&i| {
                let head = self.queues[i].fifo[0];
                self.phy
                    .tx_slots(self.packets[head].size)
                    .expect("queued packets have positive size")
            })
            .max()
            .expect("at least one transmitter");
        self.channel.busy_until = Some(self.now + airtime);
        self.channel.transmitters = transmitters;
    }

    fn resolve<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut Vec<MacEvent>) -> SlotOutcome {
        let time = self.time();
        let transmitters = std::mem::take(&mut self.channel.transmitters);
        self.channel.busy_until = None;

        let outcome = if let [only] = transmitters[..] {
            let q = &mut self.queues[only];
            let pid = q.fifo.pop_front().expect("transmitter holds a packet");
            q.current_cw = q.params.cw_min;
            q.retry_count = 0;
            q.backoff_counter = rng.random_range(0..=q.current_cw);
            if q.active {
                self.packets[pid].deliver_time = Some(time);
                out.push(MacEvent::Delivered {
                    queue: only,
                    packet: pid,
                    time,
                });
            } else {
                self.packets[pid].dropped = true;
                out.push(MacEvent::Dropped {
                    queue: only,
                    packet: pid,
                    time,
                    reason: DropReason::OwnerGone,
                });
            }
            SlotOutcome::Success {
                queue: only,
                packet: pid,
            }
        } else {
            out.push(MacEvent::Collision {
                queues: transmitters.clone(),
                time,
            });
            for &i in &transmitters {
                let retry_limit = self.retry_limit;
                let q = &mut self.queues[i];
                q.current_cw = (2 * q.current_cw + 1).min(q.params.cw_max);
                q.retry_count += 1;
                let mut dropped = None;
                if q.retry_count > retry_limit || !q.active {
                    dropped = q.fifo.pop_front();
                    q.current_cw = q.params.cw_min;
                    q.retry_count = 0;
                }
                q.backoff_counter = rng.random_range(0..=q.current_cw);
                if let Some(pid) = dropped {
                    let reason = if q.active {
                        DropReason::RetryLimit
                    } else {
                        DropReason::OwnerGone
                    };
                    self.packets[pid].dropped = true;
                    out.push(MacEvent::Dropped {
                        queue: i,
                        packet: pid,
                        time,
                        reason,
                    });
                }
            }
            SlotOutcome::Collision {
                queues: transmitters.clone(),
            }
        };

        // Medium is idle again: everybody re-observes AIFS.
        for id in 0..self.queues.len() {
            self.refresh(id);
            let aifs = self.aifs_slots(self.queues[id].params.ifsn);
            let q = &mut self.queues[id];
            if q.contending {
                q.aifs_remaining = aifs;
            }
        }
        outcome
    }

    /// Checks the per-queue invariants, returning a description of the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        for (i, q) in self.queues.iter().enumerate() {
            if q.backoff_counter > q.current_cw {
                return Err(format!("queue {i}: backoff {} > cw {}", q.backoff_counter, q.current_cw));
            }
            if q.current_cw < q.params.cw_min || q.current_cw > q.params.cw_max {
                return Err(format!(
                    "queue {i}: cw {} outside [{}, {}]",
                    q.current_cw, q.params.cw_min, q.params.cw_max
                ));
            }
            if q.retry_count > self.retry_limit {
                return Err(format!("queue {i}: retry {} > limit", q.retry_count));
            }
        }
        Ok(())
    }
}
