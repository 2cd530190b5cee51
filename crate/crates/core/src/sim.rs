//! Deterministic discrete-event simulation of one AP cell.
//!
//! The access point and every client with uplink traffic contend for a single
//! shared channel. Contention is settled by [`mac::contend`]; the winner sends
//! one frame via [`mac::transmit`]. While the channel is busy nothing else can
//! start, so occupancy intervals never overlap.
//!
//! Under [`SchedulerKind::Dcf`] the AP serves its per-node queues round-robin
//! and clients contend whenever they are backlogged. Under
//! [`SchedulerKind::Tbr`] the AP dequeues through a [`TbrScheduler`] and a
//! client whose tokens are exhausted sits out contention until refilled.
//!
//! Randomness comes from a single ChaCha8 stream seeded with the scenario's
//! 64-bit seed (`rand_chacha::ChaCha8Rng::seed_from_u64`), consumed in a
//! fixed order: one draw per contention round with two or more contenders,
//! then per attempt a backoff draw followed by a loss draw when the loss rate
//! is positive. The same scenario and seed therefore always produce the same
//! event log.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mac::{self, Frame, FrameKind, TimingConstants, TransferOutcome};
use crate::node::{DataRate, Direction, NodeId, NodeSpec};
use crate::queue::FairQueues;
use crate::scenario::{Scenario, ScenarioError, SchedulerKind};
use crate::tbr::{SnapshotRow, TbrScheduler};
use crate::workload::{Source, SourceSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    InvalidScenario(#[from] ScenarioError),
}

/// One frame's trip over the channel. The frame occupied
/// `[time_us, time_us + occupancy_us)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time_us: u64,
    pub node_id: NodeId,
    pub direction: Direction,
    pub bytes: u32,
    pub rate: DataRate,
    pub attempts: u32,
    pub occupancy_us: u64,
    pub delivered: bool,
    pub kind: FrameKind,
}

impl EventRecord {
    pub fn end_us(&self) -> u64 {
        self.time_us + self.occupancy_us
    }
}

pub const EVENT_LOG_HEADER: [&str; 8] = [
    "time_us",
    "node_id",
    "direction",
    "bytes",
    "rate_mbps",
    "attempts",
    "occupancy_us",
    "delivered",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    /// Node ids in scenario order.
    pub nodes: Vec<NodeId>,
    pub records: Vec<EventRecord>,
}

impl EventLog {
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(EVENT_LOG_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.time_us.to_string(),
                r.node_id.to_string(),
                r.direction.to_string(),
                r.bytes.to_string(),
                r.rate.to_string(),
                r.attempts.to_string(),
                r.occupancy_us.to_string(),
                r.delivered.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Occupancy per node over the whole log, in scenario order.
    pub fn occupancy_by_node(&self) -> Vec<u64> {
        self.nodes
            .iter()
            .map(|id| {
                self.records
                    .iter()
                    .filter(|r| &r.node_id == id)
                    .map(|r| r.occupancy_us)
                    .sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    pub id: NodeId,
    pub frames_delivered: u64,
    pub delivered_bytes: u64,
    /// Frames lost to retry exhaustion.
    pub mac_drops: u64,
    pub done: bool,
    pub completion_time_us: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub scheduler: SchedulerKind,
    pub log: EventLog,
    /// Regulator state before every adjustment and at the end (TBR only).
    pub snapshots: Vec<SnapshotRow>,
    pub nodes: Vec<NodeStats>,
    /// Whether the run ended because every task source finished.
    pub all_tasks_done: bool,
    /// Measurement horizon: the duration, or the last completion when every
    /// source was a finished task.
    pub end_time_us: u64,
}

impl SimOutput {
    pub fn stats(&self, id: &NodeId) -> Option<&NodeStats> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    /// Goodput of each node over `[0, end_time_us]`, in Mbps.
    pub fn throughputs_mbps(&self) -> Vec<f64> {
        let horizon = self.end_time_us.max(1) as f64;
        self.nodes
            .iter()
            .map(|n| n.delivered_bytes as f64 * 8.0 / horizon)
            .collect()
    }

    pub fn total_throughput_mbps(&self) -> f64 {
        self.throughputs_mbps().iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    TxComplete,
    Fill,
    Adjust,
    SourceWake(usize),
}

enum ApQueues {
    Dcf(FairQueues),
    Tbr(TbrScheduler),
}

impl ApQueues {
    fn has_room(&self, id: &NodeId) -> bool {
        match self {
            ApQueues::Dcf(q) => q.position(id).is_some_and(|i| q.has_room(i)),
            ApQueues::Tbr(t) => t.has_room(id).unwrap_or(false),
        }
    }

    fn enqueue(&mut self, frame: Frame) -> Result<(), Frame> {
        let res = match self {
            ApQueues::Dcf(q) => q.enqueue(frame.clone()).map_err(|_| ()),
            ApQueues::Tbr(t) => t.app_tx(frame.clone()).map_err(|_| ()),
        };
        res.map_err(|_| frame)
    }

    fn has_eligible(&self) -> bool {
        match self {
            ApQueues::Dcf(q) => q.any_ready(|_| true),
            ApQueues::Tbr(t) => t.has_eligible(),
        }
    }

    fn dequeue(&mut self) -> Option<Frame> {
        match self {
            ApQueues::Dcf(q) => q.dequeue_round_robin(|_| true).map(|(_, f)| f),
            ApQueues::Tbr(t) => t.mac_tx(),
        }
    }
}

struct SimNode {
    spec: NodeSpec,
    source: Source,
    /// Client-side transmit queue.
    uplink: VecDeque<Frame>,
    mac_drops: u64,
    active: bool,
    wake_pending: Option<u64>,
}

#[derive(Clone, Copy)]
enum Contender {
    Ap,
    Client(usize),
}

struct InFlight {
    node: usize,
    frame: Frame,
    outcome: TransferOutcome,
}

/// A single run. Build it with [`Simulator::new`], optionally adjust the
/// regulator through [`Simulator::tbr_mut`], then call [`Simulator::run`].
pub struct Simulator {
    timing: TimingConstants,
    scheduler: SchedulerKind,
    duration_us: u64,
    fill_period_us: u64,
    adjust_period_us: u64,
    blind_uplink: bool,
    client_capacity: usize,
    nodes: Vec<SimNode>,
    ap: ApQueues,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    events: BinaryHeap<Reverse<(u64, u64, EventKind)>>,
    in_flight: Option<InFlight>,
    last_fill: u64,
    log: EventLog,
    snapshots: Vec<SnapshotRow>,
    all_tasks: bool,
    // scratch buffer for contention rounds
    contenders: Vec<Contender>,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let n = scenario.nodes.len();
        let ap = match scenario.scheduler {
            SchedulerKind::Dcf => {
                let mut q = FairQueues::new(scenario.tbr.total_buffer_frames);
                for node in &scenario.nodes {
                    q.add(node.id.clone());
                }
                ApQueues::Dcf(q)
            }
            SchedulerKind::Tbr => {
                let mut t = TbrScheduler::new(scenario.tbr.clone());
                for node in &scenario.nodes {
                    t.associate(node.id.clone())
                        .expect("validated scenario has unique ids");
                }
                ApQueues::Tbr(t)
            }
        };
        let nodes = scenario
            .nodes
            .iter()
            .map(|spec| SimNode {
                source: Source::new(
                    spec.source.clone(),
                    spec.id.clone(),
                    spec.rate,
                    spec.direction,
                    spec.packet_bytes,
                ),
                spec: spec.clone(),
                uplink: VecDeque::new(),
                mac_drops: 0,
                active: true,
                wake_pending: None,
            })
            .collect();
        let all_tasks = scenario
            .nodes
            .iter()
            .all(|n| matches!(n.source, SourceSpec::Task { .. }));
        Ok(Self {
            timing: scenario.timing.clone(),
            scheduler: scenario.scheduler,
            duration_us: scenario.duration_us,
            fill_period_us: scenario.tbr.fill_period_us,
            adjust_period_us: scenario.tbr.adjust_period_us,
            blind_uplink: scenario.tbr.blind_uplink,
            client_capacity: (scenario.tbr.total_buffer_frames / n).max(1),
            nodes,
            ap,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            now: 0,
            seq: 0,
            events: BinaryHeap::new(),
            in_flight: None,
            last_fill: 0,
            log: EventLog {
                nodes: scenario.nodes.iter().map(|n| n.id.clone()).collect(),
                records: Vec::new(),
            },
            snapshots: Vec::new(),
            all_tasks,
            contenders: Vec::with_capacity(n + 1),
        })
    }

    /// The regulator, when the scenario uses one.
    pub fn tbr_mut(&mut self) -> Option<&mut TbrScheduler> {
        match &mut self.ap {
            ApQueues::Tbr(t) => Some(t),
            ApQueues::Dcf(_) => None,
        }
    }

    fn schedule(&mut self, time: u64, kind: EventKind) {
        self.seq += 1;
        self.events.push(Reverse((time, self.seq, kind)));
    }

    fn tasks_finished(&self) -> bool {
        self.all_tasks && self.nodes.iter().all(|n| n.source.is_done())
    }

    pub fn run(mut self) -> SimOutput {
        if let ApQueues::Tbr(_) = self.ap {
            self.schedule(self.fill_period_us, EventKind::Fill);
            self.schedule(self.adjust_period_us, EventKind::Adjust);
        }
        for i in 0..self.nodes.len() {
            self.pump(i);
        }
        loop {
            if self.in_flight.is_none() && self.now < self.duration_us && !self.tasks_finished() {
                self.try_start();
            }
            let Some(&Reverse((time, _, kind))) = self.events.peek() else {
                break;
            };
            if kind != EventKind::TxComplete && (time >= self.duration_us || self.tasks_finished())
            {
                break;
            }
            self.now = time;
            while let Some(&Reverse((t, _, kind))) = self.events.peek() {
                if t != time {
                    break;
                }
                self.events.pop();
                self.handle(kind);
            }
        }
        self.finish()
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::TxComplete => self.complete(),
            EventKind::Fill => {
                let elapsed = self.now - self.last_fill;
                self.last_fill = self.now;
                if let ApQueues::Tbr(t) = &mut self.ap {
                    t.fill(elapsed);
                }
                self.schedule(self.now + self.fill_period_us, EventKind::Fill);
            }
            EventKind::Adjust => {
                if let ApQueues::Tbr(t) = &mut self.ap {
                    if !t.is_empty() {
                        self.snapshots.extend(t.snapshot(self.now));
                        t.adjust_rates(self.now);
                    }
                }
                self.schedule(self.now + self.adjust_period_us, EventKind::Adjust);
            }
            EventKind::SourceWake(i) => {
                if self.nodes[i].wake_pending == Some(self.now) {
                    self.nodes[i].wake_pending = None;
                }
                self.pump(i);
            }
        }
    }

    fn uplink_allowed(&self, i: usize) -> bool {
        match &self.ap {
            ApQueues::Dcf(_) => true,
            ApQueues::Tbr(t) => t.uplink_gate(&self.nodes[i].spec.id).unwrap_or(true),
        }
    }

    fn try_start(&mut self) {
        let mut contenders = std::mem::take(&mut self.contenders);
        contenders.clear();
        if self.ap.has_eligible() {
            contenders.push(Contender::Ap);
        }
        for i in 0..self.nodes.len() {
            if !self.nodes[i].uplink.is_empty() && self.uplink_allowed(i) {
                contenders.push(Contender::Client(i));
            }
        }
        if !contenders.is_empty() {
            let winner = contenders[mac::contend(&contenders, &mut self.rng)];
            let frame = match winner {
                Contender::Ap => self.ap.dequeue(),
                Contender::Client(i) => self.nodes[i].uplink.pop_front(),
            }
            .expect("contender has a frame");
            let node = self.index_of(&frame.owner);
            let outcome = mac::transmit(
                &frame,
                self.nodes[node].spec.loss_rate,
                &self.timing,
                self.now,
                &mut self.rng,
            );
            self.log.records.push(EventRecord {
                time_us: self.now,
                node_id: frame.owner.clone(),
                direction: frame.direction,
                bytes: frame.payload_bytes,
                rate: frame.rate,
                attempts: outcome.attempts,
                occupancy_us: outcome.occupancy_us,
                delivered: outcome.delivered,
                kind: frame.kind,
            });
            self.schedule(outcome.completion_time_us, EventKind::TxComplete);
            self.in_flight = Some(InFlight {
                node,
                frame,
                outcome,
            });
        }
        self.contenders = contenders;
    }

    fn index_of(&self, id: &NodeId) -> usize {
        self.nodes
            .iter()
            .position(|n| &n.spec.id == id)
            .expect("frame owner is a scenario node")
    }

    fn complete(&mut self) {
        let InFlight {
            node,
            frame,
            outcome,
        } = self.in_flight.take().expect("completion without a frame");
        if let ApQueues::Tbr(t) = &mut self.ap {
            let debit = if self.blind_uplink && frame.direction == Direction::Uplink {
                outcome.first_attempt_us
            } else {
                outcome.occupancy_us
            };
            if t.is_associated(&frame.owner) {
                t.complete(&frame.owner, debit, self.now)
                    .expect("associated node");
            }
        }
        let n = &mut self.nodes[node];
        if outcome.delivered {
            n.source.on_delivered(&frame, self.now);
        } else {
            n.mac_drops += 1;
            n.source.on_dropped(&frame);
        }
        if n.active && n.source.is_done() && n.uplink.is_empty() {
            n.active = false;
            let id = n.spec.id.clone();
            if let ApQueues::Tbr(t) = &mut self.ap {
                // A finished task no longer competes; the others split its share.
                let _ = t.disassociate(&id);
            }
        }
        for i in 0..self.nodes.len() {
            self.pump(i);
        }
    }

    /// Moves whatever the node's source has to offer into the right queue.
    fn pump(&mut self, i: usize) {
        if !self.nodes[i].active {
            return;
        }
        let now = self.now;
        let data_dir = self.nodes[i].spec.direction;
        for dir in [data_dir, data_dir.reverse()] {
            loop {
                let room = match dir {
                    Direction::Downlink => self.ap.has_room(&self.nodes[i].spec.id),
                    Direction::Uplink => self.nodes[i].uplink.len() < self.client_capacity,
                };
                if !room {
                    break;
                }
                let offered = if dir == data_dir {
                    self.nodes[i].source.offer(now)
                } else {
                    self.nodes[i].source.offer_ack(now)
                };
                let Some(frame) = offered else { break };
                match dir {
                    Direction::Downlink => {
                        if let Err(frame) = self.ap.enqueue(frame) {
                            self.nodes[i].source.on_dropped(&frame);
                            break;
                        }
                    }
                    Direction::Uplink => self.nodes[i].uplink.push_back(frame),
                }
            }
        }
        if let Some(at) = self.nodes[i].source.next_offer_time(now) {
            if self.nodes[i].wake_pending.is_none_or(|t| t > at) {
                self.nodes[i].wake_pending = Some(at);
                self.schedule(at, EventKind::SourceWake(i));
            }
        }
    }

    fn finish(mut self) -> SimOutput {
        let all_tasks_done = self.tasks_finished();
        let end_time_us = if all_tasks_done {
            self.nodes
                .iter()
                .filter_map(|n| n.source.state().completion_time_us)
                .max()
                .unwrap_or(self.now)
        } else {
            self.duration_us
        };
        if let ApQueues::Tbr(t) = &self.ap {
            self.snapshots.extend(t.snapshot(end_time_us));
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let st = n.source.state();
                NodeStats {
                    id: n.spec.id.clone(),
                    frames_delivered: st.frames_delivered,
                    delivered_bytes: n.source.delivered_bytes(),
                    mac_drops: n.mac_drops,
                    done: st.done,
                    completion_time_us: st.completion_time_us,
                }
            })
            .collect();
        SimOutput {
            scheduler: self.scheduler,
            log: self.log,
            snapshots: self.snapshots,
            nodes,
            all_tasks_done,
            end_time_us,
        }
    }
}

/// Validates and runs a scenario.
pub fn run(scenario: &Scenario) -> Result<SimOutput, SimError> {
    Ok(Simulator::new(scenario)?.run())
}
