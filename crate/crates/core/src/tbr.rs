//! Time-based regulator.
//!
//! The regulator runs at the access point and hands every associated client
//! an airtime token bucket. One token is one microsecond of channel
//! occupancy. Buckets refill at `rate_share` tokens per microsecond of wall
//! time, and every frame to or from a client is debited from that client's
//! bucket after it completes, retransmissions included. Downlink queues are
//! served round-robin among nodes with positive tokens. Clients whose tokens
//! are exhausted are told to hold their uplink transmissions.
//!
//! Shares start equal. A periodic adjustment moves half of the largest
//! unused share to the nodes that consumed what they were given, which
//! converges towards a max-min fair allocation of channel time.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mac::Frame;
use crate::node::NodeId;
use crate::queue::{FairQueues, QueueError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TbrError {
    #[error("node {0} is already associated")]
    DuplicateAssociation(NodeId),
    #[error("node {0} is not associated")]
    UnknownNode(NodeId),
    #[error("queue for node {0} is full; frame dropped")]
    QueueFull(NodeId),
}

impl From<QueueError> for TbrError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::UnknownNode(id) => TbrError::UnknownNode(id),
            QueueError::QueueFull(id) => TbrError::QueueFull(id),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TbrConfig {
    /// Tokens granted on association. Also the default bucket size.
    pub initial_tokens_us: f64,
    pub bucket_us: f64,
    pub fill_period_us: u64,
    pub adjust_period_us: u64,
    /// A node whose unused share exceeds this is under-utilized.
    pub underuse_threshold: f64,
    /// Total AP buffer, split evenly across associated nodes.
    pub total_buffer_frames: usize,
    /// Debit uplink frames with their first attempt only, as an AP that
    /// cannot see client retries would.
    pub blind_uplink: bool,
}

impl Default for TbrConfig {
    fn default() -> Self {
        Self {
            initial_tokens_us: 20_000.0,
            bucket_us: 20_000.0,
            fill_period_us: 1_000,
            adjust_period_us: 2_000_000,
            underuse_threshold: 0.01,
            total_buffer_frames: 100,
            blind_uplink: false,
        }
    }
}

impl TbrConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.initial_tokens_us.is_nan() || self.initial_tokens_us <= 0.0 {
            return Err("initial_tokens_us must be positive".into());
        }
        if self.bucket_us.is_nan() || self.bucket_us <= 0.0 {
            return Err("bucket_us must be positive".into());
        }
        if self.fill_period_us == 0 || self.adjust_period_us == 0 {
            return Err("fill and adjust periods must be positive".into());
        }
        if !(self.underuse_threshold > 0.0 && self.underuse_threshold < 1.0) {
            return Err("underuse_threshold must lie in (0, 1)".into());
        }
        if self.total_buffer_frames == 0 {
            return Err("total_buffer_frames must be positive".into());
        }
        Ok(())
    }
}

/// Token bucket and usage accounting for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenState {
    /// May be negative: eligibility is checked before a frame goes out and
    /// the debit happens after it completes.
    pub tokens_us: f64,
    pub bucket_us: f64,
    /// Fraction of wall-clock channel time granted to this node.
    pub rate_share: f64,
    /// Occupancy consumed since `start_us`.
    pub actual_us: f64,
    pub start_us: u64,
}

/// Result of one rate adjustment.
#[derive(Debug, Clone, PartialEq)]
pub enum Adjustment {
    /// No under-utilized node, or nobody to give its share to.
    Unchanged,
    Moved {
        from: NodeId,
        amount: f64,
        to: Vec<NodeId>,
    },
}

/// One row of the per-period state export.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub time_us: u64,
    pub node_id: NodeId,
    pub rate_share: f64,
    pub tokens_us: f64,
    pub actual_us: f64,
    pub queue_len: usize,
    pub drops: u64,
}

pub const SNAPSHOT_HEADER: [&str; 7] = [
    "time_us",
    "node_id",
    "rate_share",
    "tokens_us",
    "actual_us",
    "queue_len",
    "drops",
];

#[derive(Debug, Clone)]
pub struct TbrScheduler {
    config: TbrConfig,
    queues: FairQueues,
    tokens: Vec<TokenState>,
}

impl TbrScheduler {
    pub fn new(config: TbrConfig) -> Self {
        Self {
            queues: FairQueues::new(config.total_buffer_frames),
            config,
            tokens: Vec::new(),
        }
    }

    pub fn config(&self) -> &TbrConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_associated(&self, id: &NodeId) -> bool {
        self.queues.position(id).is_some()
    }

    fn index(&self, id: &NodeId) -> Result<usize, TbrError> {
        self.queues
            .position(id)
            .ok_or_else(|| TbrError::UnknownNode(id.clone()))
    }

    pub fn token_state(&self, id: &NodeId) -> Result<&TokenState, TbrError> {
        Ok(&self.tokens[self.index(id)?])
    }

    pub fn rate_shares(&self) -> Vec<(NodeId, f64)> {
        self.queues
            .ids()
            .cloned()
            .zip(self.tokens.iter().map(|t| t.rate_share))
            .collect()
    }

    /// Overrides the refill shares, e.g. for weighted allocations. Shares
    /// must be nonnegative and sum to one.
    pub fn set_rate_share(&mut self, id: &NodeId, share: f64) -> Result<(), TbrError> {
        let i = self.index(id)?;
        self.tokens[i].rate_share = share;
        Ok(())
    }

    fn rebalance_equal(&mut self) {
        let share = 1.0 / self.tokens.len() as f64;
        for t in &mut self.tokens {
            t.rate_share = share;
        }
    }

    /// A node joins: fresh bucket, empty queue, all shares reset to 1/n.
    pub fn associate(&mut self, id: NodeId) -> Result<(), TbrError> {
        if self.is_associated(&id) {
            return Err(TbrError::DuplicateAssociation(id));
        }
        self.queues.add(id);
        self.tokens.push(TokenState {
            tokens_us: self.config.initial_tokens_us,
            bucket_us: self.config.bucket_us.max(self.config.initial_tokens_us),
            rate_share: 0.0,
            actual_us: 0.0,
            start_us: 0,
        });
        self.rebalance_equal();
        Ok(())
    }

    /// A node leaves the active set: its queue is discarded (returned to the
    /// caller) and the remaining nodes go back to equal shares.
    pub fn disassociate(&mut self, id: &NodeId) -> Result<VecDeque<Frame>, TbrError> {
        let i = self.index(id)?;
        self.tokens.remove(i);
        let left = self.queues.remove(i);
        if !self.tokens.is_empty() {
            self.rebalance_equal();
        }
        Ok(left)
    }

    /// Refill every bucket for `elapsed_us` of wall time, capped at the bucket.
    pub fn fill(&mut self, elapsed_us: u64) {
        let elapsed = elapsed_us as f64;
        for t in &mut self.tokens {
            t.tokens_us = (t.tokens_us + elapsed * t.rate_share).min(t.bucket_us);
        }
    }

    pub fn has_room(&self, id: &NodeId) -> Result<bool, TbrError> {
        Ok(self.queues.has_room(self.index(id)?))
    }

    /// Queues a downlink frame for its destination.
    pub fn app_tx(&mut self, frame: Frame) -> Result<(), TbrError> {
        Ok(self.queues.enqueue(frame)?)
    }

    /// Whether a call to [`mac_tx`](Self::mac_tx) would release a frame.
    pub fn has_eligible(&self) -> bool {
        let tokens = &self.tokens;
        self.queues.any_ready(|i| tokens[i].tokens_us > 0.0)
    }

    /// The MAC can take a frame: round-robin over nodes that have both a
    /// backlog and positive tokens.
    pub fn mac_tx(&mut self) -> Option<Frame> {
        let tokens = &self.tokens;
        self.queues
            .dequeue_round_robin(|i| tokens[i].tokens_us > 0.0)
            .map(|(_, f)| f)
    }

    /// May the client transmit uplink right now?
    pub fn uplink_gate(&self, id: &NodeId) -> Result<bool, TbrError> {
        Ok(self.token_state(id)?.tokens_us > 0.0)
    }

    /// A frame to or from `id` finished (delivered or not) after occupying
    /// the channel for `occupancy_us`.
    pub fn complete(
        &mut self,
        id: &NodeId,
        occupancy_us: u64,
        now_us: u64,
    ) -> Result<(), TbrError> {
        let i = self.index(id)?;
        let t = &mut self.tokens[i];
        t.tokens_us -= occupancy_us as f64;
        if t.actual_us == 0.0 {
            t.start_us = now_us;
        }
        t.actual_us += occupancy_us as f64;
        Ok(())
    }

    /// Periodic share adjustment.
    ///
    /// A node's excess is its share minus the fraction of time it actually
    /// used since `start`. Nodes within the threshold are fully utilized. The
    /// under-utilized node with the largest excess gives up half of it, split
    /// evenly across the fully utilized nodes. Usage counters then reset.
    pub fn adjust_rates(&mut self, now_us: u64) -> Adjustment {
        let threshold = self.config.underuse_threshold;
        let mut fully = Vec::new();
        let mut donor: Option<(usize, f64)> = None;
        for (i, t) in self.tokens.iter().enumerate() {
            let used = if t.actual_us == 0.0 {
                0.0
            } else if now_us > t.start_us {
                t.actual_us / (now_us - t.start_us) as f64
            } else {
                t.rate_share
            };
            let excess = t.rate_share - used;
            if excess <= threshold {
                fully.push(i);
            } else if donor.is_none_or(|(_, best)| excess > best) {
                donor = Some((i, excess));
            }
        }
        let outcome = match donor {
            Some((m, excess)) if !fully.is_empty() => {
                let amount = (excess / 2.0).min(self.tokens[m].rate_share);
                self.tokens[m].rate_share -= amount;
                let each = amount / fully.len() as f64;
                for &j in &fully {
                    self.tokens[j].rate_share += each;
                }
                Adjustment::Moved {
                    from: self.queues.id_at(m).clone(),
                    amount,
                    to: fully
                        .iter()
                        .map(|&j| self.queues.id_at(j).clone())
                        .collect(),
                }
            }
            _ => Adjustment::Unchanged,
        };
        for t in &mut self.tokens {
            t.actual_us = 0.0;
        }
        outcome
    }

    pub fn snapshot(&self, time_us: u64) -> Vec<SnapshotRow> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| SnapshotRow {
                time_us,
                node_id: self.queues.id_at(i).clone(),
                rate_share: t.rate_share,
                tokens_us: t.tokens_us,
                actual_us: t.actual_us,
                queue_len: self.queues.queue_len(i),
                drops: self.queues.drops(i),
            })
            .collect()
    }
}
