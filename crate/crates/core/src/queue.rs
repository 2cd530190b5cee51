//! Per-node drop-tail FIFOs served round-robin, as kept by an access point.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mac::Frame;
use crate::node::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueueError {
    #[error("node {0} is not associated")]
    UnknownNode(NodeId),
    #[error("queue for node {0} is full; frame dropped")]
    QueueFull(NodeId),
}

#[derive(Debug, Clone)]
struct NodeQueue {
    id: NodeId,
    frames: VecDeque<Frame>,
    drops: u64,
}

/// One FIFO per node. The shared buffer of `total_frames` is split evenly,
/// each node getting `total_frames / n` (at least one).
#[derive(Debug, Clone)]
pub struct FairQueues {
    queues: Vec<NodeQueue>,
    total_frames: usize,
    cursor: usize,
}

impl FairQueues {
    pub fn new(total_frames: usize) -> Self {
        Self {
            queues: Vec::new(),
            total_frames,
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.queues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queues.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &NodeId> {
        self.queues.iter().map(|q| &q.id)
    }

    pub fn position(&self, id: &NodeId) -> Option<usize> {
        self.queues.iter().position(|q| &q.id == id)
    }

    pub fn id_at(&self, index: usize) -> &NodeId {
        &self.queues[index].id
    }

    /// Per-node capacity in frames.
    pub fn capacity(&self) -> usize {
        (self.total_frames / self.queues.len().max(1)).max(1)
    }

    /// Adds an empty queue. The caller guarantees `id` is new.
    pub(crate) fn add(&mut self, id: NodeId) -> usize {
        self.queues.push(NodeQueue {
            id,
            frames: VecDeque::new(),
            drops: 0,
        });
        self.queues.len() - 1
    }

    /// Removes a node's queue and returns whatever it still held.
    pub(crate) fn remove(&mut self, index: usize) -> VecDeque<Frame> {
        let q = self.queues.remove(index);
        if self.cursor > index {
            self.cursor -= 1;
        }
        if self.cursor >= self.queues.len() {
            self.cursor = 0;
        }
        q.frames
    }

    pub fn queue_len(&self, index: usize) -> usize {
        self.queues[index].frames.len()
    }

    pub fn drops(&self, index: usize) -> u64 {
        self.queues[index].drops
    }

    pub fn has_room(&self, index: usize) -> bool {
        self.queues[index].frames.len() < self.capacity()
    }

    pub fn enqueue(&mut self, frame: Frame) -> Result<(), QueueError> {
        let index = self
            .position(&frame.owner)
            .ok_or_else(|| QueueError::UnknownNode(frame.owner.clone()))?;
        if !self.has_room(index) {
            self.queues[index].drops += 1;
            return Err(QueueError::QueueFull(frame.owner));
        }
        self.queues[index].frames.push_back(frame);
        Ok(())
    }

    /// True if some nonempty queue satisfies `eligible`.
    pub fn any_ready(&self, mut eligible: impl FnMut(usize) -> bool) -> bool {
        (0..self.queues.len()).any(|i| !self.queues[i].frames.is_empty() && eligible(i))
    }

    /// Starting at the cursor, dequeues the head of the first nonempty queue
    /// that satisfies `eligible`, and moves the cursor past it.
    pub fn dequeue_round_robin(
        &mut self,
        mut eligible: impl FnMut(usize) -> bool,
    ) -> Option<(usize, Frame)> {
        let n = self.queues.len();
        for step in 0..n {
            let i = (self.cursor + step) % n;
            if !self.queues[i].frames.is_empty() && eligible(i) {
                let frame = self.queues[i].frames.pop_front()?;
                self.cursor = (i + 1) % n;
                return Some((i, frame));
            }
        }
        None
    }
}
