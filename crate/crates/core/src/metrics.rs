//! Fairness and efficiency measures over a simulated event log.

use std::io;

use thiserror::Error;

use crate::mac::FrameKind;
use crate::node::NodeId;
use crate::sim::{EventLog, SimOutput};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("window start {t1_us} is not before end {t2_us}")]
    BadWindow { t1_us: u64, t2_us: u64 },
    #[error("task source of node {0} did not complete")]
    IncompleteTasks(NodeId),
    #[error("node {0} does not run a task source")]
    NotATask(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeWindow {
    pub id: NodeId,
    pub occupancy_us: u64,
    pub delivered_bytes: u64,
    /// Fraction of the window this node held the channel.
    pub alpha_time: f64,
    /// This node's fraction of all bytes delivered in the window.
    pub alpha_throughput: f64,
    pub throughput_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowMetrics {
    pub t1_us: u64,
    pub t2_us: u64,
    pub nodes: Vec<NodeWindow>,
    pub aggr_throughput_mbps: f64,
    /// No transmission overlapped the window. All other fields are zero.
    pub empty: bool,
}

impl WindowMetrics {
    pub fn alpha_time(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.alpha_time).collect()
    }

    pub fn alpha_throughput(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.alpha_throughput).collect()
    }

    pub fn throughputs(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.throughput_mbps).collect()
    }

    pub fn node(&self, id: &str) -> Option<&NodeWindow> {
        self.nodes.iter().find(|n| n.id.as_str() == id)
    }
}

pub const WINDOW_HEADER: [&str; 9] = [
    "t1_us",
    "t2_us",
    "node_id",
    "occupancy_us",
    "delivered_bytes",
    "alpha_time",
    "alpha_throughput",
    "throughput_mbps",
    "aggr_throughput_mbps",
];

/// Measures `[t1_us, t2_us)`.
///
/// Occupancy is clipped to the window. A data frame's payload counts toward
/// the window in which its transmission finished; transport acks use airtime
/// but carry no goodput.
pub fn window_metrics(
    log: &EventLog,
    t1_us: u64,
    t2_us: u64,
) -> Result<WindowMetrics, MetricsError> {
    if t1_us >= t2_us {
        return Err(MetricsError::BadWindow { t1_us, t2_us });
    }
    let mut occ = vec![0u64; log.nodes.len()];
    let mut bytes = vec![0u64; log.nodes.len()];
    let mut any = false;
    for r in &log.records {
        let Some(i) = log.nodes.iter().position(|id| id == &r.node_id) else {
            continue;
        };
        let (s, e) = (r.time_us, r.end_us());
        let lo = s.max(t1_us);
        let hi = e.min(t2_us);
        if hi > lo {
            occ[i] += hi - lo;
            any = true;
        }
        if r.delivered && r.kind == FrameKind::Data && e > t1_us && e <= t2_us {
            bytes[i] += u64::from(r.bytes);
            any = true;
        }
    }
    let span = (t2_us - t1_us) as f64;
    let total_bytes: u64 = bytes.iter().sum();
    let nodes = log
        .nodes
        .iter()
        .enumerate()
        .map(|(i, id)| NodeWindow {
            id: id.clone(),
            occupancy_us: occ[i],
            delivered_bytes: bytes[i],
            alpha_time: occ[i] as f64 / span,
            alpha_throughput: if total_bytes == 0 {
                0.0
            } else {
                bytes[i] as f64 / total_bytes as f64
            },
            throughput_mbps: bytes[i] as f64 * 8.0 / span,
        })
        .collect();
    Ok(WindowMetrics {
        t1_us,
        t2_us,
        nodes,
        aggr_throughput_mbps: total_bytes as f64 * 8.0 / span,
        empty: !any,
    })
}

pub fn write_window_csv<W: io::Write>(windows: &[WindowMetrics], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(WINDOW_HEADER)?;
    for m in windows {
        for n in &m.nodes {
            w.write_record([
                m.t1_us.to_string(),
                m.t2_us.to_string(),
                n.id.to_string(),
                n.occupancy_us.to_string(),
                n.delivered_bytes.to_string(),
                format!("{:.6}", n.alpha_time),
                format!("{:.6}", n.alpha_throughput),
                format!("{:.4}", n.throughput_mbps),
                format!("{:.4}", m.aggr_throughput_mbps),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskReport {
    pub completion_time_us: Vec<(NodeId, u64)>,
    pub avg_task_time_us: f64,
    pub final_task_time_us: u64,
}

/// Completion-time summary of a run in which every node carried a task.
pub fn task_report(out: &SimOutput) -> Result<TaskReport, MetricsError> {
    let mut times = Vec::with_capacity(out.nodes.len());
    for n in &out.nodes {
        match n.completion_time_us {
            Some(t) if n.done => times.push((n.id.clone(), t)),
            _ => return Err(MetricsError::IncompleteTasks(n.id.clone())),
        }
    }
    let final_task_time_us = times.iter().map(|(_, t)| *t).max().unwrap_or(0);
    let avg_task_time_us = if times.is_empty() {
        0.0
    } else {
        times.iter().map(|(_, t)| *t as f64).sum::<f64>() / times.len() as f64
    };
    Ok(TaskReport {
        completion_time_us: times,
        avg_task_time_us,
        final_task_time_us,
    })
}
