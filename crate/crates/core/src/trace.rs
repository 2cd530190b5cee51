//! Analyses of packet traces: rate mix, busy intervals and how much of a busy
//! interval's throughput went to its heaviest user.

use std::collections::{BTreeMap, HashMap};
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{DataRate, Direction, NodeId};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace record {line}: {message}")]
    BadRecord { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const TRACE_HEADER: [&str; 6] = [
    "timestamp_us",
    "node_id",
    "direction",
    "bytes",
    "rate_mbps",
    "retries",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub timestamp_us: u64,
    pub node_id: NodeId,
    pub direction: Direction,
    pub bytes: u32,
    #[serde(rename = "rate_mbps")]
    pub rate: DataRate,
    #[serde(default)]
    pub retries: u32,
}

/// Reads a trace CSV. The `retries` column may be omitted.
pub fn read_trace<R: io::Read>(reader: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<TraceRecord>() {
        let r = row.map_err(|e| TraceError::BadRecord {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if r.bytes == 0 {
            return Err(TraceError::BadRecord {
                line: out.len() as u64 + 2,
                message: "bytes must be at least 1".into(),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_trace<W: io::Write>(records: &[TraceRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.timestamp_us.to_string(),
            r.node_id.to_string(),
            r.direction.to_string(),
            r.bytes.to_string(),
            r.rate.to_string(),
            r.retries.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fraction of all bytes carried at each rate.
pub fn rate_distribution(records: &[TraceRecord]) -> Result<BTreeMap<DataRate, f64>, TraceError> {
    if records.is_empty() {
        return Err(TraceError::EmptyTrace);
    }
    let mut bytes: BTreeMap<DataRate, u64> = BTreeMap::new();
    for r in records {
        *bytes.entry(r.rate).or_default() += u64::from(r.bytes);
    }
    let total: u64 = bytes.values().sum();
    Ok(bytes
        .into_iter()
        .map(|(rate, b)| (rate, b as f64 / total as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start_us: u64,
    pub end_us: u64,
    pub throughput_mbps: f64,
}

pub const DEFAULT_BUSY_THRESHOLD_MBPS: f64 = 4.0;
pub const DEFAULT_BUSY_WINDOW_US: u64 = 1_000_000;

/// Aligned windows `[k*w, (k+1)*w)` whose traffic reaches `threshold_mbps`.
pub fn busy_intervals(
    records: &[TraceRecord],
    threshold_mbps: f64,
    window_us: u64,
) -> Vec<Interval> {
    assert!(window_us > 0, "window must be positive");
    let mut bytes: BTreeMap<u64, u64> = BTreeMap::new();
    for r in records {
        *bytes.entry(r.timestamp_us / window_us).or_default() += u64::from(r.bytes);
    }
    bytes
        .into_iter()
        .filter_map(|(k, b)| {
            let mbps = (b * 8) as f64 / window_us as f64;
            (mbps >= threshold_mbps).then_some(Interval {
                start_us: k * window_us,
                end_us: (k + 1) * window_us,
                throughput_mbps: mbps,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaviestUser {
    pub interval: Interval,
    pub node_id: Option<NodeId>,
    pub fraction: f64,
}

/// For each interval, the largest per-node share of the bytes sent inside it.
/// Ties go to the smallest node id. An interval without traffic yields 0.
pub fn heaviest_user_fraction(
    records: &[TraceRecord],
    intervals: &[Interval],
) -> Vec<HeaviestUser> {
    intervals
        .iter()
        .map(|iv| {
            let mut per_node: HashMap<&NodeId, u64> = HashMap::new();
            for r in records
                .iter()
                .filter(|r| r.timestamp_us >= iv.start_us && r.timestamp_us < iv.end_us)
            {
                *per_node.entry(&r.node_id).or_default() += u64::from(r.bytes);
            }
            let total: u64 = per_node.values().sum();
            let top = per_node
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(a.0)));
            match top {
                Some((id, b)) if total > 0 => HeaviestUser {
                    interval: *iv,
                    node_id: Some(id.clone()),
                    fraction: b as f64 / total as f64,
                },
                _ => HeaviestUser {
                    interval: *iv,
                    node_id: None,
                    fraction: 0.0,
                },
            }
        })
        .collect()
}

pub fn write_rate_distribution<W: io::Write>(
    dist: &BTreeMap<DataRate, f64>,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rate_mbps", "byte_fraction"])?;
    for (rate, f) in dist {
        w.write_record([rate.to_string(), format!("{f:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_intervals<W: io::Write>(intervals: &[Interval], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start_us", "end_us", "throughput_mbps"])?;
    for iv in intervals {
        w.write_record([
            iv.start_us.to_string(),
            iv.end_us.to_string(),
            format!("{:.4}", iv.throughput_mbps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_heaviest<W: io::Write>(rows: &[HeaviestUser], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["start_us", "end_us", "node_id", "heaviest_fraction"])?;
    for h in rows {
        w.write_record([
            h.interval.start_us.to_string(),
            h.interval.end_us.to_string(),
            h.node_id
                .as_ref()
                .map(|n| n.to_string())
                .unwrap_or_default(),
            format!("{:.6}", h.fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}
