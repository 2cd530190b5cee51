//! Closed-form channel shares and throughputs.
//!
//! Everything is driven by a [`BaselineTable`]: γ(d, s), the total goodput
//! that a population of identical nodes using rate `d` and packet size `s`
//! achieves. Given γ for every node, DCF-style allocation (one frame per node
//! per round) and time-based allocation (equal occupancy time per node) both
//! have closed forms.

use std::collections::BTreeMap;
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::{DataRate, NodeId, NodeSpec};

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("no baseline throughput for {rate} Mbps / {packet_bytes} B; calibrate first")]
    MissingEntry { rate: DataRate, packet_bytes: u32 },
    #[error(
        "baseline throughput {gamma} Mbps for {rate} Mbps / {packet_bytes} B must lie in (0, rate)"
    )]
    InvalidGamma {
        rate: DataRate,
        packet_bytes: u32,
        gamma: f64,
    },
    #[error("baseline table is not monotone: {0}")]
    NotMonotone(String),
    #[error("at least one node is required")]
    NoNodes,
    #[error("baseline table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Measured or calibrated baseline throughputs keyed by (rate, packet size).
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTable {
    entries: BTreeMap<(DataRate, u32), f64>,
    provenance: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct BaselineRow {
    rate_mbps: DataRate,
    packet_bytes: u32,
    gamma_mbps: f64,
}

impl BaselineTable {
    pub fn new(provenance: impl Into<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            provenance: provenance.into(),
        }
    }

    /// Two-node, 1500-byte TCP goodput measured on an 802.11b testbed.
    pub fn reference_80211b() -> Self {
        let mut table = Self::new("reference-80211b");
        for (mbps, gamma) in [(11.0, 5.189), (5.5, 3.327), (2.0, 1.493), (1.0, 0.806)] {
            table
                .insert(DataRate::from_mbps(mbps).unwrap(), 1500, gamma)
                .expect("reference values are valid");
        }
        table
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DataRate, u32, f64)> + '_ {
        self.entries.iter().map(|(&(r, s), &g)| (r, s, g))
    }

    /// Inserts or replaces an entry. Goodput must be positive and strictly
    /// below the PHY rate.
    pub fn insert(
        &mut self,
        rate: DataRate,
        packet_bytes: u32,
        gamma_mbps: f64,
    ) -> Result<(), AnalyticError> {
        if !(gamma_mbps > 0.0 && gamma_mbps < rate.mbps()) || packet_bytes == 0 {
            return Err(AnalyticError::InvalidGamma {
                rate,
                packet_bytes,
                gamma: gamma_mbps,
            });
        }
        self.entries.insert((rate, packet_bytes), gamma_mbps);
        Ok(())
    }

    /// Exact-match lookup. There is no interpolation across rates or sizes.
    pub fn lookup(&self, rate: DataRate, packet_bytes: u32) -> Result<f64, AnalyticError> {
        self.entries
            .get(&(rate, packet_bytes))
            .copied()
            .ok_or(AnalyticError::MissingEntry { rate, packet_bytes })
    }

    /// Checks that γ strictly increases with rate at fixed size and with size
    /// at fixed rate.
    pub fn check_monotone(&self) -> Result<(), AnalyticError> {
        let mut by_size: BTreeMap<u32, Vec<(DataRate, f64)>> = BTreeMap::new();
        let mut by_rate: BTreeMap<DataRate, Vec<(u32, f64)>> = BTreeMap::new();
        for (rate, size, gamma) in self.iter() {
            by_size.entry(size).or_default().push((rate, gamma));
            by_rate.entry(rate).or_default().push((size, gamma));
        }
        for (size, row) in &by_size {
            if let Some(w) = row.windows(2).find(|w| w[1].1 <= w[0].1) {
                return Err(AnalyticError::NotMonotone(format!(
                    "at {size} B, γ({}) = {} ≥ γ({}) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        for (rate, col) in &by_rate {
            if let Some(w) = col.windows(2).find(|w| w[1].1 <= w[0].1) {
                return Err(AnalyticError::NotMonotone(format!(
                    "at {rate} Mbps, γ({} B) = {} ≥ γ({} B) = {}",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }

    /// Writes `rate_mbps,packet_bytes,gamma_mbps` CSV.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<(), AnalyticError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rate_mbps", "packet_bytes", "gamma_mbps"])?;
        for (rate, packet_bytes, gamma) in self.iter() {
            w.write_record([
                rate.to_string(),
                packet_bytes.to_string(),
                gamma.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(
        reader: R,
        provenance: impl Into<String>,
    ) -> Result<Self, AnalyticError> {
        let mut table = Self::new(provenance);
        let mut r = csv::Reader::from_reader(reader);
        for row in r.deserialize() {
            let row: BaselineRow = row?;
            table.insert(row.rate_mbps, row.packet_bytes, row.gamma_mbps)?;
        }
        Ok(table)
    }
}

/// Throughput-based (DCF) or time-based allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Throughput-based fairness: every node gets one transmission opportunity per round.
    Rf,
    /// Time-based fairness: every node gets an equal share of channel occupancy time.
    Tf,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Rf => "RF",
            Regime::Tf => "TF",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeAllocation {
    pub id: NodeId,
    /// Fraction of channel occupancy time, T(i).
    pub share: f64,
    pub throughput_mbps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    pub regime: Regime,
    pub nodes: Vec<NodeAllocation>,
    pub total_mbps: f64,
}

impl AllocationReport {
    pub fn shares(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.share).collect()
    }

    pub fn throughputs(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.throughput_mbps).collect()
    }
}

/// A node reduced to what the closed forms need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub packet_bytes: f64,
    pub gamma_mbps: f64,
}

/// DCF shares and throughputs from raw demands:
/// T(i) = (s_i/γ_i) / Σ_j (s_j/γ_j) and R(i) = s_i / Σ_j (s_j/γ_j).
pub fn dcf_allocation(demands: &[Demand]) -> (Vec<f64>, Vec<f64>) {
    let round: f64 = demands.iter().map(|d| d.packet_bytes / d.gamma_mbps).sum();
    demands
        .iter()
        .map(|d| {
            (
                d.packet_bytes / d.gamma_mbps / round,
                d.packet_bytes / round,
            )
        })
        .unzip()
}

/// Time-based throughputs R'(i) = γ_i / n.
pub fn tf_allocation(gammas: &[f64]) -> Vec<f64> {
    let n = gammas.len() as f64;
    gammas.iter().map(|g| g / n).collect()
}

fn demands(nodes: &[NodeSpec], table: &BaselineTable) -> Result<Vec<Demand>, AnalyticError> {
    if nodes.is_empty() {
        return Err(AnalyticError::NoNodes);
    }
    nodes
        .iter()
        .map(|n| {
            Ok(Demand {
                packet_bytes: n.packet_bytes as f64,
                gamma_mbps: table.lookup(n.rate, n.packet_bytes)?,
            })
        })
        .collect()
}

/// Fraction of channel time each node occupies when DCF gives every node one
/// frame per round.
pub fn dcf_shares(nodes: &[NodeSpec], table: &BaselineTable) -> Result<Vec<f64>, AnalyticError> {
    Ok(dcf_allocation(&demands(nodes, table)?).0)
}

pub fn dcf_throughputs(
    nodes: &[NodeSpec],
    table: &BaselineTable,
) -> Result<AllocationReport, AnalyticError> {
    let (shares, rates) = dcf_allocation(&demands(nodes, table)?);
    Ok(report(Regime::Rf, nodes, shares, rates))
}

pub fn tf_throughputs(
    nodes: &[NodeSpec],
    table: &BaselineTable,
) -> Result<AllocationReport, AnalyticError> {
    let gammas: Vec<f64> = demands(nodes, table)?
        .iter()
        .map(|d| d.gamma_mbps)
        .collect();
    let share = 1.0 / nodes.len() as f64;
    Ok(report(
        Regime::Tf,
        nodes,
        vec![share; nodes.len()],
        tf_allocation(&gammas),
    ))
}

fn report(
    regime: Regime,
    nodes: &[NodeSpec],
    shares: Vec<f64>,
    throughputs: Vec<f64>,
) -> AllocationReport {
    let total_mbps = throughputs.iter().sum();
    AllocationReport {
        regime,
        nodes: nodes
            .iter()
            .zip(shares.into_iter().zip(throughputs))
            .map(|(n, (share, throughput_mbps))| NodeAllocation {
                id: n.id.clone(),
                share,
                throughput_mbps,
            })
            .collect(),
        total_mbps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeComparison {
    pub id: NodeId,
    pub rate: DataRate,
    /// TF throughput minus RF throughput.
    pub delta_mbps: f64,
    /// γ_i / n: what the node gets when every node uses its rate and size.
    pub single_rate_mbps: f64,
    /// Whether the TF throughput equals `single_rate_mbps` (within 1e-9).
    pub matches_single_rate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rf: AllocationReport,
    pub tf: AllocationReport,
    /// R'(I) / R(I) − 1.
    pub improvement: f64,
    pub nodes: Vec<NodeComparison>,
}

pub fn compare_regimes(
    nodes: &[NodeSpec],
    table: &BaselineTable,
) -> Result<ComparisonReport, AnalyticError> {
    let uniform = demands(nodes, table)?.windows(2).all(|w| w[0] == w[1]);
    let rf = dcf_throughputs(nodes, table)?;
    let tf = tf_throughputs(nodes, table)?;
    let n = nodes.len() as f64;
    let per_node = nodes
        .iter()
        .zip(rf.nodes.iter().zip(&tf.nodes))
        .map(|(spec, (r, t))| {
            let single_rate_mbps = table.lookup(spec.rate, spec.packet_bytes)? / n;
            Ok(NodeComparison {
                id: spec.id.clone(),
                rate: spec.rate,
                delta_mbps: t.throughput_mbps - r.throughput_mbps,
                single_rate_mbps,
                matches_single_rate: (t.throughput_mbps - single_rate_mbps).abs() <= 1e-9,
            })
        })
        .collect::<Result<Vec<_>, AnalyticError>>()?;
    // Harmonic and arithmetic means coincide for identical nodes; avoid rounding noise.
    let improvement = if uniform {
        0.0
    } else {
        tf.total_mbps / rf.total_mbps - 1.0
    };
    Ok(ComparisonReport {
        rf,
        tf,
        improvement,
        nodes: per_node,
    })
}

/// |α_i − α_j| for two achieved portions of a shared resource.
pub fn fairness_gap(alpha_i: f64, alpha_j: f64) -> f64 {
    (alpha_i - alpha_j).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(m: f64) -> DataRate {
        DataRate::from_mbps(m).unwrap()
    }

    fn nodes(rates: &[f64]) -> Vec<NodeSpec> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &r)| NodeSpec::new(format!("n{}", i + 1), rate(r), 1500))
            .collect()
    }

    #[test]
    fn lookup_is_exact_match() {
        let t = BaselineTable::reference_80211b();
        assert_eq!(t.lookup(rate(11.0), 1500).unwrap(), 5.189);
        assert_eq!(t.lookup(rate(1.0), 1500).unwrap(), 0.806);
        assert!(matches!(
            t.lookup(rate(3.0), 1500),
            Err(AnalyticError::MissingEntry { .. })
        ));
        assert!(t.lookup(rate(11.0), 1499).is_err());
        t.check_monotone().unwrap();
    }

    #[test]
    fn insert_rejects_goodput_above_rate() {
        let mut t = BaselineTable::new("test");
        assert!(t.insert(rate(1.0), 1500, 1.0).is_err());
        assert!(t.insert(rate(1.0), 1500, 0.0).is_err());
        assert!(t.insert(rate(1.0), 1500, 0.9).is_ok());
    }

    #[test]
    fn non_monotone_table_detected() {
        let mut t = BaselineTable::new("test");
        t.insert(rate(1.0), 1500, 0.9).unwrap();
        t.insert(rate(2.0), 1500, 0.8).unwrap();
        assert!(t.check_monotone().is_err());
        let mut t = BaselineTable::new("test");
        t.insert(rate(11.0), 1500, 5.0).unwrap();
        t.insert(rate(11.0), 500, 5.5).unwrap();
        assert!(t.check_monotone().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = BaselineTable::reference_80211b();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rate_mbps,packet_bytes,gamma_mbps\n"));
        assert!(text.contains("5.5,1500,3.327\n"));
        let back = BaselineTable::read_csv(&buf[..], "reference-80211b").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn symmetric_pair_splits_evenly() {
        let s = dcf_shares(&nodes(&[11.0, 11.0]), &BaselineTable::reference_80211b()).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn dcf_shares_one_vs_eleven() {
        // oracle: (1/0.806) / (1/0.806 + 1/5.189)
        let a = 1.0 / 0.806;
        let b = 1.0 / 5.189;
        let s = dcf_shares(&nodes(&[1.0, 11.0]), &BaselineTable::reference_80211b()).unwrap();
        assert!((s[0] - a / (a + b)).abs() < 1e-12);
        assert!((s[0] - 0.866).abs() < 5e-4);
        assert!((s[1] - 0.134).abs() < 5e-4);
        assert!((s[0] / s[1] - 6.44).abs() < 0.01);
    }

    #[test]
    fn dcf_shares_three_rates() {
        let inv = [1.0 / 0.806, 1.0 / 1.493, 1.0 / 5.189];
        let sum: f64 = inv.iter().sum();
        let s = dcf_shares(
            &nodes(&[1.0, 2.0, 11.0]),
            &BaselineTable::reference_80211b(),
        )
        .unwrap();
        for (got, x) in s.iter().zip(inv) {
            assert!((got - x / sum).abs() < 1e-12);
        }
        assert!((s[0] - 0.5899).abs() < 1e-4);
        assert!((s[1] - 0.3185).abs() < 1e-4);
        assert!((s[2] - 0.0916).abs() < 1e-4);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dcf_throughputs_four_node_mix() {
        let r = dcf_throughputs(
            &nodes(&[1.0, 2.0, 11.0, 11.0]),
            &BaselineTable::reference_80211b(),
        )
        .unwrap();
        for n in &r.nodes {
            assert!((n.throughput_mbps - 0.436).abs() < 1e-3);
        }
        assert!((r.total_mbps - 1.742).abs() < 5e-3);
        assert_eq!(r.regime, Regime::Rf);
    }

    #[test]
    fn single_node_gets_gamma() {
        let t = BaselineTable::reference_80211b();
        let r = dcf_throughputs(&nodes(&[11.0]), &t).unwrap();
        assert!((r.total_mbps - 5.189).abs() < 1e-12);
        let r = tf_throughputs(&nodes(&[11.0]), &t).unwrap();
        assert!((r.total_mbps - 5.189).abs() < 1e-12);
    }

    #[test]
    fn one_vs_eleven_both_regimes() {
        let t = BaselineTable::reference_80211b();
        let rf = dcf_throughputs(&nodes(&[1.0, 11.0]), &t).unwrap();
        let each = 1.0 / (1.0 / 0.806 + 1.0 / 5.189);
        assert!((rf.nodes[0].throughput_mbps - each).abs() < 1e-12);
        assert!((each - 0.698).abs() < 5e-4);
        assert!((rf.total_mbps - 1.395).abs() < 5e-4);
        let tf = tf_throughputs(&nodes(&[1.0, 11.0]), &t).unwrap();
        assert!((tf.nodes[0].throughput_mbps - 0.403).abs() < 1e-9);
        assert!((tf.nodes[1].throughput_mbps - 2.5945).abs() < 1e-9);
        assert!((tf.total_mbps - 2.9975).abs() < 1e-9);
        let cmp = compare_regimes(&nodes(&[1.0, 11.0]), &t).unwrap();
        assert!((cmp.improvement - (2.9975 / (2.0 * each) - 1.0)).abs() < 1e-12);
        assert!((cmp.improvement - 1.15).abs() < 0.01);
    }

    #[test]
    fn tf_four_node_mix_and_improvement() {
        let t = BaselineTable::reference_80211b();
        let ns = nodes(&[1.0, 2.0, 11.0, 11.0]);
        let tf = tf_throughputs(&ns, &t).unwrap();
        let expected = [0.202, 0.373, 1.30, 1.30];
        for (n, e) in tf.nodes.iter().zip(expected) {
            assert!((n.throughput_mbps - e).abs() < 5e-3, "{n:?}");
            assert_eq!(n.share, 0.25);
        }
        assert!((tf.total_mbps - 3.17).abs() < 0.01);
        let cmp = compare_regimes(&ns, &t).unwrap();
        assert!((cmp.improvement - 0.82).abs() < 0.01);
        assert!(cmp.nodes.iter().all(|n| n.matches_single_rate));
        assert!(cmp.nodes[0].delta_mbps < 0.0 && cmp.nodes[3].delta_mbps > 0.0);
    }

    #[test]
    fn identical_nodes_have_zero_improvement() {
        let cmp =
            compare_regimes(&nodes(&[2.0, 2.0, 2.0]), &BaselineTable::reference_80211b()).unwrap();
        assert_eq!(cmp.improvement, 0.0);
    }

    #[test]
    fn missing_entry_propagates() {
        let t = BaselineTable::reference_80211b();
        let mut ns = nodes(&[1.0, 11.0]);
        ns[1].packet_bytes = 576;
        assert!(dcf_shares(&ns, &t).is_err());
        assert!(tf_throughputs(&ns, &t).is_err());
        assert!(compare_regimes(&ns, &t).is_err());
        assert!(matches!(dcf_shares(&[], &t), Err(AnalyticError::NoNodes)));
    }

    #[test]
    fn fairness_gap_values() {
        assert_eq!(fairness_gap(0.5, 0.5), 0.0);
        let s = dcf_shares(&nodes(&[1.0, 11.0]), &BaselineTable::reference_80211b()).unwrap();
        assert!((fairness_gap(s[0], s[1]) - 0.732).abs() < 1e-3);
        assert!((fairness_gap(0.2, 0.7) - 0.5).abs() < 1e-12);
    }
}
