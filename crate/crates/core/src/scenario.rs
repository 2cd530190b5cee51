//! Experiment description and its line-oriented file format.
//!
//! ```text
//! # 1 Mbps vs 11 Mbps downlink under the regulator
//! [sim]
//! scheduler = tbr
//! duration_us = 30000000
//! seed = 7
//!
//! [node slow]
//! rate_mbps = 1
//! packet_bytes = 1500
//! direction = downlink
//! source = saturating
//!
//! [node fast]
//! rate_mbps = 11
//! ```
//!
//! The `[sim]` section also accepts timing overrides (`slot_us`, `sifs_us`,
//! `difs_us`, `plcp_us`, `ack_bytes`, `ack_rate_mbps`, `cw_min_slots`,
//! `retry_limit`) and regulator overrides (`initial_tokens_us`, `bucket_us`,
//! `fill_period_us`, `adjust_period_us`, `underuse_threshold`,
//! `total_buffer_frames`, `blind_uplink`). Node keys other than `rate_mbps`
//! are optional: 1500-byte packets, no loss, downlink, saturating.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mac::TimingConstants;
use crate::node::{DataRate, Direction, NodeId, NodeSpec, RATES_80211B};
use crate::tbr::TbrConfig;
use crate::workload::SourceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Plain DCF: the AP serves its per-node queues round-robin.
    Dcf,
    /// The time-based regulator.
    Tbr,
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchedulerKind::Dcf => "dcf",
            SchedulerKind::Tbr => "tbr",
        })
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dcf" => Ok(SchedulerKind::Dcf),
            "tbr" => Ok(SchedulerKind::Tbr),
            other => Err(format!("unknown scheduler `{other}` (expected dcf or tbr)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scheduler: SchedulerKind,
    pub duration_us: u64,
    pub seed: u64,
    pub timing: TimingConstants,
    pub tbr: TbrConfig,
    pub nodes: Vec<NodeSpec>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field `{field}`: {message}")]
    Field {
        line: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl ScenarioError {
    /// Parse problems as opposed to semantically invalid scenarios.
    pub fn is_parse_error(&self) -> bool {
        !matches!(self, ScenarioError::Invalid(_))
    }
}

impl Scenario {
    pub fn new(scheduler: SchedulerKind, duration_us: u64, seed: u64) -> Self {
        Self {
            scheduler,
            duration_us,
            seed,
            timing: TimingConstants::default(),
            tbr: TbrConfig::default(),
            nodes: Vec::new(),
        }
    }

    pub fn with_node(mut self, node: NodeSpec) -> Self {
        self.nodes.push(node);
        self
    }

    pub fn with_nodes(mut self, nodes: impl IntoIterator<Item = NodeSpec>) -> Self {
        self.nodes.extend(nodes);
        self
    }

    pub fn node_index(&self, id: &NodeId) -> Option<usize> {
        self.nodes.iter().position(|n| &n.id == id)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if self.nodes.is_empty() {
            return invalid("at least one node is required".into());
        }
        if self.duration_us == 0 {
            return invalid("duration_us must be positive".into());
        }
        self.timing.validate().map_err(ScenarioError::Invalid)?;
        self.tbr.validate().map_err(ScenarioError::Invalid)?;
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(&n.id) {
                return invalid(format!("duplicate node id `{}`", n.id));
            }
            if !RATES_80211B.contains(&n.rate) {
                return invalid(format!(
                    "node `{}`: {} Mbps is not in the 802.11b rate set",
                    n.id, n.rate
                ));
            }
            if n.packet_bytes == 0 {
                return invalid(format!("node `{}`: packet_bytes must be positive", n.id));
            }
            if !(0.0..1.0).contains(&n.loss_rate) {
                return invalid(format!("node `{}`: loss_rate must lie in [0, 1)", n.id));
            }
            if let Err(m) = n.source.validate(n.packet_bytes) {
                return invalid(format!("node `{}`: {m}", n.id));
            }
        }
        Ok(())
    }

    /// Parses the scenario file format. Syntax and type errors carry the
    /// line and field; semantic checks are left to [`Scenario::validate`].
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut scenario = Scenario::new(SchedulerKind::Dcf, 0, 0);
        let mut section: Option<Section> = None;
        let mut saw_sim = false;
        let mut pending: Option<PendingNode> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(header) = content.strip_prefix('[') {
                let header = header.strip_suffix(']').ok_or(ScenarioError::Syntax {
                    line,
                    message: format!("unterminated section header `{content}`"),
                })?;
                if let Some(node) = pending.take() {
                    scenario.nodes.push(node.finish()?);
                }
                let mut words = header.split_whitespace();
                section = match (words.next(), words.next(), words.next()) {
                    (Some("sim"), None, None) => {
                        if saw_sim {
                            return Err(ScenarioError::Syntax {
                                line,
                                message: "duplicate [sim] section".into(),
                            });
                        }
                        saw_sim = true;
                        Some(Section::Sim)
                    }
                    (Some("node"), Some(id), None) => {
                        pending = Some(PendingNode::new(id, line));
                        Some(Section::Node)
                    }
                    _ => {
                        return Err(ScenarioError::Syntax {
                            line,
                            message: format!("unknown section `[{header}]`"),
                        })
                    }
                };
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ScenarioError::Syntax {
                line,
                message: format!("expected `name = value`, found `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let field = Field { line, key, value };
            match section {
                None => {
                    return Err(ScenarioError::Syntax {
                        line,
                        message: "key outside of any section".into(),
                    })
                }
                Some(Section::Sim) => set_sim_key(&mut scenario, &field)?,
                Some(Section::Node) => pending
                    .as_mut()
                    .expect("node section has a pending node")
                    .set(&field)?,
            }
        }
        if let Some(node) = pending.take() {
            scenario.nodes.push(node.finish()?);
        }
        if !saw_sim {
            return Err(ScenarioError::Syntax {
                line: text.lines().count().max(1),
                message: "missing [sim] section".into(),
            });
        }
        Ok(scenario)
    }

    /// Renders the scenario in the file format accepted by [`Scenario::parse`].
    pub fn to_file_string(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let d = TimingConstants::default();
        let t = &self.timing;
        let _ = writeln!(s, "[sim]");
        let _ = writeln!(s, "scheduler = {}", self.scheduler);
        let _ = writeln!(s, "duration_us = {}", self.duration_us);
        let _ = writeln!(s, "seed = {}", self.seed);
        let timing = [
            ("slot_us", t.slot_us, d.slot_us),
            ("sifs_us", t.sifs_us, d.sifs_us),
            ("difs_us", t.difs_us, d.difs_us),
            ("plcp_us", t.plcp_us, d.plcp_us),
            ("ack_bytes", t.ack_bytes as u64, d.ack_bytes as u64),
            ("cw_min_slots", t.cw_min_slots as u64, d.cw_min_slots as u64),
            ("retry_limit", t.retry_limit as u64, d.retry_limit as u64),
        ];
        for (k, v, default) in timing {
            if v != default {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        if t.ack_rate != d.ack_rate {
            let _ = writeln!(s, "ack_rate_mbps = {}", t.ack_rate);
        }
        let b = TbrConfig::default();
        let c = &self.tbr;
        if c.initial_tokens_us != b.initial_tokens_us {
            let _ = writeln!(s, "initial_tokens_us = {}", c.initial_tokens_us);
        }
        if c.bucket_us != b.bucket_us {
            let _ = writeln!(s, "bucket_us = {}", c.bucket_us);
        }
        if c.fill_period_us != b.fill_period_us {
            let _ = writeln!(s, "fill_period_us = {}", c.fill_period_us);
        }
        if c.adjust_period_us != b.adjust_period_us {
            let _ = writeln!(s, "adjust_period_us = {}", c.adjust_period_us);
        }
        if c.underuse_threshold != b.underuse_threshold {
            let _ = writeln!(s, "underuse_threshold = {}", c.underuse_threshold);
        }
        if c.total_buffer_frames != b.total_buffer_frames {
            let _ = writeln!(s, "total_buffer_frames = {}", c.total_buffer_frames);
        }
        if c.blind_uplink {
            let _ = writeln!(s, "blind_uplink = true");
        }
        for n in &self.nodes {
            let _ = writeln!(s, "\n[node {}]", n.id);
            let _ = writeln!(s, "rate_mbps = {}", n.rate);
            let _ = writeln!(s, "packet_bytes = {}", n.packet_bytes);
            let _ = writeln!(s, "loss_rate = {}", n.loss_rate);
            let _ = writeln!(s, "direction = {}", n.direction);
            let _ = writeln!(s, "source = {}", n.source);
        }
        s
    }
}

enum Section {
    Sim,
    Node,
}

struct Field<'a> {
    line: usize,
    key: &'a str,
    value: &'a str,
}

impl Field<'_> {
    fn error(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Field {
            line: self.line,
            field: self.key.to_string(),
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T, ScenarioError>
    where
        T::Err: fmt::Display,
    {
        self.value
            .parse()
            .map_err(|e: T::Err| self.error(format!("cannot parse `{}`: {e}", self.value)))
    }
}

fn set_sim_key(s: &mut Scenario, f: &Field<'_>) -> Result<(), ScenarioError> {
    match f.key {
        "scheduler" => s.scheduler = f.parse()?,
        "duration_us" => s.duration_us = f.parse()?,
        "seed" => s.seed = f.parse()?,
        "slot_us" => s.timing.slot_us = f.parse()?,
        "sifs_us" => s.timing.sifs_us = f.parse()?,
        "difs_us" => s.timing.difs_us = f.parse()?,
        "plcp_us" => s.timing.plcp_us = f.parse()?,
        "ack_bytes" => s.timing.ack_bytes = f.parse()?,
        "ack_rate_mbps" => s.timing.ack_rate = f.parse()?,
        "cw_min_slots" => s.timing.cw_min_slots = f.parse()?,
        "retry_limit" => s.timing.retry_limit = f.parse()?,
        "initial_tokens_us" => s.tbr.initial_tokens_us = f.parse()?,
        "bucket_us" => s.tbr.bucket_us = f.parse()?,
        "fill_period_us" => s.tbr.fill_period_us = f.parse()?,
        "adjust_period_us" => s.tbr.adjust_period_us = f.parse()?,
        "underuse_threshold" => s.tbr.underuse_threshold = f.parse()?,
        "total_buffer_frames" => s.tbr.total_buffer_frames = f.parse()?,
        "blind_uplink" => s.tbr.blind_uplink = f.parse()?,
        _ => return Err(f.error("unknown key in [sim]")),
    }
    Ok(())
}

struct PendingNode {
    id: String,
    line: usize,
    rate: Option<DataRate>,
    packet_bytes: u32,
    loss_rate: f64,
    direction: Direction,
    source: SourceSpec,
}

impl PendingNode {
    fn new(id: &str, line: usize) -> Self {
        Self {
            id: id.to_string(),
            line,
            rate: None,
            packet_bytes: 1500,
            loss_rate: 0.0,
            direction: Direction::Downlink,
            source: SourceSpec::Saturating,
        }
    }

    fn set(&mut self, f: &Field<'_>) -> Result<(), ScenarioError> {
        match f.key {
            "rate_mbps" => self.rate = Some(f.parse()?),
            "packet_bytes" => self.packet_bytes = f.parse()?,
            "loss_rate" => self.loss_rate = f.parse()?,
            "direction" => self.direction = f.parse()?,
            "source" => self.source = f.parse()?,
            _ => return Err(f.error("unknown key in [node]")),
        }
        Ok(())
    }

    fn finish(self) -> Result<NodeSpec, ScenarioError> {
        let rate = self.rate.ok_or(ScenarioError::Field {
            line: self.line,
            field: "rate_mbps".into(),
            message: format!("node `{}` has no rate_mbps", self.id),
        })?;
        Ok(NodeSpec {
            id: NodeId::new(self.id),
            rate,
            packet_bytes: self.packet_bytes,
            loss_rate: self.loss_rate,
            direction: self.direction,
            source: self.source,
        })
    }
}
