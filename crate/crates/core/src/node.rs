//! Station identity, data rates and per-node configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::SourceSpec;

/// Opaque station identifier (a scenario section name, a MAC address, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Direction of a node's data traffic relative to the access point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client to AP.
    Uplink,
    /// AP to client.
    Downlink,
}

impl Direction {
    pub fn reverse(self) -> Self {
        match self {
            Direction::Uplink => Direction::Downlink,
            Direction::Downlink => Direction::Uplink,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid direction `{0}` (expected uplink or downlink)")]
pub struct ParseDirectionError(String);

impl FromStr for Direction {
    type Err = ParseDirectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uplink" | "up" => Ok(Direction::Uplink),
            "downlink" | "down" => Ok(Direction::Downlink),
            other => Err(ParseDirectionError(other.to_string())),
        }
    }
}

/// A PHY data rate, stored in kbps so that rates like 5.5 Mbps are exact keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DataRate {
    kbps: u32,
}

/// The 802.11b DSSS/CCK rate set: 1, 2, 5.5 and 11 Mbps.
pub const RATES_80211B: [DataRate; 4] = [
    DataRate { kbps: 1000 },
    DataRate { kbps: 2000 },
    DataRate { kbps: 5500 },
    DataRate { kbps: 11000 },
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("data rate `{0}` is not a number")]
    NotANumber(String),
    #[error("data rate {0} Mbps must be positive and a multiple of 1 kbps")]
    NotRepresentable(f64),
    #[error("data rate {0} Mbps is not in the configured rate set")]
    NotInRateSet(f64),
}

impl DataRate {
    pub const fn from_kbps(kbps: u32) -> Self {
        Self { kbps }
    }

    pub fn from_mbps(mbps: f64) -> Result<Self, RateError> {
        let kbps = mbps * 1000.0;
        let rounded = kbps.round();
        if !(mbps.is_finite() && rounded >= 1.0 && rounded <= u32::MAX as f64)
            || (kbps - rounded).abs() > 1e-6
        {
            return Err(RateError::NotRepresentable(mbps));
        }
        Ok(Self {
            kbps: rounded as u32,
        })
    }

    /// Parses a rate and checks membership in the 802.11b rate set.
    pub fn from_mbps_80211b(mbps: f64) -> Result<Self, RateError> {
        let rate = Self::from_mbps(mbps)?;
        if RATES_80211B.contains(&rate) {
            Ok(rate)
        } else {
            Err(RateError::NotInRateSet(mbps))
        }
    }

    pub fn kbps(self) -> u32 {
        self.kbps
    }

    pub fn mbps(self) -> f64 {
        self.kbps as f64 / 1000.0
    }

    /// Airtime of `bytes` at this rate, in microseconds.
    pub fn airtime_us(self, bytes: u32) -> f64 {
        bytes as f64 * 8.0 / self.mbps()
    }
}

impl fmt::Display for DataRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kbps.is_multiple_of(1000) {
            write!(f, "{}", self.kbps / 1000)
        } else {
            // Shortest decimal that round-trips, e.g. 5.5
            write!(f, "{}", self.mbps())
        }
    }
}

impl FromStr for DataRate {
    type Err = RateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mbps: f64 = s
            .trim()
            .parse()
            .map_err(|_| RateError::NotANumber(s.to_string()))?;
        Self::from_mbps(mbps)
    }
}

impl Serialize for DataRate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.mbps())
    }
}

impl<'de> Deserialize<'de> for DataRate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let mbps = f64::deserialize(deserializer)?;
        DataRate::from_mbps(mbps).map_err(serde::de::Error::custom)
    }
}

/// One competing station.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub rate: DataRate,
    pub packet_bytes: u32,
    /// Independent per-attempt frame loss probability, in `[0, 1)`.
    pub loss_rate: f64,
    pub direction: Direction,
    pub source: SourceSpec,
}

impl NodeSpec {
    /// A saturating, loss-free downlink node.
    pub fn new(id: impl Into<NodeId>, rate: DataRate, packet_bytes: u32) -> Self {
        Self {
            id: id.into(),
            rate,
            packet_bytes,
            loss_rate: 0.0,
            direction: Direction::Downlink,
            source: SourceSpec::Saturating,
        }
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    pub fn with_source(mut self, source: SourceSpec) -> Self {
        self.source = source;
        self
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}
