//! Traffic sources: saturating and rate-limited fluid streams, finite tasks
//! and an ack-clocked fixed-window transport.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::mac::{Frame, FrameKind};
use crate::node::{DataRate, Direction, NodeId};

/// Default transport ack payload for window sources.
pub const DEFAULT_ACK_BYTES: u32 = 40;

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Always has another packet.
    Saturating,
    /// Application-limited stream.
    RateLimited { limit_mbps: f64 },
    /// Transfers `total_bytes` then stops.
    Task { total_bytes: u64 },
    /// At most `packets` unacknowledged data frames; each delivered data frame
    /// is answered by an `ack_bytes` frame in the reverse direction.
    Window { packets: u32, ack_bytes: u32 },
}

impl SourceSpec {
    pub fn validate(&self, packet_bytes: u32) -> Result<(), String> {
        match *self {
            SourceSpec::Saturating => Ok(()),
            SourceSpec::RateLimited { limit_mbps } => {
                if limit_mbps > 0.0 && limit_mbps.is_finite() {
                    Ok(())
                } else {
                    Err(format!("rate limit {limit_mbps} Mbps must be positive"))
                }
            }
            SourceSpec::Task { total_bytes } => {
                if total_bytes >= packet_bytes as u64 {
                    Ok(())
                } else {
                    Err(format!(
                        "task of {total_bytes} B is smaller than one {packet_bytes} B packet"
                    ))
                }
            }
            SourceSpec::Window { packets, ack_bytes } => {
                if packets == 0 {
                    Err("window must allow at least one packet".into())
                } else if ack_bytes == 0 {
                    Err("ack size must be positive".into())
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SourceSpec::Saturating => f.write_str("saturating"),
            SourceSpec::RateLimited { limit_mbps } => write!(f, "rate_limited:{limit_mbps}"),
            SourceSpec::Task { total_bytes } => write!(f, "task:{total_bytes}"),
            SourceSpec::Window {
                packets,
                ack_bytes: DEFAULT_ACK_BYTES,
            } => write!(f, "window:{packets}"),
            SourceSpec::Window { packets, ack_bytes } => write!(f, "window:{packets}:{ack_bytes}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid source `{0}` (expected saturating | rate_limited:<mbps> | task:<bytes> | window:<packets>[:<ack bytes>])")]
pub struct ParseSourceError(String);

impl FromStr for SourceSpec {
    type Err = ParseSourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseSourceError(s.to_string());
        let mut parts = s.trim().split(':');
        let kind = parts.next().ok_or_else(err)?;
        let args: Vec<&str> = parts.collect();
        let spec = match (kind, args.as_slice()) {
            ("saturating", []) => SourceSpec::Saturating,
            ("rate_limited", [mbps]) => SourceSpec::RateLimited {
                limit_mbps: mbps.parse().map_err(|_| err())?,
            },
            ("task", [bytes]) => SourceSpec::Task {
                total_bytes: bytes.parse().map_err(|_| err())?,
            },
            ("window", [packets]) => SourceSpec::Window {
                packets: packets.parse().map_err(|_| err())?,
                ack_bytes: DEFAULT_ACK_BYTES,
            },
            ("window", [packets, ack]) => SourceSpec::Window {
                packets: packets.parse().map_err(|_| err())?,
                ack_bytes: ack.parse().map_err(|_| err())?,
            },
            _ => return Err(err()),
        };
        Ok(spec)
    }
}

/// Counters shared by all source kinds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceState {
    pub frames_delivered: u64,
    /// Delivered payload bytes, capped at the task size for task sources.
    pub bytes_sent: u64,
    /// Task only: bytes not yet delivered.
    pub bytes_remaining: u64,
    /// Window only: data frames offered and not yet acknowledged.
    pub in_flight: u32,
    /// Rate-limited only: accumulated application credit.
    pub app_credit_bits: f64,
    pub drops: u64,
    pub done: bool,
    pub completion_time_us: Option<u64>,
}

/// A running traffic source attached to one node.
#[derive(Debug, Clone)]
pub struct Source {
    spec: SourceSpec,
    owner: NodeId,
    rate: DataRate,
    direction: Direction,
    packet_bytes: u32,
    state: SourceState,
    // task: frames queued or on the air
    outstanding: u64,
    // window: acks waiting to be handed to the reverse direction
    acks_owed: u32,
    credit_updated_us: u64,
}

impl Source {
    pub fn new(
        spec: SourceSpec,
        owner: NodeId,
        rate: DataRate,
        direction: Direction,
        packet_bytes: u32,
    ) -> Self {
        let bytes_remaining = match spec {
            SourceSpec::Task { total_bytes } => total_bytes,
            _ => 0,
        };
        Self {
            spec,
            owner,
            rate,
            direction,
            packet_bytes,
            state: SourceState {
                bytes_remaining,
                ..Default::default()
            },
            outstanding: 0,
            acks_owed: 0,
            credit_updated_us: 0,
        }
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn state(&self) -> &SourceState {
        &self.state
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    pub fn delivered_bytes(&self) -> u64 {
        self.state.frames_delivered * self.packet_bytes as u64
    }

    fn packet_bits(&self) -> f64 {
        self.packet_bytes as f64 * 8.0
    }

    fn frame(&self, now_us: u64, kind: FrameKind) -> Frame {
        let (direction, payload_bytes) = match (kind, &self.spec) {
            (FrameKind::TransportAck, SourceSpec::Window { ack_bytes, .. }) => {
                (self.direction.reverse(), *ack_bytes)
            }
            _ => (self.direction, self.packet_bytes),
        };
        Frame {
            owner: self.owner.clone(),
            direction,
            payload_bytes,
            rate: self.rate,
            enqueue_time_us: now_us,
            kind,
        }
    }

    fn accrue_credit(&mut self, now_us: u64, limit_mbps: f64) {
        let elapsed = now_us.saturating_sub(self.credit_updated_us) as f64;
        // Mbps is bits per microsecond. Credit is capped at two packets so a
        // backpressured application does not bank an unbounded burst.
        let cap = 2.0 * self.packet_bits();
        self.state.app_credit_bits = (self.state.app_credit_bits + elapsed * limit_mbps).min(cap);
        self.credit_updated_us = self.credit_updated_us.max(now_us);
    }

    /// Next data frame, if the source has one to hand over at `now_us`.
    pub fn offer(&mut self, now_us: u64) -> Option<Frame> {
        if self.state.done {
            return None;
        }
        match self.spec {
            SourceSpec::Saturating => {}
            SourceSpec::RateLimited { limit_mbps } => {
                self.accrue_credit(now_us, limit_mbps);
                if self.state.app_credit_bits + 1e-9 < self.packet_bits() {
                    return None;
                }
                self.state.app_credit_bits =
                    (self.state.app_credit_bits - self.packet_bits()).max(0.0);
            }
            SourceSpec::Task { total_bytes } => {
                let frames_total = total_bytes.div_ceil(self.packet_bytes as u64);
                if self.state.frames_delivered + self.outstanding >= frames_total {
                    return None;
                }
                self.outstanding += 1;
            }
            SourceSpec::Window { packets, .. } => {
                if self.state.in_flight >= packets {
                    return None;
                }
                self.state.in_flight += 1;
            }
        }
        Some(self.frame(now_us, FrameKind::Data))
    }

    /// Next transport ack to send in the reverse direction (window sources).
    pub fn offer_ack(&mut self, now_us: u64) -> Option<Frame> {
        if self.acks_owed == 0 {
            return None;
        }
        self.acks_owed -= 1;
        Some(self.frame(now_us, FrameKind::TransportAck))
    }

    /// Earliest time a rate-limited source will have credit for another
    /// packet. `None` for other kinds or when it already has credit.
    pub fn next_offer_time(&self, now_us: u64) -> Option<u64> {
        match self.spec {
            SourceSpec::RateLimited { limit_mbps } if !self.state.done => {
                let elapsed = now_us.saturating_sub(self.credit_updated_us) as f64;
                let credit = self.state.app_credit_bits + elapsed * limit_mbps;
                let missing = self.packet_bits() - credit;
                if missing <= 1e-9 {
                    None
                } else {
                    Some(now_us + (missing / limit_mbps).ceil() as u64)
                }
            }
            _ => None,
        }
    }

    pub fn on_delivered(&mut self, frame: &Frame, now_us: u64) {
        match (frame.kind, &self.spec) {
            (FrameKind::TransportAck, _) => {
                self.state.in_flight = self.state.in_flight.saturating_sub(1);
            }
            (FrameKind::Data, spec) => {
                self.state.frames_delivered += 1;
                match *spec {
                    SourceSpec::Task { total_bytes } => {
                        self.outstanding = self.outstanding.saturating_sub(1);
                        let delivered = self.delivered_bytes().min(total_bytes);
                        self.state.bytes_sent = delivered;
                        self.state.bytes_remaining = total_bytes - delivered;
                        if self.state.bytes_remaining == 0 {
                            self.state.done = true;
                            self.state.completion_time_us = Some(now_us);
                        }
                    }
                    SourceSpec::Window { .. } => {
                        self.state.bytes_sent = self.delivered_bytes();
                        self.acks_owed += 1;
                    }
                    _ => self.state.bytes_sent = self.delivered_bytes(),
                }
            }
        }
    }

    /// A frame was lost to retry exhaustion or queue overflow. Its bytes are
    /// offered again later.
    pub fn on_dropped(&mut self, frame: &Frame) {
        self.state.drops += 1;
        match (frame.kind, &self.spec) {
            (FrameKind::TransportAck, _) => self.acks_owed += 1,
            (FrameKind::Data, SourceSpec::Task { .. }) => {
                self.outstanding = self.outstanding.saturating_sub(1);
            }
            (FrameKind::Data, SourceSpec::Window { .. }) => {
                self.state.in_flight = self.state.in_flight.saturating_sub(1);
            }
            (FrameKind::Data, SourceSpec::RateLimited { .. }) => {
                self.state.app_credit_bits += self.packet_bits();
            }
            (FrameKind::Data, SourceSpec::Saturating) => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source(spec: SourceSpec) -> Source {
        Source::new(
            spec,
            NodeId::new("n1"),
            DataRate::from_mbps(11.0).unwrap(),
            Direction::Downlink,
            1500,
        )
    }

    #[test]
    fn parse_and_display() {
        for text in [
            "saturating",
            "rate_limited:2.1",
            "task:3000000",
            "window:8",
            "window:4:64",
        ] {
            let spec: SourceSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!(
            "window:8".parse::<SourceSpec>().unwrap(),
            SourceSpec::Window {
                packets: 8,
                ack_bytes: 40
            }
        );
        for bad in [
            "",
            "bursty",
            "task",
            "task:x",
            "window:1:2:3",
            "saturating:1",
        ] {
            assert!(bad.parse::<SourceSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validation() {
        assert!(SourceSpec::RateLimited { limit_mbps: 0.0 }
            .validate(1500)
            .is_err());
        assert!(SourceSpec::Task { total_bytes: 100 }
            .validate(1500)
            .is_err());
        assert!(SourceSpec::Window {
            packets: 0,
            ack_bytes: 40
        }
        .validate(1500)
        .is_err());
        assert!(SourceSpec::Task { total_bytes: 1500 }
            .validate(1500)
            .is_ok());
    }

    #[test]
    fn saturating_always_offers() {
        let mut s = source(SourceSpec::Saturating);
        for t in 0..100 {
            let f = s.offer(t).unwrap();
            assert_eq!(f.payload_bytes, 1500);
            assert_eq!(f.kind, FrameKind::Data);
        }
        let f = s.offer(0).unwrap();
        s.on_dropped(&f);
        assert_eq!(s.state().drops, 1);
        assert_eq!(s.state().frames_delivered, 0);
    }

    #[test]
    fn rate_limited_long_run_rate() {
        let mut s = source(SourceSpec::RateLimited { limit_mbps: 2.1 });
        let mut now = 0;
        let mut offers = 0u64;
        let horizon = 10_000_000;
        while now <= horizon {
            while s.offer(now).is_some() {
                offers += 1;
            }
            now = s.next_offer_time(now).unwrap();
        }
        let per_sec = offers as f64 / (horizon as f64 / 1e6);
        assert!((per_sec - 175.0).abs() / 175.0 < 0.02, "{per_sec}");
    }

    #[test]
    fn rate_limited_credit_is_capped() {
        let mut s = source(SourceSpec::RateLimited { limit_mbps: 2.1 });
        let mut burst = 0;
        while s.offer(100_000_000).is_some() {
            burst += 1;
        }
        assert_eq!(burst, 2);
    }

    #[test]
    fn task_counts_frames() {
        let mut s = source(SourceSpec::Task {
            total_bytes: 3_000_000,
        });
        let mut frames = Vec::new();
        while let Some(f) = s.offer(0) {
            frames.push(f);
        }
        assert_eq!(frames.len(), 2000);
        // One drop: the frame comes back.
        s.on_dropped(&frames[0]);
        let again = s.offer(5).unwrap();
        assert!(s.offer(5).is_none());
        frames[0] = again;
        for (i, f) in frames.iter().enumerate() {
            assert!(!s.is_done());
            s.on_delivered(f, 10 + i as u64);
            let st = s.state();
            assert_eq!(st.bytes_sent + st.bytes_remaining, 3_000_000);
        }
        assert!(s.is_done());
        assert_eq!(s.state().completion_time_us, Some(10 + 1999));
        assert_eq!(s.state().frames_delivered, 2000);
        assert_eq!(s.delivered_bytes(), 2000 * 1500);
        assert!(s.offer(100_000).is_none());
    }

    #[test]
    fn task_with_partial_last_packet() {
        let mut s = source(SourceSpec::Task { total_bytes: 4000 });
        let frames: Vec<_> = std::iter::from_fn(|| s.offer(0)).collect();
        assert_eq!(frames.len(), 3);
        for f in &frames {
            s.on_delivered(f, 1);
        }
        assert!(s.is_done());
        assert_eq!(s.state().bytes_sent, 4000);
        assert_eq!(s.state().bytes_remaining, 0);
    }

    #[test]
    fn window_closes_and_reopens_on_ack() {
        let mut s = source(SourceSpec::Window {
            packets: 4,
            ack_bytes: 40,
        });
        let data: Vec<_> = std::iter::from_fn(|| s.offer(0)).collect();
        assert_eq!(data.len(), 4);
        assert!(s.offer(0).is_none());
        assert!(s.offer_ack(0).is_none());
        s.on_delivered(&data[0], 1);
        assert!(
            s.offer(1).is_none(),
            "window stays closed until the ack arrives"
        );
        let ack = s.offer_ack(1).unwrap();
        assert_eq!(ack.kind, FrameKind::TransportAck);
        assert_eq!(ack.direction, Direction::Uplink);
        assert_eq!(ack.payload_bytes, 40);
        s.on_delivered(&ack, 2);
        assert_eq!(s.state().in_flight, 3);
        assert!(s.offer(2).is_some());
        assert!(s.offer(2).is_none());
    }

    #[test]
    fn window_drop_frees_slot_and_lost_ack_is_resent() {
        let mut s = source(SourceSpec::Window {
            packets: 1,
            ack_bytes: 40,
        });
        let d = s.offer(0).unwrap();
        s.on_dropped(&d);
        let d2 = s.offer(0).unwrap();
        assert_eq!(d2.payload_bytes, d.payload_bytes);
        s.on_delivered(&d2, 1);
        let ack = s.offer_ack(1).unwrap();
        s.on_dropped(&ack);
        assert!(s.offer(1).is_none());
        let ack = s.offer_ack(1).unwrap();
        s.on_delivered(&ack, 2);
        assert!(s.offer(2).is_some());
        assert_eq!(s.state().drops, 2);
    }
}
