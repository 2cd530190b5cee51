//! Channel access model: frame timing, backoff, contention and retransmission.
//!
//! DCF is reduced to its long-term property: every backlogged contender has
//! the same chance of winning each round. The winner pays a uniformly drawn
//! backoff before every attempt, followed by the attempt itself (DIFS, PLCP,
//! payload, SIFS, PLCP, MAC ack). All of that is charged to the frame's owner
//! as channel occupancy, so the channel is never idle while someone is
//! backlogged.

use rand::Rng;

use crate::node::{DataRate, Direction, NodeId};

/// 802.11b-style MAC timing. Durations are microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingConstants {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    /// PLCP preamble plus header.
    pub plcp_us: u64,
    pub ack_bytes: u32,
    pub ack_rate: DataRate,
    pub cw_min_slots: u32,
    pub retry_limit: u32,
}

impl Default for TimingConstants {
    /// DSSS long preamble, 14-byte ack at 1 Mbps, CWmin 31, 7 attempts.
    fn default() -> Self {
        Self {
            slot_us: 20,
            sifs_us: 10,
            difs_us: 50,
            plcp_us: 192,
            ack_bytes: 14,
            ack_rate: DataRate::from_kbps(1000),
            cw_min_slots: 31,
            retry_limit: 7,
        }
    }
}

impl TimingConstants {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("slot_us", self.slot_us),
            ("sifs_us", self.sifs_us),
            ("difs_us", self.difs_us),
            ("plcp_us", self.plcp_us),
            ("ack_bytes", self.ack_bytes as u64),
            ("retry_limit", self.retry_limit as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Longest possible backoff draw.
    pub fn max_backoff_us(&self) -> u64 {
        self.cw_min_slots as u64 * self.slot_us
    }
}

/// Whether a frame carries application data or a transport-level ack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    TransportAck,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// The client the frame is from or to. Its airtime is charged to this node.
    pub owner: NodeId,
    pub direction: Direction,
    pub payload_bytes: u32,
    pub rate: DataRate,
    pub enqueue_time_us: u64,
    pub kind: FrameKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub delivered: bool,
    pub attempts: u32,
    /// Channel time of every attempt, backoffs included.
    pub occupancy_us: u64,
    /// Channel time of the first attempt alone.
    pub first_attempt_us: u64,
    pub completion_time_us: u64,
}

/// Duration of one attempt without backoff:
/// DIFS + PLCP + payload + SIFS + PLCP + MAC ack.
pub fn single_attempt_time(payload_bytes: u32, rate: DataRate, timing: &TimingConstants) -> f64 {
    (timing.difs_us + timing.plcp_us + timing.sifs_us + timing.plcp_us) as f64
        + rate.airtime_us(payload_bytes)
        + timing.ack_rate.airtime_us(timing.ack_bytes)
}

/// [`single_attempt_time`] rounded up to the simulator's microsecond clock.
pub fn attempt_duration_us(payload_bytes: u32, rate: DataRate, timing: &TimingConstants) -> u64 {
    // Guard against 1090.9090000001-style float noise pushing an exact value up a tick.
    (single_attempt_time(payload_bytes, rate, timing) - 1e-9).ceil() as u64
}

/// Uniform over {0, 1, ..., cw_min_slots} slots.
pub fn backoff<R: Rng + ?Sized>(rng: &mut R, timing: &TimingConstants) -> u64 {
    rng.gen_range(0..=timing.cw_min_slots) as u64 * timing.slot_us
}

/// Picks the round's winner uniformly. Returns an index into `backlogged`.
///
/// # Panics
///
/// Panics if `backlogged` is empty.
pub fn contend<T, R: Rng + ?Sized>(backlogged: &[T], rng: &mut R) -> usize {
    assert!(
        !backlogged.is_empty(),
        "contention needs at least one station"
    );
    if backlogged.len() == 1 {
        0
    } else {
        rng.gen_range(0..backlogged.len())
    }
}

/// Transmits `frame` starting at `now_us`, retrying until success or the
/// retry limit. Each attempt is preceded by a fresh backoff and fails
/// independently with probability `loss_rate`.
pub fn transmit<R: Rng + ?Sized>(
    frame: &Frame,
    loss_rate: f64,
    timing: &TimingConstants,
    now_us: u64,
    rng: &mut R,
) -> TransferOutcome {
    let attempt = attempt_duration_us(frame.payload_bytes, frame.rate, timing);
    let mut occupancy_us = 0;
    let mut first_attempt_us = 0;
    let mut attempts = 0;
    let mut delivered = false;
    while attempts < timing.retry_limit {
        attempts += 1;
        occupancy_us += backoff(rng, timing) + attempt;
        if attempts == 1 {
            first_attempt_us = occupancy_us;
        }
        if loss_rate <= 0.0 || rng.gen::<f64>() >= loss_rate {
            delivered = true;
            break;
        }
    }
    TransferOutcome {
        delivered,
        attempts,
        occupancy_us,
        first_attempt_us,
        completion_time_us: now_us + occupancy_us,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rate(m: f64) -> DataRate {
        DataRate::from_mbps(m).unwrap()
    }

    fn frame(bytes: u32, mbps: f64) -> Frame {
        Frame {
            owner: NodeId::new("a"),
            direction: Direction::Downlink,
            payload_bytes: bytes,
            rate: rate(mbps),
            enqueue_time_us: 0,
            kind: FrameKind::Data,
        }
    }

    #[test]
    fn attempt_time_hand_sum() {
        let t = TimingConstants::default();
        // 50 + 192 + 1500*8/11 + 10 + 192 + 14*8/1
        let expected = 50.0 + 192.0 + 12000.0 / 11.0 + 10.0 + 192.0 + 112.0;
        let got = single_attempt_time(1500, rate(11.0), &t);
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 1_646.909_090_9).abs() < 1e-6);
        assert_eq!(attempt_duration_us(1500, rate(11.0), &t), 1647);
        // Exact integer case must not round up.
        assert_eq!(attempt_duration_us(1500, rate(1.0), &t), 12556);
    }

    #[test]
    fn attempt_time_monotone() {
        let t = TimingConstants::default();
        for r in [1.0, 2.0, 5.5, 11.0] {
            assert!(
                single_attempt_time(3000, rate(r), &t) > single_attempt_time(1500, rate(r), &t)
            );
        }
        assert!(
            single_attempt_time(1500, rate(2.0), &t) < single_attempt_time(1500, rate(1.0), &t)
        );
        let ratio =
            single_attempt_time(1500, rate(1.0), &t) / single_attempt_time(1500, rate(11.0), &t);
        assert!(ratio < 11.0);
    }

    #[test]
    fn zero_window_backoff_is_zero() {
        let t = TimingConstants {
            cw_min_slots: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| backoff(&mut rng, &t) == 0));
    }

    #[test]
    fn backoff_mean_and_support() {
        let t = TimingConstants::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let b = backoff(&mut rng, &t);
            assert!(b <= 620 && b % 20 == 0);
            sum += b;
        }
        let mean = sum as f64 / n as f64;
        assert!((mean - 310.0).abs() < 5.0, "mean {mean}");
    }

    #[test]
    fn contend_singleton_and_fairness() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(contend(&["only"], &mut rng), 0);
        let set = ["a", "b"];
        let rounds = 100_000;
        let a_wins = (0..rounds).filter(|_| contend(&set, &mut rng) == 0).count();
        let frac = a_wins as f64 / rounds as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    #[should_panic]
    fn contend_empty_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        contend::<u8, _>(&[], &mut rng);
    }

    #[test]
    fn lossless_transmit_single_attempt() {
        let t = TimingConstants::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = transmit(&frame(1500, 11.0), 0.0, &t, 1000, &mut rng);
        assert!(out.delivered);
        assert_eq!(out.attempts, 1);
        assert_eq!(out.occupancy_us, out.first_attempt_us);
        assert!(out.occupancy_us >= 1647 && out.occupancy_us <= 1647 + 620);
        assert_eq!(out.completion_time_us, 1000 + out.occupancy_us);
    }

    #[test]
    fn delivery_probability_matches_geometric_tail() {
        let t = TimingConstants::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut delivered = 0;
        for _ in 0..trials {
            let out = transmit(&frame(100, 11.0), 0.5, &t, 0, &mut rng);
            assert!(out.attempts >= 1 && out.attempts <= t.retry_limit);
            if out.delivered {
                delivered += 1;
            } else {
                assert_eq!(out.attempts, t.retry_limit);
            }
            let min = attempt_duration_us(100, rate(11.0), &t) * out.attempts as u64;
            assert!(out.occupancy_us >= min);
        }
        let p = delivered as f64 / trials as f64;
        let expected = 1.0 - 0.5f64.powi(7);
        assert!((p - expected).abs() < 0.003, "{p} vs {expected}");
    }

    #[test]
    fn retries_add_occupancy() {
        let t = TimingConstants {
            cw_min_slots: 0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = frame(1500, 2.0);
        let mut one = None;
        let mut two = None;
        for _ in 0..1000 {
            let out = transmit(&f, 0.5, &t, 0, &mut rng);
            match out.attempts {
                1 => one = Some(out.occupancy_us),
                2 => two = Some(out.occupancy_us),
                _ => {}
            }
        }
        assert!(two.unwrap() > one.unwrap());
    }
}
