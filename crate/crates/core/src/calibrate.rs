//! Measures the baseline throughput γ(rate, size) in simulation.
//!
//! For each rate two identical saturating, loss-free downlink nodes share the
//! channel under round-robin service; γ is their combined goodput.

use crate::analytic::{AnalyticError, BaselineTable};
use crate::mac::TimingConstants;
use crate::node::{DataRate, NodeSpec};
use crate::scenario::{Scenario, SchedulerKind};
use crate::sim;

pub const CALIBRATED_PROVENANCE: &str = "sim-calibrated";
pub const DEFAULT_CALIBRATION_US: u64 = 60_000_000;

#[derive(Debug, Clone)]
pub struct Calibration {
    pub timing: TimingConstants,
    pub duration_us: u64,
    pub seed: u64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            timing: TimingConstants::default(),
            duration_us: DEFAULT_CALIBRATION_US,
            seed: 0,
        }
    }
}

impl Calibration {
    pub fn scenario(&self, rate: DataRate, packet_bytes: u32) -> Scenario {
        let mut s = Scenario::new(SchedulerKind::Dcf, self.duration_us, self.seed)
            .with_node(NodeSpec::new("cal0", rate, packet_bytes))
            .with_node(NodeSpec::new("cal1", rate, packet_bytes));
        s.timing = self.timing.clone();
        s
    }

    /// γ for one (rate, size) pair, in Mbps.
    pub fn gamma(&self, rate: DataRate, packet_bytes: u32) -> Result<f64, sim::SimError> {
        let out = sim::run(&self.scenario(rate, packet_bytes))?;
        Ok(out.total_throughput_mbps())
    }

    pub fn table(
        &self,
        rates: &[DataRate],
        packet_bytes: u32,
    ) -> Result<BaselineTable, CalibrationError> {
        let mut table = BaselineTable::new(CALIBRATED_PROVENANCE);
        for &rate in rates {
            let g = self.gamma(rate, packet_bytes)?;
            table.insert(rate, packet_bytes, g)?;
        }
        Ok(table)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Table(#[from] AnalyticError),
}
