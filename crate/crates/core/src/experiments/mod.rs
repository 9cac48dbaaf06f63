//! Seeded Monte Carlo harnesses. Every trial owns a counter-based stream
//! `(seed, point, trial, lane)`, so outputs do not depend on worker count.
//!
//! Lanes: 0 channel, 1 OTFS pilot and noise, 2 OFDM pilot and noise,
//! 3 data symbols, 4 receiver noise.

pub mod af;
pub mod capacity;
pub mod ofdm;
pub mod output;
pub mod pattern;
pub mod region;
pub mod throughput;

use crate::arrangement::{build_arrangement, Arrangement, GuardPlan};
use crate::channel::{build_dictionaries, Dictionaries, TapGrid};
use crate::config::RunConfig;
use crate::error::Result;
use crate::modem::FrameConfig;
use crate::optimizer::{OptimizerConfig, Problem};
use crate::sensing::SensingConstants;

pub use af::{run_af_slices, AfSlices};
pub use capacity::{run_capacity_bound, run_capacity_vs_velocity, velocity_to_doppler, CapacityReport};
pub use ofdm::OfdmLink;
pub use pattern::{export_power_pattern, PowerPattern};
pub use region::{run_region, Design, RegionPoint, RegionReport};
pub use throughput::{run_throughput, ThroughputReport};

pub const LANE_CHANNEL: u64 = 0;
pub const LANE_OTFS: u64 = 1;
pub const LANE_OFDM: u64 = 2;
pub const LANE_DATA: u64 = 3;
pub const LANE_NOISE: u64 = 4;

/// Frame, layout and dictionaries shared by every harness.
#[derive(Debug, Clone)]
pub struct Setup {
    pub frame: FrameConfig,
    pub plan: GuardPlan,
    pub arr: Arrangement,
    pub taps: TapGrid,
    pub dicts: Dictionaries,
    pub sigma_h2: f64,
    pub sigma_n2: f64,
    /// Nonzero taps per channel draw.
    pub paths: usize,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let frame = cfg.frame()?;
        let plan = cfg.plan();
        let arr = build_arrangement(&frame, &plan)?;
        let taps = cfg.channel.taps();
        let dicts = build_dictionaries(&arr, &frame, &taps)?;
        Ok(Setup {
            frame,
            plan,
            arr,
            taps,
            dicts,
            sigma_h2: cfg.channel.sigma_h2,
            sigma_n2: cfg.sigma_n2(),
            paths: cfg.channel.path_count(),
        })
    }

    /// Same frame and layout under a different tap set, drawn dense.
    pub fn with_taps(&self, taps: TapGrid) -> Result<Self> {
        Ok(Setup {
            dicts: build_dictionaries(&self.arr, &self.frame, &taps)?,
            paths: taps.len(),
            taps,
            ..self.clone()
        })
    }

    pub fn sensing(&self, cfg: &RunConfig) -> Result<SensingConstants> {
        let exp = &cfg.experiment;
        SensingConstants::load_or_build(exp.cache_dir.as_deref(), &self.arr, &self.frame, exp.l_hat, exp.q_hat)
    }

    pub fn problem<'a>(&'a self, consts: &'a SensingConstants) -> Problem<'a> {
        Problem {
            frame: &self.frame,
            arr: &self.arr,
            consts,
            dicts: &self.dicts,
            sigma_h2: self.sigma_h2,
            sigma_n2: self.sigma_n2,
        }
    }
}

/// Optimizer settings of a run with `eta` overridden.
pub fn with_eta(opt: &OptimizerConfig, eta: f64) -> OptimizerConfig {
    OptimizerConfig { eta, ..opt.clone() }
}

/// Floor applied to every reported dB value; exact zeros (a pilot-only
/// design has no data SINR, a lone DD impulse no in-window sidelobes) would
/// otherwise print as `-inf`.
pub const DB_FLOOR: f64 = -100.0;

pub(crate) fn to_db(x: f64) -> f64 {
    (10.0 * x.log10()).max(DB_FLOOR)
}
