//! Run configuration: `[frame]`, `[channel]`, `[arrangement]`, `[optimizer]`
//! and `[experiment]` TOML sections. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrangement::{Block, GuardPlan};
use crate::channel::{DopplerSign, TapGrid};
use crate::error::{Error, Result};
use crate::modem::FrameConfig;
use crate::optimizer::OptimizerConfig;

fn default_delta_f() -> f64 {
    15e3
}

fn default_f_c() -> f64 {
    3.5e9
}

fn default_sigma_h2() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    pub m: usize,
    pub n: usize,
    pub n_cp: usize,
    #[serde(default = "default_delta_f")]
    pub delta_f: f64,
    #[serde(default = "default_f_c")]
    pub f_c: f64,
}

impl FrameSection {
    pub fn build(&self) -> Result<FrameConfig> {
        FrameConfig::new(self.m, self.n, self.n_cp, self.delta_f, self.f_c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// `L`.
    pub max_delay: usize,
    /// `Q`.
    pub max_doppler: usize,
    #[serde(default)]
    pub doppler_sign: DopplerSign,
    #[serde(default = "default_sigma_h2")]
    pub sigma_h2: f64,
    /// Transmit SNR `P_max / σ_n²` in dB.
    #[serde(default)]
    pub snr_db: f64,
    /// Nonzero taps per realization; `None` draws every tap.
    #[serde(default)]
    pub paths: Option<usize>,
}

impl ChannelSection {
    pub fn taps(&self) -> TapGrid {
        TapGrid::new(self.max_delay, self.max_doppler, self.doppler_sign)
    }

    pub fn sigma_n2(&self, p_max: f64) -> f64 {
        snr_to_noise(self.snr_db, p_max)
    }

    pub fn path_count(&self) -> usize {
        self.paths.unwrap_or_else(|| self.taps().len())
    }
}

/// `σ_n² = P / 10^{snr/10}`.
pub fn snr_to_noise(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrangementSection {
    pub pilot_block: Block,
    /// Data cells; `None` takes every eligible cell.
    #[serde(default)]
    pub data_count: Option<usize>,
    /// Guard extents; default to the channel's `L` and `Q`.
    #[serde(default)]
    pub guard_delay: Option<usize>,
    #[serde(default)]
    pub guard_doppler: Option<usize>,
}

impl ArrangementSection {
    pub fn plan(&self, channel: &ChannelSection) -> GuardPlan {
        GuardPlan {
            pilot_block: self.pilot_block,
            delay_margin: self.guard_delay.unwrap_or(channel.max_delay),
            doppler_margin: self.guard_doppler.unwrap_or(channel.max_doppler),
            doppler_sign: channel.doppler_sign,
            data_count: self.data_count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Qpsk,
    Qam16,
}

impl Modulation {
    pub fn bits(self) -> usize {
        match self {
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "qam16",
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_trials() -> usize {
    100
}

fn default_l_hat() -> usize {
    7
}

fn default_q_hat() -> usize {
    5
}

fn default_af_trials() -> usize {
    10_000
}

fn default_p0_grid() -> Vec<f64> {
    vec![0.1, 0.3, 0.5, 0.7, 0.9]
}

fn default_pilot_ratio() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Channel realizations.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Noise realizations per channel (throughput).
    #[serde(default = "default_trials")]
    pub noise_trials: usize,
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default)]
    pub velocity_kmh: Vec<f64>,
    #[serde(default)]
    pub eta: Vec<f64>,
    /// Pilot power splits `P₀` for the flat/cluster baselines.
    #[serde(default)]
    pub splits: Vec<f64>,
    /// Multi-start grid of initial power splits for the optimizer.
    #[serde(default = "default_p0_grid")]
    pub p0_grid: Vec<f64>,
    #[serde(default = "default_l_hat")]
    pub l_hat: usize,
    #[serde(default = "default_q_hat")]
    pub q_hat: usize,
    #[serde(default = "default_af_trials")]
    pub af_trials: usize,
    #[serde(default)]
    pub modulations: Vec<Modulation>,
    /// Fraction of OFDM slots carrying pilots.
    #[serde(default = "default_pilot_ratio")]
    pub ofdm_pilot_ratio: f64,
    /// Directory for the sensing-constant cache.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            seed: default_seed(),
            trials: default_trials(),
            noise_trials: default_trials(),
            snr_db: Vec::new(),
            velocity_kmh: Vec::new(),
            eta: Vec::new(),
            splits: Vec::new(),
            p0_grid: default_p0_grid(),
            l_hat: default_l_hat(),
            q_hat: default_q_hat(),
            af_trials: default_af_trials(),
            modulations: Vec::new(),
            ofdm_pilot_ratio: default_pilot_ratio(),
            cache_dir: None,
        }
    }
}

impl ExperimentSection {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 || self.noise_trials == 0 || self.af_trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        if self.p0_grid.is_empty() {
            return Err(Error::param("p0_grid", "must be nonempty"));
        }
        let unit = |name: &'static str, v: &[f64]| -> Result<()> {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::param(name, "entries must lie in [0, 1]"));
            }
            Ok(())
        };
        unit("eta", &self.eta)?;
        unit("splits", &self.splits)?;
        unit("p0_grid", &self.p0_grid)?;
        if self.velocity_kmh.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param("velocity_kmh", "entries must be nonnegative"));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::param("snr_db", "entries must be finite"));
        }
        if !(self.ofdm_pilot_ratio > 0.0 && self.ofdm_pilot_ratio < 1.0) {
            return Err(Error::param("ofdm_pilot_ratio", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Fails when a sweep the caller needs is empty.
    pub fn require(&self, name: &'static str, grid: &[f64]) -> Result<()> {
        if grid.is_empty() {
            return Err(Error::param(name, "sweep grid must be nonempty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub frame: FrameSection,
    pub channel: ChannelSection,
    pub arrangement: ArrangementSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::param("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::param("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::param("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.build()?;
        self.optimizer.validate()?;
        self.experiment.validate()?;
        if !(self.channel.sigma_h2 > 0.0 && self.channel.sigma_h2.is_finite()) {
            return Err(Error::param("sigma_h2", "must be positive"));
        }
        if !self.channel.snr_db.is_finite() {
            return Err(Error::param("snr_db", "must be finite"));
        }
        if let Some(p) = self.channel.paths {
            let kh = self.channel.taps().len();
            if p == 0 || p > kh {
                return Err(Error::param("paths", format!("must lie in 1..={kh}")));
            }
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<FrameConfig> {
        self.frame.build()
    }

    pub fn plan(&self) -> GuardPlan {
        self.arrangement.plan(&self.channel)
    }

    pub fn sigma_n2(&self) -> f64 {
        self.channel.sigma_n2(self.optimizer.p_max)
    }

    /// Capacity setup: `M = 4`, `N = 64`, the prefix overhead of a 3-sample
    /// CP per slot, `L = 3`, `Q = 8`, pilot ratio 0.25 (`K_p = 48`, `K_d = 144`).
    /// The velocity sweep runs at `channel.snr_db`.
    pub fn table2() -> Self {
        RunConfig {
            frame: FrameSection {
                m: 4,
                n: 64,
                n_cp: 192,
                delta_f: default_delta_f(),
                f_c: default_f_c(),
            },
            channel: ChannelSection {
                max_delay: 3,
                max_doppler: 8,
                doppler_sign: DopplerSign::Unsigned,
                sigma_h2: default_sigma_h2(),
                snr_db: 30.0,
                paths: None,
            },
            arrangement: ArrangementSection {
                pilot_block: Block {
                    delay_start: 0,
                    delay_len: 4,
                    doppler_start: 0,
                    doppler_len: 12,
                },
                data_count: None,
                guard_delay: None,
                guard_doppler: None,
            },
            optimizer: OptimizerConfig::default(),
            experiment: ExperimentSection {
                trials: 2500,
                snr_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
                velocity_kmh: (0..=9).map(|i| 60.0 * i as f64).collect(),
                ..Default::default()
            },
        }
    }

    /// Optimization setup: `M = 8`, `N = 16`, `N_cp = 16`, `L = 7`, `Q = 3`,
    /// `K_p = 24`, `K_d = 40`, SNR 0 dB, ISL window `L̂ = 7`, `Q̂ = 5`.
    pub fn table3() -> Self {
        let plan = GuardPlan::table3();
        RunConfig {
            frame: FrameSection {
                m: 8,
                n: 16,
                n_cp: 16,
                delta_f: default_delta_f(),
                f_c: default_f_c(),
            },
            channel: ChannelSection {
                max_delay: 7,
                max_doppler: 3,
                doppler_sign: DopplerSign::Unsigned,
                sigma_h2: default_sigma_h2(),
                snr_db: 0.0,
                paths: None,
            },
            arrangement: ArrangementSection {
                pilot_block: plan.pilot_block,
                data_count: plan.data_count,
                guard_delay: None,
                guard_doppler: None,
            },
            optimizer: OptimizerConfig::default(),
            experiment: ExperimentSection {
                snr_db: (0..=16).map(|i| -10.0 + 2.5 * i as f64).collect(),
                eta: (0..=10).map(|i| i as f64 / 10.0).collect(),
                splits: (0..=10).map(|i| i as f64 / 10.0).collect(),
                modulations: vec![Modulation::Qpsk, Modulation::Qam16],
                ..Default::default()
            },
        }
    }
}
