//! OTFS dual-function radar/communication waveform design.
//!
//! The crate covers the full chain from delay-Doppler (DD) modulation to the
//! joint pilot/data optimizer:
//!
//! * [`modem`]: unitary DD <-> TF <-> time transforms and cyclic prefix handling.
//! * [`arrangement`]: pilot/data/guard placement on the DD grid.
//! * [`channel`]: integer-tap DD channels, received-signal simulation and the
//!   pilot/data dictionaries used by the estimator.
//! * [`comm`]: LMMSE estimation, capacity lower bounds and the SINR metric.
//! * [`sensing`]: ambiguity-function constants, expected ISL and mainlobe.
//! * [`qp`]: small dense solvers (1-D concave search, interior-point QP, A-update).
//! * [`optimizer`]: alternating optimization with an ADMM-SCA pilot step.
//! * [`experiments`]: seeded Monte Carlo harnesses and CSV/JSON export.
//!
//! Conventions used everywhere:
//!
//! * DD vectors are column-major over the `M x N` grid: `index = delay + M * doppler`.
//! * DFT matrices are unitary.
//! * Channel taps are ordered delay-major: `index = l * n_doppler + (k - k_min)`.

// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arrangement;
pub mod channel;
pub mod comm;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod modem;
pub mod optimizer;
pub mod parallel;
pub mod qp;
pub mod rng;
pub mod sensing;

pub use arrangement::{Arrangement, Block, GuardPlan};
pub use channel::{ChannelSpec, Dictionaries, DopplerSign, Path, TapGrid};
pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
pub use modem::{DdVector, FrameConfig};

pub use config::{Modulation, RunConfig};
pub use experiments::Setup;
pub use optimizer::{AoResult, DesignPoint, Evaluation, InitPattern, OptimizerConfig, Problem};
pub use sensing::SensingConstants;
