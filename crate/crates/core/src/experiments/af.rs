//! Empirical ambiguity-function slices of optimized designs.

use serde::Serialize;

use super::region::run_starts;
use crate::error::{Error, Result};
use crate::optimizer::{OptimizerConfig, Problem};
use crate::sensing::empirical_af;

/// Zero-Doppler and zero-delay cuts, normalized by the mainlobe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AfSlices {
    pub eta: f64,
    pub mainlobe: f64,
    /// `(l, |f_l0|² / |f_00|²)` for `l` in `[-L̂, L̂]`.
    pub zero_doppler: Vec<(i64, f64)>,
    /// `(k, |f_0k|² / |f_00|²)` for `k` in `[-Q̂, Q̂]`.
    pub zero_delay: Vec<(i64, f64)>,
    pub max_zero_doppler_sidelobe: f64,
    pub max_zero_delay_sidelobe: f64,
}

/// Optimizes one design per `η` with the normalized `opt` and averages its
/// AF over `trials` data draws.
pub fn run_af_slices(
    problem: &Problem,
    opt: &OptimizerConfig,
    etas: &[f64],
    p0_grid: &[f64],
    seed: u64,
    trials: usize,
) -> Result<Vec<AfSlices>> {
    let (l_hat, q_hat) = (problem.consts.l_hat, problem.consts.q_hat);
    let mut out = Vec::with_capacity(etas.len());
    for &eta in etas {
        let cfg = OptimizerConfig { eta, ..opt.clone() };
        let runs = run_starts(problem, &cfg, p0_grid)?;
        let d = &runs.best().design;
        let map = empirical_af(&d.x_p, d.p_d, problem.arr, problem.frame, l_hat, q_hat, seed, trials)?;
        let peak = map.get(0, 0);
        if !(peak > 0.0) {
            return Err(Error::Numerical(format!("design at eta {eta} has no mainlobe")));
        }
        let (lh, qh) = (l_hat as i64, q_hat as i64);
        out.push(AfSlices {
            eta,
            mainlobe: peak,
            zero_doppler: (-lh..=lh).map(|l| (l, map.get(l, 0) / peak)).collect(),
            zero_delay: (-qh..=qh).map(|k| (k, map.get(0, k) / peak)).collect(),
            max_zero_doppler_sidelobe: map.max_zero_doppler_sidelobe() / peak,
            max_zero_delay_sidelobe: map.max_zero_delay_sidelobe() / peak,
        });
    }
    Ok(out)
}
