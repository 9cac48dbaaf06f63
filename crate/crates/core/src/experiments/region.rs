//! ISL-SINR trade-off: the optimized curve swept over `η`, the flat and
//! cluster baselines swept over the pilot power split.

use rayon::prelude::*;
use serde::Serialize;

use super::to_db;
use crate::error::{Error, Result};
use crate::optimizer::{make_init, peak_energy_fraction, run_ao, AoResult, InitPattern, OptimizerConfig, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Design {
    Optimized,
    Flat,
    Cluster,
}

impl Design {
    pub fn label(self) -> &'static str {
        match self {
            Design::Optimized => "optimized",
            Design::Flat => "flat",
            Design::Cluster => "cluster",
        }
    }

    pub fn pattern(self) -> Option<InitPattern> {
        match self {
            Design::Optimized => None,
            Design::Flat => Some(InitPattern::Flat),
            Design::Cluster => Some(InitPattern::Cluster),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionPoint {
    pub design: Design,
    /// `η` for the optimized curve, pilot power split for the baselines.
    pub param: f64,
    pub sinr: f64,
    pub isl: f64,
    pub sinr_db: f64,
    /// Relative to the ISL reference.
    pub isl_db: f64,
    pub p_d: f64,
    pub peak_fraction: f64,
}

/// Gains of the optimized curve over one baseline, both positive when the
/// optimized design is better.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGap {
    pub baseline: Design,
    /// Largest baseline ISL minus largest optimized ISL.
    pub worst_isl_db: f64,
    /// Best optimized SINR minus best baseline SINR.
    pub best_sinr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionReport {
    pub sinr_ref: f64,
    pub isl_ref: f64,
    pub points: Vec<RegionPoint>,
    /// Baseline points no optimized point matches on both axes.
    pub undominated: Vec<RegionPoint>,
    pub gaps: Vec<RegionGap>,
}

/// Every start of a multistart run, in `p0` order; `best` indexes the winner.
#[derive(Debug, Clone)]
pub struct MultistartRuns {
    pub runs: Vec<(f64, AoResult)>,
    pub best: usize,
}

impl MultistartRuns {
    pub fn best(&self) -> &AoResult {
        &self.runs[self.best].1
    }

    pub fn best_p0(&self) -> f64 {
        self.runs[self.best].0
    }
}

/// One AO per `p0` from `opt.init`. Starts that fail as infeasible are
/// dropped; the run fails only when none survives.
pub fn run_starts(problem: &Problem, opt: &OptimizerConfig, p0_grid: &[f64]) -> Result<MultistartRuns> {
    if p0_grid.is_empty() {
        return Err(Error::param("p0_grid", "must be nonempty"));
    }
    let results: Vec<Result<(f64, AoResult)>> = p0_grid
        .par_iter()
        .map(|&p0| {
            let init = make_init(opt.init, p0, problem, opt)?;
            Ok((p0, run_ao(problem, opt, &init)?))
        })
        .collect();
    let mut runs = Vec::with_capacity(results.len());
    let mut last_err = None;
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e @ Error::Infeasible(_)) => {
                log::warn!("start skipped: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let best = (0..runs.len())
        .max_by(|&a, &b| runs[a].1.eval.objective.total_cmp(&runs[b].1.eval.objective))
        .ok_or_else(|| last_err.unwrap_or_else(|| Error::Infeasible("no start succeeded".into())))?;
    Ok(MultistartRuns { runs, best })
}

/// Normalization levels: SINR and ISL of the communication-only design.
pub fn reference_levels(problem: &Problem, opt: &OptimizerConfig, p0_grid: &[f64]) -> Result<(f64, f64)> {
    let comm_only = OptimizerConfig {
        eta: 1.0,
        sinr_ref: 1.0,
        isl_ref: 1.0,
        ..opt.clone()
    };
    let runs = run_starts(problem, &comm_only, p0_grid)?;
    let ev = &runs.best().eval;
    if !(ev.sinr > 0.0 && ev.isl > 0.0) {
        return Err(Error::Numerical("reference design has a vanishing metric".into()));
    }
    Ok((ev.sinr, ev.isl))
}

/// `opt` with the references replaced by the communication-only levels.
pub fn normalized(problem: &Problem, opt: &OptimizerConfig, p0_grid: &[f64]) -> Result<OptimizerConfig> {
    let (sinr_ref, isl_ref) = reference_levels(problem, opt, p0_grid)?;
    Ok(OptimizerConfig {
        sinr_ref,
        isl_ref,
        ..opt.clone()
    })
}

fn point(design: Design, param: f64, sinr: f64, isl: f64, p_d: f64, peak: f64, isl_ref: f64) -> RegionPoint {
    RegionPoint {
        design,
        param,
        sinr,
        isl,
        sinr_db: to_db(sinr),
        isl_db: to_db(isl / isl_ref),
        p_d,
        peak_fraction: peak,
    }
}

/// Whether some optimized point is at least as good on both axes.
pub fn dominated(target: &RegionPoint, front: &[RegionPoint]) -> bool {
    const REL: f64 = 1e-9;
    front
        .iter()
        .any(|o| o.sinr >= target.sinr * (1.0 - REL) && o.isl <= target.isl * (1.0 + REL))
}

/// The normalized `opt` should come from [`normalized`]. Points whose
/// optimization is infeasible are logged and skipped.
pub fn run_region(
    problem: &Problem,
    opt: &OptimizerConfig,
    eta_grid: &[f64],
    splits: &[f64],
    p0_grid: &[f64],
) -> Result<RegionReport> {
    if eta_grid.is_empty() || splits.is_empty() {
        return Err(Error::param("region", "eta and split grids must be nonempty"));
    }
    let mut points = Vec::new();
    for &eta in eta_grid {
        let cfg = OptimizerConfig { eta, ..opt.clone() };
        match run_starts(problem, &cfg, p0_grid) {
            Ok(runs) => {
                let r = runs.best();
                points.push(point(
                    Design::Optimized,
                    eta,
                    r.eval.sinr,
                    r.eval.isl,
                    r.design.p_d,
                    peak_energy_fraction(&r.design.x_p),
                    opt.isl_ref,
                ));
            }
            Err(Error::Infeasible(msg)) => log::warn!("eta {eta} skipped: {msg}"),
            Err(e) => return Err(e),
        }
    }
    for design in [Design::Flat, Design::Cluster] {
        let pattern = design.pattern().expect("baseline");
        for &split in splits {
            let dp = make_init(pattern, split, problem, opt)?;
            let ev = problem.evaluate(dp.p_d, &dp.x_p, opt)?;
            points.push(point(
                design,
                split,
                ev.sinr,
                ev.isl,
                dp.p_d,
                peak_energy_fraction(&dp.x_p),
                opt.isl_ref,
            ));
        }
    }
    let front: Vec<RegionPoint> = points
        .iter()
        .filter(|p| p.design == Design::Optimized)
        .cloned()
        .collect();
    if front.is_empty() {
        return Err(Error::Infeasible("no optimized point".into()));
    }
    let undominated = points
        .iter()
        .filter(|p| p.design != Design::Optimized && !dominated(p, &front))
        .cloned()
        .collect();
    let max_of = |d: Design, f: fn(&RegionPoint) -> f64| {
        points
            .iter()
            .filter(|p| p.design == d)
            .map(f)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let gaps = [Design::Cluster, Design::Flat]
        .into_iter()
        .map(|b| RegionGap {
            baseline: b,
            worst_isl_db: max_of(b, |p| p.isl_db) - max_of(Design::Optimized, |p| p.isl_db),
            best_sinr_db: max_of(Design::Optimized, |p| p.sinr_db) - max_of(b, |p| p.sinr_db),
        })
        .collect();
    Ok(RegionReport {
        sinr_ref: opt.sinr_ref,
        isl_ref: opt.isl_ref,
        points,
        undominated,
        gaps,
    })
}
