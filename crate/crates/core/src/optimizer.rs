//! Joint pilot / data-power design.
//!
//! The outer loop alternates a closed 1-D data-power step with an ADMM-SCA
//! pilot step. The pilot is split into `x1`, `x2` with consensus dual `d`;
//! the bilinear ISL and the slack `‖A Ξ(x1, x2) - I‖_F²` are convex in each
//! half, so each half-step is a complex QP. `s1` is eliminated at its lower
//! bound `Tr(σ_h² A)`.
//!
//! Objective (maximized): `η SINR'/SINR_ref - (1-η) ISL/ISL_ref`, always
//! evaluated with `s1` at its exact value `Tr(C_ε(x_p))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrangement::Arrangement;
use crate::channel::Dictionaries;
use crate::comm::{error_covariance, sinr_from_trace};
use crate::error::{Error, Result};
use crate::linalg::{inverse_hpd, quad_form, CMatrix, CVector, C64, ZERO};
use crate::modem::FrameConfig;
use crate::qp::{maximize_concave_1d, solve_a_update, solve_qp, ComplexQp, QpOptions, Sense, SolveStatus};
use crate::sensing::{expected_isl, SensingConstants};

/// Feasibility slack applied to power and mainlobe checks.
pub const FEAS_TOL: f64 = 1e-6;
/// Floor on `s1` so `SINR'` stays defined.
const S1_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPattern {
    Spike,
    Flat,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub rho: f64,
    pub zeta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_ao_iters: usize,
    pub max_admm_iters: usize,
    pub p_max: f64,
    /// Mainlobe floor; `None` means half of the full-budget mainlobe
    /// `(MN + N_cp) P_max / 2`.
    pub xi_min: Option<f64>,
    pub sinr_ref: f64,
    pub isl_ref: f64,
    pub init: InitPattern,
    pub p0: f64,
    pub qp_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eta: 0.5,
            rho: 1.0,
            zeta: 1.0,
            eps1: 1e-3,
            eps2: 1e-4,
            max_ao_iters: 50,
            max_admm_iters: 200,
            p_max: 1.0,
            xi_min: None,
            sinr_ref: 1.0,
            isl_ref: 1.0,
            init: InitPattern::Spike,
            p0: 0.5,
            qp_tol: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::param("eta", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::param("p0", "must lie in [0, 1]"));
        }
        for (name, v) in [
            ("rho", self.rho),
            ("zeta", self.zeta),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
            ("p_max", self.p_max),
            ("sinr_ref", self.sinr_ref),
            ("isl_ref", self.isl_ref),
            ("qp_tol", self.qp_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive and finite"));
            }
        }
        if let Some(xi) = self.xi_min {
            if !(xi >= 0.0 && xi.is_finite()) {
                return Err(Error::param("xi_min", "must be nonnegative"));
            }
        }
        if self.max_ao_iters == 0 || self.max_admm_iters == 0 {
            return Err(Error::param("max_iters", "must be at least 1"));
        }
        Ok(())
    }

    fn weights(&self) -> (f64, f64) {
        (self.eta / self.sinr_ref, (1.0 - self.eta) / self.isl_ref)
    }

    /// Weight of the `A Ξ = I` consistency penalty. `A` only feeds the SINR
    /// term, so the penalty shares its weight and vanishes at `eta = 0`.
    fn penalty(&self) -> f64 {
        self.zeta * self.eta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub p_d: f64,
    pub x_p: CVector,
    pub s1: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub x1: CVector,
    pub x2: CVector,
    pub a: CMatrix,
    pub d: CVector,
    pub s1: f64,
    pub m: usize,
}

impl AdmmState {
    pub fn consensus(&self) -> f64 {
        let n1 = self.x1.norm();
        let diff = (&self.x1 - &self.x2).norm();
        if n1 == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / n1
        }
    }
}

/// Metrics of a design point, with `s1` at its exact value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub sinr: f64,
    pub isl: f64,
    pub s1: f64,
    pub power: f64,
    pub mainlobe: f64,
}

/// Everything fixed across one optimization run.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub frame: &'a FrameConfig,
    pub arr: &'a Arrangement,
    pub consts: &'a SensingConstants,
    pub dicts: &'a Dictionaries,
    pub sigma_h2: f64,
    pub sigma_n2: f64,
}

impl<'a> Problem<'a> {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_h2 > 0.0) || !(self.sigma_n2 > 0.0) {
            return Err(Error::param("sigma", "variances must be positive"));
        }
        if self.consts.k_p() != self.dicts.k_p() || self.arr.k_p() != self.dicts.k_p() {
            return Err(Error::dim("pilot count", self.dicts.k_p(), self.consts.k_p()));
        }
        if self.consts.frame_len != self.frame.frame_len() {
            return Err(Error::dim(
                "sensing constants frame length",
                self.frame.frame_len(),
                self.consts.frame_len,
            ));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        self.sigma_h2 / self.sigma_n2
    }

    pub fn k_p(&self) -> usize {
        self.dicts.k_p()
    }

    /// `(MN + N_cp) P_max`: the mainlobe at full power.
    pub fn budget(&self, opt: &OptimizerConfig) -> f64 {
        self.frame.frame_len() as f64 * opt.p_max
    }

    pub fn xi_min(&self, opt: &OptimizerConfig) -> f64 {
        opt.xi_min.unwrap_or(0.5 * self.budget(opt))
    }

    /// `Ξ(x1, x2) = I + κ Ω_p(x2)^H Ω_p(x1)`.
    pub fn xi(&self, x1: &CVector, x2: &CVector) -> Result<CMatrix> {
        let kh = self.dicts.k_h();
        let o1 = self.dicts.omega_p(x1)?;
        let o2 = self.dicts.omega_p(x2)?;
        Ok(CMatrix::identity(kh, kh) + o2.adjoint() * o1 * C64::new(self.kappa(), 0.0))
    }

    /// `Tr(σ_h² (I + Θ(x))^{-1})`.
    pub fn s1_exact(&self, x_p: &CVector) -> Result<f64> {
        let c = error_covariance(&self.dicts.omega_p(x_p)?, self.sigma_h2, self.sigma_n2)?;
        Ok(c.trace().re)
    }

    pub fn evaluate(&self, p_d: f64, x_p: &CVector, opt: &OptimizerConfig) -> Result<Evaluation> {
        let s1 = self.s1_exact(x_p)?;
        let sinr = sinr_from_trace(p_d, s1, self.sigma_n2);
        let isl = expected_isl(p_d, x_p, self.consts)?;
        let mainlobe = p_d * self.consts.g_d + self.consts.pilot_mainlobe(x_p)?;
        let (wc, ws) = opt.weights();
        Ok(Evaluation {
            objective: wc * sinr - ws * isl,
            sinr,
            isl,
            s1,
            power: mainlobe / self.frame.frame_len() as f64,
            mainlobe,
        })
    }

    /// Power and mainlobe violations (positive when violated).
    pub fn violations(&self, p_d: f64, x_p: &CVector, opt: &OptimizerConfig) -> Result<(f64, f64)> {
        let mainlobe = p_d * self.consts.g_d + self.consts.pilot_mainlobe(x_p)?;
        let power = mainlobe / self.frame.frame_len() as f64;
        Ok((power - opt.p_max, self.xi_min(opt) - mainlobe))
    }

    fn check_feasible(&self, p_d: f64, x_p: &CVector, opt: &OptimizerConfig) -> Result<()> {
        let (vp, vm) = self.violations(p_d, x_p, opt)?;
        if vp > FEAS_TOL {
            return Err(Error::Infeasible(format!("transmit power exceeds P_max by {vp:.3e}")));
        }
        if vm > FEAS_TOL {
            return Err(Error::Infeasible(format!("mainlobe below xi_min by {vm:.3e}")));
        }
        Ok(())
    }
}

/// Data-power step: maximizes `η SINR'(p, s1) - (1-η) ISL(p)` over the
/// feasible interval `[max(0, (ξ_min - c5)/c4), (T P_max - c5)/c4]`.
pub fn solve_p_d(problem: &Problem, x_p: &CVector, s1: f64, opt: &OptimizerConfig) -> Result<f64> {
    if !(s1 > 0.0) {
        return Err(Error::param("s1", "must be positive"));
    }
    let poly = problem.consts.isl_polynomial(x_p)?;
    let c4 = problem.consts.g_d;
    let c5 = problem.consts.pilot_mainlobe(x_p)?;
    let lo = ((problem.xi_min(opt) - c5) / c4).max(0.0);
    let hi = (problem.budget(opt) - c5) / c4;
    if lo > hi + FEAS_TOL / c4 {
        return Err(Error::Infeasible(format!(
            "data power interval empty: lower bound {lo:.6e} > upper bound {hi:.6e}"
        )));
    }
    let hi = hi.max(lo);
    let (wc, ws) = opt.weights();
    let sn = problem.sigma_n2;
    let f = |p: f64| wc * p / (p * s1 + sn) - ws * (poly.c1 * p * p + poly.c2 * p + poly.c3);
    let df = |p: f64| {
        let den = p * s1 + sn;
        wc * sn / (den * den) - ws * (2.0 * poly.c1 * p + poly.c2)
    };
    let tol = 1e-12 * hi.max(1.0);
    Ok(maximize_concave_1d(f, Some(&df), lo, hi, tol)?.0)
}

fn cscale(v: f64) -> C64 {
    C64::new(v, 0.0)
}

/// QP in `x1` for fixed `x2`, `A`, `d`. Its objective (including `c0`) equals
/// `w_s Re ISL'(x1, x2) + ρ/2 ‖x1 - x2 + d‖² + ζ/2 ‖A Ξ(x1, x2) - I‖²`.
pub fn x1_subproblem(
    problem: &Problem,
    opt: &OptimizerConfig,
    p_d: f64,
    x2: &CVector,
    a: &CMatrix,
    d: &CVector,
) -> Result<ComplexQp> {
    let consts = problem.consts;
    let dicts = problem.dicts;
    let (kp, kh) = (problem.k_p(), dicts.k_h());
    let (_, ws) = opt.weights();
    let mut quad = CMatrix::zeros(kp, kp);
    let mut lin = CVector::zeros(kp);

    if ws > 0.0 {
        for b in &consts.bins {
            let w = &b.a_p * x2;
            quad.gerc(cscale(ws), &w, &w, C64::new(1.0, 0.0));
        }
        lin += (&consts.b_sum * x2 * cscale(0.5 * p_d) + &consts.ab_sum * x2 * cscale(p_d)) * cscale(ws);
    }

    let v = x2 - d;
    for j in 0..kp {
        quad[(j, j)] += cscale(0.5 * opt.rho);
    }
    lin -= &v * cscale(0.5 * opt.rho);

    // Column i of A Ξ - I is c_i + G Ω̃_{p,i} x1 with G = κ A Ω_p(x2)^H.
    let g = a * problem.dicts.omega_p(x2)?.adjoint() * cscale(problem.kappa());
    let ggram = g.adjoint() * &g;
    let am_i = a - CMatrix::identity(kh, kh);
    let half_zeta = 0.5 * opt.penalty();
    let mut links: Vec<(usize, usize, C64)> = Vec::with_capacity(kp);
    for i in 0..kh {
        links.clear();
        for j in 0..kp {
            if let Some(lk) = dicts.pilot_link(i, j) {
                links.push((j, lk.row, lk.phase));
            }
        }
        let ci = am_i.column(i);
        let gh_c = g.adjoint() * ci;
        for &(j, rj, pj) in &links {
            lin[j] += cscale(half_zeta) * pj.conj() * gh_c[rj];
            for &(jj, rjj, pjj) in &links {
                quad[(j, jj)] += cscale(half_zeta) * pj.conj() * pjj * ggram[(rj, rjj)];
            }
        }
    }
    let c0 = ws * p_d * p_d * consts.c1 + 0.5 * opt.rho * v.norm_squared() + half_zeta * am_i.norm_squared();

    let mut prob = ComplexQp::new(quad, lin)?;
    prob.c0 = c0;
    push_power_constraints(problem, opt, p_d, &consts.g_p * x2, &mut prob)?;
    Ok(prob)
}

/// QP in `x2` for fixed `x1`, `A`, `d`, built through the conjugate
/// transpose `‖Ξ^H A^H - I‖_F`, which is linear in `x2`.
pub fn x2_subproblem(
    problem: &Problem,
    opt: &OptimizerConfig,
    p_d: f64,
    x1: &CVector,
    a: &CMatrix,
    d: &CVector,
) -> Result<ComplexQp> {
    let consts = problem.consts;
    let dicts = problem.dicts;
    let (kp, kh) = (problem.k_p(), dicts.k_h());
    let (_, ws) = opt.weights();
    let mut quad = CMatrix::zeros(kp, kp);
    let mut lin = CVector::zeros(kp);

    if ws > 0.0 {
        for b in &consts.bins {
            let u = b.a_p.adjoint() * x1;
            quad.gerc(cscale(ws), &u, &u, C64::new(1.0, 0.0));
        }
        lin += (&consts.b_sum * x1 * cscale(0.5 * p_d) + consts.ab_sum.adjoint() * x1 * cscale(p_d)) * cscale(ws);
    }

    let v = x1 + d;
    for j in 0..kp {
        quad[(j, j)] += cscale(0.5 * opt.rho);
    }
    lin -= &v * cscale(0.5 * opt.rho);

    // Column t of Ξ^H A^H - I is e_t + N_t x2 with
    // N_t = H1 Σ_i a_t[i] Ω̃_{p,i}, H1 = κ Ω_p(x1)^H, a_t = A^H[:, t].
    let h1 = dicts.omega_p(x1)?.adjoint() * cscale(problem.kappa());
    let ah = a.adjoint();
    let e_all = &ah - CMatrix::identity(kh, kh);
    let half_zeta = 0.5 * opt.penalty();
    let mut n_t = CMatrix::zeros(kh, kp);
    for t in 0..kh {
        n_t.fill(ZERO);
        for i in 0..kh {
            let ati = ah[(i, t)];
            if ati == ZERO {
                continue;
            }
            for j in 0..kp {
                if let Some(lk) = dicts.pilot_link(i, j) {
                    let coef = ati * lk.phase;
                    let col = h1.column(lk.row);
                    let mut dst = n_t.column_mut(j);
                    dst.axpy(coef, &col, C64::new(1.0, 0.0));
                }
            }
        }
        let et = e_all.column(t);
        quad += n_t.adjoint() * &n_t * cscale(half_zeta);
        lin += n_t.adjoint() * et * cscale(half_zeta);
    }
    let c0 = ws * p_d * p_d * consts.c1 + 0.5 * opt.rho * v.norm_squared() + half_zeta * e_all.norm_squared();

    let mut prob = ComplexQp::new(quad, lin)?;
    prob.c0 = c0;
    push_power_constraints(problem, opt, p_d, &consts.g_p * x1, &mut prob)?;
    Ok(prob)
}

/// `ξ_min <= p_d g_d + Re(a^H z) <= T P_max` with `a = G_p x_other`.
fn push_power_constraints(
    problem: &Problem,
    opt: &OptimizerConfig,
    p_d: f64,
    a: CVector,
    prob: &mut ComplexQp,
) -> Result<()> {
    let data = p_d * problem.consts.g_d;
    prob.push(a.clone(), problem.budget(opt) - data, Sense::Le, "transmit power")?;
    let floor = problem.xi_min(opt) - data;
    if floor > 0.0 {
        prob.push(a, floor, Sense::Ge, "mainlobe")?;
    }
    Ok(())
}

fn solve_sub(prob: &ComplexQp, start: &CVector, opt: &OptimizerConfig, which: &str) -> Result<CVector> {
    let rep = solve_qp(
        prob,
        Some(start),
        QpOptions {
            tol: opt.qp_tol,
            max_iter: 100,
        },
    )?;
    match rep.status {
        SolveStatus::Optimal => Ok(rep.z_star),
        SolveStatus::MaxIter => {
            log::debug!("{which} QP stopped at max_iter (kkt {:.3e})", rep.kkt_residual);
            Ok(rep.z_star)
        }
        SolveStatus::Infeasible => {
            let label = violated_label(prob, &rep.z_star);
            Err(Error::Infeasible(format!(
                "{which} subproblem infeasible ({label} constraint)"
            )))
        }
    }
}

fn violated_label(prob: &ComplexQp, z: &CVector) -> &'static str {
    prob.ineqs
        .iter()
        .map(|c| {
            let v = c.a.dotc(z).re;
            let viol = match c.sense {
                Sense::Le => v - c.b,
                Sense::Ge => c.b - v,
            };
            (viol, c.label)
        })
        .fold((f64::NEG_INFINITY, "power/mainlobe"), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        })
        .1
}

/// Starts the ADMM state at a consensus point with `A = Ξ(x, x)^{-1}`.
pub fn admm_start(problem: &Problem, x_p: &CVector) -> Result<AdmmState> {
    let a = inverse_hpd(&problem.xi(x_p, x_p)?, "initial Xi")?;
    let s1 = (problem.sigma_h2 * a.trace().re).max(S1_FLOOR_REL * problem.sigma_h2);
    Ok(AdmmState {
        x1: x_p.clone(),
        x2: x_p.clone(),
        a,
        d: CVector::zeros(x_p.len()),
        s1,
        m: 0,
    })
}

/// One ADMM-SCA cycle: `s1`, `x1`, `x2`, `A`, `d`.
pub fn admm_sca_step(problem: &Problem, opt: &OptimizerConfig, p_d: f64, state: &mut AdmmState) -> Result<()> {
    // The SCA surrogate is decreasing in s1, so s1 sits at its bound.
    state.s1 = (problem.sigma_h2 * state.a.trace().re).max(S1_FLOOR_REL * problem.sigma_h2);
    let q1 = x1_subproblem(problem, opt, p_d, &state.x2, &state.a, &state.d)?;
    state.x1 = solve_sub(&q1, &state.x1, opt, "x1")?;
    let q2 = x2_subproblem(problem, opt, p_d, &state.x1, &state.a, &state.d)?;
    state.x2 = solve_sub(&q2, &state.x2, opt, "x2")?;
    let xi = problem.xi(&state.x1, &state.x2)?;
    if opt.penalty() > 0.0 {
        state.a = solve_a_update(&xi, state.s1, problem.sigma_h2, opt.penalty())?;
    }
    state.d += &state.x1 - &state.x2;
    state.m += 1;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PilotOutcome {
    pub x_p: CVector,
    pub s1: f64,
    pub iterations: usize,
    pub consensus: f64,
    pub converged: bool,
}

/// Runs ADMM-SCA cycles from `x_p` until `‖x1 - x2‖ <= ε1 ‖x1‖`, then returns
/// the consensus average rescaled into the power/mainlobe window.
pub fn solve_pilot(problem: &Problem, opt: &OptimizerConfig, p_d: f64, x_p: &CVector) -> Result<PilotOutcome> {
    let mut state = admm_start(problem, x_p)?;
    let mut converged = false;
    while state.m < opt.max_admm_iters {
        let prev_x2 = state.x2.clone();
        admm_sca_step(problem, opt, p_d, &mut state)?;
        // Primal (consensus) and dual (x2 movement) residuals, both relative.
        let scale = state.x1.norm().max(f64::MIN_POSITIVE);
        let dual = (&state.x2 - &prev_x2).norm() / scale;
        if state.consensus() <= opt.eps1 && dual <= opt.eps1 {
            converged = true;
            break;
        }
    }
    let x = (&state.x1 + &state.x2) * cscale(0.5);
    let x = fit_power_window(problem, opt, p_d, x)?;
    Ok(PilotOutcome {
        s1: problem.s1_exact(&x)?,
        x_p: x,
        iterations: state.m,
        consensus: state.consensus(),
        converged,
    })
}

/// Scales `x` so that `ξ_min <= p_d g_d + x^H G_p x <= T P_max`.
fn fit_power_window(problem: &Problem, opt: &OptimizerConfig, p_d: f64, x: CVector) -> Result<CVector> {
    let data = p_d * problem.consts.g_d;
    let lo = problem.xi_min(opt) - data;
    let hi = problem.budget(opt) - data;
    let c5 = problem.consts.pilot_mainlobe(&x)?;
    let target = if c5 > hi {
        hi.max(0.0)
    } else if c5 < lo {
        lo
    } else {
        return Ok(x);
    };
    if c5 <= 0.0 {
        return Err(Error::Infeasible("pilot vanished below the mainlobe floor".into()));
    }
    Ok(x * cscale((target / c5).sqrt()))
}

/// Per-iteration record of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub objective: f64,
    pub sinr: f64,
    pub isl: f64,
    pub power_violation: f64,
    pub mainlobe_violation: f64,
    pub admm_iterations: usize,
    pub consensus: f64,
    pub pilot_accepted: bool,
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub design: DesignPoint,
    pub eval: Evaluation,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

impl AoResult {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }
}

/// Alternating optimization from `init`. A pilot step is kept only when it
/// does not lower the true objective, so the trace is nondecreasing.
pub fn run_ao(problem: &Problem, opt: &OptimizerConfig, init: &DesignPoint) -> Result<AoResult> {
    opt.validate()?;
    problem.validate()?;
    problem.check_feasible(init.p_d, &init.x_p, opt)?;
    let mut dp = DesignPoint {
        p_d: init.p_d,
        s1: problem.s1_exact(&init.x_p)?,
        x_p: init.x_p.clone(),
    };
    let mut ev = problem.evaluate(dp.p_d, &dp.x_p, opt)?;
    let row = |it, ev: &Evaluation, dp: &DesignPoint, admm, cons, acc| -> Result<TraceRow> {
        let (vp, vm) = problem.violations(dp.p_d, &dp.x_p, opt)?;
        Ok(TraceRow {
            iteration: it,
            objective: ev.objective,
            sinr: ev.sinr,
            isl: ev.isl,
            power_violation: vp,
            mainlobe_violation: vm,
            admm_iterations: admm,
            consensus: cons,
            pilot_accepted: acc,
        })
    };
    let mut trace = vec![row(0, &ev, &dp, 0, 0.0, false)?];
    let mut converged = false;

    for it in 1..=opt.max_ao_iters {
        let prev = ev.objective;
        dp.p_d = solve_p_d(problem, &dp.x_p, dp.s1, opt)?;
        ev = problem.evaluate(dp.p_d, &dp.x_p, opt)?;

        let (mut admm_iters, mut cons, mut accepted) = (0, 0.0, false);
        match solve_pilot(problem, opt, dp.p_d, &dp.x_p) {
            Ok(out) => {
                admm_iters = out.iterations;
                cons = out.consensus;
                if problem.check_feasible(dp.p_d, &out.x_p, opt).is_ok() {
                    let cand = problem.evaluate(dp.p_d, &out.x_p, opt)?;
                    if cand.objective >= ev.objective {
                        dp.x_p = out.x_p;
                        dp.s1 = cand.s1;
                        ev = cand;
                        accepted = true;
                    }
                }
            }
            Err(Error::Infeasible(msg)) => log::debug!("pilot step skipped: {msg}"),
            Err(e) => return Err(e),
        }
        dp.s1 = ev.s1;
        trace.push(row(it, &ev, &dp, admm_iters, cons, accepted)?);
        if (ev.objective - prev).abs() <= opt.eps2 * ev.objective.abs() {
            converged = true;
            break;
        }
    }
    Ok(AoResult {
        design: dp,
        eval: ev,
        trace,
        converged,
    })
}

/// Pilot positions (indices into the pilot list) lit by an init pattern.
pub fn pattern_support(pattern: InitPattern, arr: &Arrangement, cfg: &FrameConfig) -> Vec<usize> {
    let kp = arr.k_p();
    let block = arr.pilot_block();
    let index_of = |cell: usize| arr.pilot_tx().iter().position(|&c| c == cell);
    match (pattern, block) {
        (InitPattern::Flat, _) => (0..kp).collect(),
        (InitPattern::Spike, Some(b)) => {
            let cell = cfg.cell(b.delay_start + b.delay_len / 2, b.doppler_start + b.doppler_len / 2);
            vec![index_of(cell).unwrap_or(kp / 2)]
        }
        (InitPattern::Spike, None) => vec![kp / 2],
        // Half the block in each dimension, anchored at its first corner: a
        // start on a mirror axis of the block never leaves it.
        (InitPattern::Cluster, Some(b)) => {
            let (h, w) = (b.delay_len.div_ceil(2), b.doppler_len.div_ceil(2));
            let (l0, k0) = (b.delay_start, b.doppler_start);
            let mut out = Vec::with_capacity(h * w);
            for k in k0..k0 + w {
                for l in l0..l0 + h {
                    if let Some(i) = index_of(cfg.cell(l, k)) {
                        out.push(i);
                    }
                }
            }
            out
        }
        (InitPattern::Cluster, None) => (0..kp.div_ceil(4).max(1)).collect(),
    }
}

/// Pilot of the given shape holding `p0` of the full-power mainlobe, with
/// data power filling the rest of the budget.
pub fn make_init(pattern: InitPattern, p0: f64, problem: &Problem, opt: &OptimizerConfig) -> Result<DesignPoint> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::param("p0", "must lie in [0, 1]"));
    }
    let kp = problem.k_p();
    let mut x = CVector::zeros(kp);
    for i in pattern_support(pattern, problem.arr, problem.frame) {
        x[i] = C64::new(1.0, 0.0);
    }
    let budget = problem.budget(opt);
    let e = problem.consts.pilot_mainlobe(&x)?;
    if e > 0.0 {
        x *= cscale((p0 * budget / e).sqrt());
    }
    let p_d = (1.0 - p0) * budget / problem.consts.g_d;
    Ok(DesignPoint {
        p_d,
        s1: problem.s1_exact(&x)?,
        x_p: x,
    })
}

/// Runs one AO per `p0` (in parallel) and keeps the best final objective.
pub fn run_multistart(problem: &Problem, opt: &OptimizerConfig, p0_grid: &[f64]) -> Result<(f64, AoResult)> {
    if p0_grid.is_empty() {
        return Err(Error::param("p0_grid", "must be nonempty"));
    }
    let runs: Vec<Result<(f64, AoResult)>> = p0_grid
        .par_iter()
        .map(|&p0| {
            let init = make_init(opt.init, p0, problem, opt)?;
            Ok((p0, run_ao(problem, opt, &init)?))
        })
        .collect();
    let mut best: Option<(f64, AoResult)> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(cand) => {
                if best.as_ref().is_none_or(|b| cand.1.eval.objective > b.1.eval.objective) {
                    best = Some(cand);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Infeasible("no start succeeded".into())))
}

/// `max |x_i|² / ‖x‖²` (0 for the zero vector).
pub fn peak_energy_fraction(x: &CVector) -> f64 {
    let total = x.norm_squared();
    if total == 0.0 {
        return 0.0;
    }
    x.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max) / total
}

/// Reporting view of a pilot: placed on the DD grid, circularly shifted so the
/// peak sits at cell (0, 0), and rotated so that entry is real positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalPilot {
    pub grid: CMatrix,
    pub shift: (usize, usize),
    pub peak_fraction: f64,
}

pub fn canonicalize(x_p: &CVector, arr: &Arrangement, cfg: &FrameConfig) -> Result<CanonicalPilot> {
    if x_p.len() != arr.k_p() {
        return Err(Error::dim("pilot vector", arr.k_p(), x_p.len()));
    }
    let mut grid = CMatrix::zeros(cfg.m, cfg.n);
    let (mut peak, mut peak_val) = ((0, 0), -1.0);
    for (&cell, &v) in arr.pilot_tx().iter().zip(x_p.iter()) {
        let (l, k) = cfg.coords(cell);
        grid[(l, k)] = v;
        if v.norm_sqr() > peak_val {
            peak_val = v.norm_sqr();
            peak = (l, k);
        }
    }
    let phase = if peak_val > 0.0 {
        let p = grid[peak];
        p.conj() / p.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    let mut out = CMatrix::zeros(cfg.m, cfg.n);
    for l in 0..cfg.m {
        for k in 0..cfg.n {
            out[((l + cfg.m - peak.0) % cfg.m, (k + cfg.n - peak.1) % cfg.n)] = grid[(l, k)] * phase;
        }
    }
    Ok(CanonicalPilot {
        grid: out,
        shift: peak,
        peak_fraction: peak_energy_fraction(x_p),
    })
}

/// `Re ISL'(x1, x2)` evaluated term by term.
pub fn isl_split(consts: &SensingConstants, p_d: f64, x1: &CVector, x2: &CVector) -> Result<f64> {
    let mut acc = C64::new(p_d * p_d * consts.c1, 0.0);
    for b in &consts.bins {
        acc += cscale(p_d) * x2.dotc(&(&b.b_mat * x1));
        acc += cscale(2.0 * p_d) * (b.b * x2.dotc(&(b.a_p.adjoint() * x1))).re;
        acc += cscale(x1.dotc(&(&b.a_p * x2)).norm_sqr());
    }
    Ok(acc.re)
}

/// Normalized objective of a design.
pub fn objective(problem: &Problem, dp: &DesignPoint, opt: &OptimizerConfig) -> Result<f64> {
    Ok(problem.evaluate(dp.p_d, &dp.x_p, opt)?.objective)
}

/// `x^H G_p x` helper for callers holding only the constants.
pub fn pilot_energy(consts: &SensingConstants, x_p: &CVector) -> f64 {
    quad_form(x_p, &consts.g_p).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arrangement::{build_arrangement, Block, GuardPlan};
    use crate::channel::{build_dictionaries, DopplerSign};
    use crate::linalg::{cis, cscg_matrix, cscg_vector};
    use crate::sensing::build_sensing_constants;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        cfg: FrameConfig,
        arr: Arrangement,
        consts: SensingConstants,
        dicts: Dictionaries,
    }

    impl Fixture {
        fn small() -> Self {
            let cfg = FrameConfig::with_grid(4, 8, 4).unwrap();
            let plan = GuardPlan {
                pilot_block: Block {
                    delay_start: 0,
                    delay_len: 4,
                    doppler_start: 0,
                    doppler_len: 2,
                },
                delay_margin: 1,
                doppler_margin: 1,
                doppler_sign: DopplerSign::Unsigned,
                data_count: None,
            };
            let arr = build_arrangement(&cfg, &plan).unwrap();
            let consts = build_sensing_constants(&arr, &cfg, 3, 2).unwrap();
            let dicts = build_dictionaries(&arr, &cfg, &plan.taps()).unwrap();
            Fixture {
                cfg,
                arr,
                consts,
                dicts,
            }
        }

        fn problem(&self) -> Problem<'_> {
            Problem {
                frame: &self.cfg,
                arr: &self.arr,
                consts: &self.consts,
                dicts: &self.dicts,
                sigma_h2: 0.5,
                sigma_n2: 1.0,
            }
        }
    }

    fn dense_x1_objective(
        pb: &Problem,
        opt: &OptimizerConfig,
        p_d: f64,
        x1: &CVector,
        x2: &CVector,
        a: &CMatrix,
        d: &CVector,
    ) -> f64 {
        let (_, ws) = opt.weights();
        let kh = pb.dicts.k_h();
        let isl = isl_split(pb.consts, p_d, x1, x2).unwrap();
        let xi = pb.xi(x1, x2).unwrap();
        ws * isl
            + 0.5 * opt.rho * (x1 - x2 + d).norm_squared()
            + 0.5 * opt.penalty() * (a * xi - CMatrix::identity(kh, kh)).norm_squared()
    }

    #[test]
    fn subproblem_objectives_match_dense_evaluation() {
        let fx = Fixture::small();
        let pb = fx.problem();
        let opt = OptimizerConfig {
            eta: 0.3,
            rho: 0.7,
            zeta: 1.3,
            isl_ref: 2.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kp = pb.k_p();
        let kh = pb.dicts.k_h();
        for _ in 0..5 {
            let x1 = cscg_vector(&mut rng, kp, 1.0);
            let x2 = cscg_vector(&mut rng, kp, 1.0);
            let d = cscg_vector(&mut rng, kp, 0.1);
            let a = cscg_matrix(&mut rng, kh, kh, 0.3);
            let p_d = 0.8;
            let q1 = x1_subproblem(&pb, &opt, p_d, &x2, &a, &d).unwrap();
            let want = dense_x1_objective(&pb, &opt, p_d, &x1, &x2, &a, &d);
            assert!(
                (q1.objective(&x1) - want).abs() < 1e-9 * want.abs().max(1.0),
                "x1: {} vs {want}",
                q1.objective(&x1)
            );
            let q2 = x2_subproblem(&pb, &opt, p_d, &x1, &a, &d).unwrap();
            // The x2 subproblem uses ρ/2 ‖x1 - x2 + d‖², the same penalty.
            let want2 = dense_x1_objective(&pb, &opt, p_d, &x1, &x2, &a, &d);
            assert!(
                (q2.objective(&x2) - want2).abs() < 1e-9 * want2.abs().max(1.0),
                "x2: {} vs {want2}",
                q2.objective(&x2)
            );
        }
    }

    #[test]
    fn split_isl_reduces_to_expected_isl_at_consensus() {
        let fx = Fixture::small();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = cscg_vector(&mut rng, fx.arr.k_p(), 1.0);
        let a = isl_split(&fx.consts, 0.6, &x, &x).unwrap();
        let b = expected_isl(0.6, &x, &fx.consts).unwrap();
        assert!((a - b).abs() < 1e-9 * b);
    }

    #[test]
    fn p_d_extremes() {
        let fx = Fixture::small();
        let pb = fx.problem();
        let base = OptimizerConfig {
            xi_min: Some(0.0),
            ..Default::default()
        };
        let init = make_init(InitPattern::Flat, 0.4, &pb, &base).unwrap();
        let c5 = pb.consts.pilot_mainlobe(&init.x_p).unwrap();
        let hi = (pb.budget(&base) - c5) / pb.consts.g_d;
        let comm = OptimizerConfig {
            eta: 1.0,
            ..base.clone()
        };
        let p = solve_p_d(&pb, &init.x_p, init.s1, &comm).unwrap();
        assert!((p - hi).abs() < 1e-9 * hi);
        let sense = OptimizerConfig {
            eta: 0.0,
            ..base.clone()
        };
        let p = solve_p_d(&pb, &init.x_p, init.s1, &sense).unwrap();
        assert!(p.abs() < 1e-12);
        let tight = OptimizerConfig {
            eta: 0.0,
            xi_min: Some(0.9 * pb.budget(&base)),
            ..base.clone()
        };
        let p = solve_p_d(&pb, &init.x_p, init.s1, &tight).unwrap();
        assert!((p - (0.9 * pb.budget(&base) - c5) / pb.consts.g_d).abs() < 1e-9);
        let impossible = OptimizerConfig {
            xi_min: Some(2.0 * pb.budget(&base)),
            ..base
        };
        assert!(matches!(
            solve_p_d(&pb, &init.x_p, init.s1, &impossible),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn init_patterns_meet_budget() {
        let fx = Fixture::small();
        let pb = fx.problem();
        let opt = OptimizerConfig::default();
        for pattern in [InitPattern::Spike, InitPattern::Flat, InitPattern::Cluster] {
            let dp = make_init(pattern, 0.5, &pb, &opt).unwrap();
            let ev = pb.evaluate(dp.p_d, &dp.x_p, &opt).unwrap();
            assert!((ev.power - opt.p_max).abs() < 1e-9);
            assert!((dp.s1 - ev.s1).abs() < 1e-12);
        }
        let spike = make_init(InitPattern::Spike, 1.0, &pb, &opt).unwrap();
        assert_eq!(spike.x_p.iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert_eq!(spike.p_d, 0.0);
        assert_eq!(pattern_support(InitPattern::Cluster, &fx.arr, &fx.cfg).len(), 2);
        let flat = make_init(InitPattern::Flat, 0.5, &pb, &opt).unwrap();
        let e0 = flat.x_p[0].norm_sqr();
        assert!(flat.x_p.iter().all(|z| (z.norm_sqr() - e0).abs() < 1e-12));
    }

    #[test]
    fn objective_is_phase_invariant() {
        let fx = Fixture::small();
        let pb = fx.problem();
        let opt = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = cscg_vector(&mut rng, pb.k_p(), 1.0);
        let a = pb.evaluate(0.3, &x, &opt).unwrap();
        let b = pb.evaluate(0.3, &(&x * cis(1.1)), &opt).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-10);
        assert!((a.sinr - b.sinr).abs() < 1e-12 && (a.isl - b.isl).abs() < 1e-9);
    }

    #[test]
    fn canonical_view() {
        let fx = Fixture::small();
        let mut x = CVector::zeros(fx.arr.k_p());
        x[5] = C64::new(0.0, -2.0);
        x[1] = C64::new(0.1, 0.0);
        let c = canonicalize(&x, &fx.arr, &fx.cfg).unwrap();
        assert!((c.grid[(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((c.peak_fraction - 4.0 / 4.01).abs() < 1e-12);
        assert_eq!(peak_energy_fraction(&CVector::zeros(3)), 0.0);
    }

    #[test]
    fn ao_trace_is_monotone_and_feasible() {
        let fx = Fixture::small();
        let pb = fx.problem();
        let opt = OptimizerConfig {
            eta: 0.5,
            max_ao_iters: 10,
            max_admm_iters: 30,
            ..Default::default()
        };
        let init = make_init(InitPattern::Flat, 0.5, &pb, &opt).unwrap();
        let res = run_ao(&pb, &opt, &init).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].objective >= w[0].objective - 1e-6);
        }
        let (vp, vm) = pb.violations(res.design.p_d, &res.design.x_p, &opt).unwrap();
        assert!(vp <= FEAS_TOL && vm <= FEAS_TOL);
        let exact = pb.s1_exact(&res.design.x_p).unwrap();
        assert!((res.design.s1 - exact).abs() <= 1e-4 * exact);
    }
}
