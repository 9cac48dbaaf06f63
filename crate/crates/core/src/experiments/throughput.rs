//! Frame-level throughput `R = (K_d b Δf / N)(1 - BER)^{K_d b}` of coded-free
//! Gray QAM through the full estimate-then-equalize receiver.
//!
//! Per channel draw and noise draw: pilot observation, LMMSE channel
//! estimate, data through the true channel, LMMSE equalization with the
//! estimation error folded into the noise, per-stream unbiasing, hard
//! decisions. Designs, SNRs and constellations share the channel, noise and
//! bit draws.

use rand::Rng;
use serde::Serialize;

use super::region::{run_starts, Design};
use super::{Setup, LANE_CHANNEL, LANE_DATA, LANE_NOISE};
use crate::channel::draw_channel;
use crate::comm::{effective_noise_cov, error_covariance, lmmse_weights, CommInputs};
use crate::config::{snr_to_noise, Modulation};
use crate::error::{Error, Result};
use crate::linalg::{cscg_vector, inverse_hpd, solve_hpd, CMatrix, CVector, C64};
use crate::optimizer::{make_init, DesignPoint, OptimizerConfig, Problem};
use crate::parallel::{map_chunks, sum_in_order};
use crate::rng::stream;

/// Gray levels per axis, unit average symbol energy after scaling.
fn axis_levels(m: Modulation) -> (&'static [f64], f64) {
    match m {
        Modulation::Qpsk => (&[-1.0, 1.0], 0.5f64.sqrt()),
        Modulation::Qam16 => (&[-3.0, -1.0, 1.0, 3.0], 0.1f64.sqrt()),
    }
}

/// Gray label of level index `i` on one axis.
fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

pub fn map_symbol(m: Modulation, bits: &[u8]) -> C64 {
    let (levels, scale) = axis_levels(m);
    let half = bits.len() / 2;
    let axis = |bs: &[u8]| {
        let label = bs.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize);
        let idx = (0..levels.len()).find(|&i| gray(i) == label).expect("label in range");
        levels[idx] * scale
    };
    C64::new(axis(&bits[..half]), axis(&bits[half..]))
}

/// Hard decision per axis; writes `m.bits()` bits.
pub fn demap_symbol(m: Modulation, z: C64, out: &mut [u8]) {
    let (levels, scale) = axis_levels(m);
    let half = m.bits() / 2;
    let axis = |v: f64, dst: &mut [u8]| {
        let idx = (0..levels.len())
            .min_by(|&a, &b| (levels[a] * scale - v).abs().total_cmp(&(levels[b] * scale - v).abs()))
            .expect("nonempty");
        let label = gray(idx);
        for (k, d) in dst.iter_mut().enumerate() {
            *d = ((label >> (half - 1 - k)) & 1) as u8;
        }
    };
    let (re, im) = out.split_at_mut(half);
    axis(z.re, re);
    axis(z.im, im);
}

/// `K_d b Δf / N`, the error-free rate in bit/s.
pub fn ceiling(setup: &Setup, m: Modulation) -> f64 {
    (setup.dicts.k_d() * m.bits()) as f64 * setup.frame.delta_f / setup.frame.n as f64
}

pub fn rate_from_ber(ceiling: f64, ber: f64, bits_per_frame: usize) -> f64 {
    ceiling * (1.0 - ber).powi(bits_per_frame as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputDesign {
    pub design: Design,
    /// Share of the budget on the pilot.
    pub split: f64,
    #[serde(skip)]
    pub point: DesignPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputPoint {
    pub design: Design,
    pub modulation: Modulation,
    pub snr_db: f64,
    pub ber: f64,
    /// Standard error of `ber` across channel draws.
    pub ber_stderr: f64,
    pub throughput: f64,
    /// Delta-method standard error of `throughput`.
    pub throughput_stderr: f64,
    pub ceiling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub designs: Vec<ThroughputDesign>,
    pub points: Vec<ThroughputPoint>,
}

impl ThroughputReport {
    pub fn get(&self, design: Design, m: Modulation, snr_db: f64) -> Option<&ThroughputPoint> {
        self.points
            .iter()
            .find(|p| p.design == design && p.modulation == m && p.snr_db == snr_db)
    }

    /// Lowest SNR on the grid at which `design` reaches `frac` of its ceiling.
    pub fn snr_reaching(&self, design: Design, m: Modulation, frac: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|p| p.design == design && p.modulation == m && p.throughput >= frac * p.ceiling)
            .map(|p| p.snr_db)
            .min_by(f64::total_cmp)
    }
}

/// Communication-only optimized design plus flat and cluster layouts with
/// the same pilot share of the budget.
pub fn throughput_designs(problem: &Problem, opt: &OptimizerConfig, p0_grid: &[f64]) -> Result<Vec<ThroughputDesign>> {
    let cfg = OptimizerConfig {
        eta: 1.0,
        ..opt.clone()
    };
    let best = run_starts(problem, &cfg, p0_grid)?.best().design.clone();
    let budget = problem.budget(&cfg);
    let split = (problem.consts.pilot_mainlobe(&best.x_p)? / budget).clamp(0.0, 1.0);
    let mut out = vec![ThroughputDesign {
        design: Design::Optimized,
        split,
        point: best,
    }];
    for design in [Design::Cluster, Design::Flat] {
        let point = make_init(design.pattern().expect("baseline"), split, problem, &cfg)?;
        out.push(ThroughputDesign { design, split, point });
    }
    Ok(out)
}

/// Receiver quantities that depend on the design and SNR only.
struct Receiver {
    p_d: f64,
    omega: CMatrix,
    est: CMatrix,
    sigma_n: f64,
    /// `Σ_v^{-1}`.
    noise_inv: CMatrix,
}

fn receiver(setup: &Setup, dp: &DesignPoint, sigma_n2: f64) -> Result<Receiver> {
    let omega = setup.dicts.omega_p(&dp.x_p)?;
    let est = lmmse_weights(&omega, setup.sigma_h2, sigma_n2)?;
    let c_eps = error_covariance(&omega, setup.sigma_h2, sigma_n2)?;
    let inputs = CommInputs {
        p_d: dp.p_d,
        sigma_n2,
        dicts: &setup.dicts,
        cp_factor: setup.frame.cp_factor(),
        mn: setup.frame.mn(),
    };
    Ok(Receiver {
        p_d: dp.p_d,
        omega,
        est,
        sigma_n: sigma_n2.sqrt(),
        noise_inv: inverse_hpd(&effective_noise_cov(&inputs, &c_eps)?, "effective noise")?,
    })
}

/// Unbiased LMMSE symbol estimates `ŝ = diag(G)^{-1} (p_d A + I)^{-1} √p_d Ĥ^H Σ_v^{-1} y`
/// with `A = Ĥ^H Σ_v^{-1} Ĥ` and `G = p_d (p_d A + I)^{-1} A`, one per observation.
fn equalize(rx: &Receiver, h_hat: &CMatrix, ys: &[CVector]) -> Result<Vec<CVector>> {
    let kd = h_hat.ncols();
    let g = &rx.noise_inv * h_hat;
    let a = h_hat.adjoint() * &g;
    let mut lhs = &a * C64::new(rx.p_d, 0.0);
    for i in 0..kd {
        lhs[(i, i)] += C64::new(1.0, 0.0);
    }
    let mut rhs = CMatrix::zeros(kd, kd + ys.len());
    rhs.columns_mut(0, kd).copy_from(&a);
    let gh = g.adjoint();
    for (c, y) in ys.iter().enumerate() {
        rhs.set_column(kd + c, &(&gh * y));
    }
    let sol = solve_hpd(&lhs, &rhs, "equalizer")?;
    let sp = rx.p_d.sqrt();
    Ok((0..ys.len())
        .map(|c| {
            CVector::from_fn(kd, |j, _| {
                let gain = sol[(j, j)] * rx.p_d;
                let z = sol[(j, kd + c)] * sp;
                if gain.norm() > 0.0 {
                    z / gain
                } else {
                    z
                }
            })
        })
        .collect())
}

fn draw_bits<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn modulate(m: Modulation, bits: &[u8]) -> CVector {
    let b = m.bits();
    CVector::from_iterator(bits.len() / b, bits.chunks(b).map(|c| map_symbol(m, c)))
}

fn bit_errors(m: Modulation, s_hat: &CVector, bits: &[u8]) -> usize {
    let b = m.bits();
    let mut buf = vec![0u8; b];
    s_hat
        .iter()
        .zip(bits.chunks(b))
        .map(|(&z, truth)| {
            demap_symbol(m, z, &mut buf);
            buf.iter().zip(truth).filter(|(a, b)| a != b).count()
        })
        .sum()
}

/// Throughput of each design per modulation and SNR over `trials` channel
/// draws with `noise_trials` noise draws each.
#[allow(clippy::too_many_arguments)]
pub fn run_throughput(
    setup: &Setup,
    designs: &[ThroughputDesign],
    modulations: &[Modulation],
    snr_db: &[f64],
    p_max: f64,
    trials: usize,
    noise_trials: usize,
    seed: u64,
) -> Result<ThroughputReport> {
    if trials == 0 || noise_trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if designs.is_empty() || modulations.is_empty() || snr_db.is_empty() {
        return Err(Error::param(
            "throughput",
            "designs, modulations and SNRs must be nonempty",
        ));
    }
    let (nd, nm, ns) = (designs.len(), modulations.len(), snr_db.len());
    let slot = |d: usize, m: usize, s: usize| (d * nm + m) * ns + s;
    let mut receivers = Vec::with_capacity(nd * ns);
    for td in designs {
        for &snr in snr_db {
            receivers.push(receiver(setup, &td.point, snr_to_noise(snr, p_max))?);
        }
    }
    let (kd, rp, rd) = (setup.dicts.k_d(), setup.dicts.r_p(), setup.dicts.r_d());
    let cells = nd * nm * ns;
    // Per slot: error count, then the sum of squared per-channel BERs.
    let parts = map_chunks(trials, 4, |a, b| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; 2 * cells];
        for t in a..b {
            let h = draw_channel(
                &mut stream(seed, 0, t as u64, LANE_CHANNEL),
                &setup.taps,
                setup.sigma_h2,
                setup.paths,
            )?;
            let h_d = setup.dicts.data_channel(&h)?;
            let mut per_channel = vec![0.0; cells];
            for u in 0..noise_trials {
                let id = (t * noise_trials + u) as u64;
                let mut nrng = stream(seed, 0, id, LANE_NOISE);
                let n_p = cscg_vector(&mut nrng, rp, 1.0);
                let n_d = cscg_vector(&mut nrng, rd, 1.0);
                let payload: Vec<(Vec<u8>, CVector)> = modulations
                    .iter()
                    .map(|&m| {
                        let bits = draw_bits(&mut stream(seed, m.bits() as u64, id, LANE_DATA), kd * m.bits());
                        let s = modulate(m, &bits);
                        (bits, s)
                    })
                    .collect();
                for d in 0..nd {
                    for s in 0..ns {
                        let rx = &receivers[d * ns + s];
                        let y_p = &rx.omega * &h + &n_p * C64::new(rx.sigma_n, 0.0);
                        let h_hat = setup.dicts.data_channel(&(&rx.est * y_p))?;
                        let noise = &n_d * C64::new(rx.sigma_n, 0.0);
                        let ys: Vec<CVector> = payload
                            .iter()
                            .map(|(_, sym)| &h_d * sym * C64::new(rx.p_d.sqrt(), 0.0) + &noise)
                            .collect();
                        let s_hats = equalize(rx, &h_hat, &ys)?;
                        for (m, ((bits, _), s_hat)) in payload.iter().zip(&s_hats).enumerate() {
                            let errs = bit_errors(modulations[m], s_hat, bits) as f64;
                            acc[slot(d, m, s)] += errs;
                            per_channel[slot(d, m, s)] += errs;
                        }
                    }
                }
            }
            for d in 0..nd {
                for (m, md) in modulations.iter().enumerate() {
                    let denom = (noise_trials * kd * md.bits()) as f64;
                    for s in 0..ns {
                        let ber = per_channel[slot(d, m, s)] / denom;
                        acc[cells + slot(d, m, s)] += ber * ber;
                    }
                }
            }
        }
        Ok(acc)
    });
    let parts: Result<Vec<Vec<f64>>> = parts.into_iter().collect();
    let acc = sum_in_order(parts?);
    let mut points = Vec::with_capacity(cells);
    let tn = trials as f64;
    for (d, td) in designs.iter().enumerate() {
        for (m, &md) in modulations.iter().enumerate() {
            let nbits = kd * md.bits();
            let cap = ceiling(setup, md);
            for (s, &snr) in snr_db.iter().enumerate() {
                let ber = acc[slot(d, m, s)] / (tn * (noise_trials * nbits) as f64);
                let var = (acc[cells + slot(d, m, s)] / tn - ber * ber).max(0.0);
                let ber_stderr = if trials > 1 { (var / (tn - 1.0)).sqrt() } else { 0.0 };
                let slope = cap * nbits as f64 * (1.0 - ber).powi(nbits as i32 - 1);
                points.push(ThroughputPoint {
                    design: td.design,
                    modulation: md,
                    snr_db: snr,
                    ber,
                    ber_stderr,
                    throughput: rate_from_ber(cap, ber, nbits),
                    throughput_stderr: slope * ber_stderr,
                    ceiling: cap,
                });
            }
        }
    }
    Ok(ThroughputReport {
        designs: designs.to_vec(),
        points,
    })
}

/// Noiseless delivery with the true channel, zero-forcing the data block.
/// Returns the throughput per modulation, which equals the ceiling whenever
/// `H_d` has full column rank.
pub fn perfect_csi_throughput(
    setup: &Setup,
    dp: &DesignPoint,
    modulations: &[Modulation],
    trials: usize,
    seed: u64,
) -> Result<Vec<(Modulation, f64)>> {
    let kd = setup.dicts.k_d();
    let mut out = Vec::with_capacity(modulations.len());
    for &m in modulations {
        let mut errors = 0usize;
        for t in 0..trials {
            let h = draw_channel(
                &mut stream(seed, 0, t as u64, LANE_CHANNEL),
                &setup.taps,
                setup.sigma_h2,
                setup.paths,
            )?;
            let h_d = setup.dicts.data_channel(&h)?;
            let bits = draw_bits(&mut stream(seed, m.bits() as u64, t as u64, LANE_DATA), kd * m.bits());
            let sym = modulate(m, &bits);
            let sp = C64::new(dp.p_d.sqrt(), 0.0);
            let y = &h_d * &sym * sp;
            let gram = h_d.adjoint() * &h_d;
            let rhs = CMatrix::from_column_slice(kd, 1, (h_d.adjoint() * y).as_slice());
            let s_hat = solve_hpd(&gram, &rhs, "zero forcing")?.column(0) / sp;
            errors += bit_errors(m, &s_hat, &bits);
        }
        let ber = errors as f64 / (trials * kd * m.bits()) as f64;
        out.push((m, rate_from_ber(ceiling(setup, m), ber, kd * m.bits())));
    }
    Ok(out)
}
