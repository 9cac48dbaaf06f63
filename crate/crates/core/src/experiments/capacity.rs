//! Capacity lower bounds versus SNR and versus mobility, OTFS against the
//! OFDM reference on the same channel draws.
//!
//! Symbols have unit power and `σ_n² = 10^{-SNR/10}`. Within a trial the
//! pilots and unit-variance noise are drawn once and rescaled per SNR, so the
//! curves are smooth in SNR. Rates are bits per transmitted sample.

use std::f64::consts::LN_2;

use serde::Serialize;

use super::ofdm::OfdmLink;
use super::{Setup, LANE_CHANNEL, LANE_OFDM, LANE_OTFS};
use crate::channel::{draw_channel, TapGrid};
use crate::comm::{capacity_lb_matrix, capacity_lb_scalar, lmmse_estimate, CommInputs};
use crate::config::snr_to_noise;
use crate::error::{Error, Result};
use crate::linalg::{cscg_vector, C64};
use crate::modem::FrameConfig;
use crate::parallel::map_chunks;
use crate::rng::stream;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One trial at one SNR, in bits per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacitySample {
    pub trial: usize,
    pub snr_db: f64,
    pub otfs_matrix: f64,
    pub otfs_scalar: f64,
    pub ofdm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub snr_db: f64,
    pub otfs_matrix: f64,
    pub otfs_scalar: f64,
    pub ofdm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub points: Vec<CapacityPoint>,
    /// Trial-major.
    pub samples: Vec<CapacitySample>,
}

/// Nearest Doppler tap for speed `v_mps`: `ν = v f_c / c`, one tap per
/// `Δf / N` Hz. Taps past `N / 2` alias and are only warned about.
pub fn velocity_to_doppler(v_mps: f64, cfg: &FrameConfig) -> Result<usize> {
    if !(v_mps >= 0.0 && v_mps.is_finite()) {
        return Err(Error::param("velocity", "must be nonnegative"));
    }
    let tap = doppler_hz(v_mps, cfg) * cfg.n as f64 / cfg.delta_f;
    let tap = tap.round() as usize;
    if tap > cfg.n / 2 {
        log::warn!("Doppler tap {tap} exceeds N/2 = {} and aliases", cfg.n / 2);
    }
    Ok(tap)
}

pub fn doppler_hz(v_mps: f64, cfg: &FrameConfig) -> f64 {
    v_mps * cfg.f_c / SPEED_OF_LIGHT
}

/// OFDM reference matching the OTFS frame: `N` slots of `M` subcarriers and
/// the OTFS prefix spread evenly over the slots.
pub fn matched_ofdm(setup: &Setup, pilot_ratio: f64) -> Result<OfdmLink> {
    let f = &setup.frame;
    if !f.n_cp.is_multiple_of(f.n) {
        return Err(Error::param(
            "n_cp",
            format!("{} must split evenly over {} OFDM slots", f.n_cp, f.n),
        ));
    }
    OfdmLink::new(f.m, f.n, f.n_cp / f.n, pilot_ratio, setup.taps, setup.sigma_h2)
}

fn trial_bounds(
    setup: &Setup,
    ofdm: &OfdmLink,
    snr_db: &[f64],
    seed: u64,
    point: u64,
    t: usize,
) -> Result<Vec<CapacitySample>> {
    let trial = t as u64;
    let h = draw_channel(
        &mut stream(seed, point, trial, LANE_CHANNEL),
        &setup.taps,
        setup.sigma_h2,
        setup.paths,
    )?;
    let mut rng = stream(seed, point, trial, LANE_OTFS);
    let x_p = cscg_vector(&mut rng, setup.dicts.k_p(), 1.0);
    let unit_noise = cscg_vector(&mut rng, setup.dicts.r_p(), 1.0);
    let omega = setup.dicts.omega_p(&x_p)?;
    let clean = &omega * &h;
    let mut out = Vec::with_capacity(snr_db.len());
    for &snr in snr_db {
        let sigma_n2 = snr_to_noise(snr, 1.0);
        let y = &clean + &unit_noise * C64::new(sigma_n2.sqrt(), 0.0);
        let est = lmmse_estimate(&y, &omega, setup.sigma_h2, sigma_n2)?;
        let inputs = CommInputs {
            p_d: 1.0,
            sigma_n2,
            dicts: &setup.dicts,
            cp_factor: setup.frame.cp_factor(),
            mn: setup.frame.mn(),
        };
        let ofdm_nats = ofdm.capacity(&h, sigma_n2, &mut stream(seed, point, trial, LANE_OFDM))?;
        out.push(CapacitySample {
            trial: t,
            snr_db: snr,
            otfs_matrix: capacity_lb_matrix(&inputs, &est.c_eps, &est.h_hat)? / LN_2,
            otfs_scalar: capacity_lb_scalar(&inputs, &est.c_eps, &est.h_hat)? / LN_2,
            ofdm: ofdm_nats / LN_2,
        });
    }
    Ok(out)
}

fn run_point(
    setup: &Setup,
    snr_db: &[f64],
    trials: usize,
    seed: u64,
    point: u64,
    pilot_ratio: f64,
) -> Result<CapacityReport> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    if snr_db.is_empty() {
        return Err(Error::param("snr_db", "sweep grid must be nonempty"));
    }
    let ofdm = matched_ofdm(setup, pilot_ratio)?;
    let chunks = map_chunks(trials, 16, |a, b| -> Result<Vec<CapacitySample>> {
        let mut v = Vec::with_capacity((b - a) * snr_db.len());
        for t in a..b {
            v.extend(trial_bounds(setup, &ofdm, snr_db, seed, point, t)?);
        }
        Ok(v)
    });
    let mut samples = Vec::with_capacity(trials * snr_db.len());
    for c in chunks {
        samples.extend(c?);
    }
    let n = trials as f64;
    let points = snr_db
        .iter()
        .enumerate()
        .map(|(s, &snr)| {
            let col = samples.iter().skip(s).step_by(snr_db.len());
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for x in col {
                a += x.otfs_matrix;
                b += x.otfs_scalar;
                c += x.ofdm;
            }
            CapacityPoint {
                snr_db: snr,
                otfs_matrix: a / n,
                otfs_scalar: b / n,
                ofdm: c / n,
            }
        })
        .collect();
    Ok(CapacityReport { points, samples })
}

/// Mean bounds per SNR over `trials` channel draws.
pub fn run_capacity_bound(
    setup: &Setup,
    snr_db: &[f64],
    trials: usize,
    seed: u64,
    pilot_ratio: f64,
) -> Result<CapacityReport> {
    run_point(setup, snr_db, trials, seed, 0, pilot_ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VelocityPoint {
    pub velocity_kmh: f64,
    pub doppler_tap: usize,
    pub otfs_matrix: f64,
    pub otfs_scalar: f64,
    pub ofdm: f64,
}

/// Bounds at one SNR as the Doppler spread follows the speed. The layout is
/// fixed, so every speed must map inside its Doppler guard.
pub fn run_capacity_vs_velocity(
    setup: &Setup,
    velocity_kmh: &[f64],
    snr_db: f64,
    trials: usize,
    seed: u64,
    pilot_ratio: f64,
) -> Result<Vec<VelocityPoint>> {
    if velocity_kmh.is_empty() {
        return Err(Error::param("velocity_kmh", "sweep grid must be nonempty"));
    }
    let mut out = Vec::with_capacity(velocity_kmh.len());
    for (i, &v) in velocity_kmh.iter().enumerate() {
        let q = velocity_to_doppler(v / 3.6, &setup.frame)?;
        if q > setup.plan.doppler_margin {
            return Err(Error::param(
                "velocity_kmh",
                format!(
                    "{v} km/h maps to tap {q}, past the guard of {}",
                    setup.plan.doppler_margin
                ),
            ));
        }
        let local = setup.with_taps(TapGrid::new(setup.taps.max_delay, q, setup.taps.sign))?;
        let rep = run_point(&local, &[snr_db], trials, seed, 1 + i as u64, pilot_ratio)?;
        let p = &rep.points[0];
        out.push(VelocityPoint {
            velocity_kmh: v,
            doppler_tap: q,
            otfs_matrix: p.otfs_matrix,
            otfs_scalar: p.otfs_scalar,
            ofdm: p.ofdm,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    #[test]
    fn doppler_mapping_matches_hand_values() {
        let cfg = FrameConfig::new(4, 64, 192, 15e3, 3.5e9).unwrap();
        assert_eq!(velocity_to_doppler(0.0, &cfg).unwrap(), 0);
        // One tap is 15e3 / 64 Hz; pick the speed landing exactly on tap 5.
        let v = 5.0 * 15e3 / 64.0 * SPEED_OF_LIGHT / 3.5e9;
        assert_eq!(velocity_to_doppler(v, &cfg).unwrap(), 5);
        assert_eq!(velocity_to_doppler(150.0, &cfg).unwrap(), 7);
        assert!((doppler_hz(2.0 * v, &cfg) - 2.0 * doppler_hz(v, &cfg)).abs() < 1e-9);
    }

    fn small() -> Setup {
        let mut cfg = RunConfig::table2();
        cfg.frame.n = 16;
        cfg.frame.n_cp = 48;
        cfg.channel.max_doppler = 2;
        cfg.arrangement.pilot_block.doppler_len = 4;
        Setup::new(&cfg).unwrap()
    }

    #[test]
    fn scalar_bound_never_exceeds_matrix_bound() {
        let rep = run_capacity_bound(&small(), &[0.0, 10.0, 20.0], 20, 7, 0.25).unwrap();
        for s in &rep.samples {
            assert!(s.otfs_scalar <= s.otfs_matrix + 1e-12, "{s:?}");
        }
    }

    #[test]
    fn reports_are_reproducible() {
        let a = run_capacity_bound(&small(), &[10.0], 8, 3, 0.25).unwrap();
        let b = run_capacity_bound(&small(), &[10.0], 8, 3, 0.25).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bound_vanishes_at_low_snr() {
        let rep = run_capacity_bound(&small(), &[-80.0], 4, 3, 0.25).unwrap();
        assert!(rep.points[0].otfs_matrix < 1e-6 && rep.points[0].ofdm < 1e-6);
    }

    #[test]
    fn speeds_past_the_guard_are_rejected() {
        assert!(run_capacity_vs_velocity(&small(), &[1500.0], 30.0, 2, 1, 0.25).is_err());
    }
}
