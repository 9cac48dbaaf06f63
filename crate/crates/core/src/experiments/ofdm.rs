//! OFDM reference link: `N` slots of `M` subcarriers, each with its own
//! `cp`-sample prefix, comb pilot slots, and a receiver that treats the channel
//! as static over the frame.
//!
//! The true channel keeps the DD taps of the OTFS model: tap `(l, k)` rotates
//! by `exp(j 2π k n / (M N))` at absolute sample `n`, so Doppler shows up as
//! intra-slot ICI and slot-to-slot drift. The bound treats the realized
//! mismatch `H_s - Ĥ` as Gaussian interference.

use rand::Rng;

use crate::channel::TapGrid;
use crate::comm::lmmse_estimate;
use crate::error::{Error, Result};
use crate::linalg::{cis, cscg_vector, dft_matrix, logdet_hpd, CMatrix, CVector, C64, ZERO};

#[derive(Debug, Clone)]
pub struct OfdmLink {
    m: usize,
    slots: usize,
    cp: usize,
    pilot_slot: Vec<bool>,
    taps: TapGrid,
    sigma_h2: f64,
    dft: CMatrix,
    /// Column `l` is the frequency response of a unit static tap at delay `l`.
    basis: CMatrix,
}

impl OfdmLink {
    /// Pilot slots are every `round(1 / pilot_ratio)`-th slot starting at 0.
    pub fn new(m: usize, slots: usize, cp: usize, pilot_ratio: f64, taps: TapGrid, sigma_h2: f64) -> Result<Self> {
        if m == 0 || slots == 0 {
            return Err(Error::param("ofdm grid", "needs at least one subcarrier and slot"));
        }
        if cp < taps.max_delay {
            return Err(Error::param(
                "ofdm cp",
                format!("{cp} samples cannot absorb delay {}", taps.max_delay),
            ));
        }
        if taps.max_delay >= m {
            return Err(Error::param("max_delay", "must be below the subcarrier count"));
        }
        if !(pilot_ratio > 0.0 && pilot_ratio < 1.0) {
            return Err(Error::param("pilot_ratio", "must lie in (0, 1)"));
        }
        let step = (1.0 / pilot_ratio).round().max(2.0) as usize;
        let pilot_slot: Vec<bool> = (0..slots).map(|s| s % step == 0).collect();
        let dft = dft_matrix(m);
        let mut basis = CMatrix::zeros(m, taps.max_delay + 1);
        for l in 0..=taps.max_delay {
            let mut shift = CMatrix::zeros(m, m);
            for r in 0..m {
                shift[(r, (r + m - l) % m)] = C64::new(1.0, 0.0);
            }
            let d = &dft * shift * dft.adjoint();
            for r in 0..m {
                basis[(r, l)] = d[(r, r)];
            }
        }
        Ok(OfdmLink {
            m,
            slots,
            cp,
            pilot_slot,
            taps,
            sigma_h2,
            dft,
            basis,
        })
    }

    pub fn pilot_slots(&self) -> usize {
        self.pilot_slot.iter().filter(|&&p| p).count()
    }

    /// Samples per frame, prefixes included.
    pub fn frame_len(&self) -> usize {
        self.slots * (self.m + self.cp)
    }

    /// Frequency-domain channel seen by slot `s` after prefix removal.
    pub fn slot_channel(&self, h: &CVector, s: usize) -> Result<CMatrix> {
        if h.len() != self.taps.len() {
            return Err(Error::dim("tap vector", self.taps.len(), h.len()));
        }
        let period = (self.m * self.slots) as f64;
        let mut g = CMatrix::zeros(self.m, self.m);
        for r in 0..self.m {
            let n = (s * (self.m + self.cp) + self.cp + r) as f64;
            for (i, (l, k)) in self.taps.iter().enumerate() {
                if h[i] == ZERO {
                    continue;
                }
                let phase = cis(2.0 * std::f64::consts::PI * k as f64 * n / period);
                g[(r, (r + self.m - l) % self.m)] += h[i] * phase;
            }
        }
        Ok(&self.dft * g * self.dft.adjoint())
    }

    /// Static LMMSE estimate of the per-delay taps from every pilot slot,
    /// returned as the diagonal frequency response.
    pub fn estimate<R: Rng + ?Sized>(&self, h: &CVector, sigma_n2: f64, rng: &mut R) -> Result<CVector> {
        let np = self.pilot_slots();
        let taps = self.taps.max_delay + 1;
        let mut phi = CMatrix::zeros(np * self.m, taps);
        let mut y = CVector::zeros(np * self.m);
        let mut row = 0;
        for s in (0..self.slots).filter(|&s| self.pilot_slot[s]) {
            let x = cscg_vector(rng, self.m, 1.0);
            let noise = cscg_vector(rng, self.m, 1.0) * C64::new(sigma_n2.sqrt(), 0.0);
            let ys = self.slot_channel(h, s)? * &x + noise;
            for r in 0..self.m {
                for l in 0..taps {
                    phi[(row + r, l)] = x[r] * self.basis[(r, l)];
                }
                y[row + r] = ys[r];
            }
            row += self.m;
        }
        // The receiver's prior sums the Doppler taps of each delay.
        let prior = self.sigma_h2 * self.taps.doppler_count() as f64;
        let est = lmmse_estimate(&y, &phi, prior, sigma_n2)?;
        Ok(&self.basis * est.h_hat)
    }

    /// Capacity lower bound in nats per sample for unit-power symbols.
    pub fn capacity<R: Rng + ?Sized>(&self, h: &CVector, sigma_n2: f64, rng: &mut R) -> Result<f64> {
        if !(sigma_n2 > 0.0) {
            return Err(Error::param("sigma_n2", "must be positive"));
        }
        let h_hat = CMatrix::from_diagonal(&self.estimate(h, sigma_n2, rng)?);
        let eye = CMatrix::identity(self.m, self.m);
        let mut nats = 0.0;
        for s in (0..self.slots).filter(|&s| !self.pilot_slot[s]) {
            let delta = self.slot_channel(h, s)? - &h_hat;
            let noise = &delta * delta.adjoint() + &eye * C64::new(sigma_n2, 0.0);
            let full = &noise + &h_hat * h_hat.adjoint();
            nats += (logdet_hpd(&full, "ofdm signal")? - logdet_hpd(&noise, "ofdm noise")?).max(0.0);
        }
        Ok(nats / self.frame_len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DopplerSign;
    use crate::linalg::max_abs;
    use crate::rng::stream;

    #[test]
    fn static_channel_is_diagonal_with_tap_response() {
        let taps = TapGrid::new(2, 0, DopplerSign::Unsigned);
        let link = OfdmLink::new(4, 8, 2, 0.25, taps, 0.5).unwrap();
        let h = CVector::from_vec(vec![C64::new(1.0, 0.5), C64::new(-0.3, 0.2), C64::new(0.1, -0.7)]);
        let hs = link.slot_channel(&h, 3).unwrap();
        let expect = CMatrix::from_diagonal(&(&link.basis * &h));
        assert!(max_abs(&(hs - expect)) < 1e-12);
    }

    #[test]
    fn doppler_creates_intercarrier_leakage() {
        let taps = TapGrid::new(0, 4, DopplerSign::Unsigned);
        let link = OfdmLink::new(4, 8, 1, 0.25, taps, 0.5).unwrap();
        let mut h = CVector::zeros(taps.len());
        h[4] = C64::new(1.0, 0.0);
        let hs = link.slot_channel(&h, 0).unwrap();
        let off: f64 = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|rc| hs[rc].norm_sqr())
            .sum();
        assert!(off > 1e-3);
    }

    #[test]
    fn static_capacity_grows_with_snr() {
        let taps = TapGrid::new(3, 0, DopplerSign::Unsigned);
        let link = OfdmLink::new(4, 16, 3, 0.25, taps, 0.5).unwrap();
        let mut rng = stream(3, 0, 0, 0);
        let h = cscg_vector(&mut rng, taps.len(), 0.5);
        let lo = link.capacity(&h, 1.0, &mut stream(3, 0, 0, 1)).unwrap();
        let hi = link.capacity(&h, 1e-3, &mut stream(3, 0, 0, 1)).unwrap();
        assert!(hi > lo && lo > 0.0);
    }

    #[test]
    fn short_prefix_is_rejected() {
        let taps = TapGrid::new(3, 0, DopplerSign::Unsigned);
        assert!(OfdmLink::new(4, 16, 2, 0.25, taps, 0.5).is_err());
    }
}
