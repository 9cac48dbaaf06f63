//! Per-cell DD power layout of a design.

use serde::Serialize;

use crate::arrangement::Arrangement;
use crate::error::{Error, Result};
use crate::modem::FrameConfig;
use crate::optimizer::{peak_energy_fraction, DesignPoint};
use crate::sensing::{expected_mainlobe, transmit_columns, SensingConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellRole {
    Pilot,
    Data,
    Guard,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternCell {
    pub delay: usize,
    pub doppler: usize,
    pub role: CellRole,
    /// `|x_i|²` on pilots, `p_d` on data, 0 on guards.
    pub power: f64,
    /// The cell's share of the expected mainlobe, prefix included. Pilot
    /// shares split the cross terms as `Re(x_i^* (G_p x)_i)`.
    pub frame_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerPattern {
    pub cells: Vec<PatternCell>,
    pub peak_fraction: f64,
    pub data_power: f64,
    /// Mean power per transmitted sample.
    pub transmit_power: f64,
    /// `Σ frame_energy / f̄_00`; 1 up to rounding.
    pub consistency: f64,
}

pub fn export_power_pattern(
    dp: &DesignPoint,
    arr: &Arrangement,
    cfg: &FrameConfig,
    consts: &SensingConstants,
) -> Result<PowerPattern> {
    if dp.x_p.len() != arr.k_p() {
        return Err(Error::dim("pilot vector", arr.k_p(), dp.x_p.len()));
    }
    let mut cells: Vec<PatternCell> = (0..cfg.mn())
        .map(|c| {
            let (delay, doppler) = cfg.coords(c);
            PatternCell {
                delay,
                doppler,
                role: CellRole::Guard,
                power: 0.0,
                frame_energy: 0.0,
            }
        })
        .collect();
    let gx = &consts.g_p * &dp.x_p;
    for (i, &c) in arr.pilot_tx().iter().enumerate() {
        let cell = &mut cells[c];
        cell.role = CellRole::Pilot;
        cell.power = dp.x_p[i].norm_sqr();
        cell.frame_energy = (dp.x_p[i].conj() * gx[i]).re;
    }
    let bd = transmit_columns(cfg, arr.data_tx())?;
    for (j, &c) in arr.data_tx().iter().enumerate() {
        let cell = &mut cells[c];
        cell.role = CellRole::Data;
        cell.power = dp.p_d;
        cell.frame_energy = dp.p_d * bd.column(j).norm_squared();
    }
    let mainlobe = expected_mainlobe(dp.p_d, &dp.x_p, consts)?;
    let total: f64 = cells.iter().map(|c| c.frame_energy).sum();
    let consistency = if mainlobe > 0.0 { total / mainlobe } else { 1.0 };
    Ok(PowerPattern {
        cells,
        peak_fraction: peak_energy_fraction(&dp.x_p),
        data_power: dp.p_d,
        transmit_power: total / cfg.frame_len() as f64,
        consistency,
    })
}
