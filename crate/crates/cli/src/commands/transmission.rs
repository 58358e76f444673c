//! Transmission curves, the level-difference map and its optimal ridge.

use std::io::Write;

use anyhow::{bail, Result};
use rayon::prelude::*;
use telegraph::physics::*;
use telegraph::units::{mhz, to_mhz, um};

use super::{csv_line, positive};
use crate::config::TransmissionConfig;
use crate::manifest::Staged;

pub fn run(cfg: &TransmissionConfig) -> Result<Staged> {
    let p = CavityParams::new(
        mhz(positive("transmission.g0_mhz", cfg.g0_mhz)?),
        mhz(positive("transmission.kappa_mhz", cfg.kappa_mhz)?),
        mhz(positive("transmission.gamma_mhz", cfg.gamma_mhz)?),
        um(positive("transmission.waist_um", cfg.waist_um)?),
    )?;
    if cfg.g_eff_mhz.is_empty() {
        bail!("transmission.g_eff_mhz is empty");
    }
    for &g in &cfg.g_eff_mhz {
        if !(g >= 0.0 && g.is_finite()) {
            bail!("transmission.g_eff_mhz must be >= 0, got {g}");
        }
    }
    let g_center = positive("transmission.g_center_mhz", cfg.g_center_mhz)?;
    let detunings = cfg.detuning_mhz.values("transmission.detuning_mhz")?;
    let map_detunings = cfg.map_detuning_mhz.values("transmission.map_detuning_mhz")?;
    let offsets = cfg.map_offset_um.values("transmission.map_offset_um")?;
    if map_detunings.iter().any(|d| *d <= 0.0) {
        bail!("transmission.map_detuning_mhz must be positive (dispersive regime)");
    }
    if offsets.iter().any(|d| *d < 0.0) {
        bail!("transmission.map_offset_um must be >= 0");
    }

    let mut staged = Staged::default();
    staged.add_with("transmission.csv", |w| {
        writeln!(w, "delta_mhz,g_eff_mhz,t1")?;
        for &g in &cfg.g_eff_mhz {
            for &d in &detunings {
                let t = transmission_one_atom(&p, &DetuningPoint::new(mhz(d), mhz(g))?)?;
                writeln!(w, "{}", csv_line(&[d, g, t]))?;
            }
        }
        Ok(())
    })?;

    let rows: Vec<Vec<[f64; 6]>> = map_detunings
        .par_iter()
        .map(|&d| {
            offsets
                .iter()
                .map(|&dy| {
                    let g = coupling_at_offset(&p, mhz(g_center), um(dy))?;
                    let lv = TransmissionLevels::dispersive(&p, &DetuningPoint::new(mhz(d), g)?)?;
                    Ok([d, dy, to_mhz(g), lv.t1, lv.t2, lv.t1 - lv.t2])
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    staged.add_with("level_map.csv", |w| {
        writeln!(w, "delta_mhz,dy_um,g_eff_mhz,t1,t2,dt12")?;
        for r in rows.iter().flatten() {
            writeln!(w, "{}", csv_line(r))?;
        }
        Ok(())
    })?;

    staged.add_with("optimal_ridge.csv", |w| {
        writeln!(w, "delta_mhz,dy_opt_um")?;
        for &d in &map_detunings {
            let dy = optimal_offset(&p, mhz(g_center), mhz(d))?;
            writeln!(w, "{}", csv_line(&[d, dy * 1e6]))?;
        }
        Ok(())
    })?;
    Ok(staged)
}
