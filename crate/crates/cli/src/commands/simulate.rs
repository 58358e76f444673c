//! Seeded repetitions of the one- and two-atom jump processes.

use anyhow::{bail, Context, Result};
use telegraph::simulate::*;

use super::{non_negative, positive};
use crate::config::{Scenario, SimulateConfig};
use crate::manifest::Staged;

pub fn build_spec(cfg: &SimulateConfig) -> Result<JumpProcessSpec> {
    let dur = positive("simulate.duration_ms", cfg.duration_ms)? * 1e-3;
    let flux: Vec<f64> = cfg
        .flux_per_ms
        .iter()
        .map(|&f| Ok(non_negative("simulate.flux_per_ms", f)? * 1e3))
        .collect::<Result<_>>()?;
    let r10 = non_negative("simulate.r10_per_s", cfg.r10_per_s)?;
    let spec = match cfg.scenario {
        Scenario::OneAtom => {
            let [f0, f1] = flux[..] else {
                bail!("simulate.flux_per_ms needs 2 values for one-atom, got {}", flux.len());
            };
            let r01 = non_negative("simulate.r01_per_s", cfg.r01_per_s)?;
            make_one_atom_spec(r10, r01, f0, f1, dur)?
        }
        Scenario::TwoAtom => {
            let [f0, f1, f2] = flux[..] else {
                bail!("simulate.flux_per_ms needs 3 values for two-atom, got {}", flux.len());
            };
            let r21 = non_negative("simulate.r21_per_s", cfg.r21_per_s)?;
            let r_rep = non_negative("simulate.r_rep_per_s", cfg.r_rep_per_s)?;
            make_two_atom_spec(r10, r21, r_rep, [f0, f1, f2], dur)?
        }
    };
    if cfg.site_flux_per_ms.is_empty() {
        return Ok(spec);
    }
    let sites: Vec<f64> = cfg
        .site_flux_per_ms
        .iter()
        .map(|&f| Ok(non_negative("simulate.site_flux_per_ms", f)? * 1e3))
        .collect::<Result<_>>()?;
    let hop = non_negative("simulate.hop_rate_per_s", cfg.hop_rate_per_s)?;
    split_state(&spec, cfg.split_alpha, &sites, hop).context("simulate.split_alpha / site_flux_per_ms")
}

pub fn run(cfg: &SimulateConfig, seed: u64) -> Result<Staged> {
    if cfg.repetitions == 0 {
        bail!("simulate.repetitions must be at least 1");
    }
    let spec = build_spec(cfg)?;
    let runs = simulate_ensemble(&spec, seed, cfg.repetitions)?;
    let mut staged = Staged::default();
    for (i, (traj, clicks)) in runs.iter().enumerate() {
        staged.add_with(format!("clicks/rep_{i:04}.clicks"), |w| Ok(clicks.write_to(w)?))?;
        if cfg.write_trajectories {
            staged.add_with(format!("trajectories/rep_{i:04}.traj"), |w| Ok(traj.write_to(w)?))?;
        }
    }
    Ok(staged)
}
