//! Run configuration.
//!
//! One TOML file holds a table per subcommand. Units follow the customary
//! presentation: frequencies in MHz (meaning 2π × MHz), times in ms, lengths
//! in µm, transition rates in 1/s and photon fluxes in counts per ms.
//! A run manifest is itself a valid config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub transmission: TransmissionConfig,
    pub simulate: SimulateConfig,
    pub analyze: AnalyzeConfig,
    pub hmm: HmmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            transmission: TransmissionConfig::default(),
            simulate: SimulateConfig::default(),
            analyze: AnalyzeConfig::default(),
            hmm: HmmConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config file or a run manifest (whose `[config]` table is used).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        let body = if table.contains_key(crate::manifest::MANIFEST_KEY) {
            match table.get("config") {
                Some(toml::Value::Table(t)) => t.clone(),
                _ => bail!("manifest has no [config] table"),
            }
        } else {
            table
        };
        Ok(body.try_into()?)
    }
}

/// An inclusive, evenly spaced grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self, key: &str) -> Result<Vec<f64>> {
        if self.points == 0 {
            bail!("{key}: grid has no points");
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            bail!("{key}: grid bounds must be finite");
        }
        if self.points == 1 {
            return Ok(vec![self.start]);
        }
        let step = (self.stop - self.start) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.start + step * i as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransmissionConfig {
    pub g0_mhz: f64,
    pub kappa_mhz: f64,
    pub gamma_mhz: f64,
    pub waist_um: f64,
    /// One transmission curve per value.
    pub g_eff_mhz: Vec<f64>,
    pub detuning_mhz: Grid,
    /// Coupling at the mode centre for the level-difference map.
    pub g_center_mhz: f64,
    pub map_detuning_mhz: Grid,
    pub map_offset_um: Grid,
}

impl Default for TransmissionConfig {
    fn default() -> Self {
        Self {
            g0_mhz: 13.1,
            kappa_mhz: 0.4,
            gamma_mhz: 2.6,
            waist_um: 23.0,
            g_eff_mhz: vec![8.0, 9.0, 10.0],
            detuning_mhz: Grid { start: -80.0, stop: 80.0, points: 321 },
            g_center_mhz: 9.0,
            map_detuning_mhz: Grid { start: 5.0, stop: 300.0, points: 60 },
            map_offset_um: Grid { start: 0.0, stop: 40.0, points: 81 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Two states, α ∈ {0, 1}.
    OneAtom,
    /// Three states, α ∈ {0, 1, 2}, with repumping.
    TwoAtom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub scenario: Scenario,
    pub repetitions: usize,
    pub duration_ms: f64,
    pub r10_per_s: f64,
    pub r01_per_s: f64,
    pub r21_per_s: f64,
    pub r_rep_per_s: f64,
    /// Detected flux for α = 0, 1 (, 2).
    pub flux_per_ms: Vec<f64>,
    /// Split this α into position sub-states (empty `site_flux_per_ms`
    /// disables splitting).
    pub split_alpha: u32,
    pub site_flux_per_ms: Vec<f64>,
    pub hop_rate_per_s: f64,
    pub write_trajectories: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::OneAtom,
            repetitions: 13,
            duration_ms: 1000.0,
            r10_per_s: 40.0,
            r01_per_s: 18.0,
            r21_per_s: 52.0,
            r_rep_per_s: 45.0,
            flux_per_ms: vec![27.0, 3.0],
            split_alpha: 1,
            site_flux_per_ms: Vec::new(),
            hop_rate_per_s: 200.0,
            write_trajectories: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionSource {
    /// Poisson with mean `flux · Δt_b`.
    Poisson,
    /// Histogram files (`n,prob`) measured at the analysis bin width.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Click files, or directories searched for `*.clicks`.
    pub inputs: Vec<PathBuf>,
    pub bin_width_ms: f64,
    pub hist: bool,
    pub g2: bool,
    pub filter: bool,
    pub entropy_scan: bool,
    pub fit_rates: bool,
    pub g2_max_lag_ms: f64,
    /// Model used by the filter and the fits.
    pub model: Scenario,
    pub r10_per_s: f64,
    pub r01_per_s: f64,
    pub r21_per_s: f64,
    pub r_rep_per_s: f64,
    pub flux_per_ms: Vec<f64>,
    pub emissions: EmissionSource,
    pub emission_histograms: Vec<PathBuf>,
    /// Initial state probabilities; empty means "highest α".
    pub initial: Vec<f64>,
    pub predict_mode: String,
    pub scan_min_ms: f64,
    pub scan_max_ms: f64,
    pub scan_points: usize,
    /// Starting rates of the two-atom iterative fit (1/s).
    pub guess_per_s: Vec<f64>,
    pub fit_tol: f64,
    pub fit_max_iter: usize,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            bin_width_ms: 1.0,
            hist: false,
            g2: false,
            filter: false,
            entropy_scan: false,
            fit_rates: false,
            g2_max_lag_ms: 20.0,
            model: Scenario::OneAtom,
            r10_per_s: 40.0,
            r01_per_s: 18.0,
            r21_per_s: 52.0,
            r_rep_per_s: 45.0,
            flux_per_ms: vec![27.0, 3.0],
            emissions: EmissionSource::Poisson,
            emission_histograms: Vec::new(),
            initial: Vec::new(),
            predict_mode: "exact".into(),
            scan_min_ms: 0.01,
            scan_max_ms: 20.0,
            scan_points: 12,
            guess_per_s: Vec::new(),
            fit_tol: 1e-3,
            fit_max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmmConfig {
    pub inputs: Vec<PathBuf>,
    pub bin_width_ms: f64,
    pub orders: Vec<usize>,
    pub criterion: String,
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub write_marginals: bool,
}

impl Default for HmmConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            bin_width_ms: 1.0,
            orders: vec![1, 2, 3],
            criterion: "bic".into(),
            restarts: 5,
            tol: 1e-4,
            max_iter: 500,
            write_marginals: true,
        }
    }
}

/// Expands directories to their `*.clicks` files, sorted by name.
pub fn resolve_inputs(inputs: &[PathBuf], key: &str) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        bail!("{key}: no input files given");
    }
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("{key}: reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "clicks"))
                .collect();
            if files.is_empty() {
                bail!("{key}: no .clicks files in {}", p.display());
            }
            files.sort();
            out.extend(files);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{key}: input file {} does not exist", p.display());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::parse("[simulate]\nrepetitons = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("repetitons"));
    }

    #[test]
    fn grid_checks() {
        assert!(Grid { start: 0.0, stop: 1.0, points: 0 }.values("g").is_err());
        assert_eq!(Grid { start: 0.0, stop: 1.0, points: 3 }.values("g").unwrap(), vec![0.0, 0.5, 1.0]);
    }
}
