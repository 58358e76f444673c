//! Reproducible batch pipelines over the `telegraph` library.
//!
//! Each subcommand resolves a [`config::RunConfig`] (file, then flags), checks
//! it, computes every output in memory and only then writes the files plus a
//! `manifest.toml`. Passing that manifest back as `--config` replays the run.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{RunConfig, Scenario};

const UNITS: &str = "Units: frequencies in MHz are read as 2π × MHz (angular), \
times in ms, lengths in µm, transition rates in 1/s, photon fluxes in counts per ms.";

#[derive(Debug, Parser)]
#[command(name = "telegraph", version, about = "Quantum-jump telegraph signals: simulate, analyse, fit", after_help = UNITS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config, or the manifest.toml of an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores). Does not change results.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transmission curves, level-difference map and optimal displacement.
    #[command(after_help = UNITS)]
    Transmission {
        #[command(flatten)]
        common: Common,
        /// Effective couplings in MHz, comma separated.
        #[arg(long, value_delimiter = ',')]
        g_eff_mhz: Option<Vec<f64>>,
    },
    /// Simulate seeded repetitions and write click and trajectory files.
    #[command(after_help = UNITS)]
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        duration_ms: Option<f64>,
    },
    /// Analyse click files.
    #[command(after_help = UNITS)]
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Click files or directories of them (replaces the configured list).
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bin_width_ms: Option<f64>,
        #[arg(long, value_enum)]
        model: Option<Scenario>,
        #[arg(long)]
        hist: bool,
        #[arg(long)]
        g2: bool,
        #[arg(long)]
        filter: bool,
        #[arg(long)]
        entropy_scan: bool,
        #[arg(long)]
        fit_rates: bool,
    },
    /// Fit hidden Markov models of several orders and rank them.
    #[command(after_help = UNITS)]
    Hmm {
        #[command(flatten)]
        common: Common,
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        bin_width_ms: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        orders: Option<Vec<usize>>,
        /// `aic` or `bic`.
        #[arg(long)]
        criterion: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Transmission { .. } => "transmission",
            Command::Simulate { .. } => "simulate",
            Command::Analyze { .. } => "analyze",
            Command::Hmm { .. } => "hmm",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Transmission { common, .. }
            | Command::Simulate { common, .. }
            | Command::Analyze { common, .. }
            | Command::Hmm { common, .. } => common,
        }
    }

    /// Config file (if any) with this command's flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let common = self.common();
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        match self {
            Command::Transmission { g_eff_mhz, .. } => {
                if let Some(g) = g_eff_mhz {
                    cfg.transmission.g_eff_mhz = g.clone();
                }
            }
            Command::Simulate { scenario, repetitions, duration_ms, .. } => {
                let s = &mut cfg.simulate;
                if let Some(v) = scenario {
                    s.scenario = *v;
                    // keep the flux list consistent with the chosen scenario
                    if *v == Scenario::TwoAtom && s.flux_per_ms.len() == 2 {
                        s.flux_per_ms = vec![27.0, 18.0, 9.0];
                    }
                }
                if let Some(v) = repetitions {
                    s.repetitions = *v;
                }
                if let Some(v) = duration_ms {
                    s.duration_ms = *v;
                }
            }
            Command::Analyze { inputs, bin_width_ms, model, hist, g2, filter, entropy_scan, fit_rates, .. } => {
                let a = &mut cfg.analyze;
                if !inputs.is_empty() {
                    a.inputs = inputs.clone();
                }
                if let Some(v) = bin_width_ms {
                    a.bin_width_ms = *v;
                }
                if let Some(v) = model {
                    a.model = *v;
                    if *v == Scenario::TwoAtom && a.flux_per_ms.len() == 2 {
                        a.flux_per_ms = vec![27.0, 18.0, 9.0];
                    }
                }
                a.hist |= *hist;
                a.g2 |= *g2;
                a.filter |= *filter;
                a.entropy_scan |= *entropy_scan;
                a.fit_rates |= *fit_rates;
            }
            Command::Hmm { inputs, bin_width_ms, orders, criterion, .. } => {
                let h = &mut cfg.hmm;
                if !inputs.is_empty() {
                    h.inputs = inputs.clone();
                }
                if let Some(v) = bin_width_ms {
                    h.bin_width_ms = *v;
                }
                if let Some(v) = orders {
                    h.orders = v.clone();
                }
                if let Some(v) = criterion {
                    h.criterion = v.clone();
                }
            }
        }
        Ok(cfg)
    }
}

/// Runs one subcommand and returns the paths written.
pub fn run(cli: Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.command.resolve()?;
    let common = cli.command.common();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = common.jobs {
        anyhow::ensure!(j > 0, "--jobs must be at least 1");
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("starting worker pool")?;
    let name = cli.command.name();
    let staged = pool.install(|| match &cli.command {
        Command::Transmission { .. } => commands::transmission::run(&cfg.transmission),
        Command::Simulate { .. } => commands::simulate::run(&cfg.simulate, cfg.seed),
        Command::Analyze { .. } => commands::analyze::run(&cfg.analyze),
        Command::Hmm { .. } => commands::hmm::run(&cfg.hmm, cfg.seed),
    })?;
    staged.commit(&common.out, name, &cfg)
}

pub fn run_from_args<I, T>(args: I) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::try_parse_from(args)?)
}
