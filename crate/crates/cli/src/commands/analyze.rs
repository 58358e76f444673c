//! Histograms, g², filtering, entropy scans and rate fits on click files.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use telegraph::estimate::*;
use telegraph::filter::*;
use telegraph::markov::RateMatrix;
use telegraph::signal::*;

use super::{bin_all, csv_line, load_records, non_negative, output_stem, positive};
use crate::config::{resolve_inputs, AnalyzeConfig, EmissionSource, Scenario};
use crate::manifest::Staged;

/// Everything derived from the `[analyze]` table before touching the data.
struct Model {
    n: usize,
    rates: RateMatrix,
    /// counts/s
    flux: Vec<f64>,
    initial: Vec<f64>,
    mode: PredictMode,
}

fn model(cfg: &AnalyzeConfig) -> Result<Model> {
    let r10 = non_negative("analyze.r10_per_s", cfg.r10_per_s)?;
    let (n, rates) = match cfg.model {
        Scenario::OneAtom => {
            let r01 = non_negative("analyze.r01_per_s", cfg.r01_per_s)?;
            (2, OneAtomRates { r10, r01 }.rate_matrix()?)
        }
        Scenario::TwoAtom => {
            let r21 = non_negative("analyze.r21_per_s", cfg.r21_per_s)?;
            let r_rep = non_negative("analyze.r_rep_per_s", cfg.r_rep_per_s)?;
            (3, TwoAtomRates { r10, r21, r_rep }.rate_matrix()?)
        }
    };
    if cfg.flux_per_ms.len() != n {
        bail!("analyze.flux_per_ms needs {n} values for this model, got {}", cfg.flux_per_ms.len());
    }
    let flux = cfg
        .flux_per_ms
        .iter()
        .map(|&f| Ok(non_negative("analyze.flux_per_ms", f)? * 1e3))
        .collect::<Result<Vec<_>>>()?;
    let initial = if cfg.initial.is_empty() {
        let mut v = vec![0.0; n];
        v[n - 1] = 1.0;
        v
    } else if cfg.initial.len() != n {
        bail!("analyze.initial needs {n} values, got {}", cfg.initial.len());
    } else {
        cfg.initial.clone()
    };
    let mode: PredictMode = cfg
        .predict_mode
        .parse()
        .map_err(|e| anyhow::anyhow!("analyze.predict_mode: {e}"))?;
    Ok(Model { n, rates, flux, initial, mode })
}

/// Reads an `n,prob` histogram as written by `--hist`.
fn read_histogram(path: &Path, bin_width: f64) -> Result<CountHistogram> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut probs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('n')) {
            continue;
        }
        let (n, p) = line
            .split_once(',')
            .with_context(|| format!("{}:{}: expected `n,prob`", path.display(), i + 1))?;
        let n: usize = n.trim().parse().with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let p: f64 = p.trim().parse().with_context(|| format!("{}:{}", path.display(), i + 1))?;
        if probs.len() <= n {
            probs.resize(n + 1, 0.0);
        }
        probs[n] = p;
    }
    Ok(CountHistogram::from_probs(bin_width, probs, 0)?)
}

fn emissions(cfg: &AnalyzeConfig, m: &Model, bin_width: f64) -> Result<Vec<EmissionModel>> {
    match cfg.emissions {
        EmissionSource::Poisson => m.flux.iter().map(|&f| Ok(EmissionModel::from_flux(f, bin_width)?)).collect(),
        EmissionSource::Empirical => {
            if cfg.emission_histograms.len() != m.n {
                bail!(
                    "analyze.emission_histograms needs {} files, got {}",
                    m.n,
                    cfg.emission_histograms.len()
                );
            }
            cfg.emission_histograms
                .iter()
                .map(|p| Ok(EmissionModel::empirical(&read_histogram(p, bin_width)?)))
                .collect()
        }
    }
}

#[derive(Serialize)]
struct DecayReport {
    amplitude: f64,
    rate_per_s: f64,
    offset: f64,
    residual_norm: f64,
    unidentifiable: bool,
}

impl From<&ExpFit> for DecayReport {
    fn from(f: &ExpFit) -> Self {
        Self {
            amplitude: f.amplitude,
            rate_per_s: f.rate,
            offset: f.offset,
            residual_norm: f.residual_norm,
            unidentifiable: f.unidentifiable,
        }
    }
}

#[derive(Serialize)]
struct MixtureReport {
    weights: Vec<f64>,
    residual: f64,
    unidentifiable: bool,
}

#[derive(Serialize)]
struct OneAtomReport {
    model: &'static str,
    g2_decay: DecayReport,
    mixture: MixtureReport,
    r10_per_s: f64,
    r01_per_s: f64,
}

#[derive(Serialize)]
struct IterationReport {
    r10_per_s: f64,
    r21_per_s: f64,
    r_rep_per_s: f64,
    residual: Option<f64>,
}

#[derive(Serialize)]
struct TwoAtomReport {
    model: &'static str,
    initial_guess: IterationReport,
    r10_per_s: f64,
    r21_per_s: f64,
    r_rep_per_s: f64,
    iterations: usize,
    converged: bool,
    oscillating: bool,
    best_iterate: bool,
    r21_predicted_per_s: f64,
    r21_ratio: f64,
    history: Vec<IterationReport>,
}

pub fn run(cfg: &AnalyzeConfig) -> Result<Staged> {
    let bw = positive("analyze.bin_width_ms", cfg.bin_width_ms)? * 1e-3;
    let max_lag = positive("analyze.g2_max_lag_ms", cfg.g2_max_lag_ms)? * 1e-3;
    let m = model(cfg)?;
    let em = emissions(cfg, &m, bw)?;
    let filter_cfg = FilterConfig::new(m.rates.clone(), em.clone(), m.initial.clone(), m.mode)
        .context("analyze: filter configuration")?;
    let scan = if cfg.entropy_scan {
        if cfg.emissions != EmissionSource::Poisson {
            bail!("analyze.entropy_scan needs emissions = \"poisson\" (histograms are tied to one bin width)");
        }
        let lo = positive("analyze.scan_min_ms", cfg.scan_min_ms)?;
        let hi = positive("analyze.scan_max_ms", cfg.scan_max_ms)?;
        Some(log_grid(lo * 1e-3, hi * 1e-3, cfg.scan_points).context("analyze.scan_min_ms/scan_max_ms/scan_points")?)
    } else {
        None
    };
    let guess = if cfg.fit_rates && m.n == 3 {
        let g = match cfg.guess_per_s[..] {
            [] => [cfg.r10_per_s, cfg.r21_per_s, cfg.r_rep_per_s],
            [a, b, c] => [a, b, c],
            _ => bail!("analyze.guess_per_s needs 3 values (r10, r21, r_rep)"),
        };
        for r in g {
            positive("analyze.guess_per_s", r)?;
        }
        positive("analyze.fit_tol", cfg.fit_tol)?;
        if cfg.fit_max_iter == 0 {
            bail!("analyze.fit_max_iter must be at least 1");
        }
        Some(TwoAtomRates::from_array(g))
    } else {
        None
    };

    let paths = resolve_inputs(&cfg.inputs, "analyze.inputs")?;
    let records = load_records(&paths)?;
    let traces = bin_all(&records, bw)?;
    let mut staged = Staged::default();

    if cfg.hist {
        let h = histogram_of(&traces)?;
        staged.add_with("histogram.csv", |w| Ok(h.write_csv(w)?))?;
    }
    let curve = if cfg.g2 || (cfg.fit_rates && m.n == 2) { Some(g2_ensemble(&traces, max_lag)?) } else { None };
    if cfg.g2 {
        let c = curve.as_ref().expect("computed above");
        staged.add_with("g2.csv", |w| Ok(c.write_csv(w)?))?;
    }
    if cfg.filter {
        let outs = run_filter_many(&traces, &filter_cfg)?;
        for (i, (out, path)) in outs.iter().zip(&paths).enumerate() {
            staged.add_with(format!("filter/{}.csv", output_stem(i, path)), |w| Ok(out.write_csv(w, &filter_cfg)?))?;
        }
    }
    if let Some(widths) = scan {
        let points = entropy_scan(&records, &widths, |b| {
            let em = m.flux.iter().map(|&f| EmissionModel::from_flux(f, b)).collect::<telegraph::Result<_>>()?;
            FilterConfig::new(m.rates.clone(), em, m.initial.clone(), m.mode)
        })?;
        staged.add_with("entropy_scan.csv", |w| {
            writeln!(w, "bin_width_ms,mean_entropy")?;
            for p in &points {
                writeln!(w, "{}", csv_line(&[p.bin_width * 1e3, p.entropy]))?;
            }
            Ok(())
        })?;
    }
    if cfg.fit_rates {
        let json = if let Some(guess) = guess {
            let opts = IterativeFitOptions {
                tol: cfg.fit_tol,
                max_iter: cfg.fit_max_iter,
                initial: m.initial.clone(),
                predict_mode: m.mode,
            };
            let fit = iterative_rate_fit(&traces, &em, guess, &opts)?;
            let (t1, t2) = (m.flux[1] / m.flux[0], m.flux[2] / m.flux[0]);
            let cmp = compare_r21(&fit.rates, t1, t2).context("comparing r21 with the transmission levels")?;
            let rec = |r: &TwoAtomRates, residual: Option<f64>| IterationReport {
                r10_per_s: r.r10,
                r21_per_s: r.r21,
                r_rep_per_s: r.r_rep,
                residual,
            };
            serde_json::to_string_pretty(&TwoAtomReport {
                model: "two-atom",
                initial_guess: rec(&guess, None),
                r10_per_s: fit.rates.r10,
                r21_per_s: fit.rates.r21,
                r_rep_per_s: fit.rates.r_rep,
                iterations: fit.iterations(),
                converged: fit.converged,
                oscillating: fit.oscillating,
                best_iterate: fit.best_iterate,
                r21_predicted_per_s: cmp.predicted,
                r21_ratio: cmp.ratio,
                history: fit.history.iter().map(|h| rec(&h.rates, Some(h.residual))).collect(),
            })?
        } else {
            let decay = fit_exponential_decay(curve.as_ref().expect("computed above"))?;
            let comps = m
                .flux
                .iter()
                .map(|&f| CountHistogram::poisson(f * bw, bw))
                .collect::<telegraph::Result<Vec<_>>>()?;
            let mix = fit_mixture(&histogram_of(&traces)?, &comps)?;
            let rates = decompose_rates(decay.rate, &mix)?;
            serde_json::to_string_pretty(&OneAtomReport {
                model: "one-atom",
                g2_decay: (&decay).into(),
                mixture: MixtureReport { weights: mix.weights.clone(), residual: mix.residual, unidentifiable: mix.unidentifiable },
                r10_per_s: rates.r10,
                r01_per_s: rates.r01,
            })?
        };
        staged.add("fit_report.json", (json + "\n").into_bytes());
    }
    Ok(staged)
}
