//! Model-order scan with Poisson HMMs.

use std::io::Write;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use telegraph::hmm::*;

use super::{bin_all, csv_line, load_records, output_stem, positive};
use crate::config::{resolve_inputs, HmmConfig};
use crate::manifest::Staged;

#[derive(Serialize)]
struct HmmReport {
    criterion: String,
    best_n_states: usize,
    log_likelihood: f64,
    iterations: usize,
    converged: bool,
    starved_states: Vec<usize>,
    rate_method: String,
    rates_valid: bool,
    /// Row `i`, column `j`: rate i → j in 1/s.
    rates_per_s: Vec<Vec<f64>>,
}

pub fn run(cfg: &HmmConfig, seed: u64) -> Result<Staged> {
    let bw = positive("hmm.bin_width_ms", cfg.bin_width_ms)? * 1e-3;
    if cfg.orders.is_empty() || cfg.orders.contains(&0) {
        bail!("hmm.orders must list state counts >= 1");
    }
    let criterion: Criterion = cfg.criterion.parse().map_err(|e| anyhow::anyhow!("hmm.criterion: {e}"))?;
    positive("hmm.tol", cfg.tol)?;
    if cfg.max_iter == 0 {
        bail!("hmm.max_iter must be at least 1");
    }
    if cfg.restarts == 0 {
        bail!("hmm.restarts must be at least 1");
    }
    let opts = EmOptions { tol: cfg.tol, max_iter: cfg.max_iter, restarts: cfg.restarts, ..EmOptions::default() };

    let paths = resolve_inputs(&cfg.inputs, "hmm.inputs")?;
    let traces = bin_all(&load_records(&paths)?, bw)?;
    let ranked = compare_orders(&traces, &cfg.orders, criterion, seed, &opts)?;
    let best = &ranked[0];

    let mut staged = Staged::default();
    staged.add_with("scores.csv", |w| {
        writeln!(w, "n_states,n_params,log_likelihood,aic,bic")?;
        let mut by_order: Vec<&OrderScore> = ranked.iter().collect();
        by_order.sort_by_key(|s| s.n_states);
        for s in by_order {
            writeln!(w, "{},{},{}", s.n_states, s.n_params, csv_line(&[s.log_likelihood, s.aic, s.bic]))?;
        }
        Ok(())
    })?;
    for s in &ranked {
        let model = s.fit.model.sorted_by_mean();
        staged.add_with(format!("models/order_{}.hmm", s.n_states), |w| Ok(model.write_to(w)?))?;
    }
    let model = best.fit.model.sorted_by_mean();
    staged.add_with("best_model.hmm", |w| Ok(model.write_to(w)?))?;

    if cfg.write_marginals {
        let marginals: Vec<_> = traces
            .par_iter()
            .map(|t| posterior_marginals(&model, t))
            .collect::<telegraph::Result<_>>()?;
        for (i, (pt, path)) in marginals.iter().zip(&paths).enumerate() {
            let comments = vec![format!("smoothed marginals, {} states", model.n_states())];
            staged.add_with(format!("marginals/{}.csv", output_stem(i, path)), |w| Ok(pt.write_csv(w, &comments)?))?;
        }
    }

    let cr = rates_from_transitions(&model);
    let n = model.n_states();
    let report = HmmReport {
        criterion: criterion.to_string(),
        best_n_states: best.n_states,
        log_likelihood: best.log_likelihood,
        iterations: best.fit.iterations,
        converged: best.fit.converged,
        starved_states: best.fit.starved_states.clone(),
        rate_method: format!("{:?}", cr.method),
        rates_valid: cr.valid,
        rates_per_s: (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { cr.rate(i, j) }).collect()).collect(),
    };
    let json = serde_json::to_string_pretty(&report).context("serialising report")?;
    staged.add("report.json", (json + "\n").into_bytes());
    Ok(staged)
}
