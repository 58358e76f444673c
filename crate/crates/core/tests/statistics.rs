//! Simulation-oracle checks for the signal and estimate modules.

use rand::seq::SliceRandom;
use telegraph::estimate::*;
use telegraph::signal::*;
use telegraph::simulate::*;

fn telegraph_traces(r10: f64, r01: f64, f0: f64, f1: f64, dur: f64, reps: usize, seed: u64, bw: f64) -> Vec<BinnedTrace> {
    let spec = make_one_atom_spec(r10, r01, f0, f1, dur).unwrap();
    simulate_ensemble(&spec, seed, reps)
        .unwrap()
        .iter()
        .map(|(_, c)| bin_clicks(c, bw).unwrap())
        .collect()
}

#[test]
fn g2_at_short_lag_matches_two_state_formula() {
    let (r10, r01, f0, f1) = (40.0, 18.0, 27_000.0, 3_000.0);
    let traces = telegraph_traces(r10, r01, f0, f1, 5.0, 8, 21, 1e-4);
    let g = g2_ensemble(&traces, 1e-3).unwrap();
    let (p0, p1) = (r10 / (r10 + r01), r01 / (r10 + r01));
    let mean = p0 * f0 + p1 * f1;
    let g0 = 1.0 + p0 * p1 * (f0 - f1).powi(2) / (mean * mean);
    // first lag is 0.1 ms, where exp(−58 τ) ≈ 0.994
    let expect = 1.0 + (g0 - 1.0) * (-(r10 + r01) * 1e-4f64).exp();
    assert!((g.values[0] / expect - 1.0).abs() < 0.05, "{} vs {expect}", g.values[0]);
}

#[test]
fn shuffled_trace_is_uncorrelated() {
    let mut traces = telegraph_traces(40.0, 18.0, 27_000.0, 3_000.0, 5.0, 1, 4, 1e-3);
    let mut counts = traces.pop().unwrap().counts().to_vec();
    counts.shuffle(&mut rng_from_seed(1));
    let shuffled = BinnedTrace::new(1e-3, counts, 0.0).unwrap();
    let g = g2(&shuffled, 0.05).unwrap();
    for v in &g.values {
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }
}

#[test]
fn g2_decay_recovers_total_rate_across_range() {
    for (k, total) in [10.0f64, 50.0, 200.0].into_iter().enumerate() {
        let (r10, r01) = (0.6 * total, 0.4 * total);
        // long enough for roughly 4000 correlation times
        let dur = 4000.0 / total / 8.0;
        let bw = (0.05 / total).min(1e-3);
        let traces = telegraph_traces(r10, r01, 27_000.0, 3_000.0, dur, 8, 100 + k as u64, bw);
        let g = g2_ensemble(&traces, 1.2 / total).unwrap();
        let fit = fit_exponential_decay(&g).unwrap();
        assert!((fit.rate / total - 1.0).abs() < 0.1, "total {total}: fitted {}", fit.rate);
    }
}

#[test]
fn mixture_weights_match_steady_state() {
    let traces = telegraph_traces(40.0, 18.0, 27_000.0, 3_000.0, 10.0, 8, 17, 1e-3);
    let h = histogram_of(&traces).unwrap();
    let comps = [CountHistogram::poisson(27.0, 1e-3).unwrap(), CountHistogram::poisson(3.0, 1e-3).unwrap()];
    let ls = fit_mixture(&h, &comps).unwrap();
    let ml = fit_mixture_with(&h, &comps, MixtureMethod::MultinomialMl).unwrap();
    assert!((ls.weights[0] - 40.0 / 58.0).abs() < 0.03, "{:?}", ls.weights);
    assert!((ls.weights[0] - ml.weights[0]).abs() < 0.02, "{:?} vs {:?}", ls.weights, ml.weights);
}

#[test]
fn ensemble_decay_of_many_traces() {
    let spec = make_one_atom_spec(40.0, 0.0, 27_000.0, 3_000.0, 0.25).unwrap();
    let traces: Vec<BinnedTrace> = simulate_ensemble(&spec, 2, 400)
        .unwrap()
        .iter()
        .map(|(_, c)| bin_clicks(c, 1e-3).unwrap())
        .collect();
    let fit = ensemble_average(&traces).unwrap().fit_exponential().unwrap();
    assert!((fit.rate / 40.0 - 1.0).abs() < 0.1, "{}", fit.rate);
    assert!((fit.offset / 27.0 - 1.0).abs() < 0.05);
}

#[test]
fn initial_guess_protocol() {
    let spec = make_one_atom_spec(104.0, 0.0, 27_000.0, 18_000.0, 0.1).unwrap();
    let traces: Vec<BinnedTrace> = simulate_ensemble(&spec, 12, 400)
        .unwrap()
        .iter()
        .map(|(_, c)| bin_clicks(c, 1e-3).unwrap())
        .collect();
    let g = initial_guess_from_decay(&traces, 2.0 / 3.0, 1.0 / 3.0).unwrap();
    assert!((g.r10 / 104.0 - 1.0).abs() < 0.15, "{g:?}");
    assert_eq!(g.r_rep, g.r10);
    assert!((g.r21 - g.r10).abs() < 1e-9 * g.r10);
}
