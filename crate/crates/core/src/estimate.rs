//! Rate and population estimates for telegraph models.
//!
//! Three routes are provided. Steady-state populations come from a weighted
//! fit of the count histogram. The total rate comes from the decay of g²(τ),
//! and together they give the individual one-atom rates. For two atoms,
//! [`iterative_rate_fit`] alternates Bayesian filtering with a least-squares
//! fit of the analytic three-state solution until the rates stop changing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{run_filter, EmissionModel, FilterConfig, PredictMode};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::markov::{check_distribution, PropagatorMethod, RateMatrix};
use crate::signal::{ensemble_average, same_width, BinnedTrace, CountHistogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MixtureMethod {
    /// Squared error on histogram probabilities.
    #[default]
    LeastSquares,
    /// Multinomial maximum likelihood (EM on the weights).
    MultinomialMl,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub weights: Vec<f64>,
    /// Euclidean distance between the observed and fitted histograms.
    pub residual: f64,
    /// The components are affinely dependent, so the weights are not unique.
    pub unidentifiable: bool,
}

/// Fits `observed ≈ Σ w_α · components[α]` with `w` on the probability
/// simplex.
pub fn fit_mixture(observed: &CountHistogram, components: &[CountHistogram]) -> Result<MixtureFit> {
    fit_mixture_with(observed, components, MixtureMethod::LeastSquares)
}

pub fn fit_mixture_with(observed: &CountHistogram, components: &[CountHistogram], method: MixtureMethod) -> Result<MixtureFit> {
    let k = components.len();
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 components, got {k}")));
    }
    let bw = observed.bin_width();
    if components.iter().any(|c| !same_width(c.bin_width(), bw)) {
        return Err(Error::invalid("histograms have different bin widths"));
    }
    let len = components
        .iter()
        .map(|c| c.probs().len())
        .chain(std::iter::once(observed.probs().len()))
        .max()
        .unwrap_or(0);
    let o = DVector::from_iterator(len, (0..len).map(|n| observed.prob(n as u64)));
    let c = DMatrix::from_fn(len, k, |n, j| components[j].prob(n as u64));

    let unidentifiable = affine_rank(&c) < k - 1;
    let weights = match method {
        MixtureMethod::LeastSquares => simplex_least_squares(&c, &o)?,
        MixtureMethod::MultinomialMl => multinomial_em(&c, &o),
    };
    let w = DVector::from_column_slice(&weights);
    let residual = (&c * &w - &o).norm();
    Ok(MixtureFit { weights, residual, unidentifiable })
}

fn affine_rank(c: &DMatrix<f64>) -> usize {
    let k = c.ncols();
    let diffs = DMatrix::from_fn(c.nrows(), k - 1, |i, j| c[(i, j + 1)] - c[(i, 0)]);
    let sv = diffs.svd(false, false).singular_values;
    let smax = c.norm().max(f64::MIN_POSITIVE);
    sv.iter().filter(|&&s| s > 1e-9 * smax).count()
}

/// Minimises `‖C w − o‖²` over the simplex by solving the equality-constrained
/// problem on every support and keeping the best feasible one.
fn simplex_least_squares(c: &DMatrix<f64>, o: &DVector<f64>) -> Result<Vec<f64>> {
    let k = c.ncols();
    if k > 16 {
        return Err(Error::invalid("too many mixture components"));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
        let s = support.len();
        let cs = c.select_columns(&support);
        // KKT system of min ‖Cs w − o‖² subject to Σ w = 1
        let mut a = DMatrix::zeros(s + 1, s + 1);
        a.view_mut((0, 0), (s, s)).copy_from(&(cs.transpose() * &cs));
        a.view_mut((0, s), (s, 1)).fill(1.0);
        a.view_mut((s, 0), (1, s)).fill(1.0);
        let mut b = DVector::zeros(s + 1);
        b.rows_mut(0, s).copy_from(&(cs.transpose() * o));
        b[s] = 1.0;
        let Ok(sol) = a.svd(true, true).solve(&b, 1e-14) else {
            continue;
        };
        if sol.rows(0, s).iter().any(|&w| !(w >= -1e-12)) {
            continue;
        }
        let mut w = vec![0.0; k];
        for (i, &j) in support.iter().enumerate() {
            w[j] = sol[i].max(0.0);
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let cost = (c * DVector::from_column_slice(&w) - o).norm_squared();
        if best.as_ref().is_none_or(|(bc, _)| cost < *bc - 1e-15) {
            best = Some((cost, w));
        }
    }
    best.map(|(_, w)| w)
        .ok_or_else(|| Error::Numerical("no feasible mixture weights".into()))
}

fn multinomial_em(c: &DMatrix<f64>, o: &DVector<f64>) -> Vec<f64> {
    let k = c.ncols();
    let mut w = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        let mut next = vec![0.0; k];
        let mut used = 0.0;
        for n in 0..c.nrows() {
            if o[n] == 0.0 {
                continue;
            }
            let mix: f64 = (0..k).map(|j| w[j] * c[(n, j)]).sum();
            if mix <= 0.0 {
                continue;
            }
            used += o[n];
            for j in 0..k {
                next[j] += o[n] * w[j] * c[(n, j)] / mix;
            }
        }
        if used > 0.0 {
            next.iter_mut().for_each(|x| *x /= used);
        }
        let change = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    w
}

/// One-atom rates: `r10` for 1 → 0 and `r01` for 0 → 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneAtomRates {
    pub r10: f64,
    pub r01: f64,
}

impl OneAtomRates {
    pub fn rate_matrix(&self) -> Result<RateMatrix> {
        RateMatrix::from_rows(&[vec![0.0, self.r01], vec![self.r10, 0.0]])
    }

    /// `(p̄0, p̄1) = (R10, R01) / (R10 + R01)`.
    pub fn steady_state(&self) -> Result<[f64; 2]> {
        let total = self.r10 + self.r01;
        if !(total > 0.0) {
            return Err(Error::domain("steady state needs a positive total rate"));
        }
        Ok([self.r10 / total, self.r01 / total])
    }
}

/// Two-atom rates: probe-induced `r10`, `r21` and the repumping rate `r_rep`
/// (entering as `0→1 = 2·r_rep`, `1→2 = r_rep`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoAtomRates {
    pub r10: f64,
    pub r21: f64,
    pub r_rep: f64,
}

impl TwoAtomRates {
    pub fn rate_matrix(&self) -> Result<RateMatrix> {
        RateMatrix::from_rows(&[
            vec![0.0, 2.0 * self.r_rep, 0.0],
            vec![self.r10, 0.0, self.r_rep],
            vec![0.0, self.r21, 0.0],
        ])
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.r10, self.r21, self.r_rep]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { r10: a[0], r21: a[1], r_rep: a[2] }
    }

    fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid(format!("rates must be positive, got {self:?}")));
        }
        Ok(())
    }

    /// Largest relative difference between corresponding rates.
    pub fn max_relative_change(&self, other: &Self) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Splits a total rate `R10 + R01` into its parts using the steady-state
/// populations: `r10 = p̄0 · total`, `r01 = p̄1 · total`.
pub fn decompose_rates(total: f64, weights: &MixtureFit) -> Result<OneAtomRates> {
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::domain(format!("total rate must be positive, got {total}")));
    }
    let [p0, p1] = weights.weights[..] else {
        return Err(Error::invalid(format!("need 2 weights, got {}", weights.weights.len())));
    };
    Ok(OneAtomRates { r10: p0 * total, r01: p1 * total })
}

/// Mean state probabilities `⟨p_α⟩(t)` from the rate equations.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSolution {
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
    /// Some time point needed the series propagator because the generator is
    /// (nearly) defective.
    pub series_fallback: bool,
}

/// Solves the two-atom rate equations from `initial` at each of `times`.
///
/// An infinite time returns the stationary vector.
pub fn solve_three_state(rates: &TwoAtomRates, initial: [f64; 3], times: &[f64]) -> Result<RateSolution> {
    solve_rate_equations(&rates.rate_matrix()?, &initial, times)
}

/// [`solve_three_state`] for an arbitrary rate matrix.
pub fn solve_rate_equations(rates: &RateMatrix, initial: &[f64], times: &[f64]) -> Result<RateSolution> {
    if initial.len() != rates.n_states() {
        return Err(Error::invalid("initial vector and rate matrix disagree in size"));
    }
    check_distribution(initial, 1e-9)?;
    let mut stationary = None;
    let mut series_fallback = false;
    let mut probs = Vec::with_capacity(times.len());
    for &t in times {
        if t == f64::INFINITY {
            if stationary.is_none() {
                stationary = Some(rates.stationary()?);
            }
            probs.push(stationary.clone().unwrap());
            continue;
        }
        let prop = rates.propagator(t)?;
        series_fallback |= rates.n_states() == 3 && prop.method() == PropagatorMethod::Series;
        probs.push(prop.apply(initial));
    }
    Ok(RateSolution { times: times.to_vec(), probs, series_fallback })
}

/// `R21 = 2 (T2/T1) R10`: scattering scales with intracavity intensity and
/// either of two atoms can make the jump.
pub fn predicted_r21(r10: f64, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 > 0.0) {
        return Err(Error::domain(format!("T1 must be positive, got {t1}")));
    }
    if !(t2 >= 0.0) {
        return Err(Error::domain(format!("T2 must be non-negative, got {t2}")));
    }
    Ok(2.0 * (t2 / t1) * r10)
}

/// A fitted `R21` next to the intensity-scaling prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R21Comparison {
    pub predicted: f64,
    pub fitted: f64,
    /// `fitted / predicted`.
    pub ratio: f64,
}

pub fn compare_r21(rates: &TwoAtomRates, t1: f64, t2: f64) -> Result<R21Comparison> {
    let predicted = predicted_r21(rates.r10, t1, t2)?;
    Ok(R21Comparison {
        predicted,
        fitted: rates.r21,
        ratio: rates.r21 / predicted,
    })
}

/// Starting rates from a set of single-atom traces recorded without
/// repumping: `r10` from the ensemble decay, `r21` from [`predicted_r21`] and
/// `r_rep = r10`.
pub fn initial_guess_from_decay(no_repump: &[BinnedTrace], t1: f64, t2: f64) -> Result<TwoAtomRates> {
    let fit = ensemble_average(no_repump)?.fit_exponential()?;
    if fit.unidentifiable {
        return Err(Error::Numerical("ensemble decay does not determine a rate".into()));
    }
    let r10 = fit.rate;
    Ok(TwoAtomRates { r10, r21: predicted_r21(r10, t1, t2)?, r_rep: r10 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeFitOptions {
    /// Stop once no rate changes by more than this fraction.
    pub tol: f64,
    pub max_iter: usize,
    /// State probabilities at the start of every trace.
    pub initial: Vec<f64>,
    pub predict_mode: PredictMode,
}

impl Default for IterativeFitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            max_iter: 50,
            initial: vec![0.0, 0.0, 1.0],
            predict_mode: PredictMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Rates fitted in this iteration.
    pub rates: TwoAtomRates,
    /// RMS difference between the fitted curves and the filtered average.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterativeFit {
    pub rates: TwoAtomRates,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
    /// Two-cycle detected: iterate `k` matched `k − 2` but not `k − 1`.
    pub oscillating: bool,
    /// Not converged; `rates` is the iterate with the smallest residual.
    pub best_iterate: bool,
}

impl IterativeFit {
    pub fn iterations(&self) -> usize {
        self.history.len()
    }
}

/// The self-consistent two-atom fit.
///
/// Each iteration filters every trace with the current rates, averages the
/// posteriors over traces bin by bin, and fits the analytic solution of the
/// rate equations (started from `opts.initial`) to that average by unweighted
/// least squares over the bin midpoints.
pub fn iterative_rate_fit(
    traces: &[BinnedTrace],
    emissions: &[EmissionModel],
    initial_guess: TwoAtomRates,
    opts: &IterativeFitOptions,
) -> Result<IterativeFit> {
    if traces.is_empty() {
        return Err(Error::Empty("no traces"));
    }
    initial_guess.validate()?;
    if emissions.len() != 3 {
        return Err(Error::invalid(format!("need 3 emission models, got {}", emissions.len())));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid("tol must be positive and max_iter at least 1"));
    }
    let bw = traces[0].bin_width();
    if traces.iter().any(|t| !same_width(t.bin_width(), bw)) {
        return Err(Error::invalid("traces have different bin widths"));
    }
    let n_bins = traces.iter().map(|t| t.len()).min().unwrap_or(0);
    if n_bins < 2 {
        return Err(Error::invalid("traces need at least 2 bins"));
    }

    let mut current = initial_guess;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut oscillating = false;
    for _ in 0..opts.max_iter {
        let cfg = FilterConfig::new(current.rate_matrix()?, emissions.to_vec(), opts.initial.clone(), opts.predict_mode)?;
        let average = average_posteriors(traces, &cfg, n_bins)?;
        let record = fit_mean_curves(&average, bw, &opts.initial, current)?;
        let change = record.rates.max_relative_change(&current);
        let cycles = history.len() >= 2 && {
            let two_back = &history[history.len() - 2].rates;
            record.rates.max_relative_change(two_back) < opts.tol
        };
        current = record.rates;
        history.push(record);
        if change < opts.tol {
            converged = true;
            break;
        }
        if cycles {
            oscillating = true;
            break;
        }
    }
    let mut best_iterate = false;
    if !converged {
        let best = history
            .iter()
            .min_by(|a, b| a.residual.total_cmp(&b.residual))
            .expect("at least one iteration");
        current = best.rates;
        best_iterate = true;
    }
    Ok(IterativeFit { rates: current, history, converged, oscillating, best_iterate })
}

/// Bin-wise mean of the filtered probabilities over all traces, truncated to
/// `n_bins`.
fn average_posteriors(traces: &[BinnedTrace], cfg: &FilterConfig, n_bins: usize) -> Result<Vec<[f64; 3]>> {
    let sums = traces
        .par_iter()
        .map(|t| {
            let out = run_filter(t, cfg)?;
            Ok::<_, Error>(out.trace.probs[..n_bins].iter().map(|p| [p[0], p[1], p[2]]).collect::<Vec<_>>())
        })
        .try_reduce(
            || vec![[0.0; 3]; n_bins],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                Ok(a)
            },
        )?;
    let k = traces.len() as f64;
    Ok(sums.into_iter().map(|s| s.map(|v| v / k)).collect())
}

/// Mean curves at bin midpoints `(i + ½)·bw` by repeated exact propagation.
fn mean_curves(rates: &TwoAtomRates, initial: &[f64], bw: f64, n_bins: usize) -> Result<Vec<Vec<f64>>> {
    let q = rates.rate_matrix()?;
    let half = q.propagator(0.5 * bw)?;
    let full = q.propagator(bw)?;
    let mut p = half.apply(initial);
    let mut out = Vec::with_capacity(n_bins);
    for _ in 0..n_bins {
        out.push(p.clone());
        p = full.apply(&p);
    }
    Ok(out)
}

fn fit_mean_curves(average: &[[f64; 3]], bw: f64, initial: &[f64], start: TwoAtomRates) -> Result<IterationRecord> {
    let n_bins = average.len();
    let x0: Vec<f64> = start.as_array().iter().map(|r| r.ln()).collect();
    let residuals = |x: &[f64], r: &mut Vec<f64>| {
        r.clear();
        let rates = TwoAtomRates::from_array([x[0].exp(), x[1].exp(), x[2].exp()]);
        match mean_curves(&rates, initial, bw, n_bins) {
            Ok(curves) => {
                for (m, a) in curves.iter().zip(average) {
                    r.extend((0..3).map(|k| m[k] - a[k]));
                }
            }
            Err(_) => r.resize(3 * n_bins, f64::INFINITY),
        }
    };
    let rep = levenberg_marquardt(residuals, &x0, LmOptions { max_iter: 200, ..LmOptions::default() });
    if rep.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence { iterations: rep.iterations, residual: rep.residual_norm });
    }
    let rates = TwoAtomRates::from_array([rep.params[0].exp(), rep.params[1].exp(), rep.params[2].exp()]);
    Ok(IterationRecord {
        rates,
        residual: rep.residual_norm / ((3 * n_bins) as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hist(probs: Vec<f64>) -> CountHistogram {
        CountHistogram::from_probs(1e-3, probs, 1000).unwrap()
    }

    fn poisson_hist(mean: f64, len: usize) -> CountHistogram {
        hist((0..len).map(|n| crate::signal::poisson_pmf(n as u64, mean)).collect())
    }

    #[test]
    fn pure_component_recovered() {
        let c0 = poisson_hist(27.0, 60);
        let c1 = poisson_hist(3.0, 60);
        let fit = fit_mixture(&c0, &[c0.clone(), c1]).unwrap();
        assert_abs_diff_eq!(fit.weights[0], 1.0, epsilon = 1e-12);
        assert!(!fit.unidentifiable);
    }

    #[test]
    fn exact_mixture_recovered() {
        let c0 = poisson_hist(27.0, 60);
        let c1 = poisson_hist(3.0, 60);
        let mixed: Vec<f64> = (0..60).map(|n| 0.64 * c0.prob(n) + 0.36 * c1.prob(n)).collect();
        let obs = hist(mixed);
        for method in [MixtureMethod::LeastSquares, MixtureMethod::MultinomialMl] {
            let fit = fit_mixture_with(&obs, &[c0.clone(), c1.clone()], method).unwrap();
            assert_abs_diff_eq!(fit.weights[0], 0.64, epsilon = 1e-6);
            assert_abs_diff_eq!(fit.weights[1], 0.36, epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_components_flagged() {
        let c0 = poisson_hist(5.0, 30);
        let fit = fit_mixture(&c0, &[c0.clone(), c0.clone()]).unwrap();
        assert!(fit.unidentifiable);
        assert_abs_diff_eq!(fit.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_beats_simplex_grid() {
        let cs = [poisson_hist(10.0, 60), poisson_hist(3.0, 60), poisson_hist(6.0, 60)];
        let obs = poisson_hist(20.0, 60);
        let fit = fit_mixture(&obs, &cs).unwrap();
        assert!(fit.weights.iter().all(|&w| w >= 0.0));
        assert_abs_diff_eq!(fit.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let cost = |w: [f64; 3]| {
            (0..60u64)
                .map(|n| (obs.prob(n) - (0..3).map(|j| w[j] * cs[j].prob(n)).sum::<f64>()).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..=100 {
            for j in 0..=(100 - i) {
                let w = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                assert!(fit.residual <= cost(w) + 1e-12);
            }
        }
    }

    #[test]
    fn decompose_examples() {
        let w = |p0: f64| MixtureFit { weights: vec![p0, 1.0 - p0], residual: 0.0, unidentifiable: false };
        let r = decompose_rates(58.0, &w(40.0 / 58.0)).unwrap();
        assert_abs_diff_eq!(r.r10, 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r01, 18.0, epsilon = 1e-12);
        let r = decompose_rates(50.0, &w(0.64)).unwrap();
        assert_abs_diff_eq!(r.r10, 32.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r01, 18.0, epsilon = 1e-12);
        let r = decompose_rates(10.0, &w(0.5)).unwrap();
        assert_eq!(r.r10, r.r01);
        assert!(decompose_rates(0.0, &w(0.5)).is_err());
    }

    fn rk4(rates: &TwoAtomRates, p0: [f64; 3], t: f64, steps: usize) -> [f64; 3] {
        let q = rates.rate_matrix().unwrap().generator();
        let f = |p: &[f64; 3]| {
            let mut d = [0.0; 3];
            for j in 0..3 {
                d[j] = (0..3).map(|i| p[i] * q[(i, j)]).sum();
            }
            d
        };
        let h = t / steps as f64;
        let mut p = p0;
        let add = |a: &[f64; 3], b: &[f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
        for _ in 0..steps {
            let k1 = f(&p);
            let k2 = f(&add(&p, &k1, h / 2.0));
            let k3 = f(&add(&p, &k2, h / 2.0));
            let k4 = f(&add(&p, &k3, h));
            for i in 0..3 {
                p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        p
    }

    #[test]
    fn three_state_matches_rk4() {
        let rates = TwoAtomRates { r10: 104.0, r21: 52.0, r_rep: 45.0 };
        let times = [0.0, 1e-3, 5e-3, 0.02, 0.1];
        let sol = solve_three_state(&rates, [0.0, 0.0, 1.0], &times).unwrap();
        assert!(!sol.series_fallback);
        assert_eq!(sol.probs[0], vec![0.0, 0.0, 1.0]);
        for (t, p) in times.iter().zip(&sol.probs) {
            let r = rk4(&rates, [0.0, 0.0, 1.0], *t, 20_000);
            for k in 0..3 {
                assert_abs_diff_eq!(p[k], r[k], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn three_state_stationary_limit() {
        let rates = TwoAtomRates { r10: 104.0, r21: 52.0, r_rep: 45.0 };
        let sol = solve_three_state(&rates, [0.0, 0.0, 1.0], &[f64::INFINITY, 10.0]).unwrap();
        // null space of the generator: detailed balance along the chain
        let (a, b) = (2.0 * 45.0 / 104.0, 45.0 / 52.0);
        let z = 1.0 + a + a * b;
        let pi = [1.0 / z, a / z, a * b / z];
        for k in 0..3 {
            assert_abs_diff_eq!(sol.probs[0][k], pi[k], epsilon = 1e-8);
            assert_abs_diff_eq!(sol.probs[1][k], pi[k], epsilon = 1e-8);
        }
    }

    #[test]
    fn equal_rates_conserve_probability() {
        let rates = TwoAtomRates { r10: 30.0, r21: 30.0, r_rep: 30.0 };
        let times: Vec<f64> = (0..1000).map(|i| i as f64 * 1e-4).collect();
        let sol = solve_three_state(&rates, [0.0, 0.0, 1.0], &times).unwrap();
        for p in &sol.probs {
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn r21_prediction() {
        assert_abs_diff_eq!(predicted_r21(40.0, 0.5, 0.25).unwrap(), 40.0, epsilon = 1e-12);
        assert_eq!(predicted_r21(40.0, 0.5, 0.0).unwrap(), 0.0);
        assert!(predicted_r21(40.0, 0.0, 0.1).is_err());
        let cmp = compare_r21(&TwoAtomRates { r10: 104.0, r21: 52.0, r_rep: 45.0 }, 0.5, 0.25).unwrap();
        assert_abs_diff_eq!(cmp.ratio, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn iterative_fit_rejects_empty() {
        let em = vec![EmissionModel::poisson(1.0, 1e-3).unwrap(); 3];
        let guess = TwoAtomRates { r10: 1.0, r21: 1.0, r_rep: 1.0 };
        assert!(iterative_rate_fit(&[], &em, guess, &IterativeFitOptions::default()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mixture_permutation_equivariant(m0 in 0.5f64..30.0, m1 in 0.5f64..30.0, m2 in 0.5f64..30.0, w in proptest::collection::vec(0.01f64..1.0, 3)) {
                prop_assume!((m0 - m1).abs() > 0.5 && (m1 - m2).abs() > 0.5 && (m0 - m2).abs() > 0.5);
                let cs = [poisson_hist(m0, 80), poisson_hist(m1, 80), poisson_hist(m2, 80)];
                let s: f64 = w.iter().sum();
                let obs = hist((0..80).map(|n| (0..3).map(|j| w[j] / s * cs[j].prob(n)).sum::<f64>() + 1e-4).collect());
                let a = fit_mixture(&obs, &cs).unwrap();
                let perm = [cs[2].clone(), cs[0].clone(), cs[1].clone()];
                let b = fit_mixture(&obs, &perm).unwrap();
                prop_assert!((a.weights[2] - b.weights[0]).abs() < 1e-8);
                prop_assert!((a.weights[0] - b.weights[1]).abs() < 1e-8);
                prop_assert!((a.weights[1] - b.weights[2]).abs() < 1e-8);
            }

            #[test]
            fn decompose_inverts_steady_state(r10 in 0.1f64..500.0, r01 in 0.1f64..500.0) {
                let rates = OneAtomRates { r10, r01 };
                let pi = rates.rate_matrix().unwrap().stationary().unwrap();
                let fit = MixtureFit { weights: pi, residual: 0.0, unidentifiable: false };
                let back = decompose_rates(r10 + r01, &fit).unwrap();
                prop_assert!((back.r10 - r10).abs() < 1e-8 * (r10 + r01));
                prop_assert!((back.r01 - r01).abs() < 1e-8 * (r10 + r01));
            }

            #[test]
            fn three_state_conserves(r in proptest::collection::vec(0.1f64..300.0, 3), t in 0.0f64..1.0) {
                let rates = TwoAtomRates::from_array([r[0], r[1], r[2]]);
                let sol = solve_three_state(&rates, [0.0, 0.0, 1.0], &[t]).unwrap();
                prop_assert!((sol.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
