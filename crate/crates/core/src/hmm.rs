//! Discrete-time hidden Markov models with Poisson emissions over binned
//! photon counts.
//!
//! A hidden chain moves between `N` states once per bin with a row-stochastic
//! matrix `A`; in state `i` the bin holds a Poisson number of counts with mean
//! `λ_i`. Transitions and means are estimated by expectation maximisation
//! (Baum–Welch) and the number of states by AIC or BIC. Extra states stand in
//! for correlated hidden motion, which a Markov filter over the bare atomic
//! states cannot represent.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::ProbabilityTrace;
use crate::markov::{check_distribution, log_stochastic, RateMatrix};
use crate::signal::{poisson_ln_pmf, same_width, BinnedTrace};
use crate::simulate::{derive_seed, rng_from_seed};

/// Header line of the model file.
pub const MODEL_FORMAT: &str = "#poisson-hmm v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonHmm {
    n_states: usize,
    /// Row-major per-bin transition probabilities.
    trans: Vec<f64>,
    means: Vec<f64>,
    initial: Vec<f64>,
    bin_width: f64,
}

impl PoissonHmm {
    pub fn new(trans: &[Vec<f64>], means: Vec<f64>, initial: Vec<f64>, bin_width: f64) -> Result<Self> {
        let n = means.len();
        if n == 0 {
            return Err(Error::Empty("model has no states"));
        }
        if trans.len() != n || trans.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(format!("transition matrix must be {n}x{n}")));
        }
        let model = Self {
            n_states: n,
            trans: trans.iter().flatten().copied().collect(),
            means,
            initial,
            bin_width,
        };
        model.validate()?;
        Ok(model)
    }

    /// The chain sampled once per bin: `A = exp(Q·Δt_b)`, `λ_i = flux_i·Δt_b`.
    pub fn from_rates(rates: &RateMatrix, flux: &[f64], initial: Vec<f64>, bin_width: f64) -> Result<Self> {
        let n = rates.n_states();
        if flux.len() != n {
            return Err(Error::invalid("one flux per state required"));
        }
        let prop = rates.propagator(bin_width)?;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| prop.entry(i, j)).collect()).collect();
        Self::new(&rows, flux.iter().map(|f| f * bin_width).collect(), initial, bin_width)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states;
        if self.trans.len() != n * n || self.initial.len() != n {
            return Err(Error::invalid("model dimensions disagree"));
        }
        for i in 0..n {
            check_distribution(self.row(i), 1e-9)
                .map_err(|e| Error::invalid(format!("transition row {i}: {e}")))?;
        }
        if self.means.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(Error::invalid(format!("means must be finite and >= 0: {:?}", self.means)));
        }
        check_distribution(&self.initial, 1e-9).map_err(|e| Error::invalid(format!("initial: {e}")))?;
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::invalid("bin width must be positive"));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn trans(&self, i: usize, j: usize) -> f64 {
        self.trans[i * self.n_states + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.trans[i * self.n_states..(i + 1) * self.n_states]
    }

    pub fn trans_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states, self.n_states, &self.trans)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    /// Free parameters: `N(N−1)` transitions, `N` means and `N−1` initial
    /// probabilities, i.e. `N² + N − 1`.
    pub fn n_params(&self) -> usize {
        n_params(self.n_states)
    }

    /// Relabels states so that new state `k` is old state `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states;
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation"));
        }
        let rows: Vec<Vec<f64>> = (0..n).map(|a| (0..n).map(|b| self.trans(perm[a], perm[b])).collect()).collect();
        Self::new(
            &rows,
            perm.iter().map(|&p| self.means[p]).collect(),
            perm.iter().map(|&p| self.initial[p]).collect(),
            self.bin_width,
        )
    }

    /// States relabelled by increasing mean count.
    pub fn sorted_by_mean(&self) -> Self {
        let mut perm: Vec<usize> = (0..self.n_states).collect();
        perm.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        self.permute(&perm).expect("sorting yields a permutation")
    }

    /// Draws hidden states and counts for `n_bins` bins.
    pub fn sample(&self, n_bins: usize, seed: u64) -> Result<HmmSample> {
        self.sample_with(n_bins, &mut rng_from_seed(seed))
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n_bins: usize, rng: &mut R) -> Result<HmmSample> {
        let emit: Vec<Option<Poisson<f64>>> = self
            .means
            .iter()
            .map(|&m| (m > 0.0).then(|| Poisson::new(m).map_err(|e| Error::invalid(e.to_string()))).transpose())
            .collect::<Result<_>>()?;
        let mut states = Vec::with_capacity(n_bins);
        let mut counts = Vec::with_capacity(n_bins);
        let mut s = categorical(&self.initial, rng);
        for t in 0..n_bins {
            if t > 0 {
                s = categorical(self.row(s), rng);
            }
            states.push(s);
            counts.push(emit[s].as_ref().map_or(0, |d| d.sample(rng) as u64));
        }
        Ok(HmmSample {
            states,
            trace: BinnedTrace::new(self.bin_width, counts, 0.0)?,
        })
    }

    /// Writes the plain-text model file. Values use Rust's shortest
    /// round-trip formatting, so [`PoissonHmm::read_from`] restores every bit.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{MODEL_FORMAT}")?;
        writeln!(w, "n_states {}", self.n_states)?;
        writeln!(w, "bin_width {}", self.bin_width)?;
        writeln!(w, "initial {}", join(&self.initial))?;
        writeln!(w, "means {}", join(&self.means))?;
        for i in 0..self.n_states {
            writeln!(w, "trans {}", join(self.row(i)))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Format { line: line + 1, msg: msg.to_string() };
        let (_, head) = lines.next().ok_or_else(|| bad(0, "empty file"))?;
        if head?.trim() != MODEL_FORMAT {
            return Err(bad(0, &format!("expected header '{MODEL_FORMAT}'")));
        }
        let mut n_states = None;
        let mut bin_width = None;
        let mut initial = None;
        let mut means = None;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, rest) = line.split_once(' ').ok_or_else(|| bad(i, "expected 'key values'"))?;
            let values: Vec<f64> = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(i, &e.to_string())))
                .collect::<Result<_>>()?;
            match key {
                "n_states" => {
                    n_states = Some(rest.trim().parse::<usize>().map_err(|e| bad(i, &e.to_string()))?)
                }
                "bin_width" => bin_width = values.first().copied(),
                "initial" => initial = Some(values),
                "means" => means = Some(values),
                "trans" => rows.push(values),
                other => return Err(bad(i, &format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Format { line: 0, msg: format!("missing '{k}'") };
        let n = n_states.ok_or_else(|| missing("n_states"))?;
        let means = means.ok_or_else(|| missing("means"))?;
        if means.len() != n || rows.len() != n {
            return Err(Error::Format { line: 0, msg: format!("n_states is {n} but found {} means and {} rows", means.len(), rows.len()) });
        }
        Self::new(&rows, means, initial.ok_or_else(|| missing("initial"))?, bin_width.ok_or_else(|| missing("bin_width"))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u = rng.random::<f64>() * p.iter().sum::<f64>();
    for (i, &pi) in p.iter().enumerate() {
        if u < pi {
            return i;
        }
        u -= pi;
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

pub fn n_params(n_states: usize) -> usize {
    n_states * n_states + n_states - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmSample {
    pub states: Vec<usize>,
    pub trace: BinnedTrace,
}

fn check_width(model: &PoissonHmm, trace: &BinnedTrace) -> Result<()> {
    if !same_width(model.bin_width, trace.bin_width()) {
        return Err(Error::invalid(format!(
            "model is for {} s bins, trace has {} s bins",
            model.bin_width,
            trace.bin_width()
        )));
    }
    Ok(())
}

/// Emission likelihoods of one count for every state, scaled by their largest
/// entry. Returns the log of the scale (including `−ln n!`).
fn emissions(ln_means: &[f64], means: &[f64], n: u64, ln_fact: f64, out: &mut [f64]) -> f64 {
    let mut top = f64::NEG_INFINITY;
    for ((o, &lm), &m) in out.iter_mut().zip(ln_means).zip(means) {
        *o = if m == 0.0 {
            if n == 0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        } else {
            n as f64 * lm - m
        };
        top = top.max(*o);
    }
    if top == f64::NEG_INFINITY {
        out.fill(0.0);
        return top;
    }
    for o in out.iter_mut() {
        *o = (*o - top).exp();
    }
    top - ln_fact
}

/// Scaled emissions for every bin, `T × N`, plus the per-bin log scale.
///
/// Counts repeat heavily, so when the largest count is small compared with
/// the trace length each distinct value is evaluated once.
fn emission_table(model: &PoissonHmm, counts: &[u64]) -> (Vec<f64>, Vec<f64>) {
    let n = model.n_states;
    let ln_means: Vec<f64> = model.means.iter().map(|m| m.ln()).collect();
    let ln_fact = |c: u64| statrs::function::gamma::ln_gamma(c as f64 + 1.0);
    let mut emit = vec![0.0; counts.len() * n];
    let mut shift = vec![0.0; counts.len()];
    let max = counts.iter().copied().max().unwrap_or(0) as usize;
    if max < 2 * counts.len() + 64 {
        let mut tab = vec![0.0; (max + 1) * n];
        let mut tab_shift = vec![0.0; max + 1];
        let mut seen = vec![false; max + 1];
        for &c in counts {
            let c = c as usize;
            if !seen[c] {
                seen[c] = true;
                tab_shift[c] = emissions(&ln_means, &model.means, c as u64, ln_fact(c as u64), &mut tab[c * n..(c + 1) * n]);
            }
        }
        for (t, &c) in counts.iter().enumerate() {
            let c = c as usize;
            emit[t * n..(t + 1) * n].copy_from_slice(&tab[c * n..(c + 1) * n]);
            shift[t] = tab_shift[c];
        }
    } else {
        for (t, &c) in counts.iter().enumerate() {
            shift[t] = emissions(&ln_means, &model.means, c, ln_fact(c), &mut emit[t * n..(t + 1) * n]);
        }
    }
    (emit, shift)
}

struct Forward {
    /// Normalised forward variables, row-major `T × N`.
    alpha: Vec<f64>,
    /// Scaled emissions, row-major `T × N`.
    emit: Vec<f64>,
    /// Normaliser of each step, relative to the scaled emissions.
    scale: Vec<f64>,
    log_likelihood: f64,
}

fn forward(model: &PoissonHmm, counts: &[u64]) -> Forward {
    let n = model.n_states;
    let t_len = counts.len();
    let mut alpha = vec![0.0; t_len * n];
    let (emit, shift) = emission_table(model, counts);
    let mut scale = vec![0.0; t_len];
    let mut ll = 0.0;
    for t in 0..t_len {
        let (prev, cur) = alpha.split_at_mut(t * n);
        let cur = &mut cur[..n];
        if t == 0 {
            cur.copy_from_slice(&model.initial);
        } else {
            let prev = &prev[(t - 1) * n..];
            for j in 0..n {
                cur[j] = (0..n).map(|i| prev[i] * model.trans[i * n + j]).sum();
            }
        }
        for j in 0..n {
            cur[j] *= emit[t * n + j];
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) || shift[t] == f64::NEG_INFINITY {
            return Forward { alpha, emit, scale, log_likelihood: f64::NEG_INFINITY };
        }
        let inv = 1.0 / c;
        for x in cur.iter_mut() {
            *x *= inv;
        }
        scale[t] = c;
        ll += c.ln() + shift[t];
    }
    Forward { alpha, emit, scale, log_likelihood: ll }
}

/// Scaled backward variables for a completed forward pass.
fn backward(model: &PoissonHmm, fw: &Forward) -> Vec<f64> {
    let n = model.n_states;
    let t_len = fw.scale.len();
    let mut beta = vec![1.0; t_len * n];
    let mut w = vec![0.0; n];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let inv = 1.0 / fw.scale[t + 1];
        for j in 0..n {
            w[j] = fw.emit[(t + 1) * n + j] * beta[(t + 1) * n + j] * inv;
        }
        for i in 0..n {
            beta[t * n + i] = (0..n).map(|j| model.trans[i * n + j] * w[j]).sum::<f64>();
        }
    }
    beta
}

/// Exact marginal log-likelihood of the counts by the scaled forward
/// recursion. Counts impossible under the model give `−∞`.
pub fn log_likelihood(model: &PoissonHmm, trace: &BinnedTrace) -> Result<f64> {
    check_width(model, trace)?;
    Ok(forward(model, trace.counts()).log_likelihood)
}

/// Sum of [`log_likelihood`] over independent traces.
pub fn total_log_likelihood(model: &PoissonHmm, traces: &[BinnedTrace]) -> Result<f64> {
    traces.iter().map(|t| log_likelihood(model, t)).sum()
}

/// Forward-backward output for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    /// Smoothed state probabilities per bin.
    pub gamma: Vec<Vec<f64>>,
    /// `Σ_t P(s_t = i, s_{t+1} = j | data)`, row-major.
    pub expected_transitions: Vec<f64>,
    pub log_likelihood: f64,
}

fn impossible() -> Error {
    Error::Numerical("counts have zero probability under the model".into())
}

fn forward_backward(model: &PoissonHmm, counts: &[u64], keep_pairs: bool) -> Result<(Smoothed, Vec<Vec<f64>>)> {
    let n = model.n_states;
    let t_len = counts.len();
    let fw = forward(model, counts);
    if fw.log_likelihood == f64::NEG_INFINITY {
        return Err(impossible());
    }
    let beta = backward(model, &fw);
    let mut gamma = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut g: Vec<f64> = (0..n).map(|i| fw.alpha[t * n + i] * beta[t * n + i]).collect();
        crate::markov::normalize(&mut g);
        gamma.push(g);
    }
    let mut xi_sum = vec![0.0; n * n];
    let mut pairs = Vec::new();
    for t in 0..t_len.saturating_sub(1) {
        let mut xi = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                xi[i * n + j] = fw.alpha[t * n + i] * model.trans[i * n + j] * fw.emit[(t + 1) * n + j] * beta[(t + 1) * n + j]
                    / fw.scale[t + 1];
            }
        }
        crate::markov::normalize(&mut xi);
        for (s, x) in xi_sum.iter_mut().zip(&xi) {
            *s += x;
        }
        if keep_pairs {
            pairs.push(xi);
        }
    }
    Ok((
        Smoothed { gamma, expected_transitions: xi_sum, log_likelihood: fw.log_likelihood },
        pairs,
    ))
}

/// Forward-backward smoothing of one trace.
pub fn smooth(model: &PoissonHmm, trace: &BinnedTrace) -> Result<Smoothed> {
    check_width(model, trace)?;
    Ok(forward_backward(model, trace.counts(), false)?.0)
}

/// Smoothed marginals `P(s_t | all counts)` at the bin midpoints.
pub fn posterior_marginals(model: &PoissonHmm, trace: &BinnedTrace) -> Result<ProbabilityTrace> {
    let s = smooth(model, trace)?;
    Ok(ProbabilityTrace { times: trace.midpoints(), probs: s.gamma })
}

/// Filtered marginals `P(s_t | counts up to t)`.
pub fn filtered_marginals(model: &PoissonHmm, trace: &BinnedTrace) -> Result<ProbabilityTrace> {
    check_width(model, trace)?;
    let fw = forward(model, trace.counts());
    if fw.log_likelihood == f64::NEG_INFINITY {
        return Err(impossible());
    }
    let n = model.n_states;
    Ok(ProbabilityTrace {
        times: trace.midpoints(),
        probs: fw.alpha.chunks_exact(n).map(|c| c.to_vec()).collect(),
    })
}

/// Per-step pair posteriors `P(s_t = i, s_{t+1} = j | data)`, row-major.
pub fn pairwise_posteriors(model: &PoissonHmm, trace: &BinnedTrace) -> Result<Vec<Vec<f64>>> {
    check_width(model, trace)?;
    Ok(forward_backward(model, trace.counts(), true)?.1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmOptions {
    /// Stop when one iteration raises the log-likelihood by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the transition matrix (and initial vector) fixed.
    pub fix_transitions: bool,
    /// Independent starts in [`fit_best`]; the best likelihood wins.
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 500, fix_transitions: false, restarts: 5 }
    }
}

/// Occupancy below which a state is frozen.
pub const STARVATION_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmFitResult {
    pub model: PoissonHmm,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood before the first and after every iteration.
    pub history: Vec<f64>,
    /// States whose expected occupancy fell below [`STARVATION_LIMIT`].
    pub starved_states: Vec<usize>,
}

#[derive(Debug, Clone)]
pub enum EmInit {
    Model(PoissonHmm),
    /// Quantile-spread means, uniform transitions; the seed jitters the means
    /// (0 leaves them unjittered).
    Seed(u64),
}

fn check_traces(traces: &[BinnedTrace]) -> Result<f64> {
    let first = traces.first().ok_or(Error::Empty("no traces"))?;
    if traces.iter().any(|t| !same_width(t.bin_width(), first.bin_width())) {
        return Err(Error::invalid("traces have different bin widths"));
    }
    if traces.iter().all(|t| t.is_empty()) {
        return Err(Error::Empty("traces have no bins"));
    }
    Ok(first.bin_width())
}

/// Starting model: means at the `(k + ½)/N` quantiles of the pooled counts.
pub fn initial_model(traces: &[BinnedTrace], n_states: usize, seed: u64) -> Result<PoissonHmm> {
    let bw = check_traces(traces)?;
    if n_states == 0 {
        return Err(Error::invalid("n_states must be at least 1"));
    }
    let mut all: Vec<u64> = traces.iter().flat_map(|t| t.counts().iter().copied()).collect();
    all.sort_unstable();
    let grand = all.iter().sum::<u64>() as f64 / all.len() as f64;
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<f64> = (0..n_states)
        .map(|k| {
            let q = (k as f64 + 0.5) / n_states as f64;
            let idx = ((q * all.len() as f64) as usize).min(all.len() - 1);
            all[idx] as f64
        })
        .collect();
    for (k, m) in means.iter_mut().enumerate() {
        // keep equal quantiles apart and away from an absorbing zero
        *m += 0.05 * (k as f64 + 1.0) * (grand + 0.1) / n_states as f64;
        if seed != 0 {
            *m *= 1.0 + 0.2 * (rng.random::<f64>() - 0.5);
        }
    }
    let u = 1.0 / n_states as f64;
    let rows = vec![vec![u; n_states]; n_states];
    PoissonHmm::new(&rows, means, vec![u; n_states], bw)
}

/// Baum–Welch for one starting point.
pub fn em_fit(traces: &[BinnedTrace], n_states: usize, init: EmInit, opts: &EmOptions) -> Result<HmmFitResult> {
    let bw = check_traces(traces)?;
    let mut model = match init {
        EmInit::Model(m) => m,
        EmInit::Seed(s) => initial_model(traces, n_states, s)?,
    };
    if model.n_states != n_states {
        return Err(Error::invalid(format!("initial model has {} states, asked for {n_states}", model.n_states)));
    }
    if !same_width(model.bin_width, bw) {
        return Err(Error::invalid("initial model and traces differ in bin width"));
    }
    if n_states == 1 {
        return Ok(single_state_fit(traces, bw));
    }

    let mut stats = e_step(&model, traces)?;
    let mut history = vec![stats.log_likelihood];
    let mut frozen = vec![false; n_states];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = m_step(&model, &stats, opts.fix_transitions, &mut frozen, iterations)?;
        let next_stats = e_step(&next, traces)?;
        let (old, new) = (stats.log_likelihood, next_stats.log_likelihood);
        if new < old - 1e-9 * old.abs().max(1.0) {
            return Err(Error::Numerical(format!(
                "log-likelihood decreased from {old} to {new} at iteration {iterations}"
            )));
        }
        model = next;
        stats = next_stats;
        history.push(new);
        if new - old < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(HmmFitResult {
        model,
        log_likelihood: stats.log_likelihood,
        iterations,
        converged,
        history,
        starved_states: (0..n_states).filter(|&i| frozen[i]).collect(),
    })
}

fn single_state_fit(traces: &[BinnedTrace], bw: f64) -> HmmFitResult {
    let (sum, count) = traces
        .iter()
        .fold((0u64, 0usize), |(s, c), t| (s + t.total(), c + t.len()));
    let mean = sum as f64 / count as f64;
    let model = PoissonHmm { n_states: 1, trans: vec![1.0], means: vec![mean], initial: vec![1.0], bin_width: bw };
    let ll: f64 = traces.iter().flat_map(|t| t.counts()).map(|&n| poisson_ln_pmf(n, mean)).sum();
    HmmFitResult {
        model,
        log_likelihood: ll,
        iterations: 1,
        converged: true,
        history: vec![ll],
        starved_states: Vec::new(),
    }
}

struct Stats {
    log_likelihood: f64,
    occupancy: Vec<f64>,
    weighted_counts: Vec<f64>,
    transitions: Vec<f64>,
    first: Vec<f64>,
}

impl Stats {
    fn zeros(n: usize) -> Self {
        Self {
            log_likelihood: 0.0,
            occupancy: vec![0.0; n],
            weighted_counts: vec![0.0; n],
            transitions: vec![0.0; n * n],
            first: vec![0.0; n],
        }
    }

    fn add(&mut self, other: &Stats) {
        self.log_likelihood += other.log_likelihood;
        for (a, b) in self
            .occupancy
            .iter_mut()
            .chain(&mut self.weighted_counts)
            .chain(&mut self.transitions)
            .chain(&mut self.first)
            .zip(other.occupancy.iter().chain(&other.weighted_counts).chain(&other.transitions).chain(&other.first))
        {
            *a += b;
        }
    }
}

/// Expected sufficient statistics of one trace.
fn trace_stats(model: &PoissonHmm, counts: &[u64]) -> Result<Stats> {
    let n = model.n_states;
    let mut st = Stats::zeros(n);
    let fw = forward(model, counts);
    if fw.log_likelihood == f64::NEG_INFINITY {
        return Err(impossible());
    }
    let beta = backward(model, &fw);
    st.log_likelihood = fw.log_likelihood;
    let mut g = vec![0.0; n];
    let mut xi = vec![0.0; n * n];
    let mut w = vec![0.0; n];
    for (t, &c) in counts.iter().enumerate() {
        for i in 0..n {
            g[i] = fw.alpha[t * n + i] * beta[t * n + i];
        }
        crate::markov::normalize(&mut g);
        for i in 0..n {
            st.occupancy[i] += g[i];
            st.weighted_counts[i] += g[i] * c as f64;
        }
        if t == 0 {
            st.first.copy_from_slice(&g);
        }
        if t + 1 < counts.len() {
            let inv = 1.0 / fw.scale[t + 1];
            for j in 0..n {
                w[j] = fw.emit[(t + 1) * n + j] * beta[(t + 1) * n + j] * inv;
            }
            for i in 0..n {
                let a = fw.alpha[t * n + i];
                for j in 0..n {
                    xi[i * n + j] = a * model.trans[i * n + j] * w[j];
                }
            }
            crate::markov::normalize(&mut xi);
            for (s, x) in st.transitions.iter_mut().zip(&xi) {
                *s += x;
            }
        }
    }
    Ok(st)
}

fn e_step(model: &PoissonHmm, traces: &[BinnedTrace]) -> Result<Stats> {
    let per_trace: Vec<Stats> = traces
        .par_iter()
        .filter(|t| !t.is_empty())
        .map(|t| trace_stats(model, t.counts()))
        .collect::<Result<_>>()?;
    // summed in trace order so the result does not depend on scheduling
    let mut st = Stats::zeros(model.n_states);
    for s in &per_trace {
        st.add(s);
    }
    Ok(st)
}

fn m_step(model: &PoissonHmm, st: &Stats, fix_transitions: bool, frozen: &mut [bool], iteration: usize) -> Result<PoissonHmm> {
    let n = model.n_states;
    let mut next = model.clone();
    for i in 0..n {
        if st.occupancy[i] < STARVATION_LIMIT {
            frozen[i] = true;
        }
        if frozen[i] {
            continue;
        }
        next.means[i] = st.weighted_counts[i] / st.occupancy[i];
        if !fix_transitions {
            let row = &st.transitions[i * n..(i + 1) * n];
            let total: f64 = row.iter().sum();
            // a state seen only in the last bin has no outgoing evidence
            if total > 0.0 {
                for j in 0..n {
                    next.trans[i * n + j] = row[j] / total;
                }
            }
        }
    }
    if !fix_transitions {
        let total: f64 = st.first.iter().sum();
        next.initial = st.first.iter().map(|x| x / total).collect();
    }
    if next.means.iter().chain(&next.trans).chain(&next.initial).any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite parameters after iteration {iteration}: means {:?}, trans {:?}, initial {:?}",
            next.means, next.trans, next.initial
        )));
    }
    Ok(next)
}

/// Best of `opts.restarts` EM runs (at least one), started from
/// [`initial_model`] with seeds derived from `seed`. The first start is
/// unjittered.
pub fn fit_best(traces: &[BinnedTrace], n_states: usize, seed: u64, opts: &EmOptions) -> Result<HmmFitResult> {
    let starts = opts.restarts.max(1);
    let fits: Vec<Result<HmmFitResult>> = (0..starts)
        .into_par_iter()
        .map(|r| {
            let s = if r == 0 { 0 } else { derive_seed(seed, r as u64).max(1) };
            em_fit(traces, n_states, EmInit::Seed(s), opts)
        })
        .collect();
    let mut best: Option<HmmFitResult> = None;
    let mut last_err = None;
    for f in fits {
        match f {
            Ok(f) => {
                if best.as_ref().is_none_or(|b| f.log_likelihood > b.log_likelihood) {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one start"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    Aic,
    #[default]
    Bic,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(Criterion::Aic),
            "bic" => Ok(Criterion::Bic),
            other => Err(Error::invalid(format!("unknown criterion '{other}'"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderScore {
    pub n_states: usize,
    pub n_params: usize,
    pub log_likelihood: f64,
    /// `2k − 2 ln L`.
    pub aic: f64,
    /// `k ln T − 2 ln L` with `T` the total number of bins.
    pub bic: f64,
    pub fit: HmmFitResult,
}

impl OrderScore {
    pub fn score(&self, c: Criterion) -> f64 {
        match c {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
        }
    }
}

/// Fits every order in `orders` and returns them best first under
/// `criterion`.
pub fn compare_orders(
    traces: &[BinnedTrace],
    orders: &[usize],
    criterion: Criterion,
    seed: u64,
    opts: &EmOptions,
) -> Result<Vec<OrderScore>> {
    if orders.is_empty() {
        return Err(Error::Empty("no candidate orders"));
    }
    check_traces(traces)?;
    let t_total: usize = traces.iter().map(|t| t.len()).sum();
    let mut scores: Vec<OrderScore> = orders
        .par_iter()
        .map(|&n| {
            let fit = fit_best(traces, n, derive_seed(seed, n as u64), opts)?;
            let k = n_params(n) as f64;
            let ll = fit.log_likelihood;
            Ok(OrderScore {
                n_states: n,
                n_params: n_params(n),
                log_likelihood: ll,
                aic: 2.0 * k - 2.0 * ll,
                bic: k * (t_total as f64).ln() - 2.0 * ll,
                fit,
            })
        })
        .collect::<Result<_>>()?;
    scores.sort_by(|a, b| a.score(criterion).total_cmp(&b.score(criterion)).then(a.n_states.cmp(&b.n_states)));
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateMethod {
    /// `Q = log(A)/Δt_b`.
    MatrixLog,
    /// `Q_ij = A_ij/Δt_b`, accurate only when `Q·Δt_b ≪ 1`.
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRates {
    /// Row-major rates (1/s); the diagonal is zero.
    pub rates: Vec<f64>,
    pub n_states: usize,
    pub method: RateMethod,
    /// `false` when no valid generator was found and the first-order
    /// estimate is reported instead.
    pub valid: bool,
}

impl ContinuousRates {
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n_states + j]
    }

    pub fn rate_matrix(&self) -> Result<RateMatrix> {
        let n = self.n_states;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 0.0 } else { self.rate(i, j) }).collect()).collect();
        RateMatrix::from_rows(&rows)
    }
}

/// Continuous-time rates behind a per-bin transition matrix.
pub fn rates_from_transitions(model: &PoissonHmm) -> ContinuousRates {
    let n = model.n_states;
    let dt = model.bin_width;
    let a = model.trans_matrix();
    if (0..n).all(|i| a[(i, i)] > 0.5) {
        if let Ok(log) = log_stochastic(&a) {
            let scale = log.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
            let ok = (0..n).all(|i| (0..n).all(|j| i == j || log[(i, j)] >= -1e-12 * scale));
            if ok {
                let rates = (0..n * n)
                    .map(|k| if k / n == k % n { 0.0 } else { log[(k / n, k % n)].max(0.0) / dt })
                    .collect();
                return ContinuousRates { rates, n_states: n, method: RateMethod::MatrixLog, valid: true };
            }
        }
    }
    let rates = (0..n * n).map(|k| if k / n == k % n { 0.0 } else { model.trans[k] / dt }).collect();
    ContinuousRates { rates, n_states: n, method: RateMethod::FirstOrder, valid: false }
}
