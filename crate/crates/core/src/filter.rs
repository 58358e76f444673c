//! Recursive Bayesian estimation of the hidden atomic state from a binned
//! photon-count trace.
//!
//! Each bin is processed in two steps. The prior is carried forward with the
//! rate equations (*predict*), then conditioned on the bin's count with Bayes'
//! rule (*update*):
//!
//! ```text
//! p(α | n) = P(n | α) p̃_α / Σ_β P(n | β) p̃_β
//! ```
//!
//! Probabilities are attached to bin midpoints. The initial vector refers to
//! the start of the trace, so the first predict step spans half a bin.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::markov::{check_distribution, normalize, Propagator, RateMatrix};
use crate::signal::{bin_clicks, poisson_ln_pmf, same_width, BinnedTrace, CountHistogram};
use crate::simulate::ClickRecord;

/// Probability floor for counts not seen in an empirical histogram.
pub const EMPIRICAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum EmissionKind {
    /// Poisson with the given mean count per bin.
    Poisson { mean: f64 },
    /// Tabulated `P(n)`; counts beyond the table have probability 0.
    Empirical { probs: Vec<f64> },
}

/// Photon-count distribution of one hidden state at one bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel {
    pub kind: EmissionKind,
    pub bin_width: f64,
}

impl EmissionModel {
    pub fn poisson(mean: f64, bin_width: f64) -> Result<Self> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::invalid(format!("Poisson mean must be >= 0, got {mean}")));
        }
        if !(bin_width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        Ok(Self { kind: EmissionKind::Poisson { mean }, bin_width })
    }

    /// Poisson emission for a detected photon flux (counts/s).
    pub fn from_flux(flux: f64, bin_width: f64) -> Result<Self> {
        Self::poisson(flux * bin_width, bin_width)
    }

    /// Empirical model from a measured histogram.
    ///
    /// Counts up to twice the largest observed count get at least
    /// [`EMPIRICAL_FLOOR`] before normalisation, so a finite reference sample
    /// cannot rule a state out on its own.
    pub fn empirical(hist: &CountHistogram) -> Self {
        Self::empirical_with_floor(hist, EMPIRICAL_FLOOR)
    }

    pub fn empirical_with_floor(hist: &CountHistogram, floor: f64) -> Self {
        let cap = (2 * hist.max_count()).max(1) as usize;
        let mut probs: Vec<f64> = (0..=cap).map(|n| hist.prob(n as u64).max(floor)).collect();
        normalize(&mut probs);
        Self {
            kind: EmissionKind::Empirical { probs },
            bin_width: hist.bin_width(),
        }
    }

    pub fn likelihood(&self, n: u64) -> f64 {
        match &self.kind {
            EmissionKind::Poisson { mean } => poisson_ln_pmf(n, *mean).exp(),
            EmissionKind::Empirical { probs } => probs.get(n as usize).copied().unwrap_or(0.0),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            EmissionKind::Poisson { mean } => *mean,
            EmissionKind::Empirical { probs } => probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictMode {
    /// Exact propagator `exp(Q Δt)`.
    #[default]
    Exact,
    /// First order in `Δt`: `p̃ = p + p·Q·Δt`. Valid only for `R·Δt ≪ 1`.
    Linear,
}

impl fmt::Display for PredictMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictMode::Exact => "exact",
            PredictMode::Linear => "linear",
        })
    }
}

impl std::str::FromStr for PredictMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(PredictMode::Exact),
            "linear" => Ok(PredictMode::Linear),
            other => Err(Error::invalid(format!("unknown predict mode '{other}'"))),
        }
    }
}

/// Largest `Δt · R_max` accepted in linear mode.
pub const LINEAR_MODE_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub rates: RateMatrix,
    pub emissions: Vec<EmissionModel>,
    pub initial: Vec<f64>,
    pub predict_mode: PredictMode,
}

impl FilterConfig {
    pub fn new(rates: RateMatrix, emissions: Vec<EmissionModel>, initial: Vec<f64>, predict_mode: PredictMode) -> Result<Self> {
        let cfg = Self { rates, emissions, initial, predict_mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rates.n_states();
        if self.emissions.len() != n || self.initial.len() != n {
            return Err(Error::invalid(format!(
                "{n} states but {} emission models and {} initial probabilities",
                self.emissions.len(),
                self.initial.len()
            )));
        }
        check_distribution(&self.initial, 1e-9)?;
        let bw = self.emissions[0].bin_width;
        if self.emissions.iter().any(|e| !same_width(e.bin_width, bw)) {
            return Err(Error::invalid("emission models disagree on bin width"));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.rates.n_states()
    }
}

/// Posterior state probabilities at bin midpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTrace {
    pub times: Vec<f64>,
    pub probs: Vec<Vec<f64>>,
}

impl ProbabilityTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.probs.first().map_or(0, |p| p.len())
    }

    /// Most probable state per bin (lowest index on ties).
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.iter().map(|p| argmax(p)).collect()
    }

    /// Writes `t_s,p0,p1,...` rows, preceded by `#`-comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let cols: Vec<String> = (0..self.n_states()).map(|i| format!("p{i}")).collect();
        writeln!(w, "t_s,{}", cols.join(","))?;
        for (t, p) in self.times.iter().zip(&self.probs) {
            let vals: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{t},{}", vals.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Carries `p` forward by `dt` under `rates`.
pub fn predict(p: &[f64], rates: &RateMatrix, dt: f64, mode: PredictMode) -> Result<Vec<f64>> {
    if p.len() != rates.n_states() {
        return Err(Error::invalid("probability vector and rate matrix disagree in size"));
    }
    check_distribution(p, 1e-9)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    Ok(Predictor::new(rates, dt, mode)?.apply(p))
}

/// A predict step with its propagator precomputed for one `dt`.
#[derive(Debug, Clone)]
struct Predictor {
    propagator: Propagator,
}

impl Predictor {
    fn new(rates: &RateMatrix, dt: f64, mode: PredictMode) -> Result<Self> {
        let propagator = match mode {
            PredictMode::Exact => rates.propagator(dt)?,
            PredictMode::Linear => {
                let stiffness = dt * rates.max_exit_rate();
                if stiffness > LINEAR_MODE_LIMIT {
                    return Err(Error::domain(format!(
                        "linear predict needs dt * rate <= {LINEAR_MODE_LIMIT}, got {stiffness}"
                    )));
                }
                linear_propagator(rates, dt)
            }
        };
        Ok(Self { propagator })
    }

    fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.propagator.apply(p)
    }
}

fn linear_propagator(rates: &RateMatrix, dt: f64) -> Propagator {
    let n = rates.n_states();
    let q = rates.generator();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 } + q[(i, j)] * dt).collect())
        .collect();
    Propagator::from_rows(&rows)
}

/// Outcome of one Bayes update.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub posterior: Vec<f64>,
    /// Predictive probability of the observed count, `Σ p̃_α P(n|α)`.
    pub evidence: f64,
    /// The count was impossible under every state; the prior was kept.
    pub zero_likelihood: bool,
}

/// Bayes' rule for one observed count.
///
/// If the count has zero probability under every state with prior mass the
/// update is skipped (posterior = prior) and flagged.
pub fn update(prior: &[f64], n: u64, emissions: &[EmissionModel]) -> Result<Update> {
    if prior.len() != emissions.len() {
        return Err(Error::invalid("prior and emission models disagree in size"));
    }
    check_distribution(prior, 1e-9)?;
    let lik: Vec<f64> = emissions.iter().map(|e| e.likelihood(n)).collect();
    Ok(update_with(prior, &lik))
}

fn update_with(prior: &[f64], lik: &[f64]) -> Update {
    let mut post: Vec<f64> = prior.iter().zip(lik).map(|(p, l)| p * l).collect();
    let evidence: f64 = post.iter().sum();
    if !(evidence > 0.0) || !evidence.is_finite() {
        return Update {
            posterior: prior.to_vec(),
            evidence: 0.0,
            zero_likelihood: true,
        };
    }
    for x in &mut post {
        *x /= evidence;
    }
    Update { posterior: post, evidence, zero_likelihood: false }
}

/// Full output of [`run_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub trace: ProbabilityTrace,
    /// Per-bin predictive probability of the observed count.
    pub evidence: Vec<f64>,
    /// Bins where the zero-likelihood policy fired.
    pub flagged_bins: Vec<usize>,
}

impl FilterOutput {
    /// Sum of log predictive probabilities over non-flagged bins.
    pub fn log_evidence(&self) -> f64 {
        self.evidence.iter().filter(|&&e| e > 0.0).map(|e| e.ln()).sum()
    }

    /// CSV with comment lines recording the rates, predict mode and flagged
    /// bins.
    pub fn write_csv<W: Write>(&self, w: W, cfg: &FilterConfig) -> Result<()> {
        let n = cfg.n_states();
        let mut comments = vec![format!("predict_mode={}", cfg.predict_mode)];
        for i in 0..n {
            for j in 0..n {
                if i != j && cfg.rates.rate(i, j) > 0.0 {
                    comments.push(format!("rate {i}->{j} = {} 1/s", cfg.rates.rate(i, j)));
                }
            }
        }
        let flagged: Vec<String> = self.flagged_bins.iter().map(|b| b.to_string()).collect();
        comments.push(format!("flagged_bins=[{}]", flagged.join(" ")));
        self.trace.write_csv(w, &comments)
    }
}

/// Runs predict/update over every bin of `trace`.
pub fn run_filter(trace: &BinnedTrace, cfg: &FilterConfig) -> Result<FilterOutput> {
    cfg.validate()?;
    let bw = trace.bin_width();
    if !same_width(cfg.emissions[0].bin_width, bw) {
        return Err(Error::invalid(format!(
            "emission models are for {} s bins, trace has {bw} s bins",
            cfg.emissions[0].bin_width
        )));
    }
    let half = Predictor::new(&cfg.rates, 0.5 * bw, cfg.predict_mode)?;
    let full = Predictor::new(&cfg.rates, bw, cfg.predict_mode)?;
    let n_states = cfg.n_states();
    let mut cache: Vec<Option<Vec<f64>>> = Vec::new();

    let mut p = cfg.initial.clone();
    let mut times = Vec::with_capacity(trace.len());
    let mut probs = Vec::with_capacity(trace.len());
    let mut evidence = Vec::with_capacity(trace.len());
    let mut flagged = Vec::new();
    for (i, &n) in trace.counts().iter().enumerate() {
        let prior = if i == 0 { half.apply(&p) } else { full.apply(&p) };
        let idx = n as usize;
        if idx >= cache.len() {
            cache.resize(idx + 1, None);
        }
        let lik = cache[idx].get_or_insert_with(|| cfg.emissions.iter().map(|e| e.likelihood(n)).collect());
        debug_assert_eq!(lik.len(), n_states);
        let u = update_with(&prior, lik);
        if u.zero_likelihood {
            flagged.push(i);
        }
        evidence.push(u.evidence);
        p = u.posterior;
        times.push(trace.midpoint(i));
        probs.push(p.clone());
    }
    Ok(FilterOutput {
        trace: ProbabilityTrace { times, probs },
        evidence,
        flagged_bins: flagged,
    })
}

/// Runs [`run_filter`] on each trace in parallel.
pub fn run_filter_many(traces: &[BinnedTrace], cfg: &FilterConfig) -> Result<Vec<FilterOutput>> {
    traces.par_iter().map(|t| run_filter(t, cfg)).collect()
}

/// Per-bin Shannon entropy (natural log) and its average.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropySummary {
    pub per_bin: Vec<f64>,
    pub mean: f64,
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

pub fn entropy_trace(pt: &ProbabilityTrace) -> EntropySummary {
    let per_bin: Vec<f64> = pt.probs.iter().map(|p| entropy(p)).collect();
    let mean = if per_bin.is_empty() {
        0.0
    } else {
        per_bin.iter().sum::<f64>() / per_bin.len() as f64
    };
    EntropySummary { per_bin, mean }
}

/// Entropy averaged over every bin of every trace.
pub fn mean_entropy(traces: &[ProbabilityTrace]) -> f64 {
    let (sum, count) = traces
        .iter()
        .flat_map(|t| t.probs.iter())
        .fold((0.0, 0usize), |(s, c), p| (s + entropy(p), c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// One point of an entropy-versus-bin-width scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyPoint {
    pub bin_width: f64,
    pub entropy: f64,
}

/// Re-bins the same click records at each width, filters them with the
/// configuration produced by `config_for(bin_width)` and reports the time-
/// and ensemble-averaged entropy.
pub fn entropy_scan<F>(records: &[ClickRecord], bin_widths: &[f64], config_for: F) -> Result<Vec<EntropyPoint>>
where
    F: Fn(f64) -> Result<FilterConfig> + Sync,
{
    if records.is_empty() {
        return Err(Error::Empty("no click records"));
    }
    bin_widths
        .par_iter()
        .map(|&bw| {
            let cfg = config_for(bw)?;
            let traces: Vec<ProbabilityTrace> = records
                .iter()
                .map(|r| Ok(run_filter(&bin_clicks(r, bw)?, &cfg)?.trace))
                .collect::<Result<_>>()?;
            Ok(EntropyPoint { bin_width: bw, entropy: mean_entropy(&traces) })
        })
        .collect()
}

/// `n` points spaced evenly in log between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || n < 2 {
        return Err(Error::invalid(format!("log grid needs 0 < lo < hi and n >= 2, got {lo}, {hi}, {n}")));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

/// Count thresholds with a state assigned to each interval between them.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdClassifier {
    /// Strictly increasing; interval `k` is `[thresholds[k-1], thresholds[k])`.
    pub thresholds: Vec<f64>,
    /// State for each of the `thresholds.len() + 1` intervals.
    pub labels: Vec<usize>,
}

impl ThresholdClassifier {
    pub fn new(thresholds: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        if labels.len() != thresholds.len() + 1 {
            return Err(Error::invalid("need one label per interval"));
        }
        Ok(Self { thresholds, labels })
    }

    /// Thresholds halfway between adjacent per-state mean counts.
    pub fn from_means(means: &[f64]) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::Empty("no state means"));
        }
        let mut order: Vec<usize> = (0..means.len()).collect();
        order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
        let thresholds = order.windows(2).map(|w| 0.5 * (means[w[0]] + means[w[1]])).collect();
        Self::new(thresholds, order)
    }

    pub fn classify(&self, n: u64) -> usize {
        let k = self.thresholds.partition_point(|&t| t <= n as f64);
        self.labels[k]
    }
}

/// Per-bin state from fixed count thresholds; the memoryless baseline for
/// the filter.
pub fn threshold_classify(trace: &BinnedTrace, classifier: &ThresholdClassifier) -> Vec<usize> {
    trace.counts().iter().map(|&n| classifier.classify(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_state(r10: f64, r01: f64) -> RateMatrix {
        RateMatrix::from_rows(&[vec![0.0, r01], vec![r10, 0.0]]).unwrap()
    }

    fn poisson_pair(a: f64, b: f64) -> Vec<EmissionModel> {
        vec![EmissionModel::poisson(a, 1e-3).unwrap(), EmissionModel::poisson(b, 1e-3).unwrap()]
    }

    #[test]
    fn predict_with_zero_rates_is_identity() {
        let p = predict(&[0.3, 0.7], &RateMatrix::zeros(2), 0.01, PredictMode::Exact).unwrap();
        assert_eq!(p, vec![0.3, 0.7]);
    }

    #[test]
    fn predict_long_time_reaches_steady_state() {
        let p = predict(&[0.0, 1.0], &two_state(40.0, 18.0), 10.0, PredictMode::Exact).unwrap();
        assert_abs_diff_eq!(p[0], 40.0 / 58.0, epsilon = 1e-12);
    }

    #[test]
    fn linear_and_exact_one_millisecond() {
        let r = two_state(40.0, 18.0);
        let lin = predict(&[0.0, 1.0], &r, 1e-3, PredictMode::Linear).unwrap();
        assert_abs_diff_eq!(lin[0], 0.040, epsilon = 1e-12);
        let ex = predict(&[0.0, 1.0], &r, 1e-3, PredictMode::Exact).unwrap();
        let closed = (1.0 - (-0.058f64).exp()) * 40.0 / 58.0;
        assert_abs_diff_eq!(ex[0], closed, epsilon = 1e-14);
        assert_abs_diff_eq!(ex[0], 0.0389, epsilon = 1e-4);
    }

    #[test]
    fn linear_mode_rejects_large_steps() {
        assert!(predict(&[0.0, 1.0], &two_state(40.0, 18.0), 0.02, PredictMode::Linear).is_err());
    }

    #[test]
    fn uninformative_update_keeps_prior() {
        let em = poisson_pair(5.0, 5.0);
        let u = update(&[0.2, 0.8], 3, &em).unwrap();
        assert_abs_diff_eq!(u.posterior[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn decisive_update() {
        let u = update(&[0.5, 0.5], 27, &poisson_pair(27.0, 3.0)).unwrap();
        assert!(u.posterior[0] > 0.999);
        // likelihood ratio oracle: (27/3)^27 e^{-24}
        let lr = (27.0f64 / 3.0).powi(27) * (-24.0f64).exp();
        assert_abs_diff_eq!(u.posterior[0], lr / (1.0 + lr), epsilon = 1e-12);
    }

    #[test]
    fn zero_prior_stays_zero() {
        let u = update(&[1.0, 0.0], 4, &poisson_pair(3.0, 27.0)).unwrap();
        assert_eq!(u.posterior, vec![1.0, 0.0]);
    }

    #[test]
    fn impossible_count_is_flagged() {
        let em = vec![EmissionModel::poisson(0.0, 1e-3).unwrap(), EmissionModel::poisson(0.0, 1e-3).unwrap()];
        let u = update(&[0.4, 0.6], 2, &em).unwrap();
        assert!(u.zero_likelihood);
        assert_eq!(u.posterior, vec![0.4, 0.6]);
        let cfg = FilterConfig::new(two_state(40.0, 18.0), em, vec![0.0, 1.0], PredictMode::Exact).unwrap();
        let trace = BinnedTrace::new(1e-3, vec![0, 2, 0], 0.0).unwrap();
        let out = run_filter(&trace, &cfg).unwrap();
        assert_eq!(out.flagged_bins, vec![1]);
    }

    #[test]
    fn empirical_floor_and_cap() {
        let h = CountHistogram::from_probs(1e-3, vec![0.5, 0.0, 0.5], 10).unwrap();
        let e = EmissionModel::empirical(&h);
        assert!(e.likelihood(1) > 0.0);
        assert!(e.likelihood(4) > 0.0);
        assert_eq!(e.likelihood(5), 0.0);
        let EmissionKind::Empirical { probs } = &e.kind else { unreachable!() };
        assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bin_width_mismatch_rejected() {
        let cfg = FilterConfig::new(two_state(1.0, 1.0), poisson_pair(1.0, 2.0), vec![0.5, 0.5], PredictMode::Exact).unwrap();
        let trace = BinnedTrace::new(2e-3, vec![1, 2], 0.0).unwrap();
        assert!(run_filter(&trace, &cfg).is_err());
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
        assert_abs_diff_eq!(entropy(&[0.5, 0.5]), std::f64::consts::LN_2, epsilon = 1e-15);
        let pt = ProbabilityTrace { times: vec![0.0, 1.0], probs: vec![vec![1.0, 0.0], vec![0.5, 0.5]] };
        assert_abs_diff_eq!(entropy_trace(&pt).mean, std::f64::consts::LN_2 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn threshold_at_midpoint_is_exact_for_deltas() {
        let c = ThresholdClassifier::from_means(&[20.0, 4.0]).unwrap();
        assert_eq!(c.thresholds, vec![12.0]);
        let trace = BinnedTrace::new(1e-3, vec![20, 4, 4, 20], 0.0).unwrap();
        assert_eq!(threshold_classify(&trace, &c), vec![0, 1, 1, 0]);
        assert!(ThresholdClassifier::new(vec![3.0, 1.0], vec![0, 1, 2]).is_err());
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e-5, 2e-2, 12).unwrap();
        assert_abs_diff_eq!(g[0], 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(g[11], 2e-2, epsilon = 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rates3() -> impl Strategy<Value = RateMatrix> {
            proptest::collection::vec(0.0f64..200.0, 6).prop_map(|v| {
                RateMatrix::from_rows(&[
                    vec![0.0, v[0], v[1]],
                    vec![v[2], 0.0, v[3]],
                    vec![v[4], v[5], 0.0],
                ])
                .unwrap()
            })
        }

        fn simplex3() -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.0f64..1.0, 3).prop_filter_map("nonzero", |mut v| {
                let s: f64 = v.iter().sum();
                (s > 1e-3).then(|| {
                    v.iter_mut().for_each(|x| *x /= s);
                    v
                })
            })
        }

        proptest! {
            #[test]
            fn semigroup(r in rates3(), p in simplex3(), dt1 in 1e-5f64..0.05, dt2 in 1e-5f64..0.05) {
                let a = predict(&predict(&p, &r, dt1, PredictMode::Exact).unwrap(), &r, dt2, PredictMode::Exact).unwrap();
                let b = predict(&p, &r, dt1 + dt2, PredictMode::Exact).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-10);
                }
            }

            #[test]
            fn update_invariant_under_likelihood_scaling(
                p in simplex3(),
                l in proptest::collection::vec(1e-3f64..1.0, 3),
                s in 1e-3f64..1e3,
            ) {
                let a = update_with(&p, &l);
                let scaled: Vec<f64> = l.iter().map(|x| x * s).collect();
                let b = update_with(&p, &scaled);
                for (x, y) in a.posterior.iter().zip(&b.posterior) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }

            #[test]
            fn posteriors_stay_normalised(
                counts in proptest::collection::vec(0u64..40, 1..200),
                r10 in 0.0f64..300.0,
                r01 in 0.0f64..300.0,
                m0 in 0.0f64..30.0,
                m1 in 0.0f64..30.0,
            ) {
                let cfg = FilterConfig::new(two_state(r10, r01), poisson_pair(m0, m1), vec![0.0, 1.0], PredictMode::Exact).unwrap();
                let out = run_filter(&BinnedTrace::new(1e-3, counts, 0.0).unwrap(), &cfg).unwrap();
                for p in &out.trace.probs {
                    prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
                }
            }

            #[test]
            fn uninformative_filter_is_pure_prediction(
                counts in proptest::collection::vec(0u64..10, 1..50),
                r in rates3(),
                p0 in simplex3(),
            ) {
                let em = vec![EmissionModel::poisson(4.0, 1e-3).unwrap(); 3];
                let cfg = FilterConfig::new(r.clone(), em, p0.clone(), PredictMode::Exact).unwrap();
                let out = run_filter(&BinnedTrace::new(1e-3, counts, 0.0).unwrap(), &cfg).unwrap();
                for (i, p) in out.trace.probs.iter().enumerate() {
                    let t = (i as f64 + 0.5) * 1e-3;
                    let expect = predict(&p0, &r, t, PredictMode::Exact).unwrap();
                    for (x, y) in p.iter().zip(&expect) {
                        prop_assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}
