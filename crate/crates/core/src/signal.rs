//! Binned photon-count traces and the statistics computed from them.

use std::io::Write;

use crate::error::{Error, Result};
use crate::lsq::{levenberg_marquardt, LmOptions};
use crate::simulate::ClickRecord;

/// Photon counts in consecutive bins of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedTrace {
    bin_width: f64,
    counts: Vec<u64>,
    start_time: f64,
}

impl BinnedTrace {
    pub fn new(bin_width: f64, counts: Vec<u64>, start_time: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
        }
        if counts.is_empty() {
            return Err(Error::Empty("binned trace"));
        }
        Ok(Self { bin_width, counts, start_time })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Midpoint of bin `i`.
    pub fn midpoint(&self, i: usize) -> f64 {
        self.start_time + (i as f64 + 0.5) * self.bin_width
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.midpoint(i)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.total() as f64 / self.len() as f64
    }

    /// Sums groups of `factor` consecutive bins; a trailing partial group is
    /// dropped.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::invalid("rebin factor must be positive"));
        }
        let counts: Vec<u64> = self.counts.chunks_exact(factor).map(|c| c.iter().sum()).collect();
        Self::new(self.bin_width * factor as f64, counts, self.start_time)
    }

    /// CSV with header `t_s,count`, one row per bin at its midpoint.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_s,count")?;
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(w, "{},{}", self.midpoint(i), c)?;
        }
        Ok(())
    }
}

/// Counts clicks in `[i·Δ, (i+1)·Δ)`. The trailing partial bin is dropped.
pub fn bin_clicks(record: &ClickRecord, bin_width: f64) -> Result<BinnedTrace> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::invalid(format!("bin width must be positive, got {bin_width}")));
    }
    let n_bins = (record.duration() / bin_width * (1.0 + 1e-12)).floor() as usize;
    if n_bins == 0 {
        return Err(Error::invalid(format!(
            "record of {} s is shorter than one {bin_width} s bin",
            record.duration()
        )));
    }
    let mut counts = vec![0u64; n_bins];
    for t in record.times() {
        let k = (t / bin_width).floor() as usize;
        if k < n_bins {
            counts[k] += 1;
        }
    }
    BinnedTrace::new(bin_width, counts, 0.0)
}

/// Normalised distribution of counts per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CountHistogram {
    bin_width: f64,
    /// `probs[n]` = probability of `n` counts in a bin.
    probs: Vec<f64>,
    total_bins: u64,
}

impl CountHistogram {
    /// Builds a histogram from explicit probabilities (normalised here).
    pub fn from_probs(bin_width: f64, probs: Vec<f64>, total_bins: u64) -> Result<Self> {
        if !(bin_width > 0.0) {
            return Err(Error::invalid("bin width must be positive"));
        }
        if probs.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("histogram probabilities must be non-negative"));
        }
        let s: f64 = probs.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Empty("histogram has no mass"));
        }
        let mut probs: Vec<f64> = probs.into_iter().map(|p| p / s).collect();
        while probs.len() > 1 && probs.last() == Some(&0.0) {
            probs.pop();
        }
        Ok(Self { bin_width, probs, total_bins })
    }

    /// Poisson pmf with the given mean, truncated where the tail drops below
    /// `1e-16`.
    pub fn poisson(mean: f64, bin_width: f64) -> Result<Self> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::invalid(format!("Poisson mean must be >= 0, got {mean}")));
        }
        let mut probs = Vec::new();
        let mut n = 0u64;
        loop {
            let p = poisson_pmf(n, mean);
            probs.push(p);
            if (n as f64) > mean && p < 1e-16 {
                break;
            }
            n += 1;
        }
        Self::from_probs(bin_width, probs, 0)
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, n: u64) -> f64 {
        self.probs.get(n as usize).copied().unwrap_or(0.0)
    }

    /// Number of bins the histogram was estimated from (0 for analytic
    /// histograms).
    pub fn total_bins(&self) -> u64 {
        self.total_bins
    }

    /// Largest count with non-zero probability.
    pub fn max_count(&self) -> u64 {
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as u64
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs.iter().enumerate().map(|(n, p)| (n as f64 - m).powi(2) * p).sum()
    }

    /// CSV with header `n,prob`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,prob")?;
        for (n, p) in self.probs.iter().enumerate() {
            writeln!(w, "{n},{p}")?;
        }
        Ok(())
    }
}

pub fn histogram(trace: &BinnedTrace) -> CountHistogram {
    histogram_of(std::slice::from_ref(trace)).expect("single non-empty trace")
}

/// Pooled histogram of several traces sharing one bin width.
pub fn histogram_of(traces: &[BinnedTrace]) -> Result<CountHistogram> {
    let first = traces.first().ok_or(Error::Empty("no traces"))?;
    let bw = first.bin_width;
    let mut counts: Vec<u64> = Vec::new();
    let mut total = 0u64;
    for t in traces {
        if !same_width(t.bin_width, bw) {
            return Err(Error::invalid("traces have different bin widths"));
        }
        for &c in &t.counts {
            let c = c as usize;
            if c >= counts.len() {
                counts.resize(c + 1, 0);
            }
            counts[c] += 1;
            total += 1;
        }
    }
    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(CountHistogram { bin_width: bw, probs, total_bins: total })
}

pub(crate) fn same_width(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// `ln P(n; mean)` for a Poisson distribution; `-inf` when impossible.
pub fn poisson_ln_pmf(n: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * mean.ln() - mean - statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

pub fn poisson_pmf(n: u64, mean: f64) -> f64 {
    poisson_ln_pmf(n, mean).exp()
}

/// Second-order correlation `g²(τ)` sampled at positive lags.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
}

impl CorrelationCurve {
    pub fn new(lags: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if lags.len() != values.len() {
            return Err(Error::invalid("lags and values differ in length"));
        }
        if lags.first().is_some_and(|&t| !(t > 0.0)) || lags.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("lags must be positive and strictly increasing"));
        }
        Ok(Self { lags, values })
    }

    /// CSV with header `tau_s,g2`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "tau_s,g2")?;
        for (t, v) in self.lags.iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// `g²(kΔ) = ⟨n(t)n(t+kΔ)⟩ / (⟨n(t)⟩⟨n(t+kΔ)⟩)` for `k = 1 ..= max_lag/Δ`,
/// averaging over every `t` for which both bins exist.
pub fn g2(trace: &BinnedTrace, max_lag: f64) -> Result<CorrelationCurve> {
    let bw = trace.bin_width;
    if !(max_lag >= bw * (1.0 - 1e-12)) {
        return Err(Error::invalid(format!("max lag {max_lag} s is shorter than one bin ({bw} s)")));
    }
    let l = trace.len();
    if !(l as f64 * bw > 2.0 * max_lag) {
        return Err(Error::invalid(format!(
            "trace of {} s is too short for lags up to {max_lag} s",
            l as f64 * bw
        )));
    }
    let k_max = (max_lag / bw * (1.0 + 1e-12)).floor() as usize;
    let n: Vec<f64> = trace.counts.iter().map(|&c| c as f64).collect();
    let mut lags = Vec::with_capacity(k_max);
    let mut values = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let m = l - k;
        let (mut sxy, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for t in 0..m {
            sxy += n[t] * n[t + k];
            sx += n[t];
            sy += n[t + k];
        }
        let mf = m as f64;
        if sx == 0.0 || sy == 0.0 {
            return Err(Error::invalid("g2 undefined: no counts in trace"));
        }
        lags.push(k as f64 * bw);
        values.push((sxy / mf) / ((sx / mf) * (sy / mf)));
    }
    CorrelationCurve::new(lags, values)
}

/// Lag-wise mean of [`g2`] over several traces.
pub fn g2_ensemble(traces: &[BinnedTrace], max_lag: f64) -> Result<CorrelationCurve> {
    use rayon::prelude::*;
    if traces.is_empty() {
        return Err(Error::Empty("no traces"));
    }
    let curves: Vec<CorrelationCurve> = traces.par_iter().map(|t| g2(t, max_lag)).collect::<Result<_>>()?;
    let k = curves.iter().map(|c| c.values.len()).min().unwrap_or(0);
    let lags = curves[0].lags[..k].to_vec();
    let values = (0..k)
        .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / curves.len() as f64)
        .collect();
    CorrelationCurve::new(lags, values)
}

/// Result of fitting `A·exp(−r·τ) + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpFit {
    pub amplitude: f64,
    pub rate: f64,
    pub offset: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    /// The decay rate is not determined by the data (flat curve, or a decay
    /// far outside the sampled range).
    pub unidentifiable: bool,
}

/// Least-squares fit of `A·exp(−rτ) + c` to a correlation curve.
pub fn fit_exponential_decay(curve: &CorrelationCurve) -> Result<ExpFit> {
    fit_exponential(&curve.lags, &curve.values)
}

/// Least-squares fit of `A·exp(−r·x) + c` to points `(x, y)`.
pub fn fit_exponential(x: &[f64], y: &[f64]) -> Result<ExpFit> {
    let m = x.len();
    if m != y.len() {
        return Err(Error::invalid("x and y differ in length"));
    }
    if m < 5 {
        return Err(Error::invalid(format!("need at least 5 points for an exponential fit, got {m}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite data in exponential fit"));
    }
    let span = x[m - 1] - x[0];
    if !(span > 0.0) {
        return Err(Error::invalid("x values must span a positive range"));
    }
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    // Starting point: tail mean as offset, first point as amplitude, 1/e time
    // for the rate.
    let tail = (m / 5).max(1);
    let c0 = y[m - tail..].iter().sum::<f64>() / tail as f64;
    let a0 = y[0] - c0;
    let r0 = if a0.abs() > 1e-12 * scale {
        let target = a0.abs() / std::f64::consts::E;
        let cross = (0..m).find(|&i| (y[i] - c0).abs() <= target).unwrap_or(m / 2).max(1);
        1.0 / (x[cross] - x[0]).max(span / m as f64)
    } else {
        3.0 / span
    };

    // parameters (A, ln r, c), with the amplitude anchored at the first point
    let x0 = x[0];
    let model = |p: &[f64], xi: f64| p[0] * (-(p[1].exp()) * (xi - x0)).exp() + p[2];
    let rep = levenberg_marquardt(
        |p, r| {
            r.clear();
            r.extend(x.iter().zip(y).map(|(&xi, &yi)| (model(p, xi) - yi) / scale));
        },
        &[a0, r0.ln(), c0],
        LmOptions::default(),
    );
    if rep.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence {
            iterations: rep.iterations,
            residual: rep.residual_norm * scale,
        });
    }
    let rate = rep.params[1].exp();
    let amplitude = rep.params[0] * (rate * x0).exp();
    let offset = rep.params[2];
    let flat = rep.params[0].abs() <= 1e-6 * scale;
    let out_of_range = rate * span < 1e-2 || rate * (x[1] - x[0]) > 50.0;
    Ok(ExpFit {
        amplitude,
        rate,
        offset,
        residual_norm: rep.residual_norm * scale,
        iterations: rep.iterations,
        unidentifiable: flat || out_of_range || !rate.is_finite(),
    })
}

/// Per-bin mean of several traces (fractional counts).
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedTrace {
    pub bin_width: f64,
    pub start_time: f64,
    pub values: Vec<f64>,
}

impl AveragedTrace {
    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.values.len())
            .map(|i| self.start_time + (i as f64 + 0.5) * self.bin_width)
            .collect()
    }

    /// Fits `A·exp(−r·t) + c` over the bin midpoints.
    pub fn fit_exponential(&self) -> Result<ExpFit> {
        fit_exponential(&self.midpoints(), &self.values)
    }

    /// CSV with header `t_s,mean_count`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_s,mean_count")?;
        for (t, v) in self.midpoints().iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

/// Per-bin arithmetic mean, truncating every trace to the shortest.
pub fn ensemble_average(traces: &[BinnedTrace]) -> Result<AveragedTrace> {
    let first = traces.first().ok_or(Error::Empty("no traces to average"))?;
    if traces.iter().any(|t| !same_width(t.bin_width, first.bin_width)) {
        return Err(Error::invalid("traces have different bin widths"));
    }
    let len = traces.iter().map(|t| t.len()).min().unwrap_or(0);
    let k = traces.len() as f64;
    let values = (0..len)
        .map(|i| traces.iter().map(|t| t.counts[i] as f64).sum::<f64>() / k)
        .collect();
    Ok(AveragedTrace {
        bin_width: first.bin_width,
        start_time: first.start_time,
        values,
    })
}
