//! Continuous-time Markov generators over a finite state space.
//!
//! Probability vectors are row vectors: `p(t + dt) = p(t) · exp(Q dt)`, where
//! `Q[i][j]` (i ≠ j) is the rate of jumping from state `i` to state `j` and the
//! diagonal holds minus the total exit rate.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Off-diagonal transition rates in 1/s. The diagonal is derived and never
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    n: usize,
    rates: Vec<f64>,
}

impl RateMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, rates: vec![0.0; n * n] }
    }

    /// Builds a rate matrix from dense rows; diagonal entries are ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Empty("rate matrix has no states"));
        }
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::invalid(format!(
                    "rate matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                if i != j {
                    m.set_rate(i, j, r)?;
                }
            }
        }
        Ok(m)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to {
            0.0
        } else {
            self.rates[from * self.n + to]
        }
    }

    pub fn set_rate(&mut self, from: usize, to: usize, rate: f64) -> Result<()> {
        if from >= self.n || to >= self.n {
            return Err(Error::invalid(format!(
                "state index out of range: {from} -> {to} with {} states",
                self.n
            )));
        }
        if from == to {
            return Err(Error::invalid("diagonal rates are derived, not set"));
        }
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::invalid(format!(
                "rate {from} -> {to} must be finite and non-negative, got {rate}"
            )));
        }
        self.rates[from * self.n + to] = rate;
        Ok(())
    }

    /// Total rate of leaving `state`.
    pub fn exit_rate(&self, state: usize) -> f64 {
        (0..self.n).map(|j| self.rate(state, j)).sum()
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.n).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// Largest single off-diagonal rate.
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn generator(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -self.exit_rate(i)
            } else {
                self.rate(i, j)
            }
        })
    }

    /// The stationary distribution `π Q = 0`, `Σ π = 1`.
    ///
    /// Fails when the chain has more than one closed class, in which case the
    /// long-run distribution depends on the initial state.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let q = self.generator();
        let svd = q.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-12 * smax.max(f64::MIN_POSITIVE))
            .count();
        if n > 1 && rank < n - 1 {
            return Err(Error::invalid(
                "stationary distribution is not unique (more than one closed class)",
            ));
        }
        let mut a = DMatrix::zeros(n + 1, n);
        a.view_mut((0, 0), (n, n)).copy_from(&q.transpose());
        a.row_mut(n).fill(1.0);
        let mut b = DVector::zeros(n + 1);
        b[n] = 1.0;
        let pi = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let mut pi: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
        normalize(&mut pi);
        Ok(pi)
    }

    /// The transition matrix `exp(Q dt)`.
    ///
    /// Two- and three-state chains use closed forms; larger chains, and
    /// three-state generators with (nearly) repeated eigenvalues, use a
    /// scaled-and-squared Taylor series.
    pub fn propagator(&self, dt: f64) -> Result<Propagator> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::domain(format!("time step must be finite and >= 0, got {dt}")));
        }
        let n = self.n;
        if dt == 0.0 || self.rates.iter().all(|&r| r == 0.0) {
            return Ok(Propagator {
                n,
                matrix: identity(n),
                method: PropagatorMethod::Identity,
            });
        }
        match n {
            2 => Ok(self.two_state(dt)),
            3 => Ok(self.spectral3(dt).unwrap_or_else(|| self.series(dt))),
            _ => Ok(self.series(dt)),
        }
    }

    fn two_state(&self, dt: f64) -> Propagator {
        let a = self.rate(0, 1);
        let b = self.rate(1, 0);
        let s = a + b;
        // 1 - exp(-s dt), accurate for small s dt
        let decay = -(-s * dt).exp_m1();
        let p01 = a / s * decay;
        let p10 = b / s * decay;
        Propagator {
            n: 2,
            matrix: vec![1.0 - p01, p01, p10, 1.0 - p10],
            method: PropagatorMethod::TwoState,
        }
    }

    /// Sylvester's formula over the eigenvalues `0, λ₊, λ₋` of a 3×3
    /// generator. Returns `None` when two eigenvalues (nearly) coincide.
    fn spectral3(&self, dt: f64) -> Option<Propagator> {
        let q = self.generator();
        let a = -q.trace();
        let c = q[(0, 0)] * q[(1, 1)] - q[(0, 1)] * q[(1, 0)] + q[(0, 0)] * q[(2, 2)]
            - q[(0, 2)] * q[(2, 0)]
            + q[(1, 1)] * q[(2, 2)]
            - q[(1, 2)] * q[(2, 1)];
        let disc = Complex64::new(a * a - 4.0 * c, 0.0).sqrt();
        let lambdas = [
            Complex64::new(0.0, 0.0),
            (Complex64::new(-a, 0.0) + disc) * 0.5,
            (Complex64::new(-a, 0.0) - disc) * 0.5,
        ];
        let gap = (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .map(|(i, j)| (lambdas[i] - lambdas[j]).norm())
            .fold(f64::INFINITY, f64::min);
        if gap < 1e-6 * a {
            return None;
        }
        let qc: Matrix3<Complex64> = Matrix3::from_fn(|i, j| Complex64::new(q[(i, j)], 0.0));
        let id = Matrix3::<Complex64>::identity();
        let mut total = Matrix3::<Complex64>::zeros();
        for i in 0..3 {
            let mut term = id;
            for j in 0..3 {
                if i != j {
                    term = term * (qc - id * lambdas[j]) / (lambdas[i] - lambdas[j]);
                }
            }
            total += term * (lambdas[i] * dt).exp();
        }
        let matrix = (0..9).map(|k| total[(k / 3, k % 3)].re).collect();
        Some(Propagator {
            n: 3,
            matrix,
            method: PropagatorMethod::Spectral,
        })
    }

    fn series(&self, dt: f64) -> Propagator {
        let a = self.generator() * dt;
        let e = expm(&a);
        Propagator {
            n: self.n,
            matrix: e.transpose().as_slice().to_vec(),
            method: PropagatorMethod::Series,
        }
    }
}

/// How a [`Propagator`] was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorMethod {
    Identity,
    TwoState,
    /// Closed-form eigen-decomposition (three states, distinct eigenvalues).
    Spectral,
    /// Scaled-and-squared Taylor series.
    Series,
}

/// A row-stochastic transition matrix for a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagator {
    n: usize,
    matrix: Vec<f64>,
    method: PropagatorMethod,
}

impl Propagator {
    pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self {
            n: rows.len(),
            matrix: rows.iter().flatten().copied().collect(),
            method: PropagatorMethod::Series,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn method(&self) -> PropagatorMethod {
        self.method
    }

    pub fn entry(&self, from: usize, to: usize) -> f64 {
        self.matrix[from * self.n + to]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    /// `p · P`, clamped to non-negative and renormalised.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            let row = &self.matrix[i * n..(i + 1) * n];
            for (o, &pij) in out.iter_mut().zip(row) {
                *o += pi * pij;
            }
        }
        for o in &mut out {
            *o = o.max(0.0);
        }
        normalize(&mut out);
        out
    }
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = inf_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=40 {
        term = &term * &b / k as f64;
        sum += &term;
        if inf_norm(&term) < 1e-18 * inf_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Principal logarithm of a row-stochastic matrix whose diagonal entries all
/// exceed ½ (so that `‖P − I‖∞ < 1` and the log series converges).
pub fn log_stochastic(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = p.nrows();
    if (0..n).any(|i| p[(i, i)] <= 0.5) {
        return Err(Error::domain(
            "matrix logarithm needs every diagonal entry above 1/2",
        ));
    }
    let id = DMatrix::<f64>::identity(n, n);
    // inverse scaling: square roots until close to the identity
    let mut x = p.clone();
    let mut roots = 0;
    while inf_norm(&(&x - &id)) > 0.05 && roots < 40 {
        x = sqrtm(&x)?;
        roots += 1;
    }
    let a = &x - &id;
    let mut sum = DMatrix::zeros(n, n);
    let mut power = a.clone();
    for m in 1..=200 {
        let term = &power / m as f64;
        if m % 2 == 1 {
            sum += &term;
        } else {
            sum -= &term;
        }
        if inf_norm(&term) < 1e-19 {
            break;
        }
        power = &power * &a;
    }
    Ok(sum * 2f64.powi(roots))
}

/// Denman–Beavers square root.
fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular matrix in square root".into()))?;
        let zi = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("singular matrix in square root".into()))?;
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = inf_norm(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta < 1e-16 * inf_norm(&y) {
            break;
        }
    }
    Ok(y)
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// Scales `p` in place to sum to one. A zero vector is left untouched.
pub fn normalize(p: &mut [f64]) {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        for x in p.iter_mut() {
            *x /= s;
        }
    }
}

/// Checks that `p` is a probability vector within `tol`.
pub fn check_distribution(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    if p.iter().any(|&x| !(x >= 0.0 && x <= 1.0 + tol)) {
        return Err(Error::invalid(format!("probabilities must lie in [0, 1]: {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::invalid(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}
