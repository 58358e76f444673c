//! A small Levenberg–Marquardt solver for dense nonlinear least squares with
//! a handful of parameters.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative decrease of the cost falls below this.
    pub ftol: f64,
    /// Stop when the relative step length falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-15,
            xtol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// Euclidean norm of the residual vector at `params`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimises `Σ rᵢ(x)²` where `residuals(x, r)` fills `r`.
///
/// The Jacobian is taken by central differences.
pub fn levenberg_marquardt<F>(residuals: F, x0: &[f64], opts: LmOptions) -> LmReport
where
    F: Fn(&[f64], &mut Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = Vec::new();
    residuals(&x, &mut r);
    let m = r.len();
    let mut cost = sum_sq(&r);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    let mut jac = DMatrix::<f64>::zeros(m, n);
    let mut rp = Vec::with_capacity(m);
    let mut rm = Vec::with_capacity(m);

    while iterations < opts.max_iter {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(1e-6);
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            residuals(&xp, &mut rp);
            residuals(&xm, &mut rm);
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * rv;
        if jtr.amax() == 0.0 {
            converged = true;
            break;
        }

        let mut improved = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..n {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.clone().cholesky().map(|c| c.solve(&(-&jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let mut rn = Vec::with_capacity(m);
            residuals(&xn, &mut rn);
            let cn = sum_sq(&rn);
            if cn.is_finite() && cn <= cost {
                let rel_drop = (cost - cn) / cost.max(f64::MIN_POSITIVE);
                let step_norm = step.norm();
                let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel_drop < opts.ftol || step_norm <= opts.xtol * (x_norm + opts.xtol) {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            // no downhill step at any damping: a (local) minimum to working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    LmReport {
        params: x,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_rosenbrock() {
        let rep = levenberg_marquardt(
            |x, r| {
                r.clear();
                r.push(10.0 * (x[1] - x[0] * x[0]));
                r.push(1.0 - x[0]);
            },
            &[-1.2, 1.0],
            LmOptions::default(),
        );
        assert!(rep.converged);
        assert!((rep.params[0] - 1.0).abs() < 1e-8);
        assert!((rep.params[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn linear_problem_in_one_step_region() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let rep = levenberg_marquardt(
            |p, r| {
                r.clear();
                r.extend(xs.iter().zip(&ys).map(|(x, y)| p[0] * x + p[1] - y));
            },
            &[0.0, 0.0],
            LmOptions::default(),
        );
        assert!((rep.params[0] - 2.0).abs() < 1e-9);
        assert!((rep.params[1] - 1.0).abs() < 1e-9);
        assert!(rep.residual_norm < 1e-8);
    }
}
