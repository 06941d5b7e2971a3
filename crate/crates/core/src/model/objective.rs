//! Log-posterior objectives for the count likelihoods on aggregated data,
//! and the damped Newton ascent used to maximise them.
//!
//! Both objectives are `log P(Y_s | W) - λ/2 |W|²` where the likelihood is
//! the closed-form aggregate (Poisson sum, or expectation-matched binomial).

use nalgebra::{DMatrix, DVector};

use super::Link;
use crate::aggregation::AggregationMatrix;
use crate::error::{ReaggError, Result};
use crate::stats::{ln_gamma, sigmoid};

/// Value, gradient and Hessian of an objective at a point.
pub type Evaluation = (f64, DVector<f64>, DMatrix<f64>);

pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&self, w: &DVector<f64>) -> Evaluation;

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.evaluate(w).0
    }
}

/// Aggregated Poisson regression with a log or floored-identity link.
#[derive(Debug, Clone)]
pub struct PoissonObjective<'a> {
    pub x: &'a DMatrix<f64>,
    pub a: &'a AggregationMatrix,
    pub y: &'a [f64],
    pub lambda: f64,
    pub link: Link,
}

impl PoissonObjective<'_> {
    /// Rate and its first two derivatives with respect to the linear predictor.
    fn rate(&self, eta: f64) -> (f64, f64, f64) {
        match self.link {
            Link::Log => {
                let r = eta.exp();
                (r, r, r)
            }
            Link::IdentityFloor => {
                if eta > super::RATE_FLOOR {
                    (eta, 1.0, 0.0)
                } else {
                    (super::RATE_FLOOR, 0.0, 0.0)
                }
            }
            other => unreachable!("Poisson objective with {other:?} link"),
        }
    }
}

impl Objective for PoissonObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn evaluate(&self, w: &DVector<f64>) -> Evaluation {
        let d = self.dim();
        let eta = self.x * w;
        let n_s = self.a.n_groups();
        let mut mu = vec![0.0; n_s];
        let mut g = DMatrix::zeros(n_s, d);
        let mut derivs = Vec::with_capacity(eta.len());
        for (b, &e) in eta.iter().enumerate() {
            let (r, r1, r2) = self.rate(e);
            let s = self.a.group_of(b);
            mu[s] += r;
            for j in 0..d {
                g[(s, j)] += r1 * self.x[(b, j)];
            }
            derivs.push(r2);
        }

        let mut value = -0.5 * self.lambda * w.norm_squared();
        let mut grad = -self.lambda * w;
        let mut hess = DMatrix::from_diagonal_element(d, d, -self.lambda);
        let mut coef = vec![0.0; n_s];
        for s in 0..n_s {
            let (y, m) = (self.y[s], mu[s]);
            value += if y > 0.0 { y * m.ln() } else { 0.0 } - m - ln_gamma(y + 1.0);
            coef[s] = y / m - 1.0;
            let gs = g.row(s).transpose();
            grad += coef[s] * &gs;
            hess -= (y / (m * m)) * &gs * gs.transpose();
        }
        // Σ_s coef_s Σ_{b∈s} r''_b x_b x_bᵀ
        for (b, &r2) in derivs.iter().enumerate() {
            let c = coef[self.a.group_of(b)] * r2;
            if c != 0.0 {
                let xb = self.x.row(b).transpose();
                hess += c * &xb * xb.transpose();
            }
        }
        (value, grad, hess)
    }
}

/// Aggregated logistic model: each group is `Binomial(Σ N_b, P*)` with
/// `P* = Σ N_b σ(x_b W) / Σ N_b`.
#[derive(Debug, Clone)]
pub struct BinomialObjective<'a> {
    pub x: &'a DMatrix<f64>,
    pub a: &'a AggregationMatrix,
    pub y: &'a [f64],
    pub population: &'a [f64],
    pub lambda: f64,
}

impl Objective for BinomialObjective<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn evaluate(&self, w: &DVector<f64>) -> Evaluation {
        let d = self.dim();
        let eta = self.x * w;
        let n_s = self.a.n_groups();
        let mut trials = vec![0.0; n_s];
        let mut succ = vec![0.0; n_s];
        let mut g = DMatrix::zeros(n_s, d);
        let mut second = Vec::with_capacity(eta.len());
        for (b, &e) in eta.iter().enumerate() {
            let p = sigmoid(e);
            let n = self.population[b];
            let s = self.a.group_of(b);
            trials[s] += n;
            succ[s] += n * p;
            let v = n * p * (1.0 - p);
            for j in 0..d {
                g[(s, j)] += v * self.x[(b, j)];
            }
            second.push(v * (1.0 - 2.0 * p));
        }

        let mut value = -0.5 * self.lambda * w.norm_squared();
        let mut grad = -self.lambda * w;
        let mut hess = DMatrix::from_diagonal_element(d, d, -self.lambda);
        let mut coef = vec![0.0; n_s];
        for s in 0..n_s {
            let (y, n) = (self.y[s], trials[s]);
            let p = (succ[s] / n).clamp(1e-300, 1.0 - 1e-16);
            value += ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0);
            value += if y > 0.0 { y * p.ln() } else { 0.0 } + if n - y > 0.0 { (n - y) * (1.0 - p).ln() } else { 0.0 };
            // d/dP of the log-likelihood, chained through dP/dW = g_s / n
            coef[s] = (y / p - (n - y) / (1.0 - p)) / n;
            let curv = (y / (p * p) + (n - y) / ((1.0 - p) * (1.0 - p))) / (n * n);
            let gs = g.row(s).transpose();
            grad += coef[s] * &gs;
            hess -= curv * &gs * gs.transpose();
        }
        for (b, &v2) in second.iter().enumerate() {
            let c = coef[self.a.group_of(b)] * v2;
            if c != 0.0 {
                let xb = self.x.row(b).transpose();
                hess += c * &xb * xb.transpose();
            }
        }
        (value, grad, hess)
    }
}

/// Result of [`maximize`].
#[derive(Debug, Clone)]
pub struct Optimum {
    pub argmax: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Hessian of the objective at the optimum.
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
}

/// Damped Newton ascent with Armijo backtracking; falls back to a scaled
/// gradient step when the Hessian is not negative definite.
///
/// Converges when `|∇f| ≤ tol · (1 + |f|)`, or when the Newton decrement
/// drops below round-off (`1e-12 · (1 + |f|)`) and no ascent step exists.
pub fn maximize(f: &dyn Objective, x0: DVector<f64>, max_iter: usize, tol: f64) -> Result<Optimum> {
    let mut x = x0;
    let (mut value, mut grad, mut hess) = f.evaluate(&x);
    if !value.is_finite() {
        return Err(ReaggError::Numerical("objective is not finite at the starting point".into()));
    }
    for iter in 0..max_iter {
        let gnorm = grad.norm();
        let scale = 1.0 + value.abs();
        if gnorm <= tol * scale {
            return Ok(Optimum {
                argmax: x,
                value,
                grad_norm: gnorm,
                hessian: hess,
                iterations: iter,
            });
        }
        let neg_h = -&hess;
        let direction = match neg_h.clone().cholesky() {
            Some(chol) => chol.solve(&grad),
            None => {
                let diag_max = neg_h.diagonal().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
                &grad / diag_max
            }
        };
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-14 {
            let cand = &x + step * &direction;
            let eval = f.evaluate(&cand);
            if eval.0.is_finite() && eval.0 >= value + 1e-4 * step * slope {
                accepted = Some((cand, eval));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, (v, g, h))) => {
                let stalled = (v - value).abs() <= 1e-15 * scale && slope <= 1e-12 * scale;
                x = cand;
                value = v;
                grad = g;
                hess = h;
                if stalled {
                    return Ok(Optimum {
                        argmax: x,
                        value,
                        grad_norm: grad.norm(),
                        hessian: hess,
                        iterations: iter + 1,
                    });
                }
            }
            None if slope <= 1e-12 * scale => {
                return Ok(Optimum {
                    argmax: x,
                    value,
                    grad_norm: gnorm,
                    hessian: hess,
                    iterations: iter,
                });
            }
            None => {
                return Err(ReaggError::NonConvergence {
                    what: "Newton ascent (line search)",
                    iterations: iter,
                    grad_norm: gnorm,
                })
            }
        }
    }
    Err(ReaggError::NonConvergence {
        what: "Newton ascent",
        iterations: max_iter,
        grad_norm: grad.norm(),
    })
}
