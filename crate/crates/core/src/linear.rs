//! L2-regularized logistic regression fitted with L-BFGS.
//!
//! The objective is the negative log-likelihood over both classes plus
//! `(1/λ)·½‖θ‖²`. Note the inverse convention: a *small* λ means a *strong*
//! penalty.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::embed::sigmoid as generic_sigmoid;

/// Binary class; `Hate` is the positive label of the hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Hate,
    Counter,
}

impl Class {
    pub fn target(self) -> f64 {
        match self {
            Class::Hate => 1.0,
            Class::Counter => 0.0,
        }
    }
}

/// `1 / (1 + e^-z)`, evaluated without overflow.
pub fn sigmoid(z: f64) -> f64 {
    generic_sigmoid(z)
}

/// Row-major feature matrix with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    x: Vec<f64>,
    y: Vec<Class>,
    dim: usize,
}

impl LabeledMatrix {
    pub fn new(x: Vec<f64>, y: Vec<Class>, dim: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Config("labeled matrix needs at least one row".into()));
        }
        if dim == 0 || x.len() != y.len() * dim {
            return Err(Error::Shape {
                expected: y.len() * dim,
                got: x.len(),
            });
        }
        Ok(LabeledMatrix { x, y, dim })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], y: Vec<Class>) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut x = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    got: r.len(),
                });
            }
            x.extend_from_slice(r);
        }
        Self::new(x, y, dim)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> Class {
        self.y[i]
    }

    /// Copy with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        for &i in perm {
            x.extend_from_slice(self.row(i));
        }
        LabeledMatrix {
            x,
            y: perm.iter().map(|&i| self.y[i]).collect(),
            dim: self.dim,
        }
    }

    fn check_finite(&self) -> Result<()> {
        for i in 0..self.n() {
            if let Some(j) = self.row(i).iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    row: i,
                    msg: format!("feature {j} is not finite"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub lambda: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub fit_intercept: bool,
    /// Number of curvature pairs L-BFGS keeps.
    pub memory: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 1.0,
            tol: 1e-6,
            max_iter: 1000,
            fit_intercept: false,
            memory: 10,
        }
    }
}

/// Fitted logistic hypothesis `h(x) = g(θᵀx + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFunction {
    pub theta: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    pub objective: f64,
    /// Objective after every accepted step, starting at the initial point.
    pub trace: Vec<f64>,
}

impl HypothesisFunction {
    pub fn zeros(dim: usize, lambda: f64) -> Self {
        HypothesisFunction {
            theta: vec![0.0; dim],
            intercept: 0.0,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// p(Hate | x).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::Shape {
                expected: self.theta.len(),
                got: x.len(),
            });
        }
        Ok(sigmoid(dot(&self.theta, x) + self.intercept))
    }

    pub fn predict_proba_f32(&self, x: &[f32]) -> Result<f64> {
        if x.len() != self.theta.len() {
            return Err(Error::Shape {
                expected: self.theta.len(),
                got: x.len(),
            });
        }
        let z: f64 = self.theta.iter().zip(x).map(|(&t, &v)| t * v as f64).sum();
        Ok(sigmoid(z + self.intercept))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Objective and gradient at `theta` without an intercept.
pub fn loss_and_grad(theta: &[f64], data: &LabeledMatrix, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if theta.len() != data.dim {
        return Err(Error::Shape {
            expected: data.dim,
            got: theta.len(),
        });
    }
    data.check_finite()?;
    let mut grad = vec![0.0; data.dim];
    let loss = objective(theta, 0.0, false, data, lambda, &mut grad, &mut 0.0)?;
    Ok((loss, grad))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("lambda must be positive and finite, got {lambda}")))
    }
}

/// Objective with optional unpenalized intercept; gradients are written
/// into `grad` / `grad_b`.
fn objective(
    theta: &[f64],
    b: f64,
    with_b: bool,
    data: &LabeledMatrix,
    lambda: f64,
    grad: &mut [f64],
    grad_b: &mut f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    let inv_lambda = 1.0 / lambda;
    let mut loss = 0.5 * inv_lambda * dot(theta, theta);
    for (g, &t) in grad.iter_mut().zip(theta) {
        *g = inv_lambda * t;
    }
    *grad_b = 0.0;
    for i in 0..data.n() {
        let x = data.row(i);
        let z = dot(theta, x) + if with_b { b } else { 0.0 };
        let y = data.y[i].target();
        // -[y ln g(z) + (1-y) ln(1-g(z))] = softplus(z) - y z
        loss += softplus(z) - y * z;
        let r = sigmoid(z) - y;
        for (g, &xv) in grad.iter_mut().zip(x) {
            *g += r * xv;
        }
        *grad_b += r;
    }
    if !loss.is_finite() {
        return Err(Error::Numeric {
            row: 0,
            msg: "objective is not finite".into(),
        });
    }
    Ok(loss)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Fit θ by L-BFGS with a backtracking Armijo line search.
pub fn fit(data: &LabeledMatrix, opts: &FitOptions) -> Result<(HypothesisFunction, FitReport)> {
    check_lambda(opts.lambda)?;
    data.check_finite()?;
    let dim = data.dim;
    let n_params = dim + usize::from(opts.fit_intercept);

    let eval = |w: &[f64], g: &mut [f64]| -> Result<f64> {
        let (theta, rest) = w.split_at(dim);
        let b = rest.first().copied().unwrap_or(0.0);
        let mut gb = 0.0;
        let f = objective(theta, b, opts.fit_intercept, data, opts.lambda, &mut g[..dim], &mut gb)?;
        if opts.fit_intercept {
            g[dim] = gb;
        }
        Ok(f)
    };

    let mut w = vec![0.0; n_params];
    let mut g = vec![0.0; n_params];
    let mut f = eval(&w, &mut g)?;
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = norm(&g) <= opts.tol;

    let mut w_new = vec![0.0; n_params];
    let mut g_new = vec![0.0; n_params];
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };

        let resolution = 4.0 * f64::EPSILON * f.abs().max(1.0);
        let mut accepted = false;
        let mut unresolved_tries = 0;
        for _ in 0..60 {
            for ((wn, &wv), &dv) in w_new.iter_mut().zip(&w).zip(&d) {
                *wn = wv + step * dv;
            }
            let f_new = eval(&w_new, &mut g_new)?;
            let armijo = f_new <= f + 1e-4 * step * slope;
            // Near the optimum the predicted decrease drops below the
            // resolution of f; fall back to requiring no increase and a
            // smaller gradient.
            let unresolved = -step * slope <= resolution;
            if armijo || (unresolved && f_new <= f && norm(&g_new) < norm(&g)) {
                let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * norm(&s) * norm(&y) {
                    if history.len() == opts.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut w, &mut w_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                trace.push(f);
                accepted = true;
                break;
            }
            if unresolved {
                // Shrinking further cannot produce a measurable decrease.
                unresolved_tries += 1;
                if unresolved_tries == 4 {
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        converged = norm(&g) <= opts.tol;
    }
    if !converged {
        log::debug!(
            "logistic fit stopped after {iterations} iterations with gradient norm {:.3e}",
            norm(&g)
        );
    }

    let intercept = if opts.fit_intercept { w[dim] } else { 0.0 };
    w.truncate(dim);
    Ok((
        HypothesisFunction {
            theta: w,
            intercept,
            lambda: opts.lambda,
        },
        FitReport {
            iterations,
            converged,
            grad_norm: norm(&g),
            objective: f,
            trace,
        },
    ))
}

/// L-BFGS two-loop recursion: returns `-H·g`.
fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qv, &yv) in q.iter_mut().zip(y) {
            *qv -= a * yv;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qv, &sv) in q.iter_mut().zip(s) {
            *qv += (a - b) * sv;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
