//! Levenberg–Marquardt for `min ‖r(θ)‖²` with an analytic Jacobian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residuals(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// Residuals and their `n_residuals × n_params` Jacobian.
    fn jacobian(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop when `‖Jᵀr‖ < grad_tol · max(1, J)`.
    pub grad_tol: f64,
    /// Stop when `‖δ‖ < step_tol · (‖θ‖ + step_tol)`.
    pub step_tol: f64,
    /// Stop when `J` drops by less than this fraction over `stall_window` accepted steps.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-8,
            step_tol: 1e-12,
            stall_tol: 1e-12,
            stall_window: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stationary,
    Stalled,
    SmallStep,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub initial_j: f64,
    pub final_j: f64,
    pub iterations: usize,
    /// `‖Jᵀr‖`, the gradient norm of `½J`, at the returned point.
    pub stationarity: f64,
    pub termination: Termination,
}

fn first_non_finite(r: &DVector<f64>) -> Option<usize> {
    r.iter().position(|v| !v.is_finite())
}

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().fold(0.0, |acc, v| acc + v * v)
}

/// Gram matrix of the active form: `JᵀJ` when over-determined, `JJᵀ` otherwise.
struct Linearization {
    r: DVector<f64>,
    jac: DMatrix<f64>,
    gram: DMatrix<f64>,
    grad: DVector<f64>,
    dual: bool,
}

impl Linearization {
    fn new(r: DVector<f64>, jac: DMatrix<f64>) -> Self {
        let dual = jac.nrows() < jac.ncols();
        let gram = if dual {
            &jac * jac.transpose()
        } else {
            jac.tr_mul(&jac)
        };
        let grad = jac.tr_mul(&r);
        Self {
            r,
            jac,
            gram,
            grad,
            dual,
        }
    }

    /// `δ = −(JᵀJ + λI)⁻¹Jᵀr`, or `−Jᵀ(JJᵀ + λI)⁻¹r` in the dual form, with the
    /// predicted decrease of `½J`, `½δᵀ(λδ − Jᵀr)`.
    fn step(&self, lambda: f64) -> Option<(DVector<f64>, f64)> {
        let mut m = self.gram.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += lambda;
        }
        let chol = m.cholesky()?;
        let step = if self.dual {
            -self.jac.tr_mul(&chol.solve(&self.r))
        } else {
            -chol.solve(&self.grad)
        };
        let predicted = 0.5 * step.dot(&(&step * lambda - &self.grad));
        step.iter()
            .all(|v| v.is_finite())
            .then_some((step, predicted))
    }
}

/// Minimizes `J(θ) = ‖r(θ)‖²` from `theta0`. The returned point never has a
/// larger `J` than the start.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta0: DVector<f64>,
    opts: &LmOptions,
) -> Result<(DVector<f64>, OptimizerReport)> {
    if theta0.len() != problem.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "initial guess has {} parameters, problem has {}",
            theta0.len(),
            problem.n_params()
        )));
    }
    let mut theta = theta0;
    let (r, jac) = problem.jacobian(&theta);
    if let Some(sample) = first_non_finite(&r) {
        return Err(Error::NonFiniteObjective { sample });
    }
    let mut j = sum_sq(&r);
    let initial_j = j;
    let mut lin = Linearization::new(r, jac);
    let mut lambda = 1e-3 * lin.gram.diagonal().amax().max(1e-300);
    let mut nu = 2.0;
    let mut history = vec![j];
    let mut iterations = 0;

    let termination = loop {
        let stationarity = lin.grad.norm();
        if j == 0.0 || stationarity < opts.grad_tol * j.max(1.0) {
            break Termination::Stationary;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let Some((delta, predicted)) = lin.step(lambda) else {
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e300 {
                break Termination::SmallStep;
            }
            continue;
        };
        if delta.norm() < opts.step_tol * (theta.norm() + opts.step_tol) {
            break Termination::SmallStep;
        }
        let trial = &theta + &delta;
        let r_trial = problem.residuals(&trial);
        let j_trial = if first_non_finite(&r_trial).is_some() {
            f64::INFINITY
        } else {
            sum_sq(&r_trial)
        };
        let rho = 0.5 * (j - j_trial) / predicted;
        if j_trial < j && rho > 0.0 {
            theta = trial;
            let (r, jac) = problem.jacobian(&theta);
            j = sum_sq(&r);
            lin = Linearization::new(r, jac);
            lambda *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            history.push(j);
            if history.len() > opts.stall_window {
                let past = history[history.len() - 1 - opts.stall_window];
                if past - j <= opts.stall_tol * past {
                    break Termination::Stalled;
                }
            }
        } else {
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e300 {
                break Termination::SmallStep;
            }
        }
    };
    let report = OptimizerReport {
        initial_j,
        final_j: j,
        iterations,
        stationarity: lin.grad.norm(),
        termination,
    };
    Ok((theta, report))
}
