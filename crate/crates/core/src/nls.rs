//! Dense least-squares solvers: QR linear least squares and a
//! Levenberg-Marquardt loop over a numeric central-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlsError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("residuals are not finite at the evaluated parameters")]
    NonFiniteResidual,
    #[error("normal matrix stayed singular at maximum damping")]
    SingularNormalMatrix,
}

/// A residual vector as a function of a parameter vector.
pub trait ResidualProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Writes `n_residuals` residuals for `params` into `out`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);
}

/// Adapts a closure into a [`ResidualProblem`].
pub struct FnProblem<F> {
    n_params: usize,
    n_residuals: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnProblem<F> {
    pub fn new(n_params: usize, n_residuals: usize, f: F) -> Self {
        FnProblem {
            n_params,
            n_residuals,
            f,
        }
    }
}

impl<F: Fn(&[f64], &mut [f64])> ResidualProblem for FnProblem<F> {
    fn n_params(&self) -> usize {
        self.n_params
    }

    fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) {
        (self.f)(params, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlsOptions {
    pub max_iterations: usize,
    /// Stop when the infinity norm of `J^T r` drops to this value.
    pub gradient_tolerance: f64,
    /// Stop when `|step| <= tol * (|x| + tol)`.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientSmall,
    StepSmall,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlsResult {
    pub params: Vec<f64>,
    pub rss: f64,
    /// Number of damped linear solves attempted.
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// RSS at the start point and after each accepted step.
    pub rss_history: Vec<f64>,
}

const MIN_DAMPING: f64 = 1e-12;
const MAX_DAMPING: f64 = 1e12;

/// Minimises `|design * b - observations|^2` through a QR factorisation.
pub fn linear_least_squares(
    design: &DMatrix<f64>,
    observations: &DVector<f64>,
) -> Result<DVector<f64>, NlsError> {
    let (n, p) = design.shape();
    if observations.len() != n {
        return Err(NlsError::DimensionMismatch(format!(
            "{n} design rows vs {} observations",
            observations.len()
        )));
    }
    if n < p || p == 0 {
        return Err(NlsError::RankDeficient);
    }
    let qr = design.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = n.max(p) as f64 * f64::EPSILON * scale;
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= tol) {
        return Err(NlsError::RankDeficient);
    }
    let qtb = qr.q().tr_mul(observations);
    r.solve_upper_triangular(&qtb)
        .ok_or(NlsError::RankDeficient)
}

fn eval<P: ResidualProblem + ?Sized>(problem: &P, params: &[f64], out: &mut [f64]) -> bool {
    problem.residuals(params, out);
    out.iter().all(|v| v.is_finite())
}

/// Central-difference Jacobian with per-parameter step
/// `rel_step * max(|p|, 1)`.
pub fn numeric_jacobian<P: ResidualProblem + ?Sized>(
    problem: &P,
    params: &[f64],
    rel_step: f64,
) -> Result<DMatrix<f64>, NlsError> {
    let m = problem.n_residuals();
    let n = problem.n_params();
    if params.len() != n {
        return Err(NlsError::DimensionMismatch(format!(
            "{} params for a {n}-parameter problem",
            params.len()
        )));
    }
    let mut jac = DMatrix::zeros(m, n);
    let mut shifted = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..n {
        let h = rel_step * params[j].abs().max(1.0);
        shifted[j] = params[j] + h;
        let up = shifted[j];
        let ok_plus = eval(problem, &shifted, &mut plus);
        shifted[j] = params[j] - h;
        let down = shifted[j];
        let ok_minus = eval(problem, &shifted, &mut minus);
        shifted[j] = params[j];
        if !(ok_plus && ok_minus) {
            return Err(NlsError::NonFiniteResidual);
        }
        let width = up - down;
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / width;
        }
    }
    Ok(jac)
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Levenberg-Marquardt with Marquardt's diagonal scaling.
///
/// Each iteration solves `(J^T J + lambda * diag(J^T J)) step = -J^T r`. A
/// step is accepted only if it lowers the RSS, after which lambda shrinks by
/// 10; otherwise lambda grows by 10. Trial points with non-finite residuals
/// count as rejected.
pub fn levenberg_marquardt<P: ResidualProblem + ?Sized>(
    problem: &P,
    x0: &[f64],
    opts: &NlsOptions,
) -> Result<NlsResult, NlsError> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if x0.len() != n {
        return Err(NlsError::DimensionMismatch(format!(
            "start vector has {} entries, problem has {n} parameters",
            x0.len()
        )));
    }
    if m < n {
        return Err(NlsError::DimensionMismatch(format!(
            "{m} residuals for {n} parameters"
        )));
    }

    let mut x = x0.to_vec();
    let mut r = vec![0.0; m];
    if !eval(problem, &x, &mut r) {
        return Err(NlsError::NonFiniteResidual);
    }
    let mut rss = sum_sq(&r);
    let mut history = vec![rss];
    let mut lambda = opts.initial_damping.clamp(MIN_DAMPING, MAX_DAMPING);
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    let mut normal = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    let mut stale = true;
    let mut iterations = 0;

    let finish = |x: Vec<f64>, rss: f64, iterations, termination, history| {
        Ok(NlsResult {
            params: x,
            rss,
            iterations,
            converged: termination != Termination::MaxIterations,
            termination,
            rss_history: history,
        })
    };

    while iterations < opts.max_iterations {
        if stale {
            let jac = numeric_jacobian(problem, &x, 1e-6)?;
            let rv = DVector::from_column_slice(&r);
            normal = jac.tr_mul(&jac);
            gradient = jac.tr_mul(&rv);
            stale = false;
            if gradient.amax() <= opts.gradient_tolerance {
                return finish(x, rss, iterations, Termination::GradientSmall, history);
            }
        }

        iterations += 1;
        let max_diag = normal.diagonal().amax();
        let mut damped = normal.clone();
        for j in 0..n {
            let d = normal[(j, j)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE);
            damped[(j, j)] += lambda * d;
        }
        let step = match damped.cholesky() {
            Some(ch) => -ch.solve(&gradient),
            None => {
                if lambda >= MAX_DAMPING {
                    return Err(NlsError::SingularNormalMatrix);
                }
                lambda = (lambda * 10.0).min(MAX_DAMPING);
                continue;
            }
        };

        for j in 0..n {
            trial[j] = x[j] + step[j];
        }
        let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let small = step.norm() <= opts.step_tolerance * (x_norm + opts.step_tolerance);

        let finite = eval(problem, &trial, &mut r_trial);
        let rss_trial = if finite {
            sum_sq(&r_trial)
        } else {
            f64::INFINITY
        };
        if rss_trial < rss {
            std::mem::swap(&mut x, &mut trial);
            std::mem::swap(&mut r, &mut r_trial);
            rss = rss_trial;
            history.push(rss);
            lambda = (lambda / 10.0).max(MIN_DAMPING);
            stale = true;
        } else {
            lambda = (lambda * 10.0).min(MAX_DAMPING);
        }
        if small {
            return finish(x, rss, iterations, Termination::StepSmall, history);
        }
    }
    finish(x, rss, iterations, Termination::MaxIterations, history)
}
