//! Linear cosinor and sigmoidally transformed cosine (anti-logistic) fits.
//!
//! The extended model is
//!
//! ```text
//! y(t) = min + amplitude * L(cos(2 pi (t - phase) / 24))
//! L(c) = exp(beta (c - alpha)) / (1 + exp(beta (c - alpha)))
//! ```
//!
//! with `t` in clock hours. Fitting runs in two stages: a linear regression on
//! a 24 h cosine/sine pair seeds the parameters, then Levenberg-Marquardt
//! refines all five on an unconstrained reparameterisation
//! (`amplitude = exp(w)`, `alpha = tanh(u)`, `beta = exp(v)`).

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::nls::{self, levenberg_marquardt, FnProblem, NlsError, NlsOptions};
use crate::preprocess::ActivitySeries;
use crate::MINUTES_PER_DAY;

const PERIOD_HOURS: f64 = 24.0;
const OMEGA: f64 = TAU / PERIOD_HOURS;
/// Transformed shape parameters beyond this magnitude mark a boundary optimum.
const BOUNDARY_LIMIT: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CosinorError {
    #[error("need at least 3 valid minutes spanning more than 12 hours")]
    InsufficientSpan,
    #[error("cosinor design matrix is rank deficient")]
    RankDeficient,
    #[error("solver failed: {0}")]
    Solver(NlsError),
    /// The fitted rhythm has (numerically) no amplitude. The flagged fit is
    /// still returned, with `converged = false`.
    #[error("degenerate fit: amplitude is negligible relative to the data range")]
    DegenerateFit(Box<SigmoidalCosinorFit>),
}

impl From<NlsError> for CosinorError {
    fn from(e: NlsError) -> Self {
        match e {
            NlsError::RankDeficient => CosinorError::RankDeficient,
            other => CosinorError::Solver(other),
        }
    }
}

/// Activity transform applied before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transform {
    Raw,
    #[default]
    Log1p,
}

impl Transform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Transform::Raw => v,
            Transform::Log1p => v.ln_1p(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::Raw => "raw",
            Transform::Log1p => "log1p",
        }
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Ok(Transform::Raw),
            "log1p" => Ok(Transform::Log1p),
            other => Err(format!("unknown transform `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub transform: Transform,
    /// Number of phase-rotated starts; 1 uses only the linear-cosinor seed.
    pub multistart: usize,
    pub nls: NlsOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            transform: Transform::Log1p,
            multistart: 1,
            nls: NlsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCosinorFit {
    pub mesor: f64,
    pub amplitude: f64,
    /// Peak time in hours, `[0, 24)`.
    pub acrophase: f64,
}

/// Natural-scale parameters of the anti-logistic cosine model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidalParams {
    pub min: f64,
    pub amplitude: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Peak time in hours.
    pub phase: f64,
}

impl SigmoidalParams {
    /// Model value at clock time `t` hours.
    pub fn value(&self, t: f64) -> f64 {
        let c = ((t - self.phase) * OMEGA).cos();
        self.min + self.amplitude * antilogistic(c, self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidalCosinorFit {
    pub params: SigmoidalParams,
    /// Curve midpoint, `min + amplitude / 2`.
    pub mesor: f64,
    /// Time average of the fitted curve over one cycle (diagnostic).
    pub curve_mean: f64,
    pub rss: f64,
    /// RSS of the stage-one seed, before refinement.
    pub seed_rss: f64,
    pub converged: bool,
    /// Alpha or beta ended at an extreme of the reparameterisation.
    pub at_boundary: bool,
    pub n_points: usize,
    pub transform: Transform,
}

impl SigmoidalCosinorFit {
    pub fn value(&self, t: f64) -> f64 {
        self.params.value(t)
    }
}

/// Logistic of `beta * (c - alpha)`, evaluated without overflow.
pub fn antilogistic(c: f64, alpha: f64, beta: f64) -> f64 {
    let z = beta * (c - alpha);
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `model_value` as a free function.
pub fn model_value(t: f64, params: &SigmoidalParams) -> f64 {
    params.value(t)
}

/// Clock-hour minute midpoints and transformed values of valid minutes.
pub fn observations(series: &ActivitySeries, transform: Transform) -> (Vec<f64>, Vec<f64>) {
    let start = series.start_offset() as f64;
    series
        .valid_minutes()
        .map(|(i, v)| ((start + i as f64 + 0.5) / 60.0, transform.apply(v)))
        .unzip()
}

/// Stage one on an activity series.
pub fn fit_linear_cosinor(
    series: &ActivitySeries,
    config: &FitConfig,
) -> Result<LinearCosinorFit, CosinorError> {
    let (t, y) = observations(series, config.transform);
    fit_linear_cosinor_points(&t, &y)
}

/// Regresses `y` on `[1, cos(wt), sin(wt)]` for a 24 h period.
pub fn fit_linear_cosinor_points(t: &[f64], y: &[f64]) -> Result<LinearCosinorFit, CosinorError> {
    if t.len() < 3 || t.len() != y.len() {
        return Err(CosinorError::InsufficientSpan);
    }
    let (lo, hi) = t
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi - lo <= 12.0 {
        return Err(CosinorError::InsufficientSpan);
    }
    let design = DMatrix::from_fn(t.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => (OMEGA * t[i]).cos(),
        _ => (OMEGA * t[i]).sin(),
    });
    let coef = nls::linear_least_squares(&design, &DVector::from_column_slice(y))?;
    let (mesor, b_cos, b_sin) = (coef[0], coef[1], coef[2]);
    let amplitude = b_cos.hypot(b_sin);
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if amplitude <= 1e-12 * scale || amplitude == 0.0 {
        return Ok(LinearCosinorFit {
            mesor,
            amplitude: 0.0,
            acrophase: 0.0,
        });
    }
    let acrophase = (b_sin.atan2(b_cos) / OMEGA).rem_euclid(PERIOD_HOURS);
    Ok(LinearCosinorFit {
        mesor,
        amplitude,
        // rem_euclid can round up to exactly 24
        acrophase: if acrophase >= PERIOD_HOURS {
            0.0
        } else {
            acrophase
        },
    })
}

/// Stage-two start point derived from the linear fit.
pub fn initial_sigmoidal_params(
    linear: &LinearCosinorFit,
    transform: Transform,
) -> SigmoidalParams {
    let mut min = linear.mesor - linear.amplitude;
    if transform == Transform::Raw {
        min = min.max(0.0);
    }
    SigmoidalParams {
        min,
        amplitude: 2.0 * linear.amplitude,
        alpha: 0.0,
        beta: 2.0,
        phase: linear.acrophase,
    }
}

fn clamp_alpha(a: f64) -> f64 {
    a.clamp(-1.0 + f64::EPSILON, 1.0 - f64::EPSILON)
}

fn to_natural(p: &[f64]) -> SigmoidalParams {
    SigmoidalParams {
        min: p[0],
        amplitude: p[1].exp(),
        alpha: clamp_alpha(p[2].tanh()),
        beta: p[3].exp(),
        phase: p[4],
    }
}

fn to_unconstrained(p: &SigmoidalParams, amplitude_floor: f64) -> [f64; 5] {
    [
        p.min,
        p.amplitude.max(amplitude_floor).ln(),
        clamp_alpha(p.alpha).atanh(),
        p.beta.ln(),
        p.phase,
    ]
}

fn sum_sq_residuals(params: &SigmoidalParams, t: &[f64], y: &[f64]) -> f64 {
    t.iter()
        .zip(y)
        .map(|(t, y)| (y - params.value(*t)).powi(2))
        .sum()
}

/// Time average of the model over one 24 h cycle, on minute midpoints.
pub fn curve_mean(params: &SigmoidalParams) -> f64 {
    (0..MINUTES_PER_DAY)
        .map(|m| params.value((m as f64 + 0.5) / 60.0))
        .sum::<f64>()
        / MINUTES_PER_DAY as f64
}

/// Two-stage fit of the sigmoidal cosine model to an analysis-window series.
pub fn fit_sigmoidal_cosinor(
    series: &ActivitySeries,
    config: &FitConfig,
) -> Result<SigmoidalCosinorFit, CosinorError> {
    let (t, y) = observations(series, config.transform);
    fit_sigmoidal_points(&t, &y, config)
}

/// Two-stage fit on explicit `(t, y)` points, `t` in clock hours and `y`
/// already transformed. `config.transform` is only recorded.
pub fn fit_sigmoidal_points(
    t: &[f64],
    y: &[f64],
    config: &FitConfig,
) -> Result<SigmoidalCosinorFit, CosinorError> {
    let linear = fit_linear_cosinor_points(t, y)?;
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let seed = initial_sigmoidal_params(&linear, config.transform);
    let seed_rss = sum_sq_residuals(&seed, t, y);

    let flagged = |params: SigmoidalParams, rss: f64| SigmoidalCosinorFit {
        params,
        mesor: params.min + params.amplitude / 2.0,
        curve_mean: curve_mean(&params),
        rss,
        seed_rss,
        converged: false,
        at_boundary: false,
        n_points: t.len(),
        transform: config.transform,
    };

    if range <= 0.0 {
        let params = SigmoidalParams {
            min: lo,
            amplitude: 0.0,
            ..seed
        };
        let rss = sum_sq_residuals(&params, t, y);
        return Err(CosinorError::DegenerateFit(Box::new(flagged(params, rss))));
    }

    let problem = FnProblem::new(5, t.len(), |p: &[f64], out: &mut [f64]| {
        let params = to_natural(p);
        for ((r, t), y) in out.iter_mut().zip(t).zip(y) {
            *r = y - params.value(*t);
        }
    });

    let starts = config.multistart.max(1);
    let amplitude_floor = 1e-6 * range;
    let mut best: Option<nls::NlsResult> = None;
    for k in 0..starts {
        let mut start = seed;
        start.phase =
            (seed.phase + PERIOD_HOURS * k as f64 / starts as f64).rem_euclid(PERIOD_HOURS);
        let x0 = to_unconstrained(&start, amplitude_floor);
        let result = levenberg_marquardt(&problem, &x0, &config.nls)?;
        if best.as_ref().is_none_or(|b| result.rss < b.rss) {
            best = Some(result);
        }
    }
    let best = best.expect("at least one start");

    let mut params = to_natural(&best.params);
    params.phase = params.phase.rem_euclid(PERIOD_HOURS);
    if params.phase >= PERIOD_HOURS {
        params.phase = 0.0;
    }
    let fit = SigmoidalCosinorFit {
        params,
        mesor: params.min + params.amplitude / 2.0,
        curve_mean: curve_mean(&params),
        rss: best.rss,
        seed_rss,
        converged: best.converged,
        at_boundary: best.params[2].abs() > BOUNDARY_LIMIT || best.params[3].abs() > BOUNDARY_LIMIT,
        n_points: t.len(),
        transform: config.transform,
    };
    if params.amplitude < 1e-9 * range {
        return Err(CosinorError::DegenerateFit(Box::new(SigmoidalCosinorFit {
            converged: false,
            ..fit
        })));
    }
    Ok(fit)
}

/// Samples the fitted curve over one day every `resolution` minutes, as
/// `(hour, value)` pairs.
pub fn export_fitted_curve(params: &SigmoidalParams, resolution: usize) -> Vec<(f64, f64)> {
    let step = resolution.max(1);
    (0..MINUTES_PER_DAY)
        .step_by(step)
        .map(|m| {
            let t = m as f64 / 60.0;
            (t, params.value(t))
        })
        .collect()
}
