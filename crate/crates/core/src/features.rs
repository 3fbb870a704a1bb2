//! Nonparametric activity features: mean/SD, M10/L5 windows, relative
//! amplitude, RMSSD and immobile minutes.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::preprocess::ActivitySeries;
use crate::MINUTES_PER_DAY;

/// Width of the most-active window, in minutes.
pub const M10_WIDTH: usize = 600;
/// Width of the least-active window, in minutes.
pub const L5_WIDTH: usize = 300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("series is not a whole number of complete, midnight-aligned days")]
    IncompleteDays,
    #[error("M10 and L5 are both zero")]
    BothZero,
    #[error("need at least two adjacent valid minutes")]
    TooShort,
    #[error("series has no valid minutes")]
    NoValidData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    /// Minutes with a count at or below this value are immobile.
    pub immobile_threshold: f64,
    /// Use `(M10 - L5) / (M10 + L5)` on the raw window sums.
    pub ra_raw_sums: bool,
    /// Use the N - 1 divisor for SD.
    pub sample_sd: bool,
    /// Compute M10/L5 per day and average, instead of on the pooled profile.
    pub per_day: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            immobile_threshold: 0.0,
            ra_raw_sums: false,
            sample_sd: false,
            per_day: false,
        }
    }
}

/// Across-day mean count for each minute of the day.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteProfile {
    pub values: Vec<f64>,
}

impl MinuteProfile {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Statistical activity features for one subject.
///
/// `ra` and `rmssd_sd` are `None` when undefined (no activity at all, or zero
/// SD respectively).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityFeatures {
    pub mean: f64,
    pub sd: f64,
    /// Sum over the most active 600 minutes.
    pub m10: f64,
    /// Start of the M10 window, minutes after midnight.
    pub t_m10: f64,
    /// Sum over the least active 300 minutes.
    pub l5: f64,
    pub t_l5: f64,
    pub ra: Option<f64>,
    pub rmssd: f64,
    pub rmssd_sd: Option<f64>,
    /// Immobile minutes per valid day.
    pub immobile_minutes: f64,
}

/// Averages valid days minute by minute. The series must start at midnight
/// and consist of whole days.
pub fn minute_profile(series: &ActivitySeries) -> Result<MinuteProfile, FeatureError> {
    if series.start_offset() != 0
        || series.is_empty()
        || !series.len().is_multiple_of(MINUTES_PER_DAY)
    {
        return Err(FeatureError::IncompleteDays);
    }
    let mut values = vec![0.0; MINUTES_PER_DAY];
    let mut days = 0usize;
    for (day, chunk) in series.values.chunks_exact(MINUTES_PER_DAY).enumerate() {
        if !series.day_valid[day] {
            continue;
        }
        days += 1;
        for (acc, v) in values.iter_mut().zip(chunk) {
            *acc += v;
        }
    }
    if days == 0 {
        return Err(FeatureError::IncompleteDays);
    }
    values.iter_mut().for_each(|v| *v /= days as f64);
    Ok(MinuteProfile { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Max,
    Min,
}

/// Circular sliding-window extreme: returns `(sum, start)` of the window of
/// `width` consecutive values (wrapping past the end) with the largest or
/// smallest sum. Ties go to the smallest start.
///
/// Window sums are tracked with a rolling update, so two sums closer than the
/// accumulated rounding error of that update count as a tie. The returned sum
/// is recomputed directly.
///
/// # Panics
///
/// If `width` is zero or exceeds the profile length.
pub fn window_extreme(profile: &[f64], width: usize, mode: WindowMode) -> (f64, usize) {
    let n = profile.len();
    assert!(
        width >= 1 && width <= n,
        "window width {width} out of range for {n} values"
    );
    let direct = |start: usize| -> f64 { (start..start + width).map(|i| profile[i % n]).sum() };
    if width == n {
        return (direct(0), 0);
    }
    let mut sums = Vec::with_capacity(n);
    let mut sum = direct(0);
    sums.push(sum);
    for start in 1..n {
        sum += profile[(start + width - 1) % n] - profile[start - 1];
        sums.push(sum);
    }
    let best = match mode {
        WindowMode::Max => sums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        WindowMode::Min => sums.iter().copied().fold(f64::INFINITY, f64::min),
    };
    let total_abs: f64 = profile.iter().map(|v| v.abs()).sum();
    let tolerance = 4.0 * n as f64 * f64::EPSILON * total_abs;
    let start = sums
        .iter()
        .position(|s| (s - best).abs() <= tolerance)
        .unwrap_or(0);
    (direct(start), start)
}

/// Relative amplitude from an M10 sum and an L5 sum.
///
/// By default L5 is doubled so both windows are compared on the same
/// duration, which makes a flat profile score 0. `raw_sums` applies the
/// formula to the sums as given.
pub fn relative_amplitude(m10: f64, l5: f64, raw_sums: bool) -> Result<f64, FeatureError> {
    let l5 = if raw_sums { l5 } else { 2.0 * l5 };
    if m10 + l5 == 0.0 {
        return Err(FeatureError::BothZero);
    }
    Ok((m10 - l5) / (m10 + l5))
}

/// Root mean square of successive differences over adjacent valid minutes.
pub fn rmssd(series: &ActivitySeries) -> Result<f64, FeatureError> {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 1..series.len() {
        if series.is_break(i) || !series.is_minute_valid(i) || !series.is_minute_valid(i - 1) {
            continue;
        }
        let d = series.values[i] - series.values[i - 1];
        total += d * d;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(FeatureError::TooShort);
    }
    Ok((total / pairs as f64).sqrt())
}

/// Valid minutes at or below `threshold`, per valid day.
pub fn immobile_minutes(series: &ActivitySeries, threshold: f64) -> f64 {
    let days = series.n_valid_days();
    if days == 0 {
        return 0.0;
    }
    let count = series
        .valid_minutes()
        .filter(|(_, v)| *v <= threshold)
        .count();
    count as f64 / days as f64
}

fn circular_mean_minutes(times: &[f64]) -> f64 {
    let (s, c) = times.iter().fold((0.0, 0.0), |(s, c), t| {
        let a = TAU * t / MINUTES_PER_DAY as f64;
        (s + a.sin(), c + a.cos())
    });
    if s.abs() < 1e-12 && c.abs() < 1e-12 {
        return times.first().copied().unwrap_or(0.0);
    }
    let t = s.atan2(c) / TAU * MINUTES_PER_DAY as f64;
    t.rem_euclid(MINUTES_PER_DAY as f64)
}

struct Windows {
    m10: f64,
    t_m10: f64,
    l5: f64,
    t_l5: f64,
}

fn profile_windows(series: &ActivitySeries) -> Result<Windows, FeatureError> {
    let profile = minute_profile(series)?;
    let (m10, t_m10) = window_extreme(&profile.values, M10_WIDTH, WindowMode::Max);
    let (l5, t_l5) = window_extreme(&profile.values, L5_WIDTH, WindowMode::Min);
    Ok(Windows {
        m10,
        t_m10: t_m10 as f64,
        l5,
        t_l5: t_l5 as f64,
    })
}

fn per_day_windows(series: &ActivitySeries) -> Result<Windows, FeatureError> {
    if series.start_offset() != 0
        || series.is_empty()
        || !series.len().is_multiple_of(MINUTES_PER_DAY)
    {
        return Err(FeatureError::IncompleteDays);
    }
    let days: Vec<(f64, usize, f64, usize)> = series
        .values
        .chunks_exact(MINUTES_PER_DAY)
        .enumerate()
        .filter(|(d, _)| series.day_valid[*d])
        .map(|(_, day)| {
            let (m, tm) = window_extreme(day, M10_WIDTH, WindowMode::Max);
            let (l, tl) = window_extreme(day, L5_WIDTH, WindowMode::Min);
            (m, tm, l, tl)
        })
        .collect();
    if days.is_empty() {
        return Err(FeatureError::IncompleteDays);
    }
    let n = days.len() as f64;
    let t_m10: Vec<f64> = days.iter().map(|d| d.1 as f64).collect();
    let t_l5: Vec<f64> = days.iter().map(|d| d.3 as f64).collect();
    Ok(Windows {
        m10: days.iter().map(|d| d.0).sum::<f64>() / n,
        t_m10: circular_mean_minutes(&t_m10),
        l5: days.iter().map(|d| d.2).sum::<f64>() / n,
        t_l5: circular_mean_minutes(&t_l5),
    })
}

/// Computes the full feature battery for an analysis-window series.
pub fn compute_features(
    series: &ActivitySeries,
    config: &FeatureConfig,
) -> Result<ActivityFeatures, FeatureError> {
    let values: Vec<f64> = series.valid_minutes().map(|(_, v)| v).collect();
    if values.is_empty() {
        return Err(FeatureError::NoValidData);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let divisor = if config.sample_sd { n - 1.0 } else { n };
    let sd = if divisor > 0.0 {
        (ss / divisor).sqrt()
    } else {
        0.0
    };

    let windows = if config.per_day {
        per_day_windows(series)?
    } else {
        profile_windows(series)?
    };
    let ra = relative_amplitude(windows.m10, windows.l5, config.ra_raw_sums).ok();
    let rmssd = rmssd(series)?;
    let rmssd_sd = (sd > 0.0).then(|| rmssd / sd);

    Ok(ActivityFeatures {
        mean,
        sd,
        m10: windows.m10,
        t_m10: windows.t_m10,
        l5: windows.l5,
        t_l5: windows.t_l5,
        ra,
        rmssd,
        rmssd_sd,
        immobile_minutes: immobile_minutes(series, config.immobile_threshold),
    })
}
