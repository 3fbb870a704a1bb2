//! Vector magnitude conversion, non-wear detection and analysis-day selection.

use chrono::{NaiveDateTime, NaiveTime, TimeDelta, Timelike};
use thiserror::Error;

use crate::ingest::TriaxialSeries;
use crate::MINUTES_PER_DAY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("series epoch is {seconds} s, expected 60 s")]
    NotMinuteEpoch { seconds: u32 },
    #[error("series has no samples")]
    EmptySeries,
    #[error("need {needed} valid complete days, found {found}")]
    InsufficientData { needed: usize, found: usize },
}

/// Minute-level vector-magnitude counts with a per-calendar-day validity mask.
///
/// Minute `i` belongs to calendar day `(start minute-of-day + i) / 1440`.
/// `breaks` lists indices `i` where minute `i - 1` and minute `i` are not
/// adjacent in time (left by removing whole days).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivitySeries {
    pub subject_id: String,
    pub start_time: NaiveDateTime,
    pub values: Vec<f64>,
    pub day_valid: Vec<bool>,
    pub breaks: Vec<usize>,
}

impl ActivitySeries {
    /// Builds a series whose every calendar day is valid.
    pub fn new(subject_id: impl Into<String>, start_time: NaiveDateTime, values: Vec<f64>) -> Self {
        let offset = minute_of_day(start_time);
        let days = if values.is_empty() {
            0
        } else {
            (offset + values.len() - 1) / MINUTES_PER_DAY + 1
        };
        ActivitySeries {
            subject_id: subject_id.into(),
            start_time,
            values,
            day_valid: vec![true; days],
            breaks: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Minute of day (0..1440) of the first value.
    pub fn start_offset(&self) -> usize {
        minute_of_day(self.start_time)
    }

    pub fn day_of(&self, index: usize) -> usize {
        (self.start_offset() + index) / MINUTES_PER_DAY
    }

    pub fn n_days(&self) -> usize {
        self.day_valid.len()
    }

    pub fn n_valid_days(&self) -> usize {
        self.day_valid.iter().filter(|v| **v).count()
    }

    pub fn is_minute_valid(&self, index: usize) -> bool {
        self.day_valid[self.day_of(index)]
    }

    /// `(index, value)` for every minute on a valid day.
    pub fn valid_minutes(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_minute_valid(*i))
            .map(|(i, v)| (i, *v))
    }

    /// True when `index` is a known break between non-adjacent minutes.
    pub fn is_break(&self, index: usize) -> bool {
        self.breaks.binary_search(&index).is_ok()
    }

    /// Index range of calendar day `day`, clipped to the series.
    pub fn day_range(&self, day: usize) -> std::ops::Range<usize> {
        let offset = self.start_offset();
        let start = (day * MINUTES_PER_DAY).saturating_sub(offset);
        let end = ((day + 1) * MINUTES_PER_DAY - offset).min(self.len());
        start..end
    }

    /// Whether calendar day `day` is covered by all of its 1440 minutes.
    pub fn is_day_complete(&self, day: usize) -> bool {
        let offset = self.start_offset();
        day * MINUTES_PER_DAY >= offset && (day + 1) * MINUTES_PER_DAY - offset <= self.len()
    }
}

fn minute_of_day(t: NaiveDateTime) -> usize {
    (t.hour() * 60 + t.minute()) as usize
}

/// Euclidean norm of the three axis counts. Squares are summed smallest
/// first, so the result does not depend on axis order.
pub fn vector_magnitude(x: f64, y: f64, z: f64) -> f64 {
    let mut sq = [x * x, y * y, z * z];
    sq.sort_by(f64::total_cmp);
    (sq[0] + sq[1] + sq[2]).sqrt()
}

/// Converts a minute-epoch triaxial series to vector magnitudes.
///
/// Seconds of the start timestamp are truncated so minute boundaries line up
/// with the clock.
pub fn to_activity_series(series: &TriaxialSeries) -> Result<ActivitySeries, PreprocessError> {
    if series.epoch_length != 60 {
        return Err(PreprocessError::NotMinuteEpoch {
            seconds: series.epoch_length,
        });
    }
    if series.is_empty() {
        return Err(PreprocessError::EmptySeries);
    }
    let start = series
        .start_time
        .with_second(0)
        .and_then(|t| t.with_nanosecond(0))
        .unwrap_or(series.start_time);
    let values = series
        .samples
        .iter()
        .map(|&[x, y, z]| vector_magnitude(x, y, z))
        .collect();
    Ok(ActivitySeries::new(
        series.subject_id.clone(),
        start,
        values,
    ))
}

/// A maximal run of non-wear minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonwearBout {
    pub start_index: usize,
    pub length: usize,
}

impl NonwearBout {
    pub fn end_index(&self) -> usize {
        self.start_index + self.length
    }
}

/// Runs of zero-count minutes strictly longer than `min_bout` minutes.
pub fn detect_nonwear_bouts(series: &ActivitySeries, min_bout: usize) -> Vec<NonwearBout> {
    detect_nonwear_bouts_with_tolerance(series, min_bout, 0)
}

/// Like [`detect_nonwear_bouts`], but zero runs separated by at most
/// `tolerance` consecutive nonzero minutes are merged into one bout. A bout
/// always starts and ends on a zero minute and never crosses a break.
pub fn detect_nonwear_bouts_with_tolerance(
    series: &ActivitySeries,
    min_bout: usize,
    tolerance: usize,
) -> Vec<NonwearBout> {
    let n = series.len();
    let mut bouts = Vec::new();
    // (start, end) of the bout being grown, end exclusive
    let mut current: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < n {
        if series.is_break(i) {
            if let Some((s, e)) = current.take() {
                push_bout(&mut bouts, s, e, min_bout);
            }
        }
        if series.values[i] != 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && series.values[i] == 0.0 && (i == start || !series.is_break(i)) {
            i += 1;
        }
        current = match current {
            Some((s, e)) if start - e <= tolerance => Some((s, i)),
            Some((s, e)) => {
                push_bout(&mut bouts, s, e, min_bout);
                Some((start, i))
            }
            None => Some((start, i)),
        };
    }
    if let Some((s, e)) = current {
        push_bout(&mut bouts, s, e, min_bout);
    }
    bouts
}

fn push_bout(bouts: &mut Vec<NonwearBout>, start: usize, end: usize, min_bout: usize) {
    if end - start > min_bout {
        bouts.push(NonwearBout {
            start_index: start,
            length: end - start,
        });
    }
}

/// Marks every calendar day touched by a bout as invalid.
pub fn filter_invalid_days(series: &ActivitySeries, bouts: &[NonwearBout]) -> ActivitySeries {
    let mut out = series.clone();
    for bout in bouts.iter().filter(|b| b.length > 0) {
        let first = series.day_of(bout.start_index);
        let last = series.day_of(bout.end_index() - 1);
        for day in first..=last {
            out.day_valid[day] = false;
        }
    }
    out
}

/// Keeps the first `n_days` valid, complete calendar days, concatenated in
/// time order. The result starts at midnight of the first kept day.
pub fn select_analysis_window(
    series: &ActivitySeries,
    n_days: usize,
) -> Result<ActivitySeries, PreprocessError> {
    let kept: Vec<usize> = (0..series.n_days())
        .filter(|&d| series.day_valid[d] && series.is_day_complete(d))
        .take(n_days)
        .collect();
    if kept.len() < n_days || n_days == 0 {
        return Err(PreprocessError::InsufficientData {
            needed: n_days,
            found: kept.len(),
        });
    }

    let mut values = Vec::with_capacity(n_days * MINUTES_PER_DAY);
    let mut breaks = Vec::new();
    let mut previous: Option<usize> = None;
    for (k, &day) in kept.iter().enumerate() {
        let range = series.day_range(day);
        let base = k * MINUTES_PER_DAY;
        if k > 0 && (previous != Some(day - 1) || series.is_break(range.start)) {
            breaks.push(base);
        }
        breaks.extend(
            series
                .breaks
                .iter()
                .filter(|&&b| b > range.start && b < range.end)
                .map(|&b| base + b - range.start),
        );
        values.extend_from_slice(&series.values[range]);
        previous = Some(day);
    }

    let first_date = series.start_time.date() + TimeDelta::days(kept[0] as i64);
    Ok(ActivitySeries {
        subject_id: series.subject_id.clone(),
        start_time: first_date.and_time(NaiveTime::MIN),
        values,
        day_valid: vec![true; n_days],
        breaks,
    })
}
