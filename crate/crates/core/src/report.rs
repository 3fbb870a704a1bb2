//! Cohort pipeline, group average curves, fitted-curve overlays and SVG
//! rendering.
//!
//! Subjects are analysed independently (in parallel) and every aggregate is
//! built from inputs sorted by subject id, so outputs do not depend on
//! scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::cosinor::{export_fitted_curve, fit_sigmoidal_cosinor, CosinorError, FitConfig};
use crate::cosinor::{SigmoidalCosinorFit, SigmoidalParams, Transform};
use crate::features::{compute_features, ActivityFeatures, FeatureConfig};
use crate::format::{fmt6, fmt_sig, parse_opt};
use crate::ingest::TriaxialSeries;
use crate::ingest::{aggregate_to_minutes, parse_triaxial_csv, CohortManifest, GroupLabel};
use crate::preprocess::{
    detect_nonwear_bouts_with_tolerance, filter_invalid_days, select_analysis_window,
    to_activity_series, ActivitySeries,
};
use crate::stats::{comparison_rows, rows_to_csv, rows_to_text, CompareOptions, FeatureKind};
use crate::stats::{GroupComparisonRow, StatsError, SubjectValues};
use crate::MINUTES_PER_DAY;

/// z quantile of the two-sided 95% normal band.
const Z95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("series lengths differ: expected {expected} minutes, found {found}")]
    MisalignedSeries { expected: usize, found: usize },
    #[error("no subjects to average")]
    NoSubjects,
    #[error("only {found} group(s) left after skipping subjects, need 2")]
    TooFewGroups { found: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    BadTable { path: String, reason: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Pipeline settings shared by all subcommands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub days: usize,
    /// Zero runs longer than this many minutes are non-wear.
    pub nonwear_min: usize,
    pub nonwear_tolerance: usize,
    pub features: FeatureConfig,
    pub fit: FitConfig,
    pub compare: CompareOptions,
    /// Centered moving-average window for group curves, in minutes.
    pub smooth: usize,
    /// Minutes between fitted-curve samples in overlays.
    pub overlay_resolution: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            days: 5,
            nonwear_min: 60,
            nonwear_tolerance: 0,
            features: FeatureConfig::default(),
            fit: FitConfig::default(),
            compare: CompareOptions::default(),
            smooth: 0,
            overlay_resolution: 5,
        }
    }
}

/// Non-wear screening of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Validity {
    pub subject_id: String,
    pub group: GroupLabel,
    /// Calendar days touched by the recording.
    pub days_found: usize,
    pub nonwear_bouts: usize,
    /// Complete calendar days without non-wear.
    pub valid_days: usize,
}

/// Everything derived from one subject that survived screening.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectAnalysis {
    pub validity: Validity,
    pub window: ActivitySeries,
    pub features: ActivityFeatures,
    pub fit: SigmoidalCosinorFit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub subject_id: String,
    pub group: GroupLabel,
    pub reason: String,
}

/// Screens a minute-aggregable series for non-wear.
pub fn screen_series(
    series: &TriaxialSeries,
    group: GroupLabel,
    config: &PipelineConfig,
) -> Result<(Validity, ActivitySeries), String> {
    let minutes = aggregate_to_minutes(series).map_err(|e| e.to_string())?;
    let activity = to_activity_series(&minutes).map_err(|e| e.to_string())?;
    let bouts = detect_nonwear_bouts_with_tolerance(
        &activity,
        config.nonwear_min,
        config.nonwear_tolerance,
    );
    let filtered = filter_invalid_days(&activity, &bouts);
    let valid_days = (0..filtered.n_days())
        .filter(|&d| filtered.day_valid[d] && filtered.is_day_complete(d))
        .count();
    let validity = Validity {
        subject_id: series.subject_id.clone(),
        group,
        days_found: activity.n_days(),
        nonwear_bouts: bouts.len(),
        valid_days,
    };
    Ok((validity, filtered))
}

/// Runs screening, window selection, features and the sigmoidal fit on one
/// subject. A fit with negligible amplitude is kept with `converged = false`.
pub fn analyze_series(
    series: &TriaxialSeries,
    group: GroupLabel,
    config: &PipelineConfig,
) -> Result<SubjectAnalysis, String> {
    let (validity, filtered) = screen_series(series, group, config)?;
    let window = select_analysis_window(&filtered, config.days).map_err(|e| e.to_string())?;
    let features = compute_features(&window, &config.features).map_err(|e| e.to_string())?;
    let fit = match fit_sigmoidal_cosinor(&window, &config.fit) {
        Ok(fit) => fit,
        Err(CosinorError::DegenerateFit(fit)) => *fit,
        Err(e) => return Err(e.to_string()),
    };
    Ok(SubjectAnalysis {
        validity,
        window,
        features,
        fit,
    })
}

fn read_subject(path: &Path, subject_id: &str) -> Result<TriaxialSeries, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_triaxial_csv(&bytes, subject_id).map_err(|e| format!("{}: {e}", path.display()))
}

/// Resolves a manifest path against the manifest's directory.
pub fn resolve_path(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

/// Screens every manifest subject without fitting anything.
pub fn validate_cohort(
    manifest: &CohortManifest,
    base_dir: &Path,
    config: &PipelineConfig,
) -> Vec<Result<Validity, Skip>> {
    let mut out: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            read_subject(
                &resolve_path(base_dir, &entry.source_path),
                &entry.subject_id,
            )
            .and_then(|s| screen_series(&s, entry.group, config))
            .map(|(v, _)| v)
            .map_err(|reason| Skip {
                subject_id: entry.subject_id.clone(),
                group: entry.group,
                reason,
            })
        })
        .collect();
    out.sort_by(|a, b| subject_key(a).cmp(subject_key(b)));
    out
}

fn subject_key(r: &Result<Validity, Skip>) -> &str {
    match r {
        Ok(v) => &v.subject_id,
        Err(s) => &s.subject_id,
    }
}

/// Per-subject results of a cohort run, both lists sorted by subject id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortResult {
    pub subjects: Vec<SubjectAnalysis>,
    pub skipped: Vec<Skip>,
}

impl CohortResult {
    pub fn n_groups(&self) -> usize {
        let mut groups: Vec<GroupLabel> = self.subjects.iter().map(|s| s.validity.group).collect();
        groups.sort();
        groups.dedup();
        groups.len()
    }

    pub fn subject_values(&self) -> Vec<SubjectValues> {
        self.subjects
            .iter()
            .map(|s| {
                SubjectValues::new(s.validity.subject_id.clone(), s.validity.group)
                    .with_features(&s.features)
                    .with_cosinor(&s.fit)
            })
            .collect()
    }

    pub fn comparison(&self, opts: &CompareOptions) -> Result<Vec<GroupComparisonRow>, StatsError> {
        comparison_rows(&self.subject_values(), opts)
    }
}

/// Analyses in-memory series `(group, series)`; the subject id is taken from
/// each series.
pub fn run_cohort_series(
    inputs: &[(GroupLabel, TriaxialSeries)],
    config: &PipelineConfig,
) -> CohortResult {
    let results: Vec<_> = inputs
        .par_iter()
        .map(|(group, series)| {
            analyze_series(series, *group, config).map_err(|reason| Skip {
                subject_id: series.subject_id.clone(),
                group: *group,
                reason,
            })
        })
        .collect();
    collect_results(results)
}

/// Reads and analyses every manifest subject. Unreadable or invalid subjects
/// go to the skip list.
pub fn run_cohort(
    manifest: &CohortManifest,
    base_dir: &Path,
    config: &PipelineConfig,
) -> CohortResult {
    let results: Vec<_> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            read_subject(
                &resolve_path(base_dir, &entry.source_path),
                &entry.subject_id,
            )
            .and_then(|s| analyze_series(&s, entry.group, config))
            .map_err(|reason| Skip {
                subject_id: entry.subject_id.clone(),
                group: entry.group,
                reason,
            })
        })
        .collect();
    collect_results(results)
}

fn collect_results(results: Vec<Result<SubjectAnalysis, Skip>>) -> CohortResult {
    let mut out = CohortResult::default();
    for r in results {
        match r {
            Ok(a) => out.subjects.push(a),
            Err(s) => out.skipped.push(s),
        }
    }
    out.subjects
        .sort_by(|a, b| a.validity.subject_id.cmp(&b.validity.subject_id));
    out.skipped.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    out
}

// ---------------------------------------------------------------------------
// Group curves

/// Across-subject mean activity of one group with a 95% normal band.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCurve {
    pub group: GroupLabel,
    /// Minutes since the start of the analysis window.
    pub times: Vec<usize>,
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_subjects: usize,
}

/// Pointwise mean and `mean ± 1.96 sd / sqrt(n)` band (population SD) per
/// group, optionally smoothed by a centered moving average of `smoothing`
/// minutes. Groups come out in label order.
pub fn group_average_curve(
    series: &[(GroupLabel, &[f64])],
    smoothing: usize,
) -> Result<Vec<GroupCurve>, ReportError> {
    let Some((_, first)) = series.first() else {
        return Err(ReportError::NoSubjects);
    };
    let len = first.len();
    if let Some((_, bad)) = series.iter().find(|(_, s)| s.len() != len) {
        return Err(ReportError::MisalignedSeries {
            expected: len,
            found: bad.len(),
        });
    }

    let mut by_group: BTreeMap<GroupLabel, Vec<&[f64]>> = BTreeMap::new();
    for (g, s) in series {
        by_group.entry(*g).or_default().push(s);
    }

    let curves = by_group
        .into_iter()
        .map(|(group, members)| {
            let n = members.len() as f64;
            let mut mean = Vec::with_capacity(len);
            let mut ci_low = Vec::with_capacity(len);
            let mut ci_high = Vec::with_capacity(len);
            let mut column = Vec::with_capacity(members.len());
            for i in 0..len {
                column.clear();
                column.extend(members.iter().map(|s| s[i]));
                // summing in sorted order makes the result independent of
                // subject order
                column.sort_by(f64::total_cmp);
                let m = column.iter().sum::<f64>() / n;
                let var = column.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let half = Z95 * var.sqrt() / n.sqrt();
                mean.push(m);
                ci_low.push(m - half);
                ci_high.push(m + half);
            }
            GroupCurve {
                group,
                times: (0..len).collect(),
                mean: moving_average(&mean, smoothing),
                ci_low: moving_average(&ci_low, smoothing),
                ci_high: moving_average(&ci_high, smoothing),
                n_subjects: members.len(),
            }
        })
        .collect();
    Ok(curves)
}

/// Centered moving average; the window shrinks at the ends. Windows of 0 or 1
/// return the input.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let n = values.len();
    let mut prefix = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
    }
    let before = window / 2;
    let after = window - before;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Long-format CSV of group curves.
pub fn curves_to_csv(curves: &[GroupCurve]) -> String {
    let mut out = String::from("group,minute,mean,ci_low,ci_high,n_subjects\n");
    for c in curves {
        for i in 0..c.times.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                c.group,
                c.times[i],
                fmt6(Some(c.mean[i])),
                fmt6(Some(c.ci_low[i])),
                fmt6(Some(c.ci_high[i])),
                c.n_subjects
            );
        }
    }
    out
}

// ---------------------------------------------------------------------------
// SVG

#[derive(Debug, Clone, PartialEq)]
pub struct SvgOptions {
    pub width: f64,
    pub height: f64,
    pub title: Option<String>,
}

impl Default for SvgOptions {
    fn default() -> Self {
        SvgOptions {
            width: 960.0,
            height: 420.0,
            title: None,
        }
    }
}

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 160.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn group_color(group: GroupLabel) -> &'static str {
    match group {
        GroupLabel::ControlIcu => "#1f77b4",
        GroupLabel::Cci => "#d62728",
        GroupLabel::Rr => "#ff7f0e",
        GroupLabel::ControlHealthy => "#2ca02c",
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Maps data coordinates to the plot area.
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x0) / (self.x1 - self.x0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y0) / (self.y1 - self.y0) * self.height
    }

    fn point(&self, x: f64, y: f64) -> String {
        format!("{:.2},{:.2}", self.px(x), self.py(y))
    }

    fn path(&self, xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> String {
        let mut d = String::new();
        for (i, (x, y)) in xs.zip(ys).enumerate() {
            d.push(if i == 0 { 'M' } else { 'L' });
            d.push_str(&self.point(x, y));
        }
        d
    }

    fn axes(&self, out: &mut String, x_label: &str, y_label: &str, x_ticks: &[f64]) {
        let bottom = self.top + self.height;
        let right = self.left + self.width;
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#444\"/>",
            self.left, self.top, self.width, self.height
        );
        for &t in x_ticks {
            let x = self.px(t);
            let _ = writeln!(
                out,
                "<line x1=\"{x:.2}\" y1=\"{bottom:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#444\"/>\
                 <text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                bottom + 5.0,
                bottom + 20.0,
                fmt_sig(t, 4)
            );
        }
        for k in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#444\"/>\
                 <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                self.left - 5.0,
                self.left,
                self.left - 8.0,
                y + 4.0,
                fmt_sig(v, 4)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (self.left + right) / 2.0,
            bottom + 40.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            "<text x=\"15\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.2})\">{}</text>",
            self.top + self.height / 2.0,
            self.top + self.height / 2.0,
            escape(y_label)
        );
    }
}

fn svg_open(out: &mut String, width: f64, height: f64, title: Option<&str>) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    if let Some(t) = title {
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
            width / 2.0,
            escape(t)
        );
    }
}

/// One panel with a mean line and a translucent band per group, x in days.
pub fn render_curves_svg(curves: &[GroupCurve], options: &SvgOptions) -> String {
    let x_max = curves
        .iter()
        .map(|c| c.times.len())
        .max()
        .unwrap_or(0)
        .max(1) as f64
        / MINUTES_PER_DAY as f64;
    let y_top = curves
        .iter()
        .flat_map(|c| c.ci_high.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::max);
    let y_bottom = curves
        .iter()
        .flat_map(|c| c.ci_low.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0_f64, f64::min);
    let y_top = if y_top > y_bottom {
        y_top
    } else {
        y_bottom + 1.0
    };

    let frame = Frame {
        x0: 0.0,
        x1: x_max,
        y0: y_bottom,
        y1: y_top,
        left: MARGIN_LEFT,
        top: MARGIN_TOP,
        width: options.width - MARGIN_LEFT - MARGIN_RIGHT,
        height: options.height - MARGIN_TOP - MARGIN_BOTTOM,
    };

    let mut out = String::new();
    svg_open(
        &mut out,
        options.width,
        options.height,
        options.title.as_deref(),
    );
    let ticks: Vec<f64> = (0..=x_max.ceil() as usize).map(|d| d as f64).collect();
    frame.axes(&mut out, "Time (days)", "Activity (counts/min)", &ticks);

    let day = |t: &usize| *t as f64 / MINUTES_PER_DAY as f64;
    for c in curves {
        let color = group_color(c.group);
        let mut pts: Vec<String> = c
            .times
            .iter()
            .zip(&c.ci_high)
            .map(|(t, y)| frame.point(day(t), *y))
            .collect();
        pts.extend(
            c.times
                .iter()
                .zip(&c.ci_low)
                .rev()
                .map(|(t, y)| frame.point(day(t), *y)),
        );
        let _ = writeln!(
            out,
            "<polygon class=\"band\" points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            pts.join(" ")
        );
    }
    for c in curves {
        let d = frame.path(c.times.iter().map(day), c.mean.iter().copied());
        let _ = writeln!(
            out,
            "<path class=\"mean\" d=\"{d}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1\"/>",
            group_color(c.group)
        );
    }
    let lx = frame.left + frame.width + 15.0;
    for (k, c) in curves.iter().enumerate() {
        let y = frame.top + 10.0 + 20.0 * k as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"14\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\">{} (n={})</text>",
            y - 9.0,
            group_color(c.group),
            lx + 20.0,
            y,
            escape(c.group.display_name()),
            c.n_subjects
        );
    }
    out.push_str("</svg>\n");
    out
}

// ---------------------------------------------------------------------------
// Fitted-curve overlays

/// Observed daily profile of one subject next to its fitted model, both on
/// the fit's transformed scale and indexed by clock hour.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOverlay {
    pub subject_id: String,
    pub group: GroupLabel,
    pub observed: Vec<(f64, f64)>,
    pub fitted: Vec<(f64, f64)>,
    pub params: SigmoidalParams,
    pub transform: Transform,
}

/// Builds the overlay for one analysed subject. `observed` is the across-day
/// mean of transformed counts at each minute midpoint.
pub fn curve_overlay(subject: &SubjectAnalysis, resolution: usize) -> CurveOverlay {
    let window = &subject.window;
    let transform = subject.fit.transform;
    let mut sums = vec![0.0; MINUTES_PER_DAY];
    let mut counts = vec![0usize; MINUTES_PER_DAY];
    let offset = window.start_offset();
    for (i, v) in window.valid_minutes() {
        let m = (offset + i) % MINUTES_PER_DAY;
        sums[m] += transform.apply(v);
        counts[m] += 1;
    }
    let observed = (0..MINUTES_PER_DAY)
        .filter(|&m| counts[m] > 0)
        .map(|m| ((m as f64 + 0.5) / 60.0, sums[m] / counts[m] as f64))
        .collect();
    CurveOverlay {
        subject_id: subject.validity.subject_id.clone(),
        group: subject.validity.group,
        observed,
        fitted: export_fitted_curve(&subject.fit.params, resolution),
        params: subject.fit.params,
        transform,
    }
}

/// The first subject (by id) of every group.
pub fn representative_overlays(result: &CohortResult, resolution: usize) -> Vec<CurveOverlay> {
    let mut chosen: BTreeMap<GroupLabel, &SubjectAnalysis> = BTreeMap::new();
    for s in &result.subjects {
        chosen.entry(s.validity.group).or_insert(s);
    }
    chosen
        .values()
        .map(|s| curve_overlay(s, resolution))
        .collect()
}

pub fn overlays_to_csv(overlays: &[CurveOverlay]) -> String {
    let mut out = String::from("subject_id,group,series,hour,value\n");
    for o in overlays {
        for (name, points) in [("observed", &o.observed), ("fitted", &o.fitted)] {
            for (h, v) in points {
                let _ = writeln!(
                    out,
                    "{},{},{name},{},{}",
                    o.subject_id,
                    o.group,
                    fmt6(Some(*h)),
                    fmt6(Some(*v))
                );
            }
        }
    }
    out
}

/// One stacked panel per overlay: observed profile in grey, fitted model in
/// green.
pub fn render_overlays_svg(overlays: &[CurveOverlay], options: &SvgOptions) -> String {
    let panel_height = options.height.max(MARGIN_TOP + MARGIN_BOTTOM + 50.0);
    let total_height = panel_height * overlays.len().max(1) as f64;
    let mut out = String::new();
    svg_open(
        &mut out,
        options.width,
        total_height,
        options.title.as_deref(),
    );
    for (k, o) in overlays.iter().enumerate() {
        let values = o
            .observed
            .iter()
            .chain(&o.fitted)
            .map(|p| p.1)
            .filter(|v| v.is_finite());
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let (lo, hi) = if lo.is_finite() && hi > lo {
            (lo, hi)
        } else if lo.is_finite() {
            (lo - 0.5, lo + 0.5)
        } else {
            (0.0, 1.0)
        };
        let frame = Frame {
            x0: 0.0,
            x1: 24.0,
            y0: lo,
            y1: hi,
            left: MARGIN_LEFT,
            top: panel_height * k as f64 + MARGIN_TOP,
            width: options.width - MARGIN_LEFT - MARGIN_RIGHT,
            height: panel_height - MARGIN_TOP - MARGIN_BOTTOM,
        };
        let y_label = match o.transform {
            Transform::Raw => "Activity (counts/min)",
            Transform::Log1p => "log(1 + counts/min)",
        };
        let ticks: Vec<f64> = (0..=4).map(|h| 6.0 * h as f64).collect();
        frame.axes(&mut out, "Time of day (h)", y_label, &ticks);
        let observed = frame.path(
            o.observed.iter().map(|p| p.0),
            o.observed.iter().map(|p| p.1),
        );
        let fitted = frame.path(o.fitted.iter().map(|p| p.0), o.fitted.iter().map(|p| p.1));
        let _ = writeln!(
            out,
            "<path class=\"observed\" d=\"{observed}\" fill=\"none\" stroke=\"#888\" stroke-width=\"1\"/>"
        );
        let _ = writeln!(
            out,
            "<path class=\"fitted\" d=\"{fitted}\" fill=\"none\" stroke=\"#2ca02c\" stroke-width=\"2\"/>"
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\">{} ({})</text>",
            frame.left + frame.width + 15.0,
            frame.top + 10.0,
            escape(&o.subject_id),
            escape(o.group.display_name())
        );
    }
    out.push_str("</svg>\n");
    out
}

// ---------------------------------------------------------------------------
// Tables

pub const FEATURES_HEADER: &str =
    "subject_id,group,mean,sd,m10,t_m10,l5,t_l5,ra,rmssd,rmssd_sd,immobile_minutes";
pub const COSINOR_HEADER: &str =
    "subject_id,group,min,amplitude,alpha,beta,phase,mesor,curve_mean,rss,converged,at_boundary,transform";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn features_to_csv(result: &CohortResult) -> String {
    let mut out = format!("{FEATURES_HEADER}\n");
    for s in &result.subjects {
        let f = &s.features;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&s.validity.subject_id),
            s.validity.group,
            fmt6(Some(f.mean)),
            fmt6(Some(f.sd)),
            fmt6(Some(f.m10)),
            fmt6(Some(f.t_m10)),
            fmt6(Some(f.l5)),
            fmt6(Some(f.t_l5)),
            fmt6(f.ra),
            fmt6(Some(f.rmssd)),
            fmt6(f.rmssd_sd),
            fmt6(Some(f.immobile_minutes)),
        );
    }
    out
}

pub fn cosinor_to_csv(result: &CohortResult) -> String {
    let mut out = format!("{COSINOR_HEADER}\n");
    for s in &result.subjects {
        let fit = &s.fit;
        let p = &fit.params;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&s.validity.subject_id),
            s.validity.group,
            fmt6(Some(p.min)),
            fmt6(Some(p.amplitude)),
            fmt6(Some(p.alpha)),
            fmt6(Some(p.beta)),
            fmt6(Some(p.phase)),
            fmt6(Some(fit.mesor)),
            fmt6(Some(fit.curve_mean)),
            fmt6(Some(fit.rss)),
            fit.converged,
            fit.at_boundary,
            fit.transform,
        );
    }
    out
}

pub fn skips_to_csv(skipped: &[Skip]) -> String {
    let mut out = String::from("subject_id,group,reason\n");
    for s in skipped {
        let _ = writeln!(
            out,
            "{},{},{}",
            csv_field(&s.subject_id),
            s.group,
            csv_field(&s.reason)
        );
    }
    out
}

pub fn validity_to_csv(rows: &[Result<Validity, Skip>], needed_days: usize) -> String {
    let mut out = String::from("subject_id,group,days_found,nonwear_bouts,valid_days,status\n");
    for r in rows {
        match r {
            Ok(v) => {
                let status = if v.valid_days >= needed_days {
                    "ok".to_string()
                } else {
                    format!("need {needed_days} valid days")
                };
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    csv_field(&v.subject_id),
                    v.group,
                    v.days_found,
                    v.nonwear_bouts,
                    v.valid_days,
                    csv_field(&status)
                );
            }
            Err(s) => {
                let _ = writeln!(
                    out,
                    "{},{},NA,NA,NA,{}",
                    csv_field(&s.subject_id),
                    s.group,
                    csv_field(&s.reason)
                );
            }
        }
    }
    out
}

/// Reads a features or cosinor table written by this module (columns are
/// matched by name) into per-subject values, merging into `into`.
pub fn read_value_table(
    content: &[u8],
    name: &str,
    into: &mut BTreeMap<String, SubjectValues>,
) -> Result<(), ReportError> {
    let bad = |reason: String| ReportError::BadTable {
        path: name.to_string(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |key: &str| header.iter().position(|h| h == key);
    let (Some(id_col), Some(group_col)) = (col("subject_id"), col("group")) else {
        return Err(bad("missing subject_id or group column".into()));
    };
    let kinds: Vec<(FeatureKind, usize)> = FeatureKind::ALL
        .iter()
        .filter_map(|&k| col(k.name()).map(|c| (k, c)))
        .collect();
    if kinds.is_empty() {
        return Err(bad("no feature columns".into()));
    }
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").to_string();
        let group: GroupLabel = record
            .get(group_col)
            .unwrap_or("")
            .parse()
            .map_err(|g| bad(format!("line {line}: unknown group `{g}`")))?;
        let entry = into
            .entry(id.clone())
            .or_insert_with(|| SubjectValues::new(id.clone(), group));
        if entry.group != group {
            return Err(bad(format!("line {line}: subject `{id}` changes group")));
        }
        let mut values = std::mem::replace(entry, SubjectValues::new(id.clone(), group));
        for &(kind, c) in &kinds {
            let v = parse_opt(record.get(c).unwrap_or(""))
                .map_err(|e| bad(format!("line {line}: {e}")))?;
            values = values.with_value(kind, v);
        }
        *entry = values;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Outputs

/// Named file contents produced by a pipeline stage, in writing order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
}

impl Outputs {
    pub fn push(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c.as_str())
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), ReportError> {
        std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(|source| ReportError::Io { path, source })?;
        }
        Ok(())
    }
}

pub fn comparison_outputs(rows: &[GroupComparisonRow], out: &mut Outputs) {
    out.push("comparison.csv", rows_to_csv(rows));
    out.push("comparison.txt", rows_to_text(rows));
}

pub fn curve_outputs(
    result: &CohortResult,
    config: &PipelineConfig,
    out: &mut Outputs,
) -> Result<(), ReportError> {
    let series: Vec<(GroupLabel, &[f64])> = result
        .subjects
        .iter()
        .map(|s| (s.validity.group, s.window.values.as_slice()))
        .collect();
    let curves = group_average_curve(&series, config.smooth)?;
    out.push("curves.csv", curves_to_csv(&curves));
    out.push(
        "curves.svg",
        render_curves_svg(&curves, &SvgOptions::default()),
    );
    let overlays = representative_overlays(result, config.overlay_resolution);
    out.push("overlays.csv", overlays_to_csv(&overlays));
    out.push(
        "overlays.svg",
        render_overlays_svg(&overlays, &SvgOptions::default()),
    );
    Ok(())
}

/// Full pipeline output set for an analysed cohort. Fails when fewer than two
/// groups have surviving subjects.
pub fn pipeline_outputs(
    result: &CohortResult,
    config: &PipelineConfig,
) -> Result<Outputs, ReportError> {
    let groups = result.n_groups();
    if groups < 2 {
        return Err(ReportError::TooFewGroups { found: groups });
    }
    let mut out = Outputs::default();
    out.push("features.csv", features_to_csv(result));
    out.push("cosinor.csv", cosinor_to_csv(result));
    comparison_outputs(&result.comparison(&config.compare)?, &mut out);
    curve_outputs(result, config, &mut out)?;
    out.push("skipped.csv", skips_to_csv(&result.skipped));
    Ok(out)
}

/// Reads, analyses and reports a whole cohort. Returns the outputs together
/// with the cohort result so callers can inspect skips.
pub fn run_pipeline(
    manifest: &CohortManifest,
    base_dir: &Path,
    config: &PipelineConfig,
) -> Result<(Outputs, CohortResult), ReportError> {
    let result = run_cohort(manifest, base_dir, config);
    let outputs = pipeline_outputs(&result, config)?;
    Ok((outputs, result))
}
