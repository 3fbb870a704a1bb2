//! Rank-based group comparison: Kruskal-Wallis, pairwise post-hoc tests and
//! median/IQR summary tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::cosinor::SigmoidalCosinorFit;
use crate::features::ActivityFeatures;
use crate::format::{fmt6, fmt_sig};
use crate::ingest::{CohortManifest, GroupLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least two non-empty groups, found {0}")]
    TooFewGroups(usize),
    #[error("need at least 3 observations, found {0}")]
    TooFewObservations(usize),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("subject `{0}` is not in the manifest")]
    UnknownSubject(String),
}

/// Values per group, one per subject.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupSamples {
    pub groups: Vec<(GroupLabel, Vec<f64>)>,
}

impl GroupSamples {
    pub fn new(groups: Vec<(GroupLabel, Vec<f64>)>) -> Self {
        GroupSamples { groups }
    }

    fn non_empty(&self) -> Vec<(GroupLabel, &[f64])> {
        self.groups
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(g, v)| (*g, v.as_slice()))
            .collect()
    }
}

/// Mid-ranks (1-based); tied values share the mean of the ranks they span.
pub fn ranks_with_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Sum of `t^3 - t` over groups of tied values.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KwResult {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    /// Ties were present and the correction applied.
    pub tie_corrected: bool,
    /// Every pooled value was identical; `h` is 0 and `p` is 1 by definition.
    pub all_identical: bool,
}

/// Kruskal-Wallis H test with tie correction; p from the chi-square upper
/// tail with `groups - 1` degrees of freedom. Empty groups are ignored.
pub fn kruskal_wallis(samples: &GroupSamples) -> Result<KwResult, StatsError> {
    let groups = samples.non_empty();
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = pooled.len();
    if n < 3 {
        return Err(StatsError::TooFewObservations(n));
    }
    let df = groups.len() - 1;
    let nf = n as f64;
    let ranks = ranks_with_ties(&pooled);
    let mut offset = 0;
    let mut weighted = 0.0;
    for (_, v) in &groups {
        let r: f64 = ranks[offset..offset + v.len()].iter().sum();
        weighted += r * r / v.len() as f64;
        offset += v.len();
    }
    let h_raw = 12.0 / (nf * (nf + 1.0)) * weighted - 3.0 * (nf + 1.0);
    let ties = tie_term(&pooled);
    let correction = 1.0 - ties / (nf * nf * nf - nf);
    if correction <= 0.0 {
        return Ok(KwResult {
            h: 0.0,
            df,
            p: 1.0,
            tie_corrected: true,
            all_identical: true,
        });
    }
    let h = (h_raw / correction).max(0.0);
    Ok(KwResult {
        h,
        df,
        p: chi_square_sf(h, df as u32),
        tie_corrected: ties > 0.0,
        all_identical: false,
    })
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularised upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P(a, x)
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (1.0 - sum * log_prefix.exp()).clamp(0.0, 1.0)
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (log_prefix.exp() * h).clamp(0.0, 1.0)
    }
}

/// Chi-square upper tail probability.
pub fn chi_square_sf(x: f64, df: u32) -> f64 {
    if x <= 0.0 || df == 0 {
        return 1.0;
    }
    gamma_q(df as f64 / 2.0, x / 2.0)
}

/// Two-sided standard normal tail, `P(|Z| >= z)`.
pub fn normal_two_sided(z: f64) -> f64 {
    chi_square_sf(z * z, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PostHoc {
    #[default]
    RankSum,
    Dunn,
}

impl std::str::FromStr for PostHoc {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ranksum" => Ok(PostHoc::RankSum),
            "dunn" => Ok(PostHoc::Dunn),
            other => Err(format!("unknown post-hoc test `{other}`")),
        }
    }
}

/// Significance thresholds: pairs involving the healthy control group use the
/// stricter level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerScheme {
    pub healthy_alpha: f64,
    pub default_alpha: f64,
}

impl Default for MarkerScheme {
    fn default() -> Self {
        MarkerScheme {
            healthy_alpha: 0.01,
            default_alpha: 0.05,
        }
    }
}

impl MarkerScheme {
    pub fn threshold(&self, a: GroupLabel, b: GroupLabel) -> f64 {
        if a == GroupLabel::ControlHealthy || b == GroupLabel::ControlHealthy {
            self.healthy_alpha
        } else {
            self.default_alpha
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairResult {
    pub a: GroupLabel,
    pub b: GroupLabel,
    pub p: f64,
    pub threshold: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairwiseFlags {
    pub pairs: Vec<PairResult>,
}

impl PairwiseFlags {
    /// Result for the unordered pair `{a, b}`.
    pub fn get(&self, a: GroupLabel, b: GroupLabel) -> Option<&PairResult> {
        self.pairs
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
    }

    /// Marker letters of groups that differ significantly from `group`.
    pub fn markers(&self, group: GroupLabel) -> String {
        let mut letters: Vec<char> = self
            .pairs
            .iter()
            .filter(|p| p.significant && (p.a == group || p.b == group))
            .map(|p| {
                if p.a == group {
                    p.b.marker()
                } else {
                    p.a.marker()
                }
            })
            .collect();
        letters.sort_unstable();
        letters
            .iter()
            .map(char::to_string)
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Two-sided Mann-Whitney U p-value: normal approximation with tie-corrected
/// variance and continuity correction.
pub fn mann_whitney_p(x: &[f64], y: &[f64]) -> f64 {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    if x.is_empty() || y.is_empty() {
        return 1.0;
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = ranks_with_ties(&pooled);
    let r1: f64 = ranks[..x.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((u1 - n1 * n2 / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
    normal_two_sided(z).min(1.0)
}

/// Exact two-sided Mann-Whitney p-value from the permutation distribution of
/// the rank sum (ties handled through mid-ranks).
pub fn mann_whitney_exact_p(x: &[f64], y: &[f64]) -> f64 {
    if x.is_empty() || y.is_empty() {
        return 1.0;
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    // doubled mid-ranks are integers
    let ranks: Vec<usize> = ranks_with_ties(&pooled)
        .iter()
        .map(|r| (2.0 * r).round() as usize)
        .collect();
    let k = x.len();
    let total: usize = ranks.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0.0f64; total + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in &ranks {
        for j in (1..=k).rev() {
            for s in (r..=total).rev() {
                let add = ways[j - 1][s - r];
                if add > 0.0 {
                    ways[j][s] += add;
                }
            }
        }
    }
    let observed: usize = ranks[..k].iter().sum();
    // E[sum] doubled: k (N + 1)
    let centre = (k * (pooled.len() + 1)) as i64;
    let dev = (observed as i64 - centre).abs();
    let all: f64 = ways[k].iter().sum();
    let extreme: f64 = ways[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= dev)
        .map(|(_, w)| w)
        .sum();
    (extreme / all).min(1.0)
}

/// Pairwise two-sided rank-sum tests between every pair of non-empty groups.
/// `exact` switches to the permutation p-value when both groups have at most
/// 12 members.
pub fn pairwise_ranksum(
    samples: &GroupSamples,
    scheme: &MarkerScheme,
    exact: bool,
) -> PairwiseFlags {
    let groups = samples.non_empty();
    let mut pairs = Vec::new();
    for (i, (ga, xa)) in groups.iter().enumerate() {
        for (gb, xb) in &groups[i + 1..] {
            let p = if exact && xa.len() <= 12 && xb.len() <= 12 {
                mann_whitney_exact_p(xa, xb)
            } else {
                mann_whitney_p(xa, xb)
            };
            let threshold = scheme.threshold(*ga, *gb);
            pairs.push(PairResult {
                a: *ga,
                b: *gb,
                p,
                threshold,
                significant: p < threshold,
            });
        }
    }
    PairwiseFlags { pairs }
}

/// Dunn's test on pooled mid-ranks, unadjusted.
pub fn pairwise_dunn(samples: &GroupSamples, scheme: &MarkerScheme) -> PairwiseFlags {
    let groups = samples.non_empty();
    let pooled: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let n = pooled.len() as f64;
    let ranks = ranks_with_ties(&pooled);
    let mut mean_ranks = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for (_, v) in &groups {
        mean_ranks.push(ranks[offset..offset + v.len()].iter().sum::<f64>() / v.len() as f64);
        offset += v.len();
    }
    let base = if n > 1.0 {
        n * (n + 1.0) / 12.0 - tie_term(&pooled) / (12.0 * (n - 1.0))
    } else {
        0.0
    };
    let mut pairs = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let var = base * (1.0 / groups[i].1.len() as f64 + 1.0 / groups[j].1.len() as f64);
            let p = if var > 0.0 {
                normal_two_sided((mean_ranks[i] - mean_ranks[j]).abs() / var.sqrt())
            } else {
                1.0
            };
            let threshold = scheme.threshold(groups[i].0, groups[j].0);
            pairs.push(PairResult {
                a: groups[i].0,
                b: groups[j].0,
                p,
                threshold,
                significant: p < threshold,
            });
        }
    }
    PairwiseFlags { pairs }
}

/// Linear-interpolation quantile (position `1 + (n - 1) q`) of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(median, q25, q75)`.
///
/// # Panics
///
/// On an empty slice.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    assert!(!values.is_empty(), "median of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    (
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.75),
    )
}

/// Rows of the comparison tables, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKind {
    Mean,
    Sd,
    M10,
    TimeM10,
    L5,
    TimeL5,
    Ra,
    Rmssd,
    RmssdSd,
    ImmobileMinutes,
    Min,
    Amplitude,
    Phase,
    Alpha,
    Beta,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 15] = [
        FeatureKind::Mean,
        FeatureKind::Sd,
        FeatureKind::M10,
        FeatureKind::TimeM10,
        FeatureKind::L5,
        FeatureKind::TimeL5,
        FeatureKind::Ra,
        FeatureKind::Rmssd,
        FeatureKind::RmssdSd,
        FeatureKind::ImmobileMinutes,
        FeatureKind::Min,
        FeatureKind::Amplitude,
        FeatureKind::Phase,
        FeatureKind::Alpha,
        FeatureKind::Beta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mean => "mean",
            FeatureKind::Sd => "sd",
            FeatureKind::M10 => "m10",
            FeatureKind::TimeM10 => "t_m10",
            FeatureKind::L5 => "l5",
            FeatureKind::TimeL5 => "t_l5",
            FeatureKind::Ra => "ra",
            FeatureKind::Rmssd => "rmssd",
            FeatureKind::RmssdSd => "rmssd_sd",
            FeatureKind::ImmobileMinutes => "immobile_minutes",
            FeatureKind::Min => "min",
            FeatureKind::Amplitude => "amplitude",
            FeatureKind::Phase => "phase",
            FeatureKind::Alpha => "alpha",
            FeatureKind::Beta => "beta",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FeatureKind::Mean => "Mean of activity of the whole day",
            FeatureKind::Sd => "Standard deviation of activity of the whole day",
            FeatureKind::M10 => "M10",
            FeatureKind::TimeM10 => "Time of M10",
            FeatureKind::L5 => "L5",
            FeatureKind::TimeL5 => "Time of L5",
            FeatureKind::Ra => "RA",
            FeatureKind::Rmssd => "RMSSD",
            FeatureKind::RmssdSd => "RMSSD/SD",
            FeatureKind::ImmobileMinutes => "Number of immobile minutes",
            FeatureKind::Min => "Min",
            FeatureKind::Amplitude => "Amplitude",
            FeatureKind::Phase => "Phase",
            FeatureKind::Alpha => "Alpha",
            FeatureKind::Beta => "Beta",
        }
    }

    pub fn is_circadian(self) -> bool {
        self >= FeatureKind::Min
    }
}

/// Feature values of one subject; absent keys are missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectValues {
    pub subject_id: String,
    pub group: GroupLabel,
    pub values: BTreeMap<FeatureKind, f64>,
}

impl SubjectValues {
    pub fn new(subject_id: impl Into<String>, group: GroupLabel) -> Self {
        SubjectValues {
            subject_id: subject_id.into(),
            group,
            values: BTreeMap::new(),
        }
    }

    fn set(&mut self, kind: FeatureKind, value: Option<f64>) {
        match value.filter(|v| v.is_finite()) {
            Some(v) => {
                self.values.insert(kind, v);
            }
            None => {
                self.values.remove(&kind);
            }
        }
    }

    pub fn with_features(mut self, f: &ActivityFeatures) -> Self {
        self.set(FeatureKind::Mean, Some(f.mean));
        self.set(FeatureKind::Sd, Some(f.sd));
        self.set(FeatureKind::M10, Some(f.m10));
        self.set(FeatureKind::TimeM10, Some(f.t_m10));
        self.set(FeatureKind::L5, Some(f.l5));
        self.set(FeatureKind::TimeL5, Some(f.t_l5));
        self.set(FeatureKind::Ra, f.ra);
        self.set(FeatureKind::Rmssd, Some(f.rmssd));
        self.set(FeatureKind::RmssdSd, f.rmssd_sd);
        self.set(FeatureKind::ImmobileMinutes, Some(f.immobile_minutes));
        self
    }

    pub fn with_cosinor(mut self, fit: &SigmoidalCosinorFit) -> Self {
        let p = &fit.params;
        self.set(FeatureKind::Min, Some(p.min));
        self.set(FeatureKind::Amplitude, Some(p.amplitude));
        self.set(FeatureKind::Phase, Some(p.phase));
        self.set(FeatureKind::Alpha, Some(p.alpha));
        self.set(FeatureKind::Beta, Some(p.beta));
        self
    }

    pub fn with_value(mut self, kind: FeatureKind, value: Option<f64>) -> Self {
        self.set(kind, value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: GroupLabel,
    pub n: usize,
    /// `(median, q25, q75)`, absent when the group has no values.
    pub summary: Option<(f64, f64, f64)>,
    pub markers: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupComparisonRow {
    pub feature: FeatureKind,
    pub groups: Vec<GroupSummary>,
    /// Absent when fewer than two groups or three values are available.
    pub kw: Option<KwResult>,
    pub pairwise: PairwiseFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CompareOptions {
    pub posthoc: PostHoc,
    pub exact: bool,
    pub scheme: MarkerScheme,
}

/// Builds one comparison row per feature kind present among the subjects,
/// in table order. Groups appear in label order.
pub fn comparison_rows(
    subjects: &[SubjectValues],
    opts: &CompareOptions,
) -> Result<Vec<GroupComparisonRow>, StatsError> {
    let mut present: Vec<GroupLabel> = subjects.iter().map(|s| s.group).collect();
    present.sort();
    present.dedup();
    if present.len() < 2 {
        return Err(StatsError::TooFewGroups(present.len()));
    }

    let mut rows = Vec::new();
    for kind in FeatureKind::ALL {
        if !subjects.iter().any(|s| s.values.contains_key(&kind)) {
            continue;
        }
        let samples = GroupSamples::new(
            present
                .iter()
                .map(|&g| {
                    let vals = subjects
                        .iter()
                        .filter(|s| s.group == g)
                        .filter_map(|s| s.values.get(&kind).copied())
                        .collect();
                    (g, vals)
                })
                .collect(),
        );
        let kw = kruskal_wallis(&samples).ok();
        let pairwise = match opts.posthoc {
            PostHoc::RankSum => pairwise_ranksum(&samples, &opts.scheme, opts.exact),
            PostHoc::Dunn => pairwise_dunn(&samples, &opts.scheme),
        };
        let groups = samples
            .groups
            .iter()
            .map(|(g, v)| GroupSummary {
                group: *g,
                n: v.len(),
                summary: (!v.is_empty()).then(|| median_iqr(v)),
                markers: pairwise.markers(*g),
            })
            .collect();
        rows.push(GroupComparisonRow {
            feature: kind,
            groups,
            kw,
            pairwise,
        });
    }
    Ok(rows)
}

/// Joins per-subject features and fits with their manifest groups and builds
/// the comparison rows.
pub fn feature_table(
    features: &[(String, ActivityFeatures)],
    cosinor: &[(String, SigmoidalCosinorFit)],
    manifest: &CohortManifest,
    opts: &CompareOptions,
) -> Result<Vec<GroupComparisonRow>, StatsError> {
    let mut by_id: BTreeMap<&str, SubjectValues> = BTreeMap::new();
    let group_of = |id: &str| {
        manifest
            .entries
            .iter()
            .find(|e| e.subject_id == id)
            .map(|e| e.group)
            .ok_or_else(|| StatsError::UnknownSubject(id.to_string()))
    };
    for (id, f) in features {
        let group = group_of(id)?;
        let entry = by_id
            .remove(id.as_str())
            .unwrap_or_else(|| SubjectValues::new(id.clone(), group));
        by_id.insert(id, entry.with_features(f));
    }
    for (id, fit) in cosinor {
        let group = group_of(id)?;
        let entry = by_id
            .remove(id.as_str())
            .unwrap_or_else(|| SubjectValues::new(id.clone(), group));
        by_id.insert(id, entry.with_cosinor(fit));
    }
    let subjects: Vec<SubjectValues> = by_id.into_values().collect();
    comparison_rows(&subjects, opts)
}

/// Long-format CSV: one line per feature and group.
pub fn rows_to_csv(rows: &[GroupComparisonRow]) -> String {
    let mut out = String::from("feature,group,median,q25,q75,kw_h,kw_p,markers\n");
    for row in rows {
        let (h, p) = row.kw.map_or((None, None), |kw| (Some(kw.h), Some(kw.p)));
        for g in &row.groups {
            let (m, lo, hi) = g.summary.map_or((None, None, None), |(m, lo, hi)| {
                (Some(m), Some(lo), Some(hi))
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                row.feature.name(),
                g.group,
                fmt6(m),
                fmt6(lo),
                fmt6(hi),
                fmt6(h),
                fmt6(p),
                g.markers
            );
        }
    }
    out
}

fn p_cell(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Aligned plain-text table: `median (q25, q75) markers` per group and the
/// Kruskal-Wallis p in the last column.
pub fn rows_to_text(rows: &[GroupComparisonRow]) -> String {
    let Some(first) = rows.first() else {
        return String::new();
    };
    let mut header = vec!["Variable".to_string()];
    header.extend(
        first
            .groups
            .iter()
            .map(|g| format!("{}, N={}", g.group.display_name(), g.n)),
    );
    header.push("p".to_string());

    let mut table = vec![header];
    for row in rows {
        let mut line = vec![row.feature.label().to_string()];
        for g in &row.groups {
            let cell = match g.summary {
                Some((m, lo, hi)) => {
                    format!("{} ({}, {})", fmt_sig(m, 3), fmt_sig(lo, 3), fmt_sig(hi, 3))
                }
                None => "NA".to_string(),
            };
            if g.markers.is_empty() {
                line.push(cell);
            } else {
                line.push(format!("{cell} {}", g.markers));
            }
        }
        line.push(row.kw.map_or_else(|| "NA".to_string(), |kw| p_cell(kw.p)));
        table.push(line);
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            table
                .iter()
                .map(|r| r.get(c).map_or(0, |s| s.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (cols - 1)));
            out.push('\n');
        }
    }
    out
}
