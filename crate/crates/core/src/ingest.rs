//! Epoch CSV and cohort manifest parsing, plus synthetic series generation.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cosinor::SigmoidalParams;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("unrecognised header `{found}`")]
    BadHeader { found: String },
    #[error("line {line}: timestamp does not increase")]
    NonMonotonicTime { line: u64 },
    #[error("line {line}: gap of {found} s differs from epoch of {expected} s")]
    IrregularEpoch {
        line: u64,
        expected: i64,
        found: i64,
    },
    #[error("line {line}: negative activity count")]
    NegativeCount { line: u64 },
    #[error("epoch of {seconds} s neither divides nor is a multiple of 60 s")]
    UnsupportedEpoch { seconds: i64 },
    #[error("epoch of {seconds} s cannot be aggregated to whole minutes")]
    IncompatibleEpoch { seconds: u32 },
    #[error("subject `{0}` appears more than once")]
    DuplicateSubject(String),
    #[error("line {line}: unknown group `{group}`")]
    UnknownGroup { line: u64, group: String },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

/// Subject group. Declaration order is the column order of comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupLabel {
    ControlIcu,
    Cci,
    Rr,
    ControlHealthy,
}

impl GroupLabel {
    pub const ALL: [GroupLabel; 4] = [
        GroupLabel::ControlIcu,
        GroupLabel::Cci,
        GroupLabel::Rr,
        GroupLabel::ControlHealthy,
    ];

    /// Machine name used in manifests and CSV outputs.
    pub fn as_str(self) -> &'static str {
        match self {
            GroupLabel::ControlIcu => "control_icu",
            GroupLabel::Cci => "cci",
            GroupLabel::Rr => "rr",
            GroupLabel::ControlHealthy => "control_healthy",
        }
    }

    /// Human-readable column title.
    pub fn display_name(self) -> &'static str {
        match self {
            GroupLabel::ControlIcu => "Control-ICU",
            GroupLabel::Cci => "CCI",
            GroupLabel::Rr => "RR",
            GroupLabel::ControlHealthy => "Control-healthy",
        }
    }

    /// Letter used when another group is marked as significantly different
    /// from this one.
    pub fn marker(self) -> char {
        match self {
            GroupLabel::ControlHealthy => 'b',
            GroupLabel::Cci => 'c',
            GroupLabel::Rr => 'd',
            GroupLabel::ControlIcu => 'e',
        }
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        GroupLabel::ALL
            .into_iter()
            .find(|g| g.as_str() == norm)
            .ok_or_else(|| s.to_string())
    }
}

/// Raw per-epoch triaxial counts for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TriaxialSeries {
    pub subject_id: String,
    pub start_time: NaiveDateTime,
    /// Seconds per sample.
    pub epoch_length: u32,
    pub samples: Vec<[f64; 3]>,
}

impl TriaxialSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn epoch_supported(seconds: i64) -> bool {
    seconds > 0 && (60 % seconds == 0 || seconds % 60 == 0)
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(1970, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch date")
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

fn parse_count(field: &str, line: u64) -> Result<f64, IngestError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| IngestError::MalformedRow {
            line,
            reason: format!("`{}` is not a number", field.trim()),
        })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            reason: "non-finite count".into(),
        });
    }
    if v < 0.0 {
        return Err(IngestError::NegativeCount { line });
    }
    Ok(v)
}

/// Parses an epoch CSV (`timestamp,axis1,axis2,axis3` or `timestamp,vm`).
///
/// The epoch length is inferred from the first two timestamps and every later
/// gap must match it. A file with a single data row gets a 60 s epoch; an
/// empty file yields an empty series starting at 1970-01-01T00:00:00.
pub fn parse_triaxial_csv(content: &[u8], subject_id: &str) -> Result<TriaxialSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(content);

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let single_column = match header
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["timestamp", "axis1", "axis2", "axis3"] => false,
        ["timestamp", "vm"] => true,
        _ => {
            return Err(IngestError::BadHeader {
                found: header.join(","),
            })
        }
    };
    let width = if single_column { 2 } else { 4 };

    let mut times: Vec<NaiveDateTime> = Vec::new();
    let mut samples = Vec::new();
    let mut epoch: Option<i64> = None;

    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected {width} fields, found {}", record.len()),
            });
        }
        let ts = parse_timestamp(&record[0]).ok_or_else(|| IngestError::MalformedRow {
            line,
            reason: format!("bad timestamp `{}`", &record[0]),
        })?;
        let sample = if single_column {
            [parse_count(&record[1], line)?, 0.0, 0.0]
        } else {
            [
                parse_count(&record[1], line)?,
                parse_count(&record[2], line)?,
                parse_count(&record[3], line)?,
            ]
        };

        if let Some(&prev) = times.last() {
            let gap = (ts - prev).num_seconds();
            if gap <= 0 {
                return Err(IngestError::NonMonotonicTime { line });
            }
            match epoch {
                None => {
                    if !epoch_supported(gap) {
                        return Err(IngestError::UnsupportedEpoch { seconds: gap });
                    }
                    epoch = Some(gap);
                }
                Some(e) if e != gap => {
                    return Err(IngestError::IrregularEpoch {
                        line,
                        expected: e,
                        found: gap,
                    })
                }
                Some(_) => {}
            }
        }
        times.push(ts);
        samples.push(sample);
    }

    Ok(TriaxialSeries {
        subject_id: subject_id.to_string(),
        start_time: times.first().copied().unwrap_or_else(default_start),
        epoch_length: epoch.unwrap_or(60) as u32,
        samples,
    })
}

/// Writes a series in the four-column epoch CSV format.
pub fn write_triaxial_csv(series: &TriaxialSeries) -> String {
    let mut out = String::with_capacity(32 * series.len() + 32);
    out.push_str("timestamp,axis1,axis2,axis3\n");
    let step = TimeDelta::seconds(series.epoch_length as i64);
    let mut ts = series.start_time;
    for [x, y, z] in &series.samples {
        out.push_str(&format!("{},{x},{y},{z}\n", ts.format(TIMESTAMP_FORMAT)));
        ts += step;
    }
    out
}

/// Sums sub-minute epochs into per-minute counts, dropping a trailing partial
/// minute.
pub fn aggregate_to_minutes(series: &TriaxialSeries) -> Result<TriaxialSeries, IngestError> {
    let epoch = series.epoch_length;
    if epoch == 0 || epoch > 60 || 60 % epoch != 0 {
        return Err(IngestError::IncompatibleEpoch { seconds: epoch });
    }
    if epoch == 60 {
        return Ok(series.clone());
    }
    let per_minute = (60 / epoch) as usize;
    let samples = series
        .samples
        .chunks_exact(per_minute)
        .map(|chunk| {
            chunk.iter().fold([0.0; 3], |acc, s| {
                [acc[0] + s[0], acc[1] + s[1], acc[2] + s[2]]
            })
        })
        .collect();
    Ok(TriaxialSeries {
        subject_id: series.subject_id.clone(),
        start_time: series.start_time,
        epoch_length: 60,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortEntry {
    pub subject_id: String,
    pub group: GroupLabel,
    pub source_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub entries: Vec<CohortEntry>,
}

/// Parses a `subject_id,group,path` manifest.
pub fn load_manifest(content: &[u8]) -> Result<CohortManifest, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(content);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    if header != ["subject_id", "group", "path"] {
        return Err(IngestError::BadHeader {
            found: header.join(","),
        });
    }

    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let subject_id = record[0].to_string();
        if subject_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                reason: "empty subject_id".into(),
            });
        }
        let group = record[1]
            .parse::<GroupLabel>()
            .map_err(|group| IngestError::UnknownGroup { line, group })?;
        if !seen.insert(subject_id.clone()) {
            return Err(IngestError::DuplicateSubject(subject_id));
        }
        entries.push(CohortEntry {
            subject_id,
            group,
            source_path: PathBuf::from(&record[2]),
        });
    }
    Ok(CohortManifest { entries })
}

/// Parameters for sampling minute counts from the sigmoidal cosine model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub min: f64,
    pub amplitude: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Peak time in hours.
    pub phase: f64,
    pub noise_sd: f64,
    pub days: u32,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |msg: &str| Err(IngestError::InvalidSpec(msg.to_string()));
        if !self.min.is_finite() {
            return bad("min must be finite");
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return bad("amplitude must be >= 0");
        }
        if !(self.alpha > -1.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (-1, 1)");
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta must be > 0");
        }
        if !(self.phase >= 0.0 && self.phase < 24.0) {
            return bad("phase must lie in [0, 24)");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd must be >= 0");
        }
        if self.days == 0 {
            return bad("days must be >= 1");
        }
        Ok(())
    }

    pub fn params(&self) -> SigmoidalParams {
        SigmoidalParams {
            min: self.min,
            amplitude: self.amplitude,
            alpha: self.alpha,
            beta: self.beta,
            phase: self.phase,
        }
    }
}

/// Midnight at which synthetic series start.
pub fn synthetic_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2016, 5, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

/// Samples one minute-epoch series from the model, counts on the x axis.
///
/// Minute `i` is evaluated at its midpoint, `(i + 0.5) / 60` hours after the
/// start midnight. Noise is Gaussian and the result is clamped at zero.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<TriaxialSeries, IngestError> {
    spec.validate()?;
    let params = spec.params();
    let n = spec.days as usize * crate::MINUTES_PER_DAY;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sd > 0.0 {
        Some(Normal::new(0.0, spec.noise_sd).map_err(|e| IngestError::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    let samples = (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / 60.0;
            let mut v = params.value(t);
            if let Some(dist) = &noise {
                v += dist.sample(&mut rng);
            }
            [v.max(0.0), 0.0, 0.0]
        })
        .collect();
    Ok(TriaxialSeries {
        subject_id: "synthetic".to_string(),
        start_time: synthetic_start(),
        epoch_length: 60,
        samples,
    })
}

/// One row of a synthetic cohort specification.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSubject {
    pub subject_id: String,
    pub group: GroupLabel,
    pub spec: SynthSpec,
}

/// Parses a synthetic cohort CSV with columns `subject_id, group, min,
/// amplitude, alpha, beta, phase, noise_sd, days` and an optional `seed`.
/// Rows without a seed use `base_seed + row index`.
pub fn load_synth_specs(content: &[u8], base_seed: u64) -> Result<Vec<SynthSubject>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let required = [
        "subject_id",
        "group",
        "min",
        "amplitude",
        "alpha",
        "beta",
        "phase",
        "noise_sd",
        "days",
    ];
    let mut cols = Vec::with_capacity(required.len());
    for name in required {
        match header.iter().position(|h| h == name) {
            Some(c) => cols.push(c),
            None => {
                return Err(IngestError::BadHeader {
                    found: header.join(","),
                })
            }
        }
    }
    let seed_col = header.iter().position(|h| h == "seed");

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let malformed = |reason: String| IngestError::MalformedRow { line, reason };
        let num = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| malformed(format!("{} `{}` is not a number", required[k], field(k))))
        };
        let subject_id = field(0).to_string();
        if subject_id.is_empty() {
            return Err(malformed("empty subject_id".into()));
        }
        if !seen.insert(subject_id.clone()) {
            return Err(IngestError::DuplicateSubject(subject_id));
        }
        let group = field(1)
            .parse::<GroupLabel>()
            .map_err(|group| IngestError::UnknownGroup { line, group })?;
        let days = field(8)
            .parse::<u32>()
            .map_err(|_| malformed(format!("days `{}` is not a whole number", field(8))))?;
        let seed = match seed_col.map(|c| record.get(c).unwrap_or("")) {
            Some(s) if !s.is_empty() => s
                .parse::<u64>()
                .map_err(|_| malformed(format!("seed `{s}` is not a whole number")))?,
            _ => base_seed.wrapping_add(index as u64),
        };
        let spec = SynthSpec {
            min: num(2)?,
            amplitude: num(3)?,
            alpha: num(4)?,
            beta: num(5)?,
            phase: num(6)?,
            noise_sd: num(7)?,
            days,
            seed,
        };
        spec.validate()?;
        out.push(SynthSubject {
            subject_id,
            group,
            spec,
        });
    }
    Ok(out)
}
