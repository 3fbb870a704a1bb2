use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use actirhythm::cosinor::{FitConfig, Transform};
use actirhythm::features::FeatureConfig;
use actirhythm::ingest::CohortManifest;
use actirhythm::ingest::{generate_synthetic, load_manifest, load_synth_specs, write_triaxial_csv};
use actirhythm::report::{self, CohortResult, Outputs, PipelineConfig, ReportError};
use actirhythm::stats::{comparison_rows, CompareOptions, PostHoc};

#[derive(Parser)]
#[command(
    name = "actirhythm",
    version,
    about = "Actigraphy features, circadian fits and group comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report recorded days, non-wear bouts and valid days per subject
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        screen: ScreenArgs,
    },
    /// Compute statistical activity features
    Features {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        screen: ScreenArgs,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Fit the sigmoidal cosine model
    Cosinor {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        screen: ScreenArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Compare groups from feature and cosinor tables
    Compare {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        cosinor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        compare: CompareArgs,
    },
    /// Group average curves and fitted-curve overlays
    Curves {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        screen: ScreenArgs,
        #[command(flatten)]
        curves: CurveArgs,
    },
    /// Generate a synthetic cohort from a parameter table
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base seed for rows without an explicit seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Full pipeline
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        screen: ScreenArgs,
        #[command(flatten)]
        features: FeatureArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        compare: CompareArgs,
        #[command(flatten)]
        curves: CurveArgs,
    },
}

#[derive(Args)]
struct ScreenArgs {
    /// Number of valid days to analyse
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    days: u32,
    /// Zero runs longer than this many minutes are non-wear
    #[arg(long, default_value_t = 60)]
    nonwear_min: usize,
    /// Nonzero minutes allowed inside a non-wear bout
    #[arg(long, default_value_t = 0)]
    nonwear_tolerance: usize,
}

#[derive(Args)]
struct FeatureArgs {
    /// Minutes at or below this count are immobile
    #[arg(long, default_value_t = 0.0)]
    immobile_threshold: f64,
    /// Average M10/L5 over days instead of using the pooled profile
    #[arg(long)]
    per_day: bool,
    /// Relative amplitude from raw window sums
    #[arg(long)]
    ra_raw_sums: bool,
    /// Use the N-1 divisor for SD
    #[arg(long)]
    sample_sd: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value = "log1p", value_parser = ["log1p", "raw"])]
    transform: String,
    /// Number of phase-rotated starting points
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    multistart: u32,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, default_value = "ranksum", value_parser = ["ranksum", "dunn"])]
    posthoc: String,
    /// Exact rank-sum p-values when both groups have at most 12 values
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct CurveArgs {
    /// Centered moving-average window for group curves, in minutes
    #[arg(long, default_value_t = 0)]
    smooth: usize,
}

enum Failure {
    Data(String),
    Internal(String),
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Io { .. } => Failure::Internal(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome = Result<ExitCode, Failure>;

impl ScreenArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.days = self.days as usize;
        cfg.nonwear_min = self.nonwear_min;
        cfg.nonwear_tolerance = self.nonwear_tolerance;
    }
}

impl FeatureArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        cfg.features = FeatureConfig {
            immobile_threshold: self.immobile_threshold,
            ra_raw_sums: self.ra_raw_sums,
            sample_sd: self.sample_sd,
            per_day: self.per_day,
        };
    }
}

impl FitArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<(), Failure> {
        let transform: Transform = self.transform.parse().map_err(Failure::Data)?;
        cfg.fit = FitConfig {
            transform,
            multistart: self.multistart as usize,
            ..FitConfig::default()
        };
        Ok(())
    }
}

impl CompareArgs {
    fn options(&self) -> Result<CompareOptions, Failure> {
        let posthoc: PostHoc = self.posthoc.parse().map_err(Failure::Data)?;
        Ok(CompareOptions {
            posthoc,
            exact: self.exact,
            ..CompareOptions::default()
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_manifest(path: &Path) -> Result<(CohortManifest, PathBuf), Failure> {
    let manifest = load_manifest(&read_file(path)?)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

fn analyze(manifest: &Path, cfg: &PipelineConfig) -> Result<CohortResult, Failure> {
    let (manifest, base) = read_manifest(manifest)?;
    let result = report::run_cohort(&manifest, &base, cfg);
    for s in &result.skipped {
        eprintln!("skipped {}: {}", s.subject_id, s.reason);
    }
    if result.subjects.is_empty() {
        return Err(Failure::Data("no subject passed screening".into()));
    }
    Ok(result)
}

fn finish(out: &Outputs, dir: &Path) -> Outcome {
    out.write_to(dir)?;
    Ok(ExitCode::SUCCESS)
}

fn run(command: Command) -> Outcome {
    let mut cfg = PipelineConfig::default();
    match command {
        Command::Validate { manifest, screen } => {
            screen.apply(&mut cfg);
            let (manifest, base) = read_manifest(&manifest)?;
            let rows = report::validate_cohort(&manifest, &base, &cfg);
            print!("{}", report::validity_to_csv(&rows, cfg.days));
            let all_valid = rows
                .iter()
                .all(|r| r.as_ref().is_ok_and(|v| v.valid_days >= cfg.days));
            Ok(if all_valid {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Features {
            manifest,
            out,
            screen,
            features,
        } => {
            screen.apply(&mut cfg);
            features.apply(&mut cfg);
            let result = analyze(&manifest, &cfg)?;
            let mut files = Outputs::default();
            files.push("features.csv", report::features_to_csv(&result));
            files.push("skipped.csv", report::skips_to_csv(&result.skipped));
            finish(&files, &out)
        }
        Command::Cosinor {
            manifest,
            out,
            screen,
            fit,
        } => {
            screen.apply(&mut cfg);
            fit.apply(&mut cfg)?;
            let result = analyze(&manifest, &cfg)?;
            let mut files = Outputs::default();
            files.push("cosinor.csv", report::cosinor_to_csv(&result));
            files.push("skipped.csv", report::skips_to_csv(&result.skipped));
            finish(&files, &out)
        }
        Command::Compare {
            features,
            cosinor,
            out,
            compare,
        } => {
            let opts = compare.options()?;
            let mut values = BTreeMap::new();
            for path in [&features, &cosinor] {
                report::read_value_table(
                    &read_file(path)?,
                    &path.display().to_string(),
                    &mut values,
                )?;
            }
            let subjects: Vec<_> = values.into_values().collect();
            let rows =
                comparison_rows(&subjects, &opts).map_err(|e| Failure::Data(e.to_string()))?;
            let mut files = Outputs::default();
            report::comparison_outputs(&rows, &mut files);
            finish(&files, &out)
        }
        Command::Curves {
            manifest,
            out,
            screen,
            curves,
        } => {
            screen.apply(&mut cfg);
            cfg.smooth = curves.smooth;
            let result = analyze(&manifest, &cfg)?;
            let mut files = Outputs::default();
            report::curve_outputs(&result, &cfg, &mut files)?;
            files.push("skipped.csv", report::skips_to_csv(&result.skipped));
            finish(&files, &out)
        }
        Command::Synth { spec, out, seed } => {
            let rows = load_synth_specs(&read_file(&spec)?, seed)
                .map_err(|e| Failure::Data(format!("{}: {e}", spec.display())))?;
            let mut files = Outputs::default();
            let mut manifest = String::from("subject_id,group,path\n");
            for row in &rows {
                let mut series =
                    generate_synthetic(&row.spec).map_err(|e| Failure::Data(e.to_string()))?;
                series.subject_id = row.subject_id.clone();
                let file = format!("{}.csv", file_stem(&row.subject_id));
                manifest.push_str(&format!("{},{},{file}\n", row.subject_id, row.group));
                files.push(&file, write_triaxial_csv(&series));
            }
            files.push("manifest.csv", manifest);
            finish(&files, &out)
        }
        Command::Run {
            manifest,
            out,
            screen,
            features,
            fit,
            compare,
            curves,
        } => {
            screen.apply(&mut cfg);
            features.apply(&mut cfg);
            fit.apply(&mut cfg)?;
            cfg.compare = compare.options()?;
            cfg.smooth = curves.smooth;
            let result = analyze(&manifest, &cfg)?;
            let files = report::pipeline_outputs(&result, &cfg)?;
            finish(&files, &out)
        }
    }
}

fn file_stem(subject_id: &str) -> String {
    subject_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
