//! Module invariants as randomized property checks. Each check runs a
//! deterministic proptest runner and reports the first counterexample.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Debug;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};
use rayon::prelude::*;

use actirhythm::cosinor::{
    fit_linear_cosinor_points, fit_sigmoidal_points, FitConfig, SigmoidalParams,
};
use actirhythm::features::{
    compute_features, minute_profile, window_extreme, FeatureConfig, WindowMode,
};
use actirhythm::ingest::{
    aggregate_to_minutes, generate_synthetic, parse_triaxial_csv, write_triaxial_csv, GroupLabel,
    SynthSpec, TriaxialSeries,
};
use actirhythm::nls::{levenberg_marquardt, numeric_jacobian, FnProblem, NlsOptions};
use actirhythm::preprocess::{
    detect_nonwear_bouts, filter_invalid_days, select_analysis_window, to_activity_series,
    ActivitySeries,
};
use actirhythm::report::{
    group_average_curve, pipeline_outputs, run_cohort_series, PipelineConfig,
};
use actirhythm::stats::{
    chi_square_sf, kruskal_wallis, mann_whitney_exact_p, mann_whitney_p, pairwise_dunn,
    pairwise_ranksum, ranks_with_ties, GroupSamples, MarkerScheme,
};

use super::oracles;

pub type Check = Result<(), String>;
pub type NamedCheck = (&'static str, fn() -> Check);

/// Cases for cheap properties.
pub const CASES: u32 = 100;
/// Cases for properties that run the whole cohort pipeline.
pub const PIPELINE_CASES: u32 = 10;

fn run<S>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check
where
    S: Strategy,
    S::Value: Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

fn midnight() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2016, 5, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(24.0);
    d.min(24.0 - d)
}

/// Minute values built from alternating zero runs and short active bursts.
fn activity_values(max_len: usize, zero_run: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(
        (any::<bool>(), 1usize..=zero_run, 1u32..200),
        1..max_len.max(2),
    )
    .prop_map(move |segments| {
        let mut out = Vec::new();
        for (zero, len, level) in segments {
            if zero {
                out.extend(std::iter::repeat_n(0.0, len));
            } else {
                out.extend((0..len % 7 + 1).map(|k| f64::from(level + k as u32)));
            }
            if out.len() >= max_len {
                break;
            }
        }
        out.truncate(max_len);
        out
    })
}

pub fn all() -> Vec<NamedCheck> {
    vec![
        (
            "ingest: parse of serialized series is identity",
            parse_serialize_identity,
        ),
        (
            "ingest: minute aggregation preserves totals",
            aggregation_preserves_totals,
        ),
        (
            "ingest: synthetic generation is reproducible and exact",
            synthetic_reproducible,
        ),
        (
            "preprocess: non-wear bouts match brute force",
            bouts_match_brute_force,
        ),
        (
            "preprocess: invalid-day filter is idempotent",
            filter_idempotent,
        ),
        (
            "preprocess: analysis window keeps only valid days",
            window_selection,
        ),
        ("preprocess: magnitude ignores axis order", axis_permutation),
        (
            "features: window extreme matches exhaustive scan",
            window_matches_scan,
        ),
        ("features: M10 follows profile rotation", m10_rotation),
        (
            "features: RA and RMSSD/SD are scale invariant",
            scale_invariance,
        ),
        (
            "features: M10 mean >= profile mean >= L5 mean",
            window_ordering,
        ),
        (
            "features: deterministic and order independent",
            features_order_independent,
        ),
        ("nls: accepted RSS never increases", lm_monotone),
        ("nls: residual scaling scales RSS only", lm_residual_scaling),
        (
            "nls: jacobian exact on quadratics, second order otherwise",
            jacobian_accuracy,
        ),
        (
            "cosinor: model stays within [min, min + amplitude]",
            model_bounds,
        ),
        ("cosinor: model is 24 h periodic", model_periodic),
        ("cosinor: time shift moves only the phase", fit_time_shift),
        ("cosinor: scaling data scales min and amplitude", fit_affine),
        (
            "cosinor: linear stage is exact on pure cosines",
            linear_exact,
        ),
        (
            "cosinor: refinement never worsens the seed",
            refinement_improves,
        ),
        ("stats: ranks sum to n(n+1)/2", rank_sum),
        (
            "stats: Kruskal-Wallis matches direct formula",
            kw_matches_formula,
        ),
        (
            "stats: two-group H equals squared rank-sum z",
            kw_two_group_z,
        ),
        (
            "stats: H invariant to relabeling and monotone maps",
            kw_invariances,
        ),
        (
            "stats: chi-square tail is monotone with sf(0) = 1",
            chi_square_monotone,
        ),
        (
            "stats: pairwise p-values symmetric in [0, 1]",
            pairwise_symmetric,
        ),
        (
            "report: group curves ignore subject order",
            curves_permutation,
        ),
        (
            "report: pipeline output is deterministic",
            pipeline_deterministic,
        ),
        (
            "report: skipped subjects do not affect outputs",
            skip_independence,
        ),
    ]
}

// ---------------------------------------------------------------------------
// ingest

fn parse_serialize_identity() -> Check {
    let epochs = prop::sample::select(vec![1u32, 2, 5, 10, 15, 30, 60, 120, 300]);
    let samples = vec(prop::array::uniform3(0.0f64..1e5), 2..200);
    run(
        CASES,
        (epochs, 0i64..1_000_000_000, samples),
        |(epoch, offset, samples)| {
            let series = TriaxialSeries {
                subject_id: "s1".into(),
                start_time: midnight() + TimeDelta::seconds(offset),
                epoch_length: epoch,
                samples,
            };
            let parsed = parse_triaxial_csv(write_triaxial_csv(&series).as_bytes(), "s1")
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(parsed, series);
            Ok(())
        },
    )
}

fn aggregation_preserves_totals() -> Check {
    let epochs = prop::sample::select(vec![1u32, 2, 3, 4, 5, 6, 10, 12, 15, 20, 30, 60]);
    let samples = vec(prop::array::uniform3(0u32..1000), 0..400);
    run(CASES, (epochs, samples), |(epoch, samples)| {
        let series = TriaxialSeries {
            subject_id: "s".into(),
            start_time: midnight(),
            epoch_length: epoch,
            samples: samples.iter().map(|s| s.map(f64::from)).collect(),
        };
        let per = (60 / epoch) as usize;
        let kept = samples.len() / per * per;
        let minutes =
            aggregate_to_minutes(&series).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(minutes.samples.len(), samples.len() / per);
        for axis in 0..3 {
            let before: f64 = series.samples[..kept].iter().map(|s| s[axis]).sum();
            let after: f64 = minutes.samples.iter().map(|s| s[axis]).sum();
            prop_assert_eq!(before, after);
        }
        Ok(())
    })
}

fn synth_spec() -> impl Strategy<Value = SynthSpec> {
    (
        0.0f64..10.0,
        0.0f64..10.0,
        -0.9f64..0.9,
        0.1f64..50.0,
        0.0f64..24.0,
        0.0f64..5.0,
        1u32..3,
        any::<u64>(),
    )
        .prop_map(
            |(min, amplitude, alpha, beta, phase, noise_sd, days, seed)| SynthSpec {
                min,
                amplitude,
                alpha,
                beta,
                phase,
                noise_sd,
                days,
                seed,
            },
        )
}

fn synthetic_reproducible() -> Check {
    run(CASES, synth_spec(), |spec| {
        let a = generate_synthetic(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = generate_synthetic(&spec).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&a, &b);
        let quiet = SynthSpec {
            noise_sd: 0.0,
            ..spec
        };
        let c = generate_synthetic(&quiet).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let params = quiet.params();
        for (i, s) in c.samples.iter().enumerate() {
            let expected = params.value((i as f64 + 0.5) / 60.0);
            prop_assert!(
                close(s[0], expected, 1e-12),
                "minute {}: {} vs {}",
                i,
                s[0],
                expected
            );
            prop_assert!(s[1] == 0.0 && s[2] == 0.0);
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// preprocess

fn series_from(values: Vec<f64>, offset_minutes: i64) -> ActivitySeries {
    ActivitySeries::new("s", midnight() + TimeDelta::minutes(offset_minutes), values)
}

fn bouts_match_brute_force() -> Check {
    run(
        CASES,
        (activity_values(600, 90), 0i64..1440, 0usize..70),
        |(values, offset, min_bout)| {
            let n = values.len();
            let series = series_from(values.clone(), offset);
            let bouts = detect_nonwear_bouts(&series, min_bout);

            // zeros[i] = number of zero minutes before i
            let mut zeros = vec![0usize; n + 1];
            for i in 0..n {
                zeros[i + 1] = zeros[i] + usize::from(values[i] == 0.0);
            }
            let mut expected = Vec::new();
            for start in 0..n {
                for len in 1..=n - start {
                    let end = start + len;
                    let all_zero = zeros[end] - zeros[start] == len;
                    let maximal = (start == 0 || values[start - 1] != 0.0)
                        && (end == n || values[end] != 0.0);
                    if all_zero && maximal && len > min_bout {
                        expected.push((start, len));
                    }
                }
            }
            let got: Vec<(usize, usize)> =
                bouts.iter().map(|b| (b.start_index, b.length)).collect();
            prop_assert_eq!(&got, &expected);
            for pair in got.windows(2) {
                prop_assert!(pair[0].0 + pair[0].1 < pair[1].0);
            }
            Ok(())
        },
    )
}

fn filter_idempotent() -> Check {
    run(
        CASES,
        (activity_values(5000, 200), 0i64..1440, 0usize..120),
        |(values, offset, min_bout)| {
            let series = series_from(values, offset);
            let bouts = detect_nonwear_bouts(&series, min_bout);
            let once = filter_invalid_days(&series, &bouts);
            let twice = filter_invalid_days(&once, &bouts);
            prop_assert_eq!(once, twice);
            Ok(())
        },
    )
}

fn window_selection() -> Check {
    let values = vec((any::<bool>(), 1usize..150, 1u32..300), 1..400).prop_map(|segments| {
        let mut out = Vec::new();
        for (zero, len, level) in segments {
            let len = if zero { len } else { len * 20 };
            out.extend((0..len).map(|k| {
                if zero {
                    0.0
                } else {
                    f64::from(level) + (k % 5) as f64
                }
            }));
        }
        out.truncate(8 * 1440);
        out
    });
    run(
        CASES,
        (values, 0i64..1440, 1usize..5),
        |(values, offset, n_days)| {
            let series = series_from(values, offset);
            let filtered = filter_invalid_days(&series, &detect_nonwear_bouts(&series, 60));
            let start = offset as usize;
            let n = series.len();
            let kept: Vec<usize> = (0..filtered.n_days())
                .filter(|&d| {
                    let lo = d * 1440;
                    let hi = lo + 1440;
                    filtered.day_valid[d] && lo >= start && hi <= start + n
                })
                .collect();
            match select_analysis_window(&filtered, n_days) {
                Ok(window) => {
                    prop_assert!(kept.len() >= n_days);
                    prop_assert_eq!(window.len(), n_days * 1440);
                    let mut expected = Vec::new();
                    for &d in &kept[..n_days] {
                        let lo = d * 1440 - start;
                        expected.extend_from_slice(&series.values[lo..lo + 1440]);
                    }
                    prop_assert_eq!(&window.values, &expected);
                }
                Err(_) => prop_assert!(kept.len() < n_days),
            }
            Ok(())
        },
    )
}

fn axis_permutation() -> Check {
    let samples = vec((prop::array::uniform3(0.0f64..1e4), 0usize..6), 1..300);
    run(CASES, samples, |samples| {
        const PERMS: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let plain = TriaxialSeries {
            subject_id: "s".into(),
            start_time: midnight(),
            epoch_length: 60,
            samples: samples.iter().map(|(s, _)| *s).collect(),
        };
        let permuted = TriaxialSeries {
            samples: samples
                .iter()
                .map(|(s, k)| {
                    let p = PERMS[*k];
                    [s[p[0]], s[p[1]], s[p[2]]]
                })
                .collect(),
            ..plain.clone()
        };
        let a = to_activity_series(&plain).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = to_activity_series(&permuted).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(a, b);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// features

/// Daily profiles of three kinds: continuous, small integers (many ties) and
/// mostly zero.
pub fn profile_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        vec(0.0f64..1000.0, 1440),
        vec(0u8..4, 1440).prop_map(|v| v.into_iter().map(f64::from).collect()),
        vec((0u8..10, 1u32..500), 1440).prop_map(|v| v
            .into_iter()
            .map(|(z, x)| if z < 8 { 0.0 } else { f64::from(x) })
            .collect()),
    ]
}

pub const WIDTHS: [usize; 5] = [1, 300, 600, 1439, 1440];

/// Compares `window_extreme` with the exhaustive scan on one profile.
pub fn compare_windows(profile: &[f64]) -> Result<(), String> {
    for width in WIDTHS {
        for (mode, maximize) in [(WindowMode::Max, true), (WindowMode::Min, false)] {
            let (v, s) = window_extreme(profile, width, mode);
            let (ov, os) = oracles::window_scan(profile, width, maximize);
            if s != os || (v - ov).abs() > 1e-9 {
                return Err(format!(
                    "width {width} {mode:?}: ({v}, {s}) vs oracle ({ov}, {os})"
                ));
            }
        }
    }
    Ok(())
}

fn window_matches_scan() -> Check {
    run(CASES, profile_strategy(), |profile| {
        compare_windows(&profile).map_err(TestCaseError::fail)
    })
}

fn m10_rotation() -> Check {
    run(
        CASES,
        (vec(0.0f64..1000.0, 1440), 0usize..1440),
        |(profile, r)| {
            let n = profile.len();
            let rotated: Vec<f64> = (0..n).map(|i| profile[(i + n - r) % n]).collect();
            let (v, s) = window_extreme(&profile, 600, WindowMode::Max);
            let (rv, rs) = window_extreme(&rotated, 600, WindowMode::Max);
            prop_assert_eq!(v, rv);
            prop_assert_eq!(rs, (s + r) % n);
            Ok(())
        },
    )
}

fn day_series() -> impl Strategy<Value = Vec<f64>> {
    (1usize..4).prop_flat_map(|days| vec(prop_oneof![Just(0.0), 1.0f64..2000.0], days * 1440))
}

fn scale_invariance() -> Check {
    run(CASES, (day_series(), 0.01f64..100.0), |(values, k)| {
        let cfg = FeatureConfig::default();
        let a = compute_features(&series_from(values.clone(), 0), &cfg)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let b = compute_features(&series_from(scaled, 0), &cfg)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(
            close(a.ra.unwrap(), b.ra.unwrap(), 1e-12),
            "ra {:?} vs {:?}",
            a.ra,
            b.ra
        );
        prop_assert!(close(a.rmssd_sd.unwrap(), b.rmssd_sd.unwrap(), 1e-12));
        Ok(())
    })
}

fn window_ordering() -> Check {
    run(CASES, day_series(), |values| {
        let series = series_from(values, 0);
        let f = compute_features(&series, &FeatureConfig::default())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mean = minute_profile(&series).unwrap().mean();
        let tol = 1e-9 * mean.abs().max(1.0);
        prop_assert!(f.m10 / 600.0 >= mean - tol);
        prop_assert!(mean >= f.l5 / 300.0 - tol);
        Ok(())
    })
}

fn features_order_independent() -> Check {
    run(
        CASES,
        (vec(day_series(), 2..6), any::<u64>()),
        |(subjects, seed)| {
            let cfg = FeatureConfig::default();
            let named: Vec<ActivitySeries> = subjects
                .into_iter()
                .enumerate()
                .map(|(i, v)| ActivitySeries::new(format!("s{i}"), midnight(), v))
                .collect();
            let sequential: BTreeMap<String, _> = named
                .iter()
                .map(|s| (s.subject_id.clone(), compute_features(s, &cfg).ok()))
                .collect();
            let mut shuffled = named.clone();
            let len = shuffled.len();
            shuffled.rotate_left(seed as usize % len);
            shuffled.reverse();
            let parallel: BTreeMap<String, _> = shuffled
                .par_iter()
                .map(|s| (s.subject_id.clone(), compute_features(s, &cfg).ok()))
                .collect();
            prop_assert_eq!(sequential, parallel);
            Ok(())
        },
    )
}

// ---------------------------------------------------------------------------
// nls

fn lm_monotone() -> Check {
    let data = vec(-0.05f64..0.05, 30);
    run(
        CASES,
        (0.5f64..3.0, -1.0f64..1.0, data, -2.0f64..4.0, -2.0f64..2.0),
        |(a, b, noise, a0, b0)| {
            let t: Vec<f64> = (0..30).map(|i| i as f64 / 10.0).collect();
            let y: Vec<f64> = t
                .iter()
                .zip(&noise)
                .map(|(t, e)| a * (b * t).exp() + e)
                .collect();
            let problem = FnProblem::new(2, 30, |p: &[f64], out: &mut [f64]| {
                for i in 0..30 {
                    out[i] = y[i] - p[0] * (p[1] * t[i]).exp();
                }
            });
            let result = levenberg_marquardt(&problem, &[a0, b0], &NlsOptions::default())
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(!result.rss_history.is_empty());
            for w in result.rss_history.windows(2) {
                prop_assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
            }
            prop_assert_eq!(*result.rss_history.last().unwrap(), result.rss);
            Ok(())
        },
    )
}

fn lm_residual_scaling() -> Check {
    let design = vec(-1.0f64..1.0, 40 * 3);
    let obs = vec(-5.0f64..5.0, 40);
    run(CASES, (design, obs, 0.01f64..100.0), |(design, obs, k)| {
        let residual = |scale: f64| {
            let design = design.clone();
            let obs = obs.clone();
            FnProblem::new(3, 40, move |p: &[f64], out: &mut [f64]| {
                for i in 0..40 {
                    let fit: f64 = (0..3).map(|j| design[i * 3 + j] * p[j]).sum();
                    out[i] = scale * (fit - obs[i]);
                }
            })
        };
        let opts = NlsOptions::default();
        let base = levenberg_marquardt(&residual(1.0), &[0.0; 3], &opts)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let scaled = levenberg_marquardt(&residual(k), &[0.0; 3], &opts)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(close(
            scaled.rss,
            k * k * base.rss,
            1e-8 * (k * k * base.rss).max(1e-12)
        ));
        for (a, b) in base.params.iter().zip(&scaled.params) {
            prop_assert!(close(*a, *b, 1e-6 * a.abs().max(1.0)), "{} vs {}", a, b);
        }
        Ok(())
    })
}

fn jacobian_accuracy() -> Check {
    let coef = vec(prop::array::uniform5(-2.0f64..2.0), 12);
    let freq = vec((0.5f64..2.0, -1.0f64..1.0), 12);
    run(
        CASES,
        (coef, freq, -1.0f64..1.0, -1.0f64..1.0),
        |(coef, freq, p0, p1)| {
            let p = [p0, p1];
            let quad = FnProblem::new(2, 12, |p: &[f64], out: &mut [f64]| {
                for (o, c) in out.iter_mut().zip(&coef) {
                    *o = c[0] * p[0] * p[0]
                        + c[1] * p[0] * p[1]
                        + c[2] * p[1] * p[1]
                        + c[3] * p[0]
                        + c[4];
                }
            });
            let jac = numeric_jacobian(&quad, &p, 1e-6)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            for (i, c) in coef.iter().enumerate() {
                let d0 = 2.0 * c[0] * p0 + c[1] * p1 + c[3];
                let d1 = c[1] * p0 + 2.0 * c[2] * p1;
                prop_assert!(close(jac[(i, 0)], d0, 1e-8) && close(jac[(i, 1)], d1, 1e-8));
            }

            let smooth = FnProblem::new(2, 12, |p: &[f64], out: &mut [f64]| {
                for (o, (a, b)) in out.iter_mut().zip(&freq) {
                    *o = (a * p[0]).sin() + (b * p[1]).exp();
                }
            });
            let max_error = |h: f64| -> Result<f64, TestCaseError> {
                let jac = numeric_jacobian(&smooth, &p, h)
                    .map_err(|e| TestCaseError::fail(e.to_string()))?;
                Ok(freq
                    .iter()
                    .enumerate()
                    .map(|(i, (a, b))| {
                        let d0 = a * (a * p0).cos();
                        let d1 = b * (b * p1).exp();
                        (jac[(i, 0)] - d0).abs().max((jac[(i, 1)] - d1).abs())
                    })
                    .fold(0.0, f64::max))
            };
            let ratio = max_error(1e-2)? / max_error(5e-3)?;
            prop_assert!((3.5..=4.5).contains(&ratio), "error ratio {}", ratio);
            Ok(())
        },
    )
}

// ---------------------------------------------------------------------------
// cosinor

pub fn params_strategy() -> impl Strategy<Value = SigmoidalParams> {
    (
        0.0f64..5.0,
        1.0f64..8.0,
        -0.8f64..0.8,
        0.5f64..60.0,
        0.0f64..24.0,
    )
        .prop_map(|(min, amplitude, alpha, beta, phase)| SigmoidalParams {
            min,
            amplitude,
            alpha,
            beta,
            phase,
        })
}

/// Minute-midpoint times over `days` days.
pub fn midpoint_times(days: usize) -> Vec<f64> {
    (0..days * 1440).map(|i| (i as f64 + 0.5) / 60.0).collect()
}

fn model_bounds() -> Check {
    let params = (
        -10.0f64..10.0,
        0.0f64..20.0,
        -0.999f64..0.999,
        0.01f64..500.0,
        0.0f64..24.0,
    );
    run(CASES, params, |(min, amplitude, alpha, beta, phase)| {
        let p = SigmoidalParams {
            min,
            amplitude,
            alpha,
            beta,
            phase,
        };
        for i in 0..4800 {
            let v = p.value(i as f64 * 0.01);
            prop_assert!(
                v >= min && v <= min + amplitude,
                "t={} v={}",
                i as f64 * 0.01,
                v
            );
        }
        Ok(())
    })
}

fn model_periodic() -> Check {
    run(
        CASES,
        (params_strategy(), vec(-48.0f64..48.0, 50)),
        |(p, times)| {
            for t in times {
                prop_assert!(close(p.value(t), p.value(t + 24.0), 1e-12), "t={}", t);
            }
            Ok(())
        },
    )
}

fn fit_points(t: &[f64], y: &[f64]) -> Result<SigmoidalParams, TestCaseError> {
    fit_sigmoidal_points(t, y, &FitConfig::default())
        .map(|f| f.params)
        .map_err(|e| TestCaseError::fail(e.to_string()))
}

fn fit_time_shift() -> Check {
    run(CASES, (params_strategy(), -12.0f64..12.0), |(p, shift)| {
        let t = midpoint_times(3);
        let y: Vec<f64> = t.iter().map(|&t| p.value(t)).collect();
        let shifted: Vec<f64> = t.iter().map(|&t| p.value(t - shift)).collect();
        let a = fit_points(&t, &y)?;
        let b = fit_points(&t, &shifted)?;
        prop_assert!(
            circular_gap(b.phase, a.phase + shift) <= 1e-6,
            "phase {} vs {}",
            b.phase,
            a.phase + shift
        );
        prop_assert!(close(a.min, b.min, 1e-6));
        prop_assert!(close(a.amplitude, b.amplitude, 1e-6));
        prop_assert!(close(a.alpha, b.alpha, 1e-6));
        prop_assert!(close(a.beta, b.beta, 1e-6), "beta {} vs {}", a.beta, b.beta);
        Ok(())
    })
}

fn fit_affine() -> Check {
    run(CASES, (params_strategy(), 0.1f64..10.0), |(p, k)| {
        let t = midpoint_times(3);
        let y: Vec<f64> = t.iter().map(|&t| p.value(t)).collect();
        let scaled: Vec<f64> = y.iter().map(|v| k * v).collect();
        let a = fit_points(&t, &y)?;
        let b = fit_points(&t, &scaled)?;
        prop_assert!(
            close(b.min, k * a.min, 1e-6),
            "min {} vs {}",
            b.min,
            k * a.min
        );
        prop_assert!(close(b.amplitude, k * a.amplitude, 1e-6));
        prop_assert!(close(a.alpha, b.alpha, 1e-6));
        prop_assert!(close(a.beta, b.beta, 1e-6), "beta {} vs {}", a.beta, b.beta);
        prop_assert!(circular_gap(a.phase, b.phase) <= 1e-6);
        Ok(())
    })
}

fn linear_exact() -> Check {
    run(
        CASES,
        (0.0f64..100.0, 0.1f64..50.0, 0.0f64..24.0, 1usize..6),
        |(mesor, amp, acro, days)| {
            let t = midpoint_times(days);
            let y: Vec<f64> = t
                .iter()
                .map(|t| mesor + amp * ((t - acro) * std::f64::consts::TAU / 24.0).cos())
                .collect();
            let fit = fit_linear_cosinor_points(&t, &y)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(close(fit.mesor, mesor, 1e-8));
            prop_assert!(close(fit.amplitude, amp, 1e-8));
            prop_assert!(circular_gap(fit.acrophase, acro) <= 1e-8);
            Ok(())
        },
    )
}

fn refinement_improves() -> Check {
    run(
        CASES,
        (params_strategy(), vec(-1.0f64..1.0, 2880)),
        |(p, noise)| {
            let t = midpoint_times(2);
            let y: Vec<f64> = t.iter().zip(&noise).map(|(&t, e)| p.value(t) + e).collect();
            let fit = fit_sigmoidal_points(&t, &y, &FitConfig::default())
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert!(fit.rss <= fit.seed_rss, "{} > {}", fit.rss, fit.seed_rss);
            Ok(())
        },
    )
}

// ---------------------------------------------------------------------------
// stats

fn rank_sum() -> Check {
    run(
        CASES,
        vec(prop_oneof![0u8..5, any::<u8>()].prop_map(f64::from), 1..60),
        |values| {
            let n = values.len() as f64;
            let total: f64 = ranks_with_ties(&values).iter().sum();
            prop_assert_eq!(total, n * (n + 1.0) / 2.0);
            Ok(())
        },
    )
}

pub fn small_groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    vec(vec((0u8..7).prop_map(f64::from), 1..9), 2..5).prop_filter("at least three values", |g| {
        g.iter().map(Vec::len).sum::<usize>() >= 3
    })
}

pub fn to_samples(groups: &[Vec<f64>]) -> GroupSamples {
    GroupSamples::new(
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| (GroupLabel::ALL[i], g.clone()))
            .collect(),
    )
}

/// Compares the library H with the direct formula on one sample.
pub fn compare_kw(groups: &[Vec<f64>]) -> Result<(), String> {
    let kw = kruskal_wallis(&to_samples(groups)).map_err(|e| e.to_string())?;
    match oracles::kruskal_wallis_h(groups) {
        None => (kw.all_identical && kw.h == 0.0 && kw.p == 1.0)
            .then_some(())
            .ok_or_else(|| format!("all tied but got {kw:?}")),
        Some(h) => ((kw.h - h).abs() <= 1e-12)
            .then_some(())
            .ok_or_else(|| format!("H {} vs oracle {h} for {groups:?}", kw.h)),
    }
}

fn kw_matches_formula() -> Check {
    run(500, small_groups(), |groups| {
        compare_kw(&groups).map_err(TestCaseError::fail)
    })
}

fn kw_two_group_z() -> Check {
    let distinct = (3usize..20).prop_flat_map(|n| {
        (
            Just((0..n).map(|i| i as f64 * 1.5 + 0.25).collect::<Vec<f64>>()).prop_shuffle(),
            1..n,
        )
    });
    run(CASES, distinct, |(values, split)| {
        let (x, y) = values.split_at(split);
        let groups = vec![x.to_vec(), y.to_vec()];
        let kw =
            kruskal_wallis(&to_samples(&groups)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let z = oracles::rank_sum_z(x, y);
        prop_assert!(close(kw.h, z * z, 1e-9), "H {} vs z^2 {}", kw.h, z * z);
        Ok(())
    })
}

fn kw_invariances() -> Check {
    run(CASES, (small_groups(), any::<u64>()), |(groups, seed)| {
        let base =
            kruskal_wallis(&to_samples(&groups)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut relabeled = groups.clone();
        relabeled.rotate_left(seed as usize % groups.len());
        let r = kruskal_wallis(&to_samples(&relabeled))
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(close(base.h, r.h, 1e-12 * base.h.max(1.0)));
        let mapped: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| g.iter().map(|v| v * v * v + (v / 3.0).exp()).collect())
            .collect();
        let m =
            kruskal_wallis(&to_samples(&mapped)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(base.h, m.h);
        Ok(())
    })
}

fn chi_square_monotone() -> Check {
    run(
        CASES,
        (1u32..30, vec(0.0f64..100.0, 2..40)),
        |(df, mut xs)| {
            prop_assert_eq!(chi_square_sf(0.0, df), 1.0);
            xs.sort_by(f64::total_cmp);
            let sf: Vec<f64> = xs.iter().map(|&x| chi_square_sf(x, df)).collect();
            for w in sf.windows(2) {
                prop_assert!(w[1] <= w[0], "df {}: {} then {}", df, w[0], w[1]);
            }
            for p in sf {
                prop_assert!((0.0..=1.0).contains(&p));
            }
            Ok(())
        },
    )
}

fn pairwise_symmetric() -> Check {
    let group = || vec((0u8..6).prop_map(f64::from), 1..12);
    run(CASES, (group(), group(), group()), |(x, y, z)| {
        for (p, q) in [
            (mann_whitney_p(&x, &y), mann_whitney_p(&y, &x)),
            (mann_whitney_exact_p(&x, &y), mann_whitney_exact_p(&y, &x)),
        ] {
            prop_assert!(close(p, q, 1e-12), "{} vs {}", p, q);
            prop_assert!((0.0..=1.0).contains(&p));
        }
        let samples = to_samples(&[x.clone(), y.clone(), z.clone()]);
        let reversed = GroupSamples::new(samples.groups.iter().rev().cloned().collect());
        let scheme = MarkerScheme::default();
        for exact in [false, true] {
            let a = pairwise_ranksum(&samples, &scheme, exact);
            let b = pairwise_ranksum(&reversed, &scheme, exact);
            for pair in &a.pairs {
                let other = b
                    .get(pair.a, pair.b)
                    .ok_or_else(|| TestCaseError::fail("missing pair"))?;
                prop_assert!(close(pair.p, other.p, 1e-12));
                prop_assert!((0.0..=1.0).contains(&pair.p));
            }
        }
        let a = pairwise_dunn(&samples, &scheme);
        let b = pairwise_dunn(&reversed, &scheme);
        for pair in &a.pairs {
            let other = b
                .get(pair.a, pair.b)
                .ok_or_else(|| TestCaseError::fail("missing pair"))?;
            prop_assert!(close(pair.p, other.p, 1e-12));
            prop_assert!((0.0..=1.0).contains(&pair.p));
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// report

fn curves_permutation() -> Check {
    let subjects = vec((0usize..4, vec(0.0f64..500.0, 60)), 1..10);
    run(
        CASES,
        (subjects, any::<u64>(), 0usize..9),
        |(subjects, seed, smooth)| {
            let input: Vec<(GroupLabel, &[f64])> = subjects
                .iter()
                .map(|(g, v)| (GroupLabel::ALL[*g], v.as_slice()))
                .collect();
            let mut shuffled = input.clone();
            let len = shuffled.len();
            shuffled.rotate_left(seed as usize % len);
            shuffled.reverse();
            let a = group_average_curve(&input, smooth)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = group_average_curve(&shuffled, smooth)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&a, &b);
            for c in &a {
                for i in 0..c.mean.len() {
                    prop_assert!(c.ci_low[i] <= c.mean[i] && c.mean[i] <= c.ci_high[i]);
                }
            }
            Ok(())
        },
    )
}

/// Small cohorts of `(group, spec)`; each subject gets 5 or more days unless
/// `short` marks it for 3 days.
fn cohort_strategy() -> impl Strategy<Value = Vec<(GroupLabel, SynthSpec)>> {
    let subject = (
        0usize..2,
        10.0f64..50.0,
        50.0f64..200.0,
        -0.5f64..0.5,
        1.0f64..10.0,
        10.0f64..18.0,
        5u32..7,
        any::<u64>(),
    );
    vec(subject, 3..6).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (g, min, amplitude, alpha, beta, phase, days, seed))| {
                // first two subjects pin both groups
                let group = GroupLabel::ALL[if i < 2 { i } else { g }];
                (
                    group,
                    SynthSpec {
                        min,
                        amplitude,
                        alpha,
                        beta,
                        phase,
                        noise_sd: 5.0,
                        days,
                        seed,
                    },
                )
            })
            .collect()
    })
}

fn build_cohort(specs: &[(GroupLabel, SynthSpec)]) -> Vec<(GroupLabel, TriaxialSeries)> {
    specs
        .iter()
        .enumerate()
        .map(|(i, (g, spec))| {
            let mut s = generate_synthetic(spec).expect("valid spec");
            s.subject_id = format!("s{i:02}");
            (*g, s)
        })
        .collect()
}

fn pipeline_deterministic() -> Check {
    run(PIPELINE_CASES, cohort_strategy(), |specs| {
        let cohort = build_cohort(&specs);
        let config = PipelineConfig::default();
        let a = pipeline_outputs(&run_cohort_series(&cohort, &config), &config)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut reversed = cohort.clone();
        reversed.reverse();
        let b = pipeline_outputs(&run_cohort_series(&reversed, &config), &config)
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(a, b);
        Ok(())
    })
}

fn skip_independence() -> Check {
    run(
        PIPELINE_CASES,
        (cohort_strategy(), 0usize..6),
        |(mut specs, victim)| {
            // the extra subject has too few days and must be skipped
            let k = victim % specs.len();
            let short = SynthSpec {
                days: 3,
                ..specs[k].1
            };
            specs.insert(k, (specs[k].0, short));
            let config = PipelineConfig::default();
            let with = build_cohort(&specs);
            let without: Vec<_> = with
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .map(|(_, s)| s.clone())
                .collect();
            let a_result = run_cohort_series(&with, &config);
            prop_assert_eq!(a_result.skipped.len(), 1);
            let a = pipeline_outputs(&a_result, &config)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let b = pipeline_outputs(&run_cohort_series(&without, &config), &config)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            for (name, content) in &a.files {
                if name != "skipped.csv" {
                    prop_assert_eq!(Some(content.as_str()), b.get(name), "{} differs", name);
                }
            }
            Ok(())
        },
    )
}
