use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use segpoint::bench::{mixture_eta, run_grid, ExperimentGrid, Pairing};
use segpoint::boxcox::{estimate_eta, transform_series};
use segpoint::calibration::{parse_alphas, ClusterCalibration, LrtCalibration, Provenance};
use segpoint::carhop::{audit_csv, run_replication_audited, run_study, ArrivalMode, CarhopConfig};
use segpoint::cluster::detect_cluster;
use segpoint::gof::ad_exponential;
use segpoint::lrt::{binary_segment, build_elrt_table, segment_tests, ElrtProvider};
use segpoint::synthetic::{generate, Placement, Sidecar};
use segpoint::{
    BoxCoxParam, ClusterOptions, Detector, EtaGrid, Method, ObservationSeries, SyntheticSpec,
    ThresholdProfile, TransformMode, VarianceRule, Variant,
};

use crate::manifest::Manifest;
use crate::{
    BenchArgs, BoxcoxArgs, CalibrateArgs, CarhopArgs, CarhopMode, DetectArgs, ElrtArgs, Failure,
    GenArgs, GofArgs, InputArgs, MethodArg, RuleArg, VariantArg,
};

type Outcome = Result<(), Failure>;

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Agglo => Variant::Agglomerative,
            VariantArg::Divisive => Variant::Divisive,
        }
    }
}

impl From<RuleArg> for VarianceRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Floor => VarianceRule::Floor,
            RuleArg::MovingRange => VarianceRule::MovingRange,
            RuleArg::Pooled => VarianceRule::Pooled,
            RuleArg::Zero => VarianceRule::Zero,
        }
    }
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Cluster => Method::Cluster,
            MethodArg::Lrt => Method::Lrt,
        }
    }
}

fn print_json(value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).expect("results serialize");
    write_stdout(&(text + "\n"))
}

fn write_stdout(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::io(Path::new("<stdout>"), e))
}

fn write_file(path: &Path, text: &str, manifest: &mut Manifest) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::io(path, e))?;
    manifest.output(path);
    Ok(())
}

fn read_series(input: &InputArgs, manifest: &mut Manifest) -> Result<ObservationSeries, Failure> {
    let mut bytes = Vec::new();
    if input.input.as_os_str() == "-" {
        std::io::stdin()
            .read_to_end(&mut bytes)
            .map_err(|e| Failure::io(Path::new("<stdin>"), e))?;
    } else {
        bytes = std::fs::read(&input.input).map_err(|e| Failure::io(&input.input, e))?;
    }
    manifest.input(&input.input, &bytes);
    let text = String::from_utf8(bytes)
        .map_err(|_| Failure::validation(format!("{} is not UTF-8 text", input.input.display())))?;
    let series = match &input.column {
        Some(col) => ObservationSeries::parse_csv(text.as_bytes(), col)?,
        None => ObservationSeries::parse_text(&text)?,
    };
    Ok(series)
}

fn load_profile(
    path: &Path,
    method: Method,
    manifest: &mut Manifest,
) -> Result<ThresholdProfile, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::io(path, e))?;
    manifest.input(path, &bytes);
    let profile = ThresholdProfile::load(path)?;
    if let Provenance::Calibrated { method: cal, .. } = &profile.provenance {
        if *cal != method {
            return Err(Failure::validation(format!(
                "{} holds {cal} thresholds, not {method}",
                path.display()
            )));
        }
    }
    Ok(profile)
}

/// Keep only the first `g` levels.
fn truncate(mut profile: ThresholdProfile, g: Option<usize>) -> Result<ThresholdProfile, Failure> {
    if let Some(g) = g {
        if g == 0 || g > profile.g {
            return Err(Failure::validation(format!(
                "--max-changes must be in 1..={}, got {g}",
                profile.g
            )));
        }
        profile.levels.truncate(g);
        profile.g = g;
        profile.overall_alpha_bound = profile.levels.iter().map(|l| l.alpha).sum();
    }
    Ok(profile)
}

fn parse_transform(text: &str) -> Result<TransformMode, Failure> {
    Ok(text.parse::<TransformMode>()?)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Failure::validation(format!("cannot parse {what} {t:?}")))
        })
        .collect()
}

pub fn detect(a: &DetectArgs, manifest: &mut Manifest) -> Outcome {
    let series = read_series(&a.input, manifest)?;
    let m = series.len();
    let method = Method::from(a.method);
    let alphas = parse_alphas(&a.alphas)?;
    let given = match &a.thresholds {
        Some(p) => Some(truncate(load_profile(p, method, manifest)?, a.max_changes)?),
        None => None,
    };
    let alphas = match a.max_changes {
        Some(g) if given.is_none() => alphas.get(..g).map(<[f64]>::to_vec).ok_or_else(|| {
            Failure::validation(format!(
                "--max-changes {g} exceeds the {} alphas given",
                alphas.len()
            ))
        })?,
        _ => alphas,
    };
    match a.method {
        MethodArg::Cluster => {
            let mut options = ClusterOptions {
                transform: parse_transform(&a.transform)?,
                variant: a.variant.into(),
                variance_rule: a.rule.into(),
                ..ClusterOptions::default()
            };
            if options.transform == TransformMode::Auto {
                series.require_positive()?;
                let eta = estimate_eta(&series, options.eta_grid)?.0;
                manifest.resolve("eta", eta);
                options.transform = TransformMode::Fixed(eta);
            }
            let thresholds = match given {
                Some(p) => p,
                None => {
                    let cal = ClusterCalibration {
                        g: alphas.len(),
                        alphas,
                        reps: a.cal_reps,
                        sets: a.cal_sets,
                        ..ClusterCalibration::new(m, a.seed, None)
                    };
                    match Detector::calibrated_cluster(options.clone(), &cal)? {
                        Detector::Cluster { thresholds, .. } => thresholds,
                        Detector::Lrt { .. } => unreachable!("clustering calibration"),
                    }
                }
            };
            manifest.resolve("thresholds", thresholds.thresholds());
            print_json(&detect_cluster(&series, &options, &thresholds)?)
        }
        MethodArg::Lrt => {
            let provider = Arc::new(ElrtProvider::new(a.elrt_runs, a.min_seg, a.seed)?);
            let thresholds = match given {
                Some(p) => p,
                None => {
                    let cal = LrtCalibration {
                        g: alphas.len(),
                        alphas,
                        reps: a.cal_reps,
                        sets: a.cal_sets,
                        elrt_runs: a.elrt_runs,
                        min_seg: a.min_seg,
                        ..LrtCalibration::new(m, a.seed)
                    };
                    cal.run_with(&provider)?
                }
            };
            manifest.resolve("thresholds", thresholds.thresholds());
            let result = binary_segment(&series, &provider, &thresholds)?;
            if a.segments {
                #[derive(Serialize)]
                struct WithSegments<'a> {
                    #[serde(flatten)]
                    result: &'a segpoint::DetectionResult,
                    segments: Vec<serde_json::Value>,
                }
                let segments = segment_tests(&series, &provider, &thresholds)?
                    .into_iter()
                    .map(|t| {
                        serde_json::json!({
                            "test": t.test,
                            "first": t.start + 1,
                            "last": t.end,
                            "location": t.location,
                            "statistic": t.statistic,
                        })
                    })
                    .collect();
                print_json(&WithSegments {
                    result: &result,
                    segments,
                })
            } else {
                print_json(&result)
            }
        }
    }
}

pub fn calibrate(a: &CalibrateArgs, manifest: &mut Manifest) -> Outcome {
    let alphas = parse_alphas(&a.alphas)?;
    if alphas.len() != a.g {
        return Err(Failure::validation(format!(
            "--g {} but {} alphas",
            a.g,
            alphas.len()
        )));
    }
    let profile = match a.method {
        MethodArg::Cluster => {
            let eta = match parse_transform(&a.transform)? {
                TransformMode::Off => None,
                TransformMode::Fixed(eta) => Some(eta),
                TransformMode::Auto => {
                    return Err(Failure::validation(
                        "calibration needs --transform off or a fixed exponent",
                    ))
                }
            };
            ClusterCalibration {
                g: a.g,
                alphas,
                reps: a.reps,
                sets: a.sets,
                variant: a.variant.into(),
                variance_rule: a.rule.into(),
                ..ClusterCalibration::new(a.m, a.seed, eta)
            }
            .run()?
        }
        MethodArg::Lrt => LrtCalibration {
            g: a.g,
            alphas,
            reps: a.reps,
            sets: a.sets,
            elrt_runs: a.elrt_runs,
            min_seg: a.min_seg,
            ..LrtCalibration::new(a.m, a.seed)
        }
        .run()?,
    };
    let json = profile.to_json();
    match &a.out {
        Some(p) => {
            write_file(p, &(json + "\n"), manifest)?;
            print_json(&profile)
        }
        None => write_stdout(&(json + "\n")),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen(a: &GenArgs, manifest: &mut Manifest) -> Outcome {
    let placement = if a.placement == "equal" {
        Placement::EquallySpaced
    } else {
        Placement::Explicit(parse_list(&a.placement, "change point")?)
    };
    let spec = SyntheticSpec {
        m: a.m,
        changes: a.changes,
        lambda0: a.lambda0,
        delta: a.delta,
        placement,
        seed: a.seed,
    };
    let (series, taus) = generate(&spec)?;
    let sidecar = Sidecar::new(&spec, &taus)?;
    let runchart: String = std::iter::once("index,value\n".to_string())
        .chain(
            series
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{},{v}\n", i + 1)),
        )
        .collect();
    match &a.out {
        Some(path) => {
            write_file(path, &series.to_text(), manifest)?;
            let side = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes") + "\n";
            write_file(&sibling(path, ".json"), &side, manifest)?;
            if a.emit_runchart {
                write_file(&sibling(path, ".runchart.csv"), &runchart, manifest)?;
            }
            print_json(&sidecar)
        }
        None if a.emit_runchart => write_stdout(&runchart),
        None => write_stdout(&series.to_text()),
    }
}

pub fn elrt(a: &ElrtArgs, manifest: &mut Manifest) -> Outcome {
    let table = build_elrt_table(a.m, a.runs, a.min_seg, a.seed)?;
    match &a.out {
        Some(p) => write_file(p, &table.to_csv(), manifest),
        None => write_stdout(&table.to_csv()),
    }
}

pub fn boxcox(a: &BoxcoxArgs, manifest: &mut Manifest) -> Outcome {
    let series = read_series(&a.input, manifest)?;
    let eta = if a.eta == "auto" {
        estimate_eta(&series, EtaGrid::default())?
    } else {
        BoxCoxParam(
            a.eta
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    Failure::validation(format!("--eta must be auto or a number, got {:?}", a.eta))
                })?,
        )
    };
    let out = transform_series(&series, eta)?;
    if let Some(p) = &a.out {
        write_file(p, &out.to_text(), manifest)?;
    }
    print_json(&serde_json::json!({ "eta": eta.0, "values": out.values() }))
}

pub fn gof(a: &GofArgs, manifest: &mut Manifest) -> Outcome {
    let series = read_series(&a.input, manifest)?;
    print_json(&ad_exponential(&series)?)
}

pub fn bench(a: &BenchArgs, manifest: &mut Manifest) -> Outcome {
    let mut grid = ExperimentGrid::new(a.seed).with_scale(a.scale)?;
    grid.changes = parse_list(&a.changes, "change count")?;
    grid.deltas = parse_list(&a.deltas, "delta")?;
    grid.pairing = a.pairing.parse::<Pairing>()?;
    if !grid.changes.contains(&grid.precision_changes) {
        grid.precision_changes = *grid.changes.iter().max().unwrap_or(&1);
    }
    grid.validate()?;
    let method = Method::from(a.method);
    let given = match &a.thresholds {
        Some(p) => Some(load_profile(p, method, manifest)?),
        None => None,
    };
    let (detector, eta) = match a.method {
        MethodArg::Cluster => {
            let eta = match parse_transform(&a.transform)? {
                TransformMode::Off => None,
                TransformMode::Fixed(eta) => Some(eta),
                TransformMode::Auto => {
                    let delta = grid.deltas.iter().copied().fold(0.0, f64::max);
                    Some(mixture_eta(
                        100_000,
                        grid.lambda0,
                        delta,
                        a.seed,
                        &EtaGrid::default(),
                    )?)
                }
            };
            let options = ClusterOptions {
                transform: eta.map_or(TransformMode::Off, TransformMode::Fixed),
                variant: a.variant.into(),
                variance_rule: a.rule.into(),
                ..ClusterOptions::default()
            };
            let detector = match given {
                Some(thresholds) => Detector::Cluster {
                    options,
                    thresholds,
                },
                None => Detector::calibrated_cluster(
                    options,
                    &ClusterCalibration::new(grid.m, a.seed, None),
                )?,
            };
            (detector, eta)
        }
        MethodArg::Lrt => {
            let cal = LrtCalibration::new(grid.m, a.seed);
            let detector = match given {
                Some(thresholds) => Detector::Lrt {
                    provider: Arc::new(ElrtProvider::new(cal.elrt_runs, cal.min_seg, a.seed)?),
                    thresholds,
                },
                None => Detector::calibrated_lrt(&cal)?,
            };
            (detector, None)
        }
    };
    manifest.resolve("eta", eta);
    manifest.resolve("reps", grid.reps);
    manifest.resolve("thresholds", detector.thresholds().thresholds());
    let report = run_grid(&grid, &detector, eta)?;
    for p in report.write_to(&a.out)? {
        manifest.output(&p);
    }
    print_json(&serde_json::json!({
        "out": a.out,
        "reps": grid.reps,
        "eta": eta,
        "cells": report.cells.len(),
    }))
}

pub fn carhop(a: &CarhopArgs, manifest: &mut Manifest) -> Outcome {
    let mode = match (a.mode, a.pool_from_seed) {
        (CarhopMode::I, _) => ArrivalMode::case_one(),
        (CarhopMode::II, false) => ArrivalMode::Pooled {
            mean: a.pooled_mean,
        },
        (CarhopMode::II, true) => match ArrivalMode::case_one() {
            ArrivalMode::Clustered {
                block_means,
                block_len,
            } => ArrivalMode::PooledFromSeed {
                block_means,
                block_len,
            },
            other => other,
        },
    };
    let config = CarhopConfig {
        replications: a.reps,
        customers_per_rep: a.customers,
        ..CarhopConfig::new(mode, a.seed)
    };
    let summary = run_study(&config)?;
    if a.audit {
        let dir = a.out.as_ref().expect("clap enforces --out with --audit");
        if a.audit_rep == 0 || a.audit_rep > a.reps {
            return Err(Failure::validation(format!(
                "--audit-rep must be in 1..={}",
                a.reps
            )));
        }
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let (_, records) = run_replication_audited(&config, a.audit_rep - 1)?;
        write_file(&dir.join("audit.csv"), &audit_csv(&records), manifest)?;
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))?;
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_file(&dir.join("summary.json"), &text, manifest)?;
    }
    print_json(&summary)
}
