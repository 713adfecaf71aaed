//! Monte Carlo threshold calibration.
//!
//! Thresholds are upper percentiles of a detector's per-level statistic on
//! change-free unit-mean exponential series. A [`ThresholdProfile`] carries
//! one `(alpha, threshold)` pair per level; the overall false-detection
//! probability is bounded by the sum of the level alphas.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxcox::{self, BoxCoxParam};
use crate::cluster::{build_trace, VarianceRule, Variant};
use crate::error::{Error, Result};
use crate::lrt::{record_statistics, ElrtProvider};
use crate::rng::{exponential, stream_rng};
use crate::series::{Method, ObservationSeries};

/// Per-level false-detection probabilities used throughout the experiments.
pub const PUBLISHED_ALPHAS: [f64; 7] = [0.03, 0.02, 0.02, 0.01, 0.01, 0.01, 0.01];
/// Published thresholds for `d_1* .. d_7*` at [`PUBLISHED_ALPHAS`].
pub const PUBLISHED_THRESHOLDS: [f64; 7] = [0.7686, 0.9435, 0.7571, 0.8119, 0.7343, 0.7369, 0.6911];

const NULL_STREAM: u64 = 0x4E55_4C4C;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLevel {
    pub level: usize,
    pub alpha: f64,
    pub threshold: f64,
    /// Number of null statistics behind the percentile, when calibrated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Calibrated {
        method: Method,
        m: usize,
        seed: u64,
        reps: usize,
        sets: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variant: Option<Variant>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        elrt_runs: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_seg: Option<usize>,
    },
    PaperTable,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile {
    pub g: usize,
    pub levels: Vec<ThresholdLevel>,
    pub overall_alpha_bound: f64,
    pub provenance: Provenance,
}

impl ThresholdProfile {
    /// Build and validate a profile from parallel alpha/threshold lists.
    pub fn new(alphas: &[f64], thresholds: &[f64], provenance: Provenance) -> Result<Self> {
        if alphas.len() != thresholds.len() {
            return Err(Error::validation(format!(
                "{} alphas but {} thresholds",
                alphas.len(),
                thresholds.len()
            )));
        }
        let levels = alphas
            .iter()
            .zip(thresholds)
            .enumerate()
            .map(|(i, (&alpha, &threshold))| ThresholdLevel {
                level: i + 1,
                alpha,
                threshold,
                sample_size: None,
            })
            .collect();
        let profile = Self {
            g: alphas.len(),
            levels,
            overall_alpha_bound: alphas.iter().sum(),
            provenance,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// The seven published thresholds with their alphas.
    pub fn paper_table() -> Self {
        Self::new(
            &PUBLISHED_ALPHAS,
            &PUBLISHED_THRESHOLDS,
            Provenance::PaperTable,
        )
        .expect("published table is well-formed")
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.threshold).collect()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.alpha).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.g == 0 || self.levels.len() != self.g {
            return Err(Error::validation(format!(
                "profile declares g = {} with {} levels",
                self.g,
                self.levels.len()
            )));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.level != i + 1 {
                return Err(Error::validation("profile levels must be numbered 1..g"));
            }
            if !(l.alpha > 0.0 && l.alpha < 1.0) {
                return Err(Error::validation(format!(
                    "alpha {} not in (0, 1)",
                    l.alpha
                )));
            }
            if !(l.threshold.is_finite() && l.threshold > 0.0) {
                return Err(Error::validation(format!(
                    "threshold {} at level {} is not positive and finite",
                    l.threshold, l.level
                )));
            }
        }
        let sum: f64 = self.levels.iter().map(|l| l.alpha).sum();
        if (sum - self.overall_alpha_bound).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "overall_alpha_bound {} differs from the sum of alphas {sum}",
                self.overall_alpha_bound
            )));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let profile: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }
}

/// Parse a comma-separated alpha list.
pub fn parse_alphas(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::validation(format!("cannot parse alpha {t:?}")))
        })
        .collect()
}

fn check_alphas(alphas: &[f64], g: usize) -> Result<()> {
    if g == 0 {
        return Err(Error::validation("g must be at least 1"));
    }
    if alphas.len() != g {
        return Err(Error::validation(format!(
            "expected {g} alphas, got {}",
            alphas.len()
        )));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::validation(format!("alpha {a} not in (0, 1)")));
    }
    Ok(())
}

/// Nearest-rank upper percentile: the `ceil(n (1 - alpha))`-th smallest value.
pub fn upper_percentile(sorted: &[f64], alpha: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    let rank = ((n as f64) * (1.0 - alpha) - 1e-9)
        .ceil()
        .clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

/// A change-free unit-mean exponential series for null replicate `rep`.
pub fn null_series(m: usize, seed: u64, rep: usize) -> ObservationSeries {
    let mut rng = stream_rng(seed, &[NULL_STREAM, m as u64, rep as u64]);
    let values = (0..m).map(|_| exponential(&mut rng, 1.0)).collect();
    ObservationSeries::new(values).expect("exponential draws are finite")
}

/// Null samples of each level's statistic; `samples[l]` holds the sorted
/// level-`l+1` values.
#[derive(Debug, Clone)]
pub struct NullSamples {
    pub samples: Vec<Vec<f64>>,
}

impl NullSamples {
    fn from_rows(rows: Vec<Vec<Option<f64>>>, g: usize) -> Self {
        let mut samples = vec![Vec::with_capacity(rows.len()); g];
        for row in rows {
            for (l, v) in row.into_iter().enumerate() {
                if let Some(v) = v {
                    samples[l].push(v);
                }
            }
        }
        for s in &mut samples {
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        Self { samples }
    }

    fn profile(&self, alphas: &[f64], provenance: Provenance) -> Result<ThresholdProfile> {
        let mut levels = Vec::with_capacity(alphas.len());
        for (i, (&alpha, sample)) in alphas.iter().zip(&self.samples).enumerate() {
            let threshold = upper_percentile(sample, alpha).ok_or_else(|| {
                Error::validation(format!("no null statistics recorded for level {}", i + 1))
            })?;
            levels.push(ThresholdLevel {
                level: i + 1,
                alpha,
                threshold,
                sample_size: Some(sample.len()),
            });
        }
        let profile = ThresholdProfile {
            g: alphas.len(),
            levels,
            overall_alpha_bound: alphas.iter().sum(),
            provenance,
        };
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone)]
pub struct ClusterCalibration {
    pub m: usize,
    pub g: usize,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub sets: usize,
    pub seed: u64,
    /// Box-Cox exponent applied to every null series, if any.
    pub transform_eta: Option<f64>,
    pub variant: Variant,
    pub variance_rule: VarianceRule,
}

impl ClusterCalibration {
    pub fn new(m: usize, seed: u64, transform_eta: Option<f64>) -> Self {
        Self {
            m,
            g: PUBLISHED_ALPHAS.len(),
            alphas: PUBLISHED_ALPHAS.to_vec(),
            reps: 100,
            sets: 100,
            seed,
            transform_eta,
            variant: Variant::Agglomerative,
            variance_rule: VarianceRule::Floor,
        }
    }

    /// Null samples of `d_1* .. d_g*` over `sets * reps` series.
    pub fn null_samples(&self) -> Result<NullSamples> {
        check_alphas(&self.alphas, self.g)?;
        if self.reps == 0 || self.sets == 0 {
            return Err(Error::validation("reps and sets must be at least 1"));
        }
        if self.g + 1 > self.m {
            return Err(Error::validation(format!(
                "g = {} needs a series longer than {}",
                self.g, self.m
            )));
        }
        let total = self.reps * self.sets;
        let rows: Vec<Vec<Option<f64>>> = (0..total)
            .into_par_iter()
            .map(|rep| {
                let raw = null_series(self.m, self.seed, rep);
                let work = match self.transform_eta {
                    Some(eta) => boxcox::transform_series(&raw, BoxCoxParam(eta))?,
                    None => raw,
                };
                let trace = build_trace(&work, self.variant, self.variance_rule)?;
                Ok(trace.distances()[..self.g]
                    .iter()
                    .map(|&d| Some(d))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(NullSamples::from_rows(rows, self.g))
    }

    pub fn run(&self) -> Result<ThresholdProfile> {
        let samples = self.null_samples()?;
        samples.profile(
            &self.alphas,
            Provenance::Calibrated {
                method: Method::Cluster,
                m: self.m,
                seed: self.seed,
                reps: self.reps,
                sets: self.sets,
                eta: self.transform_eta,
                variant: Some(self.variant),
                elrt_runs: None,
                min_seg: None,
            },
        )
    }
}

/// Thresholds for `d_1* .. d_g*` of the clustering detector.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_cluster(
    m: usize,
    g: usize,
    alphas: &[f64],
    reps: usize,
    sets: usize,
    seed: u64,
    transform_eta: Option<f64>,
) -> Result<ThresholdProfile> {
    ClusterCalibration {
        g,
        alphas: alphas.to_vec(),
        reps,
        sets,
        ..ClusterCalibration::new(m, seed, transform_eta)
    }
    .run()
}

#[derive(Debug, Clone)]
pub struct LrtCalibration {
    pub m: usize,
    pub g: usize,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub sets: usize,
    pub seed: u64,
    pub elrt_runs: usize,
    pub min_seg: usize,
}

impl LrtCalibration {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            g: PUBLISHED_ALPHAS.len(),
            alphas: PUBLISHED_ALPHAS.to_vec(),
            reps: 100,
            sets: 100,
            seed,
            elrt_runs: crate::lrt::DEFAULT_ELRT_RUNS,
            min_seg: crate::lrt::DEFAULT_MIN_SEG,
        }
    }

    /// Null samples of the best-split `lrt*` of segmentation nodes `1..=g`,
    /// with every node split unconditionally.
    pub fn null_samples(&self, provider: &ElrtProvider) -> Result<NullSamples> {
        check_alphas(&self.alphas, self.g)?;
        if self.reps == 0 || self.sets == 0 {
            return Err(Error::validation("reps and sets must be at least 1"));
        }
        let total = self.reps * self.sets;
        let rows: Vec<Vec<Option<f64>>> = (0..total)
            .into_par_iter()
            .map(|rep| record_statistics(&null_series(self.m, self.seed, rep), provider, self.g))
            .collect::<Result<_>>()?;
        Ok(NullSamples::from_rows(rows, self.g))
    }

    /// Calibrate using (and warming) `provider`, whose tables the detector
    /// should then reuse.
    pub fn run_with(&self, provider: &ElrtProvider) -> Result<ThresholdProfile> {
        let samples = self.null_samples(provider)?;
        samples.profile(
            &self.alphas,
            Provenance::Calibrated {
                method: Method::Lrt,
                m: self.m,
                seed: self.seed,
                reps: self.reps,
                sets: self.sets,
                eta: None,
                variant: None,
                elrt_runs: Some(provider.runs()),
                min_seg: Some(provider.min_seg()),
            },
        )
    }

    pub fn run(&self) -> Result<ThresholdProfile> {
        let provider = ElrtProvider::new(self.elrt_runs, self.min_seg, self.seed)?;
        self.run_with(&provider)
    }
}

/// Thresholds for segmentation nodes `1..=g` of the likelihood-ratio
/// detector; `reps` counts null series.
pub fn calibrate_lrt(
    m: usize,
    g: usize,
    alphas: &[f64],
    reps: usize,
    seed: u64,
    elrt_runs: usize,
    min_seg: usize,
) -> Result<ThresholdProfile> {
    LrtCalibration {
        g,
        alphas: alphas.to_vec(),
        reps,
        sets: 1,
        elrt_runs,
        min_seg,
        ..LrtCalibration::new(m, seed)
    }
    .run()
}
