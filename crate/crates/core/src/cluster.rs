//! Change-point detection by hierarchical clustering of an ordered series.
//!
//! Clusters are contiguous index ranges. Adjacent clusters are compared with
//! a Welch-type standardized mean difference
//!
//! ```text
//! d = |mean_a - mean_b| / sqrt(s_a^2 / n_a + s_b^2 / n_b)
//! ```
//!
//! The agglomerative variant repeatedly removes the boundary with the
//! smallest distance; the divisive variant repeatedly inserts the boundary
//! with the largest distance. Either way the result is a [`MergeTrace`]
//! ordered so that level 1 is the most significant boundary, and
//! [`decide_change_points`] turns the first `g` levels into a detection.

use serde::{Deserialize, Serialize};

use crate::boxcox::{self, BoxCoxParam, EtaGrid};
use crate::calibration::ThresholdProfile;
use crate::error::{Error, Result};
use crate::series::{
    ChangePoint, DetectionResult, LevelStatistic, Method, ObservationSeries, SegmentStats,
};

/// Distance assigned to two constant clusters with different values.
///
/// Larger than any finite distance, so such a boundary is never removed
/// while an ordinary boundary remains.
pub const SEPARATED: f64 = f64::MAX;

/// Control-chart constant d2 for moving ranges of span two.
const MR_D2: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Standardized distance between adjacent clusters with singleton standard
/// deviations taken as zero.
///
/// With `first_step` the denominator is fixed to 1, which is the rule for the
/// opening step of the agglomerative pass when every cluster is a singleton.
/// A zero denominator yields [`SEPARATED`] for distinct means and 0 for equal
/// means.
pub fn pair_distance(a: &SegmentStats, b: &SegmentStats, first_step: bool) -> f64 {
    if first_step {
        return (a.mean - b.mean).abs();
    }
    standardized(a.mean, a.variance(), a.count, b.mean, b.variance(), b.count)
}

/// Like [`pair_distance`] (without the first-step rule) but with cluster
/// variances supplied by `fill`.
pub fn pair_distance_with_fill(a: &SegmentStats, b: &SegmentStats, fill: &VarianceFill) -> f64 {
    standardized(
        a.mean,
        fill.variance(a),
        a.count,
        b.mean,
        fill.variance(b),
        b.count,
    )
}

#[inline]
fn standardized(mean_a: f64, var_a: f64, n_a: usize, mean_b: f64, var_b: f64, n_b: usize) -> f64 {
    let num = (mean_a - mean_b).abs();
    let den2 = var_a / n_a as f64 + var_b / n_b as f64;
    if den2 > 0.0 {
        num / den2.sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        SEPARATED
    }
}

/// How cluster variances enter the distance after the first merge step.
///
/// Every rule except `Zero` uses the moving-range noise estimate
/// `sigma^2 = (mean |x_{t+1} - x_t| / d2)^2` of the whole series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceRule {
    /// Every cluster gets `max(s^2, sigma^2)`.
    #[default]
    Floor,
    /// Singletons get `sigma^2`; larger clusters their sample variance.
    MovingRange,
    /// Every cluster gets `((n - 1) s^2 + sigma^2) / n`, i.e. one pseudo
    /// observation at the series noise level.
    Pooled,
    /// Singletons get zero. Two neighbouring singletons with distinct values
    /// are then [`SEPARATED`], which makes the merge pass grow a single
    /// cluster.
    Zero,
}

impl VarianceRule {
    pub fn name(self) -> &'static str {
        match self {
            VarianceRule::MovingRange => "moving-range",
            VarianceRule::Floor => "floor",
            VarianceRule::Pooled => "pooled",
            VarianceRule::Zero => "zero",
        }
    }
}

impl std::str::FromStr for VarianceRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-range" => Ok(VarianceRule::MovingRange),
            "floor" => Ok(VarianceRule::Floor),
            "pooled" => Ok(VarianceRule::Pooled),
            "zero" => Ok(VarianceRule::Zero),
            other => Err(Error::validation(format!(
                "unknown variance rule {other:?} (expected moving-range, floor, pooled or zero)"
            ))),
        }
    }
}

/// Moving-range estimate of the noise variance, 0 for fewer than two values.
pub fn moving_range_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mr =
        values.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (values.len() - 1) as f64;
    let sigma = mr / MR_D2;
    sigma * sigma
}

/// A [`VarianceRule`] bound to the noise level of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceFill {
    pub rule: VarianceRule,
    pub sigma2: f64,
}

impl VarianceFill {
    pub fn new(rule: VarianceRule, values: &[f64]) -> Self {
        let sigma2 = match rule {
            VarianceRule::Zero => 0.0,
            _ => moving_range_variance(values),
        };
        Self { rule, sigma2 }
    }

    pub fn variance(&self, s: &SegmentStats) -> f64 {
        let v = s.variance();
        match self.rule {
            VarianceRule::Zero => v,
            VarianceRule::MovingRange if s.count == 1 => self.sigma2,
            VarianceRule::MovingRange => v,
            VarianceRule::Floor => v.max(self.sigma2),
            VarianceRule::Pooled => ((s.count - 1) as f64 * v + self.sigma2) / s.count as f64,
        }
    }
}

/// One removed (agglomerative) or inserted (divisive) boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub level: usize,
    pub location: ChangePoint,
    pub distance: f64,
}

/// Boundary sequence `(l_j*, d_j*)`, level 1 first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeTrace {
    entries: Vec<TraceEntry>,
}

impl MergeTrace {
    fn from_levels(mut entries: Vec<TraceEntry>) -> Self {
        entries.sort_by_key(|e| e.level);
        Self { entries }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distances `d_1*, d_2*, ...` in level order.
    pub fn distances(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.distance).collect()
    }

    pub fn locations(&self) -> Vec<ChangePoint> {
        self.entries.iter().map(|e| e.location).collect()
    }

    /// Entry at the 1-based `level`.
    pub fn level(&self, level: usize) -> Option<&TraceEntry> {
        self.entries.get(level.checked_sub(1)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    #[serde(alias = "agglo")]
    Agglomerative,
    Divisive,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Agglomerative => "agglomerative",
            Variant::Divisive => "divisive",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agglo" | "agglomerative" => Ok(Variant::Agglomerative),
            "divisive" => Ok(Variant::Divisive),
            other => Err(Error::validation(format!(
                "unknown clustering variant {other:?}"
            ))),
        }
    }
}

/// Bottom-up pass: start from singletons and remove the closest boundary
/// until one cluster remains. Ties go to the leftmost boundary.
pub fn agglomerate(series: &ObservationSeries, scale: VarianceRule) -> Result<MergeTrace> {
    let values = series.values();
    let m = values.len();
    if m < 2 {
        return Err(Error::SeriesTooShort { len: m, min: 2 });
    }
    let fill = VarianceFill::new(scale, values);

    // Cluster i covers [start[i], start[next[i]]) in 0-based terms; the
    // boundary owned by cluster i separates it from next[i].
    let mut stats: Vec<SegmentStats> = values.iter().map(|&v| SegmentStats::singleton(v)).collect();
    let mut next: Vec<usize> = (1..=m).collect();
    let mut prev: Vec<Option<usize>> = (0..m).map(|i| i.checked_sub(1)).collect();
    // last 0-based index of each cluster: the boundary location (1-based) is end + 1
    let mut end: Vec<usize> = (0..m).collect();
    let mut dist: Vec<f64> = (0..m - 1)
        .map(|i| pair_distance(&stats[i], &stats[i + 1], true))
        .collect();
    dist.push(f64::NAN);

    let mut entries = Vec::with_capacity(m - 1);
    // cluster 0 always survives: merges keep the left cluster
    let head = 0usize;
    for step in 1..m {
        let mut best: Option<(usize, f64)> = None;
        let mut i = head;
        while next[i] < m {
            let d = dist[i];
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
            i = next[i];
        }
        let (left, d) = best.expect("at least one boundary remains");
        let right = next[left];
        entries.push(TraceEntry {
            level: m - step,
            location: ChangePoint(end[left] + 1),
            distance: d,
        });

        stats[left] = stats[left].merge(&stats[right]);
        end[left] = end[right];
        next[left] = next[right];
        if next[left] < m {
            prev[next[left]] = Some(left);
        }

        if step == 1 {
            // leave the opening rule: every remaining boundary is rescored
            let mut i = head;
            while next[i] < m {
                dist[i] = pair_distance_with_fill(&stats[i], &stats[next[i]], &fill);
                i = next[i];
            }
        } else {
            if next[left] < m {
                dist[left] = pair_distance_with_fill(&stats[left], &stats[next[left]], &fill);
            }
            if let Some(p) = prev[left] {
                dist[p] = pair_distance_with_fill(&stats[p], &stats[left], &fill);
            }
        }
    }
    Ok(MergeTrace::from_levels(entries))
}

/// Centered prefix sums for O(1) segment statistics.
struct PrefixMoments {
    center: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl PrefixMoments {
    fn new(values: &[f64]) -> Self {
        let center = values.iter().sum::<f64>() / values.len() as f64;
        let mut s1 = Vec::with_capacity(values.len() + 1);
        let mut s2 = Vec::with_capacity(values.len() + 1);
        s1.push(0.0);
        s2.push(0.0);
        for &v in values {
            let c = v - center;
            s1.push(s1.last().unwrap() + c);
            s2.push(s2.last().unwrap() + c * c);
        }
        Self { center, s1, s2 }
    }

    /// Stats of the 0-based half-open range `[a, b)`.
    fn stats(&self, a: usize, b: usize) -> SegmentStats {
        let n = b - a;
        let sum = self.s1[b] - self.s1[a];
        let sumsq = self.s2[b] - self.s2[a];
        let mean_c = sum / n as f64;
        let ss = (sumsq - sum * mean_c).max(0.0);
        let stddev = if n > 1 {
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        SegmentStats {
            count: n,
            mean: self.center + mean_c,
            stddev,
        }
    }
}

/// Best split of `[a, b)`: (split point k meaning `[a,k)|[k,b)`, distance).
/// Ties go to the smallest k.
fn best_division(pm: &PrefixMoments, a: usize, b: usize, fill: &VarianceFill) -> (usize, f64) {
    let mut best = (a + 1, f64::NEG_INFINITY);
    for k in a + 1..b {
        let d = pair_distance_with_fill(&pm.stats(a, k), &pm.stats(k, b), fill);
        if d > best.1 {
            best = (k, d);
        }
    }
    best
}

/// Top-down pass: start from one cluster and repeatedly perform the split
/// (over all clusters and positions) with the largest distance. Level `j`
/// holds the `j`-th split.
pub fn divide(series: &ObservationSeries, scale: VarianceRule) -> Result<MergeTrace> {
    let values = series.values();
    let m = values.len();
    if m < 2 {
        return Err(Error::SeriesTooShort { len: m, min: 2 });
    }
    let fill = VarianceFill::new(scale, values);
    let pm = PrefixMoments::new(values);

    // (start, end, best split, best distance) for clusters of size >= 2
    let mut open: Vec<(usize, usize, usize, f64)> = Vec::new();
    let (k, d) = best_division(&pm, 0, m, &fill);
    open.push((0, m, k, d));
    let mut entries = Vec::with_capacity(m - 1);
    for level in 1..m {
        let idx = open
            .iter()
            .enumerate()
            .fold(None::<(usize, f64, usize)>, |acc, (i, c)| match acc {
                Some((_, bd, bk)) if c.3 < bd || (c.3 == bd && c.2 > bk) => acc,
                _ => Some((i, c.3, c.2)),
            })
            .map(|(i, _, _)| i)
            .expect("an unsplit cluster remains");
        let (a, b, k, d) = open.swap_remove(idx);
        entries.push(TraceEntry {
            level,
            location: ChangePoint(k),
            distance: d,
        });
        for (lo, hi) in [(a, k), (k, b)] {
            if hi - lo >= 2 {
                let (kk, dd) = best_division(&pm, lo, hi, &fill);
                open.push((lo, hi, kk, dd));
            }
        }
    }
    Ok(MergeTrace::from_levels(entries))
}

/// Keep the boundaries of levels `1..=R`, where `R` is the last level among
/// the first `g` whose distance exceeds its threshold.
pub fn decide_change_points(
    trace: &MergeTrace,
    thresholds: &ThresholdProfile,
) -> Result<DetectionResult> {
    let g = thresholds.g();
    let m = trace.len() + 1;
    if g > trace.len() {
        return Err(Error::validation(format!(
            "threshold profile has {g} levels but a series of length {m} has only {} boundaries",
            trace.len()
        )));
    }
    let levels: Vec<LevelStatistic> = thresholds
        .thresholds()
        .into_iter()
        .enumerate()
        .map(|(i, h)| {
            let e = trace.entries[i];
            LevelStatistic {
                level: i + 1,
                statistic: e.distance,
                threshold: h,
                exceeded: e.distance > h,
                location: e.location,
            }
        })
        .collect();
    let r = levels.iter().rposition(|l| l.exceeded).map_or(0, |p| p + 1);
    let mut change_points: Vec<ChangePoint> =
        trace.entries[..r].iter().map(|e| e.location).collect();
    change_points.sort();
    Ok(DetectionResult {
        method: Method::Cluster,
        variant: None,
        eta: None,
        series_length: m,
        change_points,
        levels,
    })
}

/// How to pre-transform the series before clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMode {
    /// Estimate the Box-Cox exponent from the series itself.
    Auto,
    Off,
    Fixed(f64),
}

impl std::str::FromStr for TransformMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TransformMode::Auto),
            "off" => Ok(TransformMode::Off),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(TransformMode::Fixed)
                .ok_or_else(|| {
                    Error::validation(format!(
                        "transform must be auto, off or a number, got {other:?}"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterOptions {
    pub transform: TransformMode,
    pub variant: Variant,
    pub variance_rule: VarianceRule,
    pub eta_grid: EtaGrid,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            transform: TransformMode::Auto,
            variant: Variant::Agglomerative,
            variance_rule: VarianceRule::Floor,
            eta_grid: EtaGrid::default(),
        }
    }
}

/// Apply the configured transform; returns the series to cluster and the
/// exponent used.
pub fn prepare_series(
    series: &ObservationSeries,
    options: &ClusterOptions,
) -> Result<(ObservationSeries, Option<f64>)> {
    match options.transform {
        TransformMode::Off => Ok((series.clone(), None)),
        TransformMode::Fixed(eta) => Ok((
            boxcox::transform_series(series, BoxCoxParam(eta))?,
            Some(eta),
        )),
        TransformMode::Auto => {
            let eta = boxcox::estimate_eta(series, options.eta_grid)?;
            Ok((boxcox::transform_series(series, eta)?, Some(eta.0)))
        }
    }
}

pub fn build_trace(
    series: &ObservationSeries,
    variant: Variant,
    scale: VarianceRule,
) -> Result<MergeTrace> {
    match variant {
        Variant::Agglomerative => agglomerate(series, scale),
        Variant::Divisive => divide(series, scale),
    }
}

/// Full clustering pipeline: transform, trace, threshold decision.
/// Change points index the original series (the transform preserves order).
pub fn detect_cluster(
    series: &ObservationSeries,
    options: &ClusterOptions,
    thresholds: &ThresholdProfile,
) -> Result<DetectionResult> {
    let (work, eta) = prepare_series(series, options)?;
    let trace = build_trace(&work, options.variant, options.variance_rule)?;
    let mut result = decide_change_points(&trace, thresholds)?;
    result.variant = Some(options.variant.name().to_string());
    result.eta = eta;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::ThresholdProfile;

    fn stats(n: usize, mean: f64, sd: f64) -> SegmentStats {
        SegmentStats {
            count: n,
            mean,
            stddev: sd,
        }
    }

    fn series(v: &[f64]) -> ObservationSeries {
        ObservationSeries::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pair_distance_examples() {
        let a = stats(3, 2.0, 1.0);
        assert_eq!(pair_distance(&a, &a, false), 0.0);
        let b = stats(3, 5.0, 1.0);
        let expected = 3.0 / (2.0f64 / 3.0).sqrt();
        assert!((pair_distance(&a, &b, false) - expected).abs() < 1e-12);
        assert!((expected - 3.674_234_614_174_767).abs() < 1e-12);
        let s1 = SegmentStats::singleton(2.0);
        let s2 = SegmentStats::singleton(7.0);
        assert_eq!(pair_distance(&s1, &s2, true), 5.0);
    }

    #[test]
    fn zero_denominator_rule() {
        let a = stats(2, 1.0, 0.0);
        let b = stats(3, 4.0, 0.0);
        assert_eq!(pair_distance(&a, &b, false), SEPARATED);
        assert_eq!(pair_distance(&a, &stats(3, 1.0, 0.0), false), 0.0);
    }

    #[test]
    fn agglomerate_small_example() {
        let trace = agglomerate(&series(&[1.0, 1.0, 9.0, 9.0]), VarianceRule::Floor).unwrap();
        assert_eq!(trace.len(), 3);
        // opening step removes the leftmost zero-distance boundary
        assert_eq!(trace.level(3).unwrap().location, ChangePoint(1));
        assert_eq!(trace.level(3).unwrap().distance, 0.0);
        assert_eq!(trace.level(2).unwrap().location, ChangePoint(3));
        let top = trace.level(1).unwrap();
        assert_eq!(top.location, ChangePoint(2));
        assert!(trace.distances().iter().all(|&d| d <= top.distance));

        let strict = agglomerate(&series(&[1.0, 1.0, 9.0, 9.0]), VarianceRule::Zero).unwrap();
        assert_eq!(strict.locations(), trace.locations());
        assert_eq!(strict.level(1).unwrap().distance, SEPARATED);
    }

    #[test]
    fn rules_agree_on_clean_steps() {
        for rule in [
            VarianceRule::Floor,
            VarianceRule::MovingRange,
            VarianceRule::Pooled,
        ] {
            let v = [1.0, 1.2, 0.9, 1.1, 8.0, 8.3, 7.9, 8.1];
            for variant in [Variant::Agglomerative, Variant::Divisive] {
                let t = build_trace(&series(&v), variant, rule).unwrap();
                assert_eq!(
                    t.level(1).unwrap().location,
                    ChangePoint(4),
                    "{rule:?} {variant:?}"
                );
            }
        }
    }

    #[test]
    fn variance_rules() {
        let v = [1.0, 3.0, 2.0, 4.0];
        // moving ranges 2, 1, 2 -> mean 5/3
        let sigma2 = (5.0 / 3.0 / MR_D2).powi(2);
        let single = SegmentStats::singleton(2.0);
        let tight = stats(4, 2.0, 0.1);
        let f = |rule| VarianceFill::new(rule, &v);
        assert!((f(VarianceRule::Floor).sigma2 - sigma2).abs() < 1e-12);
        assert!((f(VarianceRule::Floor).variance(&tight) - sigma2).abs() < 1e-12);
        assert!((f(VarianceRule::MovingRange).variance(&tight) - 0.01).abs() < 1e-12);
        assert!((f(VarianceRule::MovingRange).variance(&single) - sigma2).abs() < 1e-12);
        assert!(
            (f(VarianceRule::Pooled).variance(&tight) - (3.0 * 0.01 + sigma2) / 4.0).abs() < 1e-12
        );
        assert_eq!(f(VarianceRule::Zero).variance(&single), 0.0);
        for rule in ["floor", "moving-range", "pooled", "zero"] {
            assert_eq!(rule.parse::<VarianceRule>().unwrap().name(), rule);
        }
        assert!("other".parse::<VarianceRule>().is_err());
    }

    #[test]
    fn constant_series_has_zero_trace() {
        for variant in [Variant::Agglomerative, Variant::Divisive] {
            let t = build_trace(&series(&[4.0; 4]), variant, VarianceRule::Floor).unwrap();
            assert_eq!(t.len(), 3);
            assert!(t.distances().iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn divide_small_example() {
        let t = divide(&series(&[1.0, 1.0, 9.0, 9.0]), VarianceRule::Floor).unwrap();
        assert_eq!(t.level(1).unwrap().location, ChangePoint(2));
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn too_short_series() {
        assert!(matches!(
            agglomerate(&series(&[1.0]), VarianceRule::Floor),
            Err(Error::SeriesTooShort { .. })
        ));
        assert!(divide(&series(&[1.0]), VarianceRule::Floor).is_err());
    }

    fn trace_with(distances: &[f64]) -> MergeTrace {
        let entries = distances
            .iter()
            .enumerate()
            .map(|(i, &d)| TraceEntry {
                level: i + 1,
                location: ChangePoint(100 - 10 * i),
                distance: d,
            })
            .collect();
        MergeTrace::from_levels(entries)
    }

    #[test]
    fn decide_examples() {
        let published = ThresholdProfile::paper_table();
        let t = trace_with(&[5.0, 0.3, 0.2, 0.1, 0.1, 0.1, 0.1, 0.05]);
        let r = decide_change_points(&t, &published).unwrap();
        assert_eq!(r.indices(), vec![100]);
        assert_eq!(r.levels.len(), 7);
        assert!(r.levels[0].exceeded && !r.levels[1].exceeded);

        let t = trace_with(&[0.1; 8]);
        assert!(decide_change_points(&t, &published)
            .unwrap()
            .change_points
            .is_empty());

        // level 3 is the last exceedance even though level 2 is below
        let t = trace_with(&[5.0, 0.5, 1.1, 0.2, 0.1, 0.1, 0.1, 0.0]);
        let r = decide_change_points(&t, &published).unwrap();
        assert_eq!(r.indices(), vec![80, 90, 100]);
    }

    #[test]
    fn decide_rejects_short_trace() {
        let published = ThresholdProfile::paper_table();
        let t = trace_with(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            decide_change_points(&t, &published),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn transform_mode_parsing() {
        assert_eq!(
            "auto".parse::<TransformMode>().unwrap(),
            TransformMode::Auto
        );
        assert_eq!(
            "0.24".parse::<TransformMode>().unwrap(),
            TransformMode::Fixed(0.24)
        );
        assert!("sometimes".parse::<TransformMode>().is_err());
        assert_eq!("agglo".parse::<Variant>().unwrap(), Variant::Agglomerative);
    }
}
