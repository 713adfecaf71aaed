//! Likelihood-ratio change-point detection for exponential observations.
//!
//! For a split of `m` observations into the first `m1` and the remaining
//! `m2 = m - m1`, the maximized log-likelihood ratio statistic is
//!
//! ```text
//! lrt = 2 [ m ln x̄ - m1 ln x̄1 - m2 ln x̄2 ]
//! ```
//!
//! Its null expectation is larger near the ends of the series than in the
//! middle, so the split search works with `lrt* = lrt / E0[lrt]`, where the
//! null expectation for every split is estimated by simulation and stored in
//! an [`ElrtTable`]. Multiple change points are found by breadth-first binary
//! segmentation.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::ThresholdProfile;
use crate::error::{Error, Result};
use crate::rng::{exponential, stream_rng};
use crate::series::{ChangePoint, DetectionResult, LevelStatistic, Method, ObservationSeries};

/// Smallest segment on either side of a split.
pub const DEFAULT_MIN_SEG: usize = 2;
/// Simulation runs per expected-value table.
pub const DEFAULT_ELRT_RUNS: usize = 4000;
/// Tests in the binary segmentation tree (depths 0, 1 and 2).
pub const DEFAULT_MAX_TESTS: usize = 7;

const ELRT_STREAM: u64 = 0x454C_5254;
const RUNS_PER_CHUNK: usize = 64;

/// Running sums over a positive series.
#[derive(Debug, Clone)]
pub struct PrefixSums {
    sums: Vec<f64>,
}

impl PrefixSums {
    pub fn new(values: &[f64]) -> Self {
        let mut sums = Vec::with_capacity(values.len() + 1);
        sums.push(0.0);
        let mut acc = 0.0;
        for &v in values {
            acc += v;
            sums.push(acc);
        }
        Self { sums }
    }

    /// Sum over the 0-based half-open range `[a, b)`.
    #[inline]
    pub fn sum(&self, a: usize, b: usize) -> f64 {
        self.sums[b] - self.sums[a]
    }

    /// `lrt` for the sub-series `[a, b)` split after its first `m1` values.
    #[inline]
    pub fn lrt(&self, a: usize, b: usize, m1: usize) -> f64 {
        let m = (b - a) as f64;
        let n1 = m1 as f64;
        let n2 = m - n1;
        let total = self.sum(a, b);
        let left = self.sum(a, a + m1);
        let right = total - left;
        let mean = total / m;
        let stat = 2.0 * (n1 * (mean / (left / n1)).ln() + n2 * (mean / (right / n2)).ln());
        stat.max(0.0)
    }
}

fn check_split(m: usize, m1: usize, min_seg: usize) -> Result<()> {
    if m1 < min_seg || m1 + min_seg > m {
        return Err(Error::range(format!(
            "split {m1} outside [{min_seg}, {}] for a series of length {m}",
            m as isize - min_seg as isize
        )));
    }
    Ok(())
}

/// Log-likelihood ratio statistic for a change after observation `m1`.
pub fn lrt(series: &ObservationSeries, m1: usize) -> Result<f64> {
    series.require_positive()?;
    check_split(series.len(), m1, 1)?;
    let ps = PrefixSums::new(series.values());
    Ok(ps.lrt(0, series.len(), m1))
}

/// Simulated null expectation of `lrt` at every admissible split of a
/// series of one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElrtTable {
    pub series_length: usize,
    pub min_seg: usize,
    /// `expected_values[i]` is the expectation at split `min_seg + i`.
    pub expected_values: Vec<f64>,
    pub runs_used: usize,
    pub seed: u64,
}

impl ElrtTable {
    pub fn expected(&self, m1: usize) -> Result<f64> {
        check_split(self.series_length, m1, self.min_seg)?;
        Ok(self.expected_values[m1 - self.min_seg])
    }

    pub fn splits(&self) -> std::ops::RangeInclusive<usize> {
        self.min_seg..=self.series_length - self.min_seg
    }

    /// CSV with columns `m_1,elrt`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m_1,elrt\n");
        for (m1, v) in self.splits().zip(&self.expected_values) {
            let _ = writeln!(out, "{m1},{v}");
        }
        out
    }
}

/// Estimate the null expectation table from `runs` series of unit-mean
/// exponentials. Runs are summed in fixed chunks and the chunk totals are
/// combined pairwise in index order, so the result does not depend on the
/// thread count.
pub fn build_elrt_table(m: usize, runs: usize, min_seg: usize, seed: u64) -> Result<ElrtTable> {
    if runs == 0 {
        return Err(Error::validation("elrt runs must be at least 1"));
    }
    if min_seg == 0 || 2 * min_seg > m {
        return Err(Error::validation(format!(
            "min_seg {min_seg} is not admissible for length {m}"
        )));
    }
    let width = m - 2 * min_seg + 1;
    let chunks = runs.div_ceil(RUNS_PER_CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let mut values = vec![0.0; m];
            let lo = c * RUNS_PER_CHUNK;
            let hi = (lo + RUNS_PER_CHUNK).min(runs);
            for run in lo..hi {
                let mut rng = stream_rng(seed, &[ELRT_STREAM, m as u64, run as u64]);
                for v in values.iter_mut() {
                    *v = exponential(&mut rng, 1.0);
                }
                let ps = PrefixSums::new(&values);
                for (slot, m1) in acc.iter_mut().zip(min_seg..=m - min_seg) {
                    *slot += ps.lrt(0, m, m1);
                }
            }
            acc
        })
        .collect();
    let total = pairwise_sum(partials);
    let expected_values = total.into_iter().map(|s| s / runs as f64).collect();
    Ok(ElrtTable {
        series_length: m,
        min_seg,
        expected_values,
        runs_used: runs,
        seed,
    })
}

fn pairwise_sum(mut parts: Vec<Vec<f64>>) -> Vec<f64> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Normalized statistic `lrt / E0[lrt]` at split `m1`.
pub fn lrt_star(series: &ObservationSeries, m1: usize, table: &ElrtTable) -> Result<f64> {
    if table.series_length != series.len() {
        return Err(Error::validation(format!(
            "table is for length {}, series has length {}",
            table.series_length,
            series.len()
        )));
    }
    let e = table.expected(m1)?;
    Ok(lrt(series, m1)? / e)
}

fn scan(ps: &PrefixSums, a: usize, b: usize, table: &ElrtTable) -> (usize, f64) {
    let mut best = (table.min_seg, f64::NEG_INFINITY);
    for (m1, &e) in table.splits().zip(&table.expected_values) {
        let stat = ps.lrt(a, b, m1) / e;
        if stat > best.1 {
            best = (m1, stat);
        }
    }
    best
}

/// Exhaustive search for the split maximizing `lrt*`; ties go to the
/// smallest split.
pub fn best_split(series: &ObservationSeries, table: &ElrtTable) -> Result<(usize, f64)> {
    series.require_positive()?;
    let m = series.len();
    if m < 2 * table.min_seg {
        return Err(Error::SeriesTooShort {
            len: m,
            min: 2 * table.min_seg,
        });
    }
    if table.series_length != m {
        return Err(Error::validation(format!(
            "table is for length {}, series has length {m}",
            table.series_length
        )));
    }
    let ps = PrefixSums::new(series.values());
    Ok(scan(&ps, 0, m, table))
}

/// Builds expected-value tables on demand, once per length.
///
/// Tables for every length share the master seed; the per-run streams are
/// keyed by length, so they are independent across lengths.
#[derive(Debug)]
pub struct ElrtProvider {
    runs: usize,
    min_seg: usize,
    seed: u64,
    cache: Mutex<HashMap<usize, Arc<OnceLock<Arc<ElrtTable>>>>>,
}

impl ElrtProvider {
    pub fn new(runs: usize, min_seg: usize, seed: u64) -> Result<Self> {
        if runs == 0 {
            return Err(Error::validation("elrt runs must be at least 1"));
        }
        if min_seg == 0 {
            return Err(Error::validation("min_seg must be at least 1"));
        }
        Ok(Self {
            runs,
            min_seg,
            seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn min_seg(&self) -> usize {
        self.min_seg
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Install a precomputed table, e.g. one loaded from disk.
    pub fn insert(&self, table: ElrtTable) -> Result<()> {
        if table.min_seg != self.min_seg {
            return Err(Error::validation(
                "table min_seg does not match the provider",
            ));
        }
        let cell = Arc::new(OnceLock::new());
        let _ = cell.set(Arc::new(table.clone()));
        self.cache.lock().unwrap().insert(table.series_length, cell);
        Ok(())
    }

    /// Table for series of length `m`, building it if necessary.
    pub fn table(&self, m: usize) -> Result<Arc<ElrtTable>> {
        if 2 * self.min_seg > m {
            return Err(Error::SeriesTooShort {
                len: m,
                min: 2 * self.min_seg,
            });
        }
        let cell = {
            let mut cache = self.cache.lock().unwrap();
            Arc::clone(cache.entry(m).or_default())
        };
        Ok(Arc::clone(cell.get_or_init(|| {
            Arc::new(
                build_elrt_table(m, self.runs, self.min_seg, self.seed)
                    .expect("parameters validated above"),
            )
        })))
    }

    pub fn cached_lengths(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.cache.lock().unwrap().keys().copied().collect();
        v.sort_unstable();
        v
    }
}

/// One tested segment. Tests are numbered 1, 2, ... in breadth-first
/// order; test 1 is the whole series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentTest {
    pub test: usize,
    /// 0-based half-open range of the tested segment.
    pub start: usize,
    pub end: usize,
    /// Best split, as a whole-series change point.
    pub location: ChangePoint,
    pub statistic: f64,
}

/// Run the breadth-first segmentation tree. `accept` decides whether a
/// node's best split is taken (and its children tested).
fn segment_tree(
    series: &ObservationSeries,
    provider: &ElrtProvider,
    max_tests: usize,
    mut accept: impl FnMut(&SegmentTest) -> bool,
) -> Result<Vec<SegmentTest>> {
    series.require_positive()?;
    let ps = PrefixSums::new(series.values());
    let min_seg = provider.min_seg();
    let mut queue = VecDeque::from([(0usize, series.len())]);
    let mut tests = Vec::new();
    while let Some((a, b)) = queue.pop_front() {
        if tests.len() == max_tests {
            break;
        }
        if b - a < 2 * min_seg {
            continue;
        }
        let table = provider.table(b - a)?;
        let (m1, statistic) = scan(&ps, a, b, &table);
        let test = SegmentTest {
            test: tests.len() + 1,
            start: a,
            end: b,
            location: ChangePoint(a + m1),
            statistic,
        };
        tests.push(test);
        if accept(&test) {
            queue.push_back((a, a + m1));
            queue.push_back((a + m1, b));
        }
    }
    Ok(tests)
}

/// Binary segmentation with one threshold per test. The profile's level `k`
/// applies to the `k`-th segment tested; testing stops after `g` tests.
pub fn binary_segment(
    series: &ObservationSeries,
    provider: &ElrtProvider,
    thresholds: &ThresholdProfile,
) -> Result<DetectionResult> {
    let h = thresholds.thresholds();
    let tests = segment_tree(series, provider, h.len(), |t| t.statistic > h[t.test - 1])?;
    let mut change_points = Vec::new();
    let mut levels = Vec::with_capacity(tests.len());
    for t in &tests {
        let threshold = h[t.test - 1];
        let exceeded = t.statistic > threshold;
        if exceeded {
            change_points.push(t.location);
        }
        levels.push(LevelStatistic {
            level: t.test,
            statistic: t.statistic,
            threshold,
            exceeded,
            location: t.location,
        });
    }
    change_points.sort();
    Ok(DetectionResult {
        method: Method::Lrt,
        variant: None,
        eta: None,
        series_length: series.len(),
        change_points,
        levels,
    })
}

/// Best-split statistic of tests `1..=max_tests` when every tested segment
/// is split regardless of significance. `None` marks tests never reached
/// because all remaining segments were too short.
pub fn record_statistics(
    series: &ObservationSeries,
    provider: &ElrtProvider,
    max_tests: usize,
) -> Result<Vec<Option<f64>>> {
    let tests = segment_tree(series, provider, max_tests, |_| true)?;
    let mut out = vec![None; max_tests];
    for t in tests {
        out[t.test - 1] = Some(t.statistic);
    }
    Ok(out)
}

/// Node-level detail of a segmentation run.
pub fn segment_tests(
    series: &ObservationSeries,
    provider: &ElrtProvider,
    thresholds: &ThresholdProfile,
) -> Result<Vec<SegmentTest>> {
    let h = thresholds.thresholds();
    segment_tree(series, provider, h.len(), |t| t.statistic > h[t.test - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> ObservationSeries {
        ObservationSeries::new(v.to_vec()).unwrap()
    }

    // -2 (L0 - La) from the separately maximized log-likelihoods.
    fn lrt_oracle(v: &[f64], m1: usize) -> f64 {
        let loglik = |xs: &[f64]| {
            let n = xs.len() as f64;
            let s: f64 = xs.iter().sum();
            n * (n / s).ln() - n
        };
        -2.0 * (loglik(v) - (loglik(&v[..m1]) + loglik(&v[m1..])))
    }

    #[test]
    fn lrt_examples() {
        let expected = 2.0 * (4.0 * 3f64.ln() - 2.0 * 1f64.ln() - 2.0 * 5f64.ln());
        assert!((expected - 2.351_146_659_608_477).abs() < 1e-9);
        let v = [1.0, 1.0, 5.0, 5.0];
        assert!((lrt(&series(&v), 2).unwrap() - expected).abs() < 1e-12);
        assert!((lrt_oracle(&v, 2) - expected).abs() < 1e-12);
        assert!((lrt(&series(&[2.0, 2.0, 10.0, 10.0]), 2).unwrap() - expected).abs() < 1e-12);
        for m1 in 1..5 {
            assert!(lrt(&series(&[3.0; 5]), m1).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn lrt_errors() {
        assert!(matches!(
            lrt(&series(&[1.0, -1.0, 2.0]), 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(lrt(&series(&[1.0, 2.0]), 2), Err(Error::Range(_))));
        assert!(matches!(lrt(&series(&[1.0, 2.0]), 0), Err(Error::Range(_))));
    }

    #[test]
    fn table_is_deterministic_and_positive() {
        let a = build_elrt_table(30, 300, 2, 11).unwrap();
        let b = build_elrt_table(30, 300, 2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.expected_values.len(), 27);
        assert!(a.expected_values.iter().all(|v| v.is_finite() && *v > 0.0));
        assert_ne!(a, build_elrt_table(30, 300, 2, 12).unwrap());
        assert!(build_elrt_table(3, 10, 2, 1).is_err());
        assert!(build_elrt_table(10, 0, 2, 1).is_err());
    }

    #[test]
    fn table_csv_layout() {
        let t = build_elrt_table(6, 10, 2, 1).unwrap();
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "m_1,elrt");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("2,"));
        assert!(lines[3].starts_with("4,"));
    }

    #[test]
    fn lrt_star_length_mismatch() {
        let t = build_elrt_table(6, 10, 2, 1).unwrap();
        let s = series(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(matches!(lrt_star(&s, 2, &t), Err(Error::Validation(_))));
        assert!(lrt_star(&series(&[2.0; 6]), 3, &t).unwrap().abs() < 1e-12);
    }

    #[test]
    fn too_short_for_any_test() {
        let provider = ElrtProvider::new(100, 2, 1).unwrap();
        let r = binary_segment(
            &series(&[1.0, 2.0, 3.0]),
            &provider,
            &ThresholdProfile::paper_table(),
        )
        .unwrap();
        assert!(r.change_points.is_empty());
        assert!(r.levels.is_empty());
        let t = build_elrt_table(4, 10, 2, 1).unwrap();
        assert!(matches!(
            best_split(&series(&[1.0, 2.0, 3.0]), &t),
            Err(Error::SeriesTooShort { .. })
        ));
    }

    #[test]
    fn provider_builds_once_per_length() {
        let provider = ElrtProvider::new(50, 2, 5).unwrap();
        let a = provider.table(20).unwrap();
        let b = provider.table(20).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(provider.cached_lengths(), vec![20]);
        assert_eq!(*a, build_elrt_table(20, 50, 2, 5).unwrap());
    }

    #[test]
    fn strong_change_is_split() {
        let mut v = vec![1.0; 10];
        v.extend([20.0; 10]);
        // break exact ties inside each block
        for (i, x) in v.iter_mut().enumerate() {
            *x *= 1.0 + 0.01 * ((i * 7) % 5) as f64;
        }
        let provider = ElrtProvider::new(500, 2, 3).unwrap();
        let r = binary_segment(&series(&v), &provider, &ThresholdProfile::paper_table()).unwrap();
        assert!(r.indices().contains(&10), "{:?}", r.indices());
        assert_eq!(r.levels[0].level, 1);
        assert!(r.levels[0].exceeded);
    }
}
