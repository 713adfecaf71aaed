//! Observation series, segment summaries and detection results.
//!
//! All user-facing indices are 1-based. A change point `τ` names the LAST
//! observation of the earlier segment, so observations `τ+1..` start the
//! next segment.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ordered sample `x_1..x_m` in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationSeries {
    values: Vec<f64>,
}

impl ObservationSeries {
    /// Build a series; rejects empty input and non-finite values.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("series must contain at least one value"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "value at index {} is not finite",
                pos + 1
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Fails with a domain error unless every value is strictly positive.
    pub fn require_positive(&self) -> Result<()> {
        match self.values.iter().position(|&v| v <= 0.0) {
            Some(pos) => Err(Error::domain(format!(
                "value {} at index {} is not strictly positive",
                self.values[pos],
                pos + 1
            ))),
            None => Ok(()),
        }
    }

    /// Sub-series over the 1-based inclusive range `[from, to]`.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        check_range(self.len(), from, to)?;
        Ok(Self {
            values: self.values[from - 1..to].to_vec(),
        })
    }

    /// Parse a plain-text series: one value per line, blank lines ignored, an
    /// optional single non-numeric header line.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut seen_data = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.parse::<f64>() {
                Ok(v) => {
                    values.push(v);
                    seen_data = true;
                }
                Err(_) if !seen_data && lineno == first_content_line(text) => {}
                Err(_) => {
                    return Err(Error::Parse(format!(
                        "line {}: cannot parse {line:?} as a number",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(values)
    }

    /// Parse a CSV document (with header row) and take the named column.
    pub fn parse_csv<R: Read>(reader: R, column: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        let idx = headers
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| Error::Parse(format!("CSV has no column named {column:?}")))?;
        let mut values = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let cell = record.get(idx).unwrap_or("").trim();
            let v = cell.parse::<f64>().map_err(|_| {
                Error::Parse(format!(
                    "row {}: cannot parse {cell:?} as a number",
                    row + 2
                ))
            })?;
            values.push(v);
        }
        Self::new(values)
    }

    /// Read a series file. `column` selects CSV mode.
    pub fn read_path(path: &Path, column: Option<&str>) -> Result<Self> {
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let text = std::fs::read_to_string(path).map_err(io_err)?;
        match column {
            Some(col) => Self::parse_csv(text.as_bytes(), col),
            None => Self::parse_text(&text),
        }
    }

    /// Plain-text rendering, one value per line.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.len() * 20);
        for v in &self.values {
            out.push_str(&format!("{v}\n"));
        }
        out
    }
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim();
            !l.is_empty() && !l.starts_with('#')
        })
        .unwrap_or(0)
}

fn check_range(m: usize, from: usize, to: usize) -> Result<()> {
    if from < 1 || from > to || to > m {
        return Err(Error::range(format!(
            "segment [{from}, {to}] is not within [1, {m}]"
        )));
    }
    Ok(())
}

/// Count, mean and sample standard deviation of a contiguous segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (divisor `count - 1`); zero for singletons.
    pub stddev: f64,
}

impl SegmentStats {
    pub fn singleton(value: f64) -> Self {
        Self {
            count: 1,
            mean: value,
            stddev: 0.0,
        }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        debug_assert!(n > 0);
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self::from_moments(n, mean, ss)
    }

    /// `sum_sq_dev` is the sum of squared deviations from `mean`.
    fn from_moments(count: usize, mean: f64, sum_sq_dev: f64) -> Self {
        let stddev = if count > 1 {
            (sum_sq_dev.max(0.0) / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            count,
            mean,
            stddev,
        }
    }

    pub fn variance(&self) -> f64 {
        self.stddev * self.stddev
    }

    fn sum_sq_dev(&self) -> f64 {
        if self.count > 1 {
            self.variance() * (self.count - 1) as f64
        } else {
            0.0
        }
    }

    /// Pooled statistics of the concatenation of two segments.
    pub fn merge(&self, other: &Self) -> Self {
        let n = self.count + other.count;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.count as f64 / n as f64;
        let ss = self.sum_sq_dev()
            + other.sum_sq_dev()
            + delta * delta * (self.count as f64 * other.count as f64) / n as f64;
        // both constant with the same value: keep exactly zero spread
        if self.stddev == 0.0 && other.stddev == 0.0 && delta == 0.0 {
            return Self::from_moments(n, mean, 0.0);
        }
        Self::from_moments(n, mean, ss)
    }
}

/// Statistics of the 1-based inclusive slice `[from, to]`.
pub fn segment_stats(series: &ObservationSeries, from: usize, to: usize) -> Result<SegmentStats> {
    check_range(series.len(), from, to)?;
    Ok(SegmentStats::from_values(&series.values[from - 1..to]))
}

/// A change point: 1-based index of the last observation of the earlier segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChangePoint(pub usize);

impl ChangePoint {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ChangePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Check that change points are strictly increasing and within `[1, m-1]`.
pub fn validate_change_points(m: usize, cps: &[ChangePoint]) -> Result<()> {
    for (i, cp) in cps.iter().enumerate() {
        if cp.0 < 1 || cp.0 + 1 > m {
            return Err(Error::validation(format!(
                "change point {} outside [1, {}]",
                cp.0,
                m.saturating_sub(1)
            )));
        }
        if i > 0 && cps[i - 1] >= *cp {
            return Err(Error::validation(
                "change points must be strictly increasing",
            ));
        }
    }
    Ok(())
}

/// Split `[1, m]` into contiguous 1-based inclusive ranges ending at each change point.
pub fn segmentation_from_changepoints(
    m: usize,
    cps: &[ChangePoint],
) -> Result<Vec<(usize, usize)>> {
    if m == 0 {
        return Err(Error::validation("series length must be positive"));
    }
    validate_change_points(m, cps)?;
    let mut ranges = Vec::with_capacity(cps.len() + 1);
    let mut start = 1;
    for cp in cps {
        ranges.push((start, cp.0));
        start = cp.0 + 1;
    }
    ranges.push((start, m));
    Ok(ranges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cluster,
    Lrt,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cluster => "cluster",
            Method::Lrt => "lrt",
        })
    }
}

/// One threshold test recorded during detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStatistic {
    pub level: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub exceeded: bool,
    /// Boundary proposed at this level.
    pub location: ChangePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Box-Cox exponent applied before detection, if any.
    pub eta: Option<f64>,
    pub series_length: usize,
    pub change_points: Vec<ChangePoint>,
    pub levels: Vec<LevelStatistic>,
}

impl DetectionResult {
    pub fn indices(&self) -> Vec<usize> {
        self.change_points.iter().map(|c| c.0).collect()
    }

    /// Reported change points in level order, most significant first.
    pub fn by_significance(&self) -> Vec<ChangePoint> {
        let mut out: Vec<ChangePoint> = Vec::with_capacity(self.change_points.len());
        for l in &self.levels {
            if self.change_points.binary_search(&l.location).is_ok() && !out.contains(&l.location) {
                out.push(l.location);
            }
        }
        out
    }
}
