//! Replicated accuracy and precision experiments over a grid of
//! change counts and shift sizes.
//!
//! Estimated change points are paired with true ones by rank. Of `q`
//! reported points, `min(q, R)` are kept (by default the most significant
//! ones, see [`Pairing`]), sorted, and the `j`-th is compared with `tau_j`;
//! when `q < R` the last `R - q` true change points stay unpaired.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxcox::{estimate_eta, EtaGrid};
use crate::calibration::ThresholdProfile;
use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, exponential, stream_rng};
use crate::series::{Method, ObservationSeries};
use crate::synthetic::{generate_replicate, SyntheticSpec};

pub const PRECISION_WINDOWS: [usize; 7] = [0, 1, 2, 5, 10, 15, 25];
pub const DEFAULT_DELTAS: [f64; 6] = [0.5, 1.0, 2.0, 3.0, 4.0, 5.0];

const CELL_STREAM: u64 = 0x4345_4C4C;
const MIXTURE_STREAM: u64 = 0x4D49_5854;

/// Which estimates are kept when more than `R` are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// The `R` most significant: trace levels `1..=R` for clustering, the
    /// first `R` accepted tests for segmentation.
    #[default]
    Significance,
    /// The `R` leftmost.
    Position,
}

impl std::str::FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "significance" => Ok(Pairing::Significance),
            "position" => Ok(Pairing::Position),
            other => Err(Error::validation(format!(
                "unknown pairing {other:?} (expected significance or position)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub m: usize,
    pub changes: Vec<usize>,
    pub deltas: Vec<f64>,
    pub reps: usize,
    pub lambda0: f64,
    pub seed: u64,
    /// Change count whose cells feed the precision tables.
    pub precision_changes: usize,
    pub pairing: Pairing,
}

impl ExperimentGrid {
    pub fn new(seed: u64) -> Self {
        Self {
            m: 200,
            changes: vec![1, 2, 3, 4],
            deltas: DEFAULT_DELTAS.to_vec(),
            reps: 1000,
            lambda0: 1.0,
            seed,
            precision_changes: 4,
            pairing: Pairing::Significance,
        }
    }

    /// Replications scaled from the full 1000, never fewer than one.
    pub fn with_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::validation(format!(
                "scale must be positive, got {scale}"
            )));
        }
        self.reps = ((1000.0 * scale).round() as usize).max(1);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.changes.is_empty() || self.deltas.is_empty() {
            return Err(Error::validation("grid needs at least one R and one delta"));
        }
        if self.reps == 0 {
            return Err(Error::validation("grid needs at least one replication"));
        }
        if let Some(&r) = self.changes.iter().find(|&&r| r == 0 || r >= self.m) {
            return Err(Error::validation(format!("R = {r} outside 1..m")));
        }
        if let Some(&d) = self.deltas.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::validation(format!(
                "delta = {d} must be nonnegative"
            )));
        }
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::validation("lambda0 must be positive"));
        }
        Ok(())
    }

    pub fn cell_seed(&self, r: usize, delta_index: usize) -> u64 {
        derive_seed(self.seed, &[CELL_STREAM, r as u64, delta_index as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPoint {
    pub window: usize,
    /// Fraction of paired replications with `|estimate - tau| <= window`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    pub j: usize,
    pub tau: usize,
    pub paired: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub se: Option<f64>,
    pub precision: Vec<PrecisionPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub changes: usize,
    pub delta: f64,
    pub reps: usize,
    pub seed: u64,
    pub taus: Vec<TauSummary>,
    /// `detection_counts[q]` replications reported exactly `q` change points.
    pub detection_counts: Vec<usize>,
}

impl CellResult {
    pub fn any_detection_rate(&self) -> f64 {
        let none = self.detection_counts.first().copied().unwrap_or(0);
        (self.reps - none) as f64 / self.reps as f64
    }
}

pub fn run_cell(
    spec: &SyntheticSpec,
    reps: usize,
    detector: &Detector,
    pairing: Pairing,
) -> Result<CellResult> {
    let truth: Vec<usize> = spec.change_points()?.into_iter().map(|c| c.0).collect();
    let estimates: Vec<Vec<usize>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let (series, _) = generate_replicate(spec, rep)?;
            Ok(detector
                .detect(&series)?
                .by_significance()
                .into_iter()
                .map(|c| c.0)
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(summarize_cell(spec, &truth, &estimates, pairing))
}

/// `estimates` lists each replication's change points, most significant first.
fn summarize_cell(
    spec: &SyntheticSpec,
    truth: &[usize],
    estimates: &[Vec<usize>],
    pairing: Pairing,
) -> CellResult {
    let g = estimates
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0)
        .max(truth.len());
    let mut detection_counts = vec![0; g + 1];
    let mut paired: Vec<Vec<usize>> = vec![Vec::new(); truth.len()];
    for est in estimates {
        detection_counts[est.len()] += 1;
        let mut kept = est.clone();
        if pairing == Pairing::Position {
            kept.sort_unstable();
        }
        kept.truncate(truth.len());
        kept.sort_unstable();
        for (j, e) in kept.into_iter().enumerate() {
            paired[j].push(e);
        }
    }
    let taus = truth
        .iter()
        .zip(&paired)
        .enumerate()
        .map(|(j, (&tau, xs))| summarize_tau(j + 1, tau, xs))
        .collect();
    CellResult {
        changes: spec.changes,
        delta: spec.delta,
        reps: estimates.len(),
        seed: spec.seed,
        taus,
        detection_counts,
    }
}

fn summarize_tau(j: usize, tau: usize, xs: &[usize]) -> TauSummary {
    let n = xs.len();
    let (mean, sd, se) = if n == 0 {
        (None, None, None)
    } else {
        let mean = xs.iter().map(|&x| x as f64).sum::<f64>() / n as f64;
        if n < 2 {
            (Some(mean), None, None)
        } else {
            let ss: f64 = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            (Some(mean), Some(sd), Some(sd / (n as f64).sqrt()))
        }
    };
    let precision = PRECISION_WINDOWS
        .iter()
        .map(|&k| PrecisionPoint {
            window: k,
            fraction: if n == 0 {
                0.0
            } else {
                xs.iter().filter(|&&x| x.abs_diff(tau) <= k).count() as f64 / n as f64
            },
        })
        .collect();
    TauSummary {
        j,
        tau,
        paired: n,
        mean,
        sd,
        se,
        precision,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridReport {
    pub method: Method,
    pub variant: Option<String>,
    pub eta: Option<f64>,
    pub grid: ExperimentGrid,
    pub thresholds: ThresholdProfile,
    pub cells: Vec<CellResult>,
}

pub fn run_grid(
    grid: &ExperimentGrid,
    detector: &Detector,
    eta: Option<f64>,
) -> Result<GridReport> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.changes.len() * grid.deltas.len());
    for &r in &grid.changes {
        for (di, &delta) in grid.deltas.iter().enumerate() {
            let spec = SyntheticSpec::equally_spaced(
                grid.m,
                r,
                grid.lambda0,
                delta,
                grid.cell_seed(r, di),
            );
            cells.push(run_cell(&spec, grid.reps, detector, grid.pairing)?);
        }
    }
    let variant = match detector {
        Detector::Cluster { options, .. } => Some(options.variant.name().to_string()),
        Detector::Lrt { .. } => None,
    };
    Ok(GridReport {
        method: detector.method(),
        variant,
        eta,
        grid: grid.clone(),
        thresholds: detector.thresholds().clone(),
        cells,
    })
}

/// Box-Cox exponent fitted to `n` draws of the two-level mixture used in
/// the grid (means `1/lambda0` and `1/lambda0 + delta`, equal shares).
pub fn mixture_eta(n: usize, lambda0: f64, delta: f64, seed: u64, grid: &EtaGrid) -> Result<f64> {
    if n < 2 {
        return Err(Error::validation("mixture needs at least two draws"));
    }
    let mut rng = stream_rng(seed, &[MIXTURE_STREAM]);
    let lo = 1.0 / lambda0;
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let mu = if i % 2 == 0 { lo } else { lo + delta };
            exponential(&mut rng, mu)
        })
        .collect();
    Ok(estimate_eta(&ObservationSeries::new(values)?, *grid)?.0)
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
}

impl GridReport {
    fn cell(&self, r: usize, delta: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.changes == r && c.delta == delta)
    }

    pub fn accuracy_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# Accuracy: mean estimated change point (standard error)\n"
        );
        let _ = writeln!(
            out,
            "m = {}, replications = {}, method = {}{}\n",
            self.grid.m,
            self.grid.reps,
            method_name(self.method),
            self.variant
                .as_deref()
                .map(|v| format!(" ({v})"))
                .unwrap_or_default()
        );
        let mut header = String::from("| delta |");
        let mut rule = String::from("|---|");
        for &r in &self.grid.changes {
            for tau in SyntheticSpec::equally_spaced(self.grid.m, r, 1.0, 0.0, 0)
                .change_points()
                .unwrap_or_default()
            {
                let _ = write!(header, " R={r} tau={} |", tau.0);
                rule.push_str("---|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for &delta in &self.grid.deltas {
            let _ = write!(out, "| {delta} |");
            for &r in &self.grid.changes {
                if let Some(cell) = self.cell(r, delta) {
                    for t in &cell.taus {
                        let _ = write!(out, " {} ({}) |", fmt_opt(t.mean, 1), fmt_opt(t.se, 2));
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("method,R,delta,j,tau,reps,paired,mean,sd,se\n");
        for c in &self.cells {
            for t in &c.taus {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    method_name(self.method),
                    c.changes,
                    c.delta,
                    t.j,
                    t.tau,
                    c.reps,
                    t.paired,
                    t.mean.map_or(String::new(), |v| format!("{v:.4}")),
                    t.sd.map_or(String::new(), |v| format!("{v:.4}")),
                    t.se.map_or(String::new(), |v| format!("{v:.4}")),
                );
            }
        }
        out
    }

    pub fn precision_markdown(&self) -> String {
        let r = self.grid.precision_changes;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# Precision: fraction of paired estimates within k of the true change point (R = {r})\n"
        );
        let cells: Vec<&CellResult> = self.cells.iter().filter(|c| c.changes == r).collect();
        let Some(first) = cells.first() else {
            let _ = writeln!(out, "No cells with R = {r}.");
            return out;
        };
        for j in 0..first.taus.len() {
            let _ = writeln!(out, "## tau_{} = {}\n", j + 1, first.taus[j].tau);
            let mut header = String::from("| delta |");
            let mut rule = String::from("|---|");
            for k in PRECISION_WINDOWS {
                let _ = write!(header, " k={k} |");
                rule.push_str("---|");
            }
            let _ = writeln!(out, "{header} paired |\n{rule}---|");
            for c in &cells {
                let t = &c.taus[j];
                let _ = write!(out, "| {} |", c.delta);
                for p in &t.precision {
                    let _ = write!(out, " {:.3} |", p.fraction);
                }
                let _ = writeln!(out, " {} |", t.paired);
            }
            out.push('\n');
        }
        out
    }

    pub fn precision_csv(&self) -> String {
        let mut out = String::from("method,R,delta,j,tau,paired,k,fraction\n");
        for c in &self.cells {
            for t in &c.taus {
                for p in &t.precision {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{:.4}",
                        method_name(self.method),
                        c.changes,
                        c.delta,
                        t.j,
                        t.tau,
                        t.paired,
                        p.window,
                        p.fraction
                    );
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Write the four tables and `bundle.json` into `dir`.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("accuracy.md", self.accuracy_markdown()),
            ("accuracy.csv", self.accuracy_csv()),
            ("precision.md", self.precision_markdown()),
            ("precision.csv", self.precision_csv()),
            ("bundle.json", self.to_json()),
        ];
        let mut written = Vec::new();
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Cluster => "cluster",
        Method::Lrt => "lrt",
    }
}
