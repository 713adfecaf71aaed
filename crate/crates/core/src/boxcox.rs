//! Box-Cox power transformation and grid-search exponent estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::ObservationSeries;

/// Exponents closer to zero than this use the logarithmic branch.
const LOG_BRANCH_EPS: f64 = 1e-10;

/// Box-Cox exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxCoxParam(pub f64);

impl BoxCoxParam {
    pub fn eta(self) -> f64 {
        self.0
    }
}

/// Search grid for [`estimate_eta`], inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for EtaGrid {
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            step: 0.01,
        }
    }
}

impl EtaGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite())
            || self.lo >= self.hi
            || self.step <= 0.0
        {
            return Err(Error::validation(format!(
                "malformed eta grid ({}, {}, {})",
                self.lo, self.hi, self.step
            )));
        }
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        Ok((0..=n)
            .map(|i| {
                let eta = self.lo + i as f64 * self.step;
                // snap values that are zero up to rounding
                if eta.abs() < self.step * 1e-6 {
                    0.0
                } else {
                    eta
                }
            })
            .collect())
    }
}

/// `(x^eta - 1) / eta`, or `ln x` when `eta` is zero.
pub fn transform(x: f64, eta: BoxCoxParam) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::domain(format!(
            "Box-Cox requires positive input, got {x}"
        )));
    }
    Ok(transform_unchecked(x, eta.0))
}

#[inline]
fn transform_unchecked(x: f64, eta: f64) -> f64 {
    if eta.abs() < LOG_BRANCH_EPS {
        x.ln()
    } else {
        (x.powf(eta) - 1.0) / eta
    }
}

/// Transform every value of a positive series.
pub fn transform_series(series: &ObservationSeries, eta: BoxCoxParam) -> Result<ObservationSeries> {
    series.require_positive()?;
    let values = series
        .values()
        .iter()
        .map(|&x| transform_unchecked(x, eta.0))
        .collect();
    ObservationSeries::new(values)
}

/// Standard deviation of the geometric-mean-normalized transform
/// `x(eta) / GM^(eta - 1)`.
pub fn normalized_sd(values: &[f64], eta: f64) -> f64 {
    let n = values.len() as f64;
    let mean_log = values.iter().map(|x| x.ln()).sum::<f64>() / n;
    let gm = mean_log.exp();
    let scale = gm.powf(eta - 1.0);
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let z = transform_unchecked(x, eta) / scale;
        let d = z - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (z - mean);
    }
    if values.len() < 2 {
        0.0
    } else {
        (m2.max(0.0) / (n - 1.0)).sqrt()
    }
}

/// Grid-search the exponent minimizing [`normalized_sd`].
///
/// Ties (within a relative 1e-12) go to the exponent closest to zero, then
/// to the smaller exponent.
pub fn estimate_eta(series: &ObservationSeries, grid: EtaGrid) -> Result<BoxCoxParam> {
    if series.is_empty() {
        return Err(Error::validation("cannot estimate eta on an empty series"));
    }
    series.require_positive()?;
    let points = grid.points()?;
    let values = series.values();
    let objective: Vec<f64> = points
        .par_iter()
        .map(|&eta| normalized_sd(values, eta))
        .collect();
    let best = objective
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::domain("Box-Cox objective is not finite on the grid"));
    }
    let tol = 1e-12 * best.abs().max(f64::MIN_POSITIVE);
    let eta = points
        .iter()
        .zip(&objective)
        .filter(|(_, &v)| v <= best + tol)
        .map(|(&eta, _)| eta)
        .min_by(|a, b| {
            a.abs()
                .partial_cmp(&b.abs())
                .unwrap()
                .then(a.partial_cmp(b).unwrap())
        })
        .expect("grid is non-empty");
    Ok(BoxCoxParam(eta))
}
