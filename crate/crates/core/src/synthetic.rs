//! Seeded piecewise-stationary exponential series.
//!
//! Segment means alternate between `1/lambda0` and `1/lambda0 + delta`,
//! starting low, and change points are either equally spaced or given
//! explicitly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{exponential, stream_rng, RNG_ALGORITHM};
use crate::series::{validate_change_points, ChangePoint, ObservationSeries};

const GEN_STREAM: u64 = 0x4745_4E53;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `tau_j = floor(m * j / (R + 1))`.
    EquallySpaced,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub changes: usize,
    pub lambda0: f64,
    pub delta: f64,
    pub placement: Placement,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn equally_spaced(m: usize, changes: usize, lambda0: f64, delta: f64, seed: u64) -> Self {
        Self {
            m,
            changes,
            lambda0,
            delta,
            placement: Placement::EquallySpaced,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m <= self.changes {
            return Err(Error::validation(format!(
                "need m > R, got m = {} and R = {}",
                self.m, self.changes
            )));
        }
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::validation(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::validation(format!(
                "delta must be nonnegative, got {}",
                self.delta
            )));
        }
        if let Placement::Explicit(taus) = &self.placement {
            if taus.len() != self.changes {
                return Err(Error::validation(format!(
                    "{} explicit change points for R = {}",
                    taus.len(),
                    self.changes
                )));
            }
            let cps: Vec<ChangePoint> = taus.iter().copied().map(ChangePoint).collect();
            validate_change_points(self.m, &cps)?;
        }
        Ok(())
    }

    /// True change points (last index of each non-final segment).
    pub fn change_points(&self) -> Result<Vec<ChangePoint>> {
        self.validate()?;
        Ok(match &self.placement {
            Placement::EquallySpaced => (1..=self.changes)
                .map(|j| ChangePoint(self.m * j / (self.changes + 1)))
                .collect(),
            Placement::Explicit(taus) => taus.iter().copied().map(ChangePoint).collect(),
        })
    }
}

/// Means of the `R + 1` segments; the first shift is upward.
pub fn segment_means(spec: &SyntheticSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut means = Vec::with_capacity(spec.changes + 1);
    let mut mu = 1.0 / spec.lambda0;
    means.push(mu);
    for j in 1..=spec.changes {
        mu += if j % 2 == 1 { spec.delta } else { -spec.delta };
        means.push(mu);
    }
    if let Some(bad) = means.iter().find(|&&mu| !(mu > 0.0)) {
        return Err(Error::validation(format!(
            "segment mean {bad} is not positive"
        )));
    }
    Ok(means)
}

/// Draw a series with the spec's own seed.
pub fn generate(spec: &SyntheticSpec) -> Result<(ObservationSeries, Vec<ChangePoint>)> {
    let mut rng = stream_rng(spec.seed, &[GEN_STREAM]);
    generate_with(spec, &mut rng)
}

/// Draw replicate `rep` of a batch sharing the spec's seed.
pub fn generate_replicate(
    spec: &SyntheticSpec,
    rep: u64,
) -> Result<(ObservationSeries, Vec<ChangePoint>)> {
    let mut rng = stream_rng(spec.seed, &[GEN_STREAM, rep]);
    generate_with(spec, &mut rng)
}

pub fn generate_with<R: Rng + ?Sized>(
    spec: &SyntheticSpec,
    rng: &mut R,
) -> Result<(ObservationSeries, Vec<ChangePoint>)> {
    let means = segment_means(spec)?;
    let taus = spec.change_points()?;
    let mut values = Vec::with_capacity(spec.m);
    let mut start = 0;
    for (seg, &mu) in means.iter().enumerate() {
        let end = taus.get(seg).map_or(spec.m, |c| c.0);
        values.extend((start..end).map(|_| exponential(rng, mu)));
        start = end;
    }
    Ok((ObservationSeries::new(values)?, taus))
}

/// Sidecar metadata written next to a generated series file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SyntheticSpec,
    pub segment_means: Vec<f64>,
    pub true_change_points: Vec<ChangePoint>,
    pub rng: String,
    pub index_convention: String,
}

impl Sidecar {
    pub fn new(spec: &SyntheticSpec, taus: &[ChangePoint]) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            segment_means: segment_means(spec)?,
            true_change_points: taus.to_vec(),
            rng: RNG_ALGORITHM.to_string(),
            index_convention: "1-based; a change point is the last index of the earlier segment"
                .to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn means_alternate() {
        let spec = SyntheticSpec::equally_spaced(200, 3, 1.0, 3.0, 0);
        assert_eq!(segment_means(&spec).unwrap(), vec![1.0, 4.0, 1.0, 4.0]);
        let spec = SyntheticSpec::equally_spaced(200, 4, 2.0, 0.0, 0);
        assert_eq!(segment_means(&spec).unwrap(), vec![0.5; 5]);
        let spec = SyntheticSpec::equally_spaced(200, 1, 1.0, 5.0, 0);
        assert_eq!(segment_means(&spec).unwrap(), vec![1.0, 6.0]);
    }

    #[test]
    fn equally_spaced_locations() {
        let taus = |r| {
            SyntheticSpec::equally_spaced(200, r, 1.0, 1.0, 0)
                .change_points()
                .unwrap()
                .into_iter()
                .map(|c| c.0)
                .collect::<Vec<_>>()
        };
        assert_eq!(taus(1), vec![100]);
        assert_eq!(taus(2), vec![66, 133]);
        assert_eq!(taus(3), vec![50, 100, 150]);
        assert_eq!(taus(4), vec![40, 80, 120, 160]);
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = SyntheticSpec::equally_spaced(200, 1, 1.0, 5.0, 7);
        let (a, taus) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(taus, vec![ChangePoint(100)]);
        let (c, _) = generate(&SyntheticSpec {
            seed: 8,
            ..spec.clone()
        })
        .unwrap();
        assert_ne!(a, c);
        assert_ne!(
            generate_replicate(&spec, 0).unwrap().0,
            generate_replicate(&spec, 1).unwrap().0
        );
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec::equally_spaced(3, 3, 1.0, 1.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticSpec::equally_spaced(10, 1, 0.0, 1.0, 0)
            .validate()
            .is_err());
        assert!(SyntheticSpec::equally_spaced(10, 1, 1.0, -1.0, 0)
            .validate()
            .is_err());
        let spec = SyntheticSpec {
            placement: Placement::Explicit(vec![5, 3]),
            ..SyntheticSpec::equally_spaced(10, 2, 1.0, 1.0, 0)
        };
        assert!(spec.validate().is_err());
        let spec = SyntheticSpec {
            placement: Placement::Explicit(vec![3]),
            ..SyntheticSpec::equally_spaced(10, 2, 1.0, 1.0, 0)
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn explicit_placement() {
        let spec = SyntheticSpec {
            placement: Placement::Explicit(vec![3, 9]),
            ..SyntheticSpec::equally_spaced(12, 2, 1.0, 2.0, 4)
        };
        let (s, taus) = generate(&spec).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(taus, vec![ChangePoint(3), ChangePoint(9)]);
    }
}
