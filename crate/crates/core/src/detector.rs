//! A configured detector of either kind, ready to run on many series.

use std::sync::Arc;

use crate::calibration::{ClusterCalibration, LrtCalibration, ThresholdProfile};
use crate::cluster::{detect_cluster, ClusterOptions, TransformMode};
use crate::error::{Error, Result};
use crate::lrt::{binary_segment, ElrtProvider};
use crate::series::{DetectionResult, Method, ObservationSeries};

#[derive(Debug, Clone)]
pub enum Detector {
    Cluster {
        options: ClusterOptions,
        thresholds: ThresholdProfile,
    },
    Lrt {
        provider: Arc<ElrtProvider>,
        thresholds: ThresholdProfile,
    },
}

impl Detector {
    pub fn method(&self) -> Method {
        match self {
            Detector::Cluster { .. } => Method::Cluster,
            Detector::Lrt { .. } => Method::Lrt,
        }
    }

    pub fn thresholds(&self) -> &ThresholdProfile {
        match self {
            Detector::Cluster { thresholds, .. } | Detector::Lrt { thresholds, .. } => thresholds,
        }
    }

    pub fn detect(&self, series: &ObservationSeries) -> Result<DetectionResult> {
        match self {
            Detector::Cluster {
                options,
                thresholds,
            } => detect_cluster(series, options, thresholds),
            Detector::Lrt {
                provider,
                thresholds,
            } => binary_segment(series, provider, thresholds),
        }
    }

    /// Clustering detector with thresholds calibrated on `m`-length nulls.
    /// `Auto` transforms cannot be calibrated once for all series, so the
    /// exponent must be fixed (or off) here.
    pub fn calibrated_cluster(
        options: ClusterOptions,
        calibration: &ClusterCalibration,
    ) -> Result<Self> {
        let eta = match options.transform {
            TransformMode::Off => None,
            TransformMode::Fixed(eta) => Some(eta),
            TransformMode::Auto => {
                return Err(Error::validation(
                    "calibrated clustering needs a fixed exponent or no transform",
                ))
            }
        };
        let cal = ClusterCalibration {
            transform_eta: eta,
            variant: options.variant,
            variance_rule: options.variance_rule,
            ..calibration.clone()
        };
        let thresholds = cal.run()?;
        Ok(Detector::Cluster {
            options,
            thresholds,
        })
    }

    /// Likelihood-ratio detector whose thresholds and tables share one provider.
    pub fn calibrated_lrt(calibration: &LrtCalibration) -> Result<Self> {
        let provider = Arc::new(ElrtProvider::new(
            calibration.elrt_runs,
            calibration.min_seg,
            calibration.seed,
        )?);
        let thresholds = calibration.run_with(&provider)?;
        Ok(Detector::Lrt {
            provider,
            thresholds,
        })
    }
}
