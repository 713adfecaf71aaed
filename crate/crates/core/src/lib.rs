//! Change-point detection for clustered, exponential-like input data.
//!
//! Two detectors are provided: a hierarchical clustering of adjacent
//! segments (optionally on Box-Cox transformed data) and binary
//! segmentation with a normalized exponential likelihood-ratio statistic.
//! Change points are reported 1-based, as the last index of the earlier
//! segment.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod boxcox;
pub mod calibration;
pub mod carhop;
pub mod cluster;
pub mod detector;
pub mod error;
pub mod gof;
pub mod lrt;
pub mod rng;
pub mod series;
pub mod synthetic;

pub use boxcox::{estimate_eta, BoxCoxParam, EtaGrid};
pub use calibration::{ThresholdLevel, ThresholdProfile};
pub use cluster::{ClusterOptions, MergeTrace, TraceEntry, TransformMode, VarianceRule, Variant};
pub use detector::Detector;
pub use error::{Error, Result};
pub use lrt::{ElrtProvider, ElrtTable};
pub use series::{
    ChangePoint, DetectionResult, LevelStatistic, Method, ObservationSeries, SegmentStats,
};
pub use synthetic::SyntheticSpec;
