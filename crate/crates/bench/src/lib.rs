//! Shared inputs for the criterion benchmarks under `benches/`.

use segpoint::calibration::ThresholdProfile;
use segpoint::synthetic::generate;
use segpoint::{ObservationSeries, SyntheticSpec};

/// An exponential series of length `m` with `changes` equally spaced shifts
/// of size `delta`.
pub fn step_series(m: usize, changes: usize, delta: f64, seed: u64) -> ObservationSeries {
    generate(&SyntheticSpec::equally_spaced(m, changes, 1.0, delta, seed))
        .expect("benchmark spec is valid")
        .0
}

/// Fixed thresholds so benchmarks time detection, not calibration.
pub fn fixed_thresholds() -> ThresholdProfile {
    ThresholdProfile::paper_table()
}
