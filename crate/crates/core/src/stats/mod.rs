//! Adaptive normalization statistics: running moments, percentile and
//! minibatch-extreme trackers, and their step-size schedules.

mod coverage;
mod moments;
mod percentile;
mod schedule;

pub use coverage::{coverage_from_spread, erf, erf_inv, erfc, spread_from_coverage};
pub use moments::{
    batch_stats, normalized_target_bound, BatchMode, BatchStats, NormalizerState, DEFAULT_EPSILON,
};
pub use percentile::{ExtremeTracker, PercentileTracker};
pub use schedule::{ScheduleKind, StepSizeSchedule, DEFAULT_TRACKER_BETA, DEFAULT_TRACKER_TAU};
