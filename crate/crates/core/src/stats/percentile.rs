//! Online percentile and minibatch-extreme trackers.

use serde::{Deserialize, Serialize};

use super::schedule::StepSizeSchedule;
use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Tracks `y_min`, `y_max` such that a fraction `(1 − p)/2` of targets lies
/// above `y_max` and the same fraction below `y_min`.
///
/// The first observation seeds both bounds without consuming a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PercentileTracker<T> {
    y_min: T,
    y_max: T,
    p: T,
    schedule: StepSizeSchedule<T>,
    seeded: bool,
}

impl<T: Scalar> PercentileTracker<T> {
    pub fn new(p: T, schedule: StepSizeSchedule<T>) -> Result<Self> {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::Domain(format!("coverage {p} not in [0, 1]")));
        }
        Ok(Self {
            y_min: T::zero(),
            y_max: T::zero(),
            p,
            schedule,
            seeded: false,
        })
    }

    /// Starts from explicit bounds instead of seeding from the first target.
    pub fn with_bounds(y_min: T, y_max: T, p: T, schedule: StepSizeSchedule<T>) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) || y_min > y_max {
            return Err(Error::Domain(format!("invalid bounds [{y_min}, {y_max}]")));
        }
        let mut tr = Self::new(p, schedule)?;
        tr.y_min = y_min;
        tr.y_max = y_max;
        tr.seeded = true;
        Ok(tr)
    }

    pub fn update(&mut self, y: T) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("percentile target"));
        }
        if !self.seeded {
            self.y_min = y;
            self.y_max = y;
            self.seeded = true;
            return Ok(());
        }
        let beta = self.schedule.advance();
        let tail = (T::one() - self.p) / T::lit(2.0);
        let above = if y > self.y_max { T::one() } else { T::zero() };
        let below = if y < self.y_min { T::one() } else { T::zero() };
        self.y_max = self.y_max + beta * (above - tail);
        self.y_min = self.y_min - beta * (below - tail);
        Ok(())
    }

    pub fn y_min(&self) -> T {
        self.y_min
    }

    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn is_seeded(&self) -> bool {
        self.seeded
    }

    pub fn shift(&self) -> T {
        (self.y_max + self.y_min) / T::lit(2.0)
    }

    /// Half the tracked range, when the range is non-degenerate.
    pub fn scale(&self) -> Option<T> {
        (self.y_max > self.y_min).then(|| (self.y_max - self.y_min) / T::lit(2.0))
    }
}

/// Moves `y_min`/`y_max` towards the extremes of each minibatch.
///
/// For i.i.d. uniform targets and minibatches of size `B` the bounds settle
/// at the expected minibatch extremes, which corresponds to percentile
/// tracking with `p = (B − 1)/(B + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ExtremeTracker<T> {
    y_min: T,
    y_max: T,
    batch_size: usize,
    schedule: StepSizeSchedule<T>,
    seeded: bool,
}

impl<T: Scalar> ExtremeTracker<T> {
    pub fn new(batch_size: usize, schedule: StepSizeSchedule<T>) -> Result<Self> {
        if batch_size < 2 {
            return Err(Error::Domain(format!("minibatch size {batch_size} < 2")));
        }
        Ok(Self {
            y_min: T::zero(),
            y_max: T::zero(),
            batch_size,
            schedule,
            seeded: false,
        })
    }

    pub fn with_bounds(
        y_min: T,
        y_max: T,
        batch_size: usize,
        schedule: StepSizeSchedule<T>,
    ) -> Result<Self> {
        if !(y_min.is_finite() && y_max.is_finite()) || y_min > y_max {
            return Err(Error::Domain(format!("invalid bounds [{y_min}, {y_max}]")));
        }
        let mut tr = Self::new(batch_size, schedule)?;
        tr.y_min = y_min;
        tr.y_max = y_max;
        tr.seeded = true;
        Ok(tr)
    }

    pub fn update(&mut self, batch: &[T]) -> Result<()> {
        if batch.len() != self.batch_size {
            return Err(Error::DimensionMismatch {
                context: "minibatch",
                expected: self.batch_size,
                got: batch.len(),
            });
        }
        if !all_finite(batch) {
            return Err(Error::NonFinite("minibatch target"));
        }
        let lo = batch.iter().copied().fold(T::infinity(), T::min);
        let hi = batch.iter().copied().fold(T::neg_infinity(), T::max);
        if !self.seeded {
            self.y_min = lo;
            self.y_max = hi;
            self.seeded = true;
            return Ok(());
        }
        let beta = self.schedule.advance();
        let keep = T::one() - beta;
        self.y_min = keep * self.y_min + beta * lo;
        self.y_max = keep * self.y_max + beta * hi;
        Ok(())
    }

    pub fn y_min(&self) -> T {
        self.y_min
    }

    pub fn y_max(&self) -> T {
        self.y_max
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Coverage implied by the minibatch size for uniform targets.
    pub fn implied_coverage(&self) -> T {
        let b = T::from_usize(self.batch_size).expect("batch size fits");
        (b - T::one()) / (b + T::one())
    }

    pub fn shift(&self) -> T {
        (self.y_max + self.y_min) / T::lit(2.0)
    }

    pub fn scale(&self) -> Option<T> {
        (self.y_max > self.y_min).then(|| (self.y_max - self.y_min) / T::lit(2.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(beta: f64) -> StepSizeSchedule<f64> {
        StepSizeSchedule::constant(beta).unwrap()
    }

    #[test]
    fn full_coverage_keeps_max_when_inside() {
        let mut tr = PercentileTracker::with_bounds(0.0, 5.0, 1.0, constant(0.5)).unwrap();
        tr.update(3.0).unwrap();
        assert_eq!(tr.y_max(), 5.0);
        assert_eq!(tr.y_min(), 0.0);
    }

    #[test]
    fn exceedance_moves_max_up() {
        let mut tr = PercentileTracker::with_bounds(0.0, 1.0, 0.0, constant(0.5)).unwrap();
        tr.update(2.0).unwrap();
        assert_eq!(tr.y_max(), 1.25);
        // not below y_min, so y_min moves up by β(1 − p)/2
        assert_eq!(tr.y_min(), 0.25);
    }

    #[test]
    fn first_target_seeds() {
        let mut tr = PercentileTracker::new(0.8, constant(0.5)).unwrap();
        assert!(!tr.is_seeded());
        tr.update(4.0).unwrap();
        assert_eq!((tr.y_min(), tr.y_max()), (4.0, 4.0));
        assert_eq!(tr.scale(), None);
        assert_eq!(tr.shift(), 4.0);
    }

    #[test]
    fn derived_shift_and_scale() {
        let tr = PercentileTracker::with_bounds(-1.0, 3.0, 0.9, constant(0.5)).unwrap();
        assert_eq!(tr.shift(), 1.0);
        assert_eq!(tr.scale(), Some(2.0));
    }

    #[test]
    fn percentile_rejects() {
        assert!(PercentileTracker::new(1.5, constant(0.5)).is_err());
        let mut tr = PercentileTracker::new(0.5, constant(0.5)).unwrap();
        assert!(tr.update(f64::NAN).is_err());
    }

    #[test]
    fn constant_batch_is_fixed_point() {
        let mut tr = ExtremeTracker::with_bounds(2.5, 2.5, 3, constant(0.3)).unwrap();
        for _ in 0..10 {
            tr.update(&[2.5, 2.5, 2.5]).unwrap();
        }
        assert_eq!((tr.y_min(), tr.y_max()), (2.5, 2.5));
    }

    #[test]
    fn extremes_seed_and_average() {
        let mut tr = ExtremeTracker::new(2, constant(0.5)).unwrap();
        tr.update(&[1.0, 3.0]).unwrap();
        assert_eq!((tr.y_min(), tr.y_max()), (1.0, 3.0));
        tr.update(&[0.0, 2.0]).unwrap();
        assert_eq!((tr.y_min(), tr.y_max()), (0.5, 2.5));
        assert_eq!(tr.shift(), 1.5);
        assert_eq!(tr.scale(), Some(1.0));
    }

    #[test]
    fn extremes_batch_size_mismatch() {
        let mut tr = ExtremeTracker::new(4, constant(0.5)).unwrap();
        assert!(matches!(
            tr.update(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ExtremeTracker::<f64>::new(1, constant(0.5)).is_err());
        assert!((tr.implied_coverage() - 0.6).abs() < 1e-15);
    }
}
