//! Running shift/scale statistics from the first two moments of the targets.

use serde::{Deserialize, Serialize};

use super::schedule::{ScheduleKind, StepSizeSchedule};
use crate::error::{check_len, Error, Result};
use crate::scalar::{all_finite, Scalar};

pub const DEFAULT_EPSILON: f64 = 1e-4;

/// Shift `μ` and scale `σ = sqrt(ν − μ²)/s` for `k` independent outputs,
/// updated online with a shared step-size schedule.
///
/// The variance `ν − μ²` is carried directly and updated with the
/// algebraically identical recurrence
/// `var ← (1 − β)(var + β(y − μ_prev)²)`, which stays non-negative and does
/// not lose precision when `μ²` dwarfs the variance. The second moment `ν` is
/// derived on demand. Wherever `σ` is read the variance is floored at `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Scalar",
    into = "NormalizerRecord<T>",
    try_from = "NormalizerRecord<T>"
)]
pub struct NormalizerState<T> {
    mu: Vec<T>,
    var: Vec<T>,
    spread: T,
    epsilon: T,
    schedule: StepSizeSchedule<T>,
}

impl<T: Scalar> NormalizerState<T> {
    /// `k` outputs with `Σ = I`, `μ = 0`, spread 1 and `ε = 1e-4`.
    pub fn new(k: usize, schedule: StepSizeSchedule<T>) -> Self {
        assert!(k >= 1, "normalizer needs at least one output");
        Self {
            mu: vec![T::zero(); k],
            var: vec![T::one(); k],
            spread: T::one(),
            epsilon: T::lit(DEFAULT_EPSILON),
            schedule,
        }
    }

    /// Sets the desired standard deviation `s` of normalized targets. The
    /// variance is reset to `s²` so that the initial scale stays `σ = 1`.
    pub fn with_spread(mut self, spread: T) -> Result<Self> {
        if !(spread > T::zero() && spread.is_finite()) {
            return Err(Error::Domain(format!("spread {spread} must be positive")));
        }
        self.spread = spread;
        self.var = vec![spread * spread; self.mu.len()];
        Ok(self)
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon.is_finite()) {
            return Err(Error::Domain(format!("epsilon {epsilon} must be positive")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    /// Overrides the current first and second moments.
    pub fn with_moments(mut self, mu: Vec<T>, nu: Vec<T>) -> Result<Self> {
        check_len("normalizer mu", self.mu.len(), mu.len())?;
        check_len("normalizer nu", self.mu.len(), nu.len())?;
        if !all_finite(&mu) || !all_finite(&nu) {
            return Err(Error::NonFinite("normalizer moments"));
        }
        self.var = mu
            .iter()
            .zip(&nu)
            .map(|(&m, &n)| (n - m * m).max(T::zero()))
            .collect();
        self.mu = mu;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn spread(&self) -> T {
        self.spread
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn schedule(&self) -> &StepSizeSchedule<T> {
        &self.schedule
    }

    pub fn t(&self) -> u64 {
        self.schedule.t()
    }

    pub fn mean(&self) -> &[T] {
        &self.mu
    }

    /// Unfloored running variance `ν − μ²`.
    pub fn raw_variance(&self) -> &[T] {
        &self.var
    }

    /// Variance used for the scale: `max(ν − μ², ε)`.
    pub fn variance(&self) -> Vec<T> {
        self.var.iter().map(|&v| v.max(self.epsilon)).collect()
    }

    /// Running second moment `ν`.
    pub fn second_moment(&self) -> Vec<T> {
        self.mu
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| v + m * m)
            .collect()
    }

    pub fn sigma(&self) -> Vec<T> {
        self.var
            .iter()
            .map(|&v| v.max(self.epsilon).sqrt() / self.spread)
            .collect()
    }

    /// Folds one target vector into the statistics and returns the step size
    /// that was used.
    pub fn update(&mut self, y: &[T]) -> Result<T> {
        check_len("normalizer update", self.dim(), y.len())?;
        if !all_finite(y) {
            return Err(Error::NonFinite("normalizer target"));
        }
        let beta = self.schedule.advance();
        let keep = T::one() - beta;
        for ((mu, var), &yi) in self.mu.iter_mut().zip(self.var.iter_mut()).zip(y) {
            let d = yi - *mu;
            *var = keep * (*var + beta * d * d);
            *mu = keep * *mu + beta * yi;
        }
        Ok(beta)
    }

    /// `(y − μ)/σ` componentwise.
    pub fn normalize(&self, y: &[T]) -> Result<Vec<T>> {
        check_len("normalize", self.dim(), y.len())?;
        if !all_finite(y) {
            return Err(Error::NonFinite("normalize input"));
        }
        Ok(y.iter()
            .zip(&self.mu)
            .zip(self.sigma())
            .map(|((&yi, &m), s)| (yi - m) / s)
            .collect())
    }

    /// `σ ỹ + μ` componentwise; the inverse of [`normalize`](Self::normalize).
    pub fn unnormalize(&self, y_tilde: &[T]) -> Result<Vec<T>> {
        check_len("unnormalize", self.dim(), y_tilde.len())?;
        Ok(y_tilde
            .iter()
            .zip(&self.mu)
            .zip(self.sigma())
            .map(|((&yt, &m), s)| yt * s + m)
            .collect())
    }

    /// Convenience for the scalar case.
    pub fn update_scalar(&mut self, y: T) -> Result<T> {
        self.update(&[y])
    }
}

/// Largest possible magnitude of a freshly normalized target after an
/// update with step size `beta`: `s·sqrt((1 − β)/β)`.
pub fn normalized_target_bound<T: Scalar>(beta: T, spread: T) -> T {
    spread * ((T::one() - beta) / beta).sqrt()
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct ScheduleRecord<T> {
    #[serde(flatten)]
    kind: ScheduleKind<T>,
    base_beta: T,
}

/// Checkpoint layout: `mu, nu, spread, epsilon, schedule, t`.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NormalizerRecord<T> {
    mu: Vec<T>,
    nu: Vec<T>,
    spread: T,
    epsilon: T,
    schedule: ScheduleRecord<T>,
    t: u64,
}

impl<T: Scalar> From<NormalizerState<T>> for NormalizerRecord<T> {
    fn from(n: NormalizerState<T>) -> Self {
        Self {
            nu: n.second_moment(),
            mu: n.mu,
            spread: n.spread,
            epsilon: n.epsilon,
            schedule: ScheduleRecord {
                kind: n.schedule.kind(),
                base_beta: n.schedule.base_beta(),
            },
            t: n.schedule.t(),
        }
    }
}

impl<T: Scalar> TryFrom<NormalizerRecord<T>> for NormalizerState<T> {
    type Error = Error;

    fn try_from(r: NormalizerRecord<T>) -> Result<Self> {
        if r.mu.is_empty() {
            return Err(Error::Empty("normalizer mu"));
        }
        let schedule = StepSizeSchedule::new(r.schedule.kind, r.schedule.base_beta)?.with_t(r.t);
        NormalizerState::new(r.mu.len(), schedule)
            .with_spread(r.spread)?
            .with_epsilon(r.epsilon)?
            .with_moments(r.mu, r.nu)
    }
}

/// How [`batch_stats`] turns a sample into a shift and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchMode<T> {
    /// Sample mean and `sqrt(mean of squares − mean²)`.
    Moments,
    /// Midpoint and half-width of the order statistics at ranks
    /// `(t+1)/2 ± p(t−1)/2`, linearly interpolated between integer ranks.
    Percentile { p: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats<T> {
    pub mu: T,
    pub sigma: T,
}

/// Shift and scale of a complete sample. The scale is floored at `sqrt(ε)`.
pub fn batch_stats<T: Scalar>(
    targets: &[T],
    mode: BatchMode<T>,
    epsilon: T,
) -> Result<BatchStats<T>> {
    if targets.len() < 2 {
        return Err(Error::Domain(format!(
            "batch statistics need at least 2 targets, got {}",
            targets.len()
        )));
    }
    if !all_finite(targets) {
        return Err(Error::NonFinite("batch targets"));
    }
    let floor = epsilon.sqrt();
    let n = T::from_usize(targets.len()).expect("length fits");
    match mode {
        BatchMode::Moments => {
            let mean = targets.iter().fold(T::zero(), |a, &y| a + y) / n;
            let var = targets
                .iter()
                .fold(T::zero(), |a, &y| a + (y - mean) * (y - mean))
                / n;
            Ok(BatchStats {
                mu: mean,
                sigma: var.sqrt().max(floor),
            })
        }
        BatchMode::Percentile { p } => {
            if !(p > T::zero() && p <= T::one()) {
                return Err(Error::Domain(format!("coverage {p} not in (0, 1]")));
            }
            let mut sorted = targets.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let half = (n + T::one()) / T::lit(2.0);
            let reach = p * (n - T::one()) / T::lit(2.0);
            let hi = order_statistic(&sorted, half + reach);
            let lo = order_statistic(&sorted, half - reach);
            Ok(BatchStats {
                mu: (hi + lo) / T::lit(2.0),
                sigma: ((hi - lo) / T::lit(2.0)).max(floor),
            })
        }
    }
}

/// Order statistic at a 1-based, possibly fractional rank.
fn order_statistic<T: Scalar>(sorted: &[T], rank: T) -> T {
    let last = sorted.len() - 1;
    let pos = (rank - T::one()).max(T::zero());
    let lo = pos.floor().to_usize().unwrap_or(0).min(last);
    let hi = (lo + 1).min(last);
    let frac = pos - T::from_usize(lo).expect("index fits");
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(beta: f64) -> StepSizeSchedule<f64> {
        StepSizeSchedule::constant(beta).unwrap()
    }

    #[test]
    fn first_sample_with_bias_correction() {
        let mut n = NormalizerState::new(1, StepSizeSchedule::bias_corrected(0.01).unwrap());
        n.update(&[7.0]).unwrap();
        assert_eq!(n.mean(), &[7.0]);
        assert_eq!(n.second_moment(), vec![49.0]);
        assert_eq!(n.variance(), vec![DEFAULT_EPSILON]);
    }

    #[test]
    fn two_step_recurrence() {
        let mut n = NormalizerState::new(1, constant(0.5))
            .with_epsilon(1e-12)
            .unwrap()
            .with_moments(vec![0.0], vec![0.0])
            .unwrap();
        n.update(&[1.0]).unwrap();
        assert_eq!(n.mean(), &[0.5]);
        assert_eq!(n.second_moment(), vec![0.5]);
        n.update(&[2.0]).unwrap();
        assert_eq!(n.mean(), &[1.25]);
        assert!((n.second_moment()[0] - 2.25).abs() < 1e-15);
        assert!((n.variance()[0] - 0.6875).abs() < 1e-15);
        let z = n.normalize(&[2.0]).unwrap()[0];
        assert!((z - 0.75 / 0.6875f64.sqrt()).abs() < 1e-12);
        assert!((z - 0.9045).abs() < 1e-4);
    }

    #[test]
    fn normalize_at_mean_is_zero_and_unnormalize_inverts() {
        let n = NormalizerState::new(2, constant(0.1))
            .with_moments(vec![3.0, -1.0], vec![13.0, 5.0])
            .unwrap();
        assert_eq!(n.normalize(&[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(n.unnormalize(&[0.0, 0.0]).unwrap(), vec![3.0, -1.0]);
        let back = n.unnormalize(&n.normalize(&[10.0, 0.5]).unwrap()).unwrap();
        assert!((back[0] - 10.0).abs() < 1e-12 * 10.0);
        assert!((back[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unnormalize_spread_is_one_std() {
        let n = NormalizerState::new(1, constant(0.1))
            .with_spread(0.5)
            .unwrap()
            .with_moments(vec![2.0], vec![13.0])
            .unwrap();
        let y = n.unnormalize(&[0.5]).unwrap()[0];
        assert!((y - 5.0).abs() < 1e-12);
        assert!((n.normalize(&[5.0]).unwrap()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let mut n = NormalizerState::new(2, constant(0.1));
        assert!(matches!(
            n.update(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            n.update(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(n.normalize(&[f64::INFINITY, 0.0]).is_err());
        assert_eq!(n.t(), 0);
    }

    #[test]
    fn bound_holds_for_spike() {
        let beta = 1e-4;
        let mut n = NormalizerState::new(1, constant(beta));
        for _ in 0..100 {
            n.update(&[1.0]).unwrap();
        }
        n.update(&[1e12]).unwrap();
        let z = n.normalize(&[1e12]).unwrap()[0];
        let b = normalized_target_bound(beta, 1.0);
        assert!(z.abs() <= b + 1e-9, "{z} > {b}");
        assert!(b < 100.0 && b > 99.99);
    }

    #[test]
    fn json_checkpoint_fields() {
        let mut n = NormalizerState::new(1, constant(0.5));
        n.update(&[3.0]).unwrap();
        let v = serde_json::to_value(&n).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["epsilon", "mu", "nu", "schedule", "spread", "t"]);
        assert_eq!(v["t"], 1);
        assert_eq!(v["schedule"]["kind"], "constant");
        let back: NormalizerState<f64> = serde_json::from_value(v).unwrap();
        assert_eq!(back.t(), 1);
        assert!((back.mean()[0] - n.mean()[0]).abs() < 1e-15);
        assert!((back.sigma()[0] - n.sigma()[0]).abs() < 1e-12);
    }

    #[test]
    fn json_rejects_invalid() {
        let bad = r#"{"mu":[0.0],"nu":[1.0],"spread":1.0,"epsilon":1e-4,
            "schedule":{"kind":"constant","base_beta":2.0},"t":0}"#;
        assert!(serde_json::from_str::<NormalizerState<f64>>(bad).is_err());
    }

    #[test]
    fn batch_moments() {
        let s = batch_stats(&[1.0, 2.0, 3.0], BatchMode::Moments, 1e-4).unwrap();
        assert_eq!(s.mu, 2.0);
        assert!((s.sigma - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batch_percentile_full_range() {
        let s = batch_stats(&[0.0, 10.0], BatchMode::Percentile { p: 1.0 }, 1e-4).unwrap();
        assert_eq!((s.mu, s.sigma), (5.0, 5.0));
    }

    #[test]
    fn batch_percentile_interpolates() {
        // t = 5, p = 0.5: ranks 3 ± 1 → values 2 and 4 of 1..=5.
        let ys = [5.0, 1.0, 4.0, 2.0, 3.0];
        let s = batch_stats(&ys, BatchMode::Percentile { p: 0.5 }, 1e-4).unwrap();
        assert_eq!((s.mu, s.sigma), (3.0, 1.0));
        // t = 4, p = 0.5: ranks 2.5 ± 0.75 → 1.75 and 3.25 on 1..=4.
        let s = batch_stats(
            &[1.0f64, 2.0, 3.0, 4.0],
            BatchMode::Percentile { p: 0.5 },
            1e-4,
        )
        .unwrap();
        assert!((s.mu - 2.5).abs() < 1e-15 && (s.sigma - 0.75).abs() < 1e-15);
    }

    #[test]
    fn batch_degenerate_floors() {
        let s = batch_stats(&[4.0, 4.0, 4.0], BatchMode::Moments, 1e-4).unwrap();
        assert_eq!((s.mu, s.sigma), (4.0, 1e-2));
        let s = batch_stats(&[4.0, 4.0, 4.0], BatchMode::Percentile { p: 0.9 }, 1e-4).unwrap();
        assert_eq!((s.mu, s.sigma), (4.0, 1e-2));
    }

    #[test]
    fn batch_errors() {
        assert!(batch_stats(&[1.0], BatchMode::Moments, 1e-4).is_err());
        assert!(batch_stats(&[1.0, 2.0], BatchMode::Percentile { p: 0.0 }, 1e-4).is_err());
        assert!(batch_stats(&[1.0, f64::NAN], BatchMode::Moments, 1e-4).is_err());
    }
}
