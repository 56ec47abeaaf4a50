//! Step-size schedules for the running statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the step size `β_t` evolves with the update count `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound = "T: Scalar")]
pub enum ScheduleKind<T> {
    /// `β_t = β`: exponential moving average.
    Constant,
    /// `β_t = 1/t`: exact running average.
    InverseT,
    /// `β_t = β / (1 − (1 − β)^t)`: constant-β weighting with the initial
    /// value removed after the first step.
    BiasCorrected,
    /// `β_t = β / (1 + t/τ)`: satisfies the usual stochastic approximation
    /// conditions (`Σβ_t = ∞`, `Σβ_t² < ∞`).
    RobbinsMonro { tau: T },
}

/// A step-size schedule together with its step counter.
///
/// The counter starts at zero; [`advance`](Self::advance) increments it and
/// returns the step size for the new count, so the first update uses `t = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepSizeSchedule<T> {
    #[serde(flatten)]
    kind: ScheduleKind<T>,
    base_beta: T,
    #[serde(default)]
    t: u64,
}

pub const DEFAULT_TRACKER_BETA: f64 = 0.1;
pub const DEFAULT_TRACKER_TAU: f64 = 1000.0;

impl<T: Scalar> StepSizeSchedule<T> {
    pub fn new(kind: ScheduleKind<T>, base_beta: T) -> Result<Self> {
        let s = Self {
            kind,
            base_beta,
            t: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(beta: T) -> Result<Self> {
        Self::new(ScheduleKind::Constant, beta)
    }

    pub fn inverse_t() -> Self {
        Self {
            kind: ScheduleKind::InverseT,
            base_beta: T::one(),
            t: 0,
        }
    }

    pub fn bias_corrected(beta: T) -> Result<Self> {
        Self::new(ScheduleKind::BiasCorrected, beta)
    }

    pub fn robbins_monro(beta0: T, tau: T) -> Result<Self> {
        Self::new(ScheduleKind::RobbinsMonro { tau }, beta0)
    }

    /// Robbins–Monro schedule with `β₀ = 0.1`, `τ = 1000`, the default for
    /// percentile and extreme trackers.
    pub fn tracker_default() -> Self {
        Self::robbins_monro(T::lit(DEFAULT_TRACKER_BETA), T::lit(DEFAULT_TRACKER_TAU))
            .expect("default schedule is valid")
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let b = self.base_beta;
        if !(b > T::zero() && b <= T::one()) {
            return Err(Error::Domain(format!("base step size {b} not in (0, 1]")));
        }
        if let ScheduleKind::RobbinsMonro { tau } = self.kind {
            if !(tau > T::zero() && tau.is_finite()) {
                return Err(Error::Domain(format!(
                    "schedule time constant {tau} must be positive"
                )));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ScheduleKind<T> {
        self.kind
    }

    pub fn base_beta(&self) -> T {
        self.base_beta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub(crate) fn with_t(mut self, t: u64) -> Self {
        self.t = t;
        self
    }

    /// Step size at the current count. Errors before the first
    /// [`advance`](Self::advance).
    pub fn beta(&self) -> Result<T> {
        if self.t == 0 {
            return Err(Error::Domain("step size requested at t = 0".into()));
        }
        Ok(self.beta_at(self.t))
    }

    /// Increments the counter and returns `β_t` for the new `t`.
    pub fn advance(&mut self) -> T {
        self.t += 1;
        self.beta_at(self.t)
    }

    /// Step size for an arbitrary `t ≥ 1`, independent of the stored counter.
    pub fn beta_at(&self, t: u64) -> T {
        debug_assert!(t >= 1);
        let b = self.base_beta;
        let tf = T::from_u64(t).unwrap_or_else(T::max_value);
        match self.kind {
            ScheduleKind::Constant => b,
            ScheduleKind::InverseT => T::one() / tf,
            ScheduleKind::BiasCorrected => {
                if t == 1 {
                    return T::one();
                }
                // 1 − (1 − β)^t without cancellation for small β.
                let denom = -(tf * (-b).ln_1p()).exp_m1();
                (b / denom).min(T::one())
            }
            ScheduleKind::RobbinsMonro { tau } => b / (T::one() + tf / tau),
        }
    }
}
