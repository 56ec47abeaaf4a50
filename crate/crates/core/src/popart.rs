//! Output layer with adaptive target normalization and the SGD variants
//! that act on it.
//!
//! The unnormalized function is `f(x) = Σ(W h_θ(x) + b) + μ` with a diagonal
//! `Σ`. The Jacobian of `h_θ` is oriented parameters × outputs, so every
//! θ-update below is `θ ← θ − α J u` for an output-space vector `u`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::network::{ForwardTrace, Mlp};
use crate::scalar::{all_finite, Scalar};
use crate::stats::NormalizerState;

/// Final linear map `W h + b` with `W` stored row-major (`k × m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearHead<T> {
    k: usize,
    m: usize,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> LinearHead<T> {
    pub fn zeros(k: usize, m: usize) -> Self {
        Self {
            k,
            m,
            weights: vec![T::zero(); k * m],
            bias: vec![T::zero(); k],
        }
    }

    /// `W = I`, `b = 0`.
    pub fn identity(k: usize) -> Self {
        let mut head = Self::zeros(k, k);
        for i in 0..k {
            head.weights[i * k + i] = T::one();
        }
        head
    }

    pub fn from_parts(k: usize, m: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        check_len("head weights", k * m, weights.len())?;
        check_len("head bias", k, bias.len())?;
        Ok(Self {
            k,
            m,
            weights,
            bias,
        })
    }

    pub fn outputs(&self) -> usize {
        self.k
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn eval(&self, h: &[T]) -> Result<Vec<T>> {
        check_len("head input", self.m, h.len())?;
        Ok(self
            .weights
            .chunks_exact(self.m)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(h).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect())
    }

    /// `Wᵀ v` for an output-space vector `v`.
    fn transpose_apply(&self, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.m];
        for (row, &vi) in self.weights.chunks_exact(self.m).zip(v) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + w * vi;
            }
        }
        out
    }

    /// `W ← W − α δ hᵀ`, `b ← b − α δ`.
    fn sgd_update(&mut self, delta: &[T], h: &[T], alpha: T) {
        for ((row, b), &d) in self
            .weights
            .chunks_exact_mut(self.m)
            .zip(&mut self.bias)
            .zip(delta)
        {
            for (w, &hj) in row.iter_mut().zip(h) {
                *w = *w - alpha * d * hj;
            }
            *b = *b - alpha * d;
        }
    }

    fn is_finite(&self) -> bool {
        all_finite(&self.weights) && all_finite(&self.bias)
    }
}

/// A [`LinearHead`] together with the diagonal scale `Σ` and shift `μ` that
/// map its (normalized) outputs back to target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OutputLayer<T> {
    head: LinearHead<T>,
    sigma: Vec<T>,
    mu: Vec<T>,
}

impl<T: Scalar> OutputLayer<T> {
    /// Starts at `Σ = I`, `μ = 0`.
    pub fn new(head: LinearHead<T>) -> Self {
        let k = head.outputs();
        Self {
            head,
            sigma: vec![T::one(); k],
            mu: vec![T::zero(); k],
        }
    }

    pub fn with_stats(head: LinearHead<T>, sigma: Vec<T>, mu: Vec<T>) -> Result<Self> {
        let mut layer = Self::new(head);
        layer.set_stats(&sigma, &mu)?;
        Ok(layer)
    }

    pub fn head(&self) -> &LinearHead<T> {
        &self.head
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn outputs(&self) -> usize {
        self.head.outputs()
    }

    /// Normalized output `W h + b`.
    pub fn normalized(&self, h: &[T]) -> Result<Vec<T>> {
        self.head.eval(h)
    }

    /// Unnormalized output `Σ(W h + b) + μ`.
    pub fn unnormalized(&self, h: &[T]) -> Result<Vec<T>> {
        Ok(self
            .head
            .eval(h)?
            .into_iter()
            .zip(&self.sigma)
            .zip(&self.mu)
            .map(|((z, &s), &m)| s * z + m)
            .collect())
    }

    /// Changes `Σ, μ` to new values and compensates `W, b` so that the
    /// unnormalized output is unchanged for every input:
    /// `W ← Σ_new⁻¹ Σ W`, `b ← Σ_new⁻¹ (Σ b + μ − μ_new)`.
    pub fn rescale_to(&mut self, sigma_new: &[T], mu_new: &[T]) -> Result<()> {
        validate_stats(self.outputs(), sigma_new, mu_new)?;
        let m = self.head.m;
        for (i, (row, b)) in self
            .head
            .weights
            .chunks_exact_mut(m)
            .zip(&mut self.head.bias)
            .enumerate()
        {
            let (s_old, s_new) = (self.sigma[i], sigma_new[i]);
            if s_old == s_new && self.mu[i] == mu_new[i] {
                continue;
            }
            let ratio = s_old / s_new;
            for w in row.iter_mut() {
                *w = *w * ratio;
            }
            *b = (s_old * *b + self.mu[i] - mu_new[i]) / s_new;
        }
        self.sigma.copy_from_slice(sigma_new);
        self.mu.copy_from_slice(mu_new);
        Ok(())
    }

    /// Replaces `Σ, μ` without touching `W, b`; the unnormalized outputs move.
    pub fn set_stats(&mut self, sigma: &[T], mu: &[T]) -> Result<()> {
        validate_stats(self.outputs(), sigma, mu)?;
        self.sigma.copy_from_slice(sigma);
        self.mu.copy_from_slice(mu);
        Ok(())
    }
}

fn validate_stats<T: Scalar>(k: usize, sigma: &[T], mu: &[T]) -> Result<()> {
    check_len("scale", k, sigma.len())?;
    check_len("shift", k, mu.len())?;
    for (index, &s) in sigma.iter().enumerate() {
        if !(s > T::zero() && s.is_finite()) {
            return Err(Error::NonPositiveScale {
                index,
                value: s.as_f64(),
            });
        }
    }
    if !all_finite(mu) {
        return Err(Error::NonFinite("shift"));
    }
    Ok(())
}

/// New scale and shift after observing a target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleShift<T> {
    pub sigma: Vec<T>,
    pub mu: Vec<T>,
}

impl<T: Scalar> ScaleShift<T> {
    fn broadcast(self, k: usize) -> Result<Self> {
        match self.sigma.len() {
            n if n == k => Ok(self),
            1 => Ok(Self {
                sigma: vec![self.sigma[0]; k],
                mu: vec![self.mu[0]; k],
            }),
            n => Err(Error::DimensionMismatch {
                context: "statistics",
                expected: k,
                got: n,
            }),
        }
    }
}

/// Source of the scale and shift used by the normalizing optimizers.
pub trait TargetStatistics<T> {
    /// Number of independently normalized components (1 for a shared scalar).
    fn dim(&self) -> usize;

    /// Observes a target and returns the scale and shift to use for it.
    fn observe(&mut self, y: &[T]) -> Result<ScaleShift<T>>;
}

impl<T: Scalar> TargetStatistics<T> for NormalizerState<T> {
    fn dim(&self) -> usize {
        NormalizerState::dim(self)
    }

    fn observe(&mut self, y: &[T]) -> Result<ScaleShift<T>> {
        self.update(y)?;
        Ok(ScaleShift {
            sigma: self.sigma(),
            mu: self.mean().to_vec(),
        })
    }
}

/// Replays a prescribed sequence of scales and shifts, ignoring the targets.
#[derive(Debug, Clone)]
pub struct ScaleSequence<T> {
    steps: Vec<ScaleShift<T>>,
    next: usize,
}

impl<T: Scalar> ScaleSequence<T> {
    pub fn new(steps: Vec<ScaleShift<T>>) -> Self {
        Self { steps, next: 0 }
    }
}

impl<T: Scalar> TargetStatistics<T> for ScaleSequence<T> {
    fn dim(&self) -> usize {
        self.steps.first().map_or(1, |s| s.sigma.len())
    }

    fn observe(&mut self, _y: &[T]) -> Result<ScaleShift<T>> {
        let s = self
            .steps
            .get(self.next)
            .cloned()
            .ok_or(Error::Empty("scale sequence exhausted"))?;
        self.next += 1;
        Ok(s)
    }
}

/// Regression target for one step.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a, T> {
    /// A value for every output.
    Full(&'a [T]),
    /// A value for a single output (e.g. the action taken); the remaining
    /// outputs receive no error. Requires scalar statistics.
    Single { index: usize, value: T },
}

impl<T: Scalar> Target<'_, T> {
    fn validate(&self, k: usize) -> Result<()> {
        match *self {
            Target::Full(y) => {
                check_len("target", k, y.len())?;
                if !all_finite(y) {
                    return Err(Error::NonFinite("target"));
                }
            }
            Target::Single { index, value } => {
                if index >= k {
                    return Err(Error::DimensionMismatch {
                        context: "target index",
                        expected: k,
                        got: index,
                    });
                }
                if !value.is_finite() {
                    return Err(Error::NonFinite("target"));
                }
            }
        }
        Ok(())
    }

    fn observe<S: TargetStatistics<T> + ?Sized>(
        &self,
        stats: &mut S,
        k: usize,
    ) -> Result<ScaleShift<T>> {
        let s = match *self {
            Target::Full(y) => {
                check_len("statistics", k, stats.dim())?;
                stats.observe(y)?
            }
            Target::Single { value, .. } => {
                check_len("statistics for single target", 1, stats.dim())?;
                stats.observe(&[value])?
            }
        };
        s.broadcast(k)
    }

    /// Applies `f(i, y_i)` to each active component, zero elsewhere.
    fn per_output(&self, k: usize, mut f: impl FnMut(usize, T) -> T) -> Vec<T> {
        match *self {
            Target::Full(y) => y.iter().enumerate().map(|(i, &v)| f(i, v)).collect(),
            Target::Single { index, value } => {
                let mut out = vec![T::zero(); k];
                out[index] = f(index, value);
                out
            }
        }
    }
}

/// Diagnostics for one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepReport<T> {
    /// Prediction minus target in normalized units.
    pub normalized_error: Vec<T>,
    /// Prediction minus target in target units (before the update).
    pub unnormalized_error: Vec<T>,
    /// The target(s) in normalized units, after the statistics update.
    pub normalized_target: Vec<T>,
    /// `½‖normalized_error‖²`.
    pub squared_loss: T,
    /// ℓ² norm of the gradient over θ, W and b, before the update.
    pub gradient_norm: T,
}

/// Intermediate values exposed to an instrumentation hook, in order.
#[derive(Debug)]
pub enum StepEvent<'a, T> {
    /// Statistics were updated (and, for Pop-Art, `W, b` rescaled).
    StatsUpdated {
        sigma: &'a [T],
        mu: &'a [T],
        layer: Option<&'a OutputLayer<T>>,
    },
    /// The error that drives the SGD update, with the stored `h_θ(x)` and
    /// the head parameters it was computed from.
    ErrorComputed {
        h: &'a [T],
        delta: &'a [T],
        head: &'a LinearHead<T>,
    },
    Finished(&'a TrainStepReport<T>),
}

/// Hook that ignores all events.
pub fn no_hook<T>(_: StepEvent<'_, T>) {}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha >= T::zero() && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "step size {alpha} must be finite and non-negative"
        )))
    }
}

fn check_shapes<T: Scalar>(net: &Mlp<T>, head: &LinearHead<T>) -> Result<()> {
    check_len(
        "head input vs network output",
        net.output_dim(),
        head.inputs(),
    )
}

/// SGD on `½‖δ‖²` given the error `delta` and the output-space vector
/// `theta_upstream` that multiplies the Jacobian.
fn apply_sgd<T: Scalar>(
    net: &mut Mlp<T>,
    head: &mut LinearHead<T>,
    trace: &ForwardTrace<T>,
    delta: &[T],
    theta_upstream: &[T],
    alpha: T,
) -> Result<T> {
    let h = trace.output();
    let grad_theta = net.backward(trace, theta_upstream)?;
    let d2 = delta.iter().fold(T::zero(), |a, &d| a + d * d);
    let h2 = h.iter().fold(T::zero(), |a, &v| a + v * v);
    let g2 = grad_theta.iter().fold(T::zero(), |a, &g| a + g * g);
    let norm = (g2 + d2 * h2 + d2).sqrt();
    net.apply_param_step(&grad_theta, alpha)?;
    head.sgd_update(delta, h, alpha);
    Ok(norm)
}

fn half_square<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &d| a + d * d) / T::lit(2.0)
}

/// Shared body of the Pop-Art and Art steps once `Σ, μ` are in place.
fn normalized_target_step<T: Scalar>(
    net: &mut Mlp<T>,
    layer: &mut OutputLayer<T>,
    x: &[T],
    target: Target<'_, T>,
    alpha: T,
    hook: &mut impl FnMut(StepEvent<'_, T>),
) -> Result<TrainStepReport<T>> {
    let k = layer.outputs();
    let trace = net.forward_trace(x)?;
    let h = trace.output();
    let pred = layer.head.eval(h)?;
    let y_tilde = target.per_output(k, |i, y| (y - layer.mu[i]) / layer.sigma[i]);
    let delta = target.per_output(k, |i, _| pred[i] - y_tilde[i]);
    hook(StepEvent::ErrorComputed {
        h,
        delta: &delta,
        head: &layer.head,
    });
    let upstream = layer.head.transpose_apply(&delta);
    let gradient_norm = apply_sgd(net, &mut layer.head, &trace, &delta, &upstream, alpha)?;
    let report = TrainStepReport {
        unnormalized_error: delta
            .iter()
            .zip(&layer.sigma)
            .map(|(&d, &s)| d * s)
            .collect(),
        squared_loss: half_square(&delta),
        normalized_error: delta,
        normalized_target: y_tilde,
        gradient_norm,
    };
    hook(StepEvent::Finished(&report));
    Ok(report)
}

/// SGD on squared loss with Pop-Art:
/// 1. update the statistics from the target,
/// 2. rescale `W, b` to preserve the unnormalized outputs,
/// 3. `δ = W h + b − Σ⁻¹(y − μ)`,
/// 4. `θ ← θ − α J Wᵀ δ`, 5. `W ← W − α δ hᵀ`, 6. `b ← b − α δ`.
pub fn popart_sgd_step<T: Scalar, S: TargetStatistics<T> + ?Sized>(
    net: &mut Mlp<T>,
    layer: &mut OutputLayer<T>,
    stats: &mut S,
    x: &[T],
    target: Target<'_, T>,
    alpha: T,
    hook: &mut impl FnMut(StepEvent<'_, T>),
) -> Result<TrainStepReport<T>> {
    check_alpha(alpha)?;
    check_shapes(net, &layer.head)?;
    target.validate(layer.outputs())?;
    let new = target.observe(stats, layer.outputs())?;
    layer.rescale_to(&new.sigma, &new.mu)?;
    hook(StepEvent::StatsUpdated {
        sigma: &layer.sigma,
        mu: &layer.mu,
        layer: Some(layer),
    });
    normalized_target_step(net, layer, x, target, alpha, hook)
}

/// Pop-Art without output preservation: the statistics are updated and
/// adopted, but `W, b` are not compensated.
pub fn art_only_sgd_step<T: Scalar, S: TargetStatistics<T> + ?Sized>(
    net: &mut Mlp<T>,
    layer: &mut OutputLayer<T>,
    stats: &mut S,
    x: &[T],
    target: Target<'_, T>,
    alpha: T,
    hook: &mut impl FnMut(StepEvent<'_, T>),
) -> Result<TrainStepReport<T>> {
    check_alpha(alpha)?;
    check_shapes(net, &layer.head)?;
    target.validate(layer.outputs())?;
    let new = target.observe(stats, layer.outputs())?;
    layer.set_stats(&new.sigma, &new.mu)?;
    hook(StepEvent::StatsUpdated {
        sigma: &layer.sigma,
        mu: &layer.mu,
        layer: Some(layer),
    });
    normalized_target_step(net, layer, x, target, alpha, hook)
}

/// Normalized SGD: the head learns unnormalized targets directly while the
/// lower layers see `θ ← θ − α J (Σ⁻¹W)ᵀ Σ⁻¹ δ`, with `δ = W h + b − y`.
pub fn normalized_sgd_step<T: Scalar, S: TargetStatistics<T> + ?Sized>(
    net: &mut Mlp<T>,
    head: &mut LinearHead<T>,
    stats: &mut S,
    x: &[T],
    target: Target<'_, T>,
    alpha: T,
    hook: &mut impl FnMut(StepEvent<'_, T>),
) -> Result<TrainStepReport<T>> {
    check_alpha(alpha)?;
    check_shapes(net, head)?;
    let k = head.outputs();
    target.validate(k)?;
    let scale = target.observe(stats, k)?;
    validate_stats(k, &scale.sigma, &scale.mu)?;
    hook(StepEvent::StatsUpdated {
        sigma: &scale.sigma,
        mu: &scale.mu,
        layer: None,
    });
    let trace = net.forward_trace(x)?;
    let h = trace.output();
    let pred = head.eval(h)?;
    let delta = target.per_output(k, |i, y| pred[i] - y);
    hook(StepEvent::ErrorComputed {
        h,
        delta: &delta,
        head,
    });
    let scaled: Vec<T> = delta
        .iter()
        .zip(&scale.sigma)
        .map(|(&d, &s)| d / (s * s))
        .collect();
    let upstream = head.transpose_apply(&scaled);
    let normalized_error: Vec<T> = delta
        .iter()
        .zip(&scale.sigma)
        .map(|(&d, &s)| d / s)
        .collect();
    let normalized_target = target.per_output(k, |i, y| (y - scale.mu[i]) / scale.sigma[i]);
    let gradient_norm = apply_sgd(net, head, &trace, &delta, &upstream, alpha)?;
    let report = TrainStepReport {
        squared_loss: half_square(&normalized_error),
        normalized_error,
        unnormalized_error: delta,
        normalized_target,
        gradient_norm,
    };
    hook(StepEvent::Finished(&report));
    Ok(report)
}

/// Plain SGD on the squared error in target units.
pub fn plain_sgd_step<T: Scalar>(
    net: &mut Mlp<T>,
    head: &mut LinearHead<T>,
    x: &[T],
    target: Target<'_, T>,
    alpha: T,
    hook: &mut impl FnMut(StepEvent<'_, T>),
) -> Result<TrainStepReport<T>> {
    check_alpha(alpha)?;
    check_shapes(net, head)?;
    let k = head.outputs();
    target.validate(k)?;
    let trace = net.forward_trace(x)?;
    let h = trace.output();
    let pred = head.eval(h)?;
    let delta = target.per_output(k, |i, y| pred[i] - y);
    hook(StepEvent::ErrorComputed {
        h,
        delta: &delta,
        head,
    });
    let upstream = head.transpose_apply(&delta);
    let gradient_norm = apply_sgd(net, head, &trace, &delta, &upstream, alpha)?;
    let report = TrainStepReport {
        squared_loss: half_square(&delta),
        normalized_target: target.per_output(k, |_, y| y),
        normalized_error: delta.clone(),
        unnormalized_error: delta,
        gradient_norm,
    };
    hook(StepEvent::Finished(&report));
    Ok(report)
}

/// Which update rule a [`Learner`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    Art,
    #[serde(rename = "popart")]
    PopArt,
    NormalizedSgd,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Sgd,
        Method::Art,
        Method::PopArt,
        Method::NormalizedSgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Art => "art",
            Method::PopArt => "popart",
            Method::NormalizedSgd => "normalized_sgd",
        }
    }

    /// Whether the method has a statistics step size to tune.
    pub fn uses_statistics(self) -> bool {
        !matches!(self, Method::Sgd)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// A network, its output layer and its normalizer, trained with one
/// [`Method`].
///
/// For `Sgd` and `NormalizedSgd` the output layer keeps `Σ = I, μ = 0`, so
/// [`predict`](Self::predict) is the head output itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Learner<T> {
    pub method: Method,
    pub net: Mlp<T>,
    pub layer: OutputLayer<T>,
    pub normalizer: NormalizerState<T>,
}

impl<T: Scalar> Learner<T> {
    pub fn new(
        method: Method,
        net: Mlp<T>,
        head: LinearHead<T>,
        normalizer: NormalizerState<T>,
    ) -> Result<Self> {
        check_shapes(&net, &head)?;
        Ok(Self {
            method,
            net,
            layer: OutputLayer::new(head),
            normalizer,
        })
    }

    /// Unnormalized prediction `f(x)`.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        let h = self.net.forward(x)?;
        self.layer.unnormalized(&h)
    }

    pub fn step(&mut self, x: &[T], target: Target<'_, T>, alpha: T) -> Result<TrainStepReport<T>> {
        self.step_with(x, target, alpha, &mut no_hook)
    }

    pub fn step_with(
        &mut self,
        x: &[T],
        target: Target<'_, T>,
        alpha: T,
        hook: &mut impl FnMut(StepEvent<'_, T>),
    ) -> Result<TrainStepReport<T>> {
        let Self {
            method,
            net,
            layer,
            normalizer,
        } = self;
        match method {
            Method::Sgd => plain_sgd_step(net, &mut layer.head, x, target, alpha, hook),
            Method::Art => art_only_sgd_step(net, layer, normalizer, x, target, alpha, hook),
            Method::PopArt => popart_sgd_step(net, layer, normalizer, x, target, alpha, hook),
            Method::NormalizedSgd => {
                normalized_sgd_step(net, &mut layer.head, normalizer, x, target, alpha, hook)
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.net.params_finite() && self.layer.head.is_finite()
    }
}
