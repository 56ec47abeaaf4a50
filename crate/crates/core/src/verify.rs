//! Fixed-seed property checks for the normalization and optimizer
//! guarantees, sized to run in seconds. Each check reports the measured
//! quantity next to its tolerance.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::Result;
use crate::network::{Activation, Mlp};
use crate::popart::{
    no_hook, normalized_sgd_step, popart_sgd_step, LinearHead, OutputLayer, ScaleSequence,
    ScaleShift, Target,
};
use crate::stats::{
    batch_stats, coverage_from_spread, normalized_target_bound, spread_from_coverage, BatchMode,
    ExtremeTracker, NormalizerState, PercentileTracker, StepSizeSchedule,
};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Measured value against its tolerance.
    pub detail: String,
}

impl Check {
    fn within(name: &'static str, measured: f64, tol: f64) -> Self {
        Self {
            name,
            passed: measured <= tol,
            detail: format!("{measured:.3e} <= {tol:.1e}"),
        }
    }

    fn near(name: &'static str, measured: f64, expected: f64, tol: f64) -> Self {
        Self {
            name,
            passed: (measured - expected).abs() <= tol,
            detail: format!("{measured:.4} = {expected:.4} ± {tol}"),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status}  {:<32} {}", self.name, self.detail)
    }
}

fn rng(seed: u64, stream: u64) -> Xoshiro256PlusPlus {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    for _ in 0..stream {
        r.jump();
    }
    r
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random rescales of a random output layer leave `f` unchanged.
pub fn output_preservation(seed: u64, n: usize) -> Result<Check> {
    let mut r = rng(seed, 1);
    let (k, m) = (3, 4);
    let weights = (0..k * m).map(|_| r.random_range(-2.0..2.0)).collect();
    let bias = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
    let mut layer = OutputLayer::new(LinearHead::from_parts(k, m, weights, bias)?);
    let probes: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..m).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let before: Vec<Vec<f64>> = probes
            .iter()
            .map(|h| layer.unnormalized(h))
            .collect::<Result<_>>()?;
        let sigma: Vec<f64> = (0..k)
            .map(|_| 10f64.powf(r.random_range(-3.0..3.0)))
            .collect();
        let mu: Vec<f64> = (0..k).map(|_| r.random_range(-1e3..1e3)).collect();
        layer.rescale_to(&sigma, &mu)?;
        for (h, b) in probes.iter().zip(&before) {
            for (x, y) in layer.unnormalized(h)?.iter().zip(b) {
                worst = worst.max(rel(*x, *y));
            }
        }
    }
    Ok(Check::within("output preservation", worst, 1e-10))
}

/// `|ỹ|` never exceeds `s √((1−β)/β)` right after an update, even with
/// `10¹²` spikes.
pub fn normalized_target_bound_holds(seed: u64, n_streams: usize) -> Result<Check> {
    let mut r = rng(seed, 2);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n_streams {
        let beta = [1e-4, 1e-2, 0.5][i % 3];
        let spread = [1.0, 0.5, 2.0][(i / 3) % 3];
        let mut norm = NormalizerState::<f64>::new(1, StepSizeSchedule::constant(beta)?)
            .with_spread(spread)?;
        let bound = normalized_target_bound(beta, spread);
        for _ in 0..r.random_range(1..20) {
            let y = if r.random_bool(0.2) {
                r.random_range(-1e12..1e12)
            } else {
                r.random_range(-10.0..10.0)
            };
            norm.update(&[y])?;
            let yt: f64 = norm.normalize(&[y])?[0];
            worst = worst.max(yt.abs() - bound);
        }
    }
    Ok(Check::within(
        "normalized target bound",
        worst.max(0.0),
        1e-9,
    ))
}

/// Pop-Art SGD and normalized SGD from `Σ = I, μ = 0` under a shared
/// random scale sequence give the same lower-layer parameters and outputs.
pub fn optimizer_equivalence(seed: u64, steps: usize) -> Result<Check> {
    let mut r = rng(seed, 3);
    let net = Mlp::init(&[3, 6, 4], Activation::Tanh, seed)?;
    let k = 2;
    let weights = (0..k * 4).map(|_| r.random_range(-0.5..0.5)).collect();
    let head = LinearHead::from_parts(k, 4, weights, vec![0.0; k])?;
    let seq: Vec<ScaleShift<f64>> = (0..steps)
        .map(|_| ScaleShift {
            sigma: (0..k).map(|_| r.random_range(0.5..2.0)).collect(),
            mu: (0..k).map(|_| r.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let (mut net1, mut layer) = (net.clone(), OutputLayer::new(head.clone()));
    let (mut net2, mut head2) = (net, head);
    let (mut s1, mut s2) = (ScaleSequence::new(seq.clone()), ScaleSequence::new(seq));
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
        popart_sgd_step(
            &mut net1,
            &mut layer,
            &mut s1,
            &x,
            Target::Full(&y),
            0.05,
            &mut no_hook,
        )?;
        normalized_sgd_step(
            &mut net2,
            &mut head2,
            &mut s2,
            &x,
            Target::Full(&y),
            0.05,
            &mut no_hook,
        )?;
        for (a, b) in net1.params().iter().zip(net2.params()) {
            worst = worst.max(rel(*a, b));
        }
        let f1 = layer.unnormalized(&net1.forward(&x)?)?;
        let f2 = head2.eval(&net2.forward(&x)?)?;
        for (a, b) in f1.iter().zip(&f2) {
            worst = worst.max(rel(*a, *b));
        }
    }
    Ok(Check::within("optimizer equivalence", worst, 1e-8))
}

/// With `β_t = 1/t` the running mean and second moment equal the batch
/// ones.
pub fn incremental_matches_batch(seed: u64, len: usize) -> Result<Check> {
    let mut r = rng(seed, 4);
    let ys: Vec<f64> = (0..len).map(|_| r.random_range(-50.0..150.0)).collect();
    let mut norm = NormalizerState::new(1, StepSizeSchedule::inverse_t());
    for &y in &ys {
        norm.update(&[y])?;
    }
    let n = len as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let second = ys.iter().map(|y| y * y).sum::<f64>() / n;
    let err = rel(norm.mean()[0], mean).max(rel(norm.second_moment()[0], second));
    Ok(Check::within("incremental = batch statistics", err, 1e-12))
}

/// Fraction of normalized normal samples inside `[−1, 1]` matches
/// `erf(1/(√2 s))`.
pub fn erf_coverage(seed: u64, n: usize) -> Result<Check> {
    let mut r = rng(seed, 5);
    let dist = Normal::new(3.0, 2.0).expect("valid normal");
    let ys: Vec<f64> = (0..n).map(|_| dist.sample(&mut r)).collect();
    let s = 1.0;
    let stats = batch_stats(&ys, BatchMode::Moments, 0.0)?;
    let inside = ys
        .iter()
        .filter(|&&y| ((y - stats.mu) / (stats.sigma / s)).abs() <= 1.0)
        .count();
    let frac = inside as f64 / n as f64;
    Ok(Check::near(
        "coverage vs erf",
        frac,
        coverage_from_spread(s)?,
        0.005,
    ))
}

/// The spread that covers 95% of normal targets is about one half.
pub fn spread_for_95(_seed: u64) -> Result<Check> {
    Ok(Check::near(
        "spread for 95% coverage",
        spread_from_coverage(0.95)?,
        0.5,
        0.02,
    ))
}

/// Exceedance of the tracked upper percentile settles at `(1−p)/2`.
pub fn percentile_fixed_point(seed: u64, n: usize) -> Result<Check> {
    let mut r = rng(seed, 6);
    let p = 0.8;
    let mut tr = PercentileTracker::new(p, StepSizeSchedule::tracker_default())?;
    let mut above = 0usize;
    let burn_in = n / 2;
    for i in 0..n {
        let y: f64 = r.random();
        if i >= burn_in && y > tr.y_max() {
            above += 1;
        }
        tr.update(y)?;
    }
    let frac = above as f64 / (n - burn_in) as f64;
    Ok(Check::near(
        "percentile exceedance",
        frac,
        (1.0 - p) / 2.0,
        0.01,
    ))
}

/// Minibatch extremes of `U[0,1]` with `B = 4` settle at `0.2` and `0.8`.
pub fn minibatch_extremes(seed: u64, n_batches: usize) -> Result<Check> {
    let mut r = rng(seed, 7);
    let b = 4;
    let mut tr = ExtremeTracker::new(b, StepSizeSchedule::inverse_t())?;
    for _ in 0..n_batches {
        let batch: Vec<f64> = (0..b).map(|_| r.random()).collect();
        tr.update(&batch)?;
    }
    let err = (tr.y_max() - 0.8).abs().max((tr.y_min() - 0.2).abs());
    Ok(Check::within("minibatch extremes", err, 0.01))
}

/// Bias-corrected averages forget their initial value.
pub fn bias_correction(seed: u64, len: usize) -> Result<Check> {
    let mut r = rng(seed, 8);
    let beta = 0.05;
    let ys: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut r)).collect();
    let mu0 = 7.5;
    let mut a = NormalizerState::new(1, StepSizeSchedule::bias_corrected(beta)?);
    let mut b = NormalizerState::new(1, StepSizeSchedule::bias_corrected(beta)?)
        .with_moments(vec![mu0], vec![100.0])?;
    let mut c = NormalizerState::new(1, StepSizeSchedule::constant(beta)?)
        .with_moments(vec![mu0], vec![100.0])?;
    let mut worst: f64 = 0.0;
    for (t, &y) in ys.iter().enumerate() {
        a.update(&[y])?;
        b.update(&[y])?;
        c.update(&[y])?;
        let decay = (1.0 - beta).powi(t as i32 + 1);
        let closed = (c.mean()[0] - decay * mu0) / (1.0 - decay);
        worst = worst
            .max(rel(a.mean()[0], b.mean()[0]))
            .max(rel(a.mean()[0], closed));
    }
    Ok(Check::within(
        "bias-corrected init independence",
        worst,
        1e-12,
    ))
}

/// Runs every check; `seed` fixes all randomness.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    Ok(vec![
        output_preservation(seed, 1000)?,
        normalized_target_bound_holds(seed, 30_000)?,
        optimizer_equivalence(seed, 1000)?,
        incremental_matches_batch(seed, 10_000)?,
        erf_coverage(seed, 200_000)?,
        spread_for_95(seed)?,
        percentile_fixed_point(seed, 400_000)?,
        minibatch_extremes(seed, 100_000)?,
        bias_correction(seed, 1000)?,
    ])
}

pub fn format_table(checks: &[Check]) -> String {
    checks.iter().map(|c| format!("{c}\n")).collect()
}
