use popart::stats::{
    normalized_target_bound, ExtremeTracker, NormalizerState, PercentileTracker, StepSizeSchedule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn target() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -100.0f64..100.0,
        1 => -1e12f64..1e12,
        1 => Just(0.0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn update_then_normalize_is_bounded(
        beta in prop_oneof![Just(1e-4), Just(1e-2), Just(0.5), 1e-5f64..1.0],
        spread in 0.1f64..4.0,
        ys in prop::collection::vec(target(), 1..40),
    ) {
        let mut n = NormalizerState::new(1, StepSizeSchedule::constant(beta).unwrap())
            .with_spread(spread)
            .unwrap();
        let bound = normalized_target_bound(beta, spread);
        for &y in &ys {
            n.update(&[y]).unwrap();
            let yt: f64 = n.normalize(&[y]).unwrap()[0];
            prop_assert!(yt.abs() <= bound + 1e-9, "{yt} > {bound}");
        }
    }

    #[test]
    fn scale_stays_positive_and_finite(
        beta in 1e-5f64..1.0,
        ys in prop::collection::vec(target(), 1..40),
    ) {
        let mut n = NormalizerState::new(2, StepSizeSchedule::bias_corrected(beta).unwrap());
        for &y in &ys {
            n.update(&[y, -y]).unwrap();
            for s in n.sigma() {
                prop_assert!(s > 0.0 && s.is_finite());
            }
        }
    }

    #[test]
    fn inverse_t_is_batch_average(ys in prop::collection::vec(-1e3f64..1e3, 1..300)) {
        let mut n = NormalizerState::new(1, StepSizeSchedule::inverse_t());
        for &y in &ys {
            n.update(&[y]).unwrap();
        }
        let len = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / len;
        let second = ys.iter().map(|y| y * y).sum::<f64>() / len;
        prop_assert!((n.mean()[0] - mean).abs() <= 1e-12 * mean.abs().max(1e3));
        prop_assert!((n.second_moment()[0] - second).abs() <= 1e-12 * second.max(1e6));
    }

    #[test]
    fn bias_correction_forgets_initial_value(
        beta in 1e-3f64..0.9,
        mu0 in -1e3f64..1e3,
        ys in prop::collection::vec(-10.0f64..10.0, 1..200),
    ) {
        let sched = || StepSizeSchedule::bias_corrected(beta).unwrap();
        let mut a = NormalizerState::new(1, sched());
        let mut b = NormalizerState::new(1, sched()).with_moments(vec![mu0], vec![mu0 * mu0 + 1.0]).unwrap();
        let mut c = NormalizerState::new(1, StepSizeSchedule::constant(beta).unwrap())
            .with_moments(vec![mu0], vec![mu0 * mu0 + 1.0])
            .unwrap();
        for (t, &y) in ys.iter().enumerate() {
            a.update(&[y]).unwrap();
            b.update(&[y]).unwrap();
            c.update(&[y]).unwrap();
            let decay = (1.0 - beta).powi(t as i32 + 1);
            let closed = (c.mean()[0] - decay * mu0) / (1.0 - decay);
            let scale = 10.0 + mu0.abs() * decay / (1.0 - decay);
            prop_assert!((a.mean()[0] - b.mean()[0]).abs() <= 1e-12 * 10.0);
            prop_assert!((a.mean()[0] - closed).abs() <= 1e-12 * scale);
        }
    }
}

fn uniform_stream(seed: u64) -> impl FnMut() -> f64 {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    move || rng.random::<f64>()
}

#[test]
fn percentile_tracker_uniform_fixed_point() {
    let mut next = uniform_stream(11);
    let mut tr = PercentileTracker::new(0.8, StepSizeSchedule::tracker_default()).unwrap();
    for _ in 0..1_000_000 {
        tr.update(next()).unwrap();
    }
    assert!((tr.y_max() - 0.9).abs() < 0.01, "{}", tr.y_max());
    assert!((tr.y_min() - 0.1).abs() < 0.01, "{}", tr.y_min());
}

#[test]
fn percentile_tracker_exceedance_on_normal_stream() {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(12);
    for p in [0.5, 0.9] {
        let mut tr = PercentileTracker::new(p, StepSizeSchedule::tracker_default()).unwrap();
        let (mut above, mut below, mut counted) = (0, 0, 0);
        for i in 0..1_000_000 {
            let y: f64 = StandardNormal.sample(&mut rng);
            if i >= 500_000 {
                above += (y > tr.y_max()) as usize;
                below += (y < tr.y_min()) as usize;
                counted += 1;
            }
            tr.update(y).unwrap();
        }
        let want = (1.0 - p) / 2.0;
        assert!((above as f64 / counted as f64 - want).abs() < 0.01);
        assert!((below as f64 / counted as f64 - want).abs() < 0.01);
    }
}

#[test]
fn minibatch_extremes_converge_to_order_statistics() {
    for (b, lo, hi) in [(2usize, 1.0 / 3.0, 2.0 / 3.0), (4, 0.2, 0.8)] {
        let mut next = uniform_stream(b as u64);
        let mut tr = ExtremeTracker::new(b, StepSizeSchedule::inverse_t()).unwrap();
        for _ in 0..200_000 {
            let batch: Vec<f64> = (0..b).map(|_| next()).collect();
            tr.update(&batch).unwrap();
        }
        assert!((tr.y_max() - hi).abs() < 0.01, "B={b}: {}", tr.y_max());
        assert!((tr.y_min() - lo).abs() < 0.01, "B={b}: {}", tr.y_min());
        assert!((tr.implied_coverage() - (b as f64 - 1.0) / (b as f64 + 1.0)).abs() < 1e-15);
    }
}

#[test]
fn minibatch_extremes_on_shifted_interval() {
    let (a, b) = (-3.0, 5.0);
    let mut next = uniform_stream(5);
    let mut tr = ExtremeTracker::new(4, StepSizeSchedule::inverse_t()).unwrap();
    for _ in 0..200_000 {
        let batch: Vec<f64> = (0..4).map(|_| a + (b - a) * next()).collect();
        tr.update(&batch).unwrap();
    }
    assert!((tr.y_max() - (a + 0.8 * (b - a))).abs() < 0.01 * (b - a));
}

#[test]
fn small_beta_bound_just_under_hundred() {
    let bound: f64 = normalized_target_bound(1e-4, 1.0);
    assert!((bound - 99.995).abs() < 1e-3);
    assert!(bound < 100.0);
}
