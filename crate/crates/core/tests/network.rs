use popart::network::{Activation, Mlp};
use proptest::prelude::*;

/// Straight-line forward pass reading the parameters layer by layer.
#[allow(clippy::needless_range_loop)]
fn scalar_loop_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let n_layers = net.layers().len();
    let mut a = x.to_vec();
    for (l, layer) in net.layers().iter().enumerate() {
        let mut z = Vec::new();
        for i in 0..layer.outputs() {
            let mut s = layer.bias()[i];
            for j in 0..layer.inputs() {
                s += layer.weights()[i * layer.inputs() + j] * a[j];
            }
            let last = l + 1 == n_layers;
            z.push(if last && net.output_activation() == Activation::Identity {
                s
            } else {
                s.tanh()
            });
        }
        a = z;
    }
    a
}

fn central_difference(net: &Mlp<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let theta = net.params();
    (0..theta.len())
        .map(|i| {
            let mut probe = net.clone();
            let mut t = theta.clone();
            t[i] += h;
            probe.set_params(&t).unwrap();
            let up = probe.forward(x).unwrap();
            t[i] -= 2.0 * h;
            probe.set_params(&t).unwrap();
            let down = probe.forward(x).unwrap();
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect()
        })
        .collect()
}

/// Largest entrywise `|a − b| / max(|a|, |b|, 1)`.
fn max_relative_gap(net: &Mlp<f64>, x: &[f64]) -> f64 {
    let jac = net.jacobian(x).unwrap();
    let fd = central_difference(net, x, 1e-5);
    let mut worst: f64 = 0.0;
    for (i, row) in fd.iter().enumerate() {
        for (j, &f) in row.iter().enumerate() {
            let a = jac.get(i, j);
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1.0));
        }
    }
    worst
}

#[test]
fn seed_1734_matches_scalar_loop() {
    let net = Mlp::<f64>::init(&[16, 10, 10, 10], Activation::Tanh, 1734).unwrap();
    let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 / 4.0 - 0.5).collect();
    let got = net.forward(&x).unwrap();
    let want = scalar_loop_forward(&net, &x);
    assert_eq!(got.len(), 10);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-15 * w.abs().max(1.0), "{g} vs {w}");
    }

    let linear = Mlp::<f64>::init(&[3, 4, 2], Activation::Identity, 1734).unwrap();
    let x = [0.3, -1.2, 2.0];
    for (g, w) in linear
        .forward(&x)
        .unwrap()
        .iter()
        .zip(scalar_loop_forward(&linear, &x))
    {
        assert!((g - w).abs() <= 1e-15 * w.abs().max(1.0));
    }
}

#[test]
fn identical_seeds_bit_identical() {
    let a = Mlp::<f64>::init(&[5, 7, 3], Activation::Tanh, 9).unwrap();
    let b = Mlp::<f64>::init(&[5, 7, 3], Activation::Tanh, 9).unwrap();
    assert_eq!(a, b);
    let x = [0.1, 0.2, 0.3, 0.4, 0.5];
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    assert_ne!(
        a,
        Mlp::<f64>::init(&[5, 7, 3], Activation::Tanh, 10).unwrap()
    );
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let net = Mlp::<f64>::init(&[4, 6, 2], Activation::Tanh, 3).unwrap();
    let json = serde_json::to_string(&net).unwrap();
    let back: Mlp<f64> = serde_json::from_str(&json).unwrap();
    assert_eq!(back, net);
}

fn arb_case() -> impl Strategy<Value = (Vec<usize>, bool, u64, Vec<f64>)> {
    (
        prop::collection::vec(1usize..6, 2..5),
        any::<bool>(),
        any::<u64>(),
        prop::collection::vec(-2.0f64..2.0, 8),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences((sizes, tanh_out, seed, xs) in arb_case()) {
        let act = if tanh_out { Activation::Tanh } else { Activation::Identity };
        let net = Mlp::<f64>::init(&sizes, act, seed).unwrap();
        let x = &xs[..sizes[0]];
        prop_assert!(max_relative_gap(&net, x) < 1e-5);
    }

    #[test]
    fn backward_equals_jacobian_contraction((sizes, _t, seed, xs) in arb_case(), v in prop::collection::vec(-1.0f64..1.0, 6)) {
        let net = Mlp::<f64>::init(&sizes, Activation::Tanh, seed).unwrap();
        let x = &xs[..sizes[0]];
        let m = net.output_dim();
        let trace = net.forward_trace(x).unwrap();
        let by_backward = net.backward(&trace, &v[..m]).unwrap();
        let by_jacobian = net.jacobian(x).unwrap().apply(&v[..m]).unwrap();
        for (a, b) in by_backward.iter().zip(&by_jacobian) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn half_steps_compose(seed in any::<u64>(), dir in prop::collection::vec(-1.0f64..1.0, 17)) {
        let mut a = Mlp::<f64>::init(&[3, 4], Activation::Tanh, seed).unwrap();
        let mut b = a.clone();
        a.apply_param_step(&dir[..16], 0.5).unwrap();
        a.apply_param_step(&dir[..16], 0.5).unwrap();
        b.apply_param_step(&dir[..16], 1.0).unwrap();
        for (p, q) in a.params().iter().zip(b.params()) {
            prop_assert!((p - q).abs() < 1e-15);
        }
    }
}
