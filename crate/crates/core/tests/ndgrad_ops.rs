use proptest::prelude::*;
use sdid::ndgrad::{
    grad_check, grad_check_with, rand_uniform, GradCheckOptions, GradReport, Rng, Tape, Tensor, Var,
};
use sdid::{Error, Result};

type Case = Box<dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>>;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

/// Scalar probe `Σ wᵢ·yᵢ` with fixed pseudo-random weights, so every output
/// element contributes an O(1) gradient.
fn probe<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = Rng::new(seed ^ 0xABCD);
    let w = y
        .tape()
        .constant(rand_uniform(&mut rng, &y.shape(), 0.5, 1.5));
    Ok(y.mul(w)?.sum())
}

#[test]
fn matmul_identity_and_hand_product() {
    let tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let m = tape.constant(t(&[2, 2], &[0.3, -1.2, 4.5, 2.0]));
    assert_eq!(i2.matmul(m).unwrap().value().data(), m.value().data());

    let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let b = tape.constant(t(&[2, 1], &[1., 1.]));
    let c = a.matmul(b).unwrap();
    assert_eq!(c.shape(), vec![2, 1]);
    assert_eq!(c.value().data(), &[3., 7.]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(a.matmul(b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let mut rng = Rng::new(1);
    let a = rand_uniform(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_uniform(&mut rng, &[4, 2], -1.0, 1.0);
    let r = grad_check(|_, v| Ok(v[0].matmul(v[1])?.sum()), &[a, b], 1e-6).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn bmm_with_transposes_gradcheck() {
    let mut rng = Rng::new(2);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa = if ta { [2, 4, 3] } else { [2, 3, 4] };
        let sb = if tb { [2, 5, 4] } else { [2, 4, 5] };
        let a = rand_uniform(&mut rng, &sa, -1.0, 1.0);
        let b = rand_uniform(&mut rng, &sb, -1.0, 1.0);
        let r = grad_check(|_, v| probe(v[0].bmm(v[1], ta, tb)?, 3), &[a, b], 1e-6).unwrap();
        assert!(r.pass, "ta={ta} tb={tb} {r:?}");
    }
}

#[test]
fn conv_pointwise_identity_kernel() {
    let mut rng = Rng::new(3);
    let tape = Tape::new();
    let x = tape.constant(rand_uniform(&mut rng, &[2, 3, 4, 5], 0.0, 1.0));
    let mut w = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let w = tape.constant(w);
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = x.conv2d(w, Some(b), 1, 0).unwrap();
    assert_eq!(y.value(), x.value());
}

#[test]
fn conv_ones_kernel_direct_sum() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = x.conv2d(w, None, 1, 1).unwrap().value();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    // neighbours in-bounds: corners 4, edges 6, centre 9
    assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
}

#[test]
fn conv_output_geometry_and_errors() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 8, 8]));
    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    assert_eq!(x.conv2d(w, None, 2, 1).unwrap().shape(), vec![1, 4, 4, 4]);
    let wrong = tape.constant(Tensor::zeros(&[4, 3, 3, 3]));
    assert!(matches!(
        x.conv2d(wrong, None, 1, 1),
        Err(Error::Dimension(_))
    ));
    let tiny = tape.constant(Tensor::zeros(&[1, 2, 1, 1]));
    assert!(matches!(
        tiny.conv2d(w, None, 1, 0),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn conv_gradcheck_x_w_bias() {
    let mut rng = Rng::new(4);
    for (k, stride, pad) in [(3, 1, 1), (1, 1, 0), (3, 2, 1)] {
        let x = rand_uniform(&mut rng, &[2, 2, 5, 6], -1.0, 1.0);
        let w = rand_uniform(&mut rng, &[3, 2, k, k], -1.0, 1.0);
        let b = rand_uniform(&mut rng, &[3], -1.0, 1.0);
        let r = grad_check(
            |_, v| probe(v[0].conv2d(v[1], Some(v[2]), stride, pad)?, 5),
            &[x, w, b],
            1e-6,
        )
        .unwrap();
        assert!(r.pass, "k={k} s={stride} {r:?}");
    }
}

#[test]
fn layer_norm_cases() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::full(&[1, 4], 3.5));
    let y = c.layer_norm(None, 1e-5).unwrap().value();
    assert!(y.data().iter().all(|&v| v == 0.0));

    let x = tape.constant(t(&[1, 3], &[1., 2., 3.]));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = x.layer_norm(Some((g, b)), 1e-5).unwrap().value();
    // direct formula: mean 2, population variance 2/3
    let s = (2.0f64 / 3.0 + 1e-5).sqrt();
    close(y.data(), &[-1.0 / s, 0.0, 1.0 / s], 1e-12);

    let mut rng = Rng::new(5);
    let x = tape.constant(rand_uniform(&mut rng, &[6, 16], -3.0, 5.0));
    let y = x.layer_norm(Some((g.scale(1.0).add_scalar(0.0), b)), 1e-5);
    assert!(y.is_err(), "affine width must match");
    let y = x.layer_norm(None, 1e-5).unwrap().value();
    for row in y.data().chunks(16) {
        let m = row.iter().sum::<f64>() / 16.0;
        let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
        assert!(m.abs() <= 1e-6);
        assert!((v - 1.0).abs() <= 1e-4);
    }
}

#[test]
fn layer_norm_gradcheck() {
    let mut rng = Rng::new(6);
    let x = rand_uniform(&mut rng, &[3, 5], -2.0, 2.0);
    let g = rand_uniform(&mut rng, &[5], 0.5, 1.5);
    let b = rand_uniform(&mut rng, &[5], -0.5, 0.5);
    let r = grad_check(
        |_, v| probe(v[0].layer_norm(Some((v[1], v[2])), 1e-5)?, 7),
        &[x, g, b],
        1e-6,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn softmax_cases() {
    let tape = Tape::new();
    let z = tape
        .constant(Tensor::zeros(&[1, 4]))
        .softmax_lastdim()
        .value();
    close(z.data(), &[0.25; 4], 1e-15);
    let x = tape
        .constant(t(&[1, 2], &[0.0, 3f64.ln()]))
        .softmax_lastdim()
        .value();
    close(x.data(), &[0.25, 0.75], 1e-15);

    let mut rng = Rng::new(7);
    let base = rand_uniform(&mut rng, &[5, 7], -4.0, 4.0);
    let a = tape.constant(base.clone()).softmax_lastdim().value();
    let b = tape
        .constant(base)
        .add_scalar(12.5)
        .softmax_lastdim()
        .value();
    close(a.data(), b.data(), 1e-7);
    for row in a.data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn elementwise_definitions() {
    let tape = Tape::new();
    let x = tape.constant(t(&[2], &[-1.0, 2.0]));
    assert_eq!(x.relu().value().data(), &[0.0, 2.0]);
    let z = tape.constant(t(&[1], &[0.0]));
    assert_eq!(z.sigmoid().value().data(), &[0.5]);
    assert_eq!(z.gelu().value().data(), &[0.0]);
    // tanh-approximate GELU at 1: 0.5(1+tanh(√(2/π)(1+0.044715)))
    let g1 = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715).tanh());
    let one = tape.constant(t(&[1], &[1.0]));
    close(one.gelu().value().data(), &[g1], 1e-15);
}

#[test]
fn broadcast_rules() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::full(&[1, 3], 1.0));
    assert_eq!(a.add(b).unwrap().shape(), vec![2, 3]);
    let c = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(a.add(c), Err(Error::Dimension(_))));
    let d = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(a.mul(d), Err(Error::Dimension(_))));
}

#[test]
fn elementwise_gradcheck_all_modes() {
    let mut rng = Rng::new(8);
    // keep away from the relu/abs kink at 0
    let x: Tensor<f64> = rand_uniform(&mut rng, &[2, 3, 4], 0.1, 2.0);
    let mut signs = x.clone();
    for (i, v) in signs.data_mut().iter_mut().enumerate() {
        if i % 2 == 0 {
            *v = -*v;
        }
    }
    let y = rand_uniform(&mut rng, &[1, 3, 1], -1.0, 1.0);
    let cases: Vec<(&str, Case)> = vec![
        ("add", Box::new(|v| v[0].add(v[1]))),
        ("sub", Box::new(|v| v[0].sub(v[1]))),
        ("mul", Box::new(|v| v[0].mul(v[1]))),
        ("gelu", Box::new(|v| Ok(v[0].gelu()))),
        ("relu", Box::new(|v| Ok(v[0].relu()))),
        ("sigmoid", Box::new(|v| Ok(v[0].sigmoid()))),
        ("abs", Box::new(|v| Ok(v[0].abs()))),
        ("scale", Box::new(|v| Ok(v[0].scale(-2.5)))),
        ("softmax", Box::new(|v| Ok(v[0].softmax_lastdim()))),
        ("mean_lastdim", Box::new(|v| Ok(v[0].mean_lastdim()))),
        ("roll", Box::new(|v| v[0].roll(&[1, -1, 2]))),
        ("permute", Box::new(|v| v[0].permute(&[2, 0, 1]))),
        ("narrow", Box::new(|v| v[0].narrow(2, 1, 2))),
    ];
    for (name, f) in &cases {
        let r = grad_check(|_, v| probe(f(v)?, 9), &[signs.clone(), y.clone()], 1e-6).unwrap();
        assert!(r.pass, "{name}: {r:?}");
    }
}

#[test]
fn pooling_and_upsampling() {
    let tape = Tape::new();
    let c = tape
        .constant(Tensor::<f64>::full(&[1, 2, 4, 4], 0.7))
        .avg_pool2()
        .unwrap()
        .value();
    assert!(c.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    let blk = tape
        .constant(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]))
        .avg_pool2()
        .unwrap()
        .value();
    assert_eq!(blk.data(), &[2.5]);

    let mut rng = Rng::new(9);
    let x = tape.constant(rand_uniform(&mut rng, &[2, 3, 6, 4], -1.0, 1.0));
    let p = x.avg_pool2().unwrap().value();
    let s_in: f64 = x.value().data().iter().sum();
    let s_out: f64 = p.data().iter().sum();
    assert!((4.0 * s_out - s_in).abs() <= 1e-5);

    let odd = tape.constant(Tensor::<f64>::zeros(&[1, 1, 3, 4]));
    assert!(matches!(odd.avg_pool2(), Err(Error::Dimension(_))));

    let u = x.upsample_nearest2().unwrap();
    assert_eq!(u.avg_pool2().unwrap().value(), x.value());
    let seven = tape
        .constant(t(&[1, 1, 1, 1], &[7.0]))
        .upsample_nearest2()
        .unwrap()
        .value();
    assert_eq!(seven.shape(), &[1, 1, 2, 2]);
    assert_eq!(seven.data(), &[7.0; 4]);
}

#[test]
fn pooling_upsampling_gradcheck() {
    let mut rng = Rng::new(10);
    let x = rand_uniform(&mut rng, &[1, 2, 4, 6], -1.0, 1.0);
    let r = grad_check(
        |_, v| probe(v[0].avg_pool2()?, 1),
        std::slice::from_ref(&x),
        1e-6,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    let r = grad_check(|_, v| probe(v[0].upsample_nearest2()?, 2), &[x], 1e-6).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn backward_closed_forms() {
    let tape = Tape::new();
    let x = tape.param(t(&[3], &[0.5, -1.0, 2.0]));
    tape.backward(x.sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0, 1.0]);

    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    tape.backward(x.mul(x).unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[2.0, 4.0]);

    // diamond: f = sum(3x + x·x), both paths reach x
    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, -2.0]));
    let left = x.scale(3.0);
    let right = x.mul(x).unwrap();
    tape.backward(left.add(right).unwrap().sum()).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[5.0, -1.0]);
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, 2.0]));
    assert!(matches!(
        tape.backward(x.scale(2.0)),
        Err(Error::Backward(_))
    ));

    let c = tape.constant(t(&[2], &[1.0, 2.0]));
    assert!(matches!(tape.backward(c.sum()), Err(Error::Backward(_))));

    let l = x.sum();
    tape.backward(l).unwrap();
    assert!(matches!(tape.backward(l), Err(Error::Backward(_))));
    tape.reset_grads();
    tape.backward(l).unwrap();
    assert_eq!(x.grad().unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn nonfinite_values_are_an_error_state() {
    let tape = Tape::new();
    let x = tape.param(t(&[2], &[1.0, f64::INFINITY]));
    let l = x.scale(0.0).sum();
    assert!(tape.check_finite().is_err());
    assert!(matches!(tape.backward(l), Err(Error::Numerical(_))));
}

#[test]
fn gradcheck_linear_is_exact_and_negative_control_fails() {
    let x = t(&[3], &[0.2, -0.4, 1.1]);
    let r = grad_check(
        |_, v| Ok(v[0].scale(3.0).sum()),
        std::slice::from_ref(&x),
        1e-9,
    )
    .unwrap();
    assert!(r.pass && r.max_rel_err <= 1e-9, "{r:?}");

    let mut opts = GradCheckOptions::with_tol(1e-5);
    opts.corrupt_backward = Some(1.01);
    let r = grad_check_with(|_, v| Ok(v[0].mul(v[0])?.sum()), &[x], &opts).unwrap();
    assert!(!r.pass, "{r:?}");
    assert!(r.max_rel_err > 5e-3);
}

#[test]
fn gradcheck_subsamples_large_tensors() {
    let mut rng = Rng::new(11);
    let x = rand_uniform(&mut rng, &[400], -1.0, 1.0);
    let r = grad_check(|_, v| Ok(v[0].mul(v[0])?.sum()), &[x], 1e-6).unwrap();
    assert_eq!(r.coords_checked, 64);
}

#[test]
fn same_ops_same_bits() {
    let run = || {
        let mut rng = Rng::new(77);
        let tape = Tape::<f32>::new();
        let x = tape.param(rand_uniform(&mut rng, &[2, 3, 8, 8], -1.0, 1.0));
        let w = tape.param(rand_uniform(&mut rng, &[4, 3, 3, 3], -1.0, 1.0));
        let y = x.conv2d(w, None, 1, 1).unwrap().gelu().avg_pool2().unwrap();
        let l = y.mul(y).unwrap().mean();
        tape.backward(l).unwrap();
        (l.item().to_bits(), w.grad().unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_op_passes_gradcheck_on_random_shapes(seed in any::<u64>(), b in 1usize..3, c in 1usize..3, h in 1usize..3, w in 2usize..4) {
        let (h, w) = (2 * h, 2 * w);
        let mut rng = Rng::new(seed);
        let x = rand_uniform(&mut rng, &[b, c, h, w], -1.5, 1.5);
        let k3 = rand_uniform(&mut rng, &[2, c, 3, 3], -1.0, 1.0);
        let bias = rand_uniform(&mut rng, &[2], -1.0, 1.0);
        let g = rand_uniform(&mut rng, &[w], 0.5, 1.5);
        let be = rand_uniform(&mut rng, &[w], -0.5, 0.5);
        let m = rand_uniform(&mut rng, &[w, 3], -1.0, 1.0);
        let y = rand_uniform(&mut rng, &[1, c, 1, w], -1.0, 1.0);
        let checks: Vec<(&str, GradReport)> = vec![
            ("conv2d", grad_check(|_, v| probe(v[0].conv2d(v[1], Some(v[2]), 1, 1)?, seed), &[x.clone(), k3.clone(), bias.clone()], 1e-5).unwrap()),
            ("conv2d_s2", grad_check(|_, v| probe(v[0].conv2d(v[1], None, 2, 1)?, seed), &[x.clone(), k3.clone()], 1e-5).unwrap()),
            ("layer_norm", grad_check(|_, v| probe(v[0].layer_norm(Some((v[1], v[2])), 1e-5)?, seed), &[x.clone(), g, be], 1e-5).unwrap()),
            ("matmul", grad_check(|_, v| probe(v[0].reshape(&[b * c * h, w])?.matmul(v[1])?, seed), &[x.clone(), m], 1e-5).unwrap()),
            ("add", grad_check(|_, v| probe(v[0].add(v[1])?, seed), &[x.clone(), y.clone()], 1e-5).unwrap()),
            ("mul", grad_check(|_, v| probe(v[0].mul(v[1])?, seed), &[x.clone(), y.clone()], 1e-5).unwrap()),
            ("gelu", grad_check(|_, v| probe(v[0].gelu(), seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("sigmoid", grad_check(|_, v| probe(v[0].sigmoid(), seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("softmax", grad_check(|_, v| probe(v[0].softmax_lastdim(), seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("avg_pool2", grad_check(|_, v| probe(v[0].avg_pool2()?, seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("upsample", grad_check(|_, v| probe(v[0].upsample_nearest2()?, seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("permute_roll", grad_check(|_, v| probe(v[0].permute(&[0, 2, 3, 1])?.roll(&[0, 1, -1, 0])?, seed), std::slice::from_ref(&x), 1e-5).unwrap()),
            ("mean_lastdim", grad_check(|_, v| probe(v[0].mean_lastdim(), seed), &[x], 1e-5).unwrap()),
        ];
        for (name, r) in checks {
            prop_assert!(r.pass, "{}: {:?}", name, r);
        }
    }

    #[test]
    fn finite_inputs_stay_finite(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = Rng::new(seed);
        let tape = Tape::<f32>::new();
        let x = tape.constant(rand_uniform(&mut rng, &[1, 2, 4, 4], -scale, scale));
        let w = tape.constant(rand_uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0));
        let y = x.conv2d(w, None, 1, 1).unwrap();
        let _ = y.layer_norm(None, 1e-5).unwrap().gelu().sigmoid().softmax_lastdim();
        let _ = y.relu().abs().avg_pool2().unwrap().upsample_nearest2().unwrap().mean();
        prop_assert!(tape.check_finite().is_ok());
    }
}
