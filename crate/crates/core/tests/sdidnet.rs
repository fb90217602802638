mod common;

use common::uniform;
use sdid::ndgrad::{rand_normal, Rng, Tape, Tensor};
use sdid::nn::{Init, Linear, ParamStore};
use sdid::sdidnet::*;
use sdid::Error;

fn tiny() -> ModelConfig {
    ModelConfig {
        base_channels: 8,
        sc_blocks: 2,
        style_dim: 16,
        gen_input_dim: 8,
        gap_dim: 32,
        ..ModelConfig::desk()
    }
}

#[test]
fn desk_parameter_count_is_frozen() {
    // summed layer by layer by hand: encoder 24456, decoder 98169,
    // extractor 404288, generator 21888, style conversion 115616
    assert_eq!(count_params(&ModelConfig::desk()), 664_417);
}

#[test]
fn count_matches_store_and_checkpoint() {
    for cfg in [tiny(), ModelConfig::desk()] {
        let model = Model::<f32>::new(&cfg, 0).unwrap();
        assert_eq!(model.params.numel(), count_params(&cfg));
        let mut ck = Checkpoint::new();
        for (n, e) in model.param_entries() {
            ck.push(n, e);
        }
        ck.set_config("x = 1");
        assert_eq!(ck.tensor_numel(), count_params(&cfg));
    }
}

#[test]
fn single_affine_has_nine_scalars() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = Rng::new(0);
    Linear::new(&mut Init::new(&mut store, &mut rng), 2, 3, true).unwrap();
    assert_eq!(store.numel(), 9);
    assert_eq!(Linear::numel(2, 3, true), 9);
}

#[test]
fn encoder_decoder_shapes() {
    let model = Model::<f32>::new(&ModelConfig::desk(), 1).unwrap();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let x = tape.constant(uniform(2, &[2, 1, 32, 32], 0.0, 1.0).cast::<f32>());
    let f = model.net.encode(&p, x).unwrap();
    assert_eq!(f.shape(), vec![2, 64, 8, 8]);
    let y = model.net.decode(&p, f).unwrap();
    assert_eq!(y.shape(), vec![2, 1, 32, 32]);
    assert!(y.value().data().iter().all(|v| v.is_finite()));
    let bad = tape.constant(Tensor::<f32>::zeros(&[1, 1, 24, 24]));
    assert!(matches!(
        model.net.encode(&p, bad),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn same_seed_same_model() {
    let a = Model::<f32>::new(&tiny(), 5).unwrap();
    let b = Model::<f32>::new(&tiny(), 5).unwrap();
    let c = Model::<f32>::new(&tiny(), 6).unwrap();
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert_ne!(a.params.tensors(), c.params.tensors());
}

#[test]
fn style_length_independent_of_image_size() {
    let model = Model::<f64>::new(&tiny(), 1).unwrap();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    for size in [16, 32, 48] {
        let img = tape.constant(uniform(size as u64, &[1, 1, size, size], 0.0, 1.0));
        assert_eq!(model.net.extract(&p, img).unwrap().shape(), vec![1, 16]);
    }
    let a = tape.constant(uniform(3, &[2, 1, 16, 16], 0.0, 1.0));
    let s = model.net.extract(&p, a).unwrap().value();
    let again = model.net.extract(&p, a).unwrap().value();
    assert_eq!(s, again);
}

#[test]
fn generator_shape_and_zero_weights() {
    let mut model = Model::<f64>::new(&tiny(), 1).unwrap();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let z = tape.constant(rand_normal(&mut Rng::new(1), &[3, 8]));
    assert_eq!(model.net.generate(&p, z).unwrap().shape(), vec![3, 16]);
    drop(p);
    let ids: Vec<_> = model
        .params
        .ids()
        .filter(|id| model.params.name(*id).starts_with(GENERATOR_PREFIX))
        .collect();
    for id in ids {
        let t = model.params.get_mut(id);
        *t = Tensor::zeros(t.shape());
    }
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let z = tape.constant(rand_normal(&mut Rng::new(2), &[3, 8]));
    assert!(model
        .net
        .generate(&p, z)
        .unwrap()
        .value()
        .data()
        .iter()
        .all(|v| *v == 0.0));
}

#[test]
fn adain_direct_formula() {
    let tape = Tape::new();
    let e = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let ss = tape.constant(Tensor::new(&[1, 1], vec![2.0]).unwrap());
    let sb = tape.constant(Tensor::new(&[1, 1], vec![1.0]).unwrap());
    let eps = 1e-5;
    let out = adain(e, ss, sb, eps).unwrap().value();
    // μ = 2.5, biased variance 1.25
    let sigma = (1.25f64 + eps).sqrt();
    for (o, v) in out.data().iter().zip([1.0, 2.0, 3.0, 4.0]) {
        assert!((o - (2.0 * (v - 2.5) / sigma + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn adain_constant_channel_gives_bias() {
    let tape = Tape::new();
    let e = tape.constant(Tensor::<f64>::full(&[1, 2, 3, 3], 0.7));
    let ss = tape.constant(Tensor::new(&[1, 2], vec![3.0, -1.0]).unwrap());
    let sb = tape.constant(Tensor::new(&[1, 2], vec![0.25, -0.5]).unwrap());
    let out = adain(e, ss, sb, 1e-5).unwrap().value();
    assert!(out.data()[..9].iter().all(|v| (v - 0.25).abs() < 1e-9));
    assert!(out.data()[9..].iter().all(|v| (v + 0.5).abs() < 1e-9));
}

#[test]
fn adain_inverse_normalization() {
    let tape = Tape::new();
    let x = uniform(4, &[2, 3, 4, 4], -1.0, 2.0);
    let eps = 1e-5;
    let (mut mu, mut sd) = (Vec::new(), Vec::new());
    for c in x.data().chunks(16) {
        let m = c.iter().sum::<f64>() / 16.0;
        let v = c.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 16.0;
        mu.push(m);
        sd.push((v + eps).sqrt());
    }
    let e = tape.constant(x.clone());
    let ss = tape.constant(Tensor::new(&[2, 3], sd).unwrap());
    let sb = tape.constant(Tensor::new(&[2, 3], mu).unwrap());
    let out = adain(e, ss, sb, eps).unwrap().value();
    common::close(out.data(), x.data(), 1e-5);
    assert!(adain(e, ss, tape.constant(Tensor::zeros(&[2, 2])), eps).is_err());
}

#[test]
fn mask_boundaries_are_exact() {
    let cfg = tiny();
    let model = Model::<f64>::new(&cfg, 2).unwrap();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape);
    let fe = tape.constant(rand_normal(&mut Rng::new(3), &[2, 32, 4, 4]));
    let st = tape.constant(rand_normal(&mut Rng::new(4), &[2, 16]));
    let ones = model.net.convert_parts(&p, fe, st, MaskMode::Ones).unwrap();
    assert_eq!(ones.out.value(), fe.value());
    let zeros = model
        .net
        .convert_parts(&p, fe, st, MaskMode::Zeros)
        .unwrap();
    assert_eq!(zeros.out.value(), zeros.adain.value());
    let learned = model
        .net
        .convert_parts(&p, fe, st, MaskMode::Learned)
        .unwrap();
    assert_eq!(learned.out.shape(), fe.shape());
    assert!(learned
        .mask
        .value()
        .data()
        .iter()
        .all(|m| *m > 0.0 && *m < 1.0));
}

#[test]
fn denoise_shape_and_determinism() {
    let model = Model::<f32>::new(&tiny(), 2).unwrap();
    let x = uniform(5, &[2, 1, 16, 16], 0.0, 1.0).cast::<f32>();
    let a = model
        .net
        .denoise_tensor(&model.params, &x, None, &mut Rng::new(9))
        .unwrap();
    let b = model
        .net
        .denoise_tensor(&model.params, &x, None, &mut Rng::new(9))
        .unwrap();
    assert_eq!(a.shape(), x.shape());
    assert_eq!(a, b);
}

#[test]
fn config_rules() {
    let bad = |f: fn(&mut ModelConfig)| {
        let mut c = ModelConfig::desk();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.style_dim = 30));
    assert!(bad(|c| c.sc_blocks = 0));
    assert!(bad(|c| c.sc_reduce = 3));
    assert!(bad(|c| c.heads = 3));
    assert!(bad(|c| c.eps = 0.0));
    ModelConfig::desk().validate().unwrap();
    ModelConfig::paper().validate().unwrap();
    assert_eq!(ModelConfig::desk().size_multiple(), 16);
}

fn checkpoint_of(model: &Model<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new();
    ck.set_config("preset = desk\n");
    for (n, e) in model.param_entries() {
        ck.push(n, e);
    }
    ck.push("opt/step", Entry::F64(Tensor::scalar(3.0)));
    ck
}

#[test]
fn checkpoint_roundtrip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::new(&tiny(), 7).unwrap();
    let ck = checkpoint_of(&model);
    let (a, b) = (dir.path().join("a.sdid"), dir.path().join("b.sdid"));
    ck.save(&a).unwrap();
    let back = Checkpoint::load(&a).unwrap();
    assert_eq!(back, ck);
    back.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(back.config().unwrap(), "preset = desk\n");
}

#[test]
fn loaded_model_denoises_identically() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::new(&tiny(), 7).unwrap();
    let path = dir.path().join("m.sdid");
    checkpoint_of(&model).save(&path).unwrap();
    let mut other = Model::<f32>::new(&tiny(), 99).unwrap();
    other
        .load_params(&Checkpoint::load(&path).unwrap())
        .unwrap();
    let x = uniform(8, &[1, 1, 16, 16], 0.0, 1.0).cast::<f32>();
    let a = model
        .net
        .denoise_tensor(&model.params, &x, None, &mut Rng::new(1))
        .unwrap();
    let b = other
        .net
        .denoise_tensor(&other.params, &x, None, &mut Rng::new(1))
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoint_errors() {
    let model = Model::<f32>::new(&tiny(), 7).unwrap();
    let bytes = checkpoint_of(&model).to_bytes().unwrap();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(
        Checkpoint::read_from(&mut &bad[..]),
        Err(Error::Format(_))
    ));
    let mut bad = bytes.clone();
    bad[4] = 2;
    assert!(matches!(
        Checkpoint::read_from(&mut &bad[..]),
        Err(Error::Format(_))
    ));
    assert!(matches!(
        Checkpoint::read_from(&mut &bytes[..bytes.len() - 1]),
        Err(Error::Format(_))
    ));
    // a model of another shape cannot load it
    let mut desk = Model::<f32>::new(&ModelConfig::desk(), 0).unwrap();
    assert!(desk.load_params(&checkpoint_of(&model)).is_err());
}
