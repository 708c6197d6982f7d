mod common;

use common::{grad_check, model_grad_error, probe_loss, random_tensor, rng, tiny_config, tiny_example};
use gebd::decoder::model_forward;
use gebd::nn::ConvGeom;
use gebd::tape::GradTape;
use gebd::{ModelParams, SeqTensor};
use rand::Rng;

const TOL: f64 = 1e-4;

fn shape(r: &mut impl Rng) -> (usize, usize) {
    (r.random_range(1..=16), r.random_range(1..=16))
}

#[test]
fn elementwise_and_structural_ops() {
    let mut r = rng(1);
    for seed in 0..5 {
        let (t, d) = shape(&mut r);
        let a = random_tensor(&mut r, t, d, 2.0);
        let b = random_tensor(&mut r, t, d, 2.0);
        let dc = r.random_range(1..=6);
        let c = random_tensor(&mut r, t, dc, 2.0);
        let err = grad_check(&[a.clone(), b.clone()], |tape, v| {
            let s = tape.add(v[0], v[1])?;
            probe_loss(tape, s, seed)
        });
        assert!(err < TOL, "add: {err}");
        let err = grad_check(&[a.clone(), b.clone()], |tape, v| {
            let s = tape.mul(v[0], v[1])?;
            probe_loss(tape, s, seed)
        });
        assert!(err < TOL, "mul: {err}");
        let err = grad_check(&[a.clone(), c.clone()], |tape, v| {
            let s = tape.concat_channels(&[v[0], v[1], v[0]])?;
            probe_loss(tape, s, seed)
        });
        assert!(err < TOL, "concat: {err}");
        let err = grad_check(std::slice::from_ref(&a), |tape, v| Ok(tape.sum(v[0])));
        assert!(err < TOL, "sum: {err}");
    }
}

#[test]
fn normalize_and_activations() {
    let mut r = rng(2);
    for seed in 0..5 {
        let (t, d) = shape(&mut r);
        let x = random_tensor(&mut r, t, d, 2.0);
        let err = grad_check(std::slice::from_ref(&x), |tape, v| {
            let y = tape.l2_normalize_rows(v[0], 1e-6);
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "normalize: {err}");
        let err = grad_check(std::slice::from_ref(&x), |tape, v| {
            let y = tape.gelu(v[0]);
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "gelu: {err}");
        let err = grad_check(std::slice::from_ref(&x), |tape, v| {
            let y = tape.sigmoid(v[0]);
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "sigmoid: {err}");
    }
}

#[test]
fn convolutions() {
    let mut r = rng(3);
    for seed in 0..6 {
        let t = r.random_range(1..=16);
        let cin = r.random_range(1..=6);
        let cout = r.random_range(1..=6);
        let width = [1, 3, 5][r.random_range(0..3)];
        let dilation = [1, 2, 4, 8][r.random_range(0..4)];
        let geom = ConvGeom::new(cin, cout, width, dilation).unwrap();
        let x = random_tensor(&mut r, t, cin, 2.0);
        let w = random_tensor(&mut r, cout, width * cin, 2.0);
        let b = random_tensor(&mut r, 1, cout, 2.0);
        let err = grad_check(&[x.clone(), w, b], |tape, v| {
            let y = tape.conv1d(v[0], v[1], Some(v[2]), geom)?;
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "conv1d {geom:?}: {err}");

        let dw = random_tensor(&mut r, cin, 3, 2.0);
        let db = random_tensor(&mut r, 1, cin, 2.0);
        let err = grad_check(&[x, dw, db], |tape, v| {
            let y = tape.depthwise_conv1d(v[0], v[1], Some(v[2]), dilation)?;
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "depthwise r={dilation}: {err}");
    }
}

#[test]
fn layer_norm() {
    let mut r = rng(4);
    for seed in 0..5 {
        let t = r.random_range(1..=16);
        let d = r.random_range(2..=16);
        let x = random_tensor(&mut r, t, d, 2.0);
        let g = random_tensor(&mut r, 1, d, 2.0);
        let b = random_tensor(&mut r, 1, d, 2.0);
        let err = grad_check(&[x, g, b], |tape, v| {
            let y = tape.layer_norm(v[0], v[1], v[2], 1e-5)?;
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "layer_norm: {err}");
    }
}

#[test]
fn distances_smoothing_and_bce() {
    let mut r = rng(5);
    for seed in 0..5 {
        let (t, d) = shape(&mut r);
        let x = random_tensor(&mut r, t, d, 2.0);
        let radius = r.random_range(1..=5);
        let err = grad_check(std::slice::from_ref(&x), |tape, v| {
            let y = tape.neighbor_distances(v[0], radius)?;
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "distances l={radius}: {err}");
        let fps = [1.0, 4.0, 5.0, 30.0][r.random_range(0..4)];
        let err = grad_check(&[x], |tape, v| {
            let y = tape.gaussian_smooth(v[0], fps);
            probe_loss(tape, y, seed)
        });
        assert!(err < TOL, "smooth fps={fps}: {err}");

        let p: Vec<f64> = (0..t).map(|_| r.random_range(0.05..0.95)).collect();
        let y: Vec<f64> = (0..t).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let p = SeqTensor::from_vec(t, 1, p).unwrap();
        let err = grad_check(&[p], |tape, v| tape.bce_loss(v[0], &y));
        assert!(err < TOL, "bce: {err}");
    }
}

#[test]
fn conv_norm_gelu_chain() {
    let mut r = rng(6);
    let geom = ConvGeom::new(5, 7, 3, 2).unwrap();
    let x = random_tensor(&mut r, 11, 5, 2.0);
    let w = random_tensor(&mut r, 7, 15, 1.0);
    let b = random_tensor(&mut r, 1, 7, 1.0);
    let g = random_tensor(&mut r, 1, 7, 2.0);
    let beta = random_tensor(&mut r, 1, 7, 2.0);
    let err = grad_check(&[x, w, b, g, beta], |tape, v| {
        let h = tape.conv1d(v[0], v[1], Some(v[2]), geom)?;
        let h = tape.layer_norm(h, v[3], v[4], 1e-5)?;
        let h = tape.gelu(h);
        let h = tape.l2_normalize_rows(h, 1e-6);
        let h = tape.neighbor_distances(h, 2)?;
        probe_loss(tape, h, 9)
    });
    assert!(err < TOL, "chain: {err}");
}

#[test]
fn tiny_model_end_to_end() {
    let params = ModelParams::<f64>::init(tiny_config(), 11).unwrap();
    let ex = tiny_example(3);
    let err = model_grad_error(&params, &ex, true);
    assert!(err < 1e-3, "smoothed loss: {err}");
    let err = model_grad_error(&params, &ex, false);
    assert!(err < 1e-3, "raw loss: {err}");
}

#[test]
fn gradient_reaches_every_stage_input() {
    let params = ModelParams::<f64>::init(tiny_config(), 5).unwrap();
    let ex = tiny_example(8);
    let mut tape = GradTape::new();
    let bound = params.bind(&mut tape);
    let trace = model_forward(&mut tape, &bound, &ex.features).unwrap();
    let loss = tape.bce_loss(trace.scores, ex.labels.as_slice()).unwrap();
    let grads = tape.backward(loss).unwrap();
    for (k, &v) in trace.inputs.iter().enumerate() {
        let g = grads.wrt(v);
        assert_eq!(g.shape(), (12, 8));
        assert!(g.data().iter().any(|x| x.abs() > 1e-12), "stage {k} receives no gradient");
    }
    for &v in &bound.vars {
        assert_eq!(grads.wrt(v).shape(), tape.value(v).shape());
    }
}
