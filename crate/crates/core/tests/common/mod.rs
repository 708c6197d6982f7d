//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use gebd::data::{frame_labels, synth_random_video, BoundaryPlan, SynthSpec};
use gebd::tape::{GradTape, Var};
use gebd::train::{example_gradients, TrainExample};
use gebd::{ModelConfig, ModelParams, Result, SeqTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> SeqTensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    SeqTensor::from_vec(rows, cols, data).unwrap()
}

/// Direct sum over taps and channels with zero padding. `w[o][j * cin + c]`.
pub fn naive_conv(
    x: &SeqTensor<f64>,
    w: &SeqTensor<f64>,
    b: Option<&SeqTensor<f64>>,
    width: usize,
    dilation: usize,
) -> Vec<Vec<f64>> {
    let (frames, cin) = x.shape();
    let cout = w.rows();
    let m = (width / 2) as isize;
    let mut y = vec![vec![0.0; cout]; frames];
    for (t, row) in y.iter_mut().enumerate() {
        for (o, out) in row.iter_mut().enumerate() {
            let mut acc = b.map_or(0.0, |b| b.get(0, o));
            for j in 0..width {
                let src = t as isize + dilation as isize * (j as isize - m);
                if src < 0 || src >= frames as isize {
                    continue;
                }
                for c in 0..cin {
                    acc += w.get(o, j * cin + c) * x.get(src as usize, c);
                }
            }
            *out = acc;
        }
    }
    y
}

/// Per-channel direct sum; `w` is `channels × width`.
pub fn naive_depthwise(x: &SeqTensor<f64>, w: &SeqTensor<f64>, b: Option<&SeqTensor<f64>>, dilation: usize) -> Vec<Vec<f64>> {
    let (frames, d) = x.shape();
    let width = w.cols();
    let m = (width / 2) as isize;
    (0..frames)
        .map(|t| {
            (0..d)
                .map(|c| {
                    let mut acc = b.map_or(0.0, |b| b.get(0, c));
                    for j in 0..width {
                        let src = t as isize + dilation as isize * (j as isize - m);
                        if (0..frames as isize).contains(&src) {
                            acc += w.get(c, j) * x.get(src as usize, c);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &SeqTensor<f64>, b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (t, row) in b.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            worst = worst.max((a.get(t, c) - v).abs());
        }
    }
    worst
}

/// Largest matching in the bipartite graph of `(det, gt)` pairs within `tau`,
/// by trying every assignment.
pub fn brute_force_matching(dets: &[f64], gts: &[f64], tau: f64, len: f64) -> usize {
    fn go(i: usize, dets: &[f64], gts: &[f64], used: &mut Vec<bool>, tau: f64, len: f64) -> usize {
        if i == dets.len() {
            return 0;
        }
        let mut best = go(i + 1, dets, gts, used, tau, len);
        for g in 0..gts.len() {
            if !used[g] && (dets[i] - gts[g]).abs() / len <= tau {
                used[g] = true;
                best = best.max(1 + go(i + 1, dets, gts, used, tau, len));
                used[g] = false;
            }
        }
        best
    }
    go(0, dets, gts, &mut vec![false; gts.len()], tau, len)
}

/// Builds `loss = Σ out ∘ probe` with a fixed random probe so every output
/// element carries a distinct weight.
pub fn probe_loss(tape: &mut GradTape<f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.value(out).shape();
    let probe = random_tensor(&mut rng(seed), r, c, 1.0);
    let p = tape.leaf(probe);
    let prod = tape.mul(out, p)?;
    Ok(tape.sum(prod))
}

/// Worst relative error between reverse-mode adjoints and central differences,
/// over all input tensors: `max |a − n| / max(max |n|, 1e-6)` per tensor.
pub fn grad_check<F>(inputs: &[SeqTensor<f64>], build: F) -> f64
where
    F: Fn(&mut GradTape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[SeqTensor<f64>]| -> f64 {
        let mut tape = GradTape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let loss = build(&mut tape, &vars).unwrap();
        tape.value(loss).get(0, 0)
    };
    let mut tape = GradTape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();

    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]);
        assert_eq!(analytic.shape(), x.shape(), "adjoint shape of input {k}");
        let mut numeric = vec![0.0; x.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let err = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(err / scale);
    }
    worst
}

/// Stage dims 8, `d_out = d_head = 8`.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        stage_dims: vec![8; 4],
        d_out: 8,
        d_head: 8,
        ..Default::default()
    }
}

pub fn tiny_example(seed: u64) -> TrainExample<f64> {
    let spec = SynthSpec {
        frames: 12,
        fps: 5.0,
        stage_dims: vec![8; 4],
        snr: 4.0,
    };
    let plan = BoundaryPlan {
        min_count: 1,
        max_count: 2,
        min_gap: 0.6,
        margin: 0.3,
    };
    let (features, a) = synth_random_video::<f64>("tiny", seed, &spec, &plan).unwrap();
    let labels = frame_labels(&a, 12, 5.0, 1);
    TrainExample { features, labels }
}

/// Worst per-tensor relative error of the model's parameter gradients.
pub fn model_grad_error(params: &ModelParams<f64>, ex: &TrainExample<f64>, smooth: bool) -> f64 {
    let (_, analytic) = example_gradients(params, ex, smooth).unwrap();
    let h = 1e-6;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in 0..params.tensors().len() {
        let n = params.tensor(k).len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.tensor(k).data()[i];
            probe.tensor_mut(k).data_mut()[i] = orig + h;
            let (lp, _) = example_gradients(&probe, ex, smooth).unwrap();
            probe.tensor_mut(k).data_mut()[i] = orig - h;
            let (lm, _) = example_gradients(&probe, ex, smooth).unwrap();
            probe.tensor_mut(k).data_mut()[i] = orig;
            numeric.push((lp - lm) / (2.0 * h));
        }
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-6);
        let err = analytic[k]
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(err / scale);
    }
    worst
}


/// One random finite-difference check per differentiable op, inputs in [-2, 2]
/// and shapes up to 16 × 16. Returns `(op, relative error)`.
pub fn op_grad_errors(seed: u64) -> Vec<(&'static str, f64)> {
    use gebd::nn::ConvGeom;
    let mut g = rng(seed);
    let t = g.random_range(1..=16);
    let d = g.random_range(2..=16);
    let x = random_tensor(&mut g, t, d, 2.0);
    let y = random_tensor(&mut g, t, d, 2.0);
    let row = |g: &mut ChaCha8Rng| random_tensor(g, 1, d, 2.0);
    let mut out = Vec::new();
    out.push(("add", grad_check(&[x.clone(), y.clone()], |tp, v| {
        let o = tp.add(v[0], v[1])?;
        probe_loss(tp, o, seed)
    })));
    out.push(("mul", grad_check(&[x.clone(), y.clone()], |tp, v| {
        let o = tp.mul(v[0], v[1])?;
        probe_loss(tp, o, seed)
    })));
    out.push(("sum", grad_check(std::slice::from_ref(&x), |tp, v| Ok(tp.sum(v[0])))));
    out.push(("concat_channels", grad_check(&[x.clone(), y.clone()], |tp, v| {
        let o = tp.concat_channels(&[v[1], v[0]])?;
        probe_loss(tp, o, seed)
    })));
    out.push(("l2_normalize_rows", grad_check(std::slice::from_ref(&x), |tp, v| {
        let o = tp.l2_normalize_rows(v[0], 1e-6);
        probe_loss(tp, o, seed)
    })));
    let dil = [1, 2, 4, 8][g.random_range(0..4)];
    let cout = g.random_range(1..=8);
    let geom = ConvGeom::new(d, cout, 3, dil).unwrap();
    let w = random_tensor(&mut g, cout, 3 * d, 2.0);
    let b = random_tensor(&mut g, 1, cout, 2.0);
    out.push(("conv1d", grad_check(&[x.clone(), w, b], |tp, v| {
        let o = tp.conv1d(v[0], v[1], Some(v[2]), geom)?;
        probe_loss(tp, o, seed)
    })));
    let dw = random_tensor(&mut g, d, 3, 2.0);
    let db = row(&mut g);
    out.push(("depthwise_conv1d", grad_check(&[x.clone(), dw, db], |tp, v| {
        let o = tp.depthwise_conv1d(v[0], v[1], Some(v[2]), dil)?;
        probe_loss(tp, o, seed)
    })));
    let (gamma, beta) = (row(&mut g), row(&mut g));
    out.push(("layer_norm", grad_check(&[x.clone(), gamma, beta], |tp, v| {
        let o = tp.layer_norm(v[0], v[1], v[2], 1e-5)?;
        probe_loss(tp, o, seed)
    })));
    out.push(("gelu", grad_check(std::slice::from_ref(&x), |tp, v| {
        let o = tp.gelu(v[0]);
        probe_loss(tp, o, seed)
    })));
    out.push(("sigmoid", grad_check(std::slice::from_ref(&x), |tp, v| {
        let o = tp.sigmoid(v[0]);
        probe_loss(tp, o, seed)
    })));
    out.push(("neighbor_distances", grad_check(std::slice::from_ref(&x), |tp, v| {
        let o = tp.neighbor_distances(v[0], 5)?;
        probe_loss(tp, o, seed)
    })));
    out.push(("gaussian_smooth", grad_check(&[x], |tp, v| {
        let o = tp.gaussian_smooth(v[0], 5.0);
        probe_loss(tp, o, seed)
    })));
    let p: Vec<f64> = (0..t).map(|_| g.random_range(0.05..0.95)).collect();
    let target: Vec<f64> = (0..t).map(|_| f64::from(g.random_range(0..2u8))).collect();
    let p = SeqTensor::from_vec(t, 1, p).unwrap();
    out.push(("bce_loss", grad_check(&[p], |tp, v| tp.bce_loss(v[0], &target))));
    out
}
