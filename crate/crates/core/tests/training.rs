use gebd::data::{frame_labels, synth_random_video, BoundaryPlan, LabelVector, SynthSpec};
use gebd::pipeline::build_examples;
use gebd::train::{adam_step, bce_loss, curve_to_csv, lr_schedule, train, AdamConfig, AdamState, Trainer};
use gebd::{Error, ModelConfig, ModelParams, SeqTensor, TrainConfig, TrainExample};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        stage_dims: vec![6; 4],
        d_out: 8,
        d_head: 8,
        ..Default::default()
    }
}

fn spec() -> SynthSpec {
    SynthSpec {
        frames: 20,
        fps: 5.0,
        stage_dims: vec![6; 4],
        snr: 4.0,
    }
}

fn example(seed: u64) -> TrainExample<f64> {
    let (features, a) = synth_random_video::<f64>("t", seed, &spec(), &BoundaryPlan::default()).unwrap();
    let labels = frame_labels(&a, 20, 5.0, 1);
    TrainExample { features, labels }
}

fn dataset(n: u64) -> Vec<TrainExample<f64>> {
    (0..n).map(example).collect()
}

#[test]
fn bce_reference_values() {
    let y = LabelVector(vec![1.0, 0.0]);
    assert!((bce_loss(&[0.5, 0.5], &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    let y = LabelVector(vec![0.0, 1.0, 1.0, 0.0]);
    let got = bce_loss(&[0.1, 0.7, 0.95, 0.3], &y).unwrap();
    let want = -(0.9f64.ln() + 0.7f64.ln() + 0.95f64.ln() + 0.7f64.ln()) / 4.0;
    assert!((got - want).abs() < 1e-15);
    // Clamping keeps certain mistakes finite.
    let worst = bce_loss(&[0.0, 1.0], &LabelVector(vec![1.0, 0.0])).unwrap();
    assert!((worst - -(1e-7f64).ln()).abs() < 1e-6);
}

#[test]
fn schedule_values() {
    let cfg = TrainConfig::default();
    let spe = 25;
    assert_eq!(lr_schedule(0, spe, &cfg), 0.0);
    assert!((lr_schedule(25, spe, &cfg) - 2e-4).abs() < 1e-18);
    // Continuous at the warmup/cosine junction.
    let left = 4e-4 * 49.0 / 50.0;
    assert!((lr_schedule(49, spe, &cfg) - left).abs() < 1e-18);
    assert_eq!(lr_schedule(50, spe, &cfg), 4e-4);
    // Midpoint of the cosine segment (steps 50..=249) lands halfway between peak and floor.
    let mid = 50 + (249 - 50) / 2;
    let u = (mid - 50) as f64 / 199.0;
    let want = 4e-6 + (4e-4 - 4e-6) * (1.0 + (std::f64::consts::PI * u).cos()) / 2.0;
    assert!((lr_schedule(mid, spe, &cfg) - want).abs() < 1e-18);
    assert!((lr_schedule(249, spe, &cfg) - 4e-6).abs() < 1e-15);
    let mut prev = f64::INFINITY;
    for s in 50..250 {
        let lr = lr_schedule(s, spe, &cfg);
        assert!(lr <= prev);
        prev = lr;
    }
}

#[test]
fn adam_three_step_trace() {
    let h = AdamConfig::default();
    let grads = [[0.5, -1.0], [0.1, 2.0], [-0.3, 0.0]];
    let lr = 0.01;
    let mut p = vec![SeqTensor::from_vec(1, 2, vec![1.0f64, -2.0]).unwrap()];
    let mut st = AdamState::new(&p, h);

    let (mut m, mut v, mut w) = ([0.0f64; 2], [0.0f64; 2], [1.0f64, -2.0]);
    for (step, g) in grads.iter().enumerate() {
        let g_t = vec![SeqTensor::from_vec(1, 2, g.to_vec()).unwrap()];
        adam_step(&mut p, &g_t, &mut st, lr).unwrap();
        let t = (step + 1) as i32;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert!((p[0].get(0, i) - w[i]).abs() < 1e-15, "step {t} param {i}");
        }
    }
    assert_eq!(st.step, 3);
    // First update moves each parameter by almost exactly lr against the gradient sign.
    let mut q = vec![SeqTensor::from_vec(1, 1, vec![0.0f64]).unwrap()];
    let mut s = AdamState::new(&q, h);
    adam_step(&mut q, &[SeqTensor::from_vec(1, 1, vec![-3.7]).unwrap()], &mut s, 1e-3).unwrap();
    assert!((q[0].get(0, 0) - 1e-3).abs() < 1e-11);
}

#[test]
fn loss_decreases_at_small_fixed_lr() {
    let data = [example(1)];
    let params = ModelParams::init(tiny_config(), 3).unwrap();
    let count = params.count();
    let mut trainer = Trainer::new(params, false);
    let batch: Vec<_> = data.iter().collect();
    let losses: Vec<f64> = (0..4).map(|_| trainer.step(&batch, 1e-3).unwrap()).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert_eq!(trainer.params.count(), count);
    assert_eq!(trainer.adam.step, 4);
}

#[test]
fn equal_seeds_give_identical_curves() {
    let data = dataset(6);
    let cfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        batch_size: 4,
        seed: 9,
        ..Default::default()
    };
    let a = train(&data, tiny_config(), &cfg).unwrap();
    let b = train(&data, tiny_config(), &cfg).unwrap();
    assert_eq!(a.curve.len(), 6);
    let bits = |c: &[gebd::train::CurvePoint]| c.iter().map(|p| p.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.curve), bits(&b.curve));
    assert_eq!(a.params, b.params);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| train(&data, tiny_config(), &cfg).unwrap());
    assert_eq!(bits(&a.curve), bits(&c.curve));
    let d = train(&data, tiny_config(), &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(bits(&a.curve), bits(&d.curve));
    assert!(curve_to_csv(&a.curve).starts_with("step,lr,loss\n"));
}

#[test]
fn smoothing_flag_changes_the_loss() {
    let data = [example(2)];
    let batch: Vec<_> = data.iter().collect();
    let params = ModelParams::init(tiny_config(), 4).unwrap();
    let (raw, _) = Trainer::new(params.clone(), false).batch_gradients(&batch).unwrap();
    let (smooth, _) = Trainer::new(params, true).batch_gradients(&batch).unwrap();
    assert!((raw - smooth).abs() > 1e-6, "{raw} vs {smooth}");
}

#[test]
fn batch_gradient_is_mean_of_example_gradients() {
    let data = dataset(3);
    let params = ModelParams::init(tiny_config(), 5).unwrap();
    let trainer = Trainer::new(params.clone(), true);
    let all: Vec<_> = data.iter().collect();
    let (loss, g) = trainer.batch_gradients(&all).unwrap();
    let mut mean_loss = 0.0;
    let mut acc: Vec<SeqTensor<f64>> = g.iter().map(|t| SeqTensor::zeros(t.rows(), t.cols())).collect();
    for ex in &data {
        let (l, gi) = gebd::train::example_gradients(&params, ex, true).unwrap();
        mean_loss += l / 3.0;
        for (a, b) in acc.iter_mut().zip(&gi) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y / 3.0;
            }
        }
    }
    assert!((loss - mean_loss).abs() < 1e-12);
    for (a, b) in acc.iter().zip(&g) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let data = dataset(2);
    assert!(train::<f64>(&[], tiny_config(), &TrainConfig::default()).is_err());
    let bad = TrainConfig {
        warmup_epochs: 10,
        ..Default::default()
    };
    assert!(train(&data, tiny_config(), &bad).is_err());
    let mut ragged = data.clone();
    ragged[1].labels = LabelVector(vec![0.0; 5]);
    assert!(train(&ragged, tiny_config(), &TrainConfig::default()).is_err());

    let mut poisoned = ModelParams::<f64>::init(tiny_config(), 1).unwrap();
    let out = poisoned.layout.head.output.weight;
    poisoned.tensor_mut(out).data_mut()[0] = f64::NAN;
    let mut trainer = Trainer::new(poisoned, false);
    let batch: Vec<_> = data.iter().collect();
    assert!(matches!(trainer.step(&batch, 1e-3), Err(Error::NonFiniteLoss { step: 0 })));
}

#[test]
fn clip_examples_slice_labels() {
    let spec = SynthSpec {
        frames: 100,
        ..spec()
    };
    let (v, a) = synth_random_video::<f64>("long", 1, &spec, &BoundaryPlan::default()).unwrap();
    let anns = [(a.video_id.clone(), a.clone())].into_iter().collect();
    let window = gebd::pipeline::ClipWindow::default();
    let ex = build_examples(&[v], &anns, 1, Some(window)).unwrap();
    assert_eq!(ex.len(), 3);
    let full = frame_labels(&a, 100, 5.0, 1);
    assert_eq!(ex[1].labels.0, full.0[25..75]);
}
