#![allow(dead_code)]

pub mod oracles;

use std::path::Path;
use std::time::{Duration, Instant};

use airsig::dataset::{build_pair_set, split_by_authors, synth_generate, Split, SynthConfig};
use airsig::nn::{LayerSpec, Mode, Network, OptimizerConfig, Preset, Tensor};
use airsig::siamese::{
    distance, equal_error_rate, evaluate, history_csv, pair_gradients, pair_loss, score_pairs, train, LossConfig, PairSet,
    TrainConfig, TrainOutcome,
};
use airsig::landmark::{read_trace, synthetic_frame, Finger, FingerStates, LandmarkFrame};
use airsig::service::{CaptureConfig, CapturePipeline};
use airsig::{PairLabel, SiameseModel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Uniform values in `±[0.1, 1)`, away from the ReLU kink.
pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < FD_TOLERANCE && self.checked > 0
    }
}

/// Central-difference check of a single-network objective `<net(x), probe>`
/// over every input element and every parameter.
pub fn check_network(name: &str, input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::new(&input_shape[1..], specs, &mut rng).unwrap();
    // biases start at zero; perturb them so bias paths are exercised
    let mut net = net;
    for p in net.params_mut() {
        let noisy = random_tensor(p.shape(), &mut rng);
        for (v, n) in p.data_mut().iter_mut().zip(noisy.data()) {
            *v += 0.1 * n;
        }
    }
    let x = random_tensor(input_shape, &mut rng);
    let mask_seed = rng.random::<u64>();
    let run = |net: &Network, x: &Tensor| net.forward(x, Mode::Train(&mut ChaCha8Rng::seed_from_u64(mask_seed))).unwrap();
    let (out, trace) = run(&net, &x);
    let probe = random_tensor(out.shape(), &mut rng);
    let objective = |net: &Network, x: &Tensor| -> f64 {
        run(net, x).0.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut grads = net.zero_grads();
    let gx = net.backward(&trace, &probe, &mut grads).unwrap();

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[i] += FD_STEP;
        minus.data_mut()[i] -= FD_STEP;
        let numeric = (objective(&net, &plus) - objective(&net, &minus)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(gx.data()[i], numeric));
        checked += 1;
    }
    for t in 0..net.params().len() {
        for i in 0..net.params()[t].len() {
            let mut plus = net.clone();
            plus.params_mut()[t].data_mut()[i] += FD_STEP;
            let mut minus = net.clone();
            minus.params_mut()[t].data_mut()[i] -= FD_STEP;
            let numeric = (objective(&plus, &x) - objective(&minus, &x)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[t].data()[i], numeric));
            checked += 1;
        }
    }
    GradCheck { name: name.to_string(), max_rel_err: worst, checked }
}

/// One check per layer type plus a mixed stack.
pub fn layer_gradient_suite() -> Vec<GradCheck> {
    let lrn = LayerSpec::Lrn { k: 2.0, n: 3, alpha: 0.5, beta: 0.75 };
    vec![
        check_network("conv stride 1", &[2, 2, 6, 5], vec![LayerSpec::Conv { out_ch: 3, kh: 3, kw: 2, stride: 1 }], 1),
        check_network("conv stride 2", &[1, 2, 7, 7], vec![LayerSpec::Conv { out_ch: 2, kh: 3, kw: 3, stride: 2 }], 2),
        check_network("maxpool", &[2, 2, 7, 7], vec![LayerSpec::MaxPool { kh: 3, kw: 3, stride: 2 }], 3),
        check_network("lrn", &[2, 5, 3, 3], vec![lrn.clone()], 4),
        check_network("lrn default constants", &[1, 7, 2, 2], vec![LayerSpec::Lrn { k: 2.0, n: 5, alpha: 1e-4, beta: 0.75 }], 5),
        check_network("dropout", &[2, 3, 4, 4], vec![LayerSpec::Dropout { rate: 0.3 }], 6),
        check_network("dense", &[3, 1, 2, 4], vec![LayerSpec::Flatten, LayerSpec::Dense { out: 5 }], 7),
        check_network("relu", &[2, 2, 3, 3], vec![LayerSpec::Relu], 8),
        check_network("flatten", &[2, 2, 3, 3], vec![LayerSpec::Flatten], 9),
        check_network(
            "mixed stack",
            &[1, 1, 12, 12],
            vec![
                LayerSpec::Conv { out_ch: 4, kh: 3, kw: 3, stride: 1 },
                LayerSpec::Relu,
                lrn,
                LayerSpec::MaxPool { kh: 3, kw: 3, stride: 2 },
                LayerSpec::Dropout { rate: 0.25 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { out: 3 },
            ],
            10,
        ),
    ]
}

/// Composed twin-network contrastive loss on the tiny preset, checked on a
/// seeded sample of entries from every parameter tensor. A probe whose `±h`
/// perturbation flips a ReLU gate or a pooling winner straddles a kink where
/// the loss has no derivative; it is skipped and another entry is drawn.
pub fn siamese_gradient_check(label: PairLabel, per_tensor: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SiameseModel::new(Preset::Tiny, seed).unwrap();
    let [c, h, w] = Preset::Tiny.input_shape();
    let a = Tensor::from_fn(&[1, c, h, w], |_| rng.random_range(0.0..1.0));
    let b = Tensor::from_fn(&[1, c, h, w], |_| rng.random_range(0.0..1.0));
    // a margin one unit above the current distance keeps the negative hinge
    // active while the loss stays O(1), so rounding in the difference is small
    let d = distance(&model.embed_tensor(&a).unwrap(), &model.embed_tensor(&b).unwrap()).unwrap();
    let cfg = LossConfig { margin: d + 1.0, ..LossConfig::default() };
    let (_, grads) = pair_gradients(&model, &a, &b, label, &cfg, None).unwrap();
    let pattern = |m: &SiameseModel| {
        let net = m.network();
        let pa = net.activation_pattern(&net.forward(&a, Mode::Eval).unwrap().1);
        let pb = net.activation_pattern(&net.forward(&b, Mode::Eval).unwrap().1);
        (pa, pb)
    };
    let base = pattern(&model);
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for t in 0..model.network().params().len() {
        let len = model.network().params()[t].len();
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let mut done = 0;
        for i in order {
            if done == per_tensor {
                break;
            }
            let mut plus = model.clone();
            plus.network_mut().params_mut()[t].data_mut()[i] += FD_STEP;
            let mut minus = model.clone();
            minus.network_mut().params_mut()[t].data_mut()[i] -= FD_STEP;
            if pattern(&plus) != base || pattern(&minus) != base {
                skipped += 1;
                continue;
            }
            let numeric = (pair_loss(&plus, &a, &b, label, &cfg).unwrap() - pair_loss(&minus, &a, &b, label, &cfg).unwrap())
                / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[t].data()[i], numeric));
            checked += 1;
            done += 1;
        }
    }
    GradCheck { name: format!("siamese contrastive loss, {label:?} pair ({skipped} kink probes skipped)"), max_rel_err: worst, checked }
}

pub struct E2eRun {
    pub outcome: TrainOutcome,
    pub history_csv: String,
    pub test_accuracy: f64,
    pub test_eer: f64,
    pub elapsed: Duration,
    pub model: SiameseModel,
    pub test: PairSet,
}

pub fn e2e_synth_config() -> SynthConfig {
    SynthConfig { seed: 7, n_signers: 12, genuine_per_signer: 10, forged_per_signer: 10, ..SynthConfig::default() }
}

pub fn e2e_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerConfig { lr: 3e-4, batch_size: 32, max_epochs: 30, ..OptimizerConfig::default() },
        seed,
        ..TrainConfig::default()
    }
}

/// Synthetic corpus, signer-disjoint 50/25/25 split, tiny-preset training,
/// then evaluation on the held-out signers at the validation threshold.
pub fn run_e2e(dir: &Path, train_seed: u64) -> E2eRun {
    let start = Instant::now();
    let records = synth_generate(&e2e_synth_config(), dir).unwrap();
    let plan = split_by_authors(&records, &[0.5, 0.25, 0.25], 7).unwrap();
    let [_, h, w] = Preset::Tiny.input_shape();
    let set = |s| build_pair_set(&plan.select(&records, s), h, w, true, 7).unwrap();
    let (tr, va, te) = (set(Split::Train), set(Split::Val), set(Split::Test));
    let mut model = SiameseModel::new(Preset::Tiny, train_seed).unwrap();
    let outcome = train(&mut model, &tr, &va, &e2e_train_config(train_seed)).unwrap();
    let report = evaluate(&model, &te, outcome.threshold).unwrap();
    let eer = equal_error_rate(&score_pairs(&model, &te).unwrap()).unwrap();
    E2eRun {
        history_csv: history_csv(&outcome.history),
        outcome,
        test_accuracy: report.accuracy,
        test_eer: eer.eer,
        elapsed: start.elapsed(),
        model,
        test: te,
    }
}

pub const TRACE_FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/trace_100.jsonl");

pub fn load_trace() -> Vec<LandmarkFrame> {
    read_trace(std::io::BufReader::new(std::fs::File::open(TRACE_FIXTURE).unwrap())).unwrap()
}

/// Twelve frames per posture, a horizontal sweep of the pointer.
pub fn posture_frames(postures: &[&[Finger]]) -> Vec<LandmarkFrame> {
    let mut frames = Vec::new();
    for (block, fingers) in postures.iter().enumerate() {
        for k in 0..12 {
            let t = frames.len() as u64 * 33;
            let x = 0.2 + 0.05 * k as f64;
            let y = 0.3 + 0.2 * block as f64 / postures.len() as f64;
            frames.push(synthetic_frame(t, 640, 480, FingerStates::from_fingers(fingers), x, y));
        }
    }
    frames
}

pub fn stroke_count(frames: &[LandmarkFrame]) -> usize {
    let mut pipeline = CapturePipeline::new(&CaptureConfig::default()).unwrap();
    for f in frames {
        pipeline.process(f).unwrap();
    }
    pipeline.session().strokes().len()
}

pub const ACTIVE: &[Finger] = &[Finger::Index];
pub const STOP: &[Finger] = &[Finger::Index, Finger::Middle];
pub const ERASE: &[Finger] = &Finger::ALL;
