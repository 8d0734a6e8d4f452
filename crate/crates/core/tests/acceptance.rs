mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use airsig::dataset::{build_pair_set, split_by_authors, synth_generate, Split, SynthConfig};
use airsig::nn::{OptimizerConfig, Preset, Tensor};
use airsig::service::{replay, CaptureConfig};
use airsig::siamese::{Branch, TrainConfig, Trainer};
use airsig::{PairLabel, SiameseModel};
use common::oracles::{self, Check};
use common::{layer_gradient_suite, load_trace, posture_frames, run_e2e, siamese_gradient_check, stroke_count};
use common::{ACTIVE, ERASE, STOP};
use rand::{Rng, SeedableRng};

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut checks = layer_gradient_suite();
    checks.push(siamese_gradient_check(PairLabel::Positive, 40, 21));
    checks.push(siamese_gradient_check(PairLabel::Negative, 40, 22));
    let elapsed = start.elapsed();
    let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    if let Some(bad) = checks.iter().find(|c| !c.passed()) {
        return Err(format!("{}: max rel err {:.2e} over {} entries", bad.name, bad.max_rel_err, bad.checked));
    }
    if elapsed >= Duration::from_secs(60) {
        return Err(format!("took {elapsed:.1?}"));
    }
    Ok(format!("{} checks, max rel err {worst:.2e}, {elapsed:.1?}", checks.len()))
}

fn loss_and_metrics() -> Check {
    let a = oracles::loss_table(1000, 11)?;
    let b = oracles::metric_recount(10_000, 5, 12)?;
    Ok(format!("{a}; {b}"))
}

fn end_to_end() -> Check {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = run_e2e(d1.path(), 7);
    let again = run_e2e(d2.path(), 7);
    let epochs = run.outcome.history.len();
    let summary = format!(
        "test accuracy {:.3}, EER {:.3}, {epochs} epochs (best {}), {:.1?}",
        run.test_accuracy, run.test_eer, run.outcome.best_epoch, run.elapsed
    );
    if run.test_accuracy < 0.80 || run.test_eer > 0.20 || epochs > 30 || run.elapsed >= Duration::from_secs(600) {
        return Err(summary);
    }
    if run.history_csv != again.history_csv {
        return Err(format!("{summary}; history differs between identical runs"));
    }
    Ok(format!("{summary}; history reproduced"))
}

fn stroke_determinism() -> Check {
    let frames = load_trace();
    let cfg = CaptureConfig::default();
    let (a, stats) = replay(&frames, &cfg).map_err(|e| e.to_string())?;
    let (b, _) = replay(&frames, &cfg).map_err(|e| e.to_string())?;
    if a.to_png().unwrap() != b.to_png().unwrap() {
        return Err("replays differ".into());
    }
    let strokes = (stroke_count(&posture_frames(&[ACTIVE, STOP, ACTIVE])), stroke_count(&posture_frames(&[ACTIVE, ERASE])));
    if strokes != (2, 0) {
        return Err(format!("posture fixtures gave {strokes:?} strokes"));
    }
    Ok(format!("{}-frame trace, {} strokes, PNGs identical; fixtures 2 and 0 strokes", frames.len(), stats.strokes))
}

fn paper_shape() -> Check {
    let model = SiameseModel::new(Preset::Paper, 1).map_err(|e| e.to_string())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::from_fn(&[1, 1, 155, 220], |_| rng.random_range(0.0..1.0));
    let e = model.embed_tensor(&x).map_err(|e| e.to_string())?;
    if e.len() != 128 {
        return Err(format!("embedding length {}", e.len()));
    }
    Ok(format!("1x155x220 -> {} values, {} parameters", e.len(), model.network().param_count()))
}

fn shared_weights() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { n_signers: 4, genuine_per_signer: 4, forged_per_signer: 4, seed: 3, ..SynthConfig::default() };
    let records = synth_generate(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let plan = split_by_authors(&records, &[0.5, 0.5], 3).map_err(|e| e.to_string())?;
    let [_, h, w] = Preset::Tiny.input_shape();
    let set = build_pair_set(&plan.select(&records, Split::Train), h, w, true, 3).map_err(|e| e.to_string())?;
    let mut model = SiameseModel::new(Preset::Tiny, 3).map_err(|e| e.to_string())?;
    let before = model.clone();
    let config = TrainConfig {
        optimizer: OptimizerConfig { lr: 1e-3, batch_size: 4, ..OptimizerConfig::default() },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config).map_err(|e| e.to_string())?;
    let order: Vec<usize> = (0..set.len()).collect();
    for batch in order.chunks(4).take(5) {
        trainer.train_step(&mut model, &set, batch).map_err(|e| e.to_string())?;
    }
    if trainer.steps() != 5 || model == before {
        return Err("weights did not move after 5 steps".into());
    }
    for (i, x) in set.images().iter().enumerate() {
        let left = model.embed_tensor_on(Branch::Left, x).map_err(|e| e.to_string())?;
        let right = model.embed_tensor_on(Branch::Right, x).map_err(|e| e.to_string())?;
        if left != right {
            return Err(format!("branches disagree on image {i}"));
        }
    }
    Ok(format!("5 steps, {} inputs, branch outputs identical", set.images().len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("gradient suite", gradient_suite),
        ("loss and metric oracles", loss_and_metrics),
        ("threshold calibration", oracles::calibration_fixtures),
        ("end-to-end training", end_to_end),
        ("preprocessing", || oracles::preprocessing(13)),
        ("stroke determinism", stroke_determinism),
        ("paper preset shape", paper_shape),
        ("shared weights", shared_weights),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
