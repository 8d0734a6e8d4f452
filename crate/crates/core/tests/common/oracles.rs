//! Independent recomputations used by both the oracle tests and the
//! acceptance harness. Each check returns a short summary or a failure
//! message.

use airsig::imageproc::{preprocess, preprocess_to, INPUT_H, INPUT_W};
use airsig::siamese::{
    calibrate, contrastive_loss, ConfusionMatrix, LossConfig, LossKind, ScoredPair, VerificationReport,
};
use airsig::{PairLabel, SignatureImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_label(rng: &mut ChaCha8Rng) -> PairLabel {
    if rng.random::<bool>() {
        PairLabel::Positive
    } else {
        PairLabel::Negative
    }
}

/// Case-by-case loss values, written out without the library's match.
fn loss_by_cases(d: f64, y: f64, m: f64, squared: bool) -> f64 {
    let hinge = if m - d > 0.0 { m - d } else { 0.0 };
    if squared {
        (1.0 - y) * d * d + y * hinge * hinge
    } else {
        (1.0 - y) * d + y * hinge
    }
}

pub fn loss_table(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cases {
        let d = rng.random_range(0.0..3.0);
        let m = rng.random_range(0.1..2.0);
        let label = random_label(&mut rng);
        let y = if label == PairLabel::Positive { 0.0 } else { 1.0 };
        for (kind, squared) in [(LossKind::Linear, false), (LossKind::Squared, true)] {
            let got = contrastive_loss(d, label, &LossConfig { margin: m, kind }).0;
            let want = loss_by_cases(d, y, m, squared);
            ensure(got == want, || format!("case {i}: d={d} m={m} {label:?} {kind:?}: {got} != {want}"))?;
        }
    }
    Ok(format!("{cases} cases, both loss forms"))
}

fn recount(scores: &[ScoredPair], tau: f64) -> (usize, usize, usize, usize) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for s in scores {
        let accept = s.distance <= tau;
        match (s.label, accept) {
            (PairLabel::Positive, true) => tp += 1,
            (PairLabel::Positive, false) => fn_ += 1,
            (PairLabel::Negative, true) => fp += 1,
            (PairLabel::Negative, false) => tn += 1,
        }
    }
    (tp, tn, fp, fn_)
}

pub fn random_scores(n: usize, rng: &mut ChaCha8Rng) -> Vec<ScoredPair> {
    (0..n)
        .map(|_| {
            let label = random_label(rng);
            // quantized so ties occur
            let d = (rng.random_range(0.0..2.0f64) * 100.0).round() / 100.0;
            ScoredPair::new(d, label)
        })
        .collect()
}

pub fn metric_recount(n: usize, rounds: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for round in 0..rounds {
        let scores = random_scores(n, &mut rng);
        let tau = (rng.random_range(0.0..2.0f64) * 100.0).round() / 100.0;
        let (tp, tn, fp, fn_) = recount(&scores, tau);
        let m = ConfusionMatrix::at(&scores, tau);
        ensure((m.tp, m.tn, m.fp, m.fn_) == (tp, tn, fp, fn_), || format!("round {round}: counts {m:?}"))?;
        let r = VerificationReport::from_scores(&scores, tau).map_err(|e| e.to_string())?;
        let acc = (tp + tn) as f64 / n as f64;
        let far = if fp + tn == 0 { 0.0 } else { fp as f64 / (fp + tn) as f64 };
        let frr = if fn_ + tp == 0 { 0.0 } else { fn_ as f64 / (fn_ + tp) as f64 };
        ensure(r.accuracy == acc && r.far == far && r.frr == frr, || format!("round {round}: rates {r:?}"))?;
        ensure(r.confusion_matrix == [[tp, fn_], [fp, tn]], || format!("round {round}: matrix {r:?}"))?;
    }
    Ok(format!("{rounds} lists of {n} pairs"))
}

/// Best accuracy over one below the minimum, every midpoint between
/// distinct distances and the maximum, recounting from scratch each time.
/// Ties go low. Also confirms that no raw distance used as a threshold does
/// better.
pub fn exhaustive_calibration(scores: &[ScoredPair]) -> (f64, f64) {
    let mut d: Vec<f64> = scores.iter().map(|s| s.distance).collect();
    d.sort_by(f64::total_cmp);
    let mut taus = vec![d[0] - 1.0];
    for w in d.windows(2) {
        if w[1] > w[0] {
            taus.push(0.5 * (w[0] + w[1]));
        }
    }
    taus.push(d[d.len() - 1]);
    let accuracy = |tau: f64| {
        let (tp, tn, _, _) = recount(scores, tau);
        (tp + tn) as f64 / scores.len() as f64
    };
    let mut best = (f64::NAN, -1.0);
    for tau in taus {
        let acc = accuracy(tau);
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    assert!(d.iter().all(|&tau| accuracy(tau) <= best.1));
    best
}

fn fixture(pos: &[f64], neg: &[f64]) -> Vec<ScoredPair> {
    pos.iter()
        .map(|&d| ScoredPair::new(d, PairLabel::Positive))
        .chain(neg.iter().map(|&d| ScoredPair::new(d, PairLabel::Negative)))
        .collect()
}

pub fn calibration_fixtures() -> Check {
    let separable: [(&[f64], &[f64]); 3] =
        [(&[0.1, 0.2], &[0.8, 0.9]), (&[0.0, 0.3, 0.31], &[0.5, 1.7]), (&[1.0], &[1.5, 2.0, 2.5])];
    for (pos, neg) in separable {
        let r = calibrate(&fixture(pos, neg)).map_err(|e| e.to_string())?;
        ensure(r.accuracy == 1.0 && r.far == 0.0 && r.frr == 0.0, || format!("separable {pos:?}/{neg:?}: {r:?}"))?;
    }
    let overlap = fixture(&[0.1, 0.6], &[0.4, 0.9]);
    let r = calibrate(&overlap).map_err(|e| e.to_string())?;
    let (tau, acc) = exhaustive_calibration(&overlap);
    ensure(r.accuracy == 0.75 && acc == 0.75, || format!("overlap accuracy {} vs oracle {acc}", r.accuracy))?;
    ensure(r.threshold == 0.25 && tau == 0.25, || format!("overlap threshold {} vs oracle {tau}", r.threshold))?;
    Ok("3 separable fixtures at accuracy 1.0; overlap 0.75 at 0.25".into())
}

pub fn preprocessing(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let (w, h) = (rng.random_range(1..400), rng.random_range(1..300));
        let px: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let out = preprocess(&SignatureImage::new(w, h, px).unwrap()).map_err(|e| e.to_string())?;
        ensure((out.height(), out.width()) == (INPUT_H, INPUT_W), || format!("{w}x{h} gave {}x{}", out.width(), out.height()))?;
        ensure(out.values().iter().all(|v| (0.0..=1.0).contains(v)), || format!("{w}x{h}: value out of [0,1]"))?;
    }
    let blank = preprocess(&SignatureImage::blank(300, 120).unwrap()).map_err(|e| e.to_string())?;
    ensure(blank.values().iter().all(|&v| v == 0.0), || "blank input not all zero".into())?;
    for c in [0u8, 17, 128, 254] {
        let img = SignatureImage::new(97, 51, vec![c; 97 * 51]).unwrap();
        let want = (255.0 - c as f64) / 255.0;
        let out = preprocess(&img).map_err(|e| e.to_string())?;
        ensure(out.values().iter().all(|&v| v == want), || format!("constant {c} not preserved"))?;
    }
    let px: Vec<u8> = (0..INPUT_W * INPUT_H).map(|_| rng.random()).collect();
    let img = SignatureImage::new(INPUT_W, INPUT_H, px.clone()).unwrap();
    let out = preprocess(&img).map_err(|e| e.to_string())?;
    let direct: Vec<f64> = px.iter().map(|&p| (255.0 - p as f64) / 255.0).collect();
    ensure(out.values() == direct.as_slice(), || "identity resize changed values".into())?;
    let small = preprocess_to(&img, 10, 20).map_err(|e| e.to_string())?;
    ensure(small.values().len() == 200, || "custom size".into())?;
    Ok("20 random sizes, blank, 4 constants, identity".into())
}
