use serde::{Deserialize, Serialize};

use super::{PairLabel, SiameseError};

/// A pair distance together with its ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub distance: f64,
    pub label: PairLabel,
}

impl ScoredPair {
    pub fn new(distance: f64, label: PairLabel) -> Self {
        Self { distance, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    /// Counts decisions at `threshold`; a pair is accepted iff `distance <= threshold`.
    pub fn at(scores: &[ScoredPair], threshold: f64) -> Self {
        let mut m = Self { tp: 0, tn: 0, fp: 0, fn_: 0 };
        for s in scores {
            let accept = s.distance <= threshold;
            match (s.label, accept) {
                (PairLabel::Positive, true) => m.tp += 1,
                (PairLabel::Positive, false) => m.fn_ += 1,
                (PairLabel::Negative, true) => m.fp += 1,
                (PairLabel::Negative, false) => m.tn += 1,
            }
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    /// Accepted impostor pairs over all impostor pairs; 0 when there are none.
    pub fn far(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Rejected genuine pairs over all genuine pairs; 0 when there are none.
    pub fn frr(&self) -> f64 {
        ratio(self.fn_, self.fn_ + self.tp)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
    pub confusion_matrix: [[usize; 2]; 2],
}

impl VerificationReport {
    pub fn from_scores(scores: &[ScoredPair], threshold: f64) -> Result<Self, SiameseError> {
        check_scores(scores)?;
        Ok(Self::from_confusion(ConfusionMatrix::at(scores, threshold), threshold))
    }

    /// The matrix is laid out `[[tp, fn], [fp, tn]]`: rows are the true class
    /// (genuine, impostor), columns the decision (accept, reject).
    pub fn from_confusion(m: ConfusionMatrix, threshold: f64) -> Self {
        Self {
            tp: m.tp,
            tn: m.tn,
            fp: m.fp,
            fn_: m.fn_,
            accuracy: m.accuracy(),
            far: m.far(),
            frr: m.frr(),
            threshold,
            confusion_matrix: [[m.tp, m.fn_], [m.fp, m.tn]],
        }
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix { tp: self.tp, tn: self.tn, fp: self.fp, fn_: self.fn_ }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn check_scores(scores: &[ScoredPair]) -> Result<(), SiameseError> {
    if scores.is_empty() {
        return Err(SiameseError::EmptyPairs);
    }
    if let Some(s) = scores.iter().find(|s| !s.distance.is_finite()) {
        return Err(SiameseError::Config(format!("non-finite distance {}", s.distance)));
    }
    Ok(())
}

/// Thresholds worth trying: one below every distance (reject all), the
/// midpoints between consecutive distinct distances, and the largest
/// distance (accept all). Returned in increasing order.
pub fn candidate_thresholds(scores: &[ScoredPair]) -> Vec<f64> {
    let mut d: Vec<f64> = scores.iter().map(|s| s.distance).collect();
    d.sort_by(f64::total_cmp);
    d.dedup();
    let mut out = Vec::with_capacity(d.len() + 1);
    if let (Some(&lo), Some(&hi)) = (d.first(), d.last()) {
        out.push(lo - 1.0);
        out.extend(d.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        out.push(hi);
    }
    out
}

/// Confusion counts at every candidate threshold, by a single sweep over the
/// sorted distances.
fn sweep(scores: &[ScoredPair]) -> Vec<(f64, ConfusionMatrix)> {
    let mut sorted: Vec<ScoredPair> = scores.to_vec();
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance));
    let pos = scores.iter().filter(|s| s.label == PairLabel::Positive).count();
    let neg = scores.len() - pos;
    let mut out = Vec::new();
    let (mut i, mut tp, mut fp) = (0, 0, 0);
    for tau in candidate_thresholds(scores) {
        while i < sorted.len() && sorted[i].distance <= tau {
            match sorted[i].label {
                PairLabel::Positive => tp += 1,
                PairLabel::Negative => fp += 1,
            }
            i += 1;
        }
        out.push((tau, ConfusionMatrix { tp, fp, fn_: pos - tp, tn: neg - fp }));
    }
    out
}

/// Accuracy-maximizing threshold and its report. Ties go to the smallest
/// threshold.
pub fn calibrate(scores: &[ScoredPair]) -> Result<VerificationReport, SiameseError> {
    check_scores(scores)?;
    let mut best: Option<(f64, ConfusionMatrix)> = None;
    for (tau, m) in sweep(scores) {
        if best.map_or(true, |(_, b)| m.tp + m.tn > b.tp + b.tn) {
            best = Some((tau, m));
        }
    }
    let (tau, m) = best.expect("non-empty candidates");
    Ok(VerificationReport::from_confusion(m, tau))
}

pub fn calibrate_threshold(scores: &[ScoredPair]) -> Result<f64, SiameseError> {
    Ok(calibrate(scores)?.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Equal error rate: `(FAR + FRR) / 2` at the candidate threshold where the
/// two rates are closest (smallest threshold on ties).
pub fn equal_error_rate(scores: &[ScoredPair]) -> Result<EerPoint, SiameseError> {
    check_scores(scores)?;
    let has_pos = scores.iter().any(|s| s.label == PairLabel::Positive);
    let has_neg = scores.iter().any(|s| s.label == PairLabel::Negative);
    if !(has_pos && has_neg) {
        return Err(SiameseError::SingleClass);
    }
    let mut best: Option<EerPoint> = None;
    for (tau, m) in sweep(scores) {
        let (far, frr) = (m.far(), m.frr());
        if best.map_or(true, |b| (far - frr).abs() < (b.far - b.frr).abs()) {
            best = Some(EerPoint { eer: 0.5 * (far + frr), threshold: tau, far, frr });
        }
    }
    Ok(best.expect("non-empty candidates"))
}
