use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::loss::{contrastive_loss, distance, LossConfig};
use super::metrics::{calibrate, ScoredPair};
use super::{PairLabel, SiameseError, SiameseModel};
use crate::imageproc::NormalizedSignature;
use crate::nn::{derived_rng, Mode, OptimizerConfig, RmsProp, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedPair {
    pub a: usize,
    pub b: usize,
    pub label: PairLabel,
}

/// Labelled pairs over a shared bank of network inputs, so each image is
/// embedded once per evaluation however many pairs it appears in.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    images: Vec<Tensor>,
    pairs: Vec<IndexedPair>,
}

impl PairSet {
    pub fn new(images: Vec<Tensor>, pairs: Vec<IndexedPair>) -> Result<Self, SiameseError> {
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
                return Err(SiameseError::Shape(format!(
                    "pair set mixes input shapes {:?} and {:?}",
                    first.shape(),
                    bad.shape()
                )));
            }
        }
        if let Some(p) = pairs.iter().find(|p| p.a >= images.len() || p.b >= images.len()) {
            return Err(SiameseError::PairIndex { index: p.a.max(p.b), images: images.len() });
        }
        Ok(Self { images, pairs })
    }

    pub fn from_signatures(images: &[NormalizedSignature], pairs: Vec<IndexedPair>) -> Result<Self, SiameseError> {
        let tensors = images
            .iter()
            .map(|s| Tensor::new(vec![1, 1, s.height(), s.width()], s.values().to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tensors, pairs)
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn pairs(&self) -> &[IndexedPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == PairLabel::Positive).count()
    }
}

/// Loss of one pair in evaluation mode.
pub fn pair_loss(model: &SiameseModel, a: &Tensor, b: &Tensor, label: PairLabel, cfg: &LossConfig) -> Result<f64, SiameseError> {
    let d = distance(&model.embed_tensor(a)?, &model.embed_tensor(b)?)?;
    Ok(contrastive_loss(d, label, cfg).0)
}

/// Loss of one pair and its gradient with respect to the shared parameters.
/// Both branches write into the same gradient buffers. With `rng` set the
/// forward passes run in training mode (dropout active), left branch first.
pub fn pair_gradients(
    model: &SiameseModel,
    a: &Tensor,
    b: &Tensor,
    label: PairLabel,
    cfg: &LossConfig,
    rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Result<(f64, Vec<Tensor>), SiameseError> {
    let net = model.network();
    let ((ea, ta), (eb, tb)) = match rng {
        Some(r) => {
            let fa = net.forward(a, Mode::Train(r))?;
            (fa, net.forward(b, Mode::Train(r))?)
        }
        None => (net.forward(a, Mode::Eval)?, net.forward(b, Mode::Eval)?),
    };
    let d = distance(ea.data(), eb.data())?;
    let (loss, dl_dd) = contrastive_loss(d, label, cfg);
    let scale = if d > 0.0 { dl_dd / d } else { 0.0 };
    let diff: Vec<f64> = ea.data().iter().zip(eb.data()).map(|(x, y)| scale * (x - y)).collect();
    let ga = Tensor::new(ea.shape().to_vec(), diff.clone())?;
    let gb = Tensor::new(eb.shape().to_vec(), diff.into_iter().map(|v| -v).collect())?;
    let mut grads = net.zero_grads();
    net.backward(&ta, &ga, &mut grads)?;
    net.backward(&tb, &gb, &mut grads)?;
    Ok((loss, grads))
}

/// Evaluation-mode distances for every pair in `set`.
pub fn score_pairs(model: &SiameseModel, set: &PairSet) -> Result<Vec<ScoredPair>, SiameseError> {
    let emb = set
        .images
        .par_iter()
        .map(|x| model.embed_tensor(x))
        .collect::<Result<Vec<_>, _>>()?;
    set.pairs
        .iter()
        .map(|p| Ok(ScoredPair::new(distance(&emb[p.a], &emb[p.b])?, p.label)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            loss: LossConfig::default(),
            patience: 10,
            min_delta: 0.0,
            seed: 0,
        }
    }
}

/// Stops once the monitored loss has gone `patience` observations without
/// dropping more than `min_delta` below the best seen.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, since_best: 0 }
    }

    /// Records one value; returns `true` when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_acc";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_acc));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    /// Accuracy-maximizing threshold on the validation pairs at `best_epoch`.
    pub threshold: f64,
    pub stopped_early: bool,
}

pub struct Trainer {
    cfg: TrainConfig,
    optimizer: RmsProp,
    steps: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self, SiameseError> {
        cfg.optimizer.validate()?;
        cfg.loss.validate()?;
        Ok(Self { cfg, optimizer: RmsProp::new(), steps: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One optimizer update on the mean gradient of `batch` (indices into
    /// `set.pairs()`); returns the mean loss before the update.
    pub fn train_step(&mut self, model: &mut SiameseModel, set: &PairSet, batch: &[usize]) -> Result<f64, SiameseError> {
        if batch.is_empty() {
            return Err(SiameseError::EmptyPairs);
        }
        if let Some(&k) = batch.iter().find(|&&k| k >= set.len()) {
            return Err(SiameseError::PairIndex { index: k, images: set.len() });
        }
        let step = self.steps;
        let seed = self.cfg.seed;
        let loss_cfg = self.cfg.loss;
        let frozen: &SiameseModel = model;
        let per_pair = batch
            .par_iter()
            .map(|&k| {
                let p = set.pairs[k];
                let mut rng = derived_rng(seed, &[step, k as u64]);
                pair_gradients(frozen, &set.images[p.a], &set.images[p.b], p.label, &loss_cfg, Some(&mut rng))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut total = 0.0;
        let mut grads = model.network().zero_grads();
        for (loss, g) in &per_pair {
            total += loss;
            for (acc, gi) in grads.iter_mut().zip(g) {
                acc.add_assign(gi)?;
            }
        }
        let n = batch.len() as f64;
        grads.iter_mut().for_each(|g| g.scale(1.0 / n));
        self.optimizer.step(model.network_mut().params_mut(), &grads, &self.cfg.optimizer)?;
        self.steps += 1;
        Ok(total / n)
    }

    /// Mean evaluation-mode loss and calibrated accuracy on `set`.
    pub fn validate(&self, model: &SiameseModel, set: &PairSet) -> Result<(f64, f64, f64), SiameseError> {
        let scores = score_pairs(model, set)?;
        let loss = scores
            .iter()
            .map(|s| contrastive_loss(s.distance, s.label, &self.cfg.loss).0)
            .sum::<f64>()
            / scores.len() as f64;
        let report = calibrate(&scores)?;
        Ok((loss, report.accuracy, report.threshold))
    }

    /// Epoch loop with seeded shuffling, early stopping on validation loss, and
    /// restoration of the weights with the best validation accuracy.
    pub fn fit(&mut self, model: &mut SiameseModel, train: &PairSet, val: &PairSet) -> Result<TrainOutcome, SiameseError> {
        if train.is_empty() || val.is_empty() {
            return Err(SiameseError::EmptyPairs);
        }
        let bs = self.cfg.optimizer.batch_size;
        let mut stopper = EarlyStopping::new(self.cfg.patience, self.cfg.min_delta);
        let mut history = Vec::new();
        let mut best: Option<(usize, f64, f64, crate::nn::Network)> = None;
        let mut stopped_early = false;
        for epoch in 1..=self.cfg.optimizer.max_epochs {
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut derived_rng(self.cfg.seed, &[u64::MAX, epoch as u64]));
            let mut loss_sum = 0.0;
            for batch in order.chunks(bs) {
                loss_sum += self.train_step(model, train, batch)? * batch.len() as f64;
            }
            let train_loss = loss_sum / train.len() as f64;
            let (val_loss, val_acc, tau) = self.validate(model, val)?;
            info!(epoch, train_loss, val_loss, val_acc, "epoch finished");
            history.push(EpochRecord { epoch, train_loss, val_loss, val_acc });
            if best.as_ref().map_or(true, |b| val_acc > b.1) {
                best = Some((epoch, val_acc, tau, model.network().clone()));
            }
            if stopper.observe(val_loss) {
                stopped_early = epoch < self.cfg.optimizer.max_epochs;
                break;
            }
        }
        let Some((best_epoch, best_val_acc, threshold, net)) = best else {
            return Err(SiameseError::Config("max_epochs must be at least 1".into()));
        };
        *model.network_mut() = net;
        Ok(TrainOutcome { history, best_epoch, best_val_acc, threshold, stopped_early })
    }
}

pub fn train(model: &mut SiameseModel, train: &PairSet, val: &PairSet, cfg: &TrainConfig) -> Result<TrainOutcome, SiameseError> {
    Trainer::new(*cfg)?.fit(model, train, val)
}
