//! Training loop: Adam on categorical cross-entropy with per-epoch shuffling,
//! early stopping on validation loss and best-checkpoint retention.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use penkick_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{batch_inputs, Mode, Model, ModelConfig};
use crate::split::Split;
use crate::synthgen::sub_seed;
use crate::types::{DirectionLabel, KickSample, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            min_delta: 0.0,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam hyperparameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Patience-based early stopping on a monitored loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
            epoch: 0,
        }
    }

    /// Records the next epoch's loss. Returns the decision and whether the
    /// epoch improved on the best so far.
    pub fn update(&mut self, loss: f64) -> (StopDecision, bool) {
        self.epoch += 1;
        let improved = loss < self.best - self.min_delta;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.wait = 0;
        } else {
            self.wait += 1;
        }
        let decision = if self.wait >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (decision, improved)
    }

    /// 1-based epoch with the best loss, 0 before any update.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Deterministic permutation of `0..n` for a given seed and epoch.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed ^ 0x5348_5546, epoch as u64, 0));
    idx.shuffle(&mut rng);
    idx
}

/// Adam optimiser keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut BTreeMap<String, Tensor>, grads: &BTreeMap<String, Tensor>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let lr_t = self.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.raw_dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + self.epsilon);
            });
        }
    }
}

/// Loss, accuracy and per-sample outputs over a set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub labels: Vec<DirectionLabel>,
    pub predictions: Vec<DirectionLabel>,
    pub probs: Array2<f64>,
}

fn targets_for(samples: &[&KickSample]) -> Array2<f64> {
    let mut t = Array2::zeros((samples.len(), NUM_CLASSES));
    for (i, s) in samples.iter().enumerate() {
        t[[i, s.label.index()]] = 1.0;
    }
    t
}

fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of `probs` against `labels`.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[DirectionLabel]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| -probs[[i, l.index()]].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

/// Metrics computed directly from probabilities.
pub fn metrics_from_probs(probs: Array2<f64>, labels: Vec<DirectionLabel>) -> Result<SplitMetrics> {
    if labels.is_empty() {
        return Err(Error::InsufficientData("no samples to evaluate".into()));
    }
    if probs.nrows() != labels.len() {
        return Err(Error::shape(
            "probabilities",
            &[labels.len(), NUM_CLASSES],
            probs.shape(),
        ));
    }
    let predictions: Vec<DirectionLabel> = probs
        .rows()
        .into_iter()
        .map(|r| DirectionLabel::from_index(argmax(r)).expect("three classes"))
        .collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(SplitMetrics {
        loss: cross_entropy(&probs, &labels),
        accuracy: correct as f64 / labels.len() as f64,
        labels,
        predictions,
        probs,
    })
}

/// Inference-mode metrics over `samples`, evaluated in batches.
pub fn evaluate_samples(model: &Model, samples: &[&KickSample], batch_size: usize) -> Result<SplitMetrics> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to evaluate".into()));
    }
    let mut probs = Array2::zeros((samples.len(), NUM_CLASSES));
    for (c, chunk) in samples.chunks(batch_size.max(1)).enumerate() {
        let (frames, kps) = batch_inputs(chunk);
        let out = model.forward(frames.view(), kps.view())?;
        let start = c * batch_size.max(1);
        probs
            .slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&out.probs);
    }
    metrics_from_probs(probs, samples.iter().map(|s| s.label).collect())
}

/// Inference-mode metrics over one split of `dataset`.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split, batch_size: usize) -> Result<SplitMetrics> {
    let samples: Vec<&KickSample> = dataset
        .indices(split)
        .into_iter()
        .map(|i| &dataset.samples[i])
        .collect();
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("{} split is empty", split.name())));
    }
    evaluate_samples(model, &samples, batch_size)
}

/// Replaces the running batch-norm statistics with the population statistics
/// of the fusion input over `samples`, then returns inference-mode metrics.
pub fn refresh_bn_stats(model: &mut Model, samples: &[&KickSample], batch_size: usize) -> Result<SplitMetrics> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples to evaluate".into()));
    }
    let v = model.config.variant;
    let mut spatial = Vec::new();
    let mut skeletal = Vec::new();
    for chunk in samples.chunks(batch_size.max(1)) {
        let (frames, kps) = batch_inputs(chunk);
        if v.uses_spatial() {
            spatial.push(model.spatial_branch(frames.view(), kps.view())?);
        }
        if v.uses_skeletal() {
            skeletal.push(model.skeletal_branch(kps.view())?);
        }
    }
    let stack = |parts: &[Array2<f64>]| -> Option<Array2<f64>> {
        if parts.is_empty() {
            return None;
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Some(ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths"))
    };
    let (spatial, skeletal) = (stack(&spatial), stack(&skeletal));
    let parts: Vec<ndarray::ArrayView2<f64>> = [&spatial, &skeletal].into_iter().flatten().map(|a| a.view()).collect();
    let x = ndarray::concatenate(ndarray::Axis(1), &parts).expect("equal batch");
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let ddof = if x.nrows() > 1 { 1.0 } else { 0.0 };
    let var = x.var_axis(ndarray::Axis(0), ddof);
    model.buffers.insert(crate::model::BN_MEAN.to_string(), mean.into_dyn());
    model.buffers.insert(crate::model::BN_VAR.to_string(), var.into_dyn());
    let probs = model.fusion_head(spatial.as_ref().map(|a| a.view()), skeletal.as_ref().map(|a| a.view()))?;
    metrics_from_probs(probs, samples.iter().map(|s| s.label).collect())
}

/// Trains a fresh model and returns the checkpoint with the lowest validation loss.
pub fn train(dataset: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Checkpoint> {
    train_with_progress(dataset, model_cfg, train_cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Checkpoint> {
    train_cfg.validate()?;
    let train_idx = dataset.indices(Split::Train);
    let val_idx = dataset.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "training needs non-empty train and val splits (got {} and {})",
            train_idx.len(),
            val_idx.len()
        )));
    }
    if let Some(hw) = dataset.frame_hw() {
        if hw != model_cfg.input_hw {
            return Err(Error::shape(
                "frame size",
                &[model_cfg.input_hw.0, model_cfg.input_hw.1],
                &[hw.0, hw.1],
            ));
        }
    }
    let train_samples: Vec<&KickSample> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let val_samples: Vec<&KickSample> = val_idx.iter().map(|&i| &dataset.samples[i]).collect();

    let mut model = Model::new(model_cfg.clone())?;
    let mut best = model.clone();
    let mut adam = Adam::new(train_cfg);
    let mut stopper = EarlyStopping::new(train_cfg.patience, train_cfg.min_delta);
    let mut history = Vec::new();

    for epoch in 1..=train_cfg.max_epochs {
        let order = epoch_permutation(train_samples.len(), train_cfg.seed, epoch);
        for (b, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<&KickSample> = chunk.iter().map(|&i| train_samples[i]).collect();
            let (frames, kps) = batch_inputs(&batch);
            let targets = targets_for(&batch);
            let dropout_seed = sub_seed(train_cfg.seed, epoch as u64, b as u64 + 1);
            let step = model.loss_and_grads(frames.view(), kps.view(), &targets, Mode::Train { dropout_seed })?;
            let grads_finite = step.grads.values().all(|g| g.iter().all(|v| v.is_finite()));
            if !step.loss.is_finite() || !grads_finite {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            adam.step(&mut model.params, &step.grads);
        }
        let tr = refresh_bn_stats(&mut model, &train_samples, train_cfg.batch_size)?;
        let va = evaluate_samples(&model, &val_samples, train_cfg.batch_size)?;
        if !tr.loss.is_finite() || !va.loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(train_cfg.batch_size),
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: tr.loss,
            val_loss: va.loss,
            train_acc: tr.accuracy,
            val_acc: va.accuracy,
        };
        on_epoch(&record);
        history.push(record);
        let (decision, improved) = stopper.update(va.loss);
        if improved {
            best = model.clone();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }
    Ok(Checkpoint {
        model: best,
        history,
        best_epoch: stopper.best_epoch(),
    })
}

/// Writes the training history as CSV.
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in history {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelVariant;
    use proptest::prelude::*;

    fn replay(losses: &[f64], patience: usize, min_delta: f64) -> (Option<usize>, usize) {
        let mut best = f64::INFINITY;
        let mut best_epoch = 0;
        let mut since = 0;
        for (i, &l) in losses.iter().enumerate() {
            if l < best - min_delta {
                best = l;
                best_epoch = i + 1;
                since = 0;
            } else {
                since += 1;
                if since == patience {
                    return (Some(i + 1), best_epoch);
                }
            }
        }
        (None, best_epoch)
    }

    fn run(losses: &[f64], patience: usize, min_delta: f64) -> (Option<usize>, usize) {
        let mut es = EarlyStopping::new(patience, min_delta);
        for (i, &l) in losses.iter().enumerate() {
            if es.update(l).0 == StopDecision::Stop {
                return (Some(i + 1), es.best_epoch());
            }
        }
        (None, es.best_epoch())
    }

    #[test]
    fn early_stopping_examples() {
        let mut l = vec![1.0, 0.8];
        l.extend([0.81; 10]);
        assert_eq!(run(&l, 10, 0.0), (Some(12), 2));
        let dec: Vec<f64> = (0..100).map(|i| 1.0 - i as f64 * 0.001).collect();
        assert_eq!(run(&dec, 10, 0.0), (None, 100));
        assert_eq!(run(&[0.5; 20], 10, 0.0), (Some(11), 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn early_stopping_matches_replay(
            losses in proptest::collection::vec(0.0f64..2.0, 1..60),
            patience in 1usize..12,
            quantise in any::<bool>(),
        ) {
            let losses: Vec<f64> = if quantise {
                losses.iter().map(|l| (l * 4.0).round() / 4.0).collect()
            } else {
                losses
            };
            let got = run(&losses, patience, 0.0);
            prop_assert_eq!(got, replay(&losses, patience, 0.0));
            let upto = got.0.unwrap_or(losses.len());
            let min = losses[..upto].iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(losses[got.1 - 1], min);
        }

        #[test]
        fn permutation_is_bijective_and_reproducible(n in 0usize..200, seed in any::<u64>(), epoch in 1usize..100) {
            let p = epoch_permutation(n, seed, epoch);
            prop_assert_eq!(&p, &epoch_permutation(n, seed, epoch));
            let mut s = p.clone();
            s.sort_unstable();
            prop_assert_eq!(s, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn permutation_changes_between_epochs() {
        assert_ne!(epoch_permutation(50, 1, 1), epoch_permutation(50, 1, 2));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::new(0).validate().is_ok());
        let mut c = TrainConfig::new(0);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(0);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(0);
        c.patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn analytic_metrics() {
        let labels = vec![DirectionLabel::Left, DirectionLabel::Middle, DirectionLabel::Right];
        let m = metrics_from_probs(Array2::eye(3), labels.clone()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!(m.loss.abs() < 1e-12);
        let m = metrics_from_probs(Array2::from_elem((3, 3), 1.0 / 3.0), labels).unwrap();
        assert!((m.loss - 3f64.ln()).abs() < 1e-12);
        assert!(metrics_from_probs(Array2::zeros((0, 3)), vec![]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::new(0);
        let mut adam = Adam::new(&cfg);
        let mut p = BTreeMap::from([("w".to_string(), Tensor::from_elem(ndarray::IxDyn(&[2]), 1.0))]);
        let g = BTreeMap::from([(
            "w".to_string(),
            Tensor::from_shape_vec(ndarray::IxDyn(&[2]), vec![0.5, -3.0]).unwrap(),
        )]);
        adam.step(&mut p, &g);
        let w = &p["w"];
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-7);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-7);
    }

    fn random_sample(seed: u64, hw: (usize, usize)) -> KickSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..8)
            .map(|_| image::RgbImage::from_fn(hw.1 as u32, hw.0 as u32, |_, _| image::Rgb(rng.random())))
            .collect();
        let keypoints = ndarray::Array3::from_shape_simple_fn((8, 17, 2), || rng.random_range(0.0..1.0));
        KickSample {
            sample_id: format!("r{seed}"),
            label: DirectionLabel::from_index((seed % 3) as usize).unwrap(),
            frames,
            keypoints,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn one_step_decreases_single_sample_loss(seed in any::<u64>(), v in 0usize..4) {
            let variant = ModelVariant::ALL[v];
            let mut cfg = ModelConfig::toy(variant, seed);
            cfg.input_hw = (32, 32);
            let mut model = Model::new(cfg.clone()).unwrap();
            let s = random_sample(seed, cfg.input_hw);
            let (f, k) = batch_inputs(&[&s]);
            let t = targets_for(&[&s]);
            let mode = Mode::Train { dropout_seed: seed };
            let before = model.loss_and_grads(f.view(), k.view(), &t, mode).unwrap();
            let mut tc = TrainConfig::new(seed);
            tc.learning_rate = 1e-5;
            Adam::new(&tc).step(&mut model.params, &before.grads);
            let after = model.loss_and_grads(f.view(), k.view(), &t, mode).unwrap();
            prop_assert!(after.loss < before.loss || (after.loss - before.loss).abs() < 1e-9,
                "loss rose from {} to {}", before.loss, after.loss);
        }
    }
}
