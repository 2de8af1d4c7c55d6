//! Metrics, confusion matrices, the variant ablation and threshold-sweep
//! harnesses, and attention-map export.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{batch_inputs, Model, ModelConfig, ModelVariant};
use crate::segmentation::ThresholdConfig;
use crate::split::Split;
use crate::synthgen::{generate_corpora, GeneratorConfig};
use crate::training::{csv_err, evaluate_split, train_with_progress, EpochRecord, SplitMetrics, TrainConfig};
use crate::types::{DirectionLabel, KickSample, NUM_CLASSES};

/// Unrounded percentage `100·correct/total`.
pub fn percent(correct: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::InsufficientData("accuracy over zero samples".into()));
    }
    if correct > total {
        return Err(Error::Input(format!("{correct} correct out of {total}")));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Percentage `100·correct/total` rounded to two decimals.
pub fn accuracy(correct: usize, total: usize) -> Result<f64> {
    Ok((percent(correct, total)? * 100.0).round() / 100.0)
}

/// Counts indexed `[true][predicted]` in LEFT, MIDDLE, RIGHT order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_predictions(labels: &[DirectionLabel], preds: &[DirectionLabel]) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::Input(format!(
                "{} labels but {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        let mut counts = [[0; NUM_CLASSES]; NUM_CLASSES];
        for (l, p) in labels.iter().zip(preds) {
            counts[l.index()][p.index()] += 1;
        }
        Ok(Self { counts })
    }

    pub fn from_metrics(m: &SplitMetrics) -> Result<Self> {
        Self::from_predictions(&m.labels, &m.predictions)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// Percentage accuracy, two decimals.
    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self.trace(), self.total())
    }

    /// Unrounded percentage accuracy.
    pub fn percent(&self) -> Result<f64> {
        percent(self.trace(), self.total())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for l in DirectionLabel::ALL {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for l in DirectionLabel::ALL {
            out.push_str(l.name());
            for c in self.counts[l.index()] {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8}", "")?;
        for l in DirectionLabel::ALL {
            write!(f, "{:>8}", l.name())?;
        }
        writeln!(f)?;
        for l in DirectionLabel::ALL {
            write!(f, "{:>8}", l.name())?;
            for c in self.counts[l.index()] {
                write!(f, "{c:>8}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    assert!(n > 0, "median of an empty slice");
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `FULL ≥ DUAL_NO_ATTENTION ≥ max(VISUAL_ONLY, POSE_ONLY)`, each step with `slack` points.
pub fn ablation_ordering_holds(acc: &BTreeMap<ModelVariant, f64>, slack: f64) -> bool {
    let get = |v| acc.get(&v).copied().unwrap_or(f64::NAN);
    let full = get(ModelVariant::Full);
    let dual = get(ModelVariant::DualNoAttention);
    let single = get(ModelVariant::VisualOnly).max(get(ModelVariant::PoseOnly));
    full >= dual - slack && dual >= single - slack
}

/// Non-increasing accuracy with threshold and a first-to-last drop of at least `min_gap` points.
pub fn threshold_trend_holds(rows: &[(f64, f64)], min_gap: f64) -> bool {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted.windows(2).all(|w| w[0].1 >= w[1].1);
    match (sorted.first(), sorted.last()) {
        (Some(a), Some(b)) => monotone && a.1 - b.1 >= min_gap,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub parameter_count: usize,
    /// Unrounded test accuracy in percent, absent when training failed.
    pub accuracy: Option<f64>,
    pub confusion: Option<ConfusionMatrix>,
    pub best_epoch: Option<usize>,
    pub epochs_run: Option<usize>,
    pub wall_clock_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Accuracy per successfully trained variant.
    pub fn accuracies(&self) -> BTreeMap<ModelVariant, f64> {
        self.rows
            .iter()
            .filter_map(|r| r.accuracy.map(|a| (r.variant, a)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,test_accuracy,parameter_count,best_epoch,epochs_run,wall_clock_s,error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3},{}\n",
                r.variant.name(),
                r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                r.parameter_count,
                r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
                r.epochs_run.map(|e| e.to_string()).unwrap_or_default(),
                r.wall_clock_s,
                r.error.as_deref().map(csv_field).unwrap_or_default(),
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn csv_field(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<20} {:>18} {:>12} {:>6} {:>10}",
            "Model variant", "Test accuracy (%)", "Parameters", "Best", "Time (s)"
        )?;
        for r in &self.rows {
            let acc = r.accuracy.map(|a| format!("{a:.2}")).unwrap_or_else(|| "failed".into());
            let best = r.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<20} {:>18} {:>12} {:>6} {:>10.1}",
                r.variant.name(),
                acc,
                r.parameter_count,
                best,
                r.wall_clock_s
            )?;
        }
        Ok(())
    }
}

/// Outcome of training and testing one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: SplitMetrics,
    pub confusion: ConfusionMatrix,
    /// Unrounded test accuracy in percent.
    pub accuracy: f64,
}

/// Trains `model_cfg` on `dataset` and evaluates the returned checkpoint on the test split.
pub fn train_and_test(
    dataset: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    let ck = train_with_progress(dataset, model_cfg, train_cfg, on_epoch)?;
    let test = evaluate_split(&ck.model, dataset, Split::Test, train_cfg.batch_size)?;
    let confusion = ConfusionMatrix::from_metrics(&test)?;
    let accuracy = confusion.percent()?;
    Ok(RunResult {
        model: ck.model,
        history: ck.history,
        best_epoch: ck.best_epoch,
        test,
        confusion,
        accuracy,
    })
}

/// Trains each of the four variants on the same data with the same seeds.
/// A failing variant is reported in its row rather than aborting the run.
pub fn run_ablation(
    dataset: &Dataset,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(ModelVariant, &EpochRecord),
) -> AblationReport {
    let rows = ModelVariant::ALL
        .iter()
        .map(|&variant| {
            let cfg = base.with_variant(variant);
            let parameter_count = crate::model::count_parameters(&cfg);
            let start = Instant::now();
            let result = train_and_test(dataset, &cfg, train_cfg, |r| on_epoch(variant, r));
            let wall_clock_s = start.elapsed().as_secs_f64();
            match result {
                Ok(r) => AblationRow {
                    variant,
                    parameter_count,
                    accuracy: Some(r.accuracy),
                    confusion: Some(r.confusion),
                    best_epoch: Some(r.best_epoch),
                    epochs_run: Some(r.history.len()),
                    wall_clock_s,
                    error: None,
                },
                Err(e) => AblationRow {
                    variant,
                    parameter_count,
                    accuracy: None,
                    confusion: None,
                    best_epoch: None,
                    epochs_run: None,
                    wall_clock_s,
                    error: Some(format!("{}: {e}", e.class_name())),
                },
            }
        })
        .collect();
    AblationReport { rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Unrounded test accuracy in percent.
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Rows in ascending threshold order.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.threshold, r.accuracy)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,test_accuracy,best_epoch,epochs_run\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.threshold, r.accuracy, r.best_epoch, r.epochs_run
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

impl fmt::Display for SweepReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>18} {:>20} {:>6}",
            "Distance threshold", "Testing accuracy (%)", "Best"
        )?;
        for r in &self.rows {
            writeln!(f, "{:>18.2} {:>20.2} {:>6}", r.threshold, r.accuracy, r.best_epoch)?;
        }
        Ok(())
    }
}

/// Synthetic data source for a threshold sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepData {
    pub n_samples: usize,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub raster_hw: (u32, u32),
}

/// Trains the FULL variant on each `(threshold, dataset)` pair; rows are
/// sorted by threshold.
pub fn sweep_datasets(
    datasets: &[(f64, &Dataset)],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(f64, &EpochRecord),
) -> Result<SweepReport> {
    let cfg = model_cfg.with_variant(ModelVariant::Full);
    let mut order: Vec<usize> = (0..datasets.len()).collect();
    order.sort_by(|&a, &b| datasets[a].0.total_cmp(&datasets[b].0));
    let mut rows = Vec::with_capacity(datasets.len());
    for i in order {
        let (threshold, ds) = datasets[i];
        let r = train_and_test(ds, &cfg, train_cfg, |e| on_epoch(threshold, e))?;
        rows.push(SweepRow {
            threshold,
            accuracy: r.accuracy,
            confusion: r.confusion,
            best_epoch: r.best_epoch,
            epochs_run: r.history.len(),
        });
    }
    Ok(SweepReport { rows })
}

/// Segments one set of synthetic scenarios at every threshold and trains
/// the FULL variant on each resulting dataset.
pub fn threshold_sweep(
    thresholds: &[f64],
    data: &SweepData,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    on_epoch: impl FnMut(f64, &EpochRecord),
) -> Result<SweepReport> {
    if thresholds.is_empty() {
        return Err(Error::InsufficientData("no thresholds to sweep".into()));
    }
    let cfgs = thresholds
        .iter()
        .map(|&t| ThresholdConfig::new(t))
        .collect::<Result<Vec<_>>>()?;
    let corpora = generate_corpora(data.n_samples, data.seed, &data.generator, &cfgs, data.raster_hw)?;
    let pairs: Vec<(f64, &Dataset)> = thresholds
        .iter()
        .copied()
        .zip(corpora.iter().map(|c| &c.dataset))
        .collect();
    sweep_datasets(&pairs, model_cfg, train_cfg, on_epoch)
}

/// Attention maps of one sample: raw `[8, h, w]` values and the
/// nearest-neighbour upscales to input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionExport {
    pub raw: Array3<f64>,
    pub images: Vec<GrayImage>,
}

/// Nearest-neighbour upscale of one map to `(height, width)`, values mapped to 0..=255.
pub fn upscale_map(map: ndarray::ArrayView2<f64>, hw: (usize, usize)) -> GrayImage {
    let (mh, mw) = map.dim();
    let (h, w) = hw;
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let sy = (y as usize * mh) / h;
        let sx = (x as usize * mw) / w;
        Luma([(map[[sy, sx]] * 255.0).round().clamp(0.0, 255.0) as u8])
    })
}

/// Computes the FULL model's attention maps for `sample`.
pub fn attention_maps(model: &Model, sample: &KickSample) -> Result<AttentionExport> {
    if model.variant() != ModelVariant::Full {
        return Err(Error::VariantViolation {
            variant: model.variant().name().into(),
            operation: "export_attention_maps".into(),
        });
    }
    let (frames, kps) = batch_inputs(&[sample]);
    let out = model.forward(frames.view(), kps.view())?;
    let raw = out
        .attention
        .expect("FULL variant yields attention")
        .index_axis_move(Axis(0), 0);
    let hw = model.config.input_hw;
    let images = raw.outer_iter().map(|m| upscale_map(m, hw)).collect();
    Ok(AttentionExport { raw, images })
}

/// Writes `attention_{t}.png`, `overlay_{t}.png` and `attention.json` into `dir`.
pub fn export_attention_maps(model: &Model, sample: &KickSample, dir: &Path) -> Result<AttentionExport> {
    let export = attention_maps(model, sample)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, img) in export.images.iter().enumerate() {
        let path = dir.join(format!("attention_{t}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let overlay = overlay(&sample.frames[t], img);
        let path = dir.join(format!("overlay_{t}.png"));
        overlay.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    let raw: Vec<Vec<Vec<f64>>> = export
        .raw
        .outer_iter()
        .map(|m| m.outer_iter().map(|r| r.to_vec()).collect())
        .collect();
    let json = serde_json::json!({
        "sample_id": sample.sample_id,
        "shape": export.raw.shape(),
        "maps": raw,
    });
    let path = dir.join("attention.json");
    fs::write(&path, serde_json::to_string_pretty(&json).expect("json") + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(export)
}

/// Blends a red heat layer over the frame in proportion to the attention value.
fn overlay(frame: &RgbImage, heat: &GrayImage) -> RgbImage {
    RgbImage::from_fn(heat.width(), heat.height(), |x, y| {
        let a = f64::from(heat.get_pixel(x, y)[0]) / 255.0;
        let base = if x < frame.width() && y < frame.height() {
            *frame.get_pixel(x, y)
        } else {
            Rgb([0, 0, 0])
        };
        let mix = |c: u8, target: f64| ((1.0 - 0.6 * a) * f64::from(c) + 0.6 * a * target).round() as u8;
        Rgb([mix(base[0], 255.0), mix(base[1], 0.0), mix(base[2], 0.0)])
    })
}

/// Writes per-split metrics rows for a trained model.
pub fn write_metrics_csv(path: &Path, rows: &[(Split, &SplitMetrics)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["split", "samples", "loss", "accuracy_percent"])
        .map_err(|e| csv_err(path, e))?;
    for (split, m) in rows {
        let correct = m.labels.iter().zip(&m.predictions).filter(|(a, b)| a == b).count();
        w.write_record([
            split.name().to_string(),
            m.labels.len().to_string(),
            m.loss.to_string(),
            percent(correct, m.labels.len())?.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::metrics_from_probs;
    use DirectionLabel::{Left as L, Middle as M, Right as R};

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(101, 113).unwrap(), 89.38);
        assert_eq!(accuracy(113, 113).unwrap(), 100.0);
        assert_eq!(accuracy(68, 113).unwrap(), 60.18);
        assert_eq!(accuracy(0, 0).unwrap_err().class_name(), "InsufficientData");
        assert!(accuracy(4, 3).is_err());
    }

    #[test]
    fn confusion_examples() {
        let cm = ConfusionMatrix::from_predictions(&[L, M, R, L], &[L, R, R, L]).unwrap();
        assert_eq!(cm.counts, [[2, 0, 0], [0, 0, 1], [0, 0, 1]]);
        let diag = ConfusionMatrix::from_predictions(&[L, M, R, R], &[L, M, R, R]).unwrap();
        assert_eq!(diag.counts, [[1, 0, 0], [0, 1, 0], [0, 0, 2]]);
        let only_left = ConfusionMatrix::from_predictions(&[L, L], &[L, M]).unwrap();
        assert_eq!(only_left.counts[2], [0, 0, 0]);
        let err = ConfusionMatrix::from_predictions(&[L], &[]).unwrap_err();
        assert_eq!(err.class_name(), "InputError");
    }

    #[test]
    fn confusion_csv_layout() {
        let cm = ConfusionMatrix::from_predictions(&[L, M, R, L], &[L, R, R, L]).unwrap();
        assert_eq!(
            cm.to_csv(),
            "true\\predicted,left,middle,right\nleft,2,0,0\nmiddle,0,0,1\nright,0,0,1\n"
        );
    }

    #[test]
    fn confusion_accuracy_matches_metrics() {
        let probs = ndarray::array![[0.7, 0.2, 0.1], [0.1, 0.3, 0.6], [0.2, 0.2, 0.6], [0.5, 0.4, 0.1]];
        let m = metrics_from_probs(probs, vec![L, M, R, L]).unwrap();
        let cm = ConfusionMatrix::from_metrics(&m).unwrap();
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.accuracy().unwrap(), accuracy(3, 4).unwrap());
        assert_eq!(cm.percent().unwrap() / 100.0, m.accuracy);
    }

    #[test]
    fn ordering_helpers() {
        let acc = BTreeMap::from([
            (ModelVariant::Full, 89.38),
            (ModelVariant::DualNoAttention, 82.30),
            (ModelVariant::VisualOnly, 75.22),
            (ModelVariant::PoseOnly, 68.14),
        ]);
        assert!(ablation_ordering_holds(&acc, 2.0));
        let mut worse = acc.clone();
        worse.insert(ModelVariant::Full, 79.0);
        assert!(!ablation_ordering_holds(&worse, 2.0));
        worse.insert(ModelVariant::Full, 80.5);
        assert!(ablation_ordering_holds(&worse, 2.0));
        assert!(threshold_trend_holds(
            &[(0.35, 60.18), (0.15, 89.38), (0.25, 70.0)],
            10.0
        ));
        assert!(!threshold_trend_holds(
            &[(0.15, 89.0), (0.25, 90.0), (0.35, 60.0)],
            10.0
        ));
        assert!(!threshold_trend_holds(&[(0.15, 65.0), (0.35, 60.0)], 10.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0]), 2.5);
    }

    #[test]
    fn upscale_is_nearest_neighbour() {
        let map = ndarray::array![[0.0, 1.0], [0.5, 0.25]];
        let img = upscale_map(map.view(), (4, 4));
        assert_eq!(img.dimensions(), (4, 4));
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(3, 1)[0], 255);
        assert_eq!(img.get_pixel(1, 3)[0], 128);
        assert_eq!(img.get_pixel(2, 2)[0], 64);
    }

    fn toy_sample(hw: (usize, usize)) -> KickSample {
        let frames = (0..8)
            .map(|t| {
                RgbImage::from_fn(hw.1 as u32, hw.0 as u32, |x, y| {
                    Rgb([(x * 3 + t) as u8, (y * 5) as u8, 90])
                })
            })
            .collect();
        let keypoints = Array3::from_shape_fn((8, 17, 2), |(t, j, c)| ((t + j + c) % 10) as f64 / 10.0);
        KickSample {
            sample_id: "s00000".into(),
            label: L,
            frames,
            keypoints,
        }
    }

    #[test]
    fn attention_export_contract() {
        let dir = tempfile::tempdir().unwrap();
        let model = Model::new(ModelConfig::toy(ModelVariant::Full, 4)).unwrap();
        let sample = toy_sample((64, 64));
        let export = export_attention_maps(&model, &sample, dir.path()).unwrap();
        assert_eq!(export.raw.shape(), &[8, 8, 8]);
        assert!(export.raw.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(export.images.len(), 8);
        assert!(export.images.iter().all(|i| i.dimensions() == (64, 64)));
        for t in 0..8 {
            assert!(dir.path().join(format!("attention_{t}.png")).exists());
        }
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("attention.json")).unwrap()).unwrap();
        assert_eq!(json["maps"].as_array().unwrap().len(), 8);

        let mut zeroed = model.clone();
        for (name, t) in zeroed.params.iter_mut() {
            if name.starts_with("spatial.pose_attention") {
                t.fill(0.0);
            }
        }
        let export = attention_maps(&zeroed, &sample).unwrap();
        assert!(export.raw.iter().all(|&v| v == 0.5));

        let dual = Model::new(ModelConfig::toy(ModelVariant::DualNoAttention, 4)).unwrap();
        assert_eq!(
            attention_maps(&dual, &sample).unwrap_err().class_name(),
            "VariantViolation"
        );
    }
}
