use penkick_core::dataset::Dataset;
use penkick_core::evaluation::{run_ablation, threshold_sweep, SweepData, SweepReport};
use penkick_core::model::{ModelConfig, ModelVariant};
use penkick_core::render::RecordRenderer;
use penkick_core::segmentation::{build_sample, ThresholdConfig};
use penkick_core::synthgen::{generate_dataset, generate_scenario, GeneratorConfig};
use penkick_core::training::TrainConfig;

fn quick_train(seed: u64) -> TrainConfig {
    let mut tc = TrainConfig::new(seed);
    tc.max_epochs = 2;
    tc.batch_size = 4;
    tc
}

#[test]
fn saved_dataset_reloads_and_matches_resegmentation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ThresholdConfig::new(0.25).unwrap();
    let corpus = generate_dataset(9, 5, &GeneratorConfig::default(), &cfg, (64, 64)).unwrap();
    corpus.dataset.save(dir.path(), &corpus.segmentation).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back, corpus.dataset);

    for (sample, params) in back.samples.iter().zip(&corpus.params) {
        let sc = generate_scenario(params).unwrap();
        let seg = build_sample(
            &sc.stream,
            &cfg,
            sample.label,
            &sample.sample_id,
            &RecordRenderer::default(),
            (64, 64),
        )
        .unwrap();
        assert_eq!(&seg.sample, sample);
    }
}

#[test]
fn ablation_reports_four_variants_in_table_order() {
    let cfg = ThresholdConfig::new(0.15).unwrap();
    let corpus = generate_dataset(12, 2, &GeneratorConfig::default(), &cfg, (64, 64)).unwrap();
    let report = run_ablation(
        &corpus.dataset,
        &ModelConfig::toy(ModelVariant::Full, 2),
        &quick_train(2),
        |_, _| {},
    );
    let order: Vec<ModelVariant> = report.rows.iter().map(|r| r.variant).collect();
    assert_eq!(order, ModelVariant::ALL.to_vec());
    for r in &report.rows {
        assert!(r.error.is_none(), "{:?}", r.error);
        let acc = r.accuracy.unwrap();
        assert!((0.0..=100.0).contains(&acc));
        assert_eq!(r.epochs_run, Some(2));
    }
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(report.to_string().contains("Model variant"));
}

#[test]
fn sweep_rows_are_sorted_and_one_per_threshold() {
    let data = SweepData {
        n_samples: 9,
        seed: 3,
        generator: GeneratorConfig::default(),
        raster_hw: (64, 64),
    };
    let model = ModelConfig::toy(ModelVariant::Full, 3);
    let report = threshold_sweep(&[0.35, 0.15], &data, &model, &quick_train(3), |_, _| {}).unwrap();
    let ts: Vec<f64> = report.rows.iter().map(|r| r.threshold).collect();
    assert_eq!(ts, vec![0.15, 0.35]);
    let single = threshold_sweep(&[0.25], &data, &model, &quick_train(3), |_, _| {}).unwrap();
    assert_eq!(single.rows.len(), 1);
    assert!(threshold_sweep(&[], &data, &model, &quick_train(3), |_, _| {}).is_err());
}

#[test]
fn empty_sweep_renders_header_only_csv() {
    let empty = SweepReport { rows: vec![] };
    assert_eq!(empty.to_csv(), "threshold,test_accuracy,best_epoch,epochs_run\n");
}
