use bottomup::toy3d::{eval_toy, train_toy, Dataset, OraclePredictor, SceneConfig, TrainConfig, Variant};

#[test]
fn dataset_survives_jsonl_round_trip_on_disk() {
    let scene = SceneConfig::default();
    let (train, _) = Dataset::train_val(&scene, 12, 1, 5, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    train.write_jsonl(&path).unwrap();
    let back = Dataset::read_jsonl(&path, &scene).unwrap();
    assert_eq!(back.len(), train.len());
    for (a, b) in train.frames.iter().zip(&back.frames) {
        assert_eq!(a.features, b.features);
        assert_eq!(a.objects, b.objects);
    }
}

#[test]
fn generation_does_not_depend_on_threads() {
    let scene = SceneConfig::default();
    let (a, _) = Dataset::train_val(&scene, 8, 2, 3, 1).unwrap();
    let (b, _) = Dataset::train_val(&scene, 8, 2, 3, 4).unwrap();
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
}

#[test]
fn short_training_runs_end_to_end() {
    let scene = SceneConfig::default();
    let (train, val) = Dataset::train_val(&scene, 16, 8, 1, 1).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    for v in [Variant::Baseline, Variant::Yolobu, Variant::GlobalAttention] {
        let out = train_toy(v, &train, &cfg, 1).unwrap();
        assert_eq!(out.epoch_losses.len(), 2);
        assert!(out.epoch_losses.iter().all(|l| l.is_finite()));
        let report = eval_toy(&out.model, &val).unwrap();
        assert_eq!(report.n_frames, 8);
        assert!(report.depth_mae.unwrap().is_finite());
    }
    let oracle = eval_toy(&OraclePredictor, &val).unwrap();
    assert_eq!(oracle.depth_mae, Some(0.0));
}
