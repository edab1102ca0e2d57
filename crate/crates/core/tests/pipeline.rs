use intentsum_core::api::{EvaluateRequest, InferenceResponse, QuerySpec};
use intentsum_core::model::{Model, ModelConfig, Query, Selection};
use intentsum_core::querygen::generate_visual_query;
use intentsum_core::store::{load_checkpoint, save_checkpoint, synth_dataset, Dataset, SynthConfig};
use intentsum_core::train::{train, TrainConfig, TrainData, TrainMode};

fn small() -> SynthConfig {
    SynthConfig {
        seed: 11,
        videos: 3,
        shots: 80,
        dim: 12,
        vocab: 8,
        pairs: 3,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_train_save_infer_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(dir.path(), &small()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.video_ids().unwrap(), manifest.videos);
    let table = ds.embeddings().unwrap();
    let records: Vec<_> = manifest.videos.iter().map(|v| ds.load_video(v).unwrap()).collect();

    let mut model = Model::<f32>::new(&ModelConfig::toy(12), 1).unwrap();
    let data = TrainData::from_records(&records, &table, TrainMode::Joint, 5).unwrap();
    let cfg = TrainConfig::default().scaled_to(2);
    let record = train(&mut model, &data, &cfg, TrainMode::Joint).unwrap();
    assert_eq!(record.epochs.len(), 2);
    assert!(record.final_loss().unwrap().is_finite());

    let path = ds.checkpoint_path("run");
    save_checkpoint(&path, &model).unwrap();
    let loaded: Model<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(ds.checkpoint_ids().unwrap(), vec!["run".to_string()]);

    let rec = &records[0];
    let (c1, c2) = &manifest.pairs[0];
    let query = QuerySpec::Text {
        c1: c1.clone(),
        c2: c2.clone(),
    }
    .resolve(Some(&table))
    .unwrap();
    let before = InferenceResponse::compute(&model, "run", rec.id(), &rec.features, &query).unwrap();
    let after = InferenceResponse::compute(&loaded, "run", rec.id(), &rec.features, &query).unwrap();
    assert_eq!(before.to_json(), after.to_json());

    let summary = after.summarize(after.delta, Selection::Budget(6)).unwrap();
    assert_eq!(summary.summary.len(), 6);
    assert_eq!(summary.scores.len(), rec.shots());

    let req = EvaluateRequest {
        video: rec.id().to_string(),
        summary: summary.summary.clone(),
        mask: None,
        c1: Some(c1.clone()),
        c2: Some(c2.clone()),
    };
    let gt = req
        .ground_truth(&ds, rec)
        .unwrap()
        .expect("planted pair has ground truth");
    let scores = req.evaluate(rec, &gt).unwrap();
    for v in [scores.precision, scores.recall, scores.f1] {
        assert!((0.0..=1.0).contains(&v));
    }

    let perfect = EvaluateRequest {
        summary: gt.summary.clone(),
        ..req
    };
    let best = perfect.evaluate(rec, &gt).unwrap();
    assert!((best.f1 - 1.0).abs() < 1e-9);
}

#[test]
fn visual_query_from_ground_truth_drives_inference() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(dir.path(), &small()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let rec = ds.load_video(&manifest.videos[1]).unwrap();
    let gt = rec
        .queries
        .iter()
        .find(|q| q.summary.len() >= 3)
        .expect("a multi-shot ground truth");
    let shots = generate_visual_query(&gt.summary, &rec.tag_sets(), 3).unwrap();
    assert_eq!(shots.len(), 3);
    assert!(shots.iter().all(|s| gt.summary.contains(s)));

    let model = Model::<f32>::new(&ModelConfig::toy(12), 2).unwrap();
    let r = InferenceResponse::compute(&model, "fresh", rec.id(), &rec.features, &Query::Visual(shots)).unwrap();
    let total: f64 = r.intent_probs.iter().map(|&p| f64::from(p)).sum();
    assert!((total - 1.0).abs() < 1e-5);
    assert_eq!(r.intent_shot_scores.len(), 20);
}
