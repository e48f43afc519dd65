use super::*;
use crate::dataset::{generate_synthetic_stack, save_stack, SynthConfig};

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        num_images: 12,
        image_size: 96,
        cyst_radius_range: (3.0, 6.0),
        rng_seed: seed,
        ..SynthConfig::default()
    }
}

fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        stack_dir: dir.join("stack"),
        out_dir: dir.join("out"),
        repetitions: 2,
        kappas: vec![1, 4],
        ..ExperimentConfig::default()
    };
    cfg.apply_text("preprocess.size = 96\npreprocess.s_d = 6\nesn.m = 20\nesn.w_m = 32\nrcap.w = 16\ntlsa.w = 20")
        .unwrap();
    cfg
}

fn stack(seed: u64, size: usize) -> PreparedStack {
    let cfg = PreprocessConfig {
        size,
        ..PreprocessConfig::default()
    };
    prepare_records(generate_synthetic_stack(&small_synth(seed)).unwrap(), &cfg).unwrap()
}

#[test]
fn masks_follow_plane_size() {
    let s = stack(1, 64);
    assert_eq!(s.images.len(), 12);
    assert_eq!(s.split.train_ids.len(), 5);
    assert_eq!(s.test().len(), 7);
    for img in &s.images {
        assert_eq!(img.planes.dims(), (64, 64));
        assert_eq!(img.g1.dims(), (64, 64));
        assert_eq!(img.ground_truth.as_ref().unwrap().dims(), (64, 64));
    }
}

#[test]
fn oracle_proposals_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(2, 96);
    let rps_dir = dir.path().join("rps");
    for img in s.test() {
        let g = img.g1.clone();
        write_proposals(&rps_dir, &img.id, &RegionalProposals::new(g.clone(), g.clone(), g).unwrap()).unwrap();
    }
    let cfg = ExperimentConfig {
        model: ModelKind::External,
        external_dir: Some(rps_dir.clone()),
        ..small_config(dir.path())
    };
    let model = train_model(&cfg, &s).unwrap();
    let report = evaluate_segmentation(&cfg, &s, &model).unwrap();
    for row in report.rows.iter().filter(|r| r.label == "G1") {
        for stat in [row.dc, row.iou, row.sen, row.spec, row.acc] {
            assert_eq!(stat.mean, 1.0, "{row:?}");
            assert_eq!(stat.std, 0.0);
        }
    }
}

#[test]
fn external_proposals_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let ids = vec!["a".to_string(), "b".to_string()];
    let m = BinaryMask::empty(10, 10);
    let full = RegionalProposals::new(m.clone(), m.clone(), m.clone()).unwrap();
    write_proposals(dir.path(), "a", &full).unwrap();
    write_proposals(dir.path(), "b", &full).unwrap();
    assert_eq!(ingest_external_rps(dir.path(), &ids, (10, 10)).unwrap().len(), 2);

    fs::remove_file(dir.path().join("b.P2.png")).unwrap();
    match ingest_external_rps(dir.path(), &ids, (10, 10)) {
        Err(Error::MissingFile { id, .. }) => assert_eq!(id, "b"),
        other => panic!("expected missing file, got {other:?}"),
    }
    assert!(matches!(
        ingest_external_rps(dir.path(), &ids[..1], (12, 10)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn identical_labels_never_pick_g2() {
    let mut s = stack(3, 96);
    for img in &mut s.images {
        img.g2 = img.g1.clone();
    }
    let model = train_model(&ExperimentConfig { model: ModelKind::Baseline, ..small_config(Path::new("/nonexistent")) }, &s).unwrap();
    let rps = test_proposals(&model, &s).unwrap();
    let report = evaluate_selection(&TlsaConfig::default(), &s, &rps, model.kind()).unwrap();
    let sum = report.summary.frac_g1 + report.summary.frac_g2 + report.summary.frac_manual;
    assert!((sum - 1.0).abs() < 1e-9);
    assert_eq!(report.summary.frac_g2, 0.0);
}

#[test]
fn rcap_eval_counts_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        model: ModelKind::Baseline,
        ..small_config(dir.path())
    };
    let s = stack(4, 96);
    let model = train_model(&cfg, &s).unwrap();
    let rps = test_proposals(&model, &s).unwrap();
    let report = evaluate_rcap(&cfg, &s, &rps, model.kind()).unwrap();
    assert_eq!(report.per_kappa.len(), 2);
    for k in &report.per_kappa {
        assert_eq!(k.trials, 2 * 7);
        assert_eq!(k.correct + k.wrong + k.manual, k.trials);
        assert!((k.frac_correct + k.frac_wrong + k.frac_manual - 1.0).abs() < 1e-9);
        assert!(k.per_rep_accuracy.len() <= 2);
    }
    assert_eq!(report, evaluate_rcap(&cfg, &s, &rps, model.kind()).unwrap());
}

#[test]
fn models_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = stack(5, 96);
    for kind in [ModelKind::Baseline, ModelKind::Paresn] {
        let cfg = ExperimentConfig {
            model: kind,
            baseline_reps: 3,
            ..small_config(dir.path())
        };
        let model = train_model(&cfg, &s).unwrap();
        let path = dir.path().join(format!("{}.model", kind.name()));
        model.save(&path).unwrap();
        let loaded = TrainedModel::load(&path).unwrap();
        assert_eq!(loaded.kind(), kind);
        assert_eq!(loaded.summary().kind_name(), model.summary().kind_name());
        let img = s.test()[0];
        assert_eq!(loaded.proposals(img).unwrap(), model.proposals(img).unwrap());
    }
}

#[test]
fn selection_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let records = generate_synthetic_stack(&small_synth(6)).unwrap();
    let mut cfg = small_config(dir.path());
    save_stack(&records, &cfg.stack_dir, &[]).unwrap();

    let first = run_selection(&cfg).unwrap();
    let bytes = fs::read(cfg.out_dir.join("decisions.jsonl")).unwrap();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), first.decisions.len());
    let queue: QueueManifest =
        serde_json::from_slice(&fs::read(cfg.out_dir.join(QUEUE_FILE)).unwrap()).unwrap();
    assert!(queue.manual_ids.windows(2).all(|w| w[0] < w[1]));
    for id in &first.summary_ids() {
        assert!(queue.proposals_dir.join(format!("{id}.P3.png")).is_file());
    }
    assert!(cfg.out_dir.join("tables.txt").is_file());
    assert!(cfg.out_dir.join(report::MANIFEST_FILE).is_file());

    cfg.out_dir = dir.path().join("out2");
    run_selection(&cfg).unwrap();
    assert_eq!(bytes, fs::read(cfg.out_dir.join("decisions.jsonl")).unwrap());
}

impl ModelSummary {
    fn kind_name(&self) -> &'static str {
        match self {
            ModelSummary::Baseline { .. } => "baseline",
            ModelSummary::Paresn { .. } => "paresn",
            ModelSummary::External { .. } => "external",
        }
    }
}

impl SelectionReport {
    fn summary_ids(&self) -> Vec<String> {
        self.decisions.iter().map(|d| d.id.clone()).collect()
    }
}
