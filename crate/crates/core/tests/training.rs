use approx::assert_relative_eq;
use mcdd_core::data::{id_label, load_csv};
use mcdd_core::{
    make_loco_scenarios, train_method, Architecture, Checkpoint, LabelColumn, Matrix, Method, NormalizationMode,
    ScenarioData, TabularDataset, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four well-separated blobs in 5 dimensions.
fn blobs(per_class: usize, seed: u64) -> TabularDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..4 * per_class {
        let k = i % 4;
        let row: Vec<f64> = (0..5)
            .map(|j| rng.random_range(-1.0..1.0) + if j == k { 4.0 } else { 0.0 })
            .collect();
        rows.push(row);
        labels.push(k);
    }
    TabularDataset {
        name: "blobs".into(),
        features: Matrix::from_rows(&rows).unwrap(),
        labels,
        class_names: (0..4).map(|k| format!("c{k}")).collect(),
    }
}

fn small() -> (Architecture, TrainConfig) {
    let arch = Architecture::new(vec![16], 4);
    let cfg = TrainConfig {
        epochs: 40,
        batch_size: 32,
        ..TrainConfig::default()
    };
    (arch, cfg)
}

fn scenario(ds: &TabularDataset, ood: usize) -> ScenarioData {
    let splits = make_loco_scenarios(ds, 3, 0).unwrap();
    let split = splits.iter().find(|s| s.ood_class == ood && s.fold == 0).unwrap();
    ScenarioData::build(ds, split, NormalizationMode::TrainOnly).unwrap()
}

#[test]
fn same_seed_gives_bit_identical_models() {
    let ds = blobs(30, 1);
    let (arch, cfg) = small();
    for method in Method::ALL {
        let a = train_method(method, &ds.features, &ds.labels, 4, &arch, &cfg).unwrap();
        let b = train_method(method, &ds.features, &ds.labels, 4, &arch, &cfg).unwrap();
        let bits = |m: &mcdd_core::TrainedModel| -> Vec<u64> {
            m.scores(&ds.features).unwrap().iter().map(|s| s.to_bits()).collect()
        };
        assert_eq!(bits(&a.model), bits(&b.model), "{method}");

        let other = TrainConfig {
            seed: 99,
            ..cfg.clone()
        };
        let c = train_method(method, &ds.features, &ds.labels, 4, &arch, &other).unwrap();
        assert_ne!(bits(&a.model), bits(&c.model), "{method}");
    }
}

#[test]
fn deep_mcdd_separates_a_held_out_blob() {
    let ds = blobs(60, 2);
    let data = scenario(&ds, 3);
    let (arch, cfg) = small();
    let out = train_method(Method::DeepMcdd, &data.train, &data.train_labels, 3, &arch, &cfg).unwrap();
    let report = out
        .model
        .evaluate(&data.id_test, &data.id_test_labels, &data.ood_test)
        .unwrap();
    assert!(report.classification_accuracy.unwrap() >= 0.95, "{report:?}");
    assert!(report.auroc >= 0.9, "{report:?}");

    assert_eq!(out.history.len(), cfg.epochs);
    let first = &out.history[0];
    let last = out.history.last().unwrap();
    assert!(last.loss < first.loss);
    for rec in &out.history {
        let parts: f64 = rec.components["pull_in"] + rec.components["posterior"] / cfg.nu;
        assert_relative_eq!(parts, rec.loss, max_relative = 1e-9);
    }
}

#[test]
fn tiny_nu_weight_on_classification_hurts_accuracy() {
    // ν scales the posterior term by 1/ν; at ν = 1e4 the classifier is barely trained
    let ds = blobs(60, 3);
    let data = scenario(&ds, 0);
    let (arch, cfg) = small();
    let acc = |nu: f64| {
        let cfg = TrainConfig {
            nu,
            epochs: 15,
            ..cfg.clone()
        };
        let out = train_method(Method::DeepMcdd, &data.train, &data.train_labels, 3, &arch, &cfg).unwrap();
        let r = out
            .model
            .evaluate(&data.id_test, &data.id_test_labels, &data.ood_test)
            .unwrap();
        r.classification_accuracy.unwrap()
    };
    let balanced = acc(1.0);
    let weak = acc(1e4);
    assert!(balanced >= weak, "nu=1 {balanced} vs nu=1e4 {weak}");
    assert!(balanced >= 0.9);
}

#[test]
fn soft_mcdd_refits_spheres_on_schedule() {
    let ds = blobs(30, 4);
    let (arch, mut cfg) = small();
    cfg.epochs = 25;
    cfg.sphere_update_every = 10;
    cfg.nu = 0.5;
    let out = train_method(Method::SoftMcdd, &ds.features, &ds.labels, 4, &arch, &cfg).unwrap();
    let epochs: Vec<usize> = out.sphere_updates.iter().map(|u| u.after_epoch).collect();
    assert_eq!(epochs, vec![9, 19, 24]);
    for u in &out.sphere_updates {
        assert!(u.before.is_finite() && u.after.is_finite());
    }
    assert!(out.model.centers().all_finite());
    let preds = out.model.predict(&ds.features).unwrap().unwrap();
    let correct = preds.iter().zip(&ds.labels).filter(|(p, y)| p == y).count();
    assert!(correct as f64 >= 0.9 * ds.labels.len() as f64, "{correct}");
}

#[test]
fn svdd_has_one_center_and_no_classes() {
    let ds = blobs(20, 5);
    let (arch, cfg) = small();
    let out = train_method(Method::DeepSvdd, &ds.features, &ds.labels, 4, &arch, &cfg).unwrap();
    assert_eq!(out.model.centers().rows(), 1);
    assert!(out.model.predict(&ds.features).unwrap().is_none());
    let report = out.model.evaluate(&ds.features, &ds.labels, &ds.features).unwrap();
    assert!(report.classification_accuracy.is_none());
    assert_relative_eq!(report.auroc, 0.5);
}

#[test]
fn csv_to_scenarios_to_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let ds = blobs(15, 6);
    let path = dir.path().join("blobs.csv");
    let mut text = String::from("a,b,c,d,e,kind\n");
    for (row, &y) in ds.features.row_iter().zip(&ds.labels) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&format!("{},{}\n", cells.join(","), ds.class_names[y]));
    }
    std::fs::write(&path, text).unwrap();

    let loaded = load_csv(&path, &LabelColumn::Name("kind".into()), true).unwrap();
    assert_eq!(loaded.features, ds.features);
    assert_eq!(loaded.class_counts(), vec![15; 4]);

    let splits = make_loco_scenarios(&loaded, 3, 7).unwrap();
    assert_eq!(splits.len(), 12);
    for ood in 0..4 {
        let mut id_test: Vec<usize> = splits
            .iter()
            .filter(|s| s.ood_class == ood)
            .flat_map(|s| s.id_test_indices.clone())
            .collect();
        id_test.sort_unstable();
        let expected: Vec<usize> = (0..60).filter(|&i| loaded.labels[i] != ood).collect();
        assert_eq!(id_test, expected, "each ID row is tested exactly once");
    }

    let split = &splits[5];
    let data = ScenarioData::build(&loaded, split, NormalizationMode::TrainOnly).unwrap();
    for (i, &y) in split.train_indices.iter().zip(&data.train_labels) {
        assert_eq!(id_label(loaded.labels[*i], split.ood_class), Some(y));
    }
    let (arch, cfg) = small();
    let out = train_method(Method::DeepMcdd, &data.train, &data.train_labels, 3, &arch, &cfg).unwrap();
    let ckpt = Checkpoint::new(
        out.model,
        arch,
        cfg,
        Some(data.stats.clone()),
        loaded.class_names.clone(),
    )
    .unwrap();
    let ckpt_path = dir.path().join("model.json");
    ckpt.save(&ckpt_path).unwrap();
    let back = Checkpoint::load(&ckpt_path).unwrap();
    let before = ckpt.model.scores(&data.ood_test).unwrap();
    let after = back.model.scores(&data.ood_test).unwrap();
    assert_eq!(before, after);
}

/// 128 z-scored attributes at the default width and learning rate: the
/// latent must not collapse to a point in the first epochs.
#[test]
fn default_setup_does_not_collapse_on_wide_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..128).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..800 {
        let k = i % 4;
        rows.push(
            centers[k]
                .iter()
                .map(|c| c + rng.random_range(-1.5..1.5))
                .collect::<Vec<f64>>(),
        );
        labels.push(k);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let all: Vec<usize> = (0..800).collect();
    let stats = mcdd_core::data::zscore_fit(&x, &all).unwrap();
    let x = mcdd_core::data::zscore_apply(&x, &stats).unwrap();

    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let out = train_method(Method::DeepMcdd, &x, &labels, 4, &Architecture::default(), &cfg).unwrap();
    let latent = out.model.latent(&x).unwrap();
    let mean = latent.mean_rows();
    let spread = latent
        .row_iter()
        .map(|r| r.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / 800.0;
    assert!(spread > 1e-3, "latent spread {spread:e}");
    let preds = out.model.predict(&x).unwrap().unwrap();
    let correct = preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
    assert!(correct >= 760, "{correct} of 800");
}
