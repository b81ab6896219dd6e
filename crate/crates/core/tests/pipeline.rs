use std::collections::BTreeMap;

use extubation_core::artifact::{
    bundle_feature_order, decode_bundle, decode_checkpoint, decode_table, encode_bundle, encode_checkpoint,
    encode_table, Checkpoint, CheckpointMeta, Provenance,
};
use extubation_core::cohort::{annotate_outcome, generate_cohort, Cohort, GeneratorConfig, PatientId};
use extubation_core::evaluation::{auc_roc, feature_ablation};
use extubation_core::gbdt::GbdtParams;
use extubation_core::preprocess::{
    prepare_split, FittedPreprocessor, PreprocessConfig, SubsetTensorBundle, TabularData,
};
use extubation_core::temporal::{FfnnSpec, FusedHyper};
use extubation_core::training::{fit, Dataset, History, ModelSpec, TrainConfig, TrainedModel};
use extubation_core::Error;

struct Fixture {
    cohort: Cohort,
    config: GeneratorConfig,
    preprocess: PreprocessConfig,
    train_ids: Vec<PatientId>,
    test_ids: Vec<PatientId>,
    labels: BTreeMap<PatientId, u8>,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let config = GeneratorConfig {
            n_patients: 300,
            seed,
            age_shift_failure: 8.0,
            ..GeneratorConfig::default()
        };
        let cohort = generate_cohort(&config).unwrap();
        let ids: Vec<PatientId> = cohort.profiles.iter().map(|p| p.patient_id).collect();
        let preprocess = PreprocessConfig::for_feature_set(1, seed);
        let split = prepare_split(&cohort.events, &ids, &config.feature_catalog, &preprocess).unwrap();
        let labels = cohort.timelines.iter().map(|t| (t.patient_id, annotate_outcome(t).label())).collect();
        Self {
            cohort,
            config,
            preprocess,
            train_ids: split.train,
            test_ids: split.test,
            labels,
        }
    }

    fn fitted(&self) -> FittedPreprocessor {
        let c = &self.cohort;
        FittedPreprocessor::fit(&self.config.feature_catalog, &c.events, &c.profiles, &self.train_ids, &self.preprocess)
            .unwrap()
    }

    fn labels_for(&self, ids: &[PatientId]) -> Vec<u8> {
        ids.iter().map(|p| self.labels[p]).collect()
    }

    fn bundle(&self, fp: &FittedPreprocessor, ids: &[PatientId], with_static: bool) -> SubsetTensorBundle {
        let c = &self.cohort;
        fp.bundle(&c.events, &c.profiles, ids, &self.labels_for(ids), with_static).unwrap()
    }

    fn table(&self, fp: &FittedPreprocessor, ids: &[PatientId]) -> TabularData {
        let c = &self.cohort;
        fp.tabular(&c.events, &c.profiles, ids, &self.labels_for(ids), true).unwrap()
    }
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        num_epochs: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn cohort_generation_is_reproducible() {
    let cfg = GeneratorConfig {
        n_patients: 120,
        seed: 4,
        ..GeneratorConfig::default()
    };
    assert_eq!(generate_cohort(&cfg).unwrap(), generate_cohort(&cfg).unwrap());
    let other = GeneratorConfig { seed: 5, ..cfg.clone() };
    assert_ne!(generate_cohort(&cfg).unwrap(), generate_cohort(&other).unwrap());
}

#[test]
fn fitted_state_ignores_test_patients() {
    let fx = Fixture::new(3);
    let reference = fx.fitted();

    // Corrupt every test patient's events and profile; nothing fitted may move.
    let mut tampered = fx.cohort.clone();
    let test: std::collections::HashSet<PatientId> = fx.test_ids.iter().copied().collect();
    for e in tampered.events.iter_mut().filter(|e| test.contains(&e.patient_id)) {
        e.value = e.value * 10.0 + 1e4;
    }
    for p in tampered.profiles.iter_mut().filter(|p| test.contains(&p.patient_id)) {
        p.age = 18;
        p.weight_kg = Some(400.0);
    }
    let refit = FittedPreprocessor::fit(
        &fx.config.feature_catalog,
        &tampered.events,
        &tampered.profiles,
        &fx.train_ids,
        &fx.preprocess,
    )
    .unwrap();
    assert_eq!(serde_json::to_string(&reference).unwrap(), serde_json::to_string(&refit).unwrap());

    // Dropping the test rows entirely gives the same state as well.
    let train_only: Vec<_> = fx.cohort.events.iter().filter(|e| !test.contains(&e.patient_id)).cloned().collect();
    let refit = FittedPreprocessor::fit(
        &fx.config.feature_catalog,
        &train_only,
        &fx.cohort.profiles,
        &fx.train_ids,
        &fx.preprocess,
    )
    .unwrap();
    assert_eq!(serde_json::to_string(&reference).unwrap(), serde_json::to_string(&refit).unwrap());
}

#[test]
fn bundles_keep_mask_grid_and_range_invariants() {
    let fx = Fixture::new(8);
    let fp = fx.fitted();
    for ids in [&fx.train_ids, &fx.test_ids] {
        let b = fx.bundle(&fp, ids, true);
        b.validate().unwrap();
        let steps: Vec<usize> = b.subsets.iter().map(|s| s.timesteps()).collect();
        assert_eq!(steps, vec![4, 7, 13]);
        for s in &b.subsets {
            for (v, &m) in s.values.iter().zip(&s.mask) {
                assert_eq!(v.is_nan(), !m);
                assert!(v.is_nan() || (0.0..=1.0).contains(v), "{v}");
            }
        }
        let sb = b.static_block.as_ref().unwrap();
        assert_eq!(sb.data.nrows(), b.len());
        assert_eq!(b.patients, *ids);
    }
}

#[test]
fn bundle_and_table_survive_a_round_trip() {
    let fx = Fixture::new(9);
    let fp = fx.fitted();
    let prov = Provenance {
        seed: 9,
        config_hash: "abc".into(),
    };
    let b = fx.bundle(&fp, &fx.test_ids, true);
    let bytes = encode_bundle(&b, &fp.scalers, &prov).unwrap();
    let loaded = decode_bundle(&bytes).unwrap();
    assert_eq!(loaded.provenance, prov);
    assert_eq!(loaded.scalers, fp.scalers);
    assert_eq!(loaded.bundle.patients, b.patients);
    assert_eq!(loaded.bundle.labels, b.labels);
    for (a, z) in b.subsets.iter().zip(&loaded.bundle.subsets) {
        assert_eq!(a.mask, z.mask);
        assert_eq!(a.features, z.features);
        assert_eq!(bits(&a.values.iter().copied().collect::<Vec<_>>()), bits(&z.values.iter().copied().collect::<Vec<_>>()));
    }
    assert_eq!(encode_bundle(&loaded.bundle, &loaded.scalers, &prov).unwrap(), bytes);

    let t = fx.table(&fp, &fx.test_ids);
    let (t2, p2) = decode_table(&encode_table(&t, &prov).unwrap()).unwrap();
    assert_eq!(p2, prov);
    assert_eq!(t2.columns, t.columns);
    assert_eq!(bits(&t2.data.iter().copied().collect::<Vec<_>>()), bits(&t.data.iter().copied().collect::<Vec<_>>()));

    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() - 8);
    assert!(matches!(decode_bundle(&corrupt), Err(Error::Format(_))));
}

fn checkpoint(spec: ModelSpec, cfg: TrainConfig, model: TrainedModel, history: History, order: Vec<String>) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            family: spec.family_name().to_string(),
            spec,
            train_config: cfg,
            use_static: true,
            feature_order: order,
            scaler_hash: "0".into(),
            provenance: Provenance {
                seed: 1,
                config_hash: "cfg".into(),
            },
            history,
        },
        model,
    }
}

#[test]
fn reloaded_checkpoints_predict_identically() {
    let fx = Fixture::new(10);
    let fp = fx.fitted();
    let (train, test) = (fx.bundle(&fp, &fx.train_ids, true), fx.bundle(&fp, &fx.test_ids, true));
    let hyper = FusedHyper {
        hidden_dim: 6,
        num_channels: vec![4, 4],
        kernel_size: 3,
        static_branch: Some(FfnnSpec::default()),
        ..FusedHyper::default()
    };
    for spec in [ModelSpec::FusedLstm(hyper.clone()), ModelSpec::FusedTcn(hyper)] {
        let cfg = quick(2);
        let (model, history) = fit(&spec, Dataset::Sequences(&train), None, &cfg).unwrap();
        let before = model.predict_proba(Dataset::Sequences(&test)).unwrap();
        let ckpt = checkpoint(spec, cfg, model, history, bundle_feature_order(&train));
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.meta, ckpt.meta);
        let after = loaded.model.predict_proba(Dataset::Sequences(&test)).unwrap();
        assert_eq!(bits(&before), bits(&after));
        assert_eq!(encode_checkpoint(&loaded).unwrap(), bytes);
    }

    let (tt, te) = (fx.table(&fp, &fx.train_ids), fx.table(&fp, &fx.test_ids));
    let spec = ModelSpec::Gbdt(GbdtParams {
        n_rounds: 30,
        ..GbdtParams::default()
    });
    let cfg = TrainConfig { seed: 2, ..TrainConfig::default() };
    let (model, history) = fit(&spec, Dataset::Tabular(&tt), None, &cfg).unwrap();
    let before = model.predict_proba(Dataset::Tabular(&te)).unwrap();
    let ckpt = checkpoint(spec, cfg, model, history, tt.columns.clone());
    let loaded = decode_checkpoint(&encode_checkpoint(&ckpt).unwrap()).unwrap();
    assert_eq!(bits(&before), bits(&loaded.model.predict_proba(Dataset::Tabular(&te)).unwrap()));
}

#[test]
fn training_is_deterministic_and_probabilities_are_open() {
    let fx = Fixture::new(12);
    let fp = fx.fitted();
    let (train, test) = (fx.bundle(&fp, &fx.train_ids, false), fx.bundle(&fp, &fx.test_ids, false));
    let spec = ModelSpec::FusedTcn(FusedHyper {
        num_channels: vec![4, 4],
        kernel_size: 3,
        ..FusedHyper::default()
    });
    let run = || {
        let (m, h) = fit(&spec, Dataset::Sequences(&train), None, &quick(6)).unwrap();
        (m.predict_proba(Dataset::Sequences(&test)).unwrap(), h)
    };
    let (p1, h1) = run();
    let (p2, h2) = run();
    assert_eq!(bits(&p1), bits(&p2));
    assert_eq!(h1, h2);
    assert!(p1.iter().all(|&p| p > 0.0 && p < 1.0));

    // The kept epoch is the one with the best recorded validation AUC.
    let best = h1
        .epochs
        .iter()
        .filter_map(|e| e.validation_auc.map(|a| (e.epoch, a)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    assert_eq!(h1.best_epoch, best.0);
}

#[test]
fn ablating_nothing_reproduces_the_baseline() {
    let fx = Fixture::new(14);
    let fp = fx.fitted();
    let (tt, te) = (fx.table(&fp, &fx.train_ids), fx.table(&fp, &fx.test_ids));
    let spec = ModelSpec::Gbdt(GbdtParams {
        n_rounds: 20,
        ..GbdtParams::default()
    });
    let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
    let score = |t: &TabularData, e: &TabularData| {
        let (m, _) = fit(&spec, Dataset::Tabular(t), None, &cfg)?;
        auc_roc(&m.predict_proba(Dataset::Tabular(e))?, &e.labels)
    };
    let baseline = score(&tt, &te).unwrap();
    let features = vec![("static".to_string(), tt.columns[0].clone())];
    let report = feature_ablation(&features, |drop| match drop {
        None => score(&tt, &te),
        Some(f) => score(&tt.without_column(f).unwrap(), &te.without_column(f).unwrap()),
    })
    .unwrap();
    assert_eq!(report.baseline_auc.to_bits(), baseline.to_bits());
    let row = &report.rows[0];
    assert_eq!(row.delta, row.ablated_auc - row.baseline_auc);
}
