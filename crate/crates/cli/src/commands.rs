//! One function per subcommand. Each reads verified upstream artifacts,
//! writes its outputs and a manifest into its own directory, and never
//! touches its inputs.

use std::collections::HashMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use extubation_core::artifact::{
    bundle_feature_order, decode_bundle, decode_checkpoint, decode_table, encode_bundle, encode_checkpoint,
    encode_table, read_ndjson, write_ndjson, Checkpoint, CheckpointMeta, Provenance,
};
use extubation_core::cohort::{
    annotate_outcome, apply_inclusion_exclusion, generate_cohort, EventRecord, GeneratorConfig, PatientId,
    StaticProfile, VentilationTimeline,
};
use extubation_core::evaluation::{
    auc_roc, ensemble_average, feature_ablation, EvalReport, LogisticStacker,
};
use extubation_core::preprocess::{prepare_split, FittedPreprocessor};
use extubation_core::training::{
    apply_hyperparams, fit, hyperparam_search, kfold_assign, kfold_cv, History, OwnedDataset, TrainedModel,
};
use extubation_core::Error as CoreError;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Family, Overrides, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::{ManifestBuilder, RunManifest, Upstream};

/// Effective configuration plus the output directory of one command.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: Option<&Path>, overrides: &Overrides, out: &Path) -> Result<Self> {
        Ok(Self {
            cfg: RunConfig::load(config, overrides)?,
            out: out.to_path_buf(),
        })
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.cfg.seed,
            config_hash: self.cfg.hash(),
        }
    }

    fn with_out(&self, out: PathBuf) -> Self {
        Self {
            cfg: self.cfg.clone(),
            out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Average,
    Stack,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(CliError::io(format!("reading {}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?)
        .map_err(|e| CoreError::Format(format!("{}: {e}", path.display())).into())
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
    Ok(read_ndjson(BufReader::new(f))?)
}

fn ndjson<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, records)?;
    Ok(buf)
}

fn history_csv(h: &History) -> String {
    let mut s = String::from("epoch,train_loss,validation_auc\n");
    for e in &h.epochs {
        let auc = e.validation_auc.map(|a| format!("{a:?}")).unwrap_or_default();
        s.push_str(&format!("{},{:?},{auc}\n", e.epoch, e.train_loss));
    }
    s
}

fn predictions_csv(patients: &[PatientId], labels: &[u8], probs: &[f64]) -> String {
    let mut s = String::from("patient_id,label,probability\n");
    for ((p, y), q) in patients.iter().zip(labels).zip(probs) {
        s.push_str(&format!("{},{y},{q:?}\n", p.0));
    }
    s
}

// ---------------------------------------------------------------------------

pub fn generate(ctx: &Context) -> Result<RunManifest> {
    let cohort = generate_cohort(&ctx.cfg.generator)?;
    let mut m = ManifestBuilder::new("generate", &ctx.out, &ctx.cfg)?;
    m.write_json("generator.json", &ctx.cfg.generator)?;
    m.write("events.ndjson", ndjson(&cohort.events)?)?;
    m.write("profiles.ndjson", ndjson(&cohort.profiles)?)?;
    m.write("timelines.ndjson", ndjson(&cohort.timelines)?)?;
    m.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub provenance: Provenance,
    pub train: Vec<PatientId>,
    pub test: Vec<PatientId>,
}

pub fn preprocess(ctx: &Context, cohort_dir: &Path) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let up = Upstream::open(cohort_dir)?;
    let mut m = ManifestBuilder::new("preprocess", &ctx.out, cfg)?;
    m.chain(&up)?;
    m.arg("feature_set", cfg.feature_set);

    let generator: GeneratorConfig = read_json(&m.input(&up, "generator.json")?)?;
    let events: Vec<EventRecord> = read_records(&m.input(&up, "events.ndjson")?)?;
    let profiles: Vec<StaticProfile> = read_records(&m.input(&up, "profiles.ndjson")?)?;
    let timelines: Vec<VentilationTimeline> = read_records(&m.input(&up, "timelines.ndjson")?)?;

    let kept = apply_inclusion_exclusion(&timelines, &profiles, &cfg.inclusion)?;
    let label_of: HashMap<PatientId, u8> = timelines
        .iter()
        .map(|t| (t.patient_id, annotate_outcome(t).label()))
        .collect();
    let pc = cfg.preprocess_config();
    let split = prepare_split(&events, &kept, &generator.feature_catalog, &pc)?;
    let fp = FittedPreprocessor::fit(&generator.feature_catalog, &events, &profiles, &split.train, &pc)?;
    let prov = ctx.provenance();
    for (part, ids) in [("train", &split.train), ("test", &split.test)] {
        let labels: Vec<u8> = ids.iter().map(|p| label_of[p]).collect();
        let bundle = fp.bundle(&events, &profiles, ids, &labels, true)?;
        m.write(&format!("{part}.bundle"), encode_bundle(&bundle, &fp.scalers, &prov)?)?;
        let table = fp.tabular(&events, &profiles, ids, &labels, true)?;
        m.write(&format!("{part}.table"), encode_table(&table, &prov)?)?;
    }
    m.write_json(
        "split.json",
        &SplitFile {
            provenance: prov,
            train: split.train.clone(),
            test: split.test.clone(),
        },
    )?;
    m.write_json("preprocessor.json", &fp)?;
    m.finish()
}

/// One split part of a preprocessed directory, shaped for a model family.
struct PartData {
    data: OwnedDataset,
    feature_order: Vec<String>,
    patients: Vec<PatientId>,
}

fn scaler_hash(fp: &FittedPreprocessor) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(&fp.scalers).expect("scalers serialize")))
}

fn load_preprocessor(m: &mut ManifestBuilder, up: &Upstream) -> Result<FittedPreprocessor> {
    read_json(&m.input(up, "preprocessor.json")?)
}

fn load_part(
    m: &mut ManifestBuilder,
    up: &Upstream,
    fp: &FittedPreprocessor,
    part: &str,
    family: Family,
    use_static: bool,
) -> Result<PartData> {
    if family == Family::Gbdt {
        let (mut table, _) = decode_table(&read_bytes(&m.input(up, &format!("{part}.table"))?)?)?;
        if !use_static {
            for c in &fp.static_encoder.columns {
                if let Some(t) = table.without_column(c) {
                    table = t;
                }
            }
        }
        Ok(PartData {
            feature_order: table.columns.clone(),
            patients: table.patients.clone(),
            data: OwnedDataset::Tabular(table),
        })
    } else {
        let mut bundle = decode_bundle(&read_bytes(&m.input(up, &format!("{part}.bundle"))?)?)?.bundle;
        if !use_static {
            bundle.static_block = None;
        } else if bundle.static_block.is_none() {
            return Err(CoreError::InvalidInput("bundle holds no static features".into()).into());
        }
        Ok(PartData {
            feature_order: bundle_feature_order(&bundle),
            patients: bundle.patients.clone(),
            data: OwnedDataset::Sequences(bundle),
        })
    }
}

fn family_of(meta: &CheckpointMeta) -> Result<Family> {
    serde_json::from_value(serde_json::Value::String(meta.family.clone()))
        .map_err(|_| CoreError::Format(format!("unknown model family `{}` in checkpoint", meta.family)).into())
}

fn check_order(meta: &CheckpointMeta, part: &PartData) -> Result<()> {
    if meta.feature_order != part.feature_order {
        return Err(CoreError::Schema(format!(
            "checkpoint expects inputs {:?}, bundle provides {:?}",
            meta.feature_order, part.feature_order
        ))
        .into());
    }
    Ok(())
}

pub fn train(ctx: &Context, bundle_dir: &Path, family: Family, use_static: bool) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let up = Upstream::open(bundle_dir)?;
    let mut m = ManifestBuilder::new("train", &ctx.out, cfg)?;
    m.chain(&up)?;
    m.arg("family", family.name());
    m.arg("static", use_static);

    let fp = load_preprocessor(&mut m, &up)?;
    let part = load_part(&mut m, &up, &fp, "train", family, use_static)?;
    let (spec, tc) = cfg.model(family, use_static);
    let (model, history) = fit(&spec, part.data.view(), None, &tc)?;
    let ckpt = Checkpoint {
        meta: CheckpointMeta {
            family: family.name().to_string(),
            spec,
            train_config: tc,
            use_static,
            feature_order: part.feature_order,
            scaler_hash: scaler_hash(&fp),
            provenance: ctx.provenance(),
            history: history.clone(),
        },
        model,
    };
    m.write("checkpoint.bin", encode_checkpoint(&ckpt)?)?;
    m.write_json("history.json", &history)?;
    m.write("history.csv", history_csv(&history))?;
    m.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub family: String,
    pub best_params: extubation_core::training::Hyperparams,
    pub best_auc: Option<f64>,
    pub spec: extubation_core::training::ModelSpec,
    pub train_config: extubation_core::training::TrainConfig,
}

pub fn search(ctx: &Context, bundle_dir: &Path, family: Family, use_static: bool) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let up = Upstream::open(bundle_dir)?;
    let mut m = ManifestBuilder::new("search", &ctx.out, cfg)?;
    m.chain(&up)?;
    m.arg("family", family.name());
    m.arg("static", use_static);

    let fp = load_preprocessor(&mut m, &up)?;
    let part = load_part(&mut m, &up, &fp, "train", family, use_static)?;
    let (spec, tc) = cfg.model(family, use_static);
    let space = cfg.search_space(family);
    let result = hyperparam_search(&space, cfg.seed, |params, budget| {
        let (s, c) = apply_hyperparams(&spec, &tc, params, budget)?;
        kfold_cv(&s, part.data.view(), &c, cfg.search.folds)
    })?;
    let (best_spec, best_cfg) = apply_hyperparams(&spec, &tc, &result.best, 1.0)?;
    m.write("trials.csv", result.to_csv())?;
    m.write_json("trials.json", &result)?;
    m.write_json(
        "best.json",
        &SearchSummary {
            family: family.name().to_string(),
            best_params: result.best.clone(),
            best_auc: result.best_auc,
            spec: best_spec,
            train_config: best_cfg,
        },
    )?;
    m.finish()
}

fn load_checkpoint(m: &mut ManifestBuilder, up: &Upstream) -> Result<Checkpoint> {
    Ok(decode_checkpoint(&read_bytes(&m.input(up, "checkpoint.bin")?)?)?)
}

fn write_report(m: &mut ManifestBuilder, cfg: &RunConfig, part: &PartData, probs: &[f64]) -> Result<EvalReport> {
    let labels = part.data.view().labels();
    let report = EvalReport::from_scores(probs, labels, cfg.decision_threshold, cfg.hash(), cfg.seed)?;
    m.write_json("report.json", &report)?;
    m.write("roc.csv", report.roc_csv())?;
    m.write("predictions.csv", predictions_csv(&part.patients, labels, probs))?;
    Ok(report)
}

pub fn evaluate(ctx: &Context, checkpoint_dir: &Path, bundle_dir: &Path) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let ck_up = Upstream::open(checkpoint_dir)?;
    let b_up = Upstream::open(bundle_dir)?;
    let mut m = ManifestBuilder::new("evaluate", &ctx.out, cfg)?;
    m.chain(&ck_up)?;
    m.chain(&b_up)?;

    let ckpt = load_checkpoint(&mut m, &ck_up)?;
    let family = family_of(&ckpt.meta)?;
    m.arg("family", family.name());
    let fp = load_preprocessor(&mut m, &b_up)?;
    let part = load_part(&mut m, &b_up, &fp, "test", family, ckpt.meta.use_static)?;
    check_order(&ckpt.meta, &part)?;
    let probs = ckpt.model.predict_proba(part.data.view())?;
    write_report(&mut m, cfg, &part, &probs)?;
    m.finish()
}

/// Retrains with one input removed (or none) and returns the test AUC.
fn ablated_auc(meta: &CheckpointMeta, train: &OwnedDataset, test: &OwnedDataset, drop: Option<&str>) -> Result<f64> {
    let without = |d: &OwnedDataset, name: &str| -> Result<OwnedDataset> {
        Ok(match d {
            OwnedDataset::Sequences(b) => OwnedDataset::Sequences(b.without_feature(name)?),
            OwnedDataset::Tabular(t) => OwnedDataset::Tabular(
                t.without_column(name)
                    .ok_or_else(|| CoreError::InvalidInput(format!("column `{name}` not in table")))?,
            ),
        })
    };
    let (tr, te) = match drop {
        Some(name) => (without(train, name)?, without(test, name)?),
        None => (train.clone(), test.clone()),
    };
    let (model, _) = fit(&meta.spec, tr.view(), None, &meta.train_config)?;
    let p = model.predict_proba(te.view())?;
    Ok(auc_roc(&p, te.view().labels())?)
}

pub fn ablate(ctx: &Context, checkpoint_dir: &Path, bundle_dir: &Path) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    let ck_up = Upstream::open(checkpoint_dir)?;
    let b_up = Upstream::open(bundle_dir)?;
    let mut m = ManifestBuilder::new("ablate", &ctx.out, cfg)?;
    m.chain(&ck_up)?;
    m.chain(&b_up)?;

    let ckpt = load_checkpoint(&mut m, &ck_up)?;
    let family = family_of(&ckpt.meta)?;
    m.arg("family", family.name());
    let fp = load_preprocessor(&mut m, &b_up)?;
    let train = load_part(&mut m, &b_up, &fp, "train", family, ckpt.meta.use_static)?;
    let test = load_part(&mut m, &b_up, &fp, "test", family, ckpt.meta.use_static)?;
    check_order(&ckpt.meta, &train)?;
    check_order(&ckpt.meta, &test)?;

    let subset_of = |name: &str| -> String {
        fp.assignment
            .subsets
            .iter()
            .find(|s| s.features.iter().any(|f| f == name))
            .map_or("static", |s| s.kind.name())
            .to_string()
    };
    let features: Vec<(String, String)> = match &train.data {
        OwnedDataset::Sequences(b) => {
            let mut v: Vec<(String, String)> = b
                .feature_order()
                .into_iter()
                .filter(|(_, f)| f != extubation_core::preprocess::PLACEHOLDER)
                .map(|(k, f)| (k.name().to_string(), f))
                .collect();
            if let Some(sb) = &b.static_block {
                v.extend(sb.columns.iter().map(|c| ("static".to_string(), c.clone())));
            }
            v
        }
        OwnedDataset::Tabular(t) => t.columns.iter().map(|c| (subset_of(c), c.clone())).collect(),
    };

    // Every retrain is independent, so they run in parallel; results are
    // collected in feature order, keeping the report deterministic.
    let runs: Vec<Option<&str>> = std::iter::once(None)
        .chain(features.iter().map(|(_, f)| Some(f.as_str())))
        .collect();
    let aucs: Vec<Result<f64>> = runs
        .par_iter()
        .map(|d| ablated_auc(&ckpt.meta, &train.data, &test.data, *d))
        .collect();
    let mut by_name: HashMap<Option<String>, f64> = HashMap::new();
    for (d, a) in runs.iter().zip(aucs) {
        by_name.insert(d.map(str::to_string), a?);
    }
    let report = feature_ablation(&features, |d| Ok(by_name[&d.map(str::to_string)]))?;
    m.write("ablation.csv", report.to_csv())?;
    m.write_json("ablation.json", &report)?;
    m.finish()
}

pub fn ensemble(ctx: &Context, checkpoint_dirs: &[PathBuf], mode: EnsembleMode, bundle_dir: &Path) -> Result<RunManifest> {
    let cfg = &ctx.cfg;
    if checkpoint_dirs.len() < 2 {
        return Err(CliError::Config("an ensemble needs at least two checkpoints".into()));
    }
    let b_up = Upstream::open(bundle_dir)?;
    let mut m = ManifestBuilder::new("ensemble", &ctx.out, cfg)?;
    m.arg("mode", serde_json::to_value(mode).expect("mode").as_str().expect("string"));
    let mut members = Vec::new();
    for dir in checkpoint_dirs {
        let up = Upstream::open(dir)?;
        m.chain(&up)?;
        members.push(load_checkpoint(&mut m, &up)?);
    }
    m.chain(&b_up)?;
    let fp = load_preprocessor(&mut m, &b_up)?;

    let mut test_parts = Vec::new();
    let mut train_parts = Vec::new();
    for ck in &members {
        let family = family_of(&ck.meta)?;
        let te = load_part(&mut m, &b_up, &fp, "test", family, ck.meta.use_static)?;
        check_order(&ck.meta, &te)?;
        if mode == EnsembleMode::Stack {
            train_parts.push(load_part(&mut m, &b_up, &fp, "train", family, ck.meta.use_static)?);
        }
        test_parts.push(te);
    }
    if test_parts.iter().any(|p| p.patients != test_parts[0].patients) {
        return Err(CoreError::InvalidInput("ensemble members see different patient orders".into()).into());
    }
    let test_probs: Vec<Vec<f64>> = members
        .iter()
        .zip(&test_parts)
        .map(|(ck, p)| ck.model.predict_proba(p.data.view()))
        .collect::<std::result::Result<_, _>>()?;

    let probs = match mode {
        EnsembleMode::Average => ensemble_average(&test_probs)?,
        EnsembleMode::Stack => {
            let labels = train_parts[0].data.view().labels().to_vec();
            let folds = kfold_assign(labels.len(), cfg.ensemble.folds, cfg.seed)?;
            let jobs: Vec<(usize, usize)> = (0..members.len())
                .flat_map(|j| (0..cfg.ensemble.folds).map(move |f| (j, f)))
                .collect();
            // Out-of-fold member probabilities: the meta-model never sees a
            // probability produced by a model that trained on that patient.
            let pieces: Vec<Result<(usize, Vec<usize>, Vec<f64>)>> = jobs
                .par_iter()
                .map(|&(j, f)| {
                    let tr: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] != f).collect();
                    let va: Vec<usize> = (0..labels.len()).filter(|&i| folds[i] == f).collect();
                    let data = train_parts[j].data.view();
                    let meta = &members[j].meta;
                    let (model, _) = fit(&meta.spec, OwnedDataset::select(data, &tr).view(), None, &meta.train_config)?;
                    let p = model.predict_proba(OwnedDataset::select(data, &va).view())?;
                    Ok((j, va, p))
                })
                .collect();
            let mut oof = vec![vec![0.0; labels.len()]; members.len()];
            for piece in pieces {
                let (j, rows, p) = piece?;
                for (r, v) in rows.into_iter().zip(p) {
                    oof[j][r] = v;
                }
            }
            let stacker = LogisticStacker::fit(&oof, &labels, &cfg.ensemble.stacking)?;
            m.write_json("stacker.json", &stacker)?;
            stacker.predict_proba(&test_probs)?
        }
    };
    write_report(&mut m, cfg, &test_parts[0], &probs)?;
    m.finish()
}

/// generate → preprocess → train and evaluate each family, under one root.
pub fn run(ctx: &Context, families: &[Family], use_static: bool) -> Result<Vec<RunManifest>> {
    let cohort = ctx.out.join("cohort");
    let data = ctx.out.join("data");
    let mut manifests = vec![
        generate(&ctx.with_out(cohort.clone()))?,
        preprocess(&ctx.with_out(data.clone()), &cohort)?,
    ];
    for &family in families {
        let model = ctx.out.join("models").join(family.name());
        manifests.push(train(&ctx.with_out(model.clone()), &data, family, use_static)?);
        manifests.push(evaluate(&ctx.with_out(ctx.out.join("reports").join(family.name())), &model, &data)?);
    }
    Ok(manifests)
}

/// Convenience for callers that want the model without the files.
pub fn checkpoint_model(dir: &Path) -> Result<TrainedModel> {
    Ok(decode_checkpoint(&read_bytes(&dir.join("checkpoint.bin"))?)?.model)
}
