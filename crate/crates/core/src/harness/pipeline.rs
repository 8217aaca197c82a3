use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use rvqa_nn::{checkpoint, io::write_atomic, ParameterStore};
use serde::Serialize;
use serde_json::{json, Value};

use crate::builder::{
    build_dataset, dataset_stats, load_jsonl, parse_annotations, to_jsonl, AliasTable, ElementVocabulary, Split,
};
use crate::checksum::{config_hash, sha256_hex};
use crate::detector::{
    evaluate_detector, resolve_examples, train_detector, FactDetector, FactIndices, PooledFeatures, ScoredFact, TrainedDetector,
};
use crate::encoders::{FeatureProvider, QuestionVocab};
use crate::error::{CoreError, Result};
use crate::harness::answers::{predict_answer, training_target, AnswerPrediction, AnswerVocab, Task};
use crate::harness::config::{require_entry, require_path, RunConfig};
use crate::harness::data::{load_vqa_jsonl, VqaExample};
use crate::harness::records::{
    fact_records, rank_answers, visual_grid, CaseStudyDump, CaseStudyRecord, PredictionRecord,
};
use crate::harness::report::{evaluate_predictions, EvalReport};
use crate::msan::{train_msan, Msan, MsanConfig, MsanExample, MsanPrediction, RegionFeatures, Variant};

pub const RVQA_JSONL: &str = "rvqa.jsonl";
pub const ELEMENT_VOCAB: &str = "element_vocab.json";
pub const QUESTION_VOCAB: &str = "question_vocab.txt";
pub const BUILD_REPORT: &str = "build_report.json";
pub const DATASET_STATS: &str = "dataset_stats.json";
pub const DETECTOR_CKPT: &str = "detector.ckpt";
pub const DETECTOR_LOG: &str = "detector_train.json";
pub const DETECTOR_METRICS: &str = "detector_metrics.json";
pub const ANSWER_VOCAB: &str = "answer_vocab.txt";
pub const VQA_QUESTION_VOCAB: &str = "vqa_question_vocab.txt";
pub const MSAN_CKPT: &str = "msan.ckpt";
pub const MSAN_LOG: &str = "msan_train.json";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const CASE_STUDY: &str = "case_study.json";

/// A run root for relative input paths, an output directory for
/// artifacts, and the configuration.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, out: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| CoreError::io(&out, e))?;
        Ok(Self {
            root: root.into(),
            out,
            config,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.config.to_value())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require_artifact(&self, name: &str, stage: &str) -> Result<PathBuf> {
        let p = self.artifact(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(CoreError::Config(format!(
                "missing artifact {} (run `{stage}` first)",
                p.display()
            )))
        }
    }

    fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.artifact(name);
        write_atomic(&p, bytes)?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CoreError::json(name, e))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    fn provider(&self) -> Result<Box<dyn FeatureProvider>> {
        self.config.feature_provider(&self.root)
    }

    fn stamp(&self, mut value: Value) -> Value {
        if let Value::Object(map) = &mut value {
            map.insert("seed".into(), json!(self.seed()));
            map.insert("config_hash".into(), json!(self.config_hash()));
        }
        value
    }
}

fn optional_path(ws: &Workspace, p: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    p.as_ref().map(|p| require_path(&ws.root, p)).transpose()
}

pub fn build_dataset_stage(ws: &Workspace) -> Result<Value> {
    let data = &ws.config.data;
    let path = require_entry(&ws.root, data.annotations.as_ref(), "data.annotations")?;
    let aliases = AliasTable::load(
        optional_path(ws, &data.aliases.subject)?.as_deref(),
        optional_path(ws, &data.aliases.relation)?.as_deref(),
        optional_path(ws, &data.aliases.object)?.as_deref(),
    )?;
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let (annotations, load) = parse_annotations(&text);
    let built = build_dataset(&annotations, &aliases, &data.build, ws.seed())?;
    ws.write_bytes(RVQA_JSONL, to_jsonl(&built.examples).as_bytes())?;
    ws.write_bytes(ELEMENT_VOCAB, built.vocabulary.to_json().as_bytes())?;
    ws.write_bytes(QUESTION_VOCAB, built.question_vocab.to_text().as_bytes())?;
    let report = ws.stamp(json!({ "load": load, "build": built.report }));
    ws.write_json(BUILD_REPORT, &report)?;
    let s = &built.report.stats;
    Ok(ws.stamp(json!({
        "examples": s.total,
        "train": s.train,
        "dev": s.dev,
        "test": s.test,
        "skipped_records": load.skipped_records,
        "element_vocab": built.vocabulary.sizes(),
        "question_vocab": built.question_vocab.len(),
    })))
}

pub fn dataset_stats_stage(ws: &Workspace) -> Result<Value> {
    let examples = load_jsonl(&ws.require_artifact(RVQA_JSONL, "build-dataset")?)?;
    let stats = ws.stamp(serde_json::to_value(dataset_stats(&examples)).expect("stats serialize"));
    ws.write_json(DATASET_STATS, &stats)?;
    Ok(stats)
}

fn load_vocabularies(ws: &Workspace) -> Result<(ElementVocabulary, QuestionVocab)> {
    Ok((
        ElementVocabulary::load(&ws.require_artifact(ELEMENT_VOCAB, "build-dataset")?)?,
        QuestionVocab::load(&ws.require_artifact(QUESTION_VOCAB, "build-dataset")?)?,
    ))
}

pub fn train_detector_stage(ws: &Workspace) -> Result<Value> {
    let examples = load_jsonl(&ws.require_artifact(RVQA_JSONL, "build-dataset")?)?;
    let (elements, questions) = load_vocabularies(ws)?;
    let mut config = ws.config.detector.clone();
    config.vocab = elements.sizes();
    config.question_vocab_size = questions.len();
    config.image_dim = ws.config.feature_shape()?.channels;
    let detector = FactDetector::new(config)?;

    let of = |split| examples.iter().filter(|e| e.split == split).cloned().collect::<Vec<_>>();
    let (train, dropped_train) = resolve_examples(&of(Split::Train), &elements, &questions);
    let (dev, dropped_dev) = resolve_examples(&of(Split::Dev), &elements, &questions);
    let provider = ws.provider()?;
    let pooled = PooledFeatures::collect(
        provider.as_ref(),
        train.iter().chain(&dev).map(|e| e.image_id.as_str()),
    )?;
    let run = train_detector(&detector, &train, &dev, &pooled, ws.seed())?;
    let trained = TrainedDetector {
        detector,
        store: run.best,
        element_vocab: elements,
        question_vocab: questions,
    };
    trained.save(&ws.artifact(DETECTOR_CKPT), ws.seed())?;
    let log = ws.stamp(json!({
        "n_train": train.len(),
        "n_dev": dev.len(),
        "n_dropped_oov": dropped_train + dropped_dev,
        "best_epoch": run.best_epoch,
        "first_batch_loss": run.first_batch_loss,
        "epochs": run.log,
    }));
    ws.write_json(DETECTOR_LOG, &log)?;
    let last = run.log.last().expect("at least one epoch");
    Ok(ws.stamp(json!({
        "checkpoint": ws.artifact(DETECTOR_CKPT),
        "best_epoch": run.best_epoch,
        "final_train_loss": last.train_loss,
        "dev": last.dev,
    })))
}

pub fn load_detector(ws: &Workspace) -> Result<TrainedDetector> {
    let path = ws.require_artifact(DETECTOR_CKPT, "train-detector")?;
    let (elements, questions) = load_vocabularies(ws)?;
    TrainedDetector::load(&path, elements, questions)
}

pub fn eval_detector_stage(ws: &Workspace) -> Result<Value> {
    let trained = load_detector(ws)?;
    let examples = load_jsonl(&ws.require_artifact(RVQA_JSONL, "build-dataset")?)?;
    let mut split = "test";
    let mut chosen: Vec<_> = examples.iter().filter(|e| e.split == Split::Test).cloned().collect();
    if chosen.is_empty() {
        log::warn!("test split is empty; evaluating on all examples");
        split = "all";
        chosen = examples;
    }
    let (resolved, dropped) = resolve_examples(&chosen, &trained.element_vocab, &trained.question_vocab);
    let provider = ws.provider()?;
    let pooled = PooledFeatures::collect(provider.as_ref(), resolved.iter().map(|e| e.image_id.as_str()))?;
    let metrics = evaluate_detector(
        &trained.detector,
        &trained.store,
        &resolved,
        &pooled,
        &ws.config.eval.ks,
        dropped,
    )?;
    let mut report = serde_json::to_value(&metrics).expect("metrics serialize");
    report["split"] = json!(split);
    let report = ws.stamp(report);
    ws.write_json(DETECTOR_METRICS, &report)?;
    Ok(report)
}

/// Answer model with its vocabularies and, for variants with a fact path,
/// the frozen detector.
pub struct VqaModel {
    pub msan: Msan,
    pub store: ParameterStore,
    pub answer_vocab: AnswerVocab,
    pub question_vocab: QuestionVocab,
    pub detector: Option<TrainedDetector>,
}

pub struct Inference {
    pub prediction: MsanPrediction,
    pub answer: AnswerPrediction,
    pub facts: Vec<ScoredFact>,
}

impl VqaModel {
    pub fn top_facts(&self, question: &str, image_id: &str, pooled: &PooledFeatures) -> Result<Vec<ScoredFact>> {
        match &self.detector {
            Some(d) => d.top_facts(question, pooled.get(image_id)?, self.msan.config.k),
            None => Ok(Vec::new()),
        }
    }

    pub fn prepare(&self, ex: &VqaExample, pooled: &PooledFeatures) -> Result<MsanExample> {
        let target = training_target(&ex.answer_list()).and_then(|a| self.answer_vocab.index_of(&a));
        Ok(MsanExample {
            id: ex.question_id.clone(),
            image_id: ex.image_id.clone(),
            question: self.question_vocab.encode(&ex.question)?,
            facts: self.top_facts(&ex.question, &ex.image_id, pooled)?,
            target,
        })
    }

    pub fn infer(
        &self,
        ex: &VqaExample,
        task: Task,
        regions: &RegionFeatures,
        pooled: &PooledFeatures,
    ) -> Result<Inference> {
        let prepared = self.prepare(ex, pooled)?;
        let prediction = self.msan.predict_example(&self.store, &prepared, regions)?;
        let answer = predict_answer(&prediction.p_ans, task, ex.choices.as_deref(), &self.answer_vocab)?;
        Ok(Inference {
            prediction,
            answer,
            facts: prepared.facts,
        })
    }

    pub fn record(&self, question_id: &str, inf: &Inference) -> PredictionRecord {
        PredictionRecord {
            question_id: question_id.to_string(),
            answer: inf.answer.answer.clone(),
            answer_rank: rank_answers(&inf.prediction.p_ans, &self.answer_vocab, 5),
            visual_weights: inf.prediction.visual.as_ref().map(|v| v.weights.clone()).unwrap_or_default(),
            facts: fact_records(
                &inf.facts,
                inf.prediction.semantic.as_ref().map(|s| s.weights.as_slice()),
                self.detector.as_ref(),
            ),
            fallback: inf.answer.fallback,
        }
    }
}

fn msan_checkpoint_config(
    config: &MsanConfig,
    answers: &AnswerVocab,
    questions: &QuestionVocab,
    detector_sha: Option<String>,
    seed: u64,
) -> Value {
    json!({
        "kind": "msan",
        "msan": config,
        "optimizer_variant": rvqa_nn::RMSPROP_VARIANT,
        "answer_vocab_sha256": sha256_hex(answers.to_text().as_bytes()),
        "question_vocab_sha256": sha256_hex(questions.to_text().as_bytes()),
        "detector_sha256": detector_sha,
        "seed": seed,
    })
}

fn file_sha(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Loads the detector a variant needs; variants without a fact path run
/// without one.
fn detector_for(ws: &Workspace, variant: Variant) -> Result<Option<TrainedDetector>> {
    if !variant.uses_facts() {
        return Ok(None);
    }
    if !ws.artifact(DETECTOR_CKPT).exists() {
        return Err(CoreError::Config(format!(
            "variant {variant} needs a detector checkpoint at {}",
            ws.artifact(DETECTOR_CKPT).display()
        )));
    }
    load_detector(ws).map(Some)
}

fn features_for<'a>(
    ws: &Workspace,
    detector: Option<&TrainedDetector>,
    image_ids: impl Iterator<Item = &'a str> + Clone,
) -> Result<(RegionFeatures, PooledFeatures)> {
    let provider = ws.provider()?;
    let regions = RegionFeatures::collect(provider.as_ref(), image_ids.clone())?;
    let pooled = match detector {
        Some(_) => PooledFeatures::collect(provider.as_ref(), image_ids)?,
        None => PooledFeatures::default(),
    };
    Ok((regions, pooled))
}

pub fn train_vqa_stage(ws: &Workspace) -> Result<Value> {
    let cfg = &ws.config;
    let train = load_vqa_jsonl(&require_entry(&ws.root, cfg.data.vqa_train.as_ref(), "data.vqa_train")?)?;
    let val = match &cfg.data.vqa_val {
        Some(p) => load_vqa_jsonl(&require_path(&ws.root, p)?)?,
        None => Vec::new(),
    };
    let (answer_vocab, coverage) = AnswerVocab::build(
        train.iter().flat_map(|e| e.answer_list()).collect::<Vec<_>>().iter().map(String::as_str),
        cfg.train.answer_vocab_size,
    )?;
    let question_vocab = QuestionVocab::build(train.iter().map(|e| e.question.as_str()), cfg.train.question_vocab_size);

    let detector = detector_for(ws, cfg.msan.variant)?;
    let mut config = cfg.msan.clone();
    config.answers = answer_vocab.len();
    config.question_vocab_size = question_vocab.len();
    config.image_dim = cfg.feature_shape()?.channels;
    if let Some(d) = &detector {
        config.fact_vocab = d.element_vocab.sizes();
    }
    let model = VqaModel {
        msan: Msan::new(config)?,
        store: ParameterStore::new(),
        answer_vocab,
        question_vocab,
        detector,
    };
    let ids = train.iter().chain(&val).map(|e| e.image_id.as_str());
    let (regions, pooled) = features_for(ws, model.detector.as_ref(), ids)?;
    let prepare = |set: &[VqaExample]| -> Result<Vec<MsanExample>> {
        set.par_iter().map(|e| model.prepare(e, &pooled)).collect()
    };
    let train_ex = prepare(&train)?;
    let val_ex = prepare(&val)?;
    let run = train_msan(&model.msan, &train_ex, &val_ex, &regions, ws.seed())?;

    let detector_sha = match &model.detector {
        Some(_) => Some(file_sha(&ws.artifact(DETECTOR_CKPT))?),
        None => None,
    };
    ws.write_bytes(ANSWER_VOCAB, model.answer_vocab.to_text().as_bytes())?;
    ws.write_bytes(VQA_QUESTION_VOCAB, model.question_vocab.to_text().as_bytes())?;
    let ckpt = msan_checkpoint_config(
        &model.msan.config,
        &model.answer_vocab,
        &model.question_vocab,
        detector_sha,
        ws.seed(),
    );
    checkpoint::save_checkpoint(&ws.artifact(MSAN_CKPT), &ckpt, &run.best)?;
    let log = ws.stamp(json!({
        "variant": model.msan.variant(),
        "answer_coverage": coverage,
        "n_train": run.n_train,
        "n_train_without_target": train_ex.len() - run.n_train,
        "n_val": val_ex.len(),
        "iterations": run.iterations,
        "stopped_early": run.stopped_early,
        "best_accuracy": run.best_accuracy,
        "validations": run.log,
    }));
    ws.write_json(MSAN_LOG, &log)?;
    Ok(ws.stamp(json!({
        "checkpoint": ws.artifact(MSAN_CKPT),
        "variant": model.msan.variant(),
        "best_accuracy": run.best_accuracy,
        "iterations": run.iterations,
        "stopped_early": run.stopped_early,
    })))
}

/// Loads the answer model and checks its checkpoint against the
/// vocabularies and detector on disk.
pub fn load_vqa_model(ws: &Workspace) -> Result<VqaModel> {
    let path = ws.require_artifact(MSAN_CKPT, "train-vqa")?;
    let answer_vocab = AnswerVocab::load(&ws.require_artifact(ANSWER_VOCAB, "train-vqa")?)?;
    let question_vocab = QuestionVocab::load(&ws.require_artifact(VQA_QUESTION_VOCAB, "train-vqa")?)?;
    let (cfg, stored) = checkpoint::load_checkpoint(&path)?;
    if cfg.get("kind").and_then(Value::as_str) != Some("msan") {
        return Err(CoreError::Config(format!("{} is not an answer-model checkpoint", path.display())));
    }
    let config: MsanConfig =
        serde_json::from_value(cfg["msan"].clone()).map_err(|e| CoreError::json("answer-model checkpoint config", e))?;
    let msan = Msan::new(config)?;
    let detector = detector_for(ws, msan.variant())?;
    let detector_sha = match &detector {
        Some(_) => Some(file_sha(&ws.artifact(DETECTOR_CKPT))?),
        None => None,
    };
    let expected = msan_checkpoint_config(&msan.config, &answer_vocab, &question_vocab, detector_sha, 0);
    for key in ["answer_vocab_sha256", "question_vocab_sha256", "detector_sha256"] {
        if cfg.get(key) != expected.get(key) {
            return Err(CoreError::Config(format!(
                "checksum mismatch for {key}: checkpoint does not match the artifacts in {}",
                ws.out.display()
            )));
        }
    }
    let mut store = msan.init_store(0)?;
    if store.len() != stored.len() {
        return Err(CoreError::Config("checkpoint parameters do not match the answer-model layout".into()));
    }
    store.load_values_from(&stored)?;
    Ok(VqaModel {
        msan,
        store,
        answer_vocab,
        question_vocab,
        detector,
    })
}

fn eval_examples(ws: &Workspace) -> Result<Vec<VqaExample>> {
    let data = &ws.config.data;
    match (&data.vqa_test, &data.vqa_val) {
        (Some(p), _) => load_vqa_jsonl(&require_path(&ws.root, p)?),
        (None, Some(p)) => {
            log::warn!("no data.vqa_test; evaluating on data.vqa_val");
            load_vqa_jsonl(&require_path(&ws.root, p)?)
        }
        (None, None) => Err(CoreError::Config("config is missing `data.vqa_test`".into())),
    }
}

fn infer_all(ws: &Workspace, model: &VqaModel, examples: &[VqaExample]) -> Result<Vec<Inference>> {
    let (regions, pooled) = features_for(ws, model.detector.as_ref(), examples.iter().map(|e| e.image_id.as_str()))?;
    let task = ws.config.eval.task;
    examples
        .par_iter()
        .map(|e| model.infer(e, task, &regions, &pooled))
        .collect()
}

pub fn eval_vqa_stage(ws: &Workspace) -> Result<EvalReport> {
    let model = load_vqa_model(ws)?;
    let examples = eval_examples(ws)?;
    let inferences = infer_all(ws, &model, &examples)?;
    let mut lines = String::new();
    for (e, inf) in examples.iter().zip(&inferences) {
        lines.push_str(&serde_json::to_string(&model.record(&e.question_id, inf)).expect("record serializes"));
        lines.push('\n');
    }
    ws.write_bytes(PREDICTIONS, lines.as_bytes())?;
    let answers: Vec<String> = inferences.iter().map(|i| i.answer.answer.clone()).collect();
    let accuracy = evaluate_predictions(&examples, &answers, ws.config.eval.metric)?;
    let n_fallback = inferences.iter().filter(|i| i.answer.fallback).count();
    let report = EvalReport::new(accuracy, n_fallback, ws.seed(), ws.config.to_value());
    ws.write_json(EVAL_REPORT, &report)?;
    Ok(report)
}

/// Single ad-hoc prediction for a question about an image.
pub fn predict_stage(ws: &Workspace, image_id: &str, question: &str, choices: Option<Vec<String>>) -> Result<PredictionRecord> {
    let model = load_vqa_model(ws)?;
    let example = VqaExample {
        question_id: "adhoc".into(),
        image_id: image_id.into(),
        question: question.into(),
        answers: crate::harness::data::Answers::Many(vec![String::new()]),
        choices,
        question_type: "other".into(),
    };
    let task = if example.choices.is_some() {
        Task::MultiChoice
    } else {
        Task::OpenEnded
    };
    let (regions, pooled) = features_for(ws, model.detector.as_ref(), std::iter::once(image_id))?;
    let inf = model.infer(&example, task, &regions, &pooled)?;
    Ok(model.record(&example.question_id, &inf))
}

/// Dumps attention and fact evidence for the first evaluation examples.
/// `facts_shown` limits the listed facts (e.g. 5 of 10).
pub fn case_study_stage(ws: &Workspace, facts_shown: usize) -> Result<CaseStudyDump> {
    let model = load_vqa_model(ws)?;
    let mut examples = eval_examples(ws)?;
    examples.truncate(ws.config.eval.case_study_limit);
    let inferences = infer_all(ws, &model, &examples)?;
    let shape = ws.config.feature_shape()?;
    let mut records = Vec::with_capacity(examples.len());
    let mut by_image: BTreeMap<&str, Vec<Vec<FactIndices>>> = BTreeMap::new();
    for (e, inf) in examples.iter().zip(&inferences) {
        let mut facts = fact_records(
            &inf.facts,
            inf.prediction.semantic.as_ref().map(|s| s.weights.as_slice()),
            model.detector.as_ref(),
        );
        facts.truncate(facts_shown);
        by_image
            .entry(e.image_id.as_str())
            .or_default()
            .push(inf.facts.iter().map(|f| f.triple).collect());
        records.push(CaseStudyRecord {
            image_id: e.image_id.clone(),
            question_id: e.question_id.clone(),
            question: e.question.clone(),
            predicted_answer: inf.answer.answer.clone(),
            facts,
            visual_grid: inf
                .prediction
                .visual
                .as_ref()
                .map(|v| visual_grid(&v.weights, shape))
                .unwrap_or_default(),
        });
    }
    let question_dependent_images: Vec<String> = by_image
        .into_iter()
        .filter(|(_, lists)| lists.windows(2).any(|w| w[0] != w[1]))
        .map(|(id, _)| id.to_string())
        .collect();
    for id in &question_dependent_images {
        log::info!("image {id}: fact lists differ across its questions");
    }
    let dump = CaseStudyDump {
        seed: ws.seed(),
        config_hash: ws.config_hash(),
        variant: model.msan.variant().to_string(),
        facts_shown,
        records,
        question_dependent_images,
    };
    ws.write_json(CASE_STUDY, &dump)?;
    Ok(dump)
}
