use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rvqa_nn::{checkpoint, DenseArray, Mode, ParameterStore, RmsProp, RngState, Tape};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::builder::{ElementVocabulary, Role, RvqaExample};
use crate::checksum::sha256_hex;
use crate::detector::model::{argmax, top_k_facts, DetectorConfig, DetectorOutput, FactDetector, FactIndices, ScoredFact};
use crate::encoders::{mean_pool, FeatureProvider, QuestionVocab, TokenSequence};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorExample {
    pub id: String,
    pub image_id: String,
    pub question: TokenSequence,
    pub target: FactIndices,
}

/// Maps examples onto vocabulary indices. Examples with an out-of-vocabulary
/// fact element (or an empty question) are dropped; the count is returned.
pub fn resolve_examples(
    examples: &[RvqaExample],
    vocab: &ElementVocabulary,
    questions: &QuestionVocab,
) -> (Vec<DetectorExample>, usize) {
    let (si, ri, oi) = (vocab.index(Role::Subject), vocab.index(Role::Relation), vocab.index(Role::Object));
    let mut dropped = 0;
    let mut out = Vec::with_capacity(examples.len());
    for e in examples {
        let target = match (
            si.get(e.fact.subject.as_str()),
            ri.get(e.fact.relation.as_str()),
            oi.get(e.fact.object.as_str()),
        ) {
            (Some(&subject), Some(&relation), Some(&object)) => FactIndices {
                subject,
                relation,
                object,
            },
            _ => {
                dropped += 1;
                continue;
            }
        };
        match questions.encode(&e.question) {
            Ok(question) => out.push(DetectorExample {
                id: e.id.clone(),
                image_id: e.image_id.clone(),
                question,
                target,
            }),
            Err(_) => dropped += 1,
        }
    }
    if dropped > 0 {
        log::info!("dropped {dropped} examples with out-of-vocabulary fact elements");
    }
    (out, dropped)
}

/// Mean-pooled feature vector per image id.
#[derive(Debug, Clone, Default)]
pub struct PooledFeatures {
    map: HashMap<String, DenseArray>,
}

impl PooledFeatures {
    pub fn collect<'a>(provider: &dyn FeatureProvider, image_ids: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut ids: Vec<&str> = image_ids.collect();
        ids.sort_unstable();
        ids.dedup();
        let pooled = ids
            .par_iter()
            .map(|id| provider.features(id).map(|m| (id.to_string(), mean_pool(&m))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            map: pooled.into_iter().collect(),
        })
    }

    pub fn get(&self, image_id: &str) -> Result<&DenseArray> {
        self.map
            .get(image_id)
            .ok_or_else(|| CoreError::Input(format!("no features for image `{image_id}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub subject_acc: f64,
    pub relation_acc: f64,
    pub object_acc: f64,
    pub recall: BTreeMap<String, f64>,
    pub n_examples: usize,
    pub n_dropped_oov: usize,
}

impl DetectorMetrics {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k.to_string()).copied().unwrap_or(0.0)
    }

    /// Lowest of the three per-head accuracies.
    pub fn min_element_acc(&self) -> f64 {
        self.subject_acc.min(self.relation_acc).min(self.object_acc)
    }
}

/// Per-head exact-match accuracy and recall@k over `outputs` paired with
/// their targets. Counting is order-independent.
pub fn metrics_from_outputs(
    outputs: &[(DetectorOutput, FactIndices)],
    ks: &[usize],
    config: &DetectorConfig,
    n_dropped: usize,
) -> Result<DetectorMetrics> {
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let rows = outputs
        .par_iter()
        .map(|(out, t)| -> Result<(usize, usize, usize, Option<usize>)> {
            let top = top_k_facts(out, max_k, config.score_mode)?;
            let rank = top.iter().position(|f| f.triple == *t);
            Ok((
                (argmax(&out.p_sub) == t.subject) as usize,
                (argmax(&out.p_rel) == t.relation) as usize,
                (argmax(&out.p_obj) == t.object) as usize,
                rank,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let recall = ks
        .iter()
        .map(|&k| {
            let hits = rows.iter().filter(|r| r.3.is_some_and(|p| p < k)).count();
            (k.to_string(), frac(hits))
        })
        .collect();
    Ok(DetectorMetrics {
        subject_acc: frac(rows.iter().map(|r| r.0).sum()),
        relation_acc: frac(rows.iter().map(|r| r.1).sum()),
        object_acc: frac(rows.iter().map(|r| r.2).sum()),
        recall,
        n_examples: n,
        n_dropped_oov: n_dropped,
    })
}

pub fn predict_all(
    detector: &FactDetector,
    store: &ParameterStore,
    examples: &[DetectorExample],
    pooled: &PooledFeatures,
) -> Result<Vec<(DetectorOutput, FactIndices)>> {
    examples
        .par_iter()
        .map(|e| Ok((detector.predict(store, &e.question, pooled.get(&e.image_id)?)?, e.target)))
        .collect()
}

pub fn evaluate_detector(
    detector: &FactDetector,
    store: &ParameterStore,
    examples: &[DetectorExample],
    pooled: &PooledFeatures,
    ks: &[usize],
    n_dropped: usize,
) -> Result<DetectorMetrics> {
    let outputs = predict_all(detector, store, examples, pooled)?;
    metrics_from_outputs(&outputs, ks, &detector.config, n_dropped)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train: DetectorMetrics,
    pub dev: Option<DetectorMetrics>,
}

#[derive(Debug, Clone)]
pub struct DetectorTraining {
    /// Parameters at the epoch with the best selection recall@1.
    pub best: ParameterStore,
    pub best_epoch: usize,
    pub first_batch_loss: f64,
    pub log: Vec<DetectorEpoch>,
}

/// Mean classification loss of a batch plus the L2 term, accumulating the
/// matching gradients into `store`.
pub fn batch_step<R: rand::Rng + ?Sized>(
    detector: &FactDetector,
    store: &mut ParameterStore,
    batch: &[&DetectorExample],
    pooled: &PooledFeatures,
    rng: &mut R,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for e in batch {
        let grads = {
            let mut tape = Tape::new(store);
            let v = tape.input(pooled.get(&e.image_id)?);
            let q = detector.encode_question(&mut tape, &e.question)?;
            let heads = detector.forward(&mut tape, v, q, Mode::Train, rng)?;
            let loss = detector.classification_loss(&mut tape, heads, e.target)?;
            total += tape.scalar(loss);
            tape.backward(loss)?
        };
        store.accumulate(&grads, scale);
    }
    let l2 = detector.config.lambda_l2;
    store.add_l2_grad(l2);
    Ok(total * scale + l2 * store.l2_penalty())
}

/// Minibatch RMSProp. Model selection uses dev recall@1, or train recall@1
/// when no dev examples are supplied.
pub fn train_detector(
    detector: &FactDetector,
    train: &[DetectorExample],
    dev: &[DetectorExample],
    pooled: &PooledFeatures,
    seed: u64,
) -> Result<DetectorTraining> {
    if train.is_empty() {
        return Err(CoreError::Config("detector training set is empty".into()));
    }
    let config = &detector.config;
    let state = RngState::new(seed);
    let mut store = detector.init_store(seed)?;
    let mut opt = RmsProp::new(config.optimizer);
    let mut shuffle_rng = state.fork(1);
    let mut dropout_rng = state.fork(2);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best = (store.clone(), 0usize, f64::NEG_INFINITY);
    let mut first_batch_loss = f64::NAN;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&DetectorExample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = batch_step(detector, &mut store, &batch, pooled, &mut dropout_rng)?;
            if epoch == 1 && batches == 0 {
                first_batch_loss = loss;
            }
            opt.step(&mut store)?;
            loss_sum += loss;
            batches += 1;
        }
        let ks = [1, 5, 10];
        let train_metrics = evaluate_detector(detector, &store, train, pooled, &ks, 0)?;
        let dev_metrics = if dev.is_empty() {
            None
        } else {
            Some(evaluate_detector(detector, &store, dev, pooled, &ks, 0)?)
        };
        let selection = dev_metrics.as_ref().unwrap_or(&train_metrics).recall_at(1);
        if selection > best.2 {
            best = (store.clone(), epoch, selection);
        }
        log::info!(
            "detector epoch {epoch}: loss {:.5} train acc {:.3}/{:.3}/{:.3} R@1 {:.3}",
            loss_sum / batches as f64,
            train_metrics.subject_acc,
            train_metrics.relation_acc,
            train_metrics.object_acc,
            selection
        );
        log.push(DetectorEpoch {
            epoch,
            train_loss: loss_sum / batches as f64,
            train: train_metrics,
            dev: dev_metrics,
        });
    }
    Ok(DetectorTraining {
        best: best.0,
        best_epoch: best.1,
        first_batch_loss,
        log,
    })
}

pub fn element_vocab_checksum(vocab: &ElementVocabulary) -> String {
    sha256_hex(vocab.to_json().as_bytes())
}

pub fn question_vocab_checksum(vocab: &QuestionVocab) -> String {
    sha256_hex(vocab.to_text().as_bytes())
}

/// A trained detector with the vocabularies it was trained against.
#[derive(Debug, Clone)]
pub struct TrainedDetector {
    pub detector: FactDetector,
    pub store: ParameterStore,
    pub element_vocab: ElementVocabulary,
    pub question_vocab: QuestionVocab,
}

impl TrainedDetector {
    pub fn checkpoint_config(&self, seed: u64) -> Value {
        json!({
            "kind": "detector",
            "detector": self.detector.config,
            "optimizer_variant": rvqa_nn::RMSPROP_VARIANT,
            "element_vocab_sha256": element_vocab_checksum(&self.element_vocab),
            "question_vocab_sha256": question_vocab_checksum(&self.question_vocab),
            "seed": seed,
        })
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        checkpoint::save_checkpoint(path, &self.checkpoint_config(seed), &self.store)?;
        Ok(())
    }

    /// Loads a checkpoint and checks it against the supplied vocabularies.
    pub fn load(path: &Path, element_vocab: ElementVocabulary, question_vocab: QuestionVocab) -> Result<Self> {
        let (cfg, store) = checkpoint::load_checkpoint(path).map_err(|e| match e {
            rvqa_nn::NnError::Io(io) => CoreError::io(path, io),
            other => other.into(),
        })?;
        if cfg.get("kind").and_then(Value::as_str) != Some("detector") {
            return Err(CoreError::Config(format!("{} is not a detector checkpoint", path.display())));
        }
        let config: DetectorConfig = serde_json::from_value(cfg["detector"].clone())
            .map_err(|e| CoreError::json("detector checkpoint config", e))?;
        for (key, expect) in [
            ("element_vocab_sha256", element_vocab_checksum(&element_vocab)),
            ("question_vocab_sha256", question_vocab_checksum(&question_vocab)),
        ] {
            if cfg.get(key).and_then(Value::as_str) != Some(expect.as_str()) {
                return Err(CoreError::Config(format!(
                    "vocabulary mismatch: checkpoint {key} differs from the supplied vocabulary"
                )));
            }
        }
        let detector = FactDetector::new(config)?;
        let mut fresh = detector.init_store(0)?;
        fresh.load_values_from(&store)?;
        if fresh.len() != store.len() {
            return Err(CoreError::Config("checkpoint parameters do not match detector layout".into()));
        }
        Ok(Self {
            detector,
            store: fresh,
            element_vocab,
            question_vocab,
        })
    }

    pub fn output(&self, question: &str, v_pooled: &DenseArray) -> Result<DetectorOutput> {
        let seq = self.question_vocab.encode(question)?;
        self.detector.predict(&self.store, &seq, v_pooled)
    }

    pub fn top_facts(&self, question: &str, v_pooled: &DenseArray, k: usize) -> Result<Vec<ScoredFact>> {
        let out = self.output(question, v_pooled)?;
        top_k_facts(&out, k, self.detector.config.score_mode)
    }

    pub fn fact_strings(&self, f: &FactIndices) -> (String, String, String) {
        let get = |role, i| self.element_vocab.element(role, i).unwrap_or("<oov>").to_string();
        (
            get(Role::Subject, f.subject),
            get(Role::Relation, f.relation),
            get(Role::Object, f.object),
        )
    }
}
