use std::collections::HashMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rvqa_nn::{DenseArray, Mode, ParameterStore, RmsProp, RngState, Tape};
use serde::Serialize;

use crate::detector::{FactIndices, ScoredFact};
use crate::encoders::{FeatureProvider, TokenSequence};
use crate::error::{CoreError, Result};
use crate::msan::model::{AttentionRecord, Dropout, Msan};

/// A question resolved for the answer model: token ids, the frozen
/// detector's candidate facts and the answer-vocabulary target, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct MsanExample {
    pub id: String,
    pub image_id: String,
    pub question: TokenSequence,
    pub facts: Vec<ScoredFact>,
    pub target: Option<usize>,
}

impl MsanExample {
    pub fn fact_indices(&self) -> Vec<FactIndices> {
        self.facts.iter().map(|f| f.triple).collect()
    }
}

/// `[H·W, C]` region matrices per image id.
#[derive(Debug, Clone, Default)]
pub struct RegionFeatures {
    map: HashMap<String, DenseArray>,
}

impl RegionFeatures {
    pub fn collect<'a>(provider: &dyn FeatureProvider, image_ids: impl Iterator<Item = &'a str>) -> Result<Self> {
        let mut ids: Vec<&str> = image_ids.collect();
        ids.sort_unstable();
        ids.dedup();
        let maps = ids
            .par_iter()
            .map(|id| provider.features(id).map(|m| (id.to_string(), m.regions())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            map: maps.into_iter().collect(),
        })
    }

    pub fn get(&self, image_id: &str) -> Result<&DenseArray> {
        self.map
            .get(image_id)
            .ok_or_else(|| CoreError::Input(format!("no features for image `{image_id}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsanPrediction {
    pub p_ans: Vec<f64>,
    pub visual: Option<AttentionRecord>,
    pub semantic: Option<AttentionRecord>,
}

impl Msan {
    /// Eval-mode forward pass on plain inputs.
    pub fn predict(
        &self,
        store: &ParameterStore,
        question: &TokenSequence,
        regions: &DenseArray,
        facts: &[FactIndices],
    ) -> Result<MsanPrediction> {
        let mut tape = Tape::new(store);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut drop = Dropout {
            p: 0.0,
            mode: Mode::Eval,
            rng: &mut rng,
        };
        let out = self.forward(&mut tape, question, regions, facts, &mut drop)?;
        Ok(MsanPrediction {
            p_ans: tape.value(out.p_ans).to_vec(),
            visual: out.visual.map(|a| a.record(&tape)),
            semantic: out.semantic.map(|a| a.record(&tape)),
        })
    }

    pub fn predict_example(
        &self,
        store: &ParameterStore,
        example: &MsanExample,
        regions: &RegionFeatures,
    ) -> Result<MsanPrediction> {
        self.predict(
            store,
            &example.question,
            regions.get(&example.image_id)?,
            &example.fact_indices(),
        )
    }
}

/// Fraction of examples whose argmax answer equals the target; examples
/// without a target count as wrong.
pub fn answer_accuracy(
    model: &Msan,
    store: &ParameterStore,
    examples: &[MsanExample],
    regions: &RegionFeatures,
) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let hits = examples
        .par_iter()
        .map(|e| {
            let p = model.predict_example(store, e, regions)?;
            Ok(usize::from(e.target == Some(crate::detector::argmax(&p.p_ans))))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / examples.len() as f64)
}

/// Stops after `patience` consecutive validations without a strict
/// improvement on the best metric so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records a validation result; returns whether it improved the best.
    pub fn observe(&mut self, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub accuracy: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct MsanTraining {
    pub best: ParameterStore,
    pub best_accuracy: f64,
    pub log: Vec<ValidationRecord>,
    pub iterations: usize,
    pub stopped_early: bool,
    pub n_train: usize,
}

fn batch_step<R: rand::Rng + ?Sized>(
    model: &Msan,
    store: &mut ParameterStore,
    batch: &[&MsanExample],
    regions: &RegionFeatures,
    rng: &mut R,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for e in batch {
        let target = e.target.expect("training examples carry a target");
        let facts = e.fact_indices();
        let grads = {
            let mut tape = Tape::new(store);
            let mut drop = Dropout {
                p: model.config.dropout,
                mode: Mode::Train,
                rng: &mut *rng,
            };
            let out = model.forward(&mut tape, &e.question, regions.get(&e.image_id)?, &facts, &mut drop)?;
            let loss = tape.cross_entropy(out.p_ans, target)?;
            total += tape.scalar(loss);
            tape.backward(loss)?
        };
        store.accumulate(&grads, scale);
    }
    Ok(total * scale)
}

/// Minibatch RMSProp with periodic validation and early stopping. Examples
/// without a target are skipped for training. Validation uses `val`, or the
/// training examples when `val` is empty.
pub fn train_msan(
    model: &Msan,
    train: &[MsanExample],
    val: &[MsanExample],
    regions: &RegionFeatures,
    seed: u64,
) -> Result<MsanTraining> {
    let usable: Vec<&MsanExample> = train.iter().filter(|e| e.target.is_some()).collect();
    if usable.is_empty() {
        return Err(CoreError::Config("no training examples with an in-vocabulary answer".into()));
    }
    let config = &model.config;
    let state = RngState::new(seed);
    let mut store = model.init_store(seed)?;
    let mut opt = RmsProp::new(config.optimizer);
    let mut shuffle_rng = state.fork(1);
    let mut dropout_rng = state.fork(2);
    let val_set: Vec<MsanExample> = if val.is_empty() {
        usable.iter().map(|e| (*e).clone()).collect()
    } else {
        val.to_vec()
    };
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = store.clone();
    let mut log = Vec::new();
    let mut iteration = 0;
    let mut window_loss = (0.0, 0usize);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut stopped_early = false;

    let mut validate = |store: &ParameterStore, iteration, epoch, window: &mut (f64, usize)| -> Result<bool> {
        let accuracy = answer_accuracy(model, store, &val_set, regions)?;
        let improved = stopper.observe(accuracy);
        if improved {
            best = store.clone();
        }
        let train_loss = if window.1 == 0 { f64::NAN } else { window.0 / window.1 as f64 };
        log::info!("msan iteration {iteration} (epoch {epoch}): loss {train_loss:.5} accuracy {accuracy:.4}");
        log.push(ValidationRecord {
            iteration,
            epoch,
            train_loss,
            accuracy,
            improved,
        });
        *window = (0.0, 0);
        Ok(stopper.should_stop())
    };

    'epochs: for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MsanExample> = chunk.iter().map(|&i| usable[i]).collect();
            let loss = batch_step(model, &mut store, &batch, regions, &mut dropout_rng)?;
            opt.step(&mut store)?;
            iteration += 1;
            window_loss.0 += loss;
            window_loss.1 += 1;
            if iteration % config.validation_interval == 0 && validate(&store, iteration, epoch, &mut window_loss)? {
                log::info!("early stop after {} validations without improvement", config.patience);
                stopped_early = true;
                break 'epochs;
            }
        }
    }
    if iteration == 0 || (!stopped_early && iteration % config.validation_interval != 0) {
        validate(&store, iteration, config.epochs, &mut window_loss)?;
    }
    let best_accuracy = stopper.best().unwrap_or(0.0);
    Ok(MsanTraining {
        best,
        best_accuracy,
        log,
        iterations: iteration,
        stopped_early,
        n_train: usable.len(),
    })
}
