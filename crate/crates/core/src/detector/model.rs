use std::cmp::Ordering;

use rand::Rng;
use rvqa_nn::layers::{linear, project};
use rvqa_nn::{kernels, DenseArray, Mode, ParameterStore, RmsPropConfig, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::builder::VocabSizes;
use crate::encoders::{QuestionEncoder, TokenSequence};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactScoreMode {
    /// `p_sub[s] + p_rel[r] + p_obj[o]`.
    ProbabilitySum,
    /// `ln p_sub[s] + ln p_rel[r] + ln p_obj[o]`.
    LogProbabilitySum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub image_dim: usize,
    pub question_vocab_size: usize,
    pub embed_dim: usize,
    pub question_dim: usize,
    pub common_dim: usize,
    pub vocab: VocabSizes,
    pub lambda_subject: f64,
    pub lambda_relation: f64,
    pub lambda_object: f64,
    pub lambda_l2: f64,
    pub dropout: f64,
    pub optimizer: RmsPropConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub score_mode: FactScoreMode,
    /// When false the question vector is replaced by zeros (image-only ablation).
    pub use_question: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            image_dim: 2048,
            question_vocab_size: 20_000,
            embed_dim: 620,
            question_dim: 2400,
            common_dim: 1200,
            vocab: VocabSizes::default(),
            lambda_subject: 1.0,
            lambda_relation: 0.8,
            lambda_object: 1.2,
            lambda_l2: 1e-7,
            dropout: 0.5,
            optimizer: RmsPropConfig {
                lr: 3e-4,
                momentum: 0.98,
                decay: 0.95,
                weight_decay: 0.01,
                eps: 1e-8,
            },
            batch_size: 100,
            epochs: 30,
            score_mode: FactScoreMode::ProbabilitySum,
            use_question: true,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_dim,
            self.question_vocab_size,
            self.embed_dim,
            self.question_dim,
            self.common_dim,
            self.vocab.subjects,
            self.vocab.relations,
            self.vocab.objects,
            self.batch_size,
        ];
        if dims.contains(&0) {
            return Err(CoreError::Config("detector dimensions must be positive".into()));
        }
        if [self.lambda_subject, self.lambda_relation, self.lambda_object]
            .iter()
            .any(|l| *l <= 0.0)
            || self.lambda_l2 < 0.0
        {
            return Err(CoreError::Config("detector loss weights must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Indices of a fact's elements in the element vocabularies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactIndices {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub p_sub: Vec<f64>,
    pub p_rel: Vec<f64>,
    pub p_obj: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredFact {
    pub triple: FactIndices,
    pub score: f64,
}

/// Tape handles for the three head distributions.
#[derive(Debug, Clone, Copy)]
pub struct DetectorHeads {
    pub p_sub: Var,
    pub p_rel: Var,
    pub p_obj: Var,
}

/// Question and pooled image features are projected to a common space
/// with `tanh`, fused by addition inside a second `tanh`, and classified
/// by three softmax heads.
#[derive(Debug, Clone)]
pub struct FactDetector {
    pub config: DetectorConfig,
    encoder: QuestionEncoder,
}

pub const PREFIX: &str = "det";

impl FactDetector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let encoder = QuestionEncoder::new(
            &format!("{PREFIX}.question"),
            config.question_vocab_size,
            config.embed_dim,
            config.question_dim,
        );
        Ok(Self { config, encoder })
    }

    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let c = &self.config;
        self.encoder.register(store, rng)?;
        store.add_linear(&format!("{PREFIX}.image"), c.image_dim, c.common_dim, rng)?;
        store.add_linear(&format!("{PREFIX}.query"), c.question_dim, c.common_dim, rng)?;
        store.add_linear(&format!("{PREFIX}.joint"), c.common_dim, c.common_dim, rng)?;
        store.add_matrix(&format!("{PREFIX}.joint_q"), c.common_dim, c.common_dim, rng)?;
        store.add_linear(&format!("{PREFIX}.subject"), c.common_dim, c.vocab.subjects, rng)?;
        store.add_linear(&format!("{PREFIX}.relation"), c.common_dim, c.vocab.relations, rng)?;
        store.add_linear(&format!("{PREFIX}.object"), c.common_dim, c.vocab.objects, rng)?;
        Ok(())
    }

    pub fn init_store(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        self.register(&mut store, &mut rvqa_nn::RngState::new(seed).rng())?;
        Ok(store)
    }

    pub fn encode_question(&self, tape: &mut Tape<'_>, question: &TokenSequence) -> Result<Var> {
        if self.config.use_question {
            self.encoder.encode(tape, question)
        } else {
            Ok(tape.input(&DenseArray::zeros(&[self.config.question_dim])))
        }
    }

    /// Dropout is applied to the input of every linear layer in train mode.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        v_pooled: Var,
        q: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<DetectorHeads> {
        let p = self.config.dropout;
        let v = tape.dropout(v_pooled, p, mode, rng)?;
        let f_v = linear(tape, &format!("{PREFIX}.image"), v)?;
        let f_v = tape.tanh(f_v);
        let q = tape.dropout(q, p, mode, rng)?;
        let f_q = linear(tape, &format!("{PREFIX}.query"), q)?;
        let f_q = tape.tanh(f_q);

        let f_v = tape.dropout(f_v, p, mode, rng)?;
        let f_q = tape.dropout(f_q, p, mode, rng)?;
        let jv = linear(tape, &format!("{PREFIX}.joint"), f_v)?;
        let jq = project(tape, &format!("{PREFIX}.joint_q"), f_q)?;
        let h = tape.add(jv, jq)?;
        let h = tape.tanh(h);

        let mut head = |name: &str| -> Result<Var> {
            let x = tape.dropout(h, p, mode, rng)?;
            let logits = linear(tape, &format!("{PREFIX}.{name}"), x)?;
            Ok(tape.softmax(logits)?)
        };
        Ok(DetectorHeads {
            p_sub: head("subject")?,
            p_rel: head("relation")?,
            p_obj: head("object")?,
        })
    }

    /// Weighted sum of the three cross-entropies, without the L2 term.
    pub fn classification_loss(&self, tape: &mut Tape<'_>, heads: DetectorHeads, target: FactIndices) -> Result<Var> {
        let c = &self.config;
        let ls = tape.cross_entropy(heads.p_sub, target.subject)?;
        let lr = tape.cross_entropy(heads.p_rel, target.relation)?;
        let lo = tape.cross_entropy(heads.p_obj, target.object)?;
        let ls = tape.scale(ls, c.lambda_subject);
        let lr = tape.scale(lr, c.lambda_relation);
        let lo = tape.scale(lo, c.lambda_object);
        let sum = tape.add(ls, lr)?;
        Ok(tape.add(sum, lo)?)
    }

    /// Full loss including `λ_w · Σ W²` over regularizable parameters.
    pub fn loss(&self, tape: &mut Tape<'_>, heads: DetectorHeads, target: FactIndices) -> Result<Var> {
        let mut total = self.classification_loss(tape, heads, target)?;
        if self.config.lambda_l2 > 0.0 {
            let store = tape.store();
            let names: Vec<String> = store
                .iter()
                .filter(|(_, p)| p.regularizable)
                .map(|(n, _)| n.to_string())
                .collect();
            for name in names {
                let w = tape.param(&name)?;
                let sq = tape.sum_squares(w);
                let sq = tape.scale(sq, self.config.lambda_l2);
                total = tape.add(total, sq)?;
            }
        }
        Ok(total)
    }

    pub fn output(&self, tape: &Tape<'_>, heads: DetectorHeads) -> DetectorOutput {
        DetectorOutput {
            p_sub: tape.value(heads.p_sub).to_vec(),
            p_rel: tape.value(heads.p_rel).to_vec(),
            p_obj: tape.value(heads.p_obj).to_vec(),
        }
    }

    /// Eval-mode prediction from a question and pooled image vector.
    pub fn predict(&self, store: &ParameterStore, question: &TokenSequence, v_pooled: &DenseArray) -> Result<DetectorOutput> {
        let mut tape = Tape::new(store);
        let v = tape.input(v_pooled);
        let q = self.encode_question(&mut tape, question)?;
        let heads = self.forward(&mut tape, v, q, Mode::Eval, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        Ok(self.output(&tape, heads))
    }
}

/// Plain-array loss on a detector output, including the L2 term over `store`.
pub fn detector_loss(out: &DetectorOutput, target: FactIndices, store: &ParameterStore, config: &DetectorConfig) -> Result<f64> {
    let ce = |p: &[f64], t: usize| -> Result<f64> {
        if t >= p.len() {
            return Err(CoreError::Nn(rvqa_nn::NnError::Index { index: t, len: p.len() }));
        }
        Ok(-p[t].max(rvqa_nn::tape::PROB_FLOOR).ln())
    };
    Ok(config.lambda_subject * ce(&out.p_sub, target.subject)?
        + config.lambda_relation * ce(&out.p_rel, target.relation)?
        + config.lambda_object * ce(&out.p_obj, target.object)?
        + config.lambda_l2 * store.l2_penalty())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn head_order(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    idx
}

/// Per-head candidates for a joint top-K: the K best entries plus any
/// entry within rounding distance of the K-th, since summing can merge
/// probabilities that differ in the last bits.
fn head_candidates(p: &[f64], k: usize, mode: FactScoreMode) -> Vec<usize> {
    let order = head_order(p);
    let k = k.min(p.len());
    let kth = p[order[k - 1]];
    let slack = match mode {
        FactScoreMode::ProbabilitySum => 48.0 * f64::EPSILON,
        FactScoreMode::LogProbabilitySum => kth * 1e-12,
    };
    let mut out = order[..k].to_vec();
    out.extend(order[k..].iter().copied().take_while(|&i| p[i] >= kth - slack));
    out
}

pub fn fact_score(out: &DetectorOutput, t: FactIndices, mode: FactScoreMode) -> f64 {
    let (s, r, o) = (out.p_sub[t.subject], out.p_rel[t.relation], out.p_obj[t.object]);
    match mode {
        FactScoreMode::ProbabilitySum => s + r + o,
        FactScoreMode::LogProbabilitySum => {
            let f = rvqa_nn::tape::PROB_FLOOR;
            s.max(f).ln() + r.max(f).ln() + o.max(f).ln()
        }
    }
}

/// Descending by score, ties by (subject, relation, object) ascending.
pub fn compare_scored(a: &ScoredFact, b: &ScoredFact) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.triple.cmp(&b.triple))
}

/// Exact top-K facts by summed score. Because the score is a sum of
/// independent per-head terms, any triple in the joint top-K uses only
/// entries from each head's own top-K, so enumerating those products
/// suffices. K larger than the number of triples is clamped.
pub fn top_k_facts(out: &DetectorOutput, k: usize, mode: FactScoreMode) -> Result<Vec<ScoredFact>> {
    if k == 0 {
        return Err(CoreError::Input("top-k needs K ≥ 1".into()));
    }
    let sizes = [out.p_sub.len(), out.p_rel.len(), out.p_obj.len()];
    if sizes.contains(&0) {
        return Err(CoreError::Input("detector output has an empty head".into()));
    }
    let total: usize = sizes.iter().product();
    if sizes.iter().any(|&n| k > n) {
        log::debug!("top-k K={k} exceeds a head size {sizes:?}; per-head lists clamped");
    }
    let subs = head_candidates(&out.p_sub, k, mode);
    let rels = head_candidates(&out.p_rel, k, mode);
    let objs = head_candidates(&out.p_obj, k, mode);
    let mut all = Vec::with_capacity(subs.len() * rels.len() * objs.len());
    for &s in &subs {
        for &r in &rels {
            for &o in &objs {
                let triple = FactIndices {
                    subject: s,
                    relation: r,
                    object: o,
                };
                all.push(ScoredFact {
                    triple,
                    score: fact_score(out, triple, mode),
                });
            }
        }
    }
    all.sort_by(compare_scored);
    all.truncate(k.min(total));
    Ok(all)
}

/// Softmax of raw logits for each head; test and fixture helper.
pub fn output_from_logits(sub: &[f64], rel: &[f64], obj: &[f64]) -> Result<DetectorOutput> {
    Ok(DetectorOutput {
        p_sub: kernels::softmax(sub)?,
        p_rel: kernels::softmax(rel)?,
        p_obj: kernels::softmax(obj)?,
    })
}
