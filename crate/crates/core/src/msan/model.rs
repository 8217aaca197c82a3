use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rvqa_nn::layers::{linear, project};
use rvqa_nn::{DenseArray, Mode, ParameterStore, RmsPropConfig, RngState, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::builder::VocabSizes;
use crate::detector::FactIndices;
use crate::encoders::{QuestionEncoder, TokenSequence};
use crate::error::{CoreError, Result};

pub const PREFIX: &str = "msan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Visual attention, semantic attention, additive joint embedding.
    Full,
    /// Question and mean-pooled image fused by addition; no attention, no facts.
    QI,
    /// Question and detector facts only; the question encoding queries the facts.
    QR,
    /// Visual attention only.
    QIAtt,
    /// Full model with uniform weights over facts.
    AvgFact,
    /// Full model with a Hadamard joint embedding.
    MulFusion,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::QI,
        Variant::QR,
        Variant::QIAtt,
        Variant::AvgFact,
        Variant::MulFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::QI => "q_i",
            Variant::QR => "q_r",
            Variant::QIAtt => "q_i_att",
            Variant::AvgFact => "avg_fact",
            Variant::MulFusion => "mul_fusion",
        }
    }

    pub fn uses_facts(self) -> bool {
        !matches!(self, Variant::QI | Variant::QIAtt)
    }

    pub fn uses_visual_attention(self) -> bool {
        !matches!(self, Variant::QI | Variant::QR)
    }

    pub fn uses_image(self) -> bool {
        self != Variant::QR
    }

    fn uses_semantic_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::QR | Variant::MulFusion)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsanConfig {
    pub k: usize,
    pub fact_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub joint_dim: usize,
    pub answers: usize,
    pub image_dim: usize,
    pub question_vocab_size: usize,
    pub fact_vocab: VocabSizes,
    pub variant: Variant,
    pub dropout: f64,
    pub optimizer: RmsPropConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub validation_interval: usize,
    pub patience: usize,
    pub fine_tune_detector: bool,
}

impl Default for MsanConfig {
    fn default() -> Self {
        Self {
            k: 10,
            fact_dim: 900,
            embed_dim: 620,
            hidden_dim: 2400,
            joint_dim: 1200,
            answers: 2000,
            image_dim: 2048,
            question_vocab_size: 20_000,
            fact_vocab: VocabSizes::default(),
            variant: Variant::Full,
            dropout: 0.5,
            optimizer: RmsPropConfig {
                lr: 3e-4,
                momentum: 0.99,
                decay: 0.95,
                weight_decay: 1e-8,
                eps: 1e-8,
            },
            batch_size: 200,
            epochs: 30,
            validation_interval: 10_000,
            patience: 5,
            fine_tune_detector: false,
        }
    }
}

impl MsanConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.k,
            self.fact_dim,
            self.embed_dim,
            self.hidden_dim,
            self.joint_dim,
            self.answers,
            self.image_dim,
            self.question_vocab_size,
            self.fact_vocab.subjects,
            self.fact_vocab.relations,
            self.fact_vocab.objects,
            self.batch_size,
            self.validation_interval,
            self.patience,
        ];
        if dims.contains(&0) {
            return Err(CoreError::Config("msan dimensions, K and intervals must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.fine_tune_detector {
            return Err(CoreError::Config(
                "fine_tune_detector is unsupported: detector facts enter as discrete indices".into(),
            ));
        }
        Ok(())
    }
}

/// Normalised attention weights and the vector they attend to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub weights: Vec<f64>,
    pub attended: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub weights: Var,
    pub attended: Var,
}

impl AttentionVars {
    pub fn record(&self, tape: &Tape<'_>) -> AttentionRecord {
        AttentionRecord {
            weights: tape.value(self.weights).to_vec(),
            attended: tape.value(self.attended).to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MsanForward {
    pub p_ans: Var,
    pub visual: Option<AttentionVars>,
    pub semantic: Option<AttentionVars>,
}

/// Dropout state threaded through a forward pass.
pub struct Dropout<'r, R: Rng + ?Sized> {
    pub p: f64,
    pub mode: Mode,
    pub rng: &'r mut R,
}

impl<R: Rng + ?Sized> Dropout<'_, R> {
    pub fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        Ok(tape.dropout(x, self.p, self.mode, self.rng)?)
    }
}

pub fn register_mlb<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    prefix: &str,
    x_dim: usize,
    y_dim: usize,
    joint_dim: usize,
    rng: &mut R,
) -> Result<()> {
    store.add_matrix(&format!("{prefix}.u"), joint_dim, x_dim, rng)?;
    store.add_matrix(&format!("{prefix}.v"), joint_dim, y_dim, rng)?;
    store.add_linear(&format!("{prefix}.out"), joint_dim, joint_dim, rng)?;
    Ok(())
}

/// Low-rank bilinear pooling `W_p (tanh(U x) ∘ tanh(V y)) + b_p`. When `y`
/// is `[K, n]` the result is `[K, d]` with `x` shared by every row.
pub fn mlb(tape: &mut Tape<'_>, prefix: &str, x: Var, y: Var) -> Result<Var> {
    let ux = project(tape, &format!("{prefix}.u"), x)?;
    let ux = tape.tanh(ux);
    let vy = project(tape, &format!("{prefix}.v"), y)?;
    let vy = tape.tanh(vy);
    let ux = match tape.shape(vy) {
        [rows, _] => {
            let rows = *rows;
            tape.broadcast_rows(ux, rows)?
        }
        _ => ux,
    };
    let joint = tape.mul(ux, vy)?;
    Ok(linear(tape, &format!("{prefix}.out"), joint)?)
}

/// Softmax over the rows of `[K, d]` context vectors via a shared scalar
/// scoring layer.
fn row_attention(tape: &mut Tape<'_>, name: &str, context: Var) -> Result<Var> {
    let rows = tape.shape(context)[0];
    let logits = linear(tape, name, context)?;
    let logits = tape.reshape(logits, &[rows])?;
    Ok(tape.softmax(logits)?)
}

#[derive(Debug, Clone)]
pub struct Msan {
    pub config: MsanConfig,
    encoder: QuestionEncoder,
}

fn name(part: &str) -> String {
    format!("{PREFIX}.{part}")
}

impl Msan {
    pub fn new(config: MsanConfig) -> Result<Self> {
        config.validate()?;
        let encoder = QuestionEncoder::new(
            &name("question"),
            config.question_vocab_size,
            config.embed_dim,
            config.hidden_dim,
        );
        Ok(Self { config, encoder })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Registers only the parameters the configured variant uses.
    pub fn register<R: Rng + ?Sized>(&self, store: &mut ParameterStore, rng: &mut R) -> Result<()> {
        let c = &self.config;
        let v = c.variant;
        let fact_width = 3 * c.fact_dim;
        self.encoder.register(store, rng)?;
        if v.uses_visual_attention() {
            register_mlb(store, &name("vatt.mlb"), c.hidden_dim, c.image_dim, c.joint_dim, rng)?;
            store.add_linear(&name("vatt.logit"), c.joint_dim, 1, rng)?;
        }
        if v.uses_image() {
            store.add_matrix(&name("vproj"), c.hidden_dim, c.image_dim, rng)?;
            store.add_linear(&name("qgate"), c.hidden_dim, c.hidden_dim, rng)?;
        }
        if v.uses_facts() {
            store.add_embedding(&name("fact.subject"), c.fact_vocab.subjects, c.fact_dim, rng)?;
            store.add_embedding(&name("fact.relation"), c.fact_vocab.relations, c.fact_dim, rng)?;
            store.add_embedding(&name("fact.object"), c.fact_vocab.objects, c.fact_dim, rng)?;
            store.add_linear(&name("joint_s"), fact_width, c.hidden_dim, rng)?;
        }
        if v.uses_semantic_attention() {
            register_mlb(store, &name("satt.mlb"), c.hidden_dim, fact_width, c.joint_dim, rng)?;
            store.add_linear(&name("satt.logit"), c.joint_dim, 1, rng)?;
        }
        store.add_linear(&name("joint_v"), c.hidden_dim, c.hidden_dim, rng)?;
        store.add_linear(&name("answer"), c.hidden_dim, c.answers, rng)?;
        Ok(())
    }

    pub fn init_store(&self, seed: u64) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        self.register(&mut store, &mut RngState::new(seed).rng())?;
        Ok(store)
    }

    pub fn encode_question(&self, tape: &mut Tape<'_>, question: &TokenSequence) -> Result<Var> {
        self.encoder.encode(tape, question)
    }

    /// Question-guided attention over `[R, C]` region features, returning
    /// the attention record (attended = ṽ) and `f_v = P ṽ ∘ tanh(W_q q + b_q)`.
    pub fn visual_attention<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        q: Var,
        regions: Var,
        drop: &mut Dropout<'_, R>,
    ) -> Result<(AttentionVars, Var)> {
        let qd = drop.apply(tape, q)?;
        let rd = drop.apply(tape, regions)?;
        let context = mlb(tape, &name("vatt.mlb"), qd, rd)?;
        let context = drop.apply(tape, context)?;
        let weights = row_attention(tape, &name("vatt.logit"), context)?;
        let attended = tape.weighted_row_sum(weights, regions)?;
        let ad = drop.apply(tape, attended)?;
        let pv = project(tape, &name("vproj"), ad)?;
        let gate = linear(tape, &name("qgate"), qd)?;
        let gate = tape.tanh(gate);
        let f_v = tape.mul(pv, gate)?;
        Ok((AttentionVars { weights, attended }, f_v))
    }

    /// `[K, 3n]` rows of concatenated subject, relation and object embeddings.
    pub fn embed_facts(&self, tape: &mut Tape<'_>, facts: &[FactIndices]) -> Result<Var> {
        if facts.is_empty() {
            return Err(CoreError::Input("no candidate facts".into()));
        }
        let mut rows = Vec::with_capacity(facts.len());
        for f in facts {
            let s = tape.param_row(&name("fact.subject"), f.subject)?;
            let r = tape.param_row(&name("fact.relation"), f.relation)?;
            let o = tape.param_row(&name("fact.object"), f.object)?;
            rows.push(tape.concat(&[s, r, o])?);
        }
        Ok(tape.stack_rows(&rows)?)
    }

    /// Attention over fact rows queried by `query`; attended = f_s.
    pub fn semantic_attention<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        query: Var,
        facts: Var,
        drop: &mut Dropout<'_, R>,
    ) -> Result<AttentionVars> {
        if tape.shape(facts).first() == Some(&0) {
            return Err(CoreError::Input("semantic attention over zero facts".into()));
        }
        let qd = drop.apply(tape, query)?;
        let fd = drop.apply(tape, facts)?;
        let context = mlb(tape, &name("satt.mlb"), qd, fd)?;
        let context = drop.apply(tape, context)?;
        let weights = row_attention(tape, &name("satt.logit"), context)?;
        let attended = tape.weighted_row_sum(weights, facts)?;
        Ok(AttentionVars { weights, attended })
    }

    /// Uniform `1/K` weights over the rows of `[K, n]`.
    pub fn uniform_attention(&self, tape: &mut Tape<'_>, facts: Var) -> Result<AttentionVars> {
        let k = tape.shape(facts)[0];
        let weights = tape.input(&DenseArray::filled(&[k], 1.0 / k as f64));
        let attended = tape.weighted_row_sum(weights, facts)?;
        Ok(AttentionVars { weights, attended })
    }

    /// Answer distribution from the visual-side vector and, for variants
    /// with a fact path, the attended fact vector.
    pub fn joint_answer<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        f_v: Var,
        f_s: Option<Var>,
        drop: &mut Dropout<'_, R>,
    ) -> Result<Var> {
        let fv = drop.apply(tape, f_v)?;
        let hv = linear(tape, &name("joint_v"), fv)?;
        let hv = tape.tanh(hv);
        let h = match (self.variant().uses_facts(), f_s) {
            (true, Some(f_s)) => {
                let fs = drop.apply(tape, f_s)?;
                let hs = linear(tape, &name("joint_s"), fs)?;
                let hs = tape.tanh(hs);
                if self.variant() == Variant::MulFusion {
                    tape.mul(hv, hs)?
                } else {
                    tape.add(hv, hs)?
                }
            }
            (false, _) => hv,
            (true, None) => {
                return Err(CoreError::Input(format!(
                    "variant {} needs an attended fact vector",
                    self.variant()
                )))
            }
        };
        let h = drop.apply(tape, h)?;
        let logits = linear(tape, &name("answer"), h)?;
        Ok(tape.softmax(logits)?)
    }

    /// Full composition for the configured variant. `regions` is `[R, C]`;
    /// `facts` are the detector's candidates and are ignored by variants
    /// without a fact path.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        question: &TokenSequence,
        regions: &DenseArray,
        facts: &[FactIndices],
        drop: &mut Dropout<'_, R>,
    ) -> Result<MsanForward> {
        let v = self.variant();
        let q = self.encode_question(tape, question)?;
        let (visual, f_v) = match v {
            Variant::QR => (None, q),
            Variant::QI => {
                let r = tape.input(regions);
                let att = self.uniform_attention(tape, r)?;
                let qd = drop.apply(tape, q)?;
                let ad = drop.apply(tape, att.attended)?;
                let pv = project(tape, &name("vproj"), ad)?;
                let pv = tape.tanh(pv);
                let gate = linear(tape, &name("qgate"), qd)?;
                let gate = tape.tanh(gate);
                (Some(att), tape.add(pv, gate)?)
            }
            _ => {
                let r = tape.input(regions);
                let (att, f_v) = self.visual_attention(tape, q, r, drop)?;
                (Some(att), f_v)
            }
        };
        let semantic = if v.uses_facts() {
            let f_t = self.embed_facts(tape, facts)?;
            Some(if v == Variant::AvgFact {
                self.uniform_attention(tape, f_t)?
            } else {
                self.semantic_attention(tape, f_v, f_t, drop)?
            })
        } else {
            None
        };
        let p_ans = self.joint_answer(tape, f_v, semantic.map(|s| s.attended), drop)?;
        Ok(MsanForward {
            p_ans,
            visual,
            semantic,
        })
    }
}
