//! Built-in acceptance checks shared by the `selftest` command and the
//! acceptance test target.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rvqa_nn::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
use rvqa_nn::{checkpoint, DenseArray, GruCell, Mode, NnError, ParameterStore, RngState, SeededRng, Tape, Var};
use serde::Serialize;

use crate::builder::{build_dataset, to_jsonl, AliasTable, BuildConfig, Split, VocabSizes};
use crate::detector::{
    detector_loss, fact_score, output_from_logits, top_k_facts, train_detector, DetectorConfig, DetectorOutput,
    FactDetector, FactIndices, FactScoreMode, ScoredFact,
};
use crate::encoders::features::{decode_features, encode_features};
use crate::encoders::{synthetic_features, FeatureShape, TokenSequence};
use crate::error::CoreError;
use crate::fixtures::{annotation_corpus, detector_fixture, msan_fixture};
use crate::harness::data::{Answers, VqaExample};
use crate::harness::metrics::{vqa_accuracy, Metric};
use crate::harness::report::evaluate_predictions;
use crate::msan::{answer_accuracy, mlb, register_mlb, train_msan, Dropout, Msan, MsanConfig, Variant};

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub detail: String,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {:<28} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.seconds,
            self.detail
        )
    }
}

type Check = std::result::Result<String, String>;

pub const CRITERIA: [(u8, &str); 9] = [
    (1, "gradient integrity"),
    (2, "top-k fact oracle"),
    (3, "detector overfit"),
    (4, "answer model overfit"),
    (5, "loss arithmetic"),
    (6, "metric exactness"),
    (7, "builder determinism"),
    (8, "attention normalisation"),
    (9, "serialization"),
];

/// Runs one numbered check (1 to 9).
pub fn run_criterion(id: u8) -> Option<CriterionResult> {
    let (_, name) = *CRITERIA.iter().find(|(i, _)| *i == id)?;
    let (check, budget): (fn() -> Check, f64) = match id {
        1 => (gradient_integrity, 60.0),
        2 => (top_k_oracle, 10.0),
        3 => (detector_overfit, 120.0),
        4 => (msan_overfit, 300.0),
        5 => (loss_arithmetic, f64::INFINITY),
        6 => (metric_exactness, f64::INFINITY),
        7 => (builder_determinism, f64::INFINITY),
        8 => (attention_normalisation, f64::INFINITY),
        _ => (serialization, f64::INFINITY),
    };
    let start = Instant::now();
    let outcome = check();
    let seconds = start.elapsed().as_secs_f64();
    let (mut passed, mut detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    if seconds >= budget {
        passed = false;
        detail = format!("{detail}; exceeded {budget} s budget");
    }
    Some(CriterionResult {
        id,
        name,
        passed,
        seconds,
        detail,
    })
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().filter_map(|(id, _)| run_criterion(*id)).collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_array(rng: &mut SeededRng, shape: &[usize], scale: f64) -> DenseArray {
    let n = shape.iter().product();
    DenseArray::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape matches")
}

fn nn_err(e: CoreError) -> NnError {
    NnError::Config(e.to_string())
}

fn eval_dropout(rng: &mut SeededRng) -> Dropout<'_, SeededRng> {
    Dropout {
        p: 0.0,
        mode: Mode::Eval,
        rng,
    }
}

// ---- 1 -------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

fn check_case<F>(name: &'static str, store: &ParameterStore, tolerance: f64, f: F) -> Result<GradCase, String>
where
    F: Fn(&mut Tape<'_>) -> rvqa_nn::Result<Var>,
{
    let report = grad_check(store, f, DEFAULT_STEP, tolerance).map_err(|e| format!("{name}: {e}"))?;
    Ok(GradCase {
        name,
        tolerance,
        report,
    })
}

fn desk_msan(variant: Variant) -> MsanConfig {
    MsanConfig {
        k: 3,
        fact_dim: 4,
        embed_dim: 4,
        hidden_dim: 6,
        joint_dim: 5,
        answers: 5,
        image_dim: 8,
        question_vocab_size: 7,
        fact_vocab: VocabSizes {
            subjects: 5,
            relations: 3,
            objects: 6,
        },
        variant,
        dropout: 0.0,
        ..MsanConfig::default()
    }
}

fn desk_facts(rng: &mut SeededRng, k: usize, sizes: VocabSizes) -> Vec<FactIndices> {
    (0..k)
        .map(|_| FactIndices {
            subject: rng.gen_range(0..sizes.subjects),
            relation: rng.gen_range(0..sizes.relations),
            object: rng.gen_range(0..sizes.objects),
        })
        .collect()
}

/// Finite-difference checks of every layer type and of the full answer
/// model in each variant, at desk shapes.
pub fn gradient_cases() -> Result<Vec<GradCase>, String> {
    let single = 1e-5;
    let mut rng = RngState::new(2024).rng();
    let mut cases = Vec::new();

    let mut store = ParameterStore::new();
    store.add_linear("lin", 5, 4, &mut rng).map_err(err)?;
    store.insert("x", random_array(&mut rng, &[5], 1.0), false).map_err(err)?;
    let w = random_array(&mut rng, &[4], 1.0);
    cases.push(check_case("linear", &store, single, |t| {
        let x = t.param("x")?;
        let y = rvqa_nn::layers::linear(t, "lin", x)?;
        let wv = t.input(&w);
        let s = t.mul(y, wv)?;
        Ok(t.sum_squares(s))
    })?);

    let mut store = ParameterStore::new();
    store.insert("x", random_array(&mut rng, &[6], 2.0), false).map_err(err)?;
    let w = random_array(&mut rng, &[6], 1.0);
    cases.push(check_case("tanh", &store, single, |t| {
        let x = t.param("x")?;
        let y = t.tanh(x);
        let wv = t.input(&w);
        let s = t.mul(y, wv)?;
        Ok(t.sum_squares(s))
    })?);
    cases.push(check_case("sigmoid", &store, single, |t| {
        let x = t.param("x")?;
        let y = t.sigmoid(x);
        let wv = t.input(&w);
        let s = t.mul(y, wv)?;
        Ok(t.sum_squares(s))
    })?);

    let mut store = ParameterStore::new();
    store.insert("logits", random_array(&mut rng, &[7], 3.0), false).map_err(err)?;
    cases.push(check_case("softmax+cross-entropy", &store, single, |t| {
        let l = t.param("logits")?;
        let p = t.softmax(l)?;
        t.cross_entropy(p, 4)
    })?);

    let cell = GruCell::new("gru", 3, 4);
    let mut store = ParameterStore::new();
    cell.register(&mut store, &mut rng).map_err(err)?;
    for gate in ["r", "z", "h"] {
        store.get_mut(&format!("gru.b_{gate}")).map_err(err)?.value = random_array(&mut rng, &[4], 0.5);
    }
    let x = random_array(&mut rng, &[3], 1.0);
    let h0 = random_array(&mut rng, &[4], 0.5);
    cases.push(check_case("GRU step", &store, single, |t| {
        let xv = t.input(&x);
        let hv = t.input(&h0);
        let h = cell.step(t, xv, hv)?;
        let h = t.tanh(h);
        Ok(t.sum_squares(h))
    })?);

    let mut store = ParameterStore::new();
    register_mlb(&mut store, "m", 4, 5, 3, &mut rng).map_err(err)?;
    let (mx, my) = (random_array(&mut rng, &[4], 1.0), random_array(&mut rng, &[5], 1.0));
    cases.push(check_case("MLB", &store, single, |t| {
        let (xv, yv) = (t.input(&mx), t.input(&my));
        let c = mlb(t, "m", xv, yv).map_err(nn_err)?;
        let p = t.softmax(c)?;
        t.cross_entropy(p, 1)
    })?);

    let config = desk_msan(Variant::Full);
    let model = Msan::new(config.clone()).map_err(err)?;
    let store = model.init_store(7).map_err(err)?;
    let regions = random_array(&mut rng, &[4, 8], 1.0);
    let question = TokenSequence::new(vec![1, 5, 2, 6], "q", 7).map_err(err)?;
    let facts = desk_facts(&mut rng, 3, config.fact_vocab);
    let query = random_array(&mut rng, &[model.config.hidden_dim], 1.0);
    let (f_v, f_s) = (
        random_array(&mut rng, &[model.config.hidden_dim], 1.0),
        random_array(&mut rng, &[3 * model.config.fact_dim], 1.0),
    );

    cases.push(check_case("visual attention", &store, single, |t| {
        let mut r = RngState::new(0).rng();
        let q = model.encode_question(t, &question).map_err(nn_err)?;
        let rv = t.input(&regions);
        let (_, f) = model.visual_attention(t, q, rv, &mut eval_dropout(&mut r)).map_err(nn_err)?;
        Ok(t.sum_squares(f))
    })?);
    cases.push(check_case("semantic attention", &store, single, |t| {
        let mut r = RngState::new(0).rng();
        let q = t.input(&query);
        let rows = model.embed_facts(t, &facts).map_err(nn_err)?;
        let att = model.semantic_attention(t, q, rows, &mut eval_dropout(&mut r)).map_err(nn_err)?;
        Ok(t.sum_squares(att.attended))
    })?);
    cases.push(check_case("joint embedding", &store, single, |t| {
        let mut r = RngState::new(0).rng();
        let (v, s) = (t.input(&f_v), t.input(&f_s));
        let p = model.joint_answer(t, v, Some(s), &mut eval_dropout(&mut r)).map_err(nn_err)?;
        t.cross_entropy(p, 2)
    })?);
    for variant in Variant::ALL {
        let config = desk_msan(variant);
        let model = Msan::new(config).map_err(err)?;
        let store = model.init_store(8).map_err(err)?;
        let name = match variant {
            Variant::Full => "full model",
            Variant::QI => "full model (q_i)",
            Variant::QR => "full model (q_r)",
            Variant::QIAtt => "full model (q_i_att)",
            Variant::AvgFact => "full model (avg_fact)",
            Variant::MulFusion => "full model (mul_fusion)",
        };
        cases.push(check_case(name, &store, 1e-4, |t| {
            let mut r = RngState::new(0).rng();
            let out = model
                .forward(t, &question, &regions, &facts, &mut eval_dropout(&mut r))
                .map_err(nn_err)?;
            t.cross_entropy(out.p_ans, 2)
        })?);
    }
    Ok(cases)
}

fn gradient_integrity() -> Check {
    let cases = gradient_cases()?;
    let failed: Vec<String> = cases
        .iter()
        .filter(|c| !c.report.passed)
        .map(|c| format!("{} {:.2e} >= {:.0e}", c.name, c.report.max_rel_error, c.tolerance))
        .collect();
    ensure(failed.is_empty(), || failed.join(", "))?;
    let worst = cases
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .expect("cases are non-empty");
    Ok(format!(
        "{} checks, worst {} at {:.2e}",
        cases.len(),
        worst.name,
        worst.report.max_rel_error
    ))
}

// ---- 2 -------------------------------------------------------------------

fn brute_force(out: &DetectorOutput, k: usize, mode: FactScoreMode) -> Vec<ScoredFact> {
    let mut all = Vec::new();
    for subject in 0..out.p_sub.len() {
        for relation in 0..out.p_rel.len() {
            for object in 0..out.p_obj.len() {
                let triple = FactIndices {
                    subject,
                    relation,
                    object,
                };
                all.push(ScoredFact {
                    triple,
                    score: fact_score(out, triple, mode),
                });
            }
        }
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.triple.cmp(&b.triple)));
    all.truncate(k);
    all
}

fn top_k_oracle() -> Check {
    let mut rng = RngState::new(77).rng();
    let cases = 150;
    for case in 0..cases {
        let sizes: Vec<usize> = (0..3).map(|_| rng.gen_range(1..=12)).collect();
        let mut logits = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    // Every third case uses coarse logits to force score ties.
                    if case % 3 == 0 {
                        rng.gen_range(0..3) as f64
                    } else {
                        rng.gen_range(-3.0..3.0)
                    }
                })
                .collect()
        };
        let (a, b, c) = (logits(sizes[0]), logits(sizes[1]), logits(sizes[2]));
        let out = output_from_logits(&a, &b, &c).map_err(err)?;
        let k = rng.gen_range(1..=12);
        for mode in [FactScoreMode::LogProbabilitySum, FactScoreMode::ProbabilitySum] {
            let got = top_k_facts(&out, k, mode).map_err(err)?;
            let want = brute_force(&out, k, mode);
            ensure(got.len() == want.len(), || format!("case {case}: length {} vs {}", got.len(), want.len()))?;
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                ensure(g.triple == w.triple && g.score.to_bits() == w.score.to_bits(), || {
                    format!("case {case} rank {i}: {g:?} vs {w:?}")
                })?;
            }
        }
    }
    Ok(format!("{cases} random outputs, both score modes, exact match"))
}

// ---- 3 -------------------------------------------------------------------

fn detector_overfit() -> Check {
    let fx = detector_fixture(1).map_err(err)?;
    let det = FactDetector::new(fx.config.clone()).map_err(err)?;
    let run = train_detector(&det, &fx.examples, &[], &fx.pooled, 1).map_err(err)?;
    let reached = run.log.iter().find(|e| e.train.min_element_acc() >= 0.95);
    match reached {
        Some(e) => Ok(format!(
            "{} examples, min head accuracy {:.3} at epoch {} of {}",
            fx.examples.len(),
            e.train.min_element_acc(),
            e.epoch,
            fx.config.epochs
        )),
        None => Err(format!(
            "final min head accuracy {:.3}",
            run.log.last().map(|e| e.train.min_element_acc()).unwrap_or(0.0)
        )),
    }
}

// ---- 4 -------------------------------------------------------------------

fn msan_overfit() -> Check {
    let train = |variant| -> Result<(f64, usize), String> {
        let fx = msan_fixture(1, variant).map_err(err)?;
        let model = Msan::new(fx.config.clone()).map_err(err)?;
        let run = train_msan(&model, &fx.examples, &[], &fx.regions, 1).map_err(err)?;
        let acc = answer_accuracy(&model, &run.best, &fx.examples, &fx.regions).map_err(err)?;
        Ok((acc, fx.examples.len()))
    };
    let (full, n) = train(Variant::Full)?;
    let (q_i, _) = train(Variant::QI)?;
    ensure(full == 1.0, || format!("full variant reached {full:.3} on {n} examples"))?;
    ensure(q_i <= full, || format!("q_i {q_i:.3} exceeds full {full:.3}"))?;
    Ok(format!("{n} examples, full {full:.3}, q_i {q_i:.3}"))
}

// ---- 5 -------------------------------------------------------------------

fn loss_arithmetic() -> Check {
    let out = output_from_logits(&[0.0; 4], &[0.0; 4], &[0.0; 4]).map_err(err)?;
    let config = DetectorConfig {
        lambda_l2: 0.0,
        ..DetectorConfig::default()
    };
    let weights = config.lambda_subject + config.lambda_relation + config.lambda_object;
    ensure(weights == 3.0, || format!("head weights sum to {weights}"))?;
    let target = FactIndices {
        subject: 0,
        relation: 1,
        object: 3,
    };
    let loss = detector_loss(&out, target, &ParameterStore::new(), &config).map_err(err)?;
    let expected = 3.0 * 4f64.ln();
    ensure((loss - expected).abs() < 1e-9, || format!("loss {loss} vs {expected}"))?;
    Ok(format!("loss {loss:.12} = 3 ln 4"))
}

// ---- 6 -------------------------------------------------------------------

fn vqa(id: &str, kind: &str, answers: &[&str]) -> VqaExample {
    VqaExample {
        question_id: id.into(),
        image_id: "img".into(),
        question: "q".into(),
        answers: Answers::Many(answers.iter().map(|s| s.to_string()).collect()),
        choices: None,
        question_type: kind.into(),
    }
}

fn metric_exactness() -> Check {
    for n in 0..=10usize {
        let mut answers = vec!["yes".to_string(); n];
        answers.extend(std::iter::repeat_n("no".to_string(), 10 - n));
        let got = vqa_accuracy("yes", &answers);
        let want = (n as f64 / 3.0).min(1.0);
        ensure(got == want, || format!("{n} matches: {got} vs {want}"))?;
    }
    let examples = [
        vqa("1", "yes/no", &["yes", "yes", "yes", "no"]),
        vqa("2", "yes/no", &["no", "no", "yes"]),
        vqa("3", "number", &["2", "2", "3"]),
        vqa("4", "other", &["red", "blue"]),
    ];
    let preds: Vec<String> = ["Yes", "yes", "2 ", "green"].iter().map(|s| s.to_string()).collect();
    let acc = evaluate_predictions(&examples, &preds, Metric::VqaVote).map_err(err)?;
    let expect = [("yes/no", 2.0 / 3.0), ("number", 2.0 / 3.0), ("other", 0.0)];
    ensure((acc.all - 0.5).abs() < 1e-12, || format!("overall {}", acc.all))?;
    for (kind, want) in expect {
        let got = acc.per_type.get(kind).copied().unwrap_or(f64::NAN);
        ensure((got - want).abs() < 1e-12, || format!("{kind}: {got} vs {want}"))?;
    }
    Ok("min(1, n/3) exact for n = 0..10; hand fixture overall 0.5".into())
}

// ---- 7 -------------------------------------------------------------------

fn builder_determinism() -> Check {
    let corpus = annotation_corpus(50, 4, 11);
    let n_qa: usize = corpus.iter().map(|a| a.qa.len()).sum();
    let aliases = AliasTable::default();
    let build = |threshold: f64| {
        let config = BuildConfig {
            threshold,
            ..BuildConfig::default()
        };
        build_dataset(&corpus, &aliases, &config, 5).map_err(err)
    };
    let mut sizes = Vec::new();
    for t in [0.1, 0.2, 0.3, 0.4] {
        sizes.push(build(t)?.examples.len());
    }
    ensure(sizes.windows(2).all(|w| w[1] <= w[0]), || format!("sizes {sizes:?} increase"))?;
    let (a, b) = (build(0.3)?, build(0.3)?);
    ensure(to_jsonl(&a.examples) == to_jsonl(&b.examples), || "same seed gave different JSONL".into())?;
    let n = a.examples.len();
    ensure(n > 0, || "no examples at threshold 0.3".into())?;
    let count = |s: Split| a.examples.iter().filter(|e| e.split == s).count() as f64;
    for (split, share) in [(Split::Train, 0.6), (Split::Dev, 0.2), (Split::Test, 0.2)] {
        let c = count(split);
        ensure((c - share * n as f64).abs() <= 1.0, || format!("{split:?} has {c} of {n}"))?;
    }
    Ok(format!("{n_qa} QA pairs, sizes {sizes:?}, {n} kept at 0.3"))
}

// ---- 8 -------------------------------------------------------------------

fn attention_normalisation() -> Check {
    let mut config = desk_msan(Variant::Full);
    config.fact_dim = 6;
    config.hidden_dim = 8;
    config.joint_dim = 8;
    let model = Msan::new(config.clone()).map_err(err)?;
    let passes = 120;
    for seed in 0..passes {
        let store = model.init_store(seed).map_err(err)?;
        let mut rng = RngState::new(seed).rng();
        let k = rng.gen_range(1..=6);
        let regions = random_array(&mut rng, &[9, 8], 1.0);
        let mut toks: Vec<usize> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..7)).collect();
        toks.push(1);
        let q = TokenSequence::new(toks, "q", 7).map_err(err)?;
        let facts = desk_facts(&mut rng, k, config.fact_vocab);
        let p = model.predict(&store, &q, &regions, &facts).map_err(err)?;
        let (v, s) = (p.visual.ok_or("missing visual")?, p.semantic.ok_or("missing semantic")?);
        for w in [&v.weights, &s.weights] {
            let sum: f64 = w.iter().sum();
            ensure(w.iter().all(|x| *x >= 0.0) && (sum - 1.0).abs() < 1e-6, || {
                format!("seed {seed}: weights {w:?}")
            })?;
        }
    }

    let store = model.init_store(50).map_err(err)?;
    let mut rng = RngState::new(51).rng();
    let query = random_array(&mut rng, &[config.hidden_dim], 1.0);
    let semantic = |rows: &DenseArray| -> Result<(Vec<f64>, Vec<f64>), String> {
        let mut tape = Tape::new(&store);
        let mut r = RngState::new(0).rng();
        let q = tape.input(&query);
        let f = tape.input(rows);
        let att = model
            .semantic_attention(&mut tape, q, f, &mut eval_dropout(&mut r))
            .map_err(err)?
            .record(&tape);
        Ok((att.weights, att.attended))
    };
    let width = 3 * config.fact_dim;
    for trial in 0..20 {
        let rows = random_array(&mut rng, &[5, width], 1.0);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| rows.row(i).to_vec()).collect();
        let permuted = DenseArray::new(vec![5, width], permuted).map_err(err)?;
        let (wa, fa) = semantic(&rows)?;
        let (wb, fb) = semantic(&permuted)?;
        for (j, &i) in perm.iter().enumerate() {
            ensure((wb[j] - wa[i]).abs() < 1e-12, || format!("trial {trial}: weight {j} moved"))?;
        }
        ensure(fa.iter().zip(&fb).all(|(x, y)| (x - y).abs() < 1e-12), || {
            format!("trial {trial}: attended vector changed")
        })?;
    }
    Ok(format!("{passes} forward passes normalised; 20 permutations invariant"))
}

// ---- 9 -------------------------------------------------------------------

fn is_format(e: &CoreError) -> bool {
    matches!(e, CoreError::Format { .. } | CoreError::Nn(NnError::Format { .. }))
}

fn serialization() -> Check {
    let model = Msan::new(desk_msan(Variant::Full)).map_err(err)?;
    let store = model.init_store(3).map_err(err)?;
    let config = serde_json::json!({"kind": "selftest", "seed": 3});
    let bytes = checkpoint::encode_checkpoint(&config, &store).map_err(err)?;
    let (cfg, loaded) = checkpoint::decode_checkpoint(&bytes).map_err(err)?;
    ensure(cfg == config, || "checkpoint config changed".into())?;
    let same_bits = store.len() == loaded.len()
        && store.iter().zip(loaded.iter()).all(|((na, a), (nb, b))| {
            na == nb
                && a.value.shape() == b.value.shape()
                && a.value.values().iter().zip(b.value.values()).all(|(x, y)| x.to_bits() == y.to_bits())
        });
    ensure(same_bits, || "checkpoint values changed".into())?;
    ensure(checkpoint::encode_checkpoint(&cfg, &loaded).map_err(err)? == bytes, || {
        "checkpoint re-encoding differs".into()
    })?;
    let mut bad = bytes.clone();
    bad[0] = b'X';
    let e = checkpoint::decode_checkpoint(&bad).map(|_| ()).map_err(CoreError::from);
    ensure(matches!(&e, Err(e) if is_format(e)), || format!("corrupt checkpoint magic: {e:?}"))?;
    let e = checkpoint::decode_checkpoint(&bytes[..bytes.len() - 3]).map(|_| ()).map_err(CoreError::from);
    ensure(matches!(&e, Err(e) if is_format(e)), || format!("truncated checkpoint: {e:?}"))?;

    let shape = FeatureShape::new(16, 3, 3).map_err(err)?;
    let map = synthetic_features("img0001", shape);
    let encoded = encode_features(&map);
    let decoded = decode_features(&encoded, "selftest").map_err(err)?;
    ensure(
        decoded.values().iter().zip(map.values()).all(|(a, b)| a.to_bits() == b.to_bits()),
        || "feature values changed".into(),
    )?;
    ensure(encode_features(&decoded) == encoded, || "feature re-encoding differs".into())?;
    let mut bad = encoded.clone();
    bad[4] = 99;
    let e = decode_features(&bad, "selftest").map(|_| ());
    ensure(matches!(&e, Err(e) if is_format(e)), || format!("bad feature version: {e:?}"))?;
    let e = decode_features(&encoded[..encoded.len() - 1], "selftest").map(|_| ());
    ensure(matches!(&e, Err(e) if is_format(e)), || format!("truncated features: {e:?}"))?;
    Ok(format!("{} checkpoint bytes and {} feature bytes round-trip", bytes.len(), encoded.len()))
}
