use proptest::prelude::*;
use rand::Rng;
use rvqa_core::builder::VocabSizes;
use rvqa_core::detector::*;
use rvqa_core::encoders::{QuestionVocab, TokenSequence};
use rvqa_core::fixtures::detector_fixture;
use rvqa_nn::gradcheck::{grad_check, DEFAULT_STEP};
use rvqa_nn::{DenseArray, Mode, ParameterStore, RngState, Tape};

fn toy_config() -> DetectorConfig {
    DetectorConfig {
        image_dim: 5,
        question_vocab_size: 6,
        embed_dim: 3,
        question_dim: 4,
        common_dim: 4,
        vocab: VocabSizes {
            subjects: 4,
            relations: 4,
            objects: 4,
        },
        dropout: 0.0,
        lambda_l2: 1e-3,
        ..DetectorConfig::default()
    }
}

fn random_vec(seed: u64, n: usize) -> DenseArray {
    let mut rng = RngState::new(seed).rng();
    DenseArray::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn question(tokens: &[usize], vocab: usize) -> TokenSequence {
    TokenSequence::new(tokens.to_vec(), "q", vocab).unwrap()
}

fn zeroed(store: &ParameterStore) -> ParameterStore {
    let mut s = store.clone();
    for (_, p) in s.iter_mut() {
        p.value.fill(0.0);
    }
    s
}

fn random_output(rng: &mut impl Rng, sizes: [usize; 3]) -> DetectorOutput {
    let mut logits = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect() };
    let (a, b, c) = (logits(sizes[0]), logits(sizes[1]), logits(sizes[2]));
    output_from_logits(&a, &b, &c).unwrap()
}

fn brute_force(out: &DetectorOutput, k: usize, mode: FactScoreMode) -> Vec<ScoredFact> {
    let mut all = Vec::new();
    for s in 0..out.p_sub.len() {
        for r in 0..out.p_rel.len() {
            for o in 0..out.p_obj.len() {
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
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.triple.cmp(&b.triple)));
    all.truncate(k);
    all
}

#[test]
fn zero_parameters_give_uniform_heads() {
    let det = FactDetector::new(toy_config()).unwrap();
    let store = zeroed(&det.init_store(1).unwrap());
    let out = det.predict(&store, &question(&[1, 2], 6), &random_vec(3, 5)).unwrap();
    for p in [&out.p_sub, &out.p_rel, &out.p_obj] {
        assert!(p.iter().all(|x| (x - 0.25).abs() < 1e-15));
    }
}

#[test]
fn forward_is_deterministic_and_normalised() {
    let det = FactDetector::new(toy_config()).unwrap();
    let q = question(&[1, 4, 2], 6);
    let v = random_vec(9, 5);
    let a = det.predict(&det.init_store(5).unwrap(), &q, &v).unwrap();
    let b = det.predict(&det.init_store(5).unwrap(), &q, &v).unwrap();
    assert_eq!(a, b);
    for p in [&a.p_sub, &a.p_rel, &a.p_obj] {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn end_to_end_gradient_check() {
    let det = FactDetector::new(toy_config()).unwrap();
    let store = det.init_store(11).unwrap();
    let q = question(&[1, 3, 5], 6);
    let v = random_vec(12, 5);
    let target = FactIndices {
        subject: 2,
        relation: 0,
        object: 3,
    };
    let report = grad_check(
        &store,
        |tape: &mut Tape<'_>| {
            let vi = tape.input(&v);
            let qv = det.encode_question(tape, &q).unwrap();
            let heads = det.forward(tape, vi, qv, Mode::Eval, &mut RngState::new(0).rng()).unwrap();
            Ok(det.loss(tape, heads, target).unwrap())
        },
        DEFAULT_STEP,
        1e-5,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn uniform_loss_is_three_ln_four() {
    let out = output_from_logits(&[0.0; 4], &[0.0; 4], &[0.0; 4]).unwrap();
    let config = DetectorConfig {
        lambda_l2: 0.0,
        ..DetectorConfig::default()
    };
    let t = FactIndices {
        subject: 1,
        relation: 2,
        object: 3,
    };
    let loss = detector_loss(&out, t, &ParameterStore::new(), &config).unwrap();
    assert!((loss - 3.0 * 4f64.ln()).abs() < 1e-12);
    assert!((loss - 4.1589).abs() < 1e-4);
}

#[test]
fn perfect_predictions_with_zero_weights_give_zero_loss() {
    let one_hot = |n: usize, i: usize| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let out = DetectorOutput {
        p_sub: one_hot(4, 1),
        p_rel: one_hot(3, 0),
        p_obj: one_hot(5, 4),
    };
    let t = FactIndices {
        subject: 1,
        relation: 0,
        object: 4,
    };
    let det = FactDetector::new(toy_config()).unwrap();
    let store = zeroed(&det.init_store(0).unwrap());
    assert_eq!(detector_loss(&out, t, &store, &det.config).unwrap(), 0.0);
}

#[test]
fn tape_loss_matches_component_oracle() {
    let det = FactDetector::new(toy_config()).unwrap();
    let store = det.init_store(21).unwrap();
    let q = question(&[2, 2, 1], 6);
    let v = random_vec(22, 5);
    let t = FactIndices {
        subject: 3,
        relation: 1,
        object: 0,
    };
    let mut tape = Tape::new(&store);
    let vi = tape.input(&v);
    let qv = det.encode_question(&mut tape, &q).unwrap();
    let heads = det.forward(&mut tape, vi, qv, Mode::Eval, &mut RngState::new(0).rng()).unwrap();
    let loss = det.loss(&mut tape, heads, t).unwrap();
    let out = det.output(&tape, heads);

    let c = &det.config;
    let mut l2 = 0.0;
    for (_, p) in store.iter() {
        if p.regularizable {
            l2 += p.value.values().iter().map(|w| w * w).sum::<f64>();
        }
    }
    let oracle = c.lambda_subject * -out.p_sub[3].ln()
        + c.lambda_relation * -out.p_rel[1].ln()
        + c.lambda_object * -out.p_obj[0].ln()
        + c.lambda_l2 * l2;
    assert!((tape.scalar(loss) - oracle).abs() < 1e-12);
    assert!((detector_loss(&out, t, &store, c).unwrap() - oracle).abs() < 1e-12);
    assert!(oracle >= c.lambda_l2 * l2);
}

#[test]
fn invalid_config_rejected() {
    let bad = DetectorConfig {
        lambda_relation: 0.0,
        ..toy_config()
    };
    assert!(FactDetector::new(bad).is_err());
    let bad = DetectorConfig {
        dropout: 1.0,
        ..toy_config()
    };
    assert!(FactDetector::new(bad).is_err());
}

#[test]
fn out_of_range_target_is_an_index_error() {
    let out = output_from_logits(&[0.0; 4], &[0.0; 4], &[0.0; 4]).unwrap();
    let t = FactIndices {
        subject: 4,
        relation: 0,
        object: 0,
    };
    assert!(detector_loss(&out, t, &ParameterStore::new(), &toy_config()).is_err());
}

#[test]
fn top_one_is_per_head_argmax() {
    let mut rng = RngState::new(4).rng();
    for _ in 0..20 {
        let out = random_output(&mut rng, [7, 5, 9]);
        let top = top_k_facts(&out, 1, FactScoreMode::ProbabilitySum).unwrap();
        assert_eq!(
            top[0].triple,
            FactIndices {
                subject: argmax(&out.p_sub),
                relation: argmax(&out.p_rel),
                object: argmax(&out.p_obj),
            }
        );
    }
}

#[test]
fn uniform_top_k_follows_tie_break_order() {
    let out = output_from_logits(&[0.0; 3], &[0.0; 2], &[0.0; 3]).unwrap();
    let top = top_k_facts(&out, 3, FactScoreMode::ProbabilitySum).unwrap();
    let triples: Vec<_> = top.iter().map(|f| (f.triple.subject, f.triple.relation, f.triple.object)).collect();
    assert_eq!(triples, vec![(0, 0, 0), (0, 0, 1), (0, 0, 2)]);
}

#[test]
fn top_ten_matches_exhaustive_600() {
    let mut rng = RngState::new(10).rng();
    for _ in 0..10 {
        let out = random_output(&mut rng, [10, 6, 10]);
        for mode in [FactScoreMode::ProbabilitySum, FactScoreMode::LogProbabilitySum] {
            assert_eq!(top_k_facts(&out, 10, mode).unwrap(), brute_force(&out, 10, mode));
        }
    }
}

#[test]
fn oversized_k_is_clamped() {
    let out = output_from_logits(&[0.0, 1.0], &[0.5], &[2.0, 0.0]).unwrap();
    let top = top_k_facts(&out, 12, FactScoreMode::ProbabilitySum).unwrap();
    assert_eq!(top.len(), 4);
    assert!(top_k_facts(&out, 0, FactScoreMode::ProbabilitySum).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn top_k_equals_exhaustive(seed in any::<u64>(), s in 1usize..=12, r in 1usize..=12, o in 1usize..=12, k in 1usize..=12, coarse in any::<bool>()) {
        let mut rng = RngState::new(seed).rng();
        let out = if coarse {
            // Few distinct logits, so many exact and near ties.
            let mut logits = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(0..3) as f64).collect() };
            let (a, b, c) = (logits(s), logits(r), logits(o));
            output_from_logits(&a, &b, &c).unwrap()
        } else {
            random_output(&mut rng, [s, r, o])
        };
        let top = top_k_facts(&out, k, FactScoreMode::ProbabilitySum).unwrap();
        prop_assert_eq!(&top, &brute_force(&out, k, FactScoreMode::ProbabilitySum));
        for f in &top {
            prop_assert!((0.0..=3.0).contains(&f.score));
        }
        for w in top.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }
}

fn hand_output(sub: &[f64], rel: &[f64], obj: &[f64]) -> DetectorOutput {
    DetectorOutput {
        p_sub: sub.to_vec(),
        p_rel: rel.to_vec(),
        p_obj: obj.to_vec(),
    }
}

#[test]
fn recall_matches_hand_enumeration() {
    let f = |s, r, o| FactIndices {
        subject: s,
        relation: r,
        object: o,
    };
    // First output ranks (0,0,0)=1.9, then (0,0,1) and (1,0,0) at 1.7, ..., (1,1,1)=1.1 last.
    let a = hand_output(&[0.6, 0.4], &[0.7, 0.3], &[0.6, 0.4]);
    let outputs = vec![
        (a.clone(), f(0, 0, 0)),
        (a.clone(), f(1, 0, 0)),
        (a.clone(), f(1, 1, 1)),
        (hand_output(&[0.2, 0.8], &[0.5, 0.5], &[0.1, 0.9]), f(1, 0, 1)),
    ];
    let m = metrics_from_outputs(&outputs, &[1, 5, 10], &toy_config(), 3).unwrap();
    assert_eq!(m.recall_at(1), 0.5);
    assert_eq!(m.recall_at(5), 0.75);
    assert_eq!(m.recall_at(10), 1.0);
    assert_eq!(m.subject_acc, 0.5);
    assert_eq!(m.relation_acc, 0.75);
    assert_eq!(m.object_acc, 0.75);
    assert_eq!(m.n_examples, 4);
    assert_eq!(m.n_dropped_oov, 3);
    let json = serde_json::to_value(&m).unwrap();
    for key in ["subject_acc", "relation_acc", "object_acc", "recall", "n_examples", "n_dropped_oov"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert!(json["recall"].get("10").is_some());
}

#[test]
fn recall_is_non_decreasing_in_k() {
    let mut rng = RngState::new(31).rng();
    let outputs: Vec<_> = (0..40)
        .map(|_| {
            let out = random_output(&mut rng, [6, 4, 6]);
            let t = FactIndices {
                subject: rng.gen_range(0..6),
                relation: rng.gen_range(0..4),
                object: rng.gen_range(0..6),
            };
            (out, t)
        })
        .collect();
    let ks: Vec<usize> = (1..=20).collect();
    let m = metrics_from_outputs(&outputs, &ks, &toy_config(), 0).unwrap();
    for k in 1..20 {
        assert!(m.recall_at(k) <= m.recall_at(k + 1));
    }
}

#[test]
fn empty_training_set_is_a_config_error() {
    let det = FactDetector::new(toy_config()).unwrap();
    let err = train_detector(&det, &[], &[], &PooledFeatures::default(), 0).unwrap_err();
    assert!(err.is_config());
}

fn short_run(seed: u64, epochs: usize) -> (FactDetector, DetectorTraining, rvqa_core::fixtures::DetectorFixture) {
    let fx = detector_fixture(seed).unwrap();
    let det = FactDetector::new(DetectorConfig {
        epochs,
        ..fx.config.clone()
    })
    .unwrap();
    let run = train_detector(&det, &fx.examples, &[], &fx.pooled, seed).unwrap();
    (det, run, fx)
}

#[test]
fn first_batch_loss_matches_independent_loss() {
    let fx = detector_fixture(3).unwrap();
    let config = DetectorConfig {
        dropout: 0.0,
        epochs: 1,
        batch_size: 50,
        ..fx.config.clone()
    };
    let det = FactDetector::new(config).unwrap();
    let run = train_detector(&det, &fx.examples, &[], &fx.pooled, 3).unwrap();
    // A single full batch: the loss is the mean over all examples at init.
    let store = det.init_store(3).unwrap();
    let mut total = 0.0;
    for e in &fx.examples {
        let out = det.predict(&store, &e.question, fx.pooled.get(&e.image_id).unwrap()).unwrap();
        total += detector_loss(&out, e.target, &ParameterStore::new(), &det.config).unwrap();
    }
    let expected = total / 50.0 + det.config.lambda_l2 * store.l2_penalty();
    assert!((run.first_batch_loss - expected).abs() < 1e-10, "{} vs {expected}", run.first_batch_loss);
}

#[test]
fn same_seed_same_first_epoch() {
    let (_, a, _) = short_run(8, 2);
    let (_, b, _) = short_run(8, 2);
    assert_eq!(a.log[0].train_loss.to_bits(), b.log[0].train_loss.to_bits());
    assert_eq!(a.first_batch_loss.to_bits(), b.first_batch_loss.to_bits());
}

#[test]
fn fixture_overfits_and_question_matters() {
    let (det, run, fx) = short_run(1, 300);
    let reached = run.log.iter().position(|e| e.train.min_element_acc() >= 0.95);
    assert!(reached.is_some(), "final {:?}", run.log.last().unwrap().train);
    let full = evaluate_detector(&det, &run.best, &fx.examples, &fx.pooled, &[1], 0).unwrap();

    let blind = FactDetector::new(DetectorConfig {
        use_question: false,
        ..det.config.clone()
    })
    .unwrap();
    let blind_run = train_detector(&blind, &fx.examples, &[], &fx.pooled, 1).unwrap();
    let v_only = evaluate_detector(&blind, &blind_run.best, &fx.examples, &fx.pooled, &[1], 0).unwrap();
    assert!(v_only.recall_at(1) < full.recall_at(1), "{} vs {}", v_only.recall_at(1), full.recall_at(1));
}

#[test]
fn checkpoint_round_trip_and_vocab_guard() {
    let (det, run, fx) = short_run(2, 1);
    let elements = rvqa_core::builder::ElementVocabulary::from_lists(
        (0..8).map(|i| format!("s{i}")).collect(),
        (0..4).map(|i| format!("r{i}")).collect(),
        (0..8).map(|i| format!("o{i}")).collect(),
    );
    let trained = TrainedDetector {
        detector: det,
        store: run.best,
        element_vocab: elements.clone(),
        question_vocab: fx.question_vocab.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("det.ckpt");
    trained.save(&path, 2).unwrap();
    let back = TrainedDetector::load(&path, elements.clone(), fx.question_vocab.clone()).unwrap();
    let e = &fx.examples[0];
    let v = fx.pooled.get(&e.image_id).unwrap();
    assert_eq!(
        back.detector.predict(&back.store, &e.question, v).unwrap(),
        trained.detector.predict(&trained.store, &e.question, v).unwrap()
    );

    let other = QuestionVocab::from_tokens(vec!["<unk>".into(), "x".into()]).unwrap();
    let err = TrainedDetector::load(&path, elements, other).unwrap_err();
    assert!(err.is_config());
}
