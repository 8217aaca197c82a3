//! Small deterministic fixtures for smoke tests, the acceptance suite and
//! `selftest`.

use rand::Rng;
use rvqa_nn::RngState;

use crate::builder::{ImageAnnotation, QaPair, VocabSizes};
use crate::detector::{DetectorConfig, DetectorExample, FactIndices, PooledFeatures, ScoredFact};
use crate::encoders::{FeatureShape, QuestionVocab, SyntheticFeatures};
use crate::error::Result;
use crate::msan::{MsanConfig, MsanExample, RegionFeatures, Variant};

pub const FIXTURE_SHAPE: FeatureShape = FeatureShape {
    channels: 16,
    height: 2,
    width: 2,
};

pub struct DetectorFixture {
    pub config: DetectorConfig,
    pub question_vocab: QuestionVocab,
    pub examples: Vec<DetectorExample>,
    pub pooled: PooledFeatures,
}

/// 50 examples: 10 images with 5 questions each, facts drawn from 8/4/8
/// element vocabularies. A question names its subject and relation, so the
/// object can only be resolved from the (image, question) pair.
pub fn detector_fixture(seed: u64) -> Result<DetectorFixture> {
    let mut tokens = vec!["<unk>".to_string(), "what".to_string()];
    tokens.extend((0..8).map(|i| format!("subj{i}")));
    tokens.extend((0..4).map(|i| format!("rel{i}")));
    let question_vocab = QuestionVocab::from_tokens(tokens)?;
    let mut rng = RngState::new(seed).rng();
    let mut examples = Vec::with_capacity(50);
    for image in 0..10 {
        for q in 0..5 {
            let target = FactIndices {
                subject: rng.gen_range(0..8),
                relation: rng.gen_range(0..4),
                object: rng.gen_range(0..8),
            };
            let text = format!("what subj{} rel{}", target.subject, target.relation);
            examples.push(DetectorExample {
                id: format!("img{image}_{q}"),
                image_id: format!("img{image}"),
                question: question_vocab.encode(&text)?,
                target,
            });
        }
    }
    let provider = SyntheticFeatures::new(FIXTURE_SHAPE);
    let pooled = PooledFeatures::collect(&provider, examples.iter().map(|e| e.image_id.as_str()))?;
    let config = DetectorConfig {
        image_dim: FIXTURE_SHAPE.channels,
        question_vocab_size: question_vocab.len(),
        embed_dim: 8,
        question_dim: 16,
        common_dim: 32,
        vocab: VocabSizes {
            subjects: 8,
            relations: 4,
            objects: 8,
        },
        dropout: 0.1,
        batch_size: 10,
        epochs: 300,
        ..DetectorConfig::default()
    };
    Ok(DetectorFixture {
        config,
        question_vocab,
        examples,
        pooled,
    })
}

pub struct MsanFixture {
    pub config: MsanConfig,
    pub question_vocab: QuestionVocab,
    pub examples: Vec<MsanExample>,
    pub regions: RegionFeatures,
}

const MSAN_QUESTIONS: [&str; 4] = [
    "what color is it",
    "what is on the table",
    "where is the dog",
    "how many cups are there",
];

/// 32 examples: 8 images with 4 questions each and 3 candidate facts drawn
/// from 6/4/6 element vocabularies. The answer (one of 8) is a function of
/// the question and the top fact's object.
pub fn msan_fixture(seed: u64, variant: Variant) -> Result<MsanFixture> {
    let question_vocab = QuestionVocab::build(MSAN_QUESTIONS, 100);
    let mut rng = RngState::new(seed).rng();
    let mut examples = Vec::with_capacity(32);
    for image in 0..8 {
        for (qi, text) in MSAN_QUESTIONS.iter().enumerate() {
            let facts: Vec<ScoredFact> = (0..3)
                .map(|rank| ScoredFact {
                    triple: FactIndices {
                        subject: rng.gen_range(0..6),
                        relation: rng.gen_range(0..4),
                        object: rng.gen_range(0..6),
                    },
                    score: 2.0 - 0.5 * rank as f64,
                })
                .collect();
            let target = (facts[0].triple.object + 2 * qi) % 8;
            examples.push(MsanExample {
                id: format!("img{image}_{qi}"),
                image_id: format!("img{image}"),
                question: question_vocab.encode(text)?,
                facts,
                target: Some(target),
            });
        }
    }
    let provider = SyntheticFeatures::new(FIXTURE_SHAPE);
    let regions = RegionFeatures::collect(&provider, examples.iter().map(|e| e.image_id.as_str()))?;
    let config = MsanConfig {
        k: 3,
        fact_dim: 8,
        embed_dim: 8,
        hidden_dim: 24,
        joint_dim: 16,
        answers: 8,
        image_dim: FIXTURE_SHAPE.channels,
        question_vocab_size: question_vocab.len(),
        fact_vocab: VocabSizes {
            subjects: 6,
            relations: 4,
            objects: 6,
        },
        variant,
        dropout: 0.1,
        batch_size: 8,
        epochs: 500,
        validation_interval: 40,
        patience: 5,
        ..MsanConfig::default()
    };
    Ok(MsanFixture {
        config,
        question_vocab,
        examples,
        regions,
    })
}

const OBJECTS: [&str; 12] = [
    "dog", "cat", "man", "woman", "table", "car", "tree", "cup", "shirt", "bench", "horse", "plate",
];
const ATTRIBUTES: [&str; 6] = ["red", "white", "black", "wooden", "small", "green"];
const RELATIONS: [&str; 6] = ["on", "near", "holding", "wearing", "under", "behind"];

fn pick<R: Rng>(xs: &[&'static str], rng: &mut R) -> &'static str {
    xs[rng.gen_range(0..xs.len())]
}

/// Annotated images with a mix of fact-grounded and unrelated QA pairs, so
/// match scores spread across the threshold range.
pub fn annotation_corpus(images: usize, qa_per_image: usize, seed: u64) -> Vec<ImageAnnotation> {
    let mut rng = RngState::new(seed).rng();
    (0..images)
        .map(|i| {
            let concepts: Vec<String> = (0..3).map(|_| pick(&OBJECTS, &mut rng).to_string()).collect();
            let attributes: Vec<Vec<String>> = (0..2)
                .map(|j| vec![concepts[j].clone(), pick(&ATTRIBUTES, &mut rng).to_string()])
                .collect();
            let relationships: Vec<Vec<String>> = (0..2)
                .map(|j| {
                    vec![
                        concepts[j].clone(),
                        pick(&RELATIONS, &mut rng).to_string(),
                        concepts[j + 1].clone(),
                    ]
                })
                .collect();
            let qa = (0..qa_per_image)
                .map(|_| match rng.gen_range(0..6) {
                    0 => {
                        let r = &relationships[rng.gen_range(0..2)];
                        QaPair {
                            question: format!("What is the {} {}?", r[0], r[1]),
                            answer: r[2].clone(),
                        }
                    }
                    1 => {
                        let a = &attributes[rng.gen_range(0..2)];
                        QaPair {
                            question: format!("What color is the {}?", a[0]),
                            answer: a[1].clone(),
                        }
                    }
                    2 => QaPair {
                        question: format!("Is there a {} in the picture?", concepts[rng.gen_range(0..3)]),
                        answer: "yes".into(),
                    },
                    3 => QaPair {
                        question: format!("How many {} are there?", concepts[rng.gen_range(0..3)]),
                        answer: pick(&["one", "two", "three"], &mut rng).into(),
                    },
                    4 => QaPair {
                        question: format!("Where is the {} {}?", concepts[0], pick(&RELATIONS, &mut rng)),
                        answer: pick(&["outside", "kitchen", "street"], &mut rng).into(),
                    },
                    _ => QaPair {
                        question: "What time of day is it?".into(),
                        answer: pick(&["morning", "afternoon", "night"], &mut rng).into(),
                    },
                })
                .collect();
            ImageAnnotation {
                image_id: format!("img{i:04}"),
                qa,
                concepts,
                attributes,
                relationships,
            }
        })
        .collect()
}
