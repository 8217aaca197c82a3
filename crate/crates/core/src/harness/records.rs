use serde::{Deserialize, Serialize};

use crate::detector::{ScoredFact, TrainedDetector};
use crate::encoders::FeatureShape;
use crate::harness::answers::AnswerVocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub s: String,
    pub r: String,
    pub o: String,
    pub detector_score: f64,
    pub attention_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub answer: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub question_id: String,
    pub answer: String,
    pub answer_rank: Vec<RankedAnswer>,
    pub visual_weights: Vec<f64>,
    pub facts: Vec<FactRecord>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyRecord {
    pub image_id: String,
    pub question_id: String,
    pub question: String,
    pub predicted_answer: String,
    pub facts: Vec<FactRecord>,
    /// Visual attention as `H` rows of `W` weights.
    pub visual_grid: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyDump {
    pub seed: u64,
    pub config_hash: String,
    pub variant: String,
    pub facts_shown: usize,
    pub records: Vec<CaseStudyRecord>,
    /// Images whose questions received different fact lists.
    pub question_dependent_images: Vec<String>,
}

/// Highest `n` answers by probability, ties by lowest index.
pub fn rank_answers(p: &[f64], vocab: &AnswerVocab, n: usize) -> Vec<RankedAnswer> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    idx.into_iter()
        .take(n)
        .map(|i| RankedAnswer {
            answer: vocab.answer(i).unwrap_or_default().to_string(),
            score: p[i],
        })
        .collect()
}

/// Pairs facts with their semantic attention weights; facts without a
/// weight (no semantic path) get 0.
pub fn fact_records(facts: &[ScoredFact], weights: Option<&[f64]>, detector: Option<&TrainedDetector>) -> Vec<FactRecord> {
    facts
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (s, r, o) = match detector {
                Some(d) => d.fact_strings(&f.triple),
                None => (
                    f.triple.subject.to_string(),
                    f.triple.relation.to_string(),
                    f.triple.object.to_string(),
                ),
            };
            FactRecord {
                s,
                r,
                o,
                detector_score: f.score,
                attention_weight: weights.and_then(|w| w.get(i)).copied().unwrap_or(0.0),
            }
        })
        .collect()
}

pub fn visual_grid(weights: &[f64], shape: FeatureShape) -> Vec<Vec<f64>> {
    if weights.len() != shape.regions() {
        return Vec::new();
    }
    weights.chunks(shape.width).map(<[f64]>::to_vec).collect()
}
