use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checksum::config_hash;
use crate::error::{CoreError, Result};
use crate::harness::data::VqaExample;
use crate::harness::metrics::Metric;

/// Overall and per-question-type accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub all: f64,
    pub per_type: BTreeMap<String, f64>,
    pub per_type_n: BTreeMap<String, usize>,
    pub n: usize,
}

/// Scores `predictions[i]` against `examples[i]`. Per-example scores are
/// computed in parallel and summed in input order.
pub fn evaluate_predictions(examples: &[VqaExample], predictions: &[String], metric: Metric) -> Result<Accuracy> {
    if examples.len() != predictions.len() {
        return Err(CoreError::Input(format!(
            "{} examples but {} predictions",
            examples.len(),
            predictions.len()
        )));
    }
    let scores: Vec<f64> = examples
        .par_iter()
        .zip(predictions.par_iter())
        .map(|(e, p)| metric.score(p, &e.answer_list()))
        .collect();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (e, s) in examples.iter().zip(&scores) {
        let entry = sums.entry(e.question_type.clone()).or_default();
        entry.0 += s;
        entry.1 += 1;
    }
    let n = scores.len();
    Ok(Accuracy {
        all: if n == 0 { 0.0 } else { scores.iter().sum::<f64>() / n as f64 },
        per_type: sums.iter().map(|(t, (s, c))| (t.clone(), s / *c as f64)).collect(),
        per_type_n: sums.iter().map(|(t, (_, c))| (t.clone(), *c)).collect(),
        n,
    })
}

/// Evaluation report with the run's seed and a content hash of its config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub all: f64,
    pub per_type: BTreeMap<String, f64>,
    pub per_type_n: BTreeMap<String, usize>,
    pub n: usize,
    pub n_fallback: usize,
    pub seed: u64,
    pub config_hash: String,
    pub config: Value,
}

impl EvalReport {
    pub fn new(accuracy: Accuracy, n_fallback: usize, seed: u64, config: Value) -> Self {
        Self {
            all: accuracy.all,
            per_type: accuracy.per_type,
            per_type_n: accuracy.per_type_n,
            n: accuracy.n,
            n_fallback,
            seed,
            config_hash: config_hash(&config),
            config,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::Answers;

    fn ex(id: &str, ty: &str, answers: &[&str]) -> VqaExample {
        VqaExample {
            question_id: id.into(),
            image_id: "img".into(),
            question: "q".into(),
            answers: Answers::Many(answers.iter().map(|s| s.to_string()).collect()),
            choices: None,
            question_type: ty.into(),
        }
    }

    #[test]
    fn hand_fixture() {
        let examples = vec![
            ex("1", "yes/no", &["yes", "yes", "yes", "no"]),
            ex("2", "yes/no", &["no", "no", "yes"]),
            ex("3", "number", &["2", "2", "3"]),
            ex("4", "other", &["red", "blue"]),
        ];
        let preds: Vec<String> = ["yes", "yes", "2", "green"].iter().map(|s| s.to_string()).collect();
        let acc = evaluate_predictions(&examples, &preds, Metric::VqaVote).unwrap();
        // 1 + 1/3 + 2/3 + 0 over 4.
        assert_eq!(acc.all, 0.5);
        assert!((acc.per_type["yes/no"] - 2.0 / 3.0).abs() < 1e-12);
        assert!((acc.per_type["number"] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(acc.per_type["other"], 0.0);
        assert_eq!(acc.per_type_n["yes/no"], 2);
        assert!(evaluate_predictions(&examples, &preds[..3], Metric::VqaVote).is_err());
    }
}
