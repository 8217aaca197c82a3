use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::harness::metrics::normalize_answer;

/// Frequency-ranked candidate answers; index order is the classifier's
/// output order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCoverage {
    pub size: usize,
    pub covered: usize,
    pub total: usize,
    pub coverage: f64,
}

impl AnswerVocab {
    pub fn from_answers(answers: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(CoreError::Config(format!("duplicate answer `{a}` in answer vocabulary")));
            }
        }
        if answers.is_empty() {
            return Err(CoreError::Config("answer vocabulary is empty".into()));
        }
        Ok(Self { answers, index })
    }

    /// Top `size` normalised answers by count (ties lexicographic) and the
    /// fraction of all answer occurrences they cover.
    pub fn build<'a>(answers: impl IntoIterator<Item = &'a str>, size: usize) -> Result<(Self, AnswerCoverage)> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0;
        for a in answers {
            *counts.entry(normalize_answer(a)).or_default() += 1;
            total += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(size);
        let covered: usize = ranked.iter().map(|r| r.1).sum();
        let vocab = Self::from_answers(ranked.into_iter().map(|r| r.0).collect())?;
        let coverage = AnswerCoverage {
            size: vocab.len(),
            covered,
            total,
            coverage: if total == 0 { 0.0 } else { covered as f64 / total as f64 },
        };
        Ok((vocab, coverage))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.answers.get(index).map(String::as_str)
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(&normalize_answer(answer)).copied()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn to_text(&self) -> String {
        let mut s = self.answers.join("\n");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_answers(text.lines().map(str::to_string).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }
}

/// Most frequent normalised annotator answer; ties go to the
/// lexicographically first.
pub fn training_target(answers: &[String]) -> Option<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for a in answers {
        *counts.entry(normalize_answer(a)).or_default() += 1;
    }
    counts
        .into_iter()
        .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(a, _)| a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    OpenEnded,
    MultiChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnswerPrediction {
    pub answer: String,
    pub index: Option<usize>,
    /// Set when no choice was in the vocabulary and the first choice was used.
    pub fallback: bool,
}

/// Open-ended: global argmax. Multi-choice: argmax over choices present in
/// the vocabulary, other choices scoring −∞. Ties go to the lowest index.
pub fn predict_answer(
    distribution: &[f64],
    task: Task,
    choices: Option<&[String]>,
    vocab: &AnswerVocab,
) -> Result<AnswerPrediction> {
    if distribution.len() != vocab.len() {
        return Err(CoreError::Input(format!(
            "distribution has {} entries, answer vocabulary {}",
            distribution.len(),
            vocab.len()
        )));
    }
    let best_of = |candidates: &mut dyn Iterator<Item = usize>| {
        let mut best: Option<usize> = None;
        for i in candidates {
            if best.is_none_or(|b| distribution[i] > distribution[b] || (distribution[i] == distribution[b] && i < b)) {
                best = Some(i);
            }
        }
        best
    };
    let known = |index: usize| AnswerPrediction {
        answer: vocab.answers[index].clone(),
        index: Some(index),
        fallback: false,
    };
    match (task, choices) {
        (Task::OpenEnded, _) => Ok(known(best_of(&mut (0..vocab.len())).expect("non-empty vocabulary"))),
        (Task::MultiChoice, None) | (Task::MultiChoice, Some([])) => {
            Err(CoreError::Input("multi-choice prediction without choices".into()))
        }
        (Task::MultiChoice, Some(choices)) => {
            match best_of(&mut choices.iter().filter_map(|c| vocab.index_of(c))) {
                Some(i) => Ok(known(i)),
                None => Ok(AnswerPrediction {
                    answer: normalize_answer(&choices[0]),
                    index: None,
                    fallback: true,
                }),
            }
        }
    }
}
