//! QA-to-fact relevance scoring.

use std::collections::HashMap;

use crate::builder::facts::FactTriple;
use crate::encoders::tokenize;
use crate::error::{CoreError, Result};

/// Scores how well a fact supports a QA pair, in `[0, 1]`.
pub trait RelevanceScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, qa_text: &str, fact: &FactTriple) -> f64;
}

pub const DEFAULT_SCORER: &str = "tfidf";

/// Looks up a scorer by name, fitting it on `corpus` where needed.
pub fn scorer_by_name<'a>(
    name: &str,
    corpus: impl IntoIterator<Item = &'a str>,
) -> Result<Box<dyn RelevanceScorer>> {
    match name {
        "tfidf" => Ok(Box::new(TfIdfScorer::fit(corpus))),
        other => Err(CoreError::Config(format!("unknown relevance scorer `{other}`"))),
    }
}

/// Cosine similarity of L2-normalised TF-IDF bags.
///
/// Term frequency is the raw count; `idf(t) = ln((1 + N) / (1 + df(t))) + 1`
/// over the `N` fitted documents, so every term keeps a positive weight.
#[derive(Debug, Clone)]
pub struct TfIdfScorer {
    documents: usize,
    doc_freq: HashMap<String, usize>,
}

impl TfIdfScorer {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut documents = 0;
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            documents += 1;
            let mut terms = tokenize(doc);
            terms.sort();
            terms.dedup();
            for t in terms {
                *doc_freq.entry(t).or_default() += 1;
            }
        }
        Self {
            documents,
            doc_freq,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0);
        ((1.0 + self.documents as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    fn vector(&self, text: &str) -> Vec<(String, f64)> {
        let mut counts: HashMap<String, f64> = HashMap::new();
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut v: Vec<(String, f64)> = counts
            .into_iter()
            .map(|(t, c)| {
                let w = c * self.idf(&t);
                (t, w)
            })
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        let norm = v.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        v
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb: HashMap<String, f64> = self.vector(b).into_iter().collect();
        let dot: f64 = va
            .iter()
            .filter_map(|(t, w)| vb.get(t).map(|u| w * u))
            .sum();
        dot.clamp(0.0, 1.0)
    }
}

impl RelevanceScorer for TfIdfScorer {
    fn name(&self) -> &str {
        "tfidf"
    }

    fn score(&self, qa_text: &str, fact: &FactTriple) -> f64 {
        self.similarity(qa_text, &fact.text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scorer_is_a_config_error() {
        assert!(matches!(
            scorer_by_name("bm25", ["a"]),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn disjoint_and_identical_texts() {
        let s = TfIdfScorer::fit(["what color is the plate white", "plate is white"]);
        let plate = FactTriple::attribute("plate", "white");
        assert_eq!(s.score("how many dogs 3", &plate), 0.0);
        assert!((s.score("plate is white", &plate) - 1.0).abs() < 1e-12);
    }
}
