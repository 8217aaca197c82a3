//! Construction of fact-aligned VQA datasets from image annotations.
//!
//! Pipeline: template candidate facts per image, score each QA pair
//! against its image's candidates, keep the best candidate above a
//! threshold, split 60/20/20, canonicalise aliases, then rank element
//! vocabularies on the training split.

pub mod dataset;
pub mod facts;
pub mod scorer;

pub use dataset::{
    build_vocabulary, dataset_stats, load_jsonl, merge_aliases, parse_jsonl, select_fact, split_dataset,
    to_jsonl, AlignedExample, AliasTable, Coverage, DatasetStats, ElementCount, ElementVocabulary, Role,
    RvqaExample, ScoredCorpus, Split, ThresholdRow, VocabSizes,
};
pub use facts::{parse_annotations, template_facts, FactKind, FactTriple, ImageAnnotation, QaPair};
pub use scorer::{scorer_by_name, RelevanceScorer, TfIdfScorer, DEFAULT_SCORER};

use serde::{Deserialize, Serialize};

use crate::encoders::QuestionVocab;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub threshold: f64,
    pub scorer: String,
    pub image_disjoint: bool,
    pub vocab_sizes: VocabSizes,
    pub question_vocab_size: usize,
    /// Thresholds reported in the statistics sweep.
    pub sweep: Vec<f64>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            threshold: 0.30,
            scorer: DEFAULT_SCORER.to_string(),
            image_disjoint: false,
            vocab_sizes: VocabSizes::default(),
            question_vocab_size: 20_000,
            sweep: vec![0.20, 0.25, 0.30, 0.35, 0.40, 0.45],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BuildReport {
    pub alignment: dataset::AlignmentReport,
    pub threshold: f64,
    pub seed: u64,
    pub sweep: Vec<ThresholdRow>,
    pub coverage_before_merge: Coverage,
    pub coverage_after_merge: Coverage,
    pub stats: DatasetStats,
}

pub struct BuildOutput {
    pub examples: Vec<RvqaExample>,
    pub vocabulary: ElementVocabulary,
    pub question_vocab: QuestionVocab,
    pub report: BuildReport,
}

/// Documents the default scorer is fitted on: every QA text and every
/// candidate fact text of images that carry semantic annotations.
pub fn scoring_corpus(annotations: &[ImageAnnotation]) -> Vec<String> {
    let mut docs = Vec::new();
    for img in annotations.iter().filter(|a| a.has_semantics()) {
        docs.extend(img.qa.iter().map(|qa| format!("{} {}", qa.question, qa.answer)));
        docs.extend(template_facts(img).0.iter().map(FactTriple::text));
    }
    docs
}

pub fn build_dataset(
    annotations: &[ImageAnnotation],
    aliases: &AliasTable,
    config: &BuildConfig,
    seed: u64,
) -> Result<BuildOutput> {
    aliases.validate()?;
    let corpus = scoring_corpus(annotations);
    let scorer = scorer_by_name(&config.scorer, corpus.iter().map(String::as_str))?;
    let scored = ScoredCorpus::score(annotations, scorer.as_ref());
    let sweep = scored.sweep(&config.sweep);
    let kept = scored.above(config.threshold);
    let mut examples = split_dataset(kept, seed, config.image_disjoint);

    let train: Vec<RvqaExample> = examples.iter().filter(|e| e.split == Split::Train).cloned().collect();
    let (_, coverage_before_merge) = build_vocabulary(&train, config.vocab_sizes)?;
    merge_aliases(&mut examples, aliases);
    let train: Vec<RvqaExample> = examples.iter().filter(|e| e.split == Split::Train).cloned().collect();
    let (vocabulary, coverage_after_merge) = build_vocabulary(&train, config.vocab_sizes)?;
    let question_vocab = QuestionVocab::build(
        train.iter().map(|e| e.question.as_str()),
        config.question_vocab_size,
    );
    let stats = dataset_stats(&examples);
    Ok(BuildOutput {
        report: BuildReport {
            alignment: scored.report,
            threshold: config.threshold,
            seed,
            sweep,
            coverage_before_merge,
            coverage_after_merge,
            stats,
        },
        examples,
        vocabulary,
        question_vocab,
    })
}
