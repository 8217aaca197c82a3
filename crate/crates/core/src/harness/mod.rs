//! Metrics, answer vocabulary, run configuration, pipeline stages and
//! report or case-study output.

pub mod answers;
pub mod config;
pub mod data;
pub mod metrics;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod selftest;

pub use answers::{predict_answer, training_target, AnswerCoverage, AnswerPrediction, AnswerVocab, Task};
pub use config::RunConfig;
pub use data::{load_vqa_jsonl, parse_vqa_jsonl, Answers, VqaExample};
pub use metrics::{exact_match, normalize_answer, vqa_accuracy, Metric};
pub use report::{evaluate_predictions, Accuracy, EvalReport};
