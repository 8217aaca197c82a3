//! Relation fact detector: multi-task classification of subject, relation
//! and object from a question and a pooled image vector.

pub mod model;
pub mod train;

pub use model::{
    argmax, detector_loss, fact_score, output_from_logits, top_k_facts, DetectorConfig, DetectorHeads,
    DetectorOutput, FactDetector, FactIndices, FactScoreMode, ScoredFact,
};
pub use train::{
    batch_step, evaluate_detector, metrics_from_outputs, predict_all, resolve_examples, train_detector,
    DetectorEpoch, DetectorExample, DetectorMetrics, DetectorTraining, PooledFeatures, TrainedDetector,
};
