//! Multi-step attention answer model: question-guided visual attention,
//! visual-query attention over detector facts, a joint knowledge embedding
//! and an answer classifier, plus five ablation variants.

pub mod model;
pub mod train;

pub use model::{
    mlb, register_mlb, AttentionRecord, AttentionVars, Dropout, Msan, MsanConfig, MsanForward, Variant,
};
pub use train::{
    answer_accuracy, train_msan, EarlyStopping, MsanExample, MsanPrediction, MsanTraining, RegionFeatures,
    ValidationRecord,
};
