//! Question and image encoders.

pub mod features;
pub mod question;

pub use features::{
    load_features, mean_pool, store_features, synthetic_features, FeatureDirectory, FeatureMap,
    FeatureProvider, FeatureShape, SyntheticFeatures,
};
pub use question::{tokenize, QuestionEncoder, QuestionVocab, TokenSequence, UNK_TOKEN};
