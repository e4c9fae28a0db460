//! Pairwise geometric scorer and appearance similarity head.

mod appearance;
mod boxes;
mod scorer;

pub use appearance::{
    appearance_matrix, appearance_similarity, AppearanceHead, EmbeddingProvider, EmbeddingTable,
    DEFAULT_TEMPERATURE,
};
pub use boxes::{iou, pairwise_features, BoundingBox, PairwiseFeature, FEATURE_DIM};
pub use scorer::{
    association_scores, mlp_forward, rect_scores, score_matrix, ScorerParams, DEFAULT_HIDDEN,
};
