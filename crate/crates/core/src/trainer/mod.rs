//! Clip preprocessing, association training and appearance fine-tuning.

mod appearance;
mod checkpoint;
mod clip;
mod preprocess;
mod train;

pub use appearance::{
    end_to_end_permutation, identity_cosine_margin, kl_loss, mean_kl_loss, train_appearance,
    AppearanceOutcome,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use clip::{ClipDetection, DetectionClip};
pub use preprocess::{
    preprocess_clips, raw_frames_from_mot, Preprocessed, RawFrame, DEFAULT_CONF_THRESHOLD,
    MIN_MATCH_IOU,
};
pub use train::{
    association_accuracy, initial_head, initial_params, train_association, train_association_from,
    Optimizer, TrainConfig, TrainOutcome,
};
