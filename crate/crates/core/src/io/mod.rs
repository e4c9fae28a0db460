//! MOT-Challenge files, synthetic scenes and evaluation metrics.

mod metrics;
mod mot;
mod synth;

pub use metrics::{evaluate, evaluate_sequence, EvalReport, SequenceReport};
pub use mot::{group_by_frame, parse_mot, read_mot_rows, write_mot, MotFrames, MotRow};
pub use synth::{crop_id, generate_scene, generate_scenes, Layout, SceneConfig, SyntheticScene};
