//! Online Kalman tracker with augmented assignment.

mod assignment;
mod online;
mod track;

pub use assignment::{hungarian, solve_assignment, Matching};
pub use online::{
    calibrate_c_miss, detection_frames, track_sequence, DetectionFrame, FrameDetection, Tracker,
    ValidationSequence, C_MISS_GRID,
};
pub use track::{cost_matrix, init_track, predict_tracks, update_track, Track, TrackerConfig};
