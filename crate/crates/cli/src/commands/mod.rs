mod eval;
mod synth;
mod track;
mod train;

pub use eval::{cmd_eval, format_table, EvalArgs};
pub use synth::{cmd_synth, sequence_name, SceneFlags, SynthArgs};
pub use track::{cmd_track, TrackArgs, TrackFlags};
pub use train::{cmd_train, TrainArgs, TrainFlags, TrainSummary};
