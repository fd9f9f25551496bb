//! Synthetic sequences, the tracking loop and OPE metrics.

pub mod metrics;
pub mod synth;
pub mod track;

pub use metrics::{precision_metric, success_metric};
pub use synth::{synth_object, synth_sequence, SequenceConfig, Shape, SyntheticSequence};
pub use track::{run_tracker, FrameResult, TrackMode, TrackReport, TrackerConfig, TrackerWeights};
