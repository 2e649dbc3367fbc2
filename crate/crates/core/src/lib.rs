//! Multi-face tracking with fused biometric and appearance embeddings.
//!
//! The tracker follows a detect-then-associate loop: a constant-velocity
//! Kalman filter predicts every track, a quality-weighted cosine cost
//! between track memories and detections is gated by position and solved as
//! an assignment problem, and an IoU pass picks up what is left.

pub mod assignment;
pub mod association;
pub mod error;
pub mod formats;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod synth;
pub mod tracker;

pub use assignment::{solve_assignment, MatchResult};
pub use association::{Counters, CostSample, LambdaSpec};
pub use error::{Error, Result};
pub use formats::{Mot20Row, SequenceRecord};
pub use model::{
    BoundingBox, CostMatrix, Detection, FeatureVector, Frame, LambdaSetting, Track, TrackState, TrackerConfig,
};
pub use motion::KalmanState;
pub use tracker::{run_sequence, TrackerEngine};
