//! Two-stage online multi-object tracking.
//!
//! Each frame, predicted track boxes are first matched to detections by an
//! adaptive, per-track normalized IOU rule ([`stage1`]); whatever stays
//! ambiguous is matched by appearance similarity ([`stage2`]). Track creation
//! and velocity-aware deletion live in [`lifecycle`], and [`metrics`]
//! evaluates the output against ground truth.

pub mod assignment;
pub mod config;
pub mod error;
pub mod io;
pub mod kalman;
pub mod lifecycle;
pub mod metrics;
pub mod pipeline;
pub mod stage1;
pub mod stage2;
pub mod synth;
pub mod track;
pub mod types;

pub use config::{ProviderKind, Stage1Mode, TrackerConfig};
pub use error::{MotsError, Result};
pub use pipeline::{run_sequence, SequenceOutput, Tracker};
pub use types::{iou, AssociationResult, BoundingBox, Detection};
