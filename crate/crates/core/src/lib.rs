//! Pseudo-label generation for weakly supervised 3D instance segmentation.
//!
//! The crate turns a point-cloud scene, its posed RGB-D frames, per-frame
//! feature maps and prompt-mask rasters into per-point instance and semantic
//! pseudo labels, and scores labels against ground truth.
//!
//! The pipeline has two grouping branches feeding a refinement stage:
//!
//! * [`sgb`]: multi-view feature accumulation, class scoring and
//!   same-class radius grouping into coarse instance masks.
//! * [`mgb`]: superpoint prompts and multi-view voting of 2D prompt masks
//!   into fine instance masks.
//! * [`refine`]: granularity-aware mask assignment, small-instance merging,
//!   per-class confidence selection and superpoint propagation.
//!
//! [`pipeline::run_pipeline`] wires them together. [`metrics`] and
//! [`trainref`] are standalone.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mgb;
pub mod pipeline;
pub mod refine;
pub mod scene;
pub mod sgb;
pub mod spatial;
pub mod synth;
pub mod trainref;

pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use metrics::{GroundTruth, InstancePrediction};
pub use mgb::{PromptMaskRaster, PromptSet, SuperpointPartition};
pub use pipeline::{run_pipeline, Diagnostics, PipelineOutput, SceneBundle};
pub use scene::projection::{project_cloud, project_point, visible_in_frame, Pixel, Projection};
pub use scene::{
    CameraFrame, DepthRaster, FeatureMap, InstanceLabeling, LabelEmbeddings, PointMask,
    SceneCloud, ScoreMatrix, SemanticLabeling,
};
pub use sgb::PointFeatures;
