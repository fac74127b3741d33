//! Places human animations into labeled 3D scenes.
//!
//! Frames are weighted by how much they matter for scene interaction (semantic
//! contact, pelvis motion, and a learned regressor combined with a gradient
//! diversity ranking), then the animation's rigid placement is optimized against a
//! keyframe-weighted affordance and penetration objective over a baked signed
//! distance field.

pub mod animation;
pub mod geometry;
pub mod keyframes;
pub mod metrics;
pub mod pipeline;
pub mod placement;
pub mod scene;

pub use animation::{Animation, BodyFrame, FeatureMap, PlacementPose};
pub use keyframes::{KeyframeModel, KeyframeWeights, WeightMode, WeightingConfig};
pub use metrics::{MetricsConfig, PlausibilityReport};
pub use pipeline::{run_pipeline, PipelineConfig};
pub use placement::{LossConfig, PlacementConfig, PlacementOutcome, PlacementResult};
pub use scene::{SceneModel, SceneOptions, SemanticVocabulary};
