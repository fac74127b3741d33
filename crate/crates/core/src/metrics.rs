//! Physical plausibility of a placed animation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::animation::{Animation, BodyFrame};
use crate::scene::SceneModel;

/// Signed distances above `-NON_COLLISION_TOLERANCE` count as free, so a vertex
/// resting on a surface is not reported as a collision because of rounding.
pub const NON_COLLISION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// A frame is in contact when some vertex is closer than this to the scene (m).
    pub contact_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { contact_threshold: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityReport {
    pub non_collision: f64,
    pub contact: f64,
    pub per_frame_non_collision: Vec<f64>,
    pub per_frame_contact: Vec<bool>,
}

fn frame_distances(frame: &BodyFrame, scene: &SceneModel) -> Vec<f64> {
    frame.vertices.iter().map(|p| scene.sample(p).0).collect()
}

fn free_fraction(phi: &[f64]) -> f64 {
    phi.iter().filter(|&&d| d > -NON_COLLISION_TOLERANCE).count() as f64 / phi.len() as f64
}

fn touches(phi: &[f64], threshold: f64) -> bool {
    phi.iter().any(|d| d.abs() < threshold)
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// Per-frame fraction of vertices outside the scene geometry, and its mean.
pub fn non_collision_score(placed: &Animation, scene: &SceneModel) -> (Vec<f64>, f64) {
    let per_frame: Vec<f64> = placed.frames().par_iter().map(|f| free_fraction(&frame_distances(f, scene))).collect();
    let m = mean(per_frame.iter().copied());
    (per_frame, m)
}

/// Per-frame contact flags and the fraction of frames in contact.
pub fn contact_score(placed: &Animation, scene: &SceneModel, threshold: f64) -> (Vec<bool>, f64) {
    let per_frame: Vec<bool> = placed.frames().par_iter().map(|f| touches(&frame_distances(f, scene), threshold)).collect();
    let m = mean(per_frame.iter().map(|&c| if c { 1.0 } else { 0.0 }));
    (per_frame, m)
}

/// Both scores for an animation already transformed into scene coordinates.
pub fn evaluate(placed: &Animation, scene: &SceneModel, config: &MetricsConfig) -> PlausibilityReport {
    let (per_frame_non_collision, per_frame_contact): (Vec<f64>, Vec<bool>) = placed
        .frames()
        .par_iter()
        .map(|f| {
            let phi = frame_distances(f, scene);
            (free_fraction(&phi), touches(&phi, config.contact_threshold))
        })
        .unzip();
    PlausibilityReport {
        non_collision: mean(per_frame_non_collision.iter().copied()),
        contact: mean(per_frame_contact.iter().map(|&c| if c { 1.0 } else { 0.0 })),
        per_frame_non_collision,
        per_frame_contact,
    }
}
