//! Keyframe-weighted placement of an animation in a scene.
//!
//! The objective sums, over frames, the frame weight times an affordance loss
//! (contact-weighted distance to the scene plus a semantic-mismatch penalty) and
//! a penetration loss. Seeds cover the floor on a grid with twelve yaws; the
//! best ten are refined with a compass pattern search over `(τx, τy, τz, θ)`.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::animation::{Animation, BodyFrame, FeatureMap, PoseTransform};
use crate::scene::SceneModel;

pub use crate::animation::PlacementPose;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("scene floor rectangle is empty")]
    EmptyFloor,
    #[error("{weights} weights for {frames} frames")]
    WeightCount { weights: usize, frames: usize },
    #[error("features: {0}")]
    Features(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_sem: f64,
    pub lambda_pen: f64,
    /// Distances beyond this (m) stop adding to the affordance loss.
    pub contact_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_sem: 1.0, lambda_pen: 10.0, contact_clamp: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacementConfig {
    pub spacing: f64,
    pub yaw_count: usize,
    pub prospects: usize,
    /// Initial pattern-search steps: τx, τy, τz in meters, then θ in degrees.
    pub initial_steps: [f64; 4],
    pub min_translation_step: f64,
    pub min_yaw_step_deg: f64,
    /// Refinement budget per prospect.
    pub max_evaluations: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            spacing: 0.5,
            yaw_count: 12,
            prospects: 10,
            initial_steps: [0.25, 0.25, 0.10, 15.0],
            min_translation_step: 0.01,
            min_yaw_step_deg: 1.0,
            max_evaluations: 200,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<(), PlacementError> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(PlacementError::InvalidSpacing(self.spacing));
        }
        if self.yaw_count == 0 || self.prospects == 0 {
            return Err(PlacementError::InvalidConfig("yaw_count and prospects must be positive".into()));
        }
        let positive = self.initial_steps.iter().chain([&self.min_translation_step, &self.min_yaw_step_deg]);
        if positive.into_iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(PlacementError::InvalidConfig("pattern-search steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub afford: f64,
    pub pen: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    pub pose: PlacementPose,
    pub energy: f64,
    pub per_frame: Vec<FrameLoss>,
    pub evaluations: usize,
}

/// Best refined placement plus every refined prospect, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub best: PlacementResult,
    pub prospects: Vec<PlacementResult>,
    pub seeds: usize,
    pub evaluations: usize,
}

/// Affordance and penetration losses of vertices already placed in the scene.
fn losses_of(
    points: impl Iterator<Item = Point3<f64>>,
    contact: &[f32],
    semantic: &[u16],
    scene: &SceneModel,
    loss: &LossConfig,
) -> (f64, f64) {
    let mut afford = 0.0;
    let mut pen = 0.0;
    for ((p, &fc), &fs) in points.zip(contact).zip(semantic) {
        let (phi, sem) = scene.sample(&p);
        let fc = fc as f64;
        if fc > 0.0 {
            afford += fc * phi.abs().min(loss.contact_clamp);
            if sem != fs {
                afford += loss.lambda_sem * fc;
            }
        }
        if phi < 0.0 {
            pen -= phi;
        }
    }
    let v = contact.len() as f64;
    (afford / v, loss.lambda_pen * pen / v)
}

/// Losses of one frame as it stands in scene coordinates.
pub fn frame_losses(frame: &BodyFrame, contact: &[f32], semantic: &[u16], scene: &SceneModel, loss: &LossConfig) -> (f64, f64) {
    assert_eq!(frame.vertices.len(), contact.len(), "feature row does not match the frame");
    losses_of(frame.vertices.iter().copied(), contact, semantic, scene, loss)
}

/// Evaluates the placement objective for many poses of one animation.
///
/// Frames with zero weight are skipped, and [`Evaluator::energy_below`] stops
/// as soon as the partial sum reaches a bound. Every term is non-negative, so both
/// give the same value as a full evaluation.
pub struct Evaluator<'a> {
    anim: &'a Animation,
    features: &'a FeatureMap,
    weights: &'a [f64],
    scene: &'a SceneModel,
    loss: LossConfig,
    /// Frame indices by descending weight, zero weights dropped.
    order: Vec<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        anim: &'a Animation,
        features: &'a FeatureMap,
        weights: &'a [f64],
        scene: &'a SceneModel,
        loss: LossConfig,
    ) -> Result<Self, PlacementError> {
        if weights.len() != anim.frame_count() {
            return Err(PlacementError::WeightCount { weights: weights.len(), frames: anim.frame_count() });
        }
        features.check_shape(anim).map_err(|e| PlacementError::Features(e.to_string()))?;
        let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
        Ok(Evaluator { anim, features, weights, scene, loss, order })
    }

    fn frame(&self, t: &PoseTransform, i: usize) -> (f64, f64) {
        let frame = self.anim.frame(i);
        losses_of(
            frame.vertices.iter().map(|p| t.apply(p)),
            self.features.contact_row(i),
            self.features.semantic_row(i),
            self.scene,
            &self.loss,
        )
    }

    /// Full per-frame breakdown. `energy` sums in frame order.
    pub fn evaluate(&self, pose: &PlacementPose) -> PlacementResult {
        let t = self.anim.pose_transform(pose);
        let per_frame: Vec<FrameLoss> = (0..self.anim.frame_count())
            .map(|i| {
                let (afford, pen) = self.frame(&t, i);
                FrameLoss { afford, pen, weight: self.weights[i] }
            })
            .collect();
        let energy = per_frame.iter().map(|f| f.weight * (f.afford + f.pen)).sum();
        PlacementResult { pose: *pose, energy, per_frame, evaluations: 1 }
    }

    pub fn energy(&self, pose: &PlacementPose) -> f64 {
        self.energy_below(pose, f64::INFINITY).expect("an infinite bound is never reached")
    }

    /// The energy if it is below `bound`, else `None`.
    pub fn energy_below(&self, pose: &PlacementPose, bound: f64) -> Option<f64> {
        let t = self.anim.pose_transform(pose);
        let mut terms = vec![0.0; self.anim.frame_count()];
        let mut partial = 0.0;
        for &i in &self.order {
            let (afford, pen) = self.frame(&t, i);
            terms[i] = self.weights[i] * (afford + pen);
            partial += terms[i];
            if partial >= bound {
                return None;
            }
        }
        // Re-add in frame order so the value matches `evaluate` bit for bit.
        let energy: f64 = terms.iter().sum();
        (energy < bound).then_some(energy)
    }
}

/// The placement objective at one pose.
pub fn energy(
    anim: &Animation,
    features: &FeatureMap,
    weights: &[f64],
    scene: &SceneModel,
    pose: &PlacementPose,
    loss: &LossConfig,
) -> Result<PlacementResult, PlacementError> {
    Ok(Evaluator::new(anim, features, weights, scene, *loss)?.evaluate(pose))
}

/// Translation that puts the animation's mean pelvis ground position at `(x, y)`
/// under yaw `theta`, with its lowest vertex on the floor.
pub fn pose_at(anim: &Animation, scene: &SceneModel, xy: [f64; 2], theta: f64) -> PlacementPose {
    let pivot = anim.pivot();
    let c = anim.pelvis_centroid_xy();
    let (s, co) = theta.sin_cos();
    let (dx, dy) = (c[0] - pivot[0], c[1] - pivot[1]);
    let rotated = [co * dx - s * dy + pivot[0], s * dx + co * dy + pivot[1]];
    PlacementPose::new(
        [xy[0] - rotated[0], xy[1] - rotated[1], scene.floor_height() - anim.min_z()],
        theta,
    )
}

/// Inclusive grid positions along one floor axis.
fn axis_positions(min: f64, max: f64, spacing: f64) -> Vec<f64> {
    let count = ((max - min) / spacing + 1e-9).floor() as usize + 1;
    (0..count).map(|i| min + i as f64 * spacing).collect()
}

/// Grid positions over the floor rectangle (x fastest), each with `yaw_count`
/// evenly spaced yaws starting at 0.
pub fn seed_grid_with(
    scene: &SceneModel,
    anim: &Animation,
    spacing: f64,
    yaw_count: usize,
) -> Result<Vec<PlacementPose>, PlacementError> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(PlacementError::InvalidSpacing(spacing));
    }
    let (min, max) = scene.floor_rect();
    if !(max[0] >= min[0] && max[1] >= min[1]) || (max[0] - min[0]) * (max[1] - min[1]) <= 0.0 {
        return Err(PlacementError::EmptyFloor);
    }
    let xs = axis_positions(min[0], max[0], spacing);
    let ys = axis_positions(min[1], max[1], spacing);
    let mut seeds = Vec::with_capacity(xs.len() * ys.len() * yaw_count);
    for &y in &ys {
        for &x in &xs {
            for k in 0..yaw_count {
                let theta = std::f64::consts::TAU * k as f64 / yaw_count as f64;
                seeds.push(pose_at(anim, scene, [x, y], theta));
            }
        }
    }
    Ok(seeds)
}

/// Seeds every 30° at each grid position.
pub fn seed_grid(scene: &SceneModel, anim: &Animation, spacing: f64) -> Result<Vec<PlacementPose>, PlacementError> {
    seed_grid_with(scene, anim, spacing, 12)
}

/// Opportunistic compass search: poll ± each coordinate, keep any improvement,
/// halve every step after a sweep without one.
fn refine(eval: &Evaluator, start: PlacementPose, start_energy: f64, config: &PlacementConfig) -> (PlacementPose, f64, usize) {
    let mut x = [start.tau[0], start.tau[1], start.tau[2], start.theta];
    let mut best = start_energy;
    let mut steps = config.initial_steps;
    steps[3] = steps[3].to_radians();
    let min_yaw = config.min_yaw_step_deg.to_radians();
    let mut evaluations = 0;
    'search: loop {
        let mut improved = false;
        for axis in 0..4 {
            for sign in [1.0, -1.0] {
                if evaluations >= config.max_evaluations {
                    break 'search;
                }
                let mut candidate = x;
                candidate[axis] += sign * steps[axis];
                let pose = PlacementPose::new([candidate[0], candidate[1], candidate[2]], candidate[3]);
                evaluations += 1;
                if let Some(e) = eval.energy_below(&pose, best) {
                    x = [pose.tau[0], pose.tau[1], pose.tau[2], pose.theta];
                    best = e;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s /= 2.0);
            if steps[..3].iter().all(|&s| s < config.min_translation_step) && steps[3] < min_yaw {
                break;
            }
        }
    }
    (PlacementPose::new([x[0], x[1], x[2]], x[3]), best, evaluations)
}

/// Scores every seed, refines the lowest-energy prospects, and returns the best.
/// Ties are broken by seed order, so results do not depend on thread count.
pub fn place(
    anim: &Animation,
    features: &FeatureMap,
    weights: &[f64],
    scene: &SceneModel,
    loss: &LossConfig,
    config: &PlacementConfig,
) -> Result<PlacementOutcome, PlacementError> {
    config.validate()?;
    let eval = Evaluator::new(anim, features, weights, scene, *loss)?;
    let seeds = seed_grid_with(scene, anim, config.spacing, config.yaw_count)?;
    let energies: Vec<f64> = seeds.par_iter().map(|p| eval.energy(p)).collect();
    let mut ranked: Vec<usize> = (0..seeds.len()).collect();
    ranked.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]).then(a.cmp(&b)));
    ranked.truncate(config.prospects);

    let mut prospects: Vec<(PlacementResult, usize)> = ranked
        .par_iter()
        .enumerate()
        .map(|(rank, &i)| {
            let (pose, _, evaluations) = refine(&eval, seeds[i], energies[i], config);
            let mut result = eval.evaluate(&pose);
            result.evaluations = evaluations + 1;
            (result, rank)
        })
        .collect();
    prospects.sort_by(|a, b| a.0.energy.total_cmp(&b.0.energy).then(a.1.cmp(&b.1)));
    let evaluations = seeds.len() + prospects.iter().map(|p| p.0.evaluations - 1).sum::<usize>();
    let prospects: Vec<PlacementResult> = prospects.into_iter().map(|p| p.0).collect();
    Ok(PlacementOutcome { best: prospects[0].clone(), prospects, seeds: seeds.len(), evaluations })
}
