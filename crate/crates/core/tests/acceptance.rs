//! Acceptance suite. Each test prints one `criterion N ... PASS|FAIL` line
//! before asserting; `-- --nocapture` adds per-scene and per-clip detail.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{Point3, Vector3};
use paak_core::animation::{synth_clip, transform, ClipKind, ClipParams, PlacementPose, SynthClip, BODY_VERTEX_COUNT};
use paak_core::geometry::primitives::{box_mesh, icosphere};
use paak_core::geometry::{bake_sdf, build_bvh, nearest_surface_brute_force, Aabb, BakeOptions, TriangleMesh};
use paak_core::keyframes::{
    compute_geometric, compute_keyframes, farthest_point_order, geometric_keyframes, rank_weights, KeyframeModel,
    ModelDims, ModelInput,
};
use paak_core::metrics::evaluate;
use paak_core::pipeline::{run_pipeline, train_default_model};
use paak_core::placement::place;
use paak_core::scene::{synth_scene, BoxSpec, SceneModel, SceneOptions, SceneRecipe};
use paak_core::{
    Animation, FeatureMap, LossConfig, MetricsConfig, PipelineConfig, PlacementConfig, SemanticVocabulary, WeightMode,
    WeightingConfig,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

// Criterion 1: brute-force oracle.
const ORACLE_STEP: f64 = 0.02;
const ORACLE_YAWS: usize = 360;
const ORACLE_Z_OFFSETS: [f64; 3] = [-0.02, 0.0, 0.02];
const ORACLE_RATIO: f64 = 1.05;
const ORACLE_SELF_CHECK: f64 = 1e-9;
// Criterion 2: plausibility parity.
const MIN_NON_COLLISION: f64 = 0.95;
const MIN_CONTACT: f64 = 0.75;
const PARITY: f64 = 0.05;
// Criterion 3: seat behavior.
const SEAT_RADIUS: f64 = 0.3;
const ACTIVE_MIN_SEATED: usize = 8;
const UNIFORM_MIN_MISSES: usize = 3;
// Criterion 4: keyframe properties.
const KEYFRAME_TOL: f64 = 1e-9;
// Criterion 5: gradient check.
const GRAD_EPS: f64 = 1e-4;
const GRAD_MAX_REL: f64 = 1e-3;
const GRAD_REL_FLOOR: f64 = 1e-6;
// Criterion 6: geometry.
const SDF_CELL: f64 = 0.05;
const SDF_SAMPLES: usize = 1000;
const BVH_TOL: f64 = 1e-9;

fn vocab() -> &'static SemanticVocabulary {
    static V: OnceLock<SemanticVocabulary> = OnceLock::new();
    V.get_or_init(SemanticVocabulary::default)
}

fn id(name: &str) -> u16 {
    vocab().id(name).unwrap()
}

/// The model the pipeline trains by default.
fn model() -> &'static KeyframeModel {
    static M: OnceLock<KeyframeModel> = OnceLock::new();
    M.get_or_init(|| train_default_model(&PipelineConfig::default(), vocab(), BODY_VERTEX_COUNT).unwrap())
}

fn scene(recipe: &SceneRecipe) -> SceneModel {
    synth_scene(recipe, vocab(), &SceneOptions { cell_size: 0.05, ..Default::default() }).unwrap()
}

fn clip(params: &ClipParams, seat: &str) -> SynthClip {
    synth_clip(params, vocab().floor_id(), id(seat)).unwrap()
}

/// Writes past the test harness's output capture so the verdict shows in every run.
fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
}

/// Independent evaluation of the placement energy: the pose is parameterized by
/// where the pelvis-trajectory centroid lands, and each frame is transformed and
/// scored from scratch.
struct Oracle<'a> {
    anim: &'a Animation,
    features: &'a FeatureMap,
    weights: &'a [f64],
    scene: &'a SceneModel,
    loss: LossConfig,
    order: Vec<usize>,
    pivot: [f64; 2],
    centroid: [f64; 2],
}

impl<'a> Oracle<'a> {
    fn new(anim: &'a Animation, features: &'a FeatureMap, weights: &'a [f64], scene: &'a SceneModel) -> Self {
        let mut order: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
        order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));
        let p0 = anim.frame(0).pelvis;
        let n = anim.frame_count() as f64;
        let sum = anim.frames().iter().fold([0.0, 0.0], |s, f| [s[0] + f.pelvis.x, s[1] + f.pelvis.y]);
        Oracle {
            anim,
            features,
            weights,
            scene,
            loss: LossConfig::default(),
            order,
            pivot: [p0.x, p0.y],
            centroid: [sum[0] / n, sum[1] / n],
        }
    }

    /// Translation that puts the centroid at `xy` after yawing by `theta` about the pivot.
    fn tau(&self, xy: [f64; 2], theta: f64, z: f64) -> [f64; 3] {
        let (s, c) = theta.sin_cos();
        let d = [self.centroid[0] - self.pivot[0], self.centroid[1] - self.pivot[1]];
        [xy[0] - self.pivot[0] - (c * d[0] - s * d[1]), xy[1] - self.pivot[1] - (s * d[0] + c * d[1]), z]
    }

    /// Weighted loss of frame `i` under `(theta, tau)`.
    fn frame_energy(&self, i: usize, sin: f64, cos: f64, tau: [f64; 3]) -> f64 {
        let [px, py] = self.pivot;
        let contact = self.features.contact_row(i);
        let semantic = self.features.semantic_row(i);
        let (mut afford, mut pen) = (0.0, 0.0);
        for (k, p) in self.anim.frame(i).vertices.iter().enumerate() {
            let (dx, dy) = (p.x - px, p.y - py);
            let q = Point3::new(cos * dx - sin * dy + px + tau[0], sin * dx + cos * dy + py + tau[1], p.z + tau[2]);
            let (phi, label) = self.scene.sample(&q);
            let fc = contact[k] as f64;
            if fc > 0.0 {
                afford += fc * phi.abs().min(self.loss.contact_clamp);
                if label != semantic[k] {
                    afford += self.loss.lambda_sem * fc;
                }
            }
            pen += (-phi).max(0.0);
        }
        self.weights[i] * (afford + self.loss.lambda_pen * pen) / self.anim.vertex_count() as f64
    }

    /// Energy of `(theta, tau)`, or `None` once the partial sum reaches `bound`.
    fn energy_below(&self, theta: f64, tau: [f64; 3], bound: f64) -> Option<f64> {
        let (sin, cos) = theta.sin_cos();
        let mut total = 0.0;
        for &i in &self.order {
            total += self.frame_energy(i, sin, cos, tau);
            if total >= bound {
                return None;
            }
        }
        Some(total)
    }

    /// Visits the frames that usually cost most first, so bounded sums stop early.
    fn prioritize(&mut self) {
        let (min, max) = self.scene.floor_rect();
        let z0 = self.scene.floor_height() - self.anim.min_z();
        let mut mean = vec![0.0; self.weights.len()];
        for k in 0..64 {
            let u = [(k % 8) as f64 / 7.0, (k / 8) as f64 / 7.0];
            let theta = (k as f64 * 47.0).to_radians();
            let tau = self.tau([min[0] + u[0] * (max[0] - min[0]), min[1] + u[1] * (max[1] - min[1])], theta, z0);
            let (sin, cos) = theta.sin_cos();
            for &i in &self.order {
                mean[i] += self.frame_energy(i, sin, cos, tau);
            }
        }
        self.order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
    }

    /// Lowest grid energy strictly below `bound`, if any.
    fn grid_minimum(&self, bound: f64) -> Option<(f64, [f64; 3], f64)> {
        let (min, max) = self.scene.floor_rect();
        let nx = ((max[0] - min[0]) / ORACLE_STEP + 1e-9).floor() as usize + 1;
        let ny = ((max[1] - min[1]) / ORACLE_STEP + 1e-9).floor() as usize + 1;
        let z0 = self.scene.floor_height() - self.anim.min_z();
        (0..ORACLE_YAWS)
            .into_par_iter()
            .map(|yaw| {
                let theta = (yaw as f64).to_radians();
                let mut best: Option<(f64, [f64; 3], f64)> = None;
                for j in 0..ny {
                    for i in 0..nx {
                        let xy = [min[0] + i as f64 * ORACLE_STEP, min[1] + j as f64 * ORACLE_STEP];
                        for dz in ORACLE_Z_OFFSETS {
                            let tau = self.tau(xy, theta, z0 + dz);
                            let limit = best.map_or(bound, |b| b.0);
                            if let Some(e) = self.energy_below(theta, tau, limit) {
                                best = Some((e, tau, theta));
                            }
                        }
                    }
                }
                best
            })
            .reduce(|| None, |a, b| match (a, b) {
                (Some(x), Some(y)) => Some(if y.0 < x.0 { y } else { x }),
                (x, None) => x,
                (None, y) => y,
            })
    }
}

#[test]
fn criterion_1_placement_against_brute_force() {
    let cases: Vec<(SceneRecipe, ClipParams, &str, WeightMode)> = vec![
        (
            SceneRecipe::floor_only([0.0, 0.0], [0.4, 0.4]).with_box("chair", [0.2, 0.2], [0.5, 0.5, 0.45], 0.0),
            ClipParams::sit(4.0, 15.0, 0.45),
            "chair",
            WeightMode::Geometric,
        ),
        (
            SceneRecipe::floor_only([0.0, 0.0], [0.4, 0.4])
                .with_box("chair", [0.1, 0.3], [0.45, 0.45, 0.42], 25.0)
                .with_box("table", [0.9, 0.3], [0.6, 1.0, 0.75], 0.0),
            ClipParams::walk_then_sit(4.0, 15.0, 0.4, 0.42),
            "chair",
            WeightMode::Uniform,
        ),
        (
            SceneRecipe::floor_only([0.0, 0.0], [0.4, 0.4])
                .with_box("table", [-0.5, 0.2], [0.6, 0.6, 0.75], 0.0)
                .with_box("sofa", [0.2, 1.1], [1.6, 0.8, 0.4], 0.0)
                .with_box("object", [0.8, -0.3], [0.3, 0.3, 0.3], 40.0),
            ClipParams::walk(4.0, 15.0, 0.3),
            "chair",
            WeightMode::Uniform,
        ),
        (
            SceneRecipe::floor_only([0.0, 0.0], [0.4, 0.4]).with_box("bed", [0.2, 1.3], [1.4, 2.0, 0.5], 0.0),
            ClipParams::jump(4.0, 15.0, 0.3),
            "chair",
            WeightMode::Geometric,
        ),
        (
            SceneRecipe::floor_only([0.0, 0.0], [0.4, 0.4])
                .with_box("sofa", [0.3, 0.2], [0.9, 0.6, 0.4], 30.0)
                .with_box("table", [0.3, 1.1], [0.8, 0.5, 0.7], 30.0),
            ClipParams { idle: 1.0, ..ClipParams::sit(4.0, 15.0, 0.4) },
            "sofa",
            WeightMode::Uniform,
        ),
    ];

    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    let mut pass = true;
    for (k, (recipe, params, seat, mode)) in cases.iter().enumerate() {
        let s = scene(recipe);
        let c = clip(params, seat);
        assert_eq!(c.animation.frame_count(), 60);
        let w = compute_geometric(&c.animation, &c.features, vocab(), &WeightingConfig::default()).unwrap().for_mode(*mode);
        let out = place(&c.animation, &c.features, &w, &s, &LossConfig::default(), &PlacementConfig::default()).unwrap();
        let mut oracle = Oracle::new(&c.animation, &c.features, &w, &s);
        oracle.prioritize();
        let started = std::time::Instant::now();

        // The oracle reproduces the library's energy at the returned pose.
        let pose = out.best.pose;
        let again = oracle.energy_below(pose.theta, pose.tau, f64::INFINITY).unwrap();
        let agrees = (again - out.best.energy).abs() <= ORACLE_SELF_CHECK * out.best.energy.max(1.0);

        // Anything the grid finds below place()'s energy is a candidate minimum.
        let found = oracle.grid_minimum(out.best.energy);
        let ratio = found.map_or(1.0, |(e, _, _)| out.best.energy / e);
        worst = worst.max(ratio);
        let ok = agrees && ratio <= ORACLE_RATIO;
        pass &= ok;
        details.push(format!(
            "scene {k}: place {:.5}, grid min {}, ratio {ratio:.4}, {:.0} s{}",
            out.best.energy,
            found.map_or(format!(">= {:.5}", out.best.energy), |(e, _, _)| format!("{e:.5}")),
            started.elapsed().as_secs_f64(),
            if agrees { "" } else { ", oracle disagrees at returned pose" }
        ));
    }
    for d in &details {
        println!("  {d}");
    }
    report(1, "placement within 5% of brute force", pass, &format!("worst ratio {worst:.4}, limit {ORACLE_RATIO}"));
    assert!(pass, "{details:?}");
}

/// Desk-scale rooms for the plausibility suite.
fn desk_rooms() -> Vec<SceneRecipe> {
    vec![
        SceneRecipe::floor_only([0.0, 0.0], [3.0, 2.5])
            .with_box("table", [1.5, 1.9], [1.2, 0.7, 0.75], 0.0)
            .with_box("chair", [1.5, 1.2], [0.5, 0.5, 0.45], 0.0),
        SceneRecipe::floor_only([0.0, 0.0], [3.0, 3.0])
            .with_box("sofa", [0.6, 1.5], [0.8, 1.8, 0.42], 0.0)
            .with_box("table", [1.6, 1.5], [0.6, 1.0, 0.45], 0.0),
        SceneRecipe::floor_only([0.0, 0.0], [3.5, 2.5])
            .with_box("bed", [2.5, 1.25], [1.6, 2.0, 0.5], 0.0)
            .with_box("chair", [0.8, 0.8], [0.5, 0.5, 0.45], 30.0)
            .with_box("object", [0.8, 2.0], [0.4, 0.4, 0.9], 0.0),
        SceneRecipe::floor_only([0.0, 0.0], [3.0, 3.0])
            .with_box("chair", [1.0, 1.0], [0.5, 0.5, 0.47], 45.0)
            .with_box("table", [2.0, 2.0], [0.8, 0.8, 0.75], 45.0),
    ]
}

fn suite_clip(i: usize) -> (usize, ClipParams, &'static str) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
    let kind = [ClipKind::Sit, ClipKind::WalkThenSit, ClipKind::Walk, ClipKind::Jump][i % 4];
    let (room, seat) = [(0, "chair"), (1, "sofa"), (2, "bed"), (3, "chair"), (2, "chair")][i % 5];
    let params = ClipParams {
        kind,
        duration: rng.gen_range(3.0..4.0),
        fps: 15.0,
        speed: rng.gen_range(0.7..1.1),
        seat_height: match seat {
            "sofa" => 0.42,
            "bed" => 0.5,
            _ => 0.45,
        },
        jump_height: rng.gen_range(0.15..0.3),
        idle: rng.gen_range(0.0..0.8),
        heading_deg: rng.gen_range(0.0..360.0),
        seed: rng.gen(),
    };
    (room, params, seat)
}

#[test]
fn criterion_2_plausibility_parity_on_desk_suite() {
    let rooms: Vec<SceneModel> = desk_rooms().iter().map(scene).collect();
    let mut sums = [[0.0; 2]; 2];
    let n = 20;
    for i in 0..n {
        let (room, params, seat) = suite_clip(i);
        let c = clip(&params, seat);
        let w = compute_keyframes(&c.animation, &c.features, vocab(), &WeightingConfig::default(), Some(model())).unwrap();
        for (m, mode) in [WeightMode::Active, WeightMode::Uniform].into_iter().enumerate() {
            let k = w.for_mode(mode);
            let out = place(&c.animation, &c.features, &k, &rooms[room], &LossConfig::default(), &PlacementConfig::default())
                .unwrap();
            let r = evaluate(&transform(&c.animation, &out.best.pose), &rooms[room], &MetricsConfig::default());
            sums[m][0] += r.non_collision;
            sums[m][1] += r.contact;
        }
    }
    let [active, uniform] = sums.map(|s| s.map(|x| x / n as f64));
    let pass = active[0] >= MIN_NON_COLLISION
        && active[1] >= MIN_CONTACT
        && (active[0] - uniform[0]).abs() <= PARITY
        && (active[1] - uniform[1]).abs() <= PARITY;
    report(
        2,
        "plausibility parity on a 20-clip desk suite",
        pass,
        &format!(
            "active non_collision {:.3} contact {:.3}; uniform non_collision {:.3} contact {:.3}",
            active[0], active[1], uniform[0], uniform[1]
        ),
    );
    assert!(pass);
}

/// A chair under a low soffit: sitting fits, standing at the chair hits the head.
fn alcove(center: [f64; 2], yaw_deg: f64, base: f64, half: f64) -> SceneRecipe {
    let mut r = SceneRecipe::floor_only([center[0] - 2.0, center[1] - 2.0], [center[0] + 2.0, center[1] + 2.0])
        .with_box("chair", center, [0.5, 0.5, 0.45], yaw_deg);
    r.objects.push(BoxSpec {
        label: "object".into(),
        center,
        size: [2.0 * half, 2.0 * half, 2.2 - base],
        yaw_deg,
        base: Some(base),
    });
    r
}

#[test]
fn criterion_3_active_weights_seat_the_sitter() {
    let mut seated = [0usize; 2];
    let mut lines = Vec::new();
    for i in 0..10u64 {
        let f = i as f64;
        let center = [1.5 + 0.2 * (i % 3) as f64, 1.2 + 0.15 * (i % 4) as f64];
        let s = scene(&alcove(center, 17.0 * f, 1.6 + 0.01 * (i % 2) as f64, 1.0 + 0.05 * (i % 5) as f64));
        let idle = 2.5 + 0.25 * f;
        let params = ClipParams { idle, seed: i, heading_deg: 37.0 * f, ..ClipParams::sit(idle + 3.5, 10.0, 0.45) };
        let c = clip(&params, "chair");
        let w = compute_keyframes(&c.animation, &c.features, vocab(), &WeightingConfig::default(), Some(model())).unwrap();
        let sit = c.phase("seated").unwrap().clone();
        let mut dists = [0.0; 2];
        for (m, mode) in [WeightMode::Active, WeightMode::Uniform].into_iter().enumerate() {
            let k = w.for_mode(mode);
            let out = place(&c.animation, &c.features, &k, &s, &LossConfig::default(), &PlacementConfig::default()).unwrap();
            let placed = transform(&c.animation, &out.best.pose);
            let pelvis = placed.frame((sit.start + sit.end) / 2).pelvis;
            dists[m] = ((pelvis.x - center[0]).powi(2) + (pelvis.y - center[1]).powi(2)).sqrt();
            if dists[m] <= SEAT_RADIUS {
                seated[m] += 1;
            }
        }
        lines.push(format!("clip {i}: active {:.3} m, uniform {:.3} m", dists[0], dists[1]));
    }
    for l in &lines {
        println!("  {l}");
    }
    let misses = 10 - seated[1];
    let pass = seated[0] >= ACTIVE_MIN_SEATED && misses >= UNIFORM_MIN_MISSES;
    report(
        3,
        "active seats the sitter where uniform does not",
        pass,
        &format!("active seated {}/10 (need {ACTIVE_MIN_SEATED}), uniform missed {misses}/10 (need {UNIFORM_MIN_MISSES})", seated[0]),
    );
    assert!(pass);
}

fn run_property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(RunnerConfig { cases, failure_persistence: None, ..RunnerConfig::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn sit_params() -> impl Strategy<Value = ClipParams> {
    (any::<bool>(), 3.0..5.0f64, 10.0..30.0f64, 0.7..1.3f64, 0.4..0.5f64, 0.0..1.5f64, 0.0..360.0f64, any::<u64>()).prop_map(
        |(walk, duration, fps, speed, seat_height, idle, heading_deg, seed)| ClipParams {
            kind: if walk { ClipKind::WalkThenSit } else { ClipKind::Sit },
            duration: duration + idle,
            fps,
            speed,
            seat_height,
            idle,
            heading_deg,
            seed,
            ..Default::default()
        },
    )
}

#[test]
fn criterion_4_keyframe_properties() {
    let cfg = WeightingConfig::default();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= KEYFRAME_TOL * x.abs().max(1.0));
    let series = prop::collection::vec(0.0..10.0f64, 2..80);

    let scale = run_property(256, (series.clone(), 1e-3..1e3f64, 1e-3..1e3f64), |(w, a, b)| {
        let w_m: Vec<f64> = w.iter().rev().copied().collect();
        let base = geometric_keyframes(&w, &w_m, &cfg);
        let scaled = geometric_keyframes(&w.iter().map(|x| a * x).collect::<Vec<_>>(), &w_m.iter().map(|x| b * x).collect::<Vec<_>>(), &cfg);
        prop_assert!(close(&base, &scaled));
        Ok(())
    });

    let rigid = run_property(24, (sit_params(), -5.0..5.0f64, -5.0..5.0f64, -1.0..1.0f64, 0.0..std::f64::consts::TAU), |(p, x, y, z, theta)| {
        let c = clip(&p, "chair");
        let base = compute_geometric(&c.animation, &c.features, vocab(), &cfg).unwrap();
        let moved = transform(&c.animation, &PlacementPose::new([x, y, z], theta));
        let w = compute_geometric(&moved, &c.features, vocab(), &cfg).unwrap();
        prop_assert_eq!(&w.w_s, &base.w_s);
        prop_assert!(close(&w.k_g, &base.k_g));
        Ok(())
    });

    let guards = run_property(256, series.clone(), |w| {
        let zeros = vec![0.0; w.len()];
        let only_motion = geometric_keyframes(&zeros, &w, &cfg);
        let max = w.iter().copied().fold(0.0, f64::max);
        let expect: Vec<f64> = w.iter().map(|x| if max > 0.0 { cfg.lambda_m * x / max } else { 0.0 }).collect();
        prop_assert!(close(&only_motion, &expect));
        let only_semantic = geometric_keyframes(&w, &zeros, &cfg);
        prop_assert!(only_semantic.iter().all(|k| k.is_finite() && *k <= cfg.lambda_s + KEYFRAME_TOL));
        prop_assert_eq!(geometric_keyframes(&zeros, &zeros, &cfg), zeros);
        Ok(())
    });

    let argmax = run_property(32, sit_params(), |p| {
        let c = clip(&p, "chair");
        let w = compute_geometric(&c.animation, &c.features, vocab(), &cfg).unwrap();
        let peak = (0..w.k_g.len()).max_by(|&a, &b| w.k_g[a].total_cmp(&w.k_g[b]).then(b.cmp(&a))).unwrap();
        let in_sit = ["sit_down", "seated"].iter().any(|n| c.phase(n).is_some_and(|s| s.contains(peak)));
        prop_assert!(in_sit, "peak {} outside {:?}", peak, c.phases);
        Ok(())
    });

    let results = [("scale invariance", scale), ("rigid invariance", rigid), ("zero-max guards", guards), ("argmax in sit segment", argmax)];
    let failed: Vec<String> = results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    let pass = failed.is_empty();
    report(4, "keyframe property suite", pass, &if pass { "4 properties green".to_string() } else { failed.join("; ") });
    assert!(pass);
}

#[test]
fn criterion_5_gradient_check() {
    let dims = ModelDims { window: 4, m1: 4, m2: 4, m3: 4, ..ModelDims::new(vocab().len(), 8) };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = KeyframeModel::init(dims, 17);
    let len = dims.window * dims.vertices * dims.features;
    let samples: Vec<(ModelInput, Vec<f64>)> = (0..3)
        .map(|_| {
            let x = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            (ModelInput { x }, (0..dims.window).map(|_| rng.gen_range(0.0..1.0)).collect())
        })
        .collect();
    let batch: Vec<(&ModelInput, &[f64])> = samples.iter().map(|(x, t)| (x, t.as_slice())).collect();
    let (_, grad) = model.gradient(&batch).unwrap();
    let mean_loss = |m: &KeyframeModel| samples.iter().map(|(x, t)| m.loss(x, t).unwrap()).sum::<f64>() / samples.len() as f64;
    let mut worst: f64 = 0.0;
    for k in 0..model.params().len() {
        let mut plus = model.clone();
        plus.params_mut()[k] += GRAD_EPS;
        let mut minus = model.clone();
        minus.params_mut()[k] -= GRAD_EPS;
        let numeric = (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * GRAD_EPS);
        let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(GRAD_REL_FLOOR);
        worst = worst.max(rel);
    }
    let pass = worst < GRAD_MAX_REL;
    report(5, "analytic gradient vs central differences", pass, &format!("{} parameters, max relative error {worst:.2e}", model.params().len()));
    assert!(pass);
}

fn box_sdf(p: &Point3<f64>, half: f64) -> f64 {
    let q = p.coords.abs() - Vector3::repeat(half);
    q.map(|c| c.max(0.0)).norm() + q.max().min(0.0)
}

fn random_soup(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let n = rng.gen_range(20..200);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    while triangles.len() < n {
        let c = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let tri: Vec<Point3<f64>> =
            (0..3).map(|_| Point3::from(c + Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)))).collect();
        if (tri[1] - tri[0]).cross(&(tri[2] - tri[0])).norm() < 1e-4 {
            continue;
        }
        let base = vertices.len() as u32;
        vertices.extend(tri);
        triangles.push([base, base + 1, base + 2]);
    }
    TriangleMesh::new(vertices, triangles).unwrap()
}

#[test]
fn criterion_6_sdf_and_bvh_fidelity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bake = |mesh: &TriangleMesh, half: f64| {
        let bounds = Aabb::new(Point3::new(-half, -half, -half), Point3::new(half, half, half));
        bake_sdf(mesh, &build_bvh(mesh).unwrap(), &bounds, SDF_CELL, &BakeOptions::default()).unwrap()
    };

    let sphere = icosphere(Point3::origin(), 1.0, 3);
    // Deepest point of any facet below the true sphere.
    let facet = sphere
        .triangles()
        .iter()
        .map(|t| 1.0 - (t.iter().map(|&v| sphere.vertices()[v as usize].coords).sum::<Vector3<f64>>() / 3.0).norm())
        .fold(0.0, f64::max);
    let grid = bake(&sphere, 1.6);
    let mut sphere_err: f64 = 0.0;
    for _ in 0..SDF_SAMPLES {
        let p = Point3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        sphere_err = sphere_err.max((grid.sample(&p).0 - (p.coords.norm() - 1.0)).abs());
    }

    let cube = box_mesh(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), 0.0);
    let grid = bake(&cube, 1.2);
    let mut cube_err: f64 = 0.0;
    for _ in 0..SDF_SAMPLES {
        let p = Point3::new(rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1), rng.gen_range(-1.1..1.1));
        cube_err = cube_err.max((grid.sample(&p).0 - box_sdf(&p, 0.5)).abs());
    }

    let mut bvh_err: f64 = 0.0;
    for _ in 0..20 {
        let mesh = random_soup(&mut rng);
        let bvh = build_bvh(&mesh).unwrap();
        for _ in 0..100 {
            let p = Point3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let fast = bvh.nearest_surface(&mesh, &p).distance;
            let slow = nearest_surface_brute_force(&mesh, &p).distance;
            bvh_err = bvh_err.max((fast - slow).abs());
        }
    }

    let pass = sphere_err < SDF_CELL + facet && cube_err < SDF_CELL && bvh_err <= BVH_TOL;
    report(
        6,
        "SDF and BVH fidelity",
        pass,
        &format!(
            "sphere err {sphere_err:.4} < {:.4}, cube err {cube_err:.4} < {SDF_CELL}, BVH err {bvh_err:.1e} <= {BVH_TOL:.0e}",
            SDF_CELL + facet
        ),
    );
    assert!(pass);
}

/// Greedy farthest-point order recomputed from scratch at every step.
fn brute_force_order(e: &[Vec<f64>]) -> Vec<usize> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let zero = vec![0.0; e[0].len()];
    let mut order: Vec<usize> = Vec::new();
    while order.len() < e.len() {
        let score = |i: usize| {
            if order.is_empty() {
                dist(&e[i], &zero)
            } else {
                order.iter().map(|&j| dist(&e[i], &e[j])).fold(f64::INFINITY, f64::min)
            }
        };
        let next = (0..e.len()).filter(|i| !order.contains(i)).fold(None, |best: Option<usize>, i| match best {
            Some(b) if score(b) >= score(i) => Some(b),
            _ => Some(i),
        });
        order.push(next.unwrap());
    }
    order
}

#[test]
fn criterion_7_diversity_determinism_and_structure() {
    let embeddings = prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), 2..40);
    let permutation = run_property(256, embeddings, |e| {
        let n = e.len();
        let order = farthest_point_order(&e);
        prop_assert_eq!(&farthest_point_order(&e), &order);
        prop_assert_eq!(&order, &brute_force_order(&e));
        let mut w = rank_weights(&order);
        w.sort_by(f64::total_cmp);
        for (k, x) in w.iter().enumerate() {
            prop_assert_eq!(*x, k as f64 / (n - 1) as f64);
        }
        Ok(())
    });

    let clusters = (prop::collection::vec(-1.0..1.0f64, 3), 1usize..10, 1usize..10, 0..1000u64);
    let two_clusters = run_property(256, clusters, |(dir, a, b, seed)| {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [vec![0.0; 3], dir.iter().map(|x| 10.0 * x / norm).collect::<Vec<_>>()];
        let mut e = Vec::new();
        let mut cluster = Vec::new();
        for (c, count) in [(0, a), (1, b)] {
            for _ in 0..count {
                e.push(centers[c].iter().map(|x| x + rng.gen_range(-0.3..0.3)).collect::<Vec<f64>>());
                cluster.push(c);
            }
        }
        let order = farthest_point_order(&e);
        prop_assert_eq!(&order[..2], &brute_force_order(&e)[..2]);
        prop_assert_ne!(cluster[order[0]], cluster[order[1]]);
        Ok(())
    });

    let failed: Vec<String> = [("rank permutation", permutation), ("two clusters", two_clusters)]
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let pass = failed.is_empty();
    report(7, "diversity ranks and cluster alternation", pass, &if pass { "both properties green".to_string() } else { failed.join("; ") });
    assert!(pass);
}

const ROOM: &str = r#"
[floor]
min = [0.0, 0.0]
max = [3.0, 3.0]

[[objects]]
label = "chair"
center = [1.5, 1.5]
size = [0.5, 0.5, 0.45]
yaw_deg = 20.0

[[objects]]
label = "table"
center = [1.5, 2.3]
size = [1.0, 0.6, 0.75]
"#;

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    ["weights.json", "result.json", "report.json"].iter().map(|n| (n.to_string(), fs::read(dir.join(n)).unwrap())).collect()
}

#[test]
fn criterion_8_end_to_end_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("room.toml"), ROOM).unwrap();
    let c = clip(&ClipParams::walk_then_sit(3.0, 15.0, 0.9, 0.45), "chair");
    c.animation.save(&dir.join("clip.anim")).unwrap();
    paak_core::animation::save_features(&c.features, &dir.join("clip.ftr")).unwrap();

    let toml = format!(
        "seed = 11\nmode = \"active\"\n[paths]\nrecipe = {:?}\nanimation = {:?}\nfeatures = {:?}\nout_dir = {:?}\ncache_dir = {:?}\n[training]\ncorpus_size = 8\nepochs = 10\n",
        dir.join("room.toml"),
        dir.join("clip.anim"),
        dir.join("clip.ftr"),
        dir.join("out"),
        dir.join("cache"),
    );
    let config = PipelineConfig::from_toml(&toml).unwrap();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();

    // First run trains and bakes into an empty cache; the second reuses it on a different pool size.
    pool(1).install(|| run_pipeline(&config)).unwrap();
    let first = snapshot(&config.out_dir());
    fs::remove_dir_all(config.out_dir()).unwrap();
    pool(3).install(|| run_pipeline(&config)).unwrap();
    let second = snapshot(&config.out_dir());

    let differing: Vec<&str> = first.iter().zip(&second).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    let pass = differing.is_empty();
    report(
        8,
        "byte-identical artifacts across runs",
        pass,
        &if pass { format!("{} artifacts, {} bytes compared", first.len(), first.iter().map(|f| f.1.len()).sum::<usize>()) } else { format!("differ: {differing:?}") },
    );
    assert!(pass);
}
