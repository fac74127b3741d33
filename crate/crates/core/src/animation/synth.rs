//! Procedural capsule-person clips: walking, sitting down, jumping.
//!
//! The body is ten six-sided prisms (torso, head, thighs, shins, upper arms,
//! forearms), 120 vertices in all. Legs are posed with two-bone IK so that planted
//! feet stay put. Coordinates are rounded to f32 so clips survive a file round trip
//! bit-exactly.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Animation, AnimationError, BodyFrame, FeatureMap};

const RING: usize = 6;
const SEGMENTS: usize = 10;
pub const BODY_VERTEX_COUNT: usize = SEGMENTS * RING * 2;

const THIGH: f64 = 0.45;
const SHIN: f64 = 0.52;
const TORSO: f64 = 0.55;
const TORSO_DROP: f64 = 0.06;
const HEAD: f64 = 0.25;
const HIP_HALF_WIDTH: f64 = 0.09;
const SHOULDER_HALF_WIDTH: f64 = 0.19;
const SHOULDER_DROP: f64 = 0.05;
const UPPER_ARM: f64 = 0.30;
const FOREARM: f64 = 0.28;

const R_SHIN: f64 = 0.05;
const R_THIGH: f64 = 0.07;
const R_TORSO: f64 = 0.13;
const R_HEAD: f64 = 0.10;
const R_UPPER_ARM: f64 = 0.045;
const R_FOREARM: f64 = 0.04;

/// Pelvis height of the standing pose: legs at 99.5% of full extension.
pub const STANDING_PELVIS_HEIGHT: f64 = (THIGH + SHIN) * 0.995;

const SWING_LIFT: f64 = 0.08;
const GAIT_RAMP: f64 = 0.2;
const CROUCH_DEPTH: f64 = 0.2;
const SEAT_CLEARANCE: f64 = 0.002;
const SEAT_SIZE: f64 = 0.5;
const SEAT_FORWARD: f64 = 0.1;
const CONTACT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipKind {
    Walk,
    Sit,
    WalkThenSit,
    Jump,
}

impl std::str::FromStr for ClipKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "walk" => Ok(ClipKind::Walk),
            "sit" => Ok(ClipKind::Sit),
            "walk_then_sit" | "walk-then-sit" => Ok(ClipKind::WalkThenSit),
            "jump" => Ok(ClipKind::Jump),
            _ => Err(format!("unknown clip kind {s:?} (walk, sit, walk_then_sit, jump)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipParams {
    pub kind: ClipKind,
    /// Seconds, including `idle`.
    pub duration: f64,
    pub fps: f64,
    /// Walking speed, m/s.
    pub speed: f64,
    pub seat_height: f64,
    pub jump_height: f64,
    /// Seconds of standing still before the motion starts.
    pub idle: f64,
    /// Initial facing direction, degrees from +x.
    pub heading_deg: f64,
    /// Varies step length and arm swing.
    pub seed: u64,
}

impl Default for ClipParams {
    fn default() -> Self {
        ClipParams {
            kind: ClipKind::WalkThenSit,
            duration: 4.0,
            fps: 15.0,
            speed: 1.0,
            seat_height: 0.45,
            jump_height: 0.3,
            idle: 0.0,
            heading_deg: 0.0,
            seed: 0,
        }
    }
}

impl ClipParams {
    pub fn walk(duration: f64, fps: f64, speed: f64) -> Self {
        ClipParams { kind: ClipKind::Walk, duration, fps, speed, ..Default::default() }
    }

    pub fn sit(duration: f64, fps: f64, seat_height: f64) -> Self {
        ClipParams { kind: ClipKind::Sit, duration, fps, seat_height, ..Default::default() }
    }

    pub fn walk_then_sit(duration: f64, fps: f64, speed: f64, seat_height: f64) -> Self {
        ClipParams { kind: ClipKind::WalkThenSit, duration, fps, speed, seat_height, ..Default::default() }
    }

    pub fn jump(duration: f64, fps: f64, jump_height: f64) -> Self {
        ClipParams { kind: ClipKind::Jump, duration, fps, jump_height, ..Default::default() }
    }

    pub fn frame_count(&self) -> usize {
        ((self.duration * self.fps).round() as usize).max(2)
    }
}

/// A named run of frames, `start..end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl PhaseSpan {
    pub fn contains(&self, frame: usize) -> bool {
        (self.start..self.end).contains(&frame)
    }
}

/// The seat a sitting clip was authored against, in clip coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeatInfo {
    pub top_center: [f64; 3],
    /// Footprint (x, y) in the seat's own frame.
    pub size: [f64; 2],
    /// Radians; the seat's local x axis is the seated body's forward direction.
    pub yaw: f64,
    /// Pelvis position in the seated phase.
    pub seated_pelvis: [f64; 3],
}

impl SeatInfo {
    fn distance(&self, p: &Point3<f64>) -> f64 {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.x - self.top_center[0];
        let dy = p.y - self.top_center[1];
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let ex = (lx.abs() - self.size[0] / 2.0).max(0.0);
        let ey = (ly.abs() - self.size[1] / 2.0).max(0.0);
        let ez = p.z - self.top_center[2];
        (ex * ex + ey * ey + ez * ez).sqrt()
    }
}

/// A synthetic clip with features constructed from the support it was authored on.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub animation: Animation,
    /// Contact `exp(-d / 0.05)` to the nearest support, labeled with that support's class. The seat top
    /// is a support only from the start of `sit_down`; before that every vertex refers to the floor.
    pub features: FeatureMap,
    pub phases: Vec<PhaseSpan>,
    pub seat: Option<SeatInfo>,
}

impl SynthClip {
    pub fn phase(&self, name: &str) -> Option<&PhaseSpan> {
        self.phases.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy)]
struct Pose {
    pelvis: Point3<f64>,
    heading: f64,
    /// Sole centers, left then right.
    feet: [Point3<f64>; 2],
    /// (upper arm, forearm) angles from straight down, positive forward.
    arms: [(f64, f64); 2],
}

fn forward(heading: f64) -> Vector3<f64> {
    Vector3::new(heading.cos(), heading.sin(), 0.0)
}

fn left(heading: f64) -> Vector3<f64> {
    Vector3::new(-heading.sin(), heading.cos(), 0.0)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn standing(pelvis_xy: [f64; 2], heading: f64) -> Pose {
    let l = left(heading);
    let foot = |side: f64| Point3::new(pelvis_xy[0] + side * l.x * HIP_HALF_WIDTH, pelvis_xy[1] + side * l.y * HIP_HALF_WIDTH, 0.0);
    Pose {
        pelvis: Point3::new(pelvis_xy[0], pelvis_xy[1], STANDING_PELVIS_HEIGHT),
        heading,
        feet: [foot(1.0), foot(-1.0)],
        arms: [(0.0, 0.15); 2],
    }
}

fn ring(center: Point3<f64>, axis: Vector3<f64>, reference: Vector3<f64>, radius: f64, horizontal: bool) -> [Point3<f64>; RING] {
    let (u, w) = if horizontal {
        let u = Vector3::new(reference.x, reference.y, 0.0).normalize();
        let w = Vector3::z().cross(&u);
        (u, if axis.z < 0.0 { -w } else { w })
    } else {
        let u = (reference - axis * axis.dot(&reference)).normalize();
        (u, axis.cross(&u))
    };
    std::array::from_fn(|k| {
        let phi = 2.0 * PI * k as f64 / RING as f64;
        center + (u * phi.cos() + w * phi.sin()) * radius
    })
}

fn segment(
    out: &mut Vec<Point3<f64>>,
    start: Point3<f64>,
    end: Point3<f64>,
    radius: f64,
    reference: Vector3<f64>,
    (start_flat, end_flat): (bool, bool),
) {
    let axis = (end - start).normalize();
    out.extend(ring(start, axis, reference, radius, start_flat));
    out.extend(ring(end, axis, reference, radius, end_flat));
}

/// Two-bone IK with the knee bending toward `fwd`. Returns (knee, ankle); the
/// ankle falls short of `target` when it is out of reach.
fn leg_ik(hip: Point3<f64>, target: Point3<f64>, fwd: Vector3<f64>) -> (Point3<f64>, Point3<f64>) {
    let d = target - hip;
    let len = d.norm();
    let dir = d / len;
    if len >= THIGH + SHIN - 1e-9 {
        return (hip + dir * THIGH, hip + dir * (THIGH + SHIN));
    }
    let a = (THIGH * THIGH - SHIN * SHIN + len * len) / (2.0 * len);
    let h = (THIGH * THIGH - a * a).max(0.0).sqrt();
    let perp = (fwd - dir * dir.dot(&fwd)).try_normalize(1e-12).unwrap_or_else(Vector3::z);
    (hip + dir * a + perp * h, target)
}

fn body_vertices(pose: &Pose) -> Vec<Point3<f64>> {
    let fwd = forward(pose.heading);
    let lft = left(pose.heading);
    let up = Vector3::z();
    let mut v = Vec::with_capacity(BODY_VERTEX_COUNT);

    let torso_start = pose.pelvis - up * TORSO_DROP;
    let neck = torso_start + up * TORSO;
    segment(&mut v, torso_start, neck, R_TORSO, fwd, (true, false));
    segment(&mut v, neck, neck + up * HEAD, R_HEAD, fwd, (false, false));

    for (side, foot) in [(1.0, pose.feet[0]), (-1.0, pose.feet[1])] {
        let hip = pose.pelvis + lft * (side * HIP_HALF_WIDTH);
        let (knee, ankle) = leg_ik(hip, foot, fwd);
        segment(&mut v, hip, knee, R_THIGH, lft, (false, false));
        segment(&mut v, knee, ankle, R_SHIN, lft, (false, true));
    }

    for (side, (upper, fore)) in [(1.0, pose.arms[0]), (-1.0, pose.arms[1])] {
        let shoulder = neck - up * SHOULDER_DROP + lft * (side * SHOULDER_HALF_WIDTH);
        let dir = |a: f64| -up * a.cos() + fwd * a.sin();
        let elbow = shoulder + dir(upper) * UPPER_ARM;
        segment(&mut v, shoulder, elbow, R_UPPER_ARM, lft, (false, false));
        segment(&mut v, elbow, elbow + dir(fore) * FOREARM, R_FOREARM, lft, (false, false));
    }
    v
}

/// Shared triangle list: 20 outward-facing triangles per prism.
pub fn body_topology() -> Vec<[u32; 3]> {
    let mut tris = Vec::with_capacity(SEGMENTS * 20);
    for s in 0..SEGMENTS {
        let base = (s * 2 * RING) as u32;
        let st = |k: usize| base + (k % RING) as u32;
        let en = |k: usize| base + RING as u32 + (k % RING) as u32;
        for k in 0..RING {
            tris.push([st(k), st(k + 1), en(k + 1)]);
            tris.push([st(k), en(k + 1), en(k)]);
        }
        for k in 1..RING - 1 {
            tris.push([st(0), st(k + 1), st(k)]);
            tris.push([en(0), en(k), en(k + 1)]);
        }
    }
    tris
}

/// Vertex ranges (into the 120) of the torso and both thighs: the seat-bearing parts.
fn seat_bearing() -> impl Iterator<Item = usize> {
    (0..12).chain(24..36).chain(48..60)
}

struct Gait {
    start: [f64; 2],
    heading: f64,
    speed: f64,
    duration: f64,
    step: f64,
    arm_swing: f64,
}

impl Gait {
    fn new(start: [f64; 2], heading: f64, speed: f64, duration: f64, nominal_step: f64, arm_swing: f64) -> Self {
        let distance = speed * duration;
        let half_cycles = (distance / nominal_step).round().max(1.0);
        Gait { start, heading, speed, duration, step: distance / half_cycles, arm_swing }
    }

    fn end(&self) -> [f64; 2] {
        let f = forward(self.heading);
        let d = self.speed * self.duration;
        [self.start[0] + f.x * d, self.start[1] + f.y * d]
    }

    fn pose(&self, t: f64) -> Pose {
        let fwd = forward(self.heading);
        let lft = left(self.heading);
        let xy = [self.start[0] + fwd.x * self.speed * t, self.start[1] + fwd.y * self.speed * t];
        if self.speed * self.duration <= 0.0 {
            return standing(xy, self.heading);
        }
        let ramp = (t.min(self.duration - t) / GAIT_RAMP).clamp(0.0, 1.0);
        let half_period = self.step / self.speed;
        let phase_left = (0.25 + t / (2.0 * half_period)).rem_euclid(1.0);
        // Derived this way, exactly one foot is always in stance.
        let phase_right = if phase_left < 0.5 { phase_left + 0.5 } else { phase_left - 0.5 };
        let mut feet = [Point3::origin(); 2];
        let mut arms = [(0.0, 0.0); 2];
        let mut pelvis_z = f64::INFINITY;
        let reach = STANDING_PELVIS_HEIGHT;
        for (i, (side, phase)) in [(1.0, phase_left), (-1.0, phase_right)].into_iter().enumerate() {
            let (rel, lift, stance) = if phase < 0.5 {
                (1.0 - 4.0 * phase, 0.0, true)
            } else {
                let u = (phase - 0.5) * 2.0;
                (-1.0 + 2.0 * u, SWING_LIFT * (PI * u).sin(), false)
            };
            let offset = ramp * rel * self.step / 2.0;
            let p = Point3::new(xy[0], xy[1], 0.0) + fwd * offset + lft * (side * HIP_HALF_WIDTH);
            feet[i] = Point3::new(p.x, p.y, lift * ramp);
            if stance {
                pelvis_z = pelvis_z.min((reach * reach - offset * offset).sqrt());
            }
            let upper = -self.arm_swing * ramp * rel;
            arms[i] = (upper, upper + 0.15 + 0.1 * ramp);
        }
        Pose { pelvis: Point3::new(xy[0], xy[1], pelvis_z), heading: self.heading, feet, arms }
    }
}

/// Seated pose with feet at `feet_xy` (standing stance), facing `heading`, and
/// the lowest torso/thigh vertex just above `seat_height`.
fn seated(feet_center: [f64; 2], heading: f64, seat_height: f64) -> (Pose, SeatInfo) {
    let stand = standing(feet_center, heading);
    let fwd = forward(heading);
    let mut pelvis_z = seat_height + R_THIGH;
    let mut pose = stand;
    for _ in 0..3 {
        let back = THIGH + (SHIN * SHIN - pelvis_z * pelvis_z).max(0.0).sqrt();
        pose = Pose {
            pelvis: Point3::new(feet_center[0] - fwd.x * back, feet_center[1] - fwd.y * back, pelvis_z),
            heading,
            feet: stand.feet,
            arms: [(0.0, PI / 2.0); 2],
        };
        let verts = body_vertices(&pose);
        let low = seat_bearing().map(|i| verts[i].z).fold(f64::INFINITY, f64::min);
        pelvis_z += seat_height + SEAT_CLEARANCE - low;
    }
    let p = pose.pelvis;
    let seat = SeatInfo {
        top_center: [p.x + fwd.x * SEAT_FORWARD, p.y + fwd.y * SEAT_FORWARD, seat_height],
        size: [SEAT_SIZE, SEAT_SIZE],
        yaw: heading,
        seated_pelvis: [p.x, p.y, p.z],
    };
    (pose, seat)
}

fn blend(a: &Pose, b: &Pose, u: f64) -> Pose {
    let lerp = |x: f64, y: f64| x + (y - x) * u;
    let arms = std::array::from_fn(|i| (lerp(a.arms[i].0, b.arms[i].0), lerp(a.arms[i].1, b.arms[i].1)));
    Pose {
        pelvis: a.pelvis + (b.pelvis - a.pelvis) * u,
        heading: lerp(a.heading, b.heading),
        feet: std::array::from_fn(|i| a.feet[i] + (b.feet[i] - a.feet[i]) * u),
        arms,
    }
}

/// Pose as a function of time, plus named phases in seconds.
struct Timeline {
    phases: Vec<(&'static str, f64, f64)>,
    seat: Option<SeatInfo>,
    pose: Box<dyn Fn(f64) -> Pose>,
}

fn timeline(params: &ClipParams) -> Timeline {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let nominal_step = rng.gen_range(0.62..0.78);
    let arm_swing = rng.gen_range(0.2..0.45);
    let h0 = params.heading_deg.to_radians();
    let idle = params.idle.clamp(0.0, params.duration);
    let rest = params.duration - idle;
    let origin = [0.0, 0.0];

    // Consecutive phases; each closure gets the time since its phase began.
    let mut phases: Vec<(&'static str, f64, f64)> = Vec::new();
    let mut push = |name, len: f64| {
        let start = phases.last().map_or(0.0, |p: &(&str, f64, f64)| p.2);
        phases.push((name, start, start + len));
    };
    if idle > 0.0 {
        push("idle", idle);
    }

    let (segments, seat): (Vec<Box<dyn Fn(f64) -> Pose>>, Option<SeatInfo>) = match params.kind {
        ClipKind::Walk => {
            push("walk", rest);
            let gait = Gait::new(origin, h0, params.speed, rest, nominal_step, arm_swing);
            (vec![Box::new(move |t| gait.pose(t))], None)
        }
        ClipKind::Sit => {
            let (stand_len, down_len) = (0.2 * rest, 0.35 * rest);
            push("stand", stand_len);
            push("sit_down", down_len);
            push("seated", rest - stand_len - down_len);
            let stand = standing(origin, h0);
            let (sit, seat) = seated(origin, h0, params.seat_height);
            (
                vec![
                    Box::new(move |_| stand),
                    Box::new(move |t| blend(&stand, &sit, smoothstep(t / down_len))),
                    Box::new(move |_| sit),
                ],
                Some(seat),
            )
        }
        ClipKind::WalkThenSit => {
            let (walk_len, turn_len, down_len) = (0.4 * rest, 0.15 * rest, 0.2 * rest);
            push("walk", walk_len);
            push("turn", turn_len);
            push("sit_down", down_len);
            push("seated", rest - walk_len - turn_len - down_len);
            let gait = Gait::new(origin, h0, params.speed, walk_len, nominal_step, arm_swing);
            let end = gait.end();
            let h1 = h0 + PI;
            let (turned, walked) = (standing(end, h1), gait.pose(walk_len));
            let (sit, seat) = seated(end, h1, params.seat_height);
            (
                vec![
                    Box::new(move |t| gait.pose(t)),
                    Box::new(move |t| {
                        let u = smoothstep(t / turn_len);
                        let mut p = standing(end, h0 + PI * u);
                        p.pelvis.z = walked.pelvis.z + (turned.pelvis.z - walked.pelvis.z) * u;
                        p
                    }),
                    Box::new(move |t| blend(&turned, &sit, smoothstep(t / down_len))),
                    Box::new(move |_| sit),
                ],
                Some(seat),
            )
        }
        ClipKind::Jump => {
            let lens = [0.15, 0.15, 0.1, 0.2, 0.15].map(|f| f * rest);
            for (name, len) in ["stand", "crouch", "extend", "flight", "land"].into_iter().zip(lens) {
                push(name, len);
            }
            push("recover", rest - lens.iter().sum::<f64>());
            let stand = standing(origin, h0);
            let mut crouch = stand;
            crouch.pelvis.z -= CROUCH_DEPTH;
            crouch.arms = [(-0.4, -0.2); 2];
            let height = params.jump_height;
            let [_, crouch_len, extend_len, flight_len, land_len] = lens;
            (
                vec![
                    Box::new(move |_| stand),
                    Box::new(move |t| blend(&stand, &crouch, smoothstep(t / crouch_len))),
                    Box::new(move |t| blend(&crouch, &stand, smoothstep(t / extend_len))),
                    Box::new(move |t| {
                        let u = (t / flight_len).clamp(0.0, 1.0);
                        let lift = Vector3::z() * (height * 4.0 * u * (1.0 - u));
                        let mut p = stand;
                        p.pelvis += lift;
                        p.feet = p.feet.map(|f| f + lift);
                        p.arms = [(0.3, 0.5); 2];
                        p
                    }),
                    Box::new(move |t| blend(&stand, &crouch, smoothstep(t / land_len))),
                    Box::new(move |t| blend(&crouch, &stand, smoothstep(t / (rest - lens.iter().sum::<f64>())))),
                ],
                None,
            )
        }
    };

    let idle_pose = segments[0](0.0);
    let mut all: Vec<Box<dyn Fn(f64) -> Pose>> = Vec::new();
    if idle > 0.0 {
        all.push(Box::new(move |_| idle_pose));
    }
    all.extend(segments);
    let bounds: Vec<(f64, f64)> = phases.iter().map(|p| (p.1, p.2)).collect();
    Timeline {
        phases,
        seat,
        pose: Box::new(move |t| {
            let i = bounds.iter().position(|&(_, end)| t < end).unwrap_or(bounds.len() - 1);
            all[i](t - bounds[i].0)
        }),
    }
}

fn quantize(p: Point3<f64>) -> Point3<f64> {
    p.map(|c| c as f32 as f64)
}

pub fn synth_animation(params: &ClipParams) -> Result<Animation, AnimationError> {
    synth_clip(params, 0, 0).map(|c| c.animation)
}

/// Generates a clip and its support-derived features. `floor_id` and `seat_id`
/// label contacts with the floor and with the seat top.
pub fn synth_clip(params: &ClipParams, floor_id: u16, seat_id: u16) -> Result<SynthClip, AnimationError> {
    if !(params.fps > 0.0 && params.fps.is_finite()) {
        return Err(AnimationError::InvalidFps(params.fps));
    }
    let n = params.frame_count();
    let timeline = timeline(params);
    let times: Vec<f64> = (0..n).map(|i| i as f64 * params.duration / (n - 1) as f64).collect();
    let frames: Vec<BodyFrame> = times
        .iter()
        .map(|&t| {
            let pose = (timeline.pose)(t);
            BodyFrame {
                vertices: body_vertices(&pose).into_iter().map(quantize).collect(),
                pelvis: quantize(pose.pelvis),
            }
        })
        .collect();

    // The seat only counts as a support once the body starts sitting down.
    let seat_from = timeline.phases.iter().find(|p| p.0 == "sit_down").map_or(f64::INFINITY, |p| p.1);
    let mut contact = Vec::with_capacity(n * BODY_VERTEX_COUNT);
    let mut semantic = Vec::with_capacity(n * BODY_VERTEX_COUNT);
    for (f, &t) in frames.iter().zip(&times) {
        let seat = timeline.seat.filter(|_| t >= seat_from);
        for p in &f.vertices {
            let floor = p.z.abs();
            let (d, label) = match &seat {
                Some(seat) if seat.distance(p) < floor => (seat.distance(p), seat_id),
                _ => (floor, floor_id),
            };
            contact.push((-d / CONTACT_SCALE).exp() as f32);
            semantic.push(label);
        }
    }

    let phases = timeline
        .phases
        .iter()
        .map(|&(name, start, end)| PhaseSpan {
            name: name.to_string(),
            start: times.partition_point(|&t| t < start),
            end: if end >= params.duration { n } else { times.partition_point(|&t| t < end) },
        })
        .collect();
    Ok(SynthClip {
        animation: Animation::new(body_topology(), frames, params.fps)?,
        features: FeatureMap::new(n, BODY_VERTEX_COUNT, contact, semantic)?,
        phases,
        seat: timeline.seat,
    })
}
