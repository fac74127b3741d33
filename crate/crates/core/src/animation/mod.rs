//! Body-mesh time series with a pelvis track, per-vertex interaction features,
//! and the rigid yaw-plus-translation transform used by placement.

mod features;
mod synth;

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    estimate_features, estimate_features_heuristic, load_features, save_features, FeatureMap, FeatureSource,
    HeuristicOptions, FEATURE_MAGIC,
};
pub use synth::{
    synth_animation, synth_clip, ClipKind, ClipParams, PhaseSpan, SeatInfo, SynthClip, BODY_VERTEX_COUNT,
    STANDING_PELVIS_HEIGHT,
};

pub const ANIMATION_MAGIC: &[u8; 8] = b"PAAKANM1";

/// Larger per-frame pelvis jumps are treated as tracking glitches.
pub const MAX_PELVIS_STEP: f64 = 1.0;
/// The pelvis must lie this close to the frame's vertex centroid.
pub const MAX_PELVIS_OFFSET: f64 = 2.0;

#[derive(Debug, Error)]
pub enum AnimationError {
    #[error("animation needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("frame {frame}: expected {expected} vertices, got {got}")]
    VertexCountDrift { frame: usize, expected: usize, got: usize },
    #[error("frame {frame} has no vertices")]
    EmptyFrame { frame: usize },
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("triangle {triangle} references vertex {index}, but frames have {vertices}")]
    TopologyIndex { triangle: usize, index: u32, vertices: usize },
    #[error("frame {frame}: non-finite coordinate")]
    NonFinite { frame: usize },
    #[error("frame {frame}: pelvis moved {distance:.3} m since the previous frame")]
    PelvisJump { frame: usize, distance: f64 },
    #[error("frame {frame}: pelvis is {distance:.3} m from the vertex centroid")]
    PelvisOffset { frame: usize, distance: f64 },
    #[error("bad magic, expected {expected:?}")]
    BadMagic { expected: String },
    #[error("truncated file in frame {frame}")]
    Truncated { frame: usize },
    #[error("truncated header or topology")]
    TruncatedHeader,
    #[error("{} trailing bytes after the last frame", .0)]
    TrailingBytes(usize),
    #[error("features: expected {expected_frames}×{expected_vertices}, got {frames}×{vertices}")]
    FeatureShape { expected_frames: usize, expected_vertices: usize, frames: usize, vertices: usize },
    #[error("features: frame {frame}, vertex {vertex}: contact {value} outside [0, 1]")]
    ContactRange { frame: usize, vertex: usize, value: f32 },
    #[error("features: frame {frame}, vertex {vertex}: class id {id} not in the vocabulary")]
    UnknownClass { frame: usize, vertex: usize, id: u16 },
    #[error("{path}")]
    File {
        path: std::path::PathBuf,
        #[source]
        source: Box<AnimationError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AnimationError {
    pub(crate) fn at(self, path: &Path) -> AnimationError {
        AnimationError::File { path: path.to_path_buf(), source: Box::new(self) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyFrame {
    pub vertices: Vec<Point3<f64>>,
    pub pelvis: Point3<f64>,
}

impl BodyFrame {
    pub fn centroid(&self) -> Point3<f64> {
        let sum = self.vertices.iter().fold(Vector3::zeros(), |acc, v| acc + v.coords);
        Point3::from(sum / self.vertices.len() as f64)
    }

    pub fn min_z(&self) -> f64 {
        self.vertices.iter().map(|v| v.z).fold(f64::INFINITY, f64::min)
    }
}

/// Rigid placement: yaw `theta` (radians, normalized to `[0, 2π)`) and translation `tau` (m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementPose {
    pub tau: [f64; 3],
    pub theta: f64,
}

impl PlacementPose {
    pub fn new(tau: [f64; 3], theta: f64) -> Self {
        let theta = theta.rem_euclid(TAU);
        // rem_euclid can round up to exactly TAU for tiny negative inputs.
        PlacementPose { tau, theta: if theta >= TAU { 0.0 } else { theta } }
    }

    pub fn identity() -> Self {
        PlacementPose { tau: [0.0; 3], theta: 0.0 }
    }

    pub fn theta_degrees(&self) -> f64 {
        self.theta.to_degrees()
    }
}

/// Precomputed form of a [`PlacementPose`] about a fixed pivot.
///
/// Placement evaluates energies through this so transformed points are
/// bit-identical to those produced by [`transform`].
#[derive(Debug, Clone, Copy)]
pub struct PoseTransform {
    pivot: [f64; 2],
    cos: f64,
    sin: f64,
    tau: [f64; 3],
}

impl PoseTransform {
    pub fn new(pivot: [f64; 2], pose: &PlacementPose) -> Self {
        let (sin, cos) = pose.theta.sin_cos();
        PoseTransform { pivot, cos, sin, tau: pose.tau }
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        if self.sin == 0.0 && self.cos == 1.0 {
            return Point3::new(p.x + self.tau[0], p.y + self.tau[1], p.z + self.tau[2]);
        }
        let dx = p.x - self.pivot[0];
        let dy = p.y - self.pivot[1];
        Point3::new(
            self.cos * dx - self.sin * dy + self.pivot[0] + self.tau[0],
            self.sin * dx + self.cos * dy + self.pivot[1] + self.tau[1],
            p.z + self.tau[2],
        )
    }
}

/// Fixed-topology body mesh sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Animation {
    topology: Vec<[u32; 3]>,
    frames: Vec<BodyFrame>,
    fps: f64,
}

impl Animation {
    pub fn new(topology: Vec<[u32; 3]>, frames: Vec<BodyFrame>, fps: f64) -> Result<Self, AnimationError> {
        if frames.len() < 2 {
            return Err(AnimationError::TooFewFrames(frames.len()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(AnimationError::InvalidFps(fps));
        }
        let v = frames[0].vertices.len();
        if v == 0 {
            return Err(AnimationError::EmptyFrame { frame: 0 });
        }
        for (frame, f) in frames.iter().enumerate() {
            if f.vertices.len() != v {
                return Err(AnimationError::VertexCountDrift { frame, expected: v, got: f.vertices.len() });
            }
            let finite = f.vertices.iter().chain(std::iter::once(&f.pelvis)).all(|p| p.iter().all(|c| c.is_finite()));
            if !finite {
                return Err(AnimationError::NonFinite { frame });
            }
            let distance = (f.pelvis - f.centroid()).norm();
            if distance > MAX_PELVIS_OFFSET {
                return Err(AnimationError::PelvisOffset { frame, distance });
            }
            if frame > 0 {
                let distance = (f.pelvis - frames[frame - 1].pelvis).norm();
                if distance >= MAX_PELVIS_STEP {
                    return Err(AnimationError::PelvisJump { frame, distance });
                }
            }
        }
        for (triangle, t) in topology.iter().enumerate() {
            if let Some(&index) = t.iter().find(|&&i| i as usize >= v) {
                return Err(AnimationError::TopologyIndex { triangle, index, vertices: v });
            }
        }
        Ok(Animation { topology, frames, fps })
    }

    pub fn topology(&self) -> &[[u32; 3]] {
        &self.topology
    }

    pub fn frames(&self) -> &[BodyFrame] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &BodyFrame {
        &self.frames[i]
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.frames[0].vertices.len()
    }

    /// Ground projection of the first-frame pelvis, the yaw pivot of [`transform`].
    pub fn pivot(&self) -> [f64; 2] {
        let p = self.frames[0].pelvis;
        [p.x, p.y]
    }

    pub fn pose_transform(&self, pose: &PlacementPose) -> PoseTransform {
        PoseTransform::new(self.pivot(), pose)
    }

    /// Lowest vertex height over all frames.
    pub fn min_z(&self) -> f64 {
        self.frames.iter().map(BodyFrame::min_z).fold(f64::INFINITY, f64::min)
    }

    /// Sum of pelvis displacements between consecutive frames.
    pub fn pelvis_path_length(&self) -> f64 {
        self.frames.windows(2).map(|w| (w[1].pelvis - w[0].pelvis).norm()).sum()
    }

    /// Mean pelvis position over all frames, projected to the ground.
    pub fn pelvis_centroid_xy(&self) -> [f64; 2] {
        let n = self.frames.len() as f64;
        let (x, y) = self.frames.iter().fold((0.0, 0.0), |(x, y), f| (x + f.pelvis.x, y + f.pelvis.y));
        [x / n, y / n]
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(ANIMATION_MAGIC)?;
        for n in [self.frames.len(), self.vertex_count(), self.topology.len()] {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(&(self.fps as f32).to_le_bytes())?;
        for t in &self.topology {
            for i in t {
                w.write_all(&i.to_le_bytes())?;
            }
        }
        for f in &self.frames {
            for p in f.vertices.iter().chain(std::iter::once(&f.pelvis)) {
                for c in p.iter() {
                    w.write_all(&(*c as f32).to_le_bytes())?;
                }
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AnimationError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != ANIMATION_MAGIC {
            return Err(AnimationError::BadMagic { expected: String::from_utf8_lossy(ANIMATION_MAGIC).into() });
        }
        let mut cur = Cursor { bytes: &bytes, pos: 8 };
        let header = (|| Some((cur.u32()?, cur.u32()?, cur.u32()?, cur.f32()?)))();
        let (n, v, t, fps) = header.ok_or(AnimationError::TruncatedHeader)?;
        let (n, v, t) = (n as usize, v as usize, t as usize);
        let mut topology = Vec::with_capacity(t);
        for _ in 0..t {
            let tri = (|| Some([cur.u32()?, cur.u32()?, cur.u32()?]))();
            topology.push(tri.ok_or(AnimationError::TruncatedHeader)?);
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(AnimationError::InvalidFps(fps as f64));
        }
        let frame_bytes = (v + 1) * 12;
        let mut frames = Vec::with_capacity(n);
        for frame in 0..n {
            let remaining = cur.remaining();
            if remaining < frame_bytes {
                // A short last frame that still holds whole points is a frame
                // with fewer vertices than the header declares.
                return Err(if remaining % 12 == 0 && remaining >= 24 {
                    AnimationError::VertexCountDrift { frame, expected: v, got: remaining / 12 - 1 }
                } else {
                    AnimationError::Truncated { frame }
                });
            }
            let mut points: Vec<Point3<f64>> = (0..=v)
                .map(|_| {
                    let (x, y, z) = (cur.f32().unwrap(), cur.f32().unwrap(), cur.f32().unwrap());
                    Point3::new(x as f64, y as f64, z as f64)
                })
                .collect();
            let pelvis = points.pop().expect("v + 1 points");
            frames.push(BodyFrame { vertices: points, pelvis });
        }
        if cur.remaining() > 0 {
            return Err(AnimationError::TrailingBytes(cur.remaining()));
        }
        Animation::new(topology, frames, fps as f64)
    }

    pub fn save(&self, path: &Path) -> Result<(), AnimationError> {
        let file = fs::File::create(path).map_err(|e| AnimationError::from(e).at(path))?;
        self.write_to(BufWriter::new(file)).map_err(|e| AnimationError::from(e).at(path))
    }

    /// Writes one OBJ per frame (`frame_0000.obj`, ...) for external viewers.
    pub fn export_obj_frames(&self, dir: &Path) -> Result<(), AnimationError> {
        fs::create_dir_all(dir)?;
        for (i, f) in self.frames.iter().enumerate() {
            let mut w = BufWriter::new(fs::File::create(dir.join(format!("frame_{i:04}.obj")))?);
            for v in &f.vertices {
                writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
            }
            for t in &self.topology {
                writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl Cursor<'_> {
    pub fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
        let out = self.bytes.get(self.pos..self.pos + N)?.try_into().ok()?;
        self.pos += N;
        Some(out)
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take().map(u32::from_le_bytes)
    }

    pub fn u16(&mut self) -> Option<u16> {
        self.take().map(u16::from_le_bytes)
    }

    pub fn f32(&mut self) -> Option<f32> {
        self.take().map(f32::from_le_bytes)
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn load_animation(path: &Path) -> Result<Animation, AnimationError> {
    let file = fs::File::open(path).map_err(|e| AnimationError::from(e).at(path))?;
    Animation::read_from(BufReader::new(file)).map_err(|e| e.at(path))
}

/// Rotates every vertex and pelvis by the pose yaw about the vertical axis
/// through the first-frame pelvis ground projection, then translates by tau.
pub fn transform(anim: &Animation, pose: &PlacementPose) -> Animation {
    let t = anim.pose_transform(pose);
    let frames = anim
        .frames
        .iter()
        .map(|f| BodyFrame {
            vertices: f.vertices.iter().map(|p| t.apply(p)).collect(),
            pelvis: t.apply(&f.pelvis),
        })
        .collect();
    Animation { topology: anim.topology.clone(), frames, fps: anim.fps }
}
