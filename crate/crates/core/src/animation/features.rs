use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{Animation, AnimationError, Cursor};
use crate::scene::SemanticVocabulary;

pub const FEATURE_MAGIC: &[u8; 8] = b"PAAKFTR1";

/// Per-frame, per-vertex contact probabilities and semantic class ids, stored
/// row-major (frame, then vertex).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    frames: usize,
    vertices: usize,
    contact: Vec<f32>,
    semantic: Vec<u16>,
}

impl FeatureMap {
    pub fn new(frames: usize, vertices: usize, contact: Vec<f32>, semantic: Vec<u16>) -> Result<Self, AnimationError> {
        if contact.len() != frames * vertices || semantic.len() != frames * vertices {
            return Err(AnimationError::FeatureShape {
                expected_frames: frames,
                expected_vertices: vertices,
                frames: contact.len().min(semantic.len()) / vertices.max(1),
                vertices,
            });
        }
        if let Some(i) = contact.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(AnimationError::ContactRange { frame: i / vertices, vertex: i % vertices, value: contact[i] });
        }
        Ok(FeatureMap { frames, vertices, contact, semantic })
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices
    }

    pub fn contact_row(&self, frame: usize) -> &[f32] {
        &self.contact[frame * self.vertices..(frame + 1) * self.vertices]
    }

    pub fn semantic_row(&self, frame: usize) -> &[u16] {
        &self.semantic[frame * self.vertices..(frame + 1) * self.vertices]
    }

    pub fn contact(&self) -> &[f32] {
        &self.contact
    }

    pub fn semantic(&self) -> &[u16] {
        &self.semantic
    }

    pub fn check_shape(&self, anim: &Animation) -> Result<(), AnimationError> {
        if self.frames != anim.frame_count() || self.vertices != anim.vertex_count() {
            return Err(AnimationError::FeatureShape {
                expected_frames: anim.frame_count(),
                expected_vertices: anim.vertex_count(),
                frames: self.frames,
                vertices: self.vertices,
            });
        }
        Ok(())
    }

    pub fn check_classes(&self, vocab: &SemanticVocabulary) -> Result<(), AnimationError> {
        match self.semantic.iter().position(|&id| !vocab.contains(id)) {
            Some(i) => Err(AnimationError::UnknownClass {
                frame: i / self.vertices,
                vertex: i % self.vertices,
                id: self.semantic[i],
            }),
            None => Ok(()),
        }
    }

    pub fn validate(&self, anim: &Animation, vocab: &SemanticVocabulary) -> Result<(), AnimationError> {
        self.check_shape(anim)?;
        self.check_classes(vocab)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.frames as u32).to_le_bytes())?;
        w.write_all(&(self.vertices as u32).to_le_bytes())?;
        for c in &self.contact {
            w.write_all(&c.to_le_bytes())?;
        }
        for s in &self.semantic {
            w.write_all(&s.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, AnimationError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 8 || &bytes[..8] != FEATURE_MAGIC {
            return Err(AnimationError::BadMagic { expected: String::from_utf8_lossy(FEATURE_MAGIC).into() });
        }
        let mut cur = Cursor { bytes: &bytes, pos: 8 };
        let (n, v) = match (cur.u32(), cur.u32()) {
            (Some(n), Some(v)) => (n as usize, v as usize),
            _ => return Err(AnimationError::TruncatedHeader),
        };
        if cur.remaining() != n * v * 6 {
            return Err(AnimationError::FeatureShape {
                expected_frames: n,
                expected_vertices: v,
                frames: cur.remaining() / (6 * v.max(1)),
                vertices: v,
            });
        }
        let contact = (0..n * v).map(|_| cur.f32().unwrap()).collect();
        let semantic = (0..n * v).map(|_| cur.u16().unwrap()).collect();
        FeatureMap::new(n, v, contact, semantic)
    }
}

pub fn save_features(features: &FeatureMap, path: &Path) -> Result<(), AnimationError> {
    let file = fs::File::create(path).map_err(|e| AnimationError::from(e).at(path))?;
    features.write_to(BufWriter::new(file)).map_err(|e| AnimationError::from(e).at(path))
}

pub fn load_features(path: &Path) -> Result<FeatureMap, AnimationError> {
    let file = fs::File::open(path).map_err(|e| AnimationError::from(e).at(path))?;
    FeatureMap::read_from(BufReader::new(file)).map_err(|e| e.at(path))
}

/// Where per-vertex features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureSource {
    /// A feature file exported by an external estimator.
    File(PathBuf),
    Heuristic(HeuristicOptions),
}

/// Parameters of the built-in geometric estimator. It is a crude stand-in for a
/// learned contact model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicOptions {
    /// Contact decays as `exp(-h / contact_scale)` with height above the frame's lowest vertex.
    pub contact_scale: f64,
    /// Vertices lower than this above the frame's lowest vertex are labeled floor.
    pub foot_height: f64,
    /// Frames whose pelvis is lower than this above the lowest vertex count as seated.
    pub seated_pelvis_height: f64,
    /// Seat-labeled vertices must lie within this distance of the pelvis.
    pub seat_radius: f64,
    /// Vertex normals with a z component below this count as downward-facing.
    pub downward_normal_z: f64,
    pub seat_class: String,
    pub other_class: String,
}

impl Default for HeuristicOptions {
    fn default() -> Self {
        HeuristicOptions {
            contact_scale: 0.05,
            foot_height: 0.1,
            seated_pelvis_height: 0.7,
            seat_radius: 0.25,
            downward_normal_z: -0.3,
            seat_class: "chair".into(),
            other_class: "object".into(),
        }
    }
}

pub fn estimate_features(
    anim: &Animation,
    source: &FeatureSource,
    vocab: &SemanticVocabulary,
) -> Result<FeatureMap, AnimationError> {
    let features = match source {
        FeatureSource::File(path) => load_features(path)?,
        FeatureSource::Heuristic(options) => estimate_features_heuristic(anim, vocab, options),
    };
    features.validate(anim, vocab)?;
    Ok(features)
}

fn vertex_normals(vertices: &[nalgebra::Point3<f64>], topology: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut normals = vec![Vector3::zeros(); vertices.len()];
    for t in topology {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        for &i in t {
            normals[i as usize] += n;
        }
    }
    normals.iter().map(|n| n.try_normalize(0.0).unwrap_or_else(Vector3::zeros)).collect()
}

/// Height-based contact and a coarse floor / seat / other labeling.
///
/// Unknown class names fall back to the floor id for the seat and to the last
/// vocabulary class for "other".
pub fn estimate_features_heuristic(anim: &Animation, vocab: &SemanticVocabulary, options: &HeuristicOptions) -> FeatureMap {
    let floor = vocab.floor_id();
    let seat = vocab.id(&options.seat_class).unwrap_or(floor);
    let other = vocab.id(&options.other_class).unwrap_or(vocab.len() as u16 - 1);
    let (n, v) = (anim.frame_count(), anim.vertex_count());
    let mut contact = Vec::with_capacity(n * v);
    let mut semantic = Vec::with_capacity(n * v);
    for frame in anim.frames() {
        let low = frame.min_z();
        let seated = frame.pelvis.z - low < options.seated_pelvis_height;
        let normals = if seated { vertex_normals(&frame.vertices, anim.topology()) } else { Vec::new() };
        for (i, p) in frame.vertices.iter().enumerate() {
            let h = p.z - low;
            contact.push((-h / options.contact_scale).exp().clamp(0.0, 1.0) as f32);
            let label = if h < options.foot_height {
                floor
            } else if seated
                && normals[i].z < options.downward_normal_z
                && (p - frame.pelvis).norm() < options.seat_radius
            {
                seat
            } else {
                other
            };
            semantic.push(label);
        }
    }
    FeatureMap::new(n, v, contact, semantic).expect("heuristic features are in range")
}
