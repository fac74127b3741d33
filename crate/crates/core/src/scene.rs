//! Semantic scenes: a triangle mesh with per-face class labels, its BVH and a
//! baked signed distance field.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    bake_sdf, build_bvh, primitives::box_mesh, read_obj, write_obj, Aabb, BakeOptions, Bvh, GeometryError,
    SdfGrid, SolidGround, TriangleMesh, DEFAULT_CELL_SIZE, DEFAULT_MAX_VOXELS,
};

pub const DEFAULT_CLASSES: [&str; 7] = ["floor", "wall", "chair", "sofa", "bed", "table", "object"];

/// Bumped whenever baking changes, so stale caches are never reused.
const SDF_CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("vocabulary: {0}")]
    Vocabulary(String),
    #[error("scene has no faces labeled with the floor class")]
    MissingFloor,
    #[error("face {face} has no label ({labels} labels for {faces} faces)")]
    MissingLabel { face: usize, labels: usize, faces: usize },
    #[error("{labels} labels for {faces} faces: face count mismatch")]
    ExtraLabels { labels: usize, faces: usize },
    #[error("face {face} has label {label}, not in the vocabulary")]
    InvalidLabel { face: usize, label: u16 },
    #[error("recipe: {0}")]
    Recipe(String),
    #[error("{path}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<SceneError>,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl SceneError {
    fn at(self, path: &Path) -> SceneError {
        SceneError::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticClass {
    pub id: u16,
    pub name: String,
}

/// Ordered class list with dense ids `0..C` and a designated floor class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticVocabulary {
    classes: Vec<SemanticClass>,
    floor_id: u16,
}

impl SemanticVocabulary {
    pub fn new(classes: Vec<SemanticClass>, floor_id: u16) -> Result<Self, SceneError> {
        let mut names = HashSet::new();
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(SceneError::Vocabulary(format!(
                    "class ids must be dense 0..{}, found id {} at position {i}",
                    classes.len(),
                    c.id
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(SceneError::Vocabulary(format!("duplicate class name {:?}", c.name)));
            }
        }
        if floor_id as usize >= classes.len() {
            return Err(SceneError::Vocabulary(format!("floor_id {floor_id} is not a class id")));
        }
        Ok(SemanticVocabulary { classes, floor_id })
    }

    pub fn from_names(names: &[&str], floor: &str) -> Result<Self, SceneError> {
        let classes: Vec<SemanticClass> = names
            .iter()
            .enumerate()
            .map(|(i, n)| SemanticClass {
                id: i as u16,
                name: n.to_string(),
            })
            .collect();
        let floor_id = names
            .iter()
            .position(|n| *n == floor)
            .ok_or(SceneError::MissingFloor)? as u16;
        SemanticVocabulary::new(classes, floor_id)
    }

    pub fn classes(&self) -> &[SemanticClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn floor_id(&self) -> u16 {
        self.floor_id
    }

    pub fn contains(&self, id: u16) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn id(&self, name: &str) -> Option<u16> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }
}

impl Default for SemanticVocabulary {
    /// floor, wall, chair, sofa, bed, table, object.
    fn default() -> Self {
        SemanticVocabulary::from_names(&DEFAULT_CLASSES, "floor").expect("default vocabulary is valid")
    }
}

/// Sidecar label file next to a scene OBJ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelsFile {
    pub classes: Vec<SemanticClass>,
    pub floor_id: u16,
    pub face_labels: Vec<u16>,
}

#[derive(Debug, Clone)]
pub struct SceneOptions {
    pub cell_size: f64,
    pub max_voxels: u64,
    /// Horizontal padding around the scene, and depth of the grid below the floor.
    pub margin: f64,
    /// Minimum grid height above the floor, so standing bodies stay inside.
    pub headroom: f64,
    pub cache_dir: Option<PathBuf>,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            cell_size: DEFAULT_CELL_SIZE,
            max_voxels: DEFAULT_MAX_VOXELS,
            margin: 0.5,
            headroom: 2.5,
            cache_dir: None,
        }
    }
}

/// A labeled scene, ready for placement queries.
#[derive(Debug, Clone)]
pub struct SceneModel {
    mesh: TriangleMesh,
    face_labels: Vec<u16>,
    vocab: SemanticVocabulary,
    sdf: SdfGrid,
    bvh: Bvh,
    floor_height: f64,
    floor_min: [f64; 2],
    floor_max: [f64; 2],
}

impl SceneModel {
    pub fn new(
        mesh: TriangleMesh,
        face_labels: Vec<u16>,
        vocab: SemanticVocabulary,
        options: &SceneOptions,
    ) -> Result<Self, SceneError> {
        validate_labels(&face_labels, mesh.triangle_count(), &vocab)?;
        let mesh = mesh.with_face_attributes(face_labels.iter().map(|&l| l as u32).collect())?;
        let floor_faces: Vec<usize> = (0..face_labels.len())
            .filter(|&f| face_labels[f] == vocab.floor_id())
            .collect();
        if floor_faces.is_empty() {
            return Err(SceneError::MissingFloor);
        }
        let floor_height = modal_height(&mesh, &floor_faces);
        let floor_bounds = Aabb::from_points(floor_faces.iter().flat_map(|&f| {
            mesh.triangles()[f]
                .iter()
                .map(|&v| &mesh.vertices()[v as usize])
                .collect::<Vec<_>>()
        }));
        let floor_min = [floor_bounds.min.x, floor_bounds.min.y];
        let floor_max = [floor_bounds.max.x, floor_bounds.max.y];

        let bvh = build_bvh(&mesh)?;
        let bounds = bake_bounds(&mesh, floor_height, options);
        let bake_options = BakeOptions {
            max_voxels: options.max_voxels,
            open_attribute: Some(vocab.floor_id() as u32),
            ground: Some(SolidGround {
                height: floor_height,
                min_xy: floor_min,
                max_xy: floor_max,
            }),
        };

        let cache_path = options
            .cache_dir
            .as_ref()
            .map(|dir| dir.join(format!("{}.sdf", sdf_cache_key(&mesh, &vocab, options))));
        let sdf = match cache_path.as_deref().filter(|p| p.exists()) {
            Some(path) => SdfGrid::read_from(BufReader::new(fs::File::open(path)?))?,
            None => {
                let grid = bake_sdf(&mesh, &bvh, &bounds, options.cell_size, &bake_options)?;
                if let Some(path) = &cache_path {
                    fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
                    // Write-then-rename so concurrent runs never read a partial cache.
                    let tmp = path.with_extension(format!("sdf.tmp{}", std::process::id()));
                    grid.write_to(BufWriter::new(fs::File::create(&tmp)?))?;
                    fs::rename(&tmp, path)?;
                }
                grid
            }
        };

        Ok(SceneModel {
            mesh,
            face_labels,
            vocab,
            sdf,
            bvh,
            floor_height,
            floor_min,
            floor_max,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn face_labels(&self) -> &[u16] {
        &self.face_labels
    }

    pub fn vocab(&self) -> &SemanticVocabulary {
        &self.vocab
    }

    pub fn sdf(&self) -> &SdfGrid {
        &self.sdf
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn floor_height(&self) -> f64 {
        self.floor_height
    }

    /// xy bounding rectangle of the floor-labeled faces.
    pub fn floor_rect(&self) -> ([f64; 2], [f64; 2]) {
        (self.floor_min, self.floor_max)
    }

    pub fn max_height(&self) -> f64 {
        self.mesh.bounds().max.z
    }

    /// Signed distance (m) and voxel label at `p`.
    #[inline]
    pub fn sample(&self, p: &Point3<f64>) -> (f64, u16) {
        self.sdf.sample(p)
    }

    pub fn labels_file(&self) -> LabelsFile {
        LabelsFile {
            classes: self.vocab.classes().to_vec(),
            floor_id: self.vocab.floor_id(),
            face_labels: self.face_labels.clone(),
        }
    }

    pub fn save(&self, mesh_path: &Path, labels_path: &Path) -> Result<(), SceneError> {
        let mut w = BufWriter::new(fs::File::create(mesh_path)?);
        write_obj(&self.mesh, &mut w)?;
        let labels = serde_json::to_vec_pretty(&self.labels_file())?;
        fs::write(labels_path, labels)?;
        Ok(())
    }
}

fn validate_labels(labels: &[u16], faces: usize, vocab: &SemanticVocabulary) -> Result<(), SceneError> {
    if labels.len() < faces {
        return Err(SceneError::MissingLabel {
            face: labels.len(),
            labels: labels.len(),
            faces,
        });
    }
    if labels.len() > faces {
        return Err(SceneError::ExtraLabels {
            labels: labels.len(),
            faces,
        });
    }
    if let Some((face, &label)) = labels.iter().enumerate().find(|(_, &l)| !vocab.contains(l)) {
        return Err(SceneError::InvalidLabel { face, label });
    }
    Ok(())
}

/// Most common floor-face centroid height in 1 cm bins (lowest bin on ties),
/// averaged within the winning bin.
fn modal_height(mesh: &TriangleMesh, faces: &[usize]) -> f64 {
    let mut bins: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for &f in faces {
        let [a, b, c] = mesh.triangle(f);
        let z = (a.z + b.z + c.z) / 3.0;
        bins.entry((z / 0.01).round() as i64).or_default().push(z);
    }
    let (_, zs) = bins
        .iter()
        .fold(None::<(usize, &Vec<f64>)>, |best, (_, zs)| match best {
            Some((n, _)) if n >= zs.len() => best,
            _ => Some((zs.len(), zs)),
        })
        .expect("at least one floor face");
    zs.iter().sum::<f64>() / zs.len() as f64
}

/// Grid box around the scene with the floor height on a node plane.
fn bake_bounds(mesh: &TriangleMesh, floor_height: f64, options: &SceneOptions) -> Aabb {
    let b = mesh.bounds();
    let cell = options.cell_size;
    let below = (options.margin / cell).ceil() * cell;
    let top = b.max.z.max(floor_height + options.headroom);
    Aabb::new(
        Point3::new(b.min.x - options.margin, b.min.y - options.margin, floor_height - below),
        Point3::new(b.max.x + options.margin, b.max.y + options.margin, top),
    )
}

fn sdf_cache_key(mesh: &TriangleMesh, vocab: &SemanticVocabulary, options: &SceneOptions) -> String {
    let mut h = Sha256::new();
    h.update(SDF_CACHE_VERSION.to_le_bytes());
    for v in mesh.vertices() {
        for c in v.iter() {
            h.update(c.to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        for i in t {
            h.update(i.to_le_bytes());
        }
    }
    for f in 0..mesh.triangle_count() {
        h.update(mesh.face_attribute(f).to_le_bytes());
    }
    h.update(vocab.floor_id().to_le_bytes());
    h.update(options.cell_size.to_le_bytes());
    h.update(options.margin.to_le_bytes());
    h.update(options.headroom.to_le_bytes());
    hex::encode(h.finalize())
}

/// Loads an OBJ scene and its JSON label sidecar.
pub fn load_scene(mesh_path: &Path, labels_path: &Path, options: &SceneOptions) -> Result<SceneModel, SceneError> {
    let mesh = fs::File::open(mesh_path)
        .map_err(SceneError::from)
        .and_then(|f| Ok(read_obj(BufReader::new(f))?))
        .map_err(|e| e.at(mesh_path))?;
    let labels: LabelsFile = fs::read(labels_path)
        .map_err(SceneError::from)
        .and_then(|bytes| Ok(serde_json::from_slice(&bytes)?))
        .map_err(|e| e.at(labels_path))?;
    let vocab = SemanticVocabulary::new(labels.classes, labels.floor_id).map_err(|e| e.at(labels_path))?;
    SceneModel::new(mesh, labels.face_labels, vocab, options).map_err(|e| e.at(labels_path))
}

/// Sidecar path convention: `room.obj` → `room.labels.json`.
pub fn default_labels_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("labels.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorSpec {
    pub min: [f64; 2],
    pub max: [f64; 2],
    #[serde(default)]
    pub height: f64,
}

/// An axis-aligned (up to yaw) box resting on the floor unless `base` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub label: String,
    /// Footprint center (x, y).
    pub center: [f64; 2],
    /// Full extents (x, y, z) before yaw.
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    /// Bottom height; defaults to the floor height.
    #[serde(default)]
    pub base: Option<f64>,
}

impl BoxSpec {
    pub fn top_center(&self, floor_height: f64) -> Point3<f64> {
        let base = self.base.unwrap_or(floor_height);
        Point3::new(self.center[0], self.center[1], base + self.size[2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub floor: FloorSpec,
    #[serde(default)]
    pub objects: Vec<BoxSpec>,
}

impl SceneRecipe {
    pub fn floor_only(min: [f64; 2], max: [f64; 2]) -> Self {
        SceneRecipe {
            floor: FloorSpec { min, max, height: 0.0 },
            objects: Vec::new(),
        }
    }

    pub fn with_box(mut self, label: &str, center: [f64; 2], size: [f64; 3], yaw_deg: f64) -> Self {
        self.objects.push(BoxSpec {
            label: label.to_string(),
            center,
            size,
            yaw_deg,
            base: None,
        });
        self
    }

    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_path(path: &Path) -> Result<Self, SceneError> {
        let text = fs::read_to_string(path).map_err(|e| SceneError::from(e).at(path))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(SceneError::from)
        } else {
            toml::from_str(&text).map_err(SceneError::from)
        };
        parsed.map_err(|e| e.at(path))
    }
}

/// Builds a floor quad plus one watertight box per recipe object.
pub fn synth_scene(
    recipe: &SceneRecipe,
    vocab: &SemanticVocabulary,
    options: &SceneOptions,
) -> Result<SceneModel, SceneError> {
    let (mesh, labels) = synth_mesh(recipe, vocab)?;
    SceneModel::new(mesh, labels, vocab.clone(), options)
}

pub fn synth_mesh(recipe: &SceneRecipe, vocab: &SemanticVocabulary) -> Result<(TriangleMesh, Vec<u16>), SceneError> {
    let f = &recipe.floor;
    if !(f.max[0] > f.min[0] && f.max[1] > f.min[1]) {
        return Err(SceneError::Recipe(format!("inverted floor {:?}..{:?}", f.min, f.max)));
    }
    let z = f.height;
    let mut mesh = TriangleMesh::new(
        vec![
            Point3::new(f.min[0], f.min[1], z),
            Point3::new(f.max[0], f.min[1], z),
            Point3::new(f.max[0], f.max[1], z),
            Point3::new(f.min[0], f.max[1], z),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )?;
    let mut labels = vec![vocab.floor_id(); 2];
    for (i, obj) in recipe.objects.iter().enumerate() {
        if obj.size.iter().any(|&s| !(s > 0.0)) {
            return Err(SceneError::Recipe(format!("object {i} ({}) is inverted: size {:?}", obj.label, obj.size)));
        }
        let label = vocab
            .id(&obj.label)
            .ok_or_else(|| SceneError::Recipe(format!("object {i}: unknown class {:?}", obj.label)))?;
        let base = obj.base.unwrap_or(z);
        let center = Point3::new(obj.center[0], obj.center[1], base + obj.size[2] / 2.0);
        let b = box_mesh(
            center,
            Vector3::new(obj.size[0], obj.size[1], obj.size[2]),
            obj.yaw_deg.to_radians(),
        );
        mesh.merge(&b);
        labels.extend(std::iter::repeat(label).take(b.triangle_count()));
    }
    Ok((mesh, labels))
}
