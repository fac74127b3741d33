//! Triangle meshes, BVH nearest-surface queries and signed distance fields.

mod bvh;
mod mesh;
mod obj;
pub mod primitives;
mod sdf;

use thiserror::Error;

pub use bvh::{build_bvh, nearest_surface_brute_force, Bvh, BvhNode, SurfaceHit};
pub use mesh::{closest_point_on_triangle, triangle_area, Aabb, TriangleMesh, MIN_TRIANGLE_AREA};
pub use obj::{read_obj, write_obj};
pub use sdf::{
    bake_sdf, winding_number, BakeOptions, SdfGrid, SolidGround, DEFAULT_CELL_SIZE, DEFAULT_MAX_VOXELS,
    SDF_MAGIC,
};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: u32,
        vertex_count: usize,
    },
    #[error("face {face} is degenerate (area {area:e} m²)")]
    DegenerateTriangle { face: usize, area: f64 },
    #[error("expected {expected} face attributes, got {got}")]
    AttributeCount { expected: usize, got: usize },
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("bake bounds are empty")]
    EmptyBounds,
    #[error("grid needs {count} voxels, limit is {max}")]
    TooManyVoxels { count: u64, max: u64 },
    #[error("grid dims {dims:?} do not match {values} values / {semantic_ids} labels")]
    GridShape {
        dims: [u32; 3],
        values: usize,
        semantic_ids: usize,
    },
    #[error("bad magic bytes, expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("OBJ line {line}: {message}")]
    Obj { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nearest point on the mesh surface, via the BVH.
pub fn nearest_surface(bvh: &Bvh, mesh: &TriangleMesh, point: &nalgebra::Point3<f64>) -> SurfaceHit {
    bvh.nearest_surface(mesh, point)
}

/// Distance and label at `point`; see [`SdfGrid::sample`].
pub fn sample_sdf(grid: &SdfGrid, point: &nalgebra::Point3<f64>) -> (f64, u16) {
    grid.sample(point)
}
