//! Signed distance field baking, sampling and the binary cache format.
//!
//! Values live on grid nodes: node `(i, j, k)` sits at `origin + cell_size * (i, j, k)`
//! and is stored at `i + dims[0] * (j + dims[1] * k)` (x fastest). Distances are
//! negative inside closed geometry.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::bvh::Bvh;
use super::mesh::{Aabb, TriangleMesh};
use super::GeometryError;

pub const SDF_MAGIC: &[u8; 8] = b"PAAKSDF1";
pub const DEFAULT_CELL_SIZE: f64 = 0.05;
pub const DEFAULT_MAX_VOXELS: u64 = 64_000_000;

/// Horizontal rectangle below which space counts as solid.
///
/// Scan floors are open surfaces, so the winding number alone cannot tell the
/// underside of a floor from the room above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolidGround {
    pub height: f64,
    pub min_xy: [f64; 2],
    pub max_xy: [f64; 2],
}

impl SolidGround {
    fn contains(&self, p: &Point3<f64>) -> bool {
        p.z < self.height
            && (self.min_xy[0]..=self.max_xy[0]).contains(&p.x)
            && (self.min_xy[1]..=self.max_xy[1]).contains(&p.y)
    }
}

#[derive(Debug, Clone)]
pub struct BakeOptions {
    pub max_voxels: u64,
    /// Faces with this attribute still count for distance and labels but are
    /// skipped in the winding-number sum (open surfaces such as floors).
    pub open_attribute: Option<u32>,
    pub ground: Option<SolidGround>,
}

impl Default for BakeOptions {
    fn default() -> Self {
        BakeOptions {
            max_voxels: DEFAULT_MAX_VOXELS,
            open_attribute: None,
            ground: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    origin: Point3<f64>,
    cell_size: f64,
    dims: [u32; 3],
    values: Vec<f32>,
    semantic_ids: Vec<u16>,
}

impl SdfGrid {
    pub fn new(
        origin: Point3<f64>,
        cell_size: f64,
        dims: [u32; 3],
        values: Vec<f32>,
        semantic_ids: Vec<u16>,
    ) -> Result<Self, GeometryError> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(GeometryError::InvalidCellSize(cell_size));
        }
        let count = dims.iter().map(|&d| d as u64).product::<u64>();
        if dims.contains(&0) || count != values.len() as u64 || count != semantic_ids.len() as u64 {
            return Err(GeometryError::GridShape {
                dims,
                values: values.len(),
                semantic_ids: semantic_ids.len(),
            });
        }
        Ok(SdfGrid {
            origin,
            cell_size,
            dims,
            values,
            semantic_ids,
        })
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn dims(&self) -> [u32; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn semantic_ids(&self) -> &[u16] {
        &self.semantic_ids
    }

    /// Box spanned by the node centers.
    pub fn bounds(&self) -> Aabb {
        let far = Vector3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        ) * self.cell_size;
        Aabb::new(self.origin, self.origin + far)
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] as usize * (j + self.dims[1] as usize * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    pub fn node_value(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.index(i, j, k)]
    }

    /// Trilinear distance and nearest-node label at `p`.
    ///
    /// Outside the grid the boundary value is clamped to be non-negative and the
    /// Euclidean distance to the grid box is added, so exterior points are always
    /// positive.
    #[inline]
    pub fn sample(&self, p: &Point3<f64>) -> (f64, u16) {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        let mut nearest = [0usize; 3];
        let mut outside_sq = 0.0;
        for a in 0..3 {
            let n = self.dims[a] as usize;
            let g = (p[a] - self.origin[a]) / self.cell_size;
            let upper = (n - 1) as f64;
            let gc = if g < 0.0 {
                outside_sq += (g * self.cell_size).powi(2);
                0.0
            } else if g > upper {
                outside_sq += ((g - upper) * self.cell_size).powi(2);
                upper
            } else {
                g
            };
            if n == 1 {
                base[a] = 0;
                frac[a] = 0.0;
            } else {
                let i0 = (gc.floor() as usize).min(n - 2);
                base[a] = i0;
                frac[a] = gc - i0 as f64;
            }
            nearest[a] = (gc.round() as usize).min(n - 1);
        }

        let step = |a: usize| usize::from(self.dims[a] > 1);
        let (sx, sy, sz) = (step(0), step(1), step(2));
        let (i, j, k) = (base[0], base[1], base[2]);
        let v = |di: usize, dj: usize, dk: usize| self.values[self.index(i + di, j + dj, k + dk)] as f64;
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let c00 = v(0, 0, 0) * (1.0 - fx) + v(sx, 0, 0) * fx;
        let c10 = v(0, sy, 0) * (1.0 - fx) + v(sx, sy, 0) * fx;
        let c01 = v(0, 0, sz) * (1.0 - fx) + v(sx, 0, sz) * fx;
        let c11 = v(0, sy, sz) * (1.0 - fx) + v(sx, sy, sz) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        let mut value = c0 * (1.0 - fz) + c1 * fz;

        if outside_sq > 0.0 {
            value = value.max(0.0) + outside_sq.sqrt();
        }
        let label = self.semantic_ids[self.index(nearest[0], nearest[1], nearest[2])];
        (value, label)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(SDF_MAGIC)?;
        for a in 0..3 {
            w.write_all(&self.origin[a].to_le_bytes())?;
        }
        w.write_all(&self.cell_size.to_le_bytes())?;
        for d in self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 6);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.semantic_ids {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, GeometryError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SDF_MAGIC {
            return Err(GeometryError::BadMagic {
                expected: "PAAKSDF1",
            });
        }
        let mut f8 = [0u8; 8];
        let mut origin = [0.0; 3];
        for o in &mut origin {
            r.read_exact(&mut f8)?;
            *o = f64::from_le_bytes(f8);
        }
        r.read_exact(&mut f8)?;
        let cell_size = f64::from_le_bytes(f8);
        let mut dims = [0u32; 3];
        let mut u4 = [0u8; 4];
        for d in &mut dims {
            r.read_exact(&mut u4)?;
            *d = u32::from_le_bytes(u4);
        }
        let count = dims.iter().map(|&d| d as u64).product::<u64>();
        if count > DEFAULT_MAX_VOXELS * 4 {
            return Err(GeometryError::TooManyVoxels {
                count,
                max: DEFAULT_MAX_VOXELS * 4,
            });
        }
        let count = count as usize;
        let mut raw = vec![0u8; count * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut raw = vec![0u8; count * 2];
        r.read_exact(&mut raw)?;
        let semantic_ids = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        SdfGrid::new(Point3::from(origin), cell_size, dims, values, semantic_ids)
    }
}

/// Generalized winding number of a closed, outward-oriented mesh at `p`
/// (1 inside, 0 outside), from the solid angles of its triangles
/// (Van Oosterom & Strackee).
pub fn winding_number(mesh: &TriangleMesh, p: &Point3<f64>, skip_attribute: Option<u32>) -> f64 {
    let mut total = 0.0;
    for face in 0..mesh.triangle_count() {
        if skip_attribute.is_some_and(|s| mesh.face_attribute(face) == s) {
            continue;
        }
        let [a, b, c] = mesh.triangle(face);
        total += solid_angle(&(a - p), &(b - p), &(c - p));
    }
    total / (4.0 * PI)
}

fn solid_angle(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let numerator = a.dot(&b.cross(c));
    let denominator = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    2.0 * numerator.atan2(denominator)
}

/// Samples the signed distance to `mesh` on a node grid covering `bounds`.
///
/// Magnitude comes from the BVH nearest-surface query, the sign from the
/// generalized winding number (> 0.5 is inside) or [`BakeOptions::ground`], and
/// each node keeps the attribute of its nearest face as its label.
pub fn bake_sdf(
    mesh: &TriangleMesh,
    bvh: &Bvh,
    bounds: &Aabb,
    cell_size: f64,
    options: &BakeOptions,
) -> Result<SdfGrid, GeometryError> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(GeometryError::InvalidCellSize(cell_size));
    }
    if bounds.is_empty() {
        return Err(GeometryError::EmptyBounds);
    }
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let extent = bounds.extent();
    let mut dims = [0u32; 3];
    let mut count = 1u64;
    for a in 0..3 {
        let cells = (extent[a] / cell_size - 1e-9).ceil().max(0.0);
        let n = cells as u64 + 1;
        count = count.saturating_mul(n);
        if count > options.max_voxels || n > u32::MAX as u64 {
            return Err(GeometryError::TooManyVoxels {
                count,
                max: options.max_voxels,
            });
        }
        dims[a] = n as u32;
    }

    let origin = bounds.min;
    let (nx, ny) = (dims[0] as usize, dims[1] as usize);
    let samples: Vec<(f32, u16)> = (0..count as usize)
        .into_par_iter()
        .map(|idx| {
            let i = idx % nx;
            let j = (idx / nx) % ny;
            let k = idx / (nx * ny);
            let p = origin + Vector3::new(i as f64, j as f64, k as f64) * cell_size;
            let hit = bvh.nearest_surface(mesh, &p);
            let inside = options.ground.is_some_and(|g| g.contains(&p))
                || winding_number(mesh, &p, options.open_attribute) > 0.5;
            let d = if inside { -hit.distance } else { hit.distance };
            (d as f32, mesh.face_attribute(hit.face) as u16)
        })
        .collect();
    let (values, semantic_ids) = samples.into_iter().unzip();
    SdfGrid::new(origin, cell_size, dims, values, semantic_ids)
}
