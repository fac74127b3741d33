//! Bounding volume hierarchy over mesh triangles for nearest-surface queries.

use nalgebra::Point3;

use super::mesh::{closest_point_on_triangle, Aabb, TriangleMesh};
use super::GeometryError;

const MAX_LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
pub enum BvhNode {
    Leaf {
        bounds: Aabb,
        /// Range into [`Bvh::triangle_order`].
        start: usize,
        end: usize,
    },
    Interior {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    pub fn bounds(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { bounds, .. } | BvhNode::Interior { bounds, .. } => bounds,
        }
    }
}

/// Flattened BVH. Node 0 is the root.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    triangle_order: Vec<u32>,
}

/// Result of a nearest-surface query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub distance: f64,
    pub point: Point3<f64>,
    pub face: usize,
}

impl SurfaceHit {
    /// Strict ordering used by every query path: distance first, then face index.
    fn better_than(&self, other: &SurfaceHit) -> bool {
        self.distance < other.distance || (self.distance == other.distance && self.face < other.face)
    }
}

pub fn build_bvh(mesh: &TriangleMesh) -> Result<Bvh, GeometryError> {
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let boxes: Vec<Aabb> = (0..mesh.triangle_count())
        .map(|f| Aabb::from_points(mesh.triangle(f).iter()))
        .collect();
    let centroids: Vec<Point3<f64>> = boxes.iter().map(Aabb::center).collect();
    let mut order: Vec<u32> = (0..mesh.triangle_count() as u32).collect();
    let mut nodes = Vec::with_capacity(2 * mesh.triangle_count() / MAX_LEAF_SIZE + 1);
    build_node(&mut nodes, &mut order, 0, mesh.triangle_count(), &boxes, &centroids);
    Ok(Bvh {
        nodes,
        triangle_order: order,
    })
}

fn build_node(
    nodes: &mut Vec<BvhNode>,
    order: &mut [u32],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Point3<f64>],
) -> usize {
    let bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |b, &t| b.union(&boxes[t as usize]));
    let index = nodes.len();
    if end - start <= MAX_LEAF_SIZE {
        nodes.push(BvhNode::Leaf { bounds, start, end });
        return index;
    }
    let centroid_bounds = Aabb::from_points(order[start..end].iter().map(|&t| &centroids[t as usize]));
    let axis = centroid_bounds.longest_axis();
    order[start..end].sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let mid = start + (end - start) / 2;
    // Placeholder, patched once children exist.
    nodes.push(BvhNode::Leaf { bounds, start, end });
    let left = build_node(nodes, order, start, mid, boxes, centroids);
    let right = build_node(nodes, order, mid, end, boxes, centroids);
    nodes[index] = BvhNode::Interior { bounds, left, right };
    index
}

impl Bvh {
    pub fn nodes(&self) -> &[BvhNode] {
        &self.nodes
    }

    /// Triangle indices of a leaf node.
    pub fn leaf_triangles(&self, node: usize) -> Option<&[u32]> {
        match self.nodes[node] {
            BvhNode::Leaf { start, end, .. } => Some(&self.triangle_order[start..end]),
            BvhNode::Interior { .. } => None,
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, BvhNode::Leaf { .. }))
            .count()
    }

    /// Closest point on the mesh surface. `mesh` must be the mesh the tree was built from.
    pub fn nearest_surface(&self, mesh: &TriangleMesh, point: &Point3<f64>) -> SurfaceHit {
        let mut best = SurfaceHit {
            distance: f64::INFINITY,
            point: *point,
            face: usize::MAX,
        };
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            let box_dist = node.bounds().distance_squared(point).sqrt();
            if box_dist > best.distance {
                continue;
            }
            match *node {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.triangle_order[start..end] {
                        let hit = triangle_hit(mesh, t as usize, point);
                        if hit.better_than(&best) {
                            best = hit;
                        }
                    }
                }
                BvhNode::Interior { left, right, .. } => {
                    let dl = self.nodes[left].bounds().distance_squared(point);
                    let dr = self.nodes[right].bounds().distance_squared(point);
                    // Visit the nearer child first.
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

fn triangle_hit(mesh: &TriangleMesh, face: usize, point: &Point3<f64>) -> SurfaceHit {
    let [a, b, c] = mesh.triangle(face);
    let q = closest_point_on_triangle(point, &a, &b, &c);
    SurfaceHit {
        distance: (point - q).norm(),
        point: q,
        face,
    }
}

/// Reference query that visits every triangle.
pub fn nearest_surface_brute_force(mesh: &TriangleMesh, point: &Point3<f64>) -> SurfaceHit {
    (0..mesh.triangle_count())
        .map(|f| triangle_hit(mesh, f, point))
        .fold(
            SurfaceHit {
                distance: f64::INFINITY,
                point: *point,
                face: usize::MAX,
            },
            |best, hit| if hit.better_than(&best) { hit } else { best },
        )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mesh(rng: &mut ChaCha8Rng, count: usize) -> TriangleMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        while triangles.len() < count {
            let base = Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let tri: Vec<Point3<f64>> = (0..3)
                .map(|_| base + nalgebra::Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
                .collect();
            if super::super::mesh::triangle_area(&tri[0], &tri[1], &tri[2]) < 1e-6 {
                continue;
            }
            let i = vertices.len() as u32;
            vertices.extend(tri);
            triangles.push([i, i + 1, i + 2]);
        }
        TriangleMesh::new(vertices, triangles).unwrap()
    }

    #[test]
    fn empty_mesh_is_rejected() {
        let mesh = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(build_bvh(&mesh), Err(GeometryError::EmptyMesh)));
    }

    #[test]
    fn single_triangle_is_one_leaf() {
        let mesh = TriangleMesh::new(
            vec![Point3::origin(), Point3::new(1., 0., 0.), Point3::new(0., 1., 0.)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let bvh = build_bvh(&mesh).unwrap();
        assert_eq!(bvh.nodes().len(), 1);
        assert_eq!(bvh.leaf_triangles(0), Some(&[0u32][..]));
    }

    #[test]
    fn two_disjoint_triangles_midway() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0., 0., 0.),
                Point3::new(1., 0., 0.),
                Point3::new(0., 1., 0.),
                Point3::new(0., 0., 4.),
                Point3::new(1., 0., 4.),
                Point3::new(0., 1., 4.),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let bvh = build_bvh(&mesh).unwrap();
        let q = Point3::new(0.2, 0.2, 1.5);
        let hit = bvh.nearest_surface(&mesh, &q);
        let brute = [0, 1]
            .iter()
            .map(|&f| {
                let [a, b, c] = mesh.triangle(f);
                (q - closest_point_on_triangle(&q, &a, &b, &c)).norm()
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(hit.distance, brute);
        assert_eq!(hit.distance, 1.5);
        assert_eq!(hit.face, 0);
    }

    #[test]
    fn point_on_triangle_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mesh = random_mesh(&mut rng, 50);
        let bvh = build_bvh(&mesh).unwrap();
        let [a, b, c] = mesh.triangle(17);
        let q = Point3::from((a.coords + b.coords + c.coords) / 3.0);
        let hit = bvh.nearest_surface(&mesh, &q);
        assert!(hit.distance < 1e-12);
    }

    #[test]
    fn unit_floor_plane_distance() {
        let mesh = TriangleMesh::new(
            vec![
                Point3::new(0., 0., 0.),
                Point3::new(1., 0., 0.),
                Point3::new(1., 1., 0.),
                Point3::new(0., 1., 0.),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let bvh = build_bvh(&mesh).unwrap();
        let hit = bvh.nearest_surface(&mesh, &Point3::new(0.5, 0.5, 2.0));
        assert_eq!(hit.distance, 2.0);
    }

    #[test]
    fn random_500_triangles_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mesh = random_mesh(&mut rng, 500);
        let bvh = build_bvh(&mesh).unwrap();
        for _ in 0..100 {
            let q = Point3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let a = bvh.nearest_surface(&mesh, &q);
            let b = nearest_surface_brute_force(&mesh, &q);
            assert!((a.distance - b.distance).abs() <= 1e-9);
            assert_eq!(a.face, b.face);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bvh_matches_brute_force(seed in any::<u64>(), count in 1usize..120) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mesh = random_mesh(&mut rng, count);
            let bvh = build_bvh(&mesh).unwrap();
            // Every triangle in exactly one leaf; parents contain children.
            let mut seen = vec![0u32; count];
            for (i, node) in bvh.nodes().iter().enumerate() {
                match node {
                    BvhNode::Leaf { .. } => {
                        for &t in bvh.leaf_triangles(i).unwrap() {
                            seen[t as usize] += 1;
                            prop_assert!(node.bounds().contains(&Aabb::from_points(mesh.triangle(t as usize).iter())));
                        }
                    }
                    BvhNode::Interior { bounds, left, right } => {
                        prop_assert!(bounds.contains(bvh.nodes()[*left].bounds()));
                        prop_assert!(bounds.contains(bvh.nodes()[*right].bounds()));
                    }
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
            for _ in 0..20 {
                let q = Point3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
                let a = bvh.nearest_surface(&mesh, &q);
                let b = nearest_surface_brute_force(&mesh, &q);
                prop_assert!((a.distance - b.distance).abs() <= 1e-9);
                prop_assert_eq!(a.face, b.face);
                prop_assert!(((q - a.point).norm() - a.distance).abs() < 1e-12);
            }
        }
    }
}
