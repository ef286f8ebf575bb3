//! Spatial queries: k-d tree nearest neighbour and radius search, voxel grid
//! downsampling and point-to-node grouping.
//!
//! Every query is deterministic. Nearest-neighbour ties resolve to the
//! lowest point index, and radius queries return indices in ascending order.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable 3-d tree over a borrowed point slice.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [Point3],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let mut tree = KdTree {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn from_cloud(cloud: &'a PointCloud) -> Self {
        Self::new(&cloud.points)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // widest axis of the bounding box
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            let p = &self.points[i].coords;
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let points = self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let value = points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    /// Closest point as `(index, distance)`; ties go to the lowest index.
    pub fn nearest(&self, query: &Point3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, query, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn nearest_rec(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_rec(near, q, best);
                // `<=` keeps equal-distance candidates with lower indices reachable
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// Indices of all points with distance `<= radius`, ascending.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    /// Number of points with distance `<= radius`.
    pub fn count_within_radius(&self, query: &Point3, radius: f64) -> usize {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.len()
    }

    fn radius_rec(&self, node: usize, q: &Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() <= r2),
                );
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }
}

/// Nearest point of `cloud` to `query` as `(index, distance)`.
pub fn nearest_neighbor(query: &Point3, cloud: &PointCloud) -> Result<(usize, f64)> {
    KdTree::from_cloud(cloud)
        .nearest(query)
        .ok_or(Error::EmptyCloud)
}

/// Assigns every dense point to its nearest superpoint.
///
/// The returned vector is indexed by dense point and holds a superpoint index.
pub fn point_to_node_group(dense: &PointCloud, supers: &PointCloud) -> Result<Vec<usize>> {
    if dense.is_empty() || supers.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::from_cloud(supers);
    Ok(dense
        .iter()
        .map(|p| tree.nearest(p).map(|(i, _)| i).unwrap_or(0))
        .collect())
}

/// Inverts a node assignment into per-node member lists (ascending indices).
pub fn groups_from_assignment(assignment: &[usize], n_nodes: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); n_nodes];
    for (i, &node) in assignment.iter().enumerate() {
        groups[node].push(i);
    }
    groups
}

fn voxel_key(p: &Point3, voxel: f64) -> (i64, i64, i64) {
    (
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    )
}

/// Replaces the points of every occupied voxel by their centroid.
///
/// Output is ordered by voxel lattice index `(ix, iy, iz)`. Intensities, when
/// present, are averaged the same way.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::invalid(format!(
            "voxel size must be positive, got {voxel}"
        )));
    }
    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, f64, usize)> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let intensity = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        let cell = cells
            .entry(voxel_key(p, voxel))
            .or_insert((Vector3::zeros(), 0.0, 0));
        cell.0 += p.coords;
        cell.1 += intensity;
        cell.2 += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut intensity = Vec::with_capacity(cells.len());
    for (sum, isum, n) in cells.into_values() {
        let n = n as f64;
        points.push(Point3::from(sum / n));
        intensity.push(isum / n);
    }
    Ok(PointCloud {
        points,
        intensity: cloud.intensity.as_ref().map(|_| intensity),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point3::new(
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                        rng.random_range(-extent..extent),
                    )
                })
                .collect(),
        )
    }

    fn brute_nearest(q: &Point3, c: &PointCloud) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in c.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn exact_hit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cloud(&mut rng, 20, 5.0);
        let (i, d) = nearest_neighbor(&c.points[5], &c).unwrap();
        assert_eq!((i, d), (5, 0.0));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let mut pts: Vec<Point3> = (0..10)
            .map(|i| Point3::new(10.0 + i as f64, 50.0, 0.0))
            .collect();
        pts[2] = Point3::new(1.0, 0.0, 0.0);
        pts[7] = Point3::new(-1.0, 0.0, 0.0);
        let c = PointCloud::new(pts);
        let (i, d) = nearest_neighbor(&Point3::origin(), &c).unwrap();
        assert_eq!(i, 2);
        assert_eq!(d, 1.0);

        // many duplicates spread over several leaves
        let c = PointCloud::new(vec![Point3::new(1.0, 1.0, 1.0); 100]);
        assert_eq!(nearest_neighbor(&Point3::origin(), &c).unwrap().0, 0);
    }

    #[test]
    fn empty_reference() {
        let err = nearest_neighbor(&Point3::origin(), &PointCloud::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty reference cloud");
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_cloud(&mut rng, 1000, 10.0);
        let tree = KdTree::from_cloud(&c);
        for _ in 0..100 {
            let q = random_cloud(&mut rng, 1, 12.0).points[0];
            assert_eq!(tree.nearest(&q).unwrap(), brute_nearest(&q, &c));
        }
    }

    #[test]
    fn radius_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = random_cloud(&mut rng, 2000, 5.0);
        let tree = KdTree::from_cloud(&c);
        for _ in 0..50 {
            let q = random_cloud(&mut rng, 1, 5.0).points[0];
            let expect: Vec<usize> = (0..c.len())
                .filter(|&i| (c.points[i] - q).norm() <= 1.3)
                .collect();
            assert_eq!(tree.within_radius(&q, 1.3), expect);
        }
    }

    #[test]
    fn grouping_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dense = random_cloud(&mut rng, 50, 3.0);
        let self_assign = point_to_node_group(&dense, &dense).unwrap();
        assert_eq!(self_assign, (0..50).collect::<Vec<_>>());

        let one = PointCloud::new(vec![Point3::origin()]);
        assert!(point_to_node_group(&dense, &one)
            .unwrap()
            .iter()
            .all(|&g| g == 0));

        let supers = random_cloud(&mut rng, 40, 3.0);
        let dense = random_cloud(&mut rng, 800, 3.0);
        let got = point_to_node_group(&dense, &supers).unwrap();
        for (i, p) in dense.iter().enumerate() {
            assert_eq!(got[i], brute_nearest(p, &supers).0);
        }
        let groups = groups_from_assignment(&got, supers.len());
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), dense.len());

        assert!(point_to_node_group(&PointCloud::default(), &supers).is_err());
    }

    #[test]
    fn voxel_single_cell() {
        let pts: Vec<Point3> = (0..8)
            .map(|i| {
                Point3::new(
                    0.01 + 0.2 * (i & 1) as f64,
                    0.02 + 0.2 * ((i >> 1) & 1) as f64,
                    0.03 + 0.2 * ((i >> 2) & 1) as f64,
                )
            })
            .collect();
        let out = voxel_downsample(&PointCloud::new(pts), 0.25).unwrap();
        assert_eq!(out.len(), 1);
        approx::assert_abs_diff_eq!(
            out.points[0],
            Point3::new(0.11, 0.12, 0.13),
            epsilon = 1e-12
        );
    }

    #[test]
    fn voxel_sparse_line_and_empty() {
        let pts: Vec<Point3> = (0..20)
            .map(|i| Point3::new(i as f64 + 0.1, 0.1, 0.1))
            .collect();
        assert_eq!(
            voxel_downsample(&PointCloud::new(pts), 0.25).unwrap().len(),
            20
        );
        assert!(voxel_downsample(&PointCloud::default(), 0.25)
            .unwrap()
            .is_empty());
        assert!(voxel_downsample(&PointCloud::default(), 0.0).is_err());
    }

    #[test]
    fn voxel_output_close_to_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_cloud(&mut rng, 10_000, 3.0);
        let voxel = 0.25;
        let out = voxel_downsample(&c, voxel).unwrap();
        let bound = voxel * 3f64.sqrt() / 2.0;
        let tree = KdTree::from_cloud(&c);
        for p in out.iter() {
            // brute-force check on a sample, tree for the rest
            let (_, d) = tree.nearest(p).unwrap();
            assert!(d <= bound, "{d} > {bound}");
        }
        for p in out.iter().take(200) {
            assert!(brute_nearest(p, &c).1 <= bound);
        }
    }

    proptest! {
        #[test]
        fn voxel_idempotent(
            pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -5.0..5.0f64), 1..300),
            voxel in 0.1..3.0f64,
        ) {
            let c = PointCloud::new(pts.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect());
            let once = voxel_downsample(&c, voxel).unwrap();
            let twice = voxel_downsample(&once, voxel).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
