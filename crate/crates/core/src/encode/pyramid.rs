//! Multi-level point pyramid with handcrafted local shape descriptors.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::nn::{l2_normalize_rows, Matrix};
use crate::spatial::{point_to_node_group, voxel_downsample, KdTree};

/// Descriptor channels per radius: linearity, planarity, sphericity,
/// normal verticality, mean height, height extent, log density.
pub const RAW_CHANNELS: usize = 7;

const MIN_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenFeatures {
    /// Covariance eigenvalues, descending.
    pub eigenvalues: [f64; 3],
    pub linearity: f64,
    pub planarity: f64,
    pub sphericity: f64,
    /// Unit eigenvector of the smallest eigenvalue.
    pub normal: Vector3<f64>,
}

/// Covariance eigen-features of a neighbourhood; `None` below three points or
/// for a single repeated point.
pub fn eigen_features<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<EigenFeatures> {
    let mut n = 0usize;
    let mut sum = Vector3::zeros();
    let mut outer = Matrix3::zeros();
    for p in points {
        n += 1;
        sum += p.coords;
        outer += p.coords * p.coords.transpose();
    }
    if n < 3 {
        return None;
    }
    let mean = sum / n as f64;
    let cov = outer / n as f64 - mean * mean.transpose();
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l = order.map(|i| eig.eigenvalues[i].max(0.0));
    if !(l[0] > 1e-12) {
        return None;
    }
    Some(EigenFeatures {
        eigenvalues: l,
        linearity: (l[0] - l[1]) / l[0],
        planarity: (l[1] - l[2]) / l[0],
        sphericity: l[2] / l[0],
        normal: eig.eigenvectors.column(order[2]).normalize(),
    })
}

/// Raw channels of the neighbourhood of `center` within `radius`, each in `[0, 1]`.
pub fn raw_descriptor(
    tree: &KdTree<'_>,
    points: &[Point3],
    center: &Point3,
    radius: f64,
    cfg: &EncoderConfig,
) -> [f64; RAW_CHANNELS] {
    let idx = tree.within_radius(center, radius);
    let mut out = [0.0; RAW_CHANNELS];
    if let Some(e) = eigen_features(idx.iter().map(|&i| &points[i])) {
        out[0] = e.linearity;
        out[1] = e.planarity;
        out[2] = e.sphericity;
        out[3] = e.normal.z.abs();
    }
    if !idx.is_empty() {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &i in &idx {
            let z = points[i].z;
            lo = lo.min(z);
            hi = hi.max(z);
            sum += z;
        }
        let mean = sum / idx.len() as f64;
        out[4] = ((mean + cfg.sensor_height) / cfg.height_scale).clamp(0.0, 1.0);
        out[5] = ((hi - lo) / cfg.height_scale).clamp(0.0, 1.0);
        // a fully covered planar disc at the base voxel size
        let v0 = cfg.voxel_sizes[0];
        let full = std::f64::consts::PI * radius * radius / (v0 * v0);
        out[6] = ((1.0 + idx.len() as f64).ln() / (1.0 + full).ln()).clamp(0.0, 1.0);
    }
    out
}

/// Gaussian bump encoding of `[0, 1]` channels into `dim` values, bumps
/// dealt round-robin across channels. Not normalised.
pub fn lift(raw: &[f64], dim: usize) -> Vec<f64> {
    let c = raw.len();
    let mut out = Vec::with_capacity(dim);
    for (ch, &v) in raw.iter().enumerate() {
        let bumps = dim / c + usize::from(ch < dim % c);
        if bumps == 0 {
            continue;
        }
        let (spacing, offset) = if bumps == 1 {
            (1.0, 0.5)
        } else {
            (1.0 / (bumps - 1) as f64, 0.0)
        };
        let sigma = 0.6 * spacing;
        for b in 0..bumps {
            let mu = offset + b as f64 * spacing;
            out.push((-(v - mu).powi(2) / (2.0 * sigma * sigma)).exp());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub points: PointCloud,
    /// One L2-normalised row per point.
    pub features: Matrix,
    pub voxel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    /// Finest first; the last level holds the superpoints.
    pub levels: Vec<PyramidLevel>,
    /// `parents[k][i]` is the level `k + 1` point nearest to level `k` point `i`.
    pub parents: Vec<Vec<usize>>,
}

impl FeaturePyramid {
    pub fn dense(&self) -> &PyramidLevel {
        &self.levels[0]
    }

    pub fn superpoints(&self) -> &PyramidLevel {
        self.levels.last().expect("pyramid has at least one level")
    }
}

/// Shape descriptors, with a layout block over `rings` appended when
/// `rings` is non-empty.
fn descriptor_rows(
    centers: &[Point3],
    support: &[Point3],
    radii: &[f64],
    rings: &[f64],
    dim: usize,
    cfg: &EncoderConfig,
) -> Matrix {
    let tree = KdTree::new(support);
    let rows: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|c| {
            let raw: Vec<f64> = radii
                .iter()
                .flat_map(|&r| raw_descriptor(&tree, support, c, r, cfg))
                .collect();
            if rings.is_empty() {
                return lift(&raw, dim);
            }
            let mut block = layout_descriptor(&tree, support, c, rings, cfg);
            let mut shape = lift(&raw, dim - block.len());
            normalize(&mut shape, 1.0);
            normalize(&mut block, cfg.layout_weight);
            shape.extend(block);
            shape
        })
        .collect();
    let mut m = Matrix::from_fn(centers.len(), dim, |i, j| rows[i][j]);
    l2_normalize_rows(&mut m);
    m
}

fn normalize(v: &mut [f64], scale: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= scale / n);
    }
}

/// Yaw-invariant layout of the surroundings: for each annulus and height
/// band above ground, the fraction of angular sectors containing a point.
/// Height edges are consecutive band limits, so points below the first edge
/// (the ground itself) are ignored.
pub fn layout_descriptor(
    tree: &KdTree<'_>,
    points: &[Point3],
    center: &Point3,
    rings: &[f64],
    cfg: &EncoderConfig,
) -> Vec<f64> {
    let heights = &cfg.layout_heights;
    let (Some(&r_max), Some(&h_max)) = (rings.last(), heights.last()) else {
        return Vec::new();
    };
    let sectors = cfg.layout_sectors;
    let ground = -cfg.sensor_height;
    // a ball around the mid-height of the column covers the whole cylinder
    let half = h_max / 2.0 + 1.0;
    let query = Point3::new(center.x, center.y, ground + h_max / 2.0);
    let bands = heights.len().saturating_sub(1);
    let mut occupied = vec![false; rings.len() * bands * sectors];
    for i in tree.within_radius(&query, (r_max * r_max + half * half).sqrt()) {
        let p = &points[i];
        let (dx, dy) = (p.x - center.x, p.y - center.y);
        let r = (dx * dx + dy * dy).sqrt();
        let Some(a) = rings.iter().position(|&e| r < e) else {
            continue;
        };
        let h = p.z - ground;
        if h < heights[0] {
            continue;
        }
        let Some(b) = heights[1..].iter().position(|&e| h < e) else {
            continue;
        };
        let turn = (dy.atan2(dx) + std::f64::consts::PI) / std::f64::consts::TAU;
        let s = ((turn * sectors as f64) as usize).min(sectors - 1);
        occupied[(a * bands + b) * sectors + s] = true;
    }
    occupied
        .chunks(sectors)
        .map(|c| c.iter().filter(|&&o| o).count() as f64 / sectors as f64)
        .collect()
}

/// Drops points with fewer than `min_neighbors` other points within `radius`.
pub fn remove_isolated(cloud: &PointCloud, radius: f64, min_neighbors: usize) -> PointCloud {
    if min_neighbors == 0 {
        return cloud.clone();
    }
    let tree = KdTree::from_cloud(cloud);
    let keep: Vec<usize> = (0..cloud.len())
        .into_par_iter()
        .filter(|&i| tree.count_within_radius(&cloud.points[i], radius) > min_neighbors)
        .collect();
    cloud.select(&keep)
}

/// Voxel pyramid with dense descriptors at level 0, mean-pooled features at
/// intermediate levels and wide-radius descriptors at the superpoint level.
pub fn encode_point_pyramid(cloud: &PointCloud, cfg: &EncoderConfig) -> Result<FeaturePyramid> {
    cfg.validate()?;
    if !cloud.is_finite() {
        return Err(Error::NonFinite("point coordinates".into()));
    }
    let base = remove_isolated(
        &voxel_downsample(cloud, cfg.voxel_sizes[0])?,
        cfg.outlier_radius,
        cfg.outlier_min_neighbors,
    );
    if base.len() < MIN_POINTS {
        return Err(Error::DegenerateCloud(format!(
            "{} points after voxelisation, need at least {MIN_POINTS}",
            base.len()
        )));
    }
    let mut clouds = vec![base];
    for &v in &cfg.voxel_sizes[1..] {
        let next = voxel_downsample(clouds.last().expect("non-empty"), v)?;
        clouds.push(next);
    }
    let parents = clouds
        .windows(2)
        .map(|w| point_to_node_group(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;

    let support = &clouds[0].points;
    let top = clouds.len() - 1;
    let mut levels: Vec<PyramidLevel> = Vec::with_capacity(clouds.len());
    for (k, pts) in clouds.iter().enumerate() {
        let features = if k == top && k > 0 {
            descriptor_rows(
                &pts.points,
                support,
                &cfg.super_radii,
                &cfg.layout_rings,
                cfg.super_dim,
                cfg,
            )
        } else if k == 0 {
            descriptor_rows(
                &pts.points,
                support,
                &cfg.dense_radii,
                &cfg.dense_layout_rings,
                cfg.dense_dim,
                cfg,
            )
        } else {
            pool(&levels[k - 1], &parents[k - 1], pts)
        };
        levels.push(PyramidLevel {
            points: pts.clone(),
            features,
            voxel: cfg.voxel_sizes[k],
        });
    }
    Ok(FeaturePyramid { levels, parents })
}

/// Mean of the children's features; childless points copy their nearest finer point.
fn pool(finer: &PyramidLevel, parent_of: &[usize], coarse: &PointCloud) -> Matrix {
    let dim = finer.features.ncols();
    let mut m = Matrix::zeros(coarse.len(), dim);
    let mut counts = vec![0usize; coarse.len()];
    for (i, &p) in parent_of.iter().enumerate() {
        let mut row = m.row_mut(p);
        row += finer.features.row(i);
        counts[p] += 1;
    }
    let orphans: Vec<usize> = (0..coarse.len()).filter(|&i| counts[i] == 0).collect();
    if !orphans.is_empty() {
        let tree = KdTree::from_cloud(&finer.points);
        for i in orphans {
            if let Some((j, _)) = tree.nearest(&coarse.points[i]) {
                m.row_mut(i).copy_from(&finer.features.row(j));
            }
        }
    }
    l2_normalize_rows(&mut m);
    m
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;

    /// Independent PCA: power iteration with deflation on the covariance.
    fn pca_oracle(points: &[Point3]) -> [f64; 3] {
        let n = points.len() as f64;
        let mean = points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n;
        let mut c = Matrix3::zeros();
        for p in points {
            let d = p.coords - mean;
            c += d * d.transpose();
        }
        c /= n;
        let mut out = [0.0; 3];
        for slot in out.iter_mut() {
            let mut v = Vector3::new(0.3, 0.5, 0.8);
            for _ in 0..500 {
                let w = c * v;
                if w.norm() < 1e-300 {
                    break;
                }
                v = w.normalize();
            }
            let l = v.dot(&(c * v));
            *slot = l.max(0.0);
            c -= l * v * v.transpose();
        }
        out
    }

    #[test]
    fn plane_is_planar() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Point3> = (0..400)
            .map(|_| {
                Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    0.0,
                )
            })
            .collect();
        let e = eigen_features(&pts).unwrap();
        let oracle = pca_oracle(&pts);
        for k in 0..3 {
            assert!((e.eigenvalues[k] - oracle[k]).abs() < 1e-9);
        }
        assert!(e.planarity > 0.9, "{e:?}");
        assert!(e.sphericity < 1e-9);
        assert!((e.normal.z.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn blob_is_spherical() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..2000)
            .map(|_| {
                Point3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            })
            .collect();
        let e = eigen_features(&pts).unwrap();
        let oracle = pca_oracle(&pts);
        for k in 0..3 {
            assert!((e.eigenvalues[k] - oracle[k]).abs() < 1e-6);
        }
        assert!(
            e.sphericity > e.linearity && e.sphericity > e.planarity,
            "{e:?}"
        );
    }

    #[test]
    fn lift_shape_and_range() {
        let v = lift(&[0.0, 0.5, 1.0], 8);
        assert_eq!(v.len(), 8);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        // first channel has 3 bumps at 0, 0.5, 1; value 0 peaks the first
        assert_eq!(v[0], 1.0);
    }

    fn box_scene_cloud(seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        for _ in 0..6000 {
            pts.push(Point3::new(
                rng.random_range(-8.0..8.0),
                rng.random_range(-8.0..8.0),
                -1.8,
            ));
        }
        for _ in 0..2000 {
            pts.push(Point3::new(
                3.0,
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.8..1.0),
            ));
        }
        PointCloud::new(pts)
    }

    #[test]
    fn pyramid_structure() {
        let cfg = EncoderConfig::default();
        let pyr = encode_point_pyramid(&box_scene_cloud(3), &cfg).unwrap();
        assert_eq!(pyr.levels.len(), 4);
        assert_eq!(pyr.dense().features.ncols(), cfg.dense_dim);
        assert_eq!(pyr.superpoints().features.ncols(), cfg.super_dim);
        for w in pyr.levels.windows(2) {
            assert!(w[1].points.len() <= w[0].points.len());
        }
        for level in &pyr.levels {
            for row in level.features.row_iter() {
                assert!((row.norm() - 1.0).abs() < 1e-6);
            }
        }
        for (k, parents) in pyr.parents.iter().enumerate() {
            assert_eq!(parents.len(), pyr.levels[k].points.len());
            let coarse = &pyr.levels[k + 1].points;
            for (i, &p) in parents.iter().enumerate() {
                let q = &pyr.levels[k].points.points[i];
                let best = coarse
                    .iter()
                    .map(|c| (c - q).norm())
                    .fold(f64::INFINITY, f64::min);
                assert!(((coarse.points[p] - q).norm() - best).abs() < 1e-12);
            }
        }
        assert_eq!(
            pyr,
            encode_point_pyramid(&box_scene_cloud(3), &cfg).unwrap()
        );
    }

    #[test]
    fn z_preserving_invariance() {
        let cfg = EncoderConfig::default();
        let cloud = box_scene_cloud(4);
        let t = crate::geometry::RigidTransform::from_yaw(0.9, Vector3::new(0.0, 0.0, 0.0));
        let a = encode_point_pyramid(&cloud, &cfg).unwrap();
        // compare descriptors at corresponding dense locations directly
        let moved = t.apply(&a.dense().points);
        let tree_a = KdTree::from_cloud(&a.dense().points);
        let tree_b = KdTree::from_cloud(&moved);
        for i in (0..a.dense().points.len()).step_by(37) {
            let da = raw_descriptor(
                &tree_a,
                &a.dense().points.points,
                &a.dense().points.points[i],
                0.75,
                &cfg,
            );
            let db = raw_descriptor(&tree_b, &moved.points, &moved.points[i], 0.75, &cfg);
            for k in 0..RAW_CHANNELS {
                assert!((da[k] - db[k]).abs() < 5e-2, "{k}: {} vs {}", da[k], db[k]);
            }
        }
    }

    fn ring_of_posts(yaw: f64) -> Vec<Point3> {
        let cfg = EncoderConfig::default();
        let ground = -cfg.sensor_height;
        let mut pts = Vec::new();
        for k in 0..5 {
            let a = yaw + k as f64 * 0.9 + 0.05;
            let r = 1.5 + k as f64;
            for j in 0..20 {
                pts.push(Point3::new(
                    r * a.cos(),
                    r * a.sin(),
                    ground + 0.05 + j as f64 * 0.1,
                ));
            }
        }
        pts
    }

    #[test]
    fn layout_ignores_ground_and_counts_sectors() {
        let cfg = EncoderConfig::default();
        let ground = -cfg.sensor_height;
        let rings = cfg.layout_rings.clone();
        let flat: Vec<Point3> = (0..400)
            .map(|i| {
                Point3::new(
                    (i % 20) as f64 * 0.4 - 4.0,
                    (i / 20) as f64 * 0.4 - 4.0,
                    ground + 0.1,
                )
            })
            .collect();
        let tree = KdTree::new(&flat);
        let d = layout_descriptor(&tree, &flat, &Point3::origin(), &rings, &cfg);
        assert_eq!(d.len(), cfg.layout_channels(&rings));
        assert!(d.iter().all(|&v| v == 0.0));

        let posts = ring_of_posts(0.0);
        let tree = KdTree::new(&posts);
        let d = layout_descriptor(&tree, &posts, &Point3::origin(), &rings, &cfg);
        // five posts in distinct sectors, each spanning every band it reaches
        let total: f64 = d.iter().sum::<f64>() * cfg.layout_sectors as f64;
        assert!(total >= 5.0);
        assert!(d.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn layout_is_yaw_invariant_up_to_sector_edges() {
        let cfg = EncoderConfig::default();
        let rings = cfg.layout_rings.clone();
        let sector = std::f64::consts::TAU / cfg.layout_sectors as f64;
        let a = ring_of_posts(0.1);
        let b = ring_of_posts(0.1 + 3.0 * sector);
        let da = layout_descriptor(&KdTree::new(&a), &a, &Point3::origin(), &rings, &cfg);
        let db = layout_descriptor(&KdTree::new(&b), &b, &Point3::origin(), &rings, &cfg);
        for (x, y) in da.iter().zip(&db) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_points_are_dropped() {
        let mut pts: Vec<Point3> = (0..27)
            .map(|i| {
                Point3::new(
                    (i % 3) as f64 * 0.1,
                    ((i / 3) % 3) as f64 * 0.1,
                    (i / 9) as f64 * 0.1,
                )
            })
            .collect();
        pts.push(Point3::new(10.0, 0.0, 0.0));
        let cloud = PointCloud::new(pts);
        let kept = remove_isolated(&cloud, 0.5, 2);
        assert_eq!(kept.len(), 27);
        assert_eq!(remove_isolated(&cloud, 0.5, 0).len(), 28);
    }

    #[test]
    fn too_few_points() {
        let c = PointCloud::new(vec![Point3::origin(); 50]);
        assert!(matches!(
            encode_point_pyramid(&c, &EncoderConfig::default()),
            Err(Error::DegenerateCloud(_))
        ));
    }
}
