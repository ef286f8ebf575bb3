//! Property suites checked against independent oracles.

use nalgebra::Vector3;
use proptest::prelude::*;

use crossreg::densematch::{
    augment_slack, extract_group_matches, interior_marginal_deviation, sinkhorn,
};
use crossreg::estimators::{lgr, weighted_svd, EstimatorConfig};
use crossreg::loss::{focal_loss_gradient, focal_mask_loss, LossConfig};
use crossreg::metrics::{rre, rte};
use crossreg::nn::Matrix;
use crossreg::omp::threshold_mask;
use crossreg::{CorrespondenceSet, Point3, PointCloud, RigidTransform};

fn transform(axis: [f64; 3], angle: f64, t: [f64; 3]) -> RigidTransform {
    let axis = Vector3::from(axis);
    let axis = if axis.norm() < 1e-3 {
        Vector3::z()
    } else {
        axis
    };
    RigidTransform::from_axis_angle(axis, angle, Vector3::from(t))
}

fn cloud(pts: &[(f64, f64, f64)]) -> PointCloud {
    PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect())
}

/// Values of all permutation assignments, best first.
fn brute_force_assignments(s: &Matrix) -> Vec<f64> {
    fn go(s: &Matrix, row: usize, acc: f64, used: &mut Vec<bool>, out: &mut Vec<f64>) {
        if row == s.nrows() {
            out.push(acc);
            return;
        }
        for j in 0..s.ncols() {
            if !used[j] {
                used[j] = true;
                go(s, row + 1, acc + s[(row, j)], used, out);
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(s, 0, 0.0, &mut vec![false; s.ncols()], &mut out);
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

fn matrix(n: usize, m: usize, v: &[f64]) -> Matrix {
    Matrix::from_fn(n, m, |i, j| v[i * m + j])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn procrustes_recovers_noiseless_transforms(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64), 4..40),
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.1..3.1f64,
        t in prop::array::uniform3(-50.0..50.0f64),
    ) {
        let src = cloud(&pts);
        // skip near-collinear draws, which do not determine a rotation
        let c = pts.iter().map(|p| Vector3::new(p.0, p.1, p.2)).sum::<Vector3<f64>>() / pts.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for p in &pts {
            let d = Vector3::new(p.0, p.1, p.2) - c;
            cov += d * d.transpose();
        }
        let ev = cov.symmetric_eigenvalues();
        let mut ev: Vec<f64> = ev.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        prop_assume!(ev[1] > 1.0);

        let gt = transform(axis, angle, t);
        let tgt = gt.apply(&src);
        let corr = CorrespondenceSet::from_indices((0..pts.len()).map(|i| (i, i)));
        let est = weighted_svd(&corr, &src, &tgt).unwrap().transform;
        prop_assert!(rre(&est.rotation, &gt.rotation) < 1e-6);
        prop_assert!(rte(&est.translation, &gt.translation) < 1e-8);
        prop_assert!(est.is_valid(1e-9));
    }

    #[test]
    fn sinkhorn_interior_marginals_converge(
        (n, m, v) in (1usize..=8, 1usize..=8).prop_flat_map(|(n, m)| {
            (Just(n), Just(m), prop::collection::vec(-3.0..3.0f64, n * m))
        }),
        alpha in -1.0..2.0f64,
    ) {
        let s = augment_slack(&matrix(n, m, &v), alpha);
        let res = sinkhorn(&s, 100).unwrap();
        prop_assert!(interior_marginal_deviation(&res.assignment) <= 1e-6);
        prop_assert!(res.assignment.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn sharp_sinkhorn_top_n_is_an_optimal_assignment(
        (n, v) in (1usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec(0.0..1.0f64, n * n))),
    ) {
        let s = matrix(n, n, &v);
        let values = brute_force_assignments(&s);
        let best = values[0];
        // near-ties are not separated by any finite temperature
        prop_assume!(values.len() == 1 || best - values[1] > 0.05);
        let scaled = s.map(|x| x * 200.0);
        let res = sinkhorn(&augment_slack(&scaled, f64::NEG_INFINITY), 2000).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let picked = extract_group_matches(&res.assignment, n, &idx, &idx, 0.0).unwrap();
        let mut rows = vec![false; n];
        let mut cols = vec![false; n];
        let mut value = 0.0;
        for c in picked.iter() {
            prop_assert!(!rows[c.source] && !cols[c.target]);
            rows[c.source] = true;
            cols[c.target] = true;
            value += s[(c.source, c.target)];
        }
        prop_assert!((value - best).abs() < 1e-9, "value {} vs optimum {}", value, best);
    }

    #[test]
    fn focal_gradient_matches_central_differences(
        items in prop::collection::vec((0.01..0.99f64, any::<bool>()), 1..32),
        gamma in 0.0..4.0f64,
        alpha in 0.05..0.95f64,
    ) {
        let cfg = LossConfig { gamma, alpha };
        let (p, mask): (Vec<f64>, Vec<bool>) = items.into_iter().unzip();
        let g = focal_loss_gradient(&p, &mask, &cfg).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let at = |v: f64| {
                let mut q = p.clone();
                q[i] = v;
                focal_mask_loss(&q, &mask, &cfg).unwrap().loss
            };
            let fd = (at(p[i] + h) - at(p[i] - h)) / (2.0 * h);
            // relative tolerance with a floor for the difference quotient's roundoff
            let tol = 1e-5 * g[i].abs().max(fd.abs()) + 1e-9;
            prop_assert!((g[i] - fd).abs() <= tol, "{} vs {}", g[i], fd);
        }
    }

    #[test]
    fn threshold_mask_is_strict(p in prop::collection::vec(0.0..=1.0f64, 0..50), lambda in 0.01..0.99f64) {
        let mut p = p;
        p.push(lambda);
        let m = threshold_mask(&p, lambda).unwrap();
        for (v, keep) in p.iter().zip(&m) {
            prop_assert_eq!(*keep, *v > lambda);
        }
        prop_assert!(!m[m.len() - 1]);
    }

    #[test]
    fn lgr_ignores_a_corrupted_group(
        seed_pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, -3.0..3.0f64), 50),
        axis in prop::array::uniform3(-1.0..1.0f64),
        angle in -3.1..3.1f64,
        t in prop::array::uniform3(-20.0..20.0f64),
        bad in 0usize..5,
    ) {
        let src = cloud(&seed_pts);
        let gt = transform(axis, angle, t);
        let mut tgt = gt.apply(&src);
        let wrong = transform([0.0, 0.0, 1.0], angle + 1.0, [t[0] + 5.0, t[1], t[2]]);
        for i in bad * 10..bad * 10 + 10 {
            tgt.points[i] = wrong.apply_point(&src.points[i]);
        }
        let groups: Vec<CorrespondenceSet> = (0..5)
            .map(|g| CorrespondenceSet::from_indices((g * 10..g * 10 + 10).map(|i| (i, i))))
            .collect();
        let all = CorrespondenceSet::from_indices((0..50).map(|i| (i, i)));
        let res = lgr(&groups, &all, &src, &tgt, &EstimatorConfig::default()).unwrap();
        prop_assert!(rre(&res.estimate.transform.rotation, &gt.rotation) < 0.1);
        for w in res.residual_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
    }
}
