//! Embedded invariant checks run by `crossreg selftest`.
//!
//! Each check compares a library routine against an independent oracle on a
//! few seeded random instances. A fault hook corrupts the inputs or the
//! oracle of one named check so that the harness itself can be tested.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::densematch::{augment_slack, interior_marginal_deviation, sinkhorn};
use crate::estimators::{ransac, weighted_svd, EstimatorConfig, EstimatorKind};
use crate::geometry::{CorrespondenceSet, Point3, PointCloud, RigidTransform};
use crate::io::{format_ply, parse_ply};
use crate::loss::{focal_loss_gradient, focal_mask_loss, LossConfig};
use crate::metrics::{rre, rte};
use crate::nn::{Linear, Matrix};
use crate::omp::threshold_mask;
use crate::vgam::{
    dual_normalize, geometric_self_attention, similarity_matrix, GeoAttentionWeights,
    SelfAttentionWeights, VgamConfig,
};

type Check = fn(&mut ChaCha8Rng, bool) -> Result<(), String>;

const CHECKS: [(&str, Check); 9] = [
    ("sinkhorn_marginals", sinkhorn_marginals),
    ("svd_recovery", svd_recovery),
    ("ransac_outliers", ransac_outliers),
    ("focal_value", focal_value),
    ("focal_gradient", focal_gradient),
    ("similarity_oracle", similarity_oracle),
    ("dual_softmax_oracle", dual_softmax_oracle),
    ("geometric_invariance", geometric_invariance),
    ("strict_threshold", strict_threshold),
];

/// Names of all checks, in execution order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS
        .iter()
        .map(|(n, _)| *n)
        .chain(["ply_round_trip"])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// `None` on success, the failure description otherwise.
    pub failure: Option<String>,
    pub millis: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Runs every check; `fault` names a check whose inputs get corrupted.
pub fn run_checks(fault: Option<&str>) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    for (k, (name, check)) in CHECKS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5e1f_7e57 + k as u64);
        let t = Instant::now();
        let failure = check(&mut rng, fault == Some(name)).err();
        out.push(CheckOutcome {
            name,
            failure,
            millis: t.elapsed().as_secs_f64() * 1e3,
        });
    }
    let t = Instant::now();
    out.push(CheckOutcome {
        name: "ply_round_trip",
        failure: ply_round_trip(fault == Some("ply_round_trip")).err(),
        millis: t.elapsed().as_secs_f64() * 1e3,
    });
    out
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let t = Vector3::new(
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(-2.0..2.0),
    );
    RigidTransform::from_axis_angle(axis, rng.random_range(-3.0..3.0), t)
}

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

fn sinkhorn_marginals(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let iterations = if fault { 1 } else { 100 };
    for _ in 0..10 {
        let s = augment_slack(&random_matrix(rng, 8, 8, 3.0), 1.0);
        let res = sinkhorn(&s, iterations).map_err(|e| e.to_string())?;
        let dev = interior_marginal_deviation(&res.assignment);
        ensure(dev <= 1e-6, || {
            format!("interior marginal deviation {dev:e}")
        })?;
    }
    Ok(())
}

fn svd_recovery(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..20 {
        let t = random_transform(rng);
        let src = random_cloud(rng, 30, 5.0);
        let mut tgt = t.apply(&src);
        if fault {
            tgt.points[0] += Vector3::new(1.0, 0.0, 0.0);
        }
        let c = CorrespondenceSet::from_indices((0..30).map(|i| (i, i)));
        let est = weighted_svd(&c, &src, &tgt)
            .map_err(|e| e.to_string())?
            .transform;
        let (r, d) = (
            rre(&est.rotation, &t.rotation),
            rte(&est.translation, &t.translation),
        );
        ensure(r < 1e-7 && d < 1e-9, || {
            format!("rre {r:e} deg, rte {d:e} m")
        })?;
    }
    Ok(())
}

fn ransac_outliers(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let cfg = EstimatorConfig {
        kind: EstimatorKind::Ransac,
        ransac_iterations: 2000,
        ransac_threshold: 0.05,
        seed: 11,
        ..Default::default()
    };
    for _ in 0..3 {
        let t = random_transform(rng);
        let src = random_cloud(rng, 60, 10.0);
        let mut tgt = t.apply(&src);
        let bad = if fault { 60 } else { 18 };
        for p in tgt.points.iter_mut().take(bad) {
            *p = Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
        }
        let c = CorrespondenceSet::from_indices((0..60).map(|i| (i, i)));
        let est = ransac(&c, &src, &tgt, &cfg)
            .map_err(|e| e.to_string())?
            .transform;
        let (r, d) = (
            rre(&est.rotation, &t.rotation),
            rte(&est.translation, &t.translation),
        );
        ensure(r < 0.1 && d < 0.01, || {
            format!("rre {r:e} deg, rte {d:e} m")
        })?;
    }
    Ok(())
}

fn focal_value(_: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let cfg = LossConfig {
        gamma: 2.0,
        alpha: 0.25,
    };
    let p = if fault { 0.6 } else { 0.5 };
    let got = focal_mask_loss(&[p], &[true], &cfg)
        .map_err(|e| e.to_string())?
        .loss;
    let want = 0.25 * 0.25 * std::f64::consts::LN_2;
    ensure((got - want).abs() < 1e-9, || {
        format!("loss {got} vs {want}")
    })
}

fn focal_gradient(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let cfg = LossConfig::default();
    let fd_cfg = LossConfig {
        gamma: if fault { cfg.gamma + 0.5 } else { cfg.gamma },
        ..cfg
    };
    let p: Vec<f64> = (0..64).map(|_| rng.random_range(0.02..0.98)).collect();
    let mask: Vec<bool> = (0..64).map(|_| rng.random_bool(0.5)).collect();
    let g = focal_loss_gradient(&p, &mask, &cfg).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for i in 0..p.len() {
        let at = |v: f64| {
            let mut q = p.clone();
            q[i] = v;
            focal_mask_loss(&q, &mask, &fd_cfg).map(|r| r.loss)
        };
        let fd = (at(p[i] + h).map_err(|e| e.to_string())?
            - at(p[i] - h).map_err(|e| e.to_string())?)
            / (2.0 * h);
        let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-12);
        ensure(rel <= 1e-5, || {
            format!("element {i}: analytic {} vs numeric {fd}", g[i])
        })?;
    }
    Ok(())
}

fn similarity_oracle(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..20 {
        let a = random_matrix(rng, 5, 4, 1.0);
        let b = random_matrix(rng, 6, 4, 1.0);
        let z = similarity_matrix(&a, &b).map_err(|e| e.to_string())?;
        for i in 0..5 {
            for j in 0..6 {
                let mut d2: f64 = (0..4).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum();
                if fault {
                    d2 += 1e-3;
                }
                let want = (-d2).exp();
                ensure((z[(i, j)] - want).abs() <= 1e-9, || {
                    format!("entry ({i}, {j}): {} vs {want}", z[(i, j)])
                })?;
            }
        }
    }
    Ok(())
}

fn dual_softmax_oracle(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    for _ in 0..20 {
        let z = random_matrix(rng, 4, 7, 2.0);
        let got = dual_normalize(&z).map_err(|e| e.to_string())?;
        let row_sum: Vec<f64> = (0..4)
            .map(|i| (0..7).map(|j| z[(i, j)].exp()).sum())
            .collect();
        let col_sum: Vec<f64> = (0..7)
            .map(|j| (0..4).map(|i| z[(i, j)].exp()).sum())
            .collect();
        for i in 0..4 {
            for j in 0..7 {
                let e = z[(i, j)].exp();
                let mut want = (e / row_sum[i]) * (e / col_sum[j]);
                if fault {
                    want *= 1.001;
                }
                ensure((got[(i, j)] - want).abs() <= 1e-9, || {
                    format!("entry ({i}, {j}): {} vs {want}", got[(i, j)])
                })?;
            }
        }
    }
    Ok(())
}

fn geometric_invariance(rng: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let dim = 6;
    let random_linear = |rng: &mut ChaCha8Rng, i: usize, o: usize| Linear {
        weight: random_matrix(rng, i, o, 0.5),
        bias: DVector::from_fn(o, |_, _| rng.random_range(-0.1..0.1)),
    };
    let bands = VgamConfig::default().distance_bands;
    let w = GeoAttentionWeights {
        attn: SelfAttentionWeights {
            wq: random_linear(rng, dim, dim),
            wk: random_linear(rng, dim, dim),
            wv: random_linear(rng, dim, dim),
        },
        distance: random_linear(rng, 2 * bands, 1),
        base_frequency: 0.7,
    };
    let f = random_matrix(rng, 9, dim, 1.0);
    let pos = random_cloud(rng, 9, 4.0);
    let base = geometric_self_attention(&f, &pos.points, &w)
        .map_err(|e| e.to_string())?
        .features;
    for _ in 0..50 {
        let t = random_transform(rng);
        let mut moved = t.apply(&pos);
        if fault {
            moved.points[0] += Vector3::new(0.5, 0.0, 0.0);
        }
        let out = geometric_self_attention(&f, &moved.points, &w)
            .map_err(|e| e.to_string())?
            .features;
        let diff = (out - &base).abs().max();
        ensure(diff <= 1e-9, || format!("output changed by {diff:e}"))?;
    }
    Ok(())
}

fn strict_threshold(_: &mut ChaCha8Rng, fault: bool) -> Result<(), String> {
    let lambda = 0.5;
    let p = if fault { 0.5 + 1e-12 } else { 0.5 };
    let m = threshold_mask(&[p, 0.25, 0.75], lambda).map_err(|e| e.to_string())?;
    ensure(m == [false, false, true], || {
        format!("mask {m:?} at p = lambda")
    })
}

fn ply_round_trip(fault: bool) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x91_7e57);
    let cloud = random_cloud(&mut rng, 200, 50.0);
    let path = Path::new("selftest.ply");
    let text = format_ply(&cloud);
    let back = parse_ply(text.as_bytes(), path).map_err(|e| e.to_string())?;
    let mut again = format_ply(&back);
    if fault {
        again.push('\n');
    }
    ensure(again == text, || {
        "write, read, write is not byte-identical".into()
    })
}
