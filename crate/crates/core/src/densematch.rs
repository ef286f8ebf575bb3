//! Dense matching inside superpoint correspondences: group similarity,
//! dustbin-augmented log-space Sinkhorn, per-group top-K′ extraction and
//! aggregation into one global correspondence set.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Correspondence, CorrespondenceSet, Granularity};
use crate::nn::{all_finite, Matrix};
use crate::vgam::rank_entries;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchConfig {
    /// Dustbin score; `-inf` disables the dustbin.
    pub slack: f64,
    pub iterations: usize,
    pub top_k: usize,
    /// Matches with assignment mass below this are dropped.
    pub min_confidence: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            slack: 1.0,
            iterations: 100,
            top_k: 16,
            min_confidence: 0.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.top_k == 0 {
            return Err(Error::invalid("iterations and top_k must be at least 1"));
        }
        if self.slack.is_nan() || self.slack == f64::INFINITY {
            return Err(Error::invalid("slack must be finite or -inf"));
        }
        if !(self.min_confidence >= 0.0) {
            return Err(Error::invalid("confidence floor must be non-negative"));
        }
        Ok(())
    }
}

/// `S = F_src F_tgtᵀ / d̃`.
pub fn build_group_similarity(src: &Matrix, tgt: &Matrix) -> Result<Matrix> {
    if src.nrows() == 0 || tgt.nrows() == 0 {
        return Err(Error::invalid("empty feature group"));
    }
    if src.ncols() != tgt.ncols() {
        return Err(Error::dims(format!(
            "group feature dims {} and {} differ",
            src.ncols(),
            tgt.ncols()
        )));
    }
    Ok(src * tgt.transpose() / src.ncols() as f64)
}

/// Appends a row and a column filled with `alpha`.
pub fn augment_slack(s: &Matrix, alpha: f64) -> Matrix {
    let (m, n) = s.shape();
    let mut out = Matrix::from_element(m + 1, n + 1, alpha);
    out.view_mut((0, 0), (m, n)).copy_from(s);
    out
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornResult {
    /// Assignment probabilities, same shape as the input.
    pub assignment: Matrix,
    /// Largest marginal violation after each iteration.
    pub deviations: Vec<f64>,
}

/// Log-space Sinkhorn on `exp(scores)` with given row and column marginals.
pub fn sinkhorn_marginals(
    scores: &Matrix,
    row_marginals: &[f64],
    col_marginals: &[f64],
    iterations: usize,
) -> Result<SinkhornResult> {
    if iterations == 0 {
        return Err(Error::invalid("sinkhorn needs at least one iteration"));
    }
    if scores.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("sinkhorn scores".into()));
    }
    let (m, n) = scores.shape();
    if row_marginals.len() != m || col_marginals.len() != n {
        return Err(Error::dims(
            "marginal lengths do not match the score matrix",
        ));
    }
    let log_a: Vec<f64> = row_marginals.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = col_marginals.iter().map(|v| v.ln()).collect();
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut deviations = Vec::with_capacity(iterations);
    let mut plan = Matrix::zeros(m, n);
    for _ in 0..iterations {
        for i in 0..m {
            u[i] = log_a[i] - log_sum_exp((0..n).map(|j| scores[(i, j)] + v[j]));
        }
        for j in 0..n {
            v[j] = log_b[j] - log_sum_exp((0..m).map(|i| scores[(i, j)] + u[i]));
        }
        plan = Matrix::from_fn(m, n, |i, j| (scores[(i, j)] + u[i] + v[j]).exp());
        // columns are exact after the column update; rows carry the error
        let dev = (0..m)
            .map(|i| (plan.row(i).sum() - row_marginals[i]).abs())
            .fold(0.0, f64::max);
        deviations.push(dev);
    }
    Ok(SinkhornResult {
        assignment: plan,
        deviations,
    })
}

/// Sinkhorn on a dustbin-augmented `(m+1)×(n+1)` matrix.
///
/// Interior rows and columns carry unit mass; the dustbin row carries `m`
/// and the dustbin column `n`, so every interior marginal is 1. A `-inf`
/// dustbin row and column (slack disabled) is solved as a balanced problem
/// on the interior.
pub fn sinkhorn(augmented: &Matrix, iterations: usize) -> Result<SinkhornResult> {
    let (rows, cols) = augmented.shape();
    if rows < 2 || cols < 2 {
        return Err(Error::dims(
            "augmented matrix needs at least one interior entry",
        ));
    }
    let (m, n) = (rows - 1, cols - 1);
    let slack_disabled = (0..cols).all(|j| augmented[(m, j)] == f64::NEG_INFINITY)
        && (0..rows).all(|i| augmented[(i, n)] == f64::NEG_INFINITY);
    if slack_disabled {
        let interior = augmented.view((0, 0), (m, n)).into_owned();
        let total = m.max(n) as f64;
        let res = sinkhorn_marginals(
            &interior,
            &vec![total / m as f64; m],
            &vec![total / n as f64; n],
            iterations,
        )?;
        let mut full = Matrix::zeros(rows, cols);
        full.view_mut((0, 0), (m, n)).copy_from(&res.assignment);
        return Ok(SinkhornResult {
            assignment: full,
            deviations: res.deviations,
        });
    }
    let mut a = vec![1.0; m];
    a.push(n as f64);
    let mut b = vec![1.0; n];
    b.push(m as f64);
    sinkhorn_marginals(augmented, &a, &b, iterations)
}

/// Largest deviation of interior row and column sums from 1.
pub fn interior_marginal_deviation(assignment: &Matrix) -> f64 {
    let (m, n) = (assignment.nrows() - 1, assignment.ncols() - 1);
    let rows = (0..m).map(|i| (assignment.row(i).sum() - 1.0).abs());
    let cols = (0..n).map(|j| (assignment.column(j).sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Drops the dustbin and keeps the `top_k` interior entries as dense
/// correspondences in global indices.
pub fn extract_group_matches(
    assignment: &Matrix,
    top_k: usize,
    src_indices: &[usize],
    tgt_indices: &[usize],
    min_confidence: f64,
) -> Result<CorrespondenceSet> {
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let (m, n) = (
        assignment.nrows().saturating_sub(1),
        assignment.ncols().saturating_sub(1),
    );
    if src_indices.len() != m || tgt_indices.len() != n {
        return Err(Error::dims("group index maps do not match the assignment"));
    }
    let interior = assignment.view((0, 0), (m, n)).into_owned();
    let pairs = rank_entries(&interior, top_k)
        .into_iter()
        .filter(|&(_, _, v)| v >= min_confidence)
        .map(|(i, j, v)| {
            Correspondence::weighted(src_indices[i], tgt_indices[j], v.clamp(0.0, 1.0))
        })
        .collect();
    Ok(CorrespondenceSet::from_pairs(pairs, Granularity::Dense))
}

/// Union of group matches; duplicates keep their highest confidence.
/// Output is ordered by `(source, target)`.
pub fn aggregate(sets: &[CorrespondenceSet]) -> CorrespondenceSet {
    if sets.is_empty() {
        log::warn!("aggregating an empty list of correspondence sets");
    }
    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for c in sets.iter().flat_map(|s| s.iter()) {
        let e = merged.entry((c.source, c.target)).or_insert(c.confidence);
        if c.confidence > *e {
            *e = c.confidence;
        }
    }
    CorrespondenceSet::from_pairs(
        merged
            .into_iter()
            .map(|((s, t), c)| Correspondence::weighted(s, t, c))
            .collect(),
        Granularity::Dense,
    )
}

/// Dense groups attached to one superpoint correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedProblem<'a> {
    pub src_group: &'a [usize],
    pub tgt_group: &'a [usize],
}

/// Solves every group problem. Returns per-group match sets aligned with
/// `problems`; empty groups yield empty sets.
pub fn match_groups(
    problems: &[GroupedProblem<'_>],
    src_features: &Matrix,
    tgt_features: &Matrix,
    cfg: &MatchConfig,
) -> Result<Vec<CorrespondenceSet>> {
    cfg.validate()?;
    if !all_finite(src_features) || !all_finite(tgt_features) {
        return Err(Error::NonFinite("dense features".into()));
    }
    problems
        .par_iter()
        .map(|p| {
            if p.src_group.is_empty() || p.tgt_group.is_empty() {
                return Ok(CorrespondenceSet::new(Granularity::Dense));
            }
            let fs = src_features.select_rows(p.src_group);
            let ft = tgt_features.select_rows(p.tgt_group);
            let s = build_group_similarity(&fs, &ft)?;
            let res = sinkhorn(&augment_slack(&s, cfg.slack), cfg.iterations)?;
            extract_group_matches(
                &res.assignment,
                cfg.top_k,
                p.src_group,
                p.tgt_group,
                cfg.min_confidence,
            )
        })
        .collect()
}
