//! Benchmark driver and report formatting.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use super::{
    dense_inlier_ratio, estimate_pose, match_pair, millis, prepare, MaskOrigin, MaskSummary,
    Models, PipelineConfig, StageTimings,
};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::geometry::{PointCloud, RigidTransform};
use crate::metrics::{is_registered, rre, rte, DEFAULT_RRE_THRESHOLD_DEG, DEFAULT_RTE_THRESHOLD_M};
use crate::simgen::{ScenePair, ViewImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub rre_deg: f64,
    pub rte_m: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rre_deg: DEFAULT_RRE_THRESHOLD_DEG,
            rte_m: DEFAULT_RTE_THRESHOLD_M,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.rre_deg > 0.0 && self.rte_m > 0.0) {
            return Err(Error::invalid("recall thresholds must be positive"));
        }
        Ok(())
    }
}

/// One pair under one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub pair: String,
    pub estimator: String,
    /// Set when any stage failed for this pair and estimator.
    pub error: Option<String>,
    pub rre: Option<f64>,
    pub rte: Option<f64>,
    pub ir: Option<f64>,
    pub superpoint_matches: usize,
    pub dense_matches: usize,
    pub mask: Option<MaskSummary>,
    pub inliers: usize,
    /// Estimated source-to-target pose.
    pub transform: Option<RigidTransform>,
}

pub const TSV_COLUMNS: [&str; 15] = [
    "pair",
    "estimator",
    "status",
    "rre_deg",
    "rte_m",
    "ir",
    "superpoint_matches",
    "dense_matches",
    "mask",
    "src_kept",
    "src_total",
    "tgt_kept",
    "tgt_total",
    "inliers",
    "transform",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.6}"))
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, String> {
    if s == "-" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| format!("bad number {s:?}: {e}"))
}

fn parse_transform(s: &str) -> std::result::Result<Option<RigidTransform>, String> {
    if s == "-" {
        return Ok(None);
    }
    let v: Vec<f64> = s
        .split(' ')
        .map(|x| {
            x.parse::<f64>()
                .map_err(|e| format!("bad transform entry {x:?}: {e}"))
        })
        .collect::<std::result::Result<_, _>>()?;
    let v: [f64; 12] = v
        .try_into()
        .map_err(|v: Vec<f64>| format!("transform needs 12 numbers, found {}", v.len()))?;
    RigidTransform::from_row_major(&v)
        .map(Some)
        .map_err(|e| e.to_string())
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl PairRecord {
    pub fn registered(&self, t: &Thresholds) -> bool {
        match (self.error.as_ref(), self.rre, self.rte) {
            (None, Some(r), Some(e)) => is_registered(r, e, t.rre_deg, t.rte_m),
            _ => false,
        }
    }

    pub fn tsv_header() -> String {
        TSV_COLUMNS.join("\t")
    }

    pub fn to_tsv(&self) -> String {
        let status = match &self.error {
            None => "ok".to_string(),
            Some(e) => format!("error: {}", clean(e)),
        };
        let m = self.mask;
        let cols = [
            clean(&self.pair),
            clean(&self.estimator),
            status,
            opt(self.rre),
            opt(self.rte),
            opt(self.ir),
            self.superpoint_matches.to_string(),
            self.dense_matches.to_string(),
            m.map_or("-".into(), |m| m.origin.name().to_string()),
            m.map_or("-".into(), |m| m.src_kept.to_string()),
            m.map_or("-".into(), |m| m.src_total.to_string()),
            m.map_or("-".into(), |m| m.tgt_kept.to_string()),
            m.map_or("-".into(), |m| m.tgt_total.to_string()),
            self.inliers.to_string(),
            self.transform.map_or("-".into(), |t| {
                t.to_row_major()
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            }),
        ];
        cols.join("\t")
    }

    /// Parses a row written by [`PairRecord::to_tsv`].
    pub fn from_tsv(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != TSV_COLUMNS.len() {
            return Err(format!(
                "expected {} columns, found {}",
                TSV_COLUMNS.len(),
                cols.len()
            ));
        }
        let count = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| format!("bad count {s:?}: {e}"))
        };
        let error = match cols[2] {
            "ok" => None,
            s => Some(s.strip_prefix("error: ").unwrap_or(s).to_string()),
        };
        let mask = match cols[8] {
            "-" => None,
            name => Some(MaskSummary {
                origin: MaskOrigin::from_name(name)
                    .ok_or_else(|| format!("unknown mask origin {name:?}"))?,
                src_kept: count(cols[9])?,
                src_total: count(cols[10])?,
                tgt_kept: count(cols[11])?,
                tgt_total: count(cols[12])?,
            }),
        };
        Ok(Self {
            pair: cols[0].to_string(),
            estimator: cols[1].to_string(),
            error,
            rre: parse_opt(cols[3])?,
            rte: parse_opt(cols[4])?,
            ir: parse_opt(cols[5])?,
            superpoint_matches: count(cols[6])?,
            dense_matches: count(cols[7])?,
            mask,
            inliers: count(cols[13])?,
            transform: parse_transform(cols[14])?,
        })
    }
}

/// All records of one pair plus its stage timings.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub pair: String,
    pub records: Vec<PairRecord>,
    /// Encoding and matching timings; `estimate` sums all estimators.
    pub timings: StageTimings,
}

/// One table row per estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub pairs: usize,
    pub registered: usize,
    pub recall: f64,
    /// Means over registered pairs; `None` when no pair registered.
    pub mean_rre: Option<f64>,
    pub mean_rte: Option<f64>,
    /// Mean over pairs that produced correspondences.
    pub mean_ir: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregates records per estimator label, in first-appearance order.
pub fn summarize(records: &[PairRecord], t: &Thresholds) -> Result<Vec<EstimatorSummary>> {
    t.validate()?;
    if records.is_empty() {
        return Err(Error::NoResults);
    }
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.estimator.as_str()) {
            labels.push(&r.estimator);
        }
    }
    Ok(labels
        .into_iter()
        .map(|label| {
            let rows: Vec<&PairRecord> = records.iter().filter(|r| r.estimator == label).collect();
            let ok: Vec<&&PairRecord> = rows.iter().filter(|r| r.registered(t)).collect();
            let rres: Vec<f64> = ok.iter().filter_map(|r| r.rre).collect();
            let rtes: Vec<f64> = ok.iter().filter_map(|r| r.rte).collect();
            let irs: Vec<f64> = rows.iter().filter_map(|r| r.ir).collect();
            EstimatorSummary {
                estimator: label.to_string(),
                pairs: rows.len(),
                registered: ok.len(),
                recall: ok.len() as f64 / rows.len() as f64,
                mean_rre: mean(&rres),
                mean_rte: mean(&rtes),
                mean_ir: mean(&irs),
            }
        })
        .collect())
}

/// Aligned plain-text table with a header describing the averaging rules.
pub fn format_table(rows: &[EstimatorSummary], t: &Thresholds) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# registered: RRE < {} deg and RTE < {} m; RRE/RTE averaged over registered pairs; IR over pairs with correspondences",
        t.rre_deg, t.rte_m
    );
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>10} {:>8} {:>10} {:>8} {:>8}",
        "estimator", "pairs", "registered", "RR", "RRE(deg)", "RTE(m)", "IR"
    );
    let f = |v: Option<f64>, p: usize| v.map_or_else(|| "-".into(), |x| format!("{x:.p$}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>10} {:>8.4} {:>10} {:>8} {:>8}",
            r.estimator,
            r.pairs,
            r.registered,
            r.recall,
            f(r.mean_rre, 3),
            f(r.mean_rte, 3),
            f(r.mean_ir, 4)
        );
    }
    s
}

/// Registration recall of one estimator at one threshold pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub thresholds: Thresholds,
    pub estimator: String,
    pub recall: f64,
}

/// Thresholds `base` scaled jointly by each factor, in the given order.
pub fn scaled_thresholds(base: &Thresholds, factors: &[f64]) -> Vec<Thresholds> {
    factors
        .iter()
        .map(|&f| Thresholds {
            rre_deg: base.rre_deg * f,
            rte_m: base.rte_m * f,
        })
        .collect()
}

/// Recall per estimator at every threshold pair in `grid`.
pub fn threshold_sweep(records: &[PairRecord], grid: &[Thresholds]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for t in grid {
        for s in summarize(records, t)? {
            rows.push(SweepRow {
                thresholds: *t,
                estimator: s.estimator,
                recall: s.recall,
            });
        }
    }
    Ok(rows)
}

/// Tab-separated sweep table with a header line.
pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s = String::from("rre_deg\trte_m\testimator\trecall\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.4}",
            r.thresholds.rre_deg, r.thresholds.rte_m, r.estimator, r.recall
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    pub pairs: Vec<PairOutcome>,
    pub summaries: Vec<EstimatorSummary>,
    pub thresholds: Thresholds,
}

impl BenchmarkReport {
    pub fn records(&self) -> impl Iterator<Item = &PairRecord> {
        self.pairs.iter().flat_map(|p| p.records.iter())
    }

    pub fn any_errors(&self) -> bool {
        self.records().any(|r| r.error.is_some())
    }

    pub fn table(&self) -> String {
        format_table(&self.summaries, &self.thresholds)
    }

    pub fn tsv(&self) -> String {
        let mut s = PairRecord::tsv_header();
        s.push('\n');
        for r in self.records() {
            s.push_str(&r.to_tsv());
            s.push('\n');
        }
        s
    }
}

fn failed(pair: &str, estimators: &[EstimatorConfig], err: &Error) -> Vec<PairRecord> {
    estimators
        .iter()
        .map(|e| PairRecord {
            pair: pair.to_string(),
            estimator: e.label(),
            error: Some(err.to_string()),
            rre: None,
            rte: None,
            ir: None,
            superpoint_matches: 0,
            dense_matches: 0,
            mask: None,
            inliers: 0,
            transform: None,
        })
        .collect()
}

/// One input pair; the image and ground truth are optional.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub name: String,
    pub source: PointCloud,
    pub target: PointCloud,
    pub image: Option<ViewImage>,
    pub gt: Option<RigidTransform>,
}

impl BenchmarkPair {
    pub fn from_scene(name: impl Into<String>, pair: ScenePair) -> Self {
        Self {
            name: name.into(),
            source: pair.source,
            target: pair.target,
            image: Some(pair.image),
            gt: Some(pair.gt),
        }
    }
}

fn run_one(
    pair: &BenchmarkPair,
    cfg: &PipelineConfig,
    models: &Models,
    estimators: &[EstimatorConfig],
) -> PairOutcome {
    let name = pair.name.as_str();
    let gt = pair.gt.as_ref();
    let mut timings = StageTimings::default();
    let result = prepare(
        &pair.source,
        &pair.target,
        pair.image.as_ref(),
        &cfg.encoder,
    )
    .and_then(|prep| {
        let m = match_pair(&prep, cfg, models, gt)?;
        let ir = gt.map(|gt| dense_inlier_ratio(&prep, &m, gt)).transpose()?;
        Ok((prep, m, ir))
    });
    let records = match result {
        Err(e) => failed(name, estimators, &e),
        Ok((prep, m, ir)) => {
            timings.encode = prep.encode_ms;
            timings.mask = m.mask_ms;
            timings.attention = m.attention_ms;
            timings.dense = m.dense_ms;
            estimators
                .iter()
                .map(|e| {
                    let t = Instant::now();
                    let est = estimate_pose(&prep, &m, e);
                    timings.estimate += millis(t);
                    let mut rec = PairRecord {
                        pair: name.to_string(),
                        estimator: e.label(),
                        error: None,
                        rre: None,
                        rte: None,
                        ir,
                        superpoint_matches: m.superpoint.len(),
                        dense_matches: m.dense.len(),
                        mask: Some(m.mask),
                        inliers: 0,
                        transform: None,
                    };
                    match est {
                        Ok(p) => {
                            if let Some(gt) = gt {
                                rec.rre = Some(rre(&p.transform.rotation, &gt.rotation));
                                rec.rte = Some(rte(&p.transform.translation, &gt.translation));
                            }
                            rec.inliers = p.inliers;
                            rec.transform = Some(p.transform);
                        }
                        Err(err) => rec.error = Some(err.to_string()),
                    }
                    rec
                })
                .collect()
        }
    };
    PairOutcome {
        pair: name.to_string(),
        records,
        timings,
    }
}

/// Registers `count` pairs from `load` with every estimator in `estimators`.
///
/// Matching runs once per pair, so the inlier ratio is shared by all
/// estimators. Failures become error records instead of aborting the run.
pub fn run_benchmark<F>(
    count: usize,
    load: F,
    cfg: &PipelineConfig,
    models: &Models,
    estimators: &[EstimatorConfig],
    thresholds: Thresholds,
) -> Result<BenchmarkReport>
where
    F: Fn(usize) -> Result<BenchmarkPair> + Sync,
{
    cfg.validate()?;
    thresholds.validate()?;
    if count == 0 || estimators.is_empty() {
        return Err(Error::NoResults);
    }
    for e in estimators {
        e.validate()?;
    }
    let work = || -> Vec<PairOutcome> {
        (0..count)
            .into_par_iter()
            .map(|i| match load(i) {
                Ok(pair) => run_one(&pair, cfg, models, estimators),
                Err(e) => {
                    let name = format!("pair_{i}");
                    PairOutcome {
                        records: failed(&name, estimators, &e),
                        pair: name,
                        timings: StageTimings::default(),
                    }
                }
            })
            .collect()
    };
    let pairs = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?
            .install(work),
        None => work(),
    };
    let records: Vec<PairRecord> = pairs
        .iter()
        .flat_map(|p| p.records.iter().cloned())
        .collect();
    let summaries = summarize(&records, &thresholds)?;
    Ok(BenchmarkReport {
        pairs,
        summaries,
        thresholds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(est: &str, rre: Option<f64>, rte: Option<f64>, ir: Option<f64>) -> PairRecord {
        PairRecord {
            pair: "p".into(),
            estimator: est.into(),
            error: rre.is_none().then(|| "failed".to_string()),
            rre,
            rte,
            ir,
            superpoint_matches: 3,
            dense_matches: 10,
            mask: None,
            inliers: 4,
            transform: None,
        }
    }

    #[test]
    fn recall_counting() {
        let recs = vec![
            record("LGR", Some(1.0), Some(0.1), Some(0.5)),
            record("LGR", Some(1.5), Some(0.2), Some(0.7)),
            record("LGR", Some(0.5), Some(0.4), Some(0.6)),
            record("LGR", Some(3.0), Some(0.1), Some(0.2)),
        ];
        let s = summarize(&recs, &Thresholds::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].recall, 0.75);
        assert!((s[0].mean_rre.unwrap() - 1.0).abs() < 1e-12);
        assert!((s[0].mean_ir.unwrap() - 0.5).abs() < 1e-12);
        assert!(summarize(&[], &Thresholds::default()).is_err());
    }

    #[test]
    fn strict_thresholds() {
        let r = record("LGR", Some(2.0), Some(0.1), None);
        assert!(!r.registered(&Thresholds::default()));
        let r = record("LGR", Some(1.0), Some(0.5), None);
        assert!(!r.registered(&Thresholds::default()));
        assert!(!record("LGR", None, None, None).registered(&Thresholds::default()));
    }

    #[test]
    fn tsv_round_trip() {
        let mut r = record("RANSAC-50K", Some(1.25), Some(0.125), Some(0.5));
        r.pair = "pair_3".into();
        r.mask = Some(MaskSummary {
            origin: MaskOrigin::FallbackEmpty,
            src_kept: 10,
            src_total: 10,
            tgt_kept: 0,
            tgt_total: 12,
        });
        r.transform = Some(RigidTransform::from_yaw(
            0.3,
            nalgebra::Vector3::new(0.5, -1.0, 0.1),
        ));
        let line = r.to_tsv();
        assert_eq!(line.split('\t').count(), TSV_COLUMNS.len());
        let back = PairRecord::from_tsv(&line).unwrap();
        assert_eq!(back, r);
        let e = record("LGR", None, None, None);
        let back = PairRecord::from_tsv(&e.to_tsv()).unwrap();
        assert_eq!(back.error.as_deref(), Some("failed"));
        assert!(PairRecord::from_tsv("a\tb").is_err());
    }

    #[test]
    fn sweep_is_monotone_in_the_thresholds() {
        let recs: Vec<PairRecord> = (0..20)
            .map(|i| record("LGR", Some(i as f64 * 0.3), Some(i as f64 * 0.05), None))
            .collect();
        let grid = scaled_thresholds(&Thresholds::default(), &[0.25, 0.5, 1.0, 2.0, 4.0]);
        let rows = threshold_sweep(&recs, &grid).unwrap();
        assert_eq!(rows.len(), grid.len());
        for w in rows.windows(2) {
            assert!(w[1].recall >= w[0].recall);
        }
        assert_eq!(format_sweep(&rows).lines().count(), grid.len() + 1);
    }

    #[test]
    fn table_has_one_row_per_estimator() {
        let recs = vec![
            record("LGR", Some(1.0), Some(0.1), Some(0.5)),
            record("RANSAC-50K", Some(1.0), Some(0.1), Some(0.5)),
            record("Weighted SVD", Some(5.0), Some(0.1), Some(0.5)),
        ];
        let s = summarize(&recs, &Thresholds::default()).unwrap();
        let table = format_table(&s, &Thresholds::default());
        assert_eq!(table.lines().count(), 2 + 3);
        assert!(table.contains("RANSAC-50K"));
    }
}
