//! Ranking metrics, pose bins and per-bin reports.
//!
//! Every emitted correspondence becomes a [`ScoredPrediction`]; it is
//! correct iff it is a ground-truth match. AUPRC pools predictions over
//! all pairs of a bin with `total_positives = |M|` summed over those
//! pairs, so missed matches cap recall. Recall@k is computed per pair and
//! averaged over the pairs of a bin.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fsutil::atomic_write;
use crate::pair::{check_rotation, GtAssignment};

/// Angle of `Ra^T Rb` in degrees, in `[0, 180]`.
pub fn geodesic_rotation_deg(ra: &Matrix3<f64>, rb: &Matrix3<f64>) -> Result<f64> {
    check_rotation(ra)?;
    check_rotation(rb)?;
    let c = (((ra.transpose() * rb).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

/// One of the four relative-rotation bins `[0,45) [45,90) [90,135)
/// [135,180]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PoseBin(u8);

impl PoseBin {
    pub const ALL: [PoseBin; 4] = [PoseBin(0), PoseBin(1), PoseBin(2), PoseBin(3)];

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Lower and upper bound in degrees. The upper bound is exclusive
    /// except for the last bin.
    pub fn bounds(self) -> (f64, f64) {
        let lo = 45.0 * self.0 as f64;
        (lo, lo + 45.0)
    }

    pub fn label(self) -> String {
        let (lo, hi) = self.bounds();
        if self.0 == 3 {
            format!("[{lo},{hi}]")
        } else {
            format!("[{lo},{hi})")
        }
    }
}

pub fn assign_pose_bin(theta_deg: f64) -> Result<PoseBin> {
    ensure!(
        (0.0..=180.0).contains(&theta_deg),
        "rotation angle {theta_deg} is outside [0, 180]"
    );
    Ok(PoseBin(((theta_deg / 45.0).floor() as u8).min(3)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub source: usize,
    pub target: usize,
    pub score: f64,
    pub is_correct: bool,
}

/// Predictions in descending score order; ties keep input order.
fn ranked(predictions: &[ScoredPrediction]) -> Vec<&ScoredPrediction> {
    let mut v: Vec<&ScoredPrediction> = predictions.iter().collect();
    v.sort_by(|a, b| b.score.total_cmp(&a.score));
    v
}

/// `(recall, precision)` after each prediction in ranked order.
pub fn pr_curve(predictions: &[ScoredPrediction], total_positives: usize) -> Result<Vec<(f64, f64)>> {
    ensure!(total_positives >= 1, "total positives must be at least 1");
    ensure!(
        predictions.iter().all(|p| p.score.is_finite()),
        "prediction scores must be finite"
    );
    let mut tp = 0usize;
    Ok(ranked(predictions)
        .iter()
        .enumerate()
        .map(|(k, p)| {
            tp += p.is_correct as usize;
            (tp as f64 / total_positives as f64, tp as f64 / (k + 1) as f64)
        })
        .collect())
}

/// Average precision `sum_k (R_k - R_{k-1}) P_k` over the ranked list.
/// Recall only moves on correct predictions, by exactly `1/T`, so this is
/// evaluated as `(1/T) sum_{k correct} P_k`, which makes a perfect ranking
/// score exactly 1.
pub fn auprc(predictions: &[ScoredPrediction], total_positives: usize) -> Result<f64> {
    let curve = pr_curve(predictions, total_positives)?;
    if curve.is_empty() {
        log::warn!("AUPRC of an empty prediction list is 0");
        return Ok(0.0);
    }
    let sum: f64 = ranked(predictions)
        .iter()
        .zip(&curve)
        .filter(|(pred, _)| pred.is_correct)
        .map(|(_, &(_, p))| p)
        .sum();
    Ok(sum / total_positives as f64)
}

/// Scatters a slot-indexed matrix with missing entries into a dense one;
/// missing candidates become `-inf` and never count as hits.
pub fn dense_scores(m: &[Vec<Option<f64>>]) -> Result<Array2<f64>> {
    let cols = m.first().map_or(0, Vec::len);
    ensure!(m.iter().all(|r| r.len() == cols), "score matrix rows differ in length");
    Ok(Array2::from_shape_fn((m.len(), cols), |(i, j)| {
        m[i][j].unwrap_or(f64::NEG_INFINITY)
    }))
}

/// Fraction of gt matches whose target is among the `k` best columns of
/// its row; ties rank the lower column first. `None` when gt has no
/// matches.
pub fn recall_at_k(scores: &Array2<f64>, gt: &GtAssignment, k: usize) -> Result<Option<f64>> {
    ensure!(k >= 1, "k must be at least 1");
    ensure!(!scores.iter().any(|x| x.is_nan()), "score matrix contains NaN");
    gt.validate(scores.nrows(), scores.ncols())?;
    if gt.matches.is_empty() {
        return Ok(None);
    }
    let hits = gt
        .matches
        .iter()
        .filter(|&&(i, t)| {
            let row = scores.row(i);
            let st = row[t];
            if st == f64::NEG_INFINITY {
                return false;
            }
            let ahead = row
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > st || (s == st && j < t))
                .count();
            ahead < k
        })
        .count();
    Ok(Some(hits as f64 / gt.matches.len() as f64))
}

/// What one evaluated pair contributes to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub predictions: Vec<ScoredPrediction>,
    pub positives: usize,
    pub recall_at_1: Option<f64>,
    pub recall_at_5: Option<f64>,
    /// Relative rotation in degrees, when both poses are known.
    pub rotation_deg: Option<f64>,
}

/// Scores one pair: `emitted` are the discrete correspondences with their
/// confidences, `scores` the full candidate matrix used for ranking.
pub fn evaluate_pair(
    emitted: &[(usize, usize, f64)],
    scores: &Array2<f64>,
    gt: &GtAssignment,
    rotation_deg: Option<f64>,
) -> Result<PairEvaluation> {
    let predictions = emitted
        .iter()
        .map(|&(i, j, s)| ScoredPrediction {
            source: i,
            target: j,
            score: s,
            is_correct: gt.matches.contains(&(i, j)),
        })
        .collect();
    Ok(PairEvaluation {
        predictions,
        positives: gt.matches.len(),
        recall_at_1: recall_at_k(scores, gt, 1)?,
        recall_at_5: recall_at_k(scores, gt, 5)?,
        rotation_deg,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinReport {
    pub bin: String,
    pub pairs: usize,
    pub positives: usize,
    pub predictions: usize,
    /// Absent when the bin has no positives.
    pub auprc: Option<f64>,
    pub recall_at_1: Option<f64>,
    pub recall_at_5: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bins: Vec<BinReport>,
    /// Pairs without poses.
    pub unbinned: BinReport,
    pub overall: BinReport,
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn bin_report(label: String, pairs: &[&PairEvaluation]) -> Result<BinReport> {
    let positives = pairs.iter().map(|p| p.positives).sum();
    let pooled: Vec<ScoredPrediction> = pairs.iter().flat_map(|p| p.predictions.iter().copied()).collect();
    Ok(BinReport {
        bin: label,
        pairs: pairs.len(),
        positives,
        predictions: pooled.len(),
        auprc: if positives > 0 {
            Some(auprc(&pooled, positives)?)
        } else {
            None
        },
        recall_at_1: mean(pairs.iter().map(|p| p.recall_at_1)),
        recall_at_5: mean(pairs.iter().map(|p| p.recall_at_5)),
    })
}

fn bin_of(p: &PairEvaluation) -> Result<Option<PoseBin>> {
    p.rotation_deg.map(assign_pose_bin).transpose()
}

pub fn evaluate_dataset(pairs: &[PairEvaluation]) -> Result<MetricReport> {
    let mut binned: Vec<Vec<&PairEvaluation>> = vec![Vec::new(); 4];
    let mut unbinned = Vec::new();
    for p in pairs {
        match bin_of(p)? {
            Some(b) => binned[b.index()].push(p),
            None => unbinned.push(p),
        }
    }
    let bins = PoseBin::ALL
        .iter()
        .map(|b| bin_report(b.label(), &binned[b.index()]))
        .collect::<Result<_>>()?;
    let all: Vec<&PairEvaluation> = pairs.iter().collect();
    Ok(MetricReport {
        bins,
        unbinned: bin_report("unbinned".into(), &unbinned)?,
        overall: bin_report("all".into(), &all)?,
    })
}

/// PR curve of the pooled predictions of one bin (`None` = unbinned,
/// pairs without poses). Empty when the bin has no positives.
pub fn bin_pr_curve(pairs: &[PairEvaluation], bin: Option<PoseBin>) -> Result<Vec<(f64, f64)>> {
    let mut pooled = Vec::new();
    let mut positives = 0;
    for p in pairs {
        if bin_of(p)? == bin {
            pooled.extend(p.predictions.iter().copied());
            positives += p.positives;
        }
    }
    if positives == 0 {
        return Ok(Vec::new());
    }
    pr_curve(&pooled, positives)
}

/// CSV with header `recall,precision`.
pub fn write_pr_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut s = String::from("recall,precision\n");
    for (r, p) in curve {
        writeln!(s, "{r},{p}").expect("writing to a String");
    }
    atomic_write(path, s.as_bytes())
}
