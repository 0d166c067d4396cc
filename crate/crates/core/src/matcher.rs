//! Dustbin-augmented entropic optimal transport between segment sets.
//!
//! The pipeline is [`affinity`] -> [`augment_dustbin`] -> [`sinkhorn_log`]
//! -> [`discretize`], composed by [`match_segments`]. Sinkhorn runs in the
//! log domain: starting from `S~ / tau`, each iteration subtracts the
//! row-wise log-sum-exp and then the column-wise log-sum-exp, which is the
//! `u`/`v` rescaling of `exp(S~ / tau)` without ever leaving log space.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::features::SegmentDescriptors;

/// Matching hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig {
    /// Softmax temperature `tau` applied to the augmented logits.
    pub temperature: f64,
    /// Number of full Sinkhorn iterations (row then column normalization).
    pub iterations: usize,
    /// L2-normalize descriptors before the dot product (cosine affinity).
    pub normalize_descriptors: bool,
    /// Require row/column mutual argmax when discretizing.
    pub mutual_check: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            iterations: 50,
            normalize_descriptors: true,
            mutual_check: false,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature must be positive and finite, got {}",
            self.temperature
        );
        ensure!(self.iterations >= 1, "Sinkhorn needs at least one iteration");
        Ok(())
    }
}

/// The shared dustbin logit `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DustbinParam {
    pub alpha: f64,
}

impl Default for DustbinParam {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

/// Pairwise similarities between the valid rows of two descriptor sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Affinity {
    /// `M1 x M2` similarity over valid rows only.
    pub s: Array2<f64>,
    /// Slot index of each row of `s`.
    pub rows: Vec<usize>,
    /// Slot index of each column of `s`.
    pub cols: Vec<usize>,
    /// Slots whose descriptor had zero norm under normalization; their
    /// similarities are all zero.
    pub zero_norm_a: Vec<usize>,
    pub zero_norm_b: Vec<usize>,
}

/// Rows of `g` selected by `idx`, optionally L2-normalized. Returns the
/// matrix and the positions (within `idx`) of zero-norm rows.
pub(crate) fn select_rows(g: &Array2<f64>, idx: &[usize], normalize: bool) -> (Array2<f64>, Vec<usize>) {
    let mut out = Array2::zeros((idx.len(), g.ncols()));
    let mut zero = Vec::new();
    for (r, &i) in idx.iter().enumerate() {
        let row = g.row(i);
        if normalize {
            let n = row.dot(&row).sqrt();
            if n > 0.0 {
                out.row_mut(r).assign(&(&row / n));
            } else {
                zero.push(r);
            }
        } else {
            out.row_mut(r).assign(&row);
        }
    }
    (out, zero)
}

/// Dot-product affinity `S_ij = <g1_i, g2_j>` over valid rows.
pub fn affinity(g1: &SegmentDescriptors, g2: &SegmentDescriptors, normalize: bool) -> Result<Affinity> {
    ensure!(
        g1.dim() == g2.dim(),
        "descriptor dimensions differ: {} vs {}",
        g1.dim(),
        g2.dim()
    );
    let rows = g1.valid_indices();
    let cols = g2.valid_indices();
    let (a, za) = select_rows(&g1.g, &rows, normalize);
    let (b, zb) = select_rows(&g2.g, &cols, normalize);
    let s = a.dot(&b.t());
    ensure!(s.iter().all(|x| x.is_finite()), "affinity contains non-finite values");
    let zero_norm_a: Vec<usize> = za.iter().map(|&r| rows[r]).collect();
    let zero_norm_b: Vec<usize> = zb.iter().map(|&c| cols[c]).collect();
    if !zero_norm_a.is_empty() || !zero_norm_b.is_empty() {
        log::warn!("zero-norm descriptors treated as all-zero: a = {zero_norm_a:?}, b = {zero_norm_b:?}");
    }
    Ok(Affinity {
        s,
        rows,
        cols,
        zero_norm_a,
        zero_norm_b,
    })
}

/// Appends a dustbin row and column, every new entry equal to `alpha`.
pub fn augment_dustbin(s: &Array2<f64>, alpha: DustbinParam) -> Array2<f64> {
    let (m1, m2) = s.dim();
    let mut out = Array2::from_elem((m1 + 1, m2 + 1), alpha.alpha);
    out.slice_mut(s![..m1, ..m2]).assign(s);
    out
}

/// Soft assignment over the augmented matrix. The last row and column are
/// the dustbins.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    log_p: Array2<f64>,
    p: Array2<f64>,
}

impl TransportPlan {
    pub fn from_log(log_p: Array2<f64>) -> Self {
        let p = log_p.mapv(f64::exp);
        Self { log_p, p }
    }

    /// Builds a plan from probabilities directly. Entries must lie in `[0, 1]`.
    pub fn from_probabilities(p: Array2<f64>) -> Result<Self> {
        ensure!(p.nrows() >= 1 && p.ncols() >= 1, "plan must include the dustbin row and column");
        ensure!(
            p.iter().all(|&x| (0.0..=1.0).contains(&x)),
            "plan entries must lie in [0, 1]"
        );
        let log_p = p.mapv(f64::ln);
        Ok(Self { log_p, p })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn log_p(&self) -> &Array2<f64> {
        &self.log_p
    }

    /// Number of non-dustbin rows.
    pub fn m1(&self) -> usize {
        self.p.nrows() - 1
    }

    /// Number of non-dustbin columns.
    pub fn m2(&self) -> usize {
        self.p.ncols() - 1
    }

    pub fn row_sums(&self) -> Array1<f64> {
        self.p.sum_axis(Axis(1))
    }

    pub fn col_sums(&self) -> Array1<f64> {
        self.p.sum_axis(Axis(0))
    }

    /// SHA-256 over the dimensions and the little-endian bytes of `P`.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.p.nrows() as u64).to_le_bytes());
        h.update((self.p.ncols() as u64).to_le_bytes());
        for x in self.p.iter() {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Intermediate log-plans of every half-iteration, needed to
/// differentiate through the unrolled loop.
#[derive(Debug, Clone)]
pub struct SinkhornTrace {
    /// After the row normalization of iteration `t`.
    pub after_row: Vec<Array2<f64>>,
    /// After the column normalization of iteration `t`.
    pub after_col: Vec<Array2<f64>>,
}

fn logsumexp(v: ArrayView1<'_, f64>) -> f64 {
    let m = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn normalize_rows(l: &mut Array2<f64>) {
    for mut row in l.rows_mut() {
        let z = logsumexp(row.view());
        row -= z;
    }
}

fn normalize_cols(l: &mut Array2<f64>) {
    for mut col in l.columns_mut() {
        let z = logsumexp(col.view());
        col -= z;
    }
}

fn check_sinkhorn_inputs(s_aug: &Array2<f64>, temperature: f64, iterations: usize) -> Result<()> {
    ensure!(s_aug.nrows() >= 1 && s_aug.ncols() >= 1, "empty logit matrix");
    ensure!(
        temperature > 0.0 && temperature.is_finite(),
        "temperature must be positive and finite, got {temperature}"
    );
    ensure!(iterations >= 1, "Sinkhorn needs at least one iteration");
    if !s_aug.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("Sinkhorn input contains non-finite logits".into()));
    }
    Ok(())
}

/// `iterations` rounds of log-domain row/column normalization of
/// `S~ / temperature`; the returned plan is taken after the last column
/// normalization.
pub fn sinkhorn_log(s_aug: &Array2<f64>, temperature: f64, iterations: usize) -> Result<TransportPlan> {
    check_sinkhorn_inputs(s_aug, temperature, iterations)?;
    let mut l = s_aug / temperature;
    for _ in 0..iterations {
        normalize_rows(&mut l);
        normalize_cols(&mut l);
    }
    finish(l)
}

/// Same as [`sinkhorn_log`] but records every intermediate log-plan.
pub fn sinkhorn_log_traced(
    s_aug: &Array2<f64>,
    temperature: f64,
    iterations: usize,
) -> Result<(TransportPlan, SinkhornTrace)> {
    check_sinkhorn_inputs(s_aug, temperature, iterations)?;
    let mut l = s_aug / temperature;
    let mut trace = SinkhornTrace {
        after_row: Vec::with_capacity(iterations),
        after_col: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        normalize_rows(&mut l);
        trace.after_row.push(l.clone());
        normalize_cols(&mut l);
        trace.after_col.push(l.clone());
    }
    Ok((finish(l)?, trace))
}

fn finish(l: Array2<f64>) -> Result<TransportPlan> {
    if !l.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("Sinkhorn produced non-finite log-plan".into()));
    }
    Ok(TransportPlan::from_log(l))
}

/// Discrete correspondences, indexed by source row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Target index for each source, or `None` when the dustbin wins.
    pub assignment: Vec<Option<usize>>,
    /// The plan entry backing each decision (the dustbin entry for `None`).
    pub scores: Vec<f64>,
}

impl MatchResult {
    pub fn matches(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.assignment
            .iter()
            .zip(&self.scores)
            .enumerate()
            .filter_map(|(i, (j, &s))| j.map(|j| (i, j, s)))
    }
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((k, x)),
        }
    }
    best.map(|(k, _)| k)
}

/// Row-wise argmax over all columns including the dustbin; a source is
/// unmatched when the dustbin column wins. With `mutual_check`, a match
/// `(i, j)` also requires `i` to be the argmax of column `j` among the
/// non-dustbin rows.
pub fn discretize(plan: &TransportPlan, mutual_check: bool) -> MatchResult {
    let p = plan.p();
    let (m1, m2) = (plan.m1(), plan.m2());
    let mut assignment = Vec::with_capacity(m1);
    let mut scores = Vec::with_capacity(m1);
    for i in 0..m1 {
        let j = argmax(p.row(i)).expect("plan has at least the dustbin column");
        let accepted = j < m2 && (!mutual_check || argmax(p.slice(s![..m1, j])) == Some(i));
        if accepted {
            assignment.push(Some(j));
            scores.push(p[[i, j]]);
        } else {
            assignment.push(None);
            scores.push(p[[i, m2]]);
        }
    }
    MatchResult { assignment, scores }
}

/// Everything [`match_segments`] produces, in slot indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMatches {
    pub affinity: Affinity,
    pub plan: TransportPlan,
    /// One entry per source slot; padded or empty slots are `None`.
    pub result: MatchResult,
}

impl SegmentMatches {
    /// Non-dustbin plan block scattered into a `slots_a x slots_b` matrix;
    /// invalid slots are `None`.
    pub fn score_matrix(&self, slots_a: usize, slots_b: usize) -> Vec<Vec<Option<f64>>> {
        let mut out = vec![vec![None; slots_b]; slots_a];
        let p = self.plan.p();
        for (r, &i) in self.affinity.rows.iter().enumerate() {
            for (c, &j) in self.affinity.cols.iter().enumerate() {
                out[i][j] = Some(p[[r, c]]);
            }
        }
        out
    }
}

/// Affinity, dustbin augmentation, Sinkhorn and discretization in one call.
pub fn match_segments(
    g1: &SegmentDescriptors,
    g2: &SegmentDescriptors,
    config: &MatcherConfig,
    alpha: DustbinParam,
) -> Result<SegmentMatches> {
    config.validate()?;
    let aff = affinity(g1, g2, config.normalize_descriptors)?;
    let s_aug = augment_dustbin(&aff.s, alpha);
    let plan = sinkhorn_log(&s_aug, config.temperature, config.iterations)?;
    let compact = discretize(&plan, config.mutual_check);
    let mut assignment = vec![None; g1.len()];
    let mut scores = vec![0.0; g1.len()];
    for (r, &i) in aff.rows.iter().enumerate() {
        assignment[i] = compact.assignment[r].map(|c| aff.cols[c]);
        scores[i] = compact.scores[r];
    }
    Ok(SegmentMatches {
        affinity: aff,
        plan,
        result: MatchResult { assignment, scores },
    })
}

/// JSON form of a match: assignments, scores, a plan checksum and the
/// slot-indexed score matrix used for ranking metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchJson {
    pub assignment: Vec<Option<usize>>,
    pub scores: Vec<f64>,
    pub plan_checksum: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_matrix: Option<Vec<Vec<Option<f64>>>>,
}

impl MatchJson {
    pub fn new(m: &SegmentMatches, slots_b: usize) -> Self {
        let slots_a = m.result.assignment.len();
        Self {
            assignment: m.result.assignment.clone(),
            scores: m.result.scores.clone(),
            plan_checksum: m.plan.checksum(),
            score_matrix: Some(m.score_matrix(slots_a, slots_b)),
        }
    }
}
