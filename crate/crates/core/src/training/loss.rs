//! Assignment loss and its exact gradient through the unrolled Sinkhorn.
//!
//! The loss sums `-log P` over ground-truth matches, over unmatched sources
//! against the dustbin column and over unmatched targets against the dustbin
//! row. Sinkhorn is differentiated step by step in reverse: a log-domain
//! row normalization `Y = X - lse_row(X)` has the adjoint
//! `dX = dY - exp(Y) * rowsum(dY)`, and likewise for columns.

use ndarray::{s, Array2, Axis};

use crate::error::{ensure, Result};
use crate::matcher::{sinkhorn_log_traced, TransportPlan};
use crate::pair::GtAssignment;

/// Plan entries are clamped below at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-30;

/// Plan entries that the loss reads, as `(row, col)` in plan coordinates.
fn loss_entries(gt: &GtAssignment, m1: usize, m2: usize) -> Result<Vec<(usize, usize)>> {
    gt.validate(m1, m2)?;
    let mut out = Vec::with_capacity(gt.matches.len() + gt.unmatched_a.len() + gt.unmatched_b.len());
    out.extend(gt.matches.iter().copied());
    out.extend(gt.unmatched_a.iter().map(|&i| (i, m2)));
    out.extend(gt.unmatched_b.iter().map(|&j| (m1, j)));
    Ok(out)
}

/// Negative log-likelihood of the ground truth under `plan`.
pub fn assignment_loss(plan: &TransportPlan, gt: &GtAssignment) -> Result<f64> {
    let floor = PROB_FLOOR.ln();
    let log_p = plan.log_p();
    let entries = loss_entries(gt, plan.m1(), plan.m2())?;
    Ok(entries.into_iter().map(|(i, j)| -log_p[[i, j]].max(floor)).sum())
}

/// Loss value with gradients with respect to the augmented logits and the
/// dustbin logit.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// `dL/dS~`, same shape as the augmented matrix.
    pub d_logits: Array2<f64>,
    /// `dL/dalpha`: the sum of `d_logits` over the dustbin row and column.
    pub d_alpha: f64,
    pub plan: TransportPlan,
}

/// Runs Sinkhorn on `s_aug` and backpropagates the assignment loss to
/// every logit.
pub fn loss_backward(s_aug: &Array2<f64>, gt: &GtAssignment, temperature: f64, iterations: usize) -> Result<LossGrad> {
    let (rows, cols) = s_aug.dim();
    ensure!(rows >= 1 && cols >= 1, "empty logit matrix");
    let (m1, m2) = (rows - 1, cols - 1);
    let entries = loss_entries(gt, m1, m2)?;
    let (plan, trace) = sinkhorn_log_traced(s_aug, temperature, iterations)?;

    let floor = PROB_FLOOR.ln();
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((rows, cols));
    for (i, j) in entries {
        let lp = plan.log_p()[[i, j]];
        if lp > floor {
            loss -= lp;
            grad[[i, j]] -= 1.0;
        } else {
            loss -= floor;
        }
    }

    for t in (0..iterations).rev() {
        // Column step: after_col[t] = after_row[t] - lse_col(after_row[t]).
        let y = &trace.after_col[t];
        let col_sums = grad.sum_axis(Axis(0));
        let mut soft = y.mapv(f64::exp);
        soft *= &col_sums.view().insert_axis(Axis(0));
        grad -= &soft;
        // Row step: after_row[t] = prev - lse_row(prev).
        let y = &trace.after_row[t];
        let row_sums = grad.sum_axis(Axis(1));
        let mut soft = y.mapv(f64::exp);
        soft *= &row_sums.view().insert_axis(Axis(1));
        grad -= &soft;
    }
    grad /= temperature;

    let d_alpha = grad.slice(s![m1, ..]).sum() + grad.slice(s![..m1, m2]).sum();
    Ok(LossGrad {
        loss,
        d_logits: grad,
        d_alpha,
        plan,
    })
}

/// Re-indexes a slot-level ground truth into plan coordinates, given the
/// slot index of each plan row and column. Entries touching slots outside
/// the plan are dropped.
pub fn compact_gt(gt: &GtAssignment, rows: &[usize], cols: &[usize]) -> GtAssignment {
    let pos = |idx: &[usize], slot: usize| idx.iter().position(|&s| s == slot);
    GtAssignment {
        matches: gt
            .matches
            .iter()
            .filter_map(|&(i, j)| Some((pos(rows, i)?, pos(cols, j)?)))
            .collect(),
        unmatched_a: gt.unmatched_a.iter().filter_map(|&i| pos(rows, i)).collect(),
        unmatched_b: gt.unmatched_b.iter().filter_map(|&j| pos(cols, j)).collect(),
    }
}
