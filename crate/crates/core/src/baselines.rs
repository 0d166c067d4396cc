//! Baselines: segment correspondence by keypoint voting, and mutual
//! nearest neighbours under cosine similarity.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::features::SegmentDescriptors;
use crate::matcher::{argmax, select_rows};
use crate::pair::MaskSet;

/// Matched keypoints as `[[x0, y0], [x1, y1]]` pixel pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeypointMatches(pub Vec<[[i64; 2]; 2]>);

impl KeypointMatches {
    pub fn validate(&self, a: &MaskSet, b: &MaskSet) -> Result<()> {
        for (k, [p0, p1]) in self.0.iter().enumerate() {
            for (p, m, side) in [(p0, a, 0), (p1, b, 1)] {
                ensure!(
                    (0..m.width() as i64).contains(&p[0]) && (0..m.height() as i64).contains(&p[1]),
                    "keypoint {k} endpoint {side} at ({}, {}) lies outside the {}x{} image",
                    p[0],
                    p[1],
                    m.width(),
                    m.height()
                );
            }
        }
        Ok(())
    }
}

/// Vote counts and the resulting assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    /// `V[m, n]`: keypoints from source mask `m` landing in target mask `n`.
    pub votes: Array2<u32>,
    /// Target per source mask; `None` when the row received no votes.
    pub assignment: Vec<Option<usize>>,
}

/// JSON form, with `-1` for unassigned sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteJson {
    pub votes: Vec<Vec<u32>>,
    pub assignment: Vec<i64>,
}

impl From<&VoteOutcome> for VoteJson {
    fn from(v: &VoteOutcome) -> Self {
        Self {
            votes: v.votes.outer_iter().map(|r| r.to_vec()).collect(),
            assignment: v.assignment.iter().map(|a| a.map_or(-1, |j| j as i64)).collect(),
        }
    }
}

/// Each keypoint pair votes for the (source, target) masks containing its
/// endpoints; a point inside several masks counts for the lowest index,
/// a point inside none casts no vote. Rows take their argmax, lowest
/// target on ties.
pub fn vote_match(masks_a: &MaskSet, masks_b: &MaskSet, kps: &KeypointMatches) -> Result<VoteOutcome> {
    kps.validate(masks_a, masks_b)?;
    let mut votes = Array2::<u32>::zeros((masks_a.len(), masks_b.len()));
    for [p0, p1] in &kps.0 {
        let m = masks_a.first_containing(p0[1] as usize, p0[0] as usize);
        let n = masks_b.first_containing(p1[1] as usize, p1[0] as usize);
        if let (Some(m), Some(n)) = (m, n) {
            votes[[m, n]] += 1;
        }
    }
    let assignment = votes
        .outer_iter()
        .map(|row| {
            let best = row.iter().copied().max().unwrap_or(0);
            if best == 0 {
                None
            } else {
                row.iter().position(|&v| v == best)
            }
        })
        .collect();
    Ok(VoteOutcome { votes, assignment })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutualMatches {
    /// `(source slot, target slot, cosine)` in source order.
    pub matches: Vec<(usize, usize, f64)>,
    /// Slot-indexed cosine matrix; `None` for padded or zero-norm slots.
    pub similarity: Vec<Vec<Option<f64>>>,
}

impl MutualMatches {
    pub fn assignment(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.similarity.len()];
        for &(i, j, _) in &self.matches {
            out[i] = Some(j);
        }
        out
    }
}

/// Keeps `(i, j)` iff `j` is the best target of `i` and `i` the best
/// source of `j` under cosine similarity (lowest index on ties).
/// Zero-norm descriptors are excluded.
pub fn mutual_cosine_match(g1: &SegmentDescriptors, g2: &SegmentDescriptors) -> Result<MutualMatches> {
    ensure!(
        g1.dim() == g2.dim(),
        "descriptor dimensions differ: {} vs {}",
        g1.dim(),
        g2.dim()
    );
    let nonzero = |g: &SegmentDescriptors, side: &str| -> Vec<usize> {
        let (keep, drop): (Vec<usize>, Vec<usize>) = g
            .valid_indices()
            .into_iter()
            .partition(|&i| g.g.row(i).iter().any(|&x| x != 0.0));
        if !drop.is_empty() {
            log::warn!("excluding zero-norm descriptors from {side}: {drop:?}");
        }
        keep
    };
    let rows = nonzero(g1, "source");
    let cols = nonzero(g2, "target");
    let (a, _) = select_rows(&g1.g, &rows, true);
    let (b, _) = select_rows(&g2.g, &cols, true);
    let sim = a.dot(&b.t());

    let mut similarity = vec![vec![None; g2.len()]; g1.len()];
    for (r, &i) in rows.iter().enumerate() {
        for (c, &j) in cols.iter().enumerate() {
            similarity[i][j] = Some(sim[[r, c]]);
        }
    }
    let mut matches = Vec::new();
    if !cols.is_empty() {
        for (r, &i) in rows.iter().enumerate() {
            let c = argmax(sim.row(r)).expect("non-empty row");
            if argmax(sim.slice(s![.., c])) == Some(r) {
                matches.push((i, cols[c], sim[[r, c]]));
            }
        }
    }
    Ok(MutualMatches { matches, similarity })
}
