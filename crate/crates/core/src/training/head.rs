//! Gradients of the assignment loss with respect to the segment-feature
//! head, chained through aggregation, descriptor normalization, affinity
//! and Sinkhorn.

use ndarray::{s, Array2};

use crate::error::{ensure, Error, Result};
use crate::features::{
    aggregate_sum, aggregate_sum_backward, head_backward_from_pixels, head_forward_cached, HeadCache, HeadGrads,
    HeadParams, SegmentDescriptors,
};
use crate::matcher::{augment_dustbin, select_rows, DustbinParam, MatcherConfig};
use crate::pair::{FeatureMap, GtAssignment, MaskSet, Pair, PatchFeatures};
use crate::training::loss::{compact_gt, loss_backward};

/// The parts of a pair the head is trained on. `gt` is in slot indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub patches_a: PatchFeatures,
    pub patches_b: PatchFeatures,
    pub masks_a: MaskSet,
    pub masks_b: MaskSet,
    pub gt: GtAssignment,
}

impl TrainingPair {
    pub fn from_pair(pair: &Pair) -> Result<Self> {
        let missing = |what: &str| Error::Validation(format!("pair has no {what}"));
        Ok(Self {
            patches_a: pair.a.patches.clone().ok_or_else(|| missing("patches_a"))?,
            patches_b: pair.b.patches.clone().ok_or_else(|| missing("patches_b"))?,
            masks_a: pair.a.masks.clone(),
            masks_b: pair.b.masks.clone(),
            gt: pair.gt.clone().ok_or_else(|| missing("ground truth"))?,
        })
    }
}

/// Head output aggregated under each mask.
pub fn describe(patches: &PatchFeatures, masks: &MaskSet, params: &HeadParams) -> Result<SegmentDescriptors> {
    let (f, _) = head_forward_cached(patches, params)?;
    aggregate_sum(&f, masks)
}

#[derive(Debug, Clone)]
pub struct HeadStep {
    pub loss: f64,
    pub grads: HeadGrads,
    pub d_alpha: f64,
}

struct SideForward {
    cache: HeadCache,
    g: SegmentDescriptors,
    rows: Vec<usize>,
    unit: Array2<f64>,
    norms: Vec<f64>,
}

fn side_forward(patches: &PatchFeatures, masks: &MaskSet, params: &HeadParams, normalize: bool) -> Result<SideForward> {
    let (f, cache) = head_forward_cached(patches, params)?;
    let g = aggregate_sum(&f, masks)?;
    let rows = g.valid_indices();
    let (unit, _) = select_rows(&g.g, &rows, normalize);
    let norms = rows.iter().map(|&i| g.g.row(i).dot(&g.g.row(i)).sqrt()).collect();
    Ok(SideForward {
        cache,
        g,
        rows,
        unit,
        norms,
    })
}

/// Chains `d_unit` (gradient on the selected, possibly normalized rows)
/// back to the head parameters.
fn side_backward(
    side: &SideForward,
    d_unit: &Array2<f64>,
    masks: &MaskSet,
    params: &HeadParams,
    normalize: bool,
    dim_out: usize,
) -> HeadGrads {
    let mut d_g = Array2::zeros((side.g.len(), dim_out));
    for (r, &i) in side.rows.iter().enumerate() {
        let du = d_unit.row(r);
        if normalize {
            let n = side.norms[r];
            if n > 0.0 {
                let u = side.unit.row(r);
                let proj = u.dot(&du);
                d_g.row_mut(i).assign(&((&du - &(&u * proj)) / n));
            }
        } else {
            d_g.row_mut(i).assign(&du);
        }
    }
    let d_pixels = aggregate_sum_backward(masks, &d_g, &side.g.valid);
    let (h, w) = (masks.height(), masks.width());
    let d_map = FeatureMap::new(h, w, d_pixels).expect("mask and feature shapes agree");
    head_backward_from_pixels(&side.cache, params, &d_map)
}

/// Loss of one pair with gradients for the head and the dustbin logit.
pub fn head_backward(
    pair: &TrainingPair,
    params: &HeadParams,
    alpha: DustbinParam,
    config: &MatcherConfig,
) -> Result<HeadStep> {
    config.validate()?;
    ensure!(
        pair.patches_a.dim() == params.shape.dim_in && pair.patches_b.dim() == params.shape.dim_in,
        "patch channels do not match head input width {}",
        params.shape.dim_in
    );
    let norm = config.normalize_descriptors;
    let a = side_forward(&pair.patches_a, &pair.masks_a, params, norm)?;
    let b = side_forward(&pair.patches_b, &pair.masks_b, params, norm)?;
    let sim = a.unit.dot(&b.unit.t());
    let s_aug = augment_dustbin(&sim, alpha);
    let gt = compact_gt(&pair.gt, &a.rows, &b.rows);
    let lg = loss_backward(&s_aug, &gt, config.temperature, config.iterations)?;
    let (m1, m2) = sim.dim();
    let d_sim = lg.d_logits.slice(s![..m1, ..m2]).to_owned();
    let d_unit_a = d_sim.dot(&b.unit);
    let d_unit_b = d_sim.t().dot(&a.unit);
    let dim_out = params.shape.dim_out;
    let mut grads = side_backward(&a, &d_unit_a, &pair.masks_a, params, norm, dim_out);
    grads.add_assign(&side_backward(&b, &d_unit_b, &pair.masks_b, params, norm, dim_out));
    Ok(HeadStep {
        loss: lg.loss,
        grads,
        d_alpha: lg.d_alpha,
    })
}

/// Mean loss and mean gradients over a batch.
pub fn batch_backward(
    pairs: &[&TrainingPair],
    params: &HeadParams,
    alpha: DustbinParam,
    config: &MatcherConfig,
) -> Result<HeadStep> {
    ensure!(!pairs.is_empty(), "empty batch");
    let mut total = HeadStep {
        loss: 0.0,
        grads: HeadGrads::zeros(params.shape),
        d_alpha: 0.0,
    };
    for p in pairs {
        let step = head_backward(p, params, alpha, config)?;
        total.loss += step.loss;
        total.grads.add_assign(&step.grads);
        total.d_alpha += step.d_alpha;
    }
    let k = 1.0 / pairs.len() as f64;
    total.loss *= k;
    total.grads.scale(k);
    total.d_alpha *= k;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::HeadShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_pair(seed: u64) -> TrainingPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let patches = |rng: &mut ChaCha8Rng| {
            PatchFeatures::new(2, 2, Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0))).unwrap()
        };
        // 4x4 pixels (patch size 2), three segments per view.
        let labels_a = [0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2, 9, 9];
        let labels_b = [2, 2, 0, 0, 2, 2, 0, 0, 1, 1, 1, 9, 1, 1, 1, 9];
        TrainingPair {
            patches_a: patches(&mut rng),
            patches_b: patches(&mut rng),
            masks_a: MaskSet::from_labels(4, 4, &labels_a, 3).unwrap(),
            masks_b: MaskSet::from_labels(4, 4, &labels_b, 3).unwrap(),
            gt: GtAssignment {
                matches: vec![(0, 2), (1, 0)],
                unmatched_a: vec![2],
                unmatched_b: vec![1],
            },
        }
    }

    fn loss_of(pair: &TrainingPair, p: &HeadParams, alpha: f64, cfg: &MatcherConfig) -> f64 {
        head_backward(pair, p, DustbinParam { alpha }, cfg).unwrap().loss
    }

    #[test]
    fn matches_finite_differences() {
        let shape = HeadShape {
            dim_in: 3,
            hidden: 4,
            patch_size: 2,
            dim_out: 2,
        };
        let params = HeadParams::init(shape, 11).unwrap();
        let pair = tiny_pair(5);
        for normalize in [true, false] {
            let cfg = MatcherConfig {
                temperature: 0.5,
                iterations: 10,
                normalize_descriptors: normalize,
                mutual_check: false,
            };
            let step = head_backward(&pair, &params, DustbinParam { alpha: 0.3 }, &cfg).unwrap();
            let analytic = step.grads.slices().concat();
            let eps = 1e-3;
            let mut numeric = Vec::new();
            for k in 0..4 {
                let len = params.clone().slices_mut()[k].len();
                for i in 0..len {
                    let mut plus = params.clone();
                    plus.slices_mut()[k][i] += eps;
                    let mut minus = params.clone();
                    minus.slices_mut()[k][i] -= eps;
                    numeric.push((loss_of(&pair, &plus, 0.3, &cfg) - loss_of(&pair, &minus, 0.3, &cfg)) / (2.0 * eps));
                }
            }
            let scale = numeric.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let err = analytic
                .iter()
                .zip(&numeric)
                .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
            assert!(err / scale < 1e-3, "normalize={normalize}: rel err {}", err / scale);

            let fd_alpha = (loss_of(&pair, &params, 0.3 + eps, &cfg) - loss_of(&pair, &params, 0.3 - eps, &cfg)) / (2.0 * eps);
            assert!((fd_alpha - step.d_alpha).abs() < 1e-3 * fd_alpha.abs().max(1.0));
        }
    }

    #[test]
    fn zero_head_only_moves_alpha() {
        let params = HeadParams::zeros(HeadShape::new(3, 2, 2));
        let pair = tiny_pair(1);
        for normalize in [true, false] {
            let cfg = MatcherConfig {
                normalize_descriptors: normalize,
                ..Default::default()
            };
            let step = head_backward(&pair, &params, DustbinParam::default(), &cfg).unwrap();
            assert_eq!(step.grads.max_abs(), 0.0);
            assert!(step.d_alpha != 0.0);
        }
    }

    #[test]
    fn duplicated_batch_doubles_the_sum() {
        let params = HeadParams::init(HeadShape::new(3, 2, 2), 2).unwrap();
        let pair = tiny_pair(3);
        let cfg = MatcherConfig::default();
        let one = head_backward(&pair, &params, DustbinParam::default(), &cfg).unwrap();
        let two = batch_backward(&[&pair, &pair], &params, DustbinParam::default(), &cfg).unwrap();
        // The batch reports means, so twice the mean is twice the single gradient.
        let mut doubled = two.grads.clone();
        doubled.scale(2.0);
        let mut single2 = one.grads.clone();
        single2.scale(2.0);
        let diff = {
            let mut d = doubled.clone();
            d.scale(-1.0);
            d.add_assign(&single2);
            d.max_abs()
        };
        assert!(diff < 1e-12);
        assert!((two.loss - one.loss).abs() < 1e-12);
    }
}
