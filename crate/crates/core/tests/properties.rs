//! Property tests for invariants that hold for all valid inputs.

use nalgebra::{Rotation3, Vector3};
use ndarray::Array2;
use proptest::collection::vec;
use proptest::prelude::*;

use segot::baselines::{mutual_cosine_match, vote_match, KeypointMatches};
use segot::eval::{assign_pose_bin, auprc, geodesic_rotation_deg, recall_at_k, ScoredPrediction};
use segot::features::SegmentDescriptors;
use segot::mapping::{nn_ratio, pointcloud_iou, voxel_downsample, PointCloud};
use segot::matcher::{augment_dustbin, discretize, sinkhorn_log, DustbinParam};
use segot::nav::{softmax_weights, yaw, NavConfig, NavSegment};
use segot::pair::{GtAssignment, MaskSet};
use segot::tensor::{read_tensor, write_tensor, DenseTensor, TensorData};
use segot::training::assignment_loss;

fn matrix(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    (rows, cols).prop_flat_map(move |(r, c)| {
        vec(lo..hi, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    vec(prop::array::uniform3(-1.0f64..1.0), 1..max).prop_map(PointCloud)
}

/// A partial matching between `m1` rows and `m2` columns.
fn matching(m1: usize, m2: usize) -> impl Strategy<Value = GtAssignment> {
    (Just((0..m1).collect::<Vec<_>>()).prop_shuffle(), Just((0..m2).collect::<Vec<_>>()).prop_shuffle(), 0..=m1.min(m2))
        .prop_map(|(rows, cols, k)| GtAssignment {
            matches: rows[..k].iter().copied().zip(cols[..k].iter().copied()).collect(),
            unmatched_a: rows[k..].to_vec(),
            unmatched_b: cols[k..].to_vec(),
        })
}

proptest! {
    #[test]
    fn sinkhorn_is_shift_invariant_with_unit_columns(s in matrix(1..=8, 1..=8, -3.0, 3.0), c in -5.0f64..5.0) {
        let p = sinkhorn_log(&s, 0.1, 50).unwrap();
        let q = sinkhorn_log(&s.mapv(|x| x + c), 0.1, 50).unwrap();
        for (a, b) in p.p().iter().zip(q.p()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for col in p.col_sums() {
            prop_assert!((col - 1.0).abs() < 1e-12);
        }
        prop_assert!(p.p().iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn loss_is_nonnegative((s, gt) in (1usize..=6, 1usize..=6).prop_flat_map(|(m1, m2)| {
        (matrix(m1..=m1, m2..=m2, -1.0, 1.0), matching(m1, m2))
    }), alpha in -2.0f64..2.0, tau in 0.05f64..1.0) {
        let plan = sinkhorn_log(&augment_dustbin(&s, DustbinParam { alpha }), tau, 20).unwrap();
        prop_assert!(assignment_loss(&plan, &gt).unwrap() >= 0.0);
    }

    #[test]
    fn mutual_discretization_is_injective(s in matrix(1..=8, 1..=8, -1.0, 1.0), alpha in -1.0f64..1.0) {
        let plan = sinkhorn_log(&augment_dustbin(&s, DustbinParam { alpha }), 0.1, 50).unwrap();
        let r = discretize(&plan, true);
        let mut targets: Vec<usize> = r.assignment.iter().flatten().copied().collect();
        let n = targets.len();
        targets.sort_unstable();
        targets.dedup();
        prop_assert_eq!(targets.len(), n);
    }

    #[test]
    fn tensors_round_trip_bit_exactly(
        shape in vec(1usize..5, 1..=4),
        bits in vec(any::<u32>(), 256),
        as_u8 in any::<bool>(),
    ) {
        let n: usize = shape.iter().product();
        let t = if as_u8 {
            DenseTensor::from_u8(shape, bits[..n].iter().map(|&b| b as u8).collect()).unwrap()
        } else {
            DenseTensor::from_f32(shape, bits[..n].iter().map(|&b| f32::from_bits(b)).collect()).unwrap()
        };
        let mut buf = Vec::new();
        let written = write_tensor(&t, &mut buf).unwrap();
        prop_assert_eq!(written, buf.len());
        let back = read_tensor(buf.as_slice()).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        match (back.data(), t.data()) {
            (TensorData::F32(x), TensorData::F32(y)) => {
                prop_assert!(x.iter().zip(y).all(|(a, b)| a.to_bits() == b.to_bits()))
            }
            (TensorData::U8(x), TensorData::U8(y)) => prop_assert_eq!(x, y),
            _ => prop_assert!(false, "dtype changed"),
        }
    }

    #[test]
    fn auprc_depends_only_on_ranking(
        preds in vec((0u8..16, any::<bool>()), 1..40),
        extra in 0usize..4,
    ) {
        let make = |f: &dyn Fn(f64) -> f64| -> Vec<ScoredPrediction> {
            preds.iter().enumerate().map(|(i, &(s, c))| ScoredPrediction {
                source: i, target: i, score: f(s as f64 / 8.0), is_correct: c,
            }).collect()
        };
        let total = (preds.iter().filter(|p| p.1).count() + extra).max(1);
        let a = auprc(&make(&|x| x), total).unwrap();
        let b = auprc(&make(&|x| 4.0 * x - 3.0), total).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn recall_is_monotone_in_k((s, gt) in (1usize..=6, 1usize..=6).prop_flat_map(|(m1, m2)| {
        (matrix(m1..=m1, m2..=m2, -1.0, 1.0), matching(m1, m2))
    })) {
        let mut prev = 0.0;
        for k in 1..=s.ncols() {
            let Some(r) = recall_at_k(&s, &gt, k).unwrap() else { return Ok(()) };
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn nn_ratio_matches_brute_force(a in cloud(40), b in cloud(40), tol in 0.01f64..0.8) {
        let brute = a.0.iter().filter(|p| {
            b.0.iter().any(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>() <= tol * tol)
        }).count() as f64 / a.len() as f64;
        prop_assert_eq!(nn_ratio(&a, &b, tol).unwrap(), brute);
    }

    #[test]
    fn voxel_downsampling_is_idempotent(a in cloud(60), voxel in 0.05f64..0.5) {
        let once = voxel_downsample(&a, voxel).unwrap();
        prop_assert!(once.len() <= a.len());
        prop_assert_eq!(voxel_downsample(&once, voxel).unwrap(), once);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in cloud(40), b in cloud(40), voxel in 0.05f64..0.5) {
        let ab = pointcloud_iou(&a, &b, voxel).unwrap();
        prop_assert_eq!(ab, pointcloud_iou(&b, &a, voxel).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(pointcloud_iou(&a, &a, voxel).unwrap(), 1.0);
    }

    #[test]
    fn mutual_cosine_is_injective(g1 in matrix(1..=8, 3..=3, -1.0, 1.0), g2 in matrix(1..=8, 3..=3, -1.0, 1.0)) {
        let m = mutual_cosine_match(&SegmentDescriptors::from_rows(g1), &SegmentDescriptors::from_rows(g2)).unwrap();
        let mut targets: Vec<usize> = m.matches.iter().map(|&(_, j, _)| j).collect();
        let n = targets.len();
        targets.sort_unstable();
        targets.dedup();
        prop_assert_eq!(targets.len(), n);
    }

    #[test]
    fn votes_are_conserved_and_order_free(
        labels_a in vec(0usize..4, 16),
        labels_b in vec(0usize..4, 16),
        kps in vec(((0i64..4, 0i64..4), (0i64..4, 0i64..4)), 0..30),
    ) {
        // Label 3 means "no mask".
        let a = MaskSet::from_labels(4, 4, &labels_a, 3).unwrap();
        let b = MaskSet::from_labels(4, 4, &labels_b, 3).unwrap();
        let mut kps: Vec<[[i64; 2]; 2]> = kps.into_iter().map(|((x0, y0), (x1, y1))| [[x0, y0], [x1, y1]]).collect();
        let v = vote_match(&a, &b, &KeypointMatches(kps.clone())).unwrap();
        let covered = kps.iter().filter(|[p, q]| {
            labels_a[(p[1] * 4 + p[0]) as usize] < 3 && labels_b[(q[1] * 4 + q[0]) as usize] < 3
        }).count() as u32;
        prop_assert_eq!(v.votes.sum(), covered);
        kps.reverse();
        prop_assert_eq!(vote_match(&a, &b, &KeypointMatches(kps)).unwrap(), v);
    }

    #[test]
    fn yaw_is_bounded_and_shift_invariant(
        segs in vec((0.0f64..1.0, 0.0f64..50.0), 1..10),
        width in 2.0f64..1000.0,
        tau in 0.1f64..10.0,
        gain in 0.01f64..2.0,
        shift in 0.0f64..50.0,
    ) {
        let cfg = NavConfig { tau, gain, width };
        let s: Vec<NavSegment> = segs.iter().map(|&(u, p)| NavSegment { x: u * width, p }).collect();
        let psi = yaw(&s, &cfg).unwrap();
        prop_assert!(psi.abs() <= gain / 2.0);
        let shifted: Vec<NavSegment> = s.iter().map(|g| NavSegment { p: g.p + shift, ..*g }).collect();
        prop_assert!((yaw(&shifted, &cfg).unwrap() - psi).abs() <= 1e-12);
        let w = softmax_weights(&s.iter().map(|g| g.p).collect::<Vec<_>>(), tau).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geodesic_is_symmetric_and_binned(
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let ra = Rotation3::from_scaled_axis(Vector3::from(a) * 3.0).into_inner();
        let rb = Rotation3::from_scaled_axis(Vector3::from(b) * 3.0).into_inner();
        let ab = geodesic_rotation_deg(&ra, &rb).unwrap();
        let ba = geodesic_rotation_deg(&rb, &ra).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=180.0).contains(&ab));
        let (lo, hi) = assign_pose_bin(ab).unwrap().bounds();
        prop_assert!(lo <= ab && ab <= hi);
    }
}
