//! Object-centric 3D mapping from matched masks.
//!
//! Masks are back-projected through depth into world-frame point clouds.
//! Two routes build a map: incremental greedy association with fused
//! semantic/geometric similarity, and pairwise matching of every frame
//! pair with a point-cloud IoU check, followed by connected components.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use nalgebra::Vector3;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::eval::{auprc, ScoredPrediction};
use crate::features::aggregate_sum;
use crate::fsutil::{write_json, write_tensor_file};
use crate::matcher::{match_segments, DustbinParam, MatcherConfig};
use crate::pair::{CameraPose, DepthMap, Intrinsics, MaskSet};
use crate::sequence::Frame;
use crate::tensor::DenseTensor;

/// World-frame points in metres.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud(pub Vec<[f64; 3]>);

impl PointCloud {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Axis-aligned bounds, `None` when empty.
    pub fn aabb(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.0.first()?;
        Some(self.0.iter().fold((first, first), |(mut lo, mut hi), p| {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
            (lo, hi)
        }))
    }

    pub fn to_tensor(&self) -> Result<DenseTensor> {
        ensure!(!self.is_empty(), "cannot store an empty point cloud");
        DenseTensor::from_f64_lossy(vec![self.len(), 3], self.0.iter().flatten().copied())
    }
}

fn aabbs_overlap(a: &PointCloud, b: &PointCloud) -> bool {
    match (a.aabb(), b.aabb()) {
        (Some((alo, ahi)), Some((blo, bhi))) => (0..3).all(|k| alo[k] <= bhi[k] && blo[k] <= ahi[k]),
        _ => false,
    }
}

/// Back-projects the pixels of mask `slot` with positive finite depth:
/// camera point `((u - cx) d / fx, (v - cy) d / fy, d)`, then `R p + t`.
pub fn backproject(
    masks: &MaskSet,
    slot: usize,
    depth: &DepthMap,
    intrinsics: &Intrinsics,
    pose: &CameraPose,
) -> Result<PointCloud> {
    ensure!(
        depth.height() == masks.height() && depth.width() == masks.width(),
        "depth is {}x{} but masks are {}x{}",
        depth.height(),
        depth.width(),
        masks.height(),
        masks.width()
    );
    ensure!(slot < masks.len(), "mask slot {slot} out of range ({} slots)", masks.len());
    intrinsics.validate()?;
    let mut out = Vec::new();
    for v in 0..masks.height() {
        for u in 0..masks.width() {
            let d = depth.data[[v, u]];
            if !masks.contains(slot, v, u) || !(d > 0.0 && d.is_finite()) {
                continue;
            }
            let p = Vector3::new(
                (u as f64 - intrinsics.cx) * d / intrinsics.fx,
                (v as f64 - intrinsics.cy) * d / intrinsics.fy,
                d,
            );
            let w = pose.transform(&p);
            out.push([w.x, w.y, w.z]);
        }
    }
    Ok(PointCloud(out))
}

type Cell = (i64, i64, i64);

fn cell(p: &[f64; 3], pitch: f64) -> Cell {
    (
        (p[0] / pitch).floor() as i64,
        (p[1] / pitch).floor() as i64,
        (p[2] / pitch).floor() as i64,
    )
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Fraction of candidate points with some reference point within `tol`
/// (inclusive). Uses a uniform grid of pitch `tol`, which gives the
/// same answer as the brute-force scan.
pub fn nn_ratio(candidate: &PointCloud, reference: &PointCloud, tol: f64) -> Result<f64> {
    ensure!(!candidate.is_empty(), "candidate cloud is empty");
    ensure!(tol > 0.0 && tol.is_finite(), "tolerance must be positive, got {tol}");
    if reference.is_empty() {
        return Ok(0.0);
    }
    let mut grid: HashMap<Cell, Vec<usize>> = HashMap::new();
    for (k, p) in reference.0.iter().enumerate() {
        grid.entry(cell(p, tol)).or_default().push(k);
    }
    let t2 = tol * tol;
    let near = candidate
        .0
        .iter()
        .filter(|p| {
            let (x, y, z) = cell(p, tol);
            (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dz| {
                        grid.get(&(x + dx, y + dy, z + dz))
                            .is_some_and(|ks| ks.iter().any(|&k| dist2(p, &reference.0[k]) <= t2))
                    })
                })
            })
        })
        .count();
    Ok(near as f64 / candidate.len() as f64)
}

/// Cosine similarity mapped from `[-1, 1]` to `[0, 1]`.
pub fn semantic_sim(fa: &Array1<f64>, fb: &Array1<f64>) -> Result<f64> {
    ensure!(fa.len() == fb.len(), "descriptor lengths differ: {} vs {}", fa.len(), fb.len());
    let (na, nb) = (fa.dot(fa).sqrt(), fb.dot(fb).sqrt());
    ensure!(na > 0.0 && nb > 0.0, "semantic similarity of a zero descriptor");
    Ok(0.5 * fa.dot(fb) / (na * nb) + 0.5)
}

pub fn fused_sim(s_sem: f64, s_geo: f64, alpha: f64) -> f64 {
    alpha * s_sem + (1.0 - alpha) * s_geo
}

/// One centroid per occupied grid cell of pitch `voxel`, ordered by cell.
pub fn voxel_downsample(points: &PointCloud, voxel: f64) -> Result<PointCloud> {
    ensure!(voxel > 0.0 && voxel.is_finite(), "voxel size must be positive, got {voxel}");
    let mut cells: BTreeMap<Cell, ([f64; 3], usize)> = BTreeMap::new();
    for p in &points.0 {
        let e = cells.entry(cell(p, voxel)).or_insert(([0.0; 3], 0));
        for (acc, x) in e.0.iter_mut().zip(p) {
            *acc += x;
        }
        e.1 += 1;
    }
    Ok(PointCloud(
        cells
            .values()
            .map(|(s, n)| [s[0] / *n as f64, s[1] / *n as f64, s[2] / *n as f64])
            .collect(),
    ))
}

fn occupancy(points: &PointCloud, voxel: f64) -> BTreeSet<Cell> {
    points.0.iter().map(|p| cell(p, voxel)).collect()
}

/// Intersection over union of the voxel occupancy of two clouds.
pub fn pointcloud_iou(a: &PointCloud, b: &PointCloud, voxel: f64) -> Result<f64> {
    ensure!(voxel > 0.0 && voxel.is_finite(), "voxel size must be positive, got {voxel}");
    let (oa, ob) = (occupancy(a, voxel), occupancy(b, voxel));
    let union = oa.union(&ob).count();
    if union == 0 {
        log::warn!("IoU of two empty point clouds is 0");
        return Ok(0.0);
    }
    Ok(oa.intersection(&ob).count() as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Weight of the semantic term in the fused similarity.
    pub alpha: f64,
    pub sim_threshold: f64,
    pub nn_tolerance: f64,
    pub voxel_size: f64,
    pub iou_threshold: f64,
    pub iou_voxel_size: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            sim_threshold: 0.9,
            nn_tolerance: 0.02,
            voxel_size: 0.01,
            iou_threshold: 0.5,
            iou_voxel_size: 0.05,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.1..=0.5).contains(&self.alpha),
            "blend alpha must be in [0.1, 0.5], got {}",
            self.alpha
        );
        for (name, v) in [
            ("sim threshold", self.sim_threshold),
            ("nn tolerance", self.nn_tolerance),
            ("voxel size", self.voxel_size),
            ("iou threshold", self.iou_threshold),
            ("iou voxel size", self.iou_voxel_size),
        ] {
            ensure!(v > 0.0 && v.is_finite(), "{name} must be positive, got {v}");
        }
        Ok(())
    }
}

/// Dustbin logit used when matching frames for map building. Cosine
/// affinities never exceed 1, so with the matcher's default of 1 a segment
/// whose only candidate is its true counterpart can tie or lose to the
/// dustbin; 0.5 leaves a margin.
pub const MAP_DUSTBIN_ALPHA: f64 = 0.5;

/// A segment observed in one frame, lifted to 3D.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub descriptor: Array1<f64>,
    pub points: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapObject {
    /// Running mean of the fused descriptors, not normalized; see
    /// [`MapObject::descriptor`].
    pub mean_descriptor: Array1<f64>,
    pub points: PointCloud,
    /// Number of detections fused into this object.
    pub n: usize,
}

impl MapObject {
    pub fn from_detection(d: &Detection, voxel: f64) -> Result<Self> {
        Ok(Self {
            mean_descriptor: d.descriptor.clone(),
            points: voxel_downsample(&d.points, voxel)?,
            n: 1,
        })
    }

    /// Unit-normalized descriptor (zero stays zero).
    pub fn descriptor(&self) -> Array1<f64> {
        let n = self.mean_descriptor.dot(&self.mean_descriptor).sqrt();
        if n > 0.0 {
            &self.mean_descriptor / n
        } else {
            self.mean_descriptor.clone()
        }
    }
}

/// `f <- (n f + f_new) / (n + 1)`, `n <- n + 1`, points merged and
/// voxel-downsampled.
pub fn fuse(object: &MapObject, detection: &Detection, voxel: f64) -> Result<MapObject> {
    ensure!(
        object.mean_descriptor.len() == detection.descriptor.len(),
        "descriptor lengths differ: {} vs {}",
        object.mean_descriptor.len(),
        detection.descriptor.len()
    );
    let n = object.n as f64;
    let mean = (&object.mean_descriptor * n + &detection.descriptor) / (n + 1.0);
    let mut merged = object.points.0.clone();
    merged.extend_from_slice(&detection.points.0);
    Ok(MapObject {
        mean_descriptor: mean,
        points: voxel_downsample(&PointCloud(merged), voxel)?,
        n: object.n + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Association {
    Merge { object: usize, similarity: f64 },
    New,
}

/// Decides, for each detection independently, whether it merges into the
/// best-scoring map object among those whose bounding box overlaps it.
pub fn greedy_associate(detections: &[Detection], map: &[MapObject], config: &FusionConfig) -> Result<Vec<Association>> {
    config.validate()?;
    detections
        .iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (j, o) in map.iter().enumerate() {
                if d.points.is_empty() || !aabbs_overlap(&d.points, &o.points) {
                    continue;
                }
                let s = fused_sim(
                    semantic_sim(&d.descriptor, &o.mean_descriptor)?,
                    nn_ratio(&d.points, &o.points, config.nn_tolerance)?,
                    config.alpha,
                );
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((j, s));
                }
            }
            Ok(match best {
                Some((object, similarity)) if similarity >= config.sim_threshold => {
                    Association::Merge { object, similarity }
                }
                _ => Association::New,
            })
        })
        .collect()
}

/// A `(frame, slot)` detection key.
pub type Node = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: Node,
    pub b: Node,
    pub iou: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseMap {
    pub objects: Vec<MapObject>,
    /// Detections making up each object, sorted.
    pub members: Vec<Vec<Node>>,
    /// Every non-dustbin match with its IoU, in canonical order.
    pub links: Vec<Link>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // Smaller root wins so the result does not depend on link order.
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Detections of every valid, non-empty slot of `frame`, keyed by slot.
/// Descriptors are summed features under each mask.
pub fn frame_detections(frame: &Frame, voxel: f64) -> Result<Vec<(usize, Detection)>> {
    let g = aggregate_sum(&frame.features, &frame.masks)?;
    g.valid_indices()
        .into_iter()
        .map(|slot| {
            let raw = backproject(&frame.masks, slot, &frame.depth, &frame.intrinsics, &frame.pose)?;
            Ok((
                slot,
                Detection {
                    descriptor: g.g.row(slot).to_owned(),
                    points: voxel_downsample(&raw, voxel)?,
                },
            ))
        })
        .filter(|d: &Result<(usize, Detection)>| d.as_ref().map_or(true, |(_, d)| !d.points.is_empty()))
        .collect()
}

/// Matches every frame pair, keeps links whose clouds overlap with IoU at
/// least `config.iou_threshold`, and fuses each connected component into
/// one object. Objects are ordered by their smallest member.
pub fn build_map_pairwise(
    frames: &[Frame],
    matcher: &MatcherConfig,
    alpha: DustbinParam,
    config: &FusionConfig,
) -> Result<PairwiseMap> {
    config.validate()?;
    matcher.validate()?;
    let per_frame: Vec<Vec<(usize, Detection)>> = frames
        .iter()
        .map(|f| frame_detections(f, config.voxel_size))
        .collect::<Result<_>>()?;
    let descriptors: Vec<_> = frames
        .iter()
        .map(|f| aggregate_sum(&f.features, &f.masks))
        .collect::<Result<_>>()?;
    let det_of = |f: usize, slot: usize| per_frame[f].iter().find(|(s, _)| *s == slot).map(|(_, d)| d);

    let mut links = Vec::new();
    for fa in 0..frames.len() {
        for fb in fa + 1..frames.len() {
            let m = match_segments(&descriptors[fa], &descriptors[fb], matcher, alpha)?;
            for (i, j, _) in m.result.matches() {
                let (Some(da), Some(db)) = (det_of(fa, i), det_of(fb, j)) else {
                    continue;
                };
                let iou = pointcloud_iou(&da.points, &db.points, config.iou_voxel_size)?;
                links.push(Link {
                    a: (fa, i),
                    b: (fb, j),
                    iou,
                    accepted: iou >= config.iou_threshold,
                });
            }
        }
    }
    links.sort_by_key(|l| (l.a, l.b));

    let nodes: Vec<Node> = per_frame
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().map(move |(s, _)| (f, *s)))
        .collect();
    let index: HashMap<Node, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let mut uf = UnionFind((0..nodes.len()).collect());
    for l in links.iter().filter(|l| l.accepted) {
        uf.union(index[&l.a], index[&l.b]);
    }
    let mut groups: BTreeMap<usize, Vec<Node>> = BTreeMap::new();
    for (k, &n) in nodes.iter().enumerate() {
        groups.entry(uf.find(k)).or_default().push(n);
    }

    let mut objects = Vec::with_capacity(groups.len());
    let mut members = Vec::with_capacity(groups.len());
    for group in groups.into_values() {
        let mut it = group.iter().map(|&(f, s)| det_of(f, s).expect("node has a detection"));
        let mut obj = MapObject::from_detection(it.next().expect("non-empty component"), config.voxel_size)?;
        for d in it {
            obj = fuse(&obj, d, config.voxel_size)?;
        }
        objects.push(obj);
        members.push(group);
    }
    Ok(PairwiseMap {
        objects,
        members,
        links,
    })
}

/// Ground-truth instances of a labelled sequence: for each object id, the
/// union of all its back-projected masks, voxel-downsampled.
pub fn gt_instances(frames: &[Frame], voxel: f64) -> Result<Vec<(usize, PointCloud)>> {
    let mut by_id: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
    for (k, f) in frames.iter().enumerate() {
        let ids = f
            .object_ids
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("frame {k} has no object ids")))?;
        for (slot, id) in ids.iter().enumerate() {
            if let Some(id) = id {
                let pc = backproject(&f.masks, slot, &f.depth, &f.intrinsics, &f.pose)?;
                by_id.entry(*id).or_default().extend(pc.0);
            }
        }
    }
    by_id
        .into_iter()
        .map(|(id, pts)| Ok((id, voxel_downsample(&PointCloud(pts), voxel)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap: f64,
    pub ap50: f64,
    /// `(threshold, AP)` for 0.50, 0.55, ..., 0.95.
    pub per_threshold: Vec<(f64, f64)>,
}

/// Class-agnostic AP. Predictions are ranked by `scores`; at each IoU
/// threshold prediction/gt pairs are matched greedily by descending
/// voxel-occupancy IoU, each side at most once.
pub fn eval_instance_ap(pred: &[PointCloud], scores: &[f64], gt: &[PointCloud], voxel: f64) -> Result<ApReport> {
    ensure!(!gt.is_empty(), "ground-truth map is empty");
    ensure!(pred.len() == scores.len(), "{} predictions but {} scores", pred.len(), scores.len());
    let occ_p: Vec<_> = pred.iter().map(|p| occupancy(p, voxel)).collect();
    let occ_g: Vec<_> = gt.iter().map(|g| occupancy(g, voxel)).collect();
    let mut pairs = Vec::new();
    for (i, p) in occ_p.iter().enumerate() {
        for (j, g) in occ_g.iter().enumerate() {
            let inter = p.intersection(g).count();
            if inter > 0 {
                pairs.push((inter as f64 / p.union(g).count() as f64, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut per_threshold = Vec::with_capacity(10);
    for step in 0..10 {
        let t = 0.5 + 0.05 * step as f64;
        let mut tp = vec![false; pred.len()];
        let mut gt_used = vec![false; gt.len()];
        for &(iou, i, j) in &pairs {
            if iou + 1e-12 < t {
                break;
            }
            if !tp[i] && !gt_used[j] {
                tp[i] = true;
                gt_used[j] = true;
            }
        }
        let preds: Vec<ScoredPrediction> = (0..pred.len())
            .map(|i| ScoredPrediction {
                source: i,
                target: 0,
                score: scores[i],
                is_correct: tp[i],
            })
            .collect();
        per_threshold.push((t, auprc(&preds, gt.len())?));
    }
    Ok(ApReport {
        ap: per_threshold.iter().map(|(_, a)| a).sum::<f64>() / per_threshold.len() as f64,
        ap50: per_threshold[0].1,
        per_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapObjectJson {
    pub object_id: usize,
    pub descriptor: Vec<f64>,
    pub n: usize,
    pub points: String,
}

/// Writes `object_<k>.sgt` (an `N x 3` point tensor) per object and an
/// `objects.json` index.
pub fn write_map(dir: &Path, objects: &[MapObject]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut index = Vec::with_capacity(objects.len());
    for (k, o) in objects.iter().enumerate() {
        let name = format!("object_{k:03}.sgt");
        write_tensor_file(&dir.join(&name), &o.points.to_tensor()?)?;
        index.push(MapObjectJson {
            object_id: k,
            descriptor: o.descriptor().to_vec(),
            n: o.n,
            points: name,
        });
    }
    write_json(&dir.join("objects.json"), &index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array2};

    fn brute_nn(c: &PointCloud, r: &PointCloud, tol: f64) -> f64 {
        let hits = c.0.iter().filter(|p| r.0.iter().any(|q| dist2(p, q) <= tol * tol)).count();
        hits as f64 / c.len() as f64
    }

    #[test]
    fn backproject_examples() {
        let masks = MaskSet::from_masks(1, 1, Array2::ones((1, 1))).unwrap();
        let depth = DepthMap {
            data: Array2::from_elem((1, 1), 2.0),
        };
        let k = Intrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 0.0,
            cy: 0.0,
        };
        let pc = backproject(&masks, 0, &depth, &k, &CameraPose::identity()).unwrap();
        assert_eq!(pc.0, vec![[0.0, 0.0, 2.0]]);

        let mut m = Array2::zeros((1, 25));
        m[[0, 4 * 5 + 3]] = 1;
        let masks = MaskSet::from_masks(5, 5, m).unwrap();
        let depth = DepthMap {
            data: Array2::ones((5, 5)),
        };
        let unit = Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        let pc = backproject(&masks, 0, &depth, &unit, &CameraPose::identity()).unwrap();
        assert_eq!(pc.0, vec![[3.0, 4.0, 1.0]]);
    }

    #[test]
    fn zero_depth_is_skipped() {
        let masks = MaskSet::from_masks(1, 2, Array2::ones((1, 2))).unwrap();
        let depth = DepthMap {
            data: ndarray::arr2(&[[0.0, 1.0]]),
        };
        let k = Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
        };
        assert_eq!(backproject(&masks, 0, &depth, &k, &CameraPose::identity()).unwrap().len(), 1);
    }

    #[test]
    fn nn_examples() {
        let a = PointCloud(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert_eq!(nn_ratio(&a, &a, 1e-6).unwrap(), 1.0);
        let far = PointCloud(a.0.iter().map(|p| [p[0] + 0.1, p[1], p[2]]).collect());
        assert_eq!(nn_ratio(&a, &far, 0.01).unwrap(), 0.0);
        assert_eq!(nn_ratio(&a, &PointCloud::default(), 0.01).unwrap(), 0.0);
        assert!(nn_ratio(&PointCloud::default(), &a, 0.01).is_err());
        // boundary distance counts
        let b = PointCloud(vec![[0.5, 0.0, 0.0]]);
        let o = PointCloud(vec![[0.0, 0.0, 0.0]]);
        assert_eq!(nn_ratio(&b, &o, 0.5).unwrap(), brute_nn(&b, &o, 0.5));
    }

    #[test]
    fn similarity_examples() {
        let e0 = arr1(&[1.0, 0.0]);
        let e1 = arr1(&[0.0, 1.0]);
        assert_eq!(semantic_sim(&e0, &e0).unwrap(), 1.0);
        assert_eq!(semantic_sim(&e0, &e1).unwrap(), 0.5);
        assert_eq!(semantic_sim(&e0, &(-&e0)).unwrap(), 0.0);
        assert!(semantic_sim(&e0, &arr1(&[0.0, 0.0])).is_err());
        assert!((fused_sim(1.0, 0.0, 0.3) - 0.3).abs() < 1e-15);
        assert!((fused_sim(0.8, 0.8, 0.5) - 0.8).abs() < 1e-15);
        assert!((fused_sim(0.0, 1.0, 0.1) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn fuse_examples() {
        let obj = |f: Array1<f64>| MapObject {
            mean_descriptor: f,
            points: PointCloud(vec![[0.0; 3]]),
            n: 1,
        };
        let det = |f: Array1<f64>| Detection {
            descriptor: f,
            points: PointCloud(vec![[1.0; 3]]),
        };
        let same = fuse(&obj(arr1(&[0.6, 0.8])), &det(arr1(&[0.6, 0.8])), 0.01).unwrap();
        assert_eq!(same.descriptor(), arr1(&[0.6, 0.8]));
        assert_eq!(same.n, 2);
        assert_eq!(same.points.len(), 2);
        let mixed = fuse(&obj(arr1(&[1.0, 0.0])), &det(arr1(&[0.0, 1.0])), 0.01).unwrap();
        assert_eq!(mixed.mean_descriptor, arr1(&[0.5, 0.5]));
    }

    #[test]
    fn downsample_examples() {
        let v = 0.1;
        let two = PointCloud(vec![[0.02, 0.02, 0.02], [0.03, 0.02, 0.02]]);
        let out = voxel_downsample(&two, v).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.0[0][0] - 0.025).abs() < 1e-15);
        let spread = PointCloud(vec![[0.05, 0.05, 0.05], [0.55, 0.05, 0.05], [0.05, 0.55, 0.05]]);
        assert_eq!(voxel_downsample(&spread, v).unwrap().len(), 3);
    }

    #[test]
    fn iou_examples() {
        let a = PointCloud(vec![[0.01, 0.01, 0.01], [0.11, 0.01, 0.01]]);
        let half = PointCloud(vec![[0.01, 0.01, 0.01]]);
        let far = PointCloud(vec![[5.0, 5.0, 5.0]]);
        assert_eq!(pointcloud_iou(&a, &a, 0.1).unwrap(), 1.0);
        assert_eq!(pointcloud_iou(&a, &far, 0.1).unwrap(), 0.0);
        assert_eq!(pointcloud_iou(&a, &half, 0.1).unwrap(), 0.5);
        assert_eq!(pointcloud_iou(&PointCloud::default(), &PointCloud::default(), 0.1).unwrap(), 0.0);
    }

    fn square(x0: f64, n: usize) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push([x0 + i as f64 * 0.01 + 0.005, j as f64 * 0.01 + 0.005, 0.005]);
            }
        }
        PointCloud(pts)
    }

    #[test]
    fn association_examples() {
        let cfg = FusionConfig {
            sim_threshold: 0.96,
            ..Default::default()
        };
        let d = Detection {
            descriptor: arr1(&[1.0, 0.0]),
            points: square(0.0, 5),
        };
        assert_eq!(greedy_associate(std::slice::from_ref(&d), &[], &cfg).unwrap(), vec![Association::New]);

        // semantic 0.9 with blend 0.3 and full overlap: 0.3*0.9 + 0.7 = 0.97.
        let c = 2.0 * 0.9 - 1.0;
        let obj = MapObject {
            mean_descriptor: arr1(&[c, (1.0f64 - c * c).sqrt()]),
            points: square(0.0, 5),
            n: 1,
        };
        let out = greedy_associate(std::slice::from_ref(&d), std::slice::from_ref(&obj), &cfg).unwrap();
        match out[0] {
            Association::Merge { object, similarity } => {
                assert_eq!(object, 0);
                assert!((similarity - 0.97).abs() < 1e-12);
            }
            _ => panic!("expected a merge"),
        }

        // Half the detection's points near the object: s_geo = 0.5, so
        // 0.3 * 1.0 + 0.7 * 0.5 = 0.65 < 0.9.
        let obj2 = MapObject {
            mean_descriptor: arr1(&[1.0, 0.0]),
            points: square(0.0, 4),
            n: 1,
        };
        let det2 = Detection {
            descriptor: arr1(&[1.0, 0.0]),
            points: PointCloud(vec![[0.005, 0.005, 0.005], [0.035, 0.035, 0.005], [0.2, 0.005, 0.005], [0.3, 0.0, 0.005]]),
        };
        let cfg90 = FusionConfig::default();
        assert_eq!(greedy_associate(&[det2], &[obj2], &cfg90).unwrap(), vec![Association::New]);

        // No bounding-box overlap: never a candidate.
        let far = Detection {
            descriptor: arr1(&[1.0, 0.0]),
            points: square(3.0, 3),
        };
        assert_eq!(greedy_associate(&[far], &[obj], &cfg).unwrap(), vec![Association::New]);
    }

    #[test]
    fn ap_examples() {
        let g: Vec<PointCloud> = (0..4).map(|k| square(k as f64, 20)).collect();
        let scores = vec![1.0; 4];
        let perfect = eval_instance_ap(&g, &scores, &g, 0.05).unwrap();
        assert_eq!((perfect.ap, perfect.ap50), (1.0, 1.0));

        let half = eval_instance_ap(&g[..2], &scores[..2], &g, 0.05).unwrap();
        assert_eq!(half.ap50, 0.5);

        // At 1 cm pitch every point is its own cell. Splitting each
        // 400-cell instance into two 199-cell halves gives IoU 0.4975.
        let mut halves = Vec::new();
        for gi in &g {
            halves.push(PointCloud(gi.0[..199].to_vec()));
            halves.push(PointCloud(gi.0[201..].to_vec()));
        }
        let r = eval_instance_ap(&halves, &vec![1.0; halves.len()], &g, 0.01).unwrap();
        assert_eq!(r.ap50, 0.0);
        assert_eq!(eval_instance_ap(&g, &scores, &g, 0.01).unwrap().ap50, 1.0);
        assert!(eval_instance_ap(&g, &scores, &[], 0.05).is_err());
    }
}
