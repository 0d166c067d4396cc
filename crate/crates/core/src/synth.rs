//! Seeded synthetic pairs and frame sequences with exact ground truth.
//!
//! Each segment owns a latent unit vector. A view renders per-pixel
//! features as the latent of the pixel's owner plus Gaussian noise, and
//! patch features as the average of those noisy pixels over each `s x s`
//! patch, so patches carry no information the pixels lack. The
//! second view of a pair re-draws the layout, permutes the segments and
//! swaps a fraction of them for segments only it sees.
//!
//! Optionally the latent carries a view-dependent nuisance: the last
//! `appearance_dims` coordinates are re-drawn per view, scaled by
//! `appearance_scale`. Raw cosine similarity suffers from it; a learned
//! head can project it away.
//!
//! Sequences come from a ray-cast world of flat boxes on a floor, seen by
//! a camera that sweeps back and forth so objects leave and re-enter view.

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use ndarray::{Array1, Array2};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::pair::{
    CameraPose, DepthMap, FeatureMap, GtAssignment, Intrinsics, MaskSet, Pair, PatchFeatures, View, MAX_SEGMENTS,
};
use crate::sequence::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Guillotine partition into axis-aligned rectangles.
    Rectangles,
    /// Nearest-seed partition.
    Voronoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub layout: Layout,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    /// Fraction of segments visible in one view only.
    pub drop_fraction: f64,
    /// Geodesic angle between the two camera rotations, degrees.
    pub rotation_deg: [f64; 2],
    pub patch_size: usize,
    pub appearance_dims: usize,
    pub appearance_scale: f64,
    /// Mask slots per view; slots past the segment count are padding.
    pub slots: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            min_segments: 6,
            max_segments: 12,
            layout: Layout::Voronoi,
            latent_dim: 32,
            noise_sigma: 0.5,
            drop_fraction: 0.2,
            rotation_deg: [0.0, 180.0],
            patch_size: 2,
            appearance_dims: 0,
            appearance_scale: 0.0,
            slots: 12,
            seed: 42,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height >= 8 && self.width >= 8,
            "image must be at least 8x8, got {}x{}",
            self.height,
            self.width
        );
        ensure!(
            1 <= self.min_segments && self.min_segments <= self.max_segments,
            "segment range [{}, {}] is empty",
            self.min_segments,
            self.max_segments
        );
        ensure!(
            self.max_segments <= self.slots && self.slots <= MAX_SEGMENTS,
            "need max_segments <= slots <= {MAX_SEGMENTS}, got {} and {}",
            self.max_segments,
            self.slots
        );
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise sigma must be >= 0"
        );
        ensure!(
            (0.0..1.0).contains(&self.drop_fraction),
            "drop fraction must be in [0, 1), got {}",
            self.drop_fraction
        );
        let [lo, hi] = self.rotation_deg;
        ensure!(
            0.0 <= lo && lo <= hi && hi <= 180.0,
            "rotation range [{lo}, {hi}] must lie in [0, 180]"
        );
        ensure!(
            self.patch_size >= 1 && self.height.is_multiple_of(self.patch_size) && self.width.is_multiple_of(self.patch_size),
            "patch size {} must divide the image size",
            self.patch_size
        );
        ensure!(
            self.appearance_dims < self.latent_dim,
            "appearance dims must leave room for identity dims"
        );
        ensure!(
            self.appearance_scale >= 0.0 && self.appearance_scale.is_finite(),
            "appearance scale must be >= 0"
        );
        Ok(())
    }

    fn dropped(&self, m: usize) -> usize {
        (self.drop_fraction * m as f64).round() as usize
    }
}

/// A generated pair plus the clean per-slot latents each view rendered
/// (zero rows for padding).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub pair: Pair,
    pub latents_a: Array2<f64>,
    pub latents_b: Array2<f64>,
}

fn gaussian_unit(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q = gaussian_unit(rng, 4);
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
    q.to_rotation_matrix().into_inner()
}

/// Labels every pixel with a region index in `0..m`.
fn layout_labels(rng: &mut ChaCha8Rng, layout: Layout, h: usize, w: usize, m: usize) -> Result<Vec<usize>> {
    match layout {
        Layout::Voronoi => {
            if m > h * w {
                return Err(Error::Generation(format!("{m} Voronoi cells do not fit in {h}x{w}")));
            }
            let seeds: Vec<(i64, i64)> = index::sample(rng, h * w, m)
                .into_iter()
                .map(|p| ((p / w) as i64, (p % w) as i64))
                .collect();
            let mut labels = vec![0; h * w];
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    let mut best = (i64::MAX, 0);
                    for (k, &(sy, sx)) in seeds.iter().enumerate() {
                        let d = (y - sy).pow(2) + (x - sx).pow(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    labels[y as usize * w + x as usize] = best.1;
                }
            }
            Ok(labels)
        }
        Layout::Rectangles => {
            const MIN_SIDE: usize = 2;
            // (y0, x0, h, w)
            let mut rects = vec![(0, 0, h, w)];
            while rects.len() < m {
                let splittable = |r: &(usize, usize, usize, usize)| r.2 >= 2 * MIN_SIDE || r.3 >= 2 * MIN_SIDE;
                let pick = rects
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| splittable(r))
                    .max_by(|(i, a), (j, b)| (a.2 * a.3).cmp(&(b.2 * b.3)).then(j.cmp(i)))
                    .map(|(i, _)| i)
                    .ok_or_else(|| Error::Generation(format!("{m} rectangles do not fit in {h}x{w}")))?;
                let (y0, x0, rh, rw) = rects[pick];
                let split_rows = rh >= 2 * MIN_SIDE && (rh >= rw || rw < 2 * MIN_SIDE);
                if split_rows {
                    let cut = rng.random_range(MIN_SIDE..=rh - MIN_SIDE);
                    rects[pick] = (y0, x0, cut, rw);
                    rects.push((y0 + cut, x0, rh - cut, rw));
                } else {
                    let cut = rng.random_range(MIN_SIDE..=rw - MIN_SIDE);
                    rects[pick] = (y0, x0, rh, cut);
                    rects.push((y0, x0 + cut, rh, rw - cut));
                }
            }
            rects.shuffle(rng);
            let mut labels = vec![0; h * w];
            for (k, &(y0, x0, rh, rw)) in rects.iter().enumerate() {
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        labels[y * w + x] = k;
                    }
                }
            }
            Ok(labels)
        }
    }
}

/// Renders one view: `segments[slot]` is the latent row for each region.
fn render_view(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    labels: &[usize],
    latents: &Array2<f64>,
) -> Result<(FeatureMap, PatchFeatures, MaskSet)> {
    let (h, w, d) = (cfg.height, cfg.width, cfg.latent_dim);
    let mut pixels = Array2::zeros((h * w, d));
    for (p, &l) in labels.iter().enumerate() {
        let mut row = pixels.row_mut(p);
        for c in 0..d {
            row[c] = latents[[l, c]] + cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let s = cfg.patch_size;
    let (hp, wp) = (h / s, w / s);
    let mut patches = Array2::zeros((hp * wp, d));
    for py in 0..hp {
        for px in 0..wp {
            let mut row = patches.row_mut(py * wp + px);
            for dy in 0..s {
                for dx in 0..s {
                    row += &pixels.row((py * s + dy) * w + px * s + dx);
                }
            }
            row /= (s * s) as f64;
        }
    }
    let masks = MaskSet::from_labels(h, w, labels, cfg.slots)?;
    let count = latents.nrows();
    let valid = (0..cfg.slots).map(|k| k < count).collect();
    let masks = MaskSet::new(h, w, masks.masks().clone(), valid)?;
    Ok((FeatureMap::new(h, w, pixels)?, PatchFeatures::new(hp, wp, patches)?, masks))
}

/// Generates a pair with ground truth; deterministic in `seed`.
pub fn gen_pair(cfg: &SceneConfig, seed: u64) -> Result<SynthPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(cfg.min_segments..=cfg.max_segments);
    let k = cfg.dropped(m);
    let id_dims = cfg.latent_dim - cfg.appearance_dims;
    let identities: Vec<Array1<f64>> = (0..m + k).map(|_| gaussian_unit(&mut rng, id_dims)).collect();

    let mut dropped: Vec<usize> = index::sample(&mut rng, m, k).into_vec();
    dropped.sort_unstable();
    let shared: Vec<usize> = (0..m).filter(|i| dropped.binary_search(i).is_err()).collect();
    let mut b_ids: Vec<usize> = shared.iter().copied().chain(m..m + k).collect();
    b_ids.shuffle(&mut rng);

    let mut view_latents = |ids: &[usize]| -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), cfg.latent_dim));
        for (slot, &id) in ids.iter().enumerate() {
            let mut row = out.row_mut(slot);
            row.slice_mut(ndarray::s![..id_dims]).assign(&identities[id]);
            if cfg.appearance_dims > 0 {
                let u = gaussian_unit(&mut rng, cfg.appearance_dims) * cfg.appearance_scale;
                row.slice_mut(ndarray::s![id_dims..]).assign(&u);
            }
            let n = row.dot(&row).sqrt();
            row /= n;
        }
        out
    };
    let a_ids: Vec<usize> = (0..m).collect();
    let lat_a = view_latents(&a_ids);
    let lat_b = view_latents(&b_ids);

    let labels_a = layout_labels(&mut rng, cfg.layout, cfg.height, cfg.width, m)?;
    let labels_b = layout_labels(&mut rng, cfg.layout, cfg.height, cfg.width, m)?;
    let (fa, pa, ma) = render_view(&mut rng, cfg, &labels_a, &lat_a)?;
    let (fb, pb, mb) = render_view(&mut rng, cfg, &labels_b, &lat_b)?;

    let slot_in_b = |id: usize| b_ids.iter().position(|&x| x == id);
    let gt = GtAssignment {
        matches: shared.iter().map(|&i| (i, slot_in_b(i).expect("shared id is in b"))).collect(),
        unmatched_a: dropped,
        unmatched_b: (m..m + k).map(|id| slot_in_b(id).expect("new id is in b")).collect(),
    };

    let rot_a = random_rotation(&mut rng);
    let theta = rng.random_range(cfg.rotation_deg[0]..=cfg.rotation_deg[1]).to_radians();
    let axis = gaussian_unit(&mut rng, 3);
    let rel = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(axis[0], axis[1], axis[2])), theta);
    let rot_b = rot_a * rel.into_inner();
    let mut translation = || Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let pose_a = CameraPose::new(rot_a, translation())?;
    let pose_b = CameraPose::new(rot_b, translation())?;

    let pad = |lat: Array2<f64>| {
        let mut out = Array2::zeros((cfg.slots, cfg.latent_dim));
        out.slice_mut(ndarray::s![..lat.nrows(), ..]).assign(&lat);
        out
    };
    let pair = Pair {
        a: View {
            features: fa,
            masks: ma,
            pose: Some(pose_a),
            depth: None,
            patches: Some(pa),
        },
        b: View {
            features: fb,
            masks: mb,
            pose: Some(pose_b),
            depth: None,
            patches: Some(pb),
        },
        gt: Some(gt),
        intrinsics: None,
    };
    pair.validate()?;
    Ok(SynthPair {
        pair,
        latents_a: pad(lat_a),
        latents_b: pad(lat_b),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceConfig {
    pub height: usize,
    pub width: usize,
    pub objects: usize,
    pub latent_dim: usize,
    pub noise_sigma: f64,
    /// Objects covering fewer pixels than this get no mask.
    pub min_pixels: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            objects: 6,
            latent_dim: 32,
            noise_sigma: 0.1,
            min_pixels: 30,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.height >= 8 && self.width >= 8,
            "image must be at least 8x8, got {}x{}",
            self.height,
            self.width
        );
        ensure!(
            (1..=MAX_SEGMENTS).contains(&self.objects),
            "object count must be in 1..={MAX_SEGMENTS}"
        );
        ensure!(self.latent_dim >= 1, "latent dim must be positive");
        ensure!(
            self.noise_sigma >= 0.0 && self.noise_sigma.is_finite(),
            "noise sigma must be >= 0"
        );
        Ok(())
    }
}

/// An axis-aligned box resting on the floor `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxObject {
    /// Entry distance of the ray `o + t d`, if it hits in front of `o`.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut near, mut far) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        (t0 > 0.0).then_some(t0)
    }

    fn corners(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..8).map(move |k| {
            Vector3::new(
                if k & 1 == 0 { self.min[0] } else { self.max[0] },
                if k & 2 == 0 { self.min[1] } else { self.max[1] },
                if k & 4 == 0 { self.min[2] } else { self.max[2] },
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<Frame>,
    pub objects: Vec<BoxObject>,
    /// Latent descriptor per object.
    pub latents: Array2<f64>,
}

impl SynthSequence {
    /// Ids of objects that received a mask in at least one frame.
    pub fn observed_objects(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .frames
            .iter()
            .flat_map(|f| f.object_ids.iter().flatten().flatten().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

fn place_boxes(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<BoxObject>> {
    const GAP: f64 = 0.1;
    let mut boxes: Vec<BoxObject> = Vec::with_capacity(n);
    let mut attempts = 0;
    while boxes.len() < n {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Generation(format!("could not place {n} non-overlapping boxes")));
        }
        let (sx, sy) = (rng.random_range(0.3..0.6), rng.random_range(0.3..0.6));
        // Tops stay clear of 5 cm grid planes.
        let h = rng.random_range(0.055..0.095);
        let cx = rng.random_range(-1.5..1.5);
        let cy = rng.random_range(-0.4..0.9);
        let b = BoxObject {
            min: [cx - sx / 2.0, cy - sy / 2.0, 0.0],
            max: [cx + sx / 2.0, cy + sy / 2.0, h],
        };
        let clear = boxes.iter().all(|o| {
            b.min[0] > o.max[0] + GAP || o.min[0] > b.max[0] + GAP || b.min[1] > o.max[1] + GAP || o.min[1] > b.max[1] + GAP
        });
        if clear {
            boxes.push(b);
        }
    }
    Ok(boxes)
}

/// Camera looking from `eye` at `target`: x right, y down, z forward.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<CameraPose> {
    let f = (target - eye).normalize();
    let x = f.cross(&Vector3::z()).normalize();
    let y = f.cross(&x);
    CameraPose::new(Matrix3::from_columns(&[x, y, f]), eye)
}

/// Ground point the camera looks at in frame `k`: a sweep left, centre,
/// right, centre, left, ... so objects leave and come back.
fn sweep_target(k: usize) -> Vector3<f64> {
    const STOPS: [f64; 4] = [-0.9, 0.0, 0.9, 0.0];
    Vector3::new(STOPS[k % 4], 0.3, 0.0)
}

/// Renders `frames` views of a seeded box world. Object ids are indices
/// into [`SynthSequence::objects`].
pub fn gen_sequence(cfg: &SequenceConfig, frames: usize, seed: u64) -> Result<SynthSequence> {
    cfg.validate()?;
    ensure!(frames >= 2, "a sequence needs at least 2 frames, got {frames}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxes = place_boxes(&mut rng, cfg.objects)?;
    let mut latents = Array2::zeros((cfg.objects + 1, cfg.latent_dim));
    for mut row in latents.rows_mut() {
        row.assign(&gaussian_unit(&mut rng, cfg.latent_dim));
    }
    let floor = cfg.objects;
    let (h, w) = (cfg.height, cfg.width);
    let intr = Intrinsics {
        fx: 0.8 * w as f64,
        fy: 0.8 * w as f64,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
    };

    let mut out = Vec::with_capacity(frames);
    for k in 0..frames {
        let target = sweep_target(k);
        let pose = look_at(target + Vector3::new(0.0, -0.5, 1.8), target)?;
        let eye = pose.translation;
        let mut depth = Array2::zeros((h, w));
        let mut owner = vec![usize::MAX; h * w];
        for v in 0..h {
            for u in 0..w {
                let ray = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
                let dir = pose.rotation * ray;
                let mut best = (f64::INFINITY, usize::MAX);
                if dir.z < 0.0 {
                    best = (-eye.z / dir.z, floor);
                }
                for (id, b) in boxes.iter().enumerate() {
                    if let Some(t) = b.hit(&eye, &dir) {
                        if t < best.0 {
                            best = (t, id);
                        }
                    }
                }
                if best.1 != usize::MAX {
                    depth[[v, u]] = best.0;
                    owner[v * w + u] = best.1;
                }
            }
        }

        let inside = |b: &BoxObject| {
            b.corners().all(|p| {
                let c = pose.rotation.transpose() * (p - eye);
                if c.z <= 0.0 {
                    return false;
                }
                let (u, v) = (intr.fx * c.x / c.z + intr.cx, intr.fy * c.y / c.z + intr.cy);
                (0.0..=(w - 1) as f64).contains(&u) && (0.0..=(h - 1) as f64).contains(&v)
            })
        };
        let visible: Vec<usize> = (0..cfg.objects)
            .filter(|&id| inside(&boxes[id]) && owner.iter().filter(|&&o| o == id).count() >= cfg.min_pixels)
            .collect();

        let mut masks = Array2::zeros((cfg.objects, h * w));
        let mut ids = vec![None; cfg.objects];
        for (slot, &id) in visible.iter().enumerate() {
            ids[slot] = Some(id);
            for (p, &o) in owner.iter().enumerate() {
                if o == id {
                    masks[[slot, p]] = 1;
                }
            }
        }
        let valid = (0..cfg.objects).map(|s| s < visible.len()).collect();

        let mut features = Array2::zeros((h * w, cfg.latent_dim));
        for (p, &o) in owner.iter().enumerate() {
            let mut row = features.row_mut(p);
            if o != usize::MAX {
                row.assign(&latents.row(o));
            }
            for c in 0..cfg.latent_dim {
                row[c] += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }

        let frame = Frame {
            features: FeatureMap::new(h, w, features)?,
            masks: MaskSet::new(h, w, masks, valid)?,
            depth: DepthMap { data: depth },
            pose,
            intrinsics: intr,
            object_ids: Some(ids),
        };
        frame.validate()?;
        out.push(frame);
    }
    latents = latents.slice(ndarray::s![..cfg.objects, ..]).to_owned();
    Ok(SynthSequence {
        frames: out,
        objects: boxes,
        latents,
    })
}
