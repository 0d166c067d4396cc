//! In-memory image pairs and the JSON pair manifest.
//!
//! A manifest names SGT1 tensors by path relative to the manifest file.
//! [`load_pair`] reads every referenced tensor and checks all cross-tensor
//! constraints before returning, so a [`Pair`] is always internally
//! consistent.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fsutil::{read_json, write_json, write_tensor_file};
use crate::tensor::{load_tensor, DenseTensor};

/// Upper bound on segment slots per image.
pub const MAX_SEGMENTS: usize = 100;

/// Dense per-pixel descriptors, stored as an `(H*W) x D` matrix in
/// row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    data: Array2<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, data: Array2<f64>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "feature map must be at least 1x1");
        ensure!(
            data.nrows() == height * width,
            "feature matrix has {} rows, expected {}x{}",
            data.nrows(),
            height,
            width
        );
        ensure!(data.ncols() >= 1, "feature dimension must be at least 1");
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize, dim: usize) -> Self {
        Self {
            height,
            width,
            data: Array2::zeros((height * width, dim)),
        }
    }

    /// Builds a map from an `H x W x D` f32 tensor.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let s = t.shape();
        ensure!(s.len() == 3, "feature tensor must be HxWxD, got shape {s:?}");
        let data = t.as_f32()?.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let data = Array2::from_shape_vec((s[0] * s[1], s[2]), data)
            .map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(s[0], s[1], data)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        let data = self.data.iter().map(|&x| x as f32).collect();
        DenseTensor::from_f32(vec![self.height, self.width, self.dim()], data)
            .expect("feature map shape is valid by construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn pixel(&self, y: usize, x: usize) -> ArrayView1<'_, f64> {
        self.data.row(y * self.width + x)
    }

    /// The flattened `(H*W) x D` matrix.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }
}

/// `M` binary masks at pixel resolution with per-slot validity.
///
/// A slot with `valid = false` is padding; its mask must be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    height: usize,
    width: usize,
    masks: Array2<u8>,
    valid: Vec<bool>,
}

impl MaskSet {
    pub fn new(height: usize, width: usize, masks: Array2<u8>, valid: Vec<bool>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "mask set must be at least 1x1");
        ensure!(
            masks.ncols() == height * width,
            "mask matrix has {} columns, expected {}x{}",
            masks.ncols(),
            height,
            width
        );
        ensure!(
            valid.len() == masks.nrows(),
            "validity list has {} entries for {} mask slots",
            valid.len(),
            masks.nrows()
        );
        ensure!(
            masks.nrows() <= MAX_SEGMENTS,
            "{} mask slots exceed the bound of {MAX_SEGMENTS}",
            masks.nrows()
        );
        ensure!(masks.iter().all(|&v| v <= 1), "mask values must be 0 or 1");
        for (m, &ok) in valid.iter().enumerate() {
            if !ok {
                ensure!(
                    masks.row(m).iter().all(|&v| v == 0),
                    "padded mask slot {m} is not empty"
                );
            }
        }
        Ok(Self {
            height,
            width,
            masks,
            valid,
        })
    }

    /// All slots valid.
    pub fn from_masks(height: usize, width: usize, masks: Array2<u8>) -> Result<Self> {
        let valid = vec![true; masks.nrows()];
        Self::new(height, width, masks, valid)
    }

    /// Builds a mask set from a label image: pixel value `k` (< `count`)
    /// belongs to slot `k`, anything else to no slot.
    pub fn from_labels(height: usize, width: usize, labels: &[usize], count: usize) -> Result<Self> {
        ensure!(labels.len() == height * width, "label image size mismatch");
        let mut masks = Array2::zeros((count, height * width));
        for (p, &l) in labels.iter().enumerate() {
            if l < count {
                masks[[l, p]] = 1;
            }
        }
        Self::from_masks(height, width, masks)
    }

    pub fn from_tensor(t: &DenseTensor, valid: Vec<bool>) -> Result<Self> {
        let s = t.shape();
        ensure!(s.len() == 3, "mask tensor must be MxHxW, got shape {s:?}");
        let masks = Array2::from_shape_vec((s[0], s[1] * s[2]), t.as_u8()?.to_vec())
            .map_err(|e| Error::Validation(e.to_string()))?;
        Self::new(s[1], s[2], masks, valid)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_u8(
            vec![self.len(), self.height, self.width],
            self.masks.iter().copied().collect(),
        )
        .expect("mask shape is valid by construction")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of slots, including padding.
    pub fn len(&self) -> usize {
        self.masks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn contains(&self, slot: usize, y: usize, x: usize) -> bool {
        self.masks[[slot, y * self.width + x]] == 1
    }

    pub fn pixel_count(&self, slot: usize) -> usize {
        self.masks.row(slot).iter().filter(|&&v| v == 1).count()
    }

    /// Raw `M x (H*W)` 0/1 matrix.
    pub fn masks(&self) -> &Array2<u8> {
        &self.masks
    }

    /// The masks as an `M x (H*W)` float matrix, ready for aggregation.
    pub fn as_matrix(&self) -> Array2<f64> {
        self.masks.mapv(f64::from)
    }

    /// Lowest slot index whose mask contains pixel `(y, x)`.
    pub fn first_containing(&self, y: usize, x: usize) -> Option<usize> {
        let p = y * self.width + x;
        (0..self.len()).find(|&m| self.masks[[m, p]] == 1)
    }
}

/// Per-pixel depth in metres, `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub data: Array2<f64>,
}

impl DepthMap {
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let s = t.shape();
        ensure!(s.len() == 2, "depth tensor must be HxW, got shape {s:?}");
        let data = t.as_f32()?.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let data = Array2::from_shape_vec((s[0], s[1]), data).map_err(|e| Error::Validation(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_f32(
            vec![self.height(), self.width()],
            self.data.iter().map(|&x| x as f32).collect(),
        )
        .expect("depth shape is valid by construction")
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Tolerance for orthonormality and unit determinant of rotations.
pub const ROTATION_TOL: f64 = 1e-6;

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    ensure!(r.iter().all(|v| v.is_finite()), "rotation has non-finite entries");
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    ensure!(err <= ROTATION_TOL, "rotation is not orthonormal (max error {err:e})");
    let det = r.determinant();
    ensure!((det - 1.0).abs() <= ROTATION_TOL, "rotation determinant is {det}, expected +1");
    Ok(())
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        ensure!(translation.iter().all(|v| v.is_finite()), "translation has non-finite entries");
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.fx > 0.0 && self.fy > 0.0,
            "focal lengths must be positive (fx = {}, fy = {})",
            self.fx,
            self.fy
        );
        ensure!(self.cx.is_finite() && self.cy.is_finite(), "principal point must be finite");
        Ok(())
    }
}

/// Ground-truth correspondences between the slots of two images.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtAssignment {
    pub matches: Vec<(usize, usize)>,
    #[serde(default)]
    pub unmatched_a: Vec<usize>,
    #[serde(default)]
    pub unmatched_b: Vec<usize>,
}

impl GtAssignment {
    /// Checks index bounds and that every index is used at most once on
    /// its side.
    pub fn validate(&self, count_a: usize, count_b: usize) -> Result<()> {
        let mut seen_a = HashSet::new();
        let mut seen_b = HashSet::new();
        for &(i, j) in &self.matches {
            ensure!(i < count_a, "gt match ({i}, {j}) references source segment {i} >= {count_a}");
            ensure!(j < count_b, "gt match ({i}, {j}) references target segment {j} >= {count_b}");
            ensure!(seen_a.insert(i), "source segment {i} appears twice in gt");
            ensure!(seen_b.insert(j), "target segment {j} appears twice in gt");
        }
        for &i in &self.unmatched_a {
            ensure!(i < count_a, "gt unmatched source segment {i} >= {count_a}");
            ensure!(seen_a.insert(i), "source segment {i} appears twice in gt");
        }
        for &j in &self.unmatched_b {
            ensure!(j < count_b, "gt unmatched target segment {j} >= {count_b}");
            ensure!(seen_b.insert(j), "target segment {j} appears twice in gt");
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty() && self.unmatched_a.is_empty() && self.unmatched_b.is_empty()
    }

    /// gt target for each source slot, if matched.
    pub fn target_of(&self, count_a: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; count_a];
        for &(i, j) in &self.matches {
            if i < count_a {
                out[i] = Some(j);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&CameraPose> for PoseJson {
    fn from(p: &CameraPose) -> Self {
        let r = &p.rotation;
        PoseJson {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<&PoseJson> for CameraPose {
    type Error = Error;

    fn try_from(p: &PoseJson) -> Result<Self> {
        CameraPose::new(
            Matrix3::from_row_slice(&p.rotation),
            Vector3::from_column_slice(&p.translation),
        )
    }
}

/// The on-disk pair description. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub features_a: PathBuf,
    pub features_b: PathBuf,
    pub masks_a: PathBuf,
    pub masks_b: PathBuf,
    pub valid_a: Vec<bool>,
    pub valid_b: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<GtAssignment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_a: Option<PoseJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_b: Option<PoseJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_b: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<Intrinsics>,
    /// Patch-resolution backbone features (`Hp x Wp x C`), used to train
    /// the segment-feature head.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches_a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patches_b: Option<PathBuf>,
}

/// Patch-level features `Hp x Wp x C`, stored as `(Hp*Wp) x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatures {
    pub height: usize,
    pub width: usize,
    pub data: Array2<f64>,
}

impl PatchFeatures {
    pub fn new(height: usize, width: usize, data: Array2<f64>) -> Result<Self> {
        ensure!(height >= 1 && width >= 1, "patch grid must be at least 1x1");
        ensure!(
            data.nrows() == height * width,
            "patch matrix has {} rows, expected {}x{}",
            data.nrows(),
            height,
            width
        );
        ensure!(data.ncols() >= 1, "patch channels must be at least 1");
        Ok(Self { height, width, data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let f = FeatureMap::from_tensor(t)?;
        Self::new(f.height, f.width, f.data)
    }

    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::from_f32(
            vec![self.height, self.width, self.dim()],
            self.data.iter().map(|&x| x as f32).collect(),
        )
        .expect("patch shape is valid by construction")
    }
}

/// One image of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub features: FeatureMap,
    pub masks: MaskSet,
    pub pose: Option<CameraPose>,
    pub depth: Option<DepthMap>,
    pub patches: Option<PatchFeatures>,
}

/// A fully validated image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub a: View,
    pub b: View,
    pub gt: Option<GtAssignment>,
    pub intrinsics: Option<Intrinsics>,
}

impl Pair {
    pub fn validate(&self) -> Result<()> {
        validate_view("a", &self.a)?;
        validate_view("b", &self.b)?;
        ensure!(
            self.a.features.dim() == self.b.features.dim(),
            "feature dimensions differ: features_a has {}, features_b has {}",
            self.a.features.dim(),
            self.b.features.dim()
        );
        if let (Some(pa), Some(pb)) = (&self.a.patches, &self.b.patches) {
            ensure!(pa.dim() == pb.dim(), "patch channel counts differ between views");
        }
        if let Some(gt) = &self.gt {
            gt.validate(self.a.masks.len(), self.b.masks.len())?;
            let va = self.a.masks.valid();
            let vb = self.b.masks.valid();
            for &(i, j) in &gt.matches {
                ensure!(va[i] && vb[j], "gt match ({i}, {j}) references a padded slot");
            }
            for &i in &gt.unmatched_a {
                ensure!(va[i], "gt unmatched source {i} is a padded slot");
            }
            for &j in &gt.unmatched_b {
                ensure!(vb[j], "gt unmatched target {j} is a padded slot");
            }
        }
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        Ok(())
    }
}

fn validate_view(side: &str, v: &View) -> Result<()> {
    let (h, w) = (v.features.height(), v.features.width());
    ensure!(
        v.masks.height() == h && v.masks.width() == w,
        "masks_{side} is {}x{} but features_{side} is {h}x{w}",
        v.masks.height(),
        v.masks.width()
    );
    if let Some(d) = &v.depth {
        ensure!(
            d.height() == h && d.width() == w,
            "depth_{side} is {}x{} but features_{side} is {h}x{w}",
            d.height(),
            d.width()
        );
    }
    ensure!(
        v.features.matrix().iter().all(|x| x.is_finite()),
        "features_{side} contains non-finite values"
    );
    Ok(())
}

pub(crate) fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[allow(clippy::too_many_arguments)]
fn load_view(
    base: &Path,
    side: &str,
    features: &Path,
    masks: &Path,
    valid: &[bool],
    pose: Option<&PoseJson>,
    depth: Option<&PathBuf>,
    patches: Option<&PathBuf>,
) -> Result<View> {
    let features = FeatureMap::from_tensor(&load_tensor(&resolve(base, features))?)
        .map_err(|e| prefix(e, &format!("features_{side}")))?;
    let masks = MaskSet::from_tensor(&load_tensor(&resolve(base, masks))?, valid.to_vec())
        .map_err(|e| prefix(e, &format!("masks_{side}")))?;
    let pose = pose.map(CameraPose::try_from).transpose().map_err(|e| prefix(e, &format!("pose_{side}")))?;
    let depth = depth
        .map(|p| load_tensor(&resolve(base, p)).and_then(|t| DepthMap::from_tensor(&t)))
        .transpose()
        .map_err(|e| prefix(e, &format!("depth_{side}")))?;
    let patches = patches
        .map(|p| load_tensor(&resolve(base, p)).and_then(|t| PatchFeatures::from_tensor(&t)))
        .transpose()
        .map_err(|e| prefix(e, &format!("patches_{side}")))?;
    Ok(View {
        features,
        masks,
        pose,
        depth,
        patches,
    })
}

pub(crate) fn prefix(e: Error, what: &str) -> Error {
    match e {
        Error::Validation(m) => Error::Validation(format!("{what}: {m}")),
        Error::Format(m) => Error::Format(format!("{what}: {m}")),
        other => other,
    }
}

/// Loads and validates the pair described by the manifest at `path`.
pub fn load_pair(path: &Path) -> Result<Pair> {
    let manifest: PairManifest = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let a = load_view(
        base,
        "a",
        &manifest.features_a,
        &manifest.masks_a,
        &manifest.valid_a,
        manifest.pose_a.as_ref(),
        manifest.depth_a.as_ref(),
        manifest.patches_a.as_ref(),
    )?;
    let b = load_view(
        base,
        "b",
        &manifest.features_b,
        &manifest.masks_b,
        &manifest.valid_b,
        manifest.pose_b.as_ref(),
        manifest.depth_b.as_ref(),
        manifest.patches_b.as_ref(),
    )?;
    let pair = Pair {
        a,
        b,
        gt: manifest.gt,
        intrinsics: manifest.intrinsics,
    };
    pair.validate()?;
    Ok(pair)
}

/// Writes `pair` as `<dir>/<stem>.json` plus one SGT1 file per tensor and
/// returns the manifest path.
pub fn save_pair(pair: &Pair, dir: &Path, stem: &str) -> Result<PathBuf> {
    pair.validate()?;
    let name = |what: &str| PathBuf::from(format!("{stem}.{what}.sgt"));
    let put = |what: &str, t: &DenseTensor| -> Result<PathBuf> {
        let rel = name(what);
        write_tensor_file(&dir.join(&rel), t)?;
        Ok(rel)
    };
    let manifest = PairManifest {
        features_a: put("features_a", &pair.a.features.to_tensor())?,
        features_b: put("features_b", &pair.b.features.to_tensor())?,
        masks_a: put("masks_a", &pair.a.masks.to_tensor())?,
        masks_b: put("masks_b", &pair.b.masks.to_tensor())?,
        valid_a: pair.a.masks.valid().to_vec(),
        valid_b: pair.b.masks.valid().to_vec(),
        gt: pair.gt.clone(),
        pose_a: pair.a.pose.as_ref().map(PoseJson::from),
        pose_b: pair.b.pose.as_ref().map(PoseJson::from),
        depth_a: pair.a.depth.as_ref().map(|d| put("depth_a", &d.to_tensor())).transpose()?,
        depth_b: pair.b.depth.as_ref().map(|d| put("depth_b", &d.to_tensor())).transpose()?,
        intrinsics: pair.intrinsics,
        patches_a: pair.a.patches.as_ref().map(|p| put("patches_a", &p.to_tensor())).transpose()?,
        patches_b: pair.b.patches.as_ref().map(|p| put("patches_b", &p.to_tensor())).transpose()?,
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn view(h: usize, w: usize) -> View {
        let mut masks = Array2::zeros((2, h * w));
        masks[[0, 0]] = 1;
        masks[[1, 1]] = 1;
        View {
            features: FeatureMap::zeros(h, w, 3),
            masks: MaskSet::from_masks(h, w, masks).unwrap(),
            pose: None,
            depth: None,
            patches: None,
        }
    }

    #[test]
    fn happy_path_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pair = Pair {
            a: view(32, 32),
            b: view(32, 32),
            gt: Some(GtAssignment {
                matches: vec![(0, 1)],
                unmatched_a: vec![1],
                unmatched_b: vec![0],
            }),
            intrinsics: None,
        };
        let path = save_pair(&pair, dir.path(), "p").unwrap();
        assert_eq!(load_pair(&path).unwrap(), pair);
    }

    #[test]
    fn inconsistent_mask_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let pair = Pair {
            a: view(32, 32),
            b: view(32, 32),
            gt: None,
            intrinsics: None,
        };
        let path = save_pair(&pair, dir.path(), "p").unwrap();
        let small = view(16, 16).masks.to_tensor();
        write_tensor_file(&dir.path().join("p.masks_a.sgt"), &small).unwrap();
        let err = load_pair(&path).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)), "{msg}");
        assert!(msg.contains("masks_a") && msg.contains("features_a"), "{msg}");
    }

    #[test]
    fn gt_out_of_range_is_rejected() {
        let mut pair = Pair {
            a: view(4, 4),
            b: view(4, 4),
            gt: Some(GtAssignment {
                matches: vec![(0, 2)],
                ..Default::default()
            }),
            intrinsics: None,
        };
        assert!(matches!(pair.validate(), Err(Error::Validation(_))));
        pair.gt = Some(GtAssignment {
            matches: vec![(0, 0), (0, 1)],
            ..Default::default()
        });
        assert!(pair.validate().is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_pair(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(err.is_io());
    }

    #[test]
    fn padded_slot_must_be_empty() {
        let mut masks = Array2::zeros((2, 4));
        masks[[1, 0]] = 1;
        assert!(MaskSet::new(2, 2, masks, vec![true, false]).is_err());
    }

    #[test]
    fn pose_json_round_trip() {
        let pose = CameraPose::new(
            Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0),
            Vector3::new(1.0, 2.0, 3.0),
        )
        .unwrap();
        let json = PoseJson::from(&pose);
        assert_eq!(json.rotation[1], -1.0);
        assert_eq!(CameraPose::try_from(&json).unwrap(), pose);
        let bad = PoseJson {
            rotation: [2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            translation: [0.0; 3],
        };
        assert!(CameraPose::try_from(&bad).is_err());
    }
}
