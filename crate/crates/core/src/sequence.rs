//! RGB-D frame sequences for instance mapping.
//!
//! On disk a sequence is a JSON array with one entry per frame. Each entry
//! names its SGT1 tensors relative to the manifest, like a pair manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::fsutil::{read_json, write_json, write_tensor_file};
use crate::pair::{prefix, resolve, CameraPose, DepthMap, FeatureMap, Intrinsics, MaskSet, PoseJson};
use crate::tensor::load_tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub features: FeatureMap,
    pub masks: MaskSet,
    pub depth: DepthMap,
    pub pose: CameraPose,
    pub intrinsics: Intrinsics,
    /// Ground-truth object id per mask slot, when known.
    pub object_ids: Option<Vec<Option<usize>>>,
}

impl Frame {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.features.height(), self.features.width());
        ensure!(
            self.masks.height() == h && self.masks.width() == w,
            "masks are {}x{} but features are {h}x{w}",
            self.masks.height(),
            self.masks.width()
        );
        ensure!(
            self.depth.height() == h && self.depth.width() == w,
            "depth is {}x{} but features are {h}x{w}",
            self.depth.height(),
            self.depth.width()
        );
        self.intrinsics.validate()?;
        if let Some(ids) = &self.object_ids {
            ensure!(
                ids.len() == self.masks.len(),
                "{} object ids for {} mask slots",
                ids.len(),
                self.masks.len()
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub features: PathBuf,
    pub masks: PathBuf,
    pub valid: Vec<bool>,
    pub depth: PathBuf,
    pub pose: PoseJson,
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_ids: Option<Vec<Option<usize>>>,
}

pub fn load_sequence(path: &Path) -> Result<Vec<Frame>> {
    let entries: Vec<FrameEntry> = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let ctx = |what: &str| format!("frame {k} {what}");
            let frame = Frame {
                features: FeatureMap::from_tensor(&load_tensor(&resolve(base, &e.features))?)
                    .map_err(|err| prefix(err, &ctx("features")))?,
                masks: MaskSet::from_tensor(&load_tensor(&resolve(base, &e.masks))?, e.valid.clone())
                    .map_err(|err| prefix(err, &ctx("masks")))?,
                depth: DepthMap::from_tensor(&load_tensor(&resolve(base, &e.depth))?)
                    .map_err(|err| prefix(err, &ctx("depth")))?,
                pose: CameraPose::try_from(&e.pose).map_err(|err| prefix(err, &ctx("pose")))?,
                intrinsics: e.intrinsics,
                object_ids: e.object_ids.clone(),
            };
            frame.validate().map_err(|err| prefix(err, &format!("frame {k}")))?;
            Ok(frame)
        })
        .collect()
}

/// Writes `<dir>/<stem>.json` and the per-frame tensors; returns the
/// manifest path.
pub fn save_sequence(frames: &[Frame], dir: &Path, stem: &str) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        f.validate()?;
        let put = |what: &str, t| -> Result<PathBuf> {
            let rel = PathBuf::from(format!("{stem}.{k:03}.{what}.sgt"));
            write_tensor_file(&dir.join(&rel), t)?;
            Ok(rel)
        };
        entries.push(FrameEntry {
            features: put("features", &f.features.to_tensor())?,
            masks: put("masks", &f.masks.to_tensor())?,
            valid: f.masks.valid().to_vec(),
            depth: put("depth", &f.depth.to_tensor())?,
            pose: PoseJson::from(&f.pose),
            intrinsics: f.intrinsics,
            object_ids: f.object_ids.clone(),
        });
    }
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &entries)?;
    Ok(path)
}
