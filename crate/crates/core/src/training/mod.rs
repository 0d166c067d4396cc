//! Assignment loss, exact gradients through the unrolled matcher, AdamW,
//! and a desk-scale loop that trains the segment-feature head on
//! synthetic pairs.
//!
//! Only the head and the dustbin logit are learned; the patch features
//! stand in for a frozen backbone.

pub mod head;
pub mod loss;
pub mod optim;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::features::{HeadParams, HeadShape};
use crate::fsutil::{atomic_write, read_json, write_json, write_tensor_file};
use crate::matcher::{DustbinParam, MatcherConfig};
use crate::synth::{gen_pair, SceneConfig};
use crate::tensor::{load_tensor, DenseTensor};

pub use head::{batch_backward, describe, head_backward, HeadStep, TrainingPair};
pub use loss::{assignment_loss, compact_gt, loss_backward, LossGrad, PROB_FLOOR};
pub use optim::{adamw_step, cosine_lr, OptimConfig, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Synthetic pairs per epoch.
    pub train_pairs: usize,
    /// Stop after this many steps instead of running every epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub head: HeadShape,
    pub alpha_init: f64,
    pub optim: OptimConfig,
    pub matcher: MatcherConfig,
    pub scene: SceneConfig,
}

impl Default for TrainConfig {
    /// Desk-scale run: 800 pairs, batch 8, 20 epochs = 2000 steps.
    fn default() -> Self {
        let scene = SceneConfig {
            appearance_dims: 16,
            appearance_scale: 1.5,
            ..SceneConfig::default()
        };
        Self {
            epochs: 20,
            batch_size: 8,
            train_pairs: 800,
            max_steps: None,
            seed: 42,
            head: HeadShape::new(scene.latent_dim, scene.patch_size, 24),
            alpha_init: 1.0,
            optim: OptimConfig {
                lr0: 1e-3,
                ..OptimConfig::default()
            },
            matcher: MatcherConfig::default(),
            scene,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.epochs >= 1 && self.batch_size >= 1 && self.train_pairs >= 1,
            "epochs, batch size and pair count must be positive"
        );
        ensure!(
            self.head.dim_in == self.scene.latent_dim,
            "head input width {} differs from the scene latent dim {}",
            self.head.dim_in,
            self.scene.latent_dim
        );
        ensure!(
            self.head.patch_size == self.scene.patch_size,
            "head patch size {} differs from the scene patch size {}",
            self.head.patch_size,
            self.scene.patch_size
        );
        ensure!(self.alpha_init.is_finite(), "alpha must be finite");
        self.matcher.validate()?;
        self.scene.validate()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.train_pairs.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let full = self.epochs * self.steps_per_epoch();
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Deterministic list of per-pair seeds drawn from `seed`.
pub fn pair_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Generates `n` training pairs from the scene config.
pub fn synth_dataset(scene: &SceneConfig, seed: u64, n: usize) -> Result<Vec<TrainingPair>> {
    pair_seeds(seed, n)
        .into_iter()
        .map(|s| TrainingPair::from_pair(&gen_pair(scene, s)?.pair))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: HeadParams,
    pub alpha: DustbinParam,
    pub trace: Vec<TraceRow>,
}

/// Trains from a fresh initialization on pairs generated from
/// `config.scene`.
pub fn train_head(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let pairs = synth_dataset(&config.scene, config.seed, config.train_pairs)?;
    let params = HeadParams::init(config.head, config.seed)?;
    train_on(config, &pairs, params)
}

/// Runs the optimization loop on a fixed pair set. `config.scene` is not
/// consulted.
pub fn train_on(config: &TrainConfig, pairs: &[TrainingPair], mut params: HeadParams) -> Result<TrainOutcome> {
    ensure!(!pairs.is_empty(), "no training pairs");
    let total = config.total_steps();
    let mut alpha = DustbinParam {
        alpha: config.alpha_init,
    };
    let sizes = [params.w1.len(), params.b1.len(), params.w2.len(), params.b2.len(), 1];
    let mut state = OptimState::new(config.optim, total, &sizes, &[true, true, true, true, false]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut trace = Vec::with_capacity(total);

    let mut step = 0;
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if step >= total {
                break 'epochs;
            }
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let g = batch_backward(&batch, &params, alpha, &config.matcher).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("training diverged at step {step}: {m}")),
                other => other,
            })?;
            if !g.loss.is_finite() || !g.grads.max_abs().is_finite() || !g.d_alpha.is_finite() {
                return Err(Error::Numeric(format!("training diverged at step {step}: loss {}", g.loss)));
            }
            let d_alpha = [g.d_alpha];
            let grads = g.grads.slices();
            let [w1, b1, w2, b2] = params.slices_mut();
            let lr = adamw_step(
                &mut [w1, b1, w2, b2, std::slice::from_mut(&mut alpha.alpha)],
                &[grads[0], grads[1], grads[2], grads[3], &d_alpha],
                &mut state,
            )?;
            trace.push(TraceRow { step, lr, loss: g.loss });
            log::debug!("step {step} lr {lr:.3e} loss {:.4}", g.loss);
            step += 1;
        }
    }
    Ok(TrainOutcome { params, alpha, trace })
}

/// Writes the trace as CSV with header `step,lr,loss`.
pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut s = String::from("step,lr,loss\n");
    for r in trace {
        writeln!(s, "{},{},{}", r.step, r.lr, r.loss).expect("writing to a String");
    }
    atomic_write(path, s.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub dim_in: usize,
    pub hidden: usize,
    pub patch_size: usize,
    pub dim_out: usize,
    pub seed: u64,
    pub steps: usize,
    pub alpha: f64,
}

const PARAM_FILES: [&str; 4] = ["w1.sgt", "b1.sgt", "w2.sgt", "b2.sgt"];

/// Saves the head as four SGT1 tensors plus `meta.json` in `dir`.
pub fn save_checkpoint(dir: &Path, params: &HeadParams, alpha: DustbinParam, seed: u64, steps: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mat = |a: &Array2<f64>| DenseTensor::from_f64_lossy(vec![a.nrows(), a.ncols()], a.iter().copied());
    let vec = |a: &Array1<f64>| DenseTensor::from_f64_lossy(vec![a.len()], a.iter().copied());
    let tensors = [mat(&params.w1)?, vec(&params.b1)?, mat(&params.w2)?, vec(&params.b2)?];
    for (name, t) in PARAM_FILES.iter().zip(&tensors) {
        write_tensor_file(&dir.join(name), t)?;
    }
    let s = params.shape;
    write_json(
        &dir.join("meta.json"),
        &CheckpointMeta {
            dim_in: s.dim_in,
            hidden: s.hidden,
            patch_size: s.patch_size,
            dim_out: s.dim_out,
            seed,
            steps,
            alpha: alpha.alpha,
        },
    )
}

/// Loads a checkpoint written by [`save_checkpoint`]. Weights are stored
/// as `f32`, so they round to single precision.
pub fn load_checkpoint(dir: &Path) -> Result<(HeadParams, DustbinParam, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&dir.join("meta.json"))?;
    let shape = HeadShape {
        dim_in: meta.dim_in,
        hidden: meta.hidden,
        patch_size: meta.patch_size,
        dim_out: meta.dim_out,
    };
    let load = |name: &str| -> Result<(Vec<usize>, Vec<f64>)> {
        let t = load_tensor(&dir.join(name))?;
        Ok((t.shape().to_vec(), t.as_f32()?.iter().map(|&x| x as f64).collect()))
    };
    let as_mat = |(shape, data): (Vec<usize>, Vec<f64>), name: &str| -> Result<Array2<f64>> {
        ensure!(shape.len() == 2, "{name} must be 2-D, got {shape:?}");
        Array2::from_shape_vec((shape[0], shape[1]), data).map_err(|e| Error::Validation(e.to_string()))
    };
    let as_vec = |(shape, data): (Vec<usize>, Vec<f64>), name: &str| -> Result<Array1<f64>> {
        ensure!(shape.len() == 1, "{name} must be 1-D, got {shape:?}");
        Ok(Array1::from(data))
    };
    let params = HeadParams {
        shape,
        w1: as_mat(load(PARAM_FILES[0])?, "w1")?,
        b1: as_vec(load(PARAM_FILES[1])?, "b1")?,
        w2: as_mat(load(PARAM_FILES[2])?, "w2")?,
        b2: as_vec(load(PARAM_FILES[3])?, "b2")?,
    };
    params.validate()?;
    Ok((params, DustbinParam { alpha: meta.alpha }, meta))
}
