//! Segment-feature head and mask aggregation.
//!
//! The head lifts patch-level backbone features to per-pixel descriptors
//! with a two-layer per-patch perceptron followed by a pixel-shuffle: each
//! patch emits `s*s*D` values that are rearranged into an `s x s` block of
//! `D`-dimensional pixels. Segment descriptors are then the sum (or mean)
//! of the pixel descriptors inside each mask, `G = M_flat * F_flat`.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure, Result};
use crate::pair::{FeatureMap, MaskSet, PatchFeatures};

/// Architecture of the segment-feature head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeadShape {
    pub dim_in: usize,
    pub hidden: usize,
    pub patch_size: usize,
    pub dim_out: usize,
}

impl HeadShape {
    /// Hidden width defaults to `4 * dim_out`.
    pub fn new(dim_in: usize, patch_size: usize, dim_out: usize) -> Self {
        Self {
            dim_in,
            hidden: 4 * dim_out,
            patch_size,
            dim_out,
        }
    }

    pub fn out_width(&self) -> usize {
        self.patch_size * self.patch_size * self.dim_out
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.dim_in >= 1 && self.hidden >= 1 && self.patch_size >= 1 && self.dim_out >= 1,
            "head sizes must all be >= 1, got {self:?}"
        );
        Ok(())
    }
}

/// Weights of the head: `dim_in -> hidden` (tanh) `-> s*s*dim_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub shape: HeadShape,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl HeadParams {
    pub fn zeros(shape: HeadShape) -> Self {
        Self {
            shape,
            w1: Array2::zeros((shape.dim_in, shape.hidden)),
            b1: Array1::zeros(shape.hidden),
            w2: Array2::zeros((shape.hidden, shape.out_width())),
            b2: Array1::zeros(shape.out_width()),
        }
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(shape: HeadShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(shape);
        let k1 = 1.0 / (shape.dim_in as f64).sqrt();
        let k2 = 1.0 / (shape.hidden as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-k1..k1));
        p.b1.mapv_inplace(|_| rng.random_range(-k1..k1));
        p.w2.mapv_inplace(|_| rng.random_range(-k2..k2));
        p.b2.mapv_inplace(|_| rng.random_range(-k2..k2));
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.shape;
        s.validate()?;
        ensure!(
            self.w1.dim() == (s.dim_in, s.hidden) && self.b1.len() == s.hidden,
            "first layer shape does not match {s:?}"
        );
        ensure!(
            self.w2.dim() == (s.hidden, s.out_width()) && self.b2.len() == s.out_width(),
            "second layer shape does not match {s:?}"
        );
        let finite = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|x| x.is_finite());
        ensure!(finite, "head parameters contain non-finite values");
        Ok(())
    }

    /// Parameter slices in a fixed order: `w1, b1, w2, b2`.
    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

/// Gradients with the same layout as [`HeadParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl HeadGrads {
    pub fn zeros(shape: HeadShape) -> Self {
        let p = HeadParams::zeros(shape);
        Self {
            w1: p.w1,
            b1: p.b1,
            w2: p.w2,
            b2: p.b2,
        }
    }

    pub fn add_assign(&mut self, other: &HeadGrads) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, k: f64) {
        self.w1 *= k;
        self.b1 *= k;
        self.w2 *= k;
        self.b2 *= k;
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    grid: (usize, usize),
}

/// Runs the head and returns the pixel feature map.
pub fn head_forward(patches: &PatchFeatures, params: &HeadParams) -> Result<FeatureMap> {
    head_forward_cached(patches, params).map(|(f, _)| f)
}

pub fn head_forward_cached(patches: &PatchFeatures, params: &HeadParams) -> Result<(FeatureMap, HeadCache)> {
    params.validate()?;
    let s = params.shape;
    ensure!(
        patches.dim() == s.dim_in,
        "patch features have {} channels, head expects {}",
        patches.dim(),
        s.dim_in
    );
    let mut hidden = patches.data.dot(&params.w1);
    hidden += &params.b1;
    hidden.mapv_inplace(f64::tanh);
    let mut out = hidden.dot(&params.w2);
    out += &params.b2;
    let features = pixel_shuffle(&out, patches.height, patches.width, s.patch_size, s.dim_out);
    let cache = HeadCache {
        input: patches.data.clone(),
        hidden,
        grid: (patches.height, patches.width),
    };
    Ok((features, cache))
}

/// Backpropagates `d_features` (the gradient with respect to the head's
/// output map) into the head parameters.
pub fn head_backward_from_pixels(cache: &HeadCache, params: &HeadParams, d_features: &FeatureMap) -> HeadGrads {
    let s = params.shape;
    let (hp, wp) = cache.grid;
    let d_out = pixel_unshuffle(d_features, hp, wp, s.patch_size);
    let w2 = cache.hidden.t().dot(&d_out);
    let b2 = d_out.sum_axis(Axis(0));
    let mut d_hidden = d_out.dot(&params.w2.t());
    d_hidden.zip_mut_with(&cache.hidden, |g, &a| *g *= 1.0 - a * a);
    let w1 = cache.input.t().dot(&d_hidden);
    let b1 = d_hidden.sum_axis(Axis(0));
    HeadGrads { w1, b1, w2, b2 }
}

/// Rearranges per-patch rows of `s*s*D` values into an `(hp*s) x (wp*s)`
/// map. Within a patch row the sub-pixel `(dy, dx)` owns channels
/// `[(dy*s + dx)*D, (dy*s + dx + 1)*D)`.
fn pixel_shuffle(out: &Array2<f64>, hp: usize, wp: usize, s: usize, d: usize) -> FeatureMap {
    let (h, w) = (hp * s, wp * s);
    let mut map = FeatureMap::zeros(h, w, d);
    let m = map.matrix_mut();
    for py in 0..hp {
        for px in 0..wp {
            let row = out.row(py * wp + px);
            for dy in 0..s {
                for dx in 0..s {
                    let pixel = (py * s + dy) * w + px * s + dx;
                    let off = (dy * s + dx) * d;
                    for c in 0..d {
                        m[[pixel, c]] = row[off + c];
                    }
                }
            }
        }
    }
    map
}

fn pixel_unshuffle(map: &FeatureMap, hp: usize, wp: usize, s: usize) -> Array2<f64> {
    let d = map.dim();
    let w = map.width();
    let src = map.matrix();
    let mut out = Array2::zeros((hp * wp, s * s * d));
    for py in 0..hp {
        for px in 0..wp {
            let mut row = out.row_mut(py * wp + px);
            for dy in 0..s {
                for dx in 0..s {
                    let pixel = (py * s + dy) * w + px * s + dx;
                    let off = (dy * s + dx) * d;
                    for c in 0..d {
                        row[off + c] = src[[pixel, c]];
                    }
                }
            }
        }
    }
    out
}

/// `M x D` segment descriptors. Rows with `valid = false` are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDescriptors {
    pub g: Array2<f64>,
    pub valid: Vec<bool>,
}

impl SegmentDescriptors {
    pub fn new(g: Array2<f64>, valid: Vec<bool>) -> Result<Self> {
        ensure!(
            g.nrows() == valid.len(),
            "{} descriptor rows but {} validity flags",
            g.nrows(),
            valid.len()
        );
        for (m, &ok) in valid.iter().enumerate() {
            ensure!(ok || g.row(m).iter().all(|&x| x == 0.0), "invalid descriptor row {m} is not zero");
        }
        Ok(Self { g, valid })
    }

    /// All rows valid.
    pub fn from_rows(g: Array2<f64>) -> Self {
        let valid = vec![true; g.nrows()];
        Self { g, valid }
    }

    pub fn len(&self) -> usize {
        self.g.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.valid[i]).collect()
    }
}

fn check_shapes(features: &FeatureMap, masks: &MaskSet) -> Result<()> {
    ensure!(
        features.height() == masks.height() && features.width() == masks.width(),
        "features are {}x{} but masks are {}x{}",
        features.height(),
        features.width(),
        masks.height(),
        masks.width()
    );
    Ok(())
}

/// Validity after aggregation: slot flagged valid and mask non-empty.
fn aggregated_validity(masks: &MaskSet, counts: &[usize]) -> Vec<bool> {
    masks.valid().iter().zip(counts).map(|(&v, &n)| v && n > 0).collect()
}

/// Sum of pixel features inside each mask.
pub fn aggregate_sum(features: &FeatureMap, masks: &MaskSet) -> Result<SegmentDescriptors> {
    check_shapes(features, masks)?;
    let mut g = masks.as_matrix().dot(features.matrix());
    let counts: Vec<usize> = (0..masks.len()).map(|m| masks.pixel_count(m)).collect();
    let valid = aggregated_validity(masks, &counts);
    for (m, &ok) in valid.iter().enumerate() {
        if !ok {
            g.row_mut(m).fill(0.0);
        }
    }
    Ok(SegmentDescriptors { g, valid })
}

/// Mean of pixel features inside each mask (masked average pooling).
pub fn aggregate_mean(features: &FeatureMap, masks: &MaskSet) -> Result<SegmentDescriptors> {
    let mut out = aggregate_sum(features, masks)?;
    for m in 0..masks.len() {
        if out.valid[m] {
            let n = masks.pixel_count(m) as f64;
            out.g.row_mut(m).mapv_inplace(|x| x / n);
        }
    }
    Ok(out)
}

/// Gradient of [`aggregate_sum`] with respect to the feature map, given
/// the gradient on the descriptors. Invalid rows contribute nothing.
pub fn aggregate_sum_backward(masks: &MaskSet, d_g: &Array2<f64>, valid: &[bool]) -> Array2<f64> {
    let mut d = d_g.clone();
    for (m, &ok) in valid.iter().enumerate() {
        if !ok {
            d.row_mut(m).fill(0.0);
        }
    }
    masks.as_matrix().t().dot(&d)
}
