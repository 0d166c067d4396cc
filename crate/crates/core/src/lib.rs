//! Wide-baseline segment matching on dense features.
//!
//! Segment descriptors are aggregated from per-pixel features under each
//! mask, compared by cosine affinity, augmented with a learnable dustbin and
//! turned into a soft assignment by log-domain Sinkhorn normalization. The
//! crate also carries the assignment loss with exact gradients through the
//! unrolled Sinkhorn loop, keypoint-voting and mutual-nearest baselines,
//! ranking metrics, 3D instance-map fusion, a segment-weighted yaw
//! controller, and a seeded synthetic scene generator that supplies exact
//! ground truth for all of the above.
//!
//! ```
//! use ndarray::array;
//! use segot::features::SegmentDescriptors;
//! use segot::matcher::{match_segments, DustbinParam, MatcherConfig};
//!
//! let a = SegmentDescriptors::from_rows(array![[1.0, 0.0], [0.0, 1.0]]);
//! let b = SegmentDescriptors::from_rows(array![[0.0, 2.0], [3.0, 0.0]]);
//! let m = match_segments(&a, &b, &MatcherConfig::default(), DustbinParam { alpha: -10.0 })?;
//! assert_eq!(m.result.assignment, vec![Some(1), Some(0)]);
//! # Ok::<(), segot::Error>(())
//! ```

pub mod baselines;
pub mod error;
pub mod eval;
pub mod features;
pub mod fsutil;
pub mod mapping;
pub mod matcher;
pub mod nav;
pub mod pair;
pub mod sequence;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

// Runs the guide's code blocks as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data-model.md")]
    mod data_model {}
    #[doc = include_str!("../../../book/src/descriptors.md")]
    mod descriptors {}
    #[doc = include_str!("../../../book/src/matching.md")]
    mod matching {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/mapping.md")]
    mod mapping {}
    #[doc = include_str!("../../../book/src/navigation.md")]
    mod navigation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/acceptance.md")]
    mod acceptance {}
}
