//! Segment-weighted yaw control toward a goal.
//!
//! Each visible segment carries its horizontal centre `x` and a path
//! length `p` to the goal. Path lengths are min-max normalized per frame
//! and turned into weights `softmax(-tau * p_hat)`, so segments close to
//! the goal dominate; the command is `psi = K / W * sum_i w_i (x_i - W/2)`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavSegment {
    pub x: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub tau: f64,
    pub gain: f64,
    pub width: f64,
}

impl NavConfig {
    /// Defaults `tau = 5`, `gain = 0.4` for an image `width` pixels wide.
    pub fn new(width: f64) -> Self {
        Self {
            tau: 5.0,
            gain: 0.4,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.tau > 0.0 && self.tau.is_finite(), "tau must be positive, got {}", self.tau);
        ensure!(self.gain > 0.0 && self.gain.is_finite(), "gain must be positive, got {}", self.gain);
        ensure!(
            self.width >= 2.0 && self.width.is_finite(),
            "image width must be at least 2, got {}",
            self.width
        );
        Ok(())
    }

    pub fn center(&self) -> f64 {
        self.width / 2.0
    }
}

/// Weights `exp(-tau * p_hat_i) / sum_j exp(-tau * p_hat_j)` with
/// `p_hat` the min-max normalized path lengths (all zero when every
/// length is equal).
pub fn softmax_weights(path_lengths: &[f64], tau: f64) -> Result<Vec<f64>> {
    ensure!(!path_lengths.is_empty(), "no segments");
    ensure!(tau > 0.0 && tau.is_finite(), "tau must be positive, got {tau}");
    ensure!(
        path_lengths.iter().all(|p| p.is_finite() && *p >= 0.0),
        "path lengths must be finite and non-negative"
    );
    let lo = path_lengths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = path_lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    // The smallest normalized length is 0, so the largest logit is 0 and
    // no further max-subtraction is needed.
    let e: Vec<f64> = path_lengths
        .iter()
        .map(|p| {
            let p_hat = if range > 0.0 { (p - lo) / range } else { 0.0 };
            (-tau * p_hat).exp()
        })
        .collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

pub fn yaw(segments: &[NavSegment], config: &NavConfig) -> Result<f64> {
    config.validate()?;
    ensure!(!segments.is_empty(), "no segments");
    for s in segments {
        ensure!(
            (0.0..config.width).contains(&s.x),
            "segment centre {} lies outside [0, {})",
            s.x,
            config.width
        );
    }
    let p: Vec<f64> = segments.iter().map(|s| s.p).collect();
    let w = softmax_weights(&p, config.tau)?;
    let c = config.center();
    let sum: f64 = segments.iter().zip(&w).map(|(s, w)| w * (s.x - c)).sum();
    let half = config.gain / 2.0;
    // Weights can sum to 1 + ulp; keep the exact bound |psi| <= K/2.
    Ok((config.gain / config.width * sum).clamp(-half, half))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_examples() {
        assert_eq!(softmax_weights(&[3.0, 3.0, 3.0, 3.0], 5.0).unwrap(), vec![0.25; 4]);
        let w = softmax_weights(&[0.0, 1.0], 5.0).unwrap();
        let e = (-5.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((w[0] - 0.9933).abs() < 1e-4 && (w[1] - 0.0067).abs() < 1e-4);
        assert_eq!(softmax_weights(&[7.0], 5.0).unwrap(), vec![1.0]);
        assert!(softmax_weights(&[], 5.0).is_err());
    }

    #[test]
    fn yaw_examples() {
        let cfg = NavConfig::new(100.0);
        assert_eq!(yaw(&[NavSegment { x: 50.0, p: 1.0 }], &cfg).unwrap(), 0.0);
        let sym = [NavSegment { x: 30.0, p: 2.0 }, NavSegment { x: 70.0, p: 2.0 }];
        assert_eq!(yaw(&sym, &cfg).unwrap(), 0.0);
        let one = yaw(&[NavSegment { x: 75.0, p: 0.0 }], &cfg).unwrap();
        assert!((one - 0.1).abs() < 1e-15);
        assert!(yaw(&[], &cfg).is_err());
        assert!(yaw(&[NavSegment { x: 100.0, p: 0.0 }], &cfg).is_err());
    }

    #[test]
    fn closer_segment_gains_weight() {
        let before = softmax_weights(&[1.0, 2.0, 3.0], 5.0).unwrap();
        let after = softmax_weights(&[1.0, 1.5, 3.0], 5.0).unwrap();
        assert!(after[1] > before[1]);
    }
}
