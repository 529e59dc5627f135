//! Composite restoration loss: `l_mse * MSE + l_percept * (1 - SSIM) + l_mask * BCE`.

use serde::{Deserialize, Serialize};

use super::network::sigmoid;
use crate::error::{Error, Result};
use crate::quality::{self, kahan_sum, SsimConfig};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_mse: f64,
    pub lambda_percept: f64,
    pub lambda_mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_mse: 1.0,
            lambda_percept: 0.5,
            lambda_mask: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_mse: f64, lambda_percept: f64, lambda_mask: f64) -> Result<Self> {
        let w = Self {
            lambda_mse,
            lambda_percept,
            lambda_mask,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_mse, self.lambda_percept, self.lambda_mask];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub mse: f64,
    /// `1 - SSIM`, or 0 when the image is smaller than the SSIM window.
    pub ssim_term: f64,
    pub bce: f64,
}

impl LossValue {
    pub fn combine(w: &LossWeights, mse: f64, ssim_term: f64, bce: f64) -> Self {
        Self {
            total: w.lambda_mse * mse + w.lambda_percept * ssim_term + w.lambda_mask * bce,
            mse,
            ssim_term,
            bce,
        }
    }
}

/// Borrowed single-sample raster pair plus mask target.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub width: usize,
    pub height: usize,
    pub restored: &'a [f64],
    pub target: &'a [f64],
    pub target_mask: &'a [f64],
}

impl LossInput<'_> {
    fn check(&self, mask_len: usize) -> Result<()> {
        let n = self.width * self.height;
        if n == 0 || self.restored.len() != n || self.target.len() != n || self.target_mask.len() != n || mask_len != n
        {
            return Err(Error::Dimension(format!(
                "loss inputs disagree with a {}x{} raster",
                self.width, self.height
            )));
        }
        Ok(())
    }

    fn ssim_applies(&self, cfg: &SsimConfig) -> bool {
        self.width >= cfg.window && self.height >= cfg.window
    }
}

fn bce_pixel(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Loss from predicted mask probabilities.
pub fn loss(input: &LossInput<'_>, mask_prob: &[f64], w: &LossWeights, ssim_cfg: &SsimConfig) -> Result<LossValue> {
    input.check(mask_prob.len())?;
    w.validate()?;
    let n = mask_prob.len() as f64;
    let mse = kahan_sum(input.restored.iter().zip(input.target).map(|(a, b)| (a - b) * (a - b))) / n;
    let ssim_term = if input.ssim_applies(ssim_cfg) {
        1.0 - quality::ssim_raw(input.restored, input.target, input.width, input.height, ssim_cfg, None)?
    } else {
        0.0
    };
    let bce = kahan_sum(mask_prob.iter().zip(input.target_mask).map(|(&p, &t)| bce_pixel(p, t))) / n;
    Ok(LossValue::combine(w, mse, ssim_term, bce))
}

/// Loss from mask logits, with gradients w.r.t. the restored raster and the logits.
pub(crate) fn loss_and_grads(
    input: &LossInput<'_>,
    mask_logits: &[f64],
    w: &LossWeights,
    ssim_cfg: &SsimConfig,
) -> Result<(LossValue, Vec<f64>, Vec<f64>)> {
    input.check(mask_logits.len())?;
    let n = mask_logits.len() as f64;
    let mut d_restored: Vec<f64> = input
        .restored
        .iter()
        .zip(input.target)
        .map(|(a, b)| w.lambda_mse * 2.0 * (a - b) / n)
        .collect();
    let mse = kahan_sum(input.restored.iter().zip(input.target).map(|(a, b)| (a - b) * (a - b))) / n;
    let ssim_term = if input.ssim_applies(ssim_cfg) && w.lambda_percept > 0.0 {
        let mut g = vec![0.0; input.restored.len()];
        let s = quality::ssim_raw(
            input.restored,
            input.target,
            input.width,
            input.height,
            ssim_cfg,
            Some(&mut g),
        )?;
        for (d, gs) in d_restored.iter_mut().zip(g) {
            *d -= w.lambda_percept * gs;
        }
        1.0 - s
    } else if input.ssim_applies(ssim_cfg) {
        1.0 - quality::ssim_raw(input.restored, input.target, input.width, input.height, ssim_cfg, None)?
    } else {
        0.0
    };
    let mut bce = Vec::with_capacity(mask_logits.len());
    let d_logits = mask_logits
        .iter()
        .zip(input.target_mask)
        .map(|(&z, &t)| {
            let p = sigmoid(z);
            bce.push(bce_pixel(p, t));
            if p > BCE_EPS && p < 1.0 - BCE_EPS {
                w.lambda_mask * (p - t) / n
            } else {
                0.0
            }
        })
        .collect();
    let bce = kahan_sum(bce) / n;
    Ok((LossValue::combine(w, mse, ssim_term, bce), d_restored, d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<'a>(w: usize, h: usize, r: &'a [f64], t: &'a [f64], m: &'a [f64]) -> LossInput<'a> {
        LossInput {
            width: w,
            height: h,
            restored: r,
            target: t,
            target_mask: m,
        }
    }

    #[test]
    fn one_pixel_hand_value() {
        let w = LossWeights::new(1.0, 0.0, 1.0).unwrap();
        let l = loss(&input(1, 1, &[0.4], &[0.5], &[1.0]), &[0.5], &w, &SsimConfig::default()).unwrap();
        let expected = 0.1f64.powi(2) + 2f64.ln();
        assert!((l.total - expected).abs() < 1e-12);
        assert!((l.total - 0.703147).abs() < 1e-6);
        assert_eq!(l.ssim_term, 0.0);
    }

    #[test]
    fn perfect_prediction_limit() {
        let w = LossWeights::default();
        let img: Vec<f64> = (0..64).map(|i| (i % 8) as f64 / 8.0).collect();
        let t: Vec<f64> = (0..64).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let p: Vec<f64> = t
            .iter()
            .map(|&v| if v > 0.5 { 1.0 - BCE_EPS } else { BCE_EPS })
            .collect();
        let l = loss(&input(8, 8, &img, &img, &t), &p, &w, &SsimConfig::default()).unwrap();
        assert_eq!(l.mse, 0.0);
        assert!(l.ssim_term.abs() < 1e-12);
        let bce = -(1.0 - BCE_EPS).ln();
        assert!((l.bce - bce).abs() < 1e-15);
        assert!((l.total - w.lambda_mask * bce).abs() < 1e-14);
    }

    #[test]
    fn zero_weights_rejected() {
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn total_equals_weighted_components() {
        let w = LossWeights::new(0.7, 0.3, 0.9).unwrap();
        let a: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let b: Vec<f64> = (0..100).map(|i| ((i * 11) % 100) as f64 / 100.0).collect();
        let m: Vec<f64> = (0..100).map(|i| (i % 4 == 0) as u8 as f64).collect();
        let z: Vec<f64> = (0..100).map(|i| (i as f64 - 50.0) / 10.0).collect();
        let (l, _, _) = loss_and_grads(&input(10, 10, &a, &b, &m), &z, &w, &SsimConfig::default()).unwrap();
        assert_eq!(l.total, 0.7 * l.mse + 0.3 * l.ssim_term + 0.9 * l.bce);
        let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let l2 = loss(&input(10, 10, &a, &b, &m), &p, &w, &SsimConfig::default()).unwrap();
        assert!((l.total - l2.total).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let w = LossWeights::default();
        assert!(loss(
            &input(2, 2, &[0.0; 4], &[0.0; 3], &[0.0; 4]),
            &[0.5; 4],
            &w,
            &SsimConfig::default()
        )
        .is_err());
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let w = LossWeights::default();
        let cfg = SsimConfig::default();
        let a: Vec<f64> = (0..144).map(|i| 0.1 + ((i * 37) % 97) as f64 / 120.0).collect();
        let b: Vec<f64> = (0..144).map(|i| ((i * 11) % 89) as f64 / 100.0).collect();
        let m: Vec<f64> = (0..144).map(|i| (i % 5 == 0) as u8 as f64).collect();
        let z: Vec<f64> = (0..144).map(|i| ((i * 7) % 13) as f64 / 3.0 - 2.0).collect();
        let f = |a: &[f64], z: &[f64]| loss_and_grads(&input(12, 12, a, &b, &m), z, &w, &cfg).unwrap().0.total;
        let (_, da, dz) = loss_and_grads(&input(12, 12, &a, &b, &m), &z, &w, &cfg).unwrap();
        let h = 1e-6;
        for k in [0, 17, 70, 143] {
            let mut p = a.clone();
            p[k] += h;
            let mut q = a.clone();
            q[k] -= h;
            let fd = (f(&p, &z) - f(&q, &z)) / (2.0 * h);
            assert!((fd - da[k]).abs() < 1e-7, "restored {k}: {fd} vs {}", da[k]);
            let mut p = z.clone();
            p[k] += h;
            let mut q = z.clone();
            q[k] -= h;
            let fd = (f(&a, &p) - f(&a, &q)) / (2.0 * h);
            assert!((fd - dz[k]).abs() < 1e-7, "logit {k}: {fd} vs {}", dz[k]);
        }
    }
}
