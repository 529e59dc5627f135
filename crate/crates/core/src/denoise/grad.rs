//! Batch gradients and the finite-difference gradient check.

use rayon::prelude::*;
use serde::Serialize;

use super::loss::{loss_and_grads, LossInput, LossValue, LossWeights};
use super::network::{InitOptions, Network, NetworkArch};
use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, Mask};
use crate::quality::SsimConfig;
use crate::rng;

/// One supervised training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub noisy: GrayImage,
    pub clean: GrayImage,
    pub mask: Mask,
}

impl Sample {
    pub fn new(noisy: GrayImage, clean: GrayImage, mask: Mask) -> Result<Self> {
        noisy.ensure_same_dims(&clean)?;
        if (mask.width(), mask.height()) != noisy.dims() {
            return Err(Error::Dimension("mask size differs from image size".into()));
        }
        Ok(Self { noisy, clean, mask })
    }
}

fn sample_gradient(net: &Network, s: &Sample, w: &LossWeights, cfg: &SsimConfig) -> Result<(LossValue, Vec<f64>)> {
    let tr = net.forward_raw(s.noisy.data(), s.noisy.width(), s.noisy.height())?;
    let mask_t = s.mask.to_f64();
    let input = LossInput {
        width: tr.w,
        height: tr.h,
        restored: &tr.restored,
        target: s.clean.data(),
        target_mask: &mask_t,
    };
    let (value, d_rest, d_logits) = loss_and_grads(&input, &tr.mask_logits, w, cfg)?;
    let mut grads = vec![0.0; net.param_count()];
    net.backward(&tr, &d_rest, &d_logits, &mut grads);
    Ok((value, grads))
}

/// Mean loss over the batch and its exact gradient w.r.t. every parameter.
///
/// Samples are processed in parallel; the reduction runs in batch order so
/// the result does not depend on the thread count.
pub fn gradients(net: &Network, batch: &[Sample], w: &LossWeights, cfg: &SsimConfig) -> Result<(LossValue, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    w.validate()?;
    let parts: Vec<(LossValue, Vec<f64>)> = batch
        .par_iter()
        .map(|s| sample_gradient(net, s, w, cfg))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grads = vec![0.0; net.param_count()];
    let mut acc = [0.0; 4];
    for (v, g) in &parts {
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
        acc[0] += v.total;
        acc[1] += v.mse;
        acc[2] += v.ssim_term;
        acc[3] += v.bce;
    }
    grads.iter_mut().for_each(|g| *g /= n);
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence("non-finite gradient".into()));
    }
    let value = LossValue {
        total: acc[0] / n,
        mse: acc[1] / n,
        ssim_term: acc[2] / n,
        bce: acc[3] / n,
    };
    Ok((value, grads))
}

/// Mean batch loss without gradients.
pub fn batch_loss(net: &Network, batch: &[Sample], w: &LossWeights, cfg: &SsimConfig) -> Result<LossValue> {
    let mut acc = LossValue::default();
    for s in batch {
        let tr = net.forward_raw(s.noisy.data(), s.noisy.width(), s.noisy.height())?;
        let m = s.mask.to_f64();
        let input = LossInput {
            width: tr.w,
            height: tr.h,
            restored: &tr.restored,
            target: s.clean.data(),
            target_mask: &m,
        };
        let (v, _, _) = loss_and_grads(&input, &tr.mask_logits, w, cfg)?;
        acc.total += v.total;
        acc.mse += v.mse;
        acc.ssim_term += v.ssim_term;
        acc.bce += v.bce;
    }
    let n = batch.len() as f64;
    Ok(LossValue {
        total: acc.total / n,
        mse: acc.mse / n,
        ssim_term: acc.ssim_term / n,
        bce: acc.bce / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub entries: Vec<GradcheckEntry>,
    /// Parameters skipped because `theta +- h` changed a ReLU or clamp branch.
    pub skipped_kinks: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub size: usize,
    pub params: usize,
    pub step: f64,
    pub arch: NetworkArch,
    pub weights: LossWeights,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            size: 16,
            params: 50,
            step: 1e-3,
            arch: NetworkArch::default(),
            weights: LossWeights::default(),
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn branch_signature(net: &Network, s: &Sample) -> Result<u64> {
    Ok(net
        .forward_raw(s.noisy.data(), s.noisy.width(), s.noisy.height())?
        .branch_signature())
}

/// Central finite differences against reverse-mode gradients on random
/// parameters of a freshly initialised network and a random patch.
///
/// The loss is piecewise smooth; a parameter whose perturbation flips any
/// ReLU or output-clamp branch is replaced by another draw.
pub fn gradcheck(seed: u64, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut r = rng::rng_from_seed(rng::combine(seed, 0x6772_6164));
    let net = Network::init_with(&cfg.arch, rng::combine(seed, 1), InitOptions::default())?;
    let n = cfg.size;
    let clean = GrayImage::from_fn(n, n, |_, _| rng::uniform(&mut r, 0.2, 0.8))?;
    let mask = Mask::from_fn(n, n, |_, _| rng::unit(&mut r) < 0.3);
    let noisy = GrayImage::from_clamped(
        n,
        n,
        clean
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&c, &m)| c + if m != 0 { 0.2 } else { 0.0 } + rng::uniform(&mut r, -0.05, 0.05))
            .collect(),
    )?;
    let sample = Sample::new(noisy, clean, mask)?;
    let batch = std::slice::from_ref(&sample);
    let ssim_cfg = SsimConfig::default();
    let (_, grads) = gradients(&net, batch, &cfg.weights, &ssim_cfg)?;
    let base_sig = branch_signature(&net, &sample)?;

    let mut entries = Vec::with_capacity(cfg.params);
    let mut skipped = 0;
    let mut used = std::collections::BTreeSet::new();
    let limit = 200 * cfg.params.max(1);
    let mut draws = 0;
    while entries.len() < cfg.params && draws < limit && used.len() < net.param_count() {
        draws += 1;
        let idx = rng::below(&mut r, net.param_count());
        if !used.insert(idx) {
            continue;
        }
        let mut plus = net.clone();
        plus.params[idx] += cfg.step;
        let mut minus = net.clone();
        minus.params[idx] -= cfg.step;
        if branch_signature(&plus, &sample)? != base_sig || branch_signature(&minus, &sample)? != base_sig {
            skipped += 1;
            continue;
        }
        let fp = batch_loss(&plus, batch, &cfg.weights, &ssim_cfg)?.total;
        let fm = batch_loss(&minus, batch, &cfg.weights, &ssim_cfg)?.total;
        let numeric = (fp - fm) / (2.0 * cfg.step);
        let analytic = grads[idx];
        let name = net
            .param_specs()
            .iter()
            .find(|p| p.range().contains(&idx))
            .map(|p| p.name.clone())
            .unwrap_or_default();
        entries.push(GradcheckEntry {
            name,
            index: idx,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    if entries.len() < cfg.params {
        return Err(Error::invalid(format!(
            "only {} of {} parameters could be checked away from branch points",
            entries.len(),
            cfg.params
        )));
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        step: cfg.step,
        entries,
        skipped_kinks: skipped,
        max_rel_error,
    })
}
