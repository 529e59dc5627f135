//! Learned rain removal: a small depthwise-separable U-Net, its loss and
//! hand-written gradients, curriculum training, checkpoints, and a median
//! filter baseline.

pub mod checkpoint;
pub mod grad;
pub mod loss;
pub mod network;
pub mod tensor;
pub mod train;

pub use checkpoint::{config_hash, sha256_hex, Checkpoint, CheckpointManifest, Provenance, TrainerState};
pub use grad::{batch_loss, gradcheck, gradients, GradcheckConfig, GradcheckReport, Sample};
pub use loss::{loss, LossInput, LossValue, LossWeights, BCE_EPS};
pub use network::{sigmoid, ForwardOutput, InitOptions, Network, NetworkArch, ParamSpec};
pub use train::{
    load_curriculum_stages, save_log_csv, synthesize_stages, train_curriculum, train_schedule, validation_psnr,
    write_log_csv, AdamState, LogRow, StageData, TrainConfig, TrainContext, TrainOutcome,
};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

/// Symmetric reflection about the edges (`-1 -> 0`, `n -> n - 1`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Restore one frame. Sizes that are not a multiple of `2^depth` are padded
/// by reflection on the right and bottom, and the result cropped back.
pub fn denoise_with(net: &Network, img: &GrayImage) -> Result<GrayImage> {
    let m = net.arch.stride_multiple();
    let (w, h) = img.dims();
    let pw = w.div_ceil(m) * m;
    let ph = h.div_ceil(m) * m;
    if pw == w && ph == h {
        return Ok(net.forward_one(img)?.restored);
    }
    let padded = GrayImage::from_fn(pw, ph, |x, y| img.get(reflect(x as isize, w), reflect(y as isize, h)))?;
    net.forward_one(&padded)?.restored.crop(0, 0, w, h)
}

pub fn denoise_frame(ckpt: &Checkpoint, img: &GrayImage) -> Result<GrayImage> {
    denoise_with(&ckpt.network, img)
}

/// `k x k` median filter with symmetric-reflected borders.
pub fn median_denoise(img: &GrayImage, k: usize) -> Result<GrayImage> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!("median window must be odd and >= 3, got {k}")));
    }
    let r = (k / 2) as isize;
    let (w, h) = img.dims();
    let mut buf = Vec::with_capacity(k * k);
    GrayImage::from_fn(w, h, |x, y| {
        buf.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                buf.push(img.get(reflect(x as isize + dx, w), reflect(y as isize + dy, h)));
            }
        }
        let mid = buf.len() / 2;
        *buf.select_nth_unstable_by(mid, f64::total_cmp).1
    })
}
