//! Night-time vehicle light perception under rain.
//!
//! The crate is organised as a pipeline:
//!
//! * [`imgcore`] grayscale rasters, dataset layout and annotation schema.
//! * [`photometric`] gamma tone mapping followed by CLAHE.
//! * [`rainsim`] seeded vanishing-point rain streaks and the staged curriculum builder.
//! * [`quality`] PSNR, SSIM and error statistics.
//! * [`denoise`] a small depthwise-separable encoder/decoder with image and rain-mask
//!   heads, trained from scratch with hand-written reverse-mode gradients.
//! * [`detect`] saliency proposals, a feature-based light classifier and pairing.
//! * [`track`] constant-velocity Kalman tracking, Hungarian association and the
//!   "likely present" decision rule.
//! * [`harness`] scripted scenes, evaluation metrics, reports and the A/B runner.
//!
//! Everything is deterministic for a given seed.

pub mod config;
pub mod denoise;
pub mod detect;
pub mod error;
pub mod harness;
pub mod imgcore;
pub mod photometric;
pub mod quality;
pub mod rainsim;
pub mod rng;
pub mod track;

pub use error::{Error, Result};
pub use imgcore::{GrayImage, Mask};
