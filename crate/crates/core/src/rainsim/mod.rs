//! Synthetic rain: vanishing-point streak layers composited additively onto a
//! clean frame, optional blur and haze, and the staged curriculum builder.
//!
//! Corruption order is fixed: streaks, clamp, Gaussian blur, motion blur,
//! haze (`(1 - strength) * p + strength * airlight`).

mod curriculum;
mod degrade;
mod streaks;

use serde::{Deserialize, Serialize};

pub use self::curriculum::{
    build_curriculum, load_manifest, CurriculumConfig, CurriculumManifest, ManifestEntry, Target, MANIFEST_FILE,
};
pub use self::degrade::{gaussian_blur, haze, motion_blur};
pub use self::streaks::{composite_rain, rasterize_streaks, render_streaks, sample_streaks, Streak, StreakParams};

use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, Mask};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: u8,
    /// Scalar severity in `[0, 1]` the stage was built from.
    pub severity: f64,
    pub streaks: StreakParams,
    pub gaussian_blur_sigma: f64,
    /// `(length in pixels, angle in degrees)`; length below 2 disables it.
    pub motion_blur: (f64, f64),
    /// `(airlight, strength)`.
    pub haze: (f64, f64),
}

impl StageConfig {
    pub fn clean() -> Self {
        StageConfig {
            stage: 1,
            severity: 0.0,
            streaks: StreakParams::default(),
            gaussian_blur_sigma: 0.0,
            motion_blur: (0.0, 0.0),
            haze: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.stage) {
            return Err(Error::invalid(format!("stage must be 1..=5, got {}", self.stage)));
        }
        self.streaks.validate()?;
        if !(self.gaussian_blur_sigma >= 0.0) || !(self.motion_blur.0 >= 0.0) {
            return Err(Error::invalid("blur parameters must be non-negative"));
        }
        let (a, s) = self.haze;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid("haze airlight and strength must lie in [0, 1]"));
        }
        if self.stage == 1
            && (self.streaks.density != 0.0 || self.gaussian_blur_sigma != 0.0 || self.motion_blur.0 >= 2.0 || s != 0.0)
        {
            return Err(Error::invalid("stage 1 must be clean: no streaks, blur or haze"));
        }
        Ok(())
    }
}

/// Severity anchors. A stage with severity `s` takes `lo + s * (hi - lo)` for
/// density, opacity midpoint, Gaussian blur sigma and haze strength.
/// Blur and haze switch on per stage: stage 2 is streaks only, stage 3 adds
/// Gaussian blur and haze, stage 4 adds motion blur and large clustered streaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainConfig {
    pub vanishing_point: [f64; 2],
    pub mask_threshold: f64,
    /// Streaks per megapixel at severity 0 and 1.
    pub density: [f64; 2],
    pub opacity: [f64; 2],
    /// Half width of the opacity range around its midpoint.
    pub opacity_spread: f64,
    pub gaussian_blur_sigma: [f64; 2],
    pub haze_strength: [f64; 2],
    pub airlight: f64,
    pub length: [f64; 2],
    pub width: [f64; 2],
    /// Length and width ranges of the stage-4 large streaks.
    pub large_length: [f64; 2],
    pub large_width: [f64; 2],
    pub cluster_size: usize,
    pub cluster_radius: f64,
    /// Angular jitter for stages 2, 3 and 4.
    pub jitter_deg: [f64; 3],
    /// `(length, angle)` of the stage-4 motion blur.
    pub motion_blur: [f64; 2],
}

impl Default for RainConfig {
    fn default() -> Self {
        Self {
            vanishing_point: [0.5, 0.5],
            mask_threshold: 0.05,
            density: [0.0, 6_000.0],
            opacity: [0.1, 0.6],
            opacity_spread: 0.1,
            gaussian_blur_sigma: [0.0, 1.2],
            haze_strength: [0.0, 0.3],
            airlight: 0.4,
            length: [6.0, 18.0],
            width: [1.0, 2.0],
            large_length: [12.0, 30.0],
            large_width: [1.5, 3.0],
            cluster_size: 3,
            cluster_radius: 5.0,
            jitter_deg: [3.0, 25.0, 10.0],
            motion_blur: [5.0, 90.0],
        }
    }
}

fn lerp([lo, hi]: [f64; 2], s: f64) -> f64 {
    lo + s * (hi - lo)
}

impl RainConfig {
    /// Stage parameters for `stage` (1..=5) at severity `severity`.
    /// Stage 5 reuses the stage-4 corruption recipe.
    pub fn stage(&self, stage: u8, severity: f64) -> Result<StageConfig> {
        if !(1..=5).contains(&stage) {
            return Err(Error::invalid(format!("stage must be 1..=5, got {stage}")));
        }
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::invalid(format!("severity {severity} outside [0, 1]")));
        }
        if stage == 1 {
            return Ok(StageConfig::clean());
        }
        let mid = lerp(self.opacity, severity);
        let opacity_range = (
            (mid - self.opacity_spread).clamp(0.0, 1.0),
            (mid + self.opacity_spread).clamp(0.0, 1.0),
        );
        let heavy = stage >= 4;
        let streaks = StreakParams {
            density: lerp(self.density, severity),
            length_range: if heavy {
                (self.large_length[0], self.large_length[1])
            } else {
                (self.length[0], self.length[1])
            },
            width_range: if heavy {
                (self.large_width[0], self.large_width[1])
            } else {
                (self.width[0], self.width[1])
            },
            opacity_range,
            vanishing_point: (self.vanishing_point[0], self.vanishing_point[1]),
            jitter_deg: self.jitter_deg[(stage.min(4) - 2) as usize],
            cluster_size: if heavy { self.cluster_size.max(1) } else { 1 },
            cluster_radius: self.cluster_radius,
            mask_threshold: self.mask_threshold,
        };
        let cfg = StageConfig {
            stage,
            severity,
            streaks,
            gaussian_blur_sigma: if stage >= 3 {
                lerp(self.gaussian_blur_sigma, severity)
            } else {
                0.0
            },
            motion_blur: if heavy {
                (self.motion_blur[0], self.motion_blur[1])
            } else {
                (0.0, 0.0)
            },
            haze: if stage >= 3 {
                (self.airlight, lerp(self.haze_strength, severity))
            } else {
                (self.airlight, 0.0)
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Clean frame, its corrupted version and the rain ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedFrame {
    pub clean: GrayImage,
    /// `clamp(clean + streak_layer)` before blur and haze.
    pub pre_blur: GrayImage,
    pub noisy: GrayImage,
    pub streak_layer: GrayImage,
    pub mask: Mask,
    pub stage: u8,
    pub severity: f64,
    pub seed: u64,
}

/// Blur and haze applied to the clamped composite, in the fixed order.
pub fn post_process(img: &GrayImage, cfg: &StageConfig) -> Result<GrayImage> {
    let mut out = img.clone();
    if cfg.gaussian_blur_sigma > 0.0 {
        out = gaussian_blur(&out, cfg.gaussian_blur_sigma)?;
    }
    if cfg.motion_blur.0 >= 2.0 {
        out = motion_blur(&out, cfg.motion_blur.0, cfg.motion_blur.1)?;
    }
    if cfg.haze.1 > 0.0 {
        out = haze(&out, cfg.haze.0, cfg.haze.1)?;
    }
    Ok(out)
}

pub fn apply_stage(clean: &GrayImage, cfg: &StageConfig, seed: u64) -> Result<CorruptedFrame> {
    cfg.validate()?;
    let (w, h) = clean.dims();
    if cfg.stage == 1 {
        return Ok(CorruptedFrame {
            clean: clean.clone(),
            pre_blur: clean.clone(),
            noisy: clean.clone(),
            streak_layer: GrayImage::filled(w, h, 0.0)?,
            mask: Mask::zeros(w, h),
            stage: 1,
            severity: cfg.severity,
            seed,
        });
    }
    let (layer, mask) = render_streaks(w, h, &cfg.streaks, seed)?;
    let pre_blur = composite_rain(clean, &layer)?;
    let noisy = post_process(&pre_blur, cfg)?;
    Ok(CorruptedFrame {
        clean: clean.clone(),
        pre_blur,
        noisy,
        streak_layer: layer,
        mask,
        stage: cfg.stage,
        severity: cfg.severity,
        seed,
    })
}
