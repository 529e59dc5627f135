use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, Mask};
use crate::rng::{self, Rng};

/// Streak population parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreakParams {
    /// Expected streaks per megapixel.
    pub density: f64,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Normalized `(x, y)`; streaks lie on rays leaving this point.
    pub vanishing_point: (f64, f64),
    /// Uniform angular perturbation of each streak around its ray, degrees.
    pub jitter_deg: f64,
    /// Streaks spawned around each sampled anchor (1 = no clustering).
    pub cluster_size: usize,
    /// Radius in pixels for the extra anchors of a cluster.
    pub cluster_radius: f64,
    /// Layer contribution above which a pixel counts as rain in the mask.
    pub mask_threshold: f64,
}

impl Default for StreakParams {
    fn default() -> Self {
        Self {
            density: 0.0,
            length_range: (8.0, 24.0),
            width_range: (1.0, 2.0),
            opacity_range: (0.1, 0.3),
            vanishing_point: (0.5, 0.5),
            jitter_deg: 0.0,
            cluster_size: 1,
            cluster_radius: 6.0,
            mask_threshold: 0.05,
        }
    }
}

impl StreakParams {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64), name: &str| -> Result<()> {
            if !(a.is_finite() && b.is_finite() && a <= b && a >= 0.0) {
                return Err(Error::invalid(format!("{name} range ({a}, {b}) is invalid")));
            }
            Ok(())
        };
        ordered(self.length_range, "length")?;
        ordered(self.width_range, "width")?;
        ordered(self.opacity_range, "opacity")?;
        if self.opacity_range.1 > 1.0 {
            return Err(Error::invalid("opacity must lie in [0, 1]"));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(Error::invalid("density must be >= 0"));
        }
        if !(self.jitter_deg >= 0.0) || self.cluster_size == 0 || !(self.cluster_radius >= 0.0) {
            return Err(Error::invalid("jitter, cluster size and radius must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.mask_threshold) {
            return Err(Error::invalid("mask_threshold must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// One sampled streak: a capsule centred on `anchor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Streak {
    pub anchor: (f64, f64),
    /// Unit direction of the ray from the vanishing point through the anchor.
    pub ray: (f64, f64),
    /// Unit direction after jitter; the segment runs along this.
    pub direction: (f64, f64),
    pub length: f64,
    pub width: f64,
    pub opacity: f64,
}

fn ray_from(vp: (f64, f64), anchor: (f64, f64), rng: &mut Rng) -> (f64, f64) {
    let (dx, dy) = (anchor.0 - vp.0, anchor.1 - vp.1);
    let n = (dx * dx + dy * dy).sqrt();
    if n < 1e-9 {
        let a = rng::uniform(rng, 0.0, std::f64::consts::TAU);
        (a.cos(), a.sin())
    } else {
        (dx / n, dy / n)
    }
}

fn rotate((x, y): (f64, f64), deg: f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Sample the streak population for a `width`x`height` frame.
pub fn sample_streaks(width: usize, height: usize, params: &StreakParams, seed: u64) -> Result<Vec<Streak>> {
    params.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Dimension("streak layer must be at least 1x1".into()));
    }
    let mut r = rng::rng_from_seed(seed);
    let expected = params.density * (width * height) as f64 / 1e6 / params.cluster_size as f64;
    let mut clusters = expected.floor() as usize;
    if rng::unit(&mut r) < expected - expected.floor() {
        clusters += 1;
    }
    let vp = (
        params.vanishing_point.0 * width as f64,
        params.vanishing_point.1 * height as f64,
    );
    let mut out = Vec::with_capacity(clusters * params.cluster_size);
    for _ in 0..clusters {
        let base = (
            rng::uniform(&mut r, 0.0, width as f64),
            rng::uniform(&mut r, 0.0, height as f64),
        );
        for k in 0..params.cluster_size {
            let anchor = if k == 0 {
                base
            } else {
                let a = rng::uniform(&mut r, 0.0, std::f64::consts::TAU);
                let d = params.cluster_radius * rng::unit(&mut r).sqrt();
                (base.0 + d * a.cos(), base.1 + d * a.sin())
            };
            let ray = ray_from(vp, anchor, &mut r);
            let jitter = rng::uniform(&mut r, -params.jitter_deg, params.jitter_deg);
            let length = rng::uniform(&mut r, params.length_range.0, params.length_range.1);
            let w = rng::uniform(&mut r, params.width_range.0, params.width_range.1);
            let opacity = rng::uniform(&mut r, params.opacity_range.0, params.opacity_range.1);
            out.push(Streak {
                anchor,
                ray,
                direction: rotate(ray, jitter),
                length,
                width: w,
                opacity,
            });
        }
    }
    Ok(out)
}

const SUPERSAMPLE: usize = 4;

/// Coverage-weighted rasterization: each pixel receives `opacity` times the
/// fraction of its 4x4 subsamples lying inside the streak capsule.
/// Contributions add up and saturate at 1.
pub fn rasterize_streaks(width: usize, height: usize, streaks: &[Streak], mask_threshold: f64) -> (GrayImage, Mask) {
    let mut layer = vec![0.0f64; width * height];
    for s in streaks {
        let half = s.length / 2.0;
        let (ux, uy) = s.direction;
        let p0 = (s.anchor.0 - half * ux, s.anchor.1 - half * uy);
        let radius = (s.width / 2.0).max(0.25);
        let pad = radius + 1.0;
        let x_lo = (p0.0.min(p0.0 + s.length * ux) - pad).floor().max(0.0) as usize;
        let x_hi = ((p0.0.max(p0.0 + s.length * ux) + pad).ceil().max(0.0) as usize).min(width);
        let y_lo = (p0.1.min(p0.1 + s.length * uy) - pad).floor().max(0.0) as usize;
        let y_hi = ((p0.1.max(p0.1 + s.length * uy) + pad).ceil().max(0.0) as usize).min(height);
        let r2 = radius * radius;
        for py in y_lo..y_hi {
            for px in x_lo..x_hi {
                let mut hits = 0usize;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let qx = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                        let qy = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                        let t = ((qx - p0.0) * ux + (qy - p0.1) * uy).clamp(0.0, s.length);
                        let dx = qx - (p0.0 + t * ux);
                        let dy = qy - (p0.1 + t * uy);
                        if dx * dx + dy * dy <= r2 {
                            hits += 1;
                        }
                    }
                }
                if hits > 0 {
                    let cov = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                    let v = &mut layer[py * width + px];
                    *v = (*v + s.opacity * cov).min(1.0);
                }
            }
        }
    }
    let mask = Mask::from_fn(width, height, |x, y| layer[y * width + x] > mask_threshold);
    let layer = GrayImage::new(width, height, layer).expect("layer values are within [0, 1]");
    (layer, mask)
}

/// Render the additive streak layer and its binary mask.
pub fn render_streaks(width: usize, height: usize, params: &StreakParams, seed: u64) -> Result<(GrayImage, Mask)> {
    let streaks = sample_streaks(width, height, params, seed)?;
    Ok(rasterize_streaks(width, height, &streaks, params.mask_threshold))
}

/// `clamp(clean + layer, 0, 1)`.
pub fn composite_rain(clean: &GrayImage, streak_layer: &GrayImage) -> Result<GrayImage> {
    clean.ensure_same_dims(streak_layer)?;
    let data = clean
        .data()
        .iter()
        .zip(streak_layer.data())
        .map(|(c, s)| (c + s).clamp(0.0, 1.0))
        .collect();
    GrayImage::new(clean.width(), clean.height(), data)
}
