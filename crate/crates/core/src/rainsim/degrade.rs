use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid("blur sigma must be >= 0"));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = img.dims();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * img.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    GrayImage::from_clamped(w, h, out)
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as isize, y0 as isize);
    let a = img.get_clamped(xi, yi);
    let b = img.get_clamped(xi + 1, yi);
    let c = img.get_clamped(xi, yi + 1);
    let d = img.get_clamped(xi + 1, yi + 1);
    let top = a + fx * (b - a);
    let bot = c + fx * (d - c);
    top + fy * (bot - top)
}

/// Linear motion blur: mean of `round(length)` bilinear samples spread evenly
/// along the direction `angle_deg`, centred on the pixel.
pub fn motion_blur(img: &GrayImage, length: f64, angle_deg: f64) -> Result<GrayImage> {
    if !(length >= 0.0) {
        return Err(Error::invalid("motion blur length must be >= 0"));
    }
    let taps = length.round() as usize;
    if taps < 2 {
        return Ok(img.clone());
    }
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (w, h) = img.dims();
    let offsets: Vec<f64> = (0..taps).map(|i| i as f64 - (taps - 1) as f64 / 2.0).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for &t in &offsets {
                acc += bilinear(img, x as f64 + t * c, y as f64 + t * s);
            }
            out.push(acc / taps as f64);
        }
    }
    GrayImage::from_clamped(w, h, out)
}

/// `(1 - strength) * p + strength * airlight`.
pub fn haze(img: &GrayImage, airlight: f64, strength: f64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&airlight) || !(0.0..=1.0).contains(&strength) {
        return Err(Error::invalid("haze airlight and strength must lie in [0, 1]"));
    }
    Ok(img.map(|p| (1.0 - strength) * p + strength * airlight))
}
