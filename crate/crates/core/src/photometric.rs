//! Tone mapping (`p -> p^gamma`) followed by contrast-limited adaptive
//! histogram equalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricConfig {
    pub gamma: f64,
    /// Tile grid `(tx, ty)`.
    pub clahe_tiles: [usize; 2],
    /// Multiple of the uniform bin height at which histograms are clipped.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            gamma: 0.7,
            clahe_tiles: [8, 8],
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl PhotometricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.clahe_tiles[0] == 0 || self.clahe_tiles[1] == 0 {
            return Err(Error::invalid("clahe_tiles must be >= 1 in each direction"));
        }
        if !(self.clip_limit >= 1.0) {
            return Err(Error::invalid(format!(
                "clip_limit must be >= 1, got {}",
                self.clip_limit
            )));
        }
        if self.bins < 2 {
            return Err(Error::invalid("bins must be >= 2"));
        }
        Ok(())
    }
}

pub fn gamma_correct(img: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    Ok(img.map(|p| p.powf(gamma)))
}

/// Tile boundaries along one axis: `n` tiles of `len / n` pixels, the last one
/// absorbing the remainder.
fn tile_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    (0..n)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == n { len } else { start + base };
            (start, end)
        })
        .collect()
}

#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64) as usize).min(bins - 1)
}

/// Clip at `limit` and hand the excess to bins still below the limit until
/// nothing is left. No bin ends above `limit`.
fn clip_histogram(hist: &mut [f64], limit: f64) {
    let mut excess = 0.0;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let total: f64 = hist.iter().sum::<f64>() + excess;
    while excess > 1e-12 * total {
        let open = hist.iter().filter(|&&h| h < limit).count();
        if open == 0 {
            break;
        }
        let share = excess / open as f64;
        excess = 0.0;
        for h in hist.iter_mut() {
            if *h < limit {
                let room = limit - *h;
                if share > room {
                    *h = limit;
                    excess += share - room;
                } else {
                    *h += share;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum TileMap {
    Identity,
    Lut(Vec<f64>),
}

impl TileMap {
    #[inline]
    fn apply(&self, v: f64, bins: usize) -> f64 {
        match self {
            TileMap::Identity => v,
            TileMap::Lut(lut) => lut[bin_of(v, bins)],
        }
    }
}

struct TileGrid {
    xs: Vec<(usize, usize)>,
    ys: Vec<(usize, usize)>,
    hists: Vec<Vec<f64>>,
    maps: Vec<TileMap>,
}

fn build_tiles(img: &GrayImage, cfg: &PhotometricConfig) -> Result<TileGrid> {
    cfg.validate()?;
    let [tx, ty] = cfg.clahe_tiles;
    let (w, h) = img.dims();
    if w < tx || h < ty {
        return Err(Error::Dimension(format!(
            "{w}x{h} image is smaller than the {tx}x{ty} tile grid"
        )));
    }
    let xs = tile_bounds(w, tx);
    let ys = tile_bounds(h, ty);
    let bins = cfg.bins;
    let mut hists = Vec::with_capacity(tx * ty);
    let mut maps = Vec::with_capacity(tx * ty);
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let mut hist = vec![0.0; bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(img.get(x, y), bins)] += 1.0;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let occupied = hist.iter().filter(|&&c| c > 0.0).count();
            clip_histogram(&mut hist, cfg.clip_limit * n / bins as f64);
            if occupied <= 1 {
                maps.push(TileMap::Identity);
            } else {
                let mut acc = 0.0;
                let lut = hist
                    .iter()
                    .map(|&c| {
                        acc += c;
                        (acc / n).clamp(0.0, 1.0)
                    })
                    .collect();
                maps.push(TileMap::Lut(lut));
            }
            hists.push(hist);
        }
    }
    Ok(TileGrid { xs, ys, hists, maps })
}

/// For each pixel coordinate along an axis: the two neighbouring tile indices
/// and the interpolation weight towards the second one.
fn interp_axis(bounds: &[(usize, usize)], len: usize) -> Vec<(usize, usize, f64)> {
    let centers: Vec<f64> = bounds.iter().map(|&(a, b)| (a as f64 + b as f64) / 2.0).collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|p| {
            let c = p as f64 + 0.5;
            if c <= centers[0] {
                (0, 0, 0.0)
            } else if c >= centers[last] {
                (last, last, 0.0)
            } else {
                let i = centers.iter().rposition(|&cc| cc <= c).unwrap();
                let f = (c - centers[i]) / (centers[i + 1] - centers[i]);
                (i, i + 1, f)
            }
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization.
///
/// Each tile's histogram is clipped at `clip_limit * n / bins`, the excess is
/// redistributed over the remaining bins, and the resulting CDF becomes the
/// tile mapping. A tile whose histogram occupies a single bin maps to the
/// identity. Pixels blend the mappings of the four surrounding tile centres
/// bilinearly.
pub fn clahe(img: &GrayImage, cfg: &PhotometricConfig) -> Result<GrayImage> {
    let grid = build_tiles(img, cfg)?;
    let (w, h) = img.dims();
    let tx = grid.xs.len();
    let ix = interp_axis(&grid.xs, w);
    let iy = interp_axis(&grid.ys, h);
    let bins = cfg.bins;
    let mut out = Vec::with_capacity(w * h);
    for (y, &(ty0, ty1, fy)) in iy.iter().enumerate() {
        for (x, &(tx0, tx1, fx)) in ix.iter().enumerate() {
            let v = img.get(x, y);
            let a = grid.maps[ty0 * tx + tx0].apply(v, bins);
            let b = grid.maps[ty0 * tx + tx1].apply(v, bins);
            let c = grid.maps[ty1 * tx + tx0].apply(v, bins);
            let d = grid.maps[ty1 * tx + tx1].apply(v, bins);
            let top = a + fx * (b - a);
            let bot = c + fx * (d - c);
            out.push(top + fy * (bot - top));
        }
    }
    GrayImage::from_clamped(w, h, out)
}

/// Clipped per-tile histograms (row-major tile order) as used to build the
/// CLAHE mappings.
pub fn tile_histograms(img: &GrayImage, cfg: &PhotometricConfig) -> Result<Vec<Vec<f64>>> {
    Ok(build_tiles(img, cfg)?.hists)
}

/// `clahe(gamma_correct(img))`.
pub fn enhance(img: &GrayImage, cfg: &PhotometricConfig) -> Result<GrayImage> {
    clahe(&gamma_correct(img, cfg.gamma)?, cfg)
}
