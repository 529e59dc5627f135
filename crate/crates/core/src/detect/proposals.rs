//! Center-surround saliency and connected-component light proposals.

use serde::{Deserialize, Serialize};

use crate::imgcore::{BBox, GrayImage};

/// Mean over a `(2r+1)^2` window with edge-replicated borders.
fn box_mean(img: &GrayImage, r: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let r = r as isize;
    let n = (2 * r + 1) as f64;
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dx in -r..=r {
                s += img.get_clamped(x as isize + dx, y as isize);
            }
            rows[y * w + x] = s / n;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -r..=r {
                let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                s += rows[yy * w + x];
            }
            out[y * w + x] = s / n;
        }
    }
    out
}

/// 3x3 mean minus 9x9 mean (edge-replicated), rectified and scaled so the
/// maximum is 1. An image without positive contrast maps to all zeros.
pub fn saliency_map(img: &GrayImage) -> GrayImage {
    let center = box_mean(img, 1);
    let surround = box_mean(img, 4);
    let mut s: Vec<f64> = center.iter().zip(&surround).map(|(c, s)| (c - s).max(0.0)).collect();
    let peak = s.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        s.iter_mut().for_each(|v| *v = (*v / peak).min(1.0));
    }
    GrayImage::from_clamped(img.width(), img.height(), s).expect("same dims as input")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    /// Pixel-edge box: pixel `(x, y)` covers `[x, x+1) x [y, y+1)`.
    pub bbox: BBox,
    /// Mean of member pixel centers.
    pub centroid: [f64; 2],
    pub area: usize,
    /// Peak of the source frame inside the component (0 when only a
    /// saliency map was available).
    pub peak_intensity: f64,
    /// Peak saliency inside the component.
    pub saliency_score: f64,
    /// Member-pixel sides that border a non-member (4-neighbour crack length).
    pub boundary_edges: usize,
}

/// 8-connected labels of `mask` (row-major); 0 = background, components
/// numbered 1.. in raster order of their first pixel.
pub fn label_components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; width * height];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..width * height {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (x, y) = ((p % width) as isize, (p / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let q = ny as usize * width + nx as usize;
                    if mask[q] && labels[q] == 0 {
                        labels[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
    }
    (labels, next)
}

struct Accum {
    min: (usize, usize),
    max: (usize, usize),
    sum: (f64, f64),
    area: usize,
    peak_s: f64,
    peak_i: f64,
    edges: usize,
}

/// Proposals from thresholding `saliency` at `tau` (strictly greater), with
/// optional source frame for the peak intensity.
pub fn propose_with(
    saliency: &GrayImage,
    frame: Option<&GrayImage>,
    tau: f64,
    area_range: (usize, usize),
) -> Vec<Proposal> {
    let (w, h) = saliency.dims();
    let mask: Vec<bool> = saliency.data().iter().map(|&v| v > tau).collect();
    let (labels, n) = label_components(&mask, w, h);
    let mut acc: Vec<Accum> = (0..n)
        .map(|_| Accum {
            min: (usize::MAX, usize::MAX),
            max: (0, 0),
            sum: (0.0, 0.0),
            area: 0,
            peak_s: f64::NEG_INFINITY,
            peak_i: 0.0,
            edges: 0,
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let a = &mut acc[l as usize - 1];
            a.min = (a.min.0.min(x), a.min.1.min(y));
            a.max = (a.max.0.max(x), a.max.1.max(y));
            a.sum.0 += x as f64 + 0.5;
            a.sum.1 += y as f64 + 0.5;
            a.area += 1;
            a.peak_s = a.peak_s.max(saliency.get(x, y));
            if let Some(f) = frame {
                a.peak_i = a.peak_i.max(f.get(x, y));
            }
            let member = |xx: isize, yy: isize| {
                xx >= 0 && yy >= 0 && xx < w as isize && yy < h as isize && labels[yy as usize * w + xx as usize] == l
            };
            let (xi, yi) = (x as isize, y as isize);
            a.edges += [(xi - 1, yi), (xi + 1, yi), (xi, yi - 1), (xi, yi + 1)]
                .iter()
                .filter(|&&(xx, yy)| !member(xx, yy))
                .count();
        }
    }
    let mut out: Vec<Proposal> = acc
        .into_iter()
        .filter(|a| a.area >= area_range.0 && a.area <= area_range.1)
        .map(|a| Proposal {
            bbox: BBox {
                x: a.min.0 as f64,
                y: a.min.1 as f64,
                w: (a.max.0 - a.min.0 + 1) as f64,
                h: (a.max.1 - a.min.1 + 1) as f64,
            },
            centroid: [a.sum.0 / a.area as f64, a.sum.1 / a.area as f64],
            area: a.area,
            peak_intensity: a.peak_i,
            saliency_score: a.peak_s,
            boundary_edges: a.edges,
        })
        .collect();
    out.sort_by(|a, b| {
        a.centroid[1]
            .total_cmp(&b.centroid[1])
            .then(a.centroid[0].total_cmp(&b.centroid[0]))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn constant_image_has_no_saliency() {
        let img = GrayImage::filled(20, 15, 0.6).unwrap();
        assert!(saliency_map(&img).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn blob_is_the_saliency_peak() {
        let img = GrayImage::from_fn(24, 24, |x, y| {
            if (10..12).contains(&x) && (7..9).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let s = saliency_map(&img);
        let best = (0..s.len())
            .max_by(|&a, &b| s.data()[a].total_cmp(&s.data()[b]))
            .unwrap();
        let (bx, by) = (best % 24, best / 24);
        assert!((10..12).contains(&bx) && (7..9).contains(&by));
        assert_eq!(s.data()[best], 1.0);
    }

    #[test]
    fn saliency_matches_double_loop() {
        let mut r = rng::rng_from_seed(4);
        let img = GrayImage::from_fn(19, 13, |_, _| rng::unit(&mut r)).unwrap();
        let s = saliency_map(&img);
        let mean = |x: usize, y: usize, rad: isize| {
            let mut t = 0.0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    t += img.get_clamped(x as isize + dx, y as isize + dy);
                }
            }
            t / ((2 * rad + 1) * (2 * rad + 1)) as f64
        };
        let raw: Vec<f64> = (0..13)
            .flat_map(|y| (0..19).map(move |x| (x, y)))
            .map(|(x, y)| (mean(x, y, 1) - mean(x, y, 4)).max(0.0))
            .collect();
        let peak = raw.iter().copied().fold(0.0, f64::max);
        for (a, b) in s.data().iter().zip(&raw) {
            assert!((a - b / peak).abs() < 1e-9);
        }
    }

    #[test]
    fn labeling_matches_flood_fill_partition() {
        let mut r = rng::rng_from_seed(8);
        for _ in 0..20 {
            let (w, h) = (12, 9);
            let mask: Vec<bool> = (0..w * h).map(|_| rng::unit(&mut r) < 0.4).collect();
            let (labels, n) = label_components(&mask, w, h);
            // oracle: two foreground pixels share a label iff a path of
            // 8-adjacent foreground pixels joins them (transitive closure)
            let mut reach = vec![vec![false; w * h]; w * h];
            for p in 0..w * h {
                for q in 0..w * h {
                    let (px, py, qx, qy) = ((p % w) as i64, (p / w) as i64, (q % w) as i64, (q / w) as i64);
                    reach[p][q] = mask[p] && mask[q] && (px - qx).abs() <= 1 && (py - qy).abs() <= 1;
                }
            }
            for k in 0..w * h {
                for p in 0..w * h {
                    if reach[p][k] {
                        for q in 0..w * h {
                            if reach[k][q] {
                                reach[p][q] = true;
                            }
                        }
                    }
                }
            }
            for p in 0..w * h {
                assert_eq!(labels[p] != 0, mask[p]);
                for q in 0..w * h {
                    if mask[p] && mask[q] {
                        assert_eq!(labels[p] == labels[q], reach[p][q]);
                    }
                }
            }
            assert!(labels.iter().all(|&l| l <= n));
        }
    }

    #[test]
    fn two_blobs_two_proposals() {
        let s = GrayImage::from_fn(30, 20, |x, y| {
            let a = (3..6).contains(&x) && (4..7).contains(&y);
            let b = (20..24).contains(&x) && (10..12).contains(&y);
            if a || b {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let p = propose_with(&s, None, 0.85, (4, 2000));
        assert_eq!(p.len(), 2);
        assert_eq!(
            p[0].bbox,
            BBox {
                x: 3.0,
                y: 4.0,
                w: 3.0,
                h: 3.0
            }
        );
        assert_eq!(
            p[1].bbox,
            BBox {
                x: 20.0,
                y: 10.0,
                w: 4.0,
                h: 2.0
            }
        );
        assert_eq!(p[0].centroid, [4.5, 5.5]);
        assert_eq!(p[1].area, 8);
        assert_eq!(p[0].boundary_edges, 12);
        assert!(propose_with(&GrayImage::filled(30, 20, 0.0).unwrap(), None, 0.85, (4, 2000)).is_empty());
    }
}
