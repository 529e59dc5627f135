//! Full-reference image quality metrics: PSNR, SSIM and pixel error
//! statistics. All reductions use compensated summation.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Kahan-Babuska (Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = KahanSum::new();
    for v in values {
        k.add(v);
    }
    k.value()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Same quantity as `mae`; both labels are reported.
    pub l1: f64,
}

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    a.ensure_same_dims(b)
}

pub fn error_stats(a: &GrayImage, b: &GrayImage) -> Result<ErrorStats> {
    check_dims(a, b)?;
    let n = a.len() as f64;
    let mut sq = KahanSum::new();
    let mut ab = KahanSum::new();
    for (x, y) in a.data().iter().zip(b.data()) {
        let d = x - y;
        sq.add(d * d);
        ab.add(d.abs());
    }
    let mse = sq.value() / n;
    let mae = ab.value() / n;
    Ok(ErrorStats {
        mse,
        rmse: mse.sqrt(),
        mae,
        l1: mae,
    })
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10 log10(peak^2 / mse)`, or [`PSNR_CAP_DB`] when the images are identical.
pub fn psnr(a: &GrayImage, b: &GrayImage, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(error_stats(a, b)?.mse, peak))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    pub window: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 7,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "ssim window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.gaussian_sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::invalid("ssim constants must be positive"));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 2-D Gaussian window, row-major `window x window`.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g1: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let mut k: Vec<f64> = g1.iter().flat_map(|&a| g1.iter().map(move |&b| a * b)).collect();
        let s = kahan_sum(k.iter().copied());
        for v in &mut k {
            *v /= s;
        }
        k
    }
}

/// Mean SSIM over every valid window position of two equally sized rasters.
/// When `grad` is given it receives d(mean SSIM)/dx.
pub(crate) fn ssim_raw(
    x: &[f64],
    y: &[f64],
    width: usize,
    height: usize,
    cfg: &SsimConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    cfg.validate()?;
    let win = cfg.window;
    if width < win || height < win {
        return Err(Error::Dimension(format!(
            "{width}x{height} image is smaller than the {win}x{win} ssim window"
        )));
    }
    let kernel = cfg.kernel();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let nx = width - win + 1;
    let ny = height - win + 1;
    let count = (nx * ny) as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let mut total = KahanSum::new();
    for j in 0..ny {
        for i in 0..nx {
            let (mut mx, mut my, mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for v in 0..win {
                let row = (j + v) * width + i;
                let krow = &kernel[v * win..(v + 1) * win];
                for (u, &g) in krow.iter().enumerate() {
                    let a = x[row + u];
                    let b = y[row + u];
                    mx += g * a;
                    my += g * b;
                    exx += g * (a * a);
                    eyy += g * (b * b);
                    exy += g * (a * b);
                }
            }
            let sxx = exx - mx * mx;
            let syy = eyy - my * my;
            let sxy = exy - mx * my;
            let n1 = 2.0 * mx * my + c1;
            let n2 = 2.0 * sxy + c2;
            let d1 = mx * mx + my * my + c1;
            let d2 = sxx + syy + c2;
            let den = d1 * d2;
            let s = n1 * n2 / den;
            total.add(s);
            if let Some(g) = grad.as_deref_mut() {
                // dS/dmu_x with E[x^2], E[xy] held fixed, plus the two moment terms.
                let d_mx = (2.0 * my * n2 - 2.0 * my * n1) / den - s * (2.0 * mx / d1 - 2.0 * mx / d2);
                let d_exy = 2.0 * n1 / den;
                let d_exx = -s / d2;
                for v in 0..win {
                    let row = (j + v) * width + i;
                    let krow = &kernel[v * win..(v + 1) * win];
                    for (u, &k) in krow.iter().enumerate() {
                        let p = row + u;
                        g[p] += k * (d_mx + 2.0 * d_exx * x[p] + d_exy * y[p]) / count;
                    }
                }
            }
        }
    }
    Ok(total.value() / count)
}

/// Gaussian-weighted SSIM averaged over all valid (unpadded) windows.
pub fn ssim(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> Result<f64> {
    check_dims(a, b)?;
    ssim_raw(a.data(), b.data(), a.width(), a.height(), cfg, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub l1: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub rows: Vec<QualityRow>,
    /// Unweighted mean of every column.
    pub mean: QualityRow,
}

pub const CSV_COLUMNS: [&str; 7] = ["name", "psnr_db", "ssim", "l1", "mse", "rmse", "mae"];

pub fn quality_row(
    name: impl Into<String>,
    restored: &GrayImage,
    reference: &GrayImage,
    cfg: &SsimConfig,
) -> Result<QualityRow> {
    let st = error_stats(restored, reference)?;
    Ok(QualityRow {
        name: name.into(),
        psnr_db: psnr_from_mse(st.mse, 1.0),
        ssim: ssim(restored, reference, cfg)?,
        l1: st.l1,
        mse: st.mse,
        rmse: st.rmse,
        mae: st.mae,
    })
}

pub fn aggregate_rows(rows: &[QualityRow]) -> Result<QualityRow> {
    if rows.is_empty() {
        return Err(Error::invalid("quality report needs at least one pair"));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&QualityRow) -> f64| kahan_sum(rows.iter().map(f)) / n;
    Ok(QualityRow {
        name: "mean".into(),
        psnr_db: mean(|r| r.psnr_db),
        ssim: mean(|r| r.ssim),
        l1: mean(|r| r.l1),
        mse: mean(|r| r.mse),
        rmse: mean(|r| r.rmse),
        mae: mean(|r| r.mae),
    })
}

/// Per-pair metrics plus their means. Pairs are `(name, restored, reference)`.
pub fn quality_report<'a>(
    pairs: impl IntoIterator<Item = (String, &'a GrayImage, &'a GrayImage)>,
    cfg: &SsimConfig,
) -> Result<QualityReport> {
    let rows = pairs
        .into_iter()
        .map(|(name, r, t)| quality_row(name, r, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mean = aggregate_rows(&rows)?;
    Ok(QualityReport { rows, mean })
}

impl QualityReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.write_record([
                r.name.clone(),
                r.psnr_db.to_string(),
                r.ssim.to_string(),
                r.l1.to_string(),
                r.mse.to_string(),
                r.rmse.to_string(),
                r.mae.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parse CSV produced by [`QualityReport::write_csv`]. The final row is the mean.
    pub fn read_csv(body: &str) -> Result<QualityReport> {
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::invalid(format!("csv: {e}")))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::invalid("short csv row"))?
                    .parse()
                    .map_err(|e| Error::invalid(format!("csv number: {e}")))
            };
            rows.push(QualityRow {
                name: rec.get(0).unwrap_or_default().to_string(),
                psnr_db: num(1)?,
                ssim: num(2)?,
                l1: num(3)?,
                mse: num(4)?,
                rmse: num(5)?,
                mae: num(6)?,
            });
        }
        let mean = rows.pop().ok_or_else(|| Error::invalid("empty quality csv"))?;
        Ok(QualityReport { rows, mean })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_image(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut r = rng::rng_from_seed(seed);
        GrayImage::from_fn(w, h, |_, _| rng::unit(&mut r)).unwrap()
    }

    #[test]
    fn error_stats_closed_forms() {
        let a = random_image(1, 8, 8);
        let s = error_stats(&a, &a).unwrap();
        assert_eq!((s.mse, s.rmse, s.mae, s.l1), (0.0, 0.0, 0.0, 0.0));
        let z = GrayImage::filled(4, 4, 0.0).unwrap();
        let h = GrayImage::filled(4, 4, 0.5).unwrap();
        let s = error_stats(&z, &h).unwrap();
        assert_eq!((s.mse, s.rmse, s.mae, s.l1), (0.25, 0.5, 0.5, 0.5));
        assert!(error_stats(&z, &GrayImage::filled(4, 5, 0.0).unwrap()).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(2, 8, 8);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let z = GrayImage::filled(4, 4, 0.0).unwrap();
        let h = GrayImage::filled(4, 4, 0.5).unwrap();
        assert!((psnr(&z, &h, 1.0).unwrap() - 6.0206).abs() < 1e-4);
        assert!((psnr(&z, &h, 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let z = GrayImage::filled(4, 4, 0.0).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=20 {
            let b = GrayImage::filled(4, 4, k as f64 / 20.0).unwrap();
            let p = psnr(&z, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_of_zero_variance_windows_has_closed_form() {
        let cfg = SsimConfig::default();
        let a = GrayImage::filled(10, 9, 0.2).unwrap();
        let b = GrayImage::filled(10, 9, 0.4).unwrap();
        let (c1, c2) = (cfg.c1(), cfg.c2());
        let expected = ((2.0 * 0.2 * 0.4 + c1) * (2.0 * 0.0 + c2)) / ((0.04 + 0.16 + c1) * (0.0 + 0.0 + c2));
        assert!((ssim(&a, &b, &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_symmetry_and_size() {
        let cfg = SsimConfig::default();
        for seed in 0..10 {
            let a = random_image(seed, 12, 11);
            let b = random_image(seed + 100, 12, 11);
            assert_eq!(ssim(&a, &a, &cfg).unwrap(), 1.0);
            assert_eq!(ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
            let v = ssim(&a, &b, &cfg).unwrap();
            assert!(v > -1.0 && v <= 1.0);
        }
        let small = random_image(0, 6, 20);
        assert!(matches!(ssim(&small, &small, &cfg), Err(Error::Dimension(_))));
        let bad = SsimConfig {
            window: 4,
            ..SsimConfig::default()
        };
        let a = random_image(0, 8, 8);
        assert!(ssim(&a, &a, &bad).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let cfg = SsimConfig::default();
        let (w, h) = (10, 9);
        let a = random_image(5, w, h);
        let b = random_image(6, w, h);
        let mut grad = vec![0.0; w * h];
        ssim_raw(a.data(), b.data(), w, h, &cfg, Some(&mut grad)).unwrap();
        let eps = 1e-6;
        for p in [0, 7, 23, 45, 89] {
            let mut xp = a.data().to_vec();
            xp[p] += eps;
            let mut xm = a.data().to_vec();
            xm[p] -= eps;
            let fp = ssim_raw(&xp, b.data(), w, h, &cfg, None).unwrap();
            let fm = ssim_raw(&xm, b.data(), w, h, &cfg, None).unwrap();
            let fd = (fp - fm) / (2.0 * eps);
            assert!((fd - grad[p]).abs() < 1e-7, "pixel {p}: {fd} vs {}", grad[p]);
        }
    }

    #[test]
    fn report_rows_and_mean() {
        let cfg = SsimConfig::default();
        let a = random_image(1, 9, 9);
        let b = random_image(2, 9, 9);
        let rep = quality_report([("same".to_string(), &a, &a)], &cfg).unwrap();
        let r = &rep.rows[0];
        assert_eq!(
            (r.psnr_db, r.ssim, r.l1, r.mse, r.rmse, r.mae),
            (99.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        );
        let rep = quality_report([("same".to_string(), &a, &a), ("diff".to_string(), &a, &b)], &cfg).unwrap();
        assert!((rep.mean.psnr_db - (rep.rows[0].psnr_db + rep.rows[1].psnr_db) / 2.0).abs() < 1e-12);
        assert!((rep.mean.ssim - (rep.rows[0].ssim + rep.rows[1].ssim) / 2.0).abs() < 1e-12);
        assert!((rep.rows[1].rmse - rep.rows[1].mse.sqrt()).abs() < 1e-12);
        assert_eq!(rep.rows[1].mae, rep.rows[1].l1);
        assert!(quality_report(std::iter::empty(), &cfg).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SsimConfig::default();
        let a = random_image(3, 9, 9);
        let b = random_image(4, 9, 9);
        let rep = quality_report([("x.png".to_string(), &a, &b), ("y.png".to_string(), &b, &a)], &cfg).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,psnr_db,ssim,l1,mse,rmse,mae\n"));
        let back = QualityReport::read_csv(&text).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()).max(1e-300);
        for (x, y) in back
            .rows
            .iter()
            .chain([&back.mean])
            .zip(rep.rows.iter().chain([&rep.mean]))
        {
            assert_eq!(x.name, y.name);
            assert!(rel(x.psnr_db, y.psnr_db) && rel(x.ssim, y.ssim) && rel(x.mse, y.mse));
            assert!(rel(x.l1, y.l1) && rel(x.rmse, y.rmse) && rel(x.mae, y.mae));
        }
    }
}
