//! Hand-crafted region features and a multinomial logistic classifier.

use serde::{Deserialize, Serialize};

use super::proposals::Proposal;
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;

pub const FEATURE_NAMES: [&str; 7] = [
    "mean_intensity",
    "peak_intensity",
    "area",
    "aspect_ratio",
    "norm_y",
    "border_contrast",
    "circularity",
];
pub const N_FEATURES: usize = FEATURE_NAMES.len();
pub const RING_WIDTH: usize = 2;

pub type Features = [f64; N_FEATURES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Headlight,
    Taillight,
    Artifact,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Headlight, Category::Taillight, Category::Artifact];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_light(self) -> bool {
        self != Category::Artifact
    }
}

/// Features of one proposal, in `FEATURE_NAMES` order. Intensity statistics
/// use the bounding box; the ring is the `RING_WIDTH`-pixel band around it,
/// clipped to the frame. Circularity is `4 pi area / perimeter^2` with the
/// perimeter estimated as `pi/4` times the component's crack length.
pub fn extract_features(img: &GrayImage, p: &Proposal) -> Result<Features> {
    let (iw, ih) = img.dims();
    if !p.bbox.inside(iw, ih) || p.bbox.w < 1.0 || p.bbox.h < 1.0 {
        return Err(Error::invalid(format!(
            "proposal box {:?} lies outside the {iw}x{ih} frame",
            p.bbox
        )));
    }
    let (x0, y0) = (p.bbox.x as usize, p.bbox.y as usize);
    let (x1, y1) = (x0 + p.bbox.w as usize, y0 + p.bbox.h as usize);
    let (mut inside, mut n_in, mut peak) = (0.0, 0usize, 0.0f64);
    let (mut ring, mut n_ring) = (0.0, 0usize);
    let rx0 = x0.saturating_sub(RING_WIDTH);
    let ry0 = y0.saturating_sub(RING_WIDTH);
    let rx1 = (x1 + RING_WIDTH).min(iw);
    let ry1 = (y1 + RING_WIDTH).min(ih);
    for y in ry0..ry1 {
        for x in rx0..rx1 {
            let v = img.get(x, y);
            if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                inside += v;
                n_in += 1;
                peak = peak.max(v);
            } else {
                ring += v;
                n_ring += 1;
            }
        }
    }
    let mean = inside / n_in as f64;
    let ring_mean = if n_ring > 0 { ring / n_ring as f64 } else { 0.0 };
    let perimeter = std::f64::consts::FRAC_PI_4 * p.boundary_edges as f64;
    let circularity = if perimeter > 0.0 {
        4.0 * std::f64::consts::PI * p.area as f64 / (perimeter * perimeter)
    } else {
        1.0
    };
    Ok([
        mean,
        peak,
        p.area as f64,
        p.bbox.w / p.bbox.h,
        p.centroid[1] / ih as f64,
        mean - ring_mean,
        circularity,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub feature_names: Vec<String>,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// One row of `N_FEATURES` weights per category.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub features: Features,
    pub label: Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTraining {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub min_per_category: usize,
}

impl Default for ClassifierTraining {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iterations: 10_000,
            tolerance: 1e-6,
            min_per_category: 10,
        }
    }
}

fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

impl ClassifierModel {
    /// All-zero weights: every category gets probability 1/3.
    pub fn uniform() -> Self {
        Self {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            feature_mean: vec![0.0; N_FEATURES],
            feature_std: vec![1.0; N_FEATURES],
            weights: vec![vec![0.0; N_FEATURES]; 3],
            bias: vec![0.0; 3],
            iterations: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let names_ok = self
            .feature_names
            .iter()
            .map(String::as_str)
            .eq(FEATURE_NAMES.iter().copied());
        let shapes_ok = self.feature_mean.len() == N_FEATURES
            && self.feature_std.len() == N_FEATURES
            && self.weights.len() == 3
            && self.weights.iter().all(|r| r.len() == N_FEATURES)
            && self.bias.len() == 3;
        let finite = self
            .feature_mean
            .iter()
            .chain(&self.feature_std)
            .chain(self.weights.iter().flatten())
            .chain(&self.bias)
            .all(|v| v.is_finite())
            && self.feature_std.iter().all(|&s| s > 0.0);
        if !(names_ok && shapes_ok && finite) {
            return Err(Error::invalid("classifier model is untrained or malformed"));
        }
        Ok(())
    }

    fn normalize(&self, f: &Features) -> Features {
        let mut out = [0.0; N_FEATURES];
        for k in 0..N_FEATURES {
            out[k] = (f[k] - self.feature_mean[k]) / self.feature_std[k];
        }
        out
    }

    fn logits_norm(&self, x: &Features) -> [f64; 3] {
        let mut z = [0.0; 3];
        for c in 0..3 {
            z[c] = self.bias[c] + self.weights[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        z
    }

    /// Category probabilities in `Category::ALL` order.
    pub fn probabilities(&self, f: &Features) -> [f64; 3] {
        softmax(self.logits_norm(&self.normalize(f)))
    }

    /// Arg-max category; ties go to the earlier category.
    pub fn predict(&self, f: &Features) -> (Category, f64, [f64; 3]) {
        let p = self.probabilities(f);
        let mut best = 0;
        for c in 1..3 {
            if p[c] > p[best] {
                best = c;
            }
        }
        (Category::ALL[best], p[best], p)
    }
}

/// Full-batch gradient descent on softmax cross-entropy over z-scored
/// features, until the relative loss change drops below the tolerance.
pub fn train_classifier(data: &[LabeledFeatures], cfg: &ClassifierTraining) -> Result<ClassifierModel> {
    for c in Category::ALL {
        let n = data.iter().filter(|d| d.label == c).count();
        if n < cfg.min_per_category {
            return Err(Error::invalid(format!(
                "category {c:?} has {n} examples, need at least {}",
                cfg.min_per_category
            )));
        }
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; N_FEATURES];
    let mut std = vec![0.0; N_FEATURES];
    for k in 0..N_FEATURES {
        mean[k] = data.iter().map(|d| d.features[k]).sum::<f64>() / n;
        let var = data.iter().map(|d| (d.features[k] - mean[k]).powi(2)).sum::<f64>() / n;
        std[k] = var.sqrt();
        if !(std[k] > 1e-12 * (1.0 + mean[k].abs())) {
            return Err(Error::invalid(format!(
                "feature {} is constant over the training set",
                FEATURE_NAMES[k]
            )));
        }
    }
    let mut model = ClassifierModel {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        feature_mean: mean,
        feature_std: std,
        weights: vec![vec![0.0; N_FEATURES]; 3],
        bias: vec![0.0; 3],
        iterations: 0,
    };
    let xs: Vec<Features> = data.iter().map(|d| model.normalize(&d.features)).collect();
    let mut prev = f64::INFINITY;
    for it in 0..cfg.max_iterations {
        let mut gw = [[0.0; N_FEATURES]; 3];
        let mut gb = [0.0; 3];
        let mut loss = 0.0;
        for (x, d) in xs.iter().zip(data) {
            let p = softmax(model.logits_norm(x));
            loss -= p[d.label.index()].max(1e-300).ln();
            for c in 0..3 {
                let e = p[c] - (c == d.label.index()) as u8 as f64;
                gb[c] += e;
                for k in 0..N_FEATURES {
                    gw[c][k] += e * x[k];
                }
            }
        }
        loss /= n;
        model.iterations = it + 1;
        if prev.is_finite() && (prev - loss).abs() <= cfg.tolerance * prev.abs().max(1e-300) {
            break;
        }
        prev = loss;
        for c in 0..3 {
            model.bias[c] -= cfg.learning_rate * gb[c] / n;
            for k in 0..N_FEATURES {
                model.weights[c][k] -= cfg.learning_rate * gw[c][k] / n;
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedProposal {
    pub proposal: Proposal,
    pub label: Category,
    pub confidence: f64,
    pub probabilities: [f64; 3],
}

pub fn classify(model: &ClassifierModel, img: &GrayImage, proposals: &[Proposal]) -> Result<Vec<ClassifiedProposal>> {
    model.validate()?;
    proposals
        .iter()
        .map(|p| {
            let (label, confidence, probabilities) = model.predict(&extract_features(img, p)?);
            Ok(ClassifiedProposal {
                proposal: p.clone(),
                label,
                confidence,
                probabilities,
            })
        })
        .collect()
}
