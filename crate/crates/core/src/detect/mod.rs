//! Light proposals, proposal classification and symmetric pairing.

mod classify;
mod pairing;
mod proposals;

use serde::{Deserialize, Serialize};

pub use self::classify::{
    classify, extract_features, train_classifier, Category, ClassifiedProposal, ClassifierModel, ClassifierTraining,
    Features, LabeledFeatures, FEATURE_NAMES, N_FEATURES,
};
pub use self::pairing::{candidate_pairs, greedy_pairs, pair, LightPair, PairBounds};
pub use self::proposals::{label_components, propose_with, saliency_map, Proposal};

use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, InstanceKind, LampKind};

/// Class assigned to proposals that match an annotated reflection when
/// building classifier supervision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReflectionLabel {
    /// The scene's lamp class: reflections count as evidence of the vehicle.
    #[default]
    Lamp,
    Artifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub tau: f64,
    pub a_min: usize,
    pub a_max: usize,
    /// Fractions of the frame height / width.
    pub eps_y: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub reflection_label: ReflectionLabel,
    pub classifier: ClassifierTraining,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            tau: 0.85,
            a_min: 4,
            a_max: 2000,
            eps_y: 0.02,
            d_min: 0.05,
            d_max: 0.5,
            reflection_label: ReflectionLabel::Lamp,
            classifier: ClassifierTraining::default(),
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.a_min > self.a_max {
            return Err(Error::invalid("a_min must not exceed a_max"));
        }
        if !(self.eps_y > 0.0 && self.d_min >= 0.0 && self.d_min <= self.d_max) {
            return Err(Error::invalid("pairing bounds need eps_y > 0 and 0 <= d_min <= d_max"));
        }
        Ok(())
    }

    pub fn bounds(&self, width: usize, height: usize) -> PairBounds {
        PairBounds {
            eps_y: self.eps_y * height as f64,
            d_min: self.d_min * width as f64,
            d_max: self.d_max * width as f64,
        }
    }
}

/// Proposals of an (already enhanced) frame.
pub fn propose(frame: &GrayImage, cfg: &DetectConfig) -> Vec<Proposal> {
    let s = saliency_map(frame);
    propose_with(&s, Some(frame), cfg.tau, (cfg.a_min, cfg.a_max))
}

/// One frame's detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub width: usize,
    pub height: usize,
    pub classified: Vec<ClassifiedProposal>,
    pub pairs: Vec<LightPair>,
}

impl FrameDetections {
    /// Light proposals not used by any pair.
    pub fn unpaired(&self) -> Vec<usize> {
        let used: Vec<usize> = self.pairs.iter().flat_map(|p| [p.left_index, p.right_index]).collect();
        (0..self.classified.len())
            .filter(|i| self.classified[*i].label.is_light() && !used.contains(i))
            .collect()
    }
}

pub fn detect_frame(
    frame: &GrayImage,
    frame_index: u64,
    model: &ClassifierModel,
    cfg: &DetectConfig,
) -> Result<FrameDetections> {
    let proposals = propose(frame, cfg);
    let classified = classify(model, frame, &proposals)?;
    let pairs = pair(&classified, &cfg.bounds(frame.width(), frame.height()));
    Ok(FrameDetections {
        frame_index,
        width: frame.width(),
        height: frame.height(),
        classified,
        pairs,
    })
}

/// One-to-one greedy matching by ascending center distance, keeping pairs
/// within `radius`. Returns `(a_index, b_index)`; ties break by index.
pub fn match_points(a: &[[f64; 2]], b: &[[f64; 2]], radius: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            if d <= radius {
                cands.push((d, i, j));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut ua = vec![false; a.len()];
    let mut ub = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !ua[i] && !ub[j] {
            ua[i] = true;
            ub[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Supervision label for an annotated instance kind.
pub fn supervision_label(kind: InstanceKind, lamp: LampKind, reflections: ReflectionLabel) -> Category {
    let as_lamp = match lamp {
        LampKind::Headlight => Category::Headlight,
        LampKind::Taillight => Category::Taillight,
    };
    match (kind, reflections) {
        (InstanceKind::Direct, _) | (InstanceKind::Reflection, ReflectionLabel::Lamp) => as_lamp,
        (InstanceKind::Reflection, ReflectionLabel::Artifact) => Category::Artifact,
    }
}

/// Features and labels for every proposal of one frame: proposals matched
/// to an annotation within `radius` take its label, the rest are artifacts.
pub fn label_frame(
    frame: &GrayImage,
    instances: &[(InstanceKind, [f64; 2])],
    lamp: LampKind,
    radius: f64,
    cfg: &DetectConfig,
) -> Result<Vec<LabeledFeatures>> {
    let proposals = propose(frame, cfg);
    let pts: Vec<[f64; 2]> = proposals.iter().map(|p| p.centroid).collect();
    let gt: Vec<[f64; 2]> = instances.iter().map(|i| i.1).collect();
    let mut labels = vec![Category::Artifact; proposals.len()];
    for (pi, gi) in match_points(&pts, &gt, radius) {
        labels[pi] = supervision_label(instances[gi].0, lamp, cfg.reflection_label);
    }
    proposals
        .iter()
        .zip(labels)
        .map(|(p, label)| {
            Ok(LabeledFeatures {
                features: extract_features(frame, p)?,
                label,
            })
        })
        .collect()
}
