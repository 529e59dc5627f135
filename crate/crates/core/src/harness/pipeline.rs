//! Frame pipeline (enhance, optional rain, optional denoise, detect, track)
//! and the raw-versus-denoised evaluation.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::eval::{eval_early_warning, machine_descriptor, measure_fps, MatchCount, SceneAlerts};
use super::scripted::ScriptedScene;
use crate::config::Config;
use crate::denoise::{denoise_with, Network};
use crate::detect::{
    detect_frame, label_frame, match_points, supervision_label, train_classifier, ClassifierModel, FrameDetections,
    LabeledFeatures,
};
use crate::error::{Error, Result};
use crate::imgcore::{GrayImage, InstanceKind, Scene};
use crate::photometric::enhance;
use crate::rainsim::apply_stage;
use crate::rng;
use crate::track::{track_scene, FrameTracks, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Ground-truth matching radius (pixels, center distance).
    pub match_radius: f64,
    /// Rain stage and severity applied to evaluation frames; stage 1 = none.
    pub rain_stage: u8,
    pub rain_severity: f64,
    pub fps_warmup: usize,
    pub min_fps_frames: usize,
    /// Also train the classifier on rain-free frames of the training scenes.
    pub classifier_clean_frames: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            match_radius: 10.0,
            rain_stage: 3,
            rain_severity: 0.5,
            fps_warmup: super::eval::FPS_WARMUP,
            min_fps_frames: super::eval::MIN_FPS_FRAMES,
            classifier_clean_frames: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.match_radius > 0.0) {
            return Err(Error::invalid("match_radius must be positive"));
        }
        if !(1..=5).contains(&self.rain_stage) || !(0.0..=1.0).contains(&self.rain_severity) {
            return Err(Error::invalid("rain_stage must be 1..=5 and rain_severity in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Denoised,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Denoised => "denoised",
        }
    }
}

/// Per-frame preprocessing shared by training and evaluation. Rain is
/// synthesized on the enhanced frame, the same domain the denoiser is
/// trained in, and is excluded from timing.
struct Frontend<'a> {
    cfg: &'a Config,
    net: Option<&'a Network>,
}

impl Frontend<'_> {
    fn run(&self, scene_id: &str, frame_index: u64, img: &GrayImage, rain: bool) -> Result<(GrayImage, Duration)> {
        let t0 = Instant::now();
        let enhanced = enhance(img, &self.cfg.photometric)?;
        let mut elapsed = t0.elapsed();
        let mut frame = enhanced;
        if rain && self.cfg.eval.rain_stage > 1 {
            let stage = self
                .cfg
                .rain
                .stage(self.cfg.eval.rain_stage, self.cfg.eval.rain_severity)?;
            let seed = rng::derive_seed(rng::combine(self.cfg.seed, 0x7261_696e), scene_id, frame_index);
            frame = apply_stage(&frame, &stage, seed)?.noisy;
        }
        if let Some(net) = self.net {
            let t1 = Instant::now();
            frame = denoise_with(net, &frame)?;
            elapsed += t1.elapsed();
        }
        Ok((frame, elapsed))
    }
}

fn instances(scene: &Scene, k: usize) -> Vec<(InstanceKind, [f64; 2])> {
    scene.frames[k].instances().map(|i| (i.kind, i.keypoint)).collect()
}

/// Train the light classifier on the variant's view of the training scenes.
fn fit_classifier(fe: &Frontend<'_>, train: &[ScriptedScene]) -> Result<ClassifierModel> {
    let cfg = fe.cfg;
    let mut data: Vec<LabeledFeatures> = Vec::new();
    let mut passes = vec![true];
    if cfg.eval.classifier_clean_frames {
        passes.push(false);
    }
    for s in train {
        for (k, img) in s.frames.iter().enumerate() {
            let idx = s.scene.frames[k].frame_index;
            for &rain in &passes {
                let (frame, _) = fe.run(&s.scene.scene_id, idx, img, rain)?;
                data.extend(label_frame(
                    &frame,
                    &instances(&s.scene, k),
                    s.scene.lamp,
                    cfg.eval.match_radius,
                    &cfg.detect,
                )?);
            }
        }
    }
    train_classifier(&data, &cfg.detect.classifier)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene_id: String,
    pub gt_instances: usize,
    pub matched: usize,
    pub correct: usize,
    pub early_warning: bool,
    pub first_alert: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub config_hash: String,
    pub proposal_recall: f64,
    pub classifier_accuracy: f64,
    pub early_warning_success: f64,
    pub avg_fps: f64,
    pub machine: String,
    pub scenes: Vec<SceneEval>,
}

impl EvalReport {
    /// Aggregate metrics from per-scene rows.
    pub fn from_scenes(
        variant: Variant,
        config_hash: String,
        avg_fps: f64,
        machine: String,
        scenes: Vec<SceneEval>,
    ) -> Result<Self> {
        let gt: usize = scenes.iter().map(|s| s.gt_instances).sum();
        let matched: usize = scenes.iter().map(|s| s.matched).sum();
        let correct: usize = scenes.iter().map(|s| s.correct).sum();
        let proposal_recall = MatchCount { matched, total: gt }.percent()?;
        let classifier_accuracy = if matched == 0 {
            return Err(Error::invalid("no matched proposals to score"));
        } else {
            100.0 * correct as f64 / matched as f64
        };
        if scenes.is_empty() {
            return Err(Error::invalid("no scenes"));
        }
        let early_warning_success =
            100.0 * scenes.iter().filter(|s| s.early_warning).count() as f64 / scenes.len() as f64;
        Ok(Self {
            variant,
            config_hash,
            proposal_recall,
            classifier_accuracy,
            early_warning_success,
            avg_fps,
            machine,
            scenes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: EvalReport,
    pub classifier: ClassifierModel,
    pub detections: Vec<Vec<FrameDetections>>,
    pub tracks: Vec<Vec<FrameTracks>>,
}

/// Run one variant over the test scenes. The classifier is fit on the
/// training scenes through the same front end.
pub fn run_pipeline(
    cfg: &Config,
    variant: Variant,
    train: &[ScriptedScene],
    test: &[ScriptedScene],
    net: Option<&Network>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let net = match (variant, net) {
        (Variant::Denoised, None) => return Err(Error::invalid("the denoised variant needs a checkpoint")),
        (Variant::Denoised, Some(n)) => Some(n),
        (Variant::Raw, _) => None,
    };
    let fe = Frontend { cfg, net };
    let classifier = fit_classifier(&fe, train)?;
    let radius = cfg.eval.match_radius;

    let mut timings = Vec::new();
    let mut scene_rows = Vec::new();
    let mut all_dets = Vec::new();
    let mut all_tracks = Vec::new();
    let mut alerts = Vec::new();
    for s in test {
        let mut dets: Vec<FrameDetections> = Vec::with_capacity(s.frames.len());
        let mut row = SceneEval {
            scene_id: s.scene.scene_id.clone(),
            gt_instances: 0,
            matched: 0,
            correct: 0,
            early_warning: false,
            first_alert: None,
        };
        for (k, img) in s.frames.iter().enumerate() {
            let idx = s.scene.frames[k].frame_index;
            let (frame, mut dt) = fe.run(&s.scene.scene_id, idx, img, true)?;
            let t0 = Instant::now();
            let d = detect_frame(&frame, idx, &classifier, &cfg.detect)?;
            dt += t0.elapsed();
            timings.push(dt);
            let gt = instances(&s.scene, k);
            let pts: Vec<[f64; 2]> = d.classified.iter().map(|c| c.proposal.centroid).collect();
            let gpts: Vec<[f64; 2]> = gt.iter().map(|g| g.1).collect();
            let m = match_points(&pts, &gpts, radius);
            row.gt_instances += gt.len();
            row.matched += m.len();
            for &(pi, gi) in &m {
                let truth = supervision_label(gt[gi].0, s.scene.lamp, cfg.detect.reflection_label);
                row.correct += (d.classified[pi].label == truth) as usize;
            }
            dets.push(d);
        }
        // tracking timed as a per-scene pass spread over its frames
        let t0 = Instant::now();
        let tracks = track_scene(&dets, &cfg.track)?;
        let per_frame = t0.elapsed() / dets.len().max(1) as u32;
        let n = timings.len();
        for t in &mut timings[n - dets.len()..] {
            *t += per_frame;
        }
        let alert_frames: Vec<u64> = tracks
            .iter()
            .filter(|f| f.decisions.iter().any(|d| d.verdict == Verdict::LikelyPresent))
            .map(|f| f.frame_index)
            .collect();
        let a = SceneAlerts {
            scene_id: s.scene.scene_id.clone(),
            markers: s.scene.markers,
            alert_frames,
        };
        row.early_warning = a.early_warning()?;
        row.first_alert = a.alert_frames.first().copied();
        alerts.push(a);
        scene_rows.push(row);
        all_dets.push(dets);
        all_tracks.push(tracks);
    }
    // consistency with the standalone metric
    let ew = eval_early_warning(&alerts)?;
    let avg_fps = measure_fps(&timings, cfg.eval.fps_warmup, cfg.eval.min_fps_frames)?;
    let report = EvalReport::from_scenes(variant, cfg.hash(), avg_fps, machine_descriptor(), scene_rows)?;
    debug_assert_eq!(ew, report.early_warning_success);
    Ok(PipelineRun {
        report,
        classifier,
        detections: all_dets,
        tracks: all_tracks,
    })
}

/// Raw and denoised runs under one configuration.
pub fn run_ab(
    cfg: &Config,
    train: &[ScriptedScene],
    test: &[ScriptedScene],
    net: &Network,
) -> Result<(PipelineRun, PipelineRun)> {
    let raw = run_pipeline(cfg, Variant::Raw, train, test, None)?;
    let den = run_pipeline(cfg, Variant::Denoised, train, test, Some(net))?;
    if raw.report.config_hash != den.report.config_hash {
        return Err(Error::invalid("A/B runs disagree on configuration"));
    }
    Ok((raw, den))
}

/// Proposals and classifications for one frame through a variant's front
/// end (no rain); used by the command line `detect` tool.
pub fn detect_clean_frame(
    cfg: &Config,
    net: Option<&Network>,
    model: &ClassifierModel,
    img: &GrayImage,
    frame_index: u64,
) -> Result<FrameDetections> {
    let fe = Frontend { cfg, net };
    let (frame, _) = fe.run("", frame_index, img, false)?;
    detect_frame(&frame, frame_index, model, &cfg.detect)
}

/// Classifier trained on the given scenes through a variant's front end.
pub fn train_scene_classifier(cfg: &Config, net: Option<&Network>, train: &[ScriptedScene]) -> Result<ClassifierModel> {
    fit_classifier(&Frontend { cfg, net }, train)
}
