//! Detection, classification and early-warning metrics.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detect::{match_points, Category};
use crate::error::{Error, Result};
use crate::imgcore::SceneMarkers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCount {
    pub matched: usize,
    pub total: usize,
}

impl MatchCount {
    pub fn percent(&self) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::invalid("no ground-truth instances to evaluate"));
        }
        Ok(100.0 * self.matched as f64 / self.total as f64)
    }
}

/// Per-frame index pairs as returned by [`match_points`].
pub type FrameMatches = Vec<Vec<(usize, usize)>>;

/// Matches of ground truth to proposals per frame; both lists are indexed
/// by frame.
pub fn eval_proposals(
    detected: &[Vec<[f64; 2]>],
    truth: &[Vec<[f64; 2]>],
    radius: f64,
) -> Result<(MatchCount, FrameMatches)> {
    if detected.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} detection frames vs {} ground-truth frames",
            detected.len(),
            truth.len()
        )));
    }
    let mut count = MatchCount::default();
    let mut matches = Vec::with_capacity(truth.len());
    for (d, t) in detected.iter().zip(truth) {
        let m = match_points(d, t, radius);
        count.matched += m.len();
        count.total += t.len();
        matches.push(m);
    }
    Ok((count, matches))
}

/// Percentage of matched proposals whose predicted category equals the
/// label of their ground-truth instance.
pub fn eval_classifier(pairs: &[(Category, Category)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no matched proposals to score"));
    }
    Ok(100.0 * pairs.iter().filter(|(p, t)| p == t).count() as f64 / pairs.len() as f64)
}

/// Scene-level outcome: frames at which any track was "likely present".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAlerts {
    pub scene_id: String,
    pub markers: Option<SceneMarkers>,
    pub alert_frames: Vec<u64>,
}

impl SceneAlerts {
    /// An alert in `[first_reflection_frame, first_direct_frame)`.
    pub fn early_warning(&self) -> Result<bool> {
        let m = self.markers.ok_or_else(|| Error::Annotation {
            scene: self.scene_id.clone(),
            message: "reflection and direct marker frames are required".into(),
        })?;
        Ok(self
            .alert_frames
            .iter()
            .any(|&f| f >= m.first_reflection_frame && f < m.first_direct_frame))
    }
}

pub fn eval_early_warning(scenes: &[SceneAlerts]) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::invalid("no scenes to evaluate"));
    }
    let mut ok = 0;
    for s in scenes {
        ok += s.early_warning()? as usize;
    }
    Ok(100.0 * ok as f64 / scenes.len() as f64)
}

pub const MIN_FPS_FRAMES: usize = 50;
pub const FPS_WARMUP: usize = 5;

/// Frames per second over per-frame timings, skipping the warm-up frames.
pub fn measure_fps(timings: &[Duration], warmup: usize, min_frames: usize) -> Result<f64> {
    if timings.len() < min_frames || timings.len() <= warmup {
        return Err(Error::invalid(format!(
            "fps needs at least {min_frames} frames (and more than {warmup} warm-up frames), got {}",
            timings.len()
        )));
    }
    let used = &timings[warmup..];
    let secs: f64 = used.iter().map(Duration::as_secs_f64).sum();
    Ok(used.len() as f64 / secs.max(1e-9))
}

/// Short description of the host, reported next to throughput figures.
pub fn machine_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{} {} / {cpu} / {threads} threads",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}
