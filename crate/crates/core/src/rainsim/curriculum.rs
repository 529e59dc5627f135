//! Curriculum builder. Output layout:
//!
//! ```text
//! out/manifest.json
//! out/stage_<k>/<scene>__<frame>_{noisy,clean,mask}.png
//! out/stage_5/real__<scene>__<frame>_noisy.png      (real rainy frames, no target)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{apply_stage, StageConfig};
use crate::error::{Error, Result};
use crate::imgcore::{load_image, save_image, save_mask, Dataset};
use crate::rng;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Severity per stage 1..=5.
    pub severities: [f64; 5],
    /// Fraction of synthetic entries in stage 5 when real rain is supplied.
    pub mix_ratio: f64,
    /// Emit stage 5 (mixing) in addition to stages 1-4.
    pub include_stage5: bool,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            severities: [0.0, 0.25, 0.5, 0.75, 0.75],
            mix_ratio: 0.5,
            include_stage5: true,
        }
    }
}

impl CurriculumConfig {
    pub fn stage_list(&self) -> Vec<u8> {
        if self.include_stage5 {
            vec![1, 2, 3, 4, 5]
        } else {
            vec![1, 2, 3, 4]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Paired with a clean frame and rain mask.
    Clean,
    /// Real rainy frame without ground truth.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: u8,
    pub clean: Option<String>,
    pub noisy: String,
    pub mask: Option<String>,
    pub seed: u64,
    pub severity: f64,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumManifest {
    pub format_version: u32,
    pub seed: u64,
    pub mix_ratio: f64,
    pub stages: Vec<StageConfig>,
    pub entries: Vec<ManifestEntry>,
}

impl CurriculumManifest {
    pub fn entries_for(&self, stage: u8) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.stage == stage)
    }

    pub fn stages_present(&self) -> Vec<u8> {
        let mut s: Vec<u8> = self.entries.iter().map(|e| e.stage).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Mean severity over the paired entries of each stage present.
    pub fn mean_severity_by_stage(&self) -> Vec<(u8, f64)> {
        self.stages_present()
            .into_iter()
            .map(|k| {
                let v: Vec<f64> = self
                    .entries_for(k)
                    .filter(|e| e.target == Target::Clean)
                    .map(|e| e.severity)
                    .collect();
                (k, v.iter().sum::<f64>() / v.len().max(1) as f64)
            })
            .collect()
    }
}

fn frame_stem(scene: &str, frame: u64) -> String {
    format!("{scene}__{frame:06}")
}

fn check_stage_list(stages: &[StageConfig]) -> Result<()> {
    for k in 1..=4u8 {
        let n = stages.iter().filter(|s| s.stage == k).count();
        if n != 1 {
            return Err(Error::invalid(format!(
                "curriculum needs exactly one config for stage {k}, found {n}"
            )));
        }
    }
    if stages.iter().filter(|s| s.stage == 5).count() > 1 {
        return Err(Error::invalid("more than one stage-5 config"));
    }
    let mut prev = 0;
    for s in stages {
        s.validate()?;
        if s.stage <= prev {
            return Err(Error::invalid("stage configs must be listed in ascending order"));
        }
        prev = s.stage;
    }
    Ok(())
}

/// Interleave `a` and `b` so that each stays evenly spread over the result.
fn interleave<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
    let (na, nb) = (a.len(), b.len());
    let mut out = Vec::with_capacity(na + nb);
    let mut ia = a.into_iter().peekable();
    let mut ib = b.into_iter().peekable();
    let (mut ta, mut tb) = (0usize, 0usize);
    while ia.peek().is_some() || ib.peek().is_some() {
        let take_a = match (ia.peek().is_some(), ib.peek().is_some()) {
            (true, false) => true,
            (false, true) => false,
            _ => (ta as f64 + 0.5) / na as f64 <= (tb as f64 + 0.5) / nb as f64,
        };
        if take_a {
            out.push(ia.next().unwrap());
            ta += 1;
        } else {
            out.push(ib.next().unwrap());
            tb += 1;
        }
    }
    out
}

/// Corrupt every clean frame once per stage and write the triples plus
/// `manifest.json`.
///
/// Stage 5 (when configured) holds fresh stage-4-recipe triples; if `real_rain`
/// is given, its frames are interleaved with those at `mix_ratio` (synthetic
/// fraction) and carry `target: none`. Without real rain, stage 5 is
/// synthetic only.
pub fn build_curriculum(
    clean: &Dataset,
    stages: &[StageConfig],
    real_rain: Option<&Dataset>,
    mix_ratio: f64,
    seed: u64,
    out: &Path,
) -> Result<CurriculumManifest> {
    check_stage_list(stages)?;
    if clean.frame_count() == 0 {
        return Err(Error::invalid("clean dataset has no frames"));
    }
    if !(mix_ratio > 0.0 && mix_ratio <= 1.0) {
        return Err(Error::invalid("mix_ratio must lie in (0, 1]"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut entries = Vec::new();
    for cfg in stages {
        let dir_name = format!("stage_{}", cfg.stage);
        let dir = out.join(&dir_name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let stage_seed = rng::combine(seed, cfg.stage as u64);
        let mut synthetic = Vec::new();
        for scene in &clean.scenes {
            for frame in &scene.frames {
                let img = load_image(scene.image_path(&clean.root, frame))?;
                let fseed = rng::derive_seed(stage_seed, &scene.scene_id, frame.frame_index);
                let cf = apply_stage(&img, cfg, fseed)?;
                let stem = frame_stem(&scene.scene_id, frame.frame_index);
                let rel = |kind: &str| format!("{dir_name}/{stem}_{kind}.png");
                save_image(&cf.noisy, out.join(rel("noisy")))?;
                save_image(&cf.clean, out.join(rel("clean")))?;
                save_mask(&cf.mask, out.join(rel("mask")))?;
                synthetic.push(ManifestEntry {
                    stage: cfg.stage,
                    clean: Some(rel("clean")),
                    noisy: rel("noisy"),
                    mask: Some(rel("mask")),
                    seed: fseed,
                    severity: cfg.severity,
                    target: Target::Clean,
                });
            }
        }
        if cfg.stage == 5 {
            if let Some(real) = real_rain {
                let wanted = ((synthetic.len() as f64) * (1.0 - mix_ratio) / mix_ratio).round() as usize;
                let mut real_entries = Vec::new();
                'outer: for scene in &real.scenes {
                    for frame in &scene.frames {
                        if real_entries.len() >= wanted {
                            break 'outer;
                        }
                        let img = load_image(scene.image_path(&real.root, frame))?;
                        let rel = format!(
                            "{dir_name}/real__{}_noisy.png",
                            frame_stem(&scene.scene_id, frame.frame_index)
                        );
                        save_image(&img, out.join(&rel))?;
                        real_entries.push(ManifestEntry {
                            stage: 5,
                            clean: None,
                            noisy: rel,
                            mask: None,
                            seed: rng::derive_seed(stage_seed, &scene.scene_id, frame.frame_index),
                            severity: cfg.severity,
                            target: Target::None,
                        });
                    }
                }
                synthetic = interleave(synthetic, real_entries);
            }
        }
        entries.extend(synthetic);
    }
    let manifest = CurriculumManifest {
        format_version: 1,
        seed,
        mix_ratio,
        stages: stages.to_vec(),
        entries,
    };
    let path = out.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<CurriculumManifest> {
    let path: PathBuf = dir.join(MANIFEST_FILE);
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Json { path, source: e })
}
