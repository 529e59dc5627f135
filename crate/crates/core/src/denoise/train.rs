//! Adam training over curriculum stages.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{config_hash, Checkpoint, Provenance, TrainerState};
use super::grad::{gradients, Sample};
use super::loss::LossWeights;
use super::network::{InitOptions, Network, NetworkArch};
use crate::error::{Error, Result};
use crate::imgcore::GrayImage;
use crate::imgcore::{load_image, load_mask};
use crate::quality::{self, SsimConfig};
use crate::rainsim::{apply_stage, load_manifest, StageConfig, Target};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps_per_stage: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub log_every: usize,
    /// Start with a zeroed image head so the initial network is the identity.
    pub identity_init: bool,
    /// Share of each batch drawn from the earlier stages of the schedule,
    /// so later stages do not overwrite what the easier ones taught.
    pub replay: f64,
    pub arch: NetworkArch,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            batch_size: 8,
            steps_per_stage: 500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            log_every: 50,
            identity_init: true,
            replay: 0.75,
            arch: NetworkArch::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        let m = self.arch.stride_multiple();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "patch_size {} must be a positive multiple of {m}",
                self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.replay) {
            return Err(Error::invalid("replay must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid("batch_size and log_every must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::invalid("adam requires beta in [0, 1) and epsilon > 0"));
        }
        Ok(())
    }
}

/// First and second moment estimates, kept at f32 precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Returns the updated parameters without touching `params`.
    fn step(&self, params: &[f64], grads: &[f64], cfg: &TrainConfig) -> (AdamState, Vec<f64>) {
        let t = self.t + 1;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let mut next = AdamState {
            m: Vec::with_capacity(params.len()),
            v: Vec::with_capacity(params.len()),
            t,
        };
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i];
            let m = (cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g) as f32 as f64;
            let v = (cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g) as f32 as f64;
            let upd = cfg.learning_rate * (m / bc1) / ((v / bc2).sqrt() + cfg.epsilon);
            next.m.push(m);
            next.v.push(v);
            out.push((params[i] - upd) as f32 as f64);
        }
        (next, out)
    }
}

/// Triples of one curriculum stage held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct StageData {
    pub stage: u8,
    pub severity: f64,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: u8,
    pub step: u64,
    pub total: f64,
    pub mse: f64,
    pub ssim_term: f64,
    pub bce: f64,
    pub val_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final state, or the last finite state when training diverged.
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub diverged: Option<String>,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::invalid(format!("log write failed: {e}")))?;
    }
    w.flush().map_err(|e| Error::invalid(format!("log write failed: {e}")))
}

pub fn save_log_csv(rows: &[LogRow], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_log_csv(rows, f)
}

/// Load every stage of a curriculum directory. Entries without a clean
/// target (unpaired real frames) are excluded from training.
pub fn load_curriculum_stages(dir: &Path) -> Result<Vec<StageData>> {
    let manifest = load_manifest(dir)?;
    let mut stages: Vec<StageData> = Vec::new();
    for stage in manifest.stages_present() {
        let mut samples = Vec::new();
        let mut severity = 0.0;
        for e in manifest.entries_for(stage) {
            severity = e.severity;
            if e.target == Target::None {
                continue;
            }
            let (Some(clean), Some(mask)) = (&e.clean, &e.mask) else {
                return Err(Error::invalid(format!(
                    "entry {} lacks a clean target or mask",
                    e.noisy
                )));
            };
            samples.push(Sample::new(
                load_image(dir.join(&e.noisy))?,
                load_image(dir.join(clean))?,
                load_mask(dir.join(mask))?,
            )?);
        }
        stages.push(StageData {
            stage,
            severity,
            samples,
        });
    }
    Ok(stages)
}

/// In-memory curriculum: every clean image corrupted once per stage, seeded
/// per stage and per image the same way as a curriculum directory with
/// `scene_id` as the scene.
pub fn synthesize_stages(
    clean: &[GrayImage],
    stages: &[StageConfig],
    scene_id: &str,
    seed: u64,
) -> Result<Vec<StageData>> {
    stages
        .iter()
        .map(|cfg| {
            let stage_seed = rng::combine(seed, cfg.stage as u64);
            let samples = clean
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    let cf = apply_stage(img, cfg, rng::derive_seed(stage_seed, scene_id, i as u64))?;
                    Sample::new(cf.noisy, cf.clean, cf.mask)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(StageData {
                stage: cfg.stage,
                severity: cfg.severity,
                samples,
            })
        })
        .collect()
}

/// Mean PSNR of the network's restorations over a validation set.
pub fn validation_psnr(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    for s in samples {
        let out = super::denoise_with(net, &s.noisy)?;
        acc += quality::psnr(&out, &s.clean, 1.0)?;
    }
    Ok(acc / samples.len() as f64)
}

/// One batch for stage `current` of `stages`; each sample comes from an
/// earlier stage with probability `cfg.replay`.
fn draw_batch(stages: &[&StageData], current: usize, cfg: &TrainConfig, r: &mut rng::Rng) -> Result<Vec<Sample>> {
    let p = cfg.patch_size;
    (0..cfg.batch_size)
        .map(|_| {
            let stage = if current > 0 && rng::unit(r) < cfg.replay {
                stages[rng::below(r, current)]
            } else {
                stages[current]
            };
            let s = &stage.samples[rng::below(r, stage.samples.len())];
            let (w, h) = s.noisy.dims();
            if w < p || h < p {
                return Err(Error::Dimension(format!(
                    "{w}x{h} training frame is smaller than the {p}px patch"
                )));
            }
            let x0 = rng::below(r, w - p + 1);
            let y0 = rng::below(r, h - p + 1);
            Ok(Sample {
                noisy: s.noisy.crop(x0, y0, p, p)?,
                clean: s.clean.crop(x0, y0, p, p)?,
                mask: s.mask.crop(x0, y0, p, p),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct TrainContext<'a> {
    pub config: &'a TrainConfig,
    pub ssim: &'a SsimConfig,
    pub validation: &'a [Sample],
}

impl TrainContext<'_> {
    pub fn config_hash(&self) -> String {
        config_hash(&(self.config, self.ssim))
    }
}

/// Train for `steps` on each listed stage in order, carrying Adam state across.
/// Replay draws from the stages listed before the current one.
pub fn train_schedule(schedule: &[(&StageData, usize)], ctx: TrainContext<'_>) -> Result<TrainOutcome> {
    let cfg = ctx.config;
    cfg.validate()?;
    for (s, _) in schedule {
        if s.samples.is_empty() {
            return Err(Error::invalid(format!("stage {} has no supervised samples", s.stage)));
        }
    }
    let mut net = Network::init_with(
        &cfg.arch,
        rng::combine(cfg.seed, 0x696e_6974),
        InitOptions {
            zero_image_head: cfg.identity_init,
        },
    )?;
    let mut trainer = TrainerState::fresh(net.param_count());
    let provenance = Provenance {
        config_hash: ctx.config_hash(),
        seed: cfg.seed,
    };
    let mut r = rng::rng_from_seed(rng::combine(cfg.seed, 0x6261_7463));
    let mut log = Vec::new();
    let mut window = [0.0; 4];
    let mut in_window = 0usize;
    let pool: Vec<&StageData> = schedule.iter().map(|(s, _)| *s).collect();
    for (current, (stage, steps)) in schedule.iter().enumerate() {
        for _ in 0..*steps {
            let batch = draw_batch(&pool, current, cfg, &mut r)?;
            let step_result = gradients(&net, &batch, &cfg.loss, ctx.ssim).and_then(|(value, grads)| {
                if !value.total.is_finite() {
                    return Err(Error::Divergence("non-finite loss".into()));
                }
                let (adam, params) = trainer.adam.step(&net.params, &grads, cfg);
                if params.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Divergence("non-finite parameter after update".into()));
                }
                Ok((value, adam, params))
            });
            let (value, adam, params) = match step_result {
                Ok(v) => v,
                Err(Error::Divergence(msg)) => {
                    let at = trainer.step + 1;
                    return Ok(TrainOutcome {
                        checkpoint: Checkpoint {
                            network: net,
                            trainer,
                            provenance,
                        },
                        log,
                        diverged: Some(format!("stage {} step {at}: {msg}", stage.stage)),
                    });
                }
                Err(e) => return Err(e),
            };
            net.params = params;
            trainer.adam = adam;
            trainer.step += 1;
            trainer.stage = stage.stage;
            window[0] += value.total;
            window[1] += value.mse;
            window[2] += value.ssim_term;
            window[3] += value.bce;
            in_window += 1;
            if trainer.step.is_multiple_of(cfg.log_every as u64) {
                let n = in_window as f64;
                log.push(LogRow {
                    stage: stage.stage,
                    step: trainer.step,
                    total: window[0] / n,
                    mse: window[1] / n,
                    ssim_term: window[2] / n,
                    bce: window[3] / n,
                    val_psnr: validation_psnr(&net, ctx.validation)?,
                });
                window = [0.0; 4];
                in_window = 0;
            }
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            network: net,
            trainer,
            provenance,
        },
        log,
        diverged: None,
    })
}

/// Train `steps_per_stage` steps on each stage in ascending order. Stages 1-4
/// are required; stage 5 is used when present.
pub fn train_curriculum(stages: &[StageData], ctx: TrainContext<'_>) -> Result<TrainOutcome> {
    let mut ordered: Vec<&StageData> = stages.iter().collect();
    ordered.sort_by_key(|s| s.stage);
    for (i, s) in ordered.iter().enumerate() {
        if i > 0 && ordered[i - 1].stage == s.stage {
            return Err(Error::invalid(format!("stage {} listed twice", s.stage)));
        }
    }
    let present: Vec<u8> = ordered.iter().map(|s| s.stage).collect();
    for k in 1..=4u8 {
        if !present.contains(&k) {
            return Err(Error::invalid(format!("curriculum is missing stage {k}")));
        }
    }
    if present.iter().any(|&k| !(1..=5).contains(&k)) {
        return Err(Error::invalid("curriculum stages must lie in 1..=5"));
    }
    let steps = ctx.config.steps_per_stage;
    let schedule: Vec<(&StageData, usize)> = ordered.into_iter().map(|s| (s, steps)).collect();
    train_schedule(&schedule, ctx)
}
