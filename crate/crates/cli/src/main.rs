use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nightrain::config::Config;
use nightrain::denoise::{
    denoise_frame, gradcheck, load_curriculum_stages, save_log_csv, train_curriculum, Checkpoint, GradcheckConfig,
    Sample, TrainContext,
};
use nightrain::detect::{ClassifierModel, FrameDetections};
use nightrain::harness::{
    approach_suite, detect_clean_frame, load_scenes, render_suite, run_pipeline, write_reports, write_scripted_scene,
    EvalReport, Variant,
};
use nightrain::imgcore::{load_dataset, load_image, load_scene, save_image, Split};
use nightrain::quality::quality_report;
use nightrain::rainsim::build_curriculum;
use nightrain::track::track_scene;
use nightrain::{Error, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "nightrain",
    version,
    about = "Rain-robust night-time vehicle light detection toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a rain curriculum from a clean dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clean: PathBuf,
        /// Optional real rainy frames mixed into the last stage.
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser over a curriculum directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        curriculum: PathBuf,
        /// Curriculum whose stage-3 pairs are used for validation PSNR.
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore every PNG in a directory with a trained checkpoint.
    Denoise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-image quality metrics for restored frames against references.
    Quality {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        restored: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Propose, classify and pair lights in every frame of a scene.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Denoiser checkpoint; frames are only enhanced when omitted.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Scene directory (with annotations.json).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track detections and emit per-frame decisions.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detections: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Raw versus denoised evaluation with CSV, JSON and SVG reports.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset for classifier training; a scripted suite when omitted.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Dataset to evaluate; a scripted suite when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Denoiser checkpoint; only the raw variant runs without it.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the denoiser gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the scripted approach-scene suite to disk.
    Script {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        prefix: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&body).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Sorted `*.png` file names in a directory.
fn png_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            clean,
            real,
            out,
        } => {
            let cfg = load_config(&common)?;
            let clean = load_dataset(&clean)?;
            let real = real.map(load_dataset).transpose()?;
            let m = build_curriculum(
                &clean,
                &cfg.curriculum_stages()?,
                real.as_ref(),
                cfg.curriculum.mix_ratio,
                cfg.seed,
                &out,
            )?;
            println!("wrote {} entries to {}", m.entries.len(), out.display());
        }
        Command::Train {
            common,
            curriculum,
            validation,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.train.seed = s;
            }
            let stages = load_curriculum_stages(&curriculum)?;
            let val: Vec<Sample> = match validation {
                Some(dir) => load_curriculum_stages(&dir)?
                    .into_iter()
                    .find(|s| s.stage == 3)
                    .map(|s| s.samples)
                    .unwrap_or_default(),
                None => Vec::new(),
            };
            let ctx = TrainContext {
                config: &cfg.train,
                ssim: &cfg.ssim,
                validation: &val,
            };
            let outcome = train_curriculum(&stages, ctx)?;
            outcome.checkpoint.save(&out)?;
            save_log_csv(&outcome.log, &out.join("train_log.csv"))?;
            if let Some(msg) = outcome.diverged {
                return Err(Error::Divergence(format!("{msg}; last finite checkpoint saved")));
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Denoise {
            common,
            ckpt,
            input,
            out,
        } => {
            load_config(&common)?;
            let ckpt = Checkpoint::load(&ckpt)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let names = png_names(&input)?;
            for n in &names {
                let img = load_image(input.join(n))?;
                save_image(&denoise_frame(&ckpt, &img)?, out.join(n))?;
            }
            println!("restored {} frames", names.len());
        }
        Command::Quality {
            common,
            restored,
            reference,
            out,
        } => {
            let cfg = load_config(&common)?;
            let mut pairs = Vec::new();
            for n in png_names(&restored)? {
                let r = reference.join(&n);
                if !r.is_file() {
                    return Err(Error::invalid(format!("no reference image for {n}")));
                }
                pairs.push((n.clone(), load_image(restored.join(&n))?, load_image(r)?));
            }
            let report = quality_report(pairs.iter().map(|(n, a, b)| (n.clone(), a, b)), &cfg.ssim)?;
            report.save_csv(&out)?;
            println!("mean psnr {:.3} dB, ssim {:.4}", report.mean.psnr_db, report.mean.ssim);
        }
        Command::Detect {
            common,
            ckpt,
            model,
            input,
            out,
        } => {
            let cfg = load_config(&common)?;
            let ckpt = ckpt.map(Checkpoint::load).transpose()?;
            let model: ClassifierModel = read_json(&model)?;
            model.validate()?;
            let (scene, _) = load_scene(&input)?;
            let mut frames = Vec::with_capacity(scene.frames.len());
            for f in &scene.frames {
                let img = load_image(input.join(&f.image))?;
                frames.push(detect_clean_frame(
                    &cfg,
                    ckpt.as_ref().map(|c| &c.network),
                    &model,
                    &img,
                    f.frame_index,
                )?);
            }
            write_json(&out, &frames)?;
            println!("{} frames", frames.len());
        }
        Command::Track {
            common,
            detections,
            out,
        } => {
            let cfg = load_config(&common)?;
            let frames: Vec<FrameDetections> = read_json(&detections)?;
            let tracks = track_scene(&frames, &cfg.track)?;
            write_json(&out, &tracks)?;
            println!("{} frames", tracks.len());
        }
        Command::Eval {
            common,
            train,
            test,
            ckpt,
            out,
        } => {
            let cfg = load_config(&common)?;
            let train = match train {
                Some(p) => load_scenes(&load_dataset(p)?)?,
                None => render_suite(&cfg.script, "train", Split::Train, rng_tag(cfg.seed, 1))?,
            };
            let test = match test {
                Some(p) => load_scenes(&load_dataset(p)?)?,
                None => render_suite(&cfg.script, "test", Split::Test, rng_tag(cfg.seed, 2))?,
            };
            let ckpt = ckpt.map(Checkpoint::load).transpose()?;
            let mut reports: Vec<EvalReport> = Vec::new();
            let raw = run_pipeline(&cfg, Variant::Raw, &train, &test, None)?;
            write_json(&out.join("classifier_raw.json"), &raw.classifier)?;
            reports.push(raw.report);
            if let Some(c) = &ckpt {
                let den = run_pipeline(&cfg, Variant::Denoised, &train, &test, Some(&c.network))?;
                write_json(&out.join("classifier_denoised.json"), &den.classifier)?;
                reports.push(den.report);
            }
            write_reports(&out, &reports)?;
            for r in &reports {
                println!(
                    "{}: recall {:.2} accuracy {:.2} early-warning {:.2} fps {:.1}",
                    r.variant.as_str(),
                    r.proposal_recall,
                    r.classifier_accuracy,
                    r.early_warning_success,
                    r.avg_fps
                );
            }
        }
        Command::Gradcheck { common, out } => {
            let cfg = load_config(&common)?;
            let gc = GradcheckConfig {
                arch: cfg.train.arch.clone(),
                weights: cfg.train.loss,
                ..GradcheckConfig::default()
            };
            let report = gradcheck(cfg.seed, &gc)?;
            if let Some(dir) = out {
                write_json(&dir.join("gradcheck.json"), &report)?;
            }
            println!(
                "max relative error {:.3e} over {} parameters ({} kinks skipped)",
                report.max_rel_error,
                report.entries.len(),
                report.skipped_kinks
            );
            if !(report.max_rel_error < 1e-4) {
                return Err(Error::invalid(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_error
                )));
            }
        }
        Command::Script { common, prefix, out } => {
            let cfg = load_config(&common)?;
            let specs = approach_suite(&cfg.script, &prefix, Split::Test, cfg.seed)?;
            for s in &specs {
                write_scripted_scene(&out, s, cfg.seed)?;
            }
            println!("wrote {} scenes to {}", specs.len(), out.display());
        }
    }
    Ok(())
}

fn rng_tag(seed: u64, tag: u64) -> u64 {
    nightrain::rng::combine(seed, tag)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
