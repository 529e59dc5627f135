//! Synthetic night scenes with annotated light trajectories.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{
    load_image, save_image, scene_dir, write_scene_annotations, BBox, Dataset, FrameRecord, GrayImage,
    InstanceAnnotation, InstanceKind, LampKind, Scene, SceneMarkers, Split, TimeOfDay, VehicleAnnotation,
};
use crate::photometric::{enhance, PhotometricConfig};
use crate::rainsim::gaussian_blur;
use crate::rng;

/// One light whose center, spread and peak move linearly between its first
/// and last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightTrack {
    pub vehicle: u64,
    pub kind: InstanceKind,
    pub first_frame: u64,
    /// Inclusive.
    pub last_frame: u64,
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub sigma: [f64; 2],
    pub intensity: [f64; 2],
}

impl LightTrack {
    /// `(center, sigma, intensity)` at `frame`, or `None` outside the light's life.
    pub fn at(&self, frame: u64) -> Option<([f64; 2], f64, f64)> {
        if frame < self.first_frame || frame > self.last_frame {
            return None;
        }
        let span = (self.last_frame - self.first_frame) as f64;
        let t = if span > 0.0 {
            (frame - self.first_frame) as f64 / span
        } else {
            0.0
        };
        let lerp = |a: f64, b: f64| a + t * (b - a);
        Some((
            [lerp(self.start[0], self.end[0]), lerp(self.start[1], self.end[1])],
            lerp(self.sigma[0], self.sigma[1]),
            lerp(self.intensity[0], self.intensity[1]),
        ))
    }
}

/// A static, unannotated light (street lamp, sign).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distractor {
    pub center: [f64; 2],
    pub sigma: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub frames: u64,
    pub lamp: LampKind,
    pub split: Split,
    /// Mean background level; a vertical ramp of `ramp` is added towards the bottom.
    pub background: f64,
    pub ramp: f64,
    /// Amplitude of the static smoothed background texture.
    pub texture: f64,
    /// Per-frame Gaussian sensor noise.
    pub sensor_noise: f64,
    pub lights: Vec<LightTrack>,
    pub distractors: Vec<Distractor>,
}

fn in_frame(c: [f64; 2], w: usize, h: usize) -> bool {
    c[0] >= 0.0 && c[1] >= 0.0 && c[0] < w as f64 && c[1] < h as f64
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("scene spec `{}`: {m}", self.scene_id)));
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return bad("frame size and count must be positive".into());
        }
        for (i, l) in self.lights.iter().enumerate() {
            if l.first_frame > l.last_frame || l.last_frame >= self.frames {
                return bad(format!(
                    "light {i} has frames {}..={} outside 0..{}",
                    l.first_frame, l.last_frame, self.frames
                ));
            }
            if l.sigma.iter().any(|s| !(*s > 0.0)) || l.intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad(format!("light {i} needs sigma > 0 and intensity in [0, 1]"));
            }
            let visible = (l.first_frame..=l.last_frame).any(|f| in_frame(l.at(f).unwrap().0, self.width, self.height));
            if !visible {
                return bad(format!("light {i} is outside the frame for its whole life"));
            }
        }
        if let Some(m) = self.markers() {
            if m.first_reflection_frame > m.first_direct_frame {
                return bad("first reflection comes after the first direct light".into());
            }
        }
        Ok(())
    }

    fn first_visible(&self, kind: InstanceKind) -> Option<u64> {
        self.lights
            .iter()
            .filter(|l| l.kind == kind)
            .filter_map(|l| {
                (l.first_frame..=l.last_frame).find(|&f| in_frame(l.at(f).unwrap().0, self.width, self.height))
            })
            .min()
    }

    /// Marker frames, when the scene has both reflections and direct lights.
    pub fn markers(&self) -> Option<SceneMarkers> {
        Some(SceneMarkers {
            first_reflection_frame: self.first_visible(InstanceKind::Reflection)?,
            first_direct_frame: self.first_visible(InstanceKind::Direct)?,
        })
    }
}

/// Annotations plus rendered frames, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedScene {
    pub scene: Scene,
    pub frames: Vec<GrayImage>,
}

fn add_blob(data: &mut [f64], w: usize, h: usize, c: [f64; 2], sigma: f64, peak: f64) {
    let r = (4.0 * sigma).ceil();
    let x0 = (c[0] - r).floor().max(0.0) as usize;
    let y0 = (c[1] - r).floor().max(0.0) as usize;
    let x1 = ((c[0] + r).ceil().max(0.0) as usize).min(w);
    let y1 = ((c[1] + r).ceil().max(0.0) as usize).min(h);
    let k = 1.0 / (2.0 * sigma * sigma);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 + 0.5 - c[0];
            let dy = y as f64 + 0.5 - c[1];
            data[y * w + x] += peak * (-(dx * dx + dy * dy) * k).exp();
        }
    }
}

/// Render a scripted scene. Blobs are Gaussian profiles added onto a dark
/// textured background; annotations carry `center +- 2 sigma` boxes clipped
/// to the frame and the center as keypoint.
pub fn script_scene(spec: &SceneSpec, seed: u64) -> Result<ScriptedScene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut r = rng::rng_from_seed(rng::derive_seed(seed, &spec.scene_id, u64::MAX));
    let raw = GrayImage::from_fn(w, h, |_, _| rng::unit(&mut r))?;
    let smooth = gaussian_blur(&raw, 1.5)?;
    let base: Vec<f64> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            spec.background + spec.ramp * (y as f64 + 0.5) / h as f64 + spec.texture * (smooth.get(x, y) - 0.5)
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.frames as usize);
    let mut records = Vec::with_capacity(spec.frames as usize);
    for f in 0..spec.frames {
        let mut fr = rng::rng_from_seed(rng::derive_seed(seed, &spec.scene_id, f));
        let mut data: Vec<f64> = base
            .iter()
            .map(|&b| b + spec.sensor_noise * rng::normal(&mut fr))
            .collect();
        for d in &spec.distractors {
            add_blob(&mut data, w, h, d.center, d.sigma, d.intensity);
        }
        let mut vehicles: Vec<VehicleAnnotation> = Vec::new();
        for l in &spec.lights {
            let Some((c, sigma, peak)) = l.at(f) else { continue };
            add_blob(&mut data, w, h, c, sigma, peak);
            if !in_frame(c, w, h) {
                continue;
            }
            let x0 = (c[0] - 2.0 * sigma).max(0.0);
            let y0 = (c[1] - 2.0 * sigma).max(0.0);
            let x1 = (c[0] + 2.0 * sigma).min(w as f64);
            let y1 = (c[1] + 2.0 * sigma).min(h as f64);
            let inst = InstanceAnnotation {
                kind: l.kind,
                bbox: BBox {
                    x: x0,
                    y: y0,
                    w: x1 - x0,
                    h: y1 - y0,
                },
                keypoint: c,
            };
            match vehicles.iter_mut().find(|v| v.id == l.vehicle) {
                Some(v) => v.instances.push(inst),
                None => vehicles.push(VehicleAnnotation {
                    id: l.vehicle,
                    instances: vec![inst],
                }),
            }
        }
        vehicles.sort_by_key(|v| v.id);
        frames.push(GrayImage::from_clamped(w, h, data)?);
        records.push(FrameRecord {
            frame_index: f,
            image: FrameRecord::standard_image_name(f),
            vehicles,
        });
    }
    let scene = Scene {
        scene_id: spec.scene_id.clone(),
        time_of_day: TimeOfDay::Night,
        split: spec.split,
        lamp: spec.lamp,
        markers: spec.markers(),
        frames: records,
    };
    scene.validate_records()?;
    Ok(ScriptedScene { scene, frames })
}

/// Render and write a scene (PNG frames and `annotations.json`) under `root`.
pub fn write_scripted_scene(root: &Path, spec: &SceneSpec, seed: u64) -> Result<ScriptedScene> {
    let s = script_scene(spec, seed)?;
    let dir = scene_dir(root, &s.scene.scene_id);
    for (rec, img) in s.scene.frames.iter().zip(&s.frames) {
        save_image(img, dir.join(&rec.image))?;
    }
    write_scene_annotations(root, &s.scene)?;
    Ok(s)
}

/// Parameters of the generated approach-scene suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub scenes: usize,
    pub frames: u64,
    pub width: usize,
    pub height: usize,
    pub taillight_fraction: f64,
    /// Peak of the road reflection at its first and last frame.
    pub reflection_intensity: [f64; 2],
    pub reflection_sigma: [f64; 2],
    pub direct_intensity: [f64; 2],
    pub direct_sigma: [f64; 2],
    /// Frame range for the first reflection, and the delay until the lamps show.
    pub reflection_onset: [u64; 2],
    pub direct_delay: [u64; 2],
    pub distractor_probability: f64,
    pub distractor_intensity: f64,
    pub background: f64,
    pub ramp: f64,
    pub texture: f64,
    pub sensor_noise: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            frames: 24,
            width: 128,
            height: 96,
            taillight_fraction: 0.25,
            reflection_intensity: [0.2, 0.35],
            reflection_sigma: [3.0, 4.5],
            direct_intensity: [0.85, 1.0],
            direct_sigma: [1.5, 2.5],
            reflection_onset: [3, 6],
            direct_delay: [8, 11],
            distractor_probability: 0.5,
            distractor_intensity: 0.3,
            background: 0.04,
            ramp: 0.03,
            texture: 0.03,
            sensor_noise: 0.004,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scenes == 0 || self.width < 32 || self.height < 32 {
            return Err(Error::invalid("suite needs >= 1 scene and frames of at least 32x32"));
        }
        if self.reflection_onset[0] > self.reflection_onset[1] || self.direct_delay[0] > self.direct_delay[1] {
            return Err(Error::invalid("onset and delay ranges must be ordered"));
        }
        if self.reflection_onset[1] + self.direct_delay[1] + 2 > self.frames {
            return Err(Error::invalid(
                "frames too short for the reflection onset and direct delay",
            ));
        }
        Ok(())
    }
}

fn pick(r: &mut rng::Rng, range: [f64; 2]) -> f64 {
    rng::uniform(r, range[0], range[1])
}

fn pick_u(r: &mut rng::Rng, range: [u64; 2]) -> u64 {
    range[0] + rng::below(r, (range[1] - range[0] + 1) as usize) as u64
}

/// Approach scenes: a road-surface reflection brightens first, then a lamp
/// pair appears near the horizon and spreads apart as it comes closer.
/// Scene ids are `<prefix>_NNN`.
pub fn approach_suite(cfg: &SuiteConfig, prefix: &str, split: Split, seed: u64) -> Result<Vec<SceneSpec>> {
    cfg.validate()?;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    (0..cfg.scenes)
        .map(|i| {
            let scene_id = format!("{prefix}_{i:03}");
            let mut r = rng::rng_from_seed(rng::derive_seed(seed, &scene_id, 0));
            let taillight = rng::unit(&mut r) < cfg.taillight_fraction;
            let last = cfg.frames - 1;
            let fr = pick_u(&mut r, cfg.reflection_onset);
            let fd = fr + pick_u(&mut r, cfg.direct_delay);
            let x0 = w * rng::uniform(&mut r, 0.3, 0.7);
            let horizon = h * rng::uniform(&mut r, 0.35, 0.45);
            let drift = w * rng::uniform(&mut r, -0.05, 0.05);
            let (sig, peak) = if taillight {
                (
                    [0.7 * cfg.direct_sigma[0], 0.7 * cfg.direct_sigma[1]],
                    [0.75 * cfg.direct_intensity[0], 0.75 * cfg.direct_intensity[1]],
                )
            } else {
                (cfg.direct_sigma, cfg.direct_intensity)
            };
            let p0 = pick(&mut r, [peak[0], peak[1]]);
            let p1 = pick(&mut r, [p0, peak[1]]);
            let half0 = w * rng::uniform(&mut r, 0.04, 0.06);
            let half1 = w * rng::uniform(&mut r, 0.14, 0.2);
            let y_end = horizon + h * rng::uniform(&mut r, 0.05, 0.1);
            let mut lights = Vec::new();
            for side in [-1.0, 1.0] {
                lights.push(LightTrack {
                    vehicle: 0,
                    kind: InstanceKind::Direct,
                    first_frame: fd,
                    last_frame: last,
                    start: [x0 + side * half0, horizon],
                    end: [x0 + drift + side * half1, y_end],
                    sigma: sig,
                    intensity: [p0, p1],
                });
            }
            let ry = h * rng::uniform(&mut r, 0.72, 0.82);
            let rx = x0 + w * rng::uniform(&mut r, -0.08, 0.08);
            lights.push(LightTrack {
                vehicle: 0,
                kind: InstanceKind::Reflection,
                first_frame: fr,
                last_frame: last,
                start: [rx, ry],
                end: [rx + drift, ry + h * 0.03],
                sigma: cfg.reflection_sigma,
                intensity: cfg.reflection_intensity,
            });
            let mut distractors = Vec::new();
            if rng::unit(&mut r) < cfg.distractor_probability {
                distractors.push(Distractor {
                    center: [w * rng::uniform(&mut r, 0.1, 0.9), h * rng::uniform(&mut r, 0.08, 0.2)],
                    sigma: rng::uniform(&mut r, 1.0, 1.6),
                    intensity: cfg.distractor_intensity,
                });
            }
            Ok(SceneSpec {
                scene_id,
                width: cfg.width,
                height: cfg.height,
                frames: cfg.frames,
                lamp: if taillight {
                    LampKind::Taillight
                } else {
                    LampKind::Headlight
                },
                split,
                background: cfg.background,
                ramp: cfg.ramp,
                texture: cfg.texture,
                sensor_noise: cfg.sensor_noise,
                lights,
                distractors,
            })
        })
        .collect()
}

/// Render every scene of [`approach_suite`] in memory.
pub fn render_suite(cfg: &SuiteConfig, prefix: &str, split: Split, seed: u64) -> Result<Vec<ScriptedScene>> {
    approach_suite(cfg, prefix, split, seed)?
        .iter()
        .map(|s| script_scene(s, seed))
        .collect()
}

/// Frames of every scene of a dataset loaded from disk, paired with their
/// annotations.
pub fn load_scenes(ds: &Dataset) -> Result<Vec<ScriptedScene>> {
    ds.scenes
        .iter()
        .map(|scene| {
            let frames = scene
                .frames
                .iter()
                .map(|f| load_image(scene.image_path(&ds.root, f)))
                .collect::<Result<Vec<_>>>()?;
            Ok(ScriptedScene {
                scene: scene.clone(),
                frames,
            })
        })
        .collect()
}

/// Enhanced `size`-square crops from rendered approach scenes, for
/// denoiser training and validation fixtures. A `light_fraction` share of
/// the crops is placed around an annotated light (jittered by up to a
/// quarter patch), the rest uniformly.
pub fn clean_patches(
    cfg: &SuiteConfig,
    photometric: &PhotometricConfig,
    n: usize,
    size: usize,
    light_fraction: f64,
    seed: u64,
) -> Result<Vec<GrayImage>> {
    if size > cfg.width || size > cfg.height {
        return Err(Error::Dimension(format!(
            "{size}px patches do not fit {}x{} frames",
            cfg.width, cfg.height
        )));
    }
    if !(0.0..=1.0).contains(&light_fraction) {
        return Err(Error::invalid("light_fraction must lie in [0, 1]"));
    }
    let scenes = render_suite(cfg, "patch", Split::Train, seed)?;
    let mut r = rng::rng_from_seed(rng::combine(seed, 0x7061_7463));
    let span = |c: f64, jitter: f64, limit: usize| {
        let x = (c + jitter - size as f64 / 2.0).round();
        x.clamp(0.0, (limit - size) as f64) as usize
    };
    (0..n)
        .map(|_| {
            let s = &scenes[rng::below(&mut r, scenes.len())];
            let k = rng::below(&mut r, s.frames.len());
            let lights: Vec<[f64; 2]> = s.scene.frames[k].instances().map(|i| i.keypoint).collect();
            let q = size as f64 / 4.0;
            let (x, y) = if !lights.is_empty() && rng::unit(&mut r) < light_fraction {
                let c = lights[rng::below(&mut r, lights.len())];
                let jx = rng::uniform(&mut r, -q, q);
                let jy = rng::uniform(&mut r, -q, q);
                (span(c[0], jx, cfg.width), span(c[1], jy, cfg.height))
            } else {
                (
                    rng::below(&mut r, cfg.width - size + 1),
                    rng::below(&mut r, cfg.height - size + 1),
                )
            };
            enhance(&s.frames[k], photometric)?.crop(x, y, size, size)
        })
        .collect()
}
