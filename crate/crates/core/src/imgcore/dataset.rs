//! Dataset layout:
//!
//! ```text
//! root/scenes/<scene_id>/images/frame_<6-digit index>.png
//! root/scenes/<scene_id>/annotations.json
//! ```
//!
//! `annotations.json` holds one scene. Beyond the core fields
//! (`scene_id`, `time_of_day`, `frames`) three optional keys are understood:
//! `split` (`train` | `validation` | `test`, default `train`), `lamp`
//! (`headlight` | `taillight`, default `headlight`; the lamp type of direct
//! lights in the scene, since grayscale frames carry no colour) and
//! `markers` (`first_reflection_frame`, `first_direct_frame`).

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceKind {
    Direct,
    Reflection,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LampKind {
    #[default]
    Headlight,
    Taillight,
}

/// Axis-aligned box `(x, y, w, h)` in pixels; serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox {
            x: v[0],
            y: v[1],
            w: v[2],
            h: v[3],
        }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn inside(&self, width: usize, height: usize) -> bool {
        self.x >= 0.0
            && self.y >= 0.0
            && self.w >= 0.0
            && self.h >= 0.0
            && self.x + self.w <= width as f64
            && self.y + self.h <= height as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceAnnotation {
    pub kind: InstanceKind,
    pub bbox: BBox,
    pub keypoint: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleAnnotation {
    pub id: u64,
    pub instances: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: u64,
    /// Path relative to the scene directory.
    pub image: String,
    pub vehicles: Vec<VehicleAnnotation>,
}

impl FrameRecord {
    pub fn instances(&self) -> impl Iterator<Item = &InstanceAnnotation> {
        self.vehicles.iter().flat_map(|v| v.instances.iter())
    }

    pub fn standard_image_name(frame_index: u64) -> String {
        format!("images/frame_{frame_index:06}.png")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneMarkers {
    pub first_reflection_frame: u64,
    pub first_direct_frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub time_of_day: TimeOfDay,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub lamp: LampKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<SceneMarkers>,
    pub frames: Vec<FrameRecord>,
}

impl Scene {
    pub fn image_path(&self, root: &Path, frame: &FrameRecord) -> PathBuf {
        scene_dir(root, &self.scene_id).join(&frame.image)
    }

    /// Check the structural invariants that do not need the image files.
    pub fn validate_records(&self) -> Result<()> {
        let err = |message: String| Error::Annotation {
            scene: self.scene_id.clone(),
            message,
        };
        if self.frames.is_empty() {
            return Err(err("scene has no frames".into()));
        }
        let mut last: Option<u64> = None;
        for f in &self.frames {
            if let Some(prev) = last {
                if f.frame_index <= prev {
                    return Err(err(format!(
                        "frame_index {} does not increase (previous {prev})",
                        f.frame_index
                    )));
                }
            }
            last = Some(f.frame_index);
            let mut ids = HashSet::new();
            for v in &f.vehicles {
                if !ids.insert(v.id) {
                    return Err(err(format!("frame {}: duplicate vehicle id {}", f.frame_index, v.id)));
                }
                for inst in &v.instances {
                    if !inst.bbox.contains(inst.keypoint[0], inst.keypoint[1]) {
                        return Err(err(format!(
                            "frame {}: vehicle {}: keypoint {:?} outside bbox {:?}",
                            f.frame_index,
                            v.id,
                            inst.keypoint,
                            <[f64; 4]>::from(inst.bbox)
                        )));
                    }
                }
            }
        }
        if let Some(m) = self.markers {
            if m.first_reflection_frame > m.first_direct_frame {
                return Err(err(format!(
                    "first_reflection_frame {} after first_direct_frame {}",
                    m.first_reflection_frame, m.first_direct_frame
                )));
            }
        }
        Ok(())
    }

    /// Check every bbox against the image bounds.
    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        for f in &self.frames {
            for v in &f.vehicles {
                for inst in &v.instances {
                    if !inst.bbox.inside(width, height) {
                        return Err(Error::Annotation {
                            scene: self.scene_id.clone(),
                            message: format!(
                                "frame {}: vehicle {}: bbox {:?} outside {width}x{height} image",
                                f.frame_index,
                                v.id,
                                <[f64; 4]>::from(inst.bbox)
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> Counts {
        Counts {
            scenes: 1,
            images: self.frames.len() as u64,
            vehicle_positions: self.frames.iter().map(|f| f.vehicles.len() as u64).sum(),
            instances: self.frames.iter().map(|f| f.instances().count() as u64).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub scenes: u64,
    pub images: u64,
    pub vehicle_positions: u64,
    pub instances: u64,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            scenes: self.scenes + o.scenes,
            images: self.images + o.images,
            vehicle_positions: self.vehicle_positions + o.vehicle_positions,
            instances: self.instances + o.instances,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub split: Split,
    pub time_of_day: TimeOfDay,
    #[serde(flatten)]
    pub counts: Counts,
}

/// Per split/time-of-day counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: Vec<SummaryRow>,
}

impl DatasetSummary {
    pub fn from_rows(rows: impl IntoIterator<Item = SummaryRow>) -> Self {
        let mut map: BTreeMap<(Split, TimeOfDay), Counts> = BTreeMap::new();
        for r in rows {
            let e = map.entry((r.split, r.time_of_day)).or_default();
            *e = *e + r.counts;
        }
        DatasetSummary {
            rows: map
                .into_iter()
                .map(|((split, time_of_day), counts)| SummaryRow {
                    split,
                    time_of_day,
                    counts,
                })
                .collect(),
        }
    }

    pub fn from_scenes(scenes: &[Scene]) -> Self {
        Self::from_rows(scenes.iter().map(|s| SummaryRow {
            split: s.split,
            time_of_day: s.time_of_day,
            counts: s.counts(),
        }))
    }

    pub fn get(&self, split: Split, time: TimeOfDay) -> Counts {
        self.rows
            .iter()
            .find(|r| r.split == split && r.time_of_day == time)
            .map(|r| r.counts)
            .unwrap_or_default()
    }

    pub fn by_time(&self, time: TimeOfDay) -> Counts {
        self.rows
            .iter()
            .filter(|r| r.time_of_day == time)
            .fold(Counts::default(), |a, r| a + r.counts)
    }

    pub fn total(&self) -> Counts {
        self.rows.iter().fold(Counts::default(), |a, r| a + r.counts)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub scenes: Vec<Scene>,
    /// Shared frame size per scene, in scene order.
    pub dims: Vec<(usize, usize)>,
    pub summary: DatasetSummary,
}

impl Dataset {
    pub fn verify_summary(&self) -> bool {
        DatasetSummary::from_scenes(&self.scenes) == self.summary
    }

    pub fn frame_count(&self) -> usize {
        self.scenes.iter().map(|s| s.frames.len()).sum()
    }
}

pub fn scene_dir(root: &Path, scene_id: &str) -> PathBuf {
    root.join("scenes").join(scene_id)
}

pub fn write_scene_annotations(root: &Path, scene: &Scene) -> Result<PathBuf> {
    let dir = scene_dir(root, &scene.scene_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("annotations.json");
    let body = serde_json::to_string_pretty(scene).map_err(|e| Error::Json {
        path: path.clone(),
        source: e,
    })?;
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Parse and validate one scene directory. Returns the scene and its frame size.
pub fn load_scene(dir: &Path) -> Result<(Scene, (usize, usize))> {
    let dir_name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let path = dir.join("annotations.json");
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let scene: Scene = serde_json::from_str(&body).map_err(|e| Error::Annotation {
        scene: dir_name.clone(),
        message: format!("malformed annotations.json: {e}"),
    })?;
    if scene.scene_id != dir_name {
        return Err(Error::Annotation {
            scene: dir_name,
            message: format!("scene_id `{}` does not match its directory", scene.scene_id),
        });
    }
    scene.validate_records()?;
    let mut dims: Option<(usize, usize)> = None;
    for f in &scene.frames {
        let p = dir.join(&f.image);
        if !p.is_file() {
            return Err(Error::Annotation {
                scene: scene.scene_id.clone(),
                message: format!("frame {}: image {} missing", f.frame_index, p.display()),
            });
        }
        let (w, h) = ::image::image_dimensions(&p).map_err(|e| Error::Image {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let d = (w as usize, h as usize);
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Annotation {
                    scene: scene.scene_id.clone(),
                    message: format!(
                        "frame {}: size {}x{} differs from {}x{}",
                        f.frame_index, d.0, d.1, prev.0, prev.1
                    ),
                })
            }
            _ => {}
        }
    }
    let dims = dims.expect("scene has frames");
    scene.validate_bounds(dims.0, dims.1)?;
    Ok((scene, dims))
}

/// Load every scene under `root/scenes`, in lexicographic directory order.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let scenes_root = root.join("scenes");
    let mut dirs: Vec<PathBuf> = fs::read_dir(&scenes_root)
        .map_err(|e| Error::io(&scenes_root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut scenes = Vec::with_capacity(dirs.len());
    let mut dims = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let (s, sz) = load_scene(d)?;
        scenes.push(s);
        dims.push(sz);
    }
    let summary = DatasetSummary::from_scenes(&scenes);
    Ok(Dataset {
        root: root.to_path_buf(),
        scenes,
        dims,
        summary,
    })
}
