//! Grayscale rasters, binary masks, deterministic PNG I/O and the on-disk
//! dataset layout.

mod dataset;
mod image;

pub use self::dataset::{
    load_dataset, load_scene, scene_dir, write_scene_annotations, BBox, Counts, Dataset, DatasetSummary, FrameRecord,
    InstanceAnnotation, InstanceKind, LampKind, Scene, SceneMarkers, Split, SummaryRow, TimeOfDay, VehicleAnnotation,
};
pub use self::image::{load_image, load_mask, save_image, save_mask, GrayImage, Mask};
