//! Scripted approach scenes, the end-to-end evaluation pipeline and its
//! reports.

mod eval;
mod pipeline;
mod report;
mod scripted;

pub use self::eval::{
    eval_classifier, eval_early_warning, eval_proposals, machine_descriptor, measure_fps, MatchCount, SceneAlerts,
    FPS_WARMUP, MIN_FPS_FRAMES,
};
pub use self::pipeline::{
    detect_clean_frame, run_ab, run_pipeline, train_scene_classifier, EvalConfig, EvalReport, PipelineRun, SceneEval,
    Variant,
};
pub use self::report::{render_svg, write_report_csv, write_reports, write_scene_csv, REPORT_COLUMNS, SCENE_COLUMNS};
pub use self::scripted::{
    approach_suite, clean_patches, load_scenes, render_suite, script_scene, write_scripted_scene, Distractor,
    LightTrack, SceneSpec, ScriptedScene, SuiteConfig,
};
