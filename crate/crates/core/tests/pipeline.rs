//! Raw pipeline behaviour on scripted suites.

use nightrain::config::Config;
use nightrain::denoise::{Network, NetworkArch};
use nightrain::harness::{render_suite, run_ab, run_pipeline, write_reports, ScriptedScene, SuiteConfig, Variant};
use nightrain::imgcore::Split;

fn suite(scenes: usize, prefix: &str, split: Split, seed: u64) -> Vec<ScriptedScene> {
    let cfg = SuiteConfig {
        scenes,
        taillight_fraction: 0.5,
        ..SuiteConfig::default()
    };
    render_suite(&cfg, prefix, split, seed).unwrap()
}

#[test]
fn raw_run_is_reproducible_except_for_timing() {
    let cfg = Config::default();
    let train = suite(6, "train", Split::Train, 3);
    let test = suite(4, "test", Split::Test, 4);
    let a = run_pipeline(&cfg, Variant::Raw, &train, &test, None).unwrap();
    let b = run_pipeline(&cfg, Variant::Raw, &train, &test, None).unwrap();
    assert_eq!(a.report.scenes, b.report.scenes);
    assert_eq!(a.detections, b.detections);
    assert_eq!(a.tracks, b.tracks);
    assert_eq!(a.report.config_hash, cfg.hash());
    assert_eq!(a.tracks.len(), test.len());
    assert!(a.report.avg_fps > 0.0);
}

#[test]
fn doubling_the_suite_keeps_fps_within_twenty_percent() {
    let cfg = Config::default();
    let train = suite(6, "train", Split::Train, 5);
    let small = suite(8, "test", Split::Test, 6);
    let large = suite(16, "test", Split::Test, 6);
    let f1 = run_pipeline(&cfg, Variant::Raw, &train, &small, None)
        .unwrap()
        .report
        .avg_fps;
    let f2 = run_pipeline(&cfg, Variant::Raw, &train, &large, None)
        .unwrap()
        .report
        .avg_fps;
    let change = (f2 - f1).abs() / f1;
    assert!(change < 0.2, "fps {f1:.1} vs {f2:.1}");
}

#[test]
fn denoised_variant_requires_a_network() {
    let cfg = Config::default();
    let scenes = suite(2, "test", Split::Test, 7);
    assert!(run_pipeline(&cfg, Variant::Denoised, &scenes, &scenes, None).is_err());
}

#[test]
fn ab_reports_share_a_hash_and_write_all_artifacts() {
    let cfg = Config::default();
    let train = suite(6, "train", Split::Train, 8);
    let test = suite(3, "test", Split::Test, 9);
    let mut net = Network::init(&NetworkArch::default(), 1).unwrap();
    net.zero_image_head();
    let (raw, den) = run_ab(&cfg, &train, &test, &net).unwrap();
    assert_eq!(raw.report.config_hash, den.report.config_hash);
    assert_eq!(raw.report.variant, Variant::Raw);
    assert_eq!(den.report.variant, Variant::Denoised);
    let dir = tempfile::tempdir().unwrap();
    write_reports(dir.path(), &[raw.report, den.report]).unwrap();
    for name in ["report.csv", "scenes.csv", "report.json", "report.svg"] {
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    let scenes = std::fs::read_to_string(dir.path().join("scenes.csv")).unwrap();
    assert_eq!(scenes.lines().count(), 1 + 2 * test.len());
}
