//! CSV tables and an SVG bar chart for evaluation reports.

use std::io::Write;
use std::path::Path;

use super::pipeline::EvalReport;
use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 7] = [
    "variant",
    "config_hash",
    "proposal_recall",
    "classifier_accuracy",
    "early_warning_success",
    "avg_fps",
    "machine",
];

pub const SCENE_COLUMNS: [&str; 7] = [
    "variant",
    "scene_id",
    "gt_instances",
    "matched",
    "correct",
    "early_warning",
    "first_alert",
];

fn csv_err(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub fn write_report_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.variant.as_str().to_string(),
            r.config_hash.clone(),
            format!("{:.4}", r.proposal_recall),
            format!("{:.4}", r.classifier_accuracy),
            format!("{:.4}", r.early_warning_success),
            format!("{:.2}", r.avg_fps),
            r.machine.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}

pub fn write_scene_csv<W: Write>(out: W, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCENE_COLUMNS).map_err(csv_err)?;
    for r in reports {
        for s in &r.scenes {
            w.write_record([
                r.variant.as_str().to_string(),
                s.scene_id.clone(),
                s.gt_instances.to_string(),
                s.matched.to_string(),
                s.correct.to_string(),
                s.early_warning.to_string(),
                s.first_alert.map(|f| f.to_string()).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}

/// Grouped bars (one group per percentage metric, one bar per variant).
/// Output depends only on the reports, so repeated runs produce identical
/// files.
pub fn render_svg(reports: &[EvalReport]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 260.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 220.0;
    const COLORS: [&str; 4] = ["#7f8c8d", "#2e86c1", "#28b463", "#ca6f1e"];
    let metrics = ["proposal_recall", "classifier_accuracy", "early_warning_success"];
    let n = reports.len().max(1) as f64;
    let group = W / metrics.len() as f64;
    let bar = (group - 40.0) / n;
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str(&format!(
        "<line x1=\"0\" y1=\"{BOTTOM}\" x2=\"{W}\" y2=\"{BOTTOM}\" stroke=\"black\"/>\n"
    ));
    for (g, name) in metrics.iter().enumerate() {
        let x0 = g as f64 * group + 20.0;
        for (i, r) in reports.iter().enumerate() {
            let v = match g {
                0 => r.proposal_recall,
                1 => r.classifier_accuracy,
                _ => r.early_warning_success,
            }
            .clamp(0.0, 100.0);
            let h = (BOTTOM - TOP) * v / 100.0;
            s.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} {:.2}</title></rect>\n",
                x0 + i as f64 * bar,
                BOTTOM - h,
                bar - 2.0,
                h,
                COLORS[i % COLORS.len()],
                r.variant.as_str(),
                v
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{name}</text>\n",
            x0 + (group - 40.0) / 2.0,
            BOTTOM + 16.0
        ));
    }
    for (i, r) in reports.iter().enumerate() {
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"{}\">{}</text>\n",
            10.0 + 90.0 * i as f64,
            H - 8.0,
            COLORS[i % COLORS.len()],
            r.variant.as_str()
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// `report.csv`, `scenes.csv`, `report.json` and `report.svg` under `dir`.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map_err(|e| Error::io(&p, e))
    };
    write_report_csv(open("report.csv")?, reports)?;
    write_scene_csv(open("scenes.csv")?, reports)?;
    let json_path = dir.join("report.json");
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::Json {
        path: json_path.clone(),
        source: e,
    })?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let svg_path = dir.join("report.svg");
    std::fs::write(&svg_path, render_svg(reports)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(())
}
