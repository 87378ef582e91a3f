//! Result artifacts. Metric tables go to CSV (fixed header, six-decimal
//! floats) and a JSON mirror; learning curves get their own CSV. Everything
//! here is byte-deterministic for a given seed: wall-clock numbers are
//! reported separately through [`write_timings`], which is the one
//! deliberately non-deterministic artifact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::eval::MetricsReport;
use crate::stages::CurvePoint;

/// Column header shared by the comparison and ablation tables. The first
/// column names the system variant a row describes.
pub const METRICS_HEADER: &str =
    "paradigm,det_P,det_R,det_F,e2e_P,e2e_R,e2e_F,trainable_params,total_params,wall_s";

/// One table row in the fixed column order.
pub fn metrics_row(r: &MetricsReport) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6}",
        r.paradigm,
        r.det_p,
        r.det_r,
        r.det_f,
        r.e2e_p,
        r.e2e_r,
        r.e2e_f,
        r.trainable_params,
        r.total_params,
        r.wall_s
    )
}

/// Writes a metrics table as CSV.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&metrics_row(r));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

/// Writes the same rows as pretty-printed JSON (one array of objects).
pub fn write_metrics_json(path: &Path, rows: &[MetricsReport]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(rows)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes end-to-end F1 learning curves, one labeled series per variant.
pub fn write_curves_csv(path: &Path, series: &[(String, Vec<CurvePoint>)]) -> Result<()> {
    let mut out = String::from("variant,iteration,e2e_F\n");
    for (label, points) in series {
        for p in points {
            writeln!(out, "{label},{},{:.6}", p.iteration, p.e2e_f).expect("string write");
        }
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

/// Writes measured wall-clock seconds per phase. Timings vary run to run, so
/// they live in their own file and never inside the metric tables.
pub fn write_timings(path: &Path, entries: &[(String, f64)]) -> Result<()> {
    let mut out = String::new();
    for (phase, secs) in entries {
        writeln!(out, "{phase}: {secs:.2} s").expect("string write");
    }
    std::fs::write(path, out).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, f: f64) -> MetricsReport {
        MetricsReport {
            paradigm: label.to_string(),
            det_p: 0.9,
            det_r: 0.8,
            det_f: 2.0 * 0.9 * 0.8 / 1.7,
            e2e_p: f,
            e2e_r: f,
            e2e_f: f,
            trainable_params: 10,
            total_params: 100,
            wall_s: 0.0,
        }
    }

    #[test]
    fn csv_layout_is_fixed_and_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![row("two_step", 0.5), row("bridge", 0.625)];
        write_metrics_csv(&path, &rows).unwrap();
        let a = std::fs::read(&path).unwrap();
        write_metrics_csv(&path, &rows).unwrap();
        assert_eq!(a, std::fs::read(&path).unwrap());

        let text = String::from_utf8(a).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "two_step,0.900000,0.800000,0.847059,0.500000,0.500000,0.500000,10,100,0.000000"
        );
        assert_eq!(lines.clone().count(), 1);

        let json = dir.path().join("t.json");
        write_metrics_json(&json, &rows).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(parsed[1]["paradigm"], "bridge");
        assert_eq!(parsed[1]["e2e_f"], 0.625);
    }

    #[test]
    fn curves_csv_lists_every_point_under_its_variant() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let series = vec![
            (
                String::from("zero"),
                vec![
                    CurvePoint { iteration: 0, e2e_f: 0.5 },
                    CurvePoint { iteration: 200, e2e_f: 0.6 },
                ],
            ),
            (String::from("gaussian"), vec![CurvePoint { iteration: 0, e2e_f: 0.1 }]),
        ];
        write_curves_csv(&path, &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "variant,iteration,e2e_F\nzero,0,0.500000\nzero,200,0.600000\ngaussian,0,0.100000\n");
    }
}
