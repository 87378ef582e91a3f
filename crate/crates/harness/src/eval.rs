//! Scene-level evaluation: detection and end-to-end precision/recall/F1,
//! micro-aggregated over a set of test scenes.
//!
//! A predicted box matches a ground-truth box greedily by IoU (threshold
//! 0.5, one-to-one). A match is an end-to-end hit only if the transcription
//! also equals the ground truth exactly. Precision divides by total
//! predictions, recall by total ground-truth items, both pooled over all
//! scenes; empty denominators give zero.

use glyphspot_core::boxes::{match_boxes, BoxF};
use glyphspot_core::datasynth::Scene;
use serde::Serialize;

use crate::error::Result;
use crate::pipeline::System;

/// IoU threshold above which a prediction counts as locating a ground truth.
pub const MATCH_IOU: f64 = 0.5;

/// One row of results: how well a system detects and reads, plus its
/// parameter budget. `wall_s` is reported separately from the deterministic
/// metrics and is written as zero in comparison artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub paradigm: String,
    pub det_p: f64,
    pub det_r: f64,
    pub det_f: f64,
    pub e2e_p: f64,
    pub e2e_r: f64,
    pub e2e_f: f64,
    pub trainable_params: usize,
    pub total_params: usize,
    pub wall_s: f64,
}

/// Pooled match counts before they turn into rates.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalCounts {
    pub predictions: usize,
    pub ground_truth: usize,
    pub det_hits: usize,
    pub e2e_hits: usize,
}

impl EvalCounts {
    pub fn det_prf(&self) -> (f64, f64, f64) {
        prf(self.det_hits, self.predictions, self.ground_truth)
    }

    pub fn e2e_prf(&self) -> (f64, f64, f64) {
        prf(self.e2e_hits, self.predictions, self.ground_truth)
    }
}

fn prf(hits: usize, predictions: usize, ground_truth: usize) -> (f64, f64, f64) {
    let p = if predictions == 0 { 0.0 } else { hits as f64 / predictions as f64 };
    let r = if ground_truth == 0 { 0.0 } else { hits as f64 / ground_truth as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Scores one system on a slice of scenes.
pub fn count_matches(system: &System, scenes: &[Scene]) -> Result<EvalCounts> {
    let mut counts = EvalCounts::default();
    for scene in scenes {
        let words = system.spot_scene(&scene.image)?;
        let pred_boxes: Vec<BoxF> = words.iter().map(|w| w.bbox).collect();
        let gt_boxes: Vec<BoxF> = scene.items.iter().map(|it| it.bbox).collect();
        counts.predictions += pred_boxes.len();
        counts.ground_truth += gt_boxes.len();
        for (pi, gi) in match_boxes(&pred_boxes, &gt_boxes, MATCH_IOU) {
            counts.det_hits += 1;
            if words[pi].text == scene.items[gi].text {
                counts.e2e_hits += 1;
            }
        }
    }
    Ok(counts)
}

/// Full report for one system under a paradigm label.
pub fn evaluate(system: &System, label: &str, scenes: &[Scene]) -> Result<MetricsReport> {
    let counts = count_matches(system, scenes)?;
    let (det_p, det_r, det_f) = counts.det_prf();
    let (e2e_p, e2e_r, e2e_f) = counts.e2e_prf();
    Ok(MetricsReport {
        paradigm: label.to_string(),
        det_p,
        det_r,
        det_f,
        e2e_p,
        e2e_r,
        e2e_f,
        trainable_params: system.store.num_params_trainable(),
        total_params: system.store.num_params_total(),
        wall_s: 0.0,
    })
}

/// End-to-end F1 alone, for learning curves.
pub fn e2e_f(system: &System, scenes: &[Scene]) -> Result<f64> {
    Ok(count_matches(system, scenes)?.e2e_prf().2)
}
