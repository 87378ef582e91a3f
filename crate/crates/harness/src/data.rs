//! Dataset access and export. Every example is rendered on demand from
//! `scene_seed(master, split, index)`, so splits are fully determined by the
//! experiment seed — there is nothing to download and no state to get stale.
//! The loaders materialize a whole split when a stage wants to iterate it
//! repeatedly, and `export` writes splits to disk (PGM images + JSONL
//! annotations) for inspection.

use std::io::Write as _;
use std::path::Path;

use glyphspot_core::datasynth::{
    render_rec_crop, render_scene, scene_seed, text_string, RecCropConfig, RecSample, Scene,
    SceneConfig, Split,
};
use glyphspot_core::tensor::Tensor;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

/// Scene generation parameters implied by the experiment's model geometry.
pub fn scene_config(exp: &ExperimentConfig) -> SceneConfig {
    let s = exp.spotter();
    SceneConfig { height: s.scene_h, width: s.scene_w, ..SceneConfig::default() }
}

/// Recognition-crop generation parameters implied by the model geometry.
pub fn rec_crop_config(exp: &ExperimentConfig) -> RecCropConfig {
    let s = exp.spotter();
    RecCropConfig {
        out_h: s.crop_h,
        out_w: s.crop_w,
        positions: s.positions,
        ..RecCropConfig::default()
    }
}

/// Number of examples in a split under this experiment.
pub fn split_size(exp: &ExperimentConfig, split: Split) -> usize {
    match split {
        Split::DetTrain => exp.det_train_scenes,
        Split::RecTrain => exp.rec_train_crops,
        Split::BridgeTrain => exp.bridge_train_scenes,
        Split::Test => exp.test_scenes,
    }
}

/// Renders one scene of a split.
pub fn scene(exp: &ExperimentConfig, split: Split, index: usize) -> Result<Scene> {
    let cfg = scene_config(exp);
    Ok(render_scene(&cfg, scene_seed(exp.seed, split, index))?)
}

/// Renders one standalone recognition crop (these live in the RecTrain seed
/// block; scenes never use it).
pub fn rec_sample(exp: &ExperimentConfig, index: usize) -> Result<RecSample> {
    let cfg = rec_crop_config(exp);
    Ok(render_rec_crop(&cfg, scene_seed(exp.seed, Split::RecTrain, index))?)
}

/// Materializes the first `count` scenes of a split.
pub fn load_scenes(exp: &ExperimentConfig, split: Split, count: usize) -> Result<Vec<Scene>> {
    (0..count).map(|i| scene(exp, split, i)).collect()
}

/// Materializes the first `count` recognition crops.
pub fn load_rec_samples(exp: &ExperimentConfig, count: usize) -> Result<Vec<RecSample>> {
    (0..count).map(|i| rec_sample(exp, i)).collect()
}

// ── Export ──────────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SceneAnnotation<'a> {
    index: usize,
    image: &'a str,
    items: Vec<ItemAnnotation>,
}

#[derive(Serialize)]
struct ItemAnnotation {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    text: String,
}

#[derive(Serialize)]
struct CropAnnotation<'a> {
    index: usize,
    image: &'a str,
    text: String,
    labels: &'a [usize],
}

/// Writes a single-channel image as binary PGM, quantizing [0, 1] to u8.
pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn export_scene_split(
    exp: &ExperimentConfig,
    split: Split,
    name: &str,
    out_dir: &Path,
) -> Result<usize> {
    let dir = out_dir.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let ann_path = out_dir.join(format!("{name}.jsonl"));
    let mut ann =
        std::fs::File::create(&ann_path).map_err(|e| HarnessError::io(&ann_path, e))?;
    let count = split_size(exp, split);
    for i in 0..count {
        let sc = scene(exp, split, i)?;
        let file = format!("{name}/scene_{i:06}.pgm");
        write_pgm(&out_dir.join(&file), &sc.image)?;
        let record = SceneAnnotation {
            index: i,
            image: &file,
            items: sc
                .items
                .iter()
                .map(|it| ItemAnnotation {
                    x0: it.bbox.x0(),
                    y0: it.bbox.y0(),
                    x1: it.bbox.x1(),
                    y1: it.bbox.y1(),
                    text: text_string(&it.text),
                })
                .collect(),
        };
        writeln!(ann, "{}", serde_json::to_string(&record)?)
            .map_err(|e| HarnessError::io(&ann_path, e))?;
    }
    Ok(count)
}

fn export_rec_split(exp: &ExperimentConfig, out_dir: &Path) -> Result<usize> {
    let dir = out_dir.join("rec_train");
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let ann_path = out_dir.join("rec_train.jsonl");
    let mut ann =
        std::fs::File::create(&ann_path).map_err(|e| HarnessError::io(&ann_path, e))?;
    let count = exp.rec_train_crops;
    for i in 0..count {
        let sample = rec_sample(exp, i)?;
        let file = format!("rec_train/crop_{i:06}.pgm");
        write_pgm(&out_dir.join(&file), &sample.image)?;
        let record = CropAnnotation {
            index: i,
            image: &file,
            text: text_string(&sample.text),
            labels: &sample.labels,
        };
        writeln!(ann, "{}", serde_json::to_string(&record)?)
            .map_err(|e| HarnessError::io(&ann_path, e))?;
    }
    Ok(count)
}

/// Writes all four splits under `out_dir`. Returns the total example count.
pub fn export(exp: &ExperimentConfig, out_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut total = export_scene_split(exp, Split::DetTrain, "det_train", out_dir)?;
    total += export_rec_split(exp, out_dir)?;
    total += export_scene_split(exp, Split::BridgeTrain, "bridge_train", out_dir)?;
    total += export_scene_split(exp, Split::Test, "test", out_dir)?;
    Ok(total)
}
