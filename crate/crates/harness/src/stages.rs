//! Training stages. Each stage owns its loop: round-robin batches over a
//! fixed split, per-example graphs accumulated into batch-mean gradients,
//! one AdamW step per iteration, and a hard abort on non-finite loss.
//!
//! The bridge stage exploits frozenness aggressively: everything below the
//! lowest trainable tensor is computed once per scene and cached as plain
//! data, so its per-iteration graphs contain only the bridge, the adapters,
//! and their local normalization layers.

use std::path::Path;
use std::time::Instant;

use glyphspot_core::boxes::BoxF;
use glyphspot_core::datasynth::{crop_box, Scene, Split};
use glyphspot_core::nn::{Graph, GradAccumulator, ParameterStore};
use glyphspot_core::optim::AdamW;
use glyphspot_core::rng::Stream;
use glyphspot_core::spotter::{
    crop_features, crop_features_on_tape, crop_labels_for_box, decode_detections,
    detection_loss, detection_targets, gt_crop_labels, DetTargets, Detector, Recognizer,
    SpotterConfig,
};
use glyphspot_core::tensor::Tensor;
use glyphspot_core::autodiff::Var;

use crate::config::ExperimentConfig;
use crate::data;
use crate::error::{HarnessError, Result};
use crate::eval::{self, MATCH_IOU};
use crate::pipeline::{System, MIN_CROP_SIDE};

/// What a finished stage reports back.
#[derive(Debug, Clone, Copy)]
pub struct StageOutcome {
    pub first_loss: f64,
    pub last_loss: f64,
    pub wall_s: f64,
}

/// One point of an end-to-end F1 learning curve.
#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub iteration: usize,
    pub e2e_f: f64,
}

fn guard(stage: &'static str, iter: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(HarnessError::NonFiniteLoss {
            stage,
            iter,
            detail: format!("batch loss {loss}"),
        })
    }
}

fn tensor_of(g: &Graph, v: Var) -> Tensor {
    Tensor::new(g.tape.shape(v).to_vec(), g.tape.data(v).to_vec())
        .expect("tape tensors are internally consistent")
}

// ── Detector ────────────────────────────────────────────────────────────────

/// Iteration count and learning rate for one training stage.
struct Schedule {
    iters: usize,
    lr: f64,
}

fn run_det_training(
    store: &mut ParameterStore,
    det: &Detector,
    scenes: &[Scene],
    targets: &[DetTargets],
    sched: Schedule,
    exp: &ExperimentConfig,
    stage: &'static str,
) -> Result<StageOutcome> {
    let start = Instant::now();
    let mut opt = AdamW::new(store, sched.lr, exp.weight_decay);
    let (mut first, mut last) = (0.0, 0.0);
    for iter in 0..sched.iters {
        let mut acc = GradAccumulator::new(store);
        let mut batch_loss = 0.0;
        for k in 0..exp.batch_size {
            let idx = (iter * exp.batch_size + k) % scenes.len();
            let mut g = Graph::new(store);
            let img = g.tape.constant_tensor(&scenes[idx].image)?;
            let (_, logits) = det.forward(&mut g, img)?;
            let loss = detection_loss(&mut g, logits, &targets[idx], exp.box_loss_weight)?;
            batch_loss += g.tape.data(loss)[0];
            g.backward(loss)?;
            acc.add_from(&g);
        }
        last = guard(stage, iter, batch_loss / exp.batch_size as f64)?;
        if iter == 0 {
            first = last;
        }
        acc.mean_into(store);
        opt.step(store);
    }
    Ok(StageOutcome { first_loss: first, last_loss: last, wall_s: start.elapsed().as_secs_f64() })
}

/// Trains a detector from scratch on the detection split. Returns the store
/// (parameters under `det.`) and the stage outcome.
pub fn train_detector(exp: &ExperimentConfig) -> Result<(ParameterStore, StageOutcome)> {
    let cfg = exp.spotter();
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(exp.seed, "det_init");
    let det = Detector::register(&mut store, "det", &cfg, &mut rng)?;
    let scenes = data::load_scenes(exp, Split::DetTrain, exp.det_train_scenes)?;
    let targets: Vec<DetTargets> =
        scenes.iter().map(|s| detection_targets(&s.items, &cfg)).collect();
    let outcome = run_det_training(
        &mut store,
        &det,
        &scenes,
        &targets,
        Schedule { iters: exp.det_iters, lr: exp.lr },
        exp,
        "train_detector",
    )?;
    Ok((store, outcome))
}

/// Continues a trained detector on the bridge split at the finetune rate —
/// half of the two-step-finetune baseline.
pub fn finetune_detector(
    exp: &ExperimentConfig,
    det_ckpt: &Path,
) -> Result<(ParameterStore, StageOutcome)> {
    let cfg = exp.spotter();
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(exp.seed, "det_init");
    let det = Detector::register(&mut store, "det", &cfg, &mut rng)?;
    crate::checkpoint::load_module(det_ckpt, &mut store, exp.det_fingerprint())?;
    let scenes = data::load_scenes(exp, Split::BridgeTrain, exp.bridge_train_scenes)?;
    let targets: Vec<DetTargets> =
        scenes.iter().map(|s| detection_targets(&s.items, &cfg)).collect();
    let outcome = run_det_training(
        &mut store,
        &det,
        &scenes,
        &targets,
        Schedule { iters: exp.finetune_iters, lr: exp.lr_finetune },
        exp,
        "finetune_detector",
    )?;
    Ok((store, outcome))
}

// ── Recognizer ──────────────────────────────────────────────────────────────

fn run_rec_training(
    store: &mut ParameterStore,
    rec: &Recognizer,
    items: &[(Tensor, Vec<usize>)],
    sched: Schedule,
    exp: &ExperimentConfig,
    stage: &'static str,
) -> Result<StageOutcome> {
    let start = Instant::now();
    let mut opt = AdamW::new(store, sched.lr, exp.weight_decay);
    let (mut first, mut last) = (0.0, 0.0);
    for iter in 0..sched.iters {
        let mut acc = GradAccumulator::new(store);
        let mut batch_loss = 0.0;
        for k in 0..exp.batch_size {
            let (image, labels) = &items[(iter * exp.batch_size + k) % items.len()];
            let mut g = Graph::new(store);
            let crop = g.tape.constant_tensor(image)?;
            let logits = rec.forward(&mut g, crop)?;
            let loss = g.tape.softmax_cross_entropy(logits, labels)?;
            batch_loss += g.tape.data(loss)[0];
            g.backward(loss)?;
            acc.add_from(&g);
        }
        last = guard(stage, iter, batch_loss / exp.batch_size as f64)?;
        if iter == 0 {
            first = last;
        }
        acc.mean_into(store);
        opt.step(store);
    }
    Ok(StageOutcome { first_loss: first, last_loss: last, wall_s: start.elapsed().as_secs_f64() })
}

/// Trains a recognizer from scratch on standalone crops. Returns the store
/// (parameters under `rec.`) and the stage outcome.
pub fn train_recognizer(exp: &ExperimentConfig) -> Result<(ParameterStore, StageOutcome)> {
    let cfg = exp.spotter();
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(exp.seed, "rec_init");
    let rec = Recognizer::register(&mut store, "rec", &cfg, &mut rng)?;
    let samples = data::load_rec_samples(exp, exp.rec_train_crops)?;
    let items: Vec<(Tensor, Vec<usize>)> =
        samples.into_iter().map(|s| (s.image, s.labels)).collect();
    let outcome = run_rec_training(
        &mut store,
        &rec,
        &items,
        Schedule { iters: exp.rec_iters, lr: exp.lr },
        exp,
        "train_recognizer",
    )?;
    Ok((store, outcome))
}

/// Ground-truth crop/label pairs from a scene split — the recognizer's view
/// of scene data (used by the finetune baseline and joint training).
fn gt_crop_items(scenes: &[Scene], cfg: &SpotterConfig) -> Vec<(Tensor, Vec<usize>)> {
    let mut items = Vec::new();
    for scene in scenes {
        for item in &scene.items {
            if let Some(labels) = gt_crop_labels(item, cfg) {
                items.push((crop_box(&scene.image, &item.bbox, cfg.crop_h, cfg.crop_w), labels));
            }
        }
    }
    items
}

/// Continues a trained recognizer on ground-truth crops from the bridge
/// split — the other half of the two-step-finetune baseline.
pub fn finetune_recognizer(
    exp: &ExperimentConfig,
    rec_ckpt: &Path,
) -> Result<(ParameterStore, StageOutcome)> {
    let cfg = exp.spotter();
    let mut store = ParameterStore::new();
    let mut rng = Stream::for_domain(exp.seed, "rec_init");
    let rec = Recognizer::register(&mut store, "rec", &cfg, &mut rng)?;
    crate::checkpoint::load_module(rec_ckpt, &mut store, exp.rec_fingerprint())?;
    let scenes = data::load_scenes(exp, Split::BridgeTrain, exp.bridge_train_scenes)?;
    let items = gt_crop_items(&scenes, &cfg);
    let outcome = run_rec_training(
        &mut store,
        &rec,
        &items,
        Schedule { iters: exp.finetune_iters, lr: exp.lr_finetune },
        exp,
        "finetune_recognizer",
    )?;
    Ok((store, outcome))
}

// ── Joint training ──────────────────────────────────────────────────────────

/// Trains detector and recognizer jointly from scratch on the bridge split:
/// detection loss on the scene plus recognition loss on its ground-truth
/// crops, everything trainable. This is the monolithic alternative the
/// modular paradigms are measured against.
pub fn train_e2e(exp: &ExperimentConfig) -> Result<(System, StageOutcome)> {
    let start = Instant::now();
    let mut sys = System::base(exp)?;
    let cfg = sys.spotter.cfg.clone();
    let scenes = data::load_scenes(exp, Split::BridgeTrain, exp.bridge_train_scenes)?;
    let targets: Vec<DetTargets> =
        scenes.iter().map(|s| detection_targets(&s.items, &cfg)).collect();
    let crops: Vec<Vec<(Tensor, Vec<usize>)>> = scenes
        .iter()
        .map(|s| gt_crop_items(core::slice::from_ref(s), &cfg))
        .collect();

    let mut opt = AdamW::new(&sys.store, exp.lr, exp.weight_decay);
    let (mut first, mut last) = (0.0, 0.0);
    for iter in 0..exp.e2e_iters {
        let mut acc = GradAccumulator::new(&sys.store);
        let mut batch_loss = 0.0;
        for k in 0..exp.batch_size {
            let idx = (iter * exp.batch_size + k) % scenes.len();
            let mut g = Graph::new(&sys.store);
            let img = g.tape.constant_tensor(&scenes[idx].image)?;
            let (_, logits) = sys.spotter.detector.forward(&mut g, img)?;
            let mut loss =
                detection_loss(&mut g, logits, &targets[idx], exp.box_loss_weight)?;
            if !crops[idx].is_empty() {
                let mut ces = Vec::with_capacity(crops[idx].len());
                for (image, labels) in &crops[idx] {
                    let crop = g.tape.constant_tensor(image)?;
                    let rl = sys.spotter.recognizer.forward(&mut g, crop)?;
                    ces.push(g.tape.softmax_cross_entropy(rl, labels)?);
                }
                let mut ce = ces[0];
                for &c in &ces[1..] {
                    ce = g.tape.add(ce, c)?;
                }
                let ce = g.tape.scale(ce, 1.0 / ces.len() as f64)?;
                loss = g.tape.add(loss, ce)?;
            }
            batch_loss += g.tape.data(loss)[0];
            g.backward(loss)?;
            acc.add_from(&g);
        }
        last = guard("train_e2e", iter, batch_loss / exp.batch_size as f64)?;
        if iter == 0 {
            first = last;
        }
        acc.mean_into(&mut sys.store);
        opt.step(&mut sys.store);
    }
    let outcome =
        StageOutcome { first_loss: first, last_loss: last, wall_s: start.elapsed().as_secs_f64() };
    Ok((sys, outcome))
}

// ── Bridge stage ────────────────────────────────────────────────────────────

/// Supervision attached to one predicted box: where to crop, what the crop
/// must read, and the frozen recognizer features for it.
struct CropSupervision {
    bbox: BoxF,
    labels: Vec<usize>,
    f_i: Tensor,
    /// Feature crop, precomputed only when the detector side is fully frozen.
    c_f: Option<Tensor>,
}

/// A finished bridge stage: the trained system, loop stats, and (optionally)
/// the end-to-end learning curve.
pub struct BridgeRun {
    pub system: System,
    pub outcome: StageOutcome,
    pub curve: Vec<CurvePoint>,
}

/// Trains the bridge (and any installed adapters plus their local norms) on
/// top of frozen host checkpoints.
///
/// Caching: the detector stem and the recognizer trunk are frozen in every
/// variant, so per-scene stem outputs and per-crop `F_i` are computed once.
/// Without a detector adapter the whole detector is frozen, so detections,
/// matches, and feature crops are fixed for the entire stage; with one, the
/// detector's supervisable tail runs on the tape and the detections backing
/// the crops are refreshed every `refresh_interval` iterations.
pub fn train_bridge(
    exp: &ExperimentConfig,
    det_ckpt: &Path,
    rec_ckpt: &Path,
    record_curve: bool,
) -> Result<BridgeRun> {
    let start = Instant::now();
    let mut sys = System::bridged(exp, det_ckpt, rec_ckpt)?;
    let cfg = sys.spotter.cfg.clone();
    let bcfg = sys.bridge.as_ref().expect("bridged system").config().clone();
    let use_da = sys.spotter.detector.has_adapter();

    let scenes = data::load_scenes(exp, Split::BridgeTrain, exp.bridge_train_scenes)?;
    let targets: Vec<DetTargets> =
        scenes.iter().map(|s| detection_targets(&s.items, &cfg)).collect();
    let curve_scenes = if record_curve {
        data::load_scenes(exp, Split::Test, exp.curve_scenes)?
    } else {
        Vec::new()
    };

    // Frozen per-scene base of the detector path: the stem when the context
    // block stays live (adapter present), the finished features otherwise.
    let mut base: Vec<Tensor> = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let mut g = Graph::new(&sys.store);
        let img = g.tape.constant_tensor(&scene.image)?;
        let v = if use_da {
            sys.spotter.detector.forward_stem(&mut g, img)?
        } else {
            sys.spotter.detector.forward_features(&mut g, img)?
        };
        base.push(tensor_of(&g, v));
    }

    // Matched-crop supervision per scene, from the current detector state.
    let refresh = |sys: &System, base: &[Tensor]| -> Result<Vec<Vec<CropSupervision>>> {
        let mut all = Vec::with_capacity(scenes.len());
        for (scene, base_t) in scenes.iter().zip(base) {
            let mut g = Graph::new(&sys.store);
            let base_v = g.tape.constant_tensor(base_t)?;
            let feats = if use_da {
                let ctx = sys.spotter.detector.forward_context(&mut g, base_v)?;
                sys.spotter.detector.apply_adapter(&mut g, ctx)?
            } else {
                base_v
            };
            let logits = sys.spotter.detector.forward_head(&mut g, feats)?;
            let detections = decode_detections(g.tape.data(logits), &cfg);
            let feats_t = tensor_of(&g, feats);

            let pred: Vec<BoxF> = detections.iter().map(|d| d.bbox).collect();
            let gt: Vec<BoxF> = scene.items.iter().map(|it| it.bbox).collect();
            let mut crops = Vec::new();
            for (pi, gi) in glyphspot_core::boxes::match_boxes(&pred, &gt, MATCH_IOU) {
                let bbox = pred[pi];
                if bbox.w < MIN_CROP_SIDE || bbox.h < MIN_CROP_SIDE {
                    continue;
                }
                // Labels the crop window can actually support; None means a
                // glyph fell outside the box, so the pair trains nothing.
                let Some(labels) = crop_labels_for_box(&scene.items[gi], &bbox, &cfg) else {
                    continue;
                };
                let pixels = crop_box(&scene.image, &bbox, cfg.crop_h, cfg.crop_w);
                let mut gc = Graph::new(&sys.store);
                let crop_v = gc.tape.constant_tensor(&pixels)?;
                let f_i_v = sys.spotter.recognizer.forward_features(&mut gc, crop_v)?;
                let f_i = tensor_of(&gc, f_i_v);
                let c_f = (!use_da)
                    .then(|| crop_features(&feats_t, &bbox, bcfg.token_h, bcfg.token_w));
                crops.push(CropSupervision { bbox, labels, f_i, c_f });
            }
            all.push(crops);
        }
        Ok(all)
    };
    let mut supervision = refresh(&sys, &base)?;

    let mut opt = AdamW::new(&sys.store, exp.lr, exp.weight_decay);
    let (mut first, mut last) = (0.0, 0.0);
    let mut curve = Vec::new();
    if record_curve {
        curve.push(CurvePoint { iteration: 0, e2e_f: eval::e2e_f(&sys, &curve_scenes)? });
    }

    for iter in 0..exp.bridge_iters {
        if use_da && iter > 0 && iter % exp.refresh_interval == 0 {
            supervision = refresh(&sys, &base)?;
        }
        let mut acc = GradAccumulator::new(&sys.store);
        let mut batch_loss = 0.0;
        let mut contributed = 0usize;
        for k in 0..exp.batch_size {
            let idx = (iter * exp.batch_size + k) % scenes.len();
            let crops = &supervision[idx];
            if crops.is_empty() && !use_da {
                continue; // nothing reaches a trainable parameter
            }
            let mut g = Graph::new(&sys.store);
            // Detector tail (live only with an adapter installed).
            let mut feats_v = None;
            let mut loss = None;
            if use_da {
                let base_v = g.tape.constant_tensor(&base[idx])?;
                let ctx = sys.spotter.detector.forward_context(&mut g, base_v)?;
                let feats = sys.spotter.detector.apply_adapter(&mut g, ctx)?;
                let logits = sys.spotter.detector.forward_head(&mut g, feats)?;
                loss = Some(detection_loss(
                    &mut g,
                    logits,
                    &targets[idx],
                    exp.box_loss_weight,
                )?);
                feats_v = Some(feats);
            }
            // Bridged recognition on each matched crop.
            if !crops.is_empty() {
                let bridge = sys.bridge.as_ref().expect("bridged system");
                let mut ces = Vec::with_capacity(crops.len());
                for crop in crops {
                    let c_f = match (&crop.c_f, feats_v) {
                        (Some(t), _) => g.tape.constant_tensor(t)?,
                        (None, Some(feats)) => crop_features_on_tape(
                            &mut g,
                            feats,
                            &crop.bbox,
                            bcfg.token_h,
                            bcfg.token_w,
                        )?,
                        (None, None) => unreachable!("c_f cached whenever the detector is frozen"),
                    };
                    let f_i = g.tape.constant_tensor(&crop.f_i)?;
                    let f_r = bridge.forward(&mut g, c_f, f_i)?;
                    let rl = sys.spotter.recognizer.forward_head(&mut g, f_r)?;
                    ces.push(g.tape.softmax_cross_entropy(rl, &crop.labels)?);
                }
                let mut ce = ces[0];
                for &c in &ces[1..] {
                    ce = g.tape.add(ce, c)?;
                }
                let ce = g.tape.scale(ce, 1.0 / ces.len() as f64)?;
                loss = Some(match loss {
                    Some(det) => g.tape.add(det, ce)?,
                    None => ce,
                });
            }
            let loss = loss.expect("da or crops guaranteed above");
            batch_loss += g.tape.data(loss)[0];
            g.backward(loss)?;
            acc.add_from(&g);
            contributed += 1;
        }
        if contributed == 0 {
            continue;
        }
        last = guard("train_bridge", iter, batch_loss / contributed as f64)?;
        if iter == 0 {
            first = last;
        }
        acc.mean_into(&mut sys.store);
        opt.step(&mut sys.store);
        if record_curve && (iter + 1) % exp.curve_every == 0 {
            curve.push(CurvePoint {
                iteration: iter + 1,
                e2e_f: eval::e2e_f(&sys, &curve_scenes)?,
            });
        }
    }

    let outcome =
        StageOutcome { first_loss: first, last_loss: last, wall_s: start.elapsed().as_secs_f64() };
    Ok(BridgeRun { system: sys, outcome, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::save_module;

    fn tiny_exp() -> ExperimentConfig {
        ExperimentConfig {
            det_train_scenes: 6,
            rec_train_crops: 8,
            bridge_train_scenes: 6,
            test_scenes: 4,
            curve_scenes: 2,
            det_iters: 3,
            rec_iters: 3,
            bridge_iters: 4,
            e2e_iters: 2,
            finetune_iters: 2,
            batch_size: 2,
            curve_every: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn detector_and_recognizer_stages_reduce_their_losses() {
        let mut exp = tiny_exp();
        exp.det_iters = 30;
        exp.rec_iters = 30;
        let (_, det_out) = train_detector(&exp).unwrap();
        assert!(det_out.last_loss < det_out.first_loss);
        let (_, rec_out) = train_recognizer(&exp).unwrap();
        assert!(rec_out.last_loss < rec_out.first_loss);
    }

    #[test]
    fn bridge_stage_trains_only_the_bridge_side_of_the_freeze_line() {
        let mut exp = tiny_exp();
        // A detector memorizing the bridge split guarantees matched
        // detections there, so recognition supervision reaches the bridge.
        exp.finetune_iters = 250;
        exp.lr_finetune = 1e-3;
        let dir = tempfile::tempdir().unwrap();
        let det_path = dir.path().join("det.ckpt");
        let rec_path = dir.path().join("rec.ckpt");
        let (det_store, _) = train_detector(&exp).unwrap();
        save_module(&det_path, &det_store, &["det."], exp.det_fingerprint()).unwrap();
        let (det_store, _) = finetune_detector(&exp, &det_path).unwrap();
        save_module(&det_path, &det_store, &["det."], exp.det_fingerprint()).unwrap();
        let (rec_store, _) = train_recognizer(&exp).unwrap();
        save_module(&rec_path, &rec_store, &["rec."], exp.rec_fingerprint()).unwrap();

        let run = train_bridge(&exp, &det_path, &rec_path, true).unwrap();
        let sys = &run.system;
        assert_eq!(run.curve.len(), 1 + exp.bridge_iters / exp.curve_every);

        // Frozen parameters are bit-identical to their checkpoints.
        let det_ckpt = crate::checkpoint::Checkpoint::read(&det_path).unwrap();
        for t in &det_ckpt.tensors {
            let id = sys.store.id(&t.name).unwrap();
            if sys.store.is_frozen(id) {
                assert_eq!(sys.store.value(id).data(), &t.data[..], "{} drifted", t.name);
            } else {
                assert!(t.name.contains("ctx_ln"), "unexpected trainable {}", t.name);
            }
        }
        // The bridge moved away from its zero initialization.
        let zl = sys.store.id("bridge.zl.w").unwrap();
        assert!(sys.store.value(zl).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn joint_training_runs_and_reports_finite_losses() {
        let exp = tiny_exp();
        let (sys, out) = train_e2e(&exp).unwrap();
        assert!(out.first_loss.is_finite() && out.last_loss.is_finite());
        assert_eq!(sys.store.num_params_trainable(), sys.store.num_params_total());
    }

    #[test]
    fn finetuning_starts_from_the_checkpoint_not_from_scratch() {
        let exp = tiny_exp();
        let dir = tempfile::tempdir().unwrap();
        let det_path = dir.path().join("det.ckpt");
        let (det_store, _) = train_detector(&exp).unwrap();
        save_module(&det_path, &det_store, &["det."], exp.det_fingerprint()).unwrap();

        let (tuned, _) = finetune_detector(&exp, &det_path).unwrap();
        // Same architecture, adjusted values: names match, at least one
        // tensor differs from the checkpoint but none were reinitialized
        // (finetuning two iterations at lr 1e-4 moves parameters slightly).
        let id = tuned.id("det.conv1.w").unwrap();
        let orig = det_store.value(det_store.id("det.conv1.w").unwrap());
        let moved: f64 = tuned
            .value(id)
            .data()
            .iter()
            .zip(orig.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(moved > 0.0 && moved < 0.1 * orig.data().len() as f64);
    }
}
