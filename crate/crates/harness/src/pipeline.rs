//! Assembled systems: a parameter store plus the models wired for one of the
//! evaluated paradigms, with scene-level inference on top. A system is either
//! plain (detector feeds the recognizer through pixel crops only) or bridged
//! (detector feature crops additionally correct the recognizer features).

use std::path::Path;

use glyphspot_core::boxes::BoxF;
use glyphspot_core::bridge::Bridge;
use glyphspot_core::datasynth::crop_box;
use glyphspot_core::nn::{Graph, ParameterStore};
use glyphspot_core::rng::Stream;
use glyphspot_core::spotter::{
    crop_features_on_tape, decode_detections, greedy_transcription, Spotter,
};
use glyphspot_core::tensor::Tensor;

use crate::checkpoint::{load_module, save_module};
use crate::config::ExperimentConfig;
use crate::error::Result;

/// Parameter-name prefixes of the two frozen host models.
pub const DET_PREFIX: &str = "det.";
pub const REC_PREFIX: &str = "rec.";
/// Adapters and bridge live outside the host prefixes so freezing the hosts
/// leaves them trainable.
pub const DET_ADAPTER_NAME: &str = "adapter.det";
pub const REC_ADAPTER_NAME: &str = "adapter.rec";
pub const BRIDGE_NAME: &str = "bridge";

/// Boxes narrower or shorter than this decode to an empty transcription (the
/// detection itself is kept; such slivers carry no legible content).
pub const MIN_CROP_SIDE: f64 = 2.0;

/// One spotted word: where it is, how confident the detector was, and what
/// the recognizer read there.
#[derive(Debug, Clone)]
pub struct SpottedWord {
    pub bbox: BoxF,
    pub score: f64,
    pub text: Vec<usize>,
}

/// A store and the models registered in it, ready for training or inference.
pub struct System {
    pub exp: ExperimentConfig,
    pub store: ParameterStore,
    pub spotter: Spotter,
    pub bridge: Option<Bridge>,
}

impl System {
    /// Fresh detector + recognizer with no bridge. The initialization stream
    /// is fixed by the experiment seed; constructors that load checkpoints
    /// overwrite these values entirely.
    pub fn base(exp: &ExperimentConfig) -> Result<System> {
        let mut store = ParameterStore::new();
        let mut rng = Stream::for_domain(exp.seed, "system_init");
        let spotter = Spotter::register(&mut store, exp.spotter(), &mut rng)?;
        Ok(System { exp: exp.clone(), store, spotter, bridge: None })
    }

    /// The plain two-step system: independently trained modules, composed.
    pub fn two_step(exp: &ExperimentConfig, det_ckpt: &Path, rec_ckpt: &Path) -> Result<System> {
        let mut sys = System::base(exp)?;
        load_module(det_ckpt, &mut sys.store, exp.det_fingerprint())?;
        load_module(rec_ckpt, &mut sys.store, exp.rec_fingerprint())?;
        Ok(sys)
    }

    /// A bridged system with freshly initialized bridge and adapters (per the
    /// experiment's switches), before any checkpoint is loaded. Projections
    /// follow `exp.bridge_init()`; encoder and adapter hidden layers draw
    /// from the assembly stream.
    pub fn bridged_fresh(exp: &ExperimentConfig) -> Result<System> {
        let mut sys = System::base(exp)?;
        let mut rng = Stream::for_domain(exp.seed, "bridge_assembly");
        if exp.use_det_adapter {
            sys.spotter.detector.insert_adapter(
                &mut sys.store,
                DET_ADAPTER_NAME,
                exp.det_adapter_hidden,
                &mut rng,
            )?;
        }
        if exp.use_rec_adapter {
            sys.spotter.recognizer.insert_adapter(
                &mut sys.store,
                REC_ADAPTER_NAME,
                exp.rec_adapter_hidden,
                &mut rng,
            )?;
        }
        sys.bridge = Some(Bridge::register(
            &mut sys.store,
            BRIDGE_NAME,
            exp.bridge(),
            exp.bridge_init(),
            &mut rng,
        )?);
        Ok(sys)
    }

    /// A bridged system on top of trained host checkpoints, with the hosts
    /// frozen and the bridge-stage trainable set marked: bridge, adapters,
    /// and the normalization layers local to each installed adapter.
    pub fn bridged(exp: &ExperimentConfig, det_ckpt: &Path, rec_ckpt: &Path) -> Result<System> {
        let mut sys = System::bridged_fresh(exp)?;
        load_module(det_ckpt, &mut sys.store, exp.det_fingerprint())?;
        load_module(rec_ckpt, &mut sys.store, exp.rec_fingerprint())?;
        sys.apply_bridge_stage_freezing()?;
        Ok(sys)
    }

    /// A bridged system restored from a full-system checkpoint (values and
    /// frozen flags both come from the file).
    pub fn bridged_from_checkpoint(exp: &ExperimentConfig, system_ckpt: &Path) -> Result<System> {
        let mut sys = System::bridged_fresh(exp)?;
        load_module(system_ckpt, &mut sys.store, exp.system_fingerprint())?;
        Ok(sys)
    }

    /// Freezes both hosts, then reopens exactly the pieces the bridge stage
    /// trains besides the bridge itself: each installed adapter plus the
    /// normalization layer at its insertion site. Without adapters the hosts
    /// stay fully frozen.
    pub fn apply_bridge_stage_freezing(&mut self) -> Result<()> {
        self.store.freeze_matching("det.*")?;
        self.store.freeze_matching("rec.*")?;
        if self.spotter.detector.has_adapter() {
            self.store.unfreeze_matching("det.ctx_ln.*")?;
        }
        if self.spotter.recognizer.has_adapter() {
            for i in 0..self.exp.spotter().rec_blocks {
                self.store.unfreeze_matching(&format!("rec.block{i}.ln.*"))?;
            }
        }
        Ok(())
    }

    /// Saves every parameter (both hosts, adapters, bridge) with the
    /// system fingerprint.
    pub fn save_system(&self, path: &Path) -> Result<()> {
        save_module(path, &self.store, &[], self.exp.system_fingerprint())
    }

    /// Runs the full pipeline on one scene image: detect, crop, recognize
    /// (through the bridge when present). Forward-only; nothing is trained.
    pub fn spot_scene(&self, image: &Tensor) -> Result<Vec<SpottedWord>> {
        let cfg = &self.spotter.cfg;
        let mut g = Graph::new(&self.store);
        let img = g.tape.constant_tensor(image)?;
        let (features, det_logits) = self.spotter.detector.forward(&mut g, img)?;
        let detections = decode_detections(g.tape.data(det_logits), cfg);

        let mut words = Vec::with_capacity(detections.len());
        for det in detections {
            if det.bbox.w < MIN_CROP_SIDE || det.bbox.h < MIN_CROP_SIDE {
                words.push(SpottedWord { bbox: det.bbox, score: det.score, text: Vec::new() });
                continue;
            }
            let pixels = crop_box(image, &det.bbox, cfg.crop_h, cfg.crop_w);
            let crop = g.tape.constant_tensor(&pixels)?;
            let f_i = self.spotter.recognizer.forward_features(&mut g, crop)?;
            let f = match &self.bridge {
                None => f_i,
                Some(bridge) => {
                    let bcfg = bridge.config();
                    let c_f = crop_features_on_tape(
                        &mut g,
                        features,
                        &det.bbox,
                        bcfg.token_h,
                        bcfg.token_w,
                    )?;
                    bridge.forward(&mut g, c_f, f_i)?
                }
            };
            let logits = self.spotter.recognizer.forward_head(&mut g, f)?;
            let text = greedy_transcription(g.tape.data(logits), cfg.positions);
            words.push(SpottedWord { bbox: det.bbox, score: det.score, text });
        }
        Ok(words)
    }
}
