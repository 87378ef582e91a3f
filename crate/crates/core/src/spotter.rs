//! The two task models and their glue: a dense grid detector, a fixed-width
//! crop recognizer, and the target-assignment / loss / decode plumbing that
//! turns scenes into supervision and logits back into boxes and text.
//!
//! Both models expose a split between a *feature* stage and a *head* stage.
//! The seam is what the rest of the system builds on: detector features are
//! cropped into tokens for the bridge, recognizer features are the tensor the
//! bridge adds its correction to, and the adapters sit immediately before
//! each seam so a frozen backbone can still be steered.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{sigmoid_value, Var};
use crate::boxes::{nms, BoxF};
use crate::datasynth::{
    char_spans_tight, position_labels, SceneItem, GLYPH_ADVANCE, GLYPH_W, NUM_CLASSES,
};
use crate::error::{CoreError, Result};
use crate::nn::{
    Adapter, ConvLayer, FfnBlock, Graph, Init, LayerNormLayer, LinearLayer, ParameterStore,
};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Downsampling factor from scene pixels to detector grid cells (two
/// stride-2 convolutions).
pub const GRID_STRIDE: usize = 4;

/// Detector output channels: objectness logit plus four box offsets
/// `(tx, ty, tw, th)`.
pub const DET_CHANNELS: usize = 5;

/// Shared architecture/decoding parameters for the spotting pipeline.
#[derive(Debug, Clone)]
pub struct SpotterConfig {
    pub scene_h: usize,
    pub scene_w: usize,
    /// Detector stem width (channels after the first convolution).
    pub det_stem: usize,
    /// Detector feature width; also the bridge token channel count.
    pub det_width: usize,
    /// Recognizer crop size; crops are resampled to this before recognition.
    pub crop_h: usize,
    pub crop_w: usize,
    /// Output positions along the crop; must equal `crop_w / GRID_STRIDE`.
    pub positions: usize,
    /// Recognizer stem widths (after conv1 and conv2).
    pub rec_stem: (usize, usize),
    /// Recognizer feature width; also the bridge output dimension.
    pub rec_dim: usize,
    /// Hidden width of the recognizer head's feed-forward blocks.
    pub rec_hidden: usize,
    /// Number of feed-forward blocks in the recognizer head.
    pub rec_blocks: usize,
    /// Detections fire where `sigmoid(objectness) >= obj_threshold`.
    pub obj_threshold: f64,
    /// Greedy NMS suppresses overlap strictly above this IoU.
    pub nms_iou: f64,
    /// Hard cap on detections per scene (guards untrained models).
    pub max_detections: usize,
    /// Weight of the box-regression term relative to objectness.
    pub box_loss_weight: f64,
}

impl Default for SpotterConfig {
    fn default() -> Self {
        SpotterConfig {
            scene_h: 96,
            scene_w: 96,
            det_stem: 8,
            det_width: 16,
            crop_h: 32,
            crop_w: 96,
            positions: 24,
            rec_stem: (12, 32),
            rec_dim: 64,
            rec_hidden: 64,
            rec_blocks: 2,
            obj_threshold: 0.5,
            nms_iou: 0.5,
            max_detections: 8,
            box_loss_weight: 1.0,
        }
    }
}

impl SpotterConfig {
    pub fn grid_h(&self) -> usize {
        self.scene_h / GRID_STRIDE
    }

    pub fn grid_w(&self) -> usize {
        self.scene_w / GRID_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        let div = |n: usize, what: &str| -> Result<()> {
            if n == 0 || !n.is_multiple_of(GRID_STRIDE) {
                return Err(CoreError::Config(format!(
                    "{what} must be a positive multiple of {GRID_STRIDE}, got {n}"
                )));
            }
            Ok(())
        };
        div(self.scene_h, "scene_h")?;
        div(self.scene_w, "scene_w")?;
        div(self.crop_h, "crop_h")?;
        div(self.crop_w, "crop_w")?;
        if self.positions != self.crop_w / GRID_STRIDE {
            return Err(CoreError::Config(format!(
                "positions must equal crop_w / {GRID_STRIDE} = {}, got {}",
                self.crop_w / GRID_STRIDE,
                self.positions
            )));
        }
        if self.det_stem == 0
            || self.det_width == 0
            || self.rec_stem.0 == 0
            || self.rec_stem.1 == 0
            || self.rec_dim == 0
            || self.rec_hidden == 0
            || self.rec_blocks == 0
        {
            return Err(CoreError::Config(String::from("model widths must be positive")));
        }
        Ok(())
    }
}

// ── Detector ────────────────────────────────────────────────────────────────

/// Dense single-shot detector over a stride-4 grid.
///
/// Image `[1,H,W]` → two stride-2 convs → a residual context block
/// (layer-norm over channels, 3x3 conv, GELU, 1x1 conv) → features
/// `[det_width, H/4, W/4]` → a small 1x1-conv head → logits `[5, H/4, W/4]`.
/// The optional adapter sits after the context residual, i.e. on the feature
/// tensor itself, so it can reshape what both the head and the bridge see.
pub struct Detector {
    conv1: ConvLayer,
    conv2: ConvLayer,
    ctx_ln: LayerNormLayer,
    ctx_a: ConvLayer,
    ctx_b: ConvLayer,
    adapter: Option<Adapter>,
    head_a: ConvLayer,
    head_b: ConvLayer,
    width: usize,
}

impl Detector {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        cfg: &SpotterConfig,
        rng: &mut Stream,
    ) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.det_width;
        let conv1 = ConvLayer::register(
            store,
            &format!("{name}.conv1"),
            1,
            cfg.det_stem,
            (3, 3),
            (2, 2),
            (1, 1),
            Init::Standard,
            rng,
        )?;
        let conv2 = ConvLayer::register(
            store,
            &format!("{name}.conv2"),
            cfg.det_stem,
            w,
            (3, 3),
            (2, 2),
            (1, 1),
            Init::Standard,
            rng,
        )?;
        let ctx_ln = LayerNormLayer::register(store, &format!("{name}.ctx_ln"), w)?;
        let ctx_a = ConvLayer::register(
            store,
            &format!("{name}.ctx_a"),
            w,
            w,
            (3, 3),
            (1, 1),
            (1, 1),
            Init::Standard,
            rng,
        )?;
        let ctx_b = ConvLayer::register(
            store,
            &format!("{name}.ctx_b"),
            w,
            w,
            (1, 1),
            (1, 1),
            (0, 0),
            Init::Standard,
            rng,
        )?;
        let head_a = ConvLayer::register(
            store,
            &format!("{name}.head_a"),
            w,
            w,
            (1, 1),
            (1, 1),
            (0, 0),
            Init::Standard,
            rng,
        )?;
        let head_b = ConvLayer::register(
            store,
            &format!("{name}.head_b"),
            w,
            DET_CHANNELS,
            (1, 1),
            (1, 1),
            (0, 0),
            Init::Standard,
            rng,
        )?;
        Ok(Detector {
            conv1,
            conv2,
            ctx_ln,
            ctx_a,
            ctx_b,
            adapter: None,
            head_a,
            head_b,
            width: w,
        })
    }

    /// Adds a zero-initialized adapter on the feature tensor. Registered
    /// under `name`, which should live outside the detector's own prefix so
    /// freezing the detector leaves the adapter trainable.
    pub fn insert_adapter(
        &mut self,
        store: &mut ParameterStore,
        name: &str,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<()> {
        if self.adapter.is_some() {
            return Err(CoreError::AdapterOccupied("detector_features"));
        }
        self.adapter = Some(Adapter::register(store, name, self.width, hidden, rng)?);
        Ok(())
    }

    pub fn has_adapter(&self) -> bool {
        self.adapter.is_some()
    }

    /// The two stride-2 convolutions: `[width, gh, gw]`. Constant per scene
    /// whenever the convolution weights are frozen — the cache boundary for
    /// adapter training, under which the context norm may still be live.
    pub fn forward_stem(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let x = self.conv1.forward(g, image)?;
        let x = g.tape.gelu(x)?;
        let x = self.conv2.forward(g, x)?;
        g.tape.gelu(x)
    }

    /// Residual context block (norm, 3x3 conv, GELU, 1x1 conv) over the stem
    /// output.
    pub fn forward_context(&self, g: &mut Graph, base: Var) -> Result<Var> {
        let grid = g.tape.shape(base).to_vec();
        let rows = cube_to_rows(g, base)?;
        let normed = self.ctx_ln.forward(g, rows)?;
        let cube = rows_to_cube(g, normed, grid[1], grid[2])?;
        let cube = self.ctx_a.forward(g, cube)?;
        let cube = g.tape.gelu(cube)?;
        let cube = self.ctx_b.forward(g, cube)?;
        g.tape.add(base, cube)
    }

    /// Everything up to (not including) the adapter slot: `[width, gh, gw]`.
    pub fn forward_trunk(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let base = self.forward_stem(g, image)?;
        self.forward_context(g, base)
    }

    /// Applies the adapter (identity when none is installed).
    pub fn apply_adapter(&self, g: &mut Graph, trunk: Var) -> Result<Var> {
        match &self.adapter {
            None => Ok(trunk),
            Some(ad) => {
                let grid = g.tape.shape(trunk).to_vec();
                let rows = cube_to_rows(g, trunk)?;
                let rows = ad.forward(g, rows)?;
                rows_to_cube(g, rows, grid[1], grid[2])
            }
        }
    }

    /// Detection features `[width, gh, gw]` — the tensor the bridge crops.
    pub fn forward_features(&self, g: &mut Graph, image: Var) -> Result<Var> {
        let trunk = self.forward_trunk(g, image)?;
        self.apply_adapter(g, trunk)
    }

    /// Head over features: logits `[5, gh, gw]`.
    pub fn forward_head(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let h = self.head_a.forward(g, features)?;
        let h = g.tape.gelu(h)?;
        self.head_b.forward(g, h)
    }

    /// Full pass: `(features, logits)`.
    pub fn forward(&self, g: &mut Graph, image: Var) -> Result<(Var, Var)> {
        let f = self.forward_features(g, image)?;
        let l = self.forward_head(g, f)?;
        Ok((f, l))
    }
}

/// `[c,h,w]` cube viewed as `[h*w, c]` rows (one row per grid cell).
fn cube_to_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let s = g.tape.shape(x).to_vec();
    let flat = g.tape.reshape(x, vec![s[0], s[1] * s[2]])?;
    g.tape.transpose(flat)
}

/// Inverse of [`cube_to_rows`]; needs the spatial extent back.
fn rows_to_cube(g: &mut Graph, rows: Var, h: usize, w: usize) -> Result<Var> {
    let s = g.tape.shape(rows).to_vec();
    let t = g.tape.transpose(rows)?;
    g.tape.reshape(t, vec![s[1], h, w])
}

// ── Recognizer ──────────────────────────────────────────────────────────────

/// Crop recognizer emitting per-position class logits.
///
/// Crop `[1,crop_h,crop_w]` → two stride-2 convs → a column-collapsing conv
/// (kernel spans the full remaining height) → features `F_i`
/// `[positions, rec_dim]` → head of pre-norm feed-forward blocks → classifier
/// logits `[positions, NUM_CLASSES]`. The optional adapter lives in the last
/// head block; the bridge adds its correction to `F_i` before the head runs.
pub struct Recognizer {
    conv1: ConvLayer,
    conv2: ConvLayer,
    conv3: ConvLayer,
    blocks: Vec<FfnBlock>,
    classifier: LinearLayer,
    positions: usize,
    dim: usize,
}

impl Recognizer {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        cfg: &SpotterConfig,
        rng: &mut Stream,
    ) -> Result<Self> {
        cfg.validate()?;
        let (s1, s2) = cfg.rec_stem;
        let conv1 = ConvLayer::register(
            store,
            &format!("{name}.conv1"),
            1,
            s1,
            (3, 3),
            (2, 2),
            (1, 1),
            Init::Standard,
            rng,
        )?;
        let conv2 = ConvLayer::register(
            store,
            &format!("{name}.conv2"),
            s1,
            s2,
            (3, 3),
            (2, 2),
            (1, 1),
            Init::Standard,
            rng,
        )?;
        // After two stride-2 convs the crop is [s2, crop_h/4, positions];
        // this kernel consumes the full height, leaving one row of tokens.
        let conv3 = ConvLayer::register(
            store,
            &format!("{name}.conv3"),
            s2,
            cfg.rec_dim,
            (cfg.crop_h / GRID_STRIDE, 3),
            (1, 1),
            (0, 1),
            Init::Standard,
            rng,
        )?;
        let mut blocks = Vec::with_capacity(cfg.rec_blocks);
        for i in 0..cfg.rec_blocks {
            blocks.push(FfnBlock::register(
                store,
                &format!("{name}.block{i}"),
                cfg.rec_dim,
                cfg.rec_hidden,
                rng,
            )?);
        }
        let classifier = LinearLayer::register(
            store,
            &format!("{name}.cls"),
            cfg.rec_dim,
            NUM_CLASSES,
            Init::Standard,
            rng,
        )?;
        Ok(Recognizer {
            conv1,
            conv2,
            conv3,
            blocks,
            classifier,
            positions: cfg.positions,
            dim: cfg.rec_dim,
        })
    }

    /// Adds a zero-initialized adapter to the last head block, registered
    /// under `name` (outside the recognizer's own prefix).
    pub fn insert_adapter(
        &mut self,
        store: &mut ParameterStore,
        name: &str,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<()> {
        let last = self
            .blocks
            .last_mut()
            .expect("recognizer always has at least one head block");
        last.insert_adapter(store, name, hidden, rng)
    }

    pub fn has_adapter(&self) -> bool {
        self.blocks.last().is_some_and(FfnBlock::has_adapter)
    }

    /// Backbone features `F_i` `[positions, rec_dim]`. With a frozen
    /// recognizer these depend only on the crop and are safe to cache — the
    /// adapter sits in the head, not here.
    pub fn forward_features(&self, g: &mut Graph, crop: Var) -> Result<Var> {
        let x = self.conv1.forward(g, crop)?;
        let x = g.tape.gelu(x)?;
        let x = self.conv2.forward(g, x)?;
        let x = g.tape.gelu(x)?;
        let x = self.conv3.forward(g, x)?;
        let x = g.tape.gelu(x)?;
        let flat = g.tape.reshape(x, vec![self.dim, self.positions])?;
        g.tape.transpose(flat)
    }

    /// Head over features: logits `[positions, NUM_CLASSES]`.
    pub fn forward_head(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let mut h = features;
        for b in &self.blocks {
            h = b.forward(g, h)?;
        }
        self.classifier.forward(g, h)
    }

    /// Full pass from crop to logits.
    pub fn forward(&self, g: &mut Graph, crop: Var) -> Result<Var> {
        let f = self.forward_features(g, crop)?;
        self.forward_head(g, f)
    }
}

/// Both task models registered in one store under the `det.` and `rec.`
/// prefixes, so either side can be frozen with a single pattern.
pub struct Spotter {
    pub cfg: SpotterConfig,
    pub detector: Detector,
    pub recognizer: Recognizer,
}

impl Spotter {
    pub fn register(store: &mut ParameterStore, cfg: SpotterConfig, rng: &mut Stream) -> Result<Self> {
        let detector = Detector::register(store, "det", &cfg, rng)?;
        let recognizer = Recognizer::register(store, "rec", &cfg, rng)?;
        Ok(Spotter { cfg, detector, recognizer })
    }
}

// ── Detection targets and loss ──────────────────────────────────────────────

/// Dense supervision for one scene, laid out to match the reshaped head
/// output `[5, cells]`: `box_targets` is channel-major (`tx` for every cell,
/// then `ty`, `tw`, `th`).
pub struct DetTargets {
    pub obj_targets: Vec<f64>,
    pub obj_weights: Vec<f64>,
    pub box_targets: Vec<f64>,
    pub box_weights: Vec<f64>,
    pub positive_cells: Vec<usize>,
}

/// Assigns each ground-truth box to every grid cell whose center lies in the
/// central half of the box (at least the cell containing the box center), so
/// neighbouring cells that inevitably fire on the same string all regress to
/// the same box and collapse under non-maximum suppression instead of
/// surviving as fragments. Cells already claimed by an earlier item are
/// skipped. Objectness weights balance the positive and negative sets (each
/// half sums to 0.5); box weights average over the four offsets of the
/// positive cells.
pub fn detection_targets(items: &[SceneItem], cfg: &SpotterConfig) -> DetTargets {
    let (gh, gw) = (cfg.grid_h(), cfg.grid_w());
    let cells = gh * gw;
    let s = GRID_STRIDE as f64;
    let mut obj_targets = vec![0.0; cells];
    let mut box_targets = vec![0.0; 4 * cells];
    let mut positive_cells = Vec::new();

    for item in items {
        let b = &item.bbox;
        let jc = ((b.cx / s) as usize).min(gw - 1);
        let ic = ((b.cy / s) as usize).min(gh - 1);
        let mut claim = |i: usize, j: usize, obj_targets: &mut Vec<f64>| {
            let cell = i * gw + j;
            if obj_targets[cell] == 1.0 {
                return;
            }
            obj_targets[cell] = 1.0;
            positive_cells.push(cell);
            box_targets[cell] = b.cx / s - (j as f64 + 0.5);
            box_targets[cells + cell] = b.cy / s - (i as f64 + 0.5);
            box_targets[2 * cells + cell] = libm::log(b.w / s);
            box_targets[3 * cells + cell] = libm::log(b.h / s);
        };
        claim(ic, jc, &mut obj_targets);
        let (cx_lo, cx_hi) = (b.cx - b.w / 4.0, b.cx + b.w / 4.0);
        let (cy_lo, cy_hi) = (b.cy - b.h / 4.0, b.cy + b.h / 4.0);
        for i in 0..gh {
            let y = (i as f64 + 0.5) * s;
            if y < cy_lo || y > cy_hi {
                continue;
            }
            for j in 0..gw {
                let x = (j as f64 + 0.5) * s;
                if x >= cx_lo && x <= cx_hi {
                    claim(i, j, &mut obj_targets);
                }
            }
        }
    }

    let n_pos = positive_cells.len();
    let n_neg = cells - n_pos;
    let mut obj_weights = vec![0.0; cells];
    let mut box_weights = vec![0.0; 4 * cells];
    if n_pos == 0 {
        obj_weights.fill(1.0 / cells as f64);
    } else {
        let wp = 0.5 / n_pos as f64;
        let wn = if n_neg == 0 { 0.0 } else { 0.5 / n_neg as f64 };
        for (w, t) in obj_weights.iter_mut().zip(&obj_targets) {
            *w = if *t == 1.0 { wp } else { wn };
        }
        let wb = 1.0 / (4 * n_pos) as f64;
        for &cell in &positive_cells {
            for coord in 0..4 {
                box_weights[coord * cells + cell] = wb;
            }
        }
    }

    DetTargets { obj_targets, obj_weights, box_targets, box_weights, positive_cells }
}

/// Weighted objectness BCE plus smooth-L1 box regression on positive cells.
pub fn detection_loss(
    g: &mut Graph,
    logits: Var,
    t: &DetTargets,
    box_loss_weight: f64,
) -> Result<Var> {
    let shape = g.tape.shape(logits).to_vec();
    if shape.len() != 3 || shape[0] != DET_CHANNELS {
        return Err(CoreError::Shape {
            op: "detection_loss",
            detail: format!("expected [{DET_CHANNELS},gh,gw] logits, got {shape:?}"),
        });
    }
    let cells = shape[1] * shape[2];
    if t.obj_targets.len() != cells {
        return Err(CoreError::Shape {
            op: "detection_loss",
            detail: format!("{} targets vs {cells} cells", t.obj_targets.len()),
        });
    }
    let flat = g.tape.reshape(logits, vec![DET_CHANNELS, cells])?;
    let obj = g.tape.slice_rows(flat, 0, 1)?;
    let bce = g.tape.bce_with_logits(obj, t.obj_targets.clone(), t.obj_weights.clone())?;
    if t.positive_cells.is_empty() {
        return Ok(bce);
    }
    let pred = g.tape.slice_rows(flat, 1, DET_CHANNELS)?;
    let target = g.tape.constant(vec![4, cells], t.box_targets.clone())?;
    let huber = g.tape.smooth_l1_weighted(pred, target, 1.0, t.box_weights.clone())?;
    let scaled = g.tape.scale(huber, box_loss_weight)?;
    g.tape.add(bce, scaled)
}

// ── Decoding ────────────────────────────────────────────────────────────────

/// One decoded detection.
#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: BoxF,
    pub score: f64,
}

/// Decodes head logits `[5, gh, gw]` (as raw data) into scored boxes in
/// scene pixels, then applies greedy NMS and the per-scene cap. Offsets are
/// clamped before `exp` so a wild untrained head cannot emit non-finite
/// geometry, and decoded boxes are clamped into the scene (dropped when
/// nothing of them survives inside).
pub fn decode_detections(logits: &[f64], cfg: &SpotterConfig) -> Vec<Detection> {
    let (gh, gw) = (cfg.grid_h(), cfg.grid_w());
    let cells = gh * gw;
    debug_assert_eq!(logits.len(), DET_CHANNELS * cells);
    let s = GRID_STRIDE as f64;
    let (scene_w, scene_h) = (cfg.scene_w as f64, cfg.scene_h as f64);
    let mut scored: Vec<(BoxF, f64)> = Vec::new();
    for i in 0..gh {
        for j in 0..gw {
            let cell = i * gw + j;
            let z = logits[cell];
            if !z.is_finite() {
                continue;
            }
            let score = sigmoid_value(z);
            if score < cfg.obj_threshold {
                continue;
            }
            let tx = logits[cells + cell].clamp(-8.0, 8.0);
            let ty = logits[2 * cells + cell].clamp(-8.0, 8.0);
            let tw = logits[3 * cells + cell].clamp(-8.0, 8.0);
            let th = logits[4 * cells + cell].clamp(-8.0, 8.0);
            let cx = (j as f64 + 0.5 + tx) * s;
            let cy = (i as f64 + 0.5 + ty) * s;
            let w = s * libm::exp(tw);
            let h = s * libm::exp(th);
            let b = BoxF::new(cx, cy, w, h);
            let x0 = b.x0().clamp(0.0, scene_w);
            let x1 = b.x1().clamp(0.0, scene_w);
            let y0 = b.y0().clamp(0.0, scene_h);
            let y1 = b.y1().clamp(0.0, scene_h);
            if x1 - x0 < 1.0 || y1 - y0 < 1.0 {
                continue;
            }
            scored.push((BoxF::from_corners(x0, y0, x1, y1), score));
        }
    }
    let keep = nms(&scored, cfg.nms_iou);
    keep.into_iter()
        .take(cfg.max_detections)
        .map(|k| Detection { bbox: scored[k].0, score: scored[k].1 })
        .collect()
}

/// Greedy transcription from recognizer logits `[positions, NUM_CLASSES]`
/// (as raw data): per-position argmax, then run collapse and blank removal.
pub fn greedy_transcription(logits: &[f64], positions: usize) -> Vec<usize> {
    debug_assert_eq!(logits.len(), positions * NUM_CLASSES);
    let mut labels = Vec::with_capacity(positions);
    for p in 0..positions {
        let row = &logits[p * NUM_CLASSES..(p + 1) * NUM_CLASSES];
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        labels.push(best);
    }
    crate::datasynth::greedy_decode(&labels)
}

// ── Feature crops for the bridge ────────────────────────────────────────────

/// Grid-cell bounds covering a scene-space box, rounded outward and clamped
/// to at least one cell.
fn grid_crop_bounds(bbox: &BoxF, gh: usize, gw: usize) -> (usize, usize, usize, usize) {
    let s = GRID_STRIDE as f64;
    let x0 = (libm::floor(bbox.x0() / s).max(0.0) as usize).min(gw - 1);
    let y0 = (libm::floor(bbox.y0() / s).max(0.0) as usize).min(gh - 1);
    let x1 = (libm::ceil(bbox.x1() / s).max(0.0) as usize).clamp(x0 + 1, gw);
    let y1 = (libm::ceil(bbox.y1() / s).max(0.0) as usize).clamp(y0 + 1, gh);
    (y0, y1, x0, x1)
}

/// Crops detector features `[c, gh, gw]` under a scene-space box and
/// resamples to a fixed `[c, token_h, token_w]` cube. Plain-data version for
/// cached frozen features.
pub fn crop_features(
    features: &Tensor,
    bbox: &BoxF,
    token_h: usize,
    token_w: usize,
) -> Tensor {
    let (c, gh, gw) = (features.shape()[0], features.shape()[1], features.shape()[2]);
    let (y0, y1, x0, x1) = grid_crop_bounds(bbox, gh, gw);
    let (ch, cw) = (y1 - y0, x1 - x0);
    let mut patch = Tensor::zeros(vec![c, ch, cw]);
    {
        let src = features.data();
        let dst = patch.data_mut();
        for k in 0..c {
            for yy in 0..ch {
                let srow = k * gh * gw + (y0 + yy) * gw + x0;
                let drow = k * ch * cw + yy * cw;
                dst[drow..drow + cw].copy_from_slice(&src[srow..srow + cw]);
            }
        }
    }
    crate::datasynth::resample_image(&patch, token_h, token_w)
}

/// Tape version of [`crop_features`], bit-identical in value, for when
/// gradients must flow back into the feature tensor (adapter training).
pub fn crop_features_on_tape(
    g: &mut Graph,
    features: Var,
    bbox: &BoxF,
    token_h: usize,
    token_w: usize,
) -> Result<Var> {
    let shape = g.tape.shape(features).to_vec();
    let (gh, gw) = (shape[1], shape[2]);
    let (y0, y1, x0, x1) = grid_crop_bounds(bbox, gh, gw);
    let patch = g.tape.slice_spatial(features, y0, y1, x0, x1)?;
    g.tape.bilinear_resample(patch, token_h, token_w)
}

// ── Ground-truth crop labels ────────────────────────────────────────────────

/// Per-position labels for a ground-truth box cropped tightly and resampled
/// to the recognizer's crop width. Placement coordinates are integral, so
/// the crop bounds are exact and the glyph spans map proportionally onto the
/// crop. Returns `None` only if a glyph loses every position, which the
/// scene generator's length/scale limits prevent.
pub fn gt_crop_labels(item: &SceneItem, cfg: &SpotterConfig) -> Option<Vec<usize>> {
    let out_w = cfg.crop_w as f64;
    let spans = char_spans_tight(item.text.len(), out_w);
    position_labels(&item.text, &spans, cfg.positions, out_w / cfg.positions as f64)
}

/// Per-position labels for a scene item seen through an arbitrary box — the
/// supervision used when training through *predicted* detections. The
/// target is always the item's **full** transcription: an imperfect window
/// clips pixels, but the feature path carries scene context beyond the box,
/// so recovering clipped glyphs is learnable and is exactly what end-to-end
/// evaluation demands. Glyph spans are mapped from scene coordinates through
/// the same rounded, clamped crop window
/// [`crop_box`](crate::datasynth::crop_box) uses; a span chain hanging out
/// of the window is shifted inside when it fits and compressed around its
/// extent otherwise, so labels agree with the pixels wherever the window
/// covers the string and degrade gracefully where it does not. Returns
/// `None` only if some glyph still loses every position, which the
/// generator's length/scale limits make unreachable in practice.
pub fn crop_labels_for_box(
    item: &SceneItem,
    bbox: &BoxF,
    cfg: &SpotterConfig,
) -> Option<Vec<usize>> {
    let w = cfg.scene_w;
    let x0r = (libm::floor(bbox.x0()).max(0.0) as usize).min(w - 1) as f64;
    let x1r = (libm::ceil(bbox.x1()).max(0.0) as usize).clamp(x0r as usize + 1, w) as f64;
    let out_w = cfg.crop_w as f64;
    let k = out_w / (x1r - x0r);
    let scale = item.scale as f64;
    let origin = item.bbox.x0();
    let mut spans = Vec::with_capacity(item.text.len());
    for i in 0..item.text.len() {
        let a = origin + (i * GLYPH_ADVANCE) as f64 * scale;
        let b = a + GLYPH_W as f64 * scale;
        spans.push(((a - x0r) * k, (b - x0r) * k));
    }
    let lo = spans.first()?.0;
    let hi = spans.last()?.1;
    let (alpha, beta) = if hi - lo <= out_w {
        // The chain fits: shift it into the window if it hangs out.
        (1.0, -libm::fmin(0.0, lo) - libm::fmax(0.0, hi - out_w))
    } else {
        // Wider than the window: compress its extent onto the full width.
        let a = out_w / (hi - lo);
        (a, -a * lo)
    };
    for (a, b) in &mut spans {
        *a = alpha * *a + beta;
        *b = alpha * *b + beta;
    }
    position_labels(&item.text, &spans, cfg.positions, out_w / cfg.positions as f64)
}
