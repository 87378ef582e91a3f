//! The bridging module that connects a frozen detector to a frozen
//! recognizer.
//!
//! Given detector context features cropped to a detection as a fixed-size
//! cube `C_f` of `[c, token_h, token_w]`, and the recognizer's own backbone
//! features `F_i` of shape `[L, d]` for the same region, the bridge computes
//!
//! ```text
//! F_r = F_i + Z_l( Encoder( Z_c(seq(C_f)) + PE ) )
//! ```
//!
//! where `seq` resamples the token grid along the sequence axis to the `L`
//! recognizer positions (so token `p` summarizes the crop column aligned
//! with recognition position `p` and the whole bridge runs at constant
//! sequence length), `Z_c` (token-wise channel mix, equivalent to a 1x1
//! convolution on the feature map) and `Z_l` (projection into the recognizer
//! width) start at exactly zero, `PE` is a fixed sinusoidal table, and the
//! encoder is a standard pre-norm transformer stack. Both zero layers make
//! the bridge an exact identity at initialization — the connected system
//! behaves bit-for-bit like the two frozen models — while `Z_l`'s parameters
//! receive nonzero gradients from the first step, letting the correction
//! grow from nothing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::Var;
use crate::error::{CoreError, Result};
use crate::nn::{Graph, Init, LinearLayer, ParameterStore, TransformerEncoderLayer};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Architectural knobs of the bridge.
#[derive(Debug, Clone)]
pub struct BridgeConfig {
    /// Detector feature channels entering the bridge.
    pub in_channels: usize,
    /// Token grid of the detector feature crop (rows, cols).
    pub token_h: usize,
    pub token_w: usize,
    /// Recognizer sequence length and feature width the bridge injects into.
    pub rec_len: usize,
    pub rec_dim: usize,
    /// Encoder geometry.
    pub heads: usize,
    pub ffn_hidden: usize,
    pub depth: usize,
    /// Component switches for ablations; the output projection is always on.
    pub use_zero_conv: bool,
    pub use_pos_enc: bool,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            in_channels: 16,
            token_h: 8,
            token_w: 24,
            rec_len: 24,
            rec_dim: 64,
            heads: 4,
            ffn_hidden: 64,
            depth: 1,
            use_zero_conv: true,
            use_pos_enc: true,
        }
    }
}

impl BridgeConfig {
    /// Token count of the raw feature crop (before sequence reduction).
    pub fn tokens(&self) -> usize {
        self.token_h * self.token_w
    }
}

/// Initialization mode for the two projection layers (`Z_c`, `Z_l`). The
/// encoder always uses standard initialization.
#[derive(Debug, Clone, Copy)]
pub enum BridgeInit {
    /// Exact zeros: identity at initialization.
    Zero,
    /// Small Gaussian weights: the usual baseline that perturbs the frozen
    /// system from the first forward pass.
    Gaussian { std: f64 },
}

impl BridgeInit {
    fn as_init(self) -> Init {
        match self {
            BridgeInit::Zero => Init::Zero,
            BridgeInit::Gaussian { std } => Init::Gaussian { std },
        }
    }
}

/// Fixed sinusoidal position table `[len, dim]`:
/// `pe[p, 2i] = sin(p / 10000^(2i/dim))`, `pe[p, 2i+1] = cos(...)`.
pub fn positional_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim {
            let exponent = 2.0 * ((i / 2) as f64) / dim as f64;
            let angle = p as f64 / libm::pow(10000.0, exponent);
            data[p * dim + i] = if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            };
        }
    }
    Tensor::new(vec![len, dim], data).expect("consistent dims")
}

pub struct Bridge {
    cfg: BridgeConfig,
    zero_conv: Option<LinearLayer>,
    pos_enc: Option<Tensor>,
    encoder: Vec<TransformerEncoderLayer>,
    zero_linear: LinearLayer,
}

impl Bridge {
    /// Registers all bridge parameters under `name.*`.
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        cfg: BridgeConfig,
        init: BridgeInit,
        rng: &mut Stream,
    ) -> Result<Self> {
        let c = cfg.in_channels;
        let zero_conv = if cfg.use_zero_conv {
            Some(LinearLayer::register(
                store,
                &format!("{name}.zc"),
                c,
                c,
                init.as_init(),
                rng,
            )?)
        } else {
            None
        };
        let pos_enc = if cfg.use_pos_enc {
            Some(positional_encoding(cfg.rec_len, c))
        } else {
            None
        };
        let mut encoder = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            encoder.push(TransformerEncoderLayer::register(
                store,
                &format!("{name}.enc{l}"),
                c,
                cfg.heads,
                cfg.ffn_hidden,
                rng,
            )?);
        }
        let zero_linear = LinearLayer::register(
            store,
            &format!("{name}.zl"),
            c,
            cfg.rec_dim,
            init.as_init(),
            rng,
        )?;
        Ok(Bridge { cfg, zero_conv, pos_enc, encoder, zero_linear })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.cfg
    }

    /// Human-readable component list, for ablation reports.
    pub fn component_summary(&self) -> String {
        let mut parts: Vec<&str> = Vec::new();
        if self.zero_conv.is_some() {
            parts.push("zero_conv");
        }
        if self.pos_enc.is_some() {
            parts.push("pos_enc");
        }
        if !self.encoder.is_empty() {
            parts.push("encoder");
        }
        parts.push("zero_linear");
        parts.join("+")
    }

    /// Reduces the feature crop `[c, th, tw]` to the bridge sequence
    /// `[rec_len, c]`: bilinear resample along the spatial axes to one row of
    /// `rec_len` columns, then one token per column.
    fn sequence_tokens(&self, g: &mut Graph, c_f: Var) -> Result<Var> {
        let c = self.cfg.in_channels;
        let len = self.cfg.rec_len;
        let reduced = if self.cfg.token_h == 1 && self.cfg.token_w == len {
            c_f
        } else {
            g.tape.bilinear_resample(c_f, 1, len)?
        };
        let flat = g.tape.reshape(reduced, vec![c, len])?;
        g.tape.transpose(flat)
    }

    /// Computes `F_r` from the detector feature crop `c_f` of
    /// `[in_channels, token_h, token_w]` and the recognizer features `f_i` of
    /// `[rec_len, rec_dim]`.
    pub fn forward(&self, g: &mut Graph, c_f: Var, f_i: Var) -> Result<Var> {
        let expect = [self.cfg.in_channels, self.cfg.token_h, self.cfg.token_w];
        if g.tape.shape(c_f) != expect {
            return Err(CoreError::Shape {
                op: "bridge_forward",
                detail: format!("feature crop {:?}, expected {expect:?}", g.tape.shape(c_f)),
            });
        }
        let mut t = self.sequence_tokens(g, c_f)?;
        if let Some(zc) = &self.zero_conv {
            t = zc.forward(g, t)?;
        }
        if let Some(pe) = &self.pos_enc {
            let pev = g.tape.constant_tensor(pe)?;
            t = g.tape.add(t, pev)?;
        }
        for layer in &self.encoder {
            t = layer.forward(g, t)?;
        }
        let correction = self.zero_linear.forward(g, t)?; // [rec_len, rec_dim]
        g.tape.add(f_i, correction)
    }
}
