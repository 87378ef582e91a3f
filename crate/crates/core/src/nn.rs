//! Named-parameter management and the small set of network building blocks
//! the models are assembled from.
//!
//! A [`ParameterStore`] owns every weight of a model family under stable
//! hierarchical names ("det.conv1.w"), each with a frozen flag and a
//! gradient buffer. A [`Graph`] binds store parameters onto a fresh [`Tape`]
//! for one forward/backward pass — frozen parameters enter as constants, so
//! the tape never spends time differentiating them — and a
//! [`GradAccumulator`] averages per-example gradients back into the store,
//! where the optimizer reads them.
//!
//! Layers ([`LinearLayer`], [`ConvLayer`], [`LayerNormLayer`], [`Adapter`],
//! [`FfnBlock`], [`TransformerEncoderLayer`]) are thin factories: they
//! register their parameters once and replay the forward computation onto
//! whichever graph they are handed.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

/// Stable handle to one named parameter in a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

struct ParamEntry {
    name: String,
    value: Tensor,
    grad: Vec<f64>,
    frozen: bool,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    Standard,
    /// Weights and bias exactly zero.
    Zero,
    /// Weights from a zero-mean normal with the given standard deviation,
    /// bias zero.
    Gaussian { std: f64 },
}

impl Init {
    fn weight(&self, fan_in: usize, rng: &mut Stream) -> f64 {
        match self {
            Init::Standard => {
                let bound = 1.0 / libm::sqrt(fan_in as f64);
                rng.range(-bound, bound)
            }
            Init::Zero => 0.0,
            Init::Gaussian { std } => rng.normal_scaled(*std),
        }
    }

    fn bias(&self, fan_in: usize, rng: &mut Stream) -> f64 {
        match self {
            Init::Standard => {
                let bound = 1.0 / libm::sqrt(fan_in as f64);
                rng.range(-bound, bound)
            }
            Init::Zero | Init::Gaussian { .. } => 0.0,
        }
    }
}

/// Registry of every named parameter of a model family.
#[derive(Default)]
pub struct ParameterStore {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter under a unique name; starts unfrozen.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(CoreError::DuplicateName(String::from(name)));
        }
        let id = self.entries.len();
        let numel = value.numel();
        self.entries.push(ParamEntry {
            name: String::from(name),
            value,
            grad: vec![0.0; numel],
            frozen: false,
        });
        self.index.insert(String::from(name), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| CoreError::UnknownName(String::from(name)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All parameter ids in registration order.
    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Parameter names in lexicographic order (the serialization order).
    pub fn sorted_names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(|s| s.as_str())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a parameter's data, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, data: &[f64]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if data.len() != e.value.numel() {
            return Err(CoreError::Shape {
                op: "set_value",
                detail: format!(
                    "{}: {} values vs shape {:?}",
                    e.name,
                    data.len(),
                    e.value.shape()
                ),
            });
        }
        e.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    /// Mutable value data alongside the current gradient, for optimizers.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &[f64]) {
        let ParamEntry { value, grad, .. } = &mut self.entries[id.0];
        (value.data_mut(), grad.as_slice())
    }

    fn matching_ids(&self, pattern: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| pattern_matches(pattern, &e.name))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Ids of parameters whose names match `pattern` (`*` suffix wildcard
    /// for prefixes, bare `*` for everything, otherwise exact).
    pub fn params_matching(&self, pattern: &str) -> Vec<ParamId> {
        self.matching_ids(pattern)
    }

    /// Freezes all parameters matching `pattern`; freezing nothing is a
    /// configuration error, not a silent no-op.
    pub fn freeze_matching(&mut self, pattern: &str) -> Result<usize> {
        self.set_frozen_matching(pattern, true)
    }

    pub fn unfreeze_matching(&mut self, pattern: &str) -> Result<usize> {
        self.set_frozen_matching(pattern, false)
    }

    fn set_frozen_matching(&mut self, pattern: &str, frozen: bool) -> Result<usize> {
        let ids = self.matching_ids(pattern);
        if ids.is_empty() {
            return Err(CoreError::EmptyFreezeMatch(String::from(pattern)));
        }
        let n = ids.len();
        for id in ids {
            self.entries[id.0].frozen = frozen;
        }
        Ok(n)
    }

    /// Total scalar count across all parameters.
    pub fn num_params_total(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Scalar count across unfrozen parameters only.
    pub fn num_params_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.value.numel())
            .sum()
    }
}

fn pattern_matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => name == pattern,
    }
}

/// One forward/backward pass: a fresh tape plus lazy bindings of store
/// parameters onto it. Frozen parameters bind as constants, so backward
/// never touches the subgraphs only they feed.
pub struct Graph<'a> {
    pub tape: Tape,
    store: &'a ParameterStore,
    bound: Vec<Option<Var>>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
        }
    }

    /// The tape variable for a parameter, binding it on first use.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(v) = self.bound[id.0] {
            return Ok(v);
        }
        let t = self.store.value(id);
        let v = if self.store.is_frozen(id) {
            self.tape.constant_tensor(t)?
        } else {
            self.tape.leaf_tensor(t)?
        };
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    /// Runs backward from `loss`; gradients are then readable through
    /// [`GradAccumulator::add_from`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }
}

/// Averages per-example parameter gradients across a minibatch.
pub struct GradAccumulator {
    sums: Vec<Vec<f64>>,
    count: usize,
}

impl GradAccumulator {
    pub fn new(store: &ParameterStore) -> Self {
        GradAccumulator {
            sums: store
                .ids()
                .map(|id| vec![0.0; store.value(id).numel()])
                .collect(),
            count: 0,
        }
    }

    /// Adds the gradients a graph's backward pass produced. Parameters the
    /// graph never bound, or that the loss did not reach, contribute zero.
    pub fn add_from(&mut self, graph: &Graph) {
        for (i, bound) in graph.bound.iter().enumerate() {
            if let Some(v) = bound {
                if let Some(g) = graph.tape.grad(*v) {
                    for (s, gv) in self.sums[i].iter_mut().zip(g) {
                        *s += gv;
                    }
                }
            }
        }
        self.count += 1;
    }

    /// Writes the batch-mean gradients into the store (overwriting, not
    /// accumulating, so each optimizer step sees exactly one batch).
    pub fn mean_into(&self, store: &mut ParameterStore) {
        let n = self.count.max(1) as f64;
        for (i, sum) in self.sums.iter().enumerate() {
            let e = &mut store.entries[i];
            for (g, s) in e.grad.iter_mut().zip(sum) {
                *g = s / n;
            }
        }
    }
}

// ── Layers ─────────────────────────────────────────────────────────────────

/// Dense layer `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Clone, Copy)]
pub struct LinearLayer {
    w: ParamId,
    b: ParamId,
}

impl LinearLayer {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut Stream,
    ) -> Result<Self> {
        let wdata: Vec<f64> = (0..out_dim * in_dim).map(|_| init.weight(in_dim, rng)).collect();
        let bdata: Vec<f64> = (0..out_dim).map(|_| init.bias(in_dim, rng)).collect();
        let w = store.register(&format!("{name}.w"), Tensor::new(vec![out_dim, in_dim], wdata)?)?;
        let b = store.register(&format!("{name}.b"), Tensor::new(vec![out_dim], bdata)?)?;
        Ok(LinearLayer { w, b })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        let wt = g.tape.transpose(w)?;
        let y = g.tape.matmul(x, wt)?;
        g.tape.add_row_broadcast(y, b)
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }
}

/// 2-D convolution layer over `[c,h,w]` maps.
#[derive(Clone, Copy)]
pub struct ConvLayer {
    w: ParamId,
    b: ParamId,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        init: Init,
        rng: &mut Stream,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let fan_in = in_ch * kh * kw;
        let wdata: Vec<f64> =
            (0..out_ch * in_ch * kh * kw).map(|_| init.weight(fan_in, rng)).collect();
        let bdata: Vec<f64> = (0..out_ch).map(|_| init.bias(fan_in, rng)).collect();
        let w = store.register(
            &format!("{name}.w"),
            Tensor::new(vec![out_ch, in_ch, kh, kw], wdata)?,
        )?;
        let b = store.register(&format!("{name}.b"), Tensor::new(vec![out_ch], bdata)?)?;
        Ok(ConvLayer { w, b, stride, pad })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.w)?;
        let b = g.param(self.b)?;
        g.tape.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn weight_id(&self) -> ParamId {
        self.w
    }

    pub fn bias_id(&self) -> ParamId {
        self.b
    }
}

/// Layer normalization over the last axis with learned gain and shift.
#[derive(Clone, Copy)]
pub struct LayerNormLayer {
    gamma: ParamId,
    beta: ParamId,
    eps: f64,
}

impl LayerNormLayer {
    pub fn register(store: &mut ParameterStore, name: &str, dim: usize) -> Result<Self> {
        let gamma =
            store.register(&format!("{name}.g"), Tensor::new(vec![dim], vec![1.0; dim])?)?;
        let beta =
            store.register(&format!("{name}.b"), Tensor::new(vec![dim], vec![0.0; dim])?)?;
        Ok(LayerNormLayer { gamma, beta, eps: 1e-5 })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma)?;
        let beta = g.param(self.beta)?;
        g.tape.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Residual bottleneck adapter: `x + up(gelu(down(x)))` on `[rows, dim]`.
///
/// The up-projection starts at exactly zero, so a freshly inserted adapter is
/// the identity map while its parameters already receive gradients.
#[derive(Clone, Copy)]
pub struct Adapter {
    down: LinearLayer,
    up: LinearLayer,
}

impl Adapter {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let down = LinearLayer::register(
            store,
            &format!("{name}.down"),
            dim,
            hidden,
            Init::Standard,
            rng,
        )?;
        let up =
            LinearLayer::register(store, &format!("{name}.up"), hidden, dim, Init::Zero, rng)?;
        Ok(Adapter { down, up })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.down.forward(g, x)?;
        let a = g.tape.gelu(h)?;
        let u = self.up.forward(g, a)?;
        g.tape.add(x, u)
    }
}

/// Where an adapter sits inside a block: after the attention residual or
/// after the feed-forward residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterSite {
    AfterAttention,
    AfterFfn,
}

impl AdapterSite {
    fn label(self) -> &'static str {
        match self {
            AdapterSite::AfterAttention => "after_attn",
            AdapterSite::AfterFfn => "after_ffn",
        }
    }
}

/// Pre-norm feed-forward block `x + down(gelu(up(ln(x))))`, with an optional
/// adapter applied after the residual.
pub struct FfnBlock {
    dim: usize,
    ln: LayerNormLayer,
    up: LinearLayer,
    down: LinearLayer,
    adapter: Option<Adapter>,
}

impl FfnBlock {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        let ln = LayerNormLayer::register(store, &format!("{name}.ln"), dim)?;
        let up =
            LinearLayer::register(store, &format!("{name}.up"), dim, hidden, Init::Standard, rng)?;
        let down = LinearLayer::register(
            store,
            &format!("{name}.down"),
            hidden,
            dim,
            Init::Standard,
            rng,
        )?;
        Ok(FfnBlock { dim, ln, up, down, adapter: None })
    }

    /// Adds a zero-initialized adapter after the residual, registered under
    /// the given name (kept outside the block's own prefix so freezing the
    /// host model leaves the adapter trainable).
    pub fn insert_adapter(
        &mut self,
        store: &mut ParameterStore,
        name: &str,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<()> {
        if self.adapter.is_some() {
            return Err(CoreError::AdapterOccupied("ffn_block"));
        }
        self.adapter = Some(Adapter::register(store, name, self.dim, hidden, rng)?);
        Ok(())
    }

    pub fn has_adapter(&self) -> bool {
        self.adapter.is_some()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = self.ln.forward(g, x)?;
        let h = self.up.forward(g, n)?;
        let a = g.tape.gelu(h)?;
        let d = self.down.forward(g, a)?;
        let mut y = g.tape.add(x, d)?;
        if let Some(ad) = &self.adapter {
            y = ad.forward(g, y)?;
        }
        Ok(y)
    }
}

/// Pre-norm transformer encoder block: multi-head self-attention and a
/// feed-forward sublayer, each with a residual connection and an optional
/// post-residual adapter.
pub struct TransformerEncoderLayer {
    name: String,
    dim: usize,
    heads: usize,
    ln_attn: LayerNormLayer,
    wq: LinearLayer,
    wk: LinearLayer,
    wv: LinearLayer,
    wo: LinearLayer,
    ffn: FfnBlockCore,
    adapter_attn: Option<Adapter>,
    adapter_ffn: Option<Adapter>,
}

/// The feed-forward sublayer of an encoder block (no adapter slot of its
/// own; the enclosing block owns the sites).
struct FfnBlockCore {
    ln: LayerNormLayer,
    up: LinearLayer,
    down: LinearLayer,
}

impl TransformerEncoderLayer {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        rng: &mut Stream,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(CoreError::Config(format!(
                "encoder dim {dim} not divisible by {heads} heads"
            )));
        }
        let ln_attn = LayerNormLayer::register(store, &format!("{name}.ln_attn"), dim)?;
        let wq = LinearLayer::register(store, &format!("{name}.wq"), dim, dim, Init::Standard, rng)?;
        let wk = LinearLayer::register(store, &format!("{name}.wk"), dim, dim, Init::Standard, rng)?;
        let wv = LinearLayer::register(store, &format!("{name}.wv"), dim, dim, Init::Standard, rng)?;
        let wo = LinearLayer::register(store, &format!("{name}.wo"), dim, dim, Init::Standard, rng)?;
        let ffn = FfnBlockCore {
            ln: LayerNormLayer::register(store, &format!("{name}.ln_ffn"), dim)?,
            up: LinearLayer::register(
                store,
                &format!("{name}.ffn_up"),
                dim,
                ffn_hidden,
                Init::Standard,
                rng,
            )?,
            down: LinearLayer::register(
                store,
                &format!("{name}.ffn_down"),
                ffn_hidden,
                dim,
                Init::Standard,
                rng,
            )?,
        };
        Ok(TransformerEncoderLayer {
            name: String::from(name),
            dim,
            heads,
            ln_attn,
            wq,
            wk,
            wv,
            wo,
            ffn,
            adapter_attn: None,
            adapter_ffn: None,
        })
    }

    /// Adds a zero-initialized adapter at the given site; each site holds at
    /// most one.
    pub fn insert_adapter(
        &mut self,
        store: &mut ParameterStore,
        site: AdapterSite,
        hidden: usize,
        rng: &mut Stream,
    ) -> Result<()> {
        let slot = match site {
            AdapterSite::AfterAttention => &mut self.adapter_attn,
            AdapterSite::AfterFfn => &mut self.adapter_ffn,
        };
        if slot.is_some() {
            return Err(CoreError::AdapterOccupied(site.label()));
        }
        let name = format!("{}.adapter_{}", self.name, site.label());
        *slot = Some(Adapter::register(store, &name, self.dim, hidden, rng)?);
        Ok(())
    }

    /// Self-attention + feed-forward over a `[len, dim]` token matrix.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let dh = self.dim / self.heads;
        let normed = self.ln_attn.forward(g, x)?;
        let q = self.wq.forward(g, normed)?;
        let k = self.wk.forward(g, normed)?;
        let v = self.wv.forward(g, normed)?;
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = g.tape.slice_cols(q, c0, c1)?;
            let kh = g.tape.slice_cols(k, c0, c1)?;
            let vh = g.tape.slice_cols(v, c0, c1)?;
            let kt = g.tape.transpose(kh)?;
            let scores = g.tape.matmul(qh, kt)?;
            let scaled = g.tape.scale(scores, scale)?;
            let attn = g.tape.softmax_rows(scaled)?;
            head_outputs.push(g.tape.matmul(attn, vh)?);
        }
        let mixed = g.tape.concat_cols(&head_outputs)?;
        let projected = self.wo.forward(g, mixed)?;
        let mut y = g.tape.add(x, projected)?;
        if let Some(ad) = &self.adapter_attn {
            y = ad.forward(g, y)?;
        }

        let fn_in = self.ffn.ln.forward(g, y)?;
        let up = self.ffn.up.forward(g, fn_in)?;
        let act = g.tape.gelu(up)?;
        let down = self.ffn.down.forward(g, act)?;
        let mut out = g.tape.add(y, down)?;
        if let Some(ad) = &self.adapter_ffn {
            out = ad.forward(g, out)?;
        }
        Ok(out)
    }
}
