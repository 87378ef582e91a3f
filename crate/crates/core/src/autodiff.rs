//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] owns every value produced during a forward pass. Each operation
//! validates shapes eagerly, computes its output immediately, and records the
//! information needed for its vector-Jacobian product. [`Tape::backward`]
//! walks the tape once in reverse, accumulating gradients additively, so a
//! value consumed by several later operations receives the sum of all its
//! downstream contributions.
//!
//! Conventions:
//! - all values are `f64`; matrices are row-major `[rows, cols]`, feature maps
//!   are `[channels, height, width]`, scalars are shape `[1]`;
//! - a tape is single-threaded and lives for one forward/backward pass;
//! - leaves registered with [`Tape::leaf`] participate in differentiation,
//!   leaves from [`Tape::constant`] do not: subgraphs that no differentiable
//!   leaf feeds into are skipped entirely during `backward`, which is what
//!   makes frozen submodels cheap;
//! - the same seeded forward/backward sequence is bit-identical on every run.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Handle to a value stored on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Exact Gauss error function based activation: `x * cdf(x)` where `cdf` is
/// the standard normal CDF. Shared here so forward and backward agree.
#[inline]
pub fn gelu_value(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI)
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid_value(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    AddRowBroadcast(Var, Var),
    SliceRows { x: Var, r0: usize },
    SliceCols { x: Var, c0: usize, c1: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Conv2d { x: Var, w: Var, b: Var, stride: (usize, usize), pad: (usize, usize) },
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize> },
    SmoothL1 { pred: Var, target: Var, beta: f64, weights: Vec<f64> },
    BceWithLogits { logits: Var, targets: Vec<f64>, weights: Vec<f64> },
    BilinearResample { x: Var, out_h: usize, out_w: usize },
    SliceSpatial { x: Var, y0: usize, y1: usize, x0: usize, x1: usize },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires: bool,
}

/// Linear tape of recorded operations.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, requires: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { op, shape, data, requires });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    /// Shape of a recorded value.
    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Forward value of a recorded node.
    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    /// Gradient accumulated by the most recent [`Tape::backward`], if the
    /// node participated in differentiation.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::Shape {
                op: "leaf",
                detail: format!("shape {shape:?} vs {} values", data.len()),
            });
        }
        Ok(self.push(Op::Leaf, shape, data, true))
    }

    /// Registers a non-differentiable leaf (inputs, fixed tables).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::Shape {
                op: "constant",
                detail: format!("shape {shape:?} vs {} values", data.len()),
            });
        }
        Ok(self.push(Op::Leaf, shape, data, false))
    }

    /// Registers a tensor as a differentiable leaf.
    pub fn leaf_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.shape().to_vec(), t.data().to_vec())
    }

    /// Registers a tensor as a non-differentiable leaf.
    pub fn constant_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.constant(t.shape().to_vec(), t.data().to_vec())
    }

    fn rank2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            s => Err(CoreError::Shape { op, detail: format!("expected rank-2, got {s:?}") }),
        }
    }

    fn rank3(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.nodes[v.0].shape.as_slice() {
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(CoreError::Shape { op, detail: format!("expected rank-3, got {s:?}") }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(CoreError::Shape {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.nodes[a.0].shape, self.nodes[b.0].shape
                ),
            });
        }
        Ok(())
    }

    // ── Elementwise and structural operations ──────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a) | self.req(b);
        Ok(self.push(Op::Add(a, b), shape, data, req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a) | self.req(b);
        Ok(self.push(Op::Sub(a, b), shape, data, req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a) | self.req(b);
        Ok(self.push(Op::Mul(a, b), shape, data, req))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|x| k * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a);
        Ok(self.push(Op::Scale(a, k), shape, data, req))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.nodes[a.0].data.iter().sum();
        let req = self.req(a);
        Ok(self.push(Op::Sum(a), vec![1], vec![s], req))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].data.len();
        if n == 0 {
            return Err(CoreError::Shape { op: "mean", detail: String::from("empty input") });
        }
        let s: f64 = self.nodes[a.0].data.iter().sum::<f64>() / n as f64;
        let req = self.req(a);
        Ok(self.push(Op::Mean(a), vec![1], vec![s], req))
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(CoreError::Shape {
                op: "matmul",
                detail: format!("inner dims {k} vs {k2}"),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let ad = &self.nodes[a.0].data;
            let bd = &self.nodes[b.0].data;
            matmul_into(ad, bd, &mut out, m, k, n);
        }
        let req = self.req(a) | self.req(b);
        Ok(self.push(Op::Matmul(a, b), vec![m, n], out, req))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rank2(a, "transpose")?;
        let ad = &self.nodes[a.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = ad[i * c + j];
            }
        }
        let req = self.req(a);
        Ok(self.push(Op::Transpose(a), vec![c, r], out, req))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].data.len() {
            return Err(CoreError::Shape {
                op: "reshape",
                detail: format!(
                    "cannot view {} elements as {shape:?}",
                    self.nodes[a.0].data.len()
                ),
            });
        }
        let data = self.nodes[a.0].data.clone();
        let req = self.req(a);
        Ok(self.push(Op::Reshape(a), shape, data, req))
    }

    /// Adds a `[c]` vector to every row of a `[r,c]` matrix.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (r, c) = self.rank2(m, "add_row_broadcast")?;
        let vc = self.nodes[v.0].data.len();
        if self.nodes[v.0].shape.len() != 1 || vc != c {
            return Err(CoreError::Shape {
                op: "add_row_broadcast",
                detail: format!("matrix cols {c} vs vector shape {:?}", self.nodes[v.0].shape),
            });
        }
        let md = &self.nodes[m.0].data;
        let vd = &self.nodes[v.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = md[i * c + j] + vd[j];
            }
        }
        let req = self.req(m) | self.req(v);
        Ok(self.push(Op::AddRowBroadcast(m, v), vec![r, c], out, req))
    }

    /// Rows `r0..r1` of a `[r,c]` matrix.
    pub fn slice_rows(&mut self, x: Var, r0: usize, r1: usize) -> Result<Var> {
        let (r, c) = self.rank2(x, "slice_rows")?;
        if r0 >= r1 || r1 > r {
            return Err(CoreError::Shape {
                op: "slice_rows",
                detail: format!("rows {r0}..{r1} of {r}"),
            });
        }
        let data = self.nodes[x.0].data[r0 * c..r1 * c].to_vec();
        let req = self.req(x);
        Ok(self.push(Op::SliceRows { x, r0 }, vec![r1 - r0, c], data, req))
    }

    /// Columns `c0..c1` of a `[r,c]` matrix.
    pub fn slice_cols(&mut self, x: Var, c0: usize, c1: usize) -> Result<Var> {
        let (r, c) = self.rank2(x, "slice_cols")?;
        if c0 >= c1 || c1 > c {
            return Err(CoreError::Shape {
                op: "slice_cols",
                detail: format!("cols {c0}..{c1} of {c}"),
            });
        }
        let xd = &self.nodes[x.0].data;
        let w = c1 - c0;
        let mut out = vec![0.0; r * w];
        for i in 0..r {
            out[i * w..(i + 1) * w].copy_from_slice(&xd[i * c + c0..i * c + c1]);
        }
        let req = self.req(x);
        Ok(self.push(Op::SliceCols { x, c0, c1 }, vec![r, w], out, req))
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::Shape { op: "concat_rows", detail: String::from("no inputs") });
        }
        let (_, c) = self.rank2(xs[0], "concat_rows")?;
        let mut rows = 0;
        for &v in xs {
            let (r, ci) = self.rank2(v, "concat_rows")?;
            if ci != c {
                return Err(CoreError::Shape {
                    op: "concat_rows",
                    detail: format!("column counts {c} vs {ci}"),
                });
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * c);
        for &v in xs {
            out.extend_from_slice(&self.nodes[v.0].data);
        }
        let req = xs.iter().any(|&v| self.req(v));
        Ok(self.push(Op::ConcatRows(xs.to_vec()), vec![rows, c], out, req))
    }

    /// Stacks matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(CoreError::Shape { op: "concat_cols", detail: String::from("no inputs") });
        }
        let (r, _) = self.rank2(xs[0], "concat_cols")?;
        let mut cols = 0;
        for &v in xs {
            let (ri, ci) = self.rank2(v, "concat_cols")?;
            if ri != r {
                return Err(CoreError::Shape {
                    op: "concat_cols",
                    detail: format!("row counts {r} vs {ri}"),
                });
            }
            cols += ci;
        }
        let mut out = vec![0.0; r * cols];
        let mut off = 0;
        for &v in xs {
            let (_, ci) = self.rank2(v, "concat_cols")?;
            let vd = &self.nodes[v.0].data;
            for i in 0..r {
                out[i * cols + off..i * cols + off + ci]
                    .copy_from_slice(&vd[i * ci..(i + 1) * ci]);
            }
            off += ci;
        }
        let req = xs.iter().any(|&v| self.req(v));
        Ok(self.push(Op::ConcatCols(xs.to_vec()), vec![r, cols], out, req))
    }

    // ── Neural-network operations ──────────────────────────────────────────

    /// 2-D convolution of `[ci,h,w]` with kernel `[co,ci,kh,kw]` plus bias
    /// `[co]`, with symmetric zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let (ci, h, wd) = self.rank3(x, "conv2d")?;
        let ws = self.nodes[w.0].shape.clone();
        let [co, wci, kh, kw] = ws.as_slice() else {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!("kernel must be rank-4, got {ws:?}"),
            });
        };
        let (co, wci, kh, kw) = (*co, *wci, *kh, *kw);
        if wci != ci {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!("input channels {ci} vs kernel {wci}"),
            });
        }
        if self.nodes[b.0].shape.as_slice() != [co] {
            return Err(CoreError::Shape {
                op: "conv2d",
                detail: format!("bias shape {:?} vs {co} channels", self.nodes[b.0].shape),
            });
        }
        let (sy, sx) = stride;
        let (py, px) = pad;
        if sy == 0 || sx == 0 {
            return Err(CoreError::Config(String::from("conv2d stride must be positive")));
        }
        let (ph, pw) = (h + 2 * py, wd + 2 * px);
        if kh > ph || kw > pw {
            return Err(CoreError::Config(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {ph}x{pw}"
            )));
        }
        let oh = (ph - kh) / sy + 1;
        let ow = (pw - kw) / sx + 1;
        let xp = pad3(&self.nodes[x.0].data, ci, h, wd, py, px);
        let wv = &self.nodes[w.0].data;
        let bv = &self.nodes[b.0].data;
        let mut out = vec![0.0; co * oh * ow];
        for c_o in 0..co {
            let plane = &mut out[c_o * oh * ow..(c_o + 1) * oh * ow];
            for v in plane.iter_mut() {
                *v = bv[c_o];
            }
        }
        for c_o in 0..co {
            for c_i in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kval = wv[((c_o * ci + c_i) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let xrow = &xp[(c_i * ph + oy * sy + ky) * pw..][..pw];
                            let orow = &mut out[(c_o * oh + oy) * ow..][..ow];
                            if sx == 1 {
                                for ox in 0..ow {
                                    orow[ox] += kval * xrow[ox + kx];
                                }
                            } else {
                                for ox in 0..ow {
                                    orow[ox] += kval * xrow[ox * sx + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        let req = self.req(x) | self.req(w) | self.req(b);
        Ok(self.push(
            Op::Conv2d { x, w, b, stride, pad },
            vec![co, oh, ow],
            out,
            req,
        ))
    }

    /// Layer normalization over the last axis of `[r,d]`, with affine
    /// parameters `gamma`, `beta` of shape `[d]`. Variance is the biased
    /// (population) estimate; `eps` guards the zero-variance case.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, d) = self.rank2(x, "layer_norm")?;
        if self.nodes[gamma.0].shape.as_slice() != [d]
            || self.nodes[beta.0].shape.as_slice() != [d]
        {
            return Err(CoreError::Shape {
                op: "layer_norm",
                detail: format!(
                    "feature dim {d} vs gamma {:?} beta {:?}",
                    self.nodes[gamma.0].shape, self.nodes[beta.0].shape
                ),
            });
        }
        if eps <= 0.0 {
            return Err(CoreError::Config(String::from("layer_norm eps must be positive")));
        }
        let xd = &self.nodes[x.0].data;
        let gd = &self.nodes[gamma.0].data;
        let bd = &self.nodes[beta.0].data;
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * inv * gd[j] + bd[j];
            }
        }
        let req = self.req(x) | self.req(gamma) | self.req(beta);
        Ok(self.push(Op::LayerNorm { x, gamma, beta, eps }, vec![r, d], out, req))
    }

    /// Exact-CDF GELU activation, elementwise.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| gelu_value(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a);
        Ok(self.push(Op::Gelu(a), shape, data, req))
    }

    /// Logistic sigmoid, elementwise.
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.nodes[a.0].data.iter().map(|&x| sigmoid_value(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let req = self.req(a);
        Ok(self.push(Op::Sigmoid(a), shape, data, req))
    }

    /// Row-wise softmax of `[r,c]`; every output row sums to 1.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.rank2(a, "softmax_rows")?;
        let ad = &self.nodes[a.0].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &ad[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let mut z = 0.0;
            for j in 0..c {
                let e = libm::exp(row[j] - m);
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                out[i * c + j] /= z;
            }
        }
        let req = self.req(a);
        Ok(self.push(Op::SoftmaxRows(a), vec![r, c], out, req))
    }

    /// Mean cross-entropy between `[n,c]` logits and integer class targets.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (n, c) = self.rank2(logits, "softmax_cross_entropy")?;
        if targets.len() != n {
            return Err(CoreError::Shape {
                op: "softmax_cross_entropy",
                detail: format!("{n} rows vs {} targets", targets.len()),
            });
        }
        for &t in targets {
            if t >= c {
                return Err(CoreError::InvalidTarget { index: t, classes: c });
            }
        }
        let ld = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &ld[i * c..(i + 1) * c];
            let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
            let lse = m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
            total += lse - row[t];
        }
        let req = self.req(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, targets: targets.to_vec() },
            vec![1],
            vec![total / n as f64],
            req,
        ))
    }

    /// Mean smooth-L1 (Huber) distance between two same-shape tensors.
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        let n = self.nodes[pred.0].data.len();
        let w = vec![1.0 / n as f64; n];
        self.smooth_l1_weighted(pred, target, beta, w)
    }

    /// Weighted smooth-L1: `sum_i w_i * huber(pred_i - target_i)`. The plain
    /// [`Tape::smooth_l1`] is this with uniform weights `1/n`.
    pub fn smooth_l1_weighted(
        &mut self,
        pred: Var,
        target: Var,
        beta: f64,
        weights: Vec<f64>,
    ) -> Result<Var> {
        self.same_shape(pred, target, "smooth_l1")?;
        if beta <= 0.0 {
            return Err(CoreError::Config(String::from("smooth_l1 beta must be positive")));
        }
        let n = self.nodes[pred.0].data.len();
        if weights.len() != n {
            return Err(CoreError::Shape {
                op: "smooth_l1",
                detail: format!("{n} elements vs {} weights", weights.len()),
            });
        }
        let pd = &self.nodes[pred.0].data;
        let td = &self.nodes[target.0].data;
        let mut total = 0.0;
        for i in 0..n {
            let d = pd[i] - td[i];
            let a = d.abs();
            total += weights[i]
                * if a < beta { 0.5 * d * d / beta } else { a - 0.5 * beta };
        }
        let req = self.req(pred) | self.req(target);
        Ok(self.push(
            Op::SmoothL1 { pred, target, beta, weights },
            vec![1],
            vec![total],
            req,
        ))
    }

    /// Weighted binary cross-entropy on logits against constant 0/1 targets:
    /// `sum_i w_i * bce(logit_i, t_i)`, computed in the numerically stable
    /// `max(z,0) - z*t + ln(1 + exp(-|z|))` form.
    pub fn bce_with_logits(
        &mut self,
        logits: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Var> {
        let n = self.nodes[logits.0].data.len();
        if targets.len() != n || weights.len() != n {
            return Err(CoreError::Shape {
                op: "bce_with_logits",
                detail: format!(
                    "{n} logits vs {} targets / {} weights",
                    targets.len(),
                    weights.len()
                ),
            });
        }
        let ld = &self.nodes[logits.0].data;
        let mut total = 0.0;
        for i in 0..n {
            let z = ld[i];
            let t = targets[i];
            total += weights[i] * (z.max(0.0) - z * t + libm::log1p(libm::exp(-z.abs())));
        }
        let req = self.req(logits);
        Ok(self.push(
            Op::BceWithLogits { logits, targets, weights },
            vec![1],
            vec![total],
            req,
        ))
    }

    /// Corner-aligned bilinear resampling of `[c,h,w]` to `[c,out_h,out_w]`:
    /// output corner samples coincide with input corner samples, and a
    /// single-sample axis reads the input axis midpoint.
    pub fn bilinear_resample(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (c, h, w) = self.rank3(x, "bilinear_resample")?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(CoreError::Config(String::from("bilinear_resample needs positive dims")));
        }
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; c * out_h * out_w];
        for ch in 0..c {
            for oy in 0..out_h {
                let (y0, y1, wy) = axis_sample(oy, out_h, h);
                for ox in 0..out_w {
                    let (x0, x1, wx) = axis_sample(ox, out_w, w);
                    let p00 = xd[(ch * h + y0) * w + x0];
                    let p01 = xd[(ch * h + y0) * w + x1];
                    let p10 = xd[(ch * h + y1) * w + x0];
                    let p11 = xd[(ch * h + y1) * w + x1];
                    let top = p00 + (p01 - p00) * wx;
                    let bot = p10 + (p11 - p10) * wx;
                    out[(ch * out_h + oy) * out_w + ox] = top + (bot - top) * wy;
                }
            }
        }
        let req = self.req(x);
        Ok(self.push(
            Op::BilinearResample { x, out_h, out_w },
            vec![c, out_h, out_w],
            out,
            req,
        ))
    }

    /// Spatial window `[y0..y1, x0..x1]` of a `[c,h,w]` feature map.
    pub fn slice_spatial(
        &mut self,
        x: Var,
        y0: usize,
        y1: usize,
        x0: usize,
        x1: usize,
    ) -> Result<Var> {
        let (c, h, w) = self.rank3(x, "slice_spatial")?;
        if y0 >= y1 || y1 > h || x0 >= x1 || x1 > w {
            return Err(CoreError::Shape {
                op: "slice_spatial",
                detail: format!("window y {y0}..{y1} x {x0}..{x1} of {h}x{w}"),
            });
        }
        let (oh, ow) = (y1 - y0, x1 - x0);
        let xd = &self.nodes[x.0].data;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for yy in 0..oh {
                let src = (ch * h + y0 + yy) * w + x0;
                let dst = (ch * oh + yy) * ow;
                out[dst..dst + ow].copy_from_slice(&xd[src..src + ow]);
            }
        }
        let req = self.req(x);
        Ok(self.push(Op::SliceSpatial { x, y0, y1, x0, x1 }, vec![c, oh, ow], out, req))
    }

    // ── Reverse pass ───────────────────────────────────────────────────────

    /// Accumulates gradients of the scalar `loss` into every node that a
    /// differentiable leaf feeds into. Gradients from earlier `backward`
    /// calls on the same tape are discarded first; within one call, values
    /// consumed by several operations accumulate additively.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(CoreError::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        if !self.nodes[loss.0].requires {
            return Ok(()); // loss is constant w.r.t. every differentiable leaf
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !nodes[i].requires {
                continue;
            }
            let (before, at) = grads.split_at_mut(i);
            let g = at[0].as_deref().expect("grad present");
            backprop_step(nodes, i, g, before);
        }
        Ok(())
    }
}

/// One reverse step: distributes `g`, the gradient at `nodes[i]`, to the
/// gradients of that node's inputs (all of which precede `i` on the tape).
fn backprop_step(nodes: &[Node], i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let numel = |v: Var| nodes[v.0].data.len();
    let wants = |v: Var| nodes[v.0].requires;
    macro_rules! slot {
        ($v:expr) => {
            grads[$v.0].get_or_insert_with(|| vec![0.0; numel($v)])
        };
    }
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                let ga = slot!(*a);
                for (gi, gv) in ga.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
            if wants(*b) {
                let gb = slot!(*b);
                for (gi, gv) in gb.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                let ga = slot!(*a);
                for (gi, gv) in ga.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
            if wants(*b) {
                let gb = slot!(*b);
                for (gi, gv) in gb.iter_mut().zip(g) {
                    *gi -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let bd = &nodes[b.0].data;
                let ga = slot!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * bd[j];
                }
            }
            if wants(*b) {
                let ad = &nodes[a.0].data;
                let gb = slot!(*b);
                for j in 0..g.len() {
                    gb[j] += g[j] * ad[j];
                }
            }
        }
        Op::Scale(a, k) => {
            if wants(*a) {
                let ga = slot!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * k;
                }
            }
        }
        Op::Sum(a) => {
            if wants(*a) {
                let ga = slot!(*a);
                for gi in ga.iter_mut() {
                    *gi += g[0];
                }
            }
        }
        Op::Mean(a) => {
            if wants(*a) {
                let n = numel(*a) as f64;
                let ga = slot!(*a);
                for gi in ga.iter_mut() {
                    *gi += g[0] / n;
                }
            }
        }
        Op::Matmul(a, b) => {
            let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
            let n = nodes[b.0].shape[1];
            if wants(*a) {
                // dA = G * B^T  ([m,n] x [n,k])
                let bd = &nodes[b.0].data;
                let ga = slot!(*a);
                for i2 in 0..m {
                    for j in 0..n {
                        let gv = g[i2 * n + j];
                        for kk in 0..k {
                            ga[i2 * k + kk] += gv * bd[kk * n + j];
                        }
                    }
                }
            }
            if wants(*b) {
                // dB = A^T * G  ([k,m] x [m,n])
                let ad = &nodes[a.0].data;
                let gb = slot!(*b);
                for i2 in 0..m {
                    for kk in 0..k {
                        let av = ad[i2 * k + kk];
                        let grow = &g[i2 * n..(i2 + 1) * n];
                        let brow = &mut gb[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            brow[j] += av * grow[j];
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                let (r, c) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let ga = slot!(*a);
                for i2 in 0..r {
                    for j in 0..c {
                        ga[i2 * c + j] += g[j * r + i2];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if wants(*a) {
                let ga = slot!(*a);
                for (gi, gv) in ga.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
        }
        Op::AddRowBroadcast(m, v) => {
            let c = nodes[v.0].data.len();
            if wants(*m) {
                let gm = slot!(*m);
                for (gi, gv) in gm.iter_mut().zip(g) {
                    *gi += gv;
                }
            }
            if wants(*v) {
                let gv0 = slot!(*v);
                for (j, gval) in g.iter().enumerate() {
                    gv0[j % c] += gval;
                }
            }
        }
        Op::SliceRows { x, r0 } => {
            if wants(*x) {
                let c = nodes[x.0].shape[1];
                let gx = slot!(*x);
                for (j, gv) in g.iter().enumerate() {
                    gx[r0 * c + j] += gv;
                }
            }
        }
        Op::SliceCols { x, c0, c1 } => {
            if wants(*x) {
                let c = nodes[x.0].shape[1];
                let w = c1 - c0;
                let gx = slot!(*x);
                for i2 in 0..nodes[x.0].shape[0] {
                    for j in 0..w {
                        gx[i2 * c + c0 + j] += g[i2 * w + j];
                    }
                }
            }
        }
        Op::ConcatRows(xs) => {
            let mut off = 0;
            for &v in xs {
                let n = nodes[v.0].data.len();
                if wants(v) {
                    let gv = slot!(v);
                    for j in 0..n {
                        gv[j] += g[off + j];
                    }
                }
                off += n;
            }
        }
        Op::ConcatCols(xs) => {
            let r = nodes[xs[0].0].shape[0];
            let total: usize = xs.iter().map(|&v| nodes[v.0].shape[1]).sum();
            let mut off = 0;
            for &v in xs {
                let ci = nodes[v.0].shape[1];
                if wants(v) {
                    let gv = slot!(v);
                    for i2 in 0..r {
                        for j in 0..ci {
                            gv[i2 * ci + j] += g[i2 * total + off + j];
                        }
                    }
                }
                off += ci;
            }
        }
        Op::Conv2d { x, w, b, stride, pad } => {
            let (ci, h, wd) = (
                nodes[x.0].shape[0],
                nodes[x.0].shape[1],
                nodes[x.0].shape[2],
            );
            let (co, kh, kw) = (
                nodes[w.0].shape[0],
                nodes[w.0].shape[2],
                nodes[w.0].shape[3],
            );
            let (sy, sx) = *stride;
            let (py, px) = *pad;
            let (ph, pw) = (h + 2 * py, wd + 2 * px);
            let oh = (ph - kh) / sy + 1;
            let ow = (pw - kw) / sx + 1;
            if wants(*b) {
                let gb = slot!(*b);
                for c_o in 0..co {
                    let plane = &g[c_o * oh * ow..(c_o + 1) * oh * ow];
                    gb[c_o] += plane.iter().sum::<f64>();
                }
            }
            let need_x = wants(*x);
            let need_w = wants(*w);
            if need_x || need_w {
                let xp = pad3(&nodes[x.0].data, ci, h, wd, py, px);
                let wv = &nodes[w.0].data;
                let mut gxp = if need_x { vec![0.0; ci * ph * pw] } else { Vec::new() };
                let mut gw = if need_w { vec![0.0; wv.len()] } else { Vec::new() };
                for c_o in 0..co {
                    for c_i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let widx = ((c_o * ci + c_i) * kh + ky) * kw + kx;
                                let kval = wv[widx];
                                let mut acc = 0.0;
                                for oy in 0..oh {
                                    let xbase = (c_i * ph + oy * sy + ky) * pw + kx;
                                    let gbase = (c_o * oh + oy) * ow;
                                    for ox in 0..ow {
                                        let gv = g[gbase + ox];
                                        if need_w {
                                            acc += gv * xp[xbase + ox * sx];
                                        }
                                        if need_x {
                                            gxp[xbase + ox * sx] += gv * kval;
                                        }
                                    }
                                }
                                if need_w {
                                    gw[widx] += acc;
                                }
                            }
                        }
                    }
                }
                if need_w {
                    let gwslot = slot!(*w);
                    for (gi, gv) in gwslot.iter_mut().zip(&gw) {
                        *gi += gv;
                    }
                }
                if need_x {
                    let gx = slot!(*x);
                    for c_i in 0..ci {
                        for yy in 0..h {
                            let src = (c_i * ph + yy + py) * pw + px;
                            let dst = (c_i * h + yy) * wd;
                            for xx in 0..wd {
                                gx[dst + xx] += gxp[src + xx];
                            }
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let (r, d) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
            let xd = &nodes[x.0].data;
            let gd = &nodes[gamma.0].data;
            for i2 in 0..r {
                let row = &xd[i2 * d..(i2 + 1) * d];
                let grow = &g[i2 * d..(i2 + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var =
                    row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / libm::sqrt(var + eps);
                if wants(*gamma) {
                    let gg = slot!(*gamma);
                    for j in 0..d {
                        gg[j] += grow[j] * (row[j] - mean) * inv;
                    }
                }
                if wants(*beta) {
                    let gb = slot!(*beta);
                    for j in 0..d {
                        gb[j] += grow[j];
                    }
                }
                if wants(*x) {
                    // dx = (gj - mean(gj) - xhat * mean(gj*xhat)) / sigma,
                    // with gj = dy * gamma and xhat the normalized input.
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let gj = grow[j] * gd[j];
                        let xh = (row[j] - mean) * inv;
                        m1 += gj;
                        m2 += gj * xh;
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let gx = slot!(*x);
                    for j in 0..d {
                        let gj = grow[j] * gd[j];
                        let xh = (row[j] - mean) * inv;
                        gx[i2 * d + j] += (gj - m1 - xh * m2) * inv;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            if wants(*a) {
                let ad = &nodes[a.0].data;
                let ga = slot!(*a);
                for j in 0..g.len() {
                    let x = ad[j];
                    ga[j] += g[j] * (normal_cdf(x) + x * normal_pdf(x));
                }
            }
        }
        Op::Sigmoid(a) => {
            if wants(*a) {
                let yd = &nodes[i].data;
                let ga = slot!(*a);
                for j in 0..g.len() {
                    ga[j] += g[j] * yd[j] * (1.0 - yd[j]);
                }
            }
        }
        Op::SoftmaxRows(a) => {
            if wants(*a) {
                let (r, c) = (nodes[i].shape[0], nodes[i].shape[1]);
                let yd = &nodes[i].data;
                let ga = slot!(*a);
                for i2 in 0..r {
                    let yrow = &yd[i2 * c..(i2 + 1) * c];
                    let grow = &g[i2 * c..(i2 + 1) * c];
                    let dot: f64 = yrow.iter().zip(grow).map(|(y, gv)| y * gv).sum();
                    for j in 0..c {
                        ga[i2 * c + j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
        }
        Op::SoftmaxCrossEntropy { logits, targets } => {
            if wants(*logits) {
                let (n, c) = (nodes[logits.0].shape[0], nodes[logits.0].shape[1]);
                let ld = &nodes[logits.0].data;
                let scale = g[0] / n as f64;
                let gl = slot!(*logits);
                for (i2, &t) in targets.iter().enumerate() {
                    let row = &ld[i2 * c..(i2 + 1) * c];
                    let m = row.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
                    let z: f64 = row.iter().map(|&v| libm::exp(v - m)).sum();
                    for j in 0..c {
                        let p = libm::exp(row[j] - m) / z;
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[i2 * c + j] += scale * (p - onehot);
                    }
                }
            }
        }
        Op::SmoothL1 { pred, target, beta, weights } => {
            let pd = &nodes[pred.0].data;
            let td = &nodes[target.0].data;
            let gp = wants(*pred);
            let gt = wants(*target);
            if gp || gt {
                for j in 0..pd.len() {
                    let d = pd[j] - td[j];
                    let slope = if d.abs() < *beta {
                        d / *beta
                    } else if d > 0.0 {
                        1.0
                    } else {
                        -1.0
                    };
                    let contrib = g[0] * weights[j] * slope;
                    if gp {
                        slot!(*pred)[j] += contrib;
                    }
                    if gt {
                        slot!(*target)[j] -= contrib;
                    }
                }
            }
        }
        Op::BceWithLogits { logits, targets, weights } => {
            if wants(*logits) {
                let ld = &nodes[logits.0].data;
                let gl = slot!(*logits);
                for j in 0..ld.len() {
                    gl[j] += g[0] * weights[j] * (sigmoid_value(ld[j]) - targets[j]);
                }
            }
        }
        Op::BilinearResample { x, out_h, out_w } => {
            if wants(*x) {
                let (c, h, w) = (
                    nodes[x.0].shape[0],
                    nodes[x.0].shape[1],
                    nodes[x.0].shape[2],
                );
                let gx = slot!(*x);
                for ch in 0..c {
                    for oy in 0..*out_h {
                        let (y0, y1, wy) = axis_sample(oy, *out_h, h);
                        for ox in 0..*out_w {
                            let (x0, x1, wx) = axis_sample(ox, *out_w, w);
                            let gv = g[(ch * out_h + oy) * out_w + ox];
                            gx[(ch * h + y0) * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                            gx[(ch * h + y0) * w + x1] += gv * (1.0 - wy) * wx;
                            gx[(ch * h + y1) * w + x0] += gv * wy * (1.0 - wx);
                            gx[(ch * h + y1) * w + x1] += gv * wy * wx;
                        }
                    }
                }
            }
        }
        Op::SliceSpatial { x, y0, y1, x0, x1 } => {
            if wants(*x) {
                let (h, w) = (nodes[x.0].shape[1], nodes[x.0].shape[2]);
                let (oh, ow) = (y1 - y0, x1 - x0);
                let gx = slot!(*x);
                for ch in 0..nodes[x.0].shape[0] {
                    for yy in 0..oh {
                        for xx in 0..ow {
                            gx[(ch * h + y0 + yy) * w + x0 + xx] +=
                                g[(ch * oh + yy) * ow + xx];
                        }
                    }
                }
            }
        }
    }
}

/// Sample position for corner-aligned resampling of one axis: returns the two
/// source indices bracketing output index `o` and the interpolation weight of
/// the upper one. A single-sample output axis reads the source midpoint.
#[inline]
pub(crate) fn axis_sample(o: usize, out_len: usize, src_len: usize) -> (usize, usize, f64) {
    let pos = if out_len > 1 {
        o as f64 * (src_len - 1) as f64 / (out_len - 1) as f64
    } else {
        (src_len - 1) as f64 * 0.5
    };
    let lo = libm::floor(pos) as usize;
    let lo = lo.min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

fn pad3(x: &[f64], c: usize, h: usize, w: usize, py: usize, px: usize) -> Vec<f64> {
    if py == 0 && px == 0 {
        return x.to_vec();
    }
    let (ph, pw) = (h + 2 * py, w + 2 * px);
    let mut out = vec![0.0; c * ph * pw];
    for ch in 0..c {
        for yy in 0..h {
            let src = (ch * h + yy) * w;
            let dst = (ch * ph + yy + py) * pw + px;
            out[dst..dst + w].copy_from_slice(&x[src..src + w]);
        }
    }
    out
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check;

    fn leaf(t: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        t.leaf(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 2], &[1.0; 4]);
        let b = leaf(&mut t, &[2, 3], &[1.0; 6]);
        assert!(matches!(t.add(a, b), Err(CoreError::Shape { op: "add", .. })));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 2], &[1.0; 4]);
        let err = t.backward(a).unwrap_err();
        assert!(matches!(err, CoreError::NonScalarLoss(_)));
    }

    #[test]
    fn fan_out_gradients_accumulate_additively() {
        // loss = sum(x*y) + sum(x*x)  =>  dloss/dx = y + 2x, exactly.
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 3], &[0.5, -1.25, 2.0]);
        let y = leaf(&mut t, &[1, 3], &[3.0, 0.25, -0.75]);
        let xy = t.mul(x, y).unwrap();
        let xx = t.mul(x, x).unwrap();
        let s1 = t.sum(xy).unwrap();
        let s2 = t.sum(xx).unwrap();
        let loss = t.add(s1, s2).unwrap();
        t.backward(loss).unwrap();
        let gx = t.grad(x).unwrap();
        for ((gxj, yj), xj) in gx.iter().zip(t.data(y)).zip(t.data(x)) {
            assert_eq!(*gxj, yj + 2.0 * xj);
        }
        assert_eq!(t.grad(y).unwrap(), t.data(x));
    }

    #[test]
    fn constant_subgraphs_receive_no_gradients() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 2], &[1.0, 2.0]);
        let c = t.constant(vec![1, 2], vec![5.0, 7.0]).unwrap();
        let prod = t.mul(x, c).unwrap();
        let extra = t.mul(c, c).unwrap(); // constant-only branch
        let s1 = t.sum(prod).unwrap();
        let s2 = t.sum(extra).unwrap();
        let loss = t.add(s1, s2).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[5.0, 7.0]);
        assert!(t.grad(c).is_none());
        assert!(t.grad(extra).is_none());
    }

    #[test]
    fn backward_twice_is_bit_identical_and_resets() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[2, 2], &[0.3, -0.7, 1.1, 0.9]);
        let y = t.gelu(x).unwrap();
        let loss = t.sum(y).unwrap();
        t.backward(loss).unwrap();
        let first = t.grad(x).unwrap().to_vec();
        t.backward(loss).unwrap();
        let second = t.grad(x).unwrap();
        assert_eq!(first, second); // no stale accumulation across calls
    }

    #[test]
    fn gelu_matches_quadrature_oracle() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1], &[1.0]);
        let y = t.gelu(x).unwrap();
        let expected = 1.0 * check::normal_cdf_quadrature(1.0);
        assert!((t.data(y)[0] - expected).abs() < 1e-12);
        assert!((t.data(y)[0] - 0.8413447460685429).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_class_count() {
        let mut t = Tape::new();
        let logits = leaf(&mut t, &[3, 7], &[0.25; 21]);
        let loss = t.softmax_cross_entropy(logits, &[0, 3, 6]).unwrap();
        assert!((t.data(loss)[0] - libm::log(7.0)).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range_target() {
        let mut t = Tape::new();
        let logits = leaf(&mut t, &[2, 4], &[0.0; 8]);
        let err = t.softmax_cross_entropy(logits, &[1, 4]).unwrap_err();
        assert!(matches!(err, CoreError::InvalidTarget { index: 4, classes: 4 }));
    }

    #[test]
    fn sigmoid_is_stable_at_extreme_logits() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 2], &[1000.0, -1000.0]);
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.data(y), &[1.0, 0.0]);
        let s = t.sum(y).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bce_with_logits_is_stable_at_extreme_logits() {
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 2], &[1000.0, -1000.0]);
        let loss = t
            .bce_with_logits(x, vec![1.0, 0.0], vec![0.5, 0.5])
            .unwrap();
        assert_eq!(t.data(loss)[0], 0.0);
        t.backward(loss).unwrap();
        assert!(t.grad(x).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn bilinear_resample_to_same_size_is_identity() {
        let mut t = Tape::new();
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.37 - 1.0).collect();
        let x = leaf(&mut t, &[2, 3, 4], &data);
        let y = t.bilinear_resample(x, 3, 4).unwrap();
        assert_eq!(t.data(y), t.data(x));
    }

    #[test]
    fn matmul_matches_hand_example() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = leaf(&mut t, &[3, 2], &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.data(c), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_round_trips() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let at = t.transpose(a).unwrap();
        let back = t.transpose(at).unwrap();
        assert_eq!(t.shape(at), &[3, 2]);
        assert_eq!(t.data(back), t.data(a));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let a = leaf(&mut t, &[2, 4], &[900.0, 901.0, 899.0, 900.5, -3.0, 0.0, 1.0, 2.0]);
        let y = t.softmax_rows(a).unwrap();
        for i in 0..2 {
            let s: f64 = t.data(y)[i * 4..(i + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(t.data(y)[i * 4..(i + 1) * 4].iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn conv2d_matches_hand_example() {
        // 1x3x3 input, 1x1x2x2 kernel of ones, bias 0.5, stride 1, no pad:
        // each output is the sum of a 2x2 window plus the bias.
        let mut t = Tape::new();
        let x = leaf(&mut t, &[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = leaf(&mut t, &[1, 1, 2, 2], &[1.0; 4]);
        let b = leaf(&mut t, &[1], &[0.5]);
        let y = t.conv2d(x, w, b, (1, 1), (0, 0)).unwrap();
        assert_eq!(t.shape(y), &[1, 2, 2]);
        assert_eq!(t.data(y), &[12.5, 16.5, 24.5, 28.5]);
    }

    #[test]
    fn normal_cdf_quadrature_tracks_erf() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.0, 2.5] {
            let diff = (check::normal_cdf_quadrature(x) - normal_cdf(x)).abs();
            assert!(diff < 1e-12, "cdf mismatch at {x}: {diff}");
        }
    }
}
