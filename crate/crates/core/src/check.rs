//! Independent numerical oracles for validating the analytic machinery:
//! central finite differences for gradients and Simpson quadrature for the
//! normal CDF. Nothing here is used by the models themselves; the module
//! exists so tests can cross-check hand-derived math against a second,
//! dumber computation.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Comparison bound: values `a`, `b` agree when
/// `|a - b| <= abs + rel * max(|a|, |b|)`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    pub fn new(rel: f64, abs: f64) -> Self {
        Tolerance { rel, abs }
    }

    pub fn accepts(&self, a: f64, b: f64) -> bool {
        (a - b).abs() <= self.abs + self.rel * a.abs().max(b.abs())
    }
}

/// Central-difference gradient of a scalar black box with respect to every
/// coordinate of every input: `(f(x + eps e_j) - f(x - eps e_j)) / (2 eps)`.
pub fn finite_difference_gradients(
    inputs: &[(Vec<usize>, Vec<f64>)],
    eps: f64,
    mut eval: impl FnMut(&[(Vec<usize>, Vec<f64>)]) -> f64,
) -> Vec<Vec<f64>> {
    let mut work: Vec<(Vec<usize>, Vec<f64>)> = inputs.to_vec();
    let mut grads = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let n = inputs[i].1.len();
        let mut gi = Vec::with_capacity(n);
        for j in 0..n {
            let orig = work[i].1[j];
            work[i].1[j] = orig + eps;
            let plus = eval(&work);
            work[i].1[j] = orig - eps;
            let minus = eval(&work);
            work[i].1[j] = orig;
            gi.push((plus - minus) / (2.0 * eps));
        }
        grads.push(gi);
    }
    grads
}

/// Builds the graph once for the analytic gradients, then re-evaluates the
/// same construction under coordinate perturbations for the numeric ones,
/// and panics with full context on the first disagreement.
///
/// `build` must map the given leaves to a scalar loss; an input the loss
/// ignores is expected to have an exactly zero numeric gradient.
pub fn check_gradients(
    label: &str,
    inputs: &[(Vec<usize>, Vec<f64>)],
    eps: f64,
    tol: Tolerance,
    build: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| tape.leaf(shape.clone(), data.clone()).expect("leaf"))
        .collect();
    let loss = build(&mut tape, &vars).expect("graph construction");
    assert_eq!(tape.data(loss).len(), 1, "{label}: loss must be scalar");
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (_, data))| {
            tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| alloc::vec![0.0; data.len()])
        })
        .collect();

    let numeric = finite_difference_gradients(inputs, eps, |perturbed| {
        let mut t = Tape::new();
        let vs: Vec<Var> = perturbed
            .iter()
            .map(|(shape, data)| t.leaf(shape.clone(), data.clone()).expect("leaf"))
            .collect();
        let l = build(&mut t, &vs).expect("graph construction");
        t.data(l)[0]
    });

    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (j, (&av, &nv)) in a.iter().zip(n).enumerate() {
            assert!(
                tol.accepts(av, nv),
                "{label}: input {i} coord {j}: analytic {av:.12e} vs numeric {nv:.12e} \
                 (diff {:.3e}, rel tol {:.1e}, abs tol {:.1e})",
                (av - nv).abs(),
                tol.rel,
                tol.abs,
            );
        }
    }
}

/// Seeded random gradient checks for every tape operation, shared between
/// the per-op unit tests and the system-level acceptance run. Each case
/// builds `instances` random graphs ending in a scalar, computes analytic
/// gradients with `Tape::backward`, and compares against central differences
/// (step [`battery::EPS`]) of the same construction, panicking with full
/// context on the first disagreement. Every per-op bound is at least as
/// tight as rel `1e-4` / abs `1e-6`.
pub mod battery {
    use alloc::format;
    use alloc::vec;
    use alloc::vec::Vec;

    use super::{check_gradients, Tolerance};
    use crate::rng::Stream;

    /// Central-difference step.
    pub const EPS: f64 = 1e-5;

    /// Tight bound for ops that are linear or mildly nonlinear in their
    /// inputs.
    fn tol_tight() -> Tolerance {
        Tolerance::new(1e-6, 1e-8)
    }

    /// Bound for normalization / saturating ops and for composite graphs,
    /// where the finite-difference truncation error is larger.
    fn tol_smooth() -> Tolerance {
        Tolerance::new(1e-5, 1e-7)
    }

    fn rand_data(rng: &mut Stream, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.range(-1.5, 1.5)).collect()
    }

    fn input(rng: &mut Stream, shape: &[usize]) -> (Vec<usize>, Vec<f64>) {
        let n = shape.iter().product();
        (shape.to_vec(), rand_data(rng, n))
    }

    /// Runs `case` over `instances` independently seeded instances.
    fn per_instance(op: &str, instances: usize, mut case: impl FnMut(&mut Stream, usize)) {
        for i in 0..instances {
            let mut rng = Stream::for_domain(0xC0FFEE ^ i as u64, op);
            case(&mut rng, i);
        }
    }

    pub fn elementwise(instances: usize) {
        per_instance("elementwise", instances, |rng, i| {
            let r = rng.int_between(1, 4);
            let c = rng.int_between(1, 5);
            let inputs = [input(rng, &[r, c]), input(rng, &[r, c])];
            let k = rng.range(-2.0, 2.0);
            check_gradients(&format!("elementwise[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let s = t.add(v[0], v[1])?;
                let d = t.sub(s, v[1])?;
                let m = t.mul(d, v[1])?;
                let sc = t.scale(m, k)?;
                t.sum(sc)
            });
        });
    }

    pub fn reduce(instances: usize) {
        per_instance("reduce", instances, |rng, i| {
            let r = rng.int_between(1, 4);
            let c = rng.int_between(1, 6);
            let inputs = [input(rng, &[r, c])];
            check_gradients(&format!("sum[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.mul(v[0], v[0])?;
                t.sum(y)
            });
            check_gradients(&format!("mean[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.mul(v[0], v[0])?;
                t.mean(y)
            });
        });
    }

    pub fn matmul(instances: usize) {
        per_instance("matmul", instances, |rng, i| {
            let m = rng.int_between(1, 4);
            let k = rng.int_between(1, 4);
            let n = rng.int_between(1, 4);
            let inputs = [input(rng, &[m, k]), input(rng, &[k, n])];
            check_gradients(&format!("matmul[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y2 = t.mul(y, y)?; // quadratic head so both factors matter
                t.sum(y2)
            });
        });
    }

    pub fn transpose_reshape(instances: usize) {
        per_instance("transpose_reshape", instances, |rng, i| {
            let r = rng.int_between(1, 4);
            let c = rng.int_between(1, 4);
            let inputs = [input(rng, &[r, c])];
            check_gradients(&format!("transpose[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.transpose(v[0])?;
                let z = t.matmul(v[0], y)?;
                t.sum(z)
            });
            check_gradients(&format!("reshape[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.reshape(v[0], vec![c, r])?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn add_row_broadcast(instances: usize) {
        per_instance("broadcast", instances, |rng, i| {
            let r = rng.int_between(1, 5);
            let c = rng.int_between(1, 5);
            let inputs = [input(rng, &[r, c]), input(rng, &[c])];
            check_gradients(&format!("broadcast[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.add_row_broadcast(v[0], v[1])?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn slices_and_concats(instances: usize) {
        per_instance("slice_concat", instances, |rng, i| {
            let r = rng.int_between(2, 5);
            let c = rng.int_between(2, 5);
            let r0 = rng.below(r - 1);
            let r1 = rng.int_between(r0 + 1, r);
            let c0 = rng.below(c - 1);
            let c1 = rng.int_between(c0 + 1, c);
            let inputs = [input(rng, &[r, c]), input(rng, &[r, c])];
            check_gradients(&format!("slice_concat[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let rows = t.slice_rows(v[0], r0, r1)?;
                let rows2 = t.slice_rows(v[1], r0, r1)?;
                let cat_r = t.concat_rows(&[rows, rows2])?;
                let cols = t.slice_cols(v[0], c0, c1)?;
                let cols2 = t.slice_cols(v[1], c0, c1)?;
                let cat_c = t.concat_cols(&[cols, cols2])?;
                let a = t.mul(cat_r, cat_r)?;
                let b = t.mul(cat_c, cat_c)?;
                let sa = t.sum(a)?;
                let sb = t.sum(b)?;
                t.add(sa, sb)
            });
        });
    }

    pub fn conv2d(instances: usize) {
        per_instance("conv2d", instances, |rng, i| {
            let ci = rng.int_between(1, 2);
            let co = rng.int_between(1, 3);
            let h = rng.int_between(3, 6);
            let w = rng.int_between(3, 6);
            let kh = rng.int_between(1, 3);
            let kw = rng.int_between(1, 3);
            let stride = (rng.int_between(1, 2), rng.int_between(1, 2));
            let pad = (rng.below(2), rng.below(2));
            let inputs = [
                input(rng, &[ci, h, w]),
                input(rng, &[co, ci, kh, kw]),
                input(rng, &[co]),
            ];
            check_gradients(&format!("conv2d[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn layer_norm(instances: usize) {
        per_instance("layer_norm", instances, |rng, i| {
            let r = rng.int_between(1, 4);
            let d = rng.int_between(2, 8);
            let inputs = [input(rng, &[r, d]), input(rng, &[d]), input(rng, &[d])];
            check_gradients(&format!("layer_norm[{i}]"), &inputs, EPS, tol_smooth(), |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn activations(instances: usize) {
        per_instance("activations", instances, |rng, i| {
            let r = rng.int_between(1, 4);
            let c = rng.int_between(1, 6);
            let inputs = [input(rng, &[r, c])];
            check_gradients(&format!("gelu[{i}]"), &inputs, EPS, tol_smooth(), |t, v| {
                let y = t.gelu(v[0])?;
                t.sum(y)
            });
            check_gradients(&format!("sigmoid[{i}]"), &inputs, EPS, tol_smooth(), |t, v| {
                let y = t.sigmoid(v[0])?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn softmax_rows(instances: usize) {
        per_instance("softmax", instances, |rng, i| {
            let r = rng.int_between(1, 3);
            let c = rng.int_between(2, 6);
            let inputs = [input(rng, &[r, c]), input(rng, &[r, c])];
            check_gradients(&format!("softmax[{i}]"), &inputs, EPS, tol_smooth(), |t, v| {
                let p = t.softmax_rows(v[0])?;
                let weighted = t.mul(p, v[1])?; // non-uniform head, else grads vanish
                t.sum(weighted)
            });
        });
    }

    pub fn softmax_cross_entropy(instances: usize) {
        per_instance("cross_entropy", instances, |rng, i| {
            let n = rng.int_between(1, 4);
            let c = rng.int_between(2, 8);
            let targets: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let inputs = [input(rng, &[n, c])];
            check_gradients(&format!("cross_entropy[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                t.softmax_cross_entropy(v[0], &targets)
            });
        });
    }

    pub fn smooth_l1(instances: usize) {
        per_instance("smooth_l1", instances, |rng, i| {
            let n = rng.int_between(2, 8);
            let beta = 1.0;
            // Keep |pred - target| away from the Huber kink at beta, where
            // the loss is only C^1 and central differences straddle the
            // transition.
            let pred = rand_data(rng, n);
            let target: Vec<f64> = pred
                .iter()
                .map(|p| {
                    let mut d = rng.range(-2.0 * beta, 2.0 * beta);
                    if (d.abs() - beta).abs() < 1e-3 {
                        d += 0.01;
                    }
                    p - d
                })
                .collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.range(0.1, 2.0)).collect();
            let w = weights.clone();
            let inputs = [(vec![1, n], pred), (vec![1, n], target)];
            check_gradients(&format!("smooth_l1[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                t.smooth_l1_weighted(v[0], v[1], beta, w.clone())
            });
            check_gradients(&format!("smooth_l1_mean[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                t.smooth_l1(v[0], v[1], beta)
            });
        });
    }

    pub fn bce_with_logits(instances: usize) {
        per_instance("bce", instances, |rng, i| {
            let n = rng.int_between(1, 8);
            let targets: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.range(0.05, 1.0)).collect();
            let (tg, w) = (targets.clone(), weights.clone());
            let inputs = [input(rng, &[1, n])];
            check_gradients(&format!("bce[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                t.bce_with_logits(v[0], tg.clone(), w.clone())
            });
        });
    }

    pub fn bilinear_resample(instances: usize) {
        per_instance("bilinear", instances, |rng, i| {
            let c = rng.int_between(1, 2);
            let h = rng.int_between(1, 5);
            let w = rng.int_between(1, 5);
            let oh = rng.int_between(1, 6);
            let ow = rng.int_between(1, 6);
            let inputs = [input(rng, &[c, h, w])];
            check_gradients(&format!("bilinear[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.bilinear_resample(v[0], oh, ow)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    pub fn slice_spatial(instances: usize) {
        per_instance("slice_spatial", instances, |rng, i| {
            let c = rng.int_between(1, 3);
            let h = rng.int_between(2, 6);
            let w = rng.int_between(2, 6);
            let y0 = rng.below(h - 1);
            let y1 = rng.int_between(y0 + 1, h);
            let x0 = rng.below(w - 1);
            let x1 = rng.int_between(x0 + 1, w);
            let inputs = [input(rng, &[c, h, w])];
            check_gradients(&format!("slice_spatial[{i}]"), &inputs, EPS, tol_tight(), |t, v| {
                let y = t.slice_spatial(v[0], y0, y1, x0, x1)?;
                let y2 = t.mul(y, y)?;
                t.sum(y2)
            });
        });
    }

    /// A composite graph exercising matmul, broadcast, normalization,
    /// attention softmax, activation, and resampling together — the shape of
    /// computation the models actually run.
    pub fn composite_attention_like_block(instances: usize) {
        per_instance("composite", instances, |rng, i| {
            let l = rng.int_between(2, 4);
            let d = 4;
            let inputs = [
                input(rng, &[l, d]), // tokens
                input(rng, &[d, d]), // q/k projection
                input(rng, &[d]),    // norm gain
                input(rng, &[d]),    // norm shift
            ];
            check_gradients(&format!("composite[{i}]"), &inputs, EPS, tol_smooth(), |t, v| {
                let normed = t.layer_norm(v[0], v[2], v[3], 1e-5)?;
                let q = t.matmul(normed, v[1])?;
                let kt = t.transpose(q)?;
                let scores = t.matmul(q, kt)?;
                let scaled = t.scale(scores, 1.0 / (d as f64))?;
                let attn = t.softmax_rows(scaled)?;
                let mixed = t.matmul(attn, normed)?;
                let res = t.add(mixed, v[0])?;
                let act = t.gelu(res)?;
                let cube = t.reshape(act, vec![1, l, d])?;
                let pooled = t.bilinear_resample(cube, 1, d)?;
                t.sum(pooled)
            });
        });
    }

    /// Runs every case; panics on the first disagreement.
    pub fn all(instances: usize) {
        elementwise(instances);
        reduce(instances);
        matmul(instances);
        transpose_reshape(instances);
        add_row_broadcast(instances);
        slices_and_concats(instances);
        conv2d(instances);
        layer_norm(instances);
        activations(instances);
        softmax_rows(instances);
        softmax_cross_entropy(instances);
        smooth_l1(instances);
        bce_with_logits(instances);
        bilinear_resample(instances);
        slice_spatial(instances);
        composite_attention_like_block(instances);
    }
}

/// Standard normal CDF by composite Simpson quadrature of the density from 0
/// to `x` (plus one half), independent of the `erf`-based implementation.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let n = 512; // even interval count; error term is O(h^4)
    let h = x / n as f64;
    let pdf = |t: f64| libm::exp(-0.5 * t * t) / libm::sqrt(2.0 * core::f64::consts::PI);
    let mut acc = pdf(0.0) + pdf(x);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * pdf(k as f64 * h);
    }
    0.5 + acc * h / 3.0
}
