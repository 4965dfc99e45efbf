//! Wengert-list reverse-mode differentiation.
//!
//! Every primitive appends one node holding its forward value plus whatever
//! it needs for the backward pass. `backward` walks the list in exact reverse
//! order, so gradients of a node are complete before its inputs are visited.

use crate::diffcore::Tensor;
use crate::error::{contract, Error::Config, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Op {
    Leaf,
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    CondScaleShift {
        h: Var,
        gamma: Var,
        beta: Var,
    },
    Gelu {
        x: Var,
        tanh: Vec<f64>,
    },
    AbsDiff {
        a: Var,
        b: Var,
    },
    ReduceMean {
        x: Var,
        axis: Option<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    GatherRing {
        x: Var,
        ring: usize,
        offsets: Vec<usize>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        ring: usize,
        heads: usize,
        offsets: Vec<usize>,
        probs: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleShift {
        x: Var,
        scale: f64,
    },
    Reshape {
        x: Var,
    },
    Crps {
        samples: Var,
        target: Var,
        pair_coef: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation. Nodes are appended in evaluation order, which is a
/// topological order by construction.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::layer_norm`]: the differentiable normalized output plus
/// the per-row statistics, which are returned as plain values.
#[derive(Clone, Debug)]
pub struct LayerNormOut {
    pub normalized: Var,
    pub mean: Tensor,
    pub var: Tensor,
}

/// Parameter handles of one local attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Gradients indexed by tape node.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    /// Gradient of `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor, zero-filled when `v` is disconnected.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::zeros(shape),
        }
    }
}

/// Offsets of the ±`window` neighbourhood on a ring of `ring` sites, each site
/// listed once. When the window wraps onto itself the whole ring is returned.
pub fn ring_window_offsets(window: usize, ring: usize) -> Vec<isize> {
    if 2 * window + 1 >= ring {
        (0..ring as isize).collect()
    } else {
        let w = window as isize;
        (-w..=w).collect()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn matrix_dims(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(contract(format!("{what}: expected rank-2 tensor, got shape {s:?}"))),
    }
}

/// C (m×n) = beta·C + A (m×k) · B (k×n) with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided views:
    // a spans (m-1)·rsa + (k-1)·csa, b spans (k-1)·rsb + (n-1)·csb, and c is a
    // dense row-major m×n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Splits a shape into (outer, axis length, inner) around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input (parameter or data) node.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `x·W + b` for `x: [n, d_in]`, `W: [d_in, d_out]`, `b: [d_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, d_in) = matrix_dims(self.value(x), "affine x")?;
        let (w_in, d_out) = matrix_dims(self.value(w), "affine W")?;
        if w_in != d_in {
            return Err(contract(format!(
                "affine: x has {d_in} columns but W has {w_in} rows"
            )));
        }
        let mut out = vec![0.0; n * d_out];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [d_out] {
                return Err(contract(format!(
                    "affine: bias shape {:?} != [{d_out}]",
                    bv.shape()
                )));
            }
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            n,
            d_in,
            d_out,
            self.value(x).data(),
            d_in,
            1,
            self.value(w).data(),
            d_out,
            1,
            1.0,
            &mut out,
        );
        Ok(self.push(Tensor::from_parts(vec![n, d_out], out), Op::Affine { x, w, b }))
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<LayerNormOut> {
        let (n, d) = matrix_dims(self.value(x), "layer_norm")?;
        if d == 0 {
            return Err(contract("layer_norm: rows must be non-empty"));
        }
        if eps <= 0.0 {
            return Err(contract("layer_norm: eps must be positive"));
        }
        let xs = self.value(x).data();
        let mut out = vec![0.0; n * d];
        let mut means = Vec::with_capacity(n);
        let mut vars = Vec::with_capacity(n);
        let mut inv_std = Vec::with_capacity(n);
        for (row, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            for (oj, xj) in o.iter_mut().zip(row) {
                *oj = (xj - mean) * is;
            }
            means.push(mean);
            vars.push(var);
            inv_std.push(is);
        }
        let normalized = self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::LayerNorm { x, inv_std },
        );
        Ok(LayerNormOut {
            normalized,
            mean: Tensor::vector(means),
            var: Tensor::vector(vars),
        })
    }

    /// `h·(1 + gamma) + beta` where `gamma, beta: [g, d]` and the `n` rows of
    /// `h` form `g` contiguous groups, each modulated by its own row of
    /// `gamma`/`beta`. With `g = 1` the modulation is shared by every row.
    pub fn cond_scale_shift(&mut self, h: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(h), "cond_scale_shift h")?;
        let gshape = self.value(gamma).shape().to_vec();
        let (g, gd) = match gshape.as_slice() {
            [gd] => (1, *gd),
            [g, gd] => (*g, *gd),
            s => return Err(contract(format!("cond_scale_shift: gamma shape {s:?}"))),
        };
        if gd != d || self.value(beta).shape() != gshape.as_slice() {
            return Err(contract(format!(
                "cond_scale_shift: h is [{n}, {d}], gamma {gshape:?}, beta {:?}",
                self.value(beta).shape()
            )));
        }
        if g == 0 || n % g != 0 {
            return Err(contract(format!(
                "cond_scale_shift: {n} rows cannot be split into {g} groups"
            )));
        }
        let per = n / g;
        let hv = self.value(h).data();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut out = vec![0.0; n * d];
        for (i, (o, hr)) in out.chunks_exact_mut(d).zip(hv.chunks_exact(d)).enumerate() {
            let grp = i / per;
            let gr = &gv[grp * d..(grp + 1) * d];
            let br = &bv[grp * d..(grp + 1) * d];
            for j in 0..d {
                o[j] = hr[j] * (1.0 + gr[j]) + br[j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::CondScaleShift { h, gamma, beta },
        ))
    }

    /// Tanh-form GELU, elementwise.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let tanh: Vec<f64> = xv
            .data()
            .iter()
            .map(|&v| (GELU_C * (v + GELU_A * v * v * v)).tanh())
            .collect();
        let data = xv
            .data()
            .iter()
            .zip(&tanh)
            .map(|(&v, t)| 0.5 * v * (1.0 + t))
            .collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::Gelu { x, tanh })
    }

    /// `|a - b|` elementwise; the subgradient at ties is zero.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "abs_diff")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::AbsDiff { a, b }))
    }

    /// Mean over `axis`, or over every element (giving a scalar) when `None`.
    pub fn reduce_mean(&mut self, x: Var, axis: Option<usize>) -> Result<Var> {
        let xv = self.value(x);
        let (shape, data) = match axis {
            None => {
                if xv.is_empty() {
                    return Err(contract("reduce_mean of an empty tensor"));
                }
                (Vec::new(), vec![xv.data().iter().sum::<f64>() / xv.len() as f64])
            }
            Some(ax) => {
                if ax >= xv.rank() {
                    return Err(contract(format!(
                        "reduce_mean: axis {ax} out of range for shape {:?}",
                        xv.shape()
                    )));
                }
                let (outer, len, inner) = split_axis(xv.shape(), ax);
                if len == 0 {
                    return Err(contract("reduce_mean over an empty axis"));
                }
                let mut out = vec![0.0; outer * inner];
                let src = xv.data();
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += src[base + i];
                        }
                    }
                }
                for v in &mut out {
                    *v /= len as f64;
                }
                let mut shape = xv.shape().to_vec();
                shape.remove(ax);
                (shape, out)
            }
        };
        Ok(self.push(Tensor::from_parts(shape, data), Op::ReduceMean { x, axis }))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| contract("concat of an empty list"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(contract(format!("concat: axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.value(v).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(contract(format!(
                    "concat: shape {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// For `x: [n, d]` whose rows form `n / ring` independent rings, returns
    /// `[n, |offsets|·d]` where row `k` holds, for each offset `o` in order,
    /// the features of site `(k + o) mod ring` of the same ring.
    pub fn gather_ring(&mut self, x: Var, ring: usize, offsets: &[isize]) -> Result<Var> {
        if offsets.is_empty() {
            return Err(contract("gather_ring: empty offset list"));
        }
        let (n, d) = matrix_dims(self.value(x), "gather_ring")?;
        if ring == 0 || n % ring != 0 {
            return Err(contract(format!(
                "gather_ring: {n} rows are not a whole number of rings of {ring}"
            )));
        }
        let offs: Vec<usize> = offsets
            .iter()
            .map(|&o| o.rem_euclid(ring as isize) as usize)
            .collect();
        let src = self.value(x).data();
        let width = offs.len() * d;
        let mut out = vec![0.0; n * width];
        for r in 0..n / ring {
            for k in 0..ring {
                let row = r * ring + k;
                for (j, &o) in offs.iter().enumerate() {
                    let from = r * ring + (k + o) % ring;
                    out[row * width + j * d..row * width + (j + 1) * d]
                        .copy_from_slice(&src[from * d..(from + 1) * d]);
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, width], out),
            Op::GatherRing {
                x,
                ring,
                offsets: offs,
            },
        ))
    }

    /// Multi-head dot-product attention restricted to ring neighbourhoods.
    /// `q, k, v: [n, d]` with rows forming rings of `ring` sites; each site
    /// attends to the sites at the given (distinct) offsets of its own ring.
    pub fn ring_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        ring: usize,
        heads: usize,
        offsets: &[isize],
    ) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(q), "ring_attention q")?;
        if self.value(k).shape() != [n, d] || self.value(v).shape() != [n, d] {
            return Err(contract("ring_attention: q, k, v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Config(format!(
                "attention width {d} is not divisible by {heads} heads"
            )));
        }
        if ring == 0 || n % ring != 0 {
            return Err(contract("ring_attention: rows are not whole rings"));
        }
        if offsets.is_empty() {
            return Err(contract("ring_attention: empty neighbourhood"));
        }
        let offs: Vec<usize> = offsets
            .iter()
            .map(|&o| o.rem_euclid(ring as isize) as usize)
            .collect();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let no = offs.len();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![0.0; n * d];
        let mut probs = vec![0.0; n * heads * no];
        let mut scores = vec![0.0; no];
        for row in 0..n {
            let r0 = row - row % ring;
            let site = row % ring;
            for h in 0..heads {
                let qh = &qv[row * d + h * dh..row * d + (h + 1) * dh];
                let mut max = f64::NEG_INFINITY;
                for (j, &o) in offs.iter().enumerate() {
                    let nb = r0 + (site + o) % ring;
                    let kh = &kv[nb * d + h * dh..nb * d + (h + 1) * dh];
                    let s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f64>() * scale;
                    scores[j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let p = &mut probs[(row * heads + h) * no..(row * heads + h + 1) * no];
                let oh = &mut out[row * d + h * dh..row * d + (h + 1) * dh];
                for (j, &o) in offs.iter().enumerate() {
                    p[j] = scores[j] / z;
                    let nb = r0 + (site + o) % ring;
                    let vh = &vv[nb * d + h * dh..nb * d + (h + 1) * dh];
                    for (oe, ve) in oh.iter_mut().zip(vh) {
                        *oe += p[j] * ve;
                    }
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, d], out),
            Op::Attention {
                q,
                k,
                v,
                ring,
                heads,
                offsets: offs,
                probs,
            },
        ))
    }

    /// Full local attention block: projections, ring attention within
    /// ±`window`, output projection.
    pub fn local_attention(
        &mut self,
        x: Var,
        ring: usize,
        window: usize,
        heads: usize,
        p: &AttentionVars,
    ) -> Result<Var> {
        if window == 0 {
            return Err(Config("attention window must be at least 1".into()));
        }
        let q = self.affine(x, p.wq, Some(p.bq))?;
        let k = self.affine(x, p.wk, Some(p.bk))?;
        let v = self.affine(x, p.wv, Some(p.bv))?;
        let offsets = ring_window_offsets(window, ring);
        let a = self.ring_attention(q, k, v, ring, heads, &offsets)?;
        self.affine(a, p.wo, Some(p.bo))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add { a, b }))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul { a, b }))
    }

    /// `scale·x + shift` with scalar constants.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| scale * v + shift).collect();
        let shape = xv.shape().to_vec();
        self.push(Tensor::from_parts(shape, data), Op::ScaleShift { x, scale })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Ensemble CRPS per column: `samples: [N, m]`, `target: [m]`, output
    /// `[m]`. `fair` selects the 1/(2N(N-1)) pair weight, otherwise 1/(2N²).
    pub fn crps(&mut self, samples: Var, target: Var, fair: bool) -> Result<Var> {
        let (n, m) = matrix_dims(self.value(samples), "crps samples")?;
        if self.value(target).shape() != [m] {
            return Err(contract(format!(
                "crps: target shape {:?} != [{m}]",
                self.value(target).shape()
            )));
        }
        let min_n = if fair { 2 } else { 1 };
        if n < min_n {
            return Err(contract(format!("crps: needs at least {min_n} samples, got {n}")));
        }
        let nf = n as f64;
        let pair_coef = if fair {
            1.0 / (2.0 * nf * (nf - 1.0))
        } else {
            1.0 / (2.0 * nf * nf)
        };
        let s = self.value(samples).data();
        let y = self.value(target).data();
        let mut out = vec![0.0; m];
        for (c, o) in out.iter_mut().enumerate() {
            let mut skill = 0.0;
            let mut spread = 0.0;
            for a in 0..n {
                let xa = s[a * m + c];
                skill += (xa - y[c]).abs();
                for b in 0..n {
                    spread += (xa - s[b * m + c]).abs();
                }
            }
            *o = skill / nf - pair_coef * spread;
        }
        Ok(self.push(
            Tensor::from_parts(vec![m], out),
            Op::Crps {
                samples,
                target,
                pair_coef,
            },
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(contract(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Gradients of a single-element output with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.value(out).len() != 1 {
            return Err(contract(format!(
                "backward needs a single-element output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        self.backward_with(out, Tensor::scalar(1.0).reshape(self.value(out).shape().to_vec())?)
    }

    /// Vector-Jacobian product: gradients of `<seed, out>`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Result<Grads> {
        if seed.shape() != self.value(out).shape() {
            return Err(contract("backward seed shape differs from output shape"));
        }
        let count = out.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; count];
        grads[out.0] = Some(seed.into_data());
        for i in (0..count).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes[..count]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Grads { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (n, d_in) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let d_out = self.value(*w).shape()[1];
                {
                    let wv = self.value(*w).data();
                    let dx = slot(grads, *x, n * d_in);
                    // dX += dY · Wᵀ
                    gemm(n, d_out, d_in, g, d_out, 1, wv, 1, d_out, 1.0, dx);
                }
                {
                    let xv = self.value(*x).data();
                    let dw = slot(grads, *w, d_in * d_out);
                    // dW += Xᵀ · dY
                    gemm(d_in, n, d_out, xv, 1, d_in, g, d_out, 1, 1.0, dw);
                }
                if let Some(b) = b {
                    let db = slot(grads, *b, d_out);
                    for row in g.chunks_exact(d_out) {
                        for (dbj, gj) in db.iter_mut().zip(row) {
                            *dbj += gj;
                        }
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let d = node.value.shape()[1];
                let xhat = node.value.data();
                let dx = slot(grads, *x, xhat.len());
                for (r, ((gr, xr), dr)) in g
                    .chunks_exact(d)
                    .zip(xhat.chunks_exact(d))
                    .zip(dx.chunks_exact_mut(d))
                    .enumerate()
                {
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dr[j] += inv_std[r] * (gr[j] - mean_g - xr[j] * mean_gx);
                    }
                }
            }
            Op::CondScaleShift { h, gamma, beta } => {
                let d = node.value.shape()[1];
                let n = node.value.shape()[0];
                let glen = self.value(*gamma).len();
                let groups = glen / d;
                let per = n / groups;
                let hv = self.value(*h).data();
                let gv = self.value(*gamma).data();
                {
                    let dh = slot(grads, *h, n * d);
                    for i in 0..n {
                        let grp = i / per;
                        for j in 0..d {
                            dh[i * d + j] += g[i * d + j] * (1.0 + gv[grp * d + j]);
                        }
                    }
                }
                {
                    let dg = slot(grads, *gamma, glen);
                    for i in 0..n {
                        let grp = i / per;
                        for j in 0..d {
                            dg[grp * d + j] += g[i * d + j] * hv[i * d + j];
                        }
                    }
                }
                {
                    let db = slot(grads, *beta, glen);
                    for i in 0..n {
                        let grp = i / per;
                        for j in 0..d {
                            db[grp * d + j] += g[i * d + j];
                        }
                    }
                }
            }
            Op::Gelu { x, tanh } => {
                let xv = self.value(*x).data();
                let dx = slot(grads, *x, xv.len());
                for (((d, &v), gi), &t) in dx.iter_mut().zip(xv).zip(g).zip(tanh) {
                    let du = GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    *d += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                }
            }
            Op::AbsDiff { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let s: Vec<f64> = av.iter().zip(bv).map(|(x, y)| sign(x - y)).collect();
                {
                    let da = slot(grads, *a, s.len());
                    for ((d, si), gi) in da.iter_mut().zip(&s).zip(g) {
                        *d += si * gi;
                    }
                }
                let db = slot(grads, *b, s.len());
                for ((d, si), gi) in db.iter_mut().zip(&s).zip(g) {
                    *d -= si * gi;
                }
            }
            Op::ReduceMean { x, axis } => {
                let shape = self.value(*x).shape().to_vec();
                let total = self.value(*x).len();
                let dx = slot(grads, *x, total);
                match axis {
                    None => {
                        let share = g[0] / total as f64;
                        for d in dx.iter_mut() {
                            *d += share;
                        }
                    }
                    Some(ax) => {
                        let (outer, len, inner) = split_axis(&shape, *ax);
                        for o in 0..outer {
                            for a in 0..len {
                                for i in 0..inner {
                                    dx[(o * len + a) * inner + i] += g[o * inner + i] / len as f64;
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { xs, axis } => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut start = 0;
                for &v in xs {
                    let len = self.value(v).shape()[*axis];
                    let chunk = len * inner;
                    let dv = slot(grads, v, outer * chunk);
                    for o in 0..outer {
                        let src = &g[(o * total + start) * inner..(o * total + start) * inner + chunk];
                        for (d, s) in dv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    start += len;
                }
            }
            Op::GatherRing { x, ring, offsets } => {
                let (n, d) = (self.value(*x).shape()[0], self.value(*x).shape()[1]);
                let width = offsets.len() * d;
                let dx = slot(grads, *x, n * d);
                for row in 0..n {
                    let r0 = row - row % ring;
                    let k = row % ring;
                    for (j, &o) in offsets.iter().enumerate() {
                        let from = r0 + (k + o) % ring;
                        let src = &g[row * width + j * d..row * width + (j + 1) * d];
                        for (dd, s) in dx[from * d..(from + 1) * d].iter_mut().zip(src) {
                            *dd += s;
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                ring,
                heads,
                offsets,
                probs,
            } => self.attention_backward(g, *q, *k, *v, *ring, *heads, offsets, probs, grads),
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    let dv = slot(grads, v, g.len());
                    for (d, gi) in dv.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                {
                    let da = slot(grads, *a, g.len());
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * y;
                    }
                }
                let db = slot(grads, *b, g.len());
                for ((d, gi), x) in db.iter_mut().zip(g).zip(av) {
                    *d += gi * x;
                }
            }
            Op::ScaleShift { x, scale } => {
                let dx = slot(grads, *x, g.len());
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += scale * gi;
                }
            }
            Op::Reshape { x } => {
                let dx = slot(grads, *x, g.len());
                for (d, gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            Op::Crps {
                samples,
                target,
                pair_coef,
            } => {
                let (n, m) = (
                    self.value(*samples).shape()[0],
                    self.value(*samples).shape()[1],
                );
                let s = self.value(*samples).data();
                let y = self.value(*target).data();
                let nf = n as f64;
                let mut dy = vec![0.0; m];
                {
                    let ds = slot(grads, *samples, n * m);
                    for c in 0..m {
                        for a in 0..n {
                            let xa = s[a * m + c];
                            let sk = sign(xa - y[c]);
                            let pair: f64 = (0..n).map(|b| sign(xa - s[b * m + c])).sum();
                            ds[a * m + c] += g[c] * (sk / nf - 2.0 * pair_coef * pair);
                            dy[c] -= g[c] * sk / nf;
                        }
                    }
                }
                let dt = slot(grads, *target, m);
                for (d, v) in dt.iter_mut().zip(dy) {
                    *d += v;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        ring: usize,
        heads: usize,
        offsets: &[usize],
        probs: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (n, d) = (self.value(q).shape()[0], self.value(q).shape()[1]);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let no = offsets.len();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; no];
        for row in 0..n {
            let r0 = row - row % ring;
            let site = row % ring;
            for h in 0..heads {
                let go = &g[row * d + h * dh..row * d + (h + 1) * dh];
                let p = &probs[(row * heads + h) * no..(row * heads + h + 1) * no];
                let mut dot = 0.0;
                for (j, &o) in offsets.iter().enumerate() {
                    let nb = r0 + (site + o) % ring;
                    let vh = &vv[nb * d + h * dh..nb * d + (h + 1) * dh];
                    dp[j] = go.iter().zip(vh).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    for (dve, ge) in dv[nb * d + h * dh..nb * d + (h + 1) * dh].iter_mut().zip(go) {
                        *dve += p[j] * ge;
                    }
                }
                for (j, &o) in offsets.iter().enumerate() {
                    let nb = r0 + (site + o) % ring;
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for e in 0..dh {
                        dq[row * d + h * dh + e] += ds * kv[nb * d + h * dh + e];
                        dk[nb * d + h * dh + e] += ds * qv[row * d + h * dh + e];
                    }
                }
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            let dst = slot(grads, var, n * d);
            for (a, b) in dst.iter_mut().zip(local) {
                *a += b;
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}
