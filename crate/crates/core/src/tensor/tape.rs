use std::cell::{Cell, RefCell};

use super::conv::{correlate, dot, scatter, weight_grad, Conv2dSpec, PlaneGeom};
use super::rng::SeedRng;
use super::{Float, Result, Tensor, TensorError};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

/// Batch-norm running statistics, updated in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Float> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn cast<U: Float>(&self) -> RunningStats<U> {
        RunningStats {
            mean: self.mean.iter().map(|v| U::of(v.as_f64())).collect(),
            var: self.var.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

enum Op<T> {
    Leaf,
    Identity(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Elu(Var, T),
    LogSoftmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Sum(Var),
    Mean(Var),
    Concat {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
        extents: Vec<usize>,
    },
    Narrow {
        x: Var,
        outer: usize,
        inner: usize,
        extent: usize,
        start: usize,
        len: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        spec: Conv2dSpec,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        spec: Conv2dSpec,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    Upsample {
        x: Var,
        k: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Gather {
        x: Var,
        index: Vec<usize>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a forward computation, consumed by a single [`Tape::backward`].
pub struct Tape<T: Float = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of every leaf that requires one.
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(|g| g.take())
    }
}

fn shape_err<V>(msg: String) -> Result<V> {
    Err(TensorError::Shape(msg))
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if self.consumed.get() {
            return Err(TensorError::Usage(
                "tape already consumed by backward; record a new forward pass".into(),
            ));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var { id })
    }

    fn leaf_node(&self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if self.consumed.get() {
            return Err(TensorError::Usage("tape already consumed by backward".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var { id })
    }

    /// Records a trainable input.
    pub fn leaf(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf_node(value, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var> {
        self.leaf_node(value, false)
    }

    pub fn value(&self, v: Var) -> Tensor<T> {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    /// First element of `v`, typically a scalar loss.
    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.id].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn binary(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let nodes = self.nodes.borrow();
        let (x, y) = (&nodes[a.id].value, &nodes[b.id].value);
        if x.shape() != y.shape() {
            return shape_err(format!("{name}: {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        self.nodes.borrow()[a.id].value.map(f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |p, q| p + q)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |p, q| p - q)?;
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |p, q| p * q)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.unary(a, |v| v * c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let out = self.unary(a, |v| v + c);
        self.push(out, Op::Identity(a), &[a])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let out = self.unary(a, |v| v.exp());
        self.push(out, Op::Exp(a), &[a])
    }

    /// `v` for `v > 0`, `alpha·(e^v − 1)` otherwise.
    pub fn elu(&self, a: Var, alpha: f64) -> Result<Var> {
        let al = T::of(alpha);
        let out = self.unary(a, |v| if v > T::zero() { v } else { al * (v.exp() - T::one()) });
        self.push(out, Op::Elu(a, al), &[a])
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let (out, outer, n, inner) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.id].value;
            if axis >= x.shape().len() {
                return Err(TensorError::Parameter(format!(
                    "log_softmax axis {axis} out of range for rank {}",
                    x.shape().len()
                )));
            }
            let (outer, n, inner) = axis_split(x.shape(), axis);
            let src = x.data();
            let mut out = vec![T::zero(); src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * n + j) * inner + i;
                    let mut m = T::neg_infinity();
                    for j in 0..n {
                        m = m.max(src[at(j)]);
                    }
                    let mut s = T::zero();
                    for j in 0..n {
                        s += (src[at(j)] - m).exp();
                    }
                    let lse = m + s.ln();
                    for j in 0..n {
                        out[at(j)] = src[at(j)] - lse;
                    }
                }
            }
            (Tensor::new(x.shape(), out)?, outer, n, inner)
        };
        self.push(
            out,
            Op::LogSoftmax {
                x: a,
                outer,
                n,
                inner,
            },
            &[a],
        )
    }

    /// Sum of all elements; accumulated in f64.
    pub fn sum(&self, a: Var) -> Result<Var> {
        let s = self.nodes.borrow()[a.id]
            .value
            .data()
            .iter()
            .map(|v| v.as_f64())
            .sum::<f64>();
        self.push(Tensor::scalar(T::of(s)), Op::Sum(a), &[a])
    }

    /// Mean of all elements; accumulated in f64.
    pub fn mean(&self, a: Var) -> Result<Var> {
        let m = {
            let nodes = self.nodes.borrow();
            let d = nodes[a.id].value.data();
            d.iter().map(|v| v.as_f64()).sum::<f64>() / d.len() as f64
        };
        self.push(Tensor::scalar(T::of(m)), Op::Mean(a), &[a])
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        self.push(out, Op::Identity(a), &[a])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let (out, outer, inner, extents) = {
            let nodes = self.nodes.borrow();
            let first = nodes[parts
                .first()
                .ok_or_else(|| TensorError::Parameter("concat of nothing".into()))?
                .id]
                .value
                .shape()
                .to_vec();
            if axis >= first.len() {
                return Err(TensorError::Parameter(format!("concat axis {axis} out of range")));
            }
            let mut extents = Vec::with_capacity(parts.len());
            for p in parts {
                let s = nodes[p.id].value.shape();
                if s.len() != first.len()
                    || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b)
                {
                    return shape_err(format!("concat: {s:?} incompatible with {first:?}"));
                }
                extents.push(s[axis]);
            }
            let (outer, _, inner) = axis_split(&first, axis);
            let total: usize = extents.iter().sum();
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for (p, &e) in parts.iter().zip(&extents) {
                    let d = nodes[p.id].value.data();
                    data.extend_from_slice(&d[o * e * inner..(o + 1) * e * inner]);
                }
            }
            let mut shape = first.clone();
            shape[axis] = total;
            (Tensor::new(&shape, data)?, outer, inner, extents)
        };
        self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                inner,
                extents,
            },
            parts,
        )
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let (out, outer, inner, extent) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.id].value;
            let s = x.shape();
            if axis >= s.len() || len == 0 || start + len > s[axis] {
                return shape_err(format!("narrow {start}+{len} on axis {axis} of {s:?}"));
            }
            let (outer, extent, inner) = axis_split(s, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                data.extend_from_slice(&x.data()[base..base + len * inner]);
            }
            let mut shape = s.to_vec();
            shape[axis] = len;
            (Tensor::new(&shape, data)?, outer, inner, extent)
        };
        self.push(
            out,
            Op::Narrow {
                x: a,
                outer,
                inner,
                extent,
                start,
                len,
            },
            &[a],
        )
    }

    /// `x[B,n] · w[n,m] + b[m]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, wv, bv) = (&nodes[x.id].value, &nodes[w.id].value, &nodes[b.id].value);
            let (xs, ws, bs) = (xv.shape(), wv.shape(), bv.shape());
            if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0]
            {
                return shape_err(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}"));
            }
            let (batch, n, m) = (xs[0], ws[0], ws[1]);
            let mut out = Vec::with_capacity(batch * m);
            for i in 0..batch {
                let mut row = bv.data().to_vec();
                for k in 0..n {
                    let a = xv.data()[i * n + k];
                    if a != T::zero() {
                        for (r, &wk) in row.iter_mut().zip(&wv.data()[k * m..(k + 1) * m]) {
                            *r += a * wk;
                        }
                    }
                }
                out.extend(row);
            }
            Tensor::new(&[batch, m], out)?
        };
        self.push(out, Op::Linear { x, w, b }, &[x, w, b])
    }

    fn conv_shapes(
        &self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        spec: &Conv2dSpec,
        transposed: bool,
    ) -> Result<(Vec<usize>, PlaneGeom)> {
        let (xs, ws) = (x.shape(), w.shape());
        let name = if transposed { "conv_transpose2d" } else { "conv2d" };
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(format!("{name}: x {xs:?}, w {ws:?} must be rank 4"));
        }
        let g = spec.groups;
        if g == 0 {
            return Err(TensorError::Parameter(format!("{name}: groups must be >= 1")));
        }
        let (batch, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw) = (ws[2], ws[3]);
        let (cout, ho, wo) = if !transposed {
            if cin % g != 0 || ws[0] % g != 0 || ws[1] != cin / g {
                return shape_err(format!("{name}: x {xs:?}, w {ws:?}, groups {g}"));
            }
            let (ho, wo) = spec.conv_out(h, wd, kh, kw)?;
            (ws[0], ho, wo)
        } else {
            if cin % g != 0 || ws[0] != cin {
                return shape_err(format!("{name}: x {xs:?}, w {ws:?}, groups {g}"));
            }
            let (ho, wo) = spec.conv_transpose_out(h, wd, kh, kw)?;
            (ws[1] * g, ho, wo)
        };
        // geometry of the underlying forward correlation: "in" is the larger side
        let (hi, wi, ho2, wo2) = if transposed { (ho, wo, h, wd) } else { (h, wd, ho, wo) };
        let geom = PlaneGeom {
            hi,
            wi,
            ho: ho2,
            wo: wo2,
            kh,
            kw,
            sh: spec.stride.0,
            sw: spec.stride.1,
            pt: spec.padding.top,
            pl: spec.padding.left,
        };
        Ok((vec![batch, cout, ho, wo], geom))
    }

    /// Grouped 2-D cross-correlation. `w` is `[Cout, Cin/groups, kh, kw]`.
    pub fn conv2d(&self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, wv) = (&nodes[x.id].value, &nodes[w.id].value);
            let (oshape, geom) = self.conv_shapes(xv, wv, &spec, false)?;
            let (batch, cin) = (xv.shape()[0], xv.shape()[1]);
            let cout = oshape[1];
            let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
            let (in_plane, out_plane, k_plane) = (geom.hi * geom.wi, geom.ho * geom.wo, geom.kh * geom.kw);
            let mut out = vec![T::zero(); batch * cout * out_plane];
            for b in 0..batch {
                for oc in 0..cout {
                    let grp = oc / cout_g;
                    let dst = &mut out[(b * cout + oc) * out_plane..(b * cout + oc + 1) * out_plane];
                    for icg in 0..cin_g {
                        let ic = grp * cin_g + icg;
                        let src = &xv.data()[(b * cin + ic) * in_plane..(b * cin + ic + 1) * in_plane];
                        let k = &wv.data()[(oc * cin_g + icg) * k_plane..(oc * cin_g + icg + 1) * k_plane];
                        correlate(src, dst, k, &geom);
                    }
                }
            }
            Tensor::new(&oshape, out)?
        };
        self.push(out, Op::Conv { x, w, spec }, &[x, w])
    }

    /// Adjoint of [`Tape::conv2d`]. `w` is `[Cin, Cout/groups, kh, kw]`.
    pub fn conv_transpose2d(&self, x: Var, w: Var, spec: Conv2dSpec) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let (xv, wv) = (&nodes[x.id].value, &nodes[w.id].value);
            let (oshape, geom) = self.conv_shapes(xv, wv, &spec, true)?;
            let (batch, cin) = (xv.shape()[0], xv.shape()[1]);
            let cout = oshape[1];
            let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
            let (small, big, k_plane) = (geom.ho * geom.wo, geom.hi * geom.wi, geom.kh * geom.kw);
            let mut out = vec![T::zero(); batch * cout * big];
            for b in 0..batch {
                for ic in 0..cin {
                    let grp = ic / cin_g;
                    let src = &xv.data()[(b * cin + ic) * small..(b * cin + ic + 1) * small];
                    for ocg in 0..cout_g {
                        let oc = grp * cout_g + ocg;
                        let dst = &mut out[(b * cout + oc) * big..(b * cout + oc + 1) * big];
                        let k = &wv.data()[(ic * cout_g + ocg) * k_plane..(ic * cout_g + ocg + 1) * k_plane];
                        scatter(src, dst, k, &geom);
                    }
                }
            }
            Tensor::new(&oshape, out)?
        };
        self.push(out, Op::ConvTranspose { x, w, spec }, &[x, w])
    }

    /// Non-overlapping mean pooling with a `(1, k)` window over the last axis.
    pub fn avg_pool2d(&self, x: Var, kernel: (usize, usize)) -> Result<Var> {
        let (kh, k) = kernel;
        if kh != 1 || k == 0 {
            return Err(TensorError::Parameter(format!(
                "avg_pool2d supports (1, k) windows with k >= 1, got {kernel:?}"
            )));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let s = xv.shape();
            let w = *s.last().unwrap();
            if !w.is_multiple_of(k) {
                return shape_err(format!("avg_pool2d: width {w} not divisible by {k}"));
            }
            let inv = T::of(1.0 / k as f64);
            let data = xv
                .data()
                .chunks_exact(k)
                .map(|c| c.iter().fold(T::zero(), |a, &v| a + v) * inv)
                .collect();
            let mut shape = s.to_vec();
            *shape.last_mut().unwrap() = w / k;
            Tensor::new(&shape, data)?
        };
        self.push(out, Op::AvgPool { x, k }, &[x])
    }

    /// Nearest-neighbour upsampling by `(1, k)` over the last axis.
    pub fn upsample_nearest(&self, x: Var, factor: (usize, usize)) -> Result<Var> {
        let (kh, k) = factor;
        if kh != 1 || k < 1 {
            return Err(TensorError::Parameter(format!(
                "upsample_nearest supports (1, k) factors with k >= 1, got {factor:?}"
            )));
        }
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let mut data = Vec::with_capacity(xv.len() * k);
            for &v in xv.data() {
                data.extend(std::iter::repeat_n(v, k));
            }
            let mut shape = xv.shape().to_vec();
            *shape.last_mut().unwrap() *= k;
            Tensor::new(&shape, data)?
        };
        self.push(out, Op::Upsample { x, k }, &[x])
    }

    /// Batch normalization over every axis except 1 (channels).
    ///
    /// Training mode uses the biased batch variance and folds the batch
    /// statistics into `stats` with the given momentum.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        training: bool,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let (out, xhat, inv_std) = {
            let nodes = self.nodes.borrow();
            let (xv, gv, bv) = (&nodes[x.id].value, &nodes[gamma.id].value, &nodes[beta.id].value);
            let s = xv.shape();
            if s.len() < 2 {
                return shape_err(format!("batch_norm2d: input {s:?} needs a channel axis"));
            }
            let (batch, c) = (s[0], s[1]);
            let spatial: usize = s[2..].iter().product();
            if gv.shape() != [c] || bv.shape() != [c] || stats.channels() != c {
                return shape_err(format!(
                    "batch_norm2d: {c} channels vs gamma {:?}, beta {:?}, stats {}",
                    gv.shape(),
                    bv.shape(),
                    stats.channels()
                ));
            }
            let src = xv.data();
            let count = (batch * spatial) as f64;
            let mut inv_std = vec![T::zero(); c];
            let mut mean = vec![T::zero(); c];
            for ch in 0..c {
                let (m, v) = if training {
                    let mut sum = 0.0f64;
                    for b in 0..batch {
                        let base = (b * c + ch) * spatial;
                        sum += src[base..base + spatial].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let m = sum / count;
                    let mut sq = 0.0f64;
                    for b in 0..batch {
                        let base = (b * c + ch) * spatial;
                        sq += src[base..base + spatial]
                            .iter()
                            .map(|v| (v.as_f64() - m).powi(2))
                            .sum::<f64>();
                    }
                    let v = sq / count;
                    let mo = momentum;
                    stats.mean[ch] = T::of((1.0 - mo) * stats.mean[ch].as_f64() + mo * m);
                    stats.var[ch] = T::of((1.0 - mo) * stats.var[ch].as_f64() + mo * v);
                    (m, v)
                } else {
                    (stats.mean[ch].as_f64(), stats.var[ch].as_f64())
                };
                mean[ch] = T::of(m);
                inv_std[ch] = T::of(1.0 / (v + eps).sqrt());
            }
            let mut xhat = vec![T::zero(); src.len()];
            let mut out = vec![T::zero(); src.len()];
            for b in 0..batch {
                for ch in 0..c {
                    let base = (b * c + ch) * spatial;
                    let (m, is, g, be) = (mean[ch], inv_std[ch], gv.data()[ch], bv.data()[ch]);
                    for i in base..base + spatial {
                        let h = (src[i] - m) * is;
                        xhat[i] = h;
                        out[i] = g * h + be;
                    }
                }
            }
            (Tensor::new(s, out)?, xhat, inv_std)
        };
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; inference is the identity.
    pub fn dropout(&self, x: Var, p: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Parameter(format!("dropout p must be in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            let out = self.value(x);
            return self.push(out, Op::Identity(x), &[x]);
        }
        let (out, mask) = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let keep = T::of(1.0 / (1.0 - p));
            let mut rng = SeedRng::new(seed);
            let mask: Vec<T> = (0..xv.len())
                .map(|_| if rng.uniform() < p { T::zero() } else { keep })
                .collect();
            let data = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            (Tensor::new(xv.shape(), data)?, mask)
        };
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// `out[b] = x[b, index[b]]` for a `[B, C]` input.
    pub fn gather(&self, x: Var, index: &[usize]) -> Result<Var> {
        let out = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.id].value;
            let s = xv.shape();
            if s.len() != 2 || s[0] != index.len() {
                return shape_err(format!("gather: {s:?} with {} indices", index.len()));
            }
            if let Some(&bad) = index.iter().find(|&&i| i >= s[1]) {
                return Err(TensorError::Parameter(format!(
                    "gather index {bad} out of range for {} columns",
                    s[1]
                )));
            }
            let data = index
                .iter()
                .enumerate()
                .map(|(b, &i)| xv.data()[b * s[1] + i])
                .collect();
            Tensor::new(&[index.len()], data)?
        };
        self.push(
            out,
            Op::Gather {
                x,
                index: index.to_vec(),
            },
            &[x],
        )
    }

    /// Reverse sweep from a scalar `loss`. The tape cannot be reused afterwards.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed.replace(true) {
            return Err(TensorError::Usage("backward already run on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        if loss.id >= nodes.len() {
            return Err(TensorError::Usage("loss does not belong to this tape".into()));
        }
        if nodes[loss.id].value.len() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut sink = Sink {
                nodes: &nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(Tensor::new(node.value.shape(), g)?);
                }
                Op::Identity(a) => sink.add(*a, &g),
                Op::Add(a, b) => {
                    sink.add(*a, &g);
                    sink.add(*b, &g);
                }
                Op::Sub(a, b) => {
                    sink.add(*a, &g);
                    if let Some(d) = sink.slot(*b) {
                        for (d, &v) in d.iter_mut().zip(&g) {
                            *d -= v;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.id].value.data(), nodes[b.id].value.data());
                    if let Some(d) = sink.slot(*a) {
                        for ((d, &v), &o) in d.iter_mut().zip(&g).zip(bv) {
                            *d += v * o;
                        }
                    }
                    if let Some(d) = sink.slot(*b) {
                        for ((d, &v), &o) in d.iter_mut().zip(&g).zip(av) {
                            *d += v * o;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if let Some(d) = sink.slot(*a) {
                        for (d, &v) in d.iter_mut().zip(&g) {
                            *d += *c * v;
                        }
                    }
                }
                Op::Exp(a) => {
                    let out = node.value.data();
                    if let Some(d) = sink.slot(*a) {
                        for ((d, &v), &o) in d.iter_mut().zip(&g).zip(out) {
                            *d += v * o;
                        }
                    }
                }
                Op::Elu(a, alpha) => {
                    let (xv, out) = (nodes[a.id].value.data(), node.value.data());
                    if let Some(d) = sink.slot(*a) {
                        for i in 0..d.len() {
                            let slope = if xv[i] > T::zero() { T::one() } else { out[i] + *alpha };
                            d[i] += g[i] * slope;
                        }
                    }
                }
                Op::LogSoftmax { x, outer, n, inner } => {
                    let out = node.value.data();
                    let (outer, n, inner) = (*outer, *n, *inner);
                    if let Some(d) = sink.slot(*x) {
                        for o in 0..outer {
                            for i in 0..inner {
                                let at = |j: usize| (o * n + j) * inner + i;
                                let mut gs = T::zero();
                                for j in 0..n {
                                    gs += g[at(j)];
                                }
                                for j in 0..n {
                                    d[at(j)] += g[at(j)] - out[at(j)].exp() * gs;
                                }
                            }
                        }
                    }
                }
                Op::Sum(a) => {
                    if let Some(d) = sink.slot(*a) {
                        for v in d.iter_mut() {
                            *v += g[0];
                        }
                    }
                }
                Op::Mean(a) => {
                    if let Some(d) = sink.slot(*a) {
                        let s = g[0] / T::of(d.len() as f64);
                        for v in d.iter_mut() {
                            *v += s;
                        }
                    }
                }
                Op::Concat {
                    parts,
                    outer,
                    inner,
                    extents,
                } => {
                    let total: usize = extents.iter().sum();
                    let mut offset = 0;
                    for (p, &e) in parts.iter().zip(extents) {
                        if let Some(d) = sink.slot(*p) {
                            for o in 0..*outer {
                                let src = (o * total + offset) * inner;
                                add_into(
                                    &mut d[o * e * inner..(o + 1) * e * inner],
                                    &g[src..src + e * inner],
                                );
                            }
                        }
                        offset += e;
                    }
                }
                Op::Narrow {
                    x,
                    outer,
                    inner,
                    extent,
                    start,
                    len,
                } => {
                    if let Some(d) = sink.slot(*x) {
                        for o in 0..*outer {
                            let dst = (o * extent + start) * inner;
                            add_into(
                                &mut d[dst..dst + len * inner],
                                &g[o * len * inner..(o + 1) * len * inner],
                            );
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (&nodes[x.id].value, &nodes[w.id].value);
                    let (batch, n, m) = (xv.shape()[0], wv.shape()[0], wv.shape()[1]);
                    if let Some(d) = sink.slot(*b) {
                        for row in g.chunks_exact(m) {
                            add_into(d, row);
                        }
                    }
                    if let Some(d) = sink.slot(*w) {
                        for i in 0..batch {
                            let grow = &g[i * m..(i + 1) * m];
                            for k in 0..n {
                                let a = xv.data()[i * n + k];
                                for (dv, &gv) in d[k * m..(k + 1) * m].iter_mut().zip(grow) {
                                    *dv += a * gv;
                                }
                            }
                        }
                    }
                    if let Some(d) = sink.slot(*x) {
                        for i in 0..batch {
                            let grow = &g[i * m..(i + 1) * m];
                            for k in 0..n {
                                d[i * n + k] += dot(grow, &wv.data()[k * m..(k + 1) * m]);
                            }
                        }
                    }
                }
                Op::Conv { x, w, spec } => {
                    let (xv, wv) = (&nodes[x.id].value, &nodes[w.id].value);
                    let (_, geom) = self.conv_shapes(xv, wv, spec, false)?;
                    let (batch, cin) = (xv.shape()[0], xv.shape()[1]);
                    let cout = node.value.shape()[1];
                    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
                    let (inp, outp, kp) = (geom.hi * geom.wi, geom.ho * geom.wo, geom.kh * geom.kw);
                    if let Some(d) = sink.slot(*x) {
                        for b in 0..batch {
                            for oc in 0..cout {
                                let grp = oc / cout_g;
                                let go = &g[(b * cout + oc) * outp..(b * cout + oc + 1) * outp];
                                for icg in 0..cin_g {
                                    let ic = grp * cin_g + icg;
                                    let k = &wv.data()[(oc * cin_g + icg) * kp..(oc * cin_g + icg + 1) * kp];
                                    scatter(go, &mut d[(b * cin + ic) * inp..(b * cin + ic + 1) * inp], k, &geom);
                                }
                            }
                        }
                    }
                    if let Some(d) = sink.slot(*w) {
                        for b in 0..batch {
                            for oc in 0..cout {
                                let grp = oc / cout_g;
                                let go = &g[(b * cout + oc) * outp..(b * cout + oc + 1) * outp];
                                for icg in 0..cin_g {
                                    let ic = grp * cin_g + icg;
                                    let src = &xv.data()[(b * cin + ic) * inp..(b * cin + ic + 1) * inp];
                                    weight_grad(go, src, &mut d[(oc * cin_g + icg) * kp..(oc * cin_g + icg + 1) * kp], &geom);
                                }
                            }
                        }
                    }
                }
                Op::ConvTranspose { x, w, spec } => {
                    let (xv, wv) = (&nodes[x.id].value, &nodes[w.id].value);
                    let (_, geom) = self.conv_shapes(xv, wv, spec, true)?;
                    let (batch, cin) = (xv.shape()[0], xv.shape()[1]);
                    let cout = node.value.shape()[1];
                    let (cin_g, cout_g) = (cin / spec.groups, cout / spec.groups);
                    let (small, big, kp) = (geom.ho * geom.wo, geom.hi * geom.wi, geom.kh * geom.kw);
                    if let Some(d) = sink.slot(*x) {
                        for b in 0..batch {
                            for ic in 0..cin {
                                let grp = ic / cin_g;
                                let dst = &mut d[(b * cin + ic) * small..(b * cin + ic + 1) * small];
                                for ocg in 0..cout_g {
                                    let oc = grp * cout_g + ocg;
                                    let go = &g[(b * cout + oc) * big..(b * cout + oc + 1) * big];
                                    let k = &wv.data()[(ic * cout_g + ocg) * kp..(ic * cout_g + ocg + 1) * kp];
                                    correlate(go, dst, k, &geom);
                                }
                            }
                        }
                    }
                    if let Some(d) = sink.slot(*w) {
                        for b in 0..batch {
                            for ic in 0..cin {
                                let grp = ic / cin_g;
                                let src = &xv.data()[(b * cin + ic) * small..(b * cin + ic + 1) * small];
                                for ocg in 0..cout_g {
                                    let oc = grp * cout_g + ocg;
                                    let go = &g[(b * cout + oc) * big..(b * cout + oc + 1) * big];
                                    weight_grad(src, go, &mut d[(ic * cout_g + ocg) * kp..(ic * cout_g + ocg + 1) * kp], &geom);
                                }
                            }
                        }
                    }
                }
                Op::AvgPool { x, k } => {
                    let inv = T::of(1.0 / *k as f64);
                    if let Some(d) = sink.slot(*x) {
                        for (chunk, &gv) in d.chunks_exact_mut(*k).zip(&g) {
                            for v in chunk {
                                *v += gv * inv;
                            }
                        }
                    }
                }
                Op::Upsample { x, k } => {
                    if let Some(d) = sink.slot(*x) {
                        for (v, chunk) in d.iter_mut().zip(g.chunks_exact(*k)) {
                            *v += chunk.iter().fold(T::zero(), |a, &c| a + c);
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    training,
                } => {
                    let s = nodes[x.id].value.shape();
                    let (batch, c) = (s[0], s[1]);
                    let spatial: usize = s[2..].iter().product();
                    let gam = nodes[gamma.id].value.data();
                    let mut sum_g = vec![0.0f64; c];
                    let mut sum_gx = vec![0.0f64; c];
                    for b in 0..batch {
                        for ch in 0..c {
                            let base = (b * c + ch) * spatial;
                            for i in base..base + spatial {
                                sum_g[ch] += g[i].as_f64();
                                sum_gx[ch] += (g[i] * xhat[i]).as_f64();
                            }
                        }
                    }
                    if let Some(d) = sink.slot(*gamma) {
                        for ch in 0..c {
                            d[ch] += T::of(sum_gx[ch]);
                        }
                    }
                    if let Some(d) = sink.slot(*beta) {
                        for ch in 0..c {
                            d[ch] += T::of(sum_g[ch]);
                        }
                    }
                    if let Some(d) = sink.slot(*x) {
                        let count = (batch * spatial) as f64;
                        for b in 0..batch {
                            for ch in 0..c {
                                let base = (b * c + ch) * spatial;
                                let scale = gam[ch] * inv_std[ch];
                                if *training {
                                    let mg = T::of(sum_g[ch] / count);
                                    let mgx = T::of(sum_gx[ch] / count);
                                    for i in base..base + spatial {
                                        d[i] += scale * (g[i] - mg - xhat[i] * mgx);
                                    }
                                } else {
                                    for i in base..base + spatial {
                                        d[i] += scale * g[i];
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if let Some(d) = sink.slot(*x) {
                        for ((d, &v), &m) in d.iter_mut().zip(&g).zip(mask) {
                            *d += v * m;
                        }
                    }
                }
                Op::Gather { x, index } => {
                    let cols = nodes[x.id].value.shape()[1];
                    if let Some(d) = sink.slot(*x) {
                        for (b, &i) in index.iter().enumerate() {
                            d[b * cols + i] += g[b];
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Accumulates gradient contributions into per-node buffers.
struct Sink<'a, T: Float> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Float> Sink<'_, T> {
    /// Zero-initialized buffer for `v`, or `None` when `v` needs no gradient.
    fn slot(&mut self, v: Var) -> Option<&mut Vec<T>> {
        let node = &self.nodes[v.id];
        if !node.requires_grad {
            return None;
        }
        Some(self.grads[v.id].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn add(&mut self, v: Var, g: &[T]) {
        if let Some(d) = self.slot(v) {
            add_into(d, g);
        }
    }
}
