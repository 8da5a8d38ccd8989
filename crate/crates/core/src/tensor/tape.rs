use rand::Rng;

use super::kernels;
use super::{real, Real, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias(Var, Var),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        inner: usize,
        axis_len: usize,
        start: usize,
        len: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Sum(Var),
    SmoothL1(Var, Var),
    Mse(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Bce {
        logits: Var,
        targets: Vec<T>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
        cols: Vec<T>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    StraightThrough(Var),
    MulConst {
        x: Var,
        c: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended in execution order, so inputs always precede the ops
/// that consume them and a single reverse sweep visits every op once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    attention_pairs: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::from_parts(self.shapes[v.0].clone(), g.clone()))
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes[v.0].clone();
        self.grads[v.0].take().map(|g| Tensor::from_parts(shape, g))
    }
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            attention_pairs: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds `pairs` query-key pairs to the attention accounting counter.
    pub fn note_attention_pairs(&mut self, pairs: u64) {
        self.attention_pairs += pairs;
    }

    pub fn attention_pairs(&self) -> u64 {
        self.attention_pairs
    }

    /// Leaf node whose gradient is tracked.
    pub fn var(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    /// Leaf node that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    fn push_leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Copy of `x` cut off from the gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.constant(v)
    }

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return shape_err("matmul", format!("inner extents {k} vs {k2}"));
        }
        self.matmul_impl(a, b, 1, m, k, n, false, vec![m, n])
    }

    /// Batched `a[B×m×k] · b[B×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, m, k) = self.value(a).dims3()?;
        let (bb, k2, n) = self.value(b).dims3()?;
        if ba != bb || k != k2 {
            return shape_err("bmm", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        self.matmul_impl(a, b, ba, m, k, n, false, vec![ba, m, n])
    }

    /// Batched `a[B×m×k] · b[B×n×k]ᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, m, k) = self.value(a).dims3()?;
        let (bb, n, k2) = self.value(b).dims3()?;
        if ba != bb || k != k2 {
            return shape_err("bmm_nt", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        self.matmul_impl(a, b, ba, m, k, n, true, vec![ba, m, n])
    }

    #[allow(clippy::too_many_arguments)]
    fn matmul_impl(
        &mut self,
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
        shape: Vec<usize>,
    ) -> Result<Var> {
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let aa = &av[bi * m * k..(bi + 1) * m * k];
            let bb = &bv[bi * k * n..(bi + 1) * k * n];
            let oo = &mut out[bi * m * n..(bi + 1) * m * n];
            if trans_b {
                kernels::matmul_nt(aa, bb, m, k, n, oo);
            } else {
                kernels::matmul_nn(aa, bb, m, k, n, oo);
            }
        }
        let op = Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            trans_b,
        };
        self.push("matmul", Tensor::from_parts(shape, out), op, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return shape_err("transpose", "expected rank 2");
        }
        self.permute(x, &[1, 0])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(name, Tensor::from_parts(shape, out), op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let c: T = real(c);
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", Tensor::from_parts(shape, out), Op::Scale(x, c), &[x])
    }

    /// Adds the vector `b[n]` to every row of `x[..×n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(b) != [n] {
            return shape_err("add_bias", format!("{:?} vs bias {:?}", self.shape(x), self.shape(b)));
        }
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &v) in row.iter_mut().zip(bv) {
                *o += v;
            }
        }
        let shape = self.shape(x).to_vec();
        self.push("add_bias", Tensor::from_parts(shape, out), Op::AddBias(x, b), &[x, b])
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(name, Tensor::from_parts(shape, out), op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary("gelu", x, kernels::gelu, Op::Gelu(x))
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().unwrap();
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return shape_err("layer_norm", "gamma/beta must match the last axis");
        }
        let eps: T = real(eps);
        let nf: T = real(n as f64);
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / n;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + bt[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        self.push("layer_norm", Tensor::from_parts(shape, out), op, &[x, gamma, beta])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, false)
    }

    /// Softmax over the last axis of `x[..×lq×lk]` with a causal mask: query
    /// `i` sees keys `j <= i + (lk - lq)`, which covers both full sequences
    /// (`lq == lk`) and cached decoding (queries are the newest positions).
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let lk = *shape.last().unwrap();
        let lq = if causal {
            if shape.len() < 2 {
                return shape_err("causal_softmax", "needs rank >= 2");
            }
            let lq = shape[shape.len() - 2];
            if lq > lk {
                return shape_err("causal_softmax", format!("{lq} queries over {lk} keys"));
            }
            lq
        } else {
            1
        };
        let mut out = vec![T::zero(); self.value(x).len()];
        kernels::softmax_rows(self.value(x).data(), lq, lk, causal, &mut out);
        self.push("softmax", Tensor::from_parts(shape, out), Op::Softmax(x), &[x])
    }

    /// Gathers rows of `table[V×d]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (rows, d) = self.value(table).dims2()?;
        if indices.is_empty() {
            return shape_err("embedding", "no indices");
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, size: rows });
            }
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let op = Op::Embedding {
            table,
            indices: indices.to_vec(),
        };
        self.push("embedding", Tensor::from_parts(vec![indices.len(), d], out), op, &[table])
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} for rank {}", base.len()));
        }
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().zip(&base).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, base));
            }
            lens.push(s[axis]);
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&lens) {
                let d = self.value(v).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            outer,
            inner,
            lens,
        };
        self.push("concat", Tensor::from_parts(shape, out), op, inputs)
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return shape_err("slice", format!("{start}+{len} on axis {axis} of {shape:?}"));
        }
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * axis_len + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut s = shape;
        s[axis] = len;
        let op = Op::Slice {
            x,
            outer,
            inner,
            axis_len,
            start,
            len,
        };
        self.push("slice", Tensor::from_parts(s, out), op, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return shape_err("permute", format!("bad permutation {perm:?} for {shape:?}"));
        }
        let mut out = vec![T::zero(); self.value(x).len()];
        kernels::permute(self.value(x).data(), &shape, perm, &mut out, false);
        let out_shape = kernels::permuted_shape(&shape, perm);
        let op = Op::Permute {
            x,
            perm: perm.to_vec(),
        };
        self.push("permute", Tensor::from_parts(out_shape, out), op, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Mean smooth-L1 (Huber with transition 1.0) between `a` and `b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("smooth_l1", self.value(a), self.value(b))?;
        let half: T = real(0.5);
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y).abs();
                if d < T::one() {
                    half * d * d
                } else {
                    d - half
                }
            })
            .sum();
        let n: T = real(self.value(a).len() as f64);
        self.push("smooth_l1", Tensor::scalar(total / n), Op::SmoothL1(a, b), &[a, b])
    }

    /// Mean squared error between `a` and `b`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mse", self.value(a), self.value(b))?;
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let n: T = real(self.value(a).len() as f64);
        self.push("mse", Tensor::scalar(total / n), Op::Mse(a, b), &[a, b])
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of `logits[m×K]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, k) = self.value(logits).dims2()?;
        if targets.len() != m {
            return shape_err("cross_entropy", format!("{m} rows, {} targets", targets.len()));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); m * k];
        let mut total = T::zero();
        for r in 0..m {
            let t = targets[r];
            if t >= k {
                return Err(Error::IndexOutOfRange { index: t, size: k });
            }
            let row = &lv[r * k..(r + 1) * k];
            let lse = kernels::logsumexp(row);
            total += lse - row[t];
            for j in 0..k {
                probs[r * k + j] = (row[j] - lse).exp();
            }
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", Tensor::scalar(total), op, &[logits])
    }

    /// Summed binary cross-entropy of `targets` (in `[0, 1]`) under `sigmoid(logits)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let lv = self.value(logits).data();
        if targets.len() != lv.len() {
            return shape_err("bce_with_logits", format!("{} logits, {} targets", lv.len(), targets.len()));
        }
        let targets: Vec<T> = targets.iter().map(|&y| real(y)).collect();
        let total: T = lv
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| kernels::softplus(x) - y * x)
            .sum();
        let op = Op::Bce { logits, targets };
        self.push("bce_with_logits", Tensor::scalar(total), op, &[logits])
    }

    /// 1-D cross-correlation of `x[C_in×T]` with `w[C_out×C_in×k]` plus optional bias `b[C_out]`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        if stride == 0 || dilation == 0 {
            return invalid("conv1d stride and dilation must be >= 1");
        }
        let (cin, t) = self.value(x).dims2()?;
        let (cout, cin2, k) = self.value(w).dims3()?;
        if cin != cin2 {
            return shape_err("conv1d", format!("input has {cin} channels, kernel expects {cin2}"));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return shape_err("conv1d", "bias must have C_out entries");
            }
        }
        let span = dilation * (k - 1) + 1;
        if t + 2 * padding < span {
            return shape_err("conv1d", format!("output length < 1 (T={t}, span={span}, padding={padding})"));
        }
        let t_out = (t + 2 * padding - span) / stride + 1;
        let mut cols = vec![T::zero(); cin * k * t_out];
        kernels::im2col(self.value(x).data(), cin, t, k, stride, dilation, padding, t_out, &mut cols);
        let mut out = vec![T::zero(); cout * t_out];
        if let Some(b) = b {
            for (o, &bv) in self.value(b).data().iter().enumerate() {
                out[o * t_out..(o + 1) * t_out].fill(bv);
            }
        }
        kernels::matmul_nn(self.value(w).data(), &cols, cout, cin * k, t_out, &mut out);
        let op = Op::Conv1d {
            x,
            w,
            b,
            stride,
            dilation,
            padding,
            cols,
        };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv1d", Tensor::from_parts(vec![cout, t_out], out), op, &inputs)
    }

    /// Repeats every frame of `x[C×T]` `factor` times along time.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return invalid("upsample factor must be >= 1");
        }
        let (c, t) = self.value(x).dims2()?;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(c * t * factor);
        for ch in 0..c {
            for &v in &xv[ch * t..(ch + 1) * t] {
                for _ in 0..factor {
                    out.push(v);
                }
            }
        }
        let op = Op::Upsample { x, factor };
        self.push("upsample_nearest", Tensor::from_parts(vec![c, t * factor], out), op, &[x])
    }

    /// Forward value is `quantized`; the backward pass hands the incoming
    /// gradient to `z` unchanged.
    pub fn straight_through(&mut self, z: Var, quantized: &Tensor<T>) -> Result<Var> {
        same_shape("straight_through", self.value(z), quantized)?;
        self.push("straight_through", quantized.clone(), Op::StraightThrough(z), &[z])
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var> {
        same_shape("mul_const", self.value(x), &c)?;
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .zip(c.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_const", Tensor::from_parts(shape, out), Op::MulConst { x, c }, &[x])
    }

    /// Inverted dropout: zeroes entries with probability `rate` and rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return invalid("dropout rate must be < 1");
        }
        let keep: T = real(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mask = Tensor::from_parts(self.shape(x).to_vec(), mask);
        self.mul_const(x, mask)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr, |$buf:ident| $body:block) => {
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    let $buf: &mut Vec<T> = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                    $body
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                trans_b,
            } => {
                let (av, bv) = (val(a), val(b));
                acc!(a, |da| {
                    for bi in 0..batch {
                        let gg = &g[bi * m * n..(bi + 1) * m * n];
                        let bb = &bv[bi * k * n..(bi + 1) * k * n];
                        let dd = &mut da[bi * m * k..(bi + 1) * m * k];
                        if trans_b {
                            // out = a·bᵀ with b[n×k]: da = g·b
                            kernels::matmul_nn(gg, bb, m, n, k, dd);
                        } else {
                            kernels::matmul_nt(gg, bb, m, n, k, dd);
                        }
                    }
                });
                acc!(b, |db| {
                    for bi in 0..batch {
                        let gg = &g[bi * m * n..(bi + 1) * m * n];
                        let aa = &av[bi * m * k..(bi + 1) * m * k];
                        let dd = &mut db[bi * k * n..(bi + 1) * k * n];
                        if trans_b {
                            // db[n×k] = gᵀ·a
                            kernels::matmul_tn(gg, aa, m, n, k, dd);
                        } else {
                            kernels::matmul_tn(aa, gg, m, k, n, dd);
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc!(a, |da| {
                    add_into(da, g);
                });
                acc!(b, |db| {
                    add_into(db, g);
                });
            }
            &Op::Sub(a, b) => {
                acc!(a, |da| {
                    add_into(da, g);
                });
                acc!(b, |db| {
                    for (d, &gv) in db.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc!(a, |da| {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                acc!(b, |db| {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            &Op::Scale(x, c) => {
                acc!(x, |dx| {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                });
            }
            &Op::AddBias(x, b) => {
                acc!(x, |dx| {
                    add_into(dx, g);
                });
                acc!(b, |db| {
                    let n = db.len();
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Relu(x) => {
                let xv = val(x);
                acc!(x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            &Op::Gelu(x) => {
                let xv = val(x);
                acc!(x, |dx| {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(xv) {
                        *d += gv * kernels::gelu_grad(v);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = val(*gamma);
                let n = gam.len();
                let nf: T = real(n as f64);
                acc!(*gamma, |dg| {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc!(*beta, |db| {
                    for grow in g.chunks(n) {
                        add_into(db, grow);
                    }
                });
                acc!(*x, |dx| {
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..n {
                            let dh = grow[j] * gam[j];
                            m1 += dh;
                            m2 += dh * hrow[j];
                        }
                        m1 /= nf;
                        m2 /= nf;
                        let rs = rstd[r];
                        for j in 0..n {
                            let dh = grow[j] * gam[j];
                            dx[r * n + j] += rs * (dh - m1 - hrow[j] * m2);
                        }
                    }
                });
            }
            &Op::Softmax(x) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                acc!(x, |dx| {
                    for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            drow[j] += yrow[j] * (grow[j] - s);
                        }
                    }
                });
            }
            Op::Embedding { table, indices } => {
                let d = node.value.shape()[1];
                acc!(*table, |dt| {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dt[i * d..(i + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                inner,
                lens,
            } => {
                let total: usize = lens.iter().sum();
                let mut offset = 0;
                for (&v, &len) in inputs.iter().zip(lens) {
                    acc!(v, |dv| {
                        for o in 0..*outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut dv[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice {
                x,
                outer,
                inner,
                axis_len,
                start,
                len,
            } => {
                acc!(x, |dx| {
                    for o in 0..outer {
                        let base = (o * axis_len + start) * inner;
                        add_into(&mut dx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            &Op::Reshape(x) => {
                acc!(x, |dx| {
                    add_into(dx, g);
                });
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let out_shape = node.value.shape().to_vec();
                acc!(*x, |dx| {
                    kernels::permute(g, &out_shape, &inv, dx, true);
                });
            }
            &Op::Sum(x) => {
                acc!(x, |dx| {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            &Op::SmoothL1(a, b) => {
                let (av, bv) = (val(a), val(b));
                let scale = g[0] / real::<T>(av.len() as f64);
                let dloss = |x: T, y: T| {
                    let d = x - y;
                    if d.abs() < T::one() {
                        d
                    } else {
                        d.signum()
                    }
                };
                acc!(a, |da| {
                    for ((dd, &x), &y) in da.iter_mut().zip(av).zip(bv) {
                        *dd += scale * dloss(x, y);
                    }
                });
                acc!(b, |db| {
                    for ((dd, &x), &y) in db.iter_mut().zip(av).zip(bv) {
                        *dd -= scale * dloss(x, y);
                    }
                });
            }
            &Op::Mse(a, b) => {
                let (av, bv) = (val(a), val(b));
                let scale = real::<T>(2.0) * g[0] / real::<T>(av.len() as f64);
                acc!(a, |da| {
                    for ((dd, &x), &y) in da.iter_mut().zip(av).zip(bv) {
                        *dd += scale * (x - y);
                    }
                });
                acc!(b, |db| {
                    for ((dd, &x), &y) in db.iter_mut().zip(av).zip(bv) {
                        *dd -= scale * (x - y);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = probs.len() / targets.len();
                acc!(*logits, |dl| {
                    for (d, &p) in dl.iter_mut().zip(probs) {
                        *d += g[0] * p;
                    }
                    for (r, &t) in targets.iter().enumerate() {
                        dl[r * k + t] -= g[0];
                    }
                });
            }
            Op::Bce { logits, targets } => {
                let lv = val(*logits);
                acc!(*logits, |dl| {
                    for ((d, &x), &y) in dl.iter_mut().zip(lv).zip(targets) {
                        *d += g[0] * (kernels::sigmoid(x) - y);
                    }
                });
            }
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                dilation,
                padding,
                cols,
            } => {
                let (cout, t_out) = (node.value.shape()[0], node.value.shape()[1]);
                let wshape = nodes[w.0].value.shape();
                let (cin, k) = (wshape[1], wshape[2]);
                let t = nodes[x.0].value.shape()[1];
                acc!(*w, |dw| {
                    kernels::matmul_nt(g, cols, cout, t_out, cin * k, dw);
                });
                if let Some(b) = *b {
                    acc!(b, |db| {
                        for (o, d) in db.iter_mut().enumerate() {
                            *d += g[o * t_out..(o + 1) * t_out].iter().copied().sum::<T>();
                        }
                    });
                }
                acc!(*x, |dx| {
                    let mut dcols = vec![T::zero(); cin * k * t_out];
                    kernels::matmul_tn(val(*w), g, cout, cin * k, t_out, &mut dcols);
                    kernels::col2im(&dcols, cin, t, k, *stride, *dilation, *padding, t_out, dx);
                });
            }
            &Op::Upsample { x, factor } => {
                acc!(x, |dx| {
                    for (d, chunk) in dx.iter_mut().zip(g.chunks(factor)) {
                        *d += chunk.iter().copied().sum::<T>();
                    }
                });
            }
            &Op::StraightThrough(z) => {
                acc!(z, |dz| {
                    add_into(dz, g);
                });
            }
            Op::MulConst { x, c } => {
                acc!(*x, |dx| {
                    for ((d, &gv), &cv) in dx.iter_mut().zip(g).zip(c.data()) {
                        *d += gv * cv;
                    }
                });
            }
        }
    }
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
