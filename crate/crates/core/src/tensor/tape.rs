use super::dense::strides_of;
use super::{Scalar, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    /// `b` is either the same shape as `a` or a trailing suffix of it.
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: T },
    MatMul { a: usize, b: usize },
    Bmm { a: usize, b: usize, trans_b: bool },
    Permute { a: usize, axes: Vec<usize> },
    Reshape { a: usize },
    Slice { a: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    BroadcastTo { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    Softmax { a: usize },
    LogSoftmax { a: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<T>, rstd: Vec<T> },
    Gelu { a: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Define-by-run reverse-mode tape.
///
/// Every operation appends one node whose inputs are already on the tape, so
/// recording order is a topological order. [`Tape::backward`] walks the nodes
/// in exact reverse recording order. Build a fresh tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Gradient buffer for `idx`, or `None` when that node does not take gradients.
fn slot<'a, T: Scalar>(
    fresh: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    idx: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(fresh[idx].get_or_insert_with(|| vec![T::zero(); len]))
}

/// Visits `(output offset, input offset)` pairs of a strided gather in
/// row-major output order.
fn for_each_gather(out_shape: &[usize], in_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let total: usize = out_shape.iter().product();
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    let mut counter = vec![0usize; rank];
    let mut in_off = 0usize;
    for out_off in 0..total {
        f(out_off, in_off);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            in_off += in_strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            in_off -= in_strides[ax] * out_shape[ax];
            counter[ax] = 0;
        }
    }
}

fn softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - max).exp();
        sum += *o;
    }
    let inv = T::one() / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

fn gelu_value<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    x * half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let half = T::from_f64(0.5);
    let cdf = half * (T::one() + (x * T::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
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

    /// Accumulated gradient of the last [`backward`](Self::backward) calls.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad shape"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !sa.ends_with(sb) {
            return Err(shape_err("add", sa, sb));
        }
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let m = vb.len();
        let data: Vec<T> = va.iter().enumerate().map(|(i, &x)| x + vb[i % m]).collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "sub", |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip_same(a, b, "mul", |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl Fn(usize, usize) -> Op<T>,
    ) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(name, sa, sb));
        }
        let data = self.nodes[a.0]
            .value
            .data()
            .iter()
            .zip(self.nodes[b.0].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(sa.to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, op(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let src = &self.nodes[a.0].value;
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|&x| x * factor).collect(),
        )
        .expect("same shape");
        let rg = self.rg(a.0);
        self.push(value, Op::Scale { a: a.0, factor }, rg)
    }

    /// `[..., m, k] · [k, n] -> [..., m, n]`; leading extents of `a` are folded.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m: usize = sa[..sa.len() - 1].iter().product();
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.nodes[a.0].value.data(),
            (k as isize, 1),
            self.nodes[b.0].value.data(),
            (n as isize, 1),
            &mut out,
            (n as isize, 1),
            false,
        );
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::MatMul { a: a.0, b: b.0 }, rg))
    }

    /// Batched product over matching leading extents. With `trans_b` the
    /// right operand is `[..., n, k]` and is used transposed.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let r = sa.len();
        if r < 3 || sb.len() != r || sa[..r - 2] != sb[..r - 2] {
            return Err(shape_err("bmm", sa, sb));
        }
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b {
            (sb[r - 1], sb[r - 2])
        } else {
            (sb[r - 2], sb[r - 1])
        };
        if k != kb {
            return Err(shape_err("bmm", sa, sb));
        }
        let batch: usize = sa[..r - 2].iter().product();
        let mut out_shape = sa[..r - 2].to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        let da = self.nodes[a.0].value.data();
        let db = self.nodes[b.0].value.data();
        let b_strides = if trans_b {
            (1, k as isize)
        } else {
            (n as isize, 1)
        };
        for i in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                (k as isize, 1),
                &db[i * k * n..(i + 1) * k * n],
                b_strides,
                &mut out[i * m * n..(i + 1) * m * n],
                (n as isize, 1),
                false,
            );
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(
            value,
            Op::Bmm {
                a: a.0,
                b: b.0,
                trans_b,
            },
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(shape_err("transpose", self.shape(a), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(a, &axes)
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if axes.len() != sa.len() || axes.iter().any(|&x| x >= sa.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(shape_err("permute", &sa, axes));
        }
        let in_strides = strides_of(&sa);
        let out_shape: Vec<usize> = axes.iter().map(|&x| sa[x]).collect();
        let gather: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
        let src = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); src.len()];
        for_each_gather(&out_shape, &gather, |o, i| out[o] = src[i]);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a.0);
        Ok(self.push(
            value,
            Op::Permute {
                a: a.0,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.nodes[a.0].value.clone().reshaped(shape.to_vec())?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Reshape { a: a.0 }, rg))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        if axis >= sa.len() || start + len > sa[axis] {
            return Err(shape_err("slice", &sa, &[axis, start, len]));
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let src = self.nodes[a.0].value.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * sa[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = sa.clone();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Slice { a: a.0, axis, start }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(shape_err("concat", &s0, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != s0.len()
                || s.iter().zip(&s0).enumerate().any(|(i, (x, y))| i != axis && x != y)
            {
                return Err(shape_err("concat", &s0, s));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let ext = self.shape(*v)[axis];
                let src = self.nodes[v.0].value.data();
                out.extend_from_slice(&src[o * ext * inner..(o + 1) * ext * inner]);
            }
        }
        let mut out_shape = s0;
        out_shape[axis] = total;
        let value = Tensor::new(out_shape, out)?;
        let rg = inputs.iter().any(|v| self.rg(v.0));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.iter().map(|v| v.0).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Right-aligned broadcast: missing leading axes and unit axes expand.
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let gather = self.broadcast_strides(a, shape)?;
        let src = self.nodes[a.0].value.data();
        let mut out = vec![T::zero(); shape.iter().product()];
        for_each_gather(shape, &gather, |o, i| out[o] = src[i]);
        let value = Tensor::new(shape.to_vec(), out)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::BroadcastTo { a: a.0 }, rg))
    }

    fn broadcast_strides(&self, a: Var, shape: &[usize]) -> Result<Vec<usize>, TensorError> {
        let sa = self.shape(a);
        if sa.len() > shape.len() {
            return Err(shape_err("broadcast_to", sa, shape));
        }
        let in_strides = strides_of(sa);
        let lead = shape.len() - sa.len();
        let mut gather = vec![0usize; shape.len()];
        for (i, &d) in sa.iter().enumerate() {
            let target = shape[lead + i];
            if d == target {
                gather[lead + i] = in_strides[i];
            } else if d != 1 {
                return Err(shape_err("broadcast_to", sa, shape));
            }
        }
        Ok(gather)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.nodes[a.0].value.data().iter().copied().sum();
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.nodes[a.0].value.data();
        let s: T = src.iter().copied().sum::<T>() / T::from_f64(src.len() as f64);
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(s), Op::Mean { a: a.0 }, rg)
    }

    fn rows_of(&self, a: Var, op: &'static str) -> Result<usize, TensorError> {
        let sa = self.shape(a);
        match sa.last() {
            Some(&n) if n >= 1 => Ok(n),
            _ => Err(shape_err(op, sa, &[])),
        }
    }

    /// Numerically stable softmax over the trailing axis.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.rows_of(a, "softmax_rows")?;
        let src = &self.nodes[a.0].value;
        if !src.all_finite() {
            return Err(TensorError::Numeric {
                op: "softmax_rows",
                detail: "non-finite input".into(),
            });
        }
        let mut out = vec![T::zero(); src.len()];
        for (row, o) in src.data().chunks(n).zip(out.chunks_mut(n)) {
            softmax_row(row, o);
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::Softmax { a: a.0 }, rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let n = self.rows_of(a, "log_softmax_rows")?;
        let src = &self.nodes[a.0].value;
        if !src.all_finite() {
            return Err(TensorError::Numeric {
                op: "log_softmax_rows",
                detail: "non-finite input".into(),
            });
        }
        let mut out = vec![T::zero(); src.len()];
        for (row, o) in src.data().chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
            for (oo, &x) in o.iter_mut().zip(row) {
                *oo = x - lse;
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.rg(a.0);
        Ok(self.push(value, Op::LogSoftmax { a: a.0 }, rg))
    }

    /// Per-row normalization over the trailing axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let d = self.rows_of(x, "layer_norm")?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let src = self.nodes[x.0].value.data();
        let g = self.nodes[gain.0].value.data();
        let b = self.nodes[bias.0].value.data();
        let rows = src.len() / d;
        let eps = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let src = &self.nodes[a.0].value;
        let value = Tensor::new(
            src.shape().to_vec(),
            src.data().iter().map(|&x| gelu_value(x)).collect(),
        )
        .expect("same shape");
        let rg = self.rg(a.0);
        self.push(value, Op::Gelu { a: a.0 }, rg)
    }

    /// Propagates `d loss / d node` to every node that requires gradients.
    ///
    /// Gradients accumulate across calls until [`zero_grad`](Self::zero_grad).
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let root = loss.0;
        if root >= self.nodes.len() {
            return Err(TensorError::Contract(format!("var {root} is not on this tape")));
        }
        if self.nodes[root].value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        if !self.nodes[root].requires_grad {
            return Ok(());
        }
        let mut fresh: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        fresh[root] = Some(vec![T::one()]);
        for idx in (0..=root).rev() {
            let Some(g) = fresh[idx].take() else { continue };
            self.propagate(idx, &g, &mut fresh);
            let node = &mut self.nodes[idx];
            match node.grad.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], fresh: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let node = &nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = slot(fresh, nodes, *b) {
                    let m = gb.len();
                    for chunk in g.chunks(m) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub { a, b } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = slot(fresh, nodes, *b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if let Some(ga) = slot(fresh, nodes, *a) {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
                if let Some(gb) = slot(fresh, nodes, *b) {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * va[i];
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y * *factor);
                }
            }
            Op::MatMul { a, b } => {
                let sb = nodes[*b].value.shape();
                let (k, n) = (sb[0], sb[1]);
                let m = nodes[*a].value.len() / k;
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if let Some(ga) = slot(fresh, nodes, *a) {
                    // ga[m,k] += g[m,n] · bᵀ
                    T::gemm(m, n, k, g, (n as isize, 1), vb, (1, n as isize), ga, (k as isize, 1), true);
                }
                if let Some(gb) = slot(fresh, nodes, *b) {
                    // gb[k,n] += aᵀ · g
                    T::gemm(k, m, n, va, (1, k as isize), g, (n as isize, 1), gb, (n as isize, 1), true);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let sa = nodes[*a].value.shape();
                let r = sa.len();
                let (m, k) = (sa[r - 2], sa[r - 1]);
                let n = node.value.shape()[r - 1];
                let batch = nodes[*a].value.len() / (m * k);
                let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                if let Some(ga) = slot(fresh, nodes, *a) {
                    // ga = g · bᵀ (or g · b when b is stored transposed)
                    let b_strides = if *trans_b {
                        (k as isize, 1)
                    } else {
                        (1, n as isize)
                    };
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..(i + 1) * m * n],
                            (n as isize, 1),
                            &vb[i * k * n..(i + 1) * k * n],
                            b_strides,
                            &mut ga[i * m * k..(i + 1) * m * k],
                            (k as isize, 1),
                            true,
                        );
                    }
                }
                if let Some(gb) = slot(fresh, nodes, *b) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &va[i * m * k..(i + 1) * m * k];
                        let out = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // gb[n,k] += gᵀ · a
                            T::gemm(n, m, k, gi, (1, n as isize), ai, (k as isize, 1), out, (k as isize, 1), true);
                        } else {
                            // gb[k,n] += aᵀ · g
                            T::gemm(k, m, n, ai, (1, k as isize), gi, (n as isize, 1), out, (n as isize, 1), true);
                        }
                    }
                }
            }
            Op::Permute { a, axes } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    let in_strides = strides_of(nodes[*a].value.shape());
                    let gather: Vec<usize> = axes.iter().map(|&x| in_strides[x]).collect();
                    for_each_gather(node.value.shape(), &gather, |o, i| ga[i] += g[o]);
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
            }
            Op::Slice { a, axis, start } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    let sa = nodes[*a].value.shape();
                    let len = node.value.shape()[*axis];
                    let outer: usize = sa[..*axis].iter().product();
                    let inner: usize = sa[*axis + 1..].iter().product();
                    for o in 0..outer {
                        let base = (o * sa[*axis] + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        ga[base..base + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let s0 = node.value.shape();
                let total = s0[*axis];
                let outer: usize = s0[..*axis].iter().product();
                let inner: usize = s0[*axis + 1..].iter().product();
                let mut offset = 0;
                for &inp in inputs {
                    let ext = nodes[inp].value.shape()[*axis];
                    if let Some(gi) = slot(fresh, nodes, inp) {
                        for o in 0..outer {
                            let src_base = (o * total + offset) * inner;
                            let src = &g[src_base..src_base + ext * inner];
                            gi[o * ext * inner..(o + 1) * ext * inner]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, &y)| *x += y);
                        }
                    }
                    offset += ext;
                }
            }
            Op::BroadcastTo { a } => {
                let gather = self
                    .broadcast_strides(Var(*a), node.value.shape())
                    .expect("validated at record time");
                if let Some(ga) = slot(fresh, nodes, *a) {
                    for_each_gather(node.value.shape(), &gather, |o, i| ga[i] += g[o]);
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean { a } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    let s = g[0] / T::from_f64(ga.len() as f64);
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Softmax { a } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    let n = *node.value.shape().last().expect("rank >= 1");
                    let y = node.value.data();
                    for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..n {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { a } => {
                if let Some(ga) = slot(fresh, nodes, *a) {
                    let n = *node.value.shape().last().expect("rank >= 1");
                    let y = node.value.data();
                    for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                        let gs: T = gr.iter().copied().sum();
                        for j in 0..n {
                            out[j] += gr[j] - yr[j].exp() * gs;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().expect("rank >= 1");
                let rows = rstd.len();
                let gv = nodes[*gain].value.data();
                if let Some(gx) = slot(fresh, nodes, *x) {
                    let inv_d = T::from_f64(1.0 / d as f64);
                    let mut gh = vec![T::zero(); d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_gh = T::zero();
                        let mut mean_ghh = T::zero();
                        for j in 0..d {
                            gh[j] = gr[j] * gv[j];
                            mean_gh += gh[j];
                            mean_ghh += gh[j] * hr[j];
                        }
                        mean_gh *= inv_d;
                        mean_ghh *= inv_d;
                        for j in 0..d {
                            gx[r * d + j] += rstd[r] * (gh[j] - mean_gh - hr[j] * mean_ghh);
                        }
                    }
                }
                if let Some(gg) = slot(fresh, nodes, *gain) {
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(gb) = slot(fresh, nodes, *bias) {
                    for r in 0..rows {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                let xs = nodes[*a].value.data();
                if let Some(ga) = slot(fresh, nodes, *a) {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * gelu_derivative(xs[i]);
                    }
                }
            }
        }
    }
}
