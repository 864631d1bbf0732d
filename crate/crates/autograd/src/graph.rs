//! Tape of tensor operations with reverse-mode differentiation.

use crate::conv::{self, ConvGeom, UpGeom};
use crate::{GraphError, Result, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    UpConv { x: Var, w: Var, b: Option<Var>, geom: UpGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Clamp { x: Var, lo: T, hi: T },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    AvgPool2(Var),
    BroadcastSpatial(Var),
    SpaceToDepth { x: Var, factor: usize },
    SegmentSum { x: Var, counts: Vec<usize> },
    Sum(Var),
    Mean(Var),
    MeanSpatial(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records every operation applied to its variables so gradients of a scalar
/// can be pulled back to the leaves.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, expected: &[usize], got: &[usize]) -> GraphError {
    GraphError::ShapeMismatch { op, expected: expected.to_vec(), got: got.to_vec() }
}

/// Shape `[N, C, rest..]` split into `(N, C, prod(rest))`.
fn channel_split(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(GraphError::Rank { op, expected: 2, got: shape.to_vec() });
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
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

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D convolution. `x: [N,C,H,W]`, `w: [O,C,k,k]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (o, wc, kh, kw) = self.value(w).dims4()?;
        if wc != c || kh != kw {
            return Err(mismatch("conv2d", &[o, c, kh, kh], self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("conv2d bias", &[o], self.shape(b)));
            }
        }
        let geom = ConvGeom::new(n, c, h, wd, o, kh, stride, pad)
            .ok_or_else(|| GraphError::Invalid(format!("conv2d: kernel {kh} stride {stride} pad {pad} on {h}x{wd}")))?;
        let data = conv::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::from_vec(&[n, o, geom.ho, geom.wo], data)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Transposed convolution with kernel = stride = `factor`.
    /// `x: [N,C,H,W]`, `w: [C,O,f,f]`, output `[N,O,H·f,W·f]`.
    pub fn upconv(&mut self, x: Var, w: Var, b: Option<Var>, factor: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4()?;
        let (wc, o, kh, kw) = self.value(w).dims4()?;
        if wc != c || kh != factor || kw != factor {
            return Err(mismatch("upconv", &[c, o, factor, factor], self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(mismatch("upconv bias", &[o], self.shape(b)));
            }
        }
        let geom = UpGeom { n, c, h, w: wd, o, f: factor };
        let data = conv::upconv_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::from_vec(&[n, o, h * factor, wd * factor], data)?;
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(value, Op::UpConv { x, w, b, geom }, rg))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let v = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// `x + c` for a scalar constant `c`.
    pub fn offset(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), |v| v.exp())
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), |v| v.ln())
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    /// Concatenation along dimension 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(GraphError::Empty("concat"))?;
        let (n, _, inner) = channel_split("concat", self.shape(first))?;
        let rest = self.shape(first)[2..].to_vec();
        let mut total_c = 0;
        for &p in parts {
            let (pn, pc, pi) = channel_split("concat", self.shape(p))?;
            if pn != n || pi != inner || self.shape(p)[2..] != rest[..] {
                return Err(mismatch("concat", self.shape(first), self.shape(p)));
            }
            total_c += pc;
        }
        let mut data = Vec::with_capacity(n * total_c * inner);
        for ni in 0..n {
            for &p in parts {
                let t = self.value(p);
                let c = t.shape()[1];
                data.extend_from_slice(&t.data()[ni * c * inner..(ni + 1) * c * inner]);
            }
        }
        let mut shape = vec![n, total_c];
        shape.extend_from_slice(&rest);
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Channels `start..start+len` along dimension 1.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, inner) = channel_split("slice", self.shape(x))?;
        if start + len > c || len == 0 {
            return Err(GraphError::Invalid(format!("slice {start}..{} of {c} channels", start + len)));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * inner);
        for ni in 0..n {
            data.extend_from_slice(&src[(ni * c + start) * inner..(ni * c + start + len) * inner]);
        }
        let mut shape = self.shape(x).to_vec();
        shape[1] = len;
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::Slice { x, start, len }, rg))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GraphError::Invalid(format!("avg_pool2 on odd extent {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); n * c * ho * wo];
        for (plane, dst) in data.chunks_mut(ho * wo).enumerate() {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            for i in 0..ho {
                for j in 0..wo {
                    dst[i * wo + j] = (s[2 * i * w + 2 * j] + s[2 * i * w + 2 * j + 1] + s[(2 * i + 1) * w + 2 * j] + s[(2 * i + 1) * w + 2 * j + 1]) * quarter;
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, ho, wo], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::AvgPool2(x), rg))
    }

    /// `[N, C]` → `[N, C, h, w]` by repeating every entry over the grid.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c) = match self.shape(x) {
            &[n, c] => (n, c),
            s => return Err(GraphError::Rank { op: "broadcast_spatial", expected: 2, got: s.to_vec() }),
        };
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for &v in src {
            data.extend(std::iter::repeat(v).take(h * w));
        }
        let value = Tensor::from_vec(&[n, c, h, w], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::BroadcastSpatial(x), rg))
    }

    /// Rearranges `f×f` spatial blocks into channels:
    /// `out[n, c·f² + a·f + b, i, j] = x[n, c, i·f + a, j·f + b]`.
    pub fn space_to_depth(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(GraphError::Invalid(format!("space_to_depth factor {factor} on {h}x{w}")));
        }
        let (ho, wo) = (h / factor, w / factor);
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len()];
        for (idx, &v) in src.iter().enumerate() {
            let (oc, y, xx) = s2d_index(idx, c, h, w, factor);
            let ni = idx / (c * h * w);
            data[((ni * c * factor * factor + oc) * ho + y) * wo + xx] = v;
        }
        let value = Tensor::from_vec(&[n, c * factor * factor, ho, wo], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SpaceToDepth { x, factor }, rg))
    }

    /// Sums consecutive runs of the leading dimension: run `g` has
    /// `counts[g]` entries. Empty runs produce zeros.
    pub fn segment_sum(&mut self, x: Var, counts: &[usize]) -> Result<Var> {
        let total: usize = counts.iter().sum();
        let t = self.value(x);
        if t.batch() != total || t.shape().is_empty() {
            return Err(GraphError::Invalid(format!("segment_sum: counts sum {total} but batch {}", t.batch())));
        }
        let inner = t.inner_len();
        let mut data = vec![T::zero(); counts.len() * inner];
        let mut row = 0;
        for (gi, &cnt) in counts.iter().enumerate() {
            let dst = &mut data[gi * inner..(gi + 1) * inner];
            for _ in 0..cnt {
                for (d, &s) in dst.iter_mut().zip(&t.data()[row * inner..(row + 1) * inner]) {
                    *d += s;
                }
                row += 1;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = counts.len();
        let value = Tensor::from_vec(&shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::SegmentSum { x, counts: counts.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / T::from_usize(t.len()).unwrap());
        let rg = self.requires_grad(x);
        self.push(v, Op::Mean(x), rg)
    }

    /// `[N, C, H, W]` → `[N, C]` averaging over the spatial grid.
    pub fn mean_spatial(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let denom = T::from_usize(h * w).unwrap();
        let data = self.value(x).data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / denom).collect();
        let value = Tensor::from_vec(&[n, c], data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(value, Op::MeanSpatial(x), rg))
    }

    /// Gradients of the scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        self.backward_blocked(root, &[])
    }

    /// Like [`Graph::backward`], but gradient reaching any node in `blocked`
    /// is recorded there and not propagated further towards the leaves.
    pub fn backward_blocked(&self, root: Var, blocked: &[Var]) -> Result<Gradients<T>> {
        if self.value(root).len() != 1 {
            return Err(GraphError::Invalid(format!("backward from non-scalar of shape {:?}", self.shape(root))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        let mut stop = vec![false; self.nodes.len()];
        for b in blocked {
            stop[b.0] = true;
        }
        for i in (0..=root.0).rev() {
            if stop[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let want = (self.requires_grad(*x), self.requires_grad(*w), b.is_some_and(|b| self.requires_grad(b)));
                let r = conv::conv2d_backward(self.value(*x).data(), self.value(*w).data(), gd, geom, want);
                self.acc_vec(grads, *x, r.dx);
                self.acc_vec(grads, *w, r.dw);
                if let Some(b) = b {
                    self.acc_vec(grads, *b, r.db);
                }
            }
            Op::UpConv { x, w, b, geom } => {
                let want = (self.requires_grad(*x), self.requires_grad(*w), b.is_some_and(|b| self.requires_grad(b)));
                let r = conv::upconv_backward(self.value(*x).data(), self.value(*w).data(), gd, geom, want);
                self.acc_vec(grads, *x, r.dx);
                self.acc_vec(grads, *w, r.dw);
                if let Some(b) = b {
                    self.acc_vec(grads, *b, r.db);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |k| gd[k]);
                self.acc_map(grads, *b, |k| gd[k]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |k| gd[k]);
                self.acc_map(grads, *b, |k| -gd[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, |k| gd[k] * vb[k]);
                self.acc_map(grads, *b, |k| gd[k] * va[k]);
            }
            Op::Scale(x, c) => self.acc_map(grads, *x, |k| gd[k] * *c),
            Op::Offset(x) => self.acc_map(grads, *x, |k| gd[k]),
            Op::Square(x) => {
                let vx = self.value(*x).data();
                let two = T::lit(2.0);
                self.acc_map(grads, *x, |k| gd[k] * two * vx[k]);
            }
            Op::Sigmoid(x) => self.acc_map(grads, *x, |k| gd[k] * y[k] * (T::one() - y[k])),
            Op::Tanh(x) => self.acc_map(grads, *x, |k| gd[k] * (T::one() - y[k] * y[k])),
            Op::Relu(x) => self.acc_map(grads, *x, |k| if y[k] > T::zero() { gd[k] } else { T::zero() }),
            Op::Exp(x) => self.acc_map(grads, *x, |k| gd[k] * y[k]),
            Op::Log(x) => {
                let vx = self.value(*x).data();
                self.acc_map(grads, *x, |k| gd[k] / vx[k]);
            }
            Op::Clamp { x, lo, hi } => {
                let vx = self.value(*x).data();
                self.acc_map(grads, *x, |k| if vx[k] >= *lo && vx[k] <= *hi { gd[k] } else { T::zero() });
            }
            Op::Concat(parts) => {
                let (n, total_c, inner) = channel_split("concat", node.value.shape()).expect("checked on creation");
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.requires_grad(p) {
                        let dst = slot(grads, p, self.shape(p));
                        for ni in 0..n {
                            let src = &gd[(ni * total_c + offset) * inner..(ni * total_c + offset + c) * inner];
                            for (d, &s) in dst.data_mut()[ni * c * inner..(ni + 1) * c * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::Slice { x, start, len } => {
                if self.requires_grad(*x) {
                    let (n, c, inner) = channel_split("slice", self.shape(*x)).expect("checked on creation");
                    let dst = slot(grads, *x, self.shape(*x));
                    for ni in 0..n {
                        let d = &mut dst.data_mut()[(ni * c + start) * inner..(ni * c + start + len) * inner];
                        for (d, &s) in d.iter_mut().zip(&gd[ni * len * inner..(ni + 1) * len * inner]) {
                            *d += s;
                        }
                    }
                }
            }
            Op::AvgPool2(x) => {
                if self.requires_grad(*x) {
                    let (_, _, h, w) = self.value(*x).dims4().expect("rank 4");
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = T::lit(0.25);
                    let dst = slot(grads, *x, self.shape(*x));
                    for (plane, src) in gd.chunks(ho * wo).enumerate() {
                        let d = &mut dst.data_mut()[plane * h * w..(plane + 1) * h * w];
                        for i in 0..ho {
                            for j in 0..wo {
                                let v = src[i * wo + j] * quarter;
                                d[2 * i * w + 2 * j] += v;
                                d[2 * i * w + 2 * j + 1] += v;
                                d[(2 * i + 1) * w + 2 * j] += v;
                                d[(2 * i + 1) * w + 2 * j + 1] += v;
                            }
                        }
                    }
                }
            }
            Op::BroadcastSpatial(x) => {
                if self.requires_grad(*x) {
                    let hw = node.value.inner_len() / node.value.shape()[1];
                    let dst = slot(grads, *x, self.shape(*x));
                    for (d, chunk) in dst.data_mut().iter_mut().zip(gd.chunks(hw)) {
                        *d += chunk.iter().copied().sum();
                    }
                }
            }
            Op::SpaceToDepth { x, factor } => {
                if self.requires_grad(*x) {
                    let (_, c, h, w) = self.value(*x).dims4().expect("rank 4");
                    let (ho, wo) = (h / factor, w / factor);
                    let dst = slot(grads, *x, self.shape(*x));
                    for (idx, d) in dst.data_mut().iter_mut().enumerate() {
                        let (oc, yy, xx) = s2d_index(idx, c, h, w, *factor);
                        let ni = idx / (c * h * w);
                        *d += gd[((ni * c * factor * factor + oc) * ho + yy) * wo + xx];
                    }
                }
            }
            Op::SegmentSum { x, counts } => {
                if self.requires_grad(*x) {
                    let inner = self.value(*x).inner_len();
                    let dst = slot(grads, *x, self.shape(*x));
                    let mut row = 0;
                    for (gi, &cnt) in counts.iter().enumerate() {
                        let src = &gd[gi * inner..(gi + 1) * inner];
                        for _ in 0..cnt {
                            for (d, &s) in dst.data_mut()[row * inner..(row + 1) * inner].iter_mut().zip(src) {
                                *d += s;
                            }
                            row += 1;
                        }
                    }
                }
            }
            Op::Sum(x) => self.acc_map(grads, *x, |_| gd[0]),
            Op::Mean(x) => {
                let v = gd[0] / T::from_usize(self.value(*x).len()).unwrap();
                self.acc_map(grads, *x, |_| v);
            }
            Op::MeanSpatial(x) => {
                let (_, _, h, w) = self.value(*x).dims4().expect("rank 4");
                let denom = T::from_usize(h * w).unwrap();
                self.acc_map(grads, *x, |k| gd[k / (h * w)] / denom);
            }
        }
    }

    fn acc_map(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl Fn(usize) -> T) {
        if !self.requires_grad(v) {
            return;
        }
        let dst = slot(grads, v, self.shape(v));
        for (k, d) in dst.data_mut().iter_mut().enumerate() {
            *d += f(k);
        }
    }

    fn acc_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Option<Vec<T>>) {
        let Some(data) = data else { return };
        match &mut grads[v.0] {
            Some(t) => {
                for (d, s) in t.data_mut().iter_mut().zip(data) {
                    *d += s;
                }
            }
            empty => *empty = Some(Tensor::from_vec(self.shape(v), data).expect("gradient shape")),
        }
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

/// For flat NCHW index `idx`, the space-to-depth destination `(channel, y, x)`.
fn s2d_index(idx: usize, c: usize, h: usize, w: usize, f: usize) -> (usize, usize, usize) {
    let xx = idx % w;
    let yy = (idx / w) % h;
    let ci = (idx / (w * h)) % c;
    (ci * f * f + (yy % f) * f + xx % f, yy / f, xx / f)
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
