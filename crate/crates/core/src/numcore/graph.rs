use crate::error::{Error, Result};
use crate::numcore::params::{ParamId, ParameterSet};
use crate::numcore::tensor::Tensor;

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

/// Elementwise activation kinds exposed to callers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv1dSame { x: ValueId, w: ValueId, b: ValueId },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    Abs { x: ValueId },
    Hadamard { a: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: f64 },
    ConcatChannels { parts: Vec<ValueId> },
    Linear { x: ValueId, w: ValueId, b: ValueId },
    MatMul { a: ValueId, b: ValueId },
    Transpose { x: ValueId },
    SoftmaxRows { x: ValueId },
    LayerNorm { x: ValueId, gain: ValueId, shift: ValueId, eps: f64 },
    Mean { x: ValueId },
    Reshape { x: ValueId },
    MaskBelow { x: ValueId, tau: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed differentiable operations.
///
/// Values are computed eagerly as operations are recorded; the record is
/// appended in execution order, so reverse index order is a reverse
/// topological order and `backward` replays it exactly once per node.
/// A graph is confined to one training instance and never shared.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Records a constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Binds the current value of a parameter array into the graph.
    /// Gradients reaching this node accumulate into the parameter's
    /// gradient buffer on `backward`.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> ValueId {
        self.push(params.value(id).clone(), Op::Param(id))
    }

    /// Same-length 1-D convolution with zero padding.
    ///
    /// `x`: `[C_in, L]`, `w`: `[C_out, C_in, k]` with odd `k`, `b`: `[C_out]`.
    /// No kernel flip: `out[c,i] = b[c] + sum_{c',m} w[c,c',m] * x[c', i+m-k/2]`.
    pub fn conv1d_same(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::config(format!(
                "conv1d_same expects x [C_in, L], w [C_out, C_in, k], b [C_out]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        let (c_in, len) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[2]);
        if ws[1] != c_in || bs[0] != c_out {
            return Err(Error::config(format!(
                "conv1d_same shape mismatch: x {xs:?} vs w {ws:?} vs b {bs:?}"
            )));
        }
        if k % 2 == 0 {
            return Err(Error::config(format!(
                "conv1d_same kernel size must be odd, got {k}"
            )));
        }
        let out = conv1d_forward(self.value(x), self.value(w), self.value(b), c_out, c_in, k, len);
        Ok(self.push(out, Op::Conv1dSame { x, w, b }))
    }

    /// Elementwise `max(0, .)` or logistic sigmoid.
    pub fn pointwise(&mut self, x: ValueId, kind: Pointwise) -> ValueId {
        match kind {
            Pointwise::Relu => self.relu(x),
            Pointwise::Sigmoid => self.sigmoid(x),
        }
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let shape = self.value(x).shape().to_vec();
        let data = self.value(x).data().iter().map(|&v| v.max(0.0)).collect();
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let shape = self.value(x).shape().to_vec();
        let data = self.value(x).data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::Sigmoid { x })
    }

    pub fn abs(&mut self, x: ValueId) -> ValueId {
        let shape = self.value(x).shape().to_vec();
        let data = self.value(x).data().iter().map(|&v| v.abs()).collect();
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::Abs { x })
    }

    /// Elementwise product of two same-shape tensors.
    pub fn hadamard(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("hadamard", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Hadamard { a, b }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("add", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.check_same_shape("sub", a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, c: f64) -> ValueId {
        let shape = self.value(x).shape().to_vec();
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::Scale { x, c })
    }

    /// Stacks `[C_p, L]` tensors along the channel axis in argument order.
    pub fn concat_channels(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::config("concat_channels requires a nonempty part list".to_string()));
        }
        let len = {
            let first = self.value(parts[0]).shape();
            if first.len() != 2 {
                return Err(Error::config(format!(
                    "concat_channels expects [C, L] parts, got shape {first:?}"
                )));
            }
            first[1]
        };
        let mut channels = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[1] != len {
                return Err(Error::config(format!(
                    "concat_channels parts must share trailing length {len}, got shape {s:?}"
                )));
            }
            channels += s[0];
        }
        let mut data = Vec::with_capacity(channels * len);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![channels, len], data)?;
        Ok(self.push(out, Op::ConcatChannels { parts: parts.to_vec() }))
    }

    /// Affine map `x @ w + b` with the bias broadcast over rows.
    ///
    /// `x`: `[N, D_in]`, `w`: `[D_in, D_out]`, `b`: `[D_out]`.
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::config(format!(
                "linear shape mismatch: x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let mut data = vec![0.0; n * d_out];
        for i in 0..n {
            let row = &mut data[i * d_out..(i + 1) * d_out];
            row.copy_from_slice(self.value(b).data());
            let xrow = self.value(x).row(i);
            for kk in 0..d_in {
                let xv = xrow[kk];
                let wrow = self.value(w).row(kk);
                for j in 0..d_out {
                    row[j] += xv * wrow[j];
                }
            }
        }
        let out = Tensor::new(vec![n, d_out], data)?;
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Plain matrix product `a @ b` for `[N, K] x [K, M]`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::config(format!("matmul shape mismatch: {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let arow = self.value(a).row(i);
            let orow = &mut data[i * m..(i + 1) * m];
            for kk in 0..k {
                let av = arow[kk];
                let brow = self.value(b).row(kk);
                for j in 0..m {
                    orow[j] += av * brow[j];
                }
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, Op::MatMul { a, b }))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::config(format!("transpose expects a 2-D tensor, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(x).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        Ok(self.push(out, Op::Transpose { x }))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let s = self.value(x).shape();
        if s.len() != 2 {
            return Err(Error::config(format!("softmax_rows expects a 2-D tensor, got {s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let row = self.value(x).row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let orow = &mut data[i * m..(i + 1) * m];
            let mut sum = 0.0;
            for j in 0..m {
                let e = (row[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let out = Tensor::new(vec![n, m], data)?;
        Ok(self.push(out, Op::SoftmaxRows { x }))
    }

    /// Per-row standardization followed by an affine gain/shift.
    ///
    /// `x`: `[N, D]`, `gain`/`shift`: `[D]`. Variance is the population
    /// variance stabilized with `eps`.
    pub fn layer_norm(
        &mut self,
        x: ValueId,
        gain: ValueId,
        shift: ValueId,
        eps: f64,
    ) -> Result<ValueId> {
        let (xs, gs, ss) = (self.value(x).shape(), self.value(gain).shape(), self.value(shift).shape());
        if xs.len() != 2 || gs.len() != 1 || ss.len() != 1 || gs[0] != xs[1] || ss[0] != xs[1] {
            return Err(Error::config(format!(
                "layer_norm shape mismatch: x {xs:?}, gain {gs:?}, shift {ss:?}"
            )));
        }
        let (n, d) = (xs[0], xs[1]);
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row = self.value(x).row(i);
            let (mean, var) = mean_var(row);
            let inv = 1.0 / (var + eps).sqrt();
            let orow = &mut data[i * d..(i + 1) * d];
            let g = self.value(gain).data();
            let b = self.value(shift).data();
            for j in 0..d {
                orow[j] = g[j] * (row[j] - mean) * inv + b[j];
            }
        }
        let out = Tensor::new(vec![n, d], data)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, shift, eps }))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, x: ValueId) -> ValueId {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x })
    }

    /// Reinterprets the value with a new shape of equal element count.
    pub fn reshape(&mut self, x: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Sets entries strictly below `tau` to exactly 0, keeping the rest.
    pub fn mask_below(&mut self, x: ValueId, tau: f64) -> ValueId {
        let shape = self.value(x).shape().to_vec();
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v < tau { 0.0 } else { v })
            .collect();
        self.push(Tensor::new(shape, data).expect("shape preserved"), Op::MaskBelow { x, tau })
    }

    fn check_same_shape(&self, what: &str, a: ValueId, b: ValueId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::config(format!(
                "{what} requires identical shapes, got {sa:?} vs {sb:?}"
            )));
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Parameter gradients accumulate into `params`; call
    /// [`ParameterSet::zero_grads`] between steps to reset them.
    pub fn backward(&self, loss: ValueId, params: &mut ParameterSet) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::config(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(pid) => {
                    let acc = params.grad_mut(*pid);
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += gi;
                    }
                }
                Op::Conv1dSame { x, w, b } => {
                    let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                    let (c_in, len) = (xs[0], xs[1]);
                    let (c_out, k) = (ws[0], ws[2]);
                    conv1d_backward_x(
                        self.value(*w).data(),
                        &g,
                        ensure(&mut grads, x.0, c_in * len),
                        c_out,
                        c_in,
                        k,
                        len,
                    );
                    conv1d_backward_w(
                        self.value(*x).data(),
                        &g,
                        ensure(&mut grads, w.0, c_out * c_in * k),
                        c_out,
                        c_in,
                        k,
                        len,
                    );
                    let gb = ensure(&mut grads, b.0, c_out);
                    for c in 0..c_out {
                        gb[c] += g[c * len..(c + 1) * len].iter().sum::<f64>();
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x).data();
                    let gx = ensure(&mut grads, x.0, xv.len());
                    for i in 0..xv.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Sigmoid { x } => {
                    let y = self.nodes[idx].value.data();
                    let gx = ensure(&mut grads, x.0, y.len());
                    for i in 0..y.len() {
                        gx[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Abs { x } => {
                    let xv = self.value(*x).data();
                    let gx = ensure(&mut grads, x.0, xv.len());
                    for i in 0..xv.len() {
                        gx[i] += g[i] * sign(xv[i]);
                    }
                }
                Op::Hadamard { a, b } => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    {
                        let ga = ensure(&mut grads, a.0, av.len());
                        for i in 0..av.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    let gb = ensure(&mut grads, b.0, bv.len());
                    for i in 0..bv.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::Add { a, b } => {
                    {
                        let ga = ensure(&mut grads, a.0, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i];
                        }
                    }
                    let gb = ensure(&mut grads, b.0, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i];
                    }
                }
                Op::Sub { a, b } => {
                    {
                        let ga = ensure(&mut grads, a.0, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i];
                        }
                    }
                    let gb = ensure(&mut grads, b.0, g.len());
                    for i in 0..g.len() {
                        gb[i] -= g[i];
                    }
                }
                Op::Scale { x, c } => {
                    let gx = ensure(&mut grads, x.0, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * c;
                    }
                }
                Op::ConcatChannels { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        let gp = ensure(&mut grads, p.0, n);
                        for i in 0..n {
                            gp[i] += g[offset + i];
                        }
                        offset += n;
                    }
                }
                Op::Linear { x, w, b } => {
                    let (xs, ws) = (self.value(*x).shape(), self.value(*w).shape());
                    let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
                    let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                    {
                        let gx = ensure(&mut grads, x.0, n * d_in);
                        for i in 0..n {
                            let grow = &g[i * d_out..(i + 1) * d_out];
                            let gxrow = &mut gx[i * d_in..(i + 1) * d_in];
                            for kk in 0..d_in {
                                let wrow = &wv[kk * d_out..(kk + 1) * d_out];
                                let mut acc = 0.0;
                                for j in 0..d_out {
                                    acc += grow[j] * wrow[j];
                                }
                                gxrow[kk] += acc;
                            }
                        }
                    }
                    {
                        let gw = ensure(&mut grads, w.0, d_in * d_out);
                        for i in 0..n {
                            let grow = &g[i * d_out..(i + 1) * d_out];
                            let xrow = &xv[i * d_in..(i + 1) * d_in];
                            for kk in 0..d_in {
                                let xvv = xrow[kk];
                                let gwrow = &mut gw[kk * d_out..(kk + 1) * d_out];
                                for j in 0..d_out {
                                    gwrow[j] += xvv * grow[j];
                                }
                            }
                        }
                    }
                    let gb = ensure(&mut grads, b.0, d_out);
                    for i in 0..n {
                        let grow = &g[i * d_out..(i + 1) * d_out];
                        for j in 0..d_out {
                            gb[j] += grow[j];
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                    let (n, k, m) = (sa[0], sa[1], sb[1]);
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    {
                        let ga = ensure(&mut grads, a.0, n * k);
                        for i in 0..n {
                            let grow = &g[i * m..(i + 1) * m];
                            let garow = &mut ga[i * k..(i + 1) * k];
                            for kk in 0..k {
                                let brow = &bv[kk * m..(kk + 1) * m];
                                let mut acc = 0.0;
                                for j in 0..m {
                                    acc += grow[j] * brow[j];
                                }
                                garow[kk] += acc;
                            }
                        }
                    }
                    let gb = ensure(&mut grads, b.0, k * m);
                    for i in 0..n {
                        let grow = &g[i * m..(i + 1) * m];
                        let arow = &av[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let avv = arow[kk];
                            let gbrow = &mut gb[kk * m..(kk + 1) * m];
                            for j in 0..m {
                                gbrow[j] += avv * grow[j];
                            }
                        }
                    }
                }
                Op::Transpose { x } => {
                    let s = self.value(*x).shape();
                    let (r, c) = (s[0], s[1]);
                    let gx = ensure(&mut grads, x.0, r * c);
                    for i in 0..r {
                        for j in 0..c {
                            gx[i * c + j] += g[j * r + i];
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    let y = self.nodes[idx].value.data();
                    let s = self.value(*x).shape();
                    let (n, m) = (s[0], s[1]);
                    let gx = ensure(&mut grads, x.0, n * m);
                    for i in 0..n {
                        let yrow = &y[i * m..(i + 1) * m];
                        let grow = &g[i * m..(i + 1) * m];
                        let dot: f64 = yrow.iter().zip(grow).map(|(yv, gv)| yv * gv).sum();
                        let gxrow = &mut gx[i * m..(i + 1) * m];
                        for j in 0..m {
                            gxrow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, shift, eps } => {
                    let s = self.value(*x).shape();
                    let (n, d) = (s[0], s[1]);
                    let xv = self.value(*x).data();
                    let gainv = self.value(*gain).data();
                    let inv_d = 1.0 / d as f64;
                    let mut gx_local = vec![0.0; n * d];
                    let mut ggain_local = vec![0.0; d];
                    let mut gshift_local = vec![0.0; d];
                    for i in 0..n {
                        let row = &xv[i * d..(i + 1) * d];
                        let (mean, var) = mean_var(row);
                        let inv = 1.0 / (var + eps).sqrt();
                        let grow = &g[i * d..(i + 1) * d];
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = grow[j] * gainv[j];
                            gshift_local[j] += grow[j];
                            ggain_local[j] += grow[j] * xhat;
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat *= inv_d;
                        mean_dxhat_xhat *= inv_d;
                        let gxrow = &mut gx_local[i * d..(i + 1) * d];
                        for j in 0..d {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = grow[j] * gainv[j];
                            gxrow[j] = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv;
                        }
                    }
                    {
                        let gx = ensure(&mut grads, x.0, n * d);
                        for i in 0..n * d {
                            gx[i] += gx_local[i];
                        }
                    }
                    {
                        let gg = ensure(&mut grads, gain.0, d);
                        for j in 0..d {
                            gg[j] += ggain_local[j];
                        }
                    }
                    let gs = ensure(&mut grads, shift.0, d);
                    for j in 0..d {
                        gs[j] += gshift_local[j];
                    }
                }
                Op::Mean { x } => {
                    let n = self.value(*x).numel();
                    let share = g[0] / n as f64;
                    let gx = ensure(&mut grads, x.0, n);
                    for v in gx.iter_mut() {
                        *v += share;
                    }
                }
                Op::Reshape { x } => {
                    let gx = ensure(&mut grads, x.0, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i];
                    }
                }
                Op::MaskBelow { x, tau } => {
                    let xv = self.value(*x).data();
                    let gx = ensure(&mut grads, x.0, xv.len());
                    for i in 0..xv.len() {
                        if xv[i] >= *tau {
                            gx[i] += g[i];
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn ensure(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    grads[idx].get_or_insert_with(|| vec![0.0; len])
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn conv1d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    c_out: usize,
    c_in: usize,
    k: usize,
    len: usize,
) -> Tensor {
    let pad = k / 2;
    let (xv, wv, bv) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; c_out * len];
    for c in 0..c_out {
        let orow = &mut out[c * len..(c + 1) * len];
        orow.iter_mut().for_each(|v| *v = bv[c]);
        for cp in 0..c_in {
            let xrow = &xv[cp * len..(cp + 1) * len];
            let wrow = &wv[(c * c_in + cp) * k..(c * c_in + cp + 1) * k];
            for (m, &wm) in wrow.iter().enumerate() {
                // out[i] += wm * x[i + m - pad] over valid positions
                let (ilo, ihi) = valid_range(m, pad, len);
                let shift = m as isize - pad as isize;
                for i in ilo..ihi {
                    orow[i] += wm * xrow[(i as isize + shift) as usize];
                }
            }
        }
    }
    Tensor::new(vec![c_out, len], out).expect("consistent conv shape")
}

/// Output positions `i` where `0 <= i + m - pad < len`.
fn valid_range(m: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(m);
    let hi_signed = len as isize + pad as isize - m as isize;
    let hi = hi_signed.clamp(0, len as isize) as usize;
    (lo.min(len), hi)
}

fn conv1d_backward_x(
    w: &[f64],
    g: &[f64],
    gx: &mut [f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    len: usize,
) {
    let pad = k / 2;
    for c in 0..c_out {
        let grow = &g[c * len..(c + 1) * len];
        for cp in 0..c_in {
            let gxrow = &mut gx[cp * len..(cp + 1) * len];
            let wrow = &w[(c * c_in + cp) * k..(c * c_in + cp + 1) * k];
            for (m, &wm) in wrow.iter().enumerate() {
                let (ilo, ihi) = valid_range(m, pad, len);
                let shift = m as isize - pad as isize;
                for i in ilo..ihi {
                    gxrow[(i as isize + shift) as usize] += grow[i] * wm;
                }
            }
        }
    }
}

fn conv1d_backward_w(
    x: &[f64],
    g: &[f64],
    gw: &mut [f64],
    c_out: usize,
    c_in: usize,
    k: usize,
    len: usize,
) {
    let pad = k / 2;
    for c in 0..c_out {
        let grow = &g[c * len..(c + 1) * len];
        for cp in 0..c_in {
            let xrow = &x[cp * len..(cp + 1) * len];
            let gwrow = &mut gw[(c * c_in + cp) * k..(c * c_in + cp + 1) * k];
            for (m, gwm) in gwrow.iter_mut().enumerate() {
                let (ilo, ihi) = valid_range(m, pad, len);
                let shift = m as isize - pad as isize;
                let mut acc = 0.0;
                for i in ilo..ihi {
                    acc += grow[i] * xrow[(i as isize + shift) as usize];
                }
                *gwm += acc;
            }
        }
    }
}
