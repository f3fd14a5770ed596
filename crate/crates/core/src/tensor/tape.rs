//! Reverse-mode autodiff on a linear tape.
//!
//! Each primitive appends one node holding its output value and the parent
//! ids. The tape order is a topological order by construction, so the
//! backward pass is a single reverse scan that visits every node once.
//! Gradients for [`ParamStore`] entries are deposited only when the entry is
//! trainable; frozen parameters keep grad = 0 while gradients still flow
//! through their outputs to earlier nodes.
//!
//! Every op validates shapes and checks its output for NaN/Inf; a non-finite
//! value is an error, never a silent state.

use super::params::ParamStore;
use super::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { idx: usize },
    /// a[m,k] @ b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// a[m,k] @ b[n,k]^T
    MatmulBt { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    /// rows of `a` plus a single bias row
    AddBias { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f64 },
    Silu { a: NodeId },
    /// row-wise softmax over unmasked entries; masked outputs are exactly 0
    MaskedSoftmax { a: NodeId, mask: Vec<bool> },
    /// row-wise normalization with per-column gain and bias, eps inside sqrt
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    /// row lookup into a table
    Embed { table: NodeId, ids: Vec<usize> },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    SliceRows { a: NodeId, r0: usize, r1: usize },
    SliceCols { a: NodeId, c0: usize, c1: usize },
    /// out row i = a row idx[i]; rows may repeat
    GatherRows { a: NodeId, idx: Vec<usize> },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Recorded computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of a recorded node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite value produced by {:?}",
                op_name(&op)
            )));
        }
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Record a constant input (no gradient is reported for it).
    pub fn input(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(Op::Input, value)
    }

    /// Record a parameter leaf by name. The current value is copied onto the
    /// tape; backward deposits into the store when the entry is trainable.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))?;
        let value = store.get_by_index(idx).value.clone();
        self.push(Op::Param { idx }, value)
    }

    fn dims2(&self, id: NodeId) -> (usize, usize) {
        let t = &self.nodes[id.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a);
        let (k2, n) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, k, n, &mut out);
        self.push(Op::Matmul { a, b }, Tensor { shape: vec![m, n], data: out })
    }

    /// a @ b^T, with b stored row-major as [n, k].
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a);
        let (n, k2) = self.dims2(b);
        if k != k2 {
            return Err(Error::Shape(format!("matmul_bt inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, k, n, &mut out);
        self.push(Op::MatmulBt { a, b }, Tensor { shape: vec![m, n], data: out })
    }

    fn zip_elementwise(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
        name: &str,
    ) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        let tb = &self.nodes[b.0].value;
        if ta.shape != tb.shape {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", ta.shape, tb.shape)));
        }
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        self.push(op, Tensor { shape, data })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, |x, y| x + y, Op::Add { a, b }, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, |x, y| x - y, Op::Sub { a, b }, "sub")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise(a, b, |x, y| x * y, Op::Mul { a, b }, "mul")
    }

    /// Add one bias row to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        let tb = &self.nodes[bias.0].value;
        if tb.numel() != d {
            return Err(Error::Shape(format!("add_bias: bias {} vs cols {d}", tb.numel())));
        }
        let ta = &self.nodes[a.0].value;
        let mut data = ta.data.clone();
        for r in 0..n {
            for c in 0..d {
                data[r * d + c] += tb.data[c];
            }
        }
        let shape = ta.shape.clone();
        self.push(Op::AddBias { a, bias }, Tensor { shape, data })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| x * c).collect();
        let shape = ta.shape.clone();
        self.push(Op::Scale { a, c }, Tensor { shape, data })
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        let data = ta.data.iter().map(|&x| x * sigmoid(x)).collect();
        let shape = ta.shape.clone();
        self.push(Op::Silu { a }, Tensor { shape, data })
    }

    /// Row-wise softmax restricted to unmasked entries. The max subtracted
    /// for stability is taken over unmasked entries only, masked outputs are
    /// exactly 0.0, and a fully-masked row is an error.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        if mask.len() != n * d {
            return Err(Error::Shape(format!(
                "masked_softmax: mask len {} vs {}x{}",
                mask.len(),
                n,
                d
            )));
        }
        let ta = &self.nodes[a.0].value;
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let xs = &ta.data[r * d..(r + 1) * d];
            let ms = &mask[r * d..(r + 1) * d];
            let mut mx = f64::NEG_INFINITY;
            for c in 0..d {
                if ms[c] && xs[c] > mx {
                    mx = xs[c];
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::Numerical(format!("masked_softmax: row {r} fully masked")));
            }
            let mut z = 0.0;
            for c in 0..d {
                if ms[c] {
                    let e = (xs[c] - mx).exp();
                    data[r * d + c] = e;
                    z += e;
                }
            }
            for c in 0..d {
                if ms[c] {
                    data[r * d + c] /= z;
                }
            }
        }
        let shape = ta.shape.clone();
        self.push(Op::MaskedSoftmax { a, mask: mask.to_vec() }, Tensor { shape, data })
    }

    /// Softmax with every entry visible.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        let mask = vec![true; n * d];
        self.masked_softmax(a, &mask)
    }

    /// Row-wise layer normalization: (x - mean) / sqrt(var + eps) * gain + bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (n, d) = self.dims2(x);
        if self.nodes[gain.0].value.numel() != d || self.nodes[bias.0].value.numel() != d {
            return Err(Error::Shape(format!(
                "layer_norm: gain/bias must have {d} entries"
            )));
        }
        let tx = &self.nodes[x.0].value;
        let g = &self.nodes[gain.0].value.data;
        let b = &self.nodes[bias.0].value.data;
        let mut data = vec![0.0; n * d];
        for r in 0..n {
            let xs = &tx.data[r * d..(r + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for c in 0..d {
                data[r * d + c] = (xs[c] - mean) * rstd * g[c] + b[c];
            }
        }
        let shape = tx.shape.clone();
        self.push(Op::LayerNorm { x, gain, bias, eps }, Tensor { shape, data })
    }

    /// Row lookup: out row i = table row ids[i].
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Shape(format!("embed: id {bad} out of vocabulary {v}")));
        }
        let tt = &self.nodes[table.0].value;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tt.data[i * d..(i + 1) * d]);
        }
        self.push(
            Op::Embed { table, ids: ids.to_vec() },
            Tensor { shape: vec![ids.len(), d], data },
        )
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows: empty part list".into()));
        }
        let d = self.dims2(parts[0]).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p);
            if c != d {
                return Err(Error::Shape(format!("concat_rows: cols {c} vs {d}")));
            }
            rows += r;
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        self.push(Op::ConcatRows { parts: parts.to_vec() }, Tensor { shape: vec![rows, d], data })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: empty part list".into()));
        }
        let n = self.dims2(parts[0]).0;
        let mut width = 0;
        for &p in parts {
            let (r, c) = self.dims2(p);
            if r != n {
                return Err(Error::Shape(format!("concat_cols: rows {r} vs {n}")));
            }
            width += c;
        }
        let mut data = vec![0.0; n * width];
        let mut off = 0;
        for &p in parts {
            let (_, c) = self.dims2(p);
            let src = &self.nodes[p.0].value.data;
            for r in 0..n {
                data[r * width + off..r * width + off + c]
                    .copy_from_slice(&src[r * c..(r + 1) * c]);
            }
            off += c;
        }
        self.push(Op::ConcatCols { parts: parts.to_vec() }, Tensor { shape: vec![n, width], data })
    }

    pub fn slice_rows(&mut self, a: NodeId, r0: usize, r1: usize) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        if r0 >= r1 || r1 > n {
            return Err(Error::Shape(format!("slice_rows: [{r0},{r1}) of {n}")));
        }
        let data = self.nodes[a.0].value.data[r0 * d..r1 * d].to_vec();
        self.push(Op::SliceRows { a, r0, r1 }, Tensor { shape: vec![r1 - r0, d], data })
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        if c0 >= c1 || c1 > d {
            return Err(Error::Shape(format!("slice_cols: [{c0},{c1}) of {d}")));
        }
        let w = c1 - c0;
        let src = &self.nodes[a.0].value.data;
        let mut data = vec![0.0; n * w];
        for r in 0..n {
            data[r * w..(r + 1) * w].copy_from_slice(&src[r * d + c0..r * d + c1]);
        }
        self.push(Op::SliceCols { a, c0, c1 }, Tensor { shape: vec![n, w], data })
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> Result<NodeId> {
        let (n, d) = self.dims2(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::Shape(format!("gather_rows: row {bad} out of {n}")));
        }
        let src = &self.nodes[a.0].value.data;
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            Op::GatherRows { a, idx: idx.to_vec() },
            Tensor { shape: vec![idx.len(), d], data },
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Op::SumAll { a }, Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = &self.nodes[a.0].value;
        if t.numel() == 0 {
            return Err(Error::Shape("mean_all: empty tensor".into()));
        }
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        self.push(Op::MeanAll { a }, Tensor::scalar(s))
    }

    /// Mean squared error between two same-shape nodes.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Reverse pass from a scalar loss. `scale` seeds the loss adjoint
    /// (use 1/batch for gradient accumulation across samples). Trainable
    /// parameter grads are accumulated into the store; frozen entries are
    /// left untouched.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore, scale: f64) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called on an empty tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::State(format!("backward: node {} not on tape", loss.0)));
        }
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Shape("backward: loss must be scalar".into()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![scale]);

        for i in (0..=loss.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient at node {i} ({})",
                    op_name(&self.nodes[i].op)
                )));
            }
            self.backprop_node(i, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, add: &[f64]) {
        match &mut grads[id.0] {
            Some(g) => {
                for (gv, av) in g.iter_mut().zip(add) {
                    *gv += av;
                }
            }
            None => grads[id.0] = Some(add.to_vec()),
        }
    }

    fn accumulate_owned(grads: &mut [Option<Vec<f64>>], id: NodeId, add: Vec<f64>) {
        match &mut grads[id.0] {
            Some(g) => {
                for (gv, av) in g.iter_mut().zip(&add) {
                    *gv += av;
                }
            }
            None => grads[id.0] = Some(add),
        }
    }

    fn backprop_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) -> Result<()> {
        match &self.nodes[i].op {
            Op::Input => {}
            Op::Param { idx } => store.accumulate_grad(*idx, g),
            Op::Matmul { a, b } => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).1;
                let ad = &self.nodes[a.0].value.data;
                let bd = &self.nodes[b.0].value.data;
                let mut da = vec![0.0; m * k];
                matmul_bt_acc(g, bd, m, n, k, &mut da);
                Self::accumulate_owned(grads, *a, da);
                let mut db = vec![0.0; k * n];
                matmul_at_acc(ad, g, m, k, n, &mut db);
                Self::accumulate_owned(grads, *b, db);
            }
            Op::MatmulBt { a, b } => {
                let (m, k) = self.dims2(*a);
                let n = self.dims2(*b).0;
                let ad = &self.nodes[a.0].value.data;
                let bd = &self.nodes[b.0].value.data;
                let mut da = vec![0.0; m * k];
                matmul_acc(g, bd, m, n, k, &mut da);
                Self::accumulate_owned(grads, *a, da);
                let mut db = vec![0.0; n * k];
                matmul_at_acc(g, ad, m, n, k, &mut db);
                Self::accumulate_owned(grads, *b, db);
            }
            Op::Add { a, b } => {
                Self::accumulate(grads, *a, g);
                Self::accumulate(grads, *b, g);
            }
            Op::Sub { a, b } => {
                Self::accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                Self::accumulate_owned(grads, *b, neg);
            }
            Op::Mul { a, b } => {
                let ad = &self.nodes[a.0].value.data;
                let bd = &self.nodes[b.0].value.data;
                let da: Vec<f64> = g.iter().zip(bd).map(|(gv, bv)| gv * bv).collect();
                Self::accumulate_owned(grads, *a, da);
                let db: Vec<f64> = g.iter().zip(ad).map(|(gv, av)| gv * av).collect();
                Self::accumulate_owned(grads, *b, db);
            }
            Op::AddBias { a, bias } => {
                Self::accumulate(grads, *a, g);
                let (n, d) = self.dims2(*a);
                let mut db = vec![0.0; d];
                for r in 0..n {
                    for c in 0..d {
                        db[c] += g[r * d + c];
                    }
                }
                Self::accumulate_owned(grads, *bias, db);
            }
            Op::Scale { a, c } => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                Self::accumulate_owned(grads, *a, da);
            }
            Op::Silu { a } => {
                let ad = &self.nodes[a.0].value.data;
                let da: Vec<f64> = g
                    .iter()
                    .zip(ad)
                    .map(|(gv, &x)| {
                        let s = sigmoid(x);
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                Self::accumulate_owned(grads, *a, da);
            }
            Op::MaskedSoftmax { a, mask } => {
                let y = &self.nodes[i].value;
                let (n, d) = (y.rows(), y.cols());
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    let ys = &y.data[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let ms = &mask[r * d..(r + 1) * d];
                    let dot: f64 = ys.iter().zip(gs).map(|(yv, gv)| yv * gv).sum();
                    for c in 0..d {
                        if ms[c] {
                            da[r * d + c] = ys[c] * (gs[c] - dot);
                        }
                    }
                }
                Self::accumulate_owned(grads, *a, da);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let tx = &self.nodes[x.0].value;
                let gdat = &self.nodes[gain.0].value.data;
                let (n, d) = (tx.rows(), tx.cols());
                let df = d as f64;
                let mut dx = vec![0.0; n * d];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..n {
                    let xs = &tx.data[r * d..(r + 1) * d];
                    let gs = &g[r * d..(r + 1) * d];
                    let mean = xs.iter().sum::<f64>() / df;
                    let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / df;
                    let rstd = 1.0 / (var + eps).sqrt();
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..d {
                        let xhat = (xs[c] - mean) * rstd;
                        let dxhat = gs[c] * gdat[c];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        dgain[c] += gs[c] * xhat;
                        dbias[c] += gs[c];
                    }
                    for c in 0..d {
                        let xhat = (xs[c] - mean) * rstd;
                        let dxhat = gs[c] * gdat[c];
                        dx[r * d + c] =
                            rstd * (dxhat - sum_dxhat / df - xhat * sum_dxhat_xhat / df);
                    }
                }
                Self::accumulate_owned(grads, *x, dx);
                Self::accumulate_owned(grads, *gain, dgain);
                Self::accumulate_owned(grads, *bias, dbias);
            }
            Op::Embed { table, ids } => {
                let d = self.dims2(*table).1;
                let v = self.dims2(*table).0;
                let mut dt = vec![0.0; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        dt[id * d + c] += g[row * d + c];
                    }
                }
                Self::accumulate_owned(grads, *table, dt);
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let (r, d) = self.dims2(p);
                    Self::accumulate(grads, p, &g[off..off + r * d]);
                    off += r * d;
                }
            }
            Op::ConcatCols { parts } => {
                let n = self.dims2(parts[0]).0;
                let width: usize = parts.iter().map(|&p| self.dims2(p).1).sum();
                let mut off = 0;
                for &p in parts {
                    let (_, c) = self.dims2(p);
                    let mut dp = vec![0.0; n * c];
                    for r in 0..n {
                        dp[r * c..(r + 1) * c]
                            .copy_from_slice(&g[r * width + off..r * width + off + c]);
                    }
                    Self::accumulate_owned(grads, p, dp);
                    off += c;
                }
            }
            Op::SliceRows { a, r0, r1 } => {
                let (n, d) = self.dims2(*a);
                let mut da = vec![0.0; n * d];
                da[r0 * d..r1 * d].copy_from_slice(g);
                Self::accumulate_owned(grads, *a, da);
            }
            Op::SliceCols { a, c0, c1 } => {
                let (n, d) = self.dims2(*a);
                let w = c1 - c0;
                let mut da = vec![0.0; n * d];
                for r in 0..n {
                    da[r * d + c0..r * d + c1].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                Self::accumulate_owned(grads, *a, da);
            }
            Op::GatherRows { a, idx } => {
                let (n, d) = self.dims2(*a);
                let mut da = vec![0.0; n * d];
                for (row, &src) in idx.iter().enumerate() {
                    for c in 0..d {
                        da[src * d + c] += g[row * d + c];
                    }
                }
                Self::accumulate_owned(grads, *a, da);
            }
            Op::SumAll { a } => {
                let t = &self.nodes[a.0].value;
                let da = vec![g[0]; t.numel()];
                Self::accumulate_owned(grads, *a, da);
            }
            Op::MeanAll { a } => {
                let t = &self.nodes[a.0].value;
                let da = vec![g[0] / t.numel() as f64; t.numel()];
                Self::accumulate_owned(grads, *a, da);
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param { .. } => "param",
        Op::Matmul { .. } => "matmul",
        Op::MatmulBt { .. } => "matmul_bt",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::AddBias { .. } => "add_bias",
        Op::Scale { .. } => "scale",
        Op::Silu { .. } => "silu",
        Op::MaskedSoftmax { .. } => "masked_softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Embed { .. } => "embed",
        Op::ConcatRows { .. } => "concat_rows",
        Op::ConcatCols { .. } => "concat_cols",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::GatherRows { .. } => "gather_rows",
        Op::SumAll { .. } => "sum_all",
        Op::MeanAll { .. } => "mean_all",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, t, true).unwrap();
        s
    }

    #[test]
    fn softmax_matches_worked_example() {
        // softmax([1, 2]) = [0.26894, 0.73106]
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y);
        assert!((v.data[0] - 0.268_941_421_369_995_1).abs() < 1e-4);
        assert!((v.data[1] - 0.731_058_578_630_004_9).abs() < 1e-4);
        assert!((v.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_and_renormalizes() {
        let mut tape = Tape::new();
        let x = tape
            .input(Tensor::from_vec(&[1, 3], vec![5.0, 1.0, 2.0]).unwrap())
            .unwrap();
        let y = tape.masked_softmax(x, &[false, true, true]).unwrap();
        let v = tape.value(y);
        assert_eq!(v.data[0], 0.0);
        assert!((v.data[1] - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!((v.data[1] + v.data[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_rejects_fully_masked_row() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let err = tape.masked_softmax(x, &[false, false]).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn masked_softmax_ignores_masked_logit_values() {
        // A huge logit behind the mask must not perturb the result at all.
        let run = |hidden: f64| {
            let mut tape = Tape::new();
            let x = tape
                .input(Tensor::from_vec(&[1, 3], vec![hidden, 1.0, 2.0]).unwrap())
                .unwrap();
            let y = tape.masked_softmax(x, &[false, true, true]).unwrap();
            tape.value(y).data.clone()
        };
        assert_eq!(run(1e300), run(-4.0));
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 4], vec![3.0; 4]).unwrap()).unwrap();
        let g = tape.input(Tensor::from_vec(&[4], vec![1.0; 4]).unwrap()).unwrap();
        let b = tape.input(Tensor::from_vec(&[4], vec![0.0; 4]).unwrap()).unwrap();
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        for v in &tape.value(y).data {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn backward_before_any_op_is_state_error() {
        let mut tape = Tape::new();
        let mut store = ParamStore::new();
        let err = tape.backward(NodeId(0), &mut store, 1.0).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn backward_rejects_nonscalar_loss() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap()).unwrap();
        let mut store = ParamStore::new();
        let err = tape.backward(x, &mut store, 1.0).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn matmul_gradient_matches_hand_computation() {
        // loss = sum(W @ x) with W = [[1,2],[3,4]], x = [[5],[6]].
        // dW = [x^T; x^T], dx = column sums of W = [[4],[6]].
        let mut store = store_with("w", Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let x = tape.input(Tensor::from_vec(&[2, 1], vec![5.0, 6.0]).unwrap()).unwrap();
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss, &mut store, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().grad.data, vec![5.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn param_used_twice_accumulates_grads() {
        // loss = sum(w + w) => dw = 2 per element.
        let mut store = store_with("w", Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap());
        let mut tape = Tape::new();
        let w1 = tape.param(&store, "w").unwrap();
        let w2 = tape.param(&store, "w").unwrap();
        let s = tape.add(w1, w2).unwrap();
        let loss = tape.sum_all(s).unwrap();
        tape.backward(loss, &mut store, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().grad.data, vec![2.0, 2.0]);
    }

    #[test]
    fn frozen_param_grad_stays_zero_but_gradient_flows_through() {
        // y = (frozen W) @ x where x is trainable as a "param"; grad must
        // reach x through W while W's grad buffer stays zero.
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::from_vec(&[1, 2], vec![2.0, 3.0]).unwrap(), false)
            .unwrap();
        store
            .insert("x", Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap(), true)
            .unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let x = tape.param(&store, "x").unwrap();
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        tape.backward(loss, &mut store, 1.0).unwrap();
        assert_eq!(store.get("w").unwrap().grad.data, vec![0.0, 0.0]);
        assert_eq!(store.get("x").unwrap().grad.data, vec![2.0, 3.0]);
    }

    #[test]
    fn non_finite_op_output_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(&[1, 1], vec![1e308]).unwrap()).unwrap();
        let y = tape.scale(x, 1e10);
        assert!(matches!(y, Err(Error::Numerical(_))));
    }
}
