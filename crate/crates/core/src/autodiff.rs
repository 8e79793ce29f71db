//! A minimal reverse-mode automatic-differentiation engine over dense
//! row-major matrices, plus the Adam optimizer used by training and attacks.
//!
//! The [`Tape`] records primitive operations in an append-only list; append
//! order is topological order, and the backward pass visits nodes exactly
//! once in strict reverse order. Gradients are only materialized for nodes
//! that can reach a differentiable leaf, so frozen parameters (attack time)
//! or frozen inputs (training time) cost nothing in the backward pass.

use rand::Rng;

/// Dense row-major matrix of `f64`. Vectors are 1xC or Rx1, scalars 1x1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded by `rng`.
    pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() requires a 1x1 tensor");
        self.data[0]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// out = alpha * A' * B' + beta * out, where X' is X or X^T per flag.
fn gemm(out: &mut Tensor, a: &Tensor, ta: bool, b: &Tensor, tb: bool, alpha: f64, beta: f64) {
    let (am, ak) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (bk, bn) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(ak, bk, "inner dimensions differ");
    assert_eq!((out.rows, out.cols), (am, bn), "output shape mismatch");
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            am,
            ak,
            bn,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            out.cols as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    /// a^T * b without materializing the transpose.
    MatMulTA(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRowBroadcast(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Log(NodeId),
    Recip(NodeId),
    /// Elementwise product with a broadcast 1x1 scalar node.
    MulScalar(NodeId, NodeId),
    Clamp(NodeId, f64, f64),
    Transpose(NodeId),
    ConcatCols(NodeId, NodeId),
    MeanAll(NodeId),
    ColMean(NodeId),
    RowBlockMean(NodeId, usize),
    ExpandRows(NodeId, usize),
    TileRows(NodeId, usize),
    Reshape(NodeId),
    PairwiseDist(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether this node can reach a differentiable leaf.
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. `id`; zero tensor shape is the node's shape.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Append-only computation tape; see the module docs.
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            Op::MatMul(a, b)
            | Op::MatMulTA(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::ConcatCols(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::MulScalar(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Recip(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Clamp(a, _, _)
            | Op::Transpose(a)
            | Op::MeanAll(a)
            | Op::ColMean(a)
            | Op::RowBlockMean(a, _)
            | Op::ExpandRows(a, _)
            | Op::TileRows(a, _)
            | Op::Reshape(a)
            | Op::PairwiseDist(a) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node { op, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    /// Non-differentiable input; the backward pass never visits it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ar, bc) = (self.value(a).rows, self.value(b).cols);
        let mut out = Tensor::zeros(ar, bc);
        gemm(&mut out, self.value(a), false, self.value(b), false, 1.0, 0.0);
        self.push(Op::MatMul(a, b), out)
    }

    /// a^T * b.
    pub fn matmul_ta(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ac, bc) = (self.value(a).cols, self.value(b).cols);
        let mut out = Tensor::zeros(ac, bc);
        gemm(&mut out, self.value(a), true, self.value(b), false, 1.0, 0.0);
        self.push(Op::MatMulTA(a, b), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x + y);
        self.push(Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x - y);
        self.push(Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.zip(a, b, |x, y| x * y);
        self.push(Op::Mul(a, b), out)
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "shape mismatch");
        Tensor {
            rows: ta.rows,
            cols: ta.cols,
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out = self.value(a).scaled(c);
        self.push(Op::Scale(a, c), out)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|v| v + c).collect(),
        };
        self.push(Op::AddScalar(a), out)
    }

    /// Adds a 1xC row to every row of an RxC matrix (bias).
    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (t, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows, 1, "bias must be a row vector");
        assert_eq!(t.cols, r.cols, "bias width mismatch");
        let mut out = t.clone();
        for chunk in out.data.chunks_mut(t.cols) {
            for (v, b) in chunk.iter_mut().zip(&r.data) {
                *v += b;
            }
        }
        self.push(Op::AddRowBroadcast(a, row), out)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| v.max(0.0)).collect(),
        };
        self.push(Op::Relu(a), out)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
        };
        self.push(Op::Sigmoid(a), out)
    }

    /// Elementwise reciprocal.
    pub fn recip(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| 1.0 / v).collect(),
        };
        self.push(Op::Recip(a), out)
    }

    /// Multiplies every entry by a 1x1 scalar node.
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> NodeId {
        let sv = self.value(s).item();
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| v * sv).collect(),
        };
        self.push(Op::MulScalar(a, s), out)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| v.ln()).collect(),
        };
        self.push(Op::Log(a), out)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        let t = self.value(a);
        let out = Tensor {
            rows: t.rows,
            cols: t.cols,
            data: t.data.iter().map(|&v| v.clamp(lo, hi)).collect(),
        };
        self.push(Op::Clamp(a, lo, hi), out)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.cols, t.rows);
        for r in 0..t.rows {
            for c in 0..t.cols {
                out.data[c * t.rows + r] = t.data[r * t.cols + c];
            }
        }
        self.push(Op::Transpose(a), out)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows, tb.rows, "row count mismatch");
        let mut out = Tensor::zeros(ta.rows, ta.cols + tb.cols);
        for r in 0..ta.rows {
            let dst = &mut out.data[r * (ta.cols + tb.cols)..];
            dst[..ta.cols].copy_from_slice(&ta.data[r * ta.cols..(r + 1) * ta.cols]);
            dst[ta.cols..ta.cols + tb.cols]
                .copy_from_slice(&tb.data[r * tb.cols..(r + 1) * tb.cols]);
        }
        self.push(Op::ConcatCols(a, b), out)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.data.len() as f64);
        self.push(Op::MeanAll(a), out)
    }

    /// Column means: RxC -> 1xC.
    pub fn col_mean(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols);
        for chunk in t.data.chunks(t.cols) {
            for (o, v) in out.data.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        for o in &mut out.data {
            *o /= t.rows as f64;
        }
        self.push(Op::ColMean(a), out)
    }

    /// Means over consecutive row blocks: (P*block)xC -> PxC.
    pub fn row_block_mean(&mut self, a: NodeId, block: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.rows % block, 0, "rows not divisible by block");
        let p = t.rows / block;
        let mut out = Tensor::zeros(p, t.cols);
        for r in 0..t.rows {
            let dst = r / block;
            for c in 0..t.cols {
                out.data[dst * t.cols + c] += t.data[r * t.cols + c];
            }
        }
        for v in &mut out.data {
            *v /= block as f64;
        }
        self.push(Op::RowBlockMean(a, block), out)
    }

    /// Repeats each row `times` times consecutively: PxC -> (P*times)xC.
    pub fn expand_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows * times, t.cols);
        for r in 0..t.rows {
            let src = &t.data[r * t.cols..(r + 1) * t.cols];
            for k in 0..times {
                let dst = (r * times + k) * t.cols;
                out.data[dst..dst + t.cols].copy_from_slice(src);
            }
        }
        self.push(Op::ExpandRows(a, times), out)
    }

    /// Repeats the whole matrix `times` times: PxC -> (times*P)xC.
    pub fn tile_rows(&mut self, a: NodeId, times: usize) -> NodeId {
        let t = self.value(a);
        let mut out = Tensor::zeros(t.rows * times, t.cols);
        for k in 0..times {
            let dst = k * t.rows * t.cols;
            out.data[dst..dst + t.data.len()].copy_from_slice(&t.data);
        }
        self.push(Op::TileRows(a, times), out)
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let t = self.value(a);
        assert_eq!(t.data.len(), rows * cols, "reshape must preserve size");
        let out = Tensor { rows, cols, data: t.data.clone() };
        self.push(Op::Reshape(a), out)
    }

    /// Pairwise euclidean distances of Nx2 coordinates: Nx2 -> NxN with zero
    /// diagonal. Gradients at coincident points are defined as zero.
    pub fn pairwise_dist(&mut self, coords: NodeId) -> NodeId {
        let t = self.value(coords);
        assert_eq!(t.cols, 2, "coordinates must be Nx2");
        let n = t.rows;
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = t.data[2 * i] - t.data[2 * j];
                let dy = t.data[2 * i + 1] - t.data[2 * j + 1];
                let d = (dx * dx + dy * dy).sqrt();
                out.data[i * n + j] = d;
                out.data[j * n + i] = d;
            }
        }
        self.push(Op::PairwiseDist(coords), out)
    }

    /// Reverse pass from a scalar node. Visits nodes in strict reverse append
    /// order once; only subgraphs that reach a leaf receive gradients.
    pub fn backward(&self, from: NodeId) -> Gradients {
        assert_eq!(self.value(from).data.len(), 1, "backward starts from a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[from.0] = Some(Tensor::scalar(1.0));
        for i in (0..=from.0).rev() {
            if self.nodes[i].needs_grad && grads[i].is_some() {
                let g = grads[i].take().unwrap();
                self.propagate(i, &g, &mut grads);
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Tensor>],
        id: NodeId,
    ) -> Option<&'a mut Tensor> {
        if !self.nodes[id.0].needs_grad {
            return None;
        }
        let t = self.value(id);
        Some(grads[id.0].get_or_insert_with(|| Tensor::zeros(t.rows, t.cols)))
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                // dA += G * B^T ; dB += A^T * G
                if let Some(da) = self.grad_buf(grads, a) {
                    gemm(da, g, false, self.value(b), true, 1.0, 1.0);
                }
                if let Some(db) = self.grad_buf(grads, b) {
                    gemm(db, self.value(a), true, g, false, 1.0, 1.0);
                }
            }
            Op::MatMulTA(a, b) => {
                // C = A^T B: dA += B * G^T ; dB += A * G
                if let Some(da) = self.grad_buf(grads, a) {
                    gemm(da, self.value(b), false, g, true, 1.0, 1.0);
                }
                if let Some(db) = self.grad_buf(grads, b) {
                    gemm(db, self.value(a), false, g, false, 1.0, 1.0);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, a, |da| add_assign(da, g, 1.0));
                self.acc(grads, b, |db| add_assign(db, g, 1.0));
            }
            Op::Sub(a, b) => {
                self.acc(grads, a, |da| add_assign(da, g, 1.0));
                self.acc(grads, b, |db| add_assign(db, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                self.acc(grads, a, |da| {
                    for ((d, &gv), &bv) in da.data.iter_mut().zip(&g.data).zip(&vb.data) {
                        *d += gv * bv;
                    }
                });
                self.acc(grads, b, |db| {
                    for ((d, &gv), &av) in db.data.iter_mut().zip(&g.data).zip(&va.data) {
                        *d += gv * av;
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, a, |da| add_assign(da, g, c)),
            Op::AddScalar(a) => self.acc(grads, a, |da| add_assign(da, g, 1.0)),
            Op::AddRowBroadcast(a, row) => {
                self.acc(grads, a, |da| add_assign(da, g, 1.0));
                let cols = self.value(row).cols;
                self.acc(grads, row, |dr| {
                    for chunk in g.data.chunks(cols) {
                        for (d, &gv) in dr.data.iter_mut().zip(chunk) {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let va = self.value(a);
                self.acc(grads, a, |da| {
                    for ((d, &gv), &xv) in da.data.iter_mut().zip(&g.data).zip(&va.data) {
                        if xv > 0.0 {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let s = &self.nodes[i].value;
                self.acc(grads, a, |da| {
                    for ((d, &gv), &sv) in da.data.iter_mut().zip(&g.data).zip(&s.data) {
                        *d += gv * sv * (1.0 - sv);
                    }
                });
            }
            Op::Log(a) => {
                let va = self.value(a);
                self.acc(grads, a, |da| {
                    for ((d, &gv), &xv) in da.data.iter_mut().zip(&g.data).zip(&va.data) {
                        *d += gv / xv;
                    }
                });
            }
            Op::Recip(a) => {
                let va = self.value(a);
                self.acc(grads, a, |da| {
                    for ((d, &gv), &xv) in da.data.iter_mut().zip(&g.data).zip(&va.data) {
                        *d -= gv / (xv * xv);
                    }
                });
            }
            Op::MulScalar(a, sid) => {
                let sv = self.value(sid).item();
                let va = self.value(a);
                self.acc(grads, a, |da| add_assign(da, g, sv));
                self.acc(grads, sid, |ds| {
                    let mut total = 0.0;
                    for (&gv, &xv) in g.data.iter().zip(&va.data) {
                        total += gv * xv;
                    }
                    ds.data[0] += total;
                });
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(a);
                self.acc(grads, a, |da| {
                    for ((d, &gv), &xv) in da.data.iter_mut().zip(&g.data).zip(&va.data) {
                        if xv > lo && xv < hi {
                            *d += gv;
                        }
                    }
                });
            }
            Op::Transpose(a) => {
                let (rows, cols) = (g.rows, g.cols);
                self.acc(grads, a, |da| {
                    for r in 0..rows {
                        for c in 0..cols {
                            da.data[c * rows + r] += g.data[r * cols + c];
                        }
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(a).cols, self.value(b).cols);
                self.acc(grads, a, |da| {
                    for r in 0..g.rows {
                        for c in 0..ca {
                            da.data[r * ca + c] += g.data[r * (ca + cb) + c];
                        }
                    }
                });
                self.acc(grads, b, |db| {
                    for r in 0..g.rows {
                        for c in 0..cb {
                            db.data[r * cb + c] += g.data[r * (ca + cb) + ca + c];
                        }
                    }
                });
            }
            Op::MeanAll(a) => {
                let scale = 1.0 / self.value(a).data.len() as f64;
                let gv = g.item() * scale;
                self.acc(grads, a, |da| {
                    for d in &mut da.data {
                        *d += gv;
                    }
                });
            }
            Op::ColMean(a) => {
                let rows = self.value(a).rows;
                let scale = 1.0 / rows as f64;
                self.acc(grads, a, |da| {
                    for chunk in da.data.chunks_mut(g.cols) {
                        for (d, &gv) in chunk.iter_mut().zip(&g.data) {
                            *d += gv * scale;
                        }
                    }
                });
            }
            Op::RowBlockMean(a, block) => {
                let cols = g.cols;
                let scale = 1.0 / block as f64;
                self.acc(grads, a, |da| {
                    for r in 0..da.rows {
                        let src = r / block;
                        for c in 0..cols {
                            da.data[r * cols + c] += g.data[src * cols + c] * scale;
                        }
                    }
                });
            }
            Op::ExpandRows(a, times) => {
                let cols = g.cols;
                self.acc(grads, a, |da| {
                    for r in 0..g.rows {
                        let dst = r / times;
                        for c in 0..cols {
                            da.data[dst * cols + c] += g.data[r * cols + c];
                        }
                    }
                });
            }
            Op::TileRows(a, times) => {
                let cols = g.cols;
                self.acc(grads, a, |da| {
                    let p = da.rows;
                    for k in 0..times {
                        for r in 0..p {
                            for c in 0..cols {
                                da.data[r * cols + c] += g.data[(k * p + r) * cols + c];
                            }
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                self.acc(grads, a, |da| {
                    for (d, &gv) in da.data.iter_mut().zip(&g.data) {
                        *d += gv;
                    }
                });
            }
            Op::PairwiseDist(a) => {
                let coords = self.value(a);
                let dist = &self.nodes[i].value;
                let n = coords.rows;
                self.acc(grads, a, |da| {
                    for r in 0..n {
                        for c in 0..n {
                            if r == c {
                                continue;
                            }
                            let d = dist.data[r * n + c];
                            if d < 1e-12 {
                                continue;
                            }
                            let gv = g.data[r * n + c];
                            if gv == 0.0 {
                                continue;
                            }
                            let dx = (coords.data[2 * r] - coords.data[2 * c]) / d;
                            let dy = (coords.data[2 * r + 1] - coords.data[2 * c + 1]) / d;
                            da.data[2 * r] += gv * dx;
                            da.data[2 * r + 1] += gv * dy;
                            da.data[2 * c] -= gv * dx;
                            da.data[2 * c + 1] -= gv * dy;
                        }
                    }
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, f: impl FnOnce(&mut Tensor)) {
        if let Some(buf) = self.grad_buf(grads, id) {
            f(buf);
        }
    }
}

fn add_assign(dst: &mut Tensor, src: &Tensor, scale: f64) {
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d += s * scale;
    }
}

/// Adam optimizer state over a list of tensors.
///
/// `step` performs a descent step; callers that maximize negate their
/// gradients first.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..param.data.len() {
                let g = grad.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * g;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m.data[k] / bc1;
                let v_hat = v.data[k] / bc2;
                param.data[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
