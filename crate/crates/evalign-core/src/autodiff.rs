//! Minimal reverse-mode differentiation over f64 scalars, vectors, and
//! matrices.
//!
//! The tape is define-by-run: every op computes its value eagerly and records
//! enough structure to push gradients back to its parents. Reductions run in
//! a fixed order, so repeated evaluation of the same graph is bit-identical.
//!
//! Shape errors inside the tape are programming errors (graphs are built by
//! this crate, not from user input), so accessors panic rather than return
//! `Result`.

use ndarray::{Array1, Array2, Axis};

const LAYER_NORM_EPS: f64 = 1e-5;

/// A tape value: rank 0, 1, or 2.
#[derive(Debug, Clone)]
pub enum Value {
    Scalar(f64),
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl Value {
    pub fn scalar(&self) -> f64 {
        match self {
            Value::Scalar(s) => *s,
            other => panic!("expected scalar, got {}", other.kind()),
        }
    }

    pub fn vector(&self) -> &Array1<f64> {
        match self {
            Value::Vector(v) => v,
            other => panic!("expected vector, got {}", other.kind()),
        }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        match self {
            Value::Matrix(m) => m,
            other => panic!("expected matrix, got {}", other.kind()),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Vector(_) => "vector",
            Value::Matrix(_) => "matrix",
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Scalar(_) => Value::Scalar(0.0),
            Value::Vector(v) => Value::Vector(Array1::zeros(v.len())),
            Value::Matrix(m) => Value::Matrix(Array2::zeros(m.dim())),
        }
    }

    fn add_assign(&mut self, other: &Value) {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => *a += b,
            (Value::Vector(a), Value::Vector(b)) => *a += b,
            (Value::Matrix(a), Value::Matrix(b)) => *a += b,
            (a, b) => panic!("gradient rank mismatch: {} vs {}", a.kind(), b.kind()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Matrix product A(r,k) . B(k,c).
    MatMul(NodeId, NodeId),
    /// Row vector v(k) . B(k,c) -> vector(c).
    VecMat(NodeId, NodeId),
    Transpose(NodeId),
    /// Matrix plus a row vector broadcast over rows.
    AddRow(NodeId, NodeId),
    /// Element-wise sum of same-shape values.
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Exp(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    /// Row-wise layer norm with per-feature gain/bias vectors.
    LayerNormRows { x: NodeId, gamma: NodeId, beta: NodeId },
    /// Column means: matrix(t,w) -> vector(w).
    MeanRows(NodeId),
    /// L2 normalization of a vector or of each matrix row.
    L2Normalize(NodeId),
    /// Stack vectors(w) into a matrix(n,w).
    ConcatRows(Vec<NodeId>),
    /// Mean of the selected entries -> scalar.
    MeanEntries(NodeId, Vec<(usize, usize)>),
    SumAll(NodeId),
}

struct Node {
    op: Op,
    value: Value,
}

/// Gradients indexed by node, produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `id`; zero-filled when
    /// the node does not influence the root.
    pub fn get(&self, id: NodeId, tape: &Tape) -> Value {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => tape.nodes[id.0].value.zeros_like(),
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Value) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Value) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, s: f64) -> NodeId {
        self.leaf(Value::Scalar(s))
    }

    pub fn vector(&mut self, v: Array1<f64>) -> NodeId {
        self.leaf(Value::Vector(v))
    }

    pub fn matrix(&mut self, m: Array2<f64>) -> NodeId {
        self.leaf(Value::Matrix(m))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matrix().dot(self.value(b).matrix());
        self.push(Op::MatMul(a, b), Value::Matrix(v))
    }

    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> NodeId {
        let out = self.value(v).vector().dot(self.value(m).matrix());
        self.push(Op::VecMat(v, m), Value::Vector(out))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).matrix().t().to_owned();
        self.push(Op::Transpose(a), Value::Matrix(v))
    }

    pub fn add_row(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let out = self.value(m).matrix() + self.value(v).vector();
        self.push(Op::AddRow(m, v), Value::Matrix(out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = match (self.value(a), self.value(b)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x + y),
            (Value::Vector(x), Value::Vector(y)) => Value::Vector(x + y),
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x + y),
            (x, y) => panic!("add rank mismatch: {} vs {}", x.kind(), y.kind()),
        };
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = match (self.value(a), self.value(b)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x - y),
            (Value::Vector(x), Value::Vector(y)) => Value::Vector(x - y),
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x - y),
            (x, y) => panic!("sub rank mismatch: {} vs {}", x.kind(), y.kind()),
        };
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = match (self.value(a), self.value(b)) {
            (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x * y),
            (Value::Vector(x), Value::Vector(y)) => Value::Vector(x * y),
            (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x * y),
            (x, y) => panic!("mul rank mismatch: {} vs {}", x.kind(), y.kind()),
        };
        self.push(Op::MulElem(a, b), v)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = match self.value(a) {
            Value::Scalar(x) => Value::Scalar(x * c),
            Value::Vector(x) => Value::Vector(x * c),
            Value::Matrix(x) => Value::Matrix(x * c),
        };
        self.push(Op::Scale(a, c), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Scalar(x) => Value::Scalar(x.tanh()),
            Value::Vector(x) => Value::Vector(x.mapv(f64::tanh)),
            Value::Matrix(x) => Value::Matrix(x.mapv(f64::tanh)),
        };
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Scalar(x) => Value::Scalar(x.exp()),
            Value::Vector(x) => Value::Vector(x.mapv(f64::exp)),
            Value::Matrix(x) => Value::Matrix(x.mapv(f64::exp)),
        };
        self.push(Op::Exp(a), v)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a).matrix());
        self.push(Op::SoftmaxRows(a), Value::Matrix(v))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = log_softmax_rows(self.value(a).matrix());
        self.push(Op::LogSoftmaxRows(a), Value::Matrix(v))
    }

    pub fn layer_norm_rows(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xm = self.value(x).matrix();
        let g = self.value(gamma).vector();
        let b = self.value(beta).vector();
        let mut out = Array2::zeros(xm.dim());
        for (mut orow, xrow) in out.rows_mut().into_iter().zip(xm.rows()) {
            let w = xrow.len() as f64;
            let mean = xrow.sum() / w;
            let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / w;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for ((o, &xv), (&gv, &bv)) in
                orow.iter_mut().zip(xrow.iter()).zip(g.iter().zip(b.iter()))
            {
                *o = (xv - mean) * inv * gv + bv;
            }
        }
        self.push(Op::LayerNormRows { x, gamma, beta }, Value::Matrix(out))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let m = self.value(a).matrix();
        let v = m.mean_axis(Axis(0)).expect("mean of empty matrix");
        self.push(Op::MeanRows(a), Value::Vector(v))
    }

    pub fn l2_normalize(&mut self, a: NodeId) -> NodeId {
        let v = match self.value(a) {
            Value::Vector(x) => Value::Vector(normalize_vec(x)),
            Value::Matrix(x) => {
                let mut out = x.clone();
                for mut row in out.rows_mut() {
                    let n = row.dot(&row).sqrt();
                    row.mapv_inplace(|v| v / n);
                }
                Value::Matrix(out)
            }
            Value::Scalar(_) => panic!("cannot normalize a scalar"),
        };
        self.push(Op::L2Normalize(a), v)
    }

    pub fn concat_rows(&mut self, rows: Vec<NodeId>) -> NodeId {
        assert!(!rows.is_empty(), "concat of zero rows");
        let w = self.value(rows[0]).vector().len();
        let mut m = Array2::zeros((rows.len(), w));
        for (i, &r) in rows.iter().enumerate() {
            m.row_mut(i).assign(self.value(r).vector());
        }
        self.push(Op::ConcatRows(rows), Value::Matrix(m))
    }

    pub fn mean_entries(&mut self, a: NodeId, entries: Vec<(usize, usize)>) -> NodeId {
        assert!(!entries.is_empty(), "mean of zero entries");
        let m = self.value(a).matrix();
        let s: f64 = entries.iter().map(|&(r, c)| m[(r, c)]).sum();
        let v = s / entries.len() as f64;
        self.push(Op::MeanEntries(a, entries), Value::Scalar(v))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = match self.value(a) {
            Value::Scalar(x) => *x,
            Value::Vector(x) => x.sum(),
            Value::Matrix(x) => x.sum(),
        };
        self.push(Op::SumAll(a), Value::Scalar(s))
    }

    /// Backpropagates from a scalar `root`, returning per-node gradients.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Value>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Value::Scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.push_to_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(grads: &mut [Option<Value>], id: NodeId, delta: Value) {
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn push_to_parents(&self, idx: usize, g: &Value, grads: &mut [Option<Value>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gm = g.matrix();
                let av = self.value(*a).matrix();
                let bv = self.value(*b).matrix();
                Self::accumulate(grads, *a, Value::Matrix(gm.dot(&bv.t())));
                Self::accumulate(grads, *b, Value::Matrix(av.t().dot(gm)));
            }
            Op::VecMat(v, m) => {
                let gv = g.vector();
                let vv = self.value(*v).vector();
                let mv = self.value(*m).matrix();
                Self::accumulate(grads, *v, Value::Vector(mv.dot(gv)));
                let mut gm = Array2::zeros(mv.dim());
                for (i, &vi) in vv.iter().enumerate() {
                    for (j, &gj) in gv.iter().enumerate() {
                        gm[(i, j)] = vi * gj;
                    }
                }
                Self::accumulate(grads, *m, Value::Matrix(gm));
            }
            Op::Transpose(a) => {
                Self::accumulate(grads, *a, Value::Matrix(g.matrix().t().to_owned()));
            }
            Op::AddRow(m, v) => {
                let gm = g.matrix();
                Self::accumulate(grads, *m, Value::Matrix(gm.clone()));
                Self::accumulate(grads, *v, Value::Vector(gm.sum_axis(Axis(0))));
            }
            Op::Add(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                Self::accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                Self::accumulate(grads, *a, g.clone());
                let neg = match g {
                    Value::Scalar(x) => Value::Scalar(-x),
                    Value::Vector(x) => Value::Vector(-x),
                    Value::Matrix(x) => Value::Matrix(-x),
                };
                Self::accumulate(grads, *b, neg);
            }
            Op::MulElem(a, b) => {
                let prod = |g: &Value, other: &Value| match (g, other) {
                    (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x * y),
                    (Value::Vector(x), Value::Vector(y)) => Value::Vector(x * y),
                    (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x * y),
                    _ => unreachable!("mul parents validated at construction"),
                };
                Self::accumulate(grads, *a, prod(g, self.value(*b)));
                Self::accumulate(grads, *b, prod(g, self.value(*a)));
            }
            Op::Scale(a, c) => {
                let delta = match g {
                    Value::Scalar(x) => Value::Scalar(x * c),
                    Value::Vector(x) => Value::Vector(x * *c),
                    Value::Matrix(x) => Value::Matrix(x * *c),
                };
                Self::accumulate(grads, *a, delta);
            }
            Op::Tanh(a) => {
                let y = &self.nodes[idx].value;
                let delta = match (g, y) {
                    (Value::Scalar(gx), Value::Scalar(yx)) => Value::Scalar(gx * (1.0 - yx * yx)),
                    (Value::Vector(gx), Value::Vector(yx)) => {
                        Value::Vector(gx * &yx.mapv(|v| 1.0 - v * v))
                    }
                    (Value::Matrix(gx), Value::Matrix(yx)) => {
                        Value::Matrix(gx * &yx.mapv(|v| 1.0 - v * v))
                    }
                    _ => unreachable!(),
                };
                Self::accumulate(grads, *a, delta);
            }
            Op::Exp(a) => {
                let y = &self.nodes[idx].value;
                let delta = match (g, y) {
                    (Value::Scalar(gx), Value::Scalar(yx)) => Value::Scalar(gx * yx),
                    (Value::Vector(gx), Value::Vector(yx)) => Value::Vector(gx * yx),
                    (Value::Matrix(gx), Value::Matrix(yx)) => Value::Matrix(gx * yx),
                    _ => unreachable!(),
                };
                Self::accumulate(grads, *a, delta);
            }
            Op::SoftmaxRows(a) => {
                let p = self.nodes[idx].value.matrix();
                let gm = g.matrix();
                let mut gx = Array2::zeros(p.dim());
                for ((mut grow, prow), gout) in
                    gx.rows_mut().into_iter().zip(p.rows()).zip(gm.rows())
                {
                    let dot = gout.dot(&prow);
                    for ((gi, &pi), &goi) in grow.iter_mut().zip(prow.iter()).zip(gout.iter()) {
                        *gi = pi * (goi - dot);
                    }
                }
                Self::accumulate(grads, *a, Value::Matrix(gx));
            }
            Op::LogSoftmaxRows(a) => {
                let lsm = self.nodes[idx].value.matrix();
                let gm = g.matrix();
                let mut gx = Array2::zeros(lsm.dim());
                for ((mut grow, lrow), gout) in
                    gx.rows_mut().into_iter().zip(lsm.rows()).zip(gm.rows())
                {
                    let gsum = gout.sum();
                    for ((gi, &li), &goi) in grow.iter_mut().zip(lrow.iter()).zip(gout.iter()) {
                        *gi = goi - li.exp() * gsum;
                    }
                }
                Self::accumulate(grads, *a, Value::Matrix(gx));
            }
            Op::LayerNormRows { x, gamma, beta } => {
                let xm = self.value(*x).matrix();
                let gv = self.value(*gamma).vector();
                let gm = g.matrix();
                let w = xm.ncols() as f64;
                let mut gx = Array2::zeros(xm.dim());
                let mut ggamma = Array1::zeros(gv.len());
                let mut gbeta = Array1::zeros(gv.len());
                for (xrow, gout) in xm.rows().into_iter().zip(gm.rows()) {
                    let mean = xrow.sum() / w;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / w;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Array1<f64> = xrow.iter().map(|&v| (v - mean) * inv).collect();
                    for i in 0..gv.len() {
                        ggamma[i] += gout[i] * xhat[i];
                        gbeta[i] += gout[i];
                    }
                }
                for ((mut gxrow, xrow), gout) in
                    gx.rows_mut().into_iter().zip(xm.rows()).zip(gm.rows())
                {
                    let mean = xrow.sum() / w;
                    let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / w;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let xhat: Array1<f64> = xrow.iter().map(|&v| (v - mean) * inv).collect();
                    let gy: Array1<f64> =
                        gout.iter().zip(gv.iter()).map(|(&a, &b)| a * b).collect();
                    let gy_mean = gy.sum() / w;
                    let gyxhat_mean = gy.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<f64>() / w;
                    for i in 0..xhat.len() {
                        gxrow[i] = inv * (gy[i] - gy_mean - xhat[i] * gyxhat_mean);
                    }
                }
                Self::accumulate(grads, *x, Value::Matrix(gx));
                Self::accumulate(grads, *gamma, Value::Vector(ggamma));
                Self::accumulate(grads, *beta, Value::Vector(gbeta));
            }
            Op::MeanRows(a) => {
                let m = self.value(*a).matrix();
                let gv = g.vector();
                let rows = m.nrows() as f64;
                let mut gm = Array2::zeros(m.dim());
                for mut row in gm.rows_mut() {
                    for (o, &gi) in row.iter_mut().zip(gv.iter()) {
                        *o = gi / rows;
                    }
                }
                Self::accumulate(grads, *a, Value::Matrix(gm));
            }
            Op::L2Normalize(a) => {
                let delta = match (self.value(*a), &self.nodes[idx].value, g) {
                    (Value::Vector(x), Value::Vector(y), Value::Vector(gout)) => {
                        let n = x.dot(x).sqrt();
                        let proj = y.dot(gout);
                        Value::Vector((gout - &(y * proj)) / n)
                    }
                    (Value::Matrix(x), Value::Matrix(y), Value::Matrix(gout)) => {
                        let mut gx = Array2::zeros(x.dim());
                        for (((mut grow, xrow), yrow), gorow) in gx
                            .rows_mut()
                            .into_iter()
                            .zip(x.rows())
                            .zip(y.rows())
                            .zip(gout.rows())
                        {
                            let n = xrow.dot(&xrow).sqrt();
                            let proj = yrow.dot(&gorow);
                            for i in 0..grow.len() {
                                grow[i] = (gorow[i] - yrow[i] * proj) / n;
                            }
                        }
                        Value::Matrix(gx)
                    }
                    _ => unreachable!(),
                };
                Self::accumulate(grads, *a, delta);
            }
            Op::ConcatRows(rows) => {
                let gm = g.matrix();
                for (i, &r) in rows.iter().enumerate() {
                    Self::accumulate(grads, r, Value::Vector(gm.row(i).to_owned()));
                }
            }
            Op::MeanEntries(a, entries) => {
                let gs = g.scalar() / entries.len() as f64;
                let mut gm = Array2::zeros(self.value(*a).matrix().dim());
                for &(r, c) in entries {
                    gm[(r, c)] += gs;
                }
                Self::accumulate(grads, *a, Value::Matrix(gm));
            }
            Op::SumAll(a) => {
                let gs = g.scalar();
                let delta = match self.value(*a) {
                    Value::Scalar(_) => Value::Scalar(gs),
                    Value::Vector(x) => Value::Vector(Array1::from_elem(x.len(), gs)),
                    Value::Matrix(x) => Value::Matrix(Array2::from_elem(x.dim(), gs)),
                };
                Self::accumulate(grads, *a, delta);
            }
        }
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let logsum = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - logsum);
    }
    out
}

fn normalize_vec(x: &Array1<f64>) -> Array1<f64> {
    let n = x.dot(x).sqrt();
    x / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Central-difference gradient of a scalar function of one matrix leaf.
    fn fd_grad(
        f: &dyn Fn(&Array2<f64>) -> f64,
        x: &Array2<f64>,
        h: f64,
    ) -> Array2<f64> {
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.as_slice_mut().unwrap()[idx] += h;
            minus.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num = (a - b).mapv(|v| v * v).sum().sqrt();
        let den = b.mapv(|v| v * v).sum().sqrt().max(1e-12);
        num / den
    }

    fn random_matrix(rng: &mut ChaCha12Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_chain_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x0 = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 2);

        let eval = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xn = t.matrix(x.clone());
            let wn = t.matrix(w.clone());
            let y = t.matmul(xn, wn);
            let s = t.sum_all(y);
            t.value(s).scalar()
        };

        let mut t = Tape::new();
        let xn = t.matrix(x0.clone());
        let wn = t.matrix(w.clone());
        let y = t.matmul(xn, wn);
        let s = t.sum_all(y);
        let grads = t.backward(s);
        let analytic = grads.get(xn, &t);

        let fd = fd_grad(&eval, &x0, 1e-6);
        assert!(rel_err(analytic.matrix(), &fd) < 1e-8);
    }

    #[test]
    fn composite_nonlinear_gradient_matches_finite_differences() {
        // Exercises layer norm, softmax, log-softmax, tanh, normalize, and
        // the reductions in one graph.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let x0 = random_matrix(&mut rng, 4, 5);
        let gamma = Array1::from_shape_fn(5, |_| rng.random_range(0.5..1.5));
        let beta = Array1::from_shape_fn(5, |_| rng.random_range(-0.2..0.2));
        let w = random_matrix(&mut rng, 5, 5);

        let eval = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xn = t.matrix(x.clone());
            let gn = t.vector(gamma.clone());
            let bn = t.vector(beta.clone());
            let wn = t.matrix(w.clone());
            let ln = t.layer_norm_rows(xn, gn, bn);
            let h = t.matmul(ln, wn);
            let h = t.tanh(h);
            let sm = t.softmax_rows(h);
            let lsm = t.log_softmax_rows(h);
            let prod = t.mul_elem(sm, lsm);
            let pooled = t.mean_rows(prod);
            let normed = t.l2_normalize(pooled);
            let stacked = t.concat_rows(vec![normed]);
            let picked = t.mean_entries(stacked, vec![(0, 0), (0, 3)]);
            let total = t.sum_all(picked);
            t.value(total).scalar()
        };

        let mut t = Tape::new();
        let xn = t.matrix(x0.clone());
        let gn = t.vector(gamma.clone());
        let bn = t.vector(beta.clone());
        let wn = t.matrix(w.clone());
        let ln = t.layer_norm_rows(xn, gn, bn);
        let h = t.matmul(ln, wn);
        let h = t.tanh(h);
        let sm = t.softmax_rows(h);
        let lsm = t.log_softmax_rows(h);
        let prod = t.mul_elem(sm, lsm);
        let pooled = t.mean_rows(prod);
        let normed = t.l2_normalize(pooled);
        let stacked = t.concat_rows(vec![normed]);
        let picked = t.mean_entries(stacked, vec![(0, 0), (0, 3)]);
        let total = t.sum_all(picked);
        let grads = t.backward(total);
        let analytic = grads.get(xn, &t);

        let fd = fd_grad(&eval, &x0, 1e-5);
        assert!(
            rel_err(analytic.matrix(), &fd) < 1e-7,
            "rel err {}",
            rel_err(analytic.matrix(), &fd)
        );
    }

    #[test]
    fn vecmat_and_addrow_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let m0 = random_matrix(&mut rng, 3, 4);
        let v = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));

        let eval = |m: &Array2<f64>| {
            let mut t = Tape::new();
            let vn = t.vector(v.clone());
            let mn = t.matrix(m.clone());
            let bn = t.vector(bias.clone());
            let out = t.vecmat(vn, mn);
            let row = t.concat_rows(vec![out]);
            let biased = t.add_row(row, bn);
            let e = t.exp(biased);
            let s = t.sum_all(e);
            t.value(s).scalar()
        };

        let mut t = Tape::new();
        let vn = t.vector(v.clone());
        let mn = t.matrix(m0.clone());
        let bn = t.vector(bias.clone());
        let out = t.vecmat(vn, mn);
        let row = t.concat_rows(vec![out]);
        let biased = t.add_row(row, bn);
        let e = t.exp(biased);
        let s = t.sum_all(e);
        let grads = t.backward(s);
        let analytic = grads.get(mn, &t);

        let fd = fd_grad(&eval, &m0, 1e-6);
        assert!(rel_err(analytic.matrix(), &fd) < 1e-8);
    }

    #[test]
    fn softmax_rows_is_a_distribution() {
        let m = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax_rows(&m);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn disconnected_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let a = t.matrix(array![[1.0, 2.0]]);
        let b = t.matrix(array![[3.0, 4.0]]);
        let s = t.sum_all(a);
        let grads = t.backward(s);
        let gb = grads.get(b, &t);
        assert!(gb.matrix().iter().all(|&v| v == 0.0));
    }
}
