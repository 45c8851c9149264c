//! Tape-based reverse-mode differentiation over `f64` matrices.
//!
//! Values are computed eagerly as the graph is built, so a tape doubles as a
//! forward evaluator; [`Tape::backward`] then walks the recorded ops in
//! reverse and accumulates gradients for every node that (transitively)
//! depends on a differentiable leaf. The op set is exactly what the model
//! needs: matrix products, row broadcasts, the activations (softplus, clamped
//! exp, gelu, relu, log), causal/log softmax, layer norm, row gather/assembly,
//! entry selection, and weighted reductions.

use ndarray::{s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    /// `a (m x k) . b (k x n)`
    MatMul(NodeId, NodeId),
    /// `a (m x k) . b^T` with `b (n x k)`
    MatMulTransB(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a (m x d) + row (1 x d)` broadcast over rows
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Mul(NodeId, NodeId),
    Softplus(NodeId),
    ExpClamp(NodeId, f64),
    Gelu(NodeId),
    Relu(NodeId),
    Log(NodeId),
    /// Row-wise softmax over columns `<= row index` (square input).
    CausalSoftmax(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    GatherRows { src: NodeId, rows: Vec<usize> },
    /// Output row `i` copies `sources[i].1`-th row of node `sources[i].0`.
    AssembleRows { sources: Vec<(NodeId, usize)> },
    /// `(m x 1)` column of `src[coords[i]]`.
    GatherEntries { src: NodeId, coords: Vec<(usize, usize)> },
    SumAll(NodeId),
    WeightedSumAll { src: NodeId, weights: Array2<f64> },
    /// Even columns take cos, odd columns sin.
    SinCosParity(NodeId),
    SliceCols { src: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    /// Elementwise product with a fixed mask (dropout: entries 0 or 1/(1-p)).
    MaskMul { src: NodeId, mask: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Overflow-safe `log(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-form gelu.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Reverse-mode tape. Build the graph through the op methods, then call
/// [`Tape::backward`] on a scalar (1x1) node.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    pub fn leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(self.value(b));
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// `a . b^T`, the natural product for `out x in` weight layouts.
    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::MatMulTransB(a, b), g)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = self.value(a) + self.value(b);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Add(a, b), g)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.value(row).nrows(), 1);
        debug_assert_eq!(self.value(a).ncols(), self.value(row).ncols());
        let v = self.value(a) + &self.value(row).row(0);
        let g = self.any_grad(&[a, row]);
        self.push(v, Op::AddRow(a, row), g)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = self.value(a) * k;
        let g = self.needs_grad(a);
        self.push(v, Op::Scale(a, k), g)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.value(a).dim(), self.value(b).dim());
        let v = self.value(a) * self.value(b);
        let g = self.any_grad(&[a, b]);
        self.push(v, Op::Mul(a, b), g)
    }

    pub fn softplus_node(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(softplus);
        let g = self.needs_grad(a);
        self.push(v, Op::Softplus(a), g)
    }

    /// `exp(min(x, cap))`.
    pub fn exp_clamp(&mut self, a: NodeId, cap: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x.min(cap).exp());
        let g = self.needs_grad(a);
        self.push(v, Op::ExpClamp(a, cap), g)
    }

    pub fn gelu_node(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(gelu);
        let g = self.needs_grad(a);
        self.push(v, Op::Gelu(a), g)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let g = self.needs_grad(a);
        self.push(v, Op::Relu(a), g)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(f64::ln);
        let g = self.needs_grad(a);
        self.push(v, Op::Log(a), g)
    }

    pub fn causal_softmax(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        debug_assert_eq!(x.nrows(), x.ncols(), "causal softmax expects square scores");
        let n = x.nrows();
        let mut v = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            let row = x.row(i);
            let max = (0..=i).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..=i {
                let e = (row[j] - max).exp();
                v[[i, j]] = e;
                denom += e;
            }
            for j in 0..=i {
                v[[i, j]] /= denom;
            }
        }
        let g = self.needs_grad(a);
        self.push(v, Op::CausalSoftmax(a), g)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let g = self.needs_grad(a);
        self.push(v, Op::LogSoftmaxRows(a), g)
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> NodeId {
        let xs = self.value(x);
        let g_row = self.value(gain).row(0).to_owned();
        let b_row = self.value(bias).row(0).to_owned();
        let d = xs.ncols() as f64;
        let mut v = xs.clone();
        for mut row in v.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let inv_std = 1.0 / (var + eps).sqrt();
            for (j, e) in row.iter_mut().enumerate() {
                *e = g_row[j] * (*e - mean) * inv_std + b_row[j];
            }
        }
        let g = self.any_grad(&[x, gain, bias]);
        self.push(v, Op::LayerNorm { x, gain, bias, eps }, g)
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: Vec<usize>) -> NodeId {
        let x = self.value(src);
        let mut v = Array2::<f64>::zeros((rows.len(), x.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).assign(&x.row(r));
        }
        let g = self.needs_grad(src);
        self.push(v, Op::GatherRows { src, rows }, g)
    }

    pub fn assemble_rows(&mut self, sources: Vec<(NodeId, usize)>, ncols: usize) -> NodeId {
        let mut v = Array2::<f64>::zeros((sources.len(), ncols));
        for (i, &(node, row)) in sources.iter().enumerate() {
            v.row_mut(i).assign(&self.value(node).row(row));
        }
        let g = sources.iter().any(|&(node, _)| self.needs_grad(node));
        self.push(v, Op::AssembleRows { sources }, g)
    }

    pub fn gather_entries(&mut self, src: NodeId, coords: Vec<(usize, usize)>) -> NodeId {
        let x = self.value(src);
        let mut v = Array2::<f64>::zeros((coords.len(), 1));
        for (i, &(r, c)) in coords.iter().enumerate() {
            v[[i, 0]] = x[[r, c]];
        }
        let g = self.needs_grad(src);
        self.push(v, Op::GatherEntries { src, coords }, g)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let g = self.needs_grad(a);
        self.push(v, Op::SumAll(a), g)
    }

    pub fn weighted_sum_all(&mut self, src: NodeId, weights: Array2<f64>) -> NodeId {
        debug_assert_eq!(self.value(src).dim(), weights.dim());
        let v = Array2::from_elem((1, 1), (self.value(src) * &weights).sum());
        let g = self.needs_grad(src);
        self.push(v, Op::WeightedSumAll { src, weights }, g)
    }

    pub fn sin_cos_parity(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for ((_, c), e) in v.indexed_iter_mut() {
            *e = if c % 2 == 0 { e.cos() } else { e.sin() };
        }
        let g = self.needs_grad(a);
        self.push(v, Op::SinCosParity(a), g)
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(src).slice(s![.., start..start + len]).to_owned();
        let g = self.needs_grad(src);
        self.push(v, Op::SliceCols { src, start, len }, g)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        let g = self.any_grad(&parts);
        self.push(v, Op::ConcatCols(parts), g)
    }

    pub fn mask_mul(&mut self, src: NodeId, mask: Array2<f64>) -> NodeId {
        debug_assert_eq!(self.value(src).dim(), mask.dim());
        let v = self.value(src) * &mask;
        let g = self.needs_grad(src);
        self.push(v, Op::MaskMul { src, mask }, g)
    }

    /// True if the node's value contains any non-finite entry.
    pub fn has_non_finite(&self, id: NodeId) -> bool {
        self.value(id).iter().any(|v| !v.is_finite())
    }

    /// Propagates gradients from a scalar root back to every node that needs
    /// them.
    pub fn backward(&self, root: NodeId) -> TapeGrads {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let acc = |grads: &mut Vec<Option<Array2<f64>>>, id: NodeId, c: Array2<f64>| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(existing) => *existing += &c,
                    slot @ None => *slot = Some(c),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g); // keep for the caller
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulTransB(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *row, drow);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Softplus(a) => {
                    let da = &g * &self.value(*a).mapv(sigmoid);
                    acc(&mut grads, *a, da);
                }
                Op::ExpClamp(a, cap) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut da = g.clone();
                    for ((r, c), e) in da.indexed_iter_mut() {
                        *e *= if x[[r, c]] < *cap { y[[r, c]] } else { 0.0 };
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let da = &g * &self.value(*a).mapv(gelu_deriv);
                    acc(&mut grads, *a, da);
                }
                Op::Relu(a) => {
                    let da = &g * &self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, da);
                }
                Op::Log(a) => {
                    let da = &g / self.value(*a);
                    acc(&mut grads, *a, da);
                }
                Op::CausalSoftmax(a) => {
                    let y = &node.value;
                    let n = y.nrows();
                    let mut da = Array2::<f64>::zeros((n, n));
                    for r in 0..n {
                        let dot: f64 = (0..=r).map(|j| g[[r, j]] * y[[r, j]]).sum();
                        for j in 0..=r {
                            da[[r, j]] = y[[r, j]] * (g[[r, j]] - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = g.clone();
                    for r in 0..y.nrows() {
                        let gsum: f64 = g.row(r).sum();
                        for c in 0..y.ncols() {
                            da[[r, c]] = g[[r, c]] - y[[r, c]].exp() * gsum;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let xs = self.value(*x);
                    let g_row = self.value(*gain).row(0).to_owned();
                    let d = xs.ncols();
                    let df = d as f64;
                    let mut dx = Array2::<f64>::zeros(xs.dim());
                    let mut dgain = Array2::<f64>::zeros((1, d));
                    let mut dbias = Array2::<f64>::zeros((1, d));
                    for r in 0..xs.nrows() {
                        let row = xs.row(r);
                        let mean = row.sum() / df;
                        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / df;
                        let inv_std = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|&x| (x - mean) * inv_std).collect();
                        let dxhat: Vec<f64> =
                            (0..d).map(|j| g[[r, j]] * g_row[j]).collect();
                        let m_dxhat: f64 = dxhat.iter().sum::<f64>() / df;
                        let m_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / df;
                        for j in 0..d {
                            dx[[r, j]] = inv_std * (dxhat[j] - m_dxhat - xhat[j] * m_dxhat_xhat);
                            dgain[[0, j]] += g[[r, j]] * xhat[j];
                            dbias[[0, j]] += g[[r, j]];
                        }
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                }
                Op::GatherRows { src, rows } => {
                    let mut da = Array2::<f64>::zeros(self.value(*src).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut target = da.row_mut(r);
                        target += &g.row(i);
                    }
                    acc(&mut grads, *src, da);
                }
                Op::AssembleRows { sources } => {
                    // group contributions per source node
                    let mut per_node: Vec<(NodeId, Array2<f64>)> = Vec::new();
                    for (i, &(nid, row)) in sources.iter().enumerate() {
                        if !self.nodes[nid.0].needs_grad {
                            continue;
                        }
                        let slot = match per_node.iter_mut().find(|(p, _)| *p == nid) {
                            Some((_, m)) => m,
                            None => {
                                per_node.push((nid, Array2::zeros(self.value(nid).dim())));
                                &mut per_node.last_mut().unwrap().1
                            }
                        };
                        let mut target = slot.row_mut(row);
                        target += &g.row(i);
                    }
                    for (nid, da) in per_node {
                        acc(&mut grads, nid, da);
                    }
                }
                Op::GatherEntries { src, coords } => {
                    let mut da = Array2::<f64>::zeros(self.value(*src).dim());
                    for (i, &(r, c)) in coords.iter().enumerate() {
                        da[[r, c]] += g[[i, 0]];
                    }
                    acc(&mut grads, *src, da);
                }
                Op::SumAll(a) => {
                    let da = Array2::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, da);
                }
                Op::WeightedSumAll { src, weights } => {
                    let da = weights * g[[0, 0]];
                    acc(&mut grads, *src, da);
                }
                Op::SinCosParity(a) => {
                    let x = self.value(*a);
                    let mut da = g.clone();
                    for ((r, c), e) in da.indexed_iter_mut() {
                        *e *= if c % 2 == 0 { -x[[r, c]].sin() } else { x[[r, c]].cos() };
                    }
                    acc(&mut grads, *a, da);
                }
                Op::SliceCols { src, start, len } => {
                    let mut da = Array2::<f64>::zeros(self.value(*src).dim());
                    da.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *src, da);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let dp = g.slice(s![.., start..start + w]).to_owned();
                        acc(&mut grads, p, dp);
                        start += w;
                    }
                }
                Op::MaskMul { src, mask } => {
                    let da = &g * mask;
                    acc(&mut grads, *src, da);
                }
            }
        }
        TapeGrads(grads)
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct TapeGrads(Vec<Option<Array2<f64>>>);

impl TapeGrads {
    pub fn get(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.0[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array2<f64>> {
        self.0[id.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences of `f` at `x0`, entry by entry.
    fn fd_grad(f: &dyn Fn(&Array2<f64>) -> f64, x0: &Array2<f64>, h: f64) -> Array2<f64> {
        let mut out = Array2::zeros(x0.dim());
        for idx in 0..x0.len() {
            let (r, c) = (idx / x0.ncols(), idx % x0.ncols());
            let mut plus = x0.clone();
            plus[[r, c]] += h;
            let mut minus = x0.clone();
            minus[[r, c]] -= h;
            out[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn check_op(build: &dyn Fn(&mut Tape, NodeId) -> NodeId, x0: &Array2<f64>, tol: f64) {
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let leaf = t.leaf(x.clone(), true);
            let out = build(&mut t, leaf);
            t.value(out)[[0, 0]]
        };
        let mut t = Tape::new();
        let leaf = t.leaf(x0.clone(), true);
        let out = build(&mut t, leaf);
        let grads = t.backward(out);
        let ad = grads.get(leaf).expect("leaf grad");
        let fd = fd_grad(&f, x0, 1e-6);
        for (a, b) in ad.iter().zip(fd.iter()) {
            let denom = a.abs().max(b.abs()).max(1.0);
            assert!(
                (a - b).abs() / denom < tol,
                "ad {a} vs fd {b} (tol {tol})"
            );
        }
    }

    #[test]
    fn matmul_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_mat(&mut rng, 4, 3);
        let x0 = rand_mat(&mut rng, 2, 3);
        check_op(
            &|t, leaf| {
                let w = t.constant(w.clone());
                let y = t.matmul_tb(leaf, w);
                t.sum_all(y)
            },
            &x0,
            1e-6,
        );
        // also check the weight-side gradient through plain matmul
        let a = rand_mat(&mut rng, 3, 2);
        check_op(
            &|t, leaf| {
                let a = t.constant(a.clone());
                let y = t.matmul(a, leaf);
                let sq = t.mul(y, y);
                t.sum_all(sq)
            },
            &rand_mat(&mut rng, 2, 4),
            1e-5,
        );
    }

    #[test]
    fn activation_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = rand_mat(&mut rng, 3, 4) * 2.0;
        check_op(&|t, l| { let y = t.softplus_node(l); t.sum_all(y) }, &x0, 1e-6);
        check_op(&|t, l| { let y = t.gelu_node(l); t.sum_all(y) }, &x0, 1e-6);
        check_op(&|t, l| { let y = t.exp_clamp(l, 30.0); t.sum_all(y) }, &x0, 1e-6);
        let pos = x0.mapv(|v| v.abs() + 0.5);
        check_op(&|t, l| { let y = t.log(l); t.sum_all(y) }, &pos, 1e-6);
        let off_kink = x0.mapv(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
        check_op(&|t, l| { let y = t.relu(l); t.sum_all(y) }, &off_kink, 1e-6);
    }

    #[test]
    fn softmax_and_layernorm_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = rand_mat(&mut rng, 4, 4);
        let w = rand_mat(&mut rng, 4, 4);
        check_op(
            &|t, l| {
                let p = t.causal_softmax(l);
                let w = t.constant(w.clone());
                let y = t.mul(p, w);
                t.sum_all(y)
            },
            &x0,
            1e-5,
        );
        let w2 = rand_mat(&mut rng, 3, 5);
        check_op(
            &|t, l| {
                let p = t.log_softmax_rows(l);
                let w = t.constant(w2.clone());
                let y = t.mul(p, w);
                t.sum_all(y)
            },
            &rand_mat(&mut rng, 3, 5),
            1e-5,
        );
        let gain = rand_mat(&mut rng, 1, 5).mapv(|v| v + 1.5);
        let bias = rand_mat(&mut rng, 1, 5);
        let wl = rand_mat(&mut rng, 3, 5);
        check_op(
            &|t, l| {
                let g = t.constant(gain.clone());
                let b = t.constant(bias.clone());
                let y = t.layer_norm(l, g, b, 1e-5);
                let w = t.constant(wl.clone());
                let z = t.mul(y, w);
                t.sum_all(z)
            },
            &rand_mat(&mut rng, 3, 5),
            1e-4,
        );
        // gain/bias side
        let x = rand_mat(&mut rng, 3, 5);
        check_op(
            &|t, l| {
                let xc = t.constant(x.clone());
                let b = t.constant(bias.clone());
                let y = t.layer_norm(xc, l, b, 1e-5);
                let w = t.constant(wl.clone());
                let z = t.mul(y, w);
                t.sum_all(z)
            },
            &gain,
            1e-5,
        );
    }

    #[test]
    fn gather_assemble_slice_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = rand_mat(&mut rng, 5, 3);
        let w = rand_mat(&mut rng, 4, 3);
        check_op(
            &|t, l| {
                let y = t.gather_rows(l, vec![0, 2, 2, 4]);
                let w = t.constant(w.clone());
                let z = t.mul(y, w);
                t.sum_all(z)
            },
            &x0,
            1e-6,
        );
        check_op(
            &|t, l| {
                let y = t.assemble_rows(vec![(l, 1), (l, 1), (l, 3)], 3);
                t.sum_all(y)
            },
            &x0,
            1e-6,
        );
        check_op(
            &|t, l| {
                let y = t.gather_entries(l, vec![(0, 0), (2, 1), (2, 1)]);
                t.sum_all(y)
            },
            &x0,
            1e-6,
        );
        check_op(
            &|t, l| {
                let a = t.slice_cols(l, 0, 2);
                let b = t.slice_cols(l, 2, 1);
                let c = t.concat_cols(vec![b, a]);
                let sq = t.mul(c, c);
                t.sum_all(sq)
            },
            &x0,
            1e-5,
        );
    }

    #[test]
    fn sin_cos_parity_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = rand_mat(&mut rng, 3, 6) * 3.0;
        check_op(&|t, l| { let y = t.sin_cos_parity(l); t.sum_all(y) }, &x0, 1e-6);
    }

    #[test]
    fn weighted_sum_and_mask_grads_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = rand_mat(&mut rng, 4, 3);
        let w = rand_mat(&mut rng, 4, 3);
        check_op(&|t, l| t.weighted_sum_all(l, w.clone()), &x0, 1e-6);
        let mask = Array2::from_shape_fn((4, 3), |_| {
            if rng.gen_bool(0.5) { 0.0 } else { 2.0 }
        });
        check_op(&|t, l| { let y = t.mask_mul(l, mask.clone()); t.sum_all(y) }, &x0, 1e-6);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(arr2(&[[1.0, 2.0]]));
        let l = t.leaf(arr2(&[[3.0, 4.0]]), true);
        let y = t.mul(c, l);
        let s = t.sum_all(y);
        let grads = t.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(l).unwrap(), &arr2(&[[1.0, 2.0]]));
    }

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = x^2 at x=3: gradient 6, and FD is exact for quadratics
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let l = t.leaf(x.clone(), true);
            let y = t.mul(l, l);
            let s = t.sum_all(y);
            t.value(s)[[0, 0]]
        };
        let x0 = arr2(&[[3.0]]);
        let mut t = Tape::new();
        let l = t.leaf(x0.clone(), true);
        let y = t.mul(l, l);
        let s = t.sum_all(y);
        let mut grads = t.backward(s);
        let g = grads.take(l).unwrap();
        assert_eq!(g[[0, 0]], 6.0);
        for h in [1e-1, 1e-3, 1e-6] {
            let fd = (f(&arr2(&[[3.0 + h]])) - f(&arr2(&[[3.0 - h]]))) / (2.0 * h);
            assert!((fd - 6.0).abs() < 1e-6);
        }
    }
}
