//! Minimal reverse-mode automatic differentiation over dense f64 matrices.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] walks the
//! record in reverse and accumulates gradients for every node. The op set is
//! exactly what the encoder-decoder model needs: matrix products, embedding
//! gather, layer norm, fused masked attention, ReLU, and softmax
//! cross-entropy.
//!
//! Reductions over the attention key axis use order-independent summation
//! (addends sorted by total order before folding), so permuting an unordered
//! input sequence reproduces bitwise-identical outputs.

// index loops in the numeric kernels walk several matrices in lockstep;
// iterator rewrites obscure the math
#![allow(clippy::needless_range_loop)]

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// C = A * B, ikj loop order.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// C = A * B^T.
    pub fn matmul_nt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_nt shape mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            for j in 0..other.rows {
                let brow = other.row(j);
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                *out.at_mut(i, j) = acc;
            }
        }
        out
    }

    /// C = A^T * B.
    pub fn matmul_tn(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_tn shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            for i in 0..self.cols {
                let a = self.at(k, i);
                if a == 0.0 {
                    continue;
                }
                let brow = other.row(k);
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

/// Sums values in an input-order-independent way: addends are sorted by
/// f64 total order before the fold, so any permutation of the same multiset
/// produces the identical bit pattern.
pub fn stable_sum(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values.iter().sum()
}

pub type NodeId = usize;

enum Op {
    /// Parameter or constant leaf.
    Leaf,
    /// Rows gathered from an embedding table.
    Gather { src: NodeId, indices: Vec<usize> },
    MatMul { a: NodeId, b: NodeId },
    /// a * b^T
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Matrix plus a 1 x cols bias row broadcast over rows.
    AddRow { a: NodeId, bias: NodeId },
    Scale { a: NodeId, c: f64 },
    /// Elementwise product with a constant matrix (dropout masks).
    MulConst { a: NodeId, m: Mat },
    /// Plus a constant matrix (positional encodings).
    AddConst { a: NodeId },
    Relu { a: NodeId },
    /// Per-row layer normalization with affine rescale.
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Mat,
        inv_std: Vec<f64>,
    },
    /// Fused scaled-dot attention: softmax(q k^T * scale + mask) v.
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        scale: f64,
        weights: Mat,
    },
    /// Sum over rows of -log softmax(logits)[target]; value is 1x1.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Mat,
    },
    SliceCols { a: NodeId, start: usize },
    ConcatCols { parts: Vec<NodeId> },
}

struct Node {
    op: Op,
    value: Mat,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Mat) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn gather(&mut self, src: NodeId, indices: &[usize]) -> NodeId {
        let table = &self.nodes[src].value;
        let cols = table.cols;
        let mut value = Mat::zeros(indices.len(), cols);
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < table.rows, "gather index {idx} out of range");
            value.data[i * cols..(i + 1) * cols].copy_from_slice(table.row(idx));
        }
        self.push(
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
            value,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(Op::MatMul { a, b }, value)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.matmul_nt(&self.nodes[b].value);
        self.push(Op::MatMulNT { a, b }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!((va.rows, va.cols), (vb.rows, vb.cols), "add shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&vb.data) {
            *x += y;
        }
        self.push(Op::Add { a, b }, value)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[bias].value);
        assert_eq!(vb.rows, 1, "bias must be a row vector");
        assert_eq!(va.cols, vb.cols, "bias width mismatch");
        let mut value = va.clone();
        for r in 0..value.rows {
            for c in 0..value.cols {
                *value.at_mut(r, c) += vb.at(0, c);
            }
        }
        self.push(Op::AddRow { a, bias }, value)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        for x in value.data.iter_mut() {
            *x *= c;
        }
        self.push(Op::Scale { a, c }, value)
    }

    pub fn mul_const(&mut self, a: NodeId, m: Mat) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!((va.rows, va.cols), (m.rows, m.cols), "mask shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&m.data) {
            *x *= y;
        }
        self.push(Op::MulConst { a, m }, value)
    }

    pub fn add_const(&mut self, a: NodeId, m: &Mat) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!((va.rows, va.cols), (m.rows, m.cols), "const shape mismatch");
        let mut value = va.clone();
        for (x, y) in value.data.iter_mut().zip(&m.data) {
            *x += y;
        }
        self.push(Op::AddConst { a }, value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut value = self.nodes[a].value.clone();
        for x in value.data.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        self.push(Op::Relu { a }, value)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let vx = &self.nodes[x].value;
        let (rows, cols) = (vx.rows, vx.cols);
        let mut normalized = Mat::zeros(rows, cols);
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..cols {
                *normalized.at_mut(r, c) = (row[c] - mean) * istd;
            }
        }
        let vg = &self.nodes[gamma].value;
        let vb = &self.nodes[beta].value;
        assert_eq!(vg.cols, cols);
        assert_eq!(vb.cols, cols);
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                *value.at_mut(r, c) = normalized.at(r, c) * vg.at(0, c) + vb.at(0, c);
            }
        }
        self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            value,
        )
    }

    /// Fused attention: softmax over keys of (q k^T * scale + mask), then a
    /// weighted sum of value rows. `mask` entries are 0 or -inf. Every query
    /// row must have at least one unmasked key.
    ///
    /// Softmax normalizers and the output reduction over keys use
    /// order-independent summation, making the result invariant (bitwise) to
    /// key/value row permutations that permute the mask columns with them.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, scale: f64, mask: &Mat) -> NodeId {
        let scores = {
            let (vq, vk) = (&self.nodes[q].value, &self.nodes[k].value);
            let mut s = vq.matmul_nt(vk);
            for x in s.data.iter_mut() {
                *x *= scale;
            }
            assert_eq!((s.rows, s.cols), (mask.rows, mask.cols), "attention mask shape");
            for (x, m) in s.data.iter_mut().zip(&mask.data) {
                *x += m;
            }
            s
        };
        let n_q = scores.rows;
        let n_k = scores.cols;
        let mut weights = Mat::zeros(n_q, n_k);
        for i in 0..n_q {
            let row = scores.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            debug_assert!(max.is_finite(), "attention row fully masked");
            let mut exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
            let wrow = &mut weights.data[i * n_k..(i + 1) * n_k];
            wrow.copy_from_slice(&exps);
            let z = stable_sum(&mut exps);
            for w in wrow.iter_mut() {
                *w /= z;
            }
        }
        let vv = &self.nodes[v].value;
        let d = vv.cols;
        let mut out = Mat::zeros(n_q, d);
        let mut terms = vec![0.0; n_k];
        for i in 0..n_q {
            for c in 0..d {
                for j in 0..n_k {
                    terms[j] = weights.at(i, j) * vv.at(j, c);
                }
                *out.at_mut(i, c) = stable_sum(&mut terms);
            }
        }
        self.push(
            Op::Attention {
                q,
                k,
                v,
                scale,
                weights,
            },
            out,
        )
    }

    /// Returns the attention weight matrix of an `attention` node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&Mat> {
        match &self.nodes[id].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Sum over rows of -log softmax(logits)[target]. Value is 1x1; divide by
    /// the row count separately if a mean is wanted.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let vl = &self.nodes[logits].value;
        assert_eq!(vl.rows, targets.len(), "one target per logit row");
        let cols = vl.cols;
        let mut probs = Mat::zeros(vl.rows, cols);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < cols, "target out of vocabulary");
            let row = vl.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - max).exp();
                *probs.at_mut(r, c) = e;
                z += e;
            }
            for c in 0..cols {
                *probs.at_mut(r, c) /= z;
            }
            total -= probs.at(r, t).ln();
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            Mat::from_vec(1, 1, vec![total]),
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert!(start + len <= va.cols, "slice out of range");
        let mut value = Mat::zeros(va.rows, len);
        for r in 0..va.rows {
            value.data[r * len..(r + 1) * len]
                .copy_from_slice(&va.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { a, start }, value)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let total: usize = parts.iter().map(|p| self.nodes[*p].value.cols).sum();
        let mut value = Mat::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let vp = &self.nodes[p].value;
            assert_eq!(vp.rows, rows, "concat row mismatch");
            for r in 0..rows {
                value.data[r * total + offset..r * total + offset + vp.cols]
                    .copy_from_slice(vp.row(r));
            }
            offset += vp.cols;
        }
        self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            value,
        )
    }

    /// Runs reverse-mode accumulation seeded with d(root)/d(root) = 1.
    /// The root must be 1x1.
    pub fn backward(&self, root: NodeId) -> Grads {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let rv = &self.nodes[root].value;
        assert_eq!((rv.rows, rv.cols), (1, 1), "backward root must be scalar");
        grads[root] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.accumulate_inputs(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }

    fn add_grad(grads: &mut [Option<Mat>], id: NodeId, delta: Mat) {
        match &mut grads[id] {
            Some(g) => {
                for (x, y) in g.data.iter_mut().zip(&delta.data) {
                    *x += y;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn accumulate_inputs(&self, id: NodeId, g: &Mat, grads: &mut [Option<Mat>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Gather { src, indices } => {
                let table = &self.nodes[*src].value;
                let mut d = Mat::zeros(table.rows, table.cols);
                for (i, &idx) in indices.iter().enumerate() {
                    let src_row = &mut d.data[idx * d.cols..(idx + 1) * d.cols];
                    for (x, y) in src_row.iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                Self::add_grad(grads, *src, d);
            }
            Op::MatMul { a, b } => {
                let da = g.matmul_nt(&self.nodes[*b].value);
                let db = self.nodes[*a].value.matmul_tn(g);
                Self::add_grad(grads, *a, da);
                Self::add_grad(grads, *b, db);
            }
            Op::MatMulNT { a, b } => {
                // C = A B^T: dA = dC B, dB = dC^T A
                let da = g.matmul(&self.nodes[*b].value);
                let db = g.matmul_tn(&self.nodes[*a].value);
                Self::add_grad(grads, *a, da);
                Self::add_grad(grads, *b, db);
            }
            Op::Add { a, b } => {
                Self::add_grad(grads, *a, g.clone());
                Self::add_grad(grads, *b, g.clone());
            }
            Op::AddRow { a, bias } => {
                Self::add_grad(grads, *a, g.clone());
                let mut db = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        *db.at_mut(0, c) += g.at(r, c);
                    }
                }
                Self::add_grad(grads, *bias, db);
            }
            Op::Scale { a, c } => {
                let mut d = g.clone();
                for x in d.data.iter_mut() {
                    *x *= c;
                }
                Self::add_grad(grads, *a, d);
            }
            Op::MulConst { a, m } => {
                let mut d = g.clone();
                for (x, y) in d.data.iter_mut().zip(&m.data) {
                    *x *= y;
                }
                Self::add_grad(grads, *a, d);
            }
            Op::AddConst { a } => {
                Self::add_grad(grads, *a, g.clone());
            }
            Op::Relu { a } => {
                let va = &self.nodes[*a].value;
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&va.data) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                Self::add_grad(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let (rows, cols) = (g.rows, g.cols);
                let vg = &self.nodes[*gamma].value;
                let mut dgamma = Mat::zeros(1, cols);
                let mut dbeta = Mat::zeros(1, cols);
                let mut dx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let mut dxn = vec![0.0; cols];
                    for c in 0..cols {
                        let gy = g.at(r, c);
                        *dgamma.at_mut(0, c) += gy * normalized.at(r, c);
                        *dbeta.at_mut(0, c) += gy;
                        dxn[c] = gy * vg.at(0, c);
                    }
                    let mean_dxn: f64 = dxn.iter().sum::<f64>() / cols as f64;
                    let mean_dxn_xn: f64 = (0..cols)
                        .map(|c| dxn[c] * normalized.at(r, c))
                        .sum::<f64>()
                        / cols as f64;
                    for c in 0..cols {
                        *dx.at_mut(r, c) = inv_std[r]
                            * (dxn[c] - mean_dxn - normalized.at(r, c) * mean_dxn_xn);
                    }
                }
                Self::add_grad(grads, *x, dx);
                Self::add_grad(grads, *gamma, dgamma);
                Self::add_grad(grads, *beta, dbeta);
            }
            Op::Attention {
                q,
                k,
                v,
                scale,
                weights,
            } => {
                let vv = &self.nodes[*v].value;
                // dV = A^T dO
                let dv = weights.matmul_tn(g);
                // dA = dO V^T
                let da = g.matmul_nt(vv);
                // softmax backward per row: dS = A o (dA - rowsum(dA o A))
                let mut ds = Mat::zeros(weights.rows, weights.cols);
                for i in 0..weights.rows {
                    let dot: f64 = (0..weights.cols)
                        .map(|j| da.at(i, j) * weights.at(i, j))
                        .sum();
                    for j in 0..weights.cols {
                        *ds.at_mut(i, j) = weights.at(i, j) * (da.at(i, j) - dot);
                    }
                }
                for x in ds.data.iter_mut() {
                    *x *= scale;
                }
                let dq = ds.matmul(&self.nodes[*k].value);
                let dk = ds.matmul_tn(&self.nodes[*q].value);
                Self::add_grad(grads, *q, dq);
                Self::add_grad(grads, *k, dk);
                Self::add_grad(grads, *v, dv);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = g.at(0, 0);
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    *d.at_mut(r, t) -= 1.0;
                }
                for x in d.data.iter_mut() {
                    *x *= scale;
                }
                Self::add_grad(grads, *logits, d);
            }
            Op::SliceCols { a, start } => {
                let va = &self.nodes[*a].value;
                let mut d = Mat::zeros(va.rows, va.cols);
                for r in 0..g.rows {
                    for c in 0..g.cols {
                        *d.at_mut(r, start + c) = g.at(r, c);
                    }
                }
                Self::add_grad(grads, *a, d);
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.nodes[p].value.cols;
                    let mut d = Mat::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        d.data[r * cols..(r + 1) * cols]
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    Self::add_grad(grads, p, d);
                    offset += cols;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
    }

    /// Central finite differences on every entry of every leaf, against a
    /// scalar-producing graph builder.
    fn check_grads<F>(leaves: Vec<Mat>, build: F, tol: f64)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
        let root = build(&mut tape, &ids);
        let grads = tape.backward(root);

        let eps = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads.get(ids[li]).cloned();
            for e in 0..leaf.data.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let ids: Vec<NodeId> = leaves
                        .iter()
                        .enumerate()
                        .map(|(i, m)| {
                            let mut m = m.clone();
                            if i == li {
                                m.data[e] += delta;
                            }
                            t.leaf(m)
                        })
                        .collect();
                    let r = build(&mut t, &ids);
                    t.value(r).at(0, 0)
                };
                let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic.as_ref().map(|m| m.data[e]).unwrap_or(0.0);
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "leaf {li} entry {e}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_values() {
        let a = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Mat::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = a.matmul(&b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        // A * B^T and A^T * B against the plain product
        let bt = Mat::from_vec(2, 3, vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]);
        assert_eq!(a.matmul_nt(&bt).data, c.data);
        let at = Mat::from_vec(3, 2, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(at.matmul_tn(&b).data, c.data);
    }

    #[test]
    fn stable_sum_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
        let mut a = base.clone();
        let expected = stable_sum(&mut a);
        for _ in 0..20 {
            let mut shuffled = base.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut rng);
            assert_eq!(stable_sum(&mut shuffled).to_bits(), expected.to_bits());
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        for v in [2usize, 10, 1000] {
            let mut tape = Tape::new();
            let logits = tape.leaf(Mat::zeros(1, v));
            let loss = tape.cross_entropy(logits, &[0]);
            let got = tape.value(loss).at(0, 0);
            assert!((got - (v as f64).ln()).abs() < 1e-9, "V={v}: {got}");
        }
    }

    #[test]
    fn cross_entropy_saturated_logit() {
        let mut tape = Tape::new();
        let mut m = Mat::zeros(1, 10);
        *m.at_mut(0, 3) = 50.0;
        let logits = tape.leaf(m);
        let loss = tape.cross_entropy(logits, &[3]);
        assert!(tape.value(loss).at(0, 0) < 1e-6);
    }

    #[test]
    fn gather_matmul_ce_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = random_mat(&mut rng, 5, 3);
        let w = random_mat(&mut rng, 3, 4);
        check_grads(vec![table, w], |t, ids| {
            let x = t.gather(ids[0], &[0, 2, 2, 4]);
            let logits = t.matmul(x, ids[1]);
            t.cross_entropy(logits, &[1, 0, 3, 2])
        }, 1e-6);
    }

    #[test]
    fn layer_norm_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_mat(&mut rng, 3, 4);
        let gamma = random_mat(&mut rng, 1, 4);
        let beta = random_mat(&mut rng, 1, 4);
        let w = random_mat(&mut rng, 4, 3);
        check_grads(vec![x, gamma, beta, w], |t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5);
            let logits = t.matmul(y, ids[3]);
            t.cross_entropy(logits, &[0, 2, 1])
        }, 1e-5);
    }

    #[test]
    fn layer_norm_rows_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.leaf(random_mat(&mut rng, 4, 16));
        let gamma = tape.leaf(Mat::from_vec(1, 16, vec![1.0; 16]));
        let beta = tape.leaf(Mat::zeros(1, 16));
        let y = tape.layer_norm(x, gamma, beta, 1e-10);
        let v = tape.value(y);
        for r in 0..v.rows {
            let row = v.row(r);
            let mean: f64 = row.iter().sum::<f64>() / row.len() as f64;
            let var: f64 = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / row.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn attention_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_mat(&mut rng, 3, 4);
        let k = random_mat(&mut rng, 5, 4);
        let v = random_mat(&mut rng, 5, 4);
        let w = random_mat(&mut rng, 4, 3);
        let mut mask = Mat::zeros(3, 5);
        *mask.at_mut(0, 4) = f64::NEG_INFINITY;
        *mask.at_mut(2, 1) = f64::NEG_INFINITY;
        check_grads(vec![q, k, v, w], move |t, ids| {
            let o = t.attention(ids[0], ids[1], ids[2], 0.5, &mask);
            let logits = t.matmul(o, ids[3]);
            t.cross_entropy(logits, &[0, 1, 2])
        }, 1e-5);
    }

    #[test]
    fn attention_rows_sum_to_one_over_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut tape = Tape::new();
        let q = tape.leaf(random_mat(&mut rng, 3, 4));
        let k = tape.leaf(random_mat(&mut rng, 6, 4));
        let v = tape.leaf(random_mat(&mut rng, 6, 4));
        let mut mask = Mat::zeros(3, 6);
        *mask.at_mut(1, 0) = f64::NEG_INFINITY;
        *mask.at_mut(1, 5) = f64::NEG_INFINITY;
        let o = tape.attention(q, k, v, 0.5, &mask);
        let w = tape.attention_weights(o).unwrap();
        for r in 0..w.rows {
            let sum: f64 = w.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert_eq!(w.at(1, 0), 0.0);
        assert_eq!(w.at(1, 5), 0.0);
    }

    #[test]
    fn attention_masked_keys_get_zero_weight_and_no_grad_flow() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_mat(&mut rng, 2, 3);
        let k = random_mat(&mut rng, 4, 3);
        let v = random_mat(&mut rng, 4, 3);
        let mut mask = Mat::zeros(2, 4);
        // key 3 fully masked
        *mask.at_mut(0, 3) = f64::NEG_INFINITY;
        *mask.at_mut(1, 3) = f64::NEG_INFINITY;

        let mut tape = Tape::new();
        let qi = tape.leaf(q);
        let ki = tape.leaf(k.clone());
        let vi = tape.leaf(v.clone());
        let o = tape.attention(qi, ki, vi, 1.0, &mask);
        let before = tape.value(o).clone();

        // altering the masked key/value row never changes the output
        let mut k2 = k;
        let mut v2 = v;
        for c in 0..3 {
            *k2.at_mut(3, c) = 99.0;
            *v2.at_mut(3, c) = -99.0;
        }
        let mut tape2 = Tape::new();
        let qi2 = tape2.leaf(tape.value(qi).clone());
        let ki2 = tape2.leaf(k2);
        let vi2 = tape2.leaf(v2);
        let o2 = tape2.attention(qi2, ki2, vi2, 1.0, &mask);
        assert_eq!(before.data, tape2.value(o2).data);
    }

    #[test]
    fn slice_concat_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_mat(&mut rng, 2, 6);
        let w = random_mat(&mut rng, 6, 2);
        check_grads(vec![x, w], |t, ids| {
            let a = t.slice_cols(ids[0], 0, 3);
            let b = t.slice_cols(ids[0], 3, 3);
            let joined = t.concat_cols(&[b, a]);
            let logits = t.matmul(joined, ids[1]);
            t.cross_entropy(logits, &[0, 1])
        }, 1e-6);
    }

    #[test]
    fn add_row_scale_relu_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_mat(&mut rng, 3, 4);
        let bias = random_mat(&mut rng, 1, 4);
        let w = random_mat(&mut rng, 4, 2);
        check_grads(vec![x, bias, w], |t, ids| {
            let y = t.add_row(ids[0], ids[1]);
            let y = t.relu(y);
            let y = t.scale(y, 1.7);
            let logits = t.matmul(y, ids[2]);
            t.cross_entropy(logits, &[0, 1, 0])
        }, 1e-5);
    }
}
