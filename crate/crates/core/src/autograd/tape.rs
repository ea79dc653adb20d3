use crate::error::{Error, Result};
use crate::rng;

use super::scalar::Scalar;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

enum Op<S> {
    Leaf,
    Add(TensorId, TensorId),
    Mul(TensorId, TensorId),
    /// `x [.., D] + b [D]`, bias broadcast over leading dims.
    AddBias(TensorId, TensorId),
    Matmul(TensorId, TensorId),
    Permute {
        input: TensorId,
        axes: Vec<usize>,
    },
    Reshape(TensorId),
    Softmax(TensorId),
    /// Additive attention mask: `scores[.., q, k] + mask_row[k]` per batch.
    AddKeyMask(TensorId),
    LayerNorm {
        input: TensorId,
        gamma: TensorId,
        beta: TensorId,
    },
    Gelu(TensorId),
    EmbeddingLookup {
        table: TensorId,
        ids: Vec<u32>,
    },
    Dropout(TensorId),
    GatherRows {
        input: TensorId,
        indices: Vec<usize>,
    },
    Scale {
        input: TensorId,
        factor: S,
    },
    Sum(TensorId),
    CrossEntropy {
        logits: TensorId,
        targets: Vec<u32>,
    },
    BceWithLogits {
        logits: TensorId,
        labels: Vec<S>,
        mask: Vec<bool>,
    },
}

struct Node<S> {
    shape: Vec<usize>,
    values: Vec<S>,
    requires_grad: bool,
    op: Op<S>,
    /// Op-specific stash for backward (softmax keeps nothing here since its
    /// own output suffices; layer_norm stores xhat ++ inv_std, dropout its
    /// mask, cross_entropy its probabilities).
    saved: Vec<S>,
}

/// Record of a forward computation. Single-threaded; ops append nodes in
/// topological order and `backward` walks them in exact reverse.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    /// Base seed for dropout masks; each dropout op derives its stream from
    /// this seed and its node index.
    dropout_seed: u64,
    check_finite: bool,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            dropout_seed: 0,
            check_finite: cfg!(debug_assertions),
        }
    }

    pub fn with_dropout_seed(seed: u64) -> Self {
        let mut t = Self::new();
        t.dropout_seed = seed;
        t
    }

    /// Toggle the per-op finiteness check (on by default in debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn values(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].values
    }

    /// Value of a scalar (single-element) tensor.
    pub fn scalar_value(&self, id: TensorId) -> S {
        debug_assert_eq!(self.nodes[id.0].values.len(), 1);
        self.nodes[id.0].values[0]
    }

    /// Gradient populated by the last `backward` call, if this tensor
    /// participated in it.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<S>, requires_grad: bool, op: Op<S>, saved: Vec<S>) -> TensorId {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Node {
            shape,
            values,
            requires_grad,
            op,
            saved,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn finite_check(&self, id: TensorId, op: &'static str) -> Result<TensorId> {
        if self.check_finite && !self.nodes[id.0].values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(id)
    }

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Record an input tensor. `requires_grad` marks it for gradient
    /// collection during backward.
    pub fn leaf(&mut self, values: Vec<S>, shape: &[usize], requires_grad: bool) -> TensorId {
        assert_eq!(
            numel(shape),
            values.len(),
            "leaf: {} values for shape {:?}",
            values.len(),
            shape
        );
        self.push(shape.to_vec(), values, requires_grad, Op::Leaf, Vec::new())
    }

    /// Constant tensor, never differentiated.
    pub fn constant(&mut self, values: Vec<S>, shape: &[usize]) -> TensorId {
        self.leaf(values, shape, false)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "add",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let values: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x + y)
            .collect();
        let rq = self.requires(a) || self.requires(b);
        let shape = self.nodes[a.0].shape.clone();
        let id = self.push(shape, values, rq, Op::Add(a, b), Vec::new());
        self.finite_check(id, "add")
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op: "mul",
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        let values: Vec<S> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| x * y)
            .collect();
        let rq = self.requires(a) || self.requires(b);
        let shape = self.nodes[a.0].shape.clone();
        let id = self.push(shape, values, rq, Op::Mul(a, b), Vec::new());
        self.finite_check(id, "mul")
    }

    /// Broadcast add of a rank-1 bias over the last dimension.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("x {:?} bias {:?}", self.shape(x), self.shape(bias)),
            });
        }
        let mut values = self.nodes[x.0].values.clone();
        let b = &self.nodes[bias.0].values;
        for row in values.chunks_mut(d) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        let rq = self.requires(x) || self.requires(bias);
        let shape = self.nodes[x.0].shape.clone();
        let id = self.push(shape, values, rq, Op::AddBias(x, bias), Vec::new());
        self.finite_check(id, "add_bias")
    }

    /// Batched matrix multiply. `lhs` is `[.., M, K]`; `rhs` is either
    /// `[.., K, N]` with identical leading dims or a rank-2 `[K, N]`
    /// broadcast over the batch.
    pub fn matmul(&mut self, lhs: TensorId, rhs: TensorId) -> Result<TensorId> {
        let (ls, rs) = (self.shape(lhs).to_vec(), self.shape(rhs).to_vec());
        if ls.len() < 2 || rs.len() < 2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("need rank >= 2, got {ls:?} x {rs:?}"),
            });
        }
        let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        let broadcast_rhs = rs.len() == 2 && ls.len() > 2;
        if k != k2 || (!broadcast_rhs && ls[..ls.len() - 2] != rs[..rs.len() - 2]) {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("{ls:?} x {rs:?}"),
            });
        }
        let batch = numel(&ls[..ls.len() - 2]);
        let mut out = vec![S::ZERO; batch * m * n];
        let a = &self.nodes[lhs.0].values;
        let b = &self.nodes[rhs.0].values;
        for bi in 0..batch {
            let a_off = bi * m * k;
            let b_off = if broadcast_rhs { 0 } else { bi * k * n };
            matmul_kernel(
                &a[a_off..a_off + m * k],
                &b[b_off..b_off + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = ls[..ls.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let rq = self.requires(lhs) || self.requires(rhs);
        let id = self.push(shape, out, rq, Op::Matmul(lhs, rhs), Vec::new());
        self.finite_check(id, "matmul")
    }

    /// Reorder axes; materializes the permuted layout.
    pub fn permute(&mut self, input: TensorId, axes: &[usize]) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        if axes.len() != shape.len() || {
            let mut seen = vec![false; shape.len()];
            axes.iter().any(|&a| {
                if a >= shape.len() || seen[a] {
                    true
                } else {
                    seen[a] = true;
                    false
                }
            })
        } {
            return Err(Error::Shape {
                op: "permute",
                detail: format!("axes {axes:?} for shape {shape:?}"),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let values = permute_values(&self.nodes[input.0].values, &shape, axes);
        let rq = self.requires(input);
        let id = self.push(
            out_shape,
            values,
            rq,
            Op::Permute {
                input,
                axes: axes.to_vec(),
            },
            Vec::new(),
        );
        Ok(id)
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, input: TensorId) -> Result<TensorId> {
        let rank = self.shape(input).len();
        if rank < 2 {
            return Err(Error::Shape {
                op: "transpose",
                detail: format!("rank {rank} < 2"),
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(input, &axes)
    }

    pub fn reshape(&mut self, input: TensorId, shape: &[usize]) -> Result<TensorId> {
        if numel(shape) != self.nodes[input.0].values.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape(input), shape),
            });
        }
        let values = self.nodes[input.0].values.clone();
        let rq = self.requires(input);
        let id = self.push(shape.to_vec(), values, rq, Op::Reshape(input), Vec::new());
        Ok(id)
    }

    /// Row-wise softmax over the last dimension, max-shifted for stability.
    pub fn softmax(&mut self, input: TensorId) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Shape {
            op: "softmax",
            detail: "rank 0".into(),
        })?;
        let mut values = self.nodes[input.0].values.clone();
        for row in values.chunks_mut(d) {
            let mut max = row[0];
            for &v in row.iter() {
                max = max.max(v);
            }
            let mut sum = S::ZERO;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let rq = self.requires(input);
        let id = self.push(shape, values, rq, Op::Softmax(input), Vec::new());
        self.finite_check(id, "softmax")
    }

    /// Add `mask[b * key_len + k]` to every score row `scores[b, .., q, k]`.
    /// The mask is plain data (typically 0 or a large negative number for
    /// padded keys) and receives no gradient.
    pub fn add_key_mask(&mut self, scores: TensorId, mask: &[S]) -> Result<TensorId> {
        let shape = self.shape(scores).to_vec();
        if shape.len() < 3 {
            return Err(Error::Shape {
                op: "add_key_mask",
                detail: format!("rank {} < 3", shape.len()),
            });
        }
        let key_len = shape[shape.len() - 1];
        let batch = shape[0];
        if mask.len() != batch * key_len {
            return Err(Error::Shape {
                op: "add_key_mask",
                detail: format!("mask len {} for batch {batch} x keys {key_len}", mask.len()),
            });
        }
        let per_batch = numel(&shape[1..]);
        let mut values = self.nodes[scores.0].values.clone();
        for (bi, chunk) in values.chunks_mut(per_batch).enumerate() {
            let mrow = &mask[bi * key_len..(bi + 1) * key_len];
            for row in chunk.chunks_mut(key_len) {
                for (v, &mv) in row.iter_mut().zip(mrow) {
                    *v += mv;
                }
            }
        }
        let rq = self.requires(scores);
        let id = self.push(shape, values, rq, Op::AddKeyMask(scores), Vec::new());
        Ok(id)
    }

    /// Layer normalization over the last dimension with affine parameters.
    pub fn layer_norm(&mut self, input: TensorId, gamma: TensorId, beta: TensorId, eps: f64) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                detail: format!(
                    "x {:?} gamma {:?} beta {:?}",
                    shape,
                    self.shape(gamma),
                    self.shape(beta)
                ),
            });
        }
        let eps = S::from_f64(eps);
        let x = &self.nodes[input.0].values;
        let g = &self.nodes[gamma.0].values;
        let b = &self.nodes[beta.0].values;
        let rows = x.len() / d;
        let mut values = vec![S::ZERO; x.len()];
        // saved = xhat (len) ++ inv_std (rows)
        let mut saved = vec![S::ZERO; x.len() + rows];
        let inv_d = S::ONE / S::from_f64(d as f64);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mut mean = S::ZERO;
            for &v in row {
                mean += v;
            }
            mean = mean * inv_d;
            let mut var = S::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var = var * inv_d;
            let inv_std = S::ONE / (var + eps).sqrt();
            saved[x.len() + r] = inv_std;
            for i in 0..d {
                let xhat = (row[i] - mean) * inv_std;
                saved[r * d + i] = xhat;
                values[r * d + i] = g[i] * xhat + b[i];
            }
        }
        let rq = self.requires(input) || self.requires(gamma) || self.requires(beta);
        let id = self.push(shape, values, rq, Op::LayerNorm { input, gamma, beta }, saved);
        self.finite_check(id, "layer_norm")
    }

    /// Exact-CDF GELU: `x * Phi(x)` with `Phi` the standard normal CDF.
    pub fn gelu(&mut self, input: TensorId) -> Result<TensorId> {
        let half = S::from_f64(0.5);
        let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let values: Vec<S> = self.nodes[input.0]
            .values
            .iter()
            .map(|&x| x * half * (S::ONE + (x * inv_sqrt2).erf()))
            .collect();
        let rq = self.requires(input);
        let shape = self.nodes[input.0].shape.clone();
        let id = self.push(shape, values, rq, Op::Gelu(input), Vec::new());
        self.finite_check(id, "gelu")
    }

    /// Row lookup: `table[V, E]` gathered by `ids`, yielding
    /// `leading_shape ++ [E]`. Gradient scatter-adds into the table.
    pub fn embedding_lookup(&mut self, table: TensorId, ids: &[u32], leading_shape: &[usize]) -> Result<TensorId> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 {
            return Err(Error::Shape {
                op: "embedding_lookup",
                detail: format!("table rank {} != 2", ts.len()),
            });
        }
        let (v, e) = (ts[0], ts[1]);
        if numel(leading_shape) != ids.len() {
            return Err(Error::Shape {
                op: "embedding_lookup",
                detail: format!("{} ids for leading shape {:?}", ids.len(), leading_shape),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::Shape {
                op: "embedding_lookup",
                detail: format!("id {bad} out of range for table rows {v}"),
            });
        }
        let tv = &self.nodes[table.0].values;
        let mut values = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            values.extend_from_slice(&tv[i as usize * e..(i as usize + 1) * e]);
        }
        let mut shape = leading_shape.to_vec();
        shape.push(e);
        let rq = self.requires(table);
        let id = self.push(
            shape,
            values,
            rq,
            Op::EmbeddingLookup {
                table,
                ids: ids.to_vec(),
            },
            Vec::new(),
        );
        Ok(id)
    }

    /// Inverted dropout with keep-scale `1/(1-p)`. The mask is a pure
    /// function of the tape's dropout seed and this op's node index.
    pub fn dropout(&mut self, input: TensorId, p: f64) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Shape {
                op: "dropout",
                detail: format!("p = {p} outside [0, 1)"),
            });
        }
        if p == 0.0 {
            return Ok(input);
        }
        let node_index = self.nodes.len() as u64;
        let mut mask_rng = rng::derive(self.dropout_seed, node_index);
        let scale = S::from_f64(1.0 / (1.0 - p));
        let x = &self.nodes[input.0].values;
        let mut mask = Vec::with_capacity(x.len());
        let mut values = Vec::with_capacity(x.len());
        for &v in x {
            if rng::uniform(&mut mask_rng) < p {
                mask.push(S::ZERO);
                values.push(S::ZERO);
            } else {
                mask.push(scale);
                values.push(v * scale);
            }
        }
        let rq = self.requires(input);
        let shape = self.nodes[input.0].shape.clone();
        let id = self.push(shape, values, rq, Op::Dropout(input), mask);
        Ok(id)
    }

    /// Select rows from a tensor viewed as `[N, D]` (D = last dim).
    pub fn gather_rows(&mut self, input: TensorId, indices: &[usize]) -> Result<TensorId> {
        let shape = self.shape(input).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Shape {
            op: "gather_rows",
            detail: "rank 0".into(),
        })?;
        let n = numel(&shape) / d;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {n} rows"),
            });
        }
        let x = &self.nodes[input.0].values;
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let rq = self.requires(input);
        let id = self.push(
            vec![indices.len(), d],
            values,
            rq,
            Op::GatherRows {
                input,
                indices: indices.to_vec(),
            },
            Vec::new(),
        );
        Ok(id)
    }

    pub fn scale(&mut self, input: TensorId, factor: f64) -> Result<TensorId> {
        let factor = S::from_f64(factor);
        let values: Vec<S> = self.nodes[input.0].values.iter().map(|&v| v * factor).collect();
        let rq = self.requires(input);
        let shape = self.nodes[input.0].shape.clone();
        let id = self.push(shape, values, rq, Op::Scale { input, factor }, Vec::new());
        self.finite_check(id, "scale")
    }

    /// Sum of all elements, as a scalar tensor.
    pub fn sum(&mut self, input: TensorId) -> Result<TensorId> {
        let mut total = S::ZERO;
        for &v in &self.nodes[input.0].values {
            total += v;
        }
        let rq = self.requires(input);
        let id = self.push(vec![1], vec![total], rq, Op::Sum(input), Vec::new());
        self.finite_check(id, "sum")
    }

    /// Mean softmax cross-entropy of `logits [N, V]` against integer targets.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[u32]) -> Result<TensorId> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!("logits rank {} != 2", shape.len()),
            });
        }
        let (n, v) = (shape[0], shape[1]);
        if targets.len() != n {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!("{} targets for {n} rows", targets.len()),
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= v) {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!("target {bad} out of range for {v} classes"),
            });
        }
        let x = &self.nodes[logits.0].values;
        let mut probs = vec![S::ZERO; x.len()];
        let mut loss = S::ZERO;
        for r in 0..n {
            let row = &x[r * v..(r + 1) * v];
            let out = &mut probs[r * v..(r + 1) * v];
            let mut max = row[0];
            for &val in row.iter() {
                max = max.max(val);
            }
            let mut sum = S::ZERO;
            for (o, &val) in out.iter_mut().zip(row) {
                *o = (val - max).exp();
                sum += *o;
            }
            for o in out.iter_mut() {
                *o = *o / sum;
            }
            loss += -(out[targets[r] as usize].ln());
        }
        loss = loss / S::from_f64(n as f64);
        let rq = self.requires(logits);
        let id = self.push(
            vec![1],
            vec![loss],
            rq,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            probs,
        );
        self.finite_check(id, "cross_entropy")
    }

    /// Mean binary cross-entropy with logits over `mask`-selected positions.
    /// Labels are plain data in `{0, 1}`.
    pub fn bce_with_logits(&mut self, logits: TensorId, labels: &[S], mask: &[bool]) -> Result<TensorId> {
        let x = &self.nodes[logits.0].values;
        if labels.len() != x.len() || mask.len() != x.len() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                detail: format!(
                    "logits {} labels {} mask {}",
                    x.len(),
                    labels.len(),
                    mask.len()
                ),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Shape {
                op: "bce_with_logits",
                detail: "empty mask".into(),
            });
        }
        let mut loss = S::ZERO;
        for i in 0..x.len() {
            if !mask[i] {
                continue;
            }
            let z = x[i];
            let y = labels[i];
            // max(z, 0) - z*y + ln(1 + exp(-|z|)), numerically stable
            loss += z.max(S::ZERO) - z * y + (S::ONE + (-z.abs()).exp()).ln();
        }
        loss = loss / S::from_f64(count as f64);
        let rq = self.requires(logits);
        let id = self.push(
            vec![1],
            vec![loss],
            rq,
            Op::BceWithLogits {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
            },
            Vec::new(),
        );
        self.finite_check(id, "bce_with_logits")
    }

    /// Reverse pass from a scalar loss. Gradients accumulate across all uses
    /// of a tensor; leaves flagged `requires_grad` keep theirs readable via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.nodes[loss.0].values.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss shape {:?} is not scalar", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::ONE]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        accumulate(&mut grads[a.0], &g);
                    }
                    if self.requires(b) {
                        accumulate(&mut grads[b.0], &g);
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.requires(a) {
                        let contrib: Vec<S> = g
                            .iter()
                            .zip(&self.nodes[b.0].values)
                            .map(|(&gv, &bv)| gv * bv)
                            .collect();
                        accumulate(&mut grads[a.0], &contrib);
                    }
                    if self.requires(b) {
                        let contrib: Vec<S> = g
                            .iter()
                            .zip(&self.nodes[a.0].values)
                            .map(|(&gv, &av)| gv * av)
                            .collect();
                        accumulate(&mut grads[b.0], &contrib);
                    }
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    if self.requires(x) {
                        accumulate(&mut grads[x.0], &g);
                    }
                    if self.requires(bias) {
                        let d = self.nodes[bias.0].values.len();
                        let mut contrib = vec![S::ZERO; d];
                        for row in g.chunks(d) {
                            for (c, &gv) in contrib.iter_mut().zip(row) {
                                *c += gv;
                            }
                        }
                        accumulate(&mut grads[bias.0], &contrib);
                    }
                }
                Op::Matmul(lhs, rhs) => {
                    let (lhs, rhs) = (*lhs, *rhs);
                    let ls = self.nodes[lhs.0].shape.clone();
                    let rs = self.nodes[rhs.0].shape.clone();
                    let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
                    let n = rs[rs.len() - 1];
                    let batch = numel(&ls[..ls.len() - 2]);
                    let broadcast_rhs = rs.len() == 2 && ls.len() > 2;
                    let a = &self.nodes[lhs.0].values;
                    let b = &self.nodes[rhs.0].values;
                    if self.requires(lhs) {
                        // dA[i,k] = sum_j dC[i,j] * B[k,j]
                        let mut da = vec![S::ZERO; a.len()];
                        for bi in 0..batch {
                            let b_off = if broadcast_rhs { 0 } else { bi * k * n };
                            let dc = &g[bi * m * n..(bi + 1) * m * n];
                            let da_b = &mut da[bi * m * k..(bi + 1) * m * k];
                            for i in 0..m {
                                let dc_row = &dc[i * n..(i + 1) * n];
                                let da_row = &mut da_b[i * k..(i + 1) * k];
                                for kk in 0..k {
                                    let b_row = &b[b_off + kk * n..b_off + (kk + 1) * n];
                                    let mut dot = S::ZERO;
                                    for (&gv, &bv) in dc_row.iter().zip(b_row) {
                                        dot += gv * bv;
                                    }
                                    da_row[kk] += dot;
                                }
                            }
                        }
                        accumulate(&mut grads[lhs.0], &da);
                    }
                    if self.requires(rhs) {
                        // dB[k,j] += sum_i A[i,k] * dC[i,j], summed over batch if broadcast
                        let mut db = vec![S::ZERO; b.len()];
                        for bi in 0..batch {
                            let a_b = &a[bi * m * k..(bi + 1) * m * k];
                            let dc = &g[bi * m * n..(bi + 1) * m * n];
                            let db_off = if broadcast_rhs { 0 } else { bi * k * n };
                            let db_b = &mut db[db_off..db_off + k * n];
                            for i in 0..m {
                                let dc_row = &dc[i * n..(i + 1) * n];
                                let a_row = &a_b[i * k..(i + 1) * k];
                                for kk in 0..k {
                                    let av = a_row[kk];
                                    let db_row = &mut db_b[kk * n..(kk + 1) * n];
                                    for (dv, &gv) in db_row.iter_mut().zip(dc_row) {
                                        *dv += av * gv;
                                    }
                                }
                            }
                        }
                        accumulate(&mut grads[rhs.0], &db);
                    }
                }
                Op::Permute { input, axes } => {
                    let input = *input;
                    if self.requires(input) {
                        let out_shape = self.nodes[idx].shape.clone();
                        let mut inverse = vec![0usize; axes.len()];
                        for (i, &a) in axes.iter().enumerate() {
                            inverse[a] = i;
                        }
                        let contrib = permute_values(&g, &out_shape, &inverse);
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::Reshape(input) => {
                    let input = *input;
                    if self.requires(input) {
                        accumulate(&mut grads[input.0], &g);
                    }
                }
                Op::Softmax(input) => {
                    let input = *input;
                    if self.requires(input) {
                        let y = &self.nodes[idx].values;
                        let d = *self.nodes[idx].shape.last().unwrap();
                        let mut contrib = vec![S::ZERO; y.len()];
                        for r in 0..y.len() / d {
                            let yr = &y[r * d..(r + 1) * d];
                            let gr = &g[r * d..(r + 1) * d];
                            let mut dot = S::ZERO;
                            for (&yv, &gv) in yr.iter().zip(gr) {
                                dot += yv * gv;
                            }
                            let cr = &mut contrib[r * d..(r + 1) * d];
                            for i in 0..d {
                                cr[i] = yr[i] * (gr[i] - dot);
                            }
                        }
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::AddKeyMask(input) => {
                    let input = *input;
                    if self.requires(input) {
                        accumulate(&mut grads[input.0], &g);
                    }
                }
                Op::LayerNorm { input, gamma, beta } => {
                    let (input, gamma, beta) = (*input, *gamma, *beta);
                    let d = *self.nodes[idx].shape.last().unwrap();
                    let len = self.nodes[idx].values.len();
                    let rows = len / d;
                    let saved = &self.nodes[idx].saved;
                    let (xhat, inv_std) = saved.split_at(len);
                    let gm = &self.nodes[gamma.0].values;
                    if self.requires(beta) {
                        let mut contrib = vec![S::ZERO; d];
                        for row in g.chunks(d) {
                            for (c, &gv) in contrib.iter_mut().zip(row) {
                                *c += gv;
                            }
                        }
                        accumulate(&mut grads[beta.0], &contrib);
                    }
                    if self.requires(gamma) {
                        let mut contrib = vec![S::ZERO; d];
                        for r in 0..rows {
                            let gr = &g[r * d..(r + 1) * d];
                            let xr = &xhat[r * d..(r + 1) * d];
                            for i in 0..d {
                                contrib[i] += gr[i] * xr[i];
                            }
                        }
                        accumulate(&mut grads[gamma.0], &contrib);
                    }
                    if self.requires(input) {
                        let inv_d = S::ONE / S::from_f64(d as f64);
                        let mut contrib = vec![S::ZERO; len];
                        for r in 0..rows {
                            let gr = &g[r * d..(r + 1) * d];
                            let xr = &xhat[r * d..(r + 1) * d];
                            let mut mean_dxhat = S::ZERO;
                            let mut mean_dxhat_xhat = S::ZERO;
                            for i in 0..d {
                                let dxhat = gr[i] * gm[i];
                                mean_dxhat += dxhat;
                                mean_dxhat_xhat += dxhat * xr[i];
                            }
                            mean_dxhat = mean_dxhat * inv_d;
                            mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
                            let istd = inv_std[r];
                            let cr = &mut contrib[r * d..(r + 1) * d];
                            for i in 0..d {
                                let dxhat = gr[i] * gm[i];
                                cr[i] = istd * (dxhat - mean_dxhat - xr[i] * mean_dxhat_xhat);
                            }
                        }
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::Gelu(input) => {
                    let input = *input;
                    if self.requires(input) {
                        let inv_sqrt2 = S::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                        let inv_sqrt_2pi = S::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                        let half = S::from_f64(0.5);
                        let contrib: Vec<S> = self.nodes[input.0]
                            .values
                            .iter()
                            .zip(&g)
                            .map(|(&x, &gv)| {
                                let cdf = half * (S::ONE + (x * inv_sqrt2).erf());
                                let pdf = (-(x * x) * half).exp() * inv_sqrt_2pi;
                                gv * (cdf + x * pdf)
                            })
                            .collect();
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::EmbeddingLookup { table, ids } => {
                    let table = *table;
                    if self.requires(table) {
                        let e = self.nodes[table.0].shape[1];
                        let mut contrib = vec![S::ZERO; self.nodes[table.0].values.len()];
                        for (r, &id) in ids.iter().enumerate() {
                            let dst = &mut contrib[id as usize * e..(id as usize + 1) * e];
                            let src = &g[r * e..(r + 1) * e];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        accumulate(&mut grads[table.0], &contrib);
                    }
                }
                Op::Dropout(input) => {
                    let input = *input;
                    if self.requires(input) {
                        let mask = &self.nodes[idx].saved;
                        let contrib: Vec<S> = g.iter().zip(mask).map(|(&gv, &mv)| gv * mv).collect();
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::GatherRows { input, indices } => {
                    let input = *input;
                    if self.requires(input) {
                        let d = self.nodes[idx].shape[1];
                        let mut contrib = vec![S::ZERO; self.nodes[input.0].values.len()];
                        for (r, &i) in indices.iter().enumerate() {
                            let dst = &mut contrib[i * d..(i + 1) * d];
                            let src = &g[r * d..(r + 1) * d];
                            for (dv, &s) in dst.iter_mut().zip(src) {
                                *dv += s;
                            }
                        }
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::Scale { input, factor } => {
                    let (input, factor) = (*input, *factor);
                    if self.requires(input) {
                        let contrib: Vec<S> = g.iter().map(|&gv| gv * factor).collect();
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::Sum(input) => {
                    let input = *input;
                    if self.requires(input) {
                        let contrib = vec![g[0]; self.nodes[input.0].values.len()];
                        accumulate(&mut grads[input.0], &contrib);
                    }
                }
                Op::CrossEntropy { logits, targets } => {
                    let logits = *logits;
                    if self.requires(logits) {
                        let probs = &self.nodes[idx].saved;
                        let n = targets.len();
                        let v = probs.len() / n;
                        let gn = g[0] / S::from_f64(n as f64);
                        let mut contrib = probs.clone();
                        for (r, &t) in targets.iter().enumerate() {
                            contrib[r * v + t as usize] -= S::ONE;
                        }
                        for c in contrib.iter_mut() {
                            *c = *c * gn;
                        }
                        accumulate(&mut grads[logits.0], &contrib);
                    }
                }
                Op::BceWithLogits { logits, labels, mask } => {
                    let logits = *logits;
                    if self.requires(logits) {
                        let x = &self.nodes[logits.0].values;
                        let count = mask.iter().filter(|&&m| m).count();
                        let gn = g[0] / S::from_f64(count as f64);
                        let contrib: Vec<S> = x
                            .iter()
                            .zip(labels.iter())
                            .zip(mask.iter())
                            .map(|((&z, &y), &m)| {
                                if m {
                                    let sig = S::ONE / (S::ONE + (-z).exp());
                                    (sig - y) * gn
                                } else {
                                    S::ZERO
                                }
                            })
                            .collect();
                        accumulate(&mut grads[logits.0], &contrib);
                    }
                }
            }
        }

        // Keep only leaf gradients (intermediates were drained above); leaves
        // still holding entries are exactly the requires_grad inputs reached
        // by the loss.
        self.grads = grads;
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contrib: &[S]) {
    match slot {
        Some(existing) => {
            for (e, &c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        None => *slot = Some(contrib.to_vec()),
    }
}

/// `C[i, j] += sum_k A[i, k] * B[k, j]` over contiguous row-major buffers.
fn matmul_kernel<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn permute_values<S: Scalar>(values: &[S], shape: &[usize], axes: &[usize]) -> Vec<S> {
    let rank = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let mut out = vec![values[0]; values.len()];
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut src = 0usize;
        for (i, &ix) in idx.iter().enumerate() {
            src += ix * in_strides[axes[i]];
        }
        *slot = values[src];
        // odometer increment over out_shape
        for i in (0..rank).rev() {
            idx[i] += 1;
            if idx[i] < out_shape[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    out
}
