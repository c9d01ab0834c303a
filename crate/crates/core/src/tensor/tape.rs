use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::gemm::{batched_gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    /// `b` is repeated over the leading blocks of `a`.
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Softmax { a: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<f64> },
    Embedding { table: usize, ids: Vec<usize> },
    Sum { a: usize },
    Dropout { a: usize, mask: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order so that a single reverse sweep
/// yields gradients for every leaf that requires them.
///
/// Nodes are only ever appended, so the record is topologically ordered by
/// construction.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize, usize) {
    match t.shape() {
        [r, c] => (1, *r, *c),
        [b, r, c] => (*b, *r, *c),
        _ => unreachable!("matmul operands are rank 2 or 3"),
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(b, c)| *b += c),
        None => *slot = Some(contribution),
    }
}

/// Strips leading unit axes, e.g. `[1, n]` to `[n]`.
fn squeeze_leading(shape: &[usize]) -> &[usize] {
    let start = shape.iter().position(|&d| d != 1).unwrap_or(shape.len());
    &shape[start..]
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::usage("variable does not belong to this tape"));
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node> {
        Ok(&self.nodes[self.idx(v)?])
    }

    /// Registers a tensor as a leaf; it is differentiated iff it requires grad.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t.detached(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.detached(), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("variable from this tape").value
    }

    /// Matrix product over the last two axes; a rank-2 operand is shared
    /// across the batch of a rank-3 one.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a * b^T` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let op = if trans_b { "matmul_nt" } else { "matmul" };
        let mismatch = || Error::Shape {
            op,
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if !(2..=3).contains(&ta.rank()) || !(2..=3).contains(&tb.rank()) {
            return Err(mismatch());
        }
        let (ba, m, k) = mat_dims(ta);
        let (bb, br, bc) = mat_dims(tb);
        let (kb, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != kb || (ba != bb && ba != 1 && bb != 1) {
            return Err(mismatch());
        }
        if ba != bb && (ta.rank() == 3 && tb.rank() == 3) {
            return Err(mismatch());
        }
        let batched = ta.rank() == 3 || tb.rank() == 3;
        let batch = ba.max(bb);
        let mut out = vec![0.0; batch * m * n];
        let mb = MatRef::new(tb.data(), bb, br, bc);
        let mb = if trans_b { mb.t() } else { mb };
        batched_gemm(MatRef::new(ta.data(), ba, m, k), mb, &mut out, batch, false);
        let shape: Vec<usize> = if batched { vec![batch, m, n] } else { vec![m, n] };
        let rg = self.nodes[ia].requires_grad || self.nodes[ib].requires_grad;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a: ia, b: ib, trans_b }, rg))
    }

    fn broadcast_check(&self, op: &'static str, ia: usize, ib: usize) -> Result<()> {
        let (sa, sb) = (self.nodes[ia].value.shape(), self.nodes[ib].value.shape());
        let tail = squeeze_leading(sb);
        if tail.len() > sa.len() || sa[sa.len() - tail.len()..] != *tail {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    /// `a + b`, where `b` may be a trailing block of `a` (e.g. a row added
    /// to every row of a matrix, or a matrix added to every batch item).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_sub(a, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_sub(a, b, -1.0)
    }

    fn add_sub(&mut self, a: Var, b: Var, sign: f64) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        self.broadcast_check(if sign > 0.0 { "add" } else { "sub" }, ia, ib)?;
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let w = tb.len();
        let data = ta
            .data()
            .chunks(w)
            .flat_map(|block| block.iter().zip(tb.data()).map(|(x, y)| x + sign * y))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.nodes[ia].requires_grad || self.nodes[ib].requires_grad;
        let op = if sign > 0.0 {
            Op::Add { a: ia, b: ib }
        } else {
            Op::Sub { a: ia, b: ib }
        };
        Ok(self.push(value, op, rg))
    }

    /// Element-wise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "mul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.nodes[ia].requires_grad || self.nodes[ib].requires_grad;
        Ok(self.push(value, Op::Mul { a: ia, b: ib }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        let data = ta.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(value, Op::Scale { a: ia, factor }, rg))
    }

    /// Softmax over the last axis, stabilised by subtracting the row maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let ta = &self.nodes[ia].value;
        let w = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(w) {
            softmax_in_place(row);
        }
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(value, Op::Softmax { a: ia }, rg))
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`; the last axis
    /// indexes classes and every other axis is flattened into rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let il = self.idx(logits)?;
        let tl = &self.nodes[il].value;
        let classes = tl.last_dim();
        let rows = tl.len() / classes;
        if rows != targets.len() || rows == 0 {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: bad,
                bound: classes,
            });
        }
        let mut probs = tl.data().to_vec();
        let mut total = 0.0;
        for (row, &t) in probs.chunks_mut(classes).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
            row.iter_mut().for_each(|x| *x = (*x - lse).exp());
        }
        let value = Tensor::scalar(total / rows as f64);
        let rg = self.nodes[il].requires_grad;
        let op = Op::CrossEntropy {
            logits: il,
            targets: targets.to_vec(),
            probs,
        };
        Ok(self.push(value, op, rg))
    }

    /// Gathers rows of a `[vocab, width]` table. `seq_shape` gives the
    /// leading axes of the result and must multiply out to `ids.len()`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], seq_shape: &[usize]) -> Result<Var> {
        let it = self.idx(table)?;
        let tt = &self.nodes[it].value;
        if tt.rank() != 2 || seq_shape.len() > 2 || seq_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::Shape {
                op: "embedding",
                lhs: tt.shape().to_vec(),
                rhs: seq_shape.to_vec(),
            });
        }
        let (vocab, width) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    what: "embedding id",
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let mut shape = seq_shape.to_vec();
        shape.push(width);
        let value = Tensor::new(&shape, data)?;
        let rg = self.nodes[it].requires_grad;
        let op = Op::Embedding {
            table: it,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op, rg))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let total = self.nodes[ia].value.data().iter().sum();
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(Tensor::scalar(total), Op::Sum { a: ia }, rg))
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`. With `p == 0` the input is returned as is.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        let ia = self.idx(a)?;
        if !(0.0..1.0).contains(&p) {
            return Err(Error::usage(format!("dropout probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let ta = &self.nodes[ia].value;
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..ta.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(ta.shape(), data)?;
        let rg = self.nodes[ia].requires_grad;
        Ok(self.push(value, Op::Dropout { a: ia, mask }, rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// The tape is left intact, so calling this twice yields the same
    /// gradients again; accumulating both into a parameter doubles its grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);
        let mut visited = Vec::new();

        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            let wants = |j: usize| self.nodes[j].requires_grad;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b, trans_b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (ba, m, k) = mat_dims(ta);
                    let (bb, br, bc) = mat_dims(tb);
                    let (go_batch, n) = (node.value.len() / (m * node.value.last_dim()), node.value.last_dim());
                    let gm = MatRef::new(&g, go_batch, m, n);
                    if wants(*a) {
                        let mut buf = vec![0.0; ta.len()];
                        let mb = MatRef::new(tb.data(), bb, br, bc);
                        // dA = dC * op(B)^T
                        let mb = if *trans_b { mb } else { mb.t() };
                        batched_gemm(gm, mb, &mut buf, ba, false);
                        add_into(&mut grads[*a], buf);
                    }
                    if wants(*b) {
                        let mut buf = vec![0.0; tb.len()];
                        let ma = MatRef::new(ta.data(), ba, m, k);
                        if *trans_b {
                            batched_gemm(gm.t(), ma, &mut buf, bb, false);
                        } else {
                            batched_gemm(ma.t(), gm, &mut buf, bb, false);
                        }
                        add_into(&mut grads[*b], buf);
                    }
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(node.op, Op::Add { .. }) { 1.0 } else { -1.0 };
                    if wants(*b) {
                        let w = self.nodes[*b].value.len();
                        let mut buf = vec![0.0; w];
                        for block in g.chunks(w) {
                            buf.iter_mut().zip(block).for_each(|(s, x)| *s += sign * x);
                        }
                        add_into(&mut grads[*b], buf);
                    }
                    if wants(*a) {
                        add_into(&mut grads[*a], g.clone());
                    }
                }
                Op::Mul { a, b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if wants(*a) {
                        add_into(&mut grads[*a], g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                    }
                    if wants(*b) {
                        add_into(&mut grads[*b], g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
                    }
                }
                Op::Scale { a, factor } => {
                    add_into(&mut grads[*a], g.iter().map(|x| x * factor).collect());
                }
                Op::Softmax { a } => {
                    let w = node.value.last_dim();
                    let mut buf = vec![0.0; g.len()];
                    for ((out, y), gy) in buf.chunks_mut(w).zip(node.value.data().chunks(w)).zip(g.chunks(w)) {
                        let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in out.iter_mut().zip(y).zip(gy) {
                            *o = p * (q - dot);
                        }
                    }
                    add_into(&mut grads[*a], buf);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let classes = self.nodes[*logits].value.last_dim();
                    let scale = g[0] / targets.len() as f64;
                    let mut buf: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &t) in targets.iter().enumerate() {
                        buf[r * classes + t] -= scale;
                    }
                    add_into(&mut grads[*logits], buf);
                }
                Op::Embedding { table, ids } => {
                    let tt = &self.nodes[*table].value;
                    let w = tt.last_dim();
                    let mut buf = vec![0.0; tt.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        buf[id * w..(id + 1) * w]
                            .iter_mut()
                            .zip(&g[r * w..(r + 1) * w])
                            .for_each(|(s, x)| *s += x);
                    }
                    add_into(&mut grads[*table], buf);
                }
                Op::Sum { a } => {
                    add_into(&mut grads[*a], vec![g[0]; self.nodes[*a].value.len()]);
                }
                Op::Dropout { a, mask } => {
                    add_into(&mut grads[*a], g.iter().zip(mask).map(|(x, m)| x * m).collect());
                }
            }
            grads[i] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            visited,
        })
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Result of one reverse sweep: `d loss / d node` for every node the loss
/// depends on through grad-requiring inputs.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `target`'s grad buffer. A leaf the loss
    /// does not depend on contributes zeros.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        if v.tape != self.tape {
            return Err(Error::usage("gradient lookup with a variable from another tape"));
        }
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; target.len()]),
        }
    }

    /// Node indices in the order the sweep processed them.
    pub fn visited(&self) -> &[usize] {
        &self.visited
    }
}
