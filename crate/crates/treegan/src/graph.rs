//! Reverse-mode gradient engine over a recorded operation tape.
//!
//! Recording granularity is per matrix op, not per scalar. A backward pass
//! emits its vector-Jacobian products as ordinary nodes on the same graph, so
//! gradients are differentiable values: the gradient-penalty term of the
//! critic loss (a function of input gradients) backpropagates into critic
//! weights through a second backward pass with no extra machinery.
//!
//! Piecewise-linear ops (LeakyReLU, max-pool) treat their derivative masks as
//! constants, the almost-everywhere convention.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

static GRAPH_IDS: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Graph`]. Cheap to copy; only valid on the graph
/// that created it.
#[derive(Clone, Copy, Debug)]
pub struct Value {
    graph: u64,
    id: usize,
}

impl Value {
    pub fn id(self) -> usize {
        self.id
    }
}

enum Op<T> {
    Leaf,
    /// a[m,k] · b[k,n]
    MatMul(usize, usize),
    /// a[m,k] · b[n,k]ᵀ
    MatMulNT(usize, usize),
    /// a[k,m]ᵀ · b[k,n]
    MatMulTN(usize, usize),
    Add(usize, usize),
    AddN(Vec<usize>),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddConst(usize, T),
    /// a[r,c] + bias[c] broadcast over rows
    AddRowBroadcast(usize, usize),
    /// [r,c] -> [c]
    SumRows(usize),
    /// [c] -> [rows,c]
    BroadcastRows(usize),
    /// any shape -> [1]
    SumAll(usize),
    /// [1] -> shape
    BroadcastScalar(usize),
    LeakyRelu(usize, T),
    Sqrt(usize),
    /// Column-wise max over each block of `block` rows; argmax holds global
    /// row indices, ties resolved to the lowest row.
    BlockMaxRows { a: usize, argmax: Rc<[usize]> },
    /// Adjoint of BlockMaxRows: place g[b,j] at row argmax[b*c+j].
    ScatterBlockMax { g: usize, argmax: Rc<[usize]> },
    /// out[b,j] = a[argmax[b*c+j], j]
    GatherBlockMax { a: usize, argmax: Rc<[usize]> },
    /// [(B·block),c] -> [B,1], summing each block over all columns
    BlockSumAll(usize, usize),
    /// [B,1] -> [(B·block),c]
    BlockBroadcast { a: usize, block: usize },
    /// out row t = a[idx[t]]
    GatherRows { a: usize, idx: Rc<[usize]> },
    /// out[idx[t]] += a[t]
    ScatterAddRows { a: usize, idx: Rc<[usize]> },
    /// Mean cross-entropy of row-softmax against integer targets.
    /// `d_logits` caches (softmax - onehot)/B for the backward pass.
    SoftmaxCrossEntropy { logits: usize, d_logits: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. One graph per training step; evaluation-only
/// passes simply never call [`Graph::backward`].
pub struct Graph<T> {
    uid: u64,
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            uid: GRAPH_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest node size recorded so far, in elements. The scaling tests use
    /// this to assert that no quadratic-in-vertex-count buffer ever exists.
    pub fn max_node_numel(&self) -> usize {
        self.nodes
            .borrow()
            .iter()
            .map(|n| n.value.numel())
            .max()
            .unwrap_or(0)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Value {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Value {
            graph: self.uid,
            id,
        }
    }

    fn check(&self, v: Value) -> usize {
        assert_eq!(v.graph, self.uid, "value used on a foreign graph");
        v.id
    }

    /// Insert a leaf. `requires_grad` marks it as a differentiation target.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Value {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor<T>) -> Value {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Value) -> Tensor<T> {
        let id = self.check(v);
        self.nodes.borrow()[id].value.clone()
    }

    pub fn shape_of(&self, v: Value) -> Vec<usize> {
        let id = self.check(v);
        self.nodes.borrow()[id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Value) -> bool {
        let id = self.check(v);
        self.nodes.borrow()[id].requires_grad
    }

    pub fn all_finite(&self) -> bool {
        self.nodes.borrow().iter().all(|n| n.value.all_finite())
    }

    fn with_values<R>(&self, f: impl FnOnce(&[Node<T>]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    fn binary_shapes(&self, a: Value, b: Value) -> (Vec<usize>, Vec<usize>) {
        let (ai, bi) = (self.check(a), self.check(b));
        let nodes = self.nodes.borrow();
        (
            nodes[ai].value.shape().to_vec(),
            nodes[bi].value.shape().to_vec(),
        )
    }

    // ── arithmetic ops ──────────────────────────────────────────────

    pub fn matmul(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        self.with_values(|nodes| {
            matmul_nn(
                nodes[a.id].value.data(),
                nodes[b.id].value.data(),
                &mut out,
                m,
                k,
                n,
            )
        });
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            Tensor::new(vec![m, n], out).unwrap(),
            Op::MatMul(a.id, b.id),
            rg,
        )
    }

    /// a[m,k] · b[n,k]ᵀ → [m,n]
    pub fn matmul_nt(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[1],
            "matmul_nt shapes {sa:?} x {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![T::zero(); m * n];
        self.with_values(|nodes| {
            matmul_nt(
                nodes[a.id].value.data(),
                nodes[b.id].value.data(),
                &mut out,
                m,
                k,
                n,
            )
        });
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            Tensor::new(vec![m, n], out).unwrap(),
            Op::MatMulNT(a.id, b.id),
            rg,
        )
    }

    /// a[k,m]ᵀ · b[k,n] → [m,n]
    pub fn matmul_tn(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[0] == sb[0],
            "matmul_tn shapes {sa:?} x {sb:?}"
        );
        let (k, m, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        self.with_values(|nodes| {
            matmul_tn(
                nodes[a.id].value.data(),
                nodes[b.id].value.data(),
                &mut out,
                m,
                k,
                n,
            )
        });
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(
            Tensor::new(vec![m, n], out).unwrap(),
            Op::MatMulTN(a.id, b.id),
            rg,
        )
    }

    pub fn add(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert_eq!(sa, sb, "add shapes");
        let out = self.with_values(|nodes| nodes[a.id].value.add(&nodes[b.id].value).unwrap());
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, Op::Add(a.id, b.id), rg)
    }

    pub fn add_n(&self, inputs: &[Value]) -> Value {
        assert!(!inputs.is_empty(), "add_n of nothing");
        if inputs.len() == 1 {
            return inputs[0];
        }
        let ids: Vec<usize> = inputs.iter().map(|&v| self.check(v)).collect();
        let out = self.with_values(|nodes| {
            let mut acc = nodes[ids[0]].value.clone();
            for &i in &ids[1..] {
                acc = acc.add(&nodes[i].value).unwrap();
            }
            acc
        });
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push(out, Op::AddN(ids), rg)
    }

    pub fn sub(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert_eq!(sa, sb, "sub shapes");
        let out = self.with_values(|nodes| nodes[a.id].value.sub(&nodes[b.id].value).unwrap());
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, Op::Sub(a.id, b.id), rg)
    }

    pub fn neg(&self, a: Value) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| nodes[id].value.scale(-T::one()));
        let rg = self.requires_grad(a);
        self.push(out, Op::Neg(id), rg)
    }

    pub fn mul(&self, a: Value, b: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, b);
        assert_eq!(sa, sb, "mul shapes");
        let out = self.with_values(|nodes| nodes[a.id].value.mul(&nodes[b.id].value).unwrap());
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(out, Op::Mul(a.id, b.id), rg)
    }

    pub fn scale(&self, a: Value, c: T) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| nodes[id].value.scale(c));
        let rg = self.requires_grad(a);
        self.push(out, Op::Scale(id, c), rg)
    }

    pub fn add_const(&self, a: Value, c: T) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| nodes[id].value.map(|v| v + c));
        let rg = self.requires_grad(a);
        self.push(out, Op::AddConst(id, c), rg)
    }

    /// a[r,c] + bias[c], bias broadcast over rows.
    pub fn add_row_broadcast(&self, a: Value, bias: Value) -> Value {
        let (sa, sb) = self.binary_shapes(a, bias);
        assert!(
            sa.len() == 2 && sb.len() == 1 && sa[1] == sb[0],
            "add_row_broadcast shapes {sa:?} + {sb:?}"
        );
        let (r, c) = (sa[0], sa[1]);
        let out = self.with_values(|nodes| {
            let av = nodes[a.id].value.data();
            let bv = nodes[bias.id].value.data();
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    data.push(av[i * c + j] + bv[j]);
                }
            }
            Tensor::new(vec![r, c], data).unwrap()
        });
        let rg = self.requires_grad(a) || self.requires_grad(bias);
        self.push(out, Op::AddRowBroadcast(a.id, bias.id), rg)
    }

    /// [r,c] -> [c], summing over rows.
    pub fn sum_rows(&self, a: Value) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 2, "sum_rows wants a matrix");
        let (r, c) = (shape[0], shape[1]);
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = vec![T::zero(); c];
            for i in 0..r {
                for j in 0..c {
                    data[j] += av[i * c + j];
                }
            }
            Tensor::new(vec![c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::SumRows(id), rg)
    }

    /// [c] -> [rows,c], repeating the vector.
    pub fn broadcast_rows(&self, a: Value, rows: usize) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 1, "broadcast_rows wants a vector");
        let c = shape[0];
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = Vec::with_capacity(rows * c);
            for _ in 0..rows {
                data.extend_from_slice(av);
            }
            Tensor::new(vec![rows, c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::BroadcastRows(id), rg)
    }

    /// Any shape -> scalar [1].
    pub fn sum_all(&self, a: Value) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| Tensor::scalar(nodes[id].value.sum()));
        let rg = self.requires_grad(a);
        self.push(out, Op::SumAll(id), rg)
    }

    pub fn mean_all(&self, a: Value) -> Value {
        let n = self.with_values(|nodes| nodes[self.check(a)].value.numel());
        let s = self.sum_all(a);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// [1] -> shape, every element equal to the scalar.
    pub fn broadcast_scalar(&self, a: Value, shape: Vec<usize>) -> Value {
        let id = self.check(a);
        assert!(self.shape_of(a) == [1], "broadcast_scalar wants a scalar");
        let out = self.with_values(|nodes| Tensor::full(shape.clone(), nodes[id].value.item()));
        let rg = self.requires_grad(a);
        self.push(out, Op::BroadcastScalar(id), rg)
    }

    /// Elementwise max(x, slope·x). The subgradient at exactly 0 is taken as 1.
    pub fn leaky_relu(&self, a: Value, slope: T) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| {
            nodes[id]
                .value
                .map(|v| if v >= T::zero() { v } else { v * slope })
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::LeakyRelu(id, slope), rg)
    }

    pub fn sqrt(&self, a: Value) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| nodes[id].value.map(|v| v.sqrt()));
        let rg = self.requires_grad(a);
        self.push(out, Op::Sqrt(id), rg)
    }

    /// Column-wise max over each consecutive block of `block` rows:
    /// [(B·block),c] -> [B,c]. Ties go to the lowest row index.
    pub fn block_max_rows(&self, a: Value, block: usize) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 2, "block_max_rows wants a matrix");
        let (r, c) = (shape[0], shape[1]);
        assert!(block >= 1 && r % block == 0, "rows {r} not divisible by block {block}");
        let blocks = r / block;
        let mut argmax = vec![0usize; blocks * c];
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = vec![T::zero(); blocks * c];
            for b in 0..blocks {
                let base = b * block;
                for j in 0..c {
                    let mut best = av[base * c + j];
                    let mut best_row = base;
                    for t in 1..block {
                        let v = av[(base + t) * c + j];
                        if v > best {
                            best = v;
                            best_row = base + t;
                        }
                    }
                    data[b * c + j] = best;
                    argmax[b * c + j] = best_row;
                }
            }
            Tensor::new(vec![blocks, c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(
            out,
            Op::BlockMaxRows {
                a: id,
                argmax: argmax.into(),
            },
            rg,
        )
    }

    fn scatter_block_max(&self, g: Value, argmax: Rc<[usize]>, rows: usize) -> Value {
        let id = self.check(g);
        let shape = self.shape_of(g);
        let (blocks, c) = (shape[0], shape[1]);
        assert_eq!(argmax.len(), blocks * c);
        let out = self.with_values(|nodes| {
            let gv = nodes[id].value.data();
            let mut data = vec![T::zero(); rows * c];
            for b in 0..blocks {
                for j in 0..c {
                    data[argmax[b * c + j] * c + j] += gv[b * c + j];
                }
            }
            Tensor::new(vec![rows, c], data).unwrap()
        });
        let rg = self.requires_grad(g);
        self.push(
            out,
            Op::ScatterBlockMax { g: id, argmax },
            rg,
        )
    }

    fn gather_block_max(&self, a: Value, argmax: Rc<[usize]>, blocks: usize, c: usize) -> Value {
        let id = self.check(a);
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = vec![T::zero(); blocks * c];
            for b in 0..blocks {
                for j in 0..c {
                    data[b * c + j] = av[argmax[b * c + j] * c + j];
                }
            }
            Tensor::new(vec![blocks, c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::GatherBlockMax { a: id, argmax }, rg)
    }

    /// [(B·block),c] -> [B,1], each output the sum of one whole block.
    pub fn block_sum_all(&self, a: Value, block: usize) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 2, "block_sum_all wants a matrix");
        let (r, c) = (shape[0], shape[1]);
        assert!(block >= 1 && r % block == 0);
        let blocks = r / block;
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = vec![T::zero(); blocks];
            for b in 0..blocks {
                let mut acc = T::zero();
                for t in 0..block {
                    for j in 0..c {
                        acc += av[(b * block + t) * c + j];
                    }
                }
                data[b] = acc;
            }
            Tensor::new(vec![blocks, 1], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::BlockSumAll(id, block), rg)
    }

    /// [B,1] -> [(B·block),cols], each scalar repeated over its block.
    pub fn block_broadcast(&self, a: Value, block: usize, cols: usize) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert!(shape.len() == 2 && shape[1] == 1, "block_broadcast wants [B,1]");
        let blocks = shape[0];
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = Vec::with_capacity(blocks * block * cols);
            for b in 0..blocks {
                for _ in 0..block * cols {
                    data.push(av[b]);
                }
            }
            Tensor::new(vec![blocks * block, cols], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(
            out,
            Op::BlockBroadcast { a: id, block },
            rg,
        )
    }

    /// out row t = a[idx[t]].
    pub fn gather_rows(&self, a: Value, idx: Rc<[usize]>) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 2, "gather_rows wants a matrix");
        let (r, c) = (shape[0], shape[1]);
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                assert!(i < r, "gather index {i} out of {r} rows");
                data.extend_from_slice(&av[i * c..(i + 1) * c]);
            }
            Tensor::new(vec![idx.len(), c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::GatherRows { a: id, idx }, rg)
    }

    /// out[idx[t]] += a[t]; output has `rows` rows.
    pub fn scatter_add_rows(&self, a: Value, idx: Rc<[usize]>, rows: usize) -> Value {
        let id = self.check(a);
        let shape = self.shape_of(a);
        assert_eq!(shape.len(), 2, "scatter_add_rows wants a matrix");
        let c = shape[1];
        assert_eq!(shape[0], idx.len());
        let out = self.with_values(|nodes| {
            let av = nodes[id].value.data();
            let mut data = vec![T::zero(); rows * c];
            for (t, &i) in idx.iter().enumerate() {
                assert!(i < rows);
                for j in 0..c {
                    data[i * c + j] += av[t * c + j];
                }
            }
            Tensor::new(vec![rows, c], data).unwrap()
        });
        let rg = self.requires_grad(a);
        self.push(out, Op::ScatterAddRows { a: id, idx }, rg)
    }

    /// Mean cross-entropy between row-softmax of `logits` and integer targets.
    pub fn softmax_cross_entropy(&self, logits: Value, targets: &[usize]) -> Value {
        let id = self.check(logits);
        let shape = self.shape_of(logits);
        assert!(shape.len() == 2 && shape[0] == targets.len());
        let (b, c) = (shape[0], shape[1]);
        let binv = T::one() / T::from_usize(b).unwrap();
        let mut d_logits = vec![T::zero(); b * c];
        let out = self.with_values(|nodes| {
            let lv = nodes[id].value.data();
            let mut loss = T::zero();
            for i in 0..b {
                let row = &lv[i * c..(i + 1) * c];
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut z = T::zero();
                for &v in row {
                    z += (v - mx).exp();
                }
                let lse = mx + z.ln();
                loss += lse - row[targets[i]];
                for j in 0..c {
                    let p = (row[j] - mx).exp() / z;
                    let oh = if j == targets[i] { T::one() } else { T::zero() };
                    d_logits[i * c + j] = (p - oh) * binv;
                }
            }
            Tensor::scalar(loss * binv)
        });
        let rg = self.requires_grad(logits);
        self.push(
            out,
            Op::SoftmaxCrossEntropy {
                logits: id,
                d_logits: Tensor::new(vec![b, c], d_logits).unwrap(),
            },
            rg,
        )
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode differentiation of a scalar `output` with respect to
    /// `wrt`. Gradient tensors are emitted as nodes on this graph, so they
    /// can participate in further recorded computation (second-order paths).
    ///
    /// Returns one handle per `wrt` entry; `None` when the output does not
    /// depend on it (that gradient is exactly zero).
    pub fn backward(&self, output: Value, wrt: &[Value]) -> Result<Vec<Option<Value>>> {
        let out_id = self.check(output);
        if self.with_values(|nodes| nodes[out_id].value.numel()) != 1 {
            return Err(Error::contract(
                "backward requires a scalar output".to_string(),
            ));
        }
        for &v in wrt {
            self.check(v);
        }

        let mut grads: Vec<Option<Value>> = vec![None; out_id + 1];
        grads[out_id] = Some(self.constant(Tensor::scalar(T::one())));

        for id in (0..=out_id).rev() {
            let Some(g) = grads[id] else { continue };
            if !self.with_values(|nodes| nodes[id].requires_grad) {
                continue;
            }
            self.apply_vjp(id, g, &mut grads);
        }

        Ok(wrt
            .iter()
            .map(|v| grads.get(v.id).copied().flatten())
            .collect())
    }

    /// One contribution to `grads[target]`, accumulating by addition.
    fn accumulate(&self, grads: &mut [Option<Value>], target: usize, g: Value) {
        if target >= grads.len() {
            return;
        }
        grads[target] = Some(match grads[target] {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    fn apply_vjp(&self, id: usize, g: Value, grads: &mut [Option<Value>]) {
        enum VjpPlan<T> {
            None,
            One(usize, Plan<T>),
            Two((usize, Plan<T>), (usize, Plan<T>)),
            Fanout(Vec<usize>),
        }
        enum Plan<T> {
            Pass,
            Neg,
            Scale(T),
            MulByNode(usize),
            MulByConst(Tensor<T>),
            BroadcastMulConst(Tensor<T>),
            MatMulNTWith(usize),
            MatMulTNOf(usize),
            MatMulWith(usize),
            MatMulTNWith(usize),
            MatMulNTOf(usize),
            MatMulOf(usize),
            SumRows,
            BroadcastRows(usize),
            SumAll,
            BroadcastScalar(Vec<usize>),
            ScatterMax(Rc<[usize]>, usize),
            GatherMax(Rc<[usize]>, usize, usize),
            BlockBroadcast(usize, usize),
            BlockSum(usize),
            Scatter(Rc<[usize]>, usize),
            Gather(Rc<[usize]>),
        }

        let plan = self.with_values(|nodes| {
            let needs = |i: usize| nodes[i].requires_grad;
            match &nodes[id].op {
                Op::Leaf => VjpPlan::None,
                Op::MatMul(a, b) => {
                    let pa = needs(*a).then_some((*a, Plan::MatMulNTWith(*b)));
                    let pb = needs(*b).then_some((*b, Plan::MatMulTNOf(*a)));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::MatMulNT(a, b) => {
                    // c = a·bᵀ: da = g·b, db = gᵀ·a
                    let pa = needs(*a).then_some((*a, Plan::MatMulWith(*b)));
                    let pb = needs(*b).then_some((*b, Plan::MatMulTNWith(*a)));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::MatMulTN(a, b) => {
                    // c = aᵀ·b: da = b·gᵀ, db = a·g
                    let pa = needs(*a).then_some((*a, Plan::MatMulNTOf(*b)));
                    let pb = needs(*b).then_some((*b, Plan::MatMulOf(*a)));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::Add(a, b) => {
                    let pa = needs(*a).then_some((*a, Plan::Pass));
                    let pb = needs(*b).then_some((*b, Plan::Pass));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::AddN(inputs) => {
                    VjpPlan::Fanout(inputs.iter().copied().filter(|&i| needs(i)).collect())
                }
                Op::Sub(a, b) => {
                    let pa = needs(*a).then_some((*a, Plan::Pass));
                    let pb = needs(*b).then_some((*b, Plan::Neg));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::Neg(a) => VjpPlan::One(*a, Plan::Neg),
                Op::Mul(a, b) => {
                    let pa = needs(*a).then_some((*a, Plan::MulByNode(*b)));
                    let pb = needs(*b).then_some((*b, Plan::MulByNode(*a)));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::Scale(a, c) => VjpPlan::One(*a, Plan::Scale(*c)),
                Op::AddConst(a, _) => VjpPlan::One(*a, Plan::Pass),
                Op::AddRowBroadcast(a, bias) => {
                    let pa = needs(*a).then_some((*a, Plan::Pass));
                    let pb = needs(*bias).then_some((*bias, Plan::SumRows));
                    match (pa, pb) {
                        (Some(x), Some(y)) => VjpPlan::Two(x, y),
                        (Some(x), None) | (None, Some(x)) => VjpPlan::One(x.0, x.1),
                        (None, None) => VjpPlan::None,
                    }
                }
                Op::SumRows(a) => {
                    VjpPlan::One(*a, Plan::BroadcastRows(nodes[*a].value.shape()[0]))
                }
                Op::BroadcastRows(a) => VjpPlan::One(*a, Plan::SumRows),
                Op::SumAll(a) => {
                    VjpPlan::One(*a, Plan::BroadcastScalar(nodes[*a].value.shape().to_vec()))
                }
                Op::BroadcastScalar(a) => VjpPlan::One(*a, Plan::SumAll),
                Op::LeakyRelu(a, slope) => {
                    let mask = nodes[*a]
                        .value
                        .map(|v| if v >= T::zero() { T::one() } else { *slope });
                    VjpPlan::One(*a, Plan::MulByConst(mask))
                }
                Op::Sqrt(a) => {
                    let half = T::of_f64(0.5);
                    let coeff = nodes[id].value.map(|out| half / out);
                    VjpPlan::One(*a, Plan::MulByConst(coeff))
                }
                Op::BlockMaxRows { a, argmax, .. } => VjpPlan::One(
                    *a,
                    Plan::ScatterMax(argmax.clone(), nodes[*a].value.shape()[0]),
                ),
                Op::ScatterBlockMax { g: src, argmax } => {
                    let shape = nodes[*src].value.shape();
                    VjpPlan::One(*src, Plan::GatherMax(argmax.clone(), shape[0], shape[1]))
                }
                Op::GatherBlockMax { a, argmax } => VjpPlan::One(
                    *a,
                    Plan::ScatterMax(argmax.clone(), nodes[*a].value.shape()[0]),
                ),
                Op::BlockSumAll(a, block) => {
                    let cols = nodes[*a].value.shape()[1];
                    VjpPlan::One(*a, Plan::BlockBroadcast(*block, cols))
                }
                Op::BlockBroadcast { a, block, .. } => VjpPlan::One(*a, Plan::BlockSum(*block)),
                Op::GatherRows { a, idx } => VjpPlan::One(
                    *a,
                    Plan::Scatter(idx.clone(), nodes[*a].value.shape()[0]),
                ),
                Op::ScatterAddRows { a, idx } => VjpPlan::One(*a, Plan::Gather(idx.clone())),
                Op::SoftmaxCrossEntropy { logits, d_logits } => {
                    VjpPlan::One(*logits, Plan::BroadcastMulConst(d_logits.clone()))
                }
            }
        });

        let exec = |plan: Plan<T>, g: Value| -> Value {
            match plan {
                Plan::Pass => g,
                Plan::Neg => self.neg(g),
                Plan::Scale(c) => self.scale(g, c),
                Plan::MulByNode(other) => self.mul(
                    g,
                    Value {
                        graph: self.uid,
                        id: other,
                    },
                ),
                Plan::MulByConst(t) => {
                    let c = self.constant(t);
                    self.mul(g, c)
                }
                Plan::BroadcastMulConst(t) => {
                    let wide = self.broadcast_scalar(g, t.shape().to_vec());
                    let c = self.constant(t);
                    self.mul(wide, c)
                }
                Plan::MatMulNTWith(b) => self.matmul_nt(
                    g,
                    Value {
                        graph: self.uid,
                        id: b,
                    },
                ),
                Plan::MatMulTNOf(a) => self.matmul_tn(
                    Value {
                        graph: self.uid,
                        id: a,
                    },
                    g,
                ),
                Plan::MatMulWith(b) => self.matmul(
                    g,
                    Value {
                        graph: self.uid,
                        id: b,
                    },
                ),
                Plan::MatMulTNWith(a) => self.matmul_tn(
                    g,
                    Value {
                        graph: self.uid,
                        id: a,
                    },
                ),
                Plan::MatMulNTOf(b) => self.matmul_nt(
                    Value {
                        graph: self.uid,
                        id: b,
                    },
                    g,
                ),
                Plan::MatMulOf(a) => self.matmul(
                    Value {
                        graph: self.uid,
                        id: a,
                    },
                    g,
                ),
                Plan::SumRows => self.sum_rows(g),
                Plan::BroadcastRows(rows) => self.broadcast_rows(g, rows),
                Plan::SumAll => self.sum_all(g),
                Plan::BroadcastScalar(shape) => self.broadcast_scalar(g, shape),
                Plan::ScatterMax(argmax, rows) => self.scatter_block_max(g, argmax, rows),
                Plan::GatherMax(argmax, blocks, cols) => {
                    self.gather_block_max(g, argmax, blocks, cols)
                }
                Plan::BlockBroadcast(block, cols) => self.block_broadcast(g, block, cols),
                Plan::BlockSum(block) => self.block_sum_all(g, block),
                Plan::Scatter(idx, rows) => self.scatter_add_rows(g, idx, rows),
                Plan::Gather(idx) => self.gather_rows(g, idx),
            }
        };

        match plan {
            VjpPlan::None => {}
            VjpPlan::One(target, p) => {
                let gv = exec(p, g);
                self.accumulate(grads, target, gv);
            }
            VjpPlan::Two((t1, p1), (t2, p2)) => {
                let g1 = exec(p1, g);
                self.accumulate(grads, t1, g1);
                let g2 = exec(p2, g);
                self.accumulate(grads, t2, g2);
            }
            VjpPlan::Fanout(targets) => {
                for t in targets {
                    self.accumulate(grads, t, g);
                }
            }
        }
    }
}
