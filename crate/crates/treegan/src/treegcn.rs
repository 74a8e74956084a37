//! The generator: tree-structured graph convolutions.
//!
//! A tree grows from the latent root. Each layer fans every node out into
//! `d_l` children (branching) and updates node features from a two-stage
//! loop map through K hidden supports plus one linear map per ancestor
//! depth, with all completed layers kept around as the ancestor store.
//! Connectivity is carried entirely by index arithmetic on contiguous
//! sibling blocks — nothing ever materializes an adjacency matrix.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::{xavier_uniform, Binding, ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GeneratorConfig {
    /// Branching degree per layer, d_1..d_L. The final point count is their
    /// product.
    pub degrees: Vec<usize>,
    /// Feature width per layer, length L+1: latent width first, 3 last.
    pub feature_dims: Vec<usize>,
    /// Hidden width K of the loop term.
    pub supports: usize,
    /// LeakyReLU negative slope for hidden layers.
    pub slope: f64,
    /// Use one branching matrix per node instead of one shared stack per
    /// layer. Parameter-heavy; for fidelity experiments only.
    pub per_node_branching: bool,
    /// Branch before the convolution within a layer (the default) or after.
    pub branch_before_conv: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            degrees: vec![1, 2, 2, 2, 2, 2, 64],
            feature_dims: vec![96, 256, 256, 256, 128, 128, 128, 3],
            supports: 10,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
        }
    }
}

impl GeneratorConfig {
    pub fn layer_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.feature_dims[0]
    }

    /// Node count at each layer 0..=L, starting from the single root.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.degrees.len() + 1);
        let mut n = 1usize;
        sizes.push(n);
        for &d in &self.degrees {
            n *= d;
            sizes.push(n);
        }
        sizes
    }

    pub fn point_count(&self) -> usize {
        self.degrees.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.degrees.len();
        if l == 0 {
            return Err(Error::config("degree schedule is empty"));
        }
        if self.feature_dims.len() != l + 1 {
            return Err(Error::config(format!(
                "feature_dims needs {} entries for {} layers, got {}",
                l + 1,
                l,
                self.feature_dims.len()
            )));
        }
        if *self.feature_dims.last().unwrap() != 3 {
            return Err(Error::config("final feature width must be 3"));
        }
        if self.degrees.iter().any(|&d| d == 0) {
            return Err(Error::config("branching degrees must be positive"));
        }
        if self.feature_dims.iter().any(|&d| d == 0) {
            return Err(Error::config("feature widths must be positive"));
        }
        if self.supports == 0 {
            return Err(Error::config("support count K must be at least 1"));
        }
        if self.slope <= 0.0 || self.slope >= 1.0 {
            return Err(Error::config("slope must lie in (0,1)"));
        }
        Ok(())
    }
}

/// The tree of one generated cloud: node features per layer plus the
/// child → parent maps (entry l maps layer-(l+1) children to layer-l
/// parents).
#[derive(Clone, Debug)]
pub struct TreeState<T> {
    pub layers: Vec<Tensor<T>>,
    pub parent_maps: Vec<Vec<usize>>,
}

impl<T: Scalar> TreeState<T> {
    /// Ancestor indices of a final-layer point, one per layer 0..L-1, found
    /// by walking the parent maps from the leaf to the root.
    pub fn ancestors_of(&self, final_index: usize) -> Result<Vec<usize>> {
        let leaves = self.layers.last().map(|t| t.rows()).unwrap_or(0);
        if final_index >= leaves {
            return Err(Error::OutOfRange {
                what: "final-layer point index",
                index: final_index,
                limit: leaves,
            });
        }
        let mut path = vec![0usize; self.parent_maps.len()];
        let mut node = final_index;
        for l in (0..self.parent_maps.len()).rev() {
            node = self.parent_maps[l][node];
            path[l] = node;
        }
        Ok(path)
    }
}

/// Ancestor of `node` (a layer-`at` index) at the shallower layer `depth`,
/// from contiguous-block arithmetic.
pub fn ancestor_index(sizes: &[usize], at: usize, node: usize, depth: usize) -> usize {
    node / (sizes[at] / sizes[depth])
}

struct LayerParams {
    /// Branching stacks: `branch[node][j]`, with a single shared stack at
    /// index 0 unless per-node branching is on. Square in the width where
    /// branching runs (input width when branching precedes the convolution,
    /// output width otherwise).
    branch: Vec<Vec<ParamId>>,
    loop_w1: ParamId,
    loop_b1: ParamId,
    loop_w2: ParamId,
    /// One U per ancestor depth 0..=l.
    ancestors: Vec<ParamId>,
    bias: ParamId,
}

/// Generator network. Parameters live in a [`ParamSet`] so training,
/// checkpointing, and finite-difference checks all see the same flat list.
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: ParamSet<T>,
    layers: Vec<LayerParams>,
}

impl<T: Scalar> Generator<T> {
    pub fn init(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let sizes = config.layer_sizes();
        let k = config.supports;
        let mut layers = Vec::with_capacity(config.layer_count());

        for l in 0..config.layer_count() {
            let d_in = config.feature_dims[l];
            let d_out = config.feature_dims[l + 1];
            let degree = config.degrees[l];
            let bdim = if config.branch_before_conv { d_in } else { d_out };

            let node_stacks = if config.per_node_branching { sizes[l] } else { 1 };
            let mut branch = Vec::with_capacity(node_stacks);
            for i in 0..node_stacks {
                let mut stack = Vec::with_capacity(degree);
                for j in 0..degree {
                    let name = if config.per_node_branching {
                        format!("gen.l{l}.branch.n{i}.c{j}")
                    } else {
                        format!("gen.l{l}.branch.c{j}")
                    };
                    stack.push(params.add(name, xavier_uniform(bdim, bdim, vec![bdim, bdim], rng)));
                }
                branch.push(stack);
            }

            let loop_w1 = params.add(
                format!("gen.l{l}.loop.w1"),
                xavier_uniform(d_in, k, vec![d_in, k], rng),
            );
            let loop_b1 = params.add(format!("gen.l{l}.loop.b1"), Tensor::zeros(vec![k]));
            let loop_w2 = params.add(
                format!("gen.l{l}.loop.w2"),
                xavier_uniform(k, d_out, vec![k, d_out], rng),
            );

            let ancestors = (0..=l)
                .map(|j| {
                    let d_anc = config.feature_dims[j];
                    params.add(
                        format!("gen.l{l}.anc{j}"),
                        xavier_uniform(d_anc, d_out, vec![d_anc, d_out], rng),
                    )
                })
                .collect();

            let bias = params.add(format!("gen.l{l}.bias"), Tensor::zeros(vec![d_out]));

            layers.push(LayerParams {
                branch,
                loop_w1,
                loop_b1,
                loop_w2,
                ancestors,
                bias,
            });
        }

        Ok(Generator {
            config,
            params,
            layers,
        })
    }

    /// Branching for layer `l`: every row of `points` spawns `degrees[l]`
    /// child rows, children of one row contiguous, so parent(c) = c / d.
    fn branch(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        points: Value,
        l: usize,
        batch: usize,
    ) -> Value {
        let degree = self.config.degrees[l];
        let m = g.shape_of(points)[0]; // batch * nodes at layer l
        let per_sample = m / batch;
        let out_rows = m * degree;
        let lp = &self.layers[l];

        if !self.config.per_node_branching {
            let mut pieces = Vec::with_capacity(degree);
            for j in 0..degree {
                let child = g.matmul_nt(points, binding.value(lp.branch[0][j]));
                let idx: Rc<[usize]> = (0..m).map(|i| i * degree + j).collect();
                pieces.push(g.scatter_add_rows(child, idx, out_rows));
            }
            g.add_n(&pieces)
        } else {
            let mut pieces = Vec::with_capacity(m * degree);
            for i in 0..m {
                let node_local = i % per_sample;
                let point = g.gather_rows(points, Rc::from(vec![i]));
                for j in 0..degree {
                    let child = g.matmul_nt(point, binding.value(lp.branch[node_local][j]));
                    pieces.push(g.scatter_add_rows(child, Rc::from(vec![i * degree + j]), out_rows));
                }
            }
            g.add_n(&pieces)
        }
    }

    /// Loop with K supports: points → K hidden units → d_out.
    fn loop_k_supports(&self, g: &Graph<T>, binding: &Binding, x: Value, l: usize) -> Value {
        let lp = &self.layers[l];
        let slope = T::of_f64(self.config.slope);
        let h = g.matmul(x, binding.value(lp.loop_w1));
        let h = g.add_row_broadcast(h, binding.value(lp.loop_b1));
        let a = g.leaky_relu(h, slope);
        g.matmul(a, binding.value(lp.loop_w2))
    }

    /// Row indices mapping each node of `target` layer (batched) to its
    /// ancestor at `depth`. With target == depth this is the identity.
    fn ancestor_indices(
        &self,
        sizes: &[usize],
        target: usize,
        depth: usize,
        batch: usize,
    ) -> Rc<[usize]> {
        let per_sample = sizes[target];
        let stride = sizes[target] / sizes[depth];
        (0..batch * per_sample)
            .map(|t| {
                let b = t / per_sample;
                let local = t % per_sample;
                b * sizes[depth] + local / stride
            })
            .collect()
    }

    /// σ(loop(x) + Σ_j U_j·ancestor_j + bias) for rows holding the batched
    /// nodes of `target` layer. The ancestor store is the tree built so far.
    fn convolve(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        tree: &[Value],
        x: Value,
        l: usize,
        target: usize,
        batch: usize,
    ) -> Value {
        let sizes = self.config.layer_sizes();
        let lp = &self.layers[l];
        let mut terms = vec![self.loop_k_supports(g, binding, x, l)];
        for (depth, &u) in lp.ancestors.iter().enumerate() {
            let idx = self.ancestor_indices(&sizes, target, depth, batch);
            let anc = g.gather_rows(tree[depth], idx);
            terms.push(g.matmul(anc, binding.value(u)));
        }
        let pre = g.add_n(&terms);
        let pre = g.add_row_broadcast(pre, binding.value(lp.bias));
        if l + 1 == self.config.layer_count() {
            pre // coordinates stay unbounded: no nonlinearity on the last layer
        } else {
            g.leaky_relu(pre, T::of_f64(self.config.slope))
        }
    }

    /// Extend the tree by one layer. Default order: branch, then convolve,
    /// so children immediately mix ancestor information. The alternative
    /// order convolves the parents (their own value entering both the loop
    /// and the depth-l ancestor slot) and branches the result.
    fn extend(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        tree: &mut Vec<Value>,
        l: usize,
        batch: usize,
    ) {
        let out = if self.config.branch_before_conv {
            let children = self.branch(g, binding, tree[l], l, batch);
            self.convolve(g, binding, tree, children, l, l + 1, batch)
        } else {
            let conv = self.convolve(g, binding, tree, tree[l], l, l, batch);
            self.branch(g, binding, conv, l, batch)
        };
        tree.push(out);
    }

    /// Full recorded forward pass for a batch of latents z [B × latent_dim].
    /// Returns the per-layer node matrices; the last is [(B·n) × 3].
    pub fn forward(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        z: Value,
        batch: usize,
    ) -> Result<Vec<Value>> {
        let shape = g.shape_of(z);
        if shape.len() != 2 || shape[0] != batch || shape[1] != self.config.latent_dim() {
            return Err(Error::contract(format!(
                "latent batch shape {:?} does not match batch {} × latent dim {}",
                shape,
                batch,
                self.config.latent_dim()
            )));
        }
        let mut tree = vec![z];
        for l in 0..self.config.layer_count() {
            self.extend(g, binding, &mut tree, l, batch);
        }
        Ok(tree)
    }

    /// Deterministic single-cloud forward pass outside of training. Returns
    /// the n×3 coordinates and the retained tree.
    pub fn generate(&self, z: &Tensor<T>) -> Result<(Tensor<T>, TreeState<T>)> {
        if z.numel() != self.config.latent_dim() {
            return Err(Error::contract(format!(
                "latent size {} does not match configured latent dim {}",
                z.numel(),
                self.config.latent_dim()
            )));
        }
        let g = Graph::new();
        let binding = self.params.bind(&g, false);
        let zv = g.leaf(z.reshaped(vec![1, z.numel()])?, false);
        let tree = self.forward(&g, &binding, zv, 1)?;
        let layers: Vec<Tensor<T>> = tree.iter().map(|&v| g.value(v)).collect();
        let parent_maps = self
            .config
            .degrees
            .iter()
            .zip(self.config.layer_sizes().iter().skip(1))
            .map(|(&d, &size)| (0..size).map(|c| c / d).collect())
            .collect();
        let cloud = layers.last().unwrap().clone();
        Ok((cloud, TreeState { layers, parent_maps }))
    }

    /// Generate one cloud per row of `zs` in a single batched pass.
    pub fn generate_batch(&self, zs: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let batch = zs.rows();
        let g = Graph::new();
        let binding = self.params.bind(&g, false);
        let zv = g.leaf(zs.clone(), false);
        let tree = self.forward(&g, &binding, zv, batch)?;
        let flat = g.value(*tree.last().unwrap());
        let n = self.config.point_count();
        Ok((0..batch)
            .map(|b| {
                Tensor::new(vec![n, 3], flat.data()[b * n * 3..(b + 1) * n * 3].to_vec()).unwrap()
            })
            .collect())
    }
}

/// One step of the first-order GCN this generator replaces, kept for
/// ablation comparisons: p_i' = σ(W p_i + Σ_{q ∈ N(i)} U q + b). Requires
/// explicit connectivity.
pub fn gcn_reference_layer<T: Scalar>(
    g: &Graph<T>,
    points: Value,
    neighbors: &[Vec<usize>],
    w: Value,
    u: Value,
    b: Value,
    slope: T,
) -> Result<Value> {
    let m = g.shape_of(points)[0];
    if neighbors.len() != m {
        return Err(Error::contract(format!(
            "neighbor lists cover {} nodes but there are {} points",
            neighbors.len(),
            m
        )));
    }
    let mut pre = g.matmul(points, w);
    let total: usize = neighbors.iter().map(|n| n.len()).sum();
    if total > 0 {
        let mut src = Vec::with_capacity(total);
        let mut dst = Vec::with_capacity(total);
        for (i, ns) in neighbors.iter().enumerate() {
            for &q in ns {
                src.push(q);
                dst.push(i);
            }
        }
        let gathered = g.gather_rows(points, src.into());
        let mapped = g.matmul(gathered, u);
        let nsum = g.scatter_add_rows(mapped, dst.into(), m);
        pre = g.add(pre, nsum);
    }
    let pre = g.add_row_broadcast(pre, b);
    Ok(g.leaky_relu(pre, slope))
}
