//! Meaning carried by the tree structure: part extraction from ancestor
//! selections, latent interpolation, the exact oracle for the simplified
//! distance recursion, and the sibling-cohesion statistic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::treegcn::{Generator, TreeState};

/// A set of ancestors at one layer and the final-index block set they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct PartSelection {
    pub layer: usize,
    pub indices: Vec<usize>,
}

impl PartSelection {
    /// Parse the CLI form `layer:index[,index...]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (layer, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::config(format!("part selection '{spec}' wants layer:idx[,idx...]")))?;
        let layer = layer
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("bad layer in part selection '{spec}'")))?;
        let indices = rest
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad index '{t}' in part selection")))
            })
            .collect::<Result<Vec<usize>>>()?;
        if indices.is_empty() {
            return Err(Error::config("part selection needs at least one index"));
        }
        Ok(PartSelection { layer, indices })
    }
}

/// Node counts per layer implied by a degree schedule, root included.
fn layer_sizes(degrees: &[usize]) -> Vec<usize> {
    let mut sizes = vec![1usize];
    for &d in degrees {
        sizes.push(sizes.last().unwrap() * d);
    }
    sizes
}

/// The contiguous block of final-layer indices descending from ancestor `a`
/// at `layer`. Depends only on the degree schedule, never on latents or
/// parameters.
pub fn leaves_of_ancestor(degrees: &[usize], layer: usize, a: usize) -> Result<std::ops::Range<usize>> {
    let sizes = layer_sizes(degrees);
    if layer >= sizes.len() {
        return Err(Error::OutOfRange {
            what: "tree layer",
            index: layer,
            limit: sizes.len(),
        });
    }
    if a >= sizes[layer] {
        return Err(Error::OutOfRange {
            what: "ancestor index",
            index: a,
            limit: sizes[layer],
        });
    }
    let stride = sizes[sizes.len() - 1] / sizes[layer];
    Ok(a * stride..(a + 1) * stride)
}

/// Deepest layer at which two final-layer points share an ancestor.
/// Layers holding a single node are skipped (agreement there carries no
/// information), so the floor is 0: only the root is shared. Identical
/// indices share everything, depth L.
pub fn shared_ancestor_depth(degrees: &[usize], i: usize, j: usize) -> Result<usize> {
    let sizes = layer_sizes(degrees);
    let n = sizes[sizes.len() - 1];
    let depth_limit = degrees.len();
    for &idx in &[i, j] {
        if idx >= n {
            return Err(Error::OutOfRange {
                what: "final-layer point index",
                index: idx,
                limit: n,
            });
        }
    }
    if i == j {
        return Ok(depth_limit);
    }
    for l in (1..=depth_limit).rev() {
        if sizes[l] <= 1 {
            continue;
        }
        let stride = n / sizes[l];
        if i / stride == j / stride {
            return Ok(l);
        }
    }
    Ok(0)
}

/// Rows of the generated cloud selected by ancestors, labeled by the
/// position of the owning ancestor in the selection.
pub fn extract_part<T: Scalar>(
    cloud: &Tensor<T>,
    tree: &TreeState<T>,
    selection: &PartSelection,
) -> Result<crate::data::PointCloud<T>> {
    if tree.layers.is_empty() {
        return Err(Error::contract("tree state missing: retain it from generation"));
    }
    let degrees: Vec<usize> = tree
        .parent_maps
        .iter()
        .zip(tree.layers.windows(2))
        .map(|(_, w)| w[1].rows() / w[0].rows())
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (which, &a) in selection.indices.iter().enumerate() {
        let block = leaves_of_ancestor(&degrees, selection.layer, a)?;
        for r in block {
            rows.push(cloud.row(r).to_vec());
            labels.push(which as u16);
        }
    }
    let mut part = crate::data::PointCloud::new(Tensor::from_rows(&rows))?;
    part.labels = Some(labels);
    Ok(part)
}

/// Clouds G(z_α) for z_α = (1−α)z₁ + αz₂, in alpha order.
pub fn interpolate<T: Scalar>(
    generator: &Generator<T>,
    z1: &Tensor<T>,
    z2: &Tensor<T>,
    alphas: &[f64],
) -> Result<Vec<Tensor<T>>> {
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::config("interpolation alphas must lie in [0,1]"));
    }
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let a = T::of_f64(alpha);
        let z = z1
            .scale(T::one() - a)
            .add(&z2.scale(a))?;
        let (cloud, _) = generator.generate(&z)?;
        out.push(cloud);
    }
    Ok(out)
}

/// Result of the simplified-recursion oracle.
#[derive(Clone, Debug)]
pub struct Prop1Report {
    pub draws: usize,
    /// Worst |‖p_s−p_i‖² − ‖S_s−S_i‖²| over same-parent pairs.
    pub same_parent_max_residual: f64,
    /// Violations of the depth-factored bound ‖p_d−p_i‖² ≤ m·RHS, where m
    /// counts the layers whose ancestors differ.
    pub factored_violations: usize,
    /// Violations of the bound as printed, without the factor.
    pub unfactored_violations: usize,
    pub unfactored_violation_rate: f64,
}

/// Exact oracle on the simplified recursion: identity activation, no
/// ancestor mixing, no branching transform; each leaf is the sum of the
/// loop outputs S along its ancestor path. Under this additive reading the
/// same-parent identity is exact, and different-parent pairs are tested
/// against both the depth-factored and the raw bound.
pub fn prop1_oracle(
    degrees: &[usize],
    feature_dim: usize,
    draws: usize,
    seed: u64,
) -> Result<Prop1Report> {
    let sizes = layer_sizes(degrees);
    let depth = degrees.len();
    let n = sizes[depth];
    if *degrees.last().unwrap_or(&0) < 2 || n < 3 {
        return Err(Error::config(
            "the oracle needs a final degree of at least 2 and at least 3 leaves",
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut report = Prop1Report {
        draws,
        same_parent_max_residual: 0.0,
        factored_violations: 0,
        unfactored_violations: 0,
        unfactored_violation_rate: 0.0,
    };

    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    for _ in 0..draws {
        // Loop outputs for every node of every layer 1..=L.
        let loops: Vec<Vec<f64>> = (1..=depth)
            .map(|l| {
                (0..sizes[l] * feature_dim)
                    .map(|_| f64::sample_normal(&mut rng))
                    .collect()
            })
            .collect();
        let anc = |leaf: usize, l: usize| leaf / (n / sizes[l]);
        let s_at = |leaf: usize, l: usize| -> &[f64] {
            let a = anc(leaf, l);
            &loops[l - 1][a * feature_dim..(a + 1) * feature_dim]
        };
        let leaf_value = |leaf: usize| -> Vec<f64> {
            let mut p = vec![0.0; feature_dim];
            for l in 1..=depth {
                for (pc, sc) in p.iter_mut().zip(s_at(leaf, l)) {
                    *pc += sc;
                }
            }
            p
        };

        // Same-parent pair: two leaves of one final sibling block.
        let d_last = degrees[depth - 1];
        let block = rng.random_range(0..n / d_last);
        let a = block * d_last + rng.random_range(0..d_last);
        let b = loop {
            let c = block * d_last + rng.random_range(0..d_last);
            if c != a {
                break c;
            }
        };
        let (pa, pb) = (leaf_value(a), leaf_value(b));
        let diff: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
        let sdiff: Vec<f64> = s_at(a, depth)
            .iter()
            .zip(s_at(b, depth))
            .map(|(x, y)| x - y)
            .collect();
        let residual = (sq(&diff) - sq(&sdiff)).abs();
        report.same_parent_max_residual = report.same_parent_max_residual.max(residual);

        // Different-parent pair.
        let d = rng.random_range(0..n);
        let i = loop {
            let c = rng.random_range(0..n);
            if c / d_last != d / d_last {
                break c;
            }
        };
        let (pd, pi) = (leaf_value(d), leaf_value(i));
        let lhs = sq(&pd
            .iter()
            .zip(&pi)
            .map(|(x, y)| x - y)
            .collect::<Vec<f64>>());
        let mut rhs = 0.0;
        let mut differing = 0usize;
        for l in 1..=depth {
            if anc(d, l) != anc(i, l) {
                differing += 1;
                let term: Vec<f64> = s_at(d, l)
                    .iter()
                    .zip(s_at(i, l))
                    .map(|(x, y)| x - y)
                    .collect();
                rhs += sq(&term);
            }
        }
        let tol = 1e-9 * (1.0 + lhs.abs());
        if lhs > differing as f64 * rhs + tol {
            report.factored_violations += 1;
        }
        if lhs > rhs + tol {
            report.unfactored_violations += 1;
        }
    }
    report.unfactored_violation_rate = report.unfactored_violations as f64 / draws.max(1) as f64;
    Ok(report)
}

/// Over `latents` sampled codes: the fraction for which the mean pairwise
/// distance inside final sibling blocks is strictly below the mean distance
/// between depth-0 pairs (leaves sharing only the root).
pub fn sibling_cohesion<T: Scalar>(
    generator: &Generator<T>,
    latents: usize,
    seed: u64,
) -> Result<f64> {
    let degrees = &generator.config.degrees;
    let sizes = layer_sizes(degrees);
    let n = *sizes.last().unwrap();
    let d_last = *degrees.last().unwrap();
    if d_last < 2 {
        return Err(Error::config("cohesion needs a final degree of at least 2"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut satisfied = 0usize;
    for _ in 0..latents {
        let z = Tensor::new(
            vec![generator.config.latent_dim()],
            (0..generator.config.latent_dim())
                .map(|_| T::sample_normal(&mut rng))
                .collect(),
        )?;
        let (cloud, _) = generator.generate(&z)?;
        let dist = |a: usize, b: usize| -> f64 {
            let (ra, rb) = (cloud.row(a), cloud.row(b));
            (0..3)
                .map(|c| (ra[c].as_f64() - rb[c].as_f64()).powi(2))
                .sum::<f64>()
                .sqrt()
        };

        let mut within = 0.0;
        let mut within_count = 0usize;
        for block in 0..n / d_last {
            for s in 0..d_last {
                for t in s + 1..d_last {
                    within += dist(block * d_last + s, block * d_last + t);
                    within_count += 1;
                }
            }
        }
        within /= within_count as f64;

        let mut across = 0.0;
        let mut across_count = 0usize;
        let mut attempts = 0usize;
        while across_count < 512 && attempts < 100_000 {
            attempts += 1;
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a != b && shared_ancestor_depth(degrees, a, b)? == 0 {
                across += dist(a, b);
                across_count += 1;
            }
        }
        if across_count == 0 {
            return Err(Error::config(
                "no depth-0 pairs exist for this degree schedule",
            ));
        }
        across /= across_count as f64;

        if within < across {
            satisfied += 1;
        }
    }
    Ok(satisfied as f64 / latents.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::treegcn::GeneratorConfig;

    #[test]
    fn paper_schedule_layer1_blocks() {
        // Degrees {1,2,2,2,2,2,64}: layer-1 has one node covering everything;
        // the first real split is layer 2, halves of 1024.
        let degrees = vec![1, 2, 2, 2, 2, 2, 64];
        assert_eq!(leaves_of_ancestor(&degrees, 2, 0).unwrap(), 0..1024);
        assert_eq!(leaves_of_ancestor(&degrees, 2, 1).unwrap(), 1024..2048);
        assert_eq!(leaves_of_ancestor(&degrees, 0, 0).unwrap(), 0..2048);
        // A leaf at the final layer is a singleton.
        assert_eq!(leaves_of_ancestor(&degrees, 7, 99).unwrap(), 99..100);
        assert!(leaves_of_ancestor(&degrees, 1, 1).is_err());
    }

    #[test]
    fn depth_of_siblings_and_strangers() {
        let degrees = vec![1, 2, 2, 2, 2, 2, 64];
        // Same final block: depth L-1.
        assert_eq!(shared_ancestor_depth(&degrees, 0, 1).unwrap(), 6);
        // Identical: depth L.
        assert_eq!(shared_ancestor_depth(&degrees, 5, 5).unwrap(), 7);
        // Opposite halves of the first split share only the root.
        assert_eq!(shared_ancestor_depth(&degrees, 0, 2047).unwrap(), 0);

        // Leaves 0 and 2 of {1,2,2} diverge at the first informative split.
        assert_eq!(shared_ancestor_depth(&[1, 2, 2], 0, 2).unwrap(), 0);
        assert_eq!(shared_ancestor_depth(&[1, 2, 2], 0, 1).unwrap(), 2);
        assert!(shared_ancestor_depth(&[1, 2, 2], 0, 9).is_err());
    }

    #[test]
    fn part_indices_do_not_depend_on_latents() {
        let config = GeneratorConfig {
            degrees: vec![1, 2, 4],
            feature_dims: vec![4, 6, 5, 3],
            supports: 3,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
        };
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let generator = Generator::<f64>::init(config, &mut rng).unwrap();
        let selection = PartSelection::parse("1:0").unwrap();
        let mut index_sets = Vec::new();
        for seed in [10u64, 20] {
            let mut zr = ChaCha20Rng::seed_from_u64(seed);
            let z = Tensor::new(vec![4], (0..4).map(|_| f64::sample_normal(&mut zr)).collect())
                .unwrap();
            let (cloud, tree) = generator.generate(&z).unwrap();
            let part = extract_part(&cloud, &tree, &selection).unwrap();
            // The block is [0,4) for layer 1 node 0 regardless of z.
            index_sets.push(part.len());
            for r in 0..part.len() {
                for c in 0..3 {
                    assert_eq!(part.points.at(r, c), cloud.at(r, c));
                }
            }
        }
        assert_eq!(index_sets[0], index_sets[1]);
    }

    #[test]
    fn two_disjoint_selections_stay_disjoint() {
        let degrees = vec![2, 3];
        let a = leaves_of_ancestor(&degrees, 1, 0).unwrap();
        let b = leaves_of_ancestor(&degrees, 1, 1).unwrap();
        assert!(a.end <= b.start || b.end <= a.start);
        assert!(a.len() + b.len() <= 6);
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let config = GeneratorConfig {
            degrees: vec![1, 2, 3],
            feature_dims: vec![4, 6, 5, 3],
            supports: 4,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
        };
        use rand::SeedableRng;
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let generator = Generator::<f64>::init(config, &mut rng).unwrap();
        let z1 = Tensor::new(vec![4], vec![0.5, -0.25, 1.0, 0.0]).unwrap();
        let z2 = Tensor::new(vec![4], vec![-1.0, 0.75, 0.25, 2.0]).unwrap();
        let alphas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let clouds = interpolate(&generator, &z1, &z2, &alphas).unwrap();
        assert_eq!(clouds.len(), 6);
        let (c1, _) = generator.generate(&z1).unwrap();
        let (c2, _) = generator.generate(&z2).unwrap();
        assert_eq!(clouds[0], c1);
        assert_eq!(clouds[5], c2);

        let same = interpolate(&generator, &z1, &z1, &alphas).unwrap();
        for c in &same {
            assert_eq!(*c, same[0]);
        }
        assert!(interpolate(&generator, &z1, &z2, &[1.5]).is_err());
    }

    #[test]
    fn oracle_same_parent_identity_is_exact() {
        let report = prop1_oracle(&[1, 2, 2, 2], 3, 500, 3).unwrap();
        assert!(
            report.same_parent_max_residual < 1e-9,
            "residual {}",
            report.same_parent_max_residual
        );
    }

    #[test]
    fn oracle_factored_bound_always_holds() {
        for degrees in [vec![1, 2, 2, 2], vec![2, 3, 2], vec![1, 4, 4]] {
            let report = prop1_oracle(&degrees, 3, 1000, 7).unwrap();
            assert_eq!(report.factored_violations, 0, "degrees {degrees:?}");
            // The raw bound is genuinely violated sometimes; the rate is
            // recorded rather than asserted to be zero.
            assert!(report.unfactored_violation_rate <= 1.0);
        }
    }

    #[test]
    fn oracle_identical_leaf_is_degenerate_zero() {
        // a == b means both sides vanish; covered via the residual bound on
        // every same-parent draw, so just exercise the tiny schedule.
        let report = prop1_oracle(&[2, 2], 2, 100, 11).unwrap();
        assert!(report.same_parent_max_residual < 1e-9);
    }

    #[test]
    fn selection_parser_accepts_and_rejects() {
        let s = PartSelection::parse("2:1,3,5").unwrap();
        assert_eq!(s.layer, 2);
        assert_eq!(s.indices, vec![1, 3, 5]);
        assert!(PartSelection::parse("nope").is_err());
        assert!(PartSelection::parse("2:").is_err());
    }
}
