//! Finite-difference verification of analytic gradients.
//!
//! The oracle here is the central difference (f(x+e) - f(x-e)) / 2e itself;
//! it never touches the backward pass it checks. Run at f64.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::graph::{Graph, Value};
use crate::nn::{Binding, ParamId, ParamSet};
use crate::scalar::Scalar;

/// Coordinates above this count are randomly subsampled.
pub const SUBSAMPLE_LIMIT: usize = 10_000;

/// Compare analytic gradients of a scalar-valued network fragment against
/// central finite differences over every parameter coordinate (or a random
/// subsample when the parameter count exceeds [`SUBSAMPLE_LIMIT`]).
///
/// `build` constructs the scalar loss on a fresh graph from the bound
/// parameter values; it is re-invoked for every probe. Works on an internal
/// copy of `params`, so the caller's network is untouched. Returns the
/// maximum relative error observed.
pub fn grad_check<T: Scalar>(
    params: &ParamSet<T>,
    eps: f64,
    rng: &mut impl Rng,
    mut build: impl FnMut(&Graph<T>, &Binding) -> Value,
) -> f64 {
    let mut probe = params.clone();

    // Analytic pass.
    let graph = Graph::new();
    let binding = probe.bind(&graph, true);
    let loss = build(&graph, &binding);
    let grads = graph
        .backward(loss, binding.values())
        .expect("grad_check loss must be scalar");
    let analytic: Vec<Vec<T>> = grads
        .iter()
        .enumerate()
        .map(|(i, g)| match g {
            Some(v) => graph.value(*v).into_data(),
            None => vec![T::zero(); probe.get(ParamId(i)).value.numel()],
        })
        .collect();

    // Coordinate list, subsampled if large.
    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, p) in probe.iter().enumerate() {
        for ci in 0..p.value.numel() {
            coords.push((pi, ci));
        }
    }
    if coords.len() > SUBSAMPLE_LIMIT {
        coords.shuffle(rng);
        coords.truncate(SUBSAMPLE_LIMIT);
    }

    let eval = |probe: &ParamSet<T>, build: &mut dyn FnMut(&Graph<T>, &Binding) -> Value| -> f64 {
        let g = Graph::new();
        let b = probe.bind(&g, false);
        let loss = build(&g, &b);
        g.value(loss).item().as_f64()
    };

    let h = T::of_f64(eps);
    let mut max_rel = 0.0f64;
    for (pi, ci) in coords {
        let orig = probe.get(ParamId(pi)).value.data()[ci];

        probe.get_mut(ParamId(pi)).value.data_mut()[ci] = orig + h;
        let plus = eval(&probe, &mut build);
        probe.get_mut(ParamId(pi)).value.data_mut()[ci] = orig - h;
        let minus = eval(&probe, &mut build);
        probe.get_mut(ParamId(pi)).value.data_mut()[ci] = orig;

        let fd = (plus - minus) / (2.0 * eps);
        let an = analytic[pi][ci].as_f64();
        // The 1e-3 floor keeps central-difference rounding noise (~1e-11 for
        // unit-scale losses) from registering as relative error when the true
        // gradient is zero.
        let denom = an.abs().max(fd.abs()).max(1e-3);
        let rel = (an - fd).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    max_rel
}
