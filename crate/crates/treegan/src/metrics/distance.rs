//! Point-set distances: squared-distance Chamfer and an entropic-transport
//! approximation of the Earth Mover's distance. Chamfer uses squared
//! distances and EMD unsquared ones, both normalized per point.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_cloud<T: Scalar>(x: &Tensor<T>, what: &'static str) -> Result<()> {
    if x.shape().len() != 2 || x.shape()[1] != 3 || x.rows() == 0 {
        return Err(Error::contract(format!(
            "{what} wants non-empty n×3 clouds, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0;
    for c in 0..3 {
        let d = a[c].as_f64() - b[c].as_f64();
        acc += d * d;
    }
    acc
}

/// Chamfer distance:
/// (1/|X|)·Σ_x min_y ‖x−y‖² + (1/|Y|)·Σ_y min_x ‖x−y‖².
pub fn chamfer<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check_cloud(x, "chamfer")?;
    check_cloud(y, "chamfer")?;
    let one_way = |a: &Tensor<T>, b: &Tensor<T>| -> f64 {
        let mut total = 0.0;
        for i in 0..a.rows() {
            let ra = a.row(i);
            let mut best = f64::INFINITY;
            for j in 0..b.rows() {
                let d = sq_dist(ra, b.row(j));
                if d < best {
                    best = d;
                }
            }
            total += best;
        }
        total / a.rows() as f64
    };
    Ok(one_way(x, y) + one_way(y, x))
}

/// Defaults for the Sinkhorn approximation: regularization annealed
/// geometrically from 0.1 down to 0.005 over the iteration budget.
pub const SINKHORN_ITERATIONS: usize = 200;
pub const SINKHORN_EPS_START: f64 = 0.1;
pub const SINKHORN_EPS_END: f64 = 0.005;

/// Entropic-regularized transport cost between equal-size clouds with
/// uniform weights, annealing the regularization over `iterations` rounds
/// in the log domain. Reports the per-point mean matching cost (unsquared
/// Euclidean ground distance); an upper-bound approximation of the exact
/// assignment cost.
pub fn emd_approx<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, iterations: usize) -> Result<f64> {
    check_cloud(x, "emd_approx")?;
    check_cloud(y, "emd_approx")?;
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "emd_approx",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let iterations = iterations.max(1);

    let mut cost = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(x.row(i), y.row(j)).sqrt();
        }
    }

    // Uniform marginals 1/n; log-domain potentials with warm restarts as the
    // regularization anneals.
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut eps = SINKHORN_EPS_START;
    for t in 0..iterations {
        if iterations > 1 {
            let frac = t as f64 / (iterations - 1) as f64;
            eps = SINKHORN_EPS_START * (SINKHORN_EPS_END / SINKHORN_EPS_START).powf(frac);
        }
        // g-update, then f-update so the row marginals are exact afterwards.
        for j in 0..n {
            let mut m = f64::NEG_INFINITY;
            for i in 0..n {
                m = m.max(log_w + (f[i] - cost[i * n + j]) / eps);
            }
            let mut s = 0.0;
            for i in 0..n {
                s += (log_w + (f[i] - cost[i * n + j]) / eps - m).exp();
            }
            g[j] = -eps * (m + s.ln());
        }
        for i in 0..n {
            let mut m = f64::NEG_INFINITY;
            for j in 0..n {
                m = m.max(log_w + (g[j] - cost[i * n + j]) / eps);
            }
            let mut s = 0.0;
            for j in 0..n {
                s += (log_w + (g[j] - cost[i * n + j]) / eps - m).exp();
            }
            f[i] = -eps * (m + s.ln());
        }
    }

    // Transport cost Σ P∘C with P from the final potentials. Rows sum to
    // 1/n exactly after the closing f-update.
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let logp = (f[i] + g[j] - cost[i * n + j]) / eps + 2.0 * log_w;
            total += logp.exp() * cost[i * n + j];
        }
    }
    Ok(total) // unit total mass: this is already the per-point mean
}


#[cfg(test)]
mod tests {
    use super::oracles::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn random_cloud(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| f64::sample_normal(&mut rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn chamfer_identity() {
        let x = random_cloud(20, 1);
        assert_eq!(chamfer(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_singleton_hand_value() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let y = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&x, &y).unwrap(), 2.0);
    }

    #[test]
    fn chamfer_matches_brute_force_on_random_pair() {
        let x = random_cloud(64, 2);
        let y = random_cloud(64, 3);
        let fast = chamfer(&x, &y).unwrap();
        let brute = chamfer_brute(&x, &y);
        assert!((fast - brute).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric() {
        let x = random_cloud(15, 4);
        let y = random_cloud(9, 5);
        assert_eq!(chamfer(&x, &y).unwrap(), chamfer(&y, &x).unwrap());
    }

    #[test]
    fn chamfer_rejects_empty() {
        let x = Tensor::<f64>::zeros(vec![0, 3]);
        let y = random_cloud(3, 6);
        assert!(chamfer(&x, &y).is_err());
    }

    #[test]
    fn emd_identity_is_tiny() {
        // Separated points: the entropic blur leaves negligible mass off the
        // diagonal once the regularization has annealed down.
        let x = Tensor::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ]);
        let d = emd_approx(&x, &x, SINKHORN_ITERATIONS).unwrap();
        assert!(d <= 1e-6, "self distance {d}");
    }

    #[test]
    fn emd_singletons_exact() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]);
        let y = Tensor::from_rows(&[vec![3.0, 4.0, 0.0]]);
        let d = emd_approx(&x, &y, SINKHORN_ITERATIONS).unwrap();
        assert!((d - 5.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn emd_within_two_percent_of_exact_assignment() {
        for seed in 0..6 {
            let x = random_cloud(8, 100 + seed);
            let y = random_cloud(8, 200 + seed);
            let approx = emd_approx(&x, &y, SINKHORN_ITERATIONS).unwrap();
            let exact = assignment_exact(&x, &y);
            let rel = (approx - exact).abs() / exact;
            assert!(rel < 0.02, "seed {seed}: approx {approx} exact {exact}");
        }
    }

    #[test]
    fn emd_rejects_unequal_sizes() {
        let x = random_cloud(4, 7);
        let y = random_cloud(5, 8);
        assert!(emd_approx(&x, &y, 10).is_err());
    }
}
