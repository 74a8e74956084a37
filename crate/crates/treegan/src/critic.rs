//! The Wasserstein critic: a per-point shared stack, symmetric max pooling
//! over points, and a dense head ending in one unbounded score.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::{Binding, Linear, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CriticConfig {
    /// Widths of the shared per-point stack; first must be 3.
    pub point_widths: Vec<usize>,
    /// Widths of the dense head after pooling; last must be 1.
    pub head_widths: Vec<usize>,
    pub slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            point_widths: vec![3, 64, 128, 256, 512],
            head_widths: vec![512, 128, 64, 1],
            slope: 0.2,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.point_widths.first() != Some(&3) {
            return Err(Error::config("critic per-point stack must start at width 3"));
        }
        if self.head_widths.last() != Some(&1) {
            return Err(Error::config("critic head must end at width 1"));
        }
        if self.point_widths.len() < 2 || self.head_widths.len() < 2 {
            return Err(Error::config("critic needs at least one layer per stage"));
        }
        if self.point_widths.last() != self.head_widths.first() {
            return Err(Error::config(
                "pooled width must match the head input width",
            ));
        }
        Ok(())
    }
}

pub struct Critic<T> {
    pub config: CriticConfig,
    pub params: ParamSet<T>,
    point_layers: Vec<Linear>,
    head_layers: Vec<Linear>,
}

impl<T: Scalar> Critic<T> {
    pub fn init(config: CriticConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let point_layers = config
            .point_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(&mut params, &format!("critic.point{i}"), w[0], w[1], rng))
            .collect();
        let head_layers = config
            .head_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(&mut params, &format!("critic.head{i}"), w[0], w[1], rng))
            .collect();
        Ok(Critic {
            config,
            params,
            point_layers,
            head_layers,
        })
    }

    /// Scores for a batch of clouds packed as [(B·n) × 3]. Output is [B, 1].
    /// The max-pool over each cloud's `n` rows makes the score invariant to
    /// point order and to duplicated points.
    pub fn forward(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        points: Value,
        points_per_cloud: usize,
    ) -> Result<Value> {
        let shape = g.shape_of(points);
        if shape.len() != 2 || shape[1] != 3 || shape[0] % points_per_cloud != 0 {
            return Err(Error::contract(format!(
                "critic input {shape:?} is not (B·{points_per_cloud})×3"
            )));
        }
        let slope = T::of_f64(self.config.slope);
        let mut h = points;
        for lin in &self.point_layers {
            h = lin.forward(g, binding, h)?;
            h = g.leaky_relu(h, slope);
        }
        let mut pooled = g.block_max_rows(h, points_per_cloud);
        let last = self.head_layers.len() - 1;
        for (i, lin) in self.head_layers.iter().enumerate() {
            pooled = lin.forward(g, binding, pooled)?;
            if i != last {
                pooled = g.leaky_relu(pooled, slope);
            }
        }
        Ok(pooled)
    }

    /// Convenience scoring of one cloud with no gradient recording.
    pub fn score(&self, cloud: &Tensor<T>) -> Result<T> {
        let n = cloud.rows();
        if n == 0 {
            return Err(Error::contract("cannot score an empty cloud"));
        }
        let g = Graph::new();
        let binding = self.params.bind(&g, false);
        let input = g.leaf(cloud.clone(), false);
        let s = self.forward(&g, &binding, input, n)?;
        Ok(g.value(s).item())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn small_critic(rng: &mut ChaCha20Rng) -> Critic<f64> {
        Critic::init(
            CriticConfig {
                point_widths: vec![3, 8, 12],
                head_widths: vec![12, 6, 1],
                slope: 0.2,
            },
            rng,
        )
        .unwrap()
    }

    fn random_cloud(n: usize, rng: &mut ChaCha20Rng) -> Tensor<f64> {
        Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| f64::sample_normal(rng)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn permutation_invariance_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let critic = small_critic(&mut rng);
        let cloud = random_cloud(17, &mut rng);
        let base = critic.score(&cloud).unwrap();
        for _ in 0..100 {
            let mut order: Vec<usize> = (0..17).collect();
            order.shuffle(&mut rng);
            let rows: Vec<Vec<f64>> = order.iter().map(|&i| cloud.row(i).to_vec()).collect();
            let shuffled = Tensor::from_rows(&rows);
            assert_eq!(critic.score(&shuffled).unwrap(), base);
        }
    }

    #[test]
    fn duplicate_points_leave_score_unchanged() {
        let mut rng = ChaCha20Rng::seed_from_u64(22);
        let critic = small_critic(&mut rng);
        let cloud = random_cloud(9, &mut rng);
        let base = critic.score(&cloud).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..9).map(|i| cloud.row(i).to_vec()).collect();
        rows.push(cloud.row(3).to_vec());
        rows.push(cloud.row(0).to_vec());
        rows.push(cloud.row(3).to_vec());
        let doubled = Tensor::from_rows(&rows);
        assert_eq!(critic.score(&doubled).unwrap(), base);
    }

    #[test]
    fn zero_weights_score_is_final_bias() {
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let mut critic = small_critic(&mut rng);
        for p in critic.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let final_bias_name = "critic.head1.bias";
        for p in critic.params.iter_mut() {
            if p.name == final_bias_name {
                p.value = Tensor::new(vec![1], vec![0.37]).unwrap();
            }
        }
        let cloud = random_cloud(9, &mut rng);
        assert_eq!(critic.score(&cloud).unwrap(), 0.37);
    }

    #[test]
    fn batched_scores_match_single_scores() {
        let mut rng = ChaCha20Rng::seed_from_u64(24);
        let critic = small_critic(&mut rng);
        let a = random_cloud(6, &mut rng);
        let b = random_cloud(6, &mut rng);
        let mut data = a.data().to_vec();
        data.extend_from_slice(b.data());
        let packed = Tensor::new(vec![12, 3], data).unwrap();

        let g = Graph::new();
        let binding = critic.params.bind(&g, false);
        let input = g.leaf(packed, false);
        let scores = g.value(critic.forward(&g, &binding, input, 6).unwrap());
        assert_eq!(scores.shape(), &[2, 1]);
        assert_eq!(scores.data()[0], critic.score(&a).unwrap());
        assert_eq!(scores.data()[1], critic.score(&b).unwrap());
    }

    #[test]
    fn empty_cloud_is_error() {
        let mut rng = ChaCha20Rng::seed_from_u64(25);
        let critic = small_critic(&mut rng);
        let empty = Tensor::zeros(vec![0, 3]);
        assert!(critic.score(&empty).is_err());
    }

    #[test]
    fn score_gradient_wrt_input_matches_finite_differences() {
        // Needed by the gradient penalty: d score / d coordinates.
        let mut rng = ChaCha20Rng::seed_from_u64(26);
        let critic = small_critic(&mut rng);
        let cloud = random_cloud(7, &mut rng);

        let g = Graph::new();
        let binding = critic.params.bind(&g, false);
        let input = g.leaf(cloud.clone(), true);
        let s = critic.forward(&g, &binding, input, 7).unwrap();
        let s_scalar = g.sum_all(s);
        let grads = g.backward(s_scalar, &[input]).unwrap();
        let analytic = g.value(grads[0].unwrap());

        let eps = 1e-6;
        let mut max_rel: f64 = 0.0;
        for i in 0..cloud.numel() {
            let mut plus = cloud.clone();
            plus.data_mut()[i] += eps;
            let mut minus = cloud.clone();
            minus.data_mut()[i] -= eps;
            let fd =
                (critic.score(&plus).unwrap() - critic.score(&minus).unwrap()) / (2.0 * eps);
            let an = analytic.data()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max rel err {max_rel}");
    }
}
