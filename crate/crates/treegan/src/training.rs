//! WGAN-GP optimization: generator and critic losses, the gradient penalty,
//! the alternating update schedule, checkpointing, and telemetry.
//!
//! The penalty term is built on the same graph as the critic forward pass:
//! the input gradient comes out of a recorded backward pass, so the final
//! backward through the penalty reaches the critic weights along the
//! second-order path.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint;
use crate::critic::{Critic, CriticConfig};
use crate::data::{Batcher, Dataset, TailPolicy};
use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::Binding;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::treegcn::{Generator, GeneratorConfig};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
    pub batch_size: usize,
    pub total_gen_steps: u64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Emit an FPD telemetry value every this many generator steps (0: never).
    pub eval_every: u64,
    pub tail: TailPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gp: 10.0,
            critic_steps: 5,
            batch_size: 16,
            total_gen_steps: 2000,
            seed: 0,
            adam: AdamConfig::default(),
            eval_every: 0,
            tail: TailPolicy::Drop,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_gp < 0.0 {
            return Err(Error::config("gradient penalty weight must be ≥ 0"));
        }
        if self.critic_steps == 0 {
            return Err(Error::config("critic steps per generator step must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        Ok(())
    }
}

/// One telemetry line per generator step. The critic columns carry the last
/// critic update of that iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TelemetryRecord {
    pub step: u64,
    pub l_gen: f64,
    pub l_disc: f64,
    pub penalty: f64,
    pub wall_time_s: f64,
    pub fpd: Option<f64>,
}

pub const TELEMETRY_HEADER: &str = "step,l_gen,l_disc,penalty,wall_time_s,fpd";

impl TelemetryRecord {
    pub fn csv_line(&self) -> String {
        let fpd = self.fpd.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step, self.l_gen, self.l_disc, self.penalty, self.wall_time_s, fpd
        )
    }
}

/// Pack per-cloud n×3 matrices into one [(B·n) × 3] tensor, batch order
/// preserved.
pub fn pack_clouds<T: Scalar>(clouds: &[Tensor<T>]) -> Result<Tensor<T>> {
    if clouds.is_empty() {
        return Err(Error::contract("cannot pack an empty batch"));
    }
    let n = clouds[0].rows();
    let mut data = Vec::with_capacity(clouds.len() * n * 3);
    for c in clouds {
        if c.shape() != [n, 3] {
            return Err(Error::ShapeMismatch {
                op: "pack_clouds",
                lhs: vec![n, 3],
                rhs: c.shape().to_vec(),
            });
        }
        data.extend_from_slice(c.data());
    }
    Tensor::new(vec![clouds.len() * n, 3], data)
}

/// Mean critic score over a [B,1] score column.
fn mean_scores<T: Scalar>(g: &Graph<T>, scores: Value) -> Value {
    let b = g.shape_of(scores)[0];
    let s = g.sum_all(scores);
    g.scale(s, T::one() / T::from_usize(b).unwrap())
}

/// Generator loss on an existing graph: −E[D(G(z))].
pub fn generator_loss_graph<T: Scalar>(
    g: &Graph<T>,
    generator: &Generator<T>,
    gen_bind: &Binding,
    critic: &Critic<T>,
    critic_bind: &Binding,
    z: Value,
    batch: usize,
) -> Result<Value> {
    let tree = generator.forward(g, gen_bind, z, batch)?;
    let clouds = *tree.last().unwrap();
    let scores = critic.forward(g, critic_bind, clouds, generator.config.point_count())?;
    let mean = mean_scores(g, scores);
    Ok(g.neg(mean))
}

/// Evaluation-only generator loss for a batch of latents [B × latent_dim].
pub fn generator_loss<T: Scalar>(
    generator: &Generator<T>,
    critic: &Critic<T>,
    latents: &Tensor<T>,
) -> Result<f64> {
    let g = Graph::new();
    let gen_bind = generator.params.bind(&g, false);
    let critic_bind = critic.params.bind(&g, false);
    let z = g.leaf(latents.clone(), false);
    let loss = generator_loss_graph(
        &g,
        generator,
        &gen_bind,
        critic,
        &critic_bind,
        z,
        latents.rows(),
    )?;
    Ok(g.value(loss).item().as_f64())
}

/// Penalty term λ·E[(‖∇_x̂ D(x̂)‖₂ − 1)²] on an existing graph, for any
/// scorer mapping the packed interpolants to a [B,1] column. `xhat` must be
/// a leaf with gradients enabled; the norm runs over all n×3 coordinates of
/// each cloud. A scorer that ignores its input has gradient norm 0 and pays
/// the full unit deviation.
pub fn gradient_penalty_graph<T: Scalar>(
    g: &Graph<T>,
    score: impl FnOnce(&Graph<T>, Value) -> Result<Value>,
    xhat: Value,
    points_per_cloud: usize,
    lambda: f64,
) -> Result<Value> {
    let shape = g.shape_of(xhat);
    let batch = shape[0] / points_per_cloud;
    let scores = score(g, xhat)?;
    // Each score depends only on its own cloud's rows, so one backward pass
    // of the summed scores yields every per-cloud input gradient at once.
    let total = g.sum_all(scores);
    let grad = g
        .backward(total, &[xhat])?
        .pop()
        .flatten()
        .unwrap_or_else(|| g.constant(Tensor::zeros(shape)));
    let sq = g.mul(grad, grad);
    let per_cloud = g.block_sum_all(sq, points_per_cloud);
    let norm = g.sqrt(per_cloud);
    let dev = g.add_const(norm, -T::one());
    let dev2 = g.mul(dev, dev);
    let mean = g.scale(g.sum_all(dev2), T::one() / T::from_usize(batch).unwrap());
    Ok(g.scale(mean, T::of_f64(lambda)))
}

/// Linear interpolants x̂ = u·real + (1−u)·fake with one u per cloud.
pub fn interpolate_clouds<T: Scalar>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    points_per_cloud: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::ShapeMismatch {
            op: "interpolate_clouds",
            lhs: real.shape().to_vec(),
            rhs: fake.shape().to_vec(),
        });
    }
    let rows = real.rows();
    let batch = rows / points_per_cloud;
    let mut data = Vec::with_capacity(rows * 3);
    for b in 0..batch {
        let u = T::sample_uniform(rng, T::zero(), T::one());
        for i in b * points_per_cloud..(b + 1) * points_per_cloud {
            for c in 0..3 {
                data.push(u * real.at(i, c) + (T::one() - u) * fake.at(i, c));
            }
        }
    }
    Tensor::new(vec![rows, 3], data)
}

/// Evaluation-only gradient penalty for equal-shaped batches of clouds.
pub fn gradient_penalty<T: Scalar>(
    critic: &Critic<T>,
    real: &[Tensor<T>],
    fake: &[Tensor<T>],
    lambda: f64,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            lhs: vec![real.len()],
            rhs: vec![fake.len()],
        });
    }
    let n = real[0].rows();
    let packed_real = pack_clouds(real)?;
    let packed_fake = pack_clouds(fake)?;
    let xhat = interpolate_clouds(&packed_real, &packed_fake, n, rng)?;
    let g = Graph::new();
    let critic_bind = critic.params.bind(&g, true);
    let xhat_leaf = g.leaf(xhat, true);
    let p = gradient_penalty_graph(
        &g,
        |g, x| critic.forward(g, &critic_bind, x, n),
        xhat_leaf,
        n,
        lambda,
    )?;
    Ok(g.value(p).item().as_f64())
}

/// Critic loss on an existing graph: E[D(fake)] − E[D(real)] + penalty.
#[allow(clippy::too_many_arguments)]
pub fn critic_loss_graph<T: Scalar>(
    g: &Graph<T>,
    critic: &Critic<T>,
    critic_bind: &Binding,
    real: Value,
    fake: Value,
    xhat: Value,
    points_per_cloud: usize,
    lambda: f64,
) -> Result<(Value, Value)> {
    let real_scores = critic.forward(g, critic_bind, real, points_per_cloud)?;
    let fake_scores = critic.forward(g, critic_bind, fake, points_per_cloud)?;
    let mean_real = mean_scores(g, real_scores);
    let mean_fake = mean_scores(g, fake_scores);
    let wasserstein = g.sub(mean_fake, mean_real);
    if lambda == 0.0 {
        return Ok((wasserstein, g.constant(Tensor::scalar(T::zero()))));
    }
    let penalty = gradient_penalty_graph(
        g,
        |g, x| critic.forward(g, critic_bind, x, points_per_cloud),
        xhat,
        points_per_cloud,
        lambda,
    )?;
    Ok((g.add(wasserstein, penalty), penalty))
}

/// Evaluation-only critic loss: fake clouds come from G on the given
/// latents, detached.
pub fn critic_loss<T: Scalar>(
    critic: &Critic<T>,
    generator: &Generator<T>,
    real: &[Tensor<T>],
    latents: &Tensor<T>,
    lambda: f64,
    rng: &mut ChaCha20Rng,
) -> Result<f64> {
    let fake = generator.generate_batch(latents)?;
    let n = real[0].rows();
    let packed_real = pack_clouds(real)?;
    let packed_fake = pack_clouds(&fake)?;
    let xhat = interpolate_clouds(&packed_real, &packed_fake, n, rng)?;
    let g = Graph::new();
    let critic_bind = critic.params.bind(&g, true);
    let real_leaf = g.leaf(packed_real, false);
    let fake_leaf = g.leaf(packed_fake, false);
    let xhat_leaf = g.leaf(xhat, true);
    let (loss, _) = critic_loss_graph(
        &g,
        critic,
        &critic_bind,
        real_leaf,
        fake_leaf,
        xhat_leaf,
        n,
        lambda,
    )?;
    Ok(g.value(loss).item().as_f64())
}

/// Serialized RNG position, enough to restore a ChaCha20 stream exactly.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
struct RngSnapshot {
    seed: [u8; 32],
    word_pos: String,
    stream: u64,
}

impl RngSnapshot {
    fn capture(rng: &ChaCha20Rng) -> Self {
        RngSnapshot {
            seed: rng.get_seed(),
            word_pos: rng.get_word_pos().to_string(),
            stream: rng.get_stream(),
        }
    }

    fn restore(&self) -> Result<ChaCha20Rng> {
        let mut rng = ChaCha20Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::format("corrupt RNG position in checkpoint".to_string()))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    train: TrainConfig,
    generator: GeneratorConfig,
    critic: CriticConfig,
    gen_steps_done: u64,
    adam_gen_step: u64,
    adam_critic_step: u64,
    rng: RngSnapshot,
    batcher_epoch: u64,
    batcher_pos: usize,
    dataset_len: usize,
}

/// The full training state: networks, optimizer accumulators, schedule
/// position, and RNG stream.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub generator: Generator<T>,
    pub critic: Critic<T>,
    pub adam_gen: AdamState<T>,
    pub adam_critic: AdamState<T>,
    pub gen_steps_done: u64,
    rng: ChaCha20Rng,
    batcher: Option<Batcher>,
    batcher_state: (u64, usize),
    dataset_len: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        gen_config: GeneratorConfig,
        critic_config: CriticConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let generator = Generator::init(gen_config, &mut rng)?;
        let critic = Critic::init(critic_config, &mut rng)?;
        let adam_gen = AdamState::new(config.adam, &generator.params);
        let adam_critic = AdamState::new(config.adam, &critic.params);
        Ok(Trainer {
            config,
            generator,
            critic,
            adam_gen,
            adam_critic,
            gen_steps_done: 0,
            rng,
            batcher: None,
            batcher_state: (0, 0),
            dataset_len: 0,
        })
    }

    fn draw_latents(&mut self, batch: usize) -> Tensor<T> {
        let d = self.generator.config.latent_dim();
        let data = (0..batch * d)
            .map(|_| T::sample_normal(&mut self.rng))
            .collect();
        Tensor::new(vec![batch, d], data).unwrap()
    }

    fn ensure_batcher(&mut self, dataset: &Dataset<T>) -> Result<()> {
        if self.dataset_len != 0 && self.dataset_len != dataset.len() {
            return Err(Error::contract(format!(
                "checkpoint was trained on {} clouds, dataset has {}",
                self.dataset_len,
                dataset.len()
            )));
        }
        if self.batcher.is_none() {
            let mut b = Batcher::new(
                dataset.len(),
                self.config.batch_size,
                self.config.seed,
                self.config.tail,
            )?;
            b.restore(self.batcher_state.0, self.batcher_state.1);
            self.batcher = Some(b);
            self.dataset_len = dataset.len();
        }
        Ok(())
    }

    fn real_batch(&mut self, dataset: &Dataset<T>) -> Tensor<T> {
        let idx = self.batcher.as_mut().unwrap().next_batch();
        let clouds: Vec<Tensor<T>> = idx
            .into_iter()
            .map(|i| dataset.clouds[i].points.clone())
            .collect();
        pack_clouds(&clouds).unwrap()
    }

    fn critic_update(&mut self, dataset: &Dataset<T>) -> Result<(f64, f64)> {
        let n = dataset.points_per_cloud();
        let batch = self.config.batch_size;
        let real = self.real_batch(dataset);
        let latents = self.draw_latents(batch);
        let fake = pack_clouds(&self.generator.generate_batch(&latents)?)?;
        let xhat = interpolate_clouds(&real, &fake, n, &mut self.rng)?;

        let g = Graph::new();
        let critic_bind = self.critic.params.bind(&g, true);
        let real_leaf = g.leaf(real, false);
        let fake_leaf = g.leaf(fake, false);
        let xhat_leaf = g.leaf(xhat, true);
        let (loss, penalty) = critic_loss_graph(
            &g,
            &self.critic,
            &critic_bind,
            real_leaf,
            fake_leaf,
            xhat_leaf,
            n,
            self.config.lambda_gp,
        )?;
        let loss_v = g.value(loss).item().as_f64();
        let penalty_v = g.value(penalty).item().as_f64();
        if !loss_v.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        self.critic.params.reset_grads();
        self.critic.params.accumulate_grads(&g, &critic_bind, loss)?;
        self.adam_critic.step(&mut self.critic.params);
        Ok((loss_v, penalty_v))
    }

    fn generator_update(&mut self) -> Result<f64> {
        let batch = self.config.batch_size;
        let latents = self.draw_latents(batch);
        let g = Graph::new();
        let gen_bind = self.generator.params.bind(&g, true);
        let critic_bind = self.critic.params.bind(&g, false);
        let z = g.leaf(latents, false);
        let loss = generator_loss_graph(
            &g,
            &self.generator,
            &gen_bind,
            &self.critic,
            &critic_bind,
            z,
            batch,
        )?;
        let loss_v = g.value(loss).item().as_f64();
        if !loss_v.is_finite() {
            return Err(Error::NonFinite("generator loss"));
        }
        self.generator.params.reset_grads();
        self.generator
            .params
            .accumulate_grads(&g, &gen_bind, loss)?;
        self.adam_gen.step(&mut self.generator.params);
        self.gen_steps_done += 1;
        Ok(loss_v)
    }

    /// Run `steps` generator iterations (each preceded by the configured
    /// number of critic updates), invoking `on_record` once per iteration.
    /// `fpd_probe`, when given, is called at the configured cadence to fill
    /// the telemetry FPD column.
    pub fn run(
        &mut self,
        dataset: &Dataset<T>,
        steps: u64,
        mut fpd_probe: Option<&mut dyn FnMut(&mut Trainer<T>) -> Result<f64>>,
        mut on_record: impl FnMut(&TelemetryRecord),
    ) -> Result<()> {
        self.ensure_batcher(dataset)?;
        let start = Instant::now();
        for _ in 0..steps {
            let mut disc = (0.0, 0.0);
            for _ in 0..self.config.critic_steps {
                disc = self.critic_update(dataset)?;
            }
            let l_gen = self.generator_update()?;
            let step = self.gen_steps_done;
            let fpd = match (&mut fpd_probe, self.config.eval_every) {
                (Some(probe), every) if every > 0 && step % every == 0 => Some(probe(self)?),
                _ => None,
            };
            self.batcher_state = self.batcher.as_ref().unwrap().state();
            let record = TelemetryRecord {
                step,
                l_gen,
                l_disc: disc.0,
                penalty: disc.1,
                wall_time_s: start.elapsed().as_secs_f64(),
                fpd,
            };
            on_record(&record);
        }
        Ok(())
    }

    /// Write the full training state: configs, schedule position, RNG
    /// stream, parameters, and Adam moments.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: "gan".to_string(),
            train: self.config.clone(),
            generator: self.generator.config.clone(),
            critic: self.critic.config.clone(),
            gen_steps_done: self.gen_steps_done,
            adam_gen_step: self.adam_gen.step,
            adam_critic_step: self.adam_critic.step,
            rng: RngSnapshot::capture(&self.rng),
            batcher_epoch: self.batcher_state.0,
            batcher_pos: self.batcher_state.1,
            dataset_len: self.dataset_len,
        };
        let json = serde_json::to_string(&meta)
            .map_err(|e| Error::format(format!("checkpoint config encoding failed: {e}")))?;

        let mut entries = Vec::new();
        for p in self.generator.params.iter() {
            entries.push((p.name.clone(), p.value.clone()));
        }
        for p in self.critic.params.iter() {
            entries.push((p.name.clone(), p.value.clone()));
        }
        for (i, p) in self.generator.params.iter().enumerate() {
            entries.push((format!("adam.gen.m.{}", p.name), self.adam_gen.m[i].clone()));
            entries.push((format!("adam.gen.v.{}", p.name), self.adam_gen.v[i].clone()));
        }
        for (i, p) in self.critic.params.iter().enumerate() {
            entries.push((
                format!("adam.critic.m.{}", p.name),
                self.adam_critic.m[i].clone(),
            ));
            entries.push((
                format!("adam.critic.v.{}", p.name),
                self.adam_critic.v[i].clone(),
            ));
        }
        checkpoint::write_container(path, &json, &entries)
    }

    pub fn load(path: &Path) -> Result<Trainer<T>> {
        let (json, entries) = checkpoint::read_container::<T>(path)?;
        let meta: CheckpointMeta = serde_json::from_str(&json)
            .map_err(|e| Error::format(format!("checkpoint config decoding failed: {e}")))?;
        if meta.kind != "gan" {
            return Err(Error::format(format!(
                "expected a training checkpoint, found kind '{}'",
                meta.kind
            )));
        }
        let mut table: std::collections::HashMap<String, Tensor<T>> =
            entries.into_iter().collect();
        let mut take = |name: &str| -> Result<Tensor<T>> {
            table
                .remove(name)
                .ok_or_else(|| Error::format(format!("checkpoint is missing tensor '{name}'")))
        };

        // Rebuild the networks with a throwaway RNG, then overwrite values.
        let mut seed_rng = ChaCha20Rng::seed_from_u64(0);
        let mut generator = Generator::<T>::init(meta.generator.clone(), &mut seed_rng)?;
        let mut critic = Critic::<T>::init(meta.critic.clone(), &mut seed_rng)?;
        for p in generator.params.iter_mut() {
            p.value = take(&p.name)?;
        }
        for p in critic.params.iter_mut() {
            p.value = take(&p.name)?;
        }
        let mut adam_gen = AdamState::new(meta.train.adam, &generator.params);
        adam_gen.step = meta.adam_gen_step;
        for (i, p) in generator.params.iter().enumerate() {
            adam_gen.m[i] = take(&format!("adam.gen.m.{}", p.name))?;
            adam_gen.v[i] = take(&format!("adam.gen.v.{}", p.name))?;
        }
        let mut adam_critic = AdamState::new(meta.train.adam, &critic.params);
        adam_critic.step = meta.adam_critic_step;
        for (i, p) in critic.params.iter().enumerate() {
            adam_critic.m[i] = take(&format!("adam.critic.m.{}", p.name))?;
            adam_critic.v[i] = take(&format!("adam.critic.v.{}", p.name))?;
        }

        Ok(Trainer {
            config: meta.train,
            generator,
            critic,
            adam_gen,
            adam_critic,
            gen_steps_done: meta.gen_steps_done,
            rng: meta.rng.restore()?,
            batcher: None,
            batcher_state: (meta.batcher_epoch, meta.batcher_pos),
            dataset_len: meta.dataset_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ShapeKind;
    use crate::gradcheck::grad_check;
    use crate::nn::ParamSet;

    fn tiny_gen_config() -> GeneratorConfig {
        GeneratorConfig {
            degrees: vec![1, 2, 3],
            feature_dims: vec![4, 6, 5, 3],
            supports: 4,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
        }
    }

    fn tiny_critic_config() -> CriticConfig {
        CriticConfig {
            point_widths: vec![3, 8, 10],
            head_widths: vec![10, 6, 1],
            slope: 0.2,
        }
    }

    fn cloud_batch(count: usize, n: usize, seed: u64) -> Vec<Tensor<f64>> {
        (0..count)
            .map(|i| {
                crate::data::sample_shape::<f64>(ShapeKind::Sphere, n, seed + i as u64, 0.05)
                    .unwrap()
                    .points
            })
            .collect()
    }

    #[test]
    fn generator_loss_is_negative_mean_score() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let generator = Generator::<f64>::init(tiny_gen_config(), &mut rng).unwrap();
        let critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        // Batch of one: loss = -D(G(z)) exactly.
        let z = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let loss = generator_loss(&generator, &critic, &z).unwrap();
        let cloud = generator.generate_batch(&z).unwrap().pop().unwrap();
        let score = critic.score(&cloud).unwrap();
        assert!((loss + score).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_constant_critic_is_minus_constant() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let generator = Generator::<f64>::init(tiny_gen_config(), &mut rng).unwrap();
        let mut critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        for p in critic.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
            if p.name == "critic.head1.bias" {
                p.value = Tensor::new(vec![1], vec![2.5]).unwrap();
            }
        }
        let z = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let loss = generator_loss(&generator, &critic, &z).unwrap();
        assert!((loss + 2.5).abs() < 1e-12);
    }

    #[test]
    fn generator_loss_batch_mean_matches_per_sample_average() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let generator = Generator::<f64>::init(tiny_gen_config(), &mut rng).unwrap();
        let critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        let zs = Tensor::new(
            vec![4, 4],
            (0..16).map(|_| f64::sample_normal(&mut rng)).collect(),
        )
        .unwrap();
        let batch_loss = generator_loss(&generator, &critic, &zs).unwrap();
        let mut acc = 0.0;
        for b in 0..4 {
            let z = Tensor::new(vec![1, 4], zs.row(b).to_vec()).unwrap();
            acc += generator_loss(&generator, &critic, &z).unwrap();
        }
        assert!((batch_loss - acc / 4.0).abs() < 1e-12);
    }

    /// Linear scorer D(x) = c · Σ w∘x per cloud, as a graph closure.
    fn linear_scorer(
        w: Tensor<f64>,
        c: f64,
        n: usize,
    ) -> impl Fn(&Graph<f64>, Value) -> Result<Value> {
        move |g: &Graph<f64>, x: Value| {
            let batch = g.shape_of(x)[0] / n;
            let mut wdata = Vec::with_capacity(batch * n * 3);
            for _ in 0..batch {
                wdata.extend_from_slice(w.data());
            }
            let wt = g.constant(Tensor::new(vec![batch * n, 3], wdata).unwrap());
            let prod = g.mul(x, wt);
            let s = g.block_sum_all(prod, n);
            Ok(g.scale(s, c))
        }
    }

    fn unit_weight(n: usize) -> Tensor<f64> {
        let numel = n * 3;
        let v = 1.0 / (numel as f64).sqrt();
        Tensor::full(vec![n, 3], v)
    }

    #[test]
    fn penalty_zero_for_unit_gradient_linear_scorer() {
        let n = 5;
        let g = Graph::new();
        let xhat = g.leaf(unit_weight(n).scale(2.0), true); // any input
        let p = gradient_penalty_graph(&g, linear_scorer(unit_weight(n), 1.0, n), xhat, n, 10.0)
            .unwrap();
        assert!(g.value(p).item().abs() < 1e-24);
    }

    #[test]
    fn penalty_for_constant_scorer_is_lambda() {
        let n = 4;
        let g = Graph::new();
        let xhat = g.leaf(Tensor::<f64>::full(vec![n, 3], 0.3), true);
        let p = gradient_penalty_graph(
            &g,
            |g, _x| Ok(g.constant(Tensor::new(vec![1, 1], vec![7.0]).unwrap())),
            xhat,
            n,
            10.0,
        )
        .unwrap();
        assert!((g.value(p).item() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_closed_form_for_doubled_linear_scorer() {
        // D(x) = 2·w·x with ‖w‖ = 1: gradient norm 2, penalty 10·(2−1)² = 10.
        let n = 6;
        let g = Graph::new();
        let xhat = g.leaf(Tensor::full(vec![n, 3], -0.7), true);
        let p = gradient_penalty_graph(&g, linear_scorer(unit_weight(n), 2.0, n), xhat, n, 10.0)
            .unwrap();
        assert!((g.value(p).item() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_gradient_reaches_critic_weights_second_order() {
        // Finite-difference the penalty value with respect to critic weights
        // and compare with the analytic gradient from the recorded
        // second-order path.
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        let critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        let n = 5;
        let xhat_data = cloud_batch(2, n, 77);
        let xhat = pack_clouds(&xhat_data).unwrap();

        let err = grad_check(&critic.params, 1e-5, &mut rng, |g, b| {
            let leaf = g.leaf(xhat.clone(), true);
            gradient_penalty_graph(
                g,
                |g, x| critic.forward(g, b, x, n),
                leaf,
                n,
                10.0,
            )
            .unwrap()
        });
        assert!(err < 1e-3, "max rel err {err}");
    }

    #[test]
    fn critic_loss_decomposes_into_three_terms() {
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        let n = 5;
        let real = cloud_batch(3, n, 1);
        let fake = cloud_batch(3, n, 100);
        let packed_real = pack_clouds(&real).unwrap();
        let packed_fake = pack_clouds(&fake).unwrap();
        let mut u_rng = ChaCha20Rng::seed_from_u64(9);
        let xhat = interpolate_clouds(&packed_real, &packed_fake, n, &mut u_rng).unwrap();

        let g = Graph::new();
        let bind = critic.params.bind(&g, true);
        let real_leaf = g.leaf(packed_real, false);
        let fake_leaf = g.leaf(packed_fake, false);
        let xhat_leaf = g.leaf(xhat.clone(), true);
        let (loss, _) = critic_loss_graph(
            &g, &critic, &bind, real_leaf, fake_leaf, xhat_leaf, n, 10.0,
        )
        .unwrap();
        let loss_v = g.value(loss).item();

        // Terms recomputed independently.
        let mean_real: f64 =
            real.iter().map(|c| critic.score(c).unwrap()).sum::<f64>() / 3.0;
        let mean_fake: f64 =
            fake.iter().map(|c| critic.score(c).unwrap()).sum::<f64>() / 3.0;
        let g2 = Graph::new();
        let bind2 = critic.params.bind(&g2, true);
        let xhat_leaf2 = g2.leaf(xhat, true);
        let pen = gradient_penalty_graph(
            &g2,
            |g, x| critic.forward(g, &bind2, x, n),
            xhat_leaf2,
            n,
            10.0,
        )
        .unwrap();
        let expected = mean_fake - mean_real + g2.value(pen).item();
        assert!((loss_v - expected).abs() < 1e-12, "{loss_v} vs {expected}");
    }

    #[test]
    fn critic_loss_zero_cases_and_antisymmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        let critic = Critic::<f64>::init(tiny_critic_config(), &mut rng).unwrap();
        let n = 5;
        let a = cloud_batch(2, n, 3);
        let b = cloud_batch(2, n, 50);

        let loss_same = {
            let g = Graph::new();
            let bind = critic.params.bind(&g, true);
            let pa = g.leaf(pack_clouds(&a).unwrap(), false);
            let pa2 = g.leaf(pack_clouds(&a).unwrap(), false);
            let xh = g.leaf(pack_clouds(&a).unwrap(), true);
            let (l, _) = critic_loss_graph(&g, &critic, &bind, pa, pa2, xh, n, 0.0).unwrap();
            g.value(l).item()
        };
        assert!(loss_same.abs() < 1e-12);

        let eval = |x: &[Tensor<f64>], y: &[Tensor<f64>]| {
            let g = Graph::new();
            let bind = critic.params.bind(&g, true);
            let px = g.leaf(pack_clouds(x).unwrap(), false);
            let py = g.leaf(pack_clouds(y).unwrap(), false);
            let xh = g.leaf(pack_clouds(x).unwrap(), true);
            let (l, _) = critic_loss_graph(&g, &critic, &bind, px, py, xh, n, 0.0).unwrap();
            g.value(l).item()
        };
        let lab = eval(&a, &b);
        let lba = eval(&b, &a);
        assert!((lab + lba).abs() < 1e-12, "{lab} vs {lba}");
    }

    fn desk_trainer(seed: u64) -> Trainer<f64> {
        let gen_config = GeneratorConfig {
            degrees: vec![1, 2, 4],
            feature_dims: vec![4, 8, 6, 3],
            supports: 4,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
        };
        let critic_config = CriticConfig {
            point_widths: vec![3, 6, 8],
            head_widths: vec![8, 4, 1],
            slope: 0.2,
        };
        let train_config = TrainConfig {
            batch_size: 4,
            critic_steps: 2,
            seed,
            ..TrainConfig::default()
        };
        Trainer::new(gen_config, critic_config, train_config).unwrap()
    }

    fn desk_dataset() -> Dataset<f64> {
        Dataset::synthetic(&[ShapeKind::Sphere, ShapeKind::Cube], 8, 8, 0.02, 5).unwrap()
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let dataset = desk_dataset();
        let run = |seed: u64| {
            let mut t = desk_trainer(seed);
            let mut records = Vec::new();
            t.run(&dataset, 4, None, |r| {
                records.push((r.step, r.l_gen, r.l_disc, r.penalty))
            })
            .unwrap();
            (records, t)
        };
        let (ra, ta) = run(7);
        let (rb, tb) = run(7);
        assert_eq!(ra, rb);
        for (pa, pb) in ta.generator.params.iter().zip(tb.generator.params.iter()) {
            assert_eq!(pa.value, pb.value);
        }
        let (rc, _) = run(8);
        assert_ne!(ra, rc);
    }

    #[test]
    fn zero_steps_leaves_initialization_untouched() {
        let dataset = desk_dataset();
        let mut t = desk_trainer(11);
        let before: Vec<Tensor<f64>> =
            t.generator.params.iter().map(|p| p.value.clone()).collect();
        t.run(&dataset, 0, None, |_| {}).unwrap();
        for (p, b) in t.generator.params.iter().zip(before) {
            assert_eq!(p.value, b);
        }
        assert_eq!(t.gen_steps_done, 0);
    }

    #[test]
    fn resume_from_checkpoint_bit_matches_straight_run() {
        let dataset = desk_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.tgn");

        let mut straight = desk_trainer(13);
        straight.run(&dataset, 6, None, |_| {}).unwrap();

        let mut split = desk_trainer(13);
        split.run(&dataset, 3, None, |_| {}).unwrap();
        split.save(&path).unwrap();
        let mut resumed = Trainer::<f64>::load(&path).unwrap();
        resumed.run(&dataset, 3, None, |_| {}).unwrap();

        assert_eq!(resumed.gen_steps_done, straight.gen_steps_done);
        for (a, b) in straight
            .generator
            .params
            .iter()
            .chain(straight.critic.params.iter())
            .zip(resumed.generator.params.iter().chain(resumed.critic.params.iter()))
        {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value, "parameter {} diverged", a.name);
        }
    }

    #[test]
    fn checkpoint_save_load_save_is_byte_identical() {
        let dataset = desk_dataset();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tgn");
        let p2 = dir.path().join("b.tgn");
        let mut t = desk_trainer(17);
        t.run(&dataset, 2, None, |_| {}).unwrap();
        t.save(&p1).unwrap();
        let t2 = Trainer::<f64>::load(&p1).unwrap();
        t2.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
