//! The FPD reference model: a point-set classifier (shared per-point stack,
//! max pool, dense layers, softmax head) whose last dense activation is the
//! feature vector fed to the Gaussian statistics.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint;
use crate::data::{Batcher, Dataset, TailPolicy};
use crate::error::{Error, Result};
use crate::graph::{Graph, Value};
use crate::nn::{Binding, Linear, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::fpd::GaussianStats;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ExtractorConfig {
    /// Shared per-point widths, starting at 3.
    pub point_widths: Vec<usize>,
    /// Dense widths after pooling; the last one is the feature dimension.
    pub dense_widths: Vec<usize>,
    pub classes: usize,
    pub slope: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            point_widths: vec![3, 32, 64],
            dense_widths: vec![64, 64],
            classes: 4,
            slope: 0.2,
        }
    }
}

impl ExtractorConfig {
    pub fn feature_dim(&self) -> usize {
        *self.dense_widths.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_widths.first() != Some(&3) {
            return Err(Error::config("extractor per-point stack must start at 3"));
        }
        if self.point_widths.len() < 2 || self.dense_widths.is_empty() {
            return Err(Error::config("extractor needs point and dense layers"));
        }
        if self.dense_widths.first() != self.point_widths.last() {
            return Err(Error::config(
                "first dense width must match the pooled width",
            ));
        }
        if self.classes < 2 {
            return Err(Error::config("extractor needs at least 2 classes"));
        }
        Ok(())
    }
}

pub struct FeatureExtractor<T> {
    pub config: ExtractorConfig,
    pub params: ParamSet<T>,
    point_layers: Vec<Linear>,
    dense_layers: Vec<Linear>,
    classifier: Linear,
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn init(config: ExtractorConfig, rng: &mut impl rand::Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let point_layers = config
            .point_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(&mut params, &format!("fx.point{i}"), w[0], w[1], rng))
            .collect();
        let dense_layers: Vec<Linear> = config
            .dense_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(&mut params, &format!("fx.dense{i}"), w[0], w[1], rng))
            .collect();
        let classifier = Linear::init(
            &mut params,
            "fx.classifier",
            config.feature_dim(),
            config.classes,
            rng,
        );
        Ok(FeatureExtractor {
            config,
            params,
            point_layers,
            dense_layers,
            classifier,
        })
    }

    /// Features [B, F] for clouds packed as [(B·n) × 3].
    pub fn features_graph(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        packed: Value,
        points_per_cloud: usize,
    ) -> Result<Value> {
        let slope = T::of_f64(self.config.slope);
        let mut h = packed;
        for lin in &self.point_layers {
            h = lin.forward(g, binding, h)?;
            h = g.leaky_relu(h, slope);
        }
        let mut pooled = g.block_max_rows(h, points_per_cloud);
        for lin in &self.dense_layers {
            pooled = lin.forward(g, binding, pooled)?;
            pooled = g.leaky_relu(pooled, slope);
        }
        Ok(pooled)
    }

    pub fn logits_graph(
        &self,
        g: &Graph<T>,
        binding: &Binding,
        packed: Value,
        points_per_cloud: usize,
    ) -> Result<Value> {
        let features = self.features_graph(g, binding, packed, points_per_cloud)?;
        self.classifier.forward(g, binding, features)
    }

    /// Deterministic feature extraction, one row per cloud, as f64 for the
    /// statistics pipeline.
    pub fn extract(&self, clouds: &[Tensor<T>]) -> Result<Tensor<f64>> {
        if clouds.is_empty() {
            return Err(Error::contract("no clouds to extract features from"));
        }
        let n = clouds[0].rows();
        let f = self.config.feature_dim();
        let mut out = Vec::with_capacity(clouds.len() * f);
        // Modest chunks keep activation memory flat for big sets.
        for chunk in clouds.chunks(64) {
            let packed = crate::training::pack_clouds(chunk)?;
            let g = Graph::new();
            let binding = self.params.bind(&g, false);
            let leaf = g.leaf(packed, false);
            let feats = self.features_graph(&g, &binding, leaf, n)?;
            out.extend(g.value(feats).data().iter().map(|v| v.as_f64()));
        }
        Tensor::new(vec![clouds.len(), f], out)
    }

    /// Predicted class per cloud.
    pub fn classify(&self, clouds: &[Tensor<T>]) -> Result<Vec<usize>> {
        let n = clouds[0].rows();
        let mut preds = Vec::with_capacity(clouds.len());
        for chunk in clouds.chunks(64) {
            let packed = crate::training::pack_clouds(chunk)?;
            let g = Graph::new();
            let binding = self.params.bind(&g, false);
            let leaf = g.leaf(packed, false);
            let logits = g.value(self.logits_graph(&g, &binding, leaf, n)?);
            for b in 0..chunk.len() {
                let row = logits.row(b);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                preds.push(best);
            }
        }
        Ok(preds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Meta<'a> {
            kind: &'a str,
            config: &'a ExtractorConfig,
        }
        let json = serde_json::to_string(&Meta {
            kind: "extractor",
            config: &self.config,
        })
        .map_err(|e| Error::format(format!("extractor config encoding failed: {e}")))?;
        let entries: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        checkpoint::write_container(path, &json, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Meta {
            kind: String,
            config: ExtractorConfig,
        }
        let (json, entries) = checkpoint::read_container::<T>(path)?;
        let meta: Meta = serde_json::from_str(&json)
            .map_err(|e| Error::format(format!("extractor config decoding failed: {e}")))?;
        if meta.kind != "extractor" {
            return Err(Error::format(format!(
                "expected an extractor file, found kind '{}'",
                meta.kind
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let mut fx = FeatureExtractor::init(meta.config, &mut rng)?;
        let table: std::collections::HashMap<String, Tensor<T>> = entries.into_iter().collect();
        for p in fx.params.iter_mut() {
            p.value = table
                .get(&p.name)
                .cloned()
                .ok_or_else(|| Error::format(format!("extractor file missing '{}'", p.name)))?;
        }
        Ok(fx)
    }
}

/// Cross-entropy training of the classifier on an internal seeded 80/20
/// split. Returns the extractor with frozen weights and the held-out
/// accuracy. Zero epochs returns the random initialization (usable, but FPD
/// values from it carry no meaning).
pub fn train_feature_extractor<T: Scalar>(
    dataset: &Dataset<T>,
    config: ExtractorConfig,
    epochs: usize,
    seed: u64,
) -> Result<(FeatureExtractor<T>, f64)> {
    let labels: Vec<u16> = dataset
        .clouds
        .iter()
        .map(|c| {
            c.class
                .ok_or_else(|| Error::contract("extractor training needs class labels"))
        })
        .collect::<Result<_>>()?;
    let distinct: std::collections::BTreeSet<u16> = labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::contract(
            "extractor training needs at least 2 classes",
        ));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut fx = FeatureExtractor::init(config, &mut rng)?;
    let (train, held_out) = dataset.split(0.8, seed ^ 0x5eed);
    let n = dataset.points_per_cloud();
    let batch_size = train.len().min(16);

    let adam_config = AdamConfig {
        alpha: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut adam = AdamState::new(adam_config, &fx.params);
    let mut batcher = Batcher::new(train.len(), batch_size, seed, TailPolicy::Drop)?;
    let batches_per_epoch = (train.len() / batch_size).max(1);

    for _ in 0..epochs {
        for _ in 0..batches_per_epoch {
            let idx = batcher.next_batch();
            let clouds: Vec<Tensor<T>> = idx
                .iter()
                .map(|&i| train.clouds[i].points.clone())
                .collect();
            let targets: Vec<usize> = idx
                .iter()
                .map(|&i| train.clouds[i].class.unwrap() as usize)
                .collect();
            let packed = crate::training::pack_clouds(&clouds)?;
            let g = Graph::new();
            let binding = fx.params.bind(&g, true);
            let leaf = g.leaf(packed, false);
            let logits = fx.logits_graph(&g, &binding, leaf, n)?;
            let loss = g.softmax_cross_entropy(logits, &targets);
            if !g.value(loss).item().is_finite() {
                return Err(Error::NonFinite("extractor training loss"));
            }
            fx.params.reset_grads();
            fx.params.accumulate_grads(&g, &binding, loss)?;
            adam.step(&mut fx.params);
        }
    }

    let held_clouds: Vec<Tensor<T>> = held_out.clouds.iter().map(|c| c.points.clone()).collect();
    let preds = fx.classify(&held_clouds)?;
    let correct = preds
        .iter()
        .zip(&held_out.clouds)
        .filter(|(p, c)| **p == c.class.unwrap() as usize)
        .count();
    let accuracy = correct as f64 / held_out.len() as f64;
    Ok((fx, accuracy))
}

/// Fit Gaussian statistics to the features of a set of clouds.
pub fn extract_stats<T: Scalar>(
    clouds: &[Tensor<T>],
    extractor: &FeatureExtractor<T>,
) -> Result<GaussianStats> {
    if clouds.len() < 2 {
        return Err(Error::contract("statistics need at least 2 clouds"));
    }
    let features = extractor.extract(clouds)?;
    GaussianStats::fit(&features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ShapeKind;

    fn tiny_config() -> ExtractorConfig {
        ExtractorConfig {
            point_widths: vec![3, 16, 24],
            dense_widths: vec![24, 16],
            classes: 4,
            slope: 0.2,
        }
    }

    #[test]
    fn classifier_separates_synthetic_shapes() {
        let dataset = Dataset::<f64>::synthetic(&ShapeKind::ALL, 30, 64, 0.02, 40).unwrap();
        let (_fx, acc) = train_feature_extractor(&dataset, tiny_config(), 32, 1).unwrap();
        assert!(acc >= 0.95, "held-out accuracy {acc}");
    }

    #[test]
    fn zero_epochs_yields_usable_random_extractor() {
        let dataset = Dataset::<f64>::synthetic(&ShapeKind::ALL, 4, 32, 0.02, 41).unwrap();
        let (fx, _) = train_feature_extractor(&dataset, tiny_config(), 0, 2).unwrap();
        let clouds: Vec<Tensor<f64>> =
            dataset.clouds.iter().take(4).map(|c| c.points.clone()).collect();
        let stats = extract_stats(&clouds, &fx).unwrap();
        assert_eq!(stats.dim(), 16);
        assert!(stats.cov.all_finite());
    }

    #[test]
    fn label_permutation_preserves_accuracy() {
        let base = Dataset::<f64>::synthetic(&ShapeKind::ALL, 30, 48, 0.02, 42).unwrap();
        let (_fx, acc) = train_feature_extractor(&base, tiny_config(), 48, 3).unwrap();
        let mut swapped = base.clone();
        for c in &mut swapped.clouds {
            // Swap labels 0 <-> 1 and 2 <-> 3.
            c.class = c.class.map(|k| k ^ 1);
        }
        let (_fx2, acc2) = train_feature_extractor(&swapped, tiny_config(), 48, 3).unwrap();
        assert!((acc - acc2).abs() <= 0.05, "{acc} vs {acc2}");
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let dataset =
            Dataset::<f64>::synthetic(&[ShapeKind::Sphere], 10, 32, 0.02, 43).unwrap();
        assert!(train_feature_extractor(&dataset, tiny_config(), 1, 4).is_err());
    }

    #[test]
    fn extraction_is_permutation_invariant() {
        let dataset = Dataset::<f64>::synthetic(&ShapeKind::ALL, 2, 32, 0.02, 44).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let fx = FeatureExtractor::<f64>::init(tiny_config(), &mut rng).unwrap();
        let cloud = dataset.clouds[0].points.clone();
        let mut rows: Vec<Vec<f64>> = (0..cloud.rows()).map(|i| cloud.row(i).to_vec()).collect();
        rows.reverse();
        let shuffled = Tensor::from_rows(&rows);
        let a = fx.extract(&[cloud]).unwrap();
        let b = fx.extract(&[shuffled]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_roundtrip_preserves_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fx.tgn");
        let dataset = Dataset::<f64>::synthetic(&ShapeKind::ALL, 2, 32, 0.02, 45).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let fx = FeatureExtractor::<f64>::init(tiny_config(), &mut rng).unwrap();
        fx.save(&path).unwrap();
        let back = FeatureExtractor::<f64>::load(&path).unwrap();
        let clouds: Vec<Tensor<f64>> =
            dataset.clouds.iter().take(3).map(|c| c.points.clone()).collect();
        assert_eq!(fx.extract(&clouds).unwrap(), back.extract(&clouds).unwrap());
    }
}
