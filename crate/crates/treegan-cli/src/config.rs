//! Merged run configuration: defaults, then KEY=VALUE config file, then
//! command-line flags. Unknown keys are rejected, and the effective
//! configuration is echoed into every output directory so a run can be
//! reproduced from its artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use treegan::adam::AdamConfig;
use treegan::critic::CriticConfig;
use treegan::data::TailPolicy;
use treegan::error::{Error, Result};
use treegan::metrics::ExtractorConfig;
use treegan::training::TrainConfig;
use treegan::treegcn::GeneratorConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub precision: Precision,
    pub data: String,
    pub points: Option<usize>,
    pub clouds_per_class: usize,
    pub noise_sigma: f64,
    pub degrees: Option<Vec<usize>>,
    pub feature_dims: Option<Vec<usize>>,
    pub supports: usize,
    pub slope: f64,
    pub per_node_branching: bool,
    pub branch_before_conv: bool,
    pub critic_point_widths: Vec<usize>,
    pub critic_head_widths: Vec<usize>,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub lambda_gp: f64,
    pub critic_steps: usize,
    pub eval_every: u64,
    pub tail: TailPolicy,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub sample_every: u64,
    pub jsd_resolution: usize,
    pub metrics: Vec<String>,
    pub count: usize,
    pub alphas: Vec<f64>,
    pub extractor_epochs: usize,
    pub extractor_point_widths: Vec<usize>,
    pub extractor_dense_widths: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            precision: Precision::F32,
            data: "synth:sphere,cube,torus,cylinder".into(),
            points: None,
            clouds_per_class: 200,
            noise_sigma: 0.02,
            degrees: None,
            feature_dims: None,
            supports: 10,
            slope: 0.2,
            per_node_branching: false,
            branch_before_conv: true,
            critic_point_widths: vec![3, 64, 128, 256, 512],
            critic_head_widths: vec![512, 128, 64, 1],
            steps: 2000,
            batch: 16,
            seed: 0,
            lambda_gp: 10.0,
            critic_steps: 5,
            eval_every: 0,
            tail: TailPolicy::Drop,
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            adam_eps: 1e-8,
            sample_every: 0,
            jsd_resolution: 28,
            metrics: vec![
                "jsd".into(),
                "mmd-cd".into(),
                "mmd-emd".into(),
                "cov-cd".into(),
                "cov-emd".into(),
            ],
            count: 64,
            alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            extractor_epochs: 12,
            extractor_point_widths: vec![3, 32, 64],
            extractor_dense_widths: vec![64, 64],
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| Error::config(format!("bad element '{t}' in {key}")))
        })
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::config(format!("bad value '{v}' for {key}")))
}

impl RunConfig {
    /// Apply one KEY=VALUE setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "precision" => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    other => {
                        return Err(Error::config(format!(
                            "precision must be f32 or f64, got '{other}'"
                        )))
                    }
                }
            }
            "data" => self.data = value.to_string(),
            "points" => self.points = Some(parse_scalar(key, value)?),
            "clouds_per_class" => self.clouds_per_class = parse_scalar(key, value)?,
            "noise_sigma" => self.noise_sigma = parse_scalar(key, value)?,
            "degrees" => self.degrees = Some(parse_list(key, value)?),
            "feature_dims" => self.feature_dims = Some(parse_list(key, value)?),
            "supports" => self.supports = parse_scalar(key, value)?,
            "slope" => self.slope = parse_scalar(key, value)?,
            "per_node_branching" => self.per_node_branching = parse_scalar(key, value)?,
            "branch_before_conv" => self.branch_before_conv = parse_scalar(key, value)?,
            "critic_point_widths" => self.critic_point_widths = parse_list(key, value)?,
            "critic_head_widths" => self.critic_head_widths = parse_list(key, value)?,
            "steps" => self.steps = parse_scalar(key, value)?,
            "batch" => self.batch = parse_scalar(key, value)?,
            "seed" => self.seed = parse_scalar(key, value)?,
            "lambda_gp" => self.lambda_gp = parse_scalar(key, value)?,
            "critic_steps" => self.critic_steps = parse_scalar(key, value)?,
            "eval_every" => self.eval_every = parse_scalar(key, value)?,
            "tail" => {
                self.tail = match value {
                    "drop" => TailPolicy::Drop,
                    "wrap" => TailPolicy::Wrap,
                    other => {
                        return Err(Error::config(format!(
                            "tail must be drop or wrap, got '{other}'"
                        )))
                    }
                }
            }
            "lr" => self.lr = parse_scalar(key, value)?,
            "beta1" => self.beta1 = parse_scalar(key, value)?,
            "beta2" => self.beta2 = parse_scalar(key, value)?,
            "adam_eps" => self.adam_eps = parse_scalar(key, value)?,
            "sample_every" => self.sample_every = parse_scalar(key, value)?,
            "jsd_resolution" => self.jsd_resolution = parse_scalar(key, value)?,
            "metrics" => {
                self.metrics = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "count" => self.count = parse_scalar(key, value)?,
            "alphas" => self.alphas = parse_list(key, value)?,
            "extractor_epochs" => self.extractor_epochs = parse_scalar(key, value)?,
            "extractor_point_widths" => self.extractor_point_widths = parse_list(key, value)?,
            "extractor_dense_widths" => self.extractor_dense_widths = parse_list(key, value)?,
            other => return Err(Error::config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Load KEY=VALUE lines ('#' starts a comment) on top of the current
    /// values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected KEY=VALUE, got '{line}'"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The full effective configuration as loadable KEY=VALUE lines.
    pub fn dump(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert(
            "precision",
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        );
        kv.insert("data", self.data.clone());
        kv.insert("points", self.effective_points().to_string());
        kv.insert("clouds_per_class", self.clouds_per_class.to_string());
        kv.insert("noise_sigma", self.noise_sigma.to_string());
        kv.insert("degrees", join(&self.effective_degrees()));
        kv.insert("feature_dims", join(&self.effective_feature_dims()));
        kv.insert("supports", self.supports.to_string());
        kv.insert("slope", self.slope.to_string());
        kv.insert("per_node_branching", self.per_node_branching.to_string());
        kv.insert("branch_before_conv", self.branch_before_conv.to_string());
        kv.insert("critic_point_widths", join(&self.critic_point_widths));
        kv.insert("critic_head_widths", join(&self.critic_head_widths));
        kv.insert("steps", self.steps.to_string());
        kv.insert("batch", self.batch.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("lambda_gp", self.lambda_gp.to_string());
        kv.insert("critic_steps", self.critic_steps.to_string());
        kv.insert("eval_every", self.eval_every.to_string());
        kv.insert(
            "tail",
            match self.tail {
                TailPolicy::Drop => "drop".into(),
                TailPolicy::Wrap => "wrap".into(),
            },
        );
        kv.insert("lr", self.lr.to_string());
        kv.insert("beta1", self.beta1.to_string());
        kv.insert("beta2", self.beta2.to_string());
        kv.insert("adam_eps", self.adam_eps.to_string());
        kv.insert("sample_every", self.sample_every.to_string());
        kv.insert("jsd_resolution", self.jsd_resolution.to_string());
        kv.insert("metrics", self.metrics.join(","));
        kv.insert("count", self.count.to_string());
        kv.insert(
            "alphas",
            self.alphas
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("extractor_epochs", self.extractor_epochs.to_string());
        kv.insert("extractor_point_widths", join(&self.extractor_point_widths));
        kv.insert("extractor_dense_widths", join(&self.extractor_dense_widths));

        let mut out = String::from("# effective configuration\n");
        for (k, v) in kv {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Point count implied by the explicit setting or the degree schedule.
    pub fn effective_points(&self) -> usize {
        match (self.points, &self.degrees) {
            (Some(p), _) => p,
            (None, Some(d)) => d.iter().product(),
            (None, None) => 2048,
        }
    }

    /// The degree schedule: explicit, or derived from the point count in the
    /// default style {1, 2, ..., 2, r}.
    pub fn effective_degrees(&self) -> Vec<usize> {
        if let Some(d) = &self.degrees {
            return d.clone();
        }
        let points = self.effective_points();
        let mut k = 0usize;
        while k < 5 && points % (1 << (k + 1)) == 0 && points >> (k + 1) >= 8 {
            k += 1;
        }
        let mut degrees = vec![1usize];
        degrees.extend(std::iter::repeat(2).take(k));
        let r = points >> k;
        if r > 1 || degrees.len() == 1 {
            degrees.push(r);
        }
        degrees
    }

    pub fn effective_feature_dims(&self) -> Vec<usize> {
        if let Some(f) = &self.feature_dims {
            return f.clone();
        }
        let l = self.effective_degrees().len();
        if l == 7 {
            return vec![96, 256, 256, 256, 128, 128, 128, 3];
        }
        let mut dims = vec![96];
        dims.extend(std::iter::repeat(64).take(l.saturating_sub(1)));
        dims.push(3);
        dims
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let degrees = self.effective_degrees();
        if let Some(points) = self.points {
            let product: usize = degrees.iter().product();
            if product != points {
                return Err(Error::config(format!(
                    "degree schedule {degrees:?} yields {product} points, but points = {points}"
                )));
            }
        }
        let config = GeneratorConfig {
            degrees,
            feature_dims: self.effective_feature_dims(),
            supports: self.supports,
            slope: self.slope,
            per_node_branching: self.per_node_branching,
            branch_before_conv: self.branch_before_conv,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn critic_config(&self) -> Result<CriticConfig> {
        let config = CriticConfig {
            point_widths: self.critic_point_widths.clone(),
            head_widths: self.critic_head_widths.clone(),
            slope: self.slope,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            lambda_gp: self.lambda_gp,
            critic_steps: self.critic_steps,
            batch_size: self.batch,
            total_gen_steps: self.steps,
            seed: self.seed,
            adam: AdamConfig {
                alpha: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            eval_every: self.eval_every,
            tail: self.tail,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn extractor_config(&self, classes: usize) -> Result<ExtractorConfig> {
        let config = ExtractorConfig {
            point_widths: self.extractor_point_widths.clone(),
            dense_widths: self.extractor_dense_widths.clone(),
            classes,
            slope: self.slope,
        };
        config.validate()?;
        Ok(config)
    }
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
