//! Datasets: synthetic shape sampling, normalization, batching, and
//! point-cloud file I/O (ASCII PLY and the PCB multi-cloud container).

mod pcb;
mod ply;

pub use pcb::{read_pcb, write_pcb};
pub use ply::{read_ply, write_ply, LABEL_PALETTE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// n×3 coordinates with optional per-point part labels and a class id.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    pub points: Tensor<T>,
    pub labels: Option<Vec<u16>>,
    pub class: Option<u16>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Tensor<T>) -> Result<Self> {
        if points.shape().len() != 2 || points.shape()[1] != 3 || points.rows() == 0 {
            return Err(Error::contract(format!(
                "point cloud wants n×3 with n ≥ 1, got {:?}",
                points.shape()
            )));
        }
        if !points.all_finite() {
            return Err(Error::NonFinite("point cloud coordinates"));
        }
        Ok(PointCloud {
            points,
            labels: None,
            class: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn point(&self, i: usize) -> [T; 3] {
        [self.points.at(i, 0), self.points.at(i, 1), self.points.at(i, 2)]
    }
}

/// Synthetic shape families used as desk-scale stand-ins for scanned data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Torus,
    Cylinder,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Torus,
        ShapeKind::Cylinder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Torus => "torus",
            ShapeKind::Cylinder => "cylinder",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "torus" => Ok(ShapeKind::Torus),
            "cylinder" => Ok(ShapeKind::Cylinder),
            other => Err(Error::config(format!("unknown shape kind '{other}'"))),
        }
    }
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.3;
const CYLINDER_RADIUS: f64 = 0.5;

/// Uniform surface sample of the given shape plus truncated Gaussian jitter
/// of scale `noise_sigma` along the surface normal (|offset| ≤ sigma, so the
/// implicit-surface residual stays bounded by sigma). Deterministic per seed.
pub fn sample_shape<T: Scalar>(
    kind: ShapeKind,
    n: usize,
    seed: u64,
    noise_sigma: f64,
) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(Error::contract("shape sample needs n ≥ 1"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let (p, normal) = sample_surface_point(kind, &mut rng);
        let tau = truncated_normal(&mut rng, noise_sigma);
        for c in 0..3 {
            data.push(T::of_f64(p[c] + tau * normal[c]));
        }
    }
    let mut cloud = PointCloud::new(Tensor::new(vec![n, 3], data)?)?;
    cloud.class = None;
    Ok(cloud)
}

fn truncated_normal(rng: &mut ChaCha20Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let v: f64 = f64::sample_normal(rng) * sigma;
        if v.abs() <= sigma {
            return v;
        }
    }
}

fn sample_surface_point(kind: ShapeKind, rng: &mut ChaCha20Rng) -> ([f64; 3], [f64; 3]) {
    match kind {
        ShapeKind::Sphere => {
            // Normalized Gaussian direction; radius 1.
            loop {
                let v = [
                    f64::sample_normal(rng),
                    f64::sample_normal(rng),
                    f64::sample_normal(rng),
                ];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if norm > 1e-12 {
                    let p = [v[0] / norm, v[1] / norm, v[2] / norm];
                    return (p, p);
                }
            }
        }
        ShapeKind::Cube => {
            // Six equal faces of the side-2 cube [-1,1]^3.
            let face = rng.random_range(0..6usize);
            let a = f64::sample_uniform(rng, -1.0, 1.0);
            let b = f64::sample_uniform(rng, -1.0, 1.0);
            let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
            let mut p = [0.0; 3];
            let mut normal = [0.0; 3];
            p[axis] = sign;
            normal[axis] = sign;
            p[(axis + 1) % 3] = a;
            p[(axis + 2) % 3] = b;
            (p, normal)
        }
        ShapeKind::Torus => {
            // Area element ∝ (R + r cosθ): rejection on the tube angle.
            let theta = loop {
                let t = f64::sample_uniform(rng, 0.0, std::f64::consts::TAU);
                let accept = (TORUS_MAJOR + TORUS_MINOR * t.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                if f64::sample_uniform(rng, 0.0, 1.0) < accept {
                    break t;
                }
            };
            let phi = f64::sample_uniform(rng, 0.0, std::f64::consts::TAU);
            let ring = TORUS_MAJOR + TORUS_MINOR * theta.cos();
            let p = [ring * phi.cos(), ring * phi.sin(), TORUS_MINOR * theta.sin()];
            let normal = [
                theta.cos() * phi.cos(),
                theta.cos() * phi.sin(),
                theta.sin(),
            ];
            (p, normal)
        }
        ShapeKind::Cylinder => {
            // Radius 0.5, axis z, z in [-1,1]; caps and side weighted by area.
            let side_area = std::f64::consts::TAU * CYLINDER_RADIUS * 2.0;
            let cap_area = std::f64::consts::PI * CYLINDER_RADIUS * CYLINDER_RADIUS;
            let u = f64::sample_uniform(rng, 0.0, side_area + 2.0 * cap_area);
            if u < side_area {
                let phi = f64::sample_uniform(rng, 0.0, std::f64::consts::TAU);
                let z = f64::sample_uniform(rng, -1.0, 1.0);
                (
                    [CYLINDER_RADIUS * phi.cos(), CYLINDER_RADIUS * phi.sin(), z],
                    [phi.cos(), phi.sin(), 0.0],
                )
            } else {
                let sign = if u < side_area + cap_area { 1.0 } else { -1.0 };
                let rho = CYLINDER_RADIUS * f64::sample_uniform(rng, 0.0, 1.0).sqrt();
                let phi = f64::sample_uniform(rng, 0.0, std::f64::consts::TAU);
                (
                    [rho * phi.cos(), rho * phi.sin(), sign],
                    [0.0, 0.0, sign],
                )
            }
        }
    }
}

/// Implicit-surface residual of a point for the given (noise-free) shape;
/// bounded by the jitter sigma for sampled points.
pub fn surface_residual(kind: ShapeKind, p: [f64; 3]) -> f64 {
    match kind {
        ShapeKind::Sphere => ((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs(),
        ShapeKind::Cube => {
            let m = p.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            (m - 1.0).abs()
        }
        ShapeKind::Torus => {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - TORUS_MAJOR;
            let tube = (ring * ring + p[2] * p[2]).sqrt();
            (tube - TORUS_MINOR).abs()
        }
        ShapeKind::Cylinder => {
            let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let side = (rho - CYLINDER_RADIUS).abs();
            let cap = (p[2].abs() - 1.0).abs();
            side.min(cap)
        }
    }
}

/// Inverse transform of one normalization: original = normalized·scale + center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub center: [f64; 3],
    pub scale: f64,
}

impl NormRecord {
    pub const IDENTITY: NormRecord = NormRecord {
        center: [0.0; 3],
        scale: 1.0,
    };
}

/// Center the centroid at the origin and scale so the farthest point sits on
/// the unit sphere. Degenerate clouds (all points identical) are centered
/// with scale 1.
pub fn normalize_unit_sphere<T: Scalar>(cloud: &PointCloud<T>) -> (PointCloud<T>, NormRecord) {
    let n = cloud.len();
    let mut center = [0.0f64; 3];
    for i in 0..n {
        for c in 0..3 {
            center[c] += cloud.points.at(i, c).as_f64();
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    let mut max_norm = 0.0f64;
    for i in 0..n {
        let mut d = 0.0;
        for c in 0..3 {
            let v = cloud.points.at(i, c).as_f64() - center[c];
            d += v * v;
        }
        max_norm = max_norm.max(d.sqrt());
    }
    let scale = if max_norm < 1e-12 { 1.0 } else { max_norm };
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            data.push(T::of_f64(
                (cloud.points.at(i, c).as_f64() - center[c]) / scale,
            ));
        }
    }
    let normalized = PointCloud {
        points: Tensor::new(vec![n, 3], data).unwrap(),
        labels: cloud.labels.clone(),
        class: cloud.class,
    };
    (normalized, NormRecord { center, scale })
}

/// Apply the inverse of a normalization record.
pub fn denormalize<T: Scalar>(cloud: &PointCloud<T>, record: &NormRecord) -> PointCloud<T> {
    let n = cloud.len();
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            data.push(T::of_f64(
                cloud.points.at(i, c).as_f64() * record.scale + record.center[c],
            ));
        }
    }
    PointCloud {
        points: Tensor::new(vec![n, 3], data).unwrap(),
        labels: cloud.labels.clone(),
        class: cloud.class,
    }
}

/// A uniform-point-count collection of clouds with a class vocabulary.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub clouds: Vec<PointCloud<T>>,
    pub classes: Vec<String>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(clouds: Vec<PointCloud<T>>, classes: Vec<String>) -> Result<Self> {
        if clouds.is_empty() {
            return Err(Error::contract("dataset is empty"));
        }
        let n = clouds[0].len();
        if clouds.iter().any(|c| c.len() != n) {
            return Err(Error::contract(
                "all dataset clouds must share one point count",
            ));
        }
        Ok(Dataset { clouds, classes })
    }

    pub fn points_per_cloud(&self) -> usize {
        self.clouds[0].len()
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Synthetic dataset: `clouds_per_class` normalized clouds per shape.
    /// Cloud seeds derive from `seed` so the result is reproducible.
    pub fn synthetic(
        kinds: &[ShapeKind],
        clouds_per_class: usize,
        points: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut clouds = Vec::with_capacity(kinds.len() * clouds_per_class);
        for (ci, &kind) in kinds.iter().enumerate() {
            for j in 0..clouds_per_class {
                let cloud_seed = seed
                    .wrapping_mul(0x9e3779b97f4a7c15)
                    .wrapping_add((ci * clouds_per_class + j) as u64);
                let mut cloud = sample_shape::<T>(kind, points, cloud_seed, noise_sigma)?;
                cloud.class = Some(ci as u16);
                let (normalized, _) = normalize_unit_sphere(&cloud);
                clouds.push(normalized);
            }
        }
        Dataset::new(clouds, kinds.iter().map(|k| k.name().to_string()).collect())
    }

    /// Seeded split into (train, held-out) with the given train fraction.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset<T>, Dataset<T>) {
        let mut order: Vec<usize> = (0..self.clouds.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let cut = ((self.clouds.len() as f64) * train_fraction).round() as usize;
        let cut = cut.clamp(1, self.clouds.len() - 1);
        let train = order[..cut]
            .iter()
            .map(|&i| self.clouds[i].clone())
            .collect();
        let test = order[cut..]
            .iter()
            .map(|&i| self.clouds[i].clone())
            .collect();
        (
            Dataset {
                clouds: train,
                classes: self.classes.clone(),
            },
            Dataset {
                clouds: test,
                classes: self.classes.clone(),
            },
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailPolicy {
    /// Drop the short remainder at the end of an epoch.
    Drop,
    /// Fill the last batch from the remainder plus fresh draws of the next
    /// epoch's order.
    Wrap,
}

/// Deterministic batch stream: a seeded shuffle per epoch, restartable from
/// (epoch, position) for checkpoint resume.
#[derive(Clone, Debug)]
pub struct Batcher {
    n: usize,
    batch_size: usize,
    seed: u64,
    tail: TailPolicy,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, seed: u64, tail: TailPolicy) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::config(format!(
                "batch size {batch_size} must be in 1..={n}"
            )));
        }
        let mut b = Batcher {
            n,
            batch_size,
            seed,
            tail,
            epoch: 0,
            pos: 0,
            order: Vec::new(),
        };
        b.reshuffle();
        Ok(b)
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        let mut order: Vec<usize> = (0..self.n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        self.order = order;
    }

    pub fn state(&self) -> (u64, usize) {
        (self.epoch, self.pos)
    }

    pub fn restore(&mut self, epoch: u64, pos: usize) {
        self.epoch = epoch;
        self.pos = pos.min(self.n);
        self.reshuffle();
    }

    fn advance_epoch(&mut self) {
        self.epoch += 1;
        self.pos = 0;
        self.reshuffle();
    }

    /// Indices of the next batch.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch_size);
        if matches!(self.tail, TailPolicy::Drop) && self.pos + self.batch_size > self.n {
            self.advance_epoch();
        }
        while out.len() < self.batch_size {
            if self.pos == self.n {
                self.advance_epoch();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}
