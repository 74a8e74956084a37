//! Set-level metrics between a reference collection and a generated
//! collection of clouds: occupancy-grid JSD, minimum-matching MMD, and
//! nearest-neighbor coverage.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::distance::{chamfer, emd_approx, SINKHORN_ITERATIONS};

/// Ground distance used by the set metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SetDistance {
    Chamfer,
    Emd,
}

impl SetDistance {
    pub fn name(self) -> &'static str {
        match self {
            SetDistance::Chamfer => "cd",
            SetDistance::Emd => "emd",
        }
    }
}

pub const JSD_DEFAULT_RESOLUTION: usize = 28;
const JSD_SMOOTHING: f64 = 1e-12;

/// Shared worker pool for pairwise-distance matrices, sized by the
/// TREEGAN_THREADS environment variable when set. Elements are independent,
/// so results do not depend on the worker count.
fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var("TREEGAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or_else(num_threads_default);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("worker pool")
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1)
}

fn pair_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, d: SetDistance) -> Result<f64> {
    match d {
        SetDistance::Chamfer => chamfer(a, b),
        SetDistance::Emd => emd_approx(a, b, SINKHORN_ITERATIONS),
    }
}

/// All pairwise distances rows × cols, computed data-parallel.
pub fn distance_matrix<T: Scalar>(
    rows: &[Tensor<T>],
    cols: &[Tensor<T>],
    d: SetDistance,
) -> Result<Vec<Vec<f64>>> {
    let pool = thread_pool();
    pool.install(|| {
        rows.par_iter()
            .map(|r| {
                cols.iter()
                    .map(|c| pair_distance(r, c, d))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect()
    })
}

/// Minimum matching distance: mean over reference clouds of the distance to
/// the closest generated cloud.
pub fn mmd<T: Scalar>(
    reference: &[Tensor<T>],
    generated: &[Tensor<T>],
    d: SetDistance,
) -> Result<f64> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::contract("mmd needs non-empty sets"));
    }
    let matrix = distance_matrix(reference, generated, d)?;
    let mut total = 0.0;
    for row in matrix {
        total += row.into_iter().fold(f64::INFINITY, f64::min);
    }
    Ok(total / reference.len() as f64)
}

/// Coverage: the fraction of reference clouds that are the nearest neighbor
/// of at least one generated cloud. Argmin ties break to the lowest index.
pub fn coverage<T: Scalar>(
    reference: &[Tensor<T>],
    generated: &[Tensor<T>],
    d: SetDistance,
) -> Result<f64> {
    if reference.is_empty() || generated.is_empty() {
        return Err(Error::contract("coverage needs non-empty sets"));
    }
    let matrix = distance_matrix(generated, reference, d)?;
    let mut hit = vec![false; reference.len()];
    for row in matrix {
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for (j, v) in row.into_iter().enumerate() {
            if v < best {
                best = v;
                best_idx = j;
            }
        }
        hit[best_idx] = true;
    }
    Ok(hit.iter().filter(|&&h| h).count() as f64 / reference.len() as f64)
}

fn occupancy_histogram<T: Scalar>(set: &[Tensor<T>], resolution: usize) -> Vec<f64> {
    let mut hist = vec![0.0f64; resolution * resolution * resolution];
    for cloud in set {
        for i in 0..cloud.rows() {
            let mut idx = 0usize;
            for c in 0..3 {
                let v = cloud.at(i, c).as_f64();
                // Clouds are unit-sphere normalized; clamp stray values onto
                // the boundary bins.
                let t = ((v + 1.0) / 2.0 * resolution as f64).floor();
                let bin = (t.max(0.0) as usize).min(resolution - 1);
                idx = idx * resolution + bin;
            }
            hist[idx] += 1.0;
        }
    }
    hist
}

fn normalize_with_smoothing(hist: &mut [f64]) {
    for v in hist.iter_mut() {
        *v += JSD_SMOOTHING;
    }
    let total: f64 = hist.iter().sum();
    for v in hist.iter_mut() {
        *v /= total;
    }
}

/// Jensen-Shannon divergence (nats) between the pooled voxel-occupancy
/// distributions of two sets over the [-1,1]³ cube. Bounded by ln 2.
pub fn jsd_grid<T: Scalar>(
    set_a: &[Tensor<T>],
    set_b: &[Tensor<T>],
    resolution: usize,
) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::contract("jsd needs non-empty sets"));
    }
    if resolution == 0 {
        return Err(Error::config("jsd grid resolution must be ≥ 1"));
    }
    let mut p = occupancy_histogram(set_a, resolution);
    let mut q = occupancy_histogram(set_b, resolution);
    normalize_with_smoothing(&mut p);
    normalize_with_smoothing(&mut q);
    let mut acc = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        let m = 0.5 * (pi + qi);
        acc += 0.5 * pi * (pi / m).ln() + 0.5 * qi * (qi / m).ln();
    }
    Ok(acc.max(0.0))
}

/// Named scalar results with the identifiers of the two compared sets and
/// an echo of the evaluation configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub reference_id: String,
    pub generated_id: String,
    pub entries: Vec<(String, f64)>,
    pub config_echo: Vec<(String, String)>,
}

impl MetricReport {
    pub fn new(reference_id: impl Into<String>, generated_id: impl Into<String>) -> Self {
        MetricReport {
            reference_id: reference_id.into(),
            generated_id: generated_id.into(),
            entries: Vec::new(),
            config_echo: Vec::new(),
        }
    }

    /// Record one metric; each name may appear exactly once.
    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        let name = name.into();
        assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate metric '{name}'"
        );
        self.entries.push((name, value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn echo(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.config_echo.push((key.into(), value.into()));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value,reference,generated\n");
        for (name, value) in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                name, value, self.reference_id, self.generated_id
            ));
        }
        out
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "reference: {}", self.reference_id)?;
        writeln!(f, "generated: {}", self.generated_id)?;
        let width = self
            .entries
            .iter()
            .map(|(n, _)| n.len())
            .max()
            .unwrap_or(6)
            .max(6);
        writeln!(f, "{:width$}  value", "metric")?;
        for (name, value) in &self.entries {
            writeln!(f, "{name:width$}  {value:.6}")?;
        }
        for (k, v) in &self.config_echo {
            writeln!(f, "# {k} = {v}")?;
        }
        Ok(())
    }
}
