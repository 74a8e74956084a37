//! Fréchet point cloud distance: the 2-Wasserstein distance between
//! Gaussians fitted to extracted features,
//! ‖m_P − m_Q‖² + Tr(Σ_P + Σ_Q − 2(Σ_P Σ_Q)^{1/2}),
//! with the cross term computed as sqrt(sqrt(Σ_P)·Σ_Q·sqrt(Σ_P)) to stay on
//! symmetric-PSD ground.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wire;

const SYMMETRY_TOL: f64 = 1e-8;
const EIGEN_CLAMP: f64 = 1e-8;
const TOTAL_CLAMP: f64 = 1e-6;

/// Mean and covariance of a feature sample. Always f64, matching the stats
/// file format.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Tensor<f64>,
    pub sample_count: usize,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fit from a features matrix [N × F] with the unbiased (N−1) estimator.
    pub fn fit(features: &Tensor<f64>) -> Result<Self> {
        let (n, f) = (features.rows(), features.cols());
        if n < 2 {
            return Err(Error::contract(
                "Gaussian statistics need at least 2 samples",
            ));
        }
        let mut mean = vec![0.0; f];
        for i in 0..n {
            for j in 0..f {
                mean[j] += features.at(i, j);
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; f * f];
        for i in 0..n {
            for a in 0..f {
                let da = features.at(i, a) - mean[a];
                for b in a..f {
                    cov[a * f + b] += da * (features.at(i, b) - mean[b]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for a in 0..f {
            for b in a..f {
                let v = cov[a * f + b] / denom;
                cov[a * f + b] = v;
                cov[b * f + a] = v; // symmetric by construction
            }
        }
        Ok(GaussianStats {
            mean,
            cov: Tensor::new(vec![f, f], cov)?,
            sample_count: n,
        })
    }
}

fn max_abs(m: &Tensor<f64>) -> f64 {
    m.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Symmetric PSD square root via eigendecomposition. Eigenvalues down to
/// −1e-8 (relative) are treated as zero; anything more negative is rejected.
pub fn psd_sqrt(m: &Tensor<f64>) -> Result<Tensor<f64>> {
    let f = m.rows();
    if m.cols() != f {
        return Err(Error::contract(format!(
            "psd_sqrt wants a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = max_abs(m).max(1.0);
    for i in 0..f {
        for j in i + 1..f {
            if (m.at(i, j) - m.at(j, i)).abs() > SYMMETRY_TOL * scale {
                return Err(Error::contract(format!(
                    "psd_sqrt input is not symmetric at ({i},{j}): {} vs {}",
                    m.at(i, j),
                    m.at(j, i)
                )));
            }
        }
    }
    let dm = DMatrix::from_row_slice(f, f, m.data());
    let eig = dm.symmetric_eigen();
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -EIGEN_CLAMP * scale {
            return Err(Error::contract(format!(
                "psd_sqrt input has eigenvalue {v}, well below zero"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    let d = DMatrix::from_diagonal(&vals);
    let root = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    let mut data = Vec::with_capacity(f * f);
    for i in 0..f {
        for j in 0..f {
            data.push(root[(i, j)]);
        }
    }
    Tensor::new(vec![f, f], data)
}

fn trace(m: &Tensor<f64>) -> f64 {
    (0..m.rows()).map(|i| m.at(i, i)).sum()
}

/// The Fréchet distance between two fitted Gaussians. Tiny negative totals
/// from floating-point noise are clamped to zero.
pub fn fpd(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::ShapeMismatch {
            op: "fpd",
            lhs: vec![p.dim()],
            rhs: vec![q.dim()],
        });
    }
    let mut mean_term = 0.0;
    for (a, b) in p.mean.iter().zip(&q.mean) {
        let d = a - b;
        mean_term += d * d;
    }
    let sqrt_p = psd_sqrt(&p.cov)?;
    let inner = sqrt_p.matmul(&q.cov)?.matmul(&sqrt_p)?;
    // Symmetrize away the matmul round-off before the second root.
    let inner_t = inner.transpose();
    let inner = inner.add(&inner_t)?.scale(0.5);
    let cross = psd_sqrt(&inner)?;
    let total = mean_term + trace(&p.cov) + trace(&q.cov) - 2.0 * trace(&cross);
    if total < -TOTAL_CLAMP {
        return Err(Error::contract(format!(
            "fpd cross term failed: total {total} is negative beyond tolerance"
        )));
    }
    Ok(total.max(0.0))
}

const FPDS_MAGIC: [u8; 4] = *b"FPDS";
const FPDS_VERSION: u16 = 1;

/// Write stats: magic "FPDS", version, feature dim, sample count, mean,
/// covariance (little-endian f64), CRC32.
pub fn write_fpd_stats(path: &Path, stats: &GaussianStats) -> Result<()> {
    let f = stats.dim();
    let mut buf = Vec::with_capacity(4 + 2 + 4 + 8 + (f + f * f) * 8 + 4);
    buf.extend_from_slice(&FPDS_MAGIC);
    wire::put_u16(&mut buf, FPDS_VERSION);
    wire::put_u32(&mut buf, f as u32);
    wire::put_u64(&mut buf, stats.sample_count as u64);
    for &v in &stats.mean {
        wire::put_f64(&mut buf, v);
    }
    for &v in stats.cov.data() {
        wire::put_f64(&mut buf, v);
    }
    wire::seal(&mut buf);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_fpd_stats(path: &Path) -> Result<GaussianStats> {
    let bytes = std::fs::read(path)?;
    let what = format!("FPDS {}", path.display());
    let body = wire::unseal(&bytes, &what)?;
    let mut c = wire::Cursor::new(body, &what);
    c.expect_magic(&FPDS_MAGIC)?;
    let version = c.u16()?;
    if version != FPDS_VERSION {
        return Err(Error::format(format!(
            "{what}: unsupported version {version}"
        )));
    }
    let f = c.u32()? as usize;
    let count = c.u64()? as usize;
    let mut mean = Vec::with_capacity(f);
    for _ in 0..f {
        mean.push(c.f64()?);
    }
    let mut cov = Vec::with_capacity(f * f);
    for _ in 0..f * f {
        cov.push(c.f64()?);
    }
    if !c.done() {
        return Err(Error::format(format!("{what}: trailing bytes")));
    }
    Ok(GaussianStats {
        mean,
        cov: Tensor::new(vec![f, f], cov)?,
        sample_count: count,
    })
}
