//! Evaluation: Chamfer and approximate Earth Mover's distances, occupancy
//! JSD, set-level MMD and coverage, feature extraction, Gaussian statistics,
//! and the Fréchet point cloud distance.

mod distance;
mod extractor;
mod fpd;
mod sets;

pub use distance::{
    chamfer, emd_approx, SINKHORN_EPS_END, SINKHORN_EPS_START, SINKHORN_ITERATIONS,
};
pub use extractor::{extract_stats, train_feature_extractor, ExtractorConfig, FeatureExtractor};
pub use fpd::{fpd, psd_sqrt, read_fpd_stats, write_fpd_stats, GaussianStats};
pub use sets::{
    coverage, distance_matrix, jsd_grid, mmd, MetricReport, SetDistance, JSD_DEFAULT_RESOLUTION,
};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Import path for externally computed per-cloud features: a headerless CSV
/// with one row per cloud, one column per feature dimension.
pub fn read_features_csv(path: &std::path::Path) -> Result<Tensor<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("bad feature value '{}'", f.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    msg: format!("expected {} columns, got {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(format!(
            "{}: no feature rows",
            path.display()
        )));
    }
    Ok(Tensor::from_rows(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_csv_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, "1.0,2.0\n3.5,-0.25\n").unwrap();
        let t = read_features_csv(&path).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.5, -0.25]);

        std::fs::write(&path, "1.0,2.0\n3.5\n").unwrap();
        let err = read_features_csv(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
