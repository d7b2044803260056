//! Local surface variation from neighbourhood covariance eigenvalues.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::{k_nearest, PointCloud};
use crate::{Error, Result};

pub const DEFAULT_CURVATURE_K: usize = 10;

/// Smallest eigenvalue over trace of the covariance of `neighbours`, in `[0, 1/3]`.
fn surface_variation(points: &[[f64; 3]], neighbours: &[usize]) -> f64 {
    let n = neighbours.len() as f64;
    let mut mean = Vector3::zeros();
    for &j in neighbours {
        mean += Vector3::from(points[j]);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for &j in neighbours {
        let d = Vector3::from(points[j]) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let trace = cov.trace();
    // Coincident neighbours: the mean can carry rounding residue, so compare
    // the spread against the coordinate magnitude rather than exact zero.
    let scale = 1.0 + mean.amax();
    if trace <= (1e-12 * scale).powi(2) {
        return 0.0;
    }
    let eig = SymmetricEigen::new(cov).eigenvalues;
    let smallest = eig.min().max(0.0);
    (smallest / trace).clamp(0.0, 1.0 / 3.0)
}

/// Raw (un-normalized) curvature of every point from its `k` nearest
/// neighbours, self excluded.
pub fn raw_curvature(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    if k < 3 {
        return Err(Error::Config(format!("curvature needs k >= 3, got {k}")));
    }
    if cloud.len() < k + 1 {
        return Err(Error::Degenerate(format!(
            "curvature with k={k} needs at least {} points, cloud has {}",
            k + 1,
            cloud.len()
        )));
    }
    let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.position()).collect();
    let neighbours = k_nearest(&points, k);
    Ok(neighbours
        .par_iter()
        .map(|nb| surface_variation(&points, nb))
        .collect())
}

/// Min-max scales values into `[0, 1]`; a constant input maps to all zeros.
pub fn normalize_per_frame(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Returns a copy of `cloud` whose `curvature` field holds the per-frame
/// min-max normalized curvature.
pub fn estimate_curvature(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    let raw = raw_curvature(cloud, k)?;
    let mut out = cloud.clone();
    for (p, c) in out.points.iter_mut().zip(normalize_per_frame(&raw)) {
        p.curvature = c;
    }
    Ok(out)
}
