use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectionMethod {
    /// Two-dimensional features used as-is.
    Identity2D,
    /// Top two principal components, sign-normalized.
    Pca2,
    /// Coordinates computed elsewhere (e.g. a nonlinear embedding), one per input.
    Precomputed(Vec<[f64; 2]>),
}

pub fn project(points: &[Vec<f64>], method: &ProjectionMethod) -> Result<Vec<[f64; 2]>> {
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return domain("feature vectors differ in length");
    }
    match method {
        ProjectionMethod::Identity2D => {
            if !points.is_empty() && dim != 2 {
                return domain(format!("identity projection needs 2-d features, got {dim}"));
            }
            Ok(points.iter().map(|p| [p[0], p[1]]).collect())
        }
        ProjectionMethod::Precomputed(coords) => {
            if coords.len() != points.len() {
                return domain(format!("{} precomputed coordinates for {} points", coords.len(), points.len()));
            }
            Ok(coords.clone())
        }
        ProjectionMethod::Pca2 => pca2(points, dim),
    }
}

fn pca2(points: &[Vec<f64>], dim: usize) -> Result<Vec<[f64; 2]>> {
    if points.is_empty() {
        return Ok(Vec::new());
    }
    if dim < 2 {
        return domain("PCA needs at least 2-d features");
    }
    let n = points.len();
    let mean: Vec<f64> = (0..dim).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            // largest-magnitude loading positive (first index wins ties)
            let lead = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[lead] < 0.0 { v.iter().map(|x| -x).collect() } else { v }
        })
        .collect();
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let dot = |axis: &Vec<f64>| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [dot(&axes[0]), dot(&axes[1])]
        })
        .collect())
}
