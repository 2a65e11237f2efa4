use std::sync::OnceLock;

use super::eigen::sym_eigenvalues;
use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

/// Squared Euclidean distances between the rows of a flat row-major sample
/// buffer (`count` rows of length `dim`). The result is exactly symmetric with
/// a zero diagonal.
pub fn pairwise_sq_distances(data: &[f64], count: usize, dim: usize) -> Result<DenseMatrix> {
    if count == 0 {
        return Err(Error::invalid("no samples"));
    }
    if data.len() != count * dim {
        return Err(Error::invalid(format!(
            "sample buffer holds {} values, expected {count}x{dim}",
            data.len()
        )));
    }
    let mut d = vec![0.0; count * count];
    for i in 0..count {
        let xi = &data[i * dim..(i + 1) * dim];
        for j in i + 1..count {
            let xj = &data[j * dim..(j + 1) * dim];
            let dist: f64 = xi
                .iter()
                .zip(xj)
                .map(|(a, b)| {
                    let t = a - b;
                    t * t
                })
                .sum();
            d[i * count + j] = dist;
            d[j * count + i] = dist;
        }
    }
    Ok(DenseMatrix::from_raw(count, count, d))
}

/// `exp(-d / sigma^2)` applied to a squared-distance matrix, with the
/// diagonal pinned to exactly 1.
pub fn gram_from_sq_distances(sq: &DenseMatrix, sigma: f64) -> Result<DenseMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    if !sq.is_square() {
        return Err(Error::invalid("distance matrix must be square"));
    }
    let n = sq.rows();
    let inv = 1.0 / (sigma * sigma);
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        g[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = (-sq.get(i, j) * inv).exp();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    Ok(DenseMatrix::from_raw(n, n, g))
}

/// Gaussian Gram matrix `G_ij = exp(-||x_i - x_j||^2 / sigma^2)`.
///
/// The exponent carries no factor of two. Entries of very distant pairs may
/// underflow to zero.
pub fn gaussian_gram<S: AsRef<[f64]>>(samples: &[S], sigma: f64) -> Result<DenseMatrix> {
    if samples.is_empty() {
        return Err(Error::invalid("gaussian_gram needs at least one sample"));
    }
    let dim = samples[0].as_ref().len();
    if samples.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::invalid("samples have differing dimensions"));
    }
    if samples
        .iter()
        .any(|s| s.as_ref().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let flat: Vec<f64> = samples
        .iter()
        .flat_map(|s| s.as_ref().iter().copied())
        .collect();
    gaussian_gram_flat(&flat, samples.len(), dim, sigma)
}

/// [`gaussian_gram`] over a flat row-major buffer.
pub fn gaussian_gram_flat(
    data: &[f64],
    count: usize,
    dim: usize,
    sigma: f64,
) -> Result<DenseMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    let sq = pairwise_sq_distances(data, count, dim)?;
    gram_from_sq_distances(&sq, sigma)
}

/// `N_ij = G_ij / (s * sqrt(G_ii G_jj))`; unit trace.
pub fn normalize_gram(g: &DenseMatrix) -> Result<DenseMatrix> {
    if !g.is_square() || g.rows() == 0 {
        return Err(Error::invalid("Gram matrix must be square and non-empty"));
    }
    let n = g.rows();
    let diag = g.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::NumericDomain(format!(
            "Gram diagonal entry {i} is {} (must be positive)",
            diag[i]
        )));
    }
    let roots: Vec<f64> = diag.iter().map(|d| d.sqrt()).collect();
    let s = n as f64;
    let inv_s = 1.0 / s;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = inv_s;
        for j in i + 1..n {
            let v = g.get(i, j) / (roots[i] * roots[j]) * inv_s;
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(DenseMatrix::from_raw(n, n, out))
}

/// Raw Gram matrix, its normalized form, and the lazily computed spectrum of
/// the normalized form (descending).
#[derive(Debug)]
pub struct GramPair {
    g: DenseMatrix,
    n: DenseMatrix,
    eigenvalues: OnceLock<Vec<f64>>,
}

impl GramPair {
    pub fn from_gram(g: DenseMatrix) -> Result<Self> {
        let n = normalize_gram(&g)?;
        Ok(Self {
            g,
            n,
            eigenvalues: OnceLock::new(),
        })
    }

    pub fn from_samples<S: AsRef<[f64]>>(samples: &[S], sigma: f64) -> Result<Self> {
        Self::from_gram(gaussian_gram(samples, sigma)?)
    }

    pub fn gram(&self) -> &DenseMatrix {
        &self.g
    }

    pub fn normalized(&self) -> &DenseMatrix {
        &self.n
    }

    pub fn eigenvalues(&self) -> Result<&[f64]> {
        if let Some(v) = self.eigenvalues.get() {
            return Ok(v);
        }
        let values = sym_eigenvalues(&self.n)?;
        Ok(self.eigenvalues.get_or_init(|| values))
    }
}
