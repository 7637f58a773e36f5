//! Probabilistic-PCA motion prior. The whitened projection makes `‖m‖²` the
//! Mahalanobis distance of a window to the corpus mean inside the retained
//! subspace.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use super::window::{MotionWindow, WINDOW_DIM};
use crate::error::{Error, Result};

/// Variance floor used when whitening degenerate components.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PcaPrior {
    pub mean: Vec<f64>,
    /// Row-major `latent_dim × WINDOW_DIM`; rows are orthonormal.
    pub components: Vec<f64>,
    pub variances: Vec<f64>,
    /// Mean variance of the discarded directions.
    pub residual_variance: f64,
    /// Fraction of total corpus variance captured by each component.
    pub explained: Vec<f64>,
}

impl PcaPrior {
    pub fn latent_dim(&self) -> usize {
        self.variances.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * WINDOW_DIM..(i + 1) * WINDOW_DIM]
    }

    fn whitening(&self, i: usize) -> f64 {
        1.0 / libm::sqrt(self.variances[i].max(VARIANCE_FLOOR))
    }

    pub fn encode_mu(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        (0..self.latent_dim())
            .map(|i| dot(self.component(i), &centered) * self.whitening(i))
            .collect()
    }

    /// `∂L/∂x` given `∂L/∂m`.
    pub fn encode_mu_vjp(&self, g_m: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; WINDOW_DIM];
        for (i, gm) in g_m.iter().enumerate() {
            axpy(gm * self.whitening(i), self.component(i), &mut g);
        }
        g
    }

    pub fn decode(&self, m: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (i, mi) in m.iter().enumerate() {
            axpy(mi * libm::sqrt(self.variances[i].max(0.0)), self.component(i), &mut x);
        }
        x
    }

    pub fn explained_total(&self) -> f64 {
        self.explained.iter().sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorise the loop while
    // keeping a fixed summation order.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Fit mean and top principal components of the vectorised windows.
pub fn fit_pca_prior(corpus: &[MotionWindow], latent_dim: usize) -> Result<PcaPrior> {
    let n = corpus.len();
    if latent_dim == 0 {
        return Err(Error::invalid("latent_dim must be positive"));
    }
    if n < 2 * latent_dim {
        return Err(Error::InsufficientData { needed: 2 * latent_dim, got: n });
    }
    let mut mean = vec![0.0; WINDOW_DIM];
    for w in corpus {
        axpy(1.0 / n as f64, &w.data, &mut mean);
    }
    let x = DMatrix::<f64>::from_fn(n, WINDOW_DIM, |i, j| corpus[i].data[j] - mean[j]);
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let lmax = eig.eigenvalues[order[0]].max(0.0);
    let denom = (n - 1) as f64;
    // Below this the eigenvalue is rounding noise of the Gram product.
    let floor = 1e-24 * corpus.iter().map(|w| dot(&w.data, &w.data)).sum::<f64>();

    let mut components: Vec<f64> = Vec::with_capacity(latent_dim * WINDOW_DIM);
    let mut variances = Vec::with_capacity(latent_dim);
    let mut explained = Vec::with_capacity(latent_dim);
    for &k in order.iter().take(latent_dim) {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 1e-12 * lmax && lambda > floor) {
            break;
        }
        let v = eig.eigenvectors.column(k);
        let mut u = x.tr_mul(&v).iter().copied().collect::<Vec<f64>>();
        let norm = libm::sqrt(dot(&u, &u));
        u.iter_mut().for_each(|e| *e /= norm);
        fix_sign(&mut u);
        components.extend_from_slice(&u);
        variances.push(lambda / denom);
        explained.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    // Degenerate corpora: complete the basis with orthonormal filler directions.
    let mut e = 0;
    while variances.len() < latent_dim {
        let mut u = vec![0.0; WINDOW_DIM];
        u[e] = 1.0;
        e += 1;
        for i in 0..variances.len() {
            let c = &components[i * WINDOW_DIM..(i + 1) * WINDOW_DIM];
            let d = dot(c, &u);
            axpy(-d, c, &mut u);
        }
        let norm = libm::sqrt(dot(&u, &u));
        if norm < 1e-6 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= norm);
        components.extend_from_slice(&u);
        variances.push(0.0);
        explained.push(0.0);
    }
    let kept: f64 = variances.iter().sum();
    let total_var = total / denom;
    let residual_variance = ((total_var - kept) / (WINDOW_DIM - latent_dim) as f64).max(0.0);
    Ok(PcaPrior { mean, components, variances, residual_variance, explained })
}

fn fix_sign(u: &mut [f64]) {
    let mut imax = 0;
    for i in 1..u.len() {
        if u[i].abs() > u[imax].abs() {
            imax = i;
        }
    }
    if u[imax] < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
}
