//! Online Gaussian mixture with exponential forgetting, used to score how
//! surprising each new feature vector is.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use super::KeyMomentError;

pub const COVARIANCE_FLOOR: f64 = 1e-6;
pub const DENSITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmState {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    pub aux_means: Vec<DVector<f64>>,
    pub aux_covariances: Vec<DMatrix<f64>>,
}

impl GmmState {
    /// Equal weights, identity covariances and the given means; auxiliary
    /// statistics are set consistently (`μ̃ = πμ`, `Σ̃ = π(Σ + μμᵀ)`).
    pub fn with_means(means: Vec<DVector<f64>>, alpha: f64) -> Self {
        let k = means.len();
        let m = means.first().map_or(0, |v| v.len());
        let pi = 1.0 / k as f64;
        let covariances = vec![DMatrix::identity(m, m); k];
        let aux_means = means.iter().map(|mu| mu * pi).collect();
        let aux_covariances = means
            .iter()
            .zip(&covariances)
            .map(|(mu, s)| (s + mu * mu.transpose()) * pi)
            .collect();
        Self {
            alpha,
            weights: vec![pi; k],
            means,
            covariances,
            aux_means,
            aux_covariances,
        }
    }

    /// Means are the first `k` distinct samples; if the stream has fewer,
    /// the remainder are jittered copies of the first sample.
    pub fn initialize(samples: &[Vec<f64>], k: usize, alpha: f64) -> Result<Self, KeyMomentError> {
        let first = samples.first().ok_or(KeyMomentError::TooFewWindows { needed: k, found: 0 })?;
        let mut means: Vec<DVector<f64>> = Vec::with_capacity(k);
        for s in samples {
            if means.len() == k {
                break;
            }
            if !means.iter().any(|m| m.iter().zip(s).all(|(a, b)| a == b)) {
                means.push(DVector::from_column_slice(s));
            }
        }
        let mut j = 1.0;
        while means.len() < k {
            means.push(DVector::from_iterator(first.len(), first.iter().map(|v| v + 1e-3 * j)));
            j += 1.0;
        }
        Ok(Self::with_means(means, alpha))
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    fn check(&self, y: &[f64]) -> Result<(), KeyMomentError> {
        if y.len() == self.dim() {
            Ok(())
        } else {
            Err(KeyMomentError::Dimension {
                expected: self.dim(),
                found: y.len(),
            })
        }
    }

    /// `ln π_i + ln N(y | μ_i, Σ_i)` for every component.
    fn log_joint(&self, y: &DVector<f64>) -> Vec<f64> {
        (0..self.k())
            .map(|i| self.weights[i].ln() + log_normal(y, &self.means[i], &self.covariances[i]))
            .collect()
    }
}

/// Log density of a multivariate normal. Falls back to an eigen
/// decomposition with clamped eigenvalues if Cholesky fails.
pub fn log_normal(y: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let m = y.len() as f64;
    let diff = y - mu;
    let (logdet, maha) = match Cholesky::new(sigma.clone()) {
        Some(ch) => {
            let l = ch.l();
            let logdet = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let z = ch.l().solve_lower_triangular(&diff).expect("cholesky factor is invertible");
            (logdet, z.norm_squared())
        }
        None => {
            let eig = SymmetricEigen::new(sigma.clone());
            let mut logdet = 0.0;
            let mut maha = 0.0;
            for (j, &ev) in eig.eigenvalues.iter().enumerate() {
                let ev = ev.max(COVARIANCE_FLOOR);
                logdet += ev.ln();
                let proj = eig.eigenvectors.column(j).dot(&diff);
                maha += proj * proj / ev;
            }
            (logdet, maha)
        }
    };
    -0.5 * (m * std::f64::consts::TAU.ln() + logdet + maha)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Anomaly score `s = -ln Σ π_i N(y | μ_i, Σ_i)`, density floored at 1e-300.
pub fn gmm_score(state: &GmmState, y: &[f64]) -> Result<f64, KeyMomentError> {
    state.check(y)?;
    let lj = state.log_joint(&DVector::from_column_slice(y));
    Ok(-log_sum_exp(&lj).max(DENSITY_FLOOR.ln()))
}

/// Component responsibilities for `y`.
pub fn responsibilities(state: &GmmState, y: &[f64]) -> Result<Vec<f64>, KeyMomentError> {
    state.check(y)?;
    let lj = state.log_joint(&DVector::from_column_slice(y));
    let total = log_sum_exp(&lj);
    if !total.is_finite() {
        // Every component underflowed; fall back to the prior weights.
        return Ok(state.weights.clone());
    }
    Ok(lj.iter().map(|l| (l - total).exp()).collect())
}

/// One step of the forgetting-factor recursion: responsibilities, weights,
/// auxiliary mean, mean, auxiliary covariance, covariance (then `+ 1e-6 I`).
pub fn gmm_update(state: &GmmState, y: &[f64]) -> Result<GmmState, KeyMomentError> {
    let lambda = responsibilities(state, y)?;
    let yv = DVector::from_column_slice(y);
    let yy = &yv * yv.transpose();
    let a = state.alpha;
    let mut next = state.clone();
    for i in 0..state.k() {
        let pi = (1.0 - a) * state.weights[i] + a * lambda[i];
        let aux_mu = &state.aux_means[i] * (1.0 - a) + &yv * (a * lambda[i]);
        let aux_sigma = &state.aux_covariances[i] * (1.0 - a) + &yy * (a * lambda[i]);
        next.weights[i] = pi;
        if pi > f64::MIN_POSITIVE {
            let mu = &aux_mu / pi;
            let mut sigma = &aux_sigma / pi - &mu * mu.transpose();
            sigma = (&sigma + sigma.transpose()) * 0.5;
            for d in 0..sigma.nrows() {
                sigma[(d, d)] += COVARIANCE_FLOOR;
            }
            next.means[i] = mu;
            next.covariances[i] = sigma;
        }
        next.aux_means[i] = aux_mu;
        next.aux_covariances[i] = aux_sigma;
    }
    Ok(next)
}
