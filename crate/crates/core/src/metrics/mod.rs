//! Divergences, moment utilities, and rate-exponent fitting.

mod knn;

pub use knn::{knn_kl_estimate, KnnKlEstimate};

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{linear_fit, pairwise_sum};
use crate::oracle::GaussianLaw;
use crate::sampler::SampleBatch;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("covariance is not symmetric positive definite")]
    NonSpd,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("nonpositive value at index {0}; subtract the floor before fitting")]
    NonPositiveValue(usize),
    #[error("sample covariance is degenerate (rank below {0})")]
    DegenerateCovariance(usize),
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("neighbor count must be >= 1")]
    BadNeighborCount,
}

/// `KL(P || Q)` between Gaussians, in nats:
/// `(tr(Sq^{-1} Sp) + (mq - mp)^T Sq^{-1} (mq - mp) - d + ln det Sq - ln det Sp) / 2`.
pub fn kl_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64, MetricsError> {
    let d = p.dim();
    if q.dim() != d {
        return Err(MetricsError::DimensionMismatch(d, q.dim()));
    }
    let chol_q = Cholesky::new(q.cov()).ok_or(MetricsError::NonSpd)?;
    let chol_p = Cholesky::new(p.cov()).ok_or(MetricsError::NonSpd)?;
    let lq = chol_q.l();
    // tr(Sq^{-1} Sp) = |Lq^{-1} Lp|_F^2
    let mut lp = chol_p.l();
    lq.solve_lower_triangular_mut(&mut lp);
    let trace_term = lp.norm_squared();
    let mut diff = q.mean() - p.mean();
    lq.solve_lower_triangular_mut(&mut diff);
    let quad = diff.norm_squared();
    let logdet_q: f64 = lq.diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let logdet_p: f64 = chol_p.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(0.5 * (trace_term + quad - d as f64 + logdet_q - logdet_p))
}

/// KL between the noising transitions started at `x` and `x_hat`, which
/// share the covariance `(1 - e^{-2h}) I`:
/// `e^{-2h} |x - x_hat|^2 / (2 (1 - e^{-2h}))`.
pub fn kl_conditional_same_cov(
    x: &DVector<f64>,
    x_hat: &DVector<f64>,
    h: f64,
) -> Result<f64, MetricsError> {
    if h <= 0.0 {
        return Err(MetricsError::NonPositiveStep(h));
    }
    if x.len() != x_hat.len() {
        return Err(MetricsError::DimensionMismatch(x.len(), x_hat.len()));
    }
    let shrink = (-2.0 * h).exp();
    Ok(shrink * (x - x_hat).norm_squared() / (2.0 * -(-2.0 * h).exp_m1()))
}

fn spd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = m.nrows();
    let diag = DVector::from_fn(d, |i, _| eig.eigenvalues[i].max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&diag) * eig.eigenvectors.transpose()
}

/// 2-Wasserstein distance between Gaussians (Bures form).
pub fn w2_gaussian(p: &GaussianLaw, q: &GaussianLaw) -> Result<f64, MetricsError> {
    let d = p.dim();
    if q.dim() != d {
        return Err(MetricsError::DimensionMismatch(d, q.dim()));
    }
    Cholesky::new(p.cov()).ok_or(MetricsError::NonSpd)?;
    Cholesky::new(q.cov()).ok_or(MetricsError::NonSpd)?;
    let sq = spd_sqrt(&q.cov());
    let inner = spd_sqrt(&(&sq * p.cov() * &sq));
    let bures = (p.cov() + q.cov() - inner * 2.0).trace().max(0.0);
    Ok(((p.mean() - q.mean()).norm_squared() + bures).sqrt())
}

/// Sample mean and unbiased sample covariance of a batch.
pub fn empirical_gaussian_fit(batch: &SampleBatch) -> Result<GaussianLaw, MetricsError> {
    let n = batch.n_samples();
    let d = batch.dim();
    if n < d + 2 {
        return Err(MetricsError::TooFewPoints { got: n, need: d + 2 });
    }
    let mut mean = DVector::zeros(d);
    for j in 0..d {
        let col: Vec<f64> = batch.rows().map(|r| r[j]).collect();
        mean[j] = pairwise_sum(&col) / n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in a..d {
            let prods: Vec<f64> = batch
                .rows()
                .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                .collect();
            let v = pairwise_sum(&prods) / (n as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    GaussianLaw::new(mean, cov).map_err(|_| MetricsError::DegenerateCovariance(d))
}

/// One sweep observation: iteration count against a nonnegative value.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RatePoint {
    pub iterations: usize,
    pub value: f64,
    pub meta: RateMeta,
}

/// Context carried along with each rate point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateMeta {
    pub dim: usize,
    pub c: f64,
    pub eps_score: f64,
    pub seed: u64,
}

/// Fitted log-log line.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares of `ln value` on `ln K`. Values must be strictly positive;
/// subtract any floor first.
pub fn fit_rate_exponent(points: &[RatePoint]) -> Result<RateFit, MetricsError> {
    if points.len() < 3 {
        return Err(MetricsError::TooFewPoints {
            got: points.len(),
            need: 3,
        });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        if !(p.value > 0.0) || !p.value.is_finite() {
            return Err(MetricsError::NonPositiveValue(i));
        }
        xs.push((p.iterations as f64).ln());
        ys.push(p.value.ln());
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Rate-fit CSV export: `K,value,floor,corrected,ln_K,ln_corrected`.
pub fn write_rate_fit_csv<W: Write>(
    mut w: W,
    points: &[RatePoint],
    floor: f64,
) -> std::io::Result<()> {
    writeln!(w, "K,value,floor,corrected,ln_K,ln_corrected")?;
    for p in points {
        let corrected = p.value - floor;
        let ln_corr = if corrected > 0.0 {
            format!("{}", corrected.ln())
        } else {
            "nan".to_string()
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.iterations,
            p.value,
            floor,
            corrected,
            (p.iterations as f64).ln(),
            ln_corr
        )?;
    }
    Ok(())
}
