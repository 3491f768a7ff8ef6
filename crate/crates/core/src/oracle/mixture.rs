//! Gaussian mixtures, their forward marginals, and exact score evaluation.
//!
//! For a mixture `q(x) = sum_i w_i N(x; mu_i, S_i)` with responsibilities
//! `r_i(x)` and per-component affine scores `g_i(x) = -S_i^{-1}(x - mu_i)`:
//!
//! ```text
//! score     s(x)  = sum_i r_i g_i
//! jacobian  Ds(x) = sum_i r_i (-S_i^{-1} + g_i g_i^T) - s s^T
//! laplacian (per coordinate)
//!   Lap s(x) = sum_i r_i [ -2 S_i^{-1}(g_i - s)
//!                          + (|g_i - s|^2 - tr S_i^{-1} - tr Ds) g_i ]
//! ```
//!
//! Responsibilities are computed with max-shifted log-sum-exp so scores stay
//! accurate far in the tails, where naive density ratios underflow.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{OracleError, ScoreDomain, ScoreField};
use crate::rng::standard_normal_vector;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A finite Gaussian mixture with strictly positive-definite covariances.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    // lower Cholesky factors, kept for sampling
    factors: Vec<DMatrix<f64>>,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self, OracleError> {
        if weights.is_empty() || means.len() != weights.len() || covariances.len() != weights.len()
        {
            return Err(OracleError::Empty);
        }
        let d = means[0].len();
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(OracleError::BadWeights(sum));
        }
        let mut factors = Vec::with_capacity(covariances.len());
        for (i, (mean, cov)) in means.iter().zip(&covariances).enumerate() {
            if mean.len() != d || cov.nrows() != d || cov.ncols() != d {
                return Err(OracleError::DimensionMismatch(mean.len(), d));
            }
            let asym = (cov - cov.transpose()).norm();
            if asym > 1e-9 * cov.norm().max(1.0) {
                return Err(OracleError::NonSpdCovariance(i));
            }
            let chol = Cholesky::new(cov.clone()).ok_or(OracleError::NonSpdCovariance(i))?;
            factors.push(chol.l());
        }
        Ok(Self {
            weights,
            means,
            covariances,
            factors,
        })
    }

    /// Single Gaussian as a one-component mixture.
    pub fn single(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, OracleError> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    /// The standard normal in dimension `d`.
    pub fn standard_normal(d: usize) -> Self {
        Self::single(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// `m_2 = sum_i w_i (|mu_i|^2 + tr S_i)`.
    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.covariances))
            .map(|(w, (m, c))| w * (m.norm_squared() + c.trace()))
            .sum()
    }

    /// Draw one point: categorical component, then its Gaussian.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let i = self.sample_component(rng);
        let eta = standard_normal_vector(rng, self.dim());
        &self.means[i] + &self.factors[i] * eta
    }

    fn sample_component(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

/// Forward marginal `p_t`: components `N(e^{-t} mu_i, e^{-2t} S_i + (1 - e^{-2t}) I)`.
pub fn mixture_marginal(data: &GaussianMixture, t: f64) -> GaussianMixture {
    assert!(t >= 0.0);
    let d = data.dim();
    let s2 = (-2.0 * t).exp();
    let noise = -(-2.0 * t).exp_m1();
    let eye = DMatrix::<f64>::identity(d, d);
    let means = data
        .means
        .iter()
        .map(|m| m * (-t).exp())
        .collect::<Vec<_>>();
    let covs = data
        .covariances
        .iter()
        .map(|c| c * s2 + &eye * noise)
        .collect::<Vec<_>>();
    GaussianMixture::new(data.weights.clone(), means, covs)
        .expect("marginal of a valid mixture is valid")
}

/// Rescaled marginal `q_t`: components `N(mu_i, S_i + (e^{2t} - 1) I)`.
pub fn mixture_z_marginal(data: &GaussianMixture, t: f64) -> GaussianMixture {
    assert!(t >= 0.0);
    let d = data.dim();
    let grow = (2.0 * t).exp_m1();
    let eye = DMatrix::<f64>::identity(d, d);
    let covs = data
        .covariances
        .iter()
        .map(|c| c + &eye * grow)
        .collect::<Vec<_>>();
    GaussianMixture::new(data.weights.clone(), data.means.clone(), covs)
        .expect("rescaled marginal of a valid mixture is valid")
}

struct PreparedComponent {
    mean: DVector<f64>,
    inv: DMatrix<f64>,
    inv_trace: f64,
    log_norm: f64,
}

/// A mixture with its component inverses and normalizers precomputed, ready
/// for repeated density/score/derivative evaluation at one fixed time.
pub struct PreparedMixture {
    dim: usize,
    log_weights: Vec<f64>,
    comps: Vec<PreparedComponent>,
}

struct Responsibilities {
    r: Vec<f64>,
    g: Vec<DVector<f64>>,
    log_density: f64,
}

impl PreparedMixture {
    pub fn new(mixture: &GaussianMixture) -> Result<Self, OracleError> {
        let d = mixture.dim();
        let mut comps = Vec::with_capacity(mixture.n_components());
        for (i, (mean, cov)) in mixture.means.iter().zip(&mixture.covariances).enumerate() {
            let chol: Cholesky<f64, Dyn> =
                Cholesky::new(cov.clone()).ok_or(OracleError::NonSpdCovariance(i))?;
            let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            let inv = chol.inverse();
            comps.push(PreparedComponent {
                mean: mean.clone(),
                inv_trace: inv.trace(),
                inv,
                log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
            });
        }
        let log_weights = mixture
            .weights
            .iter()
            .map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            dim: d,
            log_weights,
            comps,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn responsibilities(&self, x: &DVector<f64>) -> Responsibilities {
        let n = self.comps.len();
        let mut logs = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for (lw, comp) in self.log_weights.iter().zip(&self.comps) {
            let centered = x - &comp.mean;
            let gi = &comp.inv * &centered * -1.0;
            // -(1/2)(x-mu)^T S^{-1}(x-mu) = (1/2)(x-mu)^T g_i
            let quad = 0.5 * centered.dot(&gi);
            logs.push(lw + comp.log_norm + quad);
            g.push(gi);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = r.iter().sum();
        for ri in &mut r {
            *ri /= total;
        }
        Responsibilities {
            r,
            g,
            log_density: max + total.ln(),
        }
    }

    pub fn log_density(&self, x: &DVector<f64>) -> f64 {
        self.responsibilities(x).log_density
    }

    pub fn score(&self, x: &DVector<f64>) -> DVector<f64> {
        let resp = self.responsibilities(x);
        let mut s = DVector::zeros(self.dim);
        for (ri, gi) in resp.r.iter().zip(&resp.g) {
            s.axpy(*ri, gi, 1.0);
        }
        s
    }

    pub fn score_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let resp = self.responsibilities(x);
        self.jacobian_from(&resp)
    }

    fn jacobian_from(&self, resp: &Responsibilities) -> DMatrix<f64> {
        let mut s = DVector::zeros(self.dim);
        let mut jac = DMatrix::zeros(self.dim, self.dim);
        for ((ri, gi), comp) in resp.r.iter().zip(&resp.g).zip(&self.comps) {
            s.axpy(*ri, gi, 1.0);
            jac.syger(*ri, gi, gi, 1.0);
            jac += &comp.inv * -*ri;
        }
        jac.syger(-1.0, &s, &s, 1.0);
        // syger fills the lower triangle; mirror it
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                jac[(i, j)] = jac[(j, i)];
            }
        }
        jac
    }

    pub fn score_laplacian(&self, x: &DVector<f64>) -> DVector<f64> {
        let resp = self.responsibilities(x);
        let jac = self.jacobian_from(&resp);
        let jac_trace = jac.trace();
        let mut s = DVector::zeros(self.dim);
        for (ri, gi) in resp.r.iter().zip(&resp.g) {
            s.axpy(*ri, gi, 1.0);
        }
        let mut lap = DVector::zeros(self.dim);
        for ((ri, gi), comp) in resp.r.iter().zip(&resp.g).zip(&self.comps) {
            let diff = gi - &s;
            // -2 S_i^{-1} (g_i - s)
            lap += (&comp.inv * &diff) * (-2.0 * ri);
            let coef = diff.norm_squared() - comp.inv_trace - jac_trace;
            lap.axpy(ri * coef, gi, 1.0);
        }
        lap
    }
}

/// Exact score field of a Gaussian mixture's marginals, in either domain.
/// Prepared marginals are cached per evaluation time.
pub struct MixtureScore {
    data: GaussianMixture,
    domain: ScoreDomain,
    cache: RwLock<HashMap<u64, Arc<PreparedMixture>>>,
}

impl MixtureScore {
    pub fn x_space(data: GaussianMixture) -> Self {
        Self {
            data,
            domain: ScoreDomain::XSpace,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn z_space(data: GaussianMixture) -> Self {
        Self {
            data,
            domain: ScoreDomain::ZSpace,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn data(&self) -> &GaussianMixture {
        &self.data
    }

    /// The marginal this field differentiates at time `t`.
    pub fn marginal(&self, t: f64) -> GaussianMixture {
        match self.domain {
            ScoreDomain::XSpace => mixture_marginal(&self.data, t),
            ScoreDomain::ZSpace => mixture_z_marginal(&self.data, t),
        }
    }

    /// Prepared marginal at `t`, cached on the raw bits of `t`.
    pub fn prepared(&self, t: f64) -> Arc<PreparedMixture> {
        let key = t.to_bits();
        if let Some(hit) = self.cache.read().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let prepared = Arc::new(
            PreparedMixture::new(&self.marginal(t)).expect("marginal covariances are SPD"),
        );
        let mut guard = self.cache.write().expect("cache lock");
        if guard.len() >= 256 {
            guard.clear();
        }
        guard.entry(key).or_insert_with(|| prepared.clone());
        prepared
    }
}

impl ScoreField for MixtureScore {
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn domain(&self) -> ScoreDomain {
        self.domain
    }
    fn score(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        self.prepared(t).score(x)
    }
    fn jacobian(&self, t: f64, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.prepared(t).score_jacobian(x))
    }
    fn laplacian(&self, t: f64, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(self.prepared(t).score_laplacian(x))
    }
    fn label(&self) -> String {
        let tag = match self.domain {
            ScoreDomain::XSpace => "x",
            ScoreDomain::ZSpace => "z",
        };
        format!("mixture-exact[{}comp,{}]", self.data.n_components(), tag)
    }
}
