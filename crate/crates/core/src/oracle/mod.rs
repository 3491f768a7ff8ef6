//! Exact score oracles for analytic data distributions.
//!
//! A [`ScoreField`] is a time-indexed vector field `(t, x) -> s(t, x)` with
//! optional Jacobian, Laplacian, and time-derivative evaluation. Fields come
//! in two coordinate systems:
//!
//! - x-space: the score of the forward marginal `p_t`,
//! - z-space: the score `s_r` of the rescaled marginal `q_t`, related by
//!   `s_r(t, z) = e^{-t} s(t, e^{-t} z)`.
//!
//! Everything here is closed-form: Gaussian mixtures evaluate via
//! log-sum-exp responsibilities, finite supports via the softmax posterior
//! over atoms, and single Gaussians via eigendecomposition of the data
//! covariance. Perturbed fields realize a prescribed step-weighted
//! mean-square score error, and affine fields support exact law propagation
//! through every sampler.

mod discrete;
mod gaussian;
mod mixture;
mod perturb;
mod propagate;

pub use discrete::{posterior_score_discrete, DiscreteScore, DiscreteSupport};
pub use gaussian::{
    gaussian_forward_law, gaussian_z_law, GaussianLaw, GaussianScore, GaussianZScore,
};
pub use mixture::{mixture_marginal, mixture_z_marginal, GaussianMixture, MixtureScore, PreparedMixture};
pub use perturb::{
    measure_score_error, perturb_score, PerturbMode, PerturbedScore, ScoreErrorEstimate,
};
pub use propagate::{
    propagate_ei_sde_gaussian, propagate_gaussian, propagate_ode_noise_gaussian,
    propagate_pf_ode_gaussian,
};

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("component {0} covariance is not symmetric positive definite")]
    NonSpdCovariance(usize),
    #[error("weights must be nonnegative and sum to 1 (got sum {0})")]
    BadWeights(f64),
    #[error("distribution needs at least one component")]
    Empty,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("score is singular at t = 0 for a degenerate data distribution")]
    SingularTime,
    #[error("score field is not affine in x; exact law propagation does not apply")]
    NonAffineScore,
    #[error("score fields must share the {0} domain here")]
    DomainMismatch(&'static str),
    #[error("need at least {need} Monte Carlo samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("unsupported perturbation mode: {0}")]
    UnsupportedMode(String),
    #[error("invalid distribution description: {0}")]
    InvalidSpec(String),
}

/// Coordinate system a score field lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreDomain {
    /// Score of the forward marginal `p_t`.
    XSpace,
    /// Score of the rescaled marginal `q_t` (the `s_r` field).
    ZSpace,
}

/// Time-indexed score field with optional derivative capabilities.
///
/// Evaluation is pure; implementations are shareable across threads.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> ScoreDomain;
    fn score(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of the score; `None` when the field cannot provide it.
    fn jacobian(&self, _t: f64, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
    /// Per-coordinate Laplacian of the score.
    fn laplacian(&self, _t: f64, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
    /// Closed-form partial derivative in `t`, when available.
    fn time_derivative(&self, _t: f64, _x: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
    /// When the field is affine in its spatial argument at fixed `t`,
    /// `s(t, x) = A_t x + b_t`, the coefficients `(A_t, b_t)`. Affine fields
    /// admit exact Gaussian law propagation, and samplers fold them into
    /// per-step kernels.
    fn affine_coeffs(&self, _t: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        None
    }
    fn label(&self) -> String;
}

impl<F: ScoreField + ?Sized> ScoreField for std::sync::Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn domain(&self) -> ScoreDomain {
        (**self).domain()
    }
    fn score(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (**self).score(t, x)
    }
    fn jacobian(&self, t: f64, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).jacobian(t, x)
    }
    fn laplacian(&self, t: f64, x: &DVector<f64>) -> Option<DVector<f64>> {
        (**self).laplacian(t, x)
    }
    fn time_derivative(&self, t: f64, x: &DVector<f64>) -> Option<DVector<f64>> {
        (**self).time_derivative(t, x)
    }
    fn affine_coeffs(&self, t: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        (**self).affine_coeffs(t)
    }
    fn label(&self) -> String {
        (**self).label()
    }
}

/// View an x-space field in z-space coordinates,
/// `s_r(t, z) = e^{-t} s(t, e^{-t} z)`.
pub struct RescaledScore<F> {
    base: F,
}

impl<F: ScoreField> RescaledScore<F> {
    pub fn new(base: F) -> Self {
        assert_eq!(
            base.domain(),
            ScoreDomain::XSpace,
            "rescaling maps x-space fields into z-space"
        );
        Self { base }
    }
}

impl<F: ScoreField> ScoreField for RescaledScore<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn domain(&self) -> ScoreDomain {
        ScoreDomain::ZSpace
    }
    fn score(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        let s = (-t).exp();
        self.base.score(t, &(z * s)) * s
    }
    fn jacobian(&self, t: f64, z: &DVector<f64>) -> Option<DMatrix<f64>> {
        let s = (-t).exp();
        self.base.jacobian(t, &(z * s)).map(|j| j * (s * s))
    }
    fn laplacian(&self, t: f64, z: &DVector<f64>) -> Option<DVector<f64>> {
        let s = (-t).exp();
        self.base.laplacian(t, &(z * s)).map(|l| l * (s * s * s))
    }
    fn label(&self) -> String {
        format!("rescaled({})", self.base.label())
    }
}

/// JSON description of a data distribution, the on-disk interface:
/// `{"type": "mixture", weights, means, covs}` or
/// `{"type": "discrete", weights, atoms}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistributionSpec {
    Mixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covs: Vec<Vec<Vec<f64>>>,
    },
    Discrete {
        weights: Vec<f64>,
        atoms: Vec<Vec<f64>>,
    },
}

/// A data distribution with closed-form marginal scores.
#[derive(Debug, Clone)]
pub enum DataDistribution {
    Mixture(GaussianMixture),
    Discrete(DiscreteSupport),
}

impl DataDistribution {
    pub fn from_spec(spec: &DistributionSpec) -> Result<Self, OracleError> {
        match spec {
            DistributionSpec::Mixture { weights, means, covs } => {
                let means: Vec<DVector<f64>> =
                    means.iter().map(|m| DVector::from_vec(m.clone())).collect();
                let covs: Result<Vec<DMatrix<f64>>, OracleError> = covs
                    .iter()
                    .map(|c| {
                        let rows = c.len();
                        if rows == 0 || c.iter().any(|r| r.len() != rows) {
                            return Err(OracleError::InvalidSpec(
                                "covariance matrices must be square".into(),
                            ));
                        }
                        Ok(DMatrix::from_fn(rows, rows, |i, j| c[i][j]))
                    })
                    .collect();
                Ok(DataDistribution::Mixture(GaussianMixture::new(
                    weights.clone(),
                    means,
                    covs?,
                )?))
            }
            DistributionSpec::Discrete { weights, atoms } => {
                let atoms: Vec<DVector<f64>> =
                    atoms.iter().map(|a| DVector::from_vec(a.clone())).collect();
                Ok(DataDistribution::Discrete(DiscreteSupport::new(
                    weights.clone(),
                    atoms,
                )?))
            }
        }
    }

    pub fn from_json_str(json: &str) -> Result<Self, OracleError> {
        let spec: DistributionSpec =
            serde_json::from_str(json).map_err(|e| OracleError::InvalidSpec(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn dim(&self) -> usize {
        match self {
            DataDistribution::Mixture(m) => m.dim(),
            DataDistribution::Discrete(d) => d.dim(),
        }
    }

    /// Second moment `m_2 = E ||y||^2`.
    pub fn second_moment(&self) -> f64 {
        match self {
            DataDistribution::Mixture(m) => m.second_moment(),
            DataDistribution::Discrete(d) => d.second_moment(),
        }
    }

    /// Draw one data point.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match self {
            DataDistribution::Mixture(m) => m.sample(rng),
            DataDistribution::Discrete(d) => d.sample(rng),
        }
    }

    /// Exact x-space score field of the forward marginals.
    pub fn x_score(&self) -> std::sync::Arc<dyn ScoreField> {
        match self {
            DataDistribution::Mixture(m) => {
                std::sync::Arc::new(MixtureScore::x_space(m.clone()))
            }
            DataDistribution::Discrete(d) => {
                std::sync::Arc::new(DiscreteScore::x_space(d.clone()))
            }
        }
    }

    /// Exact z-space score field of the rescaled marginals.
    pub fn z_score(&self) -> std::sync::Arc<dyn ScoreField> {
        match self {
            DataDistribution::Mixture(m) => {
                std::sync::Arc::new(MixtureScore::z_space(m.clone()))
            }
            DataDistribution::Discrete(d) => {
                std::sync::Arc::new(DiscreteScore::z_space(d.clone()))
            }
        }
    }
}
