//! Single-Gaussian laws and their exact affine score fields.
//!
//! For data `y ~ N(mu, S)` the forward marginal is
//! `p_t = N(e^{-t} mu, C_t)` with `C_t = e^{-2t} S + (1 - e^{-2t}) I`, and
//! the rescaled marginal is `q_t = N(mu, Z_t)` with `Z_t = S + (e^{2t} - 1) I`.
//! Both scores are affine, `s(t, x) = -C_t^{-1}(x - m_t)`, so every moment
//! the validator needs follows from the eigenvalues of `S`:
//!
//! ```text
//! E_{q_t} |s_r|^2   = tr Z_t^{-1}
//! E_{q_t} |s_r|^4   = (tr Z_t^{-1})^2 + 2 tr Z_t^{-2}
//! E_{q_t} |Ds_r|_F^2 = tr Z_t^{-2}
//! E_{q_t} |s_r'|^2  = e^{4t} tr Z_t^{-3}   (derivative along the flow)
//! ```

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{OracleError, ScoreDomain, ScoreField};

/// Per-time cache of affine coefficients `(A_t, b_t)`; samplers evaluate one
/// grid time across the whole batch, so a small map removes almost all of
/// the eigen-reconstruction cost.
struct AffineCache {
    map: RwLock<HashMap<u64, Arc<(DMatrix<f64>, DVector<f64>)>>>,
}

impl AffineCache {
    fn new() -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
        }
    }

    fn get_or_insert(
        &self,
        t: f64,
        build: impl FnOnce() -> (DMatrix<f64>, DVector<f64>),
    ) -> Arc<(DMatrix<f64>, DVector<f64>)> {
        let key = t.to_bits();
        if let Some(hit) = self.map.read().expect("cache lock").get(&key) {
            return hit.clone();
        }
        let value = Arc::new(build());
        let mut guard = self.map.write().expect("cache lock");
        if guard.len() >= 1024 {
            guard.clear();
        }
        guard.entry(key).or_insert_with(|| value.clone()).clone()
    }
}

/// A single Gaussian `N(mean, cov)` with SPD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

impl GaussianLaw {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, OracleError> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(OracleError::DimensionMismatch(mean.len(), cov.nrows()));
        }
        let asym = (&cov - cov.transpose()).norm();
        if asym > 1e-9 * cov.norm().max(1.0) {
            return Err(OracleError::NonSpdCovariance(0));
        }
        Cholesky::new(cov.clone()).ok_or(OracleError::NonSpdCovariance(0))?;
        Ok(Self {
            mean: mean.iter().cloned().collect(),
            cov: (0..cov.nrows())
                .map(|i| cov.row(i).iter().cloned().collect())
                .collect(),
        })
    }

    pub fn standard(d: usize) -> Self {
        Self::new(DVector::zeros(d), DMatrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> DVector<f64> {
        DVector::from_vec(self.mean.clone())
    }

    pub fn cov(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.cov[i][j])
    }

    pub fn second_moment(&self) -> f64 {
        self.mean.iter().map(|m| m * m).sum::<f64>()
            + (0..self.dim()).map(|i| self.cov[i][i]).sum::<f64>()
    }
}

/// Forward marginal of a Gaussian law, `N(e^{-t} mu, e^{-2t} S + (1 - e^{-2t}) I)`.
pub fn gaussian_forward_law(law: &GaussianLaw, t: f64) -> GaussianLaw {
    assert!(t >= 0.0);
    let d = law.dim();
    let s2 = (-2.0 * t).exp();
    let noise = -(-2.0 * t).exp_m1();
    let cov = law.cov() * s2 + DMatrix::<f64>::identity(d, d) * noise;
    GaussianLaw::new(law.mean() * (-t).exp(), cov).expect("forward law stays SPD")
}

/// Rescaled marginal of a Gaussian law, `N(mu, S + (e^{2t} - 1) I)`.
pub fn gaussian_z_law(law: &GaussianLaw, t: f64) -> GaussianLaw {
    assert!(t >= 0.0);
    let d = law.dim();
    let grow = (2.0 * t).exp_m1();
    GaussianLaw::new(law.mean(), law.cov() + DMatrix::<f64>::identity(d, d) * grow)
        .expect("rescaled law stays SPD")
}

/// Shared eigen machinery: with `S = Q diag(lam) Q^T`, every time-indexed
/// covariance here is `Q diag(lam * a + b) Q^T` for scalars `(a, b)`.
#[derive(Debug, Clone)]
struct EigenBasis {
    mean: DVector<f64>,
    q: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl EigenBasis {
    fn new(law: &GaussianLaw) -> Self {
        let eig = SymmetricEigen::new(law.cov());
        Self {
            mean: law.mean(),
            q: eig.eigenvectors,
            eigenvalues: eig.eigenvalues.iter().cloned().collect(),
        }
    }

    /// `Q diag(f(lam)) Q^T`.
    fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = self.eigenvalues.len();
        let diag = DVector::from_fn(d, |i, _| f(self.eigenvalues[i]));
        &self.q * DMatrix::from_diagonal(&diag) * self.q.transpose()
    }

    fn trace_power(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.eigenvalues.iter().map(|&l| f(l)).sum()
    }
}

/// Exact x-space score of a Gaussian data law; affine at every time.
pub struct GaussianScore {
    basis: EigenBasis,
    cache: AffineCache,
}

impl GaussianScore {
    pub fn new(law: &GaussianLaw) -> Self {
        Self {
            basis: EigenBasis::new(law),
            cache: AffineCache::new(),
        }
    }

    /// `(A_t, b_t)` with `A_t = -C_t^{-1}`, `b_t = C_t^{-1} e^{-t} mu` for
    /// `C_t = e^{-2t} S + (1 - e^{-2t}) I`.
    fn affine_at(&self, t: f64) -> Arc<(DMatrix<f64>, DVector<f64>)> {
        self.cache.get_or_insert(t, || {
            let s2 = (-2.0 * t).exp();
            let noise = -(-2.0 * t).exp_m1();
            let prec = self.basis.apply(|l| 1.0 / (l * s2 + noise));
            let b = &prec * (&self.basis.mean * (-t).exp());
            (-prec, b)
        })
    }
}

impl ScoreField for GaussianScore {
    fn dim(&self) -> usize {
        self.basis.mean.len()
    }
    fn domain(&self) -> ScoreDomain {
        ScoreDomain::XSpace
    }
    fn score(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        let ab = self.affine_at(t);
        &ab.0 * x + &ab.1
    }
    fn jacobian(&self, t: f64, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.affine_at(t).0.clone())
    }
    fn laplacian(&self, _t: f64, _x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim()))
    }
    fn affine_coeffs(&self, t: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let ab = self.affine_at(t);
        Some((ab.0.clone(), ab.1.clone()))
    }
    fn label(&self) -> String {
        "gaussian-exact[x]".into()
    }
}

/// Exact z-space score `s_r` of a Gaussian data law, with closed-form
/// moments under `q_t` and the exact probability-flow map.
pub struct GaussianZScore {
    basis: EigenBasis,
    cache: AffineCache,
}

impl GaussianZScore {
    pub fn new(law: &GaussianLaw) -> Self {
        Self {
            basis: EigenBasis::new(law),
            cache: AffineCache::new(),
        }
    }

    /// Degenerate data (a point mass at `atom`) in z-space: all eigenvalues 0.
    pub fn point_mass(atom: DVector<f64>) -> Self {
        let d = atom.len();
        Self {
            basis: EigenBasis {
                mean: atom,
                q: DMatrix::identity(d, d),
                eigenvalues: vec![0.0; d],
            },
            cache: AffineCache::new(),
        }
    }

    /// `(A_t, b_t)` with `A_t = -Z_t^{-1}`, `b_t = Z_t^{-1} mu`.
    fn affine_at(&self, t: f64) -> Arc<(DMatrix<f64>, DVector<f64>)> {
        self.cache.get_or_insert(t, || {
            let prec = self.precision(t);
            let b = &prec * &self.basis.mean;
            (-prec, b)
        })
    }

    fn grow(t: f64) -> f64 {
        (2.0 * t).exp_m1()
    }

    /// `Z_t^{-1}` for `Z_t = S + (e^{2t} - 1) I`.
    fn precision(&self, t: f64) -> DMatrix<f64> {
        let g = Self::grow(t);
        self.basis.apply(|l| 1.0 / (l + g))
    }

    /// Eigenvalues of the data covariance (zeros for a point mass).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.basis.eigenvalues
    }

    pub fn expected_score_norm2(&self, t: f64) -> f64 {
        let g = Self::grow(t);
        self.basis.trace_power(|l| 1.0 / (l + g))
    }

    pub fn expected_score_norm4(&self, t: f64) -> f64 {
        let g = Self::grow(t);
        let tr1 = self.basis.trace_power(|l| 1.0 / (l + g));
        let tr2 = self.basis.trace_power(|l| 1.0 / ((l + g) * (l + g)));
        tr1 * tr1 + 2.0 * tr2
    }

    pub fn expected_jacobian_frob2(&self, t: f64) -> f64 {
        let g = Self::grow(t);
        self.basis.trace_power(|l| 1.0 / ((l + g) * (l + g)))
    }

    /// `E_{q_t} |s_r'(t, z(t))|^2 = e^{4t} tr Z_t^{-3}` along the flow.
    pub fn expected_flow_derivative_norm2(&self, t: f64) -> f64 {
        let g = Self::grow(t);
        (4.0 * t).exp() * self.basis.trace_power(|l| 1.0 / ((l + g) * (l + g) * (l + g)))
    }

    /// Exact probability-flow map in z-space from `t_from` to `t_to`:
    /// per eigendirection the centered coordinate scales by
    /// `sqrt((lam + e^{2 t_to} - 1) / (lam + e^{2 t_from} - 1))`.
    pub fn pf_ode_flow(&self, t_from: f64, t_to: f64, z: &DVector<f64>) -> DVector<f64> {
        let g_from = Self::grow(t_from);
        let g_to = Self::grow(t_to);
        let scale = self
            .basis
            .apply(|l| ((l + g_to) / (l + g_from)).sqrt());
        &self.basis.mean + scale * (z - &self.basis.mean)
    }

    /// Draw `z ~ q_t` given a data draw `y` and unit noise `eta`.
    pub fn z_sample(&self, t: f64, y: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        y + eta * Self::grow(t).sqrt()
    }
}

impl ScoreField for GaussianZScore {
    fn dim(&self) -> usize {
        self.basis.mean.len()
    }
    fn domain(&self) -> ScoreDomain {
        ScoreDomain::ZSpace
    }
    fn score(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        assert!(t > 0.0 || self.basis.eigenvalues.iter().all(|&l| l > 0.0));
        let ab = self.affine_at(t);
        &ab.0 * z + &ab.1
    }
    fn jacobian(&self, t: f64, _z: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.affine_at(t).0.clone())
    }
    fn laplacian(&self, _t: f64, _z: &DVector<f64>) -> Option<DVector<f64>> {
        Some(DVector::zeros(self.dim()))
    }
    fn time_derivative(&self, t: f64, z: &DVector<f64>) -> Option<DVector<f64>> {
        // d/dt [-Z_t^{-1}(z - mu)] = 2 e^{2t} Z_t^{-2} (z - mu)
        let g = Self::grow(t);
        let prec2 = self.basis.apply(|l| 1.0 / ((l + g) * (l + g)));
        Some(prec2 * (z - &self.basis.mean) * (2.0 * (2.0 * t).exp()))
    }
    fn affine_coeffs(&self, t: f64) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let ab = self.affine_at(t);
        Some((ab.0.clone(), ab.1.clone()))
    }
    fn label(&self) -> String {
        "gaussian-exact[z]".into()
    }
}
