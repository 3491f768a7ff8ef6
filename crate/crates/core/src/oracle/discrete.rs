//! Finite-support data and its posterior-form score.
//!
//! For atoms `y_i` with weights `w_i`, the rescaled marginal at `t > 0` is a
//! mixture of `N(y_i, (e^{2t} - 1) I)`. Writing `v = e^{2t} - 1` and
//! posterior weights `p_i(z) ∝ w_i exp(-|z - y_i|^2 / (2v))`,
//!
//! ```text
//! s_r(t, z)  = E_{y|z}[y - z] / v
//! Ds_r(t, z) = Var_{y|z}[y] / v^2 - I / v
//! ```
//!
//! The x-space field is the same construction with centers `e^{-t} y_i` and
//! `v = 1 - e^{-2t}`. Point masses are handled natively here; representing
//! them as zero-covariance Gaussians would require inverting singular
//! matrices.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{OracleError, ScoreDomain, ScoreField};

/// A finitely supported data distribution.
#[derive(Debug, Clone)]
pub struct DiscreteSupport {
    weights: Vec<f64>,
    atoms: Vec<DVector<f64>>,
}

impl DiscreteSupport {
    pub fn new(weights: Vec<f64>, atoms: Vec<DVector<f64>>) -> Result<Self, OracleError> {
        if atoms.is_empty() || weights.len() != atoms.len() {
            return Err(OracleError::Empty);
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(OracleError::BadWeights(sum));
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d) {
            return Err(OracleError::DimensionMismatch(d, 0));
        }
        Ok(Self { weights, atoms })
    }

    /// A single point mass.
    pub fn point_mass(atom: DVector<f64>) -> Self {
        Self {
            weights: vec![1.0],
            atoms: vec![atom],
        }
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> &[DVector<f64>] {
        &self.atoms
    }

    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.atoms)
            .map(|(w, a)| w * a.norm_squared())
            .sum()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, a) in self.weights.iter().zip(&self.atoms) {
            acc += w;
            if u < acc {
                return a.clone();
            }
        }
        self.atoms[self.atoms.len() - 1].clone()
    }
}

/// Exact score field of a finite support, in either domain.
pub struct DiscreteScore {
    data: DiscreteSupport,
    domain: ScoreDomain,
}

struct Posterior {
    p: Vec<f64>,
    g: Vec<DVector<f64>>,
}

impl DiscreteScore {
    pub fn z_space(data: DiscreteSupport) -> Self {
        Self {
            data,
            domain: ScoreDomain::ZSpace,
        }
    }

    pub fn x_space(data: DiscreteSupport) -> Self {
        Self {
            data,
            domain: ScoreDomain::XSpace,
        }
    }

    pub fn data(&self) -> &DiscreteSupport {
        &self.data
    }

    fn variance(&self, t: f64) -> f64 {
        match self.domain {
            ScoreDomain::ZSpace => (2.0 * t).exp_m1(),
            ScoreDomain::XSpace => -(-2.0 * t).exp_m1(),
        }
    }

    fn center(&self, i: usize, t: f64) -> DVector<f64> {
        match self.domain {
            ScoreDomain::ZSpace => self.data.atoms[i].clone(),
            ScoreDomain::XSpace => &self.data.atoms[i] * (-t).exp(),
        }
    }

    /// Softmax posterior over atoms with log-weights
    /// `log w_i - |p - c_i|^2 / (2v)`, max-shifted.
    fn posterior(&self, t: f64, point: &DVector<f64>) -> Posterior {
        let v = self.variance(t);
        let n = self.data.n_atoms();
        let mut logs = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let gi = (self.center(i, t) - point) / v;
            // log w_i - |p - c_i|^2/(2v) = log w_i + (v/2)|g_i|^2... signs:
            // |p - c_i|^2/(2v) = (v/2)|g_i|^2
            logs.push(self.data.weights[i].ln() - 0.5 * v * gi.norm_squared());
            g.push(gi);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = p.iter().sum();
        for pi in &mut p {
            *pi /= total;
        }
        Posterior { p, g }
    }
}

impl ScoreField for DiscreteScore {
    fn dim(&self) -> usize {
        self.data.dim()
    }
    fn domain(&self) -> ScoreDomain {
        self.domain
    }
    fn score(&self, t: f64, point: &DVector<f64>) -> DVector<f64> {
        assert!(t > 0.0, "finite-support score is singular at t = 0");
        let post = self.posterior(t, point);
        let mut s = DVector::zeros(self.dim());
        for (pi, gi) in post.p.iter().zip(&post.g) {
            s.axpy(*pi, gi, 1.0);
        }
        s
    }
    fn jacobian(&self, t: f64, point: &DVector<f64>) -> Option<DMatrix<f64>> {
        assert!(t > 0.0);
        let v = self.variance(t);
        let d = self.dim();
        let post = self.posterior(t, point);
        let mut s = DVector::zeros(d);
        let mut jac = DMatrix::zeros(d, d);
        for (pi, gi) in post.p.iter().zip(&post.g) {
            s.axpy(*pi, gi, 1.0);
            jac.syger(*pi, gi, gi, 1.0);
        }
        jac.syger(-1.0, &s, &s, 1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                jac[(i, j)] = jac[(j, i)];
            }
            jac[(i, i)] -= 1.0 / v;
        }
        Some(jac)
    }
    fn laplacian(&self, t: f64, point: &DVector<f64>) -> Option<DVector<f64>> {
        assert!(t > 0.0);
        let v = self.variance(t);
        let d = self.dim();
        let post = self.posterior(t, point);
        let mut s = DVector::zeros(d);
        for (pi, gi) in post.p.iter().zip(&post.g) {
            s.axpy(*pi, gi, 1.0);
        }
        let jac = self.jacobian(t, point).expect("always available");
        let jac_trace = jac.trace();
        let mut lap = DVector::zeros(d);
        for (pi, gi) in post.p.iter().zip(&post.g) {
            let diff = gi - &s;
            lap.axpy(-2.0 * pi / v, &diff, 1.0);
            let coef = diff.norm_squared() - d as f64 / v - jac_trace;
            lap.axpy(pi * coef, gi, 1.0);
        }
        Some(lap)
    }
    fn time_derivative(&self, t: f64, point: &DVector<f64>) -> Option<DVector<f64>> {
        if self.domain != ScoreDomain::ZSpace {
            return None; // x-space centers also move; not needed here
        }
        // v = e^{2t} - 1, v' = 2 e^{2t}:
        //   d/dt p_i = p_i (u_i - E[u]),  u_i = |z - y_i|^2 e^{2t} / v^2
        //   d/dt g_i = -g_i v'/v
        let v = self.variance(t);
        let vdot = 2.0 * (2.0 * t).exp();
        let post = self.posterior(t, point);
        let u: Vec<f64> = post
            .g
            .iter()
            .map(|gi| 0.5 * vdot * gi.norm_squared())
            .collect();
        let u_bar: f64 = post.p.iter().zip(&u).map(|(p, u)| p * u).sum();
        let mut out = DVector::zeros(self.dim());
        for ((pi, gi), ui) in post.p.iter().zip(&post.g).zip(&u) {
            out.axpy(pi * (ui - u_bar), gi, 1.0);
            out.axpy(-pi * vdot / v, gi, 1.0);
        }
        Some(out)
    }
    fn label(&self) -> String {
        let tag = match self.domain {
            ScoreDomain::XSpace => "x",
            ScoreDomain::ZSpace => "z",
        };
        format!("discrete-posterior[{}atom,{}]", self.data.n_atoms(), tag)
    }
}

/// Posterior-form z-space score of a finite support;
/// `E_{y|z}[y - z] / (e^{2t} - 1)`.
pub fn posterior_score_discrete(
    data: &DiscreteSupport,
    t: f64,
    z: &DVector<f64>,
) -> Result<DVector<f64>, OracleError> {
    if t <= 0.0 {
        return Err(OracleError::SingularTime);
    }
    if z.len() != data.dim() {
        return Err(OracleError::DimensionMismatch(z.len(), data.dim()));
    }
    Ok(DiscreteScore::z_space(data.clone()).score(t, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_atom_score_is_linear_pull() {
        let data = DiscreteSupport::point_mass(DVector::zeros(2));
        let z = DVector::from_vec(vec![1.0, -2.0]);
        let t = 0.6;
        let v = (2.0f64 * t).exp_m1();
        let s = posterior_score_discrete(&data, t, &z).unwrap();
        assert_relative_eq!((s + &z / v).norm(), 0.0, epsilon = 1e-14);
        let field = DiscreteScore::z_space(data);
        let j = field.jacobian(t, &z).unwrap();
        assert_relative_eq!(
            (j + DMatrix::<f64>::identity(2, 2) / v).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(field.laplacian(t, &z).unwrap().norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_atoms_cancel_at_origin() {
        let data = DiscreteSupport::new(
            vec![0.5, 0.5],
            vec![DVector::from_vec(vec![2.0]), DVector::from_vec(vec![-2.0])],
        )
        .unwrap();
        let s = posterior_score_discrete(&data, 0.8, &DVector::zeros(1)).unwrap();
        assert_relative_eq!(s[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn t_zero_is_singular() {
        let data = DiscreteSupport::point_mass(DVector::zeros(1));
        let err = posterior_score_discrete(&data, 0.0, &DVector::zeros(1)).unwrap_err();
        assert!(matches!(err, OracleError::SingularTime));
    }

    #[test]
    fn time_derivative_matches_finite_difference() {
        let data = DiscreteSupport::new(
            vec![0.3, 0.7],
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.5])],
        )
        .unwrap();
        let field = DiscreteScore::z_space(data);
        let z = DVector::from_vec(vec![0.4]);
        let (t, dt) = (0.5, 1e-6);
        let fd = (field.score(t + dt, &z) - field.score(t - dt, &z)) / (2.0 * dt);
        let an = field.time_derivative(t, &z).unwrap();
        assert_relative_eq!((fd - an).norm(), 0.0, epsilon = 1e-5);
    }

    #[test]
    fn x_space_matches_rescaled_z_space() {
        // s(t, x) = e^t s_r(t, e^t x)
        let data = DiscreteSupport::new(
            vec![0.4, 0.6],
            vec![DVector::from_vec(vec![2.0]), DVector::from_vec(vec![-1.0])],
        )
        .unwrap();
        let xf = DiscreteScore::x_space(data.clone());
        let zf = DiscreteScore::z_space(data);
        let x = DVector::from_vec(vec![0.3]);
        let t = 0.7;
        let sx = xf.score(t, &x);
        let sz = zf.score(t, &(&x * t.exp())) * t.exp();
        assert_relative_eq!((sx - sz).norm(), 0.0, epsilon = 1e-12);
    }
}
