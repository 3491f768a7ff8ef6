//! Forward Ornstein-Uhlenbeck process and discretization grids.
//!
//! The forward process interpolates data toward the standard normal,
//!
//! ```text
//! x(t) = e^{-t} y + sqrt(1 - e^{-2t}) eps,    eps ~ N(0, I_d),
//! ```
//!
//! and the rescaled variant `z(t) = e^t x(t) = y + sqrt(e^{2t} - 1) eta` turns
//! it into a pure diffusion. Samplers discretize the reverse dynamics on a
//! grid `delta = t_0 < t_1 < ... < t_{K+1} = T` with steps
//! `h_k = c * min(1, t_k)`: uniform of size `c` above 1, geometric with ratio
//! `(1 - c)` below 1. The grid is built backward from `T`; the step landing
//! on 1 and the step landing on `delta` absorb the rounding so both endpoints
//! are hit exactly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Comparison slack for the integer step counts; keeps near-integer
/// `(T-1)/c` and `ln(1/delta)/ln(1/(1-c))` from spawning degenerate steps.
const COUNT_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ProcessError {
    #[error("step ratio c = {0} outside the admissible range (0, 1/2)")]
    StepRatioOutOfRange(f64),
    #[error("early-stopping floor delta = {0} outside (0, 1)")]
    DeltaOutOfRange(f64),
    #[error("horizon T = {0} must be at least 1")]
    HorizonTooSmall(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error(
        "K = {requested} is below the minimum {minimum} reachable with c < 1/2 \
         for this (delta, T); raise K"
    )]
    TooFewIterations { requested: usize, minimum: usize },
    #[error(
        "no step ratio in (0, 1/2) yields exactly {requested} + 1 steps for \
         this (delta, T); raise K by one"
    )]
    NoMatchingStepRatio { requested: usize },
}

/// The discretization sequence `delta = t_0 < ... < t_{K+1} = T`.
///
/// Steps are `h_k = t_k - t_{k-1}` for `k = 1..=K+1`. Interior steps satisfy
/// `h_k = c * min(1, t_k)` exactly; the step onto `t_M = 1` from above and
/// the step onto `t_0 = delta` may be shortened by the clamping rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    delta: f64,
    horizon: f64,
    c: f64,
    times: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TimeGridRepr {
    delta: f64,
    #[serde(rename = "T")]
    horizon: f64,
    c: f64,
    #[serde(rename = "K")]
    iterations: usize,
    times: Vec<f64>,
}

impl Serialize for TimeGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TimeGridRepr {
            delta: self.delta,
            horizon: self.horizon,
            c: self.c,
            iterations: self.iterations(),
            times: self.times.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TimeGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = TimeGridRepr::deserialize(d)?;
        if repr.times.len() != repr.iterations + 2 {
            return Err(serde::de::Error::custom(format!(
                "times has {} entries, expected K + 2 = {}",
                repr.times.len(),
                repr.iterations + 2
            )));
        }
        if repr.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(serde::de::Error::custom("times must be strictly increasing"));
        }
        Ok(TimeGrid {
            delta: repr.delta,
            horizon: repr.horizon,
            c: repr.c,
            times: repr.times,
        })
    }
}

impl TimeGrid {
    /// Early-stopping floor `t_0`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Total generation time `T = t_{K+1}`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step ratio `c`.
    pub fn step_ratio(&self) -> f64 {
        self.c
    }

    /// Iteration count `K`; the grid holds `K + 2` times and `K + 1` steps.
    pub fn iterations(&self) -> usize {
        self.times.len() - 2
    }

    /// All grid times `t_0..=t_{K+1}` in increasing order.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `t_k`.
    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// `h_k = t_k - t_{k-1}` for `k = 1..=K+1`.
    pub fn step(&self, k: usize) -> f64 {
        assert!(k >= 1 && k < self.times.len(), "step index {k} out of range");
        self.times[k] - self.times[k - 1]
    }

    /// Index `M` with `t_M = 1` (equals `K + 1` when `T = 1`).
    pub fn unit_index(&self) -> usize {
        self.times
            .iter()
            .position(|&t| (t - 1.0).abs() <= 16.0 * f64::EPSILON * self.horizon.max(1.0))
            .unwrap_or(self.times.len() - 1)
    }

    /// The step range `k = 1..=K+1` of the score-error weighting.
    pub fn assumption_step_range(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.iterations() + 1
    }

    /// The step range `k = 2..=K+1` the two-phase sampler iterates over
    /// (each step needs the previous step size `h_{k-1}`).
    pub fn sampler_step_range(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.iterations() + 1
    }

    /// Check every structural invariant; used by tests and deserialization
    /// consumers. Tolerances follow the clamping rule: the step onto 1 from
    /// above and the step onto `delta` are exempt from the exact ratio.
    pub fn validate(&self) -> Result<(), String> {
        let k1 = self.times.len() - 1;
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err("times not strictly increasing".into());
        }
        if self.times[0] != self.delta {
            return Err(format!("t_0 = {} != delta = {}", self.times[0], self.delta));
        }
        if self.times[k1] != self.horizon {
            return Err(format!("t_K+1 = {} != T = {}", self.times[k1], self.horizon));
        }
        let m = self.unit_index();
        for k in 1..=k1 {
            let t_k = self.times[k];
            let h_k = self.step(k);
            if k <= m {
                // geometric region; k = 1 carries the delta clamp
                if k > 1 && (h_k / t_k - self.c).abs() > 1e-9 {
                    return Err(format!("h_{k}/t_{k} = {} != c", h_k / t_k));
                }
                if k == 1 && h_k > self.c * t_k * (1.0 + 1e-9) {
                    return Err(format!("clamped step h_1 = {h_k} exceeds c*t_1"));
                }
            } else if k > m + 1 {
                // uniform region; k = m + 1 carries the landing-on-1 rounding
                if (h_k - self.c).abs() > 1e-9 * self.c.max(1e-3) {
                    return Err(format!("h_{k} = {h_k} != c in uniform region"));
                }
            }
        }
        // closed forms delta = (1-c)^M and T - 1 = c (K + 1 - M), up to the
        // one-step clamp slack on each side
        let geo = (1.0 - self.c).powi(m as i32);
        if !(self.delta >= geo * (1.0 - 1e-9) && self.delta <= geo / (1.0 - self.c) * (1.0 + 1e-9))
        {
            return Err(format!(
                "delta = {} not within clamp slack of (1-c)^M = {geo}",
                self.delta
            ));
        }
        let up = self.c * (k1 - m) as f64;
        if (self.horizon - 1.0 - up).abs() > self.c * (1.0 + 1e-6) {
            return Err(format!(
                "T - 1 = {} not within one step of c(K+1-M) = {up}",
                self.horizon - 1.0
            ));
        }
        Ok(())
    }
}

fn validate_grid_inputs(delta: f64, horizon: f64) -> Result<(), ProcessError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ProcessError::DeltaOutOfRange(delta));
    }
    if !(horizon >= 1.0) {
        return Err(ProcessError::HorizonTooSmall(horizon));
    }
    Ok(())
}

/// Number of uniform steps above 1 and geometric steps below 1 for a ratio
/// `c`; their sum is the total step count `K + 1`.
fn regime_counts(delta: f64, horizon: f64, c: f64) -> (usize, usize) {
    let r = (horizon - 1.0) / c;
    let n_up = if r <= COUNT_TOL { 0 } else { (r - COUNT_TOL).ceil() as usize };
    let x = (1.0 / delta).ln() / (1.0 / (1.0 - c)).ln();
    let m_down = ((x - COUNT_TOL).ceil() as usize).max(1);
    (n_up, m_down)
}

fn step_count(delta: f64, horizon: f64, c: f64) -> usize {
    let (n_up, m_down) = regime_counts(delta, horizon, c);
    n_up + m_down
}

/// Build the grid for a given step ratio, backward from `T`: uniform steps of
/// size `c` down to 1 (the crossing step shortened to land exactly on 1),
/// then geometric steps `t_{k-1} = (1-c) t_k` down to the first value at or
/// below `delta`, which is clamped to exactly `delta`.
pub fn build_time_grid(delta: f64, horizon: f64, c: f64) -> Result<TimeGrid, ProcessError> {
    validate_grid_inputs(delta, horizon)?;
    if !(c > 0.0 && c < 0.5) {
        return Err(ProcessError::StepRatioOutOfRange(c));
    }
    let (n_up, m_down) = regime_counts(delta, horizon, c);
    let mut descending = Vec::with_capacity(n_up + m_down + 1);
    if n_up == 0 {
        descending.push(horizon); // T = 1 within count slack
    } else {
        for j in 0..n_up {
            descending.push(horizon - j as f64 * c);
        }
        descending.push(1.0);
    }
    for j in 1..m_down {
        descending.push((1.0 - c).powi(j as i32));
    }
    descending.push(delta);
    descending.reverse();
    debug_assert!(descending.windows(2).all(|w| w[1] > w[0]));
    Ok(TimeGrid {
        delta,
        horizon,
        c,
        times: descending,
    })
}

/// A grid produced by solving for the step ratio.
#[derive(Debug, Clone)]
pub struct SolvedGrid {
    pub c: f64,
    pub grid: TimeGrid,
    /// True when the solution sits at the upper boundary of the admissible
    /// ratio range, i.e. `c` is the largest value below 1/2.
    pub at_boundary: bool,
}

/// Solve for the step ratio `c` that makes the grid have exactly `K + 1`
/// steps. The step count is monotone non-increasing in `c`, so bisection
/// finds the largest admissible ratio; an integer jump that skips the target
/// count is reported as an error.
pub fn grid_from_iterations(
    delta: f64,
    horizon: f64,
    iterations: usize,
) -> Result<SolvedGrid, ProcessError> {
    validate_grid_inputs(delta, horizon)?;
    let target = iterations + 1;
    let hi = 0.5 - 1e-12;
    let at_hi = step_count(delta, horizon, hi);
    if at_hi > target {
        return Err(ProcessError::TooFewIterations {
            requested: iterations,
            minimum: at_hi - 1,
        });
    }
    if at_hi == target {
        let grid = build_time_grid(delta, horizon, hi)?;
        return Ok(SolvedGrid {
            c: hi,
            grid,
            at_boundary: true,
        });
    }
    // invariant: count(lo) >= target > count(hi)
    let mut lo = 1e-9;
    let mut hi = hi;
    if step_count(delta, horizon, lo) < target {
        return Err(ProcessError::NoMatchingStepRatio { requested: iterations });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if step_count(delta, horizon, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if step_count(delta, horizon, lo) != target {
        return Err(ProcessError::NoMatchingStepRatio { requested: iterations });
    }
    let grid = build_time_grid(delta, horizon, lo)?;
    Ok(SolvedGrid {
        c: lo,
        grid,
        at_boundary: false,
    })
}

/// Coefficients of the forward transition `x(t) = scale * y + noise_std * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardCoeffs {
    pub scale: f64,
    pub noise_std: f64,
}

/// `(e^{-t}, sqrt(1 - e^{-2t}))` for `t >= 0`.
pub fn forward_coeffs(t: f64) -> ForwardCoeffs {
    assert!(t >= 0.0, "forward time must be nonnegative, got {t}");
    ForwardCoeffs {
        scale: (-t).exp(),
        noise_std: (-(-2.0 * t).exp_m1()).sqrt(),
    }
}

/// One exact draw of the forward process given the noise.
pub fn forward_sample(
    y: &DVector<f64>,
    t: f64,
    noise: &DVector<f64>,
) -> Result<DVector<f64>, ProcessError> {
    if y.len() != noise.len() {
        return Err(ProcessError::DimensionMismatch(y.len(), noise.len()));
    }
    let cf = forward_coeffs(t);
    Ok(y * cf.scale + noise * cf.noise_std)
}

/// Rescale to the pure-diffusion coordinates, `z = e^t x`.
pub fn rescale_to_z(x: &DVector<f64>, t: f64) -> DVector<f64> {
    assert!(t >= 0.0);
    x * t.exp()
}

/// Inverse rescaling, `x = e^{-t} z`.
pub fn rescale_from_z(z: &DVector<f64>, t: f64) -> DVector<f64> {
    assert!(t >= 0.0);
    z * (-t).exp()
}
