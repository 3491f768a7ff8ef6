//! Batch samplers: ODE-step-then-noise, exponential-integrator reverse SDE,
//! and the pure probability-flow ODE.
//!
//! All three initialize from `N(0, I_d)` at `t_{K+1} = T` and walk the grid
//! down to `t_1`, calling the score estimate once per step. The two-phase
//! sampler's step `k` first solves the frozen-score ODE over
//! `[t_{k-2}, t_k]` exactly,
//!
//! ```text
//! x_{k-0.5} = e^{h_k + h_{k-1}} x_k + (e^{h_k + h_{k-1}} - 1) s_hat(t_k, x_k)
//! ```
//!
//! landing at `t_{k-2}`, then moves forward along the noising process to
//! `t_{k-1}`:
//!
//! ```text
//! x_{k-1} = e^{-h_{k-1}} x_{k-0.5} + sqrt(1 - e^{-2 h_{k-1}}) eta_k .
//! ```
//!
//! The loop runs `k = K+1, ..., 2`; extending to `k = 1` would need an
//! extrapolated step size `h_0` below the grid floor, which is deliberately
//! not provided.
//!
//! Randomness: one counter-based generator; the stream for (sample `i`,
//! step `k`) is derived by hashing `(seed, i, k)`, so batches are bit-equal
//! under any partitioning of samples across workers.

use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{ScoreDomain, ScoreField};
use crate::process::TimeGrid;
use crate::rng::{standard_normal_vector, stream, tags};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("step index k = {k} outside the admissible range 2..={max}")]
    StepIndexOutOfRange { k: usize, max: usize },
    #[error("sampler needs a grid with K >= 2, got K = {0}")]
    GridTooShort(usize),
    #[error("sampler needs n_samples >= 1")]
    EmptyBatch,
    #[error("samplers consume x-space score fields")]
    WrongDomain,
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad batch file: {0}")]
    BadFormat(String),
}

/// Which reverse-time discretization generates the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Two-phase: reverse-ODE step, then a forward noising step.
    OdeNoise,
    /// Exponential-integrator discretization of the reverse SDE.
    EiSde,
    /// Deterministic probability-flow ODE (noise only at initialization).
    PfOde,
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SamplerKind::OdeNoise => "ode-noise",
            SamplerKind::EiSde => "ei-sde",
            SamplerKind::PfOde => "pf-ode",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ode-noise" => Ok(SamplerKind::OdeNoise),
            "ei-sde" => Ok(SamplerKind::EiSde),
            "pf-ode" => Ok(SamplerKind::PfOde),
            other => Err(format!("unknown sampler variant '{other}'")),
        }
    }
}

/// Everything a sampling run needs; hashable into a provenance tag.
#[derive(Clone)]
pub struct SamplerConfig {
    pub grid: TimeGrid,
    pub score: Arc<dyn ScoreField>,
    pub n_samples: usize,
    pub seed: u64,
    pub kind: SamplerKind,
}

impl SamplerConfig {
    pub fn new(
        grid: TimeGrid,
        score: Arc<dyn ScoreField>,
        n_samples: usize,
        seed: u64,
        kind: SamplerKind,
    ) -> Result<Self, SamplerError> {
        if grid.iterations() < 2 {
            return Err(SamplerError::GridTooShort(grid.iterations()));
        }
        if n_samples == 0 {
            return Err(SamplerError::EmptyBatch);
        }
        if score.domain() != ScoreDomain::XSpace {
            return Err(SamplerError::WrongDomain);
        }
        Ok(Self {
            grid,
            score,
            n_samples,
            seed,
            kind,
        })
    }

    /// FNV-1a over the run-defining fields; stable across processes.
    pub fn config_hash(&self) -> u64 {
        let grid_json = serde_json::to_string(&self.grid).expect("grid serializes");
        let mut h = fnv1a(0xcbf2_9ce4_8422_2325, grid_json.as_bytes());
        h = fnv1a(h, self.kind.to_string().as_bytes());
        h = fnv1a(h, &self.n_samples.to_le_bytes());
        h = fnv1a(h, &self.seed.to_le_bytes());
        h = fnv1a(h, self.score.label().as_bytes());
        h
    }
}

fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        state ^= *b as u64;
        state = state.wrapping_mul(0x0000_0100_0000_01B3);
    }
    state
}

/// A generated batch at `t_1`, stored row-major (`n x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n: usize,
    d: usize,
    at_time: f64,
    provenance: u64,
    data: Vec<f64>,
}

impl SampleBatch {
    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Time `t_1` the batch approximates.
    pub fn at_time(&self) -> f64 {
        self.at_time
    }

    /// Hash of the generating configuration.
    pub fn provenance(&self) -> u64 {
        self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Assemble a batch from raw rows (used by tests and estimators).
    pub fn from_rows(rows: Vec<Vec<f64>>, at_time: f64, provenance: u64) -> Self {
        let n = rows.len();
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            assert_eq!(r.len(), d);
            data.extend_from_slice(&r);
        }
        Self {
            n,
            d,
            at_time,
            provenance,
            data,
        }
    }

    /// CSV export: a comment line carrying `t_1` and the config hash, a
    /// header row, then one row per sample with round-trip-exact floats.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# t1={} config={:016x}", self.at_time, self.provenance)?;
        let header: Vec<String> = (0..self.d).map(|j| format!("x{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> io::Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Compact binary dump: magic `ONSL`, version u16, d u32, n u64, then
    /// little-endian f64 data.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"ONSL")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&(self.d as u32).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_binary<P: AsRef<Path>>(&self, path: P) -> io::Result<()> {
        self.write_binary(io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// Read back a binary dump; time and provenance are not part of the
    /// format and come back as `(0.0, 0)`.
    pub fn read_binary<R: Read>(mut r: R) -> Result<SampleBatch, SamplerError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"ONSL" {
            return Err(SamplerError::BadFormat("bad magic".into()));
        }
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let version = u16::from_le_bytes(b2);
        if version != 1 {
            return Err(SamplerError::BadFormat(format!("unknown version {version}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        let mut data = vec![0.0; n * d];
        for v in &mut data {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        Ok(SampleBatch {
            n,
            d,
            at_time: 0.0,
            provenance: 0,
            data,
        })
    }
}

/// One two-phase step from `t_k` to `t_{k-1}`: the ODE half lands at
/// `t_{k-2} = t_k - h_k - h_{k-1}`, the noise half moves forward to
/// `t_{k-1}`. Valid for `2 <= k <= K+1`.
pub fn ode_noise_step(
    x_k: &DVector<f64>,
    k: usize,
    grid: &TimeGrid,
    s_hat: &dyn ScoreField,
    noise: &DVector<f64>,
) -> Result<DVector<f64>, SamplerError> {
    let max = grid.iterations() + 1;
    if k < 2 || k > max {
        return Err(SamplerError::StepIndexOutOfRange { k, max });
    }
    let t_k = grid.time(k);
    let h_pair = grid.step(k) + grid.step(k - 1);
    let em1 = h_pair.exp_m1();
    let s = s_hat.score(t_k, x_k);
    let half = x_k * (em1 + 1.0) + s * em1;
    let h = grid.step(k - 1);
    Ok(half * (-h).exp() + noise * (-(-2.0 * h).exp_m1()).sqrt())
}

fn ei_sde_step(
    x_k: &DVector<f64>,
    k: usize,
    grid: &TimeGrid,
    s_hat: &dyn ScoreField,
    noise: &DVector<f64>,
) -> DVector<f64> {
    let t_k = grid.time(k);
    let h = grid.step(k);
    let em1 = h.exp_m1();
    let s = s_hat.score(t_k, x_k);
    x_k * (em1 + 1.0) + s * (2.0 * em1) + noise * (2.0 * h).exp_m1().sqrt()
}

fn pf_ode_step(x_k: &DVector<f64>, k: usize, grid: &TimeGrid, s_hat: &dyn ScoreField) -> DVector<f64> {
    let t_k = grid.time(k);
    let h = grid.step(k);
    let em1 = h.exp_m1();
    let s = s_hat.score(t_k, x_k);
    x_k * (em1 + 1.0) + s * em1
}

/// One fused reverse step,
/// `x <- keep * x + pull * s_hat(t_k, x) + noise_std * eta`. For affine
/// score fields the score folds into a per-step kernel
/// `x <- M x + off + noise_std * eta`, precomputed once for the whole batch.
struct StepKernel {
    k: usize,
    t_k: f64,
    keep: f64,
    pull: f64,
    noise_std: f64,
    affine: Option<(nalgebra::DMatrix<f64>, DVector<f64>)>,
}

fn step_table(grid: &TimeGrid, kind: SamplerKind, score: &dyn ScoreField) -> Vec<StepKernel> {
    let d = score.dim();
    grid.sampler_step_range()
        .rev()
        .map(|k| {
            let t_k = grid.time(k);
            let h_k = grid.step(k);
            let (keep, pull, noise_std) = match kind {
                SamplerKind::OdeNoise => {
                    // ODE half over h_k + h_{k-1}, then the noising half
                    // contracts by e^{-h_{k-1}}
                    let h_prev = grid.step(k - 1);
                    let em1 = (h_k + h_prev).exp_m1();
                    let shrink = (-h_prev).exp();
                    (
                        (em1 + 1.0) * shrink,
                        em1 * shrink,
                        (-(-2.0 * h_prev).exp_m1()).sqrt(),
                    )
                }
                SamplerKind::EiSde => {
                    let em1 = h_k.exp_m1();
                    (em1 + 1.0, 2.0 * em1, (2.0 * h_k).exp_m1().sqrt())
                }
                SamplerKind::PfOde => {
                    let em1 = h_k.exp_m1();
                    (em1 + 1.0, em1, 0.0)
                }
            };
            let affine = score.affine_coeffs(t_k).map(|(a, b)| {
                let m = nalgebra::DMatrix::<f64>::identity(d, d) * keep + a * pull;
                (m, b * pull)
            });
            StepKernel {
                k,
                t_k,
                keep,
                pull,
                noise_std,
            affine,
            }
        })
        .collect()
}

/// Generate the batch at `t_1` for the configured variant. Deterministic
/// given the seed, independent of thread count.
pub fn run_sampler(config: &SamplerConfig) -> SampleBatch {
    let d = config.score.dim();
    let grid = &config.grid;
    let score = config.score.as_ref();
    let seed = config.seed;
    let with_noise = config.kind != SamplerKind::PfOde;
    let steps = step_table(grid, config.kind, score);
    let mut data = vec![0.0; config.n_samples * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let lane = i as u64;
        let mut init_rng = stream(seed, lane, 0, tags::INIT);
        let mut x = standard_normal_vector(&mut init_rng, d);
        let mut noise = DVector::zeros(d);
        let mut scratch = DVector::zeros(d);
        for c in &steps {
            match &c.affine {
                Some((m, off)) => {
                    scratch.gemv(1.0, m, &x, 0.0);
                    scratch += off;
                    std::mem::swap(&mut x, &mut scratch);
                }
                None => {
                    let s = score.score(c.t_k, &x);
                    x *= c.keep;
                    x.axpy(c.pull, &s, 1.0);
                }
            }
            if with_noise {
                let mut rng = stream(seed, lane, c.k as u64, tags::STEP);
                crate::rng::fill_standard_normal(&mut rng, &mut noise);
                x.axpy(c.noise_std, &noise, 1.0);
            }
        }
        out.copy_from_slice(x.as_slice());
    });
    SampleBatch {
        n: config.n_samples,
        d,
        at_time: grid.time(1),
        provenance: config.config_hash(),
        data,
    }
}
