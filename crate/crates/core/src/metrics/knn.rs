//! k-nearest-neighbor KL estimator with a small kd-tree underneath.
//!
//! For `n` points `x_i ~ p` and `m` points `~ q`, with `rho_k(i)` the k-th
//! neighbor distance of `x_i` inside the `p` sample (self excluded) and
//! `nu_k(i)` the k-th neighbor distance into the `q` sample,
//!
//! ```text
//! KL(p || q) ~= (d/n) sum_i ln(nu_k(i) / rho_k(i)) + ln(m / (n - 1)) .
//! ```
//!
//! The estimator is consistent but biased at finite `n`; it is reported with
//! a bootstrap confidence interval and used for diagnostics only.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::MetricsError;
use crate::numeric::pairwise_sum;
use crate::rng::{stream, tags};
use crate::sampler::SampleBatch;

/// kNN KL estimate with bootstrap uncertainty.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KnnKlEstimate {
    pub nats: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when duplicate points forced a deterministic jitter.
    pub jittered: bool,
}

struct KdTree<'a> {
    pts: &'a [Vec<f64>],
    // nodes laid out in pre-order: point index and split axis per node
    order: Vec<u32>,
    axis: Vec<u8>,
}

impl<'a> KdTree<'a> {
    fn build(pts: &'a [Vec<f64>]) -> Self {
        let dim = pts[0].len();
        let mut idx: Vec<u32> = (0..pts.len() as u32).collect();
        let mut order = Vec::with_capacity(pts.len());
        let mut axis = vec![0u8; pts.len()];
        Self::build_rec(pts, &mut idx[..], dim, &mut order, &mut axis);
        Self { pts, order, axis }
    }

    /// Pre-order layout: root first, then the left subtree (`len/2` nodes),
    /// then the right subtree.
    fn build_rec(pts: &[Vec<f64>], idx: &mut [u32], dim: usize, order: &mut Vec<u32>, axis: &mut [u8]) {
        if idx.is_empty() {
            return;
        }
        // split on the widest axis of this cell
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for a in 0..dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in idx.iter() {
                let v = pts[i as usize][a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = a;
            }
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            pts[a as usize][best_axis]
                .partial_cmp(&pts[b as usize][best_axis])
                .expect("finite coordinates")
        });
        let node = order.len();
        order.push(idx[mid]);
        axis[node] = best_axis as u8;
        let (left, rest) = idx.split_at_mut(mid);
        let right = &mut rest[1..];
        Self::build_rec(pts, left, dim, order, axis);
        Self::build_rec(pts, right, dim, order, axis);
    }
}

/// Recursive kNN query over the implicit tree layout. `heap` holds squared
/// distances, largest first, capped at `k` entries.
struct Query<'a> {
    tree: &'a KdTree<'a>,
    target: &'a [f64],
    exclude: Option<u32>,
    k: usize,
    heap: Vec<f64>, // max-heap by manual sift (k is small)
}

impl<'a> Query<'a> {
    fn push(&mut self, d2: f64) {
        if self.heap.len() < self.k {
            self.heap.push(d2);
            self.heap.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        } else if d2 < self.heap[0] {
            self.heap[0] = d2;
            self.heap.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        }
    }

    fn bound(&self) -> f64 {
        if self.heap.len() < self.k {
            f64::INFINITY
        } else {
            self.heap[0]
        }
    }

    fn run(&mut self, node: usize, span: usize) {
        if span == 0 {
            return;
        }
        let pt_idx = self.tree.order[node];
        let axis = self.tree.axis[node] as usize;
        let pt = &self.tree.pts[pt_idx as usize];
        if Some(pt_idx) != self.exclude {
            let d2: f64 = pt
                .iter()
                .zip(self.target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            self.push(d2);
        }
        let left_span = span / 2;
        let right_span = span - left_span - 1;
        let left_start = node + 1;
        let right_start = node + 1 + left_span;
        let delta = self.target[axis] - pt[axis];
        let (near, near_span, far, far_span) = if delta <= 0.0 {
            (left_start, left_span, right_start, right_span)
        } else {
            (right_start, right_span, left_start, left_span)
        };
        self.run(near, near_span);
        if delta * delta < self.bound() {
            self.run(far, far_span);
        }
    }
}

fn knn_distance(tree: &KdTree, target: &[f64], exclude: Option<u32>, k: usize) -> f64 {
    let mut q = Query {
        tree,
        target,
        exclude,
        k,
        heap: Vec::with_capacity(k),
    };
    q.run(0, tree.order.len());
    assert_eq!(q.heap.len(), k, "fewer than k reachable neighbors");
    q.heap[0].sqrt()
}

fn batch_rows(b: &SampleBatch) -> Vec<Vec<f64>> {
    b.rows().map(|r| r.to_vec()).collect()
}

fn data_scale(rows: &[Vec<f64>]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in rows {
        for &v in r {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (hi - lo).max(1e-12)
}

/// Estimate `KL(p || q)` from two batches; `seed` drives the bootstrap and
/// the jitter fallback for duplicate points.
pub fn knn_kl_estimate(
    samples_p: &SampleBatch,
    samples_q: &SampleBatch,
    k: usize,
    seed: u64,
) -> Result<KnnKlEstimate, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadNeighborCount);
    }
    let d = samples_p.dim();
    if samples_q.dim() != d {
        return Err(MetricsError::DimensionMismatch(d, samples_q.dim()));
    }
    let n = samples_p.n_samples();
    let m = samples_q.n_samples();
    if n < 100 || m < 100 {
        return Err(MetricsError::TooFewPoints {
            got: n.min(m),
            need: 100,
        });
    }
    if n <= k + 1 || m <= k {
        return Err(MetricsError::TooFewPoints {
            got: n.min(m),
            need: k + 2,
        });
    }
    let mut p_rows = batch_rows(samples_p);
    let mut q_rows = batch_rows(samples_q);
    let mut jittered = false;
    for attempt in 0..2 {
        let contrib = neighbor_contributions(&p_rows, &q_rows, k, d);
        if let Some(u) = contrib {
            let base = pairwise_sum(&u) / n as f64 + ((m as f64) / (n as f64 - 1.0)).ln();
            // bootstrap over per-point contributions
            const B: usize = 200;
            let mut boots = vec![0.0; B];
            boots.par_iter_mut().enumerate().for_each(|(bi, out)| {
                let mut rng = stream(seed, bi as u64, 0, tags::BOOTSTRAP);
                let mut acc = 0.0;
                for _ in 0..n {
                    acc += u[rng.gen_range(0..n)];
                }
                *out = acc / n as f64 + ((m as f64) / (n as f64 - 1.0)).ln();
            });
            boots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let mean_b = pairwise_sum(&boots) / B as f64;
            let var_b =
                boots.iter().map(|b| (b - mean_b) * (b - mean_b)).sum::<f64>() / (B as f64 - 1.0);
            return Ok(KnnKlEstimate {
                nats: base,
                std_error: var_b.sqrt(),
                ci_low: boots[(0.025 * B as f64) as usize],
                ci_high: boots[(0.975 * B as f64) as usize],
                jittered,
            });
        }
        if attempt == 1 {
            break;
        }
        // zero distances: apply a deterministic relative jitter and retry
        jittered = true;
        let scale = 1e-9 * data_scale(&p_rows).max(data_scale(&q_rows));
        let mut rng = stream(seed, 0, 0, tags::JITTER);
        for r in p_rows.iter_mut().chain(q_rows.iter_mut()) {
            for v in r.iter_mut() {
                *v += scale * (rng.gen::<f64>() - 0.5);
            }
        }
    }
    Err(MetricsError::DegenerateCovariance(d))
}

/// Per-point `d ln(nu/rho)`; `None` if any neighbor distance vanishes.
fn neighbor_contributions(
    p_rows: &[Vec<f64>],
    q_rows: &[Vec<f64>],
    k: usize,
    d: usize,
) -> Option<Vec<f64>> {
    let p_tree = KdTree::build(p_rows);
    let q_tree = KdTree::build(q_rows);
    let out: Vec<(f64, f64)> = (0..p_rows.len())
        .into_par_iter()
        .map(|i| {
            let rho = knn_distance(&p_tree, &p_rows[i], Some(i as u32), k);
            let nu = knn_distance(&q_tree, &p_rows[i], None, k);
            (rho, nu)
        })
        .collect();
    let mut u = Vec::with_capacity(out.len());
    for (rho, nu) in out {
        if rho <= 0.0 || nu <= 0.0 {
            return None;
        }
        u.push(d as f64 * (nu / rho).ln());
    }
    Some(u)
}
