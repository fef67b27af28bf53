//! Kernel drift fields.
//!
//! A drift field moves every query point toward the kernel-weighted mean of a
//! positive set (samples of the data distribution) and away from the
//! kernel-weighted mean of a negative set (samples of the current model
//! distribution):
//!
//! ```text
//! V(q) = V+(q) - V-(q)
//! V+(q) = sum_i k(q, y+_i) (y+_i - q) / sum_i k(q, y+_i)
//! V-(q) = sum_j k(q, y-_j) (y-_j - q) / sum_j k(q, y-_j)
//! ```
//!
//! Substituting the normalizers gives the joint form in which the `-q` terms
//! cancel:
//!
//! ```text
//! V(q) = 1/(Zp Zq) sum_i sum_j k(q, y+_i) k(q, y-_j) (y+_i - y-_j)
//! ```
//!
//! The double sum factors exactly into `Zq * Sp - Zp * Sq` with
//! `S = sum k y`, which is what [`drift_unified`] evaluates. Both sets are
//! visited in a canonical (lexicographic) order so that equal multisets give
//! bitwise-identical partial sums and the field is exactly zero at
//! equilibrium.
//!
//! The kernel is `k_tau(x, y) = exp(-||x - y||_2 / tau)`.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Normalizers (mean kernel weight) below this value switch the weights to
/// the shifted form `exp(-(d - d_min) / tau)`.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

/// Temperatures of the multi-temperature exponential kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    temperatures: Vec<f64>,
}

impl KernelConfig {
    /// Temperatures must be positive, finite and strictly increasing.
    pub fn new(temperatures: Vec<f64>) -> Result<Self> {
        if temperatures.is_empty() {
            return Err(Error::InvalidConfig("kernel needs at least one temperature".into()));
        }
        if temperatures.iter().any(|t| !t.is_finite() || *t <= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be positive and finite, got {temperatures:?}"
            )));
        }
        if temperatures.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(format!(
                "temperatures must be strictly increasing, got {temperatures:?}"
            )));
        }
        Ok(Self { temperatures })
    }

    pub fn single(tau: f64) -> Result<Self> {
        Self::new(vec![tau])
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temperatures
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { temperatures: vec![0.1, 0.5, 1.0] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetRole {
    /// Samples of the data distribution.
    Positive,
    /// Samples of the current model distribution.
    Negative,
    /// Points at which a field is evaluated.
    Query,
}

/// A set of `d`-dimensional points stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    dim: usize,
    data: Vec<f64>,
    role: SetRole,
}

impl LatentBatch {
    pub fn new(dim: usize, data: Vec<f64>, role: SetRole) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("latent dimension must be at least 1".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, found: data.len() % dim });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent batch"));
        }
        Ok(Self { dim, data, role })
    }

    pub fn from_points(points: &[Vec<f64>], role: SetRole) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptyBatch("no points"))?;
        let mut data = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            data.extend_from_slice(p);
        }
        Self::new(dim, data, role)
    }

    pub fn empty(dim: usize, role: SetRole) -> Self {
        Self { dim: dim.max(1), data: Vec::new(), role }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn role(&self) -> SetRole {
        self.role
    }

    pub fn with_role(mut self, role: SetRole) -> Self {
        self.role = role;
        self
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Appends every point of `other`, which must share the dimension.
    pub fn extend(&mut self, other: &LatentBatch) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: other.dim });
        }
        self.data.extend_from_slice(&other.data);
        Ok(())
    }

    pub fn concat(batches: &[&LatentBatch], role: SetRole) -> Result<Self> {
        let dim = batches.first().map(|b| b.dim).ok_or(Error::EmptyBatch("nothing to concatenate"))?;
        let mut out = Self::empty(dim, role);
        for b in batches {
            out.extend(b)?;
        }
        Ok(out)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.points() {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Point indices in lexicographic coordinate order.
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| lexicographic(self.point(a), self.point(b)).then(a.cmp(&b)));
        idx
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `exp(-||x - y||_2 / tau)`.
pub fn kernel_eval(x: &[f64], y: &[f64], tau: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    check_tau(tau)?;
    Ok((-euclidean(x, y) / tau).exp())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")))
    }
}

/// Attraction, repulsion and total drift at a single query.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedDrift {
    pub attraction: Vec<f64>,
    pub repulsion: Vec<f64>,
    pub total: Vec<f64>,
}

fn check_sets(query: &[f64], pos: &LatentBatch, neg: &LatentBatch) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::EmptyBatch("positive set"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyBatch("negative set"));
    }
    for dim in [pos.dim, neg.dim] {
        if dim != query.len() {
            return Err(Error::DimensionMismatch { expected: query.len(), found: dim });
        }
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query"));
    }
    Ok(())
}

/// Kernel weights for one set at one temperature, shifted by the smallest
/// distance when the plain normalizer would underflow.
fn weights(dists: &[f64], tau: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.extend(dists.iter().map(|d| (-d / tau).exp()));
    let z: f64 = out.iter().sum::<f64>() / dists.len() as f64;
    if z >= NORMALIZER_FLOOR {
        return z.ln();
    }
    let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(dists.iter().map(|d| (-(d - dmin) / tau).exp()));
    let shifted: f64 = out.iter().sum::<f64>() / dists.len() as f64;
    shifted.ln() - dmin / tau
}

/// Mean-shift form: each force is accumulated term by term as
/// `k(q, y) (y - q)` and divided by its own normalizer.
pub fn drift_decomposed(query: &[f64], pos: &LatentBatch, neg: &LatentBatch, tau: f64) -> Result<DecomposedDrift> {
    check_sets(query, pos, neg)?;
    check_tau(tau)?;
    let mean_shift = |set: &LatentBatch| {
        let dists: Vec<f64> = set.points().map(|y| euclidean(query, y)).collect();
        let mut w = Vec::new();
        weights(&dists, tau, &mut w);
        let mut acc = vec![0.0; query.len()];
        let mut z = 0.0;
        for (y, wi) in set.points().zip(&w) {
            for ((a, yk), qk) in acc.iter_mut().zip(y).zip(query) {
                *a += wi * (yk - qk);
            }
            z += wi;
        }
        acc.iter_mut().for_each(|a| *a /= z);
        acc
    };
    let attraction = mean_shift(pos);
    let repulsion = mean_shift(neg);
    let total = attraction.iter().zip(&repulsion).map(|(a, r)| a - r).collect();
    Ok(DecomposedDrift { attraction, repulsion, total })
}

/// Per-set sufficient statistics at one temperature: scaled normalizer
/// `Z = sum w`, weighted sum `S = sum w y` and the log of the true mean kernel.
struct SetMoments {
    z: f64,
    s: Vec<f64>,
    log_mean_kernel: f64,
}

fn moments(set: &LatentBatch, order: &[usize], dists: &[f64], skip: Option<usize>, tau: f64, scratch: &mut Vec<f64>) -> SetMoments {
    let d_kept: Vec<f64> = order.iter().filter(|&&i| Some(i) != skip).map(|&i| dists[i]).collect();
    let log_mean_kernel = weights(&d_kept, tau, scratch);
    let mut s = vec![0.0; set.dim];
    let mut z = 0.0;
    for (&i, w) in order.iter().filter(|&&i| Some(i) != skip).zip(scratch.iter()) {
        for (a, y) in s.iter_mut().zip(set.point(i)) {
            *a += w * y;
        }
        z += w;
    }
    SetMoments { z, s, log_mean_kernel }
}

/// `(Zq Sp - Zp Sq) / (Zp Zq)`, exactly zero when both moment sets agree.
fn joint_field(p: &SetMoments, q: &SetMoments) -> Vec<f64> {
    let denom = p.z * q.z;
    p.s.iter().zip(&q.s).map(|(sp, sq)| (q.z * sp - p.z * sq) / denom).collect()
}

/// Joint form of the drift field at a single query.
pub fn drift_unified(query: &[f64], pos: &LatentBatch, neg: &LatentBatch, tau: f64) -> Result<Vec<f64>> {
    check_sets(query, pos, neg)?;
    check_tau(tau)?;
    let pos_order = pos.canonical_order();
    let neg_order = neg.canonical_order();
    let pd: Vec<f64> = pos.points().map(|y| euclidean(query, y)).collect();
    let nd: Vec<f64> = neg.points().map(|y| euclidean(query, y)).collect();
    let mut scratch = Vec::new();
    let p = moments(pos, &pos_order, &pd, None, tau, &mut scratch);
    let q = moments(neg, &neg_order, &nd, None, tau, &mut scratch);
    Ok(joint_field(&p, &q))
}

/// Drift evaluated at many queries under a multi-temperature kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    dim: usize,
    /// Row-major, one row per query: the mean over temperatures.
    vectors: Vec<f64>,
    /// `per_temperature[t]` is row-major with one row per query.
    per_temperature: Vec<Vec<f64>>,
    /// `(ln Zp, ln Zq)` per query per temperature, indexed `query * n_tau + t`.
    log_normalizers: Vec<(f64, f64)>,
}

impl DriftField {
    /// Stacks fields over disjoint query sets, in order.
    pub fn concat(parts: &[DriftField]) -> DriftField {
        let dim = parts.first().map_or(0, |p| p.dim);
        let n_tau = parts.first().map_or(0, |p| p.per_temperature.len());
        let mut out = DriftField {
            dim,
            vectors: Vec::new(),
            per_temperature: vec![Vec::new(); n_tau],
            log_normalizers: Vec::new(),
        };
        for p in parts {
            out.vectors.extend_from_slice(&p.vectors);
            for (dst, src) in out.per_temperature.iter_mut().zip(&p.per_temperature) {
                dst.extend_from_slice(src);
            }
            out.log_normalizers.extend_from_slice(&p.log_normalizers);
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn per_temperature(&self) -> &[Vec<f64>] {
        &self.per_temperature
    }

    pub fn log_normalizers(&self) -> &[(f64, f64)] {
        &self.log_normalizers
    }

    pub fn norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.vectors.chunks_exact(self.dim).map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
    }

    pub fn mean_norm(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.norms().sum::<f64>() / n as f64
    }

    /// Mean squared drift magnitude over queries.
    pub fn mean_sq_norm(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.vectors.iter().map(|x| x * x).sum::<f64>() / n as f64
    }
}

/// Whether a query that belongs to the negative set contributes to its own
/// repulsion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfInclusion {
    /// The query counts as a negative sample with weight `k(q, q) = 1`.
    #[default]
    Include,
    /// The matching negative index is skipped.
    Exclude,
}

fn field_impl(
    queries: &LatentBatch,
    pos: &LatentBatch,
    neg: &LatentBatch,
    cfg: &KernelConfig,
    skip_self: bool,
) -> Result<DriftField> {
    if queries.is_empty() {
        return Err(Error::EmptyBatch("query set"));
    }
    if pos.is_empty() {
        return Err(Error::EmptyBatch("positive set"));
    }
    if neg.is_empty() || (skip_self && neg.len() < 2) {
        return Err(Error::EmptyBatch("negative set"));
    }
    let dim = queries.dim;
    for d in [pos.dim, neg.dim] {
        if d != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: d });
        }
    }
    let temps = cfg.temperatures();
    let n_tau = temps.len();
    let pos_order = pos.canonical_order();
    let neg_order = neg.canonical_order();

    struct Row {
        mean: Vec<f64>,
        per_tau: Vec<Vec<f64>>,
        log_z: Vec<(f64, f64)>,
    }

    let rows: Vec<Row> = (0..queries.len())
        .into_par_iter()
        .map(|qi| {
            let q = queries.point(qi);
            let pd: Vec<f64> = pos.points().map(|y| euclidean(q, y)).collect();
            let nd: Vec<f64> = neg.points().map(|y| euclidean(q, y)).collect();
            let skip = skip_self.then_some(qi);
            let mut scratch = Vec::with_capacity(pos.len().max(neg.len()));
            let mut mean = vec![0.0; dim];
            let mut per_tau = Vec::with_capacity(n_tau);
            let mut log_z = Vec::with_capacity(n_tau);
            for &tau in temps {
                let p = moments(pos, &pos_order, &pd, None, tau, &mut scratch);
                let m = moments(neg, &neg_order, &nd, skip, tau, &mut scratch);
                let v = joint_field(&p, &m);
                for (a, b) in mean.iter_mut().zip(&v) {
                    *a += b;
                }
                log_z.push((p.log_mean_kernel, m.log_mean_kernel));
                per_tau.push(v);
            }
            mean.iter_mut().for_each(|a| *a /= n_tau as f64);
            Row { mean, per_tau, log_z }
        })
        .collect();

    let mut vectors = Vec::with_capacity(queries.len() * dim);
    let mut per_temperature = vec![Vec::with_capacity(queries.len() * dim); n_tau];
    let mut log_normalizers = Vec::with_capacity(queries.len() * n_tau);
    for row in rows {
        vectors.extend_from_slice(&row.mean);
        for (t, v) in row.per_tau.iter().enumerate() {
            per_temperature[t].extend_from_slice(v);
        }
        log_normalizers.extend(row.log_z);
    }
    if vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("drift field"));
    }
    Ok(DriftField { dim, vectors, per_temperature, log_normalizers })
}

/// Drift at every query, averaged over the configured temperatures. Each
/// temperature is normalized separately before averaging.
pub fn drift_multi_temperature(
    queries: &LatentBatch,
    pos: &LatentBatch,
    neg: &LatentBatch,
    cfg: &KernelConfig,
) -> Result<DriftField> {
    field_impl(queries, pos, neg, cfg, false)
}

/// Drift at every generated point, with the generated set itself as the
/// negatives.
pub fn drift_on_generated(
    generated: &LatentBatch,
    pos: &LatentBatch,
    cfg: &KernelConfig,
    self_inclusion: SelfInclusion,
) -> Result<DriftField> {
    field_impl(generated, pos, generated, cfg, self_inclusion == SelfInclusion::Exclude)
}
