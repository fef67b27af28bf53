//! Evaluation metrics: SI-SDR, kernel MMD, drift statistics and PCA
//! snapshots of frame distributions.

use std::fmt::Write as _;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::drift::{LatentBatch, SetRole};
use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Reported in place of `+inf` when the residual vanishes.
pub const SI_SDR_CAP_DB: f64 = 100.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Scale-invariant SDR in dB. With `remove_mean`, both signals are
/// zero-meaned first.
pub fn si_sdr_with(estimate: &[f64], reference: &[f64], remove_mean: bool) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), found: estimate.len() });
    }
    let centre = |x: &[f64]| -> Vec<f64> {
        if remove_mean && !x.is_empty() {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| v - m).collect()
        } else {
            x.to_vec()
        }
    };
    let (e, s) = (centre(estimate), centre(reference));
    let ss = dot(&s, &s);
    if ss == 0.0 {
        return Err(Error::ZeroEnergy("reference"));
    }
    let alpha = dot(&e, &s) / ss;
    let target: Vec<f64> = s.iter().map(|v| alpha * v).collect();
    let tt = dot(&target, &target);
    let resid: f64 = e.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
    if resid == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if tt == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (tt / resid).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

pub fn si_sdr(estimate: &Waveform, reference: &Waveform) -> Result<f64> {
    si_sdr_with(estimate.samples(), reference.samples(), false)
}

/// `10 log10(||clean||^2 / ||mixture - clean||^2)`.
pub fn measured_snr_db(clean: &[f64], mixture: &[f64]) -> Result<f64> {
    if clean.len() != mixture.len() {
        return Err(Error::DimensionMismatch { expected: clean.len(), found: mixture.len() });
    }
    let noise: f64 = clean.iter().zip(mixture).map(|(c, m)| (m - c).powi(2)).sum();
    if noise == 0.0 {
        return Err(Error::ZeroEnergy("noise component"));
    }
    Ok(10.0 * (dot(clean, clean) / noise).log10())
}

fn mean_kernel(a: &LatentBatch, b: &LatentBatch, tau: f64) -> f64 {
    let mut total = 0.0;
    for x in a.points() {
        let mut row = 0.0;
        for y in b.points() {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            row += (-d2.sqrt() / tau).exp();
        }
        total += row;
    }
    total / (a.len() * b.len()) as f64
}

/// Biased (V-statistic) squared MMD under `exp(-||x - y|| / tau)`.
pub fn mmd2(a: &LatentBatch, b: &LatentBatch, tau: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBatch("mmd input"));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let kab = mean_kernel(a, b, tau);
    let kba = mean_kernel(b, a, tau);
    Ok(mean_kernel(a, a, tau) + mean_kernel(b, b, tau) - (kab + kba))
}

/// Median Euclidean distance over all unordered pairs of distinct points.
pub fn median_distance(a: &LatentBatch) -> Result<f64> {
    if a.len() < 2 {
        return Err(Error::EmptyBatch("median distance needs two points"));
    }
    let mut d = Vec::with_capacity(a.len() * (a.len() - 1) / 2);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            d.push(a.point(i).iter().zip(a.point(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len() / 2;
    Ok(if d.len() % 2 == 1 { d[m] } else { 0.5 * (d[m - 1] + d[m]) })
}

pub fn centroid_distance(a: &LatentBatch, b: &LatentBatch) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBatch("centroid"));
    }
    Ok(a.mean().iter().zip(b.mean()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Power-weighted mean frequency in Hz.
pub fn spectral_centroid(w: &Waveform) -> Result<f64> {
    if w.energy() == 0.0 {
        return Err(Error::ZeroEnergy("waveform"));
    }
    let n = w.len();
    let mut buf: Vec<Complex64> = w.samples().iter().map(|&s| Complex64::new(s, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let (mut num, mut den) = (0.0, 0.0);
    for (k, c) in buf.iter().take(n / 2 + 1).enumerate() {
        let p = c.norm_sqr();
        num += p * k as f64 * w.sample_rate() as f64 / n as f64;
        den += p;
    }
    Ok(num / den)
}

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITER: usize = 10_000;

/// Two leading principal axes of a frame set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

impl Pca2 {
    pub fn project_point(&self, x: &[f64]) -> [f64; 2] {
        let c: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        [dot(&c, &self.components[0]), dot(&c, &self.components[1])]
    }

    pub fn project(&self, frames: &LatentBatch) -> Vec<[f64; 2]> {
        frames.points().map(|p| self.project_point(p)).collect()
    }
}

/// Result of [`pca2_project`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub basis: Pca2,
    pub points: Vec<[f64; 2]>,
    /// Mean of the projected points (zero up to rounding).
    pub centroid: [f64; 2],
    /// Mean of the frames in the original space.
    pub centroid_original: Vec<f64>,
}

fn covariance(frames: &LatentBatch, mean: &[f64]) -> Vec<Vec<f64>> {
    let d = frames.dim();
    let mut cov = vec![vec![0.0; d]; d];
    for p in frames.points() {
        let c: Vec<f64> = p.iter().zip(mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    let n = (frames.len() - 1).max(1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }
    cov
}

/// Dominant eigenpair by power iteration. The start vector is fixed so the
/// result is deterministic.
fn power_iteration(m: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = m.len();
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
    let n0 = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n0);
    let mut lambda = 0.0;
    for _ in 0..PCA_MAX_ITER {
        let w: Vec<f64> = m.iter().map(|row| dot(row, &v)).collect();
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return (0.0, v);
        }
        let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
        let new_lambda = dot(&next, &m.iter().map(|row| dot(row, &next)).collect::<Vec<_>>());
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        let settled = (new_lambda - lambda).abs() <= PCA_TOL * new_lambda.abs().max(1e-300);
        lambda = new_lambda;
        if delta < PCA_TOL || settled {
            break;
        }
    }
    (lambda, v)
}

/// Fits the two leading covariance eigenvectors (power iteration with
/// deflation).
pub fn pca2_fit(frames: &LatentBatch) -> Result<Pca2> {
    if frames.len() < 3 {
        return Err(Error::EmptyBatch("pca needs at least 3 frames"));
    }
    let mean = frames.mean();
    let mut cov = covariance(frames, &mean);
    let trace: f64 = (0..cov.len()).map(|i| cov[i][i]).sum();
    if trace <= 0.0 {
        return Err(Error::Numerical("rank-0 input to pca".into()));
    }
    let (l1, v1) = power_iteration(&cov);
    for (i, row) in cov.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, mut v2) = if frames.dim() >= 2 { power_iteration(&cov) } else { (0.0, vec![0.0]) };
    // Re-orthogonalise against the first axis.
    let proj = dot(&v2, &v1);
    v2.iter_mut().zip(&v1).for_each(|(a, b)| *a -= proj * b);
    let n2 = dot(&v2, &v2).sqrt();
    if n2 > 0.0 {
        v2.iter_mut().for_each(|a| *a /= n2);
    }
    Ok(Pca2 { mean, components: [v1, v2], eigenvalues: [l1, l2.max(0.0)] })
}

pub fn pca2_project(frames: &LatentBatch) -> Result<Projection> {
    let basis = pca2_fit(frames)?;
    let points = basis.project(frames);
    let n = points.len() as f64;
    let centroid = points.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0] / n, acc[1] + p[1] / n]);
    let centroid_original = basis.mean.clone();
    Ok(Projection { basis, points, centroid, centroid_original })
}

/// One evaluation row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub mmd2: f64,
    pub mean_drift_norm: Vec<f64>,
    pub centroid_distance: f64,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let finite = self.si_sdr_db.is_finite()
            && self.mmd2.is_finite()
            && self.centroid_distance.is_finite()
            && self.mean_drift_norm.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("metric report"));
        }
        if self.mmd2 < -1e-12 {
            return Err(Error::Numerical(format!("negative mmd2 {}", self.mmd2)));
        }
        Ok(())
    }

    pub fn csv_header(layers: usize) -> Vec<String> {
        let mut h = vec!["si_sdr_db".to_string(), "mmd2".to_string()];
        h.extend((0..layers).map(|l| format!("mean_drift_norm_{l}")));
        h.push("centroid_distance".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let mut r = vec![self.si_sdr_db.to_string(), self.mmd2.to_string()];
        r.extend(self.mean_drift_norm.iter().map(f64::to_string));
        r.push(self.centroid_distance.to_string());
        r
    }

    /// `{"key": value, ...}` summary line.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{{\"si_sdr_db\": {}, \"mmd2\": {}, \"mean_drift_norm\": {:?}, \"centroid_distance\": {}}}",
            self.si_sdr_db, self.mmd2, self.mean_drift_norm, self.centroid_distance
        );
        s
    }
}

/// Gathers 2-D points into a batch.
pub fn points_to_batch(points: &[[f64; 2]]) -> Result<LatentBatch> {
    LatentBatch::new(2, points.iter().flatten().copied().collect(), SetRole::Query)
}
