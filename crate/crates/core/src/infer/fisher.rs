//! Per-class Fisher information by Monte-Carlo expectation.
//!
//! For class `k`, with `w(y) = A(y) / (A(y)·λ)` and `v = s / (s·λ)`,
//!
//! ```text
//! I^k = N^k · ( E_y[w wᵀ] − v vᵀ )
//! ```
//!
//! The expectation is the mean over Monte-Carlo events of the class. Both
//! terms are computed from normalised rows and accumulated relative to `v`,
//! so that cancellations that hold algebraically (a one-voxel image) also
//! hold exactly in floating point.

use std::io::Write;

use serde::Serialize;

use super::{ActivityImage, SystemRow};
use crate::class::ClassTag;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{Domain, StreamKey};
use crate::simulate::{generate_decay, ImageSampler, Outcome, Simulator};
use crate::sysmodel::{build_rows, KernelParams, SensitivityMap};

/// Largest image accepted without an explicit override; the matrix is dense.
pub const FISHER_MAX_VOXELS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherMatrix {
    pub class: ClassTag,
    pub dim: usize,
    /// Row-major `dim × dim`, exactly symmetric.
    pub data: Vec<f64>,
    /// `N^k`, the event count the information is scaled to.
    pub n_events: f64,
    /// Monte-Carlo events that entered the mean.
    pub mc_samples: usize,
    /// Standard error of each component of `I λ` (zero in expectation).
    pub projection_se: Vec<f64>,
}

impl FisherMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.data, self.dim, x)
    }

    /// Raw little-endian `f64` dump, row-major.
    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn matvec(m: &[f64], dim: usize, x: &[f64]) -> Vec<f64> {
    (0..dim)
        .map(|i| m[i * dim..(i + 1) * dim].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Row normalised to unit sum, then divided by its projection of `λ`.
/// `None` when the row or its projection vanishes.
fn normalised_ratio(row: &SystemRow, lambda: &[f64]) -> Option<Vec<(usize, f64)>> {
    let total: f64 = row.values.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let r: Vec<(usize, f64)> = row.iter().map(|(j, a)| (j, a / total)).collect();
    let fwd: f64 = r.iter().map(|&(j, x)| x * lambda[j]).sum();
    (fwd > 0.0).then(|| r.into_iter().map(|(j, x)| (j, x / fwd)).collect())
}

fn sensitivity_ratio(sens: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = sens.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateImage("class has zero sensitivity".into()));
    }
    let r: Vec<f64> = sens.iter().map(|s| s / total).collect();
    let mu: f64 = r.iter().zip(lambda).map(|(a, b)| a * b).sum();
    if !(mu > 0.0) {
        return Err(Error::DegenerateImage(
            "expected class count is zero".into(),
        ));
    }
    Ok(r.into_iter().map(|x| x / mu).collect())
}

fn check_dims(image: &ActivityImage, sens: &[f64], allow_large: bool) -> Result<usize> {
    let dim = image.len();
    if sens.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "sensitivity has {} voxels, image {dim}",
            sens.len()
        )));
    }
    if dim > FISHER_MAX_VOXELS && !allow_large {
        return Err(Error::InvalidParameter(format!(
            "Fisher matrix for {dim} voxels exceeds the limit of {FISHER_MAX_VOXELS}"
        )));
    }
    Ok(dim)
}

/// Fisher information of one class from the rows of its Monte-Carlo events.
/// `n_events` is the `N^k` the result is scaled to.
pub fn fisher_from_rows(
    class: ClassTag,
    rows: &[SystemRow],
    image: &ActivityImage,
    sens: &[f64],
    n_events: f64,
    allow_large: bool,
) -> Result<FisherMatrix> {
    let dim = check_dims(image, sens, allow_large)?;
    let lambda = &image.values;
    let v = sensitivity_ratio(sens, lambda)?;
    let scale_ref: Vec<f64> = v.iter().map(|&x| if x > 0.0 { x } else { 1.0 }).collect();

    let mut gram = vec![0.0; dim * dim];
    let mut sum_w = vec![0.0; dim];
    let mut sum_w2 = vec![0.0; dim];
    let mut used = 0usize;
    for row in rows {
        let Some(w) = normalised_ratio(row, lambda) else {
            continue;
        };
        used += 1;
        let u: Vec<(usize, f64)> = w.iter().map(|&(j, x)| (j, x / scale_ref[j])).collect();
        for (a, &(i, ui)) in u.iter().enumerate() {
            for &(j, uj) in &u[a..] {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                gram[lo * dim + hi] += ui * uj;
            }
        }
        for &(j, x) in &w {
            sum_w[j] += x;
            sum_w2[j] += x * x;
        }
    }
    if used == 0 {
        return Err(Error::NoEvents);
    }
    let n = used as f64;
    let scale = n_events / n;
    let unit: Vec<f64> = v.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut data = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in i..dim {
            let x = scale * scale_ref[i] * scale_ref[j] * (gram[i * dim + j] - n * unit[i] * unit[j]);
            data[i * dim + j] = x;
            data[j * dim + i] = x;
        }
    }
    let projection_se = (0..dim)
        .map(|j| {
            let mean = sum_w[j] / n;
            let var = (sum_w2[j] / n - mean * mean).max(0.0);
            scale * (n * var).sqrt()
        })
        .collect();
    Ok(FisherMatrix {
        class,
        dim,
        data,
        n_events,
        mc_samples: used,
        projection_se,
    })
}

/// Total information of several classes accumulated into one matrix in a
/// single pass over all events: `Σ_k (N^k/n_k) Σ_n w wᵀ − N^k v^k v^kᵀ`.
pub fn fisher_pooled(
    parts: &[(&[SystemRow], &[f64], f64)],
    image: &ActivityImage,
    allow_large: bool,
) -> Result<Vec<f64>> {
    let dim = image.len();
    let lambda = &image.values;
    let mut data = vec![0.0; dim * dim];
    for &(rows, sens, n_events) in parts {
        check_dims(image, sens, allow_large)?;
        let v = sensitivity_ratio(sens, lambda)?;
        let ratios: Vec<_> = rows.iter().filter_map(|r| normalised_ratio(r, lambda)).collect();
        if ratios.is_empty() {
            return Err(Error::NoEvents);
        }
        let scale = n_events / ratios.len() as f64;
        for w in &ratios {
            for &(i, wi) in w {
                for &(j, wj) in w {
                    data[i * dim + j] += scale * wi * wj;
                }
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] -= n_events * v[i] * v[j];
            }
        }
    }
    Ok(data)
}

/// Draws `n_mc_events` class-`class` events by simulating decays from
/// `image`, builds their kernel rows and returns the class information with
/// `N^k = n_mc_events`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_fisher(
    class: ClassTag,
    image: &ActivityImage,
    sens: &SensitivityMap,
    sim: &Simulator,
    kernel: &KernelParams,
    n_mc_events: usize,
    seed: u64,
    allow_large: bool,
) -> Result<FisherMatrix> {
    if n_mc_events == 0 {
        return Err(Error::InvalidParameter("n_mc_events must be at least 1".into()));
    }
    let s = sens.require(class)?;
    check_dims(image, s, allow_large)?;
    if !sens.grid.same_shape(&image.grid) {
        return Err(Error::DimensionMismatch(
            "image and sensitivity grids differ".into(),
        ));
    }
    let sampler = ImageSampler::new(image)?;
    let key = StreamKey::new(seed, Domain::Fisher(class.index() as u8));
    // Give up when the class is too rare to collect the sample.
    let max_decays = (n_mc_events as u64).saturating_mul(100_000).max(1_000_000);
    const BLOCK: usize = 1 << 14;

    let mut events = Vec::with_capacity(n_mc_events);
    let mut start = 0u64;
    while events.len() < n_mc_events {
        if start >= max_decays {
            return Err(Error::InvalidParameter(format!(
                "only {} {class} events in {start} decays; class too rare for the requested sample",
                events.len()
            )));
        }
        let batch = par::map_range(BLOCK, |i| {
            let mut rng = key.stream(start + i as u64);
            let decay = generate_decay(|r| sampler.sample(r), &mut rng);
            sim.transport_and_classify(&decay, &mut rng).outcome
        });
        for outcome in batch {
            if let Outcome::Detected(ev) = outcome {
                if ev.class == class && events.len() < n_mc_events {
                    events.push(ev);
                }
            }
        }
        start += BLOCK as u64;
    }
    let rows = build_rows(&events, &image.grid, kernel);
    fisher_from_rows(class, &rows, image, s, n_mc_events as f64, allow_large)
}

/// Algebraically largest eigenvalue of a symmetric matrix, by power
/// iteration on the Gershgorin-shifted (positive semidefinite) matrix.
pub fn largest_eigenvalue(m: &[f64], dim: usize, tol: f64) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let shift = (0..dim)
        .map(|i| m[i * dim..(i + 1) * dim].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if shift == 0.0 {
        return 0.0;
    }
    let mut x = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut estimate = 0.0;
    for _ in 0..100_000 {
        let mut y = matvec(m, dim, &x);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += shift * xi;
        }
        let rayleigh: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        x = y.into_iter().map(|v| v / norm).collect();
        let converged = (rayleigh - estimate).abs() <= tol * rayleigh.abs().max(shift * 1e-300);
        estimate = rayleigh;
        if converged {
            break;
        }
    }
    estimate - shift
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherRow {
    pub class: ClassTag,
    pub trace: f64,
    pub lambda_max: f64,
    pub n_events: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FisherReport {
    /// Classes ranked by decreasing trace.
    pub ranking: Vec<FisherRow>,
    pub dim: usize,
    /// `Σ_k I^k`, row-major.
    pub total: Vec<f64>,
    pub total_trace: f64,
    pub total_lambda_max: f64,
}

impl FisherReport {
    /// CSV with header `class,trace,lambda_max,n_events`, ranked rows
    /// followed by a `total` row.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "class,trace,lambda_max,n_events")?;
        for r in &self.ranking {
            writeln!(w, "{},{},{},{}", r.class, r.trace, r.lambda_max, r.n_events)?;
        }
        let n: f64 = self.ranking.iter().map(|r| r.n_events).sum();
        writeln!(w, "total,{},{},{}", self.total_trace, self.total_lambda_max, n)?;
        Ok(())
    }
}

const EIGEN_TOL: f64 = 1e-8;

/// Per-class trace and largest eigenvalue, the additive total, and the
/// ranking of classes by trace.
pub fn fisher_summary(matrices: &[FisherMatrix]) -> Result<FisherReport> {
    let dim = matrices.first().map_or(0, |m| m.dim);
    if let Some(m) = matrices.iter().find(|m| m.dim != dim) {
        return Err(Error::DimensionMismatch(format!(
            "class {} has dimension {}, expected {dim}",
            m.class, m.dim
        )));
    }
    let mut total = vec![0.0; dim * dim];
    for m in matrices {
        for (t, x) in total.iter_mut().zip(&m.data) {
            *t += x;
        }
    }
    let mut ranking: Vec<FisherRow> = matrices
        .iter()
        .map(|m| FisherRow {
            class: m.class,
            trace: m.trace(),
            lambda_max: largest_eigenvalue(&m.data, dim, EIGEN_TOL),
            n_events: m.n_events,
        })
        .collect();
    ranking.sort_by(|a, b| b.trace.total_cmp(&a.trace).then(a.class.cmp(&b.class)));
    let total_trace = (0..dim).map(|i| total[i * dim + i]).sum();
    let total_lambda_max = largest_eigenvalue(&total, dim, EIGEN_TOL);
    Ok(FisherReport {
        ranking,
        dim,
        total,
        total_trace,
        total_lambda_max,
    })
}
