//! Multi-class list-mode MLEM.
//!
//! One update multiplies each voxel by the backprojected ratio of every
//! event of every selected class, and divides by the voxel's sensitivity
//! summed over the same classes:
//!
//! ```text
//! λ_j ← λ_j / Σ_k s_j^k · Σ_k Σ_n A_j^k(y_n) / (Σ_j' A_j'^k(y_n) λ_j' + ε_n^k)
//! ```
//!
//! The event sum runs over fixed chunks that are reduced pairwise in a fixed
//! order, so the result is bit-identical for any number of threads.

use serde::Serialize;

use super::{
    extended_log_likelihood, subset_sensitivities, total_log_likelihood, ActivityImage,
    Background, ListModeData, SystemRow,
};
use crate::class::ClassSet;
use crate::error::{Error, Result};
use crate::par;
use crate::sysmodel::SensitivityMap;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct MlemStep {
    pub image: ActivityImage,
    /// Events with a zero denominator, which contribute nothing.
    pub excluded_events: usize,
}

/// Selected sensitivity summed over the subset.
fn summed_sensitivity(sens: &SensitivityMap, subset: ClassSet, len: usize) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let mut total = vec![0.0; len];
    for (_, s) in subset_sensitivities(sens, subset)? {
        if s.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "sensitivity has {} voxels, image {len}",
                s.len()
            )));
        }
        for (t, v) in total.iter_mut().zip(s) {
            *t += v;
        }
    }
    Ok(total)
}

fn pairwise_reduce(mut parts: Vec<(Vec<f64>, usize)>) -> Option<(Vec<f64>, usize)> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some((mut a, ea)) = it.next() {
            if let Some((b, eb)) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                next.push((a, ea + eb));
            } else {
                next.push((a, ea));
            }
        }
        parts = next;
    }
    parts.pop()
}

/// `Σ_n λ_j A_j(y_n) / (A(y_n)·λ + ε_n)` over all selected events. Taking
/// `λ_j` inside the sum lets the ratio cancel exactly for a single voxel.
fn backproject_ratios(
    data: &ListModeData,
    subset: ClassSet,
    lambda: &[f64],
) -> (Vec<f64>, usize) {
    let events: Vec<(&SystemRow, f64)> = data
        .in_subset(subset)
        .flat_map(|c| {
            c.rows.iter().enumerate().map(move |(n, r)| {
                let eps = match &c.background {
                    Background::Constant(e) => *e,
                    Background::PerEvent(v) => v[n],
                };
                (r, eps)
            })
        })
        .collect();
    let n_chunks = events.len().div_ceil(CHUNK);
    let parts = par::map_range(n_chunks, |c| {
        let mut acc = vec![0.0; lambda.len()];
        let mut excluded = 0;
        for &(row, eps) in &events[c * CHUNK..((c + 1) * CHUNK).min(events.len())] {
            let denom = row.forward(lambda) + eps;
            if denom > 0.0 {
                for (j, a) in row.iter() {
                    acc[j] += lambda[j] * a / denom;
                }
            } else {
                excluded += 1;
            }
        }
        (acc, excluded)
    });
    pairwise_reduce(parts).unwrap_or_else(|| (vec![0.0; lambda.len()], 0))
}

/// One multi-class MLEM update restricted to `subset`. Voxels with zero
/// summed sensitivity are frozen at zero.
pub fn mlem_step(
    image: &ActivityImage,
    data: &ListModeData,
    sens: &SensitivityMap,
    subset: ClassSet,
) -> Result<MlemStep> {
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    image.require_nonzero()?;
    let total_sens = summed_sensitivity(sens, subset, image.len())?;
    let lambda: Vec<f64> = image
        .values
        .iter()
        .zip(&total_sens)
        .map(|(&l, &s)| if s > 0.0 { l } else { 0.0 })
        .collect();
    if lambda.iter().all(|&l| l == 0.0) {
        return Err(Error::DegenerateImage(
            "no active voxel has positive sensitivity".into(),
        ));
    }
    let (back, excluded_events) = backproject_ratios(data, subset, &lambda);
    let values = total_sens
        .iter()
        .zip(&back)
        .map(|(&s, &b)| if s > 0.0 { b / s } else { 0.0 })
        .collect();
    Ok(MlemStep {
        image: ActivityImage {
            grid: image.grid.clone(),
            values,
        },
        excluded_events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconConfig {
    pub iterations: usize,
    pub classes: ClassSet,
    /// Relative log-likelihood gain below which iteration stops, when
    /// `early_stop` is set.
    pub tolerance: f64,
    pub early_stop: bool,
    pub initial_value: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            iterations: 20,
            classes: ClassSet::all(),
            tolerance: 1e-7,
            early_stop: false,
            initial_value: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Poisson objective increased by the update (see
    /// [`extended_log_likelihood`]).
    pub loglik: f64,
    /// Change from the previous iteration; zero for iteration 0.
    pub delta: f64,
    /// Sum of the per-class conditional log-likelihoods
    /// ([`total_log_likelihood`]).
    pub class_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub image: ActivityImage,
    /// Iteration 0 is the initial image.
    pub log: Vec<IterationRecord>,
    pub excluded_events: usize,
}

impl Reconstruction {
    /// CSV with header `iteration,loglik,delta`.
    pub fn write_log_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "iteration,loglik,delta")?;
        for r in &self.log {
            writeln!(w, "{},{},{}", r.iteration, r.loglik, r.delta)?;
        }
        Ok(())
    }
}

fn record(
    iteration: usize,
    data: &ListModeData,
    image: &ActivityImage,
    sens: &SensitivityMap,
    subset: ClassSet,
    previous: Option<f64>,
) -> Result<IterationRecord> {
    let loglik = extended_log_likelihood(data, image, sens, subset)?.value;
    let class_sum = total_log_likelihood(data, image, sens, subset)?.value;
    Ok(IterationRecord {
        iteration,
        loglik,
        delta: previous.map_or(0.0, |p| loglik - p),
        class_sum,
    })
}

/// Runs MLEM from a uniform image on the sensitivity grid.
pub fn reconstruct(
    data: &ListModeData,
    sens: &SensitivityMap,
    config: &ReconConfig,
) -> Result<Reconstruction> {
    if config.iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be at least 1".into()));
    }
    if config.classes.is_empty() {
        return Err(Error::EmptySubset);
    }
    if !(config.initial_value > 0.0 && config.initial_value.is_finite()) {
        return Err(Error::InvalidParameter("initial value must be positive".into()));
    }
    if data.event_count(config.classes) == 0 {
        return Err(Error::NoEvents);
    }
    let subset = config.classes;
    let mut image = ActivityImage::uniform(sens.grid.clone(), config.initial_value);
    let mut log = vec![record(0, data, &image, sens, subset, None)?];
    let mut excluded_events = 0;
    for it in 1..=config.iterations {
        let step = mlem_step(&image, data, sens, subset)?;
        image = step.image;
        excluded_events = step.excluded_events;
        let prev = log.last().map(|r| r.loglik);
        let rec = record(it, data, &image, sens, subset, prev)?;
        log.push(rec);
        if config.early_stop && rec.delta.abs() <= config.tolerance * rec.loglik.abs() {
            break;
        }
    }
    Ok(Reconstruction {
        image,
        log,
        excluded_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::ClassTag;
    use crate::geometry::{Point3, VoxelGrid};
    use crate::infer::ClassData;

    fn one_voxel() -> VoxelGrid {
        VoxelGrid::new([1, 1, 1], [5.0, 5.0, 10.0], Point3::ZERO).unwrap()
    }

    fn single(class: ClassTag, s: f64, grid: VoxelGrid) -> SensitivityMap {
        SensitivityMap::from_class_values(grid, &[(class, vec![s])], 1, 0).unwrap()
    }

    #[test]
    fn one_voxel_fixed_point_in_one_step() {
        let data = ListModeData::new(vec![ClassData::new(
            ClassTag::C12,
            vec![SystemRow::from_dense(&[0.3]); 10],
        )])
        .unwrap();
        let sens = single(ClassTag::C12, 0.5, one_voxel());
        let subset = ClassSet::single(ClassTag::C12);
        let img = ActivityImage::uniform(one_voxel(), 1.0);
        let l1 = mlem_step(&img, &data, &sens, subset).unwrap().image;
        assert_eq!(l1.values, vec![20.0]);
        let l2 = mlem_step(&l1, &data, &sens, subset).unwrap().image;
        assert_eq!(l2.values, vec![20.0]);
    }

    #[test]
    fn one_voxel_with_background() {
        let data = ListModeData::new(vec![ClassData::new(
            ClassTag::C02,
            vec![SystemRow::from_dense(&[1.0]); 5],
        )
        .with_background(Background::Constant(1.0))
        .unwrap()])
        .unwrap();
        let sens = single(ClassTag::C02, 1.0, one_voxel());
        let img = ActivityImage::uniform(one_voxel(), 1.0);
        let l1 = mlem_step(&img, &data, &sens, ClassSet::single(ClassTag::C02)).unwrap();
        assert_eq!(l1.image.values, vec![2.5]);
    }

    #[test]
    fn no_events_gives_zero_image() {
        let data = ListModeData::default();
        let sens = single(ClassTag::C12, 0.5, one_voxel());
        let img = ActivityImage::uniform(one_voxel(), 1.0);
        let l1 = mlem_step(&img, &data, &sens, ClassSet::single(ClassTag::C12)).unwrap();
        assert_eq!(l1.image.values, vec![0.0]);
    }

    #[test]
    fn precondition_errors() {
        let data = ListModeData::default();
        let sens = single(ClassTag::C12, 0.5, one_voxel());
        let img = ActivityImage::uniform(one_voxel(), 1.0);
        assert!(matches!(
            mlem_step(&img, &data, &sens, ClassSet::empty()),
            Err(Error::EmptySubset)
        ));
        assert!(mlem_step(&ActivityImage::zeros(one_voxel()), &data, &sens, ClassSet::single(ClassTag::C12)).is_err());
        assert!(matches!(
            mlem_step(&img, &data, &sens, ClassSet::single(ClassTag::C01)),
            Err(Error::MissingClass(ClassTag::C01))
        ));
    }

    #[test]
    fn reconstruct_rejects_empty_data() {
        let data = ListModeData::new(vec![ClassData::new(ClassTag::C12, vec![])
            .with_background(Background::Constant(1.0))
            .unwrap()])
        .unwrap();
        let sens = single(ClassTag::C12, 0.5, one_voxel());
        let cfg = ReconConfig {
            classes: ClassSet::single(ClassTag::C12),
            ..Default::default()
        };
        assert!(matches!(reconstruct(&data, &sens, &cfg), Err(Error::NoEvents)));
    }

    #[test]
    fn denominator_uses_subset_only() {
        // Two classes with different sensitivities; selecting one must not
        // divide by the other's sensitivity.
        let g = one_voxel();
        let data = ListModeData::new(vec![
            ClassData::new(ClassTag::C12, vec![SystemRow::from_dense(&[1.0]); 4]),
            ClassData::new(ClassTag::C02, vec![SystemRow::from_dense(&[1.0]); 6]),
        ])
        .unwrap();
        let sens = SensitivityMap::from_class_values(
            g.clone(),
            &[(ClassTag::C12, vec![0.1]), (ClassTag::C02, vec![0.3])],
            1,
            0,
        )
        .unwrap();
        let img = ActivityImage::uniform(g, 1.0);
        let only = mlem_step(&img, &data, &sens, ClassSet::single(ClassTag::C12)).unwrap();
        assert!((only.image.values[0] - 40.0).abs() < 1e-12);
        let both: ClassSet = [ClassTag::C12, ClassTag::C02].into_iter().collect();
        let joint = mlem_step(&img, &data, &sens, both).unwrap();
        assert!((joint.image.values[0] - 10.0 / 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_sensitivity_voxels_frozen() {
        let g = VoxelGrid::new([2, 1, 1], [1.0; 3], Point3::ZERO).unwrap();
        let data = ListModeData::new(vec![ClassData::new(
            ClassTag::C12,
            vec![SystemRow::from_dense(&[1.0, 1.0]); 3],
        )])
        .unwrap();
        let sens =
            SensitivityMap::from_class_values(g.clone(), &[(ClassTag::C12, vec![0.5, 0.0])], 1, 0).unwrap();
        let img = ActivityImage::uniform(g, 1.0);
        let out = mlem_step(&img, &data, &sens, ClassSet::single(ClassTag::C12)).unwrap();
        assert_eq!(out.image.values[1], 0.0);
        assert!((out.image.values[0] * 0.5 - 3.0).abs() < 1e-12);
    }
}
