//! Analytic activity phantoms rendered onto a voxel grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, VoxelGrid};
use crate::infer::ActivityImage;

/// Sub-samples per voxel axis used to estimate partial-volume coverage.
pub const SUBSAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    pub center_mm: Point3,
    pub radius_mm: f64,
    /// Total activity of the sphere.
    pub activity: f64,
}

/// Activity distributions. `activity` is always the total of the shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Phantom {
    Point {
        center_mm: Point3,
        activity: f64,
    },
    /// Cylinder coaxial with z.
    UniformCylinder {
        center_mm: Point3,
        radius_mm: f64,
        half_length_mm: f64,
        activity: f64,
    },
    Spheres {
        spheres: Vec<Sphere>,
    },
}

/// A rendered phantom with its voxelisation error.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPhantom {
    pub image: ActivityImage,
    pub requested_total: f64,
    pub rendered_total: f64,
}

impl RenderedPhantom {
    /// `|rendered − requested| / requested`.
    pub fn relative_error(&self) -> f64 {
        if self.requested_total == 0.0 {
            0.0
        } else {
            (self.rendered_total - self.requested_total).abs() / self.requested_total
        }
    }
}

fn check_activity(a: f64) -> Result<()> {
    if a >= 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("activity {a} must be finite and non-negative")))
    }
}

fn check_length(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
    }
}

/// Fraction of voxel `j` inside a shape, by midpoint sub-sampling.
fn coverage(grid: &VoxelGrid, j: usize, inside: &impl Fn(Point3) -> bool) -> f64 {
    let n = SUBSAMPLES;
    let mut hits = 0usize;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                let u = [a, b, c].map(|i| (i as f64 + 0.5) / n as f64);
                if inside(grid.point_in_voxel(j, u)) {
                    hits += 1;
                }
            }
        }
    }
    hits as f64 / (n * n * n) as f64
}

/// Adds `activity`, spread uniformly over a shape of analytic `volume`, to
/// `values`. Fails if the shape misses the grid entirely.
fn deposit(
    grid: &VoxelGrid,
    values: &mut [f64],
    bbox: (Point3, Point3),
    volume: f64,
    activity: f64,
    inside: impl Fn(Point3) -> bool,
) -> Result<()> {
    let density = activity / volume;
    let dv = grid.voxel_volume();
    let lo = grid.min_corner();
    let hi = grid.max_corner();
    let mut any = false;
    for (j, v) in values.iter_mut().enumerate() {
        let c = grid.center_unchecked(j);
        let h = [0, 1, 2].map(|a| 0.5 * grid.voxel_size[a]);
        let overlaps = c.x + h[0] >= bbox.0.x
            && c.x - h[0] <= bbox.1.x
            && c.y + h[1] >= bbox.0.y
            && c.y - h[1] <= bbox.1.y
            && c.z + h[2] >= bbox.0.z
            && c.z - h[2] <= bbox.1.z;
        if !overlaps {
            continue;
        }
        let f = coverage(grid, j, &inside);
        if f > 0.0 {
            any = true;
            *v += density * f * dv;
        }
    }
    let disjoint = bbox.1.x < lo.x
        || bbox.0.x > hi.x
        || bbox.1.y < lo.y
        || bbox.0.y > hi.y
        || bbox.1.z < lo.z
        || bbox.0.z > hi.z;
    if !any || disjoint {
        return Err(Error::Geometry(
            "phantom lies outside the field of view".into(),
        ));
    }
    Ok(())
}

impl Phantom {
    pub fn total_activity(&self) -> f64 {
        match self {
            Phantom::Point { activity, .. } | Phantom::UniformCylinder { activity, .. } => *activity,
            Phantom::Spheres { spheres } => spheres.iter().map(|s| s.activity).sum(),
        }
    }

    pub fn render(&self, grid: &VoxelGrid) -> Result<RenderedPhantom> {
        grid.validate()?;
        let mut values = vec![0.0; grid.len()];
        match self {
            Phantom::Point {
                center_mm,
                activity,
            } => {
                check_activity(*activity)?;
                let j = grid.voxel_of(*center_mm).ok_or_else(|| {
                    Error::Geometry("point source lies outside the field of view".into())
                })?;
                values[j] = *activity;
            }
            Phantom::UniformCylinder {
                center_mm,
                radius_mm,
                half_length_mm,
                activity,
            } => {
                check_activity(*activity)?;
                check_length("radius_mm", *radius_mm)?;
                check_length("half_length_mm", *half_length_mm)?;
                let c = *center_mm;
                let (r, h) = (*radius_mm, *half_length_mm);
                let half = Point3::new(r, r, h);
                let volume = std::f64::consts::PI * r * r * 2.0 * h;
                deposit(grid, &mut values, (c - half, c + half), volume, *activity, |p| {
                    let d = p - c;
                    d.x * d.x + d.y * d.y <= r * r && d.z.abs() <= h
                })?;
            }
            Phantom::Spheres { spheres } => {
                if spheres.is_empty() {
                    return Err(Error::InvalidParameter("no spheres given".into()));
                }
                for s in spheres {
                    check_activity(s.activity)?;
                    check_length("radius_mm", s.radius_mm)?;
                    let (c, r) = (s.center_mm, s.radius_mm);
                    let half = Point3::new(r, r, r);
                    let volume = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
                    deposit(grid, &mut values, (c - half, c + half), volume, s.activity, |p| {
                        (p - c).norm_squared() <= r * r
                    })?;
                }
            }
        }
        let rendered_total = values.iter().sum();
        Ok(RenderedPhantom {
            image: ActivityImage::new(grid.clone(), values)?,
            requested_total: self.total_activity(),
            rendered_total,
        })
    }
}
