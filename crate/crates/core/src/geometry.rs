//! Points, directions, the voxel grid and the cylindrical detection annulus.
//!
//! Lengths are millimetres. `z` is the detector axis and the voxel grid is
//! centred on its `origin`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub type Point3 = Vec3;

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Angle between two non-zero vectors, accurate near 0 and π.
    pub fn angle_to(self, o: Vec3) -> f64 {
        self.cross(o).norm().atan2(self.dot(o))
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(into = "[f64; 3]")]
pub struct Direction3(Vec3);

impl Direction3 {
    pub const PLUS_Z: Direction3 = Direction3(Vec3::new(0.0, 0.0, 1.0));

    /// Normalises `v`; `None` for zero or non-finite input. Vectors that
    /// are already unit to rounding are kept bit-for-bit, so directions
    /// survive a write/read cycle unchanged.
    pub fn new(v: Vec3) -> Option<Self> {
        let n2 = v.norm_squared();
        if !(n2 > 0.0 && n2.is_finite()) {
            return None;
        }
        if (n2 - 1.0).abs() <= 4.0 * f64::EPSILON {
            return Some(Direction3(v));
        }
        Some(Direction3(v * (1.0 / n2.sqrt())))
    }

    /// Direction from spherical angles: `cos_theta` against +z, azimuth `phi`.
    pub fn from_spherical(cos_theta: f64, phi: f64) -> Self {
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let (s, c) = phi.sin_cos();
        Direction3(Vec3::new(sin_theta * c, sin_theta * s, cos_theta))
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn reversed(self) -> Self {
        Direction3(-self.0)
    }

    /// Rotates this direction by polar angle `theta` (cosine given) and
    /// azimuth `phi` about itself.
    pub fn deflect(self, cos_theta: f64, phi: f64) -> Self {
        let w = self.0;
        // Any vector not parallel to w seeds the orthonormal frame.
        let helper = if w.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let u = Direction3::new(helper.cross(w)).expect("non-parallel helper").0;
        let v = w.cross(u);
        let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
        let (s, c) = phi.sin_cos();
        let d = u * (sin_theta * c) + v * (sin_theta * s) + w * cos_theta;
        Direction3::new(d).expect("unit combination")
    }
}

impl From<Direction3> for [f64; 3] {
    fn from(d: Direction3) -> Self {
        d.0.to_array()
    }
}

impl<'de> Deserialize<'de> for Direction3 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec3::deserialize(d)?;
        Direction3::new(v).ok_or_else(|| serde::de::Error::custom("zero-length direction"))
    }
}

/// Regular voxel grid centred on `origin`. Voxel `j` has integer coordinates
/// `(ix, iy, iz)` with `j = ix + nx * (iy + ny * iz)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    #[serde(rename = "voxel_size_mm")]
    pub voxel_size: [f64; 3],
    #[serde(rename = "origin_mm", default)]
    pub origin: Point3,
}

impl Default for VoxelGrid {
    fn default() -> Self {
        VoxelGrid {
            dims: [19, 19, 24],
            voxel_size: [5.0, 5.0, 10.0],
            origin: Point3::ZERO,
        }
    }
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], origin: Point3) -> Result<Self> {
        let grid = VoxelGrid {
            dims,
            voxel_size,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Geometry(format!(
                "grid dimensions must be positive, got {:?}",
                self.dims
            )));
        }
        if self.voxel_size.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Geometry(format!(
                "voxel sizes must be positive, got {:?}",
                self.voxel_size
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size.iter().product()
    }

    /// Full extent of the grid along each axis.
    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.dims[a] as f64 * self.voxel_size[a])
    }

    /// Lower corner of the bounding box.
    pub fn min_corner(&self) -> Point3 {
        let e = self.extent();
        self.origin - Vec3::new(e[0], e[1], e[2]) * 0.5
    }

    pub fn max_corner(&self) -> Point3 {
        let e = self.extent();
        self.origin + Vec3::new(e[0], e[1], e[2]) * 0.5
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    pub fn coords(&self, j: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [j % nx, (j / nx) % ny, j / (nx * ny)]
    }

    /// Geometric centre of voxel `j`.
    pub fn voxel_center(&self, j: usize) -> Result<Point3> {
        if j >= self.len() {
            return Err(Error::VoxelOutOfRange {
                index: j,
                len: self.len(),
            });
        }
        Ok(self.center_unchecked(j))
    }

    pub(crate) fn center_unchecked(&self, j: usize) -> Point3 {
        let c = self.coords(j);
        let lo = self.min_corner();
        Vec3::new(
            lo.x + (c[0] as f64 + 0.5) * self.voxel_size[0],
            lo.y + (c[1] as f64 + 0.5) * self.voxel_size[1],
            lo.z + (c[2] as f64 + 0.5) * self.voxel_size[2],
        )
    }

    /// Centre of the `iz`-th transaxial slice.
    pub fn slice_z(&self, iz: usize) -> f64 {
        self.min_corner().z + (iz as f64 + 0.5) * self.voxel_size[2]
    }

    /// Voxel containing `p`; points on the upper boundary belong to the
    /// last voxel.
    pub fn voxel_of(&self, p: Point3) -> Option<usize> {
        let lo = self.min_corner();
        let rel = [p.x - lo.x, p.y - lo.y, p.z - lo.z];
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = rel[a] / self.voxel_size[a];
            let n = self.dims[a];
            if !(f >= 0.0 && f <= n as f64) {
                return None;
            }
            ijk[a] = (f.floor() as usize).min(n - 1);
        }
        Some(self.index(ijk))
    }

    /// Maps unit-cube coordinates `u ∈ [0,1)³` to a point inside voxel `j`.
    pub fn point_in_voxel(&self, j: usize, u: [f64; 3]) -> Point3 {
        let c = self.coords(j);
        let lo = self.min_corner();
        Vec3::new(
            lo.x + (c[0] as f64 + u[0]) * self.voxel_size[0],
            lo.y + (c[1] as f64 + u[1]) * self.voxel_size[1],
            lo.z + (c[2] as f64 + u[2]) * self.voxel_size[2],
        )
    }

    pub fn contains(&self, p: Point3) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        (lo.x..=hi.x).contains(&p.x) && (lo.y..=hi.y).contains(&p.y) && (lo.z..=hi.z).contains(&p.z)
    }

    pub fn same_shape(&self, other: &VoxelGrid) -> bool {
        self.dims == other.dims
            && self
                .voxel_size
                .iter()
                .zip(other.voxel_size.iter())
                .all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0))
    }
}

/// Hollow cylinder of detection medium, coaxial with `z` and centred at the
/// origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorAnnulus {
    pub inner_radius_mm: f64,
    pub outer_radius_mm: f64,
    pub axial_half_length_mm: f64,
}

impl Default for DetectorAnnulus {
    fn default() -> Self {
        DetectorAnnulus {
            inner_radius_mm: 70.0,
            outer_radius_mm: 90.0,
            axial_half_length_mm: 120.0,
        }
    }
}

/// Ray-parameter intervals spent inside detector material, in increasing
/// order. A ray crosses the annulus at most twice.
pub type Segments = ([(f64, f64); 2], usize);

impl DetectorAnnulus {
    pub fn new(inner: f64, outer: f64, half_length: f64) -> Result<Self> {
        let det = DetectorAnnulus {
            inner_radius_mm: inner,
            outer_radius_mm: outer,
            axial_half_length_mm: half_length,
        };
        det.validate()?;
        Ok(det)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.inner_radius_mm > 0.0
            && self.outer_radius_mm > self.inner_radius_mm
            && self.axial_half_length_mm > 0.0
            && self.outer_radius_mm.is_finite()
            && self.axial_half_length_mm.is_finite();
        if !ok {
            return Err(Error::Geometry(format!(
                "annulus needs 0 < inner < outer and half-length > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Checks that the grid bounding box lies inside the inner bore.
    pub fn check_fits(&self, grid: &VoxelGrid) -> Result<()> {
        let lo = grid.min_corner();
        let hi = grid.max_corner();
        let rx = lo.x.abs().max(hi.x.abs());
        let ry = lo.y.abs().max(hi.y.abs());
        let r = rx.hypot(ry);
        let z = lo.z.abs().max(hi.z.abs());
        if r >= self.inner_radius_mm || z > self.axial_half_length_mm {
            return Err(Error::Geometry(format!(
                "field of view (corner radius {r:.2} mm, |z| up to {z:.2} mm) does not fit inside the bore \
                 (inner radius {} mm, half-length {} mm)",
                self.inner_radius_mm, self.axial_half_length_mm
            )));
        }
        Ok(())
    }

    pub fn in_bore(&self, p: Point3) -> bool {
        p.x.hypot(p.y) < self.inner_radius_mm && p.z.abs() <= self.axial_half_length_mm
    }

    /// All intervals `t ≥ 0` along `p + t·d` that lie inside the material.
    pub fn material_segments(&self, p: Point3, d: Direction3) -> Segments {
        let d = d.vec();
        let h = self.axial_half_length_mm;

        // Axial slab.
        let (z0, z1) = if d.z.abs() < 1e-300 {
            if p.z.abs() > h {
                return ([(0.0, 0.0); 2], 0);
            }
            (f64::NEG_INFINITY, f64::INFINITY)
        } else {
            let a = (-h - p.z) / d.z;
            let b = (h - p.z) / d.z;
            (a.min(b), a.max(b))
        };

        let a = d.x * d.x + d.y * d.y;
        let b = p.x * d.x + p.y * d.y;
        let c = p.x * p.x + p.y * p.y;
        let ri2 = self.inner_radius_mm * self.inner_radius_mm;
        let ro2 = self.outer_radius_mm * self.outer_radius_mm;

        let mut radial = [(0.0, 0.0); 2];
        let mut nrad = 0;
        if a < 1e-300 {
            // Parallel to the axis: radius never changes.
            if c >= ri2 && c <= ro2 {
                radial[0] = (f64::NEG_INFINITY, f64::INFINITY);
                nrad = 1;
            }
        } else {
            let Some((o0, o1)) = circle_roots(a, b, c - ro2) else {
                return ([(0.0, 0.0); 2], 0);
            };
            match circle_roots(a, b, c - ri2) {
                Some((i0, i1)) if i1 > i0 => {
                    radial[0] = (o0, i0.max(o0));
                    radial[1] = (i1.min(o1), o1);
                    nrad = 2;
                }
                _ => {
                    radial[0] = (o0, o1);
                    nrad = 1;
                }
            }
        }

        let mut out = [(0.0, 0.0); 2];
        let mut n = 0;
        for &(r0, r1) in &radial[..nrad] {
            let t0 = r0.max(z0).max(0.0);
            let t1 = r1.min(z1);
            if t1 > t0 {
                out[n] = (t0, t1);
                n += 1;
            }
        }
        (out, n)
    }

    /// First material interval along a ray that starts inside the bore, or
    /// `None` when the ray leaves through the end caps without crossing
    /// material.
    pub fn ray_annulus_entry(&self, p: Point3, d: Direction3) -> Option<(f64, f64)> {
        let (segs, n) = self.material_segments(p, d);
        (n > 0).then(|| segs[0])
    }
}

/// Roots of `a t² + 2 b t + c = 0`, ordered, when real.
fn circle_roots(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Stable form avoids cancellation for the smaller-magnitude root.
    let q = -(b + b.signum() * sq);
    let (r0, r1) = if q == 0.0 {
        (0.0, 0.0)
    } else {
        (q / a, c / q)
    };
    Some((r0.min(r1), r0.max(r1)))
}
