use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::class::{ClassSet, ClassTag};
use crate::error::{Error, Result};
use crate::geometry::{Point3, VoxelGrid};
use crate::infer::{Background, BackgroundModel, ClassData, ListModeData, SystemRow};
use crate::par;
use crate::physics::{ComptonCone, EnergyPair, PhysicsParams, ELECTRON_REST_KEV, FWHM_PER_SIGMA};
use crate::simulate::{DetectionEvent, Lor, SPEED_OF_LIGHT_MM_PER_PS};

/// Widths of the Gaussian kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Standard deviation of the distance from the line of response, mm.
    pub lor_transverse_sigma_mm: f64,
    /// Standard deviation along the line from the time difference, mm.
    /// Only used for events that carry `dt_ps`.
    pub tof_sigma_mm: Option<f64>,
    /// Standard deviation of the angular distance to the cone surface, per
    /// energy branch.
    pub cone_angular_sigma_rad: EnergyPair,
    /// Relative energy resolution (FWHM / E) assumed for the first deposit.
    /// When set, the angular error it causes is added in quadrature to
    /// `cone_angular_sigma_rad`, event by event. Should match the physics
    /// settings used to produce the data.
    pub energy_resolution_fwhm_fraction: Option<EnergyPair>,
    /// Kernels vanish beyond this many standard deviations; `None` keeps
    /// the full Gaussian tails.
    pub cutoff_sigmas: Option<f64>,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            lor_transverse_sigma_mm: 4.0,
            tof_sigma_mm: None,
            cone_angular_sigma_rad: EnergyPair::new(0.03, 0.03),
            energy_resolution_fwhm_fraction: Some(PhysicsParams::default().energy_resolution_fwhm_fraction),
            cutoff_sigmas: None,
        }
    }
}

impl KernelParams {
    /// Angular width used for `cone`.
    pub fn cone_sigma(&self, cone: &ComptonCone) -> f64 {
        let base = self.cone_angular_sigma_rad.nearest(cone.e0_kev);
        let Some(res) = self.energy_resolution_fwhm_fraction else {
            return base;
        };
        let sigma_e1 = res.interpolate_clamped(cone.e1_kev) * cone.e1_kev / FWHM_PER_SIGMA;
        let d = cone.e0_kev - cone.e1_kev;
        // |dβ/dE1| = m c² / ((E0 − E1)² sin β)
        let sin_b = cone.half_angle_beta.sin().max(base.sin());
        let propagated = ELECTRON_REST_KEV / (d * d * sin_b) * sigma_e1;
        base.hypot(propagated).min(PI)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let ok = positive(self.lor_transverse_sigma_mm)
            && self.tof_sigma_mm.is_none_or(positive)
            && positive(self.cone_angular_sigma_rad.at_511_kev)
            && positive(self.cone_angular_sigma_rad.at_1157_kev)
            && self.cutoff_sigmas.is_none_or(positive)
            && self.energy_resolution_fwhm_fraction.is_none_or(|r| {
                (0.0..1.0).contains(&r.at_511_kev) && (0.0..1.0).contains(&r.at_1157_kev)
            });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "kernel widths and cutoff must be positive".into(),
            ))
        }
    }

    fn gaussian(&self, x: f64, sigma: f64) -> f64 {
        let z = x / sigma;
        if self.cutoff_sigmas.is_some_and(|c| z.abs() > c) {
            return 0.0;
        }
        (-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma)
    }
}

/// Gaussian in the distance from `p` to the line of response, times a
/// Gaussian along the line when the event has a time difference and a TOF
/// width is configured.
pub fn lor_kernel(lor: &Lor, p: Point3, params: &KernelParams) -> f64 {
    let axis = lor.p1 - lor.p2;
    let len = axis.norm();
    if len == 0.0 {
        return 0.0;
    }
    let u = axis * (1.0 / len);
    let mid = (lor.p1 + lor.p2) * 0.5;
    let rel = p - mid;
    let along = rel.dot(u);
    let transverse = (rel.norm_squared() - along * along).max(0.0).sqrt();
    let mut value = params.gaussian(transverse, params.lor_transverse_sigma_mm);
    if let (Some(sigma), Some(dt)) = (params.tof_sigma_mm, lor.dt_ps) {
        // A source nearer p1 reaches it first, so dt = t2 - t1 > 0.
        let offset = 0.5 * SPEED_OF_LIGHT_MM_PER_PS * dt;
        value *= params.gaussian(along - offset, sigma);
    }
    value
}

/// Gaussian in the angular distance from `p` to the cone surface, divided
/// by `max(sin β, sin σ)`, with `σ` from [`KernelParams::cone_sigma`]. Zero
/// at the apex.
pub fn cone_kernel(cone: &ComptonCone, p: Point3, params: &KernelParams) -> f64 {
    let Some(residual) = cone.angular_residual(p) else {
        return 0.0;
    };
    let sigma = params.cone_sigma(cone);
    let ring = cone.half_angle_beta.sin().max(sigma.sin());
    params.gaussian(residual, sigma) / ring
}

/// Kernel of `event` at an arbitrary point.
pub fn kernel_at(event: &DetectionEvent, p: Point3, params: &KernelParams) -> f64 {
    let lor = event.lor.as_ref().map_or(1.0, |l| lor_kernel(l, p, params));
    if lor == 0.0 {
        return 0.0;
    }
    event
        .cones
        .iter()
        .fold(lor, |acc, c| acc * cone_kernel(c, p, params))
}

/// `A_j^k(y)` for voxel `j`, evaluated at its centre.
pub fn kernel_value(
    class: ClassTag,
    event: &DetectionEvent,
    j: usize,
    grid: &VoxelGrid,
    params: &KernelParams,
) -> Result<f64> {
    if event.class != class {
        return Err(Error::ClassMismatch {
            expected: class,
            found: event.class,
        });
    }
    Ok(kernel_at(event, grid.voxel_center(j)?, params))
}

/// Sparse kernel rows of `events` over every voxel of `grid`.
pub fn build_rows(events: &[DetectionEvent], grid: &VoxelGrid, params: &KernelParams) -> Vec<SystemRow> {
    let centres: Vec<Point3> = (0..grid.len()).map(|j| grid.center_unchecked(j)).collect();
    par::map_slice(events, |ev| {
        let mut row = SystemRow::default();
        for (j, &c) in centres.iter().enumerate() {
            let a = kernel_at(ev, c, params);
            if a > 0.0 {
                row.voxels.push(j as u32);
                row.values.push(a);
            }
        }
        row
    })
}

/// Groups `events` by class, keeping only the classes of `subset`, and
/// builds their rows with the constant backgrounds of `background`.
pub fn list_mode_data(
    events: &[DetectionEvent],
    grid: &VoxelGrid,
    params: &KernelParams,
    background: &BackgroundModel,
    subset: ClassSet,
) -> Result<ListModeData> {
    params.validate()?;
    background.validate()?;
    let mut classes = Vec::new();
    for k in subset.iter() {
        let selected: Vec<DetectionEvent> =
            events.iter().filter(|e| e.class == k).cloned().collect();
        let rows = build_rows(&selected, grid, params);
        classes.push(ClassData::new(k, rows).with_background(Background::Constant(background.get(k)))?);
    }
    ListModeData::new(classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Direction3, Vec3};
    use crate::physics::compton_cos_beta;
    use approx::assert_relative_eq;

    fn lor_event(dt_ps: Option<f64>) -> DetectionEvent {
        DetectionEvent {
            class: ClassTag::C02,
            lor: Some(Lor {
                p1: Vec3::new(-80.0, 0.0, 0.0),
                p2: Vec3::new(80.0, 0.0, 0.0),
                dt_ps,
            }),
            cones: vec![],
            true_origin: None,
        }
    }

    fn cone_event() -> DetectionEvent {
        let apex = Vec3::new(0.0, 0.0, 80.0);
        let cos_b = compton_cos_beta(1157.0, 450.0).unwrap();
        DetectionEvent {
            class: ClassTag::C10,
            lor: None,
            cones: vec![ComptonCone {
                apex,
                axis: Direction3::new(Vec3::new(0.0, 0.0, -1.0)).unwrap(),
                half_angle_beta: cos_b.acos(),
                e0_kev: 1157.0,
                e1_kev: 450.0,
            }],
            true_origin: None,
        }
    }

    #[test]
    fn lor_peak_and_one_sigma_ratio() {
        let k = KernelParams::default();
        let s = k.lor_transverse_sigma_mm;
        let ev = lor_event(None);
        let peak = kernel_at(&ev, Vec3::new(10.0, 0.0, 0.0), &k);
        assert_relative_eq!(peak, 1.0 / ((2.0 * PI).sqrt() * s), max_relative = 1e-14);
        let off = kernel_at(&ev, Vec3::new(10.0, s, 0.0), &k);
        assert_relative_eq!(peak / off, 0.5f64.exp(), max_relative = 1e-12);
    }

    #[test]
    fn lor_kernel_decreases_with_distance() {
        let k = KernelParams::default();
        let ev = lor_event(None);
        let mut last = f64::INFINITY;
        for i in 0..200 {
            let v = kernel_at(&ev, Vec3::new(3.0, 0.0, 0.1 * i as f64), &k);
            assert!(v <= last && v >= 0.0);
            last = v;
        }
    }

    #[test]
    fn tof_shifts_towards_first_endpoint() {
        let k = KernelParams {
            tof_sigma_mm: Some(20.0),
            ..KernelParams::default()
        };
        // 200 ps → 30 mm towards p1 (negative x)
        let ev = lor_event(Some(200.0));
        let at = |x| kernel_at(&ev, Vec3::new(x, 0.0, 0.0), &k);
        let shift = 0.5 * SPEED_OF_LIGHT_MM_PER_PS * 200.0;
        assert!(at(-shift) > at(-shift + 1.0) && at(-shift) > at(-shift - 1.0));
        // without dt the TOF factor is skipped
        let plain = kernel_at(&lor_event(None), Vec3::ZERO, &k);
        assert_relative_eq!(plain, 1.0 / ((2.0 * PI).sqrt() * 4.0), max_relative = 1e-14);
    }

    #[test]
    fn cone_peak_and_one_sigma_ratio() {
        let k = KernelParams::default();
        let ev = cone_event();
        let cone = ev.cones[0];
        let sigma = k.cone_sigma(&cone);
        let beta = cone.half_angle_beta;
        // Points at distance 50 from the apex along directions at β and β + σ.
        let on = cone.apex + Vec3::new(beta.sin(), 0.0, -beta.cos()) * 50.0;
        let off = cone.apex + Vec3::new((beta + sigma).sin(), 0.0, -(beta + sigma).cos()) * 50.0;
        let a = kernel_at(&ev, on, &k);
        let b = kernel_at(&ev, off, &k);
        let expected_peak = 1.0 / ((2.0 * PI).sqrt() * sigma * beta.sin());
        assert_relative_eq!(a, expected_peak, max_relative = 1e-9);
        assert_relative_eq!(a / b, 0.5f64.exp(), max_relative = 1e-9);
        assert_eq!(kernel_at(&ev, cone.apex, &k), 0.0);
    }

    #[test]
    fn energy_resolution_widens_cones() {
        let cone = cone_event().cones[0];
        let sharp = KernelParams {
            energy_resolution_fwhm_fraction: None,
            ..KernelParams::default()
        };
        assert_eq!(sharp.cone_sigma(&cone), 0.03);
        let blurred = KernelParams::default().cone_sigma(&cone);
        // σ_E1 = 0.08·450/2.3548 keV, dβ/dE1 = 511 / (707² sin β)
        let prop = 511.0 / (707.0f64.powi(2) * cone.half_angle_beta.sin()) * 0.08 * 450.0 / FWHM_PER_SIGMA;
        assert_relative_eq!(blurred, (0.03f64.powi(2) + prop * prop).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn c12_is_product_of_parts() {
        let k = KernelParams::default();
        let lor = lor_event(None);
        let cone = cone_event();
        let c12 = DetectionEvent {
            class: ClassTag::C12,
            lor: lor.lor,
            cones: cone.cones.clone(),
            true_origin: None,
        };
        for p in [Vec3::new(0.0, 1.0, 2.0), Vec3::new(-7.0, 0.5, 30.0)] {
            assert_relative_eq!(
                kernel_at(&c12, p, &k),
                kernel_at(&lor, p, &k) * kernel_at(&cone, p, &k),
                max_relative = 1e-15
            );
        }
    }

    #[test]
    fn cutoff_and_class_check() {
        let k = KernelParams {
            cutoff_sigmas: Some(3.0),
            ..KernelParams::default()
        };
        let ev = lor_event(None);
        assert_eq!(kernel_at(&ev, Vec3::new(0.0, 12.5, 0.0), &k), 0.0);
        assert!(kernel_at(&ev, Vec3::new(0.0, 11.5, 0.0), &k) > 0.0);
        let g = VoxelGrid::new([3, 3, 3], [5.0; 3], Point3::ZERO).unwrap();
        assert!(kernel_value(ClassTag::C12, &ev, 0, &g, &k).is_err());
        assert!(kernel_value(ClassTag::C02, &ev, 27, &g, &k).is_err());
        assert!(kernel_value(ClassTag::C02, &ev, 13, &g, &k).unwrap() > 0.0);
    }

    #[test]
    fn continuity() {
        let k = KernelParams::default();
        let ev = cone_event();
        let cone = ev.cones[0];
        // Within two angular sigmas of the cone surface.
        let theta = cone.half_angle_beta + 0.1;
        let p = cone.apex + Vec3::new(theta.sin() * 0.6, theta.sin() * 0.8, -theta.cos()) * 70.0;
        let a = kernel_at(&ev, p, &k);
        let b = kernel_at(&ev, p + Vec3::new(1e-6, 0.0, 0.0), &k);
        assert!((a - b).abs() <= 1e-6 * a);
    }
}
