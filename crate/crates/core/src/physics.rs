//! Compton kinematics, photon interaction sampling and energy resolution.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Direction3, Point3};

/// Electron rest energy, keV.
pub const ELECTRON_REST_KEV: f64 = 511.0;
/// Energy of each annihilation photon, keV.
pub const ANNIHILATION_KEV: f64 = 511.0;
/// Energy of the scandium-44 third photon, keV.
pub const THIRD_PHOTON_KEV: f64 = 1157.0;

/// FWHM of a Gaussian divided by its standard deviation, `2·sqrt(2 ln 2)`.
pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;

/// Cosine of the Compton cone half-angle for an incident energy `e0` that
/// deposits `e1` in the first scatter.
pub fn compton_cos_beta(e0: f64, e1: f64) -> Result<f64> {
    if !(e0 > 0.0 && e1 > 0.0 && e1 < e0) {
        return Err(Error::ComptonDomain { e0, e1 });
    }
    Ok(1.0 - ELECTRON_REST_KEV * e1 / (e0 * (e0 - e1)))
}

/// Largest energy a single Compton scatter can deposit (backscatter).
pub fn compton_edge(e0: f64) -> f64 {
    let alpha = e0 / ELECTRON_REST_KEV;
    e0 * 2.0 * alpha / (1.0 + 2.0 * alpha)
}

/// Energy of the photon after scattering through `cos_theta`.
pub fn scattered_energy(e0: f64, cos_theta: f64) -> f64 {
    e0 / (1.0 + e0 / ELECTRON_REST_KEV * (1.0 - cos_theta))
}

/// Klein–Nishina differential cross-section in units of `r_e²/2`.
/// Equals 2 in the forward direction for every energy.
pub fn klein_nishina(e0: f64, cos_theta: f64) -> f64 {
    let ratio = 1.0 / (1.0 + e0 / ELECTRON_REST_KEV * (1.0 - cos_theta));
    let sin2 = 1.0 - cos_theta * cos_theta;
    ratio * ratio * (ratio + 1.0 / ratio - sin2)
}

/// Scatter angle (radians) drawn from the Klein–Nishina law by rejection
/// against the forward-peak bound.
pub fn sample_klein_nishina_angle<R: Rng + ?Sized>(e0: f64, rng: &mut R) -> f64 {
    sample_klein_nishina_cos(e0, rng).acos()
}

pub fn sample_klein_nishina_cos<R: Rng + ?Sized>(e0: f64, rng: &mut R) -> f64 {
    loop {
        let c = 2.0 * rng.random::<f64>() - 1.0;
        if 2.0 * rng.random::<f64>() <= klein_nishina(e0, c) {
            return c;
        }
    }
}

/// Reference values at the two photon energies of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyPair {
    pub at_511_kev: f64,
    pub at_1157_kev: f64,
}

impl EnergyPair {
    pub const fn new(at_511_kev: f64, at_1157_kev: f64) -> Self {
        EnergyPair {
            at_511_kev,
            at_1157_kev,
        }
    }

    /// Linear interpolation in energy, clamped to the reference values
    /// outside `[511, 1157]` keV.
    pub fn interpolate_clamped(&self, e: f64) -> f64 {
        let t = ((e - ANNIHILATION_KEV) / (THIRD_PHOTON_KEV - ANNIHILATION_KEV)).clamp(0.0, 1.0);
        self.at_511_kev + t * (self.at_1157_kev - self.at_511_kev)
    }

    /// Power-law interpolation/extrapolation through the two points, which
    /// stays positive for positive references.
    pub fn interpolate_power(&self, e: f64) -> f64 {
        let (a, b) = (self.at_511_kev, self.at_1157_kev);
        if !(a.is_finite() && b.is_finite()) {
            return if e < 0.5 * (ANNIHILATION_KEV + THIRD_PHOTON_KEV) {
                a
            } else {
                b
            };
        }
        let k = (b / a).ln() / (THIRD_PHOTON_KEV / ANNIHILATION_KEV).ln();
        a * (e / ANNIHILATION_KEV).powf(k)
    }

    /// Value at whichever reference energy is nearer to `e`.
    pub fn nearest(&self, e: f64) -> f64 {
        if e < 0.5 * (ANNIHILATION_KEV + THIRD_PHOTON_KEV) {
            self.at_511_kev
        } else {
            self.at_1157_kev
        }
    }
}

/// Detector physics constants. None of them are published for the real
/// camera; the defaults are liquid-xenon ballpark figures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    /// Mean free path between interactions, mm.
    pub interaction_mean_free_path_mm: EnergyPair,
    /// Relative energy resolution (FWHM / E).
    pub energy_resolution_fwhm_fraction: EnergyPair,
    /// Probability that an interaction is a photoabsorption.
    pub photoabsorption_fraction: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        PhysicsParams {
            interaction_mean_free_path_mm: EnergyPair::new(35.0, 58.0),
            energy_resolution_fwhm_fraction: EnergyPair::new(0.08, 0.05),
            photoabsorption_fraction: 0.2,
        }
    }
}

impl PhysicsParams {
    /// Parameters that never produce an interaction.
    pub fn transparent() -> Self {
        PhysicsParams {
            interaction_mean_free_path_mm: EnergyPair::new(f64::INFINITY, f64::INFINITY),
            ..PhysicsParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.interaction_mean_free_path_mm;
        if !(m.at_511_kev > 0.0 && m.at_1157_kev > 0.0) {
            return Err(Error::InvalidParameter(
                "mean free paths must be positive".into(),
            ));
        }
        let r = self.energy_resolution_fwhm_fraction;
        if !((0.0..1.0).contains(&r.at_511_kev) && (0.0..1.0).contains(&r.at_1157_kev)) {
            return Err(Error::InvalidParameter(
                "energy resolution fractions must lie in [0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.photoabsorption_fraction) {
            return Err(Error::InvalidParameter(
                "photoabsorption fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn mean_free_path(&self, e: f64) -> f64 {
        self.interaction_mean_free_path_mm.interpolate_power(e)
    }

    pub fn fwhm_fraction(&self, e: f64) -> f64 {
        self.energy_resolution_fwhm_fraction.interpolate_clamped(e)
    }
}

/// Measured energy for a true deposit `e_true` under the configured
/// resolution.
pub fn blur_energy<R: Rng + ?Sized>(e_true: f64, params: &PhysicsParams, rng: &mut R) -> f64 {
    blur_energy_fwhm(e_true, params.fwhm_fraction(e_true), rng)
}

/// Gaussian blur with FWHM `fraction · e_true`, truncated to positive
/// values by redrawing.
pub fn blur_energy_fwhm<R: Rng + ?Sized>(e_true: f64, fraction: f64, rng: &mut R) -> f64 {
    if fraction <= 0.0 {
        return e_true;
    }
    let sigma = fraction * e_true / FWHM_PER_SIGMA;
    let normal = Normal::new(e_true, sigma).expect("finite sigma");
    for _ in 0..64 {
        let e = normal.sample(rng);
        if e > 0.0 {
            return e;
        }
    }
    // Unreachable for fraction < 1 in practice (P < 1e-300 per draw).
    e_true
}

/// Cone of possible source directions reconstructed from a Compton
/// scatter-then-absorb sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComptonCone {
    /// First interaction.
    pub apex: Point3,
    /// From the second interaction towards the first.
    pub axis: Direction3,
    /// Half-opening angle in `[0, π]`.
    pub half_angle_beta: f64,
    pub e0_kev: f64,
    pub e1_kev: f64,
}

impl ComptonCone {
    /// Builds the cone from the two interaction positions and the measured
    /// first deposit. Fails when the energies are outside the kinematic
    /// domain or the blurred cosine leaves `[-1, 1]`.
    pub fn from_interactions(
        first: Point3,
        second: Point3,
        e0_kev: f64,
        e1_kev: f64,
    ) -> Result<Self> {
        let mut cos_beta = compton_cos_beta(e0_kev, e1_kev)?;
        // Rounding at the Compton edge.
        if (-1.0 - 1e-12..-1.0).contains(&cos_beta) {
            cos_beta = -1.0;
        }
        if !(-1.0..=1.0).contains(&cos_beta) {
            return Err(Error::ComptonDomain {
                e0: e0_kev,
                e1: e1_kev,
            });
        }
        let axis = Direction3::new(first - second)
            .ok_or_else(|| Error::Geometry("coincident interaction points".into()))?;
        Ok(ComptonCone {
            apex: first,
            axis,
            half_angle_beta: cos_beta.acos(),
            e0_kev,
            e1_kev,
        })
    }

    /// Signed angle between the apex-to-`p` direction and the cone surface;
    /// `None` when `p` coincides with the apex.
    pub fn angular_residual(&self, p: Point3) -> Option<f64> {
        let v = p - self.apex;
        if v.norm_squared() == 0.0 {
            return None;
        }
        Some(v.angle_to(self.axis.vec()) - self.half_angle_beta)
    }
}

/// Normalised angular density of the scatter angle θ (per radian),
/// proportional to `dσ/dΩ · 2π sin θ`.
pub fn klein_nishina_theta_pdf(e0: f64, theta: f64) -> f64 {
    let n = 4000;
    let h = PI / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let t = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        total += w * klein_nishina(e0, t.cos()) * t.sin();
    }
    total *= h / 3.0;
    klein_nishina(e0, theta.cos()) * theta.sin() / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, StreamKey};
    use approx::assert_relative_eq;

    /// Mean of cos θ under Klein–Nishina by composite Simpson, with the
    /// cross-section written out from the photon energy ratio.
    fn quadrature_mean_cos(e0: f64) -> f64 {
        let n = 20_000;
        let h = 2.0 / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let c: f64 = -1.0 + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let e_out = e0 / (1.0 + (e0 / 511.0) * (1.0 - c));
            let r = e_out / e0;
            let f = r * r * (r + 1.0 / r - (1.0 - c * c));
            num += w * f * c;
            den += w * f;
        }
        num / den
    }

    #[test]
    fn half_energy_at_rest_energy_is_right_angle() {
        assert_relative_eq!(compton_cos_beta(511.0, 255.5).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn edge_gives_backscatter() {
        assert_relative_eq!(compton_edge(511.0), 340.666_666_666_666_7, epsilon = 1e-9);
        for e0 in [511.0, 1157.0] {
            assert_relative_eq!(
                compton_cos_beta(e0, compton_edge(e0)).unwrap(),
                -1.0,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn third_photon_example() {
        // 1 - 511*450 / (1157*707)
        let c = compton_cos_beta(1157.0, 450.0).unwrap();
        assert_relative_eq!(c, 0.718_887, epsilon = 1e-6);
        assert_relative_eq!(c.acos().to_degrees(), 44.04, epsilon = 0.005);
        assert_relative_eq!(compton_edge(1157.0), 947.72, epsilon = 0.01);
        assert!(compton_edge(1e-9) < 1e-9);
    }

    #[test]
    fn domain_errors() {
        assert!(compton_cos_beta(511.0, 511.0).is_err());
        assert!(compton_cos_beta(511.0, 600.0).is_err());
        assert!(compton_cos_beta(0.0, -1.0).is_err());
        assert!(compton_cos_beta(511.0, 0.0).is_err());
    }

    #[test]
    fn cos_beta_strictly_decreasing() {
        for e0 in [511.0, 1157.0] {
            let mut prev = f64::INFINITY;
            for i in 1..=1000 {
                let e1 = e0 * i as f64 / 1001.0;
                let c = compton_cos_beta(e0, e1).unwrap();
                assert!(c < prev);
                prev = c;
            }
        }
    }

    #[test]
    fn scattered_energy_matches_cone_angle() {
        for e0 in [511.0, 1157.0] {
            for c in [-0.9, -0.3, 0.2, 0.8] {
                let e1 = e0 - scattered_energy(e0, c);
                assert_relative_eq!(compton_cos_beta(e0, e1).unwrap(), c, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn klein_nishina_mean_cos_matches_quadrature() {
        let key = StreamKey::new(11, Domain::Demo);
        let mut rng = key.stream(0);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let t = sample_klein_nishina_angle(511.0, &mut rng);
            assert!((0.0..=PI).contains(&t));
            let c = t.cos();
            sum += c;
            sum2 += c * c;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let expected = quadrature_mean_cos(511.0);
        assert!(
            (mean - expected).abs() < 3.0 * se,
            "mean {mean} expected {expected} se {se}"
        );
    }

    #[test]
    fn klein_nishina_sampling_is_deterministic() {
        let key = StreamKey::new(3, Domain::Demo);
        let a: Vec<f64> = {
            let mut r = key.stream(5);
            (0..100).map(|_| sample_klein_nishina_angle(1157.0, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = key.stream(5);
            (0..100).map(|_| sample_klein_nishina_angle(1157.0, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn blur_identity_without_resolution() {
        let mut rng = StreamKey::new(1, Domain::Demo).stream(0);
        assert_eq!(blur_energy_fwhm(511.0, 0.0, &mut rng), 511.0);
    }

    #[test]
    fn blur_width_matches_fwhm() {
        let mut rng = StreamKey::new(2, Domain::Demo).stream(0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| blur_energy_fwhm(511.0, 0.04, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = 511.0 * 0.04 / 2.3548;
        assert!((var.sqrt() / expected - 1.0).abs() < 0.02);
    }

    #[test]
    fn blur_never_negative() {
        let mut rng = StreamKey::new(4, Domain::Demo).stream(0);
        for _ in 0..1_000_000 {
            assert!(blur_energy_fwhm(30.0, 0.9, &mut rng) > 0.0);
        }
    }

    #[test]
    fn noiseless_cone_contains_source() {
        let mut rng = StreamKey::new(9, Domain::Demo).stream(0);
        let source = Point3::new(3.0, -7.0, 12.0);
        for _ in 0..1000 {
            let incoming = Direction3::from_spherical(2.0 * rng.random::<f64>() - 1.0, 6.0 * rng.random::<f64>());
            let first = source + incoming.vec() * 80.0;
            let c = sample_klein_nishina_cos(1157.0, &mut rng);
            let out = incoming.deflect(c, 2.0 * PI * rng.random::<f64>());
            let second = first + out.vec() * 15.0;
            let e1 = 1157.0 - scattered_energy(1157.0, c);
            let Ok(cone) = ComptonCone::from_interactions(first, second, 1157.0, e1) else {
                continue;
            };
            assert!(cone.angular_residual(source).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn physics_validation() {
        PhysicsParams::default().validate().unwrap();
        PhysicsParams::transparent().validate().unwrap();
        let p = PhysicsParams {
            photoabsorption_fraction: 1.5,
            ..PhysicsParams::default()
        };
        assert!(p.validate().is_err());
        let mut p = PhysicsParams::default();
        p.energy_resolution_fwhm_fraction.at_511_kev = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn mean_free_path_interpolation() {
        let p = PhysicsParams::default();
        assert_relative_eq!(p.mean_free_path(511.0), 35.0, epsilon = 1e-12);
        assert_relative_eq!(p.mean_free_path(1157.0), 58.0, epsilon = 1e-12);
        assert!(p.mean_free_path(100.0) > 0.0 && p.mean_free_path(100.0) < 35.0);
        assert!(PhysicsParams::transparent().mean_free_path(300.0).is_infinite());
    }
}
