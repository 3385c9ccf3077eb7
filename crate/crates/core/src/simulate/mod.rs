//! Monte-Carlo generation of three-photon decays, their transport through
//! the detection annulus and the assignment of every decay to one of the
//! five detection classes or to "undetected".
//!
//! Transport is deliberately simple: each photon is tracked to at most one
//! Compton scatter followed by one photoabsorption. A photon whose scatter
//! and absorption are both recorded yields a Compton cone; an annihilation
//! photon with any recorded interaction can also serve as a line-of-response
//! endpoint.

mod event;

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use event::{read_events, write_event, write_events, DetectionEvent, EventReadout, Lor};

use crate::class::ClassTag;
use crate::error::{Error, Result};
use crate::geometry::{DetectorAnnulus, Direction3, Point3};
use crate::infer::ActivityImage;
use crate::par;
use crate::physics::{
    blur_energy, sample_klein_nishina_cos, scattered_energy, ComptonCone, PhysicsParams,
    ANNIHILATION_KEV, THIRD_PHOTON_KEV,
};
use crate::rng::{Domain, Stream, StreamKey};

/// Speed of light, mm/ps.
pub const SPEED_OF_LIGHT_MM_PER_PS: f64 = 0.299_792_458;

/// Forced-detection model where each annihilation photon is detected with
/// probability `p` and the third photon yields a cone with probability `q`,
/// independently and regardless of geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyModel {
    pub p: f64,
    pub q: f64,
}

impl ToyModel {
    /// Closed-form class probabilities in canonical class order.
    pub fn class_probabilities(&self) -> [f64; 5] {
        let (p, q) = (self.p, self.q);
        [
            2.0 * p * (1.0 - p) * (1.0 - q),
            q * (1.0 - p) * (1.0 - p),
            p * p * (1.0 - q),
            2.0 * p * (1.0 - p) * q,
            p * p * q,
        ]
    }
}

/// Detection-side settings of the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionParams {
    /// Relative half-width of the energy windows around 511 and 1157 keV.
    pub energy_window: f64,
    /// Standard deviation of the line-of-response time difference; `None`
    /// leaves `dt_ps` empty.
    pub tof_sigma_ps: Option<f64>,
    /// Replace transport with the independence toy model.
    pub toy: Option<ToyModel>,
    /// Keep the true decay position in the output.
    pub record_truth: bool,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            energy_window: 0.1,
            tof_sigma_ps: None,
            toy: None,
            record_truth: true,
        }
    }
}

/// One decay: a back-to-back annihilation pair and an independent,
/// isotropic third photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decay {
    pub origin: Point3,
    pub lor_direction: Direction3,
    pub third_direction: Direction3,
}

pub fn isotropic_direction<R: Rng + ?Sized>(rng: &mut R) -> Direction3 {
    let cos_theta = 2.0 * rng.random::<f64>() - 1.0;
    Direction3::from_spherical(cos_theta, 2.0 * PI * rng.random::<f64>())
}

pub fn generate_decay<R, F>(origin_sampler: F, rng: &mut R) -> Decay
where
    R: Rng + ?Sized,
    F: FnOnce(&mut R) -> Point3,
{
    let origin = origin_sampler(rng);
    Decay {
        origin,
        lor_direction: isotropic_direction(rng),
        third_direction: isotropic_direction(rng),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub position: Point3,
    pub deposit_kev: f64,
}

/// What the detector recorded for one photon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhotonTrack {
    Escaped,
    /// Photoabsorbed at once, or scattered and then escaped.
    Single(Interaction),
    /// Compton scatter followed by photoabsorption.
    ScatterAbsorb {
        scatter: Interaction,
        absorb: Interaction,
    },
}

impl PhotonTrack {
    fn first(&self) -> Option<Point3> {
        match self {
            PhotonTrack::Escaped => None,
            PhotonTrack::Single(i) => Some(i.position),
            PhotonTrack::ScatterAbsorb { scatter, .. } => Some(scatter.position),
        }
    }
}

/// Result of classifying one decay.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Detected(DetectionEvent),
    Undetected,
    /// Observables exist but match no class (e.g. two third-photon-window
    /// cones); dropped, and reported in the undetected row.
    Unclassifiable,
}

impl Outcome {
    pub fn class(&self) -> Option<ClassTag> {
        match self {
            Outcome::Detected(e) => Some(e.class),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayResult {
    pub outcome: Outcome,
    /// Cones discarded because blurred energies left the kinematic domain.
    pub rejected_cones: u32,
}

/// Transport and classification for a fixed detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub detector: DetectorAnnulus,
    pub physics: PhysicsParams,
    pub detection: DetectionParams,
}

fn sample_depth(segments: &[(f64, f64)], mfp: f64, rng: &mut Stream) -> Option<f64> {
    let u: f64 = rng.random();
    if !mfp.is_finite() {
        return None;
    }
    let mut s = -mfp * (1.0 - u).ln();
    for &(t0, t1) in segments {
        let len = t1 - t0;
        if s < len {
            return Some(t0 + s);
        }
        s -= len;
    }
    None
}

impl Simulator {
    pub fn new(
        detector: DetectorAnnulus,
        physics: PhysicsParams,
        detection: DetectionParams,
    ) -> Result<Self> {
        detector.validate()?;
        physics.validate()?;
        if !(detection.energy_window > 0.0 && detection.energy_window < 0.38) {
            // Above ~0.38 the 511 and 1157 keV windows overlap.
            return Err(Error::InvalidParameter(format!(
                "energy window {} must lie in (0, 0.38)",
                detection.energy_window
            )));
        }
        if let Some(s) = detection.tof_sigma_ps {
            if !(s > 0.0) {
                return Err(Error::InvalidParameter("tof_sigma_ps must be positive".into()));
            }
        }
        if let Some(t) = detection.toy {
            if !((0.0..=1.0).contains(&t.p) && (0.0..=1.0).contains(&t.q)) {
                return Err(Error::InvalidParameter("toy probabilities must lie in [0, 1]".into()));
            }
        }
        Ok(Simulator {
            detector,
            physics,
            detection,
        })
    }

    /// Tracks one photon through the annulus.
    pub fn transport_photon(
        &self,
        origin: Point3,
        dir: Direction3,
        energy: f64,
        rng: &mut Stream,
    ) -> PhotonTrack {
        let (segs, n) = self.detector.material_segments(origin, dir);
        let Some(t) = sample_depth(&segs[..n], self.physics.mean_free_path(energy), rng) else {
            return PhotonTrack::Escaped;
        };
        let x1 = origin + dir.vec() * t;
        if rng.random::<f64>() < self.physics.photoabsorption_fraction {
            return PhotonTrack::Single(Interaction {
                position: x1,
                deposit_kev: energy,
            });
        }
        let cos_theta = sample_klein_nishina_cos(energy, rng);
        let out = dir.deflect(cos_theta, 2.0 * PI * rng.random::<f64>());
        let e_out = scattered_energy(energy, cos_theta);
        let scatter = Interaction {
            position: x1,
            deposit_kev: energy - e_out,
        };
        let (segs, n) = self.detector.material_segments(x1, out);
        match sample_depth(&segs[..n], self.physics.mean_free_path(e_out), rng) {
            Some(t2) => PhotonTrack::ScatterAbsorb {
                scatter,
                absorb: Interaction {
                    position: x1 + out.vec() * t2,
                    deposit_kev: e_out,
                },
            },
            None => PhotonTrack::Single(scatter),
        }
    }

    /// Toy-mode photon: detected with probability `prob` as a noiseless
    /// scatter-then-absorb pair placed in (or, for axial escapes, just
    /// beyond) the annulus.
    fn forced_photon(
        &self,
        origin: Point3,
        dir: Direction3,
        energy: f64,
        prob: f64,
        rng: &mut Stream,
    ) -> PhotonTrack {
        if rng.random::<f64>() >= prob {
            return PhotonTrack::Escaped;
        }
        let depth = match self.detector.ray_annulus_entry(origin, dir) {
            Some((t0, t1)) => 0.5 * (t0 + t1),
            None => 0.5 * (self.detector.inner_radius_mm + self.detector.outer_radius_mm),
        };
        let x1 = origin + dir.vec() * depth;
        let cos_theta = sample_klein_nishina_cos(energy, rng);
        let out = dir.deflect(cos_theta, 2.0 * PI * rng.random::<f64>());
        let e_out = scattered_energy(energy, cos_theta);
        PhotonTrack::ScatterAbsorb {
            scatter: Interaction {
                position: x1,
                deposit_kev: energy - e_out,
            },
            absorb: Interaction {
                position: x1 + out.vec() * 10.0,
                deposit_kev: e_out,
            },
        }
    }

    fn energy_branch(&self, total: f64) -> Option<f64> {
        let w = self.detection.energy_window;
        [ANNIHILATION_KEV, THIRD_PHOTON_KEV]
            .into_iter()
            .find(|&e0| (total - e0).abs() <= w * e0)
    }

    /// Turns a scatter-absorb track into a cone, attributing it to an energy
    /// branch from the measured total. `Err(())` marks a rejected cone.
    fn measure_cone(
        &self,
        track: &PhotonTrack,
        noiseless: bool,
        rng: &mut Stream,
    ) -> Option<std::result::Result<ComptonCone, ()>> {
        let PhotonTrack::ScatterAbsorb { scatter, absorb } = track else {
            return None;
        };
        let (e1, e2) = if noiseless {
            (scatter.deposit_kev, absorb.deposit_kev)
        } else {
            (
                blur_energy(scatter.deposit_kev, &self.physics, rng),
                blur_energy(absorb.deposit_kev, &self.physics, rng),
            )
        };
        let e0 = self.energy_branch(e1 + e2)?;
        Some(ComptonCone::from_interactions(scatter.position, absorb.position, e0, e1).map_err(|_| ()))
    }

    /// Transports the three photons of `decay` and classifies the result.
    pub fn transport_and_classify(&self, decay: &Decay, rng: &mut Stream) -> DecayResult {
        let o = decay.origin;
        let (a1, a2, third) = match self.detection.toy {
            Some(toy) => (
                self.forced_photon(o, decay.lor_direction, ANNIHILATION_KEV, toy.p, rng),
                self.forced_photon(o, decay.lor_direction.reversed(), ANNIHILATION_KEV, toy.p, rng),
                self.forced_photon(o, decay.third_direction, THIRD_PHOTON_KEV, toy.q, rng),
            ),
            None => (
                self.transport_photon(o, decay.lor_direction, ANNIHILATION_KEV, rng),
                self.transport_photon(o, decay.lor_direction.reversed(), ANNIHILATION_KEV, rng),
                self.transport_photon(o, decay.third_direction, THIRD_PHOTON_KEV, rng),
            ),
        };
        let noiseless = self.detection.toy.is_some();

        let lor = match (a1.first(), a2.first()) {
            (Some(p1), Some(p2)) => Some(Lor {
                p1,
                p2,
                dt_ps: self.detection.tof_sigma_ps.map(|sigma| {
                    let dt = (p2.distance(o) - p1.distance(o)) / SPEED_OF_LIGHT_MM_PER_PS;
                    dt + Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
                }),
            }),
            _ => None,
        };

        let mut rejected = 0;
        let mut cones = Vec::with_capacity(2);
        let mut tracks = vec![&third];
        if lor.is_none() {
            tracks.push(&a1);
            tracks.push(&a2);
        }
        for track in tracks {
            match self.measure_cone(track, noiseless, rng) {
                Some(Ok(cone)) => cones.push(cone),
                Some(Err(())) => rejected += 1,
                None => {}
            }
        }

        let low = cones.iter().filter(|c| c.e0_kev == ANNIHILATION_KEV).count();
        let high = cones.len() - low;
        let class = match (lor.is_some(), low, high) {
            (true, 0, 0) => Some(ClassTag::C02),
            (true, 0, 1) => Some(ClassTag::C12),
            (false, 1, 0) => Some(ClassTag::C01),
            (false, 0, 1) => Some(ClassTag::C10),
            (false, 1, 1) => Some(ClassTag::C11),
            (false, 0, 0) => None,
            _ => {
                return DecayResult {
                    outcome: Outcome::Unclassifiable,
                    rejected_cones: rejected,
                }
            }
        };
        let outcome = match class {
            None => Outcome::Undetected,
            Some(class) => {
                // Canonical order: annihilation cone first.
                cones.sort_by(|a, b| a.e0_kev.total_cmp(&b.e0_kev));
                Outcome::Detected(DetectionEvent {
                    class,
                    lor,
                    cones,
                    true_origin: self.detection.record_truth.then_some(o),
                })
            }
        };
        DecayResult {
            outcome,
            rejected_cones: rejected,
        }
    }
}

/// Draws decay positions from an activity image: voxel with probability
/// proportional to its value, then uniformly inside the voxel.
#[derive(Debug, Clone)]
pub struct ImageSampler<'a> {
    image: &'a ActivityImage,
    cdf: Vec<f64>,
    last_active: usize,
}

impl<'a> ImageSampler<'a> {
    pub fn new(image: &'a ActivityImage) -> Result<Self> {
        let mut acc = 0.0;
        let cdf: Vec<f64> = image
            .values
            .iter()
            .map(|&v| {
                acc += v;
                acc
            })
            .collect();
        if !(acc > 0.0 && acc.is_finite()) {
            return Err(Error::DegenerateImage("source image has no activity".into()));
        }
        let last_active = image.values.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        Ok(ImageSampler {
            image,
            cdf,
            last_active,
        })
    }

    pub fn voxel<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let j = self.cdf.partition_point(|&c| c <= u);
        if j < self.cdf.len() {
            j
        } else {
            self.last_active
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3 {
        let j = self.voxel(rng);
        let u = [rng.random(), rng.random(), rng.random()];
        self.image.grid.point_in_voxel(j, u)
    }
}

/// Per-outcome decay counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTable {
    pub classes: [u64; 5],
    pub undetected: u64,
}

impl CountTable {
    pub fn record(&mut self, class: Option<ClassTag>) {
        match class {
            Some(c) => self.classes[c.index()] += 1,
            None => self.undetected += 1,
        }
    }

    pub fn merge(&mut self, other: &CountTable) {
        for k in 0..5 {
            self.classes[k] += other.classes[k];
        }
        self.undetected += other.undetected;
    }

    pub fn total(&self) -> u64 {
        self.classes.iter().sum::<u64>() + self.undetected
    }

    pub fn detected(&self) -> u64 {
        self.classes.iter().sum()
    }

    /// Rows in output order: the five classes, then `undetected`.
    pub fn rows(&self) -> Vec<(&'static str, u64)> {
        let mut rows: Vec<_> = ClassTag::ALL
            .iter()
            .map(|c| (c.as_str(), self.classes[c.index()]))
            .collect();
        rows.push(("undetected", self.undetected));
        rows
    }

    /// CSV with header `class,count,fraction`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let total = self.total() as f64;
        writeln!(w, "class,count,fraction")?;
        for (name, n) in self.rows() {
            let frac = if total > 0.0 { n as f64 / total } else { 0.0 };
            writeln!(w, "{name},{n},{frac}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub n_decays: u64,
    pub counts: CountTable,
    /// Decays with observables matching no class (included in `undetected`).
    pub unclassifiable: u64,
    pub rejected_cones: u64,
}

const BLOCK: usize = 1 << 15;

/// Simulates `n_decays` decays drawn from `source`, streaming detected
/// events in decay order to `sink`. Decay `i` uses its own random stream,
/// so the output does not depend on the number of worker threads.
pub fn run_simulation<W: Write>(
    source: &ActivityImage,
    n_decays: u64,
    sim: &Simulator,
    seed: u64,
    sink: &mut W,
) -> Result<SimulationSummary> {
    if n_decays == 0 {
        return Err(Error::InvalidParameter("n_decays must be at least 1".into()));
    }
    let sampler = ImageSampler::new(source)?;
    let key = StreamKey::new(seed, Domain::Decay);
    let mut summary = SimulationSummary {
        n_decays,
        ..Default::default()
    };
    let mut start = 0u64;
    while start < n_decays {
        let len = (n_decays - start).min(BLOCK as u64) as usize;
        let results = par::map_range(len, |i| {
            let mut rng = key.stream(start + i as u64);
            let decay = generate_decay(|r| sampler.sample(r), &mut rng);
            sim.transport_and_classify(&decay, &mut rng)
        });
        for r in results {
            summary.rejected_cones += r.rejected_cones as u64;
            summary.counts.record(r.outcome.class());
            match r.outcome {
                Outcome::Detected(ev) => write_event(sink, &ev)?,
                Outcome::Unclassifiable => summary.unclassifiable += 1,
                Outcome::Undetected => {}
            }
        }
        start += len as u64;
    }
    sink.flush()?;
    Ok(summary)
}

/// Class counts only, without materialising events.
pub fn count_classes(
    source: &ActivityImage,
    n_decays: u64,
    sim: &Simulator,
    seed: u64,
) -> Result<SimulationSummary> {
    run_simulation(source, n_decays, sim, seed, &mut std::io::sink())
}
