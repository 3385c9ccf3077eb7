//! Detected events and their JSON-lines file format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::class::ClassTag;
use crate::error::{Error, Result};
use crate::geometry::{Direction3, Point3};
use crate::physics::{ComptonCone, ANNIHILATION_KEV, THIRD_PHOTON_KEV};

/// Line of response between the first interactions of the two annihilation
/// photons. `dt_ps` is `t2 - t1`, the arrival time at `p2` minus the arrival
/// time at `p1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lor {
    pub p1: Point3,
    pub p2: Point3,
    pub dt_ps: Option<f64>,
}

/// One detected event, tagged with exactly one class.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionEvent {
    pub class: ClassTag,
    pub lor: Option<Lor>,
    pub cones: Vec<ComptonCone>,
    /// Simulation truth; ignored by reconstruction.
    pub true_origin: Option<Point3>,
}

fn is_branch(cone: &ComptonCone, e0: f64) -> bool {
    (cone.e0_kev - e0).abs() < 1e-6
}

impl DetectionEvent {
    /// Checks the per-class content rules.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Format(format!("{} event: {msg}", self.class)));
        if self.class.has_lor() != self.lor.is_some() {
            return fail("line of response presence does not match class");
        }
        if self.cones.len() != self.class.cone_count() {
            return fail("wrong number of cones");
        }
        for c in &self.cones {
            if !(0.0..=std::f64::consts::PI).contains(&c.half_angle_beta) {
                return fail("cone half-angle outside [0, pi]");
            }
        }
        let branches_ok = match self.class {
            ClassTag::C01 => is_branch(&self.cones[0], ANNIHILATION_KEV),
            ClassTag::C10 | ClassTag::C12 => is_branch(&self.cones[0], THIRD_PHOTON_KEV),
            ClassTag::C11 => {
                let a = self.cones.iter().filter(|c| is_branch(c, ANNIHILATION_KEV)).count();
                let b = self.cones.iter().filter(|c| is_branch(c, THIRD_PHOTON_KEV)).count();
                a == 1 && b == 1
            }
            ClassTag::C02 => true,
        };
        if !branches_ok {
            return fail("cone energy branch does not match class");
        }
        if let Some(lor) = &self.lor {
            if lor.p1.distance(lor.p2) == 0.0 {
                return fail("degenerate line of response");
            }
        }
        Ok(())
    }

    pub fn without_truth(mut self) -> Self {
        self.true_origin = None;
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LorRecord {
    p1: [f64; 3],
    p2: [f64; 3],
    dt_ps: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConeRecord {
    apex: [f64; 3],
    axis: [f64; 3],
    beta_rad: f64,
    e0_kev: f64,
    e1_kev: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthRecord {
    origin: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    class: ClassTag,
    lor: Option<LorRecord>,
    cones: Vec<ConeRecord>,
    truth: Option<TruthRecord>,
}

impl From<&DetectionEvent> for EventRecord {
    fn from(e: &DetectionEvent) -> Self {
        EventRecord {
            class: e.class,
            lor: e.lor.map(|l| LorRecord {
                p1: l.p1.to_array(),
                p2: l.p2.to_array(),
                dt_ps: l.dt_ps,
            }),
            cones: e
                .cones
                .iter()
                .map(|c| ConeRecord {
                    apex: c.apex.to_array(),
                    axis: c.axis.vec().to_array(),
                    beta_rad: c.half_angle_beta,
                    e0_kev: c.e0_kev,
                    e1_kev: c.e1_kev,
                })
                .collect(),
            truth: e.true_origin.map(|o| TruthRecord {
                origin: o.to_array(),
            }),
        }
    }
}

impl TryFrom<EventRecord> for DetectionEvent {
    type Error = Error;

    fn try_from(r: EventRecord) -> Result<Self> {
        let cones = r
            .cones
            .into_iter()
            .map(|c| {
                let axis = Direction3::new(c.axis.into())
                    .ok_or_else(|| Error::Format("zero-length cone axis".into()))?;
                Ok(ComptonCone {
                    apex: c.apex.into(),
                    axis,
                    half_angle_beta: c.beta_rad,
                    e0_kev: c.e0_kev,
                    e1_kev: c.e1_kev,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let event = DetectionEvent {
            class: r.class,
            lor: r.lor.map(|l| Lor {
                p1: l.p1.into(),
                p2: l.p2.into(),
                dt_ps: l.dt_ps,
            }),
            cones,
            true_origin: r.truth.map(|t| t.origin.into()),
        };
        event.validate()?;
        Ok(event)
    }
}

/// Writes one JSON object per line.
pub fn write_event<W: Write>(w: &mut W, event: &DetectionEvent) -> Result<()> {
    serde_json::to_writer(&mut *w, &EventRecord::from(event))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_events<W: Write>(w: &mut W, events: &[DetectionEvent]) -> Result<()> {
    for e in events {
        write_event(w, e)?;
    }
    Ok(())
}

/// Parsed event file.
#[derive(Debug, Default)]
pub struct EventReadout {
    pub events: Vec<DetectionEvent>,
    /// Records that parsed as JSON but violate the class content rules;
    /// they are skipped.
    pub warnings: usize,
}

/// Reads a JSON-lines event file. Syntax errors abort with the line number;
/// records with inconsistent content are skipped and counted. Truth is
/// dropped unless `keep_truth`.
pub fn read_events<R: BufRead>(r: R, keep_truth: bool) -> Result<EventReadout> {
    let mut out = EventReadout::default();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EventRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("event file line {}: {e}", lineno + 1)))?;
        match DetectionEvent::try_from(record) {
            Ok(ev) => out.events.push(if keep_truth { ev } else { ev.without_truth() }),
            Err(_) => out.warnings += 1,
        }
    }
    Ok(out)
}
