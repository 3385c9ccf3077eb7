//! Multi-class likelihood, Fisher information and list-mode MLEM.
//!
//! The inference code is independent of how the system model was built: it
//! consumes, per class, one sparse row `A_j(y_n)` per event (see
//! [`SystemRow`]) together with a [`SensitivityMap`]. Rows can come from the
//! continuous kernels in [`crate::sysmodel`] or from a tabulated toy model.

mod fisher;
mod image;
mod likelihood;
mod mlem;

use serde::{Deserialize, Serialize};

pub use fisher::{
    estimate_fisher, fisher_from_rows, fisher_pooled, fisher_summary, largest_eigenvalue,
    FisherMatrix, FisherReport, FisherRow, FISHER_MAX_VOXELS,
};
pub use image::ActivityImage;
pub use likelihood::{
    class_log_likelihood, extended_log_likelihood, total_log_likelihood, LogLikelihood,
};
pub use mlem::{mlem_step, reconstruct, IterationRecord, MlemStep, ReconConfig, Reconstruction};

use crate::class::{ClassSet, ClassTag};
use crate::error::{Error, Result};
use crate::sysmodel::SensitivityMap;

/// Non-zero entries of the system model for one event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SystemRow {
    pub voxels: Vec<u32>,
    pub values: Vec<f64>,
}

impl SystemRow {
    /// Keeps the strictly positive entries of a dense row.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut row = SystemRow::default();
        for (j, &a) in dense.iter().enumerate() {
            if a > 0.0 {
                row.voxels.push(j as u32);
                row.values.push(a);
            }
        }
        row
    }

    pub fn nnz(&self) -> usize {
        self.voxels.len()
    }

    /// `Σ_j A_j λ_j`.
    pub fn forward(&self, lambda: &[f64]) -> f64 {
        self.voxels
            .iter()
            .zip(&self.values)
            .map(|(&j, &a)| a * lambda[j as usize])
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.voxels.iter().zip(&self.values).map(|(&j, &a)| (j as usize, a))
    }
}

/// Additive per-event rate of scattered and random detections.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Constant(f64),
    PerEvent(Vec<f64>),
}

impl Background {
    pub fn at(&self, n: usize) -> f64 {
        match self {
            Background::Constant(e) => *e,
            Background::PerEvent(v) => v[n],
        }
    }
}

/// Constant background per class, in canonical class order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub per_class: [f64; 5],
}

impl BackgroundModel {
    pub fn validate(&self) -> Result<()> {
        if self.per_class.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter(
                "background rates must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn get(&self, class: ClassTag) -> f64 {
        self.per_class[class.index()]
    }
}

/// Events of one class, reduced to their system-model rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassData {
    pub class: ClassTag,
    pub rows: Vec<SystemRow>,
    pub background: Background,
}

impl ClassData {
    pub fn new(class: ClassTag, rows: Vec<SystemRow>) -> Self {
        ClassData {
            class,
            rows,
            background: Background::Constant(0.0),
        }
    }

    pub fn with_background(mut self, background: Background) -> Result<Self> {
        match &background {
            Background::Constant(e) if !(*e >= 0.0) => {
                return Err(Error::InvalidParameter("negative background".into()))
            }
            Background::PerEvent(v) if v.len() != self.rows.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "{} background values for {} events",
                    v.len(),
                    self.rows.len()
                )))
            }
            Background::PerEvent(v) if v.iter().any(|e| !(*e >= 0.0)) => {
                return Err(Error::InvalidParameter("negative background".into()))
            }
            _ => {}
        }
        self.background = background;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Event data grouped by class. At most one entry per class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ListModeData {
    classes: Vec<ClassData>,
}

impl ListModeData {
    pub fn new(classes: Vec<ClassData>) -> Result<Self> {
        let mut seen = ClassSet::empty();
        for c in &classes {
            if seen.contains(c.class) {
                return Err(Error::InvalidParameter(format!(
                    "class {} given twice",
                    c.class
                )));
            }
            seen.insert(c.class);
        }
        Ok(ListModeData { classes })
    }

    pub fn get(&self, class: ClassTag) -> Option<&ClassData> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn classes(&self) -> &[ClassData] {
        &self.classes
    }

    /// Entries restricted to `subset`, in canonical class order.
    pub fn in_subset(&self, subset: ClassSet) -> impl Iterator<Item = &ClassData> {
        subset.iter().filter_map(move |k| self.get(k))
    }

    pub fn event_count(&self, subset: ClassSet) -> usize {
        self.in_subset(subset).map(ClassData::len).sum()
    }
}

/// Sensitivity vectors for every class of `subset`.
fn subset_sensitivities(
    sens: &SensitivityMap,
    subset: ClassSet,
) -> Result<Vec<(ClassTag, &[f64])>> {
    subset
        .iter()
        .map(|k| sens.require(k).map(|s| (k, s)))
        .collect()
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}
