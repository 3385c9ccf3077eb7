//! Per-class and total log-likelihoods.
//!
//! Event contributions are accumulated in event order with Neumaier
//! compensation; class contributions are added in canonical class order.

use super::{subset_sensitivities, ActivityImage, CompensatedSum, ListModeData, SystemRow};
use crate::class::ClassSet;
use crate::error::{Error, Result};
use crate::sysmodel::SensitivityMap;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    /// Events whose forward projection vanished and were left out.
    pub excluded_events: usize,
}

fn expected_count(lambda: &[f64], sens: &[f64]) -> f64 {
    let mut acc = CompensatedSum::default();
    for (l, s) in lambda.iter().zip(sens) {
        acc.add(l * s);
    }
    acc.value()
}

/// `Σ_n ln(Σ_j A_j(y_n) λ_j) − N ln(Σ_j λ_j s_j)` for the events of one
/// class. Zero for an empty class.
pub fn class_log_likelihood(
    rows: &[SystemRow],
    image: &ActivityImage,
    sens: &[f64],
) -> Result<LogLikelihood> {
    if rows.is_empty() {
        return Ok(LogLikelihood::default());
    }
    if sens.len() != image.len() {
        return Err(Error::DimensionMismatch(format!(
            "sensitivity has {} voxels, image {}",
            sens.len(),
            image.len()
        )));
    }
    let mu = expected_count(&image.values, sens);
    if !(mu > 0.0) {
        return Err(Error::DegenerateImage(
            "expected class count is zero".into(),
        ));
    }
    let mut acc = CompensatedSum::default();
    let mut used = 0usize;
    for row in rows {
        let fwd = row.forward(&image.values);
        if fwd > 0.0 {
            acc.add(fwd.ln());
            used += 1;
        }
    }
    acc.add(-(used as f64) * mu.ln());
    Ok(LogLikelihood {
        value: acc.value(),
        excluded_events: rows.len() - used,
    })
}

/// Sum of [`class_log_likelihood`] over the classes of `subset`.
pub fn total_log_likelihood(
    data: &ListModeData,
    image: &ActivityImage,
    sens: &SensitivityMap,
    subset: ClassSet,
) -> Result<LogLikelihood> {
    let mut total = LogLikelihood::default();
    for class in data.in_subset(subset) {
        if class.is_empty() {
            continue;
        }
        let s = sens.require(class.class)?;
        let l = class_log_likelihood(&class.rows, image, s)?;
        total.value += l.value;
        total.excluded_events += l.excluded_events;
    }
    Ok(total)
}

/// Poisson list-mode log-likelihood with background, up to a constant:
/// `Σ_k [Σ_n ln(Σ_j A_j λ_j + ε_n) − Σ_j λ_j s_j^k]`. This is the objective
/// that the MLEM update increases.
pub fn extended_log_likelihood(
    data: &ListModeData,
    image: &ActivityImage,
    sens: &SensitivityMap,
    subset: ClassSet,
) -> Result<LogLikelihood> {
    let mut acc = CompensatedSum::default();
    let mut excluded = 0;
    for (k, s) in subset_sensitivities(sens, subset)? {
        if s.len() != image.len() {
            return Err(Error::DimensionMismatch(
                "sensitivity and image sizes differ".into(),
            ));
        }
        acc.add(-expected_count(&image.values, s));
        let Some(class) = data.get(k) else { continue };
        for (n, row) in class.rows.iter().enumerate() {
            let d = row.forward(&image.values) + class.background.at(n);
            if d > 0.0 {
                acc.add(d.ln());
            } else {
                excluded += 1;
            }
        }
    }
    Ok(LogLikelihood {
        value: acc.value(),
        excluded_events: excluded,
    })
}
