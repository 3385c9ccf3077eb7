use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;

/// Voxelised mean number of emissions per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityImage {
    pub grid: VoxelGrid,
    pub values: Vec<f64>,
}

impl ActivityImage {
    pub fn new(grid: VoxelGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a grid of {} voxels",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::DegenerateImage(format!(
                "activity values must be finite and non-negative, found {v}"
            )));
        }
        Ok(ActivityImage { grid, values })
    }

    pub fn uniform(grid: VoxelGrid, value: f64) -> Self {
        let n = grid.len();
        ActivityImage {
            grid,
            values: vec![value; n],
        }
    }

    pub fn zeros(grid: VoxelGrid) -> Self {
        Self::uniform(grid, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Errors unless some voxel is strictly positive.
    pub fn require_nonzero(&self) -> Result<()> {
        if self.values.iter().any(|&v| v > 0.0) {
            Ok(())
        } else {
            Err(Error::DegenerateImage("image is identically zero".into()))
        }
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
            .0
    }

    pub fn scaled(&self, c: f64) -> Self {
        ActivityImage {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn validation() {
        let g = VoxelGrid::new([2, 1, 1], [1.0; 3], Point3::ZERO).unwrap();
        assert!(ActivityImage::new(g.clone(), vec![1.0]).is_err());
        assert!(ActivityImage::new(g.clone(), vec![1.0, -1.0]).is_err());
        assert!(ActivityImage::new(g.clone(), vec![1.0, f64::NAN]).is_err());
        let img = ActivityImage::new(g.clone(), vec![0.5, 2.0]).unwrap();
        assert_eq!(img.argmax(), 1);
        assert!(ActivityImage::zeros(g).require_nonzero().is_err());
    }
}
