use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::class::{ClassSet, ClassTag};
use crate::error::{Error, Result};
use crate::geometry::{Point3, VoxelGrid};
use crate::io::{read_json, read_raw_file, with_suffix, write_json, write_raw_file};
use crate::par;
use crate::rng::{Domain, StreamKey};
use crate::simulate::{generate_decay, Simulator};

/// Per-class detection probabilities `s_j^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    pub grid: VoxelGrid,
    /// Indexed by [`ClassTag::index`]; `None` for classes not stored.
    pub values: [Option<Vec<f64>>; 5],
    /// Decays simulated per voxel (`M`).
    pub emissions_per_voxel: u64,
    pub seed: u64,
}

impl SensitivityMap {
    /// Map from explicitly given class vectors.
    pub fn from_class_values(
        grid: VoxelGrid,
        classes: &[(ClassTag, Vec<f64>)],
        emissions_per_voxel: u64,
        seed: u64,
    ) -> Result<Self> {
        grid.validate()?;
        let mut values: [Option<Vec<f64>>; 5] = Default::default();
        for (k, v) in classes {
            if v.len() != grid.len() {
                return Err(Error::DimensionMismatch(format!(
                    "class {k} has {} values for {} voxels",
                    v.len(),
                    grid.len()
                )));
            }
            if v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "class {k} sensitivity must be finite and non-negative"
                )));
            }
            if values[k.index()].replace(v.clone()).is_some() {
                return Err(Error::InvalidParameter(format!("class {k} given twice")));
            }
        }
        Ok(SensitivityMap {
            grid,
            values,
            emissions_per_voxel,
            seed,
        })
    }

    pub fn classes(&self) -> ClassSet {
        ClassTag::ALL
            .into_iter()
            .filter(|k| self.values[k.index()].is_some())
            .collect()
    }

    pub fn class(&self, k: ClassTag) -> Option<&[f64]> {
        self.values[k.index()].as_deref()
    }

    pub fn require(&self, k: ClassTag) -> Result<&[f64]> {
        self.class(k).ok_or(Error::MissingClass(k))
    }

    /// Binomial standard error `√(s(1−s)/M)` of voxel `j`.
    pub fn standard_error(&self, k: ClassTag, j: usize) -> Option<f64> {
        let s = *self.class(k)?.get(j)?;
        Some((s * (1.0 - s) / self.emissions_per_voxel as f64).max(0.0).sqrt())
    }

    /// `Σ_k s_j^k` over the classes of `subset`.
    pub fn subset_total(&self, subset: ClassSet) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.grid.len()];
        for k in subset.iter() {
            for (t, s) in total.iter_mut().zip(self.require(k)?) {
                *t += s;
            }
        }
        Ok(total)
    }

    /// Writes `<stem>.json` and one `<stem>.<class>.raw` per stored class.
    pub fn save(&self, stem: &Path, config: Option<&Value>) -> Result<()> {
        let header = MapHeader {
            dims: self.grid.dims,
            voxel_size_mm: self.grid.voxel_size,
            origin_mm: self.grid.origin,
            classes: self.classes().iter().collect(),
            m: self.emissions_per_voxel,
            seed: self.seed,
            config: config.cloned(),
        };
        write_json(&with_suffix(stem, ".json"), &header)?;
        for k in self.classes().iter() {
            write_raw_file(&with_suffix(stem, &format!(".{k}.raw")), self.require(k)?)?;
        }
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let header: MapHeader = read_json(&with_suffix(stem, ".json"))?;
        let grid = VoxelGrid::new(header.dims, header.voxel_size_mm, header.origin_mm)?;
        let mut classes = Vec::new();
        for k in header.classes {
            let v = read_raw_file(&with_suffix(stem, &format!(".{k}.raw")), grid.len())?;
            classes.push((k, v));
        }
        Self::from_class_values(grid, &classes, header.m, header.seed)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    #[serde(default)]
    origin_mm: Point3,
    classes: Vec<ClassTag>,
    #[serde(rename = "M")]
    m: u64,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<Value>,
}

/// Simulates `m` decays uniformly inside every voxel and records the class
/// of each. Voxel `j` draws from its own stream, so the map does not depend
/// on scheduling.
pub fn estimate_sensitivity(
    grid: &VoxelGrid,
    sim: &Simulator,
    m: u64,
    seed: u64,
) -> Result<SensitivityMap> {
    grid.validate()?;
    if m == 0 {
        return Err(Error::InvalidParameter(
            "emissions per voxel must be at least 1".into(),
        ));
    }
    sim.detector.check_fits(grid)?;
    let key = StreamKey::new(seed, Domain::Sensitivity);
    let counts = par::map_range(grid.len(), |j| {
        let mut rng = key.stream(j as u64);
        let mut c = [0u64; 5];
        for _ in 0..m {
            let decay = generate_decay(
                |r| {
                    use rand::Rng;
                    grid.point_in_voxel(j, [r.random(), r.random(), r.random()])
                },
                &mut rng,
            );
            if let Some(k) = sim.transport_and_classify(&decay, &mut rng).outcome.class() {
                c[k.index()] += 1;
            }
        }
        c
    });
    let values = ClassTag::ALL.map(|k| {
        Some(counts.iter().map(|c| c[k.index()] as f64 / m as f64).collect())
    });
    Ok(SensitivityMap {
        grid: grid.clone(),
        values,
        emissions_per_voxel: m,
        seed,
    })
}

/// Quantity plotted along the axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileSeries {
    Class(ClassTag),
    /// Emissions detected in no class.
    ZeroGamma,
}

impl std::str::FromStr for ProfileSeries {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("zero_gamma") || s.eq_ignore_ascii_case("0g") {
            Ok(ProfileSeries::ZeroGamma)
        } else {
            s.parse().map(ProfileSeries::Class)
        }
    }
}

fn slice_means(map: &SensitivityMap, values: &[f64]) -> Vec<f64> {
    let [nx, ny, nz] = map.grid.dims;
    let per_slice = nx * ny;
    (0..nz)
        .map(|iz| values[iz * per_slice..(iz + 1) * per_slice].iter().sum::<f64>() / per_slice as f64)
        .collect()
}

/// Transaxial mean per slice, in percent, as `(z_mm, value)` pairs.
pub fn axial_profile(map: &SensitivityMap, series: ProfileSeries) -> Result<Vec<(f64, f64)>> {
    let means = match series {
        ProfileSeries::Class(k) => slice_means(map, map.require(k)?),
        ProfileSeries::ZeroGamma => {
            let total = map.subset_total(ClassSet::all())?;
            slice_means(map, &total).into_iter().map(|m| 1.0 - m).collect()
        }
    };
    Ok(means
        .into_iter()
        .enumerate()
        .map(|(iz, m)| (map.grid.slice_z(iz), 100.0 * m))
        .collect())
}

/// [`axial_profile`] for a series named by class tag or `zero_gamma`.
pub fn axial_profile_by_name(map: &SensitivityMap, name: &str) -> Result<Vec<(f64, f64)>> {
    axial_profile(map, name.parse()?)
}

/// CSV `z_mm,C01,C10,C02,C11,C12,zero_gamma`, values in percent.
pub fn write_profile_csv<W: Write>(map: &SensitivityMap, w: &mut W) -> Result<()> {
    let mut columns = Vec::new();
    for k in ClassTag::ALL {
        columns.push(axial_profile(map, ProfileSeries::Class(k))?);
    }
    columns.push(axial_profile(map, ProfileSeries::ZeroGamma)?);
    writeln!(w, "z_mm,C01,C10,C02,C11,C12,zero_gamma")?;
    for iz in 0..map.grid.dims[2] {
        write!(w, "{}", columns[0][iz].0)?;
        for c in &columns {
            write!(w, ",{}", c[iz].1)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Transaxial slice nearest to `z_mm`, one row per voxel:
/// `x_mm,y_mm` followed by the stored classes in percent.
pub fn write_slice_csv<W: Write>(map: &SensitivityMap, z_mm: f64, w: &mut W) -> Result<()> {
    let g = &map.grid;
    let lo = g.min_corner().z;
    let f = (z_mm - lo) / g.voxel_size[2];
    if !(f >= 0.0 && f <= g.dims[2] as f64) {
        return Err(Error::InvalidParameter(format!(
            "slice z = {z_mm} mm lies outside the grid"
        )));
    }
    let iz = (f.floor() as usize).min(g.dims[2] - 1);
    let classes: Vec<ClassTag> = map.classes().iter().collect();
    write!(w, "x_mm,y_mm")?;
    for k in &classes {
        write!(w, ",{k}")?;
    }
    writeln!(w)?;
    for iy in 0..g.dims[1] {
        for ix in 0..g.dims[0] {
            let j = g.index([ix, iy, iz]);
            let c = g.center_unchecked(j);
            write!(w, "{},{}", c.x, c.y)?;
            for k in &classes {
                write!(w, ",{}", 100.0 * map.require(*k)?[j])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
