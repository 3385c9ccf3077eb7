//! Browser bindings: small, fast versions of the main computations for the
//! static page in `www/`. [`ops`] holds the plain Rust versions; the
//! exported functions convert their errors for JavaScript.

use wasm_bindgen::prelude::*;

pub mod ops {
    use triphoton::geometry::{Point3, VoxelGrid};
    use triphoton::infer::{reconstruct, BackgroundModel, ReconConfig};
    use triphoton::phantom::Phantom;
    use triphoton::physics::{compton_cos_beta, compton_edge, klein_nishina_theta_pdf, EnergyPair, PhysicsParams};
    use triphoton::simulate::{read_events, run_simulation, DetectionParams, Simulator};
    use triphoton::sysmodel::{axial_profile, estimate_sensitivity, list_mode_data, KernelParams, ProfileSeries};
    use triphoton::{ClassSet, ClassTag, DetectorAnnulus, Result};

    /// Side of the square reconstruction slice, in voxels.
    pub const SLICE_SIDE: usize = 15;

    fn simulator(energy_resolution: f64) -> Result<Simulator> {
        let physics = PhysicsParams {
            energy_resolution_fwhm_fraction: EnergyPair::new(energy_resolution, energy_resolution),
            ..PhysicsParams::default()
        };
        Simulator::new(DetectorAnnulus::default(), physics, DetectionParams::default())
    }

    /// `n` samples of `[e1, β (degrees)]` for deposits between 0 and the
    /// Compton edge of `e0`, flattened.
    pub fn compton_curve(e0: f64, n: usize) -> Result<Vec<f64>> {
        let edge = compton_edge(e0);
        let mut out = Vec::with_capacity(2 * n);
        for i in 1..=n {
            // Stay strictly inside (0, edge).
            let e1 = edge * i as f64 / (n + 1) as f64;
            let beta = compton_cos_beta(e0, e1)?.clamp(-1.0, 1.0).acos();
            out.extend([e1, beta.to_degrees()]);
        }
        Ok(out)
    }

    /// Klein–Nishina scatter-angle density on `n` points in `[0, π]`,
    /// flattened as `[θ (degrees), pdf]`.
    pub fn klein_nishina_curve(e0: f64, n: usize) -> Vec<f64> {
        (0..n)
            .flat_map(|i| {
                let theta = std::f64::consts::PI * i as f64 / (n - 1).max(1) as f64;
                [theta.to_degrees(), klein_nishina_theta_pdf(e0, theta)]
            })
            .collect()
    }

    /// Detection-class percentages along the detector axis for a column of
    /// 10 mm slices, estimated from `m` decays per slice. Flattened rows of
    /// `[z, C01, C10, C02, C11, C12, zero_gamma]`.
    pub fn axial_class_profile(m: u32, energy_resolution: f64, seed: u64) -> Result<Vec<f64>> {
        let grid = VoxelGrid::new([1, 1, 24], [5.0, 5.0, 10.0], Point3::ZERO)?;
        let map = estimate_sensitivity(&grid, &simulator(energy_resolution)?, m.max(1) as u64, seed)?;
        let mut series: Vec<Vec<(f64, f64)>> = ClassTag::ALL
            .iter()
            .map(|&k| axial_profile(&map, ProfileSeries::Class(k)))
            .collect::<Result<_>>()?;
        series.push(axial_profile(&map, ProfileSeries::ZeroGamma)?);
        let mut out = Vec::with_capacity(7 * grid.dims[2]);
        for iz in 0..grid.dims[2] {
            out.push(series[0][iz].0);
            out.extend(series.iter().map(|s| s[iz].1));
        }
        Ok(out)
    }

    /// Simulates a point source at `(x, y, 0)` mm, reconstructs it on a
    /// `SLICE_SIDE²` slice of 5 mm voxels from the classes named in `classes`
    /// (comma separated, or `all`) and returns the image followed by the number
    /// of events used.
    pub fn reconstruct_point(
        x_mm: f64,
        y_mm: f64,
        classes: &str,
        n_decays: u32,
        iterations: u32,
        seed: u64,
    ) -> Result<Vec<f64>> {
        let subset: ClassSet = classes.parse()?;
        let grid = VoxelGrid::new([SLICE_SIDE, SLICE_SIDE, 1], [5.0, 5.0, 10.0], Point3::ZERO)?;
        let source = Phantom::Point {
            center_mm: Point3::new(x_mm, y_mm, 0.0),
            activity: 1.0,
        }
        .render(&grid)?
        .image;
        let sim = simulator(0.0)?;
        let mut buf = Vec::new();
        run_simulation(&source, n_decays.max(1) as u64, &sim, seed, &mut buf)?;
        let events = read_events(buf.as_slice(), false)?.events;
        let kernel = KernelParams {
            energy_resolution_fwhm_fraction: None,
            ..KernelParams::default()
        };
        let data = list_mode_data(&events, &grid, &kernel, &BackgroundModel::default(), subset)?;
        let used = data.event_count(subset);
        let sens = estimate_sensitivity(&grid, &sim, 300, seed)?;
        let config = ReconConfig {
            iterations: iterations.max(1) as usize,
            classes: subset,
            ..ReconConfig::default()
        };
        let mut out = reconstruct(&data, &sens, &config)?.image.values;
        out.push(used as f64);
        Ok(out)
    }
}

pub use ops::SLICE_SIDE;

fn js(e: triphoton::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = comptonCurve)]
pub fn compton_curve(e0: f64, n: usize) -> Result<Vec<f64>, JsError> {
    ops::compton_curve(e0, n).map_err(js)
}

#[wasm_bindgen(js_name = kleinNishinaCurve)]
pub fn klein_nishina_curve(e0: f64, n: usize) -> Vec<f64> {
    ops::klein_nishina_curve(e0, n)
}

#[wasm_bindgen(js_name = axialClassProfile)]
pub fn axial_class_profile(m: u32, energy_resolution: f64, seed: u64) -> Result<Vec<f64>, JsError> {
    ops::axial_class_profile(m, energy_resolution, seed).map_err(js)
}

#[wasm_bindgen(js_name = reconstructPoint)]
pub fn reconstruct_point(
    x_mm: f64,
    y_mm: f64,
    classes: &str,
    n_decays: u32,
    iterations: u32,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    ops::reconstruct_point(x_mm, y_mm, classes, n_decays, iterations, seed).map_err(js)
}

#[wasm_bindgen(js_name = sliceSide)]
pub fn slice_side() -> usize {
    SLICE_SIDE
}
