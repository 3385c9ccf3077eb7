use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use triphoton::config::RunConfig;
use triphoton::infer::{estimate_fisher, fisher_summary, reconstruct as run_mlem};
use triphoton::io::{load_image, save_image, with_suffix, write_json};
use triphoton::phantom::{Phantom, Sphere};
use triphoton::simulate::{read_events, run_simulation, ToyModel};
use triphoton::sysmodel::{
    estimate_sensitivity, list_mode_data, write_profile_csv, write_slice_csv, SensitivityMap,
};
use triphoton::{ActivityImage, ClassSet, ClassTag, Error, Point3, Result};

use crate::Common;

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Source image stem; the configured phantom is used otherwise.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Number of decays to simulate.
    #[arg(long)]
    pub n_decays: Option<u64>,
    /// Independence toy model `p,q` instead of transport.
    #[arg(long)]
    pub toy: Option<String>,
    /// Leave the true decay position out of the event file.
    #[arg(long)]
    pub no_truth: bool,
}

#[derive(Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Decays per voxel (M).
    #[arg(long)]
    pub emissions_per_voxel: Option<u64>,
    /// Axial position of the transaxial slice CSV, mm.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub slice_z: f64,
}

#[derive(Args)]
pub struct FisherArgs {
    #[command(flatten)]
    pub common: Common,
    /// Activity image stem.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Sensitivity map stem.
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    /// Comma-separated class list or `all`.
    #[arg(long)]
    pub classes: Option<String>,
    /// Monte-Carlo events per class.
    #[arg(long)]
    pub n_mc_events: Option<usize>,
    /// Also write each matrix as raw little-endian f64.
    #[arg(long)]
    pub dump_matrices: bool,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub common: Common,
    /// Event file (JSON lines).
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Sensitivity map stem.
    #[arg(long)]
    pub sensitivity: Option<PathBuf>,
    /// Comma-separated class list or `all`.
    #[arg(long)]
    pub classes: Option<String>,
    /// MLEM iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Background: one value for every class, or `C12=0.5,C02=0.1`.
    #[arg(long)]
    pub epsilon: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PhantomKind {
    Point,
    UniformCylinder,
    Sphere,
}

#[derive(Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub common: Common,
    /// Shape; the configured phantom is used when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<PhantomKind>,
    /// Centre `x,y,z` in mm.
    #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
    pub center: String,
    /// Radius in mm (cylinder, sphere).
    #[arg(long)]
    pub radius: Option<f64>,
    /// Axial half-length in mm (cylinder).
    #[arg(long)]
    pub half_length: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub activity: f64,
}

fn out_stem(common: &Common, config: &RunConfig, default: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| config.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn required(flag: Option<&PathBuf>, configured: Option<&PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or(configured)
        .cloned()
        .ok_or_else(|| Error::InvalidParameter(format!("missing --{name}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_classes(text: Option<&str>, default: ClassSet) -> Result<ClassSet> {
    text.map_or(Ok(default), str::parse)
}

fn parse_numbers(text: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidParameter(format!("{what}: cannot parse {text:?}")))?;
    if values.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{what}: expected {n} comma-separated numbers, got {text:?}"
        )));
    }
    Ok(values)
}

/// `0.5` for every class, or `C12=0.5,C02=0.1`.
fn apply_epsilon(text: &str, config: &mut RunConfig) -> Result<()> {
    let eps = &mut config.reconstruction.epsilon;
    if let Ok(v) = text.trim().parse::<f64>() {
        for k in ClassTag::ALL {
            eps.insert(k, v);
        }
        return Ok(());
    }
    for part in text.split(',') {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("epsilon: expected CLASS=VALUE, got {part:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("epsilon: bad value in {part:?}")))?;
        eps.insert(k.parse()?, v);
    }
    Ok(())
}

fn counts_json(counts: &triphoton::simulate::CountTable) -> Value {
    counts
        .rows()
        .into_iter()
        .map(|(name, n)| (name.to_string(), Value::from(n)))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

pub fn simulate(args: &SimulateArgs, mut config: RunConfig) -> Result<Value> {
    if let Some(n) = args.n_decays {
        config.simulation.n_decays = n;
    }
    if let Some(t) = &args.toy {
        let v = parse_numbers(t, 2, "--toy")?;
        config.simulation.detection.toy = Some(ToyModel { p: v[0], q: v[1] });
    }
    if args.no_truth {
        config.simulation.detection.record_truth = false;
    }
    config.validate()?;
    let sim = config.simulator()?;
    let source = match (&args.image, &config.paths.image, &config.phantom) {
        (Some(stem), _, _) | (None, Some(stem), _) => load_image(stem)?,
        (None, None, Some(p)) => p.render(&config.geometry.grid)?.image,
        (None, None, None) => {
            return Err(Error::InvalidParameter(
                "no source: pass --image or configure a phantom".into(),
            ))
        }
    };
    config.geometry.detector.check_fits(&source.grid)?;
    let stem = out_stem(&args.common, &config, "simulation");
    let events_path = with_suffix(&stem, ".events.jsonl");
    let mut sink = create(&events_path)?;
    let summary = run_simulation(&source, config.simulation.n_decays, &sim, config.seed, &mut sink)?;
    let counts_path = with_suffix(&stem, ".counts.csv");
    let mut w = create(&counts_path)?;
    summary.counts.write_csv(&mut w)?;
    w.flush()?;
    let manifest = with_suffix(&stem, ".run.json");
    write_json(&manifest, &json!({ "config": config.to_value(), "summary": summary }))?;
    Ok(json!({
        "command": "simulate",
        "n_decays": summary.n_decays,
        "counts": counts_json(&summary.counts),
        "unclassifiable": summary.unclassifiable,
        "rejected_cones": summary.rejected_cones,
        "events": events_path,
    }))
}

pub fn sensitivity(args: &SensitivityArgs, mut config: RunConfig) -> Result<Value> {
    if let Some(m) = args.emissions_per_voxel {
        config.simulation.emissions_per_voxel = m;
    }
    let sim = config.simulator()?;
    let map = estimate_sensitivity(
        &config.geometry.grid,
        &sim,
        config.simulation.emissions_per_voxel,
        config.seed,
    )?;
    let stem = out_stem(&args.common, &config, "sensitivity");
    map.save(&stem, Some(&config.to_value()))?;
    let mut w = create(&with_suffix(&stem, ".profile.csv"))?;
    write_profile_csv(&map, &mut w)?;
    w.flush()?;
    let mut w = create(&with_suffix(&stem, ".slice.csv"))?;
    write_slice_csv(&map, args.slice_z, &mut w)?;
    w.flush()?;
    let means: serde_json::Map<_, _> = ClassTag::ALL
        .iter()
        .map(|&k| {
            let v = map.class(k).unwrap_or(&[]);
            (k.to_string(), Value::from(v.iter().sum::<f64>() / v.len().max(1) as f64))
        })
        .collect();
    Ok(json!({
        "command": "sensitivity",
        "M": map.emissions_per_voxel,
        "voxels": map.grid.len(),
        "mean_sensitivity": means,
        "map": with_suffix(&stem, ".json"),
    }))
}

pub fn fisher(args: &FisherArgs, mut config: RunConfig) -> Result<Value> {
    config.fisher.classes = parse_classes(args.classes.as_deref(), config.fisher.classes)?;
    if let Some(n) = args.n_mc_events {
        config.fisher.n_mc_events = n;
    }
    config.validate()?;
    let image = load_image(&required(args.image.as_ref(), config.paths.image.as_ref(), "image")?)?;
    let sens = SensitivityMap::load(&required(
        args.sensitivity.as_ref(),
        config.paths.sensitivity.as_ref(),
        "sensitivity",
    )?)?;
    if !image.grid.same_shape(&sens.grid) {
        return Err(Error::DimensionMismatch(
            "image and sensitivity grids differ".into(),
        ));
    }
    let sim = config.simulator()?;
    let mut matrices = Vec::new();
    for k in config.fisher.classes.iter() {
        matrices.push(estimate_fisher(
            k,
            &image,
            &sens,
            &sim,
            &config.kernel,
            config.fisher.n_mc_events,
            config.seed,
            config.fisher.allow_large,
        )?);
    }
    let report = fisher_summary(&matrices)?;
    let stem = out_stem(&args.common, &config, "fisher");
    let mut w = create(&with_suffix(&stem, ".fisher.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    if args.dump_matrices {
        for m in &matrices {
            let mut w = create(&with_suffix(&stem, &format!(".{}.fisher.raw", m.class)))?;
            m.write_raw(&mut w)?;
            w.flush()?;
        }
    }
    write_json(
        &with_suffix(&stem, ".fisher.json"),
        &json!({ "config": config.to_value(), "ranking": report.ranking, "dim": report.dim }),
    )?;
    Ok(json!({
        "command": "fisher",
        "ranking": report.ranking,
        "total_trace": report.total_trace,
        "total_lambda_max": report.total_lambda_max,
    }))
}

pub fn reconstruct(args: &ReconstructArgs, mut config: RunConfig) -> Result<Value> {
    config.reconstruction.classes =
        parse_classes(args.classes.as_deref(), config.reconstruction.classes)?;
    if let Some(n) = args.iters {
        config.reconstruction.iterations = n;
    }
    if let Some(e) = &args.epsilon {
        apply_epsilon(e, &mut config)?;
    }
    config.validate()?;
    let events_path = required(args.events.as_ref(), config.paths.events.as_ref(), "events")?;
    let sens = SensitivityMap::load(&required(
        args.sensitivity.as_ref(),
        config.paths.sensitivity.as_ref(),
        "sensitivity",
    )?)?;
    let subset = config.reconstruction.classes;
    for k in subset.iter() {
        sens.require(k)?;
    }
    let readout = read_events(BufReader::new(File::open(&events_path)?), false)?;
    let data = list_mode_data(
        &readout.events,
        &sens.grid,
        &config.kernel,
        &config.reconstruction.background(),
        subset,
    )?;
    let recon = run_mlem(&data, &sens, &config.reconstruction.recon())?;
    let stem = out_stem(&args.common, &config, "reconstruction");
    save_image(&stem, &recon.image, Some(&config.to_value()))?;
    let mut w = create(&with_suffix(&stem, ".loglik.csv"))?;
    recon.write_log_csv(&mut w)?;
    w.flush()?;
    let per_class: serde_json::Map<_, _> = data
        .classes()
        .iter()
        .map(|c| (c.class.to_string(), Value::from(c.len())))
        .collect();
    Ok(json!({
        "command": "reconstruct",
        "events": per_class,
        "parse_warnings": readout.warnings,
        "excluded_events": recon.excluded_events,
        "iterations": recon.log.len() - 1,
        "loglik": recon.log.last().map(|r| r.loglik),
        "image": with_suffix(&stem, ".json"),
    }))
}

pub fn phantom(args: &PhantomArgs, config: RunConfig) -> Result<Value> {
    let phantom = match args.kind {
        None => config.phantom.clone().ok_or_else(|| {
            Error::InvalidParameter("pass --kind or configure a phantom".into())
        })?,
        Some(kind) => {
            let c = parse_numbers(&args.center, 3, "--center")?;
            let center_mm = Point3::new(c[0], c[1], c[2]);
            let radius = || {
                args.radius
                    .ok_or_else(|| Error::InvalidParameter("missing --radius".into()))
            };
            match kind {
                PhantomKind::Point => Phantom::Point {
                    center_mm,
                    activity: args.activity,
                },
                PhantomKind::UniformCylinder => Phantom::UniformCylinder {
                    center_mm,
                    radius_mm: radius()?,
                    half_length_mm: args
                        .half_length
                        .ok_or_else(|| Error::InvalidParameter("missing --half-length".into()))?,
                    activity: args.activity,
                },
                PhantomKind::Sphere => Phantom::Spheres {
                    spheres: vec![Sphere {
                        center_mm,
                        radius_mm: radius()?,
                        activity: args.activity,
                    }],
                },
            }
        }
    };
    let rendered = phantom.render(&config.geometry.grid)?;
    let stem = out_stem(&args.common, &config, "phantom");
    let mut echoed = config.clone();
    echoed.phantom = Some(phantom);
    save_image(&stem, &rendered.image, Some(&echoed.to_value()))?;
    Ok(json!({
        "command": "phantom",
        "requested_total": rendered.requested_total,
        "rendered_total": rendered.rendered_total,
        "voxelization_error": rendered.relative_error(),
        "nonzero_voxels": nonzero(&rendered.image),
        "image": with_suffix(&stem, ".json"),
    }))
}

fn nonzero(image: &ActivityImage) -> usize {
    image.values.iter().filter(|&&v| v > 0.0).count()
}
