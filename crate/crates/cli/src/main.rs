//! `triphoton`: simulation, sensitivity maps, Fisher information and
//! multi-class list-mode reconstruction from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use triphoton::config::RunConfig;
use triphoton::Error;

#[derive(Parser)]
#[command(name = "triphoton", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output stem; files are written as `<stem>.<suffix>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate decays from a phantom or image and write detected events.
    Simulate(commands::SimulateArgs),
    /// Estimate per-class sensitivity maps and their axial profiles.
    Sensitivity(commands::SensitivityArgs),
    /// Per-class Fisher information summary for an activity image.
    Fisher(commands::FisherArgs),
    /// Multi-class list-mode MLEM reconstruction.
    Reconstruct(commands::ReconstructArgs),
    /// Render a phantom onto the configured grid.
    Phantom(commands::PhantomArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(a) => &a.common,
            Command::Sensitivity(a) => &a.common,
            Command::Fisher(a) => &a.common,
            Command::Reconstruct(a) => &a.common,
            Command::Phantom(a) => &a.common,
        }
    }

    fn run(&self, config: RunConfig) -> triphoton::Result<serde_json::Value> {
        match self {
            Command::Simulate(a) => commands::simulate(a, config),
            Command::Sensitivity(a) => commands::sensitivity(a, config),
            Command::Fisher(a) => commands::fisher(a, config),
            Command::Reconstruct(a) => commands::reconstruct(a, config),
            Command::Phantom(a) => commands::phantom(a, config),
        }
    }
}

/// Loads the configuration and applies the seed override. A seed must come
/// from one of the two.
fn load_config(common: &Common) -> triphoton::Result<RunConfig> {
    let mut config = match (&common.config, common.seed) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
            let mut value: serde_json::Value = serde_json::from_str(&text)?;
            // The seed may be supplied on the command line instead.
            if let (Some(seed), Some(obj)) = (common.seed, value.as_object_mut()) {
                obj.insert("seed".into(), seed.into());
            }
            serde_json::from_value(value)?
        }
        (None, Some(seed)) => RunConfig::with_seed(seed),
        (None, None) => {
            return Err(Error::InvalidParameter(
                "a seed is required: pass --seed or a --config with \"seed\"".into(),
            ))
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "), 2);
        }
    };
    let common = cli.command.common().clone();
    let result = load_config(&common).and_then(|config| match common.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(|| cli.command.run(config)),
        None => cli.command.run(config),
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.is_usage() => fail("usage", &e.to_string(), 2),
        Err(e) => fail("runtime", &e.to_string(), 1),
    }
}
