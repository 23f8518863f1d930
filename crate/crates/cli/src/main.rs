//! `handforge`: synthesize multi-hand scenes, fit hand meshes to them,
//! evaluate, render and self-check.

mod config;
mod error;
mod eval;
mod fit;
mod manifest;
mod render;
mod synth;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use handforge::hand_model::{mirror_rig, test_rig};
use handforge::scene_synth::write_atomic;
use handforge::verify::run_checks;

use config::RunConfig;
use error::CliError;
use manifest::{create_dir, write_json, Recorder};

#[derive(Parser)]
#[command(name = "handforge", version, about = "Multi-hand mesh recovery toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RigArgs {
    /// Right-hand rig JSON; relative names are also looked up in HANDFORGE_RIG_DIR.
    #[arg(long)]
    rig: Option<PathBuf>,
    /// Left-hand rig JSON (default: mirror of the right rig).
    #[arg(long)]
    left_rig: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset of composite scenes with exact labels.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        rigs: RigArgs,
    },
    /// Fit every hand of every scene in a dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        rigs: RigArgs,
    },
    /// Score fit results against the dataset's ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to `<results>/eval`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        rigs: RigArgs,
    },
    /// Draw fitted meshes over their scene and from extra viewpoints.
    Render {
        /// A scene's `fit.json`.
        #[arg(long)]
        fit: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the center and hand-type target maps.
        #[arg(long)]
        maps: bool,
        /// Comma-separated viewpoints: front, back, left, right, top, bottom or yaw degrees.
        #[arg(long, value_delimiter = ',')]
        views: Vec<String>,
        #[command(flatten)]
        rigs: RigArgs,
    },
    /// Run the gradient, round-trip and oracle self-checks on a rig.
    Gradcheck {
        #[arg(long)]
        rig: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in test rig as `right.json` and `left.json`.
    GenRig {
        #[arg(long)]
        out: PathBuf,
    },
}

fn gradcheck(rig: Option<&Path>, seed: u64, out: &Path, rec: &mut Recorder) -> Result<(), CliError> {
    let (rig, source) = config::unchecked_rig(rig)?;
    rec.manifest.rig = Some(source);
    rec.manifest.seed = Some(seed);
    let report = run_checks(&rig, seed);
    create_dir(out)?;
    let path = out.join("gradcheck.json");
    write_json(&path, &report)?;
    rec.manifest.outputs.push(path);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
    }
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", report.failures().join(", "))))
    }
}

fn gen_rig(out: &Path, rec: &mut Recorder) -> Result<(), CliError> {
    create_dir(out)?;
    let right = test_rig();
    for (name, rig) in [("right.json", right.clone()), ("left.json", mirror_rig(&right))] {
        let path = out.join(name);
        write_atomic(&path, rig.to_json()?.as_bytes())?;
        rec.manifest.outputs.push(path);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    let (name, out) = match &cli.command {
        Command::Synth { out, .. } => ("synth", out.clone()),
        Command::Fit { out, .. } => ("fit", out.clone()),
        Command::Eval { out, results, .. } => ("eval", out.clone().unwrap_or_else(|| results.join("eval"))),
        Command::Render { out, .. } => ("render", out.clone()),
        Command::Gradcheck { out, .. } => ("gradcheck", out.clone()),
        Command::GenRig { out } => ("gen-rig", out.clone()),
    };
    let mut rec = Recorder::start(name);
    let outcome = match &cli.command {
        Command::Synth {
            config,
            count,
            seed,
            rigs,
            ..
        } => (|| {
            let resolved = RunConfig::resolve(config.as_deref(), *seed)?;
            let rigs = config::rigs(rigs.rig.as_deref(), rigs.left_rig.as_deref())?;
            note_run(&mut rec, &resolved, &rigs, config.as_deref());
            synth::run(&resolved, &rigs, &out, *count, &mut rec)
        })(),
        Command::Fit {
            dataset,
            config,
            seed,
            rigs,
            ..
        } => (|| {
            let resolved = RunConfig::resolve(config.as_deref(), *seed)?;
            let rigs = config::rigs(rigs.rig.as_deref(), rigs.left_rig.as_deref())?;
            note_run(&mut rec, &resolved, &rigs, config.as_deref());
            fit::run(&resolved, &rigs, dataset, &out, &mut rec)
        })(),
        Command::Eval { results, dataset, rigs, .. } => (|| {
            let rigs = config::rigs(rigs.rig.as_deref(), rigs.left_rig.as_deref())?;
            rec.manifest.rig = Some(rigs.source.clone());
            eval::run(&rigs, results, dataset, &out, &mut rec)
        })(),
        Command::Render {
            fit,
            scene,
            maps,
            views,
            rigs,
            ..
        } => (|| {
            let rigs = config::rigs(rigs.rig.as_deref(), rigs.left_rig.as_deref())?;
            rec.manifest.rig = Some(rigs.source.clone());
            render::run(&rigs, fit, scene, &out, *maps, views, &mut rec)
        })(),
        Command::Gradcheck { rig, seed, .. } => gradcheck(rig.as_deref(), *seed, &out, &mut rec),
        Command::GenRig { .. } => gen_rig(&out, &mut rec),
    };
    // a run that got far enough to create its output directory still leaves a manifest
    if out.is_dir() && !matches!(&outcome, Err(e) if e.code() == 2) {
        rec.finish(&out)?;
    }
    outcome
}

fn note_run(rec: &mut Recorder, resolved: &config::Resolved, rigs: &config::Rigs, config: Option<&Path>) {
    rec.manifest.config_hash = Some(resolved.config.hash());
    rec.manifest.seed = Some(resolved.seed);
    rec.manifest.seed_source = Some(resolved.seed_source.to_string());
    rec.manifest.rig = Some(rigs.source.clone());
    rec.manifest.inputs.extend(config.map(Path::to_path_buf));
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
