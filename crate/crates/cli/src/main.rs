use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thread_recon::pipeline::{run_evaluate, run_generate, run_reconstruct, PipelineConfig, Stage, Status};
use thread_recon::synth::{LEFT_IMAGE, LEFT_MASK, RIGHT_IMAGE, RIGHT_MASK, RIG_FILE};

/// Stereo centerline reconstruction of thin threads.
#[derive(Parser)]
#[command(name = "thread-recon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; missing keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set matching.alpha=60`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct one stereo pair.
    Reconstruct {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        left: Option<PathBuf>,
        #[arg(long)]
        right: Option<PathBuf>,
        #[arg(long)]
        mask_left: Option<PathBuf>,
        #[arg(long)]
        mask_right: Option<PathBuf>,
        #[arg(long)]
        rig: Option<PathBuf>,
        /// Scene bundle directory; fills in any input not given explicitly.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long, default_value_t = 40)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct and score every scene of a dataset.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, ExitCode> {
    PipelineConfig::load(args.config.as_deref(), &args.overrides).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(Stage::Config.exit_code() as u8)
    })
}

fn init_logging(cfg: &PipelineConfig) {
    let default = cfg.verbosity.clone().unwrap_or_else(|| "warn".into());
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default)).init();
}

fn run(cli: Cli) -> Result<(), ExitCode> {
    match cli.command {
        Command::Reconstruct { config, left, right, mask_left, mask_right, rig, scene, out } => {
            let mut cfg = load_config(&config)?;
            init_logging(&cfg);
            let from_scene = |name: &str| scene.as_ref().map(|d| d.join(name));
            let inputs = &mut cfg.inputs;
            inputs.left = left.or(inputs.left.take()).or_else(|| from_scene(LEFT_IMAGE));
            inputs.right = right.or(inputs.right.take()).or_else(|| from_scene(RIGHT_IMAGE));
            inputs.mask_left = mask_left.or(inputs.mask_left.take()).or_else(|| from_scene(LEFT_MASK));
            inputs.mask_right = mask_right.or(inputs.mask_right.take()).or_else(|| from_scene(RIGHT_MASK));
            inputs.rig = rig.or(inputs.rig.take()).or_else(|| from_scene(RIG_FILE));
            cfg.output = out.or(cfg.output);
            let outcome = run_reconstruct(&cfg);
            match outcome.status {
                Status::Success => {
                    if let Some(p) = &outcome.spline {
                        println!("{}", p.display());
                    }
                    Ok(())
                }
                Status::Failure => {
                    let stage = outcome.stage.map(|s| s.name()).unwrap_or("unknown");
                    eprintln!("reconstruction failed at {stage}: {}", outcome.reason.unwrap_or_default());
                    Err(ExitCode::from(outcome.exit_code as u8))
                }
            }
        }
        Command::Generate { config, first_seed, count, out } => {
            let cfg = load_config(&config)?;
            init_logging(&cfg);
            let manifest = run_generate(first_seed..first_seed + count, &cfg.generation, &out).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            })?;
            println!("wrote {} scenes to {}", manifest.scenes.len(), out.display());
            Ok(())
        }
        Command::Evaluate { config, dataset, out } => {
            let cfg = load_config(&config)?;
            init_logging(&cfg);
            let eval = run_evaluate(&dataset, &cfg, &out).map_err(|e| {
                eprintln!("error: {e}");
                ExitCode::from(e.exit_code() as u8)
            })?;
            let s = &eval.summary;
            println!("successes: {}/{}", s.successes, s.scenes);
            if let (Some(e), Some(m), Some(l)) = (s.e_s, s.e_s_max, s.e_len) {
                println!(
                    "e_S {:.3} ± {:.3}   e_S_max {:.3} ± {:.3}   e_len {:.3} ± {:.3}",
                    e.mean, e.std, m.mean, m.std, l.mean, l.std
                );
            }
            if !eval.missing.is_empty() {
                eprintln!("missing scenes: {}", eval.missing.join(", "));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
