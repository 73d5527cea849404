//! Command-line front end: dataset synthesis, SEG export, training,
//! evaluation, gradient checks and reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use sepg::data::{generate_synthetic, SyntheticConfig};
use sepg::eval::Protocol;
use sepg::losses::Aggregation;
use sepg::train::{
    emit_report, evaluate_checkpoint, export_seg, load_run_config, run_dir_of, tiny_model_gradient_check, train,
    CheckedLoss, Preset, TrainConfig,
};

/// Worst relative finite-difference error tolerated by `check-grad`.
const GRAD_TOLERANCE: f64 = 1e-2;

#[derive(Parser)]
#[command(name = "sepg", version, about = "Visible-infrared person re-identification with SEG images and PABA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-modality dataset as PNG folders.
    Synth {
        /// Output root; gets visible/<id>/ and infrared/<id>/ plus manifest.json.
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 24)]
        identities: usize,
        #[arg(long, default_value_t = 10)]
        images: usize,
        #[arg(long, default_value_t = 0.6)]
        difficulty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 96)]
        height: usize,
        #[arg(long, default_value_t = 48)]
        width: usize,
    },
    /// Convert every PNG under INPUT into a SEG image at the same relative path.
    Seg {
        input: PathBuf,
        output: PathBuf,
        /// Weight of the phase reconstruction added to the grey image.
        #[arg(long, default_value_t = 1.0)]
        weight: f64,
    },
    /// Train one preset and write metrics, checkpoints and a summary.
    Train {
        /// TOML config; the desk profile is used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// baseline, +SE, +SE+CC or +SE+PABA; overrides the config.
        #[arg(long)]
        preset: Option<Preset>,
        /// Override the training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to runs/<preset>-<seed>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under V2I or I2V.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        protocol: Protocol,
        /// Run config; defaults to config.toml next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference check of the objective through a tiny network.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Write report.md (and embedding dumps) for a run or a directory of runs.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synth {
            out,
            identities,
            images,
            difficulty,
            seed,
            height,
            width,
        } => {
            let cfg = SyntheticConfig {
                num_identities: identities,
                images_per_identity: images,
                height,
                width,
                seed,
                difficulty,
            };
            let (data, manifest) = generate_synthetic(&cfg)?;
            data.write_pngs(&out)?;
            manifest.write(&out)?;
            println!("wrote {} images for {identities} identities to {}", data.len(), out.display());
        }
        Command::Seg { input, output, weight } => {
            let export = export_seg(&input, &output, weight)?;
            for (path, reason) in &export.skipped {
                eprintln!("skipped {}: {reason}", path.display());
            }
            println!("wrote {} SEG images to {}", export.written.len(), output.display());
        }
        Command::Train {
            config,
            preset,
            seed,
            out,
        } => {
            let mut cfg = match &config {
                Some(path) => TrainConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
                None => TrainConfig::desk(),
            };
            if let Some(p) = preset {
                cfg.preset = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.preset.slug(), cfg.seed)));
            let outcome = train(&cfg, &out)?;
            let s = &outcome.summary;
            println!(
                "{}: best V-2-I Rank-1 {:.4} at epoch {}; final V-2-I Rank-1 {:.4} mAP {:.4}; I-2-V Rank-1 {:.4} mAP {:.4}",
                s.preset,
                s.best_rank1,
                s.best_epoch,
                s.final_v2i.rank1(),
                s.final_v2i.map,
                s.final_i2v.rank1(),
                s.final_i2v.map
            );
            println!("artifacts in {}", out.display());
        }
        Command::Eval {
            checkpoint,
            protocol,
            config,
            json,
        } => {
            let cfg = match config {
                Some(path) => TrainConfig::load(&path)?,
                None => {
                    let dir = run_dir_of(&checkpoint).context("checkpoint has no parent directory")?;
                    load_run_config(dir)?
                }
            };
            let result = evaluate_checkpoint(&cfg, &checkpoint, protocol)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&result)?);
            } else {
                println!(
                    "{}: Rank-1 {:.4} Rank-5 {:.4} Rank-10 {:.4} mAP {:.4} ({} queries, {} gallery)",
                    protocol.tag(),
                    result.rank1(),
                    result.rank(5),
                    result.rank(10),
                    result.map,
                    result.num_queries,
                    result.num_gallery
                );
            }
        }
        Command::CheckGrad { seed, eps } => {
            let mut failed = false;
            for aggregation in [Aggregation::None, Aggregation::CrossCentre, Aggregation::Paba] {
                let errors = tiny_model_gradient_check::<f64>(seed, CheckedLoss::Total(aggregation), eps)?;
                let (name, worst) = errors
                    .iter()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .cloned()
                    .unwrap_or_default();
                let ok = worst < GRAD_TOLERANCE;
                failed |= !ok;
                println!(
                    "{:<12} worst relative error {worst:.3e} ({name}) {}",
                    format!("{aggregation:?}"),
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Report { run_dir } => {
            if !run_dir.is_dir() {
                bail!("{} is not a directory", run_dir.display());
            }
            let out = emit_report(&run_dir)?;
            println!("summarised {} run(s) in {}", out.runs, out.report.display());
            for e in &out.embeddings {
                println!("embeddings: {}", e.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
