//! `threec` — batch CLI over the 3C segmentation library.
//!
//! Subcommands: `gen` (synthetic stacks), `seed` (2-D over-segmentation),
//! `run` (full pipeline), `eval` (metrics), `cost` (call accounting),
//! `codebook` (build an encoding table). Exit codes: 0 success, 1 usage
//! error, 2 runtime error.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use threec::costmodel::{object_density_map, ratio_curve};
use threec::encoding::{build_codebook, min_digits};
use threec::metrics::{adapted_rand_error, contingency, variation_of_information};
use threec::pipeline::{run_pipeline, PipelineConfig};
use threec::seeding::{seed_volume, SeedConfig};
use threec::synthgen::{generate_stack, GenConfig};
use threec::volume::{load_stack, save_label_stack, save_scalar_stack};

#[derive(Parser)]
#[command(name = "threec", version, about = "Cross-classification clustering for image stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth stack and its elevation map.
    Gen(GenArgs),
    /// Compute the per-section 2-D over-segmentation of an elevation stack.
    Seed(SeedArgs),
    /// Run the full pipeline from a JSON config.
    Run(RunArgs),
    /// Compare a predicted segmentation against ground truth.
    Eval(EvalArgs),
    /// Classifier-call cost model over a label stack.
    Cost(CostArgs),
    /// Build and save a codebook.
    Codebook(CodebookArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Generator config (JSON file with the GenConfig keys).
    #[arg(long)]
    config: PathBuf,
    /// Output path for the ground-truth label stack.
    #[arg(long)]
    gt: PathBuf,
    /// Output path for the elevation stack.
    #[arg(long)]
    elev: PathBuf,
}

#[derive(Args)]
struct SeedArgs {
    /// Elevation stack (VOL1, f32).
    #[arg(long)]
    elev: PathBuf,
    /// Output path for the seed label stack.
    #[arg(long)]
    out: PathBuf,
    /// Regional-minima depth threshold.
    #[arg(long = "h")]
    minima_depth: f64,
    /// Growth stop level.
    #[arg(long = "stop")]
    stop_level: f64,
    /// Minimum seed area in pixels.
    #[arg(long = "min-area")]
    min_area: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the worker count from the config.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted segmentation (VOL1 labels).
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth segmentation (VOL1 labels).
    #[arg(long)]
    gt: PathBuf,
    /// Include ground-truth background (label 0) in the evaluation.
    #[arg(long = "include-bg", default_value_t = false)]
    include_bg: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Label stack to measure densities on.
    #[arg(long)]
    labels: PathBuf,
    /// Odd field-of-view side length in pixels.
    #[arg(long)]
    fov: usize,
    /// Alphabet size of the encoding.
    #[arg(long = "l")]
    alphabet_size: u8,
    /// Comma-separated revisit ratios in (0, 1].
    #[arg(long, value_delimiter = ',')]
    rho: Vec<f64>,
}

#[derive(Args)]
struct CodebookArgs {
    /// Number of labels to encode.
    #[arg(long)]
    n: u32,
    /// Alphabet size.
    #[arg(long = "l", default_value_t = 4)]
    alphabet_size: u8,
    /// Explicit codeword length (default: min digits + redundancy).
    #[arg(long = "k")]
    digits: Option<u8>,
    /// Redundant digits on top of the minimum length.
    #[arg(long, default_value_t = 1)]
    redundancy: u8,
    /// RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the codebook text file.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    print!("{e}");
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{e}");
                    std::process::exit(1);
                }
            }
        }
    };
    if let Err(err) = dispatch(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen(args) => {
            let text = std::fs::read_to_string(&args.config)
                .with_context(|| format!("cannot read {}", args.config.display()))?;
            let cfg: GenConfig = serde_json::from_str(&text).context("bad generator config")?;
            let (gt, elev) = generate_stack(&cfg)?;
            save_label_stack(&gt, &args.gt)?;
            save_scalar_stack(&elev, &args.elev)?;
        }
        Command::Seed(args) => {
            let elev = load_stack(&args.elev)?.into_scalars()?;
            let cfg = SeedConfig {
                minima_depth: args.minima_depth,
                stop_level: args.stop_level,
                min_seed_area: args.min_area,
            };
            let seeds = seed_volume(&elev, &cfg)?;
            save_label_stack(&seeds.labels, &args.out)?;
        }
        Command::Run(args) => {
            let mut cfg = PipelineConfig::from_path(&args.config)
                .with_context(|| format!("cannot load {}", args.config.display()))?;
            if let Some(workers) = args.workers {
                cfg.workers = workers;
            }
            let report = run_pipeline(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval(args) => {
            let pred = load_stack(&args.pred)?.into_labels()?;
            let gt = load_stack(&args.gt)?.into_labels()?;
            let table = contingency(&pred, &gt, !args.include_bg)?;
            let (error, precision, recall) = adapted_rand_error(&table)?;
            let (vi, vi_split, vi_merge) = variation_of_information(&table)?;
            println!(
                "{error:.6}\t{precision:.6}\t{recall:.6}\t{vi:.6}\t{vi_split:.6}\t{vi_merge:.6}"
            );
        }
        Command::Cost(args) => {
            if args.rho.is_empty() {
                bail!("at least one rho value is required");
            }
            let labels = load_stack(&args.labels)?.into_labels()?;
            let density = object_density_map(&labels, args.fov)?;
            let curve = ratio_curve(&density, args.alphabet_size, &args.rho)?;
            for (rho, map) in curve {
                println!(
                    "{rho}\t{}\t{}\t{:.6}\t{}",
                    map.total_single, map.total_3c, map.ratio, map.max_single_per_pixel
                );
            }
        }
        Command::Codebook(args) => {
            let k = match args.digits {
                Some(k) => k,
                None => min_digits(args.n, args.alphabet_size).saturating_add(args.redundancy),
            };
            let cb = build_codebook(args.n, args.alphabet_size, k, args.seed)?;
            cb.save(&args.out)?;
        }
    }
    Ok(())
}
