use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use frameweave::checkpoint::Checkpoint;
use frameweave::data::{load_dataset, read_frame, synth_motion_dataset, write_frame, ImageFormat, PACKED_DATASET_FILE};
use frameweave::eval::{evaluate, interpolate, EvalOptions, Predictor};
use frameweave::gradcheck::{run_all, GradcheckConfig};
use frameweave::train::{resume, train, EpochStats, TrainConfig, FINAL_CHECKPOINT};
use frameweave::Rng;

#[derive(Parser)]
#[command(name = "frameweave", version, about = "Train and run a convolutional frame interpolator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a dataset.
    Train {
        /// TOML config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Packed dataset file, directory holding one, or a frame directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the total epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Predict the middle frame between two images.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Output image; `.ppm` or `.png`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model (or a reference predictor) on a dataset.
    Eval {
        #[arg(long, required_if_eq("mode", "model"))]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Model)]
        mode: Mode,
        /// Number of side-by-side comparison images.
        #[arg(long, default_value_t = 4)]
        compare: usize,
        /// Separator width in pixels; 0 disables it.
        #[arg(long, default_value_t = 2)]
        separator: usize,
    },
    /// Generate a synthetic moving-shape dataset.
    Synth {
        #[arg(long)]
        count: usize,
        /// Frame size as HxW.
        #[arg(long, value_parser = parse_size, default_value = "64x64")]
        size: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write every triplet as PPM images.
        #[arg(long)]
        images: bool,
    },
    /// Verify every analytic gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Model,
    /// Mean of the two outer frames.
    Average,
    /// The ground truth itself.
    Truth,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad dimension {v:?}"));
    Ok((num(h)?, num(w)?))
}

fn image_format(path: &Path) -> Result<ImageFormat> {
    ImageFormat::from_path(path).with_context(|| format!("{} must end in .ppm or .png", path.display()))
}

fn print_epoch(s: &EpochStats) {
    println!(
        "epoch {:>5}  train mse {:>10.4}  val mse {:>10.4}  val psnr {:>6.2} dB",
        s.epoch, s.train.mse_paper, s.val.mse_paper, s.val.psnr_db
    );
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, data, out, resume: from, epochs } => {
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let outcome = match from {
                Some(path) => {
                    if config.is_some() {
                        bail!("--config cannot be combined with --resume; the checkpoint carries its config");
                    }
                    let ck = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
                    println!("resuming from epoch {}", ck.epoch);
                    resume(ck, epochs, &dataset, &out, &mut print_epoch)?
                }
                None => {
                    let mut cfg = match config {
                        Some(p) => TrainConfig::load(&p).with_context(|| format!("reading {}", p.display()))?,
                        None => TrainConfig::default(),
                    };
                    if let Some(e) = epochs {
                        cfg.epochs = e;
                        cfg.validate()?;
                    }
                    println!("training on {} triplets of {:?}", dataset.len(), dataset.dims());
                    train(&cfg, &dataset, &out, &mut print_epoch)?
                }
            };
            println!("wrote {}", out.join(FINAL_CHECKPOINT).display());
            if let Some(v) = outcome.curve.rows.last() {
                println!("final val mse {:.4} (paper scale), psnr {:.2} dB", v.mse_paper, v.psnr_db);
            }
        }
        Command::Interpolate { ckpt, a, b, out } => {
            let format = image_format(&out)?;
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let frame = interpolate(&ck.network, &read_frame(&a)?, &read_frame(&b)?)?;
            write_frame(&frame, &out, format)?;
        }
        Command::Eval { ckpt, data, out, mode, compare, separator } => {
            let dataset = load_dataset(&data).with_context(|| format!("loading {}", data.display()))?;
            let ck = ckpt.map(|p| Checkpoint::load(&p).with_context(|| format!("loading {}", p.display()))).transpose()?;
            let predictor = match (mode, &ck) {
                (Mode::Model, Some(ck)) => Predictor::Model(&ck.network),
                (Mode::Model, None) => bail!("--ckpt is required in model mode"),
                (Mode::Average, _) => Predictor::AverageBaseline,
                (Mode::Truth, _) => Predictor::GroundTruth,
            };
            let options = EvalOptions { compare_images: compare, separator, ..EvalOptions::default() };
            let report = evaluate(predictor, &dataset, Some(&out), &options)?;
            println!(
                "{} triplets: mean mse {:.4} (paper scale), mean psnr {:.2} dB",
                report.rows.len(),
                report.mean.mse_paper,
                report.mean.psnr_db
            );
        }
        Command::Synth { count, size, seed, out, images } => {
            let dataset = synth_motion_dataset(count, size, &Rng::new(seed))?;
            fs::create_dir_all(&out)?;
            dataset.save(out.join(PACKED_DATASET_FILE))?;
            if images {
                for (i, t) in dataset.triplets().iter().enumerate() {
                    for (tag, f) in [("a", &t.frame_a), ("mid", &t.frame_mid), ("b", &t.frame_b)] {
                        write_frame(f, out.join(format!("triplet_{i:06}_{tag}.ppm")), ImageFormat::Ppm)?;
                    }
                }
            }
            println!("wrote {count} triplets of {}x{} to {}", size.0, size.1, out.display());
        }
        Command::Gradcheck { seed, trials } => {
            let cfg = GradcheckConfig { seed, trials, ..GradcheckConfig::default() };
            let results = run_all(&cfg)?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                eprintln!("{failed} gradient check(s) failed");
                return Ok(false);
            }
            println!("all gradient checks passed");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
