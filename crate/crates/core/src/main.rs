use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepfdm::commands::{self, Common};
use deepfdm::Result;

#[derive(Parser)]
#[command(
    name = "deepfdm",
    version,
    about = "Learn PDE coefficient fields from trajectory data"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML config file; `--set` flags are applied on top of it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set grid.n=32` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Overwrite an existing output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit coefficient fields to a dataset.
    Train {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a saved model, keeping its optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Report accuracy of a model on a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated squared Hellinger distances for the shift sweep.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        ood: Option<Vec<f64>>,
        /// Also export the learned coefficient fields as CSV grids.
        #[arg(long)]
        coeffs: bool,
    },
    /// Retrain across coefficient amplitudes and record the test error.
    SweepVariance {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated amplitudes; overrides `sweep.amplitudes`.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Option<Vec<f64>>,
    },
    /// Check the checksums of a dataset or model and that it re-saves bitwise.
    Verify { path: PathBuf },
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(deepfdm::Error::validation(
                "--threads",
                "must be at least 1",
            ));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    let common = Common {
        config: cli.global.config,
        set: cli.global.set,
        force: cli.global.force,
    };
    match cli.command {
        Command::Gen { seed, out } => {
            let s = commands::gen(&common, seed, &out)?;
            let m = &s.stored.manifest;
            println!(
                "dataset {}: {} samples, {}D n={}, {} slices, terms {:?}, seed {}",
                out.display(),
                m.samples,
                m.grid.dim(),
                m.grid.mesh.n(),
                s.stored.layout.slices,
                m.kinds(),
                m.seed
            );
            for (i, t) in s.timings.iter().enumerate() {
                println!("sample {i}: {:.3}s", t.as_secs_f64());
            }
        }
        Command::Train {
            seed,
            data,
            out,
            resume,
        } => {
            let s = commands::train(&common, seed, &data, &out, resume.as_deref())?;
            for r in &s.history {
                match r.val_loss {
                    Some(v) => println!(
                        "epoch {}: train {:.6e} val {:.6e}",
                        r.epoch, r.train_loss, v
                    ),
                    None => println!("epoch {}: train {:.6e}", r.epoch, r.train_loss),
                }
            }
            println!(
                "model {}: {} parameters, {} epochs, stopped by {:?}, threshold epoch {}",
                out.display(),
                s.parameter_count,
                s.epochs,
                s.stop,
                s.epochs_to_threshold
                    .map_or("none".into(), |e| e.to_string())
            );
        }
        Command::Eval {
            model,
            data,
            out,
            ood,
            coeffs,
        } => {
            let r = commands::eval(&common, &model, &data, &out, ood, coeffs)?;
            print!("{}", r.to_csv());
        }
        Command::SweepVariance {
            seed,
            out,
            amplitudes,
        } => {
            for p in commands::sweep_variance(&common, seed, &out, amplitudes)? {
                println!(
                    "amplitude {}: relative error {:.6e}",
                    p.amplitude, p.relative_error
                );
            }
        }
        Command::Verify { path } => {
            let r = commands::verify(&path)?;
            println!(
                "{} {}: {} blobs, {} bytes verified",
                r.kind,
                path.display(),
                r.blobs,
                r.bytes
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
