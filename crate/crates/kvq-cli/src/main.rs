use kvq_cli::runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "kvq", about = "KSOM / EMA-VQ codebook learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training config (all seeds) and write traces, codebooks, and a summary
    Train {
        /// Path to the config file
        config: PathBuf,
        /// key=value overrides applied on top of the config file
        #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Output directory override
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a sweep: the cross product of the [sweep] axes over a base config
    Sweep {
        config: PathBuf,
        #[arg(short = 's', long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Decode every codebook entry through a trained model and render the grid as PPM
    RenderGrid {
        /// Run directory produced by `train` (one seed)
        run_dir: PathBuf,
        /// Output PPM path
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Report perturbed-reconstruction error for a trained run
    Perturb {
        run_dir: PathBuf,
        /// Integer latent offset
        #[arg(long, default_value_t = 1)]
        offset: i64,
        /// Shift mode: grid-clamp or index-wrap
        #[arg(long, default_value = "grid-clamp")]
        mode: String,
        /// Number of evaluation inputs
        #[arg(long, default_value_t = 64)]
        inputs: usize,
    },
    /// Print the header and summary statistics of a codebook file
    InspectCodebook { path: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, overrides, out } => runner::cmd_train(&config, &overrides, out),
        Command::Sweep { config, overrides, out } => runner::cmd_sweep(&config, &overrides, out),
        Command::RenderGrid { run_dir, out } => runner::cmd_render_grid(&run_dir, out),
        Command::Perturb { run_dir, offset, mode, inputs } => {
            runner::cmd_perturb(&run_dir, offset, &mode, inputs)
        }
        Command::InspectCodebook { path } => runner::cmd_inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
