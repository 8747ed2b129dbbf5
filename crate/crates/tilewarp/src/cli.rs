use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tilewarp_core::LossMode;

use crate::commands;
use crate::config::{Overrides, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "tilewarp", version, about = "Synthetic scenes, locally-rigid fitting, evaluation and visualization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Rigid,
    Nonrigid,
    Segmented,
}

impl From<Mode> for LossMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Rigid => LossMode::Rigid,
            Mode::Nonrigid => LossMode::Nonrigid,
            Mode::Segmented => LossMode::Segmented,
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene, fit and gradcheck seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene directory.
    Gen {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit depth, pose field and mask to every consecutive frame pair.
    Fit {
        scene_dir: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        /// Upper bound on worker threads.
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        threads: Option<u32>,
    },
    /// Score a fit directory against its scene.
    Eval {
        fit_dir: PathBuf,
        scene_dir: PathBuf,
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long)]
        no_median_scale: bool,
        /// Also write eval.json and the effective config here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients against central differences; all modes unless --mode is given.
    Gradcheck {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Scales the analytic gradient by 1 + x before comparing.
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt: f64,
    },
    /// Render a field file as PNG or PPM, chosen by extension.
    Viz { field: PathBuf, out: PathBuf },
}

fn load(common: &ConfigArgs, mode: Option<Mode>, no_median_scale: bool) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), Overrides { seed: common.seed, mode: mode.map(Into::into), no_median_scale })
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen { common, out } => commands::gen(&load(&common, None, false)?, &out),
        Command::Fit { scene_dir, common, mode, out, threads } => {
            let threads = threads.map_or_else(commands::available_threads, |t| t as usize);
            commands::fit(&scene_dir, &load(&common, mode, false)?, &out, threads)
        }
        Command::Eval { fit_dir, scene_dir, common, no_median_scale, out } => {
            commands::eval(&fit_dir, &scene_dir, &load(&common, None, no_median_scale)?, out.as_deref())
        }
        Command::Gradcheck { common, mode, out, corrupt } => commands::gradcheck(&load(&common, mode, false)?, corrupt, out.as_deref()),
        Command::Viz { field, out } => commands::viz(&field, &out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
