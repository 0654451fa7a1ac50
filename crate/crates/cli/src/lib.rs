//! The `sgnms` command-line tool: suppression, evaluation, threshold sweeps,
//! synthetic data, embedding training and SVG curves.
//!
//! Every command writes a [`RunManifest`] next to its outputs; `sgnms replay`
//! re-runs a manifest. Exit codes: 0 success, 2 input error, 3 missing
//! embeddings, 4 generation failure, 5 training divergence.

mod error;
mod evaluate;
mod inputs;
mod manifest;
mod plot;
mod synth;
mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sgnms_core::{NmsAlgorithm, PhiFunction};

pub use error::{CliError, CliResult};
pub use manifest::{manifest_path, RunManifest};
pub use plot::{parse_curves, render_svg, Curve};

#[derive(Parser, Debug)]
#[command(name = "sgnms", version, about = "Semantics-geometry NMS toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Suppress duplicate detections in a file or directory of files.
    Nms(evaluate::NmsArgs),
    /// Score detections against ground truth.
    Eval(evaluate::EvalArgs),
    /// Evaluate one suppression algorithm over a grid of a threshold.
    Sweep(evaluate::SweepArgs),
    /// Generate a synthetic occluded-scene corpus.
    Synth(synth::SynthArgs),
    /// Train a linear embedding provider on a scene directory.
    TrainEmbed(train::TrainArgs),
    /// Compute `.sge` embeddings for detections with a trained provider.
    Embed(train::EmbedArgs),
    /// Render CSV curves to SVG.
    Plot(plot::PlotArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Greedy,
    Soft,
    SgConstant,
    SgLinear,
    SgSquare,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Greedy => "greedy",
            Algo::Soft => "soft",
            Algo::SgConstant => "sg-constant",
            Algo::SgLinear => "sg-linear",
            Algo::SgSquare => "sg-square",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, Algo::SgConstant | Algo::SgLinear | Algo::SgSquare)
    }

    pub fn build(self, nt: f64, t: Option<f64>, score_floor: f64) -> CliResult<NmsAlgorithm<f64>> {
        if !nt.is_finite() {
            return Err(CliError::input("--nt must be finite"));
        }
        let t = || t.ok_or_else(|| CliError::input(format!("--t is required for {}", self.name())));
        Ok(match self {
            Algo::Greedy => NmsAlgorithm::Greedy { nt },
            Algo::Soft => NmsAlgorithm::Soft { nt, score_floor },
            Algo::SgConstant => NmsAlgorithm::Sg {
                nt,
                phi: PhiFunction::constant(t()?)?,
            },
            Algo::SgLinear => NmsAlgorithm::Sg {
                nt,
                phi: PhiFunction::linear(t()?)?,
            },
            Algo::SgSquare => NmsAlgorithm::Sg {
                nt,
                phi: PhiFunction::square(t()?)?,
            },
        })
    }
}

/// Caps the worker pool at `SGNMS_THREADS` when set.
fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("SGNMS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::input(format!("SGNMS_THREADS must be a positive integer, got '{v}'")))?;
    // a pool already built by an earlier call in this process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli, argv: &[String]) -> CliResult<()> {
    match cli.command {
        Command::Nms(a) => evaluate::cmd_nms(&a, argv),
        Command::Eval(a) => evaluate::cmd_eval(&a, argv),
        Command::Sweep(a) => evaluate::cmd_sweep(&a, argv),
        Command::Synth(a) => synth::cmd_synth(&a, argv),
        Command::TrainEmbed(a) => train::cmd_train_embed(&a, argv),
        Command::Embed(a) => train::cmd_embed(&a, argv),
        Command::Plot(a) => plot::cmd_plot(&a, argv),
        Command::Replay(a) => {
            let m = RunManifest::read(&a.manifest)?;
            let mut full = vec!["sgnms".to_string()];
            full.extend(m.argv.iter().cloned());
            let cli = Cli::try_parse_from(&full).map_err(|e| CliError::input(e.to_string()))?;
            if matches!(cli.command, Command::Replay(_)) {
                return Err(CliError::input("a manifest cannot replay another replay"));
            }
            execute(cli, &m.argv)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match configure_threads().and_then(|_| execute(cli, &argv)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sgnms: {e}");
            e.exit_code()
        }
    }
}
