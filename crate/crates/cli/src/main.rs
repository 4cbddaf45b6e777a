//! Command-line pipeline: synthetic scenes, reconstruction, evaluation, and
//! single-homography decomposition.
//!
//! Exit codes: 0 for success (a fully degenerate reconstruction is still a
//! success), 2 for input validation failures, 3 for numerical failures.

mod config;
mod decompose;
mod eval;
mod io;
mod reconstruct;
mod synth;

use clap::{Parser, Subcommand};

/// Per-point surface normals and depth of a deforming surface, recovered
/// from two or more calibrated images with point correspondences.
#[derive(Parser)]
#[command(name = "nrsfm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: correspondences, intrinsics, ground truth.
    Synth(synth::SynthArgs),
    /// Recover per-image normals and depth from tracked correspondences.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Score a reconstruction against ground-truth files.
    Eval(eval::EvalArgs),
    /// Decompose one homography into candidate surface normals.
    Decompose(decompose::DecomposeArgs),
}

/// A failed run carrying its process exit code.
pub struct Failure {
    code: i32,
    error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    pub fn numerical(error: anyhow::Error) -> Self {
        Self { code: 3, error }
    }
}

pub trait FailContext<T> {
    /// Tag errors as input validation failures (exit 2).
    fn invalid(self, what: &'static str) -> Result<T, Failure>;
    /// Tag errors as numerical failures (exit 3).
    fn numerical(self, what: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> FailContext<T> for Result<T, E> {
    fn invalid(self, what: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::invalid(e.into().context(what)))
    }

    fn numerical(self, what: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure::numerical(e.into().context(what)))
    }
}

/// Pipeline stages fail on either malformed input data or numerical
/// breakdown; the error kind picks the exit code.
pub trait PipelineContext<T> {
    fn pipeline(self, what: &'static str) -> Result<T, Failure>;
}

impl<T> PipelineContext<T> for Result<T, nrsfm_core::Error> {
    fn pipeline(self, what: &'static str) -> Result<T, Failure> {
        use nrsfm_core::Error as E;
        self.map_err(|e| {
            let code = match e {
                E::NonFinite(_)
                | E::InvalidPoint { .. }
                | E::InvalidParam { .. }
                | E::TooFewCorrespondences { .. }
                | E::LengthMismatch { .. }
                | E::DuplicateObservation { .. }
                | E::TooFewImages { .. }
                | E::TooFewPoints { .. }
                | E::EmptyOverlap => 2,
                _ => 3,
            };
            Failure { code, error: anyhow::Error::new(e).context(what) }
        })
    }
}

fn main() {
    // Die quietly when a downstream pipe closes instead of panicking on
    // the next print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => synth::run(args),
        Command::Reconstruct(args) => reconstruct::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Decompose(args) => decompose::run(args),
    };
    if let Err(failure) = result {
        eprintln!("error: {:#}", failure.error);
        std::process::exit(failure.code);
    }
}
