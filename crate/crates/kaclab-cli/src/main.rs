//! Seeded, parallel, reproducible experiment drivers for the Kac walk
//! laboratory.
//!
//! Exit codes: 0 success, 1 verification failure (an inequality oracle
//! reported violations), 2 usage error, 3 numeric failure at runtime.
//! Replicate k of a command always draws from the stream derived from
//! (master seed, command tag, k), so outputs are byte-identical for any
//! `--threads` value and adding replicates never perturbs existing ones.

mod cmd_couple;
mod cmd_phi;
mod cmd_verify;
mod cmd_walk;
mod manifest;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kaclab", version, about = "Kac walk simulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FlavorArg {
    Greedy,
    Lazy,
}

impl FlavorArg {
    pub fn to_flavor(self) -> kaclab::coupling::ScheduleFlavor {
        match self {
            FlavorArg::Greedy => kaclab::coupling::ScheduleFlavor::Greedy,
            FlavorArg::Lazy => kaclab::coupling::ScheduleFlavor::Lazy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DFlavorArg {
    /// D from fresh lazy-schedule induced maps.
    D,
    /// The Haar idealization D∞.
    Dinf,
}

impl DFlavorArg {
    pub fn to_flavor(self) -> kaclab::randmat_lab::DFlavor {
        match self {
            DFlavorArg::D => kaclab::randmat_lab::DFlavor::LazyD,
            DFlavorArg::Dinf => kaclab::randmat_lab::DFlavor::Infinity,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run replicate walks and emit trajectory summaries plus the
    /// entry-marginal mixing table.
    Walk {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "kaclab-out")]
        out: PathBuf,
    },
    /// Build the two-stage coupling, attempt coalescence per replicate,
    /// and emit traces plus the coalescence-rate table.
    Couple {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = FlavorArg::Lazy)]
        flavor: FlavorArg,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = 0.05)]
        eps: f64,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        /// Hilbert–Schmidt distance between the two starting points.
        #[arg(long, default_value_t = 1e-6)]
        init_distance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "kaclab-out")]
        out: PathBuf,
    },
    /// Estimate the φ quantile of the smallest singular value and the
    /// derived mixing bounds.
    Phi {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value_t = DFlavorArg::Dinf)]
        flavor: DFlavorArg,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also dump the raw σ₁ samples to CSV.
        #[arg(long, default_value_t = false)]
        dump_samples: bool,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "kaclab-out")]
        out: PathBuf,
    },
    /// Run the inequality-oracle suite; exit 0 iff no oracle reports a
    /// violation.
    Verify {
        /// Restrict to one lemma: telescoping, determinant-ratio,
        /// exp-approximation, tangent-closeness, small-ball,
        /// sphere-density.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true, default_value_t = false)]
        self_test_negate: bool,
        #[arg(long, default_value = "kaclab-out")]
        out: PathBuf,
    },
}

/// Usage problems exit with 2.
pub fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

/// Runtime numeric failures exit with 3.
pub fn numeric_error(err: &dyn std::fmt::Display) -> ExitCode {
    eprintln!("numeric failure: {err}");
    ExitCode::from(3)
}

fn thread_count(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("KACLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(0)
}

fn with_pool<F: FnOnce() -> ExitCode + Send>(threads: usize, f: F) -> ExitCode {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(e) => numeric_error(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Walk {
            n,
            steps,
            replicates,
            seed,
            threads,
            out,
        } => {
            let t = thread_count(threads);
            with_pool(t, || cmd_walk::run(n, steps, replicates, seed, t, &out))
        }
        Command::Couple {
            n,
            flavor,
            q,
            eps,
            replicates,
            init_distance,
            seed,
            threads,
            out,
        } => {
            let t = thread_count(threads);
            with_pool(t, || {
                cmd_couple::run(n, flavor, q, eps, replicates, init_distance, seed, t, &out)
            })
        }
        Command::Phi {
            n,
            flavor,
            q,
            samples,
            seed,
            dump_samples,
            threads,
            out,
        } => {
            let t = thread_count(threads);
            with_pool(t, || {
                cmd_phi::run(n, flavor, q, samples, seed, dump_samples, t, &out)
            })
        }
        Command::Verify {
            only,
            trials,
            seed,
            self_test_negate,
            out,
        } => cmd_verify::run(only.as_deref(), trials, seed, self_test_negate, &out),
    }
}
