use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pinsim::cli::{exit, run_to_exit_code, Command, RunConfig};

/// Pinned Brownian path integrals on flat and hyperbolic spaces.
#[derive(Parser)]
#[command(name = "pinsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Weighted estimate of pinned path integrals, compared with reference values.
    Pinned(Common),
    /// Convergence of the discrete Jacobi objects to their damped limits.
    Converge(Common),
    /// Samplewise bound checks on random paths.
    Props(Common),
    /// Dump sampled paths as CSV.
    Sample(Common),
    /// Chart-level integration-by-parts check.
    Ibp(Common),
}

#[derive(Args)]
struct Common {
    /// `key = value` file of defaults; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// flat | hyperbolic
    #[arg(long)]
    model: Option<String>,
    /// Manifold dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Curvature magnitude (sectional curvature is -kappa); 0 for flat.
    #[arg(long)]
    kappa: Option<f64>,
    /// Number of intervals, or a comma-separated list for `converge`.
    #[arg(long)]
    n: Option<String>,
    /// Pinning target in frame coordinates at the origin, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Pinning target at this distance along the first axis.
    #[arg(long)]
    rho: Option<f64>,
    /// one | mid_radius | all
    #[arg(long)]
    observable: Option<String>,
    /// Monte Carlo samples (per n for `converge`).
    #[arg(long = "N", visible_alias = "samples")]
    samples: Option<usize>,
    /// Number of paths for `props` and `sample`.
    #[arg(long)]
    paths: Option<usize>,
    /// f, k, j, adjoint, or all (comma-separated).
    #[arg(long)]
    stat: Option<String>,
    /// Base seed; results depend only on the seed and the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (does not change results).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k, val));
            }
        };
        push("model", self.model.clone());
        push("d", self.d.map(|x| x.to_string()));
        push("kappa", self.kappa.map(|x| x.to_string()));
        push("n", self.n.clone());
        push("x", self.x.clone());
        push("rho", self.rho.map(|x| x.to_string()));
        push("observable", self.observable.clone());
        push("samples", self.samples.map(|x| x.to_string()));
        push("paths", self.paths.map(|x| x.to_string()));
        push("stat", self.stat.clone());
        push("seed", self.seed.map(|x| x.to_string()));
        push("workers", self.workers.map(|x| x.to_string()));
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        v
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Pinned(a) => (Command::Pinned, a),
        Cmd::Converge(a) => (Command::Converge, a),
        Cmd::Props(a) => (Command::Props, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Ibp(a) => (Command::Ibp, a),
    };
    let code = match RunConfig::from_sources(command, args.config.as_deref(), &args.flags()) {
        Ok(cfg) => run_to_exit_code(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            exit::USAGE
        }
    };
    ExitCode::from(code as u8)
}
