use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use opcoorbit::experiments::{Command, ExperimentConfig, RunResult};
use opcoorbit::WindowSpec;

/// Operator Gabor frames on Hilbert-Schmidt matrices: best-K-term experiments.
#[derive(Parser, Debug)]
#[command(name = "opcoorbit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Best-K approximation of a Gaussian spreading operator.
    Underspread(Opts),
    /// Greedy denoising of a noisy Gabor multiplier.
    Denoise(Opts),
    /// The ten operator/window scenarios.
    Scenarios(Opts),
    /// Error decay for polynomially weighted spreading operators.
    Decay(Opts),
    /// Gram localization and decay fit of a window.
    Localize(Opts),
    /// Quick identity checks.
    Selftest(Opts),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WindowKind {
    Gaussian,
    MultiGaussian,
    Eigen,
    FullRank,
}

#[derive(Args, Debug)]
struct Opts {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    a: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long, value_enum)]
    window: Option<WindowKind>,
    /// Rank for multi-gaussian and eigen windows.
    #[arg(long, default_value_t = 6)]
    rank: usize,
    /// Decay exponents, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Signal-to-noise ratio in dB; `inf` disables noise.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    k_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    p_grid: Option<Vec<f64>>,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// White-noise probes per budget.
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    reproducible: bool,
    /// Output directory; OPCOORBIT_OUT takes precedence.
    #[arg(long, default_value = "opcoorbit-out")]
    out: PathBuf,
}

fn config(command: Command, o: &Opts) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(command);
    if let Some(n) = o.n {
        cfg.n = n;
    }
    if let Some(a) = o.a {
        cfg.a = a;
    }
    if let Some(b) = o.b {
        cfg.b = b;
    }
    if let Some(w) = o.window {
        cfg.window = match w {
            WindowKind::Gaussian => WindowSpec::GaussianRank1,
            WindowKind::MultiGaussian => WindowSpec::MultiGaussian { rank: o.rank },
            WindowKind::Eigen => WindowSpec::Eigenfunctions { rank: o.rank },
            WindowKind::FullRank => WindowSpec::FullRank,
        };
    }
    if let Some(al) = &o.alpha {
        cfg.alphas = al.clone();
    }
    if let Some(snr) = o.snr_db {
        cfg.snr_db = (snr != f64::INFINITY).then_some(snr);
    }
    if o.k_grid.is_some() {
        cfg.k_grid = o.k_grid.clone();
    }
    if let Some(p) = &o.p_grid {
        cfg.p_grid = p.clone();
    }
    if o.trials == 0 {
        bail!("--trials must be at least 1");
    }
    cfg.seeds = (0..o.trials).map(|i| o.seed.wrapping_add(i)).collect();
    if let Some(p) = o.probes {
        cfg.probes = p;
    }
    cfg.reproducible = o.reproducible;
    Ok(cfg)
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let (command, opts) = match &cli.command {
        Sub::Underspread(o) => (Command::Underspread, o),
        Sub::Denoise(o) => (Command::Denoise, o),
        Sub::Scenarios(o) => (Command::Scenarios, o),
        Sub::Decay(o) => (Command::Decay, o),
        Sub::Localize(o) => (Command::Localize, o),
        Sub::Selftest(o) => (Command::Selftest, o),
    };
    let cfg = config(command, opts)?;
    if let Some(t) = opts.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("thread pool")?;
    }
    let out = std::env::var_os("OPCOORBIT_OUT").map(PathBuf::from).unwrap_or_else(|| opts.out.clone());
    let result = opcoorbit::experiments::run(&cfg)?;
    let files = result.write(&cfg, &out).with_context(|| format!("writing to {}", out.display()))?;
    for f in &files {
        println!("{}", out.join(f).display());
    }
    if let RunResult::Selftest(r) = &result {
        for c in &r.checks {
            println!("{} {:<20} {:.3e} (tol {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
        }
        return Ok(r.passed);
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
