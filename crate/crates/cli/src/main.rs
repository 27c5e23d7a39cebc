//! `superres`: simulate point-source images, recover the sources, build dual
//! certificates and check the Gaussian T-system lemmas.

mod commands;
mod config;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superres_core::Weighting;

use config::ExperimentConfig;

#[derive(Debug)]
pub enum Failure {
    /// Bad config, flags or dataset. Exit code 2.
    Validation(String),
    /// A recovery condition or the certificate failed. Exit code 3.
    Certificate(String),
    /// A lemma check failed. Exit code 4.
    Lemma(String),
    /// Filesystem trouble. Exit code 1.
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Certificate(_) => 3,
            Failure::Lemma(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "invalid input: {m}"),
            Failure::Certificate(m) => write!(f, "{m}"),
            Failure::Lemma(m) => write!(f, "{m}"),
            Failure::Io(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<superres_core::Error> for Failure {
    fn from(e: superres_core::Error) -> Self {
        use superres_core::Error as E;
        match e {
            E::ConditionFailure { .. } => Failure::Certificate(e.to_string()),
            E::VerificationFailure { .. } => Failure::Lemma(e.to_string()),
            E::InvalidArgument(_) | E::Unsupported(_) | E::UndefinedScore => Failure::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "superres", version, about = "Gridless recovery of nonnegative point sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for per-image solves (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn weighting(unweighted: bool) -> Weighting {
    if unweighted {
        Weighting::Unit
    } else {
        Weighting::Sampled
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset of images and write dataset.json.
    Simulate(Common),
    /// Recover sources for every image and write run.json.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Dataset from `simulate`; generated from the config when absent.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Use the plain budget `Σ c_i ≤ τ` instead of the weighted one.
        #[arg(long)]
        unweighted: bool,
    },
    /// Run a separation or noise sweep and write sweep.csv and run.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        unweighted: bool,
    },
    /// Check the recovery conditions and build a dual certificate.
    Certify(Common),
    /// Verify the polynomial identities and the Gaussian determinant sign.
    VerifyLemmas {
        /// Optional JSON config of kind "lemmas"; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Highest order of the f sequence (default 6).
        #[arg(long)]
        max_order: Option<usize>,
        /// Largest source count for the determinant check (default 3).
        #[arg(long)]
        max_m: Option<usize>,
        /// Random ordered tuples per source count (default 10000).
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Recover sources in synthetic 2D frames; writes truth.csv, estimate.csv and run.json.
    Demo2d {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        unweighted: bool,
    },
}

fn run(cli: Cli) -> Result<String, Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Validation("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Io(e.into()))?;
    }
    match cli.command {
        Command::Simulate(c) => commands::simulate(&c.load()?, c.out.as_deref()),
        Command::Solve {
            common,
            dataset,
            unweighted,
        } => commands::solve(&common.load()?, dataset.as_deref(), weighting(unweighted), common.out.as_deref()),
        Command::Sweep { common, unweighted } => {
            commands::sweep(&common.load()?, weighting(unweighted), common.out.as_deref())
        }
        Command::Certify(c) => commands::certify(&c.load()?, c.out.as_deref()),
        Command::VerifyLemmas {
            config,
            seed,
            out,
            max_order,
            max_m,
            draws,
        } => {
            let base = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::new(config::ExperimentKind::Lemmas, 0),
            };
            commands::verify_lemmas(
                max_order.unwrap_or(base.max_order),
                max_m.unwrap_or(base.max_m),
                draws.unwrap_or(base.draws),
                seed.unwrap_or(base.seed),
                out.as_deref(),
            )
        }
        Command::Demo2d { common, unweighted } => {
            commands::demo2d(&common.load()?, weighting(unweighted), common.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let start = std::time::Instant::now();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            eprintln!("done in {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
