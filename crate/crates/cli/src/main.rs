use std::path::PathBuf;
use std::process::ExitCode;

use bfd_cli::commands::{self, EpsilonList};
use bfd_cli::config::{parse_config, RunConfig};
use bfd_cli::verify::{run_suite, Profile, VerifyOptions};
use bfd_cli::{CliError, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bfd", version, about = "Homogeneous Boltzmann-Fermi-Dirac laboratory")]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` of the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = parse_config(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one configuration and write its artifacts.
    Run(Common),
    /// Run the configured datum for several quantum parameters.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated absolute values of eps.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "fractions")]
        epsilons: Vec<f64>,
        /// Comma-separated fractions of eps_sat.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        fractions: Vec<f64>,
    },
    /// Fermi-Dirac statistics with the datum's moments.
    Equilibrium(Common),
    /// Direct against reduced sides of the cancellation identities.
    CancellationCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Upper relative-speed cutoff; none by default.
        #[arg(long)]
        upper: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
    },
    /// Run the acceptance suite and print a pass/fail table.
    Verify {
        #[arg(long, value_enum, default_value_t = Profile::Full)]
        profile: Profile,
        /// Only these check ids (comma-separated).
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        /// Fault injection: corrupt the conservation projection.
        #[arg(long, hide = true)]
        corrupt_projection: bool,
    },
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run(c) => {
            let outcome = commands::run(&c.load()?)?;
            let s = &outcome.summary;
            println!(
                "wrote {} ({} steps, dS = {:.6e}, int D = {:.6e}, min kappa0 = {:.4})",
                outcome.dir.display(),
                s.steps,
                s.entropy.delta_s,
                s.entropy.int_d,
                s.min_kappa0
            );
            for v in &s.violations {
                eprintln!("invariant violated: {v}");
            }
            Ok(s.violations.is_empty())
        }
        Command::Sweep { common, epsilons, fractions } => {
            let list = match (epsilons.is_empty(), fractions.is_empty()) {
                (false, true) => EpsilonList::Absolute(epsilons),
                (true, false) => EpsilonList::Fractions(fractions),
                _ => return Err(CliError::Argument("give --epsilons or --fractions".into())),
            };
            let s = commands::sweep(&common.load()?, &list)?;
            println!("{:>12} {:>10} {:>10} {:>10} {:>12} {:>10}", "epsilon", "fraction", "kappa0", "fit p", "final H_rel", "max f");
            for r in &s.rows {
                let opt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
                println!(
                    "{:>12.5e} {:>10} {:>10.4} {:>10} {:>12} {:>10.4}",
                    r.epsilon,
                    opt(r.fraction),
                    r.kappa0,
                    opt(r.fit_exponent),
                    r.final_h_rel.map_or_else(|| "-".to_string(), |v| format!("{v:.3e}")),
                    r.max_linf
                );
            }
            for v in &s.violations {
                eprintln!("invariant violated: {v}");
            }
            Ok(s.violations.is_empty())
        }
        Command::Equilibrium(c) => {
            let r = commands::equilibrium(&c.load()?)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(true)
        }
        Command::CancellationCheck { common, lambda, upper, tolerance } => {
            let r = commands::cancellation_check(&common.load()?, lambda, upper, [0.0; 3], tolerance)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(r.pass)
        }
        Command::Verify { profile, only, corrupt_projection } => {
            let opts = VerifyOptions { profile: Some(profile), corrupt_projection, only };
            let results = run_suite(&opts, |r| println!("{}", r.line()));
            let passed = results.iter().filter(|r| r.pass).count();
            let unexpected = results.iter().filter(|r| !r.acceptable()).count();
            println!("{} checks: {passed} passed, {unexpected} unexpected failures", results.len());
            Ok(unexpected == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::FAILURE;
    }
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
