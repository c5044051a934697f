//! Command-line front end: experiment runs, stability measurement, sampler
//! diagnostics, mechanism audits, summation sweeps, and representation
//! construction.
//!
//! Exit codes: 0 on success, 2 on configuration rejection, 3 on a mechanism
//! audit failure, 1 otherwise.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use userdp_core::error::Error;
use userdp_core::harness::{
    audit_mechanism, run_build_rep, run_cs_test, run_experiment, run_shuffle_sum, run_stability,
    AuditMechanism, ExperimentConfig,
};
use userdp_core::randomness::SeedRoot;
use userdp_core::stability::ProfileKind;

#[derive(Parser)]
#[command(name = "userdp", version, about = "User-level DP learning simulations")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed in hex; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Trial count override.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Constant profile override.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Worker threads (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    PureSelect,
    PureSelectBrokenExponent,
    UniformBaseline,
    LocalRandomizer,
}

impl From<MechanismArg> for AuditMechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::PureSelect => AuditMechanism::PureSelect,
            MechanismArg::PureSelectBrokenExponent => AuditMechanism::PureSelectBrokenExponent,
            MechanismArg::UniformBaseline => AuditMechanism::UniformBaseline,
            MechanismArg::LocalRandomizer => AuditMechanism::LocalRandomizer,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured end-to-end learner over independent trials.
    Learn,
    /// Measure per-root pseudo-stability of the configured learner.
    Stability,
    /// Correlated-sampling marginal and coupling diagnostics.
    CsTest {
        /// Number of random distributions / pairs.
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// Exact DP audit of an enumerable mechanism.
    Audit {
        #[arg(long, value_enum, default_value = "pure-select")]
        mechanism: MechanismArg,
        #[arg(long, default_value_t = 4)]
        universe: u32,
        #[arg(long, default_value_t = 4)]
        users: u32,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
    },
    /// Over/under-estimating shuffle summation sweep.
    ShuffleSum {
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 1e-6)]
        delta: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 100)]
        users: usize,
        /// Number of users holding a 1.
        #[arg(long, default_value_t = 40)]
        ones: usize,
        #[arg(long, default_value_t = 1.0)]
        r_scale: f64,
        #[arg(long, default_value_t = 1000)]
        sweep_trials: usize,
    },
    /// Build a hypothesis class from empty-dataset runs of the configured
    /// pure-DP learner.
    BuildRep,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::ConfigRejected("this subcommand needs --config".into()))?;
    let text = fs::read_to_string(path)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = &cli.seed {
        config.seed = seed.clone();
    }
    if let Some(trials) = cli.trials {
        config.trials = trials;
    }
    if let Some(profile) = cli.profile {
        config.profile = Some(match profile {
            ProfileArg::Paper => ProfileKind::Paper,
            ProfileArg::Desk => ProfileKind::Desk,
        });
    }
    config.validate()?;
    Ok(config)
}

fn seed_for(cli: &Cli) -> Result<SeedRoot, Error> {
    if let Some(seed) = &cli.seed {
        return SeedRoot::from_hex(seed);
    }
    if cli.config.is_some() {
        if let Ok(config) = load_config(cli) {
            return config.seed_root();
        }
    }
    SeedRoot::from_hex("01")
}

fn write_artifact(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if cli.threads > 0 {
        // Determinism does not depend on the pool size; this only affects
        // wall time.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match &cli.command {
        Command::Learn => {
            let config = load_config(cli)?;
            let output = run_experiment(&config)?;
            let csv = write_artifact(&cli.out, "learn.csv", &output.csv)?;
            write_artifact(&cli.out, "learn_summary.json", &output.summary_json)?;
            println!(
                "learn: {} trials, success rate {:.3}, median err {:.4} ({} ms) -> {}",
                output.summary.trials,
                output.summary.success_rate,
                output.summary.err_quantiles[1],
                output.wall_ms,
                csv.display(),
            );
            Ok(())
        }
        Command::Stability => {
            let config = load_config(cli)?;
            let (report, csv) = run_stability(&config)?;
            write_artifact(&cli.out, "stability.csv", &csv)?;
            write_artifact(&cli.out, "stability.json", &report.to_json())?;
            println!(
                "stability: {} roots, eta_hat >= 0.9 on {:.1}%, modal err <= alpha on {:.1}%",
                report.per_root.len(),
                100.0 * report.fraction_with_eta_at_least(0.9),
                100.0 * report.fraction_with_modal_err_at_most(config.alpha),
            );
            Ok(())
        }
        Command::CsTest { cases } => {
            let seed = seed_for(cli)?;
            let (csv, pass) = run_cs_test(&seed, *cases, 100_000, 10_000)?;
            write_artifact(&cli.out, "cs_test.csv", &csv)?;
            println!("cs-test: {}", if pass { "pass" } else { "FAIL" });
            if pass {
                Ok(())
            } else {
                Err(Error::AuditFailed("correlated sampling diagnostics failed".into()))
            }
        }
        Command::Audit { mechanism, universe, users, epsilon } => {
            let report = audit_mechanism((*mechanism).into(), *universe, *users, *epsilon)?;
            write_artifact(&cli.out, "audit.json", &report.to_json())?;
            println!(
                "audit {:?}: max ratio {:.6} vs bound {:.6} -> {}",
                report.mechanism,
                report.max_ratio,
                report.bound,
                if report.pass { "pass" } else { "FAIL" }
            );
            if report.pass {
                Ok(())
            } else {
                Err(Error::AuditFailed(format!(
                    "max ratio {} exceeds e^epsilon {}",
                    report.max_ratio, report.bound
                )))
            }
        }
        Command::ShuffleSum { epsilon, delta, beta, users, ones, r_scale, sweep_trials } => {
            let seed = seed_for(cli)?;
            let (csv, no_violations, exceed) = run_shuffle_sum(
                &seed,
                *epsilon,
                *delta,
                *beta,
                *users,
                *ones,
                *sweep_trials,
                *r_scale,
            )?;
            write_artifact(&cli.out, "shuffle_sum.csv", &csv)?;
            println!(
                "shuffle-sum: sign violations {}, tail exceed rate {:.4} (beta {})",
                if no_violations { "none" } else { "PRESENT" },
                exceed,
                beta,
            );
            Ok(())
        }
        Command::BuildRep => {
            let config = load_config(cli)?;
            let class = run_build_rep(&config)?;
            let path = write_artifact(&cli.out, "representation.json", &class.to_json())?;
            println!("build-rep: {} hypotheses -> {}", class.len(), path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::ConfigRejected(_) | Error::Parse(_) => ExitCode::from(2),
                Error::AuditFailed(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
