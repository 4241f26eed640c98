use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uible_cli::commands::{self, Subject};
use uible_cli::config::{resolve_path, RunConfig};
use uible_cli::demo::DemoConfig;
use uible_cli::error::{CliError, CliResult};

/// Bayes linear emulation with uncertain inputs.
#[derive(Parser)]
#[command(name = "uible", version)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct FitFlags {
    /// Use the vague (infinitely diffuse) prior on the regression coefficients.
    #[arg(long)]
    vague_prior: bool,
    #[arg(long)]
    nugget: Option<f64>,
    /// Number of local likelihood searches.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a maximin Latin hypercube on [−1, 1]^p.
    Design {
        #[arg(short, long)]
        n: usize,
        #[arg(short, long)]
        p: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of random candidates compared.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an emulator to a design and its outputs.
    Fit {
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        outputs: Option<PathBuf>,
        #[command(flatten)]
        flags: FitFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict with a saved emulator at known or uncertain targets.
    Predict {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate targets through a chain of emulators.
    Chain {
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model or chain against held-out truths.
    Diagnose {
        #[arg(long, conflicts_with = "chain")]
        model: Option<PathBuf>,
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Test inputs in the same format as prediction targets.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        truths: Option<PathBuf>,
        /// Output component to score (0-based).
        #[arg(long, default_value_t = 0)]
        output: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the synthetic dispersion / dose-response study.
    DemoDdr {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adjust a regression on uncertain times with structured errors.
    Regress {
        #[arg(long)]
        training: Option<PathBuf>,
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(cli.config.as_deref())?;
    let p = &cfg.paths;
    match cli.command {
        Command::Design {
            n,
            p: dim,
            seed,
            iterations,
            out,
        } => {
            let out = resolve_path(out, &p.out, "out")?;
            let iterations = iterations.or(cfg.lhs_iterations).unwrap_or(uible::design::DEFAULT_LHS_ITERATIONS);
            commands::cmd_design(n, dim, seed.or(cfg.seed).unwrap_or(0), iterations, &out)?;
        }
        Command::Fit {
            design,
            outputs,
            flags,
            out,
        } => {
            let opts = cfg.train_options(flags.vague_prior, flags.nugget, flags.starts)?;
            let (_, fit) = commands::cmd_fit(
                &resolve_path(design, &p.design, "design")?,
                &resolve_path(outputs, &p.outputs, "outputs")?,
                &opts,
                &resolve_path(out, &p.model, "out")?,
            )?;
            println!("log_likelihood,{}", uible::diagnostics::fmt_f64(fit.log_likelihood));
            if fit.degenerate {
                println!("degenerate,true");
            }
        }
        Command::Predict { model, targets, out } => {
            commands::cmd_predict(
                &resolve_path(model, &p.model, "model")?,
                &resolve_path(targets, &p.targets, "targets")?,
                &resolve_path(out, &p.out, "out")?,
            )?;
        }
        Command::Chain { chain, targets, out } => {
            commands::cmd_chain(
                &resolve_path(chain, &p.chain, "chain")?,
                &resolve_path(targets, &p.targets, "targets")?,
                &resolve_path(out, &p.out, "out")?,
            )?;
        }
        Command::Diagnose {
            model,
            chain,
            targets,
            truths,
            output,
            out,
        } => {
            let subject = match (model.or_else(|| p.model.clone()), chain.or_else(|| p.chain.clone())) {
                (Some(m), None) => Subject::Model(m),
                (None, Some(c)) => Subject::Chain(c),
                (None, None) => return Err(CliError::Usage("diagnose needs --model or --chain".into())),
                (Some(_), Some(_)) => return Err(CliError::Usage("give only one of --model and --chain".into())),
            };
            let report = commands::cmd_diagnose(
                &subject,
                &resolve_path(targets, &p.targets, "targets")?,
                &resolve_path(truths, &p.truths, "truths")?,
                output,
                &resolve_path(out, &p.out, "out")?,
            )?;
            println!("{}", commands::summary_text(&report));
        }
        Command::DemoDdr { seed, out } => {
            let mut demo = DemoConfig::new(seed.or(cfg.seed).unwrap_or(1));
            if let Some(it) = cfg.lhs_iterations {
                demo.lhs_iterations = it;
            }
            let out = resolve_path(out, &p.out, "out")?;
            let result = commands::cmd_demo_ddr(&demo, &out)?;
            print!("{}", result.render());
        }
        Command::Regress { training, targets, out } => {
            commands::cmd_regress(
                &cfg,
                &resolve_path(training, &p.training, "training")?,
                &resolve_path(targets, &p.targets, "targets")?,
                &resolve_path(out, &p.out, "out")?,
            )?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("UIBLE_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
