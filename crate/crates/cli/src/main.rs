use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use propmech_core::game::RunTrace;
use propmech_core::harness::{
    generate, property_suite, read_json, run_experiment, write_json, ExperimentConfig, FamilyMix, InitSpec,
    InstanceSource, Scenario,
};
use propmech_core::{solve, verify_epsilon_ne, GameVariant, Instance, MessageProfile, Problem, VerifyOptions};

#[derive(Parser)]
#[command(name = "propmech", version, about = "Proportional allocation with Nash-implementing taxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the centralized problem and print the solution.
    Solve {
        instance: PathBuf,
        /// Target KKT residual; exceeding it is a failure.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run best-response dynamics and compare the end point with the optimum.
    Simulate(SimulateArgs),
    /// Check whether a message profile is an epsilon-Nash equilibrium.
    Verify {
        instance: PathBuf,
        profile: PathBuf,
        #[arg(long, value_enum, default_value_t = Variant::Base)]
        variant: Variant,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 200)]
        deviations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the instance's slackness weight.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate an instance.
    Gen {
        #[command(subcommand)]
        scenario: GenScenario,
    },
    /// Run a named property suite.
    Prop {
        suite: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run an experiment configuration and write its report bundle.
    Run {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Variant::Base)]
    variant: Variant,
    /// `default`, `candidate`, or a profile JSON file.
    #[arg(long, default_value = "default")]
    init: String,
    #[arg(long, default_value_t = 100_000)]
    max_rounds: usize,
    /// Stop once no message moves by more than this.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Write one CSV row per round.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Override the instance's slackness weight.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenScenario {
    Unicast {
        #[arg(long, default_value_t = 4)]
        agents: usize,
        #[arg(long, default_value_t = 2)]
        links: usize,
        #[arg(long, default_value_t = 2)]
        min_per_link: usize,
        /// Unit weights and caps with `ln(1 + x)` valuations.
        #[arg(long)]
        unit: bool,
        #[command(flatten)]
        common: GenCommon,
    },
    PublicGood {
        #[arg(long, default_value_t = 3)]
        agents: usize,
        #[arg(long, default_value_t = 2.5)]
        cap: f64,
        #[command(flatten)]
        common: GenCommon,
    },
    LocalPublicGoods {
        #[arg(long, default_value_t = 2)]
        groups: usize,
        #[arg(long, default_value_t = 2)]
        min_size: usize,
        #[arg(long, default_value_t = 4)]
        max_size: usize,
        #[command(flatten)]
        common: GenCommon,
    },
}

#[derive(Args)]
struct GenCommon {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Family::Mixed)]
    families: Family,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Base,
    SbbNe,
    SbbOffeq,
}

impl From<Variant> for GameVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Base => GameVariant::Base,
            Variant::SbbNe => GameVariant::SbbNe,
            Variant::SbbOffeq => GameVariant::SbbOffEq,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Mixed,
    LogShift,
    Power,
    QuadCap,
}

impl From<Family> for FamilyMix {
    fn from(f: Family) -> Self {
        match f {
            Family::Mixed => FamilyMix::Mixed,
            Family::LogShift => FamilyMix::LogShift,
            Family::Power => FamilyMix::Power,
            Family::QuadCap => FamilyMix::QuadCap,
        }
    }
}

/// Exit status of a command that ran to completion.
enum Verdict {
    Pass,
    Fail(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail(why)) => {
            eprintln!("FAIL: {why}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("MECH_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("MECH_THREADS must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn emit<T: Serialize>(value: &T, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(path) => write_json(path, value).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

/// Reads an instance; with no `eta` in the file the variant's default applies.
fn load(path: &Path, variant: GameVariant, eta: Option<f64>) -> anyhow::Result<Instance> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut instance: Instance =
        serde_json::from_value(raw.clone()).with_context(|| format!("parsing {}", path.display()))?;
    instance.eta = match (eta, raw.get("eta")) {
        (Some(e), _) => e,
        (None, Some(_)) => instance.eta,
        (None, None) => variant.default_eta(),
    };
    Ok(instance)
}

fn run(command: Command) -> anyhow::Result<Verdict> {
    match command {
        Command::Solve { instance, tol, output } => {
            let problem = Problem::new(load(&instance, GameVariant::Base, None)?)?;
            let solution = solve(&problem, tol.min(1e-10))?;
            emit(&solution, output.as_deref())?;
            let worst = solution.residuals.max();
            Ok(if worst <= tol {
                Verdict::Pass
            } else {
                Verdict::Fail(format!("KKT residual {worst:e} exceeds {tol:e}"))
            })
        }
        Command::Simulate(args) => simulate(args),
        Command::Verify {
            instance,
            profile,
            variant,
            eps,
            deviations,
            seed,
            eta,
            output,
        } => {
            let variant = variant.into();
            let problem = Problem::new(load(&instance, variant, eta)?)?;
            let profile: MessageProfile =
                read_json(&profile).with_context(|| format!("reading {}", profile.display()))?;
            let report = verify_epsilon_ne(&problem, variant, &profile, &VerifyOptions { eps, deviations, seed })?;
            emit(&report, output.as_deref())?;
            Ok(if report.passed {
                Verdict::Pass
            } else {
                Verdict::Fail(format!("deviation gain {:e} exceeds {eps:e}", report.max_gain))
            })
        }
        Command::Gen { scenario } => {
            let (scenario, common) = match scenario {
                GenScenario::Unicast {
                    agents,
                    links,
                    min_per_link,
                    unit,
                    common,
                } => (
                    Scenario::Unicast {
                        agents,
                        links,
                        min_per_link,
                        unit,
                        families: common.families.into(),
                        eta: common.eta,
                    },
                    common,
                ),
                GenScenario::PublicGood { agents, cap, common } => (
                    Scenario::PublicGood {
                        agents,
                        cap,
                        families: common.families.into(),
                        eta: common.eta,
                    },
                    common,
                ),
                GenScenario::LocalPublicGoods {
                    groups,
                    min_size,
                    max_size,
                    common,
                } => (
                    Scenario::LocalPublicGoods {
                        groups,
                        min_size,
                        max_size,
                        families: common.families.into(),
                        eta: common.eta,
                    },
                    common,
                ),
            };
            let generated = generate(&scenario, common.seed)?;
            if generated.resamples > 0 {
                eprintln!("resampled {} times", generated.resamples);
            }
            emit(&generated.instance, common.output.as_deref())?;
            Ok(Verdict::Pass)
        }
        Command::Prop {
            suite,
            samples,
            seed,
            output,
        } => {
            let report = property_suite(&suite, samples, seed)?;
            emit(&report, output.as_deref())?;
            Ok(if report.passed {
                Verdict::Pass
            } else {
                Verdict::Fail(format!(
                    "{}: max violation {:e} exceeds {:e}",
                    report.name, report.max_violation, report.tolerance
                ))
            })
        }
        Command::Run { config, output } => {
            let config: ExperimentConfig =
                read_json(&config).with_context(|| format!("reading {}", config.display()))?;
            let bundle = run_experiment(&config)?;
            emit(&bundle, output.as_deref())?;
            Ok(verdict_of(&bundle.reports))
        }
    }
}

fn verdict_of(reports: &[propmech_core::harness::RunReport]) -> Verdict {
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures.iter().map(move |f| format!("{}: {f}", r.label)))
        .collect();
    if failures.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

fn simulate(args: SimulateArgs) -> anyhow::Result<Verdict> {
    let variant: GameVariant = args.variant.into();
    let instance = load(&args.instance, variant, args.eta)?;
    let init = match args.init.as_str() {
        "default" => InitSpec::Default,
        "candidate" => InitSpec::CandidateNe,
        path => {
            let profile: MessageProfile = read_json(path).with_context(|| format!("reading {path}"))?;
            InitSpec::Profile { profile }
        }
    };
    let mut config = ExperimentConfig::new(
        args.instance.display().to_string(),
        InstanceSource::Inline { instance },
        variant,
    );
    config.init = init;
    config.dynamics.max_rounds = args.max_rounds;
    config.dynamics.tol = args.tol;
    config.verify.seed = args.seed;
    config.include_trace = args.trace.is_some();
    let bundle = run_experiment(&config)?;
    let report = bundle.reports.first().context("experiment produced no report")?;
    if let (Some(path), Some(snapshots)) = (&args.trace, &report.trace) {
        let trace = RunTrace {
            variant,
            rounds: report.dynamics.rounds,
            converged: report.dynamics.converged,
            final_change: report.dynamics.final_change,
            final_profile: report.final_profile.clone(),
            snapshots: snapshots.clone(),
        };
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        trace.write_csv(BufWriter::new(file))?;
    }
    emit(report, args.output.as_deref())?;
    Ok(verdict_of(&bundle.reports))
}
