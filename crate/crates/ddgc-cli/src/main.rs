//! Command-line front end: runs experiments, compares algorithms, dumps
//! built-in MDPs, and queries the brute-force mixture oracle.
//!
//! Exit codes: 0 ok, 1 config or environment-load error, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddgc::error::Error;
use ddgc::exact::{brute_force_optimal_mixture, exact_d_mixture};
use ddgc::harness::{
    compare_algorithms, resolve_environment, run_experiment, summary_csv, write_outputs,
    EnvKind, EnvironmentSpec, ExperimentConfig, ResolvedEnv,
};

#[derive(Parser)]
#[command(name = "ddgc", about = "Goal-coverage policy mixture experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write metric files.
    Run(RunArgs),
    /// Run several configs and write a normalized comparison table.
    Compare(CompareArgs),
    /// Export a built-in environment as an MDP definition file.
    DumpMdp(DumpArgs),
    /// Brute-force optimal mixture value of a discrete environment.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Overrides the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Worker threads for per-seed parallelism (default: rayon's choice).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Experiment configs; repeat the flag once per algorithm.
    #[arg(long, required = true)]
    config: Vec<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    /// Built-in name: figure1 | discounting_conflict | dynamics_conflict.
    #[arg(long)]
    name: String,
    /// Output path of the MDP definition file.
    #[arg(long)]
    out: PathBuf,
    /// Optional discount override.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    /// Built-in environment name.
    #[arg(long)]
    name: Option<String>,
    /// MDP definition file.
    #[arg(long)]
    mdp_file: Option<PathBuf>,
    /// Duality-gap tolerance of the oracle.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
    /// Optional discount override.
    #[arg(long)]
    gamma: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify(&err))
        }
    }
}

/// 1 for configuration mistakes, 2 for runtime failures.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::ConfigParse(_)
            | Error::InvalidConfig(_)
            | Error::EnvironmentLoad(_)
            | Error::Io(_),
        ) => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Compare(args) => compare(args),
        Command::DumpMdp(args) => dump_mdp(args),
        Command::Oracle(args) => oracle(args),
    }
}

fn set_parallelism(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    set_parallelism(args.parallelism);
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = args.output_dir {
        config.output_dir = Some(dir);
    }
    if let Some(seeds) = args.seeds {
        config.seeds = seeds;
    }
    let output_dir = config
        .output_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory configured".into()))?;
    let started = std::time::Instant::now();
    let output = run_experiment(&config)?;
    let files = write_outputs(&config, &output, &output_dir)?;
    eprintln!(
        "ran {} over {} seed(s) in {:.2}s",
        config.algorithm.as_str(),
        config.seeds.len(),
        started.elapsed().as_secs_f64()
    );
    for file in files {
        println!("{}", file.display());
    }
    Ok(())
}

fn compare(args: CompareArgs) -> anyhow::Result<()> {
    set_parallelism(args.parallelism);
    let configs = args
        .config
        .iter()
        .map(|p| ExperimentConfig::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = compare_algorithms(&configs)?;
    let table = summary_csv(&rows);
    match args.output_dir {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            let path = dir.join("summary.csv");
            std::fs::write(&path, table)?;
            println!("{}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn dump_mdp(args: DumpArgs) -> anyhow::Result<()> {
    let spec = EnvironmentSpec {
        kind: EnvKind::Builtin,
        name: Some(args.name.clone()),
        path: None,
        gamma: args.gamma,
        point_mass: None,
    };
    match resolve_environment(&spec)? {
        ResolvedEnv::Discrete(mdp) => {
            mdp.save_toml(&args.out)?;
            println!("{}", args.out.display());
            Ok(())
        }
        ResolvedEnv::Continuous(_) => Err(Error::InvalidConfig(
            "only discrete environments export to the MDP file format".into(),
        )
        .into()),
    }
}

fn oracle(args: OracleArgs) -> anyhow::Result<()> {
    let spec = EnvironmentSpec {
        kind: if args.name.is_some() { EnvKind::Builtin } else { EnvKind::MdpFile },
        name: args.name.clone(),
        path: args.mdp_file.clone(),
        gamma: args.gamma,
        point_mass: None,
    };
    let ResolvedEnv::Discrete(mdp) = resolve_environment(&spec)? else {
        return Err(Error::InvalidConfig("oracle needs a discrete environment".into()).into());
    };
    let (mixture, f_star) = brute_force_optimal_mixture(&mdp, args.tolerance)?;
    let d = exact_d_mixture(&mdp, &mixture)?;
    println!("f_star,{f_star:.12e}");
    println!("support_size,{}", mixture.num_components());
    for (i, &g) in mdp.goal_states().iter().enumerate() {
        let _ = i;
        println!("goal_mass,{g},{:.12e}", d.probs()[g]);
    }
    Ok(())
}
