use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use landau_cli::config::Experiment;
use landau_cli::{parse_config, run_acceptance, run_experiment, CliError, OutputDir, RunConfig};

#[derive(Parser)]
#[command(name = "landau", version, about = "Landau damping experiments for screened Vlasov-Poisson")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower bound on |1 − K̃| over the closed lower half-plane.
    Penrose,
    /// Decay of the resolvent kernel G and its gradient.
    KernelDecay,
    /// Linearized density for Gaussian initial data.
    LinearEvolve,
    /// Picard iteration for the nonlinear d = 1 problem.
    NonlinearEvolve(NonlinearArgs),
    /// Characteristic deviations and straightening on a phase lattice.
    Characteristics,
    /// Run the acceptance criteria.
    Accept {
        /// Criterion ids to run; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Args)]
struct NonlinearArgs {
    #[arg(long)]
    max_picard: Option<usize>,
    #[arg(long)]
    picard_tol: Option<f64>,
    /// File name of the density table inside the output directory.
    #[arg(long)]
    out_density: Option<String>,
    /// File name of the bootstrap monitor report.
    #[arg(long)]
    out_monitor: Option<String>,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        config.output.dir = dir.display().to_string();
    }
    config.experiment = match &cli.command {
        Command::Penrose => Experiment::Penrose,
        Command::KernelDecay => Experiment::KernelDecay,
        Command::LinearEvolve => Experiment::LinearEvolve,
        Command::NonlinearEvolve(args) => {
            let s = &mut config.solver;
            s.max_picard = args.max_picard.unwrap_or(s.max_picard);
            s.picard_tol = args.picard_tol.unwrap_or(s.picard_tol);
            if let Some(name) = &args.out_density {
                config.output.density = name.clone();
            }
            if let Some(name) = &args.out_monitor {
                config.output.monitor = name.clone();
            }
            Experiment::NonlinearEvolve
        }
        Command::Characteristics => Experiment::Characteristics,
        Command::Accept { .. } => config.experiment,
    };
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let config = load(cli)?;
    let out = OutputDir::create(&config.output.dir)?;
    if let Command::Accept { only } = &cli.command {
        let outcomes = run_acceptance(config.seed, only, |o| println!("{}", o.line()));
        out.write_json("acceptance.json", &outcomes)?;
        let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id.to_string()).collect();
        return if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::Acceptance(format!("criteria {} failed", failed.join(", "))))
        };
    }
    let summary = run_experiment(&config, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    eprintln!("{} finished in {:.2} s, output in {}", summary.experiment, summary.seconds, out.root().display());
    if summary.pass {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("{} missed a decay target", summary.experiment)))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
