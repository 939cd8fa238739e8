use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chaoslab_core::harness::{self, load_scenario, Scenario, Subcommand, SEED_ENV};
use chaoslab_core::kernel::BrownianBundle;
use chaoslab_core::transport::{
    path_wasserstein_supnorm, wasserstein_1d, wasserstein_assignment, wasserstein_entropic, EmpiricalMeasure,
    PathCloud,
};
use chaoslab_core::{Error, Result};
use clap::{Args, Parser, ValueEnum};

#[derive(Parser)]
#[command(name = "chaoslab", version, about = "Backward particle systems and propagation-of-chaos studies")]
enum Cli {
    /// Mean of Y per grid node for one system of `study.n` particles.
    Simulate(RunArgs),
    /// Marginal W_p^p distance to the limit law versus n.
    RateStudy(RunArgs),
    /// Path-space W_{p,sup}^p distance versus n.
    SupStudy(RunArgs),
    /// Concentration probabilities P(W_p^p > eps) versus n.
    Tails(RunArgs),
    /// Particle versus limit process error (Y and Z parts).
    ProcessError(RunArgs),
    /// k-particle block distances against k times the single-particle bound.
    Blocks(RunArgs),
    /// Finite-particle PDE values against the master equation.
    PdeCompare(RunArgs),
    /// Exact versus entropic transport on one node.
    Transport(RunArgs),
    /// Print the resolved scenario and its hash.
    Validate(ScenarioArgs),
    /// Distance between two CSV point clouds.
    Distance(DistanceArgs),
    /// Dump the Brownian increments of a scenario run.
    DumpBundle(DumpArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Results root; output lands in `<out>/<scenario hash>/`.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    /// Sorted-sample formula, 1-D clouds only.
    Line,
    /// Exact optimal assignment.
    Exact,
    /// Sinkhorn plan cost.
    Entropic,
    /// Path-space distance with the sup ground metric.
    Sup,
}

#[derive(Args)]
struct DistanceArgs {
    /// One point per row; a non-numeric first row is treated as a header.
    a: PathBuf,
    b: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    metric: Metric,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Grid nodes per row for `sup`; each row holds `nodes * dim` values.
    #[arg(long, default_value_t = 1)]
    nodes: usize,
    #[arg(long, default_value_t = 0.05)]
    reg: f64,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Csv,
    Bin,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Particles per system; defaults to `study.n`.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 1)]
    systems: usize,
    #[arg(long, default_value_t = 0)]
    replication: u64,
    #[arg(long, value_enum, default_value = "csv")]
    format: DumpFormat,
    #[arg(long)]
    output: PathBuf,
}

fn scenario(args: &ScenarioArgs) -> Result<Scenario> {
    let mut s = load_scenario(&args.scenario)?;
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run(sub: Subcommand, args: RunArgs) -> Result<()> {
    let s = scenario(&args.scenario)?;
    let work = || harness::run(&s, sub, &args.out);
    let out = match args.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    println!("{}", out.csv.display());
    println!("{}", out.sidecar.display());
    Ok(())
}

fn read_rows(path: &Path) -> Result<(Vec<f64>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut values = Vec::new();
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let row: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match row {
            Ok(r) => r,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("{} line {}: {e}", path.display(), line + 1))),
        };
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse(format!(
                    "{} line {}: expected {w} columns, found {}",
                    path.display(),
                    line + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
    }
    match width {
        Some(w) => Ok((values, w)),
        None => Err(Error::Parse(format!("{}: no data rows", path.display()))),
    }
}

fn distance(args: DistanceArgs) -> Result<()> {
    let (a, wa) = read_rows(&args.a)?;
    let (b, wb) = read_rows(&args.b)?;
    if wa != wb {
        return Err(Error::Mismatch(format!("column counts differ ({wa} vs {wb})")));
    }
    let d = match args.metric {
        Metric::Line => {
            if wa != 1 {
                return Err(Error::Validation(format!("the line metric needs one column, found {wa}")));
            }
            wasserstein_1d(args.p, &a, &b)?
        }
        Metric::Exact => wasserstein_assignment(args.p, &EmpiricalMeasure::new(a, wa)?, &EmpiricalMeasure::new(b, wb)?)?,
        Metric::Entropic => {
            let e = wasserstein_entropic(
                args.p,
                &EmpiricalMeasure::new(a, wa)?,
                &EmpiricalMeasure::new(b, wb)?,
                args.reg,
                args.iters,
            )?;
            if !e.converged {
                eprintln!("warning: Sinkhorn stopped after {} iterations without converging", e.iterations);
            }
            e.distance
        }
        Metric::Sup => {
            if args.nodes == 0 || wa % args.nodes != 0 {
                return Err(Error::Validation(format!("{wa} columns do not split into {} nodes", args.nodes)));
            }
            let dim = wa / args.nodes;
            path_wasserstein_supnorm(args.p, &PathCloud::new(a, args.nodes, dim)?, &PathCloud::new(b, args.nodes, dim)?)?
        }
    };
    println!("{d}");
    Ok(())
}

fn dump(args: DumpArgs) -> Result<()> {
    let s = scenario(&args.scenario)?;
    let n = args.n.unwrap_or(s.study.n);
    let bundle = BrownianBundle::batched(s.seed, args.replication, n, args.systems, s.model.d, &s.time_grid()?)?;
    match args.format {
        DumpFormat::Csv => bundle.write_csv(&args.output)?,
        DumpFormat::Bin => bundle.write_binary(&args.output)?,
    }
    println!("{}", args.output.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli {
        Cli::Simulate(a) => run(Subcommand::Simulate, a),
        Cli::RateStudy(a) => run(Subcommand::RateStudy, a),
        Cli::SupStudy(a) => run(Subcommand::SupStudy, a),
        Cli::Tails(a) => run(Subcommand::Tails, a),
        Cli::ProcessError(a) => run(Subcommand::ProcessError, a),
        Cli::Blocks(a) => run(Subcommand::Blocks, a),
        Cli::PdeCompare(a) => run(Subcommand::PdeCompare, a),
        Cli::Transport(a) => run(Subcommand::Transport, a),
        Cli::Validate(a) => {
            let s = scenario(&a)?;
            println!("# hash = {}", s.hash());
            print!("{}", s.to_toml());
            Ok(())
        }
        Cli::Distance(a) => distance(a),
        Cli::DumpBundle(a) => dump(a),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            match e {
                Error::Validation(_) | Error::Parse(_) | Error::UnknownPreset { .. } | Error::Mismatch(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
