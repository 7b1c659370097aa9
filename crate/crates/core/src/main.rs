use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use entksa::acceptance::{self, CriterionResult};
use entksa::experiment::{run_entropy_experiment, run_plan, run_table1, ExperimentPlan, PlanSpec, SweepSpec};
use entksa::Error;

/// Kinetic simulated annealing with entropy-controlled cooling.
#[derive(Debug, Parser)]
#[command(name = "entksa", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML plan file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Algorithm: ksa, entksa-k1 or entksa-kq.
    #[arg(long)]
    algo: Option<String>,
    /// Override one key, e.g. `--set cooling.alpha=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One run of the top-level configuration.
    Run(Common),
    /// Every variant of the sweep, times `n_repeats`.
    Sweep(Common),
    /// Success-rate table over particle counts, gains and final times.
    Table1(Common),
    /// Entropy decay for each gain against the logarithmic baseline.
    Entropy(Common),
    /// Mean-field checks, with PDE snapshots written to the output directory.
    MeanfieldValidate(Common),
    /// The full acceptance suite.
    Check,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn load(common: &Common) -> Result<PlanSpec, Error> {
    let text = match &common.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| Error::Config {
                key: "--config".into(),
                message: format!("{}: {e}", path.display()),
            })?,
        None => String::new(),
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(algo) = &common.algo {
        overrides.push(format!("algorithm=\"{algo}\""));
    }
    PlanSpec::parse(&text, &overrides)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

fn report(results: &[CriterionResult]) -> u8 {
    for r in results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        0
    } else {
        EXIT_CHECK
    }
}

fn execute(command: Command) -> Result<u8, Error> {
    match command {
        Command::Run(common) => {
            let mut spec = load(&common)?;
            spec.sweep = SweepSpec::default();
            spec.n_repeats = 1;
            let plan = ExperimentPlan::from_spec(spec)?;
            print_manifest(&plan, &common.out)
        }
        Command::Sweep(common) => {
            let plan = ExperimentPlan::from_spec(load(&common)?)?;
            print_manifest(&plan, &common.out)
        }
        Command::Table1(common) => {
            let spec = load(&common)?;
            let table = run_table1(&spec)?;
            fs::create_dir_all(&common.out)?;
            table.write_csv(BufWriter::new(File::create(common.out.join("table1.csv"))?))?;
            write_json(&common.out.join("table1.json"), &table)?;
            for c in &table.cells {
                println!(
                    "T = {:>5}  N = {:>4}  alpha = {:<5}  N_ave = {:.4} +- {:.4}",
                    c.t_final, c.n_particles, c.alpha, c.n_ave, c.std_err
                );
            }
            Ok(0)
        }
        Command::Entropy(common) => {
            let spec = load(&common)?;
            let summary = run_entropy_experiment(&spec, Some(&common.out))?;
            for r in &summary.runs {
                let half = r.half_time.map_or("never".to_string(), |t| format!("{t:.4}"));
                println!(
                    "{:<20} H0 = {:.4}  half-time = {half}  I_F >= 0 on {:.0}% of records",
                    r.label,
                    r.h0,
                    100.0 * r.i_f_nonnegative_fraction
                );
            }
            Ok(0)
        }
        Command::MeanfieldValidate(common) => {
            let traj = acceptance::mean_field_reference(1000)?;
            fs::create_dir_all(&common.out)?;
            for (index, f) in &traj.snapshots {
                f.write_csv(BufWriter::new(File::create(common.out.join(format!("pde_snapshot_{index}.csv")))?))?;
            }
            write_json(&common.out.join("pde_records.json"), &traj.records)?;
            Ok(report(&[acceptance::criterion_4(), acceptance::criterion_9()]))
        }
        Command::Check => Ok(report(&acceptance::run_all())),
    }
}

fn print_manifest(plan: &ExperimentPlan, out: &Path) -> Result<u8, Error> {
    let manifest = run_plan(plan, out)?;
    for v in &manifest.variants {
        println!("{}", out.join(&v.dir).display());
    }
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
