use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use jumpldp::acceptance::{run_all, Budget};
use jumpldp::ldp::SamplingPlan;
use jumpldp::process::{ModelFile, ProbMeasure, ProcessSpec, DEFAULT_TOL};
use jumpldp::report::{
    decay_csv, dirac_csv, laplace_csv, oracle_csv, parse_target, rate_csv, simulate_csv, tilt_csv,
    validate_model, validation_csv, Descriptor,
};
use jumpldp::sim::SimConfig;

mod manifest;

use manifest::{InputDigest, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "jumpldp", version, about = "Empirical-measure large deviations for reversible jump processes")]
struct Cli {
    /// Worker threads for sampling commands. Output does not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// Write the CSV here (plus `<FILE>.manifest.json`) instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Sampling {
    /// Comma-separated time horizons.
    #[arg(long, value_delimiter = ',', required = true)]
    horizons: Vec<f64>,
    /// Paths per horizon and method.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Master seed (required).
    #[arg(long)]
    seed: Option<u64>,
    /// Start state of every path.
    #[arg(long, default_value_t = 0)]
    start: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a model file and report each condition.
    Validate {
        model: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_steps: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        #[command(flatten)]
        output: Output,
    },
    /// Evaluate the rate function at a target measure.
    Rate {
        model: PathBuf,
        target: PathBuf,
        /// Also evaluate the variational form and report the gap.
        #[arg(long)]
        oracle: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Feynman-Kac values of a linear functional from the generator.
    Oracle {
        model: PathBuf,
        functional: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Build the tilted dynamics for a target measure.
    Tilt {
        model: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate paths of the original or tilted process.
    Simulate {
        model: PathBuf,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Master seed (required).
        #[arg(long)]
        seed: Option<u64>,
        /// Follow the tilt for this target measure.
        #[arg(long, value_name = "TARGET")]
        tilt: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        start: usize,
        #[arg(long, default_value_t = jumpldp::sim::DEFAULT_JUMP_BUDGET)]
        jump_budget: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Estimate a Laplace functional naively and by importance sampling.
    Laplace {
        model: PathBuf,
        functional: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
        #[command(flatten)]
        output: Output,
    },
    /// Estimate the decay rate of an event naively and by importance sampling.
    Decay {
        model: PathBuf,
        event: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
        #[command(flatten)]
        output: Output,
    },
    /// Rate and cost table for the Dirac approximations on k = 2..=n cells.
    DiracExample {
        n: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Directory with the model fixtures to validate first.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Use the full budgets instead of the reduced ones.
        #[arg(long)]
        full: bool,
    },
}

#[derive(Debug)]
enum CliError {
    Io(String),
    Usage(String),
    Core(jumpldp::Error),
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 3,
            CliError::Core(jumpldp::Error::NonConvergence { .. })
            | CliError::Core(jumpldp::Error::EigenFailure(_)) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<jumpldp::Error> for CliError {
    fn from(e: jumpldp::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Reads input files and remembers their digests for the manifest.
#[derive(Default)]
struct Inputs {
    digests: Vec<InputDigest>,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.digests.push(InputDigest::of(path, &bytes));
        String::from_utf8(bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    fn model(&mut self, path: &Path) -> CliResult<ProcessSpec> {
        let text = self.read(path)?;
        Ok(ModelFile::from_json(&text)?.validate(DEFAULT_TOL)?)
    }

    fn target(&mut self, path: &Path) -> CliResult<ProbMeasure> {
        let text = self.read(path)?;
        Ok(parse_target(&text)?)
    }

    fn descriptor(&mut self, path: &Path) -> CliResult<Descriptor> {
        let text = self.read(path)?;
        Ok(Descriptor::from_json(&text)?)
    }
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Usage("--seed is required for stochastic commands".into()))
}

fn plan(sampling: &Sampling, workers: usize) -> CliResult<SamplingPlan> {
    Ok(SamplingPlan {
        horizons: sampling.horizons.clone(),
        samples: sampling.samples,
        seed: require_seed(sampling.seed)?,
        start: sampling.start,
        workers,
    })
}

fn emit(
    command: &str,
    csv: &str,
    output: &Output,
    inputs: Inputs,
    seed: Option<u64>,
    started: Instant,
) -> CliResult<()> {
    match &output.out {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(path) => {
            fs::write(path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let manifest = RunManifest::new(command, inputs.digests, seed, started.elapsed(), vec![path.clone()]);
            let mpath = manifest::manifest_path(path);
            fs::write(&mpath, manifest.to_json())
                .map_err(|e| CliError::Io(format!("{}: {e}", mpath.display())))?;
            info!("wrote {} and {}", path.display(), mpath.display());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let workers = cli.workers.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    if workers == 0 {
        return Err(CliError::Usage("--workers must be >= 1".into()));
    }
    let started = Instant::now();
    let mut inputs = Inputs::default();
    match cli.command {
        Command::Validate {
            model,
            max_steps,
            tol,
            output,
        } => {
            let text = inputs.read(&model)?;
            let file = ModelFile::from_json(&text)?;
            let report = validate_model(&file, tol, max_steps);
            emit("validate", &validation_csv(&report)?, &output, inputs, None, started)?;
            match report.first_failure {
                Some((name, e)) => Err(CliError::Failed(format!("{name} failed: {e}"))),
                None => Ok(()),
            }
        }
        Command::Rate {
            model,
            target,
            oracle,
            output,
        } => {
            let spec = inputs.model(&model)?;
            let eta = inputs.target(&target)?;
            let csv = rate_csv(&spec, &eta, oracle)?;
            emit("rate", &csv, &output, inputs, None, started)
        }
        Command::Oracle {
            model,
            functional,
            horizons,
            start,
            output,
        } => {
            let spec = inputs.model(&model)?;
            let f = match inputs.descriptor(&functional)? {
                Descriptor::Linear(f) => f,
                _ => return Err(CliError::Usage("oracle needs a linear functional {f}".into())),
            };
            let csv = oracle_csv(&spec, &f, &horizons, start)?;
            emit("oracle", &csv, &output, inputs, None, started)
        }
        Command::Tilt {
            model,
            target,
            output,
        } => {
            let spec = inputs.model(&model)?;
            let eta = inputs.target(&target)?;
            emit("tilt", &tilt_csv(&spec, &eta)?, &output, inputs, None, started)
        }
        Command::Simulate {
            model,
            horizon,
            count,
            seed,
            tilt,
            start,
            jump_budget,
            output,
        } => {
            let seed = require_seed(seed)?;
            let spec = inputs.model(&model)?;
            let target = tilt.map(|p| inputs.target(&p)).transpose()?;
            let config = SimConfig {
                horizon,
                start,
                jump_budget,
            };
            info!("simulating {count} paths to T={horizon} on {workers} workers");
            let csv = simulate_csv(&spec, target.as_ref(), &config, count, seed, workers)?;
            emit("simulate", &csv, &output, inputs, Some(seed), started)
        }
        Command::Laplace {
            model,
            functional,
            sampling,
            output,
        } => {
            let plan = plan(&sampling, workers)?;
            let spec = inputs.model(&model)?;
            let functional = inputs.descriptor(&functional)?.to_functional(spec.n());
            let csv = laplace_csv(&spec, &functional, &plan)?;
            emit("laplace", &csv, &output, inputs, Some(plan.seed), started)
        }
        Command::Decay {
            model,
            event,
            sampling,
            output,
        } => {
            let plan = plan(&sampling, workers)?;
            let spec = inputs.model(&model)?;
            let event = inputs.descriptor(&event)?.to_event()?;
            let csv = decay_csv(&spec, &event, &plan)?;
            emit("decay", &csv, &output, inputs, Some(plan.seed), started)
        }
        Command::DiracExample { n, output } => {
            emit("dirac-example", &dirac_csv(n)?, &output, inputs, None, started)
        }
        Command::Selftest { fixtures, full } => selftest(fixtures.as_deref(), full, workers),
    }
}

/// Model fixtures and the first condition each must fail, if any.
const FIXTURES: [(&str, Option<&str>); 4] = [
    ("uniform4.json", None),
    ("two_state.json", Some("minorization")),
    ("swap.json", Some("minorization")),
    ("bad_row_sum.json", Some("row_sums")),
];

fn check_fixtures(dir: &Path) -> CliResult<()> {
    if !dir.is_dir() {
        return Err(CliError::Failed(format!(
            "I/O error: fixture directory {} not found",
            dir.display()
        )));
    }
    for (name, expected) in FIXTURES {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Failed(format!("I/O error: {}: {e}", path.display())))?;
        let file = ModelFile::from_json(&text)
            .map_err(|e| CliError::Failed(format!("fixture {name}: {e}")))?;
        let report = validate_model(&file, DEFAULT_TOL, 64);
        let got = report.first_failure.as_ref().map(|f| f.0);
        let ok = got == expected;
        println!(
            "{} fixture {name}: first failing condition {}",
            if ok { "PASS" } else { "FAIL" },
            got.unwrap_or("none")
        );
        if !ok {
            return Err(CliError::Failed(format!(
                "fixture {name}: expected {}, got {}",
                expected.unwrap_or("none"),
                got.unwrap_or("none")
            )));
        }
    }
    Ok(())
}

fn selftest(fixtures: Option<&Path>, full: bool, workers: usize) -> CliResult<()> {
    if let Some(dir) = fixtures {
        check_fixtures(dir)?;
    }
    let mut budget = if full { Budget::full() } else { Budget::reduced() };
    budget.workers = workers;
    let results = run_all(&budget);
    let mut failed = Vec::new();
    for r in &results {
        println!("{}", r.line());
        if !r.passed || r.elapsed >= r.limit {
            failed.push(r.id.to_string());
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", results.len());
        Ok(())
    } else {
        Err(CliError::Failed(format!("failing criteria: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JUMPLDP_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
