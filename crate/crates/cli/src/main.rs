use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaptive_inference::estimators::{analyze, CovarianceKind};
use adaptive_inference::harness::{
    run_srd_comparison, run_study, write_outputs, SrdComparisonSpec, StudySpec,
};
use adaptive_inference::oracle::run_certification_suite;
use adaptive_inference::population::{
    generate_population, read_log_csv, read_population_csv, write_population_csv, DgpSpec,
};
use adaptive_inference::{Contrast, Error, ErrorClass};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_CERTIFICATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "adaptinf",
    version,
    about = "Design-based inference for adaptive experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo study (or an SRD/CRD comparison) from a JSON config.
    Simulate {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check every exact identity on the built-in toy instances.
    Certify {
        #[arg(long, short, default_value = "out")]
        out: PathBuf,
    },
    /// Estimate and build a confidence set from an experiment log CSV.
    Analyze {
        #[arg(long, short)]
        log: PathBuf,
        /// Contrast rows as JSON, e.g. `[[-1,1]]`.
        #[arg(long, default_value = "[[-1,1]]")]
        contrast: String,
        /// Covariance estimator; defaults to `vtilde_aipw_b` for blocked logs
        /// and `vtilde_aipw` otherwise.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Potential-outcome table for sharper diagnostics.
        #[arg(long)]
        population: Option<PathBuf>,
        /// Write the report here instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Write one realization of a data-generating process to CSV.
    GenPopulation {
        /// JSON document `{"dgp": {...}, "seed": n}`.
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Cap at 500 generated units and 300 replications.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Deserialize)]
struct PopulationConfig {
    dgp: DgpSpec,
    #[serde(default)]
    seed: u64,
}

enum Failure {
    Error(Error),
    Certification(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn simulate(config: &Path, out: &Path, o: &Overrides) -> Result<(), Error> {
    let value: serde_json::Value = read_json(config)?;
    let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", config.display()));
    if value.get("srd").is_some() {
        let mut spec: SrdComparisonSpec = serde_json::from_value(value).map_err(bad)?;
        if o.quick {
            spec.replications = spec
                .replications
                .min(adaptive_inference::harness::QUICK_REPLICATIONS);
        }
        spec.base_seed = o.seed.unwrap_or(spec.base_seed);
        spec.replications = o.replications.unwrap_or(spec.replications);
        spec.parallelism = o.parallelism.unwrap_or(spec.parallelism);
        let cmp = run_srd_comparison(&spec)?;
        write_outputs(&cmp.combined(), out)?;
        write_text(&out.join("comparison.json"), &to_json(&cmp))?;
        eprintln!(
            "rmse reduction {:.1}%, length reduction {:.1}%",
            100.0 * cmp.rmse_reduction,
            100.0 * cmp.length_reduction
        );
        return Ok(());
    }
    let mut spec: StudySpec = serde_json::from_value(value).map_err(bad)?;
    if o.quick {
        spec = spec.quick();
    }
    spec.base_seed = o.seed.unwrap_or(spec.base_seed);
    spec.replications = o.replications.unwrap_or(spec.replications);
    spec.parallelism = o.parallelism.unwrap_or(spec.parallelism);
    let result = run_study(&spec)?;
    write_outputs(&result, out)
}

fn parse_kind(kind: &str) -> Result<CovarianceKind, Error> {
    serde_json::from_value(serde_json::Value::String(kind.into())).map_err(|_| {
        let names: Vec<String> = CovarianceKind::ALL
            .iter()
            .map(|k| {
                serde_json::to_value(k)
                    .expect("enum serializes")
                    .as_str()
                    .unwrap_or_default()
                    .to_string()
            })
            .collect();
        Error::Config(format!(
            "unknown covariance kind `{kind}` (expected one of {})",
            names.join(", ")
        ))
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            overrides,
        } => simulate(&config, &out, &overrides)?,
        Command::Certify { out } => {
            let report = run_certification_suite()?;
            write_text(&out.join("report.json"), &to_json(&report))?;
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Failure::Certification(failed));
            }
        }
        Command::Analyze {
            log,
            contrast,
            kind,
            alpha,
            population,
            out,
        } => {
            let log = read_log_csv(&log)?;
            let contrast: Contrast = serde_json::from_str(&contrast)
                .map_err(|e| Error::Config(format!("contrast `{contrast}`: {e}")))?;
            let kind = match kind {
                Some(k) => parse_kind(&k)?,
                None if log
                    .blocks()
                    .is_some_and(|b| b.num_blocks() < log.num_units()) =>
                {
                    CovarianceKind::VtildeAipwB
                }
                None => CovarianceKind::VtildeAipw,
            };
            let population = population.map(read_population_csv).transpose()?;
            let analysis = analyze(&log, &contrast, kind, alpha, population.as_ref())?;
            let json = to_json(&analysis.report);
            match out {
                Some(path) => write_text(&path, &json)?,
                None => print!("{json}"),
            }
        }
        Command::GenPopulation { config, out, seed } => {
            let cfg: PopulationConfig = read_json(&config)?;
            let population = generate_population(&cfg.dgp, seed.unwrap_or(cfg.seed))?;
            write_population_csv(&population, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Certification(n)) => {
            eprintln!("error: {n} identity checks failed");
            ExitCode::from(EXIT_CERTIFICATION)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            })
        }
    }
}
