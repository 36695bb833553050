use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hybridcp::data::{self, icc_decomposition};
use hybridcp::pipeline::{
    run_experiment, sweep, sweep_csv, write_artifacts, DataSource, ExperimentConfig, FoldEntry, PipelineError, RunReport,
    SweepParam,
};

#[derive(Parser)]
#[command(name = "hybridcp", version, about = "Hybrid Bayesian-conformal prediction intervals for clustered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic dataset described by a config's [data.synthetic] table.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a CSV file and write a normalized copy, its schema and a summary.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated run of the configured methods.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Repeat a run over several values of one setting.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, gamma, epsilon, raw_sigma_scale, isotonic_holdout, seed or folds.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Report metrics even if a Bayesian fit misses the convergence gate.
    #[arg(long)]
    allow_unconverged: bool,
}

impl Overrides {
    fn apply(&self, config: &mut ExperimentConfig) -> Result<(), PipelineError> {
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(k) = self.folds {
            config.folds = k;
        }
        if let Some(a) = &self.alphas {
            config.alphas = a.clone();
        }
        if let Some(g) = self.gamma {
            config.gamma = g;
        }
        config.allow_unconverged |= self.allow_unconverged;
        config.validate()
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { config, out, seed } => {
            let config = ExperimentConfig::load(&config)?;
            let DataSource::Synthetic(mut synthetic) = config.data else {
                return Err(PipelineError::Config("generate needs a [data.synthetic] table".into()));
            };
            if let Some(s) = seed {
                synthetic.seed = s;
            }
            let dataset = data::generate_synthetic(&synthetic)?;
            write_dataset(&dataset, &out)
        }
        Command::Ingest { csv, schema, out } => {
            let schema = schema.map(data::Schema::load).transpose()?;
            let dataset = data::load_csv(&csv, schema.as_ref())?;
            write_dataset(&dataset, &out)
        }
        Command::Run { config, out, overrides } => {
            let mut config = ExperimentConfig::load(&config)?;
            overrides.apply(&mut config)?;
            let dir = out
                .or_else(|| config.output_dir.clone())
                .ok_or_else(|| PipelineError::Config("no output directory: pass --out or set output_dir".into()))?;
            let output = run_experiment(&config)?;
            write_artifacts(&output, &dir)?;
            print!("{}", output.report.to_text());
            fold_failures(&output.report)
        }
        Command::Report { input, format } => {
            let text = std::fs::read_to_string(input.join("report.json"))?;
            let report = RunReport::from_json(&text)?;
            match format {
                Format::Csv => print!("{}", report.to_csv()),
                Format::Text => print!("{}", report.to_text()),
            }
            Ok(())
        }
        Command::Sweep { config, param, values, out, overrides } => {
            let mut config = ExperimentConfig::load(&config)?;
            overrides.apply(&mut config)?;
            let param: SweepParam = param.parse()?;
            let runs = sweep(&config, param, &values)?;
            let table = sweep_csv(param, &runs);
            if let Some(dir) = out.or_else(|| config.output_dir.clone()) {
                for (value, run) in &runs {
                    write_artifacts(run, &dir.join(format!("{param}={value}")))?;
                }
                std::fs::write(dir.join("sweep.csv"), &table)?;
            }
            print!("{table}");
            runs.iter().try_for_each(|(_, r)| fold_failures(&r.report))
        }
    }
}

fn fold_failures(report: &RunReport) -> Result<(), PipelineError> {
    let failed: Vec<String> = report
        .folds
        .iter()
        .filter_map(|f| match f {
            FoldEntry::Failed { fold, error, .. } => Some(format!("fold {}: {error}", fold + 1)),
            FoldEntry::Completed(_) => None,
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Model(failed.join("; ")))
    }
}

fn write_dataset(dataset: &data::HierarchicalDataset, out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out)?;
    let file = std::fs::File::create(out.join("data.csv"))?;
    let schema = data::write_csv(dataset, std::io::BufWriter::new(file))?;
    std::fs::write(out.join("schema.toml"), schema.to_toml_string())?;
    let shares = icc_decomposition(dataset).ok();
    let summary = serde_json::json!({
        "rows": dataset.len(),
        "hospitals": dataset.n_hospitals(),
        "regions": dataset.regions().len(),
        "features": dataset.feature_names(),
        "variance_shares": shares,
    });
    std::fs::write(out.join("summary.json"), format!("{}\n", serde_json::to_string_pretty(&summary).expect("summary serializes")))?;
    println!(
        "{} rows, {} hospitals, {} regions written to {}",
        dataset.len(),
        dataset.n_hospitals(),
        dataset.regions().len(),
        out.display()
    );
    Ok(())
}
