use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mcqa_eval::dataset::{load_dataset, subsample, write_dataset};
use mcqa_eval::metrics::EvalMode;
use mcqa_eval::studies::noise::synthetic_units;
use mcqa_eval::studies::pipeline::{check_outcome, generate_samples, load_items, open_gateways};
use mcqa_eval::studies::report::REPORT_JSON;
use mcqa_eval::studies::{
    collect, evaluate, noise_study, read_study_units, run_pipeline, threshold_sweep, write_study_units,
    MetricReport, NoiseStudyConfig, OutputLock, RunConfig, ScoreSet, StudyError, StudyUnit,
};

#[derive(Parser)]
#[command(name = "mcqa-eval", version, about = "Evaluate LLM confidence measures on multiple-choice data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, PathBuf), StudyError> {
        let cfg = RunConfig::load(&self.config)?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.dataset.name));
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize a dataset file, optionally subsampling it.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, requires = "seed")]
        subsample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample responses for every item into the record store.
    Generate(RunArgs),
    /// Score every item and write `scores.jsonl` and `units.json`.
    Score(RunArgs),
    /// Compute metrics from previously written scores.
    Evaluate(RunArgs),
    /// Rank methods at several correctness thresholds.
    SweepThreshold {
        #[command(flatten)]
        source: UnitSource,
        #[arg(long, value_delimiter = ',', required = true)]
        taus: Vec<f64>,
        /// Option-injection report whose ranking is appended as a row.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb correctness with logit-space noise and track ranking stability.
    NoiseStudy {
        #[command(flatten)]
        source: UnitSource,
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        /// Number of seeds, 0..N.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the Markdown report of a finished run.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score, evaluate and write every report file.
    Run(RunArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct UnitSource {
    /// JSONL study units.
    #[arg(long)]
    units: Option<PathBuf>,
    /// Directory of a baseline run with continuous correctness.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Generate this many synthetic units.
    #[arg(long)]
    synthetic: Option<usize>,
}

impl UnitSource {
    fn load(&self) -> Result<Vec<StudyUnit>, StudyError> {
        if let Some(p) = &self.units {
            return read_study_units(p);
        }
        if let Some(dir) = &self.run_dir {
            let set = ScoreSet::read(dir)?;
            if set.mode != EvalMode::Baseline {
                return Err(StudyError::Config(format!(
                    "{} is not a baseline run",
                    dir.display()
                )));
            }
            return Ok(StudyUnit::from_score_set(&set));
        }
        Ok(synthetic_units(self.synthetic.unwrap_or(0), 0))
    }
}

fn config_err(e: impl std::fmt::Display) -> StudyError {
    StudyError::Config(e.to_string())
}

fn write(path: &Path, content: &str) -> Result<(), StudyError> {
    fs::write(path, content)?;
    Ok(())
}

fn execute(cmd: Command) -> Result<(), StudyError> {
    match cmd {
        Command::Ingest {
            input,
            dataset,
            output,
            subsample: n,
            seed,
        } => {
            let mut items = load_dataset(&input, &dataset).map_err(config_err)?;
            if let (Some(n), Some(seed)) = (n, seed) {
                items = subsample(&items, n, seed).map_err(config_err)?;
            }
            write_dataset(&items, &output).map_err(|e| StudyError::Other(e.to_string()))?;
            println!("wrote {} items to {}", items.len(), output.display());
        }
        Command::Generate(args) => {
            let (cfg, _) = args.load()?;
            let items = load_items(&cfg)?;
            let (gateway, _) = open_gateways(&cfg)?;
            let done = generate_samples(&cfg, &items, &gateway)?;
            println!("sampled {done} of {} items", items.len());
            let failed = items.len() - done;
            if failed as f64 > cfg.max_failed_fraction * items.len() as f64 {
                return Err(StudyError::PartialFailure {
                    failed,
                    total: items.len(),
                    limit_percent: cfg.max_failed_fraction * 100.0,
                });
            }
        }
        Command::Score(args) => {
            let (cfg, out) = args.load()?;
            let items = load_items(&cfg)?;
            let (gateway, judge) = open_gateways(&cfg)?;
            let _lock = OutputLock::acquire(&out)?;
            let set = collect(&cfg, &items, &gateway, judge.as_ref())?;
            set.write(&out)?;
            println!("scored {} units into {}", set.scores.len(), out.display());
            check_outcome(&cfg, &set)?;
        }
        Command::Evaluate(args) => {
            let (cfg, out) = args.load()?;
            let _lock = OutputLock::acquire(&out)?;
            let set = ScoreSet::read(&out)?;
            let report = evaluate(&cfg, &set)?;
            report.write(&out)?;
            print!("{}", report.to_markdown());
            check_outcome(&cfg, &set)?;
        }
        Command::SweepThreshold {
            source,
            taus,
            reference,
            out,
        } => {
            if taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
                return Err(config_err("taus must be in [0, 1]"));
            }
            let units = source.load()?;
            let reference = match reference {
                Some(p) => {
                    let report = MetricReport::from_json(&fs::read_to_string(&p)?)?;
                    if report.mode != EvalMode::McqaEval {
                        return Err(config_err(format!("{} is not an option-injection report", p.display())));
                    }
                    report.blocks.first().map(|b| b.ranking.clone())
                }
                None => None,
            };
            let table = threshold_sweep(&units, &taus, reference);
            fs::create_dir_all(&out)?;
            let json = serde_json::to_string_pretty(&serde_json::to_value(&table).map_err(config_err)?)
                .map_err(config_err)?;
            write(&out.join("sweep.json"), &(json + "\n"))?;
            let md = table.to_markdown();
            write(&out.join("sweep.md"), &md)?;
            print!("{md}");
        }
        Command::NoiseStudy {
            source,
            sigmas,
            seeds,
            threshold,
            out,
        } => {
            let units = source.load()?;
            let mut cfg = NoiseStudyConfig {
                seeds: (0..seeds).collect(),
                threshold,
                ..Default::default()
            };
            if let Some(s) = sigmas {
                cfg.sigmas = s;
            }
            let report = noise_study(&units, &cfg)?;
            fs::create_dir_all(&out)?;
            if source.synthetic.is_some() {
                write_study_units(&units, &out.join("units.jsonl"))?;
            }
            write(&out.join("noise_rows.csv"), &report.rows_csv())?;
            let json = serde_json::to_string_pretty(&serde_json::to_value(&report).map_err(config_err)?)
                .map_err(config_err)?;
            write(&out.join("noise.json"), &(json + "\n"))?;
            let md = report.summary_markdown();
            write(&out.join("noise.md"), &md)?;
            print!("{md}");
        }
        Command::Report { run_dir } => {
            let report = MetricReport::from_json(&fs::read_to_string(run_dir.join(REPORT_JSON))?)?;
            print!("{}", report.to_markdown());
        }
        Command::Run(args) => {
            let (cfg, out) = args.load()?;
            let result = run_pipeline(&cfg, &out);
            if out.join(REPORT_JSON).exists() {
                if let Ok(text) = fs::read_to_string(out.join("report.md")) {
                    print!("{text}");
                }
            }
            result?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
