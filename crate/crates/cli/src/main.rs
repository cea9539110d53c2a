//! `phenomap` command line: generate a cohort, run the LLM pipeline or the
//! structured baseline, and score decision files.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use phenomap::config::{ConfigError, PipelineConfig};
use phenomap::corpus::{
    generate_cohort, read_labels, write_corpus, CohortSpec, Corpus, CorpusError, Split,
};
use phenomap::decisions::{
    read_run, write_records, DecisionFileError, ExclusionMode, RunDecisions, RunInfo,
};
use phenomap::evaluation::{compare_report, render_grid, render_table, EvalError, GoldLabel};
use phenomap::experiment::{
    gold_labels, run_llm, run_structured, select_patients, ExperimentError,
};
use phenomap::llm_client::{BackendError, ClientStats};
use phenomap::mapreduce::AggregationMethod;
use phenomap::prompting::Design;

#[derive(Parser)]
#[command(
    name = "phenomap",
    version,
    about = "Phenotyping from clinical notes with retrieval + LLM MapReduce"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set backend.max_concurrency=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        Ok(match &self.config {
            Some(p) => PipelineConfig::load(p, &self.overrides)?,
            None => PipelineConfig::from_toml_str("", &self.overrides)?,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort (notes.jsonl, events.jsonl, labels.csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_patients: Option<usize>,
        #[arg(long)]
        case_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the LLM pipeline for one (prompt, aggregation, exclusion) setting.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        prompt: Option<Design>,
        #[arg(long)]
        aggregation: Option<AggregationMethod>,
        #[arg(long)]
        exclusion: Option<ExclusionMode>,
        /// Decision file; defaults to `<output_dir>/decisions-<run>.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip patients already recorded in the decision file.
        #[arg(long)]
        resume: bool,
    },
    /// Run the structured-code baseline.
    Baseline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the baseline and every grid cell, then write a report.
    Grid {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        resume: bool,
    },
    /// Score decision files against gold labels.
    Eval {
        /// Decision files (one run each).
        #[arg(required = true)]
        decisions: Vec<PathBuf>,
        /// Label file; when omitted the labels of the configured corpus are used.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Also write the JSON report here.
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the effective configuration.
    ShowConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Grid,
    Json,
}

#[derive(Debug)]
struct BackendUnavailable(ClientStats);

impl std::fmt::Display for BackendUnavailable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "every one of {} backend calls failed", self.0.calls)
    }
}

impl std::error::Error for BackendUnavailable {}

/// 2: configuration or input validation, 3: file I/O, 4: backend.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<BackendUnavailable>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<BackendError>() {
            return backend_code(e);
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
        match cause.downcast_ref::<ConfigError>() {
            Some(ConfigError::Io { .. }) => return 3,
            Some(ConfigError::Backend(e)) => return backend_code(e),
            Some(ConfigError::Corpus(e)) => return corpus_code(e),
            Some(_) => return 2,
            None => {}
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return corpus_code(e);
        }
        match cause.downcast_ref::<DecisionFileError>() {
            Some(DecisionFileError::Io { .. }) => return 3,
            Some(_) => return 2,
            None => {}
        }
        match cause.downcast_ref::<ExperimentError>() {
            Some(ExperimentError::Io { .. }) => return 3,
            Some(ExperimentError::DecisionFile(DecisionFileError::Io { .. })) => return 3,
            Some(_) => return 2,
            None => {}
        }
        if cause.is::<EvalError>() {
            return 2;
        }
    }
    1
}

fn backend_code(e: &BackendError) -> u8 {
    if matches!(e, BackendError::Config(_)) {
        2
    } else {
        4
    }
}

fn corpus_code(e: &CorpusError) -> u8 {
    if matches!(e, CorpusError::Io { .. }) {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            n_patients,
            case_fraction,
            seed,
            cfg,
        } => synth(&cfg, &out, n_patients, case_fraction, seed),
        Command::Run {
            cfg,
            prompt,
            aggregation,
            exclusion,
            out,
            resume,
        } => {
            let c = cfg.load()?;
            let setting = (
                prompt.unwrap_or(c.prompt),
                aggregation.unwrap_or(c.aggregation),
                exclusion.unwrap_or(c.exclusion),
            );
            let corpus = load_corpus(&c)?;
            run_one(&c, &corpus, setting, out, resume).map(|_| ())
        }
        Command::Baseline { cfg, out } => {
            let c = cfg.load()?;
            let corpus = load_corpus(&c)?;
            baseline(&c, &corpus, out).map(|_| ())
        }
        Command::Grid { cfg, resume } => grid(&cfg.load()?, resume),
        Command::Eval {
            decisions,
            labels,
            split,
            format,
            json,
            cfg,
        } => eval(
            &cfg,
            &decisions,
            labels.as_deref(),
            split,
            format,
            json.as_deref(),
        ),
        Command::ShowConfig { cfg } => {
            print!("{}", cfg.load()?.to_toml());
            Ok(())
        }
    }
}

fn synth(
    cfg: &ConfigArgs,
    out: &Path,
    n_patients: Option<usize>,
    case_fraction: Option<f64>,
    seed: Option<u64>,
) -> Result<()> {
    let c = cfg.load()?;
    let mut spec = c
        .corpus
        .synthetic
        .clone()
        .unwrap_or_else(CohortSpec::default);
    if let Some(n) = n_patients {
        spec.n_patients = n;
    }
    if let Some(f) = case_fraction {
        spec.case_fraction = f;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let corpus = generate_cohort(&spec)?;
    write_corpus(&corpus, out)?;
    let cases = corpus
        .patients()
        .filter(|p| p.gold_label == Some(true))
        .count();
    println!(
        "wrote {} patients ({} cases) to {}",
        corpus.len(),
        cases,
        out.display()
    );
    Ok(())
}

fn load_corpus(c: &PipelineConfig) -> Result<Corpus> {
    let ingested = c.load_corpus()?;
    for w in &ingested.warnings {
        log::warn!("{w}");
    }
    Ok(ingested.corpus)
}

fn run_one(
    c: &PipelineConfig,
    corpus: &Corpus,
    (prompt, aggregation, exclusion): (Design, AggregationMethod, ExclusionMode),
    out: Option<PathBuf>,
    resume: bool,
) -> Result<RunDecisions> {
    let info = RunInfo::llm(prompt, aggregation, exclusion);
    let out = out.unwrap_or_else(|| c.output_dir().join(info.file_name()));
    let pipeline = c.pipeline_for(prompt, aggregation, exclusion, c.client()?)?;
    let patients = select_patients(corpus, c.split);
    if patients.is_empty() {
        bail!(ConfigError::Invalid(format!(
            "no patients selected (split filter: {})",
            c.split.map_or("none", |s| s.as_str())
        )));
    }
    let outcome = run_llm(&pipeline, &info, &patients, c.patient_workers, &out, resume)
        .with_context(|| format!("run {}", info.run))?;
    let s = outcome.stats;
    if s.calls > 0 && s.failures == s.calls {
        return Err(BackendUnavailable(s)).with_context(|| format!("run {}", info.run));
    }
    let positives = outcome.records.iter().filter(|r| r.decision).count();
    println!(
        "{}: {} patients ({} resumed), {} positive; {} calls, {} failed, peak in flight {} -> {}",
        info.run,
        outcome.records.len(),
        outcome.resumed,
        positives,
        s.calls,
        s.failures,
        s.peak_in_flight,
        out.display()
    );
    Ok(RunDecisions {
        info,
        records: outcome.records,
    })
}

fn baseline(c: &PipelineConfig, corpus: &Corpus, out: Option<PathBuf>) -> Result<RunDecisions> {
    let info = RunInfo::structured();
    let out = out.unwrap_or_else(|| c.output_dir().join(info.file_name()));
    let rules = c.rule_set()?;
    let records = run_structured(&select_patients(corpus, c.split), &rules);
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("create {}", parent.display()))?;
    }
    write_records(&out, &records)?;
    let positives = records.iter().filter(|r| r.decision).count();
    println!(
        "{}: {} patients, {} positive -> {}",
        info.run,
        records.len(),
        positives,
        out.display()
    );
    Ok(RunDecisions { info, records })
}

fn grid(c: &PipelineConfig, resume: bool) -> Result<()> {
    let corpus = load_corpus(c)?;
    let mut runs = vec![baseline(c, &corpus, None)?];
    for setting in c.grid.expand() {
        runs.push(run_one(c, &corpus, setting, None, resume)?);
    }
    let split = c.split.unwrap_or(Split::Test);
    let report = compare_report(&runs, &gold_labels(&corpus), split)?;
    let dir = c.output_dir();
    let json = dir.join("report.json");
    std::fs::write(&json, report.to_json()).with_context(|| format!("write {}", json.display()))?;
    let mut text = render_table(&report);
    if let Some(g) = render_grid(&report) {
        text.push('\n');
        text.push_str(&g);
    }
    let txt = dir.join("report.txt");
    std::fs::write(&txt, &text).with_context(|| format!("write {}", txt.display()))?;
    print!("{text}");
    Ok(())
}

fn eval(
    cfg: &ConfigArgs,
    files: &[PathBuf],
    labels: Option<&Path>,
    split: Split,
    format: Format,
    json: Option<&Path>,
) -> Result<()> {
    let gold: BTreeMap<String, GoldLabel> = match labels {
        Some(path) => {
            let f = File::open(path).with_context(|| format!("open {}", path.display()))?;
            read_labels(f, path)?
                .into_iter()
                .filter_map(|row| {
                    row.label.map(|label| {
                        (
                            row.patient_id,
                            GoldLabel {
                                label,
                                split: row.split,
                            },
                        )
                    })
                })
                .collect()
        }
        None => gold_labels(&load_corpus(&cfg.load()?)?),
    };
    let runs = files
        .iter()
        .map(|f| read_run(f))
        .collect::<Result<Vec<_>, _>>()?;
    let report = compare_report(&runs, &gold, split)?;
    if let Some(path) = json {
        std::fs::write(path, report.to_json())
            .with_context(|| format!("write {}", path.display()))?;
    }
    match format {
        Format::Table => print!("{}", render_table(&report)),
        Format::Grid => match render_grid(&report) {
            Some(g) => print!("{g}"),
            None => print!("{}", render_table(&report)),
        },
        Format::Json => print!("{}", report.to_json()),
    }
    Ok(())
}
