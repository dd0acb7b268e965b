//! `smartbed`: batch front end for the pressure-mat biometrics pipeline.
//!
//! Data goes to files; diagnostics go to stderr, one line per error. Every
//! stochastic step takes an explicit `--seed`.

mod output;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use smartbed::baselines::{build_bmi_classes, BmiClassMode, Metric};
use smartbed::dataset::{self, ingest_hrlros, ingest_pmatdata, load_corpus, save_corpus, PostureMap, SubjectRecord};
use smartbed::evalharness::{class_subjects, drop_column_importance, run_cv, ClassSpec, CvConfig, EvaluationReport, Recipe};
use smartbed::exec::Execution;
use smartbed::features::FeatureTable;
use smartbed::mtnet::{self, OptimizerKind, TrainConfig, TrainingSet};
use smartbed::preprocess::{preprocess_corpus, PreprocessConfig};
use smartbed::synthgen::{generate_corpus_with, NoiseSpec, Posture, SynthParams};
use smartbed::GridSpec;

#[derive(Parser)]
#[command(name = "smartbed", version, about = "Pressure-mat BMI estimation and identification")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
    /// Convert a raw public dataset into the canonical corpus layout.
    Ingest(IngestArgs),
    /// Spatial median then temporal Gaussian filtering.
    Preprocess(PreprocessArgs),
    /// Extract the per-frame feature table.
    Features(FeaturesArgs),
    /// Train the multitask network on a feature table.
    Train(TrainArgs),
    /// Cross-validate a model recipe.
    Eval(EvalArgs),
    /// Drop-column feature importance under cross-validation.
    Importance(ImportanceArgs),
    /// Render an evaluation report as CSV or text.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    subjects: usize,
    #[arg(long)]
    frames_per_subject: usize,
    /// Comma-separated: supine, left, right.
    #[arg(long, value_delimiter = ',', default_value = "supine,left,right")]
    postures: Vec<String>,
    /// `none`, `moderate`, or `MULT,DROPOUT,JITTER`.
    #[arg(long, default_value = "moderate")]
    noise: String,
    /// `pmatdata`, `hrlros`, or `ROWSxCOLS`.
    #[arg(long, default_value = "pmatdata")]
    grid: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Adapter {
    Pmatdata,
    Hrlros,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long, value_enum)]
    adapter: Adapter,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the built-in 17→10 posture table (CSV raw_id,group_id,description).
    #[arg(long)]
    posture_map: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    median_window: usize,
    #[arg(long, default_value_t = 5)]
    gaussian_window: usize,
    #[arg(long, default_value_t = 1.0)]
    gaussian_sigma: f64,
    #[arg(long)]
    skip_filters: bool,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassModeArg {
    /// weight_height with --subjects, otherwise bmi; skipped below 5 subjects.
    Auto,
    Bmi,
    AgeBmi,
    WeightHeight,
    None,
}

#[derive(Args, Clone)]
struct ClassArgs {
    /// Subject records (a subjects.csv or a corpus directory) for BMI-class
    /// modes that need weight, height or age.
    #[arg(long)]
    subjects: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    class_mode: ClassModeArg,
    /// Cluster raw rather than z-scored attributes.
    #[arg(long)]
    raw_clusters: bool,
}

#[derive(Args, Clone)]
struct NetArgs {
    #[arg(long, default_value = "lbfgs")]
    optimizer: String,
    #[arg(long, default_value_t = 14_500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    lbfgs_memory: usize,
    /// Step size of the adaptive optimizer.
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    classes: ClassArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RecipeArg {
    Mtnet,
    Knn,
    Gnb,
    Linreg,
}

#[derive(Args, Clone)]
struct RecipeArgs {
    #[arg(long, value_enum)]
    recipe: RecipeArg,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long)]
    seed: u64,
    /// Neighbours for knn.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// euclidean, cosine or minkowski3.
    #[arg(long, default_value = "euclidean")]
    metric: String,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    classes: ClassArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
    #[arg(long)]
    report_out: PathBuf,
    /// Also write the per-fold CSV here.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct ImportanceArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    recipe: RecipeArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Text,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    format: ReportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_grid(s: &str) -> Result<GridSpec> {
    match s {
        "pmatdata" => Ok(GridSpec::pmatdata()),
        "hrlros" => Ok(GridSpec::hrlros()),
        other => {
            let (r, c) = other
                .split_once('x')
                .with_context(|| format!("grid {other:?} is not pmatdata, hrlros or ROWSxCOLS"))?;
            let rows = r.trim().parse().with_context(|| format!("grid rows {r:?}"))?;
            let cols = c.trim().parse().with_context(|| format!("grid cols {c:?}"))?;
            let base = GridSpec::pmatdata();
            Ok(GridSpec::new(rows, cols, base.sensor_ceiling, base.frame_rate_hz)?)
        }
    }
}

fn parse_noise(s: &str) -> Result<NoiseSpec> {
    match s {
        "none" => Ok(NoiseSpec::none()),
        "moderate" => Ok(NoiseSpec::moderate()),
        other => {
            let parts: Vec<f64> = other
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .with_context(|| format!("noise {other:?} is not none, moderate or MULT,DROPOUT,JITTER"))?;
            let [m, d, j] = parts[..] else {
                bail!("noise {other:?} needs three numbers MULT,DROPOUT,JITTER");
            };
            Ok(NoiseSpec {
                multiplicative_sigma: m,
                dropout_prob: d,
                jitter_sigma_cells: j,
            })
        }
    }
}

fn train_config(net: &NetArgs, seed: u64) -> Result<TrainConfig> {
    let optimizer: OptimizerKind = net.optimizer.parse().map_err(anyhow::Error::msg)?;
    let cfg = TrainConfig {
        max_iterations: net.max_iter,
        weight_decay: net.weight_decay,
        optimizer,
        lbfgs_memory: net.lbfgs_memory,
        learning_rate: net.learning_rate,
        ..TrainConfig::with_seed(seed)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_subjects(path: &Path) -> Result<Vec<SubjectRecord>> {
    let file = if path.is_dir() { path.join(dataset::SUBJECTS_FILE) } else { path.to_path_buf() };
    Ok(dataset::read_subjects(&file)?)
}

/// Resolves the BMI-class task: which mode, on which subject records.
fn class_spec(args: &ClassArgs, table: &FeatureTable, seed: u64) -> Result<(Option<ClassSpec>, Option<Vec<SubjectRecord>>)> {
    let subjects = args.subjects.as_deref().map(load_subjects).transpose()?;
    if let Some(s) = &subjects {
        let known: BTreeSet<&str> = s.iter().map(|r| r.subject_id.as_str()).collect();
        if let Some(missing) = table.subject_ids().iter().find(|id| !known.contains(id.as_str())) {
            bail!("subject {missing:?} is in the feature table but not in the subject records");
        }
    }
    let mode = match args.class_mode {
        ClassModeArg::None => return Ok((None, subjects)),
        ClassModeArg::Bmi => BmiClassMode::Bmi,
        ClassModeArg::AgeBmi => BmiClassMode::AgeBmi,
        ClassModeArg::WeightHeight => BmiClassMode::WeightHeight,
        ClassModeArg::Auto => {
            let n = table.subject_ids().len();
            if n < smartbed::baselines::BMI_CLASS_COUNT {
                log::warn!("{n} subjects is too few for 5 BMI classes; skipping the BMI-class task");
                return Ok((None, subjects));
            }
            if subjects.is_some() {
                BmiClassMode::WeightHeight
            } else {
                BmiClassMode::Bmi
            }
        }
    };
    Ok((
        Some(ClassSpec {
            mode,
            standardize: !args.raw_clusters,
            seed,
        }),
        subjects,
    ))
}

fn recipe(args: &RecipeArgs) -> Result<Recipe> {
    Ok(match args.recipe {
        RecipeArg::Mtnet => Recipe::Mtnet(train_config(&args.net, args.seed)?),
        RecipeArg::Knn => Recipe::Knn {
            k: args.k,
            metric: args.metric.parse::<Metric>()?,
        },
        RecipeArg::Gnb => Recipe::Gnb,
        RecipeArg::Linreg => Recipe::Linreg,
    })
}

fn read_table(path: &Path) -> Result<FeatureTable> {
    let table = FeatureTable::read_csv(path)?;
    if table.rows.is_empty() {
        bail!("{}: no feature rows", path.display());
    }
    Ok(table)
}

fn pretty(v: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn run(cli: Cli) -> Result<()> {
    let exec = Execution::default();
    match cli.command {
        Command::Synth(a) => {
            let postures = a
                .postures
                .iter()
                .map(|p| p.trim().parse::<Posture>().map_err(anyhow::Error::msg))
                .collect::<Result<Vec<_>>>()?;
            let params = SynthParams {
                n_subjects: a.subjects,
                frames_per_subject: a.frames_per_subject,
                postures,
                noise: parse_noise(&a.noise)?,
                grid: parse_grid(&a.grid)?,
                seed: a.seed,
            };
            let corpus = generate_corpus_with(&params, exec)?;
            output::write_dir(&a.out, |dir| Ok(save_corpus(&corpus, dir)?))?;
        }
        Command::Ingest(a) => {
            let corpus = match a.adapter {
                Adapter::Pmatdata => {
                    let map = match &a.posture_map {
                        Some(p) => PostureMap::from_path(p)?,
                        None => PostureMap::default(),
                    };
                    let table = a.posture_map.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "builtin".into());
                    ingest_pmatdata(&a.input, &map)?
                        .with_provenance(json!({ "ingest": { "adapter": "pmatdata", "posture_map": table } }))
                }
                Adapter::Hrlros => ingest_hrlros(&a.input)?.with_provenance(json!({ "ingest": { "adapter": "hrlros" } })),
            };
            output::write_dir(&a.out, |dir| Ok(save_corpus(&corpus, dir)?))?;
        }
        Command::Preprocess(a) => {
            let corpus = load_corpus(&a.input)?;
            let cfg = PreprocessConfig {
                median_window: a.median_window,
                gaussian_window: a.gaussian_window,
                gaussian_sigma: a.gaussian_sigma,
                skip_filters: a.skip_filters,
            };
            let out = preprocess_corpus(&corpus, &cfg, exec)?;
            output::write_dir(&a.out, |dir| Ok(save_corpus(&out, dir)?))?;
        }
        Command::Features(a) => {
            let corpus = load_corpus(&a.input)?;
            let table = FeatureTable::from_corpus(&corpus, exec);
            let mut csv = Vec::new();
            table.write_csv(&mut csv)?;
            let meta = json!({
                "corpus": corpus.name,
                "grid": corpus.grid,
                "feature_mask": corpus.feature_mask.bits(),
                "n_frames": table.rows.len(),
                "provenance": corpus.provenance,
            });
            output::write_file(&a.out, &csv)?;
            output::write_file(&meta_path(&a.out), &pretty(&meta))?;
        }
        Command::Train(a) => {
            let table = read_table(&a.features)?;
            let cfg = train_config(&a.net, a.seed)?;
            let ids = table.subject_ids();
            let set = TrainingSet::from_rows(&table.rows, table.mask, &ids)?;
            let (mut model, trace) = mtnet::train(&set, &cfg, exec)?;
            let (spec, subjects) = class_spec(&a.classes, &table, a.seed)?;
            if let Some(spec) = spec {
                let records: Vec<SubjectRecord> = class_subjects(&table, subjects.as_deref(), spec.mode)?
                    .into_iter()
                    .filter(|r| ids.contains(&r.subject_id))
                    .collect();
                let classes = build_bmi_classes(&records, spec.mode, spec.standardize, spec.seed)?;
                let labels: Vec<usize> = table
                    .rows
                    .iter()
                    .map(|r| classes.class_of(&r.subject_id).expect("classes cover every subject"))
                    .collect();
                model.fit_bmi_class_head(set.inputs.view(), &labels)?;
            }
            log::info!("training stopped after {} iterations ({:?})", trace.iterations, trace.stop);
            output::write_file(&a.model_out, model.to_json().as_bytes())?;
        }
        Command::Eval(a) => {
            let table = read_table(&a.features)?;
            let recipe = recipe(&a.recipe)?;
            let (classes, subjects) = class_spec(&a.recipe.classes, &table, a.recipe.seed)?;
            let cfg = CvConfig {
                recipe,
                n_folds: a.recipe.folds,
                seed: a.recipe.seed,
                classes,
            };
            let report = run_cv(&table, subjects.as_deref(), &cfg, exec)?;
            output::write_file(&a.report_out, report.to_json().as_bytes())?;
            if let Some(csv) = &a.csv_out {
                output::write_file(csv, report.to_csv().as_bytes())?;
            }
        }
        Command::Importance(a) => {
            let table = read_table(&a.features)?;
            let recipe = recipe(&a.recipe)?;
            let (classes, subjects) = class_spec(&a.recipe.classes, &table, a.recipe.seed)?;
            let cfg = CvConfig {
                recipe,
                n_folds: a.recipe.folds,
                seed: a.recipe.seed,
                classes,
            };
            let report = drop_column_importance(&table, subjects.as_deref(), &cfg, exec)?;
            output::write_file(&a.out, &pretty(&report))?;
        }
        Command::Report(a) => {
            let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            let report = EvaluationReport::from_json(&text).with_context(|| format!("{}: not an evaluation report", a.input.display()))?;
            let rendered = match a.format {
                ReportFormat::Csv => report.to_csv(),
                ReportFormat::Text => report.to_text(),
            };
            match &a.out {
                Some(p) => output::write_file(p, rendered.as_bytes())?,
                None => print!("{rendered}"),
            }
        }
    }
    Ok(())
}

/// `features.csv` → `features.csv.meta.json`.
fn meta_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    csv.with_file_name(name)
}

/// The error chain joined by ": ", skipping causes that an outer message
/// already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { ExitCode::from(2) } else { ExitCode::SUCCESS };
            }
            // Everything before the usage block, folded onto one line.
            let rendered = e.render().to_string();
            let head: Vec<&str> = rendered.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            eprintln!("{}", one_line(&head.join(" ")));
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&describe(&e)));
            ExitCode::FAILURE
        }
    }
}
