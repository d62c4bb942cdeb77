//! Command-line front end: `phantom`, `preprocess`, `train`, `predict`,
//! `evaluate` and `experiment`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data_io::{
    load_image, load_mask, save_volume, stratified_holdout, Manifest, SplitPlan, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_subject, write_metric_rows, MetricRow};
use crate::model::{load_checkpoint, save_checkpoint, TrainedModel};
use crate::phantom::{generate_cohort, uniform_counts, PhantomSpec};
use crate::pipeline::{
    prepare_subject, run_kind, segment_subject, train_view, write_curve, ExperimentKind,
    ExperimentOptions, MetricSummary, PreparedSubject, TrainSpec,
};
use crate::preprocess::preprocess_image;
use crate::views::{parse_views, ViewAxis};

#[derive(Debug, Parser)]
#[command(name = "claustrum-seg", version, about = "Multi-view 2D CNN segmentation of thin sheet-like structures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort (images, labels, manifest.csv).
    Phantom(PhantomArgs),
    /// Brain-mask and z-score every image of a manifest.
    Preprocess(PreprocessArgs),
    /// Train one model per view.
    Train(TrainArgs),
    /// Segment every subject of a manifest with trained checkpoints.
    Predict(PredictArgs),
    /// Score predicted masks against manifest labels.
    Evaluate(EvaluateArgs),
    /// Run a complete evaluation protocol.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON training/inference config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Overwrite an existing, non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub common: Common,
    /// Subjects per scanner style.
    #[arg(long, default_value_t = 10)]
    pub per_style: usize,
    /// Cubic volume edge length in voxels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 1.5)]
    pub sheet_thickness: f64,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split plan JSON; without it a stratified 4:1 train/validation split is drawn.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Fold of the split plan to train (default: the first).
    #[arg(long)]
    pub fold: Option<String>,
    #[arg(long)]
    pub views: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `model-<view>.ckpt` files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub views: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<subject>_mask.nii.gz` files.
    #[arg(long)]
    pub predictions: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    Crossval,
    Loso,
    MultiviewAblation,
    FractionAblation,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub kind: ExperimentName,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub fraction_steps: Vec<f64>,
    #[arg(long)]
    pub views: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write predicted probability and mask volumes.
    #[arg(long)]
    pub save_volumes: bool,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.command {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    };
    match outcome {
        Ok(0) => 0,
        Ok(failures) => {
            eprintln!("error: {failures} subject(s) failed; see the error rows in the output");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn prepare_out(common: &Common) -> Result<()> {
    let out = &common.out;
    if out.exists() {
        let occupied = fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some();
        if occupied && !common.force {
            return Err(Error::Config(format!(
                "{} already exists and is not empty (use --force to overwrite)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn load_spec(common: &Common, views: &Option<String>, lambda: Option<f64>, threshold: Option<f64>) -> Result<TrainSpec> {
    let mut spec = match &common.config {
        Some(path) => TrainSpec::load(path)?,
        None => TrainSpec::default(),
    };
    if let Some(v) = views {
        spec.views = parse_views(v)?;
    }
    if let Some(l) = lambda {
        spec.fusion_lambda = l;
    }
    if let Some(t) = threshold {
        spec.threshold = t;
    }
    spec.validate()?;
    Ok(spec)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn relative(path: &Path, root: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned()
}

pub fn cmd_phantom(args: &PhantomArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let base = PhantomSpec {
        shape: [args.size; 3],
        sheet_thickness: args.sheet_thickness,
        ..PhantomSpec::default()
    };
    base.validate()?;
    let manifest = generate_cohort(&uniform_counts(args.per_style), args.common.seed, &base, &args.common.out)?;
    log::info!("wrote {} phantoms to {}", manifest.len(), args.common.out.display());
    Ok(0)
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let spec = load_spec(&args.common, &None, None, None)?;
    let manifest = Manifest::read(&args.manifest)?;
    let out = args.common.out.canonicalize().map_err(|e| Error::io(&args.common.out, e))?;
    let image_dir = out.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let results = parallel_map(&manifest.subjects, args.common.jobs, |rec| -> Result<SubjectRecord> {
        let raw = load_image(manifest.resolve(&rec.image_path))?;
        let (normalized, _) = preprocess_image(&raw, &spec.preprocess)?;
        let path = image_dir.join(format!("{}.nii.gz", rec.subject_id));
        save_volume(&normalized, &path)?;
        let label_path = if rec.has_label() {
            let abs = manifest.resolve(&rec.label_path);
            abs.canonicalize().unwrap_or(abs).to_string_lossy().into_owned()
        } else {
            String::new()
        };
        Ok(SubjectRecord {
            subject_id: rec.subject_id.clone(),
            scanner_id: rec.scanner_id.clone(),
            image_path: relative(&path, &out),
            label_path,
        })
    });
    let mut subjects = Vec::new();
    let mut failures = 0;
    for (rec, r) in manifest.subjects.iter().zip(results) {
        match r {
            Ok(s) => subjects.push(s),
            Err(e) => {
                failures += 1;
                log::error!("{}: {e}", rec.subject_id);
            }
        }
    }
    Manifest::new(&out, subjects)?.write(out.join("manifest.csv"))?;
    Ok(failures)
}

fn load_split(args: &TrainArgs, manifest: &Manifest) -> Result<(Vec<String>, Vec<String>)> {
    match &args.split {
        Some(path) => {
            let plan = SplitPlan::load(path)?;
            let fold = match &args.fold {
                Some(name) => plan
                    .folds
                    .iter()
                    .find(|f| &f.name == name)
                    .ok_or_else(|| Error::Config(format!("split plan has no fold named {name}")))?,
                None => plan
                    .folds
                    .first()
                    .ok_or_else(|| Error::Config("split plan has no folds".into()))?,
            };
            Ok((fold.train.clone(), fold.validation.clone()))
        }
        None => {
            let labelled: Vec<SubjectRecord> = manifest.subjects.iter().filter(|s| s.has_label()).cloned().collect();
            let (train, val) = stratified_holdout(&labelled, args.common.seed);
            Ok((train, val))
        }
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let spec = load_spec(&args.common, &args.views, None, None)?;
    let manifest = Manifest::read(&args.manifest)?;
    let (train_ids, val_ids) = load_split(args, &manifest)?;
    let load = |ids: &[String]| -> Result<Vec<PreparedSubject>> {
        ids.iter()
            .map(|id| {
                let rec = manifest
                    .get(id)
                    .ok_or_else(|| Error::Config(format!("split names unknown subject {id}")))?;
                if !rec.has_label() {
                    return Err(Error::Config(format!("training subject {id} has no label")));
                }
                prepare_subject(&manifest, rec, &spec.preprocess)
            })
            .collect()
    };
    let train = load(&train_ids)?;
    let val = load(&val_ids)?;
    if train.is_empty() {
        return Err(Error::Config("no training subjects".into()));
    }
    write_json(&spec, &args.common.out.join("config.json"))?;
    let out = &args.common.out;
    let seed = args.common.seed;
    let outcomes = parallel_map(&spec.views, args.common.jobs, |&view| {
        let view_seed = crate::rng::derive_seed(seed, crate::rng::tag(view.name()));
        train_view(view, &train, &val, &spec, view_seed)
    });
    for (view, outcome) in spec.views.iter().zip(outcomes) {
        let outcome = outcome?;
        save_checkpoint(&outcome.model, &out.join(format!("model-{}.ckpt", view.name())))?;
        write_curve(&outcome.curve, &out.join(format!("curve-{}.csv", view.name())))?;
        log::info!("{view}: best epoch {}", outcome.best_epoch);
    }
    Ok(0)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let spec = load_spec(&args.common, &args.views, args.lambda, args.threshold)?;
    let manifest = Manifest::read(&args.manifest)?;
    let mut models: BTreeMap<ViewAxis, TrainedModel> = BTreeMap::new();
    for &view in &spec.views {
        let model = load_checkpoint(&args.models.join(format!("model-{}.ckpt", view.name())))?;
        if model.view != view {
            return Err(Error::Config(format!("checkpoint for {view} was trained on {}", model.view)));
        }
        models.insert(view, model);
    }
    let out = &args.common.out;
    let results = parallel_map(&manifest.subjects, args.common.jobs, |rec| -> Result<()> {
        let raw = load_image(manifest.resolve(&rec.image_path))?;
        let r = segment_subject(&rec.subject_id, &models, &raw, &spec)?;
        save_volume(&r.prob_fused, out.join(format!("{}_prob.nii.gz", rec.subject_id)))?;
        save_volume(&r.mask, out.join(format!("{}_mask.nii.gz", rec.subject_id)))
    });
    let mut failures = 0;
    for (rec, r) in manifest.subjects.iter().zip(results) {
        if let Err(e) = r {
            failures += 1;
            log::error!("{}: {e}", rec.subject_id);
        }
    }
    Ok(failures)
}

#[derive(Debug, Serialize)]
struct EvaluationSummary {
    overall: MetricSummary,
    per_scanner: BTreeMap<String, MetricSummary>,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let manifest = Manifest::read(&args.manifest)?;
    let labelled: Vec<&SubjectRecord> = manifest.subjects.iter().filter(|s| s.has_label()).collect();
    let rows = parallel_map(&labelled, args.common.jobs, |rec| {
        let scored = (|| -> Result<MetricRow> {
            let label = load_mask(manifest.resolve(&rec.label_path))?;
            let pred = load_mask(args.predictions.join(format!("{}_mask.nii.gz", rec.subject_id)))?;
            let triple = evaluate_subject(&label, &pred);
            Ok(MetricRow::from_triple(&rec.subject_id, &rec.scanner_id, "", &triple))
        })();
        scored.unwrap_or_else(|e| MetricRow::failed(&rec.subject_id, &rec.scanner_id, "", &e.to_string()))
    });
    write_metric_rows(&rows, &args.common.out.join("metrics.csv"))?;
    let all: Vec<&MetricRow> = rows.iter().collect();
    let mut per_scanner: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
    for r in &rows {
        per_scanner.entry(r.scanner_id.clone()).or_default().push(r);
    }
    let summary = EvaluationSummary {
        overall: MetricSummary::of(&all),
        per_scanner: per_scanner.iter().map(|(k, v)| (k.clone(), MetricSummary::of(v))).collect(),
    };
    write_json(&summary, &args.common.out.join("summary.json"))?;
    Ok(rows.iter().filter(|r| r.is_error()).count())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<usize> {
    prepare_out(&args.common)?;
    let spec = load_spec(&args.common, &args.views, args.lambda, args.threshold)?;
    let manifest = Manifest::read(&args.manifest)?;
    let kind = match args.kind {
        ExperimentName::Crossval => ExperimentKind::Crossval { folds: args.folds },
        ExperimentName::Loso => ExperimentKind::Loso,
        ExperimentName::MultiviewAblation => ExperimentKind::MultiviewAblation { folds: args.folds },
        ExperimentName::FractionAblation => ExperimentKind::FractionAblation {
            steps: args.fraction_steps.clone(),
        },
    };
    let opts = ExperimentOptions {
        out_dir: Some(args.common.out.clone()),
        seed: args.common.seed,
        jobs: args.common.jobs,
        save_volumes: args.save_volumes,
        ..ExperimentOptions::default()
    };
    let report = run_kind(&kind, &manifest, &spec, &opts)?;
    let p = report.primary();
    log::info!(
        "{} {}: {} subjects, {} errors",
        report.experiment,
        p.label,
        p.overall.subjects,
        p.overall.errors
    );
    Ok(report.combinations.iter().map(|c| c.overall.errors).max().unwrap_or(0))
}
