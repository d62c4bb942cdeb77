use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::{prepare_subject, train_view, write_curve, PreparedSubject};
use super::{fuse_and_finish, predict_view, TrainSpec};
use crate::data_io::{
    make_fraction_plan, make_loso, make_stratified_kfold, save_volume, Manifest, SplitPlan,
    SplitStrategy,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_subject, write_metric_rows, MetricRow};
use crate::model::{save_checkpoint, TrainedModel};
use crate::rng;
use crate::stats::{mann_whitney_u, median_iqr, wilcoxon_signed_rank, TestResult};
use crate::views::{combination_label, ViewAxis};
use crate::volume::Volume;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Crossval { folds: usize },
    Loso,
    MultiviewAblation { folds: usize },
    FractionAblation { steps: Vec<f64> },
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Crossval { .. } => "crossval",
            ExperimentKind::Loso => "loso",
            ExperimentKind::MultiviewAblation { .. } => "multiview-ablation",
            ExperimentKind::FractionAblation { .. } => "fraction-ablation",
        }
    }

    pub fn plan(&self, manifest: &Manifest, seed: u64) -> Result<SplitPlan> {
        match self {
            ExperimentKind::Crossval { folds } | ExperimentKind::MultiviewAblation { folds } => {
                make_stratified_kfold(&manifest.subjects, *folds, seed)
            }
            ExperimentKind::Loso => make_loso(&manifest.subjects, seed),
            ExperimentKind::FractionAblation { steps } => make_fraction_plan(&manifest.subjects, steps, seed),
        }
    }

    /// Training views, evaluated combinations (first is primary) and the
    /// paired comparisons between combinations.
    pub fn layout(&self, spec: &TrainSpec) -> (Vec<ViewAxis>, Vec<Vec<ViewAxis>>, Vec<(String, String)>) {
        use ViewAxis::{Axial as A, Coronal as C, Sagittal as S};
        match self {
            ExperimentKind::MultiviewAblation { .. } => {
                let combos = vec![vec![A, C], vec![A], vec![C], vec![S], vec![A, C, S]];
                let cmp = ["A", "C", "A+C+S"]
                    .iter()
                    .map(|o| ("A+C".to_string(), o.to_string()))
                    .collect();
                (vec![A, C, S], combos, cmp)
            }
            _ => (spec.views.clone(), vec![spec.views.clone()], Vec::new()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub name: String,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads for per-subject inference.
    pub jobs: usize,
    /// Fused view sets to evaluate; the first one is the primary result.
    /// Empty means the training views.
    pub combinations: Vec<Vec<ViewAxis>>,
    /// Paired signed-rank tests between combination labels.
    pub comparisons: Vec<(String, String)>,
    pub save_volumes: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            name: "experiment".into(),
            out_dir: None,
            seed: 0,
            jobs: 1,
            combinations: Vec::new(),
            comparisons: Vec::new(),
            save_volumes: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl ScoreSummary {
    fn of(values: &[f64]) -> Option<Self> {
        let (median, q1, q3) = median_iqr(values).ok()?;
        Some(ScoreSummary {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median,
            q1,
            q3,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub subjects: usize,
    pub errors: usize,
    pub vs: Option<ScoreSummary>,
    pub hd95_mm: Option<ScoreSummary>,
    pub dsc: Option<ScoreSummary>,
}

impl MetricSummary {
    pub fn of(rows: &[&MetricRow]) -> Self {
        let col = |f: fn(&MetricRow) -> Option<f64>| -> Vec<f64> { rows.iter().filter_map(|r| f(r)).collect() };
        MetricSummary {
            subjects: rows.len(),
            errors: rows.iter().filter(|r| r.is_error()).count(),
            vs: ScoreSummary::of(&col(|r| r.vs)),
            hd95_mm: ScoreSummary::of(&col(|r| r.hd95_mm)),
            dsc: ScoreSummary::of(&col(|r| r.dsc)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationReport {
    pub label: String,
    pub views: Vec<ViewAxis>,
    pub overall: MetricSummary,
    pub per_scanner: BTreeMap<String, MetricSummary>,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub best_epochs: BTreeMap<ViewAxis, usize>,
    /// Primary combination over this fold's test subjects.
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub pairs: usize,
    pub test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub param_count: usize,
    pub combinations: Vec<CombinationReport>,
    pub folds: Vec<FoldSummary>,
    /// Paired signed-rank tests between view combinations.
    pub comparisons: Vec<Comparison>,
    /// Rank-sum tests of each scanner against all others (primary combination).
    pub scanner_tests: Vec<Comparison>,
}

impl EvalReport {
    pub fn primary(&self) -> &CombinationReport {
        &self.combinations[0]
    }

    pub fn combination(&self, label: &str) -> Option<&CombinationReport> {
        self.combinations.iter().find(|c| c.label == label)
    }

    pub fn has_errors(&self) -> bool {
        self.combinations.iter().any(|c| c.rows.iter().any(MetricRow::is_error))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn metric_columns() -> [(&'static str, fn(&MetricRow) -> Option<f64>); 3] {
    [("vs", |r| r.vs), ("hd95_mm", |r| r.hd95_mm), ("dsc", |r| r.dsc)]
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn file_label(label: &str) -> String {
    label.replace('+', "")
}

/// Runs the kind's plan and evaluation layout.
pub fn run_kind(kind: &ExperimentKind, manifest: &Manifest, spec: &TrainSpec, opts: &ExperimentOptions) -> Result<EvalReport> {
    let plan = kind.plan(manifest, opts.seed)?;
    let (views, combinations, comparisons) = kind.layout(spec);
    let spec = TrainSpec { views, ..spec.clone() };
    let opts = ExperimentOptions {
        name: kind.name().into(),
        combinations,
        comparisons,
        ..opts.clone()
    };
    run_experiment(manifest, &plan, &spec, &opts)
}

/// Trains every fold's per-view models, segments its test subjects and
/// scores them. Subjects that fail at test time become error rows.
pub fn run_experiment(
    manifest: &Manifest,
    plan: &SplitPlan,
    spec: &TrainSpec,
    opts: &ExperimentOptions,
) -> Result<EvalReport> {
    spec.validate()?;
    let combos: Vec<Vec<ViewAxis>> = if opts.combinations.is_empty() {
        vec![spec.views.clone()]
    } else {
        opts.combinations.clone()
    };
    for c in &combos {
        if let Some(v) = c.iter().find(|v| !spec.views.contains(v)) {
            return Err(Error::Config(format!("combination {} uses untrained view {v}", combination_label(c))));
        }
    }
    for fold in &plan.folds {
        for id in fold.train.iter().chain(&fold.validation).chain(&fold.test) {
            if manifest.get(id).is_none() {
                return Err(Error::Config(format!("fold {} names unknown subject {id}", fold.name)));
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        create_dir(dir)?;
        plan.save(dir.join("plan.json"))?;
        let spec_json = serde_json::to_string_pretty(spec)?;
        fs::write(dir.join("config.json"), spec_json).map_err(|e| Error::io(dir.join("config.json"), e))?;
    }

    let mut cache: HashMap<String, std::result::Result<PreparedSubject, String>> = HashMap::new();
    let mut prepared = |id: &str| -> std::result::Result<PreparedSubject, String> {
        cache
            .entry(id.to_string())
            .or_insert_with(|| {
                let rec = manifest.get(id).expect("checked above");
                prepare_subject(manifest, rec, &spec.preprocess).map_err(|e| e.to_string())
            })
            .clone()
    };

    let labels: Vec<String> = combos.iter().map(|c| combination_label(c)).collect();
    let mut rows: Vec<Vec<MetricRow>> = vec![Vec::new(); combos.len()];
    let mut folds = Vec::new();
    let mut param_count = 0;
    for (fi, fold) in plan.folds.iter().enumerate() {
        let load_all = |ids: &[String], prepared: &mut dyn FnMut(&str) -> std::result::Result<PreparedSubject, String>| {
            ids.iter()
                .map(|id| prepared(id).map_err(|e| Error::Preprocess(format!("{id}: {e}"))))
                .collect::<Result<Vec<_>>>()
        };
        let train = load_all(&fold.train, &mut prepared)?;
        let val = load_all(&fold.validation, &mut prepared)?;
        let fold_dir = opts.out_dir.as_ref().map(|d| d.join(&fold.name));
        if let Some(d) = &fold_dir {
            create_dir(d)?;
        }
        let mut models: BTreeMap<ViewAxis, TrainedModel> = BTreeMap::new();
        let mut best_epochs = BTreeMap::new();
        for &view in &spec.views {
            let seed = rng::derive_seed(opts.seed, rng::tag(&format!("{}/{}", fold.name, view.name())));
            log::info!("fold {} ({}/{}): training {view} on {} subjects", fold.name, fi + 1, plan.folds.len(), train.len());
            let outcome = train_view(view, &train, &val, spec, seed)?;
            if let Some(d) = &fold_dir {
                save_checkpoint(&outcome.model, &d.join(format!("model-{}.ckpt", view.name())))?;
                write_curve(&outcome.curve, &d.join(format!("curve-{}.csv", view.name())))?;
            }
            param_count = outcome.model.param_count;
            best_epochs.insert(view, outcome.best_epoch);
            models.insert(view, outcome.model);
        }

        let results = evaluate_test_subjects(manifest, fold, &models, &combos, spec, opts, &mut prepared)?;
        let mut fold_rows = Vec::new();
        for (subject_rows, volumes) in results {
            for (c, row) in subject_rows.into_iter().enumerate() {
                if c == 0 {
                    fold_rows.push(row.clone());
                }
                rows[c].push(row);
            }
            if let (Some(dir), Some((id, prob, mask))) = (&opts.out_dir, volumes) {
                let pred_dir = dir.join("predictions");
                create_dir(&pred_dir)?;
                save_volume(&prob, pred_dir.join(format!("{id}_prob.nii.gz")))?;
                save_volume(&mask, pred_dir.join(format!("{id}_mask.nii.gz")))?;
            }
        }
        let refs: Vec<&MetricRow> = fold_rows.iter().collect();
        folds.push(FoldSummary {
            name: fold.name.clone(),
            fraction: fold.fraction,
            n_train: fold.train.len(),
            n_validation: fold.validation.len(),
            n_test: fold.test.len(),
            best_epochs,
            summary: MetricSummary::of(&refs),
        });
    }

    let combinations: Vec<CombinationReport> = combos
        .iter()
        .zip(&labels)
        .zip(rows)
        .map(|((views, label), rows)| {
            let all: Vec<&MetricRow> = rows.iter().collect();
            let mut per_scanner: BTreeMap<String, Vec<&MetricRow>> = BTreeMap::new();
            for r in &rows {
                per_scanner.entry(r.scanner_id.clone()).or_default().push(r);
            }
            CombinationReport {
                label: label.clone(),
                views: views.clone(),
                overall: MetricSummary::of(&all),
                per_scanner: per_scanner.iter().map(|(k, v)| (k.clone(), MetricSummary::of(v))).collect(),
                rows,
            }
        })
        .collect();

    let mut comparisons = Vec::new();
    for (a, b) in &opts.comparisons {
        let (Some(ra), Some(rb)) = (
            combinations.iter().find(|c| &c.label == a),
            combinations.iter().find(|c| &c.label == b),
        ) else {
            return Err(Error::Config(format!("comparison {a} vs {b} names an unevaluated combination")));
        };
        for (metric, get) in metric_columns() {
            let diffs: Vec<f64> = ra
                .rows
                .iter()
                .zip(&rb.rows)
                .filter_map(|(x, y)| Some(get(x)? - get(y)?))
                .collect();
            if diffs.is_empty() {
                continue;
            }
            comparisons.push(Comparison {
                a: a.clone(),
                b: b.clone(),
                metric: metric.into(),
                pairs: diffs.len(),
                test: wilcoxon_signed_rank(&diffs)?,
            });
        }
    }

    let mut scanner_tests = Vec::new();
    let primary = &combinations[0];
    for scanner in primary.per_scanner.keys() {
        for (metric, get) in metric_columns() {
            let (inside, outside): (Vec<&MetricRow>, Vec<&MetricRow>) =
                primary.rows.iter().partition(|r| &r.scanner_id == scanner);
            let a: Vec<f64> = inside.iter().filter_map(|r| get(r)).collect();
            let b: Vec<f64> = outside.iter().filter_map(|r| get(r)).collect();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            scanner_tests.push(Comparison {
                a: scanner.clone(),
                b: "others".into(),
                metric: metric.into(),
                pairs: a.len() + b.len(),
                test: mann_whitney_u(&a, &b)?,
            });
        }
    }

    let report = EvalReport {
        experiment: opts.name.clone(),
        strategy: plan.strategy,
        seed: opts.seed,
        param_count,
        combinations,
        folds,
        comparisons,
        scanner_tests,
    };
    if let Some(dir) = &opts.out_dir {
        for (i, c) in report.combinations.iter().enumerate() {
            let name = if i == 0 {
                "metrics.csv".to_string()
            } else {
                format!("metrics-{}.csv", file_label(&c.label))
            };
            write_metric_rows(&c.rows, &dir.join(name))?;
        }
        let path = dir.join("report.json");
        fs::write(&path, report.to_json()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

type SubjectOutput = (Vec<MetricRow>, Option<(String, Volume, Volume)>);

fn evaluate_test_subjects(
    manifest: &Manifest,
    fold: &crate::data_io::Fold,
    models: &BTreeMap<ViewAxis, TrainedModel>,
    combos: &[Vec<ViewAxis>],
    spec: &TrainSpec,
    opts: &ExperimentOptions,
    prepared: &mut dyn FnMut(&str) -> std::result::Result<PreparedSubject, String>,
) -> Result<Vec<SubjectOutput>> {
    let subjects: Vec<(String, String, std::result::Result<PreparedSubject, String>)> = fold
        .test
        .iter()
        .map(|id| {
            let scanner = manifest.get(id).map(|r| r.scanner_id.clone()).unwrap_or_default();
            (id.clone(), scanner, prepared(id))
        })
        .collect();
    let work = |(id, scanner, subject): &(String, String, std::result::Result<PreparedSubject, String>)| -> SubjectOutput {
        let fail = |reason: &str| -> SubjectOutput {
            (
                combos.iter().map(|_| MetricRow::failed(id, scanner, &fold.name, reason)).collect(),
                None,
            )
        };
        let subject = match subject {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let Some(label) = &subject.label else {
            return fail("no label");
        };
        let mut probs = BTreeMap::new();
        for (&view, model) in models {
            match predict_view(model, &subject.image) {
                Ok(p) => {
                    probs.insert(view, p);
                }
                Err(e) => return fail(&e.to_string()),
            }
        }
        let mut rows = Vec::with_capacity(combos.len());
        let mut volumes = None;
        for (c, combo) in combos.iter().enumerate() {
            let sub: BTreeMap<ViewAxis, Volume> = combo.iter().map(|v| (*v, probs[v].clone())).collect();
            match fuse_and_finish(id, sub, spec) {
                Ok(res) => {
                    rows.push(MetricRow::from_triple(id, scanner, &fold.name, &evaluate_subject(label, &res.mask)));
                    if c == 0 && opts.save_volumes {
                        volumes = Some((id.clone(), res.prob_fused, res.mask));
                    }
                }
                Err(e) => rows.push(MetricRow::failed(id, scanner, &fold.name, &e.to_string())),
            }
        }
        (rows, volumes)
    };
    let jobs = opts.jobs.max(1).min(subjects.len().max(1));
    if jobs == 1 {
        return Ok(subjects.iter().map(work).collect());
    }
    let chunk = subjects.len().div_ceil(jobs);
    let outputs = std::thread::scope(|scope| {
        let handles: Vec<_> = subjects
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(work).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("inference worker panicked"))
            .collect::<Vec<_>>()
    });
    Ok(outputs.into_iter().flatten().collect())
}
