//! Experiment specs, the (model × repeat) runner, and summary rendering.
//!
//! Output layout under `output_dir`:
//!
//! ```text
//! reports/<model>_rep<r>.json   one AdaptationReport per cell
//! embeddings/<model>_rep<r>.csv final Z per cell (when dump_embeddings)
//! results.json                  per-cell outcomes, input to `report`
//! summary.csv                   deterministic summary (no timings)
//! summary.md                    the same table plus mean wall time
//! timing.csv                    wall time per cell
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapt::{run_adaptation, Boundary, ModelKind};
use crate::classify::{accuracy, nn_classify};
use crate::data::{AdaptConfig, AdaptationReport, DomainPair};
use crate::error::{Error, Result};
use crate::harness::io::{
    into_source, into_target, load_features, write_atomic, FeatureFormat, LabelMap,
};
use crate::harness::synth::{generate_synthetic, SyntheticRecipe};

/// Name of the unadapted baseline row.
pub const BASELINE_ROW: &str = "1-NN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        recipe: SyntheticRecipe,
    },
    /// One feature file per domain. The source needs labels; target labels,
    /// when present, are used only for scoring.
    Files {
        source: PathBuf,
        target: PathBuf,
        #[serde(default)]
        format: Option<FeatureFormat>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub models: Vec<ModelKind>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub config: AdaptConfig,
    /// Partial configs merged over `config` for individual models, keyed by
    /// model name (e.g. `"MEDA+CG": {"kernel": {"type": "rbf"}}`).
    #[serde(default)]
    pub model_overrides: BTreeMap<String, serde_json::Value>,
    pub output_dir: PathBuf,
    #[serde(default = "default_repeat")]
    pub repeat: usize,
    #[serde(default)]
    pub dump_embeddings: bool,
}

fn default_repeat() -> usize {
    1
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Parameter("experiment lists no models".into()));
        }
        if self.repeat == 0 {
            return Err(Error::Parameter("repeat must be >= 1".into()));
        }
        self.config.validate()?;
        for model in &self.models {
            self.config_for(*model)?.validate()?;
        }
        for key in self.model_overrides.keys() {
            key.parse::<ModelKind>()?;
        }
        if let DatasetSource::Synthetic { recipe } = &self.dataset {
            recipe.validate()?;
        }
        Ok(())
    }

    /// Relative dataset and output paths are taken relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DatasetSource::Files { source, target, .. } = &mut self.dataset {
            fix(source);
            fix(target);
        }
    }

    pub fn config_for(&self, model: ModelKind) -> Result<AdaptConfig> {
        let name = model.to_string();
        let over = self
            .model_overrides
            .iter()
            .find(|(k, _)| k.parse::<ModelKind>().ok() == Some(model))
            .map(|(_, v)| v);
        let Some(over) = over else {
            return Ok(self.config.clone());
        };
        let serde_json::Value::Object(fields) = over else {
            return Err(Error::Parameter(format!(
                "override for {name} must be an object"
            )));
        };
        let mut merged = serde_json::to_value(&self.config)?;
        let obj = merged
            .as_object_mut()
            .expect("config serialises to an object");
        for (k, v) in fields {
            obj.insert(k.clone(), v.clone());
        }
        Ok(serde_json::from_value(merged)?)
    }
}

/// Load or generate the pair for repeat `rep`. Synthetic data uses `seed + rep`.
pub fn load_pair(source: &DatasetSource, rep: usize) -> Result<(DomainPair, Option<LabelMap>)> {
    match source {
        DatasetSource::Synthetic { recipe } => {
            let recipe = recipe.with_seed(recipe.seed + rep as u64);
            Ok((generate_synthetic(&recipe)?, None))
        }
        DatasetSource::Files {
            source,
            target,
            format,
        } => {
            let sf = format.unwrap_or_else(|| FeatureFormat::from_path(source));
            let tf = format.unwrap_or_else(|| FeatureFormat::from_path(target));
            let (src, map) = into_source(load_features(source, sf)?, &name_of(source), source)?;
            let (tgt, truth) = into_target(load_features(target, tf)?, &name_of(target), &map)?;
            let mut pair = DomainPair::with_class_count(src, tgt, map.class_count())?;
            if let Some(truth) = truth {
                pair = pair.with_target_truth(truth)?;
            }
            Ok((pair, Some(map)))
        }
    }
}

fn name_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: String,
    pub rep: usize,
    pub accuracy: Option<f64>,
    pub converged_at: Option<usize>,
    pub iterations: usize,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub models: Vec<String>,
    pub repeat: usize,
    /// Unadapted 1-NN target accuracy per repeat, when ground truth exists.
    pub baseline: Vec<Option<f64>>,
    pub cells: Vec<CellResult>,
    /// Original label of each class index, for file datasets.
    #[serde(default)]
    pub class_labels: Option<Vec<i64>>,
}

impl ExperimentResults {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|c| c.error.is_some())
    }
}

pub struct ExperimentOutcome {
    pub results: ExperimentResults,
    pub reports: Vec<(String, usize, AdaptationReport)>,
}

/// Run every (model, repeat) cell and write all report files.
///
/// A failing cell is recorded and does not stop the others; only dataset or
/// output errors abort the run.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let out = &spec.output_dir;
    fs::create_dir_all(out.join("reports")).map_err(|e| Error::io(out, e))?;
    if spec.dump_embeddings {
        fs::create_dir_all(out.join("embeddings")).map_err(|e| Error::io(out, e))?;
    }

    let mut results = ExperimentResults {
        models: spec.models.iter().map(ToString::to_string).collect(),
        repeat: spec.repeat,
        baseline: Vec::new(),
        cells: Vec::new(),
        class_labels: None,
    };
    let mut reports = Vec::new();

    for rep in 0..spec.repeat {
        let (pair, map) = load_pair(&spec.dataset, rep)?;
        results.class_labels = map.map(|m| m.original);
        results.baseline.push(baseline_accuracy(&pair)?);

        for &model in &spec.models {
            let name = model.to_string();
            let outcome = spec
                .config_for(model)
                .and_then(|cfg| run_adaptation(&pair, &cfg, model));
            match outcome {
                Ok(report) => {
                    let stem = format!("{}_rep{rep}", slug(&name));
                    let path = out.join("reports").join(format!("{stem}.json"));
                    write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
                    if spec.dump_embeddings {
                        if let Some(z) = &report.embedding {
                            let csv = embedding_csv(z, &pair, &report.predicted);
                            let path = out.join("embeddings").join(format!("{stem}.csv"));
                            write_atomic(&path, csv.as_bytes())?;
                        }
                    }
                    results.cells.push(CellResult {
                        model: name.clone(),
                        rep,
                        accuracy: report.final_accuracy(),
                        converged_at: report.converged_at,
                        iterations: report.iterations.len(),
                        wall_time_secs: report.wall_time_secs,
                        error: None,
                    });
                    reports.push((name, rep, report));
                }
                Err(e) => results.cells.push(CellResult {
                    model: name,
                    rep,
                    accuracy: None,
                    converged_at: None,
                    iterations: 0,
                    wall_time_secs: 0.0,
                    error: Some(e.to_string()),
                }),
            }
        }
    }

    write_atomic(
        &out.join("results.json"),
        serde_json::to_string_pretty(&results)?.as_bytes(),
    )?;
    write_summaries(out, &results)?;
    Ok(ExperimentOutcome { results, reports })
}

/// Target accuracy of 1-NN trained on the raw source features.
pub fn baseline_accuracy(pair: &DomainPair) -> Result<Option<f64>> {
    let Some(truth) = &pair.target_truth else {
        return Ok(None);
    };
    let pred = nn_classify(
        &pair.source.features,
        &pair.source.labels,
        &pair.target.features,
    )?;
    Ok(Some(accuracy(&pred, truth)?))
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| match c {
            '+' => '_',
            c if c.is_ascii_alphanumeric() || c == '-' => c.to_ascii_lowercase(),
            _ => '_',
        })
        .collect()
}

fn embedding_csv(z: &crate::linalg::DenseMatrix, pair: &DomainPair, predicted: &[usize]) -> String {
    let mut s = String::new();
    for i in 0..z.nrows() {
        let _ = write!(s, "z{i},");
    }
    s.push_str("domain,label\n");
    let ns = pair.ns();
    for j in 0..z.ncols() {
        for v in z.column(j).iter() {
            let _ = write!(s, "{v:?},");
        }
        let (domain, label) = if j < ns {
            ("source", pair.source.labels[j])
        } else {
            ("target", predicted[j - ns])
        };
        let _ = writeln!(s, "{domain},{label}");
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    /// `(mean, min, max)` over successful repeats.
    pub accuracy: Option<(f64, f64, f64)>,
    pub delta_vs_base: Option<f64>,
    /// Fixed-point iteration of each repeat (`None` if the cap was hit).
    pub fixed_points: Vec<Option<usize>>,
    pub mean_wall_time: Option<f64>,
    pub failed: usize,
}

pub fn summarize(results: &ExperimentResults) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let baseline: Vec<f64> = results.baseline.iter().flatten().copied().collect();
    rows.push(SummaryRow {
        model: BASELINE_ROW.to_string(),
        accuracy: stats(&baseline),
        delta_vs_base: None,
        fixed_points: Vec::new(),
        mean_wall_time: None,
        failed: 0,
    });

    let mut means: BTreeMap<String, f64> = BTreeMap::new();
    for model in &results.models {
        let cells: Vec<&CellResult> = results.cells.iter().filter(|c| &c.model == model).collect();
        let accs: Vec<f64> = cells.iter().filter_map(|c| c.accuracy).collect();
        let failed = cells.iter().filter(|c| c.error.is_some()).count();
        let acc = if failed == 0 { stats(&accs) } else { None };
        if let Some((mean, _, _)) = acc {
            means.insert(model.clone(), mean);
        }
        let ok: Vec<&&CellResult> = cells.iter().filter(|c| c.error.is_none()).collect();
        rows.push(SummaryRow {
            model: model.clone(),
            accuracy: acc,
            delta_vs_base: None,
            fixed_points: ok.iter().map(|c| c.converged_at).collect(),
            mean_wall_time: (!ok.is_empty())
                .then(|| ok.iter().map(|c| c.wall_time_secs).sum::<f64>() / ok.len() as f64),
            failed,
        });
    }
    for row in rows.iter_mut().skip(1) {
        let Ok(kind) = row.model.parse::<ModelKind>() else {
            continue;
        };
        if kind.boundary == Boundary::None {
            continue;
        }
        let base = kind.baseline().to_string();
        if let (Some((mean, _, _)), Some(base_mean)) = (row.accuracy, means.get(&base)) {
            row.delta_vs_base = Some(mean - base_mean);
        }
    }
    rows
}

fn stats(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some((mean, min, max))
}

fn fixed_point_cell(points: &[Option<usize>]) -> String {
    points
        .iter()
        .map(|p| p.map_or_else(|| "none".to_string(), |v| v.to_string()))
        .collect::<Vec<_>>()
        .join(";")
}

/// Summary CSV. Contains no timing data, so identical inputs give identical bytes.
pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "model,accuracy,accuracy_min,accuracy_max,delta_vs_base,iterations_to_fixed_point,status\n",
    );
    for row in rows {
        let (acc, lo, hi) = match row.accuracy {
            Some((m, lo, hi)) => (m.to_string(), lo.to_string(), hi.to_string()),
            None => Default::default(),
        };
        let delta = row.delta_vs_base.map(|d| d.to_string()).unwrap_or_default();
        let status = if row.failed > 0 {
            format!("FAILED({})", row.failed)
        } else {
            "ok".to_string()
        };
        let _ = writeln!(
            s,
            "{},{acc},{lo},{hi},{delta},{},{status}",
            row.model,
            fixed_point_cell(&row.fixed_points)
        );
    }
    s
}

pub fn render_markdown(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "| model | accuracy (%) | range (%) | Δ vs base (pts) | iterations to fixed point | wall time (s) |\n\
         |---|---|---|---|---|---|\n",
    );
    for row in rows {
        let (acc, range) = match row.accuracy {
            Some((m, lo, hi)) => (
                format!("{:.2}", 100.0 * m),
                format!("{:.2} – {:.2}", 100.0 * lo, 100.0 * hi),
            ),
            None if row.failed > 0 => ("FAILED".to_string(), String::new()),
            None => ("n/a".to_string(), String::new()),
        };
        let delta = row
            .delta_vs_base
            .map(|d| format!("{:+.2}", 100.0 * d))
            .unwrap_or_default();
        let wall = row
            .mean_wall_time
            .map(|t| format!("{t:.3}"))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "| {} | {acc} | {range} | {delta} | {} | {wall} |",
            row.model,
            fixed_point_cell(&row.fixed_points)
        );
    }
    s
}

pub fn render_timing(results: &ExperimentResults) -> String {
    let mut s = String::from("model,rep,wall_time_secs\n");
    for c in &results.cells {
        let _ = writeln!(s, "{},{},{}", c.model, c.rep, c.wall_time_secs);
    }
    s
}

pub fn write_summaries(out: &Path, results: &ExperimentResults) -> Result<()> {
    let rows = summarize(results);
    write_atomic(&out.join("summary.csv"), render_csv(&rows).as_bytes())?;
    write_atomic(&out.join("summary.md"), render_markdown(&rows).as_bytes())?;
    write_atomic(&out.join("timing.csv"), render_timing(results).as_bytes())
}

/// Re-render the summary files from a stored `results.json`.
pub fn rerender(out: &Path) -> Result<ExperimentResults> {
    let path = out.join("results.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let results: ExperimentResults = serde_json::from_str(&text)?;
    write_summaries(out, &results)?;
    Ok(results)
}
