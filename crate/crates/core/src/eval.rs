//! Misclassification metrics, experiment execution and grid sweeps.
//!
//! An experiment directory holds:
//!
//! * `config.json`: the resolved config;
//! * `metrics.csv`: one row per generator step (per optimizer step for the
//!   supervised baseline), with epoch-level errors on the last row of each
//!   epoch and empty cells where a value does not apply;
//! * `final_report.json`: summary with the best-validation epoch and its
//!   test error;
//! * `best.ckpt.json`: parameters at the best-validation epoch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{validate_config, ExperimentConfig, ValidationReport};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{self, BestEpoch, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Fraction of rows whose argmax (lowest index on ties) differs from the label.
pub fn misclassification_rate(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Invalid("misclassification rate of an empty set".into()));
    }
    if probs.rank() != 2 || probs.shape()[0] != n {
        return Err(Error::Shape(format!("probs {:?} for {n} labels", probs.shape())));
    }
    let wrong = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) != y)
        .count();
    Ok(wrong as f64 / n as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub epoch: usize,
    pub critic_loss: f64,
    pub gen_loss: Option<f64>,
    pub omega_f_hat: Option<f64>,
    pub omega_s_hat: Option<f64>,
    pub omega_gp_hat: Option<f64>,
    pub lambda_f: Option<f64>,
    pub lambda_s: Option<f64>,
    pub ce_loss: f64,
    pub train_lab_error: Option<f64>,
    pub val_error: Option<f64>,
    pub test_error: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,epoch,critic_loss,gen_loss,omega_f_hat,omega_s_hat,omega_gp_hat,lambda_f,lambda_s,ce_loss,train_lab_error,val_error,test_error";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn csv_row(&self) -> String {
        [
            self.step.to_string(),
            self.epoch.to_string(),
            self.critic_loss.to_string(),
            cell(self.gen_loss),
            cell(self.omega_f_hat),
            cell(self.omega_s_hat),
            cell(self.omega_gp_hat),
            cell(self.lambda_f),
            cell(self.lambda_s),
            self.ce_loss.to_string(),
            cell(self.train_lab_error),
            cell(self.val_error),
            cell(self.test_error),
        ]
        .join(",")
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Ssl,
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalReport {
    pub label: String,
    pub mode: RunMode,
    pub seed: u64,
    pub epochs: usize,
    pub critic_steps: usize,
    pub generator_steps: usize,
    pub best_epoch: Option<usize>,
    pub best_val_error: Option<f64>,
    /// Test error at the best-validation epoch.
    pub test_error: Option<f64>,
    pub final_val_error: Option<f64>,
    pub final_test_error: Option<f64>,
    pub final_train_ce: Option<f64>,
    pub final_lambda_f: Option<f64>,
    pub final_lambda_s: Option<f64>,
    pub final_omega_f: Option<f64>,
    pub final_omega_f_plus: Option<f64>,
    pub final_omega_f_minus: Option<f64>,
}

/// Why an experiment did not produce a report.
#[derive(Debug)]
pub enum RunFailure {
    Invalid(ValidationReport),
    Error(Error),
}

impl RunFailure {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunFailure::Invalid(_) => EXIT_INVALID,
            RunFailure::Error(Error::Diverged { .. }) => EXIT_DIVERGED,
            RunFailure::Error(Error::Config(_) | Error::Json(_)) => EXIT_INVALID,
            RunFailure::Error(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunFailure::Invalid(r) => write!(f, "config rejected:\n{r}"),
            RunFailure::Error(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for RunFailure {
    fn from(e: Error) -> Self {
        RunFailure::Error(e)
    }
}

fn best_fields(best: &Option<BestEpoch>) -> (Option<usize>, Option<f64>, Option<f64>) {
    best.as_ref()
        .map_or((None, None, None), |b| (Some(b.epoch), Some(b.val_error), b.test_error))
}

/// Validates and runs `cfg`, writing all outputs into `out_dir`.
pub fn execute(cfg: &ExperimentConfig, mode: RunMode, out_dir: &Path) -> std::result::Result<FinalReport, RunFailure> {
    let mut cfg = cfg.clone();
    if mode == RunMode::Supervised {
        cfg.ipm = None;
        cfg.placements.clear();
    }
    let report = validate_config(&cfg);
    if !report.is_ok() {
        return Err(RunFailure::Invalid(report));
    }
    fs::create_dir_all(out_dir).map_err(Error::from)?;
    fs::write(out_dir.join("config.json"), cfg.to_json_string()?).map_err(Error::from)?;
    let opts = TrainOptions {
        checkpoint: Some(out_dir.join("best.ckpt.json")),
    };
    let metrics_path = out_dir.join("metrics.csv");
    let last = |epochs: &[training::EpochSummary]| epochs.last().map(|e| (e.val_error, e.test_error));
    let final_report = match mode {
        RunMode::Ssl => {
            let out = training::train(&cfg, &opts)?;
            fs::write(&metrics_path, metrics_csv(&out.metrics)).map_err(Error::from)?;
            let (best_epoch, best_val_error, test_error) = best_fields(&out.best);
            let (final_val_error, final_test_error) = last(&out.epochs).unwrap_or((None, None));
            let active = out.state.constraints.active;
            let probe = out.probe.as_ref();
            FinalReport {
                label: cfg.label(),
                mode,
                seed: cfg.seed,
                epochs: cfg.hyper.epochs,
                critic_steps: out.state.critic_steps,
                generator_steps: out.state.gen_steps,
                best_epoch,
                best_val_error,
                test_error,
                final_val_error,
                final_test_error,
                final_train_ce: probe.map(|p| p.train_ce),
                final_lambda_f: active.fisher.then_some(out.state.constraints.lambda_f),
                final_lambda_s: active.sobolev.then_some(out.state.constraints.lambda_s),
                final_omega_f: probe.map(|p| p.omega_f),
                final_omega_f_plus: probe.and_then(|p| p.omega_f_plus),
                final_omega_f_minus: probe.and_then(|p| p.omega_f_minus),
            }
        }
        RunMode::Supervised => {
            let out = training::supervised_baseline(&cfg, &opts)?;
            fs::write(&metrics_path, metrics_csv(&out.metrics)).map_err(Error::from)?;
            let (best_epoch, best_val_error, test_error) = best_fields(&out.best);
            let (final_val_error, final_test_error) = last(&out.epochs).unwrap_or((None, None));
            FinalReport {
                label: cfg.label(),
                mode,
                seed: cfg.seed,
                epochs: cfg.hyper.epochs,
                critic_steps: out.metrics.len(),
                generator_steps: 0,
                best_epoch,
                best_val_error,
                test_error,
                final_val_error,
                final_test_error,
                final_train_ce: out.train_ce,
                final_lambda_f: None,
                final_lambda_s: None,
                final_omega_f: None,
                final_omega_f_plus: None,
                final_omega_f_minus: None,
            }
        }
    };
    let text = serde_json::to_string_pretty(&final_report).map_err(Error::from)?;
    fs::write(out_dir.join("final_report.json"), text).map_err(Error::from)?;
    Ok(final_report)
}

/// CLI entry for `run` and `baseline`: loads the config, applies the seed and
/// overrides, runs, and maps the outcome to an exit code. Diagnostics go to
/// stderr.
pub fn run_experiment(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    overrides: &[String],
    force_supervised: bool,
) -> i32 {
    let cfg = match ExperimentConfig::load(config_path, overrides) {
        Ok(mut c) => {
            if let Some(s) = seed {
                c.seed = s;
            }
            c
        }
        Err(e) => {
            eprintln!("error: cannot load {}: {e}", config_path.display());
            return match e {
                Error::Io(_) => EXIT_FAILURE,
                _ => EXIT_INVALID,
            };
        }
    };
    let mode = if force_supervised || cfg.ipm.is_none() {
        RunMode::Supervised
    } else {
        RunMode::Ssl
    };
    match execute(&cfg, mode, out_dir) {
        Ok(r) => {
            for w in &validate_config(&cfg).warnings {
                eprintln!("warning[{}]: {}", w.code, w.message);
            }
            eprintln!(
                "done: best epoch {:?}, val error {:?}, test error {:?}",
                r.best_epoch, r.best_val_error, r.test_error
            );
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}

/// One varied dimension of a sweep.
///
/// With a `key`, each value is assigned to that dotted path of the base
/// config. Without one, each value is an object merged into the top level,
/// which lets a single axis vary several fields together (for instance the
/// IPM and its placements).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub name: String,
    #[serde(default)]
    pub key: Option<String>,
    pub values: Vec<Value>,
    /// Display names for `values`, used in the table.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

/// A base config document plus the axes to vary. An axis named `seed` is the
/// aggregation axis: its values are averaged over instead of forming rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: Value,
    pub axes: Vec<SweepAxis>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        if !self.base.is_object() {
            return Err(Error::Config("sweep `base` must be a config object".into()));
        }
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(Error::Config(format!("sweep axis `{}` has no values", a.name)));
            }
            if a.labels.as_ref().is_some_and(|l| l.len() != a.values.len()) {
                return Err(Error::Config(format!("sweep axis `{}`: one label per value", a.name)));
            }
            if a.key.is_none() && a.values.iter().any(|v| !v.is_object()) {
                return Err(Error::Config(format!(
                    "sweep axis `{}` has no key, so its values must be objects",
                    a.name
                )));
            }
        }
        Ok(())
    }

    fn seed_axis(&self) -> Option<&SweepAxis> {
        self.axes.iter().find(|a| a.name == "seed")
    }

    fn row_axes(&self) -> Vec<&SweepAxis> {
        self.axes.iter().filter(|a| a.name != "seed").collect()
    }

    /// Row coordinates (value index per non-seed axis) in declaration order,
    /// the last axis varying fastest.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        let axes = self.row_axes();
        let mut rows = vec![vec![]];
        for a in axes {
            rows = rows
                .into_iter()
                .flat_map(|r| {
                    (0..a.values.len()).map(move |i| {
                        let mut r = r.clone();
                        r.push(i);
                        r
                    })
                })
                .collect();
        }
        rows
    }

    pub fn seeds(&self) -> Vec<Value> {
        self.seed_axis().map_or_else(|| vec![Value::Null], |a| a.values.clone())
    }

    /// The config document for one cell; a `Null` seed keeps the base seed.
    pub fn cell_document(&self, row: &[usize], seed: &Value) -> Result<Value> {
        let mut doc = self.base.clone();
        for (a, &i) in self.row_axes().iter().zip(row) {
            apply_axis(&mut doc, a, &a.values[i])?;
        }
        if !seed.is_null() {
            let axis = self.seed_axis().expect("non-null seed comes from the seed axis");
            apply_axis(&mut doc, axis, seed)?;
        }
        Ok(doc)
    }

    pub fn row_labels(&self, row: &[usize]) -> Vec<String> {
        self.row_axes()
            .iter()
            .zip(row)
            .map(|(a, &i)| match &a.labels {
                Some(l) => l[i].clone(),
                None => value_label(&a.values[i]),
            })
            .collect()
    }
}

fn apply_axis(doc: &mut Value, axis: &SweepAxis, value: &Value) -> Result<()> {
    match &axis.key {
        Some(key) => set_path(doc, key, value.clone()),
        None => {
            let obj = doc.as_object_mut().expect("base checked to be an object");
            for (k, v) in value.as_object().expect("checked to be an object") {
                obj.insert(k.clone(), v.clone());
            }
            Ok(())
        }
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep key `{key}` crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Mean and population (÷n) standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Rejected,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub row: usize,
    pub seed: Value,
    pub status: CellStatus,
    pub test_error: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    /// Some seeds failed at run time; statistics cover the rest.
    Partial,
    Failed,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axes: Vec<String>,
    pub status: RowStatus,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_seeds: usize,
    pub reason: Option<String>,
}

/// Aggregates cell results into one row per axis combination.
pub fn aggregate(spec: &SweepSpec, cells: &[CellResult]) -> Vec<SweepRow> {
    spec.rows()
        .iter()
        .enumerate()
        .map(|(r, coords)| {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.row == r).collect();
            let errors: Vec<f64> = mine.iter().filter_map(|c| c.test_error).collect();
            let rejected = mine.iter().any(|c| c.status == CellStatus::Rejected);
            let failed = mine.iter().filter(|c| c.status == CellStatus::Failed).count();
            let status = if rejected {
                RowStatus::Rejected
            } else if errors.is_empty() {
                RowStatus::Failed
            } else if failed > 0 {
                RowStatus::Partial
            } else {
                RowStatus::Ok
            };
            let stats = mean_std(&errors);
            let reason = mine.iter().find_map(|c| c.reason.clone());
            SweepRow {
                axes: spec.row_labels(coords),
                status,
                mean: stats.map(|s| s.0),
                std: stats.map(|s| s.1),
                n_seeds: errors.len(),
                reason,
            }
        })
        .collect()
}

pub fn sweep_csv(spec: &SweepSpec, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = spec.row_axes().iter().map(|a| csv_field(&a.name)).collect();
    header.extend(["status", "mean", "std", "n_seeds", "reason"].map(String::from));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let mut fields: Vec<String> = r.axes.iter().map(|a| csv_field(a)).collect();
        let status = serde_json::to_value(&r.status).expect("enum serializes");
        fields.push(value_label(&status));
        fields.push(cell(r.mean));
        fields.push(cell(r.std));
        fields.push(r.n_seeds.to_string());
        fields.push(csv_field(r.reason.as_deref().unwrap_or("")));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn cells_csv(spec: &SweepSpec, cells: &[CellResult]) -> String {
    let rows = spec.rows();
    let mut out = String::new();
    let mut header: Vec<String> = spec.row_axes().iter().map(|a| csv_field(&a.name)).collect();
    header.extend(["seed", "status", "test_error", "reason"].map(String::from));
    out.push_str(&header.join(","));
    out.push('\n');
    for c in cells {
        let mut fields: Vec<String> = spec.row_labels(&rows[c.row]).iter().map(|a| csv_field(a)).collect();
        fields.push(csv_field(&value_label(&c.seed)));
        let status = serde_json::to_value(&c.status).expect("enum serializes");
        fields.push(value_label(&status));
        fields.push(cell(c.test_error));
        fields.push(csv_field(c.reason.as_deref().unwrap_or("")));
        let _ = write!(out, "{}", fields.join(","));
        out.push('\n');
    }
    out
}

fn run_cell(spec: &SweepSpec, row: usize, coords: &[usize], seed: &Value, dir: PathBuf) -> CellResult {
    let result = |status, test_error, reason| CellResult {
        row,
        seed: seed.clone(),
        status,
        test_error,
        reason,
    };
    let cfg = match spec
        .cell_document(coords, seed)
        .and_then(ExperimentConfig::from_value)
    {
        Ok(c) => c,
        Err(e) => return result(CellStatus::Rejected, None, Some(e.to_string())),
    };
    let mode = if cfg.ipm.is_some() { RunMode::Ssl } else { RunMode::Supervised };
    match execute(&cfg, mode, &dir) {
        Ok(r) => match r.test_error {
            Some(t) => result(CellStatus::Ok, Some(t), None),
            None => result(CellStatus::Failed, None, Some("no test error recorded".into())),
        },
        Err(RunFailure::Invalid(rep)) => {
            let reasons: Vec<String> = rep.errors.iter().map(|e| format!("{}: {}", e.code, e.message)).collect();
            result(CellStatus::Rejected, None, Some(reasons.join("; ")))
        }
        Err(RunFailure::Error(e)) => result(CellStatus::Failed, None, Some(e.to_string())),
    }
}

/// Runs every cell of the sweep on up to `jobs` threads and writes
/// `summary.csv`, `cells.csv` and one experiment directory per cell.
pub fn run_sweep(spec: &SweepSpec, out_dir: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    spec.check()?;
    fs::create_dir_all(out_dir)?;
    let rows = spec.rows();
    let seeds = spec.seeds();
    let tasks: Vec<(usize, usize)> = (0..rows.len())
        .flat_map(|r| (0..seeds.len()).map(move |s| (r, s)))
        .collect();
    let results: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(r, s)) = tasks.get(t) else { break };
                let dir = out_dir.join("cells").join(format!("row{r:03}_seed{s:02}"));
                let res = run_cell(spec, r, &rows[r], &seeds[s], dir);
                results.lock().expect("no worker panicked")[t] = Some(res);
            });
        }
    });
    let cells: Vec<CellResult> = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|c| c.expect("every task ran"))
        .collect();
    let table = aggregate(spec, &cells);
    fs::write(out_dir.join("summary.csv"), sweep_csv(spec, &table))?;
    fs::write(out_dir.join("cells.csv"), cells_csv(spec, &cells))?;
    Ok(table)
}
