//! Experiment protocol: a fixed group-level test set, k-fold training over
//! the remainder, power sweeps for CDW-CE, and persisted TOML reports.
//!
//! Every run is a pure function of its [`ExperimentConfig`]. Folds are
//! independent jobs whose seeds derive from `(seed, loss, power, fold)`, so
//! the number of worker threads never changes a result.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{
    generate_synthetic, group_holdout_indices, group_kfold, load_csv, Dataset, FoldAssignment,
    SplitIndices, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics::{summary_metrics, MetricSummary};
use crate::model::{predict_dataset, train, TrainConfig, DEFAULT_LR};
use crate::numeric::derive_seed;

/// Current report schema version.
pub const REPORT_VERSION: u32 = 1;

pub const DEFAULT_TEST_FRACTION: f64 = 0.15;
pub const DEFAULT_FOLDS: usize = 10;

const DATA_STREAM: u64 = 11;
const HOLDOUT_STREAM: u64 = 12;
const KFOLD_STREAM: u64 = 13;
const TRAIN_STREAM: u64 = 14;
const VALIDATION_STREAM: u64 = 15;

/// Where an experiment's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticConfig),
    Csv(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticConfig::default())
    }
}

/// Everything needed to rerun an experiment. Serialized verbatim into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub losses: Vec<LossKind>,
    /// Each `cdw_ce` entry in `losses` runs once per power.
    pub powers: Vec<f64>,
    pub folds: usize,
    pub test_fraction: f64,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            losses: vec![LossKind::Ce],
            powers: Vec::new(),
            folds: DEFAULT_FOLDS,
            test_fraction: DEFAULT_TEST_FRACTION,
            hidden: train.hidden,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: DEFAULT_LR,
            seed: 0,
            data: DataSource::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() {
            return Err(Error::invalid("loss list is empty"));
        }
        if let Some(p) = self.powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(format!("powers must be positive, got {p}")));
        }
        if self.losses.contains(&LossKind::CdwCe) && self.powers.is_empty() {
            return Err(Error::invalid("cdw_ce needs at least one power"));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::invalid(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        self.train_config(self.losses[0], self.powers.first().copied(), 0).validate()
    }

    /// `(loss, power)` pairs in execution and report order.
    pub fn plan(&self) -> Vec<(LossKind, Option<f64>)> {
        let mut plan = Vec::new();
        for &loss in &self.losses {
            if loss == LossKind::CdwCe {
                plan.extend(self.powers.iter().map(|&p| (loss, Some(p))));
            } else {
                plan.push((loss, None));
            }
        }
        plan
    }

    pub fn train_config(&self, loss: LossKind, power: Option<f64>, seed: u64) -> TrainConfig {
        TrainConfig {
            loss,
            power: if loss == LossKind::CdwCe { power } else { None },
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
        }
    }

    /// First 16 hex digits of the SHA-256 of the serialized config.
    pub fn experiment_id(&self) -> Result<String> {
        let text = toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }
}

/// Loads (or generates) the dataset named by a config.
pub fn resolve_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.data {
        DataSource::Synthetic(s) => generate_synthetic(s, derive_seed(&[config.seed, DATA_STREAM])),
        DataSource::Csv(path) => load_csv(path, None),
    }
}

/// The splits of one experiment. Fold indices refer to `pool`.
#[derive(Debug, Clone)]
pub struct ExperimentSplits {
    pub dataset: Dataset,
    /// `train` is the cross-validation pool, `test` the fixed test set.
    pub holdout: SplitIndices,
    pub pool: Dataset,
    pub test: Dataset,
    pub folds: FoldAssignment,
}

pub fn prepare_splits(config: &ExperimentConfig) -> Result<ExperimentSplits> {
    let dataset = resolve_dataset(config)?;
    let holdout = group_holdout_indices(
        &dataset,
        config.test_fraction,
        derive_seed(&[config.seed, HOLDOUT_STREAM]),
    )?;
    let pool = dataset.subset(&holdout.train);
    let test = dataset.subset(&holdout.test);
    let folds = group_kfold(&pool, config.folds, derive_seed(&[config.seed, KFOLD_STREAM]))?;
    Ok(ExperimentSplits {
        dataset,
        holdout,
        pool,
        test,
        folds,
    })
}

fn loss_id(loss: LossKind) -> u64 {
    match loss {
        LossKind::Ce => 0,
        LossKind::CdwCe => 1,
        LossKind::Corn => 2,
    }
}

/// Seed for one training run.
pub fn run_seed(master: u64, loss: LossKind, power: Option<f64>, fold: usize) -> u64 {
    let power_bits = power.map_or(0, f64::to_bits);
    derive_seed(&[master, TRAIN_STREAM, loss_id(loss), power_bits, fold as u64])
}

/// Execution knobs that never affect results, except `record_timings`,
/// which fills in `seconds` and so breaks byte-for-byte reproducibility.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; `0` means one per available core.
    pub jobs: usize,
    pub record_timings: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub loss: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    pub fold: usize,
    pub qwk: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub train_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRecord {
    pub loss: LossKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    pub folds: usize,
    pub mean_qwk: f64,
    pub std_qwk: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub version: u32,
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<SummaryRecord>,
}

impl ExperimentReport {
    /// Summary for one `(loss, power)` pair.
    pub fn summary(&self, loss: LossKind, power: Option<f64>) -> Option<&SummaryRecord> {
        self.summaries.iter().find(|s| s.loss == loss && s.power == power)
    }

    pub fn runs_for(&self, loss: LossKind, power: Option<f64>) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.loss == loss && r.power == power)
    }
}

/// Arithmetic mean and sample standard deviation (`n - 1` denominator).
/// A single value has standard deviation 0.
pub fn summarize(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

fn summaries(plan: &[(LossKind, Option<f64>)], runs: &[RunRecord]) -> Result<Vec<SummaryRecord>> {
    plan.iter()
        .map(|&(loss, power)| {
            let group: Vec<&RunRecord> =
                runs.iter().filter(|r| r.loss == loss && r.power == power).collect();
            let qwk: Vec<f64> = group.iter().map(|r| r.qwk).collect();
            let mae: Vec<f64> = group.iter().map(|r| r.mae).collect();
            let (mean_qwk, std_qwk) = summarize(&qwk)?;
            let (mean_mae, std_mae) = summarize(&mae)?;
            Ok(SummaryRecord {
                loss,
                power,
                folds: group.len(),
                mean_qwk,
                std_qwk,
                mean_mae,
                std_mae,
            })
        })
        .collect()
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))
}

fn run_label(loss: LossKind, power: Option<f64>) -> String {
    match power {
        Some(p) => format!("{loss} power {p}"),
        None => loss.to_string(),
    }
}

fn train_and_score(
    train_set: &Dataset,
    eval_set: &Dataset,
    config: &TrainConfig,
) -> Result<(MetricSummary, f64)> {
    let fit = train(train_set, config)?;
    let preds = predict_dataset(&fit.model, eval_set)?;
    let metrics = summary_metrics(&preds, eval_set.labels(), eval_set.n_classes())?;
    Ok((metrics, fit.final_loss()))
}

/// Trains one fresh model per fold and `(loss, power)` pair, scoring each on
/// the shared test set.
pub fn run_cross_validation(config: &ExperimentConfig, options: RunOptions) -> Result<ExperimentReport> {
    config.validate()?;
    let splits = prepare_splits(config)?;
    let plan = config.plan();
    let jobs: Vec<(LossKind, Option<f64>, usize)> = plan
        .iter()
        .flat_map(|&(loss, power)| (0..splits.folds.k()).map(move |f| (loss, power, f)))
        .collect();

    let run_one = |&(loss, power, fold): &(LossKind, Option<f64>, usize)| -> Result<RunRecord> {
        let started = Instant::now();
        let train_set = splits.pool.subset(&splits.folds.folds[fold].train);
        let tc = config.train_config(loss, power, run_seed(config.seed, loss, power, fold));
        let (m, train_loss) = train_and_score(&train_set, &splits.test, &tc).map_err(|e| Error::Fold {
            fold,
            loss: run_label(loss, power),
            source: Box::new(e),
        })?;
        Ok(RunRecord {
            loss,
            power,
            fold,
            qwk: m.qwk,
            mae: m.mae,
            accuracy: m.accuracy,
            train_loss,
            seconds: if options.record_timings {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    };
    let runs = thread_pool(options.jobs)?.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

    Ok(ExperimentReport {
        version: REPORT_VERSION,
        experiment_id: config.experiment_id()?,
        summaries: summaries(&plan, &runs)?,
        config: config.clone(),
        runs,
    })
}

/// Cross-validates CDW-CE once per power, in the given order.
pub fn power_sweep(config: &ExperimentConfig, powers: &[f64], options: RunOptions) -> Result<ExperimentReport> {
    if powers.is_empty() {
        return Err(Error::invalid("power sweep needs at least one power"));
    }
    let sweep = ExperimentConfig {
        losses: vec![LossKind::CdwCe],
        powers: powers.to_vec(),
        ..config.clone()
    };
    run_cross_validation(&sweep, options)
}

pub fn report_to_toml(report: &ExperimentReport) -> Result<String> {
    toml::to_string(report).map_err(|e| Error::Schema(e.to_string()))
}

pub fn report_from_toml(text: &str) -> Result<ExperimentReport> {
    #[derive(Deserialize)]
    struct VersionProbe {
        version: Option<u32>,
    }
    let probe: VersionProbe = toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))?;
    match probe.version {
        None => return Err(Error::Schema("missing field `version`".into())),
        Some(REPORT_VERSION) => {}
        Some(v) => return Err(Error::Schema(format!("unsupported report version {v}"))),
    }
    toml::from_str(text).map_err(|e| Error::Schema(e.message().to_string()))
}

pub fn write_report(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_to_toml(report)?).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_toml(&text)
}

/// Outcome of choosing the CDW-CE power on a validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSelection {
    pub baseline: MetricSummary,
    pub best_power: f64,
    /// Test metrics of the selected power.
    pub selected: MetricSummary,
    /// `(power, validation QWK)` for every candidate.
    pub validation: Vec<(f64, f64)>,
    /// Test split of the full dataset, then validation split of the remainder.
    pub splits: [SplitIndices; 2],
    pub dataset: Dataset,
    pub pool: Dataset,
}

/// Holds out a test set, carves a validation set from the rest, trains the
/// `baseline` loss and CDW-CE at every power on what remains, and picks the
/// power with the highest validation QWK (earliest wins ties).
pub fn select_power_on_validation(
    config: &ExperimentConfig,
    baseline: LossKind,
    powers: &[f64],
    options: RunOptions,
) -> Result<PowerSelection> {
    if powers.is_empty() {
        return Err(Error::invalid("power selection needs at least one power"));
    }
    let dataset = resolve_dataset(config)?;
    let test_split = group_holdout_indices(
        &dataset,
        config.test_fraction,
        derive_seed(&[config.seed, HOLDOUT_STREAM]),
    )?;
    let pool = dataset.subset(&test_split.train);
    let test = dataset.subset(&test_split.test);
    let val_split = group_holdout_indices(
        &pool,
        config.test_fraction,
        derive_seed(&[config.seed, VALIDATION_STREAM]),
    )?;
    let train_set = pool.subset(&val_split.train);
    let val = pool.subset(&val_split.test);

    let mut candidates = vec![(baseline, None)];
    candidates.extend(powers.iter().map(|&p| (LossKind::CdwCe, Some(p))));
    let score = |&(loss, power): &(LossKind, Option<f64>)| -> Result<(MetricSummary, MetricSummary)> {
        let tc = config.train_config(loss, power, run_seed(config.seed, loss, power, 0));
        let fit = train(&train_set, &tc)?;
        let eval = |d: &Dataset| summary_metrics(&predict_dataset(&fit.model, d)?, d.labels(), d.n_classes());
        Ok((eval(&val)?, eval(&test)?))
    };
    let scored = thread_pool(options.jobs)?
        .install(|| candidates.par_iter().map(score).collect::<Result<Vec<_>>>())?;

    let mut best = 1;
    for i in 2..scored.len() {
        if scored[i].0.qwk > scored[best].0.qwk {
            best = i;
        }
    }
    Ok(PowerSelection {
        baseline: scored[0].1,
        best_power: powers[best - 1],
        selected: scored[best].1,
        validation: powers.iter().zip(&scored[1..]).map(|(&p, s)| (p, s.0.qwk)).collect(),
        splits: [test_split, val_split],
        dataset,
        pool,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            losses: vec![LossKind::Ce, LossKind::CdwCe],
            powers: vec![2.0, 1.0],
            folds: 3,
            epochs: 2,
            hidden: vec![4],
            data: DataSource::Synthetic(SyntheticConfig {
                n_groups: 12,
                samples_per_group: 5,
                ..SyntheticConfig::default()
            }),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn summarize_examples() {
        assert_eq!(summarize(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0));
        assert_eq!(summarize(&[5.0]).unwrap(), (5.0, 0.0));
        let (m, s) = summarize(&[0.8, 0.8, 0.8]).unwrap();
        assert_abs_diff_eq!(m, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn plan_expands_powers_in_order() {
        let plan = tiny().plan();
        assert_eq!(
            plan,
            vec![
                (LossKind::Ce, None),
                (LossKind::CdwCe, Some(2.0)),
                (LossKind::CdwCe, Some(1.0)),
            ]
        );
    }

    #[test]
    fn validation_errors() {
        let mut c = tiny();
        c.losses.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.powers.clear();
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.powers.push(-1.0);
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.folds = 1;
        assert!(c.validate().is_err());
        let mut c = tiny();
        c.test_fraction = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn report_shape_and_ordering() {
        let report = run_cross_validation(&tiny(), RunOptions { jobs: 2, ..Default::default() }).unwrap();
        assert_eq!(report.runs.len(), 9);
        assert_eq!(report.summaries.len(), 3);
        let keys: Vec<(LossKind, Option<f64>, usize)> =
            report.runs.iter().map(|r| (r.loss, r.power, r.fold)).collect();
        assert_eq!(keys[0], (LossKind::Ce, None, 0));
        assert_eq!(keys[3], (LossKind::CdwCe, Some(2.0), 0));
        assert_eq!(keys[8], (LossKind::CdwCe, Some(1.0), 2));
        assert!(report.runs.iter().all(|r| r.seconds == 0.0));
    }

    #[test]
    fn sweep_has_one_entry_per_power() {
        let powers = [1.0, 2.0, 3.0, 5.0, 7.0, 9.0];
        let report = power_sweep(&tiny(), &powers, RunOptions::default()).unwrap();
        let got: Vec<Option<f64>> = report.summaries.iter().map(|s| s.power).collect();
        assert_eq!(got, powers.iter().map(|&p| Some(p)).collect::<Vec<_>>());
        assert!(power_sweep(&tiny(), &[], RunOptions::default()).is_err());
    }

    #[test]
    fn missing_csv_is_an_io_error() {
        let mut c = tiny();
        c.data = DataSource::Csv(PathBuf::from("/nonexistent/data.csv"));
        assert!(matches!(run_cross_validation(&c, RunOptions::default()), Err(Error::Io { .. })));
    }

    #[test]
    fn fold_failure_names_the_fold() {
        let mut c = tiny();
        c.lr = 1e300;
        match run_cross_validation(&c, RunOptions::default()) {
            Err(Error::Fold { fold, loss, .. }) => {
                assert_eq!(fold, 0);
                assert_eq!(loss, "ce");
            }
            other => panic!("expected a fold error, got {other:?}"),
        }
    }

    #[test]
    fn experiment_id_tracks_config() {
        let a = tiny();
        let mut b = tiny();
        assert_eq!(a.experiment_id().unwrap(), b.experiment_id().unwrap());
        b.seed = 1;
        assert_ne!(a.experiment_id().unwrap(), b.experiment_id().unwrap());
        assert_eq!(a.experiment_id().unwrap().len(), 16);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = tiny();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        let csv = ExperimentConfig {
            data: DataSource::Csv(PathBuf::from("data.csv")),
            ..tiny()
        };
        assert_eq!(ExperimentConfig::from_toml(&csv.to_toml().unwrap()).unwrap(), csv);
    }
}
