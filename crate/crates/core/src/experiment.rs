//! Config-driven experiments: defense sweeps with attack grids, long-form
//! and summary CSV reports, tradeoff plots, and theory runs.
//!
//! Every cell `(defense, value, trial)` derives all of its randomness from
//! the base seed and the trial index, so results do not depend on how many
//! worker threads run the sweep.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::attack::{
    clustering_attack, fine_tuning_attack, raw_clustering, scratch_baseline, AttackConfig, AttackKind,
    AttackReport,
};
use crate::autograd::Activation;
use crate::checkpoint::Checkpoint;
use crate::data::{self, BlobParams, Dataset, LeakSpec, Partition, ShellParams, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::AdvantageRecord;
use crate::losses::{DefenseKind, LossConfig};
use crate::nn::{build_mlp, AdamConfig, LayerSpec, SplitModel};
use crate::protocol::{split_train, test_accuracy, TrainConfig};
use crate::rng;
use crate::svg;
use crate::theory;

pub const SCHEMA_VERSION: u32 = 1;

/// Line and column (1-based) of a byte offset.
pub fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn config_error(path: &Path, text: &str, span: Option<Range<usize>>, message: impl Into<String>) -> Error {
    let (line, column) = span.map_or((1, 1), |s| line_col(text, s.start));
    Error::Config {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Parses TOML into `T`, checking `schema_version` and mapping errors to
/// line/column diagnostics.
pub fn parse_config<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    #[derive(Deserialize)]
    struct Version {
        schema_version: Option<Spanned<u32>>,
    }
    let version: Version = toml::from_str(text).map_err(|e| {
        config_error(path, text, e.span(), e.message().trim().to_owned())
    })?;
    match version.schema_version {
        None => return Err(config_error(path, text, None, "missing schema_version")),
        Some(v) if *v.get_ref() != SCHEMA_VERSION => {
            return Err(config_error(
                path,
                text,
                Some(v.span()),
                format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", v.get_ref()),
            ))
        }
        Some(_) => {}
    }
    toml::from_str(text).map_err(|e| config_error(path, text, e.span(), e.message().trim().to_owned()))
}

pub fn read_config_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    GaussianBlobs {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_center_scale")]
        center_scale: f64,
        #[serde(default = "default_noise")]
        noise: f64,
        seed: Option<u64>,
        split: Option<SplitSpec>,
    },
    ConcentricShells {
        classes: usize,
        dim: usize,
        per_class: usize,
        #[serde(default = "default_gap")]
        gap: f64,
        #[serde(default = "default_shell_noise")]
        noise: f64,
        seed: Option<u64>,
        split: Option<SplitSpec>,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        split: Option<SplitSpec>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        /// Keep only the first `limit` samples.
        limit: Option<usize>,
        split: Option<SplitSpec>,
    },
}

fn default_center_scale() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_gap() -> f64 {
    2.0
}
fn default_shell_noise() -> f64 {
    0.1
}
fn default_label_column() -> String {
    "label".into()
}

impl DatasetConfig {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetConfig::GaussianBlobs { .. } => "gaussian_blobs",
            DatasetConfig::ConcentricShells { .. } => "concentric_shells",
            DatasetConfig::Csv { .. } => "csv",
            DatasetConfig::Idx { .. } => "idx",
        }
    }

    /// Builds the dataset; relative file paths resolve against `base`.
    pub fn load(&self, base: &Path, seed: u64) -> Result<Dataset> {
        match self {
            DatasetConfig::GaussianBlobs {
                classes,
                dim,
                per_class,
                center_scale,
                noise,
                seed: s,
                split,
            } => data::gaussian_blobs(
                &BlobParams {
                    classes: *classes,
                    dim: *dim,
                    per_class: *per_class,
                    center_scale: *center_scale,
                    noise: *noise,
                    seed: s.unwrap_or(seed),
                },
                split.unwrap_or_default(),
            ),
            DatasetConfig::ConcentricShells {
                classes,
                dim,
                per_class,
                gap,
                noise,
                seed: s,
                split,
            } => data::concentric_shells(
                &ShellParams {
                    classes: *classes,
                    dim: *dim,
                    per_class: *per_class,
                    gap: *gap,
                    noise: *noise,
                    seed: s.unwrap_or(seed),
                },
                split.unwrap_or_default(),
            ),
            DatasetConfig::Csv {
                path,
                label_column,
                split,
            } => {
                let ds = data::load_csv(&base.join(path), label_column)?;
                ds.with_split(split.unwrap_or_default(), seed)
            }
            DatasetConfig::Idx {
                images,
                labels,
                limit,
                split,
            } => {
                let mut ds = data::load_idx(&base.join(images), &base.join(labels))?;
                if let Some(limit) = limit {
                    let keep: Vec<usize> = (0..ds.len().min(*limit)).collect();
                    let classes = ds.classes;
                    let subset = LabeledSetExt::subset(&ds, &keep);
                    ds = Dataset::new(subset.0, subset.1, classes)?;
                }
                ds.with_split(split.unwrap_or_default(), seed)
            }
        }
    }
}

struct LabeledSetExt;

impl LabeledSetExt {
    fn subset(ds: &Dataset, keep: &[usize]) -> (crate::tensor::Tensor, Vec<usize>) {
        (ds.x.select_rows(keep), keep.iter().map(|&i| ds.y[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    LeakyRelu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    #[serde(default = "default_slope")]
    pub slope: f64,
    /// Hidden blocks in the bottom model; defaults to all of them, which
    /// puts the split before the last dense layer.
    pub split_after: Option<usize>,
}

fn default_activation() -> ActivationName {
    ActivationName::LeakyRelu
}
fn default_slope() -> f64 {
    0.01
}

impl ModelConfig {
    /// Layer specs and split index; a layer norm closes the bottom model
    /// when `norm` is set.
    pub fn specs(&self, input: usize, classes: usize, norm: bool) -> Result<(Vec<LayerSpec>, usize)> {
        let activation = match self.activation {
            ActivationName::LeakyRelu => Activation::LeakyRelu { slope: self.slope },
            ActivationName::Tanh => Activation::Tanh,
        };
        let split_after = self.split_after.unwrap_or(self.hidden.len());
        if split_after == 0 || split_after > self.hidden.len() {
            return Err(Error::contract(format!(
                "split_after {split_after} must lie in 1..={}",
                self.hidden.len()
            )));
        }
        let mut specs = Vec::new();
        let mut dim = input;
        let mut split = 0;
        for (i, &h) in self.hidden.iter().enumerate() {
            specs.push(LayerSpec::Dense { in_dim: dim, out_dim: h });
            specs.push(LayerSpec::Activation(activation));
            dim = h;
            if i + 1 == split_after {
                if norm {
                    specs.push(LayerSpec::LayerNorm { dim });
                }
                split = specs.len();
            }
        }
        specs.push(LayerSpec::Dense { in_dim: dim, out_dim: classes });
        Ok((specs, split))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.adam.lr,
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            record_transcript: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefenseConfig {
    pub kind: DefenseKind,
    /// α for pe / dcor, flip ratio for label_dp; defaults to the standard
    /// doubling sweep for the kind.
    pub values: Option<Spanned<Vec<f64>>>,
}

/// The doubling sweeps: α 0.25…32 (pe), 1…32 (dcor), flip ratio 0.01…0.16.
pub fn default_sweep(kind: DefenseKind) -> Vec<f64> {
    let doubling = |start: f64, n: usize| (0..n).map(|i| start * f64::powi(2.0, i as i32)).collect();
    match kind {
        DefenseKind::Vanilla => vec![0.0],
        DefenseKind::Pe => doubling(0.25, 8),
        DefenseKind::Dcor => doubling(1.0, 6),
        DefenseKind::LabelDp => doubling(0.01, 5),
    }
}

impl DefenseConfig {
    pub fn sweep(&self) -> Vec<f64> {
        match (&self.values, self.kind) {
            (_, DefenseKind::Vanilla) => vec![0.0],
            (Some(v), _) => v.get_ref().clone(),
            (None, kind) => default_sweep(kind),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackGrid {
    pub kinds: Vec<AttackKind>,
    pub k: Vec<usize>,
    pub restarts: usize,
    pub max_epochs: usize,
    pub stop_error: f64,
    pub lr: f64,
}

impl Default for AttackGrid {
    fn default() -> Self {
        let a = AttackConfig::default();
        AttackGrid {
            kinds: Vec::new(),
            k: vec![1, 4],
            restarts: a.restarts,
            max_epochs: a.max_epochs,
            stop_error: a.stop_error,
            lr: a.adam.lr,
        }
    }
}

impl AttackGrid {
    fn attack_config(&self, seed: u64) -> AttackConfig {
        AttackConfig {
            max_epochs: self.max_epochs,
            stop_error: self.stop_error,
            restarts: self.restarts,
            seed,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            ..AttackConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Training repetitions per sweep value.
    #[serde(default = "default_trials")]
    pub trials: Spanned<usize>,
    /// Also train an undefended reference.
    #[serde(default = "default_true")]
    pub include_vanilla: bool,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub defense: Vec<DefenseConfig>,
    #[serde(default)]
    pub attack: AttackGrid,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_trials() -> Spanned<usize> {
    Spanned::new(0..0, 3)
}
fn default_true() -> bool {
    true
}

/// A parsed config plus the text it came from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
    pub text: String,
    /// SHA-256 of the config bytes, hex.
    pub hash: String,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl LoadedConfig {
    pub fn from_text(path: &Path, text: String) -> Result<Self> {
        let config: ExperimentConfig = parse_config(path, &text)?;
        let err = |span: Range<usize>, msg: String| config_error(path, &text, Some(span).filter(|s| s.end > 0), msg);
        if *config.trials.get_ref() == 0 {
            return Err(err(config.trials.span(), "trials must be ≥ 1".into()));
        }
        for d in &config.defense {
            if let Some(v) = &d.values {
                let vals = v.get_ref();
                if vals.is_empty() || vals.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                    return Err(err(v.span(), "sweep values must be positive".into()));
                }
                if vals.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(err(v.span(), "sweep values must be strictly increasing".into()));
                }
                if d.kind == DefenseKind::LabelDp && vals.iter().any(|x| *x > 1.0) {
                    return Err(err(v.span(), "flip ratios must be ≤ 1".into()));
                }
            }
        }
        if config.attack.restarts == 0 {
            return Err(config_error(path, &text, None, "attack.restarts must be ≥ 1"));
        }
        if config.attack.kinds.iter().any(|k| matches!(k, AttackKind::FineTune | AttackKind::Scratch))
            && (config.attack.k.is_empty() || config.attack.k.contains(&0))
        {
            return Err(config_error(path, &text, None, "attack.k values must be ≥ 1"));
        }
        let hash = config_hash(&text);
        Ok(LoadedConfig {
            config,
            path: path.to_path_buf(),
            text,
            hash,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(path, read_config_text(path)?)
    }

    fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        self.config.dataset.load(&self.base_dir(), self.config.seed)
    }

    /// Every (defense, value) pair in sweep order, vanilla first.
    pub fn sweep(&self) -> Vec<LossConfig> {
        let mut out = Vec::new();
        if self.config.include_vanilla && !self.config.defense.iter().any(|d| d.kind == DefenseKind::Vanilla) {
            out.push(LossConfig::vanilla());
        }
        for d in &self.config.defense {
            for v in d.sweep() {
                out.push(LossConfig::for_value(d.kind, v));
            }
        }
        out
    }
}

/// Per-run knobs from the command line.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub seed: Option<u64>,
    /// Skip the attack grid (the `train` subcommand).
    pub train_only: bool,
    pub write_checkpoints: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Diverged,
}

/// One long-form result row. Attack fields are empty for train-only rows
/// and diverged runs.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub dataset: String,
    pub defense: DefenseKind,
    pub value: f64,
    pub trial: usize,
    pub seed: u64,
    pub status: RunStatus,
    pub test_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub attack_kind: Option<AttackKind>,
    pub k: Option<usize>,
    pub attack_accuracy: Option<f64>,
    pub baseline_accuracy: Option<f64>,
    pub advantage: Option<f64>,
    pub perfect: Option<bool>,
}

impl ResultRow {
    fn sort_key(&self) -> (DefenseKind, u64, usize, Option<AttackKind>, Option<usize>) {
        (self.defense, self.value.to_bits(), self.trial, self.attack_kind, self.k)
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SummaryRow {
    pub config_hash: String,
    pub dataset: String,
    pub defense: DefenseKind,
    pub value: f64,
    pub attack_kind: Option<AttackKind>,
    pub k: Option<usize>,
    pub seeds: String,
    pub runs: usize,
    pub diverged: usize,
    pub test_accuracy_mean: Option<f64>,
    pub test_accuracy_std: Option<f64>,
    pub attack_accuracy_mean: Option<f64>,
    pub attack_accuracy_std: Option<f64>,
    pub baseline_accuracy_mean: Option<f64>,
    pub advantage_mean: Option<f64>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some(var.sqrt()))
}

/// Groups rows by `(defense, value, attack kind, k)`; diverged runs are
/// counted but excluded from the means.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    type Key = (DefenseKind, u64, Option<AttackKind>, Option<usize>);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.defense, r.value.to_bits(), r.attack_kind, r.k))
            .or_default()
            .push(r);
    }
    // Diverged runs carry no attack fields; count them in every attack group
    // of their cell.
    let diverged: Vec<&ResultRow> = rows.iter().filter(|r| r.status == RunStatus::Diverged).collect();
    let mut out = Vec::new();
    for ((defense, bits, kind, k), members) in &groups {
        if kind.is_none() && members.iter().all(|r| r.status == RunStatus::Diverged) {
            let has_attack_groups = groups
                .keys()
                .any(|g| g.0 == *defense && g.1 == *bits && g.2.is_some());
            if has_attack_groups {
                continue;
            }
        }
        let ok: Vec<&&ResultRow> = members.iter().filter(|r| r.status == RunStatus::Ok).collect();
        let n_div = diverged
            .iter()
            .filter(|r| r.defense == *defense && r.value.to_bits() == *bits)
            .count();
        let collect = |f: fn(&ResultRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let (test_mean, test_std) = mean_std(&collect(|r| r.test_accuracy));
        let (att_mean, att_std) = mean_std(&collect(|r| r.attack_accuracy));
        let (base_mean, _) = mean_std(&collect(|r| r.baseline_accuracy));
        let (adv_mean, _) = mean_std(&collect(|r| r.advantage));
        let mut seeds: Vec<u64> = members.iter().map(|r| r.seed).collect();
        seeds.extend(diverged.iter().filter(|r| r.defense == *defense && r.value.to_bits() == *bits).map(|r| r.seed));
        seeds.sort_unstable();
        seeds.dedup();
        let first = members[0];
        out.push(SummaryRow {
            config_hash: first.config_hash.clone(),
            dataset: first.dataset.clone(),
            defense: *defense,
            value: f64::from_bits(*bits),
            attack_kind: *kind,
            k: *k,
            seeds: seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
            runs: ok.len() + n_div,
            diverged: n_div,
            test_accuracy_mean: test_mean,
            test_accuracy_std: test_std,
            attack_accuracy_mean: att_mean,
            attack_accuracy_std: att_std,
            baseline_accuracy_mean: base_mean,
            advantage_mean: adv_mean,
        });
    }
    out
}

pub fn to_csv<T: serde::Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Schema(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub const RESULT_COLUMNS: &[&str] = &[
    "config_hash",
    "dataset",
    "defense",
    "value",
    "trial",
    "seed",
    "status",
    "test_accuracy",
    "best_epoch",
    "attack_kind",
    "k",
    "attack_accuracy",
    "baseline_accuracy",
    "advantage",
    "perfect",
];

pub const SUMMARY_COLUMNS: &[&str] = &[
    "config_hash",
    "dataset",
    "defense",
    "value",
    "attack_kind",
    "k",
    "seeds",
    "runs",
    "diverged",
    "test_accuracy_mean",
    "test_accuracy_std",
    "attack_accuracy_mean",
    "attack_accuracy_std",
    "baseline_accuracy_mean",
    "advantage_mean",
];

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    /// Cells whose every trial diverged.
    pub all_diverged: Vec<(DefenseKind, f64)>,
    pub results_csv: String,
    pub summary_csv: String,
}

impl ExperimentOutcome {
    /// 0 on success, 2 when some cell diverged in every trial.
    pub fn exit_code(&self) -> i32 {
        if self.all_diverged.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Seed of trial `t`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    rng::derive(base, trial as u64)
}

fn leak_seed(trial_seed: u64, k: usize) -> u64 {
    rng::derive_str(trial_seed, &format!("leak/{k}"))
}

fn file_stem(loss: &LossConfig, trial: usize) -> String {
    format!("{}_{}_t{}", loss.defense, loss.value(), trial)
}

/// Baselines that do not depend on the defense: scratch training on the
/// leaked set and raw-input clustering, per `(trial, k)`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum BaselineJob {
    Scratch { trial: usize, k: usize },
    RawCluster { trial: usize },
}

struct Context<'a> {
    loaded: &'a LoadedConfig,
    data: &'a Dataset,
    base_seed: u64,
    opts: &'a RunOptions,
}

impl Context<'_> {
    fn specs(&self, loss: &LossConfig) -> Result<(Vec<LayerSpec>, usize)> {
        self.loaded
            .config
            .model
            .specs(self.data.input_dim(), self.data.classes, loss.defense.normalizes_split())
    }

    fn baseline(&self, job: &BaselineJob) -> Result<AttackReport> {
        let grid = &self.loaded.config.attack;
        let test = self.data.part(Partition::Test);
        match *job {
            BaselineJob::Scratch { trial, k } => {
                let seed = trial_seed(self.base_seed, trial);
                let leak = self.data.leak(LeakSpec {
                    per_class: k,
                    seed: leak_seed(seed, k),
                })?;
                let (specs, split) = self.specs(&LossConfig::vanilla())?;
                let cfg = grid.attack_config(rng::derive_str(seed, "scratch"));
                scratch_baseline(&specs, split, &leak, &test, self.data.classes, &cfg)
            }
            BaselineJob::RawCluster { trial } => {
                let seed = trial_seed(self.base_seed, trial);
                raw_clustering(&test.x, &test.y, self.data.classes, rng::derive_str(seed, "cluster"))
            }
        }
    }

    fn cell(
        &self,
        loss: &LossConfig,
        trial: usize,
        baselines: &BTreeMap<BaselineJob, AttackReport>,
    ) -> Result<Vec<ResultRow>> {
        let cfg = &self.loaded.config;
        let seed = trial_seed(self.base_seed, trial);
        let (specs, split) = self.specs(loss)?;
        let model = build_mlp(&specs, split, seed)?;
        let base_row = ResultRow {
            config_hash: self.loaded.hash.clone(),
            dataset: cfg.dataset.name().to_owned(),
            defense: loss.defense,
            value: loss.value(),
            trial,
            seed,
            status: RunStatus::Ok,
            test_accuracy: None,
            best_epoch: None,
            attack_kind: None,
            k: None,
            attack_accuracy: None,
            baseline_accuracy: None,
            advantage: None,
            perfect: None,
        };
        let run = match split_train(model, self.data, loss, &cfg.training.train_config(), seed) {
            Ok(run) => run,
            Err(Error::Diverged { .. }) => {
                return Ok(vec![ResultRow {
                    status: RunStatus::Diverged,
                    ..base_row
                }])
            }
            Err(e) => return Err(e),
        };
        let test = self.data.part(Partition::Test);
        let acc = test_accuracy(&run.model, &test)?;
        if self.opts.write_checkpoints {
            let dir = self.opts.out_dir.join("checkpoints");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            Checkpoint::new(run.model.clone(), *loss).save(&dir.join(format!("{}.ckpt", file_stem(loss, trial))))?;
        }
        let trained = ResultRow {
            test_accuracy: Some(acc),
            best_epoch: Some(run.best_epoch),
            ..base_row
        };
        if self.opts.train_only || cfg.attack.kinds.is_empty() {
            return Ok(vec![trained]);
        }
        attack_rows(&run.model, self.data, &cfg.attack, seed, trial, &trained, baselines)
    }
}

/// Runs the attack grid against a trained model, pairing each attack with
/// its no-bottom-model baseline.
fn attack_rows(
    model: &SplitModel,
    data: &Dataset,
    grid: &AttackGrid,
    seed: u64,
    trial: usize,
    template: &ResultRow,
    baselines: &BTreeMap<BaselineJob, AttackReport>,
) -> Result<Vec<ResultRow>> {
    let test = data.part(Partition::Test);
    let mut rows = Vec::new();
    let mut push = |kind: AttackKind, k: Option<usize>, with: &AttackReport, null: Option<&AttackReport>| {
        let adv = null.map(|n| AdvantageRecord::from_errors(n.error(), with.error()));
        rows.push(ResultRow {
            attack_kind: Some(kind),
            k,
            attack_accuracy: Some(with.accuracy),
            baseline_accuracy: null.map(|n| n.accuracy),
            advantage: adv.map(|a| a.advantage),
            perfect: adv.map(|a| a.perfect),
            ..template.clone()
        });
    };
    for &kind in &grid.kinds {
        match kind {
            AttackKind::FineTune => {
                for &k in &grid.k {
                    let leak = data.leak(LeakSpec {
                        per_class: k,
                        seed: leak_seed(seed, k),
                    })?;
                    let cfg = grid.attack_config(rng::derive_str(seed, "fine_tune"));
                    let with = fine_tuning_attack(model, model.top_specs(), &leak, &test, data.classes, &cfg)?;
                    push(kind, Some(k), &with, baselines.get(&BaselineJob::Scratch { trial, k }));
                }
            }
            AttackKind::Scratch => {
                for &k in &grid.k {
                    if let Some(r) = baselines.get(&BaselineJob::Scratch { trial, k }) {
                        push(kind, Some(k), r, None);
                    }
                }
            }
            AttackKind::Cluster => {
                let with = clustering_attack(model, &test.x, &test.y, data.classes, rng::derive_str(seed, "cluster"))?;
                push(kind, None, &with, baselines.get(&BaselineJob::RawCluster { trial }));
            }
            AttackKind::RawCluster => {
                if let Some(r) = baselines.get(&BaselineJob::RawCluster { trial }) {
                    push(kind, None, r, None);
                }
            }
        }
    }
    Ok(rows)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))
}

/// Trains every `(defense, value, trial)` cell, runs the attack grid, and
/// writes `results.csv`, `summary.csv` and `run.toml` into `opts.out_dir`.
pub fn run_experiment(loaded: &LoadedConfig, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let cfg = &loaded.config;
    let base_seed = opts.seed.unwrap_or(cfg.seed);
    let data = loaded.dataset()?;
    let trials = *cfg.trials.get_ref();
    let ctx = Context {
        loaded,
        data: &data,
        base_seed,
        opts,
    };
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;

    let mut jobs = Vec::new();
    if !opts.train_only {
        for trial in 0..trials {
            let needs_scratch = cfg
                .attack
                .kinds
                .iter()
                .any(|k| matches!(k, AttackKind::FineTune | AttackKind::Scratch));
            if needs_scratch {
                jobs.extend(cfg.attack.k.iter().map(|&k| BaselineJob::Scratch { trial, k }));
            }
            if cfg.attack.kinds.iter().any(|k| matches!(k, AttackKind::Cluster | AttackKind::RawCluster)) {
                jobs.push(BaselineJob::RawCluster { trial });
            }
        }
    }
    let cells: Vec<(LossConfig, usize)> = loaded
        .sweep()
        .into_iter()
        .flat_map(|l| (0..trials).map(move |t| (l, t)))
        .collect();

    let pool = thread_pool(opts.jobs)?;
    let (baselines, cell_rows) = pool.install(|| -> Result<_> {
        let baselines: BTreeMap<BaselineJob, AttackReport> = jobs
            .par_iter()
            .map(|j| ctx.baseline(j).map(|r| (j.clone(), r)))
            .collect::<Result<_>>()?;
        let rows: Vec<Vec<ResultRow>> = cells
            .par_iter()
            .map(|(loss, trial)| ctx.cell(loss, *trial, &baselines))
            .collect::<Result<_>>()?;
        Ok((baselines, rows))
    })?;
    drop(baselines);

    let mut rows: Vec<ResultRow> = cell_rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    let summary = summarize(&rows);

    let mut all_diverged = Vec::new();
    for loss in loaded.sweep() {
        let cell: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.defense == loss.defense && r.value.to_bits() == loss.value().to_bits())
            .collect();
        if !cell.is_empty() && cell.iter().all(|r| r.status == RunStatus::Diverged) {
            all_diverged.push((loss.defense, loss.value()));
        }
    }

    let results_csv = to_csv(&rows, RESULT_COLUMNS)?;
    let summary_csv = to_csv(&summary, SUMMARY_COLUMNS)?;
    write(&opts.out_dir.join("results.csv"), &results_csv)?;
    write(&opts.out_dir.join("summary.csv"), &summary_csv)?;
    write(&opts.out_dir.join("run.toml"), &run_metadata(loaded, base_seed, &data))?;
    Ok(ExperimentOutcome {
        rows,
        summary,
        all_diverged,
        results_csv,
        summary_csv,
    })
}

fn run_metadata(loaded: &LoadedConfig, seed: u64, data: &Dataset) -> String {
    let cfg = &loaded.config;
    let mut meta: BTreeMap<String, String> = BTreeMap::new();
    let mut insert = |k: &str, v: String| meta.insert(k.to_owned(), v);
    insert("config_hash", loaded.hash.clone());
    insert("name", cfg.name.clone());
    insert("seed", seed.to_string());
    insert("batch_size", cfg.training.batch_size.to_string());
    insert("learning_rate", cfg.training.lr.to_string());
    insert("adam", "beta1=0.9 beta2=0.999 eps=1e-8".into());
    insert("initialization", "uniform(-sqrt(1/fan_in), sqrt(1/fan_in)), zero bias".into());
    insert("leak_partition", "train".into());
    insert(
        "note",
        "batch size, learning rate and initialization are this tool's defaults, not values taken from the original experiments".into(),
    );
    for (k, v) in &data.metadata {
        insert(&format!("dataset.{k}"), v.clone());
    }
    let mut out = String::new();
    for (k, v) in meta {
        out.push_str(&format!("{:?} = {:?}\n", k, v));
    }
    out
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Attacks a saved model with the config's attack grid (trial 0 seeds).
pub fn attack_checkpoint(loaded: &LoadedConfig, ckpt: &Checkpoint, seed: Option<u64>) -> Result<Vec<ResultRow>> {
    let cfg = &loaded.config;
    let base_seed = seed.unwrap_or(cfg.seed);
    let data = loaded.dataset()?;
    let opts = RunOptions {
        out_dir: PathBuf::new(),
        jobs: 1,
        seed: Some(base_seed),
        train_only: false,
        write_checkpoints: false,
    };
    let ctx = Context {
        loaded,
        data: &data,
        base_seed,
        opts: &opts,
    };
    let mut baselines = BTreeMap::new();
    if cfg.attack.kinds.iter().any(|k| matches!(k, AttackKind::FineTune | AttackKind::Scratch)) {
        for &k in &cfg.attack.k {
            let job = BaselineJob::Scratch { trial: 0, k };
            baselines.insert(job.clone(), ctx.baseline(&job)?);
        }
    }
    if cfg.attack.kinds.iter().any(|k| matches!(k, AttackKind::Cluster | AttackKind::RawCluster)) {
        let job = BaselineJob::RawCluster { trial: 0 };
        baselines.insert(job.clone(), ctx.baseline(&job)?);
    }
    let seed = trial_seed(base_seed, 0);
    let test = data.part(Partition::Test);
    let template = ResultRow {
        config_hash: loaded.hash.clone(),
        dataset: cfg.dataset.name().to_owned(),
        defense: ckpt.loss.defense,
        value: ckpt.loss.value(),
        trial: 0,
        seed,
        status: RunStatus::Ok,
        test_accuracy: Some(test_accuracy(&ckpt.model, &test)?),
        best_epoch: None,
        attack_kind: None,
        k: None,
        attack_accuracy: None,
        baseline_accuracy: None,
        advantage: None,
        perfect: None,
    };
    attack_rows(&ckpt.model, &data, &cfg.attack, seed, 0, &template, &baselines)
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Test accuracy vs attack accuracy, one series per defense, for one attack
/// kind and `k`. The gray band marks attack accuracy below the no-bottom-model
/// baseline; dashed lines mark the vanilla test and attack accuracy.
pub fn emit_tradeoff_plot(summary_csv: &str, attack: AttackKind, k: Option<usize>) -> Result<String> {
    let mut rdr = csv::Reader::from_reader(summary_csv.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("summary is missing column {name:?}")))
    };
    let (c_def, c_val, c_kind, c_k) = (col("defense")?, col("value")?, col("attack_kind")?, col("k")?);
    let (c_test, c_att, c_base) = (
        col("test_accuracy_mean")?,
        col("attack_accuracy_mean")?,
        col("baseline_accuracy_mean")?,
    );
    let num = |s: &str| s.parse::<f64>().ok();
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    let mut baseline = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec[c_kind] != *attack.as_str() || rec[c_k].parse::<usize>().ok() != k {
            continue;
        }
        let (Some(test), Some(att)) = (num(&rec[c_test]), num(&rec[c_att])) else {
            continue;
        };
        if let Some(b) = num(&rec[c_base]) {
            baseline.push(b);
        }
        series
            .entry(rec[c_def].to_owned())
            .or_default()
            .push((num(&rec[c_val]).unwrap_or(0.0), test, att));
    }
    let title = match k {
        Some(k) => format!("{attack}, k = {k}"),
        None => attack.to_string(),
    };
    let mut chart = svg::Chart::new(&title, "test accuracy", "attack accuracy");
    if !baseline.is_empty() {
        chart.shade_below = Some(baseline.iter().sum::<f64>() / baseline.len() as f64);
    }
    if let Some(v) = series.get("vanilla") {
        let n = v.len() as f64;
        let test = v.iter().map(|p| p.1).sum::<f64>() / n;
        let att = v.iter().map(|p| p.2).sum::<f64>() / n;
        chart.references.push(svg::Reference::Vertical(test, "vanilla test accuracy".into()));
        chart.references.push(svg::Reference::Horizontal(att, "vanilla attack accuracy".into()));
    }
    for (i, (name, mut pts)) in series.into_iter().enumerate() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart.series.push(svg::Series::scatter(
            &name,
            pts.into_iter().map(|p| (p.1, p.2)).collect(),
            PALETTE[i % PALETTE.len()],
        ));
    }
    Ok(chart.render())
}

/// Writes one tradeoff SVG per attack kind and `k` present in the summary.
pub fn write_tradeoff_plots(summary_csv: &str, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut rdr = csv::Reader::from_reader(summary_csv.as_bytes());
    let headers = rdr.headers()?.clone();
    let c_kind = headers
        .iter()
        .position(|h| h == "attack_kind")
        .ok_or_else(|| Error::Schema("summary is missing column \"attack_kind\"".into()))?;
    let c_k = headers
        .iter()
        .position(|h| h == "k")
        .ok_or_else(|| Error::Schema("summary is missing column \"k\"".into()))?;
    let mut combos = std::collections::BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        if let Ok(kind) = rec[c_kind].parse::<AttackKind>() {
            if matches!(kind, AttackKind::FineTune | AttackKind::Cluster) {
                combos.insert((kind, rec[c_k].parse::<usize>().ok()));
            }
        }
    }
    let mut paths = Vec::new();
    for (kind, k) in combos {
        let name = match k {
            Some(k) => format!("tradeoff_{kind}_k{k}.svg"),
            None => format!("tradeoff_{kind}.svg"),
        };
        let path = out_dir.join(name);
        write(&path, &emit_tradeoff_plot(summary_csv, kind, k)?)?;
        paths.push(path);
    }
    if paths.is_empty() {
        let path = out_dir.join("tradeoff.svg");
        write(&path, &emit_tradeoff_plot(summary_csv, AttackKind::FineTune, None)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    pub dim: usize,
    pub region: theory::Region,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Uniform random configurations to compare final energies against.
    #[serde(default)]
    pub random_references: usize,
}

fn default_exponent() -> f64 {
    1.0
}
fn default_step() -> f64 {
    0.05
}
fn default_iterations() -> usize {
    2000
}
fn default_runs() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub dim: usize,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    #[serde(default = "default_density")]
    pub density: theory::DensitySpec,
}

fn default_density() -> theory::DensitySpec {
    theory::DensitySpec::Uniform
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub dim: usize,
    pub m: Vec<usize>,
    pub trials: usize,
    pub densities: Vec<theory::DensitySpec>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub particles: Option<ParticleConfig>,
    pub sphere: Option<SphereConfig>,
    pub scaling: Option<ScalingConfig>,
}

fn density_name(d: &theory::DensitySpec) -> String {
    match d {
        theory::DensitySpec::Uniform => "uniform".into(),
        theory::DensitySpec::BoundaryConcentrated { kappa } => format!("boundary(kappa={kappa})"),
        theory::DensitySpec::PoleConcentrated { kappa } => format!("pole(kappa={kappa})"),
    }
}

/// Runs whichever theory sections the config contains and writes
/// `border_mass.csv` (+ `pe_trace.csv`, `pe_trace.svg`),
/// `generalization.csv` and `sampling_scaling.csv`.
pub fn run_theory(config: &TheoryConfig, seed: Option<u64>, out_dir: &Path, jobs: usize) -> Result<Vec<PathBuf>> {
    let seed = seed.unwrap_or(config.seed);
    let mut written = Vec::new();
    let pool = thread_pool(jobs)?;
    if let Some(p) = &config.particles {
        let sys = theory::ParticleSystem {
            n: p.n,
            dim: p.dim,
            region: p.region,
            exponent: p.exponent,
            step: p.step,
            iterations: p.iterations,
        };
        let runs: Vec<theory::Minimization> = pool.install(|| {
            (0..p.runs)
                .into_par_iter()
                .map(|r| theory::minimize_potential_energy(&sys, rng::derive(seed, r as u64)))
                .collect::<Result<_>>()
        })?;
        let reference_min = (0..p.random_references)
            .map(|r| theory::potential_energy(&sys.random_configuration(rng::derive_str(seed, &format!("ref/{r}"))), p.exponent))
            .fold(f64::INFINITY, f64::min);
        let mut csv = String::from("run,seed,n,dim,epsilon,border_mass,final_energy,min_random_energy,converged\n");
        for (r, m) in runs.iter().enumerate() {
            let energy = theory::potential_energy(&m.points, p.exponent);
            for &eps in &p.epsilons {
                let mass = theory::border_mass(&m.points, &p.region, eps)?;
                csv.push_str(&format!(
                    "{r},{},{},{},{eps},{mass},{energy},{},{}\n",
                    rng::derive(seed, r as u64),
                    p.n,
                    p.dim,
                    if reference_min.is_finite() { reference_min.to_string() } else { String::new() },
                    m.converged
                ));
            }
        }
        let path = out_dir.join("border_mass.csv");
        write(&path, &csv)?;
        written.push(path);
        if let Some(first) = runs.first() {
            let mut trace = String::from("iteration,energy\n");
            for (i, e) in first.trace.iter().enumerate() {
                trace.push_str(&format!("{i},{e}\n"));
            }
            let path = out_dir.join("pe_trace.csv");
            write(&path, &trace)?;
            written.push(path);
            let mut chart = svg::Chart::new("potential energy", "iteration", "energy");
            chart.series.push(svg::Series::line(
                "run 0",
                first.trace.iter().enumerate().map(|(i, e)| (i as f64, *e)).collect(),
                PALETTE[0],
            ));
            let path = out_dir.join("pe_trace.svg");
            write(&path, &chart.render())?;
            written.push(path);
        }
    }
    if let Some(s) = &config.sphere {
        let mut csv = String::from("dim,epsilon,samples,density,measured,standard_error,analytic_uniform,bound\n");
        for (i, &eps) in s.epsilons.iter().enumerate() {
            let est = theory::generalization_error_mc(
                &theory::SphereExperiment {
                    dim: s.dim,
                    epsilon: eps,
                    samples: s.samples,
                    density: s.density,
                },
                rng::derive(seed, i as u64),
            )?;
            let analytic = if s.dim == 3 && s.density == theory::DensitySpec::Uniform {
                (eps / std::f64::consts::PI).to_string()
            } else {
                String::new()
            };
            csv.push_str(&format!(
                "{},{eps},{},{},{},{},{analytic},{}\n",
                s.dim,
                s.samples,
                density_name(&s.density),
                est.measured,
                est.standard_error,
                est.bound
            ));
        }
        let path = out_dir.join("generalization.csv");
        write(&path, &csv)?;
        written.push(path);
    }
    if let Some(s) = &config.scaling {
        let tables: Vec<theory::ScalingTable> = pool.install(|| {
            s.densities
                .par_iter()
                .map(|d| theory::sampling_error_scaling(d, s.dim, &s.m, s.trials, seed))
                .collect::<Result<_>>()
        })?;
        let mut csv = String::from("density,m,mean_sq_angle,slope\n");
        for (d, t) in s.densities.iter().zip(&tables) {
            for (m, e) in &t.rows {
                csv.push_str(&format!("\"{}\",{m},{e},{}\n", density_name(d), t.slope));
            }
        }
        let path = out_dir.join("sampling_scaling.csv");
        write(&path, &csv)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
schema_version = 1
name = "small"
seed = 3
trials = 1

[dataset]
kind = "gaussian_blobs"
classes = 3
dim = 6
per_class = 40

[model]
hidden = [8, 4]

[training]
epochs = 3
batch_size = 32

[[defense]]
kind = "pe"
values = [0.01]
"#;

    fn loaded(text: &str) -> Result<LoadedConfig> {
        LoadedConfig::from_text(Path::new("test.toml"), text.to_owned())
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }

    #[test]
    fn config_errors_carry_positions() {
        let bad = SMALL.replace("hidden = [8, 4]", "hidden = [8, 4]\nbogus = 1");
        match loaded(&bad) {
            Err(Error::Config { line, .. }) => assert!(line > 1),
            other => panic!("{other:?}"),
        }
        let unsorted = SMALL.replace("values = [0.01]", "values = [0.5, 0.25]");
        match loaded(&unsorted) {
            Err(Error::Config { line, message, .. }) => {
                assert_eq!(line, 22);
                assert!(message.contains("increasing"));
            }
            other => panic!("{other:?}"),
        }
        let version = SMALL.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(loaded(&version), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn default_sweeps_double() {
        assert_eq!(default_sweep(DefenseKind::Pe), vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(default_sweep(DefenseKind::Dcor), vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        assert_eq!(default_sweep(DefenseKind::LabelDp), vec![0.01, 0.02, 0.04, 0.08, 0.16]);
    }

    #[test]
    fn model_specs_place_norm_at_split() {
        let m = ModelConfig {
            hidden: vec![8, 4],
            activation: ActivationName::LeakyRelu,
            slope: 0.01,
            split_after: Some(1),
        };
        let (specs, split) = m.specs(5, 3, true).unwrap();
        assert_eq!(specs[split - 1], LayerSpec::LayerNorm { dim: 8 });
        let (_, split) = m.specs(5, 3, false).unwrap();
        assert_eq!(split, 2);
    }

    #[test]
    fn single_cell_no_attacks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = loaded(&SMALL.replace("trials = 1", "trials = 1\ninclude_vanilla = false")).unwrap();
        let opts = RunOptions {
            out_dir: dir.path().to_path_buf(),
            jobs: 1,
            seed: None,
            train_only: false,
            write_checkpoints: true,
        };
        let out = run_experiment(&cfg, &opts).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.summary.len(), 1);
        assert_eq!(fs::read_dir(dir.path().join("checkpoints")).unwrap().count(), 1);
        assert_eq!(out.exit_code(), 0);
    }

    #[test]
    fn empty_and_single_point_plots() {
        let header = SUMMARY_COLUMNS.join(",") + "\n";
        let svg = emit_tradeoff_plot(&header, AttackKind::FineTune, Some(1)).unwrap();
        assert!(svg.starts_with("<svg") && !svg.contains("class=\"marker\""));
        let row = "h,blobs,pe,1,fine_tune,1,0,1,0,0.9,0,0.3,0,0.5,0.2\n";
        let svg = emit_tradeoff_plot(&(header + row), AttackKind::FineTune, Some(1)).unwrap();
        assert_eq!(svg.matches("class=\"marker\"").count(), 1);
        assert!(svg.contains("perfect-zone"));
        assert!(matches!(
            emit_tradeoff_plot("defense,value\n", AttackKind::FineTune, None),
            Err(Error::Schema(_))
        ));
    }
}
