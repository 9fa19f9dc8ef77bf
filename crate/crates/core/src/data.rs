//! Datasets: synthetic generators, CSV and IDX loaders, partitions, and the
//! leaked-sample sampler used by the fine-tuning attacker.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

/// Features with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> LabeledSet {
        LabeledSet {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &y in &self.y {
            counts[y] += 1;
        }
        counts
    }

    /// Fraction of the most frequent label.
    pub fn majority_rate(&self, classes: usize) -> f64 {
        let max = self.class_counts(classes).into_iter().max().unwrap_or(0);
        if self.is_empty() {
            0.0
        } else {
            max as f64 / self.len() as f64
        }
    }
}

/// How to cut a dataset into train / validation / test.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Counts { train: usize, validation: usize, test: usize },
    Ratios { train_ratio: f64, validation_ratio: f64 },
}

impl Default for SplitSpec {
    /// 70 / 10 / 20.
    fn default() -> Self {
        SplitSpec::Ratios {
            train_ratio: 0.7,
            validation_ratio: 0.1,
        }
    }
}

/// A labeled dataset with disjoint, exhaustive partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Generator parameters and derived facts, written to the sidecar file.
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Wraps features and labels; everything lands in the train partition
    /// until [`Dataset::with_split`] is called.
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != y.len() {
            return Err(Error::shape(
                "Dataset::new",
                format!("features {:?} with {} labels", x.shape(), y.len()),
            ));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!("label {bad} with {classes} classes")));
        }
        let n = y.len();
        Ok(Dataset {
            x,
            y,
            classes,
            train: (0..n).collect(),
            validation: Vec::new(),
            test: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// Shuffles with `seed` and cuts into partitions.
    pub fn with_split(mut self, spec: SplitSpec, seed: u64) -> Result<Self> {
        let n = self.len();
        let (tr, va, te) = match spec {
            SplitSpec::Counts {
                train,
                validation,
                test,
            } => (train, validation, test),
            SplitSpec::Ratios {
                train_ratio,
                validation_ratio,
            } => {
                if !(train_ratio > 0.0 && validation_ratio >= 0.0 && train_ratio + validation_ratio <= 1.0) {
                    return Err(Error::contract(format!(
                        "bad split ratios {train_ratio} / {validation_ratio}"
                    )));
                }
                let tr = (n as f64 * train_ratio).round() as usize;
                let va = (n as f64 * validation_ratio).round() as usize;
                (tr, va, n.saturating_sub(tr + va))
            }
        };
        if tr + va + te != n {
            return Err(Error::contract(format!(
                "partition sizes {tr}+{va}+{te} do not sum to {n}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::rng(rng::derive(seed, 0x5EED_5B11)));
        self.train = idx[..tr].to_vec();
        self.validation = idx[tr..tr + va].to_vec();
        self.test = idx[tr + va..].to_vec();
        self.metadata
            .insert("split".into(), format!("{tr}/{va}/{te} seed {seed}"));
        self.validate()?;
        Ok(self)
    }

    /// Checks the partition invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.len()];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= seen.len() || seen[i] {
                return Err(Error::contract("partitions overlap or index out of range"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::contract("partitions are not exhaustive"));
        }
        let mut present = vec![false; self.classes];
        for &i in &self.train {
            present[self.y[i]] = true;
        }
        if let Some(c) = present.iter().position(|p| !p) {
            return Err(Error::contract(format!("class {c} missing from train partition")));
        }
        Ok(())
    }

    pub fn indices(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn part(&self, part: Partition) -> LabeledSet {
        let idx = self.indices(part);
        LabeledSet {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// Draws the attacker's leaked samples from the train partition.
    pub fn leak(&self, spec: LeakSpec) -> Result<LabeledSet> {
        sample_leak(&self.part(Partition::Train), self.classes, spec)
    }
}

fn standard_normal(rng: &mut rng::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Parameters of [`gaussian_blobs`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlobParams {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Centers are uniform in `[−center_scale, center_scale]^dim`.
    pub center_scale: f64,
    /// Isotropic standard deviation around each center.
    pub noise: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters around uniformly drawn centers.
///
/// The linear-probe test accuracy is computed at generation time and stored
/// in `metadata["linear_probe_accuracy"]`.
pub fn gaussian_blobs(p: &BlobParams, split: SplitSpec) -> Result<Dataset> {
    if p.classes < 2 {
        return Err(Error::contract("gaussian_blobs needs at least 2 classes"));
    }
    if p.dim == 0 || p.per_class == 0 {
        return Err(Error::contract("gaussian_blobs needs dim ≥ 1 and per_class ≥ 1"));
    }
    let mut rng = rng::rng(p.seed);
    let centers: Vec<Vec<f64>> = (0..p.classes)
        .map(|_| {
            (0..p.dim)
                .map(|_| rng.random_range(-p.center_scale..=p.center_scale))
                .collect()
        })
        .collect();
    let n = p.classes * p.per_class;
    let mut x = Vec::with_capacity(n * p.dim);
    let mut y = Vec::with_capacity(n);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..p.per_class {
            x.extend(center.iter().map(|m| m + p.noise * standard_normal(&mut rng)));
            y.push(c);
        }
    }
    let mut ds = Dataset::new(Tensor::matrix(n, p.dim, x), y, p.classes)?.with_split(split, p.seed)?;
    let probe = linear_probe(&ds)?;
    ds.metadata.insert("generator".into(), "gaussian_blobs".into());
    ds.metadata.insert(
        "params".into(),
        format!(
            "classes={} dim={} per_class={} center_scale={} noise={} seed={}",
            p.classes, p.dim, p.per_class, p.center_scale, p.noise, p.seed
        ),
    );
    ds.metadata
        .insert("linear_probe_accuracy".into(), format!("{probe}"));
    Ok(ds)
}

/// Parameters of [`concentric_shells`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShellParams {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Radius step between consecutive shells (class `c` has radius `1 + c·gap`).
    pub gap: f64,
    pub noise: f64,
    pub seed: u64,
}

/// Linear-probe ceiling enforced by [`concentric_shells`].
pub const SHELL_PROBE_CEILING: f64 = 0.6;

/// Classes as concentric spherical shells around the origin. Fails if a
/// linear probe scores above [`SHELL_PROBE_CEILING`].
pub fn concentric_shells(p: &ShellParams, split: SplitSpec) -> Result<Dataset> {
    if p.classes < 2 || p.dim < 2 || p.per_class == 0 {
        return Err(Error::contract("concentric_shells needs classes ≥ 2, dim ≥ 2, per_class ≥ 1"));
    }
    let mut rng = rng::rng(p.seed);
    let n = p.classes * p.per_class;
    let mut x = Vec::with_capacity(n * p.dim);
    let mut y = Vec::with_capacity(n);
    for c in 0..p.classes {
        let radius = 1.0 + c as f64 * p.gap;
        for _ in 0..p.per_class {
            let dir: Vec<f64> = (0..p.dim).map(|_| standard_normal(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            x.extend(dir.iter().map(|v| v / norm * radius + p.noise * standard_normal(&mut rng)));
            y.push(c);
        }
    }
    let mut ds = Dataset::new(Tensor::matrix(n, p.dim, x), y, p.classes)?.with_split(split, p.seed)?;
    let probe = linear_probe(&ds)?;
    if probe > SHELL_PROBE_CEILING {
        return Err(Error::contract(format!(
            "shell dataset is linearly separable (probe accuracy {probe:.3})"
        )));
    }
    ds.metadata.insert("generator".into(), "concentric_shells".into());
    ds.metadata.insert(
        "params".into(),
        format!(
            "classes={} dim={} per_class={} gap={} noise={} seed={}",
            p.classes, p.dim, p.per_class, p.gap, p.noise, p.seed
        ),
    );
    ds.metadata
        .insert("linear_probe_accuracy".into(), format!("{probe}"));
    Ok(ds)
}

/// Test accuracy of a ridge least-squares classifier (one-hot targets, bias
/// column) fit on the train partition.
pub fn linear_probe(ds: &Dataset) -> Result<f64> {
    let train = ds.part(Partition::Train);
    let test = if ds.test.is_empty() {
        train.clone()
    } else {
        ds.part(Partition::Test)
    };
    linear_probe_sets(&train, &test, ds.classes)
}

pub fn linear_probe_sets(train: &LabeledSet, test: &LabeledSet, classes: usize) -> Result<f64> {
    use nalgebra::DMatrix;
    let d = train.x.cols() + 1;
    let n = train.len();
    let design = DMatrix::from_fn(n, d, |i, j| if j + 1 == d { 1.0 } else { train.x.get2(i, j) });
    let targets = DMatrix::from_fn(n, classes, |i, c| if train.y[i] == c { 1.0 } else { -1.0 });
    let mut gram = design.transpose() * &design;
    let ridge = 1e-6 * n.max(1) as f64;
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let rhs = design.transpose() * targets;
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::contract("linear probe normal equations are singular"))?;
    let w = chol.solve(&rhs);
    let mut correct = 0;
    for i in 0..test.len() {
        let scores: Vec<f64> = (0..classes)
            .map(|c| {
                (0..d)
                    .map(|j| w[(j, c)] * if j + 1 == d { 1.0 } else { test.x.get2(i, j) })
                    .sum()
            })
            .collect();
        if crate::eval::argmax(&scores) == test.y[i] {
            correct += 1;
        }
    }
    Ok(if test.is_empty() { 0.0 } else { correct as f64 / test.len() as f64 })
}

/// `k` leaked samples per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LeakSpec {
    pub per_class: usize,
    pub seed: u64,
}

/// Draws exactly `k` samples of every class uniformly without replacement,
/// grouped by class.
pub fn sample_leak(source: &LabeledSet, classes: usize, spec: LeakSpec) -> Result<LabeledSet> {
    if spec.per_class == 0 {
        return Err(Error::contract("leak needs k ≥ 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in source.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = rng::rng(spec.seed);
    let mut picked = Vec::with_capacity(spec.per_class * classes);
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() < spec.per_class {
            return Err(Error::contract(format!(
                "class {c} has {} samples, cannot leak {}",
                members.len(),
                spec.per_class
            )));
        }
        let (chosen, _) = members.partial_shuffle(&mut rng, spec.per_class);
        picked.extend_from_slice(chosen);
    }
    Ok(source.select(&picked))
}

fn write_metadata(ds: &Dataset, path: &Path) -> Result<()> {
    let mut meta = String::new();
    meta.push_str(&format!("classes = {}\n", ds.classes));
    for (k, v) in &ds.metadata {
        meta.push_str(&format!("{} = {:?}\n", k, v));
    }
    let meta_path = path.with_extension("meta.toml");
    fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))
}

/// Writes `f0,…,f{d−1},label` rows plus a `.meta.toml` sidecar.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = ds.input_dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(ds.y[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_metadata(ds, path)
}

/// Loads a headered numeric CSV; every column except `label_column` is a
/// feature. Partitions default to a 70/10/20 split with seed 0.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Parse {
            offset: 0,
            message: format!("header has no {label_column:?} column"),
        })?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                offset,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            if j == label_idx {
                let label = field.parse::<usize>().map_err(|_| {
                    Error::Schema(format!("non-integer label {field:?} at byte {offset}"))
                })?;
                y.push(label);
            } else {
                x.push(field.parse::<f64>().map_err(|_| Error::Parse {
                    offset,
                    message: format!("non-numeric feature {field:?}"),
                })?);
            }
        }
        rows += 1;
    }
    let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    let mut ds = Dataset::new(Tensor::matrix(rows, headers.len() - 1, x), y, classes)?;
    if rows >= 10 {
        ds = ds.with_split(SplitSpec::default(), 0)?;
    }
    ds.metadata.insert("source".into(), path.display().to_string());
    Ok(ds)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Parse {
            offset: offset as u64,
            message: "truncated IDX header".into(),
        })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image/label pair (the MNIST distribution format), scaling
/// pixels into `[0, 1]`. Partitions default to 70/10/20 with seed 0.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = read(images)?;
    let lab = read(labels)?;
    let magic = be_u32(&img, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Parse {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        });
    }
    let magic = be_u32(&lab, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Parse {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        });
    }
    let n = be_u32(&img, 4)? as usize;
    let (r, c) = (be_u32(&img, 8)? as usize, be_u32(&img, 12)? as usize);
    let nl = be_u32(&lab, 4)? as usize;
    if nl != n {
        return Err(Error::Parse {
            offset: 4,
            message: format!("{nl} labels for {n} images"),
        });
    }
    let pixels = img.get(16..16 + n * r * c).ok_or(Error::Parse {
        offset: img.len() as u64,
        message: format!("image payload shorter than {}x{}x{}", n, r, c),
    })?;
    let ys = lab.get(8..8 + n).ok_or(Error::Parse {
        offset: lab.len() as u64,
        message: format!("label payload shorter than {n}"),
    })?;
    let x = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let y: Vec<usize> = ys.iter().map(|&v| v as usize).collect();
    let classes = y.iter().max().map_or(0, |m| m + 1).max(2);
    let mut ds = Dataset::new(Tensor::matrix(n, r * c, x), y, classes)?;
    ds.metadata.insert("source".into(), images.display().to_string());
    if n >= 10 {
        ds = ds.with_split(SplitSpec::default(), 0)?;
    }
    Ok(ds)
}

/// Writes an IDX pair; pixel values are rounded from `[0, 1]` to bytes.
pub fn write_idx(images: &Path, labels: &Path, x: &Tensor, y: &[usize], rows: usize, cols: usize) -> Result<()> {
    if rows * cols != x.cols() || x.rows() != y.len() {
        return Err(Error::shape("write_idx", "image geometry mismatch"));
    }
    let mut img = Vec::with_capacity(16 + x.len());
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for v in [y.len(), rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend(x.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + y.len());
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&(y.len() as u32).to_be_bytes());
    lab.extend(y.iter().map(|&v| v as u8));
    fs::File::create(images)
        .and_then(|mut f| f.write_all(&img))
        .map_err(|e| Error::io(images, e))?;
    fs::File::create(labels)
        .and_then(|mut f| f.write_all(&lab))
        .map_err(|e| Error::io(labels, e))
}
