//! Model-completion attacks: few-shot fine-tuning of a fresh top model on a
//! frozen bottom model, k-means clustering of embeddings, and the
//! from-scratch and raw-input baselines.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autograd::Tape;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::eval;
use crate::nn::{build_mlp, build_stack, Adam, AdamConfig, LayerSpec, SplitModel};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Fresh top model on the frozen bottom model.
    FineTune,
    /// Whole model from random initialization on the leaked set only.
    Scratch,
    /// k-means on forward embeddings.
    Cluster,
    /// k-means on raw inputs.
    RawCluster,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::FineTune => "fine_tune",
            AttackKind::Scratch => "scratch",
            AttackKind::Cluster => "cluster",
            AttackKind::RawCluster => "raw_cluster",
        }
    }

    /// The attack that plays "without the bottom model" for this one.
    pub fn null_counterpart(self) -> AttackKind {
        match self {
            AttackKind::FineTune | AttackKind::Scratch => AttackKind::Scratch,
            AttackKind::Cluster | AttackKind::RawCluster => AttackKind::RawCluster,
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fine_tune" => Ok(AttackKind::FineTune),
            "scratch" => Ok(AttackKind::Scratch),
            "cluster" => Ok(AttackKind::Cluster),
            "raw_cluster" => Ok(AttackKind::RawCluster),
            _ => Err(Error::Schema(format!("unknown attack kind {s:?}"))),
        }
    }
}

/// Supervised-attack settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackConfig {
    pub max_epochs: usize,
    /// Training stops once the error on the leaked set drops below this.
    pub stop_error: f64,
    pub restarts: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub batch_size: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            max_epochs: 1000,
            stop_error: 0.01,
            restarts: 5,
            seed: 0,
            adam: AdamConfig::default(),
            batch_size: 64,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::contract("restarts must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    /// Leaked samples per class; `None` for clustering.
    pub leaked_k: Option<usize>,
    /// One test accuracy per restart seed.
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Mean of `accuracies`.
    pub accuracy: f64,
}

impl AttackReport {
    pub fn new(kind: AttackKind, leaked_k: Option<usize>, accuracies: Vec<f64>, seeds: Vec<u64>) -> Self {
        let accuracy = if accuracies.is_empty() {
            f64::NAN
        } else {
            accuracies.iter().sum::<f64>() / accuracies.len() as f64
        };
        AttackReport {
            kind,
            leaked_k,
            accuracies,
            seeds,
            accuracy,
        }
    }

    pub fn error(&self) -> f64 {
        1.0 - self.accuracy
    }
}

fn leaked_k(leaked: &LabeledSet, classes: usize) -> Result<usize> {
    let counts = leaked.class_counts(classes);
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::contract(format!("class {c} missing from the leaked set")));
    }
    Ok(counts.into_iter().min().unwrap_or(0))
}

/// Trains every layer of `model` on `(x, y)` with cross-entropy until the
/// training error falls below `stop_error` or `max_epochs` pass. Returns the
/// number of epochs run.
pub fn fit_classifier(model: &mut SplitModel, x: &Tensor, y: &[usize], config: &AttackConfig, seed: u64) -> Result<usize> {
    let range = model.full_range();
    let mut opt = Adam::new(config.adam, &model.parameters(range.clone()));
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut rng = rng::rng(seed);
    let train_error = |m: &SplitModel| -> Result<f64> { Ok(1.0 - eval::accuracy(&m.forward(x)?, y)?) };
    for epoch in 0..config.max_epochs {
        if train_error(model)? < config.stop_error {
            return Ok(epoch);
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let tape = Tape::new();
            let bound = model.bind(&tape, range.clone());
            let xb = tape.leaf(x.select_rows(chunk));
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let loss = bound.forward(xb)?.softmax_cross_entropy(&yb)?;
            tape.backward(loss)?;
            opt.step(&mut model.parameters_mut(range.clone()), &bound.gradients())?;
        }
    }
    Ok(config.max_epochs)
}

/// Per-class means of `z` as the columns of a `d × C` weight matrix.
fn class_mean_weights(z: &Tensor, y: &[usize], classes: usize) -> Tensor {
    let d = z.cols();
    let mut w = vec![0.0; d * classes];
    let mut counts = vec![0usize; classes];
    for (i, &c) in y.iter().enumerate() {
        counts[c] += 1;
        for (j, v) in z.row(i).iter().enumerate() {
            w[j * classes + c] += v;
        }
    }
    for j in 0..d {
        for c in 0..classes {
            w[j * classes + c] /= counts[c].max(1) as f64;
        }
    }
    Tensor::matrix(d, classes, w)
}

/// Trains a fresh top model of architecture `top_specs` on frozen-bottom
/// embeddings of the leaked samples and scores it on `test`.
///
/// A single dense top starts from the per-class embedding means with zero
/// bias; deeper tops start from random weights.
pub fn fine_tuning_attack(
    bottom: &SplitModel,
    top_specs: &[LayerSpec],
    leaked: &LabeledSet,
    test: &LabeledSet,
    classes: usize,
    config: &AttackConfig,
) -> Result<AttackReport> {
    config.validate()?;
    let k = leaked_k(leaked, classes)?;
    let z_leak = bottom.forward_bottom(&leaked.x)?;
    let z_test = bottom.forward_bottom(&test.x)?;
    let mean_init = matches!(top_specs, [LayerSpec::Dense { in_dim, out_dim }]
        if *in_dim == z_leak.cols() && *out_dim == classes);
    let mut accuracies = Vec::with_capacity(config.restarts);
    let mut seeds = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let seed = rng::derive(config.seed, r as u64);
        let mut top = build_stack(top_specs, seed)?;
        if mean_init {
            let range = top.full_range();
            let mut params = top.parameters_mut(range);
            *params[0] = class_mean_weights(&z_leak, &leaked.y, classes);
            *params[1] = Tensor::zeros(params[1].shape());
        }
        fit_classifier(&mut top, &z_leak, &leaked.y, config, seed)?;
        accuracies.push(eval::accuracy(&top.forward(&z_test)?, &test.y)?);
        seeds.push(seed);
    }
    Ok(AttackReport::new(AttackKind::FineTune, Some(k), accuracies, seeds))
}

/// Trains the complete architecture from random initialization on the
/// leaked samples alone.
pub fn scratch_baseline(
    specs: &[LayerSpec],
    split_index: usize,
    leaked: &LabeledSet,
    test: &LabeledSet,
    classes: usize,
    config: &AttackConfig,
) -> Result<AttackReport> {
    config.validate()?;
    let k = leaked_k(leaked, classes)?;
    let mut accuracies = Vec::with_capacity(config.restarts);
    let mut seeds = Vec::with_capacity(config.restarts);
    for r in 0..config.restarts {
        let seed = rng::derive(config.seed, r as u64);
        let mut model = build_mlp(specs, split_index, seed)?;
        fit_classifier(&mut model, &leaked.x, &leaked.y, config, seed)?;
        accuracies.push(eval::accuracy(&model.forward(&test.x)?, &test.y)?);
        seeds.push(seed);
    }
    Ok(AttackReport::new(AttackKind::Scratch, Some(k), accuracies, seeds))
}

/// `c[i][j]` = samples in cluster `i` with true label `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn from_assignments(clusters: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if clusters.len() != labels.len() {
            return Err(Error::shape("confusion", "assignment / label length mismatch"));
        }
        let mut counts = vec![vec![0; classes]; classes];
        for (&c, &y) in clusters.iter().zip(labels) {
            if c >= classes || y >= classes {
                return Err(Error::Index(format!("cluster {c} / label {y} with {classes} classes")));
            }
            counts[c][y] += 1;
        }
        Ok(ConfusionCounts { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn check_square(&self) -> Result<usize> {
        let n = self.counts.len();
        if self.counts.iter().any(|r| r.len() != n) {
            return Err(Error::contract("confusion counts must be square"));
        }
        Ok(n)
    }

    /// Best accuracy over all cluster → label assignments (Hungarian method).
    pub fn permutation_accuracy(&self) -> Result<f64> {
        let n = self.check_square()?;
        let total = self.total();
        if total == 0 {
            return Ok(0.0);
        }
        let perm = max_weight_assignment(&self.counts);
        let hit: u64 = (0..n).map(|i| self.counts[i][perm[i]]).sum();
        Ok(hit as f64 / total as f64)
    }

    /// Exhaustive reference for small `C`.
    pub fn permutation_accuracy_brute_force(&self) -> Result<f64> {
        let n = self.check_square()?;
        let total = self.total();
        if total == 0 {
            return Ok(0.0);
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = 0;
        permute(&mut perm, 0, &mut |p| {
            best = best.max((0..n).map(|i| self.counts[i][p[i]]).sum::<u64>());
        });
        Ok(best as f64 / total as f64)
    }
}

fn permute(p: &mut [usize], at: usize, visit: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        visit(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, visit);
        p.swap(at, i);
    }
}

/// Row → column assignment maximizing the summed weight (Hungarian method
/// with potentials, O(n³)).
pub fn max_weight_assignment(w: &[Vec<u64>]) -> Vec<usize> {
    let n = w.len();
    let cost = |i: usize, j: usize| -(w[i][j] as i128);
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0i128; n + 1];
    let mut v = vec![0i128; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i128::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = i128::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            assignment[row_of[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub centroids: Tensor,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the kept restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp(points: &Tensor, k: usize, rng: &mut rng::Rng) -> Tensor {
    let n = points.rows();
    let d = points.cols();
    let mut centers = Vec::with_capacity(k * d);
    centers.extend_from_slice(points.row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centers[..d])).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(points.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            *di = di.min(sq_dist(points.row(i), &centers[c * d..(c + 1) * d]));
        }
    }
    Tensor::matrix(k, d, centers)
}

fn lloyd(points: &Tensor, mut centroids: Tensor, max_iter: usize) -> KMeansResult {
    let n = points.rows();
    let k = centroids.rows();
    let d = points.cols();
    let mut assignments = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut dists = vec![0.0; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for i in 0..n {
            let (c, dist) = nearest(points.row(i), &centroids);
            dists[i] = dist;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        trace.push(dists.iter().sum());
        if !changed && trace.len() > 1 {
            break;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Hand the empty cluster the point farthest from its centroid.
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]));
                if let Some(far) = far {
                    let old = assignments[far];
                    counts[old] -= 1;
                    for (s, v) in sums[old * d..(old + 1) * d].iter_mut().zip(points.row(far)) {
                        *s -= v;
                    }
                    assignments[far] = c;
                    dists[far] = 0.0;
                    counts[c] = 1;
                    sums[c * d..(c + 1) * d].copy_from_slice(points.row(far));
                }
            }
        }
        let data = centroids.data_mut();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    data[c * d + j] = sums[c * d + j] / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(points.row(i), centroids.row(assignments[i])))
        .sum();
    KMeansResult {
        centroids,
        assignments,
        inertia,
        inertia_trace: trace,
    }
}

/// k-means with k-means++ seeding; keeps the restart with the lowest
/// inertia.
pub fn kmeans(points: &Tensor, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeansResult> {
    if points.rows() < k {
        return Err(Error::contract(format!("{} points for {k} clusters", points.rows())));
    }
    if k == 0 || restarts == 0 || max_iter == 0 {
        return Err(Error::contract("k, restarts and iterations must be positive"));
    }
    let mut rng = rng::rng(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let init = kmeans_pp(points, k, &mut rng);
        let run = lloyd(points, init, max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts ≥ 1"))
}

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_ITERATIONS: usize = 100;

fn cluster_score(points: &Tensor, labels: &[usize], classes: usize, seed: u64) -> Result<f64> {
    let km = kmeans(points, classes, KMEANS_RESTARTS, KMEANS_ITERATIONS, seed)?;
    ConfusionCounts::from_assignments(&km.assignments, labels, classes)?.permutation_accuracy()
}

/// Clusters the forward embeddings of `x` into `classes` groups and scores
/// the best label matching against the held-out `labels`.
pub fn clustering_attack(bottom: &SplitModel, x: &Tensor, labels: &[usize], classes: usize, seed: u64) -> Result<AttackReport> {
    let z = bottom.forward_bottom(x)?;
    let acc = cluster_score(&z, labels, classes, seed)?;
    Ok(AttackReport::new(AttackKind::Cluster, None, vec![acc], vec![seed]))
}

/// The same clustering run directly on raw inputs.
pub fn raw_clustering(x: &Tensor, labels: &[usize], classes: usize, seed: u64) -> Result<AttackReport> {
    let acc = cluster_score(x, labels, classes, seed)?;
    Ok(AttackReport::new(AttackKind::RawCluster, None, vec![acc], vec![seed]))
}
