//! Embedding-level privacy losses and the label-flipping baseline.
//!
//! All pairwise losses are computed per minibatch and are built from tape
//! primitives, so their gradients come from the same engine as the rest of
//! the model.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Default arccos clamp for the angular potential-energy loss.
pub const DEFAULT_ACOS_CLAMP: f64 = 1e-7;

/// Guard added under the square root of Euclidean pair distances.
pub const EUCLIDEAN_GUARD: f64 = 1e-12;

/// Below this centered sum of squares the distance correlation is reported
/// as zero.
pub const DCOR_DEGENERATE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    Vanilla,
    /// Angular potential-energy loss on layer-normalized embeddings.
    Pe,
    /// Distance-correlation loss between embeddings and one-hot labels.
    Dcor,
    /// Random label flipping before training.
    LabelDp,
}

impl DefenseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseKind::Vanilla => "vanilla",
            DefenseKind::Pe => "pe",
            DefenseKind::Dcor => "dcor",
            DefenseKind::LabelDp => "label_dp",
        }
    }

    /// Whether the model carries a layer norm at the split boundary.
    pub fn normalizes_split(self) -> bool {
        matches!(self, DefenseKind::Pe | DefenseKind::Dcor)
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(DefenseKind::Vanilla),
            "pe" => Ok(DefenseKind::Pe),
            "dcor" => Ok(DefenseKind::Dcor),
            "label_dp" => Ok(DefenseKind::LabelDp),
            _ => Err(Error::Schema(format!("unknown defense {s:?}"))),
        }
    }
}

/// Training objective configuration.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub defense: DefenseKind,
    /// α for `pe` / `dcor`.
    #[serde(default)]
    pub coefficient: f64,
    /// Flip probability for `label_dp`.
    #[serde(default)]
    pub flip_ratio: f64,
    /// δ in the arccos clamp `[−1 + δ, 1 − δ]`.
    #[serde(default = "default_clamp")]
    pub acos_clamp: f64,
}

fn default_clamp() -> f64 {
    DEFAULT_ACOS_CLAMP
}

impl LossConfig {
    pub fn vanilla() -> Self {
        LossConfig {
            defense: DefenseKind::Vanilla,
            coefficient: 0.0,
            flip_ratio: 0.0,
            acos_clamp: DEFAULT_ACOS_CLAMP,
        }
    }

    pub fn pe(alpha: f64) -> Self {
        LossConfig {
            defense: DefenseKind::Pe,
            coefficient: alpha,
            ..Self::vanilla()
        }
    }

    pub fn dcor(alpha: f64) -> Self {
        LossConfig {
            defense: DefenseKind::Dcor,
            coefficient: alpha,
            ..Self::vanilla()
        }
    }

    pub fn label_dp(flip_ratio: f64) -> Self {
        LossConfig {
            defense: DefenseKind::LabelDp,
            flip_ratio,
            ..Self::vanilla()
        }
    }

    /// Builds the configuration for a defense at a sweep value (α or flip
    /// ratio depending on the defense).
    pub fn for_value(defense: DefenseKind, value: f64) -> Self {
        match defense {
            DefenseKind::Vanilla => Self::vanilla(),
            DefenseKind::Pe => Self::pe(value),
            DefenseKind::Dcor => Self::dcor(value),
            DefenseKind::LabelDp => Self::label_dp(value),
        }
    }

    /// The swept value: α, flip ratio, or 0 for vanilla.
    pub fn value(&self) -> f64 {
        match self.defense {
            DefenseKind::Vanilla => 0.0,
            DefenseKind::Pe | DefenseKind::Dcor => self.coefficient,
            DefenseKind::LabelDp => self.flip_ratio,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coefficient >= 0.0) || !self.coefficient.is_finite() {
            return Err(Error::contract(format!("coefficient {} must be ≥ 0", self.coefficient)));
        }
        if !(0.0..=1.0).contains(&self.flip_ratio) {
            return Err(Error::contract(format!("flip ratio {} outside [0, 1]", self.flip_ratio)));
        }
        if !(self.acos_clamp > 0.0 && self.acos_clamp < 1e-3) {
            return Err(Error::contract(format!("arccos clamp {} outside (0, 1e-3)", self.acos_clamp)));
        }
        Ok(())
    }
}

/// 1 where rows `i ≠ j` share a label, 0 elsewhere.
fn same_class_mask(labels: &[usize]) -> Tensor {
    let n = labels.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && labels[i] == labels[j] {
                m[i * n + j] = 1.0;
            }
        }
    }
    Tensor::matrix(n, n, m)
}

fn check_batch(op: &'static str, z: &Var<'_>, labels: &[usize]) -> Result<()> {
    let shape = z.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(
            op,
            format!("embeddings {:?} with {} labels", shape, labels.len()),
        ));
    }
    Ok(())
}

fn has_pairs(labels: &[usize]) -> bool {
    let mut seen = std::collections::HashSet::new();
    labels.iter().any(|y| !seen.insert(*y))
}

/// `Σ_c Σ_{z ≠ z' ∈ Z_c} 1 / arccos(cos∠(z, z'))` over ordered same-class
/// pairs, with the cosine clamped to `[−1 + δ, 1 − δ]`.
pub fn pe_loss_angular<'t>(z: Var<'t>, labels: &[usize], delta: f64) -> Result<Var<'t>> {
    check_batch("pe_loss_angular", &z, labels)?;
    let tape = z.tape();
    if !has_pairs(labels) {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let unit = z.row_normalize()?;
    let cos = unit.matmul(unit.transpose()?)?;
    let angle = cos.clamp(-1.0 + delta, 1.0 - delta).acos();
    let mask = tape.leaf(same_class_mask(labels));
    Ok(angle.recip().mul(mask)?.sum())
}

/// `Σ_c Σ_{z ≠ z' ∈ Z_c} 1 / ‖z − z'‖₂` over ordered same-class pairs.
pub fn pe_loss_euclidean<'t>(z: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    check_batch("pe_loss_euclidean", &z, labels)?;
    let tape = z.tape();
    if !has_pairs(labels) {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let mask = same_class_mask(labels);
    // Masked-out entries (including the zero diagonal) are shifted to 1
    // before the reciprocal so they stay finite.
    let shift = tape.leaf(mask.map(|m| 1.0 - m));
    let dist = z.pairwise_distances(EUCLIDEAN_GUARD)?.add(shift)?;
    Ok(dist.recip().mul(tape.leaf(mask))?.sum())
}

fn label_distance_centered(labels: &[usize]) -> Tensor {
    let n = labels.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if labels[i] != labels[j] {
                d[i * n + j] = std::f64::consts::SQRT_2;
            }
        }
    }
    let tape = Tape::new();
    tape.leaf(Tensor::matrix(n, n, d))
        .double_center()
        .expect("square")
        .value()
}

/// Sample distance correlation between embeddings and one-hot labels:
/// `Σ AᵢⱼBᵢⱼ / √(Σ Aᵢⱼ² · Σ Bᵢⱼ²)` with `A`, `B` the doubly-centered
/// Euclidean distance matrices. Returns a constant 0 when either
/// denominator factor is degenerate.
pub fn dcor_loss<'t>(z: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    check_batch("dcor_loss", &z, labels)?;
    if labels.len() < 2 {
        return Err(Error::contract("distance correlation needs a batch of at least 2"));
    }
    let tape = z.tape();
    let b = label_distance_centered(labels);
    let b_ss: f64 = b.data().iter().map(|v| v * v).sum();
    let a = z.pairwise_distances(0.0)?.double_center()?;
    let a_ss_var = a.mul(a)?.sum();
    let a_ss = a_ss_var.item();
    if a_ss < DCOR_DEGENERATE || b_ss < DCOR_DEGENERATE {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let num = a.mul(tape.leaf(b))?.sum();
    let inv = a_ss_var.sqrt().recip();
    Ok(num.mul(inv)?.scale(1.0 / b_ss.sqrt()))
}

/// Replaces each label, independently with probability `flip_ratio`, by a
/// uniform draw over the other `classes − 1` classes.
pub fn flip_labels(labels: &[usize], flip_ratio: f64, classes: usize, seed: u64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::contract("label flipping needs at least 2 classes"));
    }
    if !(0.0..=1.0).contains(&flip_ratio) {
        return Err(Error::contract(format!("flip ratio {flip_ratio} outside [0, 1]")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Index(format!("label {bad} with {classes} classes")));
    }
    let mut rng = rng::rng(seed);
    Ok(labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < flip_ratio {
                let r = rng.random_range(0..classes - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            } else {
                y
            }
        })
        .collect())
}

/// `CE(logits, labels) + α · aux(Z)` for `pe` / `dcor`; plain cross-entropy
/// for `vanilla` and `label_dp` (whose labels are flipped beforehand).
pub fn combined_loss<'t>(
    logits: Var<'t>,
    labels: &[usize],
    z: Var<'t>,
    config: &LossConfig,
) -> Result<Var<'t>> {
    let ce = logits.softmax_cross_entropy(labels)?;
    if config.coefficient == 0.0 {
        return Ok(ce);
    }
    let aux = match config.defense {
        DefenseKind::Vanilla | DefenseKind::LabelDp => return Ok(ce),
        DefenseKind::Pe => pe_loss_angular(z, labels, config.acos_clamp)?,
        DefenseKind::Dcor => dcor_loss(z, labels)?,
    };
    ce.add(aux.scale(config.coefficient))
}
