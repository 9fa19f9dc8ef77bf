//! Accuracy, the bottom-model advantage, and pairwise angular-distance
//! histograms.

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::attack::AttackReport;
use crate::error::{Error, Result};
use crate::svg;
use crate::tensor::Tensor;

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise argmax of a logit matrix.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}

/// Fraction of matching labels.
pub fn accuracy_labels(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Accuracy of argmax predictions from `logits`.
pub fn accuracy(logits: &Tensor, truth: &[usize]) -> Result<f64> {
    accuracy_labels(&predict(logits), truth)
}

/// Extra advantage the bottom model grants an attacker, with error `R = 1 − accuracy`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct AdvantageRecord {
    pub r_null: f64,
    pub r_with: f64,
    pub advantage: f64,
    pub perfect: bool,
}

impl AdvantageRecord {
    pub fn from_errors(r_null: f64, r_with: f64) -> Self {
        let advantage = r_null - r_with;
        AdvantageRecord {
            r_null,
            r_with,
            advantage,
            perfect: advantage <= 0.0,
        }
    }
}

/// Compares attacks without (`null`) and with (`with`) the bottom model.
/// Both lists must share one attack kind and leak size.
pub fn bottom_model_advantage(null: &[AttackReport], with: &[AttackReport]) -> Result<AdvantageRecord> {
    let first = null
        .first()
        .or(with.first())
        .ok_or_else(|| Error::contract("advantage needs reports"))?;
    if null.is_empty() || with.is_empty() {
        return Err(Error::contract("advantage needs both report lists non-empty"));
    }
    if null.iter().chain(with).any(|r| r.leaked_k != first.leaked_k) {
        return Err(Error::contract("reports disagree on leaked k"));
    }
    if null.iter().any(|r| r.kind != null[0].kind) || with.iter().any(|r| r.kind != with[0].kind) {
        return Err(Error::contract("reports disagree on attack kind"));
    }
    let mean_error = |rs: &[AttackReport]| {
        rs.iter().map(|r| 1.0 - r.accuracy).sum::<f64>() / rs.len() as f64
    };
    Ok(AdvantageRecord::from_errors(mean_error(null), mean_error(with)))
}

/// Same-class and different-class angular distances over unordered pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularHistogram {
    /// `bins + 1` edges spanning `[0, π]`.
    pub edges: Vec<f64>,
    pub same: Vec<u64>,
    pub diff: Vec<u64>,
    pub median_same: f64,
    pub median_diff: f64,
    pub mean_same: f64,
    pub mean_diff: f64,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Angles `arccos(cos(z_i, z_j))` for `i < j`, split by label agreement.
pub fn pairwise_angles(z: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if z.shape().len() != 2 || z.rows() != labels.len() {
        return Err(Error::shape(
            "angular_distance_histogram",
            format!("embedding {:?} with {} labels", z.shape(), labels.len()),
        ));
    }
    let norms: Vec<f64> = (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12))
        .collect();
    let mut same = Vec::new();
    let mut diff = Vec::new();
    for i in 0..z.rows() {
        for j in i + 1..z.rows() {
            let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum();
            let angle = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0).acos();
            if labels[i] == labels[j] {
                same.push(angle);
            } else {
                diff.push(angle);
            }
        }
    }
    Ok((same, diff))
}

pub fn angular_distance_histogram(z: &Tensor, labels: &[usize], bins: usize) -> Result<AngularHistogram> {
    if bins == 0 {
        return Err(Error::contract("histogram needs at least one bin"));
    }
    let (mut same, mut diff) = pairwise_angles(z, labels)?;
    let bin_of = |a: f64| ((a / PI * bins as f64) as usize).min(bins - 1);
    let mut same_counts = vec![0; bins];
    let mut diff_counts = vec![0; bins];
    same.iter().for_each(|&a| same_counts[bin_of(a)] += 1);
    diff.iter().for_each(|&a| diff_counts[bin_of(a)] += 1);
    Ok(AngularHistogram {
        edges: (0..=bins).map(|b| PI * b as f64 / bins as f64).collect(),
        same: same_counts,
        diff: diff_counts,
        mean_same: mean(&same),
        mean_diff: mean(&diff),
        median_same: median(&mut same),
        median_diff: median(&mut diff),
    })
}

impl AngularHistogram {
    pub fn total_pairs(&self) -> u64 {
        self.same.iter().chain(&self.diff).sum()
    }

    /// `bin_left,bin_right,same_count,diff_count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,same_count,diff_count\n");
        for b in 0..self.same.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[b],
                self.edges[b + 1],
                self.same[b],
                self.diff[b]
            );
        }
        out
    }

    /// Standalone line chart of both distributions, normalized to densities.
    pub fn to_svg(&self, title: &str) -> String {
        let centers: Vec<f64> = self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let norm = |c: &[u64]| {
            let total = c.iter().sum::<u64>().max(1) as f64;
            c.iter().map(|&v| v as f64 / total).collect::<Vec<_>>()
        };
        let same = norm(&self.same);
        let diff = norm(&self.diff);
        let mut chart = svg::Chart::new(title, "angular distance (rad)", "fraction of pairs");
        chart.x_range = Some((0.0, PI));
        chart.series.push(svg::Series::line(
            "same class",
            centers.iter().copied().zip(same).collect(),
            "#1f77b4",
        ));
        chart.series.push(svg::Series::line(
            "different class",
            centers.iter().copied().zip(diff).collect(),
            "#d62728",
        ));
        chart.render()
    }
}
