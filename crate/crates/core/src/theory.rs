//! Numerical checks of the geometry behind the potential-energy defense:
//! Riesz-energy particle minimization in a bounded region, the hemisphere
//! generalization-error estimate, and the sampling-error scaling law.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Closed region centred at the origin.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Ball { radius: f64 },
    /// Axis-aligned cube `[−side/2, side/2]^dim`.
    Box { side: f64 },
}

impl Region {
    /// Distance from an interior point to the boundary.
    pub fn depth(&self, x: &[f64]) -> f64 {
        match *self {
            Region::Ball { radius } => radius - x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Region::Box { side } => x
                .iter()
                .map(|v| side / 2.0 - v.abs())
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Radial clamp for the ball, coordinate clamp for the box.
    pub fn project(&self, x: &mut [f64]) {
        match *self {
            Region::Ball { radius } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > radius {
                    x.iter_mut().for_each(|v| *v *= radius / norm);
                }
            }
            Region::Box { side } => {
                x.iter_mut().for_each(|v| *v = v.clamp(-side / 2.0, side / 2.0));
            }
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Region::Ball { radius } => radius,
            Region::Box { side } => side / 2.0,
        }
    }

    /// Uniform sample inside the region.
    pub fn sample(&self, dim: usize, rng: &mut rng::Rng) -> Vec<f64> {
        match *self {
            Region::Ball { radius } => {
                let dir = unit_vector(dim, rng);
                let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
                dir.into_iter().map(|v| v * r).collect()
            }
            Region::Box { side } => (0..dim)
                .map(|_| rng.random_range(-side / 2.0..=side / 2.0))
                .collect(),
        }
    }
}

fn unit_vector(dim: usize, rng: &mut rng::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParticleSystem {
    pub n: usize,
    pub dim: usize,
    pub region: Region,
    /// Kernel `1/r^s`.
    pub exponent: f64,
    /// Initial largest per-iteration displacement, relative to the region
    /// scale.
    pub step: f64,
    pub iterations: usize,
}

impl ParticleSystem {
    pub fn new(n: usize, dim: usize, region: Region) -> Self {
        ParticleSystem {
            n,
            dim,
            region,
            exponent: 1.0,
            step: 0.05,
            iterations: 2000,
        }
    }

    /// `n` uniform points inside the region.
    pub fn random_configuration(&self, seed: u64) -> Tensor {
        let mut rng = rng::rng(seed);
        let data = (0..self.n).flat_map(|_| self.region.sample(self.dim, &mut rng)).collect();
        Tensor::matrix(self.n, self.dim, data)
    }
}

/// `Σ_{i≠j} 1/‖xᵢ − xⱼ‖^s` over ordered pairs.
pub fn potential_energy(points: &Tensor, exponent: f64) -> f64 {
    let n = points.rows();
    let mut e = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r2: f64 = points.row(i).iter().zip(points.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            e += 2.0 * r2.powf(-exponent / 2.0);
        }
    }
    e
}

fn energy_gradient(points: &Tensor, exponent: f64) -> Vec<f64> {
    let n = points.rows();
    let d = points.cols();
    let mut g = vec![0.0; n * d];
    for i in 0..n {
        for j in i + 1..n {
            let diff: Vec<f64> = points.row(i).iter().zip(points.row(j)).map(|(a, b)| a - b).collect();
            let r2: f64 = diff.iter().map(|v| v * v).sum::<f64>().max(1e-300);
            // d/dxᵢ of 2·r^{-s}
            let coef = -2.0 * exponent * r2.powf(-exponent / 2.0 - 1.0);
            for k in 0..d {
                g[i * d + k] += coef * diff[k];
                g[j * d + k] -= coef * diff[k];
            }
        }
    }
    g
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimization {
    pub points: Tensor,
    /// Energy after every iteration (accepted or not, the kept state).
    pub trace: Vec<f64>,
    pub converged: bool,
    pub final_step: f64,
}

/// Projected gradient descent from `seed`-drawn uniform points.
pub fn minimize_potential_energy(sys: &ParticleSystem, seed: u64) -> Result<Minimization> {
    if sys.n == 0 || sys.dim == 0 {
        return Err(Error::contract("particle system needs n ≥ 1 and dim ≥ 1"));
    }
    minimize_from(sys, sys.random_configuration(seed))
}

/// Projected gradient descent from given points.
///
/// Each iteration moves the particle with the largest force by `step` (the
/// others proportionally) and projects back into the region. A move that
/// raises the energy is rejected and the step halved; accepted moves let the
/// step grow by 10% up to its initial value. Stops early once the step
/// shrinks below `1e-10` of the region scale.
pub fn minimize_from(sys: &ParticleSystem, mut points: Tensor) -> Result<Minimization> {
    if points.shape() != [sys.n, sys.dim] {
        return Err(Error::shape("minimize_potential_energy", format!("{:?}", points.shape())));
    }
    for i in 0..sys.n {
        let row = &mut points.data_mut()[i * sys.dim..(i + 1) * sys.dim];
        sys.region.project(row);
    }
    let max_step = sys.step * sys.region.scale();
    let floor = 1e-10 * sys.region.scale();
    let mut step = max_step;
    let mut energy = potential_energy(&points, sys.exponent);
    let mut trace = Vec::with_capacity(sys.iterations);
    let mut converged = sys.n == 1;
    for _ in 0..sys.iterations {
        if converged {
            break;
        }
        let g = energy_gradient(&points, sys.exponent);
        let gmax = g
            .chunks(sys.dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if gmax == 0.0 {
            converged = true;
            break;
        }
        let mut trial = points.clone();
        for (i, row) in trial.data_mut().chunks_mut(sys.dim).enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v -= step * g[i * sys.dim + k] / gmax;
            }
            sys.region.project(row);
        }
        let e = potential_energy(&trial, sys.exponent);
        if e <= energy {
            points = trial;
            energy = e;
            step = (step * 1.1).min(max_step);
        } else {
            step *= 0.5;
            if step < floor {
                converged = true;
            }
        }
        trace.push(energy);
    }
    Ok(Minimization {
        points,
        trace,
        converged,
        final_step: step,
    })
}

/// Fraction of points within `eps` of the region boundary.
pub fn border_mass(points: &Tensor, region: &Region, eps: f64) -> Result<f64> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::contract(format!("border shell width must be positive, got {eps}")));
    }
    if points.rows() == 0 {
        return Ok(0.0);
    }
    let inside = (0..points.rows())
        .filter(|&i| region.depth(points.row(i)) <= eps)
        .count();
    Ok(inside as f64 / points.rows() as f64)
}

/// Distribution on the unit sphere, given as a reweighting of the uniform
/// distribution by a function of `|x₁|`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensitySpec {
    Uniform,
    /// Weight `exp(−κ|x₁|)`: mass pulled toward the equator `x₁ = 0`.
    BoundaryConcentrated { kappa: f64 },
    /// Weight `exp(κ(|x₁| − 1))`: mass pulled toward the poles.
    PoleConcentrated { kappa: f64 },
}

impl DensitySpec {
    fn weight(&self, t: f64) -> f64 {
        match *self {
            DensitySpec::Uniform => 1.0,
            DensitySpec::BoundaryConcentrated { kappa } => (-kappa * t.abs()).exp(),
            DensitySpec::PoleConcentrated { kappa } => (kappa * (t.abs() - 1.0)).exp(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DensitySpec::Uniform => Ok(()),
            DensitySpec::BoundaryConcentrated { kappa } | DensitySpec::PoleConcentrated { kappa } => {
                if kappa.is_finite() && kappa >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::contract(format!("kappa must be finite and ≥ 0, got {kappa}")))
                }
            }
        }
    }

    /// Rejection sampling from the uniform sphere (weights are ≤ 1).
    pub fn sample(&self, dim: usize, rng: &mut rng::Rng) -> Vec<f64> {
        loop {
            let x = unit_vector(dim, rng);
            if matches!(self, DensitySpec::Uniform) || rng.random::<f64>() < self.weight(x[0]) {
                return x;
            }
        }
    }

    /// Marginal density of `x₁` at `t`.
    pub fn p1(&self, dim: usize, t: f64) -> f64 {
        let base = uniform_sphere_p1(dim, t);
        match self {
            DensitySpec::Uniform => base,
            _ => base * self.weight(t) / self.normalizer(dim),
        }
    }

    /// `E_uniform[weight(x₁)]` by composite Simpson integration.
    fn normalizer(&self, dim: usize) -> f64 {
        let n = 20_000;
        let h = 2.0 / n as f64;
        let f = |t: f64| uniform_sphere_p1(dim, t) * self.weight(t);
        let mut s = f(-1.0) + f(1.0);
        for i in 1..n {
            let t = -1.0 + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        s * h / 3.0
    }
}

/// Marginal density of one coordinate of a uniform point on `S^{dim−1}`:
/// `Γ(d/2) / (√π Γ((d−1)/2)) · (1 − t²)^{(d−3)/2}`.
pub fn uniform_sphere_p1(dim: usize, t: f64) -> f64 {
    if dim < 2 || t.abs() > 1.0 {
        return 0.0;
    }
    let d = dim as f64;
    let log_c = ln_gamma(d / 2.0) - 0.5 * PI.ln() - ln_gamma((d - 1.0) / 2.0);
    let base = 1.0 - t * t;
    if dim == 3 {
        return log_c.exp();
    }
    if base <= 0.0 {
        return if dim < 3 { f64::INFINITY } else { 0.0 };
    }
    (log_c + (d - 3.0) / 2.0 * base.ln()).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SphereExperiment {
    pub dim: usize,
    pub epsilon: f64,
    pub samples: usize,
    pub density: DensitySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct GeneralizationEstimate {
    /// Monte Carlo estimate of `2·P(x₁ > 0 ∧ w·x ≤ 0)`.
    pub measured: f64,
    pub standard_error: f64,
    /// `2·ε·p₁(0)`.
    pub bound: f64,
    pub p1_zero: f64,
}

/// Disagreement between `sign(x₁)` and `sign(w·x)` with
/// `w = e₁ cos ε + e₂ sin ε`, scaled by 2.
pub fn generalization_error_mc(exp: &SphereExperiment, seed: u64) -> Result<GeneralizationEstimate> {
    exp.density.validate()?;
    if exp.dim < 2 {
        return Err(Error::contract("the sphere experiment needs dim ≥ 2"));
    }
    if !(0.0..PI / 4.0).contains(&exp.epsilon) {
        return Err(Error::contract(format!("ε = {} outside [0, π/4)", exp.epsilon)));
    }
    if exp.samples == 0 {
        return Err(Error::contract("no samples"));
    }
    let (c, s) = (exp.epsilon.cos(), exp.epsilon.sin());
    let mut rng = rng::rng(seed);
    let mut hits = 0u64;
    for _ in 0..exp.samples {
        let x = exp.density.sample(exp.dim, &mut rng);
        if x[0] > 0.0 && c * x[0] + s * x[1] <= 0.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / exp.samples as f64;
    let p1_zero = exp.density.p1(exp.dim, 0.0);
    Ok(GeneralizationEstimate {
        measured: 2.0 * p,
        standard_error: 2.0 * (p * (1.0 - p) / exp.samples as f64).sqrt(),
        bound: 2.0 * exp.epsilon * p1_zero,
        p1_zero,
    })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ScalingTable {
    /// `(m, E[ε²])` pairs.
    pub rows: Vec<(usize, f64)>,
    /// Least-squares slope of `ln E[ε²]` against `ln m`.
    pub slope: f64,
}

impl ScalingTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,mean_sq_angle\n");
        for (m, e) in &self.rows {
            let _ = writeln!(out, "{m},{e}");
        }
        out
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Squared angle between the normalized mean of `m` positive-hemisphere
/// samples and `e₁`, averaged over `trials`, for each `m`.
pub fn sampling_error_scaling(
    density: &DensitySpec,
    dim: usize,
    ms: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ScalingTable> {
    density.validate()?;
    if ms.iter().any(|&m| m < 2) || ms.len() < 2 {
        return Err(Error::contract("need at least two m values, each ≥ 2"));
    }
    if trials == 0 || dim < 2 {
        return Err(Error::contract("need trials ≥ 1 and dim ≥ 2"));
    }
    let mut rows = Vec::with_capacity(ms.len());
    for (mi, &m) in ms.iter().enumerate() {
        let mut rng = rng::rng(rng::derive(seed, mi as u64));
        let mut acc = 0.0;
        for _ in 0..trials {
            let mut mean = vec![0.0; dim];
            for _ in 0..m {
                let mut x = density.sample(dim, &mut rng);
                x[0] = x[0].abs();
                mean.iter_mut().zip(&x).for_each(|(a, v)| *a += v);
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let angle = (mean[0] / norm).clamp(-1.0, 1.0).acos();
            acc += angle * angle;
        }
        rows.push((m, acc / trials as f64));
    }
    let xs: Vec<f64> = rows.iter().map(|r| (r.0 as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    Ok(ScalingTable {
        slope: fit_slope(&xs, &ys),
        rows,
    })
}
