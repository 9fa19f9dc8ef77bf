#![allow(dead_code)]

use rand::Rng as _;
use splitguard::rng;
use splitguard::{Result, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely; central differences
/// of an O(1) functional cannot resolve them to 1e-4 relative.
pub const FD_FLOOR: f64 = 1e-4;

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| r.random_range(lo..hi)).collect())
}

pub fn normal(rows: usize, cols: usize, seed: u64) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng::rng(seed);
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect(),
    )
}

/// Labels in `0..classes` with every class present.
pub fn labels(n: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::rng(seed);
    let mut y: Vec<usize> = (0..n).map(|i| if i < classes { i } else { r.random_range(0..classes) }).collect();
    use rand::seq::SliceRandom;
    y.shuffle(&mut r);
    y
}

pub type Functional = dyn for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>;

fn weighted<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    if out.shape().iter().product::<usize>() == 1 {
        return Ok(out.sum());
    }
    let w = out.tape().leaf(weights.clone());
    Ok(out.mul(w)?.sum())
}

fn evaluate(inputs: &[Tensor], f: &Functional, weights: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    Ok(weighted(f(&vars)?, weights)?.item())
}

/// Largest relative discrepancy between the tape gradient of
/// `Σ w ⊙ f(inputs)` (random `w`) and central differences.
pub fn gradcheck(inputs: &[Tensor], f: &Functional, seed: u64) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&vars)?;
    let shape = out.shape();
    let weights = if shape.len() == 2 {
        uniform(shape[0], shape[1], 0.5, 1.5, seed)
    } else {
        Tensor::scalar(1.0)
    };
    let root = weighted(out, &weights)?;
    tape.backward(root)?;
    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[i]).unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (evaluate(&plus, f, &weights)? - evaluate(&minus, f, &weights)?) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Every differentiable tape operation, the privacy losses, and a full
/// split objective.
pub const GRADIENT_OPS: &[&str] = &[
    "matmul",
    "add_bias",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "leaky_relu",
    "tanh",
    "layer_norm",
    "softmax_cross_entropy",
    "sum",
    "mean",
    "sqrt",
    "recip",
    "acos",
    "clamp",
    "row_normalize",
    "transpose",
    "pairwise_distances",
    "double_center",
    "pe_loss_angular",
    "pe_loss_euclidean",
    "dcor_loss",
    "combined_pe_model",
];

/// Random inputs of random shape for `op`, and the functional to check.
pub fn gradient_case(op: &str, seed: u64) -> (Vec<Tensor>, Box<Functional>) {
    use splitguard::losses::{dcor_loss, pe_loss_angular, pe_loss_euclidean};
    let mut r = rng::rng(rng::derive_str(seed, op));
    let m = r.random_range(2..7usize);
    let n = r.random_range(2..6usize);
    let k = r.random_range(2..6usize);
    let s = |tag: u64| rng::derive(seed, tag);
    match op {
        "matmul" => (vec![normal(m, k, s(1)), normal(k, n, s(2))], Box::new(|v| v[0].matmul(v[1]))),
        "add_bias" => (vec![normal(m, n, s(1)), normal(1, n, s(2))], Box::new(|v| v[0].add_bias(v[1]))),
        "add" => (vec![normal(m, n, s(1)), normal(m, n, s(2))], Box::new(|v| v[0].add(v[1]))),
        "sub" => (vec![normal(m, n, s(1)), normal(m, n, s(2))], Box::new(|v| v[0].sub(v[1]))),
        "mul" => (vec![normal(m, n, s(1)), normal(m, n, s(2))], Box::new(|v| v[0].mul(v[1]))),
        "scale" => (vec![normal(m, n, s(1))], Box::new(|v| Ok(v[0].scale(-1.7)))),
        "add_scalar" => (vec![normal(m, n, s(1))], Box::new(|v| Ok(v[0].add_scalar(0.3)))),
        "leaky_relu" => {
            // keep inputs off the kink
            let x = normal(m, n, s(1)).map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v });
            (vec![x], Box::new(|v| Ok(v[0].leaky_relu(0.01))))
        }
        "tanh" => (vec![normal(m, n, s(1))], Box::new(|v| Ok(v[0].tanh()))),
        "layer_norm" => (vec![normal(m, n, s(1))], Box::new(|v| v[0].layer_norm())),
        "softmax_cross_entropy" => {
            let y = labels(m, n, s(3));
            (vec![normal(m, n, s(1))], Box::new(move |v| v[0].softmax_cross_entropy(&y)))
        }
        "sum" => (vec![normal(m, n, s(1))], Box::new(|v| Ok(v[0].sum().scale(1.3)))),
        "mean" => (vec![normal(m, n, s(1))], Box::new(|v| Ok(v[0].mean().scale(1.3)))),
        "sqrt" => (vec![uniform(m, n, 0.5, 3.0, s(1))], Box::new(|v| Ok(v[0].sqrt()))),
        "recip" => (vec![uniform(m, n, 0.5, 3.0, s(1))], Box::new(|v| Ok(v[0].recip()))),
        "acos" => (vec![uniform(m, n, -0.9, 0.9, s(1))], Box::new(|v| Ok(v[0].acos()))),
        "clamp" => {
            let x = uniform(m, n, -2.0, 2.0, s(1)).map(|v| if (v.abs() - 1.0).abs() < 1e-3 { v * 1.01 } else { v });
            (vec![x], Box::new(|v| Ok(v[0].clamp(-1.0, 1.0))))
        }
        "row_normalize" => (vec![normal(m, n, s(1))], Box::new(|v| v[0].row_normalize())),
        "transpose" => (vec![normal(m, n, s(1))], Box::new(|v| v[0].transpose())),
        "pairwise_distances" => (vec![normal(m, n, s(1))], Box::new(|v| v[0].pairwise_distances(1e-12))),
        "double_center" => (vec![normal(m, m, s(1))], Box::new(|v| v[0].double_center())),
        "pe_loss_angular" => {
            let b = m + 3;
            let y = labels(b, 2.min(b), s(3));
            (vec![normal(b, n, s(1))], Box::new(move |v| pe_loss_angular(v[0], &y, 1e-7)))
        }
        "pe_loss_euclidean" => {
            let b = m + 3;
            let y = labels(b, 2, s(3));
            (vec![normal(b, n, s(1))], Box::new(move |v| pe_loss_euclidean(v[0], &y)))
        }
        "dcor_loss" => {
            let b = m + 3;
            let y = labels(b, 3, s(3));
            (vec![normal(b, n, s(1))], Box::new(move |v| dcor_loss(v[0], &y)))
        }
        "combined_pe_model" => {
            // Dense → tanh → Dense → LayerNorm | Dense, loss CE + α·PE,
            // checked against every weight and bias.
            let b = m + 4;
            let classes = 3;
            let y = labels(b, classes, s(3));
            let inputs = vec![
                normal(b, k, s(1)),
                normal(k, n + 1, s(4)).map(|v| 0.5 * v),
                normal(1, n + 1, s(5)).map(|v| 0.1 * v),
                normal(n + 1, n, s(6)).map(|v| 0.5 * v),
                normal(1, n, s(7)).map(|v| 0.1 * v),
                normal(n, classes, s(8)).map(|v| 0.5 * v),
                normal(1, classes, s(9)).map(|v| 0.1 * v),
            ];
            (
                inputs,
                Box::new(move |v| {
                    let h = v[0].matmul(v[1])?.add_bias(v[2])?.tanh();
                    let z = h.matmul(v[3])?.add_bias(v[4])?.layer_norm()?;
                    let ce = z.matmul(v[5])?.add_bias(v[6])?.softmax_cross_entropy(&y)?;
                    ce.add(pe_loss_angular(z, &y, 1e-7)?.scale(0.5))
                }),
            )
        }
        other => panic!("no gradient case for {other}"),
    }
}

/// The 4-class, 16-dimensional blob benchmark with a 2000/300/600 split.
pub fn standard_blobs(seed: u64) -> splitguard::Dataset {
    use splitguard::data::{gaussian_blobs, BlobParams, SplitSpec};
    gaussian_blobs(
        &BlobParams {
            classes: 4,
            dim: 16,
            per_class: 725,
            center_scale: 4.0,
            noise: 1.0,
            seed,
        },
        SplitSpec::Counts {
            train: 2000,
            validation: 300,
            test: 600,
        },
    )
    .unwrap()
}

/// 16 → 32 → 16 (→ layer norm) | → 4, LeakyReLU(0.01).
pub fn standard_model(loss: &splitguard::LossConfig, seed: u64) -> splitguard::SplitModel {
    let (specs, split) = splitguard::nn::mlp_specs(
        16,
        &[32, 16],
        4,
        splitguard::Activation::LeakyRelu { slope: 0.01 },
        loss.defense.normalizes_split(),
    );
    splitguard::build_mlp(&specs, split, seed).unwrap()
}
