//! Dense split models and the Adam optimizer.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng as _;

use crate::autograd::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// One layer of a dense network.
///
/// The textual form (used in configs and checkpoint headers) is
/// `dense:<in>:<out>`, `leaky_relu:<slope>`, `tanh` or `layer_norm:<dim>`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Activation(Activation),
    LayerNorm { dim: usize },
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { in_dim, out_dim } => write!(f, "dense:{in_dim}:{out_dim}"),
            LayerSpec::Activation(Activation::LeakyRelu { slope }) => {
                write!(f, "leaky_relu:{slope}")
            }
            LayerSpec::Activation(Activation::Tanh) => f.write_str("tanh"),
            LayerSpec::LayerNorm { dim } => write!(f, "layer_norm:{dim}"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Schema(format!("bad layer spec {s:?}"));
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["dense", i, o] => Ok(LayerSpec::Dense {
                in_dim: num(i)?,
                out_dim: num(o)?,
            }),
            ["leaky_relu"] => Ok(LayerSpec::Activation(Activation::LeakyRelu { slope: 0.01 })),
            ["leaky_relu", slope] => Ok(LayerSpec::Activation(Activation::LeakyRelu {
                slope: slope.parse().map_err(|_| bad())?,
            })),
            ["tanh"] => Ok(LayerSpec::Activation(Activation::Tanh)),
            ["layer_norm", d] => Ok(LayerSpec::LayerNorm { dim: num(d)? }),
            _ => Err(bad()),
        }
    }
}

impl From<LayerSpec> for String {
    fn from(spec: LayerSpec) -> String {
        spec.to_string()
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Builds the layer list of a multilayer perceptron
/// `input → hidden[0] → … → classes` with `activation` after every hidden
/// dense layer, optionally followed by a layer norm at the end of the
/// hidden stack.
///
/// Returns the specs and the index of the last dense layer, which is the
/// default split position.
pub fn mlp_specs(
    input: usize,
    hidden: &[usize],
    classes: usize,
    activation: Activation,
    norm_at_split: bool,
) -> (Vec<LayerSpec>, usize) {
    let mut specs = Vec::new();
    let mut dim = input;
    for &h in hidden {
        specs.push(LayerSpec::Dense {
            in_dim: dim,
            out_dim: h,
        });
        specs.push(LayerSpec::Activation(activation));
        dim = h;
    }
    if norm_at_split {
        specs.push(LayerSpec::LayerNorm { dim });
    }
    let split = specs.len();
    specs.push(LayerSpec::Dense {
        in_dim: dim,
        out_dim: classes,
    });
    (specs, split)
}

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    Dense { weight: Tensor, bias: Tensor },
    Activation(Activation),
    LayerNorm,
}

/// An ordered layer stack split into a bottom half `[0, split_index)` and a
/// top half `[split_index, len)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitModel {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    split_index: usize,
    seed: u64,
}

/// Output dimension after each layer, validating the chain.
fn layer_dims(specs: &[LayerSpec]) -> Result<Vec<usize>> {
    let Some(LayerSpec::Dense { in_dim, .. }) = specs.first() else {
        return Err(Error::contract("model must start with a dense layer"));
    };
    let mut dim = *in_dim;
    let mut out = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim != dim {
                    return Err(Error::shape(
                        "build_mlp",
                        format!("layer {i} expects {in_dim} inputs, previous layer gives {dim}"),
                    ));
                }
                if out_dim == 0 {
                    return Err(Error::contract(format!("layer {i} has zero outputs")));
                }
                dim = out_dim;
            }
            LayerSpec::LayerNorm { dim: d } => {
                if d != dim {
                    return Err(Error::shape(
                        "build_mlp",
                        format!("layer_norm over {d} features at width {dim}"),
                    ));
                }
                if d < 2 {
                    return Err(Error::contract("layer_norm needs at least 2 features"));
                }
            }
            LayerSpec::Activation(_) => {}
        }
        out.push(dim);
    }
    Ok(out)
}

/// Builds a model with fan-in uniform weights `U(−√(1/fan_in), √(1/fan_in))`
/// and zero biases, deterministically from `seed`.
pub fn build_mlp(specs: &[LayerSpec], split_index: usize, seed: u64) -> Result<SplitModel> {
    if split_index == 0 || split_index >= specs.len() {
        return Err(Error::contract(format!(
            "split index {split_index} must lie in (0, {})",
            specs.len()
        )));
    }
    Ok(SplitModel {
        split_index,
        ..build_mlp_unchecked(specs, seed)?
    })
}

fn build_mlp_unchecked(specs: &[LayerSpec], seed: u64) -> Result<SplitModel> {
    layer_dims(specs)?;
    let mut rng = rng::rng(seed);
    let layers = specs
        .iter()
        .map(|spec| match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let bound = (1.0 / in_dim as f64).sqrt();
                let w = (0..in_dim * out_dim)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer::Dense {
                    weight: Tensor::matrix(in_dim, out_dim, w),
                    bias: Tensor::zeros(&[1, out_dim]),
                }
            }
            LayerSpec::Activation(a) => Layer::Activation(a),
            LayerSpec::LayerNorm { .. } => Layer::LayerNorm,
        })
        .collect();
    Ok(SplitModel {
        specs: specs.to_vec(),
        layers,
        split_index: specs.len(),
        seed,
    })
}

/// An unsplit stack (the attacker's stand-alone top model). Its split index
/// sits after the last layer, so [`SplitModel::forward`] runs everything.
pub fn build_stack(specs: &[LayerSpec], seed: u64) -> Result<SplitModel> {
    if specs.is_empty() {
        return Err(Error::contract("empty layer stack"));
    }
    let padded = build_mlp_unchecked(specs, seed)?;
    Ok(SplitModel {
        split_index: specs.len(),
        ..padded
    })
}

impl SplitModel {
    /// Reassembles a model from specs and flat parameters in layer order
    /// (weight then bias for each dense layer).
    pub fn from_parameters(
        specs: &[LayerSpec],
        split_index: usize,
        seed: u64,
        params: Vec<Tensor>,
    ) -> Result<Self> {
        let mut model = build_mlp(specs, split_index, seed)?;
        let mut it = params.into_iter();
        for layer in &mut model.layers {
            if let Layer::Dense { weight, bias } = layer {
                let (w, b) = (it.next(), it.next());
                match (w, b) {
                    (Some(w), Some(b)) if w.len() == weight.len() && b.len() == bias.len() => {
                        *weight = Tensor::new(weight.shape().to_vec(), w.into_data())?;
                        *bias = Tensor::new(bias.shape().to_vec(), b.into_data())?;
                    }
                    _ => return Err(Error::shape("from_parameters", "parameter block mismatch")),
                }
            }
        }
        if it.next().is_some() {
            return Err(Error::shape("from_parameters", "too many parameter blocks"));
        }
        Ok(model)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        match self.specs[0] {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn output_dim(&self) -> usize {
        *layer_dims(&self.specs).expect("validated").last().expect("non-empty")
    }

    /// Width of the forward embedding crossing the split.
    pub fn embedding_dim(&self) -> usize {
        layer_dims(&self.specs).expect("validated")[self.split_index - 1]
    }

    pub fn bottom_specs(&self) -> &[LayerSpec] {
        &self.specs[..self.split_index]
    }

    pub fn top_specs(&self) -> &[LayerSpec] {
        &self.specs[self.split_index..]
    }

    /// True when the bottom model ends with a layer norm, i.e. embeddings
    /// live on the √d-sphere.
    pub fn normalized_split(&self) -> bool {
        matches!(self.specs[self.split_index - 1], LayerSpec::LayerNorm { .. })
    }

    pub fn bottom_range(&self) -> Range<usize> {
        0..self.split_index
    }

    pub fn top_range(&self) -> Range<usize> {
        self.split_index..self.layers.len()
    }

    pub fn full_range(&self) -> Range<usize> {
        0..self.layers.len()
    }

    /// Parameters of the layers in `range`, weight then bias per dense layer.
    pub fn parameters(&self, range: Range<usize>) -> Vec<&Tensor> {
        self.layers[range]
            .iter()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias } => vec![weight, bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn parameters_mut(&mut self, range: Range<usize>) -> Vec<&mut Tensor> {
        self.layers[range]
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Dense { weight, bias } => vec![weight, bias],
                _ => vec![],
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters(self.full_range()).iter().map(|t| t.len()).sum()
    }

    /// Registers the parameters of `range` on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape, range: Range<usize>) -> BoundLayers<'t> {
        let layers = self.layers[range]
            .iter()
            .map(|l| match l {
                Layer::Dense { weight, bias } => {
                    BoundLayer::Dense(tape.leaf(weight.clone()), tape.leaf(bias.clone()))
                }
                Layer::Activation(a) => BoundLayer::Activation(*a),
                Layer::LayerNorm => BoundLayer::LayerNorm,
            })
            .collect();
        BoundLayers { layers }
    }

    fn run(&self, range: Range<usize>, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, range);
        let input = tape.leaf(x.clone());
        Ok(bound.forward(input)?.value())
    }

    /// `Z = M_b(X)`.
    pub fn forward_bottom(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward_bottom",
                format!("input {:?} for input dim {}", x.shape(), self.input_dim()),
            ));
        }
        self.run(self.bottom_range(), x)
    }

    /// `logits = M_t(Z)`.
    pub fn forward_top(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.cols() != self.embedding_dim() {
            return Err(Error::shape(
                "forward_top",
                format!("embedding {:?} for split dim {}", z.shape(), self.embedding_dim()),
            ));
        }
        self.run(self.top_range(), z)
    }

    /// Unsplit forward pass through every layer.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape(
                "forward",
                format!("input {:?} for input dim {}", x.shape(), self.input_dim()),
            ));
        }
        self.run(self.full_range(), x)
    }

    /// Output of the first `layer_count` layers (attack-at-earlier-layer hook).
    pub fn forward_prefix(&self, x: &Tensor, layer_count: usize) -> Result<Tensor> {
        if layer_count == 0 || layer_count > self.layers.len() {
            return Err(Error::contract(format!("prefix length {layer_count}")));
        }
        self.run(0..layer_count, x)
    }

    /// Replaces the bottom half with another model's bottom half.
    pub fn with_bottom_of(&self, other: &SplitModel) -> Result<SplitModel> {
        if self.bottom_specs() != other.bottom_specs() {
            return Err(Error::contract("bottom architectures differ"));
        }
        let mut out = self.clone();
        out.layers[..self.split_index].clone_from_slice(&other.layers[..self.split_index]);
        Ok(out)
    }
}

/// Layers of a [`SplitModel`] whose parameters live on a tape.
pub struct BoundLayers<'t> {
    layers: Vec<BoundLayer<'t>>,
}

enum BoundLayer<'t> {
    Dense(Var<'t>, Var<'t>),
    Activation(Activation),
    LayerNorm,
}

impl<'t> BoundLayers<'t> {
    pub fn forward(&self, mut x: Var<'t>) -> Result<Var<'t>> {
        for layer in &self.layers {
            x = match layer {
                BoundLayer::Dense(w, b) => x.matmul(*w)?.add_bias(*b)?,
                BoundLayer::Activation(a) => x.activation(*a),
                BoundLayer::LayerNorm => x.layer_norm()?,
            };
        }
        Ok(x)
    }

    /// Parameter handles in the same order as [`SplitModel::parameters`].
    pub fn parameter_vars(&self) -> Vec<Var<'t>> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                BoundLayer::Dense(w, b) => vec![*w, *b],
                _ => vec![],
            })
            .collect()
    }

    /// Gradients after a backward pass; `None` for unreached parameters.
    pub fn gradients(&self) -> Vec<Option<Tensor>> {
        self.parameter_vars().iter().map(|v| v.grad()).collect()
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            config,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(Option::is_none) {
            return Err(Error::contract(format!("missing gradient for parameter {i}")));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter().flatten())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
            }
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((w, &gi), (mi, vi)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaky() -> Activation {
        Activation::LeakyRelu { slope: 0.01 }
    }

    #[test]
    fn same_seed_same_parameters() {
        let (specs, split) = mlp_specs(6, &[10, 8], 4, leaky(), false);
        let a = build_mlp(&specs, split, 42).unwrap();
        let b = build_mlp(&specs, split, 42).unwrap();
        assert_eq!(a, b);
        let c = build_mlp(&specs, split, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_split_leaves_single_linear_top() {
        let (specs, split) = mlp_specs(784, &[128, 32], 10, leaky(), false);
        let m = build_mlp(&specs, split, 0).unwrap();
        assert_eq!(m.top_specs(), &[LayerSpec::Dense { in_dim: 32, out_dim: 10 }]);
        assert_eq!(m.embedding_dim(), 32);
    }

    #[test]
    fn invalid_split_index_is_rejected() {
        let (specs, _) = mlp_specs(4, &[3], 2, leaky(), false);
        assert!(matches!(build_mlp(&specs, 0, 0), Err(Error::Contract(_))));
        assert!(matches!(build_mlp(&specs, specs.len(), 0), Err(Error::Contract(_))));
    }

    #[test]
    fn mismatched_dims_are_rejected() {
        let specs = [
            LayerSpec::Dense { in_dim: 4, out_dim: 3 },
            LayerSpec::Dense { in_dim: 5, out_dim: 2 },
        ];
        assert!(matches!(build_mlp(&specs, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn weight_std_matches_fan_in_uniform() {
        let specs = [
            LayerSpec::Dense { in_dim: 100, out_dim: 50 },
            LayerSpec::Dense { in_dim: 50, out_dim: 2 },
        ];
        let m = build_mlp(&specs, 1, 9).unwrap();
        let w = m.parameters(0..1)[0];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = (1.0f64 / 300.0).sqrt();
        assert!((std - target).abs() < 0.2 * target, "std {std} vs {target}");
        assert!(m.parameters(0..1)[1].data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn split_halves_compose_to_full_forward() {
        let (specs, split) = mlp_specs(5, &[7, 6], 3, Activation::Tanh, true);
        let m = build_mlp(&specs, split, 1).unwrap();
        let x = Tensor::matrix(4, 5, (0..20).map(|i| (i as f64 * 0.37).sin()).collect());
        let z = m.forward_bottom(&x).unwrap();
        assert_eq!(m.forward_top(&z).unwrap(), m.forward(&x).unwrap());
        for r in 0..z.rows() {
            let sq: f64 = z.row(r).iter().map(|v| v * v).sum();
            assert!((sq - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_batch_forward() {
        let (specs, split) = mlp_specs(3, &[4], 2, leaky(), false);
        let m = build_mlp(&specs, split, 1).unwrap();
        let z = m.forward_bottom(&Tensor::zeros(&[0, 3])).unwrap();
        assert_eq!(z.shape(), &[0, 4]);
        assert_eq!(m.forward_top(&z).unwrap().shape(), &[0, 2]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let (specs, split) = mlp_specs(3, &[4], 2, leaky(), false);
        let m = build_mlp(&specs, split, 1).unwrap();
        assert!(m.forward_bottom(&Tensor::zeros(&[2, 5])).is_err());
    }

    #[test]
    fn layer_spec_text_round_trip() {
        for s in ["dense:3:4", "leaky_relu:0.2", "tanh", "layer_norm:8"] {
            assert_eq!(s.parse::<LayerSpec>().unwrap().to_string(), s);
        }
        assert!("conv:3".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn adam_single_step_constant_gradient() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Some(Tensor::scalar(1.0))]).unwrap();
        assert!((p.item() - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((p.item() + 9.99999990e-4).abs() < 1e-12);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_leaves_param() {
        let mut p = Tensor::scalar(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(p.item(), 0.7);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn adam_missing_gradient_is_contract_error() {
        let mut p = Tensor::scalar(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        assert!(matches!(adam.step(&mut [&mut p], &[None]), Err(Error::Contract(_))));
    }

    #[test]
    fn adam_descends_quadratic() {
        // f(w) = w², gradient 2w.
        let mut p = Tensor::scalar(1.0);
        let config = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(config, &[&p]);
        let mut trace = vec![p.item().abs()];
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * p.item());
            adam.step(&mut [&mut p], &[Some(g)]).unwrap();
            trace.push(p.item().abs());
        }
        assert!(trace.windows(2).skip(5).all(|w| w[1] <= w[0]));
        assert!(trace[100] < trace[0]);
    }
}
