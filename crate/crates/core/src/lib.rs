//! A desk-scale laboratory for label privacy in split learning.
//!
//! The crate trains two-party split classifiers (optionally with the
//! potential-energy embedding loss or the distance-correlation and
//! label-flipping baselines), runs model completion attacks against the
//! bottom model, scores them with the bottom-model advantage, and checks
//! the geometric arguments behind the defense numerically.
//!
//! Module map:
//!
//! - [`tensor`], [`autograd`]: dense `f64` arrays and reverse-mode AD.
//! - [`nn`]: layer specs, [`SplitModel`](nn::SplitModel), Adam.
//! - [`losses`]: potential-energy, distance-correlation, label flipping.
//! - [`protocol`]: the two-party exchange, transcripts and the training loop.
//! - [`attack`]: fine-tuning, clustering and from-scratch attacks.
//! - [`eval`]: accuracy, advantage, angular-distance histograms.
//! - [`theory`]: particle energy minimization and sphere Monte Carlo.
//! - [`data`]: synthetic generators, CSV/IDX loaders, leaked-sample draws.
//! - [`experiment`]: config-driven sweeps, CSV reports and SVG plots.

pub mod attack;
pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod protocol;
pub mod rng;
pub mod svg;
pub mod tensor;
pub mod theory;

pub use attack::{AttackKind, AttackReport};
pub use autograd::{Activation, Tape, Var};
pub use data::{Dataset, LabeledSet, Partition};
pub use error::{Error, Result};
pub use losses::{DefenseKind, LossConfig};
pub use nn::{build_mlp, build_stack, Adam, AdamConfig, LayerSpec, SplitModel};
pub use protocol::{split_train, TrainConfig, TrainRunResult};
pub use tensor::Tensor;
