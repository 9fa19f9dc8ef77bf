//! Two-party split training: the bottom party sends embeddings, the top
//! party answers with embedding gradients. Every exchange goes through a
//! [`PartyChannel`], which can record a replayable binary transcript.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::autograd::Tape;
use crate::data::{Dataset, LabeledSet, Partition};
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{combined_loss, flip_labels, DefenseKind, LossConfig};
use crate::nn::{Adam, AdamConfig, SplitModel};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    BottomToTop = 0,
    TopToBottom = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PayloadKind {
    Embedding = 0,
    EmbeddingGrad = 1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub direction: Direction,
    pub epoch: u32,
    pub batch: u32,
    pub kind: PayloadKind,
    pub payload: Tensor,
}

/// In-memory lockstep channel between the two parties.
///
/// Enforces the embedding → gradient alternation and the split width on
/// every payload.
#[derive(Debug)]
pub struct PartyChannel {
    split_dim: usize,
    queue: VecDeque<Message>,
    recorded: Option<Vec<Message>>,
    sent: usize,
    awaiting_grad: bool,
}

impl PartyChannel {
    pub fn new(split_dim: usize, record: bool) -> Self {
        PartyChannel {
            split_dim,
            queue: VecDeque::new(),
            recorded: record.then(Vec::new),
            sent: 0,
            awaiting_grad: false,
        }
    }

    fn push(&mut self, msg: Message) -> Result<()> {
        let shape = msg.payload.shape();
        if shape.len() != 2 || shape[1] != self.split_dim {
            return Err(Error::shape(
                "channel",
                format!("payload {shape:?} on a {}-wide split", self.split_dim),
            ));
        }
        if let Some(log) = &mut self.recorded {
            log.push(msg.clone());
        }
        self.sent += 1;
        self.queue.push_back(msg);
        Ok(())
    }

    fn pop(&mut self, kind: PayloadKind) -> Result<Message> {
        match self.queue.pop_front() {
            Some(m) if m.kind == kind => Ok(m),
            Some(m) => Err(Error::contract(format!("expected {kind:?}, got {:?}", m.kind))),
            None => Err(Error::contract(format!("expected {kind:?}, channel empty"))),
        }
    }

    /// Bottom → top.
    pub fn send_embedding(&mut self, epoch: u32, batch: u32, z: Tensor) -> Result<()> {
        if self.awaiting_grad {
            return Err(Error::contract("embedding sent before the previous gradient"));
        }
        self.awaiting_grad = true;
        self.push(Message {
            direction: Direction::BottomToTop,
            epoch,
            batch,
            kind: PayloadKind::Embedding,
            payload: z,
        })
    }

    pub fn recv_embedding(&mut self) -> Result<Tensor> {
        Ok(self.pop(PayloadKind::Embedding)?.payload)
    }

    /// Top → bottom.
    pub fn send_gradient(&mut self, epoch: u32, batch: u32, grad: Tensor) -> Result<()> {
        if !self.awaiting_grad {
            return Err(Error::contract("gradient sent without a pending embedding"));
        }
        self.awaiting_grad = false;
        self.push(Message {
            direction: Direction::TopToBottom,
            epoch,
            batch,
            kind: PayloadKind::EmbeddingGrad,
            payload: grad,
        })
    }

    pub fn recv_gradient(&mut self) -> Result<Tensor> {
        Ok(self.pop(PayloadKind::EmbeddingGrad)?.payload)
    }

    /// Total messages sent, recorded or not.
    pub fn message_count(&self) -> usize {
        self.sent
    }

    /// Everything recorded so far; empty when recording is off.
    pub fn transcript(&self) -> Transcript {
        Transcript {
            messages: self.recorded.clone().unwrap_or_default(),
        }
    }
}

pub const TRANSCRIPT_MAGIC: &[u8; 8] = b"SPLTLOG1";

/// Recorded protocol messages with a framed binary encoding.
///
/// Layout: magic, then per message a little-endian `u32` frame length
/// followed by `u8 direction, u32 epoch, u32 batch, u8 kind, u32 rows,
/// u32 cols` and `rows·cols` little-endian `f64` values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = TRANSCRIPT_MAGIC.to_vec();
        for m in &self.messages {
            let body = 18 + 8 * m.payload.len();
            out.extend_from_slice(&(body as u32).to_le_bytes());
            out.push(m.direction as u8);
            out.extend_from_slice(&m.epoch.to_le_bytes());
            out.extend_from_slice(&m.batch.to_le_bytes());
            out.push(m.kind as u8);
            out.extend_from_slice(&(m.payload.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.payload.cols() as u32).to_le_bytes());
            for v in m.payload.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(8, "magic")? != TRANSCRIPT_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                message: "bad transcript magic".into(),
            });
        }
        let mut messages = Vec::new();
        while c.pos < bytes.len() {
            let frame_start = c.pos;
            let len = c.u32("frame length")? as usize;
            let body_start = c.pos;
            let direction = match c.u8("direction")? {
                0 => Direction::BottomToTop,
                1 => Direction::TopToBottom,
                d => {
                    return Err(Error::Parse {
                        offset: body_start as u64,
                        message: format!("unknown direction {d}"),
                    })
                }
            };
            let epoch = c.u32("epoch")?;
            let batch = c.u32("batch")?;
            let kind = match c.u8("payload kind")? {
                0 => PayloadKind::Embedding,
                1 => PayloadKind::EmbeddingGrad,
                k => {
                    return Err(Error::Parse {
                        offset: (c.pos - 1) as u64,
                        message: format!("unknown payload kind {k}"),
                    })
                }
            };
            let rows = c.u32("rows")? as usize;
            let cols = c.u32("cols")? as usize;
            if len != 18 + 8 * rows * cols {
                return Err(Error::Parse {
                    offset: frame_start as u64,
                    message: format!("frame length {len} disagrees with {rows}x{cols} payload"),
                });
            }
            let raw = c.take(8 * rows * cols, "payload")?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            messages.push(Message {
                direction,
                epoch,
                batch,
                kind,
                payload: Tensor::matrix(rows, cols, data),
            });
        }
        Ok(Transcript { messages })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Kinds of every payload that travelled toward the bottom party.
    pub fn kinds_toward_bottom(&self) -> impl Iterator<Item = PayloadKind> + '_ {
        self.messages
            .iter()
            .filter(|m| m.direction == Direction::TopToBottom)
            .map(|m| m.kind)
    }
}

/// Re-runs every recorded embedding through `top`.
pub fn replay_logits(log: &Transcript, top: &SplitModel) -> Result<Vec<Tensor>> {
    log.messages
        .iter()
        .filter(|m| m.kind == PayloadKind::Embedding)
        .map(|m| top.forward_top(&m.payload))
        .collect()
}

/// Split inference: the bottom party sends `Z`, the top party returns logits
/// locally. Only the embedding crosses the channel.
pub fn split_inference(model: &SplitModel, x: &Tensor, channel: &mut PartyChannel, batch: u32) -> Result<Tensor> {
    let z = model.forward_bottom(x)?;
    channel.send_embedding(0, batch, z)?;
    let z = channel.recv_embedding()?;
    channel.awaiting_grad = false;
    model.forward_top(&z)
}

/// Loss and logits of one optimization step (before the update).
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub logits: Tensor,
}

/// Both parties' optimizer state around a shared [`SplitModel`].
#[derive(Debug)]
pub struct SplitTrainer {
    pub model: SplitModel,
    pub loss: LossConfig,
    pub channel: PartyChannel,
    bottom_opt: Adam,
    top_opt: Adam,
}

impl SplitTrainer {
    pub fn new(model: SplitModel, loss: LossConfig, adam: AdamConfig, record: bool) -> Self {
        let bottom_opt = Adam::new(adam, &model.parameters(model.bottom_range()));
        let top_opt = Adam::new(adam, &model.parameters(model.top_range()));
        let channel = PartyChannel::new(model.embedding_dim(), record);
        SplitTrainer {
            model,
            loss,
            channel,
            bottom_opt,
            top_opt,
        }
    }

    /// One protocol round: forward embedding, top update, gradient back,
    /// bottom update.
    pub fn step(&mut self, x: &Tensor, labels: &[usize], epoch: u32, batch: u32) -> Result<StepOutput> {
        let bottom_range = self.model.bottom_range();
        let top_range = self.model.top_range();

        let bottom_tape = Tape::new();
        let bottom = self.model.bind(&bottom_tape, bottom_range.clone());
        let z = bottom.forward(bottom_tape.leaf(x.clone()))?;
        self.channel.send_embedding(epoch, batch, z.value())?;

        let received = self.channel.recv_embedding()?;
        let top_tape = Tape::new();
        let top = self.model.bind(&top_tape, top_range.clone());
        let z_top = top_tape.leaf(received);
        let logits = top.forward(z_top)?;
        let loss = combined_loss(logits, labels, z_top, &self.loss)?;
        top_tape.backward(loss)?;
        let dz = z_top
            .grad()
            .ok_or_else(|| Error::contract("loss does not depend on the embedding"))?;
        let top_grads = top.gradients();
        self.channel.send_gradient(epoch, batch, dz)?;

        let dz = self.channel.recv_gradient()?;
        bottom_tape.backward_with(z, dz)?;
        let bottom_grads = bottom.gradients();

        self.top_opt
            .step(&mut self.model.parameters_mut(top_range), &top_grads)?;
        self.bottom_opt
            .step(&mut self.model.parameters_mut(bottom_range), &bottom_grads)?;
        Ok(StepOutput {
            loss: loss.item(),
            logits: logits.value(),
        })
    }
}

/// The unsplit reference: one tape, one optimizer over every parameter.
#[derive(Debug)]
pub struct CentralTrainer {
    pub model: SplitModel,
    pub loss: LossConfig,
    opt: Adam,
}

impl CentralTrainer {
    pub fn new(model: SplitModel, loss: LossConfig, adam: AdamConfig) -> Self {
        let opt = Adam::new(adam, &model.parameters(model.full_range()));
        CentralTrainer { model, loss, opt }
    }

    pub fn step(&mut self, x: &Tensor, labels: &[usize]) -> Result<StepOutput> {
        let tape = Tape::new();
        let bottom = self.model.bind(&tape, self.model.bottom_range());
        let top = self.model.bind(&tape, self.model.top_range());
        let z = bottom.forward(tape.leaf(x.clone()))?;
        let logits = top.forward(z)?;
        let loss = combined_loss(logits, labels, z, &self.loss)?;
        tape.backward(loss)?;
        let mut grads = bottom.gradients();
        grads.extend(top.gradients());
        let range = self.model.full_range();
        self.opt.step(&mut self.model.parameters_mut(range), &grads)?;
        Ok(StepOutput {
            loss: loss.item(),
            logits: logits.value(),
        })
    }
}

/// Which epoch's model a run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum SelectionRule {
    /// Best validation epoch, stopping after `patience` epochs without
    /// strict improvement. Ties go to the later epoch.
    EarlyStopping { patience: usize },
    /// Best validation epoch within `first..=last` (1-based).
    Window { first: usize, last: usize },
}

impl SelectionRule {
    /// vanilla: patience 20; pe / dcor: last 10% of epochs; label_dp: last
    /// half.
    pub fn for_defense(defense: DefenseKind, epochs: usize) -> Self {
        let window = |frac: f64| SelectionRule::Window {
            first: ((frac * epochs as f64).ceil() as usize).clamp(1, epochs.max(1)),
            last: epochs,
        };
        match defense {
            DefenseKind::Vanilla => SelectionRule::EarlyStopping { patience: 20 },
            DefenseKind::Pe | DefenseKind::Dcor => window(0.9),
            DefenseKind::LabelDp => window(0.5),
        }
    }

    fn eligible(&self, epoch: usize) -> bool {
        match *self {
            SelectionRule::EarlyStopping { .. } => true,
            SelectionRule::Window { first, last } => (first..=last).contains(&epoch),
        }
    }
}

impl std::fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SelectionRule::EarlyStopping { patience } => write!(f, "early_stopping(patience={patience})"),
            SelectionRule::Window { first, last } => write!(f, "best_in_window({first}..={last})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Keep a transcript of every message (memory heavy on long runs).
    pub record_transcript: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            adam: AdamConfig::default(),
            record_transcript: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainRunResult {
    /// The selected model.
    pub model: SplitModel,
    /// Epoch of the selected model; 0 when no epoch ran.
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub history: Vec<EpochMetrics>,
    pub rule: SelectionRule,
    pub seed: u64,
    pub batch_size: usize,
    pub wall_clock_secs: f64,
    pub message_count: usize,
    pub transcript: Transcript,
}

fn check_dims(model: &SplitModel, data: &Dataset) -> Result<()> {
    if model.input_dim() != data.input_dim() {
        return Err(Error::shape(
            "split_train",
            format!("model input {} vs data width {}", model.input_dim(), data.input_dim()),
        ));
    }
    if model.output_dim() != data.classes {
        return Err(Error::shape(
            "split_train",
            format!("model output {} vs {} classes", model.output_dim(), data.classes),
        ));
    }
    Ok(())
}

fn diverged(loss: &LossConfig, detail: String) -> Error {
    Error::Diverged {
        defense: loss.defense.to_string(),
        coefficient: loss.value(),
        detail,
    }
}

/// Trains `model` on `data` through the split protocol and applies the
/// defense's model-selection rule. Deterministic in `seed`.
pub fn split_train(
    model: SplitModel,
    data: &Dataset,
    loss: &LossConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainRunResult> {
    check_dims(&model, data)?;
    loss.validate()?;
    if config.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    let started = Instant::now();
    let rule = SelectionRule::for_defense(loss.defense, config.epochs);
    let train = data.part(Partition::Train);
    let validation = if data.validation.is_empty() {
        train.clone()
    } else {
        data.part(Partition::Validation)
    };
    let labels = if loss.defense == DefenseKind::LabelDp {
        flip_labels(&train.y, loss.flip_ratio, data.classes, rng::derive_str(seed, "label_dp"))?
    } else {
        train.y.clone()
    };

    let mut trainer = SplitTrainer::new(model, *loss, config.adam, config.record_transcript);
    let mut best = trainer.model.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut last_improvement = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng::rng(rng::derive(seed, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut hits = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.select(chunk);
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let out = trainer.step(&batch.x, &batch_labels, epoch as u32, b as u32)?;
            if !out.loss.is_finite() {
                return Err(diverged(loss, format!("loss {} at epoch {epoch}, batch {b}", out.loss)));
            }
            loss_sum += out.loss * chunk.len() as f64;
            hits += eval::accuracy(&out.logits, &batch_labels)? * chunk.len() as f64;
        }
        let n = train.len().max(1) as f64;
        let logits = trainer.model.forward(&validation.x)?;
        if !logits.is_finite() {
            return Err(diverged(loss, format!("non-finite logits after epoch {epoch}")));
        }
        let val_acc = eval::accuracy(&logits, &validation.y)?;
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_accuracy: hits / n,
            validation_accuracy: val_acc,
        });
        if rule.eligible(epoch) && val_acc >= best_acc {
            if val_acc > best_acc {
                last_improvement = epoch;
            }
            best_acc = val_acc;
            best_epoch = epoch;
            best = trainer.model.clone();
        }
        if let SelectionRule::EarlyStopping { patience } = rule {
            if epoch - last_improvement >= patience {
                break;
            }
        }
    }
    if best_epoch == 0 {
        best_acc = eval::accuracy(&best.forward(&validation.x)?, &validation.y)?;
    }
    Ok(TrainRunResult {
        model: best,
        best_epoch,
        best_validation_accuracy: best_acc,
        history,
        rule,
        seed,
        batch_size: config.batch_size,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        message_count: trainer.channel.message_count(),
        transcript: trainer.channel.transcript(),
    })
}

/// Test accuracy of a trained model.
pub fn test_accuracy(model: &SplitModel, set: &LabeledSet) -> Result<f64> {
    eval::accuracy(&model.forward(&set.x)?, &set.y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Activation;
    use crate::data::{gaussian_blobs, BlobParams, SplitSpec};
    use crate::nn::{build_mlp, mlp_specs};

    fn tiny_data() -> Dataset {
        gaussian_blobs(
            &BlobParams {
                classes: 3,
                dim: 5,
                per_class: 20,
                center_scale: 3.0,
                noise: 0.5,
                seed: 1,
            },
            SplitSpec::default(),
        )
        .unwrap()
    }

    fn tiny_model(norm: bool) -> SplitModel {
        let (specs, split) = mlp_specs(5, &[8, 4], 3, Activation::LeakyRelu { slope: 0.01 }, norm);
        build_mlp(&specs, split, 7).unwrap()
    }

    fn cfg(epochs: usize, record: bool) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            record_transcript: record,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let m = tiny_model(false);
        let r = split_train(m.clone(), &tiny_data(), &LossConfig::vanilla(), &cfg(0, true), 3).unwrap();
        assert_eq!(r.model, m);
        assert_eq!(r.best_epoch, 0);
        assert_eq!(r.transcript.encode(), TRANSCRIPT_MAGIC.to_vec());
    }

    #[test]
    fn message_count_is_two_per_batch() {
        let d = tiny_data();
        let r = split_train(tiny_model(true), &d, &LossConfig::pe(1.0), &cfg(3, true), 3).unwrap();
        let batches = d.train.len().div_ceil(16);
        assert_eq!(r.message_count, 2 * batches * 3);
        assert_eq!(r.transcript.len(), r.message_count);
        assert!(r.transcript.kinds_toward_bottom().all(|k| k == PayloadKind::EmbeddingGrad));
    }

    #[test]
    fn transcript_round_trip_and_truncation() {
        let r = split_train(tiny_model(false), &tiny_data(), &LossConfig::vanilla(), &cfg(1, true), 3).unwrap();
        let bytes = r.transcript.encode();
        assert_eq!(Transcript::decode(&bytes).unwrap(), r.transcript);
        let cut = bytes.len() - 3;
        match Transcript::decode(&bytes[..cut]) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 8 && offset <= cut as u64),
            other => panic!("expected framing error, got {other:?}"),
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let m = tiny_model(true);
        let d = tiny_data();
        let mut ch = PartyChannel::new(m.embedding_dim(), true);
        let test = d.part(Partition::Test);
        let live = split_inference(&m, &test.x, &mut ch, 0).unwrap();
        let replayed = replay_logits(&ch.transcript(), &m).unwrap();
        assert_eq!(replayed, vec![live.clone()]);
        assert_eq!(replayed, replay_logits(&ch.transcript(), &m).unwrap());
        assert_eq!(live, m.forward(&test.x).unwrap());
    }

    #[test]
    fn channel_enforces_alternation_and_width() {
        let mut ch = PartyChannel::new(2, false);
        assert!(ch.send_gradient(0, 0, Tensor::zeros(&[1, 2])).is_err());
        assert!(ch.send_embedding(0, 0, Tensor::zeros(&[1, 3])).is_err());
        let mut ch = PartyChannel::new(2, false);
        ch.send_embedding(0, 0, Tensor::zeros(&[1, 2])).unwrap();
        assert!(ch.send_embedding(0, 1, Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn split_step_matches_central_step_bitwise() {
        let d = tiny_data();
        let train = d.part(Partition::Train);
        for loss in [LossConfig::vanilla(), LossConfig::pe(2.0), LossConfig::dcor(1.0)] {
            let m = tiny_model(loss.defense.normalizes_split());
            let mut split = SplitTrainer::new(m.clone(), loss, AdamConfig::default(), false);
            let mut central = CentralTrainer::new(m, loss, AdamConfig::default());
            for step in 0..3 {
                let a = split.step(&train.x, &train.y, 0, step).unwrap();
                let b = central.step(&train.x, &train.y).unwrap();
                assert_eq!(a.loss.to_bits(), b.loss.to_bits());
                assert_eq!(split.model, central.model);
            }
        }
    }

    #[test]
    fn rerun_is_bit_identical() {
        let d = tiny_data();
        let a = split_train(tiny_model(true), &d, &LossConfig::pe(0.5), &cfg(4, false), 9).unwrap();
        let b = split_train(tiny_model(true), &d, &LossConfig::pe(0.5), &cfg(4, false), 9).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn window_rule_picks_best_in_window() {
        let d = tiny_data();
        let r = split_train(tiny_model(true), &d, &LossConfig::pe(0.5), &cfg(10, false), 2).unwrap();
        assert_eq!(r.rule, SelectionRule::Window { first: 9, last: 10 });
        let window_max = r.history[8..]
            .iter()
            .map(|m| m.validation_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_validation_accuracy, window_max);
        assert!((9..=10).contains(&r.best_epoch));
    }

    #[test]
    fn selection_windows_scale() {
        assert_eq!(
            SelectionRule::for_defense(DefenseKind::Pe, 100),
            SelectionRule::Window { first: 90, last: 100 }
        );
        assert_eq!(
            SelectionRule::for_defense(DefenseKind::LabelDp, 100),
            SelectionRule::Window { first: 50, last: 100 }
        );
        assert_eq!(
            SelectionRule::for_defense(DefenseKind::Vanilla, 100),
            SelectionRule::EarlyStopping { patience: 20 }
        );
    }

    #[test]
    fn nan_loss_reports_defense_and_coefficient() {
        let d = tiny_data();
        let cfg = TrainConfig {
            adam: AdamConfig {
                lr: f64::NAN,
                ..AdamConfig::default()
            },
            ..cfg(2, false)
        };
        match split_train(tiny_model(true), &d, &LossConfig::dcor(32.0), &cfg, 1) {
            Err(Error::Diverged { defense, coefficient, .. }) => {
                assert_eq!(defense, "dcor");
                assert_eq!(coefficient, 32.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
