mod common;

use splitguard::attack::{fine_tuning_attack, AttackConfig};
use splitguard::checkpoint::Checkpoint;
use splitguard::data::{concentric_shells, gaussian_blobs, BlobParams, LeakSpec, ShellParams, SplitSpec};
use splitguard::eval::angular_distance_histogram;
use splitguard::losses::{pe_loss_angular, DEFAULT_ACOS_CLAMP};
use splitguard::nn::mlp_specs;
use splitguard::protocol::{test_accuracy, Direction, PayloadKind, SplitTrainer};
use splitguard::theory::{
    generalization_error_mc, minimize_potential_energy, DensitySpec, ParticleSystem, Region, SphereExperiment,
};
use splitguard::{build_mlp, split_train, Activation, AdamConfig, LossConfig, Partition, Tape, Tensor, TrainConfig};

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_blobs_drive_training_loss_below_a_tenth() {
    let data = gaussian_blobs(
        &BlobParams {
            classes: 2,
            dim: 4,
            per_class: 100,
            center_scale: 4.0,
            noise: 0.5,
            seed: 3,
        },
        SplitSpec::default(),
    )
    .unwrap();
    let train = data.part(Partition::Train);
    let (specs, split) = mlp_specs(4, &[8, 4], 2, Activation::LeakyRelu { slope: 0.01 }, false);
    let mut trainer = SplitTrainer::new(
        build_mlp(&specs, split, 3).unwrap(),
        LossConfig::vanilla(),
        AdamConfig::default(),
        false,
    );
    let idx: Vec<usize> = (0..train.len()).collect();
    let mut reached = None;
    for epoch in 0..200u32 {
        let mut total = 0.0;
        for (b, chunk) in idx.chunks(32).enumerate() {
            let batch = train.select(chunk);
            total += trainer.step(&batch.x, &batch.y, epoch, b as u32).unwrap().loss * chunk.len() as f64;
        }
        if total / (train.len() as f64) < 0.1 {
            reached = Some(epoch);
            break;
        }
    }
    assert!(reached.is_some());
}

#[test]
fn angular_pe_pushes_two_points_to_antipodes() {
    let mut z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.8, 0.6]);
    let labels = [0, 0];
    // The angle has a kink at π, so a fixed step oscillates with amplitude
    // about step·|∇|; 1e-3 keeps that well inside the tolerance.
    for _ in 0..20_000 {
        let tape = Tape::new();
        let v = tape.leaf(z.clone());
        let loss = pe_loss_angular(v, &labels, DEFAULT_ACOS_CLAMP).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(v).unwrap();
        for (p, d) in z.data_mut().iter_mut().zip(g.data()) {
            *p -= 1e-3 * d;
        }
        // stay on the unit circle
        for r in 0..2 {
            let n = (z.get2(r, 0).powi(2) + z.get2(r, 1).powi(2)).sqrt();
            z.data_mut()[2 * r] /= n;
            z.data_mut()[2 * r + 1] /= n;
        }
    }
    let cos = z.get2(0, 0) * z.get2(1, 0) + z.get2(0, 1) * z.get2(1, 1);
    assert!((cos.clamp(-1.0, 1.0).acos() - std::f64::consts::PI).abs() < 1e-3);
}

#[test]
fn every_defense_reruns_to_identical_checkpoints() {
    let data = common::standard_blobs(4);
    for loss in [
        LossConfig::vanilla(),
        LossConfig::pe(0.5),
        LossConfig::dcor(2.0),
        LossConfig::label_dp(0.08),
    ] {
        let run = |seed| {
            let r = split_train(common::standard_model(&loss, seed), &data, &loss, &small_config(3), seed).unwrap();
            Checkpoint::new(r.model, loss).encode().unwrap()
        };
        assert_eq!(run(9), run(9), "{}", loss.defense);
    }
}

#[test]
fn coefficient_changes_no_message_and_only_gradients_reach_the_bottom() {
    let data = common::standard_blobs(5);
    let schema = |alpha: f64| {
        let loss = LossConfig::pe(alpha);
        let cfg = TrainConfig {
            record_transcript: true,
            ..small_config(2)
        };
        let run = split_train(common::standard_model(&loss, 1), &data, &loss, &cfg, 1).unwrap();
        for m in &run.transcript.messages {
            if m.direction == Direction::TopToBottom {
                assert_eq!(m.kind, PayloadKind::EmbeddingGrad);
            }
        }
        assert!(run.transcript.kinds_toward_bottom().all(|k| k == PayloadKind::EmbeddingGrad));
        run.transcript
            .messages
            .iter()
            .map(|m| (m.direction, m.kind, m.epoch, m.batch, m.payload.shape().to_vec()))
            .collect::<Vec<_>>()
    };
    let low = schema(0.25);
    assert_eq!(low.len(), 2 * 2 * 2000usize.div_ceil(64));
    assert_eq!(low, schema(32.0));
}

#[test]
fn fine_tuning_accuracy_grows_with_leaked_labels() {
    let ks = [1, 2, 4, 8];
    let mut mean = vec![0.0; ks.len()];
    let seeds = 5;
    for seed in 0..seeds {
        let data = common::standard_blobs(100 + seed);
        let loss = LossConfig::vanilla();
        let run = split_train(common::standard_model(&loss, seed), &data, &loss, &small_config(5), seed).unwrap();
        let test = data.part(Partition::Test);
        let cfg = AttackConfig {
            seed,
            ..AttackConfig::default()
        };
        for (i, &k) in ks.iter().enumerate() {
            let leak = data.leak(LeakSpec { per_class: k, seed }).unwrap();
            let report = fine_tuning_attack(&run.model, run.model.top_specs(), &leak, &test, 4, &cfg).unwrap();
            mean[i] += report.accuracy / seeds as f64;
        }
    }
    for w in mean.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "{mean:?}");
    }
}

#[test]
fn vanilla_clusters_same_class_angles_and_pe_evens_them_out() {
    let data = common::standard_blobs(6);
    let test = data.part(Partition::Test);
    let angles = |loss: LossConfig| {
        let run = split_train(common::standard_model(&loss, 2), &data, &loss, &small_config(30), 2).unwrap();
        let z = run.model.forward_bottom(&test.x).unwrap();
        angular_distance_histogram(&z, &test.y, 36).unwrap()
    };
    let vanilla = angles(LossConfig::vanilla());
    assert!(vanilla.mean_same < vanilla.mean_diff, "{} vs {}", vanilla.mean_same, vanilla.mean_diff);
    let pe = angles(LossConfig::pe(1.0));
    assert!((pe.mean_same - pe.mean_diff).abs() < 0.15, "{} vs {}", pe.mean_same, pe.mean_diff);
}

#[test]
fn wide_shells_are_learnable() {
    let data = concentric_shells(
        &ShellParams {
            classes: 2,
            dim: 4,
            per_class: 300,
            gap: 3.0,
            noise: 0.1,
            seed: 8,
        },
        SplitSpec::default(),
    )
    .unwrap();
    let (specs, split) = mlp_specs(4, &[32, 16], 2, Activation::LeakyRelu { slope: 0.01 }, false);
    let run = split_train(
        build_mlp(&specs, split, 8).unwrap(),
        &data,
        &LossConfig::vanilla(),
        &TrainConfig {
            epochs: 200,
            batch_size: 32,
            ..TrainConfig::default()
        },
        8,
    )
    .unwrap();
    let acc = test_accuracy(&run.model, &data.part(Partition::Test)).unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn energy_trace_settles_monotonically() {
    let sys = ParticleSystem::new(48, 2, Region::Ball { radius: 1.0 });
    let run = minimize_potential_energy(&sys, 12).unwrap();
    let tail = &run.trace[run.trace.len() / 2..];
    assert!(tail.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn monte_carlo_runs_bracket_the_analytic_error() {
    let eps = 0.05;
    let exact = eps / std::f64::consts::PI;
    let estimates: Vec<f64> = (0..20)
        .map(|seed| {
            generalization_error_mc(
                &SphereExperiment {
                    dim: 3,
                    epsilon: eps,
                    samples: 20_000,
                    density: DensitySpec::Uniform,
                },
                seed,
            )
            .unwrap()
            .measured
        })
        .collect();
    let lo = estimates.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo < exact && exact < hi, "[{lo}, {hi}] vs {exact}");
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    assert!((mean - exact).abs() < 3.0 * exact / (20.0 * 20_000.0 * exact).sqrt());
}
