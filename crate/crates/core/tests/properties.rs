mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use splitguard::attack::ConfusionCounts;
use splitguard::data::SplitSpec;
use splitguard::eval::{angular_distance_histogram, AdvantageRecord};
use splitguard::losses::{dcor_loss, pe_loss_angular, pe_loss_euclidean, DEFAULT_ACOS_CLAMP};
use splitguard::nn::mlp_specs;
use splitguard::theory::{minimize_from, ParticleSystem, Region};
use splitguard::{build_mlp, Activation, Dataset, Partition, Result, Tape, Tensor, Var};

fn loss_value(z: &Tensor, y: &[usize], f: impl for<'t> Fn(Var<'t>, &[usize]) -> Result<Var<'t>>) -> f64 {
    let tape = Tape::new();
    f(tape.leaf(z.clone()), y).unwrap().item()
}

fn angular<'t>(z: Var<'t>, y: &[usize]) -> Result<Var<'t>> {
    pe_loss_angular(z, y, DEFAULT_ACOS_CLAMP)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

/// Batch of `b` rows in `d` dims with labels over `classes` (each present).
fn batch() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (3usize..12, 2usize..6, 2usize..4, any::<u64>()).prop_map(|(b, d, c, seed)| {
        let c = c.min(b - 1);
        (common::normal(b, d, seed), common::labels(b, c, seed ^ 1))
    })
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut splitguard::rng::rng(seed));
    p
}

fn random_rotation(d: usize, seed: u64) -> Tensor {
    let g = common::normal(d, d, seed);
    let q = DMatrix::from_row_slice(d, d, g.data()).qr().q();
    Tensor::matrix(d, d, (0..d * d).map(|i| q[(i / d, i % d)]).collect())
}

proptest! {
    #[test]
    fn layer_norm_rows_sit_on_the_sphere(rows in 1usize..6, d in 2usize..9, seed in any::<u64>()) {
        let x = common::normal(rows, d, seed).map(|v| 3.0 * v + 1.0);
        let tape = Tape::new();
        let z = tape.leaf(x.clone()).layer_norm().unwrap().value();
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            prop_assume!(var > 1e-6);
            let out = z.row(r);
            prop_assert!(out.iter().sum::<f64>().abs() < 1e-9);
            prop_assert!((out.iter().map(|v| v * v).sum::<f64>() - d as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn second_backward_doubles_every_gradient(seed in any::<u64>()) {
        let (specs, split) = mlp_specs(4, &[5, 3], 2, Activation::Tanh, true);
        let model = build_mlp(&specs, split, seed).unwrap();
        let x = common::normal(6, 4, seed ^ 7);
        let y = common::labels(6, 2, seed ^ 9);
        let tape = Tape::new();
        let layers = model.bind(&tape, model.full_range());
        let loss = layers.forward(tape.leaf(x)).unwrap().softmax_cross_entropy(&y).unwrap();
        tape.backward(loss).unwrap();
        let once = layers.gradients();
        tape.backward(loss).unwrap();
        for (a, b) in once.iter().zip(layers.gradients()) {
            let (a, b) = (a.as_ref().unwrap(), b.unwrap());
            for (u, v) in a.data().iter().zip(b.data()) {
                prop_assert_eq!(2.0 * u, *v);
            }
        }
    }

    #[test]
    fn split_forward_is_bitwise_full_forward(
        input in 2usize..8,
        hidden in proptest::collection::vec(2usize..10, 1..4),
        classes in 2usize..5,
        norm in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let (specs, split) = mlp_specs(input, &hidden, classes, Activation::LeakyRelu { slope: 0.01 }, norm);
        let model = build_mlp(&specs, split, seed).unwrap();
        let x = common::normal(7, input, seed ^ 3);
        let split_out = model.forward_top(&model.forward_bottom(&x).unwrap()).unwrap();
        let full = model.forward(&x).unwrap();
        prop_assert_eq!(split_out.data(), full.data());
    }

    #[test]
    fn losses_ignore_row_order((z, y) in batch(), seed in any::<u64>()) {
        let p = permutation(y.len(), seed);
        let zp = z.select_rows(&p);
        let yp: Vec<usize> = p.iter().map(|&i| y[i]).collect();
        prop_assert!(close(loss_value(&z, &y, angular), loss_value(&zp, &yp, angular), 1e-12));
        prop_assert!(close(loss_value(&z, &y, pe_loss_euclidean), loss_value(&zp, &yp, pe_loss_euclidean), 1e-12));
        prop_assert!(close(loss_value(&z, &y, dcor_loss), loss_value(&zp, &yp, dcor_loss), 1e-9));
    }

    #[test]
    fn angular_pe_is_rotation_invariant((z, y) in batch(), seed in any::<u64>()) {
        let q = random_rotation(z.cols(), seed);
        let rotated = z.matmul(&q).unwrap();
        prop_assert!(close(loss_value(&z, &y, angular), loss_value(&rotated, &y, angular), 1e-8));
    }

    #[test]
    fn dcor_is_bounded_and_affine_invariant(
        (z, y) in batch(),
        shift in -5.0f64..5.0,
        scale in 0.01f64..100.0,
    ) {
        let v = loss_value(&z, &y, dcor_loss);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{}", v);
        let moved = z.map(|x| scale * x + shift);
        prop_assert!(close(v, loss_value(&moved, &y, dcor_loss), 1e-9));
    }

    #[test]
    fn separating_a_same_class_pair_lowers_euclidean_pe(
        b in 3usize..10,
        d in 2usize..5,
        push in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        // Rows 0 and 1 form class 0; the rest are spread over other classes,
        // so moving row 1 only changes the one same-class pair it belongs to.
        let z = common::normal(b, d, seed);
        let y: Vec<usize> = (0..b).map(|i| if i < 2 { 0 } else { 1 + i % 2 }).collect();
        let before = loss_value(&z, &y, pe_loss_euclidean);
        let mut moved = z.clone();
        let dir: Vec<f64> = (0..d).map(|j| z.get2(1, j) - z.get2(0, j)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 1e-6);
        for j in 0..d {
            moved.data_mut()[d + j] += push * dir[j] / norm;
        }
        prop_assert!(loss_value(&moved, &y, pe_loss_euclidean) < before);
    }

    #[test]
    fn advantage_is_antisymmetric(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assert_eq!(
            AdvantageRecord::from_errors(a, b).advantage,
            -AdvantageRecord::from_errors(b, a).advantage
        );
    }

    #[test]
    fn histogram_counts_every_unordered_pair((z, y) in batch(), bins in 1usize..40) {
        let h = angular_distance_histogram(&z, &y, bins).unwrap();
        let b = y.len() as u64;
        prop_assert_eq!(h.total_pairs(), b * (b - 1) / 2);
    }

    #[test]
    fn partitions_cover_and_resplit_is_idempotent(n in 10usize..120, seed in any::<u64>()) {
        let x = common::normal(n, 2, seed);
        let y = common::labels(n, 2, seed);
        let ds = Dataset::new(x, y, 2).unwrap().with_split(SplitSpec::default(), seed).unwrap();
        let sizes: Vec<usize> = [Partition::Train, Partition::Validation, Partition::Test]
            .iter()
            .map(|&p| ds.indices(p).len())
            .collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        let mut all: Vec<usize> = [Partition::Train, Partition::Validation, Partition::Test]
            .iter()
            .flat_map(|&p| ds.indices(p).to_vec())
            .collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let again = ds.clone().with_split(SplitSpec::default(), seed).unwrap();
        prop_assert_eq!(again.indices(Partition::Train), ds.indices(Partition::Train));
        prop_assert_eq!(again.indices(Partition::Test), ds.indices(Partition::Test));
    }
}

fn confusion(c: usize, cells: &[u64]) -> ConfusionCounts {
    ConfusionCounts {
        counts: (0..c).map(|i| cells[i * c..(i + 1) * c].to_vec()).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hungarian_equals_brute_force(
        (c, cells) in (1usize..=6).prop_flat_map(|c| (Just(c), proptest::collection::vec(0u64..50, c * c)))
    ) {
        let m = confusion(c, &cells);
        prop_assert_eq!(m.permutation_accuracy().unwrap(), m.permutation_accuracy_brute_force().unwrap());
    }

    #[test]
    fn relabeling_clusters_leaves_accuracy_unchanged(
        (c, cells) in (1usize..=6).prop_flat_map(|c| (Just(c), proptest::collection::vec(0u64..50, c * c))),
        seed in any::<u64>(),
    ) {
        let m = confusion(c, &cells);
        let p = permutation(c, seed);
        let relabeled = ConfusionCounts {
            counts: m.counts.iter().map(|row| p.iter().map(|&j| row[j]).collect()).collect(),
        };
        prop_assert_eq!(m.permutation_accuracy().unwrap(), relabeled.permutation_accuracy().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_minimization_is_rotation_equivariant(n in 4usize..20, seed in any::<u64>()) {
        let mut sys = ParticleSystem::new(n, 3, Region::Ball { radius: 1.0 });
        sys.iterations = 150;
        let start = sys.random_configuration(seed);
        let q = random_rotation(3, seed ^ 5);
        let direct = minimize_from(&sys, start.clone()).unwrap().points;
        let rotated = minimize_from(&sys, start.matmul(&q).unwrap()).unwrap().points;
        let back = rotated.matmul(&q.transpose()).unwrap();
        let worst = direct
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prop_assert!(worst < 1e-6, "{}", worst);
    }
}
