mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_policy, rng};
use seqcf::policy::{enumerate_sequences, output_space_len};
use seqcf::simkit::{RewardKind, WeightedInput};
use seqcf::{FeatureMap, InputContext, Sequence, SequencePolicy, TaskSpec, Vocabulary};

fn task(vocab: usize, max_len: usize, inputs: u32) -> TaskSpec {
    TaskSpec {
        vocab_size: Vocabulary::new(vocab).unwrap(),
        max_len,
        inputs: (0..inputs)
            .map(|i| WeightedInput { input: InputContext::new(i), weight: 1.0 / inputs as f64 })
            .collect(),
        references: Default::default(),
        reward: RewardKind::PositionMatch,
    }
}

fn weighted(task: &TaskSpec, fm: FeatureMap, weights: &[f64]) -> SequencePolicy {
    let mut p = SequencePolicy::with_feature_map(task.vocab(), task.max_len, fm).unwrap();
    for (f, w) in p.active_features(&task.input_contexts()).into_iter().zip(weights.iter().cycle()) {
        p.set_weight(f, *w);
    }
    p
}

fn feature_maps() -> impl Strategy<Value = FeatureMap> {
    prop_oneof![Just(FeatureMap::Tabular), (1u64..64).prop_map(|buckets| FeatureMap::HashedNgram { buckets })]
}

proptest! {
    #[test]
    fn sequence_probabilities_sum_to_one(
        vocab in 2usize..5,
        max_len in 1usize..4,
        fm in feature_maps(),
        weights in prop::collection::vec(-8.0f64..8.0, 1..40),
    ) {
        let t = task(vocab, max_len, 2);
        let p = weighted(&t, fm, &weights);
        for x in t.input_contexts() {
            let total: f64 = enumerate_sequences(t.vocab(), max_len)
                .map(|y| p.sequence_probability(&x, &y).unwrap())
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-10, "Σπ = {total}");
        }
    }

    #[test]
    fn extreme_weights_stay_finite(big in 300.0f64..700.0, vocab in 2usize..4) {
        let t = task(vocab, 2, 1);
        let p = weighted(&t, FeatureMap::Tabular, &[big, -big, 0.0]);
        let x = InputContext::new(0);
        let mut total = 0.0;
        for y in enumerate_sequences(t.vocab(), 2) {
            let lp = p.sequence_log_probability(&x, &y).unwrap();
            prop_assert!(lp <= 0.0 && !lp.is_nan());
            total += lp.exp();
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_prob_gradient_matches_central_differences(
        seed in 0u64..1000,
        fm in feature_maps(),
    ) {
        let t = task(3, 3, 2);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let base = random_policy(&t, 1.0, &mut r);
        let mut p = SequencePolicy::with_feature_map(t.vocab(), 3, fm).unwrap();
        for (f, w) in base.weights() {
            p.set_weight(*f, *w);
        }
        let x = InputContext::new((seed % 2) as u32);
        let y = common::random_sequence(3, 3, &mut r);
        let g = p.log_prob_gradient(&x, &y).unwrap();
        let h = 1e-5;
        for (f, a) in g.iter() {
            let w = p.weight(f);
            let mut q = p.clone();
            q.set_weight(f, w + h);
            let plus = q.sequence_log_probability(&x, &y).unwrap();
            q.set_weight(f, w - h);
            let minus = q.sequence_log_probability(&x, &y).unwrap();
            let numeric = (plus - minus) / (2.0 * h);
            prop_assert!(common::rel_err(a, numeric) < 1e-6, "feature {f}: {a} vs {numeric}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        weights in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..30),
    ) {
        let t = task(3, 2, 1);
        let p = weighted(&t, FeatureMap::Tabular, &weights);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        p.save(&path).unwrap();
        let q = SequencePolicy::load(&path).unwrap();
        for (f, w) in p.weights() {
            prop_assert_eq!(w.to_bits(), q.weight(*f).to_bits());
        }
        prop_assert_eq!(p, q);
    }
}

#[test]
fn sampling_frequencies_match_probabilities() {
    let t = TaskSpec::desk();
    let p = random_policy(&t, 1.0, &mut rng(21));
    let x = InputContext::new(0);
    let mut r = rng(22);
    let draws = 90_000;
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..draws {
        let (y, mu) = p.sample_sequence(&x, &mut r);
        assert_eq!(mu, p.sequence_probability(&x, &y).unwrap());
        *counts.entry(y).or_insert(0usize) += 1;
    }
    for y in enumerate_sequences(t.vocab(), 2) {
        let pi = p.sequence_probability(&x, &y).unwrap();
        let freq = *counts.get(&y).unwrap_or(&0) as f64 / draws as f64;
        let se = (pi * (1.0 - pi) / draws as f64).sqrt();
        assert!((freq - pi).abs() < 4.0 * se, "{y}: freq {freq} vs π {pi}");
    }
}

#[test]
fn seeded_sampling_is_reproducible() {
    let t = TaskSpec::desk();
    let p = random_policy(&t, 1.0, &mut rng(3));
    let x = InputContext::new(0);
    let a: Vec<_> = (0..20).map(|s| p.sample_sequence_seeded(&x, s)).collect();
    let b: Vec<_> = (0..20).map(|s| p.sample_sequence_seeded(&x, s)).collect();
    assert_eq!(a, b);
}

#[test]
fn greedy_decode_finds_a_boosted_mode() {
    let t = TaskSpec::desk();
    let x = InputContext::new(0);
    let mut p = SequencePolicy::uniform(t.vocab(), 2).unwrap();
    let target = Sequence(vec![2, 0]);
    let g = p.log_prob_gradient(&x, &target).unwrap();
    let mut step = g;
    step.scale(3.0);
    p.apply_step(&step);
    let mode = enumerate_sequences(t.vocab(), 2)
        .max_by(|a, b| {
            p.sequence_probability(&x, a).unwrap().total_cmp(&p.sequence_probability(&x, b).unwrap())
        })
        .unwrap();
    assert_eq!(p.greedy_decode(&x), mode);
    assert_eq!(mode, target);
}

#[test]
fn output_space_size_in_log10() {
    assert_eq!(output_space_len(Vocabulary::new(3).unwrap(), 2), 9.0);
    let log10 = seqcf::simkit::output_space_size(30_000, 100).unwrap();
    assert!((log10 - 447.712125471966).abs() < 1e-9, "{log10}");
}
