#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use seqcf::policy::InputContext;
use seqcf::simkit::{RewardKind, WeightedInput};
use seqcf::{LoggedInteraction, Sequence, SequencePolicy, TaskSpec, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform policy on `task` with N(0, scale²) weights on every active feature.
pub fn random_policy(task: &TaskSpec, scale: f64, rng: &mut ChaCha8Rng) -> SequencePolicy {
    let mut p = SequencePolicy::uniform(task.vocab(), task.max_len).unwrap();
    for f in p.active_features(&task.input_contexts()) {
        let z: f64 = rng.sample(StandardNormal);
        p.set_weight(f, scale * z);
    }
    p
}

/// Position-match task with `inputs` equally weighted inputs and random references.
pub fn multi_input_task(vocab: usize, max_len: usize, inputs: u32, rng: &mut ChaCha8Rng) -> TaskSpec {
    let references = (0..inputs)
        .map(|i| (i, Sequence((0..max_len).map(|_| rng.random_range(0..vocab as u32)).collect())))
        .collect();
    let task = TaskSpec {
        vocab_size: Vocabulary::new(vocab).unwrap(),
        max_len,
        inputs: (0..inputs)
            .map(|i| WeightedInput { input: InputContext::new(i), weight: 1.0 / inputs as f64 })
            .collect(),
        references,
        reward: RewardKind::PositionMatch,
    };
    task.validate().unwrap();
    task
}

pub fn random_sequence(vocab: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Sequence {
    Sequence((0..max_len).map(|_| rng.random_range(0..vocab as u32)).collect())
}

/// Random log on `task`: outputs drawn from `logger` with their propensities,
/// rewards uniform on [0, 1].
pub fn random_log(task: &TaskSpec, logger: &SequencePolicy, n: usize, rng: &mut ChaCha8Rng) -> Vec<LoggedInteraction> {
    (0..n)
        .map(|_| {
            let x = task.sample_input(rng).clone();
            let (y, mu) = logger.sample_sequence(&x, rng);
            let delta: f64 = rng.random();
            LoggedInteraction::new(x, y, delta, mu)
        })
        .collect()
}

/// Relative difference with the same floor as the library's gradient check.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(seqcf::trainer::GRAD_CHECK_FLOOR)
}

/// Krippendorff's alpha (interval) by direct pairwise summation over a
/// rater × item table.
pub fn alpha_direct(table: &[Vec<Option<f64>>]) -> Option<f64> {
    let items = table.iter().map(Vec::len).max().unwrap_or(0);
    let units: Vec<Vec<f64>> = (0..items)
        .map(|i| table.iter().filter_map(|row| row.get(i).copied().flatten()).collect::<Vec<_>>())
        .filter(|u| u.len() >= 2)
        .collect();
    if units.len() < 2 {
        return None;
    }
    let n: usize = units.iter().map(Vec::len).sum();
    let mut d_o = 0.0;
    for u in &units {
        let mut s = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j {
                    s += (u[i] - u[j]).powi(2);
                }
            }
        }
        d_o += s / (u.len() - 1) as f64;
    }
    d_o /= n as f64;
    let all: Vec<f64> = units.concat();
    let mut d_e = 0.0;
    for i in 0..all.len() {
        for j in 0..all.len() {
            if i != j {
                d_e += (all[i] - all[j]).powi(2);
            }
        }
    }
    d_e /= (n * (n - 1)) as f64;
    if d_e == 0.0 {
        return Some(1.0);
    }
    Some(1.0 - d_o / d_e)
}
