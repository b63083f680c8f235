//! Feature identifiers and sparse gradients shared by the policy and the
//! reward estimator.

use std::collections::BTreeMap;

/// Identifier of one learnable weight.
pub type FeatureId = u64;

const SEED: u64 = 0x51_7c_c1_b7_27_22_0a_95;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit key for a structured feature `(tag, parts...)`.
///
/// Stable across platforms and toolchain versions, so checkpoint keys stay
/// valid between builds.
pub fn feature_key(tag: u64, parts: &[u64]) -> FeatureId {
    let mut h = splitmix64(SEED ^ tag);
    for &p in parts {
        h = splitmix64(h ^ p.wrapping_mul(0x2545_f491_4f6c_dd1d));
    }
    h
}

/// Sparse vector over feature ids, ordered so that every reduction over it
/// is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient(BTreeMap<FeatureId, f64>);

impl Gradient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` to the entry for `id`, creating it if absent.
    pub fn add(&mut self, id: FeatureId, value: f64) {
        *self.0.entry(id).or_insert(0.0) += value;
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (&id, &v) in &other.0 {
            self.add(id, scale * v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.0.values_mut() {
            *v *= factor;
        }
    }

    pub fn get(&self, id: FeatureId) -> f64 {
        self.0.get(&id).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureId, f64)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = FeatureId> + '_ {
        self.0.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.values().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn as_map(&self) -> &BTreeMap<FeatureId, f64> {
        &self.0
    }
}

impl FromIterator<(FeatureId, f64)> for Gradient {
    fn from_iter<I: IntoIterator<Item = (FeatureId, f64)>>(iter: I) -> Self {
        let mut g = Gradient::new();
        for (k, v) in iter {
            g.add(k, v);
        }
        g
    }
}
