//! Krippendorff's alpha for interval data.

use std::collections::BTreeMap;

use super::log::InteractionLog;
use crate::error::{Error, Result};

/// Ratings indexed `[rater][item]`; `None` marks a missing rating.
pub type RatingTable = Vec<Vec<Option<f64>>>;

/// Krippendorff's alpha with the interval metric `(a - b)^2`.
///
/// Only items with at least two ratings are pairable. With `n` pairable
/// values and `m_u` values in item `u`,
///
/// ```text
/// D_o = 1/n Σ_u 1/(m_u - 1) Σ_{i≠j in u} (v_i - v_j)^2
/// D_e = 1/(n(n - 1)) Σ_{i≠j over all pairable values} (v_i - v_j)^2
/// α   = 1 - D_o / D_e
/// ```
///
/// Both pair sums use `Σ_{i≠j} (v_i - v_j)^2 = 2 m Σ (v_i - mean)^2`.
/// Returns 1 when `D_e = 0` (every rating identical).
pub fn krippendorff_alpha(ratings: &RatingTable) -> Result<f64> {
    let items = ratings.iter().map(Vec::len).max().unwrap_or(0);
    let mut units: Vec<Vec<f64>> = Vec::new();
    for item in 0..items {
        let values: Vec<f64> = ratings.iter().filter_map(|row| row.get(item).copied().flatten()).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite rating in item {item}")));
        }
        if values.len() >= 2 {
            units.push(values);
        }
    }
    if units.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 items with at least 2 ratings each".into(),
        ));
    }

    let pair_sum = |v: &[f64]| -> f64 {
        let m = v.len() as f64;
        let mean = v.iter().sum::<f64>() / m;
        2.0 * m * v.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
    };

    let n: usize = units.iter().map(Vec::len).sum();
    let n = n as f64;
    let observed: f64 = units
        .iter()
        .map(|u| pair_sum(u) / (u.len() as f64 - 1.0))
        .sum::<f64>()
        / n;
    let all: Vec<f64> = units.iter().flatten().copied().collect();
    let expected = pair_sum(&all) / (n * (n - 1.0));
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - observed / expected)
}

/// Rater × item table from a log: items are distinct `(input, output)`
/// pairs in order of first appearance, and each cell holds the rater's
/// first rating of the item. Records without a rater are skipped.
pub fn rating_table_from_log(log: &InteractionLog) -> RatingTable {
    let mut item_index = BTreeMap::new();
    let mut rater_index = BTreeMap::new();
    let mut cells = Vec::new();
    for r in &log.records {
        let Some(rater) = r.rater.as_deref() else { continue };
        let next = item_index.len();
        let item = *item_index.entry((r.input.id, r.output.clone())).or_insert(next);
        let next = rater_index.len();
        let row = *rater_index.entry(rater.to_string()).or_insert(next);
        cells.push((row, item, r.reward));
    }
    let mut table = vec![vec![None; item_index.len()]; rater_index.len()];
    for (row, item, v) in cells {
        table[row][item].get_or_insert(v);
    }
    table
}
