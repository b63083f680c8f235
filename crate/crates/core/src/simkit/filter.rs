//! Log preprocessing: drop unreliable raters or contested outputs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::feedback::likert_quantize;
use super::log::InteractionLog;
use crate::policy::Sequence;

/// Re-rating agreement of one rater.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaterAgreement {
    pub rater: String,
    /// Ratings of items this rater had already rated.
    pub repeats: usize,
    /// Repeats that matched the rater's first rating of the item.
    pub agreements: usize,
    pub kept: bool,
}

impl RaterAgreement {
    /// `None` when the rater never re-rated anything.
    pub fn agreement(&self) -> Option<f64> {
        (self.repeats > 0).then(|| self.agreements as f64 / self.repeats as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RaterReport {
    pub raters: Vec<RaterAgreement>,
    /// Raters kept only because they had no repeated items.
    pub flagged: Vec<String>,
}

/// Empirical re-rating agreement per rater: each repeat rating of an
/// `(input, output)` item is compared with the rater's first rating of it,
/// after Likert quantization.
pub fn rater_agreements(log: &InteractionLog) -> Vec<RaterAgreement> {
    let mut first: BTreeMap<(&str, u32, &Sequence), f64> = BTreeMap::new();
    let mut stats: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &log.records {
        let Some(rater) = r.rater.as_deref() else { continue };
        let level = likert_quantize(r.reward.clamp(0.0, 1.0)).expect("clamped");
        let entry = stats.entry(rater).or_insert((0, 0));
        match first.get(&(rater, r.input.id, &r.output)) {
            None => {
                first.insert((rater, r.input.id, &r.output), level);
            }
            Some(&f) => {
                entry.0 += 1;
                if f == level {
                    entry.1 += 1;
                }
            }
        }
    }
    stats
        .into_iter()
        .map(|(rater, (repeats, agreements))| RaterAgreement {
            rater: rater.to_string(),
            repeats,
            agreements,
            kept: true,
        })
        .collect()
}

/// Removes every record of raters whose re-rating agreement is below
/// `min_agreement`. Raters without repeats are kept and flagged; records
/// without a rater are kept. Surviving records keep their order.
pub fn filter_raters(log: &InteractionLog, min_agreement: f64) -> (InteractionLog, RaterReport) {
    let mut report = RaterReport::default();
    let mut dropped = BTreeSet::new();
    for mut a in rater_agreements(log) {
        match a.agreement() {
            None => report.flagged.push(a.rater.clone()),
            Some(v) if v < min_agreement => {
                a.kept = false;
                dropped.insert(a.rater.clone());
            }
            Some(_) => {}
        }
        report.raters.push(a);
    }
    let records = log
        .records
        .iter()
        .filter(|r| r.rater.as_ref().is_none_or(|id| !dropped.contains(id)))
        .cloned()
        .collect();
    (InteractionLog { records, mode: log.mode, seed: log.seed }, report)
}

/// Removes all records of `(input, output)` groups whose reward population
/// standard deviation exceeds `max_stddev`. Singleton groups are kept.
pub fn filter_high_variance_outputs(log: &InteractionLog, max_stddev: f64) -> InteractionLog {
    let mut groups: BTreeMap<(u32, &Sequence), Vec<f64>> = BTreeMap::new();
    for r in &log.records {
        groups.entry((r.input.id, &r.output)).or_default().push(r.reward);
    }
    let contested: BTreeSet<(u32, &Sequence)> = groups
        .iter()
        .filter(|(_, v)| v.len() > 1 && population_stddev(v) > max_stddev)
        .map(|(k, _)| *k)
        .collect();
    let records = log
        .records
        .iter()
        .filter(|r| !contested.contains(&(r.input.id, &r.output)))
        .cloned()
        .collect();
    InteractionLog { records, mode: log.mode, seed: log.seed }
}

fn population_stddev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::InputContext;
    use crate::simkit::log::LoggedInteraction;

    fn rec(y: &[u32], delta: f64, rater: Option<&str>) -> LoggedInteraction {
        let mut r = LoggedInteraction::new(InputContext::new(0), Sequence(y.to_vec()), delta, 1.0);
        r.rater = rater.map(String::from);
        r
    }

    #[test]
    fn variance_filter_examples() {
        let log = InteractionLog::from_records(vec![
            rec(&[0, 0], 0.5, None),
            rec(&[1, 1], 0.0, None),
            rec(&[0, 0], 0.5, None),
            rec(&[1, 1], 1.0, None),
            rec(&[2, 2], 0.9, None),
            rec(&[0, 0], 0.5, None),
        ]);
        let out = filter_high_variance_outputs(&log, 0.4);
        let outputs: Vec<_> = out.records.iter().map(|r| r.output.0.clone()).collect();
        assert_eq!(outputs, vec![vec![0, 0], vec![0, 0], vec![2, 2], vec![0, 0]]);
        assert_eq!(filter_high_variance_outputs(&log, 0.0).len(), 4);
        assert_eq!(filter_high_variance_outputs(&log, 0.5).len(), 6);
    }

    #[test]
    fn rater_filter_keeps_unrepeated_and_flags() {
        let log = InteractionLog::from_records(vec![
            rec(&[0, 0], 0.5, Some("steady")),
            rec(&[0, 0], 0.5, Some("steady")),
            rec(&[0, 0], 0.0, Some("erratic")),
            rec(&[0, 0], 1.0, Some("erratic")),
            rec(&[1, 0], 1.0, Some("once")),
            rec(&[1, 0], 1.0, None),
        ]);
        let (out, report) = filter_raters(&log, 0.8);
        assert_eq!(out.len(), 4);
        assert!(out.records.iter().all(|r| r.rater.as_deref() != Some("erratic")));
        assert_eq!(report.flagged, vec!["once".to_string()]);
        let erratic = report.raters.iter().find(|a| a.rater == "erratic").unwrap();
        assert_eq!(erratic.agreement(), Some(0.0));
        assert!(!erratic.kept);
        let (all, _) = filter_raters(&log, 0.0);
        assert_eq!(all, log);
    }

    #[test]
    fn agreement_compares_quantized_levels() {
        let log = InteractionLog::from_records(vec![
            rec(&[0, 0], 0.51, Some("a")),
            rec(&[0, 0], 0.49, Some("a")),
            rec(&[0, 0], 0.70, Some("a")),
        ]);
        let a = &rater_agreements(&log)[0];
        assert_eq!((a.repeats, a.agreements), (2, 1));
    }
}
