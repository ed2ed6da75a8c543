//! Macro, micro and pairwise precision/recall/F1 of a predicted clustering
//! against gold entity labels.
//!
//! With `C` the predicted clusters and `E` the gold entities, both restricted
//! to labeled phrases:
//!
//! * macro P: fraction of clusters in `C` whose members share one entity;
//!   macro R swaps the roles of `C` and `E`.
//! * micro P: `sum_c max_e |c ∩ e| / N`; micro R likewise over `E`.
//! * pair P: same-entity pairs inside predicted clusters over all
//!   within-cluster pairs; pair R divides the same hits by all
//!   same-entity pairs.
//!
//! Any `0/0` ratio is 0.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{GoldLabels, PhraseId};
use crate::error::{Error, Result};
use crate::hac::ClusterAssignment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub micro_p: f64,
    pub micro_r: f64,
    pub micro_f1: f64,
    pub pair_p: f64,
    pub pair_r: f64,
    pub pair_f1: f64,
    pub average_f1: f64,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn pairs(n: usize) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

impl Metrics {
    fn from_prf(macro_p: f64, macro_r: f64, micro_p: f64, micro_r: f64, pair_p: f64, pair_r: f64) -> Self {
        let (macro_f1, micro_f1, pair_f1) = (f1(macro_p, macro_r), f1(micro_p, micro_r), f1(pair_p, pair_r));
        Metrics {
            macro_p,
            macro_r,
            macro_f1,
            micro_p,
            micro_r,
            micro_f1,
            pair_p,
            pair_r,
            pair_f1,
            average_f1: (macro_f1 + micro_f1 + pair_f1) / 3.0,
        }
    }
}

/// Scores `(predicted cluster, gold entity)` items, one per labeled phrase.
pub fn evaluate_items<E: Ord + Clone>(items: &[(usize, E)]) -> Result<Metrics> {
    if items.is_empty() {
        return Err(Error::Metrics("no labeled phrases to evaluate".into()));
    }
    // contingency table cluster -> entity -> count
    let mut table: BTreeMap<usize, BTreeMap<E, usize>> = BTreeMap::new();
    let mut by_entity: BTreeMap<E, BTreeMap<usize, usize>> = BTreeMap::new();
    for (c, e) in items {
        *table.entry(*c).or_default().entry(e.clone()).or_default() += 1;
        *by_entity.entry(e.clone()).or_default().entry(*c).or_default() += 1;
    }
    let n = items.len() as f64;

    let pure_clusters = table.values().filter(|row| row.len() == 1).count() as f64;
    let whole_entities = by_entity.values().filter(|col| col.len() == 1).count() as f64;
    let macro_p = pure_clusters / table.len() as f64;
    let macro_r = whole_entities / by_entity.len() as f64;

    let micro_p = table.values().map(|row| *row.values().max().unwrap() as f64).sum::<f64>() / n;
    let micro_r = by_entity.values().map(|col| *col.values().max().unwrap() as f64).sum::<f64>() / n;

    let hits: f64 = table.values().flat_map(|row| row.values()).map(|&k| pairs(k)).sum();
    let pred_pairs: f64 = table.values().map(|row| pairs(row.values().sum())).sum();
    let gold_pairs: f64 = by_entity.values().map(|col| pairs(col.values().sum())).sum();

    Ok(Metrics::from_prf(
        macro_p,
        macro_r,
        micro_p,
        micro_r,
        ratio(hits, pred_pairs),
        ratio(hits, gold_pairs),
    ))
}

/// Scores a phrase clustering; unlabeled phrases are ignored.
pub fn evaluate(pred: &ClusterAssignment, gold: &GoldLabels) -> Result<Metrics> {
    let items: Vec<(usize, &str)> = gold
        .iter()
        .filter(|(p, _)| p.0 < pred.len())
        .map(|(p, e)| (pred.label(p.0), e))
        .collect();
    evaluate_items(&items)
}

/// Scores clusters given as lists of surface strings against a
/// `surface -> entity` map. Unknown phrases are an error unless
/// `skip_unknown` is set.
pub fn evaluate_named(
    clusters: &[Vec<String>],
    gold: &HashMap<String, String>,
    skip_unknown: bool,
) -> Result<Metrics> {
    let mut items = Vec::new();
    for (c, members) in clusters.iter().enumerate() {
        for m in members {
            match gold.get(m) {
                Some(e) => items.push((c, e.clone())),
                None if skip_unknown => {}
                None => return Err(Error::Metrics(format!("phrase `{m}` has no gold label"))),
            }
        }
    }
    evaluate_items(&items)
}

/// Gold labels as a dense per-phrase vector (`None` when unlabeled).
pub fn gold_vector(gold: &GoldLabels, n: usize) -> Vec<Option<String>> {
    let mut out = vec![None; n];
    for (PhraseId(p), e) in gold.iter() {
        if p < n {
            out[p] = Some(e.to_owned());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let m = evaluate_items(&[(0, "x"), (0, "x"), (1, "y"), (2, "z")]).unwrap();
        for v in [
            m.macro_p, m.macro_r, m.macro_f1, m.micro_p, m.micro_r, m.micro_f1, m.pair_p, m.pair_r, m.pair_f1,
            m.average_f1,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn worked_three_phrase_case() {
        let m = evaluate_items(&[(0, "ab"), (0, "ab"), (0, "c")]).unwrap();
        assert_eq!((m.macro_p, m.macro_r, m.macro_f1), (0.0, 1.0, 0.0));
        assert_eq!((m.micro_p, m.micro_r), (2.0 / 3.0, 1.0));
        assert!((m.micro_f1 - 0.8).abs() < 1e-15);
        assert_eq!((m.pair_p, m.pair_r, m.pair_f1), (1.0 / 3.0, 1.0, 0.5));
        assert!((m.average_f1 - 1.3 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_prediction_has_zero_pair_precision() {
        let m = evaluate_items(&[(0, "a"), (1, "a"), (2, "b")]).unwrap();
        assert_eq!(m.pair_p, 0.0);
        assert_eq!(m.pair_r, 0.0);
        assert_eq!(m.pair_f1, 0.0);
        assert_eq!(m.macro_p, 1.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(evaluate_items::<&str>(&[]).is_err());
    }

    #[test]
    fn named_unknown_phrase() {
        let gold: HashMap<String, String> = [("a".to_string(), "E".to_string())].into_iter().collect();
        let clusters = vec![vec!["a".to_string(), "b".to_string()]];
        let err = evaluate_named(&clusters, &gold, false).unwrap_err();
        assert!(err.to_string().contains("`b`"));
        assert!(evaluate_named(&clusters, &gold, true).is_ok());
    }
}
