//! Sequence metrics: strict match, k-nearest-direction relaxation and Levenshtein curves.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Record, Split};
use crate::quantize::{DirectionVocabulary, VelocitySequence, NUM_DIRECTIONS};
use crate::scene::{angle_between, Category};
use crate::{Error, Result};

pub const RELAXED_KS: usize = 5;
pub const EDIT_DS: usize = 6;

/// Equal length and identical tokens.
pub fn strict_correct(pred: &VelocitySequence, gt: &VelocitySequence) -> bool {
    pred == gt
}

/// `table[i]` lists every direction index ordered by angular distance from direction `i`
/// (ties within 1e-9 rad broken by index); `table[i][0] == i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborTable {
    pub order: [[usize; NUM_DIRECTIONS]; NUM_DIRECTIONS],
}

pub fn neighbor_table(vocab: &DirectionVocabulary) -> NeighborTable {
    let mut order = [[0usize; NUM_DIRECTIONS]; NUM_DIRECTIONS];
    for (i, row) in order.iter_mut().enumerate() {
        let di = vocab.direction(i);
        let mut idx: Vec<usize> = (0..NUM_DIRECTIONS).collect();
        let ang: Vec<f64> = (0..NUM_DIRECTIONS)
            .map(|j| if j == i { 0.0 } else { angle_between(di, vocab.direction(j)) })
            .collect();
        idx.sort_by(|&a, &b| {
            if (ang[a] - ang[b]).abs() <= 1e-9 {
                a.cmp(&b)
            } else {
                ang[a].total_cmp(&ang[b])
            }
        });
        row.copy_from_slice(&idx);
    }
    NeighborTable { order }
}

impl NeighborTable {
    /// Whether `pred` is among the `k + 1` directions nearest to `gt`.
    pub fn within(&self, gt: usize, pred: usize, k: usize) -> bool {
        self.order[gt][..(k + 1).min(NUM_DIRECTIONS)].contains(&pred)
    }
}

/// Lengths and `stop` placement must match; each direction must lie within the `k + 1`
/// nearest vocabulary directions of the ground truth.
pub fn relaxed_correct(
    pred: &VelocitySequence,
    gt: &VelocitySequence,
    k: usize,
    table: &NeighborTable,
) -> bool {
    pred.len() == gt.len()
        && pred.tokens().iter().zip(gt.tokens()).all(|(p, g)| match (p.is_stop(), g.is_stop()) {
            (true, true) => true,
            (false, false) => table.within(g.index(), p.index(), k),
            _ => false,
        })
}

/// Levenshtein distance with unit costs.
pub fn edit_distance(a: &VelocitySequence, b: &VelocitySequence) -> usize {
    let (a, b) = (a.tokens(), b.tokens());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub n_samples: usize,
    pub strict_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub strict_accuracy: f64,
    /// Index `k` = accuracy under `k`-relaxation, k = 0..=4.
    pub relaxed: Vec<f64>,
    /// Index `d` = fraction within edit distance `d`, d = 0..=5.
    pub edit_curve: Vec<f64>,
    pub per_category: BTreeMap<String, CategoryScore>,
    pub n_distinct_gt_patterns: usize,
    /// `1 / n_distinct_gt_patterns`.
    pub chance_level: f64,
    /// Frequency of the most common ground-truth sequence.
    pub majority_level: f64,
}

pub fn evaluate(
    predictions: &[VelocitySequence],
    groundtruth: &[VelocitySequence],
    categories: &[Category],
    vocab: &DirectionVocabulary,
) -> Result<EvalReport> {
    if predictions.len() != groundtruth.len() {
        return Err(Error::LengthMismatch(predictions.len(), groundtruth.len()));
    }
    if categories.len() != groundtruth.len() {
        return Err(Error::LengthMismatch(categories.len(), groundtruth.len()));
    }
    let n = groundtruth.len();
    let table = neighbor_table(vocab);
    let mut relaxed = vec![0usize; RELAXED_KS];
    let mut edit = vec![0usize; EDIT_DS];
    let mut strict = 0usize;
    let mut per_cat: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for ((p, g), c) in predictions.iter().zip(groundtruth).zip(categories) {
        let ok = strict_correct(p, g);
        strict += usize::from(ok);
        let e = per_cat.entry(c.name().to_string()).or_default();
        e.0 += 1;
        e.1 += usize::from(ok);
        for (k, r) in relaxed.iter_mut().enumerate() {
            *r += usize::from(relaxed_correct(p, g, k, &table));
        }
        let d = edit_distance(p, g);
        for (dd, r) in edit.iter_mut().enumerate() {
            *r += usize::from(d <= dd);
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let distinct: BTreeSet<&VelocitySequence> = groundtruth.iter().collect();
    let majority = crate::train::majority_sequence(groundtruth).map_or(0, |(_, c)| c);
    Ok(EvalReport {
        n_samples: n,
        strict_accuracy: frac(strict),
        relaxed: relaxed.into_iter().map(frac).collect(),
        edit_curve: edit.into_iter().map(frac).collect(),
        per_category: per_cat
            .into_iter()
            .map(|(k, (total, ok))| {
                (
                    k,
                    CategoryScore {
                        n_samples: total,
                        strict_accuracy: ok as f64 / total as f64,
                    },
                )
            })
            .collect(),
        n_distinct_gt_patterns: distinct.len(),
        chance_level: if distinct.is_empty() { 0.0 } else { 1.0 / distinct.len() as f64 },
        majority_level: frac(majority),
    })
}

/// Held-out training subset plus the untouched test set.
#[derive(Clone, Debug)]
pub struct Holdout {
    pub train: Vec<Record>,
    pub removed: Vec<Record>,
    pub test: Vec<Record>,
}

/// Drops training records whose target has `category`; test records are kept as-is.
pub fn holdout_split(dataset: &Dataset, category: &str) -> Result<Holdout> {
    let cat = Category::from_name(category)?;
    let mut train = Vec::new();
    let mut removed = Vec::new();
    let mut test = Vec::new();
    for r in &dataset.records {
        match r.split {
            Split::Train => {
                if r.target_category()? == cat {
                    removed.push(r.clone());
                } else {
                    train.push(r.clone());
                }
            }
            Split::Test => test.push(r.clone()),
            Split::Val => {}
        }
    }
    Ok(Holdout {
        train,
        removed,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{build_vocabulary, Token};

    fn seq(ix: &[usize]) -> VelocitySequence {
        VelocitySequence::new(ix.iter().map(|&i| Token::new(i).unwrap()).collect()).unwrap()
    }

    #[test]
    fn strict_examples() {
        assert!(strict_correct(&seq(&[0, 17]), &seq(&[0, 17])));
        assert!(!strict_correct(&seq(&[0, 17]), &seq(&[0, 1, 17])));
        assert!(!strict_correct(&seq(&[0, 2, 17]), &seq(&[0, 1, 17])));
    }

    #[test]
    fn relaxation_neighbors() {
        let t = neighbor_table(&build_vocabulary());
        assert!(relaxed_correct(&seq(&[1, 17]), &seq(&[0, 17]), 1, &t));
        assert!(!relaxed_correct(&seq(&[1, 17]), &seq(&[0, 17]), 0, &t));
        assert!(relaxed_correct(&seq(&[9, 3, 17]), &seq(&[0, 16, 17]), 16, &t));
        assert!(!relaxed_correct(&seq(&[17]), &seq(&[0, 17]), 16, &t));
    }

    #[test]
    fn edit_examples() {
        assert_eq!(edit_distance(&seq(&[0, 17]), &seq(&[0, 17])), 0);
        assert_eq!(edit_distance(&seq(&[0, 17]), &seq(&[0, 1, 17])), 1);
        assert_eq!(edit_distance(&seq(&[17]), &seq(&[0, 1, 2, 17])), 3);
    }

    #[test]
    fn evaluate_arithmetic() {
        let vocab = build_vocabulary();
        let gt = vec![seq(&[17]), seq(&[0, 17]), seq(&[17]), seq(&[3, 17])];
        let cats = vec![Category::Chair; 4];
        let all_stop = vec![seq(&[17]); 4];
        let r = evaluate(&all_stop, &gt, &cats, &vocab).unwrap();
        assert_eq!(r.strict_accuracy, 0.5);
        assert_eq!(r.n_distinct_gt_patterns, 3);
        assert_eq!(r.majority_level, 0.5);
        let perfect = evaluate(&gt, &gt, &cats, &vocab).unwrap();
        assert!(perfect.relaxed.iter().chain(&perfect.edit_curve).all(|&v| v == 1.0));
        assert!(evaluate(&gt[..2], &gt, &cats, &vocab).is_err());
    }
}
