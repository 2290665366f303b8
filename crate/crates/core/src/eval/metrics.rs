use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Scores paired with binary labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim("scored set", &[scores.len()], &[labels.len()]));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Validation(format!("label {l} is not binary")));
        }
        if let Some(s) = scores.iter().find(|s| s.is_nan()) {
            return Err(Error::Validation(format!("score {s} is not a number")));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    pub fn extend(&mut self, other: &ScoredSet) {
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
    }

    /// Indices by descending score; equal scores keep ascending index order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| descending(self.scores[a], self.scores[b]));
        order
    }

    fn require_both_classes(&self, metric: &str) -> Result<(usize, usize)> {
        let (p, n) = (self.positives(), self.negatives());
        if p == 0 || n == 0 {
            return Err(Error::MetricUndefined(format!(
                "{metric} needs both classes, got {p} positives and {n} negatives"
            )));
        }
        Ok((p, n))
    }
}

fn descending(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Area under the ROC curve as a rank statistic, ties counting one half.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (p, n) = set.require_both_classes("AUROC")?;
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).unwrap_or(Ordering::Equal));
    // twice the rank sum keeps average ranks integral
    let mut twice_rank_sum: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && set.scores[order[end]] == set.scores[order[start]] {
            end += 1;
        }
        let twice_avg = (start + 1 + end) as u128;
        let pos = order[start..end].iter().filter(|&&i| set.labels[i] == 1).count() as u128;
        twice_rank_sum += twice_avg * pos;
        start = end;
    }
    let (p128, n128) = (p as u128, n as u128);
    let twice_u = twice_rank_sum - p128 * (p128 + 1);
    Ok(twice_u as f64 / (2 * p128 * n128) as f64)
}

/// Average precision over the positives in descending-score order, with
/// ties broken by ascending index.
pub fn auprc(set: &ScoredSet) -> Result<f64> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::MetricUndefined("AUPRC needs at least one positive".into()));
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, i) in set.ranking().into_iter().enumerate() {
        if set.labels[i] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / p as f64)
}

/// Fraction of concordant positive/negative pairs by direct enumeration.
pub fn auroc_pairwise(set: &ScoredSet) -> Result<f64> {
    let (p, n) = set.require_both_classes("AUROC")?;
    let mut twice = 0u64;
    for (i, &li) in set.labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in set.labels.iter().enumerate() {
            if lj == 0 {
                twice += match set.scores[i].partial_cmp(&set.scores[j]) {
                    Some(Ordering::Greater) => 2,
                    Some(Ordering::Equal) => 1,
                    _ => 0,
                };
            }
        }
    }
    Ok(twice as f64 / (2 * p * n) as f64)
}

/// Average precision from each positive's rank, counted directly.
pub fn auprc_enumerated(set: &ScoredSet) -> Result<f64> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::MetricUndefined("AUPRC needs at least one positive".into()));
    }
    let ahead = |i: usize, j: usize| set.scores[j] > set.scores[i] || (set.scores[j] == set.scores[i] && j < i);
    let mut total = 0.0;
    for i in (0..set.len()).filter(|&i| set.labels[i] == 1) {
        let rank = 1 + (0..set.len()).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..set.len()).filter(|&j| set.labels[j] == 1 && ahead(i, j)).count();
        total += hits as f64 / rank as f64;
    }
    Ok(total / p as f64)
}

/// ROC points `(false positive rate, true positive rate)` at every distinct
/// score threshold, starting from the origin.
pub fn roc_points(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (p, n) = set.require_both_classes("ROC curve")?;
    let order = set.ranking();
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if set.labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| set.scores[j] != set.scores[i]);
        if last_of_group {
            points.push((fp as f64 / n as f64, tp as f64 / p as f64));
        }
    }
    Ok(points)
}

/// Precision-recall points `(recall, precision)` at each rank of the
/// ranking used by [`auprc`].
pub fn pr_points(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::MetricUndefined("PR curve needs at least one positive".into()));
    }
    let mut hits = 0usize;
    Ok(set
        .ranking()
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            hits += usize::from(set.labels[i] == 1);
            (hits as f64 / p as f64, hits as f64 / (rank + 1) as f64)
        })
        .collect())
}
