//! Category-restricted client similarity, the elbow split into similar and
//! dissimilar groups, and model averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, norm, ItemEmbeddingMatrix};
use crate::par::{self, Parallelism};

/// Similarity of every participant to the round's core client on one item category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub core: usize,
    pub category: usize,
    /// `(client id, s_u)`, one entry per participant including the core.
    pub scores: Vec<(usize, f64)>,
}

/// Sum over `items` of the row-wise cosine between two models. Zero-norm rows contribute 0.
pub fn category_cosine(a: &ItemEmbeddingMatrix, b: &ItemEmbeddingMatrix, items: &[usize]) -> f64 {
    items
        .iter()
        .map(|&i| {
            let (x, y) = (a.row(i), b.row(i));
            let denom = norm(x) * norm(y);
            if denom == 0.0 {
                0.0
            } else {
                dot(x, y) / denom
            }
        })
        .sum()
}

pub fn similarity_scores(
    core: &ItemEmbeddingMatrix,
    participants: &[(usize, &ItemEmbeddingMatrix)],
    category_items: &[usize],
    mode: Parallelism,
) -> Result<Vec<(usize, f64)>> {
    if category_items.is_empty() {
        return Err(Error::InvalidArgument("empty item category".into()));
    }
    if let Some((id, _)) = participants.iter().find(|(_, m)| m.shape() != core.shape()) {
        return Err(Error::Shape(format!(
            "client {id} model shape differs from core"
        )));
    }
    if let Some(&bad) = category_items.iter().find(|&&i| i >= core.rows()) {
        return Err(Error::InvalidArgument(format!("item {bad} out of range")));
    }
    Ok(par::map(mode, participants, |&(id, m)| {
        (id, category_cosine(core, m, category_items))
    }))
}

/// Outcome of the elbow split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSplit {
    /// Ascending client ids of the similar group.
    pub similar: Vec<usize>,
    /// Ascending client ids of the dissimilar group.
    pub dissimilar: Vec<usize>,
    /// Rank (0-based, in `sorted_scores`) of the elbow point.
    pub elbow_rank: usize,
    /// `(client id, score)` sorted by descending score, ties by ascending id.
    pub sorted_scores: Vec<(usize, f64)>,
    /// Set when the input was too small or flat for a meaningful elbow.
    pub degenerate: bool,
}

/// Sorts by score descending, ties broken by lower client id first.
pub fn sort_scores(scores: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted
}

/// Rank of the point farthest from the chord joining the first and last
/// points of the min-max normalized `(rank, score)` curve. Ties go to the
/// smallest rank. `sorted` must be descending and span a nonzero range.
pub fn elbow_rank(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let (hi, lo) = (sorted[0], sorted[n - 1]);
    let span = hi - lo;
    let last = (n - 1) as f64;
    // Chord from (0, 1) to (1, 0): distance ∝ |x + y − 1|. Scaled by
    // last·span so integer-valued scores compare exactly and ties stay ties.
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &s) in sorted.iter().enumerate() {
        let d = (j as f64 * span + (s - lo) * last - last * span).abs();
        if d > best.1 {
            best = (j, d);
        }
    }
    best.0
}

/// Splits participants at the elbow of their sorted similarity scores.
/// Clients ranked at or before the elbow form the similar group; the core
/// client is always placed there.
pub fn elbow_split(scores: &SimilarityScores) -> GroupSplit {
    let sorted = sort_scores(&scores.scores);
    let n = sorted.len();
    if n == 0 {
        return GroupSplit {
            similar: Vec::new(),
            dissimilar: Vec::new(),
            elbow_rank: 0,
            sorted_scores: sorted,
            degenerate: true,
        };
    }
    let values: Vec<f64> = sorted.iter().map(|s| s.1).collect();
    let (elbow, degenerate) = if n < 2 {
        (0, true)
    } else if values[0] == values[n - 1] {
        (n - 1, true)
    } else if n == 2 {
        (0, true)
    } else {
        (elbow_rank(&values), false)
    };
    let mut similar: Vec<usize> = sorted[..=elbow].iter().map(|s| s.0).collect();
    if !similar.contains(&scores.core) && sorted.iter().any(|s| s.0 == scores.core) {
        similar.push(scores.core);
    }
    similar.sort_unstable();
    let mut dissimilar: Vec<usize> = sorted
        .iter()
        .map(|s| s.0)
        .filter(|id| similar.binary_search(id).is_err())
        .collect();
    dissimilar.sort_unstable();
    GroupSplit {
        similar,
        dissimilar,
        elbow_rank: elbow,
        sorted_scores: sorted,
        degenerate,
    }
}

/// Element-wise mean of the members, accumulated in ascending client id.
pub fn group_aggregate(members: &[(usize, &ItemEmbeddingMatrix)]) -> Result<ItemEmbeddingMatrix> {
    let mut ordered: Vec<&(usize, &ItemEmbeddingMatrix)> = members.iter().collect();
    ordered.sort_by_key(|m| m.0);
    let first = ordered
        .first()
        .ok_or_else(|| Error::Empty("no models to aggregate".into()))?
        .1;
    let (rows, dim) = first.shape();
    if let Some((id, _)) = ordered.iter().find(|(_, m)| m.shape() != (rows, dim)) {
        return Err(Error::Shape(format!("client {id} model shape differs")));
    }
    let mut sum = first.as_slice().to_vec();
    for (_, m) in &ordered[1..] {
        for (s, x) in sum.iter_mut().zip(m.as_slice()) {
            *s += x;
        }
    }
    let count = ordered.len() as f64;
    sum.iter_mut().for_each(|s| *s /= count);
    ItemEmbeddingMatrix::from_vec(rows, dim, sum)
}

/// Global model over all participants; same contract as [`group_aggregate`].
pub fn global_aggregate(
    participants: &[(usize, &ItemEmbeddingMatrix)],
) -> Result<ItemEmbeddingMatrix> {
    group_aggregate(participants)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(values: &[f64], core: usize) -> SimilarityScores {
        SimilarityScores {
            core,
            category: 0,
            scores: values.iter().copied().enumerate().collect(),
        }
    }

    #[test]
    fn elbow_example() {
        let split = elbow_split(&scores(&[1.0, 0.98, 0.96, 0.2, 0.18], 0));
        assert_eq!(split.elbow_rank, 2);
        assert_eq!(split.similar, vec![0, 1, 2]);
        assert_eq!(split.dissimilar, vec![3, 4]);
    }

    #[test]
    fn flat_scores_keep_everyone() {
        let split = elbow_split(&scores(&[0.5; 4], 2));
        assert_eq!(split.similar, vec![0, 1, 2, 3]);
        assert!(split.dissimilar.is_empty());
        assert!(split.degenerate);
    }

    #[test]
    fn collinear_scores_pick_top_and_core() {
        let split = elbow_split(&scores(&[1.0, 0.75, 0.5, 0.25, 0.0], 3));
        assert_eq!(split.elbow_rank, 0);
        assert_eq!(split.similar, vec![0, 3]);
    }

    #[test]
    fn two_participants() {
        let split = elbow_split(&scores(&[0.2, 0.9], 0));
        assert_eq!(split.similar, vec![0, 1]);
        let split = elbow_split(&scores(&[0.2, 0.9], 1));
        assert_eq!(split.similar, vec![1]);
        assert_eq!(split.dissimilar, vec![0]);
        let one = elbow_split(&scores(&[0.3], 0));
        assert_eq!(one.similar, vec![0]);
        assert!(one.degenerate);
    }

    #[test]
    fn cosine_identities() {
        let a = ItemEmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 0.0], vec![-3.0, 1.0]])
            .unwrap();
        let neg = a.scaled(-1.0);
        let items = [0, 2];
        let s =
            similarity_scores(&a, &[(0, &a), (1, &neg)], &items, Parallelism::default()).unwrap();
        assert!((s[0].1 - 2.0).abs() < 1e-15);
        assert!((s[1].1 + 2.0).abs() < 1e-15);
        // zero row contributes nothing
        assert!((category_cosine(&a, &a, &[0, 1]) - 1.0).abs() < 1e-15);
        assert!(similarity_scores(&a, &[(0, &a)], &[], Parallelism::default()).is_err());
    }

    #[test]
    fn aggregate_identities() {
        let a = ItemEmbeddingMatrix::from_rows(&[vec![0.1, -2.5], vec![3.0, 0.7]]).unwrap();
        assert_eq!(group_aggregate(&[(4, &a)]).unwrap(), a);
        let neg = a.scaled(-1.0);
        let z = group_aggregate(&[(0, &a), (1, &neg)]).unwrap();
        assert!(z.as_slice().iter().all(|&x| x == 0.0));
        assert!(group_aggregate(&[]).is_err());
        let copies = [(0, &a), (1, &a), (2, &a)];
        let g = global_aggregate(&copies).unwrap();
        for (x, y) in g.as_slice().iter().zip(a.as_slice()) {
            assert!((x - y).abs() <= 1e-15 * y.abs());
        }
    }
}
