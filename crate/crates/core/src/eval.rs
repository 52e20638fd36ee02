//! Top-K ranking metrics under the sampled-100 and full-rank protocols.

use serde::{Deserialize, Serialize};

use crate::dataset::{EvalCandidates, EvalMode, InteractionDataset};
use crate::error::{Error, Result};
use crate::model::{ItemEmbeddingMatrix, ScoreFunction};
use crate::par::{self, Parallelism};

/// Rank (1-based) of `test_item` among `candidates`. Candidates scoring equal
/// to the test item count as ranked above it.
pub fn rank_test_item(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    candidates: &[usize],
    test_item: usize,
) -> Result<usize> {
    if !candidates.contains(&test_item) {
        return Err(Error::InvalidArgument(format!(
            "test item {test_item} missing from candidate list"
        )));
    }
    let target = theta.logit(v.row(test_item));
    let above = candidates
        .iter()
        .filter(|&&c| c != test_item && theta.logit(v.row(c)) >= target)
        .count();
    Ok(above + 1)
}

/// Rank of `test_item` among all items except those in `excluded` (sorted).
pub fn rank_full(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    excluded: &[usize],
    test_item: usize,
) -> usize {
    let target = theta.logit(v.row(test_item));
    let above = (0..v.rows())
        .filter(|&c| {
            c != test_item && excluded.binary_search(&c).is_err() && theta.logit(v.row(c)) >= target
        })
        .count();
    above + 1
}

pub fn hr_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

#[inline]
pub fn ndcg_single(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().map(|&r| ndcg_single(r, k)).sum::<f64>() / ranks.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub split: Split,
    pub mode: EvalMode,
    pub k: usize,
    /// Rank of the held-out item per user, in user order.
    pub ranks: Vec<usize>,
}

impl RankingResult {
    pub fn hr(&self) -> f64 {
        hr_at_k(&self.ranks, self.k)
    }

    pub fn ndcg(&self) -> f64 {
        ndcg_at_k(&self.ranks, self.k)
    }
}

/// Ranks every user's held-out item with that user's own model.
pub fn evaluate<'a, F>(
    dataset: &InteractionDataset,
    candidates: &EvalCandidates,
    split: Split,
    k: usize,
    model_of: F,
    mode: Parallelism,
) -> Result<RankingResult>
where
    F: Fn(usize) -> (&'a ItemEmbeddingMatrix, &'a ScoreFunction) + Sync + Send,
{
    let ranks = par::map_range(mode, dataset.num_users, |u| -> Result<usize> {
        let (v, theta) = model_of(u);
        let target = match split {
            Split::Test => dataset.test[u],
            Split::Validation => dataset.validation[u],
        };
        match candidates.mode {
            EvalMode::Sampled => {
                let list = match split {
                    Split::Test => candidates.test_list(dataset, u),
                    Split::Validation => candidates.validation_list(dataset, u),
                };
                rank_test_item(v, theta, &list, target)
            }
            EvalMode::FullRank => {
                let mut excluded = dataset.train[u].clone();
                excluded.push(match split {
                    Split::Test => dataset.validation[u],
                    Split::Validation => dataset.test[u],
                });
                excluded.sort_unstable();
                Ok(rank_full(v, theta, &excluded, target))
            }
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RankingResult {
        split,
        mode: candidates.mode,
        k,
        ranks,
    })
}
