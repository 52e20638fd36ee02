//! Synthetic interaction logs with planted user groups.
//!
//! Items are cut into one contiguous block per group. A user of group `g`
//! draws most interactions from block `g` with Zipf-like popularity inside
//! the block, and the rest uniformly from the other blocks.

use rand::Rng;

use crate::dataset::{build_splits, InteractionDataset, RawRating};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub groups: usize,
    /// Interactions per user before the split.
    pub per_user: usize,
    /// Probability that an interaction falls in the user's own block.
    pub in_block: f64,
    /// Popularity exponent inside a block; 0 is uniform.
    pub zipf: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 400,
            items: 200,
            groups: 2,
            per_user: 20,
            in_block: 0.9,
            zipf: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: InteractionDataset,
    /// Planted group of each user index.
    pub user_group: Vec<usize>,
    /// Block of each item index.
    pub item_block: Vec<usize>,
}

fn block_range(cfg: &PlantedConfig, g: usize) -> std::ops::Range<usize> {
    let size = cfg.items / cfg.groups;
    let end = if g + 1 == cfg.groups {
        cfg.items
    } else {
        (g + 1) * size
    };
    g * size..end
}

fn zipf_pick<R: Rng + ?Sized>(weights: &[f64], total: f64, rng: &mut R) -> usize {
    let mut x = rng.random::<f64>() * total;
    for (j, &w) in weights.iter().enumerate() {
        if x < w {
            return j;
        }
        x -= w;
    }
    weights.len() - 1
}

pub fn planted(cfg: &PlantedConfig, seed: u64) -> Result<Planted> {
    if cfg.groups < 1 || cfg.items < cfg.groups * 2 {
        return Err(Error::InvalidArgument(
            "need at least 2 items per block".into(),
        ));
    }
    if cfg.per_user < 3 || cfg.per_user * 2 > cfg.items {
        return Err(Error::InvalidArgument(format!(
            "per_user {} outside [3, items/2]",
            cfg.per_user
        )));
    }
    if !(0.0..=1.0).contains(&cfg.in_block) {
        return Err(Error::InvalidArgument("in_block outside [0, 1]".into()));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic, 0, 0);
    let mut ratings = Vec::with_capacity(cfg.users * cfg.per_user);
    let mut groups_by_raw = Vec::with_capacity(cfg.users);
    for u in 0..cfg.users {
        let g = u % cfg.groups;
        groups_by_raw.push(g);
        let own = block_range(cfg, g);
        let weights: Vec<f64> = (0..own.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(cfg.zipf))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut chosen = std::collections::BTreeSet::new();
        let mut attempts = 0;
        while chosen.len() < cfg.per_user {
            attempts += 1;
            if attempts > 100 * cfg.per_user {
                break;
            }
            let item = if cfg.groups == 1 || rng.random::<f64>() < cfg.in_block {
                own.start + zipf_pick(&weights, total, &mut rng)
            } else {
                loop {
                    let i = rng.random_range(0..cfg.items);
                    if !own.contains(&i) {
                        break i;
                    }
                }
            };
            if chosen.insert(item) {
                ratings.push(RawRating {
                    user_id: u as u64,
                    item_id: item as u64,
                    rating: 1.0,
                    timestamp: Some(chosen.len() as i64),
                });
            }
        }
    }
    let (dataset, _) = build_splits(&ratings, 3)?;
    let user_group = dataset
        .user_ids
        .iter()
        .map(|&raw| groups_by_raw[raw as usize])
        .collect();
    let item_block = dataset
        .item_ids
        .iter()
        .map(|&raw| {
            (0..cfg.groups)
                .find(|&g| block_range(cfg, g).contains(&(raw as usize)))
                .unwrap_or(0)
        })
        .collect();
    Ok(Planted {
        dataset,
        user_group,
        item_block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = PlantedConfig {
            users: 40,
            items: 60,
            ..PlantedConfig::default()
        };
        let a = planted(&cfg, 3).unwrap();
        let b = planted(&cfg, 3).unwrap();
        assert_eq!(a.dataset.train, b.dataset.train);
        assert_eq!(a.dataset.num_users, 40);
        assert_eq!(a.user_group.iter().filter(|&&g| g == 0).count(), 20);
        for u in 0..40 {
            assert_eq!(a.dataset.train[u].len(), cfg.per_user - 2);
        }
    }
}
