//! Rating-log ingestion, implicit conversion and leave-latest-out splits.
//!
//! Also owns the two sampling procedures that touch raw interactions: the
//! per-round training negatives and the fixed evaluation candidate lists.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RawRating {
    pub user_id: u64,
    pub item_id: u64,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingFormat {
    /// MovieLens style, `::` or tab separated, no header.
    Dat,
    /// Comma or tab separated with an optional `user,item,rating[,timestamp]` header.
    Csv,
}

impl std::str::FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dat" => Ok(RatingFormat::Dat),
            "csv" => Ok(RatingFormat::Csv),
            other => Err(Error::InvalidArgument(format!(
                "unknown rating format {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for RatingFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RatingFormat::Dat => "dat",
            RatingFormat::Csv => "csv",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RatingLog {
    pub ratings: Vec<RawRating>,
    /// 1-based line numbers of lines that failed to parse and were tolerated.
    pub malformed_lines: Vec<usize>,
}

/// Loads a rating file, failing on the first malformed line.
pub fn load_movielens(path: impl AsRef<Path>, format: RatingFormat) -> Result<Vec<RawRating>> {
    load_ratings(path, format, 0).map(|log| log.ratings)
}

/// Loads a rating file, tolerating up to `max_malformed` unparsable lines.
pub fn load_ratings(
    path: impl AsRef<Path>,
    format: RatingFormat,
    max_malformed: usize,
) -> Result<RatingLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ratings(&text, format, max_malformed)
}

#[derive(Debug, Clone, Copy)]
struct Columns {
    user: usize,
    item: usize,
    rating: Option<usize>,
    timestamp: Option<usize>,
}

const DEFAULT_COLUMNS: Columns = Columns {
    user: 0,
    item: 1,
    rating: Some(2),
    timestamp: Some(3),
};

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains("::") {
        line.split("::").map(str::trim).collect()
    } else if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else {
        line.split(',').map(str::trim).collect()
    }
}

fn header_columns(fields: &[&str]) -> Option<Columns> {
    let find = |names: &[&str]| {
        fields.iter().position(|f| {
            let f = f.to_ascii_lowercase();
            let base = f.split(':').next().unwrap_or("");
            names.contains(&base)
        })
    };
    let user = find(&["user", "user_id", "userid"])?;
    let item = find(&["item", "item_id", "itemid", "movie", "movie_id", "movieid"])?;
    Some(Columns {
        user,
        item,
        rating: find(&["rating", "score"]),
        timestamp: find(&["timestamp", "time", "ts"]),
    })
}

fn parse_line(fields: &[&str], cols: Columns, line_no: usize) -> Result<RawRating> {
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    if fields.len() < 2 {
        return Err(err(format!(
            "expected at least 2 fields, got {}",
            fields.len()
        )));
    }
    let get = |idx: usize| {
        fields
            .get(idx)
            .copied()
            .ok_or_else(|| err(format!("missing column {idx}")))
    };
    let user_id = get(cols.user)?
        .parse::<u64>()
        .map_err(|e| err(format!("bad user id {:?}: {e}", fields[cols.user])))?;
    let item_id = get(cols.item)?
        .parse::<u64>()
        .map_err(|e| err(format!("bad item id {:?}: {e}", fields[cols.item])))?;
    let rating = match cols.rating {
        Some(idx) if idx < fields.len() => fields[idx]
            .parse::<f64>()
            .map_err(|e| err(format!("bad rating {:?}: {e}", fields[idx])))?,
        _ => 1.0,
    };
    let timestamp = match cols.timestamp {
        Some(idx) if idx < fields.len() && !fields[idx].is_empty() => Some(
            fields[idx]
                .parse::<f64>()
                .map_err(|e| err(format!("bad timestamp {:?}: {e}", fields[idx])))?
                as i64,
        ),
        _ => None,
    };
    Ok(RawRating {
        user_id,
        item_id,
        rating,
        timestamp,
    })
}

pub fn parse_ratings(text: &str, format: RatingFormat, max_malformed: usize) -> Result<RatingLog> {
    let mut log = RatingLog::default();
    let mut cols = DEFAULT_COLUMNS;
    let mut first_error: Option<(usize, Error)> = None;
    let mut seen_content = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line);
        if !seen_content {
            seen_content = true;
            if format == RatingFormat::Csv {
                if let Some(h) = header_columns(&fields) {
                    cols = h;
                    continue;
                }
            }
        }
        match parse_line(&fields, cols, line_no) {
            Ok(r) => log.ratings.push(r),
            Err(e) => {
                log.malformed_lines.push(line_no);
                if first_error.is_none() {
                    first_error = Some((line_no, e));
                }
            }
        }
    }
    if let Some((line, err)) = first_error {
        if log.malformed_lines.len() > max_malformed {
            if log.malformed_lines.len() == 1 {
                return Err(err);
            }
            return Err(Error::Malformed {
                count: log.malformed_lines.len(),
                first_line: line,
                message: err.to_string(),
            });
        }
        log::warn!(
            "{} malformed rating line(s) tolerated, first at line {line}",
            log.malformed_lines.len()
        );
    }
    if log.ratings.is_empty() {
        return Err(Error::Empty("no rating records".into()));
    }
    Ok(log)
}

/// Per-user implicit interactions split leave-latest-out.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Sorted dense item indices of each user's training positives.
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Dense user index to raw id, ascending.
    pub user_ids: Vec<u64>,
    /// Dense item index to raw id, ascending.
    pub item_ids: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    /// Raw ids of users removed by the interaction threshold.
    pub filtered_users: Vec<u64>,
    /// Raw ids of users that kept too few interactions to leave a training positive.
    pub dropped_users: Vec<u64>,
    pub duplicate_records: usize,
}

impl InteractionDataset {
    pub fn user_index(&self, raw: u64) -> Option<usize> {
        self.user_ids.binary_search(&raw).ok()
    }

    pub fn item_index(&self, raw: u64) -> Option<usize> {
        self.item_ids.binary_search(&raw).ok()
    }

    pub fn num_train_interactions(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn is_train_positive(&self, user: usize, item: usize) -> bool {
        self.train[user].binary_search(&item).is_ok()
    }

    /// Sorted train ∪ {validation, test} for `user`.
    pub fn known_items(&self, user: usize) -> Vec<usize> {
        let mut known = self.train[user].clone();
        known.push(self.validation[user]);
        known.push(self.test[user]);
        known.sort_unstable();
        known.dedup();
        known
    }

    pub fn write_index_maps(&self, users_csv: &Path, items_csv: &Path) -> Result<()> {
        write_map(users_csv, "user_index,raw_user_id", &self.user_ids)?;
        write_map(items_csv, "item_index,raw_item_id", &self.item_ids)
    }

    pub fn write_splits(&self, path: &Path) -> Result<()> {
        let mut out = String::from("user_index,split,item_index\n");
        for u in 0..self.num_users {
            for &i in &self.train[u] {
                out.push_str(&format!("{u},train,{i}\n"));
            }
            out.push_str(&format!("{u},validation,{}\n", self.validation[u]));
            out.push_str(&format!("{u},test,{}\n", self.test[u]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn write_map(path: &Path, header: &str, ids: &[u64]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::with_capacity(ids.len() * 12);
    body.push_str(header);
    body.push('\n');
    for (dense, raw) in ids.iter().enumerate() {
        body.push_str(&format!("{dense},{raw}\n"));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Converts raw ratings to implicit feedback and splits each user's history
/// by time: latest to test, next latest to validation, the rest to train.
///
/// Duplicate (user, item) pairs keep the latest timestamp. Records without a
/// timestamp use their position in `ratings` as a pseudo-timestamp.
pub fn build_splits(
    ratings: &[RawRating],
    min_interactions: usize,
) -> Result<(InteractionDataset, SplitReport)> {
    if ratings.is_empty() {
        return Err(Error::Empty("no ratings to split".into()));
    }
    let mut report = SplitReport::default();

    // (user, item) -> latest time
    let mut latest: HashMap<(u64, u64), i64> = HashMap::with_capacity(ratings.len());
    for (pos, r) in ratings.iter().enumerate() {
        let t = r.timestamp.unwrap_or(pos as i64);
        latest
            .entry((r.user_id, r.item_id))
            .and_modify(|cur| {
                report.duplicate_records += 1;
                if t > *cur {
                    *cur = t;
                }
            })
            .or_insert(t);
    }

    let mut per_user: HashMap<u64, Vec<(i64, u64)>> = HashMap::new();
    for (&(user, item), &t) in &latest {
        per_user.entry(user).or_default().push((t, item));
    }
    let mut users: Vec<u64> = per_user.keys().copied().collect();
    users.sort_unstable();

    let mut kept: Vec<(u64, Vec<(i64, u64)>)> = Vec::new();
    for user in users {
        let mut events = per_user.remove(&user).unwrap_or_default();
        if events.len() < min_interactions {
            report.filtered_users.push(user);
            continue;
        }
        if events.len() < 3 {
            log::warn!("user {user} has no training positive after splitting; dropped");
            report.dropped_users.push(user);
            continue;
        }
        events.sort_unstable();
        kept.push((user, events));
    }
    if kept.is_empty() {
        return Err(Error::Empty("no users survive filtering".into()));
    }

    let mut item_ids: Vec<u64> = kept
        .iter()
        .flat_map(|(_, ev)| ev.iter().map(|&(_, item)| item))
        .collect();
    item_ids.sort_unstable();
    item_ids.dedup();
    let dense_item = |raw: u64| item_ids.binary_search(&raw).expect("item densified");

    let mut train = Vec::with_capacity(kept.len());
    let mut validation = Vec::with_capacity(kept.len());
    let mut test = Vec::with_capacity(kept.len());
    let mut user_ids = Vec::with_capacity(kept.len());
    for (user, events) in &kept {
        let n = events.len();
        test.push(dense_item(events[n - 1].1));
        validation.push(dense_item(events[n - 2].1));
        let mut tr: Vec<usize> = events[..n - 2]
            .iter()
            .map(|&(_, i)| dense_item(i))
            .collect();
        tr.sort_unstable();
        train.push(tr);
        user_ids.push(*user);
    }

    let dataset = InteractionDataset {
        num_users: user_ids.len(),
        num_items: item_ids.len(),
        train,
        validation,
        test,
        user_ids,
        item_ids,
    };
    Ok((dataset, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<usize>,
    /// Set when the eligible pool was too small to sample without replacement.
    pub with_replacement: bool,
}

/// Draws `num_per_positive × |D_u|` training negatives uniformly from items
/// outside the user's training set and outside `exclude` (sorted).
pub fn sample_train_negatives<R: Rng + ?Sized>(
    dataset: &InteractionDataset,
    user: usize,
    num_per_positive: usize,
    exclude: &[usize],
    rng: &mut R,
) -> Result<NegativeSample> {
    if user >= dataset.num_users {
        return Err(Error::InvalidArgument(format!("user {user} out of range")));
    }
    let positives = &dataset.train[user];
    let wanted = positives.len() * num_per_positive;
    let pool: Vec<usize> = (0..dataset.num_items)
        .filter(|i| positives.binary_search(i).is_err() && exclude.binary_search(i).is_err())
        .collect();
    if wanted == 0 {
        return Ok(NegativeSample {
            items: Vec::new(),
            with_replacement: false,
        });
    }
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "user {user} has no eligible negative items"
        )));
    }
    if wanted <= pool.len() {
        let items = index::sample(rng, pool.len(), wanted)
            .into_iter()
            .map(|k| pool[k])
            .collect();
        Ok(NegativeSample {
            items,
            with_replacement: false,
        })
    } else {
        let items = (0..wanted)
            .map(|_| pool[rng.random_range(0..pool.len())])
            .collect();
        Ok(NegativeSample {
            items,
            with_replacement: true,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Sampled,
    FullRank,
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(EvalMode::Sampled),
            "full_rank" | "full" => Ok(EvalMode::FullRank),
            other => Err(Error::InvalidArgument(format!(
                "unknown eval mode {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalMode::Sampled => "sampled",
            EvalMode::FullRank => "full_rank",
        })
    }
}

pub const EVAL_NEGATIVES: usize = 99;

/// Evaluation negatives, fixed for a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCandidates {
    pub mode: EvalMode,
    /// Sampled negatives per user (empty in full-rank mode). The held-out item
    /// is not stored here; see [`EvalCandidates::test_list`].
    pub negatives: Vec<Vec<usize>>,
    /// (user, missing count) for users with fewer than 99 eligible negatives.
    pub shortfall: Vec<(usize, usize)>,
}

impl EvalCandidates {
    /// The test item followed by the sampled negatives.
    pub fn test_list(&self, dataset: &InteractionDataset, user: usize) -> Vec<usize> {
        self.list_for(dataset.test[user], user)
    }

    pub fn validation_list(&self, dataset: &InteractionDataset, user: usize) -> Vec<usize> {
        self.list_for(dataset.validation[user], user)
    }

    fn list_for(&self, target: usize, user: usize) -> Vec<usize> {
        if self.mode == EvalMode::FullRank {
            return Vec::new();
        }
        let mut list = Vec::with_capacity(self.negatives[user].len() + 1);
        list.push(target);
        list.extend_from_slice(&self.negatives[user]);
        list
    }
}

pub fn build_eval_candidates<R: Rng + ?Sized>(
    dataset: &InteractionDataset,
    mode: EvalMode,
    rng: &mut R,
) -> EvalCandidates {
    if mode == EvalMode::FullRank {
        return EvalCandidates {
            mode,
            negatives: vec![Vec::new(); dataset.num_users],
            shortfall: Vec::new(),
        };
    }
    let mut negatives = Vec::with_capacity(dataset.num_users);
    let mut shortfall = Vec::new();
    for user in 0..dataset.num_users {
        let known = dataset.known_items(user);
        let pool: Vec<usize> = (0..dataset.num_items)
            .filter(|i| known.binary_search(i).is_err())
            .collect();
        if pool.len() < EVAL_NEGATIVES {
            shortfall.push((user, EVAL_NEGATIVES - pool.len()));
            let mut all = pool;
            all.shuffle(rng);
            negatives.push(all);
        } else {
            negatives.push(
                index::sample(rng, pool.len(), EVAL_NEGATIVES)
                    .into_iter()
                    .map(|k| pool[k])
                    .collect(),
            );
        }
    }
    if !shortfall.is_empty() {
        log::warn!(
            "{} user(s) have fewer than 99 eligible eval negatives",
            shortfall.len()
        );
    }
    EvalCandidates {
        mode,
        negatives,
        shortfall,
    }
}

/// Number of virtual tuples for a user with `num_positives` training items.
pub fn virtual_count(ratio: f64, num_positives: usize) -> usize {
    (ratio * num_positives as f64 - 1e-9).ceil().max(0.0) as usize
}

/// Virtual ratings for one user: items outside everything the user has
/// interacted with, each labelled 0 or 1 with equal probability.
pub fn virtual_ratings_for_user<R: Rng + ?Sized>(
    dataset: &InteractionDataset,
    user: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<(usize, u8)>> {
    if !(0.0..=0.5).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "virtual rating ratio {ratio} outside [0, 0.5]"
        )));
    }
    let count = virtual_count(ratio, dataset.train[user].len());
    if count == 0 {
        return Ok(Vec::new());
    }
    let known = dataset.known_items(user);
    let pool: Vec<usize> = (0..dataset.num_items)
        .filter(|i| known.binary_search(i).is_err())
        .collect();
    let count = count.min(pool.len());
    let mut out: Vec<(usize, u8)> = index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|k| (pool[k], u8::from(rng.random_bool(0.5))))
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Virtual ratings for every user, drawn in ascending user order.
pub fn inject_virtual_ratings<R: Rng + ?Sized>(
    dataset: &InteractionDataset,
    ratio: f64,
    rng: &mut R,
) -> Result<Vec<Vec<(usize, u8)>>> {
    (0..dataset.num_users)
        .map(|u| virtual_ratings_for_user(dataset, u, ratio, rng))
        .collect()
}
