//! The federated round loop.
//!
//! Each round: sampled participants train locally in parallel; the server
//! averages the uploads into a global model, clusters its item rows, picks a
//! core client and an item category, splits participants at the elbow of
//! their category similarities and averages the similar group. Only the
//! similar group receives that group model; everyone receives the item
//! membership. Clients never hand their score function to the server.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, category_items, FlattenedModels, ItemMembership, KMeansParams};
use crate::dataset::{
    build_eval_candidates, sample_train_negatives, virtual_ratings_for_user, EvalCandidates,
    EvalMode, InteractionDataset,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Split};
use crate::model::{
    local_train, make_batches, ItemEmbeddingMatrix, LossConfig, SclContext, SclVariant,
    ScoreFunction, TrainStats,
};
use crate::par::{self, Parallelism};
use crate::partition::{
    elbow_split, global_aggregate, group_aggregate, similarity_scores, SimilarityScores,
};
use crate::rng::{stream_rng, Stream};

/// Bytes per membership entry on the wire.
pub const MEMBERSHIP_ENTRY_BYTES: u64 = 4;
const F64_BYTES: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Global aggregation only, no regularizer.
    Origin,
    /// Co-clustering, no regularizer.
    UserP,
    /// Global aggregation with the item-similarity term.
    ItemS,
    /// Global aggregation with the contrastive term.
    ItemSc,
    Full,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(AblationMode::Origin),
            "user_p" => Ok(AblationMode::UserP),
            "item_s" => Ok(AblationMode::ItemS),
            "item_sc" => Ok(AblationMode::ItemSc),
            "full" => Ok(AblationMode::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown ablation mode {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AblationMode::Origin => "origin",
            AblationMode::UserP => "user_p",
            AblationMode::ItemS => "item_s",
            AblationMode::ItemSc => "item_sc",
            AblationMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundConfig {
    pub total_rounds: usize,
    pub participant_fraction: f64,
    pub num_clusters: usize,
    pub loss: LossConfig,
    pub embedding_dim: usize,
    pub negatives_per_positive: usize,
    /// Keep the user's validation and test items out of the training-negative pool.
    pub exclude_heldout_negatives: bool,
    /// Std of the normal initialization of embeddings and score weights.
    pub init_std: f64,
    /// Group model from the elbow split; when false every participant gets the global model.
    pub co_clustering: bool,
    pub virtual_ratio: f64,
    pub eval_k: usize,
    pub eval_mode: EvalMode,
    pub eval_cadence: usize,
    /// Stop after this many evaluations without a new best validation HR.
    pub early_stop_patience: Option<usize>,
    pub kmeans: KMeansParams,
    #[serde(skip)]
    pub parallelism: Parallelism,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            total_rounds: 100,
            participant_fraction: 1.0,
            num_clusters: 30,
            loss: LossConfig::default(),
            embedding_dim: 32,
            negatives_per_positive: 4,
            exclude_heldout_negatives: true,
            init_std: 0.01,
            co_clustering: true,
            virtual_ratio: 0.0,
            eval_k: 10,
            eval_mode: EvalMode::Sampled,
            eval_cadence: 1,
            early_stop_patience: None,
            kmeans: KMeansParams::default(),
            parallelism: Parallelism::default(),
        }
    }
}

impl RoundConfig {
    pub fn participants_per_round(&self, num_users: usize) -> usize {
        if self.participant_fraction >= 1.0 {
            num_users
        } else {
            ((self.participant_fraction * num_users as f64).round() as usize).clamp(2, num_users)
        }
    }

    pub fn validate(&self, dataset: &InteractionDataset) -> Result<()> {
        self.loss.validate()?;
        if !(self.participant_fraction > 0.0 && self.participant_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "participant fraction {} outside (0, 1]",
                self.participant_fraction
            )));
        }
        if self.participant_fraction * (dataset.num_users as f64) < 2.0 - 1e-9 {
            return Err(Error::InvalidArgument(
                "fewer than 2 participants per round".into(),
            ));
        }
        if self.num_clusters == 0 || self.num_clusters > dataset.num_items {
            return Err(Error::InvalidArgument(format!(
                "item clusters {} outside [1, {}]",
                self.num_clusters, dataset.num_items
            )));
        }
        if self.embedding_dim == 0 || self.eval_k == 0 || self.eval_cadence == 0 {
            return Err(Error::InvalidArgument(
                "embedding_dim, eval_k and eval_cadence must be >= 1".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.virtual_ratio) {
            return Err(Error::InvalidArgument(format!(
                "virtual ratio {} outside [0, 0.5]",
                self.virtual_ratio
            )));
        }
        if !self.init_std.is_finite() || self.init_std < 0.0 {
            return Err(Error::InvalidArgument(
                "init_std must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Switches a config to one of the ablation settings.
pub fn ablation_mode(cfg: &RoundConfig, mode: AblationMode) -> RoundConfig {
    let mut out = cfg.clone();
    match mode {
        AblationMode::Full => {}
        AblationMode::Origin => {
            out.co_clustering = false;
            out.loss.lambda = 0.0;
        }
        AblationMode::UserP => {
            out.co_clustering = true;
            out.loss.lambda = 0.0;
        }
        AblationMode::ItemS => {
            out.co_clustering = false;
            out.loss.variant = SclVariant::ItemS;
        }
        AblationMode::ItemSc => {
            out.co_clustering = false;
            out.loss.variant = SclVariant::SupContrast;
        }
    }
    out
}

/// Everything a client keeps on its device.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Latest local item embeddings (or the group model just received).
    pub model: ItemEmbeddingMatrix,
    /// Private score function. Never uploaded.
    pub theta: ScoreFunction,
    pub participation_count: u32,
    pub similar_group_count: u32,
}

/// Everything the server holds between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub round: usize,
    pub group_model: ItemEmbeddingMatrix,
    pub membership: Option<ItemMembership>,
    pub global_model: Option<ItemEmbeddingMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub round: usize,
    pub core: usize,
    pub category: usize,
    pub category_size: usize,
    pub similar_size: usize,
    pub dissimilar_size: usize,
    pub elbow_rank: usize,
    pub degenerate: bool,
    pub similar: Vec<usize>,
    /// `(client id, score)` in descending score order.
    pub scores: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mode: EvalMode,
    pub k: usize,
    pub validation_hr: f64,
    pub validation_ndcg: f64,
    pub test_hr: f64,
    pub test_ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: usize,
    /// Participants whose local training diverged and were left out.
    pub failed: Vec<usize>,
    pub mean_train_loss: f64,
    pub kmeans_objective: f64,
    pub split: Option<SplitRecord>,
    /// Set when the round fell back to global aggregation.
    pub fallback: Option<String>,
    pub receivers: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub metrics: Option<RoundMetrics>,
    /// Set when `metrics` is a new best validation HR.
    pub improved: bool,
}

/// Client state frozen at the best validation round.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub round: usize,
    pub models: Vec<ItemEmbeddingMatrix>,
    pub thetas: Vec<ScoreFunction>,
    pub server: ServerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Metrics of every evaluated round, round 0 being the initial model.
    pub history: Vec<RoundMetrics>,
    pub rounds: Vec<RoundRecord>,
    /// Metrics at the round with the highest validation HR (earliest on ties).
    pub best: RoundMetrics,
    pub participation: Vec<u32>,
    pub similar_counts: Vec<u32>,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub snapshot: Option<Snapshot>,
}

impl RunReport {
    pub fn splits(&self) -> impl Iterator<Item = &SplitRecord> {
        self.rounds.iter().filter_map(|r| r.split.as_ref())
    }

    /// Fraction of clients placed in the similar group at least `min_rounds` times.
    pub fn similar_share_at_least(&self, min_rounds: u32) -> f64 {
        if self.similar_counts.is_empty() {
            return 0.0;
        }
        self.similar_counts
            .iter()
            .filter(|&&c| c >= min_rounds)
            .count() as f64
            / self.similar_counts.len() as f64
    }
}

/// An upload as seen by the server: client id and item embeddings only.
pub type Upload<'a> = (usize, &'a ItemEmbeddingMatrix);

/// Output of the server side of a round.
#[derive(Debug, Clone)]
pub struct ServerStep {
    pub global_model: ItemEmbeddingMatrix,
    pub membership: ItemMembership,
    pub kmeans_objective: f64,
    pub group_model: ItemEmbeddingMatrix,
    /// Ascending ids of the clients that receive `group_model`.
    pub receivers: Vec<usize>,
    pub split: Option<SplitRecord>,
    pub fallback: Option<String>,
}

/// Server update for one round. Sees nothing but the uploaded item embeddings.
pub fn server_step<R: Rng + ?Sized>(
    round: usize,
    uploads: &[Upload<'_>],
    cfg: &RoundConfig,
    rng: &mut R,
) -> Result<ServerStep> {
    let global_model = global_aggregate(uploads)?;
    let k = cfg.num_clusters.min(global_model.rows());
    let km = clustering::kmeans(&global_model, k, cfg.kmeans, rng, cfg.parallelism)?;
    let membership = km.membership;
    let all: Vec<usize> = {
        let mut ids: Vec<usize> = uploads.iter().map(|u| u.0).collect();
        ids.sort_unstable();
        ids
    };
    let global_fallback = |reason: Option<String>| ServerStep {
        global_model: global_model.clone(),
        membership: membership.clone(),
        kmeans_objective: km.objective,
        group_model: global_model.clone(),
        receivers: all.clone(),
        split: None,
        fallback: reason,
    };

    if !cfg.co_clustering {
        return Ok(global_fallback(None));
    }
    if uploads.len() < 2 {
        return Ok(global_fallback(Some("fewer than 2 uploads".into())));
    }
    // Drawn from the sorted ids so the choice ignores upload order.
    let core = all[rng.random_range(0..all.len())];
    let core_model = uploads
        .iter()
        .find(|u| u.0 == core)
        .expect("core uploaded")
        .1;
    let eligible: Vec<usize> = membership
        .sizes()
        .iter()
        .enumerate()
        .filter_map(|(c, &n)| (n >= 2).then_some(c))
        .collect();
    if eligible.is_empty() {
        log::info!("round {round}: no item category with >= 2 items, global aggregation");
        return Ok(global_fallback(Some("no category with >= 2 items".into())));
    }
    let category = eligible[rng.random_range(0..eligible.len())];
    let items = category_items(&membership, category)?;
    let scores = SimilarityScores {
        core,
        category,
        scores: similarity_scores(core_model, uploads, &items, cfg.parallelism)?,
    };
    let split = elbow_split(&scores);
    let members: Vec<Upload<'_>> = uploads
        .iter()
        .copied()
        .filter(|(id, _)| split.similar.binary_search(id).is_ok())
        .collect();
    let group_model = group_aggregate(&members)?;
    let record = SplitRecord {
        round,
        core,
        category,
        category_size: items.len(),
        similar_size: split.similar.len(),
        dissimilar_size: split.dissimilar.len(),
        elbow_rank: split.elbow_rank,
        degenerate: split.degenerate,
        similar: split.similar.clone(),
        scores: split.sorted_scores,
    };
    Ok(ServerStep {
        global_model,
        membership,
        kmeans_objective: km.objective,
        group_model,
        receivers: split.similar,
        split: Some(record),
        fallback: None,
    })
}

/// One client's local round: fresh negatives (and virtual ratings), batching,
/// and local SGD from its cached model.
pub fn client_update(
    client: &mut ClientState,
    dataset: &InteractionDataset,
    membership: Option<&ItemMembership>,
    cfg: &RoundConfig,
    seed: u64,
    round: usize,
) -> Result<TrainStats> {
    let u = client.id;
    let mut rng = stream_rng(seed, Stream::Client, u as u64, round as u64);
    let virtual_ratings = if cfg.virtual_ratio > 0.0 {
        virtual_ratings_for_user(dataset, u, cfg.virtual_ratio, &mut rng)?
    } else {
        Vec::new()
    };
    let virtual_negatives: Vec<usize> = virtual_ratings
        .iter()
        .filter(|(_, l)| *l == 0)
        .map(|(i, _)| *i)
        .collect();
    let mut excluded = virtual_negatives;
    if cfg.exclude_heldout_negatives {
        excluded.extend([dataset.validation[u], dataset.test[u]]);
    }
    excluded.sort_unstable();
    excluded.dedup();
    let negatives =
        sample_train_negatives(dataset, u, cfg.negatives_per_positive, &excluded, &mut rng)?;
    let mut examples: Vec<(usize, f64)> = dataset.train[u].iter().map(|&i| (i, 1.0)).collect();
    examples.extend(virtual_ratings.iter().map(|&(i, l)| (i, f64::from(l))));
    examples.extend(negatives.items.iter().map(|&i| (i, 0.0)));
    let batches = make_batches(examples, cfg.loss.batch_size, &mut rng);
    let ctx = membership.map(|m| SclContext {
        membership: m,
        train_items: &dataset.train[u],
    });
    local_train(
        &mut client.model,
        &mut client.theta,
        &batches,
        ctx,
        &cfg.loss,
        &mut rng,
    )
    .map_err(|e| match e {
        Error::NonFinite(_) => Error::Diverged { client: u, round },
        other => other,
    })
}

/// The run's fixed evaluation candidates, drawn from the master seed.
pub fn eval_candidates(dataset: &InteractionDataset, mode: EvalMode, seed: u64) -> EvalCandidates {
    build_eval_candidates(
        dataset,
        mode,
        &mut stream_rng(seed, Stream::EvalCandidates, 0, 0),
    )
}

/// Sequential state of a simulated federation.
pub struct Simulation<'a> {
    dataset: &'a InteractionDataset,
    cfg: RoundConfig,
    seed: u64,
    candidates: EvalCandidates,
    server: ServerState,
    clients: Vec<ClientState>,
    keep_snapshot: bool,
    best: Option<RoundMetrics>,
    best_snapshot: Option<Snapshot>,
}

impl<'a> Simulation<'a> {
    pub fn new(dataset: &'a InteractionDataset, cfg: RoundConfig, seed: u64) -> Result<Self> {
        cfg.validate(dataset)?;
        let d = cfg.embedding_dim;
        let initial = ItemEmbeddingMatrix::random_normal(
            dataset.num_items,
            d,
            cfg.init_std,
            &mut stream_rng(seed, Stream::Init, 0, 0),
        );
        let clients = (0..dataset.num_users)
            .map(|u| ClientState {
                id: u,
                model: initial.clone(),
                theta: ScoreFunction::random_normal(
                    d,
                    cfg.init_std,
                    &mut stream_rng(seed, Stream::Init, 1, u as u64),
                ),
                participation_count: 0,
                similar_group_count: 0,
            })
            .collect();
        let candidates = eval_candidates(dataset, cfg.eval_mode, seed);
        Ok(Self {
            dataset,
            cfg,
            seed,
            candidates,
            server: ServerState {
                round: 0,
                group_model: initial,
                membership: None,
                global_model: None,
            },
            clients,
            keep_snapshot: false,
            best: None,
            best_snapshot: None,
        })
    }

    /// Keep a copy of all client models at the best validation round.
    pub fn keep_best_snapshot(mut self, keep: bool) -> Self {
        self.keep_snapshot = keep;
        self
    }

    pub fn config(&self) -> &RoundConfig {
        &self.cfg
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn candidates(&self) -> &EvalCandidates {
        &self.candidates
    }

    pub fn round(&self) -> usize {
        self.server.round
    }

    pub fn evaluate(&self) -> Result<RoundMetrics> {
        let model_of = |u: usize| (&self.clients[u].model, &self.clients[u].theta);
        let k = self.cfg.eval_k;
        let mode = self.cfg.parallelism;
        let val = evaluate(
            self.dataset,
            &self.candidates,
            Split::Validation,
            k,
            model_of,
            mode,
        )?;
        let test = evaluate(
            self.dataset,
            &self.candidates,
            Split::Test,
            k,
            model_of,
            mode,
        )?;
        Ok(RoundMetrics {
            round: self.server.round,
            mode: self.candidates.mode,
            k,
            validation_hr: val.hr(),
            validation_ndcg: val.ndcg(),
            test_hr: test.hr(),
            test_ndcg: test.ndcg(),
        })
    }

    fn sample_participants(&self, round: usize) -> Vec<usize> {
        let n = self.dataset.num_users;
        let count = self.cfg.participants_per_round(n);
        if count >= n {
            return (0..n).collect();
        }
        let mut rng = stream_rng(self.seed, Stream::Server, round as u64, 1);
        let mut ids = index::sample(&mut rng, n, count).into_vec();
        ids.sort_unstable();
        ids
    }

    /// Runs one round: local training, evaluation, then the server step.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let round = self.server.round + 1;
        let participants = self.sample_participants(round);

        let dataset = self.dataset;
        let cfg = &self.cfg;
        let seed = self.seed;
        let membership = self.server.membership.as_ref();
        let mut selected: Vec<&mut ClientState> = {
            let mut marks = vec![false; self.clients.len()];
            participants.iter().for_each(|&p| marks[p] = true);
            self.clients.iter_mut().filter(|c| marks[c.id]).collect()
        };
        let outcomes = par::map_mut(cfg.parallelism, &mut selected, |client| {
            client_update(client, dataset, membership, cfg, seed, round)
        });
        drop(selected);

        let mut failed = Vec::new();
        let mut ok = Vec::new();
        let mut loss_sum = 0.0;
        for (&id, outcome) in participants.iter().zip(outcomes) {
            match outcome {
                Ok(stats) => {
                    loss_sum += stats.loss;
                    ok.push(id);
                }
                Err(Error::Diverged { .. }) => {
                    log::warn!("round {round}: client {id} diverged, excluded from aggregation");
                    failed.push(id);
                }
                Err(e) => return Err(e),
            }
        }
        self.server.round = round;

        let metrics = if round.is_multiple_of(cfg.eval_cadence) || round == cfg.total_rounds {
            Some(self.evaluate()?)
        } else {
            None
        };
        // Evaluated before group models are delivered, so a snapshot taken
        // here holds exactly the models that produced these metrics.
        let improved = match &metrics {
            Some(m) => self.observe(m),
            None => false,
        };

        let d = self.cfg.embedding_dim as u64;
        let items = self.dataset.num_items as u64;
        let mut record = RoundRecord {
            round,
            participants: participants.len(),
            failed,
            mean_train_loss: if ok.is_empty() {
                0.0
            } else {
                loss_sum / ok.len() as f64
            },
            kmeans_objective: 0.0,
            split: None,
            fallback: None,
            receivers: 0,
            bytes_up: ok.len() as u64 * items * d * F64_BYTES,
            bytes_down: 0,
            metrics,
            improved,
        };
        if ok.is_empty() {
            record.fallback = Some("no successful uploads".into());
            return Ok(record);
        }

        let step = {
            let uploads: Vec<Upload<'_>> =
                ok.iter().map(|&id| (id, &self.clients[id].model)).collect();
            let mut rng = stream_rng(self.seed, Stream::Server, round as u64, 0);
            server_step(round, &uploads, &self.cfg, &mut rng)?
        };
        for &id in &ok {
            self.clients[id].participation_count += 1;
        }
        for &id in &step.receivers {
            let client = &mut self.clients[id];
            client.model.clone_from(&step.group_model);
            client.similar_group_count += 1;
        }
        record.kmeans_objective = step.kmeans_objective;
        record.receivers = step.receivers.len();
        record.bytes_down = step.receivers.len() as u64 * items * d * F64_BYTES
            + participants.len() as u64 * items * MEMBERSHIP_ENTRY_BYTES;
        record.split = step.split;
        record.fallback = step.fallback;
        self.server.group_model = step.group_model;
        self.server.global_model = Some(step.global_model);
        self.server.membership = Some(step.membership);
        Ok(record)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            round: self.server.round,
            models: self.clients.iter().map(|c| c.model.clone()).collect(),
            thetas: self.clients.iter().map(|c| c.theta.clone()).collect(),
            server: self.server.clone(),
        }
    }

    /// Tracks the best validation round; returns true on a new best.
    fn observe(&mut self, metrics: &RoundMetrics) -> bool {
        let improved = self
            .best
            .as_ref()
            .is_none_or(|b| metrics.validation_hr > b.validation_hr);
        if improved {
            self.best = Some(metrics.clone());
            if self.keep_snapshot {
                self.best_snapshot = Some(self.snapshot());
            }
        }
        improved
    }

    /// Evaluates the current state as round 0 and runs all rounds, calling
    /// `observer` after each one. Also returns the final client states.
    pub fn run_with<F>(mut self, mut observer: F) -> Result<(RunReport, Vec<ClientState>)>
    where
        F: FnMut(&RoundRecord),
    {
        let initial = self.evaluate()?;
        self.observe(&initial);
        let mut history = vec![initial];
        let mut rounds = Vec::with_capacity(self.cfg.total_rounds);
        let mut since_best = 0usize;
        let (mut up, mut down) = (0u64, 0u64);

        for _ in 0..self.cfg.total_rounds {
            let record = self.step()?;
            up += record.bytes_up;
            down += record.bytes_down;
            if let Some(m) = &record.metrics {
                history.push(m.clone());
                if record.improved {
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            observer(&record);
            let round = record.round;
            rounds.push(record);
            if let Some(p) = self.cfg.early_stop_patience {
                if since_best >= p {
                    log::info!("early stop after round {round}");
                    break;
                }
            }
        }

        let report = RunReport {
            history,
            rounds,
            best: self.best.take().expect("round 0 is always evaluated"),
            participation: self.clients.iter().map(|c| c.participation_count).collect(),
            similar_counts: self.clients.iter().map(|c| c.similar_group_count).collect(),
            bytes_up: up,
            bytes_down: down,
            snapshot: self.best_snapshot.take(),
        };
        Ok((report, self.clients))
    }

    pub fn run(self) -> Result<RunReport> {
        self.run_with(|_| {}).map(|(r, _)| r)
    }
}

/// Runs the whole protocol with default observer and no snapshot.
pub fn run(dataset: &InteractionDataset, cfg: RoundConfig, seed: u64) -> Result<RunReport> {
    Simulation::new(dataset, cfg, seed)?.run()
}

/// Cluster sizes (descending) from K-Means on flattened client models.
pub fn diagnose_client_kmeans(
    models: &[&ItemEmbeddingMatrix],
    k: usize,
    seed: u64,
    params: KMeansParams,
    mode: Parallelism,
) -> Result<Vec<usize>> {
    if models.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} client models for K={k}",
            models.len()
        )));
    }
    let points = FlattenedModels(models.to_vec());
    let mut rng = stream_rng(seed, Stream::Diagnose, k as u64, 0);
    let result = clustering::kmeans(&points, k, params, &mut rng, mode)?;
    let mut sizes = result.membership.sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    Ok(sizes)
}
