//! Client-side model: item embeddings, the private score function, the local
//! objective and its analytic gradients, and the SGD procedure.
//!
//! The local objective for one batch is
//!
//! ```text
//! L = Σ_pos -log r̂ + Σ_neg -log(1 - r̂) + λ · R(V)
//! ```
//!
//! where `r̂ = sigmoid(w·V[i] + b)` and `R` is either the supervised
//! contrastive term over item clusters or the cosine item-similarity term.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clustering::ItemMembership;
use crate::error::{Error, Result};

/// Probability clamp used by [`bce_loss`].
pub const PROB_EPS: f64 = 1e-12;

/// Dense row-major `rows × dim` matrix of item embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ItemEmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn from_vec(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::from_vec(rows.len(), dim, rows.concat())
    }

    /// Entries i.i.d. normal(0, std).
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
        Self { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.dim)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            dim: self.dim,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }
}

/// Client-private affine scorer. Never leaves the client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl ScoreFunction {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn random_normal<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        Self {
            weights: (0..dim).map(|_| normal.sample(rng)).collect(),
            bias: 0.0,
        }
    }

    #[inline]
    pub fn logit(&self, row: &[f64]) -> f64 {
        dot(&self.weights, row) + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^x) without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Predicted interaction probability, kept strictly inside (0, 1).
pub fn predict(score_fn: &ScoreFunction, item_row: &[f64]) -> Result<f64> {
    if score_fn.weights.len() != item_row.len() {
        return Err(Error::Shape(format!(
            "score function dim {} vs row dim {}",
            score_fn.weights.len(),
            item_row.len()
        )));
    }
    if !score_fn.is_finite() || item_row.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("predict input".into()));
    }
    Ok(sigmoid(score_fn.logit(item_row)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
}

/// Summed binary cross-entropy with probabilities clamped at [`PROB_EPS`].
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SclVariant {
    /// Supervised contrastive term over item clusters.
    #[serde(rename = "supcontrast")]
    SupContrast,
    /// Cosine item-similarity term (ablation).
    ItemS,
    None,
}

impl std::str::FromStr for SclVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supcontrast" => Ok(SclVariant::SupContrast),
            "item_s" => Ok(SclVariant::ItemS),
            "none" => Ok(SclVariant::None),
            other => Err(Error::InvalidArgument(format!(
                "unknown scl variant {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for SclVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SclVariant::SupContrast => "supcontrast",
            SclVariant::ItemS => "item_s",
            SclVariant::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the regularization term.
    pub lambda: f64,
    /// Contrastive temperature.
    pub tau: f64,
    pub variant: SclVariant,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Catalogs larger than this use a per-batch uniform item subsample for
    /// the contrastive term.
    pub scl_max_items: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.005,
            tau: 0.1,
            variant: SclVariant::SupContrast,
            learning_rate: 0.1,
            local_epochs: 1,
            batch_size: 256,
            scl_max_items: 4096,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.local_epochs == 0 || self.batch_size == 0 || self.scl_max_items < 2 {
            return Err(Error::InvalidArgument(
                "local_epochs, batch_size must be >= 1 and scl_max_items >= 2".into(),
            ));
        }
        Ok(())
    }

    pub fn regularized(&self) -> bool {
        self.lambda > 0.0 && self.variant != SclVariant::None
    }
}

/// Result of a cluster-based loss: value plus anchors skipped for lack of peers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterLoss {
    pub loss: f64,
    pub skipped: usize,
}

fn check_membership(v: &ItemEmbeddingMatrix, membership: &ItemMembership) -> Result<()> {
    if membership.len() != v.rows() {
        return Err(Error::Shape(format!(
            "membership covers {} items, embeddings have {}",
            membership.len(),
            v.rows()
        )));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Supervised contrastive term over `item_subset` (all items when `None`).
///
/// For each anchor `i`, positives are the other items of the subset sharing
/// its cluster and the denominator runs over every other item of the subset.
/// The `1/|Z(i)|` average sits inside the log.
pub fn scl_loss(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    tau: f64,
    item_subset: Option<&[usize]>,
) -> Result<ClusterLoss> {
    scl_impl(v, membership, tau, item_subset, None)
}

/// Like [`scl_loss`] but also adds `scale · ∂L/∂V` into `grad`.
pub fn scl_loss_grad(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    tau: f64,
    item_subset: Option<&[usize]>,
    scale: f64,
    grad: &mut ItemEmbeddingMatrix,
) -> Result<ClusterLoss> {
    scl_impl(v, membership, tau, item_subset, Some((scale, grad)))
}

fn scl_impl(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    tau: f64,
    item_subset: Option<&[usize]>,
    grad: Option<(f64, &mut ItemEmbeddingMatrix)>,
) -> Result<ClusterLoss> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be > 0, got {tau}"
        )));
    }
    check_membership(v, membership)?;
    let all: Vec<usize>;
    let items: &[usize] = match item_subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i >= v.rows()) {
                return Err(Error::InvalidArgument(format!("item {bad} out of range")));
            }
            s
        }
        None => {
            all = (0..v.rows()).collect();
            &all
        }
    };
    let m = items.len();
    let d = v.dim();
    let labels: Vec<usize> = items.iter().map(|&i| membership.label(i)).collect();

    // Pairwise logits s[p][q] = V_p·V_q / τ.
    let mut logits = vec![0.0; m * m];
    for p in 0..m {
        let vp = v.row(items[p]);
        for q in p + 1..m {
            let s = dot(vp, v.row(items[q])) / tau;
            logits[p * m + q] = s;
            logits[q * m + p] = s;
        }
    }

    let mut coeff = grad.as_ref().map(|_| vec![0.0; m * m]);
    let mut total = 0.0;
    let mut skipped = 0;
    for p in 0..m {
        let row = &logits[p * m..(p + 1) * m];
        let others = (0..m).filter(move |&q| q != p);
        let positives = others.clone().filter(|&q| labels[q] == labels[p]);
        let z = positives.clone().count();
        if z == 0 {
            skipped += 1;
            continue;
        }
        let lse_all = log_sum_exp(others.clone().map(|q| row[q]));
        let lse_pos = log_sum_exp(positives.clone().map(|q| row[q]));
        total += lse_all - lse_pos + (z as f64).ln();
        if let Some(c) = coeff.as_mut() {
            for q in others {
                let mut g = (row[q] - lse_all).exp();
                if labels[q] == labels[p] {
                    g -= (row[q] - lse_pos).exp();
                }
                c[p * m + q] = g;
            }
        }
    }

    if let (Some((scale, grad)), Some(c)) = (grad, coeff) {
        check_same_shape(v, grad)?;
        // ∂/∂V_p = Σ_q (c[p][q] + c[q][p]) V_q / τ
        let mut acc = vec![0.0; d];
        for p in 0..m {
            acc.iter_mut().for_each(|x| *x = 0.0);
            for q in 0..m {
                let w = c[p * m + q] + c[q * m + p];
                if w != 0.0 {
                    for (a, x) in acc.iter_mut().zip(v.row(items[q])) {
                        *a += w * x;
                    }
                }
            }
            let f = scale / tau;
            for (g, a) in grad.row_mut(items[p]).iter_mut().zip(&acc) {
                *g += f * a;
            }
        }
    }
    Ok(ClusterLoss {
        loss: total,
        skipped,
    })
}

fn check_same_shape(a: &ItemEmbeddingMatrix, b: &ItemEmbeddingMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Cosine item-similarity term: minus the mean, over training items with at
/// least one same-cluster peer, of the average cosine to those peers.
pub fn item_similarity_loss(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    train_items: &[usize],
) -> Result<ClusterLoss> {
    item_similarity_impl(v, membership, train_items, None)
}

pub fn item_similarity_grad(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    train_items: &[usize],
    scale: f64,
    grad: &mut ItemEmbeddingMatrix,
) -> Result<ClusterLoss> {
    item_similarity_impl(v, membership, train_items, Some((scale, grad)))
}

fn item_similarity_impl(
    v: &ItemEmbeddingMatrix,
    membership: &ItemMembership,
    train_items: &[usize],
    mut grad: Option<(f64, &mut ItemEmbeddingMatrix)>,
) -> Result<ClusterLoss> {
    check_membership(v, membership)?;
    if let Some(&bad) = train_items.iter().find(|&&i| i >= v.rows()) {
        return Err(Error::InvalidArgument(format!("item {bad} out of range")));
    }
    if let Some((_, g)) = grad.as_ref() {
        check_same_shape(v, g)?;
    }
    let members = membership.members();
    let norms: Vec<f64> = (0..v.rows()).map(|i| norm(v.row(i))).collect();
    let d = v.dim();

    // (anchor, per-anchor weight) for anchors that have peers
    let anchors: Vec<(usize, usize)> = train_items
        .iter()
        .map(|&i| (i, members[membership.label(i)].len() - 1))
        .collect();
    let effective = anchors.iter().filter(|(_, z)| *z > 0).count();
    let skipped = anchors.len() - effective;
    if effective == 0 {
        return Ok(ClusterLoss { loss: 0.0, skipped });
    }

    let mut total = 0.0;
    for &(i, z) in &anchors {
        if z == 0 {
            continue;
        }
        let weight = 1.0 / (effective as f64 * z as f64);
        let vi = v.row(i);
        let ni = norms[i];
        for &j in &members[membership.label(i)] {
            if j == i {
                continue;
            }
            let nj = norms[j];
            if ni == 0.0 || nj == 0.0 {
                continue;
            }
            let vj = v.row(j);
            let cos = dot(vi, vj) / (ni * nj);
            total -= weight * cos;
            if let Some((scale, g)) = grad.as_mut() {
                // ∂cos/∂a = b/(|a||b|) - cos·a/|a|²
                let f = -weight * *scale;
                for k in 0..d {
                    let gi = vj[k] / (ni * nj) - cos * vi[k] / (ni * ni);
                    let gj = vi[k] / (ni * nj) - cos * vj[k] / (nj * nj);
                    g.row_mut(i)[k] += f * gi;
                    g.row_mut(j)[k] += f * gj;
                }
            }
        }
    }
    Ok(ClusterLoss {
        loss: total,
        skipped,
    })
}

/// A slice of the client's local training tuples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalBatch {
    pub items: Vec<usize>,
    /// 1.0 for positives, 0.0 for negatives.
    pub labels: Vec<f64>,
}

impl LocalBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Shuffles `(item, label)` tuples and cuts them into batches of at most `batch_size`.
pub fn make_batches<R: Rng + ?Sized>(
    mut examples: Vec<(usize, f64)>,
    batch_size: usize,
    rng: &mut R,
) -> Vec<LocalBatch> {
    examples.shuffle(rng);
    examples
        .chunks(batch_size.max(1))
        .map(|chunk| LocalBatch {
            items: chunk.iter().map(|e| e.0).collect(),
            labels: chunk.iter().map(|e| e.1).collect(),
        })
        .collect()
}

/// Cluster information a client needs for the regularization term.
#[derive(Debug, Clone, Copy)]
pub struct SclContext<'a> {
    pub membership: &'a ItemMembership,
    /// The client's training positives (anchors of the item-similarity term).
    pub train_items: &'a [usize],
}

/// BCE of one batch from logits, plus its gradient w.r.t. the score function.
fn bce_theta_grad(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    batch: &LocalBatch,
) -> (f64, Vec<f64>, f64) {
    let mut gw = vec![0.0; theta.weights.len()];
    let mut gb = 0.0;
    let mut loss = 0.0;
    for (&i, &y) in batch.items.iter().zip(&batch.labels) {
        let row = v.row(i);
        let z = theta.logit(row);
        loss += softplus(z) - y * z;
        let e = sigmoid(z) - y;
        gb += e;
        for (g, x) in gw.iter_mut().zip(row) {
            *g += e * x;
        }
    }
    (loss, gw, gb)
}

/// BCE of one batch, adding its gradient w.r.t. the embedding rows into `grad`.
fn bce_v_grad(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    batch: &LocalBatch,
    grad: &mut ItemEmbeddingMatrix,
) -> f64 {
    let mut loss = 0.0;
    for (&i, &y) in batch.items.iter().zip(&batch.labels) {
        let z = theta.logit(v.row(i));
        loss += softplus(z) - y * z;
        let e = sigmoid(z) - y;
        for (g, w) in grad.row_mut(i).iter_mut().zip(&theta.weights) {
            *g += e * w;
        }
    }
    loss
}

/// Items over which the contrastive term is evaluated for one batch, and the
/// factor that rescales a subsampled anchor sum to catalog size.
pub fn scl_scope<R: Rng + ?Sized>(
    num_items: usize,
    max_items: usize,
    rng: &mut R,
) -> (Option<Vec<usize>>, f64) {
    if num_items <= max_items {
        return (None, 1.0);
    }
    let mut subset = index::sample(rng, num_items, max_items).into_vec();
    subset.sort_unstable();
    (Some(subset), num_items as f64 / max_items as f64)
}

/// Adds `lambda · scale · ∂R/∂V` into `grad`, returning `lambda · scale · R`.
fn regularizer_grad(
    v: &ItemEmbeddingMatrix,
    ctx: &SclContext<'_>,
    cfg: &LossConfig,
    subset: Option<&[usize]>,
    scale: f64,
    grad: &mut ItemEmbeddingMatrix,
) -> Result<f64> {
    let w = cfg.lambda * scale;
    let out = match cfg.variant {
        SclVariant::SupContrast => scl_loss_grad(v, ctx.membership, cfg.tau, subset, w, grad)?,
        SclVariant::ItemS => item_similarity_grad(v, ctx.membership, ctx.train_items, w, grad)?,
        SclVariant::None => return Ok(0.0),
    };
    Ok(w * out.loss)
}

/// Value of the batch objective at `(v, theta)`.
pub fn batch_objective(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    batch: &LocalBatch,
    ctx: Option<&SclContext<'_>>,
    cfg: &LossConfig,
    subset: Option<&[usize]>,
    scale: f64,
) -> Result<f64> {
    let mut loss: f64 = batch
        .items
        .iter()
        .zip(&batch.labels)
        .map(|(&i, &y)| {
            let z = theta.logit(v.row(i));
            softplus(z) - y * z
        })
        .sum();
    if let (Some(ctx), true) = (ctx, cfg.regularized()) {
        let r = match cfg.variant {
            SclVariant::SupContrast => scl_loss(v, ctx.membership, cfg.tau, subset)?.loss,
            SclVariant::ItemS => item_similarity_loss(v, ctx.membership, ctx.train_items)?.loss,
            SclVariant::None => 0.0,
        };
        loss += cfg.lambda * scale * r;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrad {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub embeddings: ItemEmbeddingMatrix,
}

/// Batch objective and its exact gradient w.r.t. every parameter.
pub fn batch_objective_grad(
    v: &ItemEmbeddingMatrix,
    theta: &ScoreFunction,
    batch: &LocalBatch,
    ctx: Option<&SclContext<'_>>,
    cfg: &LossConfig,
    subset: Option<&[usize]>,
    scale: f64,
) -> Result<ObjectiveGrad> {
    let (mut loss, weights, bias) = bce_theta_grad(v, theta, batch);
    let mut embeddings = ItemEmbeddingMatrix::zeros(v.rows(), v.dim());
    bce_v_grad(v, theta, batch, &mut embeddings);
    if let (Some(ctx), true) = (ctx, cfg.regularized()) {
        loss += regularizer_grad(v, ctx, cfg, subset, scale, &mut embeddings)?;
    }
    Ok(ObjectiveGrad {
        loss,
        weights,
        bias,
        embeddings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    /// Sum over batches of the objective seen by the embedding step.
    pub loss: f64,
    pub batches: usize,
}

/// Local SGD. Per batch the score function takes one step first, then the
/// item embeddings take one step with the score function held at its new
/// value. On any non-finite parameter the inputs are restored and
/// [`Error::NonFinite`] is returned.
pub fn local_train<R: Rng + ?Sized>(
    v: &mut ItemEmbeddingMatrix,
    theta: &mut ScoreFunction,
    batches: &[LocalBatch],
    ctx: Option<SclContext<'_>>,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<TrainStats> {
    cfg.validate()?;
    if theta.weights.len() != v.dim() {
        return Err(Error::Shape(format!(
            "score function dim {} vs embedding dim {}",
            theta.weights.len(),
            v.dim()
        )));
    }
    if let Some(&bad) = batches
        .iter()
        .flat_map(|b| &b.items)
        .find(|&&i| i >= v.rows())
    {
        return Err(Error::InvalidArgument(format!("item {bad} out of range")));
    }
    let ctx = ctx.filter(|_| cfg.regularized());
    let backup = (v.clone(), theta.clone());
    let lr = cfg.learning_rate;
    let mut grad = ItemEmbeddingMatrix::zeros(v.rows(), v.dim());
    let mut stats = TrainStats::default();

    for _ in 0..cfg.local_epochs {
        for batch in batches {
            let (_, gw, gb) = bce_theta_grad(v, theta, batch);
            for (w, g) in theta.weights.iter_mut().zip(&gw) {
                *w -= lr * g;
            }
            theta.bias -= lr * gb;

            grad.as_mut_slice().iter_mut().for_each(|g| *g = 0.0);
            let mut loss = bce_v_grad(v, theta, batch, &mut grad);
            if let Some(ctx) = ctx.as_ref() {
                let (subset, scale) = match cfg.variant {
                    SclVariant::SupContrast => scl_scope(v.rows(), cfg.scl_max_items, rng),
                    _ => (None, 1.0),
                };
                loss += regularizer_grad(v, ctx, cfg, subset.as_deref(), scale, &mut grad)?;
            }
            for (x, g) in v.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *x -= lr * g;
            }
            stats.loss += loss;
            stats.batches += 1;
        }
    }

    if !stats.loss.is_finite() || !v.is_finite() || !theta.is_finite() {
        *v = backup.0;
        *theta = backup.1;
        return Err(Error::NonFinite("local training diverged".into()));
    }
    Ok(stats)
}
