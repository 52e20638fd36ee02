//! K-Means over embedding rows (k-means++ seeding, Lloyd iterations).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ItemEmbeddingMatrix;
use crate::par::{self, Parallelism};

/// Cluster label of every item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMembership {
    labels: Vec<usize>,
    k: usize,
}

impl ItemMembership {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!("label {bad} >= K={k}")));
        }
        Ok(Self { labels, k })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn label(&self, item: usize) -> usize {
        self.labels[item]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Ascending member lists, one per cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for &l in &self.labels {
            out[l] += 1;
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("item_index,label\n");
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// `M_k`: ascending indices of the items labelled `k`.
pub fn category_items(membership: &ItemMembership, k: usize) -> Result<Vec<usize>> {
    if k >= membership.k() {
        return Err(Error::InvalidArgument(format!(
            "category {k} out of range for K={}",
            membership.k()
        )));
    }
    Ok(membership
        .labels()
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == k).then_some(i))
        .collect())
}

/// Row access for anything K-Means can cluster.
pub trait Points: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn point(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Points for ItemEmbeddingMatrix {
    fn len(&self) -> usize {
        self.rows()
    }

    fn dim(&self) -> usize {
        ItemEmbeddingMatrix::dim(self)
    }

    fn point(&self, i: usize) -> &[f64] {
        self.row(i)
    }
}

/// Each matrix flattened (row-major) into a single point.
pub struct FlattenedModels<'a>(pub Vec<&'a ItemEmbeddingMatrix>);

impl Points for FlattenedModels<'_> {
    fn len(&self) -> usize {
        self.0.len()
    }

    fn dim(&self) -> usize {
        self.0.first().map_or(0, |m| m.as_slice().len())
    }

    fn point(&self, i: usize) -> &[f64] {
        self.0[i].as_slice()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub k: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Centroids {
    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.dim..(c + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once the largest centroid shift falls below this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub membership: ItemMembership,
    pub centroids: Centroids,
    /// Within-cluster sum of squared distances at the returned assignment.
    pub objective: f64,
    pub iterations: usize,
    /// Objective after each assignment step.
    pub history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn validate<P: Points + ?Sized>(points: &P, k: usize) -> Result<()> {
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "K={k} must be in [1, {}]",
            points.len()
        )));
    }
    for i in 0..points.len() {
        if points.point(i).iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("row {i}")));
        }
    }
    Ok(())
}

/// k-means++ seeding followed by Lloyd iterations.
pub fn kmeans<P: Points + ?Sized, R: Rng + ?Sized>(
    points: &P,
    k: usize,
    params: KMeansParams,
    rng: &mut R,
    mode: Parallelism,
) -> Result<KMeansResult> {
    validate(points, k)?;
    let init = kmeans_pp(points, k, rng);
    lloyd(points, init, params, mode)
}

/// Lloyd iterations from caller-supplied centroids.
pub fn kmeans_from_centroids<P: Points + ?Sized>(
    points: &P,
    init: Centroids,
    params: KMeansParams,
    mode: Parallelism,
) -> Result<KMeansResult> {
    validate(points, init.k)?;
    if init.dim != points.dim() || init.data.len() != init.k * init.dim {
        return Err(Error::Shape("centroid dimension mismatch".into()));
    }
    lloyd(points, init, params, mode)
}

fn kmeans_pp<P: Points + ?Sized, R: Rng + ?Sized>(points: &P, k: usize, rng: &mut R) -> Centroids {
    let n = points.len();
    let dim = points.dim();
    let mut data = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    data.extend_from_slice(points.point(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.point(i), points.point(first)))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every point coincides with a centre: take any unused one
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        let c = points.point(next);
        data.extend_from_slice(c);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.point(i), c));
        }
    }
    Centroids { k, dim, data }
}

/// Nearest centroid per point; ties go to the lowest cluster id.
fn assign<P: Points + ?Sized>(
    points: &P,
    centroids: &Centroids,
    mode: Parallelism,
) -> Vec<(usize, f64)> {
    par::map_range(mode, points.len(), |i| {
        let p = points.point(i);
        let mut best = (0, sq_dist(p, centroids.row(0)));
        for c in 1..centroids.k {
            let d = sq_dist(p, centroids.row(c));
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    })
}

fn lloyd<P: Points + ?Sized>(
    points: &P,
    mut centroids: Centroids,
    params: KMeansParams,
    mode: Parallelism,
) -> Result<KMeansResult> {
    let n = points.len();
    let k = centroids.k;
    let dim = centroids.dim;
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let assignment = assign(points, &centroids, mode);
        let objective: f64 = assignment.iter().map(|a| a.1).sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                objective <= prev * (1.0 + 1e-12) + 1e-12,
                "k-means objective increased: {prev} -> {objective}"
            );
        }
        history.push(objective);
        if iterations >= params.max_iters {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &(c, _)) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(points.point(i)) {
                *s += x;
            }
        }
        let mut next = Centroids { k, dim, data: sums };
        // Empty clusters take the points farthest from their own centroid.
        let mut taken = vec![false; n];
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                let inv = count as f64;
                next.row_mut(c).iter_mut().for_each(|x| *x /= inv);
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| assignment[a].1.total_cmp(&assignment[b].1).then(b.cmp(&a)));
            if let Some(i) = far {
                taken[i] = true;
                next.row_mut(c).copy_from_slice(points.point(i));
            }
        }
        let shift = (0..k)
            .map(|c| sq_dist(centroids.row(c), next.row(c)).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift < params.tol {
            let assignment = assign(points, &centroids, mode);
            history.push(assignment.iter().map(|a| a.1).sum());
            return finish(assignment, centroids, iterations, history);
        }
    }
    let assignment = assign(points, &centroids, mode);
    finish(assignment, centroids, iterations, history)
}

fn finish(
    assignment: Vec<(usize, f64)>,
    centroids: Centroids,
    iterations: usize,
    history: Vec<f64>,
) -> Result<KMeansResult> {
    let objective = assignment.iter().map(|a| a.1).sum();
    let k = centroids.k;
    Ok(KMeansResult {
        membership: ItemMembership::new(assignment.into_iter().map(|a| a.0).collect(), k)?,
        centroids,
        objective,
        iterations,
        history,
    })
}
