//! Independent reference implementations and the checks shared by the
//! oracle, protocol and acceptance test targets.
#![allow(dead_code)]

use cofedrec::clustering::{kmeans_from_centroids, Centroids, ItemMembership, KMeansParams};
use cofedrec::model::{
    batch_objective, batch_objective_grad, bce_loss, item_similarity_loss, scl_loss,
    ItemEmbeddingMatrix, LocalBatch, LossConfig, SclContext, SclVariant, ScoreFunction,
};
use cofedrec::partition::{elbow_split, SimilarityScores};
use cofedrec::Parallelism;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller keeps the oracles free of the crate's own samplers.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_matrix<R: Rng>(
    rng: &mut R,
    rows: usize,
    dim: usize,
    std: f64,
) -> ItemEmbeddingMatrix {
    let data = (0..rows * dim).map(|_| std * normal(rng)).collect();
    ItemEmbeddingMatrix::from_vec(rows, dim, data).unwrap()
}

pub fn random_membership<R: Rng>(rng: &mut R, n: usize, k: usize) -> ItemMembership {
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    ItemMembership::new(labels, k).unwrap()
}

// ---------------------------------------------------------------- elbow

/// Elbow rank by perpendicular distance to the chord through the first and
/// last normalized points, using the general point-to-line formula.
pub fn elbow_oracle_f64(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let (hi, lo) = (sorted[0], sorted[n - 1]);
    let pt = |j: usize| (j as f64 / (n - 1) as f64, (sorted[j] - lo) / (hi - lo));
    let (x0, y0) = pt(0);
    let (x1, y1) = pt(n - 1);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = 0;
    let mut best_d = -1.0;
    for j in 0..n {
        let (x, y) = pt(j);
        let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len;
        if d > best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Exact elbow rank for integer scores: distances share the positive factor
/// 1/((n-1)(hi-lo)√2), leaving |j(hi-lo) + (s-lo)(n-1) - (n-1)(hi-lo)|.
pub fn elbow_oracle_int(sorted: &[i64]) -> usize {
    let n = sorted.len() as i128;
    let (hi, lo) = (sorted[0] as i128, *sorted.last().unwrap() as i128);
    let span = hi - lo;
    let mut best = 0;
    let mut best_d = -1i128;
    for (j, &s) in sorted.iter().enumerate() {
        let d = (j as i128 * span + (s as i128 - lo) * (n - 1) - (n - 1) * span).abs();
        if d > best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn expected_split(ids_scores: &[(usize, f64)], core: usize, elbow: usize) -> Vec<usize> {
    let mut sorted = ids_scores.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut similar: Vec<usize> = sorted[..=elbow].iter().map(|s| s.0).collect();
    if !similar.contains(&core) {
        similar.push(core);
    }
    similar.sort_unstable();
    similar
}

/// Runs `count` random elbow instances; half continuous, half small-integer
/// with frequent ties. Returns the number of mismatches.
pub fn elbow_suite(count: usize, seed: u64) -> usize {
    let mut rng = rng(seed);
    let mut failures = 0;
    for case in 0..count {
        let n = rng.random_range(2..=200);
        let integer = case % 2 == 1;
        let raw: Vec<f64> = if integer {
            let top = rng.random_range(1..=20);
            (0..n).map(|_| rng.random_range(0..=top) as f64).collect()
        } else {
            (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        // Shuffle ids so sorting by id matters for ties.
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let pairs: Vec<(usize, f64)> = ids.iter().copied().zip(raw.iter().copied()).collect();
        let core = ids[rng.random_range(0..n)];
        let split = elbow_split(&SimilarityScores {
            core,
            category: 0,
            scores: pairs.clone(),
        });
        let mut sorted: Vec<f64> = raw.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let flat = sorted[0] == sorted[n - 1];
        let oracle = if flat {
            n - 1
        } else if integer {
            let ints: Vec<i64> = sorted.iter().map(|&x| x as i64).collect();
            elbow_oracle_int(&ints)
        } else {
            elbow_oracle_f64(&sorted)
        };
        let ok =
            split.elbow_rank == oracle && split.similar == expected_split(&pairs, core, oracle);
        if !ok {
            failures += 1;
        }
    }
    failures
}

// ---------------------------------------------------------------- k-means

fn wcss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; d];
        for p in &members {
            for (m, x) in mean.iter_mut().zip(p.iter()) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        for p in members {
            total += p
                .iter()
                .zip(&mean)
                .map(|(x, m)| (x - m) * (x - m))
                .sum::<f64>();
        }
    }
    total
}

/// Exhaustive minimum-WCSS labeling with every cluster nonempty.
pub fn kmeans_brute_force(points: &[Vec<f64>], k: usize) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = (labels.clone(), f64::INFINITY);
    loop {
        let mut used = vec![false; k];
        labels.iter().for_each(|&l| used[l] = true);
        if used.iter().all(|&u| u) {
            let obj = wcss(points, &labels, k);
            if obj < best.1 {
                best = (labels.clone(), obj);
            }
        }
        // Next labeling in base-k counting order.
        let mut pos = 0;
        while pos < n {
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
        if pos == n {
            return best;
        }
    }
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(&x, &y)| *map.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

/// Lloyd seeded at the exhaustive optimum must keep that optimum.
/// Returns (instances, failures, worst objective gap).
pub fn kmeans_suite(count: usize, seed: u64) -> (usize, usize, f64) {
    let mut rng = rng(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(k.max(2)..=12);
        let d = rng.random_range(1..=3);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
            .collect();
        let (labels, obj) = kmeans_brute_force(&points, k);
        let mut data = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for j in 0..d {
                data[l * d + j] += p[j];
            }
        }
        for c in 0..k {
            for j in 0..d {
                data[c * d + j] /= counts[c] as f64;
            }
        }
        let flat: Vec<f64> = points.iter().flatten().copied().collect();
        let m = ItemEmbeddingMatrix::from_vec(n, d, flat).unwrap();
        let result = kmeans_from_centroids(
            &m,
            Centroids { k, dim: d, data },
            KMeansParams::default(),
            Parallelism::Sequential,
        )
        .unwrap();
        let gap = (result.objective - obj).abs();
        worst = worst.max(gap);
        if gap > 1e-9 || !same_partition(result.membership.labels(), &labels) {
            failures += 1;
        }
    }
    (count, failures, worst)
}

// ---------------------------------------------------------------- losses

pub fn scl_oracle(v: &ItemEmbeddingMatrix, labels: &[usize], tau: f64, items: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in items {
        let positives: Vec<usize> = items
            .iter()
            .copied()
            .filter(|&z| z != i && labels[z] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        let sim = |a: usize, b: usize| -> f64 {
            v.row(a)
                .iter()
                .zip(v.row(b))
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / tau
        };
        let denom: f64 = items
            .iter()
            .filter(|&&a| a != i)
            .map(|&a| sim(i, a).exp())
            .sum();
        let inner: f64 = positives
            .iter()
            .map(|&z| sim(i, z).exp() / denom)
            .sum::<f64>()
            / positives.len() as f64;
        total -= inner.ln();
    }
    total
}

pub fn item_s_oracle(v: &ItemEmbeddingMatrix, labels: &[usize], train: &[usize]) -> f64 {
    let cos = |a: usize, b: usize| -> f64 {
        let (x, y) = (v.row(a), v.row(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|p| p * p).sum::<f64>().sqrt();
        let ny = y.iter().map(|p| p * p).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    };
    let mut terms = Vec::new();
    for &i in train {
        let peers: Vec<usize> = (0..labels.len())
            .filter(|&z| z != i && labels[z] == labels[i])
            .collect();
        if peers.is_empty() {
            continue;
        }
        terms.push(peers.iter().map(|&z| cos(i, z)).sum::<f64>() / peers.len() as f64);
    }
    if terms.is_empty() {
        0.0
    } else {
        -terms.iter().sum::<f64>() / terms.len() as f64
    }
}

pub fn bce_oracle(preds: &[f64], labels: &[f64]) -> f64 {
    let eps = 1e-12;
    preds
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum()
}

/// (instances, failures, worst relative error) for each loss.
pub fn loss_suite(count: usize, seed: u64) -> [(usize, usize, f64); 3] {
    let mut rng = rng(seed);
    let mut out = [(count, 0, 0.0f64); 3];
    for _ in 0..count {
        let n = rng.random_range(2..=10);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let tau = rng.random_range(0.1..1.0);
        let v = random_matrix(&mut rng, n, d, 0.7);
        let m = random_membership(&mut rng, n, k);
        let use_subset = rng.random_bool(0.3);
        let items: Vec<usize> = if use_subset {
            let mut s: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
            if s.len() < 2 {
                s = vec![0, 1];
            }
            s
        } else {
            (0..n).collect()
        };
        let got = scl_loss(&v, &m, tau, use_subset.then_some(items.as_slice()))
            .unwrap()
            .loss;
        let want = scl_oracle(&v, m.labels(), tau, &items);
        let err = rel_err(got, want);
        out[0].2 = out[0].2.max(err);
        if err > 1e-10 {
            out[0].1 += 1;
        }

        let train: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
        let got = item_similarity_loss(&v, &m, &train).unwrap().loss;
        let want = item_s_oracle(&v, m.labels(), &train);
        let err = rel_err(got, want);
        out[1].2 = out[1].2.max(err);
        if err > 1e-10 {
            out[1].1 += 1;
        }

        let len = rng.random_range(1..=20);
        let preds: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..len)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let got = bce_loss(&preds, &labels).unwrap();
        let want = bce_oracle(&preds, &labels);
        let err = rel_err(got, want);
        out[2].2 = out[2].2.max(err);
        if err > 1e-10 {
            out[2].1 += 1;
        }
    }
    out
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------- gradients

/// Components smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-4;

fn grad_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Worst error between the analytic batch-objective gradient and central
/// differences with step `h`, over all parameters, on `count` instances.
pub fn gradient_suite(variant: SclVariant, count: usize, seed: u64, h: f64) -> (usize, f64) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let n = rng.random_range(3..=8);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let v = random_matrix(&mut rng, n, d, 0.5);
        let theta = ScoreFunction {
            weights: (0..d).map(|_| normal(&mut rng)).collect(),
            bias: normal(&mut rng) * 0.3,
        };
        let m = random_membership(&mut rng, n, k);
        let train: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
        let len = rng.random_range(1..=6);
        let batch = LocalBatch {
            items: (0..len).map(|_| rng.random_range(0..n)).collect(),
            labels: (0..len)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        };
        let cfg = LossConfig {
            lambda: rng.random_range(0.05..1.0),
            tau: rng.random_range(0.2..1.0),
            variant,
            ..LossConfig::default()
        };
        let subset: Option<Vec<usize>> =
            (variant == SclVariant::SupContrast && rng.random_bool(0.3)).then(|| {
                let mut s: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.7)).collect();
                if s.len() < 2 {
                    s = vec![0, n - 1];
                }
                s
            });
        let scale = if let Some(s) = &subset {
            n as f64 / s.len() as f64
        } else {
            1.0
        };
        let ctx = SclContext {
            membership: &m,
            train_items: &train,
        };
        let f = |v: &ItemEmbeddingMatrix, t: &ScoreFunction| {
            batch_objective(v, t, &batch, Some(&ctx), &cfg, subset.as_deref(), scale).unwrap()
        };
        let g = batch_objective_grad(
            &v,
            &theta,
            &batch,
            Some(&ctx),
            &cfg,
            subset.as_deref(),
            scale,
        )
        .unwrap();
        assert!(rel_close(g.loss, f(&v, &theta), 1e-12));

        for j in 0..d {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus.weights[j] += h;
            minus.weights[j] -= h;
            let num = (f(&v, &plus) - f(&v, &minus)) / (2.0 * h);
            worst = worst.max(grad_err(g.weights[j], num));
        }
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus.bias += h;
        minus.bias -= h;
        worst = worst.max(grad_err(g.bias, (f(&v, &plus) - f(&v, &minus)) / (2.0 * h)));

        for idx in 0..n * d {
            let mut vp = v.clone();
            let mut vm = v.clone();
            vp.as_mut_slice()[idx] += h;
            vm.as_mut_slice()[idx] -= h;
            let num = (f(&vp, &theta) - f(&vm, &theta)) / (2.0 * h);
            worst = worst.max(grad_err(g.embeddings.as_slice()[idx], num));
        }
    }
    (count, worst)
}

// ---------------------------------------------------------------- protocol

pub mod protocol {
    use std::collections::BTreeSet;

    use cofedrec::federation::{client_update, RoundConfig, RoundRecord, Simulation, SplitRecord};
    use cofedrec::model::ItemEmbeddingMatrix;
    use cofedrec::partition::group_aggregate;
    use cofedrec::synthetic::{planted, PlantedConfig};
    use cofedrec::{InteractionDataset, Parallelism};

    pub const SEED: u64 = 7;
    pub const ROUNDS: usize = 100;

    pub fn protocol_dataset() -> InteractionDataset {
        let cfg = PlantedConfig {
            users: 50,
            items: 80,
            per_user: 16,
            ..PlantedConfig::default()
        };
        planted(&cfg, SEED).unwrap().dataset
    }

    pub fn protocol_config(parallelism: Parallelism) -> RoundConfig {
        let mut cfg = RoundConfig {
            total_rounds: ROUNDS,
            participant_fraction: 0.6,
            num_clusters: 6,
            embedding_dim: 8,
            parallelism,
            ..RoundConfig::default()
        };
        cfg.loss.batch_size = 32;
        cfg
    }

    /// Replays `ROUNDS` rounds with full visibility and checks each protocol
    /// invariant against an independent recomputation of the round. Panics on
    /// the first violation; returns the number of rounds that split.
    pub fn replay_protocol() -> usize {
        let data = protocol_dataset();
        let cfg = protocol_config(Parallelism::Sequential);
        let mut sim = Simulation::new(&data, cfg.clone(), SEED).unwrap();
        let items = data.num_items as u64;
        let d = cfg.embedding_dim as u64;
        let mut rounds_with_split = 0;

        for _ in 0..ROUNDS {
            let before = sim.clients().to_vec();
            let membership = sim.server().membership.clone();
            let record = sim.step().unwrap();
            let round = record.round;
            let after = sim.clients();

            // Counter deltas identify who uploaded and who received.
            let uploaded: Vec<usize> = (0..after.len())
                .filter(|&u| after[u].participation_count == before[u].participation_count + 1)
                .collect();
            let received: BTreeSet<usize> = (0..after.len())
                .filter(|&u| after[u].similar_group_count == before[u].similar_group_count + 1)
                .collect();
            for u in 0..after.len() {
                let dp = after[u].participation_count - before[u].participation_count;
                let ds = after[u].similar_group_count - before[u].similar_group_count;
                assert!(dp <= 1 && ds <= 1, "round {round}: counters jumped for {u}");
                assert!(after[u].similar_group_count <= after[u].participation_count);
            }
            assert!(received.iter().all(|u| uploaded.binary_search(u).is_ok()));
            assert_eq!(uploaded.len() + record.failed.len(), record.participants);
            assert_eq!(
                record.participants,
                cfg.participants_per_round(data.num_users)
            );
            assert_eq!(received.len(), record.receivers);
            assert_eq!(record.bytes_up, uploaded.len() as u64 * items * d * 8);
            assert_eq!(
                record.bytes_down,
                received.len() as u64 * items * d * 8 + record.participants as u64 * items * 4
            );

            // Recompute local training for every uploader from its pre-round state.
            let trained: Vec<(usize, ItemEmbeddingMatrix)> = uploaded
                .iter()
                .map(|&u| {
                    let mut c = before[u].clone();
                    client_update(&mut c, &data, membership.as_ref(), &cfg, SEED, round).unwrap();
                    assert_eq!(c.theta, after[u].theta, "round {round}: theta of {u}");
                    (u, c.model)
                })
                .collect();

            // Model retention: absentees unchanged, dissimilar uploaders keep
            // their own trained model, receivers hold the group model.
            for u in 0..after.len() {
                if uploaded.binary_search(&u).is_err() {
                    assert_eq!(
                        after[u].model, before[u].model,
                        "round {round}: absent {u} changed"
                    );
                    assert_eq!(after[u].theta, before[u].theta);
                }
            }
            for (u, model) in &trained {
                if received.contains(u) {
                    assert_eq!(
                        &after[*u].model,
                        &sim.server().group_model,
                        "round {round}: receiver {u}"
                    );
                } else {
                    assert_eq!(
                        &after[*u].model, model,
                        "round {round}: dissimilar {u} lost its model"
                    );
                }
            }

            // The group model is the mean of the similar members' uploads.
            let members: Vec<(usize, &ItemEmbeddingMatrix)> = trained
                .iter()
                .filter(|(u, _)| received.contains(u))
                .map(|(u, m)| (*u, m))
                .collect();
            if !members.is_empty() {
                assert_eq!(group_aggregate(&members).unwrap(), sim.server().group_model);
            }

            if let Some(split) = &record.split {
                rounds_with_split += 1;
                check_split(split, &received, &uploaded);
            } else {
                assert!(record.fallback.is_some());
                assert_eq!(received.len(), uploaded.len());
            }
            privacy_audit(&sim, &record);
        }
        assert!(
            rounds_with_split >= ROUNDS / 2,
            "only {rounds_with_split} rounds split"
        );
        rounds_with_split
    }

    fn check_split(split: &SplitRecord, received: &BTreeSet<usize>, uploaded: &[usize]) {
        let similar: BTreeSet<usize> = split.similar.iter().copied().collect();
        assert_eq!(&similar, received);
        assert!(similar.contains(&split.core));
        assert!(uploaded.binary_search(&split.core).is_ok());
        let scored: BTreeSet<usize> = split.scores.iter().map(|s| s.0).collect();
        assert_eq!(scored.len(), split.scores.len());
        assert_eq!(scored.into_iter().collect::<Vec<_>>(), uploaded);
        assert!(split.category_size >= 2);
        assert_eq!(split.similar_size + split.dissimilar_size, uploaded.len());
        assert_eq!(split.similar_size, similar.len());
        // Everyone ranked at or before the elbow is similar; nobody after is,
        // except the core.
        for (rank, (id, _)) in split.scores.iter().enumerate() {
            let inside = similar.contains(id);
            assert_eq!(inside, rank <= split.elbow_rank || *id == split.core);
        }
        for w in split.scores.windows(2) {
            assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }

    fn numbers(v: &serde_json::Value, out: &mut BTreeSet<u64>) {
        match v {
            serde_json::Value::Number(n) => {
                out.insert(n.as_f64().unwrap().to_bits());
            }
            serde_json::Value::Array(xs) => xs.iter().for_each(|x| numbers(x, out)),
            serde_json::Value::Object(m) => m.values().for_each(|x| numbers(x, out)),
            _ => {}
        }
    }

    /// Nothing the server holds or reports may carry a client's scoring weights.
    fn privacy_audit(sim: &Simulation<'_>, record: &RoundRecord) {
        let mut seen = BTreeSet::new();
        numbers(&serde_json::to_value(sim.server()).unwrap(), &mut seen);
        numbers(&serde_json::to_value(record).unwrap(), &mut seen);
        for c in sim.clients() {
            // Zero is also a counter value and reveals nothing.
            for v in c
                .theta
                .weights
                .iter()
                .chain(std::iter::once(&c.theta.bias))
                .filter(|v| **v != 0.0)
            {
                assert!(
                    !seen.contains(&v.to_bits()),
                    "theta value {v} of client {} leaked",
                    c.id
                );
            }
        }
    }

    pub fn protocol_run_text(parallelism: Parallelism) -> String {
        let data = protocol_dataset();
        let (report, clients) = Simulation::new(&data, protocol_config(parallelism), SEED)
            .unwrap()
            .run_with(|_| {})
            .unwrap();
        let mut text = serde_json::to_string(&report.history).unwrap();
        text.push_str(&serde_json::to_string(&report.rounds).unwrap());
        for c in clients {
            text.push_str(&serde_json::to_string(c.model.as_slice()).unwrap());
        }
        text
    }

    /// Sequential run compared against rayon pools of 1 and 4 threads.
    #[cfg(feature = "parallel")]
    pub fn threaded_runs_match() -> bool {
        let seq = protocol_run_text(Parallelism::Sequential);
        [1, 4].iter().all(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| protocol_run_text(Parallelism::Rayon)) == seq
        })
    }

    #[cfg(not(feature = "parallel"))]
    pub fn threaded_runs_match() -> bool {
        protocol_run_text(Parallelism::Sequential) == protocol_run_text(Parallelism::Sequential)
    }
}
