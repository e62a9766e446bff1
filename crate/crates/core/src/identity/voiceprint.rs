use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::CharacterId;
use crate::vector::cosine_f64;

use super::IdentityError;

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

/// Per-character audio centroid used to attribute off-screen dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceprintAnchor {
    pub character_id: CharacterId,
    pub centroid: Vec<f32>,
    pub member_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding from a ChaCha8 stream. Stops after
/// `MAX_ITERATIONS` or once no centroid moves more than `SHIFT_TOLERANCE`.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> KMeansResult {
    assert!(k >= 1 && points.len() >= k, "kmeans needs 1 <= k <= n");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.random_range(0..points.len())];
    while chosen.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                chosen
                    .iter()
                    .map(|&c| sq_dist(p, &points[c]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every point coincides with a centre; take the first unused index
            (0..points.len()).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| points[i].clone()).collect();
    let dim = points[0].len();
    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;

    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids);
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&updated, &centroids[j]).sqrt());
            centroids[j] = updated;
        }
        if shift < SHIFT_TOLERANCE {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centroids);
    }
    KMeansResult {
        centroids,
        labels,
        iterations,
    }
}

/// Clusters confirmed speaker samples and binds each centroid to the
/// character holding the majority of its members. Majority ties go to the
/// character whose in-cluster samples sit closer (mean cosine) to the centroid.
pub fn cluster_voiceprints(
    samples: &[(CharacterId, Vec<f32>)],
    k: usize,
    seed: u64,
) -> Result<Vec<VoiceprintAnchor>, IdentityError> {
    if k == 0 || samples.len() < k {
        return Err(IdentityError::TooFewSamples {
            samples: samples.len(),
            k,
        });
    }
    let distinct: BTreeSet<&CharacterId> = samples.iter().map(|(c, _)| c).collect();
    if distinct.len() != k {
        return Err(IdentityError::ClusterCountMismatch {
            k,
            characters: distinct.len(),
        });
    }

    let points: Vec<Vec<f64>> = samples
        .iter()
        .map(|(_, v)| v.iter().map(|x| f64::from(*x)).collect())
        .collect();
    let result = kmeans(&points, k, seed);

    let mut bound: BTreeMap<CharacterId, usize> = BTreeMap::new();
    let mut anchors = Vec::with_capacity(k);
    for (j, centroid) in result.centroids.iter().enumerate() {
        let mut members: BTreeMap<&CharacterId, Vec<usize>> = BTreeMap::new();
        for (i, &l) in result.labels.iter().enumerate() {
            if l == j {
                members.entry(&samples[i].0).or_default().push(i);
            }
        }
        let member_count: usize = members.values().map(Vec::len).sum();
        if member_count == 0 {
            continue;
        }
        let mean_cos = |idx: &[usize]| -> f64 {
            idx.iter().map(|&i| cosine_f64(&points[i], centroid)).sum::<f64>() / idx.len() as f64
        };
        let (winner, _) = members
            .iter()
            .map(|(c, idx)| (*c, (idx.len(), mean_cos(idx))))
            .fold(None, |best: Option<(&CharacterId, (usize, f64))>, cand| match best {
                None => Some(cand),
                Some(b) if cand.1 .0 > b.1 .0 || (cand.1 .0 == b.1 .0 && cand.1 .1 > b.1 .1) => Some(cand),
                keep => keep,
            })
            .expect("non-empty cluster");
        if bound.insert(winner.clone(), j).is_some() {
            return Err(IdentityError::BindingConflict(winner.clone()));
        }
        let norm = centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
        anchors.push(VoiceprintAnchor {
            character_id: winner.clone(),
            centroid: centroid.iter().map(|x| (x / norm) as f32).collect(),
            member_count,
        });
    }
    if let Some(missing) = distinct.iter().find(|c| !bound.contains_key(**c)) {
        return Err(IdentityError::BindingConflict((*missing).clone()));
    }
    anchors.sort_by(|a, b| a.character_id.cmp(&b.character_id));
    Ok(anchors)
}
