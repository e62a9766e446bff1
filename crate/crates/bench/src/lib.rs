//! Seeded workload generators shared by the criterion benches.

use std::collections::BTreeSet;

use cineforge_core::manifest::{parse_manifest, CharacterRecord, Detection, GlobalShotRef, SourceManifest};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shot(i: u32) -> GlobalShotRef {
    GlobalShotRef { source_rank: 0, source_id: "bench".into(), shot_id: i }
}

/// A shuffled prediction of `n` shots with durations in [1, 60] s, against a
/// ground-truth order over the same shots plus a few extras.
pub fn ordering(n: usize, seed: u64) -> (Vec<(GlobalShotRef, f64)>, Vec<GlobalShotRef>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<u32> = (0..n as u32).collect();
    ids.shuffle(&mut rng);
    let pred = ids.iter().map(|&i| (shot(i), rng.random_range(1.0..=60.0))).collect();
    let mut gt: Vec<u32> = (0..n as u32 + n as u32 / 4).collect();
    gt.shuffle(&mut rng);
    (pred, gt.into_iter().map(shot).collect())
}

/// Two random shot sets drawn from `0..universe`.
pub fn shot_sets(size: usize, universe: u32, seed: u64) -> (BTreeSet<GlobalShotRef>, BTreeSet<GlobalShotRef>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || (0..size).map(|_| shot(rng.random_range(0..universe))).collect();
    (draw(), draw())
}

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A roster of `characters` with two face and body anchors each, and
/// `detections` trajectory members, a third of them body-only.
pub fn identity_instance(
    characters: usize,
    detections: usize,
    dim: usize,
    seed: u64,
) -> (Vec<CharacterRecord>, Vec<Detection>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roster = (0..characters)
        .map(|i| CharacterRecord {
            character_id: format!("c{i:03}"),
            name: format!("Character {i}"),
            face_anchor_embeddings: (0..2).map(|_| vector(&mut rng, dim)).collect(),
            body_anchor_embeddings: (0..2).map(|_| vector(&mut rng, dim)).collect(),
            bio: None,
        })
        .collect();
    let dets = (0..detections)
        .map(|i| Detection {
            detection_id: format!("d{i}"),
            shot_id: 0,
            timestamp: i as f64,
            face_embedding: (i % 3 != 0).then(|| vector(&mut rng, dim)),
            body_embedding: Some(vector(&mut rng, dim)),
            lip_activity: None,
        })
        .collect();
    (roster, dets)
}

/// `per_cluster` noisy samples around each of `k` random centres.
pub fn voice_points(k: usize, per_cluster: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut points = Vec::with_capacity(k * per_cluster);
    for i in 0..k * per_cluster {
        let c = &centres[i % k];
        points.push(c.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect());
    }
    points
}

/// The 12-shot fixture film used throughout the test suites.
pub fn fixture_manifest() -> SourceManifest {
    let text = include_str!("../../core/tests/fixtures/shawfix.json");
    parse_manifest(text).expect("fixture is valid").0
}
