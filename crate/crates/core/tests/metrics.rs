mod common;

use std::collections::BTreeSet;

use cineforge_core::manifest::GlobalShotRef;
use cineforge_core::metrics::{retrieval_prf, svc, tcs, TcsVariant};
use cineforge_core::memory::ShotSummary;
use cineforge_core::provider::{ProviderError, TableEmbedder, TextEmbeddingProvider};
use proptest::prelude::*;

fn r(i: u32) -> GlobalShotRef {
    GlobalShotRef { source_rank: 0, source_id: "s".into(), shot_id: i }
}

/// A random subsequence-free arrangement: distinct ids with positive durations.
fn pred_and_gt() -> impl Strategy<Value = (Vec<(u32, f64)>, Vec<u32>)> {
    (1usize..=10).prop_flat_map(|n| {
        (
            Just((0..n as u32).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(1.0f64..60.0, n),
            prop::collection::vec(0u32..14, 0..10),
        )
            .prop_map(|(ids, durs, extra)| {
                let pred: Vec<(u32, f64)> = ids.iter().copied().zip(durs).collect();
                let mut gt: Vec<u32> = pred.iter().map(|p| p.0).collect();
                gt.extend(extra);
                let mut seen = BTreeSet::new();
                gt.retain(|x| seen.insert(*x));
                (pred, gt)
            })
            .prop_flat_map(|(pred, gt)| (Just(pred), Just(gt).prop_shuffle()))
    })
}

fn as_refs(pred: &[(u32, f64)]) -> Vec<(GlobalShotRef, f64)> {
    pred.iter().map(|(i, d)| (r(*i), *d)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tcs_matches_subset_enumeration((pred, gt) in pred_and_gt()) {
        let gt_refs: Vec<GlobalShotRef> = gt.iter().map(|&i| r(i)).collect();
        let fast = tcs(&as_refs(&pred), &gt_refs, TcsVariant::Duration).unwrap();
        let slow = common::tcs_brute(&pred, &gt);
        prop_assert!((fast - slow).abs() < 1e-12, "dp {fast} vs brute {slow}");
        prop_assert!((0.0..=1.0).contains(&fast));
    }

    #[test]
    fn tcs_is_scale_invariant((pred, gt) in pred_and_gt(), k in 0.01f64..100.0) {
        let gt_refs: Vec<GlobalShotRef> = gt.iter().map(|&i| r(i)).collect();
        let scaled: Vec<(u32, f64)> = pred.iter().map(|(i, d)| (*i, d * k)).collect();
        let a = tcs(&as_refs(&pred), &gt_refs, TcsVariant::Duration).unwrap();
        let b = tcs(&as_refs(&scaled), &gt_refs, TcsVariant::Duration).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn tcs_is_one_iff_prediction_is_ordered((pred, gt) in pred_and_gt()) {
        let gt_refs: Vec<GlobalShotRef> = gt.iter().map(|&i| r(i)).collect();
        let v = tcs(&as_refs(&pred), &gt_refs, TcsVariant::Duration).unwrap();
        let mut it = gt.iter();
        let ordered = pred.iter().all(|(id, _)| it.any(|g| g == id));
        prop_assert_eq!(v == 1.0, ordered);
    }

    #[test]
    fn prf_matches_set_arithmetic(
        pred in prop::collection::btree_set(0u32..20, 0..12),
        gt in prop::collection::btree_set(0u32..20, 0..12),
    ) {
        let p: BTreeSet<GlobalShotRef> = pred.iter().map(|&i| r(i)).collect();
        let g: BTreeSet<GlobalShotRef> = gt.iter().map(|&i| r(i)).collect();
        let got = retrieval_prf(&p, &g);
        let hit = pred.intersection(&gt).count() as f64;
        let precision = if pred.is_empty() { if gt.is_empty() { 1.0 } else { 0.0 } } else { hit / pred.len() as f64 };
        let recall = if gt.is_empty() { 1.0 } else { hit / gt.len() as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        prop_assert_eq!(got.precision, precision);
        prop_assert_eq!(got.recall, recall);
        prop_assert_eq!(got.f1, f1);
    }
}

#[test]
fn tcs_reversed_equal_durations_is_one_over_n() {
    for n in 1..=8u32 {
        let gt: Vec<GlobalShotRef> = (0..n).map(r).collect();
        let pred: Vec<(GlobalShotRef, f64)> = (0..n).rev().map(|i| (r(i), 3.0)).collect();
        let v = tcs(&pred, &gt, TcsVariant::Duration).unwrap();
        assert!((v - 1.0 / n as f64).abs() < 1e-12);
    }
}

#[test]
fn prf_worked_example() {
    let p = retrieval_prf(&[2, 3, 5].map(r).into(), &[1, 2, 3, 4].map(r).into());
    assert_eq!(format!("{:.4} {:.4} {:.4}", p.precision, p.recall, p.f1), "0.6667 0.5000 0.5714");
}

struct Orthogonal;

impl TextEmbeddingProvider for Orthogonal {
    fn embed(&self, _: &str) -> Result<Vec<f32>, ProviderError> {
        Ok(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    }
}

fn summaries(n: usize) -> Vec<ShotSummary> {
    (0..n)
        .map(|i| ShotSummary {
            shot_id: i as u32,
            text: format!("shot {i}"),
            characters_present: vec![],
            dialogue_digest: String::new(),
        })
        .collect()
}

#[test]
fn svc_self_similarity_and_orthogonality() {
    let m = common::fixture("shawfix");
    let sums = summaries(m.shots.len());
    let own = TableEmbedder {
        table: sums.iter().zip(&m.shots).map(|(s, shot)| (s.text.clone(), shot.keyframe_embedding.clone())).collect(),
    };
    assert!((svc(&sums, &m.shots, &own).unwrap() - 1.0).abs() < 1e-6);

    // Fixture keyframes live on axes 0, 3 and 6 plus small noise; zero the
    // last axis so the stub is exactly orthogonal.
    let mut shots = m.shots.clone();
    for s in &mut shots {
        s.keyframe_embedding[7] = 0.0;
    }
    assert_eq!(svc(&sums, &shots, &Orthogonal).unwrap(), 0.0);
}

#[test]
fn svc_three_shot_hand_computed() {
    let m = common::fixture("shawfix");
    let mut shots = m.shots[..3].to_vec();
    shots[0].keyframe_embedding = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    shots[1].keyframe_embedding = vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    shots[2].keyframe_embedding = vec![0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let sums = summaries(3);
    let e = TableEmbedder {
        table: [
            ("shot 0".to_string(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("shot 1".to_string(), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ("shot 2".to_string(), vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ]
        .into(),
    };
    // cosines: 1, 0, 0.8
    assert!((svc(&sums, &shots, &e).unwrap() - 0.6).abs() < 1e-6);
}

#[test]
fn svc_rejects_dimension_mismatch() {
    let m = common::fixture("shawfix");
    let sums = summaries(1);
    let e = TableEmbedder { table: [("shot 0".to_string(), vec![1.0, 0.0])].into() };
    assert!(svc(&sums, &m.shots[..1], &e).is_err());
}
