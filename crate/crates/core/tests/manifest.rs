mod common;

use std::cmp::Ordering;

use cineforge_core::manifest::{
    content_hash, parse_manifest, to_json, CharacterRecord, FrameRate, GlobalShotRef, Shot, SourceCollection,
    SourceManifest,
};
use proptest::prelude::*;

fn basis(dim: usize, i: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[i % dim] = 1.0;
    v
}

fn manifest(id: &str, durations: &[u32], dim: usize) -> SourceManifest {
    let mut t = 0.0;
    let shots = durations
        .iter()
        .enumerate()
        .map(|(i, &ms)| {
            let start = t;
            t += f64::from(ms) / 1000.0;
            Shot {
                shot_id: i as u32,
                start,
                end: t,
                description: (i % 2 == 0).then(|| format!("shot {i}")),
                keyframe_embedding: basis(dim, i),
                detections: vec![],
                dialogue_refs: vec![],
            }
        })
        .collect();
    SourceManifest {
        schema_version: "1".into(),
        source_id: id.into(),
        title: id.to_uppercase(),
        frame_rate: FrameRate { num: 24000, den: 1001 },
        embedding_dim: dim,
        shots,
        characters: vec![CharacterRecord {
            character_id: "c".into(),
            name: "C".into(),
            face_anchor_embeddings: vec![basis(dim, 0)],
            body_anchor_embeddings: vec![],
            bio: None,
        }],
        dialogue_track: vec![],
    }
}

fn shot_ref() -> impl Strategy<Value = GlobalShotRef> {
    (0u32..4, prop::sample::select(vec!["a", "b", "c"]), 0u32..6).prop_map(|(r, s, i)| GlobalShotRef {
        source_rank: r,
        source_id: s.into(),
        shot_id: i,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn valid_manifests_round_trip(durations in prop::collection::vec(1u32..60_000, 1..20), dim in 1usize..16) {
        let m = manifest("src", &durations, dim);
        let text = to_json(&m);
        let (back, warnings) = parse_manifest(&text).unwrap();
        prop_assert!(warnings.is_empty());
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(content_hash(&back), content_hash(&m));
    }

    #[test]
    fn shot_ref_order_is_total(a in shot_ref(), b in shot_ref(), c in shot_ref()) {
        prop_assert_eq!(a.cmp(&b), b.cmp(&a).reverse());
        prop_assert_eq!(a.cmp(&b) == Ordering::Equal, a == b);
        if a <= b && b <= c {
            prop_assert!(a <= c);
        }
        if a.source_rank < b.source_rank {
            prop_assert!(a < b);
        }
    }
}

#[test]
fn fixtures_validate_cleanly() {
    for name in ["shawfix", "greenfix"] {
        let text = std::fs::read_to_string(common::fixture_dir().join(format!("{name}.json"))).unwrap();
        let (_, warnings) = parse_manifest(&text).unwrap();
        assert!(warnings.is_empty(), "{name}: {warnings:?}");
    }
}

#[test]
fn every_violation_is_reported() {
    let mut m = manifest("src", &[1000, 1000, 1000], 4);
    m.shots[1].start = 0.5;
    m.shots[2].keyframe_embedding = vec![2.0, 0.0, 0.0, 0.0];
    m.characters[0].face_anchor_embeddings.clear();
    let err = parse_manifest(&to_json(&m)).unwrap_err();
    let names: Vec<&str> = err.violations().iter().map(|v| v.invariant).collect();
    for expected in ["shot.ordering", "embedding.unit_norm", "character.has_anchor"] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn near_unit_embeddings_are_repaired_with_warning() {
    let mut m = manifest("src", &[1000], 2);
    m.shots[0].keyframe_embedding = vec![1.0005, 0.0];
    let (back, warnings) = parse_manifest(&to_json(&m)).unwrap();
    assert_eq!(warnings.len(), 1);
    assert!((back.shots[0].keyframe_embedding[0] - 1.0).abs() < 1e-6);
}

#[test]
fn unknown_fields_point_at_their_path() {
    let text = to_json(&manifest("src", &[1000], 2)).replacen("\"shot_id\"", "\"shot_idx\"", 1);
    let err = parse_manifest(&text).unwrap_err().to_string();
    assert!(err.contains("shots[0]"), "{err}");
}

#[test]
fn collection_rejects_duplicates_and_mixed_dimensions() {
    assert!(SourceCollection::new(vec![]).is_err());
    assert!(SourceCollection::new(vec![manifest("a", &[1000], 2), manifest("a", &[1000], 2)]).is_err());
    assert!(SourceCollection::new(vec![manifest("a", &[1000], 2), manifest("b", &[1000], 3)]).is_err());
    let c = SourceCollection::new(vec![manifest("b", &[1000, 500], 2), manifest("a", &[1000], 2)]).unwrap();
    let late = c.parse_ref("a:0").unwrap();
    let early = c.parse_ref("b:1").unwrap();
    assert!(early < late, "insertion rank dominates");
    assert!(c.parse_ref("a:1").is_err());
    assert!(c.parse_ref("zzz:0").is_err());
}
