mod common;

use cineforge_core::environment::NullRecorder;
use cineforge_core::identity::{analyze, IdentityConfig};
use cineforge_core::memory::{build_memory, FixedBoundary, KeyframeBoundary, Level, MemoryBank, QuerySpec};
use cineforge_core::prompts::{payload, SummarizeShotInput, Task};
use cineforge_core::provider::{HeuristicProvider, RecordingProvider, ReplayProvider};
use proptest::prelude::*;

fn recorded_memory() -> (cineforge_core::NarrativeMemory, Vec<cineforge_core::provider::TranscriptEntry>) {
    let m = common::fixture("shawfix");
    let id = analyze(&m, &IdentityConfig::default());
    let rec = RecordingProvider::new(HeuristicProvider);
    let mem = build_memory(&m, &id, &rec, &KeyframeBoundary { threshold: 0.5 }, &mut NullRecorder).unwrap();
    (mem, rec.entries())
}

#[test]
fn every_shot_prompt_buffers_the_preceding_ten() {
    let (_, entries) = recorded_memory();
    let prompts: Vec<SummarizeShotInput> = entries
        .iter()
        .filter(|e| e.request.task() == Some(Task::SummarizeShot.name()))
        .map(|e| payload(&e.request).unwrap())
        .collect();
    assert_eq!(prompts.len(), 12);
    for (t, p) in prompts.iter().enumerate() {
        assert_eq!(p.shot.shot_id as usize, t);
        assert_eq!(p.buffer.len(), t.min(10), "shot {t}");
        let ids: Vec<usize> = p.buffer.iter().map(|b| b.shot_id as usize).collect();
        let want: Vec<usize> = (t.saturating_sub(10)..t).collect();
        assert_eq!(ids, want, "buffer of shot {t} must be the immediately preceding shots, oldest first");
    }
}

#[test]
fn fixture_events_follow_scene_cuts() {
    let (mem, _) = recorded_memory();
    let spans: Vec<(u32, u32)> = mem.events.iter().map(|e| (e.first_shot, e.last_shot)).collect();
    assert_eq!(spans, [(0, 3), (4, 7), (8, 11)]);
    assert!(mem.shot_summaries[7].text.contains("birthday cake"));
    assert_eq!(mem.shot_summaries[7].characters_present, ["andy", "red"]);
}

#[test]
fn replayed_memory_matches_golden_transcript() {
    let (mem, entries) = recorded_memory();
    let transcript: String =
        entries.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    common::check_golden("shawfix_memory.transcript.jsonl", &transcript).unwrap();
    common::check_golden("shawfix.memory.json", &(serde_json::to_string_pretty(&mem).unwrap() + "\n")).unwrap();

    let replay = ReplayProvider::from_file(&common::golden_dir().join("shawfix_memory.transcript.jsonl")).unwrap();
    let m = common::fixture("shawfix");
    let id = analyze(&m, &IdentityConfig::default());
    let again = build_memory(&m, &id, &replay, &KeyframeBoundary { threshold: 0.5 }, &mut NullRecorder).unwrap();
    assert_eq!(again, mem);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn events_partition_shots(cuts in prop::collection::btree_set(1usize..12, 0..11)) {
        let m = common::fixture("shawfix");
        let id = analyze(&m, &IdentityConfig::default());
        let cuts: Vec<usize> = cuts.into_iter().collect();
        let mem = build_memory(&m, &id, &HeuristicProvider, &FixedBoundary(cuts.clone()), &mut NullRecorder).unwrap();
        prop_assert_eq!(mem.events.len(), cuts.len() + 1);
        let mut next = 0u32;
        for e in &mem.events {
            prop_assert_eq!(e.first_shot, next);
            prop_assert!(e.last_shot >= e.first_shot);
            next = e.last_shot + 1;
        }
        prop_assert_eq!(next as usize, m.shots.len());
    }

    #[test]
    fn adding_terms_never_widens_results(
        terms in prop::collection::vec(prop::sample::select(vec!["andy", "red", "the", "escape", "cake", "roof", "norton", "says"]), 0..3),
        extra in prop::sample::select(vec!["andy", "the", "tunnel", "prison", "zzz"]),
        characters in prop::collection::vec(prop::sample::select(vec!["andy", "red", "norton"]), 0..2),
    ) {
        let (mem, _) = recorded_memory();
        let bank = MemoryBank::from_memories(vec![mem]);
        for level in [Level::Event, Level::Shot] {
            let q = QuerySpec { terms: terms.iter().map(|s| s.to_string()).collect(), characters: characters.iter().map(|s| s.to_string()).collect(), ..Default::default() };
            let mut narrower = q.clone();
            narrower.terms.push(extra.to_string());
            let wide = bank.query(level, &q).unwrap();
            let narrow = bank.query(level, &narrower).unwrap();
            prop_assert!(narrow.iter().all(|r| wide.contains(r)));
        }
    }
}

#[test]
fn invalid_boundaries_are_rejected() {
    let m = common::fixture("shawfix");
    let id = analyze(&m, &IdentityConfig::default());
    for bad in [vec![0], vec![12], vec![3, 3]] {
        assert!(build_memory(&m, &id, &HeuristicProvider, &FixedBoundary(bad), &mut NullRecorder).is_err());
    }
}
