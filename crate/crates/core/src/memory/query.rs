//! Deterministic lookup over a narrative memory: case-folded substring match
//! over summary text plus set containment over character ids.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{MemoryBank, NarrativeMemory};
use crate::manifest::{CharacterId, GlobalShotRef, ShotId, SourceId};

/// Memory hierarchy level, ordered top-down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Story,
    Character,
    Event,
    Shot,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Story, Level::Character, Level::Event, Level::Shot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Story => "story",
            Level::Character => "character",
            Level::Event => "event",
            Level::Shot => "shot",
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Inclusive shot range within one source.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShotSpan {
    pub source_id: SourceId,
    pub first: ShotId,
    pub last: ShotId,
}

impl ShotSpan {
    fn overlaps(&self, first: ShotId, last: ShotId) -> bool {
        self.first <= last && first <= self.last
    }
}

/// What a proposal asks memory for. Empty lists impose no constraint.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuerySpec {
    #[serde(default)]
    pub sources: Vec<String>,
    #[serde(default)]
    pub characters: Vec<String>,
    #[serde(default)]
    pub terms: Vec<String>,
    #[serde(default)]
    pub scope: Vec<ShotSpan>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum EvidenceRef {
    Story { source_id: SourceId },
    Character { source_id: SourceId, character_id: CharacterId },
    Event { source_id: SourceId, event_id: u32 },
    Shot { shot: GlobalShotRef },
}

impl EvidenceRef {
    pub fn level(&self) -> Level {
        match self {
            EvidenceRef::Story { .. } => Level::Story,
            EvidenceRef::Character { .. } => Level::Character,
            EvidenceRef::Event { .. } => Level::Event,
            EvidenceRef::Shot { .. } => Level::Shot,
        }
    }

    pub fn source_id(&self) -> &str {
        match self {
            EvidenceRef::Story { source_id }
            | EvidenceRef::Character { source_id, .. }
            | EvidenceRef::Event { source_id, .. } => source_id,
            EvidenceRef::Shot { shot } => &shot.source_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("unknown character `{0}`")]
    UnknownCharacter(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
}

fn contains_folded(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

impl NarrativeMemory {
    /// Resolves a character by id, full name or a single name token, case-insensitively.
    pub fn resolve_character(&self, name: &str) -> Option<&CharacterId> {
        let want = name.trim().to_lowercase();
        if want.is_empty() {
            return None;
        }
        let exact = self.profiles.iter().find(|p| {
            p.character_id.to_lowercase() == want || p.name.to_lowercase() == want
        });
        exact
            .or_else(|| {
                self.profiles.iter().find(|p| {
                    p.name
                        .split_whitespace()
                        .any(|tok| tok.to_lowercase() == want)
                })
            })
            .map(|p| &p.character_id)
    }

    pub fn matches_source(&self, name: &str) -> bool {
        let want = name.trim().to_lowercase();
        self.source_id.to_lowercase() == want || self.title.to_lowercase() == want
    }

    fn required_characters(&self, q: &QuerySpec) -> Result<BTreeSet<&CharacterId>, QueryError> {
        q.characters
            .iter()
            .map(|c| {
                self.resolve_character(c)
                    .ok_or_else(|| QueryError::UnknownCharacter(c.clone()))
            })
            .collect()
    }

    fn in_scope(&self, q: &QuerySpec, first: ShotId, last: ShotId) -> bool {
        q.scope.is_empty()
            || q.scope
                .iter()
                .any(|s| s.source_id == self.source_id && s.overlaps(first, last))
    }

    /// Queries one source's memory. `rank` is the source's collection rank.
    pub fn query(&self, rank: u32, level: Level, q: &QuerySpec) -> Result<Vec<EvidenceRef>, QueryError> {
        let source_id = self.source_id.clone();
        match level {
            Level::Story => {
                let hit = q.terms.is_empty() || q.terms.iter().any(|t| contains_folded(&self.story, t));
                Ok(if hit { vec![EvidenceRef::Story { source_id }] } else { Vec::new() })
            }
            Level::Character => {
                let mut ids: Vec<&CharacterId> = Vec::new();
                for c in &q.characters {
                    if let Some(id) = self.resolve_character(c) {
                        if !ids.contains(&id) {
                            ids.push(id);
                        }
                    }
                }
                Ok(self
                    .profiles
                    .iter()
                    .filter(|p| ids.contains(&&p.character_id))
                    .map(|p| EvidenceRef::Character {
                        source_id: source_id.clone(),
                        character_id: p.character_id.clone(),
                    })
                    .collect())
            }
            Level::Event => {
                let required = self.required_characters(q)?;
                Ok(self
                    .events
                    .iter()
                    .filter(|e| self.in_scope(q, e.first_shot, e.last_shot))
                    .filter(|e| q.terms.iter().all(|t| contains_folded(&e.summary, t)))
                    .filter(|e| {
                        let present = self.event_characters(e.event_id);
                        required.iter().all(|c| present.contains(*c))
                    })
                    .map(|e| EvidenceRef::Event {
                        source_id: source_id.clone(),
                        event_id: e.event_id,
                    })
                    .collect())
            }
            Level::Shot => {
                let required = self.required_characters(q)?;
                Ok(self
                    .shot_summaries
                    .iter()
                    .filter(|s| self.in_scope(q, s.shot_id, s.shot_id))
                    .filter(|s| q.terms.iter().all(|t| contains_folded(&s.text, t)))
                    .filter(|s| required.iter().all(|c| s.characters_present.contains(*c)))
                    .map(|s| EvidenceRef::Shot {
                        shot: GlobalShotRef {
                            source_rank: rank,
                            source_id: source_id.clone(),
                            shot_id: s.shot_id,
                        },
                    })
                    .collect())
            }
        }
    }
}

impl MemoryBank {
    /// Queries every selected source in rank order.
    ///
    /// A character name unknown to one source only removes that source from
    /// the result; it is an error only when no selected source knows it.
    pub fn query(&self, level: Level, q: &QuerySpec) -> Result<Vec<EvidenceRef>, QueryError> {
        let selected: Vec<usize> = if q.sources.is_empty() {
            (0..self.entries.len()).collect()
        } else {
            let mut picked = Vec::new();
            for name in &q.sources {
                let i = self
                    .entries
                    .iter()
                    .position(|e| e.memory.matches_source(name))
                    .ok_or_else(|| QueryError::UnknownSource(name.clone()))?;
                if !picked.contains(&i) {
                    picked.push(i);
                }
            }
            picked.sort_unstable();
            picked
        };
        let mut out = Vec::new();
        let mut first_err = None;
        let mut answered = 0usize;
        for i in &selected {
            let e = &self.entries[*i];
            match e.memory.query(e.rank, level, q) {
                Ok(refs) => {
                    answered += 1;
                    out.extend(refs);
                }
                Err(err) => {
                    first_err.get_or_insert(err);
                }
            }
        }
        match first_err {
            Some(err) if answered == 0 => Err(err),
            _ => Ok(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::tests::toy_memory;

    #[test]
    fn vacuous_event_query_returns_all_events() {
        let m = toy_memory();
        let got = m.query(0, Level::Event, &QuerySpec::default()).unwrap();
        assert_eq!(got.len(), m.events.len());
    }

    #[test]
    fn absent_character_profile_query_is_empty() {
        let m = toy_memory();
        let q = QuerySpec { characters: vec!["Dobby".into()], ..Default::default() };
        assert!(m.query(0, Level::Character, &q).unwrap().is_empty());
        assert_eq!(
            m.query(0, Level::Shot, &q),
            Err(QueryError::UnknownCharacter("Dobby".into()))
        );
    }

    #[test]
    fn shot_query_needs_all_terms_and_characters() {
        let m = toy_memory();
        let q = QuerySpec {
            characters: vec!["Andy".into()],
            terms: vec!["CAKE".into()],
            ..Default::default()
        };
        let got = m.query(0, Level::Shot, &q).unwrap();
        assert_eq!(got.len(), 1);
        assert!(matches!(&got[0], EvidenceRef::Shot { shot } if shot.shot_id == 2));
    }

    #[test]
    fn character_resolution_accepts_id_name_and_token() {
        let m = toy_memory();
        assert_eq!(m.resolve_character("andy").map(String::as_str), Some("andy"));
        assert_eq!(m.resolve_character("Andy Dufresne").map(String::as_str), Some("andy"));
        assert_eq!(m.resolve_character("dufresne").map(String::as_str), Some("andy"));
        assert_eq!(m.resolve_character("Dobby"), None);
    }

    #[test]
    fn story_matches_any_term() {
        let m = toy_memory();
        let q = QuerySpec { terms: vec!["dragon".into(), "cake".into()], ..Default::default() };
        assert_eq!(m.query(0, Level::Story, &q).unwrap().len(), 1);
        let q = QuerySpec { terms: vec!["dragon".into()], ..Default::default() };
        assert!(m.query(0, Level::Story, &q).unwrap().is_empty());
    }

    #[test]
    fn scope_restricts_shots() {
        let m = toy_memory();
        let q = QuerySpec {
            scope: vec![ShotSpan { source_id: m.source_id.clone(), first: 1, last: 1 }],
            ..Default::default()
        };
        let got = m.query(0, Level::Shot, &q).unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn bank_reports_unknown_source() {
        let bank = MemoryBank::from_memories(vec![toy_memory()]);
        let q = QuerySpec { sources: vec!["Casablanca".into()], ..Default::default() };
        assert_eq!(
            bank.query(Level::Story, &q),
            Err(QueryError::UnknownSource("Casablanca".into()))
        );
    }
}
