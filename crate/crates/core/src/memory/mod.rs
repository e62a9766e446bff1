//! Hierarchical narrative memory: context-buffered shot summaries, events,
//! a story synopsis and character profiles, plus lookup over all four levels.

mod events;
mod query;
mod store;

use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{exchange, ExchangeError, LogError, MessageBuffer, MessageKind, Recorder, Role};
use crate::identity::IdentityReport;
use crate::manifest::{CharacterId, CharacterRecord, ShotId, SourceCollection, SourceId, SourceManifest};
use crate::prompts::{
    self, AbstractStoryInput, BuildProfileInput, DialogueInfo, EventSpan, EventText, IndexedSource,
    MemoryIndex, NamedCharacter, ShotInfo, ShotText, SummarizeEventInput, SummarizeShotInput,
    Synopsis, Task,
};
use crate::provider::CompletionProvider;

pub use events::{ranges_from_cuts, EventBoundaryProvider, FixedBoundary, KeyframeBoundary};
pub use query::{EvidenceRef, Level, QueryError, QuerySpec, ShotSpan};
pub use store::{load_memory, memory_path, save_memory, MemoryDocument, MEMORY_SCHEMA_VERSION};

/// Shots of preceding context handed to each shot summary.
pub const BUFFER_SIZE: usize = 10;

/// Profile text for characters who appear in no analyzed shot.
pub const ABSENT_PROFILE: &str = "not present in analyzed footage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSummary {
    pub shot_id: ShotId,
    pub text: String,
    pub characters_present: Vec<CharacterId>,
    pub dialogue_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub event_id: u32,
    pub first_shot: ShotId,
    pub last_shot: ShotId,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterProfile {
    pub character_id: CharacterId,
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrativeMemory {
    pub source_id: SourceId,
    pub title: String,
    pub shot_summaries: Vec<ShotSummary>,
    pub events: Vec<Event>,
    pub story: String,
    /// One profile per roster character, in roster order.
    pub profiles: Vec<CharacterProfile>,
}

impl NarrativeMemory {
    /// Union of the characters present in an event's member shots.
    pub fn event_characters(&self, event_id: u32) -> BTreeSet<&CharacterId> {
        let Some(e) = self.events.iter().find(|e| e.event_id == event_id) else {
            return BTreeSet::new();
        };
        self.shot_summaries[e.first_shot as usize..=e.last_shot as usize]
            .iter()
            .flat_map(|s| s.characters_present.iter())
            .collect()
    }

    pub fn profile(&self, character_id: &str) -> Option<&CharacterProfile> {
        self.profiles.iter().find(|p| p.character_id == character_id)
    }

    /// Checks the structural invariants of a memory document.
    pub fn check(&self) -> Result<(), String> {
        for (i, s) in self.shot_summaries.iter().enumerate() {
            if s.shot_id as usize != i {
                return Err(format!("summary {i} carries shot id {}", s.shot_id));
            }
        }
        if self.events.is_empty() {
            return Err("no events".into());
        }
        let mut next = 0u32;
        for (i, e) in self.events.iter().enumerate() {
            if e.event_id as usize != i || e.first_shot != next || e.last_shot < e.first_shot {
                return Err(format!("event {i} breaks the shot partition"));
            }
            if e.summary.trim().is_empty() {
                return Err(format!("event {i} has an empty summary"));
            }
            next = e.last_shot + 1;
        }
        if next as usize != self.shot_summaries.len() {
            return Err("events do not cover every shot".into());
        }
        if self.story.trim().is_empty() {
            return Err("empty story".into());
        }
        Ok(())
    }
}

/// The sliding window of preceding shot records.
#[derive(Debug, Clone)]
pub struct ContextBuffer {
    capacity: usize,
    window: VecDeque<ShotInfo>,
}

impl Default for ContextBuffer {
    fn default() -> Self {
        Self::with_capacity(BUFFER_SIZE)
    }
}

impl ContextBuffer {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            capacity,
            window: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, info: ShotInfo) {
        self.window.push_back(info);
        while self.window.len() > self.capacity {
            self.window.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn records(&self) -> Vec<ShotInfo> {
        self.window.iter().cloned().collect()
    }
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("{stage} failed at {position}: {source}")]
    Stage {
        stage: &'static str,
        position: String,
        #[source]
        source: ExchangeError,
    },
    #[error("{stage} returned an empty response at {position}")]
    EmptyResponse { stage: &'static str, position: String },
    #[error("group_events: invalid boundary output: {0}")]
    InvalidCuts(String),
    #[error("abstract_story needs at least one event")]
    NoEvents,
    #[error("build_profiles needs a non-empty roster")]
    EmptyRoster,
    #[error("build_profiles failed for {}", .0.iter().map(|(c, e)| format!("{c} ({e})")).collect::<Vec<_>>().join(", "))]
    Profiles(Vec<(CharacterId, String)>),
    #[error("memory for `{0}` is inconsistent: {1}")]
    Inconsistent(SourceId, String),
    #[error("memory document {path}: {message}")]
    Store { path: String, message: String },
    #[error(transparent)]
    Log(#[from] LogError),
}

impl MemoryError {
    /// True when the failure came from a provider timing out.
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            MemoryError::Stage {
                source: ExchangeError::Provider(crate::provider::ProviderError::Timeout(_)),
                ..
            }
        )
    }
}

fn ask(
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
    task: Task,
    input: &impl Serialize,
    position: String,
) -> Result<String, MemoryError> {
    let stage = task.name();
    let req = prompts::request(task, input);
    let text = match exchange(provider, rec, Role::Script, &req) {
        Ok(t) => t,
        Err(ExchangeError::Log(e)) => return Err(e.into()),
        Err(source) => return Err(MemoryError::Stage { stage, position, source }),
    };
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(MemoryError::EmptyResponse { stage, position });
    }
    Ok(text)
}

fn roster_names(roster: &[CharacterRecord]) -> HashMap<&str, &str> {
    roster
        .iter()
        .map(|c| (c.character_id.as_str(), c.name.as_str()))
        .collect()
}

/// The record the summarizer sees for shot `index`, built from identity results.
pub fn shot_info(manifest: &SourceManifest, identity: &IdentityReport, index: usize) -> ShotInfo {
    let shot = &manifest.shots[index];
    let names = roster_names(&manifest.characters);
    let characters = identity
        .shot_characters
        .get(index)
        .map(|ids| {
            ids.iter()
                .map(|id| NamedCharacter {
                    id: id.clone(),
                    name: names.get(id.as_str()).copied().unwrap_or(id).to_string(),
                })
                .collect()
        })
        .unwrap_or_default();
    let dialogue = identity
        .dialogue
        .iter()
        .filter(|l| l.shot_id == shot.shot_id)
        .map(|l| DialogueInfo {
            speaker: l
                .speaker_id
                .as_deref()
                .map(|id| names.get(id).copied().unwrap_or(id).to_string()),
            text: l.text.clone(),
        })
        .collect();
    ShotInfo {
        shot_id: shot.shot_id,
        start: shot.start,
        end: shot.end,
        visual_ref: format!("{}:{}", manifest.source_id, shot.shot_id),
        description: shot.description.clone(),
        characters,
        dialogue,
    }
}

fn dialogue_digest(info: &ShotInfo) -> String {
    info.dialogue
        .iter()
        .map(|d| format!("{}: {}", d.speaker.as_deref().unwrap_or("Unknown"), d.text))
        .collect::<Vec<_>>()
        .join(" / ")
}

/// Summarizes one shot given the preceding-shot buffer.
pub fn summarize_shot(
    source_title: &str,
    info: &ShotInfo,
    buffer: &ContextBuffer,
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<ShotSummary, MemoryError> {
    let input = SummarizeShotInput {
        source_title: source_title.to_string(),
        shot: info.clone(),
        buffer: buffer.records(),
    };
    let text = ask(provider, rec, Task::SummarizeShot, &input, format!("shot {}", info.shot_id))?;
    Ok(ShotSummary {
        shot_id: info.shot_id,
        text,
        characters_present: info.characters.iter().map(|c| c.id.clone()).collect(),
        dialogue_digest: dialogue_digest(info),
    })
}

/// Segments summaries into events and summarizes each event.
pub fn group_events(
    manifest: &SourceManifest,
    summaries: &[ShotSummary],
    boundary: &dyn EventBoundaryProvider,
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<Vec<Event>, MemoryError> {
    let cuts = boundary.cuts(manifest, summaries).map_err(MemoryError::InvalidCuts)?;
    let ranges = ranges_from_cuts(summaries.len(), &cuts).map_err(MemoryError::InvalidCuts)?;
    rec.record(
        Role::Script,
        MessageKind::Integration,
        serde_json::json!({ "stage": "event_boundaries", "source_id": manifest.source_id, "cuts": cuts }),
    )?;
    let mut events = Vec::with_capacity(ranges.len());
    for (i, (first, last)) in ranges.into_iter().enumerate() {
        let event_id = i as u32;
        let input = SummarizeEventInput {
            source_title: manifest.title.clone(),
            event_id,
            first_shot: first,
            last_shot: last,
            shots: summaries[first as usize..=last as usize]
                .iter()
                .map(|s| ShotText { shot_id: s.shot_id, text: s.text.clone() })
                .collect(),
        };
        let summary = ask(provider, rec, Task::SummarizeEvent, &input, format!("event {event_id}"))?;
        events.push(Event { event_id, first_shot: first, last_shot: last, summary });
    }
    Ok(events)
}

/// Abstracts the story synopsis from all event summaries in order.
pub fn abstract_story(
    source_title: &str,
    events: &[Event],
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<String, MemoryError> {
    if events.is_empty() {
        return Err(MemoryError::NoEvents);
    }
    let input = AbstractStoryInput {
        source_title: source_title.to_string(),
        events: events
            .iter()
            .map(|e| EventText { event_id: e.event_id, summary: e.summary.clone() })
            .collect(),
    };
    ask(provider, rec, Task::AbstractStory, &input, "story".into())
}

/// One profile per roster character, built from the events that character appears in.
pub fn build_profiles(
    events: &[Event],
    summaries: &[ShotSummary],
    roster: &[CharacterRecord],
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<Vec<CharacterProfile>, MemoryError> {
    if roster.is_empty() {
        return Err(MemoryError::EmptyRoster);
    }
    let mut profiles = Vec::with_capacity(roster.len());
    let mut failures = Vec::new();
    for c in roster {
        let member_events: Vec<EventText> = events
            .iter()
            .filter(|e| {
                summaries[e.first_shot as usize..=e.last_shot as usize]
                    .iter()
                    .any(|s| s.characters_present.contains(&c.character_id))
            })
            .map(|e| EventText { event_id: e.event_id, summary: e.summary.clone() })
            .collect();
        let text = if member_events.is_empty() {
            ABSENT_PROFILE.to_string()
        } else {
            let input = BuildProfileInput {
                character_id: c.character_id.clone(),
                name: c.name.clone(),
                bio: c.bio.clone(),
                events: member_events,
            };
            match ask(provider, rec, Task::BuildProfile, &input, format!("character {}", c.character_id)) {
                Ok(t) => t,
                Err(MemoryError::Log(e)) => return Err(e.into()),
                Err(e) => {
                    failures.push((c.character_id.clone(), e.to_string()));
                    continue;
                }
            }
        };
        profiles.push(CharacterProfile {
            character_id: c.character_id.clone(),
            name: c.name.clone(),
            text,
        });
    }
    if failures.is_empty() {
        Ok(profiles)
    } else {
        Err(MemoryError::Profiles(failures))
    }
}

/// Builds the full memory for one identity-analyzed source.
pub fn build_memory(
    manifest: &SourceManifest,
    identity: &IdentityReport,
    provider: &dyn CompletionProvider,
    boundary: &dyn EventBoundaryProvider,
    rec: &mut dyn Recorder,
) -> Result<NarrativeMemory, MemoryError> {
    let mut buffer = ContextBuffer::default();
    let mut summaries = Vec::with_capacity(manifest.shots.len());
    for i in 0..manifest.shots.len() {
        let info = shot_info(manifest, identity, i);
        summaries.push(summarize_shot(&manifest.title, &info, &buffer, provider, rec)?);
        buffer.push(info);
    }
    let events = group_events(manifest, &summaries, boundary, provider, rec)?;
    let story = abstract_story(&manifest.title, &events, provider, rec)?;
    let profiles = build_profiles(&events, &summaries, &manifest.characters, provider, rec)?;
    let memory = NarrativeMemory {
        source_id: manifest.source_id.clone(),
        title: manifest.title.clone(),
        shot_summaries: summaries,
        events,
        story,
        profiles,
    };
    memory
        .check()
        .map_err(|m| MemoryError::Inconsistent(memory.source_id.clone(), m))?;
    Ok(memory)
}

/// Builds memories for several sources concurrently. Each source records into
/// a private buffer; buffers are flushed into `rec` in input order, so the
/// resulting log does not depend on thread scheduling.
pub fn build_memories(
    jobs: &[(&SourceManifest, &IdentityReport)],
    provider: &dyn CompletionProvider,
    boundary: &dyn EventBoundaryProvider,
    rec: &mut dyn Recorder,
) -> Result<Vec<NarrativeMemory>, MemoryError> {
    let results: Vec<(Result<NarrativeMemory, MemoryError>, MessageBuffer)> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(m, id)| {
                s.spawn(move || {
                    let mut buf = MessageBuffer::default();
                    let r = build_memory(m, id, provider, boundary, &mut buf);
                    (r, buf)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("memory worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(results.len());
    for (r, buf) in results {
        buf.drain_into(rec)?;
        out.push(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMemory {
    pub rank: u32,
    pub memory: NarrativeMemory,
}

/// Memories of a session's sources, ordered by collection rank.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryBank {
    pub entries: Vec<RankedMemory>,
}

impl MemoryBank {
    /// Ranks memories by their position in `memories`.
    pub fn from_memories(memories: Vec<NarrativeMemory>) -> Self {
        Self {
            entries: memories
                .into_iter()
                .enumerate()
                .map(|(i, memory)| RankedMemory { rank: i as u32, memory })
                .collect(),
        }
    }

    /// Ranks memories by the collection's source order; unknown sources are dropped.
    pub fn for_collection(collection: &SourceCollection, memories: Vec<NarrativeMemory>) -> Self {
        let mut entries: Vec<RankedMemory> = memories
            .into_iter()
            .filter_map(|m| Some(RankedMemory { rank: collection.rank(&m.source_id)?, memory: m }))
            .collect();
        entries.sort_by_key(|e| e.rank);
        Self { entries }
    }

    pub fn get(&self, source_id: &str) -> Option<&NarrativeMemory> {
        self.entries
            .iter()
            .find(|e| e.memory.source_id == source_id)
            .map(|e| &e.memory)
    }

    pub fn memories(&self) -> impl Iterator<Item = &NarrativeMemory> {
        self.entries.iter().map(|e| &e.memory)
    }

    pub fn synopses(&self) -> Vec<Synopsis> {
        self.memories()
            .map(|m| Synopsis {
                source_id: m.source_id.clone(),
                title: m.title.clone(),
                story: m.story.clone(),
            })
            .collect()
    }

    pub fn index(&self) -> MemoryIndex {
        MemoryIndex {
            sources: self
                .memories()
                .map(|m| IndexedSource {
                    source_id: m.source_id.clone(),
                    title: m.title.clone(),
                    characters: m
                        .profiles
                        .iter()
                        .map(|p| NamedCharacter { id: p.character_id.clone(), name: p.name.clone() })
                        .collect(),
                    events: m
                        .events
                        .iter()
                        .map(|e| EventSpan {
                            event_id: e.event_id,
                            first_shot: e.first_shot,
                            last_shot: e.last_shot,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Whether an evidence reference points at something in this bank.
    pub fn resolves(&self, r: &EvidenceRef) -> bool {
        let Some(m) = self.get(r.source_id()) else { return false };
        match r {
            EvidenceRef::Story { .. } => true,
            EvidenceRef::Character { character_id, .. } => m.profile(character_id).is_some(),
            EvidenceRef::Event { event_id, .. } => (*event_id as usize) < m.events.len(),
            EvidenceRef::Shot { shot } => (shot.shot_id as usize) < m.shot_summaries.len(),
        }
    }
}
