//! Versioned prompt templates and the JSON payloads sent with them.
//!
//! A request's system text is the template verbatim; its first line carries
//! the task tag. The user text is the pretty-printed payload.

use serde::{Deserialize, Serialize};

use crate::compiler::ToolKind;
use crate::environment::{Instruction, RequestedEdit, TargetDescriptor, TemporalRequirement};
use crate::manifest::{CharacterId, ShotId, SourceId};
use crate::memory::{Level, QuerySpec};
use crate::planning::{Blueprint, GroundingResult, Proposal};
use crate::provider::CompletionRequest;

pub const TEMPLATE_VERSION: &str = "1";
pub const RUBRIC_VERSION: &str = "1";
pub const DEFAULT_SEED: u64 = 42;

/// Marks a director reply as an explicit infeasibility declaration.
pub const INFEASIBLE_TOKEN: &str = "<<INFEASIBLE>>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    SummarizeShot,
    SummarizeEvent,
    AbstractStory,
    BuildProfile,
    ParseInstruction,
    DraftBlueprint,
    Propose,
    SelectTools,
    JudgeSc,
    JudgeNl,
    JudgePa,
    JudgeCq,
}

impl Task {
    pub const ALL: [Task; 12] = [
        Task::SummarizeShot,
        Task::SummarizeEvent,
        Task::AbstractStory,
        Task::BuildProfile,
        Task::ParseInstruction,
        Task::DraftBlueprint,
        Task::Propose,
        Task::SelectTools,
        Task::JudgeSc,
        Task::JudgeNl,
        Task::JudgePa,
        Task::JudgeCq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::SummarizeShot => "summarize_shot",
            Task::SummarizeEvent => "summarize_event",
            Task::AbstractStory => "abstract_story",
            Task::BuildProfile => "build_profile",
            Task::ParseInstruction => "parse_instruction",
            Task::DraftBlueprint => "draft_blueprint",
            Task::Propose => "propose",
            Task::SelectTools => "select_tools",
            Task::JudgeSc => "judge_sc",
            Task::JudgeNl => "judge_nl",
            Task::JudgePa => "judge_pa",
            Task::JudgeCq => "judge_cq",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn template(self) -> &'static str {
        match self {
            Task::SummarizeShot => include_str!("../resources/prompts/summarize_shot.txt"),
            Task::SummarizeEvent => include_str!("../resources/prompts/summarize_event.txt"),
            Task::AbstractStory => include_str!("../resources/prompts/abstract_story.txt"),
            Task::BuildProfile => include_str!("../resources/prompts/build_profile.txt"),
            Task::ParseInstruction => include_str!("../resources/prompts/parse_instruction.txt"),
            Task::DraftBlueprint => include_str!("../resources/prompts/draft_blueprint.txt"),
            Task::Propose => include_str!("../resources/prompts/propose.txt"),
            Task::SelectTools => include_str!("../resources/prompts/select_tools.txt"),
            Task::JudgeSc => include_str!("../resources/prompts/judge_sc.txt"),
            Task::JudgeNl => include_str!("../resources/prompts/judge_nl.txt"),
            Task::JudgePa => include_str!("../resources/prompts/judge_pa.txt"),
            Task::JudgeCq => include_str!("../resources/prompts/judge_cq.txt"),
        }
    }

    /// Memory-building tasks, the ones a resumed session must not repeat.
    pub fn is_memory_stage(self) -> bool {
        matches!(
            self,
            Task::SummarizeShot | Task::SummarizeEvent | Task::AbstractStory | Task::BuildProfile
        )
    }
}

/// Builds the deterministic request for `task` over `input`.
pub fn request<T: Serialize>(task: Task, input: &T) -> CompletionRequest {
    CompletionRequest {
        system: task.template().to_string(),
        user: serde_json::to_string_pretty(input).expect("prompt payload serializes"),
        temperature: 0.0,
        seed: Some(DEFAULT_SEED),
    }
}

/// Parses a request's user text back into its payload.
pub fn payload<T: for<'de> Deserialize<'de>>(request: &CompletionRequest) -> Result<T, serde_json::Error> {
    serde_json::from_str(&request.user)
}

/// Extracts the first JSON object from a reply, tolerating surrounding prose or code fences.
pub fn extract_json(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedCharacter {
    pub id: CharacterId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueInfo {
    pub speaker: Option<String>,
    pub text: String,
}

/// One shot-information record: what the summarizer sees of a shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotInfo {
    pub shot_id: ShotId,
    pub start: f64,
    pub end: f64,
    pub visual_ref: String,
    pub description: Option<String>,
    pub characters: Vec<NamedCharacter>,
    pub dialogue: Vec<DialogueInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeShotInput {
    pub source_title: String,
    pub shot: ShotInfo,
    pub buffer: Vec<ShotInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotText {
    pub shot_id: ShotId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarizeEventInput {
    pub source_title: String,
    pub event_id: u32,
    pub first_shot: ShotId,
    pub last_shot: ShotId,
    pub shots: Vec<ShotText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventText {
    pub event_id: u32,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractStoryInput {
    pub source_title: String,
    pub events: Vec<EventText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildProfileInput {
    pub character_id: CharacterId,
    pub name: String,
    pub bio: Option<String>,
    pub events: Vec<EventText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub source_id: SourceId,
    pub title: String,
    pub characters: Vec<NamedCharacter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseInstructionInput {
    pub text: String,
    pub catalog: Vec<CatalogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedInstruction {
    pub sources: Vec<String>,
    #[serde(default)]
    pub targets: Vec<TargetDescriptor>,
    pub temporal: TemporalRequirement,
    #[serde(default)]
    pub edits: Vec<RequestedEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synopsis {
    pub source_id: SourceId,
    pub title: String,
    pub story: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftBlueprintInput {
    pub instruction: Instruction,
    pub synopses: Vec<Synopsis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repair: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDraft {
    pub name: String,
    pub intent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftBlueprintOutput {
    pub stages: Vec<StageDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpan {
    pub event_id: u32,
    pub first_shot: ShotId,
    pub last_shot: ShotId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedSource {
    pub source_id: SourceId,
    pub title: String,
    pub characters: Vec<NamedCharacter>,
    pub events: Vec<EventSpan>,
}

/// The director's table of contents over memory: structure without text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryIndex {
    pub sources: Vec<IndexedSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeInput {
    pub instruction: Instruction,
    pub blueprint: Blueprint,
    pub stage_name: String,
    pub target_level: Level,
    pub index: MemoryIndex,
    pub failed: Vec<Proposal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<GroundingResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manager_feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposeOutput {
    pub query: QuerySpec,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub position: usize,
    pub shot: String,
    pub stage: String,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectToolsInput {
    pub instruction: Instruction,
    pub requested: Vec<ToolKind>,
    pub script: Vec<ScriptLine>,
    pub moods: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedShot {
    pub shot: String,
    pub stage: String,
    /// Position of the shot in source order across the collection.
    pub source_order: usize,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeInput {
    pub metric: String,
    pub instruction: String,
    pub targets: Vec<String>,
    pub shots: Vec<JudgedShot>,
    pub rendered: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_template_carries_its_tag() {
        for t in Task::ALL {
            let first = t.template().lines().next().unwrap();
            assert_eq!(first, format!("task: {}@{}", t.name(), TEMPLATE_VERSION));
            let r = request(t, &serde_json::json!({}));
            assert_eq!(r.task(), Some(t.name()));
            assert_eq!(Task::from_name(t.name()), Some(t));
        }
    }

    #[test]
    fn json_extraction_skips_fences() {
        assert_eq!(extract_json("```json\n{\"a\":1}\n```"), Some("{\"a\":1}"));
        assert_eq!(extract_json("nothing"), None);
    }
}
