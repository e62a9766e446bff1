//! User instructions decomposed into source selection, target content,
//! temporal requirement and editing operations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::log::{exchange, ExchangeError, LogError, Recorder, Role};
use crate::compiler::ToolKind;
use crate::manifest::SourceCollection;
use crate::prompts::{self, extract_json, CatalogEntry, NamedCharacter, ParseInstructionInput, ParsedInstruction, Task};
use crate::provider::CompletionProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Character,
    Event,
    Theme,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetDescriptor {
    pub kind: TargetKind,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalKind {
    Chronological,
    NonLinear,
    Extractive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRequirement {
    pub kind: TemporalKind,
    #[serde(default)]
    pub duration_limit_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestedEdit {
    pub kind: ToolKind,
    #[serde(default)]
    pub parameters: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub raw_text: String,
    pub source_selection: Vec<String>,
    pub target_content: Vec<TargetDescriptor>,
    pub temporal_requirement: TemporalRequirement,
    pub editing_operations: Vec<RequestedEdit>,
}

impl Instruction {
    pub fn targets(&self, kind: TargetKind) -> impl Iterator<Item = &str> {
        self.target_content
            .iter()
            .filter(move |t| t.kind == kind)
            .map(|t| t.value.as_str())
    }
}

#[derive(Debug, Error)]
pub enum InstructionError {
    #[error("instruction text is empty")]
    Empty,
    #[error("source catalog is empty")]
    EmptyCatalog,
    #[error("parse_instruction provider call failed: {0}")]
    Provider(#[source] ExchangeError),
    #[error("unusable instruction decomposition: {0}")]
    Malformed(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl InstructionError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            InstructionError::Provider(ExchangeError::Provider(crate::provider::ProviderError::Timeout(_)))
        )
    }
}

/// Catalog of available sources for the parser.
pub fn catalog(sources: &SourceCollection) -> Vec<CatalogEntry> {
    sources
        .iter()
        .map(|m| CatalogEntry {
            source_id: m.source_id.clone(),
            title: m.title.clone(),
            characters: m
                .characters
                .iter()
                .map(|c| NamedCharacter { id: c.character_id.clone(), name: c.name.clone() })
                .collect(),
        })
        .collect()
}

/// Maps a named source to its catalog id, or keeps it verbatim when unknown.
fn resolve_source(name: &str, catalog: &[CatalogEntry]) -> String {
    let want = name.trim().to_lowercase();
    catalog
        .iter()
        .find(|c| c.source_id.to_lowercase() == want || c.title.to_lowercase() == want)
        .map(|c| c.source_id.clone())
        .unwrap_or_else(|| name.trim().to_string())
}

/// Decomposes instruction text with one structured completion call.
pub fn parse_instruction(
    text: &str,
    catalog: &[CatalogEntry],
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<Instruction, InstructionError> {
    if text.trim().is_empty() {
        return Err(InstructionError::Empty);
    }
    if catalog.is_empty() {
        return Err(InstructionError::EmptyCatalog);
    }
    let input = ParseInstructionInput { text: text.to_string(), catalog: catalog.to_vec() };
    let req = prompts::request(Task::ParseInstruction, &input);
    let reply = match exchange(provider, rec, Role::Manager, &req) {
        Ok(t) => t,
        Err(ExchangeError::Log(e)) => return Err(e.into()),
        Err(e) => return Err(InstructionError::Provider(e)),
    };
    let json = extract_json(&reply).ok_or_else(|| InstructionError::Malformed("no JSON object in reply".into()))?;
    let parsed: ParsedInstruction =
        serde_json::from_str(json).map_err(|e| InstructionError::Malformed(e.to_string()))?;
    if let Some(limit) = parsed.temporal.duration_limit_s {
        if !(limit > 0.0) {
            return Err(InstructionError::Malformed(format!("duration limit {limit} is not positive")));
        }
    }
    let mut sources: Vec<String> = Vec::new();
    for s in &parsed.sources {
        let id = resolve_source(s, catalog);
        if !id.is_empty() && !sources.contains(&id) {
            sources.push(id);
        }
    }
    if sources.is_empty() {
        sources = catalog.iter().map(|c| c.source_id.clone()).collect();
    }
    Ok(Instruction {
        raw_text: text.to_string(),
        source_selection: sources,
        target_content: parsed.targets,
        temporal_requirement: parsed.temporal,
        editing_operations: parsed.edits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::NullRecorder;
    use crate::provider::ScriptedProvider;

    fn cat() -> Vec<CatalogEntry> {
        vec![
            CatalogEntry { source_id: "a".into(), title: "Film A".into(), characters: vec![] },
            CatalogEntry { source_id: "b".into(), title: "Film B".into(), characters: vec![] },
        ]
    }

    #[test]
    fn empty_text_rejected_without_a_call() {
        let p = ScriptedProvider::constant("{}");
        assert!(matches!(parse_instruction(" ", &cat(), &p, &mut NullRecorder), Err(InstructionError::Empty)));
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn titles_resolved_and_unknown_kept() {
        let p = ScriptedProvider::constant(
            r#"{"sources":["film a","Casablanca"],"targets":[],"temporal":{"kind":"chronological","duration_limit_s":300},"edits":[]}"#,
        );
        let i = parse_instruction("Cut a 5-minute chronological summary of Film A", &cat(), &p, &mut NullRecorder).unwrap();
        assert_eq!(i.source_selection, vec!["a".to_string(), "Casablanca".to_string()]);
        assert_eq!(i.temporal_requirement.duration_limit_s, Some(300.0));
    }

    #[test]
    fn no_sources_means_whole_catalog() {
        let p = ScriptedProvider::constant(r#"{"sources":[],"temporal":{"kind":"extractive"}}"#);
        let i = parse_instruction("anything", &cat(), &p, &mut NullRecorder).unwrap();
        assert_eq!(i.source_selection, vec!["a".to_string(), "b".to_string()]);
    }
}
