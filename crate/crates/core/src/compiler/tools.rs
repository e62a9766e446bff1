//! Editing-tool selection and application.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::edl::{Cover, Music, Overlay, Transition};
use super::{CompileError, Edl, EditOp, OverlayKind, ToolKind, TransitionKind, DEFAULT_FADE_DURATION};
use crate::environment::{exchange, ExchangeError, Instruction, MessageKind, Recorder, Role};
use crate::manifest::SourceCollection;
use crate::planning::CompiledScript;
use crate::prompts::{self, extract_json, ScriptLine, SelectToolsInput, Task};
use crate::provider::CompletionProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicAsset {
    pub path: String,
    pub moods: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverAsset {
    pub path: String,
    pub tags: Vec<String>,
}

/// Contents of `index.json` in the asset directory. Paths are relative to it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssetIndex {
    #[serde(default)]
    pub music: Vec<MusicAsset>,
    #[serde(default)]
    pub covers: Vec<CoverAsset>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl AssetIndex {
    pub const FILE_NAME: &'static str = "index.json";

    /// Loads the index from `dir`; a missing index is an empty one.
    pub fn load(dir: &Path) -> Result<Self, CompileError> {
        let path = dir.join(Self::FILE_NAME);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Ok(Self { root: dir.to_path_buf(), ..Default::default() })
            }
            Err(e) => {
                return Err(CompileError::AssetIndex { path: path.display().to_string(), message: e.to_string() })
            }
        };
        let mut idx: AssetIndex = serde_json::from_str(&text).map_err(|e| CompileError::AssetIndex {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        idx.root = dir.to_path_buf();
        Ok(idx)
    }

    pub fn moods(&self) -> Vec<String> {
        let mut m: Vec<String> = self.music.iter().flat_map(|a| a.moods.iter().cloned()).collect();
        m.sort();
        m.dedup();
        m
    }

    fn resolve(&self, rel: &str) -> String {
        self.root.join(rel).display().to_string()
    }

    /// First track tagged with `mood`, else the first track.
    pub fn music_for(&self, mood: &str) -> Option<String> {
        let want = mood.to_lowercase();
        self.music
            .iter()
            .find(|a| a.moods.iter().any(|m| m.to_lowercase() == want))
            .or_else(|| self.music.first())
            .map(|a| self.resolve(&a.path))
    }

    /// First cover with `tag`, else the first cover.
    pub fn cover_for(&self, tag: Option<&str>) -> Option<String> {
        let hit = tag.and_then(|t| {
            let want = t.to_lowercase();
            self.covers.iter().find(|a| a.tags.iter().any(|x| x.to_lowercase() == want))
        });
        hit.or_else(|| self.covers.first()).map(|a| self.resolve(&a.path))
    }
}

/// Requested tool kinds in order of first mention.
pub fn requested_kinds(instruction: &Instruction) -> Vec<ToolKind> {
    let mut kinds = Vec::new();
    for e in &instruction.editing_operations {
        if !kinds.contains(&e.kind) {
            kinds.push(e.kind);
        }
    }
    kinds
}

/// The op used when the provider omits a requested kind.
pub fn default_op(kind: ToolKind, instruction: &Instruction, entries: usize, moods: &[String]) -> EditOp {
    match kind {
        ToolKind::Music => EditOp::Music {
            mood: moods.first().cloned().unwrap_or_else(|| "neutral".into()),
            gain: super::DEFAULT_MUSIC_GAIN,
        },
        ToolKind::Text => EditOp::Text {
            style: OverlayKind::Title,
            text: instruction.raw_text.clone(),
            start: 0.0,
            duration: super::DEFAULT_TEXT_DURATION,
        },
        ToolKind::Cover => EditOp::Cover { tag: None, display_duration: super::DEFAULT_COVER_DURATION },
        ToolKind::Transition => EditOp::Transition {
            style: TransitionKind::Fade,
            positions: (1..entries).collect(),
            duration: DEFAULT_FADE_DURATION,
        },
    }
}

#[derive(Deserialize)]
struct OpsReply {
    ops: Vec<Value>,
}

enum ReplyProblem {
    UnknownKind(String),
    Malformed(String),
}

fn parse_ops(text: &str) -> Result<Vec<EditOp>, ReplyProblem> {
    let json = extract_json(text).ok_or_else(|| ReplyProblem::Malformed("no JSON object".into()))?;
    let reply: OpsReply = serde_json::from_str(json).map_err(|e| ReplyProblem::Malformed(e.to_string()))?;
    let mut ops = Vec::with_capacity(reply.ops.len());
    for v in reply.ops {
        let kind = v.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        if ToolKind::parse(&kind).is_none() {
            return Err(ReplyProblem::UnknownKind(kind));
        }
        ops.push(serde_json::from_value(v).map_err(|e| ReplyProblem::Malformed(e.to_string()))?);
    }
    Ok(ops)
}

/// Chooses tool parameters. Every requested kind appears exactly once and no
/// other kind appears, whatever the provider replies.
pub fn select_tools(
    instruction: &Instruction,
    script: &CompiledScript,
    sources: &SourceCollection,
    moods: &[String],
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<Vec<EditOp>, CompileError> {
    let requested = requested_kinds(instruction);
    if requested.is_empty() {
        return Ok(Vec::new());
    }
    let lines = script
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| ScriptLine {
            position: i,
            shot: e.shot.to_string(),
            stage: e.stage_name.clone(),
            duration: sources.shot(&e.shot).map_or(0.0, |s| s.duration()),
        })
        .collect();
    let mut input = SelectToolsInput {
        instruction: instruction.clone(),
        requested: requested.clone(),
        script: lines,
        moods: moods.to_vec(),
        retry_reason: None,
    };
    let mut reply = None;
    for attempt in 0..2 {
        let req = prompts::request(Task::SelectTools, &input);
        let text = match exchange(provider, rec, Role::Editor, &req) {
            Ok(t) => t,
            Err(ExchangeError::Log(e)) => return Err(e.into()),
            Err(e) => return Err(CompileError::Provider(e)),
        };
        match parse_ops(&text) {
            Ok(ops) => {
                reply = Some(ops);
                break;
            }
            Err(ReplyProblem::UnknownKind(k)) if attempt == 0 => {
                input.retry_reason = Some(format!("unknown tool kind `{k}`; use only music, text, cover, transition"));
            }
            Err(ReplyProblem::UnknownKind(k)) => return Err(CompileError::UnknownToolKind(k)),
            Err(ReplyProblem::Malformed(m)) if attempt == 0 => {
                input.retry_reason = Some(format!("reply did not match the schema: {m}"));
            }
            Err(ReplyProblem::Malformed(m)) => return Err(CompileError::Malformed(m)),
        }
    }
    let reply = reply.unwrap_or_default();
    let ops: Vec<EditOp> = requested
        .iter()
        .map(|k| {
            reply
                .iter()
                .find(|op| op.kind() == *k)
                .cloned()
                .unwrap_or_else(|| default_op(*k, instruction, script.entries.len(), moods))
        })
        .collect();
    rec.record(
        Role::Editor,
        MessageKind::ToolCall,
        serde_json::json!({ "tool": "select_tools", "ops": ops }),
    )?;
    Ok(ops)
}

/// Applies ops to an EDL, resolving assets from the index.
pub fn apply_ops(edl: &Edl, ops: &[EditOp], assets: &AssetIndex) -> Result<Edl, CompileError> {
    let mut out = edl.clone();
    for op in ops {
        match op {
            EditOp::Music { mood, gain } => {
                let track = assets
                    .music_for(mood)
                    .ok_or_else(|| CompileError::MissingAsset { kind: "music", tag: Some(mood.clone()) })?;
                out.music = Some(Music { track, gain: *gain });
            }
            EditOp::Text { style, text, start, duration } => {
                out.overlays.push(Overlay { text: text.clone(), start: *start, duration: *duration, kind: *style });
            }
            EditOp::Cover { tag, display_duration } => {
                let image = assets
                    .cover_for(tag.as_deref())
                    .ok_or_else(|| CompileError::MissingAsset { kind: "cover", tag: tag.clone() })?;
                out.cover = Some(Cover { image, display_duration: *display_duration });
            }
            EditOp::Transition { style, positions, duration } => {
                for &p in positions {
                    if p == 0 || p >= out.entries.len() {
                        return Err(CompileError::InvalidEdl(format!(
                            "transition position {p} outside 1..{}",
                            out.entries.len()
                        )));
                    }
                    let (kind, duration) = match style {
                        TransitionKind::Cut => (TransitionKind::Cut, 0.0),
                        TransitionKind::Fade => (TransitionKind::Fade, *duration),
                    };
                    out.transitions.retain(|t| t.position != p);
                    out.transitions.push(Transition { position: p, kind, duration });
                }
                out.transitions.sort_by_key(|t| t.position);
            }
        }
    }
    out.validate()?;
    Ok(out)
}
