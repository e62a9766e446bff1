//! The compose phase: lowers a compiled script to an edit decision list,
//! chooses editing tools, and drives an external assembler to render.

mod edl;
mod render;
mod tools;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{ExchangeError, LogError};
use crate::manifest::{ShotId, SourceId};

pub use edl::{compile_edl, Cover, Edl, EdlEntry, Music, Overlay, Transition, EDL_VERSION};
pub use render::{
    default_ffmpeg, plan_render, probe_duration, render, RenderPlan, RenderStep, RenderedVideo,
    RendererTemplate, RENDER_TOLERANCE_S,
};
pub use tools::{apply_ops, default_op, select_tools, AssetIndex, MusicAsset, CoverAsset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Music,
    Text,
    Cover,
    Transition,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [ToolKind::Music, ToolKind::Text, ToolKind::Cover, ToolKind::Transition];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Music => "music",
            ToolKind::Text => "text",
            ToolKind::Cover => "cover",
            ToolKind::Transition => "transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ToolKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlayKind {
    Title,
    Summary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    Cut,
    Fade,
}

pub const DEFAULT_MUSIC_GAIN: f64 = 0.3;
pub const DEFAULT_TEXT_DURATION: f64 = 3.0;
pub const DEFAULT_COVER_DURATION: f64 = 3.0;
pub const DEFAULT_FADE_DURATION: f64 = 0.5;

fn default_gain() -> f64 {
    DEFAULT_MUSIC_GAIN
}

fn default_text_duration() -> f64 {
    DEFAULT_TEXT_DURATION
}

fn default_cover_duration() -> f64 {
    DEFAULT_COVER_DURATION
}

fn default_fade() -> f64 {
    DEFAULT_FADE_DURATION
}

/// One application of an editing tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EditOp {
    Music {
        mood: String,
        #[serde(default = "default_gain")]
        gain: f64,
    },
    Text {
        style: OverlayKind,
        text: String,
        #[serde(default)]
        start: f64,
        #[serde(default = "default_text_duration")]
        duration: f64,
    },
    Cover {
        #[serde(default)]
        tag: Option<String>,
        #[serde(default = "default_cover_duration")]
        display_duration: f64,
    },
    Transition {
        style: TransitionKind,
        /// Entry boundaries, 1-based: position `p` sits between entries `p-1` and `p`.
        positions: Vec<usize>,
        #[serde(default = "default_fade")]
        duration: f64,
    },
}

impl EditOp {
    pub fn kind(&self) -> ToolKind {
        match self {
            EditOp::Music { .. } => ToolKind::Music,
            EditOp::Text { .. } => ToolKind::Text,
            EditOp::Cover { .. } => ToolKind::Cover,
            EditOp::Transition { .. } => ToolKind::Transition,
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("compiled script is empty")]
    EmptyScript,
    #[error("shot {source_id}:{shot_id} does not resolve")]
    UnresolvedShot { source_id: SourceId, shot_id: ShotId },
    #[error("invalid EDL: {0}")]
    InvalidEdl(String),
    #[error("provider emitted unknown tool kind `{0}`")]
    UnknownToolKind(String),
    #[error("unusable tool selection: {0}")]
    Malformed(String),
    #[error("select_tools provider call failed: {0}")]
    Provider(#[source] ExchangeError),
    #[error("no {kind} asset available{}", .tag.as_ref().map(|t| format!(" for tag `{t}`")).unwrap_or_default())]
    MissingAsset { kind: &'static str, tag: Option<String> },
    #[error("asset index {path}: {message}")]
    AssetIndex { path: String, message: String },
    #[error("no media file for source `{0}`")]
    MissingMedia(SourceId),
    #[error("renderer `{program}` could not be started: {message}")]
    RendererUnavailable { program: String, message: String },
    #[error("render step `{step}` exited with {code:?}: {stderr}")]
    Subprocess { step: String, code: Option<i32>, stderr: String },
    #[error("rendered duration {actual:.3}s differs from timeline {expected:.3}s by more than {tolerance}s")]
    DurationMismatch { expected: f64, actual: f64, tolerance: f64 },
    #[error("could not probe {path}: {message}")]
    Probe { path: String, message: String },
    #[error("render I/O on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Log(#[from] LogError),
}

impl CompileError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            CompileError::Provider(ExchangeError::Provider(crate::provider::ProviderError::Timeout(_)))
        )
    }
}
