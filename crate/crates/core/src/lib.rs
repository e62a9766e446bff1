//! Instruction-driven compilation of cinematic source material.
//!
//! The pipeline runs bottom-up: a validated [`manifest`] per source, speaker
//! and character [`identity`] resolution, a four-level narrative [`memory`],
//! an iterative director/orchestrator [`planning`] loop, an edit decision
//! list [`compiler`] with an external renderer, and an [`environment`] that
//! logs every message so sessions can be replayed. [`metrics`] scores the
//! results.

pub mod compiler;
pub mod environment;
pub mod identity;
pub mod manifest;
pub mod memory;
pub mod metrics;
pub mod planning;
pub mod prompts;
pub mod provider;
pub mod vector;

pub use compiler::{Edl, EditOp, RenderPlan, RenderedVideo, ToolKind};
pub use environment::{
    EngineConfig, Instruction, Message, Role, SessionLog, SessionOutcome, SessionResult, SessionState,
};
pub use identity::{IdentityConfig, IdentityReport};
pub use manifest::{GlobalShotRef, Shot, SourceCollection, SourceManifest};
pub use memory::{MemoryBank, NarrativeMemory, QuerySpec};
pub use planning::{Blueprint, CompiledScript, PlanConfig, PlanOutcome, Proposal, Rejection};
pub use provider::{CompletionProvider, CompletionRequest, HeuristicProvider, ProviderError};
