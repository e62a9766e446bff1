//! Session orchestration: parse, recruit, memory, plan, compile, render,
//! with every state change recorded so a log prefix fully determines the
//! session state.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::EngineConfig;
use super::instruction::{catalog, parse_instruction, Instruction};
use super::log::{LogError, Message, MessageKind, Recorder, Role, SessionLog};
use crate::compiler::{self, apply_ops, compile_edl, select_tools, AssetIndex, Edl, EditOp, RenderPlan, RenderedVideo};
use crate::identity;
use crate::manifest::{content_hash, SourceCollection, SourceManifest};
use crate::memory::{build_memories, load_memory, memory_path, save_memory, EventBoundaryProvider, MemoryBank, NarrativeMemory};
use crate::planning::{plan, CompiledScript, PlanOutcome, Rejection};
use crate::provider::CompletionProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Success,
    Rejected,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Artifact {
    Rendered(RenderedVideo),
    RenderPlan { output: String, steps: usize },
    /// Evaluation-only sessions end at the compiled script.
    Script { shots: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub status: OutcomeStatus,
    pub artifact: Option<Artifact>,
    pub rejection: Option<Rejection>,
    pub error_detail: Option<ErrorDetail>,
}

impl SessionOutcome {
    pub fn success(artifact: Artifact) -> Self {
        Self { status: OutcomeStatus::Success, artifact: Some(artifact), rejection: None, error_detail: None }
    }

    pub fn rejected(r: Rejection) -> Self {
        Self { status: OutcomeStatus::Rejected, artifact: None, rejection: Some(r), error_detail: None }
    }

    pub fn error(stage: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status: OutcomeStatus::Error,
            artifact: None,
            rejection: None,
            error_detail: Some(ErrorDetail { stage: stage.into(), message: message.into() }),
        }
    }

    /// Exactly one payload is populated and it matches the status.
    pub fn is_consistent(&self) -> bool {
        match self.status {
            OutcomeStatus::Success => self.artifact.is_some() && self.rejection.is_none() && self.error_detail.is_none(),
            OutcomeStatus::Rejected => self.artifact.is_none() && self.rejection.is_some() && self.error_detail.is_none(),
            OutcomeStatus::Error => self.artifact.is_none() && self.rejection.is_none() && self.error_detail.is_some(),
        }
    }
}

/// Session state as reconstructed from the log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionState {
    pub instruction: Option<Instruction>,
    pub agents: Option<Vec<Role>>,
    pub memory: Option<Vec<NarrativeMemory>>,
    pub plan: Option<PlanOutcome>,
    pub edl: Option<Edl>,
    pub ops: Vec<EditOp>,
    pub render_plan: Option<RenderPlan>,
    pub outcome: Option<SessionOutcome>,
}

impl SessionState {
    pub fn script(&self) -> Option<&CompiledScript> {
        match &self.plan {
            Some(PlanOutcome::Script(s)) => Some(s),
            _ => None,
        }
    }

    fn apply(&mut self, m: &Message, all: &[Message]) -> Result<(), SessionError> {
        let p = &m.payload;
        let field = |name: &str| -> Result<Value, SessionError> {
            p.get(name)
                .cloned()
                .ok_or_else(|| SessionError::Replay(format!("seq {}: missing `{name}`", m.seq)))
        };
        fn decode<T: serde::de::DeserializeOwned>(v: Value, what: &str, seq: u64) -> Result<T, SessionError> {
            serde_json::from_value(v).map_err(|e| SessionError::Replay(format!("seq {seq}: bad {what}: {e}")))
        }
        if m.kind == MessageKind::Checkpoint && p.get("action").and_then(Value::as_str) == Some("resume") {
            let bound = p.get("bound_seq").and_then(Value::as_u64).unwrap_or(0);
            let prefix: Vec<Message> = all.iter().filter(|x| x.seq <= bound).cloned().collect();
            let mut state = replay_state(&prefix)?;
            if p.get("new_instruction").is_some_and(|v| !v.is_null()) {
                state.instruction = None;
                state.agents = None;
                state.plan = None;
                state.edl = None;
                state.ops.clear();
                state.render_plan = None;
                state.outcome = None;
            }
            *self = state;
            return Ok(());
        }
        if m.kind != MessageKind::Integration || m.sender == Role::Orchestrator || m.sender == Role::Director {
            return Ok(());
        }
        match p.get("stage").and_then(Value::as_str) {
            Some("instruction") => self.instruction = Some(decode(field("instruction")?, "instruction", m.seq)?),
            Some("recruit") => self.agents = Some(decode(field("agents")?, "agents", m.seq)?),
            Some("memory") => self.memory = Some(decode(field("memories")?, "memories", m.seq)?),
            Some("plan") => self.plan = Some(decode(field("outcome")?, "plan outcome", m.seq)?),
            Some("edl") => {
                self.edl = Some(decode(field("edl")?, "edl", m.seq)?);
                self.ops = decode(field("ops")?, "ops", m.seq)?;
            }
            Some("render_plan") => self.render_plan = Some(decode(field("plan")?, "render plan", m.seq)?),
            Some("outcome") => self.outcome = Some(decode(field("outcome")?, "outcome", m.seq)?),
            _ => {}
        }
        Ok(())
    }
}

/// Rebuilds session state from a message prefix.
pub fn replay_state(messages: &[Message]) -> Result<SessionState, SessionError> {
    let mut state = SessionState::default();
    for m in messages {
        state.apply(m, messages)?;
    }
    Ok(state)
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("replay inconsistency: {0}")]
    Replay(String),
}

pub struct Providers<'a> {
    pub completion: &'a dyn CompletionProvider,
    pub boundary: &'a dyn EventBoundaryProvider,
}

pub struct SessionResult {
    pub outcome: SessionOutcome,
    pub state: SessionState,
    pub log: SessionLog,
}

impl SessionResult {
    pub fn script(&self) -> Option<&CompiledScript> {
        self.state.script()
    }
}

/// Agents needed for a session. The script agent is skipped when memory is reused.
pub fn recruit(render: bool, memory_reused: bool) -> Vec<Role> {
    let mut agents = Vec::with_capacity(4);
    if !memory_reused {
        agents.push(Role::Script);
    }
    agents.extend([Role::Director, Role::Orchestrator]);
    if render {
        agents.push(Role::Editor);
    }
    agents
}

/// Deterministic session id from the instruction and the available sources.
pub fn default_session_id(instruction: &str, sources: &SourceCollection) -> String {
    let mut h = Sha256::new();
    h.update(instruction.as_bytes());
    for m in sources.iter() {
        h.update([0u8]);
        h.update(m.source_id.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

struct StageFailure {
    stage: &'static str,
    message: String,
}

impl StageFailure {
    fn new(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self { stage, message: e.to_string() }
    }
}

struct Driver<'a> {
    sources: &'a SourceCollection,
    config: &'a EngineConfig,
    providers: &'a Providers<'a>,
    log: SessionLog,
    state: SessionState,
}

impl<'a> Driver<'a> {
    fn record_stage(&mut self, sender: Role, stage: &str, body: Value) -> Result<(), LogError> {
        let mut payload = json!({ "stage": stage });
        if let (Value::Object(dst), Value::Object(src)) = (&mut payload, body) {
            dst.extend(src);
        }
        let msg_seq = self.log.record(sender, MessageKind::Integration, payload)?;
        let msg = self.log.messages().last().cloned().expect("just recorded");
        debug_assert_eq!(msg.seq, msg_seq);
        let all = self.log.messages().to_vec();
        self.state
            .apply(&msg, &all)
            .map_err(|e| LogError::Corrupt { line: 0, message: e.to_string() })
    }

    fn checkpoint(&mut self, base: &str) -> Result<String, LogError> {
        let mut label = base.to_string();
        let mut n = 2;
        while self.log.checkpoints().contains_key(&label) {
            label = format!("{base}.{n}");
            n += 1;
        }
        self.log.checkpoint(&label)
    }

    fn selected_manifests(&self, instruction: &Instruction) -> Vec<&'a SourceManifest> {
        let mut picked: Vec<&SourceManifest> = instruction
            .source_selection
            .iter()
            .filter_map(|s| self.sources.get(s))
            .collect();
        picked.sort_by_key(|m| self.sources.rank(&m.source_id));
        picked.dedup_by(|a, b| a.source_id == b.source_id);
        picked
    }

    fn memory_stage(&mut self, instruction: &Instruction) -> Result<(), StageFailure> {
        let have: Vec<NarrativeMemory> = self.state.memory.clone().unwrap_or_default();
        let mut memories: Vec<NarrativeMemory> = Vec::new();
        let mut to_build: Vec<&SourceManifest> = Vec::new();
        let mut loaded = Vec::new();
        for m in self.selected_manifests(instruction) {
            if let Some(existing) = have.iter().find(|x| x.source_id == m.source_id) {
                memories.push(existing.clone());
                continue;
            }
            if let Some(dir) = &self.config.memory_dir {
                let path = memory_path(dir, &m.source_id);
                match load_memory(&path, &content_hash(m)) {
                    Ok(Some(mem)) => {
                        loaded.push(m.source_id.clone());
                        memories.push(mem);
                        continue;
                    }
                    Ok(None) => {}
                    Err(e) => log::warn!("ignoring persisted memory: {e}"),
                }
            }
            to_build.push(m);
        }
        let mut built_ids = Vec::new();
        if !to_build.is_empty() {
            let reports: Vec<identity::IdentityReport> = to_build
                .iter()
                .map(|m| identity::analyze(m, &self.config.identity))
                .collect();
            let jobs: Vec<(&SourceManifest, &identity::IdentityReport)> =
                to_build.iter().copied().zip(reports.iter()).collect();
            let built = build_memories(&jobs, self.providers.completion, self.providers.boundary, &mut self.log)
                .map_err(|e| StageFailure::new("memory", e))?;
            for (m, mem) in to_build.iter().zip(built) {
                if let Some(dir) = &self.config.memory_dir {
                    save_memory(&memory_path(dir, &m.source_id), &content_hash(m), &mem)
                        .map_err(|e| StageFailure::new("memory", e))?;
                }
                built_ids.push(m.source_id.clone());
                memories.push(mem);
            }
        }
        memories.sort_by_key(|m| self.sources.rank(&m.source_id));
        let mut all = have;
        for m in memories {
            if !all.iter().any(|x| x.source_id == m.source_id) {
                all.push(m);
            }
        }
        all.sort_by_key(|m| self.sources.rank(&m.source_id));
        self.record_stage(
            Role::Script,
            "memory",
            json!({ "built": built_ids, "loaded": loaded, "memories": all }),
        )
        .map_err(|e| StageFailure::new("memory", e))?;
        Ok(())
    }

    fn bank(&self, instruction: &Instruction) -> MemoryBank {
        let wanted: Vec<&str> = self
            .selected_manifests(instruction)
            .iter()
            .map(|m| m.source_id.as_str())
            .collect();
        let memories = self
            .state
            .memory
            .clone()
            .unwrap_or_default()
            .into_iter()
            .filter(|m| wanted.contains(&m.source_id.as_str()))
            .collect();
        MemoryBank::for_collection(self.sources, memories)
    }

    fn script_duration(&self, script: &CompiledScript) -> f64 {
        script
            .entries
            .iter()
            .filter_map(|e| self.sources.shot(&e.shot))
            .map(|s| s.duration())
            .sum()
    }

    /// The manager's check of a compiled script against the instruction.
    fn violation(&self, instruction: &Instruction, script: &CompiledScript) -> Option<String> {
        if script.entries.is_empty() {
            return Some("compiled script is empty".into());
        }
        if let Some(e) = script
            .entries
            .iter()
            .find(|e| !instruction.source_selection.contains(&e.shot.source_id))
        {
            return Some(format!("shot {} comes from a source the instruction did not select", e.shot));
        }
        let limit = instruction.temporal_requirement.duration_limit_s?;
        let total = self.script_duration(script);
        (total > limit + self.config.duration_tolerance_s).then(|| {
            format!("compiled script runs {total:.1}s, exceeding the {limit:.1}s limit; select fewer or shorter shots")
        })
    }

    fn plan_stage(&mut self, instruction: &Instruction) -> Result<(), StageFailure> {
        let bank = self.bank(instruction);
        let mut feedback: Option<String> = None;
        for attempt in 0..2 {
            let outcome = plan(
                instruction,
                &bank,
                self.providers.completion,
                &self.config.plan,
                feedback.as_deref(),
                &mut self.log,
            )
            .map_err(|e| StageFailure::new("plan", e))?;
            let violation = match &outcome {
                PlanOutcome::Script(s) => self.violation(instruction, s),
                PlanOutcome::Rejected(_) => None,
            };
            match violation {
                None => {
                    self.record_stage(Role::Manager, "plan", json!({ "outcome": outcome }))
                        .map_err(|e| StageFailure::new("plan", e))?;
                    return Ok(());
                }
                Some(v) => {
                    self.log
                        .record(Role::Manager, MessageKind::Error, json!({ "validation": v, "attempt": attempt }))
                        .map_err(|e| StageFailure::new("plan", e))?;
                    feedback = Some(v);
                }
            }
        }
        Err(StageFailure::new(
            "validate",
            format!("manager validation failed after re-plan: {}", feedback.unwrap_or_default()),
        ))
    }

    fn compile_stage(&mut self, instruction: &Instruction, script: &CompiledScript) -> Result<(), StageFailure> {
        let edl = compile_edl(script, self.sources).map_err(|e| StageFailure::new("compile", e))?;
        let assets = match &self.config.asset_dir {
            Some(dir) => AssetIndex::load(dir).map_err(|e| StageFailure::new("compile", e))?,
            None => AssetIndex::default(),
        };
        let ops = select_tools(instruction, script, self.sources, &assets.moods(), self.providers.completion, &mut self.log)
            .map_err(|e| StageFailure::new("select_tools", e))?;
        let edl = apply_ops(&edl, &ops, &assets).map_err(|e| StageFailure::new("compile", e))?;
        self.record_stage(Role::Editor, "edl", json!({ "edl": edl, "ops": ops }))
            .map_err(|e| StageFailure::new("compile", e))?;
        Ok(())
    }

    fn output_path(&self) -> PathBuf {
        self.config
            .output_dir
            .join(format!("{}.{}", self.log.session_id, self.config.renderer.container))
    }

    fn render_stage(&mut self, edl: &Edl) -> Result<Artifact, StageFailure> {
        let output = self.output_path();
        let result = compiler::render(edl, &self.config.media_root, &self.config.renderer, &output, self.config.dry_run);
        let (plan, video) = match result {
            Ok(r) => r,
            Err(e) => {
                let _ = self.log.record(
                    Role::Editor,
                    MessageKind::Error,
                    json!({ "stage": "render", "error": e.to_string() }),
                );
                return Err(StageFailure::new("render", e));
            }
        };
        self.log
            .record(
                Role::Editor,
                MessageKind::ToolCall,
                json!({ "tool": "render", "dry_run": self.config.dry_run, "steps": plan.steps().map(|s| s.command_line()).collect::<Vec<_>>() }),
            )
            .map_err(|e| StageFailure::new("render", e))?;
        self.record_stage(Role::Editor, "render_plan", json!({ "plan": plan }))
            .map_err(|e| StageFailure::new("render", e))?;
        Ok(match video {
            Some(v) => Artifact::Rendered(v),
            None => Artifact::RenderPlan { output: plan.output.clone(), steps: plan.steps().count() },
        })
    }

    fn drive(&mut self, text: Option<&str>) -> Result<SessionOutcome, StageFailure> {
        if let Some(done) = &self.state.outcome {
            return Ok(done.clone());
        }
        let instruction = match self.state.instruction.clone() {
            Some(i) => i,
            None => {
                let text = text.ok_or_else(|| StageFailure::new("parse", "no instruction to run"))?;
                let i = parse_instruction(text, &catalog(self.sources), self.providers.completion, &mut self.log)
                    .map_err(|e| StageFailure::new("parse", e))?;
                self.record_stage(Role::Manager, "instruction", json!({ "instruction": i }))
                    .map_err(|e| StageFailure::new("parse", e))?;
                i
            }
        };
        if self.state.agents.is_none() {
            let agents = recruit(self.config.render, self.state.memory.is_some());
            self.record_stage(Role::Manager, "recruit", json!({ "agents": agents }))
                .map_err(|e| StageFailure::new("recruit", e))?;
        }
        let needs_memory = match &self.state.memory {
            None => true,
            Some(have) => self
                .selected_manifests(&instruction)
                .iter()
                .any(|m| !have.iter().any(|x| x.source_id == m.source_id)),
        };
        if needs_memory {
            self.memory_stage(&instruction)?;
            self.checkpoint("post-memory").map_err(|e| StageFailure::new("memory", e))?;
        }
        if self.state.plan.is_none() {
            self.plan_stage(&instruction)?;
            self.checkpoint("post-plan").map_err(|e| StageFailure::new("plan", e))?;
        }
        let script = match self.state.plan.clone() {
            Some(PlanOutcome::Rejected(r)) => return Ok(SessionOutcome::rejected(r)),
            Some(PlanOutcome::Script(s)) => s,
            None => return Err(StageFailure::new("plan", "no plan recorded")),
        };
        let editor = self.state.agents.as_ref().is_some_and(|a| a.contains(&Role::Editor));
        if !editor {
            return Ok(SessionOutcome::success(Artifact::Script {
                shots: script.entries.iter().map(|e| e.shot.to_string()).collect(),
            }));
        }
        if self.state.edl.is_none() {
            self.compile_stage(&instruction, &script)?;
        }
        let edl = self.state.edl.clone().expect("edl recorded");
        let artifact = self.render_stage(&edl)?;
        Ok(SessionOutcome::success(artifact))
    }

    fn finish(mut self, text: Option<&str>) -> SessionResult {
        let driven = catch_unwind(AssertUnwindSafe(|| self.drive(text)));
        let outcome = match driven {
            Ok(Ok(o)) => o,
            Ok(Err(f)) => SessionOutcome::error(f.stage, f.message),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                SessionOutcome::error("internal", msg)
            }
        };
        if self.state.outcome.as_ref() != Some(&outcome) {
            if let Some(d) = &outcome.error_detail {
                let _ = self.log.record(
                    Role::Manager,
                    MessageKind::Error,
                    json!({ "stage": d.stage, "error": d.message }),
                );
            }
            let _ = self.record_stage(Role::Manager, "outcome", json!({ "outcome": outcome }));
            let _ = self.checkpoint("final");
        }
        SessionResult { outcome, state: self.state, log: self.log }
    }
}

/// Runs one instruction end to end. Never fails: every failure becomes an
/// error outcome naming the stage it came from.
pub fn run_session(
    instruction_text: &str,
    sources: &SourceCollection,
    config: &EngineConfig,
    providers: &Providers<'_>,
    log: SessionLog,
) -> SessionResult {
    let driver = Driver { sources, config, providers, log, state: SessionState::default() };
    driver.finish(Some(instruction_text))
}

/// Reconstructs the session at `checkpoint` and continues from there.
/// A new instruction replaces the old one and planning restarts; memory
/// recorded before the checkpoint is reused.
pub fn resume(
    mut log: SessionLog,
    checkpoint: &str,
    new_instruction: Option<&str>,
    sources: &SourceCollection,
    config: &EngineConfig,
    providers: &Providers<'_>,
) -> Result<SessionResult, SessionError> {
    let bound = log.checkpoint_seq(checkpoint)?;
    let prefix: Vec<Message> = log.messages().iter().filter(|m| m.seq <= bound).cloned().collect();
    replay_state(&prefix)?;
    log.record(
        Role::Manager,
        MessageKind::Checkpoint,
        json!({ "action": "resume", "checkpoint": checkpoint, "bound_seq": bound, "new_instruction": new_instruction }),
    )?;
    let state = replay_state(log.messages())?;
    let driver = Driver { sources, config, providers, log, state };
    Ok(driver.finish(new_instruction))
}

/// Memory-stage provider requests recorded after `after_seq`.
pub fn memory_calls_after(log: &SessionLog, after_seq: u64) -> usize {
    log.messages()
        .iter()
        .filter(|m| m.seq > after_seq && m.kind == MessageKind::ProviderRequest)
        .filter(|m| {
            m.payload
                .get("task")
                .and_then(Value::as_str)
                .and_then(crate::prompts::Task::from_name)
                .is_some_and(|t| t.is_memory_stage())
        })
        .count()
}

