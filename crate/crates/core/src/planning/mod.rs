//! The design phase: the director drafts a staged blueprint and proposes
//! queries; the orchestrator grounds each proposal against memory, top-down,
//! until every stage resolves to concrete shots or the request is refused.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{
    exchange, ExchangeError, Instruction, LogError, MessageKind, Recorder, RequestedEdit, Role,
    TemporalKind,
};
use crate::manifest::GlobalShotRef;
use crate::memory::{EvidenceRef, Level, MemoryBank};
use crate::prompts::{
    self, extract_json, DraftBlueprintInput, DraftBlueprintOutput, ProposeInput, ProposeOutput, Synopsis,
    Task, INFEASIBLE_TOKEN,
};
use crate::provider::CompletionProvider;

pub const MIN_STAGES: usize = 3;
pub const MAX_STAGES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundedLevels {
    pub story: bool,
    pub character: bool,
    pub event: bool,
    pub shot: bool,
}

impl GroundedLevels {
    pub fn get(&self, level: Level) -> bool {
        match level {
            Level::Story => self.story,
            Level::Character => self.character,
            Level::Event => self.event,
            Level::Shot => self.shot,
        }
    }

    fn set(&mut self, level: Level) {
        match level {
            Level::Story => self.story = true,
            Level::Character => self.character = true,
            Level::Event => self.event = true,
            Level::Shot => self.shot = true,
        }
    }

    pub fn lowest_ungrounded(&self) -> Option<Level> {
        Level::ALL.into_iter().find(|l| !self.get(*l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub intent: String,
    pub evidence: Vec<EvidenceRef>,
    pub resolved_shots: Vec<GlobalShotRef>,
    pub grounded: GroundedLevels,
}

impl Stage {
    pub fn new(name: impl Into<String>, intent: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            intent: intent.into(),
            evidence: Vec::new(),
            resolved_shots: Vec::new(),
            grounded: GroundedLevels::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlueprintStatus {
    Drafting,
    Grounded,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blueprint {
    pub stages: Vec<Stage>,
    pub iteration: u32,
    pub status: BlueprintStatus,
}

impl Blueprint {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages, iteration: 0, status: BlueprintStatus::Drafting }
    }

    /// The first stage with an ungrounded level, and that level.
    pub fn next_target(&self) -> Option<(usize, Level)> {
        self.stages
            .iter()
            .enumerate()
            .find_map(|(i, s)| s.grounded.lowest_ungrounded().map(|l| (i, l)))
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub stage_name: String,
    pub target_level: Level,
    pub query: crate::memory::QuerySpec,
    pub rationale: String,
}

impl Proposal {
    /// Structural equality of what is asked, ignoring the rationale.
    pub fn same_request(&self, other: &Proposal) -> bool {
        self.stage_name == other.stage_name
            && self.target_level == other.target_level
            && self.query == other.query
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Grounded,
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingResult {
    pub proposal: Proposal,
    pub matched: Vec<EvidenceRef>,
    pub verdict: Verdict,
    /// Why a query could not be evaluated (unknown source or character).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: String,
    pub failed_proposals: Vec<Proposal>,
    pub iterations_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub shot: GlobalShotRef,
    pub stage_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledScript {
    pub entries: Vec<ScriptEntry>,
    pub editing_requests: Vec<RequestedEdit>,
    pub provenance: Blueprint,
}

impl CompiledScript {
    pub fn shots(&self) -> Vec<GlobalShotRef> {
        self.entries.iter().map(|e| e.shot.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("script serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum PlanOutcome {
    Script(CompiledScript),
    Rejected(Rejection),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    pub max_iterations: u32,
    pub per_stage_cap: u32,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { max_iterations: 40, per_stage_cap: 12 }
    }
}

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("{task} provider call failed: {source}")]
    Provider {
        task: &'static str,
        #[source]
        source: ExchangeError,
    },
    #[error("unparsable stage list: {0}")]
    UnparsableBlueprint(String),
    #[error("unparsable proposal: {0}")]
    UnparsableProposal(String),
    #[error("blueprint has no ungrounded stage")]
    NothingToPropose,
    #[error("grounding result refers to stage `{0}`, which is not in the blueprint")]
    StageMismatch(String),
    #[error("stage `{stage}` cannot ground {level} before {expected}")]
    LevelOrder { stage: String, level: Level, expected: Level },
    #[error(transparent)]
    Log(#[from] LogError),
}

impl PlanningError {
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            PlanningError::Provider {
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
) -> Result<String, PlanningError> {
    let req = prompts::request(task, input);
    match exchange(provider, rec, Role::Director, &req) {
        Ok(t) => Ok(t),
        Err(ExchangeError::Log(e)) => Err(e.into()),
        Err(source) => Err(PlanningError::Provider { task: task.name(), source }),
    }
}

fn parse_stages(text: &str) -> Result<Vec<Stage>, String> {
    let json = extract_json(text).ok_or("no JSON object in reply")?;
    let out: DraftBlueprintOutput = serde_json::from_str(json).map_err(|e| e.to_string())?;
    let n = out.stages.len();
    if !(MIN_STAGES..=MAX_STAGES).contains(&n) {
        return Err(format!("expected {MIN_STAGES}-{MAX_STAGES} stages, got {n}"));
    }
    let mut stages: Vec<Stage> = Vec::with_capacity(n);
    for s in out.stages {
        let name = s.name.trim();
        if name.is_empty() {
            return Err("stage with empty name".into());
        }
        if stages.iter().any(|x| x.name == name) {
            return Err(format!("duplicate stage name `{name}`"));
        }
        stages.push(Stage::new(name, s.intent.trim()));
    }
    Ok(stages)
}

/// Asks the director for a staged plan; one repair retry on an unusable reply.
pub fn draft_blueprint(
    instruction: &Instruction,
    synopses: &[Synopsis],
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<Blueprint, PlanningError> {
    let mut input = DraftBlueprintInput {
        instruction: instruction.clone(),
        synopses: synopses.to_vec(),
        repair: None,
    };
    let first = ask(provider, rec, Task::DraftBlueprint, &input)?;
    let stages = match parse_stages(&first) {
        Ok(s) => s,
        Err(why) => {
            input.repair = Some(why);
            let second = ask(provider, rec, Task::DraftBlueprint, &input)?;
            parse_stages(&second).map_err(PlanningError::UnparsableBlueprint)?
        }
    };
    Ok(Blueprint::new(stages))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProposalOutcome {
    Proposal(Proposal),
    Infeasible(String),
}

/// Context the director sees besides the blueprint.
#[derive(Debug, Clone, Default)]
pub struct DirectorContext<'a> {
    pub failed: &'a [Proposal],
    pub feedback: Option<&'a GroundingResult>,
    pub manager_feedback: Option<&'a str>,
}

/// Asks the director for the next proposal: first ungrounded stage, lowest ungrounded level.
pub fn propose(
    blueprint: &Blueprint,
    instruction: &Instruction,
    bank: &MemoryBank,
    ctx: &DirectorContext<'_>,
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
) -> Result<ProposalOutcome, PlanningError> {
    let (si, level) = blueprint.next_target().ok_or(PlanningError::NothingToPropose)?;
    let stage_name = blueprint.stages[si].name.clone();
    let mut input = ProposeInput {
        instruction: instruction.clone(),
        blueprint: blueprint.clone(),
        stage_name: stage_name.clone(),
        target_level: level,
        index: bank.index(),
        failed: ctx.failed.to_vec(),
        feedback: ctx.feedback.filter(|f| f.verdict == Verdict::Unsupported).cloned(),
        manager_feedback: ctx.manager_feedback.map(str::to_string),
    };
    let mut last_error = String::new();
    for _ in 0..2 {
        let text = ask(provider, rec, Task::Propose, &input)?;
        if let Some(pos) = text.find(INFEASIBLE_TOKEN) {
            let reason = text[pos + INFEASIBLE_TOKEN.len()..].trim();
            let reason = if reason.is_empty() { "no reason given" } else { reason };
            return Ok(ProposalOutcome::Infeasible(reason.to_string()));
        }
        let parsed = extract_json(&text)
            .ok_or_else(|| "no JSON object in reply".to_string())
            .and_then(|j| serde_json::from_str::<ProposeOutput>(j).map_err(|e| e.to_string()));
        match parsed {
            Ok(out) => {
                return Ok(ProposalOutcome::Proposal(Proposal {
                    stage_name,
                    target_level: level,
                    query: out.query,
                    rationale: out.rationale,
                }))
            }
            Err(e) => {
                input.manager_feedback = Some(format!("previous reply was unusable: {e}"));
                last_error = e;
            }
        }
    }
    Err(PlanningError::UnparsableProposal(last_error))
}

/// Deterministic lookup of a proposal in memory. Never fails: unknown
/// entities make the verdict unsupported.
pub fn ground(proposal: &Proposal, bank: &MemoryBank) -> GroundingResult {
    let (matched, note) = match bank.query(proposal.target_level, &proposal.query) {
        Ok(m) => (m, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    let verdict = if matched.is_empty() { Verdict::Unsupported } else { Verdict::Grounded };
    GroundingResult { proposal: proposal.clone(), matched, verdict, note }
}

/// Folds a grounding result into the blueprint.
pub fn integrate(blueprint: &Blueprint, result: &GroundingResult) -> Result<Blueprint, PlanningError> {
    let name = &result.proposal.stage_name;
    let si = blueprint
        .stage_index(name)
        .ok_or_else(|| PlanningError::StageMismatch(name.clone()))?;
    let mut next = blueprint.clone();
    next.iteration += 1;
    if result.verdict == Verdict::Unsupported || result.matched.is_empty() {
        return Ok(next);
    }
    let level = result.proposal.target_level;
    let stage = &mut next.stages[si];
    let expected = stage.grounded.lowest_ungrounded();
    if expected != Some(level) {
        return Err(PlanningError::LevelOrder {
            stage: name.clone(),
            level,
            expected: expected.unwrap_or(Level::Shot),
        });
    }
    stage.evidence.extend(result.matched.iter().cloned());
    stage.grounded.set(level);
    if level == Level::Shot {
        let mut shots: Vec<GlobalShotRef> = result
            .matched
            .iter()
            .filter_map(|r| match r {
                EvidenceRef::Shot { shot } => Some(shot.clone()),
                _ => None,
            })
            .collect();
        shots.sort();
        shots.dedup();
        stage.resolved_shots = shots;
    }
    if next.next_target().is_none() {
        next.status = BlueprintStatus::Grounded;
    }
    Ok(next)
}

/// Orders the grounded shots into the final script per the temporal requirement.
/// A shot resolved by several stages keeps the earliest stage.
pub fn finalize(blueprint: &Blueprint, instruction: &Instruction) -> CompiledScript {
    let mut entries: Vec<ScriptEntry> = Vec::new();
    for stage in &blueprint.stages {
        for shot in &stage.resolved_shots {
            if !entries.iter().any(|e| &e.shot == shot) {
                entries.push(ScriptEntry { shot: shot.clone(), stage_name: stage.name.clone() });
            }
        }
    }
    match instruction.temporal_requirement.kind {
        TemporalKind::Chronological | TemporalKind::Extractive => {
            entries.sort_by(|a, b| a.shot.cmp(&b.shot));
        }
        // Stage order is already preserved and each stage's shots are sorted.
        TemporalKind::NonLinear => {}
    }
    CompiledScript {
        entries,
        editing_requests: instruction.editing_operations.clone(),
        provenance: blueprint.clone(),
    }
}

fn reject(
    rec: &mut dyn Recorder,
    reason: String,
    failed: Vec<Proposal>,
    iterations_used: u32,
) -> Result<PlanOutcome, PlanningError> {
    let rejection = Rejection { reason, failed_proposals: failed, iterations_used };
    rec.record(
        Role::Orchestrator,
        MessageKind::Integration,
        serde_json::json!({ "stage": "rejection", "rejection": rejection }),
    )?;
    Ok(PlanOutcome::Rejected(rejection))
}

fn describe_failure(r: &GroundingResult) -> String {
    let q = &r.proposal.query;
    let mut s = format!(
        "stage `{}` found no {} evidence",
        r.proposal.stage_name, r.proposal.target_level
    );
    if !q.characters.is_empty() {
        s.push_str(&format!(" for characters [{}]", q.characters.join(", ")));
    }
    if !q.terms.is_empty() {
        s.push_str(&format!(" with terms [{}]", q.terms.join(", ")));
    }
    if let Some(n) = &r.note {
        s.push_str(&format!(" ({n})"));
    }
    s
}

/// Runs draft, then propose/ground/integrate until every stage is grounded at
/// shot level, the director declares infeasibility, or the budget runs out.
pub fn plan(
    instruction: &Instruction,
    bank: &MemoryBank,
    provider: &dyn CompletionProvider,
    cfg: &PlanConfig,
    manager_feedback: Option<&str>,
    rec: &mut dyn Recorder,
) -> Result<PlanOutcome, PlanningError> {
    if cfg.max_iterations == 0 {
        return reject(rec, "iteration budget is zero".into(), Vec::new(), 0);
    }
    let mut bp = draft_blueprint(instruction, &bank.synopses(), provider, rec)?;
    rec.record(
        Role::Director,
        MessageKind::Integration,
        serde_json::json!({ "stage": "blueprint_draft", "blueprint": bp }),
    )?;

    let mut failed_all: Vec<Proposal> = Vec::new();
    let mut failed_here: Vec<Proposal> = Vec::new();
    let mut feedback: Option<GroundingResult> = None;
    let mut last_failure: Option<GroundingResult> = None;
    let mut steps_per_stage: HashMap<usize, u32> = HashMap::new();
    let mut target = bp.next_target();

    while let Some((si, level)) = target {
        if bp.iteration >= cfg.max_iterations {
            let mut reason = format!("iteration budget of {} exhausted", cfg.max_iterations);
            if let Some(f) = &last_failure {
                reason.push_str(&format!("; last failure: {}", describe_failure(f)));
            }
            return reject(rec, reason, failed_all, bp.iteration);
        }
        let steps = steps_per_stage.entry(si).or_default();
        if *steps >= cfg.per_stage_cap {
            let mut reason = format!(
                "stage `{}` exceeded its cap of {} steps",
                bp.stages[si].name, cfg.per_stage_cap
            );
            if let Some(f) = &last_failure {
                reason.push_str(&format!("; last failure: {}", describe_failure(f)));
            }
            return reject(rec, reason, failed_all, bp.iteration);
        }
        *steps += 1;

        let ctx = DirectorContext {
            failed: &failed_here,
            feedback: feedback.as_ref(),
            manager_feedback,
        };
        let proposal = match propose(&bp, instruction, bank, &ctx, provider, rec)? {
            ProposalOutcome::Infeasible(why) => {
                rec.record(
                    Role::Director,
                    MessageKind::Proposal,
                    serde_json::json!({ "infeasible": why, "stage": bp.stages[si].name, "level": level }),
                )?;
                let mut reason = format!("director declared the request infeasible: {why}");
                if let Some(f) = &last_failure {
                    reason.push_str(&format!("; last failure: {}", describe_failure(f)));
                }
                return reject(rec, reason, failed_all, bp.iteration);
            }
            ProposalOutcome::Proposal(p) => p,
        };
        rec.record(Role::Director, MessageKind::Proposal, serde_json::to_value(&proposal).expect("serializes"))?;
        if failed_here.last().is_some_and(|prev| prev.same_request(&proposal)) {
            failed_all.push(proposal.clone());
            let reason = format!(
                "director repeated a failed proposal for stage `{}` at {} level; {}",
                proposal.stage_name,
                level,
                last_failure.as_ref().map(describe_failure).unwrap_or_default()
            );
            return reject(rec, reason, failed_all, bp.iteration);
        }

        let result = ground(&proposal, bank);
        rec.record(Role::Orchestrator, MessageKind::Grounding, serde_json::to_value(&result).expect("serializes"))?;
        bp = integrate(&bp, &result)?;
        rec.record(
            Role::Orchestrator,
            MessageKind::Integration,
            serde_json::json!({
                "stage": "grounding_step",
                "iteration": bp.iteration,
                "blueprint_stage": proposal.stage_name,
                "level": level,
                "verdict": result.verdict,
            }),
        )?;
        let next = bp.next_target();
        if result.verdict == Verdict::Unsupported {
            failed_here.push(proposal.clone());
            failed_all.push(proposal);
            last_failure = Some(result.clone());
            feedback = Some(result);
        } else {
            feedback = None;
            if next != target {
                failed_here.clear();
            }
        }
        target = next;
    }
    Ok(PlanOutcome::Script(finalize(&bp, instruction)))
}
