use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cineforge_core::environment::{
    default_session_id, memory_calls_after, replay_state, resume as resume_session, run_session, EngineConfig,
    Message, NullRecorder, OutcomeStatus, Providers, SessionLog, SessionResult,
};
use cineforge_core::identity;
use cineforge_core::manifest::{load_manifest_with_warnings, SourceCollection};
use cineforge_core::memory::{build_memories, memory_path, save_memory, KeyframeBoundary};
use cineforge_core::metrics::{evaluate, GroundTruth, GroundTruthEntry, RunRecord, TcsVariant};
use cineforge_core::provider::{CompletionProvider, RecordingProvider};
use serde_json::json;

use crate::config::CliConfig;
use crate::Failure;

type CmdResult = Result<(), Failure>;

fn session<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Session(e.into())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

const ROLES: [&str; 6] = ["manager", "script", "director", "orchestrator", "editor", "provider"];
const KINDS: [&str; 8] =
    ["proposal", "grounding", "integration", "tool_call", "provider_request", "provider_response", "error", "checkpoint"];

#[derive(Debug, clap::Args)]
pub struct CompileArgs {
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub instruction: String,
    /// Write the EDL and command plan without running the assembler.
    #[arg(long)]
    pub dry_run: bool,
    /// Stop at the compiled script.
    #[arg(long, conflicts_with = "dry_run")]
    pub no_render: bool,
    /// Session id; defaults to a digest of the instruction and sources.
    #[arg(long)]
    pub session_id: Option<String>,
    /// Record every provider exchange to this JSONL transcript.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ResumeArgs {
    /// Session log path, or a session id under the output directory.
    #[arg(long)]
    pub session: String,
    #[arg(long, default_value = "post-memory")]
    pub checkpoint: String,
    /// Replace the instruction; planning restarts on the stored memory.
    #[arg(long)]
    pub instruction: Option<String>,
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    #[arg(long)]
    pub dry_run: bool,
    #[arg(long, conflicts_with = "dry_run")]
    pub no_render: bool,
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of session logs (`*.ndjson`), one per instruction.
    #[arg(long)]
    pub runs: PathBuf,
    /// Ground-truth JSON file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long = "manifest", required = true)]
    pub manifests: Vec<PathBuf>,
    /// Report directory; defaults to the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["duration", "count"])]
    pub tcs_variant: Option<String>,
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    pub log: PathBuf,
    #[arg(long)]
    pub role: Option<String>,
    #[arg(long)]
    pub kind: Option<String>,
    /// Print the timestamp-free canonical form instead of a timeline.
    #[arg(long, conflicts_with = "json")]
    pub canonical: bool,
    /// Print matching messages as JSON lines.
    #[arg(long)]
    pub json: bool,
}

fn load_sources(paths: &[PathBuf]) -> Result<SourceCollection, Failure> {
    let mut manifests = Vec::with_capacity(paths.len());
    for p in paths {
        let (m, _) = load_manifest_with_warnings(p).with_context(|| format!("loading {}", p.display())).map_err(session)?;
        manifests.push(m);
    }
    SourceCollection::new(manifests).map_err(session)
}

pub fn validate(paths: &[PathBuf]) -> CmdResult {
    let mut manifests = Vec::new();
    let mut failed = 0;
    for p in paths {
        match load_manifest_with_warnings(p) {
            Ok((m, warnings)) => {
                for w in &warnings {
                    println!("warning: {}: {w}", p.display());
                }
                println!(
                    "ok: {} ({} shots, {} characters, {} dialogue lines, dim {})",
                    p.display(),
                    m.shots.len(),
                    m.characters.len(),
                    m.dialogue_track.len(),
                    m.embedding_dim
                );
                manifests.push(m);
            }
            Err(e) => {
                failed += 1;
                let violations = e.violations();
                if violations.is_empty() {
                    println!("invalid: {}: {e}", p.display());
                } else {
                    println!("invalid: {}: {} violation(s)", p.display(), violations.len());
                    for v in violations {
                        println!("  {v}");
                    }
                }
            }
        }
    }
    if failed > 0 {
        return Err(session(anyhow!("{failed} of {} manifest(s) invalid", paths.len())));
    }
    if manifests.len() > 1 {
        SourceCollection::new(manifests).context("manifests cannot be combined").map_err(session)?;
    }
    Ok(())
}

pub fn analyze(paths: &[PathBuf], cfg: &CliConfig) -> CmdResult {
    let sources = load_sources(paths)?;
    let provider = cfg.completion_provider().map_err(Failure::Usage)?;
    let boundary = KeyframeBoundary { threshold: cfg.engine.event_threshold };
    let dir = cfg.engine.memory_dir.clone().unwrap_or_else(|| cfg.engine.output_dir.join("memory"));
    let manifests: Vec<_> = sources.iter().collect();
    let reports: Vec<_> = manifests.iter().map(|m| identity::analyze(m, &cfg.engine.identity)).collect();
    let jobs: Vec<_> = manifests.iter().copied().zip(reports.iter()).collect();
    let memories = build_memories(&jobs, provider.as_ref(), &boundary, &mut NullRecorder).map_err(session)?;
    for (m, mem) in manifests.iter().zip(&memories) {
        let path = memory_path(&dir, &m.source_id);
        save_memory(&path, &cineforge_core::manifest::content_hash(m), mem).map_err(session)?;
        println!(
            "{}: {} shots, {} events, {} profiles -> {}",
            m.source_id,
            mem.shot_summaries.len(),
            mem.events.len(),
            mem.profiles.len(),
            path.display()
        );
    }
    Ok(())
}

fn engine_config(cfg: &CliConfig, dry_run: bool, no_render: bool) -> EngineConfig {
    let mut e = cfg.engine.clone();
    e.dry_run |= dry_run;
    if no_render {
        e.render = false;
    }
    e
}

fn log_path(output_dir: &Path, session_id: &str) -> PathBuf {
    output_dir.join(format!("{session_id}.session.ndjson"))
}

/// Writes the script, EDL and render plan next to the log; returns their paths.
fn write_artifacts(result: &SessionResult, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let id = &result.log.session_id;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| -> anyhow::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if let Some(script) = result.script() {
        put(format!("{id}.script.json"), &script.to_json())?;
    }
    if let Some(edl) = &result.state.edl {
        put(format!("{id}.edl.json"), &edl.to_json())?;
        put(format!("{id}.edl.csv"), &edl.to_csv())?;
    }
    if let Some(plan) = &result.state.render_plan {
        put(format!("{id}.plan.sh"), &plan.to_text())?;
    }
    Ok(written)
}

fn report(result: &SessionResult, dir: &Path, extra: serde_json::Value) -> CmdResult {
    let artifacts = write_artifacts(result, dir).map_err(session)?;
    let o = &result.outcome;
    let mut summary = json!({
        "session_id": result.log.session_id,
        "status": o.status,
        "log": result.log.path(),
        "artifact": o.artifact,
        "files": artifacts,
        "rejection": o.rejection,
        "error": o.error_detail,
    });
    if let (Some(obj), Some(more)) = (summary.as_object_mut(), extra.as_object()) {
        obj.extend(more.clone());
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    match o.status {
        OutcomeStatus::Success | OutcomeStatus::Rejected => Ok(()),
        OutcomeStatus::Error => {
            let d = o.error_detail.as_ref();
            Err(session(anyhow!(
                "session failed at {}: {}",
                d.map_or("unknown", |d| d.stage.as_str()),
                d.map_or("", |d| d.message.as_str())
            )))
        }
    }
}

fn write_transcript(rec: &RecordingProvider<&dyn CompletionProvider>, path: &Path) -> CmdResult {
    rec.write_jsonl(path).with_context(|| format!("writing transcript {}", path.display())).map_err(session)
}

pub fn compile(args: &CompileArgs, cfg: &CliConfig) -> CmdResult {
    let sources = load_sources(&args.manifests)?;
    let engine = engine_config(cfg, args.dry_run, args.no_render);
    let provider = cfg.completion_provider().map_err(Failure::Usage)?;
    let recorder = RecordingProvider::new(provider.as_ref());
    let completion: &dyn CompletionProvider = if args.record.is_some() { &recorder } else { provider.as_ref() };
    let boundary = KeyframeBoundary { threshold: engine.event_threshold };
    let providers = Providers { completion, boundary: &boundary };

    let id = args.session_id.clone().unwrap_or_else(|| default_session_id(&args.instruction, &sources));
    let log = SessionLog::create(log_path(&engine.output_dir, &id), &id, engine.durable_log).map_err(session)?;
    let result = run_session(&args.instruction, &sources, &engine, &providers, log);
    if let Some(path) = &args.record {
        write_transcript(&recorder, path)?;
    }
    report(&result, &engine.output_dir, json!({}))
}

pub fn resume(args: &ResumeArgs, cfg: &CliConfig) -> CmdResult {
    let sources = load_sources(&args.manifests)?;
    let engine = engine_config(cfg, args.dry_run, args.no_render);
    let path = {
        let direct = PathBuf::from(&args.session);
        if direct.is_file() { direct } else { log_path(&engine.output_dir, &args.session) }
    };
    let log = SessionLog::open(&path, engine.durable_log)
        .with_context(|| format!("opening session log {}", path.display()))
        .map_err(session)?;
    let mark = log.last_seq();
    let provider = cfg.completion_provider().map_err(Failure::Usage)?;
    let recorder = RecordingProvider::new(provider.as_ref());
    let completion: &dyn CompletionProvider = if args.record.is_some() { &recorder } else { provider.as_ref() };
    let boundary = KeyframeBoundary { threshold: engine.event_threshold };
    let providers = Providers { completion, boundary: &boundary };
    let result = resume_session(log, &args.checkpoint, args.instruction.as_deref(), &sources, &engine, &providers)
        .map_err(session)?;
    if let Some(p) = &args.record {
        write_transcript(&recorder, p)?;
    }
    let calls = memory_calls_after(&result.log, mark);
    report(&result, &engine.output_dir, json!({ "resumed_from": args.checkpoint, "memory_calls": calls }))
}

fn log_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading runs directory {}", dir.display()))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    files.sort();
    Ok(files)
}

/// Matches a log to a ground-truth entry: by file stem first, then by instruction text.
fn instruction_id(path: &Path, raw: Option<&str>, entries: &[GroundTruthEntry]) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_suffix(".session.ndjson").or_else(|| name.strip_suffix(".ndjson"))?;
    entries
        .iter()
        .find(|e| e.instruction_id == stem)
        .or_else(|| entries.iter().find(|e| Some(e.instruction.as_str()) == raw))
        .map(|e| e.instruction_id.clone())
}

pub fn eval(args: &EvalArgs, cfg: &CliConfig) -> CmdResult {
    let sources = load_sources(&args.manifests)?;
    let text = std::fs::read_to_string(&args.gt).with_context(|| format!("reading {}", args.gt.display())).map_err(session)?;
    let entries: Vec<GroundTruthEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", args.gt.display())).map_err(session)?;
    let gts: Vec<GroundTruth> =
        entries.iter().map(|e| GroundTruth::resolve(e, &sources)).collect::<Result<_, _>>().map_err(session)?;

    let mut runs: BTreeMap<String, RunRecord> = BTreeMap::new();
    for path in log_files(&args.runs).map_err(session)? {
        let log = SessionLog::read(&path).with_context(|| format!("reading {}", path.display())).map_err(session)?;
        let state = replay_state(log.messages()).with_context(|| format!("replaying {}", path.display())).map_err(session)?;
        let raw = state.instruction.as_ref().map(|i| i.raw_text.as_str());
        let id = instruction_id(&path, raw, &entries)
            .ok_or_else(|| session(anyhow!("{} matches no ground-truth entry", path.display())))?;
        let run = RunRecord::from_state(&id, &state)
            .ok_or_else(|| session(anyhow!("{} has no final outcome", path.display())))?;
        if runs.insert(id.clone(), run).is_some() {
            return Err(session(anyhow!("more than one run for instruction `{id}`")));
        }
    }
    let runs: Vec<RunRecord> = runs.into_values().collect();

    let mut eval_cfg = cfg.eval.clone();
    if let Some(v) = &args.tcs_variant {
        eval_cfg.tcs_variant = if v == "count" { TcsVariant::Count } else { TcsVariant::Duration };
    }
    let judge = cfg.completion_provider().map_err(Failure::Usage)?;
    let embedder = cfg.embedder(sources.embedding_dim());
    let report = evaluate(&runs, &gts, &sources, embedder.as_ref(), judge.as_ref(), &eval_cfg).map_err(session)?;

    let out = args.out.clone().unwrap_or_else(|| cfg.engine.output_dir.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display())).map_err(session)?;
    let csv = report.to_csv().map_err(session)?;
    for (name, body) in [("report.json", report.to_json()), ("report.csv", csv), ("report.md", report.to_markdown())] {
        let path = out.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display())).map_err(session)?;
    }
    emit(&format!("{}reports written to {}\n", report.to_markdown(), out.display()))
}

/// One-line summary of a payload: its stage/task/verdict markers, then compact JSON.
fn digest(m: &Message) -> String {
    const WIDTH: usize = 100;
    let mut tags = Vec::new();
    for key in ["stage", "task", "blueprint_stage", "level", "verdict", "action", "label"] {
        if let Some(v) = m.payload.get(key).and_then(|v| v.as_str()) {
            tags.push(format!("{key}={v}"));
        }
    }
    let body = m.payload.to_string();
    let body = if body.chars().count() > WIDTH {
        format!("{}...", body.chars().take(WIDTH).collect::<String>())
    } else {
        body
    };
    if tags.is_empty() {
        body
    } else {
        format!("[{}] {body}", tags.join(" "))
    }
}

pub fn inspect(args: &InspectArgs) -> CmdResult {
    if let Some(r) = &args.role {
        if !ROLES.contains(&r.as_str()) {
            return Err(usage(format!("unknown role `{r}`; expected one of {}", ROLES.join(", "))));
        }
    }
    if let Some(k) = &args.kind {
        if !KINDS.contains(&k.as_str()) {
            return Err(usage(format!("unknown kind `{k}`; expected one of {}", KINDS.join(", "))));
        }
    }
    let log = SessionLog::read(&args.log).map_err(session)?;
    if args.canonical {
        return emit(&log.canonical());
    }
    let selected = log.messages().iter().filter(|m| {
        args.role.as_deref().is_none_or(|r| m.sender.as_str() == r)
            && args.kind.as_deref().is_none_or(|k| m.kind.as_str() == k)
    });
    let mut text = String::new();
    if args.json {
        for m in selected {
            text.push_str(&serde_json::to_string(m).expect("message serializes"));
            text.push('\n');
        }
        return emit(&text);
    }
    let checkpoints: Vec<String> = log.checkpoints().iter().map(|(k, v)| format!("{k}@{v}")).collect();
    text.push_str(&format!(
        "session {} ({} messages; checkpoints: {})\n",
        log.session_id,
        log.messages().len(),
        if checkpoints.is_empty() { "none".into() } else { checkpoints.join(", ") }
    ));
    for m in selected {
        text.push_str(&format!("{:>5}  {:<12} {:<17} {}\n", m.seq, m.sender.as_str(), m.kind.as_str(), digest(m)));
    }
    emit(&text)
}

/// Writes to stdout; a reader that hangs up early (`| head`) is not an error.
fn emit(text: &str) -> CmdResult {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(session(e)),
        _ => Ok(()),
    }
}
