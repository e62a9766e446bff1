//! Append-only session log: newline-delimited JSON, one message per line,
//! behind a header line naming the format version and session id.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::provider::{CompletionProvider, CompletionRequest, ProviderError};

pub const LOG_FORMAT: &str = "cineforge-session-log";
pub const LOG_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Manager,
    Script,
    Director,
    Orchestrator,
    Editor,
    Provider,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Manager => "manager",
            Role::Script => "script",
            Role::Director => "director",
            Role::Orchestrator => "orchestrator",
            Role::Editor => "editor",
            Role::Provider => "provider",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Proposal,
    Grounding,
    Integration,
    ToolCall,
    ProviderRequest,
    ProviderResponse,
    Error,
    Checkpoint,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Proposal => "proposal",
            MessageKind::Grounding => "grounding",
            MessageKind::Integration => "integration",
            MessageKind::ToolCall => "tool_call",
            MessageKind::ProviderRequest => "provider_request",
            MessageKind::ProviderResponse => "provider_response",
            MessageKind::Error => "error",
            MessageKind::Checkpoint => "checkpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub timestamp: String,
    pub sender: Role,
    pub kind: MessageKind,
    pub payload: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: String,
    session_id: String,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("sequence violation: expected seq {expected}, got {found}")]
    SeqViolation { expected: u64, found: u64 },
    #[error("checkpoint label `{0}` already exists")]
    DuplicateCheckpoint(String),
    #[error("cannot checkpoint an empty log")]
    EmptyLog,
    #[error("unknown checkpoint `{0}`")]
    UnknownCheckpoint(String),
    #[error("corrupt log record at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("log I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Anything that can take a structured message. Engine stages report through
/// this so they can run against a live session log or a throwaway sink.
pub trait Recorder {
    fn record(&mut self, sender: Role, kind: MessageKind, payload: Value) -> Result<u64, LogError>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullRecorder;

impl Recorder for NullRecorder {
    fn record(&mut self, _: Role, _: MessageKind, _: Value) -> Result<u64, LogError> {
        Ok(0)
    }
}

/// Holds messages for later, in order. Lets concurrent stages record into
/// private buffers that are flushed into the session log deterministically.
#[derive(Debug, Default)]
pub struct MessageBuffer {
    pending: Vec<(Role, MessageKind, Value)>,
}

impl MessageBuffer {
    pub fn drain_into(self, rec: &mut dyn Recorder) -> Result<(), LogError> {
        for (sender, kind, payload) in self.pending {
            rec.record(sender, kind, payload)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

impl Recorder for MessageBuffer {
    fn record(&mut self, sender: Role, kind: MessageKind, payload: Value) -> Result<u64, LogError> {
        self.pending.push((sender, kind, payload));
        Ok(self.pending.len() as u64)
    }
}

struct Sink {
    path: PathBuf,
    file: File,
    durable: bool,
}

pub struct SessionLog {
    pub session_id: String,
    messages: Vec<Message>,
    checkpoints: BTreeMap<String, u64>,
    sink: Option<Sink>,
}

impl std::fmt::Debug for SessionLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionLog")
            .field("session_id", &self.session_id)
            .field("messages", &self.messages.len())
            .field("checkpoints", &self.checkpoints)
            .finish()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl SessionLog {
    /// An in-memory log with no file behind it.
    pub fn in_memory(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            messages: Vec::new(),
            checkpoints: BTreeMap::new(),
            sink: None,
        }
    }

    /// Creates (truncating) a log file and writes its header.
    pub fn create(path: impl AsRef<Path>, session_id: impl Into<String>, durable: bool) -> Result<Self, LogError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
        let mut file = File::create(path).map_err(io_err(path))?;
        let session_id = session_id.into();
        let header = Header {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION.into(),
            session_id: session_id.clone(),
        };
        serde_json::to_writer(&mut file, &header).expect("header serializes");
        file.write_all(b"\n").map_err(io_err(path))?;
        if durable {
            file.sync_all().map_err(io_err(path))?;
        }
        Ok(Self {
            session_id,
            messages: Vec::new(),
            checkpoints: BTreeMap::new(),
            sink: Some(Sink {
                path: path.to_path_buf(),
                file,
                durable,
            }),
        })
    }

    /// Replays a log file, validating every record. The file stays open for appends.
    pub fn open(path: impl AsRef<Path>, durable: bool) -> Result<Self, LogError> {
        let path = path.as_ref();
        let mut log = Self::read(path)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        log.sink = Some(Sink {
            path: path.to_path_buf(),
            file,
            durable,
        });
        Ok(log)
    }

    /// Reads and validates a log file without opening it for writing.
    pub fn read(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_err(path))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or(LogError::Corrupt { line: 1, message: "missing header".into() })?
            .map_err(io_err(path))?;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| LogError::Corrupt {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(LogError::Corrupt {
                line: 1,
                message: format!("unsupported log format {} v{}", header.format, header.version),
            });
        }
        let mut log = Self::in_memory(header.session_id);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let msg: Message = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
                line: lineno,
                message: e.to_string(),
            })?;
            log.push_validated(msg).map_err(|e| LogError::Corrupt {
                line: lineno,
                message: e.to_string(),
            })?;
        }
        Ok(log)
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|s| s.path.as_path())
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn checkpoints(&self) -> &BTreeMap<String, u64> {
        &self.checkpoints
    }

    pub fn last_seq(&self) -> u64 {
        self.messages.last().map_or(0, |m| m.seq)
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    fn push_validated(&mut self, msg: Message) -> Result<(), LogError> {
        let expected = self.last_seq() + 1;
        if msg.seq != expected {
            return Err(LogError::SeqViolation {
                expected,
                found: msg.seq,
            });
        }
        if msg.kind == MessageKind::Checkpoint {
            if let Some(label) = msg.payload.get("checkpoint_id").and_then(Value::as_str) {
                let bound = msg.payload.get("bound_seq").and_then(Value::as_u64).unwrap_or(0);
                if bound == 0 || bound >= msg.seq {
                    return Err(LogError::Corrupt {
                        line: 0,
                        message: format!("checkpoint `{label}` bound to invalid seq {bound}"),
                    });
                }
                if self.checkpoints.insert(label.to_string(), bound).is_some() {
                    return Err(LogError::DuplicateCheckpoint(label.to_string()));
                }
            }
        }
        self.messages.push(msg);
        Ok(())
    }

    /// Appends a fully formed message; its seq must be exactly last + 1.
    pub fn append(&mut self, msg: Message) -> Result<(), LogError> {
        let line = serde_json::to_string(&msg).expect("message serializes");
        self.push_validated(msg)?;
        if let Some(sink) = self.sink.as_mut() {
            let path = sink.path.clone();
            sink.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
            sink.file.write_all(b"\n").map_err(io_err(&path))?;
            if sink.durable {
                sink.file.sync_data().map_err(io_err(&path))?;
            }
        }
        Ok(())
    }

    /// Binds `label` to the current last seq and records the binding.
    pub fn checkpoint(&mut self, label: &str) -> Result<String, LogError> {
        if self.messages.is_empty() {
            return Err(LogError::EmptyLog);
        }
        if self.checkpoints.contains_key(label) {
            return Err(LogError::DuplicateCheckpoint(label.to_string()));
        }
        let bound = self.last_seq();
        self.record(
            Role::Manager,
            MessageKind::Checkpoint,
            serde_json::json!({ "checkpoint_id": label, "bound_seq": bound }),
        )?;
        Ok(label.to_string())
    }

    pub fn checkpoint_seq(&self, label: &str) -> Result<u64, LogError> {
        self.checkpoints
            .get(label)
            .copied()
            .ok_or_else(|| LogError::UnknownCheckpoint(label.to_string()))
    }

    /// Messages as JSON lines with timestamps removed, for golden comparisons.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let v = serde_json::json!({
                "seq": m.seq,
                "sender": m.sender,
                "kind": m.kind,
                "payload": m.payload,
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

impl Recorder for SessionLog {
    fn record(&mut self, sender: Role, kind: MessageKind, payload: Value) -> Result<u64, LogError> {
        let seq = self.last_seq() + 1;
        self.append(Message {
            seq,
            timestamp: chrono::Utc::now().to_rfc3339(),
            sender,
            kind,
            payload,
        })?;
        Ok(seq)
    }
}

#[derive(Debug, Error)]
pub enum ExchangeError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// Sends one request on behalf of `role`, logging both directions.
pub fn exchange(
    provider: &dyn CompletionProvider,
    rec: &mut dyn Recorder,
    role: Role,
    request: &CompletionRequest,
) -> Result<String, ExchangeError> {
    rec.record(
        role,
        MessageKind::ProviderRequest,
        serde_json::json!({
            "task": request.task(),
            "digest": request.digest(),
            "request": request,
        }),
    )?;
    match provider.complete(request) {
        Ok(c) => {
            rec.record(
                Role::Provider,
                MessageKind::ProviderResponse,
                serde_json::json!({ "to": role, "task": request.task(), "text": c.text }),
            )?;
            Ok(c.text)
        }
        Err(e) => {
            rec.record(
                Role::Provider,
                MessageKind::Error,
                serde_json::json!({ "to": role, "task": request.task(), "error": e.to_string() }),
            )?;
            Err(e.into())
        }
    }
}
