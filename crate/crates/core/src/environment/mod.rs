//! The compilation environment: instruction parsing, manager supervision,
//! the session log, and checkpoint/resume.

mod config;
mod instruction;
mod log;
mod session;

pub use config::EngineConfig;
pub use instruction::{
    catalog, parse_instruction, Instruction, InstructionError, RequestedEdit, TargetDescriptor, TargetKind,
    TemporalKind, TemporalRequirement,
};
pub use log::{
    exchange, ExchangeError, LogError, Message, MessageBuffer, MessageKind, NullRecorder, Recorder, Role,
    SessionLog, LOG_FORMAT, LOG_VERSION,
};
pub use session::{
    default_session_id, memory_calls_after, recruit, replay_state, resume, run_session, Artifact, ErrorDetail, OutcomeStatus,
    Providers, SessionError, SessionOutcome, SessionResult, SessionState,
};
