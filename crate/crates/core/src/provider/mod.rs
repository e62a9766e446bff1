//! Language-model and embedding provider contracts.
//!
//! Every generative step in the engine goes through [`CompletionProvider`]:
//! a request of `{system, user, temperature, seed}` answered by `{text}`.
//! Implementations cover a local HTTP endpoint, transcript replay, scripted
//! closures for tests, and a deterministic offline heuristic provider.

mod heuristic;
mod http;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use heuristic::HeuristicProvider;
pub use http::{HttpEmbedder, HttpProvider};
pub use replay::{RecordingProvider, ReplayProvider, TranscriptEntry};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub user: String,
    pub temperature: f32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// The task tag from the template's first line (`task: name@version`).
    pub fn task(&self) -> Option<&str> {
        let first = self.system.lines().next()?;
        let tag = first.strip_prefix("task: ")?;
        Some(tag.split('@').next().unwrap_or(tag).trim())
    }

    /// Stable digest of the request, used as the replay key.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider timed out after {0:?}")]
    Timeout(Duration),
    #[error("provider returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("{0}")]
    Scripted(String),
}

pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for Arc<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: CompletionProvider + ?Sized> CompletionProvider for &T {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        (**self).complete(request)
    }
}

/// Maps text to a vector in the keyframe embedding space (used by SVC).
pub trait TextEmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError>;
}

type ScriptFn = dyn Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync;

/// A provider backed by a closure; counts its calls.
pub struct ScriptedProvider {
    script: Box<ScriptFn>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self {
            script: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_| Ok(text.clone()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionProvider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.script)(request).map(|text| Completion { text })
    }
}

/// Delegates to an inner provider until `fail_from` calls have been made,
/// then times out on every subsequent call.
pub struct FaultInjectingProvider<P> {
    inner: P,
    fail_from: usize,
    calls: AtomicUsize,
}

impl<P> FaultInjectingProvider<P> {
    pub fn new(inner: P, fail_from: usize) -> Self {
        Self {
            inner,
            fail_from,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: CompletionProvider> CompletionProvider for FaultInjectingProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n >= self.fail_from {
            return Err(ProviderError::Timeout(Duration::ZERO));
        }
        self.inner.complete(request)
    }
}

/// Bounds each call's wall time. A call that overruns is abandoned on its
/// worker thread and reported as [`ProviderError::Timeout`].
pub struct TimeoutProvider {
    inner: Arc<dyn CompletionProvider>,
    timeout: Duration,
}

impl TimeoutProvider {
    pub fn new(inner: Arc<dyn CompletionProvider>, timeout: Duration) -> Self {
        Self { inner, timeout }
    }
}

impl CompletionProvider for TimeoutProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let (tx, rx) = mpsc::channel();
        let inner = Arc::clone(&self.inner);
        let req = request.clone();
        std::thread::spawn(move || {
            let _ = tx.send(inner.complete(&req));
        });
        match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(ProviderError::Timeout(self.timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(ProviderError::Transport("provider worker panicked".into()))
            }
        }
    }
}

/// Deterministic stand-in embedder: unit vectors seeded from a hash of the text.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl TextEmbeddingProvider for HashEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let digest = Sha256::digest(text.as_bytes());
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let raw: Vec<f32> = (0..self.dim).map(|_| rng.random::<f32>() * 2.0 - 1.0).collect();
        Ok(crate::vector::normalized(&raw))
    }
}

/// Embedder returning fixed vectors per text, falling back to an error.
pub struct TableEmbedder {
    pub table: std::collections::HashMap<String, Vec<f32>>,
}

impl TextEmbeddingProvider for TableEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| ProviderError::Scripted(format!("no embedding for `{text}`")))
    }
}
