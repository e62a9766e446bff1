use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionProvider, CompletionRequest, ProviderError};

/// One recorded exchange; `response` is `None` when the call failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: CompletionRequest,
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Serves recorded responses for byte-identical requests. Repeated requests
/// are answered in recorded order; past the end the last answer repeats.
pub struct ReplayProvider {
    table: HashMap<String, Vec<Result<String, String>>>,
    cursor: Mutex<HashMap<String, usize>>,
}

impl ReplayProvider {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut table: HashMap<String, Vec<Result<String, String>>> = HashMap::new();
        for e in entries {
            let answer = match e.response {
                Some(t) => Ok(t),
                None => Err(e.error.unwrap_or_else(|| "recorded failure".into())),
            };
            table.entry(e.request.digest()).or_default().push(answer);
        }
        Self {
            table,
            cursor: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }

    pub fn len(&self) -> usize {
        self.table.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl CompletionProvider for ReplayProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let key = request.digest();
        let answers = self
            .table
            .get(&key)
            .ok_or_else(|| ProviderError::ReplayMiss(key.clone()))?;
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let i = cursor.entry(key).or_insert(0);
        let answer = &answers[(*i).min(answers.len() - 1)];
        *i += 1;
        match answer {
            Ok(text) => Ok(Completion { text: text.clone() }),
            Err(e) => Err(ProviderError::Scripted(e.clone())),
        }
    }
}

/// Wraps a provider and keeps a transcript of every exchange.
pub struct RecordingProvider<P> {
    inner: P,
    entries: Mutex<Vec<TranscriptEntry>>,
}

impl<P> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            entries: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<TranscriptEntry> {
        self.entries.lock().expect("transcript poisoned").clone()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        for e in self.entries() {
            serde_json::to_writer(&mut f, &e)?;
            f.write_all(b"\n")?;
        }
        f.sync_all()
    }
}

impl<P: CompletionProvider> CompletionProvider for RecordingProvider<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let result = self.inner.complete(request);
        let entry = TranscriptEntry {
            request: request.clone(),
            response: result.as_ref().ok().map(|c| c.text.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        self.entries.lock().expect("transcript poisoned").push(entry);
        result
    }
}
