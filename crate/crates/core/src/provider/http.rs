use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Completion, CompletionProvider, CompletionRequest, ProviderError, TextEmbeddingProvider};

/// Completion provider speaking the engine's JSON contract over HTTP:
/// `POST {endpoint}` with a [`CompletionRequest`] body, answered by `{"text": ...}`.
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    bearer: Option<String>,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, bearer: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            bearer,
        }
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn map_err(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(t) => ProviderError::Transport(format!("timeout: {t}")),
        other => ProviderError::Transport(other.to_string()),
    }
}

fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &B,
) -> Result<R, ProviderError> {
    let bytes = serde_json::to_vec(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send(&bytes[..]).map_err(map_err)?;
    let code = resp.status().as_u16();
    if !(200..300).contains(&code) {
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        return Err(ProviderError::Status { code, body });
    }
    resp.body_mut()
        .read_json::<R>()
        .map_err(|e| ProviderError::Malformed(e.to_string()))
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        post(&self.agent, &self.endpoint, self.bearer.as_deref(), request)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f32>,
}

/// Text embedder over HTTP: `POST {endpoint}` with `{"text": ...}` → `{"embedding": [...]}`.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    endpoint: String,
    bearer: Option<String>,
}

impl HttpEmbedder {
    pub fn new(endpoint: impl Into<String>, bearer: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: agent(timeout),
            endpoint: endpoint.into(),
            bearer,
        }
    }
}

impl TextEmbeddingProvider for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        let r: EmbedResponse = post(&self.agent, &self.endpoint, self.bearer.as_deref(), &EmbedRequest { text })?;
        Ok(r.embedding)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn serve_once(status: &str, body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let status = status.to_string();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth = line.trim().to_string();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            format!("{auth}|{}", String::from_utf8(buf).unwrap())
        });
        (format!("http://{addr}/complete"), handle)
    }

    #[test]
    fn posts_request_and_reads_text() {
        let (url, h) = serve_once("200 OK", r#"{"text":"hello"}"#);
        let p = HttpProvider::new(url, Some("sekret".into()), Duration::from_secs(5));
        let req = CompletionRequest { system: "s".into(), user: "u".into(), temperature: 0.0, seed: Some(3) };
        assert_eq!(p.complete(&req).unwrap().text, "hello");
        let seen = h.join().unwrap();
        assert!(seen.starts_with("authorization: Bearer sekret") || seen.starts_with("Authorization: Bearer sekret"));
        assert!(seen.contains("\"seed\":3"));
    }

    #[test]
    fn non_success_status_is_error() {
        let (url, h) = serve_once("503 Service Unavailable", r#"{"error":"busy"}"#);
        let p = HttpProvider::new(url, None, Duration::from_secs(5));
        let req = CompletionRequest { system: "s".into(), user: "u".into(), temperature: 0.0, seed: None };
        assert!(matches!(p.complete(&req), Err(ProviderError::Status { code: 503, .. })));
        h.join().unwrap();
    }

    #[test]
    fn embedder_reads_vector() {
        let (url, h) = serve_once("200 OK", r#"{"embedding":[0.6,0.8]}"#);
        let e = HttpEmbedder::new(url, None, Duration::from_secs(5));
        assert_eq!(e.embed("x").unwrap(), vec![0.6, 0.8]);
        h.join().unwrap();
    }
}
