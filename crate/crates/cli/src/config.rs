//! Layered configuration: flags > environment > config file > defaults.
//!
//! The file is TOML. Engine keys sit at the top level (`max_iterations`
//! lives under `[plan]`, thresholds under `[identity]`), next to a
//! `[provider]` table and an `[eval]` table.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use cineforge_core::environment::EngineConfig;
use cineforge_core::metrics::EvalConfig;
use cineforge_core::provider::{
    CompletionProvider, HashEmbedder, HeuristicProvider, HttpEmbedder, HttpProvider, ReplayProvider,
    TextEmbeddingProvider, TimeoutProvider,
};
use serde::{Deserialize, Serialize};

pub const DEFAULT_KEY_ENV: &str = "CINEFORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Deterministic rule-based provider; needs no network.
    #[default]
    Heuristic,
    /// Local HTTP endpoint speaking the completion contract.
    Http,
    /// Answers from a recorded transcript.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: Option<String>,
    pub embed_endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token. The token
    /// itself is never read from flags or the file.
    pub api_key_env: String,
    pub transcript: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Heuristic,
            endpoint: None,
            embed_endpoint: None,
            api_key_env: DEFAULT_KEY_ENV.into(),
            transcript: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CliConfig {
    pub engine: EngineConfig,
    pub provider: ProviderConfig,
    pub eval: EvalConfig,
}

/// Overrides gathered from flags and their environment variables.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Directory for rendered output, EDLs and session logs.
    #[arg(long, global = true, env = "CINEFORGE_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Directory holding `<source_id>.mp4` media files.
    #[arg(long, global = true, env = "CINEFORGE_MEDIA_ROOT")]
    pub media_root: Option<PathBuf>,
    /// Directory with the music/cover `index.json`.
    #[arg(long, global = true, env = "CINEFORGE_ASSET_DIR")]
    pub asset_dir: Option<PathBuf>,
    /// Where persisted memory documents live.
    #[arg(long, global = true, env = "CINEFORGE_MEMORY_DIR")]
    pub memory_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "CINEFORGE_MAX_ITERATIONS")]
    pub max_iterations: Option<u32>,
    #[arg(long, global = true, env = "CINEFORGE_PROVIDER_TIMEOUT")]
    pub provider_timeout_s: Option<u64>,
    #[arg(long, global = true, value_enum, env = "CINEFORGE_PROVIDER")]
    pub provider: Option<ProviderKind>,
    #[arg(long, global = true, env = "CINEFORGE_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, env = "CINEFORGE_EMBED_ENDPOINT")]
    pub embed_endpoint: Option<String>,
    /// Transcript answered by the replay provider.
    #[arg(long, global = true, env = "CINEFORGE_TRANSCRIPT")]
    pub transcript: Option<PathBuf>,
}

impl CliConfig {
    pub fn parse_toml(text: &str) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text)?;
        let provider = match table.remove("provider") {
            Some(v) => v.try_into().context("in [provider]")?,
            None => ProviderConfig::default(),
        };
        let eval = match table.remove("eval") {
            Some(v) => v.try_into().context("in [eval]")?,
            None => EvalConfig::default(),
        };
        let engine: EngineConfig = toml::Value::Table(table).try_into()?;
        Ok(Self { engine, provider, eval })
    }

    /// Reads the config file if given, then applies overrides and checks the result.
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(o);
        cfg.engine.check().map_err(anyhow::Error::msg)?;
        if cfg.eval.judge_concurrency == 0 {
            bail!("eval.judge_concurrency must be positive");
        }
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        let e = &mut self.engine;
        if let Some(v) = &o.output_dir {
            e.output_dir = v.clone();
        }
        if let Some(v) = &o.media_root {
            e.media_root = v.clone();
        }
        if let Some(v) = &o.asset_dir {
            e.asset_dir = Some(v.clone());
        }
        if let Some(v) = &o.memory_dir {
            e.memory_dir = Some(v.clone());
        }
        if let Some(v) = o.max_iterations {
            e.plan.max_iterations = v;
        }
        if let Some(v) = o.provider_timeout_s {
            e.provider_timeout_s = v;
        }
        let p = &mut self.provider;
        if let Some(v) = o.provider {
            p.kind = v;
        }
        if let Some(v) = &o.endpoint {
            p.endpoint = Some(v.clone());
        }
        if let Some(v) = &o.embed_endpoint {
            p.embed_endpoint = Some(v.clone());
        }
        if let Some(v) = &o.transcript {
            p.transcript = Some(v.clone());
        }
    }

    fn bearer(&self) -> Option<String> {
        std::env::var(&self.provider.api_key_env).ok().filter(|k| !k.is_empty())
    }

    /// Builds the completion provider, bounded by the configured timeout.
    pub fn completion_provider(&self) -> Result<Box<dyn CompletionProvider>> {
        let timeout = self.engine.provider_timeout();
        let inner: Arc<dyn CompletionProvider> = match self.provider.kind {
            ProviderKind::Heuristic => Arc::new(HeuristicProvider),
            ProviderKind::Http => {
                let Some(url) = &self.provider.endpoint else {
                    bail!("provider.kind = \"http\" needs provider.endpoint or --endpoint");
                };
                Arc::new(HttpProvider::new(url.clone(), self.bearer(), timeout))
            }
            ProviderKind::Replay => {
                let Some(path) = &self.provider.transcript else {
                    bail!("provider.kind = \"replay\" needs provider.transcript or --transcript");
                };
                let replay = ReplayProvider::from_file(path)
                    .with_context(|| format!("reading transcript {}", path.display()))?;
                Arc::new(replay)
            }
        };
        Ok(Box::new(TimeoutProvider::new(inner, timeout)))
    }

    /// Text embedder for SVC. Without an endpoint, a deterministic hash embedder is used.
    pub fn embedder(&self, dim: usize) -> Box<dyn TextEmbeddingProvider> {
        match &self.provider.embed_endpoint {
            Some(url) => Box::new(HttpEmbedder::new(url.clone(), self.bearer(), self.engine.provider_timeout())),
            None => Box::new(HashEmbedder::new(dim)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_keys_reach_nested_engine_settings() {
        let cfg = CliConfig::parse_toml(
            r#"
            output_dir = "renders"
            [identity]
            link_threshold = 0.8
            [plan]
            max_iterations = 7
            [provider]
            kind = "http"
            endpoint = "http://localhost:9000"
            [eval]
            tcs_variant = "count"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.engine.output_dir, PathBuf::from("renders"));
        assert_eq!(cfg.engine.identity.link_threshold, 0.8);
        assert_eq!(cfg.engine.plan.max_iterations, 7);
        assert_eq!(cfg.engine.plan.per_stage_cap, 12);
        assert_eq!(cfg.provider.kind, ProviderKind::Http);
        assert_eq!(cfg.provider.api_key_env, DEFAULT_KEY_ENV);
        assert_eq!(cfg.eval.judge_concurrency, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(CliConfig::parse_toml("max_iteratons = 3").is_err());
        assert!(CliConfig::parse_toml("[provider]\napi_key = \"secret\"").is_err());
    }

    #[test]
    fn overrides_beat_the_file() {
        let mut cfg = CliConfig::parse_toml("[plan]\nmax_iterations = 7").unwrap();
        cfg.apply(&Overrides { max_iterations: Some(3), ..Default::default() });
        assert_eq!(cfg.engine.plan.max_iterations, 3);
    }
}
