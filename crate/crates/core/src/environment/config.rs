use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::compiler::RendererTemplate;
use crate::identity::IdentityConfig;
use crate::planning::PlanConfig;

/// Engine-wide settings for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub identity: IdentityConfig,
    pub plan: PlanConfig,
    /// Keyframe cosine below which the default boundary provider cuts an event.
    pub event_threshold: f64,
    /// Slack allowed over an instruction's duration limit before the manager intervenes.
    pub duration_tolerance_s: f64,
    /// Where memory documents are persisted; `None` keeps memory in the session only.
    pub memory_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub media_root: PathBuf,
    pub asset_dir: Option<PathBuf>,
    pub renderer: RendererTemplate,
    /// Plan the render without running the assembler.
    pub dry_run: bool,
    /// Whether the session renders at all; evaluation-only runs stop at the script.
    pub render: bool,
    /// fsync the session log after every message.
    pub durable_log: bool,
    pub provider_timeout_s: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            identity: IdentityConfig::default(),
            plan: PlanConfig::default(),
            event_threshold: 0.5,
            duration_tolerance_s: 2.0,
            memory_dir: None,
            output_dir: PathBuf::from("out"),
            media_root: PathBuf::from("media"),
            asset_dir: None,
            renderer: RendererTemplate::default(),
            dry_run: false,
            render: true,
            durable_log: true,
            provider_timeout_s: 120,
        }
    }
}

impl EngineConfig {
    pub fn provider_timeout(&self) -> Duration {
        Duration::from_secs(self.provider_timeout_s)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.plan.per_stage_cap == 0 {
            return Err("plan.per_stage_cap must be positive".into());
        }
        if self.provider_timeout_s == 0 {
            return Err("provider_timeout_s must be positive".into());
        }
        if !(self.duration_tolerance_s >= 0.0) {
            return Err("duration_tolerance_s must be non-negative".into());
        }
        if !(-1.0..=1.0).contains(&self.event_threshold) {
            return Err("event_threshold must lie in [-1, 1]".into());
        }
        Ok(())
    }
}
