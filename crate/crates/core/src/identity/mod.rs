//! Character identification: anchor-and-propagate identity assignment over
//! appearance trajectories, voiceprint binding, and dialogue attribution.

mod dialogue;
mod trajectory;
mod voiceprint;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{CharacterId, Detection, DialogueLine, SourceManifest};

pub use dialogue::match_dialogue;
pub use trajectory::{assign_identity, build_trajectories, link_similarity, Trajectory};
pub use voiceprint::{cluster_voiceprints, kmeans, KMeansResult, VoiceprintAnchor};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IdentityError {
    #[error("character roster is empty")]
    EmptyRoster,
    #[error("detection `{0}` has no embedding comparable to any character anchor")]
    NoComparableEmbedding(String),
    #[error("k-means needs at least k samples ({samples} given, k = {k})")]
    TooFewSamples { samples: usize, k: usize },
    #[error("k = {k} but samples cover {characters} characters")]
    ClusterCountMismatch { k: usize, characters: usize },
    #[error("voiceprint binding conflict for character `{0}`")]
    BindingConflict(CharacterId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityConfig {
    pub link_threshold: f64,
    pub lip_threshold: f64,
    pub kmeans_seed: u64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self {
            link_threshold: 0.75,
            lip_threshold: 0.5,
            kmeans_seed: 42,
        }
    }
}

/// Everything the identity pass produces for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub trajectories: Vec<Trajectory>,
    pub voiceprints: Vec<VoiceprintAnchor>,
    pub dialogue: Vec<DialogueLine>,
    /// Characters seen in each shot, in roster order.
    pub shot_characters: Vec<Vec<CharacterId>>,
    pub warnings: Vec<String>,
}

/// Runs the full identity pass over a validated manifest.
pub fn analyze(manifest: &SourceManifest, cfg: &IdentityConfig) -> IdentityReport {
    let detections: Vec<Detection> = manifest
        .shots
        .iter()
        .flat_map(|s| s.detections.iter().cloned())
        .collect();
    let by_id: HashMap<&str, &Detection> =
        detections.iter().map(|d| (d.detection_id.as_str(), d)).collect();
    let mut warnings = Vec::new();

    let mut trajectories = build_trajectories(&detections, cfg.link_threshold);
    if !manifest.characters.is_empty() {
        for t in &mut trajectories {
            let members: Vec<&Detection> = t.detections.iter().map(|id| by_id[id.as_str()]).collect();
            match assign_identity(&members, &manifest.characters) {
                Ok((who, score)) => {
                    t.assigned_character = Some(who);
                    t.assignment_score = score;
                }
                Err(e) => warnings.push(format!("trajectory {}: {e}", t.trajectory_id)),
            }
        }
    }

    // Lines the visual rule settles become the confirmed voice samples.
    let visual = match_dialogue(
        &manifest.dialogue_track,
        &trajectories,
        &detections,
        &[],
        &manifest.characters,
        cfg.lip_threshold,
    );
    let samples: Vec<(CharacterId, Vec<f32>)> = visual
        .iter()
        .filter_map(|l| Some((l.speaker_id.clone()?, l.audio_embedding.clone()?)))
        .collect();
    let k = samples.iter().map(|(c, _)| c).collect::<BTreeSet<_>>().len();
    let voiceprints = if k == 0 {
        Vec::new()
    } else {
        match cluster_voiceprints(&samples, k, cfg.kmeans_seed) {
            Ok(v) => v,
            Err(e) => {
                warnings.push(format!("voiceprints unavailable: {e}"));
                Vec::new()
            }
        }
    };
    let dialogue = match_dialogue(
        &manifest.dialogue_track,
        &trajectories,
        &detections,
        &voiceprints,
        &manifest.characters,
        cfg.lip_threshold,
    );

    let mut shot_sets: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); manifest.shots.len()];
    for t in &trajectories {
        let Some(who) = t.assigned_character.as_deref() else { continue };
        for id in &t.detections {
            let shot = by_id[id.as_str()].shot_id as usize;
            shot_sets[shot].insert(who);
        }
    }
    let shot_characters = shot_sets
        .iter()
        .map(|set| {
            manifest
                .characters
                .iter()
                .filter(|c| set.contains(c.character_id.as_str()))
                .map(|c| c.character_id.clone())
                .collect()
        })
        .collect();

    for w in &warnings {
        log::warn!("{}: {w}", manifest.source_id);
    }
    IdentityReport {
        trajectories,
        voiceprints,
        dialogue,
        shot_characters,
        warnings,
    }
}
