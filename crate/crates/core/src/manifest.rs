//! Canonical source representation: per-film manifests, validation, and
//! multi-source collections with a global shot ordering.
//!
//! A manifest is a UTF-8 JSON document (`schema_version` "1") describing one
//! pre-analysed film: its shots with keyframe embeddings and person
//! detections, the character roster with identity anchors, and the dialogue
//! track. Segmentation and embedding extraction happen upstream; this module
//! only checks and indexes what it is given.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vector;

pub const SCHEMA_VERSION: &str = "1";

/// Norm deviation accepted without touching the vector.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Norm deviation that is silently repaired (with a warning) instead of rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-3;

pub type SourceId = String;
pub type CharacterId = String;
pub type ShotId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRate {
    pub num: u32,
    pub den: u32,
}

impl FrameRate {
    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceManifest {
    pub schema_version: String,
    pub source_id: SourceId,
    pub title: String,
    pub frame_rate: FrameRate,
    pub embedding_dim: usize,
    pub shots: Vec<Shot>,
    pub characters: Vec<CharacterRecord>,
    pub dialogue_track: Vec<DialogueLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shot {
    pub shot_id: ShotId,
    pub start: f64,
    pub end: f64,
    /// Free-text visual description from an upstream captioner, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub keyframe_embedding: Vec<f32>,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub dialogue_refs: Vec<String>,
}

impl Shot {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub detection_id: String,
    pub shot_id: ShotId,
    pub timestamp: f64,
    #[serde(default)]
    pub face_embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub body_embedding: Option<Vec<f32>>,
    #[serde(default)]
    pub lip_activity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterRecord {
    pub character_id: CharacterId,
    pub name: String,
    #[serde(default)]
    pub face_anchor_embeddings: Vec<Vec<f32>>,
    #[serde(default)]
    pub body_anchor_embeddings: Vec<Vec<f32>>,
    #[serde(default)]
    pub bio: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DialogueLine {
    pub line_id: String,
    pub shot_id: ShotId,
    pub text: String,
    pub start: f64,
    pub end: f64,
    #[serde(default)]
    pub audio_embedding: Option<Vec<f32>>,
    pub ocr_confidence: f64,
    #[serde(default)]
    pub speaker_id: Option<CharacterId>,
}

/// One broken invariant, named so diagnostics can be grepped and tested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub invariant: &'static str,
    pub id: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.invariant, self.id, self.detail)
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{}", format_violations(.0))]
    Invariant(Vec<Violation>),
    #[error("duplicate source_id `{0}`")]
    DuplicateSource(SourceId),
    #[error("source collection must contain at least one manifest")]
    EmptyCollection,
    #[error("embedding dimension {found} of `{source_id}` differs from collection dimension {expected}")]
    MixedDimensions {
        source_id: SourceId,
        expected: usize,
        found: usize,
    },
    #[error("unknown source `{0}`")]
    UnknownSource(SourceId),
    #[error("source `{source_id}` has no shot {shot_id}")]
    UnknownShot { source_id: SourceId, shot_id: ShotId },
}

fn format_violations(v: &[Violation]) -> String {
    let lines: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("{} invariant violation(s): {}", v.len(), lines.join("; "))
}

impl ManifestError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ManifestError::Invariant(v) => v,
            _ => &[],
        }
    }
}

/// Reads, parses and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<SourceManifest, ManifestError> {
    load_manifest_with_warnings(path).map(|(m, _)| m)
}

pub fn load_manifest_with_warnings(
    path: impl AsRef<Path>,
) -> Result<(SourceManifest, Vec<String>), ManifestError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text)
}

/// Parses and validates a manifest document. Returns renormalization warnings
/// alongside the manifest.
pub fn parse_manifest(text: &str) -> Result<(SourceManifest, Vec<String>), ManifestError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut manifest: SourceManifest =
        serde_path_to_error::deserialize(de).map_err(|e| ManifestError::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
    let warnings = validate(&mut manifest)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((manifest, warnings))
}

pub fn to_json(manifest: &SourceManifest) -> String {
    serde_json::to_string_pretty(manifest).expect("manifest serializes")
}

/// SHA-256 over the canonical serialization; used to key persisted memory.
pub fn content_hash(manifest: &SourceManifest) -> String {
    let bytes = serde_json::to_vec(manifest).expect("manifest serializes");
    hex::encode(Sha256::digest(&bytes))
}

struct Checker {
    dim: usize,
    violations: Vec<Violation>,
    warnings: Vec<String>,
}

impl Checker {
    fn fail(&mut self, invariant: &'static str, id: impl Into<String>, detail: impl Into<String>) {
        self.violations.push(Violation {
            invariant,
            id: id.into(),
            detail: detail.into(),
        });
    }

    fn embedding(&mut self, v: &mut Vec<f32>, id: &str) {
        if v.len() != self.dim {
            self.fail(
                "embedding.dimension",
                id,
                format!("length {} but embedding_dim is {}", v.len(), self.dim),
            );
            return;
        }
        if v.iter().any(|x| !x.is_finite()) {
            self.fail("embedding.finite", id, "contains a non-finite component");
            return;
        }
        let n = vector::norm(v);
        let dev = (n - 1.0).abs();
        if dev <= UNIT_NORM_TOLERANCE {
            return;
        }
        if dev <= RENORMALIZE_TOLERANCE {
            *v = vector::normalized(v);
            self.warnings
                .push(format!("{id}: embedding norm {n:.7} renormalized to unit length"));
        } else {
            self.fail("embedding.unit_norm", id, format!("norm {n:.6} is not within 1e-3 of 1"));
        }
    }
}

/// Checks every invariant of the manifest, repairing near-unit embeddings in
/// place. All violations are collected rather than stopping at the first.
pub fn validate(m: &mut SourceManifest) -> Result<Vec<String>, ManifestError> {
    let mut c = Checker {
        dim: m.embedding_dim,
        violations: Vec::new(),
        warnings: Vec::new(),
    };

    if m.schema_version != SCHEMA_VERSION {
        c.fail(
            "schema_version",
            &m.source_id,
            format!("expected \"{SCHEMA_VERSION}\", found \"{}\"", m.schema_version),
        );
    }
    if m.source_id.trim().is_empty() {
        c.fail("source.id_nonempty", "<source>", "source_id is empty");
    }
    if m.frame_rate.num == 0 || m.frame_rate.den == 0 {
        c.fail("frame_rate.positive", &m.source_id, "frame rate must be a positive rational");
    }
    if m.embedding_dim == 0 {
        c.fail("embedding.dimension", &m.source_id, "embedding_dim must be positive");
    }

    let mut character_ids = HashSet::new();
    for ch in &mut m.characters {
        if !character_ids.insert(ch.character_id.clone()) {
            c.fail("ids.unique", &ch.character_id, "duplicate character_id");
        }
        if ch.face_anchor_embeddings.is_empty() && ch.body_anchor_embeddings.is_empty() {
            c.fail("character.has_anchor", &ch.character_id, "no anchor embeddings");
        }
        for (i, e) in ch.face_anchor_embeddings.iter_mut().enumerate() {
            c.embedding(e, &format!("character {} face anchor {i}", ch.character_id));
        }
        for (i, e) in ch.body_anchor_embeddings.iter_mut().enumerate() {
            c.embedding(e, &format!("character {} body anchor {i}", ch.character_id));
        }
    }

    let shot_count = m.shots.len();
    let mut prev_end: Option<(ShotId, f64)> = None;
    let mut detection_ids = HashSet::new();
    for (idx, shot) in m.shots.iter_mut().enumerate() {
        let sid = format!("shot {}", shot.shot_id);
        if shot.shot_id as usize != idx {
            c.fail("shot.contiguous_ids", &sid, format!("expected shot_id {idx}"));
        }
        if !(shot.start.is_finite() && shot.end.is_finite()) || shot.end <= shot.start {
            c.fail(
                "shot.duration_positive",
                &sid,
                format!("end {} must exceed start {}", shot.end, shot.start),
            );
        }
        if let Some((pid, pend)) = prev_end {
            if shot.start < pend {
                c.fail(
                    "shot.ordering",
                    &sid,
                    format!("starts at {} before shot {pid} ends at {pend}", shot.start),
                );
            }
        }
        prev_end = Some((shot.shot_id, shot.end));
        c.embedding(&mut shot.keyframe_embedding, &format!("{sid} keyframe"));

        let (start, end, own_id) = (shot.start, shot.end, shot.shot_id);
        for det in &mut shot.detections {
            let did = format!("detection {}", det.detection_id);
            if !detection_ids.insert(det.detection_id.clone()) {
                c.fail("ids.unique", &did, "duplicate detection_id");
            }
            if det.shot_id as usize >= shot_count {
                c.fail("detection.shot_ref", &did, format!("references missing shot {}", det.shot_id));
            } else if det.shot_id != own_id {
                c.fail(
                    "detection.shot_ref",
                    &did,
                    format!("declares shot {} but is listed under shot {own_id}", det.shot_id),
                );
            }
            if det.face_embedding.is_none() && det.body_embedding.is_none() {
                c.fail("detection.has_embedding", &did, "neither face nor body embedding present");
            }
            if !(det.timestamp >= start && det.timestamp <= end) {
                c.fail(
                    "detection.timestamp_in_shot",
                    &did,
                    format!("timestamp {} outside [{start}, {end}]", det.timestamp),
                );
            }
            if let Some(lip) = det.lip_activity {
                if !(0.0..=1.0).contains(&lip) {
                    c.fail("detection.lip_activity_range", &did, format!("{lip} not in [0,1]"));
                }
            }
            if let Some(e) = det.face_embedding.as_mut() {
                c.embedding(e, &format!("{did} face"));
            }
            if let Some(e) = det.body_embedding.as_mut() {
                c.embedding(e, &format!("{did} body"));
            }
        }
    }

    let mut line_ids = HashSet::new();
    for line in &mut m.dialogue_track {
        let lid = format!("line {}", line.line_id);
        if !line_ids.insert(line.line_id.clone()) {
            c.fail("ids.unique", &lid, "duplicate line_id");
        }
        if line.shot_id as usize >= shot_count {
            c.fail("dialogue.shot_ref", &lid, format!("references missing shot {}", line.shot_id));
        }
        if !(line.start.is_finite() && line.end.is_finite()) || line.end <= line.start {
            c.fail(
                "dialogue.duration_positive",
                &lid,
                format!("end {} must exceed start {}", line.end, line.start),
            );
        }
        if !(0.0..=1.0).contains(&line.ocr_confidence) {
            c.fail(
                "dialogue.ocr_confidence_range",
                &lid,
                format!("{} not in [0,1]", line.ocr_confidence),
            );
        }
        if let Some(speaker) = &line.speaker_id {
            if !character_ids.contains(speaker) {
                c.fail("dialogue.speaker_ref", &lid, format!("unknown speaker `{speaker}`"));
            }
        }
        if let Some(e) = line.audio_embedding.as_mut() {
            c.embedding(e, &format!("{lid} audio"));
        }
    }

    for shot in &m.shots {
        for r in &shot.dialogue_refs {
            if !line_ids.contains(r) {
                c.fail(
                    "shot.dialogue_ref",
                    format!("shot {}", shot.shot_id),
                    format!("references missing line `{r}`"),
                );
            }
        }
    }

    if c.violations.is_empty() {
        Ok(c.warnings)
    } else {
        Err(ManifestError::Invariant(c.violations))
    }
}

/// Address of a shot across a collection. Orders by source insertion rank, then shot index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GlobalShotRef {
    pub source_rank: u32,
    pub source_id: SourceId,
    pub shot_id: ShotId,
}

impl Ord for GlobalShotRef {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.source_rank, self.shot_id, &self.source_id).cmp(&(
            other.source_rank,
            other.shot_id,
            &other.source_id,
        ))
    }
}

impl PartialOrd for GlobalShotRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GlobalShotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source_id, self.shot_id)
    }
}

/// An immutable, non-empty set of manifests sharing one embedding dimension.
#[derive(Debug, Clone)]
pub struct SourceCollection {
    manifests: Vec<SourceManifest>,
    index: HashMap<SourceId, usize>,
}

pub fn merge_sources(manifests: Vec<SourceManifest>) -> Result<SourceCollection, ManifestError> {
    SourceCollection::new(manifests)
}

impl SourceCollection {
    pub fn new(manifests: Vec<SourceManifest>) -> Result<Self, ManifestError> {
        let first = manifests.first().ok_or(ManifestError::EmptyCollection)?;
        let dim = first.embedding_dim;
        let mut index = HashMap::new();
        for (i, m) in manifests.iter().enumerate() {
            if m.embedding_dim != dim {
                return Err(ManifestError::MixedDimensions {
                    source_id: m.source_id.clone(),
                    expected: dim,
                    found: m.embedding_dim,
                });
            }
            if index.insert(m.source_id.clone(), i).is_some() {
                return Err(ManifestError::DuplicateSource(m.source_id.clone()));
            }
        }
        Ok(Self { manifests, index })
    }

    pub fn len(&self) -> usize {
        self.manifests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifests.is_empty()
    }

    pub fn embedding_dim(&self) -> usize {
        self.manifests[0].embedding_dim
    }

    /// Manifests in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &SourceManifest> {
        self.manifests.iter()
    }

    pub fn get(&self, source_id: &str) -> Option<&SourceManifest> {
        self.index.get(source_id).map(|&i| &self.manifests[i])
    }

    pub fn rank(&self, source_id: &str) -> Option<u32> {
        self.index.get(source_id).map(|&i| i as u32)
    }

    pub fn global_shot_key(
        &self,
        source_id: &str,
        shot_id: ShotId,
    ) -> Result<GlobalShotRef, ManifestError> {
        let rank = self
            .rank(source_id)
            .ok_or_else(|| ManifestError::UnknownSource(source_id.to_string()))?;
        if shot_id as usize >= self.manifests[rank as usize].shots.len() {
            return Err(ManifestError::UnknownShot {
                source_id: source_id.to_string(),
                shot_id,
            });
        }
        Ok(GlobalShotRef {
            source_rank: rank,
            source_id: source_id.to_string(),
            shot_id,
        })
    }

    pub fn shot(&self, r: &GlobalShotRef) -> Option<&Shot> {
        self.get(&r.source_id)?.shots.get(r.shot_id as usize)
    }

    /// Parses a `source:shot` reference against this collection.
    pub fn parse_ref(&self, text: &str) -> Result<GlobalShotRef, ManifestError> {
        let (src, shot) = text.rsplit_once(':').ok_or_else(|| ManifestError::Schema {
            path: text.to_string(),
            message: "expected `source_id:shot_id`".into(),
        })?;
        let shot_id: ShotId = shot.parse().map_err(|_| ManifestError::Schema {
            path: text.to_string(),
            message: format!("`{shot}` is not a shot index"),
        })?;
        self.global_shot_key(src, shot_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SourceManifest {
        SourceManifest {
            schema_version: "1".into(),
            source_id: "a".into(),
            title: "A".into(),
            frame_rate: FrameRate { num: 24, den: 1 },
            embedding_dim: 2,
            shots: vec![
                Shot {
                    shot_id: 0,
                    start: 0.0,
                    end: 2.0,
                    description: None,
                    keyframe_embedding: vec![1.0, 0.0],
                    detections: vec![Detection {
                        detection_id: "d0".into(),
                        shot_id: 0,
                        timestamp: 1.0,
                        face_embedding: Some(vec![0.0, 1.0]),
                        body_embedding: None,
                        lip_activity: Some(0.5),
                    }],
                    dialogue_refs: vec!["l0".into()],
                },
                Shot {
                    shot_id: 1,
                    start: 2.0,
                    end: 3.5,
                    description: None,
                    keyframe_embedding: vec![0.0, 1.0],
                    detections: vec![],
                    dialogue_refs: vec![],
                },
            ],
            characters: vec![CharacterRecord {
                character_id: "x".into(),
                name: "X".into(),
                face_anchor_embeddings: vec![vec![0.0, 1.0]],
                body_anchor_embeddings: vec![],
                bio: None,
            }],
            dialogue_track: vec![DialogueLine {
                line_id: "l0".into(),
                shot_id: 0,
                text: "hi".into(),
                start: 0.5,
                end: 1.5,
                audio_embedding: None,
                ocr_confidence: 0.9,
                speaker_id: None,
            }],
        }
    }

    fn invariants(err: ManifestError) -> Vec<&'static str> {
        err.violations().iter().map(|v| v.invariant).collect()
    }

    #[test]
    fn valid_manifest_passes() {
        let mut m = tiny();
        assert!(validate(&mut m).unwrap().is_empty());
    }

    #[test]
    fn reversed_shot_names_shot() {
        let mut m = tiny();
        m.shots[1].end = 1.0;
        let err = validate(&mut m).unwrap_err();
        let v = &err.violations()[0];
        assert_eq!(v.invariant, "shot.duration_positive");
        assert_eq!(v.id, "shot 1");
    }

    #[test]
    fn detection_missing_shot_is_referential_error() {
        let mut m = tiny();
        m.shots[0].detections[0].shot_id = 99;
        let err = validate(&mut m).unwrap_err();
        assert_eq!(invariants(err), vec!["detection.shot_ref"]);
    }

    #[test]
    fn overlapping_shots_rejected() {
        let mut m = tiny();
        m.shots[1].start = 1.5;
        assert_eq!(invariants(validate(&mut m).unwrap_err()), vec!["shot.ordering"]);
    }

    #[test]
    fn near_unit_embedding_is_renormalized() {
        let mut m = tiny();
        m.shots[0].keyframe_embedding = vec![1.0005, 0.0];
        let warnings = validate(&mut m).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!((vector::norm(&m.shots[0].keyframe_embedding) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn far_from_unit_embedding_rejected() {
        let mut m = tiny();
        m.shots[0].keyframe_embedding = vec![2.0, 0.0];
        assert_eq!(invariants(validate(&mut m).unwrap_err()), vec!["embedding.unit_norm"]);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let mut m = tiny();
        m.characters[0].face_anchor_embeddings[0] = vec![1.0, 0.0, 0.0];
        assert_eq!(invariants(validate(&mut m).unwrap_err()), vec!["embedding.dimension"]);
    }

    #[test]
    fn unknown_speaker_and_missing_anchor() {
        let mut m = tiny();
        m.dialogue_track[0].speaker_id = Some("ghost".into());
        m.characters[0].face_anchor_embeddings.clear();
        let got = invariants(validate(&mut m).unwrap_err());
        assert!(got.contains(&"dialogue.speaker_ref"));
        assert!(got.contains(&"character.has_anchor"));
    }

    #[test]
    fn schema_error_carries_field_path() {
        let text = to_json(&tiny()).replace("\"ocr_confidence\": 0.9", "\"ocr_confidence\": \"high\"");
        match parse_manifest(&text).unwrap_err() {
            ManifestError::Schema { path, .. } => assert_eq!(path, "dialogue_track[0].ocr_confidence"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn merge_rules() {
        let a = tiny();
        let mut b = tiny();
        b.source_id = "b".into();
        assert_eq!(merge_sources(vec![a.clone()]).unwrap().len(), 1);
        let both = merge_sources(vec![a.clone(), b]).unwrap();
        assert_eq!(both.len(), 2);
        assert!(both.get("b").is_some());
        assert!(matches!(
            merge_sources(vec![a.clone(), a]),
            Err(ManifestError::DuplicateSource(_))
        ));
        assert!(matches!(merge_sources(vec![]), Err(ManifestError::EmptyCollection)));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let a = tiny();
        let mut b = tiny();
        b.source_id = "b".into();
        b.embedding_dim = 3;
        assert!(matches!(
            merge_sources(vec![a, b]),
            Err(ManifestError::MixedDimensions { .. })
        ));
    }

    #[test]
    fn global_keys_order_by_source_then_shot() {
        let a = tiny();
        let mut b = tiny();
        b.source_id = "b".into();
        let c = merge_sources(vec![a, b]).unwrap();
        let a0 = c.global_shot_key("a", 0).unwrap();
        let a1 = c.global_shot_key("a", 1).unwrap();
        let b0 = c.global_shot_key("b", 0).unwrap();
        assert!(a0 < a1);
        assert!(a1 < b0);
        assert!(matches!(c.global_shot_key("c", 0), Err(ManifestError::UnknownSource(_))));
        assert!(matches!(c.global_shot_key("a", 7), Err(ManifestError::UnknownShot { .. })));
        assert_eq!(c.parse_ref("b:1").unwrap().to_string(), "b:1");
    }
}
