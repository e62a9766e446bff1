use serde::{Deserialize, Serialize};

use crate::manifest::{CharacterId, CharacterRecord, Detection};
use crate::vector::cosine;

use super::IdentityError;

/// A time-ordered run of detections believed to show the same person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: usize,
    /// Detection ids in time order.
    pub detections: Vec<String>,
    pub start: f64,
    pub end: f64,
    pub assigned_character: Option<CharacterId>,
    pub assignment_score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Modality {
    Face,
    Body,
}

/// Similarity between two detections on a shared modality, face preferred.
/// `None` when the pair has no modality in common.
pub fn link_similarity(a: &Detection, b: &Detection) -> Option<f64> {
    if let (Some(x), Some(y)) = (&a.face_embedding, &b.face_embedding) {
        return Some(cosine(x, y));
    }
    if let (Some(x), Some(y)) = (&a.body_embedding, &b.body_embedding) {
        return Some(cosine(x, y));
    }
    None
}

/// Sequential single-linkage over time-ordered detections: each detection
/// joins the currently open trajectory when its similarity to that
/// trajectory's last member reaches `link_threshold`, otherwise it opens a new one.
pub fn build_trajectories(detections: &[Detection], link_threshold: f64) -> Vec<Trajectory> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));

    let mut out: Vec<Trajectory> = Vec::new();
    let mut last: Option<&Detection> = None;
    for det in order {
        let joins = last
            .and_then(|prev| link_similarity(prev, det))
            .is_some_and(|s| s >= link_threshold);
        if joins {
            let t = out.last_mut().expect("open trajectory");
            t.detections.push(det.detection_id.clone());
            t.end = det.timestamp;
        } else {
            out.push(Trajectory {
                trajectory_id: out.len(),
                detections: vec![det.detection_id.clone()],
                start: det.timestamp,
                end: det.timestamp,
                assigned_character: None,
                assignment_score: 0.0,
            });
        }
        last = Some(det);
    }
    out
}

pub(crate) fn detection_modality(
    det: &Detection,
    characters: &[CharacterRecord],
) -> Option<Modality> {
    let any_face = characters.iter().any(|c| !c.face_anchor_embeddings.is_empty());
    let any_body = characters.iter().any(|c| !c.body_anchor_embeddings.is_empty());
    if det.face_embedding.is_some() && any_face {
        Some(Modality::Face)
    } else if det.body_embedding.is_some() && any_body {
        Some(Modality::Body)
    } else {
        None
    }
}

/// Per-detection score against one character: best cosine over that
/// character's anchors of the detection's modality (0 when it has none).
pub(crate) fn detection_score(det: &Detection, modality: Modality, character: &CharacterRecord) -> f64 {
    let (emb, anchors) = match modality {
        Modality::Face => (det.face_embedding.as_deref(), &character.face_anchor_embeddings),
        Modality::Body => (det.body_embedding.as_deref(), &character.body_anchor_embeddings),
    };
    let Some(emb) = emb else { return 0.0 };
    anchors
        .iter()
        .map(|a| cosine(emb, a))
        .fold(None, |best: Option<f64>, s| Some(best.map_or(s, |b| b.max(s))))
        .unwrap_or(0.0)
}

/// Assigns the character whose anchors maximise the summed cosine over the
/// trajectory's detections. Exact ties go to the lowest `character_id`.
pub fn assign_identity(
    members: &[&Detection],
    characters: &[CharacterRecord],
) -> Result<(CharacterId, f64), IdentityError> {
    if characters.is_empty() {
        return Err(IdentityError::EmptyRoster);
    }
    let mut modalities = Vec::with_capacity(members.len());
    for det in members {
        let m = detection_modality(det, characters).ok_or_else(|| {
            IdentityError::NoComparableEmbedding(det.detection_id.clone())
        })?;
        modalities.push(m);
    }

    let mut best: Option<(&CharacterRecord, f64)> = None;
    for ch in characters {
        let score: f64 = members
            .iter()
            .zip(&modalities)
            .map(|(det, m)| detection_score(det, *m, ch))
            .sum();
        best = match best {
            None => Some((ch, score)),
            Some((b, bs)) if score > bs || (score == bs && ch.character_id < b.character_id) => {
                Some((ch, score))
            }
            keep => keep,
        };
    }
    let (ch, score) = best.expect("non-empty roster");
    Ok((ch.character_id.clone(), score))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(id: &str, t: f64, face: Option<Vec<f32>>) -> Detection {
        Detection {
            detection_id: id.into(),
            shot_id: 0,
            timestamp: t,
            face_embedding: face,
            body_embedding: None,
            lip_activity: None,
        }
    }

    fn character(id: &str, face: Vec<f32>) -> CharacterRecord {
        CharacterRecord {
            character_id: id.into(),
            name: id.to_uppercase(),
            face_anchor_embeddings: vec![face],
            body_anchor_embeddings: vec![],
            bio: None,
        }
    }

    #[test]
    fn similar_detections_form_one_trajectory() {
        let v = vec![1.0, 0.1, 0.0];
        let dets: Vec<_> = (0..4).map(|i| det(&format!("d{i}"), i as f64, Some(v.clone()))).collect();
        let t = build_trajectories(&dets, 0.8);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].detections.len(), 4);
    }

    #[test]
    fn alternating_orthogonal_detections_split_every_run() {
        let a = vec![1.0, 0.0];
        let b = vec![0.0, 1.0];
        let dets = vec![
            det("d0", 0.0, Some(a.clone())),
            det("d1", 1.0, Some(b.clone())),
            det("d2", 2.0, Some(a)),
            det("d3", 3.0, Some(b)),
        ];
        assert_eq!(build_trajectories(&dets, 0.8).len(), 4);
        assert!(build_trajectories(&[], 0.8).is_empty());
    }

    #[test]
    fn mismatched_modalities_never_link() {
        let mut body_only = det("d1", 1.0, None);
        body_only.body_embedding = Some(vec![1.0, 0.0]);
        let dets = vec![det("d0", 0.0, Some(vec![1.0, 0.0])), body_only];
        assert_eq!(build_trajectories(&dets, 0.5).len(), 2);
    }

    #[test]
    fn worked_two_character_case() {
        let n = |x: f32, y: f32| {
            let l = (x * x + y * y).sqrt();
            vec![x / l, y / l]
        };
        let d0 = det("d0", 0.0, Some(n(0.9, 0.1)));
        let d1 = det("d1", 1.0, Some(n(0.8, 0.2)));
        let roster = vec![character("a", vec![1.0, 0.0]), character("b", vec![0.0, 1.0])];
        let (who, score) = assign_identity(&[&d0, &d1], &roster).unwrap();
        assert_eq!(who, "a");
        assert!((score - 1.96).abs() < 0.01, "{score}");
    }

    #[test]
    fn exact_anchor_match_scores_one() {
        let d = det("d0", 0.0, Some(vec![0.0, 1.0]));
        let roster = vec![character("a", vec![1.0, 0.0]), character("b", vec![0.0, 1.0])];
        let (who, score) = assign_identity(&[&d], &roster).unwrap();
        assert_eq!(who, "b");
        assert!((score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_lowest_id() {
        let d = det("d0", 0.0, Some(vec![1.0, 1.0]));
        let roster = vec![character("z", vec![1.0, 0.0]), character("m", vec![0.0, 1.0])];
        assert_eq!(assign_identity(&[&d], &roster).unwrap().0, "m");
    }

    #[test]
    fn body_detection_without_body_anchors_is_error() {
        let mut d = det("d9", 0.0, None);
        d.body_embedding = Some(vec![1.0, 0.0]);
        let roster = vec![character("a", vec![1.0, 0.0])];
        assert!(matches!(
            assign_identity(&[&d], &roster),
            Err(IdentityError::NoComparableEmbedding(id)) if id == "d9"
        ));
    }
}
