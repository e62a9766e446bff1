use std::collections::{HashMap, HashSet};

use crate::manifest::{CharacterRecord, Detection, DialogueLine};
use crate::vector::cosine;

use super::{Trajectory, VoiceprintAnchor};

/// Attributes dialogue lines to speakers.
///
/// Visual rule first: an identified trajectory with a detection inside the
/// line's time span whose lip activity reaches `lip_threshold` claims the
/// line (highest lip activity wins). Otherwise a line with an audio embedding
/// goes to the nearest voiceprint centroid. Lines neither rule can decide keep
/// whatever speaker they came in with.
pub fn match_dialogue(
    lines: &[DialogueLine],
    trajectories: &[Trajectory],
    detections: &[Detection],
    voiceprints: &[VoiceprintAnchor],
    roster: &[CharacterRecord],
    lip_threshold: f64,
) -> Vec<DialogueLine> {
    let known: HashSet<&str> = roster.iter().map(|c| c.character_id.as_str()).collect();
    let by_id: HashMap<&str, &Detection> =
        detections.iter().map(|d| (d.detection_id.as_str(), d)).collect();

    lines
        .iter()
        .map(|line| {
            let mut out = line.clone();
            if let Some(who) = visual_speaker(line, trajectories, &by_id, &known, lip_threshold) {
                out.speaker_id = Some(who);
            } else if let Some(who) = audio_speaker(line, voiceprints, &known) {
                out.speaker_id = Some(who);
            }
            out
        })
        .collect()
}

fn visual_speaker(
    line: &DialogueLine,
    trajectories: &[Trajectory],
    by_id: &HashMap<&str, &Detection>,
    known: &HashSet<&str>,
    lip_threshold: f64,
) -> Option<String> {
    let mut best: Option<(&str, f64)> = None;
    for t in trajectories {
        let Some(who) = t.assigned_character.as_deref() else { continue };
        if !known.contains(who) || t.end < line.start || t.start > line.end {
            continue;
        }
        let lip = t
            .detections
            .iter()
            .filter_map(|id| by_id.get(id.as_str()))
            .filter(|d| d.timestamp >= line.start && d.timestamp <= line.end)
            .filter_map(|d| d.lip_activity)
            .filter(|&l| l >= lip_threshold)
            .fold(None, |m: Option<f64>, l| Some(m.map_or(l, |m| m.max(l))));
        if let Some(l) = lip {
            best = match best {
                None => Some((who, l)),
                Some((b, bl)) if l > bl || (l == bl && who < b) => Some((who, l)),
                keep => keep,
            };
        }
    }
    best.map(|(who, _)| who.to_string())
}

fn audio_speaker(
    line: &DialogueLine,
    voiceprints: &[VoiceprintAnchor],
    known: &HashSet<&str>,
) -> Option<String> {
    let emb = line.audio_embedding.as_ref()?;
    let mut best: Option<(&str, f64)> = None;
    for v in voiceprints {
        if !known.contains(v.character_id.as_str()) {
            continue;
        }
        let s = cosine(emb, &v.centroid);
        best = match best {
            None => Some((&v.character_id, s)),
            Some((b, bs)) if s > bs || (s == bs && v.character_id.as_str() < b) => {
                Some((&v.character_id, s))
            }
            keep => keep,
        };
    }
    best.map(|(who, _)| who.to_string())
}
