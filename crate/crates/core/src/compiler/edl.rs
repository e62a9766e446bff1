//! Edit decision lists.

use serde::{Deserialize, Serialize};

use super::{CompileError, OverlayKind, TransitionKind};
use crate::manifest::{ShotId, SourceCollection, SourceId};
use crate::planning::CompiledScript;

pub const EDL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdlEntry {
    pub source_id: SourceId,
    pub shot_id: ShotId,
    #[serde(rename = "in")]
    pub in_s: f64,
    #[serde(rename = "out")]
    pub out_s: f64,
}

impl EdlEntry {
    pub fn duration(&self) -> f64 {
        self.out_s - self.in_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub position: usize,
    pub kind: TransitionKind,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub text: String,
    pub start: f64,
    pub duration: f64,
    pub kind: OverlayKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Music {
    pub track: String,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cover {
    pub image: String,
    pub display_duration: f64,
}

/// Output timeline: entries in order, with a non-cut transition inserting a
/// gap of its duration at its boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edl {
    pub version: String,
    pub entries: Vec<EdlEntry>,
    pub transitions: Vec<Transition>,
    #[serde(default)]
    pub overlays: Vec<Overlay>,
    #[serde(default)]
    pub music: Option<Music>,
    #[serde(default)]
    pub cover: Option<Cover>,
}

impl Edl {
    pub fn transition_at(&self, position: usize) -> Option<&Transition> {
        self.transitions.iter().find(|t| t.position == position)
    }

    /// Gap inserted before entry `position` (zero for cuts and position 0).
    pub fn gap_before(&self, position: usize) -> f64 {
        match self.transition_at(position) {
            Some(t) if t.kind != TransitionKind::Cut => t.duration,
            _ => 0.0,
        }
    }

    pub fn timeline_length(&self) -> f64 {
        let entries: f64 = self.entries.iter().map(EdlEntry::duration).sum();
        let gaps: f64 = self
            .transitions
            .iter()
            .filter(|t| t.kind != TransitionKind::Cut)
            .map(|t| t.duration)
            .sum();
        entries + gaps
    }

    /// Output-timeline start of each entry.
    pub fn entry_starts(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                t += self.gap_before(i);
                let start = t;
                t += e.duration();
                start
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::InvalidEdl(m));
        if self.entries.is_empty() {
            return bad("no entries".into());
        }
        for (i, e) in self.entries.iter().enumerate() {
            if !(e.in_s < e.out_s) {
                return bad(format!("entry {i} has in {} >= out {}", e.in_s, e.out_s));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.transitions {
            if t.position == 0 || t.position >= self.entries.len() {
                return bad(format!("transition position {} outside 1..{}", t.position, self.entries.len()));
            }
            if !seen.insert(t.position) {
                return bad(format!("two transitions at position {}", t.position));
            }
            if !(t.duration >= 0.0) || (t.kind == TransitionKind::Cut && t.duration != 0.0) {
                return bad(format!("transition at {} has invalid duration {}", t.position, t.duration));
            }
        }
        for o in &self.overlays {
            if !(o.start >= 0.0 && o.duration > 0.0) {
                return bad(format!("overlay `{}` has invalid timing", o.text));
            }
        }
        if let Some(m) = &self.music {
            if !(0.0..=1.0).contains(&m.gain) {
                return bad(format!("music gain {} outside [0, 1]", m.gain));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("edl serializes");
        s.push('\n');
        s
    }

    /// Flat cut list: one row per entry with its incoming transition.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["position", "source_id", "shot_id", "in", "out", "timeline_start", "transition", "transition_duration"])
            .expect("in-memory write");
        let starts = self.entry_starts();
        for (i, e) in self.entries.iter().enumerate() {
            let (kind, dur) = match self.transition_at(i) {
                Some(t) => (
                    match t.kind {
                        TransitionKind::Cut => "cut",
                        TransitionKind::Fade => "fade",
                    },
                    t.duration,
                ),
                None => ("", 0.0),
            };
            w.write_record([
                i.to_string(),
                e.source_id.clone(),
                e.shot_id.to_string(),
                format!("{:.3}", e.in_s),
                format!("{:.3}", e.out_s),
                format!("{:.3}", starts[i]),
                kind.to_string(),
                format!("{dur:.3}"),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// One entry per script shot at the shot's source bounds, hard cuts between.
pub fn compile_edl(script: &CompiledScript, sources: &SourceCollection) -> Result<Edl, CompileError> {
    if script.entries.is_empty() {
        return Err(CompileError::EmptyScript);
    }
    let mut entries = Vec::with_capacity(script.entries.len());
    for e in &script.entries {
        let shot = sources.shot(&e.shot).ok_or_else(|| CompileError::UnresolvedShot {
            source_id: e.shot.source_id.clone(),
            shot_id: e.shot.shot_id,
        })?;
        entries.push(EdlEntry {
            source_id: e.shot.source_id.clone(),
            shot_id: e.shot.shot_id,
            in_s: shot.start,
            out_s: shot.end,
        });
    }
    let transitions = (1..entries.len())
        .map(|position| Transition { position, kind: TransitionKind::Cut, duration: 0.0 })
        .collect();
    let edl = Edl {
        version: EDL_VERSION.into(),
        entries,
        transitions,
        overlays: Vec::new(),
        music: None,
        cover: None,
    };
    edl.validate()?;
    Ok(edl)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn two_entry() -> Edl {
        Edl {
            version: EDL_VERSION.into(),
            entries: vec![
                EdlEntry { source_id: "a".into(), shot_id: 2, in_s: 10.0, out_s: 14.0 },
                EdlEntry { source_id: "a".into(), shot_id: 5, in_s: 30.0, out_s: 36.0 },
            ],
            transitions: vec![Transition { position: 1, kind: TransitionKind::Cut, duration: 0.0 }],
            overlays: vec![],
            music: None,
            cover: None,
        }
    }

    #[test]
    fn timeline_counts_entries_and_fades() {
        let mut e = two_entry();
        assert_eq!(e.timeline_length(), 10.0);
        e.transitions[0] = Transition { position: 1, kind: TransitionKind::Fade, duration: 0.5 };
        assert_eq!(e.timeline_length(), 10.5);
        assert_eq!(e.entry_starts(), vec![0.0, 4.5]);
    }

    #[test]
    fn invalid_positions_rejected() {
        let mut e = two_entry();
        e.transitions[0].position = 2;
        assert!(e.validate().is_err());
        let mut e = two_entry();
        e.entries[0].out_s = e.entries[0].in_s;
        assert!(e.validate().is_err());
    }

    #[test]
    fn csv_has_row_per_entry() {
        let csv = two_entry().to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().contains(",cut,"));
    }
}
