//! A deterministic, rule-based completion provider.
//!
//! It answers every engine task from the structured payload alone, so whole
//! sessions run offline and reproducibly. Its choices are deliberately simple:
//! it is a baseline and a test double, not a substitute for a language model.

use std::collections::BTreeSet;

use serde_json::json;

use super::{Completion, CompletionProvider, CompletionRequest, ProviderError};
use crate::compiler::ToolKind;
use crate::environment::{TargetDescriptor, TargetKind, TemporalKind, TemporalRequirement, RequestedEdit};
use crate::memory::{EvidenceRef, Level, QuerySpec, ShotSpan};
use crate::planning::Verdict;
use crate::prompts::{
    payload, AbstractStoryInput, BuildProfileInput, DraftBlueprintInput, JudgeInput, ParseInstructionInput,
    ProposeInput, SelectToolsInput, SummarizeEventInput, SummarizeShotInput, Task, INFEASIBLE_TOKEN,
};

/// Words that carry no retrievable content in an instruction.
const STOPWORDS: &[&str] = &[
    "a", "about", "all", "best", "an", "and", "any", "as", "at", "background", "by", "chronological", "cinematic",
    "clip", "clips", "compilation", "compile", "cover", "create", "cut", "edit", "every", "fade", "fades",
    "film", "films", "first", "for", "from", "give", "highlight", "highlights", "in", "into", "its", "linear",
    "make", "me", "minute", "minutes", "montage", "movie", "movies", "music", "non", "nonlinear", "of", "on",
    "only", "order", "please", "poster", "reel", "scene", "scenes", "second", "seconds", "short", "show",
    "showing", "soundtrack", "story", "summary", "text", "the", "their", "them", "title", "titles",
    "transition", "transitions", "trailer", "video", "with", "featuring", "where", "who", "his", "her",
    "moments", "moment", "shots", "shot", "both", "combined", "together", "using", "add", "over", "across",
    "caption", "captions", "that", "this", "is", "to",
];

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicProvider;

impl HeuristicProvider {
    pub fn new() -> Self {
        Self
    }
}

impl CompletionProvider for HeuristicProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let task = request
            .task()
            .and_then(Task::from_name)
            .ok_or_else(|| ProviderError::Malformed("request carries no known task tag".into()))?;
        let bad = |e: serde_json::Error| ProviderError::Malformed(format!("{}: {e}", task.name()));
        let text = match task {
            Task::SummarizeShot => summarize_shot(&payload(request).map_err(bad)?),
            Task::SummarizeEvent => summarize_event(&payload(request).map_err(bad)?),
            Task::AbstractStory => abstract_story(&payload(request).map_err(bad)?),
            Task::BuildProfile => build_profile(&payload(request).map_err(bad)?),
            Task::ParseInstruction => parse_instruction(&payload(request).map_err(bad)?),
            Task::DraftBlueprint => draft_blueprint(&payload(request).map_err(bad)?),
            Task::Propose => propose(&payload(request).map_err(bad)?),
            Task::SelectTools => select_tools(&payload(request).map_err(bad)?),
            Task::JudgeSc | Task::JudgeNl | Task::JudgePa | Task::JudgeCq => {
                judge(task, &payload(request).map_err(bad)?)
            }
        };
        Ok(Completion { text })
    }
}

fn summarize_shot(input: &SummarizeShotInput) -> String {
    let shot = &input.shot;
    let mut out = shot
        .description
        .clone()
        .unwrap_or_else(|| format!("Shot {} of {}.", shot.shot_id, input.source_title));
    if !shot.characters.is_empty() {
        let names: Vec<&str> = shot.characters.iter().map(|c| c.name.as_str()).collect();
        out.push_str(&format!(" Present: {}.", names.join(", ")));
    }
    for line in &shot.dialogue {
        match &line.speaker {
            Some(s) => out.push_str(&format!(" {s} says: \"{}\"", line.text)),
            None => out.push_str(&format!(" Someone says: \"{}\"", line.text)),
        }
    }
    out
}

fn summarize_event(input: &SummarizeEventInput) -> String {
    input.shots.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
}

fn abstract_story(input: &AbstractStoryInput) -> String {
    let body: Vec<&str> = input.events.iter().map(|e| e.summary.as_str()).collect();
    format!("{}: {}", input.source_title, body.join(" "))
}

fn build_profile(input: &BuildProfileInput) -> String {
    let mut out = input.name.clone();
    if let Some(bio) = &input.bio {
        out.push_str(&format!(". {bio}"));
    } else {
        out.push('.');
    }
    if !input.events.is_empty() {
        let body: Vec<&str> = input.events.iter().map(|e| e.summary.as_str()).collect();
        out.push_str(&format!(" Appears in: {}", body.join(" ")));
    }
    out
}

fn words(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut start = 0;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() || ch == '-' || ch == '\'' {
            if cur.is_empty() {
                start = i;
            }
            cur.push(ch);
        } else if !cur.is_empty() {
            out.push((start, std::mem::take(&mut cur)));
        }
    }
    if !cur.is_empty() {
        out.push((start, cur));
    }
    out.into_iter()
        .map(|(i, w)| {
            let w = w.trim_matches(|c| c == '\'' || c == '-');
            let w = w.strip_suffix("'s").unwrap_or(w);
            (i, w.to_string())
        })
        .filter(|(_, w)| !w.is_empty())
        .collect()
}

/// Quoted spans ('...' or "..."), with their byte ranges.
fn quoted(text: &str) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < bytes.len() {
        let (pos, ch) = bytes[i];
        let opens = (ch == '"') || (ch == '\'' && (i == 0 || !bytes[i - 1].1.is_alphanumeric()));
        if opens {
            if let Some(j) = (i + 1..bytes.len()).find(|&j| {
                bytes[j].1 == ch && (j + 1 == bytes.len() || !bytes[j + 1].1.is_alphanumeric())
            }) {
                let end = bytes[j].0;
                out.push((pos, end + 1, text[pos + 1..end].to_string()));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn duration_limit(text: &str) -> Option<f64> {
    for (_, w) in words(text) {
        let lw = w.to_lowercase();
        for (suffix, scale) in [("-minute", 60.0), ("-second", 1.0)] {
            if let Some(n) = lw.strip_suffix(suffix).and_then(|n| n.parse::<f64>().ok()) {
                return Some(n * scale);
            }
        }
    }
    None
}

fn parse_instruction(input: &ParseInstructionInput) -> String {
    let text = &input.text;
    let lower = text.to_lowercase();
    let mut sources: Vec<String> = Vec::new();
    let mut covered: Vec<(usize, usize)> = Vec::new();

    for entry in &input.catalog {
        let title = entry.title.to_lowercase();
        if let Some(at) = lower.find(&title) {
            covered.push((at, at + title.len()));
            sources.push(entry.source_id.clone());
        } else if words(text).iter().any(|(_, w)| w.eq_ignore_ascii_case(&entry.source_id)) {
            sources.push(entry.source_id.clone());
        }
    }
    for (s, e, q) in quoted(text) {
        covered.push((s, e));
        let known = input
            .catalog
            .iter()
            .any(|c| c.title.eq_ignore_ascii_case(&q) || c.source_id.eq_ignore_ascii_case(&q));
        if !known && !sources.contains(&q) {
            sources.push(q);
        }
    }
    let in_covered = |i: usize| covered.iter().any(|&(s, e)| i >= s && i < e);

    let mut targets: Vec<TargetDescriptor> = Vec::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let roster: Vec<_> = input.catalog.iter().flat_map(|c| c.characters.iter()).collect();
    let tokens = words(text);
    for ch in &roster {
        let name_tokens: Vec<String> = ch.name.split_whitespace().map(str::to_lowercase).collect();
        let hit = tokens.iter().any(|(i, w)| {
            !in_covered(*i) && (name_tokens.contains(&w.to_lowercase()) || w.eq_ignore_ascii_case(&ch.id))
        });
        if hit {
            used.extend(name_tokens.iter().cloned());
            used.insert(ch.id.to_lowercase());
            if !targets.iter().any(|t| t.value == ch.name) {
                targets.push(TargetDescriptor { kind: TargetKind::Character, value: ch.name.clone() });
            }
        }
    }
    for (k, (i, w)) in tokens.iter().enumerate() {
        let lw = w.to_lowercase();
        if in_covered(*i) || used.contains(&lw) || STOPWORDS.contains(&lw.as_str()) {
            continue;
        }
        let capitalized = w.chars().next().is_some_and(char::is_uppercase);
        let possessive = text[*i..].starts_with(&format!("{w}'s"));
        if capitalized && (k > 0 || possessive) {
            used.insert(lw);
            targets.push(TargetDescriptor { kind: TargetKind::Character, value: w.clone() });
        } else if !capitalized && lw.len() >= 3 && !lw.contains('-') && !lw.chars().all(|c| c.is_ascii_digit()) {
            used.insert(lw.clone());
            targets.push(TargetDescriptor { kind: TargetKind::Event, value: lw });
        }
    }

    let kind = if lower.contains("non-linear") || lower.contains("nonlinear") || lower.contains("highlight-first") {
        TemporalKind::NonLinear
    } else if lower.contains("chronolog") {
        TemporalKind::Chronological
    } else {
        TemporalKind::Extractive
    };
    let temporal = TemporalRequirement { kind, duration_limit_s: duration_limit(text) };

    let mut edits: Vec<RequestedEdit> = Vec::new();
    let has = |ws: &[&str]| tokens.iter().any(|(_, w)| ws.contains(&w.to_lowercase().as_str()));
    if has(&["title", "titles", "text", "caption", "captions"]) {
        edits.push(RequestedEdit { kind: ToolKind::Text, parameters: "title".into() });
    }
    if has(&["music", "soundtrack"]) {
        edits.push(RequestedEdit { kind: ToolKind::Music, parameters: String::new() });
    }
    if has(&["cover", "poster"]) {
        edits.push(RequestedEdit { kind: ToolKind::Cover, parameters: String::new() });
    }
    if has(&["fade", "fades", "transition", "transitions"]) {
        edits.push(RequestedEdit { kind: ToolKind::Transition, parameters: "fade".into() });
    }
    json!({ "sources": sources, "targets": targets, "temporal": temporal, "edits": edits }).to_string()
}

fn draft_blueprint(input: &DraftBlueprintInput) -> String {
    let stages = match input.instruction.temporal_requirement.kind {
        TemporalKind::NonLinear => [
            ("highlight", "Open on the most striking material."),
            ("context", "Return to how it began."),
            ("resolution", "Bridge back toward the highlight."),
        ],
        _ => [
            ("beginning", "Establish the setting and the people involved."),
            ("middle", "Develop the requested material."),
            ("end", "Resolve and close."),
        ],
    };
    let stages: Vec<_> = stages.iter().map(|(n, i)| json!({ "name": n, "intent": i })).collect();
    json!({ "stages": stages }).to_string()
}

fn infeasible(why: &str) -> String {
    format!("{INFEASIBLE_TOKEN} {why}")
}

fn reply(query: QuerySpec, rationale: &str) -> String {
    json!({ "query": query, "rationale": rationale }).to_string()
}

/// Shots of the given stage's grounded events, in collection order.
fn event_material(input: &ProposeInput, stage: usize) -> Vec<(String, u32)> {
    let mut out = Vec::new();
    for ev in &input.blueprint.stages[stage].evidence {
        if let EvidenceRef::Event { source_id, event_id } = ev {
            let span = input
                .index
                .sources
                .iter()
                .filter(|s| &s.source_id == source_id)
                .flat_map(|s| s.events.iter())
                .find(|e| e.event_id == *event_id);
            if let Some(span) = span {
                for shot in span.first_shot..=span.last_shot {
                    out.push((source_id.clone(), shot));
                }
            }
        }
    }
    let rank = |id: &str| input.index.sources.iter().position(|s| s.source_id == id).unwrap_or(usize::MAX);
    out.sort_by_key(|a| (rank(&a.0), a.1));
    out.dedup();
    out
}

/// The contiguous slice of `material` assigned to stage `k` of `n`.
fn chunk(material: &[(String, u32)], k: usize, n: usize, nonlinear: bool) -> Vec<(String, u32)> {
    if material.is_empty() || n == 0 {
        return Vec::new();
    }
    // Non-linear plans open on the final slice, then return to the start.
    let slot = if nonlinear {
        match k {
            0 => n - 1,
            k => k - 1,
        }
    } else {
        k
    };
    let len = material.len();
    if len < n {
        return vec![material[slot.min(len - 1)].clone()];
    }
    material[slot * len / n..(slot + 1) * len / n].to_vec()
}

fn spans(shots: &[(String, u32)]) -> Vec<ShotSpan> {
    let mut out: Vec<ShotSpan> = Vec::new();
    for (src, id) in shots {
        match out.last_mut() {
            Some(last) if &last.source_id == src && last.last + 1 == *id => last.last = *id,
            _ => out.push(ShotSpan { source_id: src.clone(), first: *id, last: *id }),
        }
    }
    out
}

fn propose(input: &ProposeInput) -> String {
    let ins = &input.instruction;
    let Some(stage) = input.blueprint.stages.iter().position(|s| s.name == input.stage_name) else {
        return infeasible(&format!("no stage named `{}`", input.stage_name));
    };
    let sources = ins.source_selection.clone();
    let characters: Vec<String> = ins.targets(TargetKind::Character).map(str::to_string).collect();
    let mut terms: Vec<String> = ins.targets(TargetKind::Event).map(str::to_string).collect();
    terms.extend(ins.targets(TargetKind::Theme).map(str::to_string));
    let rung = input.failed.len();
    let unsupported = input.feedback.as_ref().is_some_and(|f| f.verdict == Verdict::Unsupported);

    match input.target_level {
        Level::Story => {
            if unsupported {
                return infeasible("the selected sources do not contain the requested story");
            }
            reply(QuerySpec { sources, ..Default::default() }, "confirm the selected sources")
        }
        Level::Character => {
            if unsupported {
                let who = characters.join(", ");
                return infeasible(&format!("no profile found for {who}"));
            }
            let characters = if characters.is_empty() {
                input
                    .index
                    .sources
                    .iter()
                    .flat_map(|s| s.characters.iter().map(|c| c.id.clone()))
                    .collect()
            } else {
                characters
            };
            reply(QuerySpec { sources, characters, ..Default::default() }, "confirm the people involved")
        }
        Level::Event => {
            if unsupported {
                return infeasible(&format!(
                    "no event involves {} with {}",
                    if characters.is_empty() { "anyone".to_string() } else { characters.join(", ") },
                    if terms.is_empty() { "the requested content".to_string() } else { terms.join(", ") }
                ));
            }
            reply(QuerySpec { sources, characters, terms, scope: Vec::new() }, "find the events that carry the request")
        }
        Level::Shot => {
            let material = event_material(input, stage);
            if material.is_empty() {
                return infeasible("the stage has no grounded events to draw shots from");
            }
            let n = input.blueprint.stages.len();
            let nonlinear = ins.temporal_requirement.kind == TemporalKind::NonLinear;
            let mut slice = chunk(&material, stage, n, nonlinear);
            if input.manager_feedback.is_some() {
                slice.truncate(1);
            }
            let mut ladder: Vec<QuerySpec> = Vec::new();
            if !terms.is_empty() {
                ladder.push(QuerySpec {
                    sources: sources.clone(),
                    characters: characters.clone(),
                    terms: terms.clone(),
                    scope: spans(&slice),
                });
                ladder.push(QuerySpec {
                    sources: sources.clone(),
                    characters: characters.clone(),
                    terms: terms.clone(),
                    scope: spans(&material),
                });
            } else {
                if !characters.is_empty() {
                    ladder.push(QuerySpec {
                        sources: sources.clone(),
                        characters: characters.clone(),
                        terms: Vec::new(),
                        scope: spans(&slice),
                    });
                }
                ladder.push(QuerySpec { sources, characters: Vec::new(), terms: Vec::new(), scope: spans(&slice) });
            }
            match ladder.into_iter().nth(rung) {
                Some(q) => reply(q, "select shots for this stage"),
                None => infeasible("no shot in the grounded events satisfies the request"),
            }
        }
    }
}

fn select_tools(input: &SelectToolsInput) -> String {
    let n = input.script.len();
    let ops: Vec<_> = input
        .requested
        .iter()
        .map(|kind| match kind {
            ToolKind::Music => json!({
                "kind": "music",
                "mood": input.moods.first().cloned().unwrap_or_else(|| "neutral".into()),
                "gain": 0.3,
            }),
            ToolKind::Text => {
                let mut title = String::new();
                for w in input.instruction.raw_text.split_whitespace() {
                    if !title.is_empty() && title.len() + w.len() + 1 > 48 {
                        break;
                    }
                    if !title.is_empty() {
                        title.push(' ');
                    }
                    title.push_str(w);
                }
                let title = title.trim_end_matches(['.', ',']).to_string();
                json!({ "kind": "text", "style": "title", "text": title, "start": 0.0, "duration": 3.0 })
            }
            ToolKind::Cover => json!({ "kind": "cover", "tag": "cover", "display_duration": 3.0 }),
            ToolKind::Transition => json!({
                "kind": "transition",
                "style": "fade",
                "positions": (1..n).collect::<Vec<_>>(),
                "duration": 0.5,
            }),
        })
        .collect();
    json!({ "ops": ops }).to_string()
}

fn pair_score(ok: usize, total: usize) -> f64 {
    if total == 0 {
        10.0
    } else {
        1.0 + 9.0 * ok as f64 / total as f64
    }
}

fn judge(task: Task, input: &JudgeInput) -> String {
    let sc = {
        let pairs = input.shots.windows(2);
        let total = pairs.len();
        let ok = input.shots.windows(2).filter(|w| w[0].source_order < w[1].source_order).count();
        pair_score(ok, total)
    };
    let nl = {
        let mut seen: Vec<&str> = Vec::new();
        let mut ok = 0;
        let mut total = 0;
        for s in &input.shots {
            if seen.last() != Some(&s.stage.as_str()) {
                total += 1;
                if !seen.contains(&s.stage.as_str()) {
                    ok += 1;
                }
                seen.push(&s.stage);
            }
        }
        pair_score(ok, total)
    };
    let pa = {
        let text: String = input.shots.iter().map(|s| s.summary.to_lowercase()).collect::<Vec<_>>().join(" ");
        let ok = input.targets.iter().filter(|t| text.contains(&t.to_lowercase())).count();
        pair_score(ok, input.targets.len())
    };
    let score = match task {
        Task::JudgeSc => sc,
        Task::JudgeNl => nl,
        Task::JudgePa => pa,
        _ => {
            if input.shots.is_empty() {
                1.0
            } else {
                (sc + nl + pa) / 3.0
            }
        }
    };
    format!("{score:.2}")
}
