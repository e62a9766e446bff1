//! Evaluation metrics: narrative grounding, retrieval precision and overall
//! quality, plus the batch report that aggregates them.

mod report;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{OutcomeStatus, SessionOutcome};
use crate::manifest::{GlobalShotRef, Shot};
use crate::memory::ShotSummary;
use crate::prompts::{self, JudgeInput, Task};
use crate::provider::{CompletionProvider, ProviderError, TextEmbeddingProvider};
use crate::vector::cosine;

pub use report::{
    evaluate, EvalConfig, EvaluationReport, GroundTruth, GroundTruthEntry, InstructionRow, RunRecord, METRIC_KEYS,
};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("embedding has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{summaries} summaries for {shots} shots")]
    SummaryCount { summaries: usize, shots: usize },
    #[error("summary for shot {summary} is paired with shot {shot}")]
    SummaryMismatch { summary: u32, shot: u32 },
    #[error("shot {0} appears more than once in the predicted order")]
    DuplicateRef(String),
    #[error("shot {0} has a non-positive duration")]
    NonPositiveDuration(String),
    #[error("no outcomes to score")]
    Empty,
    #[error("the batch has no adversarial entries")]
    NoAdversarial,
    #[error("run `{0}` has no ground-truth entry")]
    UnknownRun(String),
    #[error("ground-truth entry `{0}` has no run")]
    MissingRun(String),
    #[error("invalid ground truth `{id}`: {reason}")]
    GroundTruth { id: String, reason: String },
    #[error("judge failed: {0}")]
    Judge(#[source] ProviderError),
    #[error("embedder failed: {0}")]
    Embed(#[source] ProviderError),
}

/// Mean cosine similarity between each shot's summary embedding and its keyframe.
pub fn svc(
    summaries: &[ShotSummary],
    shots: &[Shot],
    embedder: &dyn TextEmbeddingProvider,
) -> Result<f64, MetricError> {
    if summaries.len() != shots.len() {
        return Err(MetricError::SummaryCount { summaries: summaries.len(), shots: shots.len() });
    }
    if shots.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (s, shot) in summaries.iter().zip(shots) {
        if s.shot_id != shot.shot_id {
            return Err(MetricError::SummaryMismatch { summary: s.shot_id, shot: shot.shot_id });
        }
        let v = embedder.embed(&s.text).map_err(MetricError::Embed)?;
        if v.len() != shot.keyframe_embedding.len() {
            return Err(MetricError::DimensionMismatch { expected: shot.keyframe_embedding.len(), got: v.len() });
        }
        total += cosine(&v, &shot.keyframe_embedding);
    }
    Ok(total / shots.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Shot-level precision, recall and F1.
///
/// Conventions: an empty prediction has precision 1 only when the ground
/// truth is also empty; an empty ground truth has recall 1.
pub fn retrieval_prf(predicted: &BTreeSet<GlobalShotRef>, gt: &BTreeSet<GlobalShotRef>) -> Prf {
    let hit = predicted.intersection(gt).count() as f64;
    let precision = match (predicted.is_empty(), gt.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hit / predicted.len() as f64,
    };
    let recall = if gt.is_empty() { 1.0 } else { hit / gt.len() as f64 };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Prf { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TcsVariant {
    /// Heaviest correctly ordered subsequence by total duration.
    #[default]
    Duration,
    /// Longest correctly ordered subsequence by shot count.
    Count,
}

/// Temporal correctness: the share of predicted playback time covered by the
/// heaviest subsequence that also appears, in order, in the ground truth.
pub fn tcs(
    predicted: &[(GlobalShotRef, f64)],
    gt_order: &[GlobalShotRef],
    variant: TcsVariant,
) -> Result<f64, MetricError> {
    let mut seen = HashSet::new();
    for (r, d) in predicted {
        if !seen.insert(r) {
            return Err(MetricError::DuplicateRef(r.to_string()));
        }
        if !(*d > 0.0) {
            return Err(MetricError::NonPositiveDuration(r.to_string()));
        }
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let weight = |d: f64| match variant {
        TcsVariant::Duration => d,
        TcsVariant::Count => 1.0,
    };
    let m = gt_order.len();
    let mut prev = vec![0.0f64; m + 1];
    let mut cur = vec![0.0f64; m + 1];
    for (r, d) in predicted {
        for j in 1..=m {
            let mut best = prev[j].max(cur[j - 1]);
            if &gt_order[j - 1] == r {
                best = best.max(prev[j - 1] + weight(*d));
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let total: f64 = predicted.iter().map(|(_, d)| weight(*d)).sum();
    Ok((prev[m] / total).clamp(0.0, 1.0))
}

pub const JUDGE_MIN: f64 = 1.0;
pub const JUDGE_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum JudgeMetric {
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "PA")]
    Pa,
    #[serde(rename = "CQ")]
    Cq,
}

impl JudgeMetric {
    pub const ALL: [JudgeMetric; 4] = [JudgeMetric::Sc, JudgeMetric::Nl, JudgeMetric::Pa, JudgeMetric::Cq];

    pub fn key(self) -> &'static str {
        match self {
            JudgeMetric::Sc => "SC",
            JudgeMetric::Nl => "NL",
            JudgeMetric::Pa => "PA",
            JudgeMetric::Cq => "CQ",
        }
    }

    pub fn task(self) -> Task {
        match self {
            JudgeMetric::Sc => Task::JudgeSc,
            JudgeMetric::Nl => Task::JudgeNl,
            JudgeMetric::Pa => Task::JudgePa,
            JudgeMetric::Cq => Task::JudgeCq,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgeScores {
    pub sc: Option<f64>,
    pub nl: Option<f64>,
    pub pa: Option<f64>,
    pub cq: Option<f64>,
    /// e.g. `SC:clamped`, `PA:missing`.
    pub flags: Vec<String>,
}

impl JudgeScores {
    pub fn get(&self, m: JudgeMetric) -> Option<f64> {
        match m {
            JudgeMetric::Sc => self.sc,
            JudgeMetric::Nl => self.nl,
            JudgeMetric::Pa => self.pa,
            JudgeMetric::Cq => self.cq,
        }
    }

    fn set(&mut self, m: JudgeMetric, v: Option<f64>) {
        match m {
            JudgeMetric::Sc => self.sc = v,
            JudgeMetric::Nl => self.nl = v,
            JudgeMetric::Pa => self.pa = v,
            JudgeMetric::Cq => self.cq = v,
        }
    }
}

/// First number in a judge reply.
fn parse_score(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter(|t| !t.is_empty())
        .find_map(|t| t.parse::<f64>().ok())
        .filter(|v| v.is_finite())
}

/// One judge call per rubric. Unparseable replies are retried once and then
/// recorded as missing; out-of-range scores are clamped and flagged.
pub fn judge_scores(input: &JudgeInput, judge: &dyn CompletionProvider) -> Result<JudgeScores, MetricError> {
    let mut scores = JudgeScores::default();
    for m in JudgeMetric::ALL {
        let mut req_input = input.clone();
        req_input.metric = m.key().to_string();
        let req = prompts::request(m.task(), &req_input);
        let mut value = None;
        for _ in 0..2 {
            let reply = judge.complete(&req).map_err(MetricError::Judge)?;
            if let Some(v) = parse_score(&reply.text) {
                value = Some(v);
                break;
            }
        }
        match value {
            None => {
                scores.flags.push(format!("{}:missing", m.key()));
                scores.set(m, None);
            }
            Some(v) => {
                let c = v.clamp(JUDGE_MIN, JUDGE_MAX);
                if c != v {
                    scores.flags.push(format!("{}:clamped", m.key()));
                }
                scores.set(m, Some(c));
            }
        }
    }
    Ok(scores)
}

/// Percentage of outcomes that are not system errors. Rejections count as processed.
pub fn esr(outcomes: &[&SessionOutcome]) -> Result<f64, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::Empty);
    }
    let ok = outcomes.iter().filter(|o| o.status != OutcomeStatus::Error).count();
    Ok(100.0 * ok as f64 / outcomes.len() as f64)
}

/// Percentage of adversarial entries that ended in an explicit rejection.
pub fn arr(outcomes: &[(&SessionOutcome, bool)]) -> Result<f64, MetricError> {
    let adversarial: Vec<_> = outcomes.iter().filter(|(_, adv)| *adv).collect();
    if adversarial.is_empty() {
        return Err(MetricError::NoAdversarial);
    }
    let refused = adversarial.iter().filter(|(o, _)| o.status == OutcomeStatus::Rejected).count();
    Ok(100.0 * refused as f64 / adversarial.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::ScriptedProvider;

    fn r(i: u32) -> GlobalShotRef {
        GlobalShotRef { source_rank: 0, source_id: "s".into(), shot_id: i }
    }

    fn set(ids: &[u32]) -> BTreeSet<GlobalShotRef> {
        ids.iter().map(|&i| r(i)).collect()
    }

    #[test]
    fn prf_set_arithmetic() {
        let p = retrieval_prf(&set(&[2, 3, 5]), &set(&[1, 2, 3, 4]));
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.recall, 0.5);
        assert!((p.f1 - 4.0 / 7.0).abs() < 1e-12);
        assert_eq!(retrieval_prf(&set(&[]), &set(&[1])), Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert_eq!(retrieval_prf(&set(&[]), &set(&[])), Prf { precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn tcs_swapped_pair() {
        let gt = vec![r(1), r(2), r(3)];
        let pred = vec![(r(2), 5.0), (r(1), 10.0), (r(3), 5.0)];
        assert_eq!(tcs(&pred, &gt, TcsVariant::Duration).unwrap(), 0.75);
        assert!((tcs(&pred, &gt, TcsVariant::Count).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tcs_rejects_duplicates_and_bad_durations() {
        let gt = vec![r(1)];
        assert!(matches!(tcs(&[(r(1), 1.0), (r(1), 1.0)], &gt, TcsVariant::Duration), Err(MetricError::DuplicateRef(_))));
        assert!(matches!(tcs(&[(r(1), 0.0)], &gt, TcsVariant::Duration), Err(MetricError::NonPositiveDuration(_))));
        assert_eq!(tcs(&[], &gt, TcsVariant::Duration).unwrap(), 0.0);
    }

    fn judge_input() -> JudgeInput {
        JudgeInput { metric: String::new(), instruction: "x".into(), targets: vec![], shots: vec![], rendered: String::new() }
    }

    #[test]
    fn judge_passthrough_clamp_and_missing() {
        let s = judge_scores(&judge_input(), &ScriptedProvider::constant("8")).unwrap();
        assert_eq!((s.sc, s.nl, s.pa, s.cq), (Some(8.0), Some(8.0), Some(8.0), Some(8.0)));
        assert!(s.flags.is_empty());

        let s = judge_scores(&judge_input(), &ScriptedProvider::constant("15")).unwrap();
        assert_eq!(s.sc, Some(10.0));
        assert!(s.flags.contains(&"SC:clamped".to_string()));

        let p = ScriptedProvider::constant("excellent");
        let s = judge_scores(&judge_input(), &p).unwrap();
        assert_eq!(s.sc, None);
        assert_eq!(p.calls(), 8);
        assert!(s.flags.contains(&"CQ:missing".to_string()));
    }

    #[test]
    fn esr_and_arr_counts() {
        use crate::planning::Rejection;
        let ok = SessionOutcome::success(crate::environment::Artifact::Script { shots: vec![] });
        let err = SessionOutcome::error("plan", "boom");
        let rej = SessionOutcome::rejected(Rejection { reason: "no".into(), failed_proposals: vec![], iterations_used: 1 });
        assert_eq!(esr(&[&ok, &ok, &ok, &err]).unwrap(), 75.0);
        assert_eq!(esr(&[&rej, &rej]).unwrap(), 100.0);
        assert!(esr(&[]).is_err());
        assert_eq!(arr(&[(&rej, true), (&rej, true), (&ok, true), (&ok, true)]).unwrap(), 50.0);
        assert_eq!(arr(&[(&err, true)]).unwrap(), 0.0);
        assert!(matches!(arr(&[(&ok, false)]), Err(MetricError::NoAdversarial)));
    }
}
