use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{arr, esr, judge_scores, retrieval_prf, svc, tcs, JudgeMetric, MetricError, TcsVariant};
use crate::environment::{Artifact, Instruction, OutcomeStatus, SessionOutcome, SessionState};
use crate::manifest::{GlobalShotRef, Shot, SourceCollection};
use crate::memory::{NarrativeMemory, ShotSummary};
use crate::planning::CompiledScript;
use crate::prompts::{JudgeInput, JudgedShot, RUBRIC_VERSION};
use crate::provider::{CompletionProvider, TextEmbeddingProvider};

pub const METRIC_KEYS: [&str; 11] = ["SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "ESR", "ARR", "CQ"];

/// Ground-truth annotation as stored on disk; shots are `source:shot` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub instruction_id: String,
    pub instruction: String,
    #[serde(default)]
    pub gt_shots: Vec<String>,
    #[serde(default)]
    pub gt_order: Vec<String>,
    #[serde(default)]
    pub adversarial: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub instruction_id: String,
    pub instruction: String,
    pub gt_shots: BTreeSet<GlobalShotRef>,
    pub gt_order: Vec<GlobalShotRef>,
    pub adversarial: bool,
}

impl GroundTruth {
    pub fn resolve(entry: &GroundTruthEntry, sources: &SourceCollection) -> Result<Self, MetricError> {
        let fail = |reason: String| MetricError::GroundTruth { id: entry.instruction_id.clone(), reason };
        let parse = |s: &String| sources.parse_ref(s).map_err(|e| fail(e.to_string()));
        let gt_shots: BTreeSet<GlobalShotRef> = entry.gt_shots.iter().map(parse).collect::<Result<_, _>>()?;
        let gt_order: Vec<GlobalShotRef> = entry.gt_order.iter().map(parse).collect::<Result<_, _>>()?;
        let gt = GroundTruth {
            instruction_id: entry.instruction_id.clone(),
            instruction: entry.instruction.clone(),
            gt_shots,
            gt_order,
            adversarial: entry.adversarial,
        };
        gt.check().map_err(fail)?;
        Ok(gt)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.adversarial && !self.gt_shots.is_empty() {
            return Err("adversarial entries must have no ground-truth shots".into());
        }
        let ordered: BTreeSet<&GlobalShotRef> = self.gt_order.iter().collect();
        if ordered.len() != self.gt_order.len() {
            return Err("gt_order repeats a shot".into());
        }
        if ordered != self.gt_shots.iter().collect() {
            return Err("gt_order is not an ordering of gt_shots".into());
        }
        Ok(())
    }
}

/// Everything evaluation needs from one finished session.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub instruction_id: String,
    pub instruction: Option<Instruction>,
    pub outcome: SessionOutcome,
    pub script: Option<CompiledScript>,
    pub memories: Vec<NarrativeMemory>,
}

impl RunRecord {
    /// Builds a record from replayed session state; `None` if the session never finished.
    pub fn from_state(instruction_id: impl Into<String>, state: &SessionState) -> Option<Self> {
        Some(Self {
            instruction_id: instruction_id.into(),
            instruction: state.instruction.clone(),
            outcome: state.outcome.clone()?,
            script: state.script().cloned(),
            memories: state.memory.clone().unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tcs_variant: TcsVariant,
    /// Rows whose judge calls may run at once.
    pub judge_concurrency: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tcs_variant: TcsVariant::Duration, judge_concurrency: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRow {
    pub instruction_id: String,
    pub adversarial: bool,
    pub status: OutcomeStatus,
    /// Keyed by metric name; `None` when the metric does not apply or is missing.
    pub metrics: BTreeMap<String, Option<f64>>,
    pub flags: Vec<String>,
}

impl InstructionRow {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.get(key).copied().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rubric_version: String,
    pub tcs_variant: TcsVariant,
    pub rows: Vec<InstructionRow>,
    pub aggregate: BTreeMap<String, Option<f64>>,
}

impl EvaluationReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.aggregate.get(key).copied().flatten()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["instruction_id", "adversarial", "status"];
        header.extend(METRIC_KEYS);
        header.push("flags");
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for row in &self.rows {
            let mut rec = vec![
                row.instruction_id.clone(),
                row.adversarial.to_string(),
                serde_json::to_value(row.status).expect("status").as_str().unwrap_or_default().to_string(),
            ];
            rec.extend(METRIC_KEYS.iter().map(|k| cell(row.get(k))));
            rec.push(row.flags.join(";"));
            w.write_record(&rec)?;
        }
        let mut mean = vec!["mean".to_string(), String::new(), String::new()];
        mean.extend(METRIC_KEYS.iter().map(|k| cell(self.get(k))));
        mean.push(String::new());
        w.write_record(&mean)?;
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into());
        let mut out = format!("| instruction | {} |\n", METRIC_KEYS.join(" | "));
        out.push_str(&format!("|---|{}\n", "---|".repeat(METRIC_KEYS.len())));
        for row in &self.rows {
            let cells: Vec<String> = METRIC_KEYS.iter().map(|k| cell(row.get(k))).collect();
            out.push_str(&format!("| {} | {} |\n", row.instruction_id, cells.join(" | ")));
        }
        let cells: Vec<String> = METRIC_KEYS.iter().map(|k| cell(self.get(k))).collect();
        out.push_str(&format!("| **mean** | {} |\n", cells.join(" | ")));
        out.push_str(&format!("\nRubric version {}; TCS variant {:?}.\n", self.rubric_version, self.tcs_variant));
        out
    }
}

fn summary_for<'m>(memories: &'m [NarrativeMemory], r: &GlobalShotRef) -> Option<&'m ShotSummary> {
    memories
        .iter()
        .find(|m| m.source_id == r.source_id)?
        .shot_summaries
        .iter()
        .find(|s| s.shot_id == r.shot_id)
}

fn rendered_summary(outcome: &SessionOutcome, script: &CompiledScript, sources: &SourceCollection) -> String {
    let total: f64 = script.entries.iter().filter_map(|e| sources.shot(&e.shot)).map(Shot::duration).sum();
    let base = format!("{} shots, {:.1}s of source material", script.entries.len(), total);
    match &outcome.artifact {
        Some(Artifact::Rendered(v)) => format!("{base}; rendered {:.1}s", v.duration_s),
        Some(Artifact::RenderPlan { steps, .. }) => format!("{base}; render plan of {steps} steps"),
        _ => base,
    }
}

fn score_row(
    run: &RunRecord,
    gt: &GroundTruth,
    sources: &SourceCollection,
    embedder: &dyn TextEmbeddingProvider,
    judge: &dyn CompletionProvider,
    cfg: &EvalConfig,
) -> Result<InstructionRow, MetricError> {
    let mut metrics: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut flags = Vec::new();

    let (mut sums, mut shots): (Vec<ShotSummary>, Vec<Shot>) = (Vec::new(), Vec::new());
    for m in &run.memories {
        if let Some(src) = sources.get(&m.source_id) {
            sums.extend(m.shot_summaries.iter().cloned());
            shots.extend(src.shots.iter().cloned());
        }
    }
    let svc_value = if sums.is_empty() { None } else { Some(svc(&sums, &shots, embedder)?) };
    metrics.insert("SVC".into(), svc_value);

    let script = run.script.as_ref().filter(|_| run.outcome.status == OutcomeStatus::Success);
    if !gt.adversarial {
        let predicted: Vec<GlobalShotRef> = script.map(CompiledScript::shots).unwrap_or_default();
        let pset: BTreeSet<GlobalShotRef> = predicted.iter().cloned().collect();
        let prf = retrieval_prf(&pset, &gt.gt_shots);
        let timed: Vec<(GlobalShotRef, f64)> = predicted
            .iter()
            .map(|r| (r.clone(), sources.shot(r).map(Shot::duration).unwrap_or(0.0)))
            .collect();
        metrics.insert("P".into(), Some(prf.precision));
        metrics.insert("R".into(), Some(prf.recall));
        metrics.insert("F1".into(), Some(prf.f1));
        metrics.insert("TCS".into(), Some(tcs(&timed, &gt.gt_order, cfg.tcs_variant)?));
    }

    match script {
        Some(script) => {
            let mut chrono = script.shots();
            chrono.sort();
            let shots = script
                .entries
                .iter()
                .map(|e| JudgedShot {
                    shot: e.shot.to_string(),
                    stage: e.stage_name.clone(),
                    source_order: chrono.iter().position(|r| r == &e.shot).unwrap_or(0),
                    summary: summary_for(&run.memories, &e.shot).map(|s| s.text.clone()).unwrap_or_default(),
                })
                .collect();
            let input = JudgeInput {
                metric: String::new(),
                instruction: gt.instruction.clone(),
                targets: run
                    .instruction
                    .as_ref()
                    .map(|i| i.target_content.iter().map(|t| t.value.clone()).collect())
                    .unwrap_or_default(),
                shots,
                rendered: rendered_summary(&run.outcome, script, sources),
            };
            let scores = judge_scores(&input, judge)?;
            for m in JudgeMetric::ALL {
                metrics.insert(m.key().into(), scores.get(m));
            }
            flags.extend(scores.flags);
        }
        None => {
            for m in JudgeMetric::ALL {
                metrics.insert(m.key().into(), None);
            }
        }
    }
    Ok(InstructionRow {
        instruction_id: run.instruction_id.clone(),
        adversarial: gt.adversarial,
        status: run.outcome.status,
        metrics,
        flags,
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = values.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Scores a batch of runs against ground truth. Rows follow the ground-truth
/// order; aggregates are per-instruction (macro) means.
pub fn evaluate(
    runs: &[RunRecord],
    gts: &[GroundTruth],
    sources: &SourceCollection,
    embedder: &dyn TextEmbeddingProvider,
    judge: &dyn CompletionProvider,
    cfg: &EvalConfig,
) -> Result<EvaluationReport, MetricError> {
    if runs.is_empty() {
        return Err(MetricError::Empty);
    }
    for r in runs {
        if !gts.iter().any(|g| g.instruction_id == r.instruction_id) {
            return Err(MetricError::UnknownRun(r.instruction_id.clone()));
        }
    }
    let mut pairs = Vec::with_capacity(gts.len());
    for g in gts {
        let run = runs
            .iter()
            .find(|r| r.instruction_id == g.instruction_id)
            .ok_or_else(|| MetricError::MissingRun(g.instruction_id.clone()))?;
        pairs.push((run, g));
    }

    let width = cfg.judge_concurrency.max(1);
    let mut rows: Vec<InstructionRow> = Vec::with_capacity(pairs.len());
    for batch in pairs.chunks(width) {
        let results: Vec<Result<InstructionRow, MetricError>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|(run, g)| s.spawn(move || score_row(run, g, sources, embedder, judge, cfg)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("metric worker panicked")).collect()
        });
        for r in results {
            rows.push(r?);
        }
    }

    let mut aggregate: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for key in ["SVC", "SC", "P", "R", "F1", "TCS", "NL", "PA", "CQ"] {
        aggregate.insert(key.into(), mean(rows.iter().map(|r| r.get(key))));
    }
    let outcomes: Vec<&SessionOutcome> = pairs.iter().map(|(r, _)| &r.outcome).collect();
    aggregate.insert("ESR".into(), Some(esr(&outcomes)?));
    let flagged: Vec<(&SessionOutcome, bool)> = pairs.iter().map(|(r, g)| (&r.outcome, g.adversarial)).collect();
    aggregate.insert("ARR".into(), arr(&flagged).ok());

    Ok(EvaluationReport {
        rubric_version: RUBRIC_VERSION.to_string(),
        tcs_variant: cfg.tcs_variant,
        rows,
        aggregate,
    })
}
