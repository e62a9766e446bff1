//! Shared helpers for integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cineforge_core::environment::{run_session, EngineConfig, Providers, SessionLog, SessionResult};
use cineforge_core::manifest::{load_manifest, CharacterRecord, Detection, SourceCollection, SourceManifest};
use cineforge_core::memory::{KeyframeBoundary, MemoryBank, QuerySpec, ShotSpan};
use cineforge_core::metrics::{evaluate, EvalConfig, EvaluationReport, GroundTruth, GroundTruthEntry, RunRecord};
use cineforge_core::provider::{CompletionProvider, HashEmbedder, HeuristicProvider};
use cineforge_core::NarrativeMemory;
use cineforge_core::compiler::Edl;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(name: &str) -> SourceManifest {
    load_manifest(fixture_dir().join(format!("{name}.json"))).expect("fixture loads")
}

pub fn shawfix() -> SourceCollection {
    SourceCollection::new(vec![fixture("shawfix")]).unwrap()
}

pub fn both() -> SourceCollection {
    SourceCollection::new(vec![fixture("shawfix"), fixture("greenfix")]).unwrap()
}

/// Script-only configuration: no renderer, in-memory everything.
pub fn script_config() -> EngineConfig {
    EngineConfig { render: false, durable_log: false, ..EngineConfig::default() }
}

pub fn dry_run_config(out: &Path) -> EngineConfig {
    EngineConfig {
        render: true,
        dry_run: true,
        durable_log: false,
        output_dir: out.to_path_buf(),
        media_root: out.join("media"),
        ..EngineConfig::default()
    }
}

pub fn run_with(
    provider: &dyn CompletionProvider,
    text: &str,
    sources: &SourceCollection,
    config: &EngineConfig,
) -> SessionResult {
    let boundary = KeyframeBoundary { threshold: config.event_threshold };
    let providers = Providers { completion: provider, boundary: &boundary };
    run_session(text, sources, config, &providers, SessionLog::in_memory("test"))
}

pub fn run(text: &str, sources: &SourceCollection) -> SessionResult {
    run_with(&HeuristicProvider, text, sources, &script_config())
}

pub const FEASIBLE: [&str; 6] = [
    "Andy's escape from Shawfix with a cinematic title",
    "A 5-minute chronological summary of Shawfix",
    "Red, highlight-first non-linear",
    "Warden Norton scenes with background music",
    "The birthday cake scene with Andy, with fades",
    "Shawfix and Greenfix combined, with fades",
];

pub const ADVERSARIAL: [&str; 6] = [
    "Dobby's best moments in Shawfix",
    "Show every scene with Hermione",
    "A summary of 'Casablanca'",
    "Andy's escape in 'The Godfather'",
    "Andy riding a dragon",
    "Red flying a helicopter",
];

/// Locates an ffmpeg binary: `CINEFORGE_FFMPEG`, then `PATH`, then the copy
/// bundled with the imageio-ffmpeg Python package.
pub fn find_ffmpeg() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("CINEFORGE_FFMPEG") {
        let p = PathBuf::from(p);
        if p.is_file() {
            return Some(p);
        }
    }
    if let Some(paths) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&paths) {
            let p = dir.join("ffmpeg");
            if p.is_file() {
                return Some(p);
            }
        }
    }
    let bundled = Path::new("/usr/local/lib/python3.10/dist-packages/imageio_ffmpeg/binaries");
    std::fs::read_dir(bundled)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("ffmpeg")))
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with a frozen golden file. Set `CINEFORGE_UPDATE_GOLDEN=1`
/// to rewrite the file instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if std::env::var_os("CINEFORGE_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{} differs from the frozen golden file", path.display()))
    }
}

/// Brute-force oracle: heaviest subsequence of `pred` that is also a
/// subsequence of `gt`, by enumerating every subset of `pred`.
pub fn tcs_brute(pred: &[(u32, f64)], gt: &[u32]) -> f64 {
    let total: f64 = pred.iter().map(|p| p.1).sum();
    if pred.is_empty() {
        return 0.0;
    }
    let mut best = 0.0f64;
    for mask in 0u32..(1 << pred.len()) {
        let picked: Vec<&(u32, f64)> = (0..pred.len()).filter(|i| mask & (1 << i) != 0).map(|i| &pred[i]).collect();
        let mut it = gt.iter();
        let ordered = picked.iter().all(|(id, _)| it.any(|g| g == id));
        if ordered {
            best = best.max(picked.iter().map(|p| p.1).sum());
        }
    }
    best / total
}

/// Ground truth for the fixture evaluation batch: four feasible, two adversarial.
pub fn batch_gt() -> Vec<GroundTruthEntry> {
    let text = std::fs::read_to_string(fixture_dir().join("batch_gt.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Runs every batch instruction offline and scores the results.
pub fn eval_batch() -> EvaluationReport {
    let sources = shawfix();
    let entries = batch_gt();
    let gts: Vec<GroundTruth> = entries.iter().map(|e| GroundTruth::resolve(e, &sources).unwrap()).collect();
    let runs: Vec<RunRecord> = entries
        .iter()
        .map(|e| {
            let result = run(&e.instruction, &sources);
            RunRecord::from_state(&e.instruction_id, &result.state).expect("session finished")
        })
        .collect();
    evaluate(&runs, &gts, &sources, &HashEmbedder::new(8), &HeuristicProvider, &EvalConfig::default()).unwrap()
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Exhaustive identity argmax: score every character by summed best-anchor
/// cosine (face if present, else body), ties to the lowest id.
pub fn identity_oracle(chars: &[CharacterRecord], dets: &[Detection]) -> String {
    let mut best: Option<(String, f64)> = None;
    for c in chars {
        let score: f64 = dets
            .iter()
            .map(|d| {
                let (emb, anchors) = match &d.face_embedding {
                    Some(f) => (f, &c.face_anchor_embeddings),
                    None => (d.body_embedding.as_ref().unwrap(), &c.body_anchor_embeddings),
                };
                anchors.iter().map(|a| cos(emb, a)).fold(f64::NEG_INFINITY, f64::max)
            })
            .sum();
        let better = match &best {
            None => true,
            Some((id, s)) => score > *s || (score == *s && c.character_id < *id),
        };
        if better {
            best = Some((c.character_id.clone(), score));
        }
    }
    best.unwrap().0
}

pub fn golden_memory() -> NarrativeMemory {
    let text = std::fs::read_to_string(golden_dir().join("shawfix.memory.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn plan_bank() -> MemoryBank {
    MemoryBank::for_collection(&shawfix(), vec![golden_memory()])
}

const TERMS: [&str; 8] = ["andy", "red", "escape", "cake", "dragon", "yard", "helicopter", "roof"];
const NAMES: [&str; 5] = ["andy", "red", "norton", "Dobby", "Red"];
const SOURCES: [&str; 2] = ["shawfix", "casablanca"];

/// A director query drawn from a mix of supported and unsupported vocabulary.
pub fn random_query(rng: &mut ChaCha8Rng) -> QuerySpec {
    let pick = |rng: &mut ChaCha8Rng, from: &[&str], max: usize| -> Vec<String> {
        let n = rng.random_range(0..=max);
        (0..n).map(|_| from[rng.random_range(0..from.len())].to_string()).collect()
    };
    let scope = if rng.random_bool(0.3) {
        let first = rng.random_range(0..12);
        vec![ShotSpan { source_id: "shawfix".into(), first, last: (first + rng.random_range(0..4)).min(11) }]
    } else {
        Vec::new()
    };
    QuerySpec {
        sources: if rng.random_bool(0.1) { pick(rng, &SOURCES, 1) } else { Vec::new() },
        characters: pick(rng, &NAMES, 2),
        terms: pick(rng, &TERMS, 2),
        scope,
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Two separable voice clusters with sigma 0.01 around fixed unit means;
/// even samples belong to "alice", odd to "bob".
pub fn two_voice_samples(seed: u64) -> (Vec<(String, Vec<f32>)>, [Vec<f64>; 2]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = [unit(&[0.9, 0.1, 0.0, 0.2, 0.0, 0.1]), unit(&[0.0, 0.2, 0.9, 0.0, 0.3, 0.0])];
    let mut samples = Vec::new();
    for i in 0..40 {
        let c = i % 2;
        let v: Vec<f32> = means[c].iter().map(|m| (m + 0.01 * gaussian(&mut rng)) as f32).collect();
        samples.push((["alice", "bob"][c].to_string(), v));
    }
    (samples, means)
}

pub fn fixture_edl() -> Edl {
    let text = std::fs::read_to_string(fixture_dir().join("two_entry.edl.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Writes a solid-colour clip with a sine tone of the given length.
pub fn make_clip(ffmpeg: &Path, out: &Path, seconds: u32) {
    let status = std::process::Command::new(ffmpeg)
        .args(["-y", "-v", "error", "-f", "lavfi", "-i"])
        .arg(format!("color=c=blue:s=320x240:r=24:d={seconds}"))
        .args(["-f", "lavfi", "-i"])
        .arg(format!("sine=frequency=440:duration={seconds}"))
        .args(["-c:v", "libx264", "-pix_fmt", "yuv420p", "-c:a", "aac", "-shortest"])
        .arg(out)
        .status()
        .expect("ffmpeg runs");
    assert!(status.success(), "clip generation failed");
}
