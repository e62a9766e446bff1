//! Drives an external assembler through a command template.
//!
//! A render is a plan of subprocess steps: one extract per EDL entry, one
//! gap clip per non-cut transition, a single concat/overlay pass, and an
//! optional cover export. Dry runs return the plan without executing it.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::edl::Edl;
use super::CompileError;

/// Maximum allowed difference between probed and planned durations.
pub const RENDER_TOLERANCE_S: f64 = 0.5;

const MEDIA_EXTENSIONS: [&str; 5] = ["mp4", "mkv", "mov", "webm", "avi"];

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Argument templates for each step kind. `{extra_args}` must be a whole
/// argument and expands to zero or more arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendererTemplate {
    pub program: String,
    pub extract: Vec<String>,
    pub gap: Vec<String>,
    pub concat: Vec<String>,
    pub cover: Vec<String>,
    pub probe: Vec<String>,
    /// Filter applied per overlay; sees `{text}`, `{start}` and `{end}`.
    pub overlay_filter: String,
    pub container: String,
}

impl Default for RendererTemplate {
    fn default() -> Self {
        Self {
            program: default_ffmpeg(),
            extract: strings(&[
                "-y", "-v", "error", "-ss", "{in}", "-i", "{input}", "-t", "{duration}",
                "-vf", "scale=640:360,fps=24", "-c:v", "libx264", "-pix_fmt", "yuv420p",
                "-c:a", "aac", "-ar", "44100", "-ac", "2", "{output}",
            ]),
            gap: strings(&[
                "-y", "-v", "error", "-f", "lavfi", "-i", "color=c=black:s=640x360:r=24:d={duration}",
                "-f", "lavfi", "-i", "anullsrc=r=44100:cl=stereo", "-t", "{duration}",
                "-c:v", "libx264", "-pix_fmt", "yuv420p", "-c:a", "aac", "-ar", "44100", "-ac", "2", "{output}",
            ]),
            concat: strings(&[
                "-y", "-v", "error", "-f", "concat", "-safe", "0", "-i", "{list}", "{extra_args}",
                "-c:v", "libx264", "-pix_fmt", "yuv420p", "-c:a", "aac", "{output}",
            ]),
            cover: strings(&["-y", "-v", "error", "-i", "{input}", "{output}"]),
            probe: strings(&["-hide_banner", "-i", "{input}"]),
            overlay_filter: "drawtext=text='{text}':enable='between(t,{start},{end})':x=(w-text_w)/2:y=h-text_h-40:fontsize=32:fontcolor=white".into(),
            container: "mp4".into(),
        }
    }
}

/// `CINEFORGE_FFMPEG` if set, else the first `ffmpeg` on `PATH`, else plain `ffmpeg`.
pub fn default_ffmpeg() -> String {
    if let Ok(p) = std::env::var("CINEFORGE_FFMPEG") {
        if !p.is_empty() {
            return p;
        }
    }
    if let Some(path) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&path) {
            let cand = dir.join("ffmpeg");
            if cand.is_file() {
                return cand.display().to_string();
            }
        }
    }
    "ffmpeg".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStep {
    pub label: String,
    pub program: String,
    pub args: Vec<String>,
    pub output: String,
}

impl RenderStep {
    pub fn command_line(&self) -> String {
        let mut parts = vec![self.program.clone()];
        parts.extend(self.args.iter().map(|a| {
            if a.is_empty() || a.contains(|c: char| c.is_whitespace() || "'\"\\$;&|()<>".contains(c)) {
                format!("'{}'", a.replace('\'', r"'\''"))
            } else {
                a.clone()
            }
        }));
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderPlan {
    /// Extract and gap steps, in timeline order. Independent of each other.
    pub parts: Vec<RenderStep>,
    pub concat: RenderStep,
    pub cover: Option<RenderStep>,
    pub concat_list_path: String,
    pub concat_list: String,
    pub output: String,
    pub work_dir: String,
    pub timeline_length: f64,
}

impl RenderPlan {
    pub fn steps(&self) -> impl Iterator<Item = &RenderStep> {
        self.parts.iter().chain(std::iter::once(&self.concat)).chain(self.cover.iter())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for step in self.steps() {
            s.push_str(&format!("# {}\n{}\n", step.label, step.command_line()));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedVideo {
    pub path: String,
    pub duration_s: f64,
    pub cover: Option<String>,
}

fn fmt_secs(x: f64) -> String {
    format!("{x:.3}")
}

fn expand(template: &[String], vars: &[(&str, String)], extra: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(template.len() + extra.len());
    for arg in template {
        if arg == "{extra_args}" {
            out.extend(extra.iter().cloned());
            continue;
        }
        let mut a = arg.clone();
        for (k, v) in vars {
            a = a.replace(&format!("{{{k}}}"), v);
        }
        out.push(a);
    }
    out
}

fn find_media(root: &Path, source_id: &str, require: bool) -> Result<PathBuf, CompileError> {
    for ext in MEDIA_EXTENSIONS {
        let p = root.join(format!("{source_id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    if require {
        Err(CompileError::MissingMedia(source_id.to_string()))
    } else {
        Ok(root.join(format!("{source_id}.{}", MEDIA_EXTENSIONS[0])))
    }
}

fn escape_filter_text(s: &str) -> String {
    s.replace('\\', r"\\").replace(':', r"\:").replace('\'', r"\'").replace('%', r"\%")
}

fn concat_extra_args(edl: &Edl, tpl: &RendererTemplate) -> Vec<String> {
    let mut inputs = Vec::new();
    let mut graphs = Vec::new();
    let mut video = "0:v".to_string();
    let mut audio = "0:a".to_string();
    if !edl.overlays.is_empty() {
        let chain: Vec<String> = edl
            .overlays
            .iter()
            .map(|o| {
                tpl.overlay_filter
                    .replace("{text}", &escape_filter_text(&o.text))
                    .replace("{start}", &fmt_secs(o.start))
                    .replace("{end}", &fmt_secs(o.start + o.duration))
            })
            .collect();
        graphs.push(format!("[0:v]{}[v]", chain.join(",")));
        video = "[v]".into();
    }
    if let Some(m) = &edl.music {
        inputs.extend(["-i".to_string(), m.track.clone()]);
        graphs.push(format!(
            "[1:a]volume={}[m];[0:a][m]amix=inputs=2:duration=first:normalize=0[a]",
            m.gain
        ));
        audio = "[a]".into();
    }
    if graphs.is_empty() {
        return Vec::new();
    }
    let mut args = inputs;
    args.extend([
        "-filter_complex".to_string(),
        graphs.join(";"),
        "-map".to_string(),
        video,
        "-map".to_string(),
        audio,
    ]);
    args
}

/// Expands the template into a full step plan. Pure: no filesystem writes.
/// With `require_media`, every source must have a media file under `media_root`.
pub fn plan_render(
    edl: &Edl,
    media_root: &Path,
    tpl: &RendererTemplate,
    output: &Path,
    require_media: bool,
) -> Result<RenderPlan, CompileError> {
    edl.validate()?;
    let work_dir = output.with_extension("parts");
    let part = |name: String| work_dir.join(name).display().to_string();
    let mut parts = Vec::new();
    for (i, e) in edl.entries.iter().enumerate() {
        let gap = edl.gap_before(i);
        if gap > 0.0 {
            let out = part(format!("gap_{i:03}.{}", tpl.container));
            parts.push(RenderStep {
                label: format!("gap {i}"),
                program: tpl.program.clone(),
                args: expand(&tpl.gap, &[("duration", fmt_secs(gap)), ("output", out.clone())], &[]),
                output: out,
            });
        }
        let input = find_media(media_root, &e.source_id, require_media)?;
        let out = part(format!("part_{i:03}.{}", tpl.container));
        let vars = [
            ("input", input.display().to_string()),
            ("in", fmt_secs(e.in_s)),
            ("out", fmt_secs(e.out_s)),
            ("duration", fmt_secs(e.duration())),
            ("output", out.clone()),
        ];
        parts.push(RenderStep {
            label: format!("extract {i} {}:{}", e.source_id, e.shot_id),
            program: tpl.program.clone(),
            args: expand(&tpl.extract, &vars, &[]),
            output: out,
        });
    }
    let concat_list: String = parts
        .iter()
        .map(|s| format!("file '{}'\n", s.output.replace('\'', r"'\''")))
        .collect();
    let concat_list_path = part("concat.txt".into());
    let output_s = output.display().to_string();
    let concat = RenderStep {
        label: "concat".into(),
        program: tpl.program.clone(),
        args: expand(
            &tpl.concat,
            &[("list", concat_list_path.clone()), ("output", output_s.clone())],
            &concat_extra_args(edl, tpl),
        ),
        output: output_s.clone(),
    };
    let cover = edl.cover.as_ref().map(|c| {
        let out = output.with_extension("cover.png").display().to_string();
        RenderStep {
            label: "cover".into(),
            program: tpl.program.clone(),
            args: expand(&tpl.cover, &[("input", c.image.clone()), ("output", out.clone())], &[]),
            output: out,
        }
    });
    Ok(RenderPlan {
        parts,
        concat,
        cover,
        concat_list_path,
        concat_list,
        output: output_s,
        work_dir: work_dir.display().to_string(),
        timeline_length: edl.timeline_length(),
    })
}

fn run_step(step: &RenderStep) -> Result<(), CompileError> {
    let out = Command::new(&step.program).args(&step.args).output().map_err(|e| {
        CompileError::RendererUnavailable { program: step.program.clone(), message: e.to_string() }
    })?;
    if !out.status.success() {
        return Err(CompileError::Subprocess {
            step: step.label.clone(),
            code: out.status.code(),
            stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        });
    }
    Ok(())
}

fn parse_duration(text: &str) -> Option<f64> {
    let rest = &text[text.find("Duration: ")? + "Duration: ".len()..];
    let stamp = rest.split(',').next()?.trim();
    let mut fields = stamp.split(':');
    let h: f64 = fields.next()?.parse().ok()?;
    let m: f64 = fields.next()?.parse().ok()?;
    let s: f64 = fields.next()?.parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + s)
}

/// Reads a media file's duration from the assembler's banner output.
pub fn probe_duration(tpl: &RendererTemplate, path: &Path) -> Result<f64, CompileError> {
    let args = expand(&tpl.probe, &[("input", path.display().to_string())], &[]);
    let out = Command::new(&tpl.program).args(&args).output().map_err(|e| {
        CompileError::RendererUnavailable { program: tpl.program.clone(), message: e.to_string() }
    })?;
    let mut text = String::from_utf8_lossy(&out.stderr).into_owned();
    text.push_str(&String::from_utf8_lossy(&out.stdout));
    parse_duration(&text).ok_or_else(|| CompileError::Probe {
        path: path.display().to_string(),
        message: "no duration in probe output".into(),
    })
}

/// Plans and, unless `dry_run`, executes a render. Part steps run concurrently.
pub fn render(
    edl: &Edl,
    media_root: &Path,
    tpl: &RendererTemplate,
    output: &Path,
    dry_run: bool,
) -> Result<(RenderPlan, Option<RenderedVideo>), CompileError> {
    let plan = plan_render(edl, media_root, tpl, output, !dry_run)?;
    if dry_run {
        return Ok((plan, None));
    }
    let io = |p: &str, e: std::io::Error| CompileError::Io { path: p.to_string(), message: e.to_string() };
    std::fs::create_dir_all(&plan.work_dir).map_err(|e| io(&plan.work_dir, e))?;
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(&dir.display().to_string(), e))?;
    }
    let results: Vec<Result<(), CompileError>> = std::thread::scope(|s| {
        let handles: Vec<_> = plan.parts.iter().map(|step| s.spawn(move || run_step(step))).collect();
        handles.into_iter().map(|h| h.join().expect("render worker panicked")).collect()
    });
    for r in results {
        r?;
    }
    std::fs::write(&plan.concat_list_path, &plan.concat_list).map_err(|e| io(&plan.concat_list_path, e))?;
    run_step(&plan.concat)?;
    if let Some(c) = &plan.cover {
        run_step(c)?;
    }
    let duration_s = probe_duration(tpl, output)?;
    let _ = std::fs::remove_dir_all(&plan.work_dir);
    if (duration_s - plan.timeline_length).abs() > RENDER_TOLERANCE_S {
        return Err(CompileError::DurationMismatch {
            expected: plan.timeline_length,
            actual: duration_s,
            tolerance: RENDER_TOLERANCE_S,
        });
    }
    let video = RenderedVideo {
        path: plan.output.clone(),
        duration_s,
        cover: plan.cover.as_ref().map(|c| c.output.clone()),
    };
    Ok((plan, Some(video)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::edl::tests::two_entry;
    use crate::compiler::edl::{Music, Transition};
    use crate::compiler::TransitionKind;

    fn tpl() -> RendererTemplate {
        RendererTemplate { program: "ffmpeg".into(), ..Default::default() }
    }

    #[test]
    fn two_entry_plan_has_two_extracts_and_one_concat() {
        let p = plan_render(&two_entry(), Path::new("/media"), &tpl(), Path::new("/out/v.mp4"), false).unwrap();
        assert_eq!(p.parts.len(), 2);
        assert!(p.parts.iter().all(|s| s.label.starts_with("extract")));
        assert_eq!(p.steps().count(), 3);
        assert!(p.parts[0].args.contains(&"10.000".to_string()));
        assert!(p.parts[0].args.contains(&"4.000".to_string()));
        assert!(p.parts[0].args.contains(&"/media/a.mp4".to_string()));
    }

    #[test]
    fn fades_add_gap_steps() {
        let mut e = two_entry();
        e.transitions = vec![Transition { position: 1, kind: TransitionKind::Fade, duration: 0.5 }];
        let p = plan_render(&e, Path::new("/m"), &tpl(), Path::new("/o.mp4"), false).unwrap();
        assert_eq!(p.parts.len(), 3);
        assert_eq!(p.parts[1].label, "gap 1");
    }

    #[test]
    fn music_expands_extra_args() {
        let mut e = two_entry();
        e.music = Some(Music { track: "/a/calm.wav".into(), gain: 0.3 });
        let p = plan_render(&e, Path::new("/m"), &tpl(), Path::new("/o.mp4"), false).unwrap();
        let args = &p.concat.args;
        assert!(args.windows(2).any(|w| w[0] == "-i" && w[1] == "/a/calm.wav"));
        assert!(!args.contains(&"{extra_args}".to_string()));
    }

    #[test]
    fn dry_run_plan_is_deterministic() {
        let a = plan_render(&two_entry(), Path::new("/m"), &tpl(), Path::new("/o.mp4"), false).unwrap();
        let b = plan_render(&two_entry(), Path::new("/m"), &tpl(), Path::new("/o.mp4"), false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn missing_media_names_source() {
        let dir = tempfile::tempdir().unwrap();
        let e = plan_render(&two_entry(), dir.path(), &tpl(), Path::new("/o.mp4"), true).unwrap_err();
        assert!(matches!(e, CompileError::MissingMedia(s) if s == "a"));
    }

    #[test]
    fn duration_parsed_from_banner() {
        let banner = "Input #0, mov,mp4\n  Duration: 00:01:02.50, start: 0.000000, bitrate: 1 kb/s";
        assert_eq!(parse_duration(banner), Some(62.5));
        assert_eq!(parse_duration("nothing"), None);
    }
}
