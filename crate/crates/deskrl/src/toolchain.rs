//! Code-interpreter pipeline.
//!
//! Detects fenced code blocks inside reasoning text, executes them through
//! an operator-configured interpreter in an isolated child process (cleared
//! environment, wall-clock kill, bounded output capture), splices the
//! results back into the transcript, and iterates generation around tool
//! calls. A seeded prefix-injection transform manufactures tool-use
//! demonstrations from plain transcripts.

use crate::seed::rng_from;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Sentence inserted by the prefix-injection transform.
pub const DEFAULT_TOOL_PREFIX: &str =
    "Wait a minute, maybe I could use some code to double-check my reasoning.";

/// Marker appended to output streams cut at the capture limit.
pub const OUTPUT_TRUNCATED_MARKER: &str = "\n[output truncated]";

const SANDBOX_PATH: &str = "/usr/local/bin:/usr/bin:/bin";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("runner command is empty")]
    RunnerEmpty,
    #[error("runner `{0}` not found; configure an available interpreter")]
    RunnerMissing(String),
    #[error("no code block matching the invocation was found")]
    SpanNotFound,
    #[error("a result block is already spliced after the matching code block")]
    AlreadySpliced,
    #[error("text does not split into at least two parts")]
    Unsplittable,
    #[error("protocol markers overlap: `{0}` contains `{1}`")]
    OverlappingMarkers(String, String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transcript markers for code and result blocks, plus the iteration cap of
/// the generate-run-splice loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpliceProtocol {
    pub code_fence: String,
    pub result_open: String,
    pub result_close: String,
    pub max_iterations: usize,
}

impl Default for SpliceProtocol {
    fn default() -> Self {
        SpliceProtocol {
            code_fence: "```".to_string(),
            result_open: "<output>".to_string(),
            result_close: "</output>".to_string(),
            max_iterations: 4,
        }
    }
}

impl SpliceProtocol {
    /// Markers must be nonempty, mutually non-containing strings, and the
    /// iteration cap must be at least one.
    pub fn validate(&self) -> Result<(), ToolError> {
        let markers = [&self.code_fence, &self.result_open, &self.result_close];
        for m in markers {
            if m.is_empty() {
                return Err(ToolError::OverlappingMarkers(String::new(), String::new()));
            }
        }
        for (i, a) in markers.iter().enumerate() {
            for (j, b) in markers.iter().enumerate() {
                if i != j && a.contains(b.as_str()) {
                    return Err(ToolError::OverlappingMarkers((*a).clone(), (*b).clone()));
                }
            }
        }
        if self.max_iterations == 0 {
            return Err(ToolError::OverlappingMarkers(
                "max_iterations".into(),
                "0".into(),
            ));
        }
        Ok(())
    }
}

/// A fenced code block with its byte span in the source text (opening fence
/// line through closing fence line).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeBlock {
    pub code: String,
    pub language_tag: String,
    pub span: std::ops::Range<usize>,
}

/// Returns fenced blocks in order. A fence opens on a line beginning (after
/// indentation) with the fence string and closes on a line whose trimmed
/// content is exactly the fence; an unterminated fence yields no block.
pub fn extract_code_blocks(text: &str, protocol: &SpliceProtocol) -> Vec<CodeBlock> {
    let fence = &protocol.code_fence;
    let mut blocks = Vec::new();
    let mut open: Option<(usize, String, usize)> = None; // (span start, tag, code start)
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let content = line.strip_suffix('\n').unwrap_or(line);
        let trimmed = content.trim();
        match &open {
            None => {
                if let Some(rest) = trimmed.strip_prefix(fence.as_str()) {
                    open = Some((offset, rest.trim().to_string(), offset + line.len()));
                }
            }
            Some((start, tag, code_start)) => {
                if trimmed == fence.as_str() {
                    let code_end = offset;
                    let code = text[*code_start..code_end].to_string();
                    blocks.push(CodeBlock {
                        code,
                        language_tag: tag.clone(),
                        span: *start..offset + content.len(),
                    });
                    open = None;
                }
            }
        }
        offset += line.len();
    }
    blocks
}

/// Resource limits for one sandboxed execution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExecLimits {
    pub wall_time: Duration,
    pub output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            wall_time: Duration::from_secs(1),
            output_bytes: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum InvocationStatus {
    Exited(i32),
    Signal(i32),
    Timeout,
}

impl InvocationStatus {
    pub fn success(&self) -> bool {
        matches!(self, InvocationStatus::Exited(0))
    }
}

/// Record of one sandboxed code execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolInvocation {
    pub code: String,
    pub language_tag: String,
    pub stdout: String,
    pub stderr: String,
    pub status: InvocationStatus,
    pub wall_time_secs: f64,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
}

/// Runs `code` through the runner command (`runner[0]` plus arguments, then
/// the path of a temp file holding the code) in a child process with a
/// cleared environment. The child is killed at the wall-time limit; each
/// output stream is captured up to the byte limit and marked when cut.
pub fn run_sandboxed(
    code: &str,
    language_tag: &str,
    runner: &[String],
    limits: &ExecLimits,
) -> Result<ToolInvocation, ToolError> {
    let (program, args) = runner.split_first().ok_or(ToolError::RunnerEmpty)?;
    let workdir = tempfile::tempdir()?;
    let code_path: PathBuf = workdir.path().join("snippet");
    std::fs::write(&code_path, code)?;

    let mut command = Command::new(program);
    command
        .args(args)
        .arg(&code_path)
        .current_dir(workdir.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .env_clear()
        .env("PATH", SANDBOX_PATH)
        .env("HOME", workdir.path())
        .env("LC_ALL", "C");

    let start = Instant::now();
    let mut child = command.spawn().map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            ToolError::RunnerMissing(program.clone())
        } else {
            ToolError::Io(e)
        }
    })?;

    let stdout_pipe = child.stdout.take().expect("stdout piped");
    let stderr_pipe = child.stderr.take().expect("stderr piped");
    let cap = limits.output_bytes;
    let stdout_handle = thread::spawn(move || drain_capped(stdout_pipe, cap));
    let stderr_handle = thread::spawn(move || drain_capped(stderr_pipe, cap));

    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break Some(status);
        }
        if start.elapsed() >= limits.wall_time {
            timed_out = true;
            child.kill().ok();
            child.wait().ok();
            break None;
        }
        thread::sleep(Duration::from_millis(5));
    };
    let wall_time = start.elapsed();

    let (stdout_bytes, stdout_truncated) = stdout_handle.join().unwrap_or_default();
    let (stderr_bytes, stderr_truncated) = stderr_handle.join().unwrap_or_default();

    let status = if timed_out {
        InvocationStatus::Timeout
    } else {
        match status.and_then(|s| s.code()) {
            Some(code) => InvocationStatus::Exited(code),
            None => InvocationStatus::Signal(-1),
        }
    };

    let mut stdout = String::from_utf8_lossy(&stdout_bytes).into_owned();
    if stdout_truncated {
        stdout.push_str(OUTPUT_TRUNCATED_MARKER);
    }
    let mut stderr = String::from_utf8_lossy(&stderr_bytes).into_owned();
    if stderr_truncated {
        stderr.push_str(OUTPUT_TRUNCATED_MARKER);
    }

    Ok(ToolInvocation {
        code: code.to_string(),
        language_tag: language_tag.to_string(),
        stdout,
        stderr,
        status,
        wall_time_secs: wall_time.as_secs_f64(),
        stdout_truncated,
        stderr_truncated,
    })
}

/// Reads a stream, keeping at most `cap` bytes but draining the rest so the
/// child never blocks on a full pipe.
fn drain_capped<R: Read>(mut reader: R, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut truncated = false;
    let mut chunk = [0u8; 8192];
    loop {
        match reader.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if kept.len() < cap {
                    let take = n.min(cap - kept.len());
                    kept.extend_from_slice(&chunk[..take]);
                    if take < n {
                        truncated = true;
                    }
                } else {
                    truncated = true;
                }
            }
        }
    }
    (kept, truncated)
}

/// Renders the result block body: stdout, plus exit status and stderr when
/// the program did not succeed.
fn result_body(invocation: &ToolInvocation) -> String {
    let mut body = invocation.stdout.clone();
    if !invocation.status.success() {
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        let status_line = match invocation.status {
            InvocationStatus::Exited(code) => format!("exit status: {code}"),
            InvocationStatus::Signal(sig) => format!("killed by signal: {sig}"),
            InvocationStatus::Timeout => "exit status: timeout".to_string(),
        };
        body.push_str(&status_line);
        if !invocation.stderr.is_empty() {
            body.push('\n');
            body.push_str(&invocation.stderr);
        }
    }
    body
}

/// Inserts the invocation's result block immediately after the code block
/// whose contents match the invocation. Pure text transform; everything
/// outside the inserted block is untouched. Re-splicing the same invocation
/// is rejected once a result block follows the code block.
pub fn splice_result(
    text: &str,
    invocation: &ToolInvocation,
    protocol: &SpliceProtocol,
) -> Result<String, ToolError> {
    let blocks = extract_code_blocks(text, protocol);
    let mut found_match = false;
    for block in &blocks {
        if block.code != invocation.code {
            continue;
        }
        found_match = true;
        let after = &text[block.span.end..];
        let upcoming = after.trim_start();
        if upcoming.starts_with(protocol.result_open.as_str()) {
            continue;
        }
        let mut body = result_body(invocation);
        if !body.is_empty() && !body.ends_with('\n') {
            body.push('\n');
        }
        let inserted = format!(
            "\n{}\n{}{}",
            protocol.result_open, body, protocol.result_close
        );
        let mut out = String::with_capacity(text.len() + inserted.len());
        out.push_str(&text[..block.span.end]);
        out.push_str(&inserted);
        out.push_str(after);
        return Ok(out);
    }
    if found_match {
        Err(ToolError::AlreadySpliced)
    } else {
        Err(ToolError::SpanNotFound)
    }
}

/// How a transcript is split before prefix injection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitStrategy {
    Paragraphs,
}

/// Cuts the response at a seeded internal split point, drops the remainder,
/// and appends the prefix so a generator can continue from there. The
/// output always ends with the prefix.
pub fn inject_prefix(
    response_text: &str,
    strategy: SplitStrategy,
    prefix_text: &str,
    seed: u64,
) -> Result<String, ToolError> {
    let parts: Vec<&str> = match strategy {
        SplitStrategy::Paragraphs => response_text
            .split("\n\n")
            .filter(|p| !p.trim().is_empty())
            .collect(),
    };
    if parts.len() < 2 {
        return Err(ToolError::Unsplittable);
    }
    let mut rng = rng_from(seed);
    let cut = rng.gen_range(1..parts.len());
    let mut out = parts[..cut].join("\n\n");
    out.push_str("\n\n");
    out.push_str(prefix_text);
    Ok(out)
}

/// Produces continuations of a partial transcript. `None` means the
/// generator considers the transcript finished.
pub trait Generator {
    fn continue_transcript(&mut self, transcript: &str) -> Option<String>;
}

/// Replays a fixed list of continuations; the standard test double.
pub struct ScriptedGenerator {
    continuations: std::collections::VecDeque<String>,
}

impl ScriptedGenerator {
    pub fn new<I: IntoIterator<Item = String>>(continuations: I) -> Self {
        ScriptedGenerator {
            continuations: continuations.into_iter().collect(),
        }
    }
}

impl Generator for ScriptedGenerator {
    fn continue_transcript(&mut self, _transcript: &str) -> Option<String> {
        self.continuations.pop_front()
    }
}

/// Result of a generate-run-splice loop.
#[derive(Debug)]
pub struct ToolLoopOutcome {
    pub transcript: String,
    pub invocations: Vec<ToolInvocation>,
    /// True when the loop stopped because the iteration cap was reached
    /// while a new code block was still pending.
    pub capped: bool,
}

/// Alternates generation and execution: after each continuation, the last
/// not-yet-executed code block (if any) runs and its result is spliced in,
/// until the generator emits no new code block or the cap is reached.
pub fn tool_loop<G: Generator>(
    generator: &mut G,
    seed_transcript: &str,
    runner: &[String],
    limits: &ExecLimits,
    protocol: &SpliceProtocol,
) -> Result<ToolLoopOutcome, ToolError> {
    protocol.validate()?;
    let mut transcript = seed_transcript.to_string();
    let mut invocations = Vec::new();
    let mut executed = extract_code_blocks(&transcript, protocol).len();
    let mut capped = false;
    while let Some(continuation) = generator.continue_transcript(&transcript) {
        transcript.push_str(&continuation);
        let blocks = extract_code_blocks(&transcript, protocol);
        if blocks.len() <= executed {
            break;
        }
        if invocations.len() >= protocol.max_iterations {
            capped = true;
            break;
        }
        let block = blocks.last().expect("nonempty by count check");
        let invocation = run_sandboxed(&block.code, &block.language_tag, runner, limits)?;
        transcript = splice_result(&transcript, &invocation, protocol)?;
        invocations.push(invocation);
        executed = blocks.len();
    }
    Ok(ToolLoopOutcome {
        transcript,
        invocations,
        capped,
    })
}
