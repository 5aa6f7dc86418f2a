//! Turn grammar: `<think>` reasoning, `<video_zoom>` JSON tool calls and
//! `<answer>` terminals.
//!
//! Parsing never fails. A turn that does not follow the grammar is returned
//! as [`Action::Malformed`] with a [`MalformedReason`], and the episode engine
//! turns that into an error observation.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ZOOM_OPEN: &str = "<video_zoom>";
pub const ZOOM_CLOSE: &str = "</video_zoom>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Relative slack used when rounding a frame count up, so that a product such
/// as `16.000000000000004` is charged as 16 frames rather than 17.
const FRAME_COUNT_SLACK: f64 = 1e-9;

/// A `<video_zoom>` request for the segment `[t_start, t_end]` sampled at `fps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub t_start: f64,
    pub t_end: f64,
    pub fps: f64,
}

impl ToolCall {
    pub fn new(t_start: f64, t_end: f64, fps: f64) -> Self {
        Self { t_start, t_end, fps }
    }

    /// True when the call satisfies `0 <= t_start < t_end` and `fps > 0`.
    pub fn is_valid(&self) -> bool {
        self.t_start.is_finite()
            && self.t_end.is_finite()
            && self.fps.is_finite()
            && self.t_start >= 0.0
            && self.t_start < self.t_end
            && self.fps > 0.0
    }

    pub fn requested_frames(&self) -> u64 {
        requested_frames(self)
    }
}

/// Frames charged for a call: `ceil((t_end - t_start) * fps)`.
///
/// Products within a relative `1e-9` of an integer are snapped to it before
/// rounding up, absorbing binary floating-point noise. Invalid calls are
/// charged zero frames; the environment rejects them before this matters.
pub fn requested_frames(call: &ToolCall) -> u64 {
    let raw = (call.t_end - call.t_start) * call.fps;
    if !raw.is_finite() || raw <= 0.0 {
        return 0;
    }
    let nearest = raw.round();
    if (raw - nearest).abs() <= FRAME_COUNT_SLACK * nearest.max(1.0) {
        nearest as u64
    } else {
        raw.ceil() as u64
    }
}

/// Why a turn failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MalformedReason {
    MissingThink,
    BothActions,
    /// More than one `<video_zoom>` or more than one `<answer>` block.
    MultipleActions,
    NoAction,
    BadJson,
    UnclosedTag,
}

impl MalformedReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingThink => "MISSING_THINK",
            Self::BothActions => "BOTH_ACTIONS",
            Self::MultipleActions => "MULTIPLE_ACTIONS",
            Self::NoAction => "NO_ACTION",
            Self::BadJson => "BAD_JSON",
            Self::UnclosedTag => "UNCLOSED_TAG",
        }
    }
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Action {
    ToolUse(ToolCall),
    Answer(String),
    Malformed(MalformedReason),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub think_text: String,
    pub action: Action,
}

impl ParsedTurn {
    pub fn is_tool_use(&self) -> bool {
        matches!(self.action, Action::ToolUse(_))
    }

    pub fn is_answer(&self) -> bool {
        matches!(self.action, Action::Answer(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatVerdict {
    pub ok: bool,
    pub per_turn: Vec<(usize, FormatIssue)>,
}

/// A failing entry in a [`FormatVerdict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FormatIssue {
    Malformed(MalformedReason),
    /// `<think></think>` present but empty.
    EmptyThink,
    /// A non-final turn that is not a tool call.
    EarlyAnswer,
    /// The final turn is not an answer.
    NoFinalAnswer,
}

struct Block<'a> {
    start: usize,
    end: usize,
    inner: &'a str,
}

#[derive(Debug)]
enum ScanError {
    Unclosed,
}

/// Collect every `open ... close` block of `text`, left to right. A stray
/// closing tag or an opening tag without a close is an error.
fn scan_blocks<'a>(text: &'a str, open: &str, close: &str) -> Result<Vec<Block<'a>>, ScanError> {
    let mut blocks = Vec::new();
    let mut cursor = 0;
    while cursor < text.len() {
        let next_open = text[cursor..].find(open).map(|i| i + cursor);
        let next_close = text[cursor..].find(close).map(|i| i + cursor);
        match (next_open, next_close) {
            (None, None) => break,
            (None, Some(_)) => return Err(ScanError::Unclosed),
            (Some(o), Some(c)) if c < o => return Err(ScanError::Unclosed),
            (Some(_), None) => return Err(ScanError::Unclosed),
            (Some(o), Some(_)) => {
                let body_start = o + open.len();
                let c = text[body_start..]
                    .find(close)
                    .map(|i| i + body_start)
                    .ok_or(ScanError::Unclosed)?;
                blocks.push(Block {
                    start: o,
                    end: c + close.len(),
                    inner: &text[body_start..c],
                });
                cursor = c + close.len();
            }
        }
    }
    Ok(blocks)
}

/// Remove the byte ranges covered by `blocks` from `text`.
fn strip_blocks(text: &str, blocks: &[Block<'_>]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for b in blocks {
        out.push_str(&text[cursor..b.start]);
        out.push(' ');
        cursor = b.end;
    }
    out.push_str(&text[cursor..]);
    out
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZoomPayload {
    segment: [f64; 2],
    fps: f64,
}

fn parse_zoom_json(body: &str) -> Option<ToolCall> {
    let payload: ZoomPayload = serde_json::from_str(body.trim()).ok()?;
    let call = ToolCall::new(payload.segment[0], payload.segment[1], payload.fps);
    // Segment validity is the environment's business; fps must be positive.
    if call.t_start.is_finite() && call.t_end.is_finite() && call.fps.is_finite() && call.fps > 0.0 {
        Some(call)
    } else {
        None
    }
}

/// Parse one complete assistant turn.
///
/// Think blocks are located first and removed; action tags are only
/// recognized outside of them. Several think blocks are joined with a newline.
pub fn parse_turn(text: &str) -> ParsedTurn {
    let malformed = |think_text: String, reason| ParsedTurn {
        think_text,
        action: Action::Malformed(reason),
    };

    let thinks = match scan_blocks(text, THINK_OPEN, THINK_CLOSE) {
        Ok(b) => b,
        Err(ScanError::Unclosed) => return malformed(String::new(), MalformedReason::UnclosedTag),
    };
    let think_text = thinks
        .iter()
        .map(|b| b.inner.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("\n");
    let rest = strip_blocks(text, &thinks);

    let zooms = scan_blocks(&rest, ZOOM_OPEN, ZOOM_CLOSE);
    let answers = scan_blocks(&rest, ANSWER_OPEN, ANSWER_CLOSE);
    let (zooms, answers) = match (zooms, answers) {
        (Ok(z), Ok(a)) => (z, a),
        _ => return malformed(think_text, MalformedReason::UnclosedTag),
    };
    // Tags nested inside another action block are not balanced grammar.
    let overlap = zooms
        .iter()
        .any(|z| answers.iter().any(|a| z.start < a.end && a.start < z.end));
    if overlap {
        return malformed(think_text, MalformedReason::UnclosedTag);
    }

    match (zooms.len(), answers.len()) {
        (0, 0) => malformed(think_text, MalformedReason::NoAction),
        (z, a) if z > 0 && a > 0 => malformed(think_text, MalformedReason::BothActions),
        (z, a) if z > 1 || a > 1 => malformed(think_text, MalformedReason::MultipleActions),
        _ if thinks.is_empty() => malformed(think_text, MalformedReason::MissingThink),
        (1, 0) => match parse_zoom_json(zooms[0].inner) {
            Some(call) => ParsedTurn {
                think_text,
                action: Action::ToolUse(call),
            },
            None => malformed(think_text, MalformedReason::BadJson),
        },
        _ => ParsedTurn {
            think_text,
            action: Action::Answer(answers[0].inner.trim().to_string()),
        },
    }
}

/// Check a whole episode's policy turns against the turn grammar.
pub fn validate_format(turns: &[ParsedTurn]) -> FormatVerdict {
    let mut per_turn = Vec::new();
    let last = turns.len().saturating_sub(1);
    for (i, turn) in turns.iter().enumerate() {
        if let Action::Malformed(reason) = turn.action {
            per_turn.push((i, FormatIssue::Malformed(reason)));
            continue;
        }
        if turn.think_text.trim().is_empty() {
            per_turn.push((i, FormatIssue::EmptyThink));
        } else if i < last && !turn.is_tool_use() {
            per_turn.push((i, FormatIssue::EarlyAnswer));
        } else if i == last && !turn.is_answer() {
            per_turn.push((i, FormatIssue::NoFinalAnswer));
        }
    }
    if turns.is_empty() {
        per_turn.push((0, FormatIssue::NoFinalAnswer));
    }
    FormatVerdict {
        ok: per_turn.is_empty(),
        per_turn,
    }
}

fn boxed_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\+boxed\{([^{}]*)\}").unwrap())
}

fn bare_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[(\[]?([A-Za-z])[)\]]?[.:)]?$").unwrap())
}

fn leading_label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[(\[]?([A-Z])[)\]]?[.:)]\s").unwrap())
}

fn answer_phrase_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(?:answer|option|choice)\b(?:\s+is)?\s*[:：]?\s*[(\[]?([A-Za-z])[)\]]?(?:[.,:;!)]|\s|$)")
            .unwrap()
    })
}

fn standalone_upper_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Z])\b").unwrap())
}

/// Normalize an answer body to a single uppercase choice label when one is
/// unambiguously present; otherwise return the trimmed text.
///
/// Handles `\boxed{B}`, `B.`, `(B)`, `B: Right hand` and phrases such as
/// `the answer is B`.
pub fn extract_answer(answer_text: &str) -> String {
    let trimmed = answer_text.trim();
    if let Some(caps) = boxed_re().captures(trimmed) {
        return extract_answer(&caps[1]);
    }
    if let Some(caps) = bare_label_re().captures(trimmed) {
        return caps[1].to_ascii_uppercase();
    }
    if let Some(caps) = leading_label_re().captures(trimmed) {
        return caps[1].to_string();
    }
    if let Some(caps) = answer_phrase_re().captures(trimmed) {
        return caps[1].to_ascii_uppercase();
    }
    let mut letters: Vec<&str> = standalone_upper_re()
        .captures_iter(trimmed)
        .map(|c| c.get(1).unwrap().as_str())
        .filter(|l| *l != "I")
        .collect();
    letters.dedup();
    if letters.len() == 1 {
        return letters[0].to_string();
    }
    trimmed.to_string()
}

/// Format a float so that it parses back to the same value and always carries
/// a decimal point (`4` -> `4.0`).
fn decimal_text(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Emit the wire form `<video_zoom> {"segment": [s, e], "fps": n} </video_zoom>`.
///
/// Integral fps values are written without a decimal point, as in the
/// system prompt's example.
pub fn render_tool_call(call: &ToolCall) -> String {
    format!(
        "{ZOOM_OPEN} {{\"segment\": [{}, {}], \"fps\": {}}} {ZOOM_CLOSE}",
        decimal_text(call.t_start),
        decimal_text(call.t_end),
        call.fps
    )
}
