//! Delimiter-based text-to-text tool interface.
//!
//! A sequence is a run of segments, each introduced by a delimiter token:
//!
//! ```text
//! |question how hot will it get in NYC today? |weather lookup region=NYC |result ... |output ...
//! ```
//!
//! A delimiter is an unescaped `|` at the start of the text or right after the
//! single separating space, followed by a label and exactly one space. Literal
//! bars inside bodies are written as `\|`.
//!
//! The first segment is the task input (any label), followed by zero or more
//! (tool call, `|result`) pairs and an optional `|output` segment.

mod driver;

pub use driver::{drive_generation, DriveConfig, DriveError, StopEvent, StopKind, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RESULT_LABEL: &str = "result";
pub const OUTPUT_LABEL: &str = "output";
/// Stop marker that triggers tool interception.
pub const RESULT_DELIMITER: &str = "|result";
pub const OUTPUT_DELIMITER: &str = "|output";
/// Label used for task inputs when the caller does not pick one.
pub const DEFAULT_INPUT_LABEL: &str = "question";
pub const DEFAULT_MAX_HOPS: usize = 1;
pub const DEFAULT_BUDGET_CHARS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("empty input")]
    EmptyInput,
    #[error("malformed delimiter at byte {position}: {reason}")]
    MalformedDelimiter { position: usize, reason: String },
    #[error("tool call '{label}' at byte {position} is not followed by a result")]
    DanglingToolCall { label: String, position: usize },
    #[error("sequence has more than {limit} tool hops")]
    HopLimitExceeded { limit: usize },
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl ProtocolError {
    fn malformed(position: usize, reason: impl Into<String>) -> Self {
        ProtocolError::MalformedDelimiter {
            position,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    TaskInput,
    ToolCall,
    ToolResult,
    TaskOutput,
}

/// One delimited piece of a sequence. `body` holds the unescaped payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub label: String,
    pub body: String,
}

/// Labels are non-empty and use only `[a-z0-9_-]`.
pub fn is_valid_label(label: &str) -> bool {
    !label.is_empty() && label.bytes().all(is_label_byte)
}

fn is_label_byte(b: u8) -> bool {
    b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_'
}

fn is_reserved(label: &str) -> bool {
    label == RESULT_LABEL || label == OUTPUT_LABEL
}

impl Segment {
    pub fn task_input(label: &str, body: impl Into<String>) -> Result<Self, ProtocolError> {
        let seg = Segment {
            kind: SegmentKind::TaskInput,
            label: label.to_string(),
            body: body.into(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn tool_call(label: &str, body: impl Into<String>) -> Result<Self, ProtocolError> {
        let seg = Segment {
            kind: SegmentKind::ToolCall,
            label: label.to_string(),
            body: body.into(),
        };
        seg.validate()?;
        Ok(seg)
    }

    pub fn tool_result(body: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::ToolResult,
            label: RESULT_LABEL.to_string(),
            body: body.into(),
        }
    }

    pub fn task_output(body: impl Into<String>) -> Self {
        Segment {
            kind: SegmentKind::TaskOutput,
            label: OUTPUT_LABEL.to_string(),
            body: body.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !is_valid_label(&self.label) {
            return Err(ProtocolError::InvariantViolation(format!(
                "invalid label {:?}",
                self.label
            )));
        }
        let ok = match self.kind {
            SegmentKind::TaskInput | SegmentKind::ToolCall => !is_reserved(&self.label),
            SegmentKind::ToolResult => self.label == RESULT_LABEL,
            SegmentKind::TaskOutput => self.label == OUTPUT_LABEL,
        };
        if ok {
            Ok(())
        } else {
            Err(ProtocolError::InvariantViolation(format!(
                "label {:?} does not fit segment kind {:?}",
                self.label, self.kind
            )))
        }
    }

    fn render_into(&self, out: &mut String) {
        out.push('|');
        out.push_str(&self.label);
        out.push(' ');
        out.push_str(&escape_body(&self.body));
    }
}

/// A tool call together with the result the runtime spliced in for it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub call: Segment,
    pub result: Segment,
}

/// Structured form of a delimited sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolAugmentedSequence {
    pub task_input: Segment,
    pub hops: Vec<Hop>,
    pub task_output: Option<Segment>,
}

impl ToolAugmentedSequence {
    pub fn new(input_label: &str, input: impl Into<String>) -> Result<Self, ProtocolError> {
        Ok(ToolAugmentedSequence {
            task_input: Segment::task_input(input_label, input)?,
            hops: Vec::new(),
            task_output: None,
        })
    }

    /// Builds a complete single-hop sequence.
    pub fn single_hop(
        input_label: &str,
        input: &str,
        tool_label: &str,
        tool_input: &str,
        tool_output: &str,
        output: &str,
    ) -> Result<Self, ProtocolError> {
        let mut seq = Self::new(input_label, input)?;
        seq.push_hop(Segment::tool_call(tool_label, tool_input)?, tool_output);
        seq.task_output = Some(Segment::task_output(output));
        Ok(seq)
    }

    pub fn push_hop(&mut self, call: Segment, result: impl Into<String>) {
        self.hops.push(Hop {
            call,
            result: Segment::tool_result(result),
        });
    }

    pub fn is_complete(&self) -> bool {
        self.task_output.is_some()
    }

    pub fn output(&self) -> Option<&str> {
        self.task_output.as_ref().map(|s| s.body.as_str())
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.task_input.kind != SegmentKind::TaskInput {
            return Err(ProtocolError::InvariantViolation(
                "first segment must be a task input".into(),
            ));
        }
        self.task_input.validate()?;
        for hop in &self.hops {
            if hop.call.kind != SegmentKind::ToolCall || hop.result.kind != SegmentKind::ToolResult
            {
                return Err(ProtocolError::InvariantViolation(
                    "hop must pair a tool call with a tool result".into(),
                ));
            }
            hop.call.validate()?;
            hop.result.validate()?;
        }
        if let Some(out) = &self.task_output {
            if out.kind != SegmentKind::TaskOutput {
                return Err(ProtocolError::InvariantViolation(
                    "final segment must be a task output".into(),
                ));
            }
            out.validate()?;
        }
        Ok(())
    }

    fn segments(&self) -> impl Iterator<Item = &Segment> {
        std::iter::once(&self.task_input)
            .chain(self.hops.iter().flat_map(|h| [&h.call, &h.result]))
            .chain(self.task_output.iter())
    }
}

/// Escapes literal bars so they cannot be read as delimiters.
pub fn escape_body(body: &str) -> String {
    body.replace('|', "\\|")
}

pub fn unescape_body(body: &str) -> String {
    body.replace("\\|", "|")
}

/// Renders a sequence as canonical text.
pub fn render_sequence(seq: &ToolAugmentedSequence) -> Result<String, ProtocolError> {
    seq.validate()?;
    let mut out = String::new();
    for (i, seg) in seq.segments().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        seg.render_into(&mut out);
    }
    Ok(out)
}

/// A segment as it appears in text, before structural checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawSegment {
    pub label: String,
    pub body: String,
    /// Byte offset of the delimiter's bar.
    pub offset: usize,
}

/// Splits text into delimited segments.
pub(crate) fn lex(text: &str) -> Result<Vec<RawSegment>, ProtocolError> {
    if text.is_empty() {
        return Err(ProtocolError::EmptyInput);
    }
    let bytes = text.as_bytes();
    if bytes[0] != b'|' {
        return Err(ProtocolError::malformed(0, "text must begin with a delimiter"));
    }
    let mut segments = Vec::new();
    let mut start = 0;
    loop {
        // `start` points at an unescaped bar at a token boundary.
        let mut j = start + 1;
        while j < bytes.len() && is_label_byte(bytes[j]) {
            j += 1;
        }
        if j == start + 1 {
            return Err(ProtocolError::malformed(start, "missing label after '|'"));
        }
        if j >= bytes.len() || bytes[j] != b' ' {
            return Err(ProtocolError::malformed(
                start,
                "label must be followed by a single space",
            ));
        }
        let label = &text[start + 1..j];
        let body_start = j + 1;
        let mut k = body_start;
        let mut next = None;
        while k < bytes.len() {
            match bytes[k] {
                b'\\' if bytes.get(k + 1) == Some(&b'|') => k += 2,
                b'|' => {
                    if k > body_start && bytes[k - 1] == b' ' {
                        next = Some(k);
                        break;
                    }
                    return Err(ProtocolError::malformed(k, "unescaped '|' inside a segment"));
                }
                _ => k += 1,
            }
        }
        let body_end = match next {
            Some(n) => n - 1,
            None => bytes.len(),
        };
        segments.push(RawSegment {
            label: label.to_string(),
            body: unescape_body(&text[body_start..body_end]),
            offset: start,
        });
        match next {
            Some(n) => start = n,
            None => break,
        }
    }
    Ok(segments)
}

fn structure(raw: Vec<RawSegment>, max_hops: usize) -> Result<ToolAugmentedSequence, ProtocolError> {
    let mut iter = raw.into_iter().peekable();
    let first = iter.next().ok_or(ProtocolError::EmptyInput)?;
    if is_reserved(&first.label) {
        return Err(ProtocolError::malformed(
            first.offset,
            "sequence must start with a task input",
        ));
    }
    let mut seq = ToolAugmentedSequence {
        task_input: Segment {
            kind: SegmentKind::TaskInput,
            label: first.label,
            body: first.body,
        },
        hops: Vec::new(),
        task_output: None,
    };
    while let Some(seg) = iter.next() {
        match seg.label.as_str() {
            OUTPUT_LABEL => {
                seq.task_output = Some(Segment::task_output(seg.body));
                if let Some(extra) = iter.next() {
                    return Err(ProtocolError::malformed(
                        extra.offset,
                        "no segment may follow the output",
                    ));
                }
            }
            RESULT_LABEL => {
                return Err(ProtocolError::malformed(
                    seg.offset,
                    "'|result' without a preceding tool call",
                ));
            }
            _ => {
                let has_result = iter.peek().is_some_and(|n| n.label == RESULT_LABEL);
                if !has_result {
                    return Err(ProtocolError::DanglingToolCall {
                        label: seg.label,
                        position: seg.offset,
                    });
                }
                let result = iter.next().expect("peeked");
                if seq.hops.len() >= max_hops {
                    return Err(ProtocolError::HopLimitExceeded { limit: max_hops });
                }
                seq.hops.push(Hop {
                    call: Segment {
                        kind: SegmentKind::ToolCall,
                        label: seg.label,
                        body: seg.body,
                    },
                    result: Segment::tool_result(result.body),
                });
            }
        }
    }
    Ok(seq)
}

/// Parses canonical sequence text. Sequences without an output segment are
/// accepted as incomplete; a tool call must always be followed by a result.
pub fn parse_sequence(text: &str, max_hops: usize) -> Result<ToolAugmentedSequence, ProtocolError> {
    structure(lex(text)?, max_hops)
}
