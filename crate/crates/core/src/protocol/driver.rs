//! Decode loop that intercepts `|result`, calls the tool, and resumes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    lex, render_sequence, ProtocolError, Segment, ToolAugmentedSequence, DEFAULT_BUDGET_CHARS,
    DEFAULT_INPUT_LABEL, DEFAULT_MAX_HOPS, OUTPUT_LABEL, RESULT_DELIMITER, RESULT_LABEL,
};
use crate::generator::sampling::mix_seed;
use crate::generator::{GenerateRequest, Generator, GeneratorError, SamplingSpec, StopReason};
use crate::tools::{ToolError, ToolRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct DriveConfig {
    /// Maximum generated characters per generation leg.
    pub budget_chars: usize,
    pub max_hops: usize,
    pub sampling: SamplingSpec,
    pub input_label: String,
}

impl Default for DriveConfig {
    fn default() -> Self {
        DriveConfig {
            budget_chars: DEFAULT_BUDGET_CHARS,
            max_hops: DEFAULT_MAX_HOPS,
            sampling: SamplingSpec::default(),
            input_label: DEFAULT_INPUT_LABEL.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    ToolCallBoundary,
    OutputComplete,
    EndOfText,
    BudgetExhausted,
}

/// Why a generation leg ended; `position` is a character offset into the
/// sequence text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopEvent {
    pub reason: StopKind,
    pub position: usize,
}

/// A completed drive: the sequence plus anything worth flagging.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sequence: ToolAugmentedSequence,
    /// Messages of tool invocations that failed; each was spliced in as
    /// `ERROR: <message>`.
    pub tool_errors: Vec<String>,
    pub events: Vec<StopEvent>,
}

impl Trajectory {
    pub fn flagged(&self) -> bool {
        !self.tool_errors.is_empty()
    }

    pub fn text(&self) -> String {
        render_sequence(&self.sequence).expect("driver only builds valid sequences")
    }
}

#[derive(Debug, Error)]
pub enum DriveError {
    #[error("unknown tool '{label}'")]
    UnknownTool { label: String, text: String },
    #[error("no output within {budget} characters")]
    BudgetExhausted { budget: usize, text: String },
    #[error("generator emitted malformed text: {error}")]
    Malformed { error: ProtocolError, text: String },
    #[error("more than {limit} tool hops requested")]
    HopLimitExceeded { limit: usize, text: String },
    #[error("generator produced no output")]
    NoOutput { text: String },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Protocol(ProtocolError),
}

impl DriveError {
    /// Sequence text accumulated before the failure, when there is any.
    pub fn partial_text(&self) -> Option<&str> {
        match self {
            DriveError::UnknownTool { text, .. }
            | DriveError::BudgetExhausted { text, .. }
            | DriveError::Malformed { text, .. }
            | DriveError::HopLimitExceeded { text, .. }
            | DriveError::NoOutput { text } => Some(text),
            DriveError::Generator(_) | DriveError::Protocol(_) => None,
        }
    }
}

/// Runs generation for one task input, pausing at every `|result` to splice
/// in the registry's answer for the preceding tool call.
///
/// Generator text after an intercepted `|result` is discarded, so every result
/// body in the returned sequence came from the registry.
pub fn drive_generation(
    generator: &dyn Generator,
    registry: &ToolRegistry,
    task_input: &str,
    config: &DriveConfig,
) -> Result<Trajectory, DriveError> {
    let mut seq =
        ToolAugmentedSequence::new(&config.input_label, task_input).map_err(DriveError::Protocol)?;
    let mut tool_errors = Vec::new();
    let mut events = Vec::new();
    let stops = vec![RESULT_DELIMITER.to_string()];

    for leg in 0u64.. {
        let rendered = render_sequence(&seq).map_err(DriveError::Protocol)?;
        let prefix = format!("{rendered} ");
        let request = GenerateRequest {
            prefix: prefix.clone(),
            stop_markers: stops.clone(),
            max_chars: config.budget_chars,
            sampling: config.sampling.with_seed(mix_seed(&[config.sampling.seed, leg])),
        };
        let response = generator.generate(&request)?;

        // Re-apply the limits locally; a misbehaving generator must not leak
        // text past its budget or past the first `|result`.
        let mut text = response.text;
        let mut over_budget = response.stop_reason == StopReason::MaxChars;
        if let Some((cut, _)) = text.char_indices().nth(config.budget_chars) {
            text.truncate(cut);
            over_budget = true;
        }
        let marker_at = text.find(RESULT_DELIMITER);
        let full_text = |upto: &str| format!("{prefix}{upto}");

        if let Some(pos) = marker_at {
            let before = &text[..pos];
            let partial = full_text(&text[..pos + RESULT_DELIMITER.len()]);
            let call_text = before.strip_suffix(' ').ok_or_else(|| DriveError::Malformed {
                error: ProtocolError::MalformedDelimiter {
                    position: prefix.len() + pos,
                    reason: "'|result' without a preceding tool call".into(),
                },
                text: partial.clone(),
            })?;
            let call = parse_call(call_text).map_err(|error| DriveError::Malformed {
                error,
                text: partial.clone(),
            })?;
            if seq.hops.len() >= config.max_hops {
                return Err(DriveError::HopLimitExceeded {
                    limit: config.max_hops,
                    text: partial,
                });
            }
            if !registry.contains(&call.label) {
                return Err(DriveError::UnknownTool {
                    label: call.label,
                    text: partial,
                });
            }
            events.push(StopEvent {
                reason: StopKind::ToolCallBoundary,
                position: prefix.chars().count() + before.chars().count(),
            });
            let result = match registry.invoke(&call.label, &call.body) {
                Ok(r) => r,
                Err(ToolError::UnknownTool(label)) => {
                    return Err(DriveError::UnknownTool {
                        label,
                        text: partial,
                    })
                }
                Err(e) => {
                    let message = e.to_string();
                    let spliced = format!("ERROR: {message}");
                    tool_errors.push(message);
                    spliced
                }
            };
            seq.push_hop(call, result);
            continue;
        }

        let partial = full_text(&text);
        if text.is_empty() {
            return Err(if over_budget {
                DriveError::BudgetExhausted {
                    budget: config.budget_chars,
                    text: partial,
                }
            } else {
                DriveError::NoOutput { text: partial }
            });
        }
        let output = match parse_output(&text) {
            Ok(o) => o,
            Err(_) if over_budget => {
                return Err(DriveError::BudgetExhausted {
                    budget: config.budget_chars,
                    text: partial,
                })
            }
            Err(error) => return Err(DriveError::Malformed { error, text: partial }),
        };
        let position = prefix.chars().count() + text.chars().count();
        events.push(StopEvent {
            reason: StopKind::OutputComplete,
            position,
        });
        seq.task_output = Some(output);
        return Ok(Trajectory {
            sequence: seq,
            tool_errors,
            events,
        });
    }
    unreachable!("leg counter is unbounded")
}

fn parse_call(text: &str) -> Result<Segment, ProtocolError> {
    let mut segs = lex(text)?;
    if segs.len() != 1 {
        let offset = segs.get(1).map_or(0, |s| s.offset);
        return Err(ProtocolError::MalformedDelimiter {
            position: offset,
            reason: "expected exactly one tool call before '|result'".into(),
        });
    }
    let seg = segs.remove(0);
    if seg.label == OUTPUT_LABEL || seg.label == RESULT_LABEL {
        return Err(ProtocolError::MalformedDelimiter {
            position: seg.offset,
            reason: format!("'|{}' cannot be a tool call", seg.label),
        });
    }
    Segment::tool_call(&seg.label, seg.body)
}

fn parse_output(text: &str) -> Result<Segment, ProtocolError> {
    let mut segs = lex(text)?;
    match segs.first() {
        Some(first) if first.label == OUTPUT_LABEL => {
            if let Some(extra) = segs.get(1) {
                return Err(ProtocolError::MalformedDelimiter {
                    position: extra.offset,
                    reason: "no segment may follow the output".into(),
                });
            }
            Ok(Segment::task_output(segs.remove(0).body))
        }
        Some(first) if first.label == RESULT_LABEL => Err(ProtocolError::MalformedDelimiter {
            position: first.offset,
            reason: "'|result' without a preceding tool call".into(),
        }),
        Some(first) => Err(ProtocolError::DanglingToolCall {
            label: first.label.clone(),
            position: first.offset,
        }),
        None => Err(ProtocolError::EmptyInput),
    }
}
