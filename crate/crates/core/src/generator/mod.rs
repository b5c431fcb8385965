//! Pluggable text generators: the policy that proposes tool calls and answers.
//!
//! Built-ins are [`ScriptedGenerator`] (rule-driven, for fixtures and oracles)
//! and [`TrainableGenerator`] (memorizing table with character n-gram backoff).
//! External processes attach through the newline-delimited JSON protocol in
//! [`wire`].

pub mod beam;
mod conformance;
pub mod sampling;
mod scripted;
mod trainable;
pub mod wire;

pub use conformance::{conformance_check, CheckResult, ConformanceReport};
pub use scripted::{ScriptChoice, ScriptRule, ScriptedGenerator};
pub use trainable::{TrainableConfig, TrainableGenerator};
pub use wire::ExternalGenerator;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::ToolUseRecord;

/// Defaults from the self-play recipe: temperature 1.0, top-k 40, 4 beams.
pub const DEFAULT_TEMPERATURE: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 40;
pub const DEFAULT_BEAM_WIDTH: usize = 4;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator failed: {0}")]
    Failed(String),
    #[error("capability unsupported: {0}")]
    CapabilityUnsupported(String),
    #[error("update requires a non-empty dataset")]
    EmptyDataset,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("wire protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Random,
    Beam,
    Greedy,
}

impl SamplingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SamplingMode::Random => "random",
            SamplingMode::Beam => "beam",
            SamplingMode::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = GeneratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SamplingMode::Random),
            "beam" => Ok(SamplingMode::Beam),
            "greedy" => Ok(SamplingMode::Greedy),
            other => Err(GeneratorError::InvalidRequest(format!(
                "unknown sampling mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub mode: SamplingMode,
    pub temperature: f64,
    pub top_k: usize,
    pub beam_width: usize,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            mode: SamplingMode::Random,
            temperature: DEFAULT_TEMPERATURE,
            top_k: DEFAULT_TOP_K,
            beam_width: DEFAULT_BEAM_WIDTH,
            seed: 0,
        }
    }
}

impl SamplingSpec {
    pub fn random(seed: u64) -> Self {
        SamplingSpec {
            seed,
            ..Default::default()
        }
    }

    pub fn greedy() -> Self {
        SamplingSpec {
            mode: SamplingMode::Greedy,
            ..Default::default()
        }
    }

    pub fn beam(width: usize) -> Self {
        SamplingSpec {
            mode: SamplingMode::Beam,
            beam_width: width,
            ..Default::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SamplingSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        if self.mode == SamplingMode::Random && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GeneratorError::InvalidRequest(
                "temperature must be positive for random sampling".into(),
            ));
        }
        if self.top_k == 0 {
            return Err(GeneratorError::InvalidRequest("top_k must be at least 1".into()));
        }
        if self.beam_width == 0 {
            return Err(GeneratorError::InvalidRequest(
                "beam_width must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Marker(String),
    MaxChars,
    EndOfText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prefix: String,
    pub stop_markers: Vec<String>,
    pub max_chars: usize,
    pub sampling: SamplingSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeneratorKind {
    Scripted,
    Trainable,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub supports_update: bool,
    pub supports_beam: bool,
    pub concurrent_requests: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub examples_seen: usize,
    pub version: u64,
}

/// The policy being bootstrapped.
///
/// `generate` takes `&self` and may be called concurrently up to
/// `capabilities().concurrent_requests`; `update` takes `&mut self`, so no
/// generation can be in flight while the policy changes.
pub trait Generator: Send + Sync {
    fn kind(&self) -> GeneratorKind;

    fn capabilities(&self) -> Capabilities;

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, GeneratorError>;

    /// Refits the policy on a tool-use set. Both the input→call mapping and
    /// the (input, call, result)→output mapping are learned from each record.
    fn update(&mut self, dataset: &[ToolUseRecord]) -> Result<UpdateReport, GeneratorError>;
}

/// Cuts a full continuation at the first stop marker (inclusive) and at
/// `max_chars` characters, whichever comes first.
pub fn finish_continuation(text: &str, stop_markers: &[String], max_chars: usize) -> GenerateResponse {
    if max_chars == 0 {
        return GenerateResponse {
            text: String::new(),
            stop_reason: StopReason::MaxChars,
        };
    }
    let earliest = stop_markers
        .iter()
        .filter(|m| !m.is_empty())
        .filter_map(|m| text.find(m.as_str()).map(|pos| (pos, m)))
        .min_by(|a, b| a.0.cmp(&b.0).then(b.1.len().cmp(&a.1.len())));
    let (candidate, marker) = match earliest {
        Some((pos, m)) => (&text[..pos + m.len()], Some(m)),
        None => (text, None),
    };
    match candidate.char_indices().nth(max_chars) {
        Some((cut, _)) => GenerateResponse {
            text: candidate[..cut].to_string(),
            stop_reason: StopReason::MaxChars,
        },
        None => GenerateResponse {
            text: candidate.to_string(),
            stop_reason: match marker {
                Some(m) => StopReason::Marker(m.clone()),
                None => StopReason::EndOfText,
            },
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stops(m: &[&str]) -> Vec<String> {
        m.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cuts_at_marker() {
        let r = finish_continuation("|weather x |result junk", &stops(&["|result"]), 100);
        assert_eq!(r.text, "|weather x |result");
        assert_eq!(r.stop_reason, StopReason::Marker("|result".into()));
    }

    #[test]
    fn earliest_marker_wins() {
        let r = finish_continuation("a b |c", &stops(&["|c", " "]), 100);
        assert_eq!(r.text, "a ");
        assert_eq!(r.stop_reason, StopReason::Marker(" ".into()));
    }

    #[test]
    fn max_chars_applies_before_marker() {
        let r = finish_continuation("héllo |result", &stops(&["|result"]), 3);
        assert_eq!(r.text, "hél");
        assert_eq!(r.stop_reason, StopReason::MaxChars);
        let r = finish_continuation("ab|r", &stops(&["|r"]), 4);
        assert_eq!(r.stop_reason, StopReason::Marker("|r".into()));
    }

    #[test]
    fn zero_budget() {
        let r = finish_continuation("", &[], 0);
        assert_eq!(r.text, "");
        assert_eq!(r.stop_reason, StopReason::MaxChars);
    }

    #[test]
    fn end_of_text() {
        let r = finish_continuation("|output 42", &stops(&["|result"]), 2048);
        assert_eq!(r.stop_reason, StopReason::EndOfText);
        assert_eq!(r.text, "|output 42");
    }

    #[test]
    fn sampling_spec_validation() {
        assert!(SamplingSpec::default().validate().is_ok());
        let bad = SamplingSpec {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(SamplingSpec { temperature: 0.0, ..SamplingSpec::greedy() }.validate().is_ok());
        assert!(SamplingSpec { top_k: 0, ..Default::default() }.validate().is_err());
        assert!(SamplingSpec::beam(0).validate().is_err());
    }
}
