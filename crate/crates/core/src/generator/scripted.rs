//! Rule-driven generator for fixtures, oracles and demos.
//!
//! Each rule matches on the task input body (or any input) and on the number
//! of tool hops already in the prefix, and emits one of a weighted set of
//! continuations. `{result}` in a continuation is replaced by the most recent
//! tool result (escaped) and `{input}` by the task input body.

use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{argmax, sample_index};
use super::{
    finish_continuation, Capabilities, GenerateRequest, GenerateResponse, Generator,
    GeneratorError, GeneratorKind, SamplingMode, UpdateReport,
};
use crate::datasets::ToolUseRecord;
use crate::protocol::{escape_body, parse_sequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptChoice {
    pub text: String,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Exact task input body to match; `None` matches any input.
    #[serde(default)]
    pub input: Option<String>,
    /// Number of completed tool hops in the prefix.
    #[serde(default)]
    pub hops: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub choices: Vec<ScriptChoice>,
}

impl ScriptRule {
    pub fn emit(input: Option<&str>, hops: usize, text: &str) -> Self {
        ScriptRule {
            input: input.map(str::to_string),
            hops,
            emit: Some(text.to_string()),
            choices: Vec::new(),
        }
    }

    pub fn choose(input: Option<&str>, hops: usize, choices: Vec<(&str, f64)>) -> Self {
        ScriptRule {
            input: input.map(str::to_string),
            hops,
            emit: None,
            choices: choices
                .into_iter()
                .map(|(t, w)| ScriptChoice {
                    text: t.to_string(),
                    weight: w,
                })
                .collect(),
        }
    }

    fn options(&self) -> Vec<ScriptChoice> {
        let mut opts = self.choices.clone();
        if let Some(text) = &self.emit {
            opts.insert(
                0,
                ScriptChoice {
                    text: text.clone(),
                    weight: 1.0,
                },
            );
        }
        opts
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    rules: Vec<ScriptRule>,
}

impl ScriptedGenerator {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedGenerator { rules }
    }

    /// Loads rules from JSONL, one rule object per line.
    pub fn from_jsonl(path: &Path) -> Result<Self, GeneratorError> {
        let file = std::fs::File::open(path)?;
        let mut rules = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line).map_err(|e| {
                GeneratorError::InvalidRequest(format!("script line {}: {e}", i + 1))
            })?;
            if rule.options().is_empty() {
                return Err(GeneratorError::InvalidRequest(format!(
                    "script line {}: rule has nothing to emit",
                    i + 1
                )));
            }
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[ScriptRule] {
        &self.rules
    }

    fn find_rule(&self, input: &str, hops: usize) -> Option<&ScriptRule> {
        let exact = self
            .rules
            .iter()
            .find(|r| r.hops == hops && r.input.as_deref() == Some(input));
        exact.or_else(|| self.rules.iter().find(|r| r.hops == hops && r.input.is_none()))
    }
}

impl Generator for ScriptedGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Scripted
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_update: false,
            supports_beam: true,
            concurrent_requests: 64,
        }
    }

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, GeneratorError> {
        request.sampling.validate()?;
        let body = request.prefix.strip_suffix(' ').unwrap_or(&request.prefix);
        let seq = parse_sequence(body, usize::MAX)
            .map_err(|e| GeneratorError::InvalidRequest(format!("prefix: {e}")))?;
        if seq.is_complete() {
            return Err(GeneratorError::InvalidRequest(
                "prefix already holds an output".into(),
            ));
        }
        let input = seq.task_input.body.as_str();
        let rule = self.find_rule(input, seq.hops.len()).ok_or_else(|| {
            GeneratorError::Failed(format!(
                "no script rule for input {input:?} after {} hops",
                seq.hops.len()
            ))
        })?;
        let options = rule.options();
        let scores: Vec<f64> = options
            .iter()
            .map(|o| if o.weight > 0.0 { o.weight.ln() } else { f64::NEG_INFINITY })
            .collect();
        let pick = match request.sampling.mode {
            SamplingMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(request.sampling.seed);
                sample_index(
                    &scores,
                    request.sampling.temperature,
                    request.sampling.top_k,
                    &mut rng,
                )
            }
            SamplingMode::Greedy | SamplingMode::Beam => argmax(&scores),
        }
        .ok_or_else(|| GeneratorError::Failed("script rule has no positive weight".into()))?;

        let last_result = seq.hops.last().map(|h| escape_body(&h.result.body));
        let mut text = options[pick].text.replace("{input}", &escape_body(input));
        if let Some(r) = last_result {
            text = text.replace("{result}", &r);
        }
        Ok(finish_continuation(&text, &request.stop_markers, request.max_chars))
    }

    fn update(&mut self, _dataset: &[ToolUseRecord]) -> Result<UpdateReport, GeneratorError> {
        Err(GeneratorError::CapabilityUnsupported(
            "scripted generators cannot be updated".into(),
        ))
    }
}
