//! Desk-scale trainable policy.
//!
//! Two factors are fit from a tool-use set, mirroring the two conditionals the
//! update maximizes:
//!
//! * input → tool call: an exact-match table keyed by the task input, backed
//!   off to *call templates*. A template is the tool input with every number
//!   copied from the task input replaced by a slot (`Add({0}, {1})`), so it can
//!   be re-instantiated for unseen inputs.
//! * (input, call, result) → output: an exact-match table backed off to
//!   *output templates* (copy the result, round it, or a literal answer).
//!
//! Each factor backs off in three levels: the exact input, then template
//! counts for the input's masked pattern (numbers replaced by `#`), then all
//! templates ranked by an order-4 character n-gram model of the masked inputs
//! they were seen with (add-one smoothing, mean log-probability per n-gram).
//! Greedy and beam decoding use the most specific level available; random
//! sampling gives that level `memory_weight` and passes the rest down.
//! Candidate scores are treated like LM logits: greedy takes the argmax,
//! random sampling applies temperature and top-k, beam search runs over the
//! candidate texts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::beam::beam_search;
use super::sampling::{argmax, sample_index};
use super::{
    finish_continuation, Capabilities, GenerateRequest, GenerateResponse, Generator,
    GeneratorError, GeneratorKind, SamplingMode, StopReason, UpdateReport,
};
use crate::datasets::ToolUseRecord;
use crate::protocol::{escape_body, parse_sequence, OUTPUT_DELIMITER, RESULT_DELIMITER};
use crate::tools::formula::render_rounded;

const CACHE_LIMIT: usize = 200_000;
const MAX_ROUND_DECIMALS: u8 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainableConfig {
    pub ngram_order: usize,
    /// Mixture weight of the most specific backoff level when sampling
    /// randomly. Greedy and beam decoding use that level alone.
    pub memory_weight: f64,
}

impl Default for TrainableConfig {
    fn default() -> Self {
        TrainableConfig {
            ngram_order: 4,
            memory_weight: 0.9,
        }
    }
}

#[derive(Debug, Default)]
struct Profile {
    counts: HashMap<String, u32>,
    total: u64,
}

impl Profile {
    fn add(&mut self, grams: &[String]) {
        for g in grams {
            *self.counts.entry(g.clone()).or_default() += 1;
        }
        self.total += grams.len() as u64;
    }

    fn mean_log_prob(&self, grams: &[String], vocab: usize) -> f64 {
        if grams.is_empty() {
            return 0.0;
        }
        let denom = (self.total + vocab as u64 + 1) as f64;
        let sum: f64 = grams
            .iter()
            .map(|g| ((self.counts.get(g).copied().unwrap_or(0) + 1) as f64 / denom).ln())
            .sum();
        sum / grams.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct CallTemplate {
    label: String,
    pattern: String,
    slots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum OutputTemplate {
    Copy,
    Round(u8),
    Literal(String),
}

impl OutputTemplate {
    fn derive(result: &str, output: &str) -> Self {
        if output == result {
            return OutputTemplate::Copy;
        }
        if let Some(v) = parse_finite(result) {
            for d in 0..=MAX_ROUND_DECIMALS {
                if render_rounded(v, d as usize) == output {
                    return OutputTemplate::Round(d);
                }
            }
        }
        OutputTemplate::Literal(output.to_string())
    }

    fn instantiate(&self, result: &str) -> Option<String> {
        match self {
            OutputTemplate::Copy => Some(result.to_string()),
            OutputTemplate::Round(d) => parse_finite(result).map(|v| render_rounded(v, *d as usize)),
            OutputTemplate::Literal(s) => Some(s.clone()),
        }
    }
}

fn parse_finite(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

type CallKey = (String, String);
type OutputKey = (String, String, String, String);

#[derive(Debug, Default)]
struct Model {
    calls: HashMap<String, BTreeMap<CallKey, u32>>,
    outputs: HashMap<OutputKey, BTreeMap<String, u32>>,
    call_templates: BTreeMap<CallTemplate, Profile>,
    output_templates: BTreeMap<OutputTemplate, Profile>,
    call_patterns: HashMap<String, BTreeMap<CallTemplate, u32>>,
    output_patterns: HashMap<String, BTreeMap<OutputTemplate, u32>>,
    call_vocab: usize,
    output_vocab: usize,
}

impl Model {
    fn fit(dataset: &[ToolUseRecord], order: usize) -> Self {
        let mut m = Model::default();
        let mut call_grams = HashSet::new();
        let mut output_grams = HashSet::new();
        for r in dataset {
            *m.calls
                .entry(r.input.clone())
                .or_default()
                .entry((r.tool_label.clone(), r.tool_input.clone()))
                .or_default() += 1;
            *m.outputs
                .entry((
                    r.input.clone(),
                    r.tool_label.clone(),
                    r.tool_input.clone(),
                    r.tool_output.clone(),
                ))
                .or_default()
                .entry(r.output.clone())
                .or_default() += 1;

            let delex = Delexicalized::new(&r.input);
            let grams = char_ngrams(&delex.pattern, order);
            if let Some((pattern, slots)) = call_pattern(&r.tool_input, &delex.numbers) {
                let key = CallTemplate {
                    label: r.tool_label.clone(),
                    pattern,
                    slots,
                };
                m.call_templates.entry(key.clone()).or_default().add(&grams);
                *m.call_patterns
                    .entry(delex.pattern.clone())
                    .or_default()
                    .entry(key)
                    .or_default() += 1;
                call_grams.extend(grams.iter().cloned());
            }
            let out = OutputTemplate::derive(&r.tool_output, &r.output);
            m.output_templates.entry(out.clone()).or_default().add(&grams);
            *m.output_patterns
                .entry(delex.pattern)
                .or_default()
                .entry(out)
                .or_default() += 1;
            output_grams.extend(grams);
        }
        m.call_vocab = call_grams.len();
        m.output_vocab = output_grams.len();
        m
    }
}

/// Task input with numbers masked, plus the numbers in order.
struct Delexicalized {
    pattern: String,
    numbers: Vec<String>,
}

impl Delexicalized {
    fn new(text: &str) -> Self {
        let mut pattern = String::with_capacity(text.len());
        let mut numbers = Vec::new();
        let mut last = 0;
        for (start, end) in number_spans(text) {
            pattern.push_str(&text[last..start]);
            pattern.push('#');
            numbers.push(text[start..end].to_string());
            last = end;
        }
        pattern.push_str(&text[last..]);
        Delexicalized { pattern, numbers }
    }
}

/// Byte spans of unsigned decimal literals not glued to a preceding word.
fn number_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let glued = i > 0 && (bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_' || bytes[i - 1] == b'.');
        if bytes[i].is_ascii_digit() && !glued {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            spans.push((start, i));
        } else {
            i += 1;
        }
    }
    spans
}

/// Replaces numbers in a tool input that were copied from the task input by
/// `{i}` slots. Literal braces are doubled. Returns `None` when the task input
/// repeats a number, since the slot would be ambiguous.
fn call_pattern(tool_input: &str, numbers: &[String]) -> Option<(String, usize)> {
    let mut seen = HashSet::new();
    if !numbers.iter().all(|n| seen.insert(n)) {
        return None;
    }
    let escape = |s: &str| s.replace('{', "{{").replace('}', "}}");
    let mut out = String::new();
    let mut slots = 0;
    let mut last = 0;
    for (start, end) in number_spans(tool_input) {
        let lit = &tool_input[start..end];
        if let Some(i) = numbers.iter().position(|n| n == lit) {
            out.push_str(&escape(&tool_input[last..start]));
            out.push_str(&format!("{{{i}}}"));
            slots = slots.max(i + 1);
            last = end;
        }
    }
    out.push_str(&escape(&tool_input[last..]));
    Some((out, slots))
}

fn instantiate_call(pattern: &str, numbers: &[String]) -> Option<String> {
    let mut out = String::with_capacity(pattern.len());
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut idx = String::new();
                for d in chars.by_ref() {
                    if d == '}' {
                        break;
                    }
                    idx.push(d);
                }
                out.push_str(numbers.get(idx.parse::<usize>().ok()?)?);
            }
            other => out.push(other),
        }
    }
    Some(out)
}

fn char_ngrams(text: &str, order: usize) -> Vec<String> {
    let order = order.max(1);
    let mut chars: Vec<char> = std::iter::repeat_n('\u{2}', order - 1).collect();
    chars.extend(text.chars());
    chars.push('\u{3}');
    chars.windows(order).map(|w| w.iter().collect()).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn frequencies<K: Clone + Ord>(counts: &BTreeMap<K, u32>) -> Vec<(K, f64)> {
    let total: u32 = counts.values().sum();
    counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
        .collect()
}

/// Mixes backoff levels, most specific first. Deterministic decoding keeps
/// the first non-empty level; random sampling gives it `weight` and hands the
/// remaining mass to the levels below.
fn combine<K: Ord + Clone>(levels: Vec<Vec<(K, f64)>>, weight: f64, deterministic: bool) -> Vec<(K, f64)> {
    let levels: Vec<_> = levels.into_iter().filter(|l| !l.is_empty()).collect();
    let mut merged: BTreeMap<K, f64> = BTreeMap::new();
    let mut mass = 1.0;
    let last = if deterministic { levels.len().min(1) } else { levels.len() };
    for (i, level) in levels.into_iter().take(last).enumerate() {
        let share = if i + 1 == last { mass } else { mass * weight };
        for (k, p) in level {
            *merged.entry(k).or_default() += share * p;
        }
        mass -= share;
    }
    merged.into_iter().collect()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Flavor {
    Deterministic,
    Random,
}

/// Candidate continuations with log-probabilities, sorted by sort key.
type Candidates = Arc<Vec<(String, f64)>>;

#[derive(Debug)]
pub struct TrainableGenerator {
    config: TrainableConfig,
    version: u64,
    model: Model,
    cache: Mutex<HashMap<(String, Flavor), Candidates>>,
}

impl std::fmt::Debug for Flavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Flavor::Deterministic => "deterministic",
            Flavor::Random => "random",
        })
    }
}

impl Default for TrainableGenerator {
    fn default() -> Self {
        Self::new(TrainableConfig::default())
    }
}

impl TrainableGenerator {
    pub fn new(config: TrainableConfig) -> Self {
        TrainableGenerator {
            config,
            version: 0,
            model: Model::default(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn call_candidates(&self, input: &str, flavor: Flavor) -> Vec<(String, f64)> {
        let delex = Delexicalized::new(input);
        let grams = char_ngrams(&delex.pattern, self.config.ngram_order);
        let mut keys = Vec::new();
        let mut logits = Vec::new();
        for (tmpl, profile) in &self.model.call_templates {
            if tmpl.slots > delex.numbers.len() {
                continue;
            }
            if let Some(t) = instantiate_call(&tmpl.pattern, &delex.numbers) {
                // Sort key puts the tool input first so ties favour smaller t.
                keys.push((t, tmpl.label.clone()));
                logits.push(profile.mean_log_prob(&grams, self.model.call_vocab));
            }
        }
        let ranked: Vec<_> = keys.into_iter().zip(softmax(&logits)).collect();
        let memory = self.model.calls.get(input).map_or_else(Vec::new, |counts| {
            frequencies(counts)
                .into_iter()
                .map(|((label, t), p)| ((t, label), p))
                .collect()
        });
        let pattern = self.model.call_patterns.get(&delex.pattern).map_or_else(Vec::new, |counts| {
            let found: BTreeMap<_, u32> = counts
                .iter()
                .filter_map(|(tmpl, &c)| {
                    instantiate_call(&tmpl.pattern, &delex.numbers).map(|t| ((t, tmpl.label.clone()), c))
                })
                .collect();
            if found.is_empty() { Vec::new() } else { frequencies(&found) }
        });
        combine(
            vec![memory, pattern, ranked],
            self.config.memory_weight,
            flavor == Flavor::Deterministic,
        )
        .into_iter()
        .map(|((t, label), p)| (format!("|{label} {} {RESULT_DELIMITER}", escape_body(&t)), p.ln()))
        .collect()
    }

    fn output_candidates(
        &self,
        input: &str,
        label: &str,
        tool_input: &str,
        tool_output: &str,
        flavor: Flavor,
    ) -> Vec<(String, f64)> {
        let delex = Delexicalized::new(input);
        let grams = char_ngrams(&delex.pattern, self.config.ngram_order);
        let mut outs = Vec::new();
        let mut logits = Vec::new();
        for (tmpl, profile) in &self.model.output_templates {
            if let Some(y) = tmpl.instantiate(tool_output) {
                outs.push(y);
                logits.push(profile.mean_log_prob(&grams, self.model.output_vocab));
            }
        }
        let ranked: Vec<_> = outs.into_iter().zip(softmax(&logits)).collect();
        let pattern = self.model.output_patterns.get(&delex.pattern).map_or_else(Vec::new, |counts| {
            let mut found: BTreeMap<String, u32> = BTreeMap::new();
            for (tmpl, &c) in counts {
                if let Some(y) = tmpl.instantiate(tool_output) {
                    *found.entry(y).or_default() += c;
                }
            }
            if found.is_empty() { Vec::new() } else { frequencies(&found) }
        });
        let key = (
            input.to_string(),
            label.to_string(),
            tool_input.to_string(),
            tool_output.to_string(),
        );
        let memory = self.model.outputs.get(&key).map_or_else(Vec::new, frequencies);
        combine(
            vec![memory, pattern, ranked],
            self.config.memory_weight,
            flavor == Flavor::Deterministic,
        )
        .into_iter()
        .map(|(y, p)| (format!("{OUTPUT_DELIMITER} {}", escape_body(&y)), p.ln()))
        .collect()
    }

    fn candidates(&self, prefix: &str, flavor: Flavor) -> Result<Candidates, GeneratorError> {
        let cache_key = (prefix.to_string(), flavor);
        if let Some(hit) = self.cache.lock().unwrap_or_else(|e| e.into_inner()).get(&cache_key) {
            return Ok(hit.clone());
        }
        let body = prefix.strip_suffix(' ').unwrap_or(prefix);
        let seq = parse_sequence(body, usize::MAX)
            .map_err(|e| GeneratorError::InvalidRequest(format!("prefix: {e}")))?;
        if seq.is_complete() {
            return Err(GeneratorError::InvalidRequest(
                "prefix already holds an output".into(),
            ));
        }
        let input = &seq.task_input.body;
        let cands = match seq.hops.last() {
            None => self.call_candidates(input, flavor),
            Some(hop) => self.output_candidates(
                input,
                &hop.call.label,
                &hop.call.body,
                &hop.result.body,
                flavor,
            ),
        };
        let cands = Arc::new(cands);
        let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(cache_key, cands.clone());
        Ok(cands)
    }
}

impl Generator for TrainableGenerator {
    fn kind(&self) -> GeneratorKind {
        GeneratorKind::Trainable
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_update: true,
            supports_beam: true,
            concurrent_requests: 256,
        }
    }

    fn generate(&self, request: &GenerateRequest) -> Result<GenerateResponse, GeneratorError> {
        let sampling = request.sampling;
        sampling.validate()?;
        let flavor = match sampling.mode {
            SamplingMode::Random => Flavor::Random,
            SamplingMode::Greedy | SamplingMode::Beam => Flavor::Deterministic,
        };
        let cands = self.candidates(&request.prefix, flavor)?;
        let scores: Vec<f64> = cands.iter().map(|c| c.1).collect();
        let pick = match sampling.mode {
            SamplingMode::Greedy => argmax(&scores),
            SamplingMode::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
                sample_index(&scores, sampling.temperature, sampling.top_k, &mut rng)
            }
            SamplingMode::Beam => beam_search(&cands, sampling.beam_width),
        };
        match pick {
            Some(i) => Ok(finish_continuation(
                &cands[i].0,
                &request.stop_markers,
                request.max_chars,
            )),
            None => Ok(GenerateResponse {
                text: String::new(),
                stop_reason: if request.max_chars == 0 {
                    StopReason::MaxChars
                } else {
                    StopReason::EndOfText
                },
            }),
        }
    }

    fn update(&mut self, dataset: &[ToolUseRecord]) -> Result<UpdateReport, GeneratorError> {
        if dataset.is_empty() {
            return Err(GeneratorError::EmptyDataset);
        }
        self.model = Model::fit(dataset, self.config.ngram_order);
        self.cache.lock().unwrap_or_else(|e| e.into_inner()).clear();
        self.version += 1;
        Ok(UpdateReport {
            examples_seen: dataset.len(),
            version: self.version,
        })
    }
}
