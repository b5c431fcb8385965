//! Task sets, tool-use sets and corpora as JSONL, plus the synthetic
//! arithmetic benchmark.
//!
//! Task set line: `{"id", "input", "target", "context"?, "formula"?}`.
//! Tool-use line: `{"id", "input", "tool_label", "tool_input", "tool_output",
//! "output", "round", "provenance"}`. Corpus line: `{"doc_id", "text"}`.
//! Writers emit fields in exactly this order, one compact object per line.

mod synthetic;

pub use synthetic::{generate_synthetic, SyntheticOp, SyntheticSet, SyntheticSpec};

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::protocol::{render_sequence, ToolAugmentedSequence, DEFAULT_INPUT_LABEL};
use crate::tools::formula::parse_formula;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field '{field}': {message}")]
    Schema {
        line: usize,
        field: String,
        message: String,
    },
    #[error("records without context: {}", .0.join(", "))]
    MissingContext(Vec<String>),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn schema(line: usize, field: &str, message: impl Into<String>) -> Self {
        DatasetError::Schema {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Qa,
    Math,
    Synthetic,
}

/// One `{x, y}` pair of a task set, with optional oracle context or formula.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub id: String,
    pub input: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula: Option<String>,
}

impl TaskExample {
    pub fn new(id: &str, input: &str, target: &str) -> Self {
        TaskExample {
            id: id.to_string(),
            input: input.to_string(),
            target: target.to_string(),
            context: None,
            formula: None,
        }
    }
}

/// A record whose gold formula does not parse under the solver grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlaggedRecord {
    pub id: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSetFile {
    pub kind: TaskKind,
    pub records: Vec<TaskExample>,
    pub flagged: Vec<FlaggedRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Bootstrap,
    SelfPlay,
}

/// One `{x, t, r, y}` tuple of the tool-use set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolUseRecord {
    pub id: String,
    pub input: String,
    pub tool_label: String,
    pub tool_input: String,
    pub tool_output: String,
    pub output: String,
    pub round: u32,
    pub provenance: Provenance,
}

impl ToolUseRecord {
    pub fn to_sequence(&self) -> Result<ToolAugmentedSequence, crate::protocol::ProtocolError> {
        ToolAugmentedSequence::single_hop(
            DEFAULT_INPUT_LABEL,
            &self.input,
            &self.tool_label,
            &self.tool_input,
            &self.tool_output,
            &self.output,
        )
    }

    /// Canonical sequence text of the record.
    pub fn render(&self) -> Result<String, crate::protocol::ProtocolError> {
        render_sequence(&self.to_sequence()?)
    }

    /// Fields that identify a record for deduplication.
    pub fn dedup_key(&self) -> (&str, &str, &str, &str, &str) {
        (
            &self.input,
            &self.tool_label,
            &self.tool_input,
            &self.tool_output,
            &self.output,
        )
    }
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DatasetError::io(path, e))
}

/// Yields `(1-based line number, object)` for non-blank lines.
fn json_lines<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, Map<String, Value>), DatasetError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                return Some(Err(DatasetError::Io {
                    path: PathBuf::from(format!("<line {line_no}>")),
                    source: e,
                }))
            }
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(map)) => Ok((line_no, map)),
            Ok(_) => Err(DatasetError::schema(line_no, "<line>", "expected a JSON object")),
            Err(e) => Err(DatasetError::schema(line_no, "<line>", e.to_string())),
        })
    })
}

fn required_str(map: &Map<String, Value>, line: usize, field: &str) -> Result<String, DatasetError> {
    match map.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DatasetError::schema(line, field, "expected a string")),
        None => Err(DatasetError::schema(line, field, "missing")),
    }
}

fn optional_str(
    map: &Map<String, Value>,
    line: usize,
    field: &str,
) -> Result<Option<String>, DatasetError> {
    match map.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(DatasetError::schema(line, field, "expected a string")),
    }
}

fn non_empty(value: String, line: usize, field: &str) -> Result<String, DatasetError> {
    if value.trim().is_empty() {
        Err(DatasetError::schema(line, field, "must not be empty"))
    } else {
        Ok(value)
    }
}

pub fn parse_task_set<R: BufRead>(reader: R, kind: TaskKind) -> Result<TaskSetFile, DatasetError> {
    let mut records = Vec::new();
    let mut flagged = Vec::new();
    let mut ids = HashSet::new();
    for item in json_lines(reader) {
        let (line, map) = item?;
        let id = non_empty(required_str(&map, line, "id")?, line, "id")?;
        if !ids.insert(id.clone()) {
            return Err(DatasetError::schema(line, "id", format!("duplicate id {id:?}")));
        }
        let example = TaskExample {
            input: non_empty(required_str(&map, line, "input")?, line, "input")?,
            target: non_empty(required_str(&map, line, "target")?, line, "target")?,
            context: optional_str(&map, line, "context")?,
            formula: optional_str(&map, line, "formula")?,
            id,
        };
        if matches!(kind, TaskKind::Math | TaskKind::Synthetic) {
            if let Some(f) = &example.formula {
                if let Err(e) = parse_formula(f) {
                    flagged.push(FlaggedRecord {
                        id: example.id.clone(),
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
        records.push(example);
    }
    Ok(TaskSetFile {
        kind,
        records,
        flagged,
    })
}

pub fn load_task_set(path: &Path, kind: TaskKind) -> Result<TaskSetFile, DatasetError> {
    parse_task_set(open(path)?, kind)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_jsonl_to(&mut out, items).map_err(|e| DatasetError::io(path, e))?;
    out.flush().map_err(|e| DatasetError::io(path, e))
}

pub fn write_jsonl_to<W: Write, T: Serialize>(out: &mut W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_task_set(path: &Path, records: &[TaskExample]) -> Result<(), DatasetError> {
    write_jsonl(path, records)
}

pub fn parse_tool_use_set<R: BufRead>(reader: R) -> Result<Vec<ToolUseRecord>, DatasetError> {
    let mut out = Vec::new();
    for item in json_lines(reader) {
        let (line, map) = item?;
        let record: ToolUseRecord = serde_json::from_value(Value::Object(map.clone())).map_err(|e| {
            let field = ["id", "input", "tool_label", "tool_input", "tool_output", "output", "round", "provenance"]
                .into_iter()
                .find(|f| !map.contains_key(*f) || e.to_string().contains(f))
                .unwrap_or("<line>");
            DatasetError::schema(line, field, e.to_string())
        })?;
        record
            .render()
            .map_err(|e| DatasetError::schema(line, "tool_label", e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_tool_use_set(path: &Path) -> Result<Vec<ToolUseRecord>, DatasetError> {
    parse_tool_use_set(open(path)?)
}

pub fn save_tool_use_set(path: &Path, records: &[ToolUseRecord]) -> Result<(), DatasetError> {
    write_jsonl(path, records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub text: String,
}

pub fn load_corpus(path: &Path) -> Result<Vec<(String, String)>, DatasetError> {
    let mut docs = Vec::new();
    for item in json_lines(open(path)?) {
        let (line, map) = item?;
        docs.push((
            required_str(&map, line, "doc_id")?,
            required_str(&map, line, "text")?,
        ));
    }
    Ok(docs)
}

pub fn save_corpus(path: &Path, docs: &[(String, String)]) -> Result<(), DatasetError> {
    let docs: Vec<CorpusDocument> = docs
        .iter()
        .map(|(doc_id, text)| CorpusDocument {
            doc_id: doc_id.clone(),
            text: text.clone(),
        })
        .collect();
    write_jsonl(path, &docs)
}

/// First 16 hex digits of the SHA-256 of the text.
pub fn content_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// One document per distinct oracle context, in first-seen order.
pub fn build_corpus_from_contexts(tasks: &TaskSetFile) -> Result<Vec<(String, String)>, DatasetError> {
    let missing: Vec<String> = tasks
        .records
        .iter()
        .filter(|r| r.context.as_deref().is_none_or(|c| c.trim().is_empty()))
        .map(|r| r.id.clone())
        .collect();
    if !missing.is_empty() || tasks.records.is_empty() {
        return Err(DatasetError::MissingContext(missing));
    }
    let mut seen = HashSet::new();
    Ok(tasks
        .records
        .iter()
        .filter_map(|r| r.context.as_ref())
        .filter(|c| seen.insert(c.as_str()))
        .map(|c| (content_id(c), c.clone()))
        .collect())
}
