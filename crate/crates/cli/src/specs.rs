//! `--generator` and `--tools` spec strings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use talm::datasets::load_tool_use_set;
use talm::generator::{ExternalGenerator, Generator, ScriptedGenerator, TrainableGenerator};
use talm::tools::{Bm25Index, FormulaTool, RetrievalTool, ToolRegistry, WebSearchConfig, WebSearchTool};

use crate::failure::{Classify, CmdResult, Failure};

/// `scripted:PATH`, `trainable`, `trainable:data=PATH`, `external:cmd=COMMAND`
/// or `external:tcp=HOST:PORT`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratorSpec {
    Scripted(PathBuf),
    Trainable { data: Option<PathBuf> },
    ExternalCommand(String),
    ExternalTcp(String),
}

impl FromStr for GeneratorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let value = |key: &str| {
            rest.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .filter(|v| !v.is_empty())
                .map(str::to_string)
        };
        match kind {
            "scripted" if !rest.is_empty() => Ok(GeneratorSpec::Scripted(PathBuf::from(rest))),
            "trainable" if rest.is_empty() => Ok(GeneratorSpec::Trainable { data: None }),
            "trainable" => value("data")
                .map(|p| GeneratorSpec::Trainable { data: Some(PathBuf::from(p)) })
                .ok_or_else(|| format!("expected trainable:data=PATH, got {s:?}")),
            "external" => value("cmd")
                .map(GeneratorSpec::ExternalCommand)
                .or_else(|| value("tcp").map(GeneratorSpec::ExternalTcp))
                .ok_or_else(|| format!("expected external:cmd=COMMAND or external:tcp=HOST:PORT, got {s:?}")),
            _ => Err(format!(
                "unknown generator spec {s:?}; expected scripted:PATH, trainable[:data=PATH], external:cmd=... or external:tcp=..."
            )),
        }
    }
}

impl GeneratorSpec {
    /// Built-in generators are reproducible from a manifest.
    pub fn is_builtin(&self) -> bool {
        matches!(self, GeneratorSpec::Scripted(_) | GeneratorSpec::Trainable { .. })
    }

    pub fn input_files(&self) -> Vec<PathBuf> {
        match self {
            GeneratorSpec::Scripted(p) => vec![p.clone()],
            GeneratorSpec::Trainable { data: Some(p) } => vec![p.clone()],
            _ => Vec::new(),
        }
    }

    pub fn build(&self) -> CmdResult<Box<dyn Generator>> {
        Ok(match self {
            GeneratorSpec::Scripted(path) => Box::new(
                ScriptedGenerator::from_jsonl(path).usage(format!("loading script {}", path.display()))?,
            ),
            GeneratorSpec::Trainable { data } => {
                let mut gen = TrainableGenerator::default();
                if let Some(path) = data {
                    let records =
                        load_tool_use_set(path).usage(format!("loading tool-use set {}", path.display()))?;
                    gen.update(&records).usage(format!("fitting on {}", path.display()))?;
                }
                Box::new(gen)
            }
            GeneratorSpec::ExternalCommand(cmd) => Box::new(
                ExternalGenerator::spawn(cmd).domain(format!("starting external generator {cmd:?}"))?,
            ),
            GeneratorSpec::ExternalTcp(addr) => Box::new(
                ExternalGenerator::connect(addr.as_str())
                    .domain(format!("connecting to external generator at {addr}"))?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolSpec {
    pub name: String,
    pub params: BTreeMap<String, String>,
}

/// Parses a comma list such as `formula,search:index=idx.json,k=3`.
///
/// A piece whose key has no `:` continues the previous tool's parameters, so
/// parameter values (URLs included) may contain `:` but not `,`.
pub fn parse_tools(s: &str) -> Result<Vec<ToolSpec>, String> {
    let mut specs: Vec<ToolSpec> = Vec::new();
    if s.trim().is_empty() || s.trim() == "none" {
        return Ok(specs);
    }
    for piece in s.split(',').map(str::trim) {
        if piece.is_empty() {
            return Err(format!("empty entry in tool spec {s:?}"));
        }
        let key_part = piece.split('=').next().unwrap_or(piece);
        let continuation = piece.contains('=') && !key_part.contains(':');
        if continuation {
            let (k, v) = piece.split_once('=').unwrap_or((piece, ""));
            let last = specs
                .last_mut()
                .ok_or_else(|| format!("parameter {piece:?} precedes any tool name"))?;
            last.params.insert(k.to_string(), v.to_string());
            continue;
        }
        let (name, first) = match piece.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (piece, None),
        };
        let mut params = BTreeMap::new();
        if let Some(p) = first {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| format!("expected key=value after {name}:, got {p:?}"))?;
            params.insert(k.to_string(), v.to_string());
        }
        specs.push(ToolSpec {
            name: name.to_string(),
            params,
        });
    }
    Ok(specs)
}

impl ToolSpec {
    fn param<T: FromStr>(&self, key: &str) -> CmdResult<Option<T>> {
        self.params
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Failure::usage(format!("{}: bad value {v:?} for {key}", self.name)))
            })
            .transpose()
    }

    fn required(&self, key: &str) -> CmdResult<&str> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Failure::usage(format!("{}: missing {key}=...", self.name)))
    }

    fn check_keys(&self, allowed: &[&str]) -> CmdResult<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Failure::usage(format!(
                "{}: unknown parameter {k:?} (allowed: {})",
                self.name,
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }

    pub fn input_files(&self) -> Vec<PathBuf> {
        match self.name.as_str() {
            "search" => self.params.get("index").map(PathBuf::from).into_iter().collect(),
            _ => Vec::new(),
        }
    }
}

pub fn build_registry(specs: &[ToolSpec]) -> CmdResult<ToolRegistry> {
    let mut registry = ToolRegistry::new();
    for spec in specs {
        let tool: Arc<dyn talm::tools::Tool> = match spec.name.as_str() {
            "formula" => {
                spec.check_keys(&[])?;
                Arc::new(FormulaTool::new())
            }
            "search" => {
                spec.check_keys(&["index", "k", "label", "max_chars"])?;
                let path = Path::new(spec.required("index")?);
                let index = Bm25Index::load(path).usage(format!("loading index {}", path.display()))?;
                let mut tool = RetrievalTool::new(Arc::new(index));
                if let Some(k) = spec.param::<usize>("k")? {
                    tool = tool.with_k(k);
                }
                if let Some(label) = spec.params.get("label") {
                    tool = tool.with_label(label);
                }
                if let Some(max) = spec.param::<usize>("max_chars")? {
                    tool = tool.with_max_result_chars(max);
                }
                Arc::new(tool)
            }
            "websearch" => {
                spec.check_keys(&["endpoint", "label", "timeout_ms", "concurrent", "pointer"])?;
                let mut config = WebSearchConfig::new(spec.required("endpoint")?);
                if let Some(label) = spec.params.get("label") {
                    config.label = label.clone();
                }
                if let Some(ms) = spec.param::<u64>("timeout_ms")? {
                    config.timeout = Duration::from_millis(ms);
                }
                if let Some(n) = spec.param::<usize>("concurrent")? {
                    config.max_concurrent = n;
                }
                if let Some(p) = spec.params.get("pointer") {
                    config.snippet_pointer = p.clone();
                }
                Arc::new(WebSearchTool::new(config).usage("configuring websearch")?)
            }
            other => {
                return Err(Failure::usage(format!(
                    "unknown tool {other:?}; expected formula, search or websearch"
                )))
            }
        };
        registry.register(tool).usage("registering tool")?;
    }
    Ok(registry)
}
