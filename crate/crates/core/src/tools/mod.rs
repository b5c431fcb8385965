//! Tools and the registry the runtime dispatches tool calls through.

pub mod bm25;
pub mod formula;
mod retrieval;
pub mod validity;
pub mod websearch;

pub use bm25::{Bm25Index, Bm25Params, IndexError, SearchHit};
pub use formula::{eval_formula, parse_formula, render_value, solve, Formula, FormulaError, MathError, Operator};
pub use retrieval::RetrievalTool;
pub use validity::{check_validity, ValidityReport, ValidityTolerance};
pub use websearch::{WebSearchConfig, WebSearchTool};

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{is_valid_label, OUTPUT_LABEL, RESULT_LABEL};

pub const DEFAULT_MAX_RESULT_CHARS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
    #[error("{label}: {message}")]
    Failure { label: String, message: String },
    #[error("{label}: timed out after {after:?}")]
    Timeout { label: String, after: Duration },
    #[error("invalid tool descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("tool '{0}' is already registered")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub label: String,
    pub deterministic: bool,
    pub concurrency_safe: bool,
    pub max_result_chars: usize,
}

impl ToolDescriptor {
    pub fn new(label: &str) -> Self {
        ToolDescriptor {
            label: label.to_string(),
            deterministic: true,
            concurrency_safe: true,
            max_result_chars: DEFAULT_MAX_RESULT_CHARS,
        }
    }

    pub fn validate(&self) -> Result<(), ToolError> {
        if !is_valid_label(&self.label) || self.label == RESULT_LABEL || self.label == OUTPUT_LABEL {
            return Err(ToolError::InvalidDescriptor(format!(
                "label {:?} cannot name a tool",
                self.label
            )));
        }
        if self.max_result_chars == 0 {
            return Err(ToolError::InvalidDescriptor(
                "max_result_chars must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A text-to-text tool.
pub trait Tool: Send + Sync {
    fn descriptor(&self) -> &ToolDescriptor;

    fn call(&self, input: &str) -> Result<String, ToolError>;
}

struct Entry {
    tool: Arc<dyn Tool>,
    // Held while calling tools that are not safe to run concurrently.
    exclusive: Option<Mutex<()>>,
}

/// Label → tool map. Counts every invocation that reaches a tool.
#[derive(Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Entry>,
    calls: AtomicU64,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.tools.keys().collect::<Vec<_>>())
            .field("calls", &self.call_count())
            .finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry with no tools; every call fails with `UnknownTool`.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) -> Result<(), ToolError> {
        let desc = tool.descriptor().clone();
        desc.validate()?;
        if self.tools.contains_key(&desc.label) {
            return Err(ToolError::Duplicate(desc.label));
        }
        let exclusive = (!desc.concurrency_safe).then(|| Mutex::new(()));
        self.tools.insert(desc.label, Entry { tool, exclusive });
        Ok(())
    }

    pub fn with(mut self, tool: Arc<dyn Tool>) -> Result<Self, ToolError> {
        self.register(tool)?;
        Ok(self)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.tools.contains_key(label)
    }

    pub fn descriptor(&self, label: &str) -> Option<&ToolDescriptor> {
        self.tools.get(label).map(|e| e.tool.descriptor())
    }

    pub fn descriptors(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|e| e.tool.descriptor().clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Number of tool invocations dispatched so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Calls a tool and truncates its output to the tool's `max_result_chars`.
    pub fn invoke(&self, label: &str, input: &str) -> Result<String, ToolError> {
        let entry = self
            .tools
            .get(label)
            .ok_or_else(|| ToolError::UnknownTool(label.to_string()))?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let output = match &entry.exclusive {
            Some(lock) => {
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                entry.tool.call(input)?
            }
            None => entry.tool.call(input)?,
        };
        Ok(truncate_chars(output, entry.tool.descriptor().max_result_chars))
    }
}

pub(crate) fn truncate_chars(mut s: String, max: usize) -> String {
    if let Some((cut, _)) = s.char_indices().nth(max) {
        s.truncate(cut);
    }
    s
}

/// The formula solver as a tool: input is a formula, output the rendered value.
pub struct FormulaTool {
    descriptor: ToolDescriptor,
}

impl FormulaTool {
    pub const LABEL: &'static str = "formula";

    pub fn new() -> Self {
        FormulaTool {
            descriptor: ToolDescriptor::new(Self::LABEL),
        }
    }
}

impl Default for FormulaTool {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for FormulaTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        solve(input).map_err(|e| ToolError::Failure {
            label: Self::LABEL.to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(ToolDescriptor);

    impl Tool for Echo {
        fn descriptor(&self) -> &ToolDescriptor {
            &self.0
        }
        fn call(&self, input: &str) -> Result<String, ToolError> {
            Ok(input.repeat(3))
        }
    }

    fn echo(label: &str, max: usize, safe: bool) -> Arc<dyn Tool> {
        Arc::new(Echo(ToolDescriptor {
            label: label.into(),
            deterministic: true,
            concurrency_safe: safe,
            max_result_chars: max,
        }))
    }

    #[test]
    fn invokes_formula_tool() {
        let reg = ToolRegistry::new().with(Arc::new(FormulaTool::new())).unwrap();
        assert_eq!(
            reg.invoke("formula", "Divide(Add(85, Add(88, 95)), 3)").unwrap(),
            "89.3333333333"
        );
        assert_eq!(reg.invoke("formula", "Add(0, 0)").unwrap(), "0");
        assert!(matches!(
            reg.invoke("formula", "Divide(1, 0)"),
            Err(ToolError::Failure { .. })
        ));
        assert_eq!(reg.call_count(), 3);
    }

    #[test]
    fn unknown_tool_is_not_counted() {
        let reg = ToolRegistry::empty();
        assert_eq!(
            reg.invoke("frobnicate", "x"),
            Err(ToolError::UnknownTool("frobnicate".into()))
        );
        assert_eq!(reg.call_count(), 0);
    }

    #[test]
    fn truncates_to_descriptor_limit() {
        let reg = ToolRegistry::new().with(echo("echo", 4, false)).unwrap();
        assert_eq!(reg.invoke("echo", "ab").unwrap(), "abab");
        assert_eq!(reg.invoke("echo", "é").unwrap(), "ééé");
    }

    #[test]
    fn rejects_bad_descriptors() {
        let mut reg = ToolRegistry::new();
        assert!(reg.register(echo("result", 4, true)).is_err());
        assert!(reg.register(echo("Echo", 4, true)).is_err());
        assert!(reg.register(echo("echo", 0, true)).is_err());
        reg.register(echo("echo", 4, true)).unwrap();
        assert_eq!(
            reg.register(echo("echo", 4, true)),
            Err(ToolError::Duplicate("echo".into()))
        );
    }
}
