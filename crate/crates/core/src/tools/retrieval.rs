use std::sync::Arc;

use super::bm25::{Bm25Index, IndexError};
use super::{Tool, ToolDescriptor, ToolError};

/// BM25 retrieval as a tool: the query is the tool input, the result the
/// text of the top-`k` documents joined by newlines.
pub struct RetrievalTool {
    descriptor: ToolDescriptor,
    index: Arc<Bm25Index>,
    k: usize,
}

impl RetrievalTool {
    pub const LABEL: &'static str = "search";

    pub fn new(index: Arc<Bm25Index>) -> Self {
        RetrievalTool {
            descriptor: ToolDescriptor::new(Self::LABEL),
            index,
            k: 1,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k.max(1);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.descriptor.label = label.to_string();
        self
    }

    pub fn with_max_result_chars(mut self, max: usize) -> Self {
        self.descriptor.max_result_chars = max;
        self
    }
}

impl Tool for RetrievalTool {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, input: &str) -> Result<String, ToolError> {
        let failure = |e: IndexError| ToolError::Failure {
            label: self.descriptor.label.clone(),
            message: e.to_string(),
        };
        let hits = self.index.search(input, self.k).map_err(failure)?;
        let texts: Vec<&str> = hits
            .iter()
            .filter_map(|h| self.index.document_text(&h.doc_id))
            .collect();
        Ok(texts.join("\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::{Bm25Params, ToolRegistry};

    const BREWING: &str = "The boiling process is where chemical reactions take place, including sterilization of the wort to remove unwanted bacteria, releasing of hop flavours, bitterness and aroma compounds through isomerization.";

    fn index() -> Arc<Bm25Index> {
        Arc::new(
            Bm25Index::build(
                vec![
                    ("brew".into(), BREWING.into()),
                    ("cat".into(), "Cats are small domesticated carnivorous mammals.".into()),
                    ("nyc".into(), "New York City is the most populous city in the United States.".into()),
                ],
                Bm25Params::default(),
            )
            .unwrap(),
        )
    }

    #[test]
    fn retrieves_brewing_context() {
        let reg = ToolRegistry::new().with(Arc::new(RetrievalTool::new(index()))).unwrap();
        let out = reg.invoke("search", "brewing process").unwrap();
        assert!(out.starts_with("The boiling process is where chemical reactions take place"));
    }

    #[test]
    fn truncates_and_joins() {
        let tool = RetrievalTool::new(index()).with_k(2).with_max_result_chars(20);
        let reg = ToolRegistry::new().with(Arc::new(tool)).unwrap();
        assert_eq!(reg.invoke("search", "boiling process").unwrap().chars().count(), 20);
        let tool = RetrievalTool::new(index()).with_k(3);
        let out = tool.call("the city process").unwrap();
        assert_eq!(out.lines().count(), 2);
    }

    #[test]
    fn empty_query_fails_and_no_hit_is_empty() {
        let tool = RetrievalTool::new(index());
        assert!(matches!(tool.call("?!"), Err(ToolError::Failure { .. })));
        assert_eq!(tool.call("quantum chromodynamics").unwrap(), "");
    }
}
