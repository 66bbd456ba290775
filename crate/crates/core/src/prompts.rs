//! Prompt templates for document generation and question answering.
//!
//! Each template is rendered on a single line; slot contents are substituted
//! verbatim and separated by single spaces. A rendered [`Prompt`] remembers its
//! slot values so in-process mock backends can answer without parsing text.

use serde::{Deserialize, Serialize};

pub const ZERO_SHOT_PREFIX: &str = "You are a content provider. Write a document that has relevant information to the need induced by a given query. Write it as a short paragraph. You must remain truthful, while also making sure your paragraph would be ranked higher than other paragraphs of the same topic. Write a short paragraph that satisfies the information need induced by the query:";

pub const MODIFICATION_PREFIX: &str = "Rewrite a given document, according to a given query. Do not add new knowledge not present in the document. It should be similar to the original, and should answer the query. Write it in a paragraph form. Rewrite according to the query:";

pub const SUMMARY_PREFIX: &str = "Your task is abstractive summarization of given documents, according to a given query. You may only use the information given to you. Do not add knowledge not present in the documents. Write it in a paragraph form. Summarize only the relevant information as induced by the following query:";

pub const QA_PREFIX: &str = "Instructions: Answer the question. Keep the answer concise. Question:";

pub const RAG_PREFIX: &str =
    "Instructions: Answer the question based on the given passages below. Keep the answer concise. Passages:";

pub const MAX_PASSAGES: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    text: String,
    slots: Vec<(String, String)>,
}

impl Prompt {
    /// A prompt with no known slots.
    pub fn raw(text: impl Into<String>) -> Self {
        Prompt {
            text: text.into(),
            slots: Vec::new(),
        }
    }

    /// Reassembles a prompt from its rendered text and slot values.
    pub fn from_parts(text: impl Into<String>, slots: Vec<(String, String)>) -> Self {
        Prompt {
            text: text.into(),
            slots,
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn slots(&self) -> &[(String, String)] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&str> {
        self.slots
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }

    /// Slot values whose name starts with `prefix`, in template order.
    pub fn slots_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.slots
            .iter()
            .filter(move |(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.as_str())
    }

    pub fn last_slot(&self) -> Option<&str> {
        self.slots.last().map(|(_, v)| v.as_str())
    }
}

/// Builds a prompt from literal segments and named slots.
#[derive(Default)]
pub(crate) struct PromptBuilder {
    text: String,
    slots: Vec<(String, String)>,
}

impl PromptBuilder {
    pub(crate) fn literal(mut self, s: &str) -> Self {
        self.push_spaced(s);
        self
    }

    pub(crate) fn slot(mut self, name: impl Into<String>, value: &str) -> Self {
        self.push_spaced(value);
        self.slots.push((name.into(), value.to_string()));
        self
    }

    fn push_spaced(&mut self, s: &str) {
        if !self.text.is_empty() {
            self.text.push(' ');
        }
        self.text.push_str(s);
    }

    pub(crate) fn build(self) -> Prompt {
        Prompt {
            text: self.text,
            slots: self.slots,
        }
    }
}

pub fn zero_shot(query: &str) -> Prompt {
    PromptBuilder::default()
        .literal(ZERO_SHOT_PREFIX)
        .slot("query", query)
        .build()
}

pub fn modification(query: &str, document: &str) -> Prompt {
    PromptBuilder::default()
        .literal(MODIFICATION_PREFIX)
        .slot("query", query)
        .slot("document 1", document)
        .build()
}

pub fn summary(query: &str, documents: &[&str]) -> Prompt {
    let mut b = PromptBuilder::default()
        .literal(SUMMARY_PREFIX)
        .slot("query", query);
    for (i, d) in documents.iter().enumerate() {
        b = b.slot(format!("document {}", i + 1), d);
    }
    b.build()
}

pub fn question(question: &str) -> Prompt {
    PromptBuilder::default()
        .literal(QA_PREFIX)
        .slot("question", question)
        .build()
}

/// Passages are numbered in the given order. Callers enforce `MAX_PASSAGES`.
pub fn question_with_passages(question: &str, passages: &[&str]) -> Prompt {
    let mut b = PromptBuilder::default().literal(RAG_PREFIX);
    for (i, p) in passages.iter().enumerate() {
        b = b
            .literal(&format!("Passage {}:", i + 1))
            .slot(format!("passage {}", i + 1), p);
    }
    b.literal("Question:").slot("question", question).build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_recorded_in_order() {
        let p = summary("q", &["d1", "d2"]);
        assert_eq!(p.slot("query"), Some("q"));
        assert_eq!(p.slots_with_prefix("document").collect::<Vec<_>>(), vec!["d1", "d2"]);
        assert_eq!(p.last_slot(), Some("d2"));
        assert!(p.text().ends_with("following query: q d1 d2"));
    }

    #[test]
    fn rag_layout() {
        let p = question_with_passages("who?", &["a", "b"]);
        assert!(p.text().ends_with("Passages: Passage 1: a Passage 2: b Question: who?"));
        assert_eq!(p.slot("passage 2"), Some("b"));
        assert_eq!(p.last_slot(), Some("who?"));
    }
}
