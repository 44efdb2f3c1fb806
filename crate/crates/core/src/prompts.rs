//! Operator instruction prompts and the layouts of their user messages.

use crate::langex::LangexError;
use crate::table::{RowId, Table};

pub const FILTER_SYSTEM: &str = "The user will provide a claim and some relevant context. \
Your job is to determine whether the claim is true for the given context. \
You must answer with a single word, \"True\" or \"False\".";

pub const COMPARE_SYSTEM: &str = "Your job is to select and return the most relevant document to the user's question. \
Carefully read the user's question and the two documents provided below. \
Respond only with the label of the document such as \"Document NUMBER\". \
NUMBER must be either 1 or 2, depending on which document is most relevant. \
You must pick a number and cannot say things like \"None\" or \"Neither\".";

pub const MAP_SYSTEM: &str = "The user will provide an instruction and some relevant context. \
Your job is to answer the instruction given the context. Respond with the answer only.";

pub const EXTRACT_SYSTEM: &str = "The user will provide an instruction and some source text. \
Answer the instruction with direct quotes copied exactly from the source text. \
Write one quote per line and nothing else.";

pub const AGG_LEAF_SYSTEM: &str = "The user will provide an instruction and a set of documents. \
Your job is to answer the instruction using all of the documents. Respond with the answer only.";

pub const AGG_MERGE_SYSTEM: &str = "The user will provide an instruction and the following are partial answers, \
each produced from a different subset of the documents. \
Your job is to combine the partial answers into a single answer to the instruction. Respond with the answer only.";

pub const DOC1_MARKER: &str = "Document 1: ";
pub const DOC2_MARKER: &str = "\nDocument 2: ";

/// Context sections are joined by newlines.
pub fn filter_user(context: &[&str], claim: &str) -> String {
    const HEAD: &str = "Context:\n";
    const MID: &str = "\n\nClaim: ";
    let len = HEAD.len() + context.iter().map(|c| c.len() + 1).sum::<usize>() + MID.len() + claim.len();
    let mut s = String::with_capacity(len);
    s.push_str(HEAD);
    for (i, c) in context.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(c);
    }
    s.push_str(MID);
    s.push_str(claim);
    s
}

pub fn compare_user(question: &str, doc1: &str, doc2: &str) -> String {
    format!("Question: {question}\n{DOC1_MARKER}{doc1}{DOC2_MARKER}{doc2}")
}

pub fn map_user(context: &str, instruction: &str) -> String {
    format!("Context:\n{context}\n\nInstruction: {instruction}")
}

/// Splits a comparison prompt into its two document bodies.
pub fn split_documents(user_prompt: &str) -> Option<(&str, &str)> {
    let start = user_prompt.find(DOC1_MARKER)? + DOC1_MARKER.len();
    let rest = &user_prompt[start..];
    let mid = rest.find(DOC2_MARKER)?;
    Some((&rest[..mid], &rest[mid + DOC2_MARKER.len()..]))
}

/// `column: value` lines for the given columns of one row.
pub fn render_document(table: &Table, row: RowId, columns: &[String]) -> Result<String, LangexError> {
    let mut lines = Vec::with_capacity(columns.len());
    for name in columns {
        let value = table
            .cell(name, row)
            .map_err(|_| LangexError::UnknownColumn(name.clone()))?;
        let text = value.render().ok_or_else(|| LangexError::NullCell {
            column: name.clone(),
            row,
        })?;
        lines.push(format!("{name}: {text}"));
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compare_layout_round_trips() {
        let p = compare_user("best?", "abstract: a", "abstract: b");
        assert_eq!(split_documents(&p), Some(("abstract: a", "abstract: b")));
    }
}
