use std::borrow::Cow;
use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};

use super::LmError;

pub const TRUE_FALSE: [&str; 2] = ["True", "False"];
pub const DOCUMENTS: [&str; 2] = ["Document 1", "Document 2"];

// shared so the common label sets cost no allocation per request
static SHARED_LABELS: LazyLock<[Arc<[String]>; 2]> =
    LazyLock::new(|| [TRUE_FALSE, DOCUMENTS].map(|set| set.iter().map(|l| l.to_string()).collect()));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmRequest {
    pub system_instruction: Cow<'static, str>,
    pub user_prompt: String,
    pub label_set: Option<Arc<[String]>>,
    pub demonstrations: Vec<Demonstration>,
    pub max_output_chars: usize,
}

impl LmRequest {
    pub fn new(system_instruction: impl Into<Cow<'static, str>>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_instruction: system_instruction.into(),
            user_prompt: user_prompt.into(),
            label_set: None,
            demonstrations: Vec::new(),
            max_output_chars: 2048,
        }
    }

    /// Restricts the answer to `labels`. Panics on fewer than two distinct labels.
    pub fn with_labels<S: AsRef<str>>(mut self, labels: &[S]) -> Self {
        let distinct = labels
            .iter()
            .enumerate()
            .all(|(i, l)| labels[..i].iter().all(|m| m.as_ref() != l.as_ref()));
        assert!(labels.len() >= 2 && distinct, "label set needs >= 2 distinct labels");
        let same = |set: &[String]| set.len() == labels.len() && set.iter().zip(labels).all(|(a, b)| a == b.as_ref());
        let set = match SHARED_LABELS.iter().find(|s| same(s)) {
            Some(shared) => Arc::clone(shared),
            None => labels.iter().map(|l| l.as_ref().to_string()).collect(),
        };
        self.label_set = Some(set);
        self
    }

    pub fn with_demonstrations(mut self, demos: &[Demonstration]) -> Self {
        self.demonstrations = demos.to_vec();
        self
    }

    pub fn with_max_output_chars(mut self, n: usize) -> Self {
        self.max_output_chars = n.max(1);
        self
    }

    /// Total characters the model is shown.
    pub fn prompt_chars(&self) -> usize {
        self.system_instruction.chars().count()
            + self.user_prompt.chars().count()
            + self
                .demonstrations
                .iter()
                .map(|d| d.input.chars().count() + d.output.chars().count())
                .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmResult {
    pub text: String,
    /// Natural-log probability of each label as the answer, in label-set order.
    pub label_logprobs: Option<Vec<(String, f64)>>,
    pub backend_id: String,
}

impl LmResult {
    pub fn text(backend_id: &str, text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            label_logprobs: None,
            backend_id: backend_id.to_string(),
        }
    }
}

/// Picks the most probable label and its probability normalized over the
/// label set. Ties go to the earliest label.
pub fn label_confidence(result: &LmResult) -> Result<(String, f64), LmError> {
    let lps = result.label_logprobs.as_ref().ok_or(LmError::MissingLogprobs)?;
    let (idx, conf) = normalized_argmax(lps.iter().map(|(_, lp)| *lp)).ok_or(LmError::MissingLogprobs)?;
    let label = lps[idx].0.clone();
    Ok((label, conf))
}

fn normalized_argmax(lps: impl Iterator<Item = f64> + Clone) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut len = 0;
    for (i, lp) in lps.clone().enumerate() {
        len += 1;
        if best.map_or(true, |(_, b)| lp > b) {
            best = Some((i, lp));
        }
    }
    let (idx, max) = best?;
    if max == f64::NEG_INFINITY {
        return Some((0, 1.0 / len as f64));
    }
    let total: f64 = lps.map(|lp| (lp - max).exp()).sum();
    Some((idx, 1.0 / total))
}

/// Matches free-form output against a label set: exact (case-insensitive,
/// ignoring surrounding quotes and trailing punctuation), else the longest
/// label the answer starts with.
pub fn match_label(text: &str, labels: &[String]) -> Option<usize> {
    let cleaned = text
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*')
        .trim_end_matches(['.', '!', ','])
        .trim();
    if let Some(i) = labels.iter().position(|l| l.eq_ignore_ascii_case(cleaned)) {
        return Some(i);
    }
    let lower = cleaned.to_lowercase();
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.to_lowercase();
            lower.starts_with(&l)
                && lower[l.len()..]
                    .chars()
                    .next()
                    .map_or(true, |c| !c.is_alphanumeric())
        })
        .max_by_key(|(_, l)| l.len())
        .map(|(i, _)| i)
}

/// A label decision read from one result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// Index into the label set; `None` when the output matched no label.
    pub label: Option<usize>,
    /// Normalized label confidence; 0 when the backend reported no log-probs.
    pub confidence: f64,
}

pub fn decide(result: &LmResult, labels: &[String]) -> Decision {
    if let Some(lps) = &result.label_logprobs {
        let lp = |l: &String| lps.iter().find(|(k, _)| k == l).map_or(f64::NEG_INFINITY, |(_, p)| *p);
        if let Some((mut idx, confidence)) = normalized_argmax(labels.iter().map(lp)) {
            // among equally likely labels, the one actually emitted wins
            if let Some(emitted) = match_label(&result.text, labels) {
                if lp(&labels[emitted]) == lp(&labels[idx]) {
                    idx = emitted;
                }
            }
            return Decision {
                label: Some(idx),
                confidence,
            };
        }
    }
    Decision {
        label: match_label(&result.text, labels),
        confidence: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_lps(pairs: &[(&str, f64)]) -> LmResult {
        LmResult {
            text: String::new(),
            label_logprobs: Some(pairs.iter().map(|(l, p)| (l.to_string(), *p)).collect()),
            backend_id: "t".into(),
        }
    }

    #[test]
    fn degenerate_confidence() {
        let r = with_lps(&[("True", 0.0), ("False", f64::NEG_INFINITY)]);
        assert_eq!(label_confidence(&r).unwrap(), ("True".to_string(), 1.0));
    }

    #[test]
    fn normalized_confidence() {
        let r = with_lps(&[("True", 0.6f64.ln()), ("False", 0.4f64.ln())]);
        let (label, c) = label_confidence(&r).unwrap();
        assert_eq!(label, "True");
        assert!((c - 0.6).abs() < 1e-12);
    }

    #[test]
    fn tie_goes_to_first_label() {
        let r = with_lps(&[("True", -0.3), ("False", -0.3)]);
        let (label, c) = label_confidence(&r).unwrap();
        assert_eq!(label, "True");
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn unnormalized_logprobs_are_rescaled() {
        // 0.3 vs 0.1 of raw mass -> 0.75 after normalization
        let r = with_lps(&[("True", 0.1f64.ln()), ("False", 0.3f64.ln())]);
        let (label, c) = label_confidence(&r).unwrap();
        assert_eq!(label, "False");
        assert!((c - 0.75).abs() < 1e-12);
    }

    #[test]
    fn missing_logprobs() {
        assert!(matches!(
            label_confidence(&LmResult::text("x", "True")),
            Err(LmError::MissingLogprobs)
        ));
    }

    #[test]
    fn label_matching() {
        let tf: Vec<String> = TRUE_FALSE.iter().map(|s| s.to_string()).collect();
        assert_eq!(match_label(" true.", &tf), Some(0));
        assert_eq!(match_label("\"False\"", &tf), Some(1));
        assert_eq!(match_label("False, because ...", &tf), Some(1));
        assert_eq!(match_label("Trueish", &tf), None);
        assert_eq!(match_label("None", &tf), None);
        let docs: Vec<String> = DOCUMENTS.iter().map(|s| s.to_string()).collect();
        assert_eq!(match_label("Document 2", &docs), Some(1));
        assert_eq!(match_label("document 1.", &docs), Some(0));
        assert_eq!(match_label("Neither", &docs), None);
    }
}
