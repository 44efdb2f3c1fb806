//! Deterministic stand-in models.
//!
//! [`KeyedBackend`] answers comparisons and predicates from a hidden numeric
//! key attached to each document, optionally corrupted by Bradley-Terry noise:
//! the correct answer is chosen with probability `1 / (1 + exp(-gap / T))`.
//! Every random draw is a hash of the seed and the documents involved, so
//! answers do not depend on dispatch order or thread interleaving.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::{LmBackend, LmError, LmRequest, LmResult};
use crate::prompts::split_documents;
use crate::table::{Kind, Table};

/// Returns `answer` (or the first matching rule's answer) for every request.
/// When the request carries a label set and the answer is one of the labels,
/// log-probs put all mass on it.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    id: String,
    default: String,
    rules: Vec<(String, String)>,
}

impl ScriptedBackend {
    pub fn new(id: &str, default: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            default: default.into(),
            rules: Vec::new(),
        }
    }

    /// Answer `answer` when the user prompt contains `needle`.
    pub fn rule(mut self, needle: impl Into<String>, answer: impl Into<String>) -> Self {
        self.rules.push((needle.into(), answer.into()));
        self
    }
}

impl LmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn cpu_bound(&self) -> bool {
        true
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError> {
        let answer = self
            .rules
            .iter()
            .find(|(needle, _)| request.user_prompt.contains(needle.as_str()))
            .map_or(self.default.as_str(), |(_, a)| a.as_str());
        let label_logprobs = request.label_set.as_ref().and_then(|labels| {
            labels.iter().any(|l| l == answer).then(|| {
                labels
                    .iter()
                    .map(|l| (l.clone(), if l == answer { 0.0 } else { f64::NEG_INFINITY }))
                    .collect()
            })
        });
        Ok(LmResult {
            text: answer.to_string(),
            label_logprobs,
            backend_id: self.id.clone(),
        })
    }
}

/// Answers with the user prompt itself.
#[derive(Debug, Clone)]
pub struct EchoBackend {
    id: String,
}

impl EchoBackend {
    pub fn new(id: &str) -> Self {
        Self { id: id.to_string() }
    }
}

impl LmBackend for EchoBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn cpu_bound(&self) -> bool {
        true
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError> {
        Ok(LmResult::text(&self.id, request.user_prompt.clone()))
    }
}

type CompleteFn = dyn Fn(&LmRequest) -> Result<LmResult, LmError> + Send + Sync;

/// Backend defined by a closure.
pub struct FnBackend {
    id: String,
    f: Box<CompleteFn>,
}

impl FnBackend {
    pub fn new(id: &str, f: impl Fn(&LmRequest) -> Result<LmResult, LmError> + Send + Sync + 'static) -> Self {
        Self {
            id: id.to_string(),
            f: Box::new(f),
        }
    }
}

impl LmBackend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError> {
        (self.f)(request)
    }
}

/// Maps document texts to hidden keys. A prompt section resolves to the key
/// of the longest registered text it contains.
#[derive(Debug, Default)]
pub struct TextKeys {
    entries: Vec<(String, f64)>,
    memo: Mutex<HashMap<String, Option<(usize, f64)>>>,
}

impl TextKeys {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Self {
        let mut entries: Vec<_> = entries.into_iter().filter(|(t, _)| !t.is_empty()).collect();
        // longest first so the first hit is the most specific
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Self {
            entries,
            memo: Mutex::new(HashMap::new()),
        }
    }

    /// Registers every text cell of `table` (other than the key column)
    /// under that row's key.
    pub fn from_table(table: &Table, key_column: &str) -> Result<Self, LmError> {
        let keys = table
            .column(key_column)
            .map_err(|e| LmError::Config(e.to_string()))?;
        let mut entries = Vec::new();
        for col in table.columns().iter().filter(|c| c.kind == Kind::Text && c.name != key_column) {
            for (v, k) in col.values.iter().zip(&keys.values) {
                if let (Some(text), Some(key)) = (v.as_text(), key_value(k)) {
                    entries.push((text.to_string(), key));
                }
            }
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key and registry slot of the best match in `section`.
    pub fn resolve(&self, section: &str) -> Option<(usize, f64)> {
        if let Some(hit) = self.memo.lock().expect("memo poisoned").get(section) {
            return *hit;
        }
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(_, (text, _))| section.contains(text.as_str()))
            .map(|(i, (_, k))| (i, *k));
        self.memo
            .lock()
            .expect("memo poisoned")
            .insert(section.to_string(), hit);
        hit
    }

    fn text(&self, slot: usize) -> &str {
        &self.entries[slot].0
    }
}

fn key_value(v: &crate::table::Value) -> Option<f64> {
    match v {
        crate::table::Value::Text(s) => s.parse().ok(),
        other => other.as_f64(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyedOracleConfig {
    pub key_column: String,
    /// Noise scale; 0 answers every question correctly.
    pub temperature: f64,
    pub seed: u64,
}

type Margin1 = dyn Fn(f64) -> f64 + Send + Sync;
type Margin2 = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Hidden-key oracle for comparison and filter prompts.
///
/// Comparisons (label set `Document 1`/`Document 2`) prefer the document with
/// the larger key. Filters (`True`/`False`) answer `True` when the configured
/// margin function is positive; the margin magnitude plays the role of the
/// key gap in the noise model.
pub struct KeyedBackend {
    id: String,
    cfg: KeyedOracleConfig,
    keys: Arc<TextKeys>,
    filter: Option<Box<Margin1>>,
    join: Option<(Arc<TextKeys>, Box<Margin2>)>,
}

impl KeyedBackend {
    pub fn new(id: &str, cfg: KeyedOracleConfig, keys: Arc<TextKeys>) -> Self {
        Self {
            id: id.to_string(),
            cfg,
            keys,
            filter: None,
            join: None,
        }
    }

    /// Builds the key registry from `table` using `cfg.key_column`.
    pub fn for_table(id: &str, cfg: KeyedOracleConfig, table: &Table) -> Result<Self, LmError> {
        let keys = TextKeys::from_table(table, &cfg.key_column)?;
        Ok(Self::new(id, cfg, Arc::new(keys)))
    }

    pub fn with_filter(mut self, margin: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.filter = Some(Box::new(margin));
        self
    }

    /// Two-sided predicate: the left key comes from this backend's registry,
    /// the right key from `right`.
    pub fn with_join(mut self, right: Arc<TextKeys>, margin: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.join = Some((right, Box::new(margin)));
        self
    }

    pub fn config(&self) -> &KeyedOracleConfig {
        &self.cfg
    }

    /// Probability that the noisy oracle answers correctly at this margin.
    pub fn p_correct(&self, margin: f64) -> f64 {
        p_correct(self.cfg.temperature, margin)
    }

    fn compare(&self, request: &LmRequest, labels: &[String]) -> LmResult {
        let resolved = split_documents(&request.user_prompt)
            .and_then(|(d1, d2)| Some((self.keys.resolve(d1)?, self.keys.resolve(d2)?)));
        let Some(((s1, k1), (s2, k2))) = resolved else {
            return LmResult::text(&self.id, "None");
        };
        let (t1, t2) = (self.keys.text(s1), self.keys.text(s2));
        let gap = k1 - k2;
        let p = p_correct(self.cfg.temperature, gap);
        // identity of the favoured document does not depend on prompt order
        let favour_first = if gap != 0.0 { gap > 0.0 } else { t1 <= t2 };
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let u = unit_draw(self.cfg.seed, "compare", &[lo, hi]);
        let first = if u < p { favour_first } else { !favour_first };
        self.labelled(labels, if first { 0 } else { 1 }, p)
    }

    fn filter(&self, request: &LmRequest, labels: &[String]) -> LmResult {
        let prompt = &request.user_prompt;
        let (margin, ident) = match (&self.join, &self.filter) {
            (Some((right, f)), _) => match (self.keys.resolve(prompt), right.resolve(prompt)) {
                (Some((sl, kl)), Some((sr, kr))) => {
                    (f(kl, kr), vec![self.keys.text(sl).to_string(), right.text(sr).to_string()])
                }
                _ => return LmResult::text(&self.id, "Unknown"),
            },
            (None, Some(f)) => match self.keys.resolve(prompt) {
                Some((s, k)) => (f(k), vec![self.keys.text(s).to_string()]),
                None => return LmResult::text(&self.id, "Unknown"),
            },
            (None, None) => return LmResult::text(&self.id, "Unknown"),
        };
        let p = p_correct(self.cfg.temperature, margin);
        let parts: Vec<&str> = ident.iter().map(String::as_str).collect();
        let u = unit_draw(self.cfg.seed, "filter", &parts);
        let truth = margin > 0.0;
        let answer = if u < p { truth } else { !truth };
        self.labelled(labels, if answer { 0 } else { 1 }, p)
    }

    fn labelled(&self, labels: &[String], chosen: usize, p: f64) -> LmResult {
        let lps: Vec<(String, f64)> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), if i == chosen { p.ln() } else { (1.0 - p).ln() }))
            .collect();
        LmResult {
            text: labels[chosen].clone(),
            label_logprobs: Some(lps),
            backend_id: self.id.clone(),
        }
    }
}

impl LmBackend for KeyedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn cpu_bound(&self) -> bool {
        true
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError> {
        let Some(labels) = &request.label_set else {
            return Ok(LmResult::text(&self.id, "I can only answer labelled questions."));
        };
        if labels.len() == 2 && labels[0] == "Document 1" && labels[1] == "Document 2" {
            Ok(self.compare(request, labels))
        } else if labels.len() == 2 {
            Ok(self.filter(request, labels))
        } else {
            Err(LmError::Config(format!("keyed mock cannot answer label set {labels:?}")))
        }
    }
}

/// `1 / (1 + exp(-|margin| / T))`; exactly 1 at `T = 0` unless the margin is 0.
pub fn p_correct(temperature: f64, margin: f64) -> f64 {
    if margin == 0.0 {
        0.5
    } else if temperature <= 0.0 {
        1.0
    } else {
        1.0 / (1.0 + (-margin.abs() / temperature).exp())
    }
}

/// Uniform draw in [0, 1) from a stable hash of the seed and `parts`.
pub fn unit_draw(seed: u64, tag: &str, parts: &[&str]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update([0xff]);
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{label_confidence, DOCUMENTS, TRUE_FALSE};
    use crate::prompts::compare_user;

    fn keyed(t: f64, seed: u64) -> KeyedBackend {
        let keys = TextKeys::new([("alpha".to_string(), 93.2), ("beta".to_string(), 41.0)]);
        KeyedBackend::new(
            "k",
            KeyedOracleConfig {
                key_column: "key".into(),
                temperature: t,
                seed,
            },
            Arc::new(keys),
        )
    }

    fn ask(b: &KeyedBackend, d1: &str, d2: &str) -> LmResult {
        let req = LmRequest::new("", compare_user("q", d1, d2)).with_labels(&DOCUMENTS);
        b.complete(&req).unwrap()
    }

    #[test]
    fn noiseless_prefers_higher_key() {
        let b = keyed(0.0, 1);
        assert_eq!(ask(&b, "alpha", "beta").text, "Document 1");
        assert_eq!(ask(&b, "beta", "alpha").text, "Document 2");
        let (_, c) = label_confidence(&ask(&b, "alpha", "beta")).unwrap();
        assert_eq!(c, 1.0);
    }

    #[test]
    fn equal_keys_are_a_coin_flip() {
        assert_eq!(p_correct(5.0, 0.0), 0.5);
        let keys = TextKeys::new([("a".to_string(), 1.0), ("b".to_string(), 1.0)]);
        let b = KeyedBackend::new(
            "k",
            KeyedOracleConfig {
                key_column: "key".into(),
                temperature: 5.0,
                seed: 0,
            },
            Arc::new(keys),
        );
        let r = ask(&b, "a", "b");
        let (_, c) = label_confidence(&r).unwrap();
        assert!((c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noisy_answers_are_deterministic_and_swap_consistent() {
        for seed in 0..50 {
            let b = keyed(40.0, seed);
            let r1 = ask(&b, "alpha", "beta");
            let r2 = ask(&b, "beta", "alpha");
            assert_eq!(r1, ask(&keyed(40.0, seed), "alpha", "beta"));
            // same winner identity regardless of position
            assert_ne!(r1.text, r2.text);
        }
    }

    #[test]
    fn noise_rate_tracks_bradley_terry() {
        // empirical wrong-answer rate over many seeds ~ 1 - p
        let gap = 93.2 - 41.0;
        let t = 30.0;
        let p = p_correct(t, gap);
        let wrong = (0..4000).filter(|&s| ask(&keyed(t, s), "alpha", "beta").text == "Document 2").count();
        let rate = wrong as f64 / 4000.0;
        assert!((rate - (1.0 - p)).abs() < 0.03, "rate {rate} vs {}", 1.0 - p);
    }

    #[test]
    fn unknown_documents_are_malformed() {
        let b = keyed(0.0, 1);
        assert_eq!(ask(&b, "gamma", "beta").text, "None");
    }

    #[test]
    fn keyed_filter() {
        let keys = TextKeys::new([("ten".to_string(), 10.0), ("sixty".to_string(), 60.0)]);
        let b = KeyedBackend::new(
            "f",
            KeyedOracleConfig {
                key_column: "key".into(),
                temperature: 0.0,
                seed: 0,
            },
            Arc::new(keys),
        )
        .with_filter(|k| k - 50.0);
        let ask = |doc: &str| {
            b.complete(&LmRequest::new("", format!("Claim: {doc} is big")).with_labels(&TRUE_FALSE))
                .unwrap()
                .text
        };
        assert_eq!(ask("ten"), "False");
        assert_eq!(ask("sixty"), "True");
    }

    #[test]
    fn longest_registered_text_wins() {
        let keys = TextKeys::new([("doc 1".to_string(), 1.0), ("doc 10".to_string(), 10.0)]);
        assert_eq!(keys.resolve("see doc 10 here").map(|h| h.1), Some(10.0));
        assert_eq!(keys.resolve("see doc 1 here").map(|h| h.1), Some(1.0));
        assert_eq!(keys.resolve("nothing"), None);
    }

    #[test]
    fn scripted_labels_get_full_mass() {
        let b = ScriptedBackend::new("s", "True");
        let r = b
            .complete(&LmRequest::new("", "x").with_labels(&TRUE_FALSE))
            .unwrap();
        assert_eq!(label_confidence(&r).unwrap(), ("True".to_string(), 1.0));
    }
}
