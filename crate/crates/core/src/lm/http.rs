//! Chat-completion HTTP backend.
//!
//! Sends `POST {base_url}/chat/completions` with the operator instruction as
//! the system message, demonstrations as alternating user/assistant turns and
//! the prompt as the final user turn. Labelled requests ask for per-token
//! log-probabilities; label log-probs are read at the first answer token that
//! tells the labels apart.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value as Json};

use super::{LmBackend, LmError, LmRequest, LmResult};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HttpConfig {
    pub id: String,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_top_logprobs() -> u32 {
    5
}

pub struct HttpBackend {
    cfg: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Result<Self, LmError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| LmError::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build();
        Ok(Self { cfg, api_key, agent })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

pub fn request_body(model: &str, request: &LmRequest, top_logprobs: u32) -> Json {
    let mut messages = vec![json!({"role": "system", "content": request.system_instruction})];
    for d in &request.demonstrations {
        messages.push(json!({"role": "user", "content": d.input}));
        messages.push(json!({"role": "assistant", "content": d.output}));
    }
    messages.push(json!({"role": "user", "content": request.user_prompt}));
    let mut body = json!({
        "model": model,
        "messages": messages,
        "temperature": 0,
        "max_tokens": request.max_output_chars,
    });
    if request.label_set.is_some() {
        body["logprobs"] = json!(true);
        body["top_logprobs"] = json!(top_logprobs);
    }
    body
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub top_logprobs: Vec<TopLogprob>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TopLogprob {
    pub token: String,
    pub logprob: f64,
}

pub fn parse_response(backend_id: &str, body: &str, labels: Option<&[String]>) -> Result<LmResult, LmError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| LmError::Decode(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| LmError::Decode("no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let label_logprobs = match (labels, choice.logprobs.and_then(|l| l.content)) {
        (Some(labels), Some(tokens)) => label_logprobs(&tokens, labels),
        _ => None,
    };
    Ok(LmResult {
        text,
        label_logprobs,
        backend_id: backend_id.to_string(),
    })
}

/// Labels whose text is compatible with the answer prefix `s`.
fn consistent<'a>(s: &str, labels: &'a [String]) -> Vec<usize> {
    let s = s.trim_start().to_lowercase();
    labels
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.to_lowercase();
            l.starts_with(&s) || s.starts_with(&l)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Reads label log-probs at the first emitted token that identifies a single
/// label. Labels absent from the alternatives at that position get -inf.
pub fn label_logprobs(tokens: &[TokenLogprob], labels: &[String]) -> Option<Vec<(String, f64)>> {
    let mut prefix = String::new();
    for tok in tokens {
        let emitted = format!("{prefix}{}", tok.token);
        if emitted.trim().is_empty() {
            prefix = emitted;
            continue;
        }
        let hits = consistent(&emitted, labels);
        match hits.len() {
            0 => return None,
            1 => {
                let mut out: Vec<(String, f64)> =
                    labels.iter().map(|l| (l.clone(), f64::NEG_INFINITY)).collect();
                let alternatives = std::iter::once((tok.token.as_str(), tok.logprob))
                    .chain(tok.top_logprobs.iter().map(|t| (t.token.as_str(), t.logprob)));
                for (alt, lp) in alternatives {
                    let s = format!("{prefix}{alt}");
                    if s.trim().is_empty() {
                        continue;
                    }
                    if let [only] = consistent(&s, labels)[..] {
                        let slot = &mut out[only].1;
                        *slot = slot.max(lp);
                    }
                }
                return Some(out);
            }
            _ => prefix = emitted,
        }
    }
    None
}

impl LmBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResult, LmError> {
        let body = request_body(&self.cfg.model, request, self.cfg.top_logprobs);
        let mut req = self.agent.post(&self.endpoint()).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let text = match req.send_json(body) {
            Ok(resp) => resp.into_string().map_err(|e| LmError::Transport(e.to_string()))?,
            Err(ureq::Error::Status(code, resp)) => {
                return Err(LmError::Status {
                    code,
                    body: resp.into_string().unwrap_or_default(),
                })
            }
            Err(ureq::Error::Transport(t)) => return Err(LmError::Transport(t.to_string())),
        };
        parse_response(&self.cfg.id, &text, request.label_set.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{label_confidence, Demonstration, DOCUMENTS, TRUE_FALSE};

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn body_layout() {
        let req = LmRequest::new("sys", "claim")
            .with_labels(&TRUE_FALSE)
            .with_demonstrations(&[Demonstration {
                input: "in".into(),
                output: "True".into(),
            }]);
        let body = request_body("m", &req, 5);
        let roles: Vec<_> = body["messages"]
            .as_array()
            .unwrap()
            .iter()
            .map(|m| m["role"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert_eq!(body["logprobs"], json!(true));
        assert_eq!(body["messages"][3]["content"], "claim");
    }

    #[test]
    fn reads_single_token_labels() {
        let body = r#"{"choices":[{"message":{"content":"True"},
            "logprobs":{"content":[{"token":"True","logprob":-0.5108,
              "top_logprobs":[{"token":"True","logprob":-0.5108},{"token":"False","logprob":-0.9163}]}]}}]}"#;
        let r = parse_response("h", body, Some(&labels(&TRUE_FALSE))).unwrap();
        let (label, c) = label_confidence(&r).unwrap();
        assert_eq!(label, "True");
        assert!((c - 0.6).abs() < 1e-3);
    }

    #[test]
    fn skips_shared_prefix_tokens() {
        // "Document" is common to both labels; " 2" decides
        let body = r#"{"choices":[{"message":{"content":"Document 2"},
            "logprobs":{"content":[
              {"token":"Document","logprob":-0.01,"top_logprobs":[{"token":"Document","logprob":-0.01}]},
              {"token":" 2","logprob":-0.2231,"top_logprobs":[{"token":" 2","logprob":-0.2231},{"token":" 1","logprob":-1.6094}]}
            ]}}]}"#;
        let r = parse_response("h", body, Some(&labels(&DOCUMENTS))).unwrap();
        let (label, c) = label_confidence(&r).unwrap();
        assert_eq!(label, "Document 2");
        assert!((c - 0.8).abs() < 1e-3);
    }

    #[test]
    fn off_label_answer_has_no_logprobs() {
        let body = r#"{"choices":[{"message":{"content":"Maybe"},
            "logprobs":{"content":[{"token":"Maybe","logprob":-0.1,"top_logprobs":[]}]}}]}"#;
        let r = parse_response("h", body, Some(&labels(&TRUE_FALSE))).unwrap();
        assert!(r.label_logprobs.is_none());
        assert_eq!(r.text, "Maybe");
    }

    #[test]
    fn missing_alternative_is_neg_infinity() {
        let toks = vec![TokenLogprob {
            token: " False".into(),
            logprob: -0.1,
            top_logprobs: vec![],
        }];
        let lps = label_logprobs(&toks, &labels(&TRUE_FALSE)).unwrap();
        assert_eq!(lps[0], ("True".to_string(), f64::NEG_INFINITY));
        assert_eq!(lps[1], ("False".to_string(), -0.1));
    }

    #[test]
    fn decode_errors() {
        assert!(matches!(parse_response("h", "not json", None), Err(LmError::Decode(_))));
        assert!(matches!(parse_response("h", r#"{"choices":[]}"#, None), Err(LmError::Decode(_))));
    }
}
