//! HTTP client for an OpenAI-style text completion endpoint.
//!
//! Scoring sends `prompt + text` with `echo: true, max_tokens: 0, logprobs: 1`
//! and keeps the tokens past the prompt. Sampling sends the prompt with the
//! sampling parameters and an optional `allowed_element_tokens` list. The
//! schemas are described in `docs/remote-protocol.md`.

use std::f64::consts::LN_2;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ElementConstraint, Generator, SamplingParams, ScoredSequence, ScorerError, SequenceScorer};

/// Bearer token for the completion endpoint and the remote relaxer.
pub const API_TOKEN_ENV: &str = "CRYSTAL_KIT_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, initial_backoff_ms: 250, max_backoff_ms: 8000 }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Full URL of the completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub connect_timeout_secs: f64,
    pub retry: RetryPolicy,
    /// Whether the endpoint understands `allowed_element_tokens`.
    pub supports_constraints: bool,
    #[serde(skip_serializing)]
    pub api_token: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "default".into(),
            timeout_secs: 60.0,
            connect_timeout_secs: 10.0,
            retry: RetryPolicy::default(),
            supports_constraints: true,
            api_token: None,
        }
    }
}

impl RemoteConfig {
    /// Fills `api_token` from the environment when unset.
    pub fn with_env_token(mut self) -> Self {
        if self.api_token.is_none() {
            self.api_token = std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        self
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_secs)))
            .timeout_connect(Some(Duration::from_secs_f64(self.connect_timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// POSTs JSON with bounded retries on transport errors, 429 and 5xx.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    token: Option<&str>,
    body: &Value,
    retry: &RetryPolicy,
) -> Result<Value, ScorerError> {
    let mut attempt = 0;
    loop {
        let mut request = agent.post(url).header("Content-Type", "application/json");
        if let Some(t) = token {
            request = request.header("Authorization", &format!("Bearer {t}"));
        }
        let (can_retry, error) = match request.send_json(body) {
            Err(e) => (true, ScorerError::Transport(e.to_string())),
            Ok(mut response) => {
                let status = response.status().as_u16();
                let text = response.body_mut().read_to_string().map_err(|e| ScorerError::Transport(e.to_string()));
                match text {
                    Err(e) => (true, e),
                    Ok(text) if (200..300).contains(&status) => {
                        return serde_json::from_str(&text).map_err(|e| ScorerError::Protocol(format!("invalid JSON: {e}")));
                    }
                    Ok(text) => (retryable(status), ScorerError::Status { status, body: text }),
                }
            }
        };
        if !can_retry || attempt >= retry.max_retries {
            return Err(error);
        }
        std::thread::sleep(retry.backoff(attempt));
        attempt += 1;
    }
}

#[derive(Debug, Clone)]
pub struct RemoteLLM {
    config: RemoteConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    logprobs: Option<Logprobs>,
}

#[derive(Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

fn first_choice(value: Value) -> Result<Choice, ScorerError> {
    let response: CompletionResponse =
        serde_json::from_value(value).map_err(|e| ScorerError::Protocol(format!("unexpected completion shape: {e}")))?;
    response.choices.into_iter().next().ok_or_else(|| ScorerError::Protocol("no choices".into()))
}

impl RemoteLLM {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = config.agent();
        RemoteLLM { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn post(&self, body: &Value) -> Result<Value, ScorerError> {
        post_json(&self.agent, &self.config.endpoint, self.config.api_token.as_deref(), body, &self.config.retry)
    }

    /// Request body for [`Generator::sample`].
    pub fn sample_request(
        &self,
        prompt: &str,
        params: &SamplingParams,
        seed: u64,
        constraint: Option<&ElementConstraint>,
    ) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "seed": seed,
        });
        if let Some(stop) = &params.stop {
            body["stop"] = json!(stop);
        }
        if let Some(c) = constraint {
            body["allowed_element_tokens"] = json!(c.allowed);
        }
        body
    }
}

impl SequenceScorer for RemoteLLM {
    fn backend_id(&self) -> String {
        format!("remote({}@{})", self.config.model, self.config.endpoint)
    }

    fn score_continuation(&self, prompt: &str, text: &str) -> Result<ScoredSequence, ScorerError> {
        let full = format!("{prompt}{text}");
        let body = json!({
            "model": self.config.model,
            "prompt": full,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 1.0,
        });
        let choice = first_choice(self.post(&body)?)?;
        let lp = choice.logprobs.ok_or_else(|| ScorerError::Protocol("response lacks logprobs".into()))?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(ScorerError::Protocol("tokens and token_logprobs differ in length".into()));
        }
        if lp.tokens.concat() != full {
            return Err(ScorerError::Protocol("echoed tokens do not reproduce the request text".into()));
        }
        let boundary = prompt.len();
        let mut offset = 0;
        let mut token_logprobs = Vec::new();
        for (token, logprob) in lp.tokens.into_iter().zip(lp.token_logprobs) {
            let start = offset;
            offset += token.len();
            if offset <= boundary {
                continue;
            }
            if start < boundary {
                return Err(ScorerError::Protocol("a token straddles the prompt/text boundary".into()));
            }
            let ln = logprob.ok_or_else(|| ScorerError::Protocol("missing logprob for a text token".into()))?;
            if !(ln <= 0.0) {
                return Err(ScorerError::Protocol(format!("log-probability {ln} is positive")));
            }
            token_logprobs.push((token, ln / LN_2));
        }
        Ok(ScoredSequence { text: text.to_string(), token_logprobs })
    }
}

impl Generator for RemoteLLM {
    fn backend_id(&self) -> String {
        SequenceScorer::backend_id(self)
    }

    fn sample(
        &self,
        prompt: &str,
        params: &SamplingParams,
        seed: u64,
        constraint: Option<&ElementConstraint>,
    ) -> Result<String, ScorerError> {
        params.validate()?;
        if constraint.is_some() && !self.config.supports_constraints {
            return Err(ScorerError::ConstraintUnsupported);
        }
        let body = self.sample_request(prompt, params, seed, constraint);
        match self.post(&body) {
            Ok(value) => Ok(first_choice(value)?.text),
            Err(ScorerError::Status { status: 400 | 422, body })
                if constraint.is_some() && body.contains("allowed_element_tokens") =>
            {
                Err(ScorerError::ConstraintUnsupported)
            }
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves the canned `(status, body)` responses in order, one connection
    /// each, and reports every request body it received.
    fn stub(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut length = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut request = vec![0; length];
                reader.read_exact(&mut request).unwrap();
                tx.send(String::from_utf8(request).unwrap()).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                reader.get_mut().write_all(reply.as_bytes()).unwrap();
            }
        });
        (url, rx)
    }

    fn client(url: String) -> RemoteLLM {
        RemoteLLM::new(RemoteConfig {
            endpoint: url,
            retry: RetryPolicy { max_retries: 2, initial_backoff_ms: 1, max_backoff_ms: 5 },
            timeout_secs: 5.0,
            ..RemoteConfig::default()
        })
    }

    fn echo_body() -> String {
        json!({"choices": [{"text": "P: ab", "logprobs": {
            "tokens": ["P", ": ", "a", "b"],
            "token_logprobs": [null, -0.5, LN_2 * -1.0, LN_2 * -3.0]
        }}]})
        .to_string()
    }

    #[test]
    fn scores_from_echoed_logprobs() {
        let (url, rx) = stub(vec![(200, echo_body())]);
        let s = client(url).score_continuation("P: ", "ab").unwrap();
        assert_eq!(s.token_logprobs.len(), 2);
        assert!((s.token_logprobs[0].1 + 1.0).abs() < 1e-12);
        assert!((s.perplexity().unwrap() - 4.0).abs() < 1e-12);
        let request: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(request["echo"], true);
        assert_eq!(request["prompt"], "P: ab");
    }

    #[test]
    fn retries_server_errors() {
        let (url, _rx) = stub(vec![(503, "{}".into()), (200, echo_body())]);
        assert!(client(url).score_continuation("P: ", "ab").is_ok());
        let (url, _rx) = stub(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
        assert!(matches!(client(url).score_continuation("P: ", "ab"), Err(ScorerError::Status { status: 503, .. })));
        let (url, _rx) = stub(vec![(401, "denied".into())]);
        assert!(matches!(client(url).score_continuation("P: ", "ab"), Err(ScorerError::Status { status: 401, .. })));
    }

    #[test]
    fn constraint_is_serialized() {
        let reply = json!({"choices": [{"text": "Fe"}]}).to_string();
        let (url, rx) = stub(vec![(200, reply)]);
        let c = ElementConstraint { allowed: vec!["Fe".into(), "Co".into()] };
        let text = client(url).sample("x", &SamplingParams::default(), 3, Some(&c)).unwrap();
        assert_eq!(text, "Fe");
        let request: Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(request["allowed_element_tokens"], json!(["Fe", "Co"]));
        assert_eq!(request["seed"], 3);

        let mut no_constraints = client("http://127.0.0.1:9/unused".into());
        no_constraints.config.supports_constraints = false;
        assert_eq!(
            no_constraints.sample("x", &SamplingParams::default(), 3, Some(&c)),
            Err(ScorerError::ConstraintUnsupported)
        );
    }

    #[test]
    fn rejects_straddling_tokens() {
        let body = json!({"choices": [{"logprobs": {"tokens": ["P:", " ab"], "token_logprobs": [null, -1.0]}}]}).to_string();
        let (url, _rx) = stub(vec![(200, body)]);
        assert!(matches!(client(url).score_continuation("P: ", "ab"), Err(ScorerError::Protocol(_))));
    }
}
