//! Client for external experts speaking a two-endpoint JSON protocol:
//!
//! * `POST /v1/energy` with `{"expert": name, "tokens": [...]}`, answered by
//!   `{"energy": number}`.
//! * `POST /v1/conditional` with `{"expert": name, "tokens": [...], "position": i}`,
//!   answered by `{"tokens": [...], "logprobs": [...]}`.
//!
//! Remote experts see token strings, never local ids. Transport failures and
//! 5xx replies are retried with exponential backoff starting at 100 ms.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use mixmatch_core::experts::{Expert, ExpertKind};
use mixmatch_core::text::{detokenize, Sequence, TokenId, Vocabulary};
use mixmatch_core::toy::{Distribution, MaskedConditional};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BACKOFF_BASE_MS: u64 = 100;
/// Allowed deviation of the returned probability mass from one before the
/// client warns about renormalizing.
pub const NORMALIZATION_TOL: f64 = 1e-3;
/// Mass given to local tokens the server did not return, before
/// renormalization; keeps proposals strictly positive.
pub const DEFAULT_PROPOSAL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteExpertEndpoint {
    pub base_url: String,
    pub name: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

impl RemoteExpertEndpoint {
    pub fn new(base_url: impl Into<String>, name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            name: name.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.name.is_empty() {
            return Err("remote expert name must be non-empty".into());
        }
        if self.timeout_ms == 0 {
            return Err(format!("remote expert `{}`: timeout must be positive", self.name));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("remote expert `{}`: base URL must start with http:// or https://", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct EnergyRequest<'a> {
    pub expert: &'a str,
    pub tokens: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EnergyResponse {
    energy: f64,
}

#[derive(Debug, Serialize)]
pub struct ConditionalRequest<'a> {
    pub expert: &'a str,
    pub tokens: &'a [String],
    pub position: usize,
}

#[derive(Debug, Deserialize)]
struct ConditionalResponse {
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

/// A validated, normalized conditional over the server's candidate tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteDistribution {
    pub tokens: Vec<String>,
    pub probs: Vec<f64>,
}

pub struct RemoteClient {
    endpoint: RemoteExpertEndpoint,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(endpoint: RemoteExpertEndpoint) -> Result<Self> {
        endpoint.validate().map_err(|e| Error::Config(vec![e]))?;
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build();
        Ok(Self { endpoint, agent: config.into() })
    }

    pub fn endpoint(&self) -> &RemoteExpertEndpoint {
        &self.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body` and returns the response text, retrying transport errors
    /// and 5xx statuses.
    pub fn post(&self, path: &str, body: &[u8]) -> Result<String> {
        let url = self.url(path);
        let mut last = String::new();
        for attempt in 0..=self.endpoint.retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (attempt - 1)));
            }
            match self.agent.post(&url).header("Content-Type", "application/json").send(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string();
                    match (status, text) {
                        (200..=299, Ok(text)) => return Ok(text),
                        (500..=599, _) => last = format!("{url}: HTTP {status}"),
                        (_, Ok(text)) => return Err(Error::Protocol(format!("{url}: HTTP {status}: {text}"))),
                        (_, Err(e)) => last = format!("{url}: {e}"),
                    }
                }
                Err(e) => last = format!("{url}: {e}"),
            }
            log::debug!("attempt {} of {} failed: {last}", attempt + 1, self.endpoint.retries + 1);
        }
        Err(Error::Transport(format!("{last} (after {} attempts)", self.endpoint.retries + 1)))
    }

    pub fn energy_request_body(&self, tokens: &[String]) -> Vec<u8> {
        serde_json::to_vec(&EnergyRequest { expert: &self.endpoint.name, tokens }).expect("request serializes")
    }

    pub fn conditional_request_body(&self, tokens: &[String], position: usize) -> Vec<u8> {
        serde_json::to_vec(&ConditionalRequest { expert: &self.endpoint.name, tokens, position })
            .expect("request serializes")
    }

    pub fn remote_energy(&self, tokens: &[String]) -> Result<f64> {
        let text = self.post("/v1/energy", &self.energy_request_body(tokens))?;
        parse_energy(&text)
    }

    pub fn remote_conditional(&self, tokens: &[String], position: usize) -> Result<RemoteDistribution> {
        if position >= tokens.len() {
            return Err(Error::Core(mixmatch_core::Error::PositionOutOfRange { position, len: tokens.len() }));
        }
        let text = self.post("/v1/conditional", &self.conditional_request_body(tokens, position))?;
        parse_conditional(&text)
    }
}

pub fn parse_energy(text: &str) -> Result<f64> {
    let r: EnergyResponse =
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad energy response: {e}")))?;
    if !r.energy.is_finite() {
        return Err(Error::Protocol("energy is not finite".into()));
    }
    Ok(r.energy)
}

/// Validates array lengths and probability mass, then renormalizes.
pub fn parse_conditional(text: &str) -> Result<RemoteDistribution> {
    let r: ConditionalResponse =
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad conditional response: {e}")))?;
    if r.tokens.len() != r.logprobs.len() {
        return Err(Error::Protocol(format!("{} tokens but {} logprobs", r.tokens.len(), r.logprobs.len())));
    }
    if r.tokens.is_empty() {
        return Err(Error::Protocol("empty conditional".into()));
    }
    if r.logprobs.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::Protocol("logprobs must be finite or -inf".into()));
    }
    let probs: Vec<f64> = r.logprobs.iter().map(|l| l.exp()).collect();
    let mass: f64 = probs.iter().sum();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Protocol(format!("conditional mass {mass} cannot be normalized")));
    }
    if (mass - 1.0).abs() > NORMALIZATION_TOL {
        log::warn!("remote conditional mass is {mass}; renormalizing");
    }
    Ok(RemoteDistribution { tokens: r.tokens, probs: probs.into_iter().map(|p| p / mass).collect() })
}

fn to_strings(x: &Sequence, vocab: &Vocabulary) -> mixmatch_core::Result<Vec<String>> {
    Ok(detokenize(x, vocab)?.split(' ').map(String::from).collect())
}

fn model_error(e: Error) -> mixmatch_core::Error {
    mixmatch_core::Error::Model(e.to_string())
}

/// A remote service acting as an energy expert.
pub struct RemoteEnergyExpert {
    client: RemoteClient,
    vocab: Arc<Vocabulary>,
}

impl RemoteEnergyExpert {
    pub fn new(client: RemoteClient, vocab: Arc<Vocabulary>) -> Self {
        Self { client, vocab }
    }
}

impl Expert for RemoteEnergyExpert {
    fn kind(&self) -> ExpertKind {
        ExpertKind::Remote
    }

    fn name(&self) -> &str {
        &self.client.endpoint.name
    }

    fn energy(&self, x: &Sequence) -> mixmatch_core::Result<f64> {
        self.client.remote_energy(&to_strings(x, &self.vocab)?).map_err(model_error)
    }
}

/// A remote masked LM used as the proposal. Its conditional is restricted to
/// the local vocabulary; tokens the server did not return get `floor` mass
/// before renormalization.
pub struct RemoteProposal {
    client: RemoteClient,
    vocab: Arc<Vocabulary>,
    floor: f64,
}

impl RemoteProposal {
    pub fn new(client: RemoteClient, vocab: Arc<Vocabulary>) -> Self {
        Self { client, vocab, floor: DEFAULT_PROPOSAL_FLOOR }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    /// Maps a server distribution onto local ids.
    pub fn localize(&self, remote: &RemoteDistribution) -> mixmatch_core::Result<Distribution> {
        let mut weights = vec![self.floor; self.vocab.len()];
        let mut dropped = 0.0;
        for (tok, &p) in remote.tokens.iter().zip(&remote.probs) {
            match self.vocab.id(tok) {
                Some(id) => weights[id as usize] += p,
                None => dropped += p,
            }
        }
        if dropped > 0.0 {
            log::warn!("dropped {dropped:.4} of remote proposal mass outside the local vocabulary");
        }
        Distribution::from_weights(weights)
    }
}

impl MaskedConditional for RemoteProposal {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn conditional(&self, x: &[TokenId], i: usize) -> mixmatch_core::Result<Distribution> {
        let tokens = to_strings(&Sequence::new(x.to_vec()), &self.vocab)?;
        let remote = self.client.remote_conditional(&tokens, i).map_err(model_error)?;
        self.localize(&remote)
    }

    fn score(&self, x: &[TokenId], i: usize) -> mixmatch_core::Result<f64> {
        Ok(self.conditional(x, i)?.log_prob(x[i]))
    }
}
