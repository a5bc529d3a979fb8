//! Embedding providers selectable from the command line.

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::Deserialize;
use supercap_core::imaging::Image;
use supercap_core::regions::{check_dim, check_input, FeatureProvider, FeatureVector, MockProvider};
use supercap_core::EmbedError;

use crate::imageio::encode_png;

/// Where region features come from: the offline mock, a remote embedder, or a
/// directory of precomputed feature files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Mock,
    Http(String),
    File(PathBuf),
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mock" {
            return Ok(Self::Mock);
        }
        if let Some(url) = s.strip_prefix("http:") {
            // Accept both `http:host:port` and `http:http://host:port`.
            let url = if url.starts_with("http://") || url.starts_with("https://") {
                url.to_string()
            } else {
                format!("http:{url}")
            };
            return Ok(Self::Http(url));
        }
        if let Some(path) = s.strip_prefix("file:").filter(|p| !p.is_empty()) {
            return Ok(Self::File(PathBuf::from(path)));
        }
        Err(format!("unknown provider {s:?} (expected mock, http:<url> or file:<dir>)"))
    }
}

/// Remote embedder speaking `POST /embed` with a PNG body and a JSON reply
/// `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    dim: usize,
    input_size: usize,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct EmbedReply {
    embedding: Vec<f64>,
}

impl HttpProvider {
    pub fn new(base_url: &str, dim: usize, input_size: usize) -> Self {
        let base = base_url.trim_end_matches('/');
        let endpoint = if base.ends_with("/embed") { base.to_string() } else { format!("{base}/embed") };
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build();
        Self { endpoint, dim, input_size, agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl FeatureProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, crop: &Image) -> Result<FeatureVector, EmbedError> {
        check_input(self, crop)?;
        let png = encode_png(crop).map_err(|e| EmbedError::Network(e.to_string()))?;
        let reply = match self.agent.post(&self.endpoint).set("Content-Type", "image/png").send_bytes(&png) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, _)) => return Err(EmbedError::Status(code)),
            Err(ureq::Error::Transport(t)) => return Err(EmbedError::Network(t.to_string())),
        };
        let body = reply.into_string().map_err(|e| EmbedError::Network(e.to_string()))?;
        let parsed: EmbedReply = serde_json::from_str(&body).map_err(|e| EmbedError::MalformedBody(e.to_string()))?;
        let v = FeatureVector::new(parsed.embedding.into_iter().map(|x| x as f32).collect())?;
        check_dim(self, &v)?;
        Ok(v)
    }
}

/// Builds a crop-level provider; `File` specs have none because their features are read
/// from disk.
pub fn build_provider(
    spec: &ProviderSpec,
    dim: usize,
    input_size: usize,
    seed: u64,
) -> Option<Box<dyn FeatureProvider>> {
    match spec {
        ProviderSpec::Mock => Some(Box::new(MockProvider::new(dim, input_size, seed))),
        ProviderSpec::Http(url) => Some(Box::new(HttpProvider::new(url, dim, input_size))),
        ProviderSpec::File(_) => None,
    }
}
