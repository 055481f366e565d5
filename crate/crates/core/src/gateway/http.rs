//! OpenAI-compatible JSON-over-HTTP backend (`/chat/completions` and
//! `/embeddings`).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendConfig, GatewayError, GenerationRequest, Message};

pub struct HttpBackend {
    cfg: BackendConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.request_timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path)
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, GatewayError> {
        let mut req = self.agent.post(&self.url(path));
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {}", key.expose()));
        }
        let mut resp = req.send_json(body).map_err(map_transport)?;
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(GatewayError::Auth(status));
        }
        if !(200..300).contains(&status) {
            let message = resp
                .body_mut()
                .read_to_string()
                .unwrap_or_default()
                .chars()
                .take(200)
                .collect();
            return Err(GatewayError::Transport {
                status: Some(status),
                attempts: 1,
                message,
            });
        }
        let value: Value = resp.body_mut().read_json().map_err(map_transport)?;
        serde_json::from_value(value).map_err(|e| GatewayError::InvalidResponse(e.to_string()))
    }
}

fn map_transport(e: ureq::Error) -> GatewayError {
    match e {
        ureq::Error::Timeout(_) => GatewayError::Timeout { attempts: 1 },
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
            GatewayError::Timeout { attempts: 1 }
        }
        ureq::Error::Json(e) => GatewayError::InvalidResponse(e.to_string()),
        ureq::Error::StatusCode(s) => GatewayError::Transport {
            status: Some(s),
            attempts: 1,
            message: String::new(),
        },
        other => GatewayError::Transport {
            status: None,
            attempts: 1,
            message: other.to_string(),
        },
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        let body = ChatBody {
            model: &self.cfg.model_name,
            messages: req.messages(),
            temperature: req.temperature(),
            max_tokens: req.max_tokens(),
            seed: req.seed(),
        };
        let resp: ChatResponse = self.post("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::InvalidResponse("no choices[0].message.content".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let body = EmbedBody {
            model: &self.cfg.model_name,
            input: texts,
        };
        let resp: EmbedResponse = self.post("embeddings", &body)?;
        let mut items = resp.data;
        if items.iter().all(|i| i.index.is_some()) {
            items.sort_by_key(|i| i.index);
        }
        let first = items.first().map(|i| i.embedding.len()).unwrap_or(0);
        if let Some(bad) = items.iter().find(|i| i.embedding.len() != first) {
            return Err(GatewayError::DimensionMismatch {
                expected: first,
                got: bad.embedding.len(),
            });
        }
        Ok(items.into_iter().map(|i| i.embedding).collect())
    }

    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }
}
