use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::AgentError;

const RETRIES: usize = 3;
const DEFAULT_FIXTURE: &str = include_str!("../../data/mock_agents.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: text.into(),
        }
    }
}

/// A chat completion backend. `call` names the agent call (for example
/// `propose/population`); mock clients use it to pick fixture responses.
pub trait ChatClient: Send {
    fn complete(&mut self, call: &str, messages: &[ChatMessage]) -> Result<String, AgentError>;
    fn mode(&self) -> &'static str;
}

/// Responses per call key, consumed in order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MockFixture {
    pub responses: BTreeMap<String, Vec<String>>,
}

impl MockFixture {
    pub fn from_json_str(text: &str) -> Result<Self, AgentError> {
        serde_json::from_str(text).map_err(|e| AgentError::Fixture(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let p = path.as_ref();
        let text = fs::read_to_string(p)
            .map_err(|e| AgentError::Fixture(format!("{}: {e}", p.display())))?;
        Self::from_json_str(&text)
    }

    /// The fixture shipped with the crate, covering the tasks population,
    /// commercial, user_activity and rating.
    pub fn shipped() -> Self {
        Self::from_json_str(DEFAULT_FIXTURE).expect("shipped fixture parses")
    }

    pub fn with(mut self, call: &str, responses: &[&str]) -> Self {
        self.responses.insert(
            call.to_string(),
            responses.iter().map(|s| s.to_string()).collect(),
        );
        self
    }
}

/// Replays a [`MockFixture`].
#[derive(Debug, Clone)]
pub struct MockClient {
    fixture: MockFixture,
    cursor: BTreeMap<String, usize>,
}

impl MockClient {
    pub fn new(fixture: MockFixture) -> Self {
        MockClient {
            fixture,
            cursor: BTreeMap::new(),
        }
    }
}

impl ChatClient for MockClient {
    fn complete(&mut self, call: &str, _messages: &[ChatMessage]) -> Result<String, AgentError> {
        let list = self
            .fixture
            .responses
            .get(call)
            .ok_or_else(|| AgentError::MockExhausted(call.to_string()))?;
        let k = self.cursor.entry(call.to_string()).or_insert(0);
        let r = list
            .get(*k)
            .cloned()
            .ok_or_else(|| AgentError::MockExhausted(call.to_string()))?;
        *k += 1;
        Ok(r)
    }

    fn mode(&self) -> &'static str {
        "mock"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatMode {
    Mock,
    Remote(RemoteChatConfig),
}

impl ChatMode {
    /// Remote when `LLM_ENDPOINT` is set; mock otherwise.
    pub fn from_env() -> Self {
        match std::env::var("LLM_ENDPOINT") {
            Ok(endpoint) if !endpoint.trim().is_empty() => ChatMode::Remote(RemoteChatConfig {
                endpoint,
                model: std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4o".into()),
                api_key: std::env::var("LLM_API_KEY").ok(),
                temperature: 0.0,
            }),
            _ => ChatMode::Mock,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChatMode::Mock => "mock",
            ChatMode::Remote(_) => "remote",
        }
    }
}

/// OpenAI-compatible chat completions over HTTP.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    pub config: RemoteChatConfig,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

impl ChatClient for RemoteClient {
    fn complete(&mut self, call: &str, messages: &[ChatMessage]) -> Result<String, AgentError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": self.config.temperature,
        });
        let mut last = String::new();
        for attempt in 0..RETRIES {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(500 << attempt));
            }
            let mut req =
                ureq::post(&self.config.endpoint).header("Content-Type", "application/json");
            if let Some(k) = &self.config.api_key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => {
                    let c: Completion = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| AgentError::Malformed(e.to_string()))?;
                    return c
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| AgentError::Malformed("no choices".into()));
                }
                Err(e) => {
                    log::warn!("{call}: chat attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(AgentError::Transport(last))
    }

    fn mode(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_replays_in_order_then_exhausts() {
        let f = MockFixture::default().with("k", &["a", "b"]);
        let mut c = MockClient::new(f);
        assert_eq!(c.complete("k", &[]).unwrap(), "a");
        assert_eq!(c.complete("k", &[]).unwrap(), "b");
        assert!(matches!(
            c.complete("k", &[]),
            Err(AgentError::MockExhausted(_))
        ));
        assert!(matches!(
            c.complete("other", &[]),
            Err(AgentError::MockExhausted(_))
        ));
    }

    #[test]
    fn shipped_fixture_covers_all_calls() {
        let f = MockFixture::shipped();
        let tasks = ["population", "commercial", "user_activity", "rating"];
        for t in tasks {
            assert!(f.responses.contains_key(&format!("propose/{t}")));
            assert!(f.responses.contains_key(&format!("self_update/{t}")));
            for u in tasks.iter().filter(|&&u| u != t) {
                assert!(
                    f.responses.contains_key(&format!("recommend/{t}->{u}")),
                    "{t}->{u}"
                );
            }
        }
    }

    #[test]
    fn unreachable_remote_is_transport_error() {
        let mut c = RemoteClient {
            config: RemoteChatConfig {
                endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
                model: "m".into(),
                api_key: None,
                temperature: 0.0,
            },
        };
        assert!(matches!(
            c.complete("x", &[ChatMessage::user("hi")]),
            Err(AgentError::Transport(_))
        ));
    }
}
