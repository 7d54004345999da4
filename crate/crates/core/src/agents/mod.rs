//! Language-model agents that choose meta-paths: prompt rendering, response
//! parsing with a repair loop, single-task proposals, and the round-2
//! self-update and recommendation exchange. Mock clients replay fixture
//! files so runs are deterministic offline.

mod client;
mod parse;
mod prompts;
mod protocol;

use thiserror::Error;

pub use client::{
    ChatClient, ChatMessage, ChatMode, MockClient, MockFixture, RemoteChatConfig, RemoteClient,
    Role,
};
pub use parse::{parse_response, ParsedPath, ParsedResponse};
pub use prompts::{
    propose_prompt, recommend_prompt, render_schema_prompt, self_update_prompt, SYSTEM_PROMPT,
};
pub use protocol::{
    propose_metapaths, recommend, run_communication_round, self_update, AcceptedPath, AgentCall,
    AgentTask, AgentTranscript, CommunicationFlags, RoundTwoPaths, MAX_REPAIRS,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{call}: no valid answer after {attempts} attempts; last problems: {}", problems.join("; "))]
    Validation {
        call: String,
        attempts: usize,
        problems: Vec<String>,
        transcript: Box<AgentTranscript>,
    },
    #[error("chat transport failed after retries: {0}")]
    Transport(String),
    #[error("malformed chat response: {0}")]
    Malformed(String),
    #[error("mock fixture has no response left for `{0}`")]
    MockExhausted(String),
    #[error("mock fixture: {0}")]
    Fixture(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}
