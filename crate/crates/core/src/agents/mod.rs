//! Prompt rendering, chat backends and response parsing for the agents.

mod backend;
mod parse;
mod prompts;
mod transcript;

use serde::{Deserialize, Serialize};

use crate::corpus::Necessity;

pub use backend::{
    chat_complete, AgentRole, BackendError, ChatBackend, ChatRequest, Completion, DecodingMode,
    DecodingParams, FnBackend, HttpChatBackend, ScriptedBackend, DEFAULT_ATTEMPTS,
    DEFAULT_MAX_TOKENS,
};
pub use parse::{
    extract_necessity, parse_necessity, parse_refinement, parse_verdict, split_analysis,
    verdict_mentions, ParseError,
};
pub use prompts::{
    join_text_evidence, render_analyzer_prompt, render_necessity_label_prompt,
    render_refinement_prompt, render_summarizer_prompt, render_unified_prompt,
    render_verifier_prompt, ChatMessage, ChatPart, MessageRole, PromptError, ANALYZER_INSTRUCTION,
    IMAGE_PLACEHOLDER, NECESSITY_INSTRUCTION, NECESSITY_RESPONSE_RULE, SUMMARIZER_INSTRUCTION,
    VERIFIER_INSTRUCTION,
};
pub use transcript::{Transcript, TranscriptEntry};

/// The Analyzer's judgment on the image evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub necessity: Option<Necessity>,
}

impl Assessment {
    /// From a free-text analysis; necessity is extracted when stated.
    pub fn from_analysis(text: impl Into<String>) -> Self {
        let text = text.into();
        let necessity = extract_necessity(&text);
        Self { text, necessity }
    }

    /// From a Yes/No label response; the text slot holds the bare label.
    pub fn from_label(necessity: Necessity) -> Self {
        let text = match necessity {
            Necessity::Necessary => "Yes",
            Necessity::Unnecessary => "No",
        };
        Self {
            text: text.into(),
            necessity: Some(necessity),
        }
    }
}
