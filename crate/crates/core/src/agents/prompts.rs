//! Prompt templates and their renderers.
//!
//! Every renderer is pure: the same inputs produce byte-identical messages.
//! Images are interleaved as their own message parts right after the
//! `Image Evidence:` label.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("the analyzer needs an image candidate")]
    MissingImage,
    #[error("claim text is empty")]
    EmptyClaim,
    #[error("document is empty")]
    EmptyDocument,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatPart {
    Text(String),
    Image(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub parts: Vec<ChatPart>,
}

/// Stands in for an image part in [`ChatMessage::flat_text`].
pub const IMAGE_PLACEHOLDER: &str = "<image>";

impl ChatMessage {
    pub fn user(parts: Vec<ChatPart>) -> Self {
        Self {
            role: MessageRole::User,
            parts,
        }
    }

    pub fn has_image(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, ChatPart::Image(_)))
    }

    pub fn images(&self) -> impl Iterator<Item = &Path> {
        self.parts.iter().filter_map(|p| match p {
            ChatPart::Image(path) => Some(path.as_path()),
            ChatPart::Text(_) => None,
        })
    }

    /// Text parts concatenated, with [`IMAGE_PLACEHOLDER`] for each image.
    pub fn flat_text(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                ChatPart::Text(t) => t.as_str(),
                ChatPart::Image(_) => IMAGE_PLACEHOLDER,
            })
            .collect()
    }
}

/// Build a part list, merging adjacent text.
#[derive(Default)]
struct Parts(Vec<ChatPart>);

impl Parts {
    fn text(mut self, s: &str) -> Self {
        if let Some(ChatPart::Text(last)) = self.0.last_mut() {
            last.push_str(s);
        } else {
            self.0.push(ChatPart::Text(s.to_string()));
        }
        self
    }

    fn image(mut self, p: &Path) -> Self {
        self.0.push(ChatPart::Image(p.to_path_buf()));
        self
    }

    fn done(self) -> ChatMessage {
        ChatMessage::user(self.0)
    }
}

pub const ANALYZER_INSTRUCTION: &str = "Your task is to determine whether the provided image evidence is necessary for verifying the given claim or clarifying the accompanying text evidence. Follow these steps:
1. Analyze the claim and the text evidence to understand the context.
2. Assess whether the image provides important information that is not already conveyed by the text.
3. Decide whether the image is necessary for verification and justify your reasoning.";

pub const ANALYZER_RESPONSE_RULE: &str = "Respond only with your analysis.";

pub const VERIFIER_INSTRUCTION: &str = "Given a claim, your task is to determine the correct verdict based on the provided image evidence and text evidence. Provide a justification for your answer, then choose one of the following verdicts: 'Supported', 'Refuted', or 'NEI' (Not Enough Information).";

pub const NECESSITY_INSTRUCTION: &str = "Your task is to determine if the provided image evidence is essential to verify the given claim or clarify the provided text evidence. To do this, follow these steps:
1. Analyze the claim and the text evidence to understand the context.
2. Assess whether the image evidence provides critical information not conveyed by the text alone.
3. Decide if the image evidence is necessary for verification or clarification.";

pub const NECESSITY_RESPONSE_RULE: &str =
    "Respond only with 'Yes' if the image evidence is necessary or 'No' if it is not.";

pub const SUMMARIZER_INSTRUCTION: &str = "Your task is to read the following document carefully and summarize it into a single, coherent paragraph. Focus on capturing the main ideas and essential details without adding new information or personal opinions.";

pub const REFINEMENT_INSTRUCTION: &str = "You are a fact-checking assistant. Your task is to determine whether the given claim is complete in intention and clearly stated. If the claim is vague or incomplete (e.g., a keyword like \"Google PhoneBook\"), refine it into a clear and complete sentence using the provided evidence, justification, and label. If the claim is already clear and complete, return \"not needed\".";

pub const REFINEMENT_RESPONSE_RULE: &str = "Return ONLY the refined claim or \"not needed\".";

/// Join evidence sentences for the `Text Evidence` slot. A single sentence
/// is used as is; several become a bulleted list, each on its own line.
pub fn join_text_evidence<S: AsRef<str>>(sentences: &[S]) -> String {
    match sentences {
        [] => String::new(),
        [one] => one.as_ref().to_string(),
        many => many.iter().map(|s| format!("\n• {}", s.as_ref())).collect(),
    }
}

fn check_claim(claim: &str) -> Result<(), PromptError> {
    if claim.trim().is_empty() {
        Err(PromptError::EmptyClaim)
    } else {
        Ok(())
    }
}

/// Analyzer prompt: free-text judgment on whether the image is needed.
pub fn render_analyzer_prompt(
    claim: &str,
    image: Option<&Path>,
    text_evidence: &str,
) -> Result<ChatMessage, PromptError> {
    check_claim(claim)?;
    let image = image.ok_or(PromptError::MissingImage)?;
    Ok(Parts::default()
        .text(ANALYZER_INSTRUCTION)
        .text("\n")
        .text(ANALYZER_RESPONSE_RULE)
        .text("\n\nClaim: ")
        .text(claim)
        .text("\nImage Evidence: ")
        .image(image)
        .text("\nText Evidence: ")
        .text(text_evidence)
        .done())
}

/// Verifier prompt. The `Image Evidence` line appears only with an image,
/// the `Image Analysis` line only with an analysis.
pub fn render_verifier_prompt(
    claim: &str,
    image: Option<&Path>,
    analysis: Option<&str>,
    text_evidence: &str,
) -> Result<ChatMessage, PromptError> {
    check_claim(claim)?;
    let mut p = Parts::default()
        .text(VERIFIER_INSTRUCTION)
        .text("\nClaim: ")
        .text(claim)
        .text("\n");
    if let Some(img) = image {
        p = p.text("Image Evidence: ").image(img).text("\n");
    }
    if let Some(a) = analysis {
        p = p.text("Image Analysis: ").text(a).text("\n");
    }
    Ok(p.text("Text Evidence: ").text(text_evidence).done())
}

/// Yes/No necessity prompt used by the label-only and pre-filtering strategies.
pub fn render_necessity_label_prompt(
    claim: &str,
    image: Option<&Path>,
    text_evidence: &str,
) -> Result<ChatMessage, PromptError> {
    check_claim(claim)?;
    let image = image.ok_or(PromptError::MissingImage)?;
    Ok(Parts::default()
        .text(NECESSITY_INSTRUCTION)
        .text("\n\nClaim: ")
        .text(claim)
        .text("\nImage Evidence: ")
        .image(image)
        .text("\nText Evidence: ")
        .text(text_evidence)
        .text("\n\n")
        .text(NECESSITY_RESPONSE_RULE)
        .done())
}

/// Single-pass prompt combining the Analyzer steps with the Verifier task.
pub fn render_unified_prompt(
    claim: &str,
    image: Option<&Path>,
    text_evidence: &str,
) -> Result<ChatMessage, PromptError> {
    check_claim(claim)?;
    let mut p = Parts::default()
        .text(ANALYZER_INSTRUCTION)
        .text("\n")
        .text(VERIFIER_INSTRUCTION)
        .text("\nClaim: ")
        .text(claim)
        .text("\n");
    if let Some(img) = image {
        p = p.text("Image Evidence: ").image(img).text("\n");
    }
    Ok(p.text("Text Evidence: ").text(text_evidence).done())
}

pub fn render_summarizer_prompt(document: &str) -> Result<ChatMessage, PromptError> {
    if document.trim().is_empty() {
        return Err(PromptError::EmptyDocument);
    }
    Ok(Parts::default()
        .text(SUMMARIZER_INSTRUCTION)
        .text("\nDocument:\n")
        .text(document)
        .done())
}

pub fn render_refinement_prompt(
    claim: &str,
    evidence: &str,
    justification: &str,
    label: &str,
) -> ChatMessage {
    Parts::default()
        .text(REFINEMENT_INSTRUCTION)
        .text("\n\nClaim: ")
        .text(claim)
        .text("\nEvidence: ")
        .text(evidence)
        .text("\nJustification: ")
        .text(justification)
        .text("\nLabel: ")
        .text(label)
        .text("\n\n")
        .text(REFINEMENT_RESPONSE_RULE)
        .done()
}
