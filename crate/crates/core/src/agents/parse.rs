//! Turning model text into typed results.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::corpus::{Necessity, Verdict};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no verdict label found in response")]
    UnparseableVerdict,
    #[error("response does not start with yes or no")]
    UnparseableNecessity,
}

fn verdict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(not\s+enough\s+information|supported|refuted|nei)\b").unwrap()
    })
}

/// All verdict tokens in `raw`, in order of appearance.
pub fn verdict_mentions(raw: &str) -> Vec<(usize, Verdict)> {
    verdict_re()
        .find_iter(raw)
        .map(|m| {
            let word = m.as_str().to_ascii_lowercase();
            let v = match word.as_str() {
                "supported" => Verdict::Supported,
                "refuted" => Verdict::Refuted,
                _ => Verdict::Nei,
            };
            (m.start(), v)
        })
        .collect()
}

/// The last verdict token in `raw`. Models justify first and conclude with
/// the label, so earlier mentions are treated as discussion.
pub fn parse_verdict(raw: &str) -> Result<Verdict, ParseError> {
    verdict_mentions(raw)
        .last()
        .map(|&(_, v)| v)
        .ok_or(ParseError::UnparseableVerdict)
}

/// Leading yes/no, case-insensitive, ignoring quotes and punctuation.
pub fn parse_necessity(raw: &str) -> Result<Necessity, ParseError> {
    let word: String = raw
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    match word.as_str() {
        "yes" => Ok(Necessity::Necessary),
        "no" => Ok(Necessity::Unnecessary),
        _ => Err(ParseError::UnparseableNecessity),
    }
}

fn necessity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(not\s+(?:necessary|essential|needed)|(?:isn't|is\s+not)\s+(?:necessary|essential)|unnecessary|necessary|essential)\b",
        )
        .unwrap()
    })
}

/// Best-effort necessity decision from a free-text analysis: the first
/// necessity phrase decides.
pub fn extract_necessity(analysis: &str) -> Option<Necessity> {
    let plain = analysis.replace(['*', '_'], "");
    let m = necessity_re().find(&plain)?;
    let phrase = m.as_str().to_ascii_lowercase();
    if phrase.contains("not") || phrase.contains("n't") || phrase == "unnecessary" {
        Some(Necessity::Unnecessary)
    } else {
        Some(Necessity::Necessary)
    }
}

/// Text before the last verdict token, for single-pass analysis+verdict output.
pub fn split_analysis(raw: &str) -> Option<&str> {
    let &(pos, _) = verdict_mentions(raw).last()?;
    let head = raw[..pos].trim();
    (!head.is_empty()).then_some(head)
}

/// The refined claim, or the original when the model answers "not needed".
pub fn parse_refinement(raw: &str, original: &str) -> String {
    let trimmed = raw.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    let lowered = trimmed.trim_end_matches('.').to_ascii_lowercase();
    if trimmed.is_empty() || lowered == "not needed" {
        original.to_string()
    } else {
        trimmed.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn verdict_examples() {
        assert_eq!(parse_verdict("...Therefore the verdict is Refuted.").unwrap(), Verdict::Refuted);
        assert_eq!(parse_verdict("Not enough information.").unwrap(), Verdict::Nei);
        assert_eq!(
            parse_verdict("It seems Supported at first, but ultimately Refuted").unwrap(),
            Verdict::Refuted
        );
        assert_eq!(parse_verdict("**NEI**").unwrap(), Verdict::Nei);
        assert_eq!(parse_verdict("The claim is unsupported"), Err(ParseError::UnparseableVerdict));
        assert_eq!(parse_verdict("neighbors agree"), Err(ParseError::UnparseableVerdict));
    }

    #[test]
    fn necessity_examples() {
        assert_eq!(parse_necessity("Yes").unwrap(), Necessity::Necessary);
        assert_eq!(parse_necessity("no.").unwrap(), Necessity::Unnecessary);
        assert_eq!(parse_necessity("'Yes', because").unwrap(), Necessity::Necessary);
        assert_eq!(parse_necessity("Maybe"), Err(ParseError::UnparseableNecessity));
        assert_eq!(parse_necessity("Nope"), Err(ParseError::UnparseableNecessity));
    }

    #[test]
    fn analysis_necessity() {
        assert_eq!(
            extract_necessity("The image evidence is **necessary** for verifying the claim."),
            Some(Necessity::Necessary)
        );
        assert_eq!(
            extract_necessity("The image evidence is **not necessary** for verifying the claim. It is not essential either."),
            Some(Necessity::Unnecessary)
        );
        assert_eq!(extract_necessity("The photo is unnecessary."), Some(Necessity::Unnecessary));
        assert_eq!(extract_necessity("Hard to say."), None);
    }

    #[test]
    fn analysis_split() {
        assert_eq!(
            split_analysis("The image is necessary because X. Verdict: Supported"),
            Some("The image is necessary because X. Verdict:")
        );
        assert_eq!(split_analysis("Refuted"), None);
    }

    #[test]
    fn refinement() {
        assert_eq!(parse_refinement("not needed", "orig"), "orig");
        assert_eq!(parse_refinement("\"Not needed.\"", "orig"), "orig");
        assert_eq!(
            parse_refinement(
                "Entering a phone number into the Google search engine can produce a home address.",
                "Google PhoneBook"
            ),
            "Entering a phone number into the Google search engine can produce a home address."
        );
    }

    fn noise() -> impl Strategy<Value = String> {
        "[a-z ,.:!?\n]{0,40}".prop_filter("no verdict token", |s| verdict_mentions(s).is_empty())
    }

    proptest! {
        #[test]
        fn single_token_is_recovered(pre in noise(), post in noise(), which in 0usize..4) {
            let token = ["Supported", "refuted", "NEI", "Not Enough Information"][which];
            let want = [Verdict::Supported, Verdict::Refuted, Verdict::Nei, Verdict::Nei][which];
            let s = format!("{pre} {token} {post}");
            prop_assert_eq!(parse_verdict(&s).unwrap(), want);
        }
    }
}
