//! Prompt rendering for the two prompting styles, plus extraction of the
//! final answer from a model response.
//!
//! A template file holds the system part, a line reading `=== user ===`, and
//! the user part. `{{context}}` in the system part expands to one
//! `<source> => <translation>` line per context pair; `{{target}}` in the user
//! part expands to the held-out source phrase.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::LeaveOneOutSplit;
use crate::metrics::tokenize;

pub const USER_MARKER: &str = "=== user ===";
pub const CONTEXT_PLACEHOLDER: &str = "{{context}}";
pub const TARGET_PLACEHOLDER: &str = "{{target}}";
pub const CONTEXT_SEPARATOR: &str = " => ";

const BUILTIN_CHAIN: &str = include_str!("../prompts/chain_of_reasoning.txt");
const BUILTIN_DIRECT: &str = include_str!("../prompts/direct.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot build a prompt with an empty context")]
    EmptyContext,
    #[error("prompt for phrase {target_id} would reveal its reference translation")]
    ReferenceLeak { target_id: usize },
    #[error("template {name}: {reason}")]
    Template { name: String, reason: String },
    #[error("cannot read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("response contains no text")]
    EmptyResponse,
    #[error("unknown prompt style `{0}` (expected chain-of-reasoning or direct)")]
    UnknownStyle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    ChainOfReasoning,
    Direct,
}

impl PromptStyle {
    pub const ALL: [PromptStyle; 2] = [PromptStyle::ChainOfReasoning, PromptStyle::Direct];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptStyle::ChainOfReasoning => "chain-of-reasoning",
            PromptStyle::Direct => "direct",
        }
    }

    /// File name of the style's template inside a prompt directory.
    pub fn template_file(self) -> &'static str {
        match self {
            PromptStyle::ChainOfReasoning => "chain_of_reasoning.txt",
            PromptStyle::Direct => "direct.txt",
        }
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "chain-of-reasoning" | "chain" | "cor" => Ok(PromptStyle::ChainOfReasoning),
            "direct" => Ok(PromptStyle::Direct),
            other => Err(PromptError::UnknownStyle(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub system_message: String,
    pub user_message: String,
    pub style: PromptStyle,
    pub target_id: usize,
    /// The held-out source phrase, as substituted into the user message.
    pub target_source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    system: String,
    user: String,
}

impl Template {
    pub fn parse(name: &str, text: &str) -> Result<Self, PromptError> {
        let bad = |reason: &str| PromptError::Template {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        let text = text.replace("\r\n", "\n");
        let mut system = Vec::new();
        let mut user = Vec::new();
        let mut seen_marker = false;
        for line in text.lines() {
            if line.trim() == USER_MARKER {
                if seen_marker {
                    return Err(bad("more than one `=== user ===` line"));
                }
                seen_marker = true;
            } else if seen_marker {
                user.push(line);
            } else {
                system.push(line);
            }
        }
        if !seen_marker {
            return Err(bad("missing `=== user ===` line"));
        }
        let system = system.join("\n").trim().to_string();
        let user = user.join("\n").trim().to_string();
        if system.matches(CONTEXT_PLACEHOLDER).count() != 1 {
            return Err(bad("system part must contain {{context}} exactly once"));
        }
        if user.matches(TARGET_PLACEHOLDER).count() != 1 {
            return Err(bad("user part must contain {{target}} exactly once"));
        }
        if system.contains(TARGET_PLACEHOLDER) || user.contains(CONTEXT_PLACEHOLDER) {
            return Err(bad("{{target}} belongs in the user part, {{context}} in the system part"));
        }
        Ok(Self { system, user })
    }
}

/// The pair of templates used for a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    chain: Template,
    direct: Template,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            chain: Template::parse("chain_of_reasoning.txt", BUILTIN_CHAIN)
                .expect("builtin template"),
            direct: Template::parse("direct.txt", BUILTIN_DIRECT).expect("builtin template"),
        }
    }

    /// Reads `chain_of_reasoning.txt` and `direct.txt` from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let load = |style: PromptStyle| {
            let path = dir.as_ref().join(style.template_file());
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Template::parse(&path.display().to_string(), &text)
        };
        Ok(Self {
            chain: load(PromptStyle::ChainOfReasoning)?,
            direct: load(PromptStyle::Direct)?,
        })
    }

    pub fn get(&self, style: PromptStyle) -> &Template {
        match style {
            PromptStyle::ChainOfReasoning => &self.chain,
            PromptStyle::Direct => &self.direct,
        }
    }

    /// Short content hash of both templates, recorded with results.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in [&self.chain, &self.direct] {
            h.update(t.system.as_bytes());
            h.update([0u8]);
            h.update(t.user.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    pub fn render(
        &self,
        style: PromptStyle,
        split: &LeaveOneOutSplit,
    ) -> Result<RenderedPrompt, PromptError> {
        if split.context.is_empty() {
            return Err(PromptError::EmptyContext);
        }
        let template = self.get(style);
        let context = split
            .context
            .iter()
            .map(|p| {
                format!(
                    "{}{CONTEXT_SEPARATOR}{}",
                    single_line(&p.source_text),
                    single_line(&p.reference_translation)
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        let target_source = single_line(&split.target.source_text);
        let prompt = RenderedPrompt {
            system_message: template.system.replace(CONTEXT_PLACEHOLDER, &context),
            user_message: template.user.replace(TARGET_PLACEHOLDER, &target_source),
            style,
            target_id: split.target.id,
            target_source,
        };
        let reference = &split.target.reference_translation;
        if contains_reference(&prompt.system_message, reference)
            || contains_reference(&prompt.user_message, reference)
        {
            return Err(PromptError::ReferenceLeak {
                target_id: split.target.id,
            });
        }
        Ok(prompt)
    }
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders with the builtin templates.
pub fn build_prompt(style: PromptStyle, split: &LeaveOneOutSplit) -> Result<RenderedPrompt, PromptError> {
    PromptTemplates::builtin().render(style, split)
}

/// True when some line of `message` contains the tokens of `reference` as a
/// contiguous run (case- and punctuation-insensitive). References of fewer
/// than two tokens are never reported: a single word shows up in unrelated
/// context lines all the time.
pub fn contains_reference(message: &str, reference: &str) -> bool {
    let needle = tokenize(reference);
    if needle.len() < 2 {
        return false;
    }
    message.lines().any(|line| {
        tokenize(line)
            .tokens()
            .windows(needle.len())
            .any(|w| w == needle.tokens())
    })
}

/// Context pairs parsed back out of a rendered system message.
pub fn parse_context_lines(system_message: &str) -> Vec<(&str, &str)> {
    system_message
        .lines()
        .filter_map(|l| l.split_once(CONTEXT_SEPARATOR))
        .map(|(s, t)| (s.trim(), t.trim()))
        .collect()
}

/// Pulls the answer out of a model response: the last line that still has
/// text after removing markdown emphasis, surrounding quotes and a leading
/// `Translation:`-style label.
pub fn extract_candidate(raw_response: &str) -> Result<String, PromptError> {
    let lines: Vec<&str> = raw_response
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    let last = lines.last().ok_or(PromptError::EmptyResponse)?;
    Ok(lines
        .iter()
        .rev()
        .map(|l| clean_line(l))
        .find(|l| !l.is_empty())
        .unwrap_or_else(|| last.to_string()))
}

const LABELS: [&str; 5] = [
    "final english translation",
    "english translation",
    "final translation",
    "translation",
    "final answer",
];

fn clean_line(line: &str) -> String {
    let mut s = strip_decoration(line.trim_start_matches(['#', '>', '-', '*', ' ']));
    let lower = s.to_lowercase();
    for label in LABELS {
        if let Some(rest) = lower.strip_prefix(label) {
            if let Some(after) = rest.trim_start().strip_prefix(':') {
                let cut = s.len() - after.len();
                s = strip_decoration(&s[cut..]);
                break;
            }
        }
    }
    s
}

fn strip_decoration(s: &str) -> String {
    const EMPHASIS: [char; 3] = ['*', '_', '`'];
    const QUOTES: [(char, char); 4] = [
        ('"', '"'),
        ('\'', '\''),
        ('\u{201c}', '\u{201d}'),
        ('\u{2018}', '\u{2019}'),
    ];
    let mut s = s.trim();
    loop {
        let before = s;
        s = s.trim_matches(EMPHASIS).trim();
        for (open, close) in QUOTES {
            if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim();
            }
        }
        if s == before {
            return s.to_string();
        }
    }
}
