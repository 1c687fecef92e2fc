//! Offline translators used for pipeline tests.

use std::collections::HashMap;

use crate::prompting::{parse_context_lines, RenderedPrompt};

fn normalize(token: &str) -> String {
    token
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

/// Word glossary from the context pairs whose source side is a single
/// token: that token maps to the pair's translation (minus final sentence
/// punctuation). The first occurrence wins.
pub fn induce_glossary<'a, I>(context: I) -> HashMap<String, String>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut glossary = HashMap::new();
    for (source, target) in context {
        let mut tokens = source.split_whitespace();
        let (Some(only), None) = (tokens.next(), tokens.next()) else {
            continue;
        };
        let key = normalize(only);
        let value = target.trim().trim_end_matches(['.', '!', '?']).trim();
        if key.is_empty() || value.is_empty() {
            continue;
        }
        glossary.entry(key).or_insert_with(|| value.to_string());
    }
    glossary
}

/// Word-by-word substitution; unknown words are copied through unchanged.
pub fn gloss_translate(source: &str, glossary: &HashMap<String, String>) -> String {
    source
        .split_whitespace()
        .map(|tok| glossary.get(&normalize(tok)).map_or(tok, String::as_str))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(super) fn gloss_response(prompt: &RenderedPrompt) -> String {
    let glossary = induce_glossary(parse_context_lines(&prompt.system_message));
    gloss_translate(&prompt.target_source, &glossary)
}
