use super::lexer::{Token, TokenKind};

pub const NUM_TAG: &str = "<num_>";
pub const STR_TAG: &str = "<str_>";

/// Lowercased lexical sequence: identifiers split into sub-words and
/// literal values replaced by abstraction tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NormTokenSeq(pub Vec<String>);

impl NormTokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

/// Splits an identifier at camel-case humps, underscores and letter-to-digit
/// boundaries, returning lowercased parts.
///
/// `HTMLParser` splits as `html`, `parser`: an uppercase run followed by a
/// lowercase letter leaves its last capital to the next word.
pub fn split_identifier(name: &str) -> Vec<String> {
    let chars: Vec<char> = name.chars().collect();
    let mut parts = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c == '_' {
            if !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            continue;
        }
        if let Some(&prev) = i.checked_sub(1).and_then(|j| chars.get(j)) {
            let next = chars.get(i + 1).copied();
            let boundary = (c.is_uppercase() && (prev.is_lowercase() || prev.is_ascii_digit()))
                || (c.is_uppercase() && prev.is_uppercase() && next.is_some_and(char::is_lowercase))
                || (c.is_ascii_digit() && prev.is_alphabetic());
            if boundary && !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
        }
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        parts.push(current);
    }
    if parts.is_empty() {
        parts.push(name.to_lowercase());
    }
    parts
}

pub fn normalize_code_tokens(tokens: &[Token]) -> NormTokenSeq {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match tok.kind {
            TokenKind::Identifier => out.extend(split_identifier(&tok.text)),
            TokenKind::NumberLiteral => out.push(NUM_TAG.to_string()),
            TokenKind::StringLiteral | TokenKind::CharLiteral => out.push(STR_TAG.to_string()),
            _ => out.push(tok.text.to_lowercase()),
        }
    }
    NormTokenSeq(out)
}

/// Word-level normalization of already-textual tokens. Tags pass through,
/// identifier-shaped words are split, quoted words become [`STR_TAG`].
/// Applied to the output of [`normalize_code_tokens`] it is the identity.
pub fn normalize_words<S: AsRef<str>>(words: &[S]) -> NormTokenSeq {
    let mut out = Vec::with_capacity(words.len());
    for w in words {
        let w = w.as_ref();
        if w == NUM_TAG || w == STR_TAG {
            out.push(w.to_string());
        } else if w.starts_with('"') || w.starts_with('\'') {
            out.push(STR_TAG.to_string());
        } else if !w.is_empty() && w.chars().all(|c| c == '_' || c == '$' || c.is_alphanumeric()) {
            out.extend(split_identifier(w));
        } else if !w.is_empty() {
            out.push(w.to_lowercase());
        }
    }
    NormTokenSeq(out)
}

/// Tokenizes a natural-language comment: lowercase, words are maximal
/// alphanumeric runs, every other visible character is its own token.
pub fn normalize_comment(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}
