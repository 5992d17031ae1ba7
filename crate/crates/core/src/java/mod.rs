//! Java front end: lexing, method-level parsing and lexical normalization.

mod ast;
mod lexer;
mod normalize;
mod parser;

pub use ast::{is_label, AstNode, LABELS};
pub use lexer::{lex, Token, TokenKind, KEYWORDS};
pub use normalize::{normalize_code_tokens, normalize_comment, normalize_words, split_identifier, NormTokenSeq, NUM_TAG, STR_TAG};
pub use parser::parse_method;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JavaError {
    #[error("lex error at byte {offset}: {reason}")]
    Lex { offset: usize, reason: &'static str },
    #[error("parse error at token {index} (found {}): expected one of {}", found.as_deref().unwrap_or("end of input"), expected.join(" "))]
    Parse { index: usize, expected: Vec<String>, found: Option<String> },
    #[error("unsupported construct `{name}` at token {index}")]
    Unsupported { name: &'static str, index: usize },
}

impl JavaError {
    /// Short machine-friendly reason used in skip manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            JavaError::Lex { .. } => "LexError",
            JavaError::Parse { .. } => "ParseError",
            JavaError::Unsupported { .. } => "UnsupportedConstruct",
        }
    }
}

/// Lexes and parses a single method in one go.
pub fn parse_source(source: &str) -> Result<(Vec<Token>, AstNode), JavaError> {
    let tokens = lex(source)?;
    let root = parse_method(&tokens)?;
    Ok((tokens, root))
}
