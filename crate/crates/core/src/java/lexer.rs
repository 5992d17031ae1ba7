//! Tokenizer for Java method source.
//!
//! Comments and whitespace are discarded; every other byte of the input ends
//! up inside exactly one token, so `&source[tok.span.0..tok.span.1] == tok.text`.

use super::JavaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    Identifier,
    Keyword,
    NumberLiteral,
    StringLiteral,
    CharLiteral,
    BooleanLiteral,
    NullLiteral,
    Operator,
    Separator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offsets `[start, end)` into the source.
    pub span: (usize, usize),
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }
}

pub const KEYWORDS: &[&str] = &[
    "abstract",
    "assert",
    "boolean",
    "break",
    "byte",
    "case",
    "catch",
    "char",
    "class",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extends",
    "final",
    "finally",
    "float",
    "for",
    "goto",
    "if",
    "implements",
    "import",
    "instanceof",
    "int",
    "interface",
    "long",
    "native",
    "new",
    "package",
    "private",
    "protected",
    "public",
    "return",
    "short",
    "static",
    "strictfp",
    "super",
    "switch",
    "synchronized",
    "this",
    "throw",
    "throws",
    "transient",
    "try",
    "void",
    "volatile",
    "while",
];

// Longest first so that greedy matching picks e.g. `>>>=` over `>>`.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "&=", "|=", "^=", "%=",
    "<<", ">>", "=", ">", "<", "!", "~", "?", ":", "+", "-", "*", "/", "&", "|", "^", "%",
];

const SEPARATORS: &[u8] = b"(){}[];,.@";

pub fn lex(source: &str) -> Result<Vec<Token>, JavaError> {
    Lexer { src: source, bytes: source.as_bytes(), pos: 0 }.run()
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn run(mut self) -> Result<Vec<Token>, JavaError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            if self.pos >= self.bytes.len() {
                return Ok(out);
            }
            out.push(self.next_token()?);
        }
    }

    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn skip_trivia(&mut self) -> Result<(), JavaError> {
        while let Some(b) = self.peek(0) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'/' && self.peek(1) == Some(b'/') {
                while let Some(c) = self.peek(0) {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b == b'/' && self.peek(1) == Some(b'*') {
                let start = self.pos;
                match self.src[self.pos + 2..].find("*/") {
                    Some(end) => self.pos += 2 + end + 2,
                    None => return Err(JavaError::Lex { offset: start, reason: "unterminated comment" }),
                }
            } else {
                let ch = self.src[self.pos..].chars().next().unwrap();
                if ch.is_whitespace() {
                    self.pos += ch.len_utf8();
                } else {
                    break;
                }
            }
        }
        Ok(())
    }

    fn token(&self, kind: TokenKind, start: usize) -> Token {
        Token { kind, text: self.src[start..self.pos].to_string(), span: (start, self.pos) }
    }

    fn next_token(&mut self) -> Result<Token, JavaError> {
        let start = self.pos;
        let ch = self.src[start..].chars().next().unwrap();
        if is_ident_start(ch) {
            return Ok(self.identifier());
        }
        let b = self.bytes[start];
        if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit())) {
            return self.number();
        }
        if b == b'"' {
            return self.string();
        }
        if b == b'\'' {
            self.quoted(b'\'', start)?;
            return Ok(self.token(TokenKind::CharLiteral, start));
        }
        if let Some(op) = OPERATORS.iter().find(|op| self.src[start..].starts_with(**op)) {
            // `...` is a separator in the JLS but behaves like one here either way.
            self.pos += op.len();
            let kind = if *op == "..." || *op == "::" { TokenKind::Separator } else { TokenKind::Operator };
            return Ok(self.token(kind, start));
        }
        if SEPARATORS.contains(&b) {
            self.pos += 1;
            return Ok(self.token(TokenKind::Separator, start));
        }
        Err(JavaError::Lex { offset: start, reason: "illegal character" })
    }

    fn identifier(&mut self) -> Token {
        let start = self.pos;
        for ch in self.src[start..].chars() {
            if is_ident_part(ch) {
                self.pos += ch.len_utf8();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        let kind = match text {
            "true" | "false" => TokenKind::BooleanLiteral,
            "null" => TokenKind::NullLiteral,
            t if KEYWORDS.contains(&t) => TokenKind::Keyword,
            _ => TokenKind::Identifier,
        };
        self.token(kind, start)
    }

    fn number(&mut self) -> Result<Token, JavaError> {
        let start = self.pos;
        let hex = self.peek(0) == Some(b'0') && matches!(self.peek(1), Some(b'x' | b'X'));
        let bin = self.peek(0) == Some(b'0') && matches!(self.peek(1), Some(b'b' | b'B'));
        if hex || bin {
            self.pos += 2;
        }
        while let Some(c) = self.peek(0) {
            let exp_sign = matches!(c, b'+' | b'-')
                && matches!(self.bytes[self.pos - 1], b'e' | b'E' | b'p' | b'P')
                && (!hex || matches!(self.bytes[self.pos - 1], b'p' | b'P'));
            let dot = c == b'.' && self.peek(1).is_none_or(|n| !n.is_ascii_alphabetic() || matches!(n, b'e' | b'E' | b'f' | b'F' | b'd' | b'D'));
            if c.is_ascii_alphanumeric() || c == b'_' || exp_sign || (dot && !self.src[start..self.pos].contains('.')) {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(self.token(TokenKind::NumberLiteral, start))
    }

    fn string(&mut self) -> Result<Token, JavaError> {
        let start = self.pos;
        if self.src[start..].starts_with("\"\"\"") {
            match self.src[start + 3..].find("\"\"\"") {
                Some(end) => {
                    self.pos = start + 3 + end + 3;
                    return Ok(self.token(TokenKind::StringLiteral, start));
                }
                None => return Err(JavaError::Lex { offset: start, reason: "unterminated text block" }),
            }
        }
        self.quoted(b'"', start)?;
        Ok(self.token(TokenKind::StringLiteral, start))
    }

    fn quoted(&mut self, quote: u8, start: usize) -> Result<(), JavaError> {
        self.pos += 1;
        while let Some(c) = self.peek(0) {
            match c {
                b'\\' => self.pos += 2,
                b'\n' => break,
                c if c == quote => {
                    self.pos += 1;
                    return Ok(());
                }
                _ => self.pos += 1,
            }
        }
        let reason = if quote == b'"' { "unterminated string literal" } else { "unterminated char literal" };
        self.pos = self.pos.min(self.bytes.len());
        Err(JavaError::Lex { offset: start, reason })
    }
}

fn is_ident_start(ch: char) -> bool {
    ch == '_' || ch == '$' || ch.is_alphabetic()
}

fn is_ident_part(ch: char) -> bool {
    is_ident_start(ch) || ch.is_alphanumeric()
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn kinds(src: &str) -> Vec<(String, TokenKind)> {
        lex(src).unwrap().into_iter().map(|t| (t.text, t.kind)).collect()
    }

    #[test]
    fn return_statement() {
        assert_eq!(kinds("return a;"), vec![("return".into(), Keyword), ("a".into(), Identifier), (";".into(), Separator)]);
    }

    #[test]
    fn number_literal() {
        let toks = kinds("x = 10;");
        assert_eq!(toks[2], ("10".into(), NumberLiteral));
        assert_eq!(toks.len(), 4);
    }

    #[test]
    fn string_literal() {
        let toks = kinds("s = \"hi\";");
        assert_eq!(toks[2], ("\"hi\"".into(), StringLiteral));
    }

    #[test]
    fn numeric_forms() {
        for lit in ["0x1F", "1_000L", "3.14f", "1e-9", ".5", "0b1010", "10.", "0x1.8p3"] {
            let toks = kinds(lit);
            assert_eq!(toks, vec![(lit.to_string(), NumberLiteral)], "{lit}");
        }
        // member access on an int-like token is not swallowed into the number
        assert_eq!(kinds("a[0].b").len(), 6);
    }

    #[test]
    fn greedy_operators() {
        let toks: Vec<_> = kinds("a >>>= b >> c -> d").into_iter().map(|t| t.0).collect();
        assert_eq!(toks, ["a", ">>>=", "b", ">>", "c", "->", "d"]);
    }

    #[test]
    fn comments_are_stripped() {
        let toks = kinds("int /* c */ x; // tail\n y");
        assert_eq!(toks.len(), 4);
    }

    #[test]
    fn char_and_escapes() {
        let toks = kinds(r"c = '\''; s = 'x'; t = '\\';");
        assert_eq!(toks[2], (r"'\''".into(), CharLiteral));
        assert_eq!(toks[10], (r"'\\'".into(), CharLiteral));
    }

    #[test]
    fn literal_keywords() {
        assert_eq!(kinds("true null")[0].1, BooleanLiteral);
        assert_eq!(kinds("true null")[1].1, NullLiteral);
    }

    #[test]
    fn unterminated_string() {
        assert_eq!(lex("s = \"abc").unwrap_err(), JavaError::Lex { offset: 4, reason: "unterminated string literal" });
        assert!(matches!(lex("c = 'a"), Err(JavaError::Lex { offset: 4, .. })));
    }

    #[test]
    fn illegal_character() {
        assert_eq!(lex("a # b").unwrap_err(), JavaError::Lex { offset: 2, reason: "illegal character" });
    }

    #[test]
    fn spans_match_text() {
        let src = "public int add(int a, int b) { return a + b; }";
        for t in lex(src).unwrap() {
            assert_eq!(&src[t.span.0..t.span.1], t.text);
            assert!(t.span.0 < t.span.1);
        }
    }
}
