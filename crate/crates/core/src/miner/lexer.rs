//! Lossless Java lexer. Every byte of the input lands in exactly one token,
//! so joining token texts reproduces the source.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    NumericLiteral,
    StringLiteral,
    CharLiteral,
    BooleanLiteral,
    ArithmeticOp,
    BooleanOp,
    CompoundAssignOp,
    SimpleAssign,
    OpenBracket,
    CloseBracket,
    Semicolon,
    Comma,
    Dot,
    Comment,
    Whitespace,
    Other,
}

impl TokenKind {
    /// Whitespace and comments carry no syntax.
    pub fn is_trivia(self) -> bool {
        matches!(self, TokenKind::Whitespace | TokenKind::Comment)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JavaToken {
    pub kind: TokenKind,
    pub text: String,
    /// Byte offsets `[start, end)` into the source.
    pub start: usize,
    pub end: usize,
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const", "continue",
    "default", "do", "double", "else", "enum", "extends", "final", "finally", "float", "for", "goto", "if",
    "implements", "import", "instanceof", "int", "interface", "long", "native", "new", "null", "package",
    "private", "protected", "public", "return", "short", "static", "strictfp", "super", "switch",
    "synchronized", "this", "throw", "throws", "transient", "try", "var", "void", "volatile", "while",
];

/// Operators by descending length so the first match is the longest.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", ">=", "+=", "-=",
    "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>", "+", "-", "*", "/", "%", "=", "<", ">", "!", "~", "?", ":",
    "&", "|", "^", "@",
];

pub const COMPOUND_ASSIGN: &[&str] = &["+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="];

fn operator_kind(op: &str) -> TokenKind {
    match op {
        "+" | "-" | "*" | "/" | "%" => TokenKind::ArithmeticOp,
        "&&" | "||" | "!" => TokenKind::BooleanOp,
        "=" => TokenKind::SimpleAssign,
        _ if COMPOUND_ASSIGN.contains(&op) => TokenKind::CompoundAssignOp,
        _ => TokenKind::Other,
    }
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    tokens: Vec<JavaToken>,
    /// Open `<` of generic argument lists.
    generic_depth: usize,
}

pub fn tokenize_java(source: &str) -> Result<Vec<JavaToken>> {
    let mut lx = Lexer {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
        tokens: Vec::new(),
        generic_depth: 0,
    };
    while lx.pos < lx.bytes.len() {
        lx.next_token()?;
    }
    Ok(lx.tokens)
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

impl Lexer<'_> {
    fn peek(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.pos + ahead).copied()
    }

    fn char_at(&self, pos: usize) -> Option<char> {
        self.src[pos..].chars().next()
    }

    fn push(&mut self, kind: TokenKind, end: usize) {
        self.tokens.push(JavaToken {
            kind,
            text: self.src[self.pos..end].to_string(),
            start: self.pos,
            end,
        });
        self.pos = end;
    }

    fn error_at(&self, offset: usize, message: &str) -> Error {
        let before = &self.src[..offset];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
        Error::Lex {
            line,
            column,
            message: message.to_string(),
        }
    }

    fn last_significant(&self) -> Option<&JavaToken> {
        self.tokens.iter().rev().find(|t| !t.kind.is_trivia())
    }

    fn next_token(&mut self) -> Result<()> {
        let c = self.char_at(self.pos).unwrap();
        let start = self.pos;
        if c.is_whitespace() {
            let mut end = start;
            while let Some(ch) = self.char_at(end).filter(|ch| ch.is_whitespace()) {
                end += ch.len_utf8();
            }
            self.push(TokenKind::Whitespace, end);
        } else if self.src[start..].starts_with("//") {
            let end = self.src[start..].find('\n').map(|i| start + i).unwrap_or(self.bytes.len());
            self.push(TokenKind::Comment, end);
        } else if self.src[start..].starts_with("/*") {
            match self.src[start + 2..].find("*/") {
                Some(i) => self.push(TokenKind::Comment, start + 2 + i + 2),
                None => return Err(self.error_at(start, "unterminated block comment")),
            }
        } else if self.src[start..].starts_with("\"\"\"") {
            match self.src[start + 3..].find("\"\"\"") {
                Some(i) => self.push(TokenKind::StringLiteral, start + 3 + i + 3),
                None => return Err(self.error_at(start, "unterminated text block")),
            }
        } else if c == '"' || c == '\'' {
            let end = self.quoted(c as u8)?;
            let kind = if c == '"' {
                TokenKind::StringLiteral
            } else {
                TokenKind::CharLiteral
            };
            self.push(kind, end);
        } else if c.is_ascii_digit() || (c == '.' && self.peek(1).is_some_and(|b| b.is_ascii_digit())) {
            let end = self.number();
            self.push(TokenKind::NumericLiteral, end);
        } else if is_ident_start(c) {
            let mut end = start;
            while let Some(ch) = self.char_at(end).filter(|&ch| is_ident_part(ch)) {
                end += ch.len_utf8();
            }
            let word = &self.src[start..end];
            let kind = if word == "true" || word == "false" {
                TokenKind::BooleanLiteral
            } else if KEYWORDS.contains(&word) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            self.push(kind, end);
        } else {
            match c {
                '(' | '{' | '[' => {
                    if c == '{' {
                        self.generic_depth = 0;
                    }
                    self.push(TokenKind::OpenBracket, start + 1);
                }
                ')' | '}' | ']' => self.push(TokenKind::CloseBracket, start + 1),
                ';' => {
                    self.generic_depth = 0;
                    self.push(TokenKind::Semicolon, start + 1);
                }
                ',' => self.push(TokenKind::Comma, start + 1),
                '.' if !self.src[start..].starts_with("...") => self.push(TokenKind::Dot, start + 1),
                _ => self.operator(),
            }
        }
        Ok(())
    }

    /// End offset of a quoted literal starting at `self.pos`.
    fn quoted(&self, quote: u8) -> Result<usize> {
        let mut i = self.pos + 1;
        while i < self.bytes.len() {
            match self.bytes[i] {
                b'\\' => i += 2,
                b'\n' => break,
                b if b == quote => return Ok(i + 1),
                _ => i += 1,
            }
        }
        let what = if quote == b'"' { "string" } else { "character" };
        Err(self.error_at(self.pos, &format!("unterminated {what} literal")))
    }

    fn number(&self) -> usize {
        let b = self.bytes;
        let mut i = self.pos;
        let digits = |mut i: usize, ok: fn(u8) -> bool| {
            while i < b.len() && (ok(b[i]) || b[i] == b'_') {
                i += 1;
            }
            i
        };
        if b[i] == b'0' && matches!(b.get(i + 1), Some(b'x' | b'X')) {
            i = digits(i + 2, |c| c.is_ascii_hexdigit());
        } else if b[i] == b'0' && matches!(b.get(i + 1), Some(b'b' | b'B')) {
            i = digits(i + 2, |c| c == b'0' || c == b'1');
        } else {
            i = digits(i, |c| c.is_ascii_digit());
            if b.get(i) == Some(&b'.') && b.get(i + 1).is_some_and(|c| c.is_ascii_digit()) {
                i = digits(i + 1, |c| c.is_ascii_digit());
            } else if b.get(i) == Some(&b'.') && !b.get(i + 1).is_some_and(|c| c.is_ascii_alphabetic() || *c == b'.') {
                i += 1;
            }
            if matches!(b.get(i), Some(b'e' | b'E')) {
                let mut j = i + 1;
                if matches!(b.get(j), Some(b'+' | b'-')) {
                    j += 1;
                }
                if b.get(j).is_some_and(|c| c.is_ascii_digit()) {
                    i = digits(j, |c| c.is_ascii_digit());
                }
            }
        }
        if matches!(b.get(i), Some(b'l' | b'L' | b'f' | b'F' | b'd' | b'D')) {
            i += 1;
        }
        i
    }

    /// Whether the `<` at `self.pos` opens a generic argument list.
    fn opens_generic(&self) -> bool {
        let prev_ok = self
            .last_significant()
            .is_some_and(|t| t.kind == TokenKind::Identifier || t.kind == TokenKind::Dot);
        if !prev_ok {
            return false;
        }
        let mut depth = 0usize;
        let mut prev = 0u8;
        for &b in &self.bytes[self.pos..] {
            match b {
                b'<' => depth += 1,
                b'>' => {
                    depth -= 1;
                    if depth == 0 {
                        return true;
                    }
                }
                b'&' if prev == b'&' => return false,
                b if b.is_ascii_alphanumeric() || b" \t\r\n_$.,?[]&".contains(&b) => {}
                _ => return false,
            }
            prev = b;
        }
        false
    }

    fn operator(&mut self) {
        let rest = &self.src[self.pos..];
        if rest.starts_with('<') && self.opens_generic() {
            self.generic_depth += 1;
            return self.push(TokenKind::Other, self.pos + 1);
        }
        if rest.starts_with('>') && self.generic_depth > 0 {
            // Inside type arguments `>>` and `>>>` close several lists.
            self.generic_depth -= 1;
            return self.push(TokenKind::Other, self.pos + 1);
        }
        match OPERATORS.iter().find(|op| rest.starts_with(**op)) {
            Some(op) => self.push(operator_kind(op), self.pos + op.len()),
            None => {
                let len = self.char_at(self.pos).unwrap().len_utf8();
                self.push(TokenKind::Other, self.pos + len);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize_java(src)
            .unwrap()
            .into_iter()
            .filter(|t| t.kind != TokenKind::Whitespace)
            .map(|t| t.kind)
            .collect()
    }

    fn texts(src: &str) -> Vec<String> {
        tokenize_java(src)
            .unwrap()
            .into_iter()
            .filter(|t| !t.kind.is_trivia())
            .map(|t| t.text)
            .collect()
    }

    #[test]
    fn simple_declaration() {
        use TokenKind::*;
        assert_eq!(
            kinds("int x = 3 + 4;"),
            vec![Keyword, Identifier, SimpleAssign, NumericLiteral, ArithmeticOp, NumericLiteral, Semicolon]
        );
    }

    #[test]
    fn compound_assign_and_string() {
        let toks = tokenize_java("s += \"a\";").unwrap();
        assert!(toks.iter().any(|t| t.kind == TokenKind::CompoundAssignOp && t.text == "+="));
        assert!(toks.iter().any(|t| t.kind == TokenKind::StringLiteral && t.text == "\"a\""));
    }

    #[test]
    fn unterminated_string_reports_position() {
        match tokenize_java("int a;\n  s = \"abc") {
            Err(Error::Lex { line, column, .. }) => assert_eq!((line, column), (2, 7)),
            other => panic!("{other:?}"),
        }
        assert!(tokenize_java("\"abc").is_err());
        assert!(tokenize_java("/* open").is_err());
        assert!(tokenize_java("'a").is_err());
    }

    #[test]
    fn escapes_inside_literals() {
        assert_eq!(texts(r#"x = "a\"b\\" + '\'';"#), vec!["x", "=", r#""a\"b\\""#, "+", r"'\''", ";"]);
    }

    #[test]
    fn nested_generics_split_shift() {
        let t = texts("Map<String, List<Integer>> m = new HashMap<>();");
        assert_eq!(
            t,
            vec!["Map", "<", "String", ",", "List", "<", "Integer", ">", ">", "m", "=", "new", "HashMap", "<", ">", "(", ")", ";"]
        );
        let t = texts("List<List<List<A>>> z;");
        assert_eq!(t.iter().filter(|s| *s == ">").count(), 3);
    }

    #[test]
    fn shifts_and_comparisons_outside_generics() {
        assert_eq!(texts("a = b >> 2;"), vec!["a", "=", "b", ">>", "2", ";"]);
        assert_eq!(texts("if (i < n && j > m) x >>>= 1;")[3], "<");
        assert!(texts("if (i < n && j > m) x >>>= 1;").contains(&">>>=".to_string()));
        assert!(texts("for (int i = 0; i < n; i++) {}").contains(&"<".to_string()));
    }

    #[test]
    fn numbers() {
        for n in ["0x1F", "1_000", "3.14", "2e10", "1.5e-3f", "10L", "0b101", ".5"] {
            let t = tokenize_java(n).unwrap();
            assert_eq!(t.len(), 1, "{n}");
            assert_eq!(t[0].kind, TokenKind::NumericLiteral, "{n}");
        }
        assert_eq!(texts("a.b(1).c"), vec!["a", ".", "b", "(", "1", ")", ".", "c"]);
    }

    #[test]
    fn comments_and_booleans() {
        use TokenKind::*;
        assert_eq!(
            kinds("flag = true; // done\n/* x */ ok = !flag || false;"),
            vec![
                Identifier, SimpleAssign, BooleanLiteral, Semicolon, Comment, Comment, Identifier, SimpleAssign,
                BooleanOp, Identifier, BooleanOp, BooleanLiteral, Semicolon
            ]
        );
    }

    #[test]
    fn brackets() {
        let toks = tokenize_java("f(a[0]) { }").unwrap();
        let opens = toks.iter().filter(|t| t.kind == TokenKind::OpenBracket).count();
        let closes = toks.iter().filter(|t| t.kind == TokenKind::CloseBracket).count();
        assert_eq!((opens, closes), (3, 3));
    }

    proptest! {
        #[test]
        fn lexing_is_lossless(src in "[ -~\n]{0,200}") {
            if let Ok(toks) = tokenize_java(&src) {
                let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
                prop_assert_eq!(joined, src.clone());
                for w in toks.windows(2) {
                    prop_assert_eq!(w[0].end, w[1].start);
                }
            }
        }

        #[test]
        fn unicode_is_lossless(src in "\\PC{0,80}") {
            let src = src.replace(['"', '\'', '/'], " ");
            let toks = tokenize_java(&src).unwrap();
            let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
            prop_assert_eq!(joined, src);
        }
    }
}
