use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexer::{JavaToken, TokenKind};
use super::TaskKind;

/// A masked target: token indices `[start, end)` into the full token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn single(i: usize) -> Self {
        Span { start: i, end: i + 1 }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// Byte range covered in the source.
    pub fn bytes(&self, tokens: &[JavaToken]) -> (usize, usize) {
        (tokens[self.start].start, tokens[self.end - 1].end)
    }
}

/// Bounds on significant tokens per random span.
pub const RANDOM_SPAN_MIN: usize = 3;
pub const RANDOM_SPAN_MAX: usize = 10;
/// One random span per this many significant tokens, at least one per file.
pub const RANDOM_SPAN_DENSITY: usize = 20;

fn is_operand_end(t: &JavaToken) -> bool {
    match t.kind {
        TokenKind::Identifier
        | TokenKind::NumericLiteral
        | TokenKind::StringLiteral
        | TokenKind::CharLiteral
        | TokenKind::BooleanLiteral => true,
        TokenKind::CloseBracket => t.text == ")" || t.text == "]",
        TokenKind::Keyword => t.text == "this" || t.text == "null",
        _ => false,
    }
}

fn is_numeric(text: &str) -> bool {
    text.starts_with(|c: char| c.is_ascii_digit() || c == '.')
}

/// Target spans of `kind` in order of appearance. `seed` only affects `RandomSpan`.
pub fn extract_targets(tokens: &[JavaToken], kind: TaskKind, seed: u64) -> Vec<Span> {
    let sig: Vec<usize> = (0..tokens.len()).filter(|&i| !tokens[i].kind.is_trivia()).collect();
    let pick = |pred: &dyn Fn(&JavaToken) -> bool| -> Vec<Span> {
        sig.iter().copied().filter(|&i| pred(&tokens[i])).map(Span::single).collect()
    };
    match kind {
        TaskKind::Identifier => pick(&|t| t.kind == TokenKind::Identifier),
        TaskKind::BoolLiteral => pick(&|t| t.kind == TokenKind::BooleanLiteral),
        TaskKind::StringLiteral => pick(&|t| t.kind == TokenKind::StringLiteral),
        TaskKind::NumericLiteral => pick(&|t| t.kind == TokenKind::NumericLiteral && is_numeric(&t.text)),
        TaskKind::BoolOperator => pick(&|t| t.kind == TokenKind::BooleanOp),
        TaskKind::AssignOperator => pick(&|t| t.kind == TokenKind::CompoundAssignOp),
        TaskKind::ClosingBracket => pick(&|t| t.kind == TokenKind::CloseBracket),
        TaskKind::EndOfLine => pick(&|t| t.kind == TokenKind::Semicolon),
        TaskKind::ArithOperator => sig
            .iter()
            .enumerate()
            .filter(|&(n, &i)| tokens[i].kind == TokenKind::ArithmeticOp && n > 0 && is_operand_end(&tokens[sig[n - 1]]))
            .map(|(_, &i)| Span::single(i))
            .collect(),
        TaskKind::RandomSpan => random_spans(&sig, seed),
        TaskKind::Noise => Vec::new(),
    }
}

fn random_spans(sig: &[usize], seed: u64) -> Vec<Span> {
    if sig.len() < RANDOM_SPAN_MIN {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (sig.len() / RANDOM_SPAN_DENSITY).max(1);
    let mut out: Vec<Span> = (0..count)
        .map(|_| {
            let len = rng.gen_range(RANDOM_SPAN_MIN..=RANDOM_SPAN_MAX.min(sig.len()));
            let first = rng.gen_range(0..=sig.len() - len);
            Span {
                start: sig[first],
                end: sig[first + len - 1] + 1,
            }
        })
        .collect();
    out.sort_by_key(|s| (s.start, s.end));
    out.dedup();
    out
}

/// Significant (non-whitespace, non-comment) tokens inside `span`.
pub fn significant_len(tokens: &[JavaToken], span: Span) -> usize {
    tokens[span.start..span.end].iter().filter(|t| !t.kind.is_trivia()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::tokenize_java;

    fn texts(src: &str, kind: TaskKind) -> Vec<String> {
        let toks = tokenize_java(src).unwrap();
        extract_targets(&toks, kind, 0)
            .into_iter()
            .map(|s| toks[s.start..s.end].iter().map(|t| t.text.as_str()).collect())
            .collect()
    }

    #[test]
    fn token_local_families() {
        assert_eq!(texts("int x = 3;", TaskKind::EndOfLine), vec![";"]);
        assert_eq!(texts("flag = true;", TaskKind::BoolLiteral), vec!["true"]);
        assert_eq!(texts("f(a)", TaskKind::ClosingBracket), vec![")"]);
        assert_eq!(texts("s = \"hi\" + t;", TaskKind::StringLiteral), vec!["\"hi\""]);
        assert_eq!(texts("x = 0x1F + 2.5;", TaskKind::NumericLiteral), vec!["0x1F", "2.5"]);
        assert_eq!(texts("a += 1; b >>>= 2; c = d;", TaskKind::AssignOperator), vec!["+=", ">>>="]);
        assert_eq!(texts("ok = !a && b || c;", TaskKind::BoolOperator), vec!["!", "&&", "||"]);
        assert_eq!(texts("int y = x;", TaskKind::Identifier), vec!["y", "x"]);
    }

    #[test]
    fn arithmetic_only_in_binary_position() {
        assert_eq!(texts("x = -a * (b - 1) % c;", TaskKind::ArithOperator), vec!["*", "-", "%"]);
        assert!(texts("import java.util.*;", TaskKind::ArithOperator).is_empty());
    }

    #[test]
    fn random_spans_are_bounded_and_seeded() {
        let src = "int a = 1; int b = a + 2; String s = \"x\"; if (a < b) { b += a; } return b;".repeat(4);
        let toks = tokenize_java(&src).unwrap();
        let a = extract_targets(&toks, TaskKind::RandomSpan, 5);
        assert_eq!(a, extract_targets(&toks, TaskKind::RandomSpan, 5));
        assert!(!a.is_empty());
        for s in &a {
            let n = significant_len(&toks, *s);
            assert!((RANDOM_SPAN_MIN..=RANDOM_SPAN_MAX).contains(&n), "{n}");
            assert!(!toks[s.start].kind.is_trivia() && !toks[s.end - 1].kind.is_trivia());
        }
        assert!(extract_targets(&toks, TaskKind::Noise, 0).is_empty());
    }
}
