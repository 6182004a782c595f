use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The eleven completion-task families mined from Java sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskKind {
    Identifier,
    BoolLiteral,
    StringLiteral,
    NumericLiteral,
    BoolOperator,
    ArithOperator,
    AssignOperator,
    ClosingBracket,
    EndOfLine,
    RandomSpan,
    Noise,
}

impl TaskKind {
    pub const ALL: [TaskKind; 11] = [
        TaskKind::Identifier,
        TaskKind::BoolLiteral,
        TaskKind::StringLiteral,
        TaskKind::NumericLiteral,
        TaskKind::BoolOperator,
        TaskKind::ArithOperator,
        TaskKind::AssignOperator,
        TaskKind::ClosingBracket,
        TaskKind::EndOfLine,
        TaskKind::RandomSpan,
        TaskKind::Noise,
    ];

    /// Every family mined from source text, i.e. all but `Noise`.
    pub const MINED: [TaskKind; 10] = [
        TaskKind::Identifier,
        TaskKind::BoolLiteral,
        TaskKind::StringLiteral,
        TaskKind::NumericLiteral,
        TaskKind::BoolOperator,
        TaskKind::ArithOperator,
        TaskKind::AssignOperator,
        TaskKind::ClosingBracket,
        TaskKind::EndOfLine,
        TaskKind::RandomSpan,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<TaskKind> {
        TaskKind::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Identifier => "IDENTIFIER",
            TaskKind::BoolLiteral => "BOOL_LITERAL",
            TaskKind::StringLiteral => "STRING_LITERAL",
            TaskKind::NumericLiteral => "NUMERIC_LITERAL",
            TaskKind::BoolOperator => "BOOL_OPERATOR",
            TaskKind::ArithOperator => "ARITH_OPERATOR",
            TaskKind::AssignOperator => "ASSIGN_OPERATOR",
            TaskKind::ClosingBracket => "CLOSING_BRACKET",
            TaskKind::EndOfLine => "END_OF_LINE",
            TaskKind::RandomSpan => "RANDOM_SPAN",
            TaskKind::Noise => "NOISE",
        }
    }

    /// Whether generations for this family can be right or wrong.
    pub fn has_correctness(self) -> bool {
        self != TaskKind::Noise
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase().replace('-', "_");
        TaskKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == upper || (upper == "RANDOM" && *k == TaskKind::RandomSpan))
            .ok_or_else(|| Error::Config(format!("unknown task kind '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for k in TaskKind::ALL {
            assert_eq!(TaskKind::from_code(k.code()), Some(k));
            assert_eq!(k.name().parse::<TaskKind>().unwrap(), k);
        }
        assert!(TaskKind::from_code(11).is_none());
        assert!(!TaskKind::Noise.has_correctness());
    }
}
