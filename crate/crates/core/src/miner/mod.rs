//! Java completion-task mining: lexing, target extraction, fill-in-the-middle
//! framing and a synthetic corpus.

mod corpus;
mod extract;
mod fim;
mod kind;
mod lexer;
mod mine;

pub use corpus::gen_corpus;
pub use extract::{extract_targets, significant_len, Span, RANDOM_SPAN_DENSITY, RANDOM_SPAN_MAX, RANDOM_SPAN_MIN};
pub use fim::{
    build_fim_instance, gen_noise_instance, read_instances, write_instances, SkipReason, TaskInstance, Vocab,
    DEFAULT_CONTEXT_LEN,
};
pub use kind::TaskKind;
pub use mine::{mine_corpus, MineReport};
pub use lexer::{tokenize_java, JavaToken, TokenKind, COMPOUND_ASSIGN};
