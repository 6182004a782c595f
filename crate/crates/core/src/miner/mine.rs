use std::collections::BTreeMap;

use super::{build_fim_instance, extract_targets, tokenize_java, SkipReason, TaskInstance, TaskKind, Vocab};
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MineReport {
    pub instances: Vec<TaskInstance>,
    pub skipped: BTreeMap<SkipReason, usize>,
}

/// Extracts and frames every target of `kinds` in every file. File `i` gets
/// `file_id = i` and random-span seed `seed ^ i`.
pub fn mine_corpus(
    files: &[String],
    kinds: &[TaskKind],
    context_len: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<MineReport> {
    let mut report = MineReport::default();
    for (fid, src) in files.iter().enumerate() {
        let tokens = tokenize_java(src)?;
        for &kind in kinds {
            for (idx, span) in extract_targets(&tokens, kind, seed ^ fid as u64).into_iter().enumerate() {
                match build_fim_instance(src, &tokens, span, kind, fid as u64, idx as u64, context_len, vocab) {
                    Ok(inst) => report.instances.push(inst),
                    Err(reason) => *report.skipped.entry(reason).or_default() += 1,
                }
            }
        }
    }
    Ok(report)
}
