use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::extract::Span;
use super::lexer::JavaToken;
use super::TaskKind;
use crate::error::{Error, Result};
use crate::io::AtomicFile;

pub const DEFAULT_CONTEXT_LEN: usize = 256;

/// Byte-level ids followed by the reserved sentinels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub pad: u32,
    pub fim_prefix: u32,
    pub fim_suffix: u32,
    pub fim_middle: u32,
    pub eos: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            pad: 256,
            fim_prefix: 257,
            fim_suffix: 258,
            fim_middle: 259,
            eos: 260,
        }
    }
}

impl Vocab {
    pub fn size(&self) -> usize {
        [self.pad, self.fim_prefix, self.fim_suffix, self.fim_middle, self.eos]
            .into_iter()
            .max()
            .unwrap() as usize
            + 1
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Byte ids back to text; sentinels render as `<pad>`, `<pre>`, `<suf>`, `<mid>`, `<eos>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut bytes = Vec::with_capacity(ids.len());
        for &id in ids {
            match id {
                b if b < 256 => bytes.push(b as u8),
                _ if id == self.pad => bytes.extend_from_slice(b"<pad>"),
                _ if id == self.fim_prefix => bytes.extend_from_slice(b"<pre>"),
                _ if id == self.fim_suffix => bytes.extend_from_slice(b"<suf>"),
                _ if id == self.fim_middle => bytes.extend_from_slice(b"<mid>"),
                _ if id == self.eos => bytes.extend_from_slice(b"<eos>"),
                _ => bytes.extend_from_slice(b"<?>"),
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: TaskKind,
    pub file_id: u64,
    /// Sequence number of this instance within its file and task.
    pub index: u64,
    pub span: Span,
    /// Byte range of the window `[prefix | target | suffix]` in the source.
    pub window: (usize, usize),
    pub ground_truth: Vec<u32>,
    /// `[PAD]* [FIM_PREFIX] prefix [FIM_SUFFIX] suffix [FIM_MIDDLE]`.
    pub fim_stream: Vec<u32>,
    /// `None` for noise instances.
    pub first_truth: Option<u32>,
    pub pad_len: usize,
    pub prefix_len: usize,
    pub suffix_len: usize,
}

impl TaskInstance {
    pub fn prefix(&self) -> &[u32] {
        &self.fim_stream[self.pad_len + 1..self.pad_len + 1 + self.prefix_len]
    }

    pub fn suffix(&self) -> &[u32] {
        let s = self.pad_len + 2 + self.prefix_len;
        &self.fim_stream[s..s + self.suffix_len]
    }

    /// `prefix ++ ground truth ++ suffix`, i.e. the source window.
    pub fn reinsert(&self) -> Vec<u32> {
        let mut out = self.prefix().to_vec();
        out.extend_from_slice(&self.ground_truth);
        out.extend_from_slice(self.suffix());
        out
    }

    /// A stable identifier for joining records across stages.
    pub fn sample_id(&self) -> u64 {
        (self.file_id << 32) ^ ((self.task_id.code() as u64) << 24) ^ self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyTarget,
    SpanOutOfBounds,
    /// The target alone is longer than the stream's text budget.
    TargetTooLong,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SkipReason::EmptyTarget => "empty_target",
            SkipReason::SpanOutOfBounds => "span_out_of_bounds",
            SkipReason::TargetTooLong => "target_too_long",
        };
        f.write_str(s)
    }
}

/// Frames a masked span as a fixed-length FIM stream centered on the target.
///
/// The prefix and suffix budgets are split evenly; a side shorter than its
/// share donates the remainder to the other side. Streams shorter than
/// `context_len` are left-padded.
#[allow(clippy::too_many_arguments)]
pub fn build_fim_instance(
    source: &str,
    tokens: &[JavaToken],
    span: Span,
    task: TaskKind,
    file_id: u64,
    index: u64,
    context_len: usize,
    vocab: &Vocab,
) -> std::result::Result<TaskInstance, SkipReason> {
    if span.is_empty() {
        return Err(SkipReason::EmptyTarget);
    }
    if span.end > tokens.len() {
        return Err(SkipReason::SpanOutOfBounds);
    }
    let (t0, t1) = span.bytes(tokens);
    let bytes = source.as_bytes();
    let target = t1 - t0;
    if context_len < 3 || target > context_len - 3 {
        return Err(SkipReason::TargetTooLong);
    }
    let budget = context_len - 3;
    let (avail_pre, avail_suf) = (t0, bytes.len() - t1);
    let mut pre = budget / 2;
    let mut suf = budget - pre;
    if avail_pre < pre {
        suf += pre - avail_pre;
        pre = avail_pre;
    }
    if avail_suf < suf {
        pre = (pre + suf - avail_suf).min(avail_pre);
        suf = avail_suf;
    }
    let (w0, w1) = (t0 - pre, t1 + suf);
    let pad_len = budget - pre - suf;
    let mut stream = Vec::with_capacity(context_len);
    stream.extend(std::iter::repeat_n(vocab.pad, pad_len));
    stream.push(vocab.fim_prefix);
    stream.extend(bytes[w0..t0].iter().map(|&b| b as u32));
    stream.push(vocab.fim_suffix);
    stream.extend(bytes[t1..w1].iter().map(|&b| b as u32));
    stream.push(vocab.fim_middle);
    debug_assert_eq!(stream.len(), context_len);
    let ground_truth: Vec<u32> = bytes[t0..t1].iter().map(|&b| b as u32).collect();
    Ok(TaskInstance {
        task_id: task,
        file_id,
        index,
        span,
        window: (w0, w1),
        first_truth: ground_truth.first().copied(),
        ground_truth,
        fim_stream: stream,
        pad_len,
        prefix_len: pre,
        suffix_len: suf,
    })
}

/// `context_len` ids drawn uniformly over the whole vocabulary.
pub fn gen_noise_instance(vocab: &Vocab, context_len: usize, seed: u64) -> TaskInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = vocab.size() as u32;
    TaskInstance {
        task_id: TaskKind::Noise,
        file_id: u32::MAX as u64,
        index: seed & 0xFF_FFFF,
        span: Span { start: 0, end: 0 },
        window: (0, 0),
        ground_truth: Vec::new(),
        fim_stream: (0..context_len).map(|_| rng.gen_range(0..size)).collect(),
        first_truth: None,
        pad_len: 0,
        prefix_len: 0,
        suffix_len: 0,
    }
}

pub fn write_instances(path: impl AsRef<Path>, instances: &[TaskInstance]) -> Result<()> {
    let path = path.as_ref();
    let mut f = AtomicFile::create(path)?;
    for inst in instances {
        serde_json::to_writer(&mut f, inst)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.commit()
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<Vec<TaskInstance>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{extract_targets, tokenize_java};
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    const SRC: &str = "class A { int f(int x) { int y = x + 1; return y; } }";

    #[test]
    fn stream_has_context_length() {
        let toks = tokenize_java(SRC).unwrap();
        let v = Vocab::default();
        for span in extract_targets(&toks, TaskKind::Identifier, 0) {
            let inst = build_fim_instance(SRC, &toks, span, TaskKind::Identifier, 0, 0, 256, &v).unwrap();
            assert_eq!(inst.fim_stream.len(), 256);
            let (a, b) = inst.window;
            assert_eq!(inst.reinsert(), v.encode(&SRC[a..b]));
        }
    }

    #[test]
    fn short_file_padding_count() {
        let src = "int x = 3;";
        let toks = tokenize_java(src).unwrap();
        let span = extract_targets(&toks, TaskKind::EndOfLine, 0)[0];
        let v = Vocab::default();
        let inst = build_fim_instance(src, &toks, span, TaskKind::EndOfLine, 0, 0, 256, &v).unwrap();
        assert_eq!(inst.pad_len, 256 - (10 - 1 + 3));
        assert!(inst.fim_stream[..inst.pad_len].iter().all(|&t| t == v.pad));
        assert_eq!(inst.fim_stream[inst.pad_len], v.fim_prefix);
        assert_eq!(*inst.fim_stream.last().unwrap(), v.fim_middle);
        assert_eq!(inst.first_truth, Some(b';' as u32));
        assert_eq!(v.decode(inst.prefix()), "int x = 3");
    }

    #[test]
    fn window_is_centered_when_room_allows() {
        let src = format!("{} int q = 1; {}", "a".repeat(100), "b".repeat(100));
        let toks = tokenize_java(&src).unwrap();
        let span = extract_targets(&toks, TaskKind::EndOfLine, 0)[0];
        let inst = build_fim_instance(&src, &toks, span, TaskKind::EndOfLine, 0, 0, 64, &Vocab::default()).unwrap();
        assert_eq!(inst.pad_len, 0);
        assert_eq!(inst.prefix_len, 30);
        assert_eq!(inst.suffix_len, 31);
        let src = format!("q;{}", "b".repeat(100));
        let toks = tokenize_java(&src).unwrap();
        let span = extract_targets(&toks, TaskKind::EndOfLine, 0)[0];
        let inst = build_fim_instance(&src, &toks, span, TaskKind::EndOfLine, 0, 0, 64, &Vocab::default()).unwrap();
        assert_eq!((inst.prefix_len, inst.suffix_len, inst.pad_len), (1, 60, 0));
    }

    #[test]
    fn oversized_target_is_skipped() {
        let src = format!("s = \"{}\";", "x".repeat(300));
        let toks = tokenize_java(&src).unwrap();
        let span = extract_targets(&toks, TaskKind::StringLiteral, 0)[0];
        let r = build_fim_instance(&src, &toks, span, TaskKind::StringLiteral, 0, 0, 256, &Vocab::default());
        assert_eq!(r.unwrap_err(), SkipReason::TargetTooLong);
    }

    #[test]
    fn noise_is_seeded_and_uniform() {
        let v = Vocab::default();
        let a = gen_noise_instance(&v, 256, 9);
        assert_eq!(a, gen_noise_instance(&v, 256, 9));
        assert_eq!(a.fim_stream.len(), 256);
        assert_eq!(a.task_id, TaskKind::Noise);
        assert!(a.first_truth.is_none());

        let k = v.size();
        let mut counts = vec![0usize; k];
        let mut drawn = 0;
        let mut seed = 0;
        while drawn < 100_000 {
            for &t in &gen_noise_instance(&v, 1000, seed).fim_stream {
                counts[t as usize] += 1;
            }
            drawn += 1000;
            seed += 1;
        }
        let expected = drawn as f64 / k as f64;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "{stat} >= {critical}");
    }

    #[test]
    fn jsonl_round_trip() {
        let v = Vocab::default();
        let toks = tokenize_java(SRC).unwrap();
        let span = extract_targets(&toks, TaskKind::EndOfLine, 0)[0];
        let insts = vec![
            build_fim_instance(SRC, &toks, span, TaskKind::EndOfLine, 3, 0, 64, &v).unwrap(),
            gen_noise_instance(&v, 64, 1),
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.jsonl");
        write_instances(&p, &insts).unwrap();
        assert_eq!(read_instances(&p).unwrap(), insts);
    }
}
