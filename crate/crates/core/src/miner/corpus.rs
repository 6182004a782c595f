//! Deterministic generator of small, lexically valid Java files.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOUNS: &[&str] = &[
    "count", "total", "index", "value", "offset", "limit", "size", "score", "delta", "width", "height", "depth",
    "level", "rate", "step", "weight", "price", "amount", "length", "cursor",
];
const FLAGS: &[&str] = &["active", "ready", "valid", "done", "enabled", "visible", "dirty", "locked"];
const TEXTS: &[&str] = &["name", "label", "title", "message", "prefix", "key", "path", "tag"];
const TYPES: &[&str] = &["Account", "Buffer", "Counter", "Parser", "Router", "Store", "Ledger", "Widget", "Engine", "Filter"];
const VERBS: &[&str] = &["compute", "update", "resolve", "scan", "merge", "apply", "check", "build", "flush", "load"];
const WORDS: &[&str] = &["ok", "error", "value", "done", "start", "user", "item", "result", "empty", "next"];

struct Gen {
    rng: ChaCha8Rng,
    out: String,
    indent: usize,
}

impl Gen {
    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("    ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs.choose(&mut self.rng).unwrap()
    }

    fn int_lit(&mut self) -> String {
        match self.rng.gen_range(0..6) {
            0 => format!("0x{:X}", self.rng.gen_range(1..256)),
            1 => format!("{}L", self.rng.gen_range(1..10_000)),
            _ => self.rng.gen_range(0..100).to_string(),
        }
    }

    fn float_lit(&mut self) -> String {
        format!("{:.2}", self.rng.gen_range(0.0..10.0))
    }

    fn str_lit(&mut self) -> String {
        let w = self.pick(WORDS);
        match self.rng.gen_range(0..4) {
            0 => format!("\"{w}: \""),
            1 => format!("\"{w}\\n\""),
            _ => format!("\"{w}\""),
        }
    }

    fn int_expr(&mut self, vars: &[String], depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return if !vars.is_empty() && self.rng.gen_bool(0.6) {
                vars.choose(&mut self.rng).unwrap().clone()
            } else {
                self.int_lit()
            };
        }
        let op = *["+", "-", "*", "/", "%"].choose(&mut self.rng).unwrap();
        let a = self.int_expr(vars, depth - 1);
        let b = self.int_expr(vars, depth - 1);
        if self.rng.gen_bool(0.3) {
            format!("({a} {op} {b})")
        } else {
            format!("{a} {op} {b}")
        }
    }

    fn bool_expr(&mut self, vars: &[String], flags: &[String], depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.3) {
            return match self.rng.gen_range(0..4) {
                0 => flags.choose(&mut self.rng).unwrap().clone(),
                1 => (if self.rng.gen_bool(0.5) { "true" } else { "false" }).to_string(),
                _ => {
                    let cmp = *["<", ">", "<=", ">=", "==", "!="].choose(&mut self.rng).unwrap();
                    let a = self.int_expr(vars, 1);
                    let b = self.int_expr(vars, 0);
                    format!("{a} {cmp} {b}")
                }
            };
        }
        match self.rng.gen_range(0..3) {
            0 => format!("!{}", self.paren_bool(vars, flags, depth - 1)),
            1 => format!("{} && {}", self.bool_expr(vars, flags, depth - 1), self.bool_expr(vars, flags, depth - 1)),
            _ => format!("{} || {}", self.bool_expr(vars, flags, depth - 1), self.bool_expr(vars, flags, depth - 1)),
        }
    }

    fn paren_bool(&mut self, vars: &[String], flags: &[String], depth: usize) -> String {
        let e = self.bool_expr(vars, flags, depth);
        if e.contains(' ') {
            format!("({e})")
        } else {
            e
        }
    }

    fn statement(&mut self, vars: &mut Vec<String>, flags: &[String], texts: &[String], methods: &[String], depth: usize) {
        let choice = self.rng.gen_range(0..10);
        match choice {
            0 | 1 => {
                let name = format!("{}{}", self.pick(NOUNS), vars.len());
                let e = self.int_expr(vars, 2);
                self.line(&format!("int {name} = {e};"));
                vars.push(name);
            }
            2 => {
                let v = vars.choose(&mut self.rng).unwrap().clone();
                let op = *["+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", ">>>="]
                    .choose(&mut self.rng)
                    .unwrap();
                let e = self.int_expr(vars, 1);
                self.line(&format!("{v} {op} {e};"));
            }
            3 => {
                let f = flags.choose(&mut self.rng).unwrap().clone();
                let e = self.bool_expr(vars, flags, 2);
                self.line(&format!("{f} = {e};"));
            }
            4 => {
                let t = texts.choose(&mut self.rng).unwrap().clone();
                let s = self.str_lit();
                let v = vars.choose(&mut self.rng).unwrap().clone();
                self.line(&format!("{t} = {s} + {v};"));
            }
            5 if depth > 0 => {
                let cond = self.bool_expr(vars, flags, 2);
                self.line(&format!("if ({cond}) {{"));
                self.block(vars, flags, texts, methods, depth - 1);
                if self.rng.gen_bool(0.4) {
                    self.line("} else {");
                    self.block(vars, flags, texts, methods, depth - 1);
                }
                self.line("}");
            }
            6 if depth > 0 => {
                let i = format!("i{}", vars.len());
                let lim = self.int_expr(vars, 1);
                self.line(&format!("for (int {i} = 0; {i} < {lim}; {i}++) {{"));
                vars.push(i);
                self.block(vars, flags, texts, methods, depth - 1);
                vars.pop();
                self.line("}");
            }
            7 => {
                let m = methods.choose(&mut self.rng).unwrap().clone();
                let a = self.int_expr(vars, 1);
                let b = self.int_expr(vars, 0);
                let v = vars.choose(&mut self.rng).unwrap().clone();
                self.line(&format!("{v} = {m}({a}, {b});"));
            }
            8 => {
                let t = texts.choose(&mut self.rng).unwrap().clone();
                self.line(&format!("System.out.println({t});"));
            }
            _ => {
                let name = format!("{}{}", self.pick(NOUNS), vars.len());
                let f = self.float_lit();
                let v = vars.choose(&mut self.rng).unwrap().clone();
                self.line(&format!("double {name}d = {v} * {f};"));
                self.line(&format!("data[{v} % data.length] = (int) {name}d;"));
            }
        }
    }

    fn block(&mut self, vars: &mut Vec<String>, flags: &[String], texts: &[String], methods: &[String], depth: usize) {
        self.indent += 1;
        let n = self.rng.gen_range(1..4);
        let mark = vars.len();
        for _ in 0..n {
            self.statement(vars, flags, texts, methods, depth);
        }
        vars.truncate(mark);
        self.indent -= 1;
    }

    fn class(&mut self, file_index: usize) {
        let ty = format!("{}{}", self.pick(TYPES), file_index);
        let flags: Vec<String> = FLAGS.choose_multiple(&mut self.rng, 2).map(|s| s.to_string()).collect();
        let texts: Vec<String> = TEXTS.choose_multiple(&mut self.rng, 2).map(|s| s.to_string()).collect();
        let fields: Vec<String> = NOUNS.choose_multiple(&mut self.rng, 2).map(|s| s.to_string()).collect();
        let methods: Vec<String> = VERBS.choose_multiple(&mut self.rng, 3).map(|s| s.to_string()).collect();

        self.line("import java.util.*;");
        self.line("");
        self.line(&format!("// Generated fixture {file_index}."));
        self.line(&format!("public class {ty} {{"));
        self.indent += 1;
        for f in &fields {
            let v = self.int_lit();
            self.line(&format!("private long {f} = {v};"));
        }
        for f in &flags {
            let b = if self.rng.gen_bool(0.5) { "true" } else { "false" };
            self.line(&format!("private boolean {f} = {b};"));
        }
        for t in &texts {
            let s = self.str_lit();
            self.line(&format!("private String {t} = {s};"));
        }
        self.line("private int[] data = new int[16];");
        self.line("private Map<String, List<Integer>> index = new HashMap<>();");
        self.line("");
        let (f0, g0, g1, t0) = (&fields[0], &flags[0], &flags[1], &texts[0]);
        let step = self.int_lit();
        let s = self.str_lit();
        self.line("public void reset(int a) {");
        self.line(&format!("    {f0} += {step} * a;"));
        self.line(&format!("    {g0} = !{g1} && a > 0 || false;"));
        self.line(&format!("    {t0} = {s} + {f0};"));
        self.line("}");
        self.line("");
        for m in methods.clone() {
            self.line("/* Returns a derived quantity. */");
            self.line(&format!("public int {m}(int a, int b) {{"));
            let mut vars = vec!["a".to_string(), "b".to_string()];
            vars.extend(fields.iter().map(|f| format!("(int) {f}")));
            self.indent += 1;
            let n = self.rng.gen_range(3..7);
            for _ in 0..n {
                self.statement(&mut vars, &flags, &texts, &methods, 2);
            }
            let r = self.int_expr(&vars[..2], 2);
            self.line(&format!("return {r};"));
            self.indent -= 1;
            self.line("}");
            self.line("");
        }
        self.indent -= 1;
        self.line("}");
    }
}

/// `file_count` Java sources, deterministic in `seed`.
pub fn gen_corpus(seed: u64, file_count: usize) -> Vec<String> {
    (0..file_count)
        .map(|i| {
            let mut g = Gen {
                rng: ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x100_0000_01B3).wrapping_add(i as u64)),
                out: String::new(),
                indent: 0,
            };
            g.class(i);
            g.out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{extract_targets, tokenize_java, TaskKind};

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(gen_corpus(3, 5), gen_corpus(3, 5));
        assert_ne!(gen_corpus(3, 5), gen_corpus(4, 5));
    }

    #[test]
    fn every_family_is_well_represented() {
        let files = gen_corpus(1, 100);
        let mut counts = [0usize; 10];
        for (fi, src) in files.iter().enumerate() {
            let toks = tokenize_java(src).unwrap();
            let joined: String = toks.iter().map(|t| t.text.as_str()).collect();
            assert_eq!(&joined, src);
            for (k, kind) in TaskKind::MINED.iter().enumerate() {
                let n = extract_targets(&toks, *kind, fi as u64).len();
                assert!(n >= 1, "file {fi} lacks {kind}");
                counts[k] += n;
            }
        }
        assert!(counts.iter().all(|&c| c >= 100), "{counts:?}");
    }
}
