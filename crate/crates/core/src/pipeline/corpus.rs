use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use super::{CorpusFormat, PipelineError};
use crate::tensor::Prng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusPair {
    pub id: u64,
    pub code: String,
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IngestReport {
    pub pairs: Vec<CorpusPair>,
    /// (line number, reason) of every malformed record.
    pub skipped: Vec<(u64, String)>,
}

/// Records with more than this share of malformed lines are rejected.
const MAX_MALFORMED: f64 = 0.10;

#[derive(Deserialize)]
struct JsonRecord {
    code: String,
    comment: String,
}

fn accept(id: u64, code: String, comment: String, report: &mut IngestReport) {
    if code.trim().is_empty() || comment.trim().is_empty() {
        report.skipped.push((id, "empty code or comment".into()));
    } else {
        report.pairs.push(CorpusPair { id, code, comment });
    }
}

fn finish(report: IngestReport) -> Result<IngestReport, PipelineError> {
    let total = report.pairs.len() + report.skipped.len();
    if total > 0 && report.skipped.len() as f64 > MAX_MALFORMED * total as f64 {
        return Err(PipelineError::Format(format!(
            "{} of {total} records are malformed (first: line {}: {})",
            report.skipped.len(),
            report.skipped[0].0,
            report.skipped[0].1
        )));
    }
    Ok(report)
}

/// One JSON object with string fields `code` and `comment` per line; ids are
/// 0-based line numbers. Blank lines are ignored.
pub fn parse_jsonl(text: &str) -> Result<IngestReport, PipelineError> {
    let mut report = IngestReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<JsonRecord>(line) {
            Ok(r) => accept(i as u64, r.code, r.comment, &mut report),
            Err(e) => report.skipped.push((i as u64, e.to_string())),
        }
    }
    finish(report)
}

fn unescape(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Two aligned files, one record per line, with `\n`, `\t`, `\r` and `\\`
/// escapes.
pub fn parse_parallel(code: &str, comments: &str) -> Result<IngestReport, PipelineError> {
    let code: Vec<&str> = code.lines().collect();
    let comments: Vec<&str> = comments.lines().collect();
    if code.len() != comments.len() {
        return Err(PipelineError::Format(format!("parallel files differ in length: {} code lines, {} comment lines", code.len(), comments.len())));
    }
    let mut report = IngestReport::default();
    for (i, (c, m)) in code.iter().zip(&comments).enumerate() {
        accept(i as u64, unescape(c), unescape(m), &mut report);
    }
    finish(report)
}

pub fn ingest(format: CorpusFormat, path: &Path, comments: Option<&Path>) -> Result<IngestReport, PipelineError> {
    let read = |p: &Path| fs::read_to_string(p).map_err(PipelineError::io(p));
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&read(path)?),
        CorpusFormat::ParallelText => {
            let comments = comments.ok_or_else(|| PipelineError::Config("parallel-text corpus needs a comment file".into()))?;
            parse_parallel(&read(path)?, &read(comments)?)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<CorpusPair>,
    pub valid: Vec<CorpusPair>,
    pub test: Vec<CorpusPair>,
}

/// Seeded shuffle, then the first `n_test` pairs go to test, the next
/// `n_valid` to validation and the rest to training.
pub fn split(pairs: &[CorpusPair], n_test: usize, n_valid: usize, seed: u64) -> Result<Split, PipelineError> {
    let requested = n_test + n_valid;
    if requested > pairs.len() {
        return Err(PipelineError::TooFewPairs { requested, available: pairs.len() });
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(Prng::new(seed).inner());
    let take = |r: std::ops::Range<usize>| order[r].iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    Ok(Split { test: take(0..n_test), valid: take(n_test..requested), train: take(requested..pairs.len()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn pairs(n: u64) -> Vec<CorpusPair> {
        (0..n).map(|id| CorpusPair { id, code: format!("void m{id}() {{}}"), comment: format!("c{id}") }).collect()
    }

    #[test]
    fn jsonl_ids_and_skips() {
        let r = parse_jsonl("{\"code\":\"a\",\"comment\":\"b\"}\n{\"code\":\"c\",\"comment\":\"d\"}\n").unwrap();
        assert_eq!(r.pairs.iter().map(|p| p.id).collect::<Vec<_>>(), vec![0, 1]);

        let mut text = String::new();
        for i in 0..10 {
            text.push_str(&format!("{{\"code\":\"x{i}\",\"comment\":\"y\"}}\n"));
        }
        text.push_str("{\"code\":\"z\"}\n");
        let r = parse_jsonl(&text).unwrap();
        assert_eq!((r.pairs.len(), r.skipped.len()), (10, 1));
        assert_eq!(r.skipped[0].0, 10);

        let bad = "{\"code\":\"z\"}\nnot json\n{\"code\":\"a\",\"comment\":\"b\"}\n";
        assert!(matches!(parse_jsonl(bad), Err(PipelineError::Format(_))));
    }

    #[test]
    fn parallel_text() {
        let r = parse_parallel("int f() {\\n return 1;\\n}\nvoid g() {}\nvoid h() {}\n", "one\ntwo\nthree\n").unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert_eq!(r.pairs[0].code, "int f() {\n return 1;\n}");
        assert!(matches!(parse_parallel("a\nb\n", "x\n"), Err(PipelineError::Format(_))));
        assert_eq!(unescape(r"a\\n\q"), "a\\n\\q");
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let p = pairs(10);
        let s = split(&p, 2, 2, 7).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (6, 2, 2));
        let ids: HashSet<u64> = s.train.iter().chain(&s.valid).chain(&s.test).map(|p| p.id).collect();
        assert_eq!(ids.len(), 10);
        assert_eq!(s, split(&p, 2, 2, 7).unwrap());
        assert_ne!(s, split(&p, 2, 2, 8).unwrap());
        assert!(matches!(split(&p, 6, 5, 0), Err(PipelineError::TooFewPairs { requested: 11, available: 10 })));
    }

    #[test]
    fn full_corpus_split_arithmetic() {
        let p: Vec<CorpusPair> = (0..485_812).map(|id| CorpusPair { id, code: String::new(), comment: String::new() }).collect();
        let s = split(&p, 20_000, 20_000, 1).unwrap();
        assert_eq!(s.train.len(), 445_812);
    }
}
