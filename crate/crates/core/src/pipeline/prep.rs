use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CorpusPair, PipelineError};
use crate::bpe::{BpeModel, BpeTrainer, EOS, SOS};
use crate::java::{normalize_code_tokens, normalize_comment, parse_source, JavaError, NormTokenSeq, LABELS};
use crate::linearize::{sim_sbt, AstSeq};
use crate::model::{Example, ModelConfig};

/// Text-level views of one pair before sub-word encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analyzed {
    pub code_words: NormTokenSeq,
    pub ast_labels: AstSeq,
    pub comment_words: Vec<String>,
    /// Raw lexer token count, used for length buckets.
    pub code_len: usize,
    pub node_count: usize,
}

/// Lex, parse, normalize and linearize one method and its comment.
pub fn analyze(code: &str, comment: &str) -> Result<Analyzed, JavaError> {
    let (tokens, root) = parse_source(code)?;
    Ok(Analyzed {
        code_words: normalize_code_tokens(&tokens),
        ast_labels: sim_sbt(&root),
        comment_words: normalize_comment(comment),
        code_len: tokens.len(),
        node_count: root.node_count(),
    })
}

/// Code and comment texts the tokenizer learns merges from.
pub fn bpe_training_texts(analyzed: &[Analyzed]) -> Vec<String> {
    analyzed.iter().flat_map(|a| [a.code_words.join(), a.comment_words.join(" ")]).collect()
}

/// Trains the shared vocabulary on analyzed training pairs, with every AST
/// label registered as an atomic special.
pub fn train_tokenizer(analyzed: &[Analyzed], vocab_size: usize) -> Result<BpeModel, PipelineError> {
    Ok(BpeTrainer::new(vocab_size).with_specials(LABELS).train(&bpe_training_texts(analyzed))?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedExample {
    pub id: u64,
    pub code_ids: Vec<u32>,
    pub ast_ids: Vec<u32>,
    /// `SOS`, comment sub-words, `EOS`.
    pub comment_ids: Vec<u32>,
    pub code_len: usize,
    /// Normalized reference comment, before truncation.
    pub reference: Vec<String>,
}

impl ProcessedExample {
    pub fn example(&self) -> Example {
        Example { code_ids: self.code_ids.clone(), ast_ids: self.ast_ids.clone(), comment_ids: self.comment_ids.clone() }
    }
}

/// Encodes all three streams and truncates them to the configured maxima.
/// The comment keeps at most `max_comment_len − 1` sub-words so that
/// `SOS + comment` fits the decoder and `EOS` is always present.
pub fn encode_example(id: u64, a: &Analyzed, bpe: &BpeModel, cfg: &ModelConfig) -> ProcessedExample {
    let mut code_ids = bpe.encode_words(a.code_words.as_slice());
    code_ids.truncate(cfg.max_code_len);
    let mut ast_ids = bpe.encode_words(&a.ast_labels.0);
    ast_ids.truncate(cfg.max_ast_len);
    let mut body = bpe.encode_words(&a.comment_words);
    body.truncate(cfg.max_comment_len.saturating_sub(1));
    let mut comment_ids = Vec::with_capacity(body.len() + 2);
    comment_ids.push(SOS);
    comment_ids.extend(body);
    comment_ids.push(EOS);
    ProcessedExample { id, code_ids, ast_ids, comment_ids, code_len: a.code_len, reference: a.comment_words.clone() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub id: u64,
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessReport {
    pub examples: Vec<ProcessedExample>,
    pub skipped: Vec<Skip>,
}

impl PreprocessReport {
    /// Tab-separated `id reason detail` lines.
    pub fn manifest(&self) -> String {
        let mut out = String::from("id\treason\tdetail\n");
        for s in &self.skipped {
            out.push_str(&format!("{}\t{}\t{}\n", s.id, s.reason, s.detail.replace(['\t', '\n'], " ")));
        }
        out
    }
}

pub(crate) fn analyze_pair(p: &CorpusPair) -> Result<Analyzed, Skip> {
    let skip = |reason: &str, detail: String| Skip { id: p.id, reason: reason.to_string(), detail };
    let a = analyze(&p.code, &p.comment).map_err(|e| skip(e.kind(), e.to_string()))?;
    if a.comment_words.is_empty() {
        return Err(skip("EmptyComment", "comment has no word tokens".into()));
    }
    Ok(a)
}

/// Analyzes every pair in parallel and merges in input order. Failures never
/// abort; they become skip entries.
pub(crate) fn analyze_all(pairs: &[CorpusPair]) -> (Vec<(u64, Analyzed)>, Vec<Skip>) {
    let results: Vec<Result<Analyzed, Skip>> = pairs.par_iter().map(analyze_pair).collect();
    let mut ok = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(a) => ok.push((p.id, a)),
            Err(s) => skipped.push(s),
        }
    }
    (ok, skipped)
}

pub fn preprocess(pairs: &[CorpusPair], bpe: &BpeModel, cfg: &ModelConfig) -> PreprocessReport {
    let (ok, skipped) = analyze_all(pairs);
    let examples = ok.par_iter().map(|(id, a)| encode_example(*id, a, bpe, cfg)).collect();
    PreprocessReport { examples, skipped }
}
