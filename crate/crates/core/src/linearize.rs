//! AST linearization: bracketed structure-based traversal and its
//! simplified pre-order form.

use thiserror::Error;

use crate::java::{AstNode, NormTokenSeq};

pub const OPEN: &str = "(";
pub const CLOSE: &str = ")";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AstSeq(pub Vec<String>);

impl AstSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_brackets(&self) -> bool {
        self.0.iter().any(|t| t == OPEN || t == CLOSE)
    }

    /// Stack scan: every `(` is followed by a label and closed by `)` and the
    /// same label.
    pub fn brackets_balanced(&self) -> bool {
        let toks = &self.0;
        let mut stack: Vec<&str> = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            match toks[i].as_str() {
                OPEN => {
                    let Some(label) = toks.get(i + 1).filter(|t| *t != OPEN && *t != CLOSE) else {
                        return false;
                    };
                    stack.push(label);
                    i += 2;
                }
                CLOSE => {
                    let (Some(open), Some(label)) = (stack.pop(), toks.get(i + 1)) else {
                        return false;
                    };
                    if open != label {
                        return false;
                    }
                    i += 2;
                }
                _ => return false,
            }
        }
        stack.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("length mismatch: {asts} trees vs {codes} code sequences")]
    LengthMismatch { asts: usize, codes: usize },
    #[error("no trees given")]
    Empty,
}

/// `SBT(n) = ( label SBT(c1) .. SBT(ck) ) label`
pub fn sbt(root: &AstNode) -> AstSeq {
    fn walk(node: &AstNode, out: &mut Vec<String>) {
        out.push(OPEN.to_string());
        out.push(node.label.to_string());
        for child in &node.children {
            walk(child, out);
        }
        out.push(CLOSE.to_string());
        out.push(node.label.to_string());
    }
    let mut out = Vec::with_capacity(4 * root.node_count());
    walk(root, &mut out);
    AstSeq(out)
}

/// Pre-order listing of node-type labels.
pub fn sim_sbt(root: &AstNode) -> AstSeq {
    AstSeq(root.iter().map(|n| n.label.to_string()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionStats {
    pub mean_sbt: f64,
    pub mean_sim_sbt: f64,
    pub mean_code: f64,
}

pub fn compression_stats(asts: &[AstNode], code_seqs: &[NormTokenSeq]) -> Result<CompressionStats, LinearizeError> {
    if asts.len() != code_seqs.len() {
        return Err(LinearizeError::LengthMismatch { asts: asts.len(), codes: code_seqs.len() });
    }
    if asts.is_empty() {
        return Err(LinearizeError::Empty);
    }
    let n = asts.len() as f64;
    let sum = |f: &dyn Fn(usize) -> usize| (0..asts.len()).map(f).sum::<usize>() as f64 / n;
    Ok(CompressionStats {
        mean_sbt: sum(&|i| sbt(&asts[i]).len()),
        mean_sim_sbt: sum(&|i| sim_sbt(&asts[i]).len()),
        mean_code: sum(&|i| code_seqs[i].len()),
    })
}
