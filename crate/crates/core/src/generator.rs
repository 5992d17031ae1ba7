//! Greedy and beam-search decoding.

use std::cmp::Ordering;

use crate::bpe::{EOS, SOS};
use crate::model::{ComFormerModel, Context, ModelError};
use crate::tensor::log_softmax;

/// Next-token log-probabilities for a prefix that starts with SOS.
pub trait StepScorer {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError>;

    /// Longest prefix the scorer accepts.
    fn max_prefix(&self) -> usize {
        usize::MAX
    }
}

/// Scores prefixes with a model against a fixed encoded input.
pub struct ModelScorer<'m> {
    model: &'m ComFormerModel,
    context: Context,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m ComFormerModel, code_ids: &[u32], ast_ids: &[u32]) -> Result<Self, ModelError> {
        Ok(ModelScorer { model, context: model.fuse_encode(code_ids, ast_ids)? })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let logits = self.model.decoder_forward(&self.context, prefix)?;
        Ok(log_softmax(logits.row(prefix.len() - 1)))
    }

    fn max_prefix(&self) -> usize {
        self.model.config.max_comment_len
    }
}

impl<F: Fn(&[u32]) -> Vec<f64>> StepScorer for F {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        Ok(self(prefix))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis { tokens: vec![SOS], log_prob: 0.0, finished: false }
    }

    /// Generated tokens, excluding SOS and including EOS if emitted.
    pub fn generated(&self) -> &[u32] {
        &self.tokens[1..]
    }

    /// `log_prob / len^α` with `len` the generated-token count.
    pub fn score(&self, alpha: f64) -> f64 {
        if alpha == 0.0 {
            return self.log_prob;
        }
        self.log_prob / (self.generated().len().max(1) as f64).powf(alpha)
    }

    /// Generated tokens without EOS.
    pub fn content(&self) -> &[u32] {
        match self.generated() {
            [rest @ .., last] if *last == EOS => rest,
            all => all,
        }
    }
}

fn by_score(alpha: f64) -> impl Fn(&Hypothesis, &Hypothesis) -> Ordering {
    move |a, b| b.score(alpha).total_cmp(&a.score(alpha)).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Token ids ordered by log-probability, highest first; ties go to the lower id.
fn ranked(lp: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..lp.len()).collect();
    ids.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    ids
}

fn step_limit(scorer: &impl StepScorer, max_len: usize) -> usize {
    max_len.min(scorer.max_prefix())
}

/// Appends the most probable token until EOS or `max_len` generated tokens.
pub fn greedy_search(scorer: &impl StepScorer, max_len: usize) -> Result<Vec<u32>, ModelError> {
    let mut tokens = vec![SOS];
    for _ in 0..step_limit(scorer, max_len) {
        let lp = scorer.log_probs(&tokens)?;
        let next = ranked(&lp)[0] as u32;
        tokens.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub alpha: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: 5, max_len: 30, alpha: 0.0 }
    }
}

/// Beam search. Each live hypothesis is extended by its `width` best tokens,
/// the best `width` candidates overall survive, and those ending in EOS
/// retire to the finished pool. Returns up to `width` hypotheses from the
/// pool and the remaining live set, best first.
pub fn beam_search_with(scorer: &impl StepScorer, cfg: BeamConfig) -> Result<Vec<Hypothesis>, ModelError> {
    let k = cfg.width.max(1);
    let steps = step_limit(scorer, cfg.max_len);
    let order = by_score(cfg.alpha);
    let mut live = vec![Hypothesis::root()];
    let mut pool: Vec<Hypothesis> = Vec::new();
    for step in 0..steps {
        let mut candidates = Vec::with_capacity(live.len() * k);
        for h in &live {
            let lp = scorer.log_probs(&h.tokens)?;
            for id in ranked(&lp).into_iter().take(k) {
                let mut tokens = h.tokens.clone();
                tokens.push(id as u32);
                candidates.push(Hypothesis { tokens, log_prob: h.log_prob + lp[id], finished: id as u32 == EOS });
            }
        }
        candidates.sort_by(&order);
        candidates.truncate(k);
        live.clear();
        for c in candidates {
            if c.finished {
                pool.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
        pool.sort_by(&order);
        if pool.len() >= k {
            let kth = pool[k - 1].score(cfg.alpha);
            let remaining = steps - step - 1;
            if live.iter().all(|h| upper_bound(h, remaining, cfg.alpha) <= kth) {
                break;
            }
        }
    }
    pool.extend(live);
    pool.sort_by(&order);
    pool.truncate(k);
    Ok(pool)
}

/// Best score a live hypothesis could still reach: log-probabilities never
/// increase, and a positive `α` divides by at most the final length.
fn upper_bound(h: &Hypothesis, remaining: usize, alpha: f64) -> f64 {
    if alpha <= 0.0 {
        return h.score(alpha);
    }
    let longest = (h.generated().len() + remaining).max(1) as f64;
    h.log_prob / longest.powf(alpha)
}

pub fn greedy_decode(model: &ComFormerModel, code_ids: &[u32], ast_ids: &[u32], max_len: usize) -> Result<Vec<u32>, ModelError> {
    greedy_search(&ModelScorer::new(model, code_ids, ast_ids)?, max_len)
}

pub fn beam_search(model: &ComFormerModel, code_ids: &[u32], ast_ids: &[u32], cfg: BeamConfig) -> Result<Vec<Hypothesis>, ModelError> {
    beam_search_with(&ModelScorer::new(model, code_ids, ast_ids)?, cfg)
}

/// Sum of stepwise log-probabilities of `tokens[1..]` from one decoder pass.
pub fn sequence_log_prob(model: &ComFormerModel, code_ids: &[u32], ast_ids: &[u32], tokens: &[u32]) -> Result<f64, ModelError> {
    let context = model.fuse_encode(code_ids, ast_ids)?;
    let logits = model.decoder_forward(&context, &tokens[..tokens.len() - 1])?;
    Ok((1..tokens.len()).map(|t| log_softmax(logits.row(t - 1))[tokens[t] as usize]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FusionMode, ModelConfig};
    use crate::tensor::Prng;

    const A: u32 = 6;
    const B: u32 = 7;
    const C: u32 = 8;

    fn dist(pairs: &[(u32, f64)]) -> Vec<f64> {
        let mut lp = vec![f64::NEG_INFINITY; 9];
        for &(id, p) in pairs {
            lp[id as usize] = p.ln();
        }
        lp
    }

    /// Greedy takes `a` (0.6) and then faces a flat distribution; `b` (0.4)
    /// leads to a concentrated one and the better full sequence.
    fn toy(prefix: &[u32]) -> Vec<f64> {
        match prefix {
            [_] => dist(&[(A, 0.6), (B, 0.4)]),
            [_, x] if *x == A => dist(&[(A, 0.25), (B, 0.25), (C, 0.25), (EOS, 0.25)]),
            [_, x] if *x == B => dist(&[(C, 0.9), (EOS, 0.1)]),
            _ => dist(&[(EOS, 1.0)]),
        }
    }

    fn brute_force(scorer: impl Fn(&[u32]) -> Vec<f64>, max_len: usize) -> (Vec<u32>, f64) {
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let mut stack = vec![(vec![SOS], 0.0)];
        while let Some((tokens, lp)) = stack.pop() {
            let done = tokens.last() == Some(&EOS);
            if done || tokens.len() > max_len {
                if lp > best.1 {
                    best = (tokens, lp);
                }
                continue;
            }
            for (id, p) in scorer(&tokens).into_iter().enumerate() {
                if p.is_finite() {
                    let mut next = tokens.clone();
                    next.push(id as u32);
                    stack.push((next, lp + p));
                }
            }
        }
        best
    }

    #[test]
    fn beam_beats_greedy_on_toy_distribution() {
        let greedy = greedy_search(&toy, 3).unwrap();
        assert_eq!(greedy[..2], [SOS, A]);
        let beams = beam_search_with(&toy, BeamConfig { width: 2, max_len: 3, alpha: 0.0 }).unwrap();
        let (best, best_lp) = brute_force(toy, 3);
        assert_eq!(best, vec![SOS, B, C, EOS]);
        assert_eq!(beams[0].tokens, best);
        assert!((beams[0].log_prob - best_lp).abs() < 1e-12);
        assert!((beams[0].log_prob - 0.36f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn eos_favoring_scorer() {
        let eos = |_: &[u32]| dist(&[(EOS, 0.9), (A, 0.1)]);
        assert_eq!(greedy_search(&eos, 10).unwrap(), vec![SOS, EOS]);
        let never = |_: &[u32]| dist(&[(A, 0.9), (EOS, 0.1)]);
        assert_eq!(greedy_search(&never, 4).unwrap().len(), 5);
        let beams = beam_search_with(&never, BeamConfig { width: 3, max_len: 4, alpha: 0.0 }).unwrap();
        assert!(beams.iter().all(|h| h.generated().len() <= 4));
        assert_eq!(beams[0].tokens, vec![SOS, A, A, A, A]);
        assert!(!beams[0].finished);
    }

    #[test]
    fn hypothesis_helpers() {
        let h = Hypothesis { tokens: vec![SOS, A, B, EOS], log_prob: -3.0, finished: true };
        assert_eq!(h.content(), &[A, B]);
        assert_eq!(h.score(0.0), -3.0);
        assert!((h.score(1.0) + 1.0).abs() < 1e-12);
    }

    fn tiny_model(seed: u64) -> ComFormerModel {
        let cfg = ModelConfig {
            d_model: 16,
            heads: 2,
            layers: 1,
            d_ff: 32,
            dropout: 0.0,
            max_code_len: 8,
            max_ast_len: 8,
            max_comment_len: 8,
            vocab_size: 12,
            fusion: FusionMode::Single,
            seed,
        };
        ComFormerModel::new(cfg).unwrap()
    }

    #[test]
    fn width_one_matches_greedy_and_scores_recompute() {
        for seed in 0..10 {
            let model = tiny_model(seed);
            let mut rng = Prng::new(seed);
            let code: Vec<u32> = (0..5).map(|_| 3 + rng.below(9) as u32).collect();
            let ast: Vec<u32> = (0..4).map(|_| 3 + rng.below(9) as u32).collect();
            let greedy = greedy_decode(&model, &code, &ast, 8).unwrap();
            assert!(greedy.len() <= 9);
            for alpha in [0.0, 0.7] {
                let one = beam_search(&model, &code, &ast, BeamConfig { width: 1, max_len: 8, alpha }).unwrap();
                assert_eq!(one[0].tokens, greedy);
            }
            let four = beam_search(&model, &code, &ast, BeamConfig { width: 4, max_len: 8, alpha: 0.0 }).unwrap();
            let one = beam_search(&model, &code, &ast, BeamConfig { width: 1, max_len: 8, alpha: 0.0 }).unwrap();
            assert!(four[0].score(0.0) >= one[0].score(0.0));
            assert!(four.len() <= 4);
            for h in &four {
                let again = sequence_log_prob(&model, &code, &ast, &h.tokens).unwrap();
                assert!((again - h.log_prob).abs() < 1e-5);
            }
            assert_eq!(four, beam_search(&model, &code, &ast, BeamConfig { width: 4, max_len: 8, alpha: 0.0 }).unwrap());
        }
    }

    #[test]
    fn decoding_respects_model_length_cap() {
        let model = tiny_model(1);
        let out = greedy_decode(&model, &[4, 5], &[6], 100).unwrap();
        assert!(out.len() <= 9);
        let beams = beam_search(&model, &[4, 5], &[6], BeamConfig { width: 3, max_len: 100, alpha: 0.5 }).unwrap();
        assert!(beams.iter().all(|h| h.tokens.len() <= 9));
    }
}
