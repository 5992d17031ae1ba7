use std::sync::Arc;

use rayon::prelude::*;

use super::{ComFormerModel, ModelError, Session};
use crate::bpe::PAD;
use crate::tensor::{AdamW, Prng};

/// One training triple of id sequences; `comment_ids` starts with SOS and
/// ends with EOS (possibly followed by PAD).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub code_ids: Vec<u32>,
    pub ast_ids: Vec<u32>,
    pub comment_ids: Vec<u32>,
}

impl Example {
    pub fn target_count(&self) -> usize {
        self.comment_ids.iter().skip(1).filter(|&&t| t != PAD).count()
    }
}

type LossAndGrads = (f64, Vec<Vec<f64>>);

/// Loss and parameter gradients of a batch, without updating anything.
/// The loss is the mean cross-entropy over all non-PAD target tokens of the
/// batch. Examples run in parallel on independent graphs; gradients are
/// reduced in batch order so the result does not depend on scheduling.
pub fn batch_gradients(model: &ComFormerModel, batch: &[Example], step: u64) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let total: usize = batch.iter().map(Example::target_count).sum();
    if total == 0 {
        return Err(ModelError::EmptyBatch);
    }
    let seed = model.config.seed;
    let results: Vec<Result<LossAndGrads, ModelError>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut s = Session::train(model, Prng::derived(seed, step, i as u64));
            let loss = s.example_loss(&ex.code_ids, &ex.ast_ids, &ex.comment_ids)?;
            let weight = ex.target_count() as f64 / total as f64;
            let weighted = s.graph.scale(loss, weight);
            let value = s.graph.value(weighted).item();
            s.graph.backward(weighted)?;
            Ok((value, s.param_grads()))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Vec<f64>>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| a.iter_mut().zip(b).for_each(|(x, y)| *x += y)),
        }
    }
    Ok((loss, grads.expect("non-empty batch")))
}

/// Teacher-forced step: forward, backward and one AdamW update. Returns the
/// batch loss before the update.
pub fn train_step(model: &mut ComFormerModel, opt: &mut AdamW, batch: &[Example]) -> Result<f64, ModelError> {
    let (loss, grads) = batch_gradients(model, batch, opt.step)?;
    opt.update(model.params.tensors.iter_mut().map(Arc::make_mut), &grads)?;
    Ok(loss)
}

/// Teacher-forced totals over a set of examples without dropout.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForcedEval {
    /// Mean cross-entropy per non-PAD target token.
    pub loss: f64,
    /// Fraction of non-PAD targets predicted exactly by the argmax.
    pub accuracy: f64,
    pub tokens: usize,
}

pub fn teacher_forced(model: &ComFormerModel, examples: &[Example]) -> Result<ForcedEval, ModelError> {
    let per: Vec<Result<(f64, usize, usize), ModelError>> = examples
        .par_iter()
        .map(|ex| {
            let mut s = Session::eval(model);
            let n = ex.comment_ids.len();
            if n < 2 {
                return Ok((0.0, 0, 0));
            }
            let (ctx, valid) = s.fuse(&ex.code_ids, &ex.ast_ids)?;
            let logits = s.decode(ctx, &valid, &ex.comment_ids[..n - 1])?;
            let logits = s.graph.value(logits);
            let (mut loss, mut correct, mut count) = (0.0, 0, 0);
            for (t, &target) in ex.comment_ids[1..].iter().enumerate() {
                if target == PAD {
                    continue;
                }
                let row = logits.row(t);
                loss -= crate::tensor::log_softmax(row)[target as usize];
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                correct += usize::from(best == target as usize);
                count += 1;
            }
            Ok((loss, correct, count))
        })
        .collect();
    let (mut loss, mut correct, mut tokens) = (0.0, 0, 0);
    for r in per {
        let (l, c, n) = r?;
        loss += l;
        correct += c;
        tokens += n;
    }
    if tokens == 0 {
        return Ok(ForcedEval::default());
    }
    Ok(ForcedEval { loss: loss / tokens as f64, accuracy: correct as f64 / tokens as f64, tokens })
}
