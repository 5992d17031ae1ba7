//! Translation metrics, corpus length statistics and the human-study sample
//! size.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid sampling spec: {0}")]
    InvalidSpec(String),
}

/// ROUGE-L recall weight.
pub const ROUGE_BETA: f64 = 1.2;
/// Floor applied to zero n-gram precisions in sentence-level BLEU.
pub const SENTENCE_BLEU_EPS: f64 = 1e-9;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// (clipped matches, candidate n-gram total) for one pair.
fn clipped<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let refs = ngram_counts(reference, n);
    let matched = ngram_counts(cand, n).into_iter().map(|(g, c)| c.min(refs.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0)
}

/// Cumulative BLEU_N = BP · exp(Σ_{n≤N} ln(pₙ)/N) for N = 1..4.
fn cumulative(precisions: [f64; 4], bp: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for n in 0..4 {
        log_sum += precisions[n].ln();
        out[n] = if log_sum == f64::NEG_INFINITY { 0.0 } else { bp * (log_sum / (n + 1) as f64).exp() };
    }
    out
}

/// Corpus-level BLEU_1..4 with clipped n-gram counts and brevity penalty
/// aggregated over the whole corpus.
pub fn bleu<T: Eq + Hash + Sync, C: AsRef<[T]> + Sync>(candidates: &[C], references: &[C]) -> Result<[f64; 4], MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        let (c, r) = (c.as_ref(), r.as_ref());
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let (m, t) = clipped(c, r, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
    }
    // an order with no candidate n-grams anywhere contributes a neutral factor
    let p = std::array::from_fn(|i| if total[i] == 0 { 1.0 } else { matched[i] as f64 / total[i] as f64 });
    Ok(cumulative(p, brevity_penalty(cand_len, ref_len)))
}

/// Sentence BLEU_4 with zero precisions floored at [`SENTENCE_BLEU_EPS`].
pub fn sentence_bleu<T: Eq + Hash>(cand: &[T], reference: &[T]) -> f64 {
    let p = std::array::from_fn(|i| {
        let (m, t) = clipped(cand, reference, i + 1);
        if m == 0 || t == 0 {
            SENTENCE_BLEU_EPS
        } else {
            m as f64 / t as f64
        }
    });
    cumulative(p, brevity_penalty(cand.len(), reference.len()))[3]
}

/// Exact-match alignment: each candidate token, left to right, takes the
/// reference position right after the previous match when that continues a
/// chunk, else the leftmost unused occurrence. Returns (matches, chunks).
fn align<T: Eq>(cand: &[T], reference: &[T]) -> (usize, usize) {
    let mut used = vec![false; reference.len()];
    let mut prev: Option<(usize, usize)> = None;
    let (mut matches, mut chunks) = (0, 0);
    for (i, tok) in cand.iter().enumerate() {
        let follow = prev.and_then(|(pi, pj)| (pi + 1 == i).then_some(pj + 1)).filter(|&j| j < reference.len() && !used[j] && reference[j] == *tok);
        let pick = follow.or_else(|| (0..reference.len()).find(|&j| !used[j] && reference[j] == *tok));
        if let Some(j) = pick {
            used[j] = true;
            matches += 1;
            if follow.is_none() {
                chunks += 1;
            }
            prev = Some((i, j));
        }
    }
    (matches, chunks)
}

/// METEOR with exact matching only.
pub fn meteor<T: Eq>(cand: &[T], reference: &[T]) -> f64 {
    let (m, chunks) = align(cand, reference);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    fmean * (1.0 - penalty)
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// (precision, recall) of the longest common subsequence.
pub fn rouge_l_pr<T: Eq>(cand: &[T], reference: &[T]) -> (f64, f64) {
    if cand.is_empty() || reference.is_empty() {
        return (0.0, 0.0);
    }
    let l = lcs_len(cand, reference) as f64;
    (l / cand.len() as f64, l / reference.len() as f64)
}

pub fn rouge_l<T: Eq>(cand: &[T], reference: &[T]) -> f64 {
    let (p, r) = rouge_l_pr(cand, reference);
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingSpec {
    pub e: f64,
    pub z: f64,
    pub size: usize,
    pub n0: f64,
    pub min: usize,
}

impl SamplingSpec {
    /// `n₀ = z²·0.25/e²`, `MIN = ⌈n₀ / (1 + (n₀−1)/size)⌉`, clamped to `size`.
    pub fn new(e: f64, z: f64, size: usize) -> Result<Self, MetricError> {
        if !(e > 0.0 && e < 1.0) {
            return Err(MetricError::InvalidSpec(format!("error margin {e} not in (0, 1)")));
        }
        if !(z > 0.0 && z.is_finite()) {
            return Err(MetricError::InvalidSpec(format!("z-score {z} must be positive")));
        }
        if size == 0 {
            return Err(MetricError::InvalidSpec("population size must be at least 1".into()));
        }
        let n0 = z * z * 0.25 / (e * e);
        let exact = n0 / (1.0 + (n0 - 1.0) / size as f64);
        // the tolerance absorbs rounding when the quotient is an exact integer
        let min = ((exact - 1e-9).ceil() as usize).clamp(1, size);
        Ok(SamplingSpec { e, z, size, n0, min })
    }
}

pub fn sample_size(e: f64, z: f64, size: usize) -> Result<usize, MetricError> {
    Ok(SamplingSpec::new(e, z, size)?.min)
}

/// Two-sided standard-normal quantile for a confidence level, e.g. 0.95 → 1.96.
pub fn z_for_confidence(confidence: f64) -> Result<f64, MetricError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(MetricError::InvalidSpec(format!("confidence {confidence} not in (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - confidence) / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthStats {
    pub avg: f64,
    pub mode: usize,
    pub median: f64,
    /// (threshold, percentage of lengths strictly below it)
    pub under: Vec<(usize, f64)>,
}

impl LengthStats {
    pub fn of(lengths: &[usize], thresholds: &[usize]) -> Result<Self, MetricError> {
        if lengths.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let n = lengths.len();
        let avg = lengths.iter().sum::<usize>() as f64 / n as f64;
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &l in lengths {
            *counts.entry(l).or_insert(0) += 1;
        }
        let mode = counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&l, _)| l).expect("non-empty");
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let median = if n % 2 == 1 { sorted[n / 2] as f64 } else { (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0 };
        let under = thresholds.iter().map(|&t| (t, 100.0 * lengths.iter().filter(|&&l| l < t).count() as f64 / n as f64)).collect();
        Ok(LengthStats { avg, mode, median, under })
    }
}

pub const CODE_THRESHOLDS: [usize; 3] = [100, 150, 200];
pub const COMMENT_THRESHOLDS: [usize; 3] = [20, 30, 50];

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub pairs: usize,
    pub code: LengthStats,
    pub comment: LengthStats,
}

/// Length statistics over raw code-token and comment-token counts.
pub fn corpus_stats(code_lens: &[usize], comment_lens: &[usize]) -> Result<CorpusStats, MetricError> {
    if code_lens.len() != comment_lens.len() {
        return Err(MetricError::LengthMismatch { candidates: code_lens.len(), references: comment_lens.len() });
    }
    Ok(CorpusStats {
        pairs: code_lens.len(),
        code: LengthStats::of(code_lens, &CODE_THRESHOLDS)?,
        comment: LengthStats::of(comment_lens, &COMMENT_THRESHOLDS)?,
    })
}

impl CorpusStats {
    pub fn render(&self) -> String {
        let mut out = format!("pairs: {}\n", self.pairs);
        for (name, s) in [("code", &self.code), ("comment", &self.comment)] {
            let _ = writeln!(out, "[{name}]\navg: {:.2}\nmode: {}\nmedian: {}", s.avg, s.mode, s.median);
            for (t, pct) in &s.under {
                let _ = writeln!(out, "under_{t}: {pct:.2}%");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleScore {
    pub id: u64,
    pub bleu4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub code_len: usize,
    pub bucket: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketStats {
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
    pub meteor: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub meteor: f64,
    pub rouge_l: f64,
    pub examples: Vec<ExampleScore>,
    pub buckets: Vec<BucketStats>,
    pub bucket_width: usize,
}

/// One evaluated example: id, candidate tokens, reference tokens and the
/// original code-token length used for bucketing.
pub struct EvalItem<'a, T> {
    pub id: u64,
    pub candidate: &'a [T],
    pub reference: &'a [T],
    pub code_len: usize,
}

impl EvalReport {
    pub fn compute<T: Eq + Hash + Sync>(items: &[EvalItem<'_, T>], bucket_width: usize) -> Result<Self, MetricError> {
        if items.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let width = bucket_width.max(1);
        let cands: Vec<&[T]> = items.iter().map(|i| i.candidate).collect();
        let refs: Vec<&[T]> = items.iter().map(|i| i.reference).collect();
        let bleu = bleu(&cands, &refs)?;
        let examples: Vec<ExampleScore> = items
            .par_iter()
            .map(|it| ExampleScore {
                id: it.id,
                bleu4: sentence_bleu(it.candidate, it.reference),
                meteor: meteor(it.candidate, it.reference),
                rouge_l: rouge_l(it.candidate, it.reference),
                code_len: it.code_len,
                bucket: it.code_len / width,
            })
            .collect();
        let n = examples.len() as f64;
        let meteor = examples.iter().map(|e| e.meteor).sum::<f64>() / n;
        let rouge = examples.iter().map(|e| e.rouge_l).sum::<f64>() / n;
        let mut buckets: Vec<BucketStats> = Vec::new();
        let mut keys: Vec<usize> = examples.iter().map(|e| e.bucket).collect();
        keys.sort_unstable();
        keys.dedup();
        for b in keys {
            let members: Vec<&ExampleScore> = examples.iter().filter(|e| e.bucket == b).collect();
            let c = members.len() as f64;
            buckets.push(BucketStats {
                lo: b * width,
                hi: (b + 1) * width - 1,
                count: members.len(),
                meteor: members.iter().map(|e| e.meteor).sum::<f64>() / c,
                rouge_l: members.iter().map(|e| e.rouge_l).sum::<f64>() / c,
            });
        }
        Ok(EvalReport { bleu, meteor, rouge_l: rouge, examples, buckets, bucket_width: width })
    }

    /// Key-value text report; scores are percentages with three decimals.
    pub fn render_text(&self) -> String {
        let mut out = String::from("[corpus]\n");
        let _ = writeln!(out, "examples: {}", self.examples.len());
        for (n, b) in self.bleu.iter().enumerate() {
            let _ = writeln!(out, "bleu_{}: {:.3}", n + 1, 100.0 * b);
        }
        let _ = writeln!(out, "meteor: {:.3}\nrouge_l: {:.3}", 100.0 * self.meteor, 100.0 * self.rouge_l);
        let _ = writeln!(out, "\n[buckets]\nwidth: {}", self.bucket_width);
        for b in &self.buckets {
            let _ = writeln!(out, "{}-{}: count={} meteor={:.3} rouge_l={:.3}", b.lo, b.hi, b.count, 100.0 * b.meteor, 100.0 * b.rouge_l);
        }
        out
    }

    /// Tab-separated per-example table with a header row.
    pub fn render_table(&self) -> String {
        let mut out = String::from("id\tbleu4_sentence\tmeteor\trouge_l\tcode_len\tbucket\n");
        for e in &self.examples {
            let w = self.bucket_width;
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}-{}",
                e.id,
                e.bleu4,
                e.meteor,
                e.rouge_l,
                e.code_len,
                e.bucket * w,
                (e.bucket + 1) * w - 1
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_examples() {
        let same = [toks("get the name"), toks("set value")];
        assert_eq!(bleu(&same, &same).unwrap(), [1.0; 4]);
        let b = bleu(&[toks("a b")], &[toks("a c")]).unwrap();
        assert_eq!(b[1], 0.0);

        let b = bleu(&[toks("the the the")], &[toks("the cat")]).unwrap();
        assert!((b[0] - 1.0 / 3.0).abs() < 1e-6);

        let b = bleu(&[toks("the cat")], &[toks("the cat sat")]).unwrap();
        assert!((b[0] - (-0.5f64).exp()).abs() < 1e-6);
        assert!((b[0] - 0.6065).abs() < 1e-4);

        assert_eq!(bleu::<&str, Vec<&str>>(&[], &[]), Err(MetricError::EmptyCorpus));
        assert_eq!(bleu(&[toks("a")], &[]), Err(MetricError::LengthMismatch { candidates: 1, references: 0 }));
    }

    #[test]
    fn sentence_bleu_is_smoothed() {
        assert!((sentence_bleu(&toks("a b c d"), &toks("a b c d")) - 1.0).abs() < 1e-12);
        let s = sentence_bleu(&toks("a x"), &toks("a y"));
        assert!(s > 0.0 && s < 1e-3);
    }

    #[test]
    fn meteor_examples() {
        assert_eq!(meteor(&toks("a b"), &toks("c d")), 0.0);
        assert!((meteor(&toks("update"), &toks("update")) - 0.5).abs() < 1e-12);
        let s = meteor(&toks("add the member"), &toks("add the member"));
        assert!((s - (1.0 - 1.0 / 54.0)).abs() < 1e-6);
        // swapped halves: two chunks
        let (m, ch) = align(&toks("c d a b"), &toks("a b c d"));
        assert_eq!((m, ch), (4, 2));
        // repeated token prefers continuing the current chunk
        assert_eq!(align(&toks("x a b"), &toks("a x a b")), (3, 1));
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b"), &toks("a b")), 1.0);
        assert_eq!(rouge_l(&toks("a b"), &toks("c d")), 0.0);
        assert!((rouge_l(&toks("a b c d"), &toks("a c b d")) - 0.75).abs() < 1e-6);
        assert_eq!(rouge_l::<&str>(&[], &toks("a")), 0.0);
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(sample_size(0.05, 1.96, 20000), Ok(377));
        assert_eq!(sample_size(0.05, 1.96, 1), Ok(1));
        let s = SamplingSpec::new(0.1, 1.96, 10000).unwrap();
        assert!((s.n0 - 96.04).abs() < 1e-9);
        assert_eq!(s.min, 96);
        assert!(matches!(sample_size(0.0, 1.96, 10), Err(MetricError::InvalidSpec(_))));
        assert!(matches!(sample_size(0.05, -1.0, 10), Err(MetricError::InvalidSpec(_))));
        assert!(matches!(sample_size(0.05, 1.96, 0), Err(MetricError::InvalidSpec(_))));
        let z = z_for_confidence(0.95).unwrap();
        assert!((z - 1.96).abs() < 1e-3);
        assert_eq!(sample_size(0.05, z, 20000), Ok(377));
    }

    #[test]
    fn corpus_stats_examples() {
        let s = corpus_stats(&[7], &[3]).unwrap();
        assert_eq!((s.code.avg, s.code.mode, s.code.median), (7.0, 7, 7.0));
        assert!(s.code.under.iter().all(|&(_, p)| p == 100.0));
        let s = LengthStats::of(&[2, 2, 10], &[5]).unwrap();
        assert!((s.avg - 4.67).abs() < 0.01);
        assert_eq!((s.mode, s.median), (2, 2.0));
        assert!((s.under[0].1 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(corpus_stats(&[], &[]), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn report_buckets_and_identity() {
        let texts: Vec<Vec<&str>> = (0..10).map(|i| toks(if i % 2 == 0 { "returns the sum" } else { "sets the name field" })).collect();
        let items: Vec<EvalItem<&str>> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| EvalItem { id: i as u64, candidate: t, reference: t, code_len: if i < 3 { 10 } else { 30 } })
            .collect();
        let r = EvalReport::compute(&items, 25).unwrap();
        assert_eq!(r.bleu, [1.0; 4]);
        assert_eq!(r.rouge_l, 1.0);
        assert_eq!(r.buckets.iter().map(|b| b.count).collect::<Vec<_>>(), vec![3, 7]);
        assert_eq!((r.buckets[1].lo, r.buckets[1].hi), (25, 49));
        assert_eq!(r.render_table().lines().count(), 11);
        assert!(r.render_text().contains("bleu_4: 100.000"));
    }

    fn words() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..6, 0..12)
    }

    proptest! {
        #[test]
        fn scores_in_unit_interval(c in words(), r in words()) {
            for s in [meteor(&c, &r), rouge_l(&c, &r), sentence_bleu(&c, &r)] {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            if !c.is_empty() && !r.is_empty() {
                let b = bleu(std::slice::from_ref(&c), std::slice::from_ref(&r)).unwrap();
                prop_assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn self_scores(c in prop::collection::vec(0u8..6, 1..12)) {
            prop_assert_eq!(rouge_l(&c, &c), 1.0);
            prop_assert_eq!(bleu(std::slice::from_ref(&c), std::slice::from_ref(&c)).unwrap(), [1.0; 4]);
            let m = c.len() as f64;
            prop_assert!((meteor(&c, &c) - (1.0 - 0.5 / (m * m * m))).abs() < 1e-12);
        }

        #[test]
        fn rouge_swap_swaps_p_and_r(c in words(), r in words()) {
            let (p, rec) = rouge_l_pr(&c, &r);
            let (p2, rec2) = rouge_l_pr(&r, &c);
            prop_assert_eq!((p, rec), (rec2, p2));
            if c.len() == r.len() {
                prop_assert!((rouge_l(&c, &r) - rouge_l(&r, &c)).abs() < 1e-12);
            }
        }

        #[test]
        fn bleu_ignores_order(pairs in prop::collection::vec((words(), words()), 1..6), rot in 0usize..6) {
            let (c, r): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let k = rot % pairs.len();
            let (mut c2, mut r2) = (c.clone(), r.clone());
            c2.rotate_left(k);
            r2.rotate_left(k);
            prop_assert_eq!(bleu(&c, &r).unwrap(), bleu(&c2, &r2).unwrap());
        }

        #[test]
        fn sample_size_monotone(size in 1usize..50_000, e in 0.01f64..0.3) {
            let base = sample_size(e, 1.96, size).unwrap();
            prop_assert!(base <= size);
            prop_assert!(sample_size(e, 1.96, size + 1).unwrap() >= base);
            prop_assert!(sample_size(e * 1.1, 1.96, size).unwrap() <= base);
        }
    }
}
