use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use super::prep::analyze_all;
use super::{analyze, encode_example, ingest, preprocess, split, train_tokenizer, CorpusPair, PipelineError, ProcessedExample, RunConfig, Split};
use crate::bpe::{BpeModel, CONTROL_COUNT};
use crate::generator::{beam_search, BeamConfig};
use crate::java::lex;
use crate::metrics::{corpus_stats, sample_size, z_for_confidence, CorpusStats, EvalItem, EvalReport, SamplingSpec};
use crate::model::{load_checkpoint, save_checkpoint, teacher_forced, train_step, ComFormerModel, Example};
use crate::tensor::{AdamW, Prng};

/// Paths inside a run's output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn bpe_merges(&self) -> PathBuf {
        self.root.join("bpe").join("merges.txt")
    }
    pub fn bpe_vocab(&self) -> PathBuf {
        self.root.join("bpe").join("vocab.txt")
    }
    pub fn data(&self, split: &str) -> PathBuf {
        self.root.join("data").join(format!("{split}.jsonl"))
    }
    pub fn skipped(&self) -> PathBuf {
        self.root.join("data").join("skipped.tsv")
    }
    /// Best-validation checkpoint.
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }
    /// Latest checkpoint with optimizer state, for resuming.
    pub fn last(&self) -> PathBuf {
        self.root.join("last")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.log")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn sample(&self) -> PathBuf {
        self.root.join("sample").join("human_study.tsv")
    }

    pub fn load_bpe(&self) -> Result<BpeModel, PipelineError> {
        Ok(BpeModel::load(&self.bpe_merges(), &self.bpe_vocab())?)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(PipelineError::io(dir))?;
    }
    fs::write(path, contents).map_err(PipelineError::io(path))
}

pub fn write_examples(path: &Path, examples: &[ProcessedExample]) -> Result<(), PipelineError> {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    write(path, &out)
}

pub fn read_examples(path: &Path) -> Result<Vec<ProcessedExample>, PipelineError> {
    let text = fs::read_to_string(path).map_err(PipelineError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PipelineError::Format(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

/// Ingests and splits the configured corpus.
pub fn load_split(cfg: &RunConfig) -> Result<(Split, usize), PipelineError> {
    let report = ingest(cfg.format, &cfg.corpus, cfg.corpus_comments.as_deref())?;
    Ok((split(&report.pairs, cfg.n_test, cfg.n_valid, cfg.seed)?, report.skipped.len()))
}

/// Trains the tokenizer on the training split and saves it.
pub fn run_train_bpe(cfg: &RunConfig, layout: &RunLayout) -> Result<BpeModel, PipelineError> {
    let (split, _) = load_split(cfg)?;
    let (analyzed, _) = analyze_all(&split.train);
    let analyzed: Vec<_> = analyzed.into_iter().map(|(_, a)| a).collect();
    let bpe = train_tokenizer(&analyzed, cfg.bpe_vocab_size)?;
    fs::create_dir_all(layout.root.join("bpe")).map_err(PipelineError::io(layout.root.join("bpe")))?;
    bpe.save(&layout.bpe_merges(), &layout.bpe_vocab())?;
    cfg.save(&layout.config())?;
    Ok(bpe)
}

/// Per-split (processed, skipped) counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreprocessCounts {
    pub train: (usize, usize),
    pub valid: (usize, usize),
    pub test: (usize, usize),
    pub malformed: usize,
}

/// Encodes all three splits with the saved tokenizer and writes them out
/// together with the skip manifest.
pub fn run_preprocess(cfg: &RunConfig, layout: &RunLayout) -> Result<PreprocessCounts, PipelineError> {
    let (split, malformed) = load_split(cfg)?;
    let bpe = layout.load_bpe()?;
    let model_cfg = cfg.model_config(bpe.vocab_size());
    let mut manifest = String::from("split\tid\treason\tdetail\n");
    let mut counts = PreprocessCounts { malformed, ..PreprocessCounts::default() };
    for (name, pairs, slot) in
        [("train", &split.train, &mut counts.train), ("valid", &split.valid, &mut counts.valid), ("test", &split.test, &mut counts.test)]
    {
        let r = preprocess(pairs, &bpe, &model_cfg);
        for line in r.manifest().lines().skip(1) {
            manifest.push_str(&format!("{name}\t{line}\n"));
        }
        write_examples(&layout.data(name), &r.examples)?;
        *slot = (r.examples.len(), r.skipped.len());
    }
    write(&layout.skipped(), &manifest)?;
    cfg.save(&layout.config())?;
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub last_loss: Option<f64>,
    pub best_valid: Option<f64>,
}

fn batches_per_epoch(n: usize, batch: usize) -> u64 {
    n.div_ceil(batch) as u64
}

/// Epoch loop of teacher-forced steps. Batches follow a per-epoch seeded
/// shuffle; after each epoch the validation loss decides whether the
/// best checkpoint is replaced, and `last/` is refreshed for resuming.
/// `progress` sees every (step, loss).
pub fn train(
    cfg: &RunConfig,
    train_set: &[ProcessedExample],
    valid_set: &[ProcessedExample],
    vocab_size: usize,
    layout: &RunLayout,
    resume: bool,
    progress: &mut dyn FnMut(u64, f64),
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let train_ex: Vec<Example> = train_set.iter().map(ProcessedExample::example).collect();
    let valid_ex: Vec<Example> = valid_set.iter().map(ProcessedExample::example).collect();

    let (mut model, mut opt, mut best) = if resume {
        let ck = load_checkpoint(&layout.last())?;
        let opt = ck.optimizer.ok_or_else(|| PipelineError::Format("last/ checkpoint has no optimizer state".into()))?;
        let best = fs::read_to_string(layout.checkpoint().join("valid_loss")).ok().and_then(|s| s.trim().parse::<f64>().ok());
        (ck.model, opt, best)
    } else {
        let model = ComFormerModel::new(cfg.model_config(vocab_size))?;
        let snapshot: Vec<_> = model.params.tensors.iter().map(|t| (**t).clone()).collect();
        let opt = AdamW::new(cfg.optimizer(), &snapshot);
        (model, opt, None)
    };
    if model.config.vocab_size != vocab_size {
        return Err(PipelineError::Config(format!("checkpoint vocabulary {} differs from tokenizer {vocab_size}", model.config.vocab_size)));
    }
    fs::create_dir_all(&layout.root).map_err(PipelineError::io(&layout.root))?;
    let log_path = layout.train_log();
    let mut log =
        fs::OpenOptions::new().create(true).write(true).append(resume).truncate(!resume).open(&log_path).map_err(PipelineError::io(&log_path))?;

    let per_epoch = batches_per_epoch(train_ex.len(), cfg.batch_size);
    let limit = cfg.max_steps.unwrap_or(u64::MAX);
    let mut last_loss = None;
    let start_epoch = opt.step.checked_div(per_epoch).unwrap_or(0) as usize;
    let fresh = !resume;
    if fresh {
        save_checkpoint(&layout.checkpoint(), &model, None, 0)?;
        save_checkpoint(&layout.last(), &model, Some(&opt), 0)?;
    }
    'epochs: for epoch in start_epoch..cfg.epochs {
        if per_epoch == 0 || opt.step >= limit {
            break;
        }
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        order.shuffle(Prng::derived(cfg.seed, epoch as u64, 0x5EED).inner());
        let skip = (opt.step - epoch as u64 * per_epoch) as usize;
        for chunk in order.chunks(cfg.batch_size).skip(skip) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_ex[i].clone()).collect();
            let loss = train_step(&mut model, &mut opt, &batch)?;
            writeln!(log, "{}\t{loss:.6}", opt.step).map_err(PipelineError::io(&log_path))?;
            progress(opt.step, loss);
            last_loss = Some(loss);
            if opt.step >= limit {
                save_checkpoint(&layout.last(), &model, Some(&opt), opt.step)?;
                if valid_ex.is_empty() {
                    save_checkpoint(&layout.checkpoint(), &model, None, opt.step)?;
                }
                break 'epochs;
            }
        }
        save_checkpoint(&layout.last(), &model, Some(&opt), opt.step)?;
        if valid_ex.is_empty() {
            save_checkpoint(&layout.checkpoint(), &model, None, opt.step)?;
            continue;
        }
        let v = teacher_forced(&model, &valid_ex)?.loss;
        writeln!(log, "# epoch {}\tvalid_loss {v:.6}", epoch + 1).map_err(PipelineError::io(&log_path))?;
        if best.is_none_or(|b| v < b) {
            best = Some(v);
            save_checkpoint(&layout.checkpoint(), &model, None, opt.step)?;
            write(&layout.checkpoint().join("valid_loss"), &format!("{v}\n"))?;
        }
    }
    cfg.save(&layout.checkpoint().join("config.json"))?;
    Ok(TrainOutcome { checkpoint: layout.checkpoint(), steps: opt.step, last_loss, best_valid: best })
}

/// A frozen model and its tokenizer.
pub struct Inference {
    pub model: ComFormerModel,
    pub bpe: BpeModel,
    pub beam: BeamConfig,
}

impl Inference {
    pub fn new(model: ComFormerModel, bpe: BpeModel, width: usize, alpha: f64) -> Self {
        let beam = BeamConfig { width, max_len: model.config.max_comment_len, alpha };
        Inference { model, bpe, beam }
    }

    pub fn load(checkpoint: &Path, layout: &RunLayout, width: usize, alpha: f64) -> Result<Self, PipelineError> {
        let ck = load_checkpoint(checkpoint)?;
        let bpe = layout.load_bpe()?;
        if bpe.vocab_size() != ck.model.config.vocab_size {
            return Err(PipelineError::Config(format!("tokenizer has {} ids, checkpoint expects {}", bpe.vocab_size(), ck.model.config.vocab_size)));
        }
        Ok(Inference::new(ck.model, bpe, width, alpha))
    }

    /// Best beam hypothesis as comment words, specials removed.
    pub fn predict(&self, code_ids: &[u32], ast_ids: &[u32]) -> Result<Vec<String>, PipelineError> {
        let beams = beam_search(&self.model, code_ids, ast_ids, self.beam)?;
        let ids: Vec<u32> = beams[0].content().iter().copied().filter(|&id| id >= CONTROL_COUNT).collect();
        Ok(self.bpe.decode_words(&ids)?)
    }

    /// Full preprocessing of one Java method followed by beam search.
    pub fn comment_for_source(&self, source: &str) -> Result<String, PipelineError> {
        let analyzed = analyze(source, "")?;
        let ex = encode_example(0, &analyzed, &self.bpe, &self.model.config);
        Ok(self.predict(&ex.code_ids, &ex.ast_ids)?.join(" "))
    }
}

/// Generates for every test example, scores the corpus and writes
/// `report.txt`, `examples.tsv` and `predictions.tsv` under `out_dir`.
pub fn evaluate(inf: &Inference, test: &[ProcessedExample], bucket_width: usize, out_dir: &Path) -> Result<EvalReport, PipelineError> {
    let predictions: Vec<Vec<String>> = test.par_iter().map(|ex| inf.predict(&ex.code_ids, &ex.ast_ids)).collect::<Result<_, _>>()?;
    let items: Vec<EvalItem<String>> = test
        .iter()
        .zip(&predictions)
        .map(|(ex, cand)| EvalItem { id: ex.id, candidate: cand, reference: &ex.reference, code_len: ex.code_len })
        .collect();
    let report = EvalReport::compute(&items, bucket_width)?;
    write(&out_dir.join("report.txt"), &report.render_text())?;
    write(&out_dir.join("examples.tsv"), &report.render_table())?;
    let mut preds = String::from("id\tgenerated\treference\n");
    for (ex, cand) in test.iter().zip(&predictions) {
        preds.push_str(&format!("{}\t{}\t{}\n", ex.id, cand.join(" "), ex.reference.join(" ")));
    }
    write(&out_dir.join("predictions.tsv"), &preds)?;
    Ok(report)
}

/// Length statistics of raw pairs: code length is the lexer token count and
/// comment length the whitespace word count. Pairs whose code does not lex
/// are left out; their number is returned alongside.
pub fn corpus_length_stats(pairs: &[CorpusPair]) -> Result<(CorpusStats, usize), PipelineError> {
    let lens: Vec<Option<(usize, usize)>> =
        pairs.par_iter().map(|p| lex(&p.code).ok().map(|t| (t.len(), p.comment.split_whitespace().count()))).collect();
    let (code, comment): (Vec<usize>, Vec<usize>) = lens.iter().flatten().copied().unzip();
    let failed = lens.len() - code.len();
    Ok((corpus_stats(&code, &comment)?, failed))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanStudyRow {
    pub code: String,
    pub generated: String,
    pub reference: String,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n").replace('\r', "\\r")
}

/// Draws `MIN` rows uniformly without replacement (all rows when fewer) and
/// writes them without any system or id column.
pub fn sample_human_study(rows: &[HumanStudyRow], e: f64, confidence: f64, seed: u64, out: &Path) -> Result<SamplingSpec, PipelineError> {
    if rows.is_empty() {
        return Err(PipelineError::Format("no rows to sample from".into()));
    }
    let z = z_for_confidence(confidence)?;
    let spec = SamplingSpec::new(e, z, rows.len())?;
    debug_assert_eq!(spec.min, sample_size(e, z, rows.len())?);
    let picked = index::sample(Prng::new(seed).inner(), rows.len(), spec.min);
    let mut text = String::from("code\tgenerated_comment\treference_comment\n");
    for i in picked.iter() {
        let r = &rows[i];
        text.push_str(&format!("{}\t{}\t{}\n", escape(&r.code), escape(&r.generated), escape(&r.reference)));
    }
    write(out, &text)?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(n: usize) -> Vec<HumanStudyRow> {
        (0..n).map(|i| HumanStudyRow { code: format!("void m{i}() {{\n}}"), generated: format!("g{i}"), reference: format!("r{i}") }).collect()
    }

    #[test]
    fn human_study_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("s.tsv");
        let spec = sample_human_study(&rows(20_000), 0.05, 0.95, 1, &out).unwrap();
        assert_eq!(spec.min, 377);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 378);
        assert!(text.lines().nth(1).unwrap().contains("\\n"));

        let spec = sample_human_study(&rows(100), 0.05, 0.95, 1, &out).unwrap();
        assert_eq!(spec.min, 80);
        let a = fs::read_to_string(&out).unwrap();
        sample_human_study(&rows(100), 0.05, 0.95, 1, &out).unwrap();
        assert_eq!(a, fs::read_to_string(&out).unwrap());

        sample_human_study(&rows(1), 0.05, 0.95, 1, &out).unwrap();
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 2);
    }

    #[test]
    fn length_stats_skip_unlexable() {
        let pairs = [
            CorpusPair { id: 0, code: "int f() { return 1; }".into(), comment: "returns one".into() },
            CorpusPair { id: 1, code: "int g() { return '\\q; }".into(), comment: "broken".into() },
        ];
        let (stats, failed) = corpus_length_stats(&pairs).unwrap();
        assert_eq!((stats.pairs, failed), (1, 1));
        assert_eq!(stats.code.avg, 9.0);
        assert_eq!(stats.comment.avg, 2.0);
    }

    #[test]
    fn example_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ex =
            ProcessedExample { id: 4, code_ids: vec![7, 8], ast_ids: vec![9], comment_ids: vec![1, 10, 2], code_len: 3, reference: vec!["x".into()] };
        let path = dir.path().join("d/t.jsonl");
        write_examples(&path, &[ex.clone(), ex.clone()]).unwrap();
        assert_eq!(read_examples(&path).unwrap(), vec![ex.clone(), ex]);
        fs::write(&path, "{oops\n").unwrap();
        assert!(matches!(read_examples(&path), Err(PipelineError::Format(_))));
    }
}
