use std::fs;
use std::path::{Path, PathBuf};

use comformer::bpe::EOS;
use comformer::generator::greedy_decode;
use comformer::java::{is_label, normalize_comment, parse_source};
use comformer::model::load_checkpoint;
use comformer::pipeline::{
    evaluate, ingest, read_examples, run_preprocess, run_train_bpe, split, train, CorpusFormat, Inference, PipelineError, RunConfig, RunLayout,
    TrainOutcome,
};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy64.jsonl")
}

fn prepared(root: &Path, cfg: &RunConfig) -> (RunLayout, usize) {
    let layout = RunLayout::new(root);
    let bpe = run_train_bpe(cfg, &layout).unwrap();
    run_preprocess(cfg, &layout).unwrap();
    (layout, bpe.vocab_size())
}

fn fit(cfg: &RunConfig, layout: &RunLayout, vocab: usize, resume: bool) -> (TrainOutcome, Vec<(u64, f64)>) {
    let train_set = read_examples(&layout.data("train")).unwrap();
    let valid_set = read_examples(&layout.data("valid")).unwrap();
    let mut seen = Vec::new();
    let out = train(cfg, &train_set, &valid_set, vocab, layout, resume, &mut |s, l| seen.push((s, l))).unwrap();
    (out, seen)
}

#[test]
fn preprocess_conserves_pairs_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::toy(fixture(), dir.path());
    let (layout, _) = prepared(dir.path(), &cfg);
    let bpe = layout.load_bpe().unwrap();
    let pairs = ingest(CorpusFormat::Jsonl, &fixture(), None).unwrap().pairs;
    let s = split(&pairs, cfg.n_test, cfg.n_valid, cfg.seed).unwrap();
    assert_eq!(s.train.len() + s.valid.len() + s.test.len(), pairs.len());

    let mut total = 0;
    for name in ["train", "valid", "test"] {
        let examples = read_examples(&layout.data(name)).unwrap();
        total += examples.len();
        for ex in &examples {
            let labels = bpe.decode_words(&ex.ast_ids).unwrap();
            let (_, root) = parse_source(&pairs[ex.id as usize].code).unwrap();
            assert!(labels.iter().all(|l| is_label(l)));
            assert_eq!(labels.len(), root.node_count().min(cfg.model.max_ast_len));
            assert!(ex.comment_ids.len() <= cfg.model.max_comment_len + 1);
            assert!(ex.code_ids.iter().chain(&ex.ast_ids).all(|&id| (id as usize) < bpe.vocab_size()));
        }
    }
    let skipped = fs::read_to_string(layout.skipped()).unwrap().lines().count() - 1;
    assert_eq!(total + skipped, pairs.len());
    assert!(layout.config().exists());
}

#[test]
fn zero_epochs_saves_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { epochs: 0, ..RunConfig::toy(fixture(), dir.path()) };
    let (layout, vocab) = prepared(dir.path(), &cfg);
    let (out, seen) = fit(&cfg, &layout, vocab, false);
    assert_eq!((out.steps, seen.len()), (0, 0));
    let ck = load_checkpoint(&out.checkpoint).unwrap();
    assert_eq!(ck.step, 0);
    let fresh = comformer::model::ComFormerModel::new(cfg.model_config(vocab)).unwrap();
    assert_eq!(ck.model.params.tensors, fresh.params.tensors);
    assert!(out.checkpoint.join("config.json").exists());
}

#[test]
fn resume_reproduces_losses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { epochs: 4, ..RunConfig::toy(fixture(), dir.path().join("full")) };
    let (layout, vocab) = prepared(&cfg.out_dir, &cfg);
    let (_, straight) = fit(&cfg, &layout, vocab, false);
    assert_eq!(straight.len(), 12);

    let cut = RunConfig { max_steps: Some(5), out_dir: dir.path().join("cut"), ..cfg.clone() };
    let (cut_layout, _) = prepared(&cut.out_dir, &cut);
    let (first, head) = fit(&cut, &cut_layout, vocab, false);
    assert_eq!(first.steps, 5);
    let rest = RunConfig { out_dir: cut.out_dir.clone(), ..cfg.clone() };
    let (_, tail) = fit(&rest, &cut_layout, vocab, true);

    assert_eq!([head, tail].concat(), straight);
    for file in ["train.log", "checkpoint/params.bin", "checkpoint/valid_loss", "last/params.bin", "last/optimizer.bin"] {
        assert_eq!(fs::read(layout.root.join(file)).unwrap(), fs::read(cut_layout.root.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn overfit_run_regenerates_training_comments() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { n_test: 0, n_valid: 0, epochs: 200, ..RunConfig::toy(fixture(), dir.path()) };
    let (layout, vocab) = prepared(dir.path(), &cfg);
    let (out, _) = fit(&cfg, &layout, vocab, false);
    let last = out.last_loss.unwrap();
    assert!(last < 0.1, "final train loss {last}");

    let inf = Inference::load(&out.checkpoint, &layout, 1, 0.0).unwrap();
    let pairs = ingest(CorpusFormat::Jsonl, &fixture(), None).unwrap().pairs;
    let train_set = read_examples(&layout.data("train")).unwrap();
    let mut exact = 0;
    for ex in &train_set {
        let p = &pairs[ex.id as usize];
        let greedy = greedy_decode(&inf.model, &ex.code_ids, &ex.ast_ids, inf.model.config.max_comment_len).unwrap();
        let beam = inf.predict(&ex.code_ids, &ex.ast_ids).unwrap();
        assert_eq!(greedy.last(), Some(&EOS));
        assert_eq!(inf.bpe.decode_words(&greedy).unwrap(), beam);
        let text = inf.comment_for_source(&p.code).unwrap();
        if text == normalize_comment(&p.comment).join(" ") {
            exact += 1;
        }
    }
    assert!(exact * 10 >= pairs.len() * 9, "{exact} of {} regenerated", pairs.len());

    let report = evaluate(&inf, &train_set, cfg.bucket_width, &layout.eval_dir()).unwrap();
    assert_eq!(report.examples.len(), train_set.len());
    assert_eq!(report.buckets.iter().map(|b| b.count).sum::<usize>(), train_set.len());
    assert_eq!(fs::read_to_string(layout.eval_dir().join("examples.tsv")).unwrap().lines().count(), train_set.len() + 1);
    assert!(report.bleu[3] > 0.8);
}

#[test]
fn unparseable_source_names_the_token() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { epochs: 0, ..RunConfig::toy(fixture(), dir.path()) };
    let (layout, vocab) = prepared(dir.path(), &cfg);
    fit(&cfg, &layout, vocab, false);
    let inf = Inference::load(&layout.checkpoint(), &layout, 2, 0.0).unwrap();
    let err = inf.comment_for_source("int f() { return 1 + ; }").unwrap_err();
    assert!(matches!(err, PipelineError::Java { kind: "ParseError", .. }), "{err}");
    let msg = err.to_string();
    assert!(msg.contains("found ;") && msg.contains("at token"), "{msg}");
}
