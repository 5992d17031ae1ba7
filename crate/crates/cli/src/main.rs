use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use comformer::pipeline::{
    corpus_length_stats, evaluate, ingest, load_split, read_examples, run_preprocess, run_train_bpe, sample_human_study, train, ErrorClass,
    HumanStudyRow, Inference, PipelineError, RunConfig, RunLayout,
};

#[derive(Parser, Debug)]
#[command(author, version, about = "Code comment generation with a Transformer over code and AST sequences")]
struct Cli {
    /// Run configuration, JSON or key=value lines
    #[arg(short, long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override a configuration value, e.g. `model.fusion=jointly` (repeatable)
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the shared byte-level BPE vocabulary on the training split
    TrainBpe,
    /// Parse, linearize and encode all splits
    Preprocess,
    /// Train the model on the preprocessed training split
    Train {
        /// Continue from the last saved step
        #[arg(long)]
        resume: bool,
    },
    /// Generate a comment for one Java method
    Generate(GenerateArgs),
    /// Score the test split and write the evaluation report
    Evaluate {
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
    },
    /// Corpus length statistics
    Stats,
    /// Draw the human-study sample from evaluation predictions
    Sample(SampleArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Java source file, `-` for stdin
    source: PathBuf,
    #[arg(long, value_name = "DIR")]
    checkpoint: Option<PathBuf>,
    /// Beam width; 1 is greedy decoding
    #[arg(long)]
    beam: Option<usize>,
    /// Length penalty exponent
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Error margin
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_source(path: &Path) -> Result<String, PipelineError> {
    if path == Path::new("-") {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map_err(PipelineError::io("<stdin>"))?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(PipelineError::io(path))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let layout = RunLayout::new(&cfg.out_dir);
    match cli.command {
        Command::TrainBpe => {
            let bpe = run_train_bpe(&cfg, &layout)?;
            println!("vocabulary: {} ids -> {}", bpe.vocab_size(), layout.bpe_vocab().display());
        }
        Command::Preprocess => {
            let c = run_preprocess(&cfg, &layout)?;
            println!("malformed corpus lines: {}", c.malformed);
            for (name, (done, skipped)) in [("train", c.train), ("valid", c.valid), ("test", c.test)] {
                println!("{name}: {done} examples, {skipped} skipped");
            }
            println!("skip manifest: {}", layout.skipped().display());
        }
        Command::Train { resume } => {
            let train_set = read_examples(&layout.data("train"))?;
            let valid_set = read_examples(&layout.data("valid"))?;
            let vocab = layout.load_bpe()?.vocab_size();
            let mut progress = |step: u64, loss: f64| {
                if step.is_multiple_of(50) {
                    eprintln!("step {step}\tloss {loss:.4}");
                }
            };
            let out = train(&cfg, &train_set, &valid_set, vocab, &layout, resume, &mut progress)?;
            println!("steps: {}", out.steps);
            if let Some(l) = out.last_loss {
                println!("last train loss: {l:.6}");
            }
            if let Some(v) = out.best_valid {
                println!("best valid loss: {v:.6}");
            }
            println!("checkpoint: {}", out.checkpoint.display());
        }
        Command::Generate(args) => {
            let checkpoint = args.checkpoint.unwrap_or_else(|| layout.checkpoint());
            let inf = Inference::load(&checkpoint, &layout, args.beam.unwrap_or(cfg.beam_width), args.alpha.unwrap_or(cfg.alpha))?;
            let source = read_source(&args.source)?;
            println!("{}", inf.comment_for_source(&source)?);
        }
        Command::Evaluate { checkpoint } => {
            let checkpoint = checkpoint.unwrap_or_else(|| layout.checkpoint());
            let inf = Inference::load(&checkpoint, &layout, cfg.beam_width, cfg.alpha)?;
            let test = read_examples(&layout.data("test"))?;
            let dir = layout.eval_dir();
            let report = evaluate(&inf, &test, cfg.bucket_width, &dir)?;
            cfg.save(&dir.join("config.json"))?;
            print!("{}", report.render_text());
        }
        Command::Stats => {
            let pairs = ingest(cfg.format, &cfg.corpus, cfg.corpus_comments.as_deref())?;
            let (stats, unlexed) = corpus_length_stats(&pairs.pairs)?;
            let text = format!("{}unlexable: {unlexed}\nmalformed: {}\n", stats.render(), pairs.skipped.len());
            let dir = layout.root.join("stats");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("stats.txt"), &text).with_context(|| format!("writing {}", dir.display()))?;
            cfg.save(&dir.join("config.json"))?;
            print!("{text}");
        }
        Command::Sample(args) => {
            let (split, _) = load_split(&cfg)?;
            let preds_path = layout.eval_dir().join("predictions.tsv");
            let preds = fs::read_to_string(&preds_path).map_err(PipelineError::io(&preds_path))?;
            let generated: HashMap<u64, String> = preds
                .lines()
                .skip(1)
                .filter_map(|l| {
                    let mut f = l.split('\t');
                    Some((f.next()?.parse().ok()?, f.next()?.to_string()))
                })
                .collect();
            let rows: Vec<HumanStudyRow> = split
                .test
                .iter()
                .filter_map(|p| {
                    let g = generated.get(&p.id)?;
                    Some(HumanStudyRow { code: p.code.clone(), generated: g.clone(), reference: p.comment.clone() })
                })
                .collect();
            let out = layout.sample();
            let spec = sample_human_study(&rows, args.margin, args.confidence, cfg.seed, &out)?;
            cfg.save(&out.with_file_name("config.json"))?;
            println!("population {}, z {:.4}, sampled {} -> {}", rows.len(), spec.z, spec.min, out.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>().map(PipelineError::class) {
        Some(ErrorClass::Usage) => 1,
        Some(ErrorClass::Data) => 2,
        Some(ErrorClass::Internal) => 3,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
