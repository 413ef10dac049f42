use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rewe::eval::{bleu_files, sweep_lambda};
use rewe::infer::{translate_corpus, DecodeMode, DecodeOptions, Feedback};
use rewe::pipeline::{load_model_dir, train_pipeline, Corpus, EmbeddingFiles};
use rewe::text::{load_embeddings, read_corpus, read_parallel, write_corpus, BpeModel, Vocabulary};
use rewe::train::{eval_batches, validate};
use rewe::{Error, LossKind, TrainConfig};

#[derive(Parser)]
#[command(name = "rewe", version, about = "Attentional NMT with embedding regression")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges from one or more tokenized files.
    LearnBpe {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment a tokenized file with learned merges.
    ApplyBpe {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build a frequency-ranked vocabulary file.
    BuildVocab {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        cap: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check an embedding file against a vocabulary and report coverage.
    LoadEmbeddings {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        dim: usize,
    },
    /// Train a model and write it to a directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Translate a tokenized file.
    Translate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Beam)]
        mode: Mode,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        no_unk_replace: bool,
        /// Feed the regressed vector back instead of the chosen token (nn mode).
        #[arg(long)]
        embedding_feedback: bool,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Bleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        smooth: bool,
    },
    /// Perplexity of a trained model on a parallel file pair.
    Ppl {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: PathBuf,
    },
    /// Train over a grid of trade-off coefficients, losses and seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 5.0, 10.0, 20.0])]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values = ["cel"])]
        kinds: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        smooth: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        means: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train_src: PathBuf,
    #[arg(long)]
    train_tgt: PathBuf,
    #[arg(long)]
    val_src: PathBuf,
    #[arg(long)]
    val_tgt: PathBuf,
    #[arg(long)]
    src_emb: Option<PathBuf>,
    #[arg(long)]
    tgt_emb: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> rewe::Result<(Corpus, EmbeddingFiles)> {
        let corpus = Corpus::load(&self.train_src, &self.train_tgt, &self.val_src, &self.val_tgt)?;
        let emb = EmbeddingFiles {
            src: self.src_emb.clone(),
            tgt: self.tgt_emb.clone(),
        };
        Ok((corpus, emb))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Beam,
    Greedy,
    Nn,
}

fn config(path: &Path, seed: Option<u64>) -> rewe::Result<TrainConfig> {
    let mut cfg = TrainConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

enum Failure {
    Run(Error),
    Numeric(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::LearnBpe { input, merges, output } => {
            let mut corpus = Vec::new();
            for p in &input {
                corpus.extend(read_corpus(p)?);
            }
            let bpe = BpeModel::learn(&corpus, merges)?;
            bpe.save(&output)?;
            eprintln!("{}", json(&serde_json::json!({ "merges": bpe.num_merges() })));
        }
        Command::ApplyBpe { codes, input, output } => {
            let bpe = BpeModel::load(&codes)?;
            let out: Vec<_> = read_corpus(&input)?.iter().map(|s| bpe.apply(s)).collect();
            write_corpus(&output, &out)?;
        }
        Command::BuildVocab { input, cap, output } => {
            let v = Vocabulary::build(&read_corpus(&input)?, cap)?;
            v.save(&output)?;
            eprintln!(
                "{}",
                json(&serde_json::json!({ "size": v.len(), "digest": v.digest() }))
            );
        }
        Command::LoadEmbeddings { vocab, embeddings, dim } => {
            let v = Vocabulary::load(&vocab)?;
            let (_, coverage) = load_embeddings(&embeddings, &v, dim, seed.unwrap_or(0))?;
            println!("{}", json(&coverage));
        }
        Command::Train { config: c, data, out } => {
            let cfg = config(&c, seed)?;
            let (corpus, emb) = data.load()?;
            let t = train_pipeline(&cfg, &corpus, &emb, Some(&out))?;
            eprintln!(
                "{}",
                json(&serde_json::json!({
                    "steps": t.steps,
                    "best_val_ppl": t.checkpoint.val_perplexity,
                    "records": t.log.len(),
                    "src_coverage": t.src_coverage,
                    "tgt_coverage": t.tgt_coverage,
                }))
            );
        }
        Command::Translate {
            model,
            input,
            output,
            mode,
            beam,
            no_unk_replace,
            embedding_feedback,
        } => {
            let (translator, _) = load_model_dir(&model)?;
            let fb = if embedding_feedback {
                Feedback::Embedding
            } else {
                Feedback::Token
            };
            let opts = DecodeOptions {
                mode: match mode {
                    Mode::Beam => DecodeMode::Beam(beam),
                    Mode::Greedy => DecodeMode::Greedy,
                    Mode::Nn => DecodeMode::NearestNeighbor(fb),
                },
                unk_replace: !no_unk_replace,
            };
            let stats = translate_corpus(&translator, &input, &output, &opts)?;
            eprintln!("{}", json(&stats));
        }
        Command::Bleu { hyp, reference, smooth } => {
            let r = bleu_files(&hyp, &reference, smooth)?;
            println!("{:.2}", r.bleu);
            eprintln!("{}", json(&r));
        }
        Command::Ppl { model, src, tgt } => {
            let (t, _) = load_model_dir(&model)?;
            let (s, g) = read_parallel(&src, &tgt)?;
            let seg = |side: &[Vec<String>], v: &Vocabulary| -> Vec<Vec<usize>> {
                side.iter()
                    .map(|x| match &t.bpe {
                        Some(b) => v.encode(&b.apply(x)),
                        None => v.encode(x),
                    })
                    .collect()
            };
            let batches = eval_batches(&seg(&s, &t.src_vocab), &seg(&g, &t.tgt_vocab), 40)?;
            let ppl = validate(&t.model, &batches)?;
            if !ppl.is_finite() {
                return Err(Failure::Numeric(format!("perplexity is {ppl}")));
            }
            println!("{ppl}");
        }
        Command::Sweep {
            config: c,
            data,
            lambdas,
            kinds,
            seeds,
            jobs,
            smooth,
            out,
            means,
        } => {
            let cfg = config(&c, seed)?;
            let kinds = kinds
                .iter()
                .map(|k| k.parse())
                .collect::<rewe::Result<Vec<LossKind>>>()?;
            let (corpus, emb) = data.load()?;
            let result = sweep_lambda(&cfg, &lambdas, &kinds, &seeds, &corpus, &emb, jobs, smooth)?;
            result.save(&out, &means)?;
            print!("{}", result.means_csv());
            for r in &result.rows {
                if let Err(e) = &r.bleu {
                    eprintln!(
                        "run lambda={} kind={} seed={} failed: {e}",
                        r.point.lambda, r.point.kind, r.point.seed
                    );
                }
            }
        }
        Command::Gradcheck { instances } => {
            let report = rewe::selfcheck::full_gradcheck(seed.unwrap_or(0), instances)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            if !report.passed {
                return Err(Failure::Numeric(format!(
                    "max relative error {} exceeds {}",
                    report.max_rel_error,
                    rewe::selfcheck::TOLERANCE
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
        Err(Failure::Numeric(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
