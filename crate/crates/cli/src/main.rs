//! Command-line surface: vocabulary training, tokenization, model
//! initialization, forward passes, prediction, generation and inspection.
//!
//! Machine-readable output goes to stdout, diagnostics to stderr. Exit
//! codes: 0 success, 1 runtime or validation error, 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tinygpt::io::{
    corpus_alphabet, load_model, load_vocab, save_model, save_vocab, truncate_corpus,
    CorpusManifest, MODEL_FORMAT_VERSION,
};
use tinygpt::{
    Activation, BpeModel, Error, GenerationStrategy, ModelConfig, SoftmaxMode, TokenId,
    TransformerModel,
};

#[derive(Parser)]
#[command(
    name = "tinygpt",
    version,
    about = "Desk-scale decoder transformer: BPE tokenizer, forward passes, generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a byte-pair-encoding vocabulary on a corpus
    TrainBpe {
        /// Corpus files or directories (directories expand to their files,
        /// sorted by name); each file is one artefact
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Target vocabulary size including specials and base symbols
        #[arg(long)]
        vocab_size: usize,
        /// Only train on the first K characters of the corpus
        #[arg(long)]
        max_chars: Option<usize>,
        /// Output vocabulary file
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize text with a trained vocabulary
    Tokenize {
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        input: TextInput,
        /// Print comma-separated token ids instead of token strings
        #[arg(long)]
        ids: bool,
    },
    /// Render a comma-separated token id list back into text
    Detokenize {
        #[arg(long)]
        vocab: PathBuf,
        /// Token ids, e.g. "4,3,0"
        #[arg(long)]
        ids: String,
    },
    /// Create a model with seeded random parameters
    Init {
        #[arg(long)]
        n_vocab: usize,
        #[arg(long)]
        n_ctx: usize,
        /// Model width (must be smaller than n_vocab)
        #[arg(long)]
        d: usize,
        #[arg(long)]
        d_head: usize,
        #[arg(long)]
        n_heads: usize,
        #[arg(long)]
        n_blocks: usize,
        /// Number of MLP layers per block
        #[arg(long, default_value_t = 2)]
        mlp_depth: usize,
        /// Hidden MLP width (defaults to 4*d)
        #[arg(long)]
        mlp_hidden: Option<usize>,
        #[arg(long, value_enum, default_value_t = ActivationArg::Gelu)]
        activation: ActivationArg,
        #[arg(long, value_enum, default_value_t = SoftmaxModeArg::Paper)]
        softmax_mode: SoftmaxModeArg,
        /// Tie the unembedding to the transpose of the embedding
        #[arg(long)]
        tied: bool,
        /// Divide attention scores by sqrt(d_head)
        #[arg(long)]
        attention_scale: bool,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the logits of the last position, one per vocabulary entry
    Forward {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Print the most probable next tokens with their probabilities
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 1)]
        top_k: usize,
    },
    /// Append tokens to a prompt and print the detokenized result
    Generate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Greedy)]
        strategy: StrategyArg,
        /// Softmax temperature for sampling (must be positive)
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Sampling seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a model's configuration and trainable-parameter count
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct TextInput {
    /// Text given on the command line
    #[arg(long)]
    text: Option<String>,
    /// Read the text from a file
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Gelu,
    Identity,
    Tanh,
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Activation {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Gelu => Activation::Gelu,
            ActivationArg::Identity => Activation::Identity,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SoftmaxModeArg {
    Paper,
    Rowwise,
}

impl From<SoftmaxModeArg> for SoftmaxMode {
    fn from(m: SoftmaxModeArg) -> SoftmaxMode {
        match m {
            SoftmaxModeArg::Paper => SoftmaxMode::PaperGlobal,
            SoftmaxModeArg::Rowwise => SoftmaxMode::RowWise,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Greedy,
    Sample,
}

fn main() {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> tinygpt::Result<()> {
    match command {
        Command::TrainBpe {
            corpus,
            vocab_size,
            max_chars,
            out,
        } => train_bpe(&corpus, vocab_size, max_chars, &out),
        Command::Tokenize { vocab, input, ids } => tokenize(&vocab, input, ids),
        Command::Detokenize { vocab, ids } => detokenize(&vocab, &ids),
        Command::Init {
            n_vocab,
            n_ctx,
            d,
            d_head,
            n_heads,
            n_blocks,
            mlp_depth,
            mlp_hidden,
            activation,
            softmax_mode,
            tied,
            attention_scale,
            seed,
            out,
        } => {
            let config = ModelConfig {
                n_vocab,
                n_ctx,
                d,
                d_head,
                n_heads,
                n_blocks,
                mlp_depth,
                mlp_hidden: mlp_hidden.unwrap_or(4 * d),
                activation: activation.into(),
                softmax_mode: softmax_mode.into(),
                tied,
                attention_scale,
            };
            let model = TransformerModel::init(config, seed)?;
            save_model(&model, &out)?;
            eprintln!(
                "initialized model with {} parameters at {}",
                model.parameter_count(),
                out.display()
            );
            Ok(())
        }
        Command::Forward { model, vocab, text } => {
            let (model, bpe) = load_pair(&model, &vocab)?;
            let window = context_window(&model, &bpe, &text)?;
            let logits = model.logits(&window)?;
            let mut out = String::new();
            for v in logits.as_slice() {
                out.push_str(&format!("{v}\n"));
            }
            print!("{out}");
            Ok(())
        }
        Command::Predict {
            model,
            vocab,
            text,
            top_k,
        } => {
            let (model, bpe) = load_pair(&model, &vocab)?;
            let window = context_window(&model, &bpe, &text)?;
            let dist = model.next_token_distribution(&window)?;
            for (id, p) in dist.top_k(top_k) {
                println!("{id}\t{}\t{p}", bpe.token_string(id)?);
            }
            Ok(())
        }
        Command::Generate {
            model,
            vocab,
            prompt,
            steps,
            strategy,
            temperature,
            seed,
        } => {
            let (model, bpe) = load_pair(&model, &vocab)?;
            let strategy = match strategy {
                StrategyArg::Greedy => GenerationStrategy::Greedy,
                StrategyArg::Sample => GenerationStrategy::Sample { temperature, seed },
            };
            println!("{}", model.generate(&bpe, &prompt, steps, strategy)?);
            Ok(())
        }
        Command::Inspect { model } => inspect(&model),
    }
}

fn train_bpe(
    corpus: &[PathBuf],
    vocab_size: usize,
    max_chars: Option<usize>,
    out: &Path,
) -> tinygpt::Result<()> {
    let files = expand_corpus_paths(corpus)?;
    let artefacts = CorpusManifest::new(files).ingest()?;
    let artefacts = truncate_corpus(artefacts, max_chars);
    let alphabet = corpus_alphabet(&artefacts);
    let model = BpeModel::train(&artefacts, &alphabet, vocab_size)?;
    if model.n_vocab() < vocab_size {
        eprintln!(
            "warning: ran out of mergeable pairs at {} symbols (requested {})",
            model.n_vocab(),
            vocab_size
        );
    }
    save_vocab(&model, out)?;
    eprintln!(
        "trained {} merges over an alphabet of {} characters; vocabulary of {} written to {}",
        model.merges().len(),
        model.alphabet().len(),
        model.n_vocab(),
        out.display()
    );
    Ok(())
}

/// Directories expand to their directly contained files, sorted by file
/// name; explicit files are taken as-is, in argument order.
fn expand_corpus_paths(paths: &[PathBuf]) -> tinygpt::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(path.clone());
        }
    }
    Ok(files)
}

fn tokenize(vocab: &Path, input: TextInput, ids: bool) -> tinygpt::Result<()> {
    let bpe = load_vocab(vocab)?;
    let text = match (input.text, input.file) {
        (Some(text), None) => text,
        (None, Some(path)) => std::fs::read_to_string(path)?,
        _ => unreachable!("clap enforces exactly one input"),
    };
    let tokens = bpe.tokenize(&text)?;
    if ids {
        let rendered: Vec<String> = tokens.iter().map(|id| id.to_string()).collect();
        println!("{}", rendered.join(","));
    } else {
        let rendered: Vec<String> = tokens
            .iter()
            .map(|&id| bpe.token_string(id))
            .collect::<tinygpt::Result<_>>()?;
        println!("{}", rendered.join(" "));
    }
    Ok(())
}

fn detokenize(vocab: &Path, ids: &str) -> tinygpt::Result<()> {
    let bpe = load_vocab(vocab)?;
    let tokens = parse_id_list(ids)?;
    println!("{}", bpe.detokenize(&tokens)?);
    Ok(())
}

fn parse_id_list(ids: &str) -> tinygpt::Result<Vec<TokenId>> {
    ids.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<TokenId>()
                .map_err(|_| Error::Config(format!("invalid token id {s:?}")))
        })
        .collect()
}

fn load_pair(model: &Path, vocab: &Path) -> tinygpt::Result<(TransformerModel, BpeModel)> {
    let model = load_model(model)?;
    let bpe = load_vocab(vocab)?;
    if bpe.n_vocab() != model.config().n_vocab {
        return Err(Error::Config(format!(
            "vocabulary has {} tokens but the model expects {}",
            bpe.n_vocab(),
            model.config().n_vocab
        )));
    }
    Ok((model, bpe))
}

/// Tokenizes and keeps the trailing window that fits the context.
fn context_window(
    model: &TransformerModel,
    bpe: &BpeModel,
    text: &str,
) -> tinygpt::Result<Vec<TokenId>> {
    let tokens = bpe.tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::Domain("text tokenizes to no tokens".into()));
    }
    let start = tokens.len().saturating_sub(model.config().n_ctx);
    Ok(tokens[start..].to_vec())
}

fn inspect(path: &Path) -> tinygpt::Result<()> {
    let model = load_model(path)?;
    let c = model.config();
    println!("format_version: {MODEL_FORMAT_VERSION}");
    println!("n_vocab: {}", c.n_vocab);
    println!("n_ctx: {}", c.n_ctx);
    println!("d: {}", c.d);
    println!("d_head: {}", c.d_head);
    println!("n_heads: {}", c.n_heads);
    println!("n_blocks: {}", c.n_blocks);
    println!("mlp_depth: {}", c.mlp_depth);
    println!("mlp_hidden: {}", c.mlp_hidden);
    println!("activation: {}", c.activation);
    println!("softmax_mode: {}", c.softmax_mode);
    println!("tied: {}", c.tied);
    println!("attention_scale: {}", c.attention_scale);
    println!("parameters: {}", model.parameter_count());
    Ok(())
}
