//! Subcommand arguments and handlers.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};

use lexfact::{
    build_vocab_from_files, check_logit_identity, context_distribution, extract_pairs_from_files,
    finite_difference_check, nearest_neighbors, similarity, CoocStats, EmbeddingModel,
    ExportFormat, GloveWeighting, Objective, Space, TokenizeOptions, TrainConfig, TrainMode,
    TrainReport, Vocabulary, ZeroCellPolicy,
};

use crate::manifest::PipelineManifest;

/// `BASE` + suffix, e.g. `out/run` -> `out/run.cooc`.
fn suffixed(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.as_os_str().to_os_string();
    name.push(suffix);
    PathBuf::from(name)
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    match s {
        "sgns" => Ok(Objective::SgnsLogistic),
        "sgns-ls" => Ok(Objective::SgnsLs),
        "glove" => Ok(Objective::Glove),
        _ => Err(format!(
            "unknown objective '{s}' (expected sgns, sgns-ls, or glove)"
        )),
    }
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    match s {
        "sgd" => Ok(TrainMode::StochasticAdagrad),
        "full-batch" => Ok(TrainMode::FullBatch),
        _ => Err(format!("unknown mode '{s}' (expected sgd or full-batch)")),
    }
}

fn parse_zero_rate(s: &str) -> Result<ZeroCellPolicy, String> {
    match s {
        "auto" => Ok(ZeroCellPolicy::Auto),
        "all" => Ok(ZeroCellPolicy::All),
        _ => {
            let rate: f64 = s
                .parse()
                .map_err(|_| format!("zero-rate must be 'auto', 'all', or a number, got '{s}'"))?;
            if rate > 0.0 && rate <= 1.0 {
                Ok(ZeroCellPolicy::Sampled { rate })
            } else {
                Err(format!("zero-rate must lie in (0, 1], got {rate}"))
            }
        }
    }
}

fn parse_space(s: &str) -> Result<Space, String> {
    match s {
        "word" => Ok(Space::Word),
        "context" => Ok(Space::Context),
        "averaged" => Ok(Space::Averaged),
        _ => Err(format!(
            "unknown space '{s}' (expected word, context, or averaged)"
        )),
    }
}

fn parse_format(s: &str) -> Result<ExportFormat, String> {
    match s {
        "text" => Ok(ExportFormat::Text),
        "checkpoint" => Ok(ExportFormat::Checkpoint),
        _ => Err(format!(
            "unknown format '{s}' (expected text or checkpoint)"
        )),
    }
}

#[derive(Args)]
pub struct BuildCoocArgs {
    /// Input text files (whitespace-tokenized)
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Output base path; writes BASE.cooc, BASE.vocab.tsv, BASE.manifest.json
    #[arg(long)]
    output: PathBuf,
    /// Symmetric window size in tokens
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Drop tokens occurring fewer times than this
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Keep only the N most frequent tokens
    #[arg(long)]
    max_vocab: Option<usize>,
    /// Keep original case instead of lowercasing
    #[arg(long)]
    no_lowercase: bool,
    /// Worker threads for the pair-counting pass (files are independent
    /// shards, so any thread count gives identical counts)
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Machine-readable key<TAB>value summary
    #[arg(long)]
    tsv: bool,
}

pub fn run_build_cooc(args: &BuildCoocArgs) -> Result<()> {
    let options = TokenizeOptions {
        lowercase: !args.no_lowercase,
    };
    let vocab = build_vocab_from_files(&args.input, &options, args.min_count, args.max_vocab)?;
    let pairs = extract_pairs_from_files(&args.input, &vocab, args.window, &options, args.threads)?;
    let stats = CoocStats::from_pairs(&pairs)?;

    let mut manifest = PipelineManifest::new(
        "build-cooc",
        serde_json::json!({
            "window": args.window,
            "min_count": args.min_count,
            "max_vocab": args.max_vocab,
            "lowercase": !args.no_lowercase,
            "threads": args.threads,
        }),
    );
    for path in &args.input {
        manifest.add_input(path)?;
    }

    stats.write_binary(&suffixed(&args.output, ".cooc"))?;
    vocab.write_tsv(&suffixed(&args.output, ".vocab.tsv"))?;
    manifest.write(&suffixed(&args.output, ".manifest.json"))?;

    if args.tsv {
        println!("vocab_size\t{}", vocab.len());
        println!("pairs\t{}", stats.total());
        println!("nonzero_cells\t{}", stats.nnz());
    } else {
        println!("vocabulary: {} tokens", vocab.len());
        println!("pairs: {}", stats.total());
        println!("nonzero cells: {}", stats.nnz());
    }
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Co-occurrence table from build-cooc
    #[arg(long)]
    cooc: PathBuf,
    /// Output base path; writes BASE.lxm, BASE.log.tsv, BASE.manifest.json
    #[arg(long)]
    output: PathBuf,
    /// Training objective: sgns, sgns-ls, or glove
    #[arg(long, default_value = "sgns", value_parser = parse_objective)]
    objective: Objective,
    /// Negative samples per observed pair (any positive real)
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    /// Context distribution smoothing exponent (1 = exact count ratios)
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Embedding dimension
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Zero-cell policy: "auto", "all", or a sampling rate in (0, 1]
    #[arg(long, default_value = "auto", value_parser = parse_zero_rate)]
    zero_rate: ZeroCellPolicy,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads; above 1, updates are lock-free and runs are no
    /// longer bit-reproducible
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Training mode: "sgd" (stochastic AdaGrad) or "full-batch"
    #[arg(long, default_value = "sgd", value_parser = parse_mode)]
    mode: TrainMode,
    /// Train per-id bias terms (glove only)
    #[arg(long)]
    biases: bool,
    /// Initial entries are uniform in [-init-scale/dim, +init-scale/dim]
    #[arg(long, default_value_t = 1.0)]
    init_scale: f64,
    #[arg(long, default_value_t = 1e-8)]
    adagrad_eps: f64,
    /// Count ceiling of the log-count weighting curve (glove)
    #[arg(long, default_value_t = 100.0)]
    x_max: f64,
    /// Exponent of the log-count weighting curve (glove)
    #[arg(long, default_value_t = 0.75)]
    glove_alpha: f64,
    /// Machine-readable key<TAB>value summary
    #[arg(long)]
    tsv: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            objective: self.objective,
            negative_samples: self.k,
            dimension: self.dim,
            epochs: self.epochs,
            learning_rate: self.lr,
            adagrad_epsilon: self.adagrad_eps,
            zero_cell_policy: self.zero_rate,
            seed: self.seed,
            mode: self.mode,
            init_scale: self.init_scale,
            context_smoothing: self.alpha,
            glove_biases: self.biases,
            glove_weighting: GloveWeighting {
                x_max: self.x_max,
                exponent: self.glove_alpha,
            },
            threads: self.threads,
        }
    }
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    if config.threads > 1 {
        eprintln!(
            "warning: {} threads use lock-free parallel updates; results will not be bit-reproducible",
            config.threads
        );
    }
    let stats = CoocStats::read_binary(&args.cooc)?;
    let (model, report) = lexfact::train(&stats, &config)?;

    let mut manifest = PipelineManifest::new(
        "train",
        serde_json::to_value(&config).expect("config serializes"),
    );
    manifest.add_input(&args.cooc)?;

    model.write_checkpoint(&suffixed(&args.output, ".lxm"))?;
    write_log(&suffixed(&args.output, ".log.tsv"), &report)?;
    manifest.write(&suffixed(&args.output, ".manifest.json"))?;

    let objective_label = if report.objective_exact {
        "objective"
    } else {
        "objective (sampled zero-cell estimate)"
    };
    if args.tsv {
        println!("objective\t{}", report.final_objective());
        println!("objective_exact\t{}", report.objective_exact);
        println!("epochs\t{}", report.epochs.len());
        println!("clamp_events\t{}", report.total_clamp_events());
    } else {
        println!(
            "{objective_label}: {} after {} epochs",
            report.final_objective(),
            report.epochs.len()
        );
        println!("clamp events: {}", report.total_clamp_events());
        println!("wall time: {:.2} s", report.wall_time.as_secs_f64());
    }
    Ok(())
}

fn write_log(path: &Path, report: &TrainReport) -> Result<()> {
    lexfact::atomic_write(path, |out| {
        writeln!(
            out,
            "epoch\tobjective\tgrad_norm\tzero_cells_visited\tclamp_events"
        )?;
        for e in &report.epochs {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                e.epoch, e.objective, e.grad_norm, e.zero_cells_visited, e.clamp_events
            )?;
        }
        Ok(())
    })
    .with_context(|| format!("writing log {}", path.display()))
}

#[derive(Subcommand)]
pub enum EvalCommand {
    /// Verify that each stored cell's log-odds equal PMI - ln(k)
    Identity(IdentityArgs),
    /// Compare analytic cell gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Most similar tokens by cosine
    Neighbors(NeighborsArgs),
    /// Cosine similarity of two tokens
    Similarity(SimilarityArgs),
}

pub fn run_eval(cmd: &EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Identity(args) => run_identity(args),
        EvalCommand::Gradcheck(args) => run_gradcheck(args),
        EvalCommand::Neighbors(args) => run_neighbors(args),
        EvalCommand::Similarity(args) => run_similarity(args),
    }
}

#[derive(Args)]
pub struct IdentityArgs {
    /// Co-occurrence table from build-cooc
    #[arg(long)]
    cooc: PathBuf,
    /// Negative samples per observed pair
    #[arg(long, default_value_t = 5.0)]
    k: f64,
    /// Machine-readable key<TAB>value output
    #[arg(long)]
    tsv: bool,
}

fn run_identity(args: &IdentityArgs) -> Result<()> {
    let stats = CoocStats::read_binary(&args.cooc)?;
    // The identity is stated for exact count ratios only.
    let dist = context_distribution(&stats, 1.0)?;
    let report = check_logit_identity(&stats, &dist, args.k)?;
    if args.tsv {
        println!("cells_checked\t{}", report.cells_checked);
        println!("max_abs_deviation\t{:e}", report.max_abs_deviation);
    } else {
        println!("cells checked: {}", report.cells_checked);
        println!(
            "max |logit(response) - (pmi - ln k)|: {:e}",
            report.max_abs_deviation
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Objective whose gradients to check: sgns, sgns-ls, or glove
    #[arg(long, default_value = "sgns", value_parser = parse_objective)]
    objective: Objective,
    /// Include bias partials (glove only)
    #[arg(long)]
    biases: bool,
    /// Number of random cells
    #[arg(long, default_value_t = 100)]
    cells: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Machine-readable key<TAB>value output
    #[arg(long)]
    tsv: bool,
}

fn run_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let report = finite_difference_check(args.objective, args.biases, args.cells, args.seed)?;
    if args.tsv {
        println!("cells_checked\t{}", report.cells_checked);
        println!("coordinates_checked\t{}", report.coordinates_checked);
        println!("max_relative_error\t{:e}", report.max_relative_error);
        println!(
            "max_abs_error_near_zero\t{:e}",
            report.max_absolute_error_near_zero
        );
    } else {
        println!("cells checked: {}", report.cells_checked);
        println!("coordinates checked: {}", report.coordinates_checked);
        println!("max relative error: {:e}", report.max_relative_error);
        println!(
            "max absolute error near zero gradients: {:e}",
            report.max_absolute_error_near_zero
        );
    }
    Ok(())
}

fn load_model_and_vocab(
    model_path: &Path,
    vocab_path: &Path,
) -> Result<(EmbeddingModel, Vocabulary)> {
    let model = EmbeddingModel::read_checkpoint(model_path)?;
    let vocab = Vocabulary::read_tsv(vocab_path)?;
    if vocab.len() != model.vocab_size() {
        return Err(lexfact::Error::DimensionMismatch(format!(
            "vocabulary has {} tokens, model covers {} ids",
            vocab.len(),
            model.vocab_size()
        ))
        .into());
    }
    Ok((model, vocab))
}

fn token_id(vocab: &Vocabulary, token: &str) -> Result<u32> {
    vocab
        .id(token)
        .ok_or_else(|| lexfact::Error::UnknownToken(token.to_string()).into())
}

#[derive(Args)]
pub struct NeighborsArgs {
    /// Checkpoint from train
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary TSV from build-cooc
    #[arg(long)]
    vocab: PathBuf,
    /// Query token
    token: String,
    /// Number of neighbors
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Vector space: word, context, or averaged
    #[arg(long, default_value = "word", value_parser = parse_space)]
    space: Space,
    /// Add a TSV header row
    #[arg(long)]
    tsv: bool,
}

fn run_neighbors(args: &NeighborsArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model, &args.vocab)?;
    let id = token_id(&vocab, &args.token)?;
    let neighbors = nearest_neighbors(&model, id, args.top, args.space)?;
    if args.tsv {
        println!("token\tsimilarity");
    }
    for (nid, sim) in neighbors {
        println!("{}\t{sim:.6}", vocab.token(nid).expect("id in range"));
    }
    Ok(())
}

#[derive(Args)]
pub struct SimilarityArgs {
    /// Checkpoint from train
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary TSV from build-cooc
    #[arg(long)]
    vocab: PathBuf,
    first: String,
    second: String,
    /// Vector space: word, context, or averaged
    #[arg(long, default_value = "word", value_parser = parse_space)]
    space: Space,
    /// Machine-readable key<TAB>value output
    #[arg(long)]
    tsv: bool,
}

fn run_similarity(args: &SimilarityArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model, &args.vocab)?;
    let first = token_id(&vocab, &args.first)?;
    let second = token_id(&vocab, &args.second)?;
    let value = similarity(&model, first, second, args.space)?;
    if args.tsv {
        println!("similarity\t{value:.6}");
    } else {
        println!("similarity({}, {}) = {value:.6}", args.first, args.second);
    }
    Ok(())
}

#[derive(Args)]
pub struct ExportArgs {
    /// Checkpoint from train
    #[arg(long)]
    model: PathBuf,
    /// Vocabulary TSV from build-cooc
    #[arg(long)]
    vocab: PathBuf,
    /// Output file
    #[arg(long)]
    output: PathBuf,
    /// "text" (token + vector per line) or "checkpoint" (binary, bit-exact)
    #[arg(long, default_value = "text", value_parser = parse_format)]
    format: ExportFormat,
}

pub fn run_export(args: &ExportArgs) -> Result<()> {
    let (model, vocab) = load_model_and_vocab(&args.model, &args.vocab)?;
    lexfact::export_embeddings(&model, &vocab, &args.output, args.format)?;
    println!("wrote {}", args.output.display());
    Ok(())
}
