use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (formats: tokens 1, features ABPEFEAT v1, k-means ABPEKMNS v1, merges #abpe 1, n-gram ABPENGRM v1)"
);

/// Acoustic BPE pipeline: discretize, compress, model and evaluate token streams.
#[derive(Debug, Parser)]
#[command(name = "abpe", version = VERSION, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic motif corpus (and optionally matching features).
    Synth(SynthArgs),
    /// Fit k-means centroids on a feature matrix.
    KmeansFit(KmeansFitArgs),
    /// Assign feature frames to their nearest centroid.
    Discretize(DiscretizeArgs),
    /// Map base token ids to CJK characters, one utterance per line.
    ToUnicode(ToUnicodeArgs),
    /// Map CJK character lines back to base token ids.
    FromUnicode(FromUnicodeArgs),
    /// Train BPE merges on a token or unicode corpus.
    BpeTrain(BpeTrainArgs),
    /// Encode base tokens into BPE units.
    BpeEncode(BpeEncodeArgs),
    /// Expand BPE units back into base tokens.
    BpeDecode(BpeDecodeArgs),
    /// Train an interpolated add-k n-gram model.
    SlmTrain(SlmTrainArgs),
    /// Log-probability (nats) of every utterance.
    Score(ScoreArgs),
    /// Sample continuations of prompts.
    Continue(ContinueArgs),
    /// Select the most probable candidate per case and report top-x accuracy.
    Rescore(RescoreArgs),
    /// Sequence-length compression between a base and an encoded corpus.
    MetricsCompress(MetricsCompressArgs),
    /// n-gram self-BLEU, auto-BLEU and VERT of a set of sequences.
    MetricsVert(MetricsVertArgs),
    /// Accuracy at preferring utterances over their block-shuffled versions.
    MetricsSyntax(MetricsSyntaxArgs),
    /// Cross-entropy of samples under a reference model.
    MetricsXent(MetricsXentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InputFormat {
    /// Detect from the first utterance.
    Auto,
    /// Integer token file.
    Tokens,
    /// One line of CJK characters per utterance.
    Unicode,
}

#[derive(Debug, Args)]
struct ReportOut {
    /// Also write the metric record and table to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 2000)]
    utts: usize,
    #[arg(long, default_value_t = 20)]
    min_len: usize,
    #[arg(long, default_value_t = 60)]
    max_len: usize,
    /// Number of generated motifs.
    #[arg(long, default_value_t = 5)]
    motifs: usize,
    #[arg(long, default_value_t = 3)]
    motif_min: usize,
    #[arg(long, default_value_t = 8)]
    motif_max: usize,
    /// Probability that the next emission is a motif.
    #[arg(long, default_value_t = 0.6)]
    rate: f64,
    #[arg(long, default_value_t = 1.1)]
    zipf: f64,
    /// Seed for all randomness in this command.
    #[arg(long)]
    seed: u64,
    /// Token file to write (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the corpus as noisy feature frames (.csv for CSV, binary otherwise).
    #[arg(long, requires = "lengths")]
    features: Option<PathBuf>,
    /// Per-utterance frame counts for --features.
    #[arg(long, requires = "features")]
    lengths: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f32,
}

#[derive(Debug, Args)]
struct KmeansFitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: usize,
    /// Seed for all randomness in this command.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Fit on a seeded uniform subsample of at most this many rows.
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DiscretizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Split frames into utterances using this lengths file.
    #[arg(long)]
    lengths: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToUnicodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FromUnicodeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Declared vocabulary (defaults to 1 + max id).
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BpeTrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Target unit vocabulary (base alphabet plus merges).
    #[arg(long)]
    vocab: usize,
    /// Base alphabet size (defaults to the corpus vocabulary).
    #[arg(long)]
    base: Option<usize>,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    format: InputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BpeEncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Auto)]
    format: InputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BpeDecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Emit unicode text instead of a token file.
    #[arg(long)]
    unicode: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SlmTrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    order: usize,
    #[arg(long, default_value_t = 0.1, value_parser = positive_f64)]
    add_k: f64,
    /// Comma-separated interpolation weights, lowest order first.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ContinueArgs {
    #[arg(long)]
    model: PathBuf,
    /// Token file whose utterances are the prompts.
    #[arg(long)]
    prompts: PathBuf,
    /// Keep only the first N units of each prompt.
    #[arg(long)]
    prompt_len: Option<usize>,
    /// Continuations per prompt.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long)]
    max_new: usize,
    /// Seed for all randomness in this command.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0, value_parser = positive_f64)]
    temperature: f64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    top_k: Option<u64>,
    /// Pick the most probable unit at every step.
    #[arg(long, conflicts_with_all = ["temperature", "top_k"])]
    greedy: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RescoreArgs {
    #[arg(long)]
    model: PathBuf,
    /// TSV: case_id, candidate_id, token_file_path[, human_rank].
    #[arg(long)]
    manifest: PathBuf,
    /// Candidates are base tokens; encode them with these merges first.
    #[arg(long)]
    bpe: Option<PathBuf>,
    /// Divide each log-probability by the candidate length.
    #[arg(long)]
    length_norm: bool,
    /// Top-x cut-offs to report.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    x: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct MetricsCompressArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    encoded: PathBuf,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct MetricsVertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct MetricsSyntaxArgs {
    #[arg(long)]
    model: PathBuf,
    /// Held-out utterances used as the correct member of each pair.
    #[arg(long = "in")]
    input: PathBuf,
    /// Shuffle granularity in base tokens.
    #[arg(long, default_value_t = 1)]
    block: usize,
    /// Seed for all randomness in this command.
    #[arg(long)]
    seed: u64,
    /// Input is base tokens: shuffle them, then encode both members.
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[command(flatten)]
    report: ReportOut,
}

#[derive(Debug, Args)]
struct MetricsXentArgs {
    /// Reference model.
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    report: ReportOut,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Data(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
