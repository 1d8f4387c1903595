use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use abpe_core::bpe::{self, BpeModel};
use abpe_core::codec;
use abpe_core::corpus_io::{self, Corpus, FeatureMatrix, SynthSpec, TokenSequence};
use abpe_core::discretizer::{self, KMeansConfig, KMeansModel};
use abpe_core::metrics::{self, Report, SyntaxPair};
use abpe_core::rescore::{self, RescoreResult};
use abpe_core::slm::{self, Decoding, NGramModel, SeqModel, Smoothing};
use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::*;

pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Synth(a) => synth(a),
        Command::KmeansFit(a) => kmeans_fit(a),
        Command::Discretize(a) => discretize(a),
        Command::ToUnicode(a) => to_unicode(a),
        Command::FromUnicode(a) => from_unicode(a),
        Command::BpeTrain(a) => bpe_train(a),
        Command::BpeEncode(a) => bpe_encode(a),
        Command::BpeDecode(a) => bpe_decode(a),
        Command::SlmTrain(a) => slm_train(a),
        Command::Score(a) => score(a),
        Command::Continue(a) => continue_(a),
        Command::Rescore(a) => rescore_cmd(a),
        Command::MetricsCompress(a) => metrics_compress(a),
        Command::MetricsVert(a) => metrics_vert(a),
        Command::MetricsSyntax(a) => metrics_syntax(a),
        Command::MetricsXent(a) => metrics_xent(a),
    }
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn emit_tokens(out: Option<&Path>, corpus: &Corpus) -> Result<()> {
    emit(out, &corpus_io::format_tokens(corpus)?)
}

/// Metric output: record and table on stdout, both also in the report file.
fn emit_report(report: &dyn Report, file: &ReportOut) -> Result<()> {
    let text = format!("{}\n{}", report.record(), report.table());
    emit(None, &text)?;
    if let Some(p) = &file.report {
        emit(Some(p), &text)?;
    }
    Ok(())
}

fn load_corpus(path: &Path, format: InputFormat) -> Result<Corpus> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let unicode = match format {
        InputFormat::Tokens => false,
        InputFormat::Unicode => true,
        InputFormat::Auto => text
            .lines()
            .find(|l| !l.trim().is_empty())
            .and_then(|l| l.chars().next())
            .is_some_and(|c| codec::char_to_token(c).is_some()),
    };
    Ok(if unicode {
        codec::parse_unicode_corpus(&text, path)?
    } else {
        corpus_io::parse_tokens(&text, path)?
    })
}

fn load_features(path: &Path) -> Result<FeatureMatrix> {
    Ok(corpus_io::load_features(path)?)
}

fn synth(a: SynthArgs) -> std::result::Result<(), Failure> {
    let spec = SynthSpec {
        vocab_size: a.vocab,
        n_utts: a.utts,
        len_range: (a.min_len, a.max_len),
        motif_count: a.motifs,
        motif_len_range: (a.motif_min, a.motif_max),
        motif_rate: a.rate,
        zipf_exponent: a.zipf,
        seed: a.seed,
        motifs: None,
    };
    let corpus = corpus_io::synth_corpus(&spec).map_err(|e| usage(e.to_string()))?;
    emit_tokens(a.out.as_deref(), &corpus)?;
    if let (Some(feat), Some(lens)) = (&a.features, &a.lengths) {
        let (matrix, lengths) =
            corpus_io::synth_features(&corpus, a.dim, a.noise, a.seed.wrapping_add(1))
                .map_err(|e| usage(e.to_string()))?;
        if feat.extension().is_some_and(|e| e == "csv") {
            corpus_io::save_features_csv(&matrix, feat)?;
        } else {
            corpus_io::save_features_binary(&matrix, feat)?;
        }
        corpus_io::save_lengths(&lengths, lens)?;
    }
    Ok(())
}

fn kmeans_fit(a: KmeansFitArgs) -> std::result::Result<(), Failure> {
    if a.k == 0 {
        return Err(usage("--k must be positive"));
    }
    if a.max_iters == 0 {
        return Err(usage("--max-iters must be positive"));
    }
    if !(a.tol.is_finite() && a.tol >= 0.0) {
        return Err(usage("--tol must be finite and non-negative"));
    }
    let mut features = load_features(&a.input)?;
    if let Some(m) = a.max_samples {
        let rows = discretizer::reservoir_sample(features.rows(), m, a.seed);
        features = features.select_rows(&rows)?;
    }
    let cfg = KMeansConfig {
        k: a.k,
        seed: a.seed,
        max_iters: a.max_iters,
        tol: a.tol,
    };
    let fit = discretizer::kmeans_fit(&features, &cfg)?;
    eprintln!(
        "k-means: k={} rows={} iterations={} converged={} inertia {:.6} -> {:.6}",
        a.k,
        features.rows(),
        fit.iterations,
        fit.converged,
        fit.initial_inertia,
        fit.inertia
    );
    fit.model.save(&a.out)?;
    Ok(())
}

fn discretize(a: DiscretizeArgs) -> std::result::Result<(), Failure> {
    let model = KMeansModel::load(&a.model)?;
    let features = load_features(&a.input)?;
    let ids = discretizer::kmeans_assign(&model, &features)?;
    let lengths = match &a.lengths {
        Some(p) => corpus_io::load_lengths(p)?,
        None => vec![ids.len()],
    };
    let total: usize = lengths.iter().sum();
    if total != ids.len() {
        return Err(anyhow::anyhow!(
            "lengths sum to {total} but {} has {} frames",
            a.input.display(),
            ids.len()
        )
        .into());
    }
    let mut utts = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for len in lengths {
        utts.push(TokenSequence::from(&ids[start..start + len]));
        start += len;
    }
    let corpus = Corpus::new(utts, model.k())?;
    emit_tokens(a.out.as_deref(), &corpus)?;
    Ok(())
}

fn to_unicode(a: ToUnicodeArgs) -> std::result::Result<(), Failure> {
    let corpus = corpus_io::load_tokens(&a.input)?;
    emit(a.out.as_deref(), &codec::format_unicode_corpus(&corpus)?)?;
    Ok(())
}

fn from_unicode(a: FromUnicodeArgs) -> std::result::Result<(), Failure> {
    let mut corpus = codec::load_unicode_corpus(&a.input)?;
    if let Some(v) = a.vocab {
        corpus = corpus.with_vocab_size(v)?;
    }
    emit_tokens(a.out.as_deref(), &corpus)?;
    Ok(())
}

fn bpe_train(a: BpeTrainArgs) -> std::result::Result<(), Failure> {
    let mut corpus = load_corpus(&a.input, a.format)?;
    if let Some(b) = a.base {
        corpus = corpus.with_vocab_size(b)?;
    }
    if a.vocab < corpus.vocab_size() {
        return Err(usage(format!(
            "--vocab {} is smaller than the base alphabet {}",
            a.vocab,
            corpus.vocab_size()
        )));
    }
    let model = bpe::bpe_train(&corpus, a.vocab)?;
    if model.vocab_size() < a.vocab {
        eprintln!(
            "bpe: stopped after {} merges, no pair occurs twice",
            model.merges().len()
        );
    }
    emit(a.out.as_deref(), &model.to_text())?;
    Ok(())
}

fn bpe_encode(a: BpeEncodeArgs) -> std::result::Result<(), Failure> {
    let model = BpeModel::load(&a.model)?;
    let corpus = load_corpus(&a.input, a.format)?;
    emit_tokens(a.out.as_deref(), &model.encode_corpus(&corpus)?)?;
    Ok(())
}

fn bpe_decode(a: BpeDecodeArgs) -> std::result::Result<(), Failure> {
    let model = BpeModel::load(&a.model)?;
    let corpus = corpus_io::load_tokens(&a.input)?;
    let decoded = model.decode_corpus(&corpus)?;
    if a.unicode {
        emit(a.out.as_deref(), &codec::format_unicode_corpus(&decoded)?)?;
    } else {
        emit_tokens(a.out.as_deref(), &decoded)?;
    }
    Ok(())
}

fn slm_train(a: SlmTrainArgs) -> std::result::Result<(), Failure> {
    if a.order == 0 {
        return Err(usage("--order must be at least 1"));
    }
    if let Some(w) = &a.weights {
        if w.len() != a.order {
            return Err(usage(format!(
                "--weights needs {} values for order {}, got {}",
                a.order,
                a.order,
                w.len()
            )));
        }
    }
    let corpus = corpus_io::load_tokens(&a.input)?;
    let smoothing = Smoothing {
        add_k: a.add_k,
        weights: a.weights,
    };
    let model = NGramModel::train(&corpus, a.order, &smoothing)?;
    model.save(&a.out)?;
    Ok(())
}

fn score(a: ScoreArgs) -> std::result::Result<(), Failure> {
    let model = NGramModel::load(&a.model)?;
    let corpus = corpus_io::load_tokens(&a.input)?;
    let mut out = String::new();
    for (i, utt) in corpus.utterances().iter().enumerate() {
        let lp = model
            .logprob(utt)
            .with_context(|| format!("{}: utterance {}", a.input.display(), i + 1))?;
        writeln!(out, "{lp}").unwrap();
    }
    emit(a.out.as_deref(), &out)?;
    Ok(())
}

fn continue_(a: ContinueArgs) -> std::result::Result<(), Failure> {
    if a.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let decoding = if a.greedy {
        Decoding::Greedy
    } else {
        Decoding::Sample {
            temperature: a.temperature,
            top_k: a.top_k.map(|k| k as usize),
        }
    };
    let model = NGramModel::load(&a.model)?;
    let prompts = corpus_io::load_tokens(&a.prompts)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
    let mut outputs = Vec::with_capacity(prompts.len() * a.samples);
    for prompt in prompts.utterances() {
        let keep = a.prompt_len.unwrap_or(prompt.len()).min(prompt.len());
        let prompt = &prompt[..keep];
        for _ in 0..a.samples {
            let seed = seeds.random::<u64>();
            let seq = slm::slm_continue(&model, prompt, a.max_new, seed, decoding)?;
            if seq.is_empty() {
                eprintln!("continue: dropped an empty sample (empty prompt ended immediately)");
                continue;
            }
            outputs.push(seq);
        }
    }
    let corpus = Corpus::new(outputs, model.vocab_size())?;
    emit_tokens(a.out.as_deref(), &corpus)?;
    Ok(())
}

fn rescore_cmd(a: RescoreArgs) -> std::result::Result<(), Failure> {
    if a.x.contains(&0) {
        return Err(usage("--x values must be at least 1"));
    }
    let model = NGramModel::load(&a.model)?;
    let bpe = a.bpe.as_deref().map(BpeModel::load).transpose()?;
    let cases = rescore::load_manifest(&a.manifest)?;

    let mut lines = String::from("case_id\tbest_candidate\tbest_index\tscore\n");
    let mut ranked: Vec<(RescoreResult, Vec<u32>)> = Vec::new();
    for case in &cases {
        let set = case.load()?;
        let res = rescore::rescore(&model, &set, a.length_norm, bpe.as_ref())
            .with_context(|| format!("case {}", case.case_id))?;
        writeln!(
            lines,
            "{}\t{}\t{}\t{}",
            case.case_id,
            case.candidate_ids[res.best_index],
            res.best_index,
            res.scores[res.best_index]
        )
        .unwrap();
        if let Some(ranks) = set.human_ranks() {
            ranked.push((res, ranks.to_vec()));
        }
    }
    emit(a.out.as_deref(), &lines)?;

    if !ranked.is_empty() {
        let (results, ranks): (Vec<_>, Vec<_>) = ranked.into_iter().unzip();
        let mut report = TopXReport {
            cases: results.len(),
            accuracies: Vec::new(),
        };
        for &x in &a.x {
            report
                .accuracies
                .push((x, rescore::topx_accuracy(&results, &ranks, x)?));
        }
        let text = format!("{}\n{}", report.record(), report.table());
        if a.out.is_some() {
            emit(None, &text)?;
        } else {
            eprint!("{text}");
        }
        if let Some(p) = &a.report.report {
            emit(Some(p), &text)?;
        }
    } else {
        eprintln!("rescore: manifest has no human ranks, top-x accuracy not reported");
    }
    Ok(())
}

struct TopXReport {
    cases: usize,
    accuracies: Vec<(usize, f64)>,
}

impl TopXReport {
    fn record(&self) -> String {
        let mut s = format!("metric=topx cases={}", self.cases);
        for (x, acc) in &self.accuracies {
            write!(s, " top{x}={acc:.4}").unwrap();
        }
        s
    }

    fn table(&self) -> String {
        let mut s = format!("topx ({} cases)\n", self.cases);
        for (x, acc) in &self.accuracies {
            writeln!(s, "  top-{x:<3} {:>8.1}%", acc * 100.0).unwrap();
        }
        s
    }
}

fn metrics_compress(a: MetricsCompressArgs) -> std::result::Result<(), Failure> {
    let base = corpus_io::load_tokens(&a.base)?;
    let encoded = corpus_io::load_tokens(&a.encoded)?;
    let report = metrics::compression_stats(&base, &encoded, encoded.vocab_size())?;
    emit_report(&report, &a.report)?;
    Ok(())
}

fn metrics_vert(a: MetricsVertArgs) -> std::result::Result<(), Failure> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let corpus = corpus_io::load_tokens(&a.input)?;
    let report = metrics::vert(corpus.utterances(), a.n)?;
    emit_report(&report, &a.report)?;
    Ok(())
}

fn metrics_syntax(a: MetricsSyntaxArgs) -> std::result::Result<(), Failure> {
    if a.block == 0 {
        return Err(usage("--block must be at least 1"));
    }
    let model = NGramModel::load(&a.model)?;
    let bpe = a.bpe.as_deref().map(BpeModel::load).transpose()?;
    let corpus = corpus_io::load_tokens(&a.input)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
    let mut pairs = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for utt in corpus.utterances() {
        let seed = seeds.random::<u64>();
        if utt.len() < 2 {
            skipped += 1;
            continue;
        }
        let shuffled = metrics::shuffle_corrupt(utt, a.block, seed)?;
        let pair = match &bpe {
            Some(b) => SyntaxPair {
                correct: b.encode(utt)?,
                corrupted: b.encode(&shuffled)?,
            },
            None => SyntaxPair {
                correct: utt.clone(),
                corrupted: shuffled,
            },
        };
        pairs.push(pair);
    }
    if skipped > 0 {
        eprintln!("metrics-syntax: skipped {skipped} utterances shorter than 2 tokens");
    }
    let report = metrics::syntax_accuracy(&model, &pairs)?;
    emit_report(&report, &a.report)?;
    Ok(())
}

fn metrics_xent(a: MetricsXentArgs) -> std::result::Result<(), Failure> {
    let model = NGramModel::load(&a.model)?;
    let corpus = corpus_io::load_tokens(&a.input)?;
    let report = metrics::cross_entropy(corpus.utterances(), &model)?;
    emit_report(&report, &a.report)?;
    Ok(())
}
