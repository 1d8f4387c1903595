//! Evaluation measures: compression, syntax discrimination, n-gram
//! diversity (self-BLEU, auto-BLEU, VERT) and cross-entropy under a
//! reference model.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus_io::{Corpus, TokenSequence};
use crate::error::{Error, Result};
use crate::slm::SeqModel;

/// A metric result that renders as one `key=value` record line and as an
/// aligned two-column table.
pub trait Report {
    fn name(&self) -> &'static str;
    fn fields(&self) -> Vec<(&'static str, String)>;

    fn record(&self) -> String {
        let mut out = format!("metric={}", self.name());
        for (k, v) in self.fields() {
            write!(out, " {k}={v}").unwrap();
        }
        out
    }

    fn table(&self) -> String {
        let fields = self.fields();
        let width = fields.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = format!("{}\n", self.name());
        for (k, v) in fields {
            writeln!(out, "  {k:<width$}  {v:>14}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub avg_len_base: f64,
    pub avg_len_encoded: f64,
    pub ratio: f64,
    pub vocab_size: usize,
}

impl Report for CompressionReport {
    fn name(&self) -> &'static str {
        "compress"
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("avg_len_base", format!("{:.4}", self.avg_len_base)),
            ("avg_len_encoded", format!("{:.4}", self.avg_len_encoded)),
            ("ratio", format!("{:.4}", self.ratio)),
        ]
    }
}

pub fn compression_stats(
    base: &Corpus,
    encoded: &Corpus,
    vocab_size: usize,
) -> Result<CompressionReport> {
    if base.len() != encoded.len() {
        return Err(Error::invalid(format!(
            "base has {} utterances but encoded has {}",
            base.len(),
            encoded.len()
        )));
    }
    if base.is_empty() {
        return Err(Error::Empty("no utterances to compare".into()));
    }
    let enc_total = encoded.total_tokens();
    if enc_total == 0 {
        return Err(Error::Empty("encoded corpus has zero length".into()));
    }
    let n = base.len() as f64;
    let avg_len_base = base.total_tokens() as f64 / n;
    let avg_len_encoded = enc_total as f64 / n;
    Ok(CompressionReport {
        avg_len_base,
        avg_len_encoded,
        ratio: avg_len_base / avg_len_encoded,
        vocab_size,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxPair {
    pub correct: TokenSequence,
    pub corrupted: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxReport {
    pub pairs: usize,
    pub correct: usize,
    pub ties: usize,
    pub accuracy: f64,
}

impl Report for SyntaxReport {
    fn name(&self) -> &'static str {
        "syntax"
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("pairs", self.pairs.to_string()),
            ("correct", self.correct.to_string()),
            ("ties", self.ties.to_string()),
            ("accuracy", format!("{:.4}", self.accuracy)),
        ]
    }
}

/// A pair counts as correct only when the correct member scores strictly higher.
pub fn syntax_accuracy<M: SeqModel + ?Sized>(
    model: &M,
    pairs: &[SyntaxPair],
) -> Result<SyntaxReport> {
    if pairs.is_empty() {
        return Err(Error::Empty("no syntax pairs".into()));
    }
    let mut correct = 0;
    let mut ties = 0;
    for p in pairs {
        let good = model.logprob(&p.correct)?;
        let bad = model.logprob(&p.corrupted)?;
        if good > bad {
            correct += 1;
        } else if good == bad {
            ties += 1;
        }
    }
    Ok(SyntaxReport {
        pairs: pairs.len(),
        correct,
        ties,
        accuracy: correct as f64 / pairs.len() as f64,
    })
}

/// Uniformly permutes the contiguous blocks of `unit_len` tokens (the last
/// block may be shorter). A sequence that forms a single block is returned
/// unchanged.
pub fn shuffle_corrupt(seq: &[u32], unit_len: usize, seed: u64) -> Result<TokenSequence> {
    if unit_len == 0 {
        return Err(Error::invalid("block size must be at least 1"));
    }
    if seq.len() < 2 {
        return Err(Error::invalid(format!(
            "sequence of length {} is too short to shuffle",
            seq.len()
        )));
    }
    let mut blocks: Vec<&[u32]> = seq.chunks(unit_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    blocks.shuffle(&mut rng);
    Ok(blocks.concat().into())
}

fn ngram_counts(seq: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts = HashMap::new();
    for g in seq.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    Ok(())
}

/// Fraction of the n-gram occurrences in `seq` whose n-gram occurs at least
/// twice in `seq`.
pub fn auto_bleu(seq: &[u32], n: usize) -> Result<f64> {
    check_order(n)?;
    if seq.len() < n {
        return Err(Error::invalid(format!(
            "sequence of length {} has no {n}-grams",
            seq.len()
        )));
    }
    let counts = ngram_counts(seq, n);
    let repeated: usize = counts.values().filter(|&&c| c >= 2).sum();
    Ok(repeated as f64 / (seq.len() - n + 1) as f64)
}

/// Mean over texts of the clipped n-gram precision of each text against all
/// other texts as references (clip = max count in any single reference; no
/// brevity penalty).
pub fn self_bleu(texts: &[TokenSequence], n: usize) -> Result<f64> {
    check_order(n)?;
    if texts.len() < 2 {
        return Err(Error::invalid("self-BLEU needs at least 2 texts"));
    }
    if let Some(t) = texts.iter().find(|t| t.len() < n) {
        return Err(Error::invalid(format!(
            "text of length {} has no {n}-grams",
            t.len()
        )));
    }
    let tables: Vec<_> = texts.iter().map(|t| ngram_counts(t, n)).collect();
    let mut sum = 0.0;
    for (i, hyp) in tables.iter().enumerate() {
        let mut clipped = 0usize;
        for (g, &c) in hyp {
            let max_ref = tables
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, t)| t.get(g).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped += c.min(max_ref);
        }
        sum += clipped as f64 / (texts[i].len() - n + 1) as f64;
    }
    Ok(sum / texts.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertReport {
    pub n: usize,
    pub self_bleu: f64,
    /// Mean auto-BLEU over the texts.
    pub auto_bleu: f64,
    /// `100 * sqrt(self_bleu * auto_bleu)`; higher means less diverse.
    pub vert: f64,
}

impl VertReport {
    pub fn from_components(n: usize, self_bleu: f64, auto_bleu: f64) -> Self {
        VertReport {
            n,
            self_bleu,
            auto_bleu,
            vert: 100.0 * (self_bleu * auto_bleu).sqrt(),
        }
    }
}

impl Report for VertReport {
    fn name(&self) -> &'static str {
        "vert"
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n", self.n.to_string()),
            ("self_bleu", format!("{:.6}", self.self_bleu)),
            ("auto_bleu", format!("{:.6}", self.auto_bleu)),
            ("vert", format!("{:.4}", self.vert)),
        ]
    }
}

pub fn vert(texts: &[TokenSequence], n: usize) -> Result<VertReport> {
    let sb = self_bleu(texts, n)?;
    let mut ab = 0.0;
    for t in texts {
        ab += auto_bleu(t, n)?;
    }
    Ok(VertReport::from_components(n, sb, ab / texts.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropyReport {
    pub n_samples: usize,
    /// Mean negative log-probability, in nats per sample.
    pub entropy: f64,
}

impl Report for CrossEntropyReport {
    fn name(&self) -> &'static str {
        "xent"
    }

    fn fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_samples", self.n_samples.to_string()),
            ("cross_entropy_nats", format!("{:.6}", self.entropy)),
        ]
    }
}

pub fn cross_entropy<M: SeqModel + ?Sized>(
    samples: &[TokenSequence],
    reference: &M,
) -> Result<CrossEntropyReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to score".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += reference.logprob(s)?;
    }
    Ok(CrossEntropyReport {
        n_samples: samples.len(),
        entropy: -total / samples.len() as f64,
    })
}
