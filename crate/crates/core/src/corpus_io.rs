//! Token corpora, feature matrices and their on-disk formats, plus the
//! deterministic synthetic corpus generator used for desk-scale runs.
//!
//! Token files are line oriented: an optional `#vocab <N>` header followed by
//! one utterance per line, ids as space separated decimals. Feature matrices
//! are either CSV or the `ABPEFEAT` little-endian binary layout.

use std::fmt::Write as _;
use std::ops::Deref;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"ABPEFEAT";
pub const FEATURE_VERSION: u32 = 1;

/// One utterance as an ordered list of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    /// Fails with the first id that is not below `vocab_size`.
    pub fn check_vocab(&self, vocab_size: usize) -> Result<()> {
        match self.0.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(Error::OutOfVocabulary { id, vocab_size }),
            None => Ok(()),
        }
    }
}

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

impl From<&[u32]> for TokenSequence {
    fn from(ids: &[u32]) -> Self {
        TokenSequence(ids.to_vec())
    }
}

impl FromIterator<u32> for TokenSequence {
    fn from_iter<I: IntoIterator<Item = u32>>(iter: I) -> Self {
        TokenSequence(iter.into_iter().collect())
    }
}

/// An ordered collection of utterances over a closed vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    utterances: Vec<TokenSequence>,
    vocab_size: usize,
}

impl Corpus {
    pub fn new(utterances: Vec<TokenSequence>, vocab_size: usize) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be positive"));
        }
        for utt in &utterances {
            utt.check_vocab(vocab_size)?;
        }
        Ok(Corpus {
            utterances,
            vocab_size,
        })
    }

    /// Builds a corpus whose vocabulary is `1 + max id` (1 when no ids occur).
    pub fn from_utterances(utterances: Vec<TokenSequence>) -> Self {
        let vocab_size = utterances
            .iter()
            .flat_map(|u| u.iter().copied())
            .max()
            .map_or(1, |m| m as usize + 1);
        Corpus {
            utterances,
            vocab_size,
        }
    }

    pub fn utterances(&self) -> &[TokenSequence] {
        &self.utterances
    }

    pub fn into_utterances(self) -> Vec<TokenSequence> {
        self.utterances
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.utterances.iter().map(|u| u.len()).sum()
    }

    /// Returns a corpus with the same utterances and a larger declared vocabulary.
    pub fn with_vocab_size(self, vocab_size: usize) -> Result<Self> {
        Corpus::new(self.utterances, vocab_size)
    }
}

pub fn load_tokens(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tokens(&text, path)
}

/// Parses the token file format. `origin` is only used in error messages.
pub fn parse_tokens(text: &str, origin: &Path) -> Result<Corpus> {
    let mut header_vocab = None;
    let mut utterances = Vec::new();
    let mut max_id: Option<u32> = None;

    for (idx, raw) in text.split('\n').enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if idx == 0 {
            if let Some(rest) = line.strip_prefix("#vocab") {
                let n: usize = rest.trim().parse().map_err(|_| {
                    Error::format(origin, lineno, format!("bad vocab header {line:?}"))
                })?;
                if n == 0 {
                    return Err(Error::format(
                        origin,
                        lineno,
                        "vocab header must be positive",
                    ));
                }
                header_vocab = Some((n, lineno));
                continue;
            }
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut ids = Vec::new();
        for tok in line.split_ascii_whitespace() {
            if tok.starts_with('-') {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("negative token id {tok:?}"),
                ));
            }
            let id: u32 = tok.parse().map_err(|_| {
                Error::format(origin, lineno, format!("malformed token id {tok:?}"))
            })?;
            max_id = Some(max_id.map_or(id, |m| m.max(id)));
            ids.push(id);
        }
        utterances.push(TokenSequence(ids));
    }

    if utterances.is_empty() {
        return Err(Error::format(origin, 1, "no utterances in token file"));
    }
    let observed = max_id.map_or(1, |m| m as usize + 1);
    let vocab_size = match header_vocab {
        Some((n, lineno)) if n < observed => {
            return Err(Error::format(
                origin,
                lineno,
                format!("header declares vocab {n} but id {} occurs", observed - 1),
            ))
        }
        Some((n, _)) => n,
        None => observed,
    };
    Ok(Corpus {
        utterances,
        vocab_size,
    })
}

/// Renders a corpus in token file format, always with a `#vocab` header.
pub fn format_tokens(corpus: &Corpus) -> Result<String> {
    let mut out = format!("#vocab {}\n", corpus.vocab_size);
    for (i, utt) in corpus.utterances.iter().enumerate() {
        if utt.is_empty() {
            return Err(Error::invalid(format!(
                "utterance {i} is empty and cannot be serialized"
            )));
        }
        for (j, id) in utt.iter().enumerate() {
            if j > 0 {
                out.push(' ');
            }
            write!(out, "{id}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn save_tokens(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_tokens(corpus)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Dense row-major matrix of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature matrix must be non-empty, got {rows}x{dim}"
            )));
        }
        if values.len() != rows * dim {
            return Err(Error::invalid(format!(
                "{rows}x{dim} matrix needs {} values, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(FeatureMatrix { rows, dim, values })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        FeatureMatrix::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim)
    }

    /// Matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix::new(indices.len(), self.dim, values)
    }
}

/// Loads a feature matrix, detecting the binary layout by its magic and
/// falling back to CSV otherwise.
pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = binio::read_file(path)?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_features_binary(&bytes, path)
    } else if bytes.starts_with(b"ABPE") {
        Err(Error::binary(path, "bad magic, expected \"ABPEFEAT\""))
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::binary(path, "neither ABPEFEAT binary nor UTF-8 CSV"))?;
        parse_features_csv(&text, path)
    }
}

fn decode_features_binary(bytes: &[u8], path: &Path) -> Result<FeatureMatrix> {
    let (mut r, version) = Reader::open(bytes, path, FEATURE_MAGIC)?;
    if version != FEATURE_VERSION {
        return Err(r.error(format!("unsupported feature version {version}")));
    }
    let rows = r.u64()? as usize;
    let dim = r.u64()? as usize;
    if rows == 0 || dim == 0 {
        return Err(r.error(format!("empty feature matrix {rows}x{dim}")));
    }
    let count = rows
        .checked_mul(dim)
        .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= r.remaining()))
        .ok_or_else(|| r.error("truncated payload"))?;
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(r.error(format!(
                "non-finite value at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        values.push(v);
    }
    r.finish()?;
    FeatureMatrix::new(rows, dim, values)
}

pub fn parse_features_csv(text: &str, origin: &Path) -> Result<FeatureMatrix> {
    let mut values = Vec::new();
    let mut dim = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for field in line.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| {
                Error::format(origin, lineno, format!("malformed number {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("non-finite value {field:?}"),
                ));
            }
            values.push(v);
        }
        let cols = values.len() - before;
        match dim {
            None => dim = Some(cols),
            Some(d) if d != cols => {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("expected {d} columns, found {cols}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let dim = dim.ok_or_else(|| Error::format(origin, 1, "no rows in feature file"))?;
    FeatureMatrix::new(rows, dim, values)
}

pub fn save_features_binary(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
    w.u64(features.rows as u64);
    w.u64(features.dim as u64);
    for &v in &features.values {
        w.f32(v);
    }
    w.write_to(path.as_ref())
}

/// Writes CSV using the shortest decimal form that reads back to the same f32.
pub fn save_features_csv(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for row in features.iter_rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of the synthetic corpus generator.
///
/// Utterances interleave Zipf-distributed base tokens (token 0 most frequent)
/// with copies of a small set of fixed motifs, so the stream carries the kind
/// of recurring patterns that BPE can compress.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub n_utts: usize,
    /// Inclusive target length range; an utterance stops at the first token
    /// boundary at or past its target, so motifs are never cut.
    pub len_range: (usize, usize),
    pub motif_count: usize,
    pub motif_len_range: (usize, usize),
    /// Probability that the next emission is a motif rather than a single token.
    pub motif_rate: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Fixed motifs replacing the generated ones when set.
    pub motifs: Option<Vec<TokenSequence>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 50,
            n_utts: 2000,
            len_range: (20, 60),
            motif_count: 5,
            motif_len_range: (3, 8),
            motif_rate: 0.6,
            zipf_exponent: 1.1,
            seed: 7,
            motifs: None,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("synth vocab_size must be at least 2"));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::invalid("synth vocab_size does not fit 32-bit ids"));
        }
        if self.n_utts == 0 {
            return Err(Error::invalid("synth n_utts must be positive"));
        }
        let (lo, hi) = self.len_range;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("invalid len_range {lo}..={hi}")));
        }
        if !(0.0..=1.0).contains(&self.motif_rate) {
            return Err(Error::invalid(format!(
                "motif_rate {} outside [0, 1]",
                self.motif_rate
            )));
        }
        if !self.zipf_exponent.is_finite() || self.zipf_exponent < 0.0 {
            return Err(Error::invalid(format!(
                "zipf_exponent {} must be finite and non-negative",
                self.zipf_exponent
            )));
        }
        match &self.motifs {
            Some(motifs) => {
                if motifs.is_empty() && self.motif_rate > 0.0 {
                    return Err(Error::invalid("explicit motif list is empty"));
                }
                for m in motifs {
                    if m.is_empty() {
                        return Err(Error::invalid("explicit motifs must be non-empty"));
                    }
                    m.check_vocab(self.vocab_size)?;
                }
            }
            None => {
                let (mlo, mhi) = self.motif_len_range;
                if self.motif_rate > 0.0 && self.motif_count == 0 {
                    return Err(Error::invalid("motif_rate > 0 requires motif_count >= 1"));
                }
                if self.motif_count > 0 && (mlo == 0 || mlo > mhi) {
                    return Err(Error::invalid(format!(
                        "invalid motif_len_range {mlo}..={mhi}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Inverse-CDF sampler over ranks `0..n` with weight `1 / (rank + 1)^s`.
struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    fn new(n: usize, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cdf = (0..n)
            .map(|r| {
                acc += ((r + 1) as f64).powf(-exponent);
                acc
            })
            .collect();
        ZipfTable { cdf }
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        let total = *self.cdf.last().unwrap();
        let u = rng.random::<f64>() * total;
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1) as u32
    }
}

/// Generates a corpus as a pure function of `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = ZipfTable::new(spec.vocab_size, spec.zipf_exponent);

    let motifs: Vec<TokenSequence> = match &spec.motifs {
        Some(m) => m.clone(),
        None => (0..spec.motif_count)
            .map(|_| {
                let len = rng.random_range(spec.motif_len_range.0..=spec.motif_len_range.1);
                (0..len)
                    .map(|_| rng.random_range(0..spec.vocab_size as u32))
                    .collect()
            })
            .collect(),
    };

    let mut utterances = Vec::with_capacity(spec.n_utts);
    for _ in 0..spec.n_utts {
        let target = rng.random_range(spec.len_range.0..=spec.len_range.1);
        let mut ids = Vec::with_capacity(target + 8);
        while ids.len() < target {
            if rng.random::<f64>() < spec.motif_rate {
                let m = &motifs[rng.random_range(0..motifs.len())];
                ids.extend_from_slice(m);
            } else {
                ids.push(zipf.sample(&mut rng));
            }
        }
        utterances.push(TokenSequence(ids));
    }
    Corpus::new(utterances, spec.vocab_size)
}

/// Renders a token corpus as noisy feature frames: every token id owns a
/// random centre in `[0, 10)^dim` and each frame is that centre plus uniform
/// noise in `[-noise, noise]`. Returns the frames of all utterances stacked in
/// order together with the per-utterance frame counts.
pub fn synth_features(
    corpus: &Corpus,
    dim: usize,
    noise: f32,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if dim == 0 {
        return Err(Error::invalid("feature dim must be positive"));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::invalid("noise must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<f32> = (0..corpus.vocab_size() * dim)
        .map(|_| rng.random_range(0.0f32..10.0))
        .collect();
    let mut values = Vec::with_capacity(corpus.total_tokens() * dim);
    let mut lengths = Vec::with_capacity(corpus.len());
    for utt in corpus.utterances() {
        lengths.push(utt.len());
        for &id in utt.iter() {
            let c = &centres[id as usize * dim..(id as usize + 1) * dim];
            for &x in c {
                let jitter = if noise > 0.0 {
                    rng.random_range(-noise..=noise)
                } else {
                    0.0
                };
                values.push(x + jitter);
            }
        }
    }
    let rows = values.len() / dim;
    Ok((FeatureMatrix::new(rows, dim, values)?, lengths))
}

/// Reads a lengths file: one non-negative integer per line.
pub fn load_lengths(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::format(path, idx + 1, format!("malformed length {line:?}")))?,
        );
    }
    Ok(out)
}

pub fn save_lengths(lengths: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for l in lengths {
        writeln!(out, "{l}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
