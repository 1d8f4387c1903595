//! Autoregressive sequence models over unit ids.
//!
//! [`SeqModel`] is the scoring/sampling interface used by rescoring and the
//! metrics. [`NGramModel`] implements it with interpolated add-k n-gram
//! estimates:
//!
//! ```text
//! P(w | h) = sum_{m=1..n} lambda_m * (c(h_m, w) + k) / (c(h_m) + k * (V + 1))
//! ```
//!
//! where `h_m` is the last `m - 1` tokens of the BOS-padded history and the
//! `V + 1` outcomes are the unit vocabulary plus end-of-sequence. BOS only
//! ever appears as context and EOS only as an outcome, so both share the id
//! `V` internally.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader, Writer};
use crate::corpus_io::{Corpus, TokenSequence};
use crate::error::{Error, Result};

pub const NGRAM_MAGIC: &[u8; 8] = b"ABPENGRM";
pub const NGRAM_VERSION: u32 = 1;

/// Autoregressive probability model over `vocab_size` units plus EOS.
pub trait SeqModel {
    fn vocab_size(&self) -> usize;

    /// Next-outcome distribution of length `vocab_size + 1`; the last entry is EOS.
    fn next_dist(&self, context: &[u32]) -> Result<Vec<f64>>;

    /// Natural-log probability of `seq` followed by EOS.
    fn logprob(&self, seq: &[u32]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::invalid("cannot score an empty sequence"));
        }
        check_ids(seq, self.vocab_size())?;
        let mut total = 0.0;
        for i in 0..=seq.len() {
            let dist = self.next_dist(&seq[..i])?;
            let next = seq.get(i).map_or(self.vocab_size(), |&id| id as usize);
            total += dist[next].ln();
        }
        Ok(total)
    }

    fn eos(&self) -> usize {
        self.vocab_size()
    }
}

fn check_ids(seq: &[u32], vocab_size: usize) -> Result<()> {
    match seq.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(Error::OutOfVocabulary { id, vocab_size }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Smoothing {
    pub add_k: f64,
    /// One weight per order, lowest order first. Uniform when absent;
    /// normalised to sum to one otherwise.
    pub weights: Option<Vec<f64>>,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing {
            add_k: 0.1,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Interpolated add-k n-gram model.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    vocab_size: usize,
    order: usize,
    add_k: f64,
    weights: Vec<f64>,
    /// `tables[m]` holds contexts of length `m`.
    tables: Vec<HashMap<Box<[u32]>, ContextCounts>>,
}

fn normalised_weights(order: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / order as f64; order]),
        Some(w) => {
            if w.len() != order {
                return Err(Error::invalid(format!(
                    "expected {order} interpolation weights, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::invalid(
                    "interpolation weights must be finite and non-negative",
                ));
            }
            let sum: f64 = w.iter().sum();
            if sum <= 0.0 {
                return Err(Error::invalid("interpolation weights must not all be zero"));
            }
            Ok(w.iter().map(|x| x / sum).collect())
        }
    }
}

impl NGramModel {
    /// Counts n-grams of orders `1..=order` over every utterance padded with
    /// `order - 1` BOS symbols and terminated by EOS.
    pub fn train(corpus: &Corpus, order: usize, smoothing: &Smoothing) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty(
                "cannot train a sequence model on an empty corpus".into(),
            ));
        }
        let mut model = NGramModel::empty(corpus.vocab_size(), order, smoothing)?;
        let boundary = model.boundary();
        let mut padded = Vec::new();
        for utt in corpus.utterances() {
            check_ids(utt, model.vocab_size)?;
            padded.clear();
            padded.resize(order - 1, boundary);
            padded.extend_from_slice(utt);
            padded.push(boundary);
            for i in order - 1..padded.len() {
                let target = padded[i];
                for (m, table) in model.tables.iter_mut().enumerate() {
                    let ctx = &padded[i - m..i];
                    let entry = match table.get_mut(ctx) {
                        Some(e) => e,
                        None => table.entry(ctx.into()).or_default(),
                    };
                    entry.total += 1;
                    *entry.next.entry(target).or_default() += 1;
                }
            }
        }
        Ok(model)
    }

    fn empty(vocab_size: usize, order: usize, smoothing: &Smoothing) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("order must be at least 1"));
        }
        if vocab_size == 0 || vocab_size >= u32::MAX as usize {
            return Err(Error::invalid(format!(
                "unsupported vocabulary size {vocab_size}"
            )));
        }
        if !(smoothing.add_k.is_finite() && smoothing.add_k > 0.0) {
            return Err(Error::invalid(format!(
                "add_k must be positive, got {}",
                smoothing.add_k
            )));
        }
        Ok(NGramModel {
            vocab_size,
            order,
            add_k: smoothing.add_k,
            weights: normalised_weights(order, smoothing.weights.as_deref())?,
            tables: vec![HashMap::new(); order],
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn add_k(&self) -> f64 {
        self.add_k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn boundary(&self) -> u32 {
        self.vocab_size as u32
    }

    /// Raw count `c(context, next)`; `context` may contain the BOS/EOS id `V`.
    pub fn count(&self, context: &[u32], next: u32) -> u64 {
        self.tables
            .get(context.len())
            .and_then(|t| t.get(context))
            .and_then(|e| e.next.get(&next).copied())
            .unwrap_or(0)
    }

    /// Last `order - 1` tokens of `context`, left-padded with BOS.
    fn history(&self, context: &[u32]) -> Vec<u32> {
        let keep = self.order - 1;
        let mut h = vec![self.boundary(); keep.saturating_sub(context.len())];
        h.extend_from_slice(&context[context.len().saturating_sub(keep)..]);
        h
    }

    fn lookups<'a>(&'a self, history: &[u32]) -> Vec<Option<&'a ContextCounts>> {
        (0..self.order)
            .map(|m| self.tables[m].get(&history[history.len() - m..]))
            .collect()
    }

    fn term(&self, m: usize, count: u64, total: u64) -> f64 {
        let outcomes = (self.vocab_size + 1) as f64;
        self.weights[m] * ((count as f64 + self.add_k) / (total as f64 + self.add_k * outcomes))
    }

    /// `P(next | context)` where `next == vocab_size` means EOS.
    pub fn cond_prob(&self, context: &[u32], next: u32) -> Result<f64> {
        check_ids(context, self.vocab_size)?;
        if next as usize > self.vocab_size {
            return Err(Error::OutOfVocabulary {
                id: next,
                vocab_size: self.vocab_size + 1,
            });
        }
        let h = self.history(context);
        Ok(self.prob_from(&self.lookups(&h), next))
    }

    fn prob_from(&self, found: &[Option<&ContextCounts>], next: u32) -> f64 {
        let mut p = 0.0;
        for (m, e) in found.iter().enumerate() {
            let (c, t) = e.map_or((0, 0), |e| {
                (e.next.get(&next).copied().unwrap_or(0), e.total)
            });
            p += self.term(m, c, t);
        }
        p
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_writer().write_to(path.as_ref())
    }

    /// Serialised bytes; identical models give identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_writer().into_vec()
    }

    fn to_writer(&self) -> Writer {
        let mut w = Writer::new(NGRAM_MAGIC, NGRAM_VERSION);
        w.u64(self.vocab_size as u64);
        w.u32(self.order as u32);
        w.f64(self.add_k);
        for &x in &self.weights {
            w.f64(x);
        }
        let triples = self.sorted_triples();
        w.u64(triples.len() as u64);
        for (ctx, token, count) in triples {
            w.u64(ctx.len() as u64);
            for &id in ctx {
                w.u64(id as u64);
            }
            w.u64(token as u64);
            w.u64(count);
        }
        w
    }

    /// `(context, token, count)` sorted by context length, context, token.
    fn sorted_triples(&self) -> Vec<(&[u32], u32, u64)> {
        let mut out = Vec::new();
        for table in &self.tables {
            let mut contexts: Vec<_> = table.iter().collect();
            contexts.sort_unstable_by(|a, b| a.0.cmp(b.0));
            for (ctx, e) in contexts {
                let mut next: Vec<_> = e.next.iter().map(|(&t, &c)| (t, c)).collect();
                next.sort_unstable();
                out.extend(next.into_iter().map(|(t, c)| (&ctx[..], t, c)));
            }
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = binio::read_file(path)?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, origin, NGRAM_MAGIC)?;
        if version != NGRAM_VERSION {
            return Err(r.error(format!("unsupported n-gram model version {version}")));
        }
        let vocab_size = r.u64()? as usize;
        let order = r.u32()? as usize;
        if order == 0 || order > 64 {
            return Err(r.error(format!("invalid order {order}")));
        }
        let add_k = r.f64()?;
        let mut weights = Vec::with_capacity(order);
        for _ in 0..order {
            weights.push(r.f64()?);
        }
        let smoothing = Smoothing {
            add_k,
            weights: Some(weights.clone()),
        };
        let mut model =
            NGramModel::empty(vocab_size, order, &smoothing).map_err(|e| r.error(e.to_string()))?;
        // Keep the stored weights bit-exact rather than renormalising them.
        model.weights = weights;

        let n = r.u64()?;
        let mut prev: Option<(Vec<u32>, u32)> = None;
        for _ in 0..n {
            let len = r.u64()? as usize;
            if len >= order {
                return Err(r.error(format!("context length {len} exceeds order {order}")));
            }
            let mut ctx = Vec::with_capacity(len);
            for _ in 0..len {
                ctx.push(read_id(&mut r, vocab_size)?);
            }
            let token = read_id(&mut r, vocab_size)?;
            let count = r.u64()?;
            if count == 0 {
                return Err(r.error("zero count in n-gram table"));
            }
            let key = (ctx, token);
            if let Some(p) = &prev {
                let ordered = (p.0.len(), &p.0, p.1) < (key.0.len(), &key.0, key.1);
                if !ordered {
                    return Err(r.error("n-gram triples are not strictly sorted"));
                }
            }
            let e = model.tables[len]
                .entry(key.0.as_slice().into())
                .or_default();
            e.total += count;
            e.next.insert(token, count);
            prev = Some(key);
        }
        r.finish()?;
        Ok(model)
    }
}

fn read_id(r: &mut Reader<'_>, vocab_size: usize) -> Result<u32> {
    let id = r.u64()?;
    if id > vocab_size as u64 {
        return Err(r.error(format!("id {id} outside vocabulary {vocab_size}")));
    }
    Ok(id as u32)
}

impl SeqModel for NGramModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_dist(&self, context: &[u32]) -> Result<Vec<f64>> {
        check_ids(context, self.vocab_size)?;
        let h = self.history(context);
        let found = self.lookups(&h);
        let outcomes = self.vocab_size + 1;
        // Dense per-order counts; the arithmetic matches `prob_from` exactly.
        let mut dense = vec![0u64; outcomes];
        let mut dist = vec![0.0f64; outcomes];
        for (m, e) in found.iter().enumerate() {
            let total = e.map_or(0, |e| e.total);
            if let Some(e) = e {
                for (&t, &c) in &e.next {
                    dense[t as usize] = c;
                }
            }
            for (p, c) in dist.iter_mut().zip(dense.iter_mut()) {
                *p += self.term(m, *c, total);
                *c = 0;
            }
        }
        Ok(dist)
    }

    fn logprob(&self, seq: &[u32]) -> Result<f64> {
        if seq.is_empty() {
            return Err(Error::invalid("cannot score an empty sequence"));
        }
        check_ids(seq, self.vocab_size)?;
        let keep = self.order - 1;
        let mut padded = vec![self.boundary(); keep];
        padded.extend_from_slice(seq);
        padded.push(self.boundary());
        let mut total = 0.0;
        for i in keep..padded.len() {
            let found = self.lookups(&padded[i - keep..i]);
            total += self.prob_from(&found, padded[i]).ln();
        }
        Ok(total)
    }
}

/// How the next unit is chosen during continuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    /// Most probable outcome, lowest id on ties (the zero-temperature limit).
    Greedy,
    /// Sample from `softmax(ln p / temperature)`, optionally restricted to the
    /// `top_k` most probable outcomes and renormalised.
    Sample {
        temperature: f64,
        top_k: Option<usize>,
    },
}

impl Decoding {
    fn validate(&self) -> Result<()> {
        match *self {
            Decoding::Greedy => Ok(()),
            Decoding::Sample { temperature, top_k } => {
                if !(temperature.is_finite() && temperature > 0.0) {
                    return Err(Error::invalid(format!(
                        "temperature must be positive, got {temperature}"
                    )));
                }
                if top_k == Some(0) {
                    return Err(Error::invalid("top_k must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws one outcome index from a next-unit distribution.
pub fn sample_outcome(
    dist: &[f64],
    temperature: f64,
    top_k: Option<usize>,
    rng: &mut impl Rng,
) -> usize {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    if let Some(k) = top_k.filter(|&k| k < dist.len()) {
        idx.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx.sort_unstable();
    }
    let logits: Vec<f64> = idx.iter().map(|&i| dist[i].ln() / temperature).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (&i, &w) in idx.iter().zip(&weights) {
        acc += w;
        if acc > u {
            return i;
        }
    }
    *idx.last().unwrap()
}

/// Extends `prompt` by up to `max_new` units, stopping early at EOS.
pub fn slm_continue<M: SeqModel + ?Sized>(
    model: &M,
    prompt: &[u32],
    max_new: usize,
    seed: u64,
    decoding: Decoding,
) -> Result<TokenSequence> {
    decoding.validate()?;
    check_ids(prompt, model.vocab_size())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = prompt.to_vec();
    for _ in 0..max_new {
        let dist = model.next_dist(&out)?;
        let next = match decoding {
            Decoding::Greedy => argmax(&dist),
            Decoding::Sample { temperature, top_k } => {
                sample_outcome(&dist, temperature, top_k, &mut rng)
            }
        };
        if next == model.eos() {
            break;
        }
        out.push(next as u32);
    }
    Ok(TokenSequence(out))
}
