//! Byte-pair encoding over integer base-token streams.
//!
//! Units `0..base_size` are the base alphabet; merge `i` creates unit
//! `base_size + i`. Training repeatedly merges the most frequent adjacent pair
//! (non-overlapping, left to right, never across utterances), preferring the
//! lexicographically smallest pair on frequency ties. Encoding replays the
//! merges in rank order, which reproduces the training-time segmentation.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::codec;
use crate::corpus_io::{Corpus, TokenSequence};
use crate::error::{Error, Result};

pub type Pair = (u32, u32);

pub const MERGES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    base_size: usize,
    merges: Vec<Pair>,
    unit_len: Vec<u32>,
    ranks: HashMap<Pair, u32>,
}

impl BpeModel {
    /// Validates and indexes a merge list.
    pub fn new(base_size: usize, merges: Vec<Pair>) -> Result<Self> {
        if base_size == 0 {
            return Err(Error::invalid("base alphabet must be non-empty"));
        }
        if base_size > codec::CAPACITY {
            return Err(Error::invalid(format!(
                "base alphabet {base_size} exceeds unicode capacity {}",
                codec::CAPACITY
            )));
        }
        if base_size + merges.len() > u32::MAX as usize {
            return Err(Error::invalid("too many units for 32-bit ids"));
        }
        let mut unit_len = vec![1u32; base_size];
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, &(l, r)) in merges.iter().enumerate() {
            let limit = base_size + i;
            if l as usize >= limit || r as usize >= limit {
                return Err(Error::invalid(format!(
                    "merge {i} ({l}, {r}) references a unit not below {limit}"
                )));
            }
            if ranks.insert((l, r), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate merge ({l}, {r})")));
            }
            unit_len.push(unit_len[l as usize] + unit_len[r as usize]);
        }
        Ok(BpeModel {
            base_size,
            merges,
            unit_len,
            ranks,
        })
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn merges(&self) -> &[Pair] {
        &self.merges
    }

    /// Total number of units: base alphabet plus merges.
    pub fn vocab_size(&self) -> usize {
        self.base_size + self.merges.len()
    }

    /// Number of base tokens a unit expands to.
    pub fn unit_len(&self, unit: u32) -> Option<u32> {
        self.unit_len.get(unit as usize).copied()
    }

    /// Model restricted to its first `n` merges.
    pub fn truncated(&self, n: usize) -> BpeModel {
        BpeModel::new(
            self.base_size,
            self.merges[..n.min(self.merges.len())].to_vec(),
        )
        .unwrap()
    }

    pub fn encode(&self, seq: &[u32]) -> Result<TokenSequence> {
        if let Some(&id) = seq.iter().find(|&&id| id as usize >= self.base_size) {
            return Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.base_size,
            });
        }
        let mut cur = seq.to_vec();
        let mut scratch = Vec::with_capacity(cur.len());
        loop {
            let best = cur
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let pair = self.merges[rank as usize];
            apply_merge(&cur, pair, self.base_size as u32 + rank, &mut scratch);
            std::mem::swap(&mut cur, &mut scratch);
        }
        Ok(TokenSequence(cur))
    }

    pub fn decode(&self, seq: &[u32]) -> Result<TokenSequence> {
        let vocab = self.vocab_size();
        let mut out = Vec::with_capacity(seq.len() * 2);
        let mut stack = Vec::new();
        for &id in seq {
            if id as usize >= vocab {
                return Err(Error::OutOfVocabulary {
                    id,
                    vocab_size: vocab,
                });
            }
            stack.push(id);
            while let Some(u) = stack.pop() {
                if (u as usize) < self.base_size {
                    out.push(u);
                } else {
                    let (l, r) = self.merges[u as usize - self.base_size];
                    stack.push(r);
                    stack.push(l);
                }
            }
        }
        Ok(TokenSequence(out))
    }

    pub fn encode_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        let utts = corpus
            .utterances()
            .iter()
            .map(|u| self.encode(u))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(utts, self.vocab_size())
    }

    pub fn decode_corpus(&self, corpus: &Corpus) -> Result<Corpus> {
        let utts = corpus
            .utterances()
            .iter()
            .map(|u| self.decode(u))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(utts, self.base_size)
    }

    /// Merges file text: `#abpe 1`, `#base N`, then `left right` per merge.
    pub fn to_text(&self) -> String {
        let mut out = format!("#abpe {MERGES_VERSION}\n#base {}\n", self.base_size);
        for (l, r) in &self.merges {
            writeln!(out, "{l} {r}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut header = |key: &str| -> Result<usize> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::format(origin, 1, "missing merges header"))?;
            line.strip_prefix(key)
                .and_then(|rest| rest.trim().parse().ok())
                .ok_or_else(|| Error::format(origin, idx + 1, format!("expected \"{key} <N>\"")))
        };
        let version = header("#abpe")?;
        if version != MERGES_VERSION as usize {
            return Err(Error::format(
                origin,
                1,
                format!("unsupported merges version {version}"),
            ));
        }
        let base_size = header("#base")?;
        if base_size == 0 || base_size > codec::CAPACITY {
            return Err(Error::format(
                origin,
                2,
                format!("invalid base size {base_size}"),
            ));
        }

        let mut merges = Vec::new();
        let mut seen = HashMap::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let pair = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => a.parse::<u32>().ok().zip(b.parse::<u32>().ok()),
                _ => None,
            };
            let (l, r) = pair.ok_or_else(|| {
                Error::format(origin, lineno, format!("malformed merge line {line:?}"))
            })?;
            let limit = base_size + merges.len();
            if l as usize >= limit || r as usize >= limit {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("merge ({l}, {r}) references undefined unit (limit {limit})"),
                ));
            }
            if seen.insert((l, r), lineno).is_some() {
                return Err(Error::format(
                    origin,
                    lineno,
                    format!("duplicate merge ({l}, {r})"),
                ));
            }
            merges.push((l, r));
        }
        BpeModel::new(base_size, merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::from_text(&text, path)
    }
}

/// Replaces non-overlapping occurrences of `pair`, scanning left to right.
fn apply_merge(seq: &[u32], pair: Pair, unit: u32, out: &mut Vec<u32>) {
    out.clear();
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
            out.push(unit);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
}

/// Calls `f` once per counted occurrence of each adjacent pair. Pairs of two
/// equal units are counted without overlap, so a run of `r` equal units
/// contributes `r / 2`.
pub(crate) fn for_each_pair(seq: &[u32], mut f: impl FnMut(Pair)) {
    let mut last_same = usize::MAX;
    for i in 0..seq.len().saturating_sub(1) {
        let (a, b) = (seq[i], seq[i + 1]);
        if a == b {
            if i > 0 && last_same == i - 1 {
                last_same = usize::MAX;
                continue;
            }
            last_same = i;
        }
        f((a, b));
    }
}

struct PairCounts {
    counts: HashMap<Pair, u64>,
    by_count: BTreeSet<(Reverse<u64>, Pair)>,
}

impl PairCounts {
    fn adjust(&mut self, pair: Pair, delta: i64) {
        if delta == 0 {
            return;
        }
        let old = self.counts.get(&pair).copied().unwrap_or(0);
        let new = (old as i64 + delta) as u64;
        if old > 0 {
            self.by_count.remove(&(Reverse(old), pair));
        }
        if new > 0 {
            self.counts.insert(pair, new);
            self.by_count.insert((Reverse(new), pair));
        } else {
            self.counts.remove(&pair);
        }
    }

    /// Most frequent pair, smallest `(left, right)` on ties.
    fn best(&self) -> Option<(Pair, u64)> {
        self.by_count.first().map(|&(Reverse(c), p)| (p, c))
    }
}

/// Trains merges until the unit vocabulary reaches `vocab_size` or no pair
/// occurs at least twice.
pub fn bpe_train(corpus: &Corpus, vocab_size: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("cannot train BPE on an empty corpus".into()));
    }
    let base = corpus.vocab_size();
    if base > codec::CAPACITY {
        return Err(Error::invalid(format!(
            "base alphabet {base} exceeds unicode capacity {}",
            codec::CAPACITY
        )));
    }
    if vocab_size < base {
        return Err(Error::invalid(format!(
            "target vocabulary {vocab_size} is smaller than base alphabet {base}"
        )));
    }
    let rounds = vocab_size - base;

    let mut seqs: Vec<Vec<u32>> = corpus.utterances().iter().map(|u| u.0.clone()).collect();
    let mut pc = PairCounts {
        counts: HashMap::new(),
        by_count: BTreeSet::new(),
    };
    let mut occurs_in: HashMap<Pair, Vec<u32>> = HashMap::new();
    {
        let mut initial: HashMap<Pair, u64> = HashMap::new();
        for (u, seq) in seqs.iter().enumerate() {
            for_each_pair(seq, |p| {
                *initial.entry(p).or_default() += 1;
                let list = occurs_in.entry(p).or_default();
                if list.last() != Some(&(u as u32)) {
                    list.push(u as u32);
                }
            });
        }
        for (p, c) in initial {
            pc.adjust(p, c as i64);
        }
    }

    let mut merges = Vec::with_capacity(rounds);
    let mut scratch = Vec::new();
    let mut delta: HashMap<Pair, i64> = HashMap::new();
    while merges.len() < rounds {
        let Some((pair, count)) = pc.best() else {
            break;
        };
        if count < 2 {
            break;
        }
        let unit = (base + merges.len()) as u32;
        merges.push(pair);

        let mut affected = occurs_in.remove(&pair).unwrap_or_default();
        affected.sort_unstable();
        affected.dedup();
        delta.clear();
        for &u in &affected {
            let seq = &mut seqs[u as usize];
            for_each_pair(seq, |p| *delta.entry(p).or_default() -= 1);
            apply_merge(seq, pair, unit, &mut scratch);
            std::mem::swap(seq, &mut scratch);
            for_each_pair(seq, |p| {
                *delta.entry(p).or_default() += 1;
                if p.0 == unit || p.1 == unit {
                    let list = occurs_in.entry(p).or_default();
                    if list.last() != Some(&u) {
                        list.push(u);
                    }
                }
            });
        }
        // Sorted so the set updates are independent of hash order.
        let mut changes: Vec<(Pair, i64)> = delta.iter().map(|(&p, &d)| (p, d)).collect();
        changes.sort_unstable();
        for (p, d) in changes {
            pc.adjust(p, d);
        }
    }
    BpeModel::new(base, merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(utts: &[&[u32]], vocab: usize) -> Corpus {
        Corpus::new(utts.iter().map(|u| u.to_vec().into()).collect(), vocab).unwrap()
    }

    #[test]
    fn pair_counting_is_non_overlapping() {
        let mut got = Vec::new();
        for_each_pair(&[0, 0, 0], |p| got.push(p));
        assert_eq!(got, vec![(0, 0)]);
        got.clear();
        for_each_pair(&[0, 0, 0, 0, 1, 1], |p| got.push(p));
        assert_eq!(got, vec![(0, 0), (0, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn toy_corpus_single_merge() {
        // "abab", "ab": a·b occurs 3 times, b·a once.
        let c = corpus(&[&[0, 1, 0, 1], &[0, 1]], 2);
        let m = bpe_train(&c, 3).unwrap();
        assert_eq!(m.merges(), &[(0, 1)]);
        assert_eq!(m.to_text(), "#abpe 1\n#base 2\n0 1\n");
    }

    #[test]
    fn zero_merges_is_identity() {
        let c = corpus(&[&[0, 1, 0, 1]], 2);
        let m = bpe_train(&c, 2).unwrap();
        assert!(m.merges().is_empty());
        assert_eq!(m.encode(&[0, 1, 1, 0]).unwrap().0, vec![0, 1, 1, 0]);
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let c = corpus(&[&[0, 1, 2, 3]], 4);
        assert!(bpe_train(&c, 100).unwrap().merges().is_empty());
    }

    #[test]
    fn encode_hand_trace() {
        let m = BpeModel::new(2, vec![(0, 1)]).unwrap();
        assert_eq!(m.encode(&[0, 1, 0, 1, 1]).unwrap().0, vec![2, 2, 1]);
        assert_eq!(m.decode(&[2]).unwrap().0, vec![0, 1]);
        assert_eq!(m.decode(&[1, 0]).unwrap().0, vec![1, 0]);
        assert!(m.encode(&[2]).is_err());
        assert!(m.decode(&[3]).is_err());
    }

    #[test]
    fn encode_respects_rank_over_position() {
        // (1,2) has the lower rank, so it wins over the leftmost (0,1).
        let m = BpeModel::new(3, vec![(1, 2), (0, 1)]).unwrap();
        assert_eq!(m.encode(&[0, 1, 2]).unwrap().0, vec![0, 3]);
    }

    #[test]
    fn load_errors() {
        let p = Path::new("m.merges");
        assert!(BpeModel::from_text("#abpe 2\n#base 2\n", p).is_err());
        // Unit 7 with base 2 and three merges (highest defined unit is 4).
        let err = BpeModel::from_text("#abpe 1\n#base 2\n0 1\n2 2\n7 0\n", p).unwrap_err();
        assert!(matches!(err, Error::Format { line: 5, .. }), "{err}");
        assert!(BpeModel::from_text("#abpe 1\n#base 2\n0 1\n0 1\n", p).is_err());
        assert!(BpeModel::from_text("#abpe 1\n#base 2\n0 x\n", p).is_err());
        assert!(BpeModel::from_text("#abpe 1\n", p).is_err());
    }

    #[test]
    fn training_errors() {
        let c = corpus(&[&[0, 1]], 2);
        assert!(bpe_train(&c, 1).is_err());
        let empty = Corpus::new(vec![], 2).unwrap();
        assert!(bpe_train(&empty, 3).is_err());
    }

    #[test]
    fn unit_lengths() {
        let m = BpeModel::new(2, vec![(0, 1), (2, 2), (3, 1)]).unwrap();
        assert_eq!(m.unit_len(0), Some(1));
        assert_eq!(m.unit_len(2), Some(2));
        assert_eq!(m.unit_len(3), Some(4));
        assert_eq!(m.unit_len(4), Some(5));
        assert_eq!(m.unit_len(5), None);
    }

    fn small_corpus() -> impl Strategy<Value = Corpus> {
        (2usize..6).prop_flat_map(|v| {
            prop::collection::vec(prop::collection::vec(0..v as u32, 1..30), 1..12)
                .prop_map(move |u| Corpus::new(u.into_iter().map(Into::into).collect(), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn roundtrip_and_length_accounting(c in small_corpus(), extra in 0usize..20) {
            let m = bpe_train(&c, c.vocab_size() + extra).unwrap();
            for u in c.utterances() {
                let enc = m.encode(u).unwrap();
                prop_assert!(enc.len() <= u.len());
                let covered: u32 = enc.iter().map(|&x| m.unit_len(x).unwrap()).sum();
                prop_assert_eq!(covered as usize, u.len());
                prop_assert_eq!(&m.decode(&enc).unwrap(), u);
            }
        }

        #[test]
        fn prefix_of_merges_is_smaller_model(c in small_corpus(), extra in 1usize..20, cut in 0usize..20) {
            let big = bpe_train(&c, c.vocab_size() + extra).unwrap();
            let cut = cut.min(big.merges().len());
            let small = bpe_train(&c, c.vocab_size() + cut).unwrap();
            prop_assert_eq!(small.merges(), &big.merges()[..cut]);
        }

        #[test]
        fn text_roundtrip(c in small_corpus(), extra in 0usize..20) {
            let m = bpe_train(&c, c.vocab_size() + extra).unwrap();
            prop_assert_eq!(BpeModel::from_text(&m.to_text(), Path::new("x")).unwrap(), m);
        }
    }
}
