//! Brute-force reference implementations used to check the library.
//!
//! Nothing here calls into `abpe_core`; every routine recomputes its answer
//! from definitions with plain loops so it can serve as an independent check.

#![allow(dead_code)]

use std::collections::BTreeMap;

/// Non-overlapping, left-to-right occurrences of `(a, b)` in `seq`.
pub fn count_pair(seq: &[u32], a: u32, b: u32) -> u64 {
    let mut i = 0;
    let mut n = 0;
    while i + 1 < seq.len() {
        if seq[i] == a && seq[i + 1] == b {
            n += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    n
}

fn replace_pair(seq: &[u32], a: u32, b: u32, unit: u32) -> Vec<u32> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == a && seq[i + 1] == b {
            out.push(unit);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    out
}

/// BPE training by exhaustive search: every round tries every pair of
/// existing units, counts it in every utterance and keeps the highest count,
/// smallest `(left, right)` on ties. Stops below two occurrences.
pub fn bpe_train_bruteforce(utts: &[Vec<u32>], base: usize, vocab: usize) -> Vec<(u32, u32)> {
    let mut seqs = utts.to_vec();
    let mut merges = Vec::new();
    while base + merges.len() < vocab {
        let units = (base + merges.len()) as u32;
        let mut best: Option<((u32, u32), u64)> = None;
        for a in 0..units {
            for b in 0..units {
                let c: u64 = seqs.iter().map(|s| count_pair(s, a, b)).sum();
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some(((a, b), c));
                }
            }
        }
        let Some(((a, b), c)) = best else { break };
        if c < 2 {
            break;
        }
        for s in seqs.iter_mut() {
            *s = replace_pair(s, a, b, units);
        }
        merges.push((a, b));
    }
    merges
}

/// Applies merges one replacement at a time: find the applicable pair with
/// the lowest rank, replace only its leftmost occurrence, repeat.
pub fn bpe_encode_naive(base: usize, merges: &[(u32, u32)], seq: &[u32]) -> Vec<u32> {
    let mut cur = seq.to_vec();
    loop {
        let mut best: Option<(usize, usize)> = None; // (rank, position)
        for i in 0..cur.len().saturating_sub(1) {
            if let Some(rank) = merges.iter().position(|&p| p == (cur[i], cur[i + 1])) {
                if best.is_none_or(|(r, _)| rank < r) {
                    best = Some((rank, i));
                }
            }
        }
        let Some((rank, i)) = best else { return cur };
        cur.splice(i..i + 2, [(base + rank) as u32]);
    }
}

/// Interpolated add-k n-gram probability by scanning the raw corpus.
///
/// `context` holds plain token ids (no BOS); `next == vocab` means EOS.
pub fn ngram_prob(
    utts: &[Vec<u32>],
    vocab: usize,
    order: usize,
    add_k: f64,
    weights: &[f64],
    context: &[u32],
    next: u32,
) -> f64 {
    let boundary = vocab as u32;
    // History of the last order-1 symbols, BOS-padded on the left.
    let mut history: Vec<u32> = vec![boundary; order - 1];
    history.extend_from_slice(context);
    let history = &history[history.len() - (order - 1)..];

    let mut p = 0.0;
    for m in 0..order {
        let h = &history[history.len() - m..];
        let mut joint = 0u64;
        let mut marginal = 0u64;
        for u in utts {
            let mut padded = vec![boundary; order - 1];
            padded.extend_from_slice(u);
            padded.push(boundary);
            for i in order - 1..padded.len() {
                if &padded[i - m..i] == h {
                    marginal += 1;
                    if padded[i] == next {
                        joint += 1;
                    }
                }
            }
        }
        p += weights[m] * ((joint as f64 + add_k) / (marginal as f64 + add_k * (vocab + 1) as f64));
    }
    p
}

pub fn ngram_logprob(
    utts: &[Vec<u32>],
    vocab: usize,
    order: usize,
    add_k: f64,
    weights: &[f64],
    seq: &[u32],
) -> f64 {
    let mut total = 0.0;
    for i in 0..=seq.len() {
        let next = seq.get(i).copied().unwrap_or(vocab as u32);
        total += ngram_prob(utts, vocab, order, add_k, weights, &seq[..i], next).ln();
    }
    total
}

/// Optimal 2-means partition by enumerating every bipartition. Returns one
/// label per point, with point 0 in cluster 0.
pub fn two_means_bruteforce(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    assert!((2..=16).contains(&n));
    let dim = points[0].len();
    let mut best = (f64::INFINITY, 0u32);
    for mask in 1u32..(1 << (n - 1)) {
        // Bit i set means point i + 1 is in cluster 1; point 0 stays in 0.
        let mut sse = 0.0;
        for cluster in 0..2 {
            let members: Vec<&Vec<f64>> = (0..n)
                .filter(|&i| (i > 0 && (mask >> (i - 1)) & 1 == 1) as usize == cluster)
                .map(|i| &points[i])
                .collect();
            let mut mean = vec![0.0; dim];
            for p in &members {
                for d in 0..dim {
                    mean[d] += p[d] / members.len() as f64;
                }
            }
            for p in &members {
                sse += (0..dim).map(|d| (p[d] - mean[d]).powi(2)).sum::<f64>();
            }
        }
        if sse < best.0 {
            best = (sse, mask);
        }
    }
    (0..n)
        .map(|i| (i > 0 && (best.1 >> (i - 1)) & 1 == 1) as usize)
        .collect()
}

fn ngram_table(seq: &[u32], n: usize) -> BTreeMap<Vec<u32>, usize> {
    let mut t = BTreeMap::new();
    for i in 0..=seq.len() - n {
        *t.entry(seq[i..i + n].to_vec()).or_insert(0) += 1;
    }
    t
}

/// Clipped n-gram precision of each text against the others, averaged.
pub fn self_bleu_bruteforce(texts: &[Vec<u32>], n: usize) -> f64 {
    let tables: Vec<_> = texts.iter().map(|t| ngram_table(t, n)).collect();
    let mut total = 0.0;
    for i in 0..texts.len() {
        let mut num = 0usize;
        let mut den = 0usize;
        for (g, &c) in &tables[i] {
            let mut clip = 0;
            for (j, t) in tables.iter().enumerate() {
                if j != i {
                    clip = clip.max(*t.get(g).unwrap_or(&0));
                }
            }
            num += c.min(clip);
            den += c;
        }
        total += num as f64 / den as f64;
    }
    total / texts.len() as f64
}

pub fn auto_bleu_bruteforce(seq: &[u32], n: usize) -> f64 {
    let grams: Vec<&[u32]> = seq.windows(n).collect();
    let repeated = grams
        .iter()
        .filter(|g| grams.iter().filter(|h| h == g).count() >= 2)
        .count();
    repeated as f64 / grams.len() as f64
}

/// Mean and variance of the negative log-probability of a sequence drawn
/// from an order-1 model with outcome probabilities `p` (last entry EOS),
/// conditioned on the sequence being non-empty.
///
/// Sums over every length `L >= 1`: given `L`, the tokens are i.i.d. from the
/// non-EOS part of `p`, so the conditional moments follow from enumerating
/// the symbols once.
pub fn iid_nll_moments(p: &[f64]) -> (f64, f64) {
    let eos = *p.last().unwrap();
    let stay = 1.0 - eos;
    let tokens = &p[..p.len() - 1];
    let mu: f64 = tokens.iter().map(|&q| q / stay * -q.ln()).sum();
    let second: f64 = tokens.iter().map(|&q| q / stay * q.ln().powi(2)).sum();
    let s2 = second - mu * mu;
    let c = -eos.ln();

    let mut mean = 0.0;
    let mut sq = 0.0;
    let mut weight = eos; // P(L = 1 | L >= 1)
    let mut mass = 0.0;
    for l in 1..200_000 {
        let lf = l as f64;
        let m = lf * mu + c;
        mean += weight * m;
        sq += weight * (lf * s2 + m * m);
        mass += weight;
        weight *= stay;
        if weight < 1e-300 {
            break;
        }
    }
    assert!((mass - 1.0).abs() < 1e-9, "length distribution mass {mass}");
    (mean, sq - mean * mean)
}
