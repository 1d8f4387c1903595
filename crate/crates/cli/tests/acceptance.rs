//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p abpe-cli --test acceptance --release`.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use abpe_core::bpe;
use abpe_core::corpus_io::{self, Corpus, SynthSpec, TokenSequence};
use abpe_core::metrics::{self, SyntaxPair};
use abpe_core::rescore::{self, RescoreResult};
use abpe_core::slm::{self, Decoding, NGramModel, SeqModel, Smoothing};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn corpus(utts: &[Vec<u32>], vocab: usize) -> Corpus {
    Corpus::new(utts.iter().cloned().map(TokenSequence).collect(), vocab).unwrap()
}

fn random_utts(
    rng: &mut ChaCha8Rng,
    base: u32,
    n: std::ops::RangeInclusive<usize>,
    len: std::ops::RangeInclusive<usize>,
) -> Vec<Vec<u32>> {
    (0..rng.random_range(n))
        .map(|_| {
            (0..rng.random_range(len.clone()))
                .map(|_| rng.random_range(0..base))
                .collect()
        })
        .collect()
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t < limit {
        Ok(t)
    } else {
        Err(format!("took {t:.1?}, limit {limit:?}"))
    }
}

fn ac1_roundtrip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut failures = 0;
    for _ in 0..20 {
        let base = rng.random_range(2..=40u32);
        let utts = random_utts(&mut rng, base, 20..=200, 1..=80);
        let model = bpe::bpe_train(
            &corpus(&utts, base as usize),
            base as usize + rng.random_range(0..300),
        )
        .unwrap();
        for _ in 0..500 {
            let seq: Vec<u32> = (0..rng.random_range(0..200))
                .map(|_| rng.random_range(0..base))
                .collect();
            let enc = model.encode(&seq).unwrap();
            if model.decode(&enc).unwrap().0 != seq {
                failures += 1;
            }
        }
    }
    let t = within(Duration::from_secs(60), start)?;
    if failures == 0 {
        Ok(format!("10000 sequences, 20 models, 0 failures, {t:.1?}"))
    } else {
        Err(format!("{failures} round-trip failures"))
    }
}

fn ac2_bpe_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    for _ in 0..500 {
        let base = rng.random_range(1..=6u32);
        let utts = random_utts(&mut rng, base, 1..=8, 1..=12);
        let vocab = base as usize + rng.random_range(0..=12);
        let got = bpe::bpe_train(&corpus(&utts, base as usize), vocab).unwrap();
        if got.merges() != oracle::bpe_train_bruteforce(&utts, base as usize, vocab).as_slice() {
            mismatches += 1;
        }
    }
    if mismatches == 0 {
        Ok("500 cases, 0 mismatches".into())
    } else {
        Err(format!("{mismatches} mismatches"))
    }
}

fn ac3_compression() -> Outcome {
    let spec = SynthSpec {
        vocab_size: 50,
        n_utts: 2000,
        motif_count: 5,
        motif_rate: 0.6,
        seed: 7,
        ..SynthSpec::default()
    };
    let c = corpus_io::synth_corpus(&spec).unwrap();
    let model = bpe::bpe_train(&c, 200).unwrap();
    let enc = model.encode_corpus(&c).unwrap();
    let r = metrics::compression_stats(&c, &enc, model.vocab_size()).unwrap();
    let msg = format!("ratio {:.3} (bound 1.5)", r.ratio);
    if r.ratio >= 1.5 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac4_lm_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let vocab = rng.random_range(1..=10u32);
        let order = rng.random_range(1..=3);
        let utts = random_utts(&mut rng, vocab, 1..=6, 1..=10);
        let add_k = rng.random_range(0.01..2.0);
        let raw: Vec<f64> = (0..order).map(|_| rng.random_range(0.1..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let model = NGramModel::train(
            &corpus(&utts, vocab as usize),
            order,
            &Smoothing {
                add_k,
                weights: Some(raw.clone()),
            },
        )
        .unwrap();
        for _ in 0..5 {
            let seq: Vec<u32> = (0..rng.random_range(1..8))
                .map(|_| rng.random_range(0..vocab))
                .collect();
            for i in 0..=seq.len() {
                for next in 0..=vocab {
                    let got = model.cond_prob(&seq[..i], next).unwrap();
                    let want = oracle::ngram_prob(
                        &utts,
                        vocab as usize,
                        order,
                        add_k,
                        &weights,
                        &seq[..i],
                        next,
                    );
                    worst = worst.max(((got - want) / want).abs());
                }
            }
            let got = model.logprob(&seq).unwrap();
            let want = oracle::ngram_logprob(&utts, vocab as usize, order, add_k, &weights, &seq);
            worst = worst.max(((got - want) / want).abs());
        }
    }
    let msg = format!("200 corpora, max relative error {worst:.2e}");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac5_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 10_000 {
        let vocab = rng.random_range(1..=30u32);
        let order = rng.random_range(1..=5);
        let utts = random_utts(&mut rng, vocab, 1..=30, 1..=40);
        let model = NGramModel::train(
            &corpus(&utts, vocab as usize),
            order,
            &Smoothing {
                add_k: rng.random_range(1e-4..1.0),
                weights: None,
            },
        )
        .unwrap();
        for _ in 0..100 {
            let ctx: Vec<u32> = (0..rng.random_range(0..8))
                .map(|_| rng.random_range(0..vocab))
                .collect();
            let s: f64 = model.next_dist(&ctx).unwrap().iter().sum();
            worst = worst.max((s - 1.0).abs());
            pairs += 1;
        }
    }
    let msg = format!("{pairs} (model, context) pairs, max |sum - 1| {worst:.2e}");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac6_sampling() -> Outcome {
    let c = corpus_io::synth_corpus(&SynthSpec {
        vocab_size: 6,
        n_utts: 300,
        seed: 66,
        ..SynthSpec::default()
    })
    .unwrap();
    let model = NGramModel::train(&c, 3, &Smoothing::default()).unwrap();

    // Greedy against iterated argmax.
    for u in c.utterances().iter().take(50) {
        let prompt = &u[..3.min(u.len())];
        let got = slm::slm_continue(&model, prompt, 60, 0, Decoding::Greedy).unwrap();
        let mut want = prompt.to_vec();
        for _ in 0..60 {
            let d = model.next_dist(&want).unwrap();
            let mut best = 0;
            for j in 0..d.len() {
                if d[j] > d[best] {
                    best = j;
                }
            }
            if best == model.vocab_size() {
                break;
            }
            want.push(best as u32);
        }
        if got.0 != want {
            return Err(format!("greedy mismatch on prompt {prompt:?}"));
        }
    }

    // Temperature 1: one-step continuations from 10 contexts.
    let draws = 100_000u64;
    let mut worst_z: f64 = 0.0;
    let mut seeds = ChaCha8Rng::seed_from_u64(6);
    for u in c.utterances().iter().take(10) {
        let ctx = &u[..2.min(u.len())];
        let dist = model.next_dist(ctx).unwrap();
        let mut counts = vec![0u64; dist.len()];
        let decoding = Decoding::Sample {
            temperature: 1.0,
            top_k: None,
        };
        for _ in 0..draws {
            let out = slm::slm_continue(&model, ctx, 1, seeds.random(), decoding).unwrap();
            let k = out
                .get(ctx.len())
                .map_or(model.vocab_size(), |&x| x as usize);
            counts[k] += 1;
        }
        for (k, &p) in dist.iter().enumerate() {
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            let z = (counts[k] as f64 - draws as f64 * p).abs() / sigma;
            worst_z = worst_z.max(z);
        }
    }
    let msg =
        format!("greedy exact on 50 prompts; 10 contexts x {draws} draws, max |z| {worst_z:.2}");
    if worst_z <= 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac7_random_rescore() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let cases = 100_000;
    let mut results = Vec::with_capacity(cases);
    let mut ranks = Vec::with_capacity(cases);
    for _ in 0..cases {
        let scores: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
        results.push(RescoreResult::from_scores(scores));
        let mut perm: Vec<u32> = (1..=5).collect();
        perm.shuffle(&mut rng);
        ranks.push(perm);
    }
    let mut parts = Vec::new();
    let mut ok = true;
    for (x, target) in [(1, 0.2), (2, 0.4), (3, 0.6)] {
        let acc = rescore::topx_accuracy(&results, &ranks, x).unwrap();
        ok &= (acc - target).abs() <= 0.005;
        parts.push(format!("top{x}={acc:.4}"));
    }
    let t = within(Duration::from_secs(60), start)?;
    let msg = format!("{} over {cases} cases, {t:.1?}", parts.join(" "));
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac8_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    for i in 0..1000 {
        let n = rng.random_range(2..=10);
        let mut scores: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..200.0)).collect();
        if i % 10 == 0 {
            // Include exact ties.
            scores[n - 1] = scores[0];
        }
        let best = rescore::select_best(&scores);
        let shift = rng.random_range(-1e3..1e3);
        let scale = rng.random_range(1e-3..1e3);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        // A shift can round two close scores onto each other; only judge distinct values.
        let margin = scores
            .iter()
            .filter(|&&s| s != scores[best])
            .map(|s| scores[best] - s)
            .fold(f64::INFINITY, f64::min);
        if margin > 1e-9 && rescore::select_best(&shifted) != best {
            return Err(format!("shift changed best on check {i}"));
        }
        if rescore::select_best(&scaled) != best {
            return Err(format!("scale changed best on check {i}"));
        }
    }
    Ok("1000 checks".into())
}

fn ac9_syntax() -> Outcome {
    let c = corpus_io::synth_corpus(&SynthSpec::default()).unwrap();
    let utts = c.utterances();
    let train = Corpus::new(utts[..1800].to_vec(), c.vocab_size()).unwrap();
    let model = NGramModel::train(&train, 4, &Smoothing::default()).unwrap();
    let pairs: Vec<SyntaxPair> = utts[1800..]
        .iter()
        .enumerate()
        .map(|(i, u)| SyntaxPair {
            correct: u.clone(),
            corrupted: metrics::shuffle_corrupt(u, 1, i as u64).unwrap(),
        })
        .collect();
    let r = metrics::syntax_accuracy(&model, &pairs).unwrap();
    let msg = format!(
        "accuracy {:.4} on {} held-out pairs (bound 0.9)",
        r.accuracy,
        pairs.len()
    );
    if r.accuracy > 0.9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac10_vert() -> Outcome {
    let s = |v: &[u32]| TokenSequence(v.to_vec());
    let ab = metrics::auto_bleu(&[0, 1, 0, 1], 2).unwrap();
    if (ab - 2.0 / 3.0).abs() > 1e-15 {
        return Err(format!("auto-bigram of a b a b = {ab}"));
    }
    let same = metrics::self_bleu(&[s(&[0, 1, 2]), s(&[0, 1, 2])], 2).unwrap();
    let disjoint = metrics::self_bleu(&[s(&[0, 1, 2]), s(&[3, 4, 5])], 2).unwrap();
    if same != 1.0 || disjoint != 0.0 {
        return Err(format!("self-BLEU identical {same}, disjoint {disjoint}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let texts: Vec<TokenSequence> = (0..rng.random_range(2..6))
            .map(|_| {
                TokenSequence(
                    (0..rng.random_range(3..20))
                        .map(|_| rng.random_range(0..4))
                        .collect(),
                )
            })
            .collect();
        let r = metrics::vert(&texts, 2).unwrap();
        let lhs = r.vert * r.vert;
        let rhs = 10_000.0 * r.self_bleu * r.auto_bleu;
        worst = worst.max((lhs - rhs).abs() / rhs.max(1.0));
    }
    let msg = format!("hand cases pass; vert^2 vs 10000*sb*ab max relative gap {worst:.1e}");
    if worst < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn ac11_cross_entropy() -> Outcome {
    let utts = vec![vec![0, 0, 1, 2, 3, 4, 0, 1], vec![2, 2, 0], vec![4]];
    let model = NGramModel::train(
        &corpus(&utts, 5),
        1,
        &Smoothing {
            add_k: 0.5,
            weights: None,
        },
    )
    .unwrap();
    let p = model.next_dist(&[]).unwrap();
    let (mean, var) = oracle::iid_nll_moments(&p);
    let mut seeds = ChaCha8Rng::seed_from_u64(11);
    let decoding = Decoding::Sample {
        temperature: 1.0,
        top_k: None,
    };
    let mut samples = Vec::new();
    while samples.len() < 5000 {
        let s = slm::slm_continue(&model, &[], 100_000, seeds.random(), decoding).unwrap();
        if !s.is_empty() {
            samples.push(s);
        }
    }
    let h = metrics::cross_entropy(&samples, &model).unwrap().entropy;
    let sigma = (var / samples.len() as f64).sqrt();
    let z = (h - mean) / sigma;
    let msg = format!(
        "H {h:.4}, expected {mean:.4} +/- {:.4} (z {z:.2})",
        3.0 * sigma
    );
    if z.abs() <= 3.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_pipeline(bin: &Path, dir: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec![
            "synth",
            "--seed",
            "7",
            "--utts",
            "400",
            "--out",
            &p("truth.tok"),
            "--features",
            &p("feats.bin"),
            "--lengths",
            &p("lens.txt"),
        ],
        vec![
            "kmeans-fit",
            "--in",
            &p("feats.bin"),
            "--k",
            "50",
            "--seed",
            "1",
            "--max-samples",
            "6000",
            "--out",
            &p("km.bin"),
        ],
        vec![
            "discretize",
            "--model",
            &p("km.bin"),
            "--in",
            &p("feats.bin"),
            "--lengths",
            &p("lens.txt"),
            "--out",
            &p("base.tok"),
        ],
        vec![
            "to-unicode",
            "--in",
            &p("base.tok"),
            "--out",
            &p("base.txt"),
        ],
        vec![
            "bpe-train",
            "--in",
            &p("base.txt"),
            "--base",
            "50",
            "--vocab",
            "150",
            "--out",
            &p("abpe.merges"),
        ],
        vec![
            "bpe-encode",
            "--model",
            &p("abpe.merges"),
            "--in",
            &p("base.tok"),
            "--out",
            &p("abpe.tok"),
        ],
        vec![
            "slm-train",
            "--in",
            &p("abpe.tok"),
            "--order",
            "3",
            "--out",
            &p("slm.bin"),
        ],
        vec![
            "slm-train",
            "--in",
            &p("base.tok"),
            "--order",
            "3",
            "--out",
            &p("ref.bin"),
        ],
        vec![
            "continue",
            "--model",
            &p("slm.bin"),
            "--prompts",
            &p("abpe.tok"),
            "--prompt-len",
            "3",
            "--samples",
            "2",
            "--max-new",
            "30",
            "--seed",
            "11",
            "--out",
            &p("cont.tok"),
        ],
        vec![
            "bpe-decode",
            "--model",
            &p("abpe.merges"),
            "--in",
            &p("cont.tok"),
            "--out",
            &p("cont_base.tok"),
        ],
        vec![
            "metrics-compress",
            "--base",
            &p("base.tok"),
            "--encoded",
            &p("abpe.tok"),
            "--report",
            &p("compress.txt"),
        ],
        vec![
            "metrics-vert",
            "--in",
            &p("cont.tok"),
            "--n",
            "3",
            "--report",
            &p("vert.txt"),
        ],
        vec![
            "metrics-syntax",
            "--model",
            &p("slm.bin"),
            "--bpe",
            &p("abpe.merges"),
            "--in",
            &p("base.tok"),
            "--seed",
            "5",
            "--report",
            &p("syntax.txt"),
        ],
        vec![
            "metrics-xent",
            "--model",
            &p("ref.bin"),
            "--in",
            &p("cont_base.tok"),
            "--report",
            &p("xent.txt"),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for args in steps {
        let out = Command::new(bin)
            .args(&args)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            ));
        }
    }
    Ok(())
}

fn ac12_determinism() -> Outcome {
    let start = Instant::now();
    let bin = Path::new(env!("CARGO_BIN_EXE_abpe"));
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(bin, a.path())?;
    run_pipeline(bin, b.path())?;
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.path().join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{} differs between runs", name.to_string_lossy()));
        }
    }
    let t = within(Duration::from_secs(300), start)?;
    Ok(format!(
        "{} files byte-identical across two runs, {t:.1?}",
        names.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("AC1", "BPE decode(encode(x)) = x", ac1_roundtrip),
        (
            "AC2",
            "BPE trainer equals brute-force oracle",
            ac2_bpe_oracle,
        ),
        (
            "AC3",
            "compression ratio on frozen synthetic corpus",
            ac3_compression,
        ),
        (
            "AC4",
            "n-gram conditionals and logprob equal count oracle",
            ac4_lm_exact,
        ),
        (
            "AC5",
            "next-unit distributions sum to one",
            ac5_normalization,
        ),
        ("AC6", "greedy and temperature-1 sampling", ac6_sampling),
        (
            "AC7",
            "random rescorer top-1/2/3 baseline",
            ac7_random_rescore,
        ),
        (
            "AC8",
            "best index invariant to shift and scale",
            ac8_invariance,
        ),
        (
            "AC9",
            "syntax discrimination on held-out shuffles",
            ac9_syntax,
        ),
        ("AC10", "VERT arithmetic and hand cases", ac10_vert),
        (
            "AC11",
            "cross-entropy within 3 sigma of expectation",
            ac11_cross_entropy,
        ),
        ("AC12", "end-to-end CLI determinism", ac12_determinism),
    ];
    let mut failed = 0;
    for (id, title, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {id} {title}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {id} {title}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
