//! Candidate rescoring: pick the candidate the sequence model finds most
//! probable and measure how often that choice lands in the human top-x.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::bpe::BpeModel;
use crate::corpus_io::{self, TokenSequence};
use crate::error::{Error, Result};
use crate::slm::SeqModel;

/// Candidates for one prompt, optionally with consensus human ranks
/// (1 = most natural).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    candidates: Vec<TokenSequence>,
    human_ranks: Option<Vec<u32>>,
}

impl CandidateSet {
    pub fn new(candidates: Vec<TokenSequence>, human_ranks: Option<Vec<u32>>) -> Result<Self> {
        if candidates.len() < 2 {
            return Err(Error::invalid(format!(
                "a candidate set needs at least 2 candidates, got {}",
                candidates.len()
            )));
        }
        if let Some(ranks) = &human_ranks {
            if ranks.len() != candidates.len() {
                return Err(Error::invalid(format!(
                    "{} ranks for {} candidates",
                    ranks.len(),
                    candidates.len()
                )));
            }
            check_permutation(ranks)?;
        }
        Ok(CandidateSet {
            candidates,
            human_ranks,
        })
    }

    pub fn candidates(&self) -> &[TokenSequence] {
        &self.candidates
    }

    pub fn human_ranks(&self) -> Option<&[u32]> {
        self.human_ranks.as_deref()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Checks that `ranks` is a permutation of `1..=ranks.len()`.
pub fn check_permutation(ranks: &[u32]) -> Result<()> {
    let mut seen = vec![false; ranks.len()];
    for &r in ranks {
        let slot = (r as usize).checked_sub(1).filter(|&i| i < ranks.len());
        match slot {
            Some(i) if !seen[i] => seen[i] = true,
            _ => {
                return Err(Error::invalid(format!(
                    "ranks {ranks:?} are not a permutation of 1..={}",
                    ranks.len()
                )))
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoreResult {
    /// Log-probability per candidate (per unit when length normalised).
    pub scores: Vec<f64>,
    pub best_index: usize,
}

/// Argmax of `scores`, lowest index on ties.
pub fn select_best(scores: &[f64]) -> usize {
    crate::slm::argmax(scores)
}

impl RescoreResult {
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let best_index = select_best(&scores);
        RescoreResult { scores, best_index }
    }
}

/// Scores every candidate with `model` and selects the most probable one.
///
/// When `bpe` is given the candidates are base-token sequences and are
/// encoded first. `length_norm` divides each log-probability by the scored
/// sequence length.
pub fn rescore<M: SeqModel + ?Sized>(
    model: &M,
    set: &CandidateSet,
    length_norm: bool,
    bpe: Option<&BpeModel>,
) -> Result<RescoreResult> {
    if let Some(bpe) = bpe {
        if bpe.vocab_size() != model.vocab_size() {
            return Err(Error::invalid(format!(
                "BPE vocabulary {} does not match model vocabulary {}",
                bpe.vocab_size(),
                model.vocab_size()
            )));
        }
    }
    let mut scores = Vec::with_capacity(set.len());
    for cand in &set.candidates {
        let encoded;
        let seq: &[u32] = match bpe {
            Some(b) => {
                encoded = b.encode(cand)?;
                &encoded
            }
            None => cand,
        };
        let lp = model.logprob(seq)?;
        scores.push(if length_norm {
            lp / seq.len() as f64
        } else {
            lp
        });
    }
    Ok(RescoreResult::from_scores(scores))
}

/// Fraction of cases whose selected candidate has human rank `<= x`.
pub fn topx_accuracy(results: &[RescoreResult], rank_sets: &[Vec<u32>], x: usize) -> Result<f64> {
    if results.len() != rank_sets.len() {
        return Err(Error::invalid(format!(
            "{} results but {} rank sets",
            results.len(),
            rank_sets.len()
        )));
    }
    if results.is_empty() {
        return Err(Error::Empty("no rescoring cases".into()));
    }
    if x == 0 {
        return Err(Error::invalid("x must be at least 1"));
    }
    let mut hits = 0usize;
    for (res, ranks) in results.iter().zip(rank_sets) {
        check_permutation(ranks)?;
        let rank = ranks.get(res.best_index).ok_or_else(|| {
            Error::invalid(format!(
                "best index {} outside rank set of size {}",
                res.best_index,
                ranks.len()
            ))
        })?;
        if *rank as usize <= x {
            hits += 1;
        }
    }
    Ok(hits as f64 / results.len() as f64)
}

/// One case of a candidate manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestCase {
    pub case_id: String,
    pub candidate_ids: Vec<String>,
    pub paths: Vec<PathBuf>,
    pub human_ranks: Option<Vec<u32>>,
}

impl ManifestCase {
    /// Reads every candidate token file (exactly one utterance each).
    pub fn load(&self) -> Result<CandidateSet> {
        let mut cands = Vec::with_capacity(self.paths.len());
        for p in &self.paths {
            let corpus = corpus_io::load_tokens(p)?;
            if corpus.len() != 1 {
                return Err(Error::format(
                    p,
                    1,
                    format!(
                        "candidate file holds {} utterances, expected 1",
                        corpus.len()
                    ),
                ));
            }
            cands.extend(corpus.into_utterances());
        }
        CandidateSet::new(cands, self.human_ranks.clone())
    }
}

/// Parses a TSV manifest with columns `case_id candidate_id token_file_path
/// [human_rank]`. A first line starting with `case_id` is a header. Relative
/// paths resolve against the manifest's directory. Cases keep first-appearance
/// order and candidates keep line order.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestCase>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut cases: Vec<ManifestCase> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut ranked: Vec<Vec<Option<u32>>> = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || (idx == 0 && line.starts_with("case_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(Error::format(
                path,
                lineno,
                format!(
                    "expected 3 or 4 tab-separated columns, found {}",
                    cols.len()
                ),
            ));
        }
        let rank =
            match cols.get(3).map(|s| s.trim()).filter(|s| !s.is_empty()) {
                Some(s) => Some(s.parse::<u32>().map_err(|_| {
                    Error::format(path, lineno, format!("malformed human rank {s:?}"))
                })?),
                None => None,
            };
        let file = PathBuf::from(cols[2]);
        let file = if file.is_absolute() {
            file
        } else {
            base.join(file)
        };
        let slot = *index.entry(cols[0].to_string()).or_insert_with(|| {
            cases.push(ManifestCase {
                case_id: cols[0].to_string(),
                candidate_ids: Vec::new(),
                paths: Vec::new(),
                human_ranks: None,
            });
            ranked.push(Vec::new());
            cases.len() - 1
        });
        cases[slot].candidate_ids.push(cols[1].to_string());
        cases[slot].paths.push(file);
        ranked[slot].push(rank);
    }

    for (case, ranks) in cases.iter_mut().zip(ranked) {
        let present = ranks.iter().filter(|r| r.is_some()).count();
        if present == ranks.len() {
            let ranks: Vec<u32> = ranks.into_iter().flatten().collect();
            check_permutation(&ranks)
                .map_err(|e| Error::format(path, 0, format!("case {}: {e}", case.case_id)))?;
            case.human_ranks = Some(ranks);
        } else if present != 0 {
            return Err(Error::format(
                path,
                0,
                format!(
                    "case {} has human ranks for only some candidates",
                    case.case_id
                ),
            ));
        }
    }
    if cases.is_empty() {
        return Err(Error::format(path, 1, "manifest lists no candidates"));
    }
    Ok(cases)
}
