//! Bijection between base token ids and CJK unified ideographs
//! (U+4E00..=U+9FFF), so token streams can be handled as plain text.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus_io::{Corpus, TokenSequence};
use crate::error::{Error, Result};

pub const REGION_START: u32 = 0x4E00;
pub const REGION_END: u32 = 0x9FFF;
/// Number of code points in the region, and so the largest base alphabet.
pub const CAPACITY: usize = (REGION_END - REGION_START + 1) as usize;

pub fn token_to_char(id: u32) -> Result<char> {
    if id as usize >= CAPACITY {
        return Err(Error::Capacity {
            id,
            capacity: CAPACITY,
        });
    }
    // Every scalar in the region is a valid char.
    Ok(char::from_u32(REGION_START + id).unwrap())
}

pub fn char_to_token(ch: char) -> Option<u32> {
    let c = ch as u32;
    (REGION_START..=REGION_END)
        .contains(&c)
        .then(|| c - REGION_START)
}

pub fn tokens_to_unicode(seq: &[u32]) -> Result<String> {
    let mut out = String::with_capacity(seq.len() * 3);
    for &id in seq {
        out.push(token_to_char(id)?);
    }
    Ok(out)
}

/// Inverse of [`tokens_to_unicode`]; the error carries the character index.
pub fn unicode_to_tokens(text: &str) -> Result<TokenSequence> {
    text.chars()
        .enumerate()
        .map(|(index, ch)| char_to_token(ch).ok_or(Error::Decode { index, ch }))
        .collect::<Result<Vec<_>>>()
        .map(TokenSequence)
}

/// One utterance per line, no header.
pub fn format_unicode_corpus(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for utt in corpus.utterances() {
        if utt.is_empty() {
            return Err(Error::invalid("empty utterance cannot be serialized"));
        }
        writeln!(out, "{}", tokens_to_unicode(utt)?).unwrap();
    }
    Ok(out)
}

pub fn parse_unicode_corpus(text: &str, origin: &Path) -> Result<Corpus> {
    let mut utts = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let seq = unicode_to_tokens(line).map_err(|e| match e {
            Error::Decode { index, ch } => Error::format(
                origin,
                idx + 1,
                format!("character {ch:?} at offset {index} outside U+4E00..U+9FFF"),
            ),
            other => other,
        })?;
        utts.push(seq);
    }
    if utts.is_empty() {
        return Err(Error::format(origin, 1, "no utterances in unicode file"));
    }
    Ok(Corpus::from_utterances(utts))
}

pub fn load_unicode_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_unicode_corpus(&text, path)
}

pub fn save_unicode_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = format_unicode_corpus(corpus)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
