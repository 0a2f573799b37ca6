//! Byte-level BPE.
//!
//! Ids `0..3` are the special tokens `<unk>`, `<s>`, `</s>`; ids `3..259` are
//! the 256 raw bytes; every merge appends one id after that. Text is split
//! into chunks before merging: a chunk starts wherever whitespace follows
//! non-whitespace, so a run of whitespace travels with the word after it
//! and merges never cross a word boundary.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["<unk>", "<s>", "</s>"];
const BYTE_OFFSET: u32 = SPECIAL_TOKENS.len() as u32;
/// Vocabulary size with no merges.
pub const BASE_VOCAB: usize = 256 + SPECIAL_TOKENS.len();
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    merges: Vec<(u32, u32)>,
    /// Byte string of every id; specials hold their literal text.
    symbols: Vec<Vec<u8>>,
    ranks: HashMap<(u32, u32), u32>,
}

fn is_ws(b: u8) -> bool {
    b.is_ascii_whitespace()
}

/// Splits text into merge chunks.
fn chunks(bytes: &[u8]) -> impl Iterator<Item = &[u8]> {
    let mut start = 0;
    let mut i = 1;
    std::iter::from_fn(move || {
        if start >= bytes.len() {
            return None;
        }
        while i < bytes.len() && !(is_ws(bytes[i]) && !is_ws(bytes[i - 1])) {
            i += 1;
        }
        let piece = &bytes[start..i];
        start = i;
        i += 1;
        Some(piece)
    })
}

fn byte_id(b: u8) -> u32 {
    BYTE_OFFSET + u32::from(b)
}

impl Tokenizer {
    /// Tokenizer with no merges: one token per byte.
    pub fn byte_level() -> Self {
        let mut symbols: Vec<Vec<u8>> = SPECIAL_TOKENS.iter().map(|s| s.as_bytes().to_vec()).collect();
        symbols.extend((0..=255u8).map(|b| vec![b]));
        Tokenizer {
            merges: Vec::new(),
            symbols,
            ranks: HashMap::new(),
        }
    }

    fn push_merge(&mut self, left: u32, right: u32) -> u32 {
        let id = self.symbols.len() as u32;
        let mut bytes = self.symbols[left as usize].clone();
        bytes.extend_from_slice(&self.symbols[right as usize]);
        self.symbols.push(bytes);
        self.ranks.insert((left, right), self.merges.len() as u32);
        self.merges.push((left, right));
        id
    }

    pub fn vocab_size(&self) -> usize {
        self.symbols.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string of a token (special tokens give their literal text).
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.symbols.get(id as usize).map(Vec::as_slice)
    }

    /// Learns `vocab_size − 259` merges from the documents.
    ///
    /// Each merge takes the most frequent adjacent pair; ties go to the
    /// lexicographically smallest `(left bytes, right bytes)`. Pairs whose
    /// concatenation is already a token are skipped, which keeps every
    /// token's byte string unique.
    pub fn train(docs: &[Document], vocab_size: usize) -> Result<Self> {
        Self::train_texts(docs.iter().map(|d| d.text.as_str()), vocab_size)
    }

    pub fn train_texts<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self> {
        if vocab_size < BASE_VOCAB {
            return Err(Error::Config(format!(
                "vocab_size must be at least {BASE_VOCAB}, got {vocab_size}"
            )));
        }
        let mut tok = Self::byte_level();
        let mut freq: HashMap<&[u8], u64> = HashMap::new();
        let texts: Vec<&str> = texts.into_iter().collect();
        for t in &texts {
            for c in chunks(t.as_bytes()) {
                *freq.entry(c).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, i64)> = freq
            .into_iter()
            .map(|(w, n)| (w.iter().map(|&b| byte_id(b)).collect(), n as i64))
            .collect();
        words.sort();

        let mut pairs: HashMap<(u32, u32), i64> = HashMap::new();
        for (w, n) in &words {
            for p in w.windows(2) {
                *pairs.entry((p[0], p[1])).or_insert(0) += n;
            }
        }
        let mut known: std::collections::HashSet<Vec<u8>> = tok.symbols.iter().cloned().collect();

        let wanted = vocab_size - BASE_VOCAB;
        while tok.merges.len() < wanted {
            let mut best: Option<((u32, u32), i64)> = None;
            for (&pair, &count) in &pairs {
                if count <= 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bc)) => {
                        count > bc || (count == bc && tok.pair_key(pair) < tok.pair_key(bp))
                    }
                };
                if better && !known.contains(&tok.concat(pair)) {
                    best = Some((pair, count));
                }
            }
            let Some(((l, r), _)) = best else {
                return Err(Error::VocabUnreachable {
                    requested: vocab_size,
                    achievable: tok.vocab_size(),
                });
            };
            let new_id = tok.push_merge(l, r);
            known.insert(tok.symbols[new_id as usize].clone());
            for (w, n) in words.iter_mut() {
                if !w.windows(2).any(|p| p[0] == l && p[1] == r) {
                    continue;
                }
                for p in w.windows(2) {
                    *pairs.get_mut(&(p[0], p[1])).unwrap() -= *n;
                }
                let merged = merge_word(w, l, r, new_id);
                for p in merged.windows(2) {
                    *pairs.entry((p[0], p[1])).or_insert(0) += *n;
                }
                *w = merged;
            }
            pairs.retain(|_, c| *c > 0);
        }
        Ok(tok)
    }

    fn pair_key(&self, (l, r): (u32, u32)) -> (&[u8], &[u8]) {
        (&self.symbols[l as usize], &self.symbols[r as usize])
    }

    fn concat(&self, (l, r): (u32, u32)) -> Vec<u8> {
        let mut v = self.symbols[l as usize].clone();
        v.extend_from_slice(&self.symbols[r as usize]);
        v
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<u32>) {
        let mut word: Vec<u32> = chunk.iter().map(|&b| byte_id(b)).collect();
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, p[0], p[1])))
                .min();
            let Some((rank, l, r)) = best else { break };
            let new_id = BASE_VOCAB as u32 + rank;
            word = merge_word(&word, l, r, new_id);
        }
        out.extend_from_slice(&word);
    }

    /// Token ids for `text`, applying merges in training order. Never emits
    /// `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for c in chunks(text.as_bytes()) {
            self.encode_chunk(c, &mut out);
        }
        out
    }

    /// Encodes many texts, sharing a per-chunk cache.
    pub fn encode_many<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vec<Vec<u32>> {
        let mut cache: HashMap<&'a [u8], Vec<u32>> = HashMap::new();
        texts
            .into_iter()
            .map(|t| {
                let mut out = Vec::new();
                for c in chunks(t.as_bytes()) {
                    let ids = cache.entry(c).or_insert_with(|| {
                        let mut v = Vec::new();
                        self.encode_chunk(c, &mut v);
                        v
                    });
                    out.extend_from_slice(ids);
                }
                out
            })
            .collect()
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let sym = self.symbols.get(id as usize).ok_or(Error::TokenOutOfRange(id))?;
            out.extend_from_slice(sym);
        }
        Ok(out)
    }

    /// Text for `ids`. Byte sequences that are not valid UTF-8 (possible
    /// only for id strings that `encode` never produces) are replaced
    /// lossily.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            version: FORMAT_VERSION,
            vocab_size: self.vocab_size(),
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            merges: self
                .merges
                .iter()
                .map(|&(l, r)| {
                    [
                        escape_bytes(&self.symbols[l as usize]),
                        escape_bytes(&self.symbols[r as usize]),
                    ]
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("tokenizer file serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let file: TokenizerFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.version != FORMAT_VERSION {
            return Err(format!("unsupported tokenizer version {}", file.version));
        }
        if file.special_tokens != SPECIAL_TOKENS {
            return Err(format!("unexpected special tokens {:?}", file.special_tokens));
        }
        let mut tok = Self::byte_level();
        let mut by_bytes: HashMap<Vec<u8>, u32> = (0..=255u8).map(|b| (vec![b], byte_id(b))).collect();
        for (i, [l, r]) in file.merges.iter().enumerate() {
            let lb = unescape_bytes(l)?;
            let rb = unescape_bytes(r)?;
            let lid = *by_bytes.get(&lb).ok_or_else(|| format!("merge {i}: unknown token {l:?}"))?;
            let rid = *by_bytes.get(&rb).ok_or_else(|| format!("merge {i}: unknown token {r:?}"))?;
            let id = tok.push_merge(lid, rid);
            if by_bytes.insert(tok.symbols[id as usize].clone(), id).is_some() {
                return Err(format!("merge {i}: duplicate token {l:?}+{r:?}"));
            }
        }
        if tok.vocab_size() != file.vocab_size {
            return Err(format!(
                "vocab_size {} does not match {} merges",
                file.vocab_size,
                file.merges.len()
            ));
        }
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|reason| Error::Checkpoint {
            name: path.display().to_string(),
            reason,
        })
    }
}

fn merge_word(word: &[u32], l: u32, r: u32, new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == l && word[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizerFile {
    version: u32,
    vocab_size: usize,
    special_tokens: Vec<String>,
    merges: Vec<[String; 2]>,
}

/// Printable ASCII stays as is (backslash doubled); every other byte
/// becomes `\xHH`.
fn escape_bytes(bytes: &[u8]) -> String {
    let mut s = String::new();
    for &b in bytes {
        match b {
            b'\\' => s.push_str("\\\\"),
            0x21..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s
}

fn unescape_bytes(s: &str) -> std::result::Result<Vec<u8>, String> {
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] != b'\\' {
            out.push(b[i]);
            i += 1;
            continue;
        }
        match b.get(i + 1) {
            Some(b'\\') => {
                out.push(b'\\');
                i += 2;
            }
            Some(b'x') if i + 3 < b.len() + 0 && i + 4 <= b.len() => {
                let hex = std::str::from_utf8(&b[i + 2..i + 4]).map_err(|e| e.to_string())?;
                out.push(u8::from_str_radix(hex, 16).map_err(|_| format!("bad escape in {s:?}"))?);
                i += 4;
            }
            _ => return Err(format!("bad escape in {s:?}")),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: counts adjacent byte pairs over the raw string.
    fn brute_force_top_pair(text: &str) -> (u8, u8) {
        let b = text.as_bytes();
        let mut best = ((0u8, 0u8), 0usize);
        for x in 0..=255u8 {
            for y in 0..=255u8 {
                let n = b.windows(2).filter(|w| w[0] == x && w[1] == y).count();
                if n > best.1 {
                    best = ((x, y), n);
                }
            }
        }
        best.0
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let text = "abab ab";
        assert_eq!(brute_force_top_pair(text), (b'a', b'b'));
        let tok = Tokenizer::train_texts([text], BASE_VOCAB + 1).unwrap();
        assert_eq!(tok.merges(), &[(byte_id(b'a'), byte_id(b'b'))]);
        assert_eq!(tok.encode("abab").len(), 2);
    }

    #[test]
    fn minimum_vocab_has_no_merges() {
        let tok = Tokenizer::train_texts(["hello world"], BASE_VOCAB).unwrap();
        assert!(tok.merges().is_empty());
        assert_eq!(tok.vocab_size(), 259);
        assert_eq!(tok.encode("hi"), vec![byte_id(b'h'), byte_id(b'i')]);
    }

    #[test]
    fn too_small_corpus_reports_achievable_size() {
        let err = Tokenizer::train_texts(["ab"], BASE_VOCAB + 5).unwrap_err();
        match err {
            Error::VocabUnreachable { achievable, .. } => assert_eq!(achievable, BASE_VOCAB + 1),
            e => panic!("unexpected {e}"),
        }
        assert!(Tokenizer::train_texts(["ab"], 100).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur twice
        let tok = Tokenizer::train_texts(["cd", "ab", "cd", "ab"], BASE_VOCAB + 1).unwrap();
        assert_eq!(tok.merges()[0], (byte_id(b'a'), byte_id(b'b')));
    }

    #[test]
    fn chunking_keeps_whitespace_with_following_word() {
        let got: Vec<&[u8]> = chunks(b"def f():\n    return 1").collect();
        assert_eq!(
            got,
            vec![&b"def"[..], b" f():", b"\n    return", b" 1"]
        );
        assert_eq!(chunks(b"").count(), 0);
        assert_eq!(chunks(b"  x").collect::<Vec<_>>(), vec![&b"  x"[..]]);
    }

    #[test]
    fn empty_and_specials() {
        let tok = Tokenizer::byte_level();
        assert!(tok.encode("").is_empty());
        assert_eq!(tok.decode(&[]).unwrap(), "");
        assert_eq!(tok.decode(&[BOS, byte_id(b'x'), EOS]).unwrap(), "<s>x</s>");
        assert!(matches!(
            tok.decode(&[tok.vocab_size() as u32]),
            Err(Error::TokenOutOfRange(259))
        ));
    }

    #[test]
    fn escaping_round_trips() {
        for bytes in [&b"a\\b"[..], b" \n\t\x00\xff", b"\\x41", "é".as_bytes()] {
            assert_eq!(unescape_bytes(&escape_bytes(bytes)).unwrap(), bytes);
        }
        assert!(unescape_bytes("\\q").is_err());
        assert!(unescape_bytes("\\x4").is_err());
    }
}
