//! Byte-level BPE tokenizer compatible with the GPT-2 vocabulary.
//!
//! Loads the published `vocab.json` / `merges.txt` pair and reproduces the
//! reference segmentation. Every token carries its byte offsets into the
//! source text; the runtime uses them to locate the question span.

mod pretokenize;

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub use pretokenize::pre_tokenize;

/// Ids plus per-token `(byte_start, byte_end)` offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The GPT-2 reversible mapping from bytes to printable unicode characters.
pub fn byte_encoder() -> [char; 256] {
    let mut table = ['\0'; 256];
    let printable = |b: u32| {
        (u32::from('!')..=u32::from('~')).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b)
    };
    let mut next = 256u32;
    for b in 0..256u32 {
        let code = if printable(b) {
            b
        } else {
            next += 1;
            next - 1
        };
        table[b as usize] = char::from_u32(code).expect("code point below 0x200");
    }
    table
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    /// Raw bytes of each token, indexed by id.
    token_bytes: Vec<Vec<u8>>,
    byte_ids: [u32; 256],
    /// `(left, right) -> (rank, merged)`.
    merges: HashMap<(u32, u32), (u32, u32)>,
}

impl Tokenizer {
    /// Builds a table from an in-memory vocabulary and ordered merge rules.
    pub fn from_parts(vocab: HashMap<String, u32>, merges: &[(String, String)]) -> Result<Self> {
        let n = vocab.len();
        let mut token_strings: Vec<Option<&str>> = vec![None; n];
        for (token, &id) in &vocab {
            let slot = token_strings
                .get_mut(id as usize)
                .ok_or_else(|| Error::Tokenizer(format!("id {id} of `{token}` outside dense range [0, {n})")))?;
            if slot.replace(token).is_some() {
                return Err(Error::Tokenizer(format!("id {id} assigned twice")));
            }
        }

        let encoder = byte_encoder();
        let mut decoder = HashMap::with_capacity(256);
        for (b, &c) in encoder.iter().enumerate() {
            decoder.insert(c, b as u8);
        }
        let mut token_bytes = Vec::with_capacity(n);
        for (id, token) in token_strings.iter().enumerate() {
            let token = token.expect("ids checked dense above");
            let bytes = token
                .chars()
                .map(|c| decoder.get(&c).copied())
                .collect::<Option<Vec<u8>>>()
                .ok_or_else(|| Error::Tokenizer(format!("token `{token}` (id {id}) is not in byte-encoded form")))?;
            token_bytes.push(bytes);
        }

        let mut byte_ids = [0u32; 256];
        for (b, c) in encoder.iter().enumerate() {
            byte_ids[b] = *vocab
                .get(c.to_string().as_str())
                .ok_or_else(|| Error::Tokenizer(format!("vocabulary lacks the single-byte token for {b:#04x}")))?;
        }

        let mut merge_table = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            let lookup = |s: &str| {
                vocab.get(s).copied().ok_or_else(|| {
                    Error::Tokenizer(format!(
                        "merge rule {} `{left} {right}` refers to `{s}` which is not in the vocabulary",
                        rank + 1
                    ))
                })
            };
            let l = lookup(left)?;
            let r = lookup(right)?;
            let merged = lookup(&format!("{left}{right}"))?;
            merge_table.entry((l, r)).or_insert((rank as u32, merged));
        }

        Ok(Tokenizer {
            vocab,
            token_bytes,
            byte_ids,
            merges: merge_table,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.token_bytes.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Id of a token given in its byte-encoded vocabulary spelling.
    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.vocab.get(token).copied()
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.token_bytes.get(id as usize).map(Vec::as_slice)
    }

    /// Encodes `text`; never fails, since every byte has a token.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut seq = TokenSequence::default();
        let mut parts = Vec::new();
        for (start, end) in pre_tokenize(text) {
            self.bpe(&text.as_bytes()[start..end], &mut parts);
            let mut pos = start;
            for &id in &parts {
                let len = self.token_bytes[id as usize].len();
                seq.ids.push(id);
                seq.offsets.push((pos, pos + len));
                pos += len;
            }
            debug_assert_eq!(pos, end);
        }
        seq
    }

    /// Concatenates token bytes; invalid UTF-8 is replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let token = self.token_bytes(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            })?;
            bytes.extend_from_slice(token);
        }
        Ok(String::from_utf8(bytes).unwrap_or_else(|e| String::from_utf8_lossy(e.as_bytes()).into_owned()))
    }

    /// Applies merges to one pre-token, writing ids into `out`.
    fn bpe(&self, bytes: &[u8], out: &mut Vec<u32>) {
        out.clear();
        out.extend(bytes.iter().map(|&b| self.byte_ids[b as usize]));
        loop {
            let best = out
                .windows(2)
                .filter_map(|w| self.merges.get(&(w[0], w[1])).map(|&(rank, _)| (rank, (w[0], w[1]))))
                .min_by_key(|&(rank, _)| rank);
            let Some((_, pair)) = best else { break };
            let merged = self.merges[&pair].1;
            let mut write = 0;
            let mut read = 0;
            while read < out.len() {
                if read + 1 < out.len() && (out[read], out[read + 1]) == pair {
                    out[write] = merged;
                    read += 2;
                } else {
                    out[write] = out[read];
                    read += 1;
                }
                write += 1;
            }
            out.truncate(write);
        }
    }
}

/// Loads a GPT-2 style `vocab.json` and `merges.txt`.
pub fn load_tokenizer(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Tokenizer> {
    let vocab_path = vocab_path.as_ref();
    let merges_path = merges_path.as_ref();
    let text = std::fs::read_to_string(vocab_path).map_err(|e| Error::io(vocab_path, e))?;
    let vocab: HashMap<String, u32> = serde_json::from_str(&text).map_err(|e| Error::json(vocab_path, e))?;
    let text = std::fs::read_to_string(merges_path).map_err(|e| Error::io(merges_path, e))?;
    let merges = parse_merges(&text)?;
    Tokenizer::from_parts(vocab, &merges)
}

/// Parses merge rules, one space-separated pair per line after an optional
/// `#version` header.
pub fn parse_merges(text: &str) -> Result<Vec<(String, String)>> {
    let mut merges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("#version") {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_owned(), r.to_owned())),
            _ => {
                return Err(Error::Tokenizer(format!(
                    "malformed merge rule on line {}: `{line}`",
                    lineno + 1
                )))
            }
        }
    }
    Ok(merges)
}
