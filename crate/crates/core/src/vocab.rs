//! Token vocabularies: token id to raw byte string, plus the eos id.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub type TokenId = u32;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("vocabulary file declares no `eos` index")]
    MissingEos,
    #[error("eos index {eos} out of range for {len} tokens")]
    EosOutOfRange { eos: usize, len: usize },
    #[error("token {id} is the empty string")]
    EmptyToken { id: usize },
    #[error("token {id}: bad escape in {text:?}")]
    BadEscape { id: usize, text: String },
    #[error("unknown token id {id}")]
    UnknownId { id: TokenId },
    #[error("malformed vocabulary file: {0}")]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    eos: TokenId,
    duplicates: usize,
    hash: [u8; 32],
}

#[derive(Deserialize, Serialize)]
struct VocabFile {
    tokens: Vec<String>,
    eos: Option<usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from raw tokens; `eos` must index into `tokens`.
    pub fn new(tokens: Vec<Vec<u8>>, eos: TokenId) -> Result<Self, VocabError> {
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        if eos as usize >= tokens.len() {
            return Err(VocabError::EosOutOfRange {
                eos: eos as usize,
                len: tokens.len(),
            });
        }
        for (id, t) in tokens.iter().enumerate() {
            if t.is_empty() && id != eos as usize {
                return Err(VocabError::EmptyToken { id });
            }
        }
        let mut seen = std::collections::HashSet::new();
        let duplicates = tokens
            .iter()
            .enumerate()
            .filter(|(id, t)| *id != eos as usize && !seen.insert(t.as_slice()))
            .count();
        if duplicates > 0 {
            log::warn!("vocabulary contains {duplicates} duplicate tokens");
        }
        let mut h = Sha256::new();
        h.update((tokens.len() as u64).to_le_bytes());
        for t in &tokens {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t);
        }
        h.update(eos.to_le_bytes());
        Ok(Vocabulary {
            tokens,
            eos,
            duplicates,
            hash: h.finalize().into(),
        })
    }

    /// Builds a vocabulary from `tokens` with a fresh eos appended at the end.
    pub fn with_eos<I, T>(tokens: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        let mut v: Vec<Vec<u8>> = tokens.into_iter().map(|t| t.as_ref().to_vec()).collect();
        if v.is_empty() {
            return Err(VocabError::Empty);
        }
        let eos = v.len() as TokenId;
        v.push(Vec::new());
        Self::new(v, eos)
    }

    /// Parses the JSON vocabulary format `{"tokens": [...], "eos": k}`.
    ///
    /// Inside token strings `\xNN` denotes a raw byte and `\\` a backslash.
    /// An `eos` equal to the token count appends a dedicated eos token.
    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let file: VocabFile = serde_json::from_str(text)?;
        let eos = file.eos.ok_or(VocabError::MissingEos)?;
        if file.tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut tokens = file
            .tokens
            .iter()
            .enumerate()
            .map(|(id, s)| unescape(s).ok_or_else(|| VocabError::BadEscape { id, text: s.clone() }))
            .collect::<Result<Vec<_>, _>>()?;
        if eos == tokens.len() {
            tokens.push(Vec::new());
        } else if eos > tokens.len() {
            return Err(VocabError::EosOutOfRange {
                eos,
                len: tokens.len(),
            });
        }
        Self::new(tokens, eos as TokenId)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens.iter().map(|t| escape(t)).collect(),
            eos: Some(self.eos as usize),
        };
        serde_json::to_string(&file).expect("vocabulary serializes")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &[u8] {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[Vec<u8>] {
        &self.tokens
    }

    /// Number of non-eos tokens whose bytes repeat an earlier token.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn content_hash(&self) -> [u8; 32] {
        self.hash
    }

    /// First token id whose bytes equal `bytes` (never eos).
    pub fn find(&self, bytes: &[u8]) -> Option<TokenId> {
        self.tokens
            .iter()
            .enumerate()
            .position(|(id, t)| id != self.eos as usize && t == bytes)
            .map(|i| i as TokenId)
    }

    /// Concatenated token contents; eos contributes nothing.
    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, VocabError> {
        let mut out = Vec::new();
        for &id in ids {
            if id as usize >= self.tokens.len() {
                return Err(VocabError::UnknownId { id });
            }
            if id != self.eos {
                out.extend_from_slice(&self.tokens[id as usize]);
            }
        }
        Ok(out)
    }

    /// Greedy longest-match tokenization. Returns `None` if some byte is
    /// not covered by any token.
    pub fn tokenize(&self, text: &[u8]) -> Option<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let (id, len) = self
                .tokens
                .iter()
                .enumerate()
                .filter(|(id, t)| *id != self.eos as usize && rest.starts_with(t))
                .map(|(id, t)| (id as TokenId, t.len()))
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))?;
            out.push(id);
            pos += len;
        }
        Some(out)
    }

    /// Human-readable rendering of a token for diagnostics.
    pub fn display(&self, id: TokenId) -> String {
        if id == self.eos {
            "<eos>".to_string()
        } else {
            format!("{:?}", String::from_utf8_lossy(&self.tokens[id as usize]))
        }
    }
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    Vocabulary::from_json(&std::fs::read_to_string(path)?)
}

pub(crate) fn unescape(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    let bytes = s.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1)? {
            b'\\' => {
                out.push(b'\\');
                i += 2;
            }
            b'x' => {
                let hex = s.get(i + 2..i + 4)?;
                out.push(u8::from_str_radix(hex, 16).ok()?);
                i += 4;
            }
            _ => return None,
        }
    }
    Some(out)
}

fn escape(t: &[u8]) -> String {
    let mut out = String::new();
    for chunk in t.utf8_chunks() {
        for c in chunk.valid().chars() {
            if c == '\\' {
                out.push_str("\\\\");
            } else {
                out.push(c);
            }
        }
        for b in chunk.invalid() {
            out.push_str(&format!("\\x{b:02x}"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v0() -> Vocabulary {
        Vocabulary::with_eos(["x", "(", ")", "(x"]).unwrap()
    }

    #[test]
    fn appended_eos() {
        let v = v0();
        assert_eq!(v.len(), 5);
        assert_eq!(v.eos(), 4);
        assert_eq!(v.token(4), b"");
    }

    #[test]
    fn json_file_roundtrip() {
        let v = Vocabulary::from_json(r#"{"tokens": ["x", "(", ")", "(x"], "eos": 4}"#).unwrap();
        assert_eq!(v, v0());
        let again = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn missing_eos() {
        assert!(matches!(
            Vocabulary::from_json(r#"{"tokens": ["x"]}"#),
            Err(VocabError::MissingEos)
        ));
    }

    #[test]
    fn empty_and_bad_tokens() {
        assert!(matches!(
            Vocabulary::from_json(r#"{"tokens": [], "eos": 0}"#),
            Err(VocabError::Empty)
        ));
        assert!(matches!(
            Vocabulary::from_json(r#"{"tokens": ["a", ""], "eos": 2}"#),
            Err(VocabError::EmptyToken { id: 1 })
        ));
        assert!(matches!(
            Vocabulary::from_json(r#"{"tokens": ["\\q"], "eos": 1}"#),
            Err(VocabError::BadEscape { id: 0, .. })
        ));
        assert!(matches!(
            Vocabulary::from_json(r#"{"tokens": ["a"], "eos": 5}"#),
            Err(VocabError::EosOutOfRange { .. })
        ));
    }

    #[test]
    fn byte_fallback_vocabulary() {
        let toks: Vec<String> = (0..=255u8).map(|b| format!("\\\\x{b:02x}")).collect();
        let text = format!("{{\"tokens\": [{}], \"eos\": 256}}", toks.iter().map(|t| format!("\"{t}\"")).collect::<Vec<_>>().join(","));
        let v = Vocabulary::from_json(&text).unwrap();
        assert_eq!(v.len(), 257);
        assert_eq!(v.token(0xff), &[0xff]);
        assert_eq!(v.duplicates(), 0);
        let again = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn duplicates_are_counted() {
        let v = Vocabulary::with_eos(["a", "b", "a"]).unwrap();
        assert_eq!(v.duplicates(), 1);
    }

    #[test]
    fn decode_examples() {
        let v = v0();
        assert_eq!(v.decode(&[1, 0, 2]).unwrap(), b"(x)");
        assert_eq!(v.decode(&[4]).unwrap(), b"");
        assert_eq!(v.decode(&[3, 2]).unwrap(), b"(x)");
        assert!(matches!(v.decode(&[9]), Err(VocabError::UnknownId { id: 9 })));
    }

    #[test]
    fn tokenize_longest_match() {
        let v = v0();
        assert_eq!(v.tokenize(b"(x)").unwrap(), vec![3, 2]);
        assert_eq!(v.tokenize(b"(y"), None);
    }
}
