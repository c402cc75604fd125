//! Binary cache for [`CostTables`].
//!
//! Layout (little endian): magic, version, grammar hash, vocabulary hash,
//! terminal count, automata (key, DFA, C vector, token-map runs), pair
//! index, D vector, and a trailing SHA-256 over everything before it.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Automaton, AutomatonKey, Cost, CostTables, TokenMap};
use crate::grammar::Grammar;
use crate::regex::Dfa;
use crate::vocab::Vocabulary;

const MAGIC: &[u8; 8] = b"BGCGTBL\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("cache was built for a different {what}")]
    HashMismatch { what: &'static str },
    #[error("corrupt cache file: {0}")]
    Corrupt(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32s(&mut self, vs: &[u32]) {
        self.u32(vs.len() as u32);
        for v in vs {
            self.u32(*v);
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CacheError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or(CacheError::Corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u32s(&mut self) -> Result<Vec<u32>, CacheError> {
        let n = self.u32()? as usize;
        if n > (self.buf.len() - self.pos) / 4 {
            return Err(CacheError::Corrupt("length prefix too large"));
        }
        (0..n).map(|_| self.u32()).collect()
    }
    fn hash(&mut self) -> Result<[u8; 32], CacheError> {
        Ok(self.take(32)?.try_into().unwrap())
    }
}

pub(crate) fn encode(t: &CostTables) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(MAGIC);
    w.u32(CACHE_VERSION);
    w.bytes(&t.grammar_hash);
    w.bytes(&t.vocab_hash);
    w.u32(t.num_terminals as u32);
    w.u32(t.automata.len() as u32);
    for a in &t.automata {
        match a.key {
            AutomatonKey::Single(x) => {
                w.u8(0);
                w.u32(x);
                w.u32(0);
            }
            AutomatonKey::Pair(x, y) => {
                w.u8(1);
                w.u32(x);
                w.u32(y);
            }
        }
        w.bytes(a.dfa.byte_classes());
        w.u32(a.dfa.stride() as u32);
        w.u32(a.dfa.initial());
        w.u32(a.dfa.num_states() as u32);
        for acc in a.dfa.accepting() {
            w.u8(*acc as u8);
        }
        w.u32s(a.dfa.transitions());
        w.u32s(&a.cost.iter().map(|c| c.0).collect::<Vec<_>>());
        w.u32s(&a.token_map.offsets);
        w.u32s(&a.token_map.tokens);
        w.u32s(&a.token_map.succ);
    }
    w.u32s(&t.pair_index);
    w.u32s(&t.d.iter().map(|c| c.0).collect::<Vec<_>>());
    let sum = Sha256::digest(&w.0);
    w.bytes(&sum);
    w.0
}

pub(crate) fn decode(buf: &[u8]) -> Result<CostTables, CacheError> {
    if buf.len() < MAGIC.len() + 4 || &buf[..8] != MAGIC {
        return Err(CacheError::Corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(CacheError::Version {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    if buf.len() < 12 + 32 {
        return Err(CacheError::Corrupt("truncated"));
    }
    let (body, sum) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(CacheError::Corrupt("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let grammar_hash = r.hash()?;
    let vocab_hash = r.hash()?;
    let num_terminals = r.u32()? as usize;
    let n = r.u32()? as usize;
    let mut automata = Vec::new();
    for _ in 0..n {
        let tag = r.u8()?;
        let (x, y) = (r.u32()?, r.u32()?);
        let key = match tag {
            0 => AutomatonKey::Single(x),
            1 => AutomatonKey::Pair(x, y),
            _ => return Err(CacheError::Corrupt("bad automaton key")),
        };
        let classes = r.take(256)?.to_vec();
        let stride = r.u32()? as usize;
        let initial = r.u32()?;
        let states = r.u32()? as usize;
        let accepting = r.take(states)?.iter().map(|b| *b != 0).collect();
        let trans = r.u32s()?;
        let dfa = Dfa::from_raw(classes, stride, trans, accepting, initial)
            .ok_or(CacheError::Corrupt("malformed automaton"))?;
        let cost: Vec<Cost> = r.u32s()?.into_iter().map(Cost).collect();
        let token_map = TokenMap {
            offsets: r.u32s()?,
            tokens: r.u32s()?,
            succ: r.u32s()?,
        };
        if cost.len() != states
            || token_map.offsets.len() != states + 1
            || token_map.tokens.len() != token_map.succ.len()
            || token_map.offsets.last().copied() != Some(token_map.tokens.len() as u32)
            || token_map.offsets.windows(2).any(|w| w[0] > w[1])
            || token_map.succ.iter().any(|s| *s as usize >= states)
        {
            return Err(CacheError::Corrupt("inconsistent table sizes"));
        }
        automata.push(Automaton {
            key,
            dfa,
            cost,
            token_map,
        });
    }
    let pair_index = r.u32s()?;
    let d = r.u32s()?.into_iter().map(Cost).collect();
    if r.pos != body.len()
        || pair_index.len() != num_terminals * num_terminals
        || automata.len() < num_terminals
        || pair_index.iter().any(|i| *i != u32::MAX && *i as usize >= automata.len())
    {
        return Err(CacheError::Corrupt("inconsistent table sizes"));
    }
    Ok(CostTables {
        grammar_hash,
        vocab_hash,
        num_terminals,
        automata,
        pair_index,
        d,
    })
}

/// Writes the cache atomically (temporary file in the same directory, then rename).
pub fn save_cache(tables: &CostTables, path: impl AsRef<Path>) -> Result<(), CacheError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&encode(tables))?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Reads a cache and checks it against the grammar and vocabulary it must describe.
pub fn load_cache(
    path: impl AsRef<Path>,
    grammar: &Grammar,
    vocab: &Vocabulary,
) -> Result<CostTables, CacheError> {
    let t = decode(&std::fs::read(path)?)?;
    if t.grammar_hash != grammar.source_hash() {
        return Err(CacheError::HashMismatch { what: "grammar" });
    }
    if t.vocab_hash != vocab.content_hash() {
        return Err(CacheError::HashMismatch { what: "vocabulary" });
    }
    Ok(t)
}
