//! Byte-level regular expressions compiled to minimal DFAs.
//!
//! Every [`Dfa`] is total over the 256 byte values and carries an explicit
//! dead state with id [`DEAD`] (= 0). The initial state of a freshly compiled
//! automaton is always 1.

mod nfa;
mod syntax;

use thiserror::Error;

pub use syntax::ByteSet;

pub type StateId = u32;

/// The absorbing dead state of every [`Dfa`].
pub const DEAD: StateId = 0;

/// Default cap on the number of DFA states produced by a single construction.
pub const DEFAULT_STATE_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegexError {
    #[error("regex syntax error in /{pattern}/ at byte {offset}: {message}")]
    Syntax {
        pattern: String,
        offset: usize,
        message: String,
    },
    #[error("unsupported regex feature in /{pattern}/: {construct}")]
    Unsupported { pattern: String, construct: String },
    #[error("regex matches no string")]
    EmptyLanguage,
    #[error("automaton exceeds the state cap of {cap}")]
    StateCap { cap: usize },
}

/// A complete deterministic automaton over bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct Dfa {
    classes: Vec<u8>,
    stride: usize,
    trans: Vec<StateId>,
    accepting: Vec<bool>,
    initial: StateId,
}

impl std::fmt::Debug for Dfa {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dfa")
            .field("states", &self.num_states())
            .field("classes", &self.stride)
            .field("initial", &self.initial)
            .finish()
    }
}

impl Dfa {
    pub(crate) fn from_parts(
        classes: Vec<u8>,
        stride: usize,
        trans: Vec<StateId>,
        accepting: Vec<bool>,
        initial: StateId,
    ) -> Dfa {
        debug_assert_eq!(classes.len(), 256);
        debug_assert_eq!(trans.len(), accepting.len() * stride);
        Dfa {
            classes,
            stride,
            trans,
            accepting,
            initial,
        }
    }

    /// Rebuilds an automaton from its serialized parts, validating shape.
    pub fn from_raw(
        classes: Vec<u8>,
        stride: usize,
        trans: Vec<StateId>,
        accepting: Vec<bool>,
        initial: StateId,
    ) -> Option<Dfa> {
        let n = accepting.len();
        let ok = classes.len() == 256
            && stride >= 1
            && classes.iter().all(|c| (*c as usize) < stride)
            && trans.len() == n * stride
            && trans.iter().all(|t| (*t as usize) < n)
            && (initial as usize) < n
            && n >= 1
            && !accepting[DEAD as usize];
        ok.then(|| Dfa::from_parts(classes, stride, trans, accepting, initial))
    }

    pub fn num_states(&self) -> usize {
        self.accepting.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn is_accepting(&self, q: StateId) -> bool {
        self.accepting[q as usize]
    }

    pub fn accepting(&self) -> &[bool] {
        &self.accepting
    }

    pub fn byte_classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn transitions(&self) -> &[StateId] {
        &self.trans
    }

    #[inline]
    pub fn next(&self, q: StateId, byte: u8) -> StateId {
        self.trans[q as usize * self.stride + self.classes[byte as usize] as usize]
    }

    /// Iterated transition from `start`; stops early at the dead state.
    pub fn run(&self, start: StateId, input: &[u8]) -> StateId {
        let mut q = start;
        for &b in input {
            if q == DEAD {
                break;
            }
            q = self.next(q, b);
        }
        q
    }

    /// Whether the whole input is accepted from the initial state.
    pub fn matches(&self, input: &[u8]) -> bool {
        self.is_accepting(self.run(self.initial, input))
    }

    /// Whether some byte leads from `q` to a non-dead state.
    pub fn has_live_successor(&self, q: StateId) -> bool {
        let row = &self.trans[q as usize * self.stride..(q as usize + 1) * self.stride];
        row.iter().any(|t| *t != DEAD)
    }

    pub(crate) fn class_sets(&self) -> Vec<ByteSet> {
        let mut sets = vec![ByteSet::empty(); self.stride];
        for b in 0..=255u8 {
            sets[self.classes[b as usize] as usize].insert(b);
        }
        sets
    }
}

/// Compiles `pattern` into a minimal DFA.
pub fn compile_regex(pattern: &str) -> Result<Dfa, RegexError> {
    compile_regex_with_cap(pattern, DEFAULT_STATE_CAP)
}

pub fn compile_regex_with_cap(pattern: &str, cap: usize) -> Result<Dfa, RegexError> {
    let ast = syntax::parse(pattern)?;
    nfa::Nfa::from_ast(&ast).to_dfa(cap)
}

/// Automaton for the concatenation `L(a)·L(b)`.
pub fn dfa_concat(a: &Dfa, b: &Dfa) -> Result<Dfa, RegexError> {
    dfa_concat_with_cap(a, b, DEFAULT_STATE_CAP)
}

pub fn dfa_concat_with_cap(a: &Dfa, b: &Dfa, cap: usize) -> Result<Dfa, RegexError> {
    nfa::Nfa::concat_dfas(a, b).to_dfa(cap)
}

/// Free-function form of [`Dfa::run`].
pub fn dfa_run(dfa: &Dfa, start: StateId, input: &[u8]) -> StateId {
    dfa.run(start, input)
}
