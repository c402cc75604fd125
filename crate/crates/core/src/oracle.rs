//! Brute-force reference implementations for small instances.
//!
//! Nothing here touches the engine's lexer, parser, automata or cost
//! tables. Terminals are matched with `regex-automata`, grammar membership
//! is decided by memoized scannerless derivation, and masks come from
//! exhaustive search over token sequences.

use std::collections::{HashMap, HashSet, VecDeque};

use regex_automata::dfa::{dense, Automaton, StartKind};
use regex_automata::nfa::thompson;
use regex_automata::util::primitives::StateID;
use regex_automata::util::{start, syntax};
use regex_automata::{Anchored, MatchKind};
use thiserror::Error;

use crate::grammar::{Grammar, Symbol};
use crate::precompute::Cost;
use crate::regex::{Dfa, StateId, DEAD};
use crate::vocab::{TokenId, Vocabulary};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("derivation depth cap {0} exceeded")]
    CapExceeded(usize),
    #[error("instance too large: {0}")]
    TooLarge(String),
    #[error("oracle regex: {0}")]
    Regex(String),
}

/// Search limits.
#[derive(Debug, Clone, Copy)]
pub struct OracleBudget {
    pub max_total_tokens: u32,
    pub max_depth: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_total_tokens: 8,
            max_depth: 256,
        }
    }
}

const MAX_MASK_VOCAB: usize = 20;
const MAX_SEARCH_VOCAB: usize = 4096;

/// One anchored whole-string matcher per terminal.
pub struct TerminalMatcher {
    dfa: dense::DFA<Vec<u32>>,
    start: StateID,
}

impl TerminalMatcher {
    pub fn new(pattern: &str) -> Result<Self, OracleError> {
        let dfa = dense::Builder::new()
            .configure(
                dense::Config::new()
                    .match_kind(MatchKind::All)
                    .start_kind(StartKind::Anchored),
            )
            .syntax(syntax::Config::new().unicode(false).utf8(false))
            .thompson(thompson::Config::new().utf8(false))
            .build(&format!("^(?:{pattern})$"))
            .map_err(|e| OracleError::Regex(e.to_string()))?;
        let start = dfa
            .start_state(&start::Config::new().anchored(Anchored::Yes))
            .map_err(|e| OracleError::Regex(e.to_string()))?;
        Ok(TerminalMatcher { dfa, start })
    }

    fn feed(&self, mut q: StateID, bytes: &[u8]) -> Option<StateID> {
        for &b in bytes {
            q = self.dfa.next_state(q, b);
            if self.dfa.is_dead_state(q) {
                return None;
            }
        }
        Some(q)
    }

    fn accepts_at(&self, q: StateID) -> bool {
        self.dfa.is_match_state(self.dfa.next_eoi_state(q))
    }

    pub fn is_match(&self, s: &[u8]) -> bool {
        self.feed(self.start, s).is_some_and(|q| self.accepts_at(q))
    }

    /// Whether `s` is a prefix of some string in the language.
    pub fn is_viable(&self, s: &[u8]) -> bool {
        self.feed(self.start, s).is_some()
    }

    /// Every `j` such that `s[..j]` is in the language.
    fn match_ends(&self, s: &[u8]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut q = self.start;
        if self.accepts_at(q) {
            out.push(0);
        }
        for (i, &b) in s.iter().enumerate() {
            q = self.dfa.next_state(q, b);
            if self.dfa.is_dead_state(q) {
                break;
            }
            if self.accepts_at(q) {
                out.push(i + 1);
            }
        }
        out
    }

    /// Minimum number of vocabulary tokens whose concatenation is in the language.
    pub fn min_tokens(&self, vocab: &Vocabulary) -> Cost {
        let mut seen = HashSet::from([self.start]);
        let mut frontier = vec![self.start];
        let mut depth = 0;
        while !frontier.is_empty() {
            if frontier.iter().any(|q| self.accepts_at(*q)) {
                return Cost(depth);
            }
            let mut next = Vec::new();
            for q in frontier {
                for (id, t) in vocab.tokens().iter().enumerate() {
                    if id as TokenId == vocab.eos() {
                        continue;
                    }
                    if let Some(r) = self.feed(q, t) {
                        if seen.insert(r) {
                            next.push(r);
                        }
                    }
                }
            }
            frontier = next;
            depth += 1;
        }
        Cost::INF
    }
}

/// Grammar membership and prefix viability by memoized derivation.
pub struct GrammarOracle<'g> {
    g: &'g Grammar,
    terms: Vec<TerminalMatcher>,
    productive: Vec<bool>,
    max_depth: usize,
}

struct Memo<'s> {
    s: &'s [u8],
    ends: HashMap<(Symbol, usize), Vec<usize>>,
    reach: HashMap<(Symbol, usize), bool>,
    active: HashSet<(Symbol, usize, bool)>,
}

impl<'g> GrammarOracle<'g> {
    pub fn new(g: &'g Grammar, max_depth: usize) -> Result<Self, OracleError> {
        let terms = g
            .terminals()
            .iter()
            .map(|t| TerminalMatcher::new(&t.pattern))
            .collect::<Result<Vec<_>, _>>()?;
        let mut productive = vec![false; g.num_nonterminals()];
        let mut changed = true;
        while changed {
            changed = false;
            for p in g.productions() {
                if !productive[p.lhs as usize]
                    && p.rhs.iter().all(|s| match s {
                        Symbol::Terminal(_) => true,
                        Symbol::Nonterminal(n) => productive[*n as usize],
                    })
                {
                    productive[p.lhs as usize] = true;
                    changed = true;
                }
            }
        }
        Ok(GrammarOracle {
            g,
            terms,
            productive,
            max_depth,
        })
    }

    pub fn terminal(&self, i: usize) -> &TerminalMatcher {
        &self.terms[i]
    }

    fn productive(&self, s: Symbol) -> bool {
        match s {
            Symbol::Terminal(_) => true,
            Symbol::Nonterminal(n) => self.productive[n as usize],
        }
    }

    fn ends(&self, m: &mut Memo, x: Symbol, i: usize, depth: usize) -> Result<Vec<usize>, OracleError> {
        if let Some(v) = m.ends.get(&(x, i)) {
            return Ok(v.clone());
        }
        if depth > self.max_depth || !m.active.insert((x, i, false)) {
            return Err(OracleError::CapExceeded(self.max_depth));
        }
        let out = match x {
            Symbol::Terminal(t) => self.terms[t as usize]
                .match_ends(&m.s[i..])
                .into_iter()
                .map(|j| i + j)
                .collect(),
            Symbol::Nonterminal(n) => {
                let mut all = Vec::new();
                for &p in self.g.productions_of(n) {
                    let mut pos = vec![i];
                    for &sym in &self.g.production(p).rhs {
                        let mut next = Vec::new();
                        for k in pos {
                            next.extend(self.ends(m, sym, k, depth + 1)?);
                        }
                        next.sort_unstable();
                        next.dedup();
                        pos = next;
                        if pos.is_empty() {
                            break;
                        }
                    }
                    all.extend(pos);
                }
                all.sort_unstable();
                all.dedup();
                all
            }
        };
        m.active.remove(&(x, i, false));
        m.ends.insert((x, i), out.clone());
        Ok(out)
    }

    // x derives some w such that s[i..] is a prefix of w
    fn reaches(&self, m: &mut Memo, x: Symbol, i: usize, depth: usize) -> Result<bool, OracleError> {
        if let Some(v) = m.reach.get(&(x, i)) {
            return Ok(*v);
        }
        if depth > self.max_depth || !m.active.insert((x, i, true)) {
            return Err(OracleError::CapExceeded(self.max_depth));
        }
        let out = match x {
            Symbol::Terminal(t) => self.terms[t as usize].is_viable(&m.s[i..]),
            Symbol::Nonterminal(n) if !self.productive[n as usize] => false,
            Symbol::Nonterminal(n) => {
                let mut found = false;
                'prods: for &p in self.g.productions_of(n) {
                    let rhs = &self.g.production(p).rhs;
                    if !rhs.iter().all(|s| self.productive(*s)) {
                        continue;
                    }
                    let mut pos = vec![i];
                    for &sym in rhs {
                        for &k in &pos {
                            if self.reaches(m, sym, k, depth + 1)? {
                                found = true;
                                break 'prods;
                            }
                        }
                        let mut next = Vec::new();
                        for k in pos {
                            next.extend(self.ends(m, sym, k, depth + 1)?);
                        }
                        next.sort_unstable();
                        next.dedup();
                        pos = next;
                        if pos.is_empty() {
                            break;
                        }
                    }
                    if pos.contains(&m.s.len()) {
                        found = true;
                        break;
                    }
                }
                found
            }
        };
        m.active.remove(&(x, i, true));
        m.reach.insert((x, i), out);
        Ok(out)
    }

    fn memo<'s>(s: &'s [u8]) -> Memo<'s> {
        Memo {
            s,
            ends: HashMap::new(),
            reach: HashMap::new(),
            active: HashSet::new(),
        }
    }

    pub fn is_member(&self, s: &[u8]) -> Result<bool, OracleError> {
        let mut m = Self::memo(s);
        Ok(self
            .ends(&mut m, Symbol::Nonterminal(self.g.start()), 0, 0)?
            .contains(&s.len()))
    }

    /// Whether `s` is a prefix of some sentence.
    pub fn is_viable(&self, s: &[u8]) -> Result<bool, OracleError> {
        let mut m = Self::memo(s);
        self.reaches(&mut m, Symbol::Nonterminal(self.g.start()), 0, 0)
    }
}

pub fn cfg_membership(g: &Grammar, s: &[u8], depth_cap: usize) -> Result<bool, OracleError> {
    GrammarOracle::new(g, depth_cap)?.is_member(s)
}

/// Exact mask semantics: token `t` is admitted iff some continuation `w`
/// makes `prefix.t.w` a sentence with `|prefix| + 1 + |w| + 1 <= n_max`
/// (the final 1 is eos). Eos is admitted iff the prefix is a sentence and
/// still fits.
pub fn brute_force_mask(
    g: &Grammar,
    vocab: &Vocabulary,
    prefix: &[TokenId],
    n_max: u32,
    budget: &OracleBudget,
) -> Result<Vec<bool>, OracleError> {
    if vocab.len() > MAX_MASK_VOCAB || n_max > budget.max_total_tokens {
        return Err(OracleError::TooLarge(format!(
            "|V|={} N_max={} (limits {MAX_MASK_VOCAB}, {})",
            vocab.len(),
            n_max,
            budget.max_total_tokens
        )));
    }
    let o = GrammarOracle::new(g, budget.max_depth)?;
    let mut search = Search {
        o: &o,
        vocab,
        memo: HashMap::new(),
    };
    let text = vocab.decode(prefix).map_err(|e| OracleError::TooLarge(e.to_string()))?;
    let left = n_max.saturating_sub(prefix.len() as u32);
    let mut bits = vec![false; vocab.len()];
    for (id, bit) in bits.iter_mut().enumerate() {
        let id = id as TokenId;
        if id == vocab.eos() {
            *bit = left >= 1 && o.is_member(&text)?;
        } else if left >= 2 {
            let mut s = text.clone();
            s.extend_from_slice(vocab.token(id));
            *bit = search.feasible(&s, left - 1)?;
        }
    }
    Ok(bits)
}

struct Search<'a, 'g> {
    o: &'a GrammarOracle<'g>,
    vocab: &'a Vocabulary,
    memo: HashMap<(Vec<u8>, u32), bool>,
}

impl Search<'_, '_> {
    // can `s` be completed using at most `left` more tokens, eos included
    fn feasible(&mut self, s: &[u8], left: u32) -> Result<bool, OracleError> {
        if left == 0 {
            return Ok(false);
        }
        if let Some(v) = self.memo.get(&(s.to_vec(), left)) {
            return Ok(*v);
        }
        let mut ok = false;
        if self.o.is_viable(s)? {
            if self.o.is_member(s)? {
                ok = true;
            } else if left >= 2 {
                for (id, t) in self.vocab.tokens().iter().enumerate() {
                    if id as TokenId == self.vocab.eos() {
                        continue;
                    }
                    let mut n = s.to_vec();
                    n.extend_from_slice(t);
                    if self.feasible(&n, left - 1)? {
                        ok = true;
                        break;
                    }
                }
            }
        }
        self.memo.insert((s.to_vec(), left), ok);
        Ok(ok)
    }
}

/// Exact minimum number of tokens leading `dfa` from `q` to acceptance, by
/// breadth-first search over sets of reached states.
pub fn brute_force_min_tokens(dfa: &Dfa, vocab: &Vocabulary, q: StateId) -> Result<Cost, OracleError> {
    if vocab.len() > MAX_SEARCH_VOCAB {
        return Err(OracleError::TooLarge(format!("|V|={}", vocab.len())));
    }
    let mut seen = HashSet::from([q]);
    let mut frontier = VecDeque::from([(q, 0u32)]);
    while let Some((s, d)) = frontier.pop_front() {
        if s == DEAD {
            continue;
        }
        if dfa.is_accepting(s) {
            return Ok(Cost(d));
        }
        for (id, t) in vocab.tokens().iter().enumerate() {
            if id as TokenId == vocab.eos() {
                continue;
            }
            let r = t.iter().fold(s, |acc, b| if acc == DEAD { DEAD } else { dfa.next(acc, *b) });
            if seen.insert(r) {
                frontier.push_back((r, d + 1));
            }
        }
    }
    Ok(Cost::INF)
}

/// Minimum token cost over derivation trees of height at most `depth`,
/// with terminal leaves costing `terminal_cost`.
pub fn bounded_derivation_costs(g: &Grammar, terminal_cost: &[Cost], depth: usize) -> Vec<Cost> {
    let mut d = vec![Cost::INF; g.num_nonterminals()];
    for _ in 0..depth {
        let mut next = vec![Cost::INF; g.num_nonterminals()];
        for p in g.productions() {
            let c = p.rhs.iter().fold(Cost::ZERO, |acc, s| {
                acc.add(match s {
                    Symbol::Terminal(t) => terminal_cost[*t as usize],
                    Symbol::Nonterminal(n) => d[*n as usize],
                })
            });
            if c < next[p.lhs as usize] {
                next[p.lhs as usize] = c;
            }
        }
        d = next;
    }
    d
}

/// D computed entirely by the oracle: terminal costs from `regex-automata`
/// search, nonterminals by derivation trees up to height |N| + 1, which is
/// enough for a minimal tree.
pub fn oracle_nonterminal_costs(g: &Grammar, vocab: &Vocabulary) -> Result<Vec<Cost>, OracleError> {
    let tc = g
        .terminals()
        .iter()
        .map(|t| Ok(TerminalMatcher::new(&t.pattern)?.min_tokens(vocab)))
        .collect::<Result<Vec<_>, OracleError>>()?;
    Ok(bounded_derivation_costs(g, &tc, g.num_nonterminals() + 1))
}

/// Number of terminals touched by `text` when lexed on its own by maximal
/// munch; a trailing viable fragment counts as one. `None` if it does not lex.
pub fn lexeme_span(g: &Grammar, text: &[u8]) -> Result<Option<usize>, OracleError> {
    let terms = g
        .terminals()
        .iter()
        .map(|t| TerminalMatcher::new(&t.pattern))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pos = 0;
    let mut count = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        if terms.iter().any(|m| m.is_viable(rest)) && !terms.iter().any(|m| m.is_match(rest)) {
            return Ok(Some(count + 1));
        }
        let longest = terms
            .iter()
            .filter_map(|m| m.match_ends(rest).into_iter().filter(|j| *j > 0).max())
            .max();
        match longest {
            Some(j) => {
                count += 1;
                pos += j;
            }
            None => return Ok(None),
        }
    }
    Ok(Some(count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use crate::regex::compile_regex;

    const PAREN: &str = "S: E; E: X | LP E RP; X:/x/; LP:/\\(/; RP:/\\)/;";

    fn v0() -> Vocabulary {
        Vocabulary::with_eos(["x", "(", ")", "(x"]).unwrap()
    }

    #[test]
    fn membership_examples() {
        let g = parse_grammar(PAREN).unwrap();
        assert!(cfg_membership(&g, b"(x)", 64).unwrap());
        assert!(!cfg_membership(&g, b"(x", 64).unwrap());
        assert!(cfg_membership(&g, b"((x))", 64).unwrap());
        let j = Grammar::json();
        assert!(cfg_membership(&j, br#"{"a":1}"#, 256).unwrap());
        assert!(cfg_membership(&j, b" [1, true, null, \"s\"] ", 256).unwrap());
        assert!(!cfg_membership(&j, b"[1,]", 256).unwrap());
    }

    #[test]
    fn depth_cap_is_distinct() {
        let g = parse_grammar(PAREN).unwrap();
        assert_eq!(cfg_membership(&g, b"((((x))))", 3), Err(OracleError::CapExceeded(3)));
    }

    #[test]
    fn viability() {
        let g = parse_grammar(PAREN).unwrap();
        let o = GrammarOracle::new(&g, 64).unwrap();
        assert!(o.is_viable(b"((").unwrap());
        assert!(o.is_viable(b"").unwrap());
        assert!(!o.is_viable(b"x)").unwrap());
    }

    #[test]
    fn paren_masks() {
        let g = parse_grammar(PAREN).unwrap();
        let b = OracleBudget::default();
        assert_eq!(brute_force_mask(&g, &v0(), &[], 3, &b).unwrap(), vec![true, false, false, true, false]);
        assert_eq!(brute_force_mask(&g, &v0(), &[], 4, &b).unwrap(), vec![true, true, false, true, false]);
        assert_eq!(brute_force_mask(&g, &v0(), &[0], 3, &b).unwrap(), vec![false, false, false, false, true]);
        assert_eq!(brute_force_mask(&g, &v0(), &[], 1, &b).unwrap(), vec![false; 5]);
    }

    #[test]
    fn instance_caps() {
        let g = parse_grammar(PAREN).unwrap();
        let big = Vocabulary::with_eos((0..30).map(|i| format!("x{i}"))).unwrap();
        assert!(matches!(
            brute_force_mask(&g, &big, &[], 3, &OracleBudget::default()),
            Err(OracleError::TooLarge(_))
        ));
    }

    #[test]
    fn min_tokens_examples() {
        let d = compile_regex("x").unwrap();
        assert_eq!(brute_force_min_tokens(&d, &v0(), d.initial()).unwrap(), Cost(1));
        assert_eq!(brute_force_min_tokens(&d, &v0(), DEAD).unwrap(), Cost::INF);
        let lp = compile_regex(r"\(").unwrap();
        let pair = crate::regex::dfa_concat(&lp, &d).unwrap();
        assert_eq!(brute_force_min_tokens(&pair, &v0(), pair.initial()).unwrap(), Cost(1));
    }

    #[test]
    fn paren_derivation_costs() {
        let g = parse_grammar(PAREN).unwrap();
        assert_eq!(oracle_nonterminal_costs(&g, &v0()).unwrap(), vec![Cost(1), Cost(1)]);
    }
}
