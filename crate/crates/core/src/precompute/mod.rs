//! Offline tables: pair automata, completion costs and the sparse token map.

mod cache;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::grammar::{Grammar, Ll1Table, NonterminalId, Symbol, TerminalId};
use crate::regex::{dfa_concat_with_cap, Dfa, RegexError, StateId, DEAD, DEFAULT_STATE_CAP};
use crate::vocab::{TokenId, Vocabulary};

pub use cache::{load_cache, save_cache, CacheError, CACHE_VERSION};

/// A token count with a saturating infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cost(pub u32);

impl Cost {
    pub const INF: Cost = Cost(u32::MAX);
    pub const ZERO: Cost = Cost(0);

    pub fn is_finite(self) -> bool {
        self != Cost::INF
    }

    pub fn add(self, other: Cost) -> Cost {
        if self == Cost::INF || other == Cost::INF {
            Cost::INF
        } else {
            Cost(self.0.saturating_add(other.0).min(u32::MAX - 1))
        }
    }

    pub fn finite(self) -> Option<u32> {
        self.is_finite().then_some(self.0)
    }
}

impl std::fmt::Display for Cost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_finite() {
            write!(f, "{}", self.0)
        } else {
            f.write_str("∞")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AutomatonKey {
    Single(TerminalId),
    Pair(TerminalId, TerminalId),
}

/// Sparse δ*(q, t) for one automaton: per state, a sorted run of
/// (token, successor) pairs over the tokens that keep it alive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMap {
    pub(crate) offsets: Vec<u32>,
    pub(crate) tokens: Vec<TokenId>,
    pub(crate) succ: Vec<StateId>,
}

impl TokenMap {
    pub fn build(dfa: &Dfa, vocab: &Vocabulary) -> TokenMap {
        let mut offsets = Vec::with_capacity(dfa.num_states() + 1);
        let mut tokens = Vec::new();
        let mut succ = Vec::new();
        offsets.push(0);
        for q in 0..dfa.num_states() as StateId {
            if q != DEAD {
                for (id, t) in vocab.tokens().iter().enumerate() {
                    if id as TokenId == vocab.eos() {
                        continue;
                    }
                    let r = dfa.run(q, t);
                    if r != DEAD {
                        tokens.push(id as TokenId);
                        succ.push(r);
                    }
                }
            }
            offsets.push(tokens.len() as u32);
        }
        TokenMap {
            offsets,
            tokens,
            succ,
        }
    }

    /// Live (token, successor) entries from state `q`, sorted by token.
    pub fn row(&self, q: StateId) -> (&[TokenId], &[StateId]) {
        let (a, b) = (
            self.offsets[q as usize] as usize,
            self.offsets[q as usize + 1] as usize,
        );
        (&self.tokens[a..b], &self.succ[a..b])
    }

    pub fn get(&self, q: StateId, t: TokenId) -> Option<StateId> {
        let (toks, succ) = self.row(q);
        toks.binary_search(&t).ok().map(|i| succ[i])
    }

    pub fn num_entries(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    pub key: AutomatonKey,
    pub dfa: Dfa,
    /// Minimum number of tokens from each state to an accepting state.
    pub cost: Vec<Cost>,
    pub token_map: TokenMap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostTables {
    pub(crate) grammar_hash: [u8; 32],
    pub(crate) vocab_hash: [u8; 32],
    pub(crate) num_terminals: usize,
    pub(crate) automata: Vec<Automaton>,
    /// Dense `a * T + b` index into `automata` for pair keys; `u32::MAX` when pruned.
    pub(crate) pair_index: Vec<u32>,
    pub(crate) d: Vec<Cost>,
}

impl CostTables {
    pub fn grammar_hash(&self) -> [u8; 32] {
        self.grammar_hash
    }

    pub fn vocab_hash(&self) -> [u8; 32] {
        self.vocab_hash
    }

    pub fn matches(&self, g: &Grammar, v: &Vocabulary) -> bool {
        self.grammar_hash == g.source_hash() && self.vocab_hash == v.content_hash()
    }

    pub fn automata(&self) -> &[Automaton] {
        &self.automata
    }

    pub fn single(&self, a: TerminalId) -> &Automaton {
        &self.automata[a as usize]
    }

    pub fn pair_id(&self, a: TerminalId, b: TerminalId) -> Option<usize> {
        let i = self.pair_index[a as usize * self.num_terminals + b as usize];
        (i != u32::MAX).then_some(i as usize)
    }

    pub fn pair(&self, a: TerminalId, b: TerminalId) -> Option<&Automaton> {
        self.pair_id(a, b).map(|i| &self.automata[i])
    }

    pub fn num_pairs(&self) -> usize {
        self.automata.len() - self.num_terminals
    }

    /// Cost of a terminal from its initial state.
    pub fn terminal_cost(&self, a: TerminalId) -> Cost {
        let au = self.single(a);
        au.cost[au.dfa.initial() as usize]
    }

    pub fn d(&self, nt: NonterminalId) -> Cost {
        self.d[nt as usize]
    }

    pub fn d_table(&self) -> &[Cost] {
        &self.d
    }

    pub fn symbol_cost(&self, s: Symbol) -> Cost {
        match s {
            Symbol::Terminal(a) => self.terminal_cost(a),
            Symbol::Nonterminal(n) => self.d(n),
        }
    }

    pub fn token_map_entries(&self) -> usize {
        self.automata.iter().map(|a| a.token_map.num_entries()).sum()
    }
}

/// Per-state minimum token counts to acceptance, by Dijkstra on the
/// reversed token-transition graph (every token edge costs 1).
pub fn compute_terminal_costs(dfa: &Dfa, vocab: &Vocabulary) -> Vec<Cost> {
    costs_from_map(dfa, &TokenMap::build(dfa, vocab))
}

fn costs_from_map(dfa: &Dfa, map: &TokenMap) -> Vec<Cost> {
    let n = dfa.num_states();
    let mut rev: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for q in 0..n as StateId {
        let (_, succ) = map.row(q);
        let mut targets: Vec<StateId> = succ.to_vec();
        targets.sort_unstable();
        targets.dedup();
        for r in targets {
            rev[r as usize].push(q);
        }
    }
    let mut dist = vec![Cost::INF; n];
    let mut heap = BinaryHeap::new();
    for q in 0..n {
        if dfa.is_accepting(q as StateId) {
            dist[q] = Cost::ZERO;
            heap.push(Reverse((0u32, q as StateId)));
        }
    }
    while let Some(Reverse((d, q))) = heap.pop() {
        if Cost(d) > dist[q as usize] {
            continue;
        }
        for &p in &rev[q as usize] {
            let nd = Cost(d + 1);
            if nd < dist[p as usize] {
                dist[p as usize] = nd;
                heap.push(Reverse((d + 1, p)));
            }
        }
    }
    dist
}

/// Minimum tokens to fully derive each nonterminal (Knuth's generalization
/// of Dijkstra to grammars). Terminals cost their initial-state C value.
pub fn compute_nonterminal_costs(g: &Grammar, terminal_cost: &[Cost]) -> Vec<Cost> {
    let nn = g.num_nonterminals();
    let prods = g.productions();
    // per production: unresolved nonterminal occurrences and the running sum
    let mut pending: Vec<usize> = Vec::with_capacity(prods.len());
    let mut partial: Vec<Cost> = Vec::with_capacity(prods.len());
    let mut uses: Vec<Vec<usize>> = vec![Vec::new(); nn];
    for (pid, p) in prods.iter().enumerate() {
        let mut cnt = 0;
        let mut sum = Cost::ZERO;
        for s in &p.rhs {
            match s {
                Symbol::Terminal(a) => sum = sum.add(terminal_cost[*a as usize]),
                Symbol::Nonterminal(b) => {
                    cnt += 1;
                    uses[*b as usize].push(pid);
                }
            }
        }
        pending.push(cnt);
        partial.push(sum);
    }
    let mut d = vec![Cost::INF; nn];
    let mut done = vec![false; nn];
    let mut heap = BinaryHeap::new();
    for (pid, p) in prods.iter().enumerate() {
        if pending[pid] == 0 && partial[pid].is_finite() && partial[pid] < d[p.lhs as usize] {
            d[p.lhs as usize] = partial[pid];
            heap.push(Reverse((partial[pid].0, p.lhs)));
        }
    }
    while let Some(Reverse((c, a))) = heap.pop() {
        if done[a as usize] || Cost(c) > d[a as usize] {
            continue;
        }
        done[a as usize] = true;
        for &pid in &uses[a as usize] {
            pending[pid] -= 1;
            partial[pid] = partial[pid].add(Cost(c));
            let lhs = prods[pid].lhs as usize;
            if pending[pid] == 0 && !done[lhs] && partial[pid] < d[lhs] {
                d[lhs] = partial[pid];
                heap.push(Reverse((partial[pid].0, lhs as NonterminalId)));
            }
        }
    }
    let unsat: Vec<&str> = (0..nn)
        .filter(|i| !d[*i].is_finite())
        .map(|i| g.nonterminals()[i].as_str())
        .collect();
    if !unsat.is_empty() {
        log::warn!("nonterminals with no realizable derivation: {}", unsat.join(", "));
    }
    d
}

fn build_automaton(key: AutomatonKey, dfa: Dfa, vocab: &Vocabulary) -> Automaton {
    let token_map = TokenMap::build(&dfa, vocab);
    let cost = costs_from_map(&dfa, &token_map);
    Automaton {
        key,
        dfa,
        cost,
        token_map,
    }
}

/// Builds every table for `g` and `vocab`. Pairs that can never be adjacent
/// according to the terminal FOLLOW sets are skipped.
pub fn precompute(g: &Grammar, table: &Ll1Table, vocab: &Vocabulary) -> Result<CostTables, RegexError> {
    precompute_with_cap(g, table, vocab, DEFAULT_STATE_CAP)
}

pub fn precompute_with_cap(
    g: &Grammar,
    table: &Ll1Table,
    vocab: &Vocabulary,
    cap: usize,
) -> Result<CostTables, RegexError> {
    let t = g.num_terminals();
    let mut keys: Vec<AutomatonKey> = (0..t as TerminalId).map(AutomatonKey::Single).collect();
    let mut pair_index = vec![u32::MAX; t * t];
    for a in 0..t as TerminalId {
        for b in 0..t as TerminalId {
            if table.adjacent(a, b) {
                pair_index[a as usize * t + b as usize] = keys.len() as u32;
                keys.push(AutomatonKey::Pair(a, b));
            }
        }
    }
    let automata = keys
        .par_iter()
        .map(|key| {
            let dfa = match *key {
                AutomatonKey::Single(a) => g.terminal(a).dfa.clone(),
                AutomatonKey::Pair(a, b) => {
                    dfa_concat_with_cap(&g.terminal(a).dfa, &g.terminal(b).dfa, cap)?
                }
            };
            Ok(build_automaton(*key, dfa, vocab))
        })
        .collect::<Result<Vec<_>, RegexError>>()?;
    let tc: Vec<Cost> = automata[..t]
        .iter()
        .map(|a| a.cost[a.dfa.initial() as usize])
        .collect();
    let d = compute_nonterminal_costs(g, &tc);
    Ok(CostTables {
        grammar_hash: g.source_hash(),
        vocab_hash: vocab.content_hash(),
        num_terminals: t,
        automata,
        pair_index,
        d,
    })
}
