//! Per-session constrained decoding state and the budget-aware token mask.

mod lexer;
mod stack;

use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{build_ll1_table, Grammar, GrammarError, Ll1Error, Ll1Table, Symbol, TerminalId};
use crate::precompute::{precompute, Cost, CostTables};
use crate::regex::{RegexError, StateId, DEAD};
use crate::vocab::{TokenId, Vocabulary};

pub use lexer::{batch_lex, LexError, LexState};
pub use stack::{ParseError, Stack};

use stack::Ctx;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("budget must be at least 1")]
    InvalidBudget,
    #[error("budget of {budget} tokens exhausted (needs at least {required})")]
    BudgetExhausted { budget: u32, required: Cost },
    #[error("cost tables were built for a different grammar or vocabulary")]
    HashMismatch,
    #[error("mask is empty after {generated} tokens; this is an engine bug")]
    DeadSession { generated: u32 },
    #[error("token {token} is not admitted by the current mask")]
    MaskedToken { token: TokenId },
    #[error("unknown token id {token}")]
    UnknownToken { token: TokenId },
    #[error("session already emitted eos")]
    Finished,
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Ll1(#[from] Ll1Error),
    #[error(transparent)]
    Regex(#[from] RegexError),
}

/// Which constraint the mask enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    /// Grammar plus the token budget.
    Full,
    /// Grammar only; the budget term is dropped.
    GrammarOnly,
    /// Every token admitted; validity is only tracked.
    Unconstrained,
}

/// Immutable tables shared by every session.
#[derive(Debug)]
pub struct Engine {
    grammar: Grammar,
    table: Ll1Table,
    costs: CostTables,
    vocab: Vocabulary,
}

impl Engine {
    pub fn new(
        grammar: Grammar,
        table: Ll1Table,
        costs: CostTables,
        vocab: Vocabulary,
    ) -> Result<Arc<Engine>, EngineError> {
        if !costs.matches(&grammar, &vocab) {
            return Err(EngineError::HashMismatch);
        }
        Ok(Arc::new(Engine {
            grammar,
            table,
            costs,
            vocab,
        }))
    }

    /// Builds the LL(1) table and every cost table in memory.
    pub fn build(grammar: Grammar, vocab: Vocabulary) -> Result<Arc<Engine>, BuildError> {
        let table = build_ll1_table(&grammar)?;
        let costs = precompute(&grammar, &table, &vocab)?;
        Ok(Engine::new(grammar, table, costs, vocab).expect("fresh tables match"))
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn table(&self) -> &Ll1Table {
        &self.table
    }

    pub fn costs(&self) -> &CostTables {
        &self.costs
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn ctx(&self) -> Ctx<'_> {
        Ctx {
            grammar: &self.grammar,
            table: &self.table,
            costs: &self.costs,
        }
    }

    /// Minimum number of tokens (eos included) of any complete output.
    pub fn min_output_tokens(&self) -> Cost {
        self.costs.d(self.grammar.start()).add(Cost(1))
    }

    pub fn session(self: &Arc<Self>, budget: u32) -> Result<EngineState, EngineError> {
        self.session_with(budget, Constraint::Full)
    }

    pub fn session_with(self: &Arc<Self>, budget: u32, mode: Constraint) -> Result<EngineState, EngineError> {
        if budget < 1 {
            return Err(EngineError::InvalidBudget);
        }
        if mode == Constraint::Full {
            let need = self.min_output_tokens();
            if !need.is_finite() || need.0 > budget {
                return Err(EngineError::BudgetExhausted {
                    budget,
                    required: need,
                });
            }
        }
        self.session_unchecked(budget, mode)
    }

    /// A session without the up-front feasibility check, for inspecting
    /// states reached by forcing tokens.
    pub fn session_unchecked(self: &Arc<Self>, budget: u32, mode: Constraint) -> Result<EngineState, EngineError> {
        if budget < 1 {
            return Err(EngineError::InvalidBudget);
        }
        Ok(EngineState {
            engine: self.clone(),
            mode,
            budget,
            generated: 0,
            lex: LexState::new(&self.grammar),
            stack: Stack::start(&self.ctx()),
            committed: Arc::new(Vec::new()),
            finished: false,
            broken: false,
        })
    }

    /// Batch reconstruction of the state reached after `tokens`: the decoded
    /// text is lexed in one pass and the terminals fed to a fresh parser.
    /// In unconstrained mode an invalid sequence yields the broken state
    /// built from the longest valid prefix.
    pub fn replay(self: &Arc<Self>, budget: u32, mode: Constraint, tokens: &[TokenId]) -> Result<EngineState, EngineError> {
        let eos = self.vocab.eos();
        if let Some(t) = tokens.iter().find(|t| **t as usize >= self.vocab.len()) {
            return Err(EngineError::UnknownToken { token: *t });
        }
        if tokens.iter().rev().skip(1).any(|t| *t == eos) {
            return Err(EngineError::Finished);
        }
        let body = tokens.strip_suffix(&[eos]).unwrap_or(tokens);
        let mut s = match self.batch_state(budget, mode, body) {
            Ok(s) => s,
            Err(e) if mode != Constraint::Unconstrained => return Err(e),
            Err(_) => {
                // the first token that fails
                let k = (1..=body.len())
                    .find(|k| self.batch_state(budget, mode, &body[..*k]).is_err())
                    .expect("the whole sequence fails");
                let mut s = self.batch_state(budget, mode, &body[..k - 1])?;
                s.broken = true;
                s
            }
        };
        s.generated = body.len() as u32;
        if body.len() < tokens.len() {
            if !s.is_complete() {
                s.broken = true;
            }
            s.generated += 1;
            s.finished = true;
        }
        Ok(s)
    }

    fn batch_state(self: &Arc<Self>, budget: u32, mode: Constraint, body: &[TokenId]) -> Result<EngineState, EngineError> {
        let mut s = self.session_unchecked(budget, mode)?;
        let text = self.vocab.decode(body).expect("ids checked");
        let (terms, at) = batch_lex(&self.grammar, &text)?;
        let ctx = self.ctx();
        for t in &terms {
            s.stack = s.stack.feed(*t, &ctx)?;
        }
        s.committed = Arc::new(terms);
        s.lex = LexState::from_remainder(&self.grammar, &text[at..]);
        Ok(s)
    }
}

/// A one- or two-terminal continuation the parser can currently accept.
#[derive(Debug, Clone)]
pub struct AcceptSequence {
    pub terminals: Vec<TerminalId>,
    /// Index into [`CostTables::automata`] of the automaton for the sequence.
    pub automaton: usize,
    pub stack: Stack,
    /// Tokens needed to resolve everything left on `stack`.
    pub d_cost: Cost,
}

/// Per-token breakdown of the mask condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub terminals: Vec<TerminalId>,
    pub consumed: u32,
    pub completion: Cost,
    pub dangling: Cost,
}

impl Verdict {
    pub fn total(&self) -> Cost {
        Cost(self.consumed).add(self.completion).add(self.dangling)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenReport {
    pub token: TokenId,
    pub admitted: bool,
    /// Cheapest accept sequence that keeps the token alive, if any.
    pub best: Option<Verdict>,
}

#[derive(Debug, Clone)]
pub struct EngineState {
    engine: Arc<Engine>,
    mode: Constraint,
    budget: u32,
    generated: u32,
    lex: LexState,
    stack: Stack,
    committed: Arc<Vec<TerminalId>>,
    finished: bool,
    broken: bool,
}

impl PartialEq for EngineState {
    fn eq(&self, o: &Self) -> bool {
        self.budget == o.budget
            && self.mode == o.mode
            && self.generated == o.generated
            && self.lex == o.lex
            && self.stack == o.stack
            && self.committed == o.committed
            && self.finished == o.finished
            && self.broken == o.broken
    }
}

impl EngineState {
    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn mode(&self) -> Constraint {
        self.mode
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    pub fn generated(&self) -> u32 {
        self.generated
    }

    pub fn remainder(&self) -> &[u8] {
        self.lex.remainder()
    }

    pub fn lexer(&self) -> &LexState {
        &self.lex
    }

    pub fn committed(&self) -> &[TerminalId] {
        &self.committed
    }

    pub fn stack(&self) -> &Stack {
        &self.stack
    }

    pub fn stack_symbols(&self) -> Vec<Symbol> {
        self.stack.symbols()
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Whether an invalid token was forced through in unconstrained mode.
    pub fn is_broken(&self) -> bool {
        self.broken
    }

    /// The output so far is a complete sentence: flushing the remainder
    /// and ending the input leaves nothing unresolved.
    pub fn is_complete(&self) -> bool {
        if self.broken {
            return false;
        }
        let g = &self.engine.grammar;
        let Ok(terms) = self.lex.finish(g) else {
            return false;
        };
        let ctx = self.engine.ctx();
        let mut st = self.stack.clone();
        for t in terms {
            match st.feed(t, &ctx) {
                Ok(s) => st = s,
                Err(_) => return false,
            }
        }
        st.accepts_end(&ctx)
    }

    pub fn parser_feed(&self, t: TerminalId) -> Result<Stack, ParseError> {
        self.stack.feed(t, &self.engine.ctx())
    }

    pub fn accept_sequences(&self) -> Vec<AcceptSequence> {
        let ctx = self.engine.ctx();
        let costs = &self.engine.costs;
        let nt = self.engine.grammar.num_terminals() as TerminalId;
        let mut out = Vec::new();
        for a in 0..nt {
            let Ok(s1) = self.stack.feed(a, &ctx) else {
                continue;
            };
            out.push(AcceptSequence {
                terminals: vec![a],
                automaton: a as usize,
                d_cost: s1.cost(),
                stack: s1.clone(),
            });
            for b in 0..nt {
                let Some(k) = costs.pair_id(a, b) else {
                    continue;
                };
                if let Ok(s2) = s1.feed(b, &ctx) {
                    out.push(AcceptSequence {
                        terminals: vec![a, b],
                        automaton: k,
                        d_cost: s2.cost(),
                        stack: s2,
                    });
                }
            }
        }
        out
    }

    fn check_open(&self) -> Result<(), EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        if self.generated >= self.budget {
            return Err(EngineError::BudgetExhausted {
                budget: self.budget,
                required: Cost(self.generated + 1),
            });
        }
        Ok(())
    }

    // State of sequence automaton `k` after reading the remainder from its
    // initial state, or None when the remainder already kills it.
    fn remainder_state(&self, k: usize) -> Option<StateId> {
        let dfa = &self.engine.costs.automata()[k].dfa;
        let q = dfa.run(dfa.initial(), self.lex.remainder());
        (q != DEAD).then_some(q)
    }

    /// Largest admissible completion cost, exclusive, for a sequence with
    /// `d_cost` dangling tokens. `None` means nothing fits.
    fn slack(&self, d_cost: Cost) -> Option<Cost> {
        match self.mode {
            Constraint::Full => {
                let used = Cost(self.generated + 1).add(d_cost);
                (used.is_finite() && used.0 < self.budget).then(|| Cost(self.budget - used.0))
            }
            _ => d_cost.is_finite().then_some(Cost::INF),
        }
    }

    pub fn compute_mask(&self) -> Result<Vec<bool>, EngineError> {
        self.check_open()?;
        let vocab = &self.engine.vocab;
        if self.mode == Constraint::Unconstrained {
            return Ok(vec![true; vocab.len()]);
        }
        let mut bits = vec![false; vocab.len()];
        for seq in self.accept_sequences() {
            let Some(slack) = self.slack(seq.d_cost) else {
                continue;
            };
            let Some(q) = self.remainder_state(seq.automaton) else {
                continue;
            };
            let au = &self.engine.costs.automata()[seq.automaton];
            let (toks, succ) = au.token_map.row(q);
            for (t, s) in toks.iter().zip(succ) {
                if au.cost[*s as usize] < slack {
                    bits[*t as usize] = true;
                }
            }
        }
        bits[vocab.eos() as usize] = self.is_complete();
        if !bits.iter().any(|b| *b) {
            return Err(EngineError::DeadSession {
                generated: self.generated,
            });
        }
        Ok(bits)
    }

    /// The mask condition for a single token.
    pub fn admits(&self, token: TokenId) -> Result<bool, EngineError> {
        self.check_open()?;
        let vocab = &self.engine.vocab;
        if token as usize >= vocab.len() {
            return Err(EngineError::UnknownToken { token });
        }
        if self.mode == Constraint::Unconstrained {
            return Ok(true);
        }
        if token == vocab.eos() {
            return Ok(self.is_complete());
        }
        for seq in self.accept_sequences() {
            let (Some(slack), Some(q)) = (self.slack(seq.d_cost), self.remainder_state(seq.automaton)) else {
                continue;
            };
            let au = &self.engine.costs.automata()[seq.automaton];
            if let Some(s) = au.token_map.get(q, token) {
                if au.cost[s as usize] < slack {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Mask with, for every token, the cheapest live accept sequence and the
    /// three cost terms of the budget check.
    pub fn explain_mask(&self) -> Result<Vec<TokenReport>, EngineError> {
        self.check_open()?;
        let vocab = &self.engine.vocab;
        let mut best: Vec<Option<Verdict>> = vec![None; vocab.len()];
        for seq in self.accept_sequences() {
            let Some(q) = self.remainder_state(seq.automaton) else {
                continue;
            };
            let au = &self.engine.costs.automata()[seq.automaton];
            let (toks, succ) = au.token_map.row(q);
            for (t, s) in toks.iter().zip(succ) {
                let v = Verdict {
                    terminals: seq.terminals.clone(),
                    consumed: self.generated + 1,
                    completion: au.cost[*s as usize],
                    dangling: seq.d_cost,
                };
                let slot = &mut best[*t as usize];
                if slot.as_ref().is_none_or(|b| v.total() < b.total()) {
                    *slot = Some(v);
                }
            }
        }
        let bits = match self.compute_mask() {
            Ok(b) => b,
            Err(EngineError::DeadSession { .. }) => vec![false; vocab.len()],
            Err(e) => return Err(e),
        };
        Ok(best
            .into_iter()
            .enumerate()
            .map(|(t, v)| TokenReport {
                token: t as TokenId,
                admitted: bits[t],
                best: v,
            })
            .collect())
    }

    /// Appends `token` after checking it against the mask.
    pub fn advance(&mut self, token: TokenId) -> Result<(), EngineError> {
        if !self.admits(token)? {
            return Err(EngineError::MaskedToken { token });
        }
        self.apply(token)
    }

    /// Appends `token` without the mask check; lexing and parsing still apply.
    /// In unconstrained mode a failure marks the session broken instead of
    /// returning an error.
    pub fn force(&mut self, token: TokenId) -> Result<(), EngineError> {
        if self.finished {
            return Err(EngineError::Finished);
        }
        if token as usize >= self.engine.vocab.len() {
            return Err(EngineError::UnknownToken { token });
        }
        self.apply(token)
    }

    // All or nothing: on failure the lexer and parser are left untouched.
    fn apply(&mut self, token: TokenId) -> Result<(), EngineError> {
        let engine = self.engine.clone();
        if token == engine.vocab.eos() {
            if !self.is_complete() {
                self.broken = true;
            }
            self.generated += 1;
            self.finished = true;
            return Ok(());
        }
        if self.broken {
            self.generated += 1;
            return Ok(());
        }
        let ctx = engine.ctx();
        let step = || -> Result<(LexState, Stack, Vec<TerminalId>), EngineError> {
            let mut lex = self.lex.clone();
            let mut terms = Vec::new();
            lex.push(&engine.grammar, engine.vocab.token(token), &mut terms)?;
            let mut stack = self.stack.clone();
            for t in &terms {
                stack = stack.feed(*t, &ctx)?;
            }
            Ok((lex, stack, terms))
        };
        match step() {
            Ok((lex, stack, terms)) => {
                self.lex = lex;
                self.stack = stack;
                Arc::make_mut(&mut self.committed).extend(terms);
                self.generated += 1;
                Ok(())
            }
            Err(_) if self.mode == Constraint::Unconstrained => {
                self.broken = true;
                self.generated += 1;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }
}
