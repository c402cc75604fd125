//! Maximal-munch lexing over all terminal automata, incremental and batch.

use thiserror::Error;

use crate::grammar::{Grammar, TerminalId};
use crate::regex::{StateId, DEAD};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("no terminal matches at {context:?}")]
pub struct LexError {
    pub context: String,
}

/// The remainder `r` together with every terminal automaton's state on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexState {
    buf: Vec<u8>,
    states: Vec<StateId>,
    /// Longest accepted prefix of `buf` and the terminal that wins it.
    best: Option<(usize, TerminalId)>,
}

impl LexState {
    pub fn new(g: &Grammar) -> LexState {
        LexState {
            buf: Vec::new(),
            states: g.terminals().iter().map(|t| t.dfa.initial()).collect(),
            best: None,
        }
    }

    /// Lexer state after reading `bytes` from scratch without committing.
    /// The bytes must stay viable for some terminal.
    pub fn from_remainder(g: &Grammar, bytes: &[u8]) -> LexState {
        let mut s = LexState::new(g);
        for &b in bytes {
            s.step(g, b);
        }
        s
    }

    pub fn remainder(&self) -> &[u8] {
        &self.buf
    }

    pub fn terminal_states(&self) -> &[StateId] {
        &self.states
    }

    fn reset(&mut self, g: &Grammar) {
        self.buf.clear();
        for (s, t) in self.states.iter_mut().zip(g.terminals()) {
            *s = t.dfa.initial();
        }
        self.best = None;
    }

    // Advances all automata on `b`. Returns false, leaving the state
    // untouched, when every automaton dies.
    fn step(&mut self, g: &Grammar, b: u8) -> bool {
        let terms = g.terminals();
        if !self
            .states
            .iter()
            .zip(terms)
            .any(|(q, t)| *q != DEAD && t.dfa.next(*q, b) != DEAD)
        {
            return false;
        }
        for (q, t) in self.states.iter_mut().zip(terms) {
            if *q != DEAD {
                *q = t.dfa.next(*q, b);
            }
        }
        self.buf.push(b);
        if let Some(i) = self
            .states
            .iter()
            .zip(terms)
            .position(|(q, t)| t.dfa.is_accepting(*q))
        {
            self.best = Some((self.buf.len(), i as TerminalId));
        }
        true
    }

    fn has_future(&self, g: &Grammar) -> bool {
        self.states
            .iter()
            .zip(g.terminals())
            .any(|(q, t)| *q != DEAD && t.dfa.has_live_successor(*q))
    }

    fn commit_best(&mut self, g: &Grammar, out: &mut Vec<TerminalId>) -> Result<Vec<u8>, LexError> {
        let (len, t) = self.best.ok_or_else(|| LexError {
            context: String::from_utf8_lossy(&self.buf).into_owned(),
        })?;
        out.push(t);
        let rest = self.buf[len..].to_vec();
        self.reset(g);
        Ok(rest)
    }

    /// Feeds bytes, appending every terminal that gets committed to `out`.
    pub fn push(&mut self, g: &Grammar, bytes: &[u8], out: &mut Vec<TerminalId>) -> Result<(), LexError> {
        let mut queue: std::collections::VecDeque<u8> = bytes.iter().copied().collect();
        while let Some(b) = queue.pop_front() {
            if self.step(g, b) {
                if !self.has_future(g) {
                    self.commit_best(g, out)?;
                }
                continue;
            }
            if self.buf.is_empty() {
                return Err(LexError {
                    context: String::from_utf8_lossy(&[b]).into_owned(),
                });
            }
            let rest = self.commit_best(g, out).map_err(|_| LexError {
                context: format!(
                    "{}{}",
                    String::from_utf8_lossy(&self.buf),
                    String::from_utf8_lossy(&[b])
                ),
            })?;
            queue.push_front(b);
            for &r in rest.iter().rev() {
                queue.push_front(r);
            }
        }
        Ok(())
    }

    /// Terminals produced if the input ended now.
    pub fn finish(&self, g: &Grammar) -> Result<Vec<TerminalId>, LexError> {
        let mut s = self.clone();
        let mut out = Vec::new();
        while !s.buf.is_empty() {
            let rest = s.commit_best(g, &mut out)?;
            s.push(g, &rest, &mut out)?;
        }
        Ok(out)
    }
}

/// Non-incremental maximal munch over a whole string. Returns the committed
/// terminals and the offset where the uncommitted remainder starts.
pub fn batch_lex(g: &Grammar, input: &[u8]) -> Result<(Vec<TerminalId>, usize), LexError> {
    let terms = g.terminals();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < input.len() {
        let mut states: Vec<StateId> = terms.iter().map(|t| t.dfa.initial()).collect();
        let mut best = None;
        let mut j = pos;
        let mut alive = true;
        while j < input.len() {
            let next: Vec<StateId> = states
                .iter()
                .zip(terms)
                .map(|(q, t)| if *q == DEAD { DEAD } else { t.dfa.next(*q, input[j]) })
                .collect();
            if next.iter().all(|q| *q == DEAD) {
                alive = false;
                break;
            }
            states = next;
            j += 1;
            if let Some(i) = states.iter().zip(terms).position(|(q, t)| t.dfa.is_accepting(*q)) {
                best = Some((j, i as TerminalId));
            }
            if !states
                .iter()
                .zip(terms)
                .any(|(q, t)| *q != DEAD && t.dfa.has_live_successor(*q))
            {
                break;
            }
        }
        let future = states
            .iter()
            .zip(terms)
            .any(|(q, t)| *q != DEAD && t.dfa.has_live_successor(*q));
        if alive && j == input.len() && future {
            return Ok((out, pos));
        }
        let (end, t) = best.ok_or_else(|| LexError {
            context: String::from_utf8_lossy(&input[pos..(j + 1).min(input.len())]).into_owned(),
        })?;
        out.push(t);
        pos = end;
    }
    Ok((out, pos))
}
