//! Persistent LL(1) parser stack.
//!
//! Nodes are shared between forks, so cloning a stack is O(1). Each node
//! caches the summed completion cost of itself and everything below it, and
//! whether all those symbols are nullable.

use std::sync::Arc;

use thiserror::Error;

use crate::grammar::{Grammar, Ll1Table, Symbol, TerminalId};
use crate::precompute::{Cost, CostTables};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse failure: stack top {top}, lookahead {lookahead}")]
pub struct ParseError {
    pub top: String,
    pub lookahead: String,
}

#[derive(Debug)]
struct Node {
    sym: Symbol,
    cost: Cost,
    nullable: bool,
    len: usize,
    next: Stack,
}

#[derive(Debug, Clone, Default)]
pub struct Stack(Option<Arc<Node>>);

/// What the stack needs to know about the grammar.
pub(crate) struct Ctx<'a> {
    pub grammar: &'a Grammar,
    pub table: &'a Ll1Table,
    pub costs: &'a CostTables,
}

impl PartialEq for Stack {
    fn eq(&self, other: &Self) -> bool {
        let (mut a, mut b) = (self, other);
        loop {
            match (&a.0, &b.0) {
                (None, None) => return true,
                (Some(x), Some(y)) => {
                    if Arc::ptr_eq(x, y) {
                        return true;
                    }
                    if x.sym != y.sym {
                        return false;
                    }
                    a = &x.next;
                    b = &y.next;
                }
                _ => return false,
            }
        }
    }
}

impl Eq for Stack {}

impl Drop for Stack {
    fn drop(&mut self) {
        // unlink iteratively so long stacks do not recurse
        let mut cur = self.0.take();
        while let Some(node) = cur {
            match Arc::try_unwrap(node) {
                Ok(mut n) => cur = n.next.0.take(),
                Err(_) => break,
            }
        }
    }
}

impl Stack {
    pub fn empty() -> Stack {
        Stack(None)
    }

    pub(crate) fn start(ctx: &Ctx) -> Stack {
        Stack::empty().push(Symbol::Nonterminal(ctx.grammar.start()), ctx)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub fn len(&self) -> usize {
        self.0.as_ref().map_or(0, |n| n.len)
    }

    pub fn top(&self) -> Option<Symbol> {
        self.0.as_ref().map(|n| n.sym)
    }

    /// Sum of completion costs of every symbol on the stack.
    pub fn cost(&self) -> Cost {
        self.0.as_ref().map_or(Cost::ZERO, |n| n.cost)
    }

    /// Whether every symbol on the stack can derive the empty string.
    pub fn all_nullable(&self) -> bool {
        self.0.as_ref().is_none_or(|n| n.nullable)
    }

    /// Symbols from top to bottom.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self;
        while let Some(n) = &cur.0 {
            out.push(n.sym);
            cur = &n.next;
        }
        out
    }

    fn pop(&self) -> Option<(Symbol, Stack)> {
        self.0.as_ref().map(|n| (n.sym, n.next.clone()))
    }

    pub(crate) fn push(self, sym: Symbol, ctx: &Ctx) -> Stack {
        let nullable = match sym {
            Symbol::Terminal(_) => false,
            Symbol::Nonterminal(a) => ctx.table.is_nullable(a),
        } && self.all_nullable();
        Stack(Some(Arc::new(Node {
            sym,
            cost: ctx.costs.symbol_cost(sym).add(self.cost()),
            nullable,
            len: self.len() + 1,
            next: self,
        })))
    }

    fn expand(mut self, rhs: &[Symbol], ctx: &Ctx) -> Stack {
        for s in rhs.iter().rev() {
            self = self.push(*s, ctx);
        }
        self
    }

    /// Consumes terminal `a`: expands nonterminals on top by their predicted
    /// production until `a` is on top, then pops it.
    pub(crate) fn feed(&self, a: TerminalId, ctx: &Ctx) -> Result<Stack, ParseError> {
        let mut cur = self.clone();
        loop {
            let fail = |top: String| ParseError {
                top,
                lookahead: ctx.grammar.terminal(a).name.clone(),
            };
            let Some((sym, rest)) = cur.pop() else {
                return Err(fail("<empty>".into()));
            };
            match sym {
                Symbol::Terminal(t) if t == a => return Ok(rest),
                Symbol::Terminal(t) => return Err(fail(ctx.grammar.terminal(t).name.clone())),
                Symbol::Nonterminal(n) => match ctx.table.predict(n, a as usize) {
                    Some(p) => cur = rest.expand(&ctx.grammar.production(p).rhs, ctx),
                    None => return Err(fail(ctx.grammar.nonterminals()[n as usize].clone())),
                },
            }
        }
    }

    /// Whether the input may end here: expanding on the end-of-input
    /// lookahead empties the stack.
    pub(crate) fn accepts_end(&self, ctx: &Ctx) -> bool {
        let mut cur = self.clone();
        while let Some((sym, rest)) = cur.pop() {
            match sym {
                Symbol::Terminal(_) => return false,
                Symbol::Nonterminal(n) => match ctx.table.predict(n, ctx.table.eof()) {
                    Some(p) => cur = rest.expand(&ctx.grammar.production(p).rhs, ctx),
                    None => return false,
                },
            }
        }
        true
    }
}
