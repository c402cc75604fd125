//! FIRST/FOLLOW/nullable computation and the LL(1) prediction table.

use thiserror::Error;

use super::{Grammar, NonterminalId, ProductionId, Symbol, TerminalId};

/// A set of terminals plus the end-of-input marker (index `num_terminals`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermSet {
    bits: Vec<u64>,
}

impl TermSet {
    pub fn new(num_terminals: usize) -> Self {
        TermSet {
            bits: vec![0; (num_terminals + 1).div_ceil(64)],
        }
    }

    pub fn insert(&mut self, i: usize) -> bool {
        let (w, b) = (i / 64, i % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn union_with(&mut self, other: &TermSet) -> bool {
        let mut changed = false;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            let n = *a | *b;
            changed |= n != *a;
            *a = n;
        }
        changed
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(w, bits)| {
            (0..64).filter(move |b| bits & (1 << b) != 0).map(move |b| w * 64 + b)
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Ll1Error {
    #[error("LL(1) conflict for {nonterminal} on lookahead {lookahead}: `{first}` vs `{second}`")]
    Conflict {
        nonterminal: String,
        lookahead: String,
        first: String,
        second: String,
    },
    #[error("LL(1) conflict: {nonterminal} is left-recursive via {cycle}")]
    LeftRecursion { nonterminal: String, cycle: String },
}

#[derive(Debug, Clone)]
pub struct Ll1Table {
    num_terminals: usize,
    predict: Vec<Option<ProductionId>>,
    nullable: Vec<bool>,
    first: Vec<TermSet>,
    follow: Vec<TermSet>,
    follow_terminal: Vec<TermSet>,
}

impl Ll1Table {
    /// End-of-input column index.
    pub fn eof(&self) -> usize {
        self.num_terminals
    }

    /// Predicted production for nonterminal `nt` on lookahead column `la`
    /// (a terminal id, or [`Ll1Table::eof`]).
    #[inline]
    pub fn predict(&self, nt: NonterminalId, la: usize) -> Option<ProductionId> {
        self.predict[nt as usize * (self.num_terminals + 1) + la]
    }

    pub fn is_nullable(&self, nt: NonterminalId) -> bool {
        self.nullable[nt as usize]
    }

    pub fn nullable(&self) -> &[bool] {
        &self.nullable
    }

    pub fn first(&self, nt: NonterminalId) -> &TermSet {
        &self.first[nt as usize]
    }

    pub fn follow(&self, nt: NonterminalId) -> &TermSet {
        &self.follow[nt as usize]
    }

    /// Terminals (and possibly end-of-input) that may directly follow terminal `t`.
    pub fn follow_terminal(&self, t: TerminalId) -> &TermSet {
        &self.follow_terminal[t as usize]
    }

    /// Whether `b` can immediately follow `a` in some sentential form.
    pub fn adjacent(&self, a: TerminalId, b: TerminalId) -> bool {
        self.follow_terminal[a as usize].contains(b as usize)
    }
}

fn nullable_set(g: &Grammar) -> Vec<bool> {
    let mut nullable = vec![false; g.num_nonterminals()];
    let mut changed = true;
    while changed {
        changed = false;
        for p in g.productions() {
            if !nullable[p.lhs as usize]
                && p.rhs.iter().all(|s| match s {
                    Symbol::Terminal(_) => false,
                    Symbol::Nonterminal(n) => nullable[*n as usize],
                })
            {
                nullable[p.lhs as usize] = true;
                changed = true;
            }
        }
    }
    nullable
}

/// FIRST of a symbol string; returns whether the whole string is nullable.
fn first_of_seq(
    seq: &[Symbol],
    first: &[TermSet],
    nullable: &[bool],
    out: &mut TermSet,
) -> bool {
    for s in seq {
        match s {
            Symbol::Terminal(t) => {
                out.insert(*t as usize);
                return false;
            }
            Symbol::Nonterminal(n) => {
                out.union_with(&first[*n as usize]);
                if !nullable[*n as usize] {
                    return false;
                }
            }
        }
    }
    true
}

fn check_left_recursion(g: &Grammar, nullable: &[bool]) -> Result<(), Ll1Error> {
    // edge A -> B when A: α B β with α nullable
    let n = g.num_nonterminals();
    let mut edges = vec![Vec::new(); n];
    for p in g.productions() {
        for s in &p.rhs {
            match s {
                Symbol::Terminal(_) => break,
                Symbol::Nonterminal(b) => {
                    edges[p.lhs as usize].push(*b as usize);
                    if !nullable[*b as usize] {
                        break;
                    }
                }
            }
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; n];
    let mut path = Vec::new();
    fn dfs(
        v: usize,
        edges: &[Vec<usize>],
        color: &mut [u8],
        path: &mut Vec<usize>,
    ) -> Option<Vec<usize>> {
        color[v] = 1;
        path.push(v);
        for &w in &edges[v] {
            if color[w] == 1 {
                let start = path.iter().position(|x| *x == w).unwrap();
                let mut cycle = path[start..].to_vec();
                cycle.push(w);
                return Some(cycle);
            }
            if color[w] == 0 {
                if let Some(c) = dfs(w, edges, color, path) {
                    return Some(c);
                }
            }
        }
        path.pop();
        color[v] = 2;
        None
    }
    for v in 0..n {
        if color[v] == 0 {
            if let Some(cycle) = dfs(v, &edges, &mut color, &mut path) {
                let names: Vec<&str> = cycle.iter().map(|i| g.nonterminals()[*i].as_str()).collect();
                return Err(Ll1Error::LeftRecursion {
                    nonterminal: names[0].to_string(),
                    cycle: names.join(" -> "),
                });
            }
        }
    }
    Ok(())
}

/// Builds the LL(1) table, failing on the first conflicting cell.
pub fn build_ll1_table(g: &Grammar) -> Result<Ll1Table, Ll1Error> {
    let nt = g.num_nonterminals();
    let nterm = g.num_terminals();
    let nullable = nullable_set(g);
    check_left_recursion(g, &nullable)?;

    let mut first = vec![TermSet::new(nterm); nt];
    let mut changed = true;
    while changed {
        changed = false;
        for p in g.productions() {
            let mut acc = TermSet::new(nterm);
            first_of_seq(&p.rhs, &first, &nullable, &mut acc);
            changed |= first[p.lhs as usize].union_with(&acc);
        }
    }

    let eof = nterm;
    let mut follow = vec![TermSet::new(nterm); nt];
    let mut follow_terminal = vec![TermSet::new(nterm); nterm];
    follow[g.start() as usize].insert(eof);
    changed = true;
    while changed {
        changed = false;
        for p in g.productions() {
            for (i, s) in p.rhs.iter().enumerate() {
                let mut acc = TermSet::new(nterm);
                let rest_nullable = first_of_seq(&p.rhs[i + 1..], &first, &nullable, &mut acc);
                if rest_nullable {
                    let lhs_follow = follow[p.lhs as usize].clone();
                    acc.union_with(&lhs_follow);
                }
                changed |= match s {
                    Symbol::Terminal(t) => follow_terminal[*t as usize].union_with(&acc),
                    Symbol::Nonterminal(n) => follow[*n as usize].union_with(&acc),
                };
            }
        }
    }

    let width = nterm + 1;
    let mut predict: Vec<Option<ProductionId>> = vec![None; nt * width];
    for (pid, p) in g.productions().iter().enumerate() {
        let mut la = TermSet::new(nterm);
        if first_of_seq(&p.rhs, &first, &nullable, &mut la) {
            la.union_with(&follow[p.lhs as usize]);
        }
        for a in la.iter() {
            let cell = &mut predict[p.lhs as usize * width + a];
            match cell {
                Some(prev) if *prev as usize != pid => {
                    return Err(Ll1Error::Conflict {
                        nonterminal: g.nonterminals()[p.lhs as usize].clone(),
                        lookahead: if a == eof {
                            "end of input".to_string()
                        } else {
                            g.terminal(a as TerminalId).name.clone()
                        },
                        first: g.render_production(*prev),
                        second: g.render_production(pid as ProductionId),
                    });
                }
                _ => *cell = Some(pid as ProductionId),
            }
        }
    }

    Ok(Ll1Table {
        num_terminals: nterm,
        predict,
        nullable,
        first,
        follow,
        follow_terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse_grammar;
    use super::*;

    const PAREN: &str = "S: E; E: X | LP E RP; X:/x/; LP:/\\(/; RP:/\\)/;";

    #[test]
    fn parenthesis_table() {
        let g = parse_grammar(PAREN).unwrap();
        let t = build_ll1_table(&g).unwrap();
        let e = g.nonterminal_id("E").unwrap();
        let x = g.terminal_id("X").unwrap() as usize;
        let lp = g.terminal_id("LP").unwrap() as usize;
        let rp = g.terminal_id("RP").unwrap() as usize;
        assert_eq!(g.render_production(t.predict(e, x).unwrap()), "E: X");
        assert_eq!(g.render_production(t.predict(e, lp).unwrap()), "E: LP E RP");
        assert_eq!(t.predict(e, rp), None);
        assert!(!t.is_nullable(e));
        assert!(!t.adjacent(x as u32, x as u32));
        assert!(t.adjacent(lp as u32, x as u32));
        assert!(t.adjacent(x as u32, rp as u32));
    }

    #[test]
    fn first_first_conflict() {
        let g = parse_grammar("A: X | X Y; X:/x/; Y:/y/;").unwrap();
        match build_ll1_table(&g).unwrap_err() {
            Ll1Error::Conflict {
                nonterminal,
                lookahead,
                first,
                second,
            } => {
                assert_eq!(nonterminal, "A");
                assert_eq!(lookahead, "X");
                assert_eq!(first, "A: X");
                assert_eq!(second, "A: X Y");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn first_follow_conflict() {
        // B nullable and FIRST(B) meets FOLLOW(B)
        let g = parse_grammar("A: B X; B: X | ; X:/x/;").unwrap();
        assert!(matches!(build_ll1_table(&g), Err(Ll1Error::Conflict { .. })));
    }

    #[test]
    fn left_recursion_reported() {
        let g = parse_grammar("E: E P T | T; T:/t/; P:/\\+/;").unwrap();
        assert!(matches!(
            build_ll1_table(&g),
            Err(Ll1Error::LeftRecursion { .. }) | Err(Ll1Error::Conflict { .. })
        ));
        let g = parse_grammar("E: N E P | T; N: ; T:/t/; P:/\\+/;").unwrap();
        assert!(matches!(build_ll1_table(&g), Err(Ll1Error::LeftRecursion { .. })));
    }

    #[test]
    fn nullable_fixpoint() {
        let g = parse_grammar("A: B C; B: | X; C: B B; D: X; X:/x/;").unwrap();
        let nullable = nullable_set(&g);
        assert_eq!(nullable, vec![true, true, true, false]);
    }

    #[test]
    fn json_is_ll1() {
        let g = crate::grammar::Grammar::json();
        let t = build_ll1_table(&g).unwrap();
        let ws_nt = g.nonterminal_id("WS").unwrap();
        assert!(t.is_nullable(ws_nt));
        let ws = g.terminal_id("ws").unwrap();
        assert!(!t.adjacent(ws, ws));
    }
}
