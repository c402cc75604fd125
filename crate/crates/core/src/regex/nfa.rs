//! Thompson construction, subset construction and Hopcroft minimization.

use std::collections::HashMap;

use super::syntax::{Ast, ByteSet};
use super::{Dfa, RegexError, StateId, DEAD};

#[derive(Debug, Clone, Default)]
struct NState {
    eps: Vec<u32>,
    trans: Vec<(ByteSet, u32)>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Nfa {
    states: Vec<NState>,
    start: u32,
    accepting: Vec<bool>,
}

impl Nfa {
    fn add(&mut self) -> u32 {
        self.states.push(NState::default());
        self.accepting.push(false);
        (self.states.len() - 1) as u32
    }

    pub(crate) fn from_ast(ast: &Ast) -> Nfa {
        let mut nfa = Nfa::default();
        let (s, e) = nfa.build(ast);
        nfa.start = s;
        nfa.accepting[e as usize] = true;
        nfa
    }

    fn build(&mut self, ast: &Ast) -> (u32, u32) {
        match ast {
            Ast::Empty => {
                let s = self.add();
                (s, s)
            }
            Ast::Class(set) => {
                let s = self.add();
                let e = self.add();
                self.states[s as usize].trans.push((*set, e));
                (s, e)
            }
            Ast::Concat(items) => {
                let (start, mut end) = self.build(&items[0]);
                for item in &items[1..] {
                    let (s, e) = self.build(item);
                    self.states[end as usize].eps.push(s);
                    end = e;
                }
                (start, end)
            }
            Ast::Alt(alts) => {
                let s = self.add();
                let e = self.add();
                for alt in alts {
                    let (as_, ae) = self.build(alt);
                    self.states[s as usize].eps.push(as_);
                    self.states[ae as usize].eps.push(e);
                }
                (s, e)
            }
            Ast::Repeat { inner, min, max } => {
                let start = self.add();
                let mut end = start;
                for _ in 0..*min {
                    let (s, e) = self.build(inner);
                    self.states[end as usize].eps.push(s);
                    end = e;
                }
                match max {
                    None => {
                        let (s, e) = self.build(inner);
                        let out = self.add();
                        self.states[end as usize].eps.push(s);
                        self.states[end as usize].eps.push(out);
                        self.states[e as usize].eps.push(s);
                        self.states[e as usize].eps.push(out);
                        end = out;
                    }
                    Some(max) => {
                        let out = self.add();
                        for _ in *min..*max {
                            let (s, e) = self.build(inner);
                            self.states[end as usize].eps.push(s);
                            self.states[end as usize].eps.push(out);
                            end = e;
                        }
                        self.states[end as usize].eps.push(out);
                        end = out;
                    }
                }
                (start, end)
            }
        }
    }

    /// Appends the live part of `dfa`, returning the NFA id of its initial state
    /// and the NFA ids of its accepting states.
    fn append_dfa(&mut self, dfa: &Dfa) -> (u32, Vec<u32>) {
        let class_sets = dfa.class_sets();
        let base = self.states.len() as u32;
        let n = dfa.num_states();
        for _ in 0..n {
            self.add();
        }
        let mut accepting = Vec::new();
        for q in 0..n as StateId {
            if q == DEAD {
                continue;
            }
            for (c, set) in class_sets.iter().enumerate() {
                let t = dfa.trans[q as usize * dfa.stride + c];
                if t != DEAD {
                    self.states[(base + q) as usize].trans.push((*set, base + t));
                }
            }
            if dfa.is_accepting(q) {
                accepting.push(base + q);
            }
        }
        (base + dfa.initial(), accepting)
    }

    pub(crate) fn concat_dfas(a: &Dfa, b: &Dfa) -> Nfa {
        let mut nfa = Nfa::default();
        let (a_start, a_acc) = nfa.append_dfa(a);
        let (b_start, b_acc) = nfa.append_dfa(b);
        for q in a_acc {
            nfa.states[q as usize].eps.push(b_start);
        }
        for q in b_acc {
            nfa.accepting[q as usize] = true;
        }
        nfa.start = a_start;
        nfa
    }

    fn closure(&self, set: &mut Vec<u32>, seen: &mut [bool]) {
        let mut stack: Vec<u32> = set.clone();
        while let Some(q) = stack.pop() {
            for &r in &self.states[q as usize].eps {
                if !seen[r as usize] {
                    seen[r as usize] = true;
                    set.push(r);
                    stack.push(r);
                }
            }
        }
        for &q in set.iter() {
            seen[q as usize] = false;
        }
        set.sort_unstable();
        set.dedup();
    }

    /// Partitions the byte alphabet into classes that every transition set
    /// respects. Returns (class per byte, representative byte per class).
    fn byte_classes(&self) -> (Vec<u8>, Vec<u8>) {
        let mut class = vec![0u16; 256];
        let mut count = 1u16;
        let mut seen_sets: Vec<ByteSet> = Vec::new();
        for st in &self.states {
            for (set, _) in &st.trans {
                if seen_sets.contains(set) {
                    continue;
                }
                seen_sets.push(*set);
                let mut remap: HashMap<(u16, bool), u16> = HashMap::new();
                let mut next = 0u16;
                for b in 0..=255u8 {
                    let key = (class[b as usize], set.contains(b));
                    let id = *remap.entry(key).or_insert_with(|| {
                        next += 1;
                        next - 1
                    });
                    class[b as usize] = id;
                }
                count = next;
            }
        }
        let mut reps = vec![0u8; count as usize];
        let mut filled = vec![false; count as usize];
        for b in 0..=255u8 {
            let c = class[b as usize] as usize;
            if !filled[c] {
                filled[c] = true;
                reps[c] = b;
            }
        }
        (class.into_iter().map(|c| c as u8).collect(), reps)
    }

    /// Subset construction followed by minimization.
    pub(crate) fn to_dfa(&self, state_cap: usize) -> Result<Dfa, RegexError> {
        let (classes, reps) = self.byte_classes();
        let stride = reps.len();
        let mut seen = vec![false; self.states.len()];

        let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut sets: Vec<Vec<u32>> = Vec::new();
        // state 0 is the empty set (dead)
        ids.insert(Vec::new(), 0);
        sets.push(Vec::new());
        let mut start = vec![self.start];
        self.closure(&mut start, &mut seen);
        let start_id = if start.is_empty() { 0 } else { 1 };
        ids.insert(start.clone(), 1);
        sets.push(start);

        let mut trans: Vec<u32> = vec![0; stride];
        let mut i = 1;
        while i < sets.len() {
            for &rep in reps.iter() {
                let mut next: Vec<u32> = Vec::new();
                for &q in &sets[i] {
                    for (set, t) in &self.states[q as usize].trans {
                        if set.contains(rep) {
                            next.push(*t);
                        }
                    }
                }
                self.closure(&mut next, &mut seen);
                let id = match ids.get(&next) {
                    Some(id) => *id,
                    None => {
                        if sets.len() >= state_cap {
                            return Err(RegexError::StateCap { cap: state_cap });
                        }
                        let id = sets.len() as u32;
                        ids.insert(next.clone(), id);
                        sets.push(next);
                        id
                    }
                };
                trans.push(id);
            }
            i += 1;
        }
        let accepting: Vec<bool> = sets
            .iter()
            .map(|s| s.iter().any(|q| self.accepting[*q as usize]))
            .collect();
        minimize(classes, stride, trans, accepting, start_id)
    }
}

/// Hopcroft partition refinement over a complete DFA whose state 0 is dead,
/// then renumbering so that the dead state is 0 and the initial state is 1.
fn minimize(
    classes: Vec<u8>,
    stride: usize,
    trans: Vec<u32>,
    accepting: Vec<bool>,
    start: u32,
) -> Result<Dfa, RegexError> {
    let n = accepting.len();
    // inverse transitions, flattened per class: inv[c] maps target -> preds
    let mut inv_off = vec![vec![0usize; n + 1]; stride];
    for q in 0..n {
        for c in 0..stride {
            inv_off[c][trans[q * stride + c] as usize + 1] += 1;
        }
    }
    for off in inv_off.iter_mut() {
        for i in 0..n {
            off[i + 1] += off[i];
        }
    }
    let mut inv = vec![vec![0u32; n]; stride];
    let mut fill = inv_off.clone();
    for q in 0..n {
        for c in 0..stride {
            let t = trans[q * stride + c] as usize;
            inv[c][fill[c][t]] = q as u32;
            fill[c][t] += 1;
        }
    }

    let mut block_of = vec![0usize; n];
    let mut blocks: Vec<Vec<u32>> = Vec::new();
    let acc: Vec<u32> = (0..n as u32).filter(|q| accepting[*q as usize]).collect();
    let rej: Vec<u32> = (0..n as u32).filter(|q| !accepting[*q as usize]).collect();
    for part in [acc, rej] {
        if !part.is_empty() {
            for &q in &part {
                block_of[q as usize] = blocks.len();
            }
            blocks.push(part);
        }
    }
    let mut in_work = vec![true; blocks.len()];
    let mut work: Vec<usize> = (0..blocks.len()).collect();
    let mut hit_count: Vec<usize> = Vec::new();
    let mut marked = vec![false; n];

    while let Some(a) = work.pop() {
        in_work[a] = false;
        let splitter = blocks[a].clone();
        for c in 0..stride {
            let mut x: Vec<u32> = Vec::new();
            for &t in &splitter {
                let t = t as usize;
                x.extend_from_slice(&inv[c][inv_off[c][t]..inv_off[c][t + 1]]);
            }
            if x.is_empty() {
                continue;
            }
            hit_count.clear();
            hit_count.resize(blocks.len(), 0);
            let mut touched = Vec::new();
            for &p in &x {
                marked[p as usize] = true;
                let b = block_of[p as usize];
                if hit_count[b] == 0 {
                    touched.push(b);
                }
                hit_count[b] += 1;
            }
            for y in touched {
                if hit_count[y] == blocks[y].len() {
                    continue;
                }
                let (inside, outside): (Vec<u32>, Vec<u32>) =
                    blocks[y].iter().partition(|q| marked[**q as usize]);
                let new_id = blocks.len();
                let (keep, moved) = if inside.len() <= outside.len() {
                    (outside, inside)
                } else {
                    (inside, outside)
                };
                for &q in &moved {
                    block_of[q as usize] = new_id;
                }
                blocks[y] = keep;
                blocks.push(moved);
                // if y is queued both halves stay queued; otherwise queueing
                // the smaller half suffices
                in_work.push(true);
                work.push(new_id);
            }
            for &p in &x {
                marked[p as usize] = false;
            }
        }
    }

    // block graph
    let nb = blocks.len();
    let btrans = |b: usize, c: usize| block_of[trans[blocks[b][0] as usize * stride + c] as usize];
    let bacc: Vec<bool> = (0..nb).map(|b| accepting[blocks[b][0] as usize]).collect();
    // blocks that can reach acceptance
    let mut live = bacc.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for b in 0..nb {
            if !live[b] && (0..stride).any(|c| live[btrans(b, c)]) {
                live[b] = true;
                changed = true;
            }
        }
    }
    let start_block = block_of[start as usize];
    if !live[start_block] {
        return Err(RegexError::EmptyLanguage);
    }
    // renumber: 0 = dead, 1 = initial, then BFS order
    let mut new_id = vec![u32::MAX; nb];
    for b in 0..nb {
        if !live[b] {
            new_id[b] = DEAD;
        }
    }
    let mut order = vec![start_block];
    new_id[start_block] = 1;
    let mut i = 0;
    while i < order.len() {
        let b = order[i];
        for c in 0..stride {
            let t = btrans(b, c);
            if new_id[t] == u32::MAX {
                new_id[t] = order.len() as u32 + 1;
                order.push(t);
            }
        }
        i += 1;
    }
    let total = order.len() + 1;
    let mut out_trans = vec![DEAD; total * stride];
    let mut out_acc = vec![false; total];
    for &b in &order {
        let q = new_id[b] as usize;
        out_acc[q] = bacc[b];
        for c in 0..stride {
            out_trans[q * stride + c] = new_id[btrans(b, c)];
        }
    }
    Ok(Dfa::from_parts(classes, stride, out_trans, out_acc, 1))
}
