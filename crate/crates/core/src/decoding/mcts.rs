//! PUCT tree search. Each emitted token is chosen after a fixed number of
//! simulations; the chosen subtree is kept for the next step.

use crate::runtime::EngineState;
use crate::vocab::TokenId;

use super::{floored_ln, softmax_prior, stopped, DecodeError, Generation, LanguageModel, Stepper};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MctsConfig {
    pub c_puct: f64,
    pub temperature: f64,
    pub trials: u32,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            c_puct: 5.0,
            temperature: 2.0,
            trials: 20,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.c_puct >= 0.0) || !(self.temperature > 0.0) || self.trials == 0 {
            return Err(DecodeError::Config(format!(
                "need c_puct >= 0, temperature > 0, trials >= 1 (got {}, {}, {})",
                self.c_puct, self.temperature, self.trials
            )));
        }
        Ok(())
    }
}

/// `Q + c * P * sqrt(sum_n) / (1 + n)`.
pub fn puct_score(q: f64, c_puct: f64, prior: f64, sum_n: u32, n: u32) -> f64 {
    q + c_puct * prior * (sum_n as f64).sqrt() / (1.0 + n as f64)
}

#[derive(Debug)]
struct Edge {
    token: TokenId,
    prior: f64,
    logp: f64,
    n: u32,
    q: f64,
    child: Option<usize>,
}

#[derive(Debug)]
struct Node {
    state: EngineState,
    tokens: Vec<TokenId>,
    logp: f64,
    /// Rollout value from this node, fixed when the node is created.
    value: f64,
    edges: Option<Vec<Edge>>,
}

struct Tree<'a, 'm> {
    nodes: Vec<Node>,
    st: &'a mut Stepper<'m>,
    cfg: MctsConfig,
}

impl Tree<'_, '_> {
    fn new_node(&mut self, state: EngineState, tokens: Vec<TokenId>, logp: f64) -> Result<usize, DecodeError> {
        let mut tail = tokens.clone();
        let extra = self.st.rollout(&mut state.clone(), &mut tail)?;
        let value = ((logp + extra) / tail.len().max(1) as f64).exp();
        self.nodes.push(Node {
            state,
            tokens,
            logp,
            value,
            edges: None,
        });
        Ok(self.nodes.len() - 1)
    }

    fn ensure_edges(&mut self, id: usize) -> Result<(), DecodeError> {
        if self.nodes[id].edges.is_some() {
            return Ok(());
        }
        let node = &self.nodes[id];
        let mask = self.st.mask(&node.state)?;
        let p = self.st.probs(&node.tokens);
        let prior = softmax_prior(&p, &mask, self.cfg.temperature);
        let edges = (0..mask.len())
            .filter(|t| mask[*t])
            .map(|t| Edge {
                token: t as TokenId,
                prior: prior[t],
                logp: floored_ln(p[t]),
                n: 0,
                q: 0.0,
                child: None,
            })
            .collect();
        self.nodes[id].edges = Some(edges);
        Ok(())
    }

    fn select(&self, id: usize) -> usize {
        let edges = self.nodes[id].edges.as_ref().unwrap();
        let sum_n: u32 = edges.iter().map(|e| e.n).sum();
        let mut best = 0;
        let mut best_f = f64::NEG_INFINITY;
        for (i, e) in edges.iter().enumerate() {
            let f = puct_score(e.q, self.cfg.c_puct, e.prior, sum_n, e.n);
            // ties: higher prior, then the lower id (edges are in id order)
            if f > best_f || f == best_f && e.prior > edges[best].prior {
                best = i;
                best_f = f;
            }
        }
        best
    }

    fn simulate(&mut self, root: usize) -> Result<(), DecodeError> {
        let mut path = Vec::new();
        let mut cur = root;
        let value = loop {
            if stopped(&self.nodes[cur].state) {
                break self.nodes[cur].value;
            }
            self.ensure_edges(cur)?;
            let e = self.select(cur);
            path.push((cur, e));
            let edge = &self.nodes[cur].edges.as_ref().unwrap()[e];
            match edge.child {
                Some(c) => cur = c,
                None => {
                    let (token, logp) = (edge.token, edge.logp);
                    let parent = &self.nodes[cur];
                    let mut state = parent.state.clone();
                    state.force(token)?;
                    let mut tokens = parent.tokens.clone();
                    tokens.push(token);
                    let logp = parent.logp + logp;
                    let c = self.new_node(state, tokens, logp)?;
                    self.nodes[cur].edges.as_mut().unwrap()[e].child = Some(c);
                    break self.nodes[c].value;
                }
            }
        };
        for (n, e) in path {
            let edge = &mut self.nodes[n].edges.as_mut().unwrap()[e];
            edge.n += 1;
            edge.q = edge.q.max(value);
        }
        Ok(())
    }

    /// Visited child with the best Q; then most visits, higher prior, lower id.
    fn commit(&self, id: usize) -> usize {
        let edges = self.nodes[id].edges.as_ref().unwrap();
        let mut best: Option<&Edge> = None;
        for e in edges.iter().filter(|e| e.child.is_some()) {
            if best.is_none_or(|b| {
                e.q > b.q || e.q == b.q && (e.n > b.n || e.n == b.n && e.prior > b.prior)
            }) {
                best = Some(e);
            }
        }
        best.and_then(|e| e.child).expect("at least one simulation ran")
    }
}

pub fn mcts_decode(model: &dyn LanguageModel, state: EngineState, prompt: &[TokenId], cfg: MctsConfig) -> Result<Generation, DecodeError> {
    cfg.validate()?;
    let mut st = Stepper::new(model, &state, prompt)?;
    let mut tree = Tree {
        nodes: Vec::new(),
        st: &mut st,
        cfg,
    };
    // the root is never scored, so skip its rollout
    tree.nodes.push(Node {
        state,
        tokens: Vec::new(),
        logp: 0.0,
        value: 0.0,
        edges: None,
    });
    let mut root = 0;
    let mut sims = 0u64;
    while !stopped(&tree.nodes[root].state) {
        for _ in 0..cfg.trials {
            tree.simulate(root)?;
            sims += 1;
        }
        root = tree.commit(root);
    }
    let node = &tree.nodes[root];
    let (tokens, state) = (node.tokens.clone(), node.state.clone());
    Ok(st.finish(tokens, &state, sims))
}
