//! Decoders over a pluggable language model. The mask is always applied
//! before a token is selected.

mod mcts;
pub mod models;

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::runtime::{EngineError, EngineState};
use crate::vocab::TokenId;

pub use mcts::{mcts_decode, puct_score, MctsConfig};

/// Next-token distributions. Implementations must be deterministic and
/// safe to query from several threads.
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Probabilities over the vocabulary given every token so far,
    /// prompt included. Sums to 1.
    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64>;
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("model has {model} outputs but the vocabulary has {vocab} tokens")]
    VocabSize { model: usize, vocab: usize },
    #[error("invalid decoder configuration: {0}")]
    Config(String),
}

/// One decoded output.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated tokens, eos included when it was emitted.
    pub tokens: Vec<TokenId>,
    pub complete: bool,
    /// Stopped because the budget ran out before eos.
    pub truncated: bool,
    pub simulations: u64,
    pub mask_calls: u64,
    pub mask_time: Duration,
}

impl Generation {
    pub fn mean_mask_time(&self) -> Duration {
        if self.mask_calls == 0 {
            Duration::ZERO
        } else {
            self.mask_time / self.mask_calls as u32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    Greedy,
    Beam(usize),
    Mcts(MctsConfig),
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Greedy => write!(f, "greedy"),
            Strategy::Beam(b) => write!(f, "beam:{b}"),
            Strategy::Mcts(c) => write!(f, "mcts:{},{},{}", c.trials, c.c_puct, c.temperature),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Strategy, DecodeError> {
        let bad = || DecodeError::Config(format!("unknown strategy {s:?}"));
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        if let Some(b) = s.strip_prefix("beam:") {
            let b: usize = b.parse().map_err(|_| bad())?;
            if b == 0 {
                return Err(DecodeError::Config("beam width must be at least 1".into()));
            }
            return Ok(Strategy::Beam(b));
        }
        if let Some(rest) = s.strip_prefix("mcts:") {
            let parts: Vec<&str> = rest.split(',').collect();
            let mut cfg = MctsConfig::default();
            match parts.as_slice() {
                [t] => cfg.trials = t.parse().map_err(|_| bad())?,
                [t, c, tau] => {
                    cfg.trials = t.parse().map_err(|_| bad())?;
                    cfg.c_puct = c.parse().map_err(|_| bad())?;
                    cfg.temperature = tau.parse().map_err(|_| bad())?;
                }
                _ => return Err(bad()),
            }
            cfg.validate()?;
            return Ok(Strategy::Mcts(cfg));
        }
        Err(bad())
    }
}

pub fn decode(
    strategy: Strategy,
    model: &dyn LanguageModel,
    state: EngineState,
    prompt: &[TokenId],
) -> Result<Generation, DecodeError> {
    match strategy {
        Strategy::Greedy => greedy_decode(model, state, prompt),
        Strategy::Beam(b) => beam_search(model, state, prompt, b),
        Strategy::Mcts(cfg) => mcts_decode(model, state, prompt, cfg),
    }
}

/// Prior over mask-true tokens: proportional to `p^(1/tau)`.
pub fn softmax_prior(probs: &[f64], mask: &[bool], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0);
    assert!(mask.iter().any(|m| *m), "softmax_prior over an all-false mask");
    let logits: Vec<f64> = probs
        .iter()
        .zip(mask)
        .map(|(p, m)| if *m { p.ln() / tau } else { f64::NEG_INFINITY })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // every admitted token has zero mass
        let k = mask.iter().filter(|m| **m).count() as f64;
        return mask.iter().map(|m| if *m { 1.0 / k } else { 0.0 }).collect();
    }
    let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Masked probabilities renormalized to sum to 1, uniform over the mask when
/// the model puts no mass on it.
pub(crate) fn masked_renormalized(probs: &[f64], mask: &[bool]) -> Vec<f64> {
    let z: f64 = probs.iter().zip(mask).filter(|(_, m)| **m).map(|(p, _)| *p).sum();
    if z > 0.0 {
        probs.iter().zip(mask).map(|(p, m)| if *m { p / z } else { 0.0 }).collect()
    } else {
        let k = mask.iter().filter(|m| **m).count() as f64;
        mask.iter().map(|m| if *m { 1.0 / k } else { 0.0 }).collect()
    }
}

/// Highest-probability admitted token, lowest id on ties.
pub(crate) fn masked_argmax(probs: &[f64], mask: &[bool]) -> Option<TokenId> {
    let mut best: Option<usize> = None;
    for (t, m) in mask.iter().enumerate() {
        if *m && best.is_none_or(|b| probs[t] > probs[b]) {
            best = Some(t);
        }
    }
    best.map(|t| t as TokenId)
}

/// Mask timing and model plumbing shared by the decoders.
pub(crate) struct Stepper<'a> {
    pub model: &'a dyn LanguageModel,
    pub prompt: &'a [TokenId],
    pub mask_calls: u64,
    pub mask_time: Duration,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a dyn LanguageModel, state: &EngineState, prompt: &'a [TokenId]) -> Result<Stepper<'a>, DecodeError> {
        let vocab = state.engine().vocab().len();
        if model.vocab_size() != vocab {
            return Err(DecodeError::VocabSize {
                model: model.vocab_size(),
                vocab,
            });
        }
        Ok(Stepper {
            model,
            prompt,
            mask_calls: 0,
            mask_time: Duration::ZERO,
        })
    }

    pub fn mask(&mut self, state: &EngineState) -> Result<Vec<bool>, DecodeError> {
        let t0 = Instant::now();
        let m = state.compute_mask()?;
        self.mask_time += t0.elapsed();
        self.mask_calls += 1;
        Ok(m)
    }

    pub fn probs(&self, generated: &[TokenId]) -> Vec<f64> {
        let mut ctx = Vec::with_capacity(self.prompt.len() + generated.len());
        ctx.extend_from_slice(self.prompt);
        ctx.extend_from_slice(generated);
        self.model.next_distribution(&ctx)
    }

    /// Greedy continuation of `state` whose output so far is `tokens`.
    /// Returns the log-probability (unmodified, floored) of the added tokens.
    pub fn rollout(&mut self, state: &mut EngineState, tokens: &mut Vec<TokenId>) -> Result<f64, DecodeError> {
        let mut logp = 0.0;
        while !stopped(state) {
            let mask = self.mask(state)?;
            let p = self.probs(tokens);
            let t = masked_argmax(&p, &mask).expect("mask has a true entry");
            logp += floored_ln(p[t as usize]);
            state.force(t)?;
            tokens.push(t);
        }
        Ok(logp)
    }

    pub fn finish(self, tokens: Vec<TokenId>, state: &EngineState, simulations: u64) -> Generation {
        Generation {
            tokens,
            complete: is_success(state),
            truncated: !state.is_finished(),
            simulations,
            mask_calls: self.mask_calls,
            mask_time: self.mask_time,
        }
    }
}

pub(crate) const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// No further token can be emitted: eos was emitted or the budget is spent.
pub(crate) fn stopped(state: &EngineState) -> bool {
    state.is_finished() || state.generated() >= state.budget()
}

pub(crate) fn is_success(state: &EngineState) -> bool {
    state.is_finished() && !state.is_broken()
}

pub fn greedy_decode(model: &dyn LanguageModel, mut state: EngineState, prompt: &[TokenId]) -> Result<Generation, DecodeError> {
    let mut st = Stepper::new(model, &state, prompt)?;
    let mut tokens = Vec::new();
    st.rollout(&mut state, &mut tokens)?;
    Ok(st.finish(tokens, &state, 0))
}

struct Hyp {
    state: EngineState,
    tokens: Vec<TokenId>,
    logq: f64,
}

impl Hyp {
    fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.logq / self.tokens.len() as f64
        }
    }
}

/// Beam search scored by mean log masked-renormalized probability.
pub fn beam_search(model: &dyn LanguageModel, state: EngineState, prompt: &[TokenId], beams: usize) -> Result<Generation, DecodeError> {
    if beams == 0 {
        return Err(DecodeError::Config("beam width must be at least 1".into()));
    }
    let mut st = Stepper::new(model, &state, prompt)?;
    let mut live = vec![Hyp {
        state,
        tokens: Vec::new(),
        logq: 0.0,
    }];
    let mut pool: Vec<Hyp> = Vec::new();
    while !live.is_empty() && pool.len() < beams {
        let mut cands: Vec<(f64, usize, TokenId, f64)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let mask = st.mask(&h.state)?;
            let q = masked_renormalized(&st.probs(&h.tokens), &mask);
            let len = (h.tokens.len() + 1) as f64;
            for (t, m) in mask.iter().enumerate() {
                if *m {
                    let lq = h.logq + q[t].ln();
                    cands.push((lq / len, i, t as TokenId, lq));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beams - pool.len());
        let mut next = Vec::with_capacity(cands.len());
        for (_, i, t, lq) in cands {
            let h = &live[i];
            let mut s = h.state.clone();
            s.force(t)?;
            let mut tokens = h.tokens.clone();
            tokens.push(t);
            let nh = Hyp { state: s, tokens, logq: lq };
            if stopped(&nh.state) {
                pool.push(nh);
            } else {
                next.push(nh);
            }
        }
        live = next;
    }
    // first in the pool wins ties; successful outputs beat truncated ones
    let mut best: Option<&Hyp> = None;
    for h in &pool {
        let key = |h: &Hyp| (is_success(&h.state), h.score());
        if best.is_none_or(|b| {
            let (ks, kb) = (key(h), key(b));
            ks.0 && !kb.0 || ks.0 == kb.0 && ks.1 > kb.1
        }) {
            best = Some(h);
        }
    }
    let best = best.expect("beam pool is non-empty");
    Ok(st.finish(best.tokens.clone(), &best.state, 0))
}
