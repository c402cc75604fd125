//! Evaluation harness: runs (task, strategy, budget, constraint) cells and
//! reports Syntax and Exact-match.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoding::{decode, DecodeError, LanguageModel, Strategy};
use crate::json::same_value;
use crate::runtime::{Constraint, Engine};
use crate::vocab::{Vocabulary, VocabError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("task file line {line}: {msg}")]
    TaskFile { line: usize, msg: String },
    #[error("task {id}: prompt or output not covered by the vocabulary")]
    Untokenizable { id: String },
    #[error("invalid budget policy {0:?}")]
    Policy(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetPolicy {
    Fixed(u32),
    /// Expansion ratio over the reference length.
    Ratio(f64),
}

impl BudgetPolicy {
    pub fn ratio(e: f64) -> Result<BudgetPolicy, EvalError> {
        if e.is_finite() && e >= 1.0 {
            Ok(BudgetPolicy::Ratio(e))
        } else {
            Err(EvalError::Policy(format!("ratio {e}")))
        }
    }

    pub fn fixed(n: u32) -> Result<BudgetPolicy, EvalError> {
        if n >= 1 {
            Ok(BudgetPolicy::Fixed(n))
        } else {
            Err(EvalError::Policy("budget 0".into()))
        }
    }

    /// `floor(l_gt * e)`, never below 1. The small epsilon keeps products
    /// such as 10 * 1.1 from rounding down.
    pub fn budget(&self, l_gt: u32) -> u32 {
        match *self {
            BudgetPolicy::Fixed(n) => n,
            BudgetPolicy::Ratio(e) => ((l_gt as f64 * e + 1e-9).floor() as u32).max(1),
        }
    }
}

impl std::fmt::Display for BudgetPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BudgetPolicy::Fixed(n) => write!(f, "fixed:{n}"),
            BudgetPolicy::Ratio(e) => write!(f, "ratio:{e}"),
        }
    }
}

pub fn constraint_name(c: Constraint) -> &'static str {
    match c {
        Constraint::Full => "full",
        Constraint::GrammarOnly => "grammar-only",
        Constraint::Unconstrained => "none",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    #[serde(default)]
    pub prompt: String,
    pub output: String,
    /// Reference length in tokens, eos included.
    #[serde(default)]
    pub l_gt: Option<u32>,
}

impl Task {
    /// Fills in `l_gt` from the vocabulary when absent.
    pub fn resolve(mut self, vocab: &Vocabulary) -> Result<Task, EvalError> {
        if self.l_gt.is_none() {
            let n = vocab
                .tokenize(self.output.as_bytes())
                .ok_or_else(|| EvalError::Untokenizable { id: self.id.clone() })?
                .len();
            self.l_gt = Some(n as u32 + 1);
        }
        Ok(self)
    }

    pub fn reference_len(&self) -> u32 {
        self.l_gt.unwrap_or(1)
    }
}

/// One JSON object per line.
pub fn load_tasks(path: &Path, vocab: &Vocabulary) -> Result<Vec<Task>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    parse_tasks(&text, vocab)
}

pub fn parse_tasks(text: &str, vocab: &Vocabulary) -> Result<Vec<Task>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Task = serde_json::from_str(line).map_err(|e| EvalError::TaskFile {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(t.resolve(vocab)?);
    }
    Ok(out)
}

pub fn write_tasks(tasks: &[Task]) -> String {
    tasks
        .iter()
        .map(|t| serde_json::to_string(t).unwrap() + "\n")
        .collect()
}

/// One evaluated cell. Latency is kept out of the CSV so that reports are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub task: String,
    pub model: String,
    pub strategy: String,
    pub mode: String,
    pub policy: String,
    pub budget: u32,
    pub l_gt: u32,
    pub tokens: u32,
    pub complete: bool,
    pub truncated: bool,
    pub exact: bool,
    pub simulations: u64,
    pub output: String,
    pub error: String,
    #[serde(skip)]
    pub micros: u64,
    #[serde(skip)]
    pub mask_micros: u64,
    #[serde(skip)]
    pub mask_calls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub model: String,
    pub strategy: String,
    pub mode: String,
    pub policy: String,
    pub tasks: usize,
    pub syntax_pct: f64,
    pub exact_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub records: Vec<Record>,
}

impl EvalReport {
    /// Grouped by model, strategy, mode and policy, in first-seen order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut order: Vec<(String, String, String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, String, String, String), (usize, usize, usize)> = BTreeMap::new();
        for r in &self.records {
            let key = (r.model.clone(), r.strategy.clone(), r.mode.clone(), r.policy.clone());
            let g = groups.entry(key.clone()).or_insert_with(|| {
                order.push(key);
                (0, 0, 0)
            });
            g.0 += 1;
            g.1 += r.complete as usize;
            g.2 += r.exact as usize;
        }
        order
            .into_iter()
            .map(|k| {
                let (n, c, e) = groups[&k];
                Aggregate {
                    model: k.0,
                    strategy: k.1,
                    mode: k.2,
                    policy: k.3,
                    tasks: n,
                    syntax_pct: 100.0 * c as f64 / n as f64,
                    exact_pct: 100.0 * e as f64 / n as f64,
                }
            })
            .collect()
    }

    pub fn syntax_pct(&self) -> f64 {
        pct(self.records.iter().filter(|r| r.complete).count(), self.records.len())
    }

    pub fn exact_pct(&self) -> f64 {
        pct(self.records.iter().filter(|r| r.exact).count(), self.records.len())
    }

    /// Mean wall time per generated token, in milliseconds.
    pub fn mean_token_latency_ms(&self) -> f64 {
        let toks: u64 = self.records.iter().map(|r| r.tokens as u64).sum();
        let us: u64 = self.records.iter().map(|r| r.micros).sum();
        if toks == 0 {
            0.0
        } else {
            us as f64 / toks as f64 / 1000.0
        }
    }

    pub fn mean_mask_ms(&self) -> f64 {
        let calls: u64 = self.records.iter().map(|r| r.mask_calls).sum();
        let us: u64 = self.records.iter().map(|r| r.mask_micros).sum();
        if calls == 0 {
            0.0
        } else {
            us as f64 / calls as f64 / 1000.0
        }
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("records are UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<EvalReport, EvalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let records = r.deserialize().collect::<Result<Vec<Record>, _>>()?;
        Ok(EvalReport { records })
    }

    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap() + "\n")
            .collect()
    }

    /// Aggregate table with latency columns.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<14} {:<14} {:<13} {:<10} {:>5} {:>8} {:>8}\n",
            "model", "strategy", "mode", "policy", "tasks", "syntax%", "exact%"
        );
        for a in self.aggregates() {
            s += &format!(
                "{:<14} {:<14} {:<13} {:<10} {:>5} {:>8.1} {:>8.1}\n",
                a.model, a.strategy, a.mode, a.policy, a.tasks, a.syntax_pct, a.exact_pct
            );
        }
        s += &format!(
            "overall: syntax {:.1}%, exact {:.1}%, {:.3} ms/token, {:.3} ms/mask\n",
            self.syntax_pct(),
            self.exact_pct(),
            self.mean_token_latency_ms(),
            self.mean_mask_ms()
        );
        s
    }
}

fn pct(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * k as f64 / n as f64
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub strategies: Vec<Strategy>,
    pub policies: Vec<BudgetPolicy>,
    pub modes: Vec<Constraint>,
}

/// Runs every cell. Cells run in parallel; records come back in
/// (task, strategy, policy, mode) order.
pub fn run_eval(
    engine: &Arc<Engine>,
    model: &dyn LanguageModel,
    model_name: &str,
    tasks: &[Task],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let vocab = engine.vocab();
    let prompts = tasks
        .iter()
        .map(|t| vocab.tokenize(t.prompt.as_bytes()).ok_or_else(|| EvalError::Untokenizable { id: t.id.clone() }))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::new();
    for (ti, _) in tasks.iter().enumerate() {
        for s in &cfg.strategies {
            for p in &cfg.policies {
                for m in &cfg.modes {
                    cells.push((ti, *s, *p, *m));
                }
            }
        }
    }
    let records = cells
        .par_iter()
        .map(|&(ti, strategy, policy, mode)| {
            let task = &tasks[ti];
            let budget = policy.budget(task.reference_len());
            let t0 = Instant::now();
            let result = engine
                .session_with(budget, mode)
                .map_err(DecodeError::from)
                .and_then(|s| decode(strategy, model, s, &prompts[ti]));
            let micros = t0.elapsed().as_micros() as u64;
            let mut r = Record {
                task: task.id.clone(),
                model: model_name.to_string(),
                strategy: strategy.to_string(),
                mode: constraint_name(mode).to_string(),
                policy: policy.to_string(),
                budget,
                l_gt: task.reference_len(),
                tokens: 0,
                complete: false,
                truncated: false,
                exact: false,
                simulations: 0,
                output: String::new(),
                error: String::new(),
                micros,
                mask_micros: 0,
                mask_calls: 0,
            };
            match result {
                Ok(g) => {
                    let text = String::from_utf8_lossy(&vocab.decode(&g.tokens).unwrap()).into_owned();
                    r.tokens = g.tokens.len() as u32;
                    r.complete = g.complete;
                    r.truncated = g.truncated;
                    r.exact = g.complete && same_value(&text, &task.output);
                    r.simulations = g.simulations;
                    r.output = text;
                    r.mask_micros = g.mask_time.as_micros() as u64;
                    r.mask_calls = g.mask_calls;
                }
                Err(e) => r.error = e.to_string(),
            }
            r
        })
        .collect();
    Ok(EvalReport { records })
}

const KEYS: &[&str] = &["id", "name", "tags", "ok", "score", "items", "meta", "x", "count", "label"];
const WORDS: &[&str] = &["red", "blue", "alpha", "beta", "cat", "dog", "one", "two", "sun", "sky"];

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let k = if depth >= 2 { rng.random_range(0..4) } else { rng.random_range(0..6) };
    match k {
        0 => rng.random_range(0..1000).to_string(),
        1 => format!("\"{}\"", WORDS.choose(rng).unwrap()),
        2 => ["true", "false", "null"].choose(rng).unwrap().to_string(),
        3 => {
            let n = rng.random_range(-50..50);
            format!("{n}.{}", rng.random_range(1..10))
        }
        4 => {
            let n = rng.random_range(0..4);
            let items: Vec<String> = (0..n).map(|_| random_value(rng, depth + 1)).collect();
            format!("[{}]", items.join(","))
        }
        _ => random_object(rng, depth + 1),
    }
}

fn random_object(rng: &mut ChaCha8Rng, depth: u32) -> String {
    let n = rng.random_range(1..4);
    let mut keys: Vec<&str> = KEYS.choose_multiple(rng, n).copied().collect();
    keys.sort();
    let members: Vec<String> = keys
        .iter()
        .map(|k| format!("\"{k}\":{}", random_value(rng, depth)))
        .collect();
    format!("{{{}}}", members.join(","))
}

/// Compact random JSON objects with reference lengths under `vocab`.
pub fn synthetic_tasks(n: usize, seed: u64, vocab: &Vocabulary) -> Result<Vec<Task>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            Task {
                id: format!("t{i:04}"),
                prompt: format!("json {i}\n"),
                output: random_object(&mut rng, 0),
                l_gt: None,
            }
            .resolve(vocab)
        })
        .collect()
}

/// Training text for the n-gram model, one document per line.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n).map(|_| random_object(&mut rng, 0)).collect()
}

/// A JSON-flavoured vocabulary of exactly `n` tokens, eos included: every
/// printable ASCII byte plus whitespace, then common JSON fragments, then
/// digit and letter n-grams.
pub fn json_vocabulary(n: usize) -> Vocabulary {
    let mut toks: Vec<String> = (0x20u8..0x7f).map(|b| (b as char).to_string()).collect();
    toks.extend(["\n", "\t", "\r"].map(String::from));
    let mut extra: Vec<String> = [
        "{\"", "\"}", "\":", "\",", "\":\"", "\",\"", "\"]", "[\"", "[]", "{}", "true", "false", "null", "  ", "    ",
        "\n  ", "\n    ", ": ", ", ", "\": ", "\", \"", "},", "],", "}}", "]}", "\n}", "\n]", "},{", "0.", ".5",
    ]
    .map(String::from)
    .to_vec();
    for k in KEYS.iter().chain(WORDS) {
        extra.push(k.to_string());
        extra.push(format!("\"{k}\""));
        extra.push(format!("\"{k}\":"));
    }
    extra.extend((0..100).map(|i| format!("{i:02}")));
    let letters = b"abcdefghijklmnopqrstuvwxyz";
    for a in letters {
        for b in letters {
            extra.push(format!("{}{}", *a as char, *b as char));
        }
    }
    for a in letters {
        for b in letters {
            for c in letters {
                extra.push(format!("{}{}{}", *a as char, *b as char, *c as char));
            }
        }
    }
    for t in extra {
        if toks.len() + 1 >= n {
            break;
        }
        if !toks.contains(&t) {
            toks.push(t);
        }
    }
    toks.truncate(n.saturating_sub(1));
    Vocabulary::with_eos(toks).expect("non-empty vocabulary")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::models::Uniform;
    use crate::grammar::Grammar;

    #[test]
    fn ratio_budgets() {
        assert_eq!(BudgetPolicy::ratio(1.1).unwrap().budget(100), 110);
        assert_eq!(BudgetPolicy::ratio(1.1).unwrap().budget(10), 11);
        assert_eq!(BudgetPolicy::ratio(1.5).unwrap().budget(7), 10);
        assert_eq!(BudgetPolicy::ratio(1.0).unwrap().budget(0), 1);
        assert!(BudgetPolicy::ratio(0.9).is_err());
        assert!(BudgetPolicy::fixed(0).is_err());
    }

    #[test]
    fn vocabulary_sizes() {
        for n in [120, 150, 1000] {
            let v = json_vocabulary(n);
            assert_eq!(v.len(), n);
            assert_eq!(v.duplicates(), 0);
        }
    }

    #[test]
    fn synthetic_outputs_are_json() {
        let v = json_vocabulary(150);
        let tasks = synthetic_tasks(50, 1, &v).unwrap();
        for t in &tasks {
            assert!(crate::json::parse_json(&t.output).is_ok(), "{}", t.output);
            assert!(t.reference_len() >= 2);
        }
        assert_eq!(tasks, synthetic_tasks(50, 1, &v).unwrap());
        let text = write_tasks(&tasks);
        assert_eq!(parse_tasks(&text, &v).unwrap(), tasks);
        assert!(matches!(parse_tasks("{\"id\": 1}", &v), Err(EvalError::TaskFile { line: 1, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let v = json_vocabulary(150);
        let e = Engine::build(Grammar::json(), v.clone()).unwrap();
        let tasks = synthetic_tasks(4, 2, &v).unwrap();
        let cfg = EvalConfig {
            strategies: vec![Strategy::Greedy, Strategy::Beam(2)],
            policies: vec![BudgetPolicy::ratio(1.0).unwrap(), BudgetPolicy::ratio(1.5).unwrap()],
            modes: vec![Constraint::Full, Constraint::GrammarOnly],
        };
        let rep = run_eval(&e, &Uniform::new(v.len()), "uniform", &tasks, &cfg).unwrap();
        assert_eq!(rep.records.len(), 4 * 2 * 2 * 2);
        let csv = rep.to_csv().unwrap();
        let back = EvalReport::from_csv(&csv).unwrap();
        assert_eq!(back.aggregates(), rep.aggregates());
        assert_eq!(back.to_csv().unwrap(), csv);
        for a in rep.aggregates() {
            assert!(a.exact_pct <= a.syntax_pct);
            if a.mode == "full" {
                assert_eq!(a.syntax_pct, 100.0, "{a:?}");
            }
        }
    }
}
