use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use budget_gcg::decoding::models::{load_model, ModelError};
use budget_gcg::decoding::{decode, DecodeError, Strategy};
use budget_gcg::eval::{self, json_vocabulary, load_tasks, BudgetPolicy, EvalConfig, EvalError, Task};
use budget_gcg::grammar::{build_ll1_table, parse_grammar, Grammar, GrammarError, Ll1Error};
use budget_gcg::precompute::{load_cache, precompute, save_cache, CacheError};
use budget_gcg::runtime::{BuildError, Constraint, Engine, EngineError};
use budget_gcg::vocab::{load_vocabulary, VocabError, Vocabulary};

const OK: u8 = 0;
const INCOMPLETE: u8 = 1;
const GRAMMAR: u8 = 2;
const IO: u8 = 3;

#[derive(Parser)]
#[command(name = "budget-gcg", version, about = "Grammar-constrained decoding under a hard token budget")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the cost tables for a grammar and vocabulary and save them.
    Precompute {
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one output.
    Generate(GenerateArgs),
    /// Show the mask after a prefix, with the cost terms for every token.
    Mask {
        #[command(flatten)]
        src: Source,
        /// Text already generated; it is tokenized with the vocabulary.
        #[arg(long, default_value = "")]
        prefix: String,
        #[arg(long)]
        budget: u32,
    },
    /// Run every (task, strategy, ratio, mode) cell and report Syntax and Exact-match.
    Eval(EvalArgs),
    /// Write a synthetic JSON workload: grammar, vocabulary, tasks and an n-gram corpus.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 150)]
        vocab_size: usize,
        #[arg(long, default_value_t = 20)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Source {
    #[arg(long)]
    grammar: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Precomputed tables; built in memory when omitted.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct Modes {
    /// Grammar and budget (the default).
    #[arg(long)]
    full: bool,
    /// Grammar only; the budget term is dropped.
    #[arg(long)]
    grammar_only: bool,
    /// No mask at all.
    #[arg(long)]
    no_constraint: bool,
}

impl Modes {
    fn list(&self) -> Vec<Constraint> {
        let mut v = Vec::new();
        if self.full {
            v.push(Constraint::Full);
        }
        if self.grammar_only {
            v.push(Constraint::GrammarOnly);
        }
        if self.no_constraint {
            v.push(Constraint::Unconstrained);
        }
        if v.is_empty() {
            v.push(Constraint::Full);
        }
        v
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    src: Source,
    /// uniform | random | ngram:<corpus> | scripted:<file> | verbose-bias:<factor>
    #[arg(long, default_value = "uniform")]
    model: String,
    #[arg(long, conflicts_with = "prompt")]
    prompt_file: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    /// greedy | beam:<b> | mcts:<trials>,<c_puct>,<tau>
    #[arg(long, default_value = "greedy")]
    strategy: String,
    #[arg(long, conflicts_with = "ratio", required_unless_present = "ratio")]
    budget: Option<u32>,
    /// Expansion ratio; needs --ref-len.
    #[arg(long, requires = "ref_len")]
    ratio: Option<f64>,
    /// Reference length in tokens, eos included.
    #[arg(long)]
    ref_len: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    modes: Modes,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
    JsonLines,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    src: Source,
    #[arg(long, default_value = "uniform")]
    model: String,
    /// One JSON object per line: id, prompt, output and optionally l_gt.
    #[arg(long)]
    tasks: PathBuf,
    /// Repeat for several strategies.
    #[arg(long = "strategy", default_value = "greedy")]
    strategies: Vec<String>,
    /// Comma-separated expansion ratios.
    #[arg(long, value_delimiter = ',', conflicts_with = "budget")]
    ratio: Vec<f64>,
    /// Fixed budget for every task instead of ratios.
    #[arg(long)]
    budget: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    modes: Modes,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl std::fmt::Display) -> Failure {
        Failure {
            code,
            msg: msg.to_string(),
        }
    }
}

impl From<GrammarError> for Failure {
    fn from(e: GrammarError) -> Self {
        Failure::new(GRAMMAR, e)
    }
}

impl From<Ll1Error> for Failure {
    fn from(e: Ll1Error) -> Self {
        Failure::new(GRAMMAR, e)
    }
}

impl From<BuildError> for Failure {
    fn from(e: BuildError) -> Self {
        Failure::new(GRAMMAR, e)
    }
}

impl From<VocabError> for Failure {
    fn from(e: VocabError) -> Self {
        Failure::new(IO, format!("vocabulary: {e}"))
    }
}

impl From<CacheError> for Failure {
    fn from(e: CacheError) -> Self {
        Failure::new(IO, format!("cache: {e}"))
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::new(IO, format!("model: {e}"))
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = if matches!(e, EvalError::Policy(_)) { GRAMMAR } else { IO };
        Failure::new(code, e)
    }
}

impl From<DecodeError> for Failure {
    fn from(e: DecodeError) -> Self {
        Failure::new(INCOMPLETE, e)
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::new(INCOMPLETE, e)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(IO, format!("{}: {e}", path.display())))
}

fn load_grammar(path: &Path) -> Result<Grammar, Failure> {
    Ok(parse_grammar(&read(path)?)?)
}

fn load_vocab(path: &Path) -> Result<Vocabulary, Failure> {
    if !path.exists() {
        return Err(Failure::new(IO, format!("{}: no such file", path.display())));
    }
    Ok(load_vocabulary(path)?)
}

fn load_engine(src: &Source) -> Result<Arc<Engine>, Failure> {
    let g = load_grammar(&src.grammar)?;
    let v = load_vocab(&src.vocab)?;
    match &src.cache {
        Some(c) => {
            let table = build_ll1_table(&g)?;
            let costs = load_cache(c, &g, &v)?;
            Ok(Engine::new(g, table, costs, v)?)
        }
        None => Ok(Engine::build(g, v)?),
    }
}

fn parse_strategy(s: &str) -> Result<Strategy, Failure> {
    s.parse().map_err(|e: DecodeError| Failure::new(GRAMMAR, e))
}

fn cmd_precompute(grammar: &Path, vocab: &Path, out: &Path) -> Result<u8, Failure> {
    let g = load_grammar(grammar)?;
    let v = load_vocab(vocab)?;
    let t0 = Instant::now();
    let table = build_ll1_table(&g)?;
    let tables = precompute(&g, &table, &v).map_err(|e| Failure::new(GRAMMAR, e))?;
    let secs = t0.elapsed().as_secs_f64();
    save_cache(&tables, out)?;
    println!(
        "terminals={} automata={} pairs={} token_map_entries={} min_output_tokens={} vocab={} time={secs:.3}s",
        g.num_terminals(),
        tables.automata().len(),
        tables.num_pairs(),
        tables.token_map_entries(),
        tables.d(g.start()).add(budget_gcg::precompute::Cost(1)),
        v.len()
    );
    Ok(OK)
}

fn cmd_generate(a: &GenerateArgs) -> Result<u8, Failure> {
    let engine = load_engine(&a.src)?;
    let vocab = Arc::new(engine.vocab().clone());
    let model = load_model(&a.model, vocab.clone(), a.seed)?;
    let strategy = parse_strategy(&a.strategy)?;
    let prompt_text = match (&a.prompt_file, &a.prompt) {
        (Some(p), _) => read(p)?,
        (None, Some(t)) => t.clone(),
        (None, None) => String::new(),
    };
    let prompt = vocab
        .tokenize(prompt_text.as_bytes())
        .ok_or_else(|| Failure::new(IO, "prompt is not covered by the vocabulary"))?;
    let budget = match (a.budget, a.ratio) {
        (Some(n), _) => BudgetPolicy::fixed(n)?.budget(0),
        (None, Some(e)) => BudgetPolicy::ratio(e)?.budget(a.ref_len.unwrap_or(0)),
        (None, None) => unreachable!("clap requires one"),
    };
    let modes = a.modes.list();
    if modes.len() != 1 {
        return Err(Failure::new(GRAMMAR, "choose one of --full, --grammar-only, --no-constraint"));
    }
    let t0 = Instant::now();
    let state = engine.session_with(budget, modes[0])?;
    let g = decode(strategy, model.as_ref(), state, &prompt)?;
    let elapsed = t0.elapsed();
    println!("{}", String::from_utf8_lossy(&vocab.decode(&g.tokens).unwrap()));
    eprintln!(
        "tokens={} budget={budget} complete={} truncated={} simulations={} mask_ms={:.3} ms_per_token={:.3}",
        g.tokens.len(),
        g.complete,
        g.truncated,
        g.simulations,
        g.mean_mask_time().as_secs_f64() * 1000.0,
        elapsed.as_secs_f64() * 1000.0 / g.tokens.len().max(1) as f64
    );
    Ok(if g.complete { OK } else { INCOMPLETE })
}

fn cmd_mask(src: &Source, prefix: &str, budget: u32) -> Result<u8, Failure> {
    let engine = load_engine(src)?;
    let vocab = engine.vocab();
    let toks = vocab
        .tokenize(prefix.as_bytes())
        .ok_or_else(|| Failure::new(INCOMPLETE, "prefix is not covered by the vocabulary"))?;
    let mut s = engine.session_unchecked(budget, Constraint::Full)?;
    for t in &toks {
        s.force(*t)
            .map_err(|e| Failure::new(INCOMPLETE, format!("prefix does not lex or parse under the grammar: {e}")))?;
    }
    let reports = s.explain_mask()?;
    let g = engine.grammar();
    println!("prefix tokens: {}", toks.iter().map(|t| vocab.display(*t)).collect::<Vec<_>>().join(" "));
    println!("remainder: {:?}", String::from_utf8_lossy(s.remainder()));
    println!(
        "committed: {}",
        s.committed().iter().map(|t| g.terminal(*t).name.as_str()).collect::<Vec<_>>().join(" ")
    );
    println!(
        "stack: {}",
        s.stack_symbols().iter().map(|x| g.symbol_name(*x)).collect::<Vec<_>>().join(" ")
    );
    println!("budget: {budget}, generated: {}", s.generated());
    for r in reports {
        let verdict = if r.admitted { "admit" } else { "deny " };
        let tok = vocab.display(r.token);
        if r.token == vocab.eos() {
            println!("{verdict} {tok:<12} complete={}", s.is_complete());
            continue;
        }
        match &r.best {
            Some(v) => println!(
                "{verdict} {tok:<12} via {:<24} consumed={} completion={} dangling={} total={}",
                v.terminals.iter().map(|t| g.terminal(*t).name.as_str()).collect::<Vec<_>>().join(","),
                v.consumed,
                v.completion,
                v.dangling,
                v.total()
            ),
            None => println!("{verdict} {tok:<12} no accept sequence"),
        }
    }
    Ok(OK)
}

fn cmd_eval(a: &EvalArgs) -> Result<u8, Failure> {
    let engine = load_engine(&a.src)?;
    let vocab = Arc::new(engine.vocab().clone());
    let model = load_model(&a.model, vocab.clone(), a.seed)?;
    let tasks: Vec<Task> = load_tasks(&a.tasks, &vocab)?;
    let policies = match a.budget {
        Some(n) => vec![BudgetPolicy::fixed(n)?],
        None if a.ratio.is_empty() => vec![BudgetPolicy::ratio(1.1)?],
        None => a.ratio.iter().map(|e| BudgetPolicy::ratio(*e)).collect::<Result<_, _>>()?,
    };
    let cfg = EvalConfig {
        strategies: a.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<_, _>>()?,
        policies,
        modes: a.modes.list(),
    };
    let name = a.model.split(':').next().unwrap_or("model");
    let rep = eval::run_eval(&engine, model.as_ref(), name, &tasks, &cfg)?;
    let text = match a.format {
        Format::Text => rep.to_table(),
        Format::Csv => rep.to_csv()?,
        Format::JsonLines => rep.to_json_lines(),
    };
    match &a.out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(OK)
}

fn cmd_synth(dir: &Path, vocab_size: usize, tasks: usize, seed: u64) -> Result<u8, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::new(IO, format!("{}: {e}", dir.display())))?;
    let v = json_vocabulary(vocab_size);
    let ts = eval::synthetic_tasks(tasks, seed, &v)?;
    write(&dir.join("json.grammar"), budget_gcg::grammar::JSON_RFC8259)?;
    write(&dir.join("vocab.json"), &v.to_json())?;
    write(&dir.join("tasks.jsonl"), &eval::write_tasks(&ts))?;
    write(&dir.join("corpus.txt"), &(eval::synthetic_corpus(200, seed).join("\n") + "\n"))?;
    println!("wrote json.grammar, vocab.json ({} tokens), tasks.jsonl ({tasks} tasks), corpus.txt", v.len());
    Ok(OK)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Precompute { grammar, vocab, out } => cmd_precompute(grammar, vocab, out),
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Mask { src, prefix, budget } => cmd_mask(src, prefix, *budget),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Synth {
            out_dir,
            vocab_size,
            tasks,
            seed,
        } => cmd_synth(out_dir, *vocab_size, *tasks, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
