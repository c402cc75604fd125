use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use budget_gcg::eval::EvalReport;
use budget_gcg::oracle::{brute_force_mask, OracleBudget};
use tempfile::TempDir;

const PAREN: &str = "S: E; E: X | LP E RP; X:/x/; LP:/\\(/; RP:/\\)/;";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_budget-gcg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Work {
        let w = Work { dir: TempDir::new().unwrap() };
        std::fs::write(w.p("paren.grammar"), PAREN).unwrap();
        std::fs::write(w.p("paren.json"), r#"{"tokens": ["x", "(", ")", "(x"], "eos": 4}"#).unwrap();
        let o = run(&["synth", "--out-dir", w.s(""), "--tasks", "20", "--seed", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
        w
    }

    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> &str {
        let p: &Path = self.dir.path();
        Box::leak(p.join(name).to_string_lossy().into_owned().into_boxed_str())
    }

    fn json(&self) -> Vec<&str> {
        vec!["--grammar", self.s("json.grammar"), "--vocab", self.s("vocab.json")]
    }

    fn paren(&self) -> Vec<&str> {
        vec!["--grammar", self.s("paren.grammar"), "--vocab", self.s("paren.json")]
    }
}

fn stat(line: &str, key: &str) -> String {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing in {line}"))
        .to_string()
}

#[test]
fn precompute_writes_cache() {
    let w = Work::new();
    let mut args = vec!["precompute"];
    args.extend(w.json());
    args.extend(["--out", w.s("json.cache")]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("terminals=12"));
    assert!(w.p("json.cache").exists());

    // the cache is used by generate, and rejected for another vocabulary
    let o = run(&[
        "generate", "--grammar", w.s("json.grammar"), "--vocab", w.s("vocab.json"), "--cache", w.s("json.cache"),
        "--budget", "12",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&[
        "generate", "--grammar", w.s("json.grammar"), "--vocab", w.s("paren.json"), "--cache", w.s("json.cache"),
        "--budget", "12",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("cache"));
}

#[test]
fn precompute_errors() {
    let w = Work::new();
    std::fs::write(w.p("bad.grammar"), "S: A | A B; A:/a/; B:/b/;").unwrap();
    let o = run(&["precompute", "--grammar", w.s("bad.grammar"), "--vocab", w.s("paren.json"), "--out", w.s("x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conflict"), "{}", stderr(&o));

    let mut args = vec!["precompute"];
    args.extend(w.paren());
    args.extend(["--out", w.s("missing/dir/t.cache")]);
    assert_eq!(run(&args).status.code(), Some(3));

    let o = run(&["precompute", "--grammar", w.s("nope.grammar"), "--vocab", w.s("paren.json"), "--out", w.s("x")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn generate_paren_uniform() {
    let w = Work::new();
    let mut args = vec!["generate"];
    args.extend(w.paren());
    args.extend(["--model", "uniform", "--strategy", "greedy", "--budget", "4", "--seed", "7"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(stat(&err, "complete"), "true");
    assert!(stat(&err, "tokens").parse::<u32>().unwrap() <= 4);
    let text = stdout(&o);
    assert!(["x", "(x)", "((x))"].contains(&text.trim_end()), "{text}");
}

#[test]
fn generate_mcts_and_ratio() {
    let w = Work::new();
    let mut args = vec!["generate"];
    args.extend(w.json());
    let corpus = format!("ngram:{}", w.s("corpus.txt"));
    args.extend(["--model", &corpus, "--strategy", "mcts:20,5,2", "--ratio", "1.1", "--ref-len", "100"]);
    let o = run(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(stat(&err, "budget"), "110");
    let tokens: u64 = stat(&err, "tokens").parse().unwrap();
    assert!(tokens <= 110);
    assert_eq!(stat(&err, "simulations").parse::<u64>().unwrap(), 20 * tokens);
}

#[test]
fn generate_rejects_bad_flags() {
    let w = Work::new();
    let mut args = vec!["generate"];
    args.extend(w.paren());
    args.extend(["--budget", "4", "--strategy", "sample"]);
    assert_ne!(run(&args).status.code(), Some(0));
    let mut args = vec!["generate"];
    args.extend(w.paren());
    args.extend(["--budget", "4", "--model", "gpt"]);
    assert_eq!(run(&args).status.code(), Some(3));
}

#[test]
fn mask_dumps() {
    let w = Work::new();
    let mut args = vec!["mask"];
    args.extend(w.json());
    args.extend(["--prefix", "[\"keyword", "--budget", "30"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("remainder: \"\\\"keyword\""), "{out}");
    assert!(out.contains("via STRING"));
    assert!(out.contains("completion="));

    // empty prefix with budget 1: everything denied, as the oracle says
    let mut args = vec!["mask"];
    args.extend(w.paren());
    args.extend(["--budget", "1"]);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let g = budget_gcg::grammar::parse_grammar(PAREN).unwrap();
    let v = budget_gcg::vocab::Vocabulary::with_eos(["x", "(", ")", "(x"]).unwrap();
    let oracle = brute_force_mask(&g, &v, &[], 1, &OracleBudget::default()).unwrap();
    assert!(oracle.iter().all(|b| !b));
    assert_eq!(out.lines().filter(|l| l.starts_with("deny")).count(), 5);
    assert!(out.contains("total=2"), "{out}");

    // completed prefix: only eos
    let mut args = vec!["mask"];
    args.extend(w.paren());
    args.extend(["--prefix", "(x)", "--budget", "6"]);
    let out = stdout(&run(&args));
    let admitted: Vec<&str> = out.lines().filter(|l| l.starts_with("admit")).collect();
    assert_eq!(admitted.len(), 1);
    assert!(admitted[0].contains("<eos>"));

    let mut args = vec!["mask"];
    args.extend(w.paren());
    args.extend(["--prefix", ")", "--budget", "6"]);
    assert_eq!(run(&args).status.code(), Some(1));
}

fn eval_csv(w: &Work, extra: &[&str]) -> EvalReport {
    let mut args = vec!["eval"];
    args.extend(w.json());
    args.extend(["--tasks", w.s("tasks.jsonl"), "--format", "csv"]);
    args.extend(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    EvalReport::from_csv(&stdout(&o)).unwrap()
}

#[test]
fn eval_syntax_and_baselines() {
    let w = Work::new();
    let ours = eval_csv(&w, &["--model", "random", "--strategy", "greedy", "--ratio", "1.1", "--full"]);
    assert_eq!(ours.records.len(), 20);
    assert_eq!(ours.syntax_pct(), 100.0);
    assert!(ours.exact_pct() <= ours.syntax_pct());

    let verbose = ["--model", "verbose-bias:20", "--strategy", "greedy", "--ratio", "1.1"];
    let go = eval_csv(&w, &[&verbose[..], &["--grammar-only"]].concat());
    assert!(go.syntax_pct() < 100.0);
    assert_eq!(eval_csv(&w, &[&verbose[..], &["--full"]].concat()).syntax_pct(), 100.0);

    // a budget that never binds makes both modes agree token for token
    let both = eval_csv(&w, &["--model", "random", "--ratio", "20", "--full", "--grammar-only"]);
    for pair in both.records.chunks(2) {
        assert_eq!(pair[0].mode, "full");
        assert_eq!(pair[1].mode, "grammar-only");
        assert_eq!(pair[0].output, pair[1].output);
    }
}

#[test]
fn eval_is_reproducible() {
    let w = Work::new();
    let mut args = vec!["eval"];
    args.extend(w.json());
    args.extend([
        "--tasks", w.s("tasks.jsonl"), "--model", "random", "--seed", "9", "--strategy", "beam:3", "--strategy",
        "mcts:4,5,2", "--ratio", "1.0,1.3", "--format", "csv",
    ]);
    let a = run(&[&args[..], &["--out", w.s("a.csv")]].concat());
    let b = run(&[&args[..], &["--out", w.s("b.csv")]].concat());
    assert!(a.status.success() && b.status.success());
    let (a, b) = (std::fs::read(w.p("a.csv")).unwrap(), std::fs::read(w.p("b.csv")).unwrap());
    assert!(!a.is_empty());
    assert_eq!(a, b);

    let o = run(&["eval", "--grammar", w.s("json.grammar"), "--vocab", w.s("vocab.json"), "--tasks", w.s("none.jsonl")]);
    assert_eq!(o.status.code(), Some(3));
}
