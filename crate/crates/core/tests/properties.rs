use std::collections::BTreeSet;
use std::sync::Arc;

use budget_gcg::decoding::models::{NGram, RandomModel, Uniform, VerboseBias};
use budget_gcg::decoding::{decode, softmax_prior, LanguageModel, MctsConfig, Strategy as Decoder};
use budget_gcg::eval::{json_vocabulary, run_eval, synthetic_corpus, synthetic_tasks, BudgetPolicy, EvalConfig, EvalReport};
use budget_gcg::grammar::{build_ll1_table, parse_grammar, Grammar, Symbol};
use budget_gcg::oracle::{brute_force_mask, brute_force_min_tokens, cfg_membership, OracleBudget};
use budget_gcg::precompute::{load_cache, precompute, save_cache, Cost};
use budget_gcg::regex::{compile_regex, dfa_concat, dfa_run};
use budget_gcg::runtime::{Constraint, Engine, EngineError, EngineState};
use budget_gcg::vocab::{TokenId, Vocabulary};
use proptest::prelude::*;
use proptest::sample::subsequence;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PAREN: &str = "S: E; E: X | LP E RP; X:/x/; LP:/\\(/; RP:/\\)/;";
const MINI_JSON: &str = "S: V; V: LB B | NUM | STR; B: RB | V T; T: RB | COMMA V T;
LB:/\\[/; RB:/\\]/; COMMA:/,/; NUM:/[0-9]+/; STR:/\"a*\"/;";
const PAREN_POOL: &[&str] = &["x", "(", ")", "(x", "x)", "))", "((", "(x)"];
const MINI_POOL: &[&str] = &["[", "]", ",", "1", "2", "\"", "a", "\"a\"", "[1", "1]", "],", ",1", "[]", "\"\"", "12"];

const PATTERNS: &[&str] = &["a", "ab*", "(a|b)c", "[a-c]+", "d?", "a*", "(ab)+", "b|cd", "[^a]", "c{2,3}"];

fn word() -> impl Strategy<Value = String> {
    proptest::collection::vec(prop::sample::select(vec!['a', 'b', 'c', 'd']), 0..=8)
        .prop_map(|cs| cs.into_iter().collect())
}

fn small_engine(src: &str, pool: &[&str], pick: &[usize]) -> Arc<Engine> {
    let mut toks: Vec<&str> = pick.iter().map(|i| pool[*i]).collect();
    toks.sort();
    toks.dedup();
    Engine::build(parse_grammar(src).unwrap(), Vocabulary::with_eos(toks).unwrap()).unwrap()
}

fn small_instance() -> impl Strategy<Value = (bool, Vec<usize>)> {
    (any::<bool>(), subsequence((0..15).collect::<Vec<usize>>(), 3..=7)).prop_map(|(paren, pick)| {
        if paren {
            (true, pick.into_iter().map(|i| i % PAREN_POOL.len()).collect())
        } else {
            (false, pick)
        }
    })
}

fn instance_engine(paren: bool, pick: &[usize]) -> Arc<Engine> {
    if paren {
        small_engine(PAREN, PAREN_POOL, pick)
    } else {
        small_engine(MINI_JSON, MINI_POOL, pick)
    }
}

fn admitted(state: &EngineState) -> Vec<TokenId> {
    match state.compute_mask() {
        Ok(m) => (0..m.len() as TokenId).filter(|t| m[*t as usize]).collect(),
        Err(EngineError::DeadSession { .. }) => Vec::new(),
        Err(e) => panic!("{e}"),
    }
}

/// Walks the engine's own mask with random choices; returns the visited states.
fn random_walk(engine: &Arc<Engine>, budget: u32, mode: Constraint, rng: &mut ChaCha8Rng) -> Vec<(Vec<TokenId>, EngineState)> {
    let mut state = engine.session_unchecked(budget, mode).unwrap();
    let mut tokens = Vec::new();
    let mut out = vec![(tokens.clone(), state.clone())];
    while !state.is_finished() && state.generated() < budget {
        let ok = admitted(&state);
        let Some(&t) = ok.choose(rng) else { break };
        state.advance(t).unwrap();
        tokens.push(t);
        out.push((tokens.clone(), state.clone()));
    }
    out
}

fn json_engine() -> Arc<Engine> {
    Engine::build(Grammar::json(), json_vocabulary(150)).unwrap()
}

fn nullable_fixpoint(g: &Grammar) -> Vec<bool> {
    let mut n = vec![false; g.num_nonterminals()];
    loop {
        let mut changed = false;
        for p in g.productions() {
            if !n[p.lhs as usize] && p.rhs.iter().all(|s| matches!(s, Symbol::Nonterminal(b) if n[*b as usize])) {
                n[p.lhs as usize] = true;
                changed = true;
            }
        }
        if !changed {
            return n;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dfa_is_total(pi in 0..PATTERNS.len(), s in word()) {
        let d = compile_regex(PATTERNS[pi]).unwrap();
        let mut q = d.initial();
        for b in s.bytes() {
            q = d.next(q, b);
            prop_assert!((q as usize) < d.num_states());
        }
    }

    #[test]
    fn concat_matches_some_split(ai in 0..PATTERNS.len(), bi in 0..PATTERNS.len(), s in word()) {
        let (a, b) = (compile_regex(PATTERNS[ai]).unwrap(), compile_regex(PATTERNS[bi]).unwrap());
        let ab = dfa_concat(&a, &b).unwrap();
        let s = s.as_bytes();
        let split = (0..=s.len()).any(|k| a.matches(&s[..k]) && b.matches(&s[k..]));
        prop_assert_eq!(ab.matches(s), split);
    }

    #[test]
    fn run_composes(pi in 0..PATTERNS.len(), u in word(), v in word(), start in 0usize..8) {
        let d = compile_regex(PATTERNS[pi]).unwrap();
        let q = (start % d.num_states()) as _;
        let uv = format!("{u}{v}");
        prop_assert_eq!(dfa_run(&d, q, uv.as_bytes()), dfa_run(&d, dfa_run(&d, q, u.as_bytes()), v.as_bytes()));
    }

    #[test]
    fn decode_is_homomorphic(u in proptest::collection::vec(0u32..150, 0..12), v in proptest::collection::vec(0u32..150, 0..12)) {
        let voc = json_vocabulary(150);
        let eos = voc.eos();
        let u: Vec<TokenId> = u.into_iter().filter(|t| *t != eos).collect();
        let v: Vec<TokenId> = v.into_iter().filter(|t| *t != eos).collect();
        let mut whole = voc.decode(&u).unwrap();
        whole.extend(voc.decode(&v).unwrap());
        prop_assert_eq!(voc.decode(&[u.clone(), v].concat()).unwrap(), whole);
    }

    #[test]
    fn softmax_is_a_distribution(
        probs in proptest::collection::vec(0.0f64..1.0, 1..40),
        seed in any::<u64>(),
        tau in 0.1f64..5.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Vec<bool> = probs.iter().map(|_| rng.random_bool(0.5)).collect();
        let k = rng.random_range(0..mask.len());
        mask[k] = true;
        let p = softmax_prior(&probs, &mask, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().zip(&mask).all(|(x, m)| *m || *x == 0.0));
    }
}

#[test]
fn ll1_parser_agrees_with_membership() {
    let g = parse_grammar(PAREN).unwrap();
    let v = Vocabulary::with_eos(["x", "(", ")"]).unwrap();
    let engine = Engine::build(g.clone(), v).unwrap();
    let mut strings = vec![String::new()];
    for len in 1..=6 {
        let mut next = Vec::new();
        for s in strings.iter().filter(|s| s.len() == len - 1) {
            for c in ["x", "(", ")"] {
                next.push(format!("{s}{c}"));
            }
        }
        strings.extend(next);
    }
    for s in &strings {
        let ids = engine.vocab().tokenize(s.as_bytes()).unwrap();
        let parsed = match engine.replay(64, Constraint::GrammarOnly, &ids) {
            Ok(st) => st.is_complete(),
            Err(_) => false,
        };
        assert_eq!(parsed, cfg_membership(&g, s.as_bytes(), 64).unwrap(), "{s:?}");
    }
}

#[test]
fn nullable_is_the_closure() {
    let sources = [
        PAREN,
        MINI_JSON,
        "S: A B C; A: | X; B: Y A; C: Z | ; X:/x/; Y:/y/; Z:/z/;",
        "S: A C; A: | X; C: Z | ; X:/x/; Z:/z/;",
        "S: L; L: | E L; E: X | P; P: LP L RP; X:/x/; LP:/\\(/; RP:/\\)/;",
    ];
    for src in sources {
        let g = parse_grammar(src).unwrap();
        let t = build_ll1_table(&g).unwrap();
        assert_eq!(t.nullable(), &nullable_fixpoint(&g)[..], "{src}");
    }
    let g = Grammar::json();
    assert_eq!(build_ll1_table(&g).unwrap().nullable(), &nullable_fixpoint(&g)[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cost_tables_are_consistent((paren, pick) in small_instance()) {
        let engine = instance_engine(paren, &pick);
        let (g, v, costs) = (engine.grammar(), engine.vocab(), engine.costs());
        for a in costs.automata() {
            for q in 0..a.dfa.num_states() as u32 {
                // token map is the DFA run, restricted to live results
                for t in 0..v.len() as TokenId {
                    if t == v.eos() {
                        continue;
                    }
                    let r = dfa_run(&a.dfa, q, v.token(t));
                    let live = r != 0 && (a.dfa.is_accepting(r) || a.dfa.has_live_successor(r));
                    prop_assert_eq!(a.token_map.get(q, t), live.then_some(r));
                    if let Some(r) = a.token_map.get(q, t) {
                        prop_assert!(a.cost[q as usize] <= Cost(1).add(a.cost[r as usize]));
                    }
                }
                prop_assert_eq!(a.cost[q as usize], brute_force_min_tokens(&a.dfa, v, q).unwrap());
            }
        }
        let d = costs.d_table();
        for p in g.productions() {
            let sum = p.rhs.iter().fold(Cost::ZERO, |acc, s| acc.add(costs.symbol_cost(*s)));
            prop_assert!(d[p.lhs as usize] <= sum);
        }
    }

    #[test]
    fn admitted_tokens_have_witnesses((paren, pick) in small_instance(), n_max in 2u32..=6, seed in any::<u64>()) {
        let engine = instance_engine(paren, &pick);
        let g = engine.grammar().clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walk = random_walk(&engine, n_max, Constraint::Full, &mut rng);
        for (prefix, state) in &walk {
            if state.is_finished() {
                continue;
            }
            let Ok(ours) = state.compute_mask() else { continue };
            let oracle = brute_force_mask(&g, engine.vocab(), prefix, n_max, &OracleBudget::default()).unwrap();
            for t in 0..ours.len() {
                prop_assert!(!ours[t] || oracle[t], "token {} after {:?}", t, prefix);
            }
        }
    }

    #[test]
    fn widening_the_budget_only_adds((paren, pick) in small_instance(), n_max in 1u32..=5, seed in any::<u64>()) {
        let engine = instance_engine(paren, &pick);
        let g = engine.grammar();
        let v = engine.vocab();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(0..3);
        let prefix: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..v.len() as TokenId)).filter(|t| *t != v.eos()).collect();
        let budget = OracleBudget::default();
        let small = brute_force_mask(g, v, &prefix, n_max, &budget).unwrap();
        let big = brute_force_mask(g, v, &prefix, n_max + 1, &budget).unwrap();
        prop_assert!(small.iter().zip(&big).all(|(s, b)| !s || *b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn walks_never_dead_end(seed in any::<u64>(), budget in 1u32..60, grammar_only in any::<bool>()) {
        let engine = json_engine();
        let mode = if grammar_only { Constraint::GrammarOnly } else { Constraint::Full };
        let feasible = engine.session_with(budget, mode).is_ok();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let walk = random_walk(&engine, budget, mode, &mut rng);
        let (tokens, last) = walk.last().unwrap();
        if feasible && mode == Constraint::Full {
            prop_assert!(last.is_finished(), "stuck after {:?}", tokens);
            prop_assert!(last.is_complete());
            prop_assert!(tokens.len() as u32 <= budget);
            prop_assert_eq!(*tokens.last().unwrap(), engine.vocab().eos());
        }
        if last.is_finished() {
            prop_assert!(last.is_complete());
        }
    }

    #[test]
    fn replay_matches_incremental(seed in any::<u64>(), budget in 1u32..40, mode in 0usize..3) {
        let engine = json_engine();
        let mode = [Constraint::Full, Constraint::GrammarOnly, Constraint::Unconstrained][mode];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (tokens, state) in random_walk(&engine, budget, mode, &mut rng) {
            let batch = engine.replay(budget, mode, &tokens).unwrap();
            prop_assert!(batch == state, "differs after {:?}", tokens);
        }
    }
}

fn models(vocab: &Vocabulary, seed: u64) -> Vec<(&'static str, Box<dyn LanguageModel>)> {
    let n = vocab.len();
    let corpus = synthetic_corpus(40, seed);
    vec![
        ("uniform", Box::new(Uniform::new(n))),
        ("random", Box::new(RandomModel::new(n, seed))),
        ("ngram", Box::new(NGram::train(vocab, corpus.iter().map(String::as_str)).unwrap())),
        ("verbose", Box::new(VerboseBias::new(Box::new(RandomModel::new(n, seed)), vocab, 20.0))),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn decoders_finish_within_budget(seed in any::<u64>(), budget in 4u32..48, which in 0usize..3) {
        let engine = json_engine();
        let strategy = [
            Decoder::Greedy,
            Decoder::Beam(4),
            Decoder::Mcts(MctsConfig { trials: 3, ..MctsConfig::default() }),
        ][which].clone();
        let prompt = engine.vocab().tokenize(b"json 1\n").unwrap();
        for (name, model) in models(engine.vocab(), seed) {
            let Ok(state) = engine.session(budget) else { continue };
            let a = decode(strategy.clone(), model.as_ref(), state.clone(), &prompt).unwrap();
            prop_assert!(a.complete, "{} {} budget {}", name, strategy, budget);
            prop_assert!(a.tokens.len() as u32 <= budget);
            let b = decode(strategy.clone(), model.as_ref(), state, &prompt).unwrap();
            prop_assert_eq!(&a.tokens, &b.tokens);
            prop_assert_eq!(a.simulations, b.simulations);
        }
    }

    #[test]
    fn beam_of_one_is_greedy(seed in any::<u64>(), budget in 4u32..48) {
        let engine = json_engine();
        for (_, model) in models(engine.vocab(), seed) {
            let Ok(state) = engine.session(budget) else { continue };
            let g = decode(Decoder::Greedy, model.as_ref(), state.clone(), &[]).unwrap();
            let b = decode(Decoder::Beam(1), model.as_ref(), state, &[]).unwrap();
            prop_assert_eq!(g.tokens, b.tokens);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn reports_round_trip(seed in any::<u64>(), e in 1.0f64..1.6) {
        let engine = json_engine();
        let tasks = synthetic_tasks(6, seed, engine.vocab()).unwrap();
        let model = RandomModel::new(engine.vocab().len(), seed);
        let cfg = EvalConfig {
            strategies: vec![Decoder::Greedy, Decoder::Beam(2)],
            policies: vec![BudgetPolicy::ratio(e).unwrap()],
            modes: vec![Constraint::Full, Constraint::GrammarOnly, Constraint::Unconstrained],
        };
        let report = run_eval(&engine, &model, "random", &tasks, &cfg).unwrap();
        prop_assert!(report.exact_pct() <= report.syntax_pct());
        for a in report.aggregates() {
            prop_assert!(a.exact_pct <= a.syntax_pct);
        }
        let back = EvalReport::from_csv(&report.to_csv().unwrap()).unwrap();
        prop_assert_eq!(back.aggregates(), report.aggregates());
        prop_assert_eq!(back.to_csv().unwrap(), report.to_csv().unwrap());
    }

    #[test]
    fn cache_round_trips((paren, pick) in small_instance()) {
        let engine = instance_engine(paren, &pick);
        let (g, v) = (engine.grammar(), engine.vocab());
        let tables = precompute(g, &build_ll1_table(g).unwrap(), v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.cache");
        save_cache(&tables, &path).unwrap();
        prop_assert_eq!(&load_cache(&path, g, v).unwrap(), &tables);
        let other: BTreeSet<&str> = ["x", "("].into();
        let other = Vocabulary::with_eos(other).unwrap();
        if other.content_hash() != v.content_hash() {
            prop_assert!(load_cache(&path, g, &other).is_err());
        }
    }
}
