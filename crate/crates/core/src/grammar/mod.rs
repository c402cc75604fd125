//! Context-free grammars with regex-defined terminals.
//!
//! Grammar files hold one declaration per line (or per `;`):
//!
//! ```text
//! # comment
//! S: E ;
//! E: X | LP E RP ;
//! X: /x/ ;
//! LP: /\(/ ; RP: /\)/ ;
//! ```
//!
//! A declaration whose right-hand side is a `/regex/` declares a terminal;
//! anything else is a rule. Alternatives are separated by `|`; an empty
//! alternative or `ε` denotes the empty production. A rule may continue on
//! the next line when that line starts with `|`. The first rule declared is
//! the start symbol and terminal priority follows declaration order.

mod ll1;

use std::collections::HashMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::regex::{compile_regex, Dfa, RegexError};

pub use ll1::{build_ll1_table, Ll1Error, Ll1Table, TermSet};

pub type TerminalId = u32;
pub type NonterminalId = u32;
pub type ProductionId = u32;

/// The RFC 8259 JSON grammar bundled with the crate.
pub const JSON_RFC8259: &str = include_str!("../../grammars/json_rfc8259.grammar");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Terminal(TerminalId),
    Nonterminal(NonterminalId),
}

#[derive(Debug, Clone)]
pub struct Terminal {
    pub name: String,
    pub pattern: String,
    pub dfa: Dfa,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub lhs: NonterminalId,
    pub rhs: Vec<Symbol>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("grammar syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("undeclared symbol `{name}` at {line}:{col}")]
    Undeclared {
        name: String,
        line: usize,
        col: usize,
    },
    #[error("terminal `{name}` declared twice (line {line})")]
    DuplicateTerminal { name: String, line: usize },
    #[error("`{name}` declared both as a terminal and as a rule (line {line})")]
    SymbolKindClash { name: String, line: usize },
    #[error("terminal `{terminal}`: {source}")]
    Regex {
        terminal: String,
        #[source]
        source: RegexError,
    },
    #[error("terminal `{name}` matches the empty string (line {line})")]
    NullableTerminal { name: String, line: usize },
    #[error("grammar declares no rules")]
    NoRules,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    terminals: Vec<Terminal>,
    nonterminals: Vec<String>,
    productions: Vec<Production>,
    by_lhs: Vec<Vec<ProductionId>>,
    start: NonterminalId,
    source_hash: [u8; 32],
}

impl Grammar {
    pub fn terminals(&self) -> &[Terminal] {
        &self.terminals
    }

    pub fn terminal(&self, id: TerminalId) -> &Terminal {
        &self.terminals[id as usize]
    }

    pub fn num_terminals(&self) -> usize {
        self.terminals.len()
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn num_nonterminals(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn production(&self, id: ProductionId) -> &Production {
        &self.productions[id as usize]
    }

    pub fn productions_of(&self, nt: NonterminalId) -> &[ProductionId] {
        &self.by_lhs[nt as usize]
    }

    pub fn start(&self) -> NonterminalId {
        self.start
    }

    /// SHA-256 of the grammar source text.
    pub fn source_hash(&self) -> [u8; 32] {
        self.source_hash
    }

    pub fn terminal_id(&self, name: &str) -> Option<TerminalId> {
        self.terminals
            .iter()
            .position(|t| t.name == name)
            .map(|i| i as TerminalId)
    }

    pub fn nonterminal_id(&self, name: &str) -> Option<NonterminalId> {
        self.nonterminals
            .iter()
            .position(|n| n == name)
            .map(|i| i as NonterminalId)
    }

    pub fn symbol_name(&self, sym: Symbol) -> &str {
        match sym {
            Symbol::Terminal(t) => &self.terminals[t as usize].name,
            Symbol::Nonterminal(n) => &self.nonterminals[n as usize],
        }
    }

    pub fn render_production(&self, id: ProductionId) -> String {
        let p = &self.productions[id as usize];
        let rhs: Vec<&str> = p.rhs.iter().map(|s| self.symbol_name(*s)).collect();
        format!(
            "{}: {}",
            self.nonterminals[p.lhs as usize],
            if rhs.is_empty() {
                "ε".to_string()
            } else {
                rhs.join(" ")
            }
        )
    }

    /// Loads the bundled RFC 8259 JSON grammar.
    pub fn json() -> Grammar {
        parse_grammar(JSON_RFC8259).expect("bundled JSON grammar is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Regex(String),
    Colon,
    Pipe,
    Semi,
    Newline,
    Epsilon,
    Eof,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl Lexer<'_> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, col: usize, message: impl Into<String>) -> GrammarError {
        GrammarError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize, usize)>, GrammarError> {
        let mut out = Vec::new();
        loop {
            let (line, col) = (self.line, self.col);
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, line, col));
                return Ok(out);
            };
            match c {
                '\n' => {
                    self.bump();
                    out.push((Tok::Newline, line, col));
                }
                c if c.is_whitespace() => {
                    self.bump();
                }
                '#' => {
                    while self.chars.peek().is_some_and(|c| *c != '\n') {
                        self.bump();
                    }
                }
                ':' | '|' | ';' | 'ε' => {
                    self.bump();
                    out.push((
                        match c {
                            ':' => Tok::Colon,
                            '|' => Tok::Pipe,
                            ';' => Tok::Semi,
                            _ => Tok::Epsilon,
                        },
                        line,
                        col,
                    ));
                }
                '/' => {
                    self.bump();
                    let mut pat = String::new();
                    loop {
                        match self.bump() {
                            None | Some('\n') => {
                                return Err(self.err(line, col, "unterminated regex literal"))
                            }
                            Some('/') => break,
                            Some('\\') => match self.bump() {
                                Some('/') => pat.push('/'),
                                Some(e) => {
                                    pat.push('\\');
                                    pat.push(e);
                                }
                                None => {
                                    return Err(self.err(line, col, "unterminated regex literal"))
                                }
                            },
                            Some(ch) => pat.push(ch),
                        }
                    }
                    out.push((Tok::Regex(pat), line, col));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut name = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_alphanumeric() || c == '_' {
                            name.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push((Tok::Ident(name), line, col));
                }
                other => return Err(self.err(line, col, format!("unexpected character {other:?}"))),
            }
        }
    }
}

struct RawRule {
    name: String,
    alts: Vec<Vec<(String, usize, usize)>>,
}

/// Parses a grammar file into a [`Grammar`], compiling every terminal regex.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let toks = Lexer {
        chars: text.chars().peekable(),
        line: 1,
        col: 1,
    }
    .tokens()?;

    let mut terminals: Vec<Terminal> = Vec::new();
    let mut term_line: HashMap<String, usize> = HashMap::new();
    let mut rules: Vec<RawRule> = Vec::new();
    let mut rule_index: HashMap<String, usize> = HashMap::new();

    let mut i = 0;
    let skip_newlines = |i: &mut usize| {
        while toks[*i].0 == Tok::Newline {
            *i += 1;
        }
    };
    let syntax = |tok: &(Tok, usize, usize), msg: &str| GrammarError::Syntax {
        line: tok.1,
        col: tok.2,
        message: msg.to_string(),
    };

    loop {
        skip_newlines(&mut i);
        if toks[i].0 == Tok::Semi {
            i += 1;
            continue;
        }
        if toks[i].0 == Tok::Eof {
            break;
        }
        let (name, line) = match &toks[i] {
            (Tok::Ident(n), line, _) => (n.clone(), *line),
            t => return Err(syntax(t, "expected a declaration name")),
        };
        i += 1;
        if toks[i].0 != Tok::Colon {
            return Err(syntax(&toks[i], "expected ':'"));
        }
        i += 1;
        // optional blank lines between ':' and the body
        skip_newlines(&mut i);

        if let Tok::Regex(pat) = &toks[i].0 {
            let pat = pat.clone();
            i += 1;
            match toks[i].0 {
                Tok::Semi | Tok::Newline => i += 1,
                Tok::Eof => {}
                _ => return Err(syntax(&toks[i], "expected ';' after terminal regex")),
            }
            if term_line.contains_key(&name) {
                return Err(GrammarError::DuplicateTerminal { name, line });
            }
            if rule_index.contains_key(&name) {
                return Err(GrammarError::SymbolKindClash { name, line });
            }
            let dfa = compile_regex(&pat).map_err(|source| GrammarError::Regex {
                terminal: name.clone(),
                source,
            })?;
            if dfa.is_accepting(dfa.initial()) {
                return Err(GrammarError::NullableTerminal { name, line });
            }
            term_line.insert(name.clone(), line);
            terminals.push(Terminal {
                name,
                pattern: pat,
                dfa,
            });
            continue;
        }

        if term_line.contains_key(&name) {
            return Err(GrammarError::SymbolKindClash { name, line });
        }
        let mut alts = vec![Vec::new()];
        loop {
            match &toks[i] {
                (Tok::Ident(sym), l, c) => {
                    alts.last_mut().unwrap().push((sym.clone(), *l, *c));
                    i += 1;
                }
                (Tok::Epsilon, _, _) => i += 1,
                (Tok::Pipe, _, _) => {
                    alts.push(Vec::new());
                    i += 1;
                }
                (Tok::Semi, _, _) => {
                    i += 1;
                    break;
                }
                (Tok::Eof, _, _) => break,
                (Tok::Newline, _, _) => {
                    let mut j = i;
                    while toks[j].0 == Tok::Newline {
                        j += 1;
                    }
                    match toks[j].0 {
                        Tok::Pipe => i = j,
                        Tok::Semi => {
                            i = j + 1;
                            break;
                        }
                        _ => {
                            i = j;
                            break;
                        }
                    }
                }
                t => return Err(syntax(t, "unexpected token in rule body")),
            }
        }
        match rule_index.get(&name) {
            Some(&idx) => rules[idx].alts.extend(alts),
            None => {
                rule_index.insert(name.clone(), rules.len());
                rules.push(RawRule { name, alts });
            }
        }
    }

    if rules.is_empty() {
        return Err(GrammarError::NoRules);
    }

    let nonterminals: Vec<String> = rules.iter().map(|r| r.name.clone()).collect();
    let mut productions = Vec::new();
    let mut by_lhs = vec![Vec::new(); rules.len()];
    for (lhs, rule) in rules.iter().enumerate() {
        for alt in &rule.alts {
            let mut rhs = Vec::with_capacity(alt.len());
            for (sym, line, col) in alt {
                let s = if let Some(&nt) = rule_index.get(sym) {
                    Symbol::Nonterminal(nt as NonterminalId)
                } else if let Some(t) = terminals.iter().position(|t| &t.name == sym) {
                    Symbol::Terminal(t as TerminalId)
                } else {
                    return Err(GrammarError::Undeclared {
                        name: sym.clone(),
                        line: *line,
                        col: *col,
                    });
                };
                rhs.push(s);
            }
            by_lhs[lhs].push(productions.len() as ProductionId);
            productions.push(Production {
                lhs: lhs as NonterminalId,
                rhs,
            });
        }
    }

    Ok(Grammar {
        terminals,
        nonterminals,
        productions,
        by_lhs,
        start: 0,
        source_hash: Sha256::digest(text.as_bytes()).into(),
    })
}
