//! Parser for the supported regex subset.
//!
//! Patterns are compiled at byte granularity: a non-ASCII literal becomes the
//! sequence of its UTF-8 bytes and negated classes complement over `0..=255`.

use super::RegexError;

/// A set of bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ByteSet([u64; 4]);

impl ByteSet {
    pub fn empty() -> Self {
        ByteSet([0; 4])
    }

    pub fn full() -> Self {
        ByteSet([u64::MAX; 4])
    }

    pub fn single(b: u8) -> Self {
        let mut s = Self::empty();
        s.insert(b);
        s
    }

    pub fn range(lo: u8, hi: u8) -> Self {
        let mut s = Self::empty();
        for b in lo..=hi {
            s.insert(b);
        }
        s
    }

    pub fn insert(&mut self, b: u8) {
        self.0[(b >> 6) as usize] |= 1 << (b & 63);
    }

    pub fn contains(&self, b: u8) -> bool {
        self.0[(b >> 6) as usize] & (1 << (b & 63)) != 0
    }

    pub fn union(&self, other: &ByteSet) -> ByteSet {
        let mut out = *self;
        for i in 0..4 {
            out.0[i] |= other.0[i];
        }
        out
    }

    pub fn complement(&self) -> ByteSet {
        let mut out = *self;
        for w in &mut out.0 {
            *w = !*w;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        (0..=255u8).filter(move |b| self.contains(*b))
    }
}

impl std::fmt::Debug for ByteSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ByteSet(")?;
        let mut first = true;
        for b in self.iter() {
            if !first {
                write!(f, ",")?;
            }
            first = false;
            write!(f, "{:?}", b as char)?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ast {
    /// Matches the empty string.
    Empty,
    Class(ByteSet),
    Concat(Vec<Ast>),
    Alt(Vec<Ast>),
    Repeat {
        inner: Box<Ast>,
        min: u32,
        max: Option<u32>,
    },
}

const MAX_REPEAT: u32 = 1000;

pub fn parse(pattern: &str) -> Result<Ast, RegexError> {
    let mut p = Parser {
        src: pattern,
        chars: pattern.char_indices().collect(),
        pos: 0,
    };
    let ast = p.alternation()?;
    if p.pos < p.chars.len() {
        // only an unbalanced ')' can stop the top-level alternation early
        return Err(p.error("unbalanced ')'"));
    }
    Ok(ast)
}

struct Parser<'a> {
    src: &'a str,
    chars: Vec<(usize, char)>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn peek_at(&self, k: usize) -> Option<char> {
        self.chars.get(self.pos + k).map(|(_, c)| *c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|(i, _)| *i)
            .unwrap_or(self.src.len())
    }

    fn error(&self, msg: &str) -> RegexError {
        RegexError::Syntax {
            pattern: self.src.to_string(),
            offset: self.offset(),
            message: msg.to_string(),
        }
    }

    fn unsupported(&self, construct: &str) -> RegexError {
        RegexError::Unsupported {
            pattern: self.src.to_string(),
            construct: construct.to_string(),
        }
    }

    fn alternation(&mut self) -> Result<Ast, RegexError> {
        let mut alts = vec![self.concat()?];
        while self.peek() == Some('|') {
            self.bump();
            alts.push(self.concat()?);
        }
        Ok(if alts.len() == 1 {
            alts.pop().unwrap()
        } else {
            Ast::Alt(alts)
        })
    }

    fn concat(&mut self) -> Result<Ast, RegexError> {
        let mut items = Vec::new();
        while let Some(c) = self.peek() {
            if c == '|' || c == ')' {
                break;
            }
            let atom = self.atom()?;
            let atom = self.quantifiers(atom)?;
            items.push(atom);
        }
        Ok(match items.len() {
            0 => Ast::Empty,
            1 => items.pop().unwrap(),
            _ => Ast::Concat(items),
        })
    }

    fn quantifiers(&mut self, mut atom: Ast) -> Result<Ast, RegexError> {
        loop {
            let (min, max) = match self.peek() {
                Some('*') => {
                    self.bump();
                    (0, None)
                }
                Some('+') => {
                    self.bump();
                    (1, None)
                }
                Some('?') => {
                    self.bump();
                    (0, Some(1))
                }
                Some('{') if self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) => {
                    self.bump();
                    self.counted()?
                }
                _ => return Ok(atom),
            };
            match self.peek() {
                Some('?') => return Err(self.unsupported("lazy quantifier")),
                Some('+') => return Err(self.unsupported("possessive quantifier")),
                _ => {}
            }
            atom = Ast::Repeat {
                inner: Box::new(atom),
                min,
                max,
            };
        }
    }

    fn number(&mut self) -> Result<u32, RegexError> {
        let mut n: u32 = 0;
        let mut any = false;
        while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
            self.bump();
            any = true;
            n = n
                .checked_mul(10)
                .and_then(|n| n.checked_add(c as u32 - '0' as u32))
                .ok_or_else(|| self.error("repetition count overflow"))?;
        }
        if !any {
            return Err(self.error("expected a number"));
        }
        Ok(n)
    }

    fn counted(&mut self) -> Result<(u32, Option<u32>), RegexError> {
        let min = self.number()?;
        let max = if self.peek() == Some(',') {
            self.bump();
            if self.peek() == Some('}') {
                None
            } else {
                Some(self.number()?)
            }
        } else {
            Some(min)
        };
        if self.bump() != Some('}') {
            return Err(self.error("unterminated counted repetition"));
        }
        if min > MAX_REPEAT || max.is_some_and(|m| m > MAX_REPEAT || m < min) {
            return Err(self.error("invalid repetition bounds"));
        }
        Ok((min, max))
    }

    fn atom(&mut self) -> Result<Ast, RegexError> {
        let c = self.bump().ok_or_else(|| self.error("unexpected end"))?;
        match c {
            '(' => {
                if self.peek() == Some('?') {
                    self.bump();
                    match self.bump() {
                        Some(':') => {}
                        Some('=') | Some('!') => return Err(self.unsupported("lookahead")),
                        Some('<') => return Err(self.unsupported("lookbehind or named group")),
                        _ => return Err(self.unsupported("group flags")),
                    }
                }
                let inner = self.alternation()?;
                if self.bump() != Some(')') {
                    return Err(self.error("unclosed group"));
                }
                Ok(inner)
            }
            '[' => self.class(),
            '.' => Ok(Ast::Class(ByteSet::single(b'\n').complement())),
            '\\' => match self.escape(false)? {
                Escaped::Set(s) => Ok(Ast::Class(s)),
                Escaped::Char(ch) => Ok(literal(ch)),
                Escaped::Byte(b) => Ok(Ast::Class(ByteSet::single(b))),
            },
            '^' | '$' => Err(self.unsupported("anchor")),
            '*' | '+' | '?' => Err(self.error("quantifier without operand")),
            '{' if self.peek().is_some_and(|c| c.is_ascii_digit()) => {
                Err(self.error("quantifier without operand"))
            }
            other => Ok(literal(other)),
        }
    }

    fn escape(&mut self, in_class: bool) -> Result<Escaped, RegexError> {
        let c = self.bump().ok_or_else(|| self.error("dangling escape"))?;
        let set = |s: ByteSet| Ok(Escaped::Set(s));
        match c {
            'n' => Ok(Escaped::Char('\n')),
            't' => Ok(Escaped::Char('\t')),
            'r' => Ok(Escaped::Char('\r')),
            'f' => Ok(Escaped::Char('\x0c')),
            'v' => Ok(Escaped::Char('\x0b')),
            '0' => Ok(Escaped::Char('\0')),
            'd' => set(digits()),
            'D' => set(digits().complement()),
            'w' => set(word()),
            'W' => set(word().complement()),
            's' => set(space()),
            'S' => set(space().complement()),
            'x' => {
                let hi = self.hex_digit()?;
                let lo = self.hex_digit()?;
                Ok(Escaped::Byte((hi << 4) | lo))
            }
            'u' => {
                let mut v: u32 = 0;
                for _ in 0..4 {
                    v = (v << 4) | self.hex_digit()? as u32;
                }
                let ch = char::from_u32(v).ok_or_else(|| self.error("invalid \\u escape"))?;
                Ok(Escaped::Char(ch))
            }
            'b' if in_class => Ok(Escaped::Char('\x08')),
            'b' | 'B' => Err(self.unsupported("word boundary")),
            'A' | 'z' | 'Z' => Err(self.unsupported("anchor")),
            'p' | 'P' => Err(self.unsupported("unicode property class")),
            '1'..='9' => Err(self.unsupported("backreference")),
            c if c.is_ascii_punctuation() || c == ' ' => Ok(Escaped::Char(c)),
            _ => Err(self.unsupported(&format!("escape \\{c}"))),
        }
    }

    fn hex_digit(&mut self) -> Result<u8, RegexError> {
        let c = self.bump().ok_or_else(|| self.error("truncated hex escape"))?;
        c.to_digit(16)
            .map(|d| d as u8)
            .ok_or_else(|| self.error("invalid hex digit"))
    }

    fn class_char(&mut self) -> Result<Escaped, RegexError> {
        match self.bump() {
            None => Err(self.error("unclosed character class")),
            Some('\\') => self.escape(true),
            Some('[') if self.peek() == Some(':') => Err(self.unsupported("POSIX class")),
            Some(c) => Ok(Escaped::Char(c)),
        }
    }

    fn class(&mut self) -> Result<Ast, RegexError> {
        let negated = self.peek() == Some('^');
        if negated {
            self.bump();
        }
        let mut set = ByteSet::empty();
        let mut first = true;
        loop {
            match self.peek() {
                None => return Err(self.error("unclosed character class")),
                Some(']') if !first => {
                    self.bump();
                    break;
                }
                _ => {}
            }
            first = false;
            let lo = self.class_char()?;
            let is_range = self.peek() == Some('-') && self.peek_at(1).is_some_and(|c| c != ']');
            match lo {
                Escaped::Set(s) => {
                    if is_range {
                        return Err(self.error("class escape cannot start a range"));
                    }
                    set = set.union(&s);
                }
                Escaped::Char(_) | Escaped::Byte(_) => {
                    let lo = self.class_byte(lo)?;
                    if is_range {
                        self.bump();
                        let hi = match self.class_char()? {
                            Escaped::Set(_) => {
                                return Err(self.error("class escape cannot end a range"))
                            }
                            hi => self.class_byte(hi)?,
                        };
                        if hi < lo {
                            return Err(self.error("inverted class range"));
                        }
                        set = set.union(&ByteSet::range(lo, hi));
                    } else {
                        set.insert(lo);
                    }
                }
            }
        }
        Ok(Ast::Class(if negated { set.complement() } else { set }))
    }

    fn class_byte(&self, e: Escaped) -> Result<u8, RegexError> {
        match e {
            Escaped::Byte(b) => Ok(b),
            Escaped::Char(c) if c.is_ascii() => Ok(c as u8),
            Escaped::Char(_) => Err(self.unsupported("non-ASCII character in class")),
            Escaped::Set(_) => Err(self.error("class escape in range")),
        }
    }
}

enum Escaped {
    Char(char),
    Byte(u8),
    Set(ByteSet),
}

fn literal(c: char) -> Ast {
    let mut buf = [0u8; 4];
    let bytes = c.encode_utf8(&mut buf).as_bytes();
    if bytes.len() == 1 {
        Ast::Class(ByteSet::single(bytes[0]))
    } else {
        Ast::Concat(bytes.iter().map(|b| Ast::Class(ByteSet::single(*b))).collect())
    }
}

fn digits() -> ByteSet {
    ByteSet::range(b'0', b'9')
}

fn word() -> ByteSet {
    digits()
        .union(&ByteSet::range(b'a', b'z'))
        .union(&ByteSet::range(b'A', b'Z'))
        .union(&ByteSet::single(b'_'))
}

fn space() -> ByteSet {
    [b' ', b'\t', b'\n', b'\r', 0x0b, 0x0c]
        .into_iter()
        .fold(ByteSet::empty(), |s, b| s.union(&ByteSet::single(b)))
}
