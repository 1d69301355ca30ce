//! Text syntax for expressions, model files and index queries, plus the
//! canonical printer.
//!
//! ```text
//! ({a,b^},0.5)    stochastic activity     ({},#2)   immediate, weight 2
//! E;F  E[]F  E||F  E rs a  E sy a  E sr(a,b)  E[f: a<->b]  [E * F * K]  Stop
//! +E  overbar      -E  underbar (dynamic expressions only)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::expr::{
    ActionSym, Bar, Bars, DynamicExpr, Kind, Multiaction, NodeOp, Relabeling, Skeleton, StaticExpr, STOP_ACTION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

const RESERVED: &[&str] = &["rs", "sy", "sr", "Stop", "param", "root", "index"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBrack,
    RBrack,
    Box,
    Par,
    Semi,
    Comma,
    Star,
    Hash,
    Caret,
    Slash,
    Colon,
    Eq,
    Plus,
    Minus,
    Arrow,
    BiArrow,
    Quote,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(x) => format!("number {x}"),
            Tok::Eof => "end of input".into(),
            other => {
                let s = match other {
                    Tok::LParen => "(",
                    Tok::RParen => ")",
                    Tok::LBrace => "{",
                    Tok::RBrace => "}",
                    Tok::LBrack => "[",
                    Tok::RBrack => "]",
                    Tok::Box => "[]",
                    Tok::Par => "||",
                    Tok::Semi => ";",
                    Tok::Comma => ",",
                    Tok::Star => "*",
                    Tok::Hash => "#",
                    Tok::Caret => "^",
                    Tok::Slash => "/",
                    Tok::Colon => ":",
                    Tok::Eq => "=",
                    Tok::Plus => "+",
                    Tok::Minus => "-",
                    Tok::Arrow => "->",
                    Tok::BiArrow => "<->",
                    Tok::Quote => "'",
                    _ => unreachable!(),
                };
                format!("`{s}`")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    col: usize,
}

fn err(pos: Pos, msg: impl Into<String>) -> ParseError {
    ParseError { line: pos.line, col: pos.col, msg: msg.into() }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        let peek = chars.get(i + 1).copied();
        let mut adv = 1;
        let tok = match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                i += 1;
                col += 1;
                continue;
            }
            '/' if peek == Some('/') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '[' if peek == Some(']') => {
                adv = 2;
                Tok::Box
            }
            '[' => Tok::LBrack,
            ']' => Tok::RBrack,
            '|' if peek == Some('|') => {
                adv = 2;
                Tok::Par
            }
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '*' => Tok::Star,
            '#' => Tok::Hash,
            '^' => Tok::Caret,
            '/' => Tok::Slash,
            ':' => Tok::Colon,
            '=' => Tok::Eq,
            '+' => Tok::Plus,
            '\'' => Tok::Quote,
            '-' if peek == Some('>') => {
                adv = 2;
                Tok::Arrow
            }
            '-' => Tok::Minus,
            '<' if peek == Some('-') && chars.get(i + 2) == Some(&'>') => {
                adv = 3;
                Tok::BiArrow
            }
            c if c.is_ascii_digit() || (c == '.' && peek.is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let s: String = chars[start..j].iter().collect();
                let x: f64 = s.parse().map_err(|_| err(pos, format!("malformed number `{s}`")))?;
                adv = j - start;
                Tok::Num(x)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                adv = j - start;
                Tok::Ident(chars[start..j].iter().collect())
            }
            other => return Err(err(pos, format!("unexpected character `{other}`"))),
        };
        out.push((tok, pos));
        i += adv;
        col += adv;
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
enum Num {
    Lit(f64),
    Param(String, Pos),
}

#[derive(Clone, Debug, PartialEq)]
struct Term {
    kind: TermKind,
    bar: Option<Bar>,
    pos: Pos,
}

#[derive(Clone, Debug, PartialEq)]
enum TermKind {
    Act { part: Multiaction, immediate: bool, value: Num },
    Seq(Box<Term>, Box<Term>),
    Choice(Box<Term>, Box<Term>),
    Par(Box<Term>, Box<Term>),
    Relabel(Box<Term>, Relabeling),
    Restrict(Box<Term>, Arc<str>),
    Sync(Box<Term>, Arc<str>),
    Iter(Box<Term>, Box<Term>, Box<Term>),
    Stop,
    Ref(String),
}

/// Value of a model parameter: a constant or a sweep grid.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Value(f64),
    Range { start: f64, stop: f64, step: f64 },
}

impl ParamValue {
    /// Grid points; a constant yields one point.
    pub fn points(&self) -> Vec<f64> {
        match *self {
            ParamValue::Value(x) => vec![x],
            ParamValue::Range { start, stop, step } => {
                let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
                // rounding keeps grid values like 0.7433 free of accumulated error
                (0..n).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect()
            }
        }
    }

    /// Parses `x`, `p/q` or `start:stop:step`.
    pub fn parse(text: &str) -> Result<ParamValue, ParseError> {
        let toks = lex(text)?;
        let mut p = Parser::new(toks);
        let v = p.param_value()?;
        p.expect(Tok::Eof)?;
        Ok(v)
    }
}

/// Selector of a state (`s3`) or of a bisimulation block (`K3`); 1-based.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum StateSel {
    State(usize),
    Block(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexFunc {
    /// Σ φ over the selected states
    Phi,
    /// Σ ψ (DTMC) over the selected states
    Psi,
    /// Σ ψ* (EDTMC) over the selected states
    PsiStar,
    /// 1/Σφ
    Recurrence,
    /// Σ φ/SJ
    LeaveRate,
    Sj,
    Var,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IndexExpr {
    Num(f64),
    Named(String),
    Neg(Box<IndexExpr>),
    Bin(char, Box<IndexExpr>, Box<IndexExpr>),
    States(IndexFunc, Vec<StateSel>),
    /// Steady-state probability of a step whose multiaction part contains these multiactions.
    Step(Vec<Multiaction>),
    Reward(Vec<(StateSel, f64)>),
}

impl IndexExpr {
    pub fn selectors(&self) -> Vec<&StateSel> {
        match self {
            IndexExpr::Num(_) | IndexExpr::Named(_) | IndexExpr::Step(_) => vec![],
            IndexExpr::Neg(a) => a.selectors(),
            IndexExpr::Bin(_, a, b) => {
                let mut v = a.selectors();
                v.extend(b.selectors());
                v
            }
            IndexExpr::States(_, s) => s.iter().collect(),
            IndexExpr::Reward(r) => r.iter().map(|(s, _)| s).collect(),
        }
    }
}

/// A parsed model file. Parameters are substituted on instantiation.
#[derive(Clone, Debug)]
pub struct ModelFile {
    pub params: Vec<(String, ParamValue)>,
    pub indices: Vec<(String, IndexExpr)>,
    defs: BTreeMap<String, Term>,
    def_order: Vec<String>,
    root: Term,
}

impl ModelFile {
    pub fn definitions(&self) -> &[String] {
        &self.def_order
    }

    pub fn param(&self, name: &str) -> Option<&ParamValue> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    /// Overrides (or adds) a parameter.
    pub fn set_param(&mut self, name: &str, v: ParamValue) {
        match self.params.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = v,
            None => self.params.push((name.to_string(), v)),
        }
    }

    pub fn index(&self, name: &str) -> Option<&IndexExpr> {
        self.indices.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Cartesian product of all parameter grids, in declaration order.
    pub fn grid(&self) -> Vec<BTreeMap<String, f64>> {
        let mut out = vec![BTreeMap::new()];
        for (name, v) in &self.params {
            let pts = v.points();
            out = out
                .into_iter()
                .flat_map(|b| {
                    pts.iter().map(move |&x| {
                        let mut b = b.clone();
                        b.insert(name.clone(), x);
                        b
                    })
                })
                .collect();
        }
        out
    }

    pub fn is_sweep(&self) -> bool {
        self.params.iter().any(|(_, v)| matches!(v, ParamValue::Range { .. }))
    }

    /// Root expression with every parameter at a constant value.
    pub fn instantiate_default(&self) -> Result<StaticExpr, ParseError> {
        self.instantiate(&self.default_bindings()?)
    }

    pub fn instantiate(&self, bindings: &BTreeMap<String, f64>) -> Result<StaticExpr, ParseError> {
        let mut r = Resolver { defs: &self.defs, params: bindings, stack: Vec::new() };
        let (mut e, bars) = r.resolve(&self.root)?;
        debug_assert!(bars.is_empty());
        if !e.is_regular() {
            return Err(err(self.root.pos, "root expression is not regular"));
        }
        e.renumber();
        Ok(e)
    }

    /// A named definition instead of the root, e.g. one side of an
    /// equivalence pair.
    pub fn instantiate_named(&self, name: &str, bindings: &BTreeMap<String, f64>) -> Result<StaticExpr, ParseError> {
        if !self.defs.contains_key(name) {
            return Err(err(self.root.pos, format!("unknown definition {name}")));
        }
        let t = Term { kind: TermKind::Ref(name.to_string()), bar: None, pos: self.root.pos };
        let mut r = Resolver { defs: &self.defs, params: bindings, stack: Vec::new() };
        let (mut e, _) = r.resolve(&t)?;
        if !e.is_regular() {
            return Err(err(self.root.pos, format!("definition {name} is not regular")));
        }
        e.renumber();
        Ok(e)
    }

    /// Constant parameter bindings; fails if any parameter is a range.
    pub fn default_bindings(&self) -> Result<BTreeMap<String, f64>, ParseError> {
        let mut b = BTreeMap::new();
        for (name, v) in &self.params {
            match v {
                ParamValue::Value(x) => {
                    b.insert(name.clone(), *x);
                }
                ParamValue::Range { .. } => {
                    return Err(err(
                        self.root.pos,
                        format!("parameter {name} is a sweep range; bind a single value"),
                    ))
                }
            }
        }
        Ok(b)
    }

    /// One instantiated root per grid point.
    pub fn instantiate_grid(&self) -> Result<Vec<(BTreeMap<String, f64>, StaticExpr)>, ParseError> {
        self.grid().into_iter().map(|b| self.instantiate(&b).map(|e| (b, e))).collect()
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    allow_bars: bool,
}

impl Parser {
    fn new(toks: Vec<(Tok, Pos)>) -> Parser {
        Parser { toks, i: 0, allow_bars: false }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), ParseError> {
        if self.peek() == &t {
            self.bump();
            Ok(())
        } else {
            Err(err(self.pos(), format!("expected {}, found {}", t.describe(), self.peek().describe())))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            t => Err(err(self.pos(), format!("expected a name, found {}", t.describe()))),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    // expr := choice ('||' choice)*
    fn expr(&mut self) -> Result<Term, ParseError> {
        let mut t = self.choice()?;
        while self.peek() == &Tok::Par {
            let pos = self.pos();
            self.bump();
            let r = self.choice()?;
            t = Term { kind: TermKind::Par(Box::new(t), Box::new(r)), bar: None, pos };
        }
        Ok(t)
    }

    fn choice(&mut self) -> Result<Term, ParseError> {
        let mut t = self.seq()?;
        while self.peek() == &Tok::Box {
            let pos = self.pos();
            self.bump();
            let r = self.seq()?;
            t = Term { kind: TermKind::Choice(Box::new(t), Box::new(r)), bar: None, pos };
        }
        Ok(t)
    }

    fn seq(&mut self) -> Result<Term, ParseError> {
        let mut t = self.postfix()?;
        while self.peek() == &Tok::Semi {
            let pos = self.pos();
            self.bump();
            let r = self.postfix()?;
            t = Term { kind: TermKind::Seq(Box::new(t), Box::new(r)), bar: None, pos };
        }
        Ok(t)
    }

    fn postfix(&mut self) -> Result<Term, ParseError> {
        let mut t = self.marked()?;
        loop {
            let pos = self.pos();
            if self.is_kw("rs") || self.is_kw("sy") {
                let restrict = self.is_kw("rs");
                self.bump();
                let a = self.action_name()?;
                let kind = if restrict {
                    TermKind::Restrict(Box::new(t), a)
                } else {
                    TermKind::Sync(Box::new(t), a)
                };
                t = Term { kind, bar: None, pos };
            } else if self.is_kw("sr") {
                self.bump();
                self.expect(Tok::LParen)?;
                let mut names = vec![self.action_name()?];
                while self.eat(&Tok::Comma) {
                    names.push(self.action_name()?);
                }
                self.expect(Tok::RParen)?;
                for a in &names {
                    t = Term { kind: TermKind::Sync(Box::new(t), a.clone()), bar: None, pos };
                }
                for a in &names {
                    t = Term { kind: TermKind::Restrict(Box::new(t), a.clone()), bar: None, pos };
                }
            } else if self.peek() == &Tok::LBrack {
                let f = self.relabeling()?;
                t = Term { kind: TermKind::Relabel(Box::new(t), f), bar: None, pos };
            } else {
                return Ok(t);
            }
        }
    }

    fn action_name(&mut self) -> Result<Arc<str>, ParseError> {
        let pos = self.pos();
        let a = self.ident()?;
        if self.peek() == &Tok::Caret {
            return Err(err(pos, "restriction and synchronization take a plain action name"));
        }
        Ok(Arc::from(a.as_str()))
    }

    // '[' 'f' ':' (x ('->'|'<->') y),* ']'
    fn relabeling(&mut self) -> Result<Relabeling, ParseError> {
        let pos = self.pos();
        self.expect(Tok::LBrack)?;
        if !self.is_kw("f") {
            return Err(err(self.pos(), "expected `f:` to start a relabeling"));
        }
        self.bump();
        self.expect(Tok::Colon)?;
        let mut pairs: Vec<(String, String)> = Vec::new();
        if self.peek() != &Tok::RBrack {
            loop {
                let a = self.ident()?;
                let both = match self.bump() {
                    Tok::Arrow => false,
                    Tok::BiArrow => true,
                    t => return Err(err(self.pos(), format!("expected `->` or `<->`, found {}", t.describe()))),
                };
                let b = self.ident()?;
                pairs.push((a.clone(), b.clone()));
                if both {
                    pairs.push((b, a));
                }
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RBrack)?;
        let mut seen = BTreeSet::new();
        pairs.retain(|p| seen.insert(p.clone()));
        Relabeling::new(&pairs).map_err(|e| err(pos, e.to_string()))
    }

    fn marked(&mut self) -> Result<Term, ParseError> {
        let bar = match self.peek() {
            Tok::Plus if self.allow_bars => Some(Bar::Over),
            Tok::Minus if self.allow_bars => Some(Bar::Under),
            _ => None,
        };
        if bar.is_some() {
            let pos = self.pos();
            self.bump();
            let mut t = self.primary()?;
            if t.bar.is_some() {
                return Err(err(pos, "a subterm carries at most one bar"));
            }
            t.bar = bar;
            return Ok(t);
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Term, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::LParen if self.peek_at(1) == &Tok::LBrace => self.activity(),
            Tok::LParen => {
                self.bump();
                let t = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(t)
            }
            Tok::LBrack => {
                self.bump();
                let i = self.expr()?;
                self.expect(Tok::Star)?;
                let b = self.expr()?;
                self.expect(Tok::Star)?;
                let k = self.expr()?;
                self.expect(Tok::RBrack)?;
                Ok(Term { kind: TermKind::Iter(Box::new(i), Box::new(b), Box::new(k)), bar: None, pos })
            }
            Tok::Ident(s) if s == "Stop" => {
                self.bump();
                Ok(Term { kind: TermKind::Stop, bar: None, pos })
            }
            Tok::Ident(s) if !RESERVED.contains(&s.as_str()) => {
                self.bump();
                Ok(Term { kind: TermKind::Ref(s), bar: None, pos })
            }
            t => Err(err(pos, format!("expected an expression, found {}", t.describe()))),
        }
    }

    fn activity(&mut self) -> Result<Term, ParseError> {
        let pos = self.pos();
        self.expect(Tok::LParen)?;
        self.expect(Tok::LBrace)?;
        let part = self.multiaction_body()?;
        self.expect(Tok::Comma)?;
        let immediate = self.eat(&Tok::Hash);
        let value = self.number_or_param()?;
        self.expect(Tok::RParen)?;
        Ok(Term { kind: TermKind::Act { part, immediate, value }, bar: None, pos })
    }

    // after '{': actions then '}'
    fn multiaction_body(&mut self) -> Result<Multiaction, ParseError> {
        let mut part = Multiaction::new();
        if self.eat(&Tok::RBrace) {
            return Ok(part);
        }
        loop {
            let name = self.ident()?;
            let conj = self.eat(&Tok::Caret);
            part.insert(ActionSym { name: Arc::from(name.as_str()), conjugated: conj }, 1);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RBrace)?;
        Ok(part)
    }

    fn number_or_param(&mut self) -> Result<Num, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(x) => {
                if self.eat(&Tok::Slash) {
                    let qpos = self.pos();
                    match self.bump() {
                        Tok::Num(q) if q != 0.0 => Ok(Num::Lit(x / q)),
                        _ => Err(err(qpos, "expected a nonzero denominator")),
                    }
                } else {
                    Ok(Num::Lit(x))
                }
            }
            Tok::Ident(s) => Ok(Num::Param(s, pos)),
            t => Err(err(pos, format!("expected a number or parameter, found {}", t.describe()))),
        }
    }

    fn plain_number(&mut self) -> Result<f64, ParseError> {
        let pos = self.pos();
        match self.number_or_param()? {
            Num::Lit(x) => Ok(x),
            Num::Param(..) => Err(err(pos, "expected a numeric literal")),
        }
    }

    fn param_value(&mut self) -> Result<ParamValue, ParseError> {
        let pos = self.pos();
        let a = self.plain_number()?;
        if !self.eat(&Tok::Colon) {
            return Ok(ParamValue::Value(a));
        }
        let b = self.plain_number()?;
        self.expect(Tok::Colon)?;
        let step = self.plain_number()?;
        if !(step > 0.0) || b < a {
            return Err(err(pos, "sweep range needs start <= stop and a positive step"));
        }
        Ok(ParamValue::Range { start: a, stop: b, step })
    }

    fn index_expr(&mut self) -> Result<IndexExpr, ParseError> {
        let mut t = self.index_term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => '+',
                Tok::Minus => '-',
                _ => return Ok(t),
            };
            self.bump();
            let r = self.index_term()?;
            t = IndexExpr::Bin(op, Box::new(t), Box::new(r));
        }
    }

    fn index_term(&mut self) -> Result<IndexExpr, ParseError> {
        let mut t = self.index_factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => '*',
                Tok::Slash => '/',
                _ => return Ok(t),
            };
            self.bump();
            let r = self.index_factor()?;
            t = IndexExpr::Bin(op, Box::new(t), Box::new(r));
        }
    }

    fn index_factor(&mut self) -> Result<IndexExpr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(x) => {
                self.bump();
                Ok(IndexExpr::Num(x))
            }
            Tok::Minus => {
                self.bump();
                Ok(IndexExpr::Neg(Box::new(self.index_factor()?)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.index_expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek() != &Tok::LBrack {
                    return Ok(IndexExpr::Named(name));
                }
                self.bump();
                let e = match name.as_str() {
                    "step" => {
                        let mut parts = Vec::new();
                        loop {
                            self.expect(Tok::LBrace)?;
                            parts.push(self.multiaction_body()?);
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                        IndexExpr::Step(parts)
                    }
                    "reward" => {
                        let mut r = Vec::new();
                        loop {
                            let s = self.state_sel()?;
                            self.expect(Tok::Colon)?;
                            let neg = self.eat(&Tok::Minus);
                            let x = self.plain_number()?;
                            r.push((s, if neg { -x } else { x }));
                            if !self.eat(&Tok::Comma) {
                                break;
                            }
                        }
                        IndexExpr::Reward(r)
                    }
                    f => {
                        let func = match f {
                            "phi" => IndexFunc::Phi,
                            "psi" => IndexFunc::Psi,
                            "psi_star" => IndexFunc::PsiStar,
                            "recurrence" => IndexFunc::Recurrence,
                            "leave_rate" => IndexFunc::LeaveRate,
                            "sj" => IndexFunc::Sj,
                            "var" => IndexFunc::Var,
                            _ => return Err(err(pos, format!("unknown index function `{f}`"))),
                        };
                        let mut sels = vec![self.state_sel()?];
                        while self.eat(&Tok::Comma) {
                            sels.push(self.state_sel()?);
                        }
                        if matches!(func, IndexFunc::Sj | IndexFunc::Var) && sels.len() != 1 {
                            return Err(err(pos, format!("{f} takes exactly one state")));
                        }
                        IndexExpr::States(func, sels)
                    }
                };
                self.expect(Tok::RBrack)?;
                Ok(e)
            }
            t => Err(err(pos, format!("expected an index expression, found {}", t.describe()))),
        }
    }

    fn state_sel(&mut self) -> Result<StateSel, ParseError> {
        let pos = self.pos();
        let s = self.ident()?;
        self.eat(&Tok::Quote);
        let bad = || err(pos, format!("state selector `{s}` must look like s3 or K3"));
        let (head, digits) = s.split_at(1);
        let n: usize = digits.parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match head {
            "s" => Ok(StateSel::State(n)),
            "K" => Ok(StateSel::Block(n)),
            _ => Err(bad()),
        }
    }

    fn at_statement_start(&self) -> bool {
        match self.peek() {
            Tok::Eof => true,
            Tok::Ident(s) if s == "param" || s == "root" || s == "index" => true,
            Tok::Ident(_) => self.peek_at(1) == &Tok::Eq,
            _ => false,
        }
    }

    fn model(&mut self) -> Result<(ModelFile, Pos), ParseError> {
        let mut params: Vec<(String, ParamValue)> = Vec::new();
        let mut indices: Vec<(String, IndexExpr)> = Vec::new();
        let mut defs = BTreeMap::new();
        let mut def_order = Vec::new();
        let mut root = None;
        loop {
            let pos = self.pos();
            if self.peek() == &Tok::Eof {
                break;
            }
            if self.is_kw("param") {
                self.bump();
                let name = self.ident()?;
                self.expect(Tok::Eq)?;
                let v = self.param_value()?;
                if params.iter().any(|(n, _)| n == &name) {
                    return Err(err(pos, format!("parameter {name} declared twice")));
                }
                params.push((name, v));
            } else if self.is_kw("index") {
                self.bump();
                let name = self.ident()?;
                self.expect(Tok::Eq)?;
                let e = self.index_expr()?;
                indices.push((name, e));
            } else if self.is_kw("root") {
                self.bump();
                if root.is_some() {
                    return Err(err(pos, "more than one root expression"));
                }
                root = Some(self.expr()?);
            } else {
                let name = self.ident()?;
                if RESERVED.contains(&name.as_str()) {
                    return Err(err(pos, format!("`{name}` is reserved")));
                }
                self.expect(Tok::Eq)?;
                let t = self.expr()?;
                if defs.insert(name.clone(), t).is_some() {
                    return Err(err(pos, format!("{name} defined twice")));
                }
                def_order.push(name);
            }
            if !self.at_statement_start() {
                return Err(err(self.pos(), format!("unexpected {}", self.peek().describe())));
            }
        }
        let end = self.pos();
        let root = root.ok_or_else(|| err(end, "model has no root expression"))?;
        Ok((ModelFile { params, indices, defs, def_order, root }, end))
    }
}

struct Resolver<'a> {
    defs: &'a BTreeMap<String, Term>,
    params: &'a BTreeMap<String, f64>,
    stack: Vec<String>,
}

impl Resolver<'_> {
    /// Expands names and parameters. Bars come back with preorder node ids.
    fn resolve(&mut self, t: &Term) -> Result<(StaticExpr, Bars), ParseError> {
        let mut bars = Vec::new();
        let mut next = 0u32;
        let e = self.go(t, &mut next, &mut bars)?;
        Ok((e, bars))
    }

    fn go(&mut self, t: &Term, next: &mut u32, bars: &mut Bars) -> Result<StaticExpr, ParseError> {
        let id = *next;
        if let Some(b) = t.bar {
            bars.push((id, b));
        }
        if let TermKind::Ref(name) = &t.kind {
            let Some(def) = self.defs.get(name) else {
                return Err(err(t.pos, format!("unknown name `{name}`")));
            };
            if self.stack.contains(name) {
                return Err(err(t.pos, format!("recursive definition of `{name}`")));
            }
            self.stack.push(name.clone());
            let mut inner = Vec::new();
            let e = self.go(def, next, &mut inner)?;
            self.stack.pop();
            if !inner.is_empty() {
                return Err(err(t.pos, "definitions must be static"));
            }
            return Ok(e);
        }
        *next += 1;
        let e = match &t.kind {
            TermKind::Act { part, immediate, value } => {
                let x = match value {
                    Num::Lit(x) => *x,
                    Num::Param(p, pos) => *self
                        .params
                        .get(p)
                        .ok_or_else(|| err(*pos, format!("unknown parameter `{p}`")))?,
                };
                let kind = if *immediate { Kind::immediate(x) } else { Kind::stochastic(x) };
                let kind = kind.map_err(|e| err(t.pos, format!("malformed activity: {e}")))?;
                StaticExpr::act(part.clone(), kind)
            }
            TermKind::Seq(a, b) => StaticExpr::seq(self.go(a, next, bars)?, self.go(b, next, bars)?),
            TermKind::Choice(a, b) => StaticExpr::choice(self.go(a, next, bars)?, self.go(b, next, bars)?),
            TermKind::Par(a, b) => StaticExpr::par(self.go(a, next, bars)?, self.go(b, next, bars)?),
            TermKind::Relabel(a, f) => StaticExpr::relabel(self.go(a, next, bars)?, f.clone()),
            TermKind::Restrict(a, x) => StaticExpr::restrict(self.go(a, next, bars)?, x),
            TermKind::Sync(a, x) => StaticExpr::sync(self.go(a, next, bars)?, x),
            TermKind::Iter(a, b, c) => {
                let a = self.go(a, next, bars)?;
                let b = self.go(b, next, bars)?;
                let c = self.go(c, next, bars)?;
                StaticExpr::iter(a, b, c)
            }
            TermKind::Stop => {
                *next += 1;
                StaticExpr::stop()
            }
            TermKind::Ref(_) => unreachable!(),
        };
        Ok(e)
    }
}

fn parse_with<T>(text: &str, f: impl FnOnce(&mut Parser) -> Result<T, ParseError>) -> Result<T, ParseError> {
    let mut p = Parser::new(lex(text)?);
    let v = f(&mut p)?;
    if p.peek() != &Tok::Eof {
        return Err(err(p.pos(), format!("unexpected {}", p.peek().describe())));
    }
    Ok(v)
}

/// Parses a closed static expression with numeric probabilities and weights.
pub fn parse_static(text: &str) -> Result<StaticExpr, ParseError> {
    parse_static_with(text, &BTreeMap::new())
}

/// Parses a static expression whose activities may name parameters.
pub fn parse_static_with(text: &str, params: &BTreeMap<String, f64>) -> Result<StaticExpr, ParseError> {
    let t = parse_with(text, |p| p.expr())?;
    let defs = BTreeMap::new();
    let (mut e, _) = Resolver { defs: &defs, params, stack: Vec::new() }.resolve(&t)?;
    e.renumber();
    Ok(e)
}

/// Parses a dynamic expression: `+` marks an overbar, `-` an underbar.
pub fn parse_dynamic(text: &str) -> Result<DynamicExpr, ParseError> {
    let t = parse_with(text, |p| {
        p.allow_bars = true;
        p.expr()
    })?;
    let defs = BTreeMap::new();
    let params = BTreeMap::new();
    let (mut e, bars) = Resolver { defs: &defs, params: &params, stack: Vec::new() }.resolve(&t)?;
    e.renumber();
    DynamicExpr::new(Arc::new(Skeleton::new(&e)), bars).map_err(|e| err(t.pos, e.to_string()))
}

pub fn parse_model(text: &str) -> Result<ModelFile, ParseError> {
    let mut p = Parser::new(lex(text)?);
    let (m, _) = p.model()?;
    // check names early so errors carry positions even before instantiation
    let mut probe: BTreeMap<String, f64> = BTreeMap::new();
    for (name, v) in &m.params {
        probe.insert(name.clone(), v.points()[0]);
    }
    let mut r = Resolver { defs: &m.defs, params: &probe, stack: Vec::new() };
    for name in &m.def_order {
        r.resolve(&m.defs[name])?;
    }
    let (e, _) = r.resolve(&m.root)?;
    if !e.is_regular() {
        return Err(err(m.root.pos, "root expression is not regular"));
    }
    Ok(m)
}

pub fn parse_index(text: &str) -> Result<IndexExpr, ParseError> {
    parse_with(text, |p| p.index_expr())
}

const P_PAR: u8 = 1;
const P_CHOICE: u8 = 2;
const P_SEQ: u8 = 3;
const P_POSTFIX: u8 = 4;
const P_ATOM: u8 = 5;

/// Canonical text of a static expression.
pub fn serialize_static(e: &StaticExpr) -> String {
    let skel = Skeleton::new(e);
    print_node(&skel, 0, &BTreeMap::new()).0
}

/// Canonical text of a dynamic expression given as bars on a skeleton.
pub fn serialize_dynamic(skel: &Skeleton, bars: &[(u32, Bar)]) -> String {
    let map: BTreeMap<u32, Bar> = bars.iter().copied().collect();
    print_node(skel, 0, &map).0
}

fn wrap(s: (String, u8), min: u8) -> String {
    if s.1 < min {
        format!("({})", s.0)
    } else {
        s.0
    }
}

fn print_node(skel: &Skeleton, id: u32, bars: &BTreeMap<u32, Bar>) -> (String, u8) {
    let node = skel.node(id);
    let kid = |i: usize| print_node(skel, node.children[i], bars);
    let inner_barred = bars.range(id + 1..node.end).next().is_some();
    let body = match &node.op {
        NodeOp::Act(a) => (a.to_string(), P_ATOM),
        NodeOp::Seq => (format!("{};{}", wrap(kid(0), P_SEQ), wrap(kid(1), P_SEQ + 1)), P_SEQ),
        NodeOp::Choice => (format!("{} [] {}", wrap(kid(0), P_CHOICE), wrap(kid(1), P_CHOICE + 1)), P_CHOICE),
        NodeOp::Par => (format!("{} || {}", wrap(kid(0), P_PAR), wrap(kid(1), P_PAR + 1)), P_PAR),
        NodeOp::Restrict(a) if &**a == STOP_ACTION && !inner_barred && is_stop_node(skel, id) => {
            ("Stop".to_string(), P_ATOM)
        }
        NodeOp::Restrict(a) => (format!("{} rs {a}", wrap(kid(0), P_POSTFIX)), P_POSTFIX),
        NodeOp::Sync(a) => (format!("{} sy {a}", wrap(kid(0), P_POSTFIX)), P_POSTFIX),
        NodeOp::Relabel(f) => {
            let mut s = wrap(kid(0), P_POSTFIX);
            s.push_str("[f:");
            for (i, (a, b)) in f.pairs().enumerate() {
                let _ = write!(s, "{}{a}->{b}", if i > 0 { ", " } else { " " });
            }
            s.push(']');
            (s, P_POSTFIX)
        }
        NodeOp::Iter => (format!("[{} * {} * {}]", kid(0).0, kid(1).0, kid(2).0), P_ATOM),
    };
    match bars.get(&id) {
        None => body,
        Some(b) => {
            let mark = if *b == Bar::Over { '+' } else { '-' };
            (format!("{mark}{}", wrap(body, P_ATOM)), P_ATOM)
        }
    }
}

fn is_stop_node(skel: &Skeleton, id: u32) -> bool {
    let node = skel.node(id);
    match &skel.node(node.children[0]).op {
        NodeOp::Act(a) => {
            a.kind() == Kind::Stochastic(0.5) && *a.part() == crate::expr::multiaction(&[STOP_ACTION])
        }
        _ => false,
    }
}
