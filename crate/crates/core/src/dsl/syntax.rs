//! Lexer and parser producing an untyped surface tree.

use super::{ErrorKind, ParseError, Pos};
use crate::logic::{Fraction, Interval};
use crate::scene::parse_decimal;

const MAX_DEPTH: usize = 128;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Sym(&'static str),
    Eof,
}

const SYMBOLS: &[&str] = &[
    "..", ":=", "!=", "<=", ">=", "=", "<", ">", "+", "-", "*", "/", "(", ")", "[", "]", "{", "}", ",", ":", ";", ".",
];

const KEYWORDS: &[&str] = &[
    "exists",
    "forall",
    "in",
    "bind",
    "not",
    "and",
    "or",
    "implies",
    "next",
    "until",
    "eventually",
    "always",
    "min-prev",
    "max-prev",
    "for-ego",
    "def",
    "true",
    "false",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
        } else if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            let mut end = i;
            while end < chars.len() && (chars[end].is_ascii_alphanumeric() || chars[end] == '_' || chars[end] == '\'') {
                end += 1;
            }
            let mut word: String = chars[start..end].iter().collect();
            for (head, tail) in [("for", "-ego"), ("min", "-prev"), ("max", "-prev")] {
                let t: Vec<char> = tail.chars().collect();
                let follows = chars.get(end..end + t.len()) == Some(&t[..]);
                let boundary = chars
                    .get(end + t.len())
                    .is_none_or(|c| !(c.is_ascii_alphanumeric() || *c == '_'));
                if word == head && follows && boundary {
                    word.push_str(tail);
                    end += t.len();
                }
            }
            advance(&mut i, &mut line, &mut col, end - start);
            out.push((Tok::Ident(word), pos));
        } else if c.is_ascii_digit() {
            let start = i;
            let mut end = i;
            while end < chars.len() && chars[end].is_ascii_digit() {
                end += 1;
            }
            if chars.get(end) == Some(&'.') && chars.get(end + 1).is_some_and(|d| d.is_ascii_digit()) {
                end += 1;
                while end < chars.len() && chars[end].is_ascii_digit() {
                    end += 1;
                }
            }
            let text: String = chars[start..end].iter().collect();
            advance(&mut i, &mut line, &mut col, end - start);
            out.push((Tok::Num(text), pos));
        } else {
            let sym = SYMBOLS.iter().find(|s| {
                let s: Vec<char> = s.chars().collect();
                chars.get(i..i + s.len()) == Some(&s[..])
            });
            match sym {
                Some(s) => {
                    advance(&mut i, &mut line, &mut col, s.len());
                    out.push((Tok::Sym(s), pos));
                }
                None => {
                    return Err(ParseError::new(
                        pos,
                        ErrorKind::Syntax,
                        format!("unexpected character `{c}`"),
                    ))
                }
            }
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum CmpOp {
    Eq,
    Neq,
    Lt,
    Gt,
    Leq,
    Geq,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum DomainKw {
    Vehicles,
    Pedestrians,
    Actors,
    Lanes,
    Roads,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TemporalOp {
    Next,
    Until,
    Eventually,
    Always,
    MinPrev,
    MaxPrev,
}

#[derive(Clone, Debug)]
pub(crate) struct Expr {
    pub pos: Pos,
    pub kind: ExprKind,
}

#[derive(Clone, Debug)]
pub(crate) enum ExprKind {
    Num(String),
    Name(String),
    Call(String, Vec<Expr>),
    /// `receiver.name` or `receiver.name(args)`.
    Member(Box<Expr>, String, Vec<Expr>),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
    Cmp(Box<Expr>, Vec<(CmpOp, Expr)>),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Quant {
        forall: bool,
        var: String,
        domain: Option<DomainKw>,
        body: Box<Expr>,
    },
    Bind {
        var: String,
        term: Box<Expr>,
        body: Box<Expr>,
    },
    Temporal {
        op: TemporalOp,
        interval: Interval,
        fraction: Option<Fraction>,
        args: Vec<Expr>,
    },
    ForEgo {
        var: String,
        body: Box<Expr>,
    },
    False,
}

#[derive(Clone, Debug)]
pub(crate) struct RawParam {
    pub name: String,
    pub sort: String,
    pub pos: Pos,
}

#[derive(Clone, Debug)]
pub(crate) struct RawDef {
    pub name: String,
    pub pos: Pos,
    pub params: Vec<RawParam>,
    pub body: Expr,
    pub text: String,
}

pub(crate) struct Parser<'s> {
    src: &'s str,
    toks: Vec<(Tok, Pos)>,
    at: usize,
    depth: usize,
}

impl<'s> Parser<'s> {
    pub fn new(src: &'s str) -> Result<Self, ParseError> {
        Ok(Parser {
            src,
            toks: lex(src)?,
            at: 0,
            depth: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == w)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.is_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(s) => format!("number `{s}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_owned(),
        }
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::new(
            self.pos(),
            ErrorKind::Syntax,
            format!("expected {wanted}, found {}", Self::describe(self.peek())),
        )
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{s}`")))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::new(
                self.pos(),
                ErrorKind::Syntax,
                "expression nested too deeply".into(),
            ));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    pub fn at_end(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    /// A whole input consisting of one expression.
    pub fn single(mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        if !self.at_end() {
            return Err(self.unexpected("end of input"));
        }
        Ok(e)
    }

    /// A whole input consisting of `def` items.
    pub fn definitions(mut self) -> Result<Vec<RawDef>, ParseError> {
        let mut out = Vec::new();
        while !self.at_end() {
            out.push(self.definition()?);
        }
        Ok(out)
    }

    fn offset(&self, pos: Pos) -> usize {
        let mut line = 1;
        let mut col = 1;
        for (i, c) in self.src.char_indices() {
            if line == pos.line && col == pos.col {
                return i;
            }
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
        }
        self.src.len()
    }

    fn definition(&mut self) -> Result<RawDef, ParseError> {
        let start = self.pos();
        if !self.eat_word("def") {
            return Err(self.unexpected("`def`"));
        }
        let pos = self.pos();
        let name = self.ident()?;
        let mut params = Vec::new();
        if self.eat_sym("(") && !self.eat_sym(")") {
            loop {
                let ppos = self.pos();
                let pname = self.ident()?;
                self.expect_sym(":")?;
                let sort = self.ident()?;
                params.push(RawParam {
                    name: pname,
                    sort,
                    pos: ppos,
                });
                if self.eat_sym(")") {
                    break;
                }
                self.expect_sym(",")?;
            }
        }
        self.expect_sym(":=")?;
        let body = self.expr()?;
        let end = self.pos();
        self.expect_sym(";")?;
        let text = self.src[self.offset(start)..self.offset(end)].trim().to_owned();
        Ok(RawDef {
            name,
            pos,
            params,
            body,
            text,
        })
    }

    pub fn expr(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let r = self.implies();
        self.leave();
        r
    }

    fn implies(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.or()?;
        if self.is_word("implies") {
            let pos = self.pos();
            self.bump();
            let rhs = self.expr()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Implies(Box::new(lhs), Box::new(rhs)),
            });
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while self.is_word("or") {
            let pos = self.pos();
            self.bump();
            let rhs = self.and()?;
            lhs = Expr {
                pos,
                kind: ExprKind::Or(Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while self.is_word("and") {
            let pos = self.pos();
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr {
                pos,
                kind: ExprKind::And(Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let r = self.unary_inner();
        self.leave();
        r
    }

    fn unary_inner(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        if self.eat_word("not") {
            let inner = self.unary()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Not(Box::new(inner)),
            });
        }
        if self.is_word("exists") || self.is_word("forall") {
            let forall = self.is_word("forall");
            self.bump();
            let var = self.ident()?;
            let domain = if self.eat_word("in") {
                let dpos = self.pos();
                let d =
                    match self.bump() {
                        Tok::Ident(s) => match s.as_str() {
                            "Vehicles" => DomainKw::Vehicles,
                            "Pedestrians" => DomainKw::Pedestrians,
                            "Actors" => DomainKw::Actors,
                            "Lanes" => DomainKw::Lanes,
                            "Roads" => DomainKw::Roads,
                            other => return Err(ParseError::new(
                                dpos,
                                ErrorKind::Syntax,
                                format!(
                                    "unknown domain `{other}`; expected Vehicles, Pedestrians, Actors, Lanes or Roads"
                                ),
                            )),
                        },
                        t => {
                            return Err(ParseError::new(
                                dpos,
                                ErrorKind::Syntax,
                                format!("expected a domain, found {}", Self::describe(&t)),
                            ))
                        }
                    };
                Some(d)
            } else {
                None
            };
            self.expect_sym(":")?;
            let body = self.expr()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Quant {
                    forall,
                    var,
                    domain,
                    body: Box::new(body),
                },
            });
        }
        if self.eat_word("bind") {
            let var = self.ident()?;
            self.expect_sym("=")?;
            let term = self.additive()?;
            if !self.eat_word("in") {
                return Err(self.unexpected("`in`"));
            }
            let body = self.expr()?;
            return Ok(Expr {
                pos,
                kind: ExprKind::Bind {
                    var,
                    term: Box::new(term),
                    body: Box::new(body),
                },
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, ParseError> {
        let first = self.additive()?;
        let mut rest = Vec::new();
        loop {
            let op = match self.peek() {
                Tok::Sym("=") => CmpOp::Eq,
                Tok::Sym("!=") => CmpOp::Neq,
                Tok::Sym("<") => CmpOp::Lt,
                Tok::Sym(">") => CmpOp::Gt,
                Tok::Sym("<=") => CmpOp::Leq,
                Tok::Sym(">=") => CmpOp::Geq,
                _ => break,
            };
            self.bump();
            rest.push((op, self.additive()?));
        }
        if rest.is_empty() {
            return Ok(first);
        }
        Ok(Expr {
            pos: first.pos,
            kind: ExprKind::Cmp(Box::new(first), rest),
        })
    }

    fn additive(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => ArithOp::Add,
                Tok::Sym("-") => ArithOp::Sub,
                _ => break,
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr {
                pos,
                kind: ExprKind::Arith(op, Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    fn multiplicative(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.negation()?;
        while self.is_sym("*") {
            let pos = self.pos();
            self.bump();
            let rhs = self.negation()?;
            lhs = Expr {
                pos,
                kind: ExprKind::Arith(ArithOp::Mul, Box::new(lhs), Box::new(rhs)),
            };
        }
        Ok(lhs)
    }

    fn negation(&mut self) -> Result<Expr, ParseError> {
        self.enter()?;
        let pos = self.pos();
        let r = if self.eat_sym("-") {
            self.negation().map(|inner| Expr {
                pos,
                kind: ExprKind::Neg(Box::new(inner)),
            })
        } else {
            self.postfix()
        };
        self.leave();
        r
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        let mut e = self.primary()?;
        while self.eat_sym(".") {
            let pos = self.pos();
            let name = self.ident()?;
            let args = if self.is_sym("(") { self.args()? } else { Vec::new() };
            e = Expr {
                pos,
                kind: ExprKind::Member(Box::new(e), name, args),
            };
        }
        Ok(e)
    }

    fn args(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if self.eat_sym(")") {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat_sym(")") {
                return Ok(out);
            }
            self.expect_sym(",")?;
        }
    }

    fn natural(&mut self) -> Result<u64, ParseError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(s) => s.parse::<u64>().map_err(|_| {
                ParseError::new(
                    pos,
                    ErrorKind::Syntax,
                    format!("expected a natural number, found `{s}`"),
                )
            }),
            t => Err(ParseError::new(
                pos,
                ErrorKind::Syntax,
                format!("expected a natural number, found {}", Self::describe(&t)),
            )),
        }
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        let pos = self.pos();
        let lower = self.natural()?;
        self.expect_sym("..")?;
        let upper = if matches!(self.peek(), Tok::Num(_)) {
            Some(self.natural()?)
        } else {
            None
        };
        Interval::new(lower, upper).map_err(|e| ParseError::new(pos, ErrorKind::Syntax, e.to_string()))
    }

    fn fraction(&mut self) -> Result<Fraction, ParseError> {
        let pos = self.pos();
        let text = match self.bump() {
            Tok::Num(s) => s,
            t => {
                return Err(ParseError::new(
                    pos,
                    ErrorKind::Syntax,
                    format!("expected a fraction, found {}", Self::describe(&t)),
                ))
            }
        };
        let bad = |msg: String| ParseError::new(pos, ErrorKind::Syntax, msg);
        let (numer, denom) = if self.eat_sym("/") {
            let n = text
                .parse::<u64>()
                .map_err(|_| bad(format!("invalid numerator `{text}`")))?;
            (n, self.natural()?)
        } else {
            let r = parse_decimal(&text).ok_or_else(|| bad(format!("invalid fraction `{text}`")))?;
            (*r.numer() as u64, *r.denom() as u64)
        };
        Fraction::new(numer, denom).map_err(|e| bad(e.to_string()))
    }

    fn temporal(&mut self, op: TemporalOp, pos: Pos) -> Result<Expr, ParseError> {
        let prevalence = matches!(op, TemporalOp::MinPrev | TemporalOp::MaxPrev);
        let mut interval = Interval::UNBOUNDED;
        let mut fraction = None;
        if prevalence {
            self.expect_sym("[")?;
            fraction = Some(self.fraction()?);
            if self.eat_sym(",") {
                interval = self.interval()?;
            }
            self.expect_sym("]")?;
        } else if self.eat_sym("[") {
            interval = self.interval()?;
            self.expect_sym("]")?;
        }
        let args_pos = self.pos();
        let args = self.args()?;
        let want = if op == TemporalOp::Until { 2 } else { 1 };
        if args.len() != want {
            return Err(ParseError::new(
                args_pos,
                ErrorKind::Arity,
                format!("temporal operator expects {want} argument(s), got {}", args.len()),
            ));
        }
        Ok(Expr {
            pos,
            kind: ExprKind::Temporal {
                op,
                interval,
                fraction,
                args,
            },
        })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(s) => {
                self.bump();
                Ok(Expr {
                    pos,
                    kind: ExprKind::Num(s),
                })
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(w) => {
                let op = match w.as_str() {
                    "next" => Some(TemporalOp::Next),
                    "until" => Some(TemporalOp::Until),
                    "eventually" => Some(TemporalOp::Eventually),
                    "always" => Some(TemporalOp::Always),
                    "min-prev" => Some(TemporalOp::MinPrev),
                    "max-prev" => Some(TemporalOp::MaxPrev),
                    _ => None,
                };
                if let Some(op) = op {
                    self.bump();
                    return self.temporal(op, pos);
                }
                match w.as_str() {
                    "true" => {
                        self.bump();
                        Ok(Expr {
                            pos,
                            kind: ExprKind::Name(w),
                        })
                    }
                    "false" => {
                        self.bump();
                        Ok(Expr {
                            pos,
                            kind: ExprKind::False,
                        })
                    }
                    "for-ego" => {
                        self.bump();
                        self.expect_sym("(")?;
                        let var = self.ident()?;
                        self.expect_sym(")")?;
                        self.expect_sym("{")?;
                        let body = self.expr()?;
                        self.expect_sym("}")?;
                        Ok(Expr {
                            pos,
                            kind: ExprKind::ForEgo {
                                var,
                                body: Box::new(body),
                            },
                        })
                    }
                    _ => {
                        let name = self.ident()?;
                        if self.is_sym("(") {
                            let args = self.args()?;
                            Ok(Expr {
                                pos,
                                kind: ExprKind::Call(name, args),
                            })
                        } else {
                            Ok(Expr {
                                pos,
                                kind: ExprKind::Name(name),
                            })
                        }
                    }
                }
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}
