//! Arithmetic expressions shared by the model DSL and the ODE spec format.
//!
//! Precedence (loosest first): `+ -`, `* /`, unary `-`, `^` (right
//! associative). Primaries are numbers, identifiers, calls `f(a, b)`,
//! indexed identifiers `net[1]`, and parenthesized expressions.

use std::fmt;

use thiserror::Error;

/// 1-based source position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{pos}: {message}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub message: String,
}

impl SyntaxError {
    pub fn new(pos: Pos, message: impl Into<String>) -> Self {
        Self { pos, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Number(f64),
    Punct(char),
    /// `->`
    Arrow,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub pos: Pos,
}

/// Splits source into tokens. `#` and `//` start comments; `;` is reported
/// as a newline so statements may share a line.
pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c == '\n' {
            out.push(Token { kind: TokenKind::Newline, pos });
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == ';' {
            out.push(Token { kind: TokenKind::Newline, pos });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Token { kind: TokenKind::Ident(s), pos });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s
                .parse()
                .map_err(|_| SyntaxError::new(pos, format!("malformed number `{s}`")))?;
            col += i - start;
            out.push(Token { kind: TokenKind::Number(v), pos });
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'>') {
            out.push(Token { kind: TokenKind::Arrow, pos });
            i += 2;
            col += 2;
            continue;
        }
        if "+-*/^()[],~=:{}".contains(c) {
            out.push(Token { kind: TokenKind::Punct(c), pos });
            i += 1;
            col += 1;
            continue;
        }
        return Err(SyntaxError::new(pos, format!("unexpected character `{c}`")));
    }
    out.push(Token { kind: TokenKind::Eof, pos: Pos { line, col } });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

const UNARY_PREC: u8 = 3;

/// Expression AST. Positions are ignored by equality so that a printed and
/// reparsed expression compares equal to the original.
#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Ident(String, Pos),
    Index(String, usize, Pos),
    Call(String, Vec<Expr>, Pos),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Expr::Num(a), Expr::Num(b)) => a.to_bits() == b.to_bits(),
            (Expr::Ident(a, _), Expr::Ident(b, _)) => a == b,
            (Expr::Index(a, i, _), Expr::Index(b, j, _)) => a == b && i == j,
            (Expr::Call(f, xs, _), Expr::Call(g, ys, _)) => f == g && xs == ys,
            (Expr::Neg(a), Expr::Neg(b)) => a == b,
            (Expr::Binary(o, a, b), Expr::Binary(p, c, d)) => o == p && a == c && b == d,
            _ => false,
        }
    }
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Neg(_) => UNARY_PREC,
            _ => u8::MAX,
        }
    }

    /// Visits every identifier (plain or indexed) with its position.
    pub fn visit_idents<'a>(&'a self, f: &mut impl FnMut(&'a str, Pos)) {
        match self {
            Expr::Num(_) => {}
            Expr::Ident(n, p) | Expr::Index(n, _, p) => f(n, *p),
            Expr::Call(_, args, _) => args.iter().for_each(|a| a.visit_idents(f)),
            Expr::Neg(a) => a.visit_idents(f),
            Expr::Binary(_, a, b) => {
                a.visit_idents(f);
                b.visit_idents(f);
            }
        }
    }

    pub fn position(&self) -> Option<Pos> {
        match self {
            Expr::Ident(_, p) | Expr::Index(_, _, p) | Expr::Call(_, _, p) => Some(*p),
            Expr::Neg(a) => a.position(),
            Expr::Binary(_, a, _) => a.position(),
            Expr::Num(_) => None,
        }
    }
}

fn fmt_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        write!(f, "{v:.1}")
    } else {
        write!(f, "{v:?}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => fmt_num(*v, f),
            Expr::Ident(n, _) => write!(f, "{n}"),
            Expr::Index(n, i, _) => write!(f, "{n}[{i}]"),
            Expr::Call(name, args, _) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Neg(a) => {
                if a.precedence() <= UNARY_PREC {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                // `^` is right-associative; the others are left-associative.
                let (left_paren, right_paren) = if *op == BinOp::Pow {
                    (a.precedence() <= p, b.precedence() < p)
                } else {
                    (a.precedence() < p, b.precedence() <= p)
                };
                if left_paren {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if right_paren {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

/// Cursor over a token stream, shared by the statement-level parsers.
pub struct TokenStream {
    tokens: Vec<Token>,
    at: usize,
}

impl TokenStream {
    pub fn new(src: &str) -> Result<Self, SyntaxError> {
        Ok(Self { tokens: tokenize(src)?, at: 0 })
    }

    pub fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    pub fn peek_kind(&self) -> &TokenKind {
        &self.tokens[self.at].kind
    }

    pub fn peek_nth(&self, n: usize) -> &TokenKind {
        let i = (self.at + n).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    pub fn next(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    pub fn skip_newlines(&mut self) {
        while self.peek_kind() == &TokenKind::Newline {
            self.next();
        }
    }

    pub fn at_punct(&self, c: char) -> bool {
        self.peek_kind() == &TokenKind::Punct(c)
    }

    pub fn eat_punct(&mut self, c: char) -> bool {
        if self.at_punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, c: char) -> Result<Pos, SyntaxError> {
        let t = self.next();
        if t.kind == TokenKind::Punct(c) {
            Ok(t.pos)
        } else {
            Err(SyntaxError::new(t.pos, format!("expected `{c}`, found {}", describe(&t.kind))))
        }
    }

    pub fn expect_ident(&mut self) -> Result<(String, Pos), SyntaxError> {
        let t = self.next();
        match t.kind {
            TokenKind::Ident(s) => Ok((s, t.pos)),
            other => Err(SyntaxError::new(
                t.pos,
                format!("expected identifier, found {}", describe(&other)),
            )),
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<Pos, SyntaxError> {
        let t = self.next();
        match &t.kind {
            TokenKind::Ident(s) if s == kw => Ok(t.pos),
            other => Err(SyntaxError::new(t.pos, format!("expected `{kw}`, found {}", describe(other)))),
        }
    }

    /// Statement terminator: newline(s) or end of input, or a closing brace
    /// left for the caller.
    pub fn expect_end_of_statement(&mut self) -> Result<(), SyntaxError> {
        match self.peek_kind() {
            TokenKind::Newline => {
                self.skip_newlines();
                Ok(())
            }
            TokenKind::Eof | TokenKind::Punct('}') => Ok(()),
            other => Err(SyntaxError::new(
                self.peek().pos,
                format!("expected end of statement, found {}", describe(other)),
            )),
        }
    }

    pub fn parse_expr(&mut self) -> Result<Expr, SyntaxError> {
        self.parse_binary(1)
    }

    fn binop_here(&self) -> Option<BinOp> {
        match self.peek_kind() {
            TokenKind::Punct('+') => Some(BinOp::Add),
            TokenKind::Punct('-') => Some(BinOp::Sub),
            TokenKind::Punct('*') => Some(BinOp::Mul),
            TokenKind::Punct('/') => Some(BinOp::Div),
            TokenKind::Punct('^') => Some(BinOp::Pow),
            _ => None,
        }
    }

    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        let mut lhs = self.parse_unary()?;
        while let Some(op) = self.binop_here() {
            let p = op.precedence();
            if p < min_prec {
                break;
            }
            self.next();
            // A trailing operator continues the expression on the next line.
            self.skip_newlines();
            let next_min = if op == BinOp::Pow { p } else { p + 1 };
            let rhs = if op == BinOp::Pow {
                // The exponent may itself carry a unary minus: `x ^ -2`.
                self.parse_pow_operand(next_min)?
            } else {
                self.parse_binary(next_min)?
            };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_pow_operand(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        if self.eat_punct('-') {
            let inner = self.parse_pow_operand(min_prec)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        let base = self.parse_primary()?;
        if self.at_punct('^') && BinOp::Pow.precedence() >= min_prec {
            self.next();
            let rhs = self.parse_pow_operand(BinOp::Pow.precedence())?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(rhs)));
        }
        Ok(base)
    }

    fn parse_unary(&mut self) -> Result<Expr, SyntaxError> {
        if self.eat_punct('-') {
            let inner = self.parse_binary(UNARY_PREC)?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_primary()
    }

    fn parse_primary(&mut self) -> Result<Expr, SyntaxError> {
        let t = self.next();
        match t.kind {
            TokenKind::Number(v) => Ok(Expr::Num(v)),
            TokenKind::Ident(name) => {
                if self.eat_punct('(') {
                    let mut args = Vec::new();
                    if !self.eat_punct(')') {
                        loop {
                            args.push(self.parse_expr()?);
                            if self.eat_punct(')') {
                                break;
                            }
                            self.expect_punct(',')?;
                        }
                    }
                    Ok(Expr::Call(name, args, t.pos))
                } else if self.eat_punct('[') {
                    let it = self.next();
                    let idx = match it.kind {
                        TokenKind::Number(v) if v >= 0.0 && v.fract() == 0.0 => v as usize,
                        other => {
                            return Err(SyntaxError::new(
                                it.pos,
                                format!("expected integer index, found {}", describe(&other)),
                            ))
                        }
                    };
                    self.expect_punct(']')?;
                    Ok(Expr::Index(name, idx, t.pos))
                } else {
                    Ok(Expr::Ident(name, t.pos))
                }
            }
            TokenKind::Punct('(') => {
                let e = self.parse_expr()?;
                self.expect_punct(')')?;
                Ok(e)
            }
            other => Err(SyntaxError::new(t.pos, format!("expected expression, found {}", describe(&other)))),
        }
    }
}

pub fn describe(kind: &TokenKind) -> String {
    match kind {
        TokenKind::Ident(s) => format!("`{s}`"),
        TokenKind::Number(v) => format!("number {v}"),
        TokenKind::Punct(c) => format!("`{c}`"),
        TokenKind::Arrow => "`->`".into(),
        TokenKind::Newline => "end of line".into(),
        TokenKind::Eof => "end of input".into(),
    }
}

/// Parses a standalone expression (the whole input must be consumed).
pub fn parse_expr(src: &str) -> Result<Expr, SyntaxError> {
    let mut ts = TokenStream::new(src)?;
    ts.skip_newlines();
    let e = ts.parse_expr()?;
    ts.skip_newlines();
    match ts.peek_kind() {
        TokenKind::Eof => Ok(e),
        other => Err(SyntaxError::new(ts.peek().pos, format!("unexpected {}", describe(other)))),
    }
}
