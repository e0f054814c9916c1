//! Text grammar for expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' ['-'] INT | '^' '(' ['-'] INT ')')?
//! primary := NUMBER | '(' expr ')' | call | symbol
//! call    := FUNC '(' expr ')' | 'sum' '(' IDENT '=' INT '..' INT ',' expr ')'
//!          | 'D' '(' symbol ',' index ')'
//! symbol  := IDENT ('[' index (',' index)* ']')?
//! ```
//!
//! Reserved symbols: `x[mu] y[A] dy[A,mu] p[A,mu] s[mu] pext ddy[A,mu,nu]
//! Xy[mu,A] Xdy[mu,A,l] Xp[mu,A,nu] Xs[mu,nu] g[mu,nu]`. Sum ranges are
//! inclusive. Decimal literals are read as exact rationals.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use super::{Coef, Coord, Expr, Func, Param, Var};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (at offset {})", self.message, self.offset)
    }
}

impl ParseError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        ParseError { offset, message: message.into() }
    }
}

/// 1-based line and column of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let upto = &src[..offset.min(src.len())];
    let line = upto.matches('\n').count() + 1;
    let col = upto.rsplit('\n').next().map(|l| l.chars().count()).unwrap_or(0) + 1;
    (line, col)
}

#[derive(Clone, Debug)]
pub enum ParamSymbol {
    Scalar(Expr),
    Indexed { rank: usize, entries: BTreeMap<Vec<usize>, Expr> },
}

#[derive(Clone, Debug, Default)]
pub struct ParseContext {
    /// (m, n) used to range-check indices.
    pub dims: Option<(usize, usize)>,
    pub params: BTreeMap<String, ParamSymbol>,
    /// Contravariant metric g^{mu nu}, substituted for `g[mu,nu]`.
    pub metric: Option<Vec<Vec<Expr>>>,
    /// Unknown identifiers become free parameters instead of errors.
    pub permissive: bool,
}

impl ParseContext {
    pub fn with_dims(m: usize, n: usize) -> Self {
        ParseContext { dims: Some((m, n)), ..Default::default() }
    }
}

pub fn parse(src: &str, ctx: &ParseContext) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, ctx, bound: Vec::new() };
    let e = p.expr()?;
    match p.peek() {
        Tok::End => Ok(e),
        t => Err(ParseError::new(p.offset(), format!("expected operator or end of input, found {t}"))),
    }
}

pub fn parse_permissive(src: &str) -> Result<Expr, ParseError> {
    parse(src, &ParseContext { permissive: true, ..Default::default() })
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(BigRational),
    Ident(String),
    LBrack,
    RBrack,
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eq,
    DotDot,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(r) => write!(f, "number {r}"),
            Tok::Ident(s) => write!(f, "identifier '{s}'"),
            Tok::LBrack => f.write_str("'['"),
            Tok::RBrack => f.write_str("']'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
            Tok::Plus => f.write_str("'+'"),
            Tok::Minus => f.write_str("'-'"),
            Tok::Star => f.write_str("'*'"),
            Tok::Slash => f.write_str("'/'"),
            Tok::Caret => f.write_str("'^'"),
            Tok::Eq => f.write_str("'='"),
            Tok::DotDot => f.write_str("'..'"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            b'[' => Some(Tok::LBrack),
            b']' => Some(Tok::RBrack),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'=' => Some(Tok::Eq),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, start));
            i += 1;
            continue;
        }
        if c == b'.' && bytes.get(i + 1) == Some(&b'.') {
            out.push((Tok::DotDot, start));
            i += 2;
            continue;
        }
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let int_part = &src[start..i];
            let mut value = BigRational::from_integer(int_part.parse::<BigInt>().unwrap());
            // a single '.' followed by digits is a decimal; '..' is a range
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                let fs = i + 1;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let frac = &src[fs..i];
                let scale = num_traits::pow(BigInt::from(10), frac.len());
                value += BigRational::new(frac.parse::<BigInt>().unwrap(), scale);
            }
            out.push((Tok::Num(value), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let ch = src[start..].chars().next().unwrap();
        return Err(ParseError::new(start, format!("unexpected character '{ch}'")));
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ctx: &'a ParseContext,
    bound: Vec<(String, usize)>,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::new(self.offset(), format!("expected {want}, found {}", self.peek())))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    terms.push(self.term()?.neg());
                }
                _ => break,
            }
        }
        Ok(Expr::add_all(terms))
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    acc = acc * self.unary()?;
                }
                Tok::Slash => {
                    self.bump();
                    let at = self.offset();
                    let d = self.unary()?;
                    if d.is_zero() {
                        return Err(ParseError::new(at, "division by literal zero"));
                    }
                    acc = acc.div(&d);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(self.unary()?.neg());
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let paren = *self.peek() == Tok::LParen;
        if paren {
            self.bump();
        }
        let neg = *self.peek() == Tok::Minus;
        if neg {
            self.bump();
        }
        let at = self.offset();
        let k = match self.bump() {
            Tok::Num(r) if r.is_integer() => r.to_integer().to_i32(),
            _ => None,
        }
        .ok_or_else(|| ParseError::new(at, "expected integer exponent"))?;
        if paren {
            self.expect(Tok::RParen)?;
        }
        Ok(base.powi(if neg { -k } else { k }))
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(r) => Ok(Expr::num(r)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) => self.identifier(name, at),
            t => Err(ParseError::new(at, format!("expected expression, found {t}"))),
        }
    }

    fn index(&mut self) -> Result<(usize, usize), ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(r) if r.is_integer() => r
                .to_integer()
                .to_usize()
                .map(|v| (v, at))
                .ok_or_else(|| ParseError::new(at, "index must be a non-negative integer")),
            Tok::Ident(name) => self
                .bound
                .iter()
                .rev()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| (*v, at))
                .ok_or_else(|| ParseError::new(at, format!("unbound index '{name}'"))),
            t => Err(ParseError::new(at, format!("expected index, found {t}"))),
        }
    }

    fn index_list(&mut self) -> Result<Vec<(usize, usize)>, ParseError> {
        if *self.peek() != Tok::LBrack {
            return Ok(Vec::new());
        }
        self.bump();
        let mut out = vec![self.index()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            out.push(self.index()?);
        }
        self.expect(Tok::RBrack)?;
        Ok(out)
    }

    fn check(&self, ix: (usize, usize), bound: Option<usize>, what: &str) -> Result<usize, ParseError> {
        match bound {
            Some(b) if ix.0 >= b => Err(ParseError::new(
                ix.1,
                format!("{what} index {} out of range 0..{}", ix.0, b.saturating_sub(1)),
            )),
            _ => Ok(ix.0),
        }
    }

    fn coord(&mut self, name: &str, at: usize) -> Result<Option<Coord>, ParseError> {
        let arity = match name {
            "x" | "y" | "s" => 1,
            "dy" | "p" => 2,
            "pext" => 0,
            _ => return Ok(None),
        };
        let ix = self.index_list()?;
        if ix.len() != arity {
            return Err(ParseError::new(at, format!("'{name}' takes {arity} indices, got {}", ix.len())));
        }
        let m = self.ctx.dims.map(|d| d.0);
        let n = self.ctx.dims.map(|d| d.1);
        Ok(Some(match name {
            "x" => Coord::X(self.check(ix[0], m, "base")?),
            "y" => Coord::Y(self.check(ix[0], n, "field")?),
            "s" => Coord::S(self.check(ix[0], m, "base")?),
            "dy" => Coord::Dy(self.check(ix[0], n, "field")?, self.check(ix[1], m, "base")?),
            "p" => Coord::P(self.check(ix[0], n, "field")?, self.check(ix[1], m, "base")?),
            _ => Coord::Pext,
        }))
    }

    fn identifier(&mut self, name: String, at: usize) -> Result<Expr, ParseError> {
        if let Some(c) = self.coord(&name, at)? {
            return Ok(Expr::coord(c));
        }
        if let Some(f) = Func::from_name(&name) {
            self.expect(Tok::LParen)?;
            let arg = self.expr()?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::func(f, arg));
        }
        let m = self.ctx.dims.map(|d| d.0);
        let n = self.ctx.dims.map(|d| d.1);
        match name.as_str() {
            "sum" => return self.sum(),
            "D" => return self.section_derivative(at),
            "ddy" | "Xy" | "Xdy" | "Xp" | "Xs" => {
                let ix = self.index_list()?;
                let want = match name.as_str() {
                    "Xy" | "Xs" => 2,
                    _ => 3,
                };
                if ix.len() != want {
                    return Err(ParseError::new(at, format!("'{name}' takes {want} indices")));
                }
                let v = match name.as_str() {
                    "ddy" => Var::jet2(
                        self.check(ix[0], n, "field")?,
                        self.check(ix[1], m, "base")?,
                        self.check(ix[2], m, "base")?,
                    ),
                    "Xy" => Var::Coef(Coef::Y {
                        mu: self.check(ix[0], m, "base")?,
                        field: self.check(ix[1], n, "field")?,
                    }),
                    "Xdy" => Var::Coef(Coef::Dy {
                        mu: self.check(ix[0], m, "base")?,
                        field: self.check(ix[1], n, "field")?,
                        lambda: self.check(ix[2], m, "base")?,
                    }),
                    "Xp" => Var::Coef(Coef::P {
                        mu: self.check(ix[0], m, "base")?,
                        field: self.check(ix[1], n, "field")?,
                        nu: self.check(ix[2], m, "base")?,
                    }),
                    _ => Var::Coef(Coef::S {
                        mu: self.check(ix[0], m, "base")?,
                        nu: self.check(ix[1], m, "base")?,
                    }),
                };
                return Ok(Expr::var(v));
            }
            _ => {}
        }
        if let Some(sym) = self.ctx.params.get(&name) {
            let ix = self.index_list()?;
            return match sym {
                ParamSymbol::Scalar(e) if ix.is_empty() => Ok(e.clone()),
                ParamSymbol::Scalar(_) => Err(ParseError::new(at, format!("parameter '{name}' takes no indices"))),
                ParamSymbol::Indexed { rank, entries } => {
                    if ix.len() != *rank {
                        return Err(ParseError::new(at, format!("parameter '{name}' takes {rank} indices")));
                    }
                    let key: Vec<usize> = ix.iter().map(|i| i.0).collect();
                    entries.get(&key).cloned().ok_or_else(|| {
                        ParseError::new(ix[0].1, format!("parameter '{name}' has no entry {key:?}"))
                    })
                }
            };
        }
        if name == "g" {
            if let Some(g) = &self.ctx.metric {
                let ix = self.index_list()?;
                if ix.len() != 2 {
                    return Err(ParseError::new(at, "'g' takes 2 indices"));
                }
                let a = self.check(ix[0], Some(g.len()), "base")?;
                let b = self.check(ix[1], Some(g.len()), "base")?;
                return Ok(g[a][b].clone());
            }
        }
        if self.ctx.permissive {
            let ix = self.index_list()?;
            return Ok(Expr::var(Var::Param(Param::new(name, ix.iter().map(|i| i.0).collect()))));
        }
        Err(ParseError::new(at, format!("undefined symbol '{name}'")))
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen)?;
        let at = self.offset();
        let var = match self.bump() {
            Tok::Ident(v) => v,
            t => return Err(ParseError::new(at, format!("expected summation index, found {t}"))),
        };
        self.expect(Tok::Eq)?;
        let (lo, _) = self.index()?;
        self.expect(Tok::DotDot)?;
        let (hi, _) = self.index()?;
        self.expect(Tok::Comma)?;
        let body_start = self.pos;
        let mut terms = Vec::new();
        let mut end = body_start;
        if lo > hi {
            // still parse the body once so syntax errors surface
            self.bound.push((var.clone(), lo));
            self.expr()?;
            self.bound.pop();
            end = self.pos;
        }
        for v in lo..=hi {
            self.pos = body_start;
            self.bound.push((var.clone(), v));
            let r = self.expr();
            self.bound.pop();
            terms.push(r?);
            end = self.pos;
        }
        self.pos = end;
        self.expect(Tok::RParen)?;
        Ok(Expr::add_all(terms))
    }

    fn section_derivative(&mut self, at: usize) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen)?;
        let inner_at = self.offset();
        let name = match self.bump() {
            Tok::Ident(s) => s,
            t => return Err(ParseError::new(inner_at, format!("expected coordinate, found {t}"))),
        };
        let c = self
            .coord(&name, inner_at)?
            .ok_or_else(|| ParseError::new(inner_at, "D(...) takes a coordinate"))?;
        self.expect(Tok::Comma)?;
        let ix = self.index()?;
        let wrt = self.check(ix, self.ctx.dims.map(|d| d.0), "base")?;
        self.expect(Tok::RParen)?;
        Ok(match c {
            Coord::Dy(a, mu) => Expr::var(Var::jet2(a, mu, wrt)),
            Coord::X(mu) => {
                if mu == wrt {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Coord::Pext => return Err(ParseError::new(at, "D(pext, .) is not a section derivative")),
            other => Expr::var(Var::Deriv { of: other, wrt }),
        })
    }
}
