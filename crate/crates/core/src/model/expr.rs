//! Arithmetic expressions over an agent's own state and its neighbors' states.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | constant | symbol | symbol '[' k ']'
//!          | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Symbols are `x_i` (own state) and `x_j1`, `x_j2`, ... (neighbors in declared
//! order). A bare symbol is a vector and may only flow into vector arithmetic
//! and `norm`; `x_i[k]` selects the 1-based coordinate `k`. Named constants
//! (`pi`, `e` and user parameters) are substituted while parsing.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("unexpected character {ch:?} at offset {pos}")]
    Lex { pos: usize, ch: char },
    #[error("unbalanced parentheses at offset {pos}")]
    Unbalanced { pos: usize },
    #[error("unknown identifier `{name}` at offset {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("function `{func}` expects {expected} argument(s), got {found}")]
    Arity {
        func: String,
        expected: usize,
        found: usize,
    },
    #[error("type mismatch: {0}")]
    Type(String),
    #[error("unexpected token {found} at offset {pos}")]
    Unexpected { pos: usize, found: String },
    #[error("empty expression")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("sqrt of negative value {0}")]
    NegativeSqrt(f64),
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
    #[error("state dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{source} at x_i = {x_i:?}, x_j = {x_j:?}")]
    At {
        #[source]
        source: Box<EvalError>,
        x_i: Vec<f64>,
        x_j: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Own,
    /// 1-based position in the agent's neighbor tuple.
    Neighbor(usize),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Own => write!(f, "x_i"),
            Symbol::Neighbor(k) => write!(f, "x_j{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Norm,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "norm" => Func::Norm,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Norm => "norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Coordinate `index` (0-based) of a symbol.
    Component(Symbol, usize),
    /// A whole state vector.
    Vector(Symbol),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Scalar,
    Vector,
}

/// What the parser needs to resolve identifiers.
#[derive(Debug, Clone, Default)]
pub struct ParseContext {
    pub dim: usize,
    pub neighbors: usize,
    pub params: BTreeMap<String, f64>,
}

impl ParseContext {
    pub fn new(dim: usize, neighbors: usize) -> Self {
        Self {
            dim,
            neighbors,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Op(char),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Op(c) => write!(f, "`{c}`"),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == '.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = bytes[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| ParseError::Lex { pos: start, ch: c })?;
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(bytes[start..i].iter().collect())));
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            _ => return Err(ParseError::Lex { pos: i, ch: c }),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    ctx: &'a ParseContext,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_close(&mut self, close: Tok) -> Result<(), ParseError> {
        match self.peek() {
            Some(t) if *t == close => {
                self.pos += 1;
                Ok(())
            }
            None => Err(ParseError::Unbalanced { pos: self.end }),
            Some(t) => Err(ParseError::Unexpected {
                pos: self.offset(),
                found: t.to_string(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn symbol(&self, name: &str) -> Option<Symbol> {
        if name == "x_i" {
            return Some(Symbol::Own);
        }
        let k: usize = name.strip_prefix("x_j")?.parse().ok()?;
        (1..=self.ctx.neighbors)
            .contains(&k)
            .then_some(Symbol::Neighbor(k))
    }

    fn unclosed(&self) -> bool {
        let mut depth = 0i64;
        for (_, t) in &self.toks[..self.pos.min(self.toks.len())] {
            match t {
                Tok::LParen | Tok::LBracket => depth += 1,
                Tok::RParen | Tok::RBracket => depth -= 1,
                _ => {}
            }
        }
        depth > 0
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            None => Err(if self.toks.is_empty() {
                ParseError::Empty
            } else if self.unclosed() {
                ParseError::Unbalanced { pos: self.end }
            } else {
                ParseError::Unexpected {
                    pos: at,
                    found: "end of input".into(),
                }
            }),
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect_close(Tok::RParen)?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(func) = Func::from_name(&name) {
                    if self.peek() != Some(&Tok::LParen) {
                        return Err(ParseError::Unexpected {
                            pos: self.offset(),
                            found: self
                                .peek()
                                .map(|t| t.to_string())
                                .unwrap_or_else(|| "end of input".into()),
                        });
                    }
                    self.pos += 1;
                    let mut args = Vec::new();
                    if self.peek() != Some(&Tok::RParen) {
                        args.push(self.expr()?);
                        while self.peek() == Some(&Tok::Comma) {
                            self.pos += 1;
                            args.push(self.expr()?);
                        }
                    }
                    self.expect_close(Tok::RParen)?;
                    if args.len() != 1 {
                        return Err(ParseError::Arity {
                            func: name,
                            expected: 1,
                            found: args.len(),
                        });
                    }
                    return Ok(Expr::Call(func, Box::new(args.pop().unwrap())));
                }
                if let Some(sym) = self.symbol(&name) {
                    if self.peek() == Some(&Tok::LBracket) {
                        self.pos += 1;
                        let idx_at = self.offset();
                        let k = match self.bump() {
                            Some(Tok::Num(v)) if v.fract() == 0.0 && v >= 1.0 => v as usize,
                            Some(t) => {
                                return Err(ParseError::Unexpected {
                                    pos: idx_at,
                                    found: t.to_string(),
                                })
                            }
                            None => return Err(ParseError::Unbalanced { pos: self.end }),
                        };
                        self.expect_close(Tok::RBracket)?;
                        if k > self.ctx.dim {
                            return Err(ParseError::UnknownIdentifier {
                                name: format!("{name}[{k}]"),
                                pos: at,
                            });
                        }
                        return Ok(Expr::Component(sym, k - 1));
                    }
                    return Ok(Expr::Vector(sym));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    _ => match self.ctx.params.get(&name) {
                        Some(v) => Ok(Expr::Const(*v)),
                        None => Err(ParseError::UnknownIdentifier { name, pos: at }),
                    },
                }
            }
            Some(Tok::RParen) | Some(Tok::RBracket) => Err(ParseError::Unbalanced { pos: at }),
            Some(t) => Err(ParseError::Unexpected {
                pos: at,
                found: t.to_string(),
            }),
        }
    }
}

fn kind_of(e: &Expr) -> Result<Kind, ParseError> {
    Ok(match e {
        Expr::Const(_) | Expr::Component(..) => Kind::Scalar,
        Expr::Vector(_) => Kind::Vector,
        Expr::Neg(a) => kind_of(a)?,
        Expr::Call(f, a) => {
            let k = kind_of(a)?;
            match (f, k) {
                (Func::Norm, _) => Kind::Scalar,
                (_, Kind::Scalar) => Kind::Scalar,
                (_, Kind::Vector) => {
                    return Err(ParseError::Type(format!(
                        "`{}` takes a scalar argument",
                        f.name()
                    )))
                }
            }
        }
        Expr::Binary(op, a, b) => {
            let (ka, kb) = (kind_of(a)?, kind_of(b)?);
            use Kind::*;
            match (op, ka, kb) {
                (_, Scalar, Scalar) => Scalar,
                (BinOp::Add | BinOp::Sub, Vector, Vector) => Vector,
                (BinOp::Mul, Scalar, Vector) | (BinOp::Mul, Vector, Scalar) => Vector,
                (BinOp::Div, Vector, Scalar) => Vector,
                _ => {
                    return Err(ParseError::Type(format!(
                        "operator {op:?} not defined for {ka:?} and {kb:?}"
                    )))
                }
            }
        }
    })
}

/// Parses one scalar-valued expression.
pub fn parse_expression(text: &str, ctx: &ParseContext) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.chars().count(),
        ctx,
    };
    let e = p.expr()?;
    if let Some(t) = p.peek() {
        let pos = p.offset();
        return Err(match t {
            Tok::RParen | Tok::RBracket => ParseError::Unbalanced { pos },
            t => ParseError::Unexpected {
                pos,
                found: t.to_string(),
            },
        });
    }
    if kind_of(&e)? != Kind::Scalar {
        return Err(ParseError::Type(
            "state coordinate expression must be scalar".into(),
        ));
    }
    Ok(e)
}

enum Value {
    S(f64),
    V(Vec<f64>),
}

fn finite(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(what))
    }
}

impl Expr {
    /// Evaluates the expression; `x_j` is the concatenated neighbor block.
    pub fn eval(&self, x_i: &[f64], x_j: &[f64]) -> Result<f64, EvalError> {
        match self.eval_value(x_i, x_j)? {
            Value::S(v) => Ok(v),
            Value::V(_) => unreachable!("type-checked at parse time"),
        }
    }

    fn sym<'a>(sym: Symbol, x_i: &'a [f64], x_j: &'a [f64]) -> &'a [f64] {
        match sym {
            Symbol::Own => x_i,
            Symbol::Neighbor(k) => {
                let n = x_i.len();
                &x_j[(k - 1) * n..k * n]
            }
        }
    }

    fn eval_value(&self, x_i: &[f64], x_j: &[f64]) -> Result<Value, EvalError> {
        Ok(match self {
            Expr::Const(v) => Value::S(*v),
            Expr::Component(s, k) => Value::S(Self::sym(*s, x_i, x_j)[*k]),
            Expr::Vector(s) => Value::V(Self::sym(*s, x_i, x_j).to_vec()),
            Expr::Neg(a) => match a.eval_value(x_i, x_j)? {
                Value::S(v) => Value::S(-v),
                Value::V(v) => Value::V(v.into_iter().map(|x| -x).collect()),
            },
            Expr::Call(f, a) => {
                let arg = a.eval_value(x_i, x_j)?;
                let x = match (f, arg) {
                    (Func::Norm, Value::V(v)) => return Ok(Value::S(crate::linalg::norm(&v))),
                    (_, Value::S(x)) => x,
                    (_, Value::V(_)) => unreachable!("type-checked at parse time"),
                };
                Value::S(match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => finite(x.exp(), "exp")?,
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::NegativeSqrt(x));
                        }
                        x.sqrt()
                    }
                    Func::Abs | Func::Norm => x.abs(),
                })
            }
            Expr::Binary(op, a, b) => {
                let (va, vb) = (a.eval_value(x_i, x_j)?, b.eval_value(x_i, x_j)?);
                match (op, va, vb) {
                    (BinOp::Add, Value::S(x), Value::S(y)) => Value::S(x + y),
                    (BinOp::Sub, Value::S(x), Value::S(y)) => Value::S(x - y),
                    (BinOp::Mul, Value::S(x), Value::S(y)) => Value::S(x * y),
                    (BinOp::Div, Value::S(x), Value::S(y)) => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        Value::S(x / y)
                    }
                    (BinOp::Pow, Value::S(x), Value::S(y)) => Value::S(finite(x.powf(y), "^")?),
                    (BinOp::Add, Value::V(x), Value::V(y)) => {
                        Value::V(x.iter().zip(&y).map(|(p, q)| p + q).collect())
                    }
                    (BinOp::Sub, Value::V(x), Value::V(y)) => {
                        Value::V(x.iter().zip(&y).map(|(p, q)| p - q).collect())
                    }
                    (BinOp::Mul, Value::S(s), Value::V(v))
                    | (BinOp::Mul, Value::V(v), Value::S(s)) => {
                        Value::V(v.into_iter().map(|x| x * s).collect())
                    }
                    (BinOp::Div, Value::V(v), Value::S(s)) => {
                        if s == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        Value::V(v.into_iter().map(|x| x / s).collect())
                    }
                    _ => unreachable!("type-checked at parse time"),
                }
            }
        })
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized; re-parsing yields an equivalent expression.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if *v < 0.0 {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Component(s, k) => write!(f, "{s}[{}]", k + 1),
            Expr::Vector(s) => write!(f, "{s}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Binary(op, a, b) => {
                let c = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                    BinOp::Pow => '^',
                };
                write!(f, "({a} {c} {b})")
            }
        }
    }
}
