//! Scene definition language: metrics, one-forms and vector fields as
//! parsed expression trees over base coordinates.
//!
//! A scene file declares a dimension, a chart domain, named scalar
//! parameters, a symmetric matrix of metric coefficient expressions, an
//! optional one-form and any number of named vector fields:
//!
//! ```text
//! dim 2;
//! chart ball 1;
//! param c = 0.2;
//! metric a[1][1] = 1  a[2][2] = 1  a[1][2] = 0;
//! oneform b[1] = -c*x2  b[2] = c*x1;
//! vectorfield rot  V[1] = -x2  V[2] = x1;
//! ```
//!
//! Expressions use `+ - * / ^` with conventional precedence (`^` binds
//! tightest and associates right, then unary minus, then `* /`, then
//! `+ -`), parentheses, the functions `sin cos exp ln sqrt abs`, numeric
//! literals, parameter names and coordinates `x1..xn`. `#` starts a
//! comment running to the end of the line; whitespace is insignificant.
//! Only the upper triangle of the metric is required, the lower triangle
//! is mirrored; if both triangles are present they must be identical
//! expression trees. All user expressions live on the base manifold:
//! there is no `y` in the language.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jet::{Jet, JetScope};
use crate::sample::{Chart, HaltonChart};

/// Unary functions available in scene expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

impl Func {
    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        match s {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }
}

/// Expression tree over base coordinates and named parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// 0-based coordinate index; prints as `x{i+1}`.
    Coord(usize),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn coord(i: usize) -> Expr {
        Expr::Coord(i)
    }

    /// Evaluate at a base point.
    pub fn eval(&self, x: &[f64], params: &BTreeMap<String, f64>) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => {
                if *i >= x.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "coordinate x{} on a {}-dimensional point",
                        i + 1,
                        x.len()
                    )));
                }
                x[*i]
            }
            Expr::Param(name) => *params.get(name).ok_or_else(|| Error::UnknownIdentifier {
                name: name.clone(),
                line: 0,
                col: 0,
            })?,
            Expr::Neg(e) => -e.eval(x, params)?,
            Expr::Add(a, b) => a.eval(x, params)? + b.eval(x, params)?,
            Expr::Sub(a, b) => a.eval(x, params)? - b.eval(x, params)?,
            Expr::Mul(a, b) => a.eval(x, params)? * b.eval(x, params)?,
            Expr::Div(a, b) => {
                let d = b.eval(x, params)?;
                if d == 0.0 {
                    return Err(Error::DomainError {
                        op: "div",
                        detail: "scene expression divides by zero".into(),
                    });
                }
                a.eval(x, params)? / d
            }
            Expr::Pow(a, b) => {
                let base = a.eval(x, params)?;
                let exp = b.eval(x, params)?;
                let r = if exp.fract() == 0.0 && exp.abs() < 1e9 {
                    base.powi(exp as i32)
                } else {
                    base.powf(exp)
                };
                if !r.is_finite() {
                    return Err(Error::DomainError {
                        op: "pow",
                        detail: format!("{base}^{exp} is not finite"),
                    });
                }
                r
            }
            Expr::Call(f, e) => {
                let v = e.eval(x, params)?;
                let r = match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                };
                if !r.is_finite() {
                    return Err(Error::DomainError {
                        op: f.name(),
                        detail: format!("{}({v}) is not finite", f.name()),
                    });
                }
                r
            }
        })
    }

    /// Expand into the jet algebra of a scope. Scene expressions are
    /// functions of x alone, so coordinates map to x-slots.
    pub fn eval_jet(&self, scope: &JetScope, params: &BTreeMap<String, f64>) -> Result<Jet> {
        Ok(match self {
            Expr::Num(v) => scope.constant(*v),
            Expr::Coord(i) => {
                if *i >= scope.dim() {
                    return Err(Error::DimensionMismatch(format!(
                        "coordinate x{} in dimension {}",
                        i + 1,
                        scope.dim()
                    )));
                }
                scope.coordinate(scope.xslot(*i))?
            }
            Expr::Param(name) => {
                let v = params.get(name).ok_or_else(|| Error::UnknownIdentifier {
                    name: name.clone(),
                    line: 0,
                    col: 0,
                })?;
                scope.constant(*v)
            }
            Expr::Neg(e) => e.eval_jet(scope, params)?.neg(),
            Expr::Add(a, b) => a.eval_jet(scope, params)?.try_add(&b.eval_jet(scope, params)?)?,
            Expr::Sub(a, b) => a.eval_jet(scope, params)?.try_sub(&b.eval_jet(scope, params)?)?,
            Expr::Mul(a, b) => a.eval_jet(scope, params)?.try_mul(&b.eval_jet(scope, params)?)?,
            Expr::Div(a, b) => a.eval_jet(scope, params)?.try_div(&b.eval_jet(scope, params)?)?,
            Expr::Pow(a, b) => {
                let base = a.eval_jet(scope, params)?;
                match b.fold() {
                    Expr::Num(e) if e.fract() == 0.0 && e.abs() < 1e9 => base.powi(e as i64)?,
                    Expr::Num(e) => base.powf(e)?,
                    other => {
                        // Variable exponent: base must stay positive.
                        let e = other.eval_jet(scope, params)?;
                        base.ln()?.try_mul(&e)?.exp()?
                    }
                }
            }
            Expr::Call(f, e) => {
                let u = e.eval_jet(scope, params)?;
                match f {
                    Func::Sin => u.sin()?,
                    Func::Cos => u.cos()?,
                    Func::Exp => u.exp()?,
                    Func::Ln => u.ln()?,
                    Func::Sqrt => u.sqrt()?,
                    Func::Abs => u.abs()?,
                }
            }
        })
    }

    /// Symbolic partial derivative by the 0-based coordinate `i`.
    /// Used by the vector-field bracket; the result is not simplified
    /// beyond constant folding.
    pub fn diff(&self, i: usize) -> Expr {
        let d = |e: &Expr| Box::new(e.diff(i));
        let b = |e: &Expr| Box::new(e.clone());
        let raw = match self {
            Expr::Num(_) | Expr::Param(_) => Expr::Num(0.0),
            Expr::Coord(j) => Expr::Num(if *j == i { 1.0 } else { 0.0 }),
            Expr::Neg(e) => Expr::Neg(d(e)),
            Expr::Add(x, y) => Expr::Add(d(x), d(y)),
            Expr::Sub(x, y) => Expr::Sub(d(x), d(y)),
            Expr::Mul(x, y) => Expr::Add(
                Box::new(Expr::Mul(d(x), b(y))),
                Box::new(Expr::Mul(b(x), d(y))),
            ),
            Expr::Div(x, y) => Expr::Div(
                Box::new(Expr::Sub(
                    Box::new(Expr::Mul(d(x), b(y))),
                    Box::new(Expr::Mul(b(x), d(y))),
                )),
                Box::new(Expr::Mul(b(y), b(y))),
            ),
            Expr::Pow(x, y) => match y.fold() {
                Expr::Num(c) => Expr::Mul(
                    Box::new(Expr::Mul(
                        Box::new(Expr::Num(c)),
                        Box::new(Expr::Pow(b(x), Box::new(Expr::Num(c - 1.0)))),
                    )),
                    d(x),
                ),
                _ => {
                    // d(x^y) = x^y * (y' ln x + y x'/x)
                    Expr::Mul(
                        Box::new(self.clone()),
                        Box::new(Expr::Add(
                            Box::new(Expr::Mul(d(y), Box::new(Expr::Call(Func::Ln, b(x))))),
                            Box::new(Expr::Div(Box::new(Expr::Mul(b(y), d(x))), b(x))),
                        )),
                    )
                }
            },
            Expr::Call(f, e) => {
                let outer = match f {
                    Func::Sin => Expr::Call(Func::Cos, b(e)),
                    Func::Cos => Expr::Neg(Box::new(Expr::Call(Func::Sin, b(e)))),
                    Func::Exp => Expr::Call(Func::Exp, b(e)),
                    Func::Ln => Expr::Div(Box::new(Expr::Num(1.0)), b(e)),
                    Func::Sqrt => Expr::Div(
                        Box::new(Expr::Num(0.5)),
                        Box::new(Expr::Call(Func::Sqrt, b(e))),
                    ),
                    // d|u| = u/|u| du; undefined at 0, as is abs itself.
                    Func::Abs => Expr::Div(b(e), Box::new(Expr::Call(Func::Abs, b(e)))),
                };
                Expr::Mul(Box::new(outer), d(e))
            }
        };
        raw.fold()
    }

    /// Constant folding with a few algebraic identities; keeps results
    /// finite (never folds through a division by zero).
    pub fn fold(&self) -> Expr {
        use Expr::*;
        let num = |e: &Expr| -> Option<f64> {
            if let Num(v) = e {
                Some(*v)
            } else {
                None
            }
        };
        match self {
            Num(_) | Coord(_) | Param(_) => self.clone(),
            Neg(e) => {
                let e = e.fold();
                match e {
                    Num(v) => Num(-v),
                    Neg(inner) => *inner,
                    other => Neg(Box::new(other)),
                }
            }
            Add(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match (num(&a), num(&b)) {
                    (Some(x), Some(y)) if (x + y).is_finite() => Num(x + y),
                    (Some(x), _) if x == 0.0 => b,
                    (_, Some(y)) if y == 0.0 => a,
                    _ => Add(Box::new(a), Box::new(b)),
                }
            }
            Sub(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match (num(&a), num(&b)) {
                    (Some(x), Some(y)) if (x - y).is_finite() => Num(x - y),
                    (_, Some(y)) if y == 0.0 => a,
                    _ => Sub(Box::new(a), Box::new(b)),
                }
            }
            Mul(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match (num(&a), num(&b)) {
                    (Some(x), Some(y)) if (x * y).is_finite() => Num(x * y),
                    (Some(x), _) if x == 0.0 => Num(0.0),
                    (_, Some(y)) if y == 0.0 => Num(0.0),
                    (Some(x), _) if x == 1.0 => b,
                    (_, Some(y)) if y == 1.0 => a,
                    _ => Mul(Box::new(a), Box::new(b)),
                }
            }
            Div(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match (num(&a), num(&b)) {
                    (Some(x), Some(y)) if y != 0.0 && (x / y).is_finite() => Num(x / y),
                    (Some(x), _) if x == 0.0 => Num(0.0),
                    (_, Some(y)) if y == 1.0 => a,
                    _ => Div(Box::new(a), Box::new(b)),
                }
            }
            Pow(a, b) => {
                let (a, b) = (a.fold(), b.fold());
                match (num(&a), num(&b)) {
                    (Some(x), Some(y)) if x.powf(y).is_finite() => Num(x.powf(y)),
                    (_, Some(y)) if y == 1.0 => a,
                    (_, Some(y)) if y == 0.0 => Num(1.0),
                    _ => Pow(Box::new(a), Box::new(b)),
                }
            }
            Call(f, e) => {
                let e = e.fold();
                if let Num(v) = e {
                    let r = match f {
                        Func::Sin => v.sin(),
                        Func::Cos => v.cos(),
                        Func::Exp => v.exp(),
                        Func::Ln => v.ln(),
                        Func::Sqrt => v.sqrt(),
                        Func::Abs => v.abs(),
                    };
                    if r.is_finite() {
                        return Num(r);
                    }
                    return Call(*f, Box::new(Num(v)));
                }
                Call(*f, Box::new(e))
            }
        }
    }

    /// Largest 0-based coordinate index appearing in the tree.
    fn max_coord(&self) -> Option<usize> {
        match self {
            Expr::Num(_) | Expr::Param(_) => None,
            Expr::Coord(i) => Some(*i),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_coord(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => match (a.max_coord(), b.max_coord()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            // A negative literal prints with a leading minus, so in text
            // it binds exactly like a negation.
            Expr::Num(v) if v.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.precedence();
        if p < min {
            write!(f, "(")?;
            self.write_prec(f, 0)?;
            return write!(f, ")");
        }
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Param(name) => write!(f, "{name}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.write_prec(f, 4)
            }
            Expr::Add(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " + ")?;
                b.write_prec(f, 2)
            }
            Expr::Sub(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " - ")?;
                b.write_prec(f, 2)
            }
            Expr::Mul(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "*")?;
                b.write_prec(f, 3)
            }
            Expr::Div(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "/")?;
                b.write_prec(f, 3)
            }
            Expr::Pow(a, b) => {
                a.write_prec(f, 5)?;
                write!(f, "^")?;
                b.write_prec(f, 3)
            }
            Expr::Call(func, e) => {
                write!(f, "{}(", func.name())?;
                e.write_prec(f, 0)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

/// Validated scene: everything the tensor pipeline needs to evaluate a
/// metric family. Immutable after construction and cheap to share.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub name: String,
    pub dim: usize,
    pub chart: Chart,
    /// Sampling safety margin, fraction of the chart kept (default 0.9).
    pub margin: f64,
    pub params: BTreeMap<String, f64>,
    /// Full symmetric matrix, row-major dim x dim.
    pub metric: Vec<Expr>,
    /// One-form components b_1..b_n; all zeros when not declared.
    pub oneform: Vec<Expr>,
    pub vectorfields: BTreeMap<String, Vec<Expr>>,
    /// Extra admission predicate for sampled base points: expr(x) must
    /// stay at or above the threshold. Used by built-in scenes whose
    /// closed forms degenerate in part of the chart.
    pub admit_min: Option<(Expr, f64)>,
}

impl SceneSpec {
    pub fn metric_entry(&self, i: usize, j: usize) -> &Expr {
        &self.metric[i * self.dim + j]
    }

    /// Evaluate the metric matrix at a base point.
    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = self.metric_entry(i, j).eval(x, &self.params)?;
            }
        }
        Ok(m)
    }

    pub fn oneform_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.oneform
            .iter()
            .map(|e| e.eval(x, &self.params))
            .collect()
    }

    /// True when some one-form component is not the literal zero the
    /// parser fills in for undeclared entries.
    pub fn has_oneform(&self) -> bool {
        self.oneform
            .iter()
            .any(|e| !matches!(e, Expr::Num(v) if *v == 0.0))
    }

    /// True if the point passes the chart margin and any extra
    /// admission constraint.
    pub fn admits(&self, x: &[f64]) -> bool {
        let inside = match &self.chart {
            Chart::Ball { r } => {
                let s: f64 = x.iter().map(|a| a * a).sum();
                s.sqrt() < r * self.margin
            }
            Chart::Box { lo, hi } => x.iter().all(|a| {
                let c = (lo + hi) / 2.0;
                let h = (hi - lo) / 2.0 * self.margin;
                (*a - c).abs() < h
            }),
        };
        if !inside {
            return false;
        }
        match &self.admit_min {
            Some((e, t)) => matches!(e.eval(x, &self.params), Ok(v) if v >= *t),
            None => true,
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Eq,
    Semi,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(v) => format!("number {v}"),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> std::result::Result<Vec<Spanned>, Error> {
    let mut out = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let bytes: Vec<char> = text.chars().collect();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        let (tline, tcol) = (line, col);
        let advance = |k: usize, i: &mut usize, col: &mut usize| {
            *i += k;
            *col += k;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '[' => {
                out.push(Spanned { tok: Tok::LBracket, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ']' => {
                out.push(Spanned { tok: Tok::RBracket, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '=' => {
                out.push(Spanned { tok: Tok::Eq, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            ';' => {
                out.push(Spanned { tok: Tok::Semi, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '+' => {
                out.push(Spanned { tok: Tok::Plus, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '-' => {
                out.push(Spanned { tok: Tok::Minus, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '*' => {
                out.push(Spanned { tok: Tok::Star, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '/' => {
                out.push(Spanned { tok: Tok::Slash, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            '^' => {
                out.push(Spanned { tok: Tok::Caret, line: tline, col: tcol });
                advance(1, &mut i, &mut col);
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == '.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
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
                let v: f64 = s.parse().map_err(|_| Error::SyntaxError {
                    line: tline,
                    col: tcol,
                    message: format!("malformed number `{s}`"),
                })?;
                col += i - start;
                out.push(Spanned { tok: Tok::Num(v), line: tline, col: tcol });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                col += i - start;
                out.push(Spanned { tok: Tok::Ident(s), line: tline, col: tcol });
            }
            other => {
                return Err(Error::SyntaxError {
                    line: tline,
                    col: tcol,
                    message: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Parameter references seen inside expressions, resolved after the
    /// whole document is read (declarations may come in any order).
    ident_refs: Vec<(String, usize, usize)>,
}

/// Raw indexed entry before dimension checks.
struct RawEntry {
    indices: Vec<usize>,
    expr: Expr,
    line: usize,
    col: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: String) -> Error {
        let t = self.peek();
        Error::SyntaxError {
            line: t.line,
            col: t.col,
            message,
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned> {
        if std::mem::discriminant(&self.peek().tok) == std::mem::discriminant(want) {
            Ok(self.bump())
        } else {
            Err(self.err_here(format!(
                "expected {what}, found {}",
                self.peek().tok.describe()
            )))
        }
    }

    fn expect_usize(&mut self, what: &str) -> Result<(usize, usize, usize)> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) if v.fract() == 0.0 && v >= 0.0 && v < 1e9 => {
                self.bump();
                Ok((v as usize, t.line, t.col))
            }
            _ => Err(self.err_here(format!(
                "expected {what}, found {}",
                t.tok.describe()
            ))),
        }
    }

    fn expect_num(&mut self, what: &str) -> Result<f64> {
        // Allow a leading minus for chart bounds and parameter values.
        let neg = if matches!(self.peek().tok, Tok::Minus) {
            self.bump();
            true
        } else {
            false
        };
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.err_here(format!(
                "expected {what}, found {}",
                t.tok.describe()
            ))),
        }
    }

    /// Skip to just past the next `;` (error recovery).
    fn synchronize(&mut self) {
        loop {
            match self.peek().tok {
                Tok::Semi => {
                    self.bump();
                    return;
                }
                Tok::Eof => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    e = Expr::Add(Box::new(e), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    e = Expr::Sub(Box::new(e), Box::new(self.term()?));
                }
                _ => return Ok(e),
            }
        }
    }

    // term := factor (('*'|'/') factor)*
    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    e = Expr::Mul(Box::new(e), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    e = Expr::Div(Box::new(e), Box::new(self.factor()?));
                }
                _ => return Ok(e),
            }
        }
    }

    // factor := '-' factor | power     (so ^ binds tighter than unary -)
    fn factor(&mut self) -> Result<Expr> {
        if matches!(self.peek().tok, Tok::Minus) {
            self.bump();
            let inner = self.factor()?;
            // Literal numbers absorb the sign directly, which keeps
            // printing and re-parsing structurally stable.
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    // power := atom ('^' factor)?     (right-assoc, exponent may be signed)
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if matches!(self.peek().tok, Tok::Caret) {
            self.bump();
            let exp = self.factor()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some(f) = Func::from_name(&name) {
                    if matches!(self.peek().tok, Tok::LParen) {
                        self.bump();
                        let arg = self.expr()?;
                        self.expect(&Tok::RParen, "`)` after function argument")?;
                        return Ok(Expr::Call(f, Box::new(arg)));
                    }
                    return Err(Error::SyntaxError {
                        line: t.line,
                        col: t.col,
                        message: format!("function `{name}` needs a parenthesized argument"),
                    });
                }
                if let Some(ix) = coord_index(&name) {
                    return Ok(Expr::Coord(ix));
                }
                self.ident_refs.push((name.clone(), t.line, t.col));
                Ok(Expr::Param(name))
            }
            other => Err(Error::SyntaxError {
                line: t.line,
                col: t.col,
                message: format!(
                    "expected a number, coordinate, parameter or `(`, found {}",
                    other.describe()
                ),
            }),
        }
    }

    /// `a[1][2] = expr` style entry with `count` bracketed indices and
    /// the given head identifier.
    fn indexed_entry(&mut self, head: &str, count: usize) -> Result<RawEntry> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) if s == head => {
                self.bump();
            }
            other => {
                return Err(Error::SyntaxError {
                    line: t.line,
                    col: t.col,
                    message: format!("expected `{head}[`, found {}", other.describe()),
                })
            }
        }
        let mut indices = Vec::with_capacity(count);
        for _ in 0..count {
            self.expect(&Tok::LBracket, "`[`")?;
            let (ix, line, col) = self.expect_usize("a 1-based index")?;
            if ix == 0 {
                return Err(Error::SyntaxError {
                    line,
                    col,
                    message: "indices are 1-based".into(),
                });
            }
            indices.push(ix - 1);
            self.expect(&Tok::RBracket, "`]`")?;
        }
        self.expect(&Tok::Eq, "`=`")?;
        let expr = self.expr()?;
        Ok(RawEntry {
            indices,
            expr,
            line: t.line,
            col: t.col,
        })
    }
}

fn coord_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let ix: usize = digits.parse().ok()?;
    if ix == 0 {
        return None;
    }
    Some(ix - 1)
}

/// Parse a scene document. On failure returns every diagnostic found
/// (the parser resynchronizes on `;` after an error).
pub fn parse_scene(text: &str) -> std::result::Result<SceneSpec, Vec<Error>> {
    let toks = match lex(text) {
        Ok(t) => t,
        Err(e) => return Err(vec![e]),
    };
    let mut p = Parser {
        toks,
        pos: 0,
        ident_refs: Vec::new(),
    };
    let mut errors: Vec<Error> = Vec::new();
    let mut dim: Option<(usize, usize, usize)> = None;
    let mut chart: Option<Chart> = None;
    let mut params: BTreeMap<String, f64> = BTreeMap::new();
    let mut metric_entries: Vec<RawEntry> = Vec::new();
    let mut oneform_entries: Vec<RawEntry> = Vec::new();
    let mut vf_entries: Vec<(String, Vec<RawEntry>)> = Vec::new();

    loop {
        let t = p.peek().clone();
        let keyword = match &t.tok {
            Tok::Eof => break,
            Tok::Ident(s) => s.clone(),
            other => {
                errors.push(Error::SyntaxError {
                    line: t.line,
                    col: t.col,
                    message: format!(
                        "expected a declaration keyword (dim, chart, param, metric, oneform, vectorfield), found {}",
                        other.describe()
                    ),
                });
                p.synchronize();
                continue;
            }
        };
        let r: Result<()> = (|| {
            match keyword.as_str() {
                "dim" => {
                    p.bump();
                    let (n, line, col) = p.expect_usize("the dimension")?;
                    if dim.is_some() {
                        return Err(Error::SyntaxError {
                            line,
                            col,
                            message: "duplicate `dim` declaration".into(),
                        });
                    }
                    if n < 2 {
                        return Err(Error::SyntaxError {
                            line,
                            col,
                            message: format!("dimension must be at least 2, got {n}"),
                        });
                    }
                    dim = Some((n, line, col));
                    p.expect(&Tok::Semi, "`;`")?;
                }
                "chart" => {
                    p.bump();
                    let kind = p.expect(&Tok::Ident(String::new()), "`ball` or `box`")?;
                    let c = match &kind.tok {
                        Tok::Ident(s) if s == "ball" => {
                            let r = p.expect_num("the ball radius")?;
                            if !(r > 0.0) {
                                return Err(Error::SyntaxError {
                                    line: kind.line,
                                    col: kind.col,
                                    message: format!("ball radius must be positive, got {r}"),
                                });
                            }
                            Chart::Ball { r }
                        }
                        Tok::Ident(s) if s == "box" => {
                            let lo = p.expect_num("the lower bound")?;
                            let hi = p.expect_num("the upper bound")?;
                            if !(hi > lo) {
                                return Err(Error::SyntaxError {
                                    line: kind.line,
                                    col: kind.col,
                                    message: format!("box needs lo < hi, got {lo} >= {hi}"),
                                });
                            }
                            Chart::Box { lo, hi }
                        }
                        other => {
                            return Err(Error::SyntaxError {
                                line: kind.line,
                                col: kind.col,
                                message: format!(
                                    "expected `ball` or `box`, found {}",
                                    other.describe()
                                ),
                            })
                        }
                    };
                    if chart.is_some() {
                        return Err(Error::SyntaxError {
                            line: kind.line,
                            col: kind.col,
                            message: "duplicate `chart` declaration".into(),
                        });
                    }
                    chart = Some(c);
                    p.expect(&Tok::Semi, "`;`")?;
                }
                "param" => {
                    p.bump();
                    let nt = p.expect(&Tok::Ident(String::new()), "a parameter name")?;
                    let name = match nt.tok {
                        Tok::Ident(s) => s,
                        _ => unreachable!(),
                    };
                    if Func::from_name(&name).is_some() || coord_index(&name).is_some() {
                        return Err(Error::SyntaxError {
                            line: nt.line,
                            col: nt.col,
                            message: format!(
                                "parameter name `{name}` collides with a function or coordinate"
                            ),
                        });
                    }
                    p.expect(&Tok::Eq, "`=`")?;
                    let v = p.expect_num("the parameter value")?;
                    if params.insert(name.clone(), v).is_some() {
                        return Err(Error::SyntaxError {
                            line: nt.line,
                            col: nt.col,
                            message: format!("duplicate parameter `{name}`"),
                        });
                    }
                    p.expect(&Tok::Semi, "`;`")?;
                }
                "metric" => {
                    p.bump();
                    loop {
                        metric_entries.push(p.indexed_entry("a", 2)?);
                        if matches!(p.peek().tok, Tok::Semi) {
                            p.bump();
                            break;
                        }
                    }
                }
                "oneform" => {
                    p.bump();
                    loop {
                        oneform_entries.push(p.indexed_entry("b", 1)?);
                        if matches!(p.peek().tok, Tok::Semi) {
                            p.bump();
                            break;
                        }
                    }
                }
                "vectorfield" => {
                    p.bump();
                    let nt = p.expect(&Tok::Ident(String::new()), "a vector field name")?;
                    let name = match nt.tok {
                        Tok::Ident(s) => s,
                        _ => unreachable!(),
                    };
                    let mut entries = Vec::new();
                    loop {
                        entries.push(p.indexed_entry("V", 1)?);
                        if matches!(p.peek().tok, Tok::Semi) {
                            p.bump();
                            break;
                        }
                    }
                    if vf_entries.iter().any(|(n, _)| *n == name) {
                        return Err(Error::SyntaxError {
                            line: nt.line,
                            col: nt.col,
                            message: format!("duplicate vector field `{name}`"),
                        });
                    }
                    vf_entries.push((name, entries));
                }
                other => {
                    return Err(Error::SyntaxError {
                        line: t.line,
                        col: t.col,
                        message: format!(
                            "unknown declaration `{other}` (expected dim, chart, param, metric, oneform or vectorfield)"
                        ),
                    });
                }
            }
            Ok(())
        })();
        if let Err(e) = r {
            errors.push(e);
            p.synchronize();
        }
    }

    // Finalize: resolve dimensions, mirror the metric, check references.
    let n = match dim {
        Some((n, _, _)) => n,
        None => {
            errors.push(Error::SyntaxError {
                line: 1,
                col: 1,
                message: "scene never declares `dim`".into(),
            });
            if !errors.is_empty() {
                return Err(errors);
            }
            unreachable!()
        }
    };

    for (name, line, col) in &p.ident_refs {
        if !params.contains_key(name) {
            errors.push(Error::UnknownIdentifier {
                name: name.clone(),
                line: *line,
                col: *col,
            });
        }
    }

    let check_coords = |e: &Expr, line: usize, col: usize, errors: &mut Vec<Error>| {
        if let Some(mc) = e.max_coord() {
            if mc >= n {
                errors.push(Error::DimensionMismatch(format!(
                    "line {line}, column {col}: coordinate x{} used in a {n}-dimensional scene",
                    mc + 1
                )));
            }
        }
    };

    let mut metric: Vec<Option<Expr>> = vec![None; n * n];
    for e in &metric_entries {
        let (i, j) = (e.indices[0], e.indices[1]);
        if i >= n || j >= n {
            errors.push(Error::DimensionMismatch(format!(
                "line {}, column {}: metric entry a[{}][{}] outside dimension {n}",
                e.line,
                e.col,
                e.indices[0] + 1,
                e.indices[1] + 1
            )));
            continue;
        }
        check_coords(&e.expr, e.line, e.col, &mut errors);
        match &metric[i * n + j] {
            Some(prev) if *prev != e.expr => {
                errors.push(Error::SyntaxError {
                    line: e.line,
                    col: e.col,
                    message: format!(
                        "metric entry a[{}][{}] conflicts with its mirror image: `{}` vs `{}`",
                        i + 1,
                        j + 1,
                        prev,
                        e.expr
                    ),
                });
            }
            Some(_) => {}
            None => {
                metric[i * n + j] = Some(e.expr.clone());
                if i != j && metric[j * n + i].is_none() {
                    metric[j * n + i] = Some(e.expr.clone());
                }
            }
        }
    }
    let metric: Vec<Expr> = metric
        .into_iter()
        .map(|o| o.unwrap_or(Expr::Num(0.0)))
        .collect();
    if metric_entries.is_empty() {
        errors.push(Error::SyntaxError {
            line: 1,
            col: 1,
            message: "scene never declares `metric`".into(),
        });
    }

    let mut oneform: Vec<Expr> = vec![Expr::Num(0.0); n];
    for e in &oneform_entries {
        let i = e.indices[0];
        if i >= n {
            errors.push(Error::DimensionMismatch(format!(
                "line {}, column {}: one-form entry b[{}] outside dimension {n}",
                e.line,
                e.col,
                i + 1
            )));
            continue;
        }
        check_coords(&e.expr, e.line, e.col, &mut errors);
        oneform[i] = e.expr.clone();
    }

    let mut vectorfields = BTreeMap::new();
    for (name, entries) in &vf_entries {
        let mut comps = vec![Expr::Num(0.0); n];
        for e in entries {
            let i = e.indices[0];
            if i >= n {
                errors.push(Error::DimensionMismatch(format!(
                    "line {}, column {}: component V[{}] of `{name}` outside dimension {n}",
                    e.line,
                    e.col,
                    i + 1
                )));
                continue;
            }
            check_coords(&e.expr, e.line, e.col, &mut errors);
            comps[i] = e.expr.clone();
        }
        vectorfields.insert(name.clone(), comps);
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    Ok(SceneSpec {
        name: "scene".into(),
        dim: n,
        chart: chart.unwrap_or(Chart::Box { lo: -1.0, hi: 1.0 }),
        margin: 0.9,
        params,
        metric,
        oneform,
        vectorfields,
        admit_min: None,
    })
}

/// Convenience wrapper returning only the first diagnostic.
pub fn parse_scene_strict(text: &str) -> Result<SceneSpec> {
    parse_scene(text).map_err(|mut v| v.remove(0))
}

/// Parse a single arithmetic expression, for inputs that carry formulas
/// outside a full scene document (vector potentials, ad hoc component
/// lists). The whole string must be consumed. Identifiers other than
/// coordinates must appear in `params`.
pub fn parse_expression(text: &str, params: &BTreeMap<String, f64>) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        ident_refs: Vec::new(),
    };
    let e = p.expr()?;
    if !matches!(p.peek().tok, Tok::Eof) {
        return Err(p.err_here("expected end of expression".into()));
    }
    for (name, line, col) in &p.ident_refs {
        if !params.contains_key(name) {
            return Err(Error::UnknownIdentifier {
                name: name.clone(),
                line: *line,
                col: *col,
            });
        }
    }
    Ok(e)
}

/// Numeric health report from probing a scene across its chart.
#[derive(Debug, Clone)]
pub struct SceneValidation {
    pub probes: usize,
    pub min_metric_eigenvalue: f64,
    pub max_condition: f64,
    pub max_beta_norm: f64,
}

/// Probe the scene at low-discrepancy points of its margin-shrunk chart:
/// the metric matrix must stay symmetric positive definite and well
/// conditioned, and the one-form must stay short (norm below 1) so the
/// combined metric stays positive.
pub fn validate_scene(spec: &SceneSpec, probes: usize, seed: u64) -> Result<SceneValidation> {
    let mut halton = HaltonChart::new(spec.dim, spec.chart.clone(), spec.margin, seed);
    let mut min_eig = f64::INFINITY;
    let mut max_cond = 0.0f64;
    let mut max_beta = 0.0f64;
    let mut visited = 0usize;
    let mut attempts = 0usize;
    while visited < probes {
        attempts += 1;
        if attempts > 100 * probes.max(8) {
            return Err(Error::SamplingExhausted {
                attempts,
                accepted: visited,
                needed: probes,
            });
        }
        let x = halton.next_point();
        if !spec.admits(&x) {
            continue;
        }
        visited += 1;
        let a = spec.metric_at(&x)?;
        let eig = a.clone().symmetric_eigen();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for ev in eig.eigenvalues.iter() {
            lo = lo.min(*ev);
            hi = hi.max(*ev);
        }
        if lo <= 0.0 {
            return Err(Error::NonPositiveDefinite {
                context: "scene metric probe",
                min_eig: lo,
            });
        }
        let cond = hi / lo;
        if cond > 1e12 {
            return Err(Error::SingularMetric {
                context: "scene metric probe",
                cond,
                limit: 1e12,
            });
        }
        min_eig = min_eig.min(lo);
        max_cond = max_cond.max(cond);
        let b = spec.oneform_at(&x)?;
        let bv = nalgebra::DVector::from_vec(b);
        let inv = a.clone().try_inverse().ok_or(Error::SingularMetric {
            context: "scene metric probe",
            cond: f64::INFINITY,
            limit: 1e12,
        })?;
        let norm2 = (inv * &bv).dot(&bv);
        let norm = norm2.max(0.0).sqrt();
        if norm >= 1.0 {
            return Err(Error::NormViolation {
                norm,
                point: format!("{x:?}"),
            });
        }
        max_beta = max_beta.max(norm);
        // Vector fields only need to evaluate cleanly.
        for comps in spec.vectorfields.values() {
            for c in comps {
                c.eval(&x, &spec.params)?;
            }
        }
    }
    Ok(SceneValidation {
        probes,
        min_metric_eigenvalue: min_eig,
        max_condition: max_cond,
        max_beta_norm: max_beta,
    })
}

/// Commutator of two vector fields given by expression components:
/// [V, W]^i = V^k d_k W^i - W^k d_k V^i, built symbolically and folded.
pub fn bracket(v: &[Expr], w: &[Expr]) -> Vec<Expr> {
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Expr::Num(0.0);
        for k in 0..n {
            let a = Expr::Mul(Box::new(v[k].clone()), Box::new(w[i].diff(k)));
            let b = Expr::Mul(Box::new(w[k].clone()), Box::new(v[i].diff(k)));
            acc = Expr::Add(Box::new(acc), Box::new(Expr::Sub(Box::new(a), Box::new(b))));
        }
        out.push(acc.fold());
    }
    out
}

/// Scene handle shared across evaluation threads.
pub type SharedScene = Arc<SceneSpec>;
