//! Scalar expressions over named chart variables.
//!
//! An [`Expr`] is an immutable, reference-counted tree. Constructors fold
//! constants and drop neutral elements, nothing more. Variables are stored by
//! index; a [`Scope`] maps names to indices for parsing and printing.

mod diff;
mod parse;

use std::fmt;
use std::sync::Arc;

pub use parse::{ParseError, ParseErrorKind};

/// Unary functions understood by the parser and the differentiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    /// Power with a constant exponent.
    Pow(Expr, f64),
    Func(Func, Expr),
}

/// Immutable expression tree; cloning is a reference-count bump.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

/// Reasons an evaluation can fail. No evaluation ever returns NaN or an
/// infinity silently.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("ln of non-positive value {0}")]
    LnDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("non-integer power {exponent} of negative base {base}")]
    PowDomain { base: f64, exponent: f64 },
    #[error("derivative of abs evaluated at its kink")]
    AbsKink,
    #[error("non-finite result in {0}")]
    NonFinite(&'static str),
    #[error("variable index {0} is not bound")]
    Unbound(usize),
    #[error("unknown variable `{0}`")]
    UnknownName(String),
}

fn finite(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite(what))
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    fn wrap(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn constant(v: f64) -> Expr {
        Expr::wrap(Node::Const(v))
    }

    pub fn zero() -> Expr {
        Expr::constant(0.0)
    }

    pub fn one() -> Expr {
        Expr::constant(1.0)
    }

    pub fn var(index: usize) -> Expr {
        Expr::wrap(Node::Var(index))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    pub fn neg(&self) -> Expr {
        match self.node() {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, rhs: &Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => rhs.clone(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Expr::wrap(Node::Add(self.clone(), rhs.clone())),
        }
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), _) if a == 0.0 => rhs.neg(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Expr::wrap(Node::Sub(self.clone(), rhs.clone())),
        }
    }

    pub fn mul(&self, rhs: &Expr) -> Expr {
        if self.is_zero() || rhs.is_zero() {
            return Expr::zero();
        }
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) if a == 1.0 => rhs.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            (Some(a), _) if a == -1.0 => rhs.neg(),
            (_, Some(b)) if b == -1.0 => self.neg(),
            _ => Expr::wrap(Node::Mul(self.clone(), rhs.clone())),
        }
    }

    pub fn div(&self, rhs: &Expr) -> Expr {
        if rhs.is_one() {
            return self.clone();
        }
        match (self.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::constant(a / b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            _ => Expr::wrap(Node::Div(self.clone(), rhs.clone())),
        }
    }

    pub fn powf(&self, exponent: f64) -> Expr {
        if exponent == 0.0 {
            return Expr::one();
        }
        if exponent == 1.0 {
            return self.clone();
        }
        match self.node() {
            Node::Const(c) => {
                let v = pow_value(*c, exponent);
                match v {
                    Ok(v) => Expr::constant(v),
                    Err(_) => Expr::wrap(Node::Pow(self.clone(), exponent)),
                }
            }
            _ => Expr::wrap(Node::Pow(self.clone(), exponent)),
        }
    }

    pub fn apply(&self, f: Func) -> Expr {
        if let Some(c) = self.as_const() {
            if let Ok(v) = apply_value(f, c) {
                return Expr::constant(v);
            }
        }
        Expr::wrap(Node::Func(f, self.clone()))
    }

    pub fn exp(&self) -> Expr {
        self.apply(Func::Exp)
    }

    pub fn ln(&self) -> Expr {
        self.apply(Func::Ln)
    }

    pub fn sin(&self) -> Expr {
        self.apply(Func::Sin)
    }

    pub fn cos(&self) -> Expr {
        self.apply(Func::Cos)
    }

    pub fn sqrt(&self) -> Expr {
        self.apply(Func::Sqrt)
    }

    pub fn abs(&self) -> Expr {
        self.apply(Func::Abs)
    }

    pub fn scale(&self, c: f64) -> Expr {
        Expr::constant(c).mul(self)
    }

    /// Evaluates with variable `i` bound to `point[i]`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        match self.node() {
            Node::Const(c) => Ok(*c),
            Node::Var(i) => point.get(*i).copied().ok_or(EvalError::Unbound(*i)),
            Node::Neg(a) => Ok(-a.eval(point)?),
            Node::Add(a, b) => finite(a.eval(point)? + b.eval(point)?, "addition"),
            Node::Sub(a, b) => finite(a.eval(point)? - b.eval(point)?, "subtraction"),
            Node::Mul(a, b) => finite(a.eval(point)? * b.eval(point)?, "multiplication"),
            Node::Div(a, b) => {
                let num = a.eval(point)?;
                let den = b.eval(point)?;
                if den == 0.0 {
                    // sign(v) = v/|v| is how abs' is represented; report the kink.
                    if let Node::Func(Func::Abs, _) = b.node() {
                        return Err(EvalError::AbsKink);
                    }
                    return Err(EvalError::DivisionByZero);
                }
                finite(num / den, "division")
            }
            Node::Pow(a, p) => pow_value(a.eval(point)?, *p),
            Node::Func(f, a) => apply_value(*f, a.eval(point)?),
        }
    }

    /// Largest variable index used plus one (0 for constant expressions).
    pub fn arity(&self) -> usize {
        match self.node() {
            Node::Const(_) => 0,
            Node::Var(i) => i + 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.arity(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self.node() {
            Node::Const(_) => false,
            Node::Var(i) => *i == var,
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => a.depends_on(var),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self.node() {
            Node::Const(_) | Node::Var(_) => 1,
            Node::Neg(a) | Node::Pow(a, _) | Node::Func(_, a) => 1 + a.node_count(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                1 + a.node_count() + b.node_count()
            }
        }
    }

    /// Replaces every variable `i` by `subs[i]`.
    pub fn substitute(&self, subs: &[Expr]) -> Expr {
        match self.node() {
            Node::Const(_) => self.clone(),
            Node::Var(i) => subs.get(*i).cloned().unwrap_or_else(|| self.clone()),
            Node::Neg(a) => a.substitute(subs).neg(),
            Node::Add(a, b) => a.substitute(subs).add(&b.substitute(subs)),
            Node::Sub(a, b) => a.substitute(subs).sub(&b.substitute(subs)),
            Node::Mul(a, b) => a.substitute(subs).mul(&b.substitute(subs)),
            Node::Div(a, b) => a.substitute(subs).div(&b.substitute(subs)),
            Node::Pow(a, p) => a.substitute(subs).powf(*p),
            Node::Func(f, a) => a.substitute(subs).apply(*f),
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn differentiate(&self, var: usize) -> Expr {
        diff::differentiate(self, var)
    }

    /// Prints with the names of `scope`; the output re-parses to an
    /// evaluation-equivalent tree.
    pub fn display<'a>(&'a self, scope: &'a Scope) -> Display<'a> {
        Display { expr: self, scope }
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display(&Scope::default()))
    }
}

fn pow_value(base: f64, p: f64) -> Result<f64, EvalError> {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        if base == 0.0 && p < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        return finite(base.powi(p as i32), "power");
    }
    if base < 0.0 {
        return Err(EvalError::PowDomain { base, exponent: p });
    }
    if base == 0.0 && p < 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    finite(base.powf(p), "power")
}

fn apply_value(f: Func, v: f64) -> Result<f64, EvalError> {
    match f {
        Func::Exp => finite(v.exp(), "exp"),
        Func::Ln => {
            if v <= 0.0 {
                Err(EvalError::LnDomain(v))
            } else {
                finite(v.ln(), "ln")
            }
        }
        Func::Sin => finite(v.sin(), "sin"),
        Func::Cos => finite(v.cos(), "cos"),
        Func::Sqrt => {
            if v < 0.0 {
                Err(EvalError::SqrtDomain(v))
            } else {
                Ok(v.sqrt())
            }
        }
        Func::Abs => Ok(v.abs()),
    }
}

/// Ordered list of variable names; index `i` is variable `i` of an [`Expr`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scope {
    names: Vec<String>,
}

impl Scope {
    pub fn new<I, S>(names: I) -> Scope
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Scope {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn var(&self, name: &str) -> Option<Expr> {
        self.index_of(name).map(Expr::var)
    }

    pub fn parse(&self, source: &str) -> Result<Expr, ParseError> {
        parse::parse(source, self)
    }

    /// Evaluates with named bindings; every variable of `e` must be bound.
    pub fn eval_named(&self, e: &Expr, bindings: &[(&str, f64)]) -> Result<f64, EvalError> {
        let mut point = vec![f64::NAN; self.names.len()];
        let mut bound = vec![false; self.names.len()];
        for (name, value) in bindings {
            let i = self
                .index_of(name)
                .ok_or_else(|| EvalError::UnknownName((*name).to_string()))?;
            point[i] = *value;
            bound[i] = true;
        }
        for (i, b) in bound.iter().enumerate() {
            if !b && e.depends_on(i) {
                return Err(EvalError::Unbound(i));
            }
        }
        e.eval(&point)
    }
}

pub struct Display<'a> {
    expr: &'a Expr,
    scope: &'a Scope,
}

// Binding strength used to decide where parentheses are needed.
const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POW: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e.node() {
        Node::Const(c) if *c < 0.0 => PREC_UNARY,
        Node::Const(_) | Node::Var(_) | Node::Func(..) => PREC_ATOM,
        Node::Neg(_) => PREC_UNARY,
        Node::Add(..) | Node::Sub(..) => PREC_ADD,
        Node::Mul(..) | Node::Div(..) => PREC_MUL,
        Node::Pow(..) => PREC_POW,
    }
}

impl Display<'_> {
    fn write(&self, e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match e.node() {
            Node::Const(c) => write!(f, "{c:?}"),
            Node::Var(i) => match self.scope.names.get(*i) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "_{i}"),
            },
            Node::Neg(a) => {
                f.write_str("-")?;
                self.child(a, PREC_UNARY, true, f)
            }
            Node::Add(a, b) => {
                self.child(a, PREC_ADD, false, f)?;
                f.write_str(" + ")?;
                self.child(b, PREC_ADD, true, f)
            }
            Node::Sub(a, b) => {
                self.child(a, PREC_ADD, false, f)?;
                f.write_str(" - ")?;
                self.child(b, PREC_ADD, true, f)
            }
            Node::Mul(a, b) => {
                self.child(a, PREC_MUL, false, f)?;
                f.write_str("*")?;
                self.child(b, PREC_MUL, true, f)
            }
            Node::Div(a, b) => {
                self.child(a, PREC_MUL, false, f)?;
                f.write_str("/")?;
                self.child(b, PREC_MUL, true, f)
            }
            Node::Pow(a, p) => {
                self.child(a, PREC_POW, true, f)?;
                if *p < 0.0 {
                    write!(f, "^({p:?})")
                } else {
                    write!(f, "^{p:?}")
                }
            }
            Node::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                self.write(a, f)?;
                f.write_str(")")
            }
        }
    }

    // `strict` parenthesizes equal precedence (right operands, pow base).
    fn child(&self, e: &Expr, parent: u8, strict: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = precedence(e);
        if p < parent || (strict && p == parent) {
            f.write_str("(")?;
            self.write(e, f)?;
            f.write_str(")")
        } else {
            self.write(e, f)
        }
    }
}

impl fmt::Display for Display<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f)
    }
}
