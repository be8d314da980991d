//! Truncated multivariate Taylor expansions.
//!
//! A [`Jet`] of order `m` at a point stores `c_α = ∂^α f / α!` for every
//! multi-index with `|α| ≤ m`. Monomials are laid out in graded order, so the
//! jet of a lower order is a prefix of the coefficient vector.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use crate::expr::{EvalError, Expr, Func, Node};

/// Monomial tables for `n` variables up to total degree `max_order`.
#[derive(Debug)]
pub struct JetSpace {
    n: usize,
    max_order: usize,
    exponents: Vec<Vec<u8>>,
    /// `degree_end[d]` = number of monomials of degree `≤ d`.
    degree_end: Vec<usize>,
    index: HashMap<Vec<u8>, usize>,
    /// Products `(i, j, k)` with `x^i x^j = x^k`, sorted by degree of `k`.
    triples: Vec<(u32, u32, u32)>,
    triples_end: Vec<usize>,
    /// `shift[v][m]` = index of `exponents[m] + e_v`, if within `max_order`.
    shift: Vec<Vec<Option<usize>>>,
    factorial: Vec<f64>,
}

impl JetSpace {
    /// Shared tables for `(n, max_order)`; built once per process.
    pub fn get(n: usize, max_order: usize) -> Arc<JetSpace> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet space cache poisoned");
        guard
            .entry((n, max_order))
            .or_insert_with(|| Arc::new(JetSpace::build(n, max_order)))
            .clone()
    }

    fn build(n: usize, max_order: usize) -> JetSpace {
        let mut exponents: Vec<Vec<u8>> = Vec::new();
        let mut degree_end = Vec::with_capacity(max_order + 1);
        for d in 0..=max_order {
            let mut current = vec![0u8; n];
            push_compositions(&mut exponents, &mut current, 0, d);
            degree_end.push(exponents.len());
        }
        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let degree = |e: &[u8]| e.iter().map(|&v| v as usize).sum::<usize>();

        let mut triples = Vec::new();
        for (i, a) in exponents.iter().enumerate() {
            for (j, b) in exponents.iter().enumerate() {
                if degree(a) + degree(b) > max_order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                triples.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        triples.sort_by_key(|&(i, j, k)| (degree(&exponents[k as usize]), k, i, j));
        let mut triples_end = vec![0; max_order + 1];
        for (d, end) in triples_end.iter_mut().enumerate() {
            *end = triples
                .iter()
                .position(|&(_, _, k)| degree(&exponents[k as usize]) > d)
                .unwrap_or(triples.len());
        }

        let shift = (0..n)
            .map(|v| {
                exponents
                    .iter()
                    .map(|e| {
                        let mut up = e.clone();
                        up[v] += 1;
                        index.get(&up).copied()
                    })
                    .collect()
            })
            .collect();
        let factorial = exponents
            .iter()
            .map(|e| e.iter().map(|&a| factorial(a as usize)).product())
            .collect();
        JetSpace {
            n,
            max_order,
            exponents,
            degree_end,
            index,
            triples,
            triples_end,
            shift,
            factorial,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    /// Number of coefficients of a jet of order `order`.
    pub fn len(&self, order: usize) -> usize {
        self.degree_end[order]
    }

    pub fn exponents(&self) -> &[Vec<u8>] {
        &self.exponents
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.index.get(alpha).copied()
    }

    pub fn degree_of(&self, m: usize) -> usize {
        self.exponents[m].iter().map(|&v| v as usize).sum()
    }

    /// `α!` for monomial `m`.
    pub fn alpha_factorial(&self, m: usize) -> f64 {
        self.factorial[m]
    }
}

fn push_compositions(out: &mut Vec<Vec<u8>>, current: &mut [u8], pos: usize, remaining: usize) {
    if pos + 1 == current.len() {
        current[pos] = remaining as u8;
        out.push(current.to_vec());
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v as u8;
        push_compositions(out, current, pos + 1, remaining - v);
    }
    current[pos] = 0;
}

/// Default maximum order of one-variable jet spaces.
pub const LINE_ORDER: usize = 8;

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[derive(Debug, Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    order: usize,
    c: Vec<f64>,
}

impl PartialEq for Jet {
    fn eq(&self, other: &Jet) -> bool {
        self.order == other.order && self.space.n == other.space.n && self.c == other.c
    }
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, order: usize, value: f64) -> Jet {
        let mut c = vec![0.0; space.len(order)];
        c[0] = value;
        Jet {
            space: space.clone(),
            order,
            c,
        }
    }

    pub fn zero(space: &Arc<JetSpace>, order: usize) -> Jet {
        Jet::constant(space, order, 0.0)
    }

    /// The coordinate function `x_v` expanded at a point where it equals `value`.
    pub fn variable(space: &Arc<JetSpace>, order: usize, v: usize, value: f64) -> Jet {
        let mut j = Jet::constant(space, order, value);
        if order >= 1 {
            j.c[1 + v] = 1.0;
        }
        j
    }

    pub fn from_coefficients(space: &Arc<JetSpace>, order: usize, c: Vec<f64>) -> Jet {
        assert_eq!(
            c.len(),
            space.len(order),
            "coefficient count does not match order"
        );
        Jet {
            space: space.clone(),
            order,
            c,
        }
    }

    /// Builds a jet from partial derivatives `∂^α f` listed in monomial order.
    pub fn from_partials(space: &Arc<JetSpace>, order: usize, partials: &[f64]) -> Jet {
        let len = space.len(order);
        let c = (0..len).map(|m| partials[m] / space.factorial[m]).collect();
        Jet {
            space: space.clone(),
            order,
            c,
        }
    }

    /// One-variable jet from derivative values `f, f′, f″, …`.
    pub fn from_derivatives(derivs: &[f64]) -> Jet {
        let order = derivs.len() - 1;
        let space = JetSpace::get(1, order.max(LINE_ORDER));
        let c = derivs
            .iter()
            .enumerate()
            .map(|(m, d)| d / factorial(m))
            .collect();
        Jet { space, order, c }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `∂^α f` for monomial index `m`.
    pub fn partial_at(&self, m: usize) -> f64 {
        self.c[m] * self.space.factorial[m]
    }

    pub fn partial(&self, alpha: &[u8]) -> f64 {
        let m = self
            .space
            .index_of(alpha)
            .expect("multi-index outside jet space");
        if m >= self.c.len() {
            panic!("multi-index above jet order");
        }
        self.partial_at(m)
    }

    /// First partial derivative `∂_v f`.
    pub fn gradient(&self, v: usize) -> f64 {
        if self.order == 0 {
            panic!("gradient of an order-0 jet");
        }
        self.c[1 + v]
    }

    /// Derivatives `f, f′, …` of a one-variable jet.
    pub fn derivatives(&self) -> Vec<f64> {
        (0..self.c.len()).map(|m| self.partial_at(m)).collect()
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet {
            space: self.space.clone(),
            order,
            c: self.c[..self.space.len(order)].to_vec(),
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            space: self.space.clone(),
            order: self.order,
            c: self.c.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add_constant(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] += s;
        out
    }

    fn zip(&self, rhs: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let order = self.order.min(rhs.order);
        let len = self.space.len(order);
        let c = (0..len).map(|m| f(self.c[m], rhs.c[m])).collect();
        Jet {
            space: self.space.clone(),
            order,
            c,
        }
    }

    pub fn mul_jet(&self, rhs: &Jet) -> Jet {
        let order = self.order.min(rhs.order);
        let mut c = vec![0.0; self.space.len(order)];
        for &(i, j, k) in &self.space.triples[..self.space.triples_end[order]] {
            c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        Jet {
            space: self.space.clone(),
            order,
            c,
        }
    }

    /// `Σ_m f^{(m)}(a₀)/m! · (self − a₀)^m` for `derivs = [f(a₀), f′(a₀), …]`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let order = self.order;
        assert!(
            derivs.len() > order,
            "not enough outer derivatives for composition"
        );
        let mut delta = self.clone();
        delta.c[0] = 0.0;
        let mut acc = Jet::constant(&self.space, order, derivs[order] / factorial(order));
        for m in (0..order).rev() {
            acc = acc.mul_jet(&delta).add_constant(derivs[m] / factorial(m));
        }
        acc
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        self.compose(&vec![e; self.order + 1])
    }

    // Expansions are taken around 1 after dividing by the constant term, which
    // keeps tiny or huge base values from overflowing the outer derivatives.
    fn normalized(&self) -> Jet {
        self.scale(1.0 / self.c[0])
    }

    pub fn ln(&self) -> Jet {
        let a = self.c[0];
        let mut d = vec![0.0];
        for m in 1..=self.order {
            let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
            d.push(sign * factorial(m - 1));
        }
        self.normalized().compose(&d).add_constant(a.ln())
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.c[0];
        let mut d = Vec::with_capacity(self.order + 1);
        let mut coeff = 1.0;
        for m in 0..=self.order {
            d.push(coeff);
            coeff *= p - m as f64;
        }
        self.normalized().compose(&d).scale(a.powf(p))
    }

    pub fn recip(&self) -> Jet {
        let a = self.c[0];
        let d: Vec<f64> = (0..=self.order)
            .map(|m| {
                if m % 2 == 0 {
                    factorial(m)
                } else {
                    -factorial(m)
                }
            })
            .collect();
        self.normalized().compose(&d).scale(1.0 / a)
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn sin(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [s, c, -s, -c];
        self.compose(&(0..=self.order).map(|m| cycle[m % 4]).collect::<Vec<_>>())
    }

    pub fn cos(&self) -> Jet {
        let (s, c) = self.c[0].sin_cos();
        let cycle = [c, -s, -c, s];
        self.compose(&(0..=self.order).map(|m| cycle[m % 4]).collect::<Vec<_>>())
    }

    pub fn div_jet(&self, rhs: &Jet) -> Jet {
        self.mul_jet(&rhs.recip())
    }

    /// `∂_v f`, one order lower.
    pub fn deriv(&self, v: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let order = self.order - 1;
        let len = self.space.len(order);
        let shift = &self.space.shift[v];
        let c = (0..len)
            .map(|m| {
                let up = shift[m].expect("shift within max order");
                (self.space.exponents[m][v] as f64 + 1.0) * self.c[up]
            })
            .collect();
        Jet {
            space: self.space.clone(),
            order,
            c,
        }
    }

    /// Restriction to the first `p` variables (the others frozen at the base point).
    pub fn restrict(&self, p: usize) -> Jet {
        let target = JetSpace::get(p, self.space.max_order);
        let len = target.len(self.order);
        let c = (0..len)
            .map(|m| {
                let mut alpha = target.exponents[m].clone();
                alpha.resize(self.space.n, 0);
                self.c[self.space.index[&alpha]]
            })
            .collect();
        Jet {
            space: target,
            order: self.order,
            c,
        }
    }

    /// Frobenius norms `|∂^j f|` of the symmetric derivative tensors, `j = 0..=order`.
    pub fn derivative_norms(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.order + 1];
        for m in 0..self.c.len() {
            let d = self.space.degree_of(m);
            // Σ over ordered index tuples of (∂^α f)² = Σ_α (j!/α!) (α! c_α)².
            let af = self.space.factorial[m];
            sums[d] += factorial(d) / af * (af * self.c[m]).powi(2);
        }
        sums.into_iter().map(f64::sqrt).collect()
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.zip(rhs, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.mul_jet(rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// Taylor-mode evaluation of an expression at `point`.
pub fn eval_expr(
    e: &Expr,
    space: &Arc<JetSpace>,
    order: usize,
    point: &[f64],
) -> Result<Jet, EvalError> {
    let vars: Vec<Jet> = (0..space.dim())
        .map(|v| Jet::variable(space, order, v, point[v]))
        .collect();
    eval_expr_with(e, &vars)
}

/// Evaluates `e` with variable `i` replaced by the jet `vars[i]`.
pub fn eval_expr_with(e: &Expr, vars: &[Jet]) -> Result<Jet, EvalError> {
    let space = vars
        .first()
        .map(|j| j.space.clone())
        .unwrap_or_else(|| JetSpace::get(1, 1));
    let order = vars.first().map(|j| j.order).unwrap_or(0);
    let check = |j: Jet, what: &'static str| {
        if j.c.iter().all(|v| v.is_finite()) {
            Ok(j)
        } else {
            Err(EvalError::NonFinite(what))
        }
    };
    match e.node() {
        Node::Const(c) => Ok(Jet::constant(&space, order, *c)),
        Node::Var(i) => vars.get(*i).cloned().ok_or(EvalError::Unbound(*i)),
        Node::Neg(a) => Ok(-&eval_expr_with(a, vars)?),
        Node::Add(a, b) => Ok(&eval_expr_with(a, vars)? + &eval_expr_with(b, vars)?),
        Node::Sub(a, b) => Ok(&eval_expr_with(a, vars)? - &eval_expr_with(b, vars)?),
        Node::Mul(a, b) => check(
            &eval_expr_with(a, vars)? * &eval_expr_with(b, vars)?,
            "multiplication",
        ),
        Node::Div(a, b) => {
            let den = eval_expr_with(b, vars)?;
            if den.value() == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            check(eval_expr_with(a, vars)?.div_jet(&den), "division")
        }
        Node::Pow(a, p) => {
            let base = eval_expr_with(a, vars)?;
            let b0 = base.value();
            if p.fract() == 0.0 && *p >= 0.0 {
                let mut acc = Jet::constant(&space, base.order, 1.0);
                for _ in 0..(*p as usize) {
                    acc = &acc * &base;
                }
                return check(acc, "power");
            }
            if b0 == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            if b0 < 0.0 && p.fract() != 0.0 {
                return Err(EvalError::PowDomain {
                    base: b0,
                    exponent: *p,
                });
            }
            check(base.powf(*p), "power")
        }
        Node::Func(f, a) => {
            let arg = eval_expr_with(a, vars)?;
            let a0 = arg.value();
            let out = match f {
                Func::Exp => arg.exp(),
                Func::Ln => {
                    if a0 <= 0.0 {
                        return Err(EvalError::LnDomain(a0));
                    }
                    arg.ln()
                }
                Func::Sin => arg.sin(),
                Func::Cos => arg.cos(),
                Func::Sqrt => {
                    if a0 < 0.0 {
                        return Err(EvalError::SqrtDomain(a0));
                    }
                    if a0 == 0.0 && arg.order > 0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    arg.sqrt()
                }
                Func::Abs => {
                    if a0 == 0.0 && arg.order > 0 {
                        return Err(EvalError::AbsKink);
                    }
                    arg.scale(a0.signum())
                }
            };
            check(out, f.name())
        }
    }
}
