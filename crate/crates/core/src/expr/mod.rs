//! Immutable symbolic expressions over jet/multimomentum chart coordinates.
//!
//! Every scalar quantity the engine manipulates (Lagrangians, Hamiltonians,
//! form coefficients, constraint functions, equation sides) is an [`Expr`].
//! Nodes are reference counted and never mutated, so expressions can be shared
//! freely between threads.

mod compile;
mod display;
pub mod equal;
pub mod normal;
pub mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub use compile::CompiledExpr;
pub use equal::{equal, equal_with, EqualOptions, Equality};
pub use display::LatexStyle;
pub use normal::NormalForm;

/// A natural coordinate of one of the bundles 𝒫, 𝒫*, 𝒲, 𝒲₀.
///
/// Indices are 0-based. `Dy(a, mu)` is the multivelocity y^a_mu and
/// `P(a, mu)` the multimomentum p^mu_a; in both the field index comes first.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coord {
    X(usize),
    Y(usize),
    Dy(usize, usize),
    P(usize, usize),
    Pext,
    S(usize),
}

impl Coord {
    pub fn role(&self) -> &'static str {
        match self {
            Coord::X(_) => "base",
            Coord::Y(_) => "field",
            Coord::Dy(..) => "multivelocity",
            Coord::P(..) => "multimomentum",
            Coord::Pext => "extended momentum",
            Coord::S(_) => "action",
        }
    }
}

/// Coefficients of a decomposable transversal multivector field on 𝒲₀,
/// `X_mu = ∂/∂x^mu + Xy ∂/∂y + Xdy ∂/∂y_λ + Xp ∂/∂p^ν + Xs ∂/∂s^ν`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Coef {
    /// (X)^A_mu
    Y { mu: usize, field: usize },
    /// (X)^A_{mu lambda}
    Dy { mu: usize, field: usize, lambda: usize },
    /// (X)^nu_{mu A}
    P { mu: usize, field: usize, nu: usize },
    /// (X)^nu_mu
    S { mu: usize, nu: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Param {
    pub name: String,
    pub indices: Vec<usize>,
}

impl Param {
    pub fn new(name: impl Into<String>, indices: Vec<usize>) -> Self {
        Param { name: name.into(), indices }
    }
}

/// Any symbol an expression may reference.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Coord(Coord),
    Param(Param),
    /// Formal second-jet symbol ∂²y^A/∂x^mu∂x^nu, stored with `mu <= nu`.
    Jet2 { field: usize, mu: usize, nu: usize },
    /// ∂(z∘ψ)/∂x^wrt along a section ψ.
    Deriv { of: Coord, wrt: usize },
    Coef(Coef),
}

impl Var {
    pub fn jet2(field: usize, mu: usize, nu: usize) -> Var {
        let (a, b) = if mu <= nu { (mu, nu) } else { (nu, mu) };
        Var::Jet2 { field, mu: a, nu: b }
    }

    pub fn as_coord(&self) -> Option<&Coord> {
        match self {
            Var::Coord(c) => Some(c),
            _ => None,
        }
    }
}

impl From<Coord> for Var {
    fn from(c: Coord) -> Self {
        Var::Coord(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Num(BigRational),
    Var(Var),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Pow(Expr, i32),
    Neg(Expr),
    Div(Expr, Expr),
    Func(Func, Expr),
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Expr(Arc<Node>);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound symbol {0}")]
    Unbound(String),
    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    fn wrap(n: Node) -> Expr {
        Expr(Arc::new(n))
    }

    pub fn num(r: BigRational) -> Expr {
        Expr::wrap(Node::Num(r))
    }

    pub fn int(i: i64) -> Expr {
        Expr::num(BigRational::from_integer(BigInt::from(i)))
    }

    pub fn rational(n: i64, d: i64) -> Expr {
        Expr::num(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn zero() -> Expr {
        Expr::int(0)
    }

    pub fn one() -> Expr {
        Expr::int(1)
    }

    pub fn var(v: impl Into<Var>) -> Expr {
        Expr::wrap(Node::Var(v.into()))
    }

    pub fn coord(c: Coord) -> Expr {
        Expr::var(Var::Coord(c))
    }

    pub fn x(mu: usize) -> Expr {
        Expr::coord(Coord::X(mu))
    }
    pub fn y(a: usize) -> Expr {
        Expr::coord(Coord::Y(a))
    }
    pub fn dy(a: usize, mu: usize) -> Expr {
        Expr::coord(Coord::Dy(a, mu))
    }
    pub fn p(a: usize, mu: usize) -> Expr {
        Expr::coord(Coord::P(a, mu))
    }
    pub fn s(mu: usize) -> Expr {
        Expr::coord(Coord::S(mu))
    }
    pub fn pext() -> Expr {
        Expr::coord(Coord::Pext)
    }

    pub fn param(name: &str) -> Expr {
        Expr::var(Var::Param(Param::new(name, vec![])))
    }

    pub fn param_idx(name: &str, idx: &[usize]) -> Expr {
        Expr::var(Var::Param(Param::new(name, idx.to_vec())))
    }

    pub fn as_num(&self) -> Option<&BigRational> {
        match self.node() {
            Node::Num(r) => Some(r),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num().is_some_and(|r| r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        self.as_num().is_some_and(|r| r.is_one())
    }

    /// Sum with constant folding and flattening.
    pub fn add_all(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut acc = BigRational::zero();
        let mut out = Vec::new();
        for t in terms {
            match t.node() {
                Node::Num(r) => acc += r,
                Node::Add(inner) => {
                    for i in inner {
                        match i.node() {
                            Node::Num(r) => acc += r,
                            _ => out.push(i.clone()),
                        }
                    }
                }
                _ => out.push(t),
            }
        }
        if !acc.is_zero() {
            out.push(Expr::num(acc));
        }
        match out.len() {
            0 => Expr::zero(),
            1 => out.pop().unwrap(),
            _ => Expr::wrap(Node::Add(out)),
        }
    }

    /// Product with constant folding and flattening.
    pub fn mul_all(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut acc = BigRational::one();
        let mut out = Vec::new();
        for f in factors {
            match f.node() {
                Node::Num(r) => acc *= r,
                Node::Mul(inner) => {
                    for i in inner {
                        match i.node() {
                            Node::Num(r) => acc *= r,
                            _ => out.push(i.clone()),
                        }
                    }
                }
                Node::Neg(inner) => {
                    acc = -acc;
                    out.push(inner.clone());
                }
                _ => out.push(f),
            }
            if acc.is_zero() {
                return Expr::zero();
            }
        }
        if out.is_empty() {
            return Expr::num(acc);
        }
        let body = if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::wrap(Node::Mul(out))
        };
        if acc.is_one() {
            body
        } else if (-acc.clone()).is_one() {
            Expr::wrap(Node::Neg(body))
        } else {
            match body.node() {
                Node::Mul(inner) => {
                    let mut v = Vec::with_capacity(inner.len() + 1);
                    v.push(Expr::num(acc));
                    v.extend(inner.iter().cloned());
                    Expr::wrap(Node::Mul(v))
                }
                _ => Expr::wrap(Node::Mul(vec![Expr::num(acc), body])),
            }
        }
    }

    pub fn neg(&self) -> Expr {
        match self.node() {
            Node::Num(r) => Expr::num(-r.clone()),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::wrap(Node::Neg(self.clone())),
        }
    }

    pub fn powi(&self, k: i32) -> Expr {
        if k == 0 {
            return Expr::one();
        }
        if k == 1 {
            return self.clone();
        }
        match self.node() {
            Node::Num(r) => {
                if r.is_zero() && k < 0 {
                    Expr::wrap(Node::Pow(self.clone(), k))
                } else {
                    Expr::num(num_traits::pow::Pow::pow(r.clone(), k))
                }
            }
            Node::Pow(b, j) => match j.checked_mul(k) {
                Some(jk) => b.powi(jk),
                None => Expr::wrap(Node::Pow(self.clone(), k)),
            },
            _ => Expr::wrap(Node::Pow(self.clone(), k)),
        }
    }

    pub fn div(&self, other: &Expr) -> Expr {
        if other.is_one() {
            return self.clone();
        }
        if self.is_zero() {
            return Expr::zero();
        }
        if let (Node::Num(a), Node::Num(b)) = (self.node(), other.node()) {
            if !b.is_zero() {
                return Expr::num(a / b);
            }
        }
        if let Node::Num(b) = other.node() {
            if !b.is_zero() {
                return Expr::mul_all([Expr::num(b.recip()), self.clone()]);
            }
        }
        Expr::wrap(Node::Div(self.clone(), other.clone()))
    }

    pub fn func(f: Func, arg: Expr) -> Expr {
        Expr::wrap(Node::Func(f, arg))
    }

    /// Exact partial derivative. All symbols are independent.
    pub fn diff(&self, v: &Var) -> Expr {
        if !self.contains(v) {
            return Expr::zero();
        }
        match self.node() {
            Node::Num(_) => Expr::zero(),
            Node::Var(w) => {
                if w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(ts) => Expr::add_all(ts.iter().map(|t| t.diff(v))),
            Node::Mul(fs) => {
                let mut terms = Vec::new();
                for (i, f) in fs.iter().enumerate() {
                    let df = f.diff(v);
                    if df.is_zero() {
                        continue;
                    }
                    let mut prod: Vec<Expr> = Vec::with_capacity(fs.len());
                    for (j, g) in fs.iter().enumerate() {
                        prod.push(if i == j { df.clone() } else { g.clone() });
                    }
                    terms.push(Expr::mul_all(prod));
                }
                Expr::add_all(terms)
            }
            Node::Pow(b, k) => {
                let db = b.diff(v);
                Expr::mul_all([Expr::int(*k as i64), b.powi(k - 1), db])
            }
            Node::Neg(e) => e.diff(v).neg(),
            Node::Div(a, b) => {
                let da = a.diff(v);
                let db = b.diff(v);
                let first = da.div(b);
                if db.is_zero() {
                    return first;
                }
                let second = Expr::mul_all([a.clone(), db]).div(&b.powi(2));
                Expr::add_all([first, second.neg()])
            }
            Node::Func(f, a) => {
                let da = a.diff(v);
                let outer = match f {
                    Func::Sin => Expr::func(Func::Cos, a.clone()),
                    Func::Cos => Expr::func(Func::Sin, a.clone()).neg(),
                    Func::Exp => self.clone(),
                    Func::Log => Expr::one().div(a),
                    Func::Sqrt => Expr::rational(1, 2).div(self),
                };
                Expr::mul_all([outer, da])
            }
        }
    }

    /// Differentiate and bring the result to a compact canonical expression.
    pub fn pdiff(&self, v: &Var) -> Expr {
        self.diff(v).simplify()
    }

    pub fn contains(&self, v: &Var) -> bool {
        match self.node() {
            Node::Num(_) => false,
            Node::Var(w) => w == v,
            Node::Add(ts) | Node::Mul(ts) => ts.iter().any(|t| t.contains(v)),
            Node::Pow(b, _) => b.contains(v),
            Node::Neg(e) | Node::Func(_, e) => e.contains(v),
            Node::Div(a, b) => a.contains(v) || b.contains(v),
        }
    }

    /// Simultaneous substitution: replacements are not themselves rewritten.
    pub fn substitute(&self, bindings: &BTreeMap<Var, Expr>) -> Expr {
        if bindings.is_empty() {
            return self.clone();
        }
        self.subst_inner(bindings)
    }

    fn subst_inner(&self, b: &BTreeMap<Var, Expr>) -> Expr {
        match self.node() {
            Node::Num(_) => self.clone(),
            Node::Var(v) => b.get(v).cloned().unwrap_or_else(|| self.clone()),
            Node::Add(ts) => Expr::add_all(ts.iter().map(|t| t.subst_inner(b))),
            Node::Mul(fs) => Expr::mul_all(fs.iter().map(|t| t.subst_inner(b))),
            Node::Pow(e, k) => e.subst_inner(b).powi(*k),
            Node::Neg(e) => e.subst_inner(b).neg(),
            Node::Div(x, y) => x.subst_inner(b).div(&y.subst_inner(b)),
            Node::Func(f, e) => Expr::func(*f, e.subst_inner(b)),
        }
    }

    pub fn subst1(&self, v: &Var, by: &Expr) -> Expr {
        let mut m = BTreeMap::new();
        m.insert(v.clone(), by.clone());
        self.substitute(&m)
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self.node() {
            Node::Num(_) => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Add(ts) | Node::Mul(ts) => ts.iter().for_each(|t| t.collect_vars(out)),
            Node::Pow(e, _) | Node::Neg(e) | Node::Func(_, e) => e.collect_vars(out),
            Node::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn has_kernels(&self) -> bool {
        match self.node() {
            Node::Num(_) | Node::Var(_) => false,
            Node::Func(..) => true,
            Node::Add(ts) | Node::Mul(ts) => ts.iter().any(Expr::has_kernels),
            Node::Pow(e, _) | Node::Neg(e) => e.has_kernels(),
            Node::Div(a, b) => a.has_kernels() || b.has_kernels(),
        }
    }

    pub fn eval<F>(&self, env: &F) -> Result<f64, EvalError>
    where
        F: Fn(&Var) -> Option<f64>,
    {
        let v = match self.node() {
            Node::Num(r) => r.to_f64().unwrap_or(f64::NAN),
            Node::Var(v) => env(v).ok_or_else(|| EvalError::Unbound(display::var_name(v)))?,
            Node::Add(ts) => {
                let mut s = 0.0;
                for t in ts {
                    s += t.eval(env)?;
                }
                s
            }
            Node::Mul(fs) => {
                let mut p = 1.0;
                for f in fs {
                    p *= f.eval(env)?;
                }
                p
            }
            Node::Pow(b, k) => b.eval(env)?.powi(*k),
            Node::Neg(e) => -e.eval(env)?,
            Node::Div(a, b) => a.eval(env)? / b.eval(env)?,
            Node::Func(f, a) => f.apply(a.eval(env)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }

    pub fn eval_map(&self, env: &BTreeMap<Var, f64>) -> Result<f64, EvalError> {
        self.eval(&|v: &Var| env.get(v).copied())
    }

    pub fn normalize(&self) -> NormalForm {
        NormalForm::from_expr(self)
    }

    /// Round-trip through the normal form; yields an expanded canonical
    /// expression.
    pub fn simplify(&self) -> Expr {
        self.normalize().to_expr()
    }

    /// Number of nodes, used to keep symbolic growth in check.
    pub fn size(&self) -> usize {
        match self.node() {
            Node::Num(_) | Node::Var(_) => 1,
            Node::Add(ts) | Node::Mul(ts) => 1 + ts.iter().map(Expr::size).sum::<usize>(),
            Node::Pow(e, _) | Node::Neg(e) | Node::Func(_, e) => 1 + e.size(),
            Node::Div(a, b) => 1 + a.size() + b.size(),
        }
    }

    pub fn is_negative_literal(&self) -> bool {
        self.as_num().is_some_and(|r| r.is_negative())
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $body:expr) => {
        impl std::ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&self, &rhs)
            }
        }
        impl std::ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, rhs)
            }
        }
        impl std::ops::$tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(&self, rhs)
            }
        }
        impl std::ops::$tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                let f: fn(&Expr, &Expr) -> Expr = $body;
                f(self, &rhs)
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::add_all([a.clone(), b.clone()]));
binop!(Sub, sub, |a, b| Expr::add_all([a.clone(), b.neg()]));
binop!(Mul, mul, |a, b| Expr::mul_all([a.clone(), b.clone()]));
binop!(Div, div, |a, b| Expr::div(a, b));

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(&self)
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

impl From<i64> for Expr {
    fn from(i: i64) -> Self {
        Expr::int(i)
    }
}

pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
    Expr::add_all(terms)
}

pub fn product(factors: impl IntoIterator<Item = Expr>) -> Expr {
    Expr::mul_all(factors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dyv(a: usize, mu: usize) -> Var {
        Var::Coord(Coord::Dy(a, mu))
    }

    #[test]
    fn quadratic_kinetic_term() {
        let e = Expr::dy(0, 0) * Expr::dy(0, 0) / Expr::int(2);
        let d = e.pdiff(&dyv(0, 0));
        assert!(equal(&d, &Expr::dy(0, 0)).is_exact());
    }

    #[test]
    fn linear_dissipation_term() {
        let gamma = Expr::param("gamma");
        let e = -(gamma.clone() * Expr::s(0));
        let d = e.pdiff(&Var::Coord(Coord::S(0)));
        assert!(equal(&d, &-gamma).is_exact());
    }

    #[test]
    fn independent_coordinates() {
        let e = Expr::func(Func::Exp, Expr::y(0));
        assert!(e.diff(&Var::Coord(Coord::Y(1))).is_zero());
    }

    #[test]
    fn substitution_is_simultaneous() {
        let mut b = BTreeMap::new();
        b.insert(Var::Coord(Coord::Y(0)), Expr::y(1));
        b.insert(Var::Coord(Coord::Y(1)), Expr::y(0));
        let e = Expr::y(0) - Expr::y(1) * Expr::int(2);
        let r = e.substitute(&b);
        assert!(equal(&r, &(Expr::y(1) - Expr::y(0) * Expr::int(2))).is_exact());
    }

    #[test]
    fn substitute_momentum_by_velocity() {
        let e = Expr::p(0, 0) * Expr::dy(0, 0);
        let r = e.subst1(&Var::Coord(Coord::P(0, 0)), &Expr::dy(0, 0));
        assert!(equal(&r, &Expr::dy(0, 0).powi(2)).is_exact());
        assert_eq!(e.substitute(&BTreeMap::new()), e);
    }

    #[test]
    fn quotient_and_function_rules() {
        let q = Expr::y(0);
        let e = Expr::func(Func::Log, q.clone() * q.clone() + Expr::one()) / q.clone();
        let d = e.diff(&Var::Coord(Coord::Y(0)));
        let env = |v: &Var| (v == &Var::Coord(Coord::Y(0))).then_some(0.7);
        let h = 1e-6;
        let fd = (e.eval(&|v: &Var| (v == &Var::Coord(Coord::Y(0))).then_some(0.7 + h)).unwrap()
            - e.eval(&|v: &Var| (v == &Var::Coord(Coord::Y(0))).then_some(0.7 - h)).unwrap())
            / (2.0 * h);
        assert!((d.eval(&env).unwrap() - fd).abs() < 1e-7);
    }

    #[test]
    fn eval_reports_unbound_and_nonfinite() {
        let e = Expr::y(0) / Expr::y(1);
        let env = |v: &Var| match v {
            Var::Coord(Coord::Y(0)) => Some(1.0),
            Var::Coord(Coord::Y(1)) => Some(0.0),
            _ => None,
        };
        assert!(matches!(e.eval(&env), Err(EvalError::NonFinite(_))));
        assert!(matches!(Expr::y(3).eval(&env), Err(EvalError::Unbound(_))));
    }
}
