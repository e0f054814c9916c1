//! Canonical rational-function representation of expressions.
//!
//! A [`NormalForm`] is a quotient of two sparse polynomials over ℚ whose
//! indeterminates are symbols or opaque function kernels. The zero form is
//! unique (empty numerator, denominator one), which is what the equality test
//! relies on. Common factors are cancelled when they are monomials or when the
//! denominator divides the numerator exactly; no multivariate gcd is computed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use super::{Expr, Func, Node, Var};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Var(Var),
    Kernel(Func, Box<NormalForm>),
    /// Result of dividing by something that normalizes to zero.
    Undefined,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(Vec<(Atom, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn atom(a: Atom) -> Self {
        Monomial(vec![(a, 1)])
    }

    pub fn factors(&self) -> &[(Atom, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|(_, e)| e).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            match self.0[i].0.cmp(&other.0[j].0) {
                Ordering::Less => {
                    out.push(self.0[i].clone());
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(other.0[j].clone());
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((self.0[i].0.clone(), self.0[i].1 + other.0[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.0[i..]);
        out.extend_from_slice(&other.0[j..]);
        Monomial(out)
    }

    fn exponent(&self, a: &Atom) -> u32 {
        self.0
            .binary_search_by(|(b, _)| b.cmp(a))
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    /// `self / other` if `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        let mut out = Vec::new();
        for (a, e) in &other.0 {
            if self.exponent(a) < *e {
                return None;
            }
        }
        for (a, e) in &self.0 {
            let d = e - other.exponent(a);
            if d > 0 {
                out.push((a.clone(), d));
            }
        }
        Some(Monomial(out))
    }

    pub fn gcd(&self, other: &Monomial) -> Monomial {
        Monomial(
            self.0
                .iter()
                .filter_map(|(a, e)| {
                    let f = other.exponent(a);
                    (f > 0).then(|| (a.clone(), (*e).min(f)))
                })
                .collect(),
        )
    }

    /// Graded lexicographic term order.
    fn grlex(&self, other: &Monomial) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| {
            let (mut i, mut j) = (0, 0);
            loop {
                match (self.0.get(i), other.0.get(j)) {
                    (None, None) => return Ordering::Equal,
                    (Some(_), None) => return Ordering::Greater,
                    (None, Some(_)) => return Ordering::Less,
                    (Some((a, e)), Some((b, f))) => match a.cmp(b) {
                        Ordering::Less => return Ordering::Greater,
                        Ordering::Greater => return Ordering::Less,
                        Ordering::Equal => {
                            if e != f {
                                return e.cmp(f);
                            }
                            i += 1;
                            j += 1;
                        }
                    },
                }
            }
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Poly(BTreeMap<Monomial, BigRational>);

impl Poly {
    pub fn zero() -> Self {
        Poly(BTreeMap::new())
    }

    pub fn constant(c: BigRational) -> Self {
        let mut m = BTreeMap::new();
        if !c.is_zero() {
            m.insert(Monomial::one(), c);
        }
        Poly(m)
    }

    pub fn one() -> Self {
        Poly::constant(BigRational::one())
    }

    pub fn atom(a: Atom) -> Self {
        let mut m = BTreeMap::new();
        m.insert(Monomial::atom(a), BigRational::one());
        Poly(m)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        match self.0.len() {
            0 => Some(BigRational::zero()),
            1 => self.0.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    fn add_term(&mut self, m: Monomial, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.0.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn neg(&self) -> Poly {
        Poly(self.0.iter().map(|(m, c)| (m.clone(), -c.clone())).collect())
    }

    pub fn scale(&self, k: &BigRational) -> Poly {
        if k.is_zero() {
            return Poly::zero();
        }
        Poly(self.0.iter().map(|(m, c)| (m.clone(), c * k)).collect())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (m1, c1) in &self.0 {
            for (m2, c2) in &other.0 {
                out.add_term(m1.mul(m2), c1 * c2);
            }
        }
        out
    }

    fn mul_term(&self, m: &Monomial, c: &BigRational) -> Poly {
        Poly(self.0.iter().map(|(k, v)| (k.mul(m), v * c)).collect())
    }

    pub fn pow(&self, k: u32) -> Poly {
        let mut acc = Poly::one();
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }

    fn leading(&self) -> Option<(&Monomial, &BigRational)> {
        self.0.iter().max_by(|a, b| a.0.grlex(b.0))
    }

    fn monomial_content(&self) -> Monomial {
        let mut it = self.0.keys();
        let Some(first) = it.next() else {
            return Monomial::one();
        };
        it.fold(first.clone(), |g, m| g.gcd(m))
    }

    fn div_monomial(&self, m: &Monomial) -> Poly {
        Poly(
            self.0
                .iter()
                .map(|(k, c)| (k.div(m).expect("monomial content divides"), c.clone()))
                .collect(),
        )
    }

    /// Exact quotient `self / d`, or `None` when `d` does not divide `self`.
    pub fn div_exact(&self, d: &Poly) -> Option<Poly> {
        let (ld, lc) = d.leading()?;
        let (ld, lc) = (ld.clone(), lc.clone());
        let mut r = self.clone();
        let mut q = Poly::zero();
        let budget = 4 * (self.len() + 1) * (d.len() + 1) + 64;
        for _ in 0..budget {
            let Some((lr, cr)) = r.leading() else {
                return Some(q);
            };
            let t = lr.div(&ld)?;
            let c = cr / &lc;
            r = r.sub(&d.mul_term(&t, &c));
            q.add_term(t, c);
        }
        None
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        self.0
            .keys()
            .flat_map(|m| m.0.iter().map(|(a, _)| a.clone()))
            .collect()
    }

    pub fn to_expr(&self) -> Expr {
        let mut terms: Vec<Expr> = Vec::with_capacity(self.0.len());
        let mut constant = None;
        for (m, c) in &self.0 {
            if m.is_one() {
                constant = Some(Expr::num(c.clone()));
                continue;
            }
            let mut factors = vec![Expr::num(c.clone())];
            for (a, e) in &m.0 {
                factors.push(atom_to_expr(a).powi(*e as i32));
            }
            terms.push(Expr::mul_all(factors));
        }
        terms.extend(constant);
        Expr::add_all(terms)
    }
}

fn atom_to_expr(a: &Atom) -> Expr {
    match a {
        Atom::Var(v) => Expr::var(v.clone()),
        Atom::Kernel(f, nf) => Expr::func(*f, nf.to_expr()),
        Atom::Undefined => Expr::wrap(Node::Div(Expr::one(), Expr::zero())),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NormalForm {
    num: Poly,
    den: Poly,
}

impl NormalForm {
    pub fn zero() -> Self {
        NormalForm { num: Poly::zero(), den: Poly::one() }
    }

    pub fn constant(c: BigRational) -> Self {
        NormalForm { num: Poly::constant(c), den: Poly::one() }
    }

    pub fn poly(p: Poly) -> Self {
        NormalForm { num: p, den: Poly::one() }
    }

    pub fn numerator(&self) -> &Poly {
        &self.num
    }

    pub fn denominator(&self) -> &Poly {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.den.as_constant().is_some_and(|c| c.is_one()) {
            self.num.as_constant()
        } else {
            None
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.as_constant().is_some()
    }

    fn canonical(num: Poly, den: Poly) -> NormalForm {
        if num.is_zero() {
            return NormalForm::zero();
        }
        if den.is_zero() {
            return NormalForm::poly(Poly::atom(Atom::Undefined));
        }
        if let Some(c) = den.as_constant() {
            return NormalForm::poly(num.scale(&c.recip()));
        }
        let g = num.monomial_content().gcd(&den.monomial_content());
        let (mut num, mut den) = if g.is_one() {
            (num, den)
        } else {
            (num.div_monomial(&g), den.div_monomial(&g))
        };
        if let Some(c) = den.as_constant() {
            return NormalForm::poly(num.scale(&c.recip()));
        }
        if let Some(q) = num.div_exact(&den) {
            return NormalForm::poly(q);
        }
        if den.len() == 1 || num.len() == 1 {
            if let Some(q) = den.div_exact(&num) {
                let c = q.leading().map(|(_, c)| c.clone()).unwrap_or_else(BigRational::one);
                return NormalForm { num: Poly::constant(c.recip()), den: q.scale(&c.recip()) };
            }
        }
        let lc = den.leading().map(|(_, c)| c.clone()).unwrap_or_else(BigRational::one);
        if !lc.is_one() {
            let inv = lc.recip();
            num = num.scale(&inv);
            den = den.scale(&inv);
        }
        NormalForm { num, den }
    }

    pub fn add(&self, o: &NormalForm) -> NormalForm {
        if self.is_zero() {
            return o.clone();
        }
        if o.is_zero() {
            return self.clone();
        }
        if self.den == o.den {
            return NormalForm::canonical(self.num.add(&o.num), self.den.clone());
        }
        NormalForm::canonical(
            self.num.mul(&o.den).add(&o.num.mul(&self.den)),
            self.den.mul(&o.den),
        )
    }

    pub fn neg(&self) -> NormalForm {
        NormalForm { num: self.num.neg(), den: self.den.clone() }
    }

    pub fn sub(&self, o: &NormalForm) -> NormalForm {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &NormalForm) -> NormalForm {
        if self.is_zero() || o.is_zero() {
            return NormalForm::zero();
        }
        if self.is_polynomial() && o.is_polynomial() {
            return NormalForm::poly(self.num.mul(&o.num));
        }
        NormalForm::canonical(self.num.mul(&o.num), self.den.mul(&o.den))
    }

    pub fn recip(&self) -> NormalForm {
        NormalForm::canonical(self.den.clone(), self.num.clone())
    }

    pub fn powi(&self, k: i32) -> NormalForm {
        let base = if k < 0 { self.recip() } else { self.clone() };
        let e = k.unsigned_abs();
        if e == 0 {
            return NormalForm::constant(BigRational::one());
        }
        NormalForm { num: base.num.pow(e), den: base.den.pow(e) }
    }

    fn kernel(f: Func, arg: NormalForm) -> NormalForm {
        if let Some(c) = arg.as_constant() {
            let zero = c.is_zero();
            let one = c.is_one();
            let v = match f {
                Func::Sin if zero => Some(0),
                Func::Cos | Func::Exp if zero => Some(1),
                Func::Log if one => Some(0),
                Func::Sqrt if zero => Some(0),
                Func::Sqrt if one => Some(1),
                _ => None,
            };
            if let Some(v) = v {
                return NormalForm::constant(BigRational::from_integer(BigInt::from(v)));
            }
        }
        NormalForm::poly(Poly::atom(Atom::Kernel(f, Box::new(arg))))
    }

    pub fn from_expr(e: &Expr) -> NormalForm {
        match e.node() {
            Node::Num(r) => NormalForm::constant(r.clone()),
            Node::Var(v) => NormalForm::poly(Poly::atom(Atom::Var(v.clone()))),
            Node::Add(ts) => {
                let mut polys = Poly::zero();
                let mut rest = NormalForm::zero();
                for t in ts {
                    let nf = NormalForm::from_expr(t);
                    if nf.is_polynomial() {
                        polys = polys.add(&nf.num);
                    } else {
                        rest = rest.add(&nf);
                    }
                }
                rest.add(&NormalForm::poly(polys))
            }
            Node::Mul(fs) => fs
                .iter()
                .fold(NormalForm::constant(BigRational::one()), |acc, f| {
                    acc.mul(&NormalForm::from_expr(f))
                }),
            Node::Pow(b, k) => NormalForm::from_expr(b).powi(*k),
            Node::Neg(x) => NormalForm::from_expr(x).neg(),
            Node::Div(a, b) => NormalForm::from_expr(a).mul(&NormalForm::from_expr(b).recip()),
            Node::Func(f, a) => NormalForm::kernel(*f, NormalForm::from_expr(a)),
        }
    }

    pub fn to_expr(&self) -> Expr {
        let n = self.num.to_expr();
        match self.den.as_constant() {
            Some(c) if c.is_one() => n,
            _ => n.div(&self.den.to_expr()),
        }
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut a = self.num.atoms();
        a.extend(self.den.atoms());
        a
    }

    /// Numerator degree in a single symbol, ignoring the denominator.
    pub fn degree_in(&self, v: &Var) -> u32 {
        let a = Atom::Var(v.clone());
        self.num.0.keys().map(|m| m.exponent(&a)).max().unwrap_or(0)
    }

    pub fn has_negative_leading(&self) -> bool {
        self.num.leading().is_some_and(|(_, c)| c.is_negative())
    }
}
