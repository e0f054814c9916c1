use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::chart::Chart;
use crate::expr::{equal, Coord, Equality, Expr, Var};
use crate::Error;

/// Sorted insertion of `j` into a strictly increasing index list.
/// Returns the sign of moving `j` from the front to its slot, or `None` if
/// `j` is already present.
fn insert_sorted(ix: &[usize], j: usize) -> Option<(Vec<usize>, bool)> {
    let pos = match ix.binary_search(&j) {
        Ok(_) => return None,
        Err(p) => p,
    };
    let mut out = Vec::with_capacity(ix.len() + 1);
    out.extend_from_slice(&ix[..pos]);
    out.push(j);
    out.extend_from_slice(&ix[pos..]);
    Some((out, pos % 2 == 1))
}

/// Merge two increasing lists; sign of the shuffle permutation.
fn merge_sorted(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, bool)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    let mut swaps = 0usize;
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            // b[j] jumps over the remaining elements of a
            swaps += a.len() - i;
            out.push(b[j]);
            j += 1;
        } else {
            return None;
        }
    }
    Some((out, swaps % 2 == 1))
}

/// A differential form in a chart basis: sparse map from strictly increasing
/// coordinate-index tuples to coefficients.
#[derive(Clone)]
pub struct Form {
    chart: Arc<Chart>,
    degree: usize,
    terms: BTreeMap<Vec<usize>, Expr>,
}

impl Form {
    pub fn zero(chart: &Arc<Chart>, degree: usize) -> Form {
        Form { chart: chart.clone(), degree, terms: BTreeMap::new() }
    }

    pub fn scalar(chart: &Arc<Chart>, f: Expr) -> Form {
        let mut out = Form::zero(chart, 0);
        out.add_term(Vec::new(), f);
        out
    }

    /// `coef * dz_{i1} ∧ … ∧ dz_{ik}` for arbitrary (unsorted) indices.
    pub fn monomial(chart: &Arc<Chart>, ix: &[usize], coef: Expr) -> Form {
        let mut out = Form::zero(chart, ix.len());
        let mut sorted: Vec<usize> = Vec::new();
        let mut neg = false;
        for &j in ix.iter().rev() {
            match insert_sorted(&sorted, j) {
                Some((s, flip)) => {
                    sorted = s;
                    neg ^= flip;
                }
                None => return out,
            }
        }
        out.add_term(sorted, if neg { coef.neg() } else { coef });
        out
    }

    pub fn dcoord(chart: &Arc<Chart>, c: &Coord) -> Result<Form, Error> {
        let i = chart.check_coord(c)?;
        Ok(Form::monomial(chart, &[i], Expr::one()))
    }

    /// Volume form d^m x.
    pub fn volume(chart: &Arc<Chart>) -> Form {
        let ix: Vec<usize> = (0..chart.m()).collect();
        Form::monomial(chart, &ix, Expr::one())
    }

    /// d^{m-1}x_mu = i(∂/∂x^mu) d^m x.
    pub fn volume_minor(chart: &Arc<Chart>, mu: usize) -> Form {
        let ix: Vec<usize> = (0..chart.m()).filter(|&j| j != mu).collect();
        let c = if mu.is_multiple_of(2) { Expr::one() } else { Expr::int(-1) };
        Form::monomial(chart, &ix, c)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn terms(&self) -> &BTreeMap<Vec<usize>, Expr> {
        &self.terms
    }

    pub fn coeff(&self, ix: &[usize]) -> Expr {
        self.terms.get(ix).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, ix: Vec<usize>, c: Expr) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(ix) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = (o.get() + &c).simplify();
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn assert_compatible(&self, other: &Form) {
        assert!(
            Arc::ptr_eq(&self.chart, &other.chart) || *self.chart == *other.chart,
            "forms live on different charts"
        );
    }

    pub fn add(&self, other: &Form) -> Form {
        self.assert_compatible(other);
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        assert_eq!(self.degree, other.degree, "adding forms of different degree");
        let mut out = self.clone();
        for (k, v) in &other.terms {
            out.add_term(k.clone(), v.clone());
        }
        out
    }

    pub fn neg(&self) -> Form {
        self.map(|c| c.neg())
    }

    pub fn sub(&self, other: &Form) -> Form {
        self.add(&other.neg())
    }

    pub fn scale(&self, f: &Expr) -> Form {
        self.map(|c| (c * f).simplify())
    }

    pub fn map(&self, f: impl Fn(&Expr) -> Expr) -> Form {
        let mut out = Form::zero(&self.chart, self.degree);
        for (k, v) in &self.terms {
            out.add_term(k.clone(), f(v));
        }
        out
    }

    /// Canonicalize coefficients and drop zeros.
    pub fn simplify(&self) -> Form {
        self.map(Expr::simplify)
    }

    pub fn substitute(&self, b: &BTreeMap<Var, Expr>) -> Form {
        self.map(|c| c.substitute(b).simplify())
    }

    pub fn exterior_derivative(&self) -> Form {
        let mut out = Form::zero(&self.chart, self.degree + 1);
        for (ix, c) in &self.terms {
            let vars = c.vars();
            for (j, co) in self.chart.coords().iter().enumerate() {
                let v = Var::Coord(co.clone());
                if !vars.contains(&v) {
                    continue;
                }
                let Some((nix, neg)) = insert_sorted(ix, j) else {
                    continue;
                };
                let dc = c.pdiff(&v);
                out.add_term(nix, if neg { dc.neg() } else { dc });
            }
        }
        out
    }

    pub fn wedge(&self, other: &Form) -> Form {
        self.assert_compatible(other);
        let deg = self.degree + other.degree;
        let mut out = Form::zero(&self.chart, deg);
        if deg > self.chart.dim() {
            return out;
        }
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                if let Some((ix, neg)) = merge_sorted(a, b) {
                    let c = (ca * cb).simplify();
                    out.add_term(ix, if neg { c.neg() } else { c });
                }
            }
        }
        out
    }

    pub fn contract(&self, x: &VectorField) -> Form {
        if self.degree == 0 {
            return Form::zero(&self.chart, 0);
        }
        let mut out = Form::zero(&self.chart, self.degree - 1);
        for (ix, c) in &self.terms {
            for (r, j) in ix.iter().enumerate() {
                let Some(xj) = x.comps.get(j) else { continue };
                let mut rest = ix.clone();
                rest.remove(r);
                let t = (xj * c).simplify();
                out.add_term(rest, if r % 2 == 1 { t.neg() } else { t });
            }
        }
        out
    }

    /// i(X_1 ∧ … ∧ X_k) Ω = i(X_k) … i(X_1) Ω; zero when the grade exceeds
    /// the degree.
    pub fn contract_multi(&self, x: &MultiVec) -> Form {
        if x.grade() > self.degree {
            return Form::zero(&self.chart, 0);
        }
        x.factors.iter().fold(self.clone(), |acc, xi| acc.contract(xi))
    }

    /// Pull back along a map into this form's chart; `comps[i]` is the
    /// i-th coordinate of this chart written in `source` coordinates.
    pub fn pullback(&self, source: &Arc<Chart>, comps: &[Expr]) -> Form {
        assert_eq!(comps.len(), self.chart.dim());
        let mut diffs: BTreeMap<usize, Form> = BTreeMap::new();
        let mut out = Form::zero(source, self.degree);
        let mut subst = BTreeMap::new();
        for (i, c) in self.chart.coords().iter().enumerate() {
            subst.insert(Var::Coord(c.clone()), comps[i].clone());
        }
        for (ix, c) in &self.terms {
            let mut acc = Form::scalar(source, c.substitute(&subst).simplify());
            for j in ix {
                let dj = diffs
                    .entry(*j)
                    .or_insert_with(|| Form::scalar(source, comps[*j].clone()).exterior_derivative())
                    .clone();
                acc = acc.wedge(&dj);
            }
            out = out.add(&acc);
        }
        out
    }

    /// Coefficientwise equality; the weakest verdict over all terms.
    pub fn equal(&self, other: &Form) -> Equality {
        if self.degree != other.degree && !(self.is_zero() && other.is_zero()) {
            return Equality::Inconclusive { reason: "degree mismatch".into() };
        }
        let mut keys: Vec<&Vec<usize>> = self.terms.keys().collect();
        keys.extend(other.terms.keys());
        keys.sort();
        keys.dedup();
        let mut worst = Equality::Exact;
        for k in keys {
            let r = equal(&self.coeff(k), &other.coeff(k));
            match r {
                Equality::Exact => {}
                Equality::Numeric { .. } => {
                    if worst.is_exact() {
                        worst = r;
                    }
                }
                _ => return r,
            }
        }
        worst
    }

    pub fn basis_name(&self, ix: &[usize]) -> String {
        if ix.is_empty() {
            return "1".into();
        }
        ix.iter()
            .map(|j| format!("d{}", self.chart.coord(*j)))
            .collect::<Vec<_>>()
            .join("^")
    }

    /// Sorted `coeff * dz^dz` listing, one term per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (ix, c) in &self.terms {
            s.push_str(&format!("({c}) * {}\n", self.basis_name(ix)));
        }
        if s.is_empty() {
            s.push_str("0\n");
        }
        s
    }
}

impl fmt::Debug for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Form[{}]{{{}}}", self.degree, self.to_text().trim_end().replace('\n', "; "))
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(ix, c)| format!("({c})*{}", self.basis_name(ix)))
            .collect();
        if parts.is_empty() {
            f.write_str("0")
        } else {
            f.write_str(&parts.join(" + "))
        }
    }
}

/// Vector field with sparse coefficients on chart coordinates.
#[derive(Clone, Debug, Default)]
pub struct VectorField {
    pub comps: BTreeMap<usize, Expr>,
}

impl VectorField {
    pub fn new() -> Self {
        VectorField::default()
    }

    pub fn basis(j: usize) -> Self {
        let mut v = VectorField::new();
        v.comps.insert(j, Expr::one());
        v
    }

    pub fn with(mut self, j: usize, c: Expr) -> Self {
        if !c.is_zero() {
            self.comps.insert(j, c);
        }
        self
    }

    pub fn partial(chart: &Chart, c: &Coord) -> Result<Self, Error> {
        Ok(VectorField::basis(chart.check_coord(c)?))
    }

    /// Directional derivative of a scalar function.
    pub fn apply(&self, chart: &Chart, f: &Expr) -> Expr {
        Expr::add_all(
            self.comps
                .iter()
                .map(|(j, c)| c * f.diff(&chart.var(*j))),
        )
        .simplify()
    }

    pub fn describe(&self, chart: &Chart) -> String {
        if self.comps.is_empty() {
            return "0".into();
        }
        self.comps
            .iter()
            .map(|(j, c)| {
                if c.is_one() {
                    format!("d/d{}", chart.coord(*j))
                } else {
                    format!("({c})*d/d{}", chart.coord(*j))
                }
            })
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

/// Locally decomposable multivector field X_1 ∧ … ∧ X_m.
#[derive(Clone, Debug)]
pub struct MultiVec {
    pub factors: Vec<VectorField>,
}

impl MultiVec {
    pub fn new(factors: Vec<VectorField>) -> Self {
        MultiVec { factors }
    }

    /// X_mu = ∂/∂x^mu + (vertical part), so that i(X)ω = 1.
    pub fn transversal(chart: &Chart, vertical: Vec<VectorField>) -> Self {
        let m = chart.m();
        assert_eq!(vertical.len(), m);
        let factors = vertical
            .into_iter()
            .enumerate()
            .map(|(mu, mut v)| {
                for nu in 0..m {
                    v.comps.remove(&nu);
                }
                v.comps.insert(mu, Expr::one());
                v
            })
            .collect();
        MultiVec { factors }
    }

    pub fn grade(&self) -> usize {
        self.factors.len()
    }

    pub fn is_transversal(&self) -> bool {
        let m = self.factors.len();
        self.factors.iter().enumerate().all(|(mu, f)| {
            (0..m).all(|nu| {
                let c = f.comps.get(&nu).cloned().unwrap_or_else(Expr::zero);
                if nu == mu {
                    c.is_one()
                } else {
                    c.is_zero()
                }
            })
        })
    }
}
