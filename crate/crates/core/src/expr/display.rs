use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed};

use super::{Coef, Coord, Expr, Node, Var};

pub(crate) fn coord_name(c: &Coord) -> String {
    match c {
        Coord::X(m) => format!("x[{m}]"),
        Coord::Y(a) => format!("y[{a}]"),
        Coord::Dy(a, m) => format!("dy[{a},{m}]"),
        Coord::P(a, m) => format!("p[{a},{m}]"),
        Coord::Pext => "pext".to_string(),
        Coord::S(m) => format!("s[{m}]"),
    }
}

pub(crate) fn var_name(v: &Var) -> String {
    match v {
        Var::Coord(c) => coord_name(c),
        Var::Param(p) if p.indices.is_empty() => p.name.clone(),
        Var::Param(p) => format!("{}[{}]", p.name, join(&p.indices)),
        Var::Jet2 { field, mu, nu } => format!("ddy[{field},{mu},{nu}]"),
        Var::Deriv { of, wrt } => format!("D({},{wrt})", coord_name(of)),
        Var::Coef(Coef::Y { mu, field }) => format!("Xy[{mu},{field}]"),
        Var::Coef(Coef::Dy { mu, field, lambda }) => format!("Xdy[{mu},{field},{lambda}]"),
        Var::Coef(Coef::P { mu, field, nu }) => format!("Xp[{mu},{field},{nu}]"),
        Var::Coef(Coef::S { mu, nu }) => format!("Xs[{mu},{nu}]"),
    }
}

fn join(ix: &[usize]) -> String {
    ix.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&var_name(self))
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&coord_name(self))
    }
}

// precedence levels: 1 sum, 2 product, 3 unary minus, 4 power, 5 atom
fn prec(e: &Expr) -> u8 {
    match e.node() {
        Node::Add(_) => 1,
        Node::Mul(_) | Node::Div(..) => 2,
        Node::Neg(_) => 3,
        Node::Num(r) if r.is_negative() => 3,
        Node::Num(r) if !r.denom().is_one() => 2,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

fn write_rat(f: &mut fmt::Formatter<'_>, r: &BigRational) -> fmt::Result {
    if r.denom().is_one() {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

fn wrap(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
    if prec(e) < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Num(r) => write_rat(f, r),
            Node::Var(v) => f.write_str(&var_name(v)),
            Node::Add(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    if i == 0 {
                        wrap(f, t, 1)?;
                        continue;
                    }
                    match t.node() {
                        Node::Neg(inner) => {
                            f.write_str(" - ")?;
                            wrap(f, inner, 2)?;
                        }
                        Node::Num(r) if r.is_negative() => {
                            f.write_str(" - ")?;
                            write_rat(f, &-r.clone())?;
                        }
                        Node::Mul(fs) if fs[0].is_negative_literal() => {
                            let mut v = fs.clone();
                            v[0] = v[0].neg();
                            f.write_str(" - ")?;
                            wrap(f, &Expr::mul_all(v), 2)?;
                        }
                        _ => {
                            f.write_str(" + ")?;
                            wrap(f, t, 2)?;
                        }
                    }
                }
                Ok(())
            }
            Node::Mul(fs) => {
                for (i, t) in fs.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    // a leading fraction reads fine unparenthesized; later ones need grouping
                    let min = if i == 0 { 2 } else { 4 };
                    if i == 0 && matches!(t.node(), Node::Num(r) if r.is_negative()) {
                        write!(f, "{t}")?;
                    } else {
                        wrap(f, t, min)?;
                    }
                }
                Ok(())
            }
            Node::Div(a, b) => {
                wrap(f, a, 2)?;
                f.write_str("/")?;
                wrap(f, b, 4)
            }
            Node::Neg(e) => {
                f.write_str("-")?;
                wrap(f, e, 3)
            }
            Node::Pow(b, k) => {
                wrap(f, b, 5)?;
                if *k < 0 {
                    write!(f, "^({k})")
                } else {
                    write!(f, "^{k}")
                }
            }
            Node::Func(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// Labels used when rendering LaTeX.
#[derive(Clone, Debug, Default)]
pub struct LatexStyle {
    pub fields: Vec<String>,
    pub base: Vec<String>,
}

const GREEK: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "kappa", "lambda", "mu",
    "nu", "xi", "pi", "rho", "sigma", "tau", "phi", "chi", "psi", "omega", "Gamma", "Delta",
    "Theta", "Lambda", "Pi", "Sigma", "Phi", "Psi", "Omega",
];

fn latex_ident(name: &str) -> String {
    let (stem, digits) = match name.find(|c: char| c.is_ascii_digit()) {
        Some(i) if name[i..].chars().all(|c| c.is_ascii_digit()) => (&name[..i], &name[i..]),
        _ => (name, ""),
    };
    let stem = if GREEK.contains(&stem) {
        format!("\\{stem}")
    } else if stem.chars().count() > 1 {
        format!("\\mathrm{{{stem}}}")
    } else {
        stem.to_string()
    };
    if digits.is_empty() {
        stem
    } else {
        format!("{stem}_{{{digits}}}")
    }
}

impl LatexStyle {
    fn field(&self, a: usize) -> String {
        self.fields
            .get(a)
            .map(|s| latex_ident(s))
            .unwrap_or_else(|| format!("y^{{{a}}}"))
    }

    fn base(&self, mu: usize) -> String {
        self.base.get(mu).map(|s| latex_ident(s)).unwrap_or_else(|| format!("x^{{{mu}}}"))
    }

    fn single_time(&self) -> bool {
        self.base.len() == 1
    }

    pub fn var(&self, v: &Var) -> String {
        match v {
            Var::Coord(Coord::X(mu)) => self.base(*mu),
            Var::Coord(Coord::Y(a)) => self.field(*a),
            Var::Coord(Coord::Dy(a, mu)) => {
                if self.single_time() {
                    format!("\\dot{{{}}}", self.field(*a))
                } else {
                    format!("{}_{{,{mu}}}", self.field(*a))
                }
            }
            Var::Coord(Coord::P(a, mu)) => format!("p^{{{mu}}}_{{{a}}}"),
            Var::Coord(Coord::Pext) => "p".into(),
            Var::Coord(Coord::S(mu)) => format!("s^{{{mu}}}"),
            Var::Param(p) if p.indices.is_empty() => latex_ident(&p.name),
            Var::Param(p) => format!("{}_{{{}}}", latex_ident(&p.name), join(&p.indices)),
            Var::Jet2 { field, mu, nu } => {
                if self.single_time() {
                    format!("\\ddot{{{}}}", self.field(*field))
                } else {
                    format!("{}_{{,{mu}{nu}}}", self.field(*field))
                }
            }
            Var::Deriv { of, wrt } => {
                let inner = self.var(&Var::Coord(of.clone()));
                if self.single_time() {
                    format!("\\dot{{{inner}}}")
                } else {
                    format!("\\partial_{{{wrt}}} {inner}")
                }
            }
            Var::Coef(Coef::Y { mu, field }) => format!("X^{{{field}}}_{{{mu}}}"),
            Var::Coef(Coef::Dy { mu, field, lambda }) => format!("X^{{{field}}}_{{{mu}{lambda}}}"),
            Var::Coef(Coef::P { mu, field, nu }) => format!("X^{{{nu}}}_{{{mu}{field}}}"),
            Var::Coef(Coef::S { mu, nu }) => format!("X^{{{nu}}}_{{{mu}}}"),
        }
    }

    pub fn expr(&self, e: &Expr) -> String {
        let mut s = String::new();
        self.write(&mut s, e);
        s
    }

    fn wrapped(&self, out: &mut String, e: &Expr, min: u8) {
        if prec(e) < min {
            out.push_str("\\left(");
            self.write(out, e);
            out.push_str("\\right)");
        } else {
            self.write(out, e);
        }
    }

    fn write(&self, out: &mut String, e: &Expr) {
        match e.node() {
            Node::Num(r) => {
                if r.denom().is_one() {
                    out.push_str(&r.numer().to_string());
                } else {
                    let sign = if r.is_negative() { "-" } else { "" };
                    out.push_str(&format!("{sign}\\frac{{{}}}{{{}}}", r.numer().abs(), r.denom()));
                }
            }
            Node::Var(v) => out.push_str(&self.var(v)),
            Node::Add(ts) => {
                for (i, t) in ts.iter().enumerate() {
                    let neg = match t.node() {
                        Node::Neg(inner) => Some(inner.clone()),
                        Node::Num(r) if r.is_negative() => Some(Expr::num(-r.clone())),
                        Node::Mul(fs) if fs[0].is_negative_literal() => {
                            let mut v = fs.clone();
                            v[0] = v[0].neg();
                            Some(Expr::mul_all(v))
                        }
                        _ => None,
                    };
                    match (i, neg) {
                        (0, None) => self.write(out, t),
                        (0, Some(inner)) => {
                            out.push('-');
                            self.wrapped(out, &inner, 2);
                        }
                        (_, Some(inner)) => {
                            out.push_str(" - ");
                            self.wrapped(out, &inner, 2);
                        }
                        (_, None) => {
                            out.push_str(" + ");
                            self.wrapped(out, t, 2);
                        }
                    }
                }
            }
            Node::Mul(fs) => {
                for (i, t) in fs.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    if i == 0 && t.as_num().is_some() {
                        if t.as_num().is_some_and(|r| (-r.clone()).is_one()) {
                            out.push('-');
                        } else {
                            self.write(out, t);
                        }
                    } else {
                        self.wrapped(out, t, 4);
                    }
                }
            }
            Node::Div(a, b) => {
                out.push_str("\\frac{");
                self.write(out, a);
                out.push_str("}{");
                self.write(out, b);
                out.push('}');
            }
            Node::Neg(x) => {
                out.push('-');
                self.wrapped(out, x, 3);
            }
            Node::Pow(b, k) => {
                if matches!(b.node(), Node::Var(_)) {
                    out.push('{');
                    self.write(out, b);
                    out.push('}');
                } else {
                    self.wrapped(out, b, 5);
                }
                out.push_str(&format!("^{{{k}}}"));
            }
            Node::Func(func, a) => {
                out.push_str(&format!("\\{}\\left(", func.name()));
                self.write(out, a);
                out.push_str("\\right)");
            }
        }
    }
}

impl Expr {
    pub fn to_latex(&self, style: &LatexStyle) -> String {
        style.expr(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse::parse_permissive;
    use crate::expr::{equal, Func};

    #[test]
    fn grammar_round_trip() {
        let cases = [
            Expr::dy(0, 1) * Expr::rational(-3, 4) + Expr::y(1).powi(-2),
            -(Expr::s(0) * Expr::param("gamma")),
            Expr::func(Func::Exp, Expr::y(0) - Expr::pext()) / (Expr::p(0, 1) + Expr::int(2)),
            Expr::rational(1, 2) * Expr::var(Var::jet2(0, 1, 0)) - Expr::int(3),
            Expr::y(0) - (Expr::y(1) - Expr::y(2)),
        ];
        for e in cases {
            let text = e.to_string();
            let back = parse_permissive(&text).unwrap();
            assert!(equal(&e, &back).is_exact(), "{text}");
        }
    }

    #[test]
    fn latex_dot_notation_for_mechanics() {
        let style = LatexStyle { fields: vec!["q".into()], base: vec!["t".into()] };
        let e = Expr::var(Var::jet2(0, 0, 0)) + Expr::param("gamma") * Expr::dy(0, 0);
        let s = e.to_latex(&style);
        assert!(s.contains("\\ddot{q}"));
        assert!(s.contains("\\gamma"));
        assert!(s.contains("\\dot{q}"));
    }

    #[test]
    fn latex_names() {
        assert_eq!(latex_ident("mu0"), "\\mu_{0}");
        assert_eq!(latex_ident("k"), "k");
        assert_eq!(latex_ident("mass"), "\\mathrm{mass}");
    }
}
