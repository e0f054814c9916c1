//! The multicontact Lagrangian system (𝒫, Θ_L, ω) and its field equations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::calculus::{Form, VectorField};
use crate::chart::{Chart, ChartKind};
use crate::equations::{Equation, EquationSet, Role};
use crate::expr::{Coord, Equality, Expr, LatexStyle, Param, Var};
use crate::linalg::{solve_linear, Matrix};
use crate::model::{validate_model, ModelSpec};
use crate::sampling::{sample_points, SamplePlan};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Regularity {
    Regular,
    /// Minimal observed Hessian rank.
    Singular(usize),
    Inconclusive(String),
}

impl Regularity {
    pub fn is_regular(&self) -> bool {
        matches!(self, Regularity::Regular)
    }
}

impl fmt::Display for Regularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularity::Regular => write!(f, "REGULAR"),
            Regularity::Singular(r) => write!(f, "SINGULAR (observed rank {r})"),
            Regularity::Inconclusive(why) => write!(f, "INCONCLUSIVE ({why})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LagrangianSystem {
    pub spec: ModelSpec,
    pub chart: Arc<Chart>,
    /// L after substitution of valued non-symbolic parameters.
    pub lagrangian: Expr,
    pub theta: Form,
    pub omega: Form,
    pub energy: Expr,
    /// W[(A,μ)][(B,ν)] = ∂²L/∂y^A_μ∂y^B_ν, flattened with index A·m + μ.
    pub hessian: Vec<Vec<Expr>>,
    pub sigma: Form,
    pub dbar_theta: Form,
    pub regularity: Regularity,
}

/// Index of y^A_μ in the flattened (A, μ) ordering.
pub fn vel_index(m: usize, a: usize, mu: usize) -> usize {
    a * m + mu
}

pub fn vel_var(a: usize, mu: usize) -> Var {
    Var::Coord(Coord::Dy(a, mu))
}

/// Parameters that were given a value and are not kept symbolic are
/// substituted before anything else.
pub fn resolved_lagrangian(spec: &ModelSpec) -> Expr {
    let fixed: BTreeMap<Var, Expr> = spec
        .parameters
        .iter()
        .filter(|(_, d)| !d.symbolic)
        .filter_map(|(p, d)| d.value.clone().map(|v| (Var::Param(p.clone()), v)))
        .collect();
    if fixed.is_empty() {
        spec.lagrangian.simplify()
    } else {
        spec.lagrangian.substitute(&fixed).simplify()
    }
}

pub fn latex_style(spec: &ModelSpec) -> LatexStyle {
    LatexStyle { fields: spec.labels.clone(), base: spec.base_labels.clone() }
}

/// Σ_μ s^μ-part of the canonical forms: ds^μ ∧ d^{m−1}x_μ.
pub(crate) fn action_part(chart: &Arc<Chart>) -> Form {
    (0..chart.m()).fold(Form::zero(chart, chart.m()), |acc, mu| {
        let ds = Form::monomial(chart, &[chart.index_of(&Coord::S(mu)).unwrap()], Expr::one());
        acc.add(&ds.wedge(&Form::volume_minor(chart, mu)))
    })
}

/// Σ_{A,μ} c[A][μ] dy^A ∧ d^{m−1}x_μ.
pub(crate) fn field_part(chart: &Arc<Chart>, coef: impl Fn(usize, usize) -> Expr) -> Form {
    let (m, n) = (chart.m(), chart.n());
    let mut out = Form::zero(chart, m);
    for a in 0..n {
        let dy = Form::monomial(chart, &[chart.index_of(&Coord::Y(a)).unwrap()], Expr::one());
        for mu in 0..m {
            let c = coef(a, mu);
            if !c.is_zero() {
                out = out.add(&dy.wedge(&Form::volume_minor(chart, mu)).scale(&c));
            }
        }
    }
    out
}

/// Σ_μ c_μ dx^μ.
pub(crate) fn base_one_form(chart: &Arc<Chart>, coef: impl Fn(usize) -> Expr) -> Form {
    (0..chart.m()).fold(Form::zero(chart, 1), |acc, mu| {
        acc.add(&Form::monomial(chart, &[mu], coef(mu)))
    })
}

pub fn build_lagrangian_system(spec: &ModelSpec) -> Result<LagrangianSystem> {
    let report = validate_model(spec);
    if !report.is_empty() {
        return Err(Error::InvalidModel(report));
    }
    let chart = Arc::new(spec.chart(ChartKind::Lagrangian)?);
    let (m, n) = (spec.m, spec.n);
    let l = resolved_lagrangian(spec);
    let dl: Vec<Vec<Expr>> = (0..n)
        .map(|a| (0..m).map(|mu| l.pdiff(&vel_var(a, mu))).collect())
        .collect();
    let energy = (Expr::add_all(
        (0..n).flat_map(|a| (0..m).map(move |mu| (a, mu))).map(|(a, mu)| &dl[a][mu] * &Expr::dy(a, mu)),
    ) - &l)
        .simplify();
    let theta = field_part(&chart, |a, mu| dl[a][mu].neg())
        .add(&Form::volume(&chart).scale(&energy))
        .add(&action_part(&chart));
    let omega = Form::volume(&chart);
    let hessian = (0..n * m)
        .map(|i| (0..n * m).map(|j| dl[i / m][i % m].pdiff(&vel_var(j / m, j % m))).collect())
        .collect();
    let sigma = base_one_form(&chart, |mu| l.pdiff(&Var::Coord(Coord::S(mu))).neg());
    let dbar_theta = theta.exterior_derivative().add(&sigma.wedge(&theta));
    let mut sys = LagrangianSystem {
        spec: spec.clone(),
        chart,
        lagrangian: l,
        theta,
        omega,
        energy,
        hessian,
        sigma,
        dbar_theta,
        regularity: Regularity::Inconclusive("not checked".into()),
    };
    sys.regularity = check_regularity(&sys, &SamplePlan::default());
    Ok(sys)
}

impl LagrangianSystem {
    pub fn m(&self) -> usize {
        self.spec.m
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// ∂L/∂y^A_μ.
    pub fn momentum(&self, a: usize, mu: usize) -> Expr {
        self.lagrangian.pdiff(&vel_var(a, mu))
    }

    pub fn dl_ds(&self, mu: usize) -> Expr {
        self.lagrangian.pdiff(&Var::Coord(Coord::S(mu)))
    }

    pub fn hessian_at(&self, env: &BTreeMap<Var, f64>) -> Result<Matrix> {
        let k = self.hessian.len();
        let mut h = Matrix::zeros(k, k);
        for (i, row) in self.hessian.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                h.set(i, j, e.eval_map(env)?);
            }
        }
        Ok(h)
    }

    /// Velocity-quadratic L: the Hessian does not depend on any multivelocity.
    pub fn is_velocity_quadratic(&self) -> bool {
        let vels: BTreeSet<Var> = (0..self.n())
            .flat_map(|a| (0..self.m()).map(move |mu| vel_var(a, mu)))
            .collect();
        self.hessian
            .iter()
            .flatten()
            .all(|e| e.vars().is_disjoint(&vels))
    }

    pub fn symbols(&self) -> BTreeSet<Var> {
        let mut s = self.lagrangian.vars();
        s.retain(|v| !matches!(v, Var::Coord(_)));
        s
    }
}

/// REGULAR iff the numeric Hessian has full rank nm at every sample point.
pub fn check_regularity(sys: &LagrangianSystem, plan: &SamplePlan) -> Regularity {
    let full = sys.n() * sys.m();
    let points = sample_points(&sys.chart, &sys.symbols(), plan);
    if points.is_empty() {
        return Regularity::Inconclusive("no sample points".into());
    }
    let mut min_rank = full;
    let mut evaluated = 0;
    for p in &points {
        match sys.hessian_at(&p.env) {
            Ok(h) => {
                min_rank = min_rank.min(h.rank());
                evaluated += 1;
            }
            Err(_) => continue,
        }
    }
    if evaluated == 0 {
        Regularity::Inconclusive("the Hessian could not be evaluated at any sample point".into())
    } else if min_rank == full {
        Regularity::Regular
    } else {
        Regularity::Singular(min_rank)
    }
}

/// Total derivative d/dx^μ along a holonomic section of 𝒫: jet symbols for
/// second derivatives, ∂s^ν/∂x^μ as formal unknowns.
pub fn total_derivative(f: &Expr, mu: usize) -> Expr {
    let vars = f.vars();
    let mut terms = Vec::new();
    for v in &vars {
        let factor = match v {
            Var::Coord(Coord::X(nu)) if *nu == mu => Expr::one(),
            Var::Coord(Coord::Y(a)) => Expr::dy(*a, mu),
            Var::Coord(Coord::Dy(a, nu)) => Expr::var(Var::jet2(*a, mu, *nu)),
            Var::Coord(Coord::S(nu)) => Expr::var(Var::Deriv { of: Coord::S(*nu), wrt: mu }),
            Var::Coord(Coord::P(a, nu)) => Expr::var(Var::Deriv { of: Coord::P(*a, *nu), wrt: mu }),
            _ => continue,
        };
        terms.push(factor * f.diff(v));
    }
    Expr::add_all(terms).simplify()
}

pub fn action_balance(sys: &LagrangianSystem) -> Equation {
    let lhs = Expr::add_all((0..sys.m()).map(|mu| Expr::var(Var::Deriv { of: Coord::S(mu), wrt: mu })));
    Equation::new("balance", Role::ActionBalance, lhs, sys.lagrangian.clone())
}

pub fn herglotz_el_equations(sys: &LagrangianSystem) -> EquationSet {
    let (m, n) = (sys.m(), sys.n());
    let mut set = EquationSet::new("Herglotz-Euler-Lagrange", ChartKind::Lagrangian, m, n);
    for b in 0..n {
        let lhs = Expr::add_all((0..m).map(|mu| total_derivative(&sys.momentum(b, mu), mu)));
        let rhs = sys.lagrangian.pdiff(&Var::Coord(Coord::Y(b)))
            + Expr::add_all((0..m).map(|mu| sys.dl_ds(mu) * sys.momentum(b, mu)));
        set.push(Equation::new(format!("field[{b}]"), Role::Evolution, lhs.simplify(), rhs.simplify()));
    }
    set.push(action_balance(sys));
    set
}

fn placeholder(a: usize, nu: usize) -> Var {
    Var::Param(Param::new("__w", vec![a, nu]))
}

/// (R_L)_μ = ∂/∂s^μ − W^{BA}_{γν} ∂²L/∂s^μ∂y^B_γ ∂/∂y^A_ν.
pub fn reeb_fields(sys: &LagrangianSystem) -> Result<Vec<VectorField>> {
    if !sys.regularity.is_regular() {
        return Err(Error::Unsupported(format!(
            "Reeb fields need a regular Hessian; L is {} and the premulticontact Reeb fields are not unique",
            sys.regularity
        )));
    }
    let (m, n) = (sys.m(), sys.n());
    let unknowns: Vec<Var> = (0..n).flat_map(|a| (0..m).map(move |nu| placeholder(a, nu))).collect();
    let mut out = Vec::with_capacity(m);
    for mu in 0..m {
        let ls = sys.dl_ds(mu);
        // Σ_{A,ν} W_{(B,γ),(A,ν)} z_{A,ν} = ∂²L/∂s^μ∂y^B_γ
        let eqs: Vec<Expr> = (0..n * m)
            .map(|i| {
                let lhs = Expr::add_all(
                    unknowns.iter().enumerate().map(|(j, u)| &sys.hessian[i][j] * &Expr::var(u.clone())),
                );
                lhs - ls.pdiff(&vel_var(i / m, i % m))
            })
            .collect();
        let sol = solve_linear(&eqs, &unknowns);
        if !sol.free.is_empty() || !sol.residual.is_empty() {
            return Err(Error::Unsupported("Hessian is not symbolically invertible".into()));
        }
        let mut r = VectorField::basis(sys.chart.index_of(&Coord::S(mu)).unwrap());
        for a in 0..n {
            for nu in 0..m {
                let z = sol.solved[&placeholder(a, nu)].neg().simplify();
                r = r.with(sys.chart.index_of(&Coord::Dy(a, nu)).unwrap(), z);
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Defining relation of the dissipation form: σ ∧ i(R)Θ = i(R)dΘ.
pub fn check_sigma_relation(theta: &Form, sigma: &Form, reeb: &[VectorField]) -> Vec<Equality> {
    let dtheta = theta.exterior_derivative();
    reeb.iter()
        .map(|r| sigma.wedge(&theta.contract(r)).equal(&dtheta.contract(r)))
        .collect()
}
