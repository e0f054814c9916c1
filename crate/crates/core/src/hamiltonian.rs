//! Legendre maps, the Hamiltonian system (𝒫*, Θ_H, ω) and the
//! Herglotz–Hamilton–de Donder–Weyl equations.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::calculus::Form;
use crate::chart::{Chart, ChartKind};
use crate::equations::{Equation, EquationSet, Role};
use crate::expr::{Coord, Expr, Var};
use crate::lagrangian::{
    action_part, base_one_form, field_part, total_derivative, vel_var, LagrangianSystem, Regularity,
};
use crate::linalg::solve_linear;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LegendreMap {
    /// p^μ_A ↦ ∂L/∂y^A_μ, keyed (A, μ).
    pub momenta: BTreeMap<(usize, usize), Expr>,
    /// p ↦ L − y^A_μ ∂L/∂y^A_μ.
    pub extended: Expr,
    pub regularity: Regularity,
    /// y^A_μ as functions on 𝒫*.
    pub inverse: Option<BTreeMap<(usize, usize), Expr>>,
}

impl LegendreMap {
    /// Coordinates of 𝒫* written in 𝒫 coordinates, in chart order.
    pub fn components(&self, target: &Chart) -> Vec<Expr> {
        target
            .coords()
            .iter()
            .map(|c| match c {
                Coord::P(a, mu) => self.momenta[&(*a, *mu)].clone(),
                other => Expr::coord(other.clone()),
            })
            .collect()
    }

    /// Substitution p^μ_A → ∂L/∂y^A_μ.
    pub fn momentum_bindings(&self) -> BTreeMap<Var, Expr> {
        self.momenta
            .iter()
            .map(|((a, mu), e)| (Var::Coord(Coord::P(*a, *mu)), e.clone()))
            .collect()
    }

    /// Substitution y^A_μ → inverse.
    pub fn velocity_bindings(&self) -> Option<BTreeMap<Var, Expr>> {
        self.inverse.as_ref().map(|inv| {
            inv.iter()
                .map(|((a, mu), e)| (vel_var(*a, *mu), e.clone()))
                .collect()
        })
    }
}

pub(crate) fn momentum_equations(sys: &LagrangianSystem) -> (Vec<Expr>, Vec<Var>) {
    let (m, n) = (sys.m(), sys.n());
    let eqs = (0..n)
        .flat_map(|a| (0..m).map(move |mu| (a, mu)))
        .map(|(a, mu)| Expr::p(a, mu) - sys.momentum(a, mu))
        .collect();
    let unknowns = (0..n).flat_map(|a| (0..m).map(move |mu| vel_var(a, mu))).collect();
    (eqs, unknowns)
}

pub fn legendre_map(sys: &LagrangianSystem) -> LegendreMap {
    let (m, n) = (sys.m(), sys.n());
    let momenta: BTreeMap<(usize, usize), Expr> = (0..n)
        .flat_map(|a| (0..m).map(move |mu| (a, mu)))
        .map(|(a, mu)| ((a, mu), sys.momentum(a, mu)))
        .collect();
    let extended = sys.energy.neg();
    let inverse = if let Some(user) = &sys.spec.legendre_inverse {
        Some(user.clone())
    } else if sys.regularity.is_regular() && sys.is_velocity_quadratic() {
        let (eqs, unknowns) = momentum_equations(sys);
        let sol = solve_linear(&eqs, &unknowns);
        (sol.free.is_empty() && sol.residual.is_empty()).then(|| {
            (0..n)
                .flat_map(|a| (0..m).map(move |mu| (a, mu)))
                .map(|(a, mu)| ((a, mu), sol.solved[&vel_var(a, mu)].clone()))
                .collect()
        })
    } else {
        None
    };
    LegendreMap { momenta, extended, regularity: sys.regularity.clone(), inverse }
}

#[derive(Clone, Debug)]
pub struct HamiltonianSystem {
    pub chart: Arc<Chart>,
    pub m: usize,
    pub n: usize,
    pub h: Expr,
    pub theta: Form,
    pub omega: Form,
    pub sigma: Form,
    pub dbar_theta: Form,
}

/// Θ_H = −p^μ_A dy^A∧d^{m−1}x_μ + H d^m x + ds^μ∧d^{m−1}x_μ and its companions.
pub fn hamiltonian_system(chart: Arc<Chart>, h: Expr) -> HamiltonianSystem {
    let (m, n) = (chart.m(), chart.n());
    let theta = field_part(&chart, |a, mu| Expr::p(a, mu).neg())
        .add(&Form::volume(&chart).scale(&h))
        .add(&action_part(&chart));
    let sigma = base_one_form(&chart, |mu| h.pdiff(&Var::Coord(Coord::S(mu))));
    let dbar_theta = theta.exterior_derivative().add(&sigma.wedge(&theta));
    let omega = Form::volume(&chart);
    HamiltonianSystem { chart, m, n, h, theta, omega, sigma, dbar_theta }
}

pub fn hamiltonian_from_legendre(sys: &LagrangianSystem, map: &LegendreMap) -> Result<HamiltonianSystem> {
    let Some(vb) = map.velocity_bindings() else {
        return Err(Error::Unsupported(format!(
            "the Legendre map has no inverse (L is {}); use the unified formalism for almost-regular systems",
            map.regularity
        )));
    };
    let (m, n) = (sys.m(), sys.n());
    let pv = Expr::add_all(
        (0..n).flat_map(|a| (0..m).map(move |mu| (a, mu))).map(|(a, mu)| Expr::p(a, mu) * Expr::dy(a, mu)),
    );
    let h = (pv - &sys.lagrangian).substitute(&vb).simplify();
    let chart = Arc::new(sys.spec.chart(ChartKind::Hamiltonian)?);
    chart.check_expr(&h)?;
    Ok(hamiltonian_system(chart, h))
}

/// 𝓕𝓛*β for a form on 𝒫*.
pub fn pull_back(map: &LegendreMap, sys: &LagrangianSystem, beta: &Form) -> Form {
    beta.pullback(&sys.chart, &map.components(beta.chart()))
}

pub fn hhdw_equations(ham: &HamiltonianSystem) -> EquationSet {
    let (m, n) = (ham.m, ham.n);
    let h = &ham.h;
    let hs = |mu: usize| h.pdiff(&Var::Coord(Coord::S(mu)));
    let mut set = EquationSet::new("Herglotz-Hamilton-de Donder-Weyl", ChartKind::Hamiltonian, m, n);
    for a in 0..n {
        for mu in 0..m {
            set.push(Equation::new(
                format!("velocity[{a},{mu}]"),
                Role::Evolution,
                Expr::var(Var::Deriv { of: Coord::Y(a), wrt: mu }),
                h.pdiff(&Var::Coord(Coord::P(a, mu))),
            ));
        }
    }
    for a in 0..n {
        let lhs = Expr::add_all((0..m).map(|mu| Expr::var(Var::Deriv { of: Coord::P(a, mu), wrt: mu })));
        let rhs = (h.pdiff(&Var::Coord(Coord::Y(a)))
            + Expr::add_all((0..m).map(|mu| Expr::p(a, mu) * hs(mu))))
        .neg();
        set.push(Equation::new(format!("field[{a}]"), Role::Evolution, lhs, rhs.simplify()));
    }
    let ph = Expr::add_all(
        (0..n)
            .flat_map(|a| (0..m).map(move |mu| (a, mu)))
            .map(|(a, mu)| Expr::p(a, mu) * h.pdiff(&Var::Coord(Coord::P(a, mu)))),
    );
    set.push(Equation::new(
        "balance",
        Role::ActionBalance,
        Expr::add_all((0..m).map(|mu| Expr::var(Var::Deriv { of: Coord::S(mu), wrt: mu }))),
        (ph - h).simplify(),
    ));
    set
}

/// Rewrites a 𝒫*-equation set along the Legendre map and a holonomic
/// section of 𝒫: p ↦ ∂L/∂y_μ, ∂y/∂x^μ ↦ y_μ, ∂p/∂x^μ ↦ d/dx^μ(∂L/∂y_μ).
pub fn to_lagrangian_side(set: &EquationSet, map: &LegendreMap) -> EquationSet {
    let mut b = map.momentum_bindings();
    for (&(a, nu), e) in &map.momenta {
        for mu in 0..set.m {
            b.insert(Var::Deriv { of: Coord::P(a, nu), wrt: mu }, total_derivative(e, mu));
        }
    }
    for a in 0..set.n {
        for mu in 0..set.m {
            b.insert(Var::Deriv { of: Coord::Y(a), wrt: mu }, Expr::dy(a, mu));
        }
    }
    let mut out = EquationSet::new(format!("{} on the Lagrangian side", set.title), ChartKind::Lagrangian, set.m, set.n);
    for e in &set.equations {
        out.push(Equation::new(
            e.name.clone(),
            e.role,
            e.lhs.substitute(&b).simplify(),
            e.rhs.substitute(&b).simplify(),
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub enum ImageConstraints {
    Eliminated(EquationSet),
    NotEliminated(String),
}

/// Constraints describing 𝒫∘* = 𝓕𝓛(𝒫), by linear elimination of the
/// multivelocities from p^μ_A = ∂L/∂y^A_μ.
pub fn almost_regular_image(sys: &LagrangianSystem) -> ImageConstraints {
    let mut set = EquationSet::new("Legendre image constraints", ChartKind::Hamiltonian, sys.m(), sys.n());
    if sys.regularity.is_regular() {
        return ImageConstraints::Eliminated(set);
    }
    if !sys.is_velocity_quadratic() {
        return ImageConstraints::NotEliminated(
            "momenta are not affine in the multivelocities".into(),
        );
    }
    let (eqs, unknowns) = momentum_equations(sys);
    let sol = solve_linear(&eqs, &unknowns);
    for (i, r) in sol.residual.iter().enumerate() {
        set.push(Equation::new(format!("image[{i}]"), Role::Constraint, r.clone(), Expr::zero()));
    }
    ImageConstraints::Eliminated(set)
}
