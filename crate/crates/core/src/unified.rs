//! The unified (Skinner-Rusk) formalism on 𝒲₀: Θ₀, the primary constraints
//! ξ, the coefficient system of a decomposable transversal multivector field,
//! tangency analysis and the constraint algorithm.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::calculus::Form;
use crate::chart::{Chart, ChartKind};
use crate::equations::{Equation, EquationSet, Role};
use crate::expr::{Coef, Coord, Expr, Var};
use crate::hamiltonian::{legendre_map, momentum_equations, to_lagrangian_side};
use crate::lagrangian::{action_part, base_one_form, field_part, LagrangianSystem};
use crate::linalg::{solve_linear, span_rank, LinearSolution, Matrix};
use crate::sampling::{sample_points, SamplePlan, DEFAULT_SEED};
use crate::Result;

pub const DEFAULT_MAX_GENERATIONS: usize = 10;
const MIN_RANK_POINTS: usize = 5;

#[derive(Clone, Debug)]
pub struct UnifiedSystem {
    pub lag: LagrangianSystem,
    /// 𝒲 with coordinates (x, y, y_μ, p^μ, p, s).
    pub extended: Arc<Chart>,
    /// 𝒲₀ with coordinates (x, y, y_μ, p^μ, s).
    pub chart: Arc<Chart>,
    /// C = p + p^μ_A y^A_μ on 𝒲.
    pub coupling: Expr,
    /// C − L, whose zero set is 𝒲₀.
    pub constraint: Expr,
    pub theta_w: Form,
    pub omega_w: Form,
    pub theta_0: Form,
    pub omega: Form,
    /// −(∂L/∂s^μ) dx^μ, the form satisfying i(R)dΘ₀ = σ∧i(R)Θ₀ on 𝒲₁.
    pub sigma_0: Form,
    /// +(∂L/∂s^μ) dx^μ, the sign found in the literature display.
    pub sigma_0_printed: Form,
    pub dbar_theta_0: Form,
    /// ξ^μ_A = ∂L/∂y^A_μ − p^μ_A, flattened with index A·m + μ.
    pub xi: Vec<Expr>,
}

fn pairs(n: usize, m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |a| (0..m).map(move |mu| (a, mu)))
}

fn coef(c: Coef) -> Expr {
    Expr::var(Var::Coef(c))
}

pub fn build_unified(sys: &LagrangianSystem) -> Result<UnifiedSystem> {
    let (m, n) = (sys.m(), sys.n());
    let extended = Arc::new(sys.spec.chart(ChartKind::Extended)?);
    let chart = Arc::new(sys.spec.chart(ChartKind::HamiltonianSub)?);
    let l = sys.lagrangian.clone();
    let py = Expr::add_all(pairs(n, m).map(|(a, mu)| Expr::p(a, mu) * Expr::dy(a, mu)));
    let coupling = (Expr::pext() + &py).simplify();
    let constraint = (&coupling - &l).simplify();

    let theta_w = field_part(&extended, |a, mu| Expr::p(a, mu).neg())
        .add(&Form::volume(&extended).scale(&Expr::pext().neg()))
        .add(&action_part(&extended));
    let theta_0 = field_part(&chart, |a, mu| Expr::p(a, mu).neg())
        .add(&Form::volume(&chart).scale(&(&l - &py).neg().simplify()))
        .add(&action_part(&chart));
    let ls = |mu: usize| l.pdiff(&Var::Coord(Coord::S(mu)));
    let sigma_0 = base_one_form(&chart, |mu| ls(mu).neg());
    let sigma_0_printed = base_one_form(&chart, ls);
    let dbar_theta_0 = theta_0.exterior_derivative().add(&sigma_0.wedge(&theta_0));
    let xi = pairs(n, m).map(|(a, mu)| (sys.momentum(a, mu) - Expr::p(a, mu)).simplify()).collect();
    Ok(UnifiedSystem {
        lag: sys.clone(),
        omega_w: Form::volume(&extended),
        omega: Form::volume(&chart),
        extended,
        chart,
        coupling,
        constraint,
        theta_w,
        theta_0,
        sigma_0,
        sigma_0_printed,
        dbar_theta_0,
        xi,
    })
}

impl UnifiedSystem {
    pub fn m(&self) -> usize {
        self.lag.m()
    }

    pub fn n(&self) -> usize {
        self.lag.n()
    }

    pub fn xi(&self, a: usize, mu: usize) -> &Expr {
        &self.xi[a * self.m() + mu]
    }

    /// 𝒲₁ as a graph p^μ_A = ∂L/∂y^A_μ over (x, y, y_μ, s).
    pub fn w1_graph(&self) -> BTreeMap<Coord, Expr> {
        pairs(self.n(), self.m())
            .map(|(a, mu)| (Coord::P(a, mu), self.lag.momentum(a, mu)))
            .collect()
    }

    fn w1_bindings(&self) -> BTreeMap<Var, Expr> {
        self.w1_graph().into_iter().map(|(c, e)| (Var::Coord(c), e)).collect()
    }

    /// Sample plan placing every point on 𝒲₁.
    pub fn w1_plan(&self, count: usize, seed: u64) -> SamplePlan {
        SamplePlan::new(count, seed).on(self.w1_graph())
    }

    /// Components of the inclusion 𝒲₀ → 𝒲 in 𝒲 chart order.
    pub fn embedding(&self) -> Vec<Expr> {
        let py = Expr::add_all(pairs(self.n(), self.m()).map(|(a, mu)| Expr::p(a, mu) * Expr::dy(a, mu)));
        let p = (&self.lag.lagrangian - &py).simplify();
        self.extended
            .coords()
            .iter()
            .map(|c| match c {
                Coord::Pext => p.clone(),
                other => Expr::coord(other.clone()),
            })
            .collect()
    }

    /// dΘ₀ + σ∧Θ₀ with the printed sign of σ.
    pub fn dbar_theta_0_printed(&self) -> Form {
        self.theta_0.exterior_derivative().add(&self.sigma_0_printed.wedge(&self.theta_0))
    }

    /// d̄Θ₀ restricted to 𝒲₁.
    pub fn dbar_theta_0_on_w1(&self) -> Form {
        self.dbar_theta_0.substitute(&self.w1_bindings()).simplify()
    }

    pub fn symbols(&self) -> BTreeSet<Var> {
        self.lag.symbols()
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "unified system on W0 (dim {}), m={} n={}\n",
            self.chart.dim(),
            self.m(),
            self.n()
        );
        out.push_str(&format!("C - L = {}\n", self.constraint));
        out.push_str("Theta_0 =\n");
        out.push_str(&indent(&self.theta_0.to_text()));
        out.push_str(&format!("sigma_0 = {}\n", self.sigma_0.to_text().trim()));
        out.push_str("primary constraints:\n");
        for (a, mu) in pairs(self.n(), self.m()) {
            out.push_str(&format!("  xi[{a},{mu}] = {}\n", self.xi(a, mu)));
        }
        out
    }
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("  {l}\n")).collect()
}

/// Derivative of `f` along the factor X_μ of a semi-holonomic transversal
/// multivector field (so the ∂/∂y^A component is y^A_μ).
pub fn factor_derivative(f: &Expr, mu: usize) -> Expr {
    let terms = f.vars().into_iter().filter_map(|v| {
        let factor = match &v {
            Var::Coord(Coord::X(nu)) if *nu == mu => Expr::one(),
            Var::Coord(Coord::Y(a)) => Expr::dy(*a, mu),
            Var::Coord(Coord::Dy(a, l)) => coef(Coef::Dy { mu, field: *a, lambda: *l }),
            Var::Coord(Coord::P(a, nu)) => coef(Coef::P { mu, field: *a, nu: *nu }),
            Var::Coord(Coord::S(nu)) => coef(Coef::S { mu, nu: *nu }),
            _ => return None,
        };
        Some(factor * f.pdiff(&v))
    });
    Expr::add_all(terms).simplify()
}

#[derive(Clone, Debug, Default)]
pub struct Unknowns {
    pub y: Vec<Var>,
    pub dy: Vec<Var>,
    pub p: Vec<Var>,
    pub s: Vec<Var>,
}

impl Unknowns {
    fn new(m: usize, n: usize) -> Self {
        let mut u = Unknowns::default();
        for mu in 0..m {
            for a in 0..n {
                u.y.push(Var::Coef(Coef::Y { mu, field: a }));
                for lambda in 0..m {
                    u.dy.push(Var::Coef(Coef::Dy { mu, field: a, lambda }));
                    u.p.push(Var::Coef(Coef::P { mu, field: a, nu: lambda }));
                }
            }
            for nu in 0..m {
                u.s.push(Var::Coef(Coef::S { mu, nu }));
            }
        }
        u
    }

    pub fn counts(&self) -> [usize; 4] {
        [self.y.len(), self.dy.len(), self.p.len(), self.s.len()]
    }
}

/// Field equations for the coefficients of 𝐗∘ = ⋀_μ X_μ, all holding on 𝒲₁.
#[derive(Clone, Debug)]
pub struct CoefficientSystem {
    pub m: usize,
    pub n: usize,
    pub unknowns: Unknowns,
    pub semi_holonomy: Vec<Equation>,
    pub trace_momentum: Vec<Equation>,
    pub primary: Vec<Equation>,
    pub action_trace: Equation,
    /// X_μ(ξ^ν_B) = 0 solved for (X)^ν_{μB}.
    pub tangency: Vec<Equation>,
    /// Traces of the tangency equations matched against the trace-momentum equations.
    pub compatibility: Vec<Equation>,
    pub solved: BTreeMap<Var, Expr>,
    pub free: Vec<Var>,
    /// Solvability conditions left over by the elimination.
    pub unsolved: Vec<Equation>,
}

pub fn sr_field_equations(u: &UnifiedSystem) -> CoefficientSystem {
    let (m, n) = (u.m(), u.n());
    let l = &u.lag.lagrangian;
    let semi_holonomy = pairs(n, m)
        .map(|(a, mu)| {
            Equation::new(
                format!("semi-holonomy[{a},{mu}]"),
                Role::SemiHolonomy,
                coef(Coef::Y { mu, field: a }),
                Expr::dy(a, mu),
            )
        })
        .collect();
    let trace_momentum = (0..n)
        .map(|a| {
            let lhs = Expr::add_all((0..m).map(|mu| coef(Coef::P { mu, field: a, nu: mu })));
            let rhs = l.pdiff(&Var::Coord(Coord::Y(a)))
                + Expr::add_all((0..m).map(|mu| u.lag.dl_ds(mu) * Expr::p(a, mu)));
            Equation::new(format!("trace[{a}]"), Role::Evolution, lhs, rhs.simplify())
        })
        .collect();
    let primary = pairs(n, m)
        .map(|(a, mu)| Equation::new(format!("xi[{a},{mu}]"), Role::Constraint, u.xi(a, mu).clone(), Expr::zero()))
        .collect();
    let action_trace = Equation::new(
        "action-trace",
        Role::ActionBalance,
        Expr::add_all((0..m).map(|mu| coef(Coef::S { mu, nu: mu }))),
        l.clone(),
    );
    let unknowns = Unknowns::new(m, n);
    let free = unknowns.dy.iter().chain(&unknowns.p).chain(&unknowns.s).cloned().collect();
    let mut solved = BTreeMap::new();
    for (a, mu) in pairs(n, m) {
        solved.insert(Var::Coef(Coef::Y { mu, field: a }), Expr::dy(a, mu));
    }
    CoefficientSystem {
        m,
        n,
        unknowns,
        semi_holonomy,
        trace_momentum,
        primary,
        action_trace,
        tangency: Vec::new(),
        compatibility: Vec::new(),
        solved,
        free,
        unsolved: Vec::new(),
    }
}

impl CoefficientSystem {
    pub fn equations(&self) -> impl Iterator<Item = &Equation> {
        self.semi_holonomy
            .iter()
            .chain(&self.trace_momentum)
            .chain(&self.primary)
            .chain(std::iter::once(&self.action_trace))
            .chain(&self.tangency)
            .chain(&self.compatibility)
            .chain(&self.unsolved)
    }

    pub fn to_equation_set(&self) -> EquationSet {
        let mut set = EquationSet::new("Skinner-Rusk coefficient system (on W1)", ChartKind::HamiltonianSub, self.m, self.n);
        for e in self.equations() {
            set.push(e.clone());
        }
        set
    }

    pub fn to_text(&self) -> String {
        let c = self.unknowns.counts();
        let mut out = format!(
            "coefficient system, m={} n={}: unknowns Xy {} Xdy {} Xp {} Xs {}\n",
            self.m, self.n, c[0], c[1], c[2], c[3]
        );
        let mut section = |title: &str, eqs: &[Equation]| {
            if eqs.is_empty() {
                return;
            }
            out.push_str(&format!("{title}:\n"));
            for e in eqs {
                out.push_str(&format!("  {:<20} {} = {}\n", e.name, e.lhs, e.rhs));
            }
        };
        section("semi-holonomy", &self.semi_holonomy);
        section("trace of momentum coefficients", &self.trace_momentum);
        section("primary constraints", &self.primary);
        section("action trace", std::slice::from_ref(&self.action_trace));
        section("tangency to W1", &self.tangency);
        section("compatibility", &self.compatibility);
        section("unsolvable remainder", &self.unsolved);
        out.push_str(&format!("solved coefficients: {}\n", self.solved.len()));
        let free: Vec<String> = self.free.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("free coefficients ({}): {}\n", free.len(), free.join(" ")));
        out
    }
}

impl fmt::Display for CoefficientSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// A constraint produced by the algorithm, as a function on 𝒲₀.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub expr: Expr,
    pub provenance: String,
    /// Coordinate the constraint was solved for, if it is a graph.
    pub solved_for: Option<Coord>,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub index: usize,
    pub constraints: Vec<Constraint>,
    /// Rows of the linear system whose remainder produced this generation,
    /// and the generic numeric rank of its coefficient matrix.
    pub rows: usize,
    pub numeric_rank: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderStatus {
    Stabilized,
    EmptyIntersection,
    IterationCap,
}

impl fmt::Display for LadderStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LadderStatus::Stabilized => "STABILIZED",
            LadderStatus::EmptyIntersection => "EMPTY-INTERSECTION",
            LadderStatus::IterationCap => "ITERATION-CAP",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ConstraintLadder {
    pub generations: Vec<Generation>,
    pub status: LadderStatus,
    /// The final constraint submanifold as far as it is a graph.
    pub graph: BTreeMap<Coord, Expr>,
    /// Constraints that could not be solved for a coordinate.
    pub implicit: Vec<Expr>,
    /// Coefficient system of the last pass.
    pub system: CoefficientSystem,
}

impl ConstraintLadder {
    /// Constraints beyond ξ.
    pub fn secondary(&self) -> impl Iterator<Item = &Constraint> {
        self.generations.iter().skip(1).flat_map(|g| &g.constraints)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "constraint ladder: {} after {} generation(s)\n",
            self.status,
            self.generations.len()
        );
        for g in &self.generations {
            out.push_str(&format!("generation {} ({} constraints", g.index, g.constraints.len()));
            if g.index > 0 {
                out.push_str(&format!(
                    "; {} rows, numeric rank {}, left kernel {}",
                    g.rows,
                    g.numeric_rank,
                    g.rows - g.numeric_rank.min(g.rows)
                ));
            }
            out.push_str(")\n");
            for c in &g.constraints {
                let solved = c.solved_for.as_ref().map(|s| format!(" solved for {s}")).unwrap_or_default();
                out.push_str(&format!("  {} = 0    [{}{solved}]\n", c.expr, c.provenance));
            }
        }
        if !self.implicit.is_empty() {
            out.push_str("implicit constraints are not used to restrict sample points\n");
        }
        out.push_str("integrability of the solutions is not imposed\n");
        out
    }
}

impl fmt::Display for ConstraintLadder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Clone, Debug)]
pub struct LadderOptions {
    pub max_generations: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        LadderOptions { max_generations: DEFAULT_MAX_GENERATIONS, samples: MIN_RANK_POINTS, seed: DEFAULT_SEED }
    }
}

/// Outcome of one tangency pass.
#[derive(Clone, Debug)]
pub struct Tangency {
    pub system: CoefficientSystem,
    pub candidates: Vec<Constraint>,
    pub rows: usize,
    pub numeric_rank: usize,
}

/// Current constraint submanifold of 𝒲₀.
struct Stage<'a> {
    u: &'a UnifiedSystem,
    graph: BTreeMap<Coord, Expr>,
    implicit: Vec<Expr>,
    /// Constraints after ξ, whose tangency must be imposed explicitly.
    later: Vec<Constraint>,
    opts: &'a LadderOptions,
}

impl<'a> Stage<'a> {
    fn new(u: &'a UnifiedSystem, opts: &'a LadderOptions) -> Self {
        Stage { u, graph: u.w1_graph(), implicit: Vec::new(), later: Vec::new(), opts }
    }

    fn bindings(&self) -> BTreeMap<Var, Expr> {
        self.graph.iter().map(|(c, e)| (Var::Coord(c.clone()), e.clone())).collect()
    }

    fn on(&self, e: &Expr) -> Expr {
        e.substitute(&self.bindings()).simplify()
    }

    fn points(&self) -> Vec<BTreeMap<Var, f64>> {
        let plan = SamplePlan::new(self.opts.samples.max(MIN_RANK_POINTS), self.opts.seed).on(self.graph.clone());
        sample_points(&self.u.chart, &self.u.symbols(), &plan)
            .into_iter()
            .map(|p| p.env)
            .collect()
    }

    /// Tangency along every X_μ, compatibility with the trace equations and
    /// elimination of the coefficients.
    fn pass(&self, base: &CoefficientSystem) -> Tangency {
        let (m, n) = (self.u.m(), self.u.n());
        let mut sys = base.clone();
        sys.tangency = Vec::new();
        for mu in 0..m {
            for (b, nu) in pairs(n, m) {
                let rhs = self.on(&factor_derivative(&self.u.lag.momentum(b, nu), mu));
                sys.tangency.push(Equation::new(
                    format!("tangency[{mu},{b},{nu}]"),
                    Role::Constraint,
                    coef(Coef::P { mu, field: b, nu }),
                    rhs,
                ));
            }
        }
        let tangency_rhs = |mu: usize, b: usize, nu: usize| &sys.tangency[mu * n * m + b * m + nu].rhs;
        sys.compatibility = (0..n)
            .map(|b| {
                let lhs = self.on(&sys.trace_momentum[b].rhs);
                let rhs = Expr::add_all((0..m).map(|mu| tangency_rhs(mu, b, mu).clone())).simplify();
                Equation::new(format!("compatibility[{b}]"), Role::Constraint, lhs, rhs)
            })
            .collect();

        let mut rows: Vec<(Expr, String)> = sys
            .compatibility
            .iter()
            .enumerate()
            .map(|(b, e)| (e.residual(), format!("compatibility of field {b}")))
            .collect();
        rows.push((self.on(&sys.action_trace.residual()), "action trace".into()));
        for c in &self.later {
            for mu in 0..m {
                let d = factor_derivative(&c.expr, mu);
                let d = self.on(&d.substitute(&tangency_bindings(&sys.tangency)));
                rows.push((d, format!("tangency of {} along X_{mu}", c.expr)));
            }
        }
        let unknowns: Vec<Var> = sys.unknowns.dy.iter().chain(&sys.unknowns.s).cloned().collect();
        let exprs: Vec<Expr> = rows.iter().map(|r| r.0.clone()).collect();
        let sol = solve_linear(&exprs, &unknowns);
        let numeric_rank = self.numeric_rank(&exprs, &unknowns);

        let LinearSolution { solved, free, residual, residual_origin } = sol;
        let mut all = base.solved.clone();
        for e in &sys.tangency {
            if let Var::Coef(c) = single_var(&e.lhs) {
                all.insert(Var::Coef(c), e.rhs.substitute(&solved).simplify());
            }
        }
        all.extend(solved);
        sys.solved = all;
        sys.free = free;
        let candidates: Vec<Constraint> = residual
            .iter()
            .zip(&residual_origin)
            .map(|(e, &o)| Constraint { expr: e.clone(), provenance: rows[o].1.clone(), solved_for: None })
            .collect();
        sys.unsolved = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| Equation::new(format!("remainder[{i}]"), Role::Constraint, c.expr.clone(), Expr::zero()))
            .collect();
        Tangency { system: sys, candidates, rows: rows.len(), numeric_rank }
    }

    fn numeric_rank(&self, eqs: &[Expr], unknowns: &[Var]) -> usize {
        let coefs: Vec<Vec<Expr>> = eqs.iter().map(|e| unknowns.iter().map(|u| e.pdiff(u)).collect()).collect();
        self.points()
            .iter()
            .filter_map(|env| {
                let rows: Vec<Vec<f64>> = coefs
                    .iter()
                    .map(|row| row.iter().map(|c| c.eval_map(env)).collect::<Result<Vec<f64>, _>>())
                    .collect::<Result<_, _>>()
                    .ok()?;
                Some(if rows.is_empty() { 0 } else { Matrix::from_rows(&rows).rank() })
            })
            .max()
            .unwrap_or(0)
    }

    fn free_coords(&self) -> Vec<Coord> {
        self.u.chart.coords().iter().filter(|c| !self.graph.contains_key(*c)).cloned().collect()
    }

    fn gradient_rank(&self, fs: &[Expr], points: &[BTreeMap<Var, f64>]) -> usize {
        let coords = self.free_coords();
        let grads: Vec<Vec<Expr>> = fs
            .iter()
            .map(|f| coords.iter().map(|c| f.pdiff(&Var::Coord(c.clone()))).collect())
            .collect();
        points
            .iter()
            .filter_map(|env| {
                let vs: Vec<Vec<f64>> = grads
                    .iter()
                    .map(|g| g.iter().map(|e| e.eval_map(env)).collect::<Result<Vec<f64>, _>>())
                    .collect::<Result<_, _>>()
                    .ok()?;
                Some(span_rank(&vs))
            })
            .max()
            .unwrap_or(0)
    }

    /// Admits the non-redundant candidates. `Err` carries the inconsistent one.
    fn admit(&mut self, candidates: Vec<Constraint>) -> Result<Vec<Constraint>, Constraint> {
        let mut accepted = Vec::new();
        for mut c in candidates {
            let e = self.on(&c.expr);
            if e.normalize().is_zero() {
                continue;
            }
            if e.as_num().is_some() {
                c.expr = e;
                return Err(c);
            }
            let points = self.points();
            let mut stack = self.implicit.clone();
            let before = self.gradient_rank(&stack, &points);
            stack.push(e.clone());
            if self.gradient_rank(&stack, &points) <= before {
                let vanishes = points.iter().all(|env| e.eval_map(env).map_or(true, |v| v.abs() < 1e-9));
                if vanishes {
                    continue;
                }
                c.expr = e;
                return Err(c);
            }
            c.expr = e.clone();
            match solvable_coordinate(&e, &self.free_coords()) {
                Some((coord, value)) => {
                    let b = BTreeMap::from([(Var::Coord(coord.clone()), value.clone())]);
                    for v in self.graph.values_mut() {
                        *v = v.substitute(&b).simplify();
                    }
                    self.graph.insert(coord.clone(), value);
                    c.solved_for = Some(coord);
                }
                None => self.implicit.push(e),
            }
            accepted.push(c);
        }
        Ok(accepted)
    }
}

fn single_var(e: &Expr) -> Var {
    e.vars().into_iter().next().expect("coefficient symbol")
}

fn tangency_bindings(tangency: &[Equation]) -> BTreeMap<Var, Expr> {
    tangency.iter().map(|e| (single_var(&e.lhs), e.rhs.clone())).collect()
}

/// A coordinate in which `e` is affine with a nonzero constant coefficient,
/// preferring momenta, then multivelocities, fields, actions and base points.
fn solvable_coordinate(e: &Expr, free: &[Coord]) -> Option<(Coord, Expr)> {
    let rank = |c: &Coord| match c {
        Coord::P(..) => 0,
        Coord::Dy(..) => 1,
        Coord::Y(_) => 2,
        Coord::S(_) => 3,
        _ => 4,
    };
    let mut order: Vec<&Coord> = free.iter().collect();
    order.sort_by_key(|c| rank(c));
    order.into_iter().find_map(|c| {
        let v = Var::Coord(c.clone());
        let k = e.pdiff(&v);
        let k = k.as_num()?.clone();
        if k == num_traits::Zero::zero() {
            return None;
        }
        let value = (Expr::var(v) - e.div(&Expr::num(k))).simplify();
        (!value.contains(&Var::Coord(c.clone()))).then(|| (c.clone(), value))
    })
}

/// One tangency pass on 𝒲₁: X_μ(ξ^ν_B) = 0 solved for (X)^ν_{μB}, its traces
/// matched with the trace-momentum equations, and the compatibility system
/// eliminated in (X)^A_{μλ}, (X)^λ_μ.
pub fn tangency_analysis(u: &UnifiedSystem, c: &CoefficientSystem) -> Tangency {
    let opts = LadderOptions::default();
    Stage::new(u, &opts).pass(c)
}

pub fn constraint_algorithm(u: &UnifiedSystem, max_generations: usize) -> ConstraintLadder {
    constraint_algorithm_with(u, &LadderOptions { max_generations, ..Default::default() })
}

pub fn constraint_algorithm_with(u: &UnifiedSystem, opts: &LadderOptions) -> ConstraintLadder {
    let base = sr_field_equations(u);
    let mut stage = Stage::new(u, opts);
    let primary = Generation {
        index: 0,
        constraints: pairs(u.n(), u.m())
            .map(|(a, mu)| Constraint {
                expr: u.xi(a, mu).clone(),
                provenance: format!("primary constraint xi[{a},{mu}]"),
                solved_for: Some(Coord::P(a, mu)),
            })
            .collect(),
        rows: 0,
        numeric_rank: 0,
    };
    let mut generations = vec![primary];
    let mut status = LadderStatus::IterationCap;
    let mut system = base.clone();
    for index in 1..=opts.max_generations {
        let t = stage.pass(&base);
        system = t.system;
        match stage.admit(t.candidates) {
            Err(bad) => {
                generations.push(Generation { index, constraints: vec![bad], rows: t.rows, numeric_rank: t.numeric_rank });
                status = LadderStatus::EmptyIntersection;
                break;
            }
            Ok(accepted) if accepted.is_empty() => {
                status = LadderStatus::Stabilized;
                break;
            }
            Ok(accepted) => {
                stage.later.extend(accepted.iter().cloned());
                generations.push(Generation { index, constraints: accepted, rows: t.rows, numeric_rank: t.numeric_rank });
            }
        }
    }
    ConstraintLadder { generations, status, graph: stage.graph, implicit: stage.implicit, system }
}

fn section_bindings(m: usize, n: usize) -> BTreeMap<Var, Expr> {
    let u = Unknowns::new(m, n);
    let deriv = |of: Coord, wrt: usize| Expr::var(Var::Deriv { of, wrt });
    u.y.iter()
        .chain(&u.dy)
        .chain(&u.p)
        .chain(&u.s)
        .map(|v| {
            let e = match v {
                Var::Coef(Coef::Y { mu, field }) => deriv(Coord::Y(*field), *mu),
                Var::Coef(Coef::Dy { mu, field, lambda }) => deriv(Coord::Dy(*field, *lambda), *mu),
                Var::Coef(Coef::P { mu, field, nu }) => deriv(Coord::P(*field, *nu), *mu),
                Var::Coef(Coef::S { mu, nu }) => deriv(Coord::S(*nu), *mu),
                _ => unreachable!(),
            };
            (v.clone(), e)
        })
        .collect()
}

/// Field equations for an integral section ψ∘ of 𝐗∘ on 𝒲₀.
fn section_equations(c: &CoefficientSystem, chart: ChartKind) -> EquationSet {
    let b = section_bindings(c.m, c.n);
    let mut set = EquationSet::new("Herglotz-Lagrange-Hamilton", chart, c.m, c.n);
    for e in &c.semi_holonomy {
        let name = e.name.replace("semi-holonomy", "velocity");
        set.push(Equation::new(name, Role::Evolution, e.lhs.substitute(&b), e.rhs.clone()));
    }
    for (a, e) in c.trace_momentum.iter().enumerate() {
        set.push(Equation::new(format!("field[{a}]"), Role::Evolution, e.lhs.substitute(&b), e.rhs.clone()));
    }
    let at = &c.action_trace;
    set.push(Equation::new("balance", Role::ActionBalance, at.lhs.substitute(&b), at.rhs.clone()));
    set
}

/// Herglotz-Euler-Lagrange equations recovered through the Legendre map ξ = 0.
pub fn project_to_lagrangian(u: &UnifiedSystem, c: &CoefficientSystem) -> EquationSet {
    let mut sections = section_equations(c, ChartKind::HamiltonianSub);
    sections.equations.retain(|e| !e.name.starts_with("velocity"));
    let mut out = to_lagrangian_side(&sections, &legendre_map(&u.lag));
    out.title = "Herglotz-Euler-Lagrange (from the unified formalism)".into();
    out
}

/// Herglotz-Hamilton-de Donder-Weyl equations, obtained by eliminating the
/// multivelocities through the inverse Legendre map. For singular L the
/// multivelocities left free by the momentum relations stay in the equations
/// and the image constraints of 𝓕𝓛 are appended.
pub fn project_to_hamiltonian(u: &UnifiedSystem, c: &CoefficientSystem) -> EquationSet {
    let sections = section_equations(c, ChartKind::Hamiltonian);
    let map = legendre_map(&u.lag);
    let (bindings, image, title) = match map.velocity_bindings() {
        Some(b) => (b, Vec::new(), "Herglotz-Hamilton-de Donder-Weyl (from the unified formalism)"),
        None => {
            let (eqs, unknowns) = momentum_equations(&u.lag);
            let sol = solve_linear(&eqs, &unknowns);
            (
                sol.solved,
                sol.residual,
                "Herglotz-Hamilton-de Donder-Weyl on the Legendre image (from the unified formalism)",
            )
        }
    };
    let mut out = EquationSet::new(title, ChartKind::Hamiltonian, c.m, c.n);
    for e in &sections.equations {
        out.push(Equation::new(
            e.name.clone(),
            e.role,
            e.lhs.substitute(&bindings).simplify(),
            e.rhs.substitute(&bindings).simplify(),
        ));
    }
    for (i, r) in image.into_iter().enumerate() {
        out.push(Equation::new(format!("image[{i}]"), Role::Constraint, r, Expr::zero()));
    }
    out
}

/// Multivelocities the Hamiltonian projection could not eliminate.
pub fn free_multivelocities(set: &EquationSet) -> BTreeSet<Var> {
    let mut out = BTreeSet::new();
    for e in &set.equations {
        for v in e.lhs.vars().into_iter().chain(e.rhs.vars()) {
            if matches!(v, Var::Coord(Coord::Dy(..))) {
                out.insert(v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{structure_diagnostics, VectorField};
    use crate::expr::parse::parse_permissive;
    use crate::hamiltonian::{hamiltonian_from_legendre, hhdw_equations};
    use crate::lagrangian::{build_lagrangian_system, herglotz_el_equations};
    use crate::model::ModelSpec;
    use crate::{equal, Equality};

    fn unified(m: usize, n: usize, l: &str) -> UnifiedSystem {
        let sys = build_lagrangian_system(&ModelSpec::new(m, n, parse_permissive(l).unwrap())).unwrap();
        build_unified(&sys).unwrap()
    }

    const DAMPED: &str = "dy[0,0]^2/2 - omega^2*y[0]^2/2 - gamma*s[0]";

    #[test]
    fn damped_oscillator_theta_0() {
        let u = unified(1, 1, DAMPED);
        let c = &u.chart;
        let ix = |co: Coord| c.index_of(&co).unwrap();
        let l = parse_permissive(DAMPED).unwrap();
        let want = Form::monomial(c, &[ix(Coord::Y(0))], Expr::p(0, 0).neg())
            .add(&Form::monomial(c, &[0], (l - Expr::dy(0, 0) * Expr::p(0, 0)).neg()))
            .add(&Form::monomial(c, &[ix(Coord::S(0))], Expr::one()));
        assert!(u.theta_0.equal(&want).is_exact());
        assert_eq!(u.xi.len(), 1);
    }

    #[test]
    fn theta_0_is_the_pullback_of_theta_w() {
        let u = unified(2, 1, "(dy[0,0]^2 - dy[0,1]^2)/2 - k*s[0]*y[0]");
        let pulled = u.theta_w.pullback(&u.chart, &u.embedding());
        assert!(pulled.equal(&u.theta_0).holds());
        assert!(equal(&u.constraint.substitute(&BTreeMap::from([(Var::Coord(Coord::Pext), u.embedding()[u.extended.index_of(&Coord::Pext).unwrap()].clone())])), &Expr::zero()).holds());
    }

    #[test]
    fn zero_lagrangian_theta_0() {
        let u = unified(2, 2, "0");
        let py = Expr::add_all(pairs(2, 2).map(|(a, mu)| Expr::p(a, mu) * Expr::dy(a, mu)));
        let want = field_part(&u.chart, |a, mu| Expr::p(a, mu).neg())
            .add(&Form::volume(&u.chart).scale(&py))
            .add(&action_part(&u.chart));
        assert!(u.theta_0.equal(&want).is_exact());
    }

    #[test]
    fn reeb_fields_contract_to_volume_minors() {
        let u = unified(2, 1, "dy[0,0]*dy[0,1] + s[1]*y[0]");
        for mu in 0..2 {
            let ds = VectorField::partial(&u.chart, &Coord::S(mu)).unwrap();
            assert!(u.theta_0.contract(&ds).equal(&Form::volume_minor(&u.chart, mu)).is_exact());
        }
    }

    #[test]
    fn sigma_relation_fixes_the_sign() {
        let u = unified(1, 1, DAMPED);
        let ds = VectorField::partial(&u.chart, &Coord::S(0)).unwrap();
        let lhs = u.theta_0.exterior_derivative().contract(&ds);
        let ith = u.theta_0.contract(&ds);
        assert!(lhs.equal(&u.sigma_0.wedge(&ith)).is_exact());
        assert!(!lhs.equal(&u.sigma_0_printed.wedge(&ith)).holds());
    }

    #[test]
    fn dbar_on_w1_drops_velocity_terms() {
        let u = unified(1, 1, DAMPED);
        let on = u.dbar_theta_0_on_w1();
        let dq = u.chart.index_of(&Coord::Dy(0, 0)).unwrap();
        assert!(on.terms().keys().all(|ix| !ix.contains(&dq)));
    }

    #[test]
    fn coefficient_counts() {
        let u = unified(3, 2, "dy[0,0]^2 + dy[1,2]^2");
        let c = sr_field_equations(&u);
        assert_eq!(c.unknowns.counts(), [6, 18, 18, 9]);
        assert_eq!(c.primary.len(), 6);
    }

    #[test]
    fn damped_oscillator_tangency() {
        let u = unified(1, 1, DAMPED);
        let c = sr_field_equations(&u);
        let t = tangency_analysis(&u, &c);
        assert!(t.candidates.is_empty());
        let xp = &t.system.solved[&Var::Coef(Coef::P { mu: 0, field: 0, nu: 0 })];
        let want = parse_permissive("-omega^2*y[0] - gamma*dy[0,0]").unwrap();
        assert!(equal(xp, &want).is_exact(), "{xp}");
        let ladder = constraint_algorithm(&u, DEFAULT_MAX_GENERATIONS);
        assert_eq!(ladder.status, LadderStatus::Stabilized);
        assert_eq!(ladder.generations.len(), 1);
    }

    #[test]
    fn trace_of_tangency_matches_trace_momentum() {
        let u = unified(2, 1, "(dy[0,0]^2 - dy[0,1]^2)/2 - k*s[0]*dy[0,0]");
        let t = tangency_analysis(&u, &sr_field_equations(&u));
        assert!(t.candidates.is_empty());
        let s = &t.system;
        let on_w1 = s.trace_momentum[0].rhs.substitute(&u.w1_bindings());
        let trace = s.tangency.iter().filter(|e| e.name == "tangency[0,0,0]" || e.name == "tangency[1,0,1]");
        let sum = Expr::add_all(trace.map(|e| e.rhs.clone())).substitute(&s.solved);
        assert!(equal(&sum, &on_w1).holds());
    }

    #[test]
    fn free_scalar_leaves_free_coefficients() {
        let u = unified(2, 1, "(dy[0,0]^2 - dy[0,1]^2)/2");
        let ladder = constraint_algorithm(&u, DEFAULT_MAX_GENERATIONS);
        assert_eq!(ladder.status, LadderStatus::Stabilized);
        // one of the four Xdy and three of the four Xs are fixed
        assert_eq!(ladder.system.free.len(), 3 + 3);
    }

    #[test]
    fn dirac_chain() {
        let u = unified(1, 2, "dy[0,0]^2/2 + y[0]*y[1]");
        let ladder = constraint_algorithm(&u, DEFAULT_MAX_GENERATIONS);
        assert_eq!(ladder.status, LadderStatus::Stabilized, "{ladder}");
        let got: Vec<Coord> = ladder.secondary().filter_map(|c| c.solved_for.clone()).collect();
        assert_eq!(got, vec![Coord::Y(0), Coord::Dy(0, 0), Coord::Y(1), Coord::Dy(1, 0)], "{ladder}");
    }

    #[test]
    fn linear_field_is_inconsistent() {
        let u = unified(1, 2, "dy[0,0]^2/2 + y[1]");
        let ladder = constraint_algorithm(&u, DEFAULT_MAX_GENERATIONS);
        assert_eq!(ladder.status, LadderStatus::EmptyIntersection);
        assert_eq!(ladder.generations.len(), 2);
        assert!(ladder.generations[1].constraints[0].expr.as_num().is_some());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let u = unified(1, 2, "dy[0,0]^2/2 + y[0]*y[1]");
        let ladder = constraint_algorithm(&u, 2);
        assert_eq!(ladder.status, LadderStatus::IterationCap);
        assert_eq!(ladder.generations.len(), 3);
    }

    fn all_hold(v: Vec<(String, Equality)>) {
        for (name, eq) in v {
            assert!(eq.holds(), "{name}: {eq}");
        }
    }

    #[test]
    fn projections_match_both_sides() {
        for l in [DAMPED, "dy[0,0]^2/2 + s[0]*dy[0,0]", "(dy[0,0]^2 + dy[1,0]^2)/2 - y[0]*y[1] - c*s[0]*dy[0,0]"] {
            let n = if l.contains("dy[1,0]") { 2 } else { 1 };
            let u = unified(1, n, l);
            let c = sr_field_equations(&u);
            all_hold(project_to_lagrangian(&u, &c).agrees_with(&herglotz_el_equations(&u.lag)));
            let map = legendre_map(&u.lag);
            let ham = hamiltonian_from_legendre(&u.lag, &map).unwrap();
            all_hold(project_to_hamiltonian(&u, &c).agrees_with(&hhdw_equations(&ham)));
        }
    }

    #[test]
    fn special_premulticontact_on_w1() {
        let u = unified(1, 1, DAMPED);
        let r = structure_diagnostics(&u.theta_0, &u.omega, &u.w1_plan(8, 42)).unwrap();
        assert_eq!(r.special, Some(1), "{r}");
    }

    #[test]
    fn maxwell_ladder_stabilizes_at_the_primary_constraints() {
        let spec = crate::parse_model_str(include_str!("../../../models/maxwell.model")).unwrap();
        let u = build_unified(&build_lagrangian_system(&spec).unwrap()).unwrap();
        let ladder = constraint_algorithm(&u, DEFAULT_MAX_GENERATIONS);
        assert_eq!(ladder.status, LadderStatus::Stabilized, "{ladder}");
        assert_eq!(ladder.generations.len(), 1);
        assert_eq!(ladder.generations[0].constraints.len(), 16);
        let c = sr_field_equations(&u);
        all_hold(project_to_lagrangian(&u, &c).agrees_with(&herglotz_el_equations(&u.lag)));
        let h = project_to_hamiltonian(&u, &c);
        assert_eq!(h.with_role(Role::Constraint).count(), 10);
    }
}
