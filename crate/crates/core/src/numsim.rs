//! Fixed-step RK4 integration of derived evolution systems: the m = 1 ODE
//! case and the m = 2 case on a periodic grid in x¹, with energy and
//! action-balance monitors.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::chart::ChartKind;
use crate::equations::{EquationSet, Role};
use crate::expr::CompiledExpr;
use crate::expr::{Coord, Expr, Var};
use crate::linalg::solve_linear;
use crate::model::{ModelSpec, SimFormalism};
use crate::par::{self, Exec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Source {
    Time,
    Position,
    Const(f64),
    State(usize),
    /// Second-order central first difference of a state variable.
    Central(usize),
    /// Forward first difference.
    Forward(usize),
    /// Three-point second difference.
    Second(usize),
    /// Fourth-order central first difference.
    Central4(usize),
    /// Fourth-order central second difference.
    Second4(usize),
}

#[derive(Clone, Debug)]
struct Kernel {
    code: CompiledExpr,
    inputs: Vec<Source>,
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

struct Grid<'a> {
    data: &'a [Vec<f64>],
    t: f64,
    dx: f64,
}

impl Grid<'_> {
    fn value(&self, src: Source, i: usize) -> f64 {
        let n = self.data.first().map_or(1, Vec::len);
        let (l, r) = ((i + n - 1) % n, (i + 1) % n);
        let (ll, rr) = ((i + 2 * n - 2) % n, (i + 2) % n);
        let u = |k: usize, j: usize| self.data[k][j];
        match src {
            Source::Time => self.t,
            Source::Position => i as f64 * self.dx,
            Source::Const(c) => c,
            Source::State(k) => self.data[k][i],
            Source::Central(k) => (self.data[k][r] - self.data[k][l]) / (2.0 * self.dx),
            Source::Forward(k) => (self.data[k][r] - self.data[k][i]) / self.dx,
            Source::Second(k) => (self.data[k][r] - 2.0 * self.data[k][i] + self.data[k][l]) / (self.dx * self.dx),
            Source::Central4(k) => (-u(k, rr) + 8.0 * u(k, r) - 8.0 * u(k, l) + u(k, ll)) / (12.0 * self.dx),
            Source::Second4(k) => {
                (-u(k, rr) + 16.0 * u(k, r) - 30.0 * u(k, i) + 16.0 * u(k, l) - u(k, ll)) / (12.0 * self.dx * self.dx)
            }
        }
    }
}

impl Kernel {
    fn build(e: &Expr, resolve: &dyn Fn(&Var) -> Option<Source>) -> std::result::Result<Kernel, Var> {
        let vars: Vec<Var> = e.vars().into_iter().collect();
        let mut inputs = Vec::with_capacity(vars.len());
        for v in &vars {
            inputs.push(resolve(v).ok_or_else(|| v.clone())?);
        }
        let slot = |v: &Var| vars.iter().position(|w| w == v);
        let code = CompiledExpr::compile(e, &slot).map_err(|_| vars[0].clone())?;
        Ok(Kernel { code, inputs })
    }

    fn eval(&self, g: &Grid<'_>, i: usize) -> f64 {
        SCRATCH.with(|s| {
            let (vals, stack) = &mut *s.borrow_mut();
            vals.clear();
            vals.extend(self.inputs.iter().map(|&src| g.value(src, i)));
            self.code.eval_with(vals, stack)
        })
    }
}

/// A compiled first-order system in x⁰.
#[derive(Clone, Debug)]
pub struct EvolutionProblem {
    pub m: usize,
    pub n: usize,
    pub formalism: SimFormalism,
    pub nodes: usize,
    pub length: f64,
    pub periodic: bool,
    /// Names of the state variables: fields, then velocities or momenta, then s⁰.
    pub names: Vec<String>,
    rhs: Vec<Kernel>,
    energy: Kernel,
    /// Right side of the action balance with fourth-order spatial stencils.
    balance: Kernel,
    /// Evolution equations solved for the highest x⁰-derivatives.
    pub solved: BTreeMap<Var, Expr>,
}

impl EvolutionProblem {
    pub fn dx(&self) -> f64 {
        self.length / self.nodes as f64
    }

    pub fn action_index(&self) -> usize {
        2 * self.n
    }
}

/// Numerical settings and initial data.
#[derive(Clone, Debug)]
pub struct SimSettings {
    pub nodes: usize,
    pub length: f64,
    pub dt: f64,
    pub t_end: f64,
    pub cadence: usize,
    pub cfl: f64,
    pub monitors: Vec<String>,
    pub params: BTreeMap<Var, f64>,
    pub initial_y: Vec<Expr>,
    pub initial_v: Vec<Expr>,
    pub initial_s: Vec<Expr>,
    /// Record every state variable at every node in the report.
    pub full_state: bool,
    pub exec: Exec,
}

impl SimSettings {
    pub fn from_spec(spec: &ModelSpec) -> Result<SimSettings> {
        let cfg = spec
            .simulate
            .clone()
            .ok_or_else(|| Error::Config(format!("model '{}' has no [simulate] block", spec.name)))?;
        let mut params = BTreeMap::new();
        for (v, e) in spec.parameter_values() {
            params.insert(v, e.eval(&|_: &Var| None)?);
        }
        let nodes = if spec.m == 1 { 1 } else { cfg.nodes };
        Ok(SimSettings {
            nodes,
            length: cfg.length,
            dt: cfg.dt,
            t_end: cfg.t_end,
            cadence: cfg.cadence.max(1),
            cfl: cfg.cfl,
            monitors: cfg.monitors,
            params,
            initial_y: cfg.initial_y,
            initial_v: cfg.initial_v,
            initial_s: cfg.initial_s,
            full_state: nodes <= 16,
            exec: Exec::default(),
        })
    }
}

fn gauge(m: usize) -> BTreeMap<Var, Expr> {
    let mut b = BTreeMap::new();
    for nu in 1..m {
        b.insert(Var::Coord(Coord::S(nu)), Expr::zero());
        for mu in 0..m {
            b.insert(Var::Deriv { of: Coord::S(nu), wrt: mu }, Expr::zero());
        }
    }
    b
}

pub fn compile_problem(eqs: &EquationSet, settings: &SimSettings) -> Result<EvolutionProblem> {
    let (m, n) = (eqs.m, eqs.n);
    let formalism = match eqs.chart {
        ChartKind::Lagrangian => SimFormalism::Lagrangian,
        ChartKind::Hamiltonian if m == 1 => SimFormalism::Hamiltonian,
        ChartKind::Hamiltonian => {
            return Err(Error::Unsupported("Hamiltonian simulation is implemented for m = 1 only".into()))
        }
        other => return Err(Error::Unsupported(format!("cannot simulate equations on the {other} chart"))),
    };
    if m > 2 {
        return Err(Error::Unsupported(format!("numerical runs need m <= 2, got m = {m}")));
    }
    let mut subst = gauge(m);
    if formalism == SimFormalism::Lagrangian {
        for a in 0..n {
            for mu in 0..m {
                subst.insert(Var::Deriv { of: Coord::Y(a), wrt: mu }, Expr::dy(a, mu));
            }
        }
    }
    let used: Vec<_> = eqs
        .equations
        .iter()
        .filter(|e| matches!(e.role, Role::Evolution | Role::ActionBalance))
        .map(|e| (e.name.clone(), e.residual().substitute(&subst).simplify()))
        .filter(|(_, r)| !r.normalize().is_zero())
        .collect();
    let Some(balance_eq) = eqs.with_role(Role::ActionBalance).next() else {
        return Err(Error::NonEvolutionary("no action-balance equation".into()));
    };
    let balance_rhs = balance_eq.rhs.substitute(&subst).simplify();

    let s0 = Var::Deriv { of: Coord::S(0), wrt: 0 };
    let highest: Vec<Var> = match formalism {
        SimFormalism::Lagrangian => (0..n).map(|a| Var::jet2(a, 0, 0)).chain([s0.clone()]).collect(),
        SimFormalism::Hamiltonian => (0..n)
            .map(|a| Var::Deriv { of: Coord::Y(a), wrt: 0 })
            .chain((0..n).map(|a| Var::Deriv { of: Coord::P(a, 0), wrt: 0 }))
            .chain([s0.clone()])
            .collect(),
    };
    let residuals: Vec<Expr> = used.iter().map(|u| u.1.clone()).collect();
    let sol = solve_linear(&residuals, &highest);
    if !sol.free.is_empty() || !sol.residual.is_empty() {
        let offending: Vec<String> = sol.residual_origin.iter().map(|&i| used[i].0.clone()).collect();
        let free: Vec<String> = sol.free.iter().map(|v| v.to_string()).collect();
        let mut msg = String::new();
        if !offending.is_empty() {
            let _ = write!(msg, "equation {} has no isolable x[0]-derivative", offending.join(", "));
        }
        if !free.is_empty() {
            if !msg.is_empty() {
                msg.push_str("; ");
            }
            let _ = write!(msg, "nothing determines {}", free.join(", "));
        }
        return Err(Error::NonEvolutionary(msg));
    }

    let s_ix = 2 * n;
    let params = settings.params.clone();
    let resolve = move |first: fn(usize) -> Source, second: fn(usize) -> Source| {
        let params = params.clone();
        move |v: &Var| -> Option<Source> {
            Some(match v {
                Var::Coord(Coord::X(0)) => Source::Time,
                Var::Coord(Coord::X(1)) => Source::Position,
                Var::Coord(Coord::Y(a)) => Source::State(*a),
                Var::Coord(Coord::Dy(a, 0)) if formalism == SimFormalism::Lagrangian => Source::State(n + a),
                Var::Coord(Coord::P(a, 0)) if formalism == SimFormalism::Hamiltonian => Source::State(n + a),
                Var::Coord(Coord::Dy(a, 1)) => first(*a),
                Var::Coord(Coord::S(0)) => Source::State(s_ix),
                Var::Jet2 { field, mu: 0, nu: 1 } => first(n + field),
                Var::Jet2 { field, mu: 1, nu: 1 } => second(*field),
                Var::Deriv { of: Coord::S(0), wrt: 1 } => first(s_ix),
                Var::Param(_) => Source::Const(*params.get(v)?),
                _ => return None,
            })
        }
    };
    let integrator = resolve(Source::Central, Source::Second);
    let conserving = resolve(Source::Forward, Source::Second);
    let accurate = resolve(Source::Central4, Source::Second4);
    let kernel = |e: &Expr, r: &dyn Fn(&Var) -> Option<Source>| {
        Kernel::build(e, r).map_err(|v| {
            Error::NonEvolutionary(format!("symbol {v} in '{e}' has no value on the grid"))
        })
    };

    let mut rhs = Vec::with_capacity(2 * n + 1);
    let names: Vec<String> = match formalism {
        SimFormalism::Lagrangian => {
            for a in 0..n {
                rhs.push(kernel(&Expr::dy(a, 0), &integrator)?);
            }
            for a in 0..n {
                rhs.push(kernel(&sol.solved[&Var::jet2(a, 0, 0)], &integrator)?);
            }
            (0..n)
                .map(|a| format!("y[{a}]"))
                .chain((0..n).map(|a| format!("dy[{a},0]")))
                .chain(["s[0]".to_string()])
                .collect()
        }
        SimFormalism::Hamiltonian => {
            for a in 0..n {
                rhs.push(kernel(&sol.solved[&Var::Deriv { of: Coord::Y(a), wrt: 0 }], &integrator)?);
            }
            for a in 0..n {
                rhs.push(kernel(&sol.solved[&Var::Deriv { of: Coord::P(a, 0), wrt: 0 }], &integrator)?);
            }
            (0..n)
                .map(|a| format!("y[{a}]"))
                .chain((0..n).map(|a| format!("p[{a},0]")))
                .chain(["s[0]".to_string()])
                .collect()
        }
    };
    rhs.push(kernel(&sol.solved[&s0], &integrator)?);

    let no_action: BTreeMap<Var, Expr> = (0..m).map(|mu| (Var::Coord(Coord::S(mu)), Expr::zero())).collect();
    let energy = match formalism {
        SimFormalism::Lagrangian => {
            let pv = Expr::add_all((0..n).map(|a| Expr::dy(a, 0) * balance_rhs.pdiff(&Var::Coord(Coord::Dy(a, 0)))));
            pv - &balance_rhs
        }
        SimFormalism::Hamiltonian => {
            let pv = Expr::add_all(
                (0..n).map(|a| Expr::p(a, 0) * sol.solved[&Var::Deriv { of: Coord::Y(a), wrt: 0 }].clone()),
            );
            pv - &balance_rhs
        }
    }
    .substitute(&no_action)
    .simplify();

    let nodes = if m == 1 { 1 } else { settings.nodes };
    if nodes < 5 && m == 2 {
        return Err(Error::Config(format!("a periodic grid needs at least 5 nodes, got {nodes}")));
    }
    Ok(EvolutionProblem {
        m,
        n,
        formalism,
        nodes,
        length: settings.length,
        periodic: true,
        names,
        rhs,
        energy: kernel(&energy, &conserving)?,
        balance: kernel(&balance_rhs, &accurate)?,
        solved: sol.solved,
    })
}

/// State on the grid at time `t`; `data[k][i]` is variable k at node i.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub t: f64,
    pub data: Vec<Vec<f64>>,
}

impl GridState {
    fn grid(&self, dx: f64) -> Grid<'_> {
        Grid { data: &self.data, t: self.t, dx }
    }

    fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

pub fn initial_state(p: &EvolutionProblem, s: &SimSettings) -> Result<GridState> {
    let n = p.n;
    let pick = |v: &[Expr], k: usize| v.get(k).cloned().unwrap_or_else(Expr::zero);
    let exprs: Vec<Expr> = (0..n)
        .map(|a| pick(&s.initial_y, a))
        .chain((0..n).map(|a| pick(&s.initial_v, a)))
        .chain([pick(&s.initial_s, 0)])
        .collect();
    if s.initial_s.iter().skip(1).any(|e| !e.normalize().is_zero()) {
        return Err(Error::Config("the gauge s^1 = 0 fixes every initial s^mu beyond s^0".into()));
    }
    let dx = p.dx();
    let mut data = Vec::with_capacity(exprs.len());
    for e in &exprs {
        let mut col = Vec::with_capacity(p.nodes);
        for i in 0..p.nodes {
            let x = i as f64 * dx;
            let v = e.eval(&|v: &Var| match v {
                Var::Coord(Coord::X(1)) => Some(x),
                Var::Coord(Coord::X(0)) => Some(0.0),
                other => s.params.get(other).copied(),
            })?;
            col.push(v);
        }
        data.push(col);
    }
    Ok(GridState { t: 0.0, data })
}

fn derivative(p: &EvolutionProblem, t: f64, data: &[Vec<f64>], exec: Exec) -> Vec<Vec<f64>> {
    let nodes = p.nodes;
    let g = Grid { data, t, dx: p.dx() };
    let mut flat = vec![0.0; p.rhs.len() * nodes];
    par::fill(exec, &mut flat, |ix| p.rhs[ix / nodes].eval(&g, ix % nodes));
    flat.chunks(nodes).map(<[f64]>::to_vec).collect()
}

fn axpy(base: &[Vec<f64>], k: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    base.iter()
        .zip(k)
        .map(|(b, d)| b.iter().zip(d).map(|(x, y)| x + h * y).collect())
        .collect()
}

/// Classical fourth-order Runge-Kutta step.
pub fn step_rk4(p: &EvolutionProblem, st: &GridState, dt: f64, exec: Exec) -> Result<GridState> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    let k1 = derivative(p, st.t, &st.data, exec);
    let k2 = derivative(p, st.t + dt / 2.0, &axpy(&st.data, &k1, dt / 2.0), exec);
    let k3 = derivative(p, st.t + dt / 2.0, &axpy(&st.data, &k2, dt / 2.0), exec);
    let k4 = derivative(p, st.t + dt, &axpy(&st.data, &k3, dt), exec);
    let data = (0..st.data.len())
        .map(|v| {
            (0..p.nodes)
                .map(|i| st.data[v][i] + dt / 6.0 * (k1[v][i] + 2.0 * k2[v][i] + 2.0 * k3[v][i] + k4[v][i]))
                .collect()
        })
        .collect();
    let next = GridState { t: st.t + dt, data };
    if !next.is_finite() {
        return Err(Error::NonFinite { t: next.t, reason: "state is no longer finite".into() });
    }
    Ok(next)
}

/// Discrete energy Σ_i (v·∂L/∂v − L)|_{s=0} Δx, with forward differences in
/// the gradient terms (for m = 1 the single-node value).
pub fn monitor_energy(p: &EvolutionProblem, st: &GridState) -> f64 {
    let g = st.grid(p.dx());
    let sum: f64 = (0..p.nodes).map(|i| p.energy.eval(&g, i)).sum();
    if p.m == 1 {
        sum
    } else {
        sum * p.dx()
    }
}

/// Max over the grid of |∂₀s⁰ + ∂₁s¹ − L| at the middle of five consecutive
/// states spaced `dt`. Both ∂₀ and the spatial derivatives inside L use
/// fourth-order central differences, so for m = 2 the residual measures how
/// far the second-order scheme is from the continuum balance law; ∂₁s¹
/// vanishes in the gauge s¹ = 0.
pub fn monitor_action_balance(p: &EvolutionProblem, window: [&GridState; 5], dt: f64) -> f64 {
    let k = p.action_index();
    let s = |j: usize, i: usize| window[j].data[k][i];
    let g = window[2].grid(p.dx());
    (0..p.nodes)
        .map(|i| {
            let ds = (-s(4, i) + 8.0 * s(3, i) - 8.0 * s(1, i) + s(0, i)) / (12.0 * dt);
            (ds - p.balance.eval(&g, i)).abs()
        })
        .fold(0.0, f64::max)
}

/// Central first difference on a periodic grid, as used by the integrator.
pub fn central_difference(values: &[f64], dx: f64) -> Vec<f64> {
    let data = [values.to_vec()];
    let g = Grid { data: &data, t: 0.0, dx };
    (0..values.len()).map(|i| g.value(Source::Central(0), i)).collect()
}

/// Three-point second difference on a periodic grid.
pub fn second_difference(values: &[f64], dx: f64) -> Vec<f64> {
    let data = [values.to_vec()];
    let g = Grid { data: &data, t: 0.0, dx };
    (0..values.len()).map(|i| g.value(Source::Second(0), i)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Completed,
    NonFinite { t: f64, reason: String },
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub columns: Vec<String>,
    /// One row per recorded step; the first entry is the time.
    pub rows: Vec<Vec<f64>>,
    pub max_action_balance: f64,
    pub steps: usize,
    pub termination: Termination,
}

impl RunReport {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let end = match &self.termination {
            Termination::Completed => "completed".to_string(),
            Termination::NonFinite { t, reason } => format!("stopped at t={t}: {reason}"),
        };
        format!(
            "steps {}; recorded rows {}; max action-balance residual {:.3e}; {end}\n",
            self.steps,
            self.rows.len(),
            self.max_action_balance
        )
    }
}

#[derive(Clone, Debug)]
pub struct Run {
    /// Last finite state.
    pub state: GridState,
    pub report: RunReport,
}

const MONITORS: [&str; 2] = ["energy", "action_balance"];

pub fn simulate(p: &EvolutionProblem, s: &SimSettings) -> Result<Run> {
    if s.dt.is_nan() || s.dt <= 0.0 || s.t_end.is_nan() || s.t_end < 0.0 {
        return Err(Error::Config(format!("need dt > 0 and t_end >= 0, got dt={} t_end={}", s.dt, s.t_end)));
    }
    if p.m == 2 && s.dt > s.cfl * p.dx() {
        return Err(Error::Config(format!(
            "dt={} violates the CFL bound {} * dx = {}",
            s.dt,
            s.cfl,
            s.cfl * p.dx()
        )));
    }
    if let Some(bad) = s.monitors.iter().find(|m| !MONITORS.contains(&m.as_str())) {
        return Err(Error::Config(format!("unknown monitor '{bad}' (known: {})", MONITORS.join(", "))));
    }
    let steps = (s.t_end / s.dt).round() as usize;
    let cadence = s.cadence.max(1);
    let mut columns = vec!["t".to_string()];
    if s.full_state {
        for name in &p.names {
            for i in 0..p.nodes {
                columns.push(format!("{name}@{i}"));
            }
        }
    }
    columns.extend(s.monitors.iter().cloned());

    let mut state = initial_state(p, s)?;
    let mut window: VecDeque<GridState> = VecDeque::with_capacity(5);
    let mut balance = vec![f64::NAN; steps + 1];
    let want_energy = s.monitors.iter().any(|m| m == "energy");
    let mut snapshots: Vec<(usize, Vec<f64>, f64)> = Vec::new();
    let record = |k: usize, st: &GridState, snaps: &mut Vec<(usize, Vec<f64>, f64)>| {
        let mut row = vec![st.t];
        if s.full_state {
            row.extend(st.data.iter().flatten());
        }
        let e = if want_energy { monitor_energy(p, st) } else { f64::NAN };
        snaps.push((k, row, e));
    };
    let mut termination = Termination::Completed;
    let mut done = 0;
    record(0, &state, &mut snapshots);
    window.push_back(state.clone());
    for k in 1..=steps {
        match step_rk4(p, &state, s.dt, s.exec) {
            Ok(next) => state = next,
            Err(Error::NonFinite { t, reason }) => {
                termination = Termination::NonFinite { t, reason };
                break;
            }
            Err(e) => return Err(e),
        }
        done = k;
        if window.len() == 5 {
            window.pop_front();
        }
        window.push_back(state.clone());
        if window.len() == 5 {
            let w = [&window[0], &window[1], &window[2], &window[3], &window[4]];
            balance[k - 2] = monitor_action_balance(p, w, s.dt);
        }
        if k % cadence == 0 || k == steps {
            record(k, &state, &mut snapshots);
        }
    }
    let max_action_balance = balance.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let rows = snapshots
        .into_iter()
        .map(|(k, mut row, e)| {
            row.extend(s.monitors.iter().map(|m| if m == "energy" { e } else { balance[k] }));
            row
        })
        .collect();
    Ok(Run {
        state,
        report: RunReport { columns, rows, max_action_balance, steps: done, termination },
    })
}
