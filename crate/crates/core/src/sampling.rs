//! Seeded generic points on a chart, optionally restricted to a submanifold
//! given as a graph over the remaining coordinates.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::Chart;
use crate::expr::equal::random_rational;
use crate::expr::{Coord, Expr, Var};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SAMPLES: usize = 20;

#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub count: usize,
    pub seed: u64,
    /// Coordinates fixed by the submanifold, written in the other coordinates.
    pub dependent: BTreeMap<Coord, Expr>,
    /// Values for parameters; unlisted parameters are sampled.
    pub fixed: BTreeMap<Var, f64>,
}

impl SamplePlan {
    pub fn new(count: usize, seed: u64) -> Self {
        SamplePlan { count, seed, dependent: BTreeMap::new(), fixed: BTreeMap::new() }
    }

    pub fn on(mut self, dependent: BTreeMap<Coord, Expr>) -> Self {
        self.dependent = dependent;
        self
    }

    pub fn with_values(mut self, fixed: BTreeMap<Var, f64>) -> Self {
        self.fixed = fixed;
        self
    }
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan::new(DEFAULT_SAMPLES, DEFAULT_SEED)
    }
}

#[derive(Clone, Debug)]
pub struct Point {
    /// Values in chart order.
    pub coords: Vec<f64>,
    /// Every bound symbol: chart coordinates and parameters.
    pub env: BTreeMap<Var, f64>,
}

impl Point {
    pub fn lookup(&self) -> impl Fn(&Var) -> Option<f64> + '_ {
        move |v| self.env.get(v).copied()
    }
}

/// Positive rational in [1/2, 2]; parameters are often physical constants
/// appearing in denominators.
fn positive_rational<R: Rng>(rng: &mut R) -> f64 {
    let den: i64 = rng.gen_range(1..=12);
    let num: i64 = rng.gen_range((den + 1) / 2..=2 * den);
    num as f64 / den as f64
}

/// `count` points; parameters referenced by `symbols` (or by the dependent
/// expressions) are drawn once per point. Points where a dependent coordinate
/// fails to evaluate are redrawn, up to twenty times the requested count.
pub fn sample_points(chart: &Chart, symbols: &BTreeSet<Var>, plan: &SamplePlan) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut params: BTreeSet<Var> = symbols
        .iter()
        .filter(|v| !matches!(v, Var::Coord(_)))
        .cloned()
        .collect();
    for e in plan.dependent.values() {
        params.extend(e.vars().into_iter().filter(|v| !matches!(v, Var::Coord(_))));
    }
    let mut out = Vec::with_capacity(plan.count);
    let mut attempts = 0;
    while out.len() < plan.count && attempts < 20 * plan.count.max(1) {
        attempts += 1;
        let mut env: BTreeMap<Var, f64> = BTreeMap::new();
        for p in &params {
            let v = plan.fixed.get(p).copied().unwrap_or_else(|| positive_rational(&mut rng));
            env.insert(p.clone(), v);
        }
        for (v, x) in &plan.fixed {
            env.insert(v.clone(), *x);
        }
        for c in chart.coords() {
            if !plan.dependent.contains_key(c) {
                env.insert(Var::Coord(c.clone()), random_rational(&mut rng));
            }
        }
        let mut ok = true;
        for (c, e) in &plan.dependent {
            match e.eval_map(&env) {
                Ok(x) => {
                    env.insert(Var::Coord(c.clone()), x);
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let coords = chart.coords().iter().map(|c| env[&Var::Coord(c.clone())]).collect();
        out.push(Point { coords, env });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartKind;

    #[test]
    fn same_seed_same_points() {
        let c = Chart::new(ChartKind::Lagrangian, 2, 1).unwrap();
        let a = sample_points(&c, &BTreeSet::new(), &SamplePlan::default());
        let b = sample_points(&c, &BTreeSet::new(), &SamplePlan::default());
        assert_eq!(a.len(), DEFAULT_SAMPLES);
        assert!(a.iter().zip(&b).all(|(p, q)| p.coords == q.coords));
    }

    #[test]
    fn dependent_coordinates_follow_their_graph() {
        let c = Chart::new(ChartKind::HamiltonianSub, 1, 1).unwrap();
        let mut dep = BTreeMap::new();
        dep.insert(Coord::P(0, 0), Expr::param("k") * Expr::dy(0, 0));
        let pts = sample_points(&c, &BTreeSet::new(), &SamplePlan::new(5, 7).on(dep));
        for p in &pts {
            let k = p.env[&Var::Param(crate::expr::Param::new("k", vec![]))];
            assert!((0.5..=2.0).contains(&k));
            let want = k * p.env[&Var::Coord(Coord::Dy(0, 0))];
            assert!((p.env[&Var::Coord(Coord::P(0, 0))] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn fixed_values_are_respected() {
        let c = Chart::new(ChartKind::Lagrangian, 1, 1).unwrap();
        let g = Var::Param(crate::expr::Param::new("g", vec![]));
        let syms: BTreeSet<Var> = [g.clone()].into();
        let fixed: BTreeMap<Var, f64> = [(g.clone(), 0.25)].into();
        let pts = sample_points(&c, &syms, &SamplePlan::new(3, 1).with_values(fixed));
        assert!(pts.iter().all(|p| p.env[&g] == 0.25));
    }
}
