//! Natural coordinate charts of 𝒫 = J¹π × ℝ^m, 𝒫*, 𝒲 and 𝒲₀.

use std::fmt;

use crate::expr::{Coord, Expr, Var};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChartKind {
    Lagrangian,
    Hamiltonian,
    Extended,
    HamiltonianSub,
}

impl ChartKind {
    pub fn name(self) -> &'static str {
        match self {
            ChartKind::Lagrangian => "LAGRANGIAN-P",
            ChartKind::Hamiltonian => "HAMILTONIAN-P*",
            ChartKind::Extended => "EXTENDED-W",
            ChartKind::HamiltonianSub => "HAMILTONIAN-SUB-W0",
        }
    }

    /// Closed-form dimension count.
    pub fn dimension(self, m: usize, n: usize) -> usize {
        match self {
            ChartKind::Lagrangian => 2 * m + n + n * m,
            ChartKind::Hamiltonian => n * m + n + 2 * m,
            ChartKind::Extended => 2 * m + n + 2 * n * m + 1,
            ChartKind::HamiltonianSub => 2 * m + n + 2 * n * m,
        }
    }

    fn has_velocities(self) -> bool {
        !matches!(self, ChartKind::Hamiltonian)
    }

    fn has_momenta(self) -> bool {
        !matches!(self, ChartKind::Lagrangian)
    }
}

impl fmt::Display for ChartKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chart {
    kind: ChartKind,
    m: usize,
    n: usize,
    coords: Vec<Coord>,
}

impl Chart {
    pub fn new(kind: ChartKind, m: usize, n: usize) -> Result<Chart, Error> {
        if m == 0 || n == 0 {
            return Err(Error::Dimensions { m, n });
        }
        let mut coords = Vec::with_capacity(kind.dimension(m, n));
        coords.extend((0..m).map(Coord::X));
        coords.extend((0..n).map(Coord::Y));
        if kind.has_velocities() {
            coords.extend((0..n).flat_map(|a| (0..m).map(move |mu| Coord::Dy(a, mu))));
        }
        if kind.has_momenta() {
            coords.extend((0..n).flat_map(|a| (0..m).map(move |mu| Coord::P(a, mu))));
        }
        if kind == ChartKind::Extended {
            coords.push(Coord::Pext);
        }
        coords.extend((0..m).map(Coord::S));
        Ok(Chart { kind, m, n, coords })
    }

    pub fn kind(&self) -> ChartKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &Coord {
        &self.coords[i]
    }

    pub fn index_of(&self, c: &Coord) -> Option<usize> {
        let (m, n) = (self.m, self.n);
        let vel = if self.kind.has_velocities() { n * m } else { 0 };
        let mom = if self.kind.has_momenta() { n * m } else { 0 };
        let ext = usize::from(self.kind == ChartKind::Extended);
        match *c {
            Coord::X(mu) if mu < m => Some(mu),
            Coord::Y(a) if a < n => Some(m + a),
            Coord::Dy(a, mu) if vel > 0 && a < n && mu < m => Some(m + n + a * m + mu),
            Coord::P(a, mu) if mom > 0 && a < n && mu < m => Some(m + n + vel + a * m + mu),
            Coord::Pext if ext == 1 => Some(m + n + vel + mom),
            Coord::S(mu) if mu < m => Some(m + n + vel + mom + ext + mu),
            _ => None,
        }
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.index_of(c).is_some()
    }

    pub fn var(&self, i: usize) -> Var {
        Var::Coord(self.coords[i].clone())
    }

    pub fn check_coord(&self, c: &Coord) -> Result<usize, Error> {
        self.index_of(c).ok_or_else(|| Error::ForeignCoordinate {
            coord: c.to_string(),
            chart: self.kind.name(),
        })
    }

    /// Every chart coordinate referenced by `e` must belong to this chart.
    pub fn check_expr(&self, e: &Expr) -> Result<(), Error> {
        for v in e.vars() {
            if let Var::Coord(c) = &v {
                self.check_coord(c)?;
            }
        }
        Ok(())
    }

    /// Differentiation restricted to the chart's own coordinates.
    pub fn differentiate(&self, e: &Expr, c: &Coord) -> Result<Expr, Error> {
        self.check_coord(c)?;
        Ok(e.pdiff(&Var::Coord(c.clone())))
    }

    /// Substitution whose targets and replacements stay inside the chart.
    pub fn substitute(
        &self,
        e: &Expr,
        bindings: &std::collections::BTreeMap<Var, Expr>,
    ) -> Result<Expr, Error> {
        for (k, v) in bindings {
            if let Var::Coord(c) = k {
                self.check_coord(c)?;
            }
            self.check_expr(v)?;
        }
        Ok(e.substitute(bindings))
    }
}
