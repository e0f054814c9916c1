//! Named equation lists with text, LaTeX and line-oriented machine output.

use std::fmt;

use crate::chart::ChartKind;
use crate::expr::parse::{parse, ParseContext};
use crate::expr::{equal, Equality, Expr, LatexStyle};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Evolution,
    ActionBalance,
    Constraint,
    SemiHolonomy,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Evolution => "EVOLUTION",
            Role::ActionBalance => "ACTION-BALANCE",
            Role::Constraint => "CONSTRAINT",
            Role::SemiHolonomy => "SEMI-HOLONOMY",
        }
    }

    pub fn from_tag(s: &str) -> Option<Role> {
        [Role::Evolution, Role::ActionBalance, Role::Constraint, Role::SemiHolonomy]
            .into_iter()
            .find(|r| r.tag() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Clone, Debug)]
pub struct Equation {
    pub name: String,
    pub role: Role,
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Equation {
    pub fn new(name: impl Into<String>, role: Role, lhs: Expr, rhs: Expr) -> Self {
        Equation { name: name.into(), role, lhs, rhs }
    }

    /// lhs − rhs.
    pub fn residual(&self) -> Expr {
        (&self.lhs - &self.rhs).simplify()
    }

    pub fn simplify(&self) -> Equation {
        Equation {
            name: self.name.clone(),
            role: self.role,
            lhs: self.lhs.simplify(),
            rhs: self.rhs.simplify(),
        }
    }

    /// Same equation, up to moving terms across and an overall sign.
    pub fn equivalent(&self, other: &Equation) -> Equality {
        let (a, b) = (self.residual(), other.residual());
        let direct = equal(&a, &b);
        if direct.holds() {
            return direct;
        }
        let flipped = equal(&a, &b.neg());
        if flipped.holds() {
            flipped
        } else {
            direct
        }
    }
}

#[derive(Clone, Debug)]
pub struct EquationSet {
    pub title: String,
    pub chart: ChartKind,
    pub m: usize,
    pub n: usize,
    pub equations: Vec<Equation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Text,
    Latex,
    Machine,
}

const MACHINE_HEADER: &str = "# mcf equations v1";

impl EquationSet {
    pub fn new(title: impl Into<String>, chart: ChartKind, m: usize, n: usize) -> Self {
        EquationSet { title: title.into(), chart, m, n, equations: Vec::new() }
    }

    pub fn push(&mut self, eq: Equation) {
        self.equations.push(eq);
    }

    pub fn get(&self, name: &str) -> Option<&Equation> {
        self.equations.iter().find(|e| e.name == name)
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &Equation> {
        self.equations.iter().filter(move |e| e.role == role)
    }

    pub fn len(&self) -> usize {
        self.equations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equations.is_empty()
    }

    pub fn render(&self, format: Format, style: &LatexStyle) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Latex => self.to_latex(style),
            Format::Machine => self.to_machine(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} [{} m={} n={}]\n", self.title, self.chart, self.m, self.n);
        for e in &self.equations {
            out.push_str(&format!("  {:<15} {:<12} {} = {}\n", e.role.tag(), e.name, e.lhs, e.rhs));
        }
        out
    }

    pub fn to_latex(&self, style: &LatexStyle) -> String {
        let mut out = String::from("\\begin{align*}\n");
        let lines: Vec<String> = self
            .equations
            .iter()
            .map(|e| format!("  {} &= {} && \\text{{{}}}", e.lhs.to_latex(style), e.rhs.to_latex(style), e.role.tag()))
            .collect();
        out.push_str(&lines.join(" \\\\\n"));
        out.push_str("\n\\end{align*}\n");
        out
    }

    /// One tab-separated line per equation, expressions in the model grammar.
    pub fn to_machine(&self) -> String {
        let mut out = format!(
            "{MACHINE_HEADER}\ntitle\t{}\nchart\t{}\t{}\t{}\n",
            self.title, self.chart, self.m, self.n
        );
        for e in &self.equations {
            out.push_str(&format!("eq\t{}\t{}\t{}\t{}\n", e.role.tag(), e.name, e.lhs, e.rhs));
        }
        out
    }

    pub fn from_machine(src: &str) -> Result<EquationSet, Error> {
        let bad = |line: usize, msg: &str| Error::Config(format!("line {}: {msg}", line + 1));
        let mut lines = src.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == MACHINE_HEADER => {}
            _ => return Err(bad(0, "missing equation-file header")),
        }
        let mut set: Option<EquationSet> = None;
        let mut title = String::new();
        let mut ctx = ParseContext { permissive: true, ..Default::default() };
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            match cols[0] {
                "title" => title = cols[1..].join("\t"),
                "chart" if cols.len() == 4 => {
                    let kind = [
                        ChartKind::Lagrangian,
                        ChartKind::Hamiltonian,
                        ChartKind::Extended,
                        ChartKind::HamiltonianSub,
                    ]
                    .into_iter()
                    .find(|k| k.name() == cols[1])
                    .ok_or_else(|| bad(i, "unknown chart"))?;
                    let m = cols[2].parse().map_err(|_| bad(i, "bad m"))?;
                    let n = cols[3].parse().map_err(|_| bad(i, "bad n"))?;
                    ctx.dims = Some((m, n));
                    set = Some(EquationSet::new(title.clone(), kind, m, n));
                }
                "eq" if cols.len() == 5 => {
                    let s = set.as_mut().ok_or_else(|| bad(i, "equation before chart line"))?;
                    let role = Role::from_tag(cols[1]).ok_or_else(|| bad(i, "unknown role"))?;
                    let lhs = parse(cols[3], &ctx)?;
                    let rhs = parse(cols[4], &ctx)?;
                    s.push(Equation::new(cols[2], role, lhs, rhs));
                }
                _ => return Err(bad(i, "unrecognized line")),
            }
        }
        set.ok_or_else(|| bad(0, "missing chart line"))
    }

    /// Pairwise comparison by position; `None` when the sets differ in size.
    pub fn compare(&self, other: &EquationSet) -> Option<Vec<Equality>> {
        (self.len() == other.len()).then(|| {
            self.equations
                .iter()
                .zip(&other.equations)
                .map(|(a, b)| a.equivalent(b))
                .collect()
        })
    }

    /// Every equation of `other` matched by the equation of the same name.
    pub fn agrees_with(&self, other: &EquationSet) -> Vec<(String, Equality)> {
        other
            .equations
            .iter()
            .map(|b| {
                let verdict = match self.get(&b.name) {
                    Some(a) => a.equivalent(b),
                    None => Equality::Inconclusive { reason: format!("no equation named {}", b.name) },
                };
                (b.name.clone(), verdict)
            })
            .collect()
    }
}

impl fmt::Display for EquationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}
