//! Declared field theories and the TOML model-file format.
//!
//! ```toml
//! name = "damped oscillator"
//! m = 1
//! n = 1
//! labels = ["q"]
//! base_labels = ["t"]
//! metric = "euclidean"            # "minkowski", "euclidean" or [["1","0"],["0","-1"]]
//! lagrangian = "dy[0,0]^2/2 - omega^2*y[0]^2/2 - gamma*s[0]"
//!
//! [parameters]
//! omega = { value = "1", symbolic = true }
//! gamma = { value = "1/10", symbolic = true }
//! k = "3/2"                       # substituted before any derivation
//! c = "symbolic"                  # free constant without a numeric value
//! J = ["symbolic", "symbolic"]    # indexed parameter J[0], J[1]
//!
//! [legendre_inverse]              # optional, for non-quadratic regular L
//! "dy[0,0]" = "p[0,0]"
//!
//! [simulate]
//! N = 256
//! length = 6.283185307179586
//! dt = 0.001
//! t_end = 10.0
//! cadence = 100
//! monitors = ["energy", "action_balance"]
//! formalism = "lagrangian"
//! initial = { y = ["1"], v = ["0"] }
//! ```

use std::collections::BTreeMap;
use std::fmt;

use toml::de::{DeTable, DeValue};
use toml::Spanned;

use crate::chart::{Chart, ChartKind};
use crate::expr::parse::{line_col, parse, ParamSymbol, ParseContext};
use crate::expr::{equal, Coord, Expr, Param, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    /// Kept as a free symbol during derivation.
    pub symbolic: bool,
    pub value: Option<Expr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimFormalism {
    Lagrangian,
    Hamiltonian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateConfig {
    pub nodes: usize,
    pub length: f64,
    pub dt: f64,
    pub t_end: f64,
    pub cadence: usize,
    pub monitors: Vec<String>,
    pub formalism: SimFormalism,
    pub cfl: f64,
    /// Initial fields as functions of `x[1]` (ignored for m = 1).
    pub initial_y: Vec<Expr>,
    /// Initial velocities ∂y/∂x⁰, or momenta for the Hamiltonian formalism.
    pub initial_v: Vec<Expr>,
    pub initial_s: Vec<Expr>,
}

impl SimulateConfig {
    pub fn new(n_fields: usize) -> Self {
        SimulateConfig {
            nodes: 1,
            length: 2.0 * std::f64::consts::PI,
            dt: 1e-3,
            t_end: 1.0,
            cadence: 1,
            monitors: vec!["energy".into(), "action_balance".into()],
            formalism: SimFormalism::Lagrangian,
            cfl: 0.5,
            initial_y: vec![Expr::zero(); n_fields],
            initial_v: vec![Expr::zero(); n_fields],
            initial_s: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub lagrangian: Expr,
    pub parameters: BTreeMap<Param, ParamDecl>,
    /// Contravariant metric g^{mu nu}.
    pub metric: Option<Vec<Vec<Expr>>>,
    pub labels: Vec<String>,
    pub base_labels: Vec<String>,
    /// User-supplied y^A_mu as functions on 𝒫*.
    pub legendre_inverse: Option<BTreeMap<(usize, usize), Expr>>,
    pub simulate: Option<SimulateConfig>,
}

impl ModelSpec {
    pub fn new(m: usize, n: usize, lagrangian: Expr) -> Self {
        let mut parameters = BTreeMap::new();
        for v in lagrangian.vars() {
            if let Var::Param(p) = v {
                parameters.insert(p, ParamDecl { symbolic: true, value: None });
            }
        }
        ModelSpec {
            name: String::new(),
            m,
            n,
            lagrangian,
            parameters,
            metric: None,
            labels: Vec::new(),
            base_labels: Vec::new(),
            legendre_inverse: None,
            simulate: None,
        }
    }

    pub fn with_param(mut self, name: &str, value: Option<Expr>) -> Self {
        self.parameters
            .insert(Param::new(name, vec![]), ParamDecl { symbolic: true, value });
        self
    }

    /// Numeric values of symbolic parameters, for simulation.
    pub fn parameter_values(&self) -> BTreeMap<Var, Expr> {
        self.parameters
            .iter()
            .filter(|(_, d)| d.symbolic)
            .filter_map(|(p, d)| d.value.clone().map(|v| (Var::Param(p.clone()), v)))
            .collect()
    }

    pub fn chart(&self, kind: ChartKind) -> Result<Chart, crate::Error> {
        Chart::new(kind, self.m, self.n)
    }
}

pub fn minkowski(m: usize) -> Vec<Vec<Expr>> {
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| match (i == j, i) {
                    (false, _) => Expr::zero(),
                    (true, 0) => Expr::one(),
                    (true, _) => Expr::int(-1),
                })
                .collect()
        })
        .collect()
}

pub fn euclidean(m: usize) -> Vec<Vec<Expr>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { Expr::one() } else { Expr::zero() }).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Issue {
    Dimensions { m: usize, n: usize },
    UndefinedSymbol(String),
    IndexOutOfRange { symbol: String, detail: String },
    ForeignCoordinate(String),
    MetricShape { rows: usize, m: usize },
    MetricAsymmetric { row: usize, col: usize },
    LabelCount { labels: usize, n: usize },
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Issue::Dimensions { m, n } => write!(f, "m and n must be positive (m={m}, n={n})"),
            Issue::UndefinedSymbol(s) => write!(f, "undefined symbol {s}"),
            Issue::IndexOutOfRange { symbol, detail } => {
                write!(f, "index out of range in {symbol}: {detail}")
            }
            Issue::ForeignCoordinate(s) => {
                write!(f, "{s} is not a coordinate of the Lagrangian chart")
            }
            Issue::MetricShape { rows, m } => write!(f, "metric has {rows} rows, expected {m}x{m}"),
            Issue::MetricAsymmetric { row, col } => {
                write!(f, "metric entry ({row},{col}) differs from ({col},{row})")
            }
            Issue::LabelCount { labels, n } => write!(f, "{labels} field labels for n={n} fields"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            writeln!(f, "  - {i}")?;
        }
        Ok(())
    }
}

fn range_issue(v: &Var, m: usize, n: usize) -> Option<Issue> {
    let bad = |what: &str, i: usize, lim: usize| {
        (i >= lim).then(|| Issue::IndexOutOfRange {
            symbol: v.to_string(),
            detail: format!("{what} index {i} not below {lim}"),
        })
    };
    match v {
        Var::Coord(Coord::X(mu)) | Var::Coord(Coord::S(mu)) => bad("base", *mu, m),
        Var::Coord(Coord::Y(a)) => bad("field", *a, n),
        Var::Coord(Coord::Dy(a, mu)) => bad("field", *a, n).or_else(|| bad("base", *mu, m)),
        _ => None,
    }
}

pub fn validate_model(spec: &ModelSpec) -> ValidationReport {
    let (m, n) = (spec.m, spec.n);
    let mut issues = Vec::new();
    if m == 0 || n == 0 {
        issues.push(Issue::Dimensions { m, n });
    }
    for v in spec.lagrangian.vars() {
        match &v {
            Var::Coord(Coord::P(..)) | Var::Coord(Coord::Pext) => {
                issues.push(Issue::ForeignCoordinate(v.to_string()))
            }
            Var::Coord(_) => issues.extend(range_issue(&v, m, n)),
            Var::Param(p) => {
                if !spec.parameters.contains_key(p) {
                    issues.push(Issue::UndefinedSymbol(v.to_string()));
                }
            }
            _ => issues.push(Issue::ForeignCoordinate(v.to_string())),
        }
    }
    if let Some(g) = &spec.metric {
        if g.len() != m || g.iter().any(|r| r.len() != m) {
            issues.push(Issue::MetricShape { rows: g.len(), m });
        } else {
            for (i, row) in g.iter().enumerate() {
                for (j, gij) in row.iter().enumerate().skip(i + 1) {
                    if !equal(gij, &g[j][i]).is_exact() {
                        issues.push(Issue::MetricAsymmetric { row: i, col: j });
                    }
                }
            }
        }
    }
    if !spec.labels.is_empty() && spec.labels.len() != n {
        issues.push(Issue::LabelCount { labels: spec.labels.len(), n });
    }
    ValidationReport { issues }
}

/// Positioned diagnostic for model files.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.col, self.message)
    }
}

struct Reader<'s> {
    src: &'s str,
    diags: Vec<Diagnostic>,
}

type Val<'i> = Spanned<DeValue<'i>>;

impl<'s> Reader<'s> {
    fn at(&mut self, offset: usize, message: impl Into<String>) {
        let (line, col) = line_col(self.src, offset);
        self.diags.push(Diagnostic { line, col, message: message.into() });
    }

    fn string_start(&self, span: &std::ops::Range<usize>) -> usize {
        let rest = &self.src[span.start..];
        if rest.starts_with("\"\"\"") || rest.starts_with("'''") {
            span.start + 3
        } else if rest.starts_with('"') || rest.starts_with('\'') {
            span.start + 1
        } else {
            span.start
        }
    }

    fn literal_text(&self, v: &Val<'_>) -> Option<(String, usize)> {
        match v.get_ref() {
            DeValue::String(s) => Some((s.to_string(), self.string_start(&v.span()))),
            DeValue::Integer(i) => Some((i.as_str().replace('_', ""), v.span().start)),
            DeValue::Float(x) => Some((x.as_str().replace('_', ""), v.span().start)),
            _ => None,
        }
    }

    fn expr(&mut self, v: &Val<'_>, ctx: &ParseContext) -> Option<Expr> {
        let Some((text, start)) = self.literal_text(v) else {
            self.at(v.span().start, format!("expected expression string, found {}", v.get_ref().type_str()));
            return None;
        };
        match parse(&text, ctx) {
            Ok(e) => Some(e),
            Err(e) => {
                self.at(start + e.offset, e.message);
                None
            }
        }
    }

    fn usize_field(&mut self, t: &DeTable<'_>, key: &str, required: bool) -> Option<usize> {
        let Some(v) = t.get(key) else {
            if required {
                self.at(0, format!("missing required key '{key}'"));
            }
            return None;
        };
        match v.get_ref().as_integer().and_then(|i| i.as_str().replace('_', "").parse::<i64>().ok()) {
            Some(i) if i > 0 => Some(i as usize),
            _ => {
                self.at(v.span().start, format!("'{key}' must be a positive integer"));
                None
            }
        }
    }

    fn float_field(&mut self, t: &DeTable<'_>, key: &str) -> Option<f64> {
        let v = t.get(key)?;
        let parsed = match v.get_ref() {
            DeValue::Float(f) => f.as_str().replace('_', "").parse::<f64>().ok(),
            DeValue::Integer(i) => i.as_str().replace('_', "").parse::<f64>().ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.at(v.span().start, format!("'{key}' must be a number"));
        }
        parsed
    }

    fn strings(&mut self, v: &Val<'_>, key: &str) -> Vec<String> {
        match v.get_ref().as_array() {
            Some(items) => items
                .iter()
                .filter_map(|it| match it.get_ref().as_str() {
                    Some(s) => Some(s.to_string()),
                    None => {
                        self.at(it.span().start, format!("'{key}' entries must be strings"));
                        None
                    }
                })
                .collect(),
            None => {
                self.at(v.span().start, format!("'{key}' must be an array of strings"));
                Vec::new()
            }
        }
    }

    fn param_leaf(&mut self, v: &Val<'_>, name: &Param, ctx: &ParseContext) -> Option<(ParamDecl, Expr)> {
        let symbol = Expr::var(Var::Param(name.clone()));
        if let Some(t) = v.get_ref().as_table() {
            for (k, kv) in t.iter() {
                if !matches!(k.get_ref().as_ref(), "value" | "symbolic") {
                    self.at(kv.span().start, format!("unknown parameter key '{}'", k.get_ref()));
                }
            }
            let symbolic = match t.get("symbolic") {
                None => false,
                Some(b) => match b.get_ref().as_bool() {
                    Some(b) => b,
                    None => {
                        self.at(b.span().start, "'symbolic' must be true or false");
                        return None;
                    }
                },
            };
            let value = match t.get("value") {
                Some(val) => Some(self.expr(val, ctx)?),
                None => None,
            };
            if !symbolic && value.is_none() {
                self.at(v.span().start, "parameter table needs 'value' or 'symbolic = true'");
                return None;
            }
            let bound = if symbolic { symbol } else { value.clone().unwrap() };
            return Some((ParamDecl { symbolic, value }, bound));
        }
        if v.get_ref().as_str() == Some("symbolic") {
            return Some((ParamDecl { symbolic: true, value: None }, symbol));
        }
        let value = self.expr(v, ctx)?;
        Some((ParamDecl { symbolic: false, value: Some(value.clone()) }, value))
    }

    fn collect_indexed(
        &mut self,
        v: &Val<'_>,
        name: &str,
        prefix: Vec<usize>,
        ctx: &ParseContext,
        out: &mut Vec<(Vec<usize>, ParamDecl, Expr)>,
    ) {
        if let Some(items) = v.get_ref().as_array() {
            for (i, it) in items.iter().enumerate() {
                let mut ix = prefix.clone();
                ix.push(i);
                self.collect_indexed(it, name, ix, ctx, out);
            }
            return;
        }
        let p = Param::new(name, prefix.clone());
        if let Some((decl, e)) = self.param_leaf(v, &p, ctx) {
            out.push((prefix, decl, e));
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "name", "m", "n", "labels", "base_labels", "metric", "lagrangian", "parameters",
    "legendre_inverse", "simulate",
];

/// Parse a model document; diagnostics carry 1-based line/column positions.
pub fn parse_model_str(src: &str) -> Result<ModelSpec, Vec<Diagnostic>> {
    let doc = match DeTable::parse(src) {
        Ok(d) => d,
        Err(e) => {
            let (line, col) = line_col(src, e.span().map(|s| s.start).unwrap_or(0));
            return Err(vec![Diagnostic { line, col, message: e.message().to_string() }]);
        }
    };
    let t = doc.get_ref();
    let mut r = Reader { src, diags: Vec::new() };
    for (k, v) in t.iter() {
        if !TOP_KEYS.contains(&k.get_ref().as_ref()) {
            r.at(v.span().start, format!("unknown key '{}'", k.get_ref()));
        }
    }
    let m = r.usize_field(t, "m", true);
    let n = r.usize_field(t, "n", true);
    let (Some(m), Some(n)) = (m, n) else {
        return Err(r.diags);
    };
    let mut ctx = ParseContext::with_dims(m, n);

    let mut parameters = BTreeMap::new();
    if let Some(pv) = t.get("parameters") {
        match pv.get_ref().as_table() {
            Some(pt) => {
                let plain = ParseContext::with_dims(m, n);
                let mut symbols = BTreeMap::new();
                for (k, v) in pt.iter() {
                    let name = k.get_ref().to_string();
                    if v.get_ref().is_array() {
                        let mut leaves = Vec::new();
                        r.collect_indexed(v, &name, Vec::new(), &plain, &mut leaves);
                        let rank = leaves.first().map(|l| l.0.len()).unwrap_or(1);
                        let mut entries = BTreeMap::new();
                        for (ix, decl, e) in leaves {
                            parameters.insert(Param::new(name.clone(), ix.clone()), decl);
                            entries.insert(ix, e);
                        }
                        symbols.insert(name, ParamSymbol::Indexed { rank, entries });
                    } else {
                        let p = Param::new(name.clone(), vec![]);
                        if let Some((decl, e)) = r.param_leaf(v, &p, &plain) {
                            parameters.insert(p, decl);
                            symbols.insert(name, ParamSymbol::Scalar(e));
                        }
                    }
                }
                ctx.params = symbols;
            }
            None => r.at(pv.span().start, "'parameters' must be a table"),
        }
    }

    let metric = match t.get("metric") {
        None => None,
        Some(v) => match v.get_ref() {
            DeValue::String(s) if s == "minkowski" => Some(minkowski(m)),
            DeValue::String(s) if s == "euclidean" => Some(euclidean(m)),
            DeValue::Array(rows) => {
                let mut g = Vec::new();
                for row in rows.iter() {
                    match row.get_ref().as_array() {
                        Some(cells) => {
                            g.push(cells.iter().map(|c| r.expr(c, &ctx).unwrap_or_else(Expr::zero)).collect())
                        }
                        None => r.at(row.span().start, "metric rows must be arrays"),
                    }
                }
                Some(g)
            }
            _ => {
                r.at(v.span().start, "metric must be \"minkowski\", \"euclidean\" or an array of rows");
                None
            }
        },
    };
    if let Some(g) = &metric {
        if g.len() == m && g.iter().all(|row| row.len() == m) {
            ctx.metric = Some(g.clone());
        }
    }

    let lagrangian = match t.get("lagrangian") {
        Some(v) => r.expr(v, &ctx),
        None => {
            r.at(0, "missing required key 'lagrangian'");
            None
        }
    };

    let name = t.get("name").and_then(|v| v.get_ref().as_str()).unwrap_or("").to_string();
    let labels = t.get("labels").map(|v| r.strings(v, "labels")).unwrap_or_default();
    let base_labels = t.get("base_labels").map(|v| r.strings(v, "base_labels")).unwrap_or_default();

    let legendre_inverse = t.get("legendre_inverse").and_then(|v| match v.get_ref().as_table() {
        Some(lt) => {
            let mut out = BTreeMap::new();
            for (k, kv) in lt.iter() {
                let key_at = k.span().start;
                let target = parse(k.get_ref(), &ParseContext::with_dims(m, n)).ok();
                match target.as_ref().and_then(|e| match e.node() {
                    crate::expr::Node::Var(Var::Coord(Coord::Dy(a, mu))) => Some((*a, *mu)),
                    _ => None,
                }) {
                    Some(key) => {
                        if let Some(e) = r.expr(kv, &ctx) {
                            out.insert(key, e);
                        }
                    }
                    None => r.at(key_at, format!("legendre_inverse key '{}' must be a multivelocity dy[A,mu]", k.get_ref())),
                }
            }
            Some(out)
        }
        None => {
            r.at(v.span().start, "'legendre_inverse' must be a table");
            None
        }
    });

    let simulate = t.get("simulate").and_then(|v| match v.get_ref().as_table() {
        Some(st) => read_simulate(&mut r, st, &ctx, n),
        None => {
            r.at(v.span().start, "'simulate' must be a table");
            None
        }
    });

    if !r.diags.is_empty() {
        return Err(r.diags);
    }
    let spec = ModelSpec {
        name,
        m,
        n,
        lagrangian: lagrangian.expect("diagnosed above"),
        parameters,
        metric,
        labels,
        base_labels,
        legendre_inverse,
        simulate,
    };
    let report = validate_model(&spec);
    if !report.is_empty() {
        return Err(report
            .issues
            .iter()
            .map(|i| Diagnostic { line: 0, col: 0, message: i.to_string() })
            .collect());
    }
    Ok(spec)
}

const SIM_KEYS: &[&str] = &[
    "N", "length", "dt", "t_end", "cadence", "monitors", "formalism", "cfl", "initial",
];

fn read_simulate(r: &mut Reader<'_>, st: &DeTable<'_>, ctx: &ParseContext, n: usize) -> Option<SimulateConfig> {
    for (k, v) in st.iter() {
        if !SIM_KEYS.contains(&k.get_ref().as_ref()) {
            r.at(v.span().start, format!("unknown simulate key '{}'", k.get_ref()));
        }
    }
    let mut cfg = SimulateConfig::new(n);
    if let Some(nodes) = r.usize_field(st, "N", false) {
        cfg.nodes = nodes;
    }
    if let Some(c) = r.usize_field(st, "cadence", false) {
        cfg.cadence = c;
    }
    for (key, slot) in [("length", &mut cfg.length), ("dt", &mut cfg.dt), ("t_end", &mut cfg.t_end), ("cfl", &mut cfg.cfl)] {
        if let Some(x) = r.float_field(st, key) {
            *slot = x;
        }
    }
    if let Some(v) = st.get("monitors") {
        cfg.monitors = r.strings(v, "monitors");
    }
    if let Some(v) = st.get("formalism") {
        cfg.formalism = match v.get_ref().as_str() {
            Some("lagrangian") => SimFormalism::Lagrangian,
            Some("hamiltonian") => SimFormalism::Hamiltonian,
            _ => {
                r.at(v.span().start, "formalism must be \"lagrangian\" or \"hamiltonian\"");
                SimFormalism::Lagrangian
            }
        };
    }
    if let Some(v) = st.get("initial") {
        let Some(it) = v.get_ref().as_table() else {
            r.at(v.span().start, "'initial' must be a table");
            return None;
        };
        for (key, slot) in [("y", &mut cfg.initial_y), ("v", &mut cfg.initial_v), ("s", &mut cfg.initial_s)] {
            if let Some(arr) = it.get(key) {
                match arr.get_ref().as_array() {
                    Some(items) => {
                        *slot = items.iter().map(|c| r.expr(c, ctx).unwrap_or_else(Expr::zero)).collect()
                    }
                    None => r.at(arr.span().start, format!("initial.{key} must be an array")),
                }
            }
        }
    }
    Some(cfg)
}
