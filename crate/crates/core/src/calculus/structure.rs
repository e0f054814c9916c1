//! Pointwise rank diagnostics for (pre)multicontact pairs (Θ, ω).

use std::collections::BTreeMap;
use std::fmt;

use super::form::Form;
use crate::linalg::{common_nullspace, span_rank, Matrix};
use crate::par::{self, Exec};
use crate::sampling::{sample_points, Point, SamplePlan};
use crate::{Error, Result};

const ZERO_TOL: f64 = 1e-8;

/// Form evaluated at a point.
#[derive(Clone, Debug, Default)]
pub struct NumForm {
    pub degree: usize,
    pub terms: Vec<(Vec<usize>, f64)>,
}

impl NumForm {
    pub fn eval(f: &Form, p: &Point) -> Result<NumForm> {
        let look = p.lookup();
        let mut terms = Vec::with_capacity(f.terms().len());
        for (ix, c) in f.terms() {
            let v = c.eval(&look)?;
            if v != 0.0 {
                terms.push((ix.clone(), v));
            }
        }
        Ok(NumForm { degree: f.degree(), terms })
    }

    pub fn contract(&self, v: &[f64]) -> NumForm {
        if self.degree == 0 {
            return NumForm { degree: 0, terms: Vec::new() };
        }
        let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (ix, c) in &self.terms {
            for (r, &j) in ix.iter().enumerate() {
                if v[j] == 0.0 {
                    continue;
                }
                let mut rest = ix.clone();
                rest.remove(r);
                let sign = if r % 2 == 1 { -1.0 } else { 1.0 };
                *acc.entry(rest).or_insert(0.0) += sign * v[j] * c;
            }
        }
        NumForm { degree: self.degree - 1, terms: acc.into_iter().collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.iter().fold(0.0f64, |a, (_, c)| a.max(c.abs()))
    }

    /// Rows are (k−1)-index sets, columns the basis vectors ∂_j; the kernel
    /// of this matrix is the one-kernel of the form.
    pub fn kernel_matrix(&self, dim: usize) -> Matrix {
        let mut rows: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
        for (ix, c) in &self.terms {
            for (r, &j) in ix.iter().enumerate() {
                let mut key = ix.clone();
                key.remove(r);
                let sign = if r % 2 == 1 { -1.0 } else { 1.0 };
                rows.entry(key).or_insert_with(|| vec![0.0; dim])[j] += sign * c;
            }
        }
        let rows: Vec<Vec<f64>> = rows.into_values().collect();
        if rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&rows)
        }
    }

    fn dense(&self, index: &BTreeMap<Vec<usize>, usize>) -> Vec<f64> {
        let mut v = vec![0.0; index.len()];
        for (ix, c) in &self.terms {
            v[index[ix]] = *c;
        }
        v
    }
}

/// Ranks at one sample point.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointRanks {
    pub ker_omega: usize,
    pub ker_theta: usize,
    pub ker_dtheta: usize,
    pub ker_theta_dtheta: usize,
    pub reeb: usize,
    pub characteristic: usize,
    /// Dimension of the span of {i(R)Θ | R ∈ 𝕽}, provided all of them
    /// annihilate ker ω.
    pub reeb_image: Option<usize>,
    pub variational: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormClass {
    Multicontact,
    Premulticontact,
    Neither,
}

impl fmt::Display for FormClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormClass::Multicontact => "multicontact",
            FormClass::Premulticontact => "premulticontact",
            FormClass::Neither => "neither multicontact nor premulticontact",
        })
    }
}

#[derive(Clone, Debug)]
pub struct StructureReport {
    pub dim: usize,
    pub m: usize,
    /// Minimal observed ranks.
    pub ranks: PointRanks,
    pub per_point: Vec<PointRanks>,
    pub samples: Vec<Vec<f64>>,
    pub class: FormClass,
    /// `Some(k)` when Θ is special premulticontact with characteristic rank k.
    pub special: Option<usize>,
    pub variational: bool,
    /// Definition conditions (1)–(4) in order.
    pub conditions: [bool; 4],
    pub probabilistic: bool,
}

impl StructureReport {
    pub fn is_special_multicontact(&self) -> bool {
        self.special == Some(0)
    }

    pub fn summary(&self) -> String {
        let special = match self.special {
            Some(0) => "special multicontact".to_string(),
            Some(k) => format!("special premulticontact (k={k})"),
            None => "not special".to_string(),
        };
        let var = if self.variational { ", variational" } else { "" };
        let prob = if self.probabilistic { " [PROBABILISTIC]" } else { "" };
        format!("{}; {special}{var}{prob}", self.class)
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.ranks;
        writeln!(f, "chart dimension      {}", self.dim)?;
        writeln!(f, "rank ker omega       {}", r.ker_omega)?;
        writeln!(f, "rank ker Theta       {}", r.ker_theta)?;
        writeln!(f, "rank ker dTheta      {}", r.ker_dtheta)?;
        writeln!(f, "rank ker Theta^dTheta {}", r.ker_theta_dtheta)?;
        writeln!(f, "rank Reeb            {}", r.reeb)?;
        writeln!(f, "rank characteristic  {}", r.characteristic)?;
        let c = self.conditions;
        writeln!(
            f,
            "special conditions   (1) {} (2) {} (3) {} (4) {}",
            c[0], c[1], c[2], c[3]
        )?;
        writeln!(f, "sample points        {}", self.samples.len())?;
        write!(f, "classification       {}", self.summary())
    }
}

fn ranks_at(theta: &Form, dtheta: &Form, omega: &Form, p: &Point) -> Result<PointRanks> {
    let dim = theta.chart().dim();
    let th = NumForm::eval(theta, p)?;
    let dth = NumForm::eval(dtheta, p)?;
    let om = NumForm::eval(omega, p)?;
    let (k_th, k_dth, k_om) = (th.kernel_matrix(dim), dth.kernel_matrix(dim), om.kernel_matrix(dim));

    let z = common_nullspace(&[&k_om], dim);
    let ker_theta = common_nullspace(&[&k_th], dim).len();
    let ker_dtheta = common_nullspace(&[&k_dth], dim).len();
    let ker_theta_dtheta = common_nullspace(&[&k_th, &k_dth], dim).len();
    let characteristic = common_nullspace(&[&k_om, &k_th, &k_dth], dim).len();

    // 𝕽: coefficients c with i(Z_l) i(Σ c_k Z_k) dΘ = 0 for every l.
    let scale = dth.max_abs().max(th.max_abs()).max(1.0);
    let a: Vec<NumForm> = z.iter().map(|zk| dth.contract(zk)).collect();
    let mut row_index: BTreeMap<(usize, Vec<usize>), usize> = BTreeMap::new();
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (k, ak) in a.iter().enumerate() {
        for (l, zl) in z.iter().enumerate() {
            for (ix, c) in ak.contract(zl).terms {
                let n = row_index.len();
                let r = *row_index.entry((l, ix)).or_insert(n);
                entries.push((r, k, c));
            }
        }
    }
    let mut reeb_sys = Matrix::zeros(row_index.len(), z.len());
    for (r, k, c) in entries {
        reeb_sys.add_to(r, k, c);
    }
    let coeffs = if reeb_sys.rows == 0 {
        common_nullspace(&[], z.len())
    } else {
        reeb_sys.nullspace()
    };
    let reeb: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|c| {
            let mut v = vec![0.0; dim];
            for (ck, zk) in c.iter().zip(&z) {
                for (vi, zi) in v.iter_mut().zip(zk) {
                    *vi += ck * zi;
                }
            }
            v
        })
        .collect();

    // condition (4): every i(R)Θ annihilates ker ω, and they span 𝒜^{m−1}(ker ω)
    let images: Vec<NumForm> = reeb.iter().map(|r| th.contract(r)).collect();
    let annihilates = images
        .iter()
        .all(|im| z.iter().all(|zl| im.contract(zl).max_abs() <= ZERO_TOL * scale));
    let reeb_image = annihilates.then(|| {
        let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for im in &images {
            for (ix, _) in &im.terms {
                let n = index.len();
                index.entry(ix.clone()).or_insert(n);
            }
        }
        if index.is_empty() {
            return 0;
        }
        let vs: Vec<Vec<f64>> = images.iter().map(|im| im.dense(&index)).collect();
        span_rank(&vs)
    });

    let variational = z.iter().enumerate().all(|(k, zk)| {
        let ik = th.contract(zk);
        z.iter().skip(k + 1).all(|zl| ik.contract(zl).max_abs() <= ZERO_TOL * scale)
    });

    Ok(PointRanks {
        ker_omega: z.len(),
        ker_theta,
        ker_dtheta,
        ker_theta_dtheta,
        reeb: reeb.len(),
        characteristic,
        reeb_image,
        variational,
    })
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Minimal observed ranks of the kernel distributions of (Θ, ω) at the
/// sampled points, and the resulting classification.
pub fn structure_diagnostics(theta: &Form, omega: &Form, plan: &SamplePlan) -> Result<StructureReport> {
    structure_diagnostics_with(theta, omega, plan, Exec::default())
}

pub fn structure_diagnostics_with(
    theta: &Form,
    omega: &Form,
    plan: &SamplePlan,
    exec: Exec,
) -> Result<StructureReport> {
    let chart = theta.chart().clone();
    let m = chart.m();
    if theta.degree() != m || omega.degree() != m {
        return Err(Error::Unsupported(format!(
            "structure diagnostics need m-forms (m={m}), got degrees {} and {}",
            theta.degree(),
            omega.degree()
        )));
    }
    if !omega.exterior_derivative().simplify().is_zero() {
        return Err(Error::NotClosed);
    }
    let dtheta = theta.exterior_derivative();
    let mut symbols = std::collections::BTreeSet::new();
    for f in [theta, omega] {
        for c in f.terms().values() {
            symbols.extend(c.vars());
        }
    }
    let points = sample_points(&chart, &symbols, plan);
    if points.is_empty() {
        return Err(Error::Config("no regular sample points".into()));
    }
    let per_point = par::map(exec, &points, |p| ranks_at(theta, &dtheta, omega, p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let min = |f: fn(&PointRanks) -> usize| per_point.iter().map(f).min().unwrap_or(0);
    let ranks = PointRanks {
        ker_omega: min(|r| r.ker_omega),
        ker_theta: min(|r| r.ker_theta),
        ker_dtheta: min(|r| r.ker_dtheta),
        ker_theta_dtheta: min(|r| r.ker_theta_dtheta),
        reeb: min(|r| r.reeb),
        characteristic: min(|r| r.characteristic),
        reeb_image: per_point.iter().map(|r| r.reeb_image).min().flatten(),
        variational: per_point.iter().all(|r| r.variational),
    };

    let dim = chart.dim();
    let class = match (ranks.ker_theta_dtheta == 0, ranks.ker_dtheta > 0) {
        (true, true) => FormClass::Multicontact,
        (false, true) => FormClass::Premulticontact,
        _ => FormClass::Neither,
    };
    let big_n = dim - m;
    let k = ranks.characteristic;
    let codim = dim - ranks.ker_omega;
    let conditions = [
        ranks.ker_omega == big_n,
        ranks.reeb == m + k,
        k <= big_n.saturating_sub(m),
        ranks.reeb_image == Some(binomial(codim, m - 1)),
    ];
    let special = conditions.iter().all(|c| *c).then_some(k);
    let variational = special.is_some() && ranks.variational;
    Ok(StructureReport {
        dim,
        m,
        ranks,
        per_point,
        samples: points.into_iter().map(|p| p.coords).collect(),
        class,
        special,
        variational,
        conditions,
        probabilistic: true,
    })
}
