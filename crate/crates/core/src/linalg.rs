//! Dense numeric rank/nullspace and exact elimination for linear systems
//! with symbolic coefficients.

use std::collections::BTreeMap;

use crate::expr::{Expr, Var};

pub const PIVOT_TOL: f64 = 1e-9;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.len(), cols);
            m.data[i * cols..(i + 1) * cols].copy_from_slice(r);
        }
        m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    /// Reduced row echelon form with partial pivoting; returns pivot columns.
    pub fn rref(&mut self) -> Vec<usize> {
        let tol = PIVOT_TOL * self.max_abs().max(1.0);
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == self.rows {
                break;
            }
            let (best, val) = (r..self.rows)
                .map(|i| (i, self.get(i, c).abs()))
                .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if val <= tol {
                for i in r..self.rows {
                    self.set(i, c, 0.0);
                }
                continue;
            }
            if best != r {
                for j in 0..self.cols {
                    self.data.swap(r * self.cols + j, best * self.cols + j);
                }
            }
            let p = self.get(r, c);
            for j in c..self.cols {
                self.data[r * self.cols + j] /= p;
            }
            for i in 0..self.rows {
                if i == r {
                    continue;
                }
                let f = self.get(i, c);
                if f == 0.0 {
                    continue;
                }
                for j in c..self.cols {
                    let v = self.get(r, j);
                    self.add_to(i, j, -f * v);
                }
            }
            pivots.push(c);
            r += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().rref().len()
    }

    /// Basis of {v : A v = 0}.
    pub fn nullspace(&self) -> Vec<Vec<f64>> {
        let mut a = self.clone();
        let pivots = a.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        free.iter()
            .map(|&f| {
                let mut v = vec![0.0; self.cols];
                v[f] = 1.0;
                for (r, &pc) in pivots.iter().enumerate() {
                    v[pc] = -a.get(r, f);
                }
                v
            })
            .collect()
    }
}

/// Rank of a set of vectors.
pub fn span_rank(vs: &[Vec<f64>]) -> usize {
    if vs.is_empty() {
        return 0;
    }
    Matrix::from_rows(vs).rank()
}

/// Basis of the intersection of the row-annihilators: the common nullspace
/// of several matrices with the same column count.
pub fn common_nullspace(ms: &[&Matrix], cols: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for m in ms {
        assert_eq!(m.cols, cols);
        rows.extend((0..m.rows).map(|i| m.row(i).to_vec()));
    }
    if rows.is_empty() {
        return (0..cols)
            .map(|j| {
                let mut v = vec![0.0; cols];
                v[j] = 1.0;
                v
            })
            .collect();
    }
    Matrix::from_rows(&rows).nullspace()
}

/// Outcome of eliminating a linear system `eqs = 0` in `unknowns`.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    /// Pivot unknowns expressed through the free unknowns.
    pub solved: BTreeMap<Var, Expr>,
    pub free: Vec<Var>,
    /// Equations left with no unknowns and not identically zero.
    pub residual: Vec<Expr>,
    /// Index into `eqs` of the row each residual was reduced from.
    pub residual_origin: Vec<usize>,
}

/// Gaussian elimination over the field of rational functions. Coefficients
/// are read off by differentiation, so `eqs` must be affine in `unknowns`.
pub fn solve_linear(eqs: &[Expr], unknowns: &[Var]) -> LinearSolution {
    let nu = unknowns.len();
    let zero_b: BTreeMap<Var, Expr> = unknowns.iter().map(|u| (u.clone(), Expr::zero())).collect();
    let mut rows: Vec<(Vec<Expr>, Expr)> = eqs
        .iter()
        .map(|e| {
            let coefs = unknowns.iter().map(|u| e.pdiff(u)).collect();
            (coefs, e.substitute(&zero_b).simplify())
        })
        .collect();
    let mut origin: Vec<usize> = (0..rows.len()).collect();
    let mut pivots: Vec<(usize, usize)> = Vec::new();
    let mut r = 0;
    for c in 0..nu {
        if r == rows.len() {
            break;
        }
        // prefer constant pivots, then the smallest nonzero expression
        let cand = (r..rows.len())
            .filter(|&i| !rows[i].0[c].normalize().is_zero())
            .min_by_key(|&i| {
                let e = &rows[i].0[c];
                (e.as_num().is_none(), e.size())
            });
        let Some(best) = cand else { continue };
        rows.swap(r, best);
        origin.swap(r, best);
        let p = rows[r].0[c].clone();
        let (prow, prhs) = rows[r].clone();
        let prow: Vec<Expr> = prow.iter().map(|x| x.div(&p).simplify()).collect();
        let prhs = prhs.div(&p).simplify();
        for (i, row) in rows.iter_mut().enumerate() {
            if i == r || row.0[c].is_zero() {
                continue;
            }
            let f = row.0[c].clone();
            for (x, p) in row.0.iter_mut().zip(&prow).take(nu).skip(c) {
                *x = (&*x - &(&f * p)).simplify();
            }
            row.1 = (&row.1 - &(&f * &prhs)).simplify();
        }
        rows[r] = (prow, prhs);
        pivots.push((r, c));
        r += 1;
    }
    let pivot_cols: Vec<usize> = pivots.iter().map(|p| p.1).collect();
    let free: Vec<Var> = (0..nu)
        .filter(|c| !pivot_cols.contains(c))
        .map(|c| unknowns[c].clone())
        .collect();
    let mut solved = BTreeMap::new();
    for &(row, c) in &pivots {
        let (coefs, rhs) = &rows[row];
        let mut val = rhs.neg();
        for (j, u) in unknowns.iter().enumerate() {
            if j != c && !pivot_cols.contains(&j) && !coefs[j].is_zero() {
                val = &val - &(&coefs[j] * &Expr::var(u.clone()));
            }
        }
        solved.insert(unknowns[c].clone(), val.simplify());
    }
    let (residual, residual_origin) = rows[r..]
        .iter()
        .zip(&origin[r..])
        .filter(|((_, rhs), _)| !rhs.normalize().is_zero())
        .map(|((_, rhs), &o)| (rhs.clone(), o))
        .unzip();
    LinearSolution { solved, free, residual, residual_origin }
}
