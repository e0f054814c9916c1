//! Two-tier equality: exact normal-form comparison, then randomized
//! evaluation at rational sample points.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EvalError, Expr, Var};

#[derive(Clone, Debug, PartialEq)]
pub enum Equality {
    Exact,
    Numeric { max_residual: f64, points: usize },
    NotEqual { witness: BTreeMap<Var, f64>, residual: f64 },
    Inconclusive { reason: String },
}

impl Equality {
    pub fn is_exact(&self) -> bool {
        matches!(self, Equality::Exact)
    }

    /// Exact or numerically equal.
    pub fn holds(&self) -> bool {
        matches!(self, Equality::Exact | Equality::Numeric { .. })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Equality::Exact => "EXACT-EQUAL",
            Equality::Numeric { .. } => "NUMERICALLY-EQUAL",
            Equality::NotEqual { .. } => "NOT-EQUAL",
            Equality::Inconclusive { .. } => "INCONCLUSIVE",
        }
    }
}

impl fmt::Display for Equality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Equality::Exact => write!(f, "EXACT-EQUAL"),
            Equality::Numeric { max_residual, points } => {
                write!(f, "NUMERICALLY-EQUAL (max residual {max_residual:.3e} over {points} points)")
            }
            Equality::NotEqual { witness, residual } => {
                write!(f, "NOT-EQUAL (residual {residual:.3e} at")?;
                for (v, x) in witness {
                    write!(f, " {}={x}", super::display::var_name(v))?;
                }
                write!(f, ")")
            }
            Equality::Inconclusive { reason } => write!(f, "INCONCLUSIVE ({reason})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EqualOptions {
    pub seed: u64,
    pub points: usize,
    pub tolerance: f64,
    pub max_attempts: usize,
}

impl Default for EqualOptions {
    fn default() -> Self {
        EqualOptions { seed: 42, points: 20, tolerance: 1e-10, max_attempts: 400 }
    }
}

pub fn equal(a: &Expr, b: &Expr) -> Equality {
    equal_with(a, b, &EqualOptions::default())
}

/// Random rational in roughly [-3, 3], returned as its f64 value.
pub fn random_rational<R: Rng>(rng: &mut R) -> f64 {
    let den: i64 = rng.gen_range(1..=12);
    let num: i64 = rng.gen_range(-3 * den..=3 * den);
    BigRational::new(BigInt::from(num), BigInt::from(den))
        .to_f64()
        .unwrap_or(0.0)
}

pub fn equal_with(a: &Expr, b: &Expr, opts: &EqualOptions) -> Equality {
    let diff = a - b;
    if diff.normalize().is_zero() {
        return Equality::Exact;
    }
    let mut vars = a.vars();
    vars.extend(b.vars());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut good = 0;
    let mut max_residual: f64 = 0.0;
    for _ in 0..opts.max_attempts {
        if good >= opts.points {
            break;
        }
        let env: BTreeMap<Var, f64> =
            vars.iter().map(|v| (v.clone(), random_rational(&mut rng))).collect();
        let (va, vb) = match (a.eval_map(&env), b.eval_map(&env)) {
            (Ok(x), Ok(y)) => (x, y),
            (Err(EvalError::Unbound(s)), _) | (_, Err(EvalError::Unbound(s))) => {
                return Equality::Inconclusive { reason: format!("unbound symbol {s}") }
            }
            _ => continue,
        };
        let residual = (va - vb).abs() / 1f64.max(va.abs()).max(vb.abs());
        if residual >= opts.tolerance {
            return Equality::NotEqual { witness: env, residual };
        }
        max_residual = max_residual.max(residual);
        good += 1;
    }
    if good < opts.points {
        return Equality::Inconclusive {
            reason: format!("only {good} of {} sample points were regular", opts.points),
        };
    }
    Equality::Numeric { max_residual, points: good }
}
