use num_traits::ToPrimitive;

use super::{display::var_name, EvalError, Expr, Func, Node, Var};

#[derive(Clone, Debug)]
enum Op {
    Const(f64),
    Load(usize),
    Add(usize),
    Mul(usize),
    Neg,
    Div,
    Powi(i32),
    Func(Func),
}

/// Stack-machine form of an expression with symbols resolved to slots.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
}

impl CompiledExpr {
    pub fn compile<F>(e: &Expr, slot: &F) -> Result<CompiledExpr, EvalError>
    where
        F: Fn(&Var) -> Option<usize>,
    {
        let mut ops = Vec::new();
        emit(e, slot, &mut ops)?;
        let mut depth: usize = 0;
        let mut max = 0;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(_) => depth += 1,
                Op::Add(k) | Op::Mul(k) => depth -= k - 1,
                Op::Div => depth -= 1,
                Op::Neg | Op::Powi(_) | Op::Func(_) => {}
            }
            max = max.max(depth);
        }
        Ok(CompiledExpr { ops, depth: max })
    }

    pub fn eval_with(&self, vals: &[f64], stack: &mut Vec<f64>) -> f64 {
        stack.clear();
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Load(i) => stack.push(vals[*i]),
                Op::Add(k) => {
                    let at = stack.len() - k;
                    let s = stack[at..].iter().sum();
                    stack.truncate(at);
                    stack.push(s);
                }
                Op::Mul(k) => {
                    let at = stack.len() - k;
                    let s = stack[at..].iter().product();
                    stack.truncate(at);
                    stack.push(s);
                }
                Op::Neg => {
                    let v = stack.last_mut().unwrap();
                    *v = -*v;
                }
                Op::Div => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    *a /= b;
                }
                Op::Powi(k) => {
                    let v = stack.last_mut().unwrap();
                    *v = v.powi(*k);
                }
                Op::Func(f) => {
                    let v = stack.last_mut().unwrap();
                    *v = f.apply(*v);
                }
            }
        }
        stack.pop().unwrap_or(0.0)
    }

    pub fn eval(&self, vals: &[f64]) -> f64 {
        let mut stack = Vec::with_capacity(self.depth);
        self.eval_with(vals, &mut stack)
    }
}

fn emit<F>(e: &Expr, slot: &F, ops: &mut Vec<Op>) -> Result<(), EvalError>
where
    F: Fn(&Var) -> Option<usize>,
{
    match e.node() {
        Node::Num(r) => ops.push(Op::Const(r.to_f64().unwrap_or(f64::NAN))),
        Node::Var(v) => ops.push(Op::Load(slot(v).ok_or_else(|| EvalError::Unbound(var_name(v)))?)),
        Node::Add(ts) => {
            for t in ts {
                emit(t, slot, ops)?;
            }
            ops.push(Op::Add(ts.len()));
        }
        Node::Mul(fs) => {
            for t in fs {
                emit(t, slot, ops)?;
            }
            ops.push(Op::Mul(fs.len()));
        }
        Node::Pow(b, k) => {
            emit(b, slot, ops)?;
            ops.push(Op::Powi(*k));
        }
        Node::Neg(x) => {
            emit(x, slot, ops)?;
            ops.push(Op::Neg);
        }
        Node::Div(a, b) => {
            emit(a, slot, ops)?;
            emit(b, slot, ops)?;
            ops.push(Op::Div);
        }
        Node::Func(f, a) => {
            emit(a, slot, ops)?;
            ops.push(Op::Func(*f));
        }
    }
    Ok(())
}
