//! Arithmetic expression trees for kinetics and initial data.
//!
//! An [`Expr`] is built by the DSL parser or programmatically, then resolved
//! against a [`SlotTable`] into a [`Compiled`] tree whose identifiers are plain
//! indices into a value slice. The compiled form is what the solver evaluates
//! in its inner loops.

use std::fmt;

use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

/// Single-argument functions available in expressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    /// Positive part, `max(x, 0)`.
    Pos,
    Exp,
    Sin,
    Cos,
}

impl Func {
    pub const ALL: [Func; 4] = [Func::Pos, Func::Exp, Func::Sin, Func::Cos];

    pub fn name(self) -> &'static str {
        match self {
            Func::Pos => "pos",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Pos => x.max(0.0),
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
        }
    }
}

/// Expression AST.
///
/// Constants are nonnegative: a leading minus is always a [`Expr::Neg`] node,
/// which is what the parser produces for `-2`.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Ident(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        if c < 0.0 {
            Expr::Neg(Box::new(Expr::Const(-c)))
        } else {
            Expr::Const(c)
        }
    }

    pub fn ident(name: impl Into<String>) -> Expr {
        Expr::Ident(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    /// Every identifier referenced, in first-occurrence order.
    pub fn identifiers(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_identifiers(&mut out);
        out
    }

    fn collect_identifiers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Ident(name) => {
                if !out.contains(&name.as_str()) {
                    out.push(name);
                }
            }
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => e.collect_identifiers(out),
            Expr::Binary(_, a, b) => {
                a.collect_identifiers(out);
                b.collect_identifiers(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Ident(_) => 1,
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Call(_, e) => 1 + e.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Evaluates with identifiers looked up by name. Slow path, for tests and
    /// one-off evaluations; the solver uses [`Compiled`].
    pub fn eval_with<F>(&self, lookup: &F) -> Result<f64, EvalErrorKind>
    where
        F: Fn(&str) -> Option<f64>,
    {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Ident(name) => {
                lookup(name).ok_or_else(|| EvalErrorKind::Unresolved(name.clone()))?
            }
            Expr::Neg(e) => -e.eval_with(lookup)?,
            Expr::Binary(op, a, b) => {
                binary(*op, a.eval_with(lookup)?, b.eval_with(lookup)?)?
            }
            Expr::Pow(e, n) => e.eval_with(lookup)?.powi(*n as i32),
            Expr::Call(f, e) => f.apply(e.eval_with(lookup)?),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalErrorKind::NonFinite)
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::dsl::render_expr(self))
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum EvalErrorKind {
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("unresolved identifier `{0}`")]
    Unresolved(String),
}

#[inline]
fn binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalErrorKind> {
    Ok(match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(EvalErrorKind::DivisionByZero);
            }
            a / b
        }
    })
}

/// Maps identifier names to value-slice indices.
#[derive(Clone, Debug, Default)]
pub struct SlotTable {
    names: Vec<String>,
}

impl SlotTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>) -> usize {
        self.names.push(name.into());
        self.names.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// An [`Expr`] with identifiers resolved to slot indices.
#[derive(Clone, Debug, PartialEq)]
pub enum Compiled {
    Const(f64),
    Slot(usize),
    Neg(Box<Compiled>),
    Binary(BinOp, Box<Compiled>, Box<Compiled>),
    Pow(Box<Compiled>, i32),
    Call(Func, Box<Compiled>),
}

impl Compiled {
    pub fn compile(expr: &Expr, slots: &SlotTable) -> Result<Compiled, EvalErrorKind> {
        Ok(match expr {
            Expr::Const(c) => Compiled::Const(*c),
            Expr::Ident(name) => Compiled::Slot(
                slots
                    .index_of(name)
                    .ok_or_else(|| EvalErrorKind::Unresolved(name.clone()))?,
            ),
            Expr::Neg(e) => Compiled::Neg(Box::new(Compiled::compile(e, slots)?)),
            Expr::Binary(op, a, b) => Compiled::Binary(
                *op,
                Box::new(Compiled::compile(a, slots)?),
                Box::new(Compiled::compile(b, slots)?),
            ),
            Expr::Pow(e, n) => Compiled::Pow(Box::new(Compiled::compile(e, slots)?), *n as i32),
            Expr::Call(f, e) => Compiled::Call(*f, Box::new(Compiled::compile(e, slots)?)),
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Compiled::Const(c) if *c == 0.0)
    }

    #[inline]
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalErrorKind> {
        let v = self.eval_raw(values)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalErrorKind::NonFinite)
        }
    }

    fn eval_raw(&self, values: &[f64]) -> Result<f64, EvalErrorKind> {
        Ok(match self {
            Compiled::Const(c) => *c,
            Compiled::Slot(i) => values[*i],
            Compiled::Neg(e) => -e.eval_raw(values)?,
            Compiled::Binary(op, a, b) => binary(*op, a.eval_raw(values)?, b.eval_raw(values)?)?,
            Compiled::Pow(e, n) => e.eval_raw(values)?.powi(*n),
            Compiled::Call(f, e) => f.apply(e.eval_raw(values)?),
        })
    }

    /// Evaluates the expression together with a magnitude bound `M` such that
    /// the floating-point rounding error of the value is a small multiple of
    /// `M * f64::EPSILON`. Cancelling sums keep a large `M` even when the value
    /// itself is near zero.
    pub fn eval_with_magnitude(&self, values: &[f64]) -> Result<(f64, f64), EvalErrorKind> {
        let (v, m) = self.eval_mag_raw(values)?;
        if v.is_finite() {
            Ok((v, m))
        } else {
            Err(EvalErrorKind::NonFinite)
        }
    }

    fn eval_mag_raw(&self, values: &[f64]) -> Result<(f64, f64), EvalErrorKind> {
        Ok(match self {
            Compiled::Const(c) => (*c, c.abs()),
            Compiled::Slot(i) => (values[*i], values[*i].abs()),
            Compiled::Neg(e) => {
                let (v, m) = e.eval_mag_raw(values)?;
                (-v, m)
            }
            Compiled::Binary(op, a, b) => {
                let (va, ma) = a.eval_mag_raw(values)?;
                let (vb, mb) = b.eval_mag_raw(values)?;
                let v = binary(*op, va, vb)?;
                let m = match op {
                    BinOp::Add | BinOp::Sub => ma + mb,
                    BinOp::Mul => ma * mb,
                    BinOp::Div => ma / vb.abs() + v.abs() * mb / vb.abs(),
                };
                (v, m)
            }
            Compiled::Pow(e, n) => {
                let (v, m) = e.eval_mag_raw(values)?;
                (v.powi(*n), m.powi(*n))
            }
            Compiled::Call(f, e) => {
                let (x, m) = e.eval_mag_raw(values)?;
                let v = f.apply(x);
                let mag = match f {
                    Func::Pos => m,
                    Func::Exp => v.abs() * m.max(1.0),
                    Func::Sin | Func::Cos => 1.0 + m,
                };
                (v, mag)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slots(names: &[&str]) -> SlotTable {
        let mut t = SlotTable::new();
        for n in names {
            t.push(*n);
        }
        t
    }

    #[test]
    fn compiled_matches_named_evaluation() {
        // A*v - v^2*u at A=1, u=0.5, v=2
        let e = Expr::binary(
            BinOp::Sub,
            Expr::binary(BinOp::Mul, Expr::ident("A"), Expr::ident("v")),
            Expr::binary(
                BinOp::Mul,
                Expr::Pow(Box::new(Expr::ident("v")), 2),
                Expr::ident("u"),
            ),
        );
        let t = slots(&["u", "v", "A"]);
        let c = Compiled::compile(&e, &t).unwrap();
        let vals = [0.5, 2.0, 1.0];
        let named = e
            .eval_with(&|n| t.index_of(n).map(|i| vals[i]))
            .unwrap();
        assert_eq!(c.eval(&vals).unwrap(), named);
        assert_eq!(named, 0.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let e = Expr::binary(BinOp::Div, Expr::Const(1.0), Expr::ident("x"));
        let c = Compiled::compile(&e, &slots(&["x"])).unwrap();
        assert_eq!(c.eval(&[0.0]), Err(EvalErrorKind::DivisionByZero));
    }

    #[test]
    fn unresolved_identifier_fails_compilation() {
        let e = Expr::ident("nope");
        assert_eq!(
            Compiled::compile(&e, &slots(&["x"])),
            Err(EvalErrorKind::Unresolved("nope".into()))
        );
    }

    #[test]
    fn overflow_is_reported_as_non_finite() {
        let e = Expr::Call(Func::Exp, Box::new(Expr::Const(1000.0)));
        let c = Compiled::compile(&e, &SlotTable::new()).unwrap();
        assert_eq!(c.eval(&[]), Err(EvalErrorKind::NonFinite));
    }

    #[test]
    fn magnitude_tracks_cancellation() {
        // x*y - x*y is exactly zero here but its magnitude is 2*x*y
        let xy = Expr::binary(BinOp::Mul, Expr::ident("x"), Expr::ident("y"));
        let e = Expr::binary(BinOp::Sub, xy.clone(), xy);
        let c = Compiled::compile(&e, &slots(&["x", "y"])).unwrap();
        let (v, m) = c.eval_with_magnitude(&[1e6, 3.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(m, 6e6);
    }

    #[test]
    fn pos_is_positive_part() {
        let e = Expr::Call(Func::Pos, Box::new(Expr::ident("x")));
        let c = Compiled::compile(&e, &slots(&["x"])).unwrap();
        assert_eq!(c.eval(&[-2.0]).unwrap(), 0.0);
        assert_eq!(c.eval(&[2.5]).unwrap(), 2.5);
    }

    #[test]
    fn negative_constants_become_negation_nodes() {
        assert_eq!(
            Expr::constant(-3.0),
            Expr::Neg(Box::new(Expr::Const(3.0)))
        );
    }
}
