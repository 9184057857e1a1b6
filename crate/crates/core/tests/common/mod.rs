//! Random expression trees shared by the property and acceptance tests.

#![allow(dead_code)]

use proptest::prelude::*;
use voskit::expr::{BinOp, Func};
use voskit::{Expr, ModelSpec};

pub const MAX_DEPTH: usize = 8;

const NAMES: [&str; 9] = ["u", "v", "v1", "u_2", "k1", "A", "theta", "r", "t"];

fn constant() -> impl Strategy<Value = f64> {
    prop_oneof![
        (0u32..20).prop_map(f64::from),
        0.0f64..10.0,
        any::<f64>().prop_filter("finite", |c| c.is_finite()).prop_map(f64::abs),
    ]
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        constant().prop_map(Expr::Const),
        prop::sample::select(&NAMES[..]).prop_map(Expr::ident),
    ]
}

fn op() -> impl Strategy<Value = BinOp> {
    prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div])
}

/// Trees of depth at most [`MAX_DEPTH`].
pub fn expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(MAX_DEPTH as u32 - 1, 96, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
            (op(), inner.clone(), inner.clone()).prop_map(|(o, a, b)| Expr::binary(o, a, b)),
            (inner.clone(), 0u32..7).prop_map(|(e, n)| Expr::Pow(Box::new(e), n)),
            (prop::sample::select(Func::ALL.to_vec()), inner).prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
        ]
    })
}

/// A two-species skeleton whose kinetics and initial data are replaced.
pub fn model_with(h: Expr, f: Expr, g: Expr) -> ModelSpec {
    let mut m = voskit::builtins::brusselator();
    m.h[0] = h;
    m.f[0] = f;
    m.g[0] = g;
    m
}
