//! The `.vsm` model file format.
//!
//! ```text
//! # comment to end of line
//! [species]
//! u  : bulk    diff=1
//! v  : surface diff=0.5
//! [params]
//! radius = 1          # reserved: disk radius, defaults to 1
//! A = 1
//! [kinetics]
//! H[u] = 0            # H and G default to 0, F likewise
//! F[v] = B - (A + 1)*v + v^2*u
//! G[u] = A*v - v^2*u
//! [initial]
//! u = 1 + 0.1*r^2*cos(2*theta)
//! v = 0.5
//! [functionals]       # optional
//! conserved M = u + v
//! ```
//!
//! Sections appear in this order and may be omitted. Expressions use
//! `^` (integer exponent) above unary minus above `*` `/` above `+` `-`,
//! left associative; functions are `pos`, `exp`, `sin`, `cos`; `r`, `theta`
//! and `t` are coordinates.

use std::fmt;

use thiserror::Error;

use crate::expr::{BinOp, Expr, Func};
use crate::model::{validate_model, MassFunctional, ModelSpec, Species, ValidationReport};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: Vec<String>,
    pub found: String,
    /// Set for errors that are not a plain unexpected token.
    pub message: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: ", self.line, self.column)?;
        if let Some(msg) = &self.message {
            return f.write_str(msg);
        }
        write!(
            f,
            "expected {}, found {}",
            self.expected.join(" or "),
            self.found
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DslError {
    #[error("syntax error at {0}")]
    Syntax(#[from] ParseError),
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number { value: f64, integer: bool },
    Sym(char),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Number { value, .. } => format!("number `{value}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of line".into(),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    column: usize,
}

fn lex(line: &str, line_no: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            let mut integer = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integer = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integer = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                ParseError {
                    line: line_no,
                    column,
                    expected: vec!["number".into()],
                    found: format!("`{text}`"),
                    message: None,
                }
            })?;
            out.push(Token {
                tok: Tok::Number { value, integer },
                column,
            });
        } else if "+-*/^()[]:=".contains(c) {
            out.push(Token {
                tok: Tok::Sym(c),
                column,
            });
            i += 1;
        } else {
            return Err(ParseError {
                line: line_no,
                column,
                expected: vec!["token".into()],
                found: format!("character `{c}`"),
                message: None,
            });
        }
    }
    out.push(Token {
        tok: Tok::End,
        column: chars.len() + 1,
    });
    Ok(out)
}

struct LineParser {
    toks: Vec<Token>,
    pos: usize,
    line: usize,
    depth: usize,
}

impl LineParser {
    fn new(text: &str, line: usize) -> Result<Self, ParseError> {
        Ok(Self {
            toks: lex(text, line)?,
            pos: 0,
            line,
            depth: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn column(&self) -> usize {
        self.toks[self.pos].column
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        ParseError {
            line: self.line,
            column: self.column(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
            message: None,
        }
    }

    fn error_msg(&self, column: usize, message: String) -> ParseError {
        ParseError {
            line: self.line,
            column,
            expected: vec![],
            found: String::new(),
            message: Some(message),
        }
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.error(&[&format!("`{c}`")]))
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn expect_keyword(&mut self, words: &[&str]) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) if words.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => {
                let quoted: Vec<String> = words.iter().map(|w| format!("`{w}`")).collect();
                let refs: Vec<&str> = quoted.iter().map(|s| s.as_str()).collect();
                Err(self.error(&refs))
            }
        }
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let neg = self.eat_sym('-');
        match *self.peek() {
            Tok::Number { value, .. } => {
                self.bump();
                Ok(if neg { -value } else { value })
            }
            _ => Err(self.error(&["number"])),
        }
    }

    fn expect_end(&mut self) -> Result<(), ParseError> {
        if *self.peek() == Tok::End {
            Ok(())
        } else {
            Err(self.error(&["end of line"]))
        }
    }

    fn after_operand_expected(&self) -> Vec<&'static str> {
        let mut v = vec!["`^`", "`*`", "`/`", "`+`", "`-`"];
        v.push(if self.depth > 0 { "`)`" } else { "end of line" });
        v
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if !self.eat_sym('^') {
            return Ok(base);
        }
        match *self.peek() {
            Tok::Number {
                value,
                integer: true,
            } if value <= u32::MAX as f64 => {
                self.bump();
                Ok(Expr::Pow(Box::new(base), value as u32))
            }
            _ => Err(self.error(&["non-negative integer exponent"])),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        const OPERAND: &[&str] = &["number", "identifier", "`(`", "`-`"];
        match self.peek().clone() {
            Tok::Number { value, .. } => {
                self.bump();
                Ok(Expr::Const(value))
            }
            Tok::Ident(name) => {
                let col = self.column();
                self.bump();
                if let Some(func) = Func::from_name(&name) {
                    if !self.eat_sym('(') {
                        return Err(self.error(&["`(`"]));
                    }
                    self.depth += 1;
                    let arg = self.expr()?;
                    if !self.eat_sym(')') {
                        let exp = self.after_operand_expected();
                        return Err(self.error(&exp));
                    }
                    self.depth -= 1;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if *self.peek() == Tok::Sym('(') {
                    Err(self.error_msg(col, format!("unknown function `{name}`")))
                } else {
                    Ok(Expr::Ident(name))
                }
            }
            Tok::Sym('(') => {
                self.bump();
                self.depth += 1;
                let e = self.expr()?;
                if !self.eat_sym(')') {
                    let exp = self.after_operand_expected();
                    return Err(self.error(&exp));
                }
                self.depth -= 1;
                Ok(e)
            }
            _ => Err(self.error(OPERAND)),
        }
    }

    fn full_expr(&mut self) -> Result<Expr, ParseError> {
        let e = self.expr()?;
        if *self.peek() != Tok::End {
            let exp = self.after_operand_expected();
            return Err(self.error(&exp));
        }
        Ok(e)
    }
}

/// Parses a single expression.
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    LineParser::new(text, 1)?.full_expr()
}

const SECTIONS: [&str; 5] = ["species", "params", "kinetics", "initial", "functionals"];

#[derive(Default)]
struct Draft {
    bulk: Vec<Species>,
    surface: Vec<Species>,
    params: Vec<(String, f64)>,
    radius: Option<f64>,
    h: Vec<(String, Expr)>,
    f: Vec<(String, Expr)>,
    g: Vec<(String, Expr)>,
    initial: Vec<(String, Expr)>,
    functionals: Vec<MassFunctional>,
}

/// Parses a model file without running [`validate_model`].
pub fn parse_model_unchecked(text: &str) -> Result<ModelSpec, ParseError> {
    let mut draft = Draft::default();
    let mut section: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let mut p = LineParser::new(line, line_no)?;
        if *p.peek() == Tok::Sym('[') {
            p.bump();
            let col = p.column();
            let name = p.expect_ident()?;
            let Some(pos) = SECTIONS.iter().position(|s| *s == name) else {
                let quoted: Vec<String> = SECTIONS.iter().map(|s| format!("`{s}`")).collect();
                return Err(ParseError {
                    line: line_no,
                    column: col,
                    expected: quoted,
                    found: format!("identifier `{name}`"),
                    message: None,
                });
            };
            if section.is_some_and(|s| pos <= s) {
                return Err(p.error_msg(
                    col,
                    format!(
                        "section [{name}] out of order; sections are {}",
                        SECTIONS.map(|s| format!("[{s}]")).join(", ")
                    ),
                ));
            }
            p.expect_sym(']')?;
            p.expect_end()?;
            section = Some(pos);
            continue;
        }
        match section {
            None => return Err(p.error(&["section header"])),
            Some(0) => species_line(&mut p, &mut draft)?,
            Some(1) => param_line(&mut p, &mut draft)?,
            Some(2) => kinetics_line(&mut p, &mut draft)?,
            Some(3) => initial_line(&mut p, &mut draft)?,
            Some(_) => functional_line(&mut p, &mut draft)?,
        }
    }
    Ok(assemble(draft))
}

fn duplicate(p: &LineParser, col: usize, what: &str, name: &str) -> ParseError {
    p.error_msg(col, format!("duplicate {what} `{name}`"))
}

fn species_line(p: &mut LineParser, d: &mut Draft) -> Result<(), ParseError> {
    let col = p.column();
    let name = p.expect_ident()?;
    p.expect_sym(':')?;
    let kind = p.expect_keyword(&["bulk", "surface"])?;
    p.expect_keyword(&["diff"])?;
    p.expect_sym('=')?;
    let diffusion = p.signed_number()?;
    p.expect_end()?;
    if d.bulk.iter().chain(&d.surface).any(|s| s.name == name) {
        return Err(duplicate(p, col, "species", &name));
    }
    let s = Species::new(name, diffusion);
    if kind == "bulk" {
        d.bulk.push(s);
    } else {
        d.surface.push(s);
    }
    Ok(())
}

fn param_line(p: &mut LineParser, d: &mut Draft) -> Result<(), ParseError> {
    let col = p.column();
    let name = p.expect_ident()?;
    p.expect_sym('=')?;
    let value = p.signed_number()?;
    p.expect_end()?;
    if name == "radius" {
        if d.radius.is_some() {
            return Err(duplicate(p, col, "parameter", &name));
        }
        d.radius = Some(value);
    } else {
        if d.params.iter().any(|(n, _)| *n == name) {
            return Err(duplicate(p, col, "parameter", &name));
        }
        d.params.push((name, value));
    }
    Ok(())
}

fn kinetics_line(p: &mut LineParser, d: &mut Draft) -> Result<(), ParseError> {
    let kind = p.expect_keyword(&["H", "F", "G"])?;
    p.expect_sym('[')?;
    let col = p.column();
    let name = p.expect_ident()?;
    p.expect_sym(']')?;
    p.expect_sym('=')?;
    let e = p.full_expr()?;
    let (target, is_bulk) = match kind.as_str() {
        "H" => (&mut d.h, true),
        "G" => (&mut d.g, true),
        _ => (&mut d.f, false),
    };
    let declared = if is_bulk {
        d.bulk.iter().any(|s| s.name == name)
    } else {
        d.surface.iter().any(|s| s.name == name)
    };
    if !declared {
        let which = if is_bulk { "bulk" } else { "surface" };
        return Err(p.error_msg(col, format!("{kind}[{name}]: `{name}` is not a declared {which} species")));
    }
    if target.iter().any(|(n, _)| *n == name) {
        return Err(duplicate(p, col, &format!("{kind} line for"), &name));
    }
    target.push((name, e));
    Ok(())
}

fn initial_line(p: &mut LineParser, d: &mut Draft) -> Result<(), ParseError> {
    let col = p.column();
    let name = p.expect_ident()?;
    p.expect_sym('=')?;
    let e = p.full_expr()?;
    if !d.bulk.iter().chain(&d.surface).any(|s| s.name == name) {
        return Err(p.error_msg(col, format!("initial data for undeclared species `{name}`")));
    }
    if d.initial.iter().any(|(n, _)| *n == name) {
        return Err(duplicate(p, col, "initial data for", &name));
    }
    d.initial.push((name, e));
    Ok(())
}

fn functional_line(p: &mut LineParser, d: &mut Draft) -> Result<(), ParseError> {
    let mut conserved = false;
    let mut col = p.column();
    let mut name = p.expect_ident()?;
    if name == "conserved" {
        if let Tok::Ident(_) = p.peek() {
            conserved = true;
            col = p.column();
            name = p.expect_ident()?;
        }
    }
    p.expect_sym('=')?;
    let mut terms = Vec::new();
    let mut sign = if p.eat_sym('-') { -1.0 } else { 1.0 };
    loop {
        let coef = match *p.peek() {
            Tok::Number { value, .. } => {
                p.bump();
                p.expect_sym('*')?;
                value
            }
            Tok::Ident(_) => 1.0,
            _ => return Err(p.error(&["number", "identifier"])),
        };
        let species = p.expect_ident()?;
        terms.push((sign * coef, species));
        sign = match p.peek() {
            Tok::Sym('+') => 1.0,
            Tok::Sym('-') => -1.0,
            Tok::End => break,
            _ => return Err(p.error(&["`+`", "`-`", "end of line"])),
        };
        p.bump();
    }
    if d.functionals.iter().any(|f| f.name == name) {
        return Err(duplicate(p, col, "functional", &name));
    }
    d.functionals.push(MassFunctional {
        name,
        conserved,
        terms,
    });
    Ok(())
}

fn assemble(d: Draft) -> ModelSpec {
    let pick = |list: &[(String, Expr)], name: &str| {
        list.iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e.clone())
            .unwrap_or(Expr::Const(0.0))
    };
    ModelSpec {
        h: d.bulk.iter().map(|s| pick(&d.h, &s.name)).collect(),
        g: d.bulk.iter().map(|s| pick(&d.g, &s.name)).collect(),
        f: d.surface.iter().map(|s| pick(&d.f, &s.name)).collect(),
        initial_bulk: d.bulk.iter().map(|s| pick(&d.initial, &s.name)).collect(),
        initial_surface: d.surface.iter().map(|s| pick(&d.initial, &s.name)).collect(),
        bulk: d.bulk,
        surface: d.surface,
        params: d.params,
        radius: d.radius.unwrap_or(1.0),
        functionals: d.functionals,
    }
}

/// Parses and validates a model file.
pub fn parse_model(text: &str) -> Result<ModelSpec, DslError> {
    let model = parse_model_unchecked(text)?;
    let report = validate_model(&model);
    if report.is_valid() {
        Ok(model)
    } else {
        Err(DslError::Invalid(report))
    }
}

/// Shortest text that parses back to exactly `c`.
pub fn format_number(c: f64) -> String {
    let a = c.abs();
    if c == 0.0 {
        "0".into()
    } else if (1e-4..1e16).contains(&a) {
        format!("{c}")
    } else {
        format!("{c:e}")
    }
}

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Binary(op, _, _) => op.precedence(),
        Expr::Neg(_) => 3,
        Expr::Pow(_, _) => 4,
        Expr::Const(c) if *c < 0.0 => 3,
        _ => 5,
    }
}

fn render_into(e: &Expr, out: &mut String) {
    let wrapped = |child: &Expr, parens: bool, out: &mut String| {
        if parens {
            out.push('(');
        }
        render_into(child, out);
        if parens {
            out.push(')');
        }
    };
    match e {
        Expr::Const(c) => out.push_str(&format_number(*c)),
        Expr::Ident(name) => out.push_str(name),
        Expr::Neg(inner) => {
            out.push('-');
            wrapped(inner, level(inner) < 3, out);
        }
        Expr::Binary(op, a, b) => {
            let p = op.precedence();
            wrapped(a, level(a) < p, out);
            out.push(' ');
            out.push(op.symbol());
            out.push(' ');
            wrapped(b, level(b) <= p, out);
        }
        Expr::Pow(base, n) => {
            wrapped(base, level(base) < 5, out);
            out.push('^');
            out.push_str(&n.to_string());
        }
        Expr::Call(f, arg) => {
            out.push_str(f.name());
            out.push('(');
            render_into(arg, out);
            out.push(')');
        }
    }
}

pub fn render_expr(e: &Expr) -> String {
    let mut s = String::new();
    render_into(e, &mut s);
    s
}

/// Canonical text for a model; [`parse_model_unchecked`] inverts it.
pub fn render_model(model: &ModelSpec) -> String {
    let mut s = String::from("[species]\n");
    for sp in &model.bulk {
        s += &format!("{} : bulk diff={}\n", sp.name, format_number(sp.diffusion));
    }
    for sp in &model.surface {
        s += &format!("{} : surface diff={}\n", sp.name, format_number(sp.diffusion));
    }
    s += "\n[params]\n";
    s += &format!("radius = {}\n", format_number(model.radius));
    for (n, v) in &model.params {
        s += &format!("{n} = {}\n", format_number(*v));
    }
    s += "\n[kinetics]\n";
    for (sp, e) in model.bulk.iter().zip(&model.h) {
        s += &format!("H[{}] = {}\n", sp.name, render_expr(e));
    }
    for (sp, e) in model.surface.iter().zip(&model.f) {
        s += &format!("F[{}] = {}\n", sp.name, render_expr(e));
    }
    for (sp, e) in model.bulk.iter().zip(&model.g) {
        s += &format!("G[{}] = {}\n", sp.name, render_expr(e));
    }
    s += "\n[initial]\n";
    for (sp, e) in model
        .bulk
        .iter()
        .zip(&model.initial_bulk)
        .chain(model.surface.iter().zip(&model.initial_surface))
    {
        s += &format!("{} = {}\n", sp.name, render_expr(e));
    }
    if !model.functionals.is_empty() {
        s += "\n[functionals]\n";
        for f in &model.functionals {
            if f.conserved {
                s += "conserved ";
            }
            s += &f.name;
            s += " =";
            for (idx, (c, name)) in f.terms.iter().enumerate() {
                let sign = if *c < 0.0 { "-" } else { "+" };
                if idx == 0 {
                    s.push(' ');
                    if *c < 0.0 {
                        s.push('-');
                    }
                } else {
                    s += &format!(" {sign} ");
                }
                if c.abs() != 1.0 {
                    s += &format!("{}*", format_number(c.abs()));
                }
                s += name;
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> Expr {
        Expr::ident(s)
    }

    fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::binary(op, a, b)
    }

    #[test]
    fn brusselator_flux_ast() {
        let text = "[species]\nu : bulk diff=1\nv : surface diff=1\n[params]\nA = 1\n[kinetics]\nG[u] = A*v - v^2*u\n";
        let m = parse_model(text).unwrap();
        let expected = bin(
            BinOp::Sub,
            bin(BinOp::Mul, id("A"), id("v")),
            bin(BinOp::Mul, Expr::Pow(Box::new(id("v")), 2), id("u")),
        );
        assert_eq!(m.g[0], expected);
    }

    #[test]
    fn zero_literal() {
        let m = parse_model_unchecked("[species]\nu : bulk diff=1\n[kinetics]\nH[u] = 0\n").unwrap();
        assert_eq!(m.h[0], Expr::Const(0.0));
    }

    #[test]
    fn rational_term_has_sum_denominator() {
        let e = parse_expr("k3*v1/(v1+k4)").unwrap();
        let Expr::Binary(BinOp::Div, num, den) = e else {
            panic!("expected division, got {e:?}");
        };
        assert_eq!(*num, bin(BinOp::Mul, id("k3"), id("v1")));
        assert_eq!(*den, bin(BinOp::Add, id("v1"), id("k4")));
    }

    #[test]
    fn precedence_law() {
        assert_eq!(
            parse_expr("a+b*c").unwrap(),
            bin(BinOp::Add, id("a"), bin(BinOp::Mul, id("b"), id("c")))
        );
        // ^ binds tighter than unary minus
        assert_eq!(
            parse_expr("-x^2").unwrap(),
            Expr::Neg(Box::new(Expr::Pow(Box::new(id("x")), 2)))
        );
        // left associativity
        assert_eq!(
            parse_expr("a-b-c").unwrap(),
            bin(BinOp::Sub, bin(BinOp::Sub, id("a"), id("b")), id("c"))
        );
        assert_eq!(
            parse_expr("a/b*c").unwrap(),
            bin(BinOp::Mul, bin(BinOp::Div, id("a"), id("b")), id("c"))
        );
    }

    #[test]
    fn render_parenthesizes_only_where_needed() {
        for (src, canon) in [
            ("a - (b - c)", "a - (b - c)"),
            ("(a - b) - c", "a - b - c"),
            ("(-x)^2", "(-x)^2"),
            ("-(x^2)", "-x^2"),
            ("a * -b", "a * -b"),
            ("pos(c_max - v1 - v2)", "pos(c_max - v1 - v2)"),
            ("1e-7 * x", "1e-7 * x"),
            ("(x^2)^3", "(x^2)^3"),
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(render_expr(&e), canon);
            assert_eq!(parse_expr(canon).unwrap(), e);
        }
    }

    #[test]
    fn syntax_error_is_positioned() {
        let err = parse_model_unchecked("[species]\nu : bulk diff=1\n[kinetics]\nH[u] = 2 * * u\n")
            .unwrap_err();
        assert_eq!((err.line, err.column), (4, 12));
        assert!(err.expected.contains(&"identifier".to_string()));
        assert!(err.found.contains('*'));
    }

    #[test]
    fn fractional_exponent_is_rejected() {
        let err = parse_expr("v^2.5").unwrap_err();
        assert_eq!(err.column, 3);
        assert_eq!(err.expected, vec!["non-negative integer exponent".to_string()]);
    }

    #[test]
    fn unbalanced_parenthesis() {
        let err = parse_expr("(a + b").unwrap_err();
        assert!(err.expected.contains(&"`)`".to_string()), "{err}");
        assert_eq!(err.column, 7);
    }

    #[test]
    fn sections_must_be_ordered() {
        let err = parse_model_unchecked("[kinetics]\n[species]\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.message.unwrap().contains("out of order"));
    }

    #[test]
    fn content_before_a_section_is_rejected() {
        let err = parse_model_unchecked("u : bulk diff=1\n").unwrap_err();
        assert_eq!((err.line, err.column), (1, 1));
    }

    #[test]
    fn kinetics_for_undeclared_species() {
        let err = parse_model_unchecked("[species]\nu : bulk diff=1\n[kinetics]\nF[u] = 1\n")
            .unwrap_err();
        assert!(err.message.unwrap().contains("not a declared surface species"));
    }

    #[test]
    fn unknown_function() {
        let err = parse_expr("log(x)").unwrap_err();
        assert_eq!(err.column, 1);
        assert!(err.to_string().contains("unknown function `log`"));
    }

    #[test]
    fn comments_and_whitespace_are_ignored() {
        let m = parse_model_unchecked(
            "# header\n  [species]   # trailing\nu:bulk   diff = 2 \n\n[kinetics]\nH[u]=-u#decay\n",
        )
        .unwrap();
        assert_eq!(m.bulk[0].diffusion, 2.0);
        assert_eq!(m.h[0], Expr::Neg(Box::new(id("u"))));
    }

    #[test]
    fn missing_lines_default_to_zero() {
        let m = parse_model_unchecked("[species]\nu : bulk diff=1\nv : surface diff=1\n").unwrap();
        assert!(m.h[0].is_zero() && m.g[0].is_zero() && m.f[0].is_zero());
        assert!(m.initial_bulk[0].is_zero());
        assert_eq!(m.radius, 1.0);
    }

    #[test]
    fn render_zero_kinetics() {
        let m = parse_model_unchecked("[species]\nu : bulk diff=1\n").unwrap();
        assert!(render_model(&m).contains("H[u] = 0\n"));
    }

    #[test]
    fn functionals_round_trip() {
        let text = "[species]\nu : bulk diff=1\nv : surface diff=1\n[functionals]\nconserved M = u + 2*v\nN = -u - 0.5*v\n";
        let m = parse_model(text).unwrap();
        assert_eq!(m.functionals[0].terms, vec![(1.0, "u".into()), (2.0, "v".into())]);
        assert!(m.functionals[0].conserved && !m.functionals[1].conserved);
        assert_eq!(m.functionals[1].terms, vec![(-1.0, "u".into()), (-0.5, "v".into())]);
        assert_eq!(parse_model(&render_model(&m)).unwrap(), m);
    }

    #[test]
    fn invalid_model_is_reported() {
        let err = parse_model("[species]\nu : bulk diff=0\n").unwrap_err();
        assert!(matches!(err, DslError::Invalid(ref r) if r.nonpositive_diffusion.len() == 1));
    }

    #[test]
    fn number_formats_round_trip() {
        for c in [0.0, 1.0, 2.5, 0.1 + 0.2, 1e-7, 3.0e22, 123456.789, 5e-324, f64::MAX] {
            let s = format_number(c);
            assert_eq!(s.parse::<f64>().unwrap(), c, "{s}");
            assert_eq!(parse_expr(&s).unwrap(), Expr::Const(c));
        }
    }
}
