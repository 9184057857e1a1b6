//! Model description: species, diagonal diffusion, kinetics maps H, F, G,
//! parameters and initial data for a bulk–surface reaction–diffusion system
//!
//! ```text
//! u_t = D Δu + H(u)          in the disk
//! v_t = D̃ Δ_M v + F(u, v)    on the boundary circle
//! D ∂u/∂η = G(u, v)          on the boundary circle
//! ```

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Compiled, EvalErrorKind, Expr, Func, SlotTable};

/// Reserved coordinate identifiers, usable in any expression.
pub const COORD_R: &str = "r";
pub const COORD_THETA: &str = "theta";
pub const COORD_T: &str = "t";
pub const COORDINATES: [&str; 3] = [COORD_R, COORD_THETA, COORD_T];

/// Relative compatibility residual above which validation warns.
pub const COMPATIBILITY_WARN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Species {
    pub name: String,
    pub diffusion: f64,
}

impl Species {
    pub fn new(name: impl Into<String>, diffusion: f64) -> Self {
        Self {
            name: name.into(),
            diffusion,
        }
    }
}

/// A named linear combination of species integrals, e.g. `∫_Ω u + ∫_M (v1 + v2)`.
/// Bulk species contribute their disk integral, surface species their boundary
/// integral.
#[derive(Clone, Debug, PartialEq)]
pub struct MassFunctional {
    pub name: String,
    /// Declared as conserved by the kinetics (its drift is checked).
    pub conserved: bool,
    pub terms: Vec<(f64, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub bulk: Vec<Species>,
    pub surface: Vec<Species>,
    pub params: Vec<(String, f64)>,
    /// One per bulk species; may reference bulk species only.
    pub h: Vec<Expr>,
    /// One per surface species.
    pub f: Vec<Expr>,
    /// One per bulk species; the boundary flux.
    pub g: Vec<Expr>,
    /// Initial bulk data over `(r, theta)`.
    pub initial_bulk: Vec<Expr>,
    /// Initial surface data over `theta`.
    pub initial_surface: Vec<Expr>,
    pub radius: f64,
    pub functionals: Vec<MassFunctional>,
}

impl ModelSpec {
    pub fn k(&self) -> usize {
        self.bulk.len()
    }

    pub fn m(&self) -> usize {
        self.surface.len()
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn bulk_index(&self, name: &str) -> Option<usize> {
        self.bulk.iter().position(|s| s.name == name)
    }

    pub fn surface_index(&self, name: &str) -> Option<usize> {
        self.surface.iter().position(|s| s.name == name)
    }

    /// Slot layout for kinetics: bulk species, surface species, parameters,
    /// then the coordinates `r`, `theta`, `t`.
    pub fn kinetics_slots(&self) -> SlotTable {
        let mut t = SlotTable::new();
        for s in self.bulk.iter().chain(&self.surface) {
            t.push(s.name.clone());
        }
        for (n, _) in &self.params {
            t.push(n.clone());
        }
        for c in COORDINATES {
            t.push(c);
        }
        t
    }

    /// Slot layout for initial data: parameters then coordinates.
    pub fn initial_slots(&self) -> SlotTable {
        let mut t = SlotTable::new();
        for (n, _) in &self.params {
            t.push(n.clone());
        }
        for c in COORDINATES {
            t.push(c);
        }
        t
    }

    pub fn kinetics_label(&self, kind: KineticsKind, index: usize) -> String {
        let name = match kind {
            KineticsKind::H | KineticsKind::G => &self.bulk[index].name,
            KineticsKind::F => &self.surface[index].name,
        };
        format!("{kind}[{name}]")
    }

    /// Resolves identifiers and returns the evaluation-ready form. Fails on the
    /// first unresolved identifier; [`validate_model`] lists all of them.
    pub fn compile(&self) -> Result<CompiledModel, ModelError> {
        let kin = self.kinetics_slots();
        let init = self.initial_slots();
        let compile_all = |exprs: &[Expr], slots: &SlotTable, what: &dyn Fn(usize) -> String| {
            exprs
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    Compiled::compile(e, slots).map_err(|kind| ModelError::Expression {
                        label: what(i),
                        kind,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let h = compile_all(&self.h, &kin, &|i| self.kinetics_label(KineticsKind::H, i))?;
        let f = compile_all(&self.f, &kin, &|i| self.kinetics_label(KineticsKind::F, i))?;
        let g = compile_all(&self.g, &kin, &|i| self.kinetics_label(KineticsKind::G, i))?;
        let ib = compile_all(&self.initial_bulk, &init, &|i| {
            format!("initial[{}]", self.bulk[i].name)
        })?;
        let is = compile_all(&self.initial_surface, &init, &|i| {
            format!("initial[{}]", self.surface[i].name)
        })?;
        let k = self.k();
        let m = self.m();
        let np = self.params.len();
        let mut kin_template = vec![0.0; k + m + np + 3];
        let mut init_template = vec![0.0; np + 3];
        for (p, (_, v)) in self.params.iter().enumerate() {
            kin_template[k + m + p] = *v;
            init_template[p] = *v;
        }
        Ok(CompiledModel {
            k,
            m,
            n_params: np,
            h,
            f,
            g,
            initial_bulk: ib,
            initial_surface: is,
            kin_template,
            init_template,
            names: kin.names().to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum KineticsKind {
    H,
    F,
    G,
}

impl fmt::Display for KineticsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KineticsKind::H => "H",
            KineticsKind::F => "F",
            KineticsKind::G => "G",
        })
    }
}

/// Bulk concentrations `zeta` and surface concentrations `nu` at one point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatePoint {
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
}

impl StatePoint {
    pub fn new(zeta: Vec<f64>, nu: Vec<f64>) -> Self {
        Self { zeta, nu }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.zeta.iter().chain(&self.nu).all(|&x| x >= 0.0)
    }
}

/// Where in space-time an evaluation happens; only matters for kinetics that
/// reference the coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Position {
    pub r: f64,
    pub theta: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KineticsValues {
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ModelError {
    #[error("{label}: {kind}")]
    Expression { label: String, kind: EvalErrorKind },
    #[error("evaluating {label} at {point}: {kind}")]
    Evaluation {
        label: String,
        point: String,
        kind: EvalErrorKind,
    },
    #[error("state point has {got_k} bulk and {got_m} surface values, model expects {k} and {m}")]
    Shape {
        k: usize,
        m: usize,
        got_k: usize,
        got_m: usize,
    },
    #[error("invalid model:\n{0}")]
    Invalid(ValidationReport),
}

/// Evaluation-ready model.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    k: usize,
    m: usize,
    n_params: usize,
    pub h: Vec<Compiled>,
    pub f: Vec<Compiled>,
    pub g: Vec<Compiled>,
    pub initial_bulk: Vec<Compiled>,
    pub initial_surface: Vec<Compiled>,
    kin_template: Vec<f64>,
    init_template: Vec<f64>,
    names: Vec<String>,
}

impl CompiledModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// A fresh kinetics slot vector with parameters filled in.
    pub fn kinetics_slots(&self) -> Vec<f64> {
        self.kin_template.clone()
    }

    #[inline]
    pub fn set_point(&self, slots: &mut [f64], zeta: &[f64], nu: &[f64], pos: Position) {
        slots[..self.k].copy_from_slice(zeta);
        slots[self.k..self.k + self.m].copy_from_slice(nu);
        self.set_position(slots, pos);
    }

    #[inline]
    pub fn set_position(&self, slots: &mut [f64], pos: Position) {
        let c = self.k + self.m + self.n_params;
        slots[c] = pos.r;
        slots[c + 1] = pos.theta;
        slots[c + 2] = pos.t;
    }

    /// Index of the first bulk-species slot; bulk `j` lives at `j`, surface
    /// `i` at `k + i`.
    #[inline]
    pub fn surface_offset(&self) -> usize {
        self.k
    }

    pub fn initial_value_bulk(&self, j: usize, r: f64, theta: f64) -> Result<f64, ModelError> {
        self.eval_initial(&self.initial_bulk[j], j, r, theta, "bulk")
    }

    pub fn initial_value_surface(&self, i: usize, r: f64, theta: f64) -> Result<f64, ModelError> {
        self.eval_initial(&self.initial_surface[i], i, r, theta, "surface")
    }

    fn eval_initial(
        &self,
        e: &Compiled,
        idx: usize,
        r: f64,
        theta: f64,
        which: &str,
    ) -> Result<f64, ModelError> {
        let mut s = self.init_template.clone();
        let c = self.n_params;
        s[c] = r;
        s[c + 1] = theta;
        s[c + 2] = 0.0;
        e.eval(&s).map_err(|kind| ModelError::Evaluation {
            label: format!("initial {which} #{idx}"),
            point: format!("r={r}, theta={theta}"),
            kind,
        })
    }

    /// Wraps an evaluation failure with the expression label and the full
    /// slot assignment.
    pub fn evaluation_error(
        &self,
        model: &ModelSpec,
        kind_of: KineticsKind,
        index: usize,
        slots: &[f64],
        kind: EvalErrorKind,
    ) -> ModelError {
        let point = self
            .names
            .iter()
            .zip(slots)
            .take(self.k + self.m)
            .chain(self.names.iter().zip(slots).skip(self.k + self.m + self.n_params))
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        let expr = match kind_of {
            KineticsKind::H => &model.h[index],
            KineticsKind::F => &model.f[index],
            KineticsKind::G => &model.g[index],
        };
        ModelError::Evaluation {
            label: format!("{} = {}", model.kinetics_label(kind_of, index), expr),
            point,
            kind,
        }
    }

    /// Evaluates all kinetics at a point. `slots` must come from
    /// [`CompiledModel::kinetics_slots`].
    pub fn eval_into(
        &self,
        model: &ModelSpec,
        slots: &mut [f64],
        p: &StatePoint,
        pos: Position,
        out: &mut KineticsValues,
    ) -> Result<(), ModelError> {
        if p.zeta.len() != self.k || p.nu.len() != self.m {
            return Err(ModelError::Shape {
                k: self.k,
                m: self.m,
                got_k: p.zeta.len(),
                got_m: p.nu.len(),
            });
        }
        self.set_point(slots, &p.zeta, &p.nu, pos);
        out.h.resize(self.k, 0.0);
        out.f.resize(self.m, 0.0);
        out.g.resize(self.k, 0.0);
        for (kind, exprs, dst) in [
            (KineticsKind::H, &self.h, &mut out.h),
            (KineticsKind::F, &self.f, &mut out.f),
            (KineticsKind::G, &self.g, &mut out.g),
        ] {
            for (idx, e) in exprs.iter().enumerate() {
                dst[idx] = e
                    .eval(slots)
                    .map_err(|err| self.evaluation_error(model, kind, idx, slots, err))?;
            }
        }
        Ok(())
    }
}

/// Evaluates `H(ζ)`, `F(ζ,ν)`, `G(ζ,ν)` at a state point. Coordinates, if
/// referenced, are taken at `(r, theta, t) = (R, 0, 0)`.
pub fn eval_kinetics(model: &ModelSpec, p: &StatePoint) -> Result<KineticsValues, ModelError> {
    eval_kinetics_at(
        model,
        p,
        Position {
            r: model.radius,
            theta: 0.0,
            t: 0.0,
        },
    )
}

pub fn eval_kinetics_at(
    model: &ModelSpec,
    p: &StatePoint,
    pos: Position,
) -> Result<KineticsValues, ModelError> {
    let c = model.compile()?;
    let mut slots = c.kinetics_slots();
    let mut out = KineticsValues {
        h: vec![],
        f: vec![],
        g: vec![],
    };
    c.eval_into(model, &mut slots, p, pos, &mut out)?;
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub unresolved: Vec<String>,
    pub h_references_surface: Vec<String>,
    pub nonpositive_diffusion: Vec<String>,
    /// Structural problems: counts, duplicate or reserved names, radius.
    pub structure: Vec<String>,
    /// Max over boundary nodes and bulk species of `|d_j ∂u₀/∂η − G_j(u₀, v₀)|`;
    /// absent when the model is not evaluable.
    pub compatibility_residual: Option<f64>,
    pub compatibility_warning: bool,
}

impl ValidationReport {
    /// No violations; the compatibility residual only warns.
    pub fn is_valid(&self) -> bool {
        self.unresolved.is_empty()
            && self.h_references_surface.is_empty()
            && self.nonpositive_diffusion.is_empty()
            && self.structure.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self
            .structure
            .iter()
            .chain(&self.unresolved)
            .chain(&self.h_references_surface)
            .chain(&self.nonpositive_diffusion)
        {
            writeln!(f, "  {line}")?;
        }
        if let Some(r) = self.compatibility_residual {
            writeln!(
                f,
                "  compatibility residual {r:e}{}",
                if self.compatibility_warning {
                    " (warning)"
                } else {
                    ""
                }
            )?;
        }
        Ok(())
    }
}

/// Boundary nodes used for the compatibility check.
pub const COMPATIBILITY_NODES: usize = 64;

pub fn validate_model(model: &ModelSpec) -> ValidationReport {
    validate_model_with(model, COMPATIBILITY_NODES)
}

/// Validation with the compatibility residual sampled at `ntheta` cell-centred
/// boundary angles.
pub fn validate_model_with(model: &ModelSpec, ntheta: usize) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let k = model.k();
    let m = model.m();
    if k == 0 && m == 0 {
        rep.structure.push("model has no species".into());
    }
    if !(model.radius > 0.0 && model.radius.is_finite()) {
        rep.structure
            .push(format!("radius must be positive, got {}", model.radius));
    }
    for (what, got, want) in [
        ("H", model.h.len(), k),
        ("G", model.g.len(), k),
        ("F", model.f.len(), m),
        ("bulk initial", model.initial_bulk.len(), k),
        ("surface initial", model.initial_surface.len(), m),
    ] {
        if got != want {
            rep.structure
                .push(format!("{what} has {got} expressions, expected {want}"));
        }
    }
    let mut seen: Vec<&str> = Vec::new();
    let all_names = model
        .bulk
        .iter()
        .chain(&model.surface)
        .map(|s| s.name.as_str())
        .chain(model.params.iter().map(|(n, _)| n.as_str()));
    for name in all_names {
        if seen.contains(&name) {
            rep.structure.push(format!("duplicate name `{name}`"));
        }
        if COORDINATES.contains(&name) || Func::from_name(name).is_some() {
            rep.structure.push(format!("`{name}` is a reserved name"));
        }
        seen.push(name);
    }
    for s in model.bulk.iter().chain(&model.surface) {
        if !(s.diffusion > 0.0 && s.diffusion.is_finite()) {
            rep.nonpositive_diffusion.push(format!(
                "species `{}` has non-positive diffusion {}",
                s.name, s.diffusion
            ));
        }
    }
    for (name, v) in &model.params {
        if !v.is_finite() {
            rep.structure
                .push(format!("parameter `{name}` is not finite"));
        }
    }

    let kin = model.kinetics_slots();
    let init = model.initial_slots();
    let check = |rep: &mut ValidationReport, label: String, e: &Expr, slots: &SlotTable| {
        for id in e.identifiers() {
            if slots.index_of(id).is_none() {
                rep.unresolved
                    .push(format!("{label}: unknown identifier `{id}`"));
            }
        }
    };
    for kind in [KineticsKind::H, KineticsKind::F, KineticsKind::G] {
        let exprs = match kind {
            KineticsKind::H => &model.h,
            KineticsKind::F => &model.f,
            KineticsKind::G => &model.g,
        };
        for (i, e) in exprs.iter().enumerate() {
            let label = if i < if kind == KineticsKind::F { m } else { k } {
                model.kinetics_label(kind, i)
            } else {
                format!("{kind}#{i}")
            };
            check(&mut rep, label.clone(), e, &kin);
            if kind == KineticsKind::H {
                for id in e.identifiers() {
                    if model.surface_index(id).is_some() {
                        rep.h_references_surface.push(format!(
                            "{label} references surface species `{id}`"
                        ));
                    }
                }
            }
        }
    }
    for (i, e) in model.initial_bulk.iter().enumerate() {
        check(&mut rep, format!("initial bulk #{i}"), e, &init);
    }
    for (i, e) in model.initial_surface.iter().enumerate() {
        check(&mut rep, format!("initial surface #{i}"), e, &init);
    }
    for func in &model.functionals {
        for (_, name) in &func.terms {
            if model.bulk_index(name).is_none() && model.surface_index(name).is_none() {
                rep.structure.push(format!(
                    "functional `{}` references unknown species `{name}`",
                    func.name
                ));
            }
        }
    }

    if rep.structure.is_empty() && rep.unresolved.is_empty() && ntheta > 0 {
        rep.compatibility_residual = compatibility_residual(model, ntheta).ok();
        rep.compatibility_warning = rep
            .compatibility_residual
            .is_none_or(|r| r > COMPATIBILITY_WARN);
    }
    rep
}

/// `max |d_j ∂u₀/∂r(R, θ_q) − G_j(u₀(R, θ_q), v₀(θ_q))|` with the radial
/// derivative taken by a central difference of the initial-data expression.
fn compatibility_residual(model: &ModelSpec, ntheta: usize) -> Result<f64, ModelError> {
    let c = model.compile()?;
    let radius = model.radius;
    let h = 1e-6 * radius.max(1.0);
    let dtheta = 2.0 * PI / ntheta as f64;
    let mut slots = c.kinetics_slots();
    let mut worst: f64 = 0.0;
    let mut zeta = vec![0.0; c.k()];
    let mut nu = vec![0.0; c.m()];
    for q in 0..ntheta {
        let theta = (q as f64 + 0.5) * dtheta;
        for (j, z) in zeta.iter_mut().enumerate() {
            *z = c.initial_value_bulk(j, radius, theta)?;
        }
        for (i, n) in nu.iter_mut().enumerate() {
            *n = c.initial_value_surface(i, radius, theta)?;
        }
        c.set_point(
            &mut slots,
            &zeta,
            &nu,
            Position {
                r: radius,
                theta,
                t: 0.0,
            },
        );
        for j in 0..c.k() {
            let up = c.initial_value_bulk(j, radius + h, theta)?;
            let dn = c.initial_value_bulk(j, radius - h, theta)?;
            let dudr = (up - dn) / (2.0 * h);
            let g = c.g[j]
                .eval(&slots)
                .map_err(|kind| c.evaluation_error(model, KineticsKind::G, j, &slots, kind))?;
            worst = worst.max((model.bulk[j].diffusion * dudr - g).abs());
        }
    }
    Ok(worst)
}
