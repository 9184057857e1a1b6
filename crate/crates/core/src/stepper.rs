//! IMEX time stepping: explicit reactions and boundary flux, backward-Euler
//! diffusion, with step-size control on the relative change per step.

use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{pcg, BandedCholesky, CgError, CsrMatrix};
use crate::mesh::{integrate_values, Compartment, Field, Mesh, MeshError};
use crate::model::{ModelError, ModelSpec};
use crate::operators::{
    assemble_bulk_diffusion, assemble_surface_diffusion, LinearOperator, Rates, RhsEvaluator,
};

/// Fields below this value abort a run.
pub const NEGATIVITY_ABORT: f64 = -1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    pub bulk: Vec<Field>,
    pub surface: Vec<Field>,
}

impl State {
    /// Samples the model's initial data at cell centres (surface at `r = R`).
    pub fn initial(model: &ModelSpec, mesh: &Mesh) -> Result<Self, ModelError> {
        let c = model.compile()?;
        let mut bulk = Vec::with_capacity(c.k());
        for j in 0..c.k() {
            let mut values = Vec::with_capacity(mesh.n_bulk());
            for i in 0..mesh.nr() {
                for q in 0..mesh.ntheta() {
                    values.push(c.initial_value_bulk(j, mesh.r_center(i), mesh.theta_center(q))?);
                }
            }
            bulk.push(Field::bulk(values));
        }
        let mut surface = Vec::with_capacity(c.m());
        for i in 0..c.m() {
            let values = (0..mesh.ntheta())
                .map(|q| c.initial_value_surface(i, mesh.radius(), mesh.theta_center(q)))
                .collect::<Result<Vec<_>, _>>()?;
            surface.push(Field::surface(values));
        }
        Ok(Self { t: 0.0, bulk, surface })
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> {
        self.bulk.iter().chain(&self.surface)
    }

    pub fn check(&self, model: &ModelSpec, mesh: &Mesh) -> Result<(), StepError> {
        if self.bulk.len() != model.k() || self.surface.len() != model.m() {
            return Err(StepError::Shape(ModelError::Shape {
                k: model.k(),
                m: model.m(),
                got_k: self.bulk.len(),
                got_m: self.surface.len(),
            }));
        }
        for f in &self.bulk {
            mesh.check(f, Compartment::Bulk)?;
        }
        for f in &self.surface {
            mesh.check(f, Compartment::Surface)?;
        }
        Ok(())
    }

    /// Smallest value over all fields.
    pub fn min_value(&self) -> f64 {
        self.fields().map(Field::min).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepControl {
    pub dt: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub cg_tol: f64,
    pub cg_maxiter: usize,
    /// A step is rejected when some field changes by more than this fraction
    /// of its sup norm.
    pub max_rel_change: f64,
    /// Lower bound on the sup norm used as the denominator of the change
    /// test, so fields near zero do not force tiny steps.
    pub change_floor: f64,
    /// Accepted steps at reduced `dt` before doubling.
    pub regrow_after: usize,
}

impl StepControl {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            dt_min: dt / 1024.0,
            dt_max: dt,
            cg_tol: 1e-10,
            cg_maxiter: 1000,
            max_rel_change: 0.1,
            change_floor: 1e-3,
            regrow_after: 10,
        }
    }

    pub fn validate(&self) -> Result<(), StepError> {
        let ok = self.dt.is_finite()
            && self.dt_min > 0.0
            && self.dt_min <= self.dt
            && self.dt <= self.dt_max
            && self.dt_max.is_finite()
            && self.cg_tol > 0.0
            && self.cg_maxiter > 0
            && self.max_rel_change > 0.0
            && self.change_floor >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(StepError::Control(format!(
                "need 0 < dt_min <= dt <= dt_max (got {} <= {} <= {}), cg_tol > 0, cg_maxiter > 0",
                self.dt_min, self.dt, self.dt_max
            )))
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("stiffness failure at t = {t}: step size {dt:e} fell below dt_min = {dt_min:e}")]
    Stiffness { t: f64, dt: f64, dt_min: f64 },
    #[error("non-finite value in {field} at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64, field: String },
    #[error("{field} reached {value:e} < {NEGATIVITY_ABORT:e} at t = {t}")]
    Negative { t: f64, field: String, value: f64 },
    #[error("implicit solve for {field}: {source}")]
    Solver {
        field: String,
        #[source]
        source: CgError,
    },
    #[error("implicit operator for {field} is not positive definite")]
    Factor { field: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state does not match the model: {0}")]
    Shape(ModelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("invalid step control: {0}")]
    Control(String),
}

impl StepError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            StepError::Stiffness { .. }
                | StepError::NonFinite { .. }
                | StepError::Negative { .. }
                | StepError::Solver { .. }
                | StepError::Factor { .. }
        )
    }
}

/// Per-step bookkeeping.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub dt: f64,
    pub cg_iterations: usize,
    /// Per field (bulk then surface): change of the weighted integral caused
    /// by the implicit solve. Zero up to rounding and solver tolerance.
    pub solve_mass_error: Vec<f64>,
}

/// Receives the state at every output time.
pub trait Observer {
    fn observe(&mut self, mesh: &Mesh, state: &State);
}

impl<F: FnMut(&Mesh, &State)> Observer for F {
    fn observe(&mut self, mesh: &Mesh, state: &State) {
        self(mesh, state)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub accepted: usize,
    pub rejected: usize,
    pub smallest_dt: f64,
    pub max_cg_iterations: usize,
    /// Running minimum of every field over all accepted steps, bulk then
    /// surface.
    pub field_minima: Vec<f64>,
    pub max_solve_mass_error: f64,
}

impl RunStats {
    pub fn overall_minimum(&self) -> f64 {
        self.field_minima.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: State,
    pub stats: RunStats,
}

/// Reusable stepping context: operators, factorizations and buffers.
pub struct Simulator<'a> {
    model: &'a ModelSpec,
    mesh: &'a Mesh,
    ops: Vec<LinearOperator>,
    names: Vec<String>,
    rhs: RhsEvaluator,
    rates: Rates,
    factors: HashMap<(usize, u64), BandedCholesky>,
    steps: usize,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a ModelSpec, mesh: &'a Mesh) -> Result<Self, StepError> {
        let mut ops = Vec::with_capacity(model.k() + model.m());
        for sp in &model.bulk {
            ops.push(assemble_bulk_diffusion(mesh, sp.diffusion));
        }
        for sp in &model.surface {
            ops.push(assemble_surface_diffusion(mesh, sp.diffusion));
        }
        let names = model.bulk.iter().chain(&model.surface).map(|s| s.name.clone()).collect();
        Ok(Self {
            model,
            mesh,
            ops,
            names,
            rhs: RhsEvaluator::new(model)?,
            rates: Rates::zeros(mesh, model.k(), model.m()),
            factors: HashMap::new(),
            steps: 0,
        })
    }

    pub fn operators(&self) -> &[LinearOperator] {
        &self.ops
    }

    /// Rates from the most recent step.
    pub fn last_rates(&self) -> &Rates {
        &self.rates
    }

    fn ensure_factors(&mut self, dt: f64) -> Result<(), StepError> {
        if self.factors.len() > 64 {
            self.factors.clear();
        }
        for (s, op) in self.ops.iter().enumerate() {
            let key = (s, dt.to_bits());
            if self.factors.contains_key(&key) {
                continue;
            }
            let f = BandedCholesky::factor(&implicit_matrix(op, dt))
                .map_err(|_| StepError::Factor { field: self.names[s].clone() })?;
            self.factors.insert(key, f);
        }
        Ok(())
    }

    /// One IMEX step of size `dt`: `w* = wⁿ + dt·rates(stateⁿ)`, then
    /// `(I − dt L) wⁿ⁺¹ = w*` per species.
    pub fn imex_step(
        &mut self,
        state: &State,
        dt: f64,
        ctl: &StepControl,
    ) -> Result<(State, StepInfo), StepError> {
        self.rhs.evaluate(self.model, self.mesh, state, &mut self.rates)?;
        self.ensure_factors(dt)?;
        let k = self.model.k();
        let starred: Vec<Vec<f64>> = state
            .fields()
            .enumerate()
            .map(|(s, f)| {
                let r = if s < k { &self.rates.bulk[s] } else { &self.rates.surface[s - k] };
                f.values.iter().zip(r).map(|(w, r)| w + dt * r).collect()
            })
            .collect();

        let ops = &self.ops;
        let factors = &self.factors;
        let solved: Vec<Result<(Vec<f64>, usize, f64), usize>> = starred
            .par_iter()
            .enumerate()
            .map(|(s, ws)| {
                let op = &ops[s];
                let b: Vec<f64> = ws.iter().zip(&op.weights).map(|(w, v)| w * v).collect();
                let mut x = b.clone();
                factors[&(s, dt.to_bits())].solve_in_place(&mut x);
                let diag = op.implicit_weighted_diagonal(dt);
                let out = pcg(
                    |v, y| op.apply_implicit_weighted(dt, v, y),
                    &diag,
                    &b,
                    &mut x,
                    ctl.cg_tol,
                    ctl.cg_maxiter,
                )
                .map_err(|_| s)?;
                let before: f64 = b.iter().sum();
                let after: f64 = x.iter().zip(&op.weights).map(|(x, w)| x * w).sum();
                Ok((x, out.iterations, after - before))
            })
            .collect();

        self.steps += 1;
        let mut info = StepInfo { dt, ..Default::default() };
        let mut bulk = Vec::with_capacity(k);
        let mut surface = Vec::with_capacity(self.model.m());
        for (s, res) in solved.into_iter().enumerate() {
            let (x, its, err) = match res {
                Ok(v) => v,
                Err(s) => {
                    // recompute for the error report
                    let op = &self.ops[s];
                    let b: Vec<f64> = starred[s].iter().zip(&op.weights).map(|(w, v)| w * v).collect();
                    let mut x = starred[s].clone();
                    let e = pcg(
                        |v, y| op.apply_implicit_weighted(dt, v, y),
                        &op.implicit_weighted_diagonal(dt),
                        &b,
                        &mut x,
                        ctl.cg_tol,
                        ctl.cg_maxiter,
                    )
                    .err()
                    .unwrap_or(CgError { iterations: ctl.cg_maxiter, residual: f64::NAN });
                    return Err(StepError::Solver { field: self.names[s].clone(), source: e });
                }
            };
            if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
                let _ = bad;
                return Err(StepError::NonFinite {
                    step: self.steps,
                    t: state.t + dt,
                    field: self.names[s].clone(),
                });
            }
            info.cg_iterations = info.cg_iterations.max(its);
            info.solve_mass_error.push(err);
            if s < k {
                bulk.push(Field::bulk(x));
            } else {
                surface.push(Field::surface(x));
            }
        }
        Ok((State { t: state.t + dt, bulk, surface }, info))
    }

    /// Largest relative sup-norm change over all fields.
    fn relative_change(&self, old: &State, new: &State, floor: f64) -> f64 {
        old.fields()
            .zip(new.fields())
            .map(|(a, b)| {
                let diff = a.values.iter().zip(&b.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                diff / a.max_abs().max(floor)
            })
            .fold(0.0, f64::max)
    }

    /// Integrates to `t_final`, calling observers at `t = 0` and at every
    /// multiple of `dt_out` (and at `t_final`). Steps are shortened to land
    /// on output times exactly.
    pub fn run(
        &mut self,
        initial: State,
        t_final: f64,
        dt_out: f64,
        ctl: &StepControl,
        observers: &mut [&mut dyn Observer],
    ) -> Result<RunOutcome, StepError> {
        self.run_with_stops(initial, t_final, dt_out, &[], ctl, observers)
    }

    /// As [`Simulator::run`], with `extra` times inside `(t0, t_final]` added
    /// to the output grid.
    pub fn run_with_stops(
        &mut self,
        initial: State,
        t_final: f64,
        dt_out: f64,
        extra: &[f64],
        ctl: &StepControl,
        observers: &mut [&mut dyn Observer],
    ) -> Result<RunOutcome, StepError> {
        ctl.validate()?;
        initial.check(self.model, self.mesh)?;
        if !(t_final > initial.t) || !(dt_out > 0.0) {
            return Err(StepError::Control(format!(
                "need t_final > t0 and dt_out > 0 (got t_final = {t_final}, dt_out = {dt_out})"
            )));
        }
        let mut stats = RunStats {
            smallest_dt: ctl.dt,
            field_minima: initial.fields().map(Field::min).collect(),
            ..Default::default()
        };
        let mut state = initial;
        for o in observers.iter_mut() {
            o.observe(self.mesh, &state);
        }
        let t0 = state.t;
        let n_out = ((t_final - t0) / dt_out - 1e-9).ceil().max(1.0) as usize;
        let mut stops: Vec<f64> = (1..n_out).map(|k| t0 + k as f64 * dt_out).collect();
        stops.push(t_final);
        stops.extend(extra.iter().copied().filter(|&t| t > t0 && t < t_final));
        stops.sort_by(f64::total_cmp);
        stops.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
        let mut dt = ctl.dt;
        let mut since_cut = 0usize;
        for target in stops {
            while state.t < target {
                let remaining = target - state.t;
                let (h, lands) = if dt >= remaining * (1.0 - 1e-9) {
                    (remaining, true)
                } else {
                    (dt, false)
                };
                let (mut next, info) = self.imex_step(&state, h, ctl)?;
                if self.relative_change(&state, &next, ctl.change_floor) > ctl.max_rel_change {
                    stats.rejected += 1;
                    dt = h / 2.0;
                    since_cut = 0;
                    if dt < ctl.dt_min {
                        return Err(StepError::Stiffness { t: state.t, dt, dt_min: ctl.dt_min });
                    }
                    continue;
                }
                if lands {
                    next.t = target;
                }
                stats.accepted += 1;
                stats.smallest_dt = stats.smallest_dt.min(h);
                stats.max_cg_iterations = stats.max_cg_iterations.max(info.cg_iterations);
                for e in &info.solve_mass_error {
                    stats.max_solve_mass_error = stats.max_solve_mass_error.max(e.abs());
                }
                for (s, f) in next.fields().enumerate() {
                    let lo = f.min();
                    stats.field_minima[s] = stats.field_minima[s].min(lo);
                    if lo < NEGATIVITY_ABORT {
                        return Err(StepError::Negative {
                            t: next.t,
                            field: self.names[s].clone(),
                            value: lo,
                        });
                    }
                }
                if dt < ctl.dt_max {
                    since_cut += 1;
                    if since_cut >= ctl.regrow_after {
                        dt = (2.0 * dt).min(ctl.dt_max);
                        since_cut = 0;
                    }
                }
                state = next;
            }
            for o in observers.iter_mut() {
                o.observe(self.mesh, &state);
            }
        }
        Ok(RunOutcome { state, stats })
    }
}

/// `W (I − dt L)` as an explicit matrix.
fn implicit_matrix(op: &LinearOperator, dt: f64) -> CsrMatrix {
    let rows = (0..op.matrix.n())
        .map(|i| {
            let w = op.weights[i];
            let mut row: Vec<(usize, f64)> = op.matrix.row(i).map(|(j, v)| (j, -w * dt * v)).collect();
            row.push((i, w));
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// One IMEX step from `state` with `ctl.dt`.
pub fn imex_step(
    model: &ModelSpec,
    mesh: &Mesh,
    state: &State,
    ctl: &StepControl,
) -> Result<State, StepError> {
    ctl.validate()?;
    state.check(model, mesh)?;
    Simulator::new(model, mesh)?
        .imex_step(state, ctl.dt, ctl)
        .map(|(s, _)| s)
}

/// Runs from the model's initial data to `t_final`.
pub fn run(
    model: &ModelSpec,
    mesh: &Mesh,
    t_final: f64,
    dt_out: f64,
    ctl: &StepControl,
    observers: &mut [&mut dyn Observer],
) -> Result<RunOutcome, StepError> {
    let initial = State::initial(model, mesh)?;
    Simulator::new(model, mesh)?.run(initial, t_final, dt_out, ctl, observers)
}

/// Integral of every field, bulk then surface.
pub fn field_integrals(mesh: &Mesh, state: &State) -> Vec<f64> {
    state
        .fields()
        .map(|f| integrate_values(mesh, f.compartment, &f.values))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::dsl::parse_model;
    use crate::mesh::build_disk_mesh;

    fn heat_model(init: &str) -> ModelSpec {
        parse_model(&format!(
            "[species]\nu : bulk diff=1\nv : surface diff=0.5\n[initial]\nu = {init}\nv = 1 + cos(theta)\n"
        ))
        .unwrap()
    }

    #[test]
    fn constant_data_is_a_fixed_point() {
        let model = heat_model("3");
        let mesh = build_disk_mesh(6, 12, 1.0).unwrap();
        let mut s = State::initial(&model, &mesh).unwrap();
        s.surface[0] = Field::constant(&mesh, Compartment::Surface, 2.0);
        let next = imex_step(&model, &mesh, &s, &StepControl::new(0.1)).unwrap();
        for (a, b) in s.fields().zip(next.fields()) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= 1e-12, "{x} {y}");
            }
        }
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn surface_diffusion_conserves_integral() {
        let model = heat_model("0");
        let mesh = build_disk_mesh(4, 32, 1.0).unwrap();
        let s = State::initial(&model, &mesh).unwrap();
        let next = imex_step(&model, &mesh, &s, &StepControl::new(0.05)).unwrap();
        let before = field_integrals(&mesh, &s)[1];
        let after = field_integrals(&mesh, &next)[1];
        assert!((after - before).abs() <= 1e-10 * before);
        assert!(next.surface[0].max_abs() < s.surface[0].max_abs());
    }

    #[test]
    fn brusselator_steady_state_persists() {
        let mut model = builtins::brusselator();
        model.initial_bulk = vec![crate::parse_expr("A/B").unwrap()];
        model.initial_surface = vec![crate::parse_expr("B").unwrap()];
        let mesh = build_disk_mesh(8, 16, 1.0).unwrap();
        let out = run(&model, &mesh, 0.5, 0.1, &StepControl::new(1e-2), &mut []).unwrap();
        for x in &out.state.bulk[0].values {
            assert!((x - 0.5).abs() <= 1e-10);
        }
        for x in &out.state.surface[0].values {
            assert!((x - 2.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn heat_equation_sup_norm_never_grows() {
        let model = heat_model("3 + r^2 * cos(2 * theta) + r * sin(theta)");
        let mesh = build_disk_mesh(8, 16, 1.0).unwrap();
        let mut last = f64::INFINITY;
        let mut times = vec![];
        let mut obs = |_: &Mesh, s: &State| {
            let sup = s.bulk[0].max_abs();
            assert!(sup <= last + 1e-12, "sup grew at t = {}", s.t);
            last = sup;
            times.push(s.t);
        };
        let ctl = StepControl::new(1e-2);
        let out = run(&model, &mesh, 1.0, 0.1, &ctl, &mut [&mut obs]).unwrap();
        assert_eq!(times.len(), 11);
        assert_eq!(*times.last().unwrap(), 1.0);
        assert!((times[3] - 0.3).abs() < 1e-12);
        assert!(out.stats.max_solve_mass_error < 1e-12, "{}", out.stats.max_solve_mass_error);
    }

    #[test]
    fn step_ledger_matches_rates() {
        let model = builtins::min_system();
        let mesh = build_disk_mesh(6, 12, 1.0).unwrap();
        let s = State::initial(&model, &mesh).unwrap();
        let mut sim = Simulator::new(&model, &mesh).unwrap();
        let dt = 1e-3;
        let (next, info) = sim.imex_step(&s, dt, &StepControl::new(dt)).unwrap();
        let rates = sim.last_rates().clone();
        let before = field_integrals(&mesh, &s);
        let after = field_integrals(&mesh, &next);
        for j in 0..3 {
            let expect = dt * integrate_values(&mesh, Compartment::Bulk, &rates.bulk[j]);
            let scale = before[j].abs().max(1.0);
            assert!((after[j] - before[j] - expect).abs() <= 1e-12 * scale);
        }
        for i in 0..2 {
            let expect = dt * integrate_values(&mesh, Compartment::Surface, &rates.surface[i]);
            assert!((after[3 + i] - before[3 + i] - expect).abs() <= 1e-12);
        }
        assert_eq!(info.solve_mass_error.len(), 5);
    }

    #[test]
    fn stiff_kinetics_trigger_stiffness_failure() {
        let model = parse_model("[species]\nu : bulk diff=1\n[kinetics]\nH[u] = -100 * u\n[initial]\nu = 1\n").unwrap();
        let mesh = build_disk_mesh(4, 8, 1.0).unwrap();
        let mut ctl = StepControl::new(10.0);
        ctl.dt_min = 9.0;
        ctl.dt_max = 10.0;
        let err = run(&model, &mesh, 1.0, 1.0, &ctl, &mut []).unwrap_err();
        assert!(matches!(err, StepError::Stiffness { .. }), "{err}");
        assert!(err.to_string().contains("stiffness failure"));
    }

    #[test]
    fn adaptive_halving_recovers() {
        let model = parse_model("[species]\nu : bulk diff=1\n[kinetics]\nH[u] = -5 * u\n[initial]\nu = 1\n").unwrap();
        let mesh = build_disk_mesh(4, 8, 1.0).unwrap();
        let out = run(&model, &mesh, 1.0, 0.5, &StepControl::new(0.1), &mut []).unwrap();
        assert!(out.stats.rejected > 0);
        assert!(out.stats.smallest_dt < 0.1);
        let exact = (-5.0f64).exp();
        assert!((out.state.bulk[0].values[0] - exact).abs() < 0.05);
    }

    #[test]
    fn runs_are_deterministic() {
        let model = builtins::ratz_roger();
        let mesh = build_disk_mesh(6, 12, 1.0).unwrap();
        let ctl = StepControl::new(1e-2);
        let a = run(&model, &mesh, 0.3, 0.1, &ctl, &mut []).unwrap();
        let b = run(&model, &mesh, 0.3, 0.1, &ctl, &mut []).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn extra_stops_are_observed() {
        let model = heat_model("1");
        let mesh = build_disk_mesh(4, 8, 1.0).unwrap();
        let mut times = vec![];
        let mut obs = |_: &Mesh, s: &State| times.push(s.t);
        let mut sim = Simulator::new(&model, &mesh).unwrap();
        let init = State::initial(&model, &mesh).unwrap();
        sim.run_with_stops(init, 1.0, 0.5, &[0.25, 0.5, 3.0], &StepControl::new(0.1), &mut [&mut obs])
            .unwrap();
        assert_eq!(times, vec![0.0, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn invalid_control_is_rejected() {
        let mut ctl = StepControl::new(1e-2);
        ctl.dt_min = 1.0;
        assert!(matches!(ctl.validate(), Err(StepError::Control(_))));
    }
}
