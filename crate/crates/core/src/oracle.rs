//! Reference computations used to check the solver: a fine-step explicit
//! Euler integrator of the same semi-discrete system, and a manufactured
//! solution with convergence measurement.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::dsl::parse_model;
use crate::mesh::{build_disk_mesh, integrate_values, Compartment, Field, Mesh};
use crate::model::{eval_kinetics_at, ModelError, ModelSpec, Position, StatePoint};
use crate::operators::{assemble_bulk_diffusion, assemble_surface_diffusion, Rates, RhsEvaluator};
use crate::stepper::{Simulator, State, StepControl, StepError};

/// Largest mesh the reference integrator accepts.
pub const REFERENCE_MAX_NR: usize = 4;
pub const REFERENCE_MAX_NTHETA: usize = 8;
/// Largest reference step.
pub const REFERENCE_MAX_DT: f64 = 1e-5;
/// Values above this in magnitude are taken as blow-up.
pub const BLOWUP: f64 = 1e12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("reference solver needs Nr <= {REFERENCE_MAX_NR}, Ntheta <= {REFERENCE_MAX_NTHETA} and 0 < dt_ref <= {REFERENCE_MAX_DT:e}; got Nr = {nr}, Ntheta = {ntheta}, dt_ref = {dt:e}")]
    Preconditions { nr: usize, ntheta: usize, dt: f64 },
    #[error("explicit reference blew up in {field} at t = {t} (dt_ref too large)")]
    Unstable { t: f64, field: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("convergence harness: {0}")]
    Harness(String),
}

/// Fully explicit Euler on the semi-discrete system:
/// `wⁿ⁺¹ = wⁿ + dt (L wⁿ + rates(wⁿ))`, with `n = ⌈T/dt_ref⌉` equal steps.
pub fn reference_solve(
    model: &ModelSpec,
    mesh: &Mesh,
    t_final: f64,
    dt_ref: f64,
) -> Result<State, OracleError> {
    if mesh.nr() > REFERENCE_MAX_NR || mesh.ntheta() > REFERENCE_MAX_NTHETA || !(dt_ref > 0.0 && dt_ref <= REFERENCE_MAX_DT) {
        return Err(OracleError::Preconditions {
            nr: mesh.nr(),
            ntheta: mesh.ntheta(),
            dt: dt_ref,
        });
    }
    let ops: Vec<_> = model
        .bulk
        .iter()
        .map(|s| assemble_bulk_diffusion(mesh, s.diffusion))
        .chain(model.surface.iter().map(|s| assemble_surface_diffusion(mesh, s.diffusion)))
        .collect();
    let names: Vec<&str> = model.bulk.iter().chain(&model.surface).map(|s| s.name.as_str()).collect();
    let mut rhs = RhsEvaluator::new(model)?;
    let mut rates = Rates::zeros(mesh, model.k(), model.m());
    let mut state = State::initial(model, mesh)?;
    let steps = (t_final / dt_ref).ceil().max(1.0) as usize;
    let dt = t_final / steps as f64;
    let k = model.k();
    for n in 0..steps {
        rhs.evaluate(model, mesh, &state, &mut rates)?;
        let mut next = state.clone();
        for (s, f) in next.bulk.iter_mut().chain(next.surface.iter_mut()).enumerate() {
            let lw = ops[s].apply(&f.values);
            let r = if s < k { &rates.bulk[s] } else { &rates.surface[s - k] };
            for ((w, l), r) in f.values.iter_mut().zip(&lw).zip(r) {
                *w += dt * (l + r);
            }
            if f.values.iter().any(|v| !(v.abs() < BLOWUP)) {
                return Err(OracleError::Unstable {
                    t: (n + 1) as f64 * dt,
                    field: names[s].to_string(),
                });
            }
        }
        next.t = (n + 1) as f64 * dt;
        state = next;
    }
    state.t = t_final;
    Ok(state)
}

/// Manufactured solution on the unit disk:
/// `u* = e^{−t}(2 + r² cos 2θ)`, `v* = e^{−t}(2 + cos 2θ)`.
///
/// `r² cos 2θ` is harmonic, so `u*_t − dΔu* = −u*` and the bulk needs only
/// `H(u) = −u`. On the circle `Δ_M cos 2θ = −4 cos 2θ` and `u*|_M = v*`,
/// giving `F = u − 2v + 4 d̃ e^{−t} cos 2θ` and, from `d ∂_r u* = 2d e^{−t} cos 2θ`,
/// `G = v − u + 2d e^{−t} cos 2θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MmsCase {
    pub d: f64,
    pub dtilde: f64,
}

impl Default for MmsCase {
    fn default() -> Self {
        Self { d: 1.0, dtilde: 0.5 }
    }
}

impl MmsCase {
    pub fn exact_bulk(&self, r: f64, theta: f64, t: f64) -> f64 {
        (-t).exp() * (2.0 + r * r * (2.0 * theta).cos())
    }

    pub fn exact_surface(&self, theta: f64, t: f64) -> f64 {
        (-t).exp() * (2.0 + (2.0 * theta).cos())
    }

    pub fn model_text(&self) -> String {
        format!(
            "[species]\nu : bulk diff={d}\nv : surface diff={dt}\n\n[params]\nd = {d}\nds = {dt}\n\n\
             [kinetics]\nH[u] = -u\nF[v] = u - 2 * v + 4 * ds * exp(-t) * cos(2 * theta)\n\
             G[u] = v - u + 2 * d * exp(-t) * cos(2 * theta)\n\n\
             [initial]\nu = 2 + r^2 * cos(2 * theta)\nv = 2 + cos(2 * theta)\n",
            d = self.d,
            dt = self.dtilde
        )
    }

    pub fn model(&self) -> ModelSpec {
        parse_model(&self.model_text()).expect("manufactured model is valid")
    }

    /// Largest residual of the three forced equations at the given
    /// `(r, θ, t)` points (bulk) and `(θ, t)` (surface and flux), with all
    /// derivatives of the exact solution taken by finite differences.
    pub fn forcing_residual(&self, points: &[(f64, f64, f64)]) -> Result<f64, ModelError> {
        let model = self.model();
        let kin = |zeta: f64, nu: f64, r: f64, theta: f64, t: f64| {
            eval_kinetics_at(&model, &StatePoint::new(vec![zeta], vec![nu]), Position { r, theta, t })
        };
        let u = |x: f64, y: f64, t: f64| self.exact_bulk(x.hypot(y), y.atan2(x), t);
        let v = |theta: f64, t: f64| self.exact_surface(theta, t);
        let d_dt = |f: &dyn Fn(f64) -> f64, t: f64| {
            let h = 1e-3;
            (8.0 * (f(t + h) - f(t - h)) - (f(t + 2.0 * h) - f(t - 2.0 * h))) / (12.0 * h)
        };
        let mut worst = 0.0f64;
        for &(r, theta, t) in points {
            // bulk: u_t − dΔu − H(u)
            let (x, y) = (r * theta.cos(), r * theta.sin());
            let h = 1e-2;
            let lap = (u(x + h, y, t) + u(x - h, y, t) + u(x, y + h, t) + u(x, y - h, t) - 4.0 * u(x, y, t)) / (h * h);
            let ut = d_dt(&|s| u(x, y, s), t);
            let k = kin(u(x, y, t), 0.0, r, theta, t)?;
            worst = worst.max((ut - self.d * lap - k.h[0]).abs());

            // surface: v_t − d̃ v_θθ − F(u|_M, v)
            let c6 = [1.0 / 90.0, -3.0 / 20.0, 1.5, -49.0 / 18.0, 1.5, -3.0 / 20.0, 1.0 / 90.0];
            let vtt: f64 = (0..7)
                .map(|n| c6[n] * v(theta + (n as f64 - 3.0) * h, t))
                .sum::<f64>()
                / (h * h);
            let vt = d_dt(&|s| v(theta, s), t);
            let ub = self.exact_bulk(1.0, theta, t);
            let k = kin(ub, v(theta, t), 1.0, theta, t)?;
            worst = worst.max((vt - self.dtilde * vtt - k.f[0]).abs());

            // flux: d ∂_r u − G(u|_M, v)
            let hr = 1e-3;
            let ur = |s: f64| self.exact_bulk(s, theta, t);
            let dr = (8.0 * (ur(1.0 + hr) - ur(1.0 - hr)) - (ur(1.0 + 2.0 * hr) - ur(1.0 - 2.0 * hr))) / (12.0 * hr);
            worst = worst.max((self.d * dr - k.g[0]).abs());
        }
        Ok(worst)
    }

    /// `(‖u_h − u*‖²_Ω + ‖v_h − v*‖²_M)^{1/2}` at cell centres.
    pub fn error(&self, mesh: &Mesh, state: &State) -> f64 {
        let eu = Field::from_fn(mesh, Compartment::Bulk, |r, th| self.exact_bulk(r, th, state.t));
        let ev = Field::from_fn(mesh, Compartment::Surface, |_, th| self.exact_surface(th, state.t));
        l2_diff(mesh, &state.bulk[0], &eu) .hypot(l2_diff(mesh, &state.surface[0], &ev))
    }
}

fn l2_diff(mesh: &Mesh, a: &Field, b: &Field) -> f64 {
    let sq: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).collect();
    integrate_values(mesh, a.compartment, &sq).sqrt()
}

fn state_diff(mesh: &Mesh, a: &State, b: &State) -> f64 {
    l2_diff(mesh, &a.bulk[0], &b.bulk[0]).hypot(l2_diff(mesh, &a.surface[0], &b.surface[0]))
}

/// Run lengths and fixed resolutions of the convergence study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceSettings {
    pub space_resolutions: Vec<usize>,
    pub space_dt: f64,
    pub space_t_final: f64,
    pub time_steps: Vec<f64>,
    pub time_nr: usize,
    pub time_t_final: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            space_resolutions: vec![16, 32, 64],
            space_dt: 1e-5,
            space_t_final: 0.05,
            time_steps: vec![4e-3, 2e-3, 1e-3],
            time_nr: 32,
            time_t_final: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub study: &'static str,
    /// `Nr` for the space study, `dt` for the time study.
    pub resolution: f64,
    /// L2 error against the exact solution.
    pub error: f64,
    /// Space: error against exact. Time: difference to the next finer run.
    pub measured: f64,
    /// log2 of the ratio to the next finer row.
    pub order: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Smallest observed spatial order.
    pub space_order: f64,
    /// Smallest observed temporal order.
    pub time_order: f64,
    /// Errors failed to decrease monotonically.
    pub inconclusive: bool,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "study,resolution,error,measured,order")?;
        for r in &self.rows {
            let order = r.order.map_or(String::new(), |o| format!("{o}"));
            writeln!(out, "{},{},{:e},{:e},{}", r.study, r.resolution, r.error, r.measured, order)?;
        }
        Ok(())
    }
}

fn fixed_step(dt: f64) -> StepControl {
    let mut ctl = StepControl::new(dt);
    ctl.dt_min = dt;
    ctl
}

fn solve_mms(case: &MmsCase, model: &ModelSpec, mesh: &Mesh, t_final: f64, dt: f64) -> Result<State, OracleError> {
    let _ = case;
    let mut sim = Simulator::new(model, mesh)?;
    let initial = State::initial(model, mesh)?;
    Ok(sim.run(initial, t_final, t_final, &fixed_step(dt), &mut [])?.state)
}

/// Spatial orders from errors against the exact solution at `Nθ = 2 Nr`
/// with a small fixed `dt`; temporal orders from successive differences
/// `‖w_{dt} − w_{dt/2}‖` on a fixed mesh, which removes the spatial error.
pub fn manufactured_convergence(case: &MmsCase, settings: &ConvergenceSettings) -> Result<ConvergenceReport, OracleError> {
    if settings.space_resolutions.len() < 2 || settings.time_steps.len() < 3 {
        return Err(OracleError::Harness("need at least two meshes and three time steps".into()));
    }
    let model = case.model();
    let mut rows = vec![];
    let mut inconclusive = false;

    let mut space_errors = vec![];
    for &nr in &settings.space_resolutions {
        let mesh = build_disk_mesh(nr, 2 * nr, 1.0).map_err(|e| OracleError::Harness(e.to_string()))?;
        let s = solve_mms(case, &model, &mesh, settings.space_t_final, settings.space_dt)?;
        space_errors.push(case.error(&mesh, &s));
    }
    let mut space_order = f64::INFINITY;
    for (n, &nr) in settings.space_resolutions.iter().enumerate() {
        let e = space_errors[n];
        let order = space_errors.get(n + 1).map(|f| (e / f).log2());
        if let Some(o) = order {
            space_order = space_order.min(o);
            inconclusive |= space_errors[n + 1] >= e;
        }
        rows.push(ConvergenceRow {
            study: "space",
            resolution: nr as f64,
            error: e,
            measured: e,
            order,
        });
    }

    let nr = settings.time_nr;
    let mesh = build_disk_mesh(nr, 2 * nr, 1.0).map_err(|e| OracleError::Harness(e.to_string()))?;
    let mut states = vec![];
    for &dt in &settings.time_steps {
        states.push(solve_mms(case, &model, &mesh, settings.time_t_final, dt)?);
    }
    let diffs: Vec<f64> = states.windows(2).map(|w| state_diff(&mesh, &w[0], &w[1])).collect();
    let mut time_order = f64::INFINITY;
    for (n, &dt) in settings.time_steps.iter().enumerate() {
        let measured = diffs.get(n).copied().unwrap_or(f64::NAN);
        let order = diffs.get(n + 1).map(|f| (measured / f).log2());
        if let Some(o) = order {
            time_order = time_order.min(o);
            inconclusive |= diffs[n + 1] >= measured;
        }
        rows.push(ConvergenceRow {
            study: "time",
            resolution: dt,
            error: case.error(&mesh, &states[n]),
            measured,
            order,
        });
    }
    Ok(ConvergenceReport {
        rows,
        space_order,
        time_order,
        inconclusive,
    })
}
