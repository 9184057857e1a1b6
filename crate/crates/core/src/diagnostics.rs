//! Norms, windowed time integrals, mass functionals and the comparison bound,
//! recorded on a fixed output grid.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::mesh::{integrate_values, trace_values, Compartment, Field, Mesh};
use crate::model::ModelSpec;
use crate::stepper::{Observer, RunStats, State};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("window [{tau}, {}] is not covered by the recorded times [{start}, {end}]", tau + 1.0)]
    WindowNotCovered { tau: f64, start: f64, end: f64 },
    #[error("functional `{functional}` refers to undeclared species `{species}`")]
    UnknownSpecies { functional: String, species: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn lp_norm(mesh: &Mesh, field: &Field, p: Norm) -> f64 {
    values_norm(mesh, field.compartment, &field.values, p)
}

fn values_norm(mesh: &Mesh, comp: Compartment, values: &[f64], p: Norm) -> f64 {
    match p {
        Norm::Inf => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        Norm::L1 => {
            let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
            integrate_values(mesh, comp, &abs)
        }
        Norm::L2 => {
            let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
            integrate_values(mesh, comp, &sq).sqrt()
        }
    }
}

/// `y(t) = B/(A+1) + (y0 − B/(A+1)) e^{−(A+1)t}`, the solution of
/// `y' = B − (A+1) y`, `y(0) = y0`.
pub fn comparison_lower_bound(a: f64, b: f64, y0: f64, t: f64) -> f64 {
    let eq = b / (a + 1.0);
    eq + (y0 - eq) * (-(a + 1.0) * t).exp()
}

/// Values of the model's declared mass functionals, in declaration order.
pub fn mass_functionals(
    model: &ModelSpec,
    mesh: &Mesh,
    state: &State,
) -> Result<Vec<(String, f64)>, DiagnosticsError> {
    let bulk: Vec<f64> = state
        .bulk
        .iter()
        .map(|f| integrate_values(mesh, Compartment::Bulk, &f.values))
        .collect();
    let surface: Vec<f64> = state
        .surface
        .iter()
        .map(|f| integrate_values(mesh, Compartment::Surface, &f.values))
        .collect();
    functional_values(model, &bulk, &surface)
}

fn functional_values(
    model: &ModelSpec,
    bulk: &[f64],
    surface: &[f64],
) -> Result<Vec<(String, f64)>, DiagnosticsError> {
    model
        .functionals
        .iter()
        .map(|mf| {
            let mut total = 0.0;
            for (c, name) in &mf.terms {
                let v = if let Some(j) = model.bulk_index(name) {
                    bulk[j]
                } else if let Some(i) = model.surface_index(name) {
                    surface[i]
                } else {
                    return Err(DiagnosticsError::UnknownSpecies {
                        functional: mf.name.clone(),
                        species: name.clone(),
                    });
                };
                total += c * v;
            }
            Ok((mf.name.clone(), total))
        })
        .collect()
}

/// Norms of one field at one output time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct FieldSample {
    pub sup: f64,
    pub l1: f64,
    pub l2: f64,
    pub integral: f64,
    pub min: f64,
}

impl FieldSample {
    fn of(mesh: &Mesh, f: &Field) -> Self {
        Self {
            sup: lp_norm(mesh, f, Norm::Inf),
            l1: lp_norm(mesh, f, Norm::L1),
            l2: lp_norm(mesh, f, Norm::L2),
            integral: integrate_values(mesh, f.compartment, &f.values),
            min: f.min(),
        }
    }
}

/// `(∫_τ^{τ+1}∫_Ω u_j, ∫_τ^{τ+1}∫_M v_i, ∫_τ^{τ+1}∫_M u_j)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WindowTriple {
    pub bulk: f64,
    pub surface: f64,
    pub trace: f64,
}

impl WindowTriple {
    pub fn total(&self) -> f64 {
        self.bulk + self.surface + self.trace
    }
}

/// Time series of diagnostics; indices are `[species][output time]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsSeries {
    model: ModelSpec,
    pub times: Vec<f64>,
    pub bulk: Vec<Vec<FieldSample>>,
    pub surface: Vec<Vec<FieldSample>>,
    /// L1 norm on `M` of the clamped trace of each bulk species.
    pub trace_l1: Vec<Vec<f64>>,
    /// `[functional][output time]`.
    pub functionals: Vec<Vec<f64>>,
}

impl DiagnosticsSeries {
    pub fn new(model: &ModelSpec) -> Self {
        Self {
            model: model.clone(),
            times: vec![],
            bulk: vec![vec![]; model.k()],
            surface: vec![vec![]; model.m()],
            trace_l1: vec![vec![]; model.k()],
            functionals: vec![vec![]; model.functionals.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn functional_names(&self) -> Vec<&str> {
        self.model.functionals.iter().map(|f| f.name.as_str()).collect()
    }

    /// Appends the diagnostics of `state`. Times must increase strictly;
    /// a repeated time replaces nothing and is ignored.
    pub fn record(&mut self, mesh: &Mesh, state: &State) -> Result<(), DiagnosticsError> {
        if let Some(&last) = self.times.last() {
            if state.t <= last {
                return Ok(());
            }
        }
        let functionals = mass_functionals(&self.model, mesh, state)?;
        self.times.push(state.t);
        for (j, f) in state.bulk.iter().enumerate() {
            self.bulk[j].push(FieldSample::of(mesh, f));
            let tr = trace_values(mesh, &f.values);
            self.trace_l1[j].push(values_norm(mesh, Compartment::Surface, &tr, Norm::L1));
        }
        for (i, f) in state.surface.iter().enumerate() {
            self.surface[i].push(FieldSample::of(mesh, f));
        }
        for (n, (_, v)) in functionals.into_iter().enumerate() {
            self.functionals[n].push(v);
        }
        Ok(())
    }

    fn window<F: Fn(usize) -> f64>(&self, tau: f64, y: F) -> Result<f64, DiagnosticsError> {
        let (start, end) = match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => {
                return Err(DiagnosticsError::WindowNotCovered {
                    tau,
                    start: f64::NAN,
                    end: f64::NAN,
                })
            }
        };
        let eps = 1e-9 * (1.0 + tau.abs());
        if tau < start - eps || tau + 1.0 > end + eps {
            return Err(DiagnosticsError::WindowNotCovered { tau, start, end });
        }
        let (lo, hi) = (tau, tau + 1.0);
        let mut total = 0.0;
        for k in 0..self.times.len().saturating_sub(1) {
            let (t0, t1) = (self.times[k], self.times[k + 1]);
            let a = t0.max(lo);
            let b = t1.min(hi);
            if b <= a {
                continue;
            }
            let lerp = |t: f64| y(k) + (y(k + 1) - y(k)) * (t - t0) / (t1 - t0);
            total += 0.5 * (b - a) * (lerp(a) + lerp(b));
        }
        Ok(total)
    }

    /// Maximum over recorded times in `[t0, t1]` of each field's sup norm,
    /// bulk then surface.
    pub fn sup_over(&self, t0: f64, t1: f64) -> Vec<f64> {
        let idx: Vec<usize> = (0..self.times.len())
            .filter(|&k| self.times[k] >= t0 - 1e-9 && self.times[k] <= t1 + 1e-9)
            .collect();
        self.bulk
            .iter()
            .chain(&self.surface)
            .map(|s| idx.iter().map(|&k| s[k].sup).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    /// Worst relative drift rate of each functional:
    /// `max_t |M(t) − M(0)| / (|M(0)| · max(t − t0, 1))`.
    pub fn functional_drift_rates(&self) -> Vec<(String, f64)> {
        self.model
            .functionals
            .iter()
            .zip(&self.functionals)
            .map(|(mf, vals)| {
                let m0 = vals.first().copied().unwrap_or(0.0);
                let t0 = self.times.first().copied().unwrap_or(0.0);
                let rate = vals
                    .iter()
                    .zip(&self.times)
                    .map(|(v, t)| (v - m0).abs() / (m0.abs() * (t - t0).max(1.0)))
                    .fold(0.0, f64::max);
                (mf.name.clone(), rate)
            })
            .collect()
    }

    /// First output time `t ≥ t_start` where the surface minimum of species
    /// `surface_idx` falls below `comparison_lower_bound(a, b, 0, t) − tol`.
    pub fn lower_bound_violation(
        &self,
        surface_idx: usize,
        a: f64,
        b: f64,
        t_start: f64,
        tol: f64,
    ) -> Option<(f64, f64, f64)> {
        self.times
            .iter()
            .zip(&self.surface[surface_idx])
            .filter(|(t, _)| **t >= t_start)
            .map(|(&t, s)| (t, s.min, comparison_lower_bound(a, b, 0.0, t)))
            .find(|(_, min, y)| *min < y - tol)
    }

    /// CSV with one row per output time. Columns: `t`; per bulk species
    /// `<name>.{sup,l1,l2,int,min,trace_l1}`; per surface species
    /// `<name>.{sup,l1,l2,int,min}`; then one column per mass functional.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        for sp in &self.model.bulk {
            for c in ["sup", "l1", "l2", "int", "min", "trace_l1"] {
                header.push(format!("{}.{c}", sp.name));
            }
        }
        for sp in &self.model.surface {
            for c in ["sup", "l1", "l2", "int", "min"] {
                header.push(format!("{}.{c}", sp.name));
            }
        }
        for mf in &self.model.functionals {
            header.push(mf.name.clone());
        }
        writeln!(out, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            let push = |row: &mut Vec<String>, s: &FieldSample| {
                for v in [s.sup, s.l1, s.l2, s.integral, s.min] {
                    row.push(format!("{v:e}"));
                }
            };
            for j in 0..self.bulk.len() {
                push(&mut row, &self.bulk[j][k]);
                row.push(format!("{:e}", self.trace_l1[j][k]));
            }
            for s in &self.surface {
                push(&mut row, &s[k]);
            }
            for f in &self.functionals {
                row.push(format!("{:e}", f[k]));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        let fields = self
            .model
            .bulk
            .iter()
            .zip(&self.bulk)
            .chain(self.model.surface.iter().zip(&self.surface))
            .map(|(sp, s)| FieldSummary {
                name: sp.name.clone(),
                final_values: s.last().copied().unwrap_or_default(),
                max_sup: s.iter().map(|x| x.sup).fold(0.0, f64::max),
                min_value: s.iter().map(|x| x.min).fold(f64::INFINITY, f64::min),
            })
            .collect();
        let functionals = self
            .model
            .functionals
            .iter()
            .zip(&self.functionals)
            .zip(self.functional_drift_rates())
            .map(|((mf, vals), (_, rate))| FunctionalSummary {
                name: mf.name.clone(),
                conserved: mf.conserved,
                initial: vals.first().copied().unwrap_or(0.0),
                final_value: vals.last().copied().unwrap_or(0.0),
                drift_rate: rate,
            })
            .collect();
        Summary {
            t_final: self.times.last().copied().unwrap_or(0.0),
            outputs: self.times.len(),
            fields,
            functionals,
            stats: None,
            lower_bound_violation: None,
        }
    }
}

impl Observer for DiagnosticsSeries {
    /// Panics only if the model's functionals reference undeclared species,
    /// which validation rules out.
    fn observe(&mut self, mesh: &Mesh, state: &State) {
        self.record(mesh, state).expect("functionals refer to declared species");
    }
}

/// Windowed L1 triples for every pair (bulk `j`, surface `i`), indexed
/// `[j][i]`, by the trapezoidal rule on the output grid.
pub fn windowed_l1(series: &DiagnosticsSeries, tau: f64) -> Result<Vec<Vec<WindowTriple>>, DiagnosticsError> {
    let mut bulk = Vec::with_capacity(series.bulk.len());
    let mut trace = Vec::with_capacity(series.bulk.len());
    for j in 0..series.bulk.len() {
        bulk.push(series.window(tau, |k| series.bulk[j][k].l1)?);
        trace.push(series.window(tau, |k| series.trace_l1[j][k])?);
    }
    let mut surface = Vec::with_capacity(series.surface.len());
    for i in 0..series.surface.len() {
        surface.push(series.window(tau, |k| series.surface[i][k].l1)?);
    }
    Ok((0..bulk.len())
        .map(|j| {
            surface
                .iter()
                .map(|&s| WindowTriple {
                    bulk: bulk[j],
                    surface: s,
                    trace: trace[j],
                })
                .collect()
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldSummary {
    pub name: String,
    #[serde(rename = "final")]
    pub final_values: FieldSample,
    pub max_sup: f64,
    pub min_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalSummary {
    pub name: String,
    pub conserved: bool,
    pub initial: f64,
    #[serde(rename = "final")]
    pub final_value: f64,
    pub drift_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StatsSummary {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub smallest_dt: f64,
    pub max_cg_iterations: usize,
    pub min_value: f64,
}

impl From<&RunStats> for StatsSummary {
    fn from(s: &RunStats) -> Self {
        Self {
            accepted_steps: s.accepted,
            rejected_steps: s.rejected,
            smallest_dt: s.smallest_dt,
            max_cg_iterations: s.max_cg_iterations,
            min_value: s.overall_minimum(),
        }
    }
}

/// JSON summary of a run: final and extremal values.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub t_final: f64,
    pub outputs: usize,
    pub fields: Vec<FieldSummary>,
    pub functionals: Vec<FunctionalSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<StatsSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_bound_violation: Option<bool>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::dsl::parse_model;
    use crate::mesh::build_disk_mesh;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn one_species() -> ModelSpec {
        parse_model("[species]\nu : bulk diff=1\nv : surface diff=1\n[functionals]\nconserved M = u + 2*v\n").unwrap()
    }

    fn state_of(mesh: &Mesh, t: f64, u: f64, v: f64) -> State {
        State {
            t,
            bulk: vec![Field::constant(mesh, Compartment::Bulk, u)],
            surface: vec![Field::constant(mesh, Compartment::Surface, v)],
        }
    }

    #[test]
    fn constant_field_norms() {
        let m = build_disk_mesh(8, 16, 2.0).unwrap();
        let f = Field::constant(&m, Compartment::Bulk, -1.5);
        assert_relative_eq!(lp_norm(&m, &f, Norm::L1), 1.5 * PI * 4.0, max_relative = 1e-13);
        assert_eq!(lp_norm(&m, &f, Norm::Inf), 1.5);
    }

    #[test]
    fn cosine_l2_on_unit_circle() {
        let err = |n: usize| {
            let m = build_disk_mesh(2, n, 1.0).unwrap();
            let f = Field::from_fn(&m, Compartment::Surface, |_, th| th.cos());
            (lp_norm(&m, &f, Norm::L2) - PI.sqrt()).abs()
        };
        assert!(err(64) < 1e-12);
        assert!(err(8) < 1e-12);
    }

    #[test]
    fn comparison_bound_values() {
        assert_relative_eq!(comparison_lower_bound(1.0, 2.0, 0.0, 1.0), 1.0 - (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(comparison_lower_bound(1.0, 2.0, 0.3, 0.0), 0.3, max_relative = 1e-15);
        for t in [0.1, 1.0, 7.5] {
            let closed = 2.0 / 3.0 * (1.0 - (-3.0 * t as f64).exp());
            assert_relative_eq!(comparison_lower_bound(2.0, 2.0, 0.0, t), closed, max_relative = 1e-14);
        }
    }

    #[test]
    fn windowed_constant_in_time() {
        let model = one_species();
        let m = build_disk_mesh(8, 16, 1.0).unwrap();
        let mut s = DiagnosticsSeries::new(&model);
        for k in 0..=40 {
            s.record(&m, &state_of(&m, k as f64 * 0.05, 1.0, 3.0)).unwrap();
        }
        for tau in [0.0, 0.37, 1.0] {
            let w = windowed_l1(&s, tau).unwrap();
            assert_relative_eq!(w[0][0].bulk, PI, max_relative = 1e-12);
            assert_relative_eq!(w[0][0].surface, 6.0 * PI, max_relative = 1e-12);
            assert_relative_eq!(w[0][0].trace, 2.0 * PI, max_relative = 1e-12);
        }
        assert!(matches!(windowed_l1(&s, 1.2), Err(DiagnosticsError::WindowNotCovered { .. })));
    }

    #[test]
    fn windowed_zero_state() {
        let model = one_species();
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        let mut s = DiagnosticsSeries::new(&model);
        for k in 0..=20 {
            s.record(&m, &state_of(&m, k as f64 * 0.1, 0.0, 0.0)).unwrap();
        }
        assert_eq!(windowed_l1(&s, 0.5).unwrap()[0][0], WindowTriple::default());
    }

    #[test]
    fn windowed_exponential_decay_is_second_order() {
        let model = one_species();
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        let lambda = 1.3;
        let exact = PI * ((-lambda * 0.5f64).exp() - (-lambda * 1.5f64).exp()) / lambda;
        let err = |h: f64| {
            let mut s = DiagnosticsSeries::new(&model);
            let n = (2.0 / h).round() as usize;
            for k in 0..=n {
                let t = k as f64 * h;
                s.record(&m, &state_of(&m, t, (-lambda * t).exp(), 0.0)).unwrap();
            }
            (windowed_l1(&s, 0.5).unwrap()[0][0].bulk - exact).abs()
        };
        let (e1, e2) = (err(0.1), err(0.05));
        assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
    }

    #[test]
    fn functionals_of_zero_state_vanish() {
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        for (_, model) in builtins::all() {
            let s = State {
                t: 0.0,
                bulk: vec![Field::constant(&m, Compartment::Bulk, 0.0); model.k()],
                surface: vec![Field::constant(&m, Compartment::Surface, 0.0); model.m()],
            };
            assert!(mass_functionals(&model, &m, &s).unwrap().iter().all(|(_, v)| *v == 0.0));
        }
    }

    #[test]
    fn functional_weights() {
        let model = one_species();
        let m = build_disk_mesh(8, 16, 1.0).unwrap();
        let f = mass_functionals(&model, &m, &state_of(&m, 0.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(f[0].1, PI + 2.0 * 2.0 * PI, max_relative = 1e-13);
    }

    #[test]
    fn undeclared_species_in_functional() {
        let mut model = one_species();
        model.functionals[0].terms.push((1.0, "w".into()));
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        let err = mass_functionals(&model, &m, &state_of(&m, 0.0, 1.0, 1.0)).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn csv_header_and_rows() {
        let model = one_species();
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        let mut s = DiagnosticsSeries::new(&model);
        s.record(&m, &state_of(&m, 0.0, 1.0, 1.0)).unwrap();
        s.record(&m, &state_of(&m, 0.5, 1.0, 1.0)).unwrap();
        s.record(&m, &state_of(&m, 0.5, 9.0, 1.0)).unwrap();
        let mut buf = vec![];
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("t,u.sup,u.l1,u.l2,u.int,u.min,u.trace_l1,v.sup"));
        assert!(lines[0].ends_with(",M"));
        assert_eq!(lines[1].split(',').count(), lines[0].split(',').count());
        let json = serde_json::to_string(&s.summary()).unwrap();
        assert!(json.contains("\"drift_rate\":0"));
    }
}
