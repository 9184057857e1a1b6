//! Sampling checks of quasi-positivity and the growth conditions V1–V3, and
//! the search for a species pairing.
//!
//! A counterexample is a concrete point that can be re-evaluated; the
//! absence of one proves nothing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::Compiled;
use crate::model::{CompiledModel, KineticsKind, ModelError, ModelSpec, Position, StatePoint};

/// Values below this are quasi-positivity violations.
pub const QP_TOLERANCE: f64 = 1e-12;
/// Relative rounding allowance for the growth inequalities.
pub const ROUNDING: f64 = 1e-12;
/// Smallest sampled coordinate.
pub const SAMPLE_FLOOR: f64 = 1e-6;
/// σ grid exponents: σ = 2^e.
pub const SIGMA_EXPONENTS: [i32; 11] = [0, 1, -1, 2, -2, 3, -3, 4, -4, 5, -5];
/// Inner box of the stability test in [`find_pairing`].
pub const PAIRING_SMALL_BOX: f64 = 1e3;
/// Allowed growth of a supremum when the box is enlarged.
pub const STABILITY_RATIO: f64 = 1.1;
/// Largest polynomial degree tried for V3.
pub const MAX_DEGREE: u32 = 8;

#[derive(Debug, Error)]
pub enum HypothesisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid sample box: {0}")]
    Box(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SampleBox {
    pub max_value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for SampleBox {
    fn default() -> Self {
        Self {
            max_value: 1e6,
            n_samples: 20_000,
            seed: 0,
        }
    }
}

impl SampleBox {
    pub fn validate(&self) -> Result<(), HypothesisError> {
        if !(self.max_value > SAMPLE_FLOOR && self.max_value.is_finite()) || self.n_samples == 0 {
            return Err(HypothesisError::Box(format!(
                "need max_value > {SAMPLE_FLOOR:e} and n_samples >= 1 (got {} and {})",
                self.max_value, self.n_samples
            )));
        }
        Ok(())
    }

    /// All-zero, all-max and single-axis points, then `n_samples` points
    /// log-uniform on `[1e-6, max]` per coordinate. The random part of a
    /// smaller `n_samples` is a prefix of a larger one.
    pub fn points(&self, dim: usize) -> Vec<Vec<f64>> {
        let mut pts = Vec::with_capacity(self.n_samples + dim + 2);
        pts.push(vec![0.0; dim]);
        pts.push(vec![self.max_value; dim]);
        for a in 0..dim {
            let mut p = vec![0.0; dim];
            p[a] = self.max_value;
            pts.push(p);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = (SAMPLE_FLOOR.ln(), self.max_value.ln());
        for _ in 0..self.n_samples {
            pts.push((0..dim).map(|_| rng.gen_range(lo..=hi).exp()).collect());
        }
        pts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    NoCounterexample,
    Counterexample,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
    /// Amount by which the inequality is violated (> 0).
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Condition {
    V1,
    V2,
    V3,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionConstants {
    pub sigma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kg: f64,
    pub kf: f64,
    pub l: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub label: String,
    pub status: Status,
    pub witness: Option<Witness>,
    /// Smallest slack (right side minus left side) over all samples.
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<ConditionConstants>,
}

impl Verdict {
    pub fn is_counterexample(&self) -> bool {
        self.status == Status::Counterexample
    }
}

/// Tracks the worst sample of one inequality `lhs ≤ rhs`.
struct Worst {
    margin: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Self {
            margin: f64::INFINITY,
            witness: None,
        }
    }

    fn push(&mut self, point: &[f64], k: usize, slack: f64, tol: f64) {
        if slack < self.margin {
            self.margin = slack;
        }
        let residual = -slack;
        if residual > tol && self.witness.as_ref().is_none_or(|w| residual > w.residual) {
            self.witness = Some(Witness {
                zeta: point[..k].to_vec(),
                nu: point[k..].to_vec(),
                residual,
            });
        }
    }

    fn verdict(self, label: String, constants: Option<ConditionConstants>) -> Verdict {
        Verdict {
            label,
            status: if self.witness.is_some() {
                Status::Counterexample
            } else {
                Status::NoCounterexample
            },
            witness: self.witness,
            margin: self.margin,
            constants,
        }
    }
}

/// Evaluates single kinetics expressions at sample points.
struct Probe<'a> {
    model: &'a ModelSpec,
    compiled: CompiledModel,
    slots: Vec<f64>,
}

impl<'a> Probe<'a> {
    fn new(model: &'a ModelSpec) -> Result<Self, HypothesisError> {
        let compiled = model.compile()?;
        Ok(Self {
            slots: compiled.kinetics_slots(),
            compiled,
            model,
        })
    }

    fn set(&mut self, point: &[f64]) {
        let k = self.compiled.k();
        let pos = Position {
            r: self.model.radius,
            theta: 0.0,
            t: 0.0,
        };
        self.compiled.set_point(&mut self.slots, &point[..k], &point[k..], pos);
    }

    /// `(value, magnitude)` of one expression at the current point.
    fn eval(&self, kind: KineticsKind, idx: usize) -> Result<(f64, f64), HypothesisError> {
        let e: &Compiled = match kind {
            KineticsKind::H => &self.compiled.h[idx],
            KineticsKind::F => &self.compiled.f[idx],
            KineticsKind::G => &self.compiled.g[idx],
        };
        e.eval_with_magnitude(&self.slots).map_err(|err| {
            self.compiled
                .evaluation_error(self.model, kind, idx, &self.slots, err)
                .into()
        })
    }
}

/// One verdict per kinetics component: `F_i` with `ν_i = 0`, then `G_j`
/// and `H_j` with `ζ_j = 0`.
pub fn check_quasi_positivity(model: &ModelSpec, sample: &SampleBox) -> Result<Vec<Verdict>, HypothesisError> {
    sample.validate()?;
    let (k, m) = (model.k(), model.m());
    let mut probe = Probe::new(model)?;
    let points = sample.points(k + m);
    let mut out = Vec::new();
    let mut one = |kind: KineticsKind, idx: usize, zeroed: usize| -> Result<Verdict, HypothesisError> {
        let mut worst = Worst::new();
        let mut p = vec![0.0; k + m];
        for pt in &points {
            p.copy_from_slice(pt);
            p[zeroed] = 0.0;
            probe.set(&p);
            let (v, _) = probe.eval(kind, idx)?;
            worst.push(&p, k, v, QP_TOLERANCE);
        }
        let name = if zeroed < k { &model.bulk[zeroed].name } else { &model.surface[zeroed - k].name };
        Ok(worst.verdict(format!("{} >= 0 at {} = 0", model.kinetics_label(kind, idx), name), None))
    };
    for i in 0..m {
        out.push(one(KineticsKind::F, i, k + i)?);
    }
    for j in 0..k {
        out.push(one(KineticsKind::G, j, j)?);
        out.push(one(KineticsKind::H, j, j)?);
    }
    Ok(out)
}

fn check_indices(model: &ModelSpec, i: usize, j: usize) -> Result<(), HypothesisError> {
    if i >= model.m() || j >= model.k() {
        return Err(HypothesisError::Index(format!(
            "surface index {i} (m = {}), bulk index {j} (k = {})",
            model.m(),
            model.k()
        )));
    }
    Ok(())
}

/// Left side, its rounding magnitude, and the bracket on the right side of
/// one inequality at a point.
#[derive(Clone, Copy, Debug)]
struct Terms {
    lhs: f64,
    mag: f64,
    bracket: f64,
}

/// The inequalities making up condition `which` for pair `(i, j)`, as
/// `(label, constant selector, terms at point)`.
fn inequality_terms(
    probe: &Probe,
    which: Condition,
    i: usize,
    j: usize,
    sigma: f64,
    l: u32,
    point: &[f64],
) -> Result<Vec<Terms>, HypothesisError> {
    let k = probe.compiled.k();
    let zj = point[j];
    let ni = point[k + i];
    Ok(match which {
        Condition::V1 => {
            let (f, mf) = probe.eval(KineticsKind::F, i)?;
            let (g, mg) = probe.eval(KineticsKind::G, j)?;
            let (h, mh) = probe.eval(KineticsKind::H, j)?;
            vec![
                Terms {
                    lhs: sigma * f + g,
                    mag: sigma * mf + mg,
                    bracket: zj + ni + 1.0,
                },
                Terms {
                    lhs: h,
                    mag: mh,
                    bracket: zj + 1.0,
                },
            ]
        }
        Condition::V2 => {
            let (g, mg) = probe.eval(KineticsKind::G, j)?;
            vec![Terms {
                lhs: g,
                mag: mg,
                bracket: zj + ni + 1.0,
            }]
        }
        Condition::V3 => {
            let (f, mf) = probe.eval(KineticsKind::F, i)?;
            let s: f64 = point.iter().map(|x| x.abs()).sum();
            vec![Terms {
                lhs: f,
                mag: mf,
                bracket: (s + 1.0).powi(l as i32),
            }]
        }
    })
}

fn condition_label(model: &ModelSpec, which: Condition, i: usize, j: usize) -> String {
    format!("{which:?} for ({}, {})", model.surface[i].name, model.bulk[j].name)
}

/// Tests one condition with fixed constants on the sample box (0-based
/// indices: `i` surface, `j` bulk).
pub fn check_condition(
    model: &ModelSpec,
    which: Condition,
    i: usize,
    j: usize,
    c: &ConditionConstants,
    sample: &SampleBox,
) -> Result<Verdict, HypothesisError> {
    sample.validate()?;
    check_indices(model, i, j)?;
    let mut probe = Probe::new(model)?;
    let k = model.k();
    let mut worst = Worst::new();
    for pt in sample.points(k + model.m()) {
        probe.set(&pt);
        let terms = inequality_terms(&probe, which, i, j, c.sigma, c.l, &pt)?;
        let consts: &[f64] = match which {
            Condition::V1 => &[c.alpha, c.beta],
            Condition::V2 => &[c.kg],
            Condition::V3 => &[c.kf],
        };
        for (t, &cst) in terms.iter().zip(consts) {
            let rhs = cst * t.bracket;
            worst.push(&pt, k, rhs - t.lhs, ROUNDING * (t.mag + rhs.abs()));
        }
    }
    Ok(worst.verdict(condition_label(model, which, i, j), Some(*c)))
}

/// Outcome of the stability test for one pair `(i, j)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairReport {
    /// 1-based species indices.
    pub i: usize,
    pub j: usize,
    pub surface: String,
    pub bulk: String,
    pub accepted: bool,
    /// Fitted constants, inflated by the stability ratio. Present when
    /// accepted.
    pub constants: Option<ConditionConstants>,
    /// Reasons for rejection.
    pub failures: Vec<String>,
    /// A point of the large box violating the inequality under constants
    /// fitted on the small box.
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness_check: Option<WitnessCheck>,
}

/// What to re-run to confirm a witness: the condition and the constants
/// fitted on the small box.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WitnessCheck {
    pub condition: Condition,
    pub constants: ConditionConstants,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingResult {
    pub found: bool,
    /// `l_i` for each surface species (1-based), if any.
    pub l: Vec<Option<usize>>,
    /// `k_j` for each bulk species (1-based), if any.
    pub k: Vec<Option<usize>>,
    pub pairs: Vec<PairReport>,
}

/// Precomputed kinetics over a point set.
struct Table {
    points: Vec<Vec<f64>>,
    f: Vec<Vec<(f64, f64)>>,
    g: Vec<Vec<(f64, f64)>>,
    h: Vec<Vec<(f64, f64)>>,
}

impl Table {
    fn build(model: &ModelSpec, points: Vec<Vec<f64>>) -> Result<Self, HypothesisError> {
        let mut probe = Probe::new(model)?;
        let (k, m) = (model.k(), model.m());
        let mut t = Table {
            f: vec![Vec::with_capacity(points.len()); m],
            g: vec![Vec::with_capacity(points.len()); k],
            h: vec![Vec::with_capacity(points.len()); k],
            points: vec![],
        };
        for p in &points {
            probe.set(p);
            for i in 0..m {
                t.f[i].push(probe.eval(KineticsKind::F, i)?);
            }
            for j in 0..k {
                t.g[j].push(probe.eval(KineticsKind::G, j)?);
                t.h[j].push(probe.eval(KineticsKind::H, j)?);
            }
        }
        t.points = points;
        Ok(t)
    }
}

/// Supremum of `lhs / bracket` over a range of table rows, ignoring left
/// sides within rounding of zero, clamped below at 0. Returns the arg max.
fn ratio_sup<F>(n: usize, term: F) -> (f64, Option<usize>)
where
    F: Fn(usize) -> (f64, f64, f64),
{
    let mut best = 0.0;
    let mut arg = None;
    for s in 0..n {
        let (lhs, mag, bracket) = term(s);
        if lhs <= ROUNDING * mag {
            continue;
        }
        let r = lhs / bracket;
        if r > best {
            best = r;
            arg = Some(s);
        }
    }
    (best, arg)
}

struct Fit {
    small: f64,
    large: f64,
    arg: Option<usize>,
}

impl Fit {
    fn stable(&self) -> bool {
        self.large <= STABILITY_RATIO * self.small
    }
}

/// Searches, for every pair, constants satisfying V1–V3 whose empirical
/// suprema are stable when the box grows from `1e3` to `sample.max_value`.
/// The large sample set contains the small one.
pub fn find_pairing(model: &ModelSpec, sample: &SampleBox) -> Result<PairingResult, HypothesisError> {
    sample.validate()?;
    let (k, m) = (model.k(), model.m());
    if k == 0 || m == 0 {
        return Err(HypothesisError::Index("pairing needs at least one bulk and one surface species".into()));
    }
    let small_box = SampleBox {
        max_value: PAIRING_SMALL_BOX.min(sample.max_value),
        ..*sample
    };
    let small_pts = small_box.points(k + m);
    let n_small = small_pts.len();
    let mut all = small_pts;
    all.extend(sample.points(k + m));
    let table = &Table::build(model, all)?;
    let n_all = table.points.len();

    let fit = |term: &dyn Fn(usize) -> (f64, f64, f64)| {
        let (small, _) = ratio_sup(n_small, term);
        let (large, arg) = ratio_sup(n_all, term);
        Fit { small, large, arg }
    };

    let mut pairs = Vec::with_capacity(k * m);
    for i in 0..m {
        for j in 0..k {
            let pt = |s: usize| &table.points[s];
            let mut failures = vec![];
            let mut witness = None;
            let mut witness_check = None;
            let mut record_failure =
                |what: String, f: &Fit, cond: Condition, consts: ConditionConstants, lhs: &dyn Fn(usize) -> (f64, f64, f64)| {
                    failures.push(format!(
                        "{what}: supremum {:.6e} on [0, {:e}] grows to {:.6e} on [0, {:e}]",
                        f.small, small_box.max_value, f.large, sample.max_value
                    ));
                    if witness.is_none() {
                        if let Some(s) = f.arg {
                            let (l, _, b) = lhs(s);
                            witness = Some(Witness {
                                zeta: pt(s)[..k].to_vec(),
                                nu: pt(s)[k..].to_vec(),
                                residual: l - STABILITY_RATIO * f.small * b,
                            });
                            witness_check = Some(WitnessCheck { condition: cond, constants: consts });
                        }
                    }
                };

            // H_j ≤ β(ζ_j + 1)
            let h_term = |s: usize| (table.h[j][s].0, table.h[j][s].1, pt(s)[j] + 1.0);
            let beta = fit(&h_term);
            // G_j ≤ K_g(ζ_j + ν_i + 1)
            let g_term = |s: usize| (table.g[j][s].0, table.g[j][s].1, pt(s)[j] + pt(s)[k + i] + 1.0);
            let kg = fit(&g_term);

            // σF_i + G_j ≤ α(ζ_j + ν_i + 1), first stable σ in preference order
            let sig_term = |sigma: f64| {
                move |s: usize| {
                    let (f, mf) = table.f[i][s];
                    let (g, mg) = table.g[j][s];
                    (sigma * f + g, sigma * mf + mg, pt(s)[j] + pt(s)[k + i] + 1.0)
                }
            };
            let mut sigma_fit = None;
            for e in SIGMA_EXPONENTS {
                let sigma = 2f64.powi(e);
                let f = fit(&sig_term(sigma));
                if f.stable() {
                    sigma_fit = Some((sigma, f));
                    break;
                }
            }

            // F_i ≤ K_f(|ζ|₁ + |ν|₁ + 1)^l, smallest stable l
            let f_term = |l: u32| {
                move |s: usize| {
                    let sum: f64 = pt(s).iter().map(|x| x.abs()).sum();
                    (table.f[i][s].0, table.f[i][s].1, (sum + 1.0).powi(l as i32))
                }
            };
            let mut degree_fit = None;
            for l in 1..=MAX_DEGREE {
                let f = fit(&f_term(l));
                if f.stable() {
                    degree_fit = Some((l, f));
                    break;
                }
            }

            let base = ConditionConstants {
                sigma: sigma_fit.as_ref().map_or(1.0, |(s, _)| *s),
                alpha: 0.0,
                beta: 0.0,
                kg: 0.0,
                kf: 0.0,
                l: degree_fit.as_ref().map_or(MAX_DEGREE, |(l, _)| *l),
            };
            if sigma_fit.is_none() {
                let f = fit(&sig_term(1.0));
                let c = ConditionConstants {
                    sigma: 1.0,
                    alpha: STABILITY_RATIO * f.small,
                    beta: STABILITY_RATIO * beta.large,
                    ..base
                };
                record_failure(
                    "V1 (sigma F + G): no sigma in 2^-5..2^5 stable; at sigma = 1".to_string(),
                    &f,
                    Condition::V1,
                    c,
                    &sig_term(1.0),
                );
            }
            if !beta.stable() {
                let c = ConditionConstants {
                    alpha: sigma_fit.as_ref().map_or(0.0, |(_, f)| STABILITY_RATIO * f.large),
                    beta: STABILITY_RATIO * beta.small,
                    ..base
                };
                record_failure("V1 (H)".into(), &beta, Condition::V1, c, &h_term);
            }
            if !kg.stable() {
                let c = ConditionConstants {
                    kg: STABILITY_RATIO * kg.small,
                    ..base
                };
                record_failure("V2".into(), &kg, Condition::V2, c, &g_term);
            }
            if degree_fit.is_none() {
                let f = fit(&f_term(MAX_DEGREE));
                let c = ConditionConstants {
                    kf: STABILITY_RATIO * f.small,
                    l: MAX_DEGREE,
                    ..base
                };
                record_failure(format!("V3: no degree l <= {MAX_DEGREE} stable; at l = {MAX_DEGREE}"), &f, Condition::V3, c, &f_term(MAX_DEGREE));
            }

            let accepted = failures.is_empty();
            let constants = accepted.then(|| ConditionConstants {
                alpha: STABILITY_RATIO * sigma_fit.as_ref().unwrap().1.large,
                beta: STABILITY_RATIO * beta.large,
                kg: STABILITY_RATIO * kg.large,
                kf: STABILITY_RATIO * degree_fit.as_ref().unwrap().1.large,
                ..base
            });
            pairs.push(PairReport {
                i: i + 1,
                j: j + 1,
                surface: model.surface[i].name.clone(),
                bulk: model.bulk[j].name.clone(),
                accepted,
                constants,
                failures,
                witness,
                witness_check,
            });
        }
    }

    let accepted = |i: usize, j: usize| pairs[i * k + j].accepted;
    let l: Vec<Option<usize>> = (0..m).map(|i| (0..k).find(|&j| accepted(i, j)).map(|j| j + 1)).collect();
    let kmap: Vec<Option<usize>> = (0..k).map(|j| (0..m).find(|&i| accepted(i, j)).map(|i| i + 1)).collect();
    let found = l.iter().chain(&kmap).all(Option::is_some);
    Ok(PairingResult {
        found,
        l,
        k: kmap,
        pairs,
    })
}

/// Re-evaluates a witness with [`eval_kinetics`](crate::model::eval_kinetics)
/// and returns the violation amount of `check` at that point (> 0 confirms).
pub fn recheck_witness(
    model: &ModelSpec,
    i: usize,
    j: usize,
    witness: &Witness,
    check: &WitnessCheck,
) -> Result<f64, HypothesisError> {
    check_indices(model, i, j)?;
    let p = StatePoint::new(witness.zeta.clone(), witness.nu.clone());
    let kin = crate::model::eval_kinetics(model, &p)?;
    let c = &check.constants;
    let (zj, ni) = (p.zeta[j], p.nu[i]);
    Ok(match check.condition {
        Condition::V1 => {
            let a = c.sigma * kin.f[i] + kin.g[j] - c.alpha * (zj + ni + 1.0);
            let b = kin.h[j] - c.beta * (zj + 1.0);
            a.max(b)
        }
        Condition::V2 => kin.g[j] - c.kg * (zj + ni + 1.0),
        Condition::V3 => {
            let s: f64 = p.zeta.iter().chain(&p.nu).map(|x| x.abs()).sum();
            kin.f[i] - c.kf * (s + 1.0).powi(c.l as i32)
        }
    })
}
