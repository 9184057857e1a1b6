//! Compiled-in example systems.
//!
//! Rate constants and diffusion coefficients are illustrative defaults (all
//! ones, plus `A = 1, B = 2` for the Brusselator and `c_max = 3`). Initial
//! data are small positive constants with a `cos 2θ` perturbation.

use crate::dsl::parse_model;
use crate::model::ModelSpec;

pub const NAMES: [&str; 3] = ["brusselator", "ratz-roger", "min-system"];

pub const BRUSSELATOR: &str = "\
# Brusselator with the activator on the boundary
[species]
u : bulk diff=1
v : surface diff=1

[params]
radius = 1
A = 1
B = 2

[kinetics]
H[u] = 0
F[v] = B - (A + 1) * v + v^2 * u
G[u] = A * v - v^2 * u

[initial]
u = 1 + 0.1 * r^2 * cos(2 * theta)
v = 0.5 + 0.1 * cos(2 * theta)

[functionals]
M_b = u + v
";

/// Signalling model: cytosolic `u` attaches to the membrane as `v2`; `v1`
/// and `v2` interconvert on the membrane. `B_over_M` stands for the ratio
/// of the inner volume measure to the membrane measure.
pub const RATZ_ROGER: &str = "\
[species]
u : bulk diff=1
v1 : surface diff=1
v2 : surface diff=1

[params]
radius = 1
k1 = 1
k2 = 1
k3 = 1
k4 = 1
K5 = 1
g0 = 1
c_max = 3
b6 = 1
bm6 = 1
B_over_M = 1

[kinetics]
H[u] = 0
F[v1] = k1 * v2 * g0 * (1 - K5 * v1 * g0 / (1 + K5 * v1)) + k2 * v2 * K5 * v1 * g0 / (1 + K5 * v1) - k3 * v1 / (v1 + k4)
F[v2] = -k1 * v2 * g0 * (1 - K5 * v1 * g0 / (1 + K5 * v1)) - k2 * v2 * K5 * v1 * g0 / (1 + K5 * v1) + k3 * v1 / (v1 + k4) + b6 * B_over_M * u * pos(c_max - v1 - v2) - bm6 * v2
G[u] = -b6 * B_over_M * u * pos(c_max - v1 - v2) + bm6 * v2

[initial]
u = 1 + 0.1 * r^2 * cos(2 * theta)
v1 = 0.5 + 0.1 * cos(2 * theta)
v2 = 0.5 - 0.1 * cos(2 * theta)

[functionals]
conserved M_r = u + v1 + v2
";

/// Min protein system: u1 = cytosolic MinD-ATP, u2 = cytosolic MinD-ADP,
/// u3 = cytosolic MinE, v1 = membrane MinD-ATP, v2 = membrane MinE:MinD-ATP.
pub const MIN_SYSTEM: &str = "\
[species]
u1 : bulk diff=1
u2 : bulk diff=1
u3 : bulk diff=1
v1 : surface diff=1
v2 : surface diff=1

[params]
radius = 1
k1 = 1
k2 = 1
k3 = 1
k4 = 1
k5 = 1
k6 = 1

[kinetics]
H[u1] = k1 * u2
H[u2] = -k1 * u2
H[u3] = 0
F[v1] = k2 * u1 + k3 * v1 * u1 - k4 * u3 * v1 - k5 * v1 * u3 * v2^2
F[v2] = -k6 * v2 + k4 * u3 * v1 + k5 * v1 * u3 * v2^2
G[u1] = -k2 * u1 - k3 * v1 * u1
G[u2] = k6 * v2
G[u3] = k6 * v2 - k4 * u3 * v1 - k5 * v1 * u3 * v2^2

[initial]
u1 = 1 + 0.1 * r^2 * cos(2 * theta)
u2 = 1
u3 = 1
v1 = 0.5 + 0.1 * cos(2 * theta)
v2 = 0.5

[functionals]
conserved M_D = u1 + u2 + v1 + v2
conserved M_E = u3 + v2
";

pub fn brusselator() -> ModelSpec {
    parse_model(BRUSSELATOR).expect("built-in Brusselator parses")
}

pub fn ratz_roger() -> ModelSpec {
    parse_model(RATZ_ROGER).expect("built-in Rätz–Röger model parses")
}

pub fn min_system() -> ModelSpec {
    parse_model(MIN_SYSTEM).expect("built-in Min system parses")
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "brusselator" => Some(brusselator()),
        "ratz-roger" => Some(ratz_roger()),
        "min-system" => Some(min_system()),
        _ => None,
    }
}

pub fn all() -> Vec<(&'static str, ModelSpec)> {
    NAMES
        .iter()
        .map(|n| (*n, by_name(n).expect("listed built-in")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_model_unchecked, render_model};
    use crate::model::{eval_kinetics, StatePoint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn builtins_round_trip() {
        for (name, m) in all() {
            let again = parse_model_unchecked(&render_model(&m)).unwrap();
            assert_eq!(again, m, "{name}");
        }
    }

    fn random_point(rng: &mut ChaCha8Rng, k: usize, m: usize) -> StatePoint {
        let mut draw = |_| 10f64.powf(rng.gen_range(-3.0..3.0));
        StatePoint::new((0..k).map(&mut draw).collect(), (0..m).map(&mut draw).collect())
    }

    #[test]
    fn ratz_roger_flux_cancels_surface_reactions() {
        let model = ratz_roger();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let p = random_point(&mut rng, 1, 2);
            let k = eval_kinetics(&model, &p).unwrap();
            let scale = k.g[0].abs() + k.f[0].abs() + k.f[1].abs();
            assert!((k.g[0] + k.f[0] + k.f[1]).abs() <= 1e-12 * scale.max(1.0), "{p:?}");
            assert_eq!(k.h[0], 0.0);
        }
    }

    #[test]
    fn min_system_pairwise_cancellations() {
        let model = min_system();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p = random_point(&mut rng, 3, 2);
            let k = eval_kinetics(&model, &p).unwrap();
            let tol = |x: f64| 1e-12 * x.max(1.0);
            assert_eq!(k.h[0] + k.h[1], 0.0);
            let s = k.g[0] + k.g[1] + k.f[0] + k.f[1];
            let mag = k.g[0].abs() + k.g[1].abs() + k.f[0].abs() + k.f[1].abs();
            assert!(s.abs() <= tol(mag), "{p:?}: {s}");
            let e = k.g[2] + k.f[1];
            assert!(e.abs() <= tol(k.g[2].abs() + k.f[1].abs()), "{p:?}: {e}");
        }
    }

    /// Zeroing a component never makes its own rate negative.
    #[test]
    fn quasi_positivity_on_faces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (name, model) in all() {
            for _ in 0..500 {
                let base = random_point(&mut rng, model.k(), model.m());
                for j in 0..model.k() {
                    let mut p = base.clone();
                    p.zeta[j] = 0.0;
                    let k = eval_kinetics(&model, &p).unwrap();
                    assert!(k.g[j] >= 0.0 && k.h[j] >= 0.0, "{name} bulk {j} at {p:?}");
                }
                for i in 0..model.m() {
                    let mut p = base.clone();
                    p.nu[i] = 0.0;
                    let k = eval_kinetics(&model, &p).unwrap();
                    assert!(k.f[i] >= 0.0, "{name} surface {i} at {p:?}");
                }
            }
        }
    }
}
