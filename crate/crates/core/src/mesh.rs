//! Cell-centred polar mesh of the disk and the matching periodic grid on its
//! boundary circle.
//!
//! Bulk cell `(i, q)` covers `r ∈ [i·dr, (i+1)·dr]`, `θ ∈ [q·dθ, (q+1)·dθ]`
//! (zero-based), with centre `r_i = (i + ½)dr`, `θ_q = (q + ½)dθ`. Boundary
//! cell `q` is the arc above bulk column `q`. Bulk values are stored i-major:
//! index `i·Nθ + q`.

use std::f64::consts::PI;
use std::io::{self, Write};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum MeshError {
    #[error("invalid mesh parameters: {0}")]
    Parameters(String),
    #[error("expected a {expected:?} field of length {len}, got {got_compartment:?} of length {got_len}")]
    Mismatch {
        expected: Compartment,
        len: usize,
        got_compartment: Compartment,
        got_len: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compartment {
    Bulk,
    Surface,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    nr: usize,
    ntheta: usize,
    radius: f64,
    dr: f64,
    dtheta: f64,
    r_centers: Vec<f64>,
    theta_centers: Vec<f64>,
    ring_volumes: Vec<f64>,
}

pub fn build_disk_mesh(nr: usize, ntheta: usize, radius: f64) -> Result<Mesh, MeshError> {
    if nr < 2 {
        return Err(MeshError::Parameters(format!("Nr must be at least 2, got {nr}")));
    }
    if ntheta < 4 {
        return Err(MeshError::Parameters(format!(
            "Ntheta must be at least 4, got {ntheta}"
        )));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MeshError::Parameters(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let dr = radius / nr as f64;
    let dtheta = 2.0 * PI / ntheta as f64;
    let r_centers: Vec<f64> = (0..nr).map(|i| (i as f64 + 0.5) * dr).collect();
    let theta_centers = (0..ntheta).map(|q| (q as f64 + 0.5) * dtheta).collect();
    let ring_volumes = r_centers.iter().map(|r| r * dr * dtheta).collect();
    Ok(Mesh {
        nr,
        ntheta,
        radius,
        dr,
        dtheta,
        r_centers,
        theta_centers,
        ring_volumes,
    })
}

impl Mesh {
    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn ntheta(&self) -> usize {
        self.ntheta
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dr(&self) -> f64 {
        self.dr
    }

    pub fn dtheta(&self) -> f64 {
        self.dtheta
    }

    pub fn n_bulk(&self) -> usize {
        self.nr * self.ntheta
    }

    pub fn n_surface(&self) -> usize {
        self.ntheta
    }

    #[inline]
    pub fn index(&self, i: usize, q: usize) -> usize {
        i * self.ntheta + q
    }

    pub fn r_center(&self, i: usize) -> f64 {
        self.r_centers[i]
    }

    pub fn r_centers(&self) -> &[f64] {
        &self.r_centers
    }

    pub fn theta_center(&self, q: usize) -> f64 {
        self.theta_centers[q]
    }

    pub fn theta_centers(&self) -> &[f64] {
        &self.theta_centers
    }

    /// Volume (area) of any cell in ring `i`: `r_i·dr·dθ`.
    #[inline]
    pub fn cell_volume(&self, i: usize) -> f64 {
        self.ring_volumes[i]
    }

    /// Area (length) of the face between rings `i` and `i + 1`, at radius
    /// `(i + 1)·dr`; for `i = Nr − 1` this is the boundary face.
    #[inline]
    pub fn outer_face_area(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dr * self.dtheta
    }

    /// Arclength of one boundary cell, `R·dθ`.
    #[inline]
    pub fn arclength(&self) -> f64 {
        self.radius * self.dtheta
    }

    /// Per-dof quadrature weights of a compartment.
    pub fn weights(&self, compartment: Compartment) -> Vec<f64> {
        match compartment {
            Compartment::Bulk => (0..self.n_bulk())
                .map(|idx| self.cell_volume(idx / self.ntheta))
                .collect(),
            Compartment::Surface => vec![self.arclength(); self.ntheta],
        }
    }

    pub fn field_len(&self, compartment: Compartment) -> usize {
        match compartment {
            Compartment::Bulk => self.n_bulk(),
            Compartment::Surface => self.n_surface(),
        }
    }

    pub fn check(&self, field: &Field, compartment: Compartment) -> Result<(), MeshError> {
        let len = self.field_len(compartment);
        if field.compartment != compartment || field.values.len() != len {
            return Err(MeshError::Mismatch {
                expected: compartment,
                len,
                got_compartment: field.compartment,
                got_len: field.values.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub compartment: Compartment,
    pub values: Vec<f64>,
}

impl Field {
    pub fn bulk(values: Vec<f64>) -> Self {
        Self {
            compartment: Compartment::Bulk,
            values,
        }
    }

    pub fn surface(values: Vec<f64>) -> Self {
        Self {
            compartment: Compartment::Surface,
            values,
        }
    }

    pub fn constant(mesh: &Mesh, compartment: Compartment, c: f64) -> Self {
        Self {
            compartment,
            values: vec![c; mesh.field_len(compartment)],
        }
    }

    /// Samples `f(r, θ)` at cell centres; surface cells are sampled at `r = R`.
    pub fn from_fn(mesh: &Mesh, compartment: Compartment, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = match compartment {
            Compartment::Bulk => (0..mesh.nr)
                .flat_map(|i| {
                    let r = mesh.r_centers[i];
                    mesh.theta_centers.iter().map(move |&th| (r, th))
                })
                .map(|(r, th)| f(r, th))
                .collect(),
            Compartment::Surface => mesh.theta_centers.iter().map(|&th| f(mesh.radius, th)).collect(),
        };
        Self {
            compartment,
            values,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `∫_Ω u dx` for bulk fields, `∫_M v dσ` for surface fields.
pub fn integrate(mesh: &Mesh, field: &Field) -> Result<f64, MeshError> {
    mesh.check(field, field.compartment)?;
    Ok(integrate_values(mesh, field.compartment, &field.values))
}

pub(crate) fn integrate_values(mesh: &Mesh, compartment: Compartment, values: &[f64]) -> f64 {
    match compartment {
        Compartment::Bulk => values
            .chunks_exact(mesh.ntheta)
            .enumerate()
            .map(|(i, ring)| ring.iter().sum::<f64>() * mesh.cell_volume(i))
            .sum(),
        Compartment::Surface => values.iter().sum::<f64>() * mesh.arclength(),
    }
}

/// Second-order extrapolation of the outermost two rings to `r = R`, without
/// clamping.
pub fn extrapolate_to_boundary(mesh: &Mesh, bulk: &[f64]) -> Vec<f64> {
    let nt = mesh.ntheta;
    let outer = &bulk[(mesh.nr - 1) * nt..mesh.nr * nt];
    let inner = &bulk[(mesh.nr - 2) * nt..(mesh.nr - 1) * nt];
    outer
        .iter()
        .zip(inner)
        .map(|(o, i)| o + 0.5 * (o - i))
        .collect()
}

/// Boundary trace used by the kinetics: the extrapolated value clamped
/// below at zero.
pub fn trace(mesh: &Mesh, bulk: &Field) -> Result<Field, MeshError> {
    mesh.check(bulk, Compartment::Bulk)?;
    Ok(Field::surface(trace_values(mesh, &bulk.values)))
}

pub(crate) fn trace_values(mesh: &Mesh, bulk: &[f64]) -> Vec<f64> {
    let mut v = extrapolate_to_boundary(mesh, bulk);
    for x in &mut v {
        *x = x.max(0.0);
    }
    v
}

/// Writes a field snapshot: `r,theta,value` rows (bulk, i-major) or
/// `theta,value` rows (surface).
pub fn write_field_csv<W: Write>(mesh: &Mesh, field: &Field, mut out: W) -> io::Result<()> {
    match field.compartment {
        Compartment::Bulk => {
            writeln!(out, "r,theta,value")?;
            for i in 0..mesh.nr {
                for q in 0..mesh.ntheta {
                    writeln!(
                        out,
                        "{},{},{}",
                        mesh.r_centers[i],
                        mesh.theta_centers[q],
                        field.values[mesh.index(i, q)]
                    )?;
                }
            }
        }
        Compartment::Surface => {
            writeln!(out, "theta,value")?;
            for q in 0..mesh.ntheta {
                writeln!(out, "{},{}", mesh.theta_centers[q], field.values[q])?;
            }
        }
    }
    Ok(())
}

/// Rotates a field by `shift` cells in θ (value at `q` moves to `q + shift`).
pub fn rotate(mesh: &Mesh, field: &Field, shift: usize) -> Field {
    let nt = mesh.ntheta;
    let rot = |chunk: &[f64]| {
        let mut out = vec![0.0; nt];
        for (q, v) in chunk.iter().enumerate() {
            out[(q + shift) % nt] = *v;
        }
        out
    };
    let values = match field.compartment {
        Compartment::Bulk => field.values.chunks_exact(nt).flat_map(rot).collect(),
        Compartment::Surface => rot(&field.values),
    };
    Field {
        compartment: field.compartment,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tiny_mesh_volumes() {
        let m = build_disk_mesh(2, 4, 1.0).unwrap();
        // inner ring: r = 0.25, dr = 0.5, dθ = π/2
        assert_relative_eq!(m.cell_volume(0), PI / 16.0, max_relative = 1e-15);
        let total: f64 = m.weights(Compartment::Bulk).iter().sum();
        assert_relative_eq!(total, PI, max_relative = 1e-15);
    }

    #[test]
    fn spacing() {
        let m = build_disk_mesh(4, 8, 2.0).unwrap();
        assert_eq!(m.dr(), 0.5);
        assert_relative_eq!(m.dtheta(), PI / 4.0);
        assert!(m.r_centers().iter().all(|&r| r > 0.0));
    }

    #[test]
    fn parameter_bounds() {
        assert!(build_disk_mesh(1, 8, 1.0).is_err());
        assert!(build_disk_mesh(4, 3, 1.0).is_err());
        assert!(build_disk_mesh(4, 8, 0.0).is_err());
        assert!(build_disk_mesh(4, 8, f64::NAN).is_err());
    }

    #[test]
    fn measures() {
        for (nr, nt, r) in [(2, 4, 1.0), (7, 13, 0.3), (32, 64, 1.0), (5, 200, 4.5)] {
            let m = build_disk_mesh(nr, nt, r).unwrap();
            let one_b = Field::constant(&m, Compartment::Bulk, 1.0);
            let one_s = Field::constant(&m, Compartment::Surface, 1.0);
            assert_relative_eq!(integrate(&m, &one_b).unwrap(), PI * r * r, max_relative = 1e-13);
            assert_relative_eq!(integrate(&m, &one_s).unwrap(), 2.0 * PI * r, max_relative = 1e-13);
        }
    }

    #[test]
    fn odd_field_integrates_to_zero() {
        let m = build_disk_mesh(16, 32, 1.0).unwrap();
        let f = Field::from_fn(&m, Compartment::Bulk, |r, th| r * th.cos());
        assert!(integrate(&m, &f).unwrap().abs() < 1e-15);
    }

    #[test]
    fn mismatched_field_is_rejected() {
        let m = build_disk_mesh(4, 8, 1.0).unwrap();
        let f = Field::surface(vec![0.0; 5]);
        assert!(integrate(&m, &f).is_err());
        assert!(trace(&m, &Field::constant(&m, Compartment::Surface, 1.0)).is_err());
    }

    #[test]
    fn trace_of_constant_and_affine_profiles() {
        let m = build_disk_mesh(8, 16, 1.5).unwrap();
        let c = Field::constant(&m, Compartment::Bulk, 3.25);
        assert!(trace(&m, &c).unwrap().values.iter().all(|&v| v == 3.25));
        let lin = Field::from_fn(&m, Compartment::Bulk, |r, _| r);
        for v in trace(&m, &lin).unwrap().values {
            assert_relative_eq!(v, 1.5, max_relative = 1e-14);
        }
    }

    #[test]
    fn trace_clamps_negative_extrapolation() {
        let m = build_disk_mesh(2, 4, 1.0).unwrap();
        let mut f = Field::constant(&m, Compartment::Bulk, 1.0);
        for q in 0..4 {
            f.values[m.index(1, q)] = 0.0;
        }
        assert!(extrapolate_to_boundary(&m, &f.values).iter().all(|&v| v == -0.5));
        assert!(trace(&m, &f).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snapshot_csv_layout() {
        let m = build_disk_mesh(2, 4, 1.0).unwrap();
        let f = Field::from_fn(&m, Compartment::Bulk, |r, _| r);
        let mut buf = Vec::new();
        write_field_csv(&m, &f, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "r,theta,value");
        assert_eq!(lines.len(), 9);
        assert!(lines[1].starts_with("0.25,"));
        assert!(lines[5].starts_with("0.75,"));
        let s = Field::constant(&m, Compartment::Surface, 2.0);
        let mut buf = Vec::new();
        write_field_csv(&m, &s, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("theta,value\n"));
    }

    proptest! {
        #[test]
        fn rotation_commutes_with_trace_and_integral(
            vals in prop::collection::vec(0.0f64..10.0, 6 * 10),
            shift in 0usize..10,
        ) {
            let m = build_disk_mesh(6, 10, 1.0).unwrap();
            let f = Field::bulk(vals);
            let rotated = rotate(&m, &f, shift);
            prop_assert_eq!(
                trace(&m, &rotated).unwrap(),
                rotate(&m, &trace(&m, &f).unwrap(), shift)
            );
            let a = integrate(&m, &f).unwrap();
            let b = integrate(&m, &rotated).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn integral_is_linear(
            a in prop::collection::vec(-5.0f64..5.0, 4 * 8),
            b in prop::collection::vec(-5.0f64..5.0, 4 * 8),
            s in -3.0f64..3.0,
        ) {
            let m = build_disk_mesh(4, 8, 1.0).unwrap();
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
            let lhs = integrate(&m, &Field::bulk(combo)).unwrap();
            let rhs = integrate(&m, &Field::bulk(a)).unwrap() + s * integrate(&m, &Field::bulk(b)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
