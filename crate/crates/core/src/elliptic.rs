//! Neumann Poisson solves: the potential `f` and flat-target harmonic maps.

use crate::calculus::{pairwise_sum, Geometry, LaplaceOp};
use crate::chart::{Chart, MapComponent, MapField, MetricField, ScalarField};
use crate::error::{Error, Result};
use crate::functionals::s_field;
use crate::stencil::Target;

/// Relative size of `∫rhs dv` tolerated before the problem is rejected.
pub const COMPAT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Discrete L² norm of `Δu − rhs`.
    pub residual: f64,
    /// Constant added to enforce `∫u dv = 0`.
    pub gauge: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Preconditioned CG on `K u = b` with `K` the stiffness of `op`.
/// Residuals are measured as `sqrt(Σ r²/M)`, the L² norm of `Δu − rhs`.
fn cg(op: &LaplaceOp, b: &[f64], tol: f64) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let mass = op.mass();
    let norm = |r: &[f64]| -> (f64, f64) {
        let mut l2 = 0.0;
        let mut inf = 0.0_f64;
        for (ri, mi) in r.iter().zip(mass) {
            l2 += ri * ri / mi;
            inf = inf.max((ri / mi).abs());
        }
        (l2.sqrt(), inf)
    };
    let diag = op.stiffness_diagonal();
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        remove_mean(&mut z);
        z
    };
    let apply_k = |u: &[f64]| -> Vec<f64> {
        op.flux(u, Target::Linear).into_iter().map(|v| -v).collect()
    };

    let mut u = vec![0.0; n];
    let mut r = b.to_vec();
    remove_mean(&mut r);
    let (mut l2, mut inf) = norm(&r);
    if l2 <= tol && inf <= tol {
        return Ok((u, 0, l2));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let cap = 50 * n;
    for it in 1..=cap {
        let kp = apply_k(&p);
        let pkp = dot(&p, &kp);
        if pkp <= 0.0 {
            break;
        }
        let a = rz / pkp;
        for k in 0..n {
            u[k] += a * p[k];
            r[k] -= a * kp[k];
        }
        remove_mean(&mut r);
        (l2, inf) = norm(&r);
        if l2 <= tol && inf <= tol {
            return Ok((u, it, l2));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::NoConvergence {
        iterations: cap,
        residual: l2,
    })
}

fn gauge_shift(mass: &[f64], u: &mut [f64]) -> f64 {
    let total: Vec<f64> = u.iter().zip(mass).map(|(a, m)| a * m).collect();
    let c = -pairwise_sum(&total) / pairwise_sum(mass);
    u.iter_mut().for_each(|x| *x += c);
    c
}

fn solve_with(op: &LaplaceOp, rhs: &[f64], tol: f64) -> Result<(ScalarField, SolveReport)> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParam(format!("tolerance must be positive, got {tol}")));
    }
    let mass = op.mass();
    let weighted: Vec<f64> = rhs.iter().zip(mass).map(|(a, m)| a * m).collect();
    let integral = pairwise_sum(&weighted);
    let abs: Vec<f64> = weighted.iter().map(|v| v.abs()).collect();
    let scale = pairwise_sum(&abs);
    if integral.abs() > COMPAT_TOL * scale {
        return Err(Error::IncompatibleRhs { integral, scale });
    }
    // b = −M·rhs with the tiny admissible mean removed in the dv sense
    let shift = integral / pairwise_sum(mass);
    let b: Vec<f64> = rhs.iter().zip(mass).map(|(a, m)| -(a - shift) * m).collect();
    let (mut u, iterations, residual) = cg(op, &b, tol)?;
    let gauge = gauge_shift(mass, &mut u);
    Ok((
        ScalarField(u),
        SolveReport {
            iterations,
            residual,
            gauge,
        },
    ))
}

/// Solves `Δu = rhs` with `∂u/∂n = 0` and `∫u dv = 0`.
pub fn solve_poisson_neumann(
    chart: &Chart,
    g: &MetricField,
    rhs: &[f64],
    tol: f64,
) -> Result<(ScalarField, SolveReport)> {
    chart.check_len(rhs.len())?;
    solve_with(&LaplaceOp::new(chart, g), rhs, tol)
}

/// The potential with `S + Δf = S̄`, `∂f/∂n = 0`, `∫f dv = 0`.
pub fn solve_potential_f(
    chart: &Chart,
    g: &MetricField,
    phi: &MapField,
    alpha: f64,
    tol: f64,
) -> Result<ScalarField> {
    solve_potential_f_on(&Geometry::new(chart, g), phi, alpha, tol)
}

/// As [`solve_potential_f`] with the curvature carried by `geo`.
pub fn solve_potential_f_on(geo: &Geometry, phi: &MapField, alpha: f64, tol: f64) -> Result<ScalarField> {
    let op = &geo.op;
    let (s, s_bar) = s_field(geo, phi, alpha);
    let mut rhs: Vec<f64> = s.iter().map(|v| s_bar - v).collect();
    // S̄ is a quadrature mean, so the integral vanishes up to rounding
    let w: Vec<f64> = rhs.iter().zip(op.mass()).map(|(a, m)| a * m).collect();
    let shift = pairwise_sum(&w) / pairwise_sum(op.mass());
    rhs.iter_mut().for_each(|v| *v -= shift);
    Ok(solve_with(op, &rhs, tol)?.0)
}

/// Componentwise Neumann-harmonic representative of `phi_init`.
///
/// Each component is corrected by `ψ` with `Δψ = −Δφ_init`; circle components
/// keep their lift, so winding is preserved.
pub fn solve_harmonic_map(
    chart: &Chart,
    g: &MetricField,
    phi_init: &MapField,
    tol: f64,
) -> Result<MapField> {
    let op = LaplaceOp::new(chart, g);
    let mut components = Vec::with_capacity(phi_init.len());
    for comp in &phi_init.components {
        chart.check_len(comp.values.len())?;
        let tension = op.apply(&comp.values, Target::from(comp));
        let rhs: Vec<f64> = tension.iter().map(|v| -v).collect();
        let (psi, _) = solve_with(&op, &rhs, tol)?;
        let values = comp.values.iter().zip(psi.iter()).map(|(a, b)| a + b).collect();
        components.push(MapComponent {
            kind: comp.kind,
            values,
        });
    }
    Ok(MapField { components })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rhs_gives_zero() {
        let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
        let g = MetricField::identity(&c);
        let (u, rep) = solve_poisson_neumann(&c, &g, &vec![0.0; c.nodes()], 1e-10).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn constant_rhs_is_incompatible() {
        let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
        let g = MetricField::identity(&c);
        let err = solve_poisson_neumann(&c, &g, &vec![1.0; c.nodes()], 1e-10).unwrap_err();
        assert!(matches!(err, Error::IncompatibleRhs { .. }));
    }

    #[test]
    fn rejects_bad_tolerance() {
        let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
        let g = MetricField::identity(&c);
        assert!(solve_poisson_neumann(&c, &g, &vec![0.0; c.nodes()], 0.0).is_err());
    }
}
