use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rhflow::calculus::{Geometry, LaplaceOp};
use rhflow::elliptic::{solve_harmonic_map, solve_poisson_neumann, solve_potential_f};
use rhflow::functionals::s_field;
use rhflow::stencil::Target;
use rhflow::{Chart, ComponentKind, MapField, MetricField};

fn bump(r: f64, th: f64) -> f64 {
    let q = (r - 0.55) / 0.4;
    if q.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - q * q).powi(4) * (1.0 + 0.5 * th.cos())
    }
}

fn perturbed_cap(c: &Chart, eps: f64) -> MetricField {
    MetricField::conformal(c, |r, th| (2.0 / (1.0 + r * r)).ln() + eps * bump(r, th)).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Bordered dense solve of `Δu = rhs`, `Σ M u = 0`.
fn dense_oracle(op: &LaplaceOp, rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        let col = op.flux(&e, Target::Linear);
        for (i, v) in col.iter().enumerate() {
            a[(i, k)] = *v;
        }
        e[k] = 0.0;
    }
    let mass = op.mass();
    for k in 0..n {
        a[(n, k)] = mass[k];
        a[(k, n)] = mass[k];
    }
    let mut b = DVector::<f64>::zeros(n + 1);
    for k in 0..n {
        b[k] = mass[k] * rhs[k];
    }
    let x = a.lu().solve(&b).expect("bordered system is regular");
    x.iter().take(n).copied().collect()
}

#[test]
fn eigenfunction_converges_at_second_order() {
    let err = |n: usize| {
        let c = Chart::rectangle(n, n, 1.0, 1.0).unwrap();
        let g = MetricField::identity(&c);
        let exact = c.sample(|x, y| (PI * x).cos() * (PI * y).cos());
        let rhs: Vec<f64> = exact.iter().map(|v| -2.0 * PI * PI * v).collect();
        let (u, rep) = solve_poisson_neumann(&c, &g, &rhs, 1e-11).unwrap();
        assert!(rep.residual <= 1e-11);
        let d: Vec<f64> = u.iter().zip(&exact).map(|(a, b)| a - b).collect();
        max_abs(&d)
    };
    let (e1, e2) = (err(17), err(33));
    assert!(e1 < 1e-2, "{e1}");
    assert!((e1 / e2).log2() > 1.9, "{e1} {e2}");
}

#[test]
fn potential_matches_dense_solve_on_perturbed_cap() {
    let c = Chart::polar_annulus(16, 16, 0.05).unwrap();
    let g = perturbed_cap(&c, 0.1);
    let phi = MapField::constant(&c, 0.0);
    let tol = 1e-11;
    let f = solve_potential_f(&c, &g, &phi, 1.0, tol).unwrap();
    let geo = Geometry::new(&c, &g);
    let (s, s_bar) = s_field(&geo, &phi, 1.0);
    let lap = geo.laplacian(&f);
    let res: Vec<f64> = (0..c.nodes()).map(|p| s[p] + lap[p] - s_bar).collect();
    assert!(max_abs(&res) <= tol, "{}", max_abs(&res));
    assert!(max_abs(&f) > 1e-3, "perturbation should produce a nontrivial f");

    let rhs: Vec<f64> = s.iter().map(|v| s_bar - v).collect();
    let oracle = dense_oracle(&geo.op, &rhs);
    let d: Vec<f64> = f.iter().zip(&oracle).map(|(a, b)| a - b).collect();
    assert!(max_abs(&d) < 1e-8, "{}", max_abs(&d));
}

#[test]
fn potential_vanishes_for_constant_s() {
    let c = Chart::polar_annulus(24, 24, 0.05).unwrap();
    let g = MetricField::round_cap(&c).unwrap();
    let phi = MapField::constant(&c, 1.0);
    let f = solve_potential_f(&c, &g, &phi, 1.0, 1e-10).unwrap();
    // S is 2 only up to discretization error, so f is small rather than zero
    assert!(max_abs(&f) < 1e-2);

    let c = Chart::rectangle(12, 12, 1.0, 1.0).unwrap();
    let g = MetricField::identity(&c);
    let f = solve_potential_f(&c, &g, &MapField::constant(&c, 0.0), 1.0, 1e-10).unwrap();
    assert!(f.iter().all(|&v| v == 0.0));
}

#[test]
fn constant_map_is_already_harmonic() {
    let c = Chart::polar_annulus(12, 16, 0.05).unwrap();
    let g = MetricField::round_cap(&c).unwrap();
    let phi = MapField::constant(&c, 0.7);
    let out = solve_harmonic_map(&c, &g, &phi, 1e-12).unwrap();
    assert_eq!(out, phi);
}

#[test]
fn neumann_harmonic_scalar_is_its_mean() {
    let c = Chart::rectangle(20, 20, 1.0, 1.0).unwrap();
    let g = MetricField::identity(&c);
    let phi = MapField::from_fns(&c, &[(ComponentKind::Linear, &|x, y| x * x + (3.0 * y).sin())]);
    let geo = Geometry::new(&c, &g);
    let mean = geo.integrate(&phi.components[0].values) / geo.area();
    let out = solve_harmonic_map(&c, &g, &phi, 1e-12).unwrap();
    let d: Vec<f64> = out.components[0].values.iter().map(|v| v - mean).collect();
    assert!(max_abs(&d) < 1e-10, "{}", max_abs(&d));
}

#[test]
fn cylinder_circle_map_relaxes_to_linear_angle() {
    let c = Chart::cylinder(48, 24, TAU, 1.0).unwrap();
    let g = MetricField::constant(&c, [1.5, 0.0, 1.0]).unwrap();
    let phi0 = MapField::from_fns(
        &c,
        &[(ComponentKind::Circle, &|x, y| x + 0.3 * x.sin() * (PI * y).cos())],
    );
    let tol = 1e-10;
    let out = solve_harmonic_map(&c, &g, &phi0, tol).unwrap();
    let op = LaplaceOp::new(&c, &g);
    let tension = op.apply(&out.components[0].values, Target::Circle);
    assert!(max_abs(&tension) <= tol, "{}", max_abs(&tension));
    // the result differs from x by a constant
    let lin: Vec<f64> = (0..c.nodes())
        .map(|p| out.components[0].values[p] - c.point(p).0)
        .collect();
    let spread = lin.iter().cloned().fold(f64::MIN, f64::max)
        - lin.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-8, "{spread}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solution_reproduces_rhs(a in -2.0..2.0_f64, b in -2.0..2.0_f64, k in 1usize..3) {
        let c = Chart::rectangle(14, 12, 1.0, 1.3).unwrap();
        let g = MetricField::conformal(&c, |x, y| 0.2 * (x * y).sin()).unwrap();
        let geo = Geometry::new(&c, &g);
        let raw = c.sample(|x, y| a * (k as f64 * PI * x).cos() + b * x * y);
        let mean = geo.integrate(&raw) / geo.area();
        let rhs: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let tol = 1e-9;
        let (u, rep) = solve_poisson_neumann(&c, &g, &rhs, tol).unwrap();
        prop_assert!(rep.residual <= tol);
        let lap = geo.laplacian(&u);
        let mut l2 = 0.0;
        for p in 0..c.nodes() {
            l2 += (lap[p] - rhs[p]).powi(2) * geo.op.mass()[p];
        }
        prop_assert!(l2.sqrt() <= tol);
        prop_assert!(geo.integrate(&u).abs() < 1e-12);
    }

    #[test]
    fn shifting_map_leaves_gradient_unchanged(shift in -10.0..10.0_f64) {
        let c = Chart::rectangle(12, 12, 1.0, 1.0).unwrap();
        let g = MetricField::conformal(&c, |x, y| 0.3 * x * y).unwrap();
        let f = |x: f64, y: f64| (2.0 * x).sin() * y;
        let a = MapField::from_fns(&c, &[(ComponentKind::Linear, &f)]);
        let b = MapField::from_fns(&c, &[(ComponentKind::Linear, &|x, y| f(x, y) + shift)]);
        let sa = solve_harmonic_map(&c, &g, &a, 1e-11).unwrap();
        let sb = solve_harmonic_map(&c, &g, &b, 1e-11).unwrap();
        let va = &sa.components[0].values;
        let vb = &sb.components[0].values;
        for p in 1..c.nodes() {
            let da = va[p] - va[p - 1];
            let db = vb[p] - vb[p - 1];
            prop_assert!((da - db).abs() < 1e-9);
        }
    }
}
