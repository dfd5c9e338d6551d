use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use rhflow::calculus::{
    boundary_geometry, christoffel, grad_norm_sq, hessian, integrate, laplace_beltrami,
    map_pullback, norm_sq_at, scalar_curvature, tensor_norm_sq, trace_at, Bc, Geometry,
};
use rhflow::stencil::Edge;
use rhflow::{Chart, ComponentKind, MapField, MetricField, SymTensorField};

fn max_abs_diff(a: &[f64], b: &[f64], keep: impl Fn(usize) -> bool) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(n, _)| keep(*n))
        .fold(0.0_f64, |m, (_, (x, y))| m.max((x - y).abs()))
}

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

fn cap_factor(r: f64) -> f64 {
    4.0 / ((1.0 + r * r) * (1.0 + r * r))
}

fn cap_factor_dr(r: f64) -> f64 {
    -16.0 * r / (1.0 + r * r).powi(3)
}

#[test]
fn christoffel_vanishes_for_constant_metric() {
    let c = Chart::rectangle(10, 12, 1.0, 1.0).unwrap();
    let g = MetricField::constant(&c, [2.0, 0.3, 1.5]).unwrap();
    let gam = christoffel(&c, &g);
    for k in 0..2 {
        for s in 0..3 {
            assert!(gam.gamma[k][s].iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn christoffel_flat_polar_is_exact() {
    let err = |n: usize| {
        let c = Chart::polar_annulus(n, n, 0.2).unwrap();
        let g = MetricField::conformal(&c, |_, _| 0.0).unwrap();
        let gam = christoffel(&c, &g);
        let mut e = 0.0_f64;
        for p in 0..c.nodes() {
            let (r, _) = c.point(p);
            e = e.max((gam.at(0, 1, 1, p) + r).abs());
            e = e.max((gam.at(1, 0, 1, p) - 1.0 / r).abs());
            e = e.max(gam.at(0, 0, 0, p).abs());
        }
        e
    };
    // r and r² are reproduced exactly by the stencils
    for n in [17, 33] {
        assert!(err(n) < 1e-10);
    }
}

#[test]
fn christoffel_conformal_exponential() {
    let c = Chart::rectangle(41, 41, 1.0, 1.0).unwrap();
    let g = MetricField::conformal(&c, |x, _| x).unwrap();
    let gam = christoffel(&c, &g);
    for p in 0..c.nodes() {
        assert!((gam.at(0, 0, 0, p) - 1.0).abs() < 2e-3);
        assert!((gam.at(0, 1, 1, p) + 1.0).abs() < 2e-3);
        assert!((gam.at(1, 0, 1, p) - 1.0).abs() < 2e-3);
        assert!(gam.at(1, 0, 0, p).abs() < 1e-12);
    }
}

#[test]
fn curvature_of_flat_and_scaled_metrics() {
    let c = Chart::rectangle(12, 12, 1.0, 1.0).unwrap();
    let r = scalar_curvature(&c, &MetricField::identity(&c));
    assert!(r.iter().all(|&v| v == 0.0));

    let p = Chart::polar_annulus(24, 32, 0.05).unwrap();
    let cap = MetricField::round_cap(&p).unwrap();
    let scaled = MetricField::new(&p, cap.tensor().scale(3.0)).unwrap();
    let r0 = scalar_curvature(&p, &cap);
    let r1 = scalar_curvature(&p, &scaled);
    for n in 0..p.nodes() {
        assert!((r1[n] - r0[n] / 3.0).abs() < 1e-12 * r0[n].abs().max(1.0));
    }
}

#[test]
fn cap_curvature_is_two_at_second_order() {
    let err = |n: usize| {
        let c = Chart::polar_annulus(n, 2 * n, 0.05).unwrap();
        let g = MetricField::round_cap(&c).unwrap();
        scalar_curvature(&c, &g).iter().fold(0.0_f64, |m, v| m.max((v - 2.0).abs()))
    };
    let (e1, e2) = (err(33), err(65));
    assert!(e1 < 0.1, "{e1}");
    assert!(order(e1, e2) > 1.6, "{e1} {e2}");
}

#[test]
fn laplacian_of_quadratic_is_exact_in_interior() {
    let c = Chart::rectangle(16, 16, 1.0, 1.0).unwrap();
    let g = MetricField::identity(&c);
    let u = c.sample(|x, y| x * x + y * y);
    let lap = laplace_beltrami(&c, &g, &u, Bc::Free);
    for p in 0..c.nodes() {
        assert!((lap[p] - 4.0).abs() < 1e-8, "node {p}: {}", lap[p]);
    }
}

#[test]
fn laplacian_eigenfunction_on_square() {
    let err = |n: usize| {
        let c = Chart::rectangle(n, n, 1.0, 1.0).unwrap();
        let g = MetricField::identity(&c);
        let u = c.sample(|x, y| (PI * x).cos() * (PI * y).cos());
        let lap = laplace_beltrami(&c, &g, &u, Bc::Neumann);
        let exact: Vec<f64> = u.iter().map(|v| -2.0 * PI * PI * v).collect();
        max_abs_diff(&lap, &exact, |_| true)
    };
    let (e1, e2) = (err(33), err(65));
    assert!(e1 < 0.05, "{e1}");
    assert!(order(e1, e2) > 1.8);
}

#[test]
fn laplacian_constant_coefficient_cylinder() {
    let a = 2.5;
    let period = TAU;
    let c = Chart::cylinder(64, 16, period, 1.0).unwrap();
    let g = MetricField::constant(&c, [a, 0.0, 1.0]).unwrap();
    let k = TAU / period;
    let u = c.sample(|x, _| (k * x).cos());
    let lap = laplace_beltrami(&c, &g, &u, Bc::Neumann);
    // the 3-point stencil has symbol −(2 − 2cos kh)/h²
    let h = c.hx();
    let sym = (2.0 - 2.0 * (k * h).cos()) / (h * h);
    for p in 0..c.nodes() {
        assert!((lap[p] + sym / a * u[p]).abs() < 1e-12);
        assert!((lap[p] + k * k / a * u[p]).abs() < 2e-3);
    }
}

#[test]
fn hessian_examples() {
    let c = Chart::rectangle(12, 12, 1.0, 1.0).unwrap();
    let g = MetricField::identity(&c);
    let h = hessian(&c, &g, &c.sample(|x, _| x * x), Edge::OneSided);
    for p in 0..c.nodes() {
        assert!((h.xx[p] - 2.0).abs() < 1e-9 && h.xy[p].abs() < 1e-9 && h.yy[p].abs() < 1e-9);
    }
    let h = hessian(&c, &g, &c.sample(|x, y| x * y), Edge::OneSided);
    for p in 0..c.nodes() {
        assert!(h.xx[p].abs() < 1e-9 && (h.xy[p] - 1.0).abs() < 1e-9 && h.yy[p].abs() < 1e-9);
    }
}

/// Hessian of `u = r² cos θ + r` for the cap metric from closed-form symbols.
fn cap_hessian_oracle(r: f64, t: f64) -> [f64; 3] {
    let c = cap_factor(r);
    let dc = cap_factor_dr(r);
    let gtt_r = dc * r * r + 2.0 * c * r;
    let g_r_rr = dc / (2.0 * c);
    let g_r_tt = -gtt_r / (2.0 * c);
    let g_t_rt = gtt_r / (2.0 * c * r * r);
    let (ur, ut) = (2.0 * r * t.cos() + 1.0, -r * r * t.sin());
    let (urr, urt, utt) = (2.0 * t.cos(), -2.0 * r * t.sin(), -r * r * t.cos());
    [urr - g_r_rr * ur, urt - g_t_rt * ut, utt - g_r_tt * ur]
}

#[test]
fn hessian_cap_matches_symbolic_oracle() {
    let err = |n: usize| {
        let c = Chart::polar_annulus(n, 2 * n, 0.05).unwrap();
        let g = MetricField::round_cap(&c).unwrap();
        let u = c.sample(|r, t| r * r * t.cos() + r);
        let h = hessian(&c, &g, &u, Edge::OneSided);
        let mut e = 0.0_f64;
        for p in 0..c.nodes() {
            let (r, t) = c.point(p);
            let o = cap_hessian_oracle(r, t);
            let got = h.at(p);
            for k in 0..3 {
                e = e.max((got[k] - o[k]).abs());
            }
        }
        e
    };
    let (e1, e2) = (err(33), err(65));
    assert!(e1 < 0.05, "{e1}");
    assert!(order(e1, e2) > 1.7, "{e1} {e2}");
}

#[test]
fn hessian_trace_equals_laplacian_for_constant_metric() {
    let c = Chart::rectangle(20, 18, 1.0, 1.3).unwrap();
    let g = MetricField::constant(&c, [1.7, 0.4, 0.9]).unwrap();
    let u = c.sample(|x, y| (2.0 * x).sin() * (1.5 * y).cos() + x * y * y);
    let h = hessian(&c, &g, &u, Edge::OneSided);
    let lap = laplace_beltrami(&c, &g, &u, Bc::Free);
    for p in 0..c.nodes() {
        let (i, j) = c.ij(p);
        if c.on_edge(0, i) || c.on_edge(1, j) {
            continue;
        }
        assert!((trace_at(g.inv_at(p), h.at(p)) - lap[p]).abs() < 1e-10);
    }
}

#[test]
fn gradient_norms() {
    let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
    let u = c.sample(|x, _| x);
    let id = MetricField::identity(&c);
    assert!(grad_norm_sq(&c, &id, &u, Edge::OneSided).iter().all(|v| (v - 1.0).abs() < 1e-12));
    let g = MetricField::constant(&c, [3.0, 0.0, 1.0]).unwrap();
    assert!(grad_norm_sq(&c, &g, &u, Edge::OneSided)
        .iter()
        .all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    let k = c.sample(|_, _| 0.7);
    assert!(grad_norm_sq(&c, &g, &k, Edge::OneSided).iter().all(|&v| v == 0.0));
}

#[test]
fn tensor_norm_examples() {
    let c = Chart::rectangle(8, 8, 1.0, 1.0).unwrap();
    let id = MetricField::identity(&c);
    assert!(tensor_norm_sq(&id, id.tensor()).iter().all(|v| (v - 2.0).abs() < 1e-15));
    let g = MetricField::constant(&c, [4.0, 0.0, 1.0]).unwrap();
    let t = SymTensorField::constant(&c, [1.0, 0.0, 0.0]);
    assert!(tensor_norm_sq(&g, &t).iter().all(|v| (v - 1.0 / 16.0).abs() < 1e-15));
}

proptest! {
    #[test]
    fn tensor_norm_decomposes(a in 0.2f64..5.0, b in -0.5f64..0.5, c in 0.2f64..5.0,
                              t0 in -3.0f64..3.0, t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
        prop_assume!(a * c - b * b > 0.05);
        let det = a * c - b * b;
        let inv = [c / det, -b / det, a / det];
        let t = [t0, t1, t2];
        let tr = trace_at(inv, t);
        let traceless = [t0 - tr / 2.0 * a, t1 - tr / 2.0 * b, t2 - tr / 2.0 * c];
        let full = norm_sq_at(inv, t);
        prop_assert!((full - (norm_sq_at(inv, traceless) + tr * tr / 2.0)).abs() <= 1e-9 * (1.0 + full));
        prop_assert!(full + 1e-12 >= tr * tr / 2.0);
    }

    #[test]
    fn constant_metrics_are_flat(a in 0.2f64..5.0, b in -0.5f64..0.5, c in 0.2f64..5.0) {
        prop_assume!(a * c - b * b > 0.05);
        let ch = Chart::rectangle(9, 9, 1.0, 1.0).unwrap();
        let g = MetricField::constant(&ch, [a, b, c]).unwrap();
        prop_assert!(scalar_curvature(&ch, &g).iter().all(|v| v.abs() <= 1e-10));
    }
}

#[test]
fn map_pullback_examples() {
    let c = Chart::cylinder(32, 12, TAU, 1.0).unwrap();
    let a = 1.8;
    let g = MetricField::constant(&c, [a, 0.0, 1.0]).unwrap();
    let phi = MapField::from_fns(&c, &[(ComponentKind::Circle, &|x, _| x)]);
    let mp = map_pullback(&c, &g, &phi, 1.0);
    for p in 0..c.nodes() {
        assert!((mp.energy[p] - 1.0 / a).abs() < 1e-12);
        assert!((mp.pullback.xx[p] - 1.0).abs() < 1e-12);
        assert!(mp.pullback.xy[p].abs() < 1e-12 && mp.pullback.yy[p].abs() < 1e-12);
        assert!(mp.tension[0][p].abs() < 1e-10);
        assert!((trace_at(g.inv_at(p), mp.pullback.at(p)) - mp.energy[p]).abs() < 1e-14);
    }
    let sq = Chart::rectangle(12, 12, 1.0, 1.0).unwrap();
    let id = MetricField::identity(&sq);
    let konst = map_pullback(&sq, &id, &MapField::constant(&sq, 0.3), 2.0);
    assert!(konst.energy.iter().all(|&v| v == 0.0));
    assert!(konst.tension[0].iter().all(|&v| v == 0.0));
    let ident = MapField::from_fns(
        &sq,
        &[(ComponentKind::Linear, &|x, _| x), (ComponentKind::Linear, &|_, y| y)],
    );
    let mp = map_pullback(&sq, &id, &ident, 1.0);
    for p in 0..sq.nodes() {
        let (i, j) = sq.ij(p);
        if !(sq.on_edge(0, i) || sq.on_edge(1, j)) {
            assert!((mp.energy[p] - 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn circle_relabeling_leaves_pullback_unchanged() {
    let c = Chart::cylinder(24, 10, TAU, 1.0).unwrap();
    let g = MetricField::constant(&c, [1.3, 0.1, 0.8]).unwrap();
    let f = |x: f64, y: f64| x + 0.3 * x.sin() * (PI * y).cos();
    let phi = MapField::from_fns(&c, &[(ComponentKind::Circle, &f)]);
    let shifted = MapField::from_fns(&c, &[(ComponentKind::Circle, &|x, y| f(x, y) - TAU)]);
    let a = map_pullback(&c, &g, &phi, 1.0);
    let b = map_pullback(&c, &g, &shifted, 1.0);
    assert!(max_abs_diff(&a.energy, &b.energy, |_| true) < 1e-12);
    assert!(max_abs_diff(&a.tension[0], &b.tension[0], |_| true) < 1e-9);
}

#[test]
fn boundary_geometry_examples() {
    let sq = Chart::rectangle(16, 16, 1.0, 1.0).unwrap();
    let bg = boundary_geometry(&sq, &MetricField::identity(&sq)).unwrap();
    assert!(bg.points.iter().all(|b| b.kg == 0.0));
    assert!((bg.length() - 4.0).abs() < 1e-12);
    for b in &bg.points {
        let mut expect = [0.0; 2];
        expect[b.axis] = b.side;
        assert_eq!(b.normal, expect);
    }

    let torus_like = Chart::cylinder(16, 16, TAU, 1.0).unwrap();
    assert!(boundary_geometry(&torus_like, &MetricField::identity(&torus_like)).is_ok());

    let p = Chart::polar_annulus(33, 64, 0.05).unwrap();
    let flat = MetricField::conformal(&p, |_, _| 0.0).unwrap();
    let bg = boundary_geometry(&p, &flat).unwrap();
    for b in bg.points.iter().filter(|b| b.side > 0.0) {
        assert!((b.kg - 1.0).abs() < 1e-3, "{}", b.kg);
    }

    let err = |n: usize| {
        let p = Chart::polar_annulus(n, 2 * n, 0.05).unwrap();
        let cap = MetricField::round_cap(&p).unwrap();
        let bg = boundary_geometry(&p, &cap).unwrap();
        bg.points.iter().filter(|b| b.side > 0.0).fold(0.0_f64, |m, b| m.max(b.kg.abs()))
    };
    let (e1, e2) = (err(33), err(65));
    assert!(e1 < 1e-2 && order(e1, e2) > 1.8, "{e1} {e2}");
}

#[test]
fn boundary_frame_is_orthonormal() {
    let p = Chart::polar_annulus(16, 24, 0.1).unwrap();
    let g = MetricField::new(
        &p,
        SymTensorField::from_fn(&p, |r, t| [1.0 + 0.2 * t.cos(), 0.1 * r, r * r + 0.5]),
    )
    .unwrap();
    let bg = boundary_geometry(&p, &g).unwrap();
    for b in &bg.points {
        let [e, f, gg] = g.at(b.node);
        let dot = |u: [f64; 2], v: [f64; 2]| e * u[0] * v[0] + f * (u[0] * v[1] + u[1] * v[0]) + gg * u[1] * v[1];
        assert!((dot(b.normal, b.normal) - 1.0).abs() < 1e-12);
        assert!((dot(b.tangent, b.tangent) - 1.0).abs() < 1e-12);
        assert!(dot(b.normal, b.tangent).abs() < 1e-12);
    }
}

#[test]
fn integration_examples() {
    let sq = Chart::rectangle(16, 16, 1.0, 1.0).unwrap();
    let id = MetricField::identity(&sq);
    assert!((integrate(&sq, &id, &vec![1.0; sq.nodes()]) - 1.0).abs() < 1e-14);

    let r_min: f64 = 0.05;
    let p = Chart::polar_annulus(65, 64, r_min).unwrap();
    let cap = MetricField::round_cap(&p).unwrap();
    let exact = TAU * (2.0 / (1.0 + r_min * r_min) - 1.0);
    let area = integrate(&p, &cap, &vec![1.0; p.nodes()]);
    assert!(((area - exact) / exact).abs() < 1e-3, "{area} vs {exact}");

    let bg = boundary_geometry(&p, &cap).unwrap();
    let outer: f64 = bg.points.iter().filter(|b| b.side > 0.0).map(|b| b.weight).sum();
    assert!((outer - TAU).abs() < 1e-12);
}

#[test]
fn divergence_theorem_is_exact_for_neumann_operator() {
    let p = Chart::polar_annulus(20, 32, 0.05).unwrap();
    let g = MetricField::new(
        &p,
        SymTensorField::from_fn(&p, |r, t| {
            let c = cap_factor(r) * (1.0 + 0.1 * t.sin());
            [c, 0.05 * r * t.cos(), c * r * r]
        }),
    )
    .unwrap();
    let geo = Geometry::new(&p, &g);
    let u = p.sample(|r, t| (3.0 * r).sin() * t.cos() + r * r);
    let lap = geo.laplacian(&u);
    let scale = geo.integrate(&lap.iter().map(|v| v.abs()).collect::<Vec<_>>());
    assert!(geo.integrate(&lap).abs() < 1e-13 * scale.max(1.0));
}
