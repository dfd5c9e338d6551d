use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use rhflow::calculus::Geometry;
use rhflow::elliptic::solve_potential_f;
use rhflow::flows::{run_flow, FlowSystem, RunOptions};
use rhflow::functionals::{f_rate, s_field};
use rhflow::presets::Preset;
use rhflow::variations::*;
use rhflow::{Chart, ComponentKind, FlowState, MapField, MetricField, ScalarField, SymTensorField};

const LEVELS: [usize; 4] = [33, 65, 129, 257];

fn flat_square(n: usize, f0: f64) -> (Chart, FlowState) {
    let c = Chart::rectangle(n, n, 1.0, 1.0).unwrap();
    let s = FlowState::new(
        MetricField::identity(&c),
        MapField::constant(&c, 0.5),
        ScalarField::constant(&c, f0),
        1.0,
    )
    .unwrap()
    .with_tau(1.0);
    (c, s)
}

#[test]
fn potential_direction_is_stationary_on_flat_square() {
    let (c, s) = flat_square(33, 0.0);
    let mut p = Perturbation::zero(&s);
    p.h = ScalarField::from_fn(&c, |x, y| (PI * x).cos() * (2.0 * PI * y).cos());
    let rep = analytic_delta_f(&c, &s, &p);
    assert_eq!(rep.analytic, 0.0);
    let fd = fd_delta(Functional::F, &c, &s, &p, DEFAULT_EPS).unwrap();
    assert!(fd.richardson.abs() < 1e-12, "{fd:?}");
}

#[test]
fn conformal_direction_on_cap_matches_fd() {
    let cmp = refine_compare(Functional::F, &LEVELS, DEFAULT_EPS, |n| {
        let p = Preset::RoundCap;
        let c = p.level_chart(n)?;
        let s = p.state(&c, 1.0)?;
        let mut pert = Perturbation::zero(&s);
        pert.v = s.g.tensor().scale(0.3);
        Ok((c, s, pert))
    })
    .unwrap();
    // R dv is scale invariant in two dimensions
    assert!(cmp.relative() < 1e-6, "{cmp:?}");
    assert!(cmp.fd.abs() < 1e-6);
    assert!(cmp.eps_order >= 1.8, "{cmp:?}");
}

#[test]
fn map_direction_with_harmonic_neumann_map_vanishes() {
    let p = Preset::RoundCap;
    let c = p.level_chart(17).unwrap();
    let s = p.state(&c, 1.3).unwrap();
    let mut pert = Perturbation::zero(&s);
    pert.theta.components[0].values = c.sample(|r, th| r * th.sin());
    let rep = analytic_delta_f(&c, &s, &pert);
    assert_eq!(rep.get("theta"), Some(0.0));
    assert_eq!(rep.get("b5_map_flux"), Some(0.0));
}

#[test]
fn scale_direction_matches_one_variable_derivative() {
    let f0 = 0.3;
    let (c, s) = flat_square(21, f0);
    for tau in [0.5, 1.0, 2.0] {
        let s = s.clone().with_tau(tau);
        let mut p = Perturbation::zero(&s);
        p.sigma = 1.0;
        let rep = analytic_delta_w(&c, &s, &p).unwrap();
        // W(τ) = (f0 − 2)e^{−f0}/(4πτ) on the unit square
        let exact = -(f0 - 2.0) * (-f0).exp() / (4.0 * PI * tau * tau);
        assert!((rep.analytic - exact).abs() < 1e-12, "{} {exact}", rep.analytic);
        assert!((rep.get("composed").unwrap() - exact).abs() < 1e-12);
        let fd = fd_delta(Functional::WRh, &c, &s, &p, DEFAULT_EPS).unwrap();
        assert!((fd.richardson - exact).abs() < 1e-10);
    }
}

#[test]
fn constant_map_makes_w_variation_independent_of_alpha() {
    let p = Preset::PerturbedCap;
    let c = p.level_chart(17).unwrap();
    let base = p.variation_state(&c).unwrap();
    let dirs = p.perturbations(&c, &base);
    for (_, pert) in &dirs {
        let a = analytic_delta_w(&c, &FlowState { alpha: 0.4, ..base.clone() }, pert).unwrap();
        let b = analytic_delta_w(&c, &FlowState { alpha: 2.0, ..base.clone() }, pert).unwrap();
        assert_eq!(a.analytic, b.analytic);
    }
}

#[test]
fn cylinder_readings_are_adjudicated_by_fd() {
    let p = Preset::FlatCylinder;
    for func in [Functional::F, Functional::WRh] {
        let cmp = refine_compare(func, &LEVELS, DEFAULT_EPS, |n| {
            let c = p.level_chart(n)?;
            let s = p.variation_state(&c)?;
            let (_, pert) = p.perturbations(&c, &s).remove(2);
            Ok((c, s, pert))
        })
        .unwrap();
        assert!(cmp.relative() < 1e-6, "{} {cmp:?}", func.name());
        assert!(cmp.eps_order >= 1.8, "{cmp:?}");
        match func {
            Functional::F => assert!(cmp.reading_relative("alpha_trace_plus").unwrap() > 1e-2),
            _ => {
                assert!(cmp.reading_relative("trace_c2").unwrap() > 1e-3);
                assert!(cmp.reading_relative("composed").unwrap() < 1e-6);
            }
        }
    }
}

#[test]
fn centered_difference_probes() {
    let lin = centered_difference(|e| Ok(3.0 + 2.5 * e), 0.1).unwrap();
    assert!((lin.at_eps - 2.5).abs() < 1e-14 && (lin.richardson - 2.5).abs() < 1e-13);
    let sq = centered_difference(|e| Ok(e * e), 0.1).unwrap();
    assert_eq!((sq.at_eps, sq.at_half, sq.richardson), (0.0, 0.0, 0.0));
    let cube = centered_difference(|e| Ok((1.0 + e).powi(3)), 1e-2).unwrap();
    assert!((cube.order - 2.0).abs() < 1e-3);
    assert!((cube.richardson - 3.0).abs() < 1e-12);
}

#[test]
fn flow_direction_reproduces_f_rate() {
    let c = Chart::cylinder(48, 17, TAU, 1.0).unwrap();
    let s = FlowState::new(
        MetricField::identity(&c),
        MapField::from_fns(&c, &[(ComponentKind::Circle, &|x, _| x + 0.2 * x.sin())]),
        ScalarField::from_fn(&c, |x, _| 0.3 * (2.0 * x).cos()),
        0.8,
    )
    .unwrap();
    let geo = Geometry::new(&c, &s.g);
    let rate = f_rate(&geo, &s.phi, &s.f, s.alpha, 0.0);
    // v = −2(Ric + ∇²f − α∇φ∇φ), h = V/2, θ = τ(φ) − ⟨∇φ,∇f⟩
    let mut pert = Perturbation::zero(&s);
    let dx = |u: &[f64]| rhflow::stencil::d1(&c, u, 0, rhflow::stencil::Target::Linear, rhflow::stencil::Edge::Reflect);
    let phi = &s.phi.components[0];
    let dphi = rhflow::stencil::d1(&c, &phi.values, 0, rhflow::stencil::Target::Circle, rhflow::stencil::Edge::Reflect);
    let fx = dx(&s.f);
    let fxx = rhflow::stencil::d2(&c, &s.f, 0, rhflow::stencil::Target::Linear, rhflow::stencil::Edge::Reflect);
    let tension = geo.op.apply(&phi.values, rhflow::stencil::Target::Circle);
    pert.v = SymTensorField::from_fn(&c, |_, _| [0.0; 3]);
    for p in 0..c.nodes() {
        let r = geo.r[p];
        pert.v.set(p, [-2.0 * (0.5 * r + fxx[p] - s.alpha * dphi[p] * dphi[p]), 0.0, -r]);
        pert.h[p] = 0.5 * (pert.v.at(p)[0] + pert.v.at(p)[2]);
        pert.theta.components[0].values[p] = tension[p] - dphi[p] * fx[p];
    }
    let rep = analytic_delta_f(&c, &s, &pert);
    assert!((rep.analytic - rate.total).abs() < 1e-8 * (1.0 + rate.total.abs()), "{} {}", rep.analytic, rate.total);
    for name in ["b1_trace_flux", "b2_potential_flux", "b3_divergence", "b4_weight_gradient", "b5_map_flux"] {
        assert_eq!(rep.get(name), Some(0.0), "{name}");
    }
}

#[test]
fn y_independent_data_on_cylinder_has_no_boundary_terms() {
    let p = Preset::FlatCylinder;
    let c = p.chart(32, 12).unwrap();
    let mut s = p.state(&c, 1.0).unwrap().with_tau(1.0);
    s.f = ScalarField::from_fn(&c, |x, _| 0.2 * x.cos());
    let mut pert = Perturbation::zero(&s);
    pert.v = SymTensorField::from_fn(&c, |x, _| [0.3 + 0.1 * x.sin(), 0.0, 0.2 * x.cos()]);
    pert.h = ScalarField::from_fn(&c, |x, _| (2.0 * x).cos());
    pert.theta.components[0].values = c.sample(|x, _| x.sin());
    pert.sigma = 0.4;
    let f = analytic_delta_f(&c, &s, &pert);
    let w = analytic_delta_w(&c, &s, &pert).unwrap();
    for rep in [&f, &w] {
        for (name, value) in &rep.terms {
            if name.starts_with('b') || name.starts_with("sigma") {
                assert_eq!(*value, 0.0, "{name}");
            }
        }
    }
}

#[test]
fn reilly_on_flat_square_converges_to_closed_form() {
    let run = |n: usize| {
        let c = Chart::rectangle(n, n, 1.0, 1.0).unwrap();
        let f = c.sample(|x, y| (PI * x).cos() * (PI * y).cos());
        reilly_residual(&c, &MetricField::identity(&c), &f).unwrap()
    };
    let target = 2.0 * PI.powi(4);
    let (a, b) = (run(33), run(65));
    assert!(((b.laplacian_sq - target) / target).abs() < 1e-3);
    assert!(((b.hessian_sq - target) / target).abs() < 1e-2);
    assert_eq!((b.curvature, b.boundary), (0.0, 0.0));
    assert!((a.residual / b.residual).abs().log2() > 1.8, "{} {}", a.residual, b.residual);

    let c = Chart::rectangle(20, 20, 1.0, 1.0).unwrap();
    let r = reilly_residual(&c, &MetricField::identity(&c), &vec![0.4; c.nodes()]).unwrap();
    assert_eq!(r.residual, 0.0);
}

fn perturbed_cap_potential(n: usize) -> (Chart, FlowState, ScalarField) {
    let p = Preset::PerturbedCap;
    let c = p.level_chart(n).unwrap();
    let mut s = p.state(&c, 1.0).unwrap();
    s.f = solve_potential_f(&c, &s.g, &s.phi, 1.0, 1e-12).unwrap();
    let geo = Geometry::new(&c, &s.g);
    let (sf, _) = s_field(&geo, &s.phi, 1.0);
    (c, s, sf)
}

#[test]
fn reilly_on_perturbed_cap_is_second_order() {
    let res = |n| {
        let (c, s, _) = perturbed_cap_potential(n);
        let r = reilly_residual(&c, &s.g, &s.f).unwrap();
        (r.residual, r.laplacian_sq)
    };
    let (a, b, c) = (res(17), res(33), res(65));
    assert!(c.0.abs() < 1e-2 * c.1, "{c:?}");
    assert!((a.0 / b.0).abs().log2() > 1.6 && (b.0 / c.0).abs().log2() > 1.6, "{a:?} {b:?} {c:?}");
}

#[test]
fn integration_by_parts_identity() {
    let c = Chart::rectangle(16, 16, 1.0, 1.0).unwrap();
    let g = MetricField::identity(&c);
    assert_eq!(ibp_residual(&c, &g, &vec![0.0; c.nodes()], &vec![2.0; c.nodes()]).unwrap(), 0.0);

    let res = |n| {
        let (c, s, sf) = perturbed_cap_potential(n);
        ibp_residual(&c, &s.g, &s.f, &sf).unwrap()
    };
    let (a, b, d) = (res(33), res(65), res(129));
    assert!((a / b).abs().log2() > 1.6 && (b / d).abs().log2() > 1.6, "{a} {b} {d}");

    // f = x² has ∂f/∂n = 2 on the right edge; S = S̄ − Δf = 2 − 2 + 1
    let c = Chart::rectangle(65, 65, 1.0, 1.0).unwrap();
    let f = c.sample(|x, _| x * x);
    let g = MetricField::identity(&c);
    let lap = Geometry::new(&c, &g).laplacian(&f);
    let s: Vec<f64> = lap.iter().map(|l| 3.0 - l).collect();
    let r = ibp_residual(&c, &g, &f, &s).unwrap();
    assert!(r.abs() > 1.0, "{r}");
}

#[test]
fn s_evolution_on_closed_form_trajectories() {
    let p = Preset::FlatCylinder;
    let c = p.chart(32, 12).unwrap();
    let s = p.state(&c, 1.0).unwrap();
    let traj = run_flow(&c, &s, FlowSystem::Pseudo, 0.1, 2.5e-3, RunOptions::default()).unwrap();
    let res = s_evolution_residual(&traj).unwrap();
    assert_eq!(res.len(), traj.len() - 2);
    // the centered time difference leaves about dt² S'''/6
    assert!(res.iter().all(|&r| r < 1e-4), "{res:?}");

    let p = Preset::FlatSquare;
    let c = p.chart(12, 12).unwrap();
    let s = p.state(&c, 1.0).unwrap();
    let traj = run_flow(&c, &s, FlowSystem::Pseudo, 0.05, 1e-2, RunOptions::default()).unwrap();
    assert!(s_evolution_residual(&traj).unwrap().iter().all(|&r| r == 0.0));

    let p = Preset::RoundCap;
    let c = p.chart(33, 32).unwrap();
    let s = p.state(&c, 1.0).unwrap();
    let traj = run_flow(&c, &s, FlowSystem::Pseudo, 0.1, 1e-2, RunOptions::default()).unwrap();
    let res = s_evolution_residual(&traj).unwrap();
    // dS/dt ≈ 4/(1 − 2t)² ≈ 4 here; the cap curvature carries O(h²) error
    assert!(res.iter().all(|&r| r < 0.1), "{res:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn breakdown_sums_to_total(a in -1.0..1.0_f64, b in -1.0..1.0_f64, sigma in -1.0..1.0_f64) {
        let p = Preset::PerturbedCap;
        let c = p.level_chart(13).unwrap();
        let s = p.variation_state(&c).unwrap();
        let mut pert = Perturbation::zero(&s);
        pert.v = SymTensorField::from_fn(&c, |r, th| [a * th.cos(), b * r, r * r * (a + b * th.sin())]);
        pert.h = ScalarField::from_fn(&c, |r, th| b * ((r - 0.05) * PI / 0.95).cos() + a * th.sin());
        pert.sigma = sigma;
        for rep in [analytic_delta_f(&c, &s, &pert), analytic_delta_w(&c, &s, &pert).unwrap()] {
            let sum: f64 = rep.terms.iter().map(|t| t.1).sum();
            prop_assert!((sum - rep.analytic).abs() <= 1e-12 * (1.0 + rep.analytic.abs()));
        }
    }

    #[test]
    fn perturb_round_trips(eps in -0.05..0.05_f64) {
        let p = Preset::FlatCylinder;
        let c = p.level_chart(9).unwrap();
        let s = p.variation_state(&c).unwrap();
        let (_, pert) = p.perturbations(&c, &s).remove(2);
        let there = perturb(&c, &s, &pert, eps).unwrap();
        let back = perturb(&c, &there, &pert, -eps).unwrap();
        prop_assert!((back.tau - s.tau).abs() < 1e-15);
        for q in 0..c.nodes() {
            prop_assert!((back.f[q] - s.f[q]).abs() < 1e-14);
            for k in 0..3 {
                prop_assert!((back.g.at(q)[k] - s.g.at(q)[k]).abs() < 1e-14);
            }
        }
    }
}
