use std::f64::consts::TAU;

use rhflow::calculus::Geometry;
use rhflow::flows::{
    closed_curvature, run_flow, solve_f_backward, step_pseudo, FVariant, FlowSystem, PhiMode,
    RunOptions, TAU_FLOOR_STEPS,
};
use rhflow::{Chart, ComponentKind, Error, FlowState, MapField, MetricField, ScalarField};

fn cylinder_state(alpha: f64, f0: f64) -> (Chart, FlowState) {
    let c = Chart::cylinder(24, 10, TAU, 1.0).unwrap();
    let s = FlowState::new(
        MetricField::identity(&c),
        MapField::from_fns(&c, &[(ComponentKind::Circle, &|x, _| x)]),
        ScalarField::constant(&c, f0),
        alpha,
    )
    .unwrap();
    (c, s)
}

fn max_dev(v: &[f64], target: f64) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max((x - target).abs()))
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
}

#[test]
fn cylinder_pseudo_flow_matches_closed_form() {
    let alpha = 1.0;
    let (c, s) = cylinder_state(alpha, 0.0);
    let opts = RunOptions {
        mode: PhiMode::HoldPhi,
        strict: Some(1e-10),
    };
    let traj = run_flow(&c, &s, FlowSystem::Pseudo, 0.5, 1e-3, opts).unwrap();
    assert_eq!(traj.len(), 501);
    let last = traj.last();
    assert!((last.t - 0.5).abs() < 1e-15);
    let g = last.g.tensor();
    assert!(max_dev(&g.xx, 1.0 + 2.0 * alpha * 0.5) < 1e-8);
    assert!(max_dev(&g.xy, 0.0) < 1e-12);
    assert!(max_dev(&g.yy, 1.0) < 1e-12);
    for d in &traj.diagnostics {
        assert!(d.max_tension <= 1e-10 && d.kg_residual <= 1e-10);
    }

    let opts = RunOptions {
        mode: PhiMode::Reharmonize,
        strict: None,
    };
    let other = run_flow(&c, &s, FlowSystem::Pseudo, 0.5, 1e-3, opts).unwrap();
    let a = &other.last().g.tensor().xx;
    let diff = a.iter().zip(&g.xx).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff < 1e-10);
}

#[test]
fn cylinder_f_and_w_flows_share_the_metric() {
    let alpha = 0.7;
    let (c, s) = cylinder_state(alpha, 0.0);
    let s = s.with_tau(1.0);
    let f = run_flow(&c, &s, FlowSystem::FFlow, 0.4, 1e-2, RunOptions::default()).unwrap();
    let w = run_flow(&c, &s, FlowSystem::WFlow, 0.4, 1e-2, RunOptions::default()).unwrap();
    for (a, b) in f.states.iter().zip(&w.states) {
        let exact = 1.0 + 2.0 * alpha * a.t;
        assert!(max_dev(&a.g.tensor().xx, exact) < 1e-10);
        assert!(max_dev(&b.g.tensor().xx, exact) < 1e-10);
        assert!((b.tau - (1.0 - b.t)).abs() < 1e-14);
    }
}

#[test]
fn backward_potential_on_cylinder_is_second_order_in_dt() {
    let alpha = 0.8;
    let t_end = 0.5;
    let f_t = 0.25;
    let err = |dt: f64| {
        let (c, s) = cylinder_state(alpha, f_t);
        let traj = run_flow(&c, &s, FlowSystem::FFlow, t_end, dt, RunOptions::default()).unwrap();
        let a = |t: f64| 1.0 + 2.0 * alpha * t;
        traj.states
            .iter()
            .map(|st| max_dev(&st.f, f_t - 0.5 * (a(t_end) / a(st.t)).ln()))
            .fold(0.0_f64, f64::max)
    };
    let (e1, e2) = (err(0.05), err(0.025));
    assert!(e1 < 1e-3, "{e1}");
    assert!((e1 / e2).log2() > 1.8, "{e1} {e2}");
}

#[test]
fn static_flat_potentials() {
    let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
    let s = FlowState::new(
        MetricField::identity(&c),
        MapField::constant(&c, 0.0),
        ScalarField::constant(&c, 0.0),
        1.0,
    )
    .unwrap()
    .with_tau(1.0);
    let traj = run_flow(&c, &s, FlowSystem::FFlow, 0.2, 0.01, RunOptions::default()).unwrap();
    assert!(traj.states.iter().all(|st| st.f.iter().all(|&v| v == 0.0)));

    let dt = 0.01;
    let traj = run_flow(&c, &s, FlowSystem::WFlow, 1.0, dt, RunOptions::default()).unwrap();
    let floor = TAU_FLOOR_STEPS as f64 * dt;
    assert!((traj.last().tau - floor).abs() < 1e-12);
    for st in &traj.states {
        let exact = -(st.tau / floor).ln();
        assert!(max_dev(&st.f, exact) < 1e-8, "{} {}", st.tau, st.f[0]);
    }
    let again = solve_f_backward(&traj, &vec![0.0; c.nodes()], FVariant::W).unwrap();
    assert_eq!(again[0], traj.states[0].f);
}

#[test]
fn cap_ricci_flow_is_homothetic() {
    let c = Chart::polar_annulus(25, 24, 0.05).unwrap();
    let g0 = MetricField::round_cap(&c).unwrap();
    let s = FlowState::new(
        g0.clone(),
        MapField::constant(&c, 0.0),
        ScalarField::constant(&c, 0.0),
        1.0,
    )
    .unwrap();
    let t_end = 0.3;
    let traj = run_flow(&c, &s, FlowSystem::FFlow, t_end, 0.05, RunOptions::default()).unwrap();
    let last = traj.last();
    let geo = Geometry::new(&c, &last.g);
    let r = closed_curvature(&c, &last.g);
    let r_bar = geo.integrate(&r) / geo.area();
    let exact = 2.0 / (1.0 - 2.0 * t_end);
    assert!((r_bar - exact).abs() < 2e-2 * exact, "{r_bar} {exact}");
    let ratio: Vec<f64> = (0..c.nodes()).map(|p| last.g.at(p)[0] / g0.at(p)[0]).collect();
    assert!(max_dev(&ratio, 1.0 - 2.0 * t_end) < 1e-2);
    // attached potential: f(t) = ln((1 − 2t)/(1 − 2T)), spatially constant
    for st in &traj.states {
        let exact = ((1.0 - 2.0 * st.t) / (1.0 - 2.0 * t_end)).ln();
        assert!(spread(&st.f) < 2e-2, "{}", spread(&st.f));
        assert!(max_dev(&st.f, exact) < 2e-2);
    }
}

#[test]
fn strict_mode_rejects_non_harmonic_map() {
    let c = Chart::rectangle(10, 10, 1.0, 1.0).unwrap();
    let s = FlowState::new(
        MetricField::identity(&c),
        MapField::from_fns(&c, &[(ComponentKind::Linear, &|x, y| x * x + y)]),
        ScalarField::constant(&c, 0.0),
        1.0,
    )
    .unwrap();
    let opts = RunOptions {
        mode: PhiMode::HoldPhi,
        strict: Some(1e-10),
    };
    let err = run_flow(&c, &s, FlowSystem::Pseudo, 0.01, 1e-3, opts).unwrap_err();
    assert!(matches!(err, Error::HypothesisViolation(_)));
}

#[test]
fn explicit_step_must_respect_cfl() {
    let (c, s) = cylinder_state(1.0, 0.0);
    let err = step_pseudo(&c, &s, 0.1, PhiMode::HoldPhi).unwrap_err();
    assert!(matches!(err, Error::CflViolation { .. }));
}
