//! Explicit time integration of the three flow systems and the backward
//! solve for the potential.

use crate::calculus::{
    boundary_geometry, co_inner_at, map_pullback_with, neumann_close, scalar_curvature,
    Geometry, LaplaceOp,
};
use crate::chart::{Chart, FlowState, MapField, MetricField, ScalarField, SymTensorField};
use crate::elliptic::solve_harmonic_map;
use crate::error::{Error, Result};
use crate::stencil::{d1, Edge, Target};

/// Fraction of the explicit stability limit used for each substep.
pub const CFL_SAFETY: f64 = 0.5;
/// W-runs stop this many steps before the singular time.
pub const TAU_FLOOR_STEPS: usize = 10;
/// Tolerance of the harmonic-map re-solve in the reharmonize mode.
pub const REHARMONIZE_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowSystem {
    /// Pseudo flow: metric only, map held harmonic.
    Pseudo,
    /// Metric and map flow paired with `F`.
    FFlow,
    /// As `FFlow`, with reverse time `τ` and the `W` potential.
    WFlow,
}

impl FlowSystem {
    pub fn name(self) -> &'static str {
        match self {
            FlowSystem::Pseudo => "ps",
            FlowSystem::FFlow => "q3",
            FlowSystem::WFlow => "p2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiMode {
    HoldPhi,
    Reharmonize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FVariant {
    F,
    W,
}

/// Largest stable explicit step for the metric `g`.
pub fn stable_dt(chart: &Chart, g: &MetricField) -> f64 {
    CFL_SAFETY / LaplaceOp::new(chart, g).max_rate()
}

fn check_dt(chart: &Chart, g: &MetricField, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam(format!("time step must be positive, got {dt}")));
    }
    let bound = stable_dt(chart, g);
    if dt > bound * (1.0 + 1e-8) {
        return Err(Error::CflViolation { dt, bound });
    }
    Ok(())
}

fn to_metric(chart: &Chart, t: SymTensorField) -> Result<MetricField> {
    MetricField::new(chart, t).map_err(|e| match e {
        Error::NotSpd { node, det, .. } => Error::MetricDegenerate { node, det },
        other => other,
    })
}

/// Scalar curvature with `∂R/∂n = 0` imposed at the boundary.
pub fn closed_curvature(chart: &Chart, g: &MetricField) -> ScalarField {
    let mut r = scalar_curvature(chart, g);
    if chart.has_boundary() {
        neumann_close(chart, &mut r);
    }
    r
}

/// Geometry whose curvature is the Neumann-closed one the flows evolve with.
pub fn flow_geometry<'a>(chart: &'a Chart, g: &'a MetricField) -> Geometry<'a> {
    let mut geo = Geometry::new(chart, g);
    geo.r = closed_curvature(chart, g);
    geo
}

/// `∂g/∂t = −2Ric + 2α∇φ⊗∇φ` (with `Ric = (R/2)g`) and, if requested, `∂φ/∂t = τ(φ)`.
fn rates(
    chart: &Chart,
    g: &MetricField,
    phi: &MapField,
    alpha: f64,
    evolve_phi: bool,
) -> (SymTensorField, Option<Vec<Vec<f64>>>) {
    let op = LaplaceOp::new(chart, g);
    let r = closed_curvature(chart, g);
    let pb = map_pullback_with(chart, g, &op, phi, alpha);
    let mut v = SymTensorField::zeros(chart.nodes());
    for p in 0..chart.nodes() {
        let gm = g.at(p);
        let q = pb.pullback.at(p);
        v.set(
            p,
            [
                -r[p] * gm[0] + 2.0 * q[0],
                -r[p] * gm[1] + 2.0 * q[1],
                -r[p] * gm[2] + 2.0 * q[2],
            ],
        );
    }
    (v, evolve_phi.then_some(pb.tension))
}

/// Metric velocity `v = ∂g/∂t` of any of the flows at a state.
pub fn metric_velocity(chart: &Chart, g: &MetricField, phi: &MapField, alpha: f64) -> SymTensorField {
    rates(chart, g, phi, alpha, false).0
}

fn advance(
    chart: &Chart,
    g: &MetricField,
    phi: &MapField,
    alpha: f64,
    dt: f64,
    evolve_phi: bool,
) -> Result<(MetricField, MapField)> {
    let stage = |gs: &SymTensorField, ps: &MapField| -> Result<_> {
        let gm = to_metric(chart, gs.clone())?;
        Ok(rates(chart, &gm, ps, alpha, evolve_phi))
    };
    let offset = |k: &(SymTensorField, Option<Vec<Vec<f64>>>), h: f64| {
        let gs = g.tensor().axpy(h, &k.0);
        let mut ps = phi.clone();
        if let Some(t) = &k.1 {
            for (c, tc) in ps.components.iter_mut().zip(t) {
                c.values.iter_mut().zip(tc).for_each(|(a, b)| *a += h * b);
            }
        }
        (gs, ps)
    };
    let k1 = rates(chart, g, phi, alpha, evolve_phi);
    let (g2, p2) = offset(&k1, 0.5 * dt);
    let k2 = stage(&g2, &p2)?;
    let (g3, p3) = offset(&k2, 0.5 * dt);
    let k3 = stage(&g3, &p3)?;
    let (g4, p4) = offset(&k3, dt);
    let k4 = stage(&g4, &p4)?;

    let w = dt / 6.0;
    let mut gn = g.tensor().clone();
    for (k, c) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
        gn = gn.axpy(w * c, &k.0);
    }
    let mut pn = phi.clone();
    if evolve_phi {
        for (k, c) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
            let t = k.1.as_ref().expect("map rates present");
            for (comp, tc) in pn.components.iter_mut().zip(t) {
                comp.values.iter_mut().zip(tc).for_each(|(a, b)| *a += w * c * b);
            }
        }
    }
    Ok((to_metric(chart, gn)?, pn))
}

/// One RK4 step of the pseudo flow.
pub fn step_pseudo(chart: &Chart, state: &FlowState, dt: f64, mode: PhiMode) -> Result<FlowState> {
    check_dt(chart, &state.g, dt)?;
    let (g, mut phi) = advance(chart, &state.g, &state.phi, state.alpha, dt, false)?;
    if mode == PhiMode::Reharmonize {
        phi = solve_harmonic_map(chart, &g, &phi, REHARMONIZE_TOL)?;
    }
    Ok(FlowState {
        t: state.t + dt,
        tau: state.tau - dt,
        g,
        phi,
        f: state.f.clone(),
        alpha: state.alpha,
    })
}

/// One RK4 step of the metric and map equations of the `F` flow.
/// The potential is carried unchanged; see [`solve_f_backward`].
pub fn step_f_flow(chart: &Chart, state: &FlowState, dt: f64) -> Result<FlowState> {
    check_dt(chart, &state.g, dt)?;
    let (g, phi) = advance(chart, &state.g, &state.phi, state.alpha, dt, true)?;
    Ok(FlowState {
        t: state.t + dt,
        tau: state.tau - dt,
        g,
        phi,
        f: state.f.clone(),
        alpha: state.alpha,
    })
}

/// As [`step_f_flow`] but refuses to push `τ` to zero or below.
pub fn step_w_flow(chart: &Chart, state: &FlowState, dt: f64) -> Result<FlowState> {
    if state.tau - dt <= 0.0 {
        return Err(Error::TauUnderflow { tau: state.tau, dt });
    }
    step_f_flow(chart, state, dt)
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// `max_λ ‖τ(φ)^λ‖_∞`.
    pub max_tension: f64,
    /// `max |k_g − ψ|` over the boundary, `ψ` the initial geodesic curvature.
    pub kg_residual: f64,
    /// Substep length times the largest Laplacian rate.
    pub cfl: f64,
    /// `‖φ_new − φ_old‖_∞ / dt` for the reharmonize mode, else 0.
    pub phi_drift: f64,
    pub substeps: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub chart: Chart,
    pub system: FlowSystem,
    pub dt: f64,
    /// Snapshots at uniform `dt`; `f` is attached for `FFlow` and `WFlow`.
    pub states: Vec<FlowState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Prescribed boundary curvature, sampled at the boundary points.
    pub psi: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &FlowState {
        self.states.last().expect("trajectory has a first state")
    }
}

fn boundary_kg(chart: &Chart, g: &MetricField) -> Vec<f64> {
    boundary_geometry(chart, g)
        .map(|b| b.points.iter().map(|p| p.kg).collect())
        .unwrap_or_default()
}

fn diagnose(
    chart: &Chart,
    state: &FlowState,
    psi: &[f64],
    cfl: f64,
    phi_drift: f64,
    substeps: usize,
) -> StepDiagnostics {
    let op = LaplaceOp::new(chart, &state.g);
    let max_tension = state
        .phi
        .components
        .iter()
        .map(|c| {
            op.apply(&c.values, Target::from(c))
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()))
        })
        .fold(0.0, f64::max);
    let kg = boundary_kg(chart, &state.g);
    let kg_residual = kg
        .iter()
        .zip(psi)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    StepDiagnostics {
        max_tension,
        kg_residual,
        cfl,
        phi_drift,
        substeps,
    }
}

/// Options for [`run_flow`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub mode: PhiMode,
    /// When set, fail with `HypothesisViolation` if `‖τ(φ)‖` or `|k_g − ψ|`
    /// exceeds this tolerance.
    pub strict: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: PhiMode::HoldPhi,
            strict: None,
        }
    }
}

/// Runs `system` from `initial` to `t_end` with snapshots every `dt`.
///
/// Each snapshot interval is split into as many equal substeps as the
/// stability bound requires. W-runs treat `initial.tau` as `T − t₀` and stop
/// at `τ = TAU_FLOOR_STEPS·dt`. For `FFlow` and `WFlow` the potential is then
/// solved backward from `initial.f` placed at the final snapshot.
pub fn run_flow(
    chart: &Chart,
    initial: &FlowState,
    system: FlowSystem,
    t_end: f64,
    dt: f64,
    opts: RunOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= initial.t) {
        return Err(Error::InvalidParam(format!(
            "need dt > 0 and t_end >= t0, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let mut steps = ((t_end - initial.t) / dt).round() as usize;
    if system == FlowSystem::WFlow {
        if !(initial.tau > 0.0) {
            return Err(Error::NonPositiveTau(initial.tau));
        }
        let floor = TAU_FLOOR_STEPS as f64 * dt;
        let max_steps = ((initial.tau - floor) / dt + 1e-9).floor();
        if max_steps < 1.0 {
            return Err(Error::TauUnderflow { tau: initial.tau, dt });
        }
        steps = steps.min(max_steps as usize);
    }
    let psi = boundary_kg(chart, &initial.g);
    let check = |d: &StepDiagnostics| -> Result<()> {
        if let Some(tol) = opts.strict {
            if d.max_tension > tol {
                return Err(Error::HypothesisViolation(format!(
                    "tension {:e} exceeds {tol:e}",
                    d.max_tension
                )));
            }
            if d.kg_residual > tol {
                return Err(Error::HypothesisViolation(format!(
                    "boundary curvature drift {:e} exceeds {tol:e}",
                    d.kg_residual
                )));
            }
        }
        Ok(())
    };

    let d0 = diagnose(chart, initial, &psi, 0.0, 0.0, 0);
    check(&d0)?;
    let mut states = vec![initial.clone()];
    let mut diagnostics = vec![d0];
    for k in 1..=steps {
        let prev = states.last().expect("nonempty");
        // the stable step shrinks as the metric contracts, so it is re-read
        // before every substep and the interval is split evenly in what remains
        let mut s = prev.clone();
        let mut remaining = dt;
        let (mut m, mut cfl) = (0usize, 0.0_f64);
        while remaining > 1e-12 * dt {
            let rate = LaplaceOp::new(chart, &s.g).max_rate();
            let pieces = ((remaining * rate / CFL_SAFETY) * (1.0 - 1e-9)).ceil().max(1.0);
            let h = if pieces <= 1.0 { remaining } else { remaining / pieces };
            s = match system {
                FlowSystem::Pseudo => step_pseudo(chart, &s, h, opts.mode)?,
                FlowSystem::FFlow => step_f_flow(chart, &s, h)?,
                FlowSystem::WFlow => step_w_flow(chart, &s, h)?,
            };
            remaining -= h;
            m += 1;
            cfl = cfl.max(h * rate);
        }
        // keep the snapshot clock free of accumulated rounding
        s.t = initial.t + k as f64 * dt;
        s.tau = initial.tau - k as f64 * dt;
        let drift = if system == FlowSystem::Pseudo && opts.mode == PhiMode::Reharmonize {
            let mut worst = 0.0_f64;
            for (a, b) in s.phi.components.iter().zip(&prev.phi.components) {
                for (x, y) in a.values.iter().zip(&b.values) {
                    worst = worst.max((x - y).abs());
                }
            }
            worst / dt
        } else {
            0.0
        };
        let d = diagnose(chart, &s, &psi, cfl, drift, m);
        check(&d)?;
        states.push(s);
        diagnostics.push(d);
    }
    let mut traj = Trajectory {
        chart: chart.clone(),
        system,
        dt,
        states,
        diagnostics,
        psi,
    };
    let variant = match system {
        FlowSystem::Pseudo => None,
        FlowSystem::FFlow => Some(FVariant::F),
        FlowSystem::WFlow => Some(FVariant::W),
    };
    if let Some(v) = variant {
        let fs = solve_f_backward(&traj, &initial.f, v)?;
        for (s, f) in traj.states.iter_mut().zip(fs) {
            s.f = f;
        }
    }
    Ok(traj)
}

/// Frozen coefficients of the potential equation at one snapshot.
struct Coeffs {
    op: LaplaceOp,
    g: MetricField,
    /// `R − α|∇φ|²`, with the closed curvature.
    source: Vec<f64>,
    tau: f64,
}

impl Coeffs {
    fn new(chart: &Chart, s: &FlowState) -> Self {
        let op = LaplaceOp::new(chart, &s.g);
        let r = closed_curvature(chart, &s.g);
        let pb = map_pullback_with(chart, &s.g, &op, &s.phi, s.alpha);
        let source = (0..chart.nodes()).map(|p| r[p] - s.alpha * pb.energy[p]).collect();
        Coeffs {
            op,
            g: s.g.clone(),
            source,
            tau: s.tau,
        }
    }

    /// `Δf − |∇f|² + R − α|∇φ|²`, the reverse-time rate without the `1/τ` term.
    fn rate(&self, chart: &Chart, f: &[f64]) -> Vec<f64> {
        let lap = self.op.apply(f, Target::Linear);
        let dx = d1(chart, f, 0, Target::Linear, Edge::Reflect);
        let dy = d1(chart, f, 1, Target::Linear, Edge::Reflect);
        (0..f.len())
            .map(|p| {
                let grad = co_inner_at(self.g.inv_at(p), [dx[p], dy[p]], [dx[p], dy[p]]);
                lap[p] - grad + self.source[p]
            })
            .collect()
    }
}

/// Integrates the potential equation
/// `∂f/∂t = −Δf + |∇f|² − R + α|∇φ|² (+ 1/τ for W)`
/// backward from `f_terminal` at the last snapshot.
///
/// Coefficients between snapshots are interpolated linearly in time; the
/// result has one field per snapshot, in trajectory order.
pub fn solve_f_backward(
    traj: &Trajectory,
    f_terminal: &[f64],
    variant: FVariant,
) -> Result<Vec<ScalarField>> {
    let chart = &traj.chart;
    chart.check_len(f_terminal.len())?;
    let n = traj.len();
    let mut out = vec![ScalarField(f_terminal.to_vec()); n];
    if n < 2 {
        return Ok(out);
    }
    let mut later = Coeffs::new(chart, &traj.states[n - 1]);
    let mut f = f_terminal.to_vec();
    for k in (0..n - 1).rev() {
        let earlier = Coeffs::new(chart, &traj.states[k]);
        let span = traj.states[k + 1].t - traj.states[k].t;
        let rate = later.op.max_rate().max(earlier.op.max_rate());
        let m = ((span * rate / CFL_SAFETY) * (1.0 + 1e-12)).ceil().max(1.0) as usize;
        let h = span / m as f64;
        // θ = 0 at the later snapshot, 1 at the earlier one
        let eval = |f: &[f64], theta: f64| -> Result<Vec<f64>> {
            let a = later.rate(chart, f);
            let b = earlier.rate(chart, f);
            let inv_tau = match variant {
                FVariant::F => 0.0,
                FVariant::W => {
                    let tau = later.tau + theta * (earlier.tau - later.tau);
                    if !(tau > 0.0) {
                        return Err(Error::NonPositiveTau(tau));
                    }
                    1.0 / tau
                }
            };
            Ok(a.iter()
                .zip(&b)
                .map(|(x, y)| (1.0 - theta) * x + theta * y - inv_tau)
                .collect())
        };
        for sub in 0..m {
            let t0 = sub as f64 / m as f64;
            let dth = 1.0 / m as f64;
            let shifted = |base: &[f64], k: &[f64], c: f64| -> Vec<f64> {
                base.iter().zip(k).map(|(a, b)| a + c * b).collect()
            };
            let k1 = eval(&f, t0)?;
            let k2 = eval(&shifted(&f, &k1, 0.5 * h), t0 + 0.5 * dth)?;
            let k3 = eval(&shifted(&f, &k2, 0.5 * h), t0 + 0.5 * dth)?;
            let k4 = eval(&shifted(&f, &k3, h), t0 + dth)?;
            for p in 0..f.len() {
                f[p] += h / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
            }
        }
        out[k] = ScalarField(f.clone());
        later = earlier;
    }
    Ok(out)
}
