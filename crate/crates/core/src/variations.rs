//! First variations of F and W_RH, their finite-difference oracles, and the
//! integral identities used by the entropy monotonicity argument.

use std::f64::consts::PI;

use crate::calculus::{co_inner_at, map_pullback_with, norm_sq_at, trace_at, Geometry, MapPullback};
use crate::chart::{Chart, FlowState, MapField, MetricField, ScalarField, SymTensorField};
use crate::error::{Error, Result};
use crate::flows::{closed_curvature, Trajectory};
use crate::functionals::{f_functional, s_field, w_functional, WVariant, S_FLOOR};
use crate::stencil::{d1, Edge, Jet, Target};

/// Default centered-difference step.
pub const DEFAULT_EPS: f64 = 1e-3;

/// A tangent direction `(δg, δf, δφ, δτ) = (v, h, θ, σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub v: SymTensorField,
    pub h: ScalarField,
    pub theta: MapField,
    pub sigma: f64,
    /// Declared `∂h/∂n = 0`.
    pub h_neumann: bool,
    /// Declared `∂θ/∂n = 0`.
    pub theta_neumann: bool,
}

impl Perturbation {
    /// The zero direction for `state`, declared admissible.
    pub fn zero(state: &FlowState) -> Self {
        Perturbation {
            v: SymTensorField::zeros(state.f.len()),
            h: ScalarField(vec![0.0; state.f.len()]),
            theta: state.phi.zeros_like(),
            sigma: 0.0,
            h_neumann: true,
            theta_neumann: true,
        }
    }

    pub fn admissible(&self) -> bool {
        self.h_neumann && self.theta_neumann
    }

    /// Largest `|∂h/∂n|` and `|∂θ/∂n|` over the boundary, measured with
    /// one-sided differences.
    pub fn normal_data(&self, chart: &Chart, g: &MetricField) -> [f64; 2] {
        let geo = Geometry::new(chart, g);
        let worst = |u: &[f64]| {
            let du = [
                d1(chart, u, 0, Target::Linear, Edge::OneSided),
                d1(chart, u, 1, Target::Linear, Edge::OneSided),
            ];
            geo.boundary.as_ref().map_or(0.0, |b| {
                b.points
                    .iter()
                    .map(|p| p.normal_derivative([du[0][p.node], du[1][p.node]]).abs())
                    .fold(0.0, f64::max)
            })
        };
        let theta = self
            .theta
            .components
            .iter()
            .map(|c| worst(&c.values))
            .fold(0.0, f64::max);
        [worst(&self.h), theta]
    }
}

/// `state + ε·pert`, with `t` kept.
pub fn perturb(chart: &Chart, state: &FlowState, pert: &Perturbation, eps: f64) -> Result<FlowState> {
    chart.check_len(pert.h.len())?;
    chart.check_len(pert.v.len())?;
    if pert.theta.len() != state.phi.len() {
        return Err(Error::ShapeMismatch {
            expected: state.phi.len(),
            got: pert.theta.len(),
        });
    }
    let g = MetricField::new(chart, state.g.tensor().axpy(eps, &pert.v)).map_err(|e| match e {
        Error::NotSpd { node, det, .. } => Error::MetricDegenerate { node, det },
        other => other,
    })?;
    let f = ScalarField(state.f.iter().zip(pert.h.iter()).map(|(a, b)| a + eps * b).collect());
    Ok(FlowState {
        t: state.t,
        tau: state.tau + eps * pert.sigma,
        g,
        phi: state.phi.axpy(eps, &pert.theta),
        f,
        alpha: state.alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Functional {
    F,
    WRh,
    WPerelman,
}

impl Functional {
    pub fn name(self) -> &'static str {
        match self {
            Functional::F => "F",
            Functional::WRh => "W_RH",
            Functional::WPerelman => "W_Perelman",
        }
    }

    pub fn evaluate(self, chart: &Chart, state: &FlowState) -> Result<f64> {
        let geo = Geometry::new(chart, &state.g);
        match self {
            Functional::F => Ok(f_functional(&geo, &state.phi, &state.f, state.alpha)),
            Functional::WRh => w_functional(&geo, &state.phi, &state.f, state.tau, state.alpha, WVariant::Rh),
            Functional::WPerelman => {
                w_functional(&geo, &state.phi, &state.f, state.tau, state.alpha, WVariant::Perelman)
            }
        }
    }
}

/// Centered differences at `ε`, `ε/2`, `ε/4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEstimate {
    pub eps: f64,
    pub at_eps: f64,
    pub at_half: f64,
    pub at_quarter: f64,
    /// `(4·D(ε/2) − D(ε))/3`.
    pub richardson: f64,
    /// Observed order of the `ε`-halving sequence; infinite when the
    /// differences are already at round-off.
    pub order: f64,
}

/// Observed order `log2(|a − b| / |b − c|)` of a halving sequence; infinite
/// when both differences are below `noise`.
pub fn observed_order(a: f64, b: f64, c: f64, noise: f64) -> f64 {
    let (e1, e2) = ((a - b).abs(), (b - c).abs());
    let floor = noise.max(1e-13 * (1.0 + a.abs().max(b.abs()).max(c.abs())));
    if e1 <= floor && e2 <= floor {
        f64::INFINITY
    } else {
        (e1 / e2.max(f64::MIN_POSITIVE)).log2()
    }
}

/// Richardson combination of a coarse and a fine value with error order `p`
/// and refinement ratio 2.
pub fn richardson(coarse: f64, fine: f64, p: i32) -> f64 {
    let k = 2f64.powi(p);
    (k * fine - coarse) / (k - 1.0)
}

pub fn fd_delta(
    functional: Functional,
    chart: &Chart,
    state: &FlowState,
    pert: &Perturbation,
    eps: f64,
) -> Result<FdEstimate> {
    centered_difference_of_sum(
        |e| functional.evaluate(chart, &perturb(chart, state, pert, e)?),
        eps,
        chart.nodes(),
    )
}

/// Centered differences of a one-parameter family `Φ(ε)` at `ε, ε/2, ε/4`.
pub fn centered_difference(phi: impl Fn(f64) -> Result<f64>, eps: f64) -> Result<FdEstimate> {
    centered_difference_of_sum(phi, eps, 1)
}

/// As [`centered_difference`] for a `Φ` that sums `terms` addends, which
/// widens the round-off floor used by the order estimate.
pub fn centered_difference_of_sum(
    phi: impl Fn(f64) -> Result<f64>,
    eps: f64,
    terms: usize,
) -> Result<FdEstimate> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParam(format!("step must be positive, got {eps}")));
    }
    let mut size = 0.0_f64;
    let mut centered = |e: f64| -> Result<f64> {
        let (plus, minus) = (phi(e)?, phi(-e)?);
        size = size.max(plus.abs()).max(minus.abs());
        Ok((plus - minus) / (2.0 * e))
    };
    let (a, b, c) = (centered(eps)?, centered(0.5 * eps)?, centered(0.25 * eps)?);
    // round-off in Φ amplified by the smallest step
    let noise = 256.0 * (terms.max(1) as f64).sqrt() * f64::EPSILON * size / (0.5 * eps);
    Ok(FdEstimate {
        eps,
        at_eps: a,
        at_half: b,
        at_quarter: c,
        richardson: richardson(b, c, 2),
        order: observed_order(a, b, c, noise),
    })
}

/// Analytic first variation with its named addends.
///
/// `terms` sum to `analytic`. `readings` are alternative totals built from the
/// same addends with a differently printed sign, weight or constant.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationReport {
    pub functional: Functional,
    pub terms: Vec<(&'static str, f64)>,
    pub analytic: f64,
    pub readings: Vec<(&'static str, f64)>,
    pub admissible: bool,
    pub fd: Option<FdEstimate>,
}

impl VariationReport {
    fn new(functional: Functional, terms: Vec<(&'static str, f64)>, admissible: bool) -> Self {
        let analytic = terms.iter().map(|t| t.1).sum();
        VariationReport {
            functional,
            terms,
            analytic,
            readings: Vec::new(),
            admissible,
            fd: None,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms
            .iter()
            .chain(&self.readings)
            .find(|t| t.0 == name)
            .map(|t| t.1)
    }

    /// `(|analytic − FD|, |analytic − FD| / (1 + |analytic|))` against the
    /// Richardson value.
    pub fn discrepancy(&self) -> Option<(f64, f64)> {
        self.fd.map(|fd| {
            let d = (self.analytic - fd.richardson).abs();
            (d, d / (1.0 + self.analytic.abs()))
        })
    }

    pub fn with_fd(mut self, fd: FdEstimate) -> Self {
        self.fd = Some(fd);
        self
    }
}

/// `g^{ia}g^{jb}A_ij B_ab`.
#[inline]
fn contract_at(inv: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let [p, q, r] = inv;
    let ma = [p * a[0] + q * a[1], p * a[1] + q * a[2], q * a[0] + r * a[1], q * a[1] + r * a[2]];
    let mb = [p * b[0] + q * b[1], p * b[1] + q * b[2], q * b[0] + r * b[1], q * b[1] + r * b[2]];
    ma[0] * mb[0] + ma[1] * mb[2] + ma[2] * mb[1] + ma[3] * mb[3]
}

fn grad(chart: &Chart, u: &[f64], edge: Edge) -> [Vec<f64>; 2] {
    [
        d1(chart, u, 0, Target::Linear, edge),
        d1(chart, u, 1, Target::Linear, edge),
    ]
}

/// Pointwise pieces shared by both variations.
struct Pieces {
    pb: MapPullback,
    df: [Vec<f64>; 2],
    lap_f: Vec<f64>,
    /// `Ric + ∇²f − α∇φ⊗∇φ` with `Ric = (R/2)g`.
    soliton: SymTensorField,
    /// `Σ_λ θ^λ(τ(φ)^λ − ⟨∇φ^λ,∇f⟩)`.
    theta_tension: Vec<f64>,
    trace_v: Vec<f64>,
}

fn pieces(geo: &Geometry, state: &FlowState, pert: &Perturbation) -> Pieces {
    let chart = geo.chart;
    let f = &state.f;
    let pb = map_pullback_with(chart, geo.g, &geo.op, &state.phi, state.alpha);
    let df = grad(chart, f, Edge::Reflect);
    let lap_f = geo.laplacian(f);
    let hess = geo.hessian(&Jet::new(chart, f, Target::Linear, Edge::Reflect));
    let n = chart.nodes();
    let mut soliton = SymTensorField::zeros(n);
    let mut theta_tension = vec![0.0; n];
    let mut trace_v = vec![0.0; n];
    for p in 0..n {
        let inv = geo.g.inv_at(p);
        let gm = geo.g.at(p);
        let (h, q) = (hess.at(p), pb.pullback.at(p));
        let k = 0.5 * geo.r[p];
        soliton.set(p, [k * gm[0] + h[0] - q[0], k * gm[1] + h[1] - q[1], k * gm[2] + h[2] - q[2]]);
        let grad_f = [df[0][p], df[1][p]];
        for (lam, gphi) in pb.grads.iter().enumerate() {
            let e = pb.tension[lam][p] - co_inner_at(inv, [gphi[0][p], gphi[1][p]], grad_f);
            theta_tension[p] += pert.theta.components[lam].values[p] * e;
        }
        trace_v[p] = trace_at(inv, pert.v.at(p));
    }
    Pieces {
        pb,
        df,
        lap_f,
        soliton,
        theta_tension,
        trace_v,
    }
}

/// The four boundary integrals of the metric and potential variation plus
/// the map flux, each against `e^{−f}`.
fn boundary_terms(geo: &Geometry, state: &FlowState, pert: &Perturbation, pc: &Pieces) -> [f64; 5] {
    if geo.boundary.is_none() {
        return [0.0; 5];
    }
    let chart = geo.chart;
    let f = &state.f;
    let dv = grad(chart, &pc.trace_v, Edge::OneSided);
    let div = geo.divergence(&pert.v);
    let ef = |p: usize| (-f[p]).exp();
    let b1 = -geo.integrate_boundary(|b| b.normal_derivative([dv[0][b.node], dv[1][b.node]]) * ef(b.node));
    let b2 = -geo.integrate_boundary(|b| {
        let p = b.node;
        (pc.trace_v[p] - 2.0 * pert.h[p]) * b.normal_derivative([pc.df[0][p], pc.df[1][p]]) * ef(p)
    });
    let b3 = geo.integrate_boundary(|b| {
        let p = b.node;
        (div[0][p] * b.normal[0] + div[1][p] * b.normal[1]) * ef(p)
    });
    // −∮ g^{jk}∂_k(e^{−f}) v_ij n^i = ∮ e^{−f} v(n, ∇f)
    let b4 = geo.integrate_boundary(|b| {
        let p = b.node;
        let inv = geo.g.inv_at(p);
        let up = [
            inv[0] * pc.df[0][p] + inv[1] * pc.df[1][p],
            inv[1] * pc.df[0][p] + inv[2] * pc.df[1][p],
        ];
        let v = pert.v.at(p);
        let vn = [v[0] * b.normal[0] + v[1] * b.normal[1], v[1] * b.normal[0] + v[2] * b.normal[1]];
        (vn[0] * up[0] + vn[1] * up[1]) * ef(p)
    });
    let b5 = geo.integrate_boundary(|b| {
        let p = b.node;
        let s: f64 = pc
            .pb
            .grads
            .iter()
            .zip(&pert.theta.components)
            .map(|(gphi, th)| b.normal_derivative([gphi[0][p], gphi[1][p]]) * th.values[p])
            .sum();
        s * ef(p)
    });
    [b1, b2, b3, b4, b5]
}

/// `δF` for `F = ∫(R − α|∇φ|² + |∇f|²)e^{−f}dv`.
///
/// Terms: `theta` 2α∫θ(τ(φ) − ⟨∇φ,∇f⟩)e^{−f}; `ricci` −∫v^{ij}(Ric + ∇²f −
/// α∇φ∇φ)_ij e^{−f}; `alpha_trace` −α∫|∇φ|²(V/2 − h)e^{−f}; `trace`
/// ∫(V/2 − h)(2Δf − |∇f|² + R)e^{−f}; then `b1_trace_flux` −∮∂_nV e^{−f},
/// `b2_potential_flux` −∮(V − 2h)∂_nf e^{−f}, `b3_divergence` ∮(div v)(n)e^{−f},
/// `b4_weight_gradient` −∮v(n, ∇e^{−f}) and `b5_map_flux` −2α∮⟨∂_nφ,θ⟩e^{−f}.
/// Here `V = tr_g v`.
pub fn analytic_delta_f(chart: &Chart, state: &FlowState, pert: &Perturbation) -> VariationReport {
    let geo = Geometry::new(chart, &state.g);
    let pc = pieces(&geo, state, pert);
    let alpha = state.alpha;
    let n = chart.nodes();
    let mut theta = vec![0.0; n];
    let mut ricci = vec![0.0; n];
    let mut alpha_trace = vec![0.0; n];
    let mut trace = vec![0.0; n];
    for p in 0..n {
        let inv = geo.g.inv_at(p);
        let w = (-state.f[p]).exp();
        let k = 0.5 * pc.trace_v[p] - pert.h[p];
        let grad_f = co_inner_at(inv, [pc.df[0][p], pc.df[1][p]], [pc.df[0][p], pc.df[1][p]]);
        theta[p] = 2.0 * alpha * pc.theta_tension[p] * w;
        ricci[p] = -contract_at(inv, pert.v.at(p), pc.soliton.at(p)) * w;
        alpha_trace[p] = -alpha * pc.pb.energy[p] * k * w;
        trace[p] = k * (2.0 * pc.lap_f[p] - grad_f + geo.r[p]) * w;
    }
    let [b1, b2, b3, b4, b5] = boundary_terms(&geo, state, pert, &pc);
    let theta_b = -2.0 * alpha * b5;
    let mut rep = VariationReport::new(
        Functional::F,
        vec![
            ("theta", geo.integrate(&theta)),
            ("ricci", geo.integrate(&ricci)),
            ("alpha_trace", geo.integrate(&alpha_trace)),
            ("trace", geo.integrate(&trace)),
            ("b1_trace_flux", b1),
            ("b2_potential_flux", b2),
            ("b3_divergence", b3),
            ("b4_weight_gradient", b4),
            ("b5_map_flux", theta_b),
        ],
        pert.admissible(),
    );
    let alpha_term = rep.get("alpha_trace").unwrap_or(0.0);
    let total = rep.analytic;
    rep.readings = vec![
        // the α|∇φ|²(V/2 − h) addend with the opposite sign
        ("alpha_trace_plus", total - 2.0 * alpha_term),
        // map flux printed as +2∮⟨∂_nφ,θ⟩e^{−f} without α
        ("map_flux_unscaled", total - theta_b + 2.0 * b5),
    ];
    rep
}

/// `δW_RH` at `τ > 0`.
///
/// Terms with `u = (4πτ)^{−1}e^{−f}`: `soliton` ∫(−τv^{ij} + σg^{ij})(Ric + ∇²f −
/// α∇φ∇φ − g/(2τ))_ij u; `trace_c3` ∫τ(V/2 − h − σ/τ)(2Δf − |∇f|² + R −
/// α|∇φ|² + (f − 3)/τ)u; `theta` ∫2τα θ(τ(φ) − ⟨∇φ,∇f⟩)u; the five boundary
/// integrals of δF scaled by (4π)^{−1}; and `sigma_weight_flux`
/// −σ(4πτ)^{−1}∮∂_n e^{−f}.
///
/// Readings: `trace_c2` replaces f − 3 by f − 2; `weight_flux_unscaled` uses
/// +(4πτ)^{−1}∮∂_n e^{−f}; `composed` is (4π)^{−1}δF + (4πτ)^{−1}δ∫(f−2)e^{−f}
/// − σ(4πτ²)^{−1}∫(f−2)e^{−f}, assembled from the building blocks directly.
pub fn analytic_delta_w(chart: &Chart, state: &FlowState, pert: &Perturbation) -> Result<VariationReport> {
    let tau = state.tau;
    if !(tau > 0.0) {
        return Err(Error::NonPositiveTau(tau));
    }
    let geo = Geometry::new(chart, &state.g);
    let pc = pieces(&geo, state, pert);
    let (alpha, sigma) = (state.alpha, pert.sigma);
    let four_pi = 4.0 * PI;
    let n = chart.nodes();
    let mut soliton = vec![0.0; n];
    let mut trace = vec![0.0; n];
    let mut theta = vec![0.0; n];
    let mut shift = vec![0.0; n];
    let mut g_dens = vec![0.0; n];
    let mut dg_dens = vec![0.0; n];
    for p in 0..n {
        let inv = geo.g.inv_at(p);
        let gm = geo.g.at(p);
        let f = state.f[p];
        let u = (-f).exp() / (four_pi * tau);
        let s = pc.soliton.at(p);
        let shifted = [s[0] - 0.5 * gm[0] / tau, s[1] - 0.5 * gm[1] / tau, s[2] - 0.5 * gm[2] / tau];
        soliton[p] = (-tau * contract_at(inv, pert.v.at(p), shifted) + sigma * trace_at(inv, shifted)) * u;
        let k = 0.5 * pc.trace_v[p] - pert.h[p];
        let grad_f = co_inner_at(inv, [pc.df[0][p], pc.df[1][p]], [pc.df[0][p], pc.df[1][p]]);
        let y = 2.0 * pc.lap_f[p] - grad_f + geo.r[p] - alpha * pc.pb.energy[p];
        trace[p] = tau * (k - sigma / tau) * (y + (f - 3.0) / tau) * u;
        shift[p] = (k - sigma / tau) * u;
        theta[p] = 2.0 * tau * alpha * pc.theta_tension[p] * u;
        g_dens[p] = (f - 2.0) * (-f).exp();
        dg_dens[p] = (pert.h[p] + (f - 2.0) * k) * (-f).exp();
    }
    let [b1, b2, b3, b4, b5] = boundary_terms(&geo, state, pert, &pc);
    let df = &pc.df;
    let weight_flux = geo.integrate_boundary(|b| {
        let p = b.node;
        -b.normal_derivative([df[0][p], df[1][p]]) * (-state.f[p]).exp()
    }) / (four_pi * tau);
    let mut rep = VariationReport::new(
        Functional::WRh,
        vec![
            ("soliton", geo.integrate(&soliton)),
            ("trace_c3", geo.integrate(&trace)),
            ("theta", geo.integrate(&theta)),
            ("b1_trace_flux", b1 / four_pi),
            ("b2_potential_flux", b2 / four_pi),
            ("b3_divergence", b3 / four_pi),
            ("b4_weight_gradient", b4 / four_pi),
            ("b5_map_flux", -2.0 * alpha * b5 / four_pi),
            ("sigma_weight_flux", -sigma * weight_flux),
        ],
        pert.admissible(),
    );
    let total = rep.analytic;
    let delta_f = analytic_delta_f(chart, state, pert).analytic;
    let composed = delta_f / four_pi + geo.integrate(&dg_dens) / (four_pi * tau)
        - sigma * geo.integrate(&g_dens) / (four_pi * tau * tau);
    rep.readings = vec![
        ("trace_c2", total + geo.integrate(&shift)),
        ("weight_flux_unscaled", total + (1.0 + sigma) * weight_flux),
        ("map_flux_plus", total + 4.0 * alpha * b5 / four_pi),
        ("composed", composed),
    ];
    Ok(rep)
}

/// Repeated Richardson extrapolation of values on grids with spacing halved
/// at each step, eliminating `h², h³, …` in turn. Returns the final value and
/// the last correction as an error estimate.
pub fn h_extrapolate(values: &[f64]) -> (f64, f64) {
    let mut row = values.to_vec();
    let mut last = 0.0;
    let mut p = 2;
    while row.len() > 1 {
        let next: Vec<f64> = row.windows(2).map(|w| richardson(w[0], w[1], p)).collect();
        last = (next[next.len() - 1] - row[row.len() - 1]).abs();
        row = next;
        p += 1;
    }
    (row[0], last)
}

/// Analytic and finite-difference variations compared after extrapolation
/// in both `ε` and `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedComparison {
    pub functional: Functional,
    pub levels: Vec<usize>,
    /// Per-level analytic reports, each carrying its FD estimate.
    pub reports: Vec<VariationReport>,
    pub analytic: f64,
    pub fd: f64,
    /// Extrapolated totals of each alternative reading.
    pub readings: Vec<(&'static str, f64)>,
    /// Size of the last extrapolation step of the analytic minus FD gap.
    pub estimate: f64,
    /// Worst observed `ε`-halving order across levels.
    pub eps_order: f64,
    /// Observed order of the gap over the first three levels.
    pub h_order: f64,
}

impl RefinedComparison {
    /// `|analytic − FD| / (1 + |analytic|)`.
    pub fn relative(&self) -> f64 {
        (self.analytic - self.fd).abs() / (1.0 + self.analytic.abs())
    }

    /// Relative gap between a named reading and the FD value.
    pub fn reading_relative(&self, name: &str) -> Option<f64> {
        self.readings
            .iter()
            .find(|r| r.0 == name)
            .map(|r| (r.1 - self.fd).abs() / (1.0 + r.1.abs()))
    }
}

/// Runs the analytic and FD variations on each level produced by `build` and
/// extrapolates both to `h → 0`.
pub fn refine_compare(
    functional: Functional,
    levels: &[usize],
    eps: f64,
    build: impl Fn(usize) -> Result<(Chart, FlowState, Perturbation)>,
) -> Result<RefinedComparison> {
    if levels.len() < 2 {
        return Err(Error::InvalidParam("need at least two refinement levels".into()));
    }
    let mut reports = Vec::with_capacity(levels.len());
    for &n in levels {
        let (chart, state, pert) = build(n)?;
        let rep = match functional {
            Functional::F => analytic_delta_f(&chart, &state, &pert),
            _ => analytic_delta_w(&chart, &state, &pert)?,
        };
        let fd = fd_delta(functional, &chart, &state, &pert, eps)?;
        reports.push(rep.with_fd(fd));
    }
    let column = |f: &dyn Fn(&VariationReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let (analytic, _) = h_extrapolate(&column(&|r| r.analytic));
    let fds = column(&|r| r.fd.map_or(f64::NAN, |fd| fd.richardson));
    let (fd, _) = h_extrapolate(&fds);
    let gaps: Vec<f64> = reports.iter().zip(&fds).map(|(r, f)| r.analytic - f).collect();
    let (_, estimate) = h_extrapolate(&gaps);
    let h_order = if gaps.len() >= 3 {
        (gaps[0] / gaps[1]).abs().log2().min((gaps[1] / gaps[2]).abs().log2())
    } else {
        f64::NAN
    };
    let readings = reports[0]
        .readings
        .iter()
        .map(|(name, _)| (*name, h_extrapolate(&column(&|r| r.get(name).unwrap_or(f64::NAN))).0))
        .collect();
    let eps_order = reports
        .iter()
        .filter_map(|r| r.fd.map(|fd| fd.order))
        .fold(f64::INFINITY, f64::min);
    Ok(RefinedComparison {
        functional,
        levels: levels.to_vec(),
        reports,
        analytic,
        fd,
        readings,
        estimate,
        eps_order,
        h_order,
    })
}

/// Addends of the Reilly-type identity for a Neumann function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReillyReport {
    /// `∫2(Δf)²`.
    pub laplacian_sq: f64,
    /// `∫2‖∇²f‖²`.
    pub hessian_sq: f64,
    /// `∫R|∇f|²`.
    pub curvature: f64,
    /// `2∮k_g|∇^⊤f|²`.
    pub boundary: f64,
    /// `∫[2(Δf)² − R|∇f|² − 2‖∇²f‖²] − 2∮k_g|∇^⊤f|²`.
    pub residual: f64,
}

pub fn reilly_residual(chart: &Chart, g: &MetricField, f: &[f64]) -> Result<ReillyReport> {
    chart.check_len(f.len())?;
    let geo = Geometry::new(chart, g);
    let lap = geo.laplacian(f);
    let hess = geo.hessian(&Jet::new(chart, f, Target::Linear, Edge::Reflect));
    let df = grad(chart, f, Edge::Reflect);
    let n = chart.nodes();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut c = vec![0.0; n];
    for p in 0..n {
        let inv = g.inv_at(p);
        a[p] = 2.0 * lap[p] * lap[p];
        b[p] = 2.0 * norm_sq_at(inv, hess.at(p));
        c[p] = geo.r[p] * co_inner_at(inv, [df[0][p], df[1][p]], [df[0][p], df[1][p]]);
    }
    let boundary = 2.0
        * geo.integrate_boundary(|bp| {
            let t = bp.tangential_derivative([df[0][bp.node], df[1][bp.node]]);
            bp.kg * t * t
        });
    let (laplacian_sq, hessian_sq, curvature) = (geo.integrate(&a), geo.integrate(&b), geo.integrate(&c));
    Ok(ReillyReport {
        laplacian_sq,
        hessian_sq,
        curvature,
        boundary,
        residual: laplacian_sq - curvature - hessian_sq - boundary,
    })
}

/// Residual of `∫[S|∇f|² + 2⟨∇f,∇Δf⟩ + S|∇log S|²] = ∫S|∇f − ∇log S|²`.
///
/// The middle addend is integrated by parts to `−2∫(Δf)²` with the boundary
/// flux dropped, so the residual measures `−2∮∂_nf Δf` plus discretization
/// error. The right side is evaluated pointwise with `Δf = S̄ − S` folded in
/// through `S`; gradients are one-sided so broken Neumann data is seen.
pub fn ibp_residual(chart: &Chart, g: &MetricField, f: &[f64], s: &[f64]) -> Result<f64> {
    chart.check_len(f.len())?;
    chart.check_len(s.len())?;
    if let Some(p) = s.iter().position(|&v| !(v >= S_FLOOR)) {
        let (i, j) = chart.ij(p);
        return Err(Error::NonPositiveS { i, j, value: s[p] });
    }
    let geo = Geometry::new(chart, g);
    let lap = geo.laplacian(f);
    let df = grad(chart, f, Edge::OneSided);
    let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let dl = grad(chart, &log_s, Edge::OneSided);
    let n = chart.nodes();
    let mut lhs = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for p in 0..n {
        let inv = g.inv_at(p);
        let a = [df[0][p], df[1][p]];
        let b = [dl[0][p], dl[1][p]];
        let d = [a[0] - b[0], a[1] - b[1]];
        lhs[p] = s[p] * co_inner_at(inv, a, a) - 2.0 * lap[p] * lap[p] + s[p] * co_inner_at(inv, b, b);
        rhs[p] = s[p] * co_inner_at(inv, d, d);
    }
    Ok(geo.integrate(&lhs) - geo.integrate(&rhs))
}

/// Max-norm of `∂S/∂t − [ΔS + 2‖Sc‖² + 2α‖τ(φ)‖²]` at interior snapshots,
/// with the time derivative taken by centered differences.
pub fn s_evolution_residual(traj: &Trajectory) -> Result<Vec<f64>> {
    let states = &traj.states;
    if states.len() < 3 {
        return Err(Error::InvalidParam("need at least 3 snapshots".into()));
    }
    let chart = &traj.chart;
    let fields: Vec<Vec<f64>> = states
        .iter()
        .map(|st| {
            let geo = Geometry::new(chart, &st.g);
            let r = closed_curvature(chart, &st.g);
            let pb = map_pullback_with(chart, &st.g, &geo.op, &st.phi, st.alpha);
            (0..chart.nodes()).map(|p| r[p] - st.alpha * pb.energy[p]).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(states.len() - 2);
    for k in 1..states.len() - 1 {
        let st = &states[k];
        let dt = states[k + 1].t - states[k - 1].t;
        let geo = Geometry::new(chart, &st.g);
        let s = &fields[k];
        let lap = geo.laplacian(s);
        let pb = map_pullback_with(chart, &st.g, &geo.op, &st.phi, st.alpha);
        let r = closed_curvature(chart, &st.g);
        let mut worst = 0.0_f64;
        for p in 0..chart.nodes() {
            let gm = st.g.at(p);
            let q = pb.pullback.at(p);
            let k2 = 0.5 * r[p];
            let sc = [k2 * gm[0] - q[0], k2 * gm[1] - q[1], k2 * gm[2] - q[2]];
            let tension: f64 = pb.tension.iter().map(|t| t[p] * t[p]).sum();
            let rhs = lap[p] + 2.0 * norm_sq_at(st.g.inv_at(p), sc) + 2.0 * st.alpha * tension;
            let dsdt = (fields[k + 1][p] - fields[k - 1][p]) / dt;
            worst = worst.max((dsdt - rhs).abs());
        }
        out.push(worst);
    }
    Ok(out)
}

/// `(S, S̄)` for a state; convenience for identity checks.
pub fn state_s(chart: &Chart, state: &FlowState) -> (ScalarField, f64) {
    let geo = Geometry::new(chart, &state.g);
    s_field(&geo, &state.phi, state.alpha)
}
