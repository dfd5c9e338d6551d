//! Scalar functionals of a state and the right-hand sides of their rates.

use std::f64::consts::PI;

use crate::calculus::{
    co_inner_at, map_pullback_with, norm_sq_at, trace_at, Geometry, MapPullback,
};
use crate::chart::{MapField, ScalarField, SymTensorField};
use crate::error::{Error, Result};
use crate::stencil::{d1, Edge, Jet, Target};

/// Below this S is treated as non-positive.
pub const S_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WVariant {
    Perelman,
    Rh,
}

/// Named addends of a rate formula and their sum.
///
/// `terms` are the addends as stated; `total` is their sum. `extras` carries
/// alternative readings and derived corrections that do not enter `total`.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyRateBreakdown {
    pub terms: Vec<(&'static str, f64)>,
    pub total: f64,
    pub extras: Vec<(&'static str, f64)>,
}

impl EntropyRateBreakdown {
    fn new(terms: Vec<(&'static str, f64)>, extras: Vec<(&'static str, f64)>) -> Self {
        let total = terms.iter().map(|t| t.1).sum();
        EntropyRateBreakdown {
            terms,
            total,
            extras,
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms
            .iter()
            .chain(&self.extras)
            .find(|t| t.0 == name)
            .map(|t| t.1)
    }
}

fn pullback(geo: &Geometry, phi: &MapField, alpha: f64) -> MapPullback {
    map_pullback_with(geo.chart, geo.g, &geo.op, phi, alpha)
}

fn grad(geo: &Geometry, u: &[f64], edge: Edge) -> [Vec<f64>; 2] {
    [
        d1(geo.chart, u, 0, Target::Linear, edge),
        d1(geo.chart, u, 1, Target::Linear, edge),
    ]
}

fn sq_norm(geo: &Geometry, du: &[Vec<f64>; 2], p: usize) -> f64 {
    co_inner_at(geo.g.inv_at(p), [du[0][p], du[1][p]], [du[0][p], du[1][p]])
}

/// `∇²f` with reflected (Neumann) ghosts.
fn hessian_f(geo: &Geometry, f: &[f64]) -> SymTensorField {
    geo.hessian(&Jet::new(geo.chart, f, Target::Linear, Edge::Reflect))
}

fn check_positive(geo: &Geometry, s: &[f64]) -> Result<()> {
    match s.iter().position(|&v| !(v >= S_FLOOR)) {
        None => Ok(()),
        Some(p) => {
            let (i, j) = geo.chart.ij(p);
            Err(Error::NonPositiveS { i, j, value: s[p] })
        }
    }
}

/// `S = R − α|∇φ|²` and its volume average.
pub fn s_field(geo: &Geometry, phi: &MapField, alpha: f64) -> (ScalarField, f64) {
    let pb = pullback(geo, phi, alpha);
    let s: Vec<f64> = (0..geo.chart.nodes())
        .map(|p| geo.r[p] - alpha * pb.energy[p])
        .collect();
    let mean = if s.iter().all(|&v| v == s[0]) {
        s[0]
    } else {
        geo.integrate(&s) / geo.area()
    };
    (ScalarField(s), mean)
}

/// `E = ∫S log S dv − log(S̄)∫S dv`.
pub fn entropy_e(geo: &Geometry, phi: &MapField, alpha: f64) -> Result<f64> {
    let (s, s_bar) = s_field(geo, phi, alpha);
    check_positive(geo, &s)?;
    // written as ∫S log(S/S̄) so a constant S gives exactly zero
    let dens: Vec<f64> = s.iter().map(|&v| v * (v / s_bar).ln()).collect();
    Ok(geo.integrate(&dens))
}

/// Right-hand side of the entropy rate along the pseudo-flow.
///
/// Terms: `map` (−α∫|dφ(∇f)|²), `gradient` (−∫S|∇f−∇log S|²),
/// `hessian` (−2∫|∇²f−(Δf/2)g|²), `boundary` (−∮k_g|∇^⊤f|²).
/// Extras: `map_alt` (−α∫|∇φ|²|∇f|²), `traceless` (2∫|Sc°|² log(S/S̄)),
/// and `derived_total` = map_alt + gradient + hessian + 2·boundary + traceless.
pub fn entropy_e_rate(
    geo: &Geometry,
    phi: &MapField,
    f: &[f64],
    alpha: f64,
) -> Result<EntropyRateBreakdown> {
    let n = geo.chart.nodes();
    let pb = pullback(geo, phi, alpha);
    let (s, s_bar) = s_field(geo, phi, alpha);
    check_positive(geo, &s)?;
    let log_s: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    let df = grad(geo, f, Edge::Reflect);
    let dls = grad(geo, &log_s, Edge::OneSided);
    let hess = hessian_f(geo, f);

    let mut map = vec![0.0; n];
    let mut map_alt = vec![0.0; n];
    let mut gradient = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    let mut traceless = vec![0.0; n];
    for p in 0..n {
        let inv = geo.g.inv_at(p);
        let gm = geo.g.at(p);
        let grad_f = [df[0][p], df[1][p]];
        let up = [
            inv[0] * grad_f[0] + inv[1] * grad_f[1],
            inv[1] * grad_f[0] + inv[2] * grad_f[1],
        ];
        let grad_sq = sq_norm(geo, &df, p);
        for c in &pb.grads {
            let push = c[0][p] * up[0] + c[1][p] * up[1];
            map[p] -= alpha * push * push;
        }
        map_alt[p] = -alpha * pb.energy[p] * grad_sq;
        let diff = [df[0][p] - dls[0][p], df[1][p] - dls[1][p]];
        gradient[p] = -s[p] * co_inner_at(inv, diff, diff);
        let h = hess.at(p);
        let half_lap = 0.5 * trace_at(inv, h);
        let tl = [h[0] - half_lap * gm[0], h[1] - half_lap * gm[1], h[2] - half_lap * gm[2]];
        hessian[p] = -2.0 * norm_sq_at(inv, tl);
        // Sc = (R/2)g − pullback; its trace-free part
        let pbt = pb.pullback.at(p);
        let sc = [
            0.5 * geo.r[p] * gm[0] - pbt[0],
            0.5 * geo.r[p] * gm[1] - pbt[1],
            0.5 * geo.r[p] * gm[2] - pbt[2],
        ];
        let half_tr = 0.5 * trace_at(inv, sc);
        let sc0 = [sc[0] - half_tr * gm[0], sc[1] - half_tr * gm[1], sc[2] - half_tr * gm[2]];
        traceless[p] = 2.0 * norm_sq_at(inv, sc0) * (s[p] / s_bar).ln();
    }
    let boundary = -geo.integrate_boundary(|b| {
        let t = b.tangential_derivative([df[0][b.node], df[1][b.node]]);
        b.kg * t * t
    });
    let (map, map_alt) = (geo.integrate(&map), geo.integrate(&map_alt));
    let (gradient, hessian) = (geo.integrate(&gradient), geo.integrate(&hessian));
    let traceless = geo.integrate(&traceless);
    let derived = map_alt + gradient + hessian + 2.0 * boundary + traceless;
    Ok(EntropyRateBreakdown::new(
        vec![
            ("map", map),
            ("gradient", gradient),
            ("hessian", hessian),
            ("boundary", boundary),
        ],
        vec![
            ("map_alt", map_alt),
            ("traceless", traceless),
            ("derived_total", derived),
        ],
    ))
}

fn weight_f(f: &[f64]) -> Vec<f64> {
    f.iter().map(|v| (-v).exp()).collect()
}

/// `F = ∫(R − α|∇φ|² + |∇f|²)e^{−f} dv`.
pub fn f_functional(geo: &Geometry, phi: &MapField, f: &[f64], alpha: f64) -> f64 {
    let pb = pullback(geo, phi, alpha);
    let df = grad(geo, f, Edge::Reflect);
    let dens: Vec<f64> = (0..geo.chart.nodes())
        .map(|p| (geo.r[p] - alpha * pb.energy[p] + sq_norm(geo, &df, p)) * (-f[p]).exp())
        .collect();
    geo.integrate(&dens)
}

/// Pointwise `|Ric + ∇²f − α∇φ⊗∇φ − c·g|²` and `Σ_λ(τ(φ)^λ − ⟨∇φ^λ,∇f⟩)²`.
fn soliton_densities(
    geo: &Geometry,
    pb: &MapPullback,
    f: &[f64],
    c: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = geo.chart.nodes();
    let df = grad(geo, f, Edge::Reflect);
    let hess = hessian_f(geo, f);
    let mut ricci = vec![0.0; n];
    let mut tension = vec![0.0; n];
    for p in 0..n {
        let inv = geo.g.inv_at(p);
        let gm = geo.g.at(p);
        let h = hess.at(p);
        let q = pb.pullback.at(p);
        let k = 0.5 * geo.r[p] - c;
        let t = [
            k * gm[0] + h[0] - q[0],
            k * gm[1] + h[1] - q[1],
            k * gm[2] + h[2] - q[2],
        ];
        ricci[p] = norm_sq_at(inv, t);
        let grad_f = [df[0][p], df[1][p]];
        for (lam, gphi) in pb.grads.iter().enumerate() {
            let e = pb.tension[lam][p] - co_inner_at(inv, [gphi[0][p], gphi[1][p]], grad_f);
            tension[p] += e * e;
        }
    }
    (ricci, tension)
}

/// Right-hand side of `dF/dt`; `kg_dot` is the time derivative of the
/// prescribed boundary curvature.
pub fn f_rate(
    geo: &Geometry,
    phi: &MapField,
    f: &[f64],
    alpha: f64,
    kg_dot: f64,
) -> EntropyRateBreakdown {
    let pb = pullback(geo, phi, alpha);
    let (ricci, tension) = soliton_densities(geo, &pb, f, 0.0);
    let w = weight_f(f);
    let ricci: Vec<f64> = ricci.iter().zip(&w).map(|(a, b)| 2.0 * a * b).collect();
    let tension: Vec<f64> = tension.iter().zip(&w).map(|(a, b)| 2.0 * alpha * a * b).collect();
    let df = grad(geo, f, Edge::Reflect);
    let bcurv = geo.integrate_boundary(|b| (b.kg * geo.r[b.node] - 2.0 * kg_dot) * w[b.node]);
    let bgrad = geo.integrate_boundary(|b| {
        let t = b.tangential_derivative([df[0][b.node], df[1][b.node]]);
        2.0 * b.kg * t * t * w[b.node]
    });
    EntropyRateBreakdown::new(
        vec![
            ("ricci", geo.integrate(&ricci)),
            ("tension", geo.integrate(&tension)),
            ("boundary_curvature", bcurv),
            ("boundary_gradient", bgrad),
        ],
        Vec::new(),
    )
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveTau(tau))
    }
}

/// The heat kernel weight `(4πτ)^{−1}e^{−f}`.
pub fn heat_weight(f: &[f64], tau: f64) -> Vec<f64> {
    f.iter().map(|v| (-v).exp() / (4.0 * PI * tau)).collect()
}

/// `W = ∫[τ(|∇f|² + R) + f − 2](4πτ)^{−1}e^{−f} dv`, minus `∫τα|∇φ|²(…)` for RH.
pub fn w_functional(
    geo: &Geometry,
    phi: &MapField,
    f: &[f64],
    tau: f64,
    alpha: f64,
    variant: WVariant,
) -> Result<f64> {
    check_tau(tau)?;
    let df = grad(geo, f, Edge::Reflect);
    let u = heat_weight(f, tau);
    let energy = match variant {
        WVariant::Perelman => None,
        WVariant::Rh => Some(pullback(geo, phi, alpha).energy),
    };
    let dens: Vec<f64> = (0..geo.chart.nodes())
        .map(|p| {
            let mut v = tau * (sq_norm(geo, &df, p) + geo.r[p]) + f[p] - 2.0;
            if let Some(e) = &energy {
                v -= tau * alpha * e[p];
            }
            v * u[p]
        })
        .collect();
    Ok(geo.integrate(&dens))
}

/// Right-hand side of `dW_RH/dt` along the flow with `∂τ/∂t = −1`.
///
/// Terms `ricci` and `tension` are the volume addends; `boundary` is the
/// boundary addend `(4π)^{−1}∮(k_g R − 2k_g' + 2k_g|∇^⊤f|²)e^{−f}`.
pub fn w_rate(
    geo: &Geometry,
    phi: &MapField,
    f: &[f64],
    tau: f64,
    alpha: f64,
    kg_dot: f64,
) -> Result<EntropyRateBreakdown> {
    check_tau(tau)?;
    let pb = pullback(geo, phi, alpha);
    let (ricci, tension) = soliton_densities(geo, &pb, f, 0.5 / tau);
    let u = heat_weight(f, tau);
    let ricci: Vec<f64> = ricci.iter().zip(&u).map(|(a, b)| 2.0 * tau * a * b).collect();
    let tension: Vec<f64> = tension
        .iter()
        .zip(&u)
        .map(|(a, b)| 2.0 * tau * alpha * a * b)
        .collect();
    let df = grad(geo, f, Edge::Reflect);
    let boundary = geo.integrate_boundary(|b| {
        let t = b.tangential_derivative([df[0][b.node], df[1][b.node]]);
        (b.kg * geo.r[b.node] - 2.0 * kg_dot + 2.0 * b.kg * t * t) * (-f[b.node]).exp()
    }) / (4.0 * PI);
    Ok(EntropyRateBreakdown::new(
        vec![
            ("ricci", geo.integrate(&ricci)),
            ("tension", geo.integrate(&tension)),
            ("boundary", boundary),
        ],
        Vec::new(),
    ))
}

/// Pointwise `□*u = −∂u/∂t − Δu − ½ tr_g(∂g/∂t) u` with `u = (4πτ)^{−1}e^{−f}`.
pub fn conjugate_heat_residual(
    geo: &Geometry,
    f: &[f64],
    tau: f64,
    dg: &SymTensorField,
    df: &[f64],
    dtau: f64,
) -> Result<ScalarField> {
    check_tau(tau)?;
    let u = heat_weight(f, tau);
    let lap = geo.laplacian(&u);
    Ok(ScalarField(
        (0..geo.chart.nodes())
            .map(|p| {
                let du = -u[p] * (df[p] + dtau / tau);
                let tr = trace_at(geo.g.inv_at(p), dg.at(p));
                -du - lap[p] - 0.5 * tr * u[p]
            })
            .collect(),
    ))
}
