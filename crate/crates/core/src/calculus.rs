//! Discrete Riemannian calculus on a chart.
//!
//! Metric components are differentiated with one-sided stencils at the
//! boundary. Scalars carrying Neumann data (`f`, `φ`) are differentiated with
//! reflected ghosts. The Laplace–Beltrami operator is assembled in flux form
//! from a symmetric quadratic energy, so that its Neumann version satisfies the
//! discrete divergence theorem exactly.

use crate::chart::{
    Chart, MapField, MetricField, ScalarField, SymTensorField, Topology, VectorField,
};
use crate::error::{Error, Result};
use crate::stencil::{d1, Edge, Jet, Target};

/// Boundary closure requested from the Laplace–Beltrami operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    /// Zero conormal flux.
    Neumann,
    /// No boundary condition; boundary nodes use one-sided stencils.
    Free,
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if v.len() <= BLOCK {
        v.iter().sum()
    } else {
        let mid = v.len() / 2;
        pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
    }
}

/// Christoffel symbols of the second kind, `Γ^k_ij`, indexed `[k][s]` with
/// `s = 0, 1, 2` for `ij = 00, 01, 11`.
#[derive(Debug, Clone)]
pub struct Christoffel {
    pub gamma: [[Vec<f64>; 3]; 2],
}

impl Christoffel {
    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize, n: usize) -> f64 {
        self.gamma[k][i + j][n]
    }
}

struct MetricJet {
    e: Jet,
    f: Jet,
    g: Jet,
}

/// Metric derivatives; `fourth` selects the fourth-order stencils.
fn metric_jet(chart: &Chart, g: &MetricField, fourth: bool) -> MetricJet {
    let t = g.tensor();
    let full = |u: &[f64]| {
        if fourth {
            Jet::fourth_order(chart, u, Target::Linear)
        } else {
            Jet::new(chart, u, Target::Linear, Edge::OneSided)
        }
    };
    if !matches!(chart.topology(), Topology::PolarAnnulus { .. }) {
        return MetricJet {
            e: full(&t.xx),
            f: full(&t.xy),
            g: full(&t.yy),
        };
    }
    // Near the excised pole g_rθ ~ r and g_θθ ~ r²; difference the smooth
    // quotients and restore the powers of r exactly.
    let n = g.len();
    let r: Vec<f64> = (0..n).map(|k| chart.point(k).0).collect();
    let fh: Vec<f64> = (0..n).map(|k| t.xy[k] / r[k]).collect();
    let gh: Vec<f64> = (0..n).map(|k| t.yy[k] / (r[k] * r[k])).collect();
    let (jf, jg) = (full(&fh), full(&gh));
    let map = |h: &dyn Fn(usize) -> f64| (0..n).map(h).collect::<Vec<f64>>();
    let f = Jet {
        dx: map(&|k| fh[k] + r[k] * jf.dx[k]),
        dy: map(&|k| r[k] * jf.dy[k]),
        dxx: map(&|k| 2.0 * jf.dx[k] + r[k] * jf.dxx[k]),
        dxy: map(&|k| jf.dy[k] + r[k] * jf.dxy[k]),
        dyy: map(&|k| r[k] * jf.dyy[k]),
    };
    let gj = Jet {
        dx: map(&|k| r[k] * (2.0 * gh[k] + r[k] * jg.dx[k])),
        dy: map(&|k| r[k] * r[k] * jg.dy[k]),
        dxx: map(&|k| 2.0 * gh[k] + r[k] * (4.0 * jg.dx[k] + r[k] * jg.dxx[k])),
        dxy: map(&|k| r[k] * (2.0 * jg.dy[k] + r[k] * jg.dxy[k])),
        dyy: map(&|k| r[k] * r[k] * jg.dyy[k]),
    };
    MetricJet {
        e: full(&t.xx),
        f,
        g: gj,
    }
}

fn christoffel_from_jet(g: &MetricField, mj: &MetricJet) -> Christoffel {
    let n = g.len();
    let mut gamma: [[Vec<f64>; 3]; 2] = Default::default();
    for k in 0..2 {
        for s in 0..3 {
            gamma[k][s] = vec![0.0; n];
        }
    }
    for p in 0..n {
        // ∂_a g_bc as d[a][b][c]
        let dg = |a: usize, b: usize, c: usize| -> f64 {
            let jet = match (b, c) {
                (0, 0) => &mj.e,
                (1, 1) => &mj.g,
                _ => &mj.f,
            };
            if a == 0 {
                jet.dx[p]
            } else {
                jet.dy[p]
            }
        };
        let [ip, iq, ir] = g.inv_at(p);
        let inv = [[ip, iq], [iq, ir]];
        for (s, (i, j)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let first = |l: usize| 0.5 * (dg(i, j, l) + dg(j, i, l) - dg(l, i, j));
            let (f0, f1) = (first(0), first(1));
            for k in 0..2 {
                gamma[k][s][p] = inv[k][0] * f0 + inv[k][1] * f1;
            }
        }
    }
    Christoffel { gamma }
}

/// `Γ^k_ij = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)`.
pub fn christoffel(chart: &Chart, g: &MetricField) -> Christoffel {
    christoffel_from_jet(g, &metric_jet(chart, g, false))
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Brioschi formula for `K`, returned as `R = 2K`.
fn curvature_from_jet(g: &MetricField, mj: &MetricJet) -> Vec<f64> {
    let (je, jf, jg) = (&mj.e, &mj.f, &mj.g);
    (0..g.len())
        .map(|p| {
            let [e, f, gg] = g.at(p);
            let a = [
                [
                    -0.5 * je.dyy[p] + jf.dxy[p] - 0.5 * jg.dxx[p],
                    0.5 * je.dx[p],
                    jf.dx[p] - 0.5 * je.dy[p],
                ],
                [jf.dy[p] - 0.5 * jg.dx[p], e, f],
                [0.5 * jg.dy[p], f, gg],
            ];
            let b = [
                [0.0, 0.5 * je.dy[p], 0.5 * jg.dx[p]],
                [0.5 * je.dy[p], e, f],
                [0.5 * jg.dx[p], f, gg],
            ];
            let det = e * gg - f * f;
            2.0 * (det3(a) - det3(b)) / (det * det)
        })
        .collect()
}

/// Scalar curvature `R = 2K` from fourth-order metric derivatives.
///
/// The entropy `E` is quadratic in the deviation of `R` from its mean, so a
/// second-order `R` leaves `E = O(h⁴)` on a constant-curvature metric.
pub fn scalar_curvature(chart: &Chart, g: &MetricField) -> ScalarField {
    ScalarField(curvature_from_jet(g, &metric_jet(chart, g, true)))
}

/// Replaces boundary values by the second-order Neumann extrapolation
/// `(4u₁ − u₂)/3`, imposing `∂u/∂n = 0` on each non-periodic axis end.
pub fn neumann_close(chart: &Chart, u: &mut [f64]) {
    let (nx, ny) = (chart.nx(), chart.ny());
    if !chart.periodic(0) {
        for j in 0..ny {
            let r = j * nx;
            u[r] = (4.0 * u[r + 1] - u[r + 2]) / 3.0;
            u[r + nx - 1] = (4.0 * u[r + nx - 2] - u[r + nx - 3]) / 3.0;
        }
    }
    if !chart.periodic(1) {
        for i in 0..nx {
            u[i] = (4.0 * u[nx + i] - u[2 * nx + i]) / 3.0;
            let last = (ny - 1) * nx + i;
            u[last] = (4.0 * u[last - nx] - u[last - 2 * nx]) / 3.0;
        }
    }
}

/// Symmetric flux-form Laplace–Beltrami operator with natural (Neumann) closure.
///
/// `Δu = flux(u) / mass`, where `flux = −∂E/∂u` for the discrete energy
/// `E(u) = ½ ∫ √g g^{ij} ∂_i u ∂_j u`.
#[derive(Debug, Clone)]
pub struct LaplaceOp {
    nx: usize,
    ny: usize,
    periodic: [bool; 2],
    h: [f64; 2],
    mass: Vec<f64>,
    ex: Vec<f64>,
    ey: Vec<f64>,
    cell: Vec<f64>,
}

impl LaplaceOp {
    pub fn new(chart: &Chart, g: &MetricField) -> Self {
        let (nx, ny) = (chart.nx(), chart.ny());
        let periodic = [chart.periodic(0), chart.periodic(1)];
        let h = [chart.hx(), chart.hy()];
        let n = chart.nodes();
        let sd = g.sqrt_det();
        let a: Vec<f64> = (0..n).map(|p| sd[p] * g.inv_at(p)[0]).collect();
        let b: Vec<f64> = (0..n).map(|p| sd[p] * g.inv_at(p)[1]).collect();
        let c: Vec<f64> = (0..n).map(|p| sd[p] * g.inv_at(p)[2]).collect();
        let mass = (0..n).map(|p| chart.cell_measure(p) * sd[p]).collect();
        let mut ex = vec![0.0; n];
        let mut ey = vec![0.0; n];
        let mut cell = vec![0.0; n];
        let ix_max = if periodic[0] { nx } else { nx - 1 };
        let jy_max = if periodic[1] { ny } else { ny - 1 };
        for j in 0..ny {
            for i in 0..ix_max {
                let p = j * nx + i;
                let q = j * nx + (i + 1) % nx;
                ex[p] = 0.5 * (a[p] + a[q]) * chart.axis_weight(1, j) * h[1] / h[0];
            }
        }
        for j in 0..jy_max {
            for i in 0..nx {
                let p = j * nx + i;
                let q = ((j + 1) % ny) * nx + i;
                ey[p] = 0.5 * (c[p] + c[q]) * chart.axis_weight(0, i) * h[0] / h[1];
            }
        }
        for j in 0..jy_max {
            for i in 0..ix_max {
                let [pa, pb, pc, pd] = Self::corners(nx, ny, i, j);
                cell[j * nx + i] = 0.25 * (b[pa] + b[pb] + b[pc] + b[pd]) * h[0] * h[1];
            }
        }
        LaplaceOp {
            nx,
            ny,
            periodic,
            h,
            mass,
            ex,
            ey,
            cell,
        }
    }

    #[inline]
    fn corners(nx: usize, ny: usize, i: usize, j: usize) -> [usize; 4] {
        let i1 = (i + 1) % nx;
        let j1 = (j + 1) % ny;
        [j * nx + i, j * nx + i1, j1 * nx + i, j1 * nx + i1]
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `−∂E/∂u`, i.e. `mass · Δu`.
    pub fn flux(&self, u: &[f64], target: Target) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let df = |a: f64, b: f64| match target {
            Target::Linear => b - a,
            Target::Circle => crate::chart::wrap_angle(b - a),
        };
        let mut out = vec![0.0; nx * ny];
        let ix_max = if self.periodic[0] { nx } else { nx - 1 };
        let jy_max = if self.periodic[1] { ny } else { ny - 1 };
        for j in 0..ny {
            for i in 0..ix_max {
                let p = j * nx + i;
                let q = j * nx + (i + 1) % nx;
                let flow = self.ex[p] * df(u[p], u[q]);
                out[p] += flow;
                out[q] -= flow;
            }
        }
        for j in 0..jy_max {
            for i in 0..nx {
                let p = j * nx + i;
                let q = ((j + 1) % ny) * nx + i;
                let flow = self.ey[p] * df(u[p], u[q]);
                out[p] += flow;
                out[q] -= flow;
            }
        }
        let (h0, h1) = (self.h[0], self.h[1]);
        for j in 0..jy_max {
            for i in 0..ix_max {
                let beta = self.cell[j * nx + i];
                if beta == 0.0 {
                    continue;
                }
                let [pa, pb, pc, pd] = Self::corners(nx, ny, i, j);
                let gx = (df(u[pa], u[pb]) + df(u[pc], u[pd])) / (2.0 * h0);
                let gy = (df(u[pa], u[pc]) + df(u[pb], u[pd])) / (2.0 * h1);
                let sx = beta * gy / (2.0 * h0);
                let sy = beta * gx / (2.0 * h1);
                out[pa] -= -sx - sy;
                out[pb] -= sx - sy;
                out[pc] -= -sx + sy;
                out[pd] -= sx + sy;
            }
        }
        out
    }

    /// Neumann Laplace–Beltrami of `u`.
    pub fn apply(&self, u: &[f64], target: Target) -> Vec<f64> {
        let mut out = self.flux(u, target);
        for (o, m) in out.iter_mut().zip(&self.mass) {
            *o /= m;
        }
        out
    }

    /// Diagonal of the stiffness matrix `K = −∂flux/∂u` (edge part only).
    pub fn stiffness_diagonal(&self) -> Vec<f64> {
        let (nx, ny) = (self.nx, self.ny);
        let mut d = vec![0.0; nx * ny];
        let ix_max = if self.periodic[0] { nx } else { nx - 1 };
        let jy_max = if self.periodic[1] { ny } else { ny - 1 };
        for j in 0..ny {
            for i in 0..ix_max {
                let p = j * nx + i;
                d[p] += self.ex[p];
                d[j * nx + (i + 1) % nx] += self.ex[p];
            }
        }
        for j in 0..jy_max {
            for i in 0..nx {
                let p = j * nx + i;
                d[p] += self.ey[p];
                d[((j + 1) % ny) * nx + i] += self.ey[p];
            }
        }
        d
    }

    /// Largest per-node explicit-diffusion rate `Σ_edges coef / mass`, used for
    /// time-step bounds.
    pub fn max_rate(&self) -> f64 {
        self.stiffness_diagonal()
            .iter()
            .zip(&self.mass)
            .map(|(d, m)| d / m)
            .fold(0.0, f64::max)
    }
}

/// Per-node Hessian `∂_i∂_j u − Γ^k_ij ∂_k u` from a jet.
pub fn hessian_from_jet(gamma: &Christoffel, jet: &Jet) -> SymTensorField {
    let n = jet.dx.len();
    let mut h = SymTensorField::zeros(n);
    for p in 0..n {
        let corr = |s: usize| gamma.gamma[0][s][p] * jet.dx[p] + gamma.gamma[1][s][p] * jet.dy[p];
        h.set(
            p,
            [jet.dxx[p] - corr(0), jet.dxy[p] - corr(1), jet.dyy[p] - corr(2)],
        );
    }
    h
}

pub fn hessian(chart: &Chart, g: &MetricField, u: &[f64], edge: Edge) -> SymTensorField {
    let gamma = christoffel(chart, g);
    hessian_from_jet(&gamma, &Jet::new(chart, u, Target::Linear, edge))
}

/// Metric trace `g^{ij} T_ij`.
#[inline]
pub fn trace_at(inv: [f64; 3], t: [f64; 3]) -> f64 {
    inv[0] * t[0] + 2.0 * inv[1] * t[1] + inv[2] * t[2]
}

/// `g^{ik} g^{jl} T_ij T_kl`.
#[inline]
pub fn norm_sq_at(inv: [f64; 3], t: [f64; 3]) -> f64 {
    let [p, q, r] = inv;
    let m00 = p * t[0] + q * t[1];
    let m01 = p * t[1] + q * t[2];
    let m10 = q * t[0] + r * t[1];
    let m11 = q * t[1] + r * t[2];
    m00 * m00 + 2.0 * m01 * m10 + m11 * m11
}

/// `g^{ij} a_i b_j` for covectors.
#[inline]
pub fn co_inner_at(inv: [f64; 3], a: [f64; 2], b: [f64; 2]) -> f64 {
    inv[0] * a[0] * b[0] + inv[1] * (a[0] * b[1] + a[1] * b[0]) + inv[2] * a[1] * b[1]
}

pub fn tensor_norm_sq(g: &MetricField, t: &SymTensorField) -> ScalarField {
    ScalarField((0..g.len()).map(|p| norm_sq_at(g.inv_at(p), t.at(p))).collect())
}

pub fn trace(g: &MetricField, t: &SymTensorField) -> ScalarField {
    ScalarField((0..g.len()).map(|p| trace_at(g.inv_at(p), t.at(p))).collect())
}

/// Contravariant gradient `g^{ij}∂_j u`.
pub fn gradient(chart: &Chart, g: &MetricField, u: &[f64], edge: Edge) -> VectorField {
    let jet = Jet::first(chart, u, Target::Linear, edge);
    let n = g.len();
    let mut out = VectorField {
        x: vec![0.0; n],
        y: vec![0.0; n],
    };
    for p in 0..n {
        let [a, b, c] = g.inv_at(p);
        out.x[p] = a * jet.dx[p] + b * jet.dy[p];
        out.y[p] = b * jet.dx[p] + c * jet.dy[p];
    }
    out
}

/// `g(X, Y)` for contravariant vector fields.
pub fn inner(g: &MetricField, a: &VectorField, b: &VectorField) -> ScalarField {
    ScalarField(
        (0..g.len())
            .map(|p| {
                let [e, f, gg] = g.at(p);
                e * a.x[p] * b.x[p] + f * (a.x[p] * b.y[p] + a.y[p] * b.x[p]) + gg * a.y[p] * b.y[p]
            })
            .collect(),
    )
}

/// `|∇u|² = g^{ij}∂_i u ∂_j u`.
pub fn grad_norm_sq(chart: &Chart, g: &MetricField, u: &[f64], edge: Edge) -> ScalarField {
    let jet = Jet::first(chart, u, Target::Linear, edge);
    ScalarField(
        (0..g.len())
            .map(|p| co_inner_at(g.inv_at(p), [jet.dx[p], jet.dy[p]], [jet.dx[p], jet.dy[p]]))
            .collect(),
    )
}

/// Laplace–Beltrami with the requested closure.
pub fn laplace_beltrami(chart: &Chart, g: &MetricField, u: &[f64], bc: Bc) -> ScalarField {
    let op = LaplaceOp::new(chart, g);
    let mut out = op.apply(u, Target::Linear);
    if bc == Bc::Free {
        let gamma = christoffel(chart, g);
        let hess = hessian_from_jet(&gamma, &Jet::new(chart, u, Target::Linear, Edge::OneSided));
        for p in 0..chart.nodes() {
            let (i, j) = chart.ij(p);
            if chart.on_edge(0, i) || chart.on_edge(1, j) {
                out[p] = trace_at(g.inv_at(p), hess.at(p));
            }
        }
    }
    ScalarField(out)
}

/// Energy density, scaled pullback and tension of a flat-target map.
#[derive(Debug, Clone)]
pub struct MapPullback {
    /// `|∇φ|² = Σ_λ g^{ij}∂_iφ^λ∂_jφ^λ`.
    pub energy: ScalarField,
    /// `α Σ_λ ∂_iφ^λ ∂_jφ^λ`.
    pub pullback: SymTensorField,
    /// `τ(φ)^λ = Δφ^λ` per component.
    pub tension: Vec<Vec<f64>>,
    /// Coordinate gradients `(∂_xφ^λ, ∂_yφ^λ)` per component.
    pub grads: Vec<[Vec<f64>; 2]>,
}

pub fn map_pullback_with(
    chart: &Chart,
    g: &MetricField,
    op: &LaplaceOp,
    phi: &MapField,
    alpha: f64,
) -> MapPullback {
    let n = chart.nodes();
    let mut energy = vec![0.0; n];
    let mut pullback = SymTensorField::zeros(n);
    let mut tension = Vec::with_capacity(phi.len());
    let mut grads = Vec::with_capacity(phi.len());
    for comp in &phi.components {
        let target = Target::from(comp);
        let dx = d1(chart, &comp.values, 0, target, Edge::Reflect);
        let dy = d1(chart, &comp.values, 1, target, Edge::Reflect);
        for p in 0..n {
            energy[p] += co_inner_at(g.inv_at(p), [dx[p], dy[p]], [dx[p], dy[p]]);
            pullback.xx[p] += alpha * dx[p] * dx[p];
            pullback.xy[p] += alpha * dx[p] * dy[p];
            pullback.yy[p] += alpha * dy[p] * dy[p];
        }
        tension.push(op.apply(&comp.values, target));
        grads.push([dx, dy]);
    }
    MapPullback {
        energy: ScalarField(energy),
        pullback,
        tension,
        grads,
    }
}

pub fn map_pullback(chart: &Chart, g: &MetricField, phi: &MapField, alpha: f64) -> MapPullback {
    map_pullback_with(chart, g, &LaplaceOp::new(chart, g), phi, alpha)
}

/// Geometry of one boundary node on one boundary side.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    pub node: usize,
    /// Axis normal to this side.
    pub axis: usize,
    /// `+1` at the upper end of the axis, `−1` at the lower end.
    pub side: f64,
    /// Boundary measure weight (length element times quadrature weight).
    pub weight: f64,
    /// Outward unit normal, contravariant.
    pub normal: [f64; 2],
    /// Unit tangent, contravariant (along the other axis).
    pub tangent: [f64; 2],
    /// Geodesic curvature with respect to the outward normal.
    pub kg: f64,
}

impl BoundaryPoint {
    /// `n^i ∂_i u` from coordinate derivatives.
    #[inline]
    pub fn normal_derivative(&self, du: [f64; 2]) -> f64 {
        self.normal[0] * du[0] + self.normal[1] * du[1]
    }

    /// `T^i ∂_i u`.
    #[inline]
    pub fn tangential_derivative(&self, du: [f64; 2]) -> f64 {
        self.tangent[0] * du[0] + self.tangent[1] * du[1]
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryGeometry {
    pub points: Vec<BoundaryPoint>,
}

impl BoundaryGeometry {
    /// `∮ u dA` with `u` evaluated per boundary point.
    pub fn integrate(&self, u: impl Fn(&BoundaryPoint) -> f64) -> f64 {
        let terms: Vec<f64> = self.points.iter().map(|b| b.weight * u(b)).collect();
        pairwise_sum(&terms)
    }

    pub fn length(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    pub fn min_kg(&self) -> f64 {
        self.points.iter().map(|b| b.kg).fold(f64::INFINITY, f64::min)
    }
}

pub fn boundary_geometry_with(
    chart: &Chart,
    g: &MetricField,
    gamma: &Christoffel,
) -> Result<BoundaryGeometry> {
    if !chart.has_boundary() {
        return Err(Error::NoBoundary);
    }
    let mut points = Vec::new();
    for a in 0..2 {
        if chart.periodic(a) {
            continue;
        }
        let b = 1 - a;
        let na = chart.len(a);
        for (k, side) in [(0usize, -1.0), (na - 1, 1.0)] {
            for m in 0..chart.len(b) {
                let node = if a == 0 { chart.idx(k, m) } else { chart.idx(m, k) };
                let gm = g.at(node);
                let inv = g.inv_at(node);
                let (g_bb, inv_aa) = if a == 0 { (gm[2], inv[0]) } else { (gm[0], inv[2]) };
                let root = inv_aa.sqrt();
                let normal = if a == 0 {
                    [side * inv[0] / root, side * inv[1] / root]
                } else {
                    [side * inv[1] / root, side * inv[2] / root]
                };
                let mut tangent = [0.0; 2];
                tangent[b] = 1.0 / g_bb.sqrt();
                let gamma_a_bb = gamma.at(a, b, b, node);
                let kg = -side * gamma_a_bb / (g_bb * root);
                let weight = chart.axis_weight(b, m) * chart.spacing(b) * g_bb.sqrt();
                points.push(BoundaryPoint {
                    node,
                    axis: a,
                    side,
                    weight,
                    normal,
                    tangent,
                    kg,
                });
            }
        }
    }
    Ok(BoundaryGeometry { points })
}

pub fn boundary_geometry(chart: &Chart, g: &MetricField) -> Result<BoundaryGeometry> {
    boundary_geometry_with(chart, g, &christoffel(chart, g))
}

/// `∫ u dv`.
pub fn integrate(chart: &Chart, g: &MetricField, u: &[f64]) -> f64 {
    let sd = g.sqrt_det();
    let terms: Vec<f64> = (0..chart.nodes())
        .map(|p| chart.cell_measure(p) * sd[p] * u[p])
        .collect();
    pairwise_sum(&terms)
}

/// Everything derived from one metric that the functionals need.
#[derive(Debug, Clone)]
pub struct Geometry<'a> {
    pub chart: &'a Chart,
    pub g: &'a MetricField,
    pub gamma: Christoffel,
    /// Scalar curvature with one-sided boundary stencils (the flows replace
    /// it by the Neumann-closed one, see `flows::flow_geometry`).
    pub r: ScalarField,
    pub op: LaplaceOp,
    pub boundary: Option<BoundaryGeometry>,
}

impl<'a> Geometry<'a> {
    pub fn new(chart: &'a Chart, g: &'a MetricField) -> Self {
        let gamma = christoffel_from_jet(g, &metric_jet(chart, g, false));
        let r = scalar_curvature(chart, g);
        let op = LaplaceOp::new(chart, g);
        let boundary = boundary_geometry_with(chart, g, &gamma).ok();
        Geometry {
            chart,
            g,
            gamma,
            r,
            op,
            boundary,
        }
    }

    pub fn integrate(&self, u: &[f64]) -> f64 {
        let terms: Vec<f64> = self.op.mass().iter().zip(u).map(|(m, v)| m * v).collect();
        pairwise_sum(&terms)
    }

    pub fn area(&self) -> f64 {
        pairwise_sum(self.op.mass())
    }

    pub fn integrate_boundary(&self, u: impl Fn(&BoundaryPoint) -> f64) -> f64 {
        self.boundary.as_ref().map_or(0.0, |b| b.integrate(u))
    }

    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        self.op.apply(u, Target::Linear)
    }

    pub fn hessian(&self, jet: &Jet) -> SymTensorField {
        hessian_from_jet(&self.gamma, jet)
    }

    /// Covariant divergence `(div v)_j = g^{ik} ∇_k v_ij` of a symmetric tensor,
    /// as a covector `[x, y]`.
    pub fn divergence(&self, v: &SymTensorField) -> [Vec<f64>; 2] {
        let chart = self.chart;
        let jets: [Jet; 3] = [
            Jet::first(chart, &v.xx, Target::Linear, Edge::OneSided),
            Jet::first(chart, &v.xy, Target::Linear, Edge::OneSided),
            Jet::first(chart, &v.yy, Target::Linear, Edge::OneSided),
        ];
        let n = chart.nodes();
        let mut out = [vec![0.0; n], vec![0.0; n]];
        for p in 0..n {
            let comp = |i: usize, j: usize| v.at(p)[i + j];
            let dcomp = |k: usize, i: usize, j: usize| {
                let jet = &jets[i + j];
                if k == 0 {
                    jet.dx[p]
                } else {
                    jet.dy[p]
                }
            };
            let gam = |l: usize, i: usize, j: usize| self.gamma.at(l, i, j, p);
            let cov = |k: usize, i: usize, j: usize| {
                dcomp(k, i, j)
                    - (0..2).map(|l| gam(l, k, i) * comp(l, j) + gam(l, k, j) * comp(i, l)).sum::<f64>()
            };
            let [a, b, c] = self.g.inv_at(p);
            let inv = [[a, b], [b, c]];
            for j in 0..2 {
                let mut s = 0.0;
                for i in 0..2 {
                    for k in 0..2 {
                        s += inv[i][k] * cov(k, i, j);
                    }
                }
                out[j][p] = s;
            }
        }
        out
    }
}
