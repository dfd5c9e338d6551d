//! Difference stencils along one chart axis.
//!
//! Every stencil is written in terms of consecutive differences `u[k+1] - u[k]`
//! so that constant fields differentiate to exactly zero and circle-valued
//! components only ever see wrapped differences.

use crate::chart::{wrap_angle, Chart, MapComponent};

/// How a non-periodic axis end is closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// Even reflection across the boundary node (Neumann ghost).
    Reflect,
    /// Second-order one-sided stencils.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Linear,
    Circle,
}

impl From<&MapComponent> for Target {
    fn from(c: &MapComponent) -> Self {
        if c.is_circle() {
            Target::Circle
        } else {
            Target::Linear
        }
    }
}

#[inline]
fn diff(target: Target, a: f64, b: f64) -> f64 {
    match target {
        Target::Linear => b - a,
        Target::Circle => wrap_angle(b - a),
    }
}

/// Applies `line_op` to every line of `u` along `axis`.
fn along_axis(
    chart: &Chart,
    u: &[f64],
    axis: usize,
    mut line_op: impl FnMut(&[f64], &mut [f64]),
) -> Vec<f64> {
    let (nx, ny) = (chart.nx(), chart.ny());
    let mut out = vec![0.0; u.len()];
    if axis == 0 {
        for j in 0..ny {
            let row = j * nx;
            line_op(&u[row..row + nx], &mut out[row..row + nx]);
        }
    } else {
        let mut line = vec![0.0; ny];
        let mut res = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                line[j] = u[j * nx + i];
            }
            line_op(&line, &mut res);
            for j in 0..ny {
                out[j * nx + i] = res[j];
            }
        }
    }
    out
}

/// Consecutive differences of a line; length `n` when periodic (last one wraps).
fn line_diffs(line: &[f64], periodic: bool, target: Target, d: &mut Vec<f64>) {
    let n = line.len();
    d.clear();
    for k in 0..n - 1 {
        d.push(diff(target, line[k], line[k + 1]));
    }
    if periodic {
        d.push(diff(target, line[n - 1], line[0]));
    }
}

/// First derivative along `axis`.
pub fn d1(chart: &Chart, u: &[f64], axis: usize, target: Target, edge: Edge) -> Vec<f64> {
    let periodic = chart.periodic(axis);
    let h = chart.spacing(axis);
    let inv2h = 0.5 / h;
    let mut d = Vec::new();
    along_axis(chart, u, axis, |line, out| {
        let n = line.len();
        line_diffs(line, periodic, target, &mut d);
        if periodic {
            for k in 0..n {
                let prev = d[(k + n - 1) % n];
                out[k] = (prev + d[k]) * inv2h;
            }
            return;
        }
        for k in 1..n - 1 {
            out[k] = (d[k - 1] + d[k]) * inv2h;
        }
        match edge {
            Edge::Reflect => {
                out[0] = 0.0;
                out[n - 1] = 0.0;
            }
            Edge::OneSided => {
                out[0] = (3.0 * d[0] - d[1]) * inv2h;
                out[n - 1] = (3.0 * d[n - 2] - d[n - 3]) * inv2h;
            }
        }
    })
}

/// Second derivative along `axis`.
pub fn d2(chart: &Chart, u: &[f64], axis: usize, target: Target, edge: Edge) -> Vec<f64> {
    let periodic = chart.periodic(axis);
    let h = chart.spacing(axis);
    let inv_h2 = 1.0 / (h * h);
    let mut d = Vec::new();
    along_axis(chart, u, axis, |line, out| {
        let n = line.len();
        line_diffs(line, periodic, target, &mut d);
        if periodic {
            for k in 0..n {
                let prev = d[(k + n - 1) % n];
                out[k] = (d[k] - prev) * inv_h2;
            }
            return;
        }
        for k in 1..n - 1 {
            out[k] = (d[k] - d[k - 1]) * inv_h2;
        }
        match edge {
            Edge::Reflect => {
                out[0] = 2.0 * d[0] * inv_h2;
                out[n - 1] = -2.0 * d[n - 2] * inv_h2;
            }
            Edge::OneSided => {
                out[0] = (-2.0 * d[0] + 3.0 * d[1] - d[2]) * inv_h2;
                out[n - 1] = (2.0 * d[n - 2] - 3.0 * d[n - 3] + d[n - 4]) * inv_h2;
            }
        }
    })
}

/// Mixed derivative `∂0 ∂1 u`.
pub fn d01(chart: &Chart, u: &[f64], target: Target, edge: Edge) -> Vec<f64> {
    let dy = d1(chart, u, 1, target, edge);
    d1(chart, &dy, 0, Target::Linear, edge)
}

/// Prefix sums of the differences: the line relative to its first node.
fn unwrapped(d: &[f64], n: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(n);
    w.push(0.0);
    for k in 0..n - 1 {
        w.push(w[k] + d[k]);
    }
    w
}

/// Weights of the fourth-order one-sided stencils at the first two nodes
/// of a line, scaled by 12.
const D1_EDGE: [[f64; 6]; 2] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0, 0.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0, 0.0],
];
const D2_EDGE: [[f64; 6]; 2] = [
    [45.0, -154.0, 214.0, -156.0, 61.0, -10.0],
    [10.0, -15.0, -4.0, 14.0, -6.0, 1.0],
];

/// Fourth-order derivative of order `m` (1 or 2) along `axis`: five-point
/// central stencils, off-centred on the two nodes nearest a non-periodic end.
fn fourth(chart: &Chart, u: &[f64], axis: usize, target: Target, m: usize) -> Vec<f64> {
    let periodic = chart.periodic(axis);
    let h = chart.spacing(axis);
    let scale = if m == 1 { 1.0 / (12.0 * h) } else { 1.0 / (12.0 * h * h) };
    let mut d = Vec::new();
    along_axis(chart, u, axis, |line, out| {
        let n = line.len();
        line_diffs(line, periodic, target, &mut d);
        let at = |k: isize| d[k.rem_euclid(d.len() as isize) as usize];
        let central = |k: isize| {
            if m == 1 {
                7.0 * (at(k - 1) + at(k)) - (at(k - 2) + at(k + 1))
            } else {
                15.0 * (at(k) - at(k - 1)) - at(k + 1) + at(k - 2)
            }
        };
        if periodic {
            for k in 0..n {
                out[k] = central(k as isize) * scale;
            }
            return;
        }
        for k in 2..n - 2 {
            out[k] = central(k as isize) * scale;
        }
        let w = unwrapped(&d, n);
        let edge = if m == 1 { &D1_EDGE } else { &D2_EDGE };
        // the far end mirrors the near one; odd derivatives change sign
        let sign = if m == 1 { -1.0 } else { 1.0 };
        for (k, c) in edge.iter().enumerate() {
            let lo: f64 = c.iter().enumerate().map(|(q, a)| a * w[q]).sum();
            let hi: f64 = c.iter().enumerate().map(|(q, a)| a * w[n - 1 - q]).sum();
            out[k] = lo * scale;
            out[n - 1 - k] = sign * hi * scale;
        }
    })
}

/// All first and second derivatives of a scalar line field.
#[derive(Debug, Clone)]
pub struct Jet {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dxx: Vec<f64>,
    pub dxy: Vec<f64>,
    pub dyy: Vec<f64>,
}

impl Jet {
    pub fn new(chart: &Chart, u: &[f64], target: Target, edge: Edge) -> Self {
        let dx = d1(chart, u, 0, target, edge);
        let dy = d1(chart, u, 1, target, edge);
        let dxx = d2(chart, u, 0, target, edge);
        let dyy = d2(chart, u, 1, target, edge);
        let dxy = d1(chart, &dy, 0, Target::Linear, edge);
        Jet {
            dx,
            dy,
            dxx,
            dxy,
            dyy,
        }
    }

    /// Fourth-order jet; see [`fourth`].
    pub fn fourth_order(chart: &Chart, u: &[f64], target: Target) -> Self {
        let dy = fourth(chart, u, 1, target, 1);
        Jet {
            dx: fourth(chart, u, 0, target, 1),
            dxx: fourth(chart, u, 0, target, 2),
            dyy: fourth(chart, u, 1, target, 2),
            dxy: fourth(chart, &dy, 0, Target::Linear, 1),
            dy,
        }
    }

    /// Gradient-only jet (second derivatives left empty).
    pub fn first(chart: &Chart, u: &[f64], target: Target, edge: Edge) -> Self {
        Jet {
            dx: d1(chart, u, 0, target, edge),
            dy: d1(chart, u, 1, target, edge),
            dxx: Vec::new(),
            dxy: Vec::new(),
            dyy: Vec::new(),
        }
    }
}
