//! Parameter domains and the fields that live on them.
//!
//! A [`Chart`] is a single uniform coordinate patch. Axis 0 is `x` (or `r` on
//! the polar annulus) and axis 1 is `y` (or `θ`). Nodes are stored row-major
//! with axis 0 varying fastest: `index = j * nx + i`.

use std::f64::consts::TAU;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

/// Smallest node count accepted along either axis.
pub const MIN_NODES: usize = 8;

/// Default excised radius for polar charts.
pub const DEFAULT_R_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    /// `[0, lx] × [0, ly]`, four boundary edges.
    Rectangle { lx: f64, ly: f64 },
    /// `x` periodic with the given period, `y ∈ [0, ly]`; two boundary circles.
    Cylinder { period: f64, ly: f64 },
    /// `r ∈ [r_min, 1]`, `θ` periodic with period `2π`; two boundary circles.
    PolarAnnulus { r_min: f64 },
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Rectangle { .. } => "rectangle",
            Topology::Cylinder { .. } => "cylinder",
            Topology::PolarAnnulus { .. } => "polar-annulus",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    topology: Topology,
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    spacing: [f64; 2],
    periodic: [bool; 2],
}

impl Chart {
    pub fn new(topology: Topology, nx: usize, ny: usize) -> Result<Self> {
        if nx < MIN_NODES || ny < MIN_NODES {
            return Err(Error::InvalidDimensions { nx, ny });
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParam(format!("{name} must be positive, got {v}")))
            }
        };
        let (origin, spacing, periodic) = match topology {
            Topology::Rectangle { lx, ly } => {
                positive("lx", lx)?;
                positive("ly", ly)?;
                (
                    [0.0, 0.0],
                    [lx / (nx - 1) as f64, ly / (ny - 1) as f64],
                    [false, false],
                )
            }
            Topology::Cylinder { period, ly } => {
                positive("period", period)?;
                positive("ly", ly)?;
                (
                    [0.0, 0.0],
                    [period / nx as f64, ly / (ny - 1) as f64],
                    [true, false],
                )
            }
            Topology::PolarAnnulus { r_min } => {
                if !(r_min > 0.0 && r_min < 1.0) {
                    return Err(Error::InvalidParam(format!(
                        "r_min must lie in (0, 1), got {r_min}"
                    )));
                }
                (
                    [r_min, 0.0],
                    [(1.0 - r_min) / (nx - 1) as f64, TAU / ny as f64],
                    [false, true],
                )
            }
        };
        Ok(Chart {
            topology,
            nx,
            ny,
            origin,
            spacing,
            periodic,
        })
    }

    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new(Topology::Rectangle { lx, ly }, nx, ny)
    }

    pub fn cylinder(nx: usize, ny: usize, period: f64, ly: f64) -> Result<Self> {
        Self::new(Topology::Cylinder { period, ly }, nx, ny)
    }

    pub fn polar_annulus(nx: usize, ny: usize, r_min: f64) -> Result<Self> {
        Self::new(Topology::PolarAnnulus { r_min }, nx, ny)
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Node count along `axis`.
    pub fn len(&self, axis: usize) -> usize {
        if axis == 0 {
            self.nx
        } else {
            self.ny
        }
    }

    /// Total number of nodes.
    pub fn nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn hx(&self) -> f64 {
        self.spacing[0]
    }

    pub fn hy(&self) -> f64 {
        self.spacing[1]
    }

    pub fn periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn has_boundary(&self) -> bool {
        !(self.periodic[0] && self.periodic[1])
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, n: usize) -> (usize, usize) {
        (n % self.nx, n / self.nx)
    }

    /// Coordinate of node `k` along `axis`.
    #[inline]
    pub fn coord(&self, axis: usize, k: usize) -> f64 {
        self.origin[axis] + k as f64 * self.spacing[axis]
    }

    pub fn point(&self, n: usize) -> (f64, f64) {
        let (i, j) = self.ij(n);
        (self.coord(0, i), self.coord(1, j))
    }

    /// True if node `k` sits on a boundary end of a non-periodic axis.
    #[inline]
    pub fn on_edge(&self, axis: usize, k: usize) -> bool {
        !self.periodic[axis] && (k == 0 || k + 1 == self.len(axis))
    }

    pub fn node_kind(&self, i: usize, j: usize) -> NodeKind {
        if self.on_edge(0, i) || self.on_edge(1, j) {
            NodeKind::Boundary
        } else {
            NodeKind::Interior
        }
    }

    pub fn boundary_node_count(&self) -> usize {
        (0..self.nodes())
            .filter(|&n| {
                let (i, j) = self.ij(n);
                self.node_kind(i, j) == NodeKind::Boundary
            })
            .count()
    }

    /// One-dimensional trapezoid weight (without spacing) of node `k` on `axis`.
    #[inline]
    pub fn axis_weight(&self, axis: usize, k: usize) -> f64 {
        if self.on_edge(axis, k) {
            0.5
        } else {
            1.0
        }
    }

    /// Coordinate cell measure `w_x w_y h_x h_y` of node `n` (no metric factor).
    #[inline]
    pub fn cell_measure(&self, n: usize) -> f64 {
        let (i, j) = self.ij(n);
        self.axis_weight(0, i) * self.axis_weight(1, j) * self.spacing[0] * self.spacing[1]
    }

    /// Evaluates `f(x, y)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.nodes())
            .map(|n| {
                let (x, y) = self.point(n);
                f(x, y)
            })
            .collect()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len == self.nodes() {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.nodes(),
                got: len,
            })
        }
    }
}

/// Wraps an angle difference into `(-π, π]`.
#[inline]
pub fn wrap_angle(d: f64) -> f64 {
    d - TAU * (d / TAU).round()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn constant(chart: &Chart, value: f64) -> Self {
        ScalarField(vec![value; chart.nodes()])
    }

    pub fn from_fn(chart: &Chart, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField(chart.sample(f))
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Deref for ScalarField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ScalarField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Contravariant vector components per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Covariant symmetric 2-tensor stored as `(T11, T12, T22)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

impl SymTensorField {
    pub fn zeros(n: usize) -> Self {
        SymTensorField {
            xx: vec![0.0; n],
            xy: vec![0.0; n],
            yy: vec![0.0; n],
        }
    }

    pub fn constant(chart: &Chart, t: [f64; 3]) -> Self {
        let n = chart.nodes();
        SymTensorField {
            xx: vec![t[0]; n],
            xy: vec![t[1]; n],
            yy: vec![t[2]; n],
        }
    }

    pub fn from_fn(chart: &Chart, f: impl Fn(f64, f64) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(chart.nodes());
        for n in 0..chart.nodes() {
            let (x, y) = chart.point(n);
            let t = f(x, y);
            out.xx[n] = t[0];
            out.xy[n] = t[1];
            out.yy[n] = t[2];
        }
        out
    }

    pub fn len(&self) -> usize {
        self.xx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xx.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize) -> [f64; 3] {
        [self.xx[n], self.xy[n], self.yy[n]]
    }

    #[inline]
    pub fn set(&mut self, n: usize, t: [f64; 3]) {
        self.xx[n] = t[0];
        self.xy[n] = t[1];
        self.yy[n] = t[2];
    }

    /// `self + s * other`, node by node.
    pub fn axpy(&self, s: f64, other: &SymTensorField) -> SymTensorField {
        let lin = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + s * y).collect();
        SymTensorField {
            xx: lin(&self.xx, &other.xx),
            xy: lin(&self.xy, &other.xy),
            yy: lin(&self.yy, &other.yy),
        }
    }

    pub fn scale(&self, s: f64) -> SymTensorField {
        let sc = |a: &[f64]| a.iter().map(|x| s * x).collect();
        SymTensorField {
            xx: sc(&self.xx),
            xy: sc(&self.xy),
            yy: sc(&self.yy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentKind {
    /// Real-valued target component.
    Linear,
    /// Angle on a circle of period `2π`; differences are taken modulo the period.
    Circle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapComponent {
    pub kind: ComponentKind,
    pub values: Vec<f64>,
}

impl MapComponent {
    /// Difference `b - a` respecting the component's target.
    #[inline]
    pub fn diff(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            ComponentKind::Linear => b - a,
            ComponentKind::Circle => wrap_angle(b - a),
        }
    }

    pub fn is_circle(&self) -> bool {
        self.kind == ComponentKind::Circle
    }
}

/// Map `φ: M → ℝ^k × (S¹)^l` stored componentwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MapField {
    pub components: Vec<MapComponent>,
}

impl MapField {
    /// A single linear component with constant value.
    pub fn constant(chart: &Chart, value: f64) -> Self {
        MapField {
            components: vec![MapComponent {
                kind: ComponentKind::Linear,
                values: vec![value; chart.nodes()],
            }],
        }
    }

    pub fn from_fns(chart: &Chart, comps: &[(ComponentKind, &dyn Fn(f64, f64) -> f64)]) -> Self {
        MapField {
            components: comps
                .iter()
                .map(|(kind, f)| MapComponent {
                    kind: *kind,
                    values: chart.sample(f),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `self + s * delta` with `delta` interpreted as a tangent perturbation.
    pub fn axpy(&self, s: f64, delta: &MapField) -> MapField {
        MapField {
            components: self
                .components
                .iter()
                .zip(&delta.components)
                .map(|(c, d)| MapComponent {
                    kind: c.kind,
                    values: c.values.iter().zip(&d.values).map(|(a, b)| a + s * b).collect(),
                })
                .collect(),
        }
    }

    /// Zero tangent field with the same component layout.
    pub fn zeros_like(&self) -> MapField {
        MapField {
            components: self
                .components
                .iter()
                .map(|c| MapComponent {
                    kind: ComponentKind::Linear,
                    values: vec![0.0; c.values.len()],
                })
                .collect(),
        }
    }
}

/// SPD metric with cached inverse and area element.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    g: SymTensorField,
    inv: SymTensorField,
    sqrt_det: Vec<f64>,
}

impl MetricField {
    pub fn new(chart: &Chart, g: SymTensorField) -> Result<Self> {
        chart.check_len(g.len())?;
        let n = g.len();
        let mut inv = SymTensorField::zeros(n);
        let mut sqrt_det = vec![0.0; n];
        for k in 0..n {
            let [a, b, c] = g.at(k);
            let det = a * c - b * b;
            if !(a > 0.0 && det > 0.0) || !det.is_finite() {
                return Err(Error::NotSpd {
                    node: k,
                    g11: a,
                    det,
                });
            }
            inv.set(k, [c / det, -b / det, a / det]);
            sqrt_det[k] = det.sqrt();
        }
        Ok(MetricField { g, inv, sqrt_det })
    }

    pub fn identity(chart: &Chart) -> Self {
        Self::constant(chart, [1.0, 0.0, 1.0]).expect("identity is SPD")
    }

    pub fn constant(chart: &Chart, t: [f64; 3]) -> Result<Self> {
        Self::new(chart, SymTensorField::constant(chart, t))
    }

    /// Conformal metric `e^{2w}` times the Euclidean metric of the chart coordinates
    /// (`dx² + dy²`, or `dr² + r² dθ²` on the polar annulus).
    pub fn conformal(chart: &Chart, w: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let polar = matches!(chart.topology(), Topology::PolarAnnulus { .. });
        let g = SymTensorField::from_fn(chart, |x, y| {
            let s = (2.0 * w(x, y)).exp();
            if polar {
                [s, 0.0, s * x * x]
            } else {
                [s, 0.0, s]
            }
        });
        Self::new(chart, g)
    }

    /// Round cap: `4/(1+r²)²` times the flat polar metric (the unit sphere).
    pub fn round_cap(chart: &Chart) -> Result<Self> {
        Self::conformal(chart, |r, _| (2.0 / (1.0 + r * r)).ln())
    }

    pub fn tensor(&self) -> &SymTensorField {
        &self.g
    }

    pub fn inverse(&self) -> &SymTensorField {
        &self.inv
    }

    pub fn sqrt_det(&self) -> &[f64] {
        &self.sqrt_det
    }

    pub fn len(&self) -> usize {
        self.sqrt_det.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_det.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize) -> [f64; 3] {
        self.g.at(n)
    }

    #[inline]
    pub fn inv_at(&self, n: usize) -> [f64; 3] {
        self.inv.at(n)
    }

    /// Smallest eigenvalue of `g` over all nodes.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.len())
            .map(|n| {
                let [a, b, c] = self.at(n);
                let m = 0.5 * (a + c);
                let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                m - d
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Max-norm of `g g⁻¹ − I` over all nodes.
    pub fn inverse_defect(&self) -> f64 {
        (0..self.len())
            .map(|n| {
                let [a, b, c] = self.at(n);
                let [p, q, r] = self.inv_at(n);
                let e = [a * p + b * q - 1.0, a * q + b * r, b * p + c * q, b * q + c * r - 1.0];
                e.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
            })
            .fold(0.0, f64::max)
    }
}

/// One time slice of any flow system.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    /// Reverse time `T − t`.
    pub tau: f64,
    pub g: MetricField,
    pub phi: MapField,
    pub f: ScalarField,
    pub alpha: f64,
}

impl FlowState {
    pub fn new(g: MetricField, phi: MapField, f: ScalarField, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParam(format!("alpha must be positive, got {alpha}")));
        }
        Ok(FlowState {
            t: 0.0,
            tau: 1.0,
            g,
            phi,
            f,
            alpha,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}
