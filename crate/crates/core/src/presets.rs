//! Named initial states and the fixed perturbation directions used by the
//! verifiers.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::chart::{Chart, ComponentKind, FlowState, MapField, MetricField, ScalarField, SymTensorField};
use crate::error::{Error, Result};
use crate::functionals::s_field;
use crate::calculus::Geometry;
use crate::stencil::{d1, Edge, Target};
use crate::variations::Perturbation;

/// Amplitude of the conformal bump on the perturbed cap.
pub const CAP_BUMP: f64 = 0.03;

/// Inner radius of both caps. Larger than the chart default so the angular
/// spacing on the inner circle does not throttle the explicit step.
pub const CAP_R_MIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    FlatSquare,
    FlatCylinder,
    RoundCap,
    PerturbedCap,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::FlatSquare,
        Preset::FlatCylinder,
        Preset::RoundCap,
        Preset::PerturbedCap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FlatSquare => "flat-square",
            Preset::FlatCylinder => "flat-cylinder-circle-map",
            Preset::RoundCap => "round-cap",
            Preset::PerturbedCap => "perturbed-cap",
        }
    }

    /// Default `(nx, ny)`.
    pub fn default_grid(self) -> (usize, usize) {
        match self {
            Preset::FlatSquare => (33, 33),
            Preset::FlatCylinder => (64, 32),
            Preset::RoundCap | Preset::PerturbedCap => (65, 100),
        }
    }

    pub fn chart(self, nx: usize, ny: usize) -> Result<Chart> {
        match self {
            Preset::FlatSquare => Chart::rectangle(nx, ny, 1.0, 1.0),
            Preset::FlatCylinder => Chart::cylinder(nx, ny, TAU, 1.0),
            Preset::RoundCap | Preset::PerturbedCap => Chart::polar_annulus(nx, ny, CAP_R_MIN),
        }
    }

    /// Chart whose non-periodic axes carry `n` nodes and whose periodic axis
    /// carries `2(n − 1)`, so that `n → 2n − 1` halves every spacing.
    pub fn level_chart(self, n: usize) -> Result<Chart> {
        match self {
            Preset::FlatSquare => self.chart(n, n),
            Preset::FlatCylinder => self.chart(2 * (n - 1), n),
            Preset::RoundCap | Preset::PerturbedCap => self.chart(n, 2 * (n - 1)),
        }
    }

    pub fn metric(self, chart: &Chart) -> Result<MetricField> {
        match self {
            Preset::FlatSquare | Preset::FlatCylinder => Ok(MetricField::identity(chart)),
            Preset::RoundCap => MetricField::round_cap(chart),
            Preset::PerturbedCap => {
                MetricField::conformal(chart, |r, th| (2.0 / (1.0 + r * r)).ln() + CAP_BUMP * cap_bump(r, th))
            }
        }
    }

    pub fn map(self, chart: &Chart) -> MapField {
        match self {
            Preset::FlatCylinder => MapField::from_fns(chart, &[(ComponentKind::Circle, &|x, _| x)]),
            _ => MapField::constant(chart, 0.0),
        }
    }

    /// Initial state with `f = 0`.
    pub fn state(self, chart: &Chart, alpha: f64) -> Result<FlowState> {
        FlowState::new(self.metric(chart)?, self.map(chart), ScalarField::constant(chart, 0.0), alpha)
    }

    /// State with a fixed smooth Neumann potential, `α` and `τ = 1`, used by
    /// the first-variation checks.
    pub fn variation_state(self, chart: &Chart) -> Result<FlowState> {
        let (a, b, x0) = self.frequencies();
        let f = ScalarField::from_fn(chart, |x, y| match self {
            Preset::FlatCylinder => 0.2 * x.cos() + 0.1 * (PI * y).cos(),
            Preset::FlatSquare => 0.2 * (a * x).cos() * (b * y).cos(),
            _ => 0.1 * (a * (x - x0)).cos() * (1.0 + 0.5 * y.cos()),
        });
        let alpha = if self == Preset::FlatCylinder { 0.7 } else { 1.0 };
        Ok(FlowState::new(self.metric(chart)?, self.map(chart), f, alpha)?.with_tau(1.0))
    }

    /// Wave numbers `(a, b)` of the Neumann cosines along each axis and the
    /// lower end of axis 0.
    fn frequencies(self) -> (f64, f64, f64) {
        match self {
            Preset::FlatSquare => (PI, PI, 0.0),
            Preset::FlatCylinder => (1.0, PI, 0.0),
            Preset::RoundCap | Preset::PerturbedCap => (PI / (1.0 - CAP_R_MIN), 1.0, CAP_R_MIN),
        }
    }

    /// Three fixed directions: metric only, potential and map, and all slots
    /// including `σ`. `h` and `θ` have vanishing normal derivative.
    pub fn perturbations(self, chart: &Chart, state: &FlowState) -> Vec<(&'static str, Perturbation)> {
        let (a, b, x0) = self.frequencies();
        let ca = move |x: f64| (a * (x - x0)).cos();
        let sa = move |x: f64| (a * (x - x0)).sin();
        let cb = move |y: f64| (b * y).cos();
        let polar = matches!(self, Preset::RoundCap | Preset::PerturbedCap);
        let v = SymTensorField::from_fn(chart, |x, y| {
            let s = if polar { x * x } else { 1.0 };
            [
                0.5 + 0.3 * ca(x) * cb(y) + 0.2 * (x * y).sin(),
                0.1 * sa(x) * (1.0 + cb(y)),
                s * (0.4 - 0.2 * ca(2.0 * x) + 0.1 * cb(y)),
            ]
        });
        let h = ScalarField::from_fn(chart, |x, y| ca(x) * cb(y) + 0.3 * cb(2.0 * y));
        let mut theta = state.phi.zeros_like();
        let th = chart.sample(|x, y| 0.5 * ca(2.0 * x) + 0.2 * cb(y));
        for c in &mut theta.components {
            c.values = th.clone();
        }
        let base = Perturbation::zero(state);
        let metric = Perturbation {
            v: v.clone(),
            ..base.clone()
        };
        let potential = Perturbation {
            h: h.clone(),
            theta: theta.clone(),
            ..base.clone()
        };
        let mixed = Perturbation {
            v,
            h,
            theta,
            sigma: 0.5,
            ..base
        };
        vec![("metric", metric), ("potential-map", potential), ("mixed", mixed)]
    }

    /// Checks the hypotheses the preset is meant to realize: `S > 0` on the
    /// caps and Neumann data for `f` and every map component.
    pub fn validate(self, chart: &Chart, state: &FlowState) -> Result<()> {
        if matches!(self, Preset::RoundCap | Preset::PerturbedCap) {
            let geo = Geometry::new(chart, &state.g);
            let (s, _) = s_field(&geo, &state.phi, state.alpha);
            if let Some(p) = s.iter().position(|&v| !(v > 0.0)) {
                let (i, j) = chart.ij(p);
                return Err(Error::NonPositiveS { i, j, value: s[p] });
            }
        }
        let worst = |u: &[f64], target: Target| {
            let mut m = 0.0_f64;
            for axis in 0..2 {
                if chart.periodic(axis) {
                    continue;
                }
                let d = d1(chart, u, axis, target, Edge::OneSided);
                for p in 0..chart.nodes() {
                    let (i, j) = chart.ij(p);
                    if chart.on_edge(axis, if axis == 0 { i } else { j }) {
                        m = m.max(d[p].abs());
                    }
                }
            }
            m
        };
        // one-sided differences of a Neumann field are O(h²)
        let tol = 1e-6 + 10.0 * chart.spacing(0).max(chart.spacing(1)).powi(2);
        if worst(&state.f, Target::Linear) > tol {
            return Err(Error::HypothesisViolation(format!("{}: f is not Neumann", self.name())));
        }
        for c in &state.phi.components {
            if worst(&c.values, Target::from(c)) > tol {
                return Err(Error::HypothesisViolation(format!("{}: map is not Neumann", self.name())));
            }
        }
        Ok(())
    }
}

/// `cos(πs) + 0.3 sin²(πs)cos θ` with `s = (r − r_min)/(1 − r_min)`.
///
/// Both addends have vanishing `r`-derivative at the two boundary circles and
/// the angular part vanishes to second order at the inner one.
pub fn cap_bump(r: f64, th: f64) -> f64 {
    let s = PI * (r - CAP_R_MIN) / (1.0 - CAP_R_MIN);
    s.cos() + 0.3 * s.sin().powi(2) * th.cos()
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown scenario '{s}'")))
    }
}
