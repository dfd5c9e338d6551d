//! Plain-text snapshots: a short header followed by one row per node.
//!
//! ```text
//! # rhflow snapshot
//! chart polar-annulus 65 100 0.2
//! t 0.0050000000000000001
//! tau 1
//! alpha 1
//! map linear
//! # g11 g12 g22 phi0 f
//! 1.2 0 1.2 0 0
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::chart::{Chart, ComponentKind, FlowState, MapComponent, MapField, MetricField, ScalarField, SymTensorField, Topology};
use crate::error::{Error, Result};

const MAGIC: &str = "# rhflow snapshot";

/// C's `%.17g`: shortest fixed or exponent form with 17 significant digits.
pub fn g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let e = format!("{x:.16e}");
    let (mant, exp) = e.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        trim_zeros(format!("{:.*}", (16 - exp) as usize, x))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mant.to_string()), sign, exp.abs())
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

/// `%.17g`-style parse; accepts what [`g17`] writes.
fn parse_num(tok: &str, line: usize, column: usize) -> Result<f64> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        column,
        message: format!("expected a number, got '{tok}'"),
    })
}

pub fn chart_spec(chart: &Chart) -> String {
    let (nx, ny) = (chart.nx(), chart.ny());
    match chart.topology() {
        Topology::Rectangle { lx, ly } => format!("rectangle {nx} {ny} {} {}", g17(lx), g17(ly)),
        Topology::Cylinder { period, ly } => format!("cylinder {nx} {ny} {} {}", g17(period), g17(ly)),
        Topology::PolarAnnulus { r_min } => format!("polar-annulus {nx} {ny} {}", g17(r_min)),
    }
}

/// Inverse of [`chart_spec`] on the whitespace-separated tokens after `chart`.
pub fn parse_chart_spec(toks: &[&str], line: usize) -> Result<Chart> {
    let bad = |message: String| Error::Parse {
        line,
        column: 1,
        message,
    };
    let int = |k: usize| -> Result<usize> {
        toks.get(k)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(format!("chart field {k} must be a node count")))
    };
    let num = |k: usize| -> Result<f64> {
        toks.get(k)
            .ok_or_else(|| bad(format!("chart field {k} missing")))
            .and_then(|t| parse_num(t, line, 1))
    };
    let kind = toks.first().copied().unwrap_or("");
    let arity = match kind {
        "rectangle" | "cylinder" => 5,
        "polar-annulus" => 4,
        "torus" => return Err(Error::Validation("torus charts have no boundary".into())),
        _ => return Err(bad(format!("unknown chart '{kind}'"))),
    };
    if toks.len() != arity {
        return Err(bad(format!("chart '{kind}' takes {} fields", arity - 1)));
    }
    let (nx, ny) = (int(1)?, int(2)?);
    let topology = match kind {
        "rectangle" => Topology::Rectangle { lx: num(3)?, ly: num(4)? },
        "cylinder" => Topology::Cylinder { period: num(3)?, ly: num(4)? },
        _ => Topology::PolarAnnulus { r_min: num(3)? },
    };
    Chart::new(topology, nx, ny)
}

pub fn write_snapshot(chart: &Chart, state: &FlowState) -> String {
    let mut out = String::new();
    let kinds: Vec<&str> = state
        .phi
        .components
        .iter()
        .map(|c| if c.is_circle() { "circle" } else { "linear" })
        .collect();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "chart {}", chart_spec(chart));
    let _ = writeln!(out, "t {}", g17(state.t));
    let _ = writeln!(out, "tau {}", g17(state.tau));
    let _ = writeln!(out, "alpha {}", g17(state.alpha));
    let _ = writeln!(out, "map {}", kinds.join(" "));
    let mut cols = vec!["g11".to_string(), "g12".into(), "g22".into()];
    cols.extend((0..kinds.len()).map(|k| format!("phi{k}")));
    cols.push("f".into());
    let _ = writeln!(out, "# {}", cols.join(" "));
    for p in 0..chart.nodes() {
        let g = state.g.at(p);
        let mut row: Vec<String> = g.iter().map(|&v| g17(v)).collect();
        row.extend(state.phi.components.iter().map(|c| g17(c.values[p])));
        row.push(g17(state.f[p]));
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn read_snapshot(text: &str) -> Result<(Chart, FlowState)> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut next = |what: &str| {
        lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .ok_or_else(|| Error::Parse {
                line: 0,
                column: 0,
                message: format!("snapshot ends before {what}"),
            })
    };
    let mut field = |key: &str| -> Result<(usize, Vec<String>)> {
        let (n, l) = next(key)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&key) {
            return Err(Error::Parse {
                line: n,
                column: 1,
                message: format!("expected '{key}'"),
            });
        }
        Ok((n, toks[1..].iter().map(|s| s.to_string()).collect()))
    };
    let scalar = |(n, v): (usize, Vec<String>)| -> Result<f64> {
        match v.as_slice() {
            [x] => parse_num(x, n, 1),
            _ => Err(Error::Parse {
                line: n,
                column: 1,
                message: "expected one value".into(),
            }),
        }
    };
    let (n, spec) = field("chart")?;
    let chart = parse_chart_spec(&spec.iter().map(String::as_str).collect::<Vec<_>>(), n)?;
    let t = scalar(field("t")?)?;
    let tau = scalar(field("tau")?)?;
    let alpha = scalar(field("alpha")?)?;
    let (n, kinds) = field("map")?;
    let kinds = kinds
        .iter()
        .map(|k| match k.as_str() {
            "linear" => Ok(ComponentKind::Linear),
            "circle" => Ok(ComponentKind::Circle),
            other => Err(Error::Parse {
                line: n,
                column: 1,
                message: format!("unknown map component '{other}'"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let width = 4 + kinds.len();
    let nodes = chart.nodes();
    let mut g = SymTensorField::zeros(nodes);
    let mut phi: Vec<Vec<f64>> = vec![Vec::with_capacity(nodes); kinds.len()];
    let mut f = Vec::with_capacity(nodes);
    for p in 0..nodes {
        let (n, l) = next("all node rows")?;
        let row = l
            .split_whitespace()
            .enumerate()
            .map(|(k, tok)| parse_num(tok, n, k + 1))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != width {
            return Err(Error::Parse {
                line: n,
                column: 1,
                message: format!("expected {width} columns, got {}", row.len()),
            });
        }
        g.set(p, [row[0], row[1], row[2]]);
        for (k, c) in phi.iter_mut().enumerate() {
            c.push(row[3 + k]);
        }
        f.push(row[width - 1]);
    }
    if let Some((n, _)) = next("").ok() {
        return Err(Error::Parse {
            line: n,
            column: 1,
            message: format!("more than {nodes} node rows"),
        });
    }
    let phi = MapField {
        components: kinds
            .into_iter()
            .zip(phi)
            .map(|(kind, values)| MapComponent { kind, values })
            .collect(),
    };
    let mut state = FlowState::new(MetricField::new(&chart, g)?, phi, ScalarField(f), alpha)?;
    state.t = t;
    state.tau = tau;
    Ok((chart, state))
}

pub fn load_snapshot(path: &Path) -> Result<(Chart, FlowState)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_snapshot(&text)
}
