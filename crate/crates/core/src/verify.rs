//! The `verify` suites: first variations against extrapolated finite
//! differences, and the integral identities and rate formulas along flows.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;
use std::fs;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::chart::{Chart, FlowState, MapField, MetricField, ScalarField};
use crate::config::{Initial, RunConfig, System, Tolerances};
use crate::elliptic::solve_potential_f;
use crate::error::{Error, Result};
use crate::flows::{flow_geometry, run_flow, FlowSystem, PhiMode, RunOptions};
use crate::functionals::{entropy_e, f_functional, f_rate, s_field, w_functional, w_rate, WVariant};
use crate::harness::{simulate, Check, RunOutcome};
use crate::presets::Preset;
use crate::snapshot::g17;
use crate::variations::{
    analytic_delta_w, fd_delta, ibp_residual, refine_compare, reilly_residual, s_evolution_residual,
    Functional, Perturbation, RefinedComparison, DEFAULT_EPS,
};

pub const VERIFY_TEXT: &str = "verify.txt";
pub const VERIFY_JSON: &str = "verify.json";

/// Refinement levels of the variation comparisons.
pub const LEVELS: [usize; 4] = [33, 65, 129, 257];
/// States on which the first variations are compared.
pub const VARIATION_PRESETS: [Preset; 3] = [Preset::FlatSquare, Preset::RoundCap, Preset::FlatCylinder];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Variations,
    Identities,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variations" => Ok(Suite::Variations),
            "identities" => Ok(Suite::Identities),
            "all" => Ok(Suite::All),
            _ => Err(Error::Validation(format!("unknown suite '{s}' (variations, identities or all)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub json: Value,
}

impl VerifyReport {
    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}", c.line());
        }
        s
    }
}

pub fn verify(cfg: &RunConfig, suite: Suite) -> Result<VerifyReport> {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let mut json = serde_json::Map::new();
    if suite != Suite::Identities {
        let (c, j) = variation_suite(tol)?;
        checks.extend(c);
        json.insert("variations".into(), j);
    }
    if suite != Suite::Variations {
        let (c, j) = identity_suite(tol)?;
        checks.extend(c);
        json.insert("identities".into(), j);
    }
    json.insert(
        "checks".into(),
        Value::Array(
            checks
                .iter()
                .map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail}))
                .collect(),
        ),
    );
    Ok(VerifyReport {
        checks,
        json: Value::Object(json),
    })
}

/// Writes `verify.txt` and `verify.json` under `cfg.out`.
pub fn write_verify(cfg: &RunConfig, report: &VerifyReport) -> Result<()> {
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join(VERIFY_TEXT), report.text())?;
    let body = serde_json::to_string_pretty(&report.json).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(cfg.out.join(VERIFY_JSON), body + "\n")?;
    Ok(())
}

fn pairs(v: &[(&'static str, f64)]) -> Value {
    Value::Object(v.iter().map(|(k, x)| (k.to_string(), json!(x))).collect())
}

fn comparison_json(preset: Preset, direction: &str, cmp: &RefinedComparison) -> Value {
    let finest = cmp.reports.last().expect("at least two levels");
    json!({
        "preset": preset.name(),
        "direction": direction,
        "functional": cmp.functional.name(),
        "levels": cmp.levels,
        "analytic": cmp.analytic,
        "fd": cmp.fd,
        "relative_gap": cmp.relative(),
        "eps_order": cmp.eps_order,
        "h_order": cmp.h_order,
        "finest_terms": pairs(&finest.terms),
        "readings": Value::Object(cmp.readings.iter().map(|(k, v)| {
            (k.to_string(), json!({"value": v, "relative_gap": cmp.reading_relative(k)}))
        }).collect()),
        "per_level": cmp.reports.iter().zip(&cmp.levels).map(|(r, n)| json!({
            "n": n,
            "analytic": r.analytic,
            "fd_richardson": r.fd.map(|f| f.richardson),
            "fd_order": r.fd.map(|f| f.order),
        })).collect::<Vec<_>>(),
    })
}

/// Every preset × direction × functional comparison, then the reading
/// adjudications and the scale direction.
pub fn variation_suite(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let mut checks = Vec::new();
    let mut entries = Vec::new();
    let mut reading_gaps: Vec<(&'static str, f64)> = Vec::new();
    for preset in VARIATION_PRESETS {
        let c = preset.level_chart(LEVELS[0])?;
        let s = preset.variation_state(&c)?;
        let names: Vec<&str> = preset.perturbations(&c, &s).iter().map(|d| d.0).collect();
        for (k, dir) in names.into_iter().enumerate() {
            for func in [Functional::F, Functional::WRh] {
                let cmp = refine_compare(func, &LEVELS, DEFAULT_EPS, |n| {
                    let c = preset.level_chart(n)?;
                    let s = preset.variation_state(&c)?;
                    let pert = preset.perturbations(&c, &s).swap_remove(k).1;
                    Ok((c, s, pert))
                })?;
                let gap = cmp.relative();
                checks.push(Check::new(
                    format!("first variation of {} on {preset}, {dir} direction", func.name()),
                    gap <= tol.variation && cmp.eps_order >= tol.order,
                    format!(
                        "analytic {} fd {} gap {gap:.2e} (tol {:.0e}), eps order {:.2}, h order {:.2}",
                        g17(cmp.analytic),
                        g17(cmp.fd),
                        tol.variation,
                        cmp.eps_order,
                        cmp.h_order
                    ),
                ));
                for (name, _) in &cmp.readings {
                    reading_gaps.push((name, cmp.reading_relative(name).unwrap_or(f64::NAN)));
                }
                reading_gaps.push((
                    if func == Functional::F { "alpha_trace_minus" } else { "trace_c3" },
                    gap,
                ));
                entries.push(comparison_json(preset, dir, &cmp));
            }
        }
    }
    let worst = |name: &str| {
        reading_gaps
            .iter()
            .filter(|r| r.0 == name)
            .map(|r| r.1)
            .fold(0.0_f64, f64::max)
    };
    let mut adjudications = serde_json::Map::new();
    for (label, stated, alternative) in [
        ("sign of the alpha trace term in dF", "alpha_trace_minus", "alpha_trace_plus"),
        ("constant in the W trace term", "trace_c3", "trace_c2"),
        ("scale of the map flux in dF", "alpha_trace_minus", "map_flux_unscaled"),
        ("scale of the map flux in dW", "trace_c3", "map_flux_plus"),
        ("weight flux in dW", "trace_c3", "weight_flux_unscaled"),
    ] {
        let (a, b) = (worst(stated), worst(alternative));
        let verdict = match (a <= tol.variation, b <= tol.variation) {
            (true, false) => format!("FD supports {stated}"),
            (false, true) => format!("FD supports {alternative}"),
            (true, true) => "both readings agree with FD on these states".to_string(),
            (false, false) => "neither reading agrees with FD".to_string(),
        };
        checks.push(Check::new(
            format!("reading: {label}"),
            a <= tol.variation,
            format!("{verdict}; worst gap {stated} {a:.2e}, {alternative} {b:.2e}"),
        ));
        adjudications.insert(
            label.into(),
            json!({stated: a, alternative: b, "verdict": verdict}),
        );
    }
    let composed = worst("composed");
    checks.push(Check::new(
        "dW composed from dF and the scale terms",
        composed <= tol.variation,
        format!("worst gap {composed:.2e}"),
    ));

    let (sigma_checks, sigma_json) = sigma_direction(tol)?;
    checks.extend(sigma_checks);
    Ok((
        checks,
        json!({"comparisons": entries, "adjudications": adjudications, "scale_direction": sigma_json}),
    ))
}

/// `σ`-only direction on a flat square with constant `f`, where
/// `W(τ) = (f0 − 2)e^{−f0}/(4πτ)`.
fn sigma_direction(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let f0 = 0.3;
    let c = Chart::rectangle(21, 21, 1.0, 1.0)?;
    let base = FlowState::new(
        MetricField::identity(&c),
        MapField::constant(&c, 0.5),
        ScalarField::constant(&c, f0),
        1.0,
    )?;
    let mut worst = 0.0_f64;
    let mut rows = Vec::new();
    for tau in [0.5, 1.0, 2.0] {
        let s = base.clone().with_tau(tau);
        let mut p = Perturbation::zero(&s);
        p.sigma = 1.0;
        let exact = -(f0 - 2.0) * (-f0).exp() / (4.0 * PI * tau * tau);
        let analytic = analytic_delta_w(&c, &s, &p)?.analytic;
        let fd = fd_delta(Functional::WRh, &c, &s, &p, DEFAULT_EPS)?.richardson;
        worst = worst.max((analytic - exact).abs()).max((fd - exact).abs());
        rows.push(json!({"tau": tau, "exact": exact, "analytic": analytic, "fd": fd}));
    }
    let check = Check::new(
        "scale direction of W against its closed form",
        worst <= tol.sigma,
        format!("max error {worst:.2e} (tol {:.0e})", tol.sigma),
    );
    Ok((vec![check], Value::Array(rows)))
}

fn order(a: f64, b: f64) -> f64 {
    (a / b).abs().log2()
}

pub fn identity_suite(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let mut checks = Vec::new();
    let mut json = serde_json::Map::new();

    // Reilly on the flat square: ∫2(Δf)² = 2∫|∇²f|² = 2π⁴ for cos(πx)cos(πy)
    let reilly = |n: usize| -> Result<_> {
        let c = Chart::rectangle(n, n, 1.0, 1.0)?;
        let f = c.sample(|x, y| (PI * x).cos() * (PI * y).cos());
        reilly_residual(&c, &MetricField::identity(&c), &f)
    };
    let (coarse, fine) = (reilly(64)?, reilly(128)?);
    let target = 2.0 * PI.powi(4);
    let (el, eh) = ((fine.laplacian_sq - target) / target, (fine.hessian_sq - target) / target);
    checks.push(Check::new(
        "Reilly identity on the flat square, 128x128",
        el.abs() <= tol.reilly && eh.abs() <= tol.reilly && fine.residual.abs() <= tol.reilly * PI.powi(4),
        format!(
            "laplacian {} hessian {} target {} residual {:.3e}, order {:.2}",
            g17(fine.laplacian_sq),
            g17(fine.hessian_sq),
            g17(target),
            fine.residual,
            order(coarse.residual, fine.residual)
        ),
    ));
    json.insert(
        "reilly_flat".into(),
        json!({"n": [64, 128], "laplacian_sq": [coarse.laplacian_sq, fine.laplacian_sq],
               "hessian_sq": [coarse.hessian_sq, fine.hessian_sq], "residual": [coarse.residual, fine.residual]}),
    );

    // the same identity and its integrated-by-parts form on the perturbed cap
    let mut reilly_cap = Vec::new();
    let mut ibp = Vec::new();
    for n in [17, 33, 65] {
        let p = Preset::PerturbedCap;
        let c = p.level_chart(n)?;
        let s = p.state(&c, 1.0)?;
        let f = solve_potential_f(&c, &s.g, &s.phi, 1.0, 1e-12)?;
        let geo = crate::calculus::Geometry::new(&c, &s.g);
        let (sf, _) = s_field(&geo, &s.phi, 1.0);
        reilly_cap.push(reilly_residual(&c, &s.g, &f)?.residual);
        ibp.push(ibp_residual(&c, &s.g, &f, &sf)?);
    }
    let ro = order(reilly_cap[1], reilly_cap[2]);
    checks.push(Check::new(
        "Reilly identity on the perturbed cap converges",
        ro >= tol.order - 0.2,
        format!("residuals {:.3e} {:.3e} {:.3e}, order {ro:.2}", reilly_cap[0], reilly_cap[1], reilly_cap[2]),
    ));
    let io = order(ibp[1], ibp[2]);
    checks.push(Check::new(
        "entropy-rate integration by parts on the perturbed cap converges",
        io >= tol.order - 0.2,
        format!("residuals {:.3e} {:.3e} {:.3e}, order {io:.2}", ibp[0], ibp[1], ibp[2]),
    ));
    json.insert("reilly_cap".into(), json!({"n": [17, 33, 65], "residual": reilly_cap}));
    json.insert("ibp_cap".into(), json!({"n": [17, 33, 65], "residual": ibp}));

    let (c, j) = s_evolution_check(tol)?;
    checks.extend(c);
    json.insert("s_evolution".into(), j);

    let (c, j) = scenario_checks(tol)?;
    checks.extend(c);
    json.insert("scenarios".into(), j);

    let (c, j) = reduction_checks(tol)?;
    checks.extend(c);
    json.insert("reductions".into(), j);
    Ok((checks, Value::Object(json)))
}

/// Cylinder pseudo-flow at 64x32, dt = 1e-3, and at twice the resolution.
fn s_evolution_check(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let run = |nx: usize, ny: usize, dt: f64| -> Result<f64> {
        let p = Preset::FlatCylinder;
        let c = p.chart(nx, ny)?;
        let s = p.state(&c, 1.0)?;
        let traj = run_flow(&c, &s, FlowSystem::Pseudo, 0.5, dt, RunOptions::default())?;
        Ok(s_evolution_residual(&traj)?.into_iter().fold(0.0, f64::max))
    };
    let (a, b) = (run(64, 32, 1e-3)?, run(128, 64, 5e-4)?);
    let ratio = a / b;
    Ok((
        vec![Check::new(
            "S evolution on the cylinder",
            a <= tol.s_evolution && ratio >= 3.0,
            format!("max residual {a:.3e} (tol {:.0e}); refined {b:.3e}, reduction x{ratio:.2}", tol.s_evolution),
        )],
        json!({"coarse": a, "refined": b, "reduction": ratio}),
    ))
}

fn scenario(preset: Preset, system: System, alpha: f64, t_end: f64, dt: f64, grid: (usize, usize), tol: &Tolerances) -> RunConfig {
    RunConfig {
        initial: Initial::Preset(preset),
        system,
        alpha,
        t_end,
        dt,
        grid,
        mode: PhiMode::HoldPhi,
        out: Default::default(),
        snapshot_every: 1,
        tolerances: tol.clone(),
    }
}

fn labelled(cfg: &RunConfig, out: &RunOutcome) -> Vec<Check> {
    out.checks
        .iter()
        .map(|c| Check {
            name: format!("{} {}: {}", cfg.scenario_name(), cfg.system, c.name),
            ..c.clone()
        })
        .collect()
}

fn max_conjheat(out: &RunOutcome, t_max: f64) -> f64 {
    out.rows
        .iter()
        .filter(|r| r.t <= t_max && !r.conjheat.is_nan())
        .fold(0.0, |m, r| m.max(r.conjheat))
}

/// Runs with closed forms or sign structure: the cylinder under all three
/// systems and both caps under the pseudo-flow.
pub fn scenario_checks(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let mut checks = Vec::new();
    let mut json = serde_json::Map::new();
    let cyl = Preset::FlatCylinder;

    let cfg = scenario(cyl, System::Ps, 1.0, 0.5, 1e-3, (64, 32), tol);
    let out = simulate(&cfg)?;
    let last = out.trajectory.last();
    let exact = 1.0 + 2.0 * last.t;
    let gxx = last.g.tensor().xx.iter().fold(0.0_f64, |m, v| m.max((v - exact).abs())) / exact;
    checks.push(Check::new(
        "flat-cylinder-circle-map ps: metric closed form",
        gxx <= 1e-6,
        format!("max relative error of g_xx at t = {} is {gxx:.3e}", g17(last.t)),
    ));
    checks.extend(labelled(&cfg, &out));
    json.insert("cylinder_ps".into(), json!({"gxx_error": gxx, "rows": out.rows.len()}));

    let cfg = scenario(cyl, System::Q3, 1.0, 0.5, 1e-3, (64, 32), tol);
    let out = simulate(&cfg)?;
    checks.extend(labelled(&cfg, &out));
    json.insert("cylinder_q3".into(), rows_json(&out));

    let coarse = simulate(&scenario(cyl, System::P2, 1.0, 1.0, 2e-3, (32, 16), tol))?;
    let cfg = scenario(cyl, System::P2, 1.0, 1.0, 1e-3, (64, 32), tol);
    let out = simulate(&cfg)?;
    checks.extend(labelled(&cfg, &out));
    let t_max = tol.w_window * cfg.t_end;
    let (hc, hf) = (max_conjheat(&coarse, t_max), max_conjheat(&out, t_max));
    checks.push(Check::new(
        "flat-cylinder-circle-map p2: conjugate heat residual decreases under refinement",
        hf < hc,
        format!("t <= {}: {hc:.3e} at 32x16, dt 2e-3; {hf:.3e} at 64x32, dt 1e-3", g17(t_max)),
    ));
    json.insert("cylinder_p2".into(), rows_json(&out));

    for preset in [Preset::RoundCap, Preset::PerturbedCap] {
        let cfg = scenario(preset, System::Ps, 1.0, 0.02, 5e-4, preset.default_grid(), tol);
        let out = simulate(&cfg)?;
        checks.extend(labelled(&cfg, &out));
        json.insert(format!("{}_ps", preset.name()), rows_json(&out));
    }
    Ok((checks, Value::Object(json)))
}

fn rows_json(out: &RunOutcome) -> Value {
    // serde_json writes NaN as null
    let col = |f: fn(&crate::harness::TraceRow) -> f64| -> Vec<Value> { out.rows.iter().map(|r| json!(f(r))).collect() };
    json!({
        "t": col(|r| r.t),
        "E": col(|r| r.e),
        "dE_fd": col(|r| r.de_fd),
        "dE_rhs": col(|r| r.de_rhs),
        "F": col(|r| r.f),
        "dF_fd": col(|r| r.df_fd),
        "dF_rhs": col(|r| r.df_rhs),
        "W_RH": col(|r| r.w_rh),
        "dW_fd": col(|r| r.dw_fd),
        "dW_rhs": col(|r| r.dw_rhs),
        "conjheat": col(|r| r.conjheat),
        "checks": out.checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect::<Vec<_>>(),
    })
}

/// Exact collapses at `α = 0` or constant `φ`, and invariance under circle
/// relabeling and periodic shifts.
pub fn reduction_checks(tol: &Tolerances) -> Result<(Vec<Check>, Value)> {
    let mut checks = Vec::new();
    let cyl = Preset::FlatCylinder;
    let c = cyl.level_chart(17)?;
    let s = cyl.variation_state(&c)?;
    let geo = flow_geometry(&c, &s.g);
    let w = |phi: &MapField, alpha: f64, v| w_functional(&geo, phi, &s.f, s.tau, alpha, v);
    let map_addend = |phi: &MapField, alpha: f64| f_rate(&geo, phi, &s.f, alpha, 0.0).get("tension").unwrap_or(f64::NAN);
    let constant = MapField::constant(&c, 0.4);
    let zero_alpha = (w(&s.phi, 0.0, WVariant::Rh)?, w(&s.phi, 0.0, WVariant::Perelman)?, map_addend(&s.phi, 0.0));
    let const_map = (
        w(&constant, s.alpha, WVariant::Rh)?,
        w(&constant, s.alpha, WVariant::Perelman)?,
        map_addend(&constant, s.alpha),
    );
    let exact = |t: (f64, f64, f64)| t.0 == t.1 && t.2 == 0.0;
    checks.push(Check::new(
        "reduction to the uncoupled functionals",
        exact(zero_alpha) && exact(const_map),
        format!(
            "alpha = 0: W_RH {} W {} map addend {}; constant map: W_RH {} W {} map addend {}",
            g17(zero_alpha.0),
            g17(zero_alpha.1),
            g17(zero_alpha.2),
            g17(const_map.0),
            g17(const_map.1),
            g17(const_map.2)
        ),
    ));

    let mut shifted = s.clone();
    for comp in &mut shifted.phi.components {
        if comp.is_circle() {
            comp.values.iter_mut().for_each(|v| *v += 3.0 * TAU);
        }
    }
    let relabel = max_change(&c, &s, &c, &shifted)?;
    let mut worst_shift = 0.0_f64;
    for preset in [Preset::FlatCylinder, Preset::PerturbedCap] {
        let c = preset.level_chart(17)?;
        let s = preset.variation_state(&c)?;
        // shift by 3 nodes along the periodic axis
        let (c2, s2) = roll(&c, &s, 3);
        worst_shift = worst_shift.max(max_change(&c, &s, &c2, &s2)?);
    }
    checks.push(Check::new(
        "circle relabeling and periodic shifts",
        relabel <= tol.invariance && worst_shift <= tol.invariance,
        format!("max relative change: relabel {relabel:.2e}, shift {worst_shift:.2e} (tol {:.0e})", tol.invariance),
    ));
    Ok((
        checks,
        json!({"alpha_zero": [zero_alpha.0, zero_alpha.1, zero_alpha.2], "constant_map": [const_map.0, const_map.1, const_map.2],
               "relabel": relabel, "shift": worst_shift}),
    ))
}

fn functionals_of(c: &Chart, s: &FlowState) -> Result<Vec<f64>> {
    let geo = flow_geometry(c, &s.g);
    let mut v = vec![
        f_functional(&geo, &s.phi, &s.f, s.alpha),
        w_functional(&geo, &s.phi, &s.f, s.tau, s.alpha, WVariant::Rh)?,
        w_functional(&geo, &s.phi, &s.f, s.tau, s.alpha, WVariant::Perelman)?,
        f_rate(&geo, &s.phi, &s.f, s.alpha, 0.0).total,
        w_rate(&geo, &s.phi, &s.f, s.tau, s.alpha, 0.0)?.total,
    ];
    if let Ok(e) = entropy_e(&geo, &s.phi, s.alpha) {
        v.push(e);
    }
    Ok(v)
}

fn max_change(c1: &Chart, s1: &FlowState, c2: &Chart, s2: &FlowState) -> Result<f64> {
    let (a, b) = (functionals_of(c1, s1)?, functionals_of(c2, s2)?);
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(1.0))
        .fold(0.0, f64::max))
}

/// Relabels nodes `k → k + m` along the periodic axis.
fn roll(c: &Chart, s: &FlowState, m: usize) -> (Chart, FlowState) {
    let axis = if c.periodic(0) { 0 } else { 1 };
    let len = c.len(axis);
    let src = |p: usize| {
        let (i, j) = c.ij(p);
        if axis == 0 {
            c.idx((i + m) % len, j)
        } else {
            c.idx(i, (j + m) % len)
        }
    };
    let perm = |v: &[f64]| -> Vec<f64> { (0..v.len()).map(|p| v[src(p)]).collect() };
    let t = s.g.tensor();
    let mut g = t.clone();
    g.xx = perm(&t.xx);
    g.xy = perm(&t.xy);
    g.yy = perm(&t.yy);
    let mut phi = s.phi.clone();
    for comp in &mut phi.components {
        comp.values = perm(&comp.values);
    }
    let state = FlowState {
        g: MetricField::new(c, g).expect("a permuted metric stays positive"),
        phi,
        f: ScalarField(perm(&s.f)),
        ..s.clone()
    };
    (c.clone(), state)
}
