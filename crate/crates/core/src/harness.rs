//! Scenario runner: flows a configured state, writes the snapshots, the
//! entropy trace and the identity report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::chart::{Chart, Topology};
use crate::config::{Initial, RunConfig, System, Tolerances};
use crate::elliptic::solve_potential_f_on;
use crate::error::{Error, Result};
use crate::flows::{flow_geometry, metric_velocity, run_flow, FlowSystem, RunOptions, Trajectory};
use crate::functionals::{
    conjugate_heat_residual, entropy_e, entropy_e_rate, f_functional, f_rate, heat_weight, s_field,
    w_functional, w_rate, WVariant,
};
use crate::presets::Preset;
use crate::snapshot::{g17, write_snapshot};

pub const TRACE_FILE: &str = "trace.csv";
pub const IDENTITY_FILE: &str = "identities.txt";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// Tolerance of the per-row potential solves.
const SOLVE_TOL: f64 = 1e-12;

pub const TRACE_COLUMNS: [&str; 16] = [
    "t",
    "tau",
    "E_entropy",
    "F",
    "W_RH",
    "W_Perelman",
    "dE_fd",
    "dE_rhs",
    "dF_fd",
    "dF_rhs",
    "dW_fd",
    "dW_rhs",
    "min_S",
    "min_kg",
    "max_tension_residual",
    "conjheat_residual",
];

/// One row of the entropy trace. Quantities that do not apply to the run's
/// system, and time differences at the two ends, are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub tau: f64,
    pub e: f64,
    pub f: f64,
    pub w_rh: f64,
    pub w_perelman: f64,
    pub de_fd: f64,
    pub de_rhs: f64,
    pub df_fd: f64,
    pub df_rhs: f64,
    pub dw_fd: f64,
    pub dw_rhs: f64,
    pub min_s: f64,
    pub min_kg: f64,
    pub max_tension: f64,
    pub conjheat: f64,
}

impl TraceRow {
    pub fn values(&self) -> [f64; 16] {
        [
            self.t,
            self.tau,
            self.e,
            self.f,
            self.w_rh,
            self.w_perelman,
            self.de_fd,
            self.de_rhs,
            self.df_fd,
            self.df_rhs,
            self.dw_fd,
            self.dw_rhs,
            self.min_s,
            self.min_kg,
            self.max_tension,
            self.conjheat,
        ]
    }

    fn nan(t: f64, tau: f64) -> Self {
        let n = f64::NAN;
        TraceRow {
            t,
            tau,
            e: n,
            f: n,
            w_rh: n,
            w_perelman: n,
            de_fd: n,
            de_rhs: n,
            df_fd: n,
            df_rhs: n,
            dw_fd: n,
            dw_rhs: n,
            min_s: n,
            min_kg: n,
            max_tension: n,
            conjheat: n,
        }
    }
}

/// Volume and boundary addends of the entropy rate at one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyAddends {
    pub map: f64,
    pub gradient: f64,
    pub hessian: f64,
    pub boundary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// Informational line; always passes.
    pub fn note(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Check::new(name, true, detail)
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Process exit code for a list of checks: 0 if all pass, else 1.
pub fn exit_code(checks: &[Check]) -> i32 {
    if checks.iter().all(|c| c.passed) {
        0
    } else {
        1
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub rows: Vec<TraceRow>,
    pub entropy: Vec<Option<EntropyAddends>>,
    pub checks: Vec<Check>,
}

fn flow_system(s: System) -> FlowSystem {
    match s {
        System::Ps => FlowSystem::Pseudo,
        System::Q3 => FlowSystem::FFlow,
        System::P2 => FlowSystem::WFlow,
    }
}

/// `|a − b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Centered time differences of a column; NaN at the two ends.
pub fn centered_rates(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|k| {
            if k == 0 || k + 1 == n {
                f64::NAN
            } else {
                (v[k + 1] - v[k - 1]) / (t[k + 1] - t[k - 1])
            }
        })
        .collect()
}

/// Flows the configured state and evaluates every trace column and check.
/// Nothing is written to disk.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome> {
    let (chart, s0) = cfg.initial_state()?;
    let opts = RunOptions {
        mode: cfg.mode,
        strict: None,
    };
    let traj = run_flow(&chart, &s0, flow_system(cfg.system), cfg.t_end, cfg.dt, opts)?;
    let (rows, entropy) = trace(cfg.system, &traj)?;
    let coarse = match entropy_companion(cfg, &chart, &rows) {
        Some(c) => Some(simulate_rows(&c)?),
        None => None,
    };
    let checks = run_checks(cfg, &rows, &entropy, coarse.as_deref());
    Ok(RunOutcome {
        trajectory: traj,
        rows,
        entropy,
        checks,
    })
}

fn simulate_rows(cfg: &RunConfig) -> Result<Vec<TraceRow>> {
    let (chart, s0) = cfg.initial_state()?;
    let opts = RunOptions {
        mode: cfg.mode,
        strict: None,
    };
    let traj = run_flow(&chart, &s0, flow_system(cfg.system), cfg.t_end, cfg.dt, opts)?;
    Ok(trace(cfg.system, &traj)?.0)
}

/// Every other node along an axis, if that lands on the same lattice.
fn halve(n: usize, periodic: bool) -> Option<usize> {
    match periodic {
        true if n % 2 == 0 && n >= 8 => Some(n / 2),
        false if n % 2 == 1 && n >= 9 => Some(n.div_ceil(2)),
        _ => None,
    }
}

/// Half-resolution run used to extrapolate the entropy rates in h. Both rate
/// columns are second-order approximations, so at a single grid their gap is
/// O(h²) rather than a statement about the identity.
fn entropy_companion(cfg: &RunConfig, chart: &Chart, rows: &[TraceRow]) -> Option<RunConfig> {
    if cfg.system != System::Ps || !matches!(cfg.initial, Initial::Preset(_)) {
        return None;
    }
    if !rows.iter().all(|r| r.e.is_finite()) || max_over(rows.iter().map(|r| r.e.abs())) <= cfg.tolerances.entropy_zero {
        return None;
    }
    let (px, py) = match chart.topology() {
        Topology::Rectangle { .. } => (false, false),
        Topology::Cylinder { .. } => (true, false),
        Topology::PolarAnnulus { .. } => (false, true),
    };
    let grid = (halve(cfg.grid.0, px)?, halve(cfg.grid.1, py)?);
    Some(RunConfig { grid, ..cfg.clone() })
}

/// Trace rows of a trajectory produced by `system`.
pub fn trace(system: System, traj: &Trajectory) -> Result<(Vec<TraceRow>, Vec<Option<EntropyAddends>>)> {
    let chart = &traj.chart;
    let n = traj.len();
    let mut rows = Vec::with_capacity(n);
    let mut entropy = Vec::with_capacity(n);
    let times: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
    for (k, st) in traj.states.iter().enumerate() {
        let geo = flow_geometry(chart, &st.g);
        let mut row = TraceRow::nan(st.t, st.tau);
        let (s, _) = s_field(&geo, &st.phi, st.alpha);
        row.min_s = s.iter().cloned().fold(f64::INFINITY, f64::min);
        row.min_kg = geo
            .boundary
            .as_ref()
            .map_or(f64::NAN, |b| b.points.iter().map(|p| p.kg).fold(f64::INFINITY, f64::min));
        row.max_tension = traj.diagnostics.get(k).map_or(f64::NAN, |d| d.max_tension);
        row.e = entropy_e(&geo, &st.phi, st.alpha).unwrap_or(f64::NAN);
        row.f = f_functional(&geo, &st.phi, &st.f, st.alpha);
        let mut addends = None;
        match system {
            System::Ps => {
                if row.e.is_finite() {
                    let fs = solve_potential_f_on(&geo, &st.phi, st.alpha, SOLVE_TOL)?;
                    let b = entropy_e_rate(&geo, &st.phi, &fs, st.alpha)?;
                    row.de_rhs = b.total;
                    let get = |name| b.get(name).unwrap_or(f64::NAN);
                    addends = Some(EntropyAddends {
                        map: get("map"),
                        gradient: get("gradient"),
                        hessian: get("hessian"),
                        boundary: get("boundary"),
                    });
                }
            }
            System::Q3 => {
                row.df_rhs = f_rate(&geo, &st.phi, &st.f, st.alpha, 0.0).total;
            }
            System::P2 => {
                row.w_rh = w_functional(&geo, &st.phi, &st.f, st.tau, st.alpha, WVariant::Rh)?;
                row.w_perelman = w_functional(&geo, &st.phi, &st.f, st.tau, st.alpha, WVariant::Perelman)?;
                row.dw_rhs = w_rate(&geo, &st.phi, &st.f, st.tau, st.alpha, 0.0)?.total;
            }
        }
        if system != System::Ps && k > 0 && k + 1 < n {
            row.conjheat = conjheat(chart, traj, k, system)?;
        }
        rows.push(row);
        entropy.push(addends);
    }
    let col = |get: fn(&TraceRow) -> f64| -> Vec<f64> { rows.iter().map(get).collect() };
    let (de, df, dw) = (
        centered_rates(&times, &col(|r| r.e)),
        centered_rates(&times, &col(|r| r.f)),
        centered_rates(&times, &col(|r| r.w_rh)),
    );
    for (k, row) in rows.iter_mut().enumerate() {
        row.de_fd = de[k];
        row.df_fd = df[k];
        row.dw_fd = dw[k];
    }
    Ok((rows, entropy))
}

/// `max|□*u| / max u` at an interior snapshot, with `∂f/∂t` from centered
/// differences and `∂g/∂t` from the flow's right-hand side.
fn conjheat(chart: &Chart, traj: &Trajectory, k: usize, system: System) -> Result<f64> {
    let st = &traj.states[k];
    let (prev, next) = (&traj.states[k - 1], &traj.states[k + 1]);
    let span = next.t - prev.t;
    let df: Vec<f64> = next.f.iter().zip(prev.f.iter()).map(|(a, b)| (a - b) / span).collect();
    let dg = metric_velocity(chart, &st.g, &st.phi, st.alpha);
    let geo = flow_geometry(chart, &st.g);
    // the F weight e^{−f} carries no τ; use τ = 1 held fixed
    let (tau, dtau) = if system == System::P2 { (st.tau, -1.0) } else { (1.0, 0.0) };
    let res = conjugate_heat_residual(&geo, &st.f, tau, &dg, &df, dtau)?;
    let u_max = heat_weight(&st.f, tau).into_iter().fold(0.0, f64::max);
    Ok(res.max_abs() / u_max)
}

fn max_over(rows: impl Iterator<Item = f64>) -> f64 {
    rows.filter(|v| !v.is_nan()).fold(0.0, f64::max)
}

/// Closed-form `F(t) = −2πα √a(T) / a(t)` of the circle-map cylinder with
/// `f(T) = 0`, `a(t) = 1 + 2αt`, and its time derivative.
pub fn cylinder_f_closed_form(alpha: f64, t_end: f64, t: f64) -> (f64, f64) {
    let a = |s: f64| 1.0 + 2.0 * alpha * s;
    let c = 2.0 * std::f64::consts::PI * alpha * a(t_end).sqrt();
    (-c / a(t), 2.0 * alpha * c / (a(t) * a(t)))
}

fn run_checks(
    cfg: &RunConfig,
    rows: &[TraceRow],
    entropy: &[Option<EntropyAddends>],
    coarse: Option<&[TraceRow]>,
) -> Vec<Check> {
    let tol = &cfg.tolerances;
    let mut out = Vec::new();
    let t0 = rows.first().map_or(0.0, |r| r.t);
    match cfg.system {
        System::Ps => {
            let tension = max_over(rows.iter().map(|r| r.max_tension));
            out.push(Check::new(
                "map stays harmonic",
                tension <= tol.tension,
                format!("max |tension| = {tension:.3e} (tol {:.1e})", tol.tension),
            ));
            if rows.iter().all(|r| r.e.is_finite()) {
                out.extend(entropy_checks(tol, rows, entropy, coarse, t0));
            } else {
                out.push(Check::note("entropy", "S is not positive; E undefined"));
            }
        }
        System::Q3 => {
            let gap = max_over(rows.iter().map(|r| rel_gap(r.df_fd, r.df_rhs)));
            out.push(Check::new(
                "F rate, time difference vs right-hand side",
                gap <= tol.f_rate,
                format!("max relative gap {gap:.3e} (tol {:.1e})", tol.f_rate),
            ));
            let worst = rows
                .iter()
                .flat_map(|r| [r.df_fd, r.df_rhs])
                .filter(|v| !v.is_nan())
                .fold(f64::INFINITY, f64::min);
            out.push(Check::new(
                "F non-decreasing",
                worst >= -tol.monotone,
                format!("min dF/dt = {worst:.3e}"),
            ));
            if cfg.initial == Initial::Preset(Preset::FlatCylinder) {
                let (mut fv, mut dv) = (0.0_f64, 0.0_f64);
                for r in rows {
                    let (f, df) = cylinder_f_closed_form(cfg.alpha, cfg.t_end, r.t);
                    fv = fv.max(rel_gap(r.f, f));
                    dv = dv.max(rel_gap(r.df_rhs, df));
                }
                out.push(Check::new(
                    "F closed form on the cylinder",
                    fv <= tol.closed_form && dv <= tol.closed_form,
                    format!("max relative error F {fv:.3e}, dF/dt {dv:.3e} (tol {:.1e})", tol.closed_form),
                ));
            }
        }
        System::P2 => {
            let t_max = t0 + tol.w_window * cfg.t_end;
            let gap = max_over(rows.iter().filter(|r| r.t <= t_max).map(|r| rel_gap(r.dw_fd, r.dw_rhs)));
            out.push(Check::new(
                "W rate, time difference vs right-hand side",
                gap <= tol.w_rate,
                format!("max relative gap {gap:.3e} for t <= {} (tol {:.1e})", g17(t_max), tol.w_rate),
            ));
            // near τ = 0 the potential grows like −ln τ and the time difference of f loses accuracy
            let heat = max_over(rows.iter().filter(|r| r.t <= t_max).map(|r| r.conjheat));
            out.push(Check::new(
                "conjugate heat residual",
                heat <= tol.conjheat,
                format!("max |residual| / max u = {heat:.3e} for t <= {} (tol {:.1e})", g17(t_max), tol.conjheat),
            ));
            let drop = rows
                .windows(2)
                .map(|w| w[1].w_rh - w[0].w_rh)
                .fold(f64::INFINITY, f64::min);
            out.push(Check::new(
                "W non-decreasing",
                drop >= -tol.monotone,
                format!("min row increment {drop:.3e}"),
            ));
        }
    }
    out
}

fn entropy_checks(
    tol: &Tolerances,
    rows: &[TraceRow],
    entropy: &[Option<EntropyAddends>],
    coarse: Option<&[TraceRow]>,
    t0: f64,
) -> Vec<Check> {
    let mut out = Vec::new();
    let e_max = max_over(rows.iter().map(|r| r.e.abs()));
    if e_max <= tol.entropy_zero {
        let rate = max_over(rows.iter().map(|r| r.de_rhs.abs()));
        out.push(Check::new(
            "entropy vanishes for constant S",
            rate <= tol.entropy_zero,
            format!("max |E| = {e_max:.3e}, max |rate| = {rate:.3e} (tol {:.1e})", tol.entropy_zero),
        ));
        return out;
    }
    let from = t0 + tol.entropy_window;
    let in_window = |r: &&TraceRow| r.t >= from;
    let raw = max_over(rows.iter().filter(in_window).map(|r| rel_gap(r.de_fd, r.de_rhs)));
    let (gap, how) = match coarse.filter(|c| c.len() == rows.len()) {
        Some(c) => {
            let rich = |fine: f64, coarse: f64| fine + (fine - coarse) / 3.0;
            let gap = max_over(
                rows.iter()
                    .zip(c)
                    .filter(|(r, _)| in_window(r))
                    .map(|(r, q)| rel_gap(rich(r.de_fd, q.de_fd), rich(r.de_rhs, q.de_rhs))),
            );
            (gap, format!("h-extrapolated; single grid {raw:.3e}"))
        }
        None => (raw, "single grid".to_string()),
    };
    out.push(Check::new(
        "entropy rate, time difference vs right-hand side",
        gap <= tol.entropy_rate,
        format!(
            "max relative gap {gap:.3e} for t >= {} ({how}; tol {:.1e})",
            g17(from),
            tol.entropy_rate
        ),
    ));
    let vol = entropy
        .iter()
        .flatten()
        .flat_map(|a| [a.map, a.gradient, a.hessian])
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::new(
        "entropy rate volume addends non-positive",
        vol <= 0.0,
        format!("largest addend {vol:.3e}"),
    ));
    let positive = rows.iter().all(|r| r.e > 0.0);
    out.push(Check::new("entropy positive", positive, format!("min E = {:.3e}", rows.iter().map(|r| r.e).fold(f64::INFINITY, f64::min))));
    let rates: Vec<f64> = rows.iter().map(|r| r.de_fd).filter(|v| !v.is_nan()).collect();
    let up = rates.iter().filter(|&&v| v > 0.0).count();
    let bmax = max_over(entropy.iter().flatten().map(|a| a.boundary.abs()));
    out.push(Check::note(
        "entropy rate sign",
        format!(
            "dE/dt > 0 on {up} of {} rows, so E is {}; max |boundary addend| = {bmax:.3e}",
            rates.len(),
            if up == 0 { "non-increasing" } else { "not monotone decreasing" }
        ),
    ));
    out
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = TRACE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.values().iter().map(|&v| g17(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn identity_report(cfg: &RunConfig, checks: &[Check]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# scenario {} system {} alpha {} T {} dt {} grid {}x{}",
        cfg.scenario_name(),
        cfg.system,
        g17(cfg.alpha),
        g17(cfg.t_end),
        g17(cfg.dt),
        cfg.grid.0,
        cfg.grid.1
    );
    for c in checks {
        let _ = writeln!(s, "{}", c.line());
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Writes snapshots, `trace.csv` and `identities.txt` under `cfg.out`.
pub fn write_artifacts(cfg: &RunConfig, outcome: &RunOutcome) -> Result<PathBuf> {
    let dir = &cfg.out;
    let snaps = dir.join(SNAPSHOT_DIR);
    fs::create_dir_all(&snaps).map_err(|e| Error::Io(format!("{}: {e}", snaps.display())))?;
    let traj = &outcome.trajectory;
    let last = traj.len() - 1;
    for (k, st) in traj.states.iter().enumerate() {
        if k % cfg.snapshot_every == 0 || k == last {
            write(&snaps.join(format!("snap_{k:06}.txt")), &write_snapshot(&traj.chart, st))?;
        }
    }
    write(&dir.join(TRACE_FILE), &trace_csv(&outcome.rows))?;
    write(&dir.join(IDENTITY_FILE), &identity_report(cfg, &outcome.checks))?;
    Ok(dir.clone())
}

/// Runs the scenario and writes its artifacts; returns the checks.
pub fn run_scenario(cfg: &RunConfig) -> Result<Vec<Check>> {
    let outcome = simulate(cfg)?;
    write_artifacts(cfg, &outcome)?;
    Ok(outcome.checks)
}

/// Re-reads a run or verify directory and summarizes it.
pub fn report(dir: &Path) -> Result<(String, Vec<Check>)> {
    let mut text = String::new();
    let mut checks = Vec::new();
    let mut found = false;
    let trace = dir.join(TRACE_FILE);
    if trace.exists() {
        found = true;
        let csv = fs::read_to_string(&trace)?;
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
        if header != TRACE_COLUMNS {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: format!("{} has an unexpected header", trace.display()),
            });
        }
        let rows = lines
            .enumerate()
            .map(|(k, l)| {
                l.split(',')
                    .enumerate()
                    .map(|(c, tok)| {
                        tok.parse::<f64>().map_err(|_| Error::Parse {
                            line: k + 2,
                            column: c + 1,
                            message: format!("bad number '{tok}'"),
                        })
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let _ = writeln!(text, "{}: {} rows", trace.display(), rows.len());
        for (c, name) in TRACE_COLUMNS.iter().enumerate() {
            let vals: Vec<f64> = rows.iter().map(|r| r[c]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                continue;
            }
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(text, "  {name:<22} min {lo:>12.5e}  max {hi:>12.5e}");
        }
    }
    for name in [IDENTITY_FILE, crate::verify::VERIFY_TEXT] {
        let path = dir.join(name);
        if path.exists() {
            found = true;
            let body = fs::read_to_string(&path)?;
            for l in body.lines() {
                let status = if let Some(rest) = l.strip_prefix("PASS ") {
                    Some((true, rest))
                } else {
                    l.strip_prefix("FAIL ").map(|rest| (false, rest))
                };
                if let Some((passed, rest)) = status {
                    let (name, detail) = rest.split_once(": ").unwrap_or((rest, ""));
                    checks.push(Check::new(name, passed, detail));
                }
            }
            let _ = writeln!(text, "{}:", path.display());
            text.push_str(&body);
        }
    }
    if !found {
        return Err(Error::Validation(format!("{} holds no run or verify output", dir.display())));
    }
    Ok((text, checks))
}

/// Snapshot files of a run directory, in step order.
pub fn snapshot_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir.join(SNAPSHOT_DIR))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    v.sort();
    Ok(v)
}
