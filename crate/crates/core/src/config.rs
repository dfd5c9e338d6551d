//! Run configuration: flat `key = value` text with `[section]` headers and
//! `#` comments.
//!
//! ```text
//! [run]
//! scenario = perturbed-cap
//! system = ps
//! alpha = 1
//! T = 0.02
//!
//! [tolerances]
//! entropy_rate = 1e-3
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::chart::{Chart, FlowState};
use crate::error::{Error, Result};
use crate::flows::{stable_dt, PhiMode};
use crate::presets::Preset;
use crate::snapshot::load_snapshot;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "RHFLOW_OUT";
pub const DEFAULT_OUT: &str = "rhflow-out";
/// Snapshot files written per run when `snapshot_every` is not given.
pub const DEFAULT_SNAPSHOT_FILES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// Metric flow with the map held harmonic.
    Ps,
    /// Metric and map flow with the backward potential of `F`.
    Q3,
    /// As `Q3` with reverse time `τ = T − t` and the potential of `W`.
    P2,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Ps => "ps",
            System::Q3 => "q3",
            System::P2 => "p2",
        }
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ps" => Ok(System::Ps),
            "q3" => Ok(System::Q3),
            "p2" => Ok(System::P2),
            _ => Err(Error::Validation(format!("unknown system '{s}' (ps, q3 or p2)"))),
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn parse_mode(s: &str) -> Result<PhiMode> {
    match s {
        "hold" | "hold-phi" => Ok(PhiMode::HoldPhi),
        "reharmonize" => Ok(PhiMode::Reharmonize),
        _ => Err(Error::Validation(format!("unknown mode '{s}' (hold or reharmonize)"))),
    }
}

pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Validation(format!("grid must look like 65x100, got '{s}'"));
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Pass thresholds of the run and verify checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// `‖τ(φ)‖_∞` along a held-harmonic run.
    pub tension: f64,
    /// Relative gap between `dE_fd` and `dE_rhs`.
    pub entropy_rate: f64,
    /// Start-up interval excluded from the entropy-rate comparison.
    pub entropy_window: f64,
    /// `|E|` on a state with constant `S`.
    pub entropy_zero: f64,
    pub f_rate: f64,
    pub w_rate: f64,
    /// Fraction of `T` over which `dW` is compared.
    pub w_window: f64,
    /// Allowed decrease per row of a monotone quantity.
    pub monotone: f64,
    pub conjheat: f64,
    pub closed_form: f64,
    pub s_evolution: f64,
    pub variation: f64,
    pub order: f64,
    pub sigma: f64,
    pub reilly: f64,
    pub invariance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tension: 1e-10,
            entropy_rate: 1e-3,
            entropy_window: 5e-3,
            entropy_zero: 1e-10,
            f_rate: 1e-4,
            w_rate: 1e-3,
            w_window: 0.8,
            monotone: 1e-10,
            conjheat: 1e-3,
            closed_form: 1e-4,
            s_evolution: 1e-4,
            variation: 1e-6,
            order: 1.8,
            sigma: 1e-8,
            reilly: 1e-3,
            invariance: 1e-12,
        }
    }
}

impl Tolerances {
    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "tension" => &mut self.tension,
            "entropy_rate" => &mut self.entropy_rate,
            "entropy_window" => &mut self.entropy_window,
            "entropy_zero" => &mut self.entropy_zero,
            "f_rate" => &mut self.f_rate,
            "w_rate" => &mut self.w_rate,
            "w_window" => &mut self.w_window,
            "monotone" => &mut self.monotone,
            "conjheat" => &mut self.conjheat,
            "closed_form" => &mut self.closed_form,
            "s_evolution" => &mut self.s_evolution,
            "variation" => &mut self.variation,
            "order" => &mut self.order,
            "sigma" => &mut self.sigma,
            "reilly" => &mut self.reilly,
            "invariance" => &mut self.invariance,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    Preset(Preset),
    /// User-defined fields read from a snapshot file.
    Snapshot(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub initial: Initial,
    pub system: System,
    pub alpha: f64,
    pub t_end: f64,
    /// Snapshot interval; the integrator substeps below it as needed.
    pub dt: f64,
    pub grid: (usize, usize),
    pub mode: PhiMode,
    pub out: PathBuf,
    pub snapshot_every: usize,
    pub tolerances: Tolerances,
}

const RUN_KEYS: [&str; 10] = [
    "scenario",
    "initial",
    "system",
    "alpha",
    "T",
    "dt",
    "grid",
    "mode",
    "out",
    "snapshot_every",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// Raw `section.key → value` table, before validation.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    run: BTreeMap<String, Entry>,
    tolerances: BTreeMap<String, Entry>,
    base: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut section = "run".to_string();
        for (k, line) in text.lines().enumerate() {
            let n = k + 1;
            let body = line.split('#').next().unwrap_or("");
            let trimmed = body.trim();
            if trimmed.is_empty() {
                continue;
            }
            let col = body.len() - body.trim_start().len() + 1;
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: n,
                    column: col,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if section != "run" && section != "tolerances" {
                    return Err(Error::Parse {
                        line: n,
                        column: col + 1,
                        message: format!("unknown section '{section}'"),
                    });
                }
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                line: n,
                column: col,
                message: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let known = if section == "run" {
                RUN_KEYS.contains(&key)
            } else {
                Tolerances::default().slot(key).is_some()
            };
            if !known {
                return Err(Error::Parse {
                    line: n,
                    column: col,
                    message: format!("unknown key '{key}' in [{section}]"),
                });
            }
            let table = if section == "run" { &mut raw.run } else { &mut raw.tolerances };
            if table.contains_key(key) {
                return Err(Error::Parse {
                    line: n,
                    column: col,
                    message: format!("duplicate key '{key}'"),
                });
            }
            table.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: n,
                },
            );
        }
        Ok(raw)
    }

    /// Replaces a `[run]` key, as the command-line flags do.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !RUN_KEYS.contains(&key) {
            return Err(Error::Validation(format!("unknown key '{key}'")));
        }
        self.run.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: 0,
            },
        );
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.run.get(key).map(|e| e.value.as_str())
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        self.run
            .get(key)
            .map(|e| {
                e.value.parse::<f64>().map_err(|_| Error::Parse {
                    line: e.line,
                    column: 1,
                    message: format!("'{key}' must be a number, got '{}'", e.value),
                })
            })
            .transpose()
    }

    pub fn validate(&self) -> Result<RunConfig> {
        let initial = match (self.get("scenario"), self.get("initial")) {
            (Some(_), Some(_)) => {
                return Err(Error::Validation("give either scenario or initial, not both".into()))
            }
            (Some(name), None) => Initial::Preset(name.parse()?),
            (None, Some(path)) => Initial::Snapshot(self.base.join(path)),
            (None, None) => return Err(Error::Validation("missing scenario".into())),
        };
        let system: System = self
            .get("system")
            .ok_or_else(|| Error::Validation("missing system".into()))?
            .parse()?;
        let t_end = self
            .number("T")?
            .ok_or_else(|| Error::Validation("missing final time T".into()))?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::Validation(format!("T must be positive, got {t_end}")));
        }
        let alpha = self.number("alpha")?;
        if let Some(a) = alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Validation(format!("alpha must be positive, got {a}")));
            }
        }
        let mode = self.get("mode").map_or(Ok(PhiMode::HoldPhi), parse_mode)?;
        let grid = self.get("grid").map(parse_grid).transpose()?;
        let (alpha, grid, chart, state) = match &initial {
            Initial::Preset(p) => {
                let alpha = alpha.ok_or_else(|| Error::Validation("missing alpha".into()))?;
                let grid = grid.unwrap_or_else(|| p.default_grid());
                let chart = p.chart(grid.0, grid.1).map_err(|e| Error::Validation(e.to_string()))?;
                let state = p.state(&chart, alpha)?;
                p.validate(&chart, &state)?;
                (alpha, grid, chart, state)
            }
            Initial::Snapshot(path) => {
                let (chart, state) = load_snapshot(path)?;
                if grid.is_some_and(|g| g != (chart.nx(), chart.ny())) {
                    return Err(Error::Validation("grid does not match the initial snapshot".into()));
                }
                let alpha = alpha.unwrap_or(state.alpha);
                (alpha, (chart.nx(), chart.ny()), chart, state)
            }
        };
        let dt = match self.number("dt")? {
            Some(dt) if !(dt > 0.0 && dt <= t_end) => {
                return Err(Error::Validation(format!("dt must lie in (0, T], got {dt}")))
            }
            Some(dt) => dt,
            None => default_dt(&chart, &state, t_end),
        };
        let steps = (t_end / dt).round().max(1.0) as usize;
        if system == System::P2 && steps <= crate::flows::TAU_FLOOR_STEPS {
            return Err(Error::Validation(format!(
                "p2 needs more than {} steps before tau reaches zero",
                crate::flows::TAU_FLOOR_STEPS
            )));
        }
        let snapshot_every = match self.get("snapshot_every") {
            Some(v) => v
                .parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .ok_or_else(|| Error::Validation(format!("snapshot_every must be a positive integer, got '{v}'")))?,
            None => steps.div_ceil(DEFAULT_SNAPSHOT_FILES).max(1),
        };
        let out = match self.get("out") {
            Some(o) => self.base.join(o),
            None => std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT), PathBuf::from),
        };
        let mut tolerances = Tolerances::default();
        for (key, e) in &self.tolerances {
            let v: f64 = e.value.parse().map_err(|_| Error::Parse {
                line: e.line,
                column: 1,
                message: format!("tolerance '{key}' must be a number"),
            })?;
            if !(v >= 0.0) {
                return Err(Error::Validation(format!("tolerance '{key}' must be non-negative")));
            }
            *tolerances.slot(key).expect("checked at parse") = v;
        }
        Ok(RunConfig {
            initial,
            system,
            alpha,
            t_end,
            dt,
            grid,
            mode,
            out,
            snapshot_every,
            tolerances,
        })
    }
}

/// Largest CFL-stable step that divides `T` evenly.
fn default_dt(chart: &Chart, state: &FlowState, t_end: f64) -> f64 {
    let n = (t_end / stable_dt(chart, &state.g)).ceil().max(1.0);
    t_end / n
}

impl RunConfig {
    /// Chart and initial state; `f = 0` and `τ = T` for presets.
    pub fn initial_state(&self) -> Result<(Chart, FlowState)> {
        let (chart, mut state) = match &self.initial {
            Initial::Preset(p) => {
                let chart = p.chart(self.grid.0, self.grid.1)?;
                let state = p.state(&chart, self.alpha)?;
                (chart, state)
            }
            Initial::Snapshot(path) => load_snapshot(path)?,
        };
        state.alpha = self.alpha;
        state.t = 0.0;
        state.tau = self.t_end;
        Ok((chart, state))
    }

    pub fn scenario_name(&self) -> String {
        match &self.initial {
            Initial::Preset(p) => p.name().to_string(),
            Initial::Snapshot(path) => format!("user:{}", path.display()),
        }
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    RawConfig::parse(text)?.validate()
}

/// Reads `path`, applies `overrides` to `[run]` and validates.
pub fn load_config_with(path: &Path, overrides: &[(&str, String)]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut raw = RawConfig::parse(&text)?;
    raw.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for (k, v) in overrides {
        raw.set(k, v)?;
    }
    raw.validate()
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    load_config_with(path, &[])
}
